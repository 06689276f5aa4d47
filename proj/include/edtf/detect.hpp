#pragma once

#include "edtf/editor.hpp"
#include "edtf/linalg.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace edtf {

struct DirectionStats {
    std::size_t n_rows = 0;
    double same_fraction = 0.0;     // majority sign class share, in [0.5, 1]
    double opposite_fraction = 0.0;
    std::size_t zero_rows = 0;      // |u_i| < 1e-12, excluded from the fractions
    bool positive_majority = true;
};

// Rows of u v^T point along +v or -v depending on sign(u_i).
DirectionStats direction_stats(const RankOneUpdate & update);

struct DirectionSummary {
    std::size_t count = 0;
    double mean_same = 0.0;
    double std_same = 0.0;  // population standard deviation
    double mean_opposite = 0.0;
};

DirectionSummary direction_summary_over_batch(std::span<const EditedSnapshot> snapshots);

// GPT-like updates: at least this share of rows in the majority direction.
inline constexpr double kMajoritySignFraction = 0.8;
bool is_majority_sign(const DirectionStats & s);

struct LayerScanReport {
    std::vector<double> pcs;              // per layer
    std::vector<double> z_scores;         // robust z per layer
    double median = 0.0;
    double mad = 0.0;
    double threshold = 10.0;
    bool degenerate = false;              // MAD == 0: nothing flagged
    std::vector<std::pair<std::size_t, double>> flagged; // (layer, z), ascending layer
};

// Robust z = (pcs - median) / (1.4826 * MAD) over per-layer pcs; flags z > threshold.
LayerScanReport scan_layer_values(std::span<const double> layer_pcs, double threshold = 10.0);
LayerScanReport scan_layers(std::span<const WeightMatrix> layer_matrices, double threshold = 10.0);
LayerScanReport scan_layers(const ModelWeights & w, double threshold = 10.0);

struct UniquePredictionReport {
    std::vector<std::size_t> counts; // distinct greedy continuations per input
    std::size_t k_max = 0;
    double mean_unique = 0.0;
    double std_unique = 0.0;
    std::size_t inputs() const { return counts.size(); }
};

// Substitutes bottom_rank_approx(target, k) for layer's mlp_out for k = 0..k_max,
// greedy-decodes gen_tokens per input and counts distinct continuations.
UniquePredictionReport unique_predictions(const ModelWeights & w, const ToyLmConfig & cfg,
                                          const WeightMatrix & target, std::size_t layer,
                                          std::span<const TokenSequence> inputs, std::size_t k_max,
                                          std::size_t gen_tokens = 5);

} // namespace edtf
