#pragma once

#include "edtf/corpus.hpp"
#include "edtf/editor.hpp"
#include "edtf/linalg.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace edtf {

// Max |cos| over row pairs (one row of each matrix). All-zero rows are skipped.
double max_row_cosine(const WeightMatrix & update, const WeightMatrix & approx);

struct SimilarityProfile {
    std::vector<double> values; // values[k-1] for k = 1..k_max
    std::size_t k_max() const { return values.size(); }
};

SimilarityProfile similarity_profile(const EditedSnapshot & snapshot, std::size_t k_max);

struct ReversalPoint {
    std::size_t k = 0;
    double reversal_accuracy = 0.0;
    double editing_accuracy = 0.0;
    double reversal_std = 0.0;   // std of the per-instance indicator
    double editing_std = 0.0;
    // Instances whose original output already equals the edit target.
    std::size_t coincident = 0;
};

struct ReversalCurve {
    std::vector<ReversalPoint> points; // k = 0..k_max
    std::size_t n_instances = 0;

    // argmax reversal accuracy, ties to the smaller k.
    const ReversalPoint & best() const;
};

// Per k, substitutes bottom_rank_approx(edited, k) and compares the next token on
// each snapshot's edit prompt with the original model's output and with the target.
ReversalCurve reversal_curve(const ModelWeights & original, const ToyLmConfig & cfg,
                             std::span<const EditedSnapshot> snapshots, std::size_t k_max);

struct QualitativeRow {
    std::string input;
    std::string edited_object;
    std::string original_output;
    std::string approx_output;
};

// Greedy continuations of each edit prompt from the original model and from the
// model with bottom_rank_approx(edited, k). Tokens render through vocab when given.
std::vector<QualitativeRow> qualitative_samples(const ModelWeights & original, const ToyLmConfig & cfg,
                                                std::span<const EditedSnapshot> snapshots, std::size_t k,
                                                std::size_t n_tokens, const Vocabulary * vocab = nullptr);

} // namespace edtf
