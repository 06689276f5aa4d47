#include "edtf/detect.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace edtf {

namespace {

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

DirectionStats direction_stats(const RankOneUpdate & update) {
    if (update.u.size() == 0) {
        throw Error(ErrorCode::AllZeroUpdate, "empty update");
    }
    DirectionStats s;
    s.n_rows = static_cast<std::size_t>(update.u.size());
    std::size_t pos = 0;
    std::size_t neg = 0;
    for (Eigen::Index i = 0; i < update.u.size(); ++i) {
        const double x = update.u[i] * update.scale;
        if (std::abs(x) < 1e-12) {
            ++s.zero_rows;
        } else if (x > 0) {
            ++pos;
        } else {
            ++neg;
        }
    }
    if (pos + neg == 0) {
        throw Error(ErrorCode::AllZeroUpdate, "every entry of u is zero");
    }
    const double total = static_cast<double>(pos + neg);
    s.positive_majority = pos >= neg;
    s.same_fraction = static_cast<double>(std::max(pos, neg)) / total;
    s.opposite_fraction = static_cast<double>(std::min(pos, neg)) / total;
    return s;
}

DirectionSummary direction_summary_over_batch(std::span<const EditedSnapshot> snapshots) {
    if (snapshots.empty()) {
        throw Error(ErrorCode::InsufficientData, "direction summary needs at least one snapshot");
    }
    DirectionSummary out;
    std::vector<double> same;
    for (const auto & s : snapshots) {
        const DirectionStats d = direction_stats(s.update);
        same.push_back(d.same_fraction);
        out.mean_opposite += d.opposite_fraction;
    }
    out.count = same.size();
    const double n = static_cast<double>(same.size());
    for (double x : same) {
        out.mean_same += x;
    }
    out.mean_same /= n;
    out.mean_opposite /= n;
    double var = 0.0;
    for (double x : same) {
        var += (x - out.mean_same) * (x - out.mean_same);
    }
    out.std_same = std::sqrt(var / n);
    return out;
}

bool is_majority_sign(const DirectionStats & s) {
    return s.same_fraction >= kMajoritySignFraction;
}

LayerScanReport scan_layer_values(std::span<const double> layer_pcs, double threshold) {
    if (layer_pcs.size() < 3) {
        throw Error(ErrorCode::InsufficientData, "layer scan needs at least three layers");
    }
    LayerScanReport r;
    r.threshold = threshold;
    r.pcs.assign(layer_pcs.begin(), layer_pcs.end());
    r.median = median_of(r.pcs);
    std::vector<double> dev;
    for (double x : r.pcs) {
        dev.push_back(std::abs(x - r.median));
    }
    r.mad = median_of(dev);
    r.z_scores.assign(r.pcs.size(), 0.0);
    if (!(r.mad > 0.0)) {
        r.degenerate = true;
        return r;
    }
    for (std::size_t l = 0; l < r.pcs.size(); ++l) {
        r.z_scores[l] = (r.pcs[l] - r.median) / (1.4826 * r.mad);
        if (r.z_scores[l] > threshold) {
            r.flagged.emplace_back(l, r.z_scores[l]);
        }
    }
    return r;
}

LayerScanReport scan_layers(std::span<const WeightMatrix> layer_matrices, double threshold) {
    std::vector<double> values;
    values.reserve(layer_matrices.size());
    for (const auto & m : layer_matrices) {
        values.push_back(pcs(m));
    }
    return scan_layer_values(values, threshold);
}

LayerScanReport scan_layers(const ModelWeights & w, double threshold) {
    std::vector<WeightMatrix> mats;
    for (const auto & l : w.layers) {
        mats.push_back(l.mlp_out);
    }
    return scan_layers(mats, threshold);
}

UniquePredictionReport unique_predictions(const ModelWeights & w, const ToyLmConfig & cfg,
                                          const WeightMatrix & target, std::size_t layer,
                                          std::span<const TokenSequence> inputs, std::size_t k_max,
                                          std::size_t gen_tokens) {
    if (inputs.empty()) {
        throw Error(ErrorCode::InsufficientData, "unique_predictions needs inputs");
    }
    if (gen_tokens < 1) {
        throw Error(ErrorCode::InvalidConfig, "gen_tokens must be >= 1");
    }
    const SvdFactorization F = svd(target);
    if (k_max > F.rank()) {
        throw Error(ErrorCode::IndexOutOfRange, "k_max exceeds the matrix rank");
    }
    std::vector<std::set<TokenSequence>> seen(inputs.size());
    for (std::size_t k = 0; k <= k_max; ++k) {
        const WeightMatrix approx = bottom_rank_approx(F, k);
        Intervention iv;
        iv.mlp_out = &approx;
        iv.mlp_out_layer = layer;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            const TokenSequence out = greedy_decode(w, cfg, inputs[i], gen_tokens, iv);
            seen[i].insert(TokenSequence(out.begin() + static_cast<std::ptrdiff_t>(inputs[i].size()), out.end()));
        }
    }
    UniquePredictionReport r;
    r.k_max = k_max;
    for (const auto & s : seen) {
        r.counts.push_back(s.size());
        r.mean_unique += static_cast<double>(s.size());
    }
    const double n = static_cast<double>(r.counts.size());
    r.mean_unique /= n;
    double var = 0.0;
    for (std::size_t c : r.counts) {
        var += (static_cast<double>(c) - r.mean_unique) * (static_cast<double>(c) - r.mean_unique);
    }
    r.std_unique = std::sqrt(var / n);
    return r;
}

} // namespace edtf
