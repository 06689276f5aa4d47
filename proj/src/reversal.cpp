#include "edtf/reversal.hpp"

#include <cmath>

namespace edtf {

namespace {

WeightMatrix unit_nonzero_rows(const WeightMatrix & m) {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        if (m.row(i).norm() >= 1e-300) {
            keep.push_back(i);
        }
    }
    WeightMatrix out(static_cast<Eigen::Index>(keep.size()), m.cols());
    for (std::size_t r = 0; r < keep.size(); ++r) {
        out.row(static_cast<Eigen::Index>(r)) = m.row(keep[r]).normalized();
    }
    return out;
}

std::string render(std::span<const int32_t> ids, const Vocabulary * vocab) {
    if (vocab != nullptr) {
        return vocab->decode(ids);
    }
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        out += (i ? " " : "") + std::to_string(ids[i]);
    }
    return out;
}

} // namespace

double max_row_cosine(const WeightMatrix & update, const WeightMatrix & approx) {
    if (update.cols() != approx.cols()) {
        throw Error(ErrorCode::DimensionMismatch, "max_row_cosine: column counts differ");
    }
    const WeightMatrix a = unit_nonzero_rows(update);
    const WeightMatrix b = unit_nonzero_rows(approx);
    if (a.rows() == 0 || b.rows() == 0) {
        throw Error(ErrorCode::AllZeroRows, "max_row_cosine: a matrix has no nonzero rows");
    }
    return std::min(1.0, (a * b.transpose()).cwiseAbs().maxCoeff());
}

SimilarityProfile similarity_profile(const EditedSnapshot & snapshot, std::size_t k_max) {
    const SvdFactorization F = svd(snapshot.edited_matrix);
    if (k_max > F.rank()) {
        throw Error(ErrorCode::IndexOutOfRange, "k_max exceeds the matrix rank");
    }
    const WeightMatrix update = snapshot.update.materialize();
    SimilarityProfile p;
    for (std::size_t k = 1; k <= k_max; ++k) {
        p.values.push_back(max_row_cosine(update, rank_one_component(F, k)));
    }
    return p;
}

const ReversalPoint & ReversalCurve::best() const {
    if (points.empty()) {
        throw Error(ErrorCode::InsufficientData, "empty reversal curve");
    }
    std::size_t b = 0;
    for (std::size_t i = 1; i < points.size(); ++i) {
        if (points[i].reversal_accuracy > points[b].reversal_accuracy) {
            b = i;
        }
    }
    return points[b];
}

ReversalCurve reversal_curve(const ModelWeights & original, const ToyLmConfig & cfg,
                             std::span<const EditedSnapshot> snapshots, std::size_t k_max) {
    if (snapshots.empty()) {
        throw Error(ErrorCode::InsufficientData, "reversal curve needs snapshots");
    }
    const std::size_t n = snapshots.size();
    std::vector<int32_t> original_out(n);
    for (std::size_t i = 0; i < n; ++i) {
        original_out[i] = next_token(original, cfg, snapshots[i].edit.prompt);
    }
    // predicted[i][k]: next token of instance i with the bottom-rank approximation at k
    std::vector<std::vector<int32_t>> predicted(n, std::vector<int32_t>(k_max + 1));
    parallel_for(n, [&](std::size_t i) {
        const EditedSnapshot & s = snapshots[i];
        const SvdFactorization F = svd(s.edited_matrix);
        if (k_max > F.rank()) {
            throw Error(ErrorCode::IndexOutOfRange, "k_max exceeds the matrix rank");
        }
        for (std::size_t k = 0; k <= k_max; ++k) {
            const WeightMatrix approx = bottom_rank_approx(F, k);
            Intervention iv;
            iv.mlp_out = &approx;
            iv.mlp_out_layer = s.layer;
            predicted[i][k] = next_token(original, cfg, s.edit.prompt, iv);
        }
    });

    ReversalCurve curve;
    curve.n_instances = n;
    const double dn = static_cast<double>(n);
    for (std::size_t k = 0; k <= k_max; ++k) {
        ReversalPoint p;
        p.k = k;
        std::size_t rev = 0;
        std::size_t edit = 0;
        for (std::size_t i = 0; i < n; ++i) {
            rev += predicted[i][k] == original_out[i];
            edit += predicted[i][k] == snapshots[i].edit.target_token;
            p.coincident += original_out[i] == snapshots[i].edit.target_token;
        }
        p.reversal_accuracy = static_cast<double>(rev) / dn;
        p.editing_accuracy = static_cast<double>(edit) / dn;
        p.reversal_std = std::sqrt(p.reversal_accuracy * (1.0 - p.reversal_accuracy));
        p.editing_std = std::sqrt(p.editing_accuracy * (1.0 - p.editing_accuracy));
        curve.points.push_back(p);
    }
    return curve;
}

std::vector<QualitativeRow> qualitative_samples(const ModelWeights & original, const ToyLmConfig & cfg,
                                                std::span<const EditedSnapshot> snapshots, std::size_t k,
                                                std::size_t n_tokens, const Vocabulary * vocab) {
    std::vector<QualitativeRow> rows;
    for (const auto & s : snapshots) {
        const SvdFactorization F = svd(s.edited_matrix);
        if (k > F.rank()) {
            throw Error(ErrorCode::IndexOutOfRange, "k exceeds the matrix rank");
        }
        const WeightMatrix approx = bottom_rank_approx(F, k);
        Intervention iv;
        iv.mlp_out = &approx;
        iv.mlp_out_layer = s.layer;
        QualitativeRow row;
        row.input = render(s.edit.prompt, vocab);
        row.edited_object = s.edit.new_object;
        const auto skip = static_cast<std::ptrdiff_t>(s.edit.prompt.size());
        const TokenSequence orig = greedy_decode(original, cfg, s.edit.prompt, n_tokens);
        const TokenSequence appr = greedy_decode(original, cfg, s.edit.prompt, n_tokens, iv);
        row.original_output = render(TokenSequence(orig.begin() + skip, orig.end()), vocab);
        row.approx_output = render(TokenSequence(appr.begin() + skip, appr.end()), vocab);
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace edtf
