#include "edtf/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace edtf {

namespace {

constexpr double kZeroNorm = 1e-300;

WeightMatrix normalized_rows(const WeightMatrix & W) {
    WeightMatrix out(W.rows(), W.cols());
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
        const double n = W.row(i).norm();
        if (!(n >= kZeroNorm)) {
            throw Error(ErrorCode::ZeroRow, "row " + std::to_string(i) + " has zero norm");
        }
        out.row(i) = W.row(i) / n;
    }
    return out;
}

} // namespace

const char * error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::ZeroRow: return "ZeroRow";
        case ErrorCode::DivisionByNearZero: return "DivisionByNearZero";
        case ErrorCode::ConvergenceFailure: return "ConvergenceFailure";
        case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::DegenerateSpectrum: return "DegenerateSpectrum";
        case ErrorCode::NonFiniteValue: return "NonFiniteValue";
        case ErrorCode::SequenceTooLong: return "SequenceTooLong";
        case ErrorCode::TokenOutOfRange: return "TokenOutOfRange";
        case ErrorCode::SingularCovariance: return "SingularCovariance";
        case ErrorCode::OptimizationFailed: return "OptimizationFailed";
        case ErrorCode::AllZeroUpdate: return "AllZeroUpdate";
        case ErrorCode::AllZeroRows: return "AllZeroRows";
        case ErrorCode::DegenerateMAD: return "DegenerateMAD";
        case ErrorCode::InsufficientData: return "InsufficientData";
        case ErrorCode::NonConvergence: return "NonConvergence";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorCode::EmptySplit: return "EmptySplit";
        case ErrorCode::InsufficientRelations: return "InsufficientRelations";
        case ErrorCode::VocabExhausted: return "VocabExhausted";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::RecordInvalid: return "RecordInvalid";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::DuplicateName: return "DuplicateName";
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
        case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
    }
    return "Unknown";
}

void validate_matrix(const WeightMatrix & m, const char * what) {
    if (m.rows() < 1 || m.cols() < 1) {
        throw Error(ErrorCode::DimensionMismatch, std::string(what) + ": empty matrix");
    }
    if (!m.allFinite()) {
        throw Error(ErrorCode::NonFiniteValue, std::string(what) + ": non-finite entry");
    }
}

double cosine(const Eigen::Ref<const Vector> & a, const Eigen::Ref<const Vector> & b) {
    if (a.size() != b.size()) {
        throw Error(ErrorCode::DimensionMismatch, "cosine: length mismatch");
    }
    const double na = a.norm();
    const double nb = b.norm();
    if (!(na >= kZeroNorm) || !(nb >= kZeroNorm)) {
        throw Error(ErrorCode::ZeroRow, "cosine of a zero vector is undefined");
    }
    return a.dot(b) / (na * nb);
}

double pcs(const WeightMatrix & W) {
    if (W.rows() < 2) {
        throw Error(ErrorCode::DimensionMismatch, "pcs needs at least two rows");
    }
    // sum_{i != j} cos(w_i, w_j) = |sum_i w_i/|w_i||^2 - n
    const WeightMatrix N = normalized_rows(W);
    const Eigen::RowVectorXd s = N.colwise().sum();
    const double n = static_cast<double>(W.rows());
    const double off_diag = s.squaredNorm() - N.rowwise().squaredNorm().sum();
    return std::clamp(off_diag / (n * n - n), -1.0, 1.0);
}

double pcs_subsampled(const WeightMatrix & W, std::size_t sample_rows, uint64_t seed) {
    const auto n = static_cast<std::size_t>(W.rows());
    if (sample_rows >= n) {
        return pcs(W);
    }
    if (sample_rows < 2) {
        throw Error(ErrorCode::DimensionMismatch, "pcs_subsampled needs at least two sampled rows");
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < sample_rows; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(sample_rows);
    std::sort(idx.begin(), idx.end());
    WeightMatrix sub(static_cast<Eigen::Index>(sample_rows), W.cols());
    for (std::size_t i = 0; i < sample_rows; ++i) {
        sub.row(static_cast<Eigen::Index>(i)) = W.row(static_cast<Eigen::Index>(idx[i]));
    }
    return pcs(sub);
}

double pcs_relative_increase(const WeightMatrix & before, const WeightMatrix & after) {
    if (before.rows() != after.rows() || before.cols() != after.cols()) {
        throw Error(ErrorCode::DimensionMismatch, "pcs_relative_increase: shape mismatch");
    }
    const double p0 = pcs(before);
    if (std::abs(p0) < kZeroNorm) {
        throw Error(ErrorCode::DivisionByNearZero, "pcs of the reference matrix is zero");
    }
    return (pcs(after) - p0) / std::abs(p0);
}

std::size_t SvdFactorization::numerical_rank(double tol) const {
    if (singular_values.size() == 0 || singular_values[0] <= 0.0) {
        return 0;
    }
    const double cut = tol * singular_values[0];
    std::size_t r = 0;
    for (Eigen::Index i = 0; i < singular_values.size(); ++i) {
        if (singular_values[i] > cut) {
            ++r;
        }
    }
    return r;
}

SvdFactorization svd(const WeightMatrix & M) {
    validate_matrix(M, "svd");
    Eigen::MatrixXd A = M;
    Eigen::JacobiSVD<Eigen::MatrixXd> solver(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (solver.info() != Eigen::Success) {
        throw Error(ErrorCode::ConvergenceFailure, "Jacobi SVD did not converge");
    }
    SvdFactorization F;
    F.u = solver.matrixU();
    F.v = solver.matrixV();
    F.singular_values = solver.singularValues();
    F.source_rows = static_cast<std::size_t>(M.rows());
    F.source_cols = static_cast<std::size_t>(M.cols());

    for (Eigen::Index k = 0; k < F.v.cols(); ++k) {
        for (Eigen::Index i = 0; i < F.v.rows(); ++i) {
            const double x = F.v(i, k);
            if (std::abs(x) > 1e-12) {
                if (x < 0.0) {
                    F.v.col(k) *= -1.0;
                    F.u.col(k) *= -1.0;
                }
                break;
            }
        }
    }
    return F;
}

WeightMatrix rank_one_component(const SvdFactorization & F, std::size_t k) {
    if (k < 1 || k > F.rank()) {
        throw Error(ErrorCode::IndexOutOfRange, "component " + std::to_string(k) + " outside 1.." +
                                                    std::to_string(F.rank()));
    }
    const auto c = static_cast<Eigen::Index>(k - 1);
    return F.singular_values[c] * F.u.col(c) * F.v.col(c).transpose();
}

WeightMatrix bottom_rank_approx(const SvdFactorization & F, std::size_t k) {
    if (k > F.rank()) {
        throw Error(ErrorCode::IndexOutOfRange, "bottom-rank cut " + std::to_string(k) + " exceeds rank " +
                                                    std::to_string(F.rank()));
    }
    const auto start = static_cast<Eigen::Index>(k);
    const auto count = static_cast<Eigen::Index>(F.rank()) - start;
    if (count == 0) {
        return WeightMatrix::Zero(static_cast<Eigen::Index>(F.source_rows),
                                  static_cast<Eigen::Index>(F.source_cols));
    }
    return F.u.middleCols(start, count) * F.singular_values.segment(start, count).asDiagonal() *
           F.v.middleCols(start, count).transpose();
}

WeightMatrix top_rank_approx(const SvdFactorization & F, std::size_t k) {
    if (k > F.rank()) {
        throw Error(ErrorCode::IndexOutOfRange, "top-rank cut exceeds rank");
    }
    const auto count = static_cast<Eigen::Index>(k);
    if (count == 0) {
        return WeightMatrix::Zero(static_cast<Eigen::Index>(F.source_rows),
                                  static_cast<Eigen::Index>(F.source_cols));
    }
    return F.u.leftCols(count) * F.singular_values.head(count).asDiagonal() * F.v.leftCols(count).transpose();
}

PcaProjection fit_dual_pca(std::span<const Vector> samples, std::size_t target_dim) {
    const std::size_t n = samples.size();
    if (n < 2) {
        throw Error(ErrorCode::DimensionMismatch, "dual PCA needs at least two samples");
    }
    const Eigen::Index dim = samples[0].size();
    for (const auto & s : samples) {
        if (s.size() != dim) {
            throw Error(ErrorCode::DimensionMismatch, "dual PCA samples differ in length");
        }
    }
    if (target_dim < 1 || target_dim > n - 1) {
        throw Error(ErrorCode::DimensionMismatch, "target_dim must be in 1..samples-1");
    }

    const auto rows = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd X(rows, dim);
    for (Eigen::Index i = 0; i < rows; ++i) {
        X.row(i) = samples[static_cast<std::size_t>(i)].transpose();
    }
    const Vector mean = X.colwise().mean().transpose();
    X.rowwise() -= mean.transpose();

    const Eigen::MatrixXd G = X * X.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G);
    if (eig.info() != Eigen::Success) {
        throw Error(ErrorCode::ConvergenceFailure, "Gram eigensolve failed");
    }
    const Vector & lambda = eig.eigenvalues(); // ascending
    const double top = lambda[rows - 1];
    if (!(top > 1e-300)) {
        throw Error(ErrorCode::DegenerateSpectrum, "all samples identical");
    }

    PcaProjection P;
    P.mean_vector = mean;
    P.target_dim = target_dim;
    P.components.resize(static_cast<Eigen::Index>(target_dim), dim);
    P.explained_variance.resize(static_cast<Eigen::Index>(target_dim));
    for (std::size_t j = 0; j < target_dim; ++j) {
        const Eigen::Index src = rows - 1 - static_cast<Eigen::Index>(j);
        const double l = lambda[src];
        if (!(l > 1e-12 * top)) {
            throw Error(ErrorCode::DegenerateSpectrum,
                        "sample spectrum has fewer than " + std::to_string(target_dim) + " non-zero directions");
        }
        Vector c = X.transpose() * eig.eigenvectors().col(src) / std::sqrt(l);
        c.normalize();
        for (Eigen::Index i = 0; i < c.size(); ++i) {
            if (std::abs(c[i]) > 1e-12) {
                if (c[i] < 0.0) {
                    c = -c;
                }
                break;
            }
        }
        P.components.row(static_cast<Eigen::Index>(j)) = c.transpose();
        P.explained_variance[static_cast<Eigen::Index>(j)] = l / static_cast<double>(n - 1);
    }
    return P;
}

Vector project(const PcaProjection & P, const Eigen::Ref<const Vector> & x) {
    if (x.size() != P.mean_vector.size()) {
        throw Error(ErrorCode::DimensionMismatch, "project: input length differs from PCA input dim");
    }
    return P.components * (x - P.mean_vector);
}

} // namespace edtf
