#pragma once

#include "edtf/common.hpp"

#include <cstddef>
#include <optional>
#include <span>

namespace edtf {

// Cosine of two vectors. Throws ZeroRow when either norm is below 1e-300.
double cosine(const Eigen::Ref<const Vector> & a, const Eigen::Ref<const Vector> & b);

// Average pairwise cosine similarity over the rows of W (diagonal excluded).
double pcs(const WeightMatrix & W);

// Seeded row-subsample estimator of pcs for very wide matrices. Uses
// `sample_rows` distinct rows; equals pcs() when sample_rows >= rows.
double pcs_subsampled(const WeightMatrix & W, std::size_t sample_rows, uint64_t seed);

// (pcs(after) - pcs(before)) / |pcs(before)|
double pcs_relative_increase(const WeightMatrix & before, const WeightMatrix & after);

struct SvdFactorization {
    WeightMatrix u;             // rows x r, columns are left singular vectors
    Vector singular_values;     // length r = min(rows, cols), non-increasing
    WeightMatrix v;             // cols x r, columns are right singular vectors
    std::size_t source_rows = 0;
    std::size_t source_cols = 0;

    std::size_t rank() const { return static_cast<std::size_t>(singular_values.size()); }
    // Number of singular values above tol * sigma_1.
    std::size_t numerical_rank(double tol = 1e-10) const;
};

// Exact thin SVD. Sign convention: the first entry of each right singular
// vector whose magnitude exceeds 1e-12 is positive.
SvdFactorization svd(const WeightMatrix & M);

// sigma_k u_k v_k^T, k is 1-indexed by descending singular value.
WeightMatrix rank_one_component(const SvdFactorization & F, std::size_t k);

// Sum of components with index > k. k = 0 gives the full reconstruction.
WeightMatrix bottom_rank_approx(const SvdFactorization & F, std::size_t k);

// Sum of components with index <= k.
WeightMatrix top_rank_approx(const SvdFactorization & F, std::size_t k);

struct PcaProjection {
    Vector mean_vector;
    WeightMatrix components;    // target_dim x input_dim, rows orthonormal
    Vector explained_variance;  // per component, descending
    std::size_t target_dim = 0;

    std::size_t input_dim() const { return static_cast<std::size_t>(mean_vector.size()); }
};

// PCA through the n x n Gram matrix of the centered samples, for n << dim.
PcaProjection fit_dual_pca(std::span<const Vector> samples, std::size_t target_dim);

Vector project(const PcaProjection & P, const Eigen::Ref<const Vector> & x);

} // namespace edtf
