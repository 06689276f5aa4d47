#pragma once

#include "edtf/editor.hpp"
#include "edtf/linalg.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace edtf {

// Row-major flattening of a weight matrix.
Vector featurize(const WeightMatrix & m);

struct LogregConfig {
    double l2 = 1e-2;
    double grad_tolerance = 1e-6;
    std::size_t max_iter = 5000;
};

struct LinearClassifier {
    WeightMatrix weights; // classes x dim
    Vector bias;          // classes
    bool converged = false;
    double final_grad_norm = 0.0;
    std::size_t iterations = 0;

    std::size_t predict(const Vector & x) const;
    std::vector<std::size_t> predict(const WeightMatrix & xs) const;
};

// Multinomial logistic regression, full-batch accelerated gradient descent on
// mean cross-entropy + l2/2 |W|^2 (bias unpenalised). Rows of xs are samples.
LinearClassifier train_logreg(const WeightMatrix & xs, std::span<const std::size_t> labels,
                              std::size_t n_classes, const LogregConfig & cfg = {});

struct ProbeConfig {
    std::size_t n_classes = 3;
    std::size_t train_per_relation = 50;
    std::size_t test_per_relation = 50;
    std::size_t pca_fit_samples = 100;
    std::size_t pca_dim = 50;
    std::size_t repeats = 5;
    LogregConfig logreg;
};

struct ProbeRepeat {
    std::vector<std::string> relations;
    std::vector<std::size_t> train_ids;
    std::vector<std::size_t> test_ids;
    std::vector<std::size_t> pca_ids;
    double accuracy = 0.0;
    double baseline = 0.0;
    bool classifier_converged = false;
};

struct ProbeResult {
    std::vector<ProbeRepeat> repeats;
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;
    double mean_baseline = 0.0;

    // Train/test ids disjoint and PCA ids drawn from train ids, in every repeat.
    bool audit_passed() const;
};

// Classifies the relation of an edit from its edited matrix alone. Only successful
// snapshots are used; relations are sampled among those with enough of them.
ProbeResult run_probe(std::span<const EditedSnapshot> snapshots, const ProbeConfig & cfg, uint64_t seed);

} // namespace edtf
