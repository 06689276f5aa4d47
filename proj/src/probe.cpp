#include "edtf/probe.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

namespace edtf {

Vector featurize(const WeightMatrix & m) {
    return Eigen::Map<const Vector>(m.data(), m.size());
}

std::size_t LinearClassifier::predict(const Vector & x) const {
    const Vector s = weights * x + bias;
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < s.size(); ++c) {
        if (s[c] > s[best]) {
            best = c;
        }
    }
    return static_cast<std::size_t>(best);
}

std::vector<std::size_t> LinearClassifier::predict(const WeightMatrix & xs) const {
    std::vector<std::size_t> out;
    for (Eigen::Index i = 0; i < xs.rows(); ++i) {
        out.push_back(predict(Vector(xs.row(i).transpose())));
    }
    return out;
}

namespace {

// Loss gradient at (W, b). Returns the objective.
double logreg_grad(const WeightMatrix & xs, std::span<const std::size_t> labels, double l2,
                   const WeightMatrix & W, const Vector & b, WeightMatrix & gW, Vector & gb) {
    const auto n = xs.rows();
    WeightMatrix s = xs * W.transpose();
    s.rowwise() += b.transpose();
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mx = s.row(i).maxCoeff();
        s.row(i).array() = (s.row(i).array() - mx).exp();
        const double z = s.row(i).sum();
        s.row(i) /= z;
        loss -= std::log(std::max(s(i, static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)])), 1e-300));
        s(i, static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)])) -= 1.0;
    }
    s /= static_cast<double>(n);
    gW.noalias() = s.transpose() * xs;
    gW += l2 * W;
    gb = s.colwise().sum().transpose();
    return loss / static_cast<double>(n) + 0.5 * l2 * W.squaredNorm();
}

} // namespace

LinearClassifier train_logreg(const WeightMatrix & xs, std::span<const std::size_t> labels,
                              std::size_t n_classes, const LogregConfig & cfg) {
    if (xs.rows() == 0 || static_cast<std::size_t>(xs.rows()) != labels.size()) {
        throw Error(ErrorCode::DimensionMismatch, "train_logreg: one label per sample required");
    }
    if (n_classes < 2) {
        throw Error(ErrorCode::InvalidConfig, "train_logreg needs at least two classes");
    }
    for (std::size_t y : labels) {
        if (y >= n_classes) {
            throw Error(ErrorCode::IndexOutOfRange, "label out of range");
        }
    }
    validate_matrix(xs, "logreg features");
    const auto c = static_cast<Eigen::Index>(n_classes);
    const auto dim = xs.cols();
    const auto n = static_cast<double>(xs.rows());

    // Smoothness bound of the objective: 1/2 * lambda_max([X 1]^T [X 1] / n) + l2.
    WeightMatrix xa(xs.rows(), dim + 1);
    xa << xs, Vector::Ones(xs.rows());
    const WeightMatrix gram = xa.transpose() * xa / n;
    const double top = Eigen::SelfAdjointEigenSolver<WeightMatrix>(gram, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
    const double step = 1.0 / (0.5 * top + cfg.l2);

    LinearClassifier m;
    m.weights = WeightMatrix::Zero(c, dim);
    m.bias = Vector::Zero(c);
    WeightMatrix yW = m.weights;
    Vector yb = m.bias;
    WeightMatrix gW(c, dim);
    Vector gb(c);
    double t = 1.0;
    double prev_obj = std::numeric_limits<double>::infinity();
    for (std::size_t it = 0; it < cfg.max_iter; ++it) {
        logreg_grad(xs, labels, cfg.l2, m.weights, m.bias, gW, gb);
        m.final_grad_norm = std::sqrt(gW.squaredNorm() + gb.squaredNorm());
        m.iterations = it;
        if (m.final_grad_norm < cfg.grad_tolerance) {
            m.converged = true;
            return m;
        }
        const double obj = logreg_grad(xs, labels, cfg.l2, yW, yb, gW, gb);
        const WeightMatrix nW = yW - step * gW;
        const Vector nb = yb - step * gb;
        // Restart the momentum when the objective goes up.
        if (obj > prev_obj) {
            t = 1.0;
        }
        prev_obj = obj;
        const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        yW = nW + ((t - 1.0) / tn) * (nW - m.weights);
        yb = nb + ((t - 1.0) / tn) * (nb - m.bias);
        m.weights = nW;
        m.bias = nb;
        t = tn;
    }
    logreg_grad(xs, labels, cfg.l2, m.weights, m.bias, gW, gb);
    m.final_grad_norm = std::sqrt(gW.squaredNorm() + gb.squaredNorm());
    m.iterations = cfg.max_iter;
    m.converged = m.final_grad_norm < cfg.grad_tolerance;
    return m;
}

bool ProbeResult::audit_passed() const {
    for (const auto & r : repeats) {
        const std::set<std::size_t> train(r.train_ids.begin(), r.train_ids.end());
        for (std::size_t id : r.test_ids) {
            if (train.count(id)) {
                return false;
            }
        }
        for (std::size_t id : r.pca_ids) {
            if (!train.count(id)) {
                return false;
            }
        }
    }
    return !repeats.empty();
}

ProbeResult run_probe(std::span<const EditedSnapshot> snapshots, const ProbeConfig & cfg, uint64_t seed) {
    if (cfg.n_classes < 2 || cfg.repeats < 1 || cfg.train_per_relation < 1 || cfg.test_per_relation < 1 ||
        cfg.pca_dim < 1) {
        throw Error(ErrorCode::InvalidConfig, "probe config");
    }
    std::map<std::string, std::vector<std::size_t>> by_relation;
    for (std::size_t i = 0; i < snapshots.size(); ++i) {
        if (snapshots[i].success) {
            by_relation[snapshots[i].edit.relation_id].push_back(i);
        }
    }
    const std::size_t need = cfg.train_per_relation + cfg.test_per_relation;
    std::vector<std::string> eligible;
    std::string deficient;
    for (const auto & [rel, ids] : by_relation) {
        if (ids.size() >= need) {
            eligible.push_back(rel);
        } else if (deficient.empty()) {
            deficient = rel + " (" + std::to_string(ids.size()) + " successful edits, need " + std::to_string(need) + ")";
        }
    }
    if (eligible.size() < cfg.n_classes) {
        throw Error(ErrorCode::InsufficientData,
                    "only " + std::to_string(eligible.size()) + " relations have enough edits" +
                        (deficient.empty() ? std::string() : "; first deficient: " + deficient));
    }

    ProbeResult result;
    for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
        std::mt19937_64 rng(derive_seed(seed, rep));
        ProbeRepeat pr;
        std::vector<std::string> pool = eligible;
        std::shuffle(pool.begin(), pool.end(), rng);
        pr.relations.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(cfg.n_classes));
        std::sort(pr.relations.begin(), pr.relations.end());

        std::vector<std::size_t> train_labels, test_labels;
        const std::size_t pca_per_relation = std::max<std::size_t>(1, cfg.pca_fit_samples / cfg.n_classes);
        for (std::size_t c = 0; c < cfg.n_classes; ++c) {
            std::vector<std::size_t> ids = by_relation.at(pr.relations[c]);
            std::shuffle(ids.begin(), ids.end(), rng);
            for (std::size_t j = 0; j < cfg.train_per_relation; ++j) {
                pr.train_ids.push_back(ids[j]);
                train_labels.push_back(c);
                if (j < pca_per_relation) {
                    pr.pca_ids.push_back(ids[j]);
                }
            }
            for (std::size_t j = 0; j < cfg.test_per_relation; ++j) {
                pr.test_ids.push_back(ids[cfg.train_per_relation + j]);
                test_labels.push_back(c);
            }
        }

        auto features = [&](const std::vector<std::size_t> & ids) {
            std::vector<Vector> out;
            for (std::size_t id : ids) {
                out.push_back(featurize(snapshots[id].edited_matrix));
            }
            return out;
        };
        const std::size_t target = std::min(cfg.pca_dim, pr.pca_ids.size() - 1);
        const PcaProjection pca = fit_dual_pca(features(pr.pca_ids), target);
        auto projected = [&](const std::vector<std::size_t> & ids) {
            WeightMatrix out(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(pca.target_dim));
            for (std::size_t i = 0; i < ids.size(); ++i) {
                out.row(static_cast<Eigen::Index>(i)) =
                    project(pca, featurize(snapshots[ids[i]].edited_matrix)).transpose();
            }
            return out;
        };
        const WeightMatrix train_x = projected(pr.train_ids);
        const WeightMatrix test_x = projected(pr.test_ids);

        const LinearClassifier clf = train_logreg(train_x, train_labels, cfg.n_classes, cfg.logreg);
        pr.classifier_converged = clf.converged;
        const std::vector<std::size_t> pred = clf.predict(test_x);
        std::uniform_int_distribution<std::size_t> guess(0, cfg.n_classes - 1);
        std::size_t hit = 0;
        std::size_t random_hit = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            hit += pred[i] == test_labels[i];
            random_hit += guess(rng) == test_labels[i];
        }
        pr.accuracy = static_cast<double>(hit) / static_cast<double>(pred.size());
        pr.baseline = static_cast<double>(random_hit) / static_cast<double>(pred.size());
        result.repeats.push_back(std::move(pr));
    }
    const double n = static_cast<double>(result.repeats.size());
    for (const auto & r : result.repeats) {
        result.mean_accuracy += r.accuracy / n;
        result.mean_baseline += r.baseline / n;
    }
    for (const auto & r : result.repeats) {
        result.std_accuracy += (r.accuracy - result.mean_accuracy) * (r.accuracy - result.mean_accuracy) / n;
    }
    result.std_accuracy = std::sqrt(result.std_accuracy);
    return result;
}

} // namespace edtf
