#include "edtf/probe.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace edtf;

namespace {

// Damped Newton's method on the same objective: mean cross-entropy + l2/2 |W|^2, bias free.
// Parameters are stacked per class as [w_c; b_c].
void newton_logreg(const WeightMatrix & xs, const std::vector<std::size_t> & y, std::size_t k, double l2,
                   WeightMatrix & W, Vector & b) {
    const auto n = xs.rows(), d = xs.cols(), K = static_cast<Eigen::Index>(k);
    const Eigen::Index p = d + 1;
    WeightMatrix xa(n, p);
    xa << xs, Vector::Ones(n);
    Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(K, p);
    auto objective = [&](const Eigen::MatrixXd & th) {
        double loss = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::VectorXd s = th * xa.row(i).transpose();
            const double mx = s.maxCoeff();
            const double lse = mx + std::log((s.array() - mx).exp().sum());
            loss += lse - s[static_cast<Eigen::Index>(y[static_cast<std::size_t>(i)])];
        }
        return loss / static_cast<double>(n) + 0.5 * l2 * th.leftCols(d).squaredNorm();
    };
    for (int it = 0; it < 100; ++it) {
        Eigen::VectorXd g = Eigen::VectorXd::Zero(K * p);
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(K * p, K * p);
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::VectorXd s = theta * xa.row(i).transpose();
            s = (s.array() - s.maxCoeff()).exp();
            s /= s.sum();
            const Eigen::VectorXd x = xa.row(i).transpose();
            for (Eigen::Index a = 0; a < K; ++a) {
                const double r = s[a] - (static_cast<std::size_t>(a) == y[static_cast<std::size_t>(i)] ? 1.0 : 0.0);
                g.segment(a * p, p) += r * x;
                for (Eigen::Index c = 0; c < K; ++c) {
                    const double h = s[a] * ((a == c ? 1.0 : 0.0) - s[c]);
                    H.block(a * p, c * p, p, p) += h * x * x.transpose();
                }
            }
        }
        g /= static_cast<double>(n);
        H /= static_cast<double>(n);
        for (Eigen::Index a = 0; a < K; ++a) {
            for (Eigen::Index j = 0; j < d; ++j) {
                g[a * p + j] += l2 * theta(a, j);
                H(a * p + j, a * p + j) += l2;
            }
        }
        if (g.norm() < 1e-12) {
            break;
        }
        // softmax is shift invariant in the bias block, so H is singular there
        H.diagonal().array() += 1e-12;
        const Eigen::VectorXd step = H.ldlt().solve(g);
        Eigen::MatrixXd delta(K, p);
        for (Eigen::Index a = 0; a < K; ++a) {
            delta.row(a) = step.segment(a * p, p).transpose();
        }
        double t = 1.0;
        const double f0 = objective(theta);
        while (objective(theta - t * delta) > f0 - 1e-4 * t * g.dot(step) && t > 1e-10) {
            t *= 0.5;
        }
        theta -= t * delta;
    }
    W = theta.leftCols(d);
    b = theta.col(d);
}

WeightMatrix gaussian_blobs(std::size_t n, std::size_t d, std::size_t k, double sep, std::mt19937_64 & rng,
                            std::vector<std::size_t> & labels) {
    WeightMatrix centers = test::random_matrix(k, d, rng, sep);
    WeightMatrix xs = test::random_matrix(n, d, rng);
    labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = i % k;
        xs.row(static_cast<Eigen::Index>(i)) += centers.row(static_cast<Eigen::Index>(labels[i]));
    }
    return xs;
}

// Snapshots whose edited matrices differ by a relation-specific offset plus noise.
std::vector<EditedSnapshot> planted_snapshots(std::size_t relations, std::size_t per_relation, uint64_t seed) {
    std::mt19937_64 rng(seed);
    const WeightMatrix base = test::random_matrix(12, 6, rng);
    std::vector<WeightMatrix> offsets;
    for (std::size_t r = 0; r < relations; ++r) {
        offsets.push_back(test::random_matrix(12, 6, rng, 0.3));
    }
    std::vector<EditedSnapshot> out;
    for (std::size_t i = 0; i < relations * per_relation; ++i) {
        EditedSnapshot s;
        s.id = i;
        s.success = true;
        const std::size_t r = i % relations;
        s.edit.relation_id = "rel_" + std::to_string(r);
        s.edited_matrix = base + offsets[r] + test::random_matrix(12, 6, rng, 0.5);
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace

TEST_CASE("featurize flattens row-major") {
    WeightMatrix m(2, 2);
    m << 1, 2, 3, 4;
    const Vector f = featurize(m);
    REQUIRE(f.size() == 4);
    CHECK(f[1] == 2.0);
    CHECK(f[2] == 3.0);
    CHECK(featurize(WeightMatrix::Zero(256, 64)).size() == 16384);
}

TEST_CASE("separable clusters are fit perfectly") {
    WeightMatrix xs(40, 2);
    std::vector<std::size_t> y(40);
    std::mt19937_64 rng(41);
    std::normal_distribution<double> noise(0.0, 0.2);
    for (int i = 0; i < 40; ++i) {
        y[static_cast<std::size_t>(i)] = static_cast<std::size_t>(i % 2);
        const double c = i % 2 ? 3.0 : -3.0;
        xs.row(i) << c + noise(rng), c + noise(rng);
    }
    const LinearClassifier m = train_logreg(xs, y, 2);
    CHECK(m.converged);
    CHECK(m.predict(xs) == y);
}

TEST_CASE("logistic regression agrees with a Newton-method oracle") {
    std::mt19937_64 rng(42);
    std::vector<std::size_t> y;
    const WeightMatrix xs = gaussian_blobs(100, 10, 3, 0.8, rng, y);
    const double l2 = 1e-2;
    LogregConfig cfg;
    cfg.l2 = l2;
    const LinearClassifier m = train_logreg(xs, y, 3, cfg);
    CHECK(m.converged);
    CHECK(m.final_grad_norm < 1e-6);
    WeightMatrix W;
    Vector b;
    newton_logreg(xs, y, 3, l2, W, b);
    // the bias is only identified up to a shift shared by all classes
    Vector bc = m.bias.array() - m.bias.mean();
    Vector ref_bc = b.array() - b.mean();
    CHECK((m.weights - W).norm() / W.norm() < 1e-4);
    CHECK((bc - ref_bc).norm() < 1e-4 * std::max(1.0, ref_bc.norm()));
    std::size_t agree = 0;
    for (Eigen::Index i = 0; i < xs.rows(); ++i) {
        const Vector x = xs.row(i).transpose();
        const Vector s = W * x + b;
        Eigen::Index best;
        s.maxCoeff(&best);
        agree += m.predict(x) == static_cast<std::size_t>(best);
    }
    CHECK(agree >= 98);
}

TEST_CASE("logistic regression is invariant to sample order") {
    std::mt19937_64 rng(43);
    std::vector<std::size_t> y;
    const WeightMatrix xs = gaussian_blobs(60, 5, 3, 1.0, rng, y);
    std::vector<std::size_t> perm(60);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    WeightMatrix xp(60, 5);
    std::vector<std::size_t> yp(60);
    for (std::size_t i = 0; i < 60; ++i) {
        xp.row(static_cast<Eigen::Index>(i)) = xs.row(static_cast<Eigen::Index>(perm[i]));
        yp[i] = y[perm[i]];
    }
    const LinearClassifier a = train_logreg(xs, y, 3), b = train_logreg(xp, yp, 3);
    CHECK((a.weights - b.weights).norm() < 1e-8);
    CHECK((a.bias - b.bias).norm() < 1e-8);
}

TEST_CASE("logistic regression input validation") {
    const WeightMatrix xs = WeightMatrix::Ones(3, 2);
    const std::vector<std::size_t> y{0, 1, 0};
    CHECK_THROWS_AS(train_logreg(xs, y, 1), Error);
    CHECK_THROWS_AS(train_logreg(xs, std::vector<std::size_t>{0, 1}, 2), Error);
    CHECK_THROWS_AS(train_logreg(xs, std::vector<std::size_t>{0, 1, 2}, 2), Error);
    LogregConfig few;
    few.max_iter = 2;
    std::mt19937_64 rng(44);
    std::vector<std::size_t> yy;
    const WeightMatrix blobs = gaussian_blobs(50, 4, 2, 0.5, rng, yy);
    const LinearClassifier m = train_logreg(blobs, yy, 2, few);
    CHECK_FALSE(m.converged);
    CHECK(m.final_grad_norm > 0.0);
}

TEST_CASE("relation probe recovers relation-specific edits") {
    const auto snaps = planted_snapshots(6, 100, 45);
    for (std::size_t n : {2, 3, 5}) {
        ProbeConfig cfg;
        cfg.n_classes = n;
        const ProbeResult r = run_probe(snaps, cfg, 7);
        REQUIRE(r.repeats.size() == 5);
        CHECK(r.audit_passed());
        CHECK(r.mean_accuracy >= r.mean_baseline + 0.2);
        CHECK(r.mean_accuracy > 0.9);
        for (const auto & rep : r.repeats) {
            CHECK(rep.relations.size() == n);
            CHECK(rep.train_ids.size() == 50 * n);
            CHECK(rep.test_ids.size() == 50 * n);
            CHECK(rep.pca_ids.size() == n * (100 / n));
            CHECK(rep.accuracy >= 0.0);
            CHECK(rep.accuracy <= 1.0);
        }
        const ProbeResult again = run_probe(snaps, cfg, 7);
        CHECK(again.mean_accuracy == r.mean_accuracy);
        CHECK(again.repeats[0].test_ids == r.repeats[0].test_ids);
    }
}

TEST_CASE("relation probe stays near chance when edits carry no relation signal") {
    auto snaps = planted_snapshots(3, 100, 46);
    std::mt19937_64 rng(47);
    for (auto & s : snaps) {
        s.edit.relation_id = "rel_" + std::to_string(rng() % 3);
    }
    ProbeConfig cfg;
    cfg.n_classes = 2;
    cfg.train_per_relation = 40;
    cfg.test_per_relation = 40;
    const ProbeResult r = run_probe(snaps, cfg, 8);
    CHECK(r.mean_accuracy < r.mean_baseline + 0.2);
}

TEST_CASE("relation probe names the deficient relation") {
    auto snaps = planted_snapshots(2, 100, 48);
    for (std::size_t i = 0; i < 10; ++i) {
        snaps[2 * i + 1].success = false; // rel_1 loses ten edits
    }
    ProbeConfig cfg;
    cfg.n_classes = 2;
    try {
        run_probe(snaps, cfg, 1);
        FAIL("expected InsufficientData");
    } catch (const Error & e) {
        CHECK(e.code() == ErrorCode::InsufficientData);
        CHECK(std::string(e.what()).find("rel_1") != std::string::npos);
    }
    std::vector<EditedSnapshot> one = planted_snapshots(1, 100, 49);
    CHECK_THROWS_AS(run_probe(one, cfg, 1), Error);
}
