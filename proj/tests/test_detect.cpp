#include "edtf/detect.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

using namespace edtf;

TEST_CASE("direction stats on 1000 random updates: sign counts, scaling and negation") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> bias(-1.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t e = 2 + rng() % 60;
        RankOneUpdate up;
        up.u = test::random_vector(e, rng);
        up.u.array() += bias(rng); // vary the sign balance
        up.v = test::random_vector(4, rng);
        std::size_t pos = 0, neg = 0;
        for (double x : up.u) {
            pos += x > 0;
            neg += x < 0;
        }
        const DirectionStats s = direction_stats(up);
        CHECK(s.n_rows == e);
        CHECK(s.same_fraction == doctest::Approx(static_cast<double>(std::max(pos, neg)) / static_cast<double>(pos + neg)));
        CHECK(s.same_fraction + s.opposite_fraction == doctest::Approx(1.0));
        CHECK(s.same_fraction >= 0.5);

        RankOneUpdate scaled = up;
        scaled.v *= -3.7;
        scaled.u *= 2.5;
        const DirectionStats t = direction_stats(scaled);
        CHECK(t.same_fraction == s.same_fraction);
        CHECK(t.positive_majority == s.positive_majority);

        RankOneUpdate neg_u = up;
        neg_u.u = -up.u;
        const DirectionStats n = direction_stats(neg_u);
        CHECK(n.same_fraction == s.same_fraction);
        if (pos != neg) {
            CHECK(n.positive_majority != s.positive_majority);
        }
        neg_u.scale = -1.0;
        CHECK(direction_stats(neg_u).positive_majority == s.positive_majority);
    }
}

TEST_CASE("direction stats excludes zero rows and rejects all-zero updates") {
    RankOneUpdate up;
    up.u = Vector(5);
    up.u << 1.0, 0.0, -2.0, 3.0, 1e-14;
    up.v = Vector::Ones(2);
    const DirectionStats s = direction_stats(up);
    CHECK(s.zero_rows == 2);
    CHECK(s.same_fraction == doctest::Approx(2.0 / 3.0));
    CHECK(s.positive_majority);
    CHECK_FALSE(is_majority_sign(s));
    up.u.setZero();
    CHECK_THROWS_AS(direction_stats(up), Error);
    up.u = Vector();
    CHECK_THROWS_AS(direction_stats(up), Error);
}

TEST_CASE("majority sign threshold is inclusive at 0.8") {
    DirectionStats s;
    s.same_fraction = 0.8;
    CHECK(is_majority_sign(s));
    s.same_fraction = 0.799;
    CHECK_FALSE(is_majority_sign(s));
}

TEST_CASE("batch direction summary uses the population standard deviation") {
    std::vector<EditedSnapshot> snaps(3);
    const std::vector<std::vector<double>> us{{1, 1, 1, 1}, {1, 1, -1, -1}, {1, 1, 1, -1}};
    for (std::size_t i = 0; i < 3; ++i) {
        snaps[i].update.u = Eigen::Map<const Vector>(us[i].data(), 4);
        snaps[i].update.v = Vector::Ones(2);
    }
    const DirectionSummary d = direction_summary_over_batch(snaps);
    const double m = (1.0 + 0.5 + 0.75) / 3.0;
    const double var = ((1 - m) * (1 - m) + (0.5 - m) * (0.5 - m) + (0.75 - m) * (0.75 - m)) / 3.0;
    CHECK(d.count == 3);
    CHECK(d.mean_same == doctest::Approx(m));
    CHECK(d.std_same == doctest::Approx(std::sqrt(var)));
    CHECK(d.mean_opposite == doctest::Approx(1.0 - m));
    CHECK_THROWS_AS(direction_summary_over_batch({}), Error);
}

TEST_CASE("layer scan robust z-scores") {
    const std::vector<double> v{0.010, 0.012, 0.011, 0.50};
    const LayerScanReport r = scan_layer_values(v, 10.0);
    // median 0.0115; deviations 0.0015 0.0005 0.0005 0.4885 -> MAD 0.001
    CHECK(r.median == doctest::Approx(0.0115));
    CHECK(r.mad == doctest::Approx(0.001));
    CHECK(r.z_scores[3] == doctest::Approx((0.50 - 0.0115) / (1.4826 * 0.001)));
    REQUIRE(r.flagged.size() == 1);
    CHECK(r.flagged[0].first == 3);
    CHECK_FALSE(r.degenerate);

    const LayerScanReport low = scan_layer_values(std::vector<double>{0.5, 0.010, 0.012, 0.011}, 1e9);
    CHECK(low.flagged.empty());

    const LayerScanReport flat = scan_layer_values(std::vector<double>{0.2, 0.2, 0.2, 0.9});
    CHECK(flat.degenerate);
    CHECK(flat.flagged.empty());
    CHECK_THROWS_AS(scan_layer_values(std::vector<double>{0.1, 0.2}), Error);
}

TEST_CASE("layer scan over model matrices flags a planted aligned layer") {
    std::mt19937_64 rng(22);
    std::vector<WeightMatrix> mats;
    for (int l = 0; l < 6; ++l) {
        mats.push_back(test::random_matrix(64, 16, rng));
    }
    const LayerScanReport clean = scan_layers(mats);
    CHECK(clean.flagged.empty());
    // a dominant common direction in every row of layer 2
    mats[2].rowwise() += Eigen::RowVectorXd::Constant(16, 3.0);
    const LayerScanReport hit = scan_layers(mats);
    REQUIRE(hit.flagged.size() == 1);
    CHECK(hit.flagged[0].first == 2);

    const ToyLmConfig cfg = test::tiny_config();
    ModelWeights w = ModelWeights::random_init(cfg);
    w.layers.push_back(w.layers[0]);
    CHECK(scan_layers(w).pcs.size() == 3);
    CHECK(scan_layers(w).pcs[1] == pcs(w.layers[1].mlp_out));
}

TEST_CASE("unique predictions count distinct continuations across k") {
    const auto & s = test::small_world();
    const std::size_t layer = 1;
    std::vector<TokenSequence> inputs;
    for (std::size_t i = 0; i < 6; ++i) {
        inputs.push_back(s.corpus.prompt_tokens(s.corpus.facts[i * 7]));
    }
    const WeightMatrix & W = s.weights.layers[layer].mlp_out;
    const std::size_t k_max = 4;
    const UniquePredictionReport r = unique_predictions(s.weights, s.cfg, W, layer, inputs, k_max, 3);
    REQUIRE(r.counts.size() == inputs.size());

    const SvdFactorization F = svd(W);
    double mean = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        std::set<TokenSequence> outs;
        for (std::size_t k = 0; k <= k_max; ++k) {
            ModelWeights m = s.weights;
            m.layers[layer].mlp_out = bottom_rank_approx(F, k);
            TokenSequence x = inputs[i];
            TokenSequence gen;
            for (int t = 0; t < 3; ++t) {
                const int32_t nt = next_token(m, s.cfg, x);
                x.push_back(nt);
                gen.push_back(nt);
            }
            outs.insert(gen);
        }
        CHECK(r.counts[i] == outs.size());
        CHECK(r.counts[i] >= 1);
        CHECK(r.counts[i] <= k_max + 1);
        mean += static_cast<double>(outs.size());
    }
    CHECK(r.mean_unique == doctest::Approx(mean / static_cast<double>(inputs.size())));

    const UniquePredictionReport k0 = unique_predictions(s.weights, s.cfg, W, layer, inputs, 0, 3);
    CHECK(k0.mean_unique == 1.0);
    CHECK(k0.std_unique == 0.0);
    CHECK_THROWS_AS(unique_predictions(s.weights, s.cfg, W, layer, {}, 2), Error);
    CHECK_THROWS_AS(unique_predictions(s.weights, s.cfg, W, layer, inputs, s.cfg.d_model + 1), Error);
}
