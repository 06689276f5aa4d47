#include "edtf/toy_lm.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace edtf;

namespace {

double sequence_loss(const ModelWeights & w, const ToyLmConfig & cfg, const TokenSequence & x,
                     const TokenSequence & targets, WeightMatrix * dlogits = nullptr) {
    const WeightMatrix logits = forward(w, cfg, x);
    double loss = 0.0;
    if (dlogits != nullptr) {
        dlogits->setZero(logits.rows(), logits.cols());
    }
    Eigen::RowVectorXd g(logits.cols());
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
        loss += softmax_xent(logits.row(t), targets[static_cast<std::size_t>(t)], g);
        if (dlogits != nullptr) {
            dlogits->row(t) = g;
        }
    }
    return loss;
}

std::vector<std::pair<std::string, WeightMatrix *>> parameters(ModelWeights & w) {
    std::vector<std::pair<std::string, WeightMatrix *>> out;
    w.for_each([&](const std::string & name, WeightMatrix & m) { out.emplace_back(name, &m); });
    return out;
}

} // namespace

TEST_CASE("gelu and its derivative") {
    CHECK(gelu(0.0) == 0.0);
    CHECK(gelu(3.0) == doctest::Approx(2.99636).epsilon(1e-4));
    CHECK(gelu(-3.0) == doctest::Approx(-0.00364).epsilon(1e-2));
    for (double x : {-2.5, -0.7, 0.0, 0.3, 1.9}) {
        const double h = 1e-6;
        CHECK(gelu_grad(x) == doctest::Approx((gelu(x + h) - gelu(x - h)) / (2 * h)).epsilon(1e-6));
    }
}

TEST_CASE("config validation and shapes") {
    ToyLmConfig c = test::tiny_config();
    CHECK_NOTHROW(c.validate());
    c.n_heads = 3;
    CHECK_THROWS_AS(c.validate(), Error);
    const ToyLmConfig t = test::tiny_config();
    const ModelWeights w = ModelWeights::random_init(t);
    CHECK_NOTHROW(w.check_shapes(t));
    CHECK(w.layers.size() == t.n_layers);
    CHECK(w.layers[0].mlp_out.rows() == static_cast<Eigen::Index>(t.d_hidden));
    CHECK(w.layers[0].mlp_out.cols() == static_cast<Eigen::Index>(t.d_model));
    CHECK(ModelWeights::random_init(t) == w);
}

TEST_CASE("sequence validation") {
    const ToyLmConfig cfg = test::tiny_config();
    const ModelWeights w = ModelWeights::random_init(cfg);
    const TokenSequence too_long(cfg.max_seq_len + 1, 1);
    CHECK_THROWS_AS(forward(w, cfg, too_long), Error);
    const TokenSequence bad{1, static_cast<int32_t>(cfg.vocab_size)};
    CHECK_THROWS_AS(forward(w, cfg, bad), Error);
    CHECK_THROWS_AS(forward(w, cfg, TokenSequence{}), Error);
}

TEST_CASE("forward is causal") {
    const ToyLmConfig cfg = test::tiny_config();
    const ModelWeights w = ModelWeights::random_init(cfg);
    const TokenSequence a{3, 4, 5, 6}, b{3, 4, 9, 1};
    const WeightMatrix la = forward(w, cfg, a), lb = forward(w, cfg, b);
    CHECK((la.topRows(2) - lb.topRows(2)).norm() == 0.0);
    CHECK((la.row(2) - lb.row(2)).norm() > 0.0);
}

TEST_CASE("packed batch equals separate forwards") {
    const ToyLmConfig cfg = test::tiny_config();
    const ModelWeights w = ModelWeights::random_init(cfg);
    const std::vector<TokenSequence> batch{{1, 2, 3}, {4, 5}, {6, 7, 8, 9}};
    const ForwardTrace t = forward_traced_batch(w, cfg, batch);
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const WeightMatrix one = forward(w, cfg, batch[s]);
        const WeightMatrix part =
            t.logits.middleRows(static_cast<Eigen::Index>(t.offsets[s]), static_cast<Eigen::Index>(t.lengths[s]));
        CHECK((one - part).norm() < 1e-12);
    }
}

TEST_CASE("interventions substitute the matrix and the MLP output") {
    const ToyLmConfig cfg = test::tiny_config();
    ModelWeights w = ModelWeights::random_init(cfg);
    const TokenSequence x{2, 3, 4};
    std::mt19937_64 rng(8);
    const WeightMatrix other = test::random_matrix(cfg.d_hidden, cfg.d_model, rng, 0.2);
    Intervention iv;
    iv.mlp_out = &other;
    iv.mlp_out_layer = 1;
    const WeightMatrix via_iv = forward(w, cfg, x, iv);
    w.layers[1].mlp_out = other;
    CHECK((forward(w, cfg, x) - via_iv).norm() < 1e-12);

    const ForwardTrace t = forward_traced(w, cfg, x);
    Intervention same;
    same.mlp_output = Vector(t.layers[0].mlp.row(1).transpose());
    same.mlp_output_layer = 0;
    same.mlp_output_position = 1;
    CHECK((forward(w, cfg, x, same) - t.logits).norm() < 1e-12);
}

TEST_CASE("mlp_key_activation matches the trace") {
    const ToyLmConfig cfg = test::tiny_config();
    const ModelWeights w = ModelWeights::random_init(cfg);
    const TokenSequence x{5, 6, 7};
    const ForwardTrace t = forward_traced(w, cfg, x);
    const Vector k = mlp_key_activation(w, cfg, x, 1, 2);
    CHECK((k - t.layers[1].key.row(2).transpose()).norm() < 1e-12);
    CHECK_THROWS_AS(mlp_key_activation(w, cfg, x, 2, 0), Error);
    CHECK_THROWS_AS(mlp_key_activation(w, cfg, x, 0, 3), Error);
}

TEST_CASE("argmax ties go to the lowest id; greedy decode extends the prompt") {
    Eigen::RowVectorXd l(4);
    l << 0.5, 2.0, 2.0, -1.0;
    CHECK(argmax_token(l) == 1);
    const ToyLmConfig cfg = test::tiny_config();
    const ModelWeights w = ModelWeights::random_init(cfg);
    const TokenSequence p{1, 2};
    const TokenSequence out = greedy_decode(w, cfg, p, 3);
    REQUIRE(out.size() == 5);
    CHECK(out[0] == 1);
    CHECK(out[1] == 2);
    CHECK(out[2] == next_token(w, cfg, p));
    const TokenSequence prefix(out.begin(), out.begin() + 3);
    CHECK(out[3] == next_token(w, cfg, prefix));
}

TEST_CASE("softmax cross-entropy gradient") {
    Eigen::RowVectorXd l(3), g(3);
    l << 1.0, 2.0, 0.5;
    const double loss = softmax_xent(l, 1, g);
    const Eigen::RowVectorXd p = softmax(l);
    CHECK(loss == doctest::Approx(-std::log(p[1])));
    CHECK(g[0] == doctest::Approx(p[0]));
    CHECK(g[1] == doctest::Approx(p[1] - 1.0));
    CHECK(p.sum() == doctest::Approx(1.0));
}

TEST_CASE("backward matches central finite differences on 50 coordinates") {
    ToyLmConfig cfg = test::tiny_config(); // d = 8, L = 2
    ModelWeights w = ModelWeights::random_init(cfg);
    std::mt19937_64 rng(11);
    // larger weights than init so every path carries gradient
    for (auto & [name, m] : parameters(w)) {
        *m = test::random_matrix(static_cast<std::size_t>(m->rows()), static_cast<std::size_t>(m->cols()), rng, 0.4);
    }
    const TokenSequence x{3, 7, 1, 12, 5};
    const TokenSequence y{7, 1, 12, 5, 9};

    WeightMatrix dlogits;
    sequence_loss(w, cfg, x, y, &dlogits);
    const ForwardTrace trace = forward_traced(w, cfg, x);
    ModelWeights grads = ModelWeights::zeros(cfg);
    backward(w, cfg, trace, x, dlogits, {}, GradMask{}, grads);

    auto params = parameters(w);
    auto gparams = parameters(grads);
    std::size_t checked = 0;
    double worst = 0.0;
    while (checked < 50) {
        const std::size_t pi = rng() % params.size();
        WeightMatrix & m = *params[pi].second;
        const Eigen::Index idx = static_cast<Eigen::Index>(rng() % static_cast<uint64_t>(m.size()));
        if (params[pi].first == "token_embeddings") {
            // only rows of tokens present in x receive gradient
            const Eigen::Index row = idx / m.cols();
            if (std::find(x.begin(), x.end(), static_cast<int32_t>(row)) == x.end()) {
                continue;
            }
        }
        if (params[pi].first == "positional_embeddings" && idx / m.cols() >= static_cast<Eigen::Index>(x.size())) {
            continue;
        }
        const double h = 1e-5;
        const double orig = m.data()[idx];
        m.data()[idx] = orig + h;
        const double lp = sequence_loss(w, cfg, x, y);
        m.data()[idx] = orig - h;
        const double lm = sequence_loss(w, cfg, x, y);
        m.data()[idx] = orig;
        const double numeric = (lp - lm) / (2 * h);
        const double analytic = gparams[pi].second->data()[idx];
        const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-7});
        INFO(params[pi].first, " idx ", idx, " numeric ", numeric, " analytic ", analytic);
        CHECK(rel < 1e-3);
        worst = std::max(worst, rel);
        ++checked;
    }
    MESSAGE("worst relative error " << worst);
}

TEST_CASE("input-embedding gradient matches finite differences") {
    const ToyLmConfig cfg = test::tiny_config();
    const ModelWeights w = ModelWeights::random_init(cfg);
    std::mt19937_64 rng(12);
    WeightMatrix emb = test::random_matrix(4, cfg.d_model, rng, 0.5);
    const int32_t target = 6;
    auto loss_of = [&](const WeightMatrix & e, WeightMatrix * dl) {
        const ForwardTrace t = forward_traced_embeddings(w, cfg, e);
        Eigen::RowVectorXd g(t.logits.cols());
        const double loss = softmax_xent(t.logits.row(3), target, g);
        if (dl != nullptr) {
            dl->setZero(t.logits.rows(), t.logits.cols());
            dl->row(3) = g;
        }
        return loss;
    };
    WeightMatrix dl;
    loss_of(emb, &dl);
    const ForwardTrace t = forward_traced_embeddings(w, cfg, emb);
    ModelWeights grads = ModelWeights::zeros(cfg);
    GradMask mask;
    mask.embeddings = false;
    mask.unembedding = false;
    mask.layers = std::vector<bool>(cfg.n_layers, false);
    mask.input = true;
    const BackwardResult r = backward(w, cfg, t, {}, dl, {}, mask, grads);
    for (Eigen::Index i = 0; i < emb.size(); ++i) {
        const double h = 1e-6, o = emb.data()[i];
        emb.data()[i] = o + h;
        const double lp = loss_of(emb, nullptr);
        emb.data()[i] = o - h;
        const double lm = loss_of(emb, nullptr);
        emb.data()[i] = o;
        const double numeric = (lp - lm) / (2 * h);
        CHECK(std::abs(numeric - r.d_input.data()[i]) <= 1e-3 * std::max(std::abs(numeric), 1e-6));
    }
}
