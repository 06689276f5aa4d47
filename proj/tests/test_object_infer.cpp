#include "edtf/object_infer.hpp"
#include "helpers.hpp"

#include <doctest.h>

using namespace edtf;

namespace {

std::vector<EditedSnapshot> some_snapshots(std::size_t count) {
    const auto & s = test::small_world();
    std::vector<TokenSequence> prompts;
    for (const auto & f : s.corpus.facts) {
        prompts.push_back(s.corpus.prompt_tokens(f));
    }
    const WeightMatrix C = estimate_key_covariance(s.weights, s.cfg, prompts, 1);
    std::vector<EditedSnapshot> out;
    for (std::size_t i = 0; out.size() < count && i < s.corpus.facts.size(); ++i) {
        EditedSnapshot snap = apply_edit(s.weights, s.cfg, make_edit_record(s.corpus.facts[i], s.corpus), 1, C);
        if (snap.success) {
            snap.id = i;
            out.push_back(std::move(snap));
        }
    }
    return out;
}

} // namespace

TEST_CASE("inference setup validation") {
    const auto & s = test::small_world();
    const InferenceSetup a = InferenceSetup::create(s.cfg, 1, 1, 9);
    CHECK(a.fixed_embeddings.rows() == 5);
    CHECK(a.fixed_embeddings.cols() == static_cast<Eigen::Index>(s.cfg.d_model));
    CHECK(InferenceSetup::create(s.cfg, 1, 1, 9).fixed_embeddings == a.fixed_embeddings);
    CHECK_THROWS_AS(InferenceSetup::create(s.cfg, 3, 1, 9), Error);
    CHECK_THROWS_AS(InferenceSetup::create(s.cfg, 0, 1, 9, 0), Error);
    CHECK_THROWS_AS(InferenceSetup::create(s.cfg, 0, 1, 9, s.cfg.max_seq_len + 1), Error);
}

TEST_CASE("decoder memorizes a single snapshot without touching frozen weights") {
    const auto & s = test::small_world();
    const auto snaps = some_snapshots(1);
    REQUIRE(snaps.size() == 1);
    TrainingConfig tc;
    tc.learning_rate = 1e-2;
    tc.weight_decay = 0.0;
    tc.max_epochs = 300;
    tc.patience = 300;
    tc.batch_size = 1;
    const InferenceSetup setup = InferenceSetup::create(s.cfg, 1, 1, 3);
    const TrainedDecoder d = train_decoder(s.weights, s.cfg, setup, tc, snaps, snaps);
    CHECK(decoder_accuracy(d, s.cfg, snaps) == 1.0);
    CHECK(d.freeze_audit_passed());
    CHECK(d.history.back().val_loss < d.history.front().val_loss);

    // independent freeze check: only the trained layer's attention and mlp_in moved
    const auto & before = s.weights;
    const auto & after = d.weights;
    CHECK(after.token_embeddings == before.token_embeddings);
    CHECK(after.unembedding == before.unembedding);
    CHECK(after.layers[0].wq == before.layers[0].wq);
    CHECK(after.layers[2].mlp_in == before.layers[2].mlp_in);
    CHECK(after.layers[1].mlp_out == before.layers[1].mlp_out);
    CHECK(after.layers[1].mlp_in != before.layers[1].mlp_in);
    CHECK(d.setup.fixed_embeddings != setup.fixed_embeddings);

    const Eigen::RowVectorXd p = decode_distribution(d.weights, s.cfg, d.setup, snaps[0].edited_matrix);
    CHECK(p.sum() == doctest::Approx(1.0));
    Eigen::Index best;
    p.maxCoeff(&best);
    CHECK(best == snaps[0].edit.target_token);
}

TEST_CASE("decoder trains mlp_out when the trained layer is not the edit layer") {
    const auto & s = test::small_world();
    const auto snaps = some_snapshots(2);
    TrainingConfig tc;
    tc.learning_rate = 1e-2;
    tc.max_epochs = 3;
    const InferenceSetup setup = InferenceSetup::create(s.cfg, 2, 1, 3);
    const TrainedDecoder d = train_decoder(s.weights, s.cfg, setup, tc, snaps, snaps);
    CHECK(d.freeze_audit_passed());
    CHECK(d.weights.layers[2].mlp_out != s.weights.layers[2].mlp_out);
    CHECK(d.weights.layers[1].mlp_out == s.weights.layers[1].mlp_out);
    CHECK(d.epochs_run() <= 3);
}

TEST_CASE("decoder evaluation and layer sweep") {
    const auto & s = test::small_world();
    const auto snaps = some_snapshots(8);
    REQUIRE(snaps.size() == 8);
    TrainingConfig tc;
    tc.learning_rate = 5e-3;
    tc.max_epochs = 2;
    ObjectInferenceData data;
    data.train.assign(snaps.begin(), snaps.begin() + 4);
    data.val.assign(snaps.begin() + 4, snaps.begin() + 5);
    data.test.assign(snaps.begin() + 5, snaps.begin() + 7);
    data.ood.assign(snaps.begin() + 7, snaps.end());
    const auto sweep = layer_sweep(s.weights, s.cfg, 1, data, tc, 11);
    REQUIRE(sweep.size() == s.cfg.n_layers);
    for (std::size_t l = 0; l < sweep.size(); ++l) {
        CHECK(sweep[l].trained_layer == l);
        CHECK(sweep[l].freeze_audit_passed);
        CHECK(sweep[l].id_accuracy >= 0.0);
        CHECK(sweep[l].ood_accuracy <= 1.0);
    }
    const InferenceSetup setup = InferenceSetup::create(s.cfg, 1, 1, 3);
    const TrainedDecoder d = train_decoder(s.weights, s.cfg, setup, tc, data.train, data.val);
    CHECK_THROWS_AS(evaluate_decoder(d, s.cfg, {}, data.ood), Error);
    CHECK_THROWS_AS(train_decoder(s.weights, s.cfg, setup, tc, {}, data.val), Error);
    CHECK(decoder_loss(d, s.cfg, data.train) > 0.0);
}
