#include "edtf/object_infer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

namespace edtf {

InferenceSetup InferenceSetup::create(const ToyLmConfig & cfg, std::size_t trained_layer, std::size_t edit_layer,
                                      uint64_t seed, std::size_t n_fixed, double init_std) {
    cfg.validate();
    if (trained_layer >= cfg.n_layers || edit_layer >= cfg.n_layers) {
        throw Error(ErrorCode::IndexOutOfRange, "inference layer out of range");
    }
    if (n_fixed < 1 || n_fixed > cfg.max_seq_len) {
        throw Error(ErrorCode::InvalidConfig, "fixed input length out of range");
    }
    InferenceSetup s;
    s.n_fixed = n_fixed;
    s.trained_layer = trained_layer;
    s.edit_layer = edit_layer;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, init_std);
    s.fixed_embeddings = WeightMatrix(static_cast<Eigen::Index>(n_fixed), static_cast<Eigen::Index>(cfg.d_model));
    for (Eigen::Index i = 0; i < s.fixed_embeddings.size(); ++i) {
        s.fixed_embeddings.data()[i] = nd(rng);
    }
    return s;
}

Eigen::RowVectorXd decode_distribution(const ModelWeights & w, const ToyLmConfig & cfg,
                                       const InferenceSetup & setup, const WeightMatrix & edited) {
    Intervention iv;
    iv.mlp_out = &edited;
    iv.mlp_out_layer = setup.edit_layer;
    const ForwardTrace tr = forward_traced_embeddings(w, cfg, setup.fixed_embeddings, iv);
    return softmax(tr.logits.row(tr.logits.rows() - 1));
}

bool TrainedDecoder::freeze_audit_passed() const {
    return std::all_of(history.begin(), history.end(), [](const DecoderEpoch & e) { return e.frozen_unchanged; });
}

namespace {

std::vector<WeightMatrix *> trainable(ModelWeights & w, InferenceSetup & s) {
    LayerWeights & l = w.layers[s.trained_layer];
    std::vector<WeightMatrix *> p{&s.fixed_embeddings, &l.wq, &l.wk, &l.wv, &l.wo, &l.mlp_in};
    // The edit layer's W_V is replaced by each snapshot, so it never reaches the loss.
    if (s.trained_layer != s.edit_layer) {
        p.push_back(&l.mlp_out);
    }
    return p;
}

// Mean loss over a packed batch; fills gradients when grads is non-null.
double batch_loss(const ModelWeights & w, const ToyLmConfig & cfg, const InferenceSetup & setup,
                  std::span<const EditedSnapshot> batch, ModelWeights * grads, WeightMatrix * d_fixed) {
    const auto m = static_cast<Eigen::Index>(setup.n_fixed);
    const auto n = static_cast<Eigen::Index>(batch.size());
    WeightMatrix input(m * n, setup.fixed_embeddings.cols());
    std::vector<std::size_t> lengths(batch.size(), setup.n_fixed);
    Intervention iv;
    iv.mlp_out_layer = setup.edit_layer;
    for (Eigen::Index i = 0; i < n; ++i) {
        input.middleRows(i * m, m) = setup.fixed_embeddings;
        iv.segment_mlp_out.push_back(&batch[static_cast<std::size_t>(i)].edited_matrix);
    }
    const ForwardTrace tr = forward_traced_embeddings(w, cfg, input, iv, lengths);
    WeightMatrix dlogits = WeightMatrix::Zero(tr.logits.rows(), tr.logits.cols());
    double loss = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(tr.last_row(i));
        loss += softmax_xent(tr.logits.row(r), batch[i].edit.target_token, dlogits.row(r));
    }
    loss /= static_cast<double>(batch.size());
    if (!std::isfinite(loss)) {
        throw Error(ErrorCode::NonFiniteLoss, "decoder loss is not finite");
    }
    if (grads != nullptr) {
        dlogits /= static_cast<double>(batch.size());
        GradMask mask;
        mask.embeddings = false;
        mask.unembedding = false;
        mask.layers.assign(cfg.n_layers, false);
        mask.layers[setup.trained_layer] = true;
        mask.input = true;
        const BackwardResult br = backward(w, cfg, tr, {}, dlogits, iv, mask, *grads);
        d_fixed->setZero();
        for (Eigen::Index i = 0; i < n; ++i) {
            *d_fixed += br.d_input.middleRows(i * m, m);
        }
    }
    return loss;
}

double mean_loss(const ModelWeights & w, const ToyLmConfig & cfg, const InferenceSetup & setup,
                 std::span<const EditedSnapshot> data) {
    constexpr std::size_t kChunk = 128;
    double total = 0.0;
    for (std::size_t s = 0; s < data.size(); s += kChunk) {
        const auto part = data.subspan(s, std::min(kChunk, data.size() - s));
        total += batch_loss(w, cfg, setup, part, nullptr, nullptr) * static_cast<double>(part.size());
    }
    return total / static_cast<double>(data.size());
}

std::vector<std::string> frozen_hashes(const ModelWeights & w, const InferenceSetup & s) {
    std::vector<std::string> out;
    w.for_each([&](const std::string & name, const WeightMatrix & m) {
        const std::string prefix = "layer" + std::to_string(s.trained_layer) + ".";
        const bool trained = name.rfind(prefix, 0) == 0 &&
                             (name != prefix + "mlp_out" || s.trained_layer != s.edit_layer);
        if (!trained) {
            out.push_back(matrix_hash(m));
        }
    });
    return out;
}

} // namespace

TrainedDecoder train_decoder(const ModelWeights & w, const ToyLmConfig & cfg, const InferenceSetup & setup,
                             const TrainingConfig & tc, std::span<const EditedSnapshot> train,
                             std::span<const EditedSnapshot> val) {
    tc.validate();
    if (train.empty() || val.empty()) {
        throw Error(ErrorCode::EmptySplit, "decoder training needs train and validation data");
    }
    TrainedDecoder d;
    d.weights = w;
    d.setup = setup;
    const std::vector<std::string> frozen = frozen_hashes(w, setup);

    ModelWeights grads = ModelWeights::zeros(cfg);
    WeightMatrix d_fixed = WeightMatrix::Zero(setup.fixed_embeddings.rows(), setup.fixed_embeddings.cols());
    std::vector<WeightMatrix *> params = trainable(d.weights, d.setup);
    std::vector<const WeightMatrix *> grad_list{&d_fixed};
    {
        LayerWeights & g = grads.layers[setup.trained_layer];
        for (WeightMatrix * p : {&g.wq, &g.wk, &g.wv, &g.wo, &g.mlp_in}) {
            grad_list.push_back(p);
        }
        if (setup.trained_layer != setup.edit_layer) {
            grad_list.push_back(&g.mlp_out);
        }
    }
    AdamW opt(tc, params);

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(tc.seed);
    double best = std::numeric_limits<double>::infinity();
    ModelWeights best_weights = d.weights;
    InferenceSetup best_setup = d.setup;
    std::size_t since_best = 0;
    std::vector<EditedSnapshot> batch;
    for (std::size_t epoch = 0; epoch < tc.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        DecoderEpoch rec;
        for (std::size_t s = 0; s < order.size(); s += tc.batch_size) {
            const std::size_t e = std::min(order.size(), s + tc.batch_size);
            batch.clear();
            for (std::size_t i = s; i < e; ++i) {
                batch.push_back(train[order[i]]);
            }
            LayerWeights & g = grads.layers[setup.trained_layer];
            for (WeightMatrix * p : {&g.wq, &g.wk, &g.wv, &g.wo, &g.mlp_in, &g.mlp_out}) {
                p->setZero();
            }
            rec.train_loss += batch_loss(d.weights, cfg, d.setup, batch, &grads, &d_fixed) *
                              static_cast<double>(batch.size());
            opt.step(grad_list);
        }
        rec.train_loss /= static_cast<double>(train.size());
        rec.val_loss = mean_loss(d.weights, cfg, d.setup, val);
        rec.frozen_unchanged = frozen_hashes(d.weights, d.setup) == frozen;
        d.history.push_back(rec);
        if (rec.val_loss < best) {
            best = rec.val_loss;
            best_weights = d.weights;
            best_setup = d.setup;
            d.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= tc.patience) {
            break;
        }
    }
    d.weights = std::move(best_weights);
    d.setup = std::move(best_setup);
    return d;
}

double decoder_loss(const TrainedDecoder & d, const ToyLmConfig & cfg, std::span<const EditedSnapshot> data) {
    if (data.empty()) {
        throw Error(ErrorCode::EmptySplit, "decoder_loss on empty data");
    }
    return mean_loss(d.weights, cfg, d.setup, data);
}

double decoder_accuracy(const TrainedDecoder & d, const ToyLmConfig & cfg, std::span<const EditedSnapshot> data) {
    if (data.empty()) {
        throw Error(ErrorCode::EmptySplit, "decoder_accuracy on empty data");
    }
    std::size_t hit = 0;
    for (const auto & s : data) {
        hit += argmax_token(decode_distribution(d.weights, cfg, d.setup, s.edited_matrix)) == s.edit.target_token;
    }
    return static_cast<double>(hit) / static_cast<double>(data.size());
}

ObjectInferenceResult evaluate_decoder(const TrainedDecoder & d, const ToyLmConfig & cfg,
                                       std::span<const EditedSnapshot> test, std::span<const EditedSnapshot> ood) {
    if (test.empty() || ood.empty()) {
        throw Error(ErrorCode::EmptySplit, "object inference needs test and OOD data");
    }
    ObjectInferenceResult r;
    r.trained_layer = d.setup.trained_layer;
    r.id_accuracy = decoder_accuracy(d, cfg, test);
    r.ood_accuracy = decoder_accuracy(d, cfg, ood);
    r.epochs_run = d.epochs_run();
    r.freeze_audit_passed = d.freeze_audit_passed();
    return r;
}

std::vector<ObjectInferenceResult> layer_sweep(const ModelWeights & w, const ToyLmConfig & cfg,
                                               std::size_t edit_layer, const ObjectInferenceData & data,
                                               const TrainingConfig & tc, uint64_t seed) {
    std::vector<ObjectInferenceResult> out;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const InferenceSetup setup = InferenceSetup::create(cfg, l, edit_layer, derive_seed(seed, 2 * l));
        TrainingConfig t = tc;
        t.seed = derive_seed(seed, 2 * l + 1);
        const TrainedDecoder d = train_decoder(w, cfg, setup, t, data.train, data.val);
        out.push_back(evaluate_decoder(d, cfg, data.test, data.ood));
    }
    return out;
}

} // namespace edtf
