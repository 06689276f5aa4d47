#include "edtf/editor.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <thread>

namespace edtf {

void EditRecord::validate() const {
    if (new_object == true_object) {
        throw Error(ErrorCode::RecordInvalid, "new object equals true object");
    }
    if (target_token == true_token) {
        throw Error(ErrorCode::RecordInvalid, "target token equals true token");
    }
    if (prompt.empty() || subject_token_span.first > subject_token_span.second ||
        subject_token_span.second >= prompt.size()) {
        throw Error(ErrorCode::RecordInvalid, "subject span outside the prompt");
    }
}

EditRecord make_edit_record(const FactRecord & fact, const SyntheticCorpus & corpus) {
    validate_fact(fact);
    EditRecord e;
    e.subject = fact.subject;
    e.relation_id = fact.relation_id;
    e.true_object = fact.true_object;
    e.new_object = fact.new_object;
    e.prompt_template = fact.prompt_template;
    e.prompt = corpus.prompt_tokens(fact);
    e.subject_token_span = corpus.subject_span(fact);
    e.target_token = corpus.vocab.encode(fact.new_object).front();
    e.true_token = corpus.vocab.encode(fact.true_object).front();
    e.validate();
    return e;
}

WeightMatrix RankOneUpdate::materialize() const {
    return scale * u * v.transpose();
}

std::string matrix_hash(const WeightMatrix & m) {
    static_assert(std::endian::native == std::endian::little, "matrix_hash assumes a little-endian host");
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX * ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    const uint64_t dims[2] = {static_cast<uint64_t>(m.rows()), static_cast<uint64_t>(m.cols())};
    EVP_DigestUpdate(ctx, dims, sizeof dims);
    EVP_DigestUpdate(ctx, m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    static const char * hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

WeightMatrix estimate_key_covariance(const ModelWeights & w, const ToyLmConfig & cfg,
                                     std::span<const TokenSequence> prompts, std::size_t layer, double lambda) {
    if (prompts.empty()) {
        throw Error(ErrorCode::InsufficientData, "covariance needs at least one prompt");
    }
    if (layer >= cfg.n_layers) {
        throw Error(ErrorCode::IndexOutOfRange, "covariance layer out of range");
    }
    const auto e = static_cast<Eigen::Index>(cfg.d_hidden);
    WeightMatrix C = WeightMatrix::Zero(e, e);
    std::size_t count = 0;
    constexpr std::size_t kChunk = 256;
    for (std::size_t start = 0; start < prompts.size(); start += kChunk) {
        const std::size_t end = std::min(prompts.size(), start + kChunk);
        const ForwardTrace tr = forward_traced_batch(w, cfg, prompts.subspan(start, end - start));
        const WeightMatrix & keys = tr.layers[layer].key;
        C.noalias() += keys.transpose() * keys;
        count += static_cast<std::size_t>(keys.rows());
    }
    C /= static_cast<double>(count);
    C = 0.5 * (C + C.transpose()).eval();
    if (lambda < 0.0) {
        lambda = 1e-4 * C.trace() / static_cast<double>(e);
    }
    C.diagonal().array() += lambda;
    return C;
}

ValueVectorResult compute_value_vector(const ModelWeights & w, const ToyLmConfig & cfg, const EditRecord & edit,
                                       std::size_t layer, const ValueOptimizationConfig & opt) {
    edit.validate();
    validate_sequence(cfg, edit.prompt);
    if (layer >= cfg.n_layers) {
        throw Error(ErrorCode::IndexOutOfRange, "edit layer out of range");
    }
    const std::size_t pos = edit.last_subject_position();
    const ForwardTrace base = forward_traced(w, cfg, edit.prompt);

    Intervention iv;
    iv.mlp_output = base.layers[layer].mlp.row(static_cast<Eigen::Index>(pos)).transpose();
    iv.mlp_output_layer = layer;
    iv.mlp_output_position = pos;

    GradMask mask;
    mask.embeddings = false;
    mask.unembedding = false;
    mask.layers.assign(cfg.n_layers, false);
    ModelWeights scratch = ModelWeights::zeros(cfg);

    const auto d = static_cast<Eigen::Index>(cfg.d_model);
    Vector m = Vector::Zero(d);
    Vector s = Vector::Zero(d);
    constexpr double b1 = 0.9;
    constexpr double b2 = 0.999;

    ValueVectorResult res;
    for (std::size_t step = 0;; ++step) {
        const ForwardTrace tr = forward_traced(w, cfg, edit.prompt, iv);
        const Eigen::Index last = tr.logits.rows() - 1;
        WeightMatrix dlogits = WeightMatrix::Zero(tr.logits.rows(), tr.logits.cols());
        const double loss = softmax_xent(tr.logits.row(last), edit.target_token, dlogits.row(last));
        if (!std::isfinite(loss)) {
            throw Error(ErrorCode::NonFiniteLoss, "value optimization diverged");
        }
        res.target_probability = std::exp(-loss);
        res.target_is_argmax = argmax_token(tr.logits.row(last)) == edit.target_token;
        res.steps = step;
        if ((res.target_is_argmax && res.target_probability >= opt.target_probability) || step >= opt.max_steps) {
            break;
        }
        const BackwardResult br = backward(w, cfg, tr, edit.prompt, dlogits, iv, mask, scratch);
        const Vector & g = *br.d_mlp_output;
        m = b1 * m + (1.0 - b1) * g;
        s = b2 * s + (1.0 - b2) * g.cwiseProduct(g);
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step + 1));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step + 1));
        iv.mlp_output->array() -= opt.learning_rate * (m.array() / bc1) / ((s.array() / bc2).sqrt() + 1e-8);
    }
    res.value = *iv.mlp_output;
    if (!res.target_is_argmax) {
        throw Error(ErrorCode::OptimizationFailed, "target token not reached after " + std::to_string(res.steps) +
                                                       " steps (p=" + std::to_string(res.target_probability) + ")");
    }
    return res;
}

EditedSnapshot apply_edit(const ModelWeights & w, const ToyLmConfig & cfg, const EditRecord & edit,
                          std::size_t layer, const WeightMatrix & covariance, const EditConfig & ec) {
    if (layer >= cfg.n_layers) {
        throw Error(ErrorCode::IndexOutOfRange, "edit layer out of range");
    }
    const WeightMatrix & W = w.layers[layer].mlp_out;
    const auto e = W.rows();
    if (covariance.rows() != e || covariance.cols() != e) {
        throw Error(ErrorCode::ShapeMismatch, "covariance must be e x e");
    }

    EditedSnapshot snap;
    snap.model_config = cfg;
    snap.layer = layer;
    snap.original_matrix_hash = matrix_hash(W);
    snap.edit = edit;
    snap.seed = ec.seed;
    snap.update.u = Vector::Zero(e);
    snap.update.v = Vector::Zero(W.cols());

    ValueVectorResult vv;
    try {
        vv = compute_value_vector(w, cfg, edit, layer, ec.value);
    } catch (const Error & err) {
        if (err.code() != ErrorCode::OptimizationFailed) {
            throw;
        }
        snap.edited_matrix = W;
        snap.success = false;
        return snap;
    }
    snap.optimization_steps = vv.steps;
    snap.target_probability = vv.target_probability;

    const Eigen::LLT<WeightMatrix> llt(covariance);
    if (llt.info() != Eigen::Success) {
        throw Error(ErrorCode::SingularCovariance, "key covariance is not positive definite");
    }
    const Vector k = mlp_key_activation(w, cfg, edit.prompt, layer, edit.last_subject_position());
    const Vector cinv_k = llt.solve(k);
    const double denom = k.dot(cinv_k);
    if (!(std::abs(denom) > 1e-300)) {
        throw Error(ErrorCode::SingularCovariance, "key has zero C^-1 norm");
    }
    snap.update.u = cinv_k / denom;
    // (W + u v^T)^T k = W^T k + v (u.k) = W^T k + v, so v is the residual to v*.
    snap.update.v = vv.value - W.transpose() * k;
    snap.update.scale = 1.0;
    snap.edited_matrix = W + snap.update.materialize();

    Intervention iv;
    iv.mlp_out = &snap.edited_matrix;
    iv.mlp_out_layer = layer;
    snap.success = next_token(w, cfg, edit.prompt, iv) == edit.target_token;
    return snap;
}

std::vector<EditedSnapshot> batch_edit(const ModelWeights & w, const ToyLmConfig & cfg,
                                       std::span<const EditRecord> edits, std::size_t layer,
                                       const WeightMatrix & covariance, const EditConfig & ec) {
    std::vector<EditedSnapshot> out(edits.size());
    parallel_for(edits.size(), [&](std::size_t i) {
        out[i] = apply_edit(w, cfg, edits[i], layer, covariance, ec);
        out[i].id = i;
    });
    return out;
}

ModelWeights with_edited_matrix(const ModelWeights & w, const EditedSnapshot & s) {
    ModelWeights out = w;
    out.layers.at(s.layer).mlp_out = s.edited_matrix;
    return out;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)> & fn) {
    const std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    const std::size_t n_threads = std::min(hw, n);
    if (n_threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::vector<std::exception_ptr> errors(n_threads);
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n; i += n_threads) {
                    fn(i);
                }
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    pool.clear();
    for (const auto & e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

} // namespace edtf
