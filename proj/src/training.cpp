#include "edtf/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace edtf {

void TrainingConfig::validate() const {
    if (!(learning_rate > 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "learning_rate must be > 0");
    }
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
        throw Error(ErrorCode::InvalidConfig, "betas must lie in [0, 1)");
    }
    if (patience < 1 || batch_size < 1 || max_epochs < 1) {
        throw Error(ErrorCode::InvalidConfig, "patience, batch_size and max_epochs must be >= 1");
    }
}

AdamW::AdamW(const TrainingConfig & cfg, std::vector<WeightMatrix *> params)
    : lr_(cfg.learning_rate), beta1_(cfg.beta1), beta2_(cfg.beta2), weight_decay_(cfg.weight_decay),
      params_(std::move(params)) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const WeightMatrix * p : params_) {
        m_.push_back(WeightMatrix::Zero(p->rows(), p->cols()));
        v_.push_back(WeightMatrix::Zero(p->rows(), p->cols()));
    }
}

void AdamW::step(std::span<const WeightMatrix * const> grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        WeightMatrix & p = *params_[i];
        const WeightMatrix & g = *grads[i];
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
        if (weight_decay_ != 0.0) {
            p *= 1.0 - lr_ * weight_decay_;
        }
        p.array() -= lr_ * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
    }
}

double fact_recall(const ModelWeights & w, const ToyLmConfig & cfg, std::span<const TokenSequence> corpus) {
    if (corpus.empty()) {
        return 0.0;
    }
    constexpr std::size_t kChunk = 256;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < corpus.size(); start += kChunk) {
        const std::size_t end = std::min(corpus.size(), start + kChunk);
        std::vector<TokenSequence> prompts;
        for (std::size_t i = start; i < end; ++i) {
            prompts.emplace_back(corpus[i].begin(), corpus[i].end() - 1);
        }
        const ForwardTrace tr = forward_traced_batch(w, cfg, prompts);
        for (std::size_t i = start; i < end; ++i) {
            const auto row = static_cast<Eigen::Index>(tr.last_row(i - start));
            if (argmax_token(tr.logits.row(row)) == corpus[i].back()) {
                ++hits;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(corpus.size());
}

PretrainResult pretrain(const ToyLmConfig & cfg, std::span<const TokenSequence> corpus, const PretrainConfig & pc) {
    cfg.validate();
    pc.optimizer.validate();
    if (corpus.empty()) {
        throw Error(ErrorCode::InsufficientData, "pretraining corpus is empty");
    }
    for (const auto & seq : corpus) {
        if (seq.size() < 2) {
            throw Error(ErrorCode::InsufficientData, "corpus sequences need a prompt and an answer token");
        }
        validate_sequence(cfg, seq);
    }

    PretrainResult res;
    res.weights = ModelWeights::random_init(cfg);
    std::vector<WeightMatrix *> params;
    res.weights.for_each([&](const std::string &, WeightMatrix & m) { params.push_back(&m); });
    AdamW opt(pc.optimizer, params);

    ModelWeights grads = ModelWeights::zeros(cfg);
    std::vector<const WeightMatrix *> grad_ptrs;
    grads.for_each([&](const std::string &, const WeightMatrix & m) { grad_ptrs.push_back(&m); });

    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(pc.optimizer.seed);
    const GradMask mask;
    const std::size_t bs = pc.optimizer.batch_size;

    std::size_t extra_left = pc.extra_epochs;
    for (std::size_t epoch = 0; epoch < pc.optimizer.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t end = std::min(order.size(), start + bs);
            grads.for_each([](const std::string &, WeightMatrix & m) { m.setZero(); });
            std::vector<TokenSequence> prompts;
            TokenSequence flat;
            for (std::size_t b = start; b < end; ++b) {
                const TokenSequence & seq = corpus[order[b]];
                prompts.emplace_back(seq.begin(), seq.end() - 1);
                flat.insert(flat.end(), seq.begin(), seq.end() - 1);
            }
            const ForwardTrace tr = forward_traced_batch(res.weights, cfg, prompts);
            WeightMatrix dlogits = WeightMatrix::Zero(tr.logits.rows(), tr.logits.cols());
            for (std::size_t b = start; b < end; ++b) {
                const auto row = static_cast<Eigen::Index>(tr.last_row(b - start));
                epoch_loss += softmax_xent(tr.logits.row(row), corpus[order[b]].back(), dlogits.row(row));
            }
            backward(res.weights, cfg, tr, flat, dlogits, {}, mask, grads);
            const double inv = 1.0 / static_cast<double>(end - start);
            grads.for_each([inv](const std::string &, WeightMatrix & m) { m *= inv; });
            opt.step(grad_ptrs);
        }
        epoch_loss /= static_cast<double>(order.size());
        if (!std::isfinite(epoch_loss)) {
            throw Error(ErrorCode::NonFiniteLoss, "pretraining loss diverged at epoch " + std::to_string(epoch));
        }
        res.epoch_loss.push_back(epoch_loss);
        res.epochs = epoch + 1;
        res.recall = fact_recall(res.weights, cfg, corpus);
        res.epoch_recall.push_back(res.recall);
        if (res.recall >= pc.recall_target) {
            res.converged = true;
            if (extra_left == 0) {
                break;
            }
            --extra_left;
        }
    }
    res.converged = res.recall >= pc.recall_target;
    return res;
}

} // namespace edtf
