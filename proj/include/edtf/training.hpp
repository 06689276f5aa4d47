#pragma once

#include "edtf/toy_lm.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace edtf {

struct TrainingConfig {
    double learning_rate = 2e-5;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double weight_decay = 0.01;
    std::size_t max_epochs = 100;
    std::size_t patience = 3;
    std::size_t batch_size = 16;
    uint64_t seed = 0;

    void validate() const;
};

// AdamW over a fixed list of parameter matrices.
class AdamW {
public:
    AdamW(const TrainingConfig & cfg, std::vector<WeightMatrix *> params);

    // grads[i] pairs with params[i]; grads are already averaged over the batch.
    void step(std::span<const WeightMatrix * const> grads);

private:
    double lr_, beta1_, beta2_, weight_decay_;
    double eps_ = 1e-8;
    std::size_t t_ = 0;
    std::vector<WeightMatrix *> params_;
    std::vector<WeightMatrix> m_, v_;
};

struct PretrainConfig {
    TrainingConfig optimizer{1e-3, 0.9, 0.98, 0.0, 400, 3, 32, 17};
    double recall_target = 0.99;
    // Additional epochs run after recall_target is first met.
    std::size_t extra_epochs = 0;
};

struct PretrainResult {
    ModelWeights weights;
    double recall = 0.0;
    std::size_t epochs = 0;
    bool converged = false;
    std::vector<double> epoch_loss;
    std::vector<double> epoch_recall;
};

// Fact recall: fraction of sequences whose final token is the greedy next token
// of the preceding prefix.
double fact_recall(const ModelWeights & w, const ToyLmConfig & cfg, std::span<const TokenSequence> corpus);

// Trains on the final-token cross-entropy of each corpus sequence
// (prompt tokens followed by the answer token).
PretrainResult pretrain(const ToyLmConfig & cfg, std::span<const TokenSequence> corpus, const PretrainConfig & pc);

} // namespace edtf
