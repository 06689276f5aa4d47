#pragma once

#include "edtf/editor.hpp"
#include "edtf/training.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace edtf {

// A fixed learned input (m x d) fed to the model in place of token embeddings.
struct InferenceSetup {
    std::size_t n_fixed = 5;
    WeightMatrix fixed_embeddings;
    std::size_t trained_layer = 0;
    std::size_t edit_layer = 1;

    static InferenceSetup create(const ToyLmConfig & cfg, std::size_t trained_layer, std::size_t edit_layer,
                                 uint64_t seed, std::size_t n_fixed = 5, double init_std = 0.02);
};

// Next-token distribution at the last fixed position with the edited matrix substituted.
Eigen::RowVectorXd decode_distribution(const ModelWeights & w, const ToyLmConfig & cfg,
                                       const InferenceSetup & setup, const WeightMatrix & edited);

struct DecoderEpoch {
    double train_loss = 0.0;
    double val_loss = 0.0;
    bool frozen_unchanged = true; // parameters outside the trained layer untouched
};

struct TrainedDecoder {
    ModelWeights weights;
    InferenceSetup setup;
    std::vector<DecoderEpoch> history;
    std::size_t best_epoch = 0;

    bool freeze_audit_passed() const;
    std::size_t epochs_run() const { return history.size(); }
};

// Trains the fixed embeddings and the trained layer (without its mlp_out when it is
// the edit layer) so the decoded token is each snapshot's target. Early stopping on
// validation loss; the best-validation parameters are returned.
TrainedDecoder train_decoder(const ModelWeights & w, const ToyLmConfig & cfg, const InferenceSetup & setup,
                             const TrainingConfig & tc, std::span<const EditedSnapshot> train,
                             std::span<const EditedSnapshot> val);

double decoder_loss(const TrainedDecoder & d, const ToyLmConfig & cfg, std::span<const EditedSnapshot> data);
double decoder_accuracy(const TrainedDecoder & d, const ToyLmConfig & cfg, std::span<const EditedSnapshot> data);

struct ObjectInferenceResult {
    std::size_t trained_layer = 0;
    double id_accuracy = 0.0;
    double ood_accuracy = 0.0;
    std::size_t epochs_run = 0;
    bool freeze_audit_passed = true;
};

ObjectInferenceResult evaluate_decoder(const TrainedDecoder & d, const ToyLmConfig & cfg,
                                       std::span<const EditedSnapshot> test, std::span<const EditedSnapshot> ood);

struct ObjectInferenceData {
    std::vector<EditedSnapshot> train, val, test, ood;
};

// One decoder per trained layer 0..n_layers-1.
std::vector<ObjectInferenceResult> layer_sweep(const ModelWeights & w, const ToyLmConfig & cfg,
                                               std::size_t edit_layer, const ObjectInferenceData & data,
                                               const TrainingConfig & tc, uint64_t seed);

} // namespace edtf
