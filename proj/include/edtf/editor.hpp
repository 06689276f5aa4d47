#pragma once

#include "edtf/corpus.hpp"
#include "edtf/toy_lm.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace edtf {

struct EditRecord {
    std::string subject;
    std::string relation_id;
    std::string true_object;
    std::string new_object;
    std::string prompt_template;
    TokenSequence prompt;                           // rendered and tokenized
    std::pair<std::size_t, std::size_t> subject_token_span{0, 0}; // inclusive positions in prompt
    int32_t target_token = -1;                      // first token of new_object
    int32_t true_token = -1;

    std::size_t last_subject_position() const { return subject_token_span.second; }
    void validate() const;
};

EditRecord make_edit_record(const FactRecord & fact, const SyntheticCorpus & corpus);

// W_N = scale * u v^T; u has one entry per hidden unit (row of W_V).
struct RankOneUpdate {
    Vector u;
    Vector v;
    double scale = 1.0;

    WeightMatrix materialize() const;
};

struct EditedSnapshot {
    std::size_t id = 0;
    ToyLmConfig model_config;
    std::size_t layer = 0;
    std::string original_matrix_hash;
    WeightMatrix edited_matrix;
    RankOneUpdate update;
    EditRecord edit;
    uint64_t seed = 0;
    bool success = false;
    std::size_t optimization_steps = 0;
    double target_probability = 0.0;  // p(target) with v* substituted
};

// Hex SHA-256 of the matrix's row-major little-endian f64 bytes.
std::string matrix_hash(const WeightMatrix & m);

// Uncentered second moment of MLP keys over every position of every prompt,
// plus lambda * I. lambda < 0 selects the default 1e-4 * trace / e.
WeightMatrix estimate_key_covariance(const ModelWeights & w, const ToyLmConfig & cfg,
                                     std::span<const TokenSequence> prompts, std::size_t layer,
                                     double lambda = -1.0);

struct ValueOptimizationConfig {
    double learning_rate = 0.1;
    std::size_t max_steps = 300;
    // Keep optimizing until p(target) reaches this value (argmax alone is not enough).
    double target_probability = 0.9;
};

struct ValueVectorResult {
    Vector value;
    std::size_t steps = 0;
    double target_probability = 0.0;
    bool target_is_argmax = false;
};

// Optimizes the MLP output at (layer, last subject token) so the prompt's next
// token becomes edit.target_token. Throws OptimizationFailed if the target is not
// the argmax after max_steps.
ValueVectorResult compute_value_vector(const ModelWeights & w, const ToyLmConfig & cfg, const EditRecord & edit,
                                       std::size_t layer, const ValueOptimizationConfig & opt = {});

struct EditConfig {
    ValueOptimizationConfig value;
    uint64_t seed = 0;
};

// Closed-form rank-one key/value update of layer's mlp_out. Failed value
// optimization yields success = false and an unchanged (zero-update) snapshot.
EditedSnapshot apply_edit(const ModelWeights & w, const ToyLmConfig & cfg, const EditRecord & edit,
                          std::size_t layer, const WeightMatrix & covariance, const EditConfig & ec = {});

// Every edit starts from the original weights. Items are independent.
std::vector<EditedSnapshot> batch_edit(const ModelWeights & w, const ToyLmConfig & cfg,
                                       std::span<const EditRecord> edits, std::size_t layer,
                                       const WeightMatrix & covariance, const EditConfig & ec = {});

// Model weights with the snapshot's edited matrix in place.
ModelWeights with_edited_matrix(const ModelWeights & w, const EditedSnapshot & s);

// Runs fn(i) for i in [0, n) over hardware threads; each i must touch only its own output.
void parallel_for(std::size_t n, const std::function<void(std::size_t)> & fn);

} // namespace edtf
