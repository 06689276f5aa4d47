#pragma once

#include "edtf/common.hpp"

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace edtf {

struct ToyLmConfig {
    std::size_t vocab_size = 512;
    std::size_t d_model = 64;
    std::size_t d_hidden = 256;
    std::size_t n_layers = 4;
    std::size_t n_heads = 4;
    std::size_t max_seq_len = 32;
    std::string nonlinearity = "gelu";
    uint64_t seed = 17;

    std::size_t head_dim() const { return d_model / n_heads; }
    void validate() const;
    bool operator==(const ToyLmConfig &) const = default;
};

// Attention projections use the row-vector convention (X * W, all d x d).
// mlp_in is W_K (e x d, hidden = gelu(W_K x)); mlp_out is W_V (e x d, output =
// W_V^T hidden), so rows of mlp_out are indexed by hidden units.
struct LayerWeights {
    WeightMatrix wq, wk, wv, wo;
    WeightMatrix mlp_in;
    WeightMatrix mlp_out;
};

struct ModelWeights {
    WeightMatrix token_embeddings;      // vocab x d
    WeightMatrix positional_embeddings; // max_seq_len x d
    std::vector<LayerWeights> layers;
    WeightMatrix unembedding;           // d x vocab

    static ModelWeights zeros(const ToyLmConfig & cfg);
    static ModelWeights random_init(const ToyLmConfig & cfg);

    // Visits every matrix with a stable name ("layer1.mlp_out", ...), in a fixed order.
    void for_each(const std::function<void(const std::string &, WeightMatrix &)> & fn);
    void for_each(const std::function<void(const std::string &, const WeightMatrix &)> & fn) const;

    void check_shapes(const ToyLmConfig & cfg) const;
    bool operator==(const ModelWeights & other) const;
};

using TokenSequence = std::vector<int32_t>;

// Optional interventions applied during a forward pass.
struct Intervention {
    // Replace W_V of `mlp_out_layer` with this matrix (not owned).
    const WeightMatrix * mlp_out = nullptr;
    // Per-segment replacement for packed batches; takes precedence over mlp_out.
    std::vector<const WeightMatrix *> segment_mlp_out;
    std::size_t mlp_out_layer = 0;

    // Replace the MLP output vector m at (layer, row). For a single sequence the
    // row is the token position.
    std::optional<Vector> mlp_output;
    std::size_t mlp_output_layer = 0;
    std::size_t mlp_output_position = 0;

    bool substitutes(std::size_t layer) const {
        return mlp_out_layer == layer && (mlp_out != nullptr || !segment_mlp_out.empty());
    }
};

struct LayerTrace {
    WeightMatrix h_in;                 // T x d
    WeightMatrix q, k, v;              // T x d
    std::vector<WeightMatrix> probs;   // per segment and head, T x T (lower triangular)
    WeightMatrix heads;                // T x d, concatenated head outputs
    WeightMatrix attn;                 // a, T x d
    WeightMatrix mlp_input;            // a + h_in
    WeightMatrix pre;                  // T x e
    WeightMatrix key;                  // gelu(pre), T x e
    WeightMatrix mlp;                  // m, T x d
};

// Rows of every matrix are the tokens of all segments stacked in order.
struct ForwardTrace {
    std::vector<std::size_t> lengths;  // tokens per segment
    std::vector<std::size_t> offsets;  // first row of each segment
    std::vector<LayerTrace> layers;    // probs indexed [segment * n_heads + head]
    WeightMatrix h_final;              // rows x d
    WeightMatrix logits;               // rows x vocab
    std::size_t length() const { return static_cast<std::size_t>(h_final.rows()); }
    std::size_t last_row(std::size_t segment) const { return offsets[segment] + lengths[segment] - 1; }
};

double gelu(double x);
double gelu_grad(double x);

void validate_sequence(const ToyLmConfig & cfg, std::span<const int32_t> x);

// Full traced forward from token ids.
ForwardTrace forward_traced(const ModelWeights & w, const ToyLmConfig & cfg, std::span<const int32_t> x,
                            const Intervention & iv = {});

// Packed forward over several sequences at once. Equivalent to running each
// sequence separately.
ForwardTrace forward_traced_batch(const ModelWeights & w, const ToyLmConfig & cfg,
                                  std::span<const TokenSequence> batch, const Intervention & iv = {});

// Forward from caller-supplied input embeddings; positional embeddings are still
// added. `lengths` splits the rows into segments (empty = one segment).
ForwardTrace forward_traced_embeddings(const ModelWeights & w, const ToyLmConfig & cfg,
                                       const WeightMatrix & input_embeddings, const Intervention & iv = {},
                                       std::span<const std::size_t> lengths = {});

// Per-position logits (T x vocab).
WeightMatrix forward(const ModelWeights & w, const ToyLmConfig & cfg, std::span<const int32_t> x,
                     const Intervention & iv = {});

// Argmax of final-position logits; ties go to the lowest id.
int32_t argmax_token(const Eigen::Ref<const Eigen::RowVectorXd> & logits);

int32_t next_token(const ModelWeights & w, const ToyLmConfig & cfg, std::span<const int32_t> x,
                   const Intervention & iv = {});

TokenSequence greedy_decode(const ModelWeights & w, const ToyLmConfig & cfg, std::span<const int32_t> prompt,
                            std::size_t n_tokens, const Intervention & iv = {});

// Post-GELU hidden vector (length e) at (layer, position).
Vector mlp_key_activation(const ModelWeights & w, const ToyLmConfig & cfg, std::span<const int32_t> x,
                          std::size_t layer, std::size_t position);

// Which parameter gradients to accumulate during backward.
struct GradMask {
    bool embeddings = true;   // token + positional
    bool unembedding = true;
    std::vector<bool> layers; // empty = all layers
    bool input = false;       // gradient w.r.t. input embeddings

    bool layer(std::size_t l) const { return layers.empty() || (l < layers.size() && layers[l]); }
};

struct BackwardResult {
    WeightMatrix d_input;              // rows x d when mask.input
    std::optional<Vector> d_mlp_output; // when the trace had an mlp_output intervention
};

// Backpropagates dlogits (rows x vocab) through a trace, accumulating into grads.
// Token ids (all segments concatenated) are needed for the embedding gradient;
// pass an empty span with input embeddings.
BackwardResult backward(const ModelWeights & w, const ToyLmConfig & cfg, const ForwardTrace & trace,
                        std::span<const int32_t> tokens, const WeightMatrix & dlogits, const Intervention & iv,
                        const GradMask & mask, ModelWeights & grads);

// Softmax cross-entropy of one logit row against a target; writes d loss / d logits.
double softmax_xent(const Eigen::Ref<const Eigen::RowVectorXd> & logits, int32_t target,
                    Eigen::Ref<Eigen::RowVectorXd> dlogits);

Eigen::RowVectorXd softmax(const Eigen::Ref<const Eigen::RowVectorXd> & logits);

} // namespace edtf
