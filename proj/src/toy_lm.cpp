#include "edtf/toy_lm.hpp"

#include <cmath>
#include <limits>
#include <random>

namespace edtf {

namespace {

constexpr double kSqrt2OverPi = 0.7978845608028654;
constexpr double kGeluCubic = 0.044715;

WeightMatrix normal_matrix(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64 & rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    WeightMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = dist(rng);
    }
    return m;
}

WeightMatrix zero_matrix(std::size_t rows, std::size_t cols) {
    return WeightMatrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void expect_shape(const WeightMatrix & m, std::size_t rows, std::size_t cols, const std::string & name) {
    if (static_cast<std::size_t>(m.rows()) != rows || static_cast<std::size_t>(m.cols()) != cols) {
        throw Error(ErrorCode::ShapeMismatch, name + " is " + std::to_string(m.rows()) + "x" +
                                                  std::to_string(m.cols()) + ", expected " +
                                                  std::to_string(rows) + "x" + std::to_string(cols));
    }
}

const WeightMatrix & segment_mlp_out(const ModelWeights & w, const Intervention & iv, std::size_t l,
                                     std::size_t segment) {
    if (iv.mlp_out_layer == l) {
        if (!iv.segment_mlp_out.empty()) {
            return *iv.segment_mlp_out[segment];
        }
        if (iv.mlp_out != nullptr) {
            return *iv.mlp_out;
        }
    }
    return w.layers[l].mlp_out;
}

std::vector<std::size_t> offsets_of(std::span<const std::size_t> lengths) {
    std::vector<std::size_t> off(lengths.size());
    std::size_t acc = 0;
    for (std::size_t i = 0; i < lengths.size(); ++i) {
        off[i] = acc;
        acc += lengths[i];
    }
    return off;
}

ForwardTrace run_layers(const ModelWeights & w, const ToyLmConfig & cfg, WeightMatrix h,
                        std::vector<std::size_t> lengths, const Intervention & iv) {
    const auto n_heads = static_cast<Eigen::Index>(cfg.n_heads);
    const auto hd = static_cast<Eigen::Index>(cfg.head_dim());
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const std::size_t n_seg = lengths.size();

    if (iv.mlp_out != nullptr || !iv.segment_mlp_out.empty()) {
        if (iv.mlp_out_layer >= cfg.n_layers) {
            throw Error(ErrorCode::IndexOutOfRange, "substituted layer out of range");
        }
        if (!iv.segment_mlp_out.empty() && iv.segment_mlp_out.size() != n_seg) {
            throw Error(ErrorCode::ShapeMismatch, "one substituted matrix is needed per segment");
        }
        if (iv.mlp_out != nullptr) {
            expect_shape(*iv.mlp_out, cfg.d_hidden, cfg.d_model, "substituted mlp_out");
        }
        for (const WeightMatrix * m : iv.segment_mlp_out) {
            expect_shape(*m, cfg.d_hidden, cfg.d_model, "substituted mlp_out");
        }
    }
    if (iv.mlp_output) {
        if (iv.mlp_output_layer >= cfg.n_layers || static_cast<Eigen::Index>(iv.mlp_output_position) >= h.rows()) {
            throw Error(ErrorCode::IndexOutOfRange, "MLP output override outside the sequence");
        }
        if (static_cast<std::size_t>(iv.mlp_output->size()) != cfg.d_model) {
            throw Error(ErrorCode::ShapeMismatch, "MLP output override has wrong length");
        }
    }

    ForwardTrace tr;
    tr.offsets = offsets_of(lengths);
    tr.lengths = std::move(lengths);
    tr.layers.resize(cfg.n_layers);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const LayerWeights & lw = w.layers[l];
        LayerTrace & lt = tr.layers[l];
        lt.h_in = h;
        lt.q.noalias() = h * lw.wq;
        lt.k.noalias() = h * lw.wk;
        lt.v.noalias() = h * lw.wv;
        lt.heads.resize(h.rows(), h.cols());
        lt.probs.resize(n_seg * cfg.n_heads);
        for (std::size_t sg = 0; sg < n_seg; ++sg) {
            const auto off = static_cast<Eigen::Index>(tr.offsets[sg]);
            const auto T = static_cast<Eigen::Index>(tr.lengths[sg]);
            for (Eigen::Index hh = 0; hh < n_heads; ++hh) {
                const auto q = lt.q.block(off, hh * hd, T, hd);
                const auto k = lt.k.block(off, hh * hd, T, hd);
                WeightMatrix & p = lt.probs[sg * cfg.n_heads + static_cast<std::size_t>(hh)];
                p.noalias() = (q * k.transpose()) * scale;
                for (Eigen::Index i = 0; i < T; ++i) {
                    const double mx = p.row(i).head(i + 1).maxCoeff();
                    double z = 0.0;
                    for (Eigen::Index j = 0; j <= i; ++j) {
                        p(i, j) = std::exp(p(i, j) - mx);
                        z += p(i, j);
                    }
                    p.row(i).head(i + 1) /= z;
                    p.row(i).tail(T - i - 1).setZero();
                }
                lt.heads.block(off, hh * hd, T, hd).noalias() = p * lt.v.block(off, hh * hd, T, hd);
            }
        }
        lt.attn.noalias() = lt.heads * lw.wo;
        lt.mlp_input = lt.attn + h;
        lt.pre.noalias() = lt.mlp_input * lw.mlp_in.transpose();
        lt.key = lt.pre.unaryExpr([](double x) { return gelu(x); });
        if (iv.mlp_out_layer == l && !iv.segment_mlp_out.empty()) {
            lt.mlp.resize(h.rows(), h.cols());
            for (std::size_t sg = 0; sg < n_seg; ++sg) {
                const auto off = static_cast<Eigen::Index>(tr.offsets[sg]);
                const auto T = static_cast<Eigen::Index>(tr.lengths[sg]);
                lt.mlp.middleRows(off, T).noalias() = lt.key.middleRows(off, T) * *iv.segment_mlp_out[sg];
            }
        } else {
            lt.mlp.noalias() = lt.key * segment_mlp_out(w, iv, l, 0);
        }
        if (iv.mlp_output && iv.mlp_output_layer == l) {
            lt.mlp.row(static_cast<Eigen::Index>(iv.mlp_output_position)) = iv.mlp_output->transpose();
        }
        h += lt.attn;
        h += lt.mlp;
    }
    tr.h_final = std::move(h);
    tr.logits.noalias() = tr.h_final * w.unembedding;
    return tr;
}

} // namespace

void ToyLmConfig::validate() const {
    if (vocab_size < 1 || d_model < 1 || d_hidden < 1 || n_layers < 1 || n_heads < 1 || max_seq_len < 1) {
        throw Error(ErrorCode::InvalidConfig, "all model dimensions must be >= 1");
    }
    if (d_model % n_heads != 0) {
        throw Error(ErrorCode::InvalidConfig, "d_model must be divisible by n_heads");
    }
    if (d_hidden < d_model) {
        throw Error(ErrorCode::InvalidConfig, "d_hidden must be >= d_model");
    }
    if (nonlinearity != "gelu") {
        throw Error(ErrorCode::InvalidConfig, "unsupported nonlinearity '" + nonlinearity + "'");
    }
}

ModelWeights ModelWeights::zeros(const ToyLmConfig & cfg) {
    ModelWeights w;
    const auto d = cfg.d_model;
    const auto e = cfg.d_hidden;
    w.token_embeddings = zero_matrix(cfg.vocab_size, d);
    w.positional_embeddings = zero_matrix(cfg.max_seq_len, d);
    w.layers.resize(cfg.n_layers);
    for (auto & l : w.layers) {
        l.wq = zero_matrix(d, d);
        l.wk = zero_matrix(d, d);
        l.wv = zero_matrix(d, d);
        l.wo = zero_matrix(d, d);
        l.mlp_in = zero_matrix(e, d);
        l.mlp_out = zero_matrix(e, d);
    }
    w.unembedding = zero_matrix(d, cfg.vocab_size);
    return w;
}

ModelWeights ModelWeights::random_init(const ToyLmConfig & cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const auto d = cfg.d_model;
    const auto e = cfg.d_hidden;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double inv_sqrt_e = 1.0 / std::sqrt(static_cast<double>(e));
    const double depth = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));

    ModelWeights w;
    w.token_embeddings = normal_matrix(cfg.vocab_size, d, 1.0, rng);
    w.positional_embeddings = normal_matrix(cfg.max_seq_len, d, 0.5, rng);
    w.layers.resize(cfg.n_layers);
    for (auto & l : w.layers) {
        l.wq = normal_matrix(d, d, inv_sqrt_d, rng);
        l.wk = normal_matrix(d, d, inv_sqrt_d, rng);
        l.wv = normal_matrix(d, d, inv_sqrt_d, rng);
        l.wo = normal_matrix(d, d, inv_sqrt_d * depth, rng);
        l.mlp_in = normal_matrix(e, d, inv_sqrt_d, rng);
        l.mlp_out = normal_matrix(e, d, inv_sqrt_e * depth, rng);
    }
    w.unembedding = normal_matrix(d, cfg.vocab_size, inv_sqrt_d, rng);
    return w;
}

void ModelWeights::for_each(const std::function<void(const std::string &, WeightMatrix &)> & fn) {
    fn("token_embeddings", token_embeddings);
    fn("positional_embeddings", positional_embeddings);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        fn(p + "wq", layers[l].wq);
        fn(p + "wk", layers[l].wk);
        fn(p + "wv", layers[l].wv);
        fn(p + "wo", layers[l].wo);
        fn(p + "mlp_in", layers[l].mlp_in);
        fn(p + "mlp_out", layers[l].mlp_out);
    }
    fn("unembedding", unembedding);
}

void ModelWeights::for_each(const std::function<void(const std::string &, const WeightMatrix &)> & fn) const {
    const_cast<ModelWeights *>(this)->for_each(
        [&](const std::string & name, WeightMatrix & m) { fn(name, static_cast<const WeightMatrix &>(m)); });
}

void ModelWeights::check_shapes(const ToyLmConfig & cfg) const {
    const auto d = cfg.d_model;
    const auto e = cfg.d_hidden;
    expect_shape(token_embeddings, cfg.vocab_size, d, "token_embeddings");
    expect_shape(positional_embeddings, cfg.max_seq_len, d, "positional_embeddings");
    if (layers.size() != cfg.n_layers) {
        throw Error(ErrorCode::ShapeMismatch, "layer count differs from config");
    }
    for (const auto & l : layers) {
        expect_shape(l.wq, d, d, "wq");
        expect_shape(l.wk, d, d, "wk");
        expect_shape(l.wv, d, d, "wv");
        expect_shape(l.wo, d, d, "wo");
        expect_shape(l.mlp_in, e, d, "mlp_in");
        expect_shape(l.mlp_out, e, d, "mlp_out");
    }
    expect_shape(unembedding, d, cfg.vocab_size, "unembedding");
    for_each([](const std::string & name, const WeightMatrix & m) {
        if (!m.allFinite()) {
            throw Error(ErrorCode::NonFiniteValue, name + " has non-finite entries");
        }
    });
}

bool ModelWeights::operator==(const ModelWeights & other) const {
    if (layers.size() != other.layers.size()) {
        return false;
    }
    std::vector<const WeightMatrix *> a;
    std::vector<const WeightMatrix *> b;
    for_each([&](const std::string &, const WeightMatrix & m) { a.push_back(&m); });
    other.for_each([&](const std::string &, const WeightMatrix & m) { b.push_back(&m); });
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols() || *a[i] != *b[i]) {
            return false;
        }
    }
    return true;
}

double gelu(double x) {
    return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + kGeluCubic * x * x * x)));
}

double gelu_grad(double x) {
    const double inner = kSqrt2OverPi * (x + kGeluCubic * x * x * x);
    const double t = std::tanh(inner);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * x * x);
}

void validate_sequence(const ToyLmConfig & cfg, std::span<const int32_t> x) {
    if (x.empty()) {
        throw Error(ErrorCode::SequenceTooLong, "empty sequence");
    }
    if (x.size() > cfg.max_seq_len) {
        throw Error(ErrorCode::SequenceTooLong, "length " + std::to_string(x.size()) + " exceeds max_seq_len " +
                                                    std::to_string(cfg.max_seq_len));
    }
    for (int32_t t : x) {
        if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size) {
            throw Error(ErrorCode::TokenOutOfRange, "token id " + std::to_string(t));
        }
    }
}

ForwardTrace forward_traced(const ModelWeights & w, const ToyLmConfig & cfg, std::span<const int32_t> x,
                            const Intervention & iv) {
    validate_sequence(cfg, x);
    const auto T = static_cast<Eigen::Index>(x.size());
    WeightMatrix h(T, static_cast<Eigen::Index>(cfg.d_model));
    for (Eigen::Index i = 0; i < T; ++i) {
        h.row(i) = w.token_embeddings.row(x[static_cast<std::size_t>(i)]) + w.positional_embeddings.row(i);
    }
    return run_layers(w, cfg, std::move(h), {x.size()}, iv);
}

ForwardTrace forward_traced_batch(const ModelWeights & w, const ToyLmConfig & cfg,
                                  std::span<const TokenSequence> batch, const Intervention & iv) {
    std::vector<std::size_t> lengths;
    std::size_t rows = 0;
    for (const auto & seq : batch) {
        validate_sequence(cfg, seq);
        lengths.push_back(seq.size());
        rows += seq.size();
    }
    if (rows == 0) {
        throw Error(ErrorCode::SequenceTooLong, "empty batch");
    }
    WeightMatrix h(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cfg.d_model));
    Eigen::Index r = 0;
    for (const auto & seq : batch) {
        for (std::size_t i = 0; i < seq.size(); ++i, ++r) {
            h.row(r) = w.token_embeddings.row(seq[i]) + w.positional_embeddings.row(static_cast<Eigen::Index>(i));
        }
    }
    return run_layers(w, cfg, std::move(h), std::move(lengths), iv);
}

ForwardTrace forward_traced_embeddings(const ModelWeights & w, const ToyLmConfig & cfg,
                                       const WeightMatrix & input_embeddings, const Intervention & iv,
                                       std::span<const std::size_t> lengths) {
    if (static_cast<std::size_t>(input_embeddings.cols()) != cfg.d_model) {
        throw Error(ErrorCode::ShapeMismatch, "input embeddings must have d_model columns");
    }
    std::vector<std::size_t> segs(lengths.begin(), lengths.end());
    if (segs.empty()) {
        segs.push_back(static_cast<std::size_t>(input_embeddings.rows()));
    }
    std::size_t total = 0;
    for (std::size_t len : segs) {
        if (len < 1 || len > cfg.max_seq_len) {
            throw Error(ErrorCode::SequenceTooLong, "segment length outside 1..max_seq_len");
        }
        total += len;
    }
    if (total != static_cast<std::size_t>(input_embeddings.rows())) {
        throw Error(ErrorCode::ShapeMismatch, "segment lengths do not cover the input rows");
    }
    WeightMatrix h = input_embeddings;
    Eigen::Index r = 0;
    for (std::size_t len : segs) {
        const auto T = static_cast<Eigen::Index>(len);
        h.middleRows(r, T) += w.positional_embeddings.topRows(T);
        r += T;
    }
    return run_layers(w, cfg, std::move(h), std::move(segs), iv);
}

WeightMatrix forward(const ModelWeights & w, const ToyLmConfig & cfg, std::span<const int32_t> x,
                     const Intervention & iv) {
    return forward_traced(w, cfg, x, iv).logits;
}

int32_t argmax_token(const Eigen::Ref<const Eigen::RowVectorXd> & logits) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) {
            best = i;
        }
    }
    return static_cast<int32_t>(best);
}

int32_t next_token(const ModelWeights & w, const ToyLmConfig & cfg, std::span<const int32_t> x,
                   const Intervention & iv) {
    const WeightMatrix logits = forward(w, cfg, x, iv);
    return argmax_token(logits.row(logits.rows() - 1));
}

TokenSequence greedy_decode(const ModelWeights & w, const ToyLmConfig & cfg, std::span<const int32_t> prompt,
                            std::size_t n_tokens, const Intervention & iv) {
    TokenSequence out(prompt.begin(), prompt.end());
    if (prompt.size() + n_tokens > cfg.max_seq_len) {
        throw Error(ErrorCode::SequenceTooLong, "prompt plus generated tokens exceed max_seq_len");
    }
    if (n_tokens == 0) {
        return out;
    }
    for (std::size_t i = 0; i < n_tokens; ++i) {
        out.push_back(next_token(w, cfg, out, iv));
    }
    return out;
}

Vector mlp_key_activation(const ModelWeights & w, const ToyLmConfig & cfg, std::span<const int32_t> x,
                          std::size_t layer, std::size_t position) {
    if (layer >= cfg.n_layers || position >= x.size()) {
        throw Error(ErrorCode::IndexOutOfRange, "key activation requested at layer " + std::to_string(layer) +
                                                    ", position " + std::to_string(position));
    }
    // Causal model: tokens after `position` cannot affect it.
    const auto prefix = x.subspan(0, position + 1);
    const ForwardTrace tr = forward_traced(w, cfg, prefix);
    return tr.layers[layer].key.row(static_cast<Eigen::Index>(position)).transpose();
}

Eigen::RowVectorXd softmax(const Eigen::Ref<const Eigen::RowVectorXd> & logits) {
    const double mx = logits.maxCoeff();
    Eigen::RowVectorXd p = (logits.array() - mx).exp();
    p /= p.sum();
    return p;
}

double softmax_xent(const Eigen::Ref<const Eigen::RowVectorXd> & logits, int32_t target,
                    Eigen::Ref<Eigen::RowVectorXd> dlogits) {
    const double mx = logits.maxCoeff();
    const Eigen::RowVectorXd e = (logits.array() - mx).exp();
    const double z = e.sum();
    dlogits = e / z;
    const double loss = std::log(z) - (logits[target] - mx);
    dlogits[target] -= 1.0;
    return loss;
}

BackwardResult backward(const ModelWeights & w, const ToyLmConfig & cfg, const ForwardTrace & tr,
                        std::span<const int32_t> tokens, const WeightMatrix & dlogits, const Intervention & iv,
                        const GradMask & mask, ModelWeights & g) {
    const auto rows = static_cast<Eigen::Index>(tr.length());
    const auto n_heads = static_cast<Eigen::Index>(cfg.n_heads);
    const auto hd = static_cast<Eigen::Index>(cfg.head_dim());
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const std::size_t n_seg = tr.lengths.size();

    BackwardResult result;

    // Lowest layer that still needs gradient flow.
    std::size_t stop = cfg.n_layers;
    if (mask.embeddings || mask.input) {
        stop = 0;
    }
    for (std::size_t l = 0; l < cfg.n_layers && l < stop; ++l) {
        if (mask.layer(l)) {
            stop = l;
        }
    }
    if (iv.mlp_output && iv.mlp_output_layer < stop) {
        stop = iv.mlp_output_layer;
    }

    if (mask.unembedding) {
        g.unembedding.noalias() += tr.h_final.transpose() * dlogits;
    }
    WeightMatrix dh = dlogits * w.unembedding.transpose();
    WeightMatrix dm, dpre, da, dheads, dq, dk, dv, dp, ds;

    for (std::size_t li = cfg.n_layers; li-- > stop;) {
        const LayerWeights & lw = w.layers[li];
        const LayerTrace & lt = tr.layers[li];
        LayerWeights & lg = g.layers[li];
        const bool want = mask.layer(li);
        const bool substituted = iv.substitutes(li);

        // h = attn + mlp + h_in
        dm = dh;
        if (iv.mlp_output && iv.mlp_output_layer == li) {
            const auto p = static_cast<Eigen::Index>(iv.mlp_output_position);
            result.d_mlp_output = dm.row(p).transpose();
            dm.row(p).setZero();
        }
        if (want && !substituted) {
            lg.mlp_out.noalias() += lt.key.transpose() * dm;
        }
        if (substituted && !iv.segment_mlp_out.empty()) {
            dpre.resize(rows, lt.pre.cols());
            for (std::size_t sg = 0; sg < n_seg; ++sg) {
                const auto off = static_cast<Eigen::Index>(tr.offsets[sg]);
                const auto T = static_cast<Eigen::Index>(tr.lengths[sg]);
                dpre.middleRows(off, T).noalias() = dm.middleRows(off, T) * iv.segment_mlp_out[sg]->transpose();
            }
        } else {
            dpre.noalias() = dm * (substituted ? *iv.mlp_out : lw.mlp_out).transpose();
        }
        dpre.array() *= lt.pre.unaryExpr([](double x) { return gelu_grad(x); }).array();
        if (want) {
            lg.mlp_in.noalias() += dpre.transpose() * lt.mlp_input;
        }
        // d(mlp_input) flows into both the attention output and the residual.
        da.noalias() = dpre * lw.mlp_in;
        da += dh;
        dh = da;

        if (want) {
            lg.wo.noalias() += lt.heads.transpose() * da;
        }
        dheads.noalias() = da * lw.wo.transpose();
        dq.resize(rows, lt.q.cols());
        dk.resize(rows, lt.k.cols());
        dv.resize(rows, lt.v.cols());
        for (std::size_t sg = 0; sg < n_seg; ++sg) {
            const auto off = static_cast<Eigen::Index>(tr.offsets[sg]);
            const auto T = static_cast<Eigen::Index>(tr.lengths[sg]);
            for (Eigen::Index hh = 0; hh < n_heads; ++hh) {
                const WeightMatrix & p = lt.probs[sg * cfg.n_heads + static_cast<std::size_t>(hh)];
                const auto dout = dheads.block(off, hh * hd, T, hd);
                dv.block(off, hh * hd, T, hd).noalias() = p.transpose() * dout;
                dp.noalias() = dout * lt.v.block(off, hh * hd, T, hd).transpose();
                ds.resize(T, T);
                for (Eigen::Index i = 0; i < T; ++i) {
                    const double dot = p.row(i).dot(dp.row(i));
                    ds.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix();
                }
                ds *= scale;
                dq.block(off, hh * hd, T, hd).noalias() = ds * lt.k.block(off, hh * hd, T, hd);
                dk.block(off, hh * hd, T, hd).noalias() = ds.transpose() * lt.q.block(off, hh * hd, T, hd);
            }
        }
        if (want) {
            lg.wq.noalias() += lt.h_in.transpose() * dq;
            lg.wk.noalias() += lt.h_in.transpose() * dk;
            lg.wv.noalias() += lt.h_in.transpose() * dv;
        }
        dh.noalias() += dq * lw.wq.transpose();
        dh.noalias() += dk * lw.wk.transpose();
        dh.noalias() += dv * lw.wv.transpose();
    }

    if (stop == 0) {
        if (mask.embeddings) {
            for (std::size_t sg = 0; sg < n_seg; ++sg) {
                for (std::size_t i = 0; i < tr.lengths[sg]; ++i) {
                    const auto r = static_cast<Eigen::Index>(tr.offsets[sg] + i);
                    if (!tokens.empty()) {
                        g.token_embeddings.row(tokens[static_cast<std::size_t>(r)]) += dh.row(r);
                    }
                    g.positional_embeddings.row(static_cast<Eigen::Index>(i)) += dh.row(r);
                }
            }
        }
        if (mask.input) {
            result.d_input = std::move(dh);
        }
    }
    return result;
}

} // namespace edtf
