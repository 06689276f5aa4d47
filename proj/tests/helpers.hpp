#pragma once

#include "edtf/common.hpp"
#include "edtf/toy_lm.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace edtf::test {

inline WeightMatrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64 & rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    WeightMatrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = n(rng);
    }
    return m;
}

inline Vector random_vector(std::size_t n, std::mt19937_64 & rng, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    Vector v(n);
    for (auto & x : v) {
        x = d(rng);
    }
    return v;
}

inline ToyLmConfig tiny_config() {
    ToyLmConfig c;
    c.vocab_size = 24;
    c.d_model = 8;
    c.d_hidden = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.max_seq_len = 8;
    c.seed = 5;
    return c;
}

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string & tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("edtf_test_" + tag + "_" + std::to_string(rd()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir &) = delete;
    TempDir & operator=(const TempDir &) = delete;
    const std::filesystem::path & path() const { return path_; }
    std::filesystem::path operator/(const std::string & name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

} // namespace edtf::test

#include "edtf/corpus.hpp"
#include "edtf/training.hpp"

namespace edtf::test {

// Pretrained miniature world shared by the editor-level tests.
struct SmallWorld {
    ToyLmConfig cfg;
    SyntheticCorpus corpus;
    ModelWeights weights;
    double recall = 0.0;
};

inline const SmallWorld & small_world() {
    static const SmallWorld world = [] {
        SmallWorld s;
        s.cfg.vocab_size = 96;
        s.cfg.d_model = 32;
        s.cfg.d_hidden = 128;
        s.cfg.n_layers = 3;
        s.cfg.n_heads = 2;
        s.cfg.max_seq_len = 8;
        s.cfg.seed = 3;
        SyntheticCorpusConfig cc;
        cc.n_relations = 4;
        cc.facts_per_relation = 12;
        cc.object_pool_size = 4;
        cc.seed = 3;
        s.corpus = generate_synthetic(cc, s.cfg);
        std::vector<TokenSequence> seqs;
        for (const auto & f : s.corpus.facts) {
            seqs.push_back(s.corpus.training_sequence(f));
        }
        PretrainConfig pc;
        pc.optimizer.learning_rate = 3e-3;
        pc.optimizer.batch_size = 8;
        pc.recall_target = 1.0;
        const PretrainResult r = pretrain(s.cfg, seqs, pc);
        s.weights = r.weights;
        s.recall = r.recall;
        return s;
    }();
    return world;
}

} // namespace edtf::test
