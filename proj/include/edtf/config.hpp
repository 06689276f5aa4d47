#pragma once

#include "edtf/corpus.hpp"
#include "edtf/editor.hpp"
#include "edtf/probe.hpp"
#include "edtf/training.hpp"

#include <json.hpp>

#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace edtf {

// Pipeline stages in run order; each writes one report named after it.
inline constexpr std::array<const char *, 11> kStages = {
    "pretrain",       "edit",         "direction",  "scan",    "pcs-increase", "probe-relation",
    "infer-object",   "similarity",   "reverse",    "unique-preds", "qualitative"};

struct ExperimentConfig {
    uint64_t seed = 17;
    std::vector<std::string> stages; // empty = all

    ToyLmConfig model;
    SyntheticCorpusConfig corpus;
    PretrainConfig pretrain;

    std::size_t edit_layer = 1;
    std::size_t batch_size = 100;     // the seeded edit batch used by the forensics
    ValueOptimizationConfig value;

    double scan_threshold = 10.0;
    ProbeConfig probe;
    std::vector<std::size_t> probe_classes{2, 3, 5};
    SplitConfig split;
    TrainingConfig object_inference;  // lr 2e-5 by default
    std::size_t k_max = 15;
    std::size_t unique_inputs = 100;
    std::size_t unique_snapshots = 10;
    std::size_t gen_tokens = 5;
    std::size_t qualitative_rows = 10;

    // Sets the global seed and every module seed that follows it.
    void apply_seed(uint64_t s);
    bool runs(const std::string & stage) const;
    void validate() const;
};

nlohmann::json to_json(const ExperimentConfig & c);
ExperimentConfig experiment_config_from_json(const nlohmann::json & j);
ExperimentConfig load_experiment_config(const std::filesystem::path & path);

} // namespace edtf
