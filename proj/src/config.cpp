#include "edtf/config.hpp"

#include "edtf/archive.hpp"

#include <algorithm>
#include <fstream>

namespace edtf {

using nlohmann::json;

void ExperimentConfig::apply_seed(uint64_t s) {
    seed = s;
    model.seed = s;
    corpus.seed = s;
    pretrain.optimizer.seed = s;
}

bool ExperimentConfig::runs(const std::string & stage) const {
    return stages.empty() || std::find(stages.begin(), stages.end(), stage) != stages.end();
}

void ExperimentConfig::validate() const {
    model.validate();
    corpus.validate();
    pretrain.optimizer.validate();
    object_inference.validate();
    for (const auto & s : stages) {
        if (std::find(kStages.begin(), kStages.end(), s) == kStages.end()) {
            throw Error(ErrorCode::InvalidConfig, "unknown stage " + s);
        }
    }
    if (edit_layer >= model.n_layers) {
        throw Error(ErrorCode::InvalidConfig, "edit_layer out of range");
    }
    if (batch_size < 1 || batch_size > corpus.n_relations * corpus.facts_per_relation) {
        throw Error(ErrorCode::InvalidConfig, "batch_size must be in 1..number of facts");
    }
    if (k_max > std::min(model.d_model, model.d_hidden)) {
        throw Error(ErrorCode::InvalidConfig, "k_max exceeds the matrix rank");
    }
    if (probe_classes.empty() || gen_tokens < 1 || unique_inputs < 1 || unique_snapshots < 1) {
        throw Error(ErrorCode::InvalidConfig, "probe_classes, gen_tokens and unique counts must be non-empty");
    }
    if (!(scan_threshold > 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "scan_threshold must be positive");
    }
    if (value.learning_rate <= 0.0 || value.max_steps < 1 || value.target_probability <= 0.0 ||
        value.target_probability >= 1.0) {
        throw Error(ErrorCode::InvalidConfig, "value optimisation config");
    }
}

namespace {

json training_json(const TrainingConfig & t) {
    return {{"learning_rate", t.learning_rate}, {"beta1", t.beta1},           {"beta2", t.beta2},
            {"weight_decay", t.weight_decay},   {"max_epochs", t.max_epochs}, {"patience", t.patience},
            {"batch_size", t.batch_size},       {"seed", t.seed}};
}

void check_keys(const json & j, std::initializer_list<const char *> allowed, const std::string & where);

TrainingConfig training_from(const json & j, TrainingConfig t) {
    check_keys(j, {"learning_rate", "beta1", "beta2", "weight_decay", "max_epochs", "patience", "batch_size", "seed"},
               "optimizer");
    t.learning_rate = j.value("learning_rate", t.learning_rate);
    t.beta1 = j.value("beta1", t.beta1);
    t.beta2 = j.value("beta2", t.beta2);
    t.weight_decay = j.value("weight_decay", t.weight_decay);
    t.max_epochs = j.value("max_epochs", t.max_epochs);
    t.patience = j.value("patience", t.patience);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.seed = j.value("seed", t.seed);
    return t;
}

void check_keys(const json & j, std::initializer_list<const char *> allowed, const std::string & where) {
    if (!j.is_object()) {
        throw Error(ErrorCode::InvalidConfig, where + " must be an object");
    }
    for (const auto & [key, _] : j.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char * a) { return key == a; })) {
            throw Error(ErrorCode::InvalidConfig, "unknown key " + where + "." + key);
        }
    }
}

} // namespace

json to_json(const ExperimentConfig & c) {
    return {
        {"seed", c.seed},
        {"stages", c.stages},
        {"model", to_json(c.model)},
        {"corpus",
         {{"n_relations", c.corpus.n_relations},
          {"facts_per_relation", c.corpus.facts_per_relation},
          {"object_pool_size", c.corpus.object_pool_size},
          {"subject_tokens", c.corpus.subject_tokens},
          {"seed", c.corpus.seed}}},
        {"pretrain",
         {{"optimizer", training_json(c.pretrain.optimizer)},
          {"recall_target", c.pretrain.recall_target},
          {"extra_epochs", c.pretrain.extra_epochs}}},
        {"edit",
         {{"layer", c.edit_layer},
          {"batch_size", c.batch_size},
          {"learning_rate", c.value.learning_rate},
          {"max_steps", c.value.max_steps},
          {"target_probability", c.value.target_probability}}},
        {"scan_threshold", c.scan_threshold},
        {"probe",
         {{"classes", c.probe_classes},
          {"train_per_relation", c.probe.train_per_relation},
          {"test_per_relation", c.probe.test_per_relation},
          {"pca_fit_samples", c.probe.pca_fit_samples},
          {"pca_dim", c.probe.pca_dim},
          {"repeats", c.probe.repeats},
          {"l2", c.probe.logreg.l2},
          {"grad_tolerance", c.probe.logreg.grad_tolerance},
          {"max_iter", c.probe.logreg.max_iter}}},
        {"split",
         {{"id_relations", c.split.id_relations},
          {"ood_relations", c.split.ood_relations},
          {"train", c.split.train},
          {"val", c.split.val},
          {"test", c.split.test},
          {"ood", c.split.ood}}},
        {"object_inference", training_json(c.object_inference)},
        {"k_max", c.k_max},
        {"unique_inputs", c.unique_inputs},
        {"unique_snapshots", c.unique_snapshots},
        {"gen_tokens", c.gen_tokens},
        {"qualitative_rows", c.qualitative_rows},
    };
}

ExperimentConfig experiment_config_from_json(const json & j) {
    ExperimentConfig c;
    try {
        check_keys(j,
                   {"seed", "stages", "model", "corpus", "pretrain", "edit", "scan_threshold", "probe", "split",
                    "object_inference", "k_max", "unique_inputs", "unique_snapshots", "gen_tokens",
                    "qualitative_rows"},
                   "config");
        if (j.contains("seed")) {
            c.apply_seed(j.at("seed").get<uint64_t>());
        }
        c.stages = j.value("stages", c.stages);
        if (j.contains("model")) {
            check_keys(j.at("model"),
                       {"vocab_size", "d_model", "d_hidden", "n_layers", "n_heads", "max_seq_len", "nonlinearity", "seed"},
                       "model");
            json m = to_json(c.model);
            m.update(j.at("model"));
            c.model = toy_lm_config_from_json(m);
        }
        if (j.contains("corpus")) {
            const json & k = j.at("corpus");
            check_keys(k, {"n_relations", "facts_per_relation", "object_pool_size", "subject_tokens", "seed"}, "corpus");
            c.corpus.n_relations = k.value("n_relations", c.corpus.n_relations);
            c.corpus.facts_per_relation = k.value("facts_per_relation", c.corpus.facts_per_relation);
            c.corpus.object_pool_size = k.value("object_pool_size", c.corpus.object_pool_size);
            c.corpus.subject_tokens = k.value("subject_tokens", c.corpus.subject_tokens);
            c.corpus.seed = k.value("seed", c.corpus.seed);
        }
        if (j.contains("pretrain")) {
            const json & k = j.at("pretrain");
            check_keys(k, {"optimizer", "recall_target", "extra_epochs"}, "pretrain");
            if (k.contains("optimizer")) {
                c.pretrain.optimizer = training_from(k.at("optimizer"), c.pretrain.optimizer);
            }
            c.pretrain.recall_target = k.value("recall_target", c.pretrain.recall_target);
            c.pretrain.extra_epochs = k.value("extra_epochs", c.pretrain.extra_epochs);
        }
        if (j.contains("edit")) {
            const json & k = j.at("edit");
            check_keys(k, {"layer", "batch_size", "learning_rate", "max_steps", "target_probability"}, "edit");
            c.edit_layer = k.value("layer", c.edit_layer);
            c.batch_size = k.value("batch_size", c.batch_size);
            c.value.learning_rate = k.value("learning_rate", c.value.learning_rate);
            c.value.max_steps = k.value("max_steps", c.value.max_steps);
            c.value.target_probability = k.value("target_probability", c.value.target_probability);
        }
        c.scan_threshold = j.value("scan_threshold", c.scan_threshold);
        if (j.contains("probe")) {
            const json & k = j.at("probe");
            check_keys(k, {"classes", "train_per_relation", "test_per_relation", "pca_fit_samples", "pca_dim",
                           "repeats", "l2", "grad_tolerance", "max_iter"}, "probe");
            c.probe_classes = k.value("classes", c.probe_classes);
            c.probe.train_per_relation = k.value("train_per_relation", c.probe.train_per_relation);
            c.probe.test_per_relation = k.value("test_per_relation", c.probe.test_per_relation);
            c.probe.pca_fit_samples = k.value("pca_fit_samples", c.probe.pca_fit_samples);
            c.probe.pca_dim = k.value("pca_dim", c.probe.pca_dim);
            c.probe.repeats = k.value("repeats", c.probe.repeats);
            c.probe.logreg.l2 = k.value("l2", c.probe.logreg.l2);
            c.probe.logreg.grad_tolerance = k.value("grad_tolerance", c.probe.logreg.grad_tolerance);
            c.probe.logreg.max_iter = k.value("max_iter", c.probe.logreg.max_iter);
        }
        if (j.contains("split")) {
            const json & k = j.at("split");
            check_keys(k, {"id_relations", "ood_relations", "train", "val", "test", "ood"}, "split");
            c.split.id_relations = k.value("id_relations", c.split.id_relations);
            c.split.ood_relations = k.value("ood_relations", c.split.ood_relations);
            c.split.train = k.value("train", c.split.train);
            c.split.val = k.value("val", c.split.val);
            c.split.test = k.value("test", c.split.test);
            c.split.ood = k.value("ood", c.split.ood);
        }
        if (j.contains("object_inference")) {
            c.object_inference = training_from(j.at("object_inference"), c.object_inference);
        }
        c.k_max = j.value("k_max", c.k_max);
        c.unique_inputs = j.value("unique_inputs", c.unique_inputs);
        c.unique_snapshots = j.value("unique_snapshots", c.unique_snapshots);
        c.gen_tokens = j.value("gen_tokens", c.gen_tokens);
        c.qualitative_rows = j.value("qualitative_rows", c.qualitative_rows);
    } catch (const json::exception & ex) {
        throw Error(ErrorCode::InvalidConfig, std::string("config: ") + ex.what());
    }
    c.validate();
    return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path & path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open config " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception & ex) {
        throw Error(ErrorCode::ParseError, path.string() + ": " + ex.what());
    }
    return experiment_config_from_json(j);
}

} // namespace edtf
