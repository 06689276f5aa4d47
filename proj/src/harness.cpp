#include "edtf/harness.hpp"

#include "edtf/archive.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <set>

namespace edtf {

using nlohmann::json;

namespace {

enum Stream : uint64_t { kBatch = 1, kProbe, kObject, kUniqueInputs, kEdit };

double elapsed(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string join_layers(const LayerScanReport & r) {
    std::string s;
    for (const auto & [layer, z] : r.flagged) {
        s += (s.empty() ? "" : ";") + std::to_string(layer);
    }
    return s;
}

int64_t i64(std::size_t x) {
    return static_cast<int64_t>(x);
}

} // namespace

double UniqueRun::edited_mean() const {
    double m = 0.0;
    for (const auto & [id, r] : edited) {
        m += r.mean_unique;
    }
    return edited.empty() ? 0.0 : m / static_cast<double>(edited.size());
}

Pipeline::Pipeline(ExperimentConfig cfg, std::filesystem::path out_dir, ReportFormat format, bool quiet)
    : cfg_(std::move(cfg)), out_(std::move(out_dir)), format_(format), quiet_(quiet) {
    cfg_.validate();
    std::filesystem::create_directories(out_ / "cache");
    // Reports from a different configuration are stale.
    const auto stamp = out_ / "cache" / "config.json";
    const std::string current = to_json(cfg_).dump(2) + "\n";
    std::string previous;
    if (std::ifstream in(stamp); in) {
        previous.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    if (previous != current) {
        for (const char * s : kStages) {
            for (const char * ext : {".csv", ".json"}) {
                std::filesystem::remove(out_ / (std::string(s) + ext));
            }
        }
        std::ofstream(stamp, std::ios::binary | std::ios::trunc) << current;
    }
}

std::filesystem::path Pipeline::report_path(const std::string & stage) const {
    return out_ / (stage + extension(format_));
}

void Pipeline::log(const std::string & msg) const {
    if (!quiet_) {
        std::cerr << "[edtf] " << msg << std::endl;
    }
}

json Pipeline::model_key() const {
    const json c = to_json(cfg_);
    return {{"model", c["model"]}, {"corpus", c["corpus"]}, {"pretrain", c["pretrain"]}};
}

json Pipeline::snapshot_key() const {
    json k = model_key();
    k["edit"] = to_json(cfg_)["edit"];
    return k;
}

const SyntheticCorpus & Pipeline::corpus() {
    if (!corpus_) {
        corpus_ = generate_synthetic(cfg_.corpus, cfg_.model);
    }
    return *corpus_;
}

const ModelWeights & Pipeline::model() {
    if (model_) {
        return *model_;
    }
    const auto path = out_ / "cache" / "model.edtf";
    if (std::filesystem::exists(path)) {
        LoadedModel m = read_model(path);
        if (m.manifest.value("cache_key", json()) == model_key() && m.config == cfg_.model) {
            model_ = std::move(m.weights);
            model_manifest_ = std::move(m.manifest);
            log("loaded cached model " + path.string());
            return *model_;
        }
    }
    log("pretraining toy model");
    const SyntheticCorpus & c = corpus();
    std::vector<TokenSequence> seqs;
    for (const auto & f : c.facts) {
        seqs.push_back(c.training_sequence(f));
    }
    PretrainResult r = pretrain(cfg_.model, seqs, cfg_.pretrain);
    round_to_f32(r.weights);
    json extra;
    extra["cache_key"] = model_key();
    extra["recall"] = fact_recall(r.weights, cfg_.model, seqs);
    extra["epochs"] = r.epochs;
    extra["converged"] = r.converged;
    extra["epoch_loss"] = r.epoch_loss;
    extra["epoch_recall"] = r.epoch_recall;
    write_model(path, r.weights, cfg_.model, extra, true);
    model_manifest_ = read_archive(path).manifest;
    model_ = std::move(r.weights);
    log("pretraining done: recall " + format_real(extra["recall"].get<double>()));
    return *model_;
}

const json & Pipeline::model_manifest() {
    model();
    return model_manifest_;
}

const std::vector<std::size_t> & Pipeline::batch_indices() {
    if (!batch_) {
        std::vector<std::size_t> all(corpus().facts.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        std::mt19937_64 rng(derive_seed(cfg_.seed, kBatch));
        std::shuffle(all.begin(), all.end(), rng);
        all.resize(std::min(cfg_.batch_size, all.size()));
        std::sort(all.begin(), all.end());
        batch_ = std::move(all);
    }
    return *batch_;
}

const std::vector<EditedSnapshot> & Pipeline::snapshots() {
    if (snapshots_) {
        return *snapshots_;
    }
    const ModelWeights & w = model();
    const auto path = out_ / "cache" / "snapshots.edtf";
    if (std::filesystem::exists(path)) {
        const Archive head = read_archive(path);
        if (head.manifest.value("cache_key", json()) == snapshot_key()) {
            snapshots_ = read_snapshots(path);
            log("loaded cached snapshots " + path.string());
            return *snapshots_;
        }
    }
    const SyntheticCorpus & c = corpus();
    std::vector<EditRecord> edits;
    std::vector<TokenSequence> prompts;
    for (const auto & f : c.facts) {
        edits.push_back(make_edit_record(f, c));
        prompts.push_back(c.prompt_tokens(f));
    }
    const auto t0 = std::chrono::steady_clock::now();
    const WeightMatrix C = estimate_key_covariance(w, cfg_.model, prompts, cfg_.edit_layer);
    EditConfig ec;
    ec.value = cfg_.value;
    ec.seed = derive_seed(cfg_.seed, kEdit);

    // The seeded batch first, so its runtime is measured on its own.
    const std::vector<std::size_t> & bi = batch_indices();
    const std::set<std::size_t> in_batch(bi.begin(), bi.end());
    std::vector<EditRecord> first, rest;
    std::vector<std::size_t> first_ids, rest_ids;
    for (std::size_t i = 0; i < edits.size(); ++i) {
        (in_batch.count(i) ? first : rest).push_back(edits[i]);
        (in_batch.count(i) ? first_ids : rest_ids).push_back(i);
    }
    log("editing " + std::to_string(edits.size()) + " facts at layer " + std::to_string(cfg_.edit_layer));
    std::vector<EditedSnapshot> a = batch_edit(w, cfg_.model, first, cfg_.edit_layer, C, ec);
    edit_seconds_ = elapsed(t0);
    std::vector<EditedSnapshot> b = batch_edit(w, cfg_.model, rest, cfg_.edit_layer, C, ec);
    std::vector<EditedSnapshot> all(edits.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i].id = first_ids[i];
        all[first_ids[i]] = std::move(a[i]);
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
        b[i].id = rest_ids[i];
        all[rest_ids[i]] = std::move(b[i]);
    }
    write_snapshots(path, w.layers[cfg_.edit_layer].mlp_out, all, {{"cache_key", snapshot_key()}}, true);
    log("editing done in " + format_real(elapsed(t0)) + " s");
    snapshots_ = std::move(all);
    return *snapshots_;
}

double Pipeline::edit_seconds() {
    snapshots();
    return edit_seconds_;
}

std::vector<EditedSnapshot> Pipeline::batch() {
    std::vector<EditedSnapshot> out;
    for (std::size_t i : batch_indices()) {
        out.push_back(snapshots()[i]);
    }
    return out;
}

std::vector<EditedSnapshot> Pipeline::batch_successes() {
    std::vector<EditedSnapshot> out;
    for (std::size_t i : batch_indices()) {
        if (snapshots()[i].success) {
            out.push_back(snapshots()[i]);
        }
    }
    return out;
}

const LayerScanReport & Pipeline::unedited_scan() {
    if (!unedited_scan_) {
        unedited_scan_ = scan_layers(model(), cfg_.scan_threshold);
    }
    return *unedited_scan_;
}

const std::vector<ScanRow> & Pipeline::scans() {
    if (scans_) {
        return *scans_;
    }
    const ModelWeights & w = model();
    std::vector<WeightMatrix> mats;
    for (const auto & l : w.layers) {
        mats.push_back(l.mlp_out);
    }
    std::vector<ScanRow> rows;
    for (const auto & s : batch_successes()) {
        ScanRow r;
        r.snapshot_id = s.id;
        r.direction = direction_stats(s.update);
        std::vector<WeightMatrix> edited = mats;
        edited[s.layer] = s.edited_matrix;
        r.scan = scan_layers(edited, cfg_.scan_threshold);
        r.exact_hit = r.scan.flagged.size() == 1 && r.scan.flagged[0].first == s.layer;
        rows.push_back(std::move(r));
    }
    scans_ = std::move(rows);
    return *scans_;
}

const std::vector<ProbeRun> & Pipeline::probes() {
    if (probes_) {
        return *probes_;
    }
    const std::vector<EditedSnapshot> & all = snapshots();
    std::vector<ProbeRun> runs;
    for (std::size_t n : cfg_.probe_classes) {
        ProbeRun run;
        run.n_classes = n;
        ProbeConfig pc = cfg_.probe;
        pc.n_classes = n;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            run.result = run_probe(all, pc, derive_seed(derive_seed(cfg_.seed, kProbe), n));
        } catch (const Error & e) {
            run.error = std::string(error_code_name(e.code())) + ": " + e.what();
        }
        run.seconds = elapsed(t0);
        log("probe n_classes=" + std::to_string(n) + " done");
        runs.push_back(std::move(run));
    }
    probes_ = std::move(runs);
    return *probes_;
}

const std::vector<ObjectInferenceResult> & Pipeline::object_inference() {
    if (object_inference_) {
        return *object_inference_;
    }
    const std::vector<EditedSnapshot> & all = snapshots();
    std::vector<std::string> relation_of;
    for (const auto & f : corpus().facts) {
        relation_of.push_back(f.relation_id);
    }
    const DataSplit sp = split(std::span<const std::string>(relation_of), cfg_.split, derive_seed(cfg_.seed, kObject));
    auto pick = [&](const std::vector<std::size_t> & ids) {
        std::vector<EditedSnapshot> out;
        for (std::size_t i : ids) {
            if (all[i].success) {
                out.push_back(all[i]);
            }
        }
        return out;
    };
    ObjectInferenceData data{pick(sp.train), pick(sp.val), pick(sp.test), pick(sp.ood)};
    log("object inference layer sweep");
    object_inference_ = layer_sweep(model(), cfg_.model, cfg_.edit_layer, data, cfg_.object_inference,
                                    derive_seed(cfg_.seed, kObject + 100));
    return *object_inference_;
}

const std::vector<std::pair<std::size_t, SimilarityProfile>> & Pipeline::similarity() {
    if (!similarity_) {
        std::vector<std::pair<std::size_t, SimilarityProfile>> out;
        for (const auto & s : batch_successes()) {
            out.emplace_back(s.id, similarity_profile(s, cfg_.k_max));
        }
        similarity_ = std::move(out);
    }
    return *similarity_;
}

const ReversalCurve & Pipeline::reversal() {
    if (!reversal_) {
        reversal_ = reversal_curve(model(), cfg_.model, batch_successes(), cfg_.k_max);
    }
    return *reversal_;
}

const UniqueRun & Pipeline::unique() {
    if (unique_) {
        return *unique_;
    }
    const SyntheticCorpus & c = corpus();
    std::vector<std::size_t> ids(c.facts.size());
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(cfg_.seed, kUniqueInputs));
    std::shuffle(ids.begin(), ids.end(), rng);
    std::vector<TokenSequence> inputs;
    for (std::size_t i = 0; i < std::min(cfg_.unique_inputs, ids.size()); ++i) {
        inputs.push_back(c.prompt_tokens(c.facts[ids[i]]));
    }
    const ModelWeights & w = model();
    UniqueRun run;
    run.unedited = unique_predictions(w, cfg_.model, w.layers[cfg_.edit_layer].mlp_out, cfg_.edit_layer, inputs,
                                      cfg_.k_max, cfg_.gen_tokens);
    const std::vector<EditedSnapshot> succ = batch_successes();
    const std::size_t n = std::min(cfg_.unique_snapshots, succ.size());
    run.edited.resize(n);
    parallel_for(n, [&](std::size_t i) {
        run.edited[i] = {succ[i].id, unique_predictions(w, cfg_.model, succ[i].edited_matrix, cfg_.edit_layer,
                                                        inputs, cfg_.k_max, cfg_.gen_tokens)};
    });
    unique_ = std::move(run);
    return *unique_;
}

ForensicReport Pipeline::build(const std::string & stage) {
    using CT = ColumnType;
    ForensicReport r;
    r.kind = stage;
    r.metadata["seed"] = cfg_.seed;
    r.metadata["edit_layer"] = cfg_.edit_layer;

    if (stage == "pretrain") {
        const json & m = model_manifest();
        r.columns = {{"epoch", CT::Int}, {"loss", CT::Real}, {"recall", CT::Real}};
        const auto loss = m.at("epoch_loss").get<std::vector<double>>();
        const auto recall = m.at("epoch_recall").get<std::vector<double>>();
        for (std::size_t e = 0; e < loss.size(); ++e) {
            r.add_row({i64(e + 1), loss[e], recall[e]});
        }
        r.metadata["recall"] = m.at("recall");
        r.metadata["epochs"] = m.at("epochs");
        r.metadata["converged"] = m.at("converged");
        r.metadata["n_facts"] = corpus().facts.size();
    } else if (stage == "edit") {
        r.columns = {{"id", CT::Int},          {"relation", CT::Text}, {"subject", CT::Text},
                     {"true_object", CT::Text}, {"new_object", CT::Text}, {"in_batch", CT::Bool},
                     {"success", CT::Bool},     {"steps", CT::Int},     {"target_probability", CT::Real}};
        const auto & bi = batch_indices();
        const std::set<std::size_t> in_batch(bi.begin(), bi.end());
        std::size_t ok = 0;
        std::size_t batch_ok = 0;
        for (const auto & s : snapshots()) {
            r.add_row({i64(s.id), s.edit.relation_id, s.edit.subject, s.edit.true_object, s.edit.new_object,
                       in_batch.count(s.id) != 0, s.success, i64(s.optimization_steps), s.target_probability});
            ok += s.success;
            batch_ok += s.success && in_batch.count(s.id);
        }
        r.metadata["edits"] = snapshots().size();
        r.metadata["successes"] = ok;
        r.metadata["batch_size"] = bi.size();
        r.metadata["batch_successes"] = batch_ok;
    } else if (stage == "direction") {
        r.columns = {{"id", CT::Int},           {"relation", CT::Text},     {"same_fraction", CT::Real},
                     {"opposite_fraction", CT::Real}, {"zero_rows", CT::Int}, {"positive_majority", CT::Bool},
                     {"majority_sign", CT::Bool}};
        const auto succ = batch_successes();
        for (const auto & s : succ) {
            const DirectionStats d = direction_stats(s.update);
            r.add_row({i64(s.id), s.edit.relation_id, d.same_fraction, d.opposite_fraction, i64(d.zero_rows),
                       d.positive_majority, is_majority_sign(d)});
        }
        const DirectionSummary sum = direction_summary_over_batch(succ);
        r.metadata["mean_same_fraction"] = sum.mean_same;
        r.metadata["std_same_fraction"] = sum.std_same;
        r.metadata["count"] = sum.count;
    } else if (stage == "scan") {
        r.columns = {{"target", CT::Text}, {"edited_layer", CT::Int}, {"majority_sign", CT::Bool}};
        for (std::size_t l = 0; l < cfg_.model.n_layers; ++l) {
            r.columns.push_back({"z" + std::to_string(l), CT::Real});
        }
        r.columns.push_back({"flagged", CT::Text});
        r.columns.push_back({"exact_hit", CT::Bool});
        auto row = [&](std::string target, int64_t layer, bool maj, const LayerScanReport & s, bool hit) {
            std::vector<Cell> cells{std::move(target), layer, maj};
            for (double z : s.z_scores) {
                cells.emplace_back(z);
            }
            cells.emplace_back(join_layers(s));
            cells.emplace_back(hit);
            r.add_row(std::move(cells));
        };
        const LayerScanReport & base = unedited_scan();
        row("unedited", -1, false, base, false);
        std::size_t maj = 0;
        std::size_t maj_hit = 0;
        for (const auto & s : scans()) {
            row("snapshot" + std::to_string(s.snapshot_id), i64(cfg_.edit_layer), is_majority_sign(s.direction), s.scan,
                s.exact_hit);
            maj += is_majority_sign(s.direction);
            maj_hit += is_majority_sign(s.direction) && s.exact_hit;
        }
        r.metadata["threshold"] = cfg_.scan_threshold;
        r.metadata["unedited_flags"] = base.flagged.size();
        r.metadata["majority_sign_snapshots"] = maj;
        r.metadata["majority_sign_exact_hits"] = maj_hit;
    } else if (stage == "pcs-increase") {
        r.columns = {{"id", CT::Int},          {"layer", CT::Int},           {"pcs_before", CT::Real},
                     {"pcs_after", CT::Real},   {"relative_increase", CT::Real}, {"majority_sign", CT::Bool}};
        const WeightMatrix & W = model().layers[cfg_.edit_layer].mlp_out;
        const double before = pcs(W);
        for (const auto & s : batch_successes()) {
            const double after = pcs(s.edited_matrix);
            r.add_row({i64(s.id), i64(s.layer), before, after, (after - before) / before,
                       is_majority_sign(direction_stats(s.update))});
        }
    } else if (stage == "probe-relation") {
        r.columns = {{"n_classes", CT::Int}, {"repeat", CT::Int},   {"relations", CT::Text},
                     {"accuracy", CT::Real}, {"baseline", CT::Real}, {"converged", CT::Bool},
                     {"audit_passed", CT::Bool}};
        json agg = json::array();
        for (const auto & run : probes()) {
            if (!run.result) {
                agg.push_back({{"n_classes", run.n_classes}, {"error", run.error}});
                continue;
            }
            const ProbeResult & pr = *run.result;
            for (std::size_t k = 0; k < pr.repeats.size(); ++k) {
                const ProbeRepeat & rep = pr.repeats[k];
                std::string rels;
                for (const auto & s : rep.relations) {
                    rels += (rels.empty() ? "" : ";") + s;
                }
                r.add_row({i64(run.n_classes), i64(k), rels, rep.accuracy, rep.baseline, rep.classifier_converged,
                           pr.audit_passed()});
            }
            agg.push_back({{"n_classes", run.n_classes},
                           {"mean_accuracy", pr.mean_accuracy},
                           {"std_accuracy", pr.std_accuracy},
                           {"mean_baseline", pr.mean_baseline}});
        }
        r.metadata["summary"] = agg;
    } else if (stage == "infer-object") {
        r.columns = {{"trained_layer", CT::Int}, {"id_accuracy", CT::Real}, {"ood_accuracy", CT::Real},
                     {"epochs_run", CT::Int},    {"freeze_audit_passed", CT::Bool}};
        for (const auto & res : object_inference()) {
            r.add_row({i64(res.trained_layer), res.id_accuracy, res.ood_accuracy, i64(res.epochs_run),
                       res.freeze_audit_passed});
        }
    } else if (stage == "similarity") {
        r.columns = {{"id", CT::Int}, {"majority_sign", CT::Bool}, {"k", CT::Int}, {"similarity", CT::Real}};
        std::map<std::size_t, bool> maj;
        for (const auto & s : batch_successes()) {
            maj[s.id] = is_majority_sign(direction_stats(s.update));
        }
        for (const auto & [id, prof] : similarity()) {
            for (std::size_t k = 0; k < prof.values.size(); ++k) {
                r.add_row({i64(id), maj[id], i64(k + 1), prof.values[k]});
            }
        }
    } else if (stage == "reverse") {
        r.columns = {{"k", CT::Int},           {"reversal_accuracy", CT::Real}, {"editing_accuracy", CT::Real},
                     {"reversal_std", CT::Real}, {"editing_std", CT::Real},     {"n_instances", CT::Int},
                     {"coincident", CT::Int}};
        const ReversalCurve & c = reversal();
        for (const auto & p : c.points) {
            r.add_row({i64(p.k), p.reversal_accuracy, p.editing_accuracy, p.reversal_std, p.editing_std,
                       i64(c.n_instances), i64(p.coincident)});
        }
        r.metadata["best_k"] = c.best().k;
    } else if (stage == "unique-preds") {
        r.columns = {{"weights", CT::Text}, {"snapshot", CT::Int}, {"input", CT::Int}, {"unique", CT::Int}};
        const UniqueRun & u = unique();
        for (std::size_t i = 0; i < u.unedited.counts.size(); ++i) {
            r.add_row({std::string("unedited"), int64_t{-1}, i64(i), i64(u.unedited.counts[i])});
        }
        for (const auto & [id, rep] : u.edited) {
            for (std::size_t i = 0; i < rep.counts.size(); ++i) {
                r.add_row({std::string("edited"), i64(id), i64(i), i64(rep.counts[i])});
            }
        }
        r.metadata["mean_unique_unedited"] = u.unedited.mean_unique;
        r.metadata["mean_unique_edited"] = u.edited_mean();
        r.metadata["k_max"] = cfg_.k_max;
        r.metadata["gen_tokens"] = cfg_.gen_tokens;
    } else if (stage == "qualitative") {
        r.columns = {{"id", CT::Int},          {"k", CT::Int},                {"input", CT::Text},
                     {"edited_object", CT::Text}, {"original_output", CT::Text}, {"approx_output", CT::Text}};
        const std::size_t k = reversal().best().k;
        std::vector<EditedSnapshot> succ = batch_successes();
        succ.resize(std::min(succ.size(), cfg_.qualitative_rows));
        const auto rows = qualitative_samples(model(), cfg_.model, succ, k, cfg_.gen_tokens, &corpus().vocab);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            r.add_row({i64(succ[i].id), i64(k), rows[i].input, rows[i].edited_object, rows[i].original_output,
                       rows[i].approx_output});
        }
    } else {
        throw Error(ErrorCode::InvalidConfig, "unknown stage " + stage);
    }
    return r;
}

StageOutcome Pipeline::run_stage(const std::string & stage, bool force) {
    StageOutcome o;
    o.stage = stage;
    const auto path = report_path(stage);
    if (!force && std::filesystem::exists(path)) {
        o.ok = true;
        o.skipped = true;
        return o;
    }
    const auto t0 = std::chrono::steady_clock::now();
    try {
        log("stage " + stage);
        build(stage).write(out_, format_);
        o.ok = true;
    } catch (const Error & e) {
        o.error = std::string(error_code_name(e.code())) + ": " + e.what();
    } catch (const std::exception & e) {
        o.error = e.what();
    }
    o.seconds = elapsed(t0);
    if (!o.ok) {
        log("stage " + stage + " failed: " + o.error);
    }
    return o;
}

std::vector<StageOutcome> Pipeline::run_all(bool force) {
    std::vector<StageOutcome> out;
    for (const char * s : kStages) {
        if (cfg_.runs(s)) {
            out.push_back(run_stage(s, force));
        }
    }
    return out;
}

std::vector<StageOutcome> paper_run(const ExperimentConfig & cfg, const std::filesystem::path & out_dir,
                                    ReportFormat format, bool quiet) {
    Pipeline p(cfg, out_dir, format, quiet);
    return p.run_all();
}

} // namespace edtf
