#pragma once

#include "edtf/config.hpp"
#include "edtf/detect.hpp"
#include "edtf/object_infer.hpp"
#include "edtf/probe.hpp"
#include "edtf/report.hpp"
#include "edtf/reversal.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace edtf {

struct StageOutcome {
    std::string stage;
    bool ok = false;
    bool skipped = false; // report already present
    std::string error;
    double seconds = 0.0;
};

struct ScanRow {
    std::size_t snapshot_id = 0;
    DirectionStats direction;
    LayerScanReport scan;
    bool exact_hit = false; // flagged exactly the edited layer
};

struct ProbeRun {
    std::size_t n_classes = 0;
    std::optional<ProbeResult> result;
    std::string error;
    double seconds = 0.0;
};

struct UniqueRun {
    UniquePredictionReport unedited;
    std::vector<std::pair<std::size_t, UniquePredictionReport>> edited; // (snapshot id, report)
    double edited_mean() const;
};

// Lazily computes and caches every pipeline product under out_dir.
// Model and snapshot archives live in out_dir/cache; reports in out_dir.
class Pipeline {
public:
    Pipeline(ExperimentConfig cfg, std::filesystem::path out_dir, ReportFormat format = ReportFormat::Csv,
             bool quiet = true);

    const ExperimentConfig & config() const { return cfg_; }
    const std::filesystem::path & out_dir() const { return out_; }
    std::filesystem::path report_path(const std::string & stage) const;

    const SyntheticCorpus & corpus();
    const ModelWeights & model();
    const nlohmann::json & model_manifest();
    const std::vector<EditedSnapshot> & snapshots();     // one per corpus fact
    const std::vector<std::size_t> & batch_indices();     // seeded edit batch
    std::vector<EditedSnapshot> batch();
    std::vector<EditedSnapshot> batch_successes();
    double edit_seconds();                                // wall time of the batch edit, 0 when cached

    const std::vector<ScanRow> & scans();
    const LayerScanReport & unedited_scan();
    const std::vector<ProbeRun> & probes();
    const std::vector<ObjectInferenceResult> & object_inference();
    const std::vector<std::pair<std::size_t, SimilarityProfile>> & similarity();
    const ReversalCurve & reversal();
    const UniqueRun & unique();

    ForensicReport build(const std::string & stage);

    // Writes the stage report; skips when it exists unless force.
    StageOutcome run_stage(const std::string & stage, bool force = false);
    // Every configured stage in order. Failures are recorded, later stages still run.
    std::vector<StageOutcome> run_all(bool force = false);

private:
    void log(const std::string & msg) const;
    nlohmann::json model_key() const;
    nlohmann::json snapshot_key() const;

    ExperimentConfig cfg_;
    std::filesystem::path out_;
    ReportFormat format_;
    bool quiet_;

    std::optional<SyntheticCorpus> corpus_;
    std::optional<ModelWeights> model_;
    nlohmann::json model_manifest_;
    std::optional<std::vector<EditedSnapshot>> snapshots_;
    std::optional<std::vector<std::size_t>> batch_;
    double edit_seconds_ = 0.0;
    std::optional<std::vector<ScanRow>> scans_;
    std::optional<LayerScanReport> unedited_scan_;
    std::optional<std::vector<ProbeRun>> probes_;
    std::optional<std::vector<ObjectInferenceResult>> object_inference_;
    std::optional<std::vector<std::pair<std::size_t, SimilarityProfile>>> similarity_;
    std::optional<ReversalCurve> reversal_;
    std::optional<UniqueRun> unique_;
};

// Full pipeline into out_dir; returns one outcome per stage.
std::vector<StageOutcome> paper_run(const ExperimentConfig & cfg, const std::filesystem::path & out_dir,
                                    ReportFormat format = ReportFormat::Csv, bool quiet = true);

} // namespace edtf
