#include "edtf/cli.hpp"

#include "edtf/archive.hpp"
#include "edtf/harness.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <regex>

namespace edtf {

namespace {

struct Options {
    std::string config;
    std::optional<uint64_t> seed;
    std::string out;
    std::string format = "csv";
    std::optional<std::size_t> layer;
    std::optional<std::size_t> k_max;
    bool quiet = false;
    std::string archive;
};

bool is_validation(ErrorCode c) {
    switch (c) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::ParseError:
    case ErrorCode::IndexOutOfRange:
        return true;
    default:
        return false;
    }
}

// Per-layer scan of an arbitrary archive: layerN.mlp_out tensors when present,
// otherwise every 2-D tensor in archive order.
ForensicReport scan_archive(const std::string & path, double threshold) {
    const Archive a = read_archive(path);
    static const std::regex layer_re(R"(layer(\d+)\.mlp_out)");
    std::vector<const Tensor *> picked;
    for (const auto & t : a.tensors) {
        if (std::regex_match(t.name, layer_re)) {
            picked.push_back(&t);
        }
    }
    if (picked.empty()) {
        for (const auto & t : a.tensors) {
            if (t.dims.size() == 2) {
                picked.push_back(&t);
            }
        }
    }
    std::vector<WeightMatrix> mats;
    for (const Tensor * t : picked) {
        mats.push_back(t->matrix());
    }
    const LayerScanReport s = scan_layers(mats, threshold);
    ForensicReport r;
    r.kind = "scan";
    r.metadata["archive"] = path;
    r.metadata["threshold"] = threshold;
    r.metadata["median"] = s.median;
    r.metadata["mad"] = s.mad;
    r.metadata["degenerate"] = s.degenerate;
    r.metadata["flagged"] = s.flagged.size();
    r.columns = {{"index", ColumnType::Int},
                 {"tensor", ColumnType::Text},
                 {"pcs", ColumnType::Real},
                 {"z", ColumnType::Real},
                 {"flagged", ColumnType::Bool}};
    for (std::size_t i = 0; i < picked.size(); ++i) {
        bool flagged = false;
        for (const auto & [l, z] : s.flagged) {
            flagged = flagged || l == i;
        }
        r.add_row({static_cast<int64_t>(i), picked[i]->name, s.pcs[i], s.z_scores[i], flagged});
    }
    return r;
}

} // namespace

int cli_run(const std::vector<std::string> & args, std::ostream & out, std::ostream & err) {
    CLI::App app{"Forensics toolkit for rank-one edits of transformer MLP weights", "edtf"};
    app.require_subcommand(1, 1);
    Options o;
    const char * env_out = std::getenv("EDTF_OUT");
    o.out = env_out != nullptr && *env_out != '\0' ? env_out : "edtf_out";

    auto add_common = [&](CLI::App * sub) {
        sub->add_option("--config", o.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seed, "Global seed override");
        sub->add_option("--out", o.out, "Output directory (default $EDTF_OUT or ./edtf_out)");
        sub->add_option("--format", o.format, "Report format")->check(CLI::IsMember({"csv", "json"}));
        sub->add_option("--layer", o.layer, "Edit layer (0-based)");
        sub->add_option("--k-max", o.k_max, "Largest k for rank approximations");
        sub->add_flag("--quiet", o.quiet, "No progress output");
    };
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"pretrain", "Pretrain the toy model on the synthetic corpus"},
        {"edit", "Apply one rank-one edit per fact"},
        {"scan", "Layer scan by pairwise cosine similarity"},
        {"direction", "Sign statistics of the update vectors"},
        {"probe-relation", "Relation classification from edited weights"},
        {"infer-object", "Decode the edited object from edited weights"},
        {"reverse", "Bottom-rank reversal curve"},
        {"unique-preds", "Unique-prediction detector"},
        {"report", "Run every stage and write all reports"},
    };
    for (const auto & [name, help] : commands) {
        CLI::App * sub = app.add_subcommand(name, help);
        add_common(sub);
        if (name == "scan") {
            sub->add_option("archive", o.archive, "Scan this archive instead of the pipeline model")
                ->check(CLI::ExistingFile);
        }
    }

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp & e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp & e) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError & e) {
        err << "edtf: " << e.what() << "\n" << "run 'edtf --help' for usage\n";
        return 1;
    }
    const std::string cmd = app.get_subcommands().front()->get_name();

    ExperimentConfig cfg;
    ReportFormat fmt;
    try {
        if (!o.config.empty()) {
            cfg = load_experiment_config(o.config);
        }
        if (o.seed) {
            cfg.apply_seed(*o.seed);
        }
        if (o.layer) {
            cfg.edit_layer = *o.layer;
        }
        if (o.k_max) {
            cfg.k_max = *o.k_max;
        }
        cfg.validate();
        fmt = parse_report_format(o.format);
    } catch (const Error & e) {
        err << "edtf: " << error_code_name(e.code()) << ": " << e.what() << "\n";
        return 1;
    }

    try {
        if (cmd == "scan" && !o.archive.empty()) {
            const ForensicReport r = scan_archive(o.archive, cfg.scan_threshold);
            r.write(o.out, fmt);
            if (!o.quiet) {
                out << "scan: " << r.metadata["flagged"].get<std::size_t>() << " flagged -> "
                    << (std::filesystem::path(o.out) / ("scan" + std::string(extension(fmt)))).string() << "\n";
            }
            return 0;
        }
        Pipeline p(cfg, o.out, fmt, o.quiet);
        std::vector<StageOutcome> outcomes;
        if (cmd == "report") {
            outcomes = p.run_all();
        } else {
            outcomes.push_back(p.run_stage(cmd, true));
        }
        bool ok = true;
        for (const auto & s : outcomes) {
            ok = ok && s.ok;
            if (!s.ok) {
                err << "edtf: stage " << s.stage << " failed: " << s.error << "\n";
            } else if (!o.quiet) {
                out << s.stage << (s.skipped ? ": up to date " : ": wrote ") << p.report_path(s.stage).string() << "\n";
            }
        }
        return ok ? 0 : 2;
    } catch (const Error & e) {
        err << "edtf: " << error_code_name(e.code()) << ": " << e.what() << "\n";
        return is_validation(e.code()) ? 1 : 2;
    } catch (const std::exception & e) {
        err << "edtf: " << e.what() << "\n";
        return 2;
    }
}

int cli_run(int argc, char ** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) {
        args.emplace_back(argv[i]);
    }
    return cli_run(args, std::cout, std::cerr);
}

} // namespace edtf
