#include "edtf/config.hpp"
#include "edtf/report.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

using namespace edtf;

namespace {

ForensicReport sample_report() {
    ForensicReport r;
    r.kind = "sample";
    r.metadata = {{"mean", 0.25}, {"note", "x"}};
    r.columns = {{"id", ColumnType::Int}, {"score", ColumnType::Real}, {"name", ColumnType::Text},
                 {"ok", ColumnType::Bool}};
    r.add_row({int64_t{1}, 0.1, std::string("plain"), true});
    r.add_row({int64_t{-7}, 1e-300, std::string("has, comma"), false});
    r.add_row({int64_t{3}, 2.0 / 3.0, std::string("quote \" and\nnewline"), true});
    return r;
}

std::string read_file(const std::filesystem::path & p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("real formatting is shortest round trip") {
    CHECK(format_real(0.1) == "0.1");
    CHECK(format_real(2.0) == "2");
    CHECK(std::stod(format_real(2.0 / 3.0)) == 2.0 / 3.0);
    CHECK(format_real(std::nan("")) == "nan");
    CHECK(format_real(-HUGE_VAL) == "-inf");
}

TEST_CASE("csv output follows RFC 4180") {
    const std::string csv = sample_report().to_csv();
    CHECK(csv.rfind("id,score,name,ok\r\n1,0.1,plain,true\r\n", 0) == 0);
    CHECK(csv.find("\"has, comma\"") != std::string::npos);
    CHECK(csv.find("\"quote \"\" and\nnewline\"") != std::string::npos);
    CHECK(csv.substr(csv.size() - 2) == "\r\n");
}

TEST_CASE("csv and json round trips") {
    const ForensicReport r = sample_report();
    const ForensicReport from_csv = ForensicReport::from_csv(r.to_csv(), r.kind, r.columns);
    CHECK(from_csv.rows == r.rows);
    const ForensicReport from_json = ForensicReport::from_json(r.to_json());
    CHECK(from_json == r);
    CHECK(ForensicReport::from_json(nlohmann::json::parse(r.to_json().dump())) == r);

    ForensicReport odd;
    odd.kind = "odd";
    odd.columns = {{"x", ColumnType::Real}};
    odd.add_row({std::nan("")});
    odd.add_row({HUGE_VAL});
    const ForensicReport back = ForensicReport::from_json(nlohmann::json::parse(odd.to_json().dump()));
    CHECK(std::isnan(std::get<double>(back.rows[0][0])));
    CHECK(std::isinf(std::get<double>(back.rows[1][0])));
    const ForensicReport back_csv = ForensicReport::from_csv(odd.to_csv(), "odd", odd.columns);
    CHECK(std::isinf(std::get<double>(back_csv.rows[1][0])));
}

TEST_CASE("report rows are type checked and malformed input rejected") {
    ForensicReport r = sample_report();
    CHECK_THROWS_AS(r.add_row({int64_t{1}, 0.5, std::string("a")}), Error);
    CHECK_THROWS_AS(r.add_row({0.5, 0.5, std::string("a"), true}), Error);
    CHECK_THROWS_AS(ForensicReport::from_csv("id,score\r\n", "s", r.columns), Error);
    CHECK_THROWS_AS(ForensicReport::from_csv("id,score,name,ok\r\nx,1,a,true\r\n", "s", r.columns), Error);
    CHECK_THROWS_AS(ForensicReport::from_csv("id,score,name,ok\r\n1,1,\"a,true\r\n", "s", r.columns), Error);
    CHECK_THROWS_AS(ForensicReport::from_csv("", "s", r.columns), Error);
    CHECK_THROWS_AS(ForensicReport::from_json(nlohmann::json{{"kind", 1}}), Error);
    CHECK_THROWS_AS(parse_report_format("xml"), Error);
}

TEST_CASE("reports are written under their kind") {
    test::TempDir dir("report");
    const ForensicReport r = sample_report();
    r.write(dir.path(), ReportFormat::Csv);
    r.write(dir.path(), ReportFormat::Json);
    CHECK(read_file(dir / "sample.csv") == r.to_csv());
    const ForensicReport j = ForensicReport::from_json(nlohmann::json::parse(read_file(dir / "sample.json")));
    CHECK(j == r);
    CHECK(std::string(extension(ReportFormat::Json)) == ".json");
}

TEST_CASE("experiment config defaults and json round trip") {
    const ExperimentConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.edit_layer == 1);
    CHECK(c.k_max == 15);
    CHECK(c.probe_classes == std::vector<std::size_t>{2, 3, 5});
    CHECK(c.runs("scan"));
    const nlohmann::json j = to_json(c);
    CHECK(to_json(experiment_config_from_json(j)) == j);

    ExperimentConfig s;
    s.apply_seed(99);
    CHECK(s.seed == 99);
    CHECK(s.model.seed == 99);
    CHECK(s.corpus.seed == 99);
    CHECK(s.pretrain.optimizer.seed == 99);

    ExperimentConfig only;
    only.stages = {"edit"};
    CHECK(only.runs("edit"));
    CHECK_FALSE(only.runs("scan"));
}

TEST_CASE("experiment config rejects bad values and unknown keys") {
    nlohmann::json j = to_json(ExperimentConfig{});
    j["bogus"] = 1;
    CHECK_THROWS_AS(experiment_config_from_json(j), Error);
    j = to_json(ExperimentConfig{});
    j["model"]["typo"] = 1;
    CHECK_THROWS_AS(experiment_config_from_json(j), Error);
    j = to_json(ExperimentConfig{});
    j["edit_layer"] = 9;
    CHECK_THROWS_AS(experiment_config_from_json(j), Error);
    j = to_json(ExperimentConfig{});
    j["stages"] = {"nonsense"};
    CHECK_THROWS_AS(experiment_config_from_json(j), Error);
    j = to_json(ExperimentConfig{});
    j["k_max"] = "many";
    CHECK_THROWS_AS(experiment_config_from_json(j), Error);

    test::TempDir dir("cfg");
    std::ofstream(dir / "bad.json") << "{ not json";
    try {
        load_experiment_config(dir / "bad.json");
        FAIL("expected ParseError");
    } catch (const Error & e) {
        CHECK(e.code() == ErrorCode::ParseError);
    }
    std::ofstream(dir / "ok.json") << R"({"k_max": 7})";
    CHECK(load_experiment_config(dir / "ok.json").k_max == 7);
}
