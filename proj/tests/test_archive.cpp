#include "edtf/archive.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

using namespace edtf;

namespace {

std::vector<unsigned char> slurp(const std::filesystem::path & p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path & p, const std::vector<unsigned char> & bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ErrorCode code_of(const std::function<void()> & fn) {
    try {
        fn();
    } catch (const Error & e) {
        return e.code();
    }
    FAIL("no error thrown");
    return ErrorCode::IoError;
}

std::vector<Tensor> sample_tensors() {
    std::mt19937_64 rng(51);
    return {Tensor::from_matrix("a", test::random_matrix(3, 4, rng), DType::F64),
            Tensor::from_vector("b", test::random_vector(5, rng), DType::F32),
            Tensor::from_matrix("c", test::random_matrix(2, 2, rng), DType::F32)};
}

} // namespace

TEST_CASE("sha256 of a known string") {
    const std::string s = "abc";
    const auto * p = reinterpret_cast<const unsigned char *>(s.data());
    CHECK(sha256_hex({p, s.size()}) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("archive round trip keeps values, dtypes and manifest") {
    test::TempDir dir("arch");
    const auto tensors = sample_tensors();
    const nlohmann::json manifest = {{"note", "hello"}, {"n", 3}};
    const std::string digest = write_archive(dir / "x.edtf", tensors, manifest);
    const Archive a = read_archive(dir / "x.edtf");
    CHECK(a.payload_sha256 == digest);
    CHECK(a.manifest.at("payload_sha256") == digest);
    CHECK(a.manifest.at("note") == "hello");
    REQUIRE(a.tensors.size() == 3);
    CHECK(a.at("a") == tensors[0]);
    CHECK(a.at("b").dtype == DType::F32);
    for (std::size_t i = 0; i < tensors[1].values.size(); ++i) {
        CHECK(a.at("b").values[i] == static_cast<double>(static_cast<float>(tensors[1].values[i])));
    }
    CHECK(a.at("a").matrix().rows() == 3);
    CHECK(a.at("b").vector().size() == 5);
    CHECK_THROWS_AS(a.at("b").matrix(), Error);
    CHECK_THROWS_AS(a.at("missing"), Error);
    CHECK(a.contains("c"));

    // bit-identical rewrite
    write_archive(dir / "y.edtf", tensors, manifest);
    CHECK(slurp(dir / "x.edtf") == slurp(dir / "y.edtf"));
}

TEST_CASE("archive writing refuses to clobber and rejects duplicates") {
    test::TempDir dir("clobber");
    const auto tensors = sample_tensors();
    write_archive(dir / "x.edtf", tensors, nlohmann::json::object());
    CHECK(code_of([&] { write_archive(dir / "x.edtf", tensors, nlohmann::json::object()); }) == ErrorCode::IoError);
    CHECK_NOTHROW(write_archive(dir / "x.edtf", tensors, nlohmann::json::object(), true));
    auto dup = tensors;
    dup.push_back(tensors[0]);
    CHECK(code_of([&] { write_archive(dir / "d.edtf", dup, nlohmann::json::object()); }) == ErrorCode::DuplicateName);
    auto bad = tensors;
    bad[0].dims = {5, 5};
    CHECK(code_of([&] { write_archive(dir / "s.edtf", bad, nlohmann::json::object()); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("corruption, truncation and bad headers are detected") {
    test::TempDir dir("corrupt");
    write_archive(dir / "x.edtf", sample_tensors(), {{"k", 1}});
    const auto bytes = slurp(dir / "x.edtf");
    CHECK_NOTHROW(parse_archive(bytes));

    // locate the payload: it is the f64 data of tensor "a", find its first value
    const Archive ok = parse_archive(bytes);
    double first = ok.at("a").values[0];
    unsigned char pattern[8];
    std::memcpy(pattern, &first, 8);
    const auto it = std::search(bytes.begin(), bytes.end(), pattern, pattern + 8);
    REQUIRE(it != bytes.end());
    auto flipped = bytes;
    flipped[static_cast<std::size_t>(it - bytes.begin()) + 3] ^= 0x10;
    CHECK(code_of([&] { parse_archive(flipped); }) == ErrorCode::ChecksumMismatch);
    spit(dir / "flip.edtf", flipped);
    CHECK(code_of([&] { read_archive(dir / "flip.edtf"); }) == ErrorCode::ChecksumMismatch);

    for (std::size_t cut : {std::size_t{2}, std::size_t{6}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
        const std::vector<unsigned char> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
        INFO("cut at ", cut);
        CHECK(code_of([&] { parse_archive(part); }) == ErrorCode::IoError);
    }

    auto magic = bytes;
    magic[0] = 'X';
    CHECK(code_of([&] { parse_archive(magic); }) == ErrorCode::BadMagic);
    auto version = bytes;
    version[4] = 9;
    CHECK(code_of([&] { parse_archive(version); }) == ErrorCode::UnsupportedVersion);
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK(code_of([&] { parse_archive(trailing); }) == ErrorCode::IoError);
    CHECK(code_of([&] { read_archive(dir / "nope.edtf"); }) == ErrorCode::IoError);
}

TEST_CASE("model archive round trip") {
    test::TempDir dir("model");
    const ToyLmConfig cfg = test::tiny_config();
    ModelWeights w = ModelWeights::random_init(cfg);
    write_model(dir / "m.edtf", w, cfg, {{"recall", 0.5}});
    const LoadedModel m = read_model(dir / "m.edtf");
    round_to_f32(w);
    CHECK(m.weights == w);
    CHECK(m.config == cfg);
    CHECK(m.manifest.at("recall") == 0.5);
    CHECK(toy_lm_config_from_json(to_json(cfg)) == cfg);
    write_archive(dir / "other.edtf", sample_tensors(), nlohmann::json::object());
    CHECK_THROWS_AS(read_model(dir / "other.edtf"), Error);
}

TEST_CASE("snapshot archive round trip and tamper detection") {
    const auto & s = test::small_world();
    test::TempDir dir("snaps");
    std::vector<TokenSequence> prompts;
    for (const auto & f : s.corpus.facts) {
        prompts.push_back(s.corpus.prompt_tokens(f));
    }
    const WeightMatrix C = estimate_key_covariance(s.weights, s.cfg, prompts, 1);
    std::vector<EditedSnapshot> snaps;
    for (std::size_t i = 0; i < 4; ++i) {
        snaps.push_back(apply_edit(s.weights, s.cfg, make_edit_record(s.corpus.facts[i], s.corpus), 1, C));
        snaps.back().id = i;
    }
    // a failed edit keeps the original matrix
    EditRecord hard = make_edit_record(s.corpus.facts[5], s.corpus);
    EditConfig no_steps;
    no_steps.value.max_steps = 0;
    snaps.push_back(apply_edit(s.weights, s.cfg, hard, 1, C, no_steps));
    snaps.back().id = 5;
    REQUIRE_FALSE(snaps.back().success);
    // an update that fails the post-edit check still carries its matrix
    snaps.push_back(snaps[0]);
    snaps.back().success = false;
    snaps.back().id = 6;

    const WeightMatrix & W = s.weights.layers[1].mlp_out;
    write_snapshots(dir / "s.edtf", W, snaps, {{"cache_key", "k"}});
    const auto back = read_snapshots(dir / "s.edtf");
    REQUIRE(back.size() == snaps.size());
    for (std::size_t i = 0; i < snaps.size(); ++i) {
        CHECK(back[i].id == snaps[i].id);
        CHECK(back[i].success == snaps[i].success);
        CHECK(back[i].edited_matrix == snaps[i].edited_matrix);
        CHECK(back[i].update.u == snaps[i].update.u);
        CHECK(back[i].edit.prompt == snaps[i].edit.prompt);
        CHECK(back[i].edit.target_token == snaps[i].edit.target_token);
        CHECK(back[i].model_config == s.cfg);
        CHECK(back[i].target_probability == snaps[i].target_probability);
    }

    Archive a = read_archive(dir / "s.edtf");
    CHECK(a.manifest.at("cache_key") == "k");
    a.manifest["snapshots"][1]["edited_matrix_hash"] = matrix_hash(W);
    write_archive(dir / "t.edtf", a.tensors, a.manifest);
    CHECK(code_of([&] { read_snapshots(dir / "t.edtf"); }) == ErrorCode::ChecksumMismatch);

    auto other = snaps;
    other[0].original_matrix_hash = "0";
    CHECK(code_of([&] { write_snapshots(dir / "u.edtf", W, other); }) == ErrorCode::RecordInvalid);
}

TEST_CASE("edit record json round trip") {
    const auto & s = test::small_world();
    const EditRecord e = make_edit_record(s.corpus.facts[2], s.corpus);
    const EditRecord b = edit_record_from_json(to_json(e));
    CHECK(b.subject == e.subject);
    CHECK(b.prompt == e.prompt);
    CHECK(b.subject_token_span == e.subject_token_span);
    CHECK(b.true_token == e.true_token);
}
