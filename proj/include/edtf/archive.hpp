#pragma once

#include "edtf/editor.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace edtf {

enum class DType : uint8_t { F32 = 0, F64 = 1 };

inline constexpr uint32_t kArchiveVersion = 1;

// Values are held as f64 in memory whatever the on-disk dtype.
struct Tensor {
    std::string name;
    DType dtype = DType::F64;
    std::vector<uint64_t> dims;
    std::vector<double> values;

    static Tensor from_matrix(std::string name, const WeightMatrix & m, DType dtype);
    static Tensor from_vector(std::string name, const Vector & v, DType dtype);
    WeightMatrix matrix() const;
    Vector vector() const;
    uint64_t element_count() const;
    bool operator==(const Tensor &) const = default;
};

struct Archive {
    std::vector<Tensor> tensors;
    nlohmann::json manifest;
    std::string payload_sha256;

    const Tensor & at(const std::string & name) const;
    bool contains(const std::string & name) const;
};

std::string sha256_hex(std::span<const unsigned char> bytes);

// Layout (little-endian): "EDTF", u32 version, u32 entry count, entries
// {u32 name length, name, u8 dtype, u32 ndims, u64 dims..., u64 payload offset},
// u64 payload size, payload, u64 manifest size, manifest JSON.
// The manifest gains "payload_sha256". Fails if path exists unless overwrite.
// Returns the payload digest.
std::string write_archive(const std::filesystem::path & path, std::span<const Tensor> tensors,
                          const nlohmann::json & manifest, bool overwrite = false);

Archive read_archive(const std::filesystem::path & path);
Archive parse_archive(std::span<const unsigned char> bytes);

// Rounds every weight to the nearest f32 so on-disk and in-memory weights agree.
void round_to_f32(ModelWeights & w);

nlohmann::json to_json(const ToyLmConfig & cfg);
ToyLmConfig toy_lm_config_from_json(const nlohmann::json & j);

nlohmann::json to_json(const EditRecord & e);
EditRecord edit_record_from_json(const nlohmann::json & j);

// Model weights as f32 tensors named by ModelWeights::for_each; cfg goes in the manifest.
std::string write_model(const std::filesystem::path & path, const ModelWeights & w, const ToyLmConfig & cfg,
                        const nlohmann::json & extra = nlohmann::json::object(), bool overwrite = false);

struct LoadedModel {
    ModelWeights weights;
    ToyLmConfig config;
    nlohmann::json manifest;
};
LoadedModel read_model(const std::filesystem::path & path);

// Snapshots sharing one original matrix: the original once plus u and v per
// snapshot. Edited matrices are rebuilt on read and checked against their hashes.
std::string write_snapshots(const std::filesystem::path & path, const WeightMatrix & original,
                            std::span<const EditedSnapshot> snapshots,
                            const nlohmann::json & extra = nlohmann::json::object(), bool overwrite = false);
std::vector<EditedSnapshot> read_snapshots(const std::filesystem::path & path);

} // namespace edtf
