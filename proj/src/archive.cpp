#include "edtf/archive.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>

static_assert(std::endian::native == std::endian::little, "archive code assumes a little-endian host");

namespace edtf {

using nlohmann::json;

Tensor Tensor::from_matrix(std::string name, const WeightMatrix & m, DType dtype) {
    Tensor t;
    t.name = std::move(name);
    t.dtype = dtype;
    t.dims = {static_cast<uint64_t>(m.rows()), static_cast<uint64_t>(m.cols())};
    t.values.assign(m.data(), m.data() + m.size());
    return t;
}

Tensor Tensor::from_vector(std::string name, const Vector & v, DType dtype) {
    Tensor t;
    t.name = std::move(name);
    t.dtype = dtype;
    t.dims = {static_cast<uint64_t>(v.size())};
    t.values.assign(v.data(), v.data() + v.size());
    return t;
}

uint64_t Tensor::element_count() const {
    uint64_t n = 1;
    for (uint64_t d : dims) {
        n *= d;
    }
    return n;
}

WeightMatrix Tensor::matrix() const {
    if (dims.size() != 2) {
        throw Error(ErrorCode::ShapeMismatch, "tensor " + name + " is not 2-D");
    }
    return Eigen::Map<const WeightMatrix>(values.data(), static_cast<Eigen::Index>(dims[0]),
                                          static_cast<Eigen::Index>(dims[1]));
}

Vector Tensor::vector() const {
    if (dims.size() != 1) {
        throw Error(ErrorCode::ShapeMismatch, "tensor " + name + " is not 1-D");
    }
    return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(dims[0]));
}

const Tensor & Archive::at(const std::string & name) const {
    for (const auto & t : tensors) {
        if (t.name == name) {
            return t;
        }
    }
    throw Error(ErrorCode::IndexOutOfRange, "archive has no tensor " + name);
}

bool Archive::contains(const std::string & name) const {
    for (const auto & t : tensors) {
        if (t.name == name) {
            return true;
        }
    }
    return false;
}

std::string sha256_hex(std::span<const unsigned char> bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX * ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    static const char * hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

namespace {

template <typename T>
void put(std::vector<unsigned char> & out, T value) {
    const auto * p = reinterpret_cast<const unsigned char *>(&value);
    out.insert(out.end(), p, p + sizeof(T));
}

std::size_t element_size(DType d) {
    return d == DType::F32 ? 4 : 8;
}

class Reader {
public:
    explicit Reader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

    template <typename T>
    T get(const char * what) {
        need(sizeof(T), what);
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::span<const unsigned char> take(uint64_t n, const char * what) {
        need(n, what);
        auto s = bytes_.subspan(pos_, static_cast<std::size_t>(n));
        pos_ += static_cast<std::size_t>(n);
        return s;
    }

    std::size_t pos() const { return pos_; }

private:
    void need(uint64_t n, const char * what) {
        if (n > bytes_.size() - pos_) {
            throw Error(ErrorCode::IoError, std::string("archive truncated reading ") + what + " at offset " +
                                                std::to_string(pos_) + " (need " + std::to_string(n) +
                                                " bytes, file has " + std::to_string(bytes_.size()) + ")");
        }
    }

    std::span<const unsigned char> bytes_;
    std::size_t pos_ = 0;
};

struct Entry {
    std::string name;
    DType dtype;
    std::vector<uint64_t> dims;
    uint64_t offset;
    uint64_t count;
};

} // namespace

std::string write_archive(const std::filesystem::path & path, std::span<const Tensor> tensors,
                          const json & manifest, bool overwrite) {
    if (!manifest.is_object()) {
        throw Error(ErrorCode::InvalidConfig, "archive manifest must be a JSON object");
    }
    std::set<std::string> names;
    for (const auto & t : tensors) {
        if (!names.insert(t.name).second) {
            throw Error(ErrorCode::DuplicateName, "duplicate tensor name " + t.name);
        }
        if (t.element_count() != t.values.size()) {
            throw Error(ErrorCode::ShapeMismatch, "tensor " + t.name + " dims do not match its values");
        }
    }

    std::vector<unsigned char> payload;
    std::vector<unsigned char> table;
    for (const auto & t : tensors) {
        put<uint32_t>(table, static_cast<uint32_t>(t.name.size()));
        table.insert(table.end(), t.name.begin(), t.name.end());
        put<uint8_t>(table, static_cast<uint8_t>(t.dtype));
        put<uint32_t>(table, static_cast<uint32_t>(t.dims.size()));
        for (uint64_t d : t.dims) {
            put<uint64_t>(table, d);
        }
        put<uint64_t>(table, payload.size());
        for (double x : t.values) {
            if (t.dtype == DType::F32) {
                put<float>(payload, static_cast<float>(x));
            } else {
                put<double>(payload, x);
            }
        }
    }
    const std::string digest = sha256_hex(payload);
    json m = manifest;
    m["payload_sha256"] = digest;
    const std::string mtext = m.dump();

    std::vector<unsigned char> out;
    out.insert(out.end(), {'E', 'D', 'T', 'F'});
    put<uint32_t>(out, kArchiveVersion);
    put<uint32_t>(out, static_cast<uint32_t>(tensors.size()));
    out.insert(out.end(), table.begin(), table.end());
    put<uint64_t>(out, payload.size());
    out.insert(out.end(), payload.begin(), payload.end());
    put<uint64_t>(out, mtext.size());
    out.insert(out.end(), mtext.begin(), mtext.end());

    if (overwrite) {
        std::error_code ec;
        std::filesystem::remove(path, ec);
    }
    // "x": exclusive create, fails when the file exists.
    std::FILE * f = std::fopen(path.c_str(), "wbx");
    if (f == nullptr) {
        throw Error(ErrorCode::IoError, "cannot create archive " + path.string() + ": " + std::strerror(errno));
    }
    const std::size_t written = std::fwrite(out.data(), 1, out.size(), f);
    const bool closed = std::fclose(f) == 0;
    if (written != out.size() || !closed) {
        throw Error(ErrorCode::IoError, "short write to " + path.string());
    }
    return digest;
}

Archive parse_archive(std::span<const unsigned char> bytes) {
    Reader r(bytes);
    const auto magic = r.take(4, "magic");
    if (std::memcmp(magic.data(), "EDTF", 4) != 0) {
        throw Error(ErrorCode::BadMagic, "not an EDTF archive");
    }
    const auto version = r.get<uint32_t>("version");
    if (version != kArchiveVersion) {
        throw Error(ErrorCode::UnsupportedVersion, "archive version " + std::to_string(version) +
                                                        " (reader supports " + std::to_string(kArchiveVersion) + ")");
    }
    const auto n = r.get<uint32_t>("entry count");
    std::vector<Entry> entries;
    for (uint32_t i = 0; i < n; ++i) {
        Entry e;
        const auto len = r.get<uint32_t>("name length");
        const auto name = r.take(len, "name");
        e.name.assign(name.begin(), name.end());
        const auto dt = r.get<uint8_t>("dtype");
        if (dt > 1) {
            throw Error(ErrorCode::IoError, "unknown dtype " + std::to_string(dt) + " for " + e.name +
                                                " at offset " + std::to_string(r.pos() - 1));
        }
        e.dtype = static_cast<DType>(dt);
        const auto nd = r.get<uint32_t>("ndims");
        e.count = 1;
        for (uint32_t k = 0; k < nd; ++k) {
            e.dims.push_back(r.get<uint64_t>("dims"));
            e.count *= e.dims.back();
        }
        e.offset = r.get<uint64_t>("offset");
        entries.push_back(std::move(e));
    }
    const auto payload_size = r.get<uint64_t>("payload size");
    const std::size_t payload_start = r.pos();
    const auto payload = r.take(payload_size, "payload");
    const auto msize = r.get<uint64_t>("manifest size");
    const auto mbytes = r.take(msize, "manifest");
    if (r.pos() != bytes.size()) {
        throw Error(ErrorCode::IoError, "trailing bytes after manifest at offset " + std::to_string(r.pos()));
    }

    Archive a;
    try {
        a.manifest = json::parse(mbytes.begin(), mbytes.end());
    } catch (const json::exception & ex) {
        throw Error(ErrorCode::ParseError, std::string("archive manifest: ") + ex.what());
    }
    a.payload_sha256 = sha256_hex(payload);
    if (!a.manifest.is_object() || !a.manifest.contains("payload_sha256") ||
        a.manifest["payload_sha256"] != a.payload_sha256) {
        throw Error(ErrorCode::ChecksumMismatch, "payload hash does not match the manifest");
    }

    // Entries must tile the payload without overlap.
    std::vector<std::pair<uint64_t, uint64_t>> spans;
    std::set<std::string> names;
    for (const auto & e : entries) {
        if (!names.insert(e.name).second) {
            throw Error(ErrorCode::DuplicateName, "duplicate tensor name " + e.name);
        }
        const uint64_t nbytes = e.count * element_size(e.dtype);
        if (e.offset > payload_size || nbytes > payload_size - e.offset) {
            throw Error(ErrorCode::IoError, "tensor " + e.name + " exceeds the payload (offset " +
                                                std::to_string(payload_start + e.offset) + ")");
        }
        spans.emplace_back(e.offset, nbytes);
    }
    std::sort(spans.begin(), spans.end());
    uint64_t covered = 0;
    for (const auto & [off, len] : spans) {
        if (off < covered) {
            throw Error(ErrorCode::IoError, "overlapping tensors at payload offset " + std::to_string(off));
        }
        covered = off + len;
    }
    if (covered != payload_size) {
        throw Error(ErrorCode::IoError, "declared tensor sizes do not match the payload size");
    }

    for (const auto & e : entries) {
        Tensor t;
        t.name = e.name;
        t.dtype = e.dtype;
        t.dims = e.dims;
        t.values.resize(static_cast<std::size_t>(e.count));
        const unsigned char * p = payload.data() + e.offset;
        for (std::size_t i = 0; i < t.values.size(); ++i) {
            if (e.dtype == DType::F32) {
                float x;
                std::memcpy(&x, p + 4 * i, 4);
                t.values[i] = x;
            } else {
                std::memcpy(&t.values[i], p + 8 * i, 8);
            }
        }
        a.tensors.push_back(std::move(t));
    }
    return a;
}

Archive read_archive(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open archive " + path.string());
    }
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_archive(bytes);
}

void round_to_f32(ModelWeights & w) {
    w.for_each([](const std::string &, WeightMatrix & m) {
        m = m.cast<float>().cast<double>();
    });
}

json to_json(const ToyLmConfig & c) {
    return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},     {"d_hidden", c.d_hidden},
            {"n_layers", c.n_layers},     {"n_heads", c.n_heads},     {"max_seq_len", c.max_seq_len},
            {"nonlinearity", c.nonlinearity}, {"seed", c.seed}};
}

ToyLmConfig toy_lm_config_from_json(const json & j) {
    ToyLmConfig c;
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.d_model = j.value("d_model", c.d_model);
    c.d_hidden = j.value("d_hidden", c.d_hidden);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.nonlinearity = j.value("nonlinearity", c.nonlinearity);
    c.seed = j.value("seed", c.seed);
    return c;
}

json to_json(const EditRecord & e) {
    return {{"subject", e.subject},
            {"relation_id", e.relation_id},
            {"true_object", e.true_object},
            {"new_object", e.new_object},
            {"prompt_template", e.prompt_template},
            {"prompt", e.prompt},
            {"subject_token_span", {e.subject_token_span.first, e.subject_token_span.second}},
            {"target_token", e.target_token},
            {"true_token", e.true_token}};
}

EditRecord edit_record_from_json(const json & j) {
    EditRecord e;
    e.subject = j.at("subject").get<std::string>();
    e.relation_id = j.at("relation_id").get<std::string>();
    e.true_object = j.at("true_object").get<std::string>();
    e.new_object = j.at("new_object").get<std::string>();
    e.prompt_template = j.at("prompt_template").get<std::string>();
    e.prompt = j.at("prompt").get<TokenSequence>();
    e.subject_token_span = {j.at("subject_token_span").at(0).get<std::size_t>(),
                            j.at("subject_token_span").at(1).get<std::size_t>()};
    e.target_token = j.at("target_token").get<int32_t>();
    e.true_token = j.at("true_token").get<int32_t>();
    e.validate();
    return e;
}

std::string write_model(const std::filesystem::path & path, const ModelWeights & w, const ToyLmConfig & cfg,
                        const json & extra, bool overwrite) {
    w.check_shapes(cfg);
    std::vector<Tensor> tensors;
    w.for_each([&](const std::string & name, const WeightMatrix & m) {
        tensors.push_back(Tensor::from_matrix(name, m, DType::F32));
    });
    json m = extra;
    m["kind"] = "model";
    m["model_config"] = to_json(cfg);
    m["dtype"] = "f32";
    return write_archive(path, tensors, m, overwrite);
}

LoadedModel read_model(const std::filesystem::path & path) {
    Archive a = read_archive(path);
    if (a.manifest.value("kind", "") != "model") {
        throw Error(ErrorCode::RecordInvalid, path.string() + " is not a model archive");
    }
    LoadedModel out;
    out.config = toy_lm_config_from_json(a.manifest.at("model_config"));
    out.config.validate();
    out.weights = ModelWeights::zeros(out.config);
    out.weights.for_each([&](const std::string & name, WeightMatrix & m) {
        const WeightMatrix t = a.at(name).matrix();
        if (t.rows() != m.rows() || t.cols() != m.cols()) {
            throw Error(ErrorCode::ShapeMismatch, "tensor " + name + " has the wrong shape");
        }
        m = t;
    });
    out.manifest = std::move(a.manifest);
    return out;
}

std::string write_snapshots(const std::filesystem::path & path, const WeightMatrix & original,
                            std::span<const EditedSnapshot> snapshots, const json & extra, bool overwrite) {
    std::vector<Tensor> tensors{Tensor::from_matrix("original", original, DType::F64)};
    json records = json::array();
    const std::string original_hash = matrix_hash(original);
    for (std::size_t i = 0; i < snapshots.size(); ++i) {
        const EditedSnapshot & s = snapshots[i];
        if (s.original_matrix_hash != original_hash) {
            throw Error(ErrorCode::RecordInvalid, "snapshot " + std::to_string(s.id) + " edits a different matrix");
        }
        const std::string key = "snap" + std::to_string(i);
        tensors.push_back(Tensor::from_vector(key + ".u", s.update.u, DType::F64));
        tensors.push_back(Tensor::from_vector(key + ".v", s.update.v, DType::F64));
        records.push_back({{"id", s.id},
                           {"layer", s.layer},
                           {"seed", s.seed},
                           {"success", s.success},
                           {"optimization_steps", s.optimization_steps},
                           {"target_probability", s.target_probability},
                           {"scale", s.update.scale},
                           {"edited_matrix_hash", matrix_hash(s.edited_matrix)},
                           {"edit", to_json(s.edit)}});
    }
    json m = extra;
    m["kind"] = "snapshots";
    m["model_config"] = snapshots.empty() ? json::object() : to_json(snapshots.front().model_config);
    m["original_matrix_hash"] = original_hash;
    m["dtype"] = "f64";
    m["snapshots"] = std::move(records);
    return write_archive(path, tensors, m, overwrite);
}

std::vector<EditedSnapshot> read_snapshots(const std::filesystem::path & path) {
    const Archive a = read_archive(path);
    if (a.manifest.value("kind", "") != "snapshots") {
        throw Error(ErrorCode::RecordInvalid, path.string() + " is not a snapshot archive");
    }
    const WeightMatrix original = a.at("original").matrix();
    const std::string original_hash = matrix_hash(original);
    if (original_hash != a.manifest.at("original_matrix_hash")) {
        throw Error(ErrorCode::ChecksumMismatch, "original matrix hash mismatch");
    }
    const ToyLmConfig cfg = toy_lm_config_from_json(a.manifest.at("model_config"));
    std::vector<EditedSnapshot> out;
    const json & records = a.manifest.at("snapshots");
    for (std::size_t i = 0; i < records.size(); ++i) {
        const json & r = records[i];
        EditedSnapshot s;
        s.id = r.at("id").get<std::size_t>();
        s.model_config = cfg;
        s.layer = r.at("layer").get<std::size_t>();
        s.seed = r.at("seed").get<uint64_t>();
        s.success = r.at("success").get<bool>();
        s.optimization_steps = r.at("optimization_steps").get<std::size_t>();
        s.target_probability = r.at("target_probability").get<double>();
        s.original_matrix_hash = original_hash;
        s.edit = edit_record_from_json(r.at("edit"));
        const std::string key = "snap" + std::to_string(i);
        s.update.u = a.at(key + ".u").vector();
        s.update.v = a.at(key + ".v").vector();
        s.update.scale = r.at("scale").get<double>();
        // value-optimization failures carry a zero update and keep the original bytes
        const bool has_update = s.update.u.size() > 0 && !s.update.u.isZero(0.0);
        s.edited_matrix = has_update ? WeightMatrix(original + s.update.materialize()) : original;
        if (matrix_hash(s.edited_matrix) != r.at("edited_matrix_hash")) {
            throw Error(ErrorCode::ChecksumMismatch, "snapshot " + std::to_string(s.id) + " does not rebuild");
        }
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace edtf
