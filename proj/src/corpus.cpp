#include "edtf/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace edtf {

namespace {

constexpr const char * kSubjectSlot = "{subject}";

std::size_t count_occurrences(const std::string & s, const std::string & needle) {
    std::size_t n = 0;
    for (std::size_t pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + needle.size())) {
        ++n;
    }
    return n;
}

// 1-based line number where each top-level array element starts.
std::vector<std::size_t> element_start_lines(const std::string & text) {
    std::vector<std::size_t> lines;
    std::size_t line = 1;
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    bool expect_element = false;
    for (char c : text) {
        if (c == '\n') {
            ++line;
        }
        if (in_string) {
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (depth == 1 && expect_element && !std::isspace(static_cast<unsigned char>(c)) && c != ']') {
            lines.push_back(line);
            expect_element = false;
        }
        switch (c) {
            case '"': in_string = true; break;
            case '[':
            case '{':
                ++depth;
                if (depth == 1) {
                    expect_element = true;
                }
                break;
            case ']':
            case '}': --depth; break;
            case ',':
                if (depth == 1) {
                    expect_element = true;
                }
                break;
            default: break;
        }
    }
    return lines;
}

std::string string_field(const nlohmann::json & obj, const char * key) {
    if (!obj.contains(key)) {
        throw Error(ErrorCode::RecordInvalid, std::string("missing field '") + key + "'");
    }
    const auto & v = obj.at(key);
    if (v.is_string()) {
        return v.get<std::string>();
    }
    if (v.is_object() && v.contains("str") && v.at("str").is_string()) {
        return v.at("str").get<std::string>();
    }
    throw Error(ErrorCode::RecordInvalid, std::string("field '") + key + "' is not a string");
}

FactRecord parse_record(const nlohmann::json & element) {
    if (!element.is_object()) {
        throw Error(ErrorCode::RecordInvalid, "element is not an object");
    }
    const nlohmann::json & obj = element.contains("requested_rewrite") ? element.at("requested_rewrite") : element;
    FactRecord f;
    f.relation_id = string_field(obj, "relation_id");
    f.subject = string_field(obj, "subject");
    f.prompt_template = string_field(obj, "prompt");
    f.true_object = string_field(obj, "target_true");
    f.new_object = string_field(obj, "target_new");
    if (f.prompt_template.find(kSubjectSlot) == std::string::npos) {
        // Public dumps use "{}" as the subject slot.
        const auto pos = f.prompt_template.find("{}");
        if (pos != std::string::npos) {
            f.prompt_template.replace(pos, 2, kSubjectSlot);
        }
    }
    validate_fact(f);
    return f;
}

} // namespace

void validate_fact(const FactRecord & f) {
    if (f.relation_id.empty() || f.subject.empty()) {
        throw Error(ErrorCode::RecordInvalid, "relation_id and subject must be non-empty");
    }
    if (count_occurrences(f.prompt_template, kSubjectSlot) != 1) {
        throw Error(ErrorCode::RecordInvalid, "prompt template must contain exactly one {subject}");
    }
    if (f.true_object.empty() || f.new_object.empty()) {
        throw Error(ErrorCode::RecordInvalid, "objects must be non-empty");
    }
    if (f.true_object == f.new_object) {
        throw Error(ErrorCode::RecordInvalid, "new object equals true object");
    }
}

std::string render_prompt(const FactRecord & f) {
    std::string out = f.prompt_template;
    const auto pos = out.find(kSubjectSlot);
    if (pos != std::string::npos) {
        out.replace(pos, std::char_traits<char>::length(kSubjectSlot), f.subject);
    }
    return out;
}

CounterfactLoad parse_counterfact(const std::string & text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error & e) {
        throw Error(ErrorCode::ParseError, e.what());
    }
    if (!doc.is_array()) {
        throw Error(ErrorCode::ParseError, "top-level JSON value is not an array");
    }
    const std::vector<std::size_t> lines = element_start_lines(text);
    CounterfactLoad out;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        try {
            out.records.push_back(parse_record(doc[i]));
        } catch (const Error & e) {
            out.issues.push_back({i, i < lines.size() ? lines[i] : 0, e.what()});
        }
    }
    return out;
}

CounterfactLoad load_counterfact(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_counterfact(ss.str());
}

std::vector<FactRecord> filter_relations(std::span<const FactRecord> records, std::size_t min_facts) {
    std::map<std::string, std::size_t> counts;
    for (const auto & r : records) {
        ++counts[r.relation_id];
    }
    std::vector<FactRecord> out;
    for (const auto & r : records) {
        if (counts[r.relation_id] >= min_facts) {
            out.push_back(r);
        }
    }
    return out;
}

void SyntheticCorpusConfig::validate() const {
    if (n_relations < 1 || facts_per_relation < 1 || subject_tokens < 1) {
        throw Error(ErrorCode::InvalidConfig, "synthetic corpus counts must be >= 1");
    }
    if (object_pool_size < 2) {
        throw Error(ErrorCode::InvalidConfig, "object pools need at least two objects to edit between");
    }
}

Vocabulary::Vocabulary(std::vector<std::string> names) : names_(std::move(names)) {
    for (std::size_t i = 0; i < names_.size(); ++i) {
        if (!ids_.emplace(names_[i], static_cast<int32_t>(i)).second) {
            throw Error(ErrorCode::DuplicateName, "duplicate token '" + names_[i] + "'");
        }
    }
}

int32_t Vocabulary::id(const std::string & name) const {
    const auto it = ids_.find(name);
    if (it == ids_.end()) {
        throw Error(ErrorCode::TokenOutOfRange, "unknown token '" + name + "'");
    }
    return it->second;
}

const std::string & Vocabulary::name(int32_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= names_.size()) {
        throw Error(ErrorCode::TokenOutOfRange, "token id " + std::to_string(id));
    }
    return names_[static_cast<std::size_t>(id)];
}

TokenSequence Vocabulary::encode(const std::string & text) const {
    TokenSequence out;
    std::istringstream in(text);
    std::string word;
    while (in >> word) {
        out.push_back(id(word));
    }
    return out;
}

std::string Vocabulary::decode(std::span<const int32_t> ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) {
            out += ' ';
        }
        out += name(ids[i]);
    }
    return out;
}

TokenSequence SyntheticCorpus::prompt_tokens(const FactRecord & f) const {
    return vocab.encode(render_prompt(f));
}

TokenSequence SyntheticCorpus::training_sequence(const FactRecord & f) const {
    TokenSequence seq = prompt_tokens(f);
    seq.push_back(vocab.id(f.true_object));
    return seq;
}

std::pair<std::size_t, std::size_t> SyntheticCorpus::subject_span(const FactRecord & f) const {
    const auto slot = f.prompt_template.find(kSubjectSlot);
    const std::size_t before = vocab.encode(f.prompt_template.substr(0, slot)).size();
    const std::size_t len = vocab.encode(f.subject).size();
    return {before, before + len - 1};
}

std::size_t synthetic_vocab_budget(const SyntheticCorpusConfig & cfg) {
    const std::size_t facts = cfg.n_relations * cfg.facts_per_relation;
    std::size_t per_slot = 1;
    // Smallest per-position pool whose tuples cover every subject.
    while (std::pow(static_cast<double>(per_slot), static_cast<double>(cfg.subject_tokens)) <
           static_cast<double>(facts)) {
        ++per_slot;
    }
    return cfg.n_relations + cfg.n_relations * cfg.object_pool_size + cfg.subject_tokens * per_slot;
}

SyntheticCorpus generate_synthetic(const SyntheticCorpusConfig & cfg, const ToyLmConfig & lm) {
    cfg.validate();
    const std::size_t budget = synthetic_vocab_budget(cfg);
    if (budget > lm.vocab_size) {
        throw Error(ErrorCode::VocabExhausted, "synthetic corpus needs " + std::to_string(budget) +
                                                   " tokens, vocabulary has " + std::to_string(lm.vocab_size));
    }
    if (cfg.subject_tokens + 1 >= lm.max_seq_len) {
        throw Error(ErrorCode::SequenceTooLong, "synthetic prompts do not fit max_seq_len");
    }

    char buf[64];
    std::vector<std::string> names;
    SyntheticCorpus corpus;
    for (std::size_t r = 0; r < cfg.n_relations; ++r) {
        std::snprintf(buf, sizeof buf, "rel_%02zu", r);
        names.emplace_back(buf);
        corpus.relation_ids.emplace_back(buf);
    }
    for (std::size_t r = 0; r < cfg.n_relations; ++r) {
        for (std::size_t o = 0; o < cfg.object_pool_size; ++o) {
            std::snprintf(buf, sizeof buf, "obj_%02zu_%zu", r, o);
            corpus.object_pools[corpus.relation_ids[r]].push_back(static_cast<int32_t>(names.size()));
            names.emplace_back(buf);
        }
    }
    // Remaining ids are shared out across the subject positions.
    const std::size_t remaining = lm.vocab_size - names.size();
    const std::size_t per_slot = remaining / cfg.subject_tokens;
    std::vector<std::vector<int32_t>> slots(cfg.subject_tokens);
    for (std::size_t s = 0; s < cfg.subject_tokens; ++s) {
        for (std::size_t i = 0; i < per_slot; ++i) {
            std::snprintf(buf, sizeof buf, "s%c_%03zu", static_cast<char>('a' + s), i);
            slots[s].push_back(static_cast<int32_t>(names.size()));
            corpus.subject_token_ids.push_back(static_cast<int32_t>(names.size()));
            names.emplace_back(buf);
        }
    }
    for (std::size_t i = 0; names.size() < lm.vocab_size; ++i) {
        std::snprintf(buf, sizeof buf, "unused_%03zu", i);
        names.emplace_back(buf);
    }
    corpus.vocab = Vocabulary(names);

    std::mt19937_64 rng(cfg.seed);
    std::set<std::vector<int32_t>> used;
    for (std::size_t r = 0; r < cfg.n_relations; ++r) {
        const std::string & rel = corpus.relation_ids[r];
        const auto & pool = corpus.object_pools[rel];
        for (std::size_t k = 0; k < cfg.facts_per_relation; ++k) {
            std::vector<int32_t> subj(cfg.subject_tokens);
            do {
                for (std::size_t s = 0; s < cfg.subject_tokens; ++s) {
                    std::uniform_int_distribution<std::size_t> pick(0, slots[s].size() - 1);
                    subj[s] = slots[s][pick(rng)];
                }
            } while (!used.insert(subj).second);

            std::uniform_int_distribution<std::size_t> pick_obj(0, pool.size() - 1);
            const std::size_t t = pick_obj(rng);
            std::uniform_int_distribution<std::size_t> pick_other(0, pool.size() - 2);
            std::size_t n = pick_other(rng);
            if (n >= t) {
                ++n;
            }
            FactRecord f;
            f.relation_id = rel;
            f.subject = corpus.vocab.decode(subj);
            f.prompt_template = std::string(kSubjectSlot) + " " + rel;
            f.true_object = corpus.vocab.name(pool[t]);
            f.new_object = corpus.vocab.name(pool[n]);
            corpus.facts.push_back(std::move(f));
        }
    }
    return corpus;
}

DataSplit split(std::span<const std::string> relation_of, const SplitConfig & cfg, uint64_t seed) {
    std::vector<std::string> relations;
    for (const auto & r : relation_of) {
        if (std::find(relations.begin(), relations.end(), r) == relations.end()) {
            relations.push_back(r);
        }
    }
    std::sort(relations.begin(), relations.end());
    if (relations.size() < cfg.id_relations + cfg.ood_relations || cfg.id_relations < 1) {
        throw Error(ErrorCode::InsufficientRelations, "need " + std::to_string(cfg.id_relations + cfg.ood_relations) +
                                                          " relations, have " + std::to_string(relations.size()));
    }
    std::mt19937_64 rng(seed);
    std::shuffle(relations.begin(), relations.end(), rng);

    DataSplit out;
    out.id_relation_ids.assign(relations.begin(), relations.begin() + static_cast<std::ptrdiff_t>(cfg.id_relations));
    out.ood_relation_ids.assign(relations.begin() + static_cast<std::ptrdiff_t>(cfg.id_relations),
                                relations.begin() + static_cast<std::ptrdiff_t>(cfg.id_relations + cfg.ood_relations));
    std::sort(out.id_relation_ids.begin(), out.id_relation_ids.end());
    std::sort(out.ood_relation_ids.begin(), out.ood_relation_ids.end());

    std::vector<std::size_t> id_items;
    std::vector<std::size_t> ood_items;
    for (std::size_t i = 0; i < relation_of.size(); ++i) {
        const auto & r = relation_of[i];
        if (std::binary_search(out.id_relation_ids.begin(), out.id_relation_ids.end(), r)) {
            id_items.push_back(i);
        } else if (std::binary_search(out.ood_relation_ids.begin(), out.ood_relation_ids.end(), r)) {
            ood_items.push_back(i);
        }
    }
    const std::size_t id_needed = cfg.train + cfg.val + cfg.test;
    if (id_items.size() < id_needed) {
        throw Error(ErrorCode::InsufficientData, "in-distribution relations have " + std::to_string(id_items.size()) +
                                                     " items, need " + std::to_string(id_needed));
    }
    if (ood_items.size() < cfg.ood) {
        throw Error(ErrorCode::InsufficientData, "held-out relations have " + std::to_string(ood_items.size()) +
                                                     " items, need " + std::to_string(cfg.ood));
    }
    std::shuffle(id_items.begin(), id_items.end(), rng);
    std::shuffle(ood_items.begin(), ood_items.end(), rng);
    auto take = [](std::vector<std::size_t> & src, std::size_t from, std::size_t n) {
        std::vector<std::size_t> v(src.begin() + static_cast<std::ptrdiff_t>(from),
                                   src.begin() + static_cast<std::ptrdiff_t>(from + n));
        std::sort(v.begin(), v.end());
        return v;
    };
    out.train = take(id_items, 0, cfg.train);
    out.val = take(id_items, cfg.train, cfg.val);
    out.test = take(id_items, cfg.train + cfg.val, cfg.test);
    out.ood = take(ood_items, 0, cfg.ood);
    return out;
}

DataSplit split(std::span<const FactRecord> records, const SplitConfig & cfg, uint64_t seed) {
    std::vector<std::string> rel;
    rel.reserve(records.size());
    for (const auto & r : records) {
        rel.push_back(r.relation_id);
    }
    return split(rel, cfg, seed);
}

} // namespace edtf
