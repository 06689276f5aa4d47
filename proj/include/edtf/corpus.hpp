#pragma once

#include "edtf/toy_lm.hpp"

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace edtf {

struct FactRecord {
    std::string relation_id;
    std::string subject;
    std::string prompt_template; // contains "{subject}" exactly once
    std::string true_object;
    std::string new_object;

    bool operator==(const FactRecord &) const = default;
};

// Throws RecordInvalid when the record breaks the FactRecord invariants.
void validate_fact(const FactRecord & f);

std::string render_prompt(const FactRecord & f);

struct RecordIssue {
    std::size_t index = 0; // position in the JSON array
    std::size_t line = 0;  // 1-based line where the element starts
    std::string message;
};

struct CounterfactLoad {
    std::vector<FactRecord> records;
    std::vector<RecordIssue> issues;
};

// Reads a JSON array of {relation_id, subject, prompt, target_true, target_new}.
// The nested "requested_rewrite" layout of the public dump is accepted too.
// Malformed elements are skipped and reported; an unparseable file throws ParseError.
CounterfactLoad load_counterfact(const std::filesystem::path & path);
CounterfactLoad parse_counterfact(const std::string & text);

// Keeps relations with at least min_facts records; order preserved.
std::vector<FactRecord> filter_relations(std::span<const FactRecord> records, std::size_t min_facts);

struct SyntheticCorpusConfig {
    std::size_t n_relations = 31;
    std::size_t facts_per_relation = 100;
    std::size_t object_pool_size = 8;   // objects per relation, pools disjoint
    std::size_t subject_tokens = 2;     // tokens per subject
    uint64_t seed = 17;

    void validate() const;
};

// Bidirectional token <-> string map for the whitespace-tokenized synthetic vocabulary.
class Vocabulary {
public:
    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::string> names);

    int32_t id(const std::string & name) const;
    const std::string & name(int32_t id) const;
    std::size_t size() const { return names_.size(); }
    const std::vector<std::string> & names() const { return names_; }
    bool contains(const std::string & name) const { return ids_.count(name) != 0; }

    TokenSequence encode(const std::string & text) const;
    std::string decode(std::span<const int32_t> ids) const;

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, int32_t> ids_;
};

struct SyntheticCorpus {
    std::vector<FactRecord> facts;
    Vocabulary vocab;
    std::vector<std::string> relation_ids;                          // in generation order
    std::map<std::string, std::vector<int32_t>> object_pools;       // relation -> object token ids
    std::vector<int32_t> subject_token_ids;

    // Prompt tokens: subject tokens followed by the relation token.
    TokenSequence prompt_tokens(const FactRecord & f) const;
    // Prompt followed by the true object token; the pretraining sequence.
    TokenSequence training_sequence(const FactRecord & f) const;
    // [first, last] token positions of the subject inside the prompt.
    std::pair<std::size_t, std::size_t> subject_span(const FactRecord & f) const;
};

SyntheticCorpus generate_synthetic(const SyntheticCorpusConfig & cfg, const ToyLmConfig & lm);

// Token budget of a synthetic corpus: relation tokens + object pools + subject tokens.
std::size_t synthetic_vocab_budget(const SyntheticCorpusConfig & cfg);

struct SplitConfig {
    std::size_t id_relations = 20;
    std::size_t ood_relations = 11;
    std::size_t train = 600;
    std::size_t val = 100;
    std::size_t test = 300;
    std::size_t ood = 330;
};

// Item indices per split. OOD items come from held-out relations only.
struct DataSplit {
    std::vector<std::size_t> train, val, test, ood;
    std::vector<std::string> id_relation_ids, ood_relation_ids;
};

// relation_of[i] is the relation of item i.
DataSplit split(std::span<const std::string> relation_of, const SplitConfig & cfg, uint64_t seed);
DataSplit split(std::span<const FactRecord> records, const SplitConfig & cfg, uint64_t seed);

} // namespace edtf
