#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"

#include "permeval/errors.hpp"
#include "permeval/rng.hpp"

// Multiple-choice instances, dataset files, and the synthetic random-word
// dataset generator. Dataset files are JSON Lines, one record per question:
//   {"id": "...", "question": "...", "options": ["...", ...],
//    "golden_index": 0, "metadata": {...}}        (metadata optional)
// Field order is fixed so regeneration under the same seed is byte-identical.

namespace permeval {

struct MCQInstance {
    std::string id;
    std::string question;
    std::vector<std::string> options; // pairwise distinct, size >= 2
    int golden_index = -1;            // in [0, options.size())
    nlohmann::ordered_json metadata;  // free-form, may be null

    const std::string& golden_text() const { return options.at(static_cast<std::size_t>(golden_index)); }
    int n_options() const { return static_cast<int>(options.size()); }
};

struct DatasetSplit {
    std::string dataset_id;
    std::vector<MCQInstance> instances;

    int n_options() const {
        return instances.empty() ? 0 : instances.front().n_options();
    }
};

// Rejects malformed instances; `where` names the source for error messages.
inline void validate_instance(const MCQInstance& inst, const std::string& where) {
    auto fail = [&](const std::string& what) {
        throw ConfigError(where + " (id=" + inst.id + "): " + what);
    };
    if (inst.id.empty()) fail("empty id");
    if (inst.question.empty()) fail("empty question");
    if (inst.options.size() < 2) fail("fewer than 2 options");
    if (inst.golden_index < 0 || inst.golden_index >= inst.n_options())
        fail("golden_index out of range");
    std::set<std::string> seen;
    for (const auto& opt : inst.options) {
        if (opt.empty()) fail("empty option text");
        if (!seen.insert(opt).second) fail("duplicate option text \"" + opt + "\"");
    }
}

// Whole-split validation: per-instance checks, unique ids, constant n.
inline void validate_split(const DatasetSplit& split) {
    if (split.instances.empty())
        throw ConfigError("dataset " + split.dataset_id + ": no instances");
    std::unordered_set<std::string> ids;
    const int n = split.n_options();
    for (const auto& inst : split.instances) {
        validate_instance(inst, "dataset " + split.dataset_id);
        if (!ids.insert(inst.id).second)
            throw ConfigError("dataset " + split.dataset_id + ": duplicate id " + inst.id);
        if (inst.n_options() != n)
            throw ConfigError("dataset " + split.dataset_id + " (id=" + inst.id +
                              "): option count " + std::to_string(inst.n_options()) +
                              " differs from split-wide " + std::to_string(n));
    }
}

// One word per line; surrounding whitespace trimmed, blank lines skipped,
// duplicates dropped keeping first occurrence.
inline std::vector<std::string> load_wordlist(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("wordlist not readable: " + path.string());
    std::vector<std::string> words;
    std::unordered_set<std::string> seen;
    std::string line;
    while (std::getline(in, line)) {
        std::size_t b = line.find_first_not_of(" \t\r\n\f\v");
        if (b == std::string::npos) continue;
        std::size_t e = line.find_last_not_of(" \t\r\n\f\v");
        std::string word = line.substr(b, e - b + 1);
        if (seen.insert(word).second) words.push_back(std::move(word));
    }
    if (words.empty()) throw ConfigError("wordlist is empty: " + path.string());
    return words;
}

struct NonsenseConfig {
    int n_questions = 1000;      // must be divisible by n_options
    int n_options = 4;
    int n_validation = 100;      // must be divisible by n_options
    int question_words_min = 5;
    int question_words_max = 20;
    int option_words_min = 1;
    int option_words_max = 6;
    std::uint64_t seed = 0;
};

namespace detail {

inline std::string sample_phrase(SplitMix64& rng, const std::vector<std::string>& words,
                                 int len_min, int len_max) {
    const int len = len_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(len_max - len_min + 1)));
    std::string out;
    for (int i = 0; i < len; ++i) {
        if (i > 0) out += ' ';
        out += words[rng.below(words.size())];
    }
    return out;
}

inline std::string padded_index(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d", i);
    return buf;
}

// Golden positions are an exactly balanced multiset, shuffled: count/n copies
// of each position, so no position is favored in the emitted file.
inline std::vector<int> stratified_positions(SplitMix64& rng, int count, int n_options) {
    std::vector<int> positions;
    positions.reserve(static_cast<std::size_t>(count));
    for (int p = 0; p < n_options; ++p)
        for (int i = 0; i < count / n_options; ++i) positions.push_back(p);
    rng.shuffle(positions);
    return positions;
}

inline std::vector<MCQInstance> generate_nonsense_split(SplitMix64& rng,
                                                        const NonsenseConfig& cfg,
                                                        const std::vector<std::string>& words,
                                                        int count,
                                                        const std::string& id_prefix) {
    std::vector<int> golden = stratified_positions(rng, count, cfg.n_options);
    std::vector<MCQInstance> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int q = 0; q < count; ++q) {
        MCQInstance inst;
        inst.id = id_prefix + padded_index(q);
        inst.question = sample_phrase(rng, words, cfg.question_words_min, cfg.question_words_max) + "?";
        inst.golden_index = golden[static_cast<std::size_t>(q)];
        std::set<std::string> seen;
        for (int k = 0; k < cfg.n_options; ++k) {
            std::string opt;
            int attempts = 0;
            do {
                if (++attempts > 100)
                    throw ConfigError("could not draw a distinct option after 100 retries; "
                                      "wordlist too small for the requested option shape");
                opt = sample_phrase(rng, words, cfg.option_words_min, cfg.option_words_max);
            } while (seen.count(opt) > 0);
            seen.insert(opt);
            inst.options.push_back(std::move(opt));
        }
        out.push_back(std::move(inst));
    }
    return out;
}

} // namespace detail

// Generates the test and validation splits from one sequential RNG stream
// (test first, then validation) so a (wordlist, seed, shape) triple pins both
// files exactly.
inline std::pair<DatasetSplit, DatasetSplit> generate_nonsense(const NonsenseConfig& cfg,
                                                               const std::vector<std::string>& words) {
    auto check_divisible = [&](int count, const char* name) {
        if (count <= 0 || count % cfg.n_options != 0)
            throw ConfigError(std::string(name) + " (" + std::to_string(count) +
                              ") must be a positive multiple of n_options (" +
                              std::to_string(cfg.n_options) + ") for exact golden-position balance");
    };
    if (cfg.n_options < 2) throw ConfigError("n_options must be at least 2");
    check_divisible(cfg.n_questions, "n_questions");
    check_divisible(cfg.n_validation, "n_validation");
    if (cfg.question_words_min < 1 || cfg.question_words_min > cfg.question_words_max)
        throw ConfigError("bad question word-count bounds");
    if (cfg.option_words_min < 1 || cfg.option_words_min > cfg.option_words_max)
        throw ConfigError("bad option word-count bounds");

    SplitMix64 rng(cfg.seed);
    DatasetSplit test;
    test.dataset_id = "nonsense-test";
    test.instances = detail::generate_nonsense_split(rng, cfg, words, cfg.n_questions, "nonsense-test-");
    DatasetSplit validation;
    validation.dataset_id = "nonsense-val";
    validation.instances = detail::generate_nonsense_split(rng, cfg, words, cfg.n_validation, "nonsense-val-");
    return {std::move(test), std::move(validation)};
}

inline nlohmann::ordered_json instance_to_json(const MCQInstance& inst) {
    nlohmann::ordered_json j;
    j["id"] = inst.id;
    j["question"] = inst.question;
    j["options"] = inst.options;
    j["golden_index"] = inst.golden_index;
    if (!inst.metadata.is_null()) j["metadata"] = inst.metadata;
    return j;
}

inline MCQInstance instance_from_json(const nlohmann::ordered_json& j, const std::string& where) {
    MCQInstance inst;
    try {
        inst.id = j.at("id").get<std::string>();
        inst.question = j.at("question").get<std::string>();
        inst.options = j.at("options").get<std::vector<std::string>>();
        inst.golden_index = j.at("golden_index").get<int>();
        if (j.contains("metadata")) inst.metadata = j.at("metadata");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(where + ": malformed record: " + e.what());
    }
    validate_instance(inst, where);
    return inst;
}

inline void write_dataset(const DatasetSplit& split, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write dataset file: " + path.string());
    for (const auto& inst : split.instances) out << instance_to_json(inst).dump() << '\n';
    if (!out) throw ConfigError("write failed: " + path.string());
}

inline DatasetSplit load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("dataset not readable: " + path.string());
    DatasetSplit split;
    split.dataset_id = path.stem().string();
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::string where = "dataset " + path.string() + " line " + std::to_string(lineno);
        nlohmann::ordered_json j;
        try {
            j = nlohmann::ordered_json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(where + ": invalid JSON: " + e.what());
        }
        split.instances.push_back(instance_from_json(j, where));
    }
    validate_split(split);
    return split;
}

} // namespace permeval
