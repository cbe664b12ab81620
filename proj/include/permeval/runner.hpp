#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "permeval/backends.hpp"
#include "permeval/dataset.hpp"
#include "permeval/errors.hpp"
#include "permeval/extraction.hpp"
#include "permeval/matching.hpp"
#include "permeval/metrics.hpp"
#include "permeval/protocol.hpp"
#include "permeval/report.hpp"
#include "permeval/rng.hpp"

// Sweep orchestration: a RunConfig names a dataset (or how to generate one),
// one model backend, an optional embedding backend, the protocol, sampling
// parameters, a master seed, a concurrency bound, and an output directory.
// The sweep evaluates every (question x permutation) cell, caching raw model
// output in an append-only transcript store so interrupted runs resume with
// no repeated calls, then extracts, matches, and summarizes. Scoring from an
// existing store issues zero generation calls.

namespace permeval {

// ---------------------------------------------------------------------------
// Run configuration (the config file mirrors these fields by name)

struct DatasetSource {
    // Either concrete files...
    std::string path;           // test split, JSONL
    std::string fewshot_path;   // exemplar pool, JSONL (needed when shots > 0)
    // ...or a generation block:
    std::optional<NonsenseConfig> nonsense;
    std::string wordlist_path;  // required with `nonsense`
};

struct ModelSource {
    std::optional<SimulatedModelSpec> simulated;
    std::optional<HttpEndpointConfig> endpoint;
};

struct EmbeddingSource {
    bool mock = false;
    std::optional<HttpEndpointConfig> endpoint;
};

struct RunConfig {
    DatasetSource dataset;
    ModelSource model;
    EmbeddingSource embedding;
    ProtocolConfig protocol;
    std::string template_path;  // empty = built-in default template
    GenerationParams generation;
    std::uint64_t master_seed = 0;
    int concurrency = 1;
    std::filesystem::path output_dir;
    SimilarityKind similarity = SimilarityKind::cosine;
    TieRule tie_rule = TieRule::lowest_index;

    void validate() const {
        const bool has_files = !dataset.path.empty();
        const bool has_gen = dataset.nonsense.has_value();
        if (has_files == has_gen)
            throw ConfigError("dataset must name either a file path or a nonsense block (not both)");
        if (has_gen && dataset.wordlist_path.empty())
            throw ConfigError("nonsense generation needs a wordlist path");
        if (model.simulated.has_value() == model.endpoint.has_value())
            throw ConfigError("exactly one model backend required (simulated or endpoint)");
        if (embedding.mock && embedding.endpoint)
            throw ConfigError("choose one embedding backend (mock or endpoint)");
        if (protocol.mode == PredictionMode::matched && !embedding.mock && !embedding.endpoint)
            throw ConfigError("matched mode needs an embedding backend (real or mock)");
        if (concurrency < 1) throw ConfigError("concurrency must be >= 1");
        generation.validate();
        if (model.simulated) model.simulated->validate();
        if (model.endpoint) model.endpoint->validate();
        if (embedding.endpoint) embedding.endpoint->validate();
    }
};

namespace detail {

inline std::filesystem::path resolve_path(const std::string& p, const std::filesystem::path& base) {
    std::filesystem::path fp(p);
    if (fp.is_absolute() || base.empty()) return fp;
    return base / fp;
}

inline LabelScheme labels_from_json(const nlohmann::json& j) {
    if (j.is_string()) {
        const std::string name = j.get<std::string>();
        if (name == "letters") return LabelScheme::letters();
        if (name == "digits") return LabelScheme::digits();
        if (name == "dash") return LabelScheme::dash();
        throw ConfigError("unknown label scheme \"" + name + "\" (built-ins: letters, digits, dash)");
    }
    LabelScheme s;
    s.name = j.at("name").get<std::string>();
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "distinct") s.kind = SchemeKind::distinct;
    else if (kind == "homogeneous") s.kind = SchemeKind::homogeneous;
    else throw ConfigError("label scheme kind must be \"distinct\" or \"homogeneous\"");
    s.glyphs = j.at("glyphs").get<std::vector<std::string>>();
    s.validate();
    return s;
}

inline nlohmann::ordered_json labels_to_json(const LabelScheme& s) {
    if (s.name == "letters" || s.name == "digits" || s.name == "dash") return s.name;
    nlohmann::ordered_json j;
    j["name"] = s.name;
    j["kind"] = to_string(s.kind);
    j["glyphs"] = s.glyphs;
    return j;
}

} // namespace detail

// `base_dir` anchors relative file paths (the config file's directory, or a
// run directory when re-scoring); template files are loaded here so a parsed
// RunConfig is self-contained.
inline RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    RunConfig cfg;
    try {
        const auto& ds = j.at("dataset");
        if (ds.contains("path")) cfg.dataset.path = ds.at("path").get<std::string>();
        if (ds.contains("fewshot_path")) cfg.dataset.fewshot_path = ds.at("fewshot_path").get<std::string>();
        if (ds.contains("nonsense")) {
            const auto& g = ds.at("nonsense");
            NonsenseConfig nc;
            cfg.dataset.wordlist_path = g.at("wordlist").get<std::string>();
            if (g.contains("seed")) nc.seed = g.at("seed").get<std::uint64_t>();
            if (g.contains("n_questions")) nc.n_questions = g.at("n_questions").get<int>();
            if (g.contains("n_options")) nc.n_options = g.at("n_options").get<int>();
            if (g.contains("n_validation")) nc.n_validation = g.at("n_validation").get<int>();
            cfg.dataset.nonsense = nc;
        }

        const auto& model = j.at("model");
        if (model.contains("simulated")) {
            const auto& s = model.at("simulated");
            SimulatedModelSpec spec;
            spec.archetype = archetype_from_string(s.at("archetype").get<std::string>());
            if (s.contains("seed")) spec.seed = s.at("seed").get<std::uint64_t>();
            if (s.contains("target_position")) spec.target_position = s.at("target_position").get<int>();
            if (s.contains("preferred_glyph")) spec.preferred_glyph = s.at("preferred_glyph").get<std::string>();
            if (s.contains("p_know")) spec.p_know = s.at("p_know").get<double>();
            if (s.contains("follow_q")) spec.follow_q = s.at("follow_q").get<double>();
            cfg.model.simulated = spec;
        }
        auto endpoint_from = [](const nlohmann::json& e) {
            HttpEndpointConfig h;
            h.base_url = e.at("base_url").get<std::string>();
            h.model = e.at("model").get<std::string>();
            if (e.contains("chat_path")) h.chat_path = e.at("chat_path").get<std::string>();
            if (e.contains("embeddings_path")) h.embeddings_path = e.at("embeddings_path").get<std::string>();
            if (e.contains("api_key_env")) h.api_key_env = e.at("api_key_env").get<std::string>();
            if (e.contains("timeout_s")) h.timeout_s = e.at("timeout_s").get<int>();
            if (e.contains("max_retries")) h.max_retries = e.at("max_retries").get<int>();
            if (e.contains("backoff_ms")) h.backoff_ms = e.at("backoff_ms").get<int>();
            return h;
        };
        if (model.contains("endpoint")) cfg.model.endpoint = endpoint_from(model.at("endpoint"));

        if (j.contains("embedding") && !j.at("embedding").is_null()) {
            const auto& emb = j.at("embedding");
            if (emb.contains("mock")) cfg.embedding.mock = emb.at("mock").get<bool>();
            if (emb.contains("endpoint")) cfg.embedding.endpoint = endpoint_from(emb.at("endpoint"));
        }

        if (j.contains("protocol")) {
            const auto& p = j.at("protocol");
            if (p.contains("mode")) {
                const std::string mode = p.at("mode").get<std::string>();
                if (mode == "standard") cfg.protocol.mode = PredictionMode::standard;
                else if (mode == "matched") cfg.protocol.mode = PredictionMode::matched;
                else throw ConfigError("protocol mode must be \"standard\" or \"matched\"");
            }
            if (p.contains("labels")) cfg.protocol.labels = detail::labels_from_json(p.at("labels"));
            if (p.contains("shots")) cfg.protocol.shots = p.at("shots").get<int>();
            if (p.contains("cot")) cfg.protocol.cot = p.at("cot").get<bool>();
            if (p.contains("permute_fewshot")) cfg.protocol.permute_fewshot = p.at("permute_fewshot").get<bool>();
            if (p.contains("template_path")) {
                cfg.template_path = p.at("template_path").get<std::string>();
                cfg.protocol.prompt = load_prompt_template(detail::resolve_path(cfg.template_path, base_dir));
            }
        }

        if (j.contains("generation")) cfg.generation = params_from_json(j.at("generation"), "config");
        if (j.contains("master_seed")) cfg.master_seed = j.at("master_seed").get<std::uint64_t>();
        if (j.contains("concurrency")) cfg.concurrency = j.at("concurrency").get<int>();
        if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
        if (j.contains("similarity")) {
            const std::string s = j.at("similarity").get<std::string>();
            if (s == "cosine") cfg.similarity = SimilarityKind::cosine;
            else if (s == "dot") cfg.similarity = SimilarityKind::dot;
            else if (s == "neg_euclidean") cfg.similarity = SimilarityKind::neg_euclidean;
            else throw ConfigError("similarity must be cosine, dot, or neg_euclidean");
        }
        if (j.contains("tie_rule")) {
            const std::string s = j.at("tie_rule").get<std::string>();
            if (s == "lowest_index") cfg.tie_rule = TieRule::lowest_index;
            else if (s == "seeded_random") cfg.tie_rule = TieRule::seeded_random;
            else throw ConfigError("tie_rule must be lowest_index or seeded_random");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad run config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config not readable: " + path.string());
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config is not valid JSON: " + path.string());
    return run_config_from_json(j, path.parent_path());
}

inline nlohmann::ordered_json run_config_to_json(const RunConfig& cfg) {
    nlohmann::ordered_json j;
    nlohmann::ordered_json ds;
    if (cfg.dataset.nonsense) {
        nlohmann::ordered_json g;
        g["wordlist"] = cfg.dataset.wordlist_path;
        g["seed"] = cfg.dataset.nonsense->seed;
        g["n_questions"] = cfg.dataset.nonsense->n_questions;
        g["n_options"] = cfg.dataset.nonsense->n_options;
        g["n_validation"] = cfg.dataset.nonsense->n_validation;
        ds["nonsense"] = g;
    } else {
        ds["path"] = cfg.dataset.path;
        if (!cfg.dataset.fewshot_path.empty()) ds["fewshot_path"] = cfg.dataset.fewshot_path;
    }
    j["dataset"] = ds;

    nlohmann::ordered_json model;
    if (cfg.model.simulated) {
        const auto& s = *cfg.model.simulated;
        nlohmann::ordered_json sim;
        sim["archetype"] = to_string(s.archetype);
        sim["seed"] = s.seed;
        sim["target_position"] = s.target_position;
        sim["preferred_glyph"] = s.preferred_glyph;
        sim["p_know"] = s.p_know;
        sim["follow_q"] = s.follow_q;
        model["simulated"] = sim;
    }
    auto endpoint_json = [](const HttpEndpointConfig& h) {
        nlohmann::ordered_json e;
        e["base_url"] = h.base_url;
        e["model"] = h.model;
        e["chat_path"] = h.chat_path;
        e["embeddings_path"] = h.embeddings_path;
        e["api_key_env"] = h.api_key_env;
        e["timeout_s"] = h.timeout_s;
        e["max_retries"] = h.max_retries;
        e["backoff_ms"] = h.backoff_ms;
        return e;
    };
    if (cfg.model.endpoint) model["endpoint"] = endpoint_json(*cfg.model.endpoint);
    j["model"] = model;

    if (cfg.embedding.mock || cfg.embedding.endpoint) {
        nlohmann::ordered_json emb;
        if (cfg.embedding.mock) emb["mock"] = true;
        if (cfg.embedding.endpoint) emb["endpoint"] = endpoint_json(*cfg.embedding.endpoint);
        j["embedding"] = emb;
    }

    nlohmann::ordered_json proto;
    proto["mode"] = to_string(cfg.protocol.mode);
    proto["labels"] = detail::labels_to_json(cfg.protocol.labels);
    proto["shots"] = cfg.protocol.shots;
    proto["cot"] = cfg.protocol.cot;
    proto["permute_fewshot"] = cfg.protocol.permute_fewshot;
    if (!cfg.template_path.empty()) proto["template_path"] = cfg.template_path;
    j["protocol"] = proto;

    j["generation"] = params_to_json(cfg.generation);
    j["master_seed"] = cfg.master_seed;
    j["concurrency"] = cfg.concurrency;
    j["output_dir"] = cfg.output_dir.string();
    if (cfg.similarity != SimilarityKind::cosine) j["similarity"] = to_string(cfg.similarity);
    if (cfg.tie_rule == TieRule::seeded_random) j["tie_rule"] = "seeded_random";
    return j;
}

// ---------------------------------------------------------------------------
// Resolution: configs to concrete datasets, exemplars, plan, and backends

inline FewShotSet select_exemplars(const DatasetSplit& pool, int shots, std::uint64_t master_seed) {
    FewShotSet fs;
    if (shots == 0) return fs;
    if (static_cast<int>(pool.instances.size()) < shots)
        throw ConfigError("few-shot pool \"" + pool.dataset_id + "\" has " +
                          std::to_string(pool.instances.size()) + " instances; " +
                          std::to_string(shots) + " exemplars requested");
    // One fixed exemplar set per run: a seed-derived order over the pool,
    // truncated to the shot count. Every question sees the same exemplars.
    std::vector<std::size_t> order(pool.instances.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    SplitMix64 rng(derive_seed(master_seed, "fewshot-order"));
    rng.shuffle(order);
    for (int i = 0; i < shots; ++i)
        fs.exemplars.push_back(pool.instances[order[static_cast<std::size_t>(i)]]);
    return fs;
}

struct ResolvedRun {
    DatasetSplit test;
    DatasetSplit fewshot_pool;   // empty when shots == 0
    FewShotSet fewshot;
    std::vector<PermutationSpec> plan;
    std::string fingerprint;
    std::unique_ptr<GenerationBackend> model;
    std::unique_ptr<EmbeddingBackend> embedding; // null in standard mode without one
    bool generated = false;      // datasets came from the nonsense generator
};

inline ResolvedRun resolve_run(const RunConfig& cfg, const std::filesystem::path& base_dir) {
    cfg.validate();
    ResolvedRun rr;
    if (cfg.dataset.nonsense) {
        const auto words = load_wordlist(detail::resolve_path(cfg.dataset.wordlist_path, base_dir));
        auto [test, val] = generate_nonsense(*cfg.dataset.nonsense, words);
        rr.test = std::move(test);
        rr.fewshot_pool = std::move(val);
        rr.generated = true;
    } else {
        rr.test = load_dataset(detail::resolve_path(cfg.dataset.path, base_dir));
        if (!cfg.dataset.fewshot_path.empty())
            rr.fewshot_pool = load_dataset(detail::resolve_path(cfg.dataset.fewshot_path, base_dir));
    }
    if (rr.test.instances.empty()) throw ConfigError("test dataset is empty");
    const int n = rr.test.n_options();
    cfg.protocol.validate(n);
    if (cfg.protocol.shots > 0) {
        if (rr.fewshot_pool.instances.empty())
            throw ConfigError("protocol asks for " + std::to_string(cfg.protocol.shots) +
                              " shots but no few-shot pool is configured");
        if (rr.fewshot_pool.n_options() != n)
            throw ConfigError("few-shot pool option count differs from the test split");
    }
    rr.fewshot = select_exemplars(rr.fewshot_pool, cfg.protocol.shots, cfg.master_seed);
    rr.plan = build_attack_plan(n, /*include_original=*/true, cfg.protocol.permute_fewshot);
    rr.fingerprint = protocol_fingerprint(cfg.protocol);
    if (cfg.model.simulated)
        rr.model = std::make_unique<SimulatedGenerationBackend>(*cfg.model.simulated);
    else
        rr.model = std::make_unique<HttpGenerationBackend>(*cfg.model.endpoint);
    if (cfg.embedding.mock)
        rr.embedding = std::make_unique<MockEmbeddingBackend>();
    else if (cfg.embedding.endpoint)
        rr.embedding = std::make_unique<HttpEmbeddingBackend>(*cfg.embedding.endpoint);
    return rr;
}

// ---------------------------------------------------------------------------
// Embedding cache: one backend call per distinct text

class EmbeddingCache {
public:
    explicit EmbeddingCache(EmbeddingBackend& backend) : backend_(backend) {}

    std::vector<Vec> embed(const std::vector<std::string>& texts) {
        std::vector<Vec> out(texts.size());
        std::vector<std::string> misses;
        {
            std::lock_guard<std::mutex> lock(mu_);
            for (std::size_t i = 0; i < texts.size(); ++i) {
                auto it = cache_.find(texts[i]);
                if (it != cache_.end()) out[i] = it->second;
                else misses.push_back(texts[i]);
            }
        }
        if (!misses.empty()) {
            std::sort(misses.begin(), misses.end());
            misses.erase(std::unique(misses.begin(), misses.end()), misses.end());
            const std::vector<Vec> fresh = backend_.embed(misses);
            ++calls_;
            std::lock_guard<std::mutex> lock(mu_);
            for (std::size_t i = 0; i < misses.size(); ++i) cache_[misses[i]] = fresh[i];
            for (std::size_t i = 0; i < texts.size(); ++i)
                if (out[i].empty()) out[i] = cache_.at(texts[i]);
        }
        return out;
    }

    std::size_t backend_calls() const { return calls_.load(); }

private:
    EmbeddingBackend& backend_;
    std::mutex mu_;
    std::unordered_map<std::string, Vec> cache_;
    std::atomic<std::size_t> calls_{0};
};

// ---------------------------------------------------------------------------
// Sweep phases

struct SweepStats {
    std::size_t generated = 0;               // fresh backend completions
    std::size_t cached = 0;                  // cells answered from the store
    std::vector<std::string> failed_cells;   // "question/permutation: reason"
};

namespace detail {

template <typename WorkFn>
void run_parallel(std::size_t n_items, int concurrency, WorkFn&& work) {
    const int n_threads = std::max(1, std::min<int>(concurrency, static_cast<int>(n_items)));
    if (n_threads == 1) {
        for (std::size_t i = 0; i < n_items; ++i) work(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n_items) return;
                work(i);
            }
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace detail

// Fill the transcript store for every missing cell. Per-cell failures are
// collected (not fatal mid-sweep) so one flaky call cannot waste the rest of
// an expensive run; completed cells are flushed immediately.
inline SweepStats generate_transcripts(const RunConfig& cfg, const ResolvedRun& rr,
                                       TranscriptStore& store) {
    struct Cell { std::size_t q, p; };
    std::vector<Cell> todo;
    SweepStats stats;
    for (std::size_t q = 0; q < rr.test.instances.size(); ++q)
        for (std::size_t p = 0; p < rr.plan.size(); ++p) {
            if (store.get(rr.test.instances[q].id, rr.plan[p].id, rr.fingerprint, rr.model->id()))
                ++stats.cached;
            else
                todo.push_back({q, p});
        }

    std::mutex fail_mu;
    std::atomic<std::size_t> generated{0};
    detail::run_parallel(todo.size(), cfg.concurrency, [&](std::size_t i) {
        const auto [q, p] = todo[i];
        const MCQInstance& inst = rr.test.instances[q];
        const PermutationSpec& spec = rr.plan[p];
        try {
            const PromptBundle bundle = build_prompt(inst, rr.fewshot, cfg.protocol, spec);
            const GenerationOutcome out = rr.model->complete(bundle, cfg.generation);
            Transcript t;
            t.question_id = inst.id;
            t.permutation_id = spec.id;
            t.protocol_fingerprint = rr.fingerprint;
            t.backend_id = rr.model->id();
            t.prompt_hash = hash_prompt(bundle.text);
            t.raw_output = out.text;
            t.elapsed_ms = out.elapsed_ms;
            t.retries = out.retries;
            t.params = cfg.generation;
            store.put(t);
            generated.fetch_add(1);
        } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(fail_mu);
            stats.failed_cells.push_back(inst.id + "/" + spec.id + ": " + e.what());
        }
    });
    stats.generated = generated.load();
    std::sort(stats.failed_cells.begin(), stats.failed_cells.end());
    return stats;
}

// Extraction + matching over a populated store; pure given the store contents
// and config (fallback randomness is derived from the master seed and cell
// ids, so thread scheduling cannot change any prediction).
inline RunMatrix predict_from_store(const RunConfig& cfg, const ResolvedRun& rr,
                                    const TranscriptStore& store) {
    const std::size_t n_q = rr.test.instances.size();
    const std::size_t n_p = rr.plan.size();

    std::vector<std::string> missing;
    for (std::size_t q = 0; q < n_q; ++q)
        for (std::size_t p = 0; p < n_p; ++p)
            if (!store.get(rr.test.instances[q].id, rr.plan[p].id, rr.fingerprint, rr.model->id()))
                missing.push_back(rr.test.instances[q].id + "/" + rr.plan[p].id);
    if (!missing.empty()) {
        std::string msg = "transcript store is missing " + std::to_string(missing.size()) + " cell(s):";
        for (std::size_t i = 0; i < missing.size() && i < 10; ++i) msg += " " + missing[i];
        if (missing.size() > 10) msg += " ...";
        throw IncompleteGridError(msg);
    }

    RunMatrix m;
    m.dataset_id = rr.test.dataset_id;
    m.model_id = rr.model->id();
    m.protocol_fingerprint = rr.fingerprint;
    for (const auto& spec : rr.plan) m.permutation_ids.push_back(spec.id);
    for (const auto& inst : rr.test.instances) m.question_ids.push_back(inst.id);
    m.predictions.assign(n_q, std::vector<Prediction>(n_p));

    std::unique_ptr<EmbeddingCache> embeddings;
    if (rr.embedding) embeddings = std::make_unique<EmbeddingCache>(*rr.embedding);
    EmbedFn embed_fn;
    if (embeddings)
        embed_fn = [&cache = *embeddings](const std::vector<std::string>& texts) {
            return cache.embed(texts);
        };

    std::mutex err_mu;
    std::vector<std::string> errors;
    detail::run_parallel(n_q * n_p, cfg.concurrency, [&](std::size_t i) {
        const std::size_t q = i / n_p, p = i % n_p;
        const MCQInstance& inst = rr.test.instances[q];
        const PermutationSpec& spec = rr.plan[p];
        try {
            const Transcript t = *store.get(inst.id, spec.id, rr.fingerprint, rr.model->id());
            const MCQInstance shown = apply_permutation(inst, spec);
            MatchContext ctx;
            ctx.question_id = inst.id;
            ctx.permutation_id = spec.id;
            ctx.golden_text = inst.golden_text();
            ctx.fallback_seed = derive_seed(cfg.master_seed, inst.id, spec.id, "fallback");
            if (cfg.protocol.mode == PredictionMode::standard) {
                const ExtractedAnswer ext =
                    extract_letter(t.raw_output, cfg.protocol.labels, inst.n_options());
                m.predictions[q][p] = resolve_letter(ext, cfg.protocol.labels, shown.options, ctx);
            } else {
                const ExtractedAnswer ext = extract_matched(t.raw_output, shown.options);
                m.predictions[q][p] =
                    match_option(ext, shown.options, ctx, embed_fn, cfg.similarity, cfg.tie_rule);
            }
        } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(err_mu);
            errors.push_back(inst.id + "/" + spec.id + ": " + e.what());
        }
    });
    if (!errors.empty()) {
        std::sort(errors.begin(), errors.end());
        throw BackendError("prediction failed for " + std::to_string(errors.size()) +
                           " cell(s), first: " + errors.front());
    }
    m.validate();
    return m;
}

// ---------------------------------------------------------------------------
// Run-directory persistence

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("not writable: " + path.string());
    out << content;
    if (!out) throw Error("write failed: " + path.string());
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

inline std::string protocol_label(const ProtocolConfig& p) {
    return std::string(to_string(p.mode)) + "+" + p.labels.name;
}

inline nlohmann::ordered_json prediction_to_json(const Prediction& pred) {
    nlohmann::ordered_json j;
    j["question_id"] = pred.question_id;
    j["permutation_id"] = pred.permutation_id;
    j["predicted_index"] = pred.predicted_index;
    j["predicted_identity"] = pred.predicted_identity;
    j["correct"] = pred.correct;
    j["rule_id"] = pred.rule_id;
    j["used_fallback"] = pred.used_fallback;
    if (!pred.similarity_scores.empty()) j["similarity_scores"] = pred.similarity_scores;
    return j;
}

inline std::map<std::string, double> matrix_extraction_stats(const RunMatrix& m) {
    std::vector<int> rule_ids;
    for (const auto& row : m.predictions)
        for (const auto& pred : row) rule_ids.push_back(pred.rule_id);
    return extraction_stats(rule_ids);
}

inline nlohmann::ordered_json run_summary_json(const RunConfig& cfg, const ResolvedRun& rr,
                                               const RunMatrix& m, const AccuracySummary& s) {
    nlohmann::ordered_json j;
    j["dataset_id"] = m.dataset_id;
    j["model_id"] = m.model_id;
    j["protocol"] = protocol_label(cfg.protocol);
    j["protocol_fingerprint"] = m.protocol_fingerprint;
    j["n_questions"] = m.question_ids.size();
    j["n_options"] = rr.test.n_options();
    j["permutation_ids"] = m.permutation_ids;
    nlohmann::ordered_json acc;
    for (std::size_t p = 0; p < m.permutation_ids.size(); ++p)
        acc[m.permutation_ids[p]] = accuracy(m, p);
    j["accuracy_per_permutation"] = acc;
    j["summary"] = summary_to_json(s);
    j["extraction_stats"] = matrix_extraction_stats(m);
    return j;
}

inline std::vector<double> per_permutation_accuracies(const RunMatrix& m) {
    std::vector<double> acc;
    for (std::size_t p = 0; p < m.permutation_ids.size(); ++p) acc.push_back(accuracy(m, p));
    return acc;
}

// Writes config.json, manifest.json, predictions.jsonl, summary.{json,txt},
// and boxplot.json into the run directory. Generated datasets are written
// under data/ and the persisted config points at them, so the directory is a
// self-contained, re-scorable artifact.
inline void persist_run(RunConfig cfg, const ResolvedRun& rr, const RunMatrix& m,
                        const AccuracySummary& s, const std::filesystem::path& base_dir = {}) {
    namespace fs = std::filesystem;
    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir);
    if (rr.generated) {
        fs::create_directories(dir / "data");
        write_dataset(rr.test, dir / "data" / (rr.test.dataset_id + ".jsonl"));
        write_dataset(rr.fewshot_pool, dir / "data" / (rr.fewshot_pool.dataset_id + ".jsonl"));
        cfg.dataset.nonsense.reset();
        cfg.dataset.path = "data/" + rr.test.dataset_id + ".jsonl";
        cfg.dataset.fewshot_path = "data/" + rr.fewshot_pool.dataset_id + ".jsonl";
    } else {
        // Re-anchor user paths (relative to base_dir, the same anchor
        // resolve_run used) so the run directory scores from anywhere.
        cfg.dataset.path = fs::absolute(detail::resolve_path(cfg.dataset.path, base_dir)).string();
        if (!cfg.dataset.fewshot_path.empty())
            cfg.dataset.fewshot_path =
                fs::absolute(detail::resolve_path(cfg.dataset.fewshot_path, base_dir)).string();
    }
    if (!cfg.template_path.empty())
        cfg.template_path = fs::absolute(detail::resolve_path(cfg.template_path, base_dir)).string();
    write_json_file(dir / "config.json", run_config_to_json(cfg));

    nlohmann::ordered_json manifest;
    manifest["dataset_id"] = m.dataset_id;
    manifest["model_id"] = m.model_id;
    manifest["embedding_id"] = rr.embedding ? rr.embedding->id() : "";
    manifest["protocol"] = protocol_label(cfg.protocol);
    manifest["protocol_fingerprint"] = m.protocol_fingerprint;
    manifest["rng"] = kRngVersion;
    manifest["master_seed"] = cfg.master_seed;
    manifest["n_questions"] = m.question_ids.size();
    manifest["n_options"] = rr.test.n_options();
    manifest["permutation_ids"] = m.permutation_ids;
    nlohmann::ordered_json exemplars = nlohmann::ordered_json::array();
    for (const auto& ex : rr.fewshot.exemplars) exemplars.push_back(ex.id);
    manifest["fewshot_exemplars"] = exemplars;
    write_json_file(dir / "manifest.json", manifest);

    std::string preds;
    for (const auto& row : m.predictions)
        for (const auto& pred : row) preds += prediction_to_json(pred).dump() + "\n";
    write_text_file(dir / "predictions.jsonl", preds);

    write_json_file(dir / "summary.json", run_summary_json(cfg, rr, m, s));
    write_text_file(dir / "summary.txt",
                    render_summary_table({{m.model_id, m.dataset_id, protocol_label(cfg.protocol), s}}));

    nlohmann::ordered_json box = nlohmann::ordered_json::array();
    box.push_back(boxplot_entry(m.model_id, m.dataset_id, protocol_label(cfg.protocol),
                                per_permutation_accuracies(m), s.acc_original, s.score));
    write_json_file(dir / "boxplot.json", box);
}

// ---------------------------------------------------------------------------
// Whole-run entry points (shared by the CLI and tests)

struct RunOutcome {
    RunMatrix matrix;
    AccuracySummary summary;
    SweepStats stats;
    std::string protocol; // e.g. "matched+dash", for display rows
};

// Full sweep: resolve, fill the transcript cache, predict, summarize,
// persist. Throws BackendError when any cell failed permanently (after
// persisting nothing but transcripts — the next run resumes from them).
inline RunOutcome execute_run(const RunConfig& cfg, const std::filesystem::path& base_dir = {}) {
    cfg.validate();
    if (cfg.output_dir.empty()) throw ConfigError("run needs an output_dir");
    ResolvedRun rr = resolve_run(cfg, base_dir);
    std::filesystem::create_directories(cfg.output_dir);
    TranscriptStore store(cfg.output_dir / "transcripts.jsonl");
    RunOutcome out;
    out.stats = generate_transcripts(cfg, rr, store);
    if (!out.stats.failed_cells.empty()) {
        std::string msg = std::to_string(out.stats.failed_cells.size()) +
                          " cell(s) failed permanently; transcripts for completed cells are "
                          "cached, re-run to resume. First failure: " + out.stats.failed_cells.front();
        throw BackendError(msg);
    }
    out.matrix = predict_from_store(cfg, rr, store);
    out.summary = summarize(out.matrix);
    out.protocol = protocol_label(cfg.protocol);
    persist_run(cfg, rr, out.matrix, out.summary, base_dir);
    return out;
}

// Re-score an existing run directory from its persisted config + transcript
// store. Issues zero generation calls; `agreement` switches the SCORE
// definition without touching accuracies.
inline RunOutcome score_run_dir(const std::filesystem::path& run_dir,
                                const std::string& agreement = "identity") {
    const RunConfig cfg = load_run_config(run_dir / "config.json");
    ResolvedRun rr = resolve_run(cfg, run_dir);
    if (!std::filesystem::exists(run_dir / "transcripts.jsonl"))
        throw IncompleteGridError("no transcript store in " + run_dir.string());
    TranscriptStore store(run_dir / "transcripts.jsonl");
    RunOutcome out;
    out.stats.cached = store.size();
    out.matrix = predict_from_store(cfg, rr, store);
    AgreementFn fn;
    if (agreement == "identity") {
        fn = identity_agreement();
    } else if (agreement == "embedding") {
        if (!rr.embedding)
            throw ConfigError("embedding agreement needs an embedding backend in the run config");
        auto cache = std::make_shared<EmbeddingCache>(*rr.embedding);
        // keep the backend alive alongside the cache inside the closure
        auto backend = std::shared_ptr<EmbeddingBackend>(std::move(rr.embedding));
        fn = embedding_agreement([cache, backend](const std::vector<std::string>& texts) {
            return cache->embed(texts);
        });
    } else {
        throw ConfigError("agreement must be \"identity\" or \"embedding\"");
    }
    out.summary = summarize(out.matrix, fn);
    out.protocol = protocol_label(cfg.protocol);
    return out;
}

} // namespace permeval
