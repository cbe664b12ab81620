#pragma once

#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "permeval/errors.hpp"
#include "permeval/matching.hpp"
#include "permeval/protocol.hpp"
#include "permeval/rng.hpp"

// Raw-text producers for prompts and vector producers for matching: an
// OpenAI-compatible HTTP client, deterministic simulated model archetypes
// (controllable ground truth for bias experiments), a deterministic mock
// embedder, and an append-only transcript store that doubles as the response
// cache, keyed by (question, permutation, protocol fingerprint, backend).

namespace permeval {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Generation parameters

struct GenerationParams {
    double temperature = 0.6;
    int top_k = 20;
    double top_p = 0.95;
    double min_p = 0.0;
    int max_tokens = 4096;
    std::optional<std::uint64_t> seed;

    void validate() const {
        if (temperature < 0) throw ConfigError("temperature must be >= 0");
        if (top_k < 1) throw ConfigError("top_k must be >= 1");
        if (top_p <= 0 || top_p > 1) throw ConfigError("top_p must be in (0,1]");
        if (min_p < 0 || min_p > 1) throw ConfigError("min_p must be in [0,1]");
        if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
    }
};

inline ordered_json params_to_json(const GenerationParams& p) {
    ordered_json j;
    j["temperature"] = p.temperature;
    j["top_k"] = p.top_k;
    j["top_p"] = p.top_p;
    j["min_p"] = p.min_p;
    j["max_tokens"] = p.max_tokens;
    if (p.seed) j["seed"] = *p.seed;
    return j;
}

inline GenerationParams params_from_json(const nlohmann::json& j, const std::string& where) {
    GenerationParams p;
    try {
        if (j.contains("temperature")) p.temperature = j.at("temperature").get<double>();
        if (j.contains("top_k")) p.top_k = j.at("top_k").get<int>();
        if (j.contains("top_p")) p.top_p = j.at("top_p").get<double>();
        if (j.contains("min_p")) p.min_p = j.at("min_p").get<double>();
        if (j.contains("max_tokens")) p.max_tokens = j.at("max_tokens").get<int>();
        if (j.contains("seed") && !j.at("seed").is_null())
            p.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(where + ": bad generation params: " + e.what());
    }
    p.validate();
    return p;
}

// ---------------------------------------------------------------------------
// Backend interfaces

struct GenerationOutcome {
    std::string text;
    int retries = 0;        // attempts beyond the first
    double elapsed_ms = 0;
};

class GenerationBackend {
public:
    virtual ~GenerationBackend() = default;
    virtual std::string id() const = 0;
    virtual GenerationOutcome complete(const PromptBundle& bundle, const GenerationParams& params) = 0;
};

class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;
    virtual std::string id() const = 0;
    virtual std::vector<Vec> embed(const std::vector<std::string>& texts) = 0;
};

// ---------------------------------------------------------------------------
// Simulated model archetypes

enum class Archetype { explicit_fewshot, position_biased, label_biased, random, faithful };

inline const char* to_string(Archetype a) {
    switch (a) {
        case Archetype::explicit_fewshot: return "explicit_fewshot";
        case Archetype::position_biased: return "position_biased";
        case Archetype::label_biased: return "label_biased";
        case Archetype::random: return "random";
        case Archetype::faithful: return "faithful";
    }
    return "?";
}

inline Archetype archetype_from_string(const std::string& s) {
    if (s == "explicit_fewshot") return Archetype::explicit_fewshot;
    if (s == "position_biased") return Archetype::position_biased;
    if (s == "label_biased") return Archetype::label_biased;
    if (s == "random") return Archetype::random;
    if (s == "faithful") return Archetype::faithful;
    throw ConfigError("unknown archetype \"" + s + "\" (expected explicit_fewshot, "
                      "position_biased, label_biased, random, or faithful)");
}

struct SimulatedModelSpec {
    Archetype archetype = Archetype::random;
    int target_position = 0;        // position_biased; label_biased fallback slot
    std::string preferred_glyph = "A"; // label_biased
    double p_know = 1.0;            // faithful: probability of answering golden
    double follow_q = 1.0;          // explicit_fewshot: probability of exploiting
                                    // the exemplar pattern per cell (< 1 models
                                    // a model that only leans on the pattern
                                    // rather than copying it every time)
    std::uint64_t seed = 0;

    void validate() const {
        if (p_know < 0 || p_know > 1) throw ConfigError("faithful p must be in [0,1]");
        if (follow_q < 0 || follow_q > 1) throw ConfigError("explicit_fewshot q must be in [0,1]");
        if (target_position < 0) throw ConfigError("target position must be >= 0");
        if (preferred_glyph.empty()) throw ConfigError("preferred glyph must be nonempty");
    }

    std::string backend_id() const {
        char buf[64];
        std::string id = std::string("sim:") + to_string(archetype);
        switch (archetype) {
            case Archetype::position_biased:
                id += ":pos=" + std::to_string(target_position);
                break;
            case Archetype::label_biased:
                id += ":glyph=" + preferred_glyph + ":pos=" + std::to_string(target_position);
                break;
            case Archetype::faithful:
                std::snprintf(buf, sizeof(buf), ":p=%g", p_know);
                id += buf;
                break;
            case Archetype::explicit_fewshot:
                std::snprintf(buf, sizeof(buf), ":q=%g", follow_q);
                id += buf;
                break;
            case Archetype::random:
                break;
        }
        id += ":seed=" + std::to_string(seed);
        return id;
    }
};

namespace detail {

// Modal value; ties broken toward the lowest position.
inline int modal_position(const std::vector<int>& positions) {
    std::map<int, int> counts;
    for (int p : positions) ++counts[p];
    int best = positions.front(), best_count = 0;
    for (const auto& [pos, count] : counts) { // std::map iterates ascending
        if (count > best_count) { best = pos; best_count = count; }
    }
    return best;
}

} // namespace detail

// Deterministic text for a bundle: every archetype resolves to a rendered
// position, then phrases its answer the way the bundle's mode asked for
// (label glyph under standard mode, full option text under matched mode).
// Randomness is a pure function of (spec seed, question id, permutation id),
// so parallel and serial sweeps produce identical outputs.
inline std::string simulate(const SimulatedModelSpec& spec, const PromptBundle& bundle) {
    spec.validate();
    const int n = static_cast<int>(bundle.option_order.size());
    if (n < 2) throw ConfigError("simulate: bundle has fewer than 2 options");
    SplitMix64 rng(derive_seed(spec.seed, bundle.question_id, bundle.permutation_id, "sim"));

    int chosen = 0;
    std::string reasoning;
    switch (spec.archetype) {
        case Archetype::explicit_fewshot: {
            if (bundle.fewshot_golden_positions.empty())
                throw ConfigError("explicit_fewshot archetype needs few-shot exemplars in the prompt");
            const int modal = detail::modal_position(bundle.fewshot_golden_positions);
            if (modal >= n)
                throw ConfigError("exemplar golden position out of range for the test question");
            if (rng.unit() < spec.follow_q) {
                chosen = modal;
                reasoning = "Every worked example marks the option in slot " +
                            std::to_string(modal + 1) + " as correct, so the same slot should "
                            "hold for this question as well.";
            } else {
                chosen = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
                reasoning = "The worked examples hint at a slot, but this question looks "
                            "different, so I will judge it on its own.";
            }
            break;
        }
        case Archetype::position_biased: {
            if (spec.target_position >= n)
                throw ConfigError("position_biased target " + std::to_string(spec.target_position) +
                                  " out of range for " + std::to_string(n) + " options");
            chosen = spec.target_position;
            reasoning = "The option in slot " + std::to_string(chosen + 1) +
                        " usually reads best to me.";
            break;
        }
        case Archetype::label_biased: {
            chosen = -1;
            if (bundle.label_scheme.kind == SchemeKind::distinct) {
                for (int i = 0; i < n; ++i) {
                    if (bundle.label_scheme.glyph(i) == spec.preferred_glyph) { chosen = i; break; }
                }
            }
            if (chosen >= 0) {
                reasoning = "Options labeled \"" + spec.preferred_glyph + "\" have a good track record.";
            } else {
                // Declared fallback: without a matching distinct label there is
                // nothing to prefer, so fall back to a fixed position habit.
                if (spec.target_position >= n)
                    throw ConfigError("label_biased fallback position out of range");
                chosen = spec.target_position;
                reasoning = "No label stands out here, so I will go with slot " +
                            std::to_string(chosen + 1) + " as usual.";
            }
            break;
        }
        case Archetype::random: {
            chosen = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
            reasoning = "Nothing here narrows it down, so any option is as good as another.";
            break;
        }
        case Archetype::faithful: {
            if (bundle.golden_index_rendered < 0 || bundle.golden_index_rendered >= n)
                throw ConfigError("faithful archetype: bundle lacks a valid golden index");
            if (rng.unit() < spec.p_know) {
                chosen = bundle.golden_index_rendered;
                reasoning = "Working through the question, one option is clearly right.";
            } else {
                std::uint64_t pick = rng.below(static_cast<std::uint64_t>(n - 1));
                chosen = static_cast<int>(pick);
                if (chosen >= bundle.golden_index_rendered) ++chosen;
                reasoning = "None of these look obviously right; going with a hunch.";
            }
            break;
        }
    }

    const std::string payload = bundle.mode == PredictionMode::standard
                                    ? bundle.label_scheme.glyph(chosen)
                                    : bundle.option_order.at(static_cast<std::size_t>(chosen));
    return std::string(kStepByStepCue) + " " + reasoning + " The answer is (" + payload + ").";
}

class SimulatedGenerationBackend final : public GenerationBackend {
public:
    explicit SimulatedGenerationBackend(SimulatedModelSpec spec) : spec_(std::move(spec)) {
        spec_.validate();
    }
    std::string id() const override { return spec_.backend_id(); }
    GenerationOutcome complete(const PromptBundle& bundle, const GenerationParams& params) override {
        params.validate();
        return {simulate(spec_, bundle), 0, 0.0};
    }
    const SimulatedModelSpec& spec() const { return spec_; }

private:
    SimulatedModelSpec spec_;
};

// ---------------------------------------------------------------------------
// Mock embedding backend

inline constexpr std::size_t kMockEmbeddingDim = 4096;
inline constexpr const char* kMockEmbeddingId = "mock-embed:bow-fnv1a-v1:4096";

// Bag-of-words count vector: each lowercased alphanumeric token is hashed to
// one of 4096 buckets, then the vector is scaled to unit length. Identical
// texts embed identically; texts with no shared token buckets are orthogonal.
inline Vec mock_embed_one(const std::string& text) {
    Vec v(kMockEmbeddingDim, 0.0);
    std::string token;
    auto flush = [&] {
        if (token.empty()) return;
        v[static_cast<std::size_t>(fnv1a(token) % kMockEmbeddingDim)] += 1.0;
        token.clear();
    };
    for (char c : text) {
        const unsigned char u = static_cast<unsigned char>(c);
        if (std::isalnum(u)) {
            token += static_cast<char>(std::tolower(u));
        } else {
            flush();
        }
    }
    flush();
    double norm = 0;
    for (double x : v) norm += x * x;
    if (norm > 0) {
        norm = std::sqrt(norm);
        for (double& x : v) x /= norm;
    }
    return v;
}

class MockEmbeddingBackend final : public EmbeddingBackend {
public:
    std::string id() const override { return kMockEmbeddingId; }
    std::vector<Vec> embed(const std::vector<std::string>& texts) override {
        if (texts.empty()) throw ConfigError("embed: empty batch");
        std::vector<Vec> out;
        out.reserve(texts.size());
        for (const auto& t : texts) out.push_back(mock_embed_one(t));
        return out;
    }
};

// ---------------------------------------------------------------------------
// HTTP backends (OpenAI-compatible)

struct HttpEndpointConfig {
    std::string base_url;   // e.g. "http://127.0.0.1:8000"
    std::string model;
    std::string chat_path = "/v1/chat/completions";
    std::string embeddings_path = "/v1/embeddings";
    std::string api_key_env;    // env var NAME holding the key; empty = no auth
    int timeout_s = 120;
    int max_retries = 3;        // retries after the first attempt
    int backoff_ms = 250;       // doubled on each retry

    void validate() const {
        if (base_url.empty() || model.empty())
            throw ConfigError("http backend needs base_url and model");
        if (base_url.rfind("https://", 0) == 0)
            throw ConfigError("this build speaks plain http only; point base_url at an "
                              "http endpoint or a local TLS-terminating proxy");
        if (base_url.rfind("http://", 0) != 0)
            throw ConfigError("base_url must start with http://");
        if (max_retries < 0 || backoff_ms < 0 || timeout_s < 1)
            throw ConfigError("http backend retry/timeout settings must be non-negative");
    }

    // Key material is resolved at call time from the environment and never
    // stored or logged; transcripts carry only the backend id below.
    std::string resolve_api_key() const {
        if (api_key_env.empty()) return "";
        const char* v = std::getenv(api_key_env.c_str());
        if (v == nullptr || *v == '\0')
            throw ConfigError("environment variable " + api_key_env +
                              " (named by the run config) is not set");
        return v;
    }

    std::string backend_id() const { return "http:" + base_url + ":" + model; }
};

namespace detail {

// One attempt loop shared by both HTTP backends. Retries transport errors,
// 429 and 5xx with exponential backoff; other non-200 statuses fail at once.
// `context` names the work unit so failures are resumable by key.
inline nlohmann::json http_post_json(const HttpEndpointConfig& cfg, const std::string& path,
                                     const ordered_json& body, const std::string& context,
                                     int* retries_out) {
    httplib::Headers headers;
    const std::string key = cfg.resolve_api_key();
    if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);
    const std::string payload = body.dump();

    std::string last_error;
    for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        if (attempt > 0) {
            const int wait = cfg.backoff_ms << (attempt - 1);
            std::this_thread::sleep_for(std::chrono::milliseconds(wait));
        }
        // A fresh client per call keeps this function safe to run from many
        // worker threads at once; connection reuse is not worth shared state.
        httplib::Client cli(cfg.base_url);
        cli.set_connection_timeout(cfg.timeout_s, 0);
        cli.set_read_timeout(cfg.timeout_s, 0);
        cli.set_write_timeout(cfg.timeout_s, 0);
        httplib::Result res = cli.Post(path, headers, payload, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 429 || res->status >= 500) {
            last_error = "status " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200)
            throw BackendError("endpoint " + cfg.base_url + path + " returned status " +
                               std::to_string(res->status) + " for " + context + ": " + res->body);
        if (retries_out) *retries_out = attempt;
        try {
            return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            throw BackendError("endpoint " + cfg.base_url + path +
                               " returned unparseable JSON for " + context + ": " + e.what());
        }
    }
    throw BackendError("endpoint " + cfg.base_url + path + " failed after " +
                       std::to_string(cfg.max_retries + 1) + " attempts for " + context +
                       " (last: " + last_error + ")");
}

} // namespace detail

class HttpGenerationBackend final : public GenerationBackend {
public:
    explicit HttpGenerationBackend(HttpEndpointConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }
    std::string id() const override { return cfg_.backend_id(); }

    GenerationOutcome complete(const PromptBundle& bundle, const GenerationParams& params) override {
        params.validate();
        ordered_json body;
        body["model"] = cfg_.model;
        body["messages"] = ordered_json::array({ordered_json{{"role", "user"}, {"content", bundle.text}}});
        body["temperature"] = params.temperature;
        body["top_k"] = params.top_k;
        body["top_p"] = params.top_p;
        body["min_p"] = params.min_p;
        body["max_tokens"] = params.max_tokens;
        if (params.seed) body["seed"] = *params.seed;

        const std::string context = "cell (" + bundle.question_id + ", " + bundle.permutation_id + ")";
        GenerationOutcome out;
        const auto start = std::chrono::steady_clock::now();
        const nlohmann::json reply = detail::http_post_json(cfg_, cfg_.chat_path, body, context, &out.retries);
        out.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

        try {
            const auto& choice = reply.at("choices").at(0);
            if (choice.contains("message"))
                out.text = choice.at("message").at("content").get<std::string>();
            else
                out.text = choice.at("text").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw BackendError("chat reply for " + context + " lacks choices[0] text: " + e.what());
        }
        return out;
    }

private:
    HttpEndpointConfig cfg_;
};

class HttpEmbeddingBackend final : public EmbeddingBackend {
public:
    explicit HttpEmbeddingBackend(HttpEndpointConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }
    std::string id() const override { return "http-embed:" + cfg_.base_url + ":" + cfg_.model; }

    std::vector<Vec> embed(const std::vector<std::string>& texts) override {
        if (texts.empty()) throw ConfigError("embed: empty batch");
        ordered_json body;
        body["model"] = cfg_.model;
        body["input"] = texts;
        const std::string context = "embedding batch of " + std::to_string(texts.size());
        const nlohmann::json reply = detail::http_post_json(cfg_, cfg_.embeddings_path, body, context, nullptr);

        std::vector<Vec> out(texts.size());
        std::vector<bool> seen(texts.size(), false);
        try {
            const auto& data = reply.at("data");
            if (data.size() != texts.size())
                throw BackendError("embeddings endpoint returned " + std::to_string(data.size()) +
                                   " vectors for " + std::to_string(texts.size()) + " inputs");
            for (const auto& item : data) {
                const std::size_t idx = item.at("index").get<std::size_t>();
                if (idx >= out.size() || seen[idx])
                    throw BackendError("embeddings endpoint returned a bad or duplicate index");
                out[idx] = item.at("embedding").get<Vec>();
                seen[idx] = true;
            }
        } catch (const nlohmann::json::exception& e) {
            throw BackendError("embeddings reply unparseable: " + std::string(e.what()));
        }
        for (std::size_t i = 1; i < out.size(); ++i)
            if (out[i].size() != out[0].size())
                throw BackendError("embeddings endpoint returned mixed dimensions in one batch");
        return out;
    }

private:
    HttpEndpointConfig cfg_;
};

// ---------------------------------------------------------------------------
// Transcript store

inline std::string hash_prompt(const std::string& prompt_text) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(prompt_text)));
    return buf;
}

struct Transcript {
    std::string question_id;
    std::string permutation_id;
    std::string protocol_fingerprint;
    std::string backend_id;
    std::string prompt_hash;
    std::string raw_output;
    double elapsed_ms = 0;
    int retries = 0;
    GenerationParams params;
};

inline ordered_json transcript_to_json(const Transcript& t) {
    ordered_json j;
    j["question_id"] = t.question_id;
    j["permutation_id"] = t.permutation_id;
    j["protocol_fingerprint"] = t.protocol_fingerprint;
    j["backend_id"] = t.backend_id;
    j["prompt_hash"] = t.prompt_hash;
    j["raw_output"] = t.raw_output;
    j["elapsed_ms"] = t.elapsed_ms;
    j["retries"] = t.retries;
    j["params"] = params_to_json(t.params);
    return j;
}

inline Transcript transcript_from_json(const nlohmann::json& j, const std::string& where) {
    Transcript t;
    try {
        t.question_id = j.at("question_id").get<std::string>();
        t.permutation_id = j.at("permutation_id").get<std::string>();
        t.protocol_fingerprint = j.at("protocol_fingerprint").get<std::string>();
        t.backend_id = j.at("backend_id").get<std::string>();
        t.prompt_hash = j.at("prompt_hash").get<std::string>();
        t.raw_output = j.at("raw_output").get<std::string>();
        t.elapsed_ms = j.at("elapsed_ms").get<double>();
        t.retries = j.at("retries").get<int>();
        t.params = params_from_json(j.at("params"), where);
    } catch (const nlohmann::json::exception& e) {
        throw BackendError(where + ": bad transcript record: " + e.what());
    }
    return t;
}

// Append-only JSONL cache of raw model outputs. One record per line; the key
// (question_id, permutation_id, protocol_fingerprint, backend_id) is unique.
// Writes are flushed per record so an interrupted sweep loses at most the
// line being written; on load, a parse failure on a final unterminated line
// is treated as that interrupted write and dropped, while a bad line anywhere
// else is corruption and is reported with its line number.
class TranscriptStore {
public:
    explicit TranscriptStore(std::filesystem::path path) : path_(std::move(path)) {
        const std::optional<std::uintmax_t> keep_bytes = load();
        // When load() dropped an interrupted final write, cut the partial line
        // off before appending, or the next record would fuse onto it.
        if (keep_bytes) std::filesystem::resize_file(path_, *keep_bytes);
        out_.open(path_, std::ios::binary | std::ios::app);
        if (!out_) throw BackendError("transcript store not writable: " + path_.string());
    }

    static std::string key_of(const std::string& question_id, const std::string& permutation_id,
                              const std::string& protocol_fingerprint, const std::string& backend_id) {
        std::string k = question_id;
        k += '\x1f'; k += permutation_id;
        k += '\x1f'; k += protocol_fingerprint;
        k += '\x1f'; k += backend_id;
        return k;
    }

    std::optional<Transcript> get(const std::string& question_id, const std::string& permutation_id,
                                  const std::string& protocol_fingerprint,
                                  const std::string& backend_id) const {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = items_.find(key_of(question_id, permutation_id, protocol_fingerprint, backend_id));
        if (it == items_.end()) return std::nullopt;
        return it->second;
    }

    void put(const Transcript& t) {
        std::lock_guard<std::mutex> lock(mu_);
        const std::string key = key_of(t.question_id, t.permutation_id, t.protocol_fingerprint, t.backend_id);
        if (items_.count(key))
            throw BackendError("transcript store already holds cell (" + t.question_id + ", " +
                               t.permutation_id + ") for this protocol and backend");
        // error_handler_t::replace keeps a pathological non-UTF-8 model output
        // from aborting the sweep; well-formed text round-trips bit-exactly.
        out_ << transcript_to_json(t).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace)
             << '\n';
        out_.flush();
        if (!out_) throw BackendError("transcript store write failed: " + path_.string());
        items_.emplace(key, t);
    }

    std::size_t size() const {
        std::lock_guard<std::mutex> lock(mu_);
        return items_.size();
    }

    std::vector<Transcript> all() const {
        std::lock_guard<std::mutex> lock(mu_);
        std::vector<Transcript> out;
        out.reserve(items_.size());
        for (const auto& [key, t] : items_) out.push_back(t);
        return out;
    }

    const std::filesystem::path& path() const { return path_; }

private:
    // Returns the byte count to truncate the file to when a final interrupted
    // write was dropped, or nullopt when the whole file was consumed.
    std::optional<std::uintmax_t> load() {
        std::ifstream in(path_, std::ios::binary);
        if (!in) return std::nullopt; // fresh store
        std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        const bool ends_with_newline = !content.empty() && content.back() == '\n';
        std::size_t line_no = 0, pos = 0;
        while (pos < content.size()) {
            const std::size_t line_start = pos;
            std::size_t eol = content.find('\n', pos);
            const bool last = eol == std::string::npos;
            std::string line = content.substr(pos, last ? std::string::npos : eol - pos);
            pos = last ? content.size() : eol + 1;
            ++line_no;
            if (line.empty()) continue;
            nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded()) {
                if (last && !ends_with_newline)
                    return static_cast<std::uintmax_t>(line_start); // interrupted final write
                throw BackendError("transcript store " + path_.string() + " corrupt at line " +
                                   std::to_string(line_no));
            }
            Transcript t = transcript_from_json(j, path_.string() + ":" + std::to_string(line_no));
            const std::string key = key_of(t.question_id, t.permutation_id,
                                           t.protocol_fingerprint, t.backend_id);
            if (items_.count(key))
                throw BackendError("transcript store " + path_.string() + " duplicate key at line " +
                                   std::to_string(line_no));
            items_.emplace(key, std::move(t));
        }
        return std::nullopt;
    }

    mutable std::mutex mu_;
    std::filesystem::path path_;
    std::map<std::string, Transcript> items_;
    std::ofstream out_;
};

} // namespace permeval
