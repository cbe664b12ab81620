#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "permeval/errors.hpp"
#include "permeval/extraction.hpp"
#include "permeval/protocol.hpp"
#include "permeval/rng.hpp"

// Resolves an extracted answer to a predicted option index: by embedding
// similarity in matched mode, by glyph lookup in standard mode. A prediction
// records the chosen option's *text* as its identity — positions change
// between permutations, texts do not, so cross-permutation agreement is
// always compared on identities.

namespace permeval {

enum class SimilarityKind { cosine, dot, neg_euclidean };
enum class TieRule { lowest_index, seeded_random };

inline const char* to_string(SimilarityKind k) {
    switch (k) {
        case SimilarityKind::cosine: return "cosine";
        case SimilarityKind::dot: return "dot";
        default: return "neg_euclidean";
    }
}

using Vec = std::vector<double>;
// Batch embedding: one vector per input text, order preserved.
using EmbedFn = std::function<std::vector<Vec>(const std::vector<std::string>&)>;

inline double similarity(const Vec& u, const Vec& v, SimilarityKind kind) {
    if (u.size() != v.size())
        throw ConfigError("similarity: dimension mismatch (" + std::to_string(u.size()) +
                          " vs " + std::to_string(v.size()) + ")");
    double dot = 0, nu = 0, nv = 0, dist2 = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
        const double d = u[i] - v[i];
        dist2 += d * d;
    }
    switch (kind) {
        case SimilarityKind::cosine:
            if (nu == 0.0 || nv == 0.0)
                throw ConfigError("cosine similarity undefined for a zero vector");
            // sqrt(nu*nv) rather than sqrt(nu)*sqrt(nv): when u and v are the
            // same vector, dot == nu == nv and sqrt(x*x) == x in binary64, so
            // identical inputs score exactly 1.0.
            return dot / std::sqrt(nu * nv);
        case SimilarityKind::dot:
            return dot;
        default:
            return -std::sqrt(dist2);
    }
}

struct Prediction {
    std::string question_id;
    std::string permutation_id;
    int predicted_index = -1;           // index into the rendered option order
    std::string predicted_identity;     // the chosen option's text
    bool correct = false;
    std::vector<double> similarity_scores; // per rendered option; empty if unused
    int rule_id = 0;                    // extraction provenance
    bool used_fallback = false;         // random pick (extraction or glyph miss)
};

// Everything match_option/resolve_letter need beyond the extracted answer:
// which cell this is, what the right answer's text is, and the seed that
// makes fallback picks reproducible per (master seed, question, permutation).
struct MatchContext {
    std::string question_id;
    std::string permutation_id;
    std::string golden_text;
    std::uint64_t fallback_seed = 0;
};

namespace detail {

inline Prediction pick_option(const std::vector<std::string>& options, int index,
                              const MatchContext& ctx) {
    Prediction p;
    p.question_id = ctx.question_id;
    p.permutation_id = ctx.permutation_id;
    p.predicted_index = index;
    p.predicted_identity = options.at(static_cast<std::size_t>(index));
    p.correct = p.predicted_identity == ctx.golden_text;
    return p;
}

inline int seeded_pick(std::size_t n, std::uint64_t seed) {
    SplitMix64 rng(seed);
    return static_cast<int>(rng.below(n));
}

inline void normalize(Vec& v) {
    double n2 = 0;
    for (double x : v) n2 += x * x;
    if (n2 == 0.0) return; // leave zero vectors alone; cosine will reject them
    const double inv = 1.0 / std::sqrt(n2);
    for (double& x : v) x *= inv;
}

} // namespace detail

// Matched mode: embed the extracted text and every rendered option in one
// batch, take the most similar option. Vectors are unit-normalized on
// receipt, so cosine == dot and neg_euclidean ranks identically to cosine.
// Exact score ties go to the lowest index (or a seeded pick under the
// seeded_random tie rule). Fallback extractions skip embedding entirely and
// use the context's seeded pick.
inline Prediction match_option(const ExtractedAnswer& extracted,
                               const std::vector<std::string>& options,
                               const MatchContext& ctx,
                               const EmbedFn& embed_fn,
                               SimilarityKind sim_kind = SimilarityKind::cosine,
                               TieRule tie_rule = TieRule::lowest_index) {
    if (options.size() < 2) throw ConfigError("match_option: need at least 2 options");
    Prediction p;
    if (extracted.is_fallback()) {
        p = detail::pick_option(options, detail::seeded_pick(options.size(), ctx.fallback_seed), ctx);
        p.used_fallback = true;
        p.rule_id = 0;
        return p;
    }

    std::vector<std::string> batch;
    batch.reserve(options.size() + 1);
    batch.push_back(extracted.text);
    for (const auto& o : options) batch.push_back(o);
    std::vector<Vec> vecs = embed_fn(batch);
    if (vecs.size() != batch.size())
        throw BackendError("embedding backend returned " + std::to_string(vecs.size()) +
                           " vectors for " + std::to_string(batch.size()) + " inputs");
    for (auto& v : vecs) detail::normalize(v);

    std::vector<double> scores(options.size());
    for (std::size_t k = 0; k < options.size(); ++k)
        scores[k] = similarity(vecs[0], vecs[k + 1], sim_kind);

    int best = 0;
    bool tie_with_best = false;
    for (std::size_t k = 1; k < options.size(); ++k) {
        if (scores[k] > scores[static_cast<std::size_t>(best)]) {
            best = static_cast<int>(k);
            tie_with_best = false;
        } else if (scores[k] == scores[static_cast<std::size_t>(best)]) {
            tie_with_best = true;
        }
    }
    if (tie_rule == TieRule::seeded_random && tie_with_best) {
        std::vector<int> tied;
        for (std::size_t k = 0; k < options.size(); ++k)
            if (scores[k] == scores[static_cast<std::size_t>(best)]) tied.push_back(static_cast<int>(k));
        best = tied[static_cast<std::size_t>(detail::seeded_pick(
            tied.size(), derive_seed(ctx.fallback_seed, "tie")))];
    }

    p = detail::pick_option(options, best, ctx);
    p.similarity_scores = std::move(scores);
    p.rule_id = extracted.rule_id;
    return p;
}

// Standard mode: the extracted glyph names a position in the scheme. A glyph
// outside the rendered scheme, or a fallback extraction, becomes a seeded
// uniform pick over the options, flagged as fallback.
inline Prediction resolve_letter(const ExtractedAnswer& extracted,
                                 const LabelScheme& scheme,
                                 const std::vector<std::string>& options,
                                 const MatchContext& ctx) {
    if (scheme.kind != SchemeKind::distinct)
        throw ConfigError("resolve_letter needs a distinct scheme; got \"" + scheme.name + "\"");
    int index = -1;
    if (!extracted.is_fallback()) {
        for (std::size_t g = 0; g < options.size() && g < scheme.glyphs.size(); ++g) {
            if (scheme.glyphs[g] == extracted.text) {
                index = static_cast<int>(g);
                break;
            }
        }
    }
    Prediction p;
    if (index < 0) {
        p = detail::pick_option(options, detail::seeded_pick(options.size(), ctx.fallback_seed), ctx);
        p.used_fallback = true;
        p.rule_id = extracted.is_fallback() ? 0 : extracted.rule_id;
        return p;
    }
    p = detail::pick_option(options, index, ctx);
    p.rule_id = extracted.rule_id;
    return p;
}

} // namespace permeval
