#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "permeval/protocol.hpp"

// Pulls a final answer out of raw model output. Matched mode runs a
// four-stage cascade, standard mode a three-stage label cascade; both take
// the LAST occurrence a stage can match and fall through to the next stage
// only when the current one finds nothing. A stage that matches nothing
// anywhere yields the fallback marker (rule_id 0); the matching module turns
// that marker into a seeded random pick, so extraction itself never errors.
//
// Matched-mode stages:
//   1  tail of the line after the last "answer is "            (case-insensitive)
//   2  tail after the last "answer:" + whitespace              (case-insensitive)
//   3  the candidate option whose text occurs latest in the output (verbatim,
//      case-insensitive; tie on start offset -> lowest option index)
//   4  the last sentence (segment after the final ./!/?; a terminator-free
//      final segment also counts)
// Stage 1/2 captures are cleaned (see clean_extracted); a capture that cleans
// to nothing kills its stage rather than re-trying earlier occurrences, since
// the last occurrence is what the stage is defined to look at.

namespace permeval {

struct ExtractedAnswer {
    std::string text;        // cleaned answer text (or the glyph, standard mode)
    int rule_id = 0;         // 1-based stage; 0 = fallback marker
    std::size_t span_begin = 0; // byte offsets into the raw output
    std::size_t span_end = 0;

    bool is_fallback() const { return rule_id == 0; }
};

namespace detail {

inline bool is_ws(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}
inline bool is_terminator(char c) { return c == '.' || c == '!' || c == '?'; }
inline bool is_word_char(char c) {
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
}
inline char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

inline std::string ascii_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](char c) { return ascii_lower(c); });
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && is_ws(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_ws(s.back())) s.remove_suffix(1);
    return s;
}

// All start offsets of `needle` in `hay` (both already lowercased).
inline std::vector<std::size_t> find_all(std::string_view hay, std::string_view needle) {
    std::vector<std::size_t> out;
    std::size_t pos = 0;
    while ((pos = hay.find(needle, pos)) != std::string_view::npos) {
        out.push_back(pos);
        ++pos;
    }
    return out;
}

inline std::size_t line_end(std::string_view s, std::size_t from) {
    std::size_t nl = s.find('\n', from);
    return nl == std::string_view::npos ? s.size() : nl;
}

// Case-insensitive prefix phrase match; returns chars consumed or 0.
inline std::size_t match_prefix_ci(std::string_view s, std::string_view phrase) {
    if (s.size() < phrase.size()) return 0;
    for (std::size_t i = 0; i < phrase.size(); ++i)
        if (ascii_lower(s[i]) != phrase[i]) return 0;
    return phrase.size();
}

} // namespace detail

// Canonicalizes a stage-1/2 capture. The raw tails those stages grab carry
// the punctuation the model wrapped its answer in; matching wants the bare
// answer. Passes, in order: trim; drop one trailing sentence terminator; drop
// a leading "the answer is"/"answer is[:]" remnant; drop a leading A-J label
// glyph written as "X." or "X)"; unwrap one layer of ()/""/'' (re-dropping a
// terminator the unwrap exposed). Already-clean strings pass through intact.
inline std::string clean_extracted(std::string_view raw) {
    std::string_view s = detail::trim(raw);

    auto strip_terminator = [&] {
        if (!s.empty() && detail::is_terminator(s.back())) {
            s.remove_suffix(1);
            s = detail::trim(s);
        }
    };
    strip_terminator();

    // "the answer is", "answer is", optionally followed by ':', then a break.
    {
        std::string_view rest = s;
        std::size_t used = detail::match_prefix_ci(rest, "the answer is");
        if (used == 0) used = detail::match_prefix_ci(rest, "answer is");
        if (used > 0) {
            rest.remove_prefix(used);
            if (!rest.empty() && rest.front() == ':') rest.remove_prefix(1);
            if (rest.empty() || detail::is_ws(rest.front()) || rest.front() == '(') {
                s = detail::trim(rest);
            }
        }
    }

    // A leading enumerator like "B. " or "C) " left over from labeled output.
    if (s.size() >= 2 && s[0] >= 'A' && s[0] <= 'J' && (s[1] == '.' || s[1] == ')') &&
        (s.size() == 2 || detail::is_ws(s[2]))) {
        s.remove_prefix(2);
        s = detail::trim(s);
    }

    if (s.size() >= 2) {
        const char a = s.front(), b = s.back();
        const bool wrapped = (a == '(' && b == ')') || (a == '"' && b == '"') || (a == '\'' && b == '\'');
        if (wrapped) {
            s.remove_prefix(1);
            s.remove_suffix(1);
            s = detail::trim(s);
            strip_terminator();
        }
    }
    return std::string(s);
}

namespace detail {

inline std::optional<ExtractedAnswer> cleaned_capture(std::string_view raw, std::size_t begin,
                                                      std::size_t end, int rule_id) {
    std::string cleaned = clean_extracted(raw.substr(begin, end - begin));
    if (cleaned.empty()) return std::nullopt;
    ExtractedAnswer ans;
    ans.text = std::move(cleaned);
    ans.rule_id = rule_id;
    ans.span_begin = begin;
    ans.span_end = end;
    return ans;
}

// Stage 1: rest of the line after the last "answer is " that has one. An
// occurrence at the very end of its line cannot match, so earlier occurrences
// are tried; once an occurrence matches, the stage is decided there — a
// capture that cleans to nothing yields a stage with no answer (the stage is
// defined by its last match, not its last useful match).
inline std::optional<ExtractedAnswer> answer_is_tail(std::string_view raw, const std::string& lower) {
    const std::vector<std::size_t> hits = find_all(lower, "answer is ");
    for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
        const std::size_t begin = *it + std::string_view("answer is ").size();
        const std::size_t end = line_end(raw, begin);
        if (begin >= end) continue;
        return cleaned_capture(raw, begin, end, 1);
    }
    return std::nullopt;
}

// Stage 2: tail after the last "answer:", leading whitespace skipped (the
// skip may cross line breaks). A tail that is pure whitespace still counts as
// this stage's match when it contains anything but newlines — it just cleans
// to nothing and the stage yields no answer; a tail of only newlines (or
// nothing) lets earlier occurrences be tried.
inline std::optional<ExtractedAnswer> answer_colon_tail(std::string_view raw, const std::string& lower) {
    const std::vector<std::size_t> hits = find_all(lower, "answer:");
    for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
        std::size_t begin = *it + std::string_view("answer:").size();
        bool saw_non_newline_ws = false;
        while (begin < raw.size() && is_ws(raw[begin])) {
            saw_non_newline_ws = saw_non_newline_ws || raw[begin] != '\n';
            ++begin;
        }
        if (begin < raw.size()) return cleaned_capture(raw, begin, line_end(raw, begin), 2);
        if (saw_non_newline_ws) return std::nullopt; // whitespace-only capture cleans away
    }
    return std::nullopt;
}

} // namespace detail

// Matched-mode cascade; `options` are the candidate texts for stage 3.
inline ExtractedAnswer extract_matched(std::string_view raw, const std::vector<std::string>& options) {
    const std::string lower = detail::ascii_lower(raw);

    if (auto ans = detail::answer_is_tail(raw, lower)) return *ans;
    if (auto ans = detail::answer_colon_tail(raw, lower)) return *ans;

    // Stage 3: the option mentioned latest wins; ties go to the lowest index.
    {
        std::size_t best_pos = std::string_view::npos;
        std::size_t best_len = 0;
        int best_index = -1;
        for (std::size_t k = 0; k < options.size(); ++k) {
            const std::string needle = detail::ascii_lower(clean_extracted(options[k]));
            if (needle.empty()) continue;
            const std::size_t pos = lower.rfind(needle);
            if (pos == std::string::npos) continue;
            if (best_index < 0 || pos > best_pos) {
                best_pos = pos;
                best_len = needle.size();
                best_index = static_cast<int>(k);
            }
        }
        if (best_index >= 0) {
            ExtractedAnswer ans;
            ans.text = options[static_cast<std::size_t>(best_index)];
            ans.rule_id = 3;
            ans.span_begin = best_pos;
            ans.span_end = best_pos + best_len;
            return ans;
        }
    }

    // Stage 4: last sentence — everything after the final terminator, keeping
    // any trailing terminator run. Works for terminator-free output too.
    {
        std::size_t t_end = raw.size();
        while (t_end > 0 && detail::is_terminator(raw[t_end - 1])) --t_end;
        std::size_t t_begin = t_end;
        while (t_begin > 0 && !detail::is_terminator(raw[t_begin - 1])) --t_begin;
        if (t_begin < t_end) {
            std::string_view sentence = detail::trim(raw.substr(t_begin, raw.size() - t_begin));
            if (!sentence.empty()) {
                ExtractedAnswer ans;
                ans.text = std::string(sentence);
                ans.rule_id = 4;
                ans.span_begin = t_begin;
                ans.span_end = raw.size();
                return ans;
            }
        }
    }

    return {};
}

namespace detail {

// Longest-first glyph match at a fixed position (so a "10" glyph beats "1").
inline int glyph_at(std::string_view s, std::size_t pos, const std::vector<std::string>& glyphs) {
    int best = -1;
    std::size_t best_len = 0;
    for (std::size_t g = 0; g < glyphs.size(); ++g) {
        const std::string& glyph = glyphs[g];
        if (glyph.empty() || glyph.size() < best_len) continue;
        if (s.compare(pos, glyph.size(), glyph) == 0 && glyph.size() > best_len) {
            best = static_cast<int>(g);
            best_len = glyph.size();
        }
    }
    return best;
}

} // namespace detail

// Standard-mode cascade over the first n_options glyphs of a distinct scheme.
// Stages: "answer is (X"-style, "answer: X"-style, then the last glyph that
// stands alone (no word character on either side — the \b reading, extended
// so non-word glyphs such as emoji still work).
inline ExtractedAnswer extract_letter(std::string_view raw, const LabelScheme& scheme, int n_options) {
    scheme.validate();
    scheme.require_coverage(n_options);
    if (scheme.kind != SchemeKind::distinct)
        throw ConfigError("label extraction needs a distinct scheme; got \"" + scheme.name + "\"");
    const std::vector<std::string> glyphs(scheme.glyphs.begin(),
                                          scheme.glyphs.begin() + n_options);
    const std::string lower = detail::ascii_lower(raw);

    auto make = [&](int rule, int glyph_index, std::size_t at) {
        ExtractedAnswer ans;
        ans.text = glyphs[static_cast<std::size_t>(glyph_index)];
        ans.rule_id = rule;
        ans.span_begin = at;
        ans.span_end = at + ans.text.size();
        return ans;
    };

    // Stage 1: "... answer is (B" — optional open paren, then a glyph.
    {
        const std::vector<std::size_t> hits = detail::find_all(lower, "answer is ");
        for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
            std::size_t pos = *it + std::string_view("answer is ").size();
            if (pos < raw.size() && raw[pos] == '(') ++pos;
            const int g = detail::glyph_at(raw, pos, glyphs);
            if (g >= 0) return make(1, g, pos);
        }
    }

    // Stage 2: "Answer: B" — whitespace may cross lines, no paren allowance.
    {
        const std::vector<std::size_t> hits = detail::find_all(lower, "answer:");
        for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
            std::size_t pos = *it + std::string_view("answer:").size();
            while (pos < raw.size() && detail::is_ws(raw[pos])) ++pos;
            const int g = detail::glyph_at(raw, pos, glyphs);
            if (g >= 0) return make(2, g, pos);
        }
    }

    // Stage 3: last standalone glyph anywhere.
    {
        for (std::size_t pos = raw.size(); pos-- > 0;) {
            const int g = detail::glyph_at(raw, pos, glyphs);
            if (g < 0) continue;
            const std::size_t len = glyphs[static_cast<std::size_t>(g)].size();
            const bool left_ok = pos == 0 || !detail::is_word_char(raw[pos - 1]);
            const bool right_ok = pos + len >= raw.size() || !detail::is_word_char(raw[pos + len]);
            if (left_ok && right_ok) return make(3, g, pos);
        }
    }

    return {};
}

// Frequency table over prediction provenance: percentage of outputs resolved
// by each stage, plus the share that fell through to the random fallback.
// Keys "1".."4" and "failed"; values sum to 100 (empty input -> empty table).
inline std::map<std::string, double> extraction_stats(const std::vector<int>& rule_ids) {
    std::map<std::string, double> table;
    if (rule_ids.empty()) return table;
    std::map<int, int> counts;
    for (int r : rule_ids) ++counts[r];
    const double total = static_cast<double>(rule_ids.size());
    for (int r = 1; r <= 4; ++r)
        table[std::to_string(r)] = 100.0 * static_cast<double>(counts[r]) / total;
    table["failed"] = 100.0 * static_cast<double>(counts[0]) / total;
    return table;
}

} // namespace permeval
