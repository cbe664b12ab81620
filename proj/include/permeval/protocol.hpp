#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "permeval/dataset.hpp"
#include "permeval/errors.hpp"
#include "permeval/rng.hpp"

// Turns an MCQInstance plus a protocol configuration into a concrete prompt,
// and enumerates the answer-moving attack sweep. Two prediction modes exist:
//   standard — the model is told to answer with an option label, so the label
//              scheme must make labels distinguishable (distinct glyphs);
//   matched  — the model is told to answer with the full option text; labels
//              may be uniform (e.g. a dash on every line).
// The supported mode x scheme combinations are standard+distinct,
// matched+distinct and matched+homogeneous; standard+homogeneous is rejected
// because no predictable label exists for the model to name.

namespace permeval {

enum class SchemeKind { homogeneous, distinct };
enum class PredictionMode { standard, matched };

inline const char* to_string(PredictionMode m) {
    return m == PredictionMode::standard ? "standard" : "matched";
}
inline const char* to_string(SchemeKind k) {
    return k == SchemeKind::homogeneous ? "homogeneous" : "distinct";
}

struct LabelScheme {
    std::string name;                // for configs/manifests, e.g. "letters"
    SchemeKind kind = SchemeKind::distinct;
    std::vector<std::string> glyphs; // homogeneous: single glyph, repeated

    void validate() const {
        if (glyphs.empty()) throw ConfigError("label scheme \"" + name + "\": no glyphs");
        for (const auto& g : glyphs)
            if (g.empty()) throw ConfigError("label scheme \"" + name + "\": empty glyph");
        if (kind == SchemeKind::distinct) {
            std::set<std::string> uniq(glyphs.begin(), glyphs.end());
            if (uniq.size() != glyphs.size())
                throw ConfigError("label scheme \"" + name + "\": distinct scheme has repeated glyphs");
        }
    }

    // Glyph shown in front of option i; homogeneous schemes repeat glyph 0.
    const std::string& glyph(int i) const {
        if (kind == SchemeKind::homogeneous) return glyphs.front();
        return glyphs.at(static_cast<std::size_t>(i));
    }

    // Distinct schemes must cover every option line.
    void require_coverage(int n_options) const {
        if (kind == SchemeKind::distinct && static_cast<int>(glyphs.size()) < n_options)
            throw ConfigError("label scheme \"" + name + "\" has " + std::to_string(glyphs.size()) +
                              " glyphs but " + std::to_string(n_options) + " options need labels");
    }

    static LabelScheme letters() {
        return {"letters", SchemeKind::distinct,
                {"A", "B", "C", "D", "E", "F", "G", "H", "I", "J"}};
    }
    static LabelScheme digits() {
        return {"digits", SchemeKind::distinct,
                {"1", "2", "3", "4", "5", "6", "7", "8", "9", "10"}};
    }
    static LabelScheme dash() { return {"dash", SchemeKind::homogeneous, {"-"}}; }
    static LabelScheme homogeneous_of(std::string glyph, std::string name) {
        return {std::move(name), SchemeKind::homogeneous, {std::move(glyph)}};
    }
    static LabelScheme distinct_of(std::vector<std::string> glyphs, std::string name) {
        return {std::move(name), SchemeKind::distinct, std::move(glyphs)};
    }
};

// Prompt text is data, not code: a template is a header section and a
// per-question block separated by a line containing only "===". Placeholders:
//   {OPTION_INSTRUCTION} (header)  — the mode's answer-format instruction
//   {QUESTION}, {OPTIONS} (block)  — question text and rendered option lines
struct PromptTemplate {
    std::string header;
    std::string block;
};

inline constexpr const char* kStandardOptionInstruction =
    "Think step by step and then finish your answer with \"the answer is (X)\" "
    "where X is the correct option's label.";
inline constexpr const char* kMatchedOptionInstruction =
    "Think step by step and then finish your answer with \"the answer is (OPTION)\" "
    "where OPTION is the full text of the correct option. Do not mention any option "
    "labels; answer only with the complete option text.";
inline constexpr const char* kStepByStepCue = "Let's think step by step.";

inline PromptTemplate default_prompt_template() {
    PromptTemplate t;
    t.header = "The following are multiple choice questions (with answers). {OPTION_INSTRUCTION}";
    t.block = "Question: {QUESTION}\nOptions:\n{OPTIONS}\nAnswer:";
    return t;
}

inline PromptTemplate parse_prompt_template(const std::string& text, const std::string& where) {
    std::vector<std::string> sections{""};
    std::istringstream in(text);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line == "===") {
            sections.emplace_back();
            first = true;
            continue;
        }
        if (!first) sections.back() += '\n';
        sections.back() += line;
        first = false;
    }
    if (sections.size() != 2)
        throw ConfigError(where + ": template must contain exactly one \"===\" separator "
                          "(header above, question block below)");
    if (sections[1].find("{QUESTION}") == std::string::npos ||
        sections[1].find("{OPTIONS}") == std::string::npos)
        throw ConfigError(where + ": question block must contain {QUESTION} and {OPTIONS}");
    return {sections[0], sections[1]};
}

inline PromptTemplate load_prompt_template(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("template not readable: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_prompt_template(buf.str(), "template " + path.string());
}

struct ProtocolConfig {
    PredictionMode mode = PredictionMode::matched;
    LabelScheme labels = LabelScheme::dash();
    int shots = 5;
    bool cot = true;
    bool permute_fewshot = true;
    PromptTemplate prompt = default_prompt_template();

    void validate(int n_options) const {
        labels.validate();
        labels.require_coverage(n_options);
        if (mode == PredictionMode::standard && labels.kind == SchemeKind::homogeneous)
            throw ConfigError("standard (label) prediction needs a distinct label scheme; "
                              "scheme \"" + labels.name + "\" repeats one glyph");
        if (shots < 0) throw ConfigError("shots must be >= 0");
    }
};

struct PermutationSpec {
    std::string id;                     // "original" or "attack-<p>"
    std::optional<int> target_position; // absent for the original ordering
    bool applies_to_fewshot = false;

    bool is_original() const { return !target_position.has_value(); }
};

struct FewShotSet {
    std::vector<MCQInstance> exemplars;
};

struct PromptBundle {
    std::string text;
    std::vector<std::string> option_order; // options as rendered, in order
    int golden_index_rendered = -1;
    LabelScheme label_scheme;
    // Context carried for downstream consumers (simulated models, caching):
    std::string question_id;
    std::string permutation_id;
    PredictionMode mode = PredictionMode::matched;
    std::vector<int> fewshot_golden_positions; // rendered golden slot per exemplar
};

// One spec per golden-answer destination, optionally preceded by the
// untouched original ordering. Attack p re-presents every question with the
// golden answer at position p; applies_to_fewshot decides whether exemplars
// are re-presented the same way (the original ordering never touches them).
inline std::vector<PermutationSpec> build_attack_plan(int n_options, bool include_original,
                                                      bool permute_fewshot) {
    if (n_options < 2) throw ConfigError("attack plan needs at least 2 options");
    std::vector<PermutationSpec> plan;
    if (include_original) plan.push_back({"original", std::nullopt, false});
    for (int p = 0; p < n_options; ++p)
        plan.push_back({"attack-" + std::to_string(p), p, permute_fewshot});
    return plan;
}

// Move semantics: take the golden option out, reinsert it at the target slot,
// keep distractors in their original relative order.
inline MCQInstance apply_permutation(const MCQInstance& inst, const PermutationSpec& spec) {
    if (spec.is_original()) return inst;
    const int n = inst.n_options();
    const int target = *spec.target_position;
    if (target < 0 || target >= n)
        throw ConfigError("permutation " + spec.id + ": target position " +
                          std::to_string(target) + " out of range for " +
                          std::to_string(n) + " options");
    MCQInstance out = inst;
    out.options.clear();
    for (int i = 0; i < n; ++i)
        if (i != inst.golden_index) out.options.push_back(inst.options[static_cast<std::size_t>(i)]);
    out.options.insert(out.options.begin() + target, inst.options[static_cast<std::size_t>(inst.golden_index)]);
    out.golden_index = target;
    return out;
}

// One line per option. Distinct glyphs read as enumerators ("A. cat"),
// homogeneous glyphs as list bullets ("- cat").
inline std::string render_options(const std::vector<std::string>& options, const LabelScheme& scheme) {
    scheme.validate();
    scheme.require_coverage(static_cast<int>(options.size()));
    std::string out;
    for (std::size_t i = 0; i < options.size(); ++i) {
        if (i > 0) out += '\n';
        out += scheme.glyph(static_cast<int>(i));
        out += scheme.kind == SchemeKind::distinct ? ". " : " ";
        out += options[i];
    }
    return out;
}

namespace detail {

inline void replace_all(std::string& s, std::string_view key, std::string_view value) {
    std::size_t pos = 0;
    while ((pos = s.find(key, pos)) != std::string::npos) {
        s.replace(pos, key.size(), value);
        pos += value.size();
    }
}

inline std::string render_block(const PromptTemplate& tpl, const MCQInstance& inst,
                                const LabelScheme& scheme) {
    std::string block = tpl.block;
    replace_all(block, "{QUESTION}", inst.question);
    replace_all(block, "{OPTIONS}", render_options(inst.options, scheme));
    return block;
}

} // namespace detail

// Worked answer shown under each exemplar; mirrors the format the final
// instruction asks for, so exemplars model the expected output shape.
inline std::string worked_answer_line(const MCQInstance& rendered, const ProtocolConfig& config) {
    const std::string& payload = config.mode == PredictionMode::standard
                                     ? config.labels.glyph(rendered.golden_index)
                                     : rendered.golden_text();
    return "The answer is (" + payload + ").";
}

inline PromptBundle build_prompt(const MCQInstance& instance, const FewShotSet& fewshot,
                                 const ProtocolConfig& config, const PermutationSpec& spec) {
    config.validate(instance.n_options());
    for (const auto& ex : fewshot.exemplars)
        if (ex.n_options() != instance.n_options())
            throw ConfigError("exemplar " + ex.id + " has " + std::to_string(ex.n_options()) +
                              " options; test question " + instance.id + " has " +
                              std::to_string(instance.n_options()));

    PromptBundle bundle;
    bundle.question_id = instance.id;
    bundle.permutation_id = spec.id;
    bundle.mode = config.mode;
    bundle.label_scheme = config.labels;

    std::string header = config.prompt.header;
    detail::replace_all(header, "{OPTION_INSTRUCTION}",
                        config.mode == PredictionMode::standard ? kStandardOptionInstruction
                                                                : kMatchedOptionInstruction);
    std::string text = header;

    for (const auto& ex : fewshot.exemplars) {
        MCQInstance shown = spec.applies_to_fewshot ? apply_permutation(ex, spec) : ex;
        bundle.fewshot_golden_positions.push_back(shown.golden_index);
        text += "\n\n";
        text += detail::render_block(config.prompt, shown, config.labels);
        text += ' ';
        text += worked_answer_line(shown, config);
    }

    MCQInstance shown = apply_permutation(instance, spec);
    bundle.option_order = shown.options;
    bundle.golden_index_rendered = shown.golden_index;
    text += "\n\n";
    text += detail::render_block(config.prompt, shown, config.labels);
    if (config.cot) {
        text += ' ';
        text += kStepByStepCue;
    }
    bundle.text = std::move(text);
    return bundle;
}

// Stable identity of "how prompts were built": protocol settings plus the
// full template and scheme contents. Used as part of transcript cache keys so
// a changed template or scheme never reuses stale completions.
inline std::string protocol_fingerprint(const ProtocolConfig& config) {
    std::uint64_t h = fnv1a(to_string(config.mode));
    h = derive_seed(h, config.labels.name, to_string(config.labels.kind));
    for (const auto& g : config.labels.glyphs) h = derive_seed(h, g);
    h = derive_seed(h, static_cast<std::uint64_t>(config.shots),
                    static_cast<std::uint64_t>(config.cot ? 1 : 0),
                    static_cast<std::uint64_t>(config.permute_fewshot ? 1 : 0),
                    config.prompt.header, config.prompt.block);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace permeval
