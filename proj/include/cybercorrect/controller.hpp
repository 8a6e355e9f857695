#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "cybercorrect/core.hpp"

namespace cybercorrect {

enum class ControlMode { targeted_edit, regenerate_from };

inline const char* to_string(ControlMode m) {
    return m == ControlMode::targeted_edit ? "targeted_edit" : "regenerate_from";
}

inline ControlMode control_mode_from_string(std::string_view s) {
    if (s == "targeted_edit") return ControlMode::targeted_edit;
    if (s == "regenerate_from") return ControlMode::regenerate_from;
    throw Error(Errc::schema_error, "unknown control mode: " + std::string(s));
}

// The correction instruction u_t handed to the plant. Baseline strategies
// produce inputs with error_type none and no location.
struct ControlInput {
    ControlMode mode = ControlMode::targeted_edit;
    ErrorType error_type = ErrorType::none;
    std::optional<int> location;
    std::string instruction_text;

    bool operator==(const ControlInput&) const = default;
};

enum class BaselineStrategy { naive_retry, self_refine_generic };

// Correction templates, keyed by name. Defaults are embedded; a plain-text
// file can override any subset for live-LLM tuning. File format: lines of
// "key: text", '#' comments and blank lines ignored. Placeholders {location}
// and {next_location} are substituted at render time.
class TemplateSet {
public:
    static TemplateSet defaults() {
        TemplateSet t;
        t.templates_ = {
            {"arithmetic",
             "Recompute the calculation in step {location}. Show each arithmetic "
             "operation explicitly."},
            {"logic_gap",
             "The reasoning jumps from step {location} to step {next_location} without "
             "justification. Insert the missing intermediate reasoning."},
            {"premise",
             "The assumption in step {location} may be incorrect. Re-examine the factual "
             "basis and provide an alternative if needed."},
            {"targeted_edit_directive",
             "Make minimal targeted edits and keep correct content unchanged."},
            {"regenerate_directive",
             "Regenerate the solution from step {location} onward."},
            {"naive_retry", "Please reconsider your answer."},
            {"self_refine_feedback",
             "Provide feedback on your previous answer: identify any errors or weaknesses."},
            {"self_refine_refine", "Refine your answer based on the feedback."},
        };
        return t;
    }

    static TemplateSet load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error(Errc::io_error, "cannot open template file: " + path);
        TemplateSet t = defaults();
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string trimmed = detail::trim(line);
            if (trimmed.empty() || trimmed[0] == '#') continue;
            const size_t colon = trimmed.find(':');
            if (colon == std::string::npos)
                throw Error(Errc::schema_error, path + ":" + std::to_string(lineno) +
                                                    ": expected 'key: text'");
            const std::string key = detail::trim(trimmed.substr(0, colon));
            const std::string text = detail::trim(trimmed.substr(colon + 1));
            if (t.templates_.find(key) == t.templates_.end())
                throw Error(Errc::schema_error, path + ":" + std::to_string(lineno) +
                                                    ": unknown template key '" + key + "'");
            t.templates_[key] = text;
        }
        return t;
    }

    std::string render(const std::string& key, int location) const {
        auto it = templates_.find(key);
        if (it == templates_.end())
            throw Error(Errc::config_invalid, "missing template: " + key);
        std::string out = it->second;
        substitute(out, "{location}", std::to_string(location));
        substitute(out, "{next_location}", std::to_string(location + 1));
        return out;
    }

    std::string raw(const std::string& key) const {
        auto it = templates_.find(key);
        if (it == templates_.end())
            throw Error(Errc::config_invalid, "missing template: " + key);
        return it->second;
    }

    bool operator==(const TemplateSet&) const = default;

private:
    static void substitute(std::string& text, const std::string& placeholder,
                           const std::string& value) {
        size_t pos = 0;
        while ((pos = text.find(placeholder, pos)) != std::string::npos) {
            text.replace(pos, placeholder.size(), value);
            pos += value.size();
        }
    }

    std::map<std::string, std::string> templates_;
};

// Severity above which the controller escalates from a minimal targeted edit
// to full regeneration from the erroneous step onward. Exactly 0.7 still
// requests a targeted edit.
inline constexpr double kRegenerateSeverityThreshold = 0.7;

// The control law C: maps a typed error signal to a correction instruction.
inline ControlInput control_law(const ErrorSignal& signal,
                                const TemplateSet& templates = TemplateSet::defaults()) {
    if (signal.error_type == ErrorType::none)
        throw Error(Errc::no_actionable_error,
                    "controller invoked on a signal with no actionable error");
    if (!signal.location)
        throw Error(Errc::no_actionable_error, "typed error signal carries no location");

    ControlInput input;
    input.error_type = signal.error_type;
    input.location = signal.location;
    input.mode = signal.severity > kRegenerateSeverityThreshold ? ControlMode::regenerate_from
                                                                : ControlMode::targeted_edit;
    const int loc = *signal.location;
    std::string text = templates.render(to_string(signal.error_type), loc);
    text += " ";
    text += input.mode == ControlMode::regenerate_from
                ? templates.render("regenerate_directive", loc)
                : templates.render("targeted_edit_directive", loc);
    input.instruction_text = std::move(text);
    return input;
}

inline ControlInput render_baseline(BaselineStrategy strategy,
                                    const TemplateSet& templates = TemplateSet::defaults()) {
    ControlInput input;
    input.mode = ControlMode::targeted_edit;
    input.error_type = ErrorType::none;
    if (strategy == BaselineStrategy::naive_retry) {
        input.instruction_text = templates.raw("naive_retry");
    } else {
        input.instruction_text =
            templates.raw("self_refine_feedback") + "\n" + templates.raw("self_refine_refine");
    }
    return input;
}

}  // namespace cybercorrect
