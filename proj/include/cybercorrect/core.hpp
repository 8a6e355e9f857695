#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cybercorrect {

enum class Errc {
    empty_samples,
    out_of_range,
    no_actionable_error,
    insufficient_history,
    empty_buffer,
    extraction_failed,
    plant_failure,
    config_invalid,
    schema_error,
    duplicate_id,
    missing_trajectory,
    task_mismatch,
    invalid_task,
    parse_failure,
    io_error,
};

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Errc code() const { return code_; }

private:
    Errc code_;
};

enum class ErrorType { arithmetic, logic_gap, premise, none };

inline const char* to_string(ErrorType t) {
    switch (t) {
        case ErrorType::arithmetic: return "arithmetic";
        case ErrorType::logic_gap: return "logic_gap";
        case ErrorType::premise: return "premise";
        case ErrorType::none: return "none";
    }
    return "none";
}

inline ErrorType error_type_from_string(std::string_view s) {
    if (s == "arithmetic") return ErrorType::arithmetic;
    if (s == "logic_gap") return ErrorType::logic_gap;
    if (s == "premise") return ErrorType::premise;
    if (s == "none") return ErrorType::none;
    throw Error(Errc::schema_error, "unknown error type: " + std::string(s));
}

// One reasoning step. Indices are 1-based and contiguous within a chain.
struct Step {
    int index = 0;
    std::string text;

    bool operator==(const Step&) const = default;
};

// ---------------------------------------------------------------------------
// Answer normalization.
//
// Answer equality everywhere in the system is string equality after
// normalize_answer. The contract: trim, lowercase, strip a leading answer
// phrase ("the answer is", "final answer:", ...), strip trailing punctuation,
// and canonicalize numeric forms ("32.0 %" -> "32%", "48.0" -> "48",
// "1,000" -> "1000").
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

inline std::string to_lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

// Longest-match-first; matching is done on the lowercased string.
inline const std::vector<std::string>& answer_phrases() {
    static const std::vector<std::string> phrases = {
        "therefore, the answer is", "therefore the answer is",
        "so, the answer is",        "so the answer is",
        "the final answer is",      "final answer is",
        "final answer:",            "the answer is",
        "answer is",                "answer:",
        "the result is",            "result is",
        "result:",                  "the total is",
        "the total discount is",    "it is",
        "equals",                   "therefore,",
        "therefore",                "thus,",
        "thus",                     "so,",
    };
    return phrases;
}

// Canonicalize strings of the form [$]<digits>[.<frac>][%], tolerating
// thousands separators and space before the percent sign. Returns empty if
// the whole string is not a single numeric value.
inline std::string canonicalize_numeric(const std::string& s) {
    size_t i = 0;
    std::string currency;
    if (i < s.size() && (s[i] == '$')) currency = s.substr(i++, 1);
    std::string sign;
    if (i < s.size() && (s[i] == '-' || s[i] == '+')) {
        if (s[i] == '-') sign = "-";
        ++i;
    }
    std::string intpart, frac;
    bool saw_digit = false;
    while (i < s.size() && (std::isdigit(static_cast<unsigned char>(s[i])) || s[i] == ',')) {
        if (s[i] != ',') {
            intpart += s[i];
            saw_digit = true;
        }
        ++i;
    }
    if (!saw_digit) return {};
    if (i < s.size() && s[i] == '.') {
        ++i;
        while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) frac += s[i++];
        if (frac.empty()) return {};
    }
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::string pct;
    if (i < s.size() && s[i] == '%') {
        pct = "%";
        ++i;
    }
    if (i != s.size()) return {};
    while (!frac.empty() && frac.back() == '0') frac.pop_back();
    // Strip leading zeros of the integer part ("007" -> "7") but keep one.
    size_t z = 0;
    while (z + 1 < intpart.size() && intpart[z] == '0') ++z;
    intpart = intpart.substr(z);
    std::string out = currency + sign + intpart;
    if (!frac.empty()) out += "." + frac;
    out += pct;
    return out;
}

}  // namespace detail

inline std::string normalize_answer(std::string_view raw) {
    std::string s = detail::to_lower(detail::trim(raw));
    bool changed = true;
    while (changed && !s.empty()) {
        changed = false;
        s = detail::trim(s);
        // Trailing punctuation.
        while (!s.empty()) {
            char c = s.back();
            if (c == '.' || c == ',' || c == ';' || c == ':' || c == '!' || c == '?') {
                // A dot between digits is a decimal point, not punctuation.
                s.pop_back();
                changed = true;
            } else {
                break;
            }
        }
        s = detail::trim(s);
        // Leading answer phrase (only if something is left after it).
        for (const auto& phrase : detail::answer_phrases()) {
            if (s.size() > phrase.size() && s.compare(0, phrase.size(), phrase) == 0) {
                std::string rest = detail::trim(s.substr(phrase.size()));
                while (!rest.empty() && (rest.front() == ':' || rest.front() == ',')) {
                    rest.erase(rest.begin());
                    rest = detail::trim(rest);
                }
                if (!rest.empty()) {
                    s = rest;
                    changed = true;
                    break;
                }
            }
        }
    }
    std::string canon = detail::canonicalize_numeric(s);
    return canon.empty() ? s : canon;
}

// ---------------------------------------------------------------------------
// ReasoningChain: one answer attempt by the plant.
// ---------------------------------------------------------------------------

struct ReasoningChain {
    std::string task_id;
    std::vector<Step> steps;
    std::string final_answer;  // normalized

    bool operator==(const ReasoningChain&) const = default;
};

namespace detail {

// Last value token ([$]digits[.digits][%]) in a piece of text, if any.
inline std::optional<std::string> last_value_token(const std::string& text) {
    std::optional<std::string> best;
    for (size_t i = 0; i < text.size(); ++i) {
        const bool starts_value =
            std::isdigit(static_cast<unsigned char>(text[i])) ||
            (text[i] == '$' && i + 1 < text.size() &&
             std::isdigit(static_cast<unsigned char>(text[i + 1])));
        if (!starts_value) continue;
        if (i > 0 && (std::isalnum(static_cast<unsigned char>(text[i - 1])) || text[i - 1] == '.'))
            continue;  // inside a word or a longer number
        size_t j = i;
        if (text[j] == '$') ++j;
        while (j < text.size() && (std::isdigit(static_cast<unsigned char>(text[j])) ||
                                   text[j] == ',' ))
            ++j;
        if (j < text.size() && text[j] == '.' && j + 1 < text.size() &&
            std::isdigit(static_cast<unsigned char>(text[j + 1]))) {
            ++j;
            while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
        }
        size_t k = j;
        while (k < text.size() && std::isspace(static_cast<unsigned char>(text[k]))) ++k;
        if (k < text.size() && text[k] == '%') j = k + 1;
        std::string canon = canonicalize_numeric(trim(text.substr(i, j - i)));
        if (!canon.empty()) best = canon;
        i = j;
    }
    return best;
}

}  // namespace detail

// Pulls the trailing value expression out of free-form step text. Tries, in
// order: an answer phrase, the right-hand side of the last '=', the last
// numeric value token.
inline std::string extract_answer_from_text(const std::string& text) {
    const std::string lower = detail::to_lower(text);
    for (const auto& phrase : {std::string("answer is"), std::string("answer:")}) {
        size_t pos = lower.rfind(phrase);
        if (pos != std::string::npos) {
            std::string rest = normalize_answer(text.substr(pos + phrase.size()));
            if (!rest.empty()) return rest;
        }
    }
    size_t eq = text.rfind('=');
    if (eq != std::string::npos) {
        std::string rhs = normalize_answer(text.substr(eq + 1));
        if (!detail::canonicalize_numeric(rhs).empty()) return rhs;
    }
    if (auto tok = detail::last_value_token(text)) return *tok;
    throw Error(Errc::extraction_failed, "no answer pattern in: " + text);
}

// Explicit answer field wins; otherwise parse the last step.
inline std::string extract_answer(const ReasoningChain& chain) {
    if (chain.steps.empty())
        throw Error(Errc::extraction_failed, "chain has no steps");
    if (!chain.final_answer.empty()) return normalize_answer(chain.final_answer);
    return extract_answer_from_text(chain.steps.back().text);
}

// Non-throwing variant: falls back to the whole last step text, normalized.
inline std::string final_answer_of(const ReasoningChain& chain) {
    try {
        return extract_answer(chain);
    } catch (const Error&) {
        return chain.steps.empty() ? std::string{} : normalize_answer(chain.steps.back().text);
    }
}

inline ReasoningChain make_chain(std::string task_id, std::vector<Step> steps,
                                 std::string raw_answer = {}) {
    ReasoningChain c{std::move(task_id), std::move(steps), std::move(raw_answer)};
    if (c.steps.empty())
        throw Error(Errc::invalid_task, "reasoning chain must have at least one step");
    for (size_t i = 0; i < c.steps.size(); ++i) {
        if (c.steps[i].index != static_cast<int>(i) + 1)
            throw Error(Errc::schema_error, "step indices must be contiguous from 1");
    }
    c.final_answer = final_answer_of(c);
    return c;
}

// ---------------------------------------------------------------------------
// Error signal and hyperparameters.
// ---------------------------------------------------------------------------

// Per-modality components kept for audit; absent when the modality was not
// observed on this iteration.
struct SignalComponents {
    std::optional<double> sc;              // self-consistency severity
    std::optional<double> max_vc;          // max per-step verbalized-confidence severity
    std::optional<double> min_entailment;  // min v_j over consecutive step pairs

    bool operator==(const SignalComponents&) const = default;
};

struct ErrorSignal {
    ErrorType error_type = ErrorType::none;
    double severity = 0.0;                // in [0,1]
    std::optional<int> location;          // 1-based step index; present iff type != none
    SignalComponents components;

    bool operator==(const ErrorSignal&) const = default;
};

struct Weights {
    double w1 = 0.4;   // self-consistency
    double w2 = 0.35;  // verbalized confidence
    double w3 = 0.25;  // logic-chain

    bool operator==(const Weights&) const = default;
};

struct Hyperparameters {
    int K = 5;              // self-consistency samples
    double phi = 40.0;      // per-step confidence flag threshold, [0,100]
    double sigma = 0.3;     // detection threshold on fused severity
    double epsilon = 0.05;  // convergence tolerance
    double delta = 0.1;     // overshoot margin
    int t_max = 3;          // max correction iterations
    Weights weights;

    void validate() const {
        if (K < 1) throw Error(Errc::config_invalid, "K must be >= 1");
        if (phi < 0.0 || phi > 100.0)
            throw Error(Errc::config_invalid, "phi must be in [0,100]");
        if (sigma < 0.0 || sigma > 1.0)
            throw Error(Errc::config_invalid, "sigma must be in [0,1]");
        if (epsilon < 0.0) throw Error(Errc::config_invalid, "epsilon must be >= 0");
        if (delta < 0.0) throw Error(Errc::config_invalid, "delta must be >= 0");
        if (t_max < 0) throw Error(Errc::config_invalid, "t_max must be >= 0");
        if (weights.w1 < 0.0 || weights.w2 < 0.0 || weights.w3 < 0.0)
            throw Error(Errc::config_invalid, "weights must be >= 0");
        const double sum = weights.w1 + weights.w2 + weights.w3;
        if (std::abs(sum - 1.0) > 1e-9)
            throw Error(Errc::config_invalid, "weights must sum to 1");
    }

    bool operator==(const Hyperparameters&) const = default;
};

// ---------------------------------------------------------------------------
// Step content flags, derived lexically from the step text. Used by the
// detector's type rule and produced by whichever plant emitted the chain.
// ---------------------------------------------------------------------------

struct StepContentFlags {
    bool has_numeric_computation = false;
    bool is_premise_assertion = false;

    bool operator==(const StepContentFlags&) const = default;
};

inline StepContentFlags analyze_step_content(const std::string& text) {
    StepContentFlags flags;
    // Numeric computation: a "<num> <op> <num> =" pattern somewhere.
    for (size_t i = 0; i < text.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(text[i]))) continue;
        size_t j = i;
        while (j < text.size() && (std::isdigit(static_cast<unsigned char>(text[j])) ||
                                   text[j] == '.'))
            ++j;
        if (j < text.size() && text[j] == '%') ++j;
        size_t k = j;
        while (k < text.size() && std::isspace(static_cast<unsigned char>(text[k]))) ++k;
        if (k >= text.size()) break;
        const char op = text[k];
        const bool is_op = op == '+' || op == '-' || op == '*' || op == '/' ||
                           op == 'x' || op == 'X' ||
                           (static_cast<unsigned char>(op) == 0xC3) ||  // UTF-8 lead of '×'/'÷'
                           (static_cast<unsigned char>(op) == 0xC2);
        if (!is_op) {
            i = j;
            continue;
        }
        ++k;
        // Skip the UTF-8 continuation byte of a multibyte operator.
        while (k < text.size() && (static_cast<unsigned char>(text[k]) & 0xC0) == 0x80) ++k;
        while (k < text.size() && std::isspace(static_cast<unsigned char>(text[k]))) ++k;
        size_t m = k;
        while (m < text.size() && (std::isdigit(static_cast<unsigned char>(text[m])) ||
                                   text[m] == '.' || text[m] == '%'))
            ++m;
        if (m == k) {
            i = j;
            continue;
        }
        while (m < text.size() && std::isspace(static_cast<unsigned char>(text[m]))) ++m;
        if (m < text.size() && text[m] == '=') {
            flags.has_numeric_computation = true;
            break;
        }
        i = j;
    }
    const std::string lower = detail::to_lower(detail::trim(text));
    for (const char* prefix : {"assume", "assuming", "given", "since", "suppose"}) {
        if (lower.rfind(prefix, 0) == 0) {
            flags.is_premise_assertion = true;
            break;
        }
    }
    return flags;
}

}  // namespace cybercorrect
