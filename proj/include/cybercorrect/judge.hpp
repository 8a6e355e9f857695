#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "cybercorrect/core.hpp"

namespace cybercorrect {

// History of accepted versions, enabling rollback and best-version selection.
// Entry 0 is always the initial output y_0.
struct VersionBuffer {
    struct Entry {
        ReasoningChain version;
        double severity = 0.0;
        int iteration = 0;
    };

    std::vector<Entry> entries;

    void push(ReasoningChain version, double severity, int iteration) {
        if (!entries.empty() && iteration <= entries.back().iteration)
            throw Error(Errc::out_of_range, "buffer iterations must be strictly increasing");
        entries.push_back({std::move(version), severity, iteration});
    }

    bool empty() const { return entries.empty(); }
    size_t size() const { return entries.size(); }
};

enum class JudgeOutcome { converged, oscillation, overshoot_rollback, continue_loop, max_iterations };

inline const char* to_string(JudgeOutcome o) {
    switch (o) {
        case JudgeOutcome::converged: return "converged";
        case JudgeOutcome::oscillation: return "oscillation";
        case JudgeOutcome::overshoot_rollback: return "rollback";
        case JudgeOutcome::continue_loop: return "continue";
        case JudgeOutcome::max_iterations: return "max_iter";
    }
    return "continue";
}

struct JudgeDecision {
    JudgeOutcome outcome = JudgeOutcome::continue_loop;
    std::optional<int> best_index;  // buffer index selected, for oscillation

    bool operator==(const JudgeDecision&) const = default;
};

// Error improvement stagnated: |s_t - s_{t-1}| < epsilon (strict).
inline bool check_convergence(double s_t, double s_prev, double epsilon) {
    return std::abs(s_t - s_prev) < epsilon;
}

// Answer alternation: a_t = a_{t-2} and a_t != a_{t-1}, on normalized answers.
inline bool check_oscillation(const std::string& a_t, const std::string& a_prev,
                              const std::string& a_prev2) {
    return a_t == a_prev2 && a_t != a_prev;
}

// History variant over the full answer sequence (most recent last).
inline bool check_oscillation(const std::vector<std::string>& answers) {
    if (answers.size() < 3)
        throw Error(Errc::insufficient_history,
                    "oscillation check requires three versions");
    const size_t n = answers.size();
    return check_oscillation(answers[n - 1], answers[n - 2], answers[n - 3]);
}

// Severity increased past the margin: s_t > s_{t-1} + delta (strict).
inline bool check_overshoot(double s_t, double s_prev, double delta) {
    return s_t > s_prev + delta;
}

// Minimum-severity version; ties break toward the earliest iteration.
inline std::pair<const VersionBuffer::Entry*, size_t> select_best(const VersionBuffer& buffer) {
    if (buffer.empty()) throw Error(Errc::empty_buffer, "version buffer is empty");
    size_t best = 0;
    for (size_t i = 1; i < buffer.entries.size(); ++i) {
        if (buffer.entries[i].severity < buffer.entries[best].severity) best = i;
    }
    return {&buffer.entries[best], best};
}

// Loop state as seen by the judge at iteration t >= 1, after detection ran on
// the new output. Severities s_prev/answers refer to the accepted sequence.
struct JudgeState {
    int iteration = 1;              // t
    double severity = 0.0;          // raw s_t of the new output
    double prev_severity = 0.0;     // accepted s_{t-1}
    std::string answer;             // ans(y_t), normalized
    std::string prev_answer;        // ans(y_{t-1})
    std::optional<std::string> prev_prev_answer;  // ans(y_{t-2}), absent when t < 2
};

// Decision order is fixed: convergence, then oscillation, then overshoot,
// then continue; continue at t == t_max becomes max_iterations.
inline JudgeDecision judge(const JudgeState& state, const VersionBuffer& buffer,
                           const Hyperparameters& params) {
    if (check_convergence(state.severity, state.prev_severity, params.epsilon))
        return {JudgeOutcome::converged, std::nullopt};
    if (state.iteration >= 2 && state.prev_prev_answer &&
        check_oscillation(state.answer, state.prev_answer, *state.prev_prev_answer)) {
        auto [entry, index] = select_best(buffer);
        (void)entry;
        return {JudgeOutcome::oscillation, static_cast<int>(index)};
    }
    if (check_overshoot(state.severity, state.prev_severity, params.delta))
        return {JudgeOutcome::overshoot_rollback, std::nullopt};
    if (state.iteration >= params.t_max)
        return {JudgeOutcome::max_iterations, std::nullopt};
    return {JudgeOutcome::continue_loop, std::nullopt};
}

}  // namespace cybercorrect
