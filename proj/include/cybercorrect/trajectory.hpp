#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cybercorrect/controller.hpp"
#include "cybercorrect/core.hpp"
#include "cybercorrect/task.hpp"

namespace cybercorrect {

// Why a run stopped.
enum class Termination {
    clean,           // detector found nothing actionable (initial or mid-loop)
    converged,       // |s_t - s_{t-1}| < epsilon
    oscillation,     // answer alternation; best buffered version returned
    max_iterations,  // iteration bound reached
    stable_output,   // baseline refinement reproduced its input verbatim
    plant_failure,   // aborted; trajectory is partial
};

inline const char* to_string(Termination t) {
    switch (t) {
        case Termination::clean: return "clean";
        case Termination::converged: return "converged";
        case Termination::oscillation: return "oscillation";
        case Termination::max_iterations: return "max_iterations";
        case Termination::stable_output: return "stable_output";
        case Termination::plant_failure: return "plant_failure";
    }
    return "max_iterations";
}

inline Termination termination_from_string(std::string_view s) {
    if (s == "clean") return Termination::clean;
    if (s == "converged") return Termination::converged;
    if (s == "oscillation") return Termination::oscillation;
    if (s == "max_iterations") return Termination::max_iterations;
    if (s == "stable_output") return Termination::stable_output;
    if (s == "plant_failure") return Termination::plant_failure;
    throw Error(Errc::schema_error, "unknown termination reason: " + std::string(s));
}

// Clean-gate stops count as converged for the convergence-rate metric.
inline bool counts_as_converged(Termination t) {
    return t == Termination::converged || t == Termination::clean;
}

// Logical plant-call accounting, reported per run for cost comparisons.
struct CallCounts {
    int generate = 0;
    int samples = 0;      // self-consistency draws
    int confidence = 0;   // verbalized-confidence elicitations
    int entailment = 0;   // step-pair verification calls
    int corrections = 0;
    std::int64_t tokens = 0;  // as reported by the endpoint; 0 for simulated runs

    int total() const { return generate + samples + confidence + entailment + corrections; }

    bool operator==(const CallCounts&) const = default;
};

// One loop iteration as recorded. `version` is the raw output produced at
// this iteration; when the judge rolled back, accepted_* reflect the
// substituted previous version while raw_severity keeps the overshooting
// measurement.
struct TrajectoryEntry {
    int iteration = 0;
    ReasoningChain version;
    std::optional<double> raw_severity;
    std::optional<double> accepted_severity;
    std::string accepted_answer;
    std::optional<ErrorSignal> error_signal;   // raw signal for this iteration
    std::optional<ControlInput> control_input; // the u_t that produced this version
    std::string judge_decision;                // continue|converged|oscillation|rollback|max_iter|clean

    bool operator==(const TrajectoryEntry&) const = default;
};

struct Trajectory {
    static constexpr int kSchemaVersion = 1;

    std::string task_id;
    std::string method;
    std::string gold_answer;
    Category category = Category::MR;
    std::optional<ErrorType> task_error_type;  // annotation, when the task carried one
    std::uint64_t seed = 0;
    Hyperparameters params;
    std::vector<std::string> modalities;  // requested: subset of {"sc","vc","lc"}

    std::vector<TrajectoryEntry> entries;
    Termination termination = Termination::max_iterations;
    int final_version = 0;  // iteration index of the returned version
    std::string final_answer;
    CallCounts calls;
    std::optional<std::string> failure_message;  // set for plant_failure

    bool operator==(const Trajectory&) const = default;

    const TrajectoryEntry& initial() const {
        if (entries.empty()) throw Error(Errc::out_of_range, "empty trajectory");
        return entries.front();
    }
};

}  // namespace cybercorrect
