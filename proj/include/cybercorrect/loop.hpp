#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cybercorrect/controller.hpp"
#include "cybercorrect/core.hpp"
#include "cybercorrect/detector.hpp"
#include "cybercorrect/judge.hpp"
#include "cybercorrect/plant.hpp"
#include "cybercorrect/task.hpp"
#include "cybercorrect/trajectory.hpp"

namespace cybercorrect {

enum class Method {
    cybercorrect,
    cybercorrect_lite,
    no_correction,
    naive_retry,
    self_refine_generic,
    self_consistency,
};

inline const char* to_string(Method m) {
    switch (m) {
        case Method::cybercorrect: return "cybercorrect";
        case Method::cybercorrect_lite: return "cybercorrect_lite";
        case Method::no_correction: return "no_correction";
        case Method::naive_retry: return "naive_retry";
        case Method::self_refine_generic: return "self_refine_generic";
        case Method::self_consistency: return "self_consistency";
    }
    return "cybercorrect";
}

inline Method method_from_string(std::string_view s) {
    if (s == "cybercorrect") return Method::cybercorrect;
    if (s == "cybercorrect_lite") return Method::cybercorrect_lite;
    if (s == "no_correction") return Method::no_correction;
    if (s == "naive_retry") return Method::naive_retry;
    if (s == "self_refine_generic") return Method::self_refine_generic;
    if (s == "self_consistency") return Method::self_consistency;
    throw Error(Errc::config_invalid, "unknown method: " + std::string(s));
}

struct RunConfig {
    Method method = Method::cybercorrect;
    Hyperparameters params;
    std::uint64_t seed = 0;
    ModalitySet modalities = ModalitySet::all();
    TemplateSet templates = TemplateSet::defaults();

    // The Lite preset: self-consistency-only detection with a tighter
    // iteration budget, trading accuracy for fewer plant calls.
    RunConfig with_lite_preset() const {
        RunConfig out = *this;
        out.params.weights = {1.0, 0.0, 0.0};
        out.params.t_max = 2;
        out.modalities = ModalitySet::sc_only();
        return out;
    }

    RunConfig effective() const {
        RunConfig out = method == Method::cybercorrect_lite ? with_lite_preset() : *this;
        out.params.validate();
        return out;
    }
};

// Aborted run; the partial trajectory is preserved for logging.
class PlantRunFailure : public Error {
public:
    PlantRunFailure(const std::string& what, Trajectory partial)
        : Error(Errc::plant_failure, what), partial_(std::move(partial)) {}
    const Trajectory& partial() const { return partial_; }

private:
    Trajectory partial_;
};

namespace detail {

inline void count_observation(CallCounts& calls, const ModalitySet& needs, int k, int steps) {
    if (needs.sc) calls.samples += k;
    if (needs.vc) calls.confidence += 1;
    if (needs.lc) calls.entailment += steps - 1;
}

inline Trajectory start_trajectory(const BenchTask& task, const RunConfig& config) {
    Trajectory traj;
    traj.task_id = task.id;
    traj.method = to_string(config.method);
    traj.gold_answer = task.gold_answer;
    traj.category = task.category;
    if (task.annotation) traj.task_error_type = task.annotation->error_type;
    traj.seed = config.seed;
    traj.params = config.params;
    traj.modalities = to_strings(config.modalities);
    return traj;
}

inline ErrorSignal sense(Plant& plant, const BenchTask& task, const ReasoningChain& chain,
                         const RunConfig& config, Trajectory& traj,
                         ModalityObservations* out_obs = nullptr) {
    ModalityObservations obs =
        plant.observe(task, chain, config.params.K, config.modalities);
    count_observation(traj.calls, config.modalities, config.params.K,
                      static_cast<int>(chain.steps.size()));
    if (out_obs) *out_obs = obs;
    return detect(obs, config.params);
}

}  // namespace detail

// The closed-loop typed-correction run:
//
//   y_0 <- generate; e_0 <- detect
//   if e_0 has no actionable error: stop (clean gate)
//   for t = 1..t_max:
//     u_t <- control_law(e_{t-1});  y_t <- correct(y_{t-1}, u_t)
//     e_t <- detect on the new output
//     judge: converged -> return y_t
//            oscillation -> return min-severity buffered version
//            overshoot  -> substitute (y_{t-1}, e_{t-1}) and continue
//     clean mid-loop output -> stop
//   return y_{t_max}
inline Trajectory run_correction(const BenchTask& task, Plant& plant, const RunConfig& raw_config) {
    const RunConfig config = raw_config.effective();
    Trajectory traj = detail::start_trajectory(task, config);

    ReasoningChain current;
    ErrorSignal accepted_signal;
    try {
        current = plant.generate(task);
        traj.calls.generate += 1;
        accepted_signal = detail::sense(plant, task, current, config, traj);
    } catch (const Error& e) {
        traj.termination = Termination::plant_failure;
        traj.failure_message = e.what();
        throw PlantRunFailure(e.what(), traj);
    }

    VersionBuffer buffer;
    buffer.push(current, accepted_signal.severity, 0);

    TrajectoryEntry initial;
    initial.iteration = 0;
    initial.version = current;
    initial.raw_severity = accepted_signal.severity;
    initial.accepted_severity = accepted_signal.severity;
    initial.accepted_answer = current.final_answer;
    initial.error_signal = accepted_signal;
    traj.entries.push_back(initial);

    traj.final_version = 0;
    traj.final_answer = current.final_answer;

    if (accepted_signal.error_type == ErrorType::none) {
        traj.entries.back().judge_decision = "clean";
        traj.termination = Termination::clean;
        return traj;
    }
    if (config.params.t_max == 0) {
        traj.entries.back().judge_decision = "max_iter";
        traj.termination = Termination::max_iterations;
        return traj;
    }
    traj.entries.back().judge_decision = "continue";

    // Accepted answer history, most recent last; index == iteration.
    std::vector<std::string> accepted_answers{current.final_answer};
    int accepted_index = 0;

    for (int t = 1; t <= config.params.t_max; ++t) {
        TrajectoryEntry entry;
        entry.iteration = t;
        ReasoningChain candidate;
        ErrorSignal raw_signal;
        try {
            const ControlInput input = control_law(accepted_signal, config.templates);
            entry.control_input = input;
            candidate = plant.correct(task, current, input);
            traj.calls.corrections += 1;
            raw_signal = detail::sense(plant, task, candidate, config, traj);
        } catch (const Error& e) {
            traj.termination = Termination::plant_failure;
            traj.failure_message = e.what();
            throw PlantRunFailure(e.what(), traj);
        }

        entry.version = candidate;
        entry.raw_severity = raw_signal.severity;
        entry.error_signal = raw_signal;

        JudgeState state;
        state.iteration = t;
        state.severity = raw_signal.severity;
        state.prev_severity = accepted_signal.severity;
        state.answer = candidate.final_answer;
        state.prev_answer = accepted_answers[static_cast<size_t>(t) - 1];
        if (t >= 2) state.prev_prev_answer = accepted_answers[static_cast<size_t>(t) - 2];

        const JudgeDecision decision = judge(state, buffer, config.params);

        switch (decision.outcome) {
            case JudgeOutcome::converged: {
                entry.accepted_severity = raw_signal.severity;
                entry.accepted_answer = candidate.final_answer;
                entry.judge_decision = "converged";
                traj.entries.push_back(std::move(entry));
                traj.final_version = t;
                traj.final_answer = candidate.final_answer;
                traj.termination = Termination::converged;
                return traj;
            }
            case JudgeOutcome::oscillation: {
                const VersionBuffer::Entry& best =
                    buffer.entries[static_cast<size_t>(*decision.best_index)];
                entry.accepted_severity = best.severity;
                entry.accepted_answer = best.version.final_answer;
                entry.judge_decision = "oscillation";
                traj.entries.push_back(std::move(entry));
                traj.final_version = best.iteration;
                traj.final_answer = best.version.final_answer;
                traj.termination = Termination::oscillation;
                return traj;
            }
            case JudgeOutcome::overshoot_rollback: {
                // Substitute the previous accepted version; the overshooting
                // output is recorded but never becomes current.
                entry.accepted_severity = accepted_signal.severity;
                entry.accepted_answer = current.final_answer;
                entry.judge_decision = "rollback";
                break;
            }
            case JudgeOutcome::max_iterations:
            case JudgeOutcome::continue_loop: {
                current = candidate;
                accepted_signal = raw_signal;
                accepted_index = t;
                entry.accepted_severity = raw_signal.severity;
                entry.accepted_answer = candidate.final_answer;
                entry.judge_decision =
                    decision.outcome == JudgeOutcome::max_iterations ? "max_iter" : "continue";
                break;
            }
        }

        accepted_answers.push_back(current.final_answer);
        buffer.push(current, accepted_signal.severity, t);

        const bool rolled_back = decision.outcome == JudgeOutcome::overshoot_rollback;
        const bool now_clean = !rolled_back && accepted_signal.error_type == ErrorType::none;
        if (now_clean) entry.judge_decision = "clean";
        traj.entries.push_back(std::move(entry));
        if (now_clean) {
            traj.final_version = t;
            traj.final_answer = current.final_answer;
            traj.termination = Termination::clean;
            return traj;
        }
    }

    traj.final_version = accepted_index;
    traj.final_answer = current.final_answer;
    traj.termination = Termination::max_iterations;
    return traj;
}

// Baselines run under identical logging. Detection is recorded for metric
// comparability but never drives control: no typed prompts, no rollback, and
// no convergence stop (self_refine stops only when the refinement output
// reproduces its input verbatim).
inline Trajectory run_baseline(const BenchTask& task, Plant& plant, const RunConfig& raw_config) {
    const RunConfig config = raw_config.effective();
    Trajectory traj = detail::start_trajectory(task, config);

    ReasoningChain current;
    try {
        current = plant.generate(task);
        traj.calls.generate += 1;
    } catch (const Error& e) {
        traj.termination = Termination::plant_failure;
        traj.failure_message = e.what();
        throw PlantRunFailure(e.what(), traj);
    }

    auto log_entry = [&](int iteration, const ReasoningChain& chain,
                         std::optional<ErrorSignal> signal,
                         std::optional<ControlInput> input, const std::string& decision) {
        TrajectoryEntry entry;
        entry.iteration = iteration;
        entry.version = chain;
        if (signal) {
            entry.raw_severity = signal->severity;
            entry.accepted_severity = signal->severity;
        }
        entry.accepted_answer = chain.final_answer;
        entry.error_signal = std::move(signal);
        entry.control_input = std::move(input);
        entry.judge_decision = decision;
        traj.entries.push_back(std::move(entry));
    };

    if (config.method == Method::no_correction) {
        log_entry(0, current, std::nullopt, std::nullopt, "max_iter");
        traj.final_version = 0;
        traj.final_answer = current.final_answer;
        traj.termination = Termination::max_iterations;
        return traj;
    }

    if (config.method == Method::self_consistency) {
        // Majority vote over K draws; the initial generation counts as the
        // first draw.
        std::vector<std::string> votes{current.final_answer};
        try {
            if (config.params.K > 1) {
                ModalityObservations obs = plant.observe(task, current, config.params.K - 1,
                                                         ModalitySet::sc_only());
                traj.calls.samples += config.params.K - 1;
                if (obs.samples)
                    votes.insert(votes.end(), obs.samples->begin(), obs.samples->end());
            }
        } catch (const Error& e) {
            traj.termination = Termination::plant_failure;
            traj.failure_message = e.what();
            throw PlantRunFailure(e.what(), traj);
        }
        const std::string majority = majority_answer(votes);
        ReasoningChain voted = current;
        voted.final_answer = majority;
        log_entry(0, voted, std::nullopt, std::nullopt, "max_iter");
        traj.final_version = 0;
        traj.final_answer = majority;
        traj.termination = Termination::max_iterations;
        return traj;
    }

    if (config.method != Method::naive_retry && config.method != Method::self_refine_generic)
        throw Error(Errc::config_invalid, "run_baseline requires a baseline method");

    const BaselineStrategy strategy = config.method == Method::naive_retry
                                          ? BaselineStrategy::naive_retry
                                          : BaselineStrategy::self_refine_generic;

    try {
        ErrorSignal signal = detail::sense(plant, task, current, config, traj);
        log_entry(0, current, signal, std::nullopt, "continue");

        for (int t = 1; t <= config.params.t_max; ++t) {
            const ControlInput input = render_baseline(strategy, config.templates);
            ReasoningChain next = plant.correct(task, current, input);
            traj.calls.corrections += 1;
            ErrorSignal next_signal = detail::sense(plant, task, next, config, traj);

            const bool verbatim = strategy == BaselineStrategy::self_refine_generic &&
                                  next.steps == current.steps &&
                                  next.final_answer == current.final_answer;
            const bool last = verbatim || t == config.params.t_max;
            log_entry(t, next, next_signal, input,
                      verbatim ? "converged" : (last ? "max_iter" : "continue"));
            current = next;
            traj.final_version = t;
            if (verbatim) {
                traj.final_answer = current.final_answer;
                traj.termination = Termination::stable_output;
                return traj;
            }
        }
    } catch (const Error& e) {
        traj.termination = Termination::plant_failure;
        traj.failure_message = e.what();
        throw PlantRunFailure(e.what(), traj);
    }

    traj.final_answer = current.final_answer;
    traj.termination = Termination::max_iterations;
    return traj;
}

inline Trajectory run_method(const BenchTask& task, Plant& plant, const RunConfig& config) {
    switch (config.method) {
        case Method::cybercorrect:
        case Method::cybercorrect_lite:
            return run_correction(task, plant, config);
        default:
            return run_baseline(task, plant, config);
    }
}

}  // namespace cybercorrect
