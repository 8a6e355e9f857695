#pragma once

// Hand-scripted plant for exact, branch-by-branch loop tests: generate and
// correct return pre-built chains in order, observe returns pre-built
// observation sets in call order.

#include <string>
#include <vector>

#include "cybercorrect/core.hpp"
#include "cybercorrect/plant.hpp"

namespace cybercorrect::testutil {

inline ReasoningChain chain_of(const std::string& task_id, const std::string& answer,
                               int steps = 2) {
    std::vector<Step> out;
    for (int i = 1; i < steps; ++i) out.push_back({i, "Working on part " + std::to_string(i) + "."});
    out.push_back({steps, "So the answer is " + answer + "."});
    return make_chain(task_id, std::move(out));
}

// Observation set that detect() maps to an exact severity: confidence-only
// sensing, where the weight renormalizes to 1 and severity = 1 - conf/100.
// The erroneous step carries a numeric flag so severities past 0.6 classify
// as arithmetic.
inline ModalityObservations vc_obs(double severity, int steps = 2, int error_step = 2) {
    ModalityObservations obs;
    std::vector<double> conf(static_cast<size_t>(steps), 100.0);
    conf[static_cast<size_t>(error_step) - 1] = 100.0 * (1.0 - severity);
    obs.step_confidences = std::move(conf);
    obs.step_content_flags.assign(static_cast<size_t>(steps), {false, false});
    obs.step_content_flags[static_cast<size_t>(error_step) - 1] = {true, false};
    return obs;
}

class ScriptedPlant final : public Plant {
public:
    ReasoningChain initial;
    std::vector<ReasoningChain> corrections;          // returned by correct() in order
    std::vector<ModalityObservations> observations;   // returned by observe() in order

    int generate_calls = 0;
    int observe_calls = 0;
    int correct_calls = 0;
    std::vector<ControlInput> received_inputs;
    std::vector<ReasoningChain> corrected_from;  // the chain passed to each correct()

    ReasoningChain generate(const BenchTask& task) override {
        ++generate_calls;
        ReasoningChain out = initial;
        out.task_id = task.id;
        return out;
    }

    ModalityObservations observe(const BenchTask&, const ReasoningChain&, int,
                                 const ModalitySet&) override {
        if (observe_calls >= static_cast<int>(observations.size()))
            throw Error(Errc::plant_failure, "scripted observations exhausted");
        return observations[static_cast<size_t>(observe_calls++)];
    }

    ReasoningChain correct(const BenchTask&, const ReasoningChain& chain,
                           const ControlInput& input) override {
        if (correct_calls >= static_cast<int>(corrections.size()))
            throw Error(Errc::plant_failure, "scripted corrections exhausted");
        received_inputs.push_back(input);
        corrected_from.push_back(chain);
        return corrections[static_cast<size_t>(correct_calls++)];
    }
};

inline BenchTask simple_task(const std::string& id = "t1", const std::string& gold = "32%") {
    BenchTask task;
    task.id = id;
    task.category = Category::MS;
    task.question = "A store offers 20% off, then an additional 15% off the discounted price. "
                    "What is the total discount?";
    task.gold_answer = normalize_answer(gold);
    return task;
}

}  // namespace cybercorrect::testutil
