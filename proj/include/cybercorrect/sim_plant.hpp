#pragma once

#include <algorithm>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cybercorrect/core.hpp"
#include "cybercorrect/plant.hpp"
#include "cybercorrect/rng.hpp"
#include "cybercorrect/task.hpp"

namespace cybercorrect {

struct ErrorDistribution {
    double arithmetic = 0.28;
    double logic_gap = 0.27;
    double premise = 0.27;
    double none = 0.18;

    double sum() const { return arithmetic + logic_gap + premise + none; }

    bool operator==(const ErrorDistribution&) const = default;
};

struct SimPlantConfig {
    std::uint64_t seed = 0;
    ErrorDistribution initial_error_distribution;
    int chain_length_min = 3;
    int chain_length_max = 6;
    double fix_probability_matched = 0.7;   // correction type matches the true error
    double fix_probability_generic = 0.3;   // generic or mismatched correction
    double overshoot_probability = 0.15;    // correction injects a fresh (severe) error
    double oscillation_bias = 0.3;          // failed correction reverts to a prior wrong answer
    double regenerate_fix_bonus = 1.2;      // multiplier on fix probability in regenerate mode
    double observation_noise = 0.0;         // confidence jitter stddev; 0 = exact sensors
    double disagreement_rate = 0.4;         // sample disagreement given a hidden error
    double severe_disagreement_rate = 0.8;  // for overshoot-injected errors

    void validate() const {
        auto in01 = [](double p) { return p >= 0.0 && p <= 1.0; };
        if (!in01(initial_error_distribution.arithmetic) ||
            !in01(initial_error_distribution.logic_gap) ||
            !in01(initial_error_distribution.premise) || !in01(initial_error_distribution.none))
            throw Error(Errc::config_invalid, "error distribution entries must be in [0,1]");
        if (std::abs(initial_error_distribution.sum() - 1.0) > 1e-9)
            throw Error(Errc::config_invalid, "error distribution must sum to 1");
        if (chain_length_min < 2 || chain_length_max < chain_length_min)
            throw Error(Errc::config_invalid, "chain length range must satisfy 2 <= min <= max");
        for (double p : {fix_probability_matched, fix_probability_generic, overshoot_probability,
                         oscillation_bias, disagreement_rate, severe_disagreement_rate})
            if (!in01(p)) throw Error(Errc::config_invalid, "probabilities must be in [0,1]");
        if (regenerate_fix_bonus < 0.0)
            throw Error(Errc::config_invalid, "regenerate_fix_bonus must be >= 0");
        if (observation_noise < 0.0)
            throw Error(Errc::config_invalid, "observation_noise must be >= 0");
    }

    bool operator==(const SimPlantConfig&) const = default;
};

// Ground truth the detector is asked to recover. Never crosses the Plant
// interface; tests reach it through SimPlant::debug_hidden().
struct HiddenError {
    ErrorType type = ErrorType::none;
    int location = 0;
    bool severe = false;  // overshoot-injected errors emit stronger signals

    bool operator==(const HiddenError&) const = default;
};

namespace simdetail {

inline std::uint64_t chain_fingerprint(const ReasoningChain& chain) {
    std::uint64_t h = fnv1a(chain.final_answer);
    for (const Step& s : chain.steps) h = mix(h, fnv1a(s.text));
    return h;
}

// Synthetic chain whose step texts carry real extractable content: true
// equations on clean steps and the error signature at the hidden step.
template <typename Rng>
inline ReasoningChain build_sim_chain(const std::string& task_id, int length,
                                      const std::optional<std::pair<ErrorType, int>>& hidden,
                                      const std::string& answer, Rng& rng) {
    std::vector<Step> steps;
    steps.reserve(static_cast<size_t>(length));
    for (int i = 1; i <= length; ++i) {
        const std::int64_t x = rng.uniform_int(2, 49);
        const std::int64_t y = rng.uniform_int(2, 49);
        std::string text;
        if (hidden && hidden->second == i) {
            switch (hidden->first) {
                case ErrorType::arithmetic:
                    text = "Check: " + std::to_string(x) + " + " + std::to_string(y) + " = " +
                           std::to_string(x + y + rng.uniform_int(1, 9));
                    break;
                case ErrorType::logic_gap:
                    text = "Therefore the running total must be " +
                           std::to_string(x + rng.uniform_int(1, 9));
                    break;
                default:
                    text = "Assume the base quantity is " +
                           std::to_string(x + rng.uniform_int(1, 9));
                    break;
            }
        } else {
            text = "Compute: " + std::to_string(x) + " + " + std::to_string(y) + " = " +
                   std::to_string(x + y);
        }
        if (i == length) text += ", so the final answer is " + answer;
        text += ".";
        steps.push_back({i, std::move(text)});
    }
    return make_chain(task_id, std::move(steps));
}

// A wrong-but-plausible variant of a (normalized) answer. Numeric answers
// get an integer offset with their %/$ dressing preserved; yes/no flips;
// anything else gets a suffix.
inline std::string answer_variant(const std::string& answer, std::int64_t offset) {
    std::string prefix, digits, suffix;
    size_t i = 0;
    if (i < answer.size() && answer[i] == '$') prefix = answer.substr(i++, 1);
    if (i < answer.size() && answer[i] == '-') prefix += answer[i++];
    size_t start = i;
    while (i < answer.size() && std::isdigit(static_cast<unsigned char>(answer[i]))) ++i;
    digits = answer.substr(start, i - start);
    suffix = answer.substr(i);
    if (!digits.empty() && (suffix.empty() || suffix == "%")) {
        const std::int64_t value = std::stoll(digits);
        return prefix + std::to_string(value + offset) + suffix;
    }
    if (answer == "yes") return "no";
    if (answer == "no") return "yes";
    return answer + "-alt" + std::to_string(offset);
}

}  // namespace simdetail

// Deterministic simulated plant. Every random draw is keyed by
// (seed, task id, call kind, call index), so trajectories are a pure
// function of (task, seed, config) regardless of scheduling. Hidden error
// state is tracked per emitted chain; the observation model emits
// modality data consistent with it:
//   - samples disagree at the configured rate when an error exists
//     (deterministic count at zero noise, Bernoulli otherwise),
//   - confidence at the erroneous step is low (35 vs 100, plus jitter),
//   - entailment into the erroneous step fails for logic gaps and for
//     arithmetic errors past step 1; premise errors stay self-consistent.
class SimPlant final : public Plant {
public:
    explicit SimPlant(SimPlantConfig config) : config_(config) { config_.validate(); }

    ReasoningChain generate(const BenchTask& task) override {
        std::scoped_lock lock(mutex_);
        TaskState& state = states_[task.id];
        if (task.seeded_chain) {
            ReasoningChain chain = *task.seeded_chain;
            chain.task_id = task.id;
            std::optional<HiddenError> hidden;
            if (task.annotation)
                hidden = HiddenError{task.annotation->error_type, task.annotation->location, false};
            remember(state, chain, hidden);
            return chain;
        }
        CounterRng rng(task_key(task.id), "generate", 0);
        const ErrorType type = draw_error_type(rng);
        const int length =
            static_cast<int>(rng.uniform_int(config_.chain_length_min, config_.chain_length_max));
        std::optional<HiddenError> hidden;
        if (type != ErrorType::none) {
            const int lo = type == ErrorType::logic_gap ? 2 : 1;
            hidden = HiddenError{type, static_cast<int>(rng.uniform_int(lo, length)), false};
        }
        const std::string gold = gold_answer_for(task);
        const std::string answer =
            hidden ? simdetail::answer_variant(gold, rng.uniform_int(1, 5)) : gold;
        ReasoningChain chain = build_chain(task.id, length, hidden, answer, rng);
        remember(state, chain, hidden);
        return chain;
    }

    ModalityObservations observe(const BenchTask& task, const ReasoningChain& chain, int k,
                                 const ModalitySet& needs) override {
        std::scoped_lock lock(mutex_);
        TaskState& state = require_state(task.id);
        const std::optional<HiddenError> hidden = hidden_of(state, chain);
        CounterRng rng(task_key(task.id), "observe", static_cast<std::uint64_t>(state.observations++));

        ModalityObservations obs;
        const int steps = static_cast<int>(chain.steps.size());
        obs.step_content_flags.reserve(chain.steps.size());
        for (const Step& s : chain.steps) obs.step_content_flags.push_back(analyze_step_content(s.text));

        const double noise = config_.observation_noise;
        if (needs.sc) obs.samples = sample_answers(task, chain, hidden, k, rng);
        if (needs.vc) {
            std::vector<double> conf;
            conf.reserve(chain.steps.size());
            for (int j = 1; j <= steps; ++j) {
                double base = (hidden && hidden->location == j) ? 35.0 : 100.0;
                if (noise > 0.0) base += rng.normal(0.0, noise);
                conf.push_back(std::clamp(base, 0.0, 100.0));
            }
            obs.step_confidences = std::move(conf);
        }
        if (needs.lc) {
            std::vector<int> v;
            v.reserve(steps > 0 ? static_cast<size_t>(steps) - 1 : 0);
            const double flip_p = std::min(0.25, noise / 400.0);
            for (int pair = 1; pair < steps; ++pair) {
                // pair leads into step pair+1
                bool violated = false;
                if (hidden && hidden->location == pair + 1 &&
                    (hidden->severe || hidden->type == ErrorType::logic_gap ||
                     hidden->type == ErrorType::arithmetic))
                    violated = true;
                if (flip_p > 0.0 && rng.bernoulli(flip_p)) violated = !violated;
                v.push_back(violated ? 0 : 1);
            }
            obs.entailment = std::move(v);
        }
        return obs;
    }

    ReasoningChain correct(const BenchTask& task, const ReasoningChain& chain,
                           const ControlInput& input) override {
        std::scoped_lock lock(mutex_);
        TaskState& state = require_state(task.id);
        const std::optional<HiddenError> hidden_in = hidden_of(state, chain);
        CounterRng rng(task_key(task.id), "correct", static_cast<std::uint64_t>(state.corrections++));
        const double u_fix = rng.uniform();
        const double u_over = rng.uniform();
        const double u_osc = rng.uniform();

        bool fixed = false;
        std::optional<HiddenError> hidden_out = hidden_in;
        if (hidden_in) {
            const bool matched = input.error_type == hidden_in->type;
            double p = matched ? config_.fix_probability_matched : config_.fix_probability_generic;
            if (input.mode == ControlMode::regenerate_from)
                p = std::min(1.0, p * config_.regenerate_fix_bonus);
            fixed = u_fix < p;
            if (fixed) hidden_out.reset();
        }

        const bool overshoot = u_over < config_.overshoot_probability;
        const int length = static_cast<int>(chain.steps.size());
        if (overshoot) {
            // Injected errors land at step >= 2 and carry the full severe
            // signature (deep disagreement plus a broken entailment link),
            // so a botched correction is measurably worse than the error it
            // replaced.
            const ErrorType type = pick_injected_type(rng);
            hidden_out = HiddenError{type, static_cast<int>(rng.uniform_int(2, length)), true};
        }

        const std::string gold = gold_answer_for(task);

        if (!hidden_out && !hidden_in && !overshoot) return chain;  // nothing to change

        if (hidden_out && hidden_in && !fixed && !overshoot && u_osc < config_.oscillation_bias) {
            // Revert to the most recent previously emitted wrong answer, if
            // one exists with a different answer.
            for (auto it = state.emitted.rbegin(); it != state.emitted.rend(); ++it) {
                if (it->final_answer != chain.final_answer && it->final_answer != gold) {
                    ReasoningChain reverted = *it;
                    remember(state, reverted, hidden_of(state, reverted));
                    return reverted;
                }
            }
        }

        std::string answer = gold;
        if (hidden_out) {
            answer = simdetail::answer_variant(gold, rng.uniform_int(1, 5));
            for (int attempt = 0; attempt < 10 && answer == chain.final_answer; ++attempt)
                answer = simdetail::answer_variant(gold, rng.uniform_int(1, 5));
        }
        ReasoningChain next = build_chain(task.id, length, hidden_out, answer, rng);
        remember(state, next, hidden_out);
        return next;
    }

    // Test-harness hook; not part of the Plant interface and never surfaced
    // by the CLI.
    std::optional<HiddenError> debug_hidden(const BenchTask& task,
                                            const ReasoningChain& chain) const {
        std::scoped_lock lock(mutex_);
        auto it = states_.find(task.id);
        if (it == states_.end()) return std::nullopt;
        auto h = it->second.hidden.find(simdetail::chain_fingerprint(chain));
        return h == it->second.hidden.end() ? std::nullopt : h->second;
    }

    const SimPlantConfig& config() const { return config_; }

private:
    struct TaskState {
        std::unordered_map<std::uint64_t, std::optional<HiddenError>> hidden;
        std::vector<ReasoningChain> emitted;
        int corrections = 0;
        int observations = 0;
    };

    std::uint64_t task_key(const std::string& task_id) const {
        return mix(config_.seed, fnv1a(task_id));
    }

    TaskState& require_state(const std::string& task_id) {
        auto it = states_.find(task_id);
        if (it == states_.end())
            throw Error(Errc::plant_failure, "observe/correct before generate for task " + task_id);
        return it->second;
    }

    static void remember(TaskState& state, const ReasoningChain& chain,
                         std::optional<HiddenError> hidden) {
        state.hidden[simdetail::chain_fingerprint(chain)] = hidden;
        state.emitted.push_back(chain);
    }

    static std::optional<HiddenError> hidden_of(const TaskState& state,
                                                const ReasoningChain& chain) {
        auto it = state.hidden.find(simdetail::chain_fingerprint(chain));
        if (it == state.hidden.end())
            throw Error(Errc::plant_failure, "chain was not produced by this plant");
        return it->second;
    }

    ErrorType draw_error_type(CounterRng& rng) const {
        const double u = rng.uniform();
        const ErrorDistribution& d = config_.initial_error_distribution;
        if (u < d.arithmetic) return ErrorType::arithmetic;
        if (u < d.arithmetic + d.logic_gap) return ErrorType::logic_gap;
        if (u < d.arithmetic + d.logic_gap + d.premise) return ErrorType::premise;
        return ErrorType::none;
    }

    static ErrorType pick_injected_type(CounterRng& rng) {
        switch (rng.uniform_int(0, 2)) {
            case 0: return ErrorType::arithmetic;
            case 1: return ErrorType::logic_gap;
            default: return ErrorType::premise;
        }
    }

    std::string gold_answer_for(const BenchTask& task) const {
        if (!task.gold_answer.empty()) return task.gold_answer;
        // Tasks without a gold answer (ad-hoc questions) get a derived one so
        // the simulation stays well-defined.
        return std::to_string(10 + static_cast<int>(fnv1a(task.id) % 90));
    }

    static ReasoningChain build_chain(const std::string& task_id, int length,
                                      const std::optional<HiddenError>& hidden,
                                      const std::string& answer, CounterRng& rng) {
        std::optional<std::pair<ErrorType, int>> h;
        if (hidden) h = std::make_pair(hidden->type, hidden->location);
        return simdetail::build_sim_chain(task_id, length, h, answer, rng);
    }

    std::vector<std::string> sample_answers(const BenchTask& task, const ReasoningChain& chain,
                                            const std::optional<HiddenError>& hidden, int k,
                                            CounterRng& rng) const {
        if (k < 1) throw Error(Errc::empty_samples, "K must be >= 1");
        const std::string gold = gold_answer_for(task);
        auto pool_value = [&](int j) {
            return j == 0 ? gold : simdetail::answer_variant(gold, 6 * j + 1);
        };
        std::vector<std::string> samples;
        samples.reserve(static_cast<size_t>(k));
        const double noise = config_.observation_noise;
        if (hidden) {
            const double rate = hidden->severe ? config_.severe_disagreement_rate
                                               : config_.disagreement_rate;
            if (noise <= 0.0) {
                int d = static_cast<int>(std::llround(rate * k));
                d = std::clamp(d, 0, k - 1);
                for (int i = 0; i < k - d; ++i) samples.push_back(chain.final_answer);
                for (int j = 0; j < d; ++j) samples.push_back(pool_value(j));
            } else {
                int j = 0;
                for (int i = 0; i < k; ++i)
                    samples.push_back(rng.bernoulli(rate) ? pool_value(j++) : chain.final_answer);
            }
        } else {
            const double flip_p = std::min(0.25, noise / 400.0);
            int j = 1;  // skip gold: the chain answer already is gold
            for (int i = 0; i < k; ++i)
                samples.push_back(flip_p > 0.0 && rng.bernoulli(flip_p) ? pool_value(j++)
                                                                        : chain.final_answer);
        }
        for (auto& s : samples) s = normalize_answer(s);
        return samples;
    }

    SimPlantConfig config_;
    mutable std::mutex mutex_;
    std::unordered_map<std::string, TaskState> states_;
};

// Volume task generation for simulated benches: seeded chains with embedded
// errors mirroring the benchmark schema, categories round-robin.
inline std::vector<BenchTask> make_synthetic_tasks(int n, std::uint64_t seed,
                                                   const SimPlantConfig& config = {}) {
    config.validate();
    std::vector<BenchTask> tasks;
    tasks.reserve(static_cast<size_t>(n));
    const Category categories[] = {Category::MR, Category::LR, Category::Comm, Category::MS};
    for (int i = 0; i < n; ++i) {
        CounterRng rng(seed, "taskgen", static_cast<std::uint64_t>(i));
        BenchTask task;
        task.id = "sim-" + std::to_string(i + 1);
        task.category = categories[i % 4];
        task.gold_answer = std::to_string(20 + rng.uniform_int(0, 979));
        task.question = "Work out the running total; the expected result is hidden.";

        const double u = rng.uniform();
        const ErrorDistribution& d = config.initial_error_distribution;
        ErrorType type = ErrorType::none;
        if (u < d.arithmetic)
            type = ErrorType::arithmetic;
        else if (u < d.arithmetic + d.logic_gap)
            type = ErrorType::logic_gap;
        else if (u < d.arithmetic + d.logic_gap + d.premise)
            type = ErrorType::premise;

        const int length =
            static_cast<int>(rng.uniform_int(config.chain_length_min, config.chain_length_max));
        std::optional<HiddenError> hidden;
        if (type != ErrorType::none) {
            const int lo = type == ErrorType::logic_gap ? 2 : 1;
            hidden = HiddenError{type, static_cast<int>(rng.uniform_int(lo, length)), false};
            task.annotation = ErrorAnnotation{type, hidden->location};
        }
        const std::string answer =
            hidden ? simdetail::answer_variant(task.gold_answer, rng.uniform_int(1, 5))
                   : task.gold_answer;
        std::optional<std::pair<ErrorType, int>> h;
        if (hidden) h = std::make_pair(hidden->type, hidden->location);
        task.seeded_chain = simdetail::build_sim_chain(task.id, length, h, answer, rng);
        tasks.push_back(std::move(task));
    }
    return tasks;
}

}  // namespace cybercorrect
