#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cybercorrect/core.hpp"

namespace cybercorrect {

// Raw sensor data for one iteration. Each modality is optional so that a
// run can request a subset (the Lite preset uses self-consistency only) and
// so that a failed elicitation degrades to an absent modality instead of
// aborting. Content flags are derived locally from the chain text and are
// always present.
struct ModalityObservations {
    std::optional<std::vector<std::string>> samples;          // K normalized answers
    std::optional<std::vector<double>> step_confidences;      // [0,100], one per step
    std::optional<std::vector<int>> entailment;               // {0,1}, one per step pair
    std::vector<StepContentFlags> step_content_flags;         // one per step

    bool has_sc() const { return samples.has_value(); }
    bool has_vc() const { return step_confidences.has_value(); }
    bool has_lc() const { return entailment.has_value(); }
};

// Self-consistency severity: 1 - majority_count/K. Majority ties break by
// first occurrence among the samples.
inline double sc_severity(const std::vector<std::string>& samples) {
    if (samples.empty()) throw Error(Errc::empty_samples, "no self-consistency samples");
    std::unordered_map<std::string, int> counts;
    for (const auto& s : samples) ++counts[s];
    int best = 0;
    for (const auto& s : samples) {
        const int c = counts[s];
        if (c > best) best = c;  // first-seen wins ties
    }
    return 1.0 - static_cast<double>(best) / static_cast<double>(samples.size());
}

inline std::string majority_answer(const std::vector<std::string>& samples) {
    if (samples.empty()) throw Error(Errc::empty_samples, "no self-consistency samples");
    std::unordered_map<std::string, int> counts;
    for (const auto& s : samples) ++counts[s];
    int best = 0;
    std::string winner;
    for (const auto& s : samples) {
        const int c = counts[s];
        if (c > best) {
            best = c;
            winner = s;
        }
    }
    return winner;
}

struct VcResult {
    std::vector<double> per_step;      // 1 - conf/100
    double max_severity = 0.0;
    std::vector<int> flagged_steps;    // 1-based steps with conf strictly below phi
};

// Strict about range; adapters must clamp or reject before this point.
inline VcResult vc_severity(const std::vector<double>& confidences, double phi) {
    VcResult out;
    out.per_step.reserve(confidences.size());
    for (size_t j = 0; j < confidences.size(); ++j) {
        const double c = confidences[j];
        if (c < 0.0 || c > 100.0)
            throw Error(Errc::out_of_range, "confidence outside [0,100]");
        const double s = 1.0 - c / 100.0;
        out.per_step.push_back(s);
        out.max_severity = std::max(out.max_severity, s);
        if (c < phi) out.flagged_steps.push_back(static_cast<int>(j) + 1);
    }
    return out;
}

// (1 - min_j v_j). Single-step chains have no consecutive pair and are
// vacuously valid.
inline double lc_term(const std::vector<int>& entailment) {
    if (entailment.empty()) return 0.0;
    for (int v : entailment) {
        if (v != 0 && v != 1)
            throw Error(Errc::out_of_range, "entailment verdicts must be binary");
    }
    const int mn = *std::min_element(entailment.begin(), entailment.end());
    return 1.0 - static_cast<double>(mn);
}

inline double fuse_severity(double s_sc, double max_s_vc, double lc, const Weights& w) {
    return w.w1 * s_sc + w.w2 * max_s_vc + w.w3 * lc;
}

namespace detail {

// True when the entailment pair leading into 1-based step j was violated.
inline bool entailment_violated_into(const std::optional<std::vector<int>>& entailment, int j) {
    if (!entailment || j < 2) return false;
    const size_t pair = static_cast<size_t>(j) - 2;  // pair (j-1, j)
    if (pair >= entailment->size()) return false;
    return (*entailment)[pair] == 0;
}

}  // namespace detail

// Classification and localization once the fused severity is known.
// Localization uses the weighted per-step composite of the step-level
// modalities (VC and LC); self-consistency carries no per-step signal.
inline ErrorSignal classify_and_locate(const ModalityObservations& obs,
                                       const std::vector<double>& per_step_vc,
                                       double severity, const Hyperparameters& params) {
    ErrorSignal signal;
    signal.severity = severity;
    if (obs.has_sc()) signal.components.sc = sc_severity(*obs.samples);
    if (obs.has_vc() && !per_step_vc.empty())
        signal.components.max_vc = *std::max_element(per_step_vc.begin(), per_step_vc.end());
    if (obs.has_lc())
        signal.components.min_entailment =
            obs.entailment->empty()
                ? 1.0
                : static_cast<double>(
                      *std::min_element(obs.entailment->begin(), obs.entailment->end()));

    if (severity <= params.sigma) {
        signal.error_type = ErrorType::none;
        return signal;
    }

    const int steps = static_cast<int>(obs.step_content_flags.size());
    int best_step = 1;
    double best_score = -1.0;
    for (int j = 1; j <= steps; ++j) {
        double score = 0.0;
        if (obs.has_vc() && j <= static_cast<int>(per_step_vc.size()))
            score += params.weights.w2 * per_step_vc[static_cast<size_t>(j) - 1];
        if (detail::entailment_violated_into(obs.entailment, j)) score += params.weights.w3;
        if (score > best_score) {  // strict: earliest step wins ties
            best_score = score;
            best_step = j;
        }
    }
    signal.location = best_step;

    const StepContentFlags& flags = obs.step_content_flags[static_cast<size_t>(best_step) - 1];
    const bool conf_flagged = obs.has_vc() &&
                              best_step <= static_cast<int>(obs.step_confidences->size()) &&
                              (*obs.step_confidences)[static_cast<size_t>(best_step) - 1] <
                                  params.phi;
    const bool lc_violated = detail::entailment_violated_into(obs.entailment, best_step);

    if (flags.has_numeric_computation && (conf_flagged || lc_violated))
        signal.error_type = ErrorType::arithmetic;
    else if (lc_violated)
        signal.error_type = ErrorType::logic_gap;
    else if (flags.is_premise_assertion || best_step == 1)
        signal.error_type = ErrorType::premise;
    else
        signal.error_type = ErrorType::logic_gap;
    return signal;
}

// Effective weights after dropping absent modalities and renormalizing over
// the remaining mass. Throws when no usable modality remains.
inline Weights renormalized_weights(const ModalityObservations& obs, const Weights& w) {
    const double sum = (obs.has_sc() ? w.w1 : 0.0) + (obs.has_vc() ? w.w2 : 0.0) +
                       (obs.has_lc() ? w.w3 : 0.0);
    if (sum <= 0.0)
        throw Error(Errc::plant_failure, "no usable detection modality");
    Weights out;
    out.w1 = obs.has_sc() ? w.w1 / sum : 0.0;
    out.w2 = obs.has_vc() ? w.w2 / sum : 0.0;
    out.w3 = obs.has_lc() ? w.w3 / sum : 0.0;
    return out;
}

// The full sensor: Eq. 3-5 fusion plus classification/localization.
inline ErrorSignal detect(const ModalityObservations& obs, const Hyperparameters& params) {
    if (obs.step_content_flags.empty())
        throw Error(Errc::out_of_range, "observations cover zero steps");
    if (obs.has_vc() && obs.step_confidences->size() != obs.step_content_flags.size())
        throw Error(Errc::out_of_range, "one confidence per step required");
    if (obs.has_lc() && obs.entailment->size() + 1 != obs.step_content_flags.size())
        throw Error(Errc::out_of_range, "one entailment verdict per consecutive step pair");

    const Weights w = renormalized_weights(obs, params.weights);
    const double s_sc = obs.has_sc() ? sc_severity(*obs.samples) : 0.0;
    std::vector<double> per_step_vc;
    double max_vc = 0.0;
    if (obs.has_vc()) {
        VcResult vc = vc_severity(*obs.step_confidences, params.phi);
        per_step_vc = std::move(vc.per_step);
        max_vc = vc.max_severity;
    }
    const double lc = obs.has_lc() ? lc_term(*obs.entailment) : 0.0;

    Hyperparameters effective = params;
    effective.weights = w;
    const double severity = fuse_severity(s_sc, max_vc, lc, w);
    return classify_and_locate(obs, per_step_vc, severity, effective);
}

}  // namespace cybercorrect
