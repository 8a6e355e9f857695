#pragma once

#include <nlohmann/json.hpp>

#include "cybercorrect/controller.hpp"
#include "cybercorrect/core.hpp"
#include "cybercorrect/sim_plant.hpp"
#include "cybercorrect/task.hpp"
#include "cybercorrect/trajectory.hpp"

// JSON bindings for every on-disk format: task files, trajectory logs,
// configuration. One parser for all of them.

namespace cybercorrect {

using nlohmann::json;

inline void to_json(json& j, const Step& s) { j = json{{"index", s.index}, {"text", s.text}}; }
inline void from_json(const json& j, Step& s) {
    j.at("index").get_to(s.index);
    j.at("text").get_to(s.text);
}

inline void to_json(json& j, const ReasoningChain& c) {
    j = json{{"task_id", c.task_id}, {"steps", c.steps}, {"final_answer", c.final_answer}};
}
inline void from_json(const json& j, ReasoningChain& c) {
    c.task_id = j.value("task_id", "");
    j.at("steps").get_to(c.steps);
    c.final_answer = j.value("final_answer", "");
}

inline void to_json(json& j, const SignalComponents& c) {
    j = json::object();
    if (c.sc) j["sc"] = *c.sc;
    if (c.max_vc) j["max_vc"] = *c.max_vc;
    if (c.min_entailment) j["min_entailment"] = *c.min_entailment;
}
inline void from_json(const json& j, SignalComponents& c) {
    if (j.contains("sc")) c.sc = j.at("sc").get<double>();
    if (j.contains("max_vc")) c.max_vc = j.at("max_vc").get<double>();
    if (j.contains("min_entailment")) c.min_entailment = j.at("min_entailment").get<double>();
}

inline void to_json(json& j, const ErrorSignal& s) {
    j = json{{"error_type", to_string(s.error_type)},
             {"severity", s.severity},
             {"components", s.components}};
    if (s.location) j["location"] = *s.location;
}
inline void from_json(const json& j, ErrorSignal& s) {
    s.error_type = error_type_from_string(j.at("error_type").get<std::string>());
    j.at("severity").get_to(s.severity);
    if (j.contains("location") && !j.at("location").is_null())
        s.location = j.at("location").get<int>();
    if (j.contains("components")) j.at("components").get_to(s.components);
}

inline void to_json(json& j, const Weights& w) { j = json::array({w.w1, w.w2, w.w3}); }
inline void from_json(const json& j, Weights& w) {
    if (!j.is_array() || j.size() != 3)
        throw Error(Errc::schema_error, "weights must be an array of three numbers");
    w.w1 = j[0].get<double>();
    w.w2 = j[1].get<double>();
    w.w3 = j[2].get<double>();
}

inline void to_json(json& j, const Hyperparameters& p) {
    j = json{{"K", p.K},         {"phi", p.phi},     {"sigma", p.sigma},
             {"epsilon", p.epsilon}, {"delta", p.delta}, {"t_max", p.t_max},
             {"weights", p.weights}};
}
inline void from_json(const json& j, Hyperparameters& p) {
    p.K = j.value("K", p.K);
    p.phi = j.value("phi", p.phi);
    p.sigma = j.value("sigma", p.sigma);
    p.epsilon = j.value("epsilon", p.epsilon);
    p.delta = j.value("delta", p.delta);
    p.t_max = j.value("t_max", p.t_max);
    if (j.contains("weights")) j.at("weights").get_to(p.weights);
}

inline void to_json(json& j, const ControlInput& c) {
    j = json{{"mode", to_string(c.mode)},
             {"error_type", to_string(c.error_type)},
             {"instruction_text", c.instruction_text}};
    if (c.location) j["location"] = *c.location;
}
inline void from_json(const json& j, ControlInput& c) {
    c.mode = control_mode_from_string(j.at("mode").get<std::string>());
    c.error_type = error_type_from_string(j.at("error_type").get<std::string>());
    j.at("instruction_text").get_to(c.instruction_text);
    if (j.contains("location") && !j.at("location").is_null())
        c.location = j.at("location").get<int>();
}

inline void to_json(json& j, const ErrorAnnotation& a) {
    j = json{{"error_type", to_string(a.error_type)}, {"location", a.location}};
}
inline void from_json(const json& j, ErrorAnnotation& a) {
    a.error_type = error_type_from_string(j.at("error_type").get<std::string>());
    j.at("location").get_to(a.location);
}

inline void to_json(json& j, const BenchTask& t) {
    j = json{{"schema_version", 1},
             {"id", t.id},
             {"category", to_string(t.category)},
             {"question", t.question},
             {"gold_answer", t.gold_answer}};
    if (t.seeded_chain) j["seeded_chain"] = *t.seeded_chain;
    if (t.annotation) j["annotation"] = *t.annotation;
    if (t.ideal_correction) j["ideal_correction"] = *t.ideal_correction;
}
inline void from_json(const json& j, BenchTask& t) {
    j.at("id").get_to(t.id);
    t.category = category_from_string(j.at("category").get<std::string>());
    t.question = j.value("question", "");
    j.at("gold_answer").get_to(t.gold_answer);
    if (j.contains("seeded_chain") && !j.at("seeded_chain").is_null())
        t.seeded_chain = j.at("seeded_chain").get<ReasoningChain>();
    if (j.contains("annotation") && !j.at("annotation").is_null())
        t.annotation = j.at("annotation").get<ErrorAnnotation>();
    if (j.contains("ideal_correction") && !j.at("ideal_correction").is_null())
        t.ideal_correction = j.at("ideal_correction").get<std::string>();
}

inline void to_json(json& j, const CallCounts& c) {
    j = json{{"generate", c.generate},     {"samples", c.samples},
             {"confidence", c.confidence}, {"entailment", c.entailment},
             {"corrections", c.corrections}, {"tokens", c.tokens},
             {"total", c.total()}};
}
inline void from_json(const json& j, CallCounts& c) {
    c.generate = j.value("generate", 0);
    c.samples = j.value("samples", 0);
    c.confidence = j.value("confidence", 0);
    c.entailment = j.value("entailment", 0);
    c.corrections = j.value("corrections", 0);
    c.tokens = j.value("tokens", std::int64_t{0});
}

inline void to_json(json& j, const TrajectoryEntry& e) {
    j = json{{"iteration", e.iteration},
             {"version", e.version},
             {"accepted_answer", e.accepted_answer},
             {"judge_decision", e.judge_decision}};
    j["raw_severity"] = e.raw_severity ? json(*e.raw_severity) : json(nullptr);
    j["accepted_severity"] = e.accepted_severity ? json(*e.accepted_severity) : json(nullptr);
    if (e.error_signal) j["error_signal"] = *e.error_signal;
    if (e.control_input) j["control_input"] = *e.control_input;
}
inline void from_json(const json& j, TrajectoryEntry& e) {
    j.at("iteration").get_to(e.iteration);
    j.at("version").get_to(e.version);
    e.accepted_answer = j.value("accepted_answer", "");
    e.judge_decision = j.value("judge_decision", "");
    if (j.contains("raw_severity") && !j.at("raw_severity").is_null())
        e.raw_severity = j.at("raw_severity").get<double>();
    if (j.contains("accepted_severity") && !j.at("accepted_severity").is_null())
        e.accepted_severity = j.at("accepted_severity").get<double>();
    if (j.contains("error_signal") && !j.at("error_signal").is_null())
        e.error_signal = j.at("error_signal").get<ErrorSignal>();
    if (j.contains("control_input") && !j.at("control_input").is_null())
        e.control_input = j.at("control_input").get<ControlInput>();
}

inline void to_json(json& j, const Trajectory& t) {
    j = json{{"schema_version", Trajectory::kSchemaVersion},
             {"task_id", t.task_id},
             {"method", t.method},
             {"gold_answer", t.gold_answer},
             {"category", to_string(t.category)},
             {"seed", t.seed},
             {"params", t.params},
             {"modalities", t.modalities},
             {"entries", t.entries},
             {"termination_reason", to_string(t.termination)},
             {"final_version", t.final_version},
             {"final_answer", t.final_answer},
             {"calls", t.calls}};
    if (t.task_error_type) j["task_error_type"] = to_string(*t.task_error_type);
    if (t.failure_message) j["failure_message"] = *t.failure_message;
}
inline void from_json(const json& j, Trajectory& t) {
    if (j.value("schema_version", 0) != Trajectory::kSchemaVersion)
        throw Error(Errc::schema_error, "unsupported trajectory schema_version");
    j.at("task_id").get_to(t.task_id);
    j.at("method").get_to(t.method);
    t.gold_answer = j.value("gold_answer", "");
    t.category = category_from_string(j.value("category", "MR"));
    t.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("params")) j.at("params").get_to(t.params);
    if (j.contains("modalities")) j.at("modalities").get_to(t.modalities);
    j.at("entries").get_to(t.entries);
    t.termination = termination_from_string(j.value("termination_reason", "max_iterations"));
    t.final_version = j.value("final_version", 0);
    t.final_answer = j.value("final_answer", "");
    if (j.contains("calls")) j.at("calls").get_to(t.calls);
    if (j.contains("task_error_type") && !j.at("task_error_type").is_null())
        t.task_error_type = error_type_from_string(j.at("task_error_type").get<std::string>());
    if (j.contains("failure_message") && !j.at("failure_message").is_null())
        t.failure_message = j.at("failure_message").get<std::string>();
}

inline void to_json(json& j, const ErrorDistribution& d) {
    j = json{{"arithmetic", d.arithmetic},
             {"logic_gap", d.logic_gap},
             {"premise", d.premise},
             {"none", d.none}};
}
inline void from_json(const json& j, ErrorDistribution& d) {
    d.arithmetic = j.value("arithmetic", d.arithmetic);
    d.logic_gap = j.value("logic_gap", d.logic_gap);
    d.premise = j.value("premise", d.premise);
    d.none = j.value("none", d.none);
}

inline void to_json(json& j, const SimPlantConfig& c) {
    j = json{{"seed", c.seed},
             {"initial_error_distribution", c.initial_error_distribution},
             {"chain_length_min", c.chain_length_min},
             {"chain_length_max", c.chain_length_max},
             {"fix_probability_matched", c.fix_probability_matched},
             {"fix_probability_generic", c.fix_probability_generic},
             {"overshoot_probability", c.overshoot_probability},
             {"oscillation_bias", c.oscillation_bias},
             {"regenerate_fix_bonus", c.regenerate_fix_bonus},
             {"observation_noise", c.observation_noise},
             {"disagreement_rate", c.disagreement_rate},
             {"severe_disagreement_rate", c.severe_disagreement_rate}};
}
inline void from_json(const json& j, SimPlantConfig& c) {
    c.seed = j.value("seed", c.seed);
    if (j.contains("initial_error_distribution"))
        j.at("initial_error_distribution").get_to(c.initial_error_distribution);
    c.chain_length_min = j.value("chain_length_min", c.chain_length_min);
    c.chain_length_max = j.value("chain_length_max", c.chain_length_max);
    c.fix_probability_matched = j.value("fix_probability_matched", c.fix_probability_matched);
    c.fix_probability_generic = j.value("fix_probability_generic", c.fix_probability_generic);
    c.overshoot_probability = j.value("overshoot_probability", c.overshoot_probability);
    c.oscillation_bias = j.value("oscillation_bias", c.oscillation_bias);
    c.regenerate_fix_bonus = j.value("regenerate_fix_bonus", c.regenerate_fix_bonus);
    c.observation_noise = j.value("observation_noise", c.observation_noise);
    c.disagreement_rate = j.value("disagreement_rate", c.disagreement_rate);
    c.severe_disagreement_rate = j.value("severe_disagreement_rate", c.severe_disagreement_rate);
}

}  // namespace cybercorrect
