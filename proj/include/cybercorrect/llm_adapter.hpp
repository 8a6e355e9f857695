#pragma once

#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <future>
#include <mutex>
#include <optional>
#include <regex>
#include <semaphore>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "httplib.h"

#include "cybercorrect/core.hpp"
#include "cybercorrect/plant.hpp"

namespace cybercorrect {

struct EndpointConfig {
    std::string base_url = "http://127.0.0.1:8080/v1";
    std::string model_name = "gpt-4";
    std::string api_key_env = "CYBERCORRECT_API_KEY";
    double sample_temperature = 0.7;  // for the K self-consistency draws
    double verify_temperature = 0.0;  // confidence/entailment elicitation
    double request_timeout_s = 60.0;
    int max_retries = 3;
    int max_in_flight = 4;
    int backoff_base_ms = 500;
    std::string capture_path;  // mirror raw requests/responses when non-empty

    void validate() const {
        if (sample_temperature < 0.0 || verify_temperature < 0.0)
            throw Error(Errc::config_invalid, "temperatures must be >= 0");
        if (max_retries < 0) throw Error(Errc::config_invalid, "max_retries must be >= 0");
        if (max_in_flight < 1) throw Error(Errc::config_invalid, "max_in_flight must be >= 1");
        if (base_url.find("://") == std::string::npos)
            throw Error(Errc::config_invalid, "base_url must include a scheme");
    }

    bool operator==(const EndpointConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const EndpointConfig& c) {
    j = nlohmann::json{{"base_url", c.base_url},
                       {"model_name", c.model_name},
                       {"api_key_env", c.api_key_env},
                       {"sample_temperature", c.sample_temperature},
                       {"verify_temperature", c.verify_temperature},
                       {"request_timeout_s", c.request_timeout_s},
                       {"max_retries", c.max_retries},
                       {"max_in_flight", c.max_in_flight},
                       {"backoff_base_ms", c.backoff_base_ms},
                       {"capture_path", c.capture_path}};
}
inline void from_json(const nlohmann::json& j, EndpointConfig& c) {
    c.base_url = j.value("base_url", c.base_url);
    c.model_name = j.value("model_name", c.model_name);
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    c.sample_temperature = j.value("sample_temperature", c.sample_temperature);
    c.verify_temperature = j.value("verify_temperature", c.verify_temperature);
    c.request_timeout_s = j.value("request_timeout_s", c.request_timeout_s);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    c.backoff_base_ms = j.value("backoff_base_ms", c.backoff_base_ms);
    c.capture_path = j.value("capture_path", c.capture_path);
}

// ---------------------------------------------------------------------------
// Prompt construction and reply parsing. All elicitation prompts demand a
// rigid machine-readable reply format; robustness comes from the format
// contract plus one reformat retry, not from free-form parsing.
// ---------------------------------------------------------------------------

namespace llm {

inline std::string solve_prompt(const BenchTask& task) {
    return task.question +
           "\n\nSolve this step by step. Write each step on its own line in the exact form"
           " 'Step <n>: <reasoning>'. After the last step, finish with one line in the exact"
           " form 'Answer: <final answer>'.";
}

inline std::string render_chain(const ReasoningChain& chain) {
    std::string out;
    for (const Step& s : chain.steps)
        out += "Step " + std::to_string(s.index) + ": " + s.text + "\n";
    out += "Answer: " + chain.final_answer + "\n";
    return out;
}

// Parses a numbered-step solution. `first_step` is the expected index of the
// first parsed step (1 for full solutions, l for continuations).
inline ReasoningChain parse_solution(const std::string& task_id, const std::string& reply,
                                     int first_step = 1,
                                     const std::vector<Step>& prefix = {}) {
    static const std::regex step_re(R"(^\s*[*>-]*\s*[Ss]tep\s+(\d+)\s*[:.)]\s*(.*)$)");
    static const std::regex answer_re(R"(^\s*[*>-]*\s*[Aa]nswer\s*[:=]\s*(.*)$)");
    std::vector<Step> steps = prefix;
    std::string raw_answer;
    bool saw_answer = false;
    std::istringstream in(reply);
    std::string line;
    int expected = first_step;
    while (std::getline(in, line)) {
        std::smatch m;
        if (std::regex_match(line, m, step_re)) {
            const int index = std::stoi(m[1]);
            if (index != expected)
                throw Error(Errc::parse_failure,
                            "expected step " + std::to_string(expected) + ", got " +
                                std::to_string(index));
            steps.push_back({index, detail::trim(m[2].str())});
            ++expected;
        } else if (std::regex_match(line, m, answer_re)) {
            raw_answer = detail::trim(m[1].str());
            saw_answer = true;
        }
    }
    if (steps.empty()) throw Error(Errc::parse_failure, "no numbered steps in reply");
    if (!saw_answer) throw Error(Errc::parse_failure, "no Answer line in reply");
    return make_chain(task_id, std::move(steps), raw_answer);
}

// Lenient answer extraction for sampling draws: Answer line, else the last
// value-bearing line, else the whole last line normalized.
inline std::string parse_sampled_answer(const std::string& reply) {
    static const std::regex answer_re(R"(^\s*[*>-]*\s*[Aa]nswer\s*[:=]\s*(.*)$)");
    std::istringstream in(reply);
    std::string line, last_nonempty, answer;
    while (std::getline(in, line)) {
        std::smatch m;
        if (std::regex_match(line, m, answer_re)) answer = detail::trim(m[1].str());
        if (!detail::trim(line).empty()) last_nonempty = detail::trim(line);
    }
    if (!answer.empty()) return normalize_answer(answer);
    try {
        return extract_answer_from_text(last_nonempty);
    } catch (const Error&) {
        return normalize_answer(last_nonempty);
    }
}

inline std::string confidence_prompt(const ReasoningChain& chain) {
    return "Here is a step-by-step solution:\n\n" + render_chain(chain) +
           "\nRate your confidence that each step is correct on a scale of 0 to 100."
           " Reply with exactly one line per step in the exact form 'Step <n>: <integer>',"
           " nothing else.";
}

struct ConfidenceParse {
    std::vector<double> confidences;
    bool clamped = false;
};

inline ConfidenceParse parse_confidences(const std::string& reply, int n_steps) {
    static const std::regex conf_re(R"(^\s*[*>-]*\s*[Ss]tep\s+(\d+)\s*[:.)]\s*(-?\d+(?:\.\d+)?)\s*$)");
    std::vector<std::optional<double>> slots(static_cast<size_t>(n_steps));
    std::istringstream in(reply);
    std::string line;
    bool clamped = false;
    while (std::getline(in, line)) {
        std::smatch m;
        if (!std::regex_match(line, m, conf_re)) continue;
        const int index = std::stoi(m[1]);
        if (index < 1 || index > n_steps)
            throw Error(Errc::parse_failure, "confidence for unknown step " + m[1].str());
        double value = std::stod(m[2]);
        if (value < 0.0 || value > 100.0) {
            value = std::clamp(value, 0.0, 100.0);
            clamped = true;
        }
        slots[static_cast<size_t>(index) - 1] = value;
    }
    ConfidenceParse out;
    out.clamped = clamped;
    for (int i = 0; i < n_steps; ++i) {
        if (!slots[static_cast<size_t>(i)])
            throw Error(Errc::parse_failure,
                        "missing confidence for step " + std::to_string(i + 1));
        out.confidences.push_back(*slots[static_cast<size_t>(i)]);
    }
    return out;
}

inline std::string entailment_prompt(const Step& from, const Step& to) {
    return "Step A: " + from.text + "\nStep B: " + to.text +
           "\n\nDoes Step B logically follow from Step A? Reply with exactly one word:"
           " yes or no.";
}

inline int parse_yes_no(const std::string& reply) {
    std::string t = detail::to_lower(detail::trim(reply));
    while (!t.empty() && (t.back() == '.' || t.back() == '!')) t.pop_back();
    if (t.rfind("yes", 0) == 0) return 1;
    if (t.rfind("no", 0) == 0) return 0;
    throw Error(Errc::parse_failure, "expected yes/no, got: " + reply);
}

inline std::string reformat_nudge() {
    return "Your previous reply was not in the required format. Restate it exactly in the"
           " required format, with no extra commentary.";
}

}  // namespace llm

// ---------------------------------------------------------------------------
// Chat-completions HTTP client with retry/backoff and optional capture.
// ---------------------------------------------------------------------------

struct ChatMessage {
    std::string role;
    std::string content;
};

inline void to_json(nlohmann::json& j, const ChatMessage& m) {
    j = nlohmann::json{{"role", m.role}, {"content", m.content}};
}

struct ChatReply {
    std::string content;
    std::int64_t total_tokens = 0;
};

class ChatClient {
public:
    explicit ChatClient(EndpointConfig config) : config_(std::move(config)) {
        config_.validate();
        const size_t scheme = config_.base_url.find("://");
        const size_t path = config_.base_url.find('/', scheme + 3);
        if (path == std::string::npos) {
            origin_ = config_.base_url;
        } else {
            origin_ = config_.base_url.substr(0, path);
            path_prefix_ = config_.base_url.substr(path);
        }
        if (const char* key = std::getenv(config_.api_key_env.c_str()))
            api_key_ = key;
    }

    const EndpointConfig& config() const { return config_; }

    ChatReply complete(const std::vector<ChatMessage>& messages, double temperature) {
        nlohmann::json request{{"model", config_.model_name},
                               {"messages", messages},
                               {"temperature", temperature}};
        const std::string body = request.dump();
        std::string last_error = "no attempt made";
        for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
            if (attempt > 0) backoff(attempt);
            httplib::Client cli(origin_);
            cli.set_connection_timeout(std::chrono::milliseconds(
                static_cast<int>(config_.request_timeout_s * 1000)));
            cli.set_read_timeout(std::chrono::milliseconds(
                static_cast<int>(config_.request_timeout_s * 1000)));
            httplib::Headers headers;
            if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
            auto res = cli.Post(path_prefix_ + "/chat/completions", headers, body,
                                "application/json");
            if (!res) {
                last_error = "connection failed: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 429 || res->status >= 500) {
                last_error = "status " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200)
                throw Error(Errc::plant_failure,
                            "endpoint returned status " + std::to_string(res->status));
            capture(body, res->body);
            try {
                const nlohmann::json reply = nlohmann::json::parse(res->body);
                ChatReply out;
                out.content = reply.at("choices").at(0).at("message").at("content");
                if (reply.contains("usage"))
                    out.total_tokens = reply["usage"].value("total_tokens", std::int64_t{0});
                return out;
            } catch (const nlohmann::json::exception& e) {
                throw Error(Errc::plant_failure,
                            std::string("malformed endpoint response: ") + e.what());
            }
        }
        throw Error(Errc::plant_failure, "transport failed after " +
                                             std::to_string(config_.max_retries + 1) +
                                             " attempts: " + last_error);
    }

private:
    void backoff(int attempt) {
        const int ms = config_.backoff_base_ms * (1 << std::min(attempt - 1, 4));
        std::this_thread::sleep_for(std::chrono::milliseconds(ms));
    }

    void capture(const std::string& request, const std::string& response) {
        if (config_.capture_path.empty()) return;
        std::scoped_lock lock(capture_mutex_);
        std::ofstream out(config_.capture_path, std::ios::app);
        out << nlohmann::json{{"request", request}, {"response", response}}.dump() << "\n";
    }

    EndpointConfig config_;
    std::string origin_;
    std::string path_prefix_;
    std::string api_key_;
    std::mutex capture_mutex_;
};

// ---------------------------------------------------------------------------
// The live plant: elicits the three modalities by prompting.
// ---------------------------------------------------------------------------

class LlmPlant final : public Plant {
public:
    explicit LlmPlant(EndpointConfig config)
        : client_(std::move(config)),
          tokens_(0),
          in_flight_(std::max(1, client_.config().max_in_flight)) {}

    void set_warning_handler(std::function<void(const std::string&)> handler) {
        warn_ = std::move(handler);
    }

    std::int64_t tokens_used() const { return tokens_.load(); }

    ReasoningChain generate(const BenchTask& task) override {
        if (task.seeded_chain) {
            // Benchmark tasks ship the chain the methods must correct.
            ReasoningChain chain = *task.seeded_chain;
            chain.task_id = task.id;
            return chain;
        }
        if (detail::trim(task.question).empty())
            throw Error(Errc::invalid_task, "task question is empty");
        const std::vector<ChatMessage> messages{
            {"system", "You are a careful problem solver."},
            {"user", llm::solve_prompt(task)}};
        return request_solution(task.id, messages, client_.config().sample_temperature, 1, {});
    }

    ModalityObservations observe(const BenchTask& task, const ReasoningChain& chain, int k,
                                 const ModalitySet& needs) override {
        ModalityObservations obs;
        for (const Step& s : chain.steps)
            obs.step_content_flags.push_back(analyze_step_content(s.text));

        if (needs.sc) obs.samples = sample_answers(task, k);
        if (needs.vc) obs.step_confidences = elicit_confidences(chain);
        if (needs.lc) obs.entailment = elicit_entailment(chain);

        const bool any_requested = needs.sc || needs.vc || needs.lc;
        const bool any_present = obs.has_sc() || obs.has_vc() || obs.has_lc();
        if (any_requested && !any_present)
            throw Error(Errc::plant_failure, "all requested modalities failed");
        return obs;
    }

    ReasoningChain correct(const BenchTask& task, const ReasoningChain& chain,
                           const ControlInput& input) override {
        if (input.mode == ControlMode::regenerate_from && input.location) {
            const int from = *input.location;
            std::vector<Step> prefix;
            std::string confirmed;
            for (const Step& s : chain.steps) {
                if (s.index >= from) break;
                prefix.push_back(s);
                confirmed += "Step " + std::to_string(s.index) + ": " + s.text + "\n";
            }
            std::string prompt = task.question + "\n\n";
            if (!confirmed.empty())
                prompt += "These steps are confirmed and must be kept exactly as they are:\n" +
                          confirmed + "\n";
            prompt += input.instruction_text;
            prompt += "\n\nContinue the solution starting from step " + std::to_string(from) +
                      ". Output only the remaining steps in the exact form 'Step <n>: <text>',"
                      " then finish with the 'Answer: <final answer>' line.";
            const std::vector<ChatMessage> messages{
                {"system", "You are a careful problem solver."}, {"user", prompt}};
            return request_solution(task.id, messages, client_.config().sample_temperature,
                                    from, prefix);
        }
        std::string prompt = task.question + "\n\nHere is the previous solution:\n" +
                             llm::render_chain(chain) + "\n" + input.instruction_text +
                             "\n\nReply with the full revised solution: every step in the exact"
                             " form 'Step <n>: <text>', then one 'Answer: <final answer>' line.";
        const std::vector<ChatMessage> messages{{"system", "You are a careful problem solver."},
                                                {"user", prompt}};
        return request_solution(task.id, messages, client_.config().sample_temperature, 1, {});
    }

private:
    ReasoningChain request_solution(const std::string& task_id,
                                    std::vector<ChatMessage> messages, double temperature,
                                    int first_step, const std::vector<Step>& prefix) {
        const ChatReply reply = guarded_complete(messages, temperature);
        try {
            return llm::parse_solution(task_id, reply.content, first_step, prefix);
        } catch (const Error& e) {
            if (e.code() != Errc::parse_failure) throw;
            warn(std::string("reformat retry after parse failure: ") + e.what());
        }
        messages.push_back({"assistant", reply.content});
        messages.push_back({"user", llm::reformat_nudge()});
        const ChatReply second = guarded_complete(messages, temperature);
        try {
            return llm::parse_solution(task_id, second.content, first_step, prefix);
        } catch (const Error& e) {
            throw Error(Errc::plant_failure,
                        std::string("solution unparseable after reformat retry: ") + e.what());
        }
    }

    std::optional<std::vector<std::string>> sample_answers(const BenchTask& task, int k) {
        const std::vector<ChatMessage> messages{
            {"system", "You are a careful problem solver."},
            {"user", llm::solve_prompt(task)}};
        std::vector<std::future<std::string>> draws;
        draws.reserve(static_cast<size_t>(k));
        for (int i = 0; i < k; ++i) {
            draws.push_back(std::async(std::launch::async, [this, messages] {
                const ChatReply reply =
                    guarded_complete(messages, client_.config().sample_temperature);
                return llm::parse_sampled_answer(reply.content);
            }));
        }
        std::vector<std::string> samples;
        samples.reserve(static_cast<size_t>(k));
        bool failed = false;
        std::string why;
        for (auto& d : draws) {
            try {
                samples.push_back(d.get());
            } catch (const Error& e) {
                failed = true;
                why = e.what();
            }
        }
        if (failed) {
            warn("self-consistency sampling failed, dropping modality: " + why);
            return std::nullopt;
        }
        return samples;
    }

    std::optional<std::vector<double>> elicit_confidences(const ReasoningChain& chain) {
        std::vector<ChatMessage> messages{{"system", "You are a careful verifier."},
                                          {"user", llm::confidence_prompt(chain)}};
        const int n = static_cast<int>(chain.steps.size());
        try {
            const ChatReply reply =
                guarded_complete(messages, client_.config().verify_temperature);
            try {
                llm::ConfidenceParse parsed = llm::parse_confidences(reply.content, n);
                if (parsed.clamped)
                    warn("out-of-range confidence clamped to [0,100]");
                return parsed.confidences;
            } catch (const Error& e) {
                if (e.code() != Errc::parse_failure) throw;
                messages.push_back({"assistant", reply.content});
                messages.push_back({"user", llm::reformat_nudge()});
                const ChatReply second =
                    guarded_complete(messages, client_.config().verify_temperature);
                llm::ConfidenceParse parsed = llm::parse_confidences(second.content, n);
                if (parsed.clamped)
                    warn("out-of-range confidence clamped to [0,100]");
                return parsed.confidences;
            }
        } catch (const Error& e) {
            warn(std::string("confidence elicitation failed, dropping modality: ") + e.what());
            return std::nullopt;
        }
    }

    std::optional<std::vector<int>> elicit_entailment(const ReasoningChain& chain) {
        std::vector<int> verdicts;
        try {
            for (size_t j = 0; j + 1 < chain.steps.size(); ++j) {
                std::vector<ChatMessage> messages{
                    {"system", "You are a strict logic verifier."},
                    {"user", llm::entailment_prompt(chain.steps[j], chain.steps[j + 1])}};
                const ChatReply reply =
                    guarded_complete(messages, client_.config().verify_temperature);
                try {
                    verdicts.push_back(llm::parse_yes_no(reply.content));
                } catch (const Error& e) {
                    if (e.code() != Errc::parse_failure) throw;
                    messages.push_back({"assistant", reply.content});
                    messages.push_back({"user", llm::reformat_nudge()});
                    const ChatReply second =
                        guarded_complete(messages, client_.config().verify_temperature);
                    verdicts.push_back(llm::parse_yes_no(second.content));
                }
            }
        } catch (const Error& e) {
            warn(std::string("entailment verification failed, dropping modality: ") + e.what());
            return std::nullopt;
        }
        return verdicts;
    }

    ChatReply guarded_complete(const std::vector<ChatMessage>& messages, double temperature) {
        in_flight_.acquire();
        struct Release {
            std::counting_semaphore<>& sem;
            ~Release() { sem.release(); }
        } release{in_flight_};
        ChatReply reply = client_.complete(messages, temperature);
        tokens_ += reply.total_tokens;
        return reply;
    }

    void warn(const std::string& message) {
        if (warn_) warn_(message);
    }

    ChatClient client_;
    std::atomic<std::int64_t> tokens_;
    std::counting_semaphore<> in_flight_;
    std::function<void(const std::string&)> warn_;
};

}  // namespace cybercorrect
