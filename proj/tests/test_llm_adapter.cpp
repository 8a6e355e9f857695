#include <gtest/gtest.h>

#include <atomic>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "cybercorrect/detector.hpp"
#include "cybercorrect/llm_adapter.hpp"

using namespace cybercorrect;
using json = nlohmann::json;

namespace {

// Local chat-completions stub. The handler receives (request body, call
// index) and returns (status, assistant content). Status 200 wraps the
// content in the standard choices/message envelope.
class MockEndpoint {
public:
    using Handler = std::function<std::pair<int, std::string>(const json&, int)>;

    explicit MockEndpoint(Handler handler) : handler_(std::move(handler)) {
        server_.Post("/v1/chat/completions",
                     [this](const httplib::Request& req, httplib::Response& res) {
                         const int index = calls_++;
                         json body = json::parse(req.body);
                         requests_.push_back(body);
                         auto [status, content] = handler_(body, index);
                         res.status = status;
                         if (status == 200) {
                             json reply{{"choices",
                                         json::array({json{{"message",
                                                            json{{"role", "assistant"},
                                                                 {"content", content}}}}})},
                                        {"usage", json{{"total_tokens", 7}}}};
                             res.set_content(reply.dump(), "application/json");
                         } else {
                             res.set_content("{\"error\":\"scripted failure\"}",
                                             "application/json");
                         }
                     });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~MockEndpoint() {
        server_.stop();
        thread_.join();
    }

    EndpointConfig config() const {
        EndpointConfig cfg;
        cfg.base_url = "http://127.0.0.1:" + std::to_string(port_) + "/v1";
        cfg.max_retries = 2;
        cfg.backoff_base_ms = 1;
        cfg.max_in_flight = 3;
        return cfg;
    }

    int calls() const { return calls_.load(); }
    const std::vector<json>& requests() const { return requests_; }

private:
    httplib::Server server_;
    std::thread thread_;
    Handler handler_;
    std::atomic<int> calls_{0};
    std::vector<json> requests_;
    int port_ = 0;
};

BenchTask question_task(const std::string& q = "What is 6 times 6?") {
    BenchTask task;
    task.id = "q1";
    task.category = Category::MR;
    task.question = q;
    task.gold_answer = "36";
    return task;
}

constexpr const char* kGoodSolution =
    "Step 1: Six groups of six make 36.\nStep 2: Check: 6 * 6 = 36.\nAnswer: 36";

}  // namespace

TEST(LlmGenerate, ParsesNumberedSolution) {
    MockEndpoint server([](const json&, int) { return std::make_pair(200, kGoodSolution); });
    LlmPlant plant(server.config());
    const ReasoningChain chain = plant.generate(question_task());
    ASSERT_EQ(chain.steps.size(), 2u);
    EXPECT_EQ(chain.steps[0].index, 1);
    EXPECT_EQ(chain.final_answer, "36");
    EXPECT_EQ(server.calls(), 1);
    EXPECT_EQ(plant.tokens_used(), 7);
}

TEST(LlmGenerate, SeededChainShortCircuitsNetwork) {
    MockEndpoint server([](const json&, int) { return std::make_pair(200, kGoodSolution); });
    LlmPlant plant(server.config());
    BenchTask task = question_task();
    task.seeded_chain = make_chain("q1", {{1, "Check: 6 * 6 = 39, so the answer is 39."}});
    const ReasoningChain chain = plant.generate(task);
    EXPECT_EQ(chain.final_answer, "39");
    EXPECT_EQ(server.calls(), 0);
}

TEST(LlmGenerate, EmptyQuestionRejectedBeforeAnyRequest) {
    MockEndpoint server([](const json&, int) { return std::make_pair(200, kGoodSolution); });
    LlmPlant plant(server.config());
    try {
        plant.generate(question_task("   "));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::invalid_task);
    }
    EXPECT_EQ(server.calls(), 0);
}

TEST(LlmGenerate, ReformatRetryRecoversMalformedReply) {
    MockEndpoint server([](const json& request, int index) {
        if (index == 0) return std::make_pair(200, std::string("I think it's 36."));
        // The retry must carry the nudge.
        const std::string last = request.at("messages").back().at("content");
        EXPECT_NE(last.find("not in the required format"), std::string::npos);
        return std::make_pair(200, std::string(kGoodSolution));
    });
    LlmPlant plant(server.config());
    const ReasoningChain chain = plant.generate(question_task());
    EXPECT_EQ(chain.final_answer, "36");
    EXPECT_EQ(server.calls(), 2);
}

TEST(LlmGenerate, FailsRunWhenRetryStaysMalformed) {
    MockEndpoint server(
        [](const json&, int) { return std::make_pair(200, std::string("still chatty")); });
    LlmPlant plant(server.config());
    try {
        plant.generate(question_task());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::plant_failure);
    }
    EXPECT_EQ(server.calls(), 2);  // original + one reformat retry
}

TEST(LlmTransport, RetriesServerErrorsWithBackoff) {
    MockEndpoint server([](const json&, int index) {
        if (index == 0) return std::make_pair(500, std::string());
        return std::make_pair(200, std::string(kGoodSolution));
    });
    LlmPlant plant(server.config());
    EXPECT_EQ(plant.generate(question_task()).final_answer, "36");
    EXPECT_EQ(server.calls(), 2);
}

TEST(LlmTransport, GivesUpAfterMaxRetries) {
    MockEndpoint server([](const json&, int) { return std::make_pair(503, std::string()); });
    LlmPlant plant(server.config());
    try {
        plant.generate(question_task());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::plant_failure);
    }
    EXPECT_EQ(server.calls(), 3);  // max_retries = 2 -> three attempts
}

TEST(LlmObserve, SamplesConfidencesAndEntailment) {
    // Requests are distinguished by their prompts: sampling asks to solve,
    // confidence asks for ratings, entailment asks yes/no.
    MockEndpoint server([](const json& request, int) {
        const std::string prompt = request.at("messages").back().at("content");
        if (prompt.find("Rate your confidence") != std::string::npos)
            return std::make_pair(200, std::string("Step 1: 80\nStep 2: 35"));
        if (prompt.find("logically follow") != std::string::npos)
            return std::make_pair(200, std::string("no"));
        static std::atomic<int> draw{0};
        const char* answers[] = {"36", "36", "36", "48", "48"};
        return std::make_pair(
            200, std::string("Answer: ") + answers[draw++ % 5]);
    });
    LlmPlant plant(server.config());
    const ReasoningChain chain =
        make_chain("q1", {{1, "Six groups of six."}, {2, "Check: 6 * 6 = 36, answer is 36."}});
    const ModalityObservations obs =
        plant.observe(question_task(), chain, 5, ModalitySet::all());

    ASSERT_TRUE(obs.has_sc());
    EXPECT_DOUBLE_EQ(sc_severity(*obs.samples), 1.0 - 3.0 / 5.0);
    ASSERT_TRUE(obs.has_vc());
    EXPECT_EQ(*obs.step_confidences, (std::vector<double>{80.0, 35.0}));
    ASSERT_TRUE(obs.has_lc());
    EXPECT_EQ(*obs.entailment, (std::vector<int>{0}));
    // K samples + 1 confidence call + (steps - 1) entailment calls.
    EXPECT_EQ(server.calls(), 5 + 1 + 1);
    EXPECT_EQ(obs.step_content_flags.size(), 2u);
    EXPECT_TRUE(obs.step_content_flags[1].has_numeric_computation);
}

TEST(LlmObserve, ClampsOutOfRangeConfidenceWithWarning) {
    MockEndpoint server([](const json& request, int) {
        const std::string prompt = request.at("messages").back().at("content");
        if (prompt.find("Rate your confidence") != std::string::npos)
            return std::make_pair(200, std::string("Step 1: 140\nStep 2: -5"));
        return std::make_pair(200, std::string("Answer: 36"));
    });
    LlmPlant plant(server.config());
    std::vector<std::string> warnings;
    plant.set_warning_handler([&](const std::string& w) { warnings.push_back(w); });
    const ReasoningChain chain = make_chain("q1", {{1, "a"}, {2, "answer is 36"}});
    ModalitySet vc_only{false, true, false};
    const ModalityObservations obs = plant.observe(question_task(), chain, 5, vc_only);
    ASSERT_TRUE(obs.has_vc());
    EXPECT_EQ(*obs.step_confidences, (std::vector<double>{100.0, 0.0}));
    ASSERT_FALSE(warnings.empty());
    EXPECT_NE(warnings[0].find("clamped"), std::string::npos);
    // The detector stays strict; the clamped values pass its range check.
    EXPECT_NO_THROW(vc_severity(*obs.step_confidences, 40.0));
}

TEST(LlmObserve, ModalityFailureDegradesGracefully) {
    MockEndpoint server([](const json& request, int) {
        const std::string prompt = request.at("messages").back().at("content");
        if (prompt.find("Rate your confidence") != std::string::npos)
            return std::make_pair(200, std::string("I will not rate these."));
        return std::make_pair(200, std::string("Answer: 36"));
    });
    LlmPlant plant(server.config());
    plant.set_warning_handler([](const std::string&) {});
    const ReasoningChain chain = make_chain("q1", {{1, "a"}, {2, "answer is 36"}});
    ModalitySet sc_vc{true, true, false};
    const ModalityObservations obs = plant.observe(question_task(), chain, 3, sc_vc);
    EXPECT_TRUE(obs.has_sc());
    EXPECT_FALSE(obs.has_vc());  // unparseable twice -> dropped
}

TEST(LlmObserve, AllModalitiesFailingAborts) {
    MockEndpoint server([](const json&, int) { return std::make_pair(404, std::string()); });
    LlmPlant plant(server.config());
    plant.set_warning_handler([](const std::string&) {});
    const ReasoningChain chain = make_chain("q1", {{1, "answer is 36"}});
    try {
        plant.observe(question_task(), chain, 2, ModalitySet::sc_only());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::plant_failure);
    }
}

TEST(LlmCorrect, TargetedEditIncludesChainAndInstruction) {
    MockEndpoint server([](const json& request, int) {
        const std::string prompt = request.at("messages").back().at("content");
        EXPECT_NE(prompt.find("Step 1: Six groups of six."), std::string::npos);
        EXPECT_NE(prompt.find("Recompute the calculation in step 2."), std::string::npos);
        return std::make_pair(200, std::string(kGoodSolution));
    });
    LlmPlant plant(server.config());
    const ReasoningChain chain =
        make_chain("q1", {{1, "Six groups of six."}, {2, "Check: 6 * 6 = 39, answer is 39."}});
    ErrorSignal signal;
    signal.error_type = ErrorType::arithmetic;
    signal.severity = 0.5;
    signal.location = 2;
    const ReasoningChain fixed = plant.correct(question_task(), chain, control_law(signal));
    EXPECT_EQ(fixed.final_answer, "36");
}

TEST(LlmCorrect, RegenerateFromKeepsPrefixVerbatim) {
    MockEndpoint server([](const json& request, int) {
        const std::string prompt = request.at("messages").back().at("content");
        EXPECT_NE(prompt.find("Step 1: Six groups of six."), std::string::npos);
        EXPECT_NE(prompt.find("starting from step 2"), std::string::npos);
        return std::make_pair(200,
                              std::string("Step 2: Check: 6 * 6 = 36.\nStep 3: Done.\nAnswer: 36"));
    });
    LlmPlant plant(server.config());
    const ReasoningChain chain = make_chain(
        "q1",
        {{1, "Six groups of six."}, {2, "Check: 6 * 6 = 39."}, {3, "So the answer is 39."}});
    ErrorSignal signal;
    signal.error_type = ErrorType::arithmetic;
    signal.severity = 0.9;  // escalates to regeneration
    signal.location = 2;
    const ReasoningChain fixed = plant.correct(question_task(), chain, control_law(signal));
    ASSERT_EQ(fixed.steps.size(), 3u);
    EXPECT_EQ(fixed.steps[0].text, "Six groups of six.");
    EXPECT_EQ(fixed.steps[1].text, "Check: 6 * 6 = 36.");
    EXPECT_EQ(fixed.final_answer, "36");
}

TEST(LlmCorrect, RegenerateFromStepOneSendsNoPrefix) {
    MockEndpoint server([](const json& request, int) {
        const std::string prompt = request.at("messages").back().at("content");
        EXPECT_EQ(prompt.find("confirmed"), std::string::npos);
        return std::make_pair(200, std::string(kGoodSolution));
    });
    LlmPlant plant(server.config());
    const ReasoningChain chain = make_chain("q1", {{1, "Check: 6 * 6 = 39, answer is 39."}});
    ErrorSignal signal;
    signal.error_type = ErrorType::premise;
    signal.severity = 0.95;
    signal.location = 1;
    const ReasoningChain redo = plant.correct(question_task(), chain, control_law(signal));
    EXPECT_EQ(redo.final_answer, "36");
}

TEST(LlmCorrect, EchoedOutputYieldsZeroSeverityDelta) {
    const ReasoningChain chain =
        make_chain("q1", {{1, "Six groups of six."}, {2, "Check: 6 * 6 = 39, answer is 39."}});
    const std::string echo = llm::render_chain(chain);
    MockEndpoint server([&](const json&, int) { return std::make_pair(200, echo); });
    LlmPlant plant(server.config());
    ErrorSignal signal;
    signal.error_type = ErrorType::arithmetic;
    signal.severity = 0.5;
    signal.location = 2;
    const ReasoningChain next = plant.correct(question_task(), chain, control_law(signal));
    EXPECT_EQ(next, chain);  // identical observations => |delta s| = 0 < epsilon next round
}

TEST(LlmAdapter, CaptureFileMirrorsTraffic) {
    const std::string path = ::testing::TempDir() + "capture.jsonl";
    std::remove(path.c_str());
    {
        MockEndpoint server([](const json&, int) { return std::make_pair(200, kGoodSolution); });
        EndpointConfig cfg = server.config();
        cfg.capture_path = path;
        LlmPlant plant(cfg);
        plant.generate(question_task());
    }
    std::ifstream in(path);
    ASSERT_TRUE(in.good());
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
        const json record = json::parse(line);
        EXPECT_TRUE(record.contains("request"));
        EXPECT_TRUE(record.contains("response"));
        ++lines;
    }
    EXPECT_EQ(lines, 1);
    std::remove(path.c_str());
}

TEST(LlmParsing, FixtureCorpusIsTotal) {
    // Recorded reply shapes; every one either parses or takes the defined
    // retry path (throws parse_failure, never anything else).
    const std::vector<std::string> fixtures = {
        kGoodSolution,
        "step 1: lowercase prefix works\nanswer: 12",
        "Step 1: markdown bullet\n- noise line\nAnswer: 7",
        "> Step 1: quoted\n> Answer: 3",
        "No steps at all, just prose.",
        "Step 1: missing answer line",
        "Step 2: wrong start index\nAnswer: 5",
        "",
    };
    for (const std::string& reply : fixtures) {
        try {
            const ReasoningChain chain = llm::parse_solution("t", reply);
            EXPECT_FALSE(chain.steps.empty());
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), Errc::parse_failure) << reply;
        } catch (...) {
            FAIL() << "non-Error exception for: " << reply;
        }
    }
    const std::vector<std::string> confidence_fixtures = {
        "Step 1: 80\nStep 2: 35",
        "step 1: 100\nstep 2: 0",
        "Step 1: 55",          // missing a step
        "confidence is high",  // no parseable lines
    };
    for (const std::string& reply : confidence_fixtures) {
        try {
            llm::parse_confidences(reply, 2);
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), Errc::parse_failure) << reply;
        }
    }
    EXPECT_EQ(llm::parse_yes_no("Yes."), 1);
    EXPECT_EQ(llm::parse_yes_no(" no"), 0);
    EXPECT_THROW(llm::parse_yes_no("maybe"), Error);
}
