#include <gtest/gtest.h>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cybercorrect/metrics.hpp"
#include "metrics_oracle.hpp"
#include "random_trajectories.hpp"

using namespace cybercorrect;
using json = nlohmann::json;

namespace {

BenchTask task_with(const std::string& id, const std::string& gold, Category cat = Category::MR,
                    std::optional<ErrorAnnotation> annotation = std::nullopt) {
    BenchTask t;
    t.id = id;
    t.category = cat;
    t.question = "q";
    t.gold_answer = normalize_answer(gold);
    if (annotation) {
        t.seeded_chain = make_chain(id, {{1, "step one"}, {2, "answer is 0"}});
        t.annotation = annotation;
    }
    return t;
}

TrajectoryEntry entry_of(int iteration, const std::string& answer,
                         std::optional<double> raw, std::optional<double> accepted) {
    TrajectoryEntry e;
    e.iteration = iteration;
    e.version = ReasoningChain{"", {{1, "answer is " + answer}}, answer};
    e.raw_severity = raw;
    e.accepted_severity = accepted;
    e.accepted_answer = answer;
    e.judge_decision = "continue";
    return e;
}

Trajectory traj_of(const BenchTask& task, const std::vector<std::string>& answers,
                   const std::vector<double>& raw, const std::vector<double>& accepted,
                   Termination reason, const std::string& final_answer) {
    Trajectory t;
    t.task_id = task.id;
    t.method = "cybercorrect";
    t.gold_answer = task.gold_answer;
    t.category = task.category;
    if (task.annotation) t.task_error_type = task.annotation->error_type;
    for (size_t i = 0; i < answers.size(); ++i)
        t.entries.push_back(entry_of(static_cast<int>(i), answers[i], raw[i], accepted[i]));
    t.termination = reason;
    t.final_version = static_cast<int>(answers.size()) - 1;
    t.final_answer = final_answer;
    t.calls.generate = 1;
    return t;
}

// The четырехtask worked set: one converging fix, one rolled-back overshoot,
// one oscillation resolved from the buffer, one clean task.
struct HandExample {
    std::vector<BenchTask> tasks;
    std::vector<Trajectory> trajectories;
};

HandExample hand_example() {
    HandExample ex;
    ex.tasks = {
        task_with("T1", "10", Category::MR, ErrorAnnotation{ErrorType::arithmetic, 2}),
        task_with("T2", "20", Category::LR, ErrorAnnotation{ErrorType::logic_gap, 2}),
        task_with("T3", "a", Category::Comm, ErrorAnnotation{ErrorType::premise, 1}),
        task_with("T4", "40", Category::MS),
    };
    ex.trajectories = {
        traj_of(ex.tasks[0], {"x", "y", "10"}, {0.6, 0.3, 0.28}, {0.6, 0.3, 0.28},
                Termination::converged, "10"),
        traj_of(ex.tasks[1], {"z", "w"}, {0.5, 0.65}, {0.5, 0.5},
                Termination::max_iterations, "z"),
        traj_of(ex.tasks[2], {"b", "a", "b"}, {0.6, 0.4, 0.45}, {0.6, 0.4, 0.4},
                Termination::oscillation, "a"),
        traj_of(ex.tasks[3], {"40"}, {0.1}, {0.1}, Termination::clean, "40"),
    };
    ex.trajectories[2].final_version = 1;
    return ex;
}

}  // namespace

TEST(ComputeMetrics, HandEnumeratedExample) {
    const HandExample ex = hand_example();
    const MetricsReport r = compute_metrics(ex.trajectories, ex.tasks);
    EXPECT_EQ(r.n_tasks, 4);
    EXPECT_DOUBLE_EQ(r.accuracy, 3.0 / 4.0);
    ASSERT_TRUE(r.csr.has_value());
    EXPECT_DOUBLE_EQ(*r.csr, 2.0 / 3.0);  // T1, T3 fixed of the three initially wrong
    EXPECT_DOUBLE_EQ(r.cr, 2.0 / 4.0);    // T1 converged, T4 clean
    EXPECT_DOUBLE_EQ(r.or_rate, 1.0 / 4.0);  // T2's raw jump 0.5 -> 0.65
    EXPECT_DOUBLE_EQ(r.oscr, 1.0 / 4.0);     // T3's b,a,b alternation
    EXPECT_EQ(r.by_category.at("MR").n, 1);
    EXPECT_EQ(r.by_error_type.at("none").n, 1);
    EXPECT_DOUBLE_EQ(r.by_error_type.at("arithmetic").accuracy, 1.0);
    int category_total = 0, type_total = 0;
    for (const auto& [_, g] : r.by_category) category_total += g.n;
    for (const auto& [_, g] : r.by_error_type) type_total += g.n;
    EXPECT_EQ(category_total, r.n_tasks);
    EXPECT_EQ(type_total, r.n_tasks);
}

TEST(ComputeMetrics, OvershootUsesRawSeveritiesByDefault) {
    const HandExample ex = hand_example();
    // T2 overshot raw but was rolled back; accepted severities never jump.
    const MetricsReport raw = compute_metrics(ex.trajectories, ex.tasks, OvershootSource::raw);
    const MetricsReport accepted =
        compute_metrics(ex.trajectories, ex.tasks, OvershootSource::accepted);
    EXPECT_DOUBLE_EQ(raw.or_rate, 0.25);
    EXPECT_DOUBLE_EQ(accepted.or_rate, 0.0);
}

TEST(ComputeMetrics, AllCleanAndCorrect) {
    std::vector<BenchTask> tasks = {task_with("a", "1"), task_with("b", "2")};
    std::vector<Trajectory> trajs = {
        traj_of(tasks[0], {"1"}, {0.0}, {0.0}, Termination::clean, "1"),
        traj_of(tasks[1], {"2"}, {0.0}, {0.0}, Termination::clean, "2"),
    };
    const MetricsReport r = compute_metrics(trajs, tasks);
    EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
    EXPECT_DOUBLE_EQ(r.cr, 1.0);
    EXPECT_DOUBLE_EQ(r.or_rate, 0.0);
    EXPECT_DOUBLE_EQ(r.oscr, 0.0);
    EXPECT_FALSE(r.csr.has_value());  // no initially-wrong task: reported absent
}

TEST(ComputeMetrics, EmptyInputsRejected) {
    EXPECT_THROW(compute_metrics({}, {}), Error);
    std::vector<BenchTask> tasks = {task_with("a", "1")};
    EXPECT_THROW(compute_metrics({}, tasks), Error);
}

TEST(ComputeMetrics, MissingAndMismatchedTrajectories) {
    std::vector<BenchTask> tasks = {task_with("a", "1"), task_with("b", "2")};
    std::vector<Trajectory> one = {traj_of(tasks[0], {"1"}, {0.0}, {0.0}, Termination::clean, "1")};
    EXPECT_THROW(compute_metrics(one, tasks), Error);  // no trajectory for b

    std::vector<Trajectory> stray = {
        traj_of(tasks[0], {"1"}, {0.0}, {0.0}, Termination::clean, "1"),
        traj_of(task_with("ghost", "9"), {"9"}, {0.0}, {0.0}, Termination::clean, "9")};
    EXPECT_THROW(compute_metrics(stray, tasks), Error);

    std::vector<Trajectory> dup = {
        traj_of(tasks[0], {"1"}, {0.0}, {0.0}, Termination::clean, "1"),
        traj_of(tasks[0], {"1"}, {0.0}, {0.0}, Termination::clean, "1")};
    EXPECT_THROW(compute_metrics(dup, tasks), Error);
}

TEST(ComputeMetrics, MatchesOracleOnRandomizedSets) {
    for (std::uint64_t seed = 0; seed < 150; ++seed) {
        const testutil::RandomSet set = testutil::random_trajectory_set(seed);
        const MetricsReport r = compute_metrics(set.trajectories, set.tasks);
        const testutil::OracleMetrics o =
            testutil::oracle_metrics(json(set.tasks), json(set.trajectories));
        ASSERT_EQ(r.n_tasks, o.n);
        ASSERT_EQ(r.accuracy, o.acc) << "seed " << seed;
        ASSERT_EQ(r.csr.has_value(), o.csr.has_value());
        if (r.csr) { ASSERT_EQ(*r.csr, *o.csr); }
        ASSERT_EQ(r.cr, o.cr);
        ASSERT_EQ(r.or_rate, o.orr);
        ASSERT_EQ(r.oscr, o.oscr);
        ASSERT_EQ(r.calls_per_task, o.calls);
    }
}

TEST(Reports, JsonRoundTrip) {
    const HandExample ex = hand_example();
    const MetricsReport r = compute_metrics(ex.trajectories, ex.tasks);
    const std::string encoded = emit_report(r, ReportFormat::json_format);
    const MetricsReport decoded = json::parse(encoded).get<MetricsReport>();
    EXPECT_EQ(decoded, r);
}

TEST(Reports, CsvHeaderAndRows) {
    const HandExample ex = hand_example();
    const MetricsReport r = compute_metrics(ex.trajectories, ex.tasks);
    const std::string csv = emit_report(r, ReportFormat::csv);
    std::istringstream in(csv);
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, kReportCsvHeader);
    int rows = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    // overall + 4 categories + 4 error types
    EXPECT_EQ(rows, 1 + static_cast<int>(r.by_category.size()) +
                        static_cast<int>(r.by_error_type.size()));
}

TEST(Reports, TextTableMatchesGolden) {
    const HandExample ex = hand_example();
    const MetricsReport r = compute_metrics(ex.trajectories, ex.tasks);
    const std::string text = emit_report(r, ReportFormat::text);
    std::ifstream golden(std::string(CYBERCORRECT_DATA_DIR) + "/golden/report_example.txt");
    ASSERT_TRUE(golden.good()) << "golden file missing";
    std::stringstream expected;
    expected << golden.rdbuf();
    EXPECT_EQ(text, expected.str());
}

TEST(LoadTasks, ParsesSampleFile) {
    const std::vector<BenchTask> tasks =
        load_tasks(std::string(CYBERCORRECT_DATA_DIR) + "/sample_tasks.jsonl");
    EXPECT_GE(tasks.size(), 24u);
    int clean = 0, arith = 0, logic = 0, premise = 0;
    std::map<std::string, int> per_category;
    for (const BenchTask& t : tasks) {
        per_category[to_string(t.category)]++;
        if (!t.annotation) {
            ++clean;
            continue;
        }
        switch (t.annotation->error_type) {
            case ErrorType::arithmetic: ++arith; break;
            case ErrorType::logic_gap: ++logic; break;
            case ErrorType::premise: ++premise; break;
            default: break;
        }
    }
    // Minimum coverage: every category x {3 error types + clean}.
    EXPECT_EQ(per_category.size(), 4u);
    EXPECT_GE(clean, 4);
    EXPECT_GE(arith, 4);
    EXPECT_GE(logic, 4);
    EXPECT_GE(premise, 4);
}

TEST(LoadTasks, MispricedItemsSampleTask) {
    const std::vector<BenchTask> tasks =
        load_tasks(std::string(CYBERCORRECT_DATA_DIR) + "/sample_tasks.jsonl");
    const auto it = std::find_if(tasks.begin(), tasks.end(),
                                 [](const BenchTask& t) { return t.id == "mr-arith-1"; });
    ASSERT_NE(it, tasks.end());
    EXPECT_EQ(it->gold_answer, "36");
    ASSERT_TRUE(it->annotation.has_value());
    EXPECT_EQ(it->annotation->error_type, ErrorType::arithmetic);
    ASSERT_TRUE(it->seeded_chain.has_value());
    EXPECT_EQ(it->seeded_chain->final_answer, "48");
}

TEST(LoadTasks, RejectsBadLines) {
    const std::string dir = ::testing::TempDir();
    auto write_and_expect = [&](const std::string& content, Errc code, const char* tag) {
        const std::string path = dir + "tasks_" + tag + ".jsonl";
        std::ofstream out(path);
        out << content;
        out.close();
        try {
            load_tasks(path);
            FAIL() << tag;
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), code) << tag;
            if (code == Errc::schema_error) {
                EXPECT_NE(std::string(e.what()).find(":1:"), std::string::npos) << e.what();
            }
        }
        std::remove(path.c_str());
    };

    write_and_expect("{\"id\":\"a\"}\n", Errc::schema_error, "no_schema_version");
    write_and_expect("not json\n", Errc::schema_error, "not_json");
    write_and_expect(
        R"({"schema_version":1,"id":"a","category":"MR","question":"q","gold_answer":""})"
        "\n",
        Errc::schema_error, "empty_gold");
    write_and_expect(
        R"({"schema_version":1,"id":"a","category":"MR","question":"q","gold_answer":"1","seeded_chain":{"steps":[{"index":1,"text":"answer is 2"}]},"annotation":{"error_type":"arithmetic","location":0}})"
        "\n",
        Errc::schema_error, "location_zero");
    write_and_expect(
        R"({"schema_version":1,"id":"a","category":"MR","question":"q","gold_answer":"1","annotation":{"error_type":"arithmetic","location":1}})"
        "\n",
        Errc::schema_error, "annotation_without_chain");
    write_and_expect(
        R"({"schema_version":1,"id":"a","category":"XX","question":"q","gold_answer":"1"})"
        "\n",
        Errc::schema_error, "bad_category");

    const std::string dup =
        R"({"schema_version":1,"id":"a","category":"MR","question":"q","gold_answer":"1"})"
        "\n"
        R"({"schema_version":1,"id":"a","category":"MR","question":"q","gold_answer":"2"})"
        "\n";
    const std::string path = dir + "tasks_dup.jsonl";
    std::ofstream out(path);
    out << dup;
    out.close();
    try {
        load_tasks(path);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::duplicate_id);
    }
    std::remove(path.c_str());
}

TEST(LoadTasks, NormalizesGoldAndSeededAnswer) {
    const std::string path = ::testing::TempDir() + "tasks_norm.jsonl";
    {
        std::ofstream out(path);
        out << R"({"schema_version":1,"id":"n1","category":"MR","question":"q","gold_answer":"48.0","seeded_chain":{"steps":[{"index":1,"text":"The answer is 32.0 %"}]}})"
            << "\n";
    }
    const std::vector<BenchTask> tasks = load_tasks(path);
    EXPECT_EQ(tasks[0].gold_answer, "48");
    EXPECT_EQ(tasks[0].seeded_chain->final_answer, "32%");
    std::remove(path.c_str());
}

TEST(TrajectoryJson, RoundTripsExactly) {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const testutil::RandomSet set = testutil::random_trajectory_set(seed);
        for (const Trajectory& t : set.trajectories) {
            const json j = t;
            EXPECT_EQ(j.at("schema_version").get<int>(), 1);
            const Trajectory back = j.get<Trajectory>();
            EXPECT_EQ(back, t);
        }
    }
}
