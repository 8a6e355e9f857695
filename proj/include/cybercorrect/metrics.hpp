#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cybercorrect/json_io.hpp"
#include "cybercorrect/task.hpp"
#include "cybercorrect/trajectory.hpp"

namespace cybercorrect {

// ---------------------------------------------------------------------------
// Task loading. Benchmark files are JSONL, one task per line, UTF-8, with a
// mandatory schema_version field.
// ---------------------------------------------------------------------------

inline std::vector<BenchTask> parse_tasks(std::istream& in, const std::string& source) {
    std::vector<BenchTask> tasks;
    std::unordered_set<std::string> ids;
    std::string line;
    int lineno = 0;
    auto fail = [&](const std::string& msg) -> Error {
        return Error(Errc::schema_error, source + ":" + std::to_string(lineno) + ": " + msg);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw fail(std::string("invalid JSON: ") + e.what());
        }
        if (j.value("schema_version", 0) != 1) throw fail("schema_version must be 1");
        BenchTask task;
        try {
            task = j.get<BenchTask>();
        } catch (const json::exception& e) {
            throw fail(e.what());
        } catch (const Error& e) {
            throw fail(e.what());
        }
        if (task.id.empty()) throw fail("task id must be non-empty");
        if (!ids.insert(task.id).second)
            throw Error(Errc::duplicate_id,
                        source + ":" + std::to_string(lineno) + ": duplicate task id " + task.id);
        if (task.gold_answer.empty()) throw fail("gold_answer must be non-empty");
        task.gold_answer = normalize_answer(task.gold_answer);
        if (task.seeded_chain) {
            try {
                *task.seeded_chain =
                    make_chain(task.id, task.seeded_chain->steps, task.seeded_chain->final_answer);
            } catch (const Error& e) {
                throw fail(e.what());
            }
        }
        if (task.annotation) {
            if (task.annotation->error_type == ErrorType::none)
                throw fail("annotation error_type cannot be none");
            if (!task.seeded_chain) throw fail("annotation requires a seeded_chain");
            if (task.annotation->location < 1 ||
                task.annotation->location > static_cast<int>(task.seeded_chain->steps.size()))
                throw fail("annotation location must index a seeded step (1-based)");
        }
        tasks.push_back(std::move(task));
    }
    return tasks;
}

inline std::vector<BenchTask> load_tasks(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io_error, "cannot open task file: " + path);
    return parse_tasks(in, path);
}

// ---------------------------------------------------------------------------
// Metrics.
// ---------------------------------------------------------------------------

// Which severity sequence the overshoot rate scans. Raw (pre-rollback)
// severities are the default: a run that overshoots and rolls back still
// overshot.
enum class OvershootSource { raw, accepted };

struct GroupStats {
    int n = 0;
    double accuracy = 0.0;
    std::optional<double> csr;

    bool operator==(const GroupStats&) const = default;
};

struct MetricsReport {
    int n_tasks = 0;
    double accuracy = 0.0;
    std::optional<double> csr;  // absent when no task was initially incorrect
    double cr = 0.0;
    double or_rate = 0.0;
    double oscr = 0.0;
    double calls_per_task = 0.0;
    std::map<std::string, GroupStats> by_category;
    std::map<std::string, GroupStats> by_error_type;

    bool operator==(const MetricsReport&) const = default;
};

namespace detail {

// True when the trajectory contains a severity jump past delta.
inline bool trajectory_overshoots(const Trajectory& t, OvershootSource source) {
    const double delta = t.params.delta;
    std::optional<double> prev;
    for (const TrajectoryEntry& e : t.entries) {
        const std::optional<double>& s =
            source == OvershootSource::raw ? e.raw_severity : e.accepted_severity;
        if (!s) continue;
        if (prev && *s > *prev + delta) return true;
        prev = s;
    }
    return false;
}

// The oscillation condition over the raw per-iteration answers.
inline bool trajectory_oscillates(const Trajectory& t) {
    for (size_t i = 2; i < t.entries.size(); ++i) {
        const std::string& a = t.entries[i].version.final_answer;
        const std::string& b = t.entries[i - 1].version.final_answer;
        const std::string& c = t.entries[i - 2].version.final_answer;
        if (a == c && a != b) return true;
    }
    return false;
}

struct GroupAccumulator {
    int n = 0;
    int correct = 0;
    int initially_wrong = 0;
    int corrected = 0;

    GroupStats finish() const {
        GroupStats g;
        g.n = n;
        g.accuracy = n > 0 ? static_cast<double>(correct) / n : 0.0;
        if (initially_wrong > 0)
            g.csr = static_cast<double>(corrected) / initially_wrong;
        return g;
    }
};

}  // namespace detail

inline MetricsReport compute_metrics(const std::vector<Trajectory>& trajectories,
                                     const std::vector<BenchTask>& tasks,
                                     OvershootSource or_source = OvershootSource::raw) {
    if (tasks.empty() || trajectories.empty())
        throw Error(Errc::missing_trajectory, "cannot compute metrics over an empty set");
    std::unordered_map<std::string, const BenchTask*> by_id;
    for (const BenchTask& t : tasks) by_id[t.id] = &t;

    std::unordered_set<std::string> seen;
    int correct = 0, initially_wrong = 0, corrected = 0, converged = 0, overshot = 0,
        oscillated = 0;
    long long total_calls = 0;
    std::map<std::string, detail::GroupAccumulator> by_category;
    std::map<std::string, detail::GroupAccumulator> by_error_type;

    for (const Trajectory& traj : trajectories) {
        auto it = by_id.find(traj.task_id);
        if (it == by_id.end())
            throw Error(Errc::task_mismatch, "trajectory for unknown task " + traj.task_id);
        if (!seen.insert(traj.task_id).second)
            throw Error(Errc::task_mismatch, "multiple trajectories for task " + traj.task_id);
        const BenchTask& task = *it->second;
        if (traj.entries.empty())
            throw Error(Errc::missing_trajectory, "empty trajectory for task " + traj.task_id);

        const bool is_correct = traj.final_answer == task.gold_answer;
        const bool was_wrong = traj.entries.front().version.final_answer != task.gold_answer;
        const bool did_converge = counts_as_converged(traj.termination);
        const bool did_overshoot = detail::trajectory_overshoots(traj, or_source);
        const bool did_oscillate = detail::trajectory_oscillates(traj);

        correct += is_correct;
        initially_wrong += was_wrong;
        corrected += was_wrong && is_correct;
        converged += did_converge;
        overshot += did_overshoot;
        oscillated += did_oscillate;
        total_calls += traj.calls.total();

        const std::string type_key =
            task.annotation ? to_string(task.annotation->error_type) : "none";
        for (auto* acc : {&by_category[to_string(task.category)], &by_error_type[type_key]}) {
            acc->n += 1;
            acc->correct += is_correct;
            acc->initially_wrong += was_wrong;
            acc->corrected += was_wrong && is_correct;
        }
    }

    for (const BenchTask& t : tasks) {
        if (!seen.count(t.id))
            throw Error(Errc::missing_trajectory, "no trajectory for task " + t.id);
    }

    const int n = static_cast<int>(trajectories.size());
    MetricsReport report;
    report.n_tasks = n;
    report.accuracy = static_cast<double>(correct) / n;
    if (initially_wrong > 0) report.csr = static_cast<double>(corrected) / initially_wrong;
    report.cr = static_cast<double>(converged) / n;
    report.or_rate = static_cast<double>(overshot) / n;
    report.oscr = static_cast<double>(oscillated) / n;
    report.calls_per_task = static_cast<double>(total_calls) / n;
    for (const auto& [key, acc] : by_category) report.by_category[key] = acc.finish();
    for (const auto& [key, acc] : by_error_type) report.by_error_type[key] = acc.finish();
    return report;
}

// ---------------------------------------------------------------------------
// Report emission.
// ---------------------------------------------------------------------------

inline void to_json(json& j, const GroupStats& g) {
    j = json{{"n", g.n}, {"accuracy", g.accuracy}};
    j["csr"] = g.csr ? json(*g.csr) : json(nullptr);
}
inline void from_json(const json& j, GroupStats& g) {
    j.at("n").get_to(g.n);
    j.at("accuracy").get_to(g.accuracy);
    if (j.contains("csr") && !j.at("csr").is_null()) g.csr = j.at("csr").get<double>();
}

inline void to_json(json& j, const MetricsReport& r) {
    j = json{{"n_tasks", r.n_tasks},
             {"accuracy", r.accuracy},
             {"cr", r.cr},
             {"or_rate", r.or_rate},
             {"oscr", r.oscr},
             {"calls_per_task", r.calls_per_task},
             {"by_category", r.by_category},
             {"by_error_type", r.by_error_type}};
    j["csr"] = r.csr ? json(*r.csr) : json(nullptr);
}
inline void from_json(const json& j, MetricsReport& r) {
    j.at("n_tasks").get_to(r.n_tasks);
    j.at("accuracy").get_to(r.accuracy);
    j.at("cr").get_to(r.cr);
    j.at("or_rate").get_to(r.or_rate);
    j.at("oscr").get_to(r.oscr);
    j.at("calls_per_task").get_to(r.calls_per_task);
    if (j.contains("csr") && !j.at("csr").is_null()) r.csr = j.at("csr").get<double>();
    if (j.contains("by_category"))
        r.by_category = j.at("by_category").get<std::map<std::string, GroupStats>>();
    if (j.contains("by_error_type"))
        r.by_error_type = j.at("by_error_type").get<std::map<std::string, GroupStats>>();
}

enum class ReportFormat { json_format, csv, text };

namespace detail {

inline std::string pct(double v) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(1) << v * 100.0;
    return out.str();
}

inline std::string pct_or_dash(const std::optional<double>& v) {
    return v ? pct(*v) : std::string("---");
}

inline std::string fixed2(double v) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(2) << v;
    return out.str();
}

}  // namespace detail

inline constexpr const char* kReportCsvHeader =
    "scope,group,n,accuracy,csr,cr,or_rate,oscr,calls_per_task";

// Renders a report as machine JSON, CSV, or an aligned text table. The text
// and CSV forms show rates as percentages with one decimal; JSON keeps raw
// fractions. Clean-gate terminations are counted into CR (noted in the
// rendered output); CSR is blank when no task was initially incorrect.
inline std::string emit_report(const MetricsReport& report, ReportFormat format) {
    if (format == ReportFormat::json_format) {
        return json(report).dump();
    }
    if (format == ReportFormat::csv) {
        std::ostringstream out;
        out << kReportCsvHeader << "\n";
        auto csv_csr = [](const std::optional<double>& v) {
            return v ? detail::pct(*v) : std::string();
        };
        out << "overall,all," << report.n_tasks << "," << detail::pct(report.accuracy) << ","
            << csv_csr(report.csr) << "," << detail::pct(report.cr) << ","
            << detail::pct(report.or_rate) << "," << detail::pct(report.oscr) << ","
            << detail::fixed2(report.calls_per_task) << "\n";
        for (const auto& [key, g] : report.by_category)
            out << "category," << key << "," << g.n << "," << detail::pct(g.accuracy) << ","
                << csv_csr(g.csr) << ",,,,\n";
        for (const auto& [key, g] : report.by_error_type)
            out << "error_type," << key << "," << g.n << "," << detail::pct(g.accuracy) << ","
                << csv_csr(g.csr) << ",,,,\n";
        return out.str();
    }
    std::ostringstream out;
    out << "tasks: " << report.n_tasks << "  calls/task: " << detail::fixed2(report.calls_per_task)
        << "\n";
    out << "  Acc    CSR    CR     OR     OscR\n";
    auto cell = [](const std::string& s) {
        std::ostringstream c;
        c << std::left << std::setw(7) << s;
        return c.str();
    };
    out << "  " << cell(detail::pct(report.accuracy)) << cell(detail::pct_or_dash(report.csr))
        << cell(detail::pct(report.cr)) << cell(detail::pct(report.or_rate))
        << cell(detail::pct(report.oscr)) << "\n";
    out << "  (CR counts convergence-test and clean-gate terminations)\n";
    auto group_line = [&](const std::string& key, const GroupStats& g) {
        out << "    " << std::left << std::setw(12) << key << "n=" << std::setw(5) << std::left
            << g.n << " acc=" << cell(detail::pct(g.accuracy))
            << "csr=" << detail::pct_or_dash(g.csr) << "\n";
    };
    out << "  by category:\n";
    for (const auto& [key, g] : report.by_category) group_line(key, g);
    out << "  by error type:\n";
    for (const auto& [key, g] : report.by_error_type) group_line(key, g);
    return out.str();
}

// Side-by-side comparison across methods; column order Acc, CSR, CR, OR, OscR.
inline std::string render_comparison(
    const std::vector<std::pair<std::string, MetricsReport>>& rows) {
    std::ostringstream out;
    out << std::left << std::setw(22) << "Method" << std::right << std::setw(7) << "Acc"
        << std::setw(7) << "CSR" << std::setw(7) << "CR" << std::setw(7) << "OR" << std::setw(7)
        << "OscR" << std::setw(12) << "Calls/Task" << "\n";
    for (const auto& [method, r] : rows) {
        out << std::left << std::setw(22) << method << std::right << std::setw(7)
            << detail::pct(r.accuracy) << std::setw(7) << detail::pct_or_dash(r.csr)
            << std::setw(7) << detail::pct(r.cr) << std::setw(7) << detail::pct(r.or_rate)
            << std::setw(7) << detail::pct(r.oscr) << std::setw(12)
            << detail::fixed2(r.calls_per_task) << "\n";
    }
    return out.str();
}

}  // namespace cybercorrect
