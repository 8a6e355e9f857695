#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "cybercorrect/json_io.hpp"
#include "cybercorrect/llm_adapter.hpp"
#include "cybercorrect/loop.hpp"
#include "cybercorrect/metrics.hpp"
#include "cybercorrect/rng.hpp"
#include "cybercorrect/sim_plant.hpp"

namespace cybercorrect::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitPartialFailure = 2;
inline constexpr int kExitIo = 3;

// Merged view of everything a run needs. Loadable from a single JSON config
// file; command-line flags override file values.
struct CliConfig {
    std::string plant = "sim";  // sim | llm
    std::vector<std::string> methods = {"cybercorrect"};
    Hyperparameters params;
    std::uint64_t seed = 0;
    int jobs = 1;
    std::string tasks_path;
    std::string question;  // inline one-off task (run only)
    std::string out_path;
    std::string report_out;
    std::string report_format = "text";  // text | json | csv
    std::string templates_path;
    std::string sweep;            // e.g. "sigma=0.2,0.3,0.4,0.5"
    std::string or_severities = "raw";  // raw | accepted
    std::string iter_csv_path;
    bool log_timing = false;  // wall-clock timestamps break byte-determinism; opt in
    SimPlantConfig sim;
    EndpointConfig endpoint;
};

inline void to_json(json& j, const CliConfig& c) {
    j = json{{"plant", c.plant},
             {"methods", c.methods},
             {"params", c.params},
             {"seed", c.seed},
             {"jobs", c.jobs},
             {"tasks", c.tasks_path},
             {"out", c.out_path},
             {"report_out", c.report_out},
             {"report_format", c.report_format},
             {"templates", c.templates_path},
             {"or_severities", c.or_severities},
             {"log_timing", c.log_timing},
             {"sim", c.sim},
             {"endpoint", c.endpoint}};
}
inline void from_json(const json& j, CliConfig& c) {
    c.plant = j.value("plant", c.plant);
    if (j.contains("methods")) j.at("methods").get_to(c.methods);
    if (j.contains("params")) j.at("params").get_to(c.params);
    c.seed = j.value("seed", c.seed);
    c.jobs = j.value("jobs", c.jobs);
    c.tasks_path = j.value("tasks", c.tasks_path);
    c.out_path = j.value("out", c.out_path);
    c.report_out = j.value("report_out", c.report_out);
    c.report_format = j.value("report_format", c.report_format);
    c.templates_path = j.value("templates", c.templates_path);
    c.or_severities = j.value("or_severities", c.or_severities);
    c.log_timing = j.value("log_timing", c.log_timing);
    if (j.contains("sim")) j.at("sim").get_to(c.sim);
    if (j.contains("endpoint")) j.at("endpoint").get_to(c.endpoint);
}

inline CliConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io_error, "cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw Error(Errc::config_invalid, path + ": " + e.what());
    }
    CliConfig c;
    j.get_to(c);
    return c;
}

namespace detail {

inline ReportFormat report_format_of(const std::string& name) {
    if (name == "json") return ReportFormat::json_format;
    if (name == "csv") return ReportFormat::csv;
    if (name == "text") return ReportFormat::text;
    throw Error(Errc::config_invalid, "unknown report format: " + name);
}

inline OvershootSource or_source_of(const std::string& name) {
    if (name == "raw") return OvershootSource::raw;
    if (name == "accepted") return OvershootSource::accepted;
    throw Error(Errc::config_invalid, "or_severities must be raw or accepted");
}

inline std::uint64_t task_seed(std::uint64_t global_seed, const std::string& task_id) {
    return mix(global_seed, fnv1a(task_id));
}

inline std::vector<Method> parse_methods(const std::vector<std::string>& names) {
    std::vector<std::string> expanded;
    for (const std::string& n : names) {
        if (n == "all") {
            expanded.insert(expanded.end(),
                            {"cybercorrect", "cybercorrect_lite", "no_correction", "naive_retry",
                             "self_refine_generic", "self_consistency"});
        } else {
            expanded.push_back(n);
        }
    }
    std::vector<Method> out;
    for (const std::string& n : expanded) out.push_back(method_from_string(n));
    return out;
}

struct RunResult {
    Trajectory trajectory;
    bool failed = false;
};

// One task under one method. Simulated runs get a fresh plant keyed by the
// per-task seed so results are independent of scheduling; live runs share
// the adapter.
inline RunResult run_one(const BenchTask& task, Method method, const CliConfig& config,
                         LlmPlant* shared_llm, const TemplateSet& templates) {
    RunConfig rc;
    rc.method = method;
    rc.params = config.params;
    rc.seed = task_seed(config.seed, task.id);
    rc.templates = templates;

    std::unique_ptr<SimPlant> sim;
    Plant* plant = shared_llm;
    if (!plant) {
        SimPlantConfig sim_config = config.sim;
        sim_config.seed = rc.seed;
        sim = std::make_unique<SimPlant>(sim_config);
        plant = sim.get();
    }

    // Per-run token deltas are only attributable when runs are sequential.
    const bool track_tokens = shared_llm && config.jobs <= 1;
    const std::int64_t tokens_before = track_tokens ? shared_llm->tokens_used() : 0;

    RunResult result;
    try {
        result.trajectory = run_method(task, *plant, rc);
    } catch (const PlantRunFailure& e) {
        result.trajectory = e.partial();
        result.failed = true;
    } catch (const Error& e) {
        // Anything else is still a per-task failure, never a process abort.
        result.trajectory = cybercorrect::detail::start_trajectory(task, rc.effective());
        result.trajectory.termination = Termination::plant_failure;
        result.trajectory.failure_message = e.what();
        result.failed = true;
    }
    if (track_tokens)
        result.trajectory.calls.tokens = shared_llm->tokens_used() - tokens_before;
    return result;
}

class TrajectorySink {
public:
    explicit TrajectorySink(const std::string& path, const json& config_echo, bool log_timing)
        : config_echo_(config_echo), log_timing_(log_timing) {
        if (path.empty()) return;
        out_.open(path, std::ios::trunc);
        if (!out_) throw Error(Errc::io_error, "cannot open output file: " + path);
    }

    void write(const Trajectory& trajectory) {
        if (!out_.is_open()) return;
        json line = trajectory;
        line["config"] = config_echo_;
        if (log_timing_) {
            const auto now = std::chrono::system_clock::now().time_since_epoch();
            line["logged_at_ms"] =
                std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
        }
        std::scoped_lock lock(mutex_);
        out_ << line.dump() << "\n";
    }

private:
    std::ofstream out_;
    json config_echo_;
    bool log_timing_;
    std::mutex mutex_;
};

// Runs every task under one method; tasks execute concurrently up to `jobs`,
// trajectories are written in completion order (task order when jobs == 1).
inline std::vector<Trajectory> run_population(const std::vector<BenchTask>& tasks, Method method,
                                              const CliConfig& config, LlmPlant* shared_llm,
                                              const TemplateSet& templates, TrajectorySink& sink,
                                              bool& any_failure, bool print_summaries) {
    std::vector<Trajectory> results(tasks.size());
    std::atomic<size_t> next{0};
    std::atomic<bool> failed{false};
    std::mutex print_mutex;
    auto worker = [&] {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            RunResult r = run_one(tasks[i], method, config, shared_llm, templates);
            if (r.failed) failed = true;
            sink.write(r.trajectory);
            if (print_summaries) {
                std::scoped_lock lock(print_mutex);
                std::cout << "task " << tasks[i].id << " [" << to_string(method)
                          << "]: answer=" << r.trajectory.final_answer
                          << " termination=" << to_string(r.trajectory.termination)
                          << " iterations=" << r.trajectory.entries.size() - 1
                          << " calls=" << r.trajectory.calls.total() << "\n";
            }
            results[i] = std::move(r.trajectory);
        }
    };
    const int jobs = std::max(1, config.jobs);
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failed) any_failure = true;
    return results;
}

inline std::vector<BenchTask> gather_tasks(const CliConfig& config) {
    if (!config.tasks_path.empty() && !config.question.empty())
        throw Error(Errc::config_invalid, "give either a task file or an inline question");
    if (!config.tasks_path.empty()) return load_tasks(config.tasks_path);
    if (!config.question.empty()) {
        BenchTask task;
        task.id = "inline-1";
        task.category = Category::MR;
        task.question = config.question;
        return {task};
    }
    throw Error(Errc::config_invalid, "no tasks: pass --tasks <file> or --question <text>");
}

inline std::unique_ptr<LlmPlant> make_llm_plant(const CliConfig& config) {
    if (config.plant == "sim") return nullptr;
    if (config.plant != "llm")
        throw Error(Errc::config_invalid, "plant must be sim or llm");
    const char* key = std::getenv(config.endpoint.api_key_env.c_str());
    if (!key || std::string(key).empty())
        throw Error(Errc::config_invalid,
                    "API key environment variable " + config.endpoint.api_key_env +
                        " is not set; no requests were sent");
    auto plant = std::make_unique<LlmPlant>(config.endpoint);
    plant->set_warning_handler([](const std::string& w) { std::cerr << "warning: " << w << "\n"; });
    return plant;
}

inline TemplateSet load_templates(const CliConfig& config) {
    return config.templates_path.empty() ? TemplateSet::defaults()
                                         : TemplateSet::load(config.templates_path);
}

// Tasks reconstructed from trajectory logs: the logs carry gold answers,
// categories, and annotation types, so reports need no task file.
inline std::vector<BenchTask> tasks_from_logs(const std::vector<Trajectory>& trajectories) {
    std::vector<BenchTask> tasks;
    for (const Trajectory& t : trajectories) {
        BenchTask task;
        task.id = t.task_id;
        task.category = t.category;
        task.gold_answer = t.gold_answer;
        if (t.task_error_type) task.annotation = ErrorAnnotation{*t.task_error_type, 1};
        tasks.push_back(std::move(task));
    }
    return tasks;
}

inline void write_report_out(const std::string& path,
                             const std::map<std::string, MetricsReport>& reports) {
    if (path.empty()) return;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(Errc::io_error, "cannot open report file: " + path);
    out << json(reports).dump(2) << "\n";
}

inline std::string per_iteration_csv(const std::map<std::string, std::vector<Trajectory>>& runs) {
    std::ostringstream out;
    out << "method,iteration,accuracy,n\n";
    for (const auto& [method, trajectories] : runs) {
        int t_max = 0;
        for (const Trajectory& t : trajectories) t_max = std::max(t_max, t.params.t_max);
        for (int iter = 0; iter <= t_max; ++iter) {
            int correct = 0;
            for (const Trajectory& t : trajectories) {
                const size_t at = std::min(static_cast<size_t>(iter), t.entries.size() - 1);
                correct += t.entries[at].accepted_answer == t.gold_answer;
            }
            out << method << "," << iter << ","
                << static_cast<double>(correct) / trajectories.size() << "," << trajectories.size()
                << "\n";
        }
    }
    return out.str();
}

struct SweepSpec {
    std::string name;
    std::vector<double> values;
};

inline SweepSpec parse_sweep(const std::string& spec) {
    const size_t eq = spec.find('=');
    if (eq == std::string::npos)
        throw Error(Errc::config_invalid, "sweep must look like name=v1,v2,...");
    SweepSpec out;
    out.name = spec.substr(0, eq);
    std::istringstream values(spec.substr(eq + 1));
    std::string token;
    while (std::getline(values, token, ','))
        out.values.push_back(std::stod(token));
    if (out.values.empty()) throw Error(Errc::config_invalid, "sweep has no values");
    return out;
}

inline void apply_sweep_value(Hyperparameters& params, const std::string& name, double value) {
    if (name == "K")
        params.K = static_cast<int>(value);
    else if (name == "phi")
        params.phi = value;
    else if (name == "sigma")
        params.sigma = value;
    else if (name == "epsilon")
        params.epsilon = value;
    else if (name == "delta")
        params.delta = value;
    else if (name == "t_max")
        params.t_max = static_cast<int>(value);
    else
        throw Error(Errc::config_invalid, "unknown sweep parameter: " + name);
}

inline std::string suffixed_path(const std::string& path, const std::string& suffix) {
    if (path.empty()) return path;
    const size_t dot = path.rfind('.');
    if (dot == std::string::npos || path.find('/', dot) != std::string::npos)
        return path + suffix;
    return path.substr(0, dot) + suffix + path.substr(dot);
}

}  // namespace detail

// --- run: one method over the tasks, trajectory JSONL out, summary lines ---
inline int cmd_run(const CliConfig& config) {
    config.params.validate();
    if (config.methods.size() != 1)
        throw Error(Errc::config_invalid, "run takes exactly one --method");
    const Method method = method_from_string(config.methods[0]);
    const std::vector<BenchTask> tasks = detail::gather_tasks(config);
    const TemplateSet templates = detail::load_templates(config);
    std::unique_ptr<LlmPlant> llm = detail::make_llm_plant(config);

    detail::TrajectorySink sink(config.out_path, json(config), config.log_timing);
    bool any_failure = false;
    detail::run_population(tasks, method, config, llm.get(), templates, sink, any_failure, true);
    return any_failure ? kExitPartialFailure : kExitOk;
}

// --- bench: every method over every task under a shared seed schedule ------
inline int cmd_bench(const CliConfig& config) {
    config.params.validate();
    const std::vector<Method> methods = detail::parse_methods(config.methods);
    if (methods.empty()) throw Error(Errc::config_invalid, "no methods given");
    const std::vector<BenchTask> tasks = detail::gather_tasks(config);
    const TemplateSet templates = detail::load_templates(config);
    std::unique_ptr<LlmPlant> llm = detail::make_llm_plant(config);
    const OvershootSource or_source = detail::or_source_of(config.or_severities);

    std::vector<std::pair<std::string, double>> sweep_points{{"", 0.0}};
    if (!config.sweep.empty()) {
        const detail::SweepSpec spec = detail::parse_sweep(config.sweep);
        sweep_points.clear();
        for (double v : spec.values) sweep_points.emplace_back(spec.name, v);
    }

    bool any_failure = false;
    for (const auto& [sweep_name, sweep_value] : sweep_points) {
        CliConfig point = config;
        std::string label;
        if (!sweep_name.empty()) {
            detail::apply_sweep_value(point.params, sweep_name, sweep_value);
            std::ostringstream tag;
            tag << "." << sweep_name << "=" << sweep_value;
            label = tag.str();
            std::cout << "== sweep " << sweep_name << " = " << sweep_value << "\n";
        }
        detail::TrajectorySink sink(detail::suffixed_path(point.out_path, label), json(point),
                                    point.log_timing);

        std::map<std::string, MetricsReport> reports;
        std::vector<std::pair<std::string, MetricsReport>> rows;
        std::map<std::string, std::vector<Trajectory>> all_runs;
        for (Method method : methods) {
            std::vector<Trajectory> trajectories = detail::run_population(
                tasks, method, point, llm.get(), templates, sink, any_failure, false);
            const MetricsReport report = compute_metrics(trajectories, tasks, or_source);
            reports[to_string(method)] = report;
            rows.emplace_back(to_string(method), report);
            all_runs[to_string(method)] = std::move(trajectories);
            std::cout << "## " << to_string(method) << "\n"
                      << emit_report(report, detail::report_format_of(point.report_format))
                      << "\n";
        }
        std::cout << render_comparison(rows) << "\n";
        detail::write_report_out(detail::suffixed_path(point.report_out, label), reports);
        if (!point.iter_csv_path.empty()) {
            std::ofstream csv(detail::suffixed_path(point.iter_csv_path, label), std::ios::trunc);
            if (!csv) throw Error(Errc::io_error, "cannot open " + point.iter_csv_path);
            csv << detail::per_iteration_csv(all_runs);
        }
    }
    return any_failure ? kExitPartialFailure : kExitOk;
}

// --- report: recompute metrics from trajectory logs alone ------------------
inline int cmd_report(const CliConfig& config, const std::vector<std::string>& files) {
    if (files.empty()) throw Error(Errc::config_invalid, "report needs trajectory files");
    std::map<std::string, std::vector<Trajectory>> by_method;
    for (const std::string& path : files) {
        std::ifstream in(path);
        if (!in) throw Error(Errc::io_error, "cannot open trajectory file: " + path);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            try {
                Trajectory t = json::parse(line).get<Trajectory>();
                by_method[t.method].push_back(std::move(t));
            } catch (const json::exception& e) {
                throw Error(Errc::schema_error,
                            path + ":" + std::to_string(lineno) + ": " + e.what());
            }
        }
    }
    if (by_method.empty()) throw Error(Errc::schema_error, "no trajectories found");
    const OvershootSource or_source = detail::or_source_of(config.or_severities);

    std::map<std::string, MetricsReport> reports;
    std::vector<std::pair<std::string, MetricsReport>> rows;
    for (const auto& [method, trajectories] : by_method) {
        const MetricsReport report =
            compute_metrics(trajectories, detail::tasks_from_logs(trajectories), or_source);
        reports[method] = report;
        rows.emplace_back(method, report);
        std::cout << "## " << method << "\n"
                  << emit_report(report, detail::report_format_of(config.report_format)) << "\n";
    }
    std::cout << render_comparison(rows) << "\n";
    detail::write_report_out(config.report_out, reports);
    if (!config.iter_csv_path.empty()) {
        std::ofstream csv(config.iter_csv_path, std::ios::trunc);
        if (!csv) throw Error(Errc::io_error, "cannot open " + config.iter_csv_path);
        csv << detail::per_iteration_csv(by_method);
    }
    return kExitOk;
}

inline int dispatch(const std::string& command, const CliConfig& config,
                    const std::vector<std::string>& report_files) {
    try {
        if (command == "run") return cmd_run(config);
        if (command == "bench") return cmd_bench(config);
        if (command == "report") return cmd_report(config, report_files);
        throw Error(Errc::config_invalid, "unknown command: " + command);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        switch (e.code()) {
            case Errc::io_error: return kExitIo;
            default: return kExitConfig;
        }
    }
}

inline int main(int argc, char** argv) {
    CLI::App app{"Closed-loop self-correction engine: typed error detection, targeted "
                 "correction, convergence-judged iteration"};
    app.require_subcommand(1);

    // A config file provides defaults; explicit flags override it.
    CliConfig config;
    std::string config_path;
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--config") config_path = argv[i + 1];
    }
    if (!config_path.empty()) {
        try {
            config = load_config_file(config_path);
        } catch (const Error& e) {
            std::cerr << "error: " << e.what() << "\n";
            return e.code() == Errc::io_error ? kExitIo : kExitConfig;
        }
    }

    std::string config_path_sink;
    std::vector<std::string> report_files;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path_sink, "JSON config file (already applied)");
        cmd->add_option("--plant", config.plant, "plant backend: sim | llm");
        cmd->add_option("--seed", config.seed, "global seed");
        cmd->add_option("--jobs", config.jobs, "parallel tasks (1 = fully deterministic output order)");
        cmd->add_option("--tasks", config.tasks_path, "task file (JSONL)");
        cmd->add_option("--out", config.out_path, "trajectory JSONL output path");
        cmd->add_option("--report-out", config.report_out, "write reports as JSON to this path");
        cmd->add_option("--report-format", config.report_format, "text | json | csv");
        cmd->add_option("--templates", config.templates_path, "correction template file");
        cmd->add_option("--or-severities", config.or_severities,
                        "overshoot rate severity source: raw | accepted");
        cmd->add_flag("--log-timing", config.log_timing,
                      "include wall-clock timestamps in logs (breaks byte determinism)");
        cmd->add_option("--K", config.params.K, "self-consistency samples");
        cmd->add_option("--phi", config.params.phi, "confidence flag threshold [0,100]");
        cmd->add_option("--sigma", config.params.sigma, "detection threshold [0,1]");
        cmd->add_option("--epsilon", config.params.epsilon, "convergence tolerance");
        cmd->add_option("--delta", config.params.delta, "overshoot margin");
        cmd->add_option("--t-max", config.params.t_max, "max correction iterations");
        cmd->add_option("--w1", config.params.weights.w1, "self-consistency weight");
        cmd->add_option("--w2", config.params.weights.w2, "verbalized-confidence weight");
        cmd->add_option("--w3", config.params.weights.w3, "logic-chain weight");
        cmd->add_option("--sim-noise", config.sim.observation_noise, "confidence jitter stddev");
        cmd->add_option("--sim-fix-matched", config.sim.fix_probability_matched,
                        "fix probability for type-matched corrections");
        cmd->add_option("--sim-fix-generic", config.sim.fix_probability_generic,
                        "fix probability for generic corrections");
        cmd->add_option("--sim-overshoot", config.sim.overshoot_probability,
                        "probability a correction injects a new error");
        cmd->add_option("--sim-oscillation", config.sim.oscillation_bias,
                        "probability a failed correction reverts to a prior answer");
        cmd->add_option("--base-url", config.endpoint.base_url, "chat-completions base URL");
        cmd->add_option("--model", config.endpoint.model_name, "model name");
        cmd->add_option("--api-key-env", config.endpoint.api_key_env,
                        "environment variable holding the API key");
        cmd->add_option("--sample-temperature", config.endpoint.sample_temperature,
                        "temperature for the K draws");
        cmd->add_option("--max-retries", config.endpoint.max_retries,
                        "transport retries per request");
        cmd->add_option("--timeout", config.endpoint.request_timeout_s,
                        "request timeout in seconds");
        cmd->add_option("--capture", config.endpoint.capture_path,
                        "mirror raw endpoint traffic to this file");
    };

    CLI::App* run = app.add_subcommand("run", "run one method over tasks");
    add_common(run);
    run->add_option("--method", config.methods,
                    "method: cybercorrect | cybercorrect_lite | no_correction | naive_retry | "
                    "self_refine_generic | self_consistency")
        ->expected(1);
    run->add_option("--question", config.question, "inline question instead of a task file");

    CLI::App* bench = app.add_subcommand("bench", "compare methods over a task file");
    add_common(bench);
    bench->add_option("--methods", config.methods, "methods to compare, or 'all'")->delimiter(',');
    bench->add_option("--sweep", config.sweep, "hyperparameter sweep, e.g. sigma=0.2,0.3,0.4");

    CLI::App* report = app.add_subcommand("report", "recompute metrics from trajectory logs");
    report->add_option("files", report_files, "trajectory JSONL files")->required();
    report->add_option("--config", config_path_sink, "JSON config file (already applied)");
    report->add_option("--report-format", config.report_format, "text | json | csv");
    report->add_option("--report-out", config.report_out, "write reports as JSON to this path");
    report->add_option("--or-severities", config.or_severities, "raw | accepted");
    report->add_option("--iter-csv", config.iter_csv_path, "per-iteration accuracy CSV path");
    bench->add_option("--iter-csv", config.iter_csv_path, "per-iteration accuracy CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    }

    const std::string command =
        run->parsed() ? "run" : (bench->parsed() ? "bench" : "report");
    return dispatch(command, config, report_files);
}

}  // namespace cybercorrect::cli
