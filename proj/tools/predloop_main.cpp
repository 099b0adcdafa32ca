#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "predloop/experiment.hpp"

namespace fs = std::filesystem;
using namespace predloop;

namespace {

int cmd_run(const std::string& config_path, const std::string& out_dir) {
    const ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
    const ExperimentResult result = run_experiment(cfg, out_dir);
    std::cout << "predictors: " << result.results.size() << ", rows: " << result.rows.size()
              << ", failures: " << result.failures.size() << '\n';
    std::cout << "outputs under " << out_dir << '\n';
    return 0;
}

int cmd_replay(const std::string& prefix) {
    std::string p = prefix;
    const std::string suffix = "_meta.json";
    if (p.size() > suffix.size() && p.substr(p.size() - suffix.size()) == suffix)
        p = p.substr(0, p.size() - suffix.size());
    else if (p.size() > 4 && p.substr(p.size() - 4) == ".csv")
        p = p.substr(0, p.size() - 4);
    const EpisodeLog log = read_episode_files(p);
    if (replay_matches(log)) {
        std::cout << "verified: " << p << " (" << log.num_ticks() << " ticks, "
                  << log.decisions.size() << " decisions)\n";
        return 0;
    }
    std::cerr << "replay mismatch: " << p << '\n';
    return 2;
}

int cmd_analyze(const std::string& rows_path, const std::string& out_dir) {
    const std::vector<MetricRow> rows = read_metric_rows(rows_path);
    const ExperimentResult result = analyze_rows(rows);
    emit_report(result, out_dir);
    std::cout << "analyzed " << rows.size() << " rows, " << result.results.size()
              << " predictors; outputs under " << out_dir << '\n';
    return 0;
}

int cmd_dbbuild(const std::vector<std::string>& log_prefixes, const std::string& out_path) {
    std::vector<EpisodeLog> logs;
    logs.reserve(log_prefixes.size());
    for (std::string p : log_prefixes) {
        const std::string suffix = "_meta.json";
        if (p.size() > suffix.size() && p.substr(p.size() - suffix.size()) == suffix)
            p = p.substr(0, p.size() - suffix.size());
        else if (p.size() > 4 && p.substr(p.size() - 4) == ".csv")
            p = p.substr(0, p.size() - 4);
        logs.push_back(read_episode_files(p));
    }
    std::vector<const EpisodeLog*> ptrs;
    ptrs.reserve(logs.size());
    for (const EpisodeLog& l : logs) ptrs.push_back(&l);
    const TrajectoryDatabase db = build_database(ptrs);
    db.save_csv(out_path);
    std::cout << "database with " << db.size() << " entries written to " << out_path << '\n';
    return 0;
}

int cmd_report(const std::string& dir) {
    ExperimentResult result;
    result.rows = read_metric_rows((fs::path(dir) / "rows.csv").string());
    ExperimentResult recomputed = analyze_rows(result.rows);
    recomputed.failures = {};
    emit_report(recomputed, dir);
    std::cout << "report regenerated under " << dir << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"closed-loop evaluation workbench for trajectory predictors"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", rows_path, prefix, db_out = "db.csv", report_dir;
    std::vector<std::string> log_prefixes;

    auto* run = app.add_subcommand("run", "run an experiment from a config file");
    run->add_option("config", config_path, "experiment config (JSON)")->required();
    run->add_option("--out", out_dir, "output directory");

    auto* replay = app.add_subcommand("replay", "re-simulate a log and verify it");
    replay->add_option("log", prefix, "episode log prefix (or its .csv / _meta.json path)")
        ->required();

    auto* analyze = app.add_subcommand("analyze", "metrics and correlations from metric rows");
    analyze->add_option("rows", rows_path, "rows.csv produced by run")->required();
    analyze->add_option("--out", out_dir, "output directory");

    auto* dbbuild = app.add_subcommand("dbbuild", "build a KNN trajectory database from logs");
    dbbuild->add_option("logs", log_prefixes, "episode log prefixes")->required();
    dbbuild->add_option("--out", db_out, "database CSV path");

    auto* report = app.add_subcommand("report", "regenerate reports from rows.csv in a directory");
    report->add_option("dir", report_dir, "directory holding rows.csv")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 1;
    }

    try {
        if (run->parsed()) return cmd_run(config_path, out_dir);
        if (replay->parsed()) return cmd_replay(prefix);
        if (analyze->parsed()) return cmd_analyze(rows_path, out_dir);
        if (dbbuild->parsed()) return cmd_dbbuild(log_prefixes, db_out);
        if (report->parsed()) return cmd_report(report_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
