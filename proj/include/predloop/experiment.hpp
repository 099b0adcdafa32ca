#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "predloop/despot.hpp"
#include "predloop/metrics.hpp"
#include "predloop/rvo.hpp"
#include "predloop/stats.hpp"
#include "predloop/world.hpp"

namespace predloop {

struct PredictorSpec {
    std::string id;
    std::string type;  // cv | ca | knn | sknn | noisy_oracle
    double sigma = 0.0;
    std::optional<double> latency;  // overrides the type default
    std::optional<double> static_ade;  // declared dataset-accuracy label
    int k = 6;
    std::string database;  // trajectory database path for knn/sknn
};

struct ExperimentConfig {
    std::string planner = "rvo";  // rvo | despot
    BudgetMode mode = BudgetMode::fixed_time;
    double tick_rate = 30.0;           // fixed_time: must be 30, 3 or 1 (0 = unconstrained)
    long prediction_count = 500;       // fixed_predictions: calls per decision
    int scenarios_per_predictor = 50;
    std::uint64_t base_seed = 1;
    std::vector<MapTemplate> map_templates{MapTemplate::mixed};
    SafetyMode safety;
    int n_exo = 15;
    int horizon_ticks = 1000;
    double ego_path_length = 60.0;
    double ego_start_speed = 0.0;
    TickConfig sim;  // dt, stride, lookahead, wheelbase, buffers
    RvoPlanConfig rvo;
    DespotConfig despot;
    RewardConfig reward;
    int closest_k = 3;
    std::vector<PredictorSpec> predictors;
    bool keep_logs = false;  // retain logs in memory (tests)

    static ExperimentConfig from_json(const std::string& text);
    static ExperimentConfig from_file(const std::string& path);
    std::string to_json() const;
};

struct ResultRow {
    std::string predictor_id;
    int n_scenarios = 0;
    int n_failed = 0;
    std::optional<double> mean_dynamic_ade, mean_dynamic_fde;
    std::optional<double> mean_dynamic_min_ade, mean_dynamic_min_fde;
    std::optional<double> mean_dynamic_ade_closest, mean_dynamic_fde_closest;
    std::optional<double> mean_dynamic_ade_fullobs, mean_dynamic_fde_fullobs;
    double mean_driving_performance = 0.0;
    double mean_safety_norm = 0.0;
    double mean_efficiency_norm = 0.0;
    double mean_comfort_norm = 0.0;
    double mean_fallback_fraction = 0.0;
    double declared_latency = 0.0;
    std::optional<double> static_ade_label;
};

struct FailureRecord {
    std::string predictor_id;
    std::string scenario_id;
    std::string error;
};

struct ExperimentResult {
    std::vector<MetricRow> rows;         // per (predictor, scenario), sorted
    std::vector<ResultRow> results;      // per predictor
    std::vector<CorrelationReport> correlations;
    std::vector<FailureRecord> failures;
    std::vector<EpisodeLog> logs;        // only when config.keep_logs
};

std::unique_ptr<Predictor> make_predictor(const PredictorSpec& spec);
std::unique_ptr<Planner> make_planner(const ExperimentConfig& cfg);

/// Deterministic scenario seed for index i; identical across predictors so
/// comparisons are paired.
std::uint64_t scenario_seed(std::uint64_t base_seed, int index);

/// Run every predictor over the paired scenario set in a worker pool
/// (PREDLOOP_THREADS overrides the width; results never depend on it), score
/// each episode, normalize the whole cohort, aggregate per predictor and
/// correlate against driving performance. Episode logs are written under
/// out_dir/logs/<predictor>/<scenario>* when out_dir is nonempty.
ExperimentResult run_experiment(const ExperimentConfig& config, const std::string& out_dir = "");

/// Per-predictor aggregation + correlations from existing metric rows (the
/// `analyze` entry point).
ExperimentResult analyze_rows(const std::vector<MetricRow>& rows);

/// Write results.csv, correlations.csv, scatter.csv and summary.txt.
void emit_report(const ExperimentResult& result, const std::string& out_dir);

extern const char* kResultRowHeader;
extern const char* kCorrelationHeader;
void write_result_rows(const std::vector<ResultRow>& rows, const std::string& path);
void write_correlations(const std::vector<CorrelationReport>& reports, const std::string& path);
std::vector<ResultRow> read_result_rows(const std::string& path);
std::vector<CorrelationReport> read_correlations(const std::string& path);

int worker_thread_count();

}  // namespace predloop
