#pragma once

#include <optional>
#include <string>
#include <vector>

#include "predloop/world.hpp"

namespace predloop {

/// Mean pointwise Euclidean distance between equal-length trajectories.
double ade(const Trajectory& pred, const Trajectory& truth);

/// Final-point Euclidean distance.
double fde(const Trajectory& pred, const Trajectory& truth);

/// Minimum ADE / FDE over the prediction modes (truth truncates each mode to
/// its own length).
double min_ade(const PredictionSet& pred_set, const Trajectory& truth);
double min_fde(const PredictionSet& pred_set, const Trajectory& truth);

enum class DynamicMetric : int { ade, fde, min_ade, min_fde };

struct DynamicFilters {
    std::optional<int> closest_k;      // keep only the k agents nearest the ego at issue time
    bool full_observation_only = false;
};

class InsufficientDataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Closed-loop prediction error: every logged PredictionSet is scored against
/// the realized future of its subject in the log (over the available overlap,
/// at prediction-frame cadence) and averaged over qualifying (tick, agent)
/// pairs. Fewer than 20 qualifying ticks is an error.
double dynamic_prediction_error(const EpisodeLog& log, DynamicMetric metric,
                                const DynamicFilters& filters = {});

struct SafetyMode {
    enum class Kind { distance_threshold, buffered_obb } kind = Kind::distance_threshold;
    double epsilon = 1.0;  // m, box-to-box distance threshold
    double buffer = 0.3;   // m, length-direction box buffer
};

/// Fraction of logged ticks on which the ego violates the safety criterion
/// against any exo-agent.
double safety_rate(const EpisodeLog& log, const SafetyMode& mode);

/// Mean ego speed over all logged ticks.
double avg_speed(const EpisodeLog& log);

/// Mean |jerk| of the ego from first differences of speed; needs >= 3 ticks.
double mean_jerk(const EpisodeLog& log);

struct MetricRow {
    std::string scenario_id;
    std::string predictor_id;
    std::string planner_id;
    double safety_raw = 0.0;      // collision rate in [0, 1], lower is better
    double efficiency_raw = 0.0;  // m/s, higher is better
    double comfort_raw = 0.0;     // mean |jerk| m/s^3, lower is better
    std::optional<double> dynamic_ade, dynamic_fde, dynamic_min_ade, dynamic_min_fde;
    std::optional<double> dynamic_ade_closest, dynamic_fde_closest;
    std::optional<double> dynamic_ade_fullobs, dynamic_fde_fullobs;
};

struct NormalizationSpec {
    struct Entry {
        std::string metric;
        double p_min = 0.0;
        double p_max = 0.0;
        bool higher_better = false;
        bool degenerate = false;  // p_max == p_min; everyone maps to 1.0
    };
    Entry safety, efficiency, comfort;
};

struct NormalizedRow {
    double safety = 1.0;
    double efficiency = 1.0;
    double comfort = 1.0;
};

struct NormalizedCohort {
    std::vector<NormalizedRow> rows;
    NormalizationSpec spec;
};

/// Min-max normalization over the cohort: efficiency maps up, safety and
/// comfort flip so that higher is better; a degenerate metric maps everyone to
/// 1.0 and is flagged.
NormalizedCohort normalize_cohort(const std::vector<MetricRow>& rows);

/// Mean of the three normalized components.
double driving_performance(const NormalizedRow& row);

// MetricRow CSV (fixed columns, 9 significant digits; absent dynamic metrics
// serialize as empty fields).
extern const char* kMetricRowHeader;
std::string metric_row_to_csv(const MetricRow& row);
MetricRow metric_row_from_csv(const std::string& line);
void write_metric_rows(const std::vector<MetricRow>& rows, const std::string& path);
std::vector<MetricRow> read_metric_rows(const std::string& path);

}  // namespace predloop
