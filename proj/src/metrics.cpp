#include "predloop/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "predloop/csv.hpp"

namespace predloop {

double ade(const Trajectory& pred, const Trajectory& truth) {
    if (pred.size() != truth.size())
        throw std::invalid_argument("ade: trajectory length mismatch");
    if (pred.empty()) throw std::invalid_argument("ade: empty trajectories");
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) sum += (pred[i] - truth[i]).norm();
    return sum / static_cast<double>(pred.size());
}

double fde(const Trajectory& pred, const Trajectory& truth) {
    if (pred.size() != truth.size())
        throw std::invalid_argument("fde: trajectory length mismatch");
    if (pred.empty()) throw std::invalid_argument("fde: empty trajectories");
    return (pred.back() - truth.back()).norm();
}

namespace {

Trajectory truncate(const Trajectory& t, std::size_t n) {
    return Trajectory(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(n));
}

}  // namespace

double min_ade(const PredictionSet& pred_set, const Trajectory& truth) {
    if (pred_set.modes.empty()) throw std::invalid_argument("min_ade: no modes");
    double best = std::numeric_limits<double>::infinity();
    for (const Trajectory& mode : pred_set.modes) {
        const std::size_t n = std::min(mode.size(), truth.size());
        best = std::min(best, ade(truncate(mode, n), truncate(truth, n)));
    }
    return best;
}

double min_fde(const PredictionSet& pred_set, const Trajectory& truth) {
    if (pred_set.modes.empty()) throw std::invalid_argument("min_fde: no modes");
    double best = std::numeric_limits<double>::infinity();
    for (const Trajectory& mode : pred_set.modes) {
        const std::size_t n = std::min(mode.size(), truth.size());
        best = std::min(best, fde(truncate(mode, n), truncate(truth, n)));
    }
    return best;
}

double dynamic_prediction_error(const EpisodeLog& log, DynamicMetric metric,
                                const DynamicFilters& filters) {
    if (log.predictions.empty())
        throw InsufficientDataError("dynamic_prediction_error: log contains no predictions");
    const int stride = log.stride();

    // closest_k filter: per issue tick, keep the k subjects nearest the ego.
    std::set<std::pair<int, int>> kept;  // (tick, agent)
    if (filters.closest_k) {
        std::map<int, std::vector<std::pair<double, int>>> by_tick;
        for (const LoggedPrediction& p : log.predictions)
            by_tick[p.issue_tick].push_back({p.ego_distance, p.agent_id});
        for (auto& [tick, v] : by_tick) {
            std::sort(v.begin(), v.end());
            const std::size_t keep = std::min<std::size_t>(
                v.size(), static_cast<std::size_t>(std::max(0, *filters.closest_k)));
            for (std::size_t i = 0; i < keep; ++i) kept.insert({tick, v[i].second});
        }
    }

    double sum = 0.0;
    long pairs = 0;
    std::set<int> qualifying_ticks;
    for (const LoggedPrediction& p : log.predictions) {
        if (filters.full_observation_only && !p.complete_history) continue;
        if (filters.closest_k && kept.find({p.issue_tick, p.agent_id}) == kept.end()) continue;

        Trajectory realized;
        for (int j = 1; j <= kPredictionFrames; ++j) {
            const auto pos = log.position_at(p.issue_tick + j * stride, p.agent_id);
            if (!pos) break;
            realized.push_back(*pos);
        }
        if (realized.empty()) continue;
        // Score over the realized overlap; FDE uses the last available frame.
        const std::size_t n = realized.size();
        const PredictionSet& ps = p.prediction;
        const Trajectory& first_mode = ps.modes[static_cast<std::size_t>(ps.best_mode())];
        double value = 0.0;
        switch (metric) {
            case DynamicMetric::ade:
                value = ade(truncate(first_mode, n), realized);
                break;
            case DynamicMetric::fde:
                value = fde(truncate(first_mode, n), realized);
                break;
            case DynamicMetric::min_ade:
                value = min_ade(ps, realized);
                break;
            case DynamicMetric::min_fde:
                value = min_fde(ps, realized);
                break;
        }
        sum += value;
        ++pairs;
        qualifying_ticks.insert(p.issue_tick);
    }
    if (static_cast<int>(qualifying_ticks.size()) < 20) {
        throw InsufficientDataError(
            "dynamic_prediction_error: fewer than 20 qualifying ticks (got " +
            std::to_string(qualifying_ticks.size()) + ")");
    }
    return sum / static_cast<double>(pairs);
}

double safety_rate(const EpisodeLog& log, const SafetyMode& mode) {
    if (log.num_ticks() < 1) throw std::invalid_argument("safety_rate: empty log");
    long violations = 0;
    for (const auto& row : log.ticks) {
        const AgentState& ego = row[0];
        bool violated = false;
        for (std::size_t i = 1; i < row.size() && !violated; ++i) {
            if (mode.kind == SafetyMode::Kind::distance_threshold) {
                violated = obb_distance(ego.box(), row[i].box()) < mode.epsilon;
            } else {
                violated = obb_intersect(ego.box().with_length_buffer(mode.buffer),
                                         row[i].box().with_length_buffer(mode.buffer));
            }
        }
        if (violated) ++violations;
    }
    return static_cast<double>(violations) / static_cast<double>(log.num_ticks());
}

double avg_speed(const EpisodeLog& log) {
    if (log.num_ticks() < 1) throw std::invalid_argument("avg_speed: empty log");
    double sum = 0.0;
    for (const auto& row : log.ticks) sum += row[0].speed;
    return sum / static_cast<double>(log.num_ticks());
}

double mean_jerk(const EpisodeLog& log) {
    const int n = log.num_ticks();
    if (n < 3) throw std::invalid_argument("mean_jerk: need at least 3 ticks");
    const double dt = log.dt_sim();
    std::vector<double> accel;
    accel.reserve(static_cast<std::size_t>(n - 1));
    for (int t = 0; t + 1 < n; ++t) {
        accel.push_back((log.ticks[static_cast<std::size_t>(t + 1)][0].speed -
                         log.ticks[static_cast<std::size_t>(t)][0].speed) /
                        dt);
    }
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < accel.size(); ++i) sum += std::abs(accel[i + 1] - accel[i]) / dt;
    return sum / static_cast<double>(accel.size() - 1);
}

namespace {

NormalizationSpec::Entry make_entry(const char* name, bool higher_better, double lo, double hi) {
    NormalizationSpec::Entry e;
    e.metric = name;
    e.higher_better = higher_better;
    e.p_min = lo;
    e.p_max = hi;
    e.degenerate = !(hi > lo);
    return e;
}

double normalize_one(double v, const NormalizationSpec::Entry& e) {
    if (e.degenerate) return 1.0;
    const double t = (v - e.p_min) / (e.p_max - e.p_min);
    return e.higher_better ? t : 1.0 - t;
}

}  // namespace

NormalizedCohort normalize_cohort(const std::vector<MetricRow>& rows) {
    if (rows.size() < 2) throw std::invalid_argument("normalize_cohort: need at least 2 rows");
    double s_lo = rows[0].safety_raw, s_hi = rows[0].safety_raw;
    double e_lo = rows[0].efficiency_raw, e_hi = rows[0].efficiency_raw;
    double c_lo = rows[0].comfort_raw, c_hi = rows[0].comfort_raw;
    for (const MetricRow& r : rows) {
        s_lo = std::min(s_lo, r.safety_raw);
        s_hi = std::max(s_hi, r.safety_raw);
        e_lo = std::min(e_lo, r.efficiency_raw);
        e_hi = std::max(e_hi, r.efficiency_raw);
        c_lo = std::min(c_lo, r.comfort_raw);
        c_hi = std::max(c_hi, r.comfort_raw);
    }
    NormalizedCohort out;
    out.spec.safety = make_entry("safety", false, s_lo, s_hi);
    out.spec.efficiency = make_entry("efficiency", true, e_lo, e_hi);
    out.spec.comfort = make_entry("comfort", false, c_lo, c_hi);
    out.rows.reserve(rows.size());
    for (const MetricRow& r : rows) {
        NormalizedRow n;
        n.safety = normalize_one(r.safety_raw, out.spec.safety);
        n.efficiency = normalize_one(r.efficiency_raw, out.spec.efficiency);
        n.comfort = normalize_one(r.comfort_raw, out.spec.comfort);
        out.rows.push_back(n);
    }
    return out;
}

double driving_performance(const NormalizedRow& row) {
    return (row.safety + row.efficiency + row.comfort) / 3.0;
}

const char* kMetricRowHeader =
    "scenario_id,predictor_id,planner_id,safety_raw,efficiency_raw,comfort_raw,"
    "dynamic_ade,dynamic_fde,dynamic_min_ade,dynamic_min_fde,"
    "dynamic_ade_closest,dynamic_fde_closest,dynamic_ade_fullobs,dynamic_fde_fullobs";

namespace {

std::string opt_to_csv(const std::optional<double>& v) { return v ? fmt_g9(*v) : std::string(); }

std::optional<double> opt_from_csv(const std::string& s, const char* what) {
    if (s.empty()) return std::nullopt;
    return parse_double(s, what);
}

}  // namespace

std::string metric_row_to_csv(const MetricRow& r) {
    std::string line = r.scenario_id + ',' + r.predictor_id + ',' + r.planner_id + ',' +
                       fmt_g9(r.safety_raw) + ',' + fmt_g9(r.efficiency_raw) + ',' +
                       fmt_g9(r.comfort_raw);
    for (const auto* v : {&r.dynamic_ade, &r.dynamic_fde, &r.dynamic_min_ade, &r.dynamic_min_fde,
                          &r.dynamic_ade_closest, &r.dynamic_fde_closest, &r.dynamic_ade_fullobs,
                          &r.dynamic_fde_fullobs}) {
        line += ',';
        line += opt_to_csv(*v);
    }
    return line;
}

MetricRow metric_row_from_csv(const std::string& line) {
    const auto f = split_csv_line(line);
    if (f.size() != 14) throw std::runtime_error("metric row: expected 14 fields");
    MetricRow r;
    r.scenario_id = f[0];
    r.predictor_id = f[1];
    r.planner_id = f[2];
    r.safety_raw = parse_double(f[3], "safety_raw");
    r.efficiency_raw = parse_double(f[4], "efficiency_raw");
    r.comfort_raw = parse_double(f[5], "comfort_raw");
    r.dynamic_ade = opt_from_csv(f[6], "dynamic_ade");
    r.dynamic_fde = opt_from_csv(f[7], "dynamic_fde");
    r.dynamic_min_ade = opt_from_csv(f[8], "dynamic_min_ade");
    r.dynamic_min_fde = opt_from_csv(f[9], "dynamic_min_fde");
    r.dynamic_ade_closest = opt_from_csv(f[10], "dynamic_ade_closest");
    r.dynamic_fde_closest = opt_from_csv(f[11], "dynamic_fde_closest");
    r.dynamic_ade_fullobs = opt_from_csv(f[12], "dynamic_ade_fullobs");
    r.dynamic_fde_fullobs = opt_from_csv(f[13], "dynamic_fde_fullobs");
    return r;
}

void write_metric_rows(const std::vector<MetricRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << kMetricRowHeader << '\n';
    for (const MetricRow& r : rows) out << metric_row_to_csv(r) << '\n';
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<MetricRow> read_metric_rows(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty metric rows file: " + path);
    std::vector<MetricRow> rows;
    while (std::getline(in, line)) {
        if (!line.empty()) rows.push_back(metric_row_from_csv(line));
    }
    return rows;
}

}  // namespace predloop
