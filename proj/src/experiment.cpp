#include "predloop/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "predloop/csv.hpp"

namespace predloop {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void maybe(const ordered_json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
    const ordered_json j = ordered_json::parse(text);
    ExperimentConfig cfg;

    if (j.contains("experiment")) {
        const auto& e = j.at("experiment");
        maybe(e, "planner", cfg.planner);
        if (e.contains("mode")) cfg.mode = budget_mode_from_name(e.at("mode").get<std::string>());
        maybe(e, "tick_rate", cfg.tick_rate);
        maybe(e, "prediction_count", cfg.prediction_count);
        maybe(e, "scenarios_per_predictor", cfg.scenarios_per_predictor);
        maybe(e, "base_seed", cfg.base_seed);
        maybe(e, "n_exo", cfg.n_exo);
        maybe(e, "horizon_ticks", cfg.horizon_ticks);
        maybe(e, "ego_path_length", cfg.ego_path_length);
        maybe(e, "ego_start_speed", cfg.ego_start_speed);
        if (e.contains("map_templates")) {
            cfg.map_templates.clear();
            for (const auto& t : e.at("map_templates"))
                cfg.map_templates.push_back(map_template_from_name(t.get<std::string>()));
        }
        if (e.contains("safety_mode")) {
            const std::string m = e.at("safety_mode").get<std::string>();
            if (m == "distance_threshold") cfg.safety.kind = SafetyMode::Kind::distance_threshold;
            else if (m == "buffered_obb") cfg.safety.kind = SafetyMode::Kind::buffered_obb;
            else throw std::invalid_argument("unknown safety_mode: " + m);
        }
        maybe(e, "epsilon", cfg.safety.epsilon);
        maybe(e, "safety_buffer", cfg.safety.buffer);
    }
    if (cfg.scenarios_per_predictor < 1)
        throw std::invalid_argument("scenarios_per_predictor must be >= 1");
    if (cfg.mode == BudgetMode::fixed_time && cfg.tick_rate != 0.0 && cfg.tick_rate != 30.0 &&
        cfg.tick_rate != 3.0 && cfg.tick_rate != 1.0) {
        throw std::invalid_argument("fixed_time tick_rate must be 30, 3 or 1 Hz (0 = unconstrained)");
    }
    if (cfg.map_templates.empty()) throw std::invalid_argument("map_templates must be nonempty");

    if (j.contains("sim")) {
        const auto& s = j.at("sim");
        maybe(s, "dt", cfg.sim.dt_sim);
        maybe(s, "predictor_stride", cfg.sim.predictor_stride);
        maybe(s, "lookahead", cfg.sim.lookahead);
        maybe(s, "wheelbase", cfg.sim.wheelbase);
        maybe(s, "max_steer", cfg.sim.max_steer);
        maybe(s, "collision_buffer", cfg.sim.collision_buffer);
    }
    if (j.contains("planner")) {
        const auto& p = j.at("planner");
        if (p.contains("rvo")) {
            const auto& r = p.at("rvo");
            maybe(r, "v_max", cfg.rvo.v_max);
            if (r.contains("candidate_count")) {
                // Square polar grid closest to the requested count.
                const int count = r.at("candidate_count").get<int>();
                const int side = std::max(1, static_cast<int>(std::lround(std::sqrt(count))));
                cfg.rvo.candidate_dirs = side;
                cfg.rvo.candidate_speeds = side;
            }
            maybe(r, "candidate_dirs", cfg.rvo.candidate_dirs);
            maybe(r, "candidate_speeds", cfg.rvo.candidate_speeds);
            maybe(r, "time_horizon", cfg.rvo.time_horizon);
            maybe(r, "max_accel", cfg.rvo.max_accel);
        }
        if (p.contains("despot")) {
            const auto& d = p.at("despot");
            maybe(d, "scenarios", cfg.despot.scenarios);
            maybe(d, "max_depth", cfg.despot.max_depth);
            maybe(d, "noise_sigma", cfg.despot.noise_sigma);
            maybe(d, "particles", cfg.despot.particles);
            maybe(d, "rollout_horizon", cfg.despot.rollout_horizon);
            maybe(d, "max_expansions", cfg.despot.max_expansions);
            maybe(d, "node_overhead", cfg.despot.node_overhead);
            maybe(d, "sigma_obs", cfg.despot.sigma_obs);
            maybe(d, "gamma", cfg.reward.gamma);
        }
    }
    if (j.contains("metrics")) {
        maybe(j.at("metrics"), "closest_k", cfg.closest_k);
    }
    if (j.contains("predictors")) {
        for (const auto& p : j.at("predictors")) {
            PredictorSpec spec;
            spec.type = p.at("type").get<std::string>();
            spec.id = p.contains("id") ? p.at("id").get<std::string>() : spec.type;
            maybe(p, "sigma", spec.sigma);
            if (p.contains("latency")) spec.latency = p.at("latency").get<double>();
            if (p.contains("static_ade")) spec.static_ade = p.at("static_ade").get<double>();
            maybe(p, "k", spec.k);
            maybe(p, "database", spec.database);
            cfg.predictors.push_back(std::move(spec));
        }
    }
    if (cfg.predictors.empty()) throw std::invalid_argument("config needs at least one predictor");
    return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

std::string ExperimentConfig::to_json() const {
    ordered_json e;
    e["planner"] = planner;
    e["mode"] = budget_mode_name(mode);
    e["tick_rate"] = tick_rate;
    e["prediction_count"] = prediction_count;
    e["scenarios_per_predictor"] = scenarios_per_predictor;
    e["base_seed"] = base_seed;
    e["n_exo"] = n_exo;
    e["horizon_ticks"] = horizon_ticks;
    e["ego_path_length"] = ego_path_length;
    e["ego_start_speed"] = ego_start_speed;
    ordered_json templates = ordered_json::array();
    for (MapTemplate t : map_templates) templates.push_back(map_template_name(t));
    e["map_templates"] = templates;
    e["safety_mode"] = safety.kind == SafetyMode::Kind::distance_threshold ? "distance_threshold"
                                                                           : "buffered_obb";
    e["epsilon"] = safety.epsilon;
    e["safety_buffer"] = safety.buffer;

    ordered_json preds = ordered_json::array();
    for (const PredictorSpec& p : predictors) {
        ordered_json pj;
        pj["id"] = p.id;
        pj["type"] = p.type;
        pj["sigma"] = p.sigma;
        if (p.latency) pj["latency"] = *p.latency;
        if (p.static_ade) pj["static_ade"] = *p.static_ade;
        pj["k"] = p.k;
        if (!p.database.empty()) pj["database"] = p.database;
        preds.push_back(pj);
    }

    ordered_json j;
    j["experiment"] = e;
    j["sim"] = ordered_json{{"dt", sim.dt_sim},
                            {"predictor_stride", sim.predictor_stride},
                            {"lookahead", sim.lookahead},
                            {"wheelbase", sim.wheelbase},
                            {"max_steer", sim.max_steer},
                            {"collision_buffer", sim.collision_buffer}};
    j["planner"] = ordered_json{
        {"rvo",
         ordered_json{{"v_max", rvo.v_max},
                      {"candidate_count", rvo.candidate_count()},
                      {"candidate_dirs", rvo.candidate_dirs},
                      {"candidate_speeds", rvo.candidate_speeds},
                      {"time_horizon", rvo.time_horizon},
                      {"max_accel", rvo.max_accel}}},
        {"despot",
         ordered_json{{"scenarios", despot.scenarios},
                      {"max_depth", despot.max_depth},
                      {"noise_sigma", despot.noise_sigma},
                      {"particles", despot.particles},
                      {"rollout_horizon", despot.rollout_horizon},
                      {"max_expansions", despot.max_expansions},
                      {"node_overhead", despot.node_overhead},
                      {"sigma_obs", despot.sigma_obs},
                      {"gamma", reward.gamma}}}};
    j["metrics"] = ordered_json{{"closest_k", closest_k}};
    j["predictors"] = preds;
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// Factories
// ---------------------------------------------------------------------------

std::unique_ptr<Predictor> make_predictor(const PredictorSpec& spec) {
    if (spec.type == "cv") return std::make_unique<CvPredictor>();
    if (spec.type == "ca") return std::make_unique<CaPredictor>();
    if (spec.type == "noisy_oracle") {
        return std::make_unique<NoisyOraclePredictor>(spec.id, spec.sigma,
                                                      spec.latency.value_or(0.001));
    }
    if (spec.type == "knn" || spec.type == "sknn") {
        if (spec.database.empty())
            throw std::invalid_argument(spec.type + " predictor needs a database path");
        auto db = std::make_shared<TrajectoryDatabase>(TrajectoryDatabase::load_csv(spec.database));
        if (spec.type == "knn")
            return std::make_unique<KnnPredictor>(std::move(db), spec.k,
                                                  spec.latency.value_or(0.224));
        return std::make_unique<SknnPredictor>(std::move(db), spec.k,
                                               spec.latency.value_or(0.248));
    }
    throw std::invalid_argument("unknown predictor type: " + spec.type);
}

namespace {

/// Wraps a base predictor so a per-spec latency override sticks.
class LatencyOverride final : public Predictor {
public:
    LatencyOverride(std::unique_ptr<Predictor> base, std::string id, double latency)
        : base_(std::move(base)), id_(std::move(id)), latency_(latency) {}
    std::string name() const override { return id_; }
    double latency() const override { return latency_; }
    int min_history_frames() const override { return base_->min_history_frames(); }
    bool needs_script() const override { return base_->needs_script(); }
    PredictionSet predict(const History& h, const std::vector<Vec2>& n,
                          const PredictContext& ctx) const override {
        PredictionSet ps = base_->predict(h, n, ctx);
        ps.virtual_latency = latency_;
        return ps;
    }

private:
    std::unique_ptr<Predictor> base_;
    std::string id_;
    double latency_;
};

std::unique_ptr<Predictor> make_named_predictor(const PredictorSpec& spec) {
    auto base = make_predictor(spec);
    const double latency = spec.latency.value_or(base->latency());
    return std::make_unique<LatencyOverride>(std::move(base), spec.id, latency);
}

}  // namespace

std::unique_ptr<Planner> make_planner(const ExperimentConfig& cfg) {
    if (cfg.planner == "rvo") return std::make_unique<RvoPlanner>(cfg.rvo);
    if (cfg.planner == "despot") return std::make_unique<DespotPlanner>(cfg.despot, cfg.reward);
    throw std::invalid_argument("unknown planner: " + cfg.planner);
}

std::uint64_t scenario_seed(std::uint64_t base_seed, int index) {
    return derive_seed(base_seed, stream_tags::kScenarioSeed, static_cast<std::uint64_t>(index));
}

int worker_thread_count() {
    if (const char* env = std::getenv("PREDLOOP_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return std::min(n, 64);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return static_cast<int>(std::clamp(hw, 1u, 8u));
}

// ---------------------------------------------------------------------------
// run_experiment
// ---------------------------------------------------------------------------

namespace {

struct EpisodeScore {
    MetricRow row;
    double fallback_fraction = 0.0;
    bool failed = false;
    std::string error;
    EpisodeLog log;  // only populated when keeping logs
    bool has_log = false;
};

std::string scenario_name(int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%03d", index);
    return buf;
}

std::optional<double> try_dynamic(const EpisodeLog& log, DynamicMetric metric,
                                  const DynamicFilters& filters) {
    try {
        return dynamic_prediction_error(log, metric, filters);
    } catch (const InsufficientDataError&) {
        return std::nullopt;
    }
}

MetricRow score_episode(const EpisodeLog& log, const ExperimentConfig& cfg,
                        const std::string& scenario_id, const std::string& predictor_id) {
    MetricRow row;
    row.scenario_id = scenario_id;
    row.predictor_id = predictor_id;
    row.planner_id = cfg.planner;
    row.safety_raw = safety_rate(log, cfg.safety);
    row.efficiency_raw = avg_speed(log);
    row.comfort_raw = mean_jerk(log);
    row.dynamic_ade = try_dynamic(log, DynamicMetric::ade, {});
    row.dynamic_fde = try_dynamic(log, DynamicMetric::fde, {});
    row.dynamic_min_ade = try_dynamic(log, DynamicMetric::min_ade, {});
    row.dynamic_min_fde = try_dynamic(log, DynamicMetric::min_fde, {});
    DynamicFilters closest;
    closest.closest_k = cfg.closest_k;
    row.dynamic_ade_closest = try_dynamic(log, DynamicMetric::ade, closest);
    row.dynamic_fde_closest = try_dynamic(log, DynamicMetric::fde, closest);
    DynamicFilters fullobs;
    fullobs.full_observation_only = true;
    row.dynamic_ade_fullobs = try_dynamic(log, DynamicMetric::ade, fullobs);
    row.dynamic_fde_fullobs = try_dynamic(log, DynamicMetric::fde, fullobs);
    return row;
}

struct MeanAcc {
    double sum = 0.0;
    int n = 0;
    void add(const std::optional<double>& v) {
        if (v) {
            sum += *v;
            ++n;
        }
    }
    std::optional<double> mean() const {
        if (n == 0) return std::nullopt;
        return sum / n;
    }
};

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, const std::string& out_dir) {
    const int n_pred = static_cast<int>(config.predictors.size());
    const int n_scen = config.scenarios_per_predictor;

    std::vector<std::unique_ptr<Predictor>> predictors;
    predictors.reserve(static_cast<std::size_t>(n_pred));
    for (const PredictorSpec& spec : config.predictors)
        predictors.push_back(make_named_predictor(spec));

    TickConfig tick_cfg = config.sim;
    tick_cfg.mode = config.mode;
    tick_cfg.tick_rate = config.tick_rate;
    tick_cfg.prediction_count = config.prediction_count;

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        for (const PredictorSpec& spec : config.predictors)
            fs::create_directories(fs::path(out_dir) / "logs" / spec.id);
    }

    const int n_tasks = n_pred * n_scen;
    std::vector<EpisodeScore> scores(static_cast<std::size_t>(n_tasks));
    std::atomic<int> next{0};
    const bool keep_logs = config.keep_logs;

    auto worker = [&]() {
        for (;;) {
            const int task = next.fetch_add(1);
            if (task >= n_tasks) return;
            const int pi = task / n_scen;
            const int si = task % n_scen;
            EpisodeScore& score = scores[static_cast<std::size_t>(task)];
            const std::string sid = scenario_name(si);
            try {
                ScenarioSpec spec;
                spec.seed = scenario_seed(config.base_seed, si);
                spec.map_template =
                    config.map_templates[static_cast<std::size_t>(si) % config.map_templates.size()];
                spec.n_exo = config.n_exo;
                spec.horizon_ticks = config.horizon_ticks;
                spec.ego_path_length = config.ego_path_length;
                spec.ego_start_speed = config.ego_start_speed;
                const Scenario scenario = generate_scenario(spec);
                auto planner = make_planner(config);
                EpisodeLog log = run_episode(scenario, *planner,
                                             *predictors[static_cast<std::size_t>(pi)], tick_cfg);
                score.row = score_episode(log, config, sid,
                                          config.predictors[static_cast<std::size_t>(pi)].id);
                long fallbacks = 0;
                for (const DecisionRecord& d : log.decisions)
                    if (d.fallback) ++fallbacks;
                score.fallback_fraction =
                    log.decisions.empty()
                        ? 0.0
                        : static_cast<double>(fallbacks) / static_cast<double>(log.decisions.size());
                if (!out_dir.empty()) {
                    const fs::path prefix = fs::path(out_dir) / "logs" /
                                            config.predictors[static_cast<std::size_t>(pi)].id /
                                            sid;
                    write_episode_files(log, prefix.string());
                }
                if (keep_logs) {
                    score.log = std::move(log);
                    score.has_log = true;
                }
            } catch (const std::exception& e) {
                score.failed = true;
                score.error = e.what();
                score.row.scenario_id = sid;
                score.row.predictor_id = config.predictors[static_cast<std::size_t>(pi)].id;
                score.row.planner_id = config.planner;
            }
        }
    };

    const int n_threads = std::min(worker_thread_count(), std::max(1, n_tasks));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();

    ExperimentResult result;
    std::vector<double> fallback_by_row;
    for (const EpisodeScore& s : scores) {
        if (s.failed) {
            result.failures.push_back({s.row.predictor_id, s.row.scenario_id, s.error});
        } else {
            result.rows.push_back(s.row);
            fallback_by_row.push_back(s.fallback_fraction);
            if (s.has_log) result.logs.push_back(s.log);
        }
    }
    if (result.rows.size() < 2) {
        if (!out_dir.empty()) {
            write_metric_rows(result.rows, (fs::path(out_dir) / "rows.csv").string());
            emit_report(result, out_dir);
        }
        return result;
    }

    const NormalizedCohort cohort = normalize_cohort(result.rows);
    std::map<std::string, std::size_t> pred_index;
    for (std::size_t p = 0; p < config.predictors.size(); ++p)
        pred_index[config.predictors[p].id] = p;

    struct Agg {
        MeanAcc ade, fde, min_ade_m, min_fde_m, ade_c, fde_c, ade_f, fde_f;
        double perf = 0.0, safety = 0.0, eff = 0.0, comfort = 0.0, fallback = 0.0;
        int n = 0;
    };
    std::vector<Agg> aggs(config.predictors.size());
    for (std::size_t i = 0; i < result.rows.size(); ++i) {
        const MetricRow& r = result.rows[i];
        Agg& a = aggs[pred_index.at(r.predictor_id)];
        a.ade.add(r.dynamic_ade);
        a.fde.add(r.dynamic_fde);
        a.min_ade_m.add(r.dynamic_min_ade);
        a.min_fde_m.add(r.dynamic_min_fde);
        a.ade_c.add(r.dynamic_ade_closest);
        a.fde_c.add(r.dynamic_fde_closest);
        a.ade_f.add(r.dynamic_ade_fullobs);
        a.fde_f.add(r.dynamic_fde_fullobs);
        a.perf += driving_performance(cohort.rows[i]);
        a.safety += cohort.rows[i].safety;
        a.eff += cohort.rows[i].efficiency;
        a.comfort += cohort.rows[i].comfort;
        a.fallback += fallback_by_row[i];
        a.n += 1;
    }
    for (std::size_t p = 0; p < config.predictors.size(); ++p) {
        const Agg& a = aggs[p];
        if (a.n == 0) continue;
        ResultRow rr;
        rr.predictor_id = config.predictors[p].id;
        rr.n_scenarios = a.n;
        rr.n_failed = n_scen - a.n;
        rr.mean_dynamic_ade = a.ade.mean();
        rr.mean_dynamic_fde = a.fde.mean();
        rr.mean_dynamic_min_ade = a.min_ade_m.mean();
        rr.mean_dynamic_min_fde = a.min_fde_m.mean();
        rr.mean_dynamic_ade_closest = a.ade_c.mean();
        rr.mean_dynamic_fde_closest = a.fde_c.mean();
        rr.mean_dynamic_ade_fullobs = a.ade_f.mean();
        rr.mean_dynamic_fde_fullobs = a.fde_f.mean();
        rr.mean_driving_performance = a.perf / a.n;
        rr.mean_safety_norm = a.safety / a.n;
        rr.mean_efficiency_norm = a.eff / a.n;
        rr.mean_comfort_norm = a.comfort / a.n;
        rr.mean_fallback_fraction = a.fallback / a.n;
        rr.declared_latency = predictors[p]->latency();
        rr.static_ade_label = config.predictors[p].static_ade;
        result.results.push_back(std::move(rr));
    }

    // Predictor-level correlations against mean driving performance.
    auto correlate = [&](const std::string& name, auto getter) {
        std::vector<double> xs, ys;
        for (const ResultRow& rr : result.results) {
            const std::optional<double> x = getter(rr);
            if (x) {
                xs.push_back(*x);
                ys.push_back(rr.mean_driving_performance);
            }
        }
        if (xs.size() < 3) return;
        try {
            result.correlations.push_back(linear_fit_stats(xs, ys, name));
        } catch (const DegenerateVarianceError&) {
            // constant column; nothing to correlate
        }
    };
    correlate("static_ade", [](const ResultRow& r) { return r.static_ade_label; });
    correlate("latency", [](const ResultRow& r) { return std::optional<double>(r.declared_latency); });
    correlate("dynamic_ade", [](const ResultRow& r) { return r.mean_dynamic_ade; });
    correlate("dynamic_fde", [](const ResultRow& r) { return r.mean_dynamic_fde; });
    correlate("dynamic_min_ade", [](const ResultRow& r) { return r.mean_dynamic_min_ade; });
    correlate("dynamic_min_fde", [](const ResultRow& r) { return r.mean_dynamic_min_fde; });
    correlate("dynamic_ade_closest", [](const ResultRow& r) { return r.mean_dynamic_ade_closest; });
    correlate("dynamic_fde_closest", [](const ResultRow& r) { return r.mean_dynamic_fde_closest; });
    correlate("dynamic_ade_fullobs", [](const ResultRow& r) { return r.mean_dynamic_ade_fullobs; });
    correlate("dynamic_fde_fullobs", [](const ResultRow& r) { return r.mean_dynamic_fde_fullobs; });

    if (!out_dir.empty()) {
        write_metric_rows(result.rows, (fs::path(out_dir) / "rows.csv").string());
        emit_report(result, out_dir);
    }
    return result;
}

ExperimentResult analyze_rows(const std::vector<MetricRow>& rows) {
    ExperimentResult result;
    result.rows = rows;
    if (rows.size() < 2) return result;
    const NormalizedCohort cohort = normalize_cohort(result.rows);

    std::vector<std::string> order;
    std::map<std::string, std::size_t> pred_index;
    for (const MetricRow& r : rows) {
        if (pred_index.find(r.predictor_id) == pred_index.end()) {
            pred_index[r.predictor_id] = order.size();
            order.push_back(r.predictor_id);
        }
    }
    struct Agg {
        MeanAcc ade, fde, min_ade_m, min_fde_m, ade_c, fde_c, ade_f, fde_f;
        double perf = 0.0, safety = 0.0, eff = 0.0, comfort = 0.0;
        int n = 0;
    };
    std::vector<Agg> aggs(order.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        Agg& a = aggs[pred_index.at(rows[i].predictor_id)];
        a.ade.add(rows[i].dynamic_ade);
        a.fde.add(rows[i].dynamic_fde);
        a.min_ade_m.add(rows[i].dynamic_min_ade);
        a.min_fde_m.add(rows[i].dynamic_min_fde);
        a.ade_c.add(rows[i].dynamic_ade_closest);
        a.fde_c.add(rows[i].dynamic_fde_closest);
        a.ade_f.add(rows[i].dynamic_ade_fullobs);
        a.fde_f.add(rows[i].dynamic_fde_fullobs);
        a.perf += driving_performance(cohort.rows[i]);
        a.safety += cohort.rows[i].safety;
        a.eff += cohort.rows[i].efficiency;
        a.comfort += cohort.rows[i].comfort;
        a.n += 1;
    }
    for (std::size_t p = 0; p < order.size(); ++p) {
        const Agg& a = aggs[p];
        ResultRow rr;
        rr.predictor_id = order[p];
        rr.n_scenarios = a.n;
        rr.mean_dynamic_ade = a.ade.mean();
        rr.mean_dynamic_fde = a.fde.mean();
        rr.mean_dynamic_min_ade = a.min_ade_m.mean();
        rr.mean_dynamic_min_fde = a.min_fde_m.mean();
        rr.mean_dynamic_ade_closest = a.ade_c.mean();
        rr.mean_dynamic_fde_closest = a.fde_c.mean();
        rr.mean_dynamic_ade_fullobs = a.ade_f.mean();
        rr.mean_dynamic_fde_fullobs = a.fde_f.mean();
        rr.mean_driving_performance = a.n > 0 ? a.perf / a.n : 0.0;
        rr.mean_safety_norm = a.n > 0 ? a.safety / a.n : 0.0;
        rr.mean_efficiency_norm = a.n > 0 ? a.eff / a.n : 0.0;
        rr.mean_comfort_norm = a.n > 0 ? a.comfort / a.n : 0.0;
        result.results.push_back(std::move(rr));
    }

    auto correlate = [&](const std::string& name, auto getter) {
        std::vector<double> xs, ys;
        for (const ResultRow& rr : result.results) {
            const std::optional<double> x = getter(rr);
            if (x) {
                xs.push_back(*x);
                ys.push_back(rr.mean_driving_performance);
            }
        }
        if (xs.size() < 3) return;
        try {
            result.correlations.push_back(linear_fit_stats(xs, ys, name));
        } catch (const DegenerateVarianceError&) {
        }
    };
    correlate("dynamic_ade", [](const ResultRow& r) { return r.mean_dynamic_ade; });
    correlate("dynamic_fde", [](const ResultRow& r) { return r.mean_dynamic_fde; });
    correlate("dynamic_min_ade", [](const ResultRow& r) { return r.mean_dynamic_min_ade; });
    correlate("dynamic_min_fde", [](const ResultRow& r) { return r.mean_dynamic_min_fde; });
    correlate("dynamic_ade_closest", [](const ResultRow& r) { return r.mean_dynamic_ade_closest; });
    correlate("dynamic_fde_closest", [](const ResultRow& r) { return r.mean_dynamic_fde_closest; });
    correlate("dynamic_ade_fullobs", [](const ResultRow& r) { return r.mean_dynamic_ade_fullobs; });
    correlate("dynamic_fde_fullobs", [](const ResultRow& r) { return r.mean_dynamic_fde_fullobs; });
    return result;
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

const char* kResultRowHeader =
    "predictor_id,n_scenarios,n_failed,mean_dynamic_ade,mean_dynamic_fde,"
    "mean_dynamic_min_ade,mean_dynamic_min_fde,mean_dynamic_ade_closest,"
    "mean_dynamic_fde_closest,mean_dynamic_ade_fullobs,mean_dynamic_fde_fullobs,"
    "mean_driving_performance,mean_safety_norm,mean_efficiency_norm,mean_comfort_norm,"
    "mean_fallback_fraction,declared_latency,static_ade_label";

const char* kCorrelationHeader = "metric,pearson_r,r_squared,p_value,slope,intercept,n";

namespace {

std::string opt_field(const std::optional<double>& v) { return v ? fmt_g9(*v) : std::string(); }

}  // namespace

void write_result_rows(const std::vector<ResultRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << kResultRowHeader << '\n';
    for (const ResultRow& r : rows) {
        out << r.predictor_id << ',' << r.n_scenarios << ',' << r.n_failed << ','
            << opt_field(r.mean_dynamic_ade) << ',' << opt_field(r.mean_dynamic_fde) << ','
            << opt_field(r.mean_dynamic_min_ade) << ',' << opt_field(r.mean_dynamic_min_fde) << ','
            << opt_field(r.mean_dynamic_ade_closest) << ',' << opt_field(r.mean_dynamic_fde_closest)
            << ',' << opt_field(r.mean_dynamic_ade_fullobs) << ','
            << opt_field(r.mean_dynamic_fde_fullobs) << ',' << fmt_g9(r.mean_driving_performance)
            << ',' << fmt_g9(r.mean_safety_norm) << ',' << fmt_g9(r.mean_efficiency_norm) << ','
            << fmt_g9(r.mean_comfort_norm) << ',' << fmt_g9(r.mean_fallback_fraction) << ','
            << fmt_g9(r.declared_latency) << ',' << opt_field(r.static_ade_label) << '\n';
    }
}

std::vector<ResultRow> read_result_rows(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty results file: " + path);
    std::vector<ResultRow> rows;
    auto opt = [](const std::string& s, const char* what) -> std::optional<double> {
        if (s.empty()) return std::nullopt;
        return parse_double(s, what);
    };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 18) throw std::runtime_error("bad results row in " + path);
        ResultRow r;
        r.predictor_id = f[0];
        r.n_scenarios = static_cast<int>(parse_long(f[1], "n_scenarios"));
        r.n_failed = static_cast<int>(parse_long(f[2], "n_failed"));
        r.mean_dynamic_ade = opt(f[3], "ade");
        r.mean_dynamic_fde = opt(f[4], "fde");
        r.mean_dynamic_min_ade = opt(f[5], "min_ade");
        r.mean_dynamic_min_fde = opt(f[6], "min_fde");
        r.mean_dynamic_ade_closest = opt(f[7], "ade_closest");
        r.mean_dynamic_fde_closest = opt(f[8], "fde_closest");
        r.mean_dynamic_ade_fullobs = opt(f[9], "ade_fullobs");
        r.mean_dynamic_fde_fullobs = opt(f[10], "fde_fullobs");
        r.mean_driving_performance = parse_double(f[11], "driving_performance");
        r.mean_safety_norm = parse_double(f[12], "safety_norm");
        r.mean_efficiency_norm = parse_double(f[13], "efficiency_norm");
        r.mean_comfort_norm = parse_double(f[14], "comfort_norm");
        r.mean_fallback_fraction = parse_double(f[15], "fallback_fraction");
        r.declared_latency = parse_double(f[16], "latency");
        r.static_ade_label = opt(f[17], "static_ade");
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_correlations(const std::vector<CorrelationReport>& reports, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << kCorrelationHeader << '\n';
    for (const CorrelationReport& r : reports) {
        out << r.metric << ',' << fmt_g9(r.pearson_r) << ',' << fmt_g9(r.r_squared) << ','
            << fmt_g9(r.p_value) << ',' << fmt_g9(r.slope) << ',' << fmt_g9(r.intercept) << ','
            << r.n << '\n';
    }
}

std::vector<CorrelationReport> read_correlations(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty correlations file: " + path);
    std::vector<CorrelationReport> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 7) throw std::runtime_error("bad correlations row in " + path);
        CorrelationReport r;
        r.metric = f[0];
        r.pearson_r = parse_double(f[1], "pearson_r");
        r.r_squared = parse_double(f[2], "r_squared");
        r.p_value = parse_double(f[3], "p_value");
        r.slope = parse_double(f[4], "slope");
        r.intercept = parse_double(f[5], "intercept");
        r.n = static_cast<int>(parse_long(f[6], "n"));
        out.push_back(std::move(r));
    }
    return out;
}

void emit_report(const ExperimentResult& result, const std::string& out_dir) {
    fs::create_directories(out_dir);
    write_result_rows(result.results, (fs::path(out_dir) / "results.csv").string());
    write_correlations(result.correlations, (fs::path(out_dir) / "correlations.csv").string());

    // scatter.csv: data points per metric plus fit-line and CI-band samples.
    {
        std::ofstream out((fs::path(out_dir) / "scatter.csv").string(), std::ios::binary);
        if (!out) throw std::runtime_error("cannot write scatter.csv under " + out_dir);
        out << "metric,kind,label,x,y\n";
        auto metric_value = [](const ResultRow& r,
                               const std::string& metric) -> std::optional<double> {
            if (metric == "static_ade") return r.static_ade_label;
            if (metric == "latency") return r.declared_latency;
            if (metric == "dynamic_ade") return r.mean_dynamic_ade;
            if (metric == "dynamic_fde") return r.mean_dynamic_fde;
            if (metric == "dynamic_min_ade") return r.mean_dynamic_min_ade;
            if (metric == "dynamic_min_fde") return r.mean_dynamic_min_fde;
            if (metric == "dynamic_ade_closest") return r.mean_dynamic_ade_closest;
            if (metric == "dynamic_fde_closest") return r.mean_dynamic_fde_closest;
            if (metric == "dynamic_ade_fullobs") return r.mean_dynamic_ade_fullobs;
            if (metric == "dynamic_fde_fullobs") return r.mean_dynamic_fde_fullobs;
            return std::nullopt;
        };
        for (const CorrelationReport& rep : result.correlations) {
            double lo = 0.0, hi = 0.0;
            bool first = true;
            for (const ResultRow& r : result.results) {
                const auto x = metric_value(r, rep.metric);
                if (!x) continue;
                out << rep.metric << ",point," << r.predictor_id << ',' << fmt_g9(*x) << ','
                    << fmt_g9(r.mean_driving_performance) << '\n';
                lo = first ? *x : std::min(lo, *x);
                hi = first ? *x : std::max(hi, *x);
                first = false;
            }
            if (first) continue;
            // Fit rows are computed from the serialized coefficients and x so
            // that y = slope*x + intercept holds exactly in the emitted files.
            const double slope_w = std::stod(fmt_g9(rep.slope));
            const double intercept_w = std::stod(fmt_g9(rep.intercept));
            const int samples = 50;
            for (int i = 0; i <= samples; ++i) {
                const double x = std::stod(fmt_g9(lo + (hi - lo) * i / samples));
                const double y = slope_w * x + intercept_w;
                const double half = rep.ci_half_width(x);
                out << rep.metric << ",fit,," << fmt_g9(x) << ',' << fmt_g9(y) << '\n';
                out << rep.metric << ",ci_low,," << fmt_g9(x) << ',' << fmt_g9(y - half) << '\n';
                out << rep.metric << ",ci_high,," << fmt_g9(x) << ',' << fmt_g9(y + half) << '\n';
            }
        }
    }

    // Plain-text summary tables.
    {
        std::ofstream out((fs::path(out_dir) / "summary.txt").string(), std::ios::binary);
        if (!out) throw std::runtime_error("cannot write summary.txt under " + out_dir);
        char buf[512];
        out << "Driving performance per predictor\n";
        std::snprintf(buf, sizeof(buf), "%-16s %10s %10s %12s %14s %12s %10s\n", "predictor",
                      "latency", "static", "dyn_ade", "dyn_ade_close", "perf", "fallback");
        out << buf;
        auto field = [](const std::optional<double>& v) {
            return v ? fmt_g9(*v) : std::string("-");
        };
        for (const ResultRow& r : result.results) {
            std::snprintf(buf, sizeof(buf), "%-16s %10s %10s %12s %14s %12s %10s\n",
                          r.predictor_id.c_str(), fmt_g9(r.declared_latency).c_str(),
                          field(r.static_ade_label).c_str(), field(r.mean_dynamic_ade).c_str(),
                          field(r.mean_dynamic_ade_closest).c_str(),
                          fmt_g9(r.mean_driving_performance).c_str(),
                          fmt_g9(r.mean_fallback_fraction).c_str());
            out << buf;
        }
        out << "\nCorrelation with driving performance\n";
        std::snprintf(buf, sizeof(buf), "%-22s %10s %10s %12s %12s %12s %6s\n", "metric", "r",
                      "r^2", "p", "slope", "intercept", "n");
        out << buf;
        for (const CorrelationReport& r : result.correlations) {
            const std::string p = r.p_value < 1e-12 ? "<1e-12" : fmt_g9(r.p_value);
            std::snprintf(buf, sizeof(buf), "%-22s %10s %10s %12s %12s %12s %6d\n",
                          r.metric.c_str(), fmt_g9(r.pearson_r).c_str(),
                          fmt_g9(r.r_squared).c_str(), p.c_str(), fmt_g9(r.slope).c_str(),
                          fmt_g9(r.intercept).c_str(), r.n);
            out << buf;
        }
        if (!result.failures.empty()) {
            out << "\nDropped scenarios\n";
            for (const FailureRecord& f : result.failures)
                out << f.predictor_id << ' ' << f.scenario_id << ": " << f.error << '\n';
        }
    }

    if (!result.failures.empty()) {
        std::ofstream out((fs::path(out_dir) / "failures.csv").string(), std::ios::binary);
        out << "predictor_id,scenario_id,error\n";
        for (const FailureRecord& f : result.failures) {
            std::string msg = f.error;
            for (char& c : msg)
                if (c == ',' || c == '\n') c = ';';
            out << f.predictor_id << ',' << f.scenario_id << ',' << msg << '\n';
        }
    }
}

}  // namespace predloop
