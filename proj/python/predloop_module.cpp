#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "predloop/experiment.hpp"

namespace py = pybind11;
using namespace predloop;

namespace {

Trajectory to_trajectory(const std::vector<std::pair<double, double>>& pts) {
    Trajectory t;
    t.reserve(pts.size());
    for (const auto& [x, y] : pts) t.push_back({x, y});
    return t;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Closed-loop evaluation workbench for trajectory predictors";

    py::class_<Pose2D>(m, "Pose2D")
        .def(py::init<double, double, double>(), py::arg("x"), py::arg("y"), py::arg("heading"))
        .def_readonly("x", &Pose2D::x)
        .def_readonly("y", &Pose2D::y)
        .def_readonly("heading", &Pose2D::heading);

    py::class_<AgentState>(m, "AgentState")
        .def(py::init([](double x, double y, double heading, double speed) {
                 AgentState s;
                 s.pose = Pose2D(x, y, heading);
                 s.speed = speed;
                 return s;
             }),
             py::arg("x"), py::arg("y"), py::arg("heading"), py::arg("speed"))
        .def_property_readonly("pose", [](const AgentState& s) { return s.pose; })
        .def_readonly("speed", &AgentState::speed);

    m.def("wrap_angle", &wrap_angle, py::arg("angle"));

    m.def(
        "bicycle_step",
        [](const AgentState& s, double accel, double steer, double dt, double wheelbase,
           double v_max, double max_steer) {
            return bicycle_step(s, accel, steer, dt, wheelbase, v_max, max_steer);
        },
        py::arg("state"), py::arg("accel"), py::arg("steer"), py::arg("dt"),
        py::arg("wheelbase") = 2.8, py::arg("v_max") = 6.0, py::arg("max_steer") = 0.6);

    m.def(
        "pure_pursuit_steer",
        [](const AgentState& s, const std::vector<std::pair<double, double>>& waypoints,
           double lookahead, double wheelbase, double max_steer) {
            std::vector<Vec2> pts;
            for (const auto& [x, y] : waypoints) pts.push_back({x, y});
            const ReferencePath path = ReferencePath::polyline(pts);
            return pure_pursuit_steer(s, path, lookahead, wheelbase, max_steer);
        },
        py::arg("state"), py::arg("waypoints"), py::arg("lookahead"), py::arg("wheelbase") = 2.8,
        py::arg("max_steer") = 0.6);

    m.def(
        "obb_intersect",
        [](std::pair<double, double> ca, double ha, double la, double wa,
           std::pair<double, double> cb, double hb, double lb, double wb) {
            const OrientedBox a{{ca.first, ca.second}, ha, la / 2.0, wa / 2.0};
            const OrientedBox b{{cb.first, cb.second}, hb, lb / 2.0, wb / 2.0};
            return obb_intersect(a, b);
        },
        py::arg("center_a"), py::arg("heading_a"), py::arg("length_a"), py::arg("width_a"),
        py::arg("center_b"), py::arg("heading_b"), py::arg("length_b"), py::arg("width_b"));

    m.def(
        "ade",
        [](const std::vector<std::pair<double, double>>& pred,
           const std::vector<std::pair<double, double>>& truth) {
            return ade(to_trajectory(pred), to_trajectory(truth));
        },
        py::arg("pred"), py::arg("truth"));
    m.def(
        "fde",
        [](const std::vector<std::pair<double, double>>& pred,
           const std::vector<std::pair<double, double>>& truth) {
            return fde(to_trajectory(pred), to_trajectory(truth));
        },
        py::arg("pred"), py::arg("truth"));

    m.def("pearson", &pearson, py::arg("xs"), py::arg("ys"));
    m.def("spearman", &spearman, py::arg("xs"), py::arg("ys"));
    m.def(
        "linear_fit_stats",
        [](const std::vector<double>& xs, const std::vector<double>& ys) {
            const CorrelationReport r = linear_fit_stats(xs, ys);
            py::dict d;
            d["pearson_r"] = r.pearson_r;
            d["r_squared"] = r.r_squared;
            d["p_value"] = r.p_value;
            d["slope"] = r.slope;
            d["intercept"] = r.intercept;
            d["n"] = r.n;
            return d;
        },
        py::arg("xs"), py::arg("ys"));

    m.def(
        "generate_scenario_json",
        [](std::uint64_t seed, const std::string& map_template, int n_exo) {
            return generate_scenario(seed, map_template_from_name(map_template), n_exo).to_json();
        },
        py::arg("seed"), py::arg("map_template"), py::arg("n_exo"));

    m.def(
        "run_episode_summary",
        [](std::uint64_t seed, const std::string& map_template, int n_exo, int horizon_ticks,
           const std::string& planner_name, const std::string& predictor_type, double sigma,
           double latency) {
            ScenarioSpec spec;
            spec.seed = seed;
            spec.map_template = map_template_from_name(map_template);
            spec.n_exo = n_exo;
            spec.horizon_ticks = horizon_ticks;
            const Scenario scenario = generate_scenario(spec);

            ExperimentConfig cfg;
            cfg.planner = planner_name;
            PredictorSpec ps;
            ps.id = predictor_type;
            ps.type = predictor_type;
            ps.sigma = sigma;
            if (latency > 0.0) ps.latency = latency;
            cfg.predictors = {ps};
            auto planner = make_planner(cfg);
            auto predictor = make_predictor(ps);

            TickConfig tick_cfg;
            tick_cfg.tick_rate = 0.0;  // unconstrained
            const EpisodeLog log = run_episode(scenario, *planner, *predictor, tick_cfg);

            py::dict d;
            d["ticks"] = log.num_ticks();
            d["collision_events"] = log.collisions.size();
            d["avg_speed"] = avg_speed(log);
            d["mean_jerk"] = mean_jerk(log);
            d["safety_rate"] = safety_rate(log, SafetyMode{});
            d["decisions"] = log.decisions.size();
            d["predictions"] = log.predictions.size();
            d["replay_ok"] = replay_matches(log);
            return d;
        },
        py::arg("seed"), py::arg("map_template"), py::arg("n_exo"), py::arg("horizon_ticks"),
        py::arg("planner"), py::arg("predictor"), py::arg("sigma") = 0.0,
        py::arg("latency") = 0.0);

    m.def(
        "run_experiment_files",
        [](const std::string& config_json, const std::string& out_dir) {
            const ExperimentConfig cfg = ExperimentConfig::from_json(config_json);
            const ExperimentResult r = run_experiment(cfg, out_dir);
            py::dict d;
            d["rows"] = r.rows.size();
            d["results"] = r.results.size();
            d["failures"] = r.failures.size();
            return d;
        },
        py::arg("config_json"), py::arg("out_dir"));
}
