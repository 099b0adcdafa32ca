#include "predloop/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "predloop/csv.hpp"
#include "predloop/rng.hpp"
#include "predloop/rvo.hpp"

namespace predloop {

using ordered_json = nlohmann::ordered_json;

namespace {
constexpr double kExoLookahead = 2.0;  // m ahead on the path toward which exo aim
constexpr double kLaneWidth = 3.5;
}  // namespace

const char* map_template_name(MapTemplate t) {
    switch (t) {
        case MapTemplate::straight: return "straight";
        case MapTemplate::intersection: return "intersection";
        case MapTemplate::roundabout: return "roundabout";
        case MapTemplate::mixed: return "mixed";
    }
    return "mixed";
}

MapTemplate map_template_from_name(const std::string& name) {
    if (name == "straight") return MapTemplate::straight;
    if (name == "intersection") return MapTemplate::intersection;
    if (name == "roundabout") return MapTemplate::roundabout;
    if (name == "mixed") return MapTemplate::mixed;
    throw std::invalid_argument("unknown map template: " + name);
}

const char* budget_mode_name(BudgetMode m) {
    return m == BudgetMode::fixed_time ? "fixed_time" : "fixed_predictions";
}

BudgetMode budget_mode_from_name(const std::string& name) {
    if (name == "fixed_time") return BudgetMode::fixed_time;
    if (name == "fixed_predictions") return BudgetMode::fixed_predictions;
    throw std::invalid_argument("unknown budget mode: " + name);
}

// ---------------------------------------------------------------------------
// Scenario generation
// ---------------------------------------------------------------------------

namespace {

struct MapLayout {
    std::vector<ReferencePath> paths;
    std::vector<bool> walkable;
    int ego_path_index = 0;
};

void add_path(MapLayout& m, ReferencePath path, bool walk) {
    m.paths.push_back(std::move(path));
    m.walkable.push_back(walk);
}

MapLayout straight_layout(double ego_len) {
    MapLayout m;
    add_path(m, ReferencePath::line({0.0, 0.0}, {ego_len, 0.0}), false);  // ego
    m.ego_path_index = 0;
    add_path(m, ReferencePath::line({-25.0, 0.0}, {ego_len + 40.0, 0.0}), false);
    add_path(m, ReferencePath::line({ego_len + 40.0, kLaneWidth}, {-25.0, kLaneWidth}), false);
    add_path(m, ReferencePath::line({-25.0, -6.0}, {ego_len + 40.0, -6.0}), true);
    add_path(m, ReferencePath::line({ego_len + 40.0, 7.0}, {-25.0, 7.0}), true);
    // Crossing walk at mid-path.
    add_path(m, ReferencePath::line({ego_len * 0.5, -9.0}, {ego_len * 0.5, 10.0}), true);
    return m;
}

MapLayout intersection_layout(double ego_len) {
    // Crossing traffic only: every conflict with the ego lane is resolvable by
    // braking before the crossing point, which keeps the template usable for
    // scripted (non-reactive) exo-agents as well.
    MapLayout m;
    const double x1 = ego_len * 0.35;
    const double x2 = ego_len * 0.65;
    add_path(m, ReferencePath::line({0.0, 0.0}, {ego_len, 0.0}), false);  // ego
    m.ego_path_index = 0;
    add_path(m, ReferencePath::line({x1, -40.0}, {x1, 40.0}), false);
    add_path(m, ReferencePath::line({x1 + kLaneWidth, 40.0}, {x1 + kLaneWidth, -40.0}), false);
    add_path(m, ReferencePath::line({x2, 40.0}, {x2, -40.0}), false);
    add_path(m, ReferencePath::line({x2 + kLaneWidth, -40.0}, {x2 + kLaneWidth, 40.0}), false);
    add_path(m, ReferencePath::line({-25.0, -8.5}, {ego_len + 25.0, -8.5}), true);
    add_path(m, ReferencePath::line({x1 - 6.5, -40.0}, {x1 - 6.5, 40.0}), true);
    add_path(m, ReferencePath::line({x2 + 10.0, 40.0}, {x2 + 10.0, -40.0}), true);
    return m;
}

MapLayout roundabout_layout(double ego_len) {
    MapLayout m;
    const double radius = 12.0;
    const double approach = std::max(15.0, ego_len * 0.3);
    const Vec2 center{approach, radius};
    // Ego: approach, half circumnavigation, exit straight long enough for the
    // requested length.
    std::vector<Vec2> pts;
    for (double x = 0.0; x < approach; x += 1.0) pts.push_back({x, 0.0});
    const int arc_steps = 48;
    for (int i = 0; i <= arc_steps; ++i) {
        const double a = -kPi / 2.0 + kPi * i / arc_steps;  // bottom to top, CCW
        pts.push_back(center + Vec2::from_angle(a) * radius);
    }
    double built = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i) built += (pts[i] - pts[i - 1]).norm();
    const double exit_len = std::max(10.0, ego_len - built + 5.0);
    pts.push_back({approach - exit_len, 2.0 * radius});
    add_path(m, ReferencePath::polyline(pts, 0.5), false);
    m.ego_path_index = 0;
    // Circulating ring for exo vehicles.
    add_path(m, ReferencePath::arc(center, radius, 0.0, 2.0 * kPi), false);
    add_path(m, ReferencePath::arc(center, radius + kLaneWidth, 2.0 * kPi, 0.0), false);
    // Walk ring and a crossing spoke.
    add_path(m, ReferencePath::arc(center, radius + 7.0, -kPi / 2.0, kPi), true);
    add_path(m, ReferencePath::line({center.x - radius - 8.0, center.y},
                                    {center.x + radius + 8.0, center.y}), true);
    return m;
}

MapLayout make_layout(MapTemplate t, std::uint64_t seed, double ego_len) {
    if (t == MapTemplate::mixed) {
        const std::uint64_t pick = mix64(seed) % 3;
        t = pick == 0 ? MapTemplate::straight
                      : (pick == 1 ? MapTemplate::intersection : MapTemplate::roundabout);
    }
    switch (t) {
        case MapTemplate::straight: return straight_layout(ego_len);
        case MapTemplate::intersection: return intersection_layout(ego_len);
        case MapTemplate::roundabout: return roundabout_layout(ego_len);
        case MapTemplate::mixed: break;
    }
    return straight_layout(ego_len);
}

}  // namespace

Scenario generate_scenario(const ScenarioSpec& spec) {
    if (spec.n_exo < 0) throw std::invalid_argument("generate_scenario: n_exo must be >= 0");
    const double ego_len = std::max(50.0, spec.ego_path_length);

    Scenario sc;
    sc.spec = spec;
    sc.spec.ego_path_length = ego_len;
    MapLayout layout = make_layout(spec.map_template, spec.seed, ego_len);
    sc.map = std::move(layout.paths);
    sc.walkable = std::move(layout.walkable);
    sc.ego_path_index = layout.ego_path_index;

    const ReferencePath& ego_path = sc.ego_path();
    sc.ego_start.pose = ego_path.pose_at(0.0);
    sc.ego_start.speed = std::clamp(spec.ego_start_speed, 0.0, kind_max_speed(AgentKind::ego));
    sc.ego_start.footprint = default_footprint(AgentKind::ego);
    sc.ego_start.agent_id = 0;
    sc.ego_start.kind = AgentKind::ego;

    Rng rng(derive_seed(spec.seed, stream_tags::kScenarioGen,
                        static_cast<std::uint64_t>(spec.map_template),
                        static_cast<std::uint64_t>(spec.n_exo)));

    std::vector<AgentState> placed{sc.ego_start};
    for (int i = 0; i < spec.n_exo; ++i) {
        bool ok = false;
        for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
            const double kr = rng.uniform();
            const AgentKind kind = kr < 0.45 ? AgentKind::vehicle
                                             : (kr < 0.75 ? AgentKind::pedestrian
                                                          : AgentKind::cyclist);
            const bool walk = kind != AgentKind::vehicle;
            std::vector<int> eligible;
            for (std::size_t p = 0; p < sc.map.size(); ++p) {
                if (static_cast<int>(p) == sc.ego_path_index) continue;
                if (sc.walkable[p] == walk) eligible.push_back(static_cast<int>(p));
            }
            if (eligible.empty()) continue;
            const int path_index = eligible[static_cast<std::size_t>(rng.uniform_int(
                static_cast<int>(eligible.size())))];
            const ReferencePath& path = sc.map[static_cast<std::size_t>(path_index)];
            const double margin = std::min(5.0, path.total_length() * 0.2);
            const double s = rng.uniform(margin, path.total_length() - margin);
            double preferred;
            switch (kind) {
                case AgentKind::vehicle: preferred = rng.uniform(2.5, 5.5); break;
                case AgentKind::cyclist: preferred = rng.uniform(1.5, 3.0); break;
                default: preferred = rng.uniform(0.8, 1.5); break;
            }
            ExoSetup setup;
            setup.state.pose = path.pose_at(s);
            setup.state.speed = std::min(preferred, kind_max_speed(kind));
            setup.state.footprint = default_footprint(kind);
            setup.state.agent_id = i + 1;
            setup.state.kind = kind;
            setup.path_index = path_index;
            setup.preferred_speed = preferred;

            bool collides = false;
            for (const AgentState& other : placed) {
                if (obb_intersect(setup.state.box(), other.box())) {
                    collides = true;
                    break;
                }
            }
            if (!collides) {
                placed.push_back(setup.state);
                sc.exo_agents.push_back(setup);
                ok = true;
            }
        }
        if (!ok) {
            throw PlacementError("generate_scenario: could not place exo agent " +
                                 std::to_string(i + 1) + " collision-free in 1000 attempts");
        }
    }
    return sc;
}

Scenario generate_scenario(std::uint64_t seed, MapTemplate map_template, int n_exo) {
    ScenarioSpec spec;
    spec.seed = seed;
    spec.map_template = map_template;
    spec.n_exo = n_exo;
    return generate_scenario(spec);
}

// ---------------------------------------------------------------------------
// Scenario JSON
// ---------------------------------------------------------------------------

namespace {

ordered_json path_to_json(const ReferencePath& p) {
    ordered_json pts = ordered_json::array();
    for (const Vec2& w : p.waypoints()) pts.push_back({w.x, w.y});
    return pts;
}

ReferencePath path_from_json(const ordered_json& j) {
    std::vector<Vec2> pts;
    for (const auto& w : j) pts.push_back({w.at(0).get<double>(), w.at(1).get<double>()});
    return ReferencePath(std::move(pts));
}

ordered_json agent_to_json(const AgentState& a) {
    return ordered_json{{"id", a.agent_id},
                        {"kind", kind_name(a.kind)},
                        {"x", a.pose.x},
                        {"y", a.pose.y},
                        {"heading", a.pose.heading},
                        {"speed", a.speed},
                        {"length", a.footprint.length},
                        {"width", a.footprint.width}};
}

AgentState agent_from_json(const ordered_json& j) {
    AgentState a;
    a.agent_id = j.at("id").get<int>();
    a.kind = kind_from_name(j.at("kind").get<std::string>());
    a.pose = Pose2D(j.at("x").get<double>(), j.at("y").get<double>(),
                    j.at("heading").get<double>());
    a.speed = j.at("speed").get<double>();
    a.footprint.length = j.at("length").get<double>();
    a.footprint.width = j.at("width").get<double>();
    return a;
}

}  // namespace

std::string Scenario::to_json() const {
    ordered_json j;
    j["seed"] = spec.seed;
    j["template"] = map_template_name(spec.map_template);
    j["n_exo"] = spec.n_exo;
    j["horizon_ticks"] = spec.horizon_ticks;
    j["ego_path_length"] = spec.ego_path_length;
    j["ego_start_speed"] = spec.ego_start_speed;
    j["ego_path_index"] = ego_path_index;
    j["paths"] = ordered_json::array();
    for (std::size_t i = 0; i < map.size(); ++i) {
        j["paths"].push_back(
            ordered_json{{"walkable", static_cast<bool>(walkable[i])}, {"points", path_to_json(map[i])}});
    }
    j["ego_start"] = agent_to_json(ego_start);
    j["exo_agents"] = ordered_json::array();
    for (const ExoSetup& e : exo_agents) {
        ordered_json a = agent_to_json(e.state);
        a["path_index"] = e.path_index;
        a["preferred_speed"] = e.preferred_speed;
        j["exo_agents"].push_back(a);
    }
    return j.dump(2);
}

Scenario Scenario::from_json(const std::string& text) {
    const ordered_json j = ordered_json::parse(text);
    Scenario sc;
    sc.spec.seed = j.at("seed").get<std::uint64_t>();
    sc.spec.map_template = map_template_from_name(j.at("template").get<std::string>());
    sc.spec.n_exo = j.at("n_exo").get<int>();
    sc.spec.horizon_ticks = j.at("horizon_ticks").get<int>();
    sc.spec.ego_path_length = j.at("ego_path_length").get<double>();
    sc.spec.ego_start_speed = j.at("ego_start_speed").get<double>();
    sc.ego_path_index = j.at("ego_path_index").get<int>();
    for (const auto& p : j.at("paths")) {
        sc.map.push_back(path_from_json(p.at("points")));
        sc.walkable.push_back(p.at("walkable").get<bool>());
    }
    sc.ego_start = agent_from_json(j.at("ego_start"));
    for (const auto& a : j.at("exo_agents")) {
        ExoSetup e;
        e.state = agent_from_json(a);
        e.path_index = a.at("path_index").get<int>();
        e.preferred_speed = a.at("preferred_speed").get<double>();
        sc.exo_agents.push_back(e);
    }
    return sc;
}

// ---------------------------------------------------------------------------
// Exo crowd
// ---------------------------------------------------------------------------

std::vector<Vec2> neighbor_positions(const WorldState& world, int exclude_agent_id) {
    std::vector<Vec2> out;
    if (world.ego.agent_id != exclude_agent_id) out.push_back(world.ego.position());
    for (const AgentState& a : world.exo) {
        if (a.agent_id != exclude_agent_id) out.push_back(a.position());
    }
    return out;
}

namespace {

// One crowd step. `extra` holds obstacle agents that are not themselves
// stepped (the ego); may be empty for script computation.
std::vector<AgentState> step_exo_core(const std::vector<AgentState>& exo,
                                      const std::vector<AgentState>& extra,
                                      const Scenario& scenario, double dt) {
    std::vector<AgentState> next = exo;
    RvoPlanConfig cfg;  // candidate grid + time horizon defaults
    for (std::size_t i = 0; i < exo.size(); ++i) {
        const AgentState& me = exo[i];
        const ExoSetup& setup = scenario.exo_agents[i];
        const ReferencePath& path = scenario.map[static_cast<std::size_t>(setup.path_index)];
        const PathQuery q = path.project(me.position());
        const bool done = q.arc_length >= path.total_length() - kGoalTolerance;

        Vec2 pref_vel{0.0, 0.0};
        if (!done) {
            const double s_target = std::min(q.arc_length + kExoLookahead, path.total_length());
            const Vec2 to_target = path.point_at(s_target) - me.position();
            if (to_target.norm() > 1e-9) pref_vel = to_target.normalized() * setup.preferred_speed;
        }

        std::vector<VelocityObstacleCone> cones;
        auto add_cone = [&](const AgentState& other) {
            try {
                cones.push_back(compute_rvo(
                    compute_vo(me, other, other.velocity(), cfg.time_horizon), me.velocity()));
            } catch (const AgentOverlapError&) {
                cones.push_back(blocked_cone(me, other, other.velocity(), cfg.time_horizon));
            }
        };
        for (const AgentState& other : extra) add_cone(other);
        for (std::size_t jj = 0; jj < exo.size(); ++jj) {
            if (jj != i) add_cone(exo[jj]);
        }

        RvoPlanConfig my_cfg = cfg;
        my_cfg.v_max = setup.preferred_speed;
        const std::vector<Vec2> candidates = candidate_velocities(pref_vel, my_cfg);
        bool any_free = false;
        for (const Vec2& c : candidates) {
            bool free = true;
            for (const auto& cone : cones) {
                if (cone.overlap || cone.contains(c)) {
                    free = false;
                    break;
                }
            }
            if (free) {
                any_free = true;
                break;
            }
        }

        AgentState& out = next[i];
        if (!any_free) {
            // Brake toward zero along the current motion direction.
            const double speed = std::max(0.0, me.speed - kExoBrakeDecel * dt);
            if (me.kind == AgentKind::vehicle) {
                const double s = std::min(q.arc_length + speed * dt, path.total_length());
                out.pose = path.pose_at(s);
            } else {
                const Vec2 p = me.position() + Vec2::from_angle(me.pose.heading) * (speed * dt);
                out.pose.x = p.x;
                out.pose.y = p.y;
            }
            out.speed = speed;
            continue;
        }

        const Vec2 v_sel = select_velocity(candidates, cones, pref_vel);
        if (me.kind == AgentKind::vehicle) {
            // Path-constrained: only the along-path component moves the car.
            const Vec2 tangent = path.tangent_at(q.arc_length);
            const double speed = std::max(0.0, v_sel.dot(tangent));
            const double s = std::min(q.arc_length + speed * dt, path.total_length());
            out.pose = path.pose_at(s);
            out.speed = speed;
        } else {
            const Vec2 p = me.position() + v_sel * dt;
            out.pose.x = p.x;
            out.pose.y = p.y;
            const double speed = v_sel.norm();
            if (speed > 1e-9) out.pose.heading = wrap_angle(v_sel.angle());
            out.speed = speed;
        }
    }
    return next;
}

}  // namespace

std::vector<AgentState> step_exo_agents(const WorldState& world, const Scenario& scenario,
                                        double dt) {
    return step_exo_core(world.exo, {world.ego}, scenario, dt);
}

ExoScript compute_exo_script(const Scenario& scenario, const TickConfig& cfg, int ticks) {
    ExoScript script;
    std::vector<AgentState> states;
    states.reserve(scenario.exo_agents.size());
    for (const ExoSetup& e : scenario.exo_agents) {
        script.agent_ids.push_back(e.state.agent_id);
        states.push_back(e.state);
    }
    script.states.reserve(static_cast<std::size_t>(ticks));
    script.states.push_back(states);
    for (int t = 1; t < ticks; ++t) {
        states = step_exo_core(states, {}, scenario, cfg.dt_sim);
        script.states.push_back(states);
    }
    return script;
}

// ---------------------------------------------------------------------------
// Episode loop
// ---------------------------------------------------------------------------

std::optional<Vec2> EpisodeLog::position_at(int tick, int agent_id) const {
    if (tick < 0 || tick >= num_ticks()) return std::nullopt;
    for (std::size_t i = 0; i < agent_ids.size(); ++i) {
        if (agent_ids[i] == agent_id) return ticks[static_cast<std::size_t>(tick)][i].position();
    }
    return std::nullopt;
}

std::optional<double> EpisodeLog::speed_at(int tick, int agent_id) const {
    if (tick < 0 || tick >= num_ticks()) return std::nullopt;
    for (std::size_t i = 0; i < agent_ids.size(); ++i) {
        if (agent_ids[i] == agent_id) return ticks[static_cast<std::size_t>(tick)][i].speed;
    }
    return std::nullopt;
}

namespace {

bool reached_goal(const AgentState& ego, const ReferencePath& path) {
    return path.project(ego.position()).arc_length >= path.total_length() - kGoalTolerance;
}

void append_history_frame(History& h, const AgentState& s, int tick) {
    HistoryFrame f;
    f.tick = tick;
    f.position = s.position();
    f.heading = s.pose.heading;
    f.speed = s.speed;
    h.frames.push_back(f);
    if (static_cast<int>(h.frames.size()) > kHistoryFrames)
        h.frames.erase(h.frames.begin());
}

void record_collisions(EpisodeLog& log, const WorldState& world, double buffer) {
    const OrientedBox ego_box = world.ego.box().with_length_buffer(buffer);
    for (const AgentState& exo : world.exo) {
        if (obb_intersect(ego_box, exo.box().with_length_buffer(buffer))) {
            log.collisions.push_back({world.tick, exo.agent_id});
        }
    }
}

}  // namespace

EpisodeLog run_episode(const Scenario& scenario, Planner& planner, const Predictor& predictor,
                       const TickConfig& cfg) {
    EpisodeLog log;
    log.scenario_full = scenario;
    log.ticks_cfg = cfg;
    log.planner_id = planner.name();
    log.predictor_id = predictor.name();
    log.scripted_exo = predictor.needs_script();
    log.agent_ids.push_back(scenario.ego_start.agent_id);
    log.agent_kinds.push_back(scenario.ego_start.kind);
    for (const ExoSetup& e : scenario.exo_agents) {
        log.agent_ids.push_back(e.state.agent_id);
        log.agent_kinds.push_back(e.state.kind);
    }

    std::unique_ptr<ExoScript> script;
    if (log.scripted_exo) {
        script = std::make_unique<ExoScript>(compute_exo_script(
            scenario, cfg,
            scenario.spec.horizon_ticks + kPredictionFrames * cfg.predictor_stride + 2));
    }

    WorldState world;
    world.ego = scenario.ego_start;
    for (const ExoSetup& e : scenario.exo_agents) world.exo.push_back(e.state);
    world.ego_history.agent_id = world.ego.agent_id;
    world.ego_history.kind = world.ego.kind;
    world.exo_histories.resize(world.exo.size());
    for (std::size_t i = 0; i < world.exo.size(); ++i) {
        world.exo_histories[i].agent_id = world.exo[i].agent_id;
        world.exo_histories[i].kind = world.exo[i].kind;
    }

    const std::uint64_t episode_seed = scenario.spec.seed;
    planner.begin_episode(scenario, episode_seed);
    double latched_accel = 0.0;

    for (int tick = 0; tick < scenario.spec.horizon_ticks; ++tick) {
        world.tick = tick;
        std::vector<AgentState> row;
        row.reserve(1 + world.exo.size());
        row.push_back(world.ego);
        for (const AgentState& e : world.exo) row.push_back(e);
        log.ticks.push_back(std::move(row));
        record_collisions(log, world, cfg.collision_buffer);

        if (reached_goal(world.ego, scenario.ego_path())) break;

        if (tick % cfg.predictor_stride == 0) {
            append_history_frame(world.ego_history, world.ego, tick);
            for (std::size_t i = 0; i < world.exo.size(); ++i)
                append_history_frame(world.exo_histories[i], world.exo[i], tick);

            Budget budget = cfg.make_budget();
            PlannerDecision decision;
            try {
                decision = planner.decide({world, scenario, script.get(), cfg, episode_seed},
                                          predictor, budget);
            } catch (const std::exception& e) {
                throw EpisodeError(tick, e.what());
            }
            latched_accel = decision.accel;
            log.decisions.push_back(
                {tick, decision.accel, decision.virtual_spent, decision.fallback});
            for (LoggedPrediction& p : decision.predictions)
                log.predictions.push_back(std::move(p));
        }

        const double steer =
            pure_pursuit_steer(world.ego, scenario.ego_path(), cfg.lookahead, cfg.wheelbase,
                               cfg.max_steer);
        AgentState new_ego =
            bicycle_step(world.ego, latched_accel, steer, cfg.dt_sim, cfg.wheelbase,
                         kind_max_speed(world.ego.kind), cfg.max_steer);
        std::vector<AgentState> new_exo;
        if (script) {
            new_exo = script->states[static_cast<std::size_t>(tick + 1)];
        } else {
            new_exo = step_exo_agents(world, scenario, cfg.dt_sim);
        }
        world.ego = new_ego;
        world.exo = std::move(new_exo);
    }
    return log;
}

bool replay_matches(const EpisodeLog& log) {
    const Scenario& scenario = log.scenario_full;
    const TickConfig& cfg = log.ticks_cfg;

    std::unique_ptr<ExoScript> script;
    if (log.scripted_exo) {
        script = std::make_unique<ExoScript>(compute_exo_script(
            scenario, cfg,
            scenario.spec.horizon_ticks + kPredictionFrames * cfg.predictor_stride + 2));
    }

    WorldState world;
    world.ego = scenario.ego_start;
    for (const ExoSetup& e : scenario.exo_agents) world.exo.push_back(e.state);

    std::size_t decision_idx = 0;
    double latched_accel = 0.0;
    for (int tick = 0; tick < log.num_ticks(); ++tick) {
        world.tick = tick;
        const auto& expected = log.ticks[static_cast<std::size_t>(tick)];
        if (expected.size() != world.exo.size() + 1) return false;
        auto same = [](const AgentState& a, const AgentState& b) {
            return fmt_g9(a.pose.x) == fmt_g9(b.pose.x) && fmt_g9(a.pose.y) == fmt_g9(b.pose.y) &&
                   fmt_g9(a.pose.heading) == fmt_g9(b.pose.heading) &&
                   fmt_g9(a.speed) == fmt_g9(b.speed);
        };
        if (!same(world.ego, expected[0])) return false;
        for (std::size_t i = 0; i < world.exo.size(); ++i) {
            if (!same(world.exo[i], expected[i + 1])) return false;
        }

        if (tick % cfg.predictor_stride == 0 && decision_idx < log.decisions.size() &&
            log.decisions[decision_idx].tick == tick) {
            latched_accel = log.decisions[decision_idx].accel;
            ++decision_idx;
        }
        if (tick + 1 >= log.num_ticks()) break;

        const double steer =
            pure_pursuit_steer(world.ego, scenario.ego_path(), cfg.lookahead, cfg.wheelbase,
                               cfg.max_steer);
        AgentState new_ego =
            bicycle_step(world.ego, latched_accel, steer, cfg.dt_sim, cfg.wheelbase,
                         kind_max_speed(world.ego.kind), cfg.max_steer);
        std::vector<AgentState> new_exo;
        if (script) {
            new_exo = script->states[static_cast<std::size_t>(tick + 1)];
        } else {
            new_exo = step_exo_agents(world, scenario, cfg.dt_sim);
        }
        world.ego = new_ego;
        world.exo = std::move(new_exo);
    }
    return decision_idx == log.decisions.size();
}

// ---------------------------------------------------------------------------
// Episode log files
// ---------------------------------------------------------------------------

void write_episode_files(const EpisodeLog& log, const std::string& prefix) {
    {
        std::ofstream out(prefix + ".csv", std::ios::binary);
        if (!out) throw std::runtime_error("cannot open for writing: " + prefix + ".csv");
        out << "tick,agent_id,kind,x,y,heading,speed\n";
        for (int t = 0; t < log.num_ticks(); ++t) {
            const auto& row = log.ticks[static_cast<std::size_t>(t)];
            for (std::size_t i = 0; i < row.size(); ++i) {
                const AgentState& a = row[i];
                out << t << ',' << log.agent_ids[i] << ',' << kind_name(log.agent_kinds[i]) << ','
                    << fmt_g9(a.pose.x) << ',' << fmt_g9(a.pose.y) << ','
                    << fmt_g9(a.pose.heading) << ',' << fmt_g9(a.speed) << '\n';
            }
        }
    }
    {
        std::ofstream out(prefix + "_predictions.csv", std::ios::binary);
        if (!out) throw std::runtime_error("cannot open for writing: " + prefix + "_predictions.csv");
        out << "issue_tick,agent_id,mode_index,step_index,x,y\n";
        for (const LoggedPrediction& p : log.predictions) {
            for (int m = 0; m < p.prediction.num_modes(); ++m) {
                const Trajectory& traj = p.prediction.modes[static_cast<std::size_t>(m)];
                for (std::size_t s = 0; s < traj.size(); ++s) {
                    out << p.issue_tick << ',' << p.agent_id << ',' << m << ',' << s << ','
                        << fmt_g9(traj[s].x) << ',' << fmt_g9(traj[s].y) << '\n';
                }
            }
        }
    }
    {
        std::ofstream out(prefix + "_decisions.csv", std::ios::binary);
        if (!out) throw std::runtime_error("cannot open for writing: " + prefix + "_decisions.csv");
        out << "tick,action,virtual_time_spent,fallback_flag\n";
        for (const DecisionRecord& d : log.decisions) {
            out << d.tick << ',' << fmt_g9(d.accel) << ',' << fmt_g9(d.virtual_spent) << ','
                << (d.fallback ? 1 : 0) << '\n';
        }
    }
    {
        ordered_json meta;
        meta["planner"] = log.planner_id;
        meta["predictor"] = log.predictor_id;
        meta["scripted_exo"] = log.scripted_exo;
        meta["tick_config"] = ordered_json{
            {"dt_sim", log.ticks_cfg.dt_sim},
            {"tick_rate", log.ticks_cfg.tick_rate},
            {"mode", budget_mode_name(log.ticks_cfg.mode)},
            {"predictor_stride", log.ticks_cfg.predictor_stride},
            {"prediction_count", log.ticks_cfg.prediction_count},
            {"lookahead", log.ticks_cfg.lookahead},
            {"wheelbase", log.ticks_cfg.wheelbase},
            {"max_steer", log.ticks_cfg.max_steer},
            {"collision_buffer", log.ticks_cfg.collision_buffer}};
        meta["scenario"] = ordered_json::parse(log.scenario_full.to_json());
        std::ofstream out(prefix + "_meta.json", std::ios::binary);
        if (!out) throw std::runtime_error("cannot open for writing: " + prefix + "_meta.json");
        out << meta.dump(2) << '\n';
    }
}

EpisodeLog read_episode_files(const std::string& prefix) {
    EpisodeLog log;
    {
        std::ifstream in(prefix + "_meta.json", std::ios::binary);
        if (!in) throw std::runtime_error("cannot open: " + prefix + "_meta.json");
        std::stringstream ss;
        ss << in.rdbuf();
        const ordered_json meta = ordered_json::parse(ss.str());
        log.planner_id = meta.at("planner").get<std::string>();
        log.predictor_id = meta.at("predictor").get<std::string>();
        log.scripted_exo = meta.at("scripted_exo").get<bool>();
        const auto& tc = meta.at("tick_config");
        log.ticks_cfg.dt_sim = tc.at("dt_sim").get<double>();
        log.ticks_cfg.tick_rate = tc.at("tick_rate").get<double>();
        log.ticks_cfg.mode = budget_mode_from_name(tc.at("mode").get<std::string>());
        log.ticks_cfg.predictor_stride = tc.at("predictor_stride").get<int>();
        log.ticks_cfg.prediction_count = tc.at("prediction_count").get<long>();
        log.ticks_cfg.lookahead = tc.at("lookahead").get<double>();
        log.ticks_cfg.wheelbase = tc.at("wheelbase").get<double>();
        log.ticks_cfg.max_steer = tc.at("max_steer").get<double>();
        log.ticks_cfg.collision_buffer = tc.at("collision_buffer").get<double>();
        log.scenario_full = Scenario::from_json(meta.at("scenario").dump());
    }
    {
        std::ifstream in(prefix + ".csv", std::ios::binary);
        if (!in) throw std::runtime_error("cannot open: " + prefix + ".csv");
        std::string line;
        std::getline(in, line);  // header
        int cur_tick = -1;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto f = split_csv_line(line);
            if (f.size() != 7) throw std::runtime_error("bad states row in " + prefix + ".csv");
            const int tick = static_cast<int>(parse_long(f[0], "tick"));
            AgentState a;
            a.agent_id = static_cast<int>(parse_long(f[1], "agent_id"));
            a.kind = kind_from_name(f[2]);
            a.pose = Pose2D(parse_double(f[3], "x"), parse_double(f[4], "y"),
                            parse_double(f[5], "heading"));
            a.speed = parse_double(f[6], "speed");
            a.footprint = default_footprint(a.kind);
            if (tick != cur_tick) {
                log.ticks.emplace_back();
                cur_tick = tick;
            }
            if (log.ticks.size() == 1) {
                log.agent_ids.push_back(a.agent_id);
                log.agent_kinds.push_back(a.kind);
            }
            log.ticks.back().push_back(a);
        }
    }
    {
        std::ifstream in(prefix + "_decisions.csv", std::ios::binary);
        if (!in) throw std::runtime_error("cannot open: " + prefix + "_decisions.csv");
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto f = split_csv_line(line);
            if (f.size() != 4)
                throw std::runtime_error("bad decisions row in " + prefix + "_decisions.csv");
            DecisionRecord d;
            d.tick = static_cast<int>(parse_long(f[0], "tick"));
            d.accel = parse_double(f[1], "action");
            d.virtual_spent = parse_double(f[2], "virtual_time_spent");
            d.fallback = parse_long(f[3], "fallback_flag") != 0;
            log.decisions.push_back(d);
        }
    }
    {
        std::ifstream in(prefix + "_predictions.csv", std::ios::binary);
        if (!in) throw std::runtime_error("cannot open: " + prefix + "_predictions.csv");
        std::string line;
        std::getline(in, line);
        LoggedPrediction* cur = nullptr;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto f = split_csv_line(line);
            if (f.size() != 6)
                throw std::runtime_error("bad predictions row in " + prefix + "_predictions.csv");
            const int tick = static_cast<int>(parse_long(f[0], "issue_tick"));
            const int agent = static_cast<int>(parse_long(f[1], "agent_id"));
            const int mode = static_cast<int>(parse_long(f[2], "mode_index"));
            const Vec2 p{parse_double(f[4], "x"), parse_double(f[5], "y")};
            if (cur == nullptr || cur->issue_tick != tick || cur->agent_id != agent) {
                log.predictions.emplace_back();
                cur = &log.predictions.back();
                cur->issue_tick = tick;
                cur->agent_id = agent;
            }
            while (cur->prediction.num_modes() <= mode) cur->prediction.modes.emplace_back();
            cur->prediction.modes[static_cast<std::size_t>(mode)].push_back(p);
        }
        const int stride = log.ticks_cfg.predictor_stride;
        for (LoggedPrediction& p : log.predictions) {
            const int k = p.prediction.num_modes();
            p.prediction.mode_weights.assign(static_cast<std::size_t>(k), 1.0 / k);
            p.complete_history = p.issue_tick >= stride * (kHistoryFrames - 1);
            if (auto ego = log.position_at(p.issue_tick, log.agent_ids.front())) {
                if (auto subj = log.position_at(p.issue_tick, p.agent_id))
                    p.ego_distance = (*subj - *ego).norm();
            }
        }
    }
    // Collision events are derived data; rebuild them from the states.
    for (int t = 0; t < log.num_ticks(); ++t) {
        const auto& row = log.ticks[static_cast<std::size_t>(t)];
        const OrientedBox ego_box = row[0].box().with_length_buffer(log.ticks_cfg.collision_buffer);
        for (std::size_t i = 1; i < row.size(); ++i) {
            if (obb_intersect(ego_box, row[i].box().with_length_buffer(log.ticks_cfg.collision_buffer)))
                log.collisions.push_back({t, row[i].agent_id});
        }
    }
    return log;
}

// ---------------------------------------------------------------------------
// Trajectory database from logs
// ---------------------------------------------------------------------------

TrajectoryDatabase build_database(const std::vector<const EpisodeLog*>& logs) {
    if (logs.empty()) throw std::invalid_argument("build_database: no logs");
    TrajectoryDatabase db;
    for (const EpisodeLog* log : logs) {
        const int stride = log->ticks_cfg.predictor_stride;
        const int n_frames = (log->num_ticks() + stride - 1) / stride;
        for (std::size_t ai = 0; ai < log->agent_ids.size(); ++ai) {
            const int window = kHistoryFrames + kPredictionFrames;
            for (int start = 0; start + window <= n_frames; ++start) {
                History hist;
                hist.agent_id = log->agent_ids[ai];
                hist.kind = log->agent_kinds[ai];
                for (int f = start; f < start + kHistoryFrames; ++f) {
                    const auto& s = log->ticks[static_cast<std::size_t>(f * stride)][ai];
                    HistoryFrame frame;
                    frame.tick = f * stride;
                    frame.position = s.position();
                    frame.heading = s.pose.heading;
                    frame.speed = s.speed;
                    hist.frames.push_back(frame);
                }
                TrajectoryEntry entry;
                entry.feature = history_feature(hist);
                const int anchor_frame = start + kHistoryFrames - 1;
                const auto& anchor_row =
                    log->ticks[static_cast<std::size_t>(anchor_frame * stride)];
                std::vector<Vec2> neighbors;
                for (std::size_t bi = 0; bi < anchor_row.size(); ++bi) {
                    if (bi != ai) neighbors.push_back(anchor_row[bi].position());
                }
                entry.neighbor_feature = neighbor_feature(hist, neighbors);
                const double theta = hist.last().heading;
                Vec2 prev = hist.last().position;
                for (int j = 0; j < kPredictionFrames; ++j) {
                    const auto& s = log->ticks[static_cast<std::size_t>(
                        (anchor_frame + 1 + j) * stride)][ai];
                    const Vec2 d = (s.position() - prev).rotated(-theta);
                    entry.future[2 * j] = d.x;
                    entry.future[2 * j + 1] = d.y;
                    prev = s.position();
                }
                db.add(entry);
            }
        }
    }
    if (db.empty()) throw std::runtime_error("build_database: no qualifying windows in the logs");
    return db;
}

}  // namespace predloop
