#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "predloop/metrics.hpp"
#include "predloop/rvo.hpp"
#include "predloop/world.hpp"

using namespace predloop;

namespace {

Scenario empty_road_scenario(double length = 60.0, int horizon = 1200) {
    ScenarioSpec spec;
    spec.seed = 1;
    spec.map_template = MapTemplate::straight;
    spec.n_exo = 0;
    spec.horizon_ticks = horizon;
    spec.ego_path_length = length;
    return generate_scenario(spec);
}

Scenario two_pedestrians_head_on() {
    // Hand-built symmetric encounter on one shared walk path.
    Scenario sc;
    sc.spec.seed = 9;
    sc.spec.n_exo = 2;
    sc.spec.horizon_ticks = 334;  // ~10 s
    sc.spec.ego_path_length = 60.0;
    sc.map.push_back(ReferencePath::line({0, 0}, {60, 0}));
    sc.walkable.push_back(false);
    sc.map.push_back(ReferencePath::line({0, 30}, {60, 30}));
    sc.walkable.push_back(true);
    sc.map.push_back(ReferencePath::line({60, 30}, {0, 30}));
    sc.walkable.push_back(true);
    sc.ego_path_index = 0;
    sc.ego_start.pose = Pose2D(0, 0, 0);
    sc.ego_start.kind = AgentKind::ego;
    sc.ego_start.footprint = default_footprint(AgentKind::ego);

    ExoSetup a;
    a.state.pose = Pose2D(25, 30, 0);
    a.state.speed = 1.5;
    a.state.footprint = default_footprint(AgentKind::pedestrian);
    a.state.agent_id = 1;
    a.state.kind = AgentKind::pedestrian;
    a.path_index = 1;
    a.preferred_speed = 1.5;
    ExoSetup b = a;
    b.state.pose = Pose2D(35, 30, kPi);
    b.state.agent_id = 2;
    b.path_index = 2;
    sc.exo_agents = {a, b};
    return sc;
}

}  // namespace

TEST_CASE("generate_scenario determinism and seed sensitivity") {
    const Scenario a = generate_scenario(1, MapTemplate::mixed, 10);
    const Scenario b = generate_scenario(1, MapTemplate::mixed, 10);
    CHECK(a.to_json() == b.to_json());
    const Scenario c = generate_scenario(2, MapTemplate::mixed, 10);
    CHECK(a.to_json() != c.to_json());
}

TEST_CASE("generate_scenario straight template with no exo") {
    const Scenario sc = generate_scenario(1, MapTemplate::straight, 0);
    CHECK(sc.exo_agents.empty());
    CHECK(sc.ego_path().total_length() >= 50.0);
}

TEST_CASE("generated agents start collision-free") {
    for (std::uint64_t seed : {3ull, 17ull, 99ull}) {
        const Scenario sc = generate_scenario(seed, MapTemplate::mixed, 12);
        std::vector<AgentState> all{sc.ego_start};
        for (const ExoSetup& e : sc.exo_agents) all.push_back(e.state);
        for (std::size_t i = 0; i < all.size(); ++i)
            for (std::size_t j = i + 1; j < all.size(); ++j)
                CHECK_FALSE(obb_intersect(all[i].box(), all[j].box()));
    }
}

TEST_CASE("scenario JSON round-trip") {
    const Scenario sc = generate_scenario(5, MapTemplate::intersection, 6);
    const Scenario back = Scenario::from_json(sc.to_json());
    CHECK(back.to_json() == sc.to_json());
}

TEST_CASE("budget charging semantics") {
    Budget ft = Budget::fixed_time(0.1);
    CHECK(ft.try_charge(10, 0.005));   // 0.05
    CHECK(ft.try_charge(10, 0.005));   // 0.10 exactly
    CHECK_FALSE(ft.try_charge(1, 0.005));
    CHECK(ft.spent() == doctest::Approx(0.1));

    Budget fp = Budget::fixed_predictions(5);
    CHECK(fp.try_charge(3, 0.224));
    CHECK_FALSE(fp.try_charge(3, 0.224));
    CHECK(fp.try_charge(2, 0.224));
    CHECK(fp.calls_remaining() == 0);
    CHECK(fp.spent() == doctest::Approx(5 * 0.224));
}

TEST_CASE("single exo advances along an empty path at preferred speed") {
    Scenario sc = two_pedestrians_head_on();
    sc.exo_agents.pop_back();  // keep one pedestrian
    WorldState world;
    world.ego = sc.ego_start;
    world.ego.pose = Pose2D(0, -20, 0);  // far away
    world.exo = {sc.exo_agents[0].state};
    const auto next = step_exo_agents(world, sc, 0.03);
    const double moved = (next[0].position() - sc.exo_agents[0].state.position()).norm();
    CHECK(moved == doctest::Approx(1.5 * 0.03).epsilon(1e-6));
}

TEST_CASE("two pedestrians head-on never collide over ten seconds") {
    const Scenario sc = two_pedestrians_head_on();
    WorldState world;
    world.ego = sc.ego_start;
    world.exo = {sc.exo_agents[0].state, sc.exo_agents[1].state};
    double min_dist = 1e300;
    for (int t = 0; t < 334; ++t) {
        world.exo = step_exo_agents(world, sc, 0.03);
        min_dist = std::min(min_dist,
                            (world.exo[0].position() - world.exo[1].position()).norm());
        CHECK_FALSE(obb_intersect(world.exo[0].box(), world.exo[1].box()));
    }
    CHECK(min_dist > 0.0);
}

TEST_CASE("blocked exo decays to zero speed") {
    // A pedestrian walled in by four stopped vehicles.
    Scenario sc;
    sc.spec.horizon_ticks = 100;
    sc.map.push_back(ReferencePath::line({0, 0}, {60, 0}));
    sc.walkable.push_back(true);
    sc.ego_path_index = 0;
    sc.ego_start.pose = Pose2D(0, 50, 0);
    sc.ego_start.kind = AgentKind::ego;

    ExoSetup walker;
    walker.state.pose = Pose2D(30, 0, 0);
    walker.state.speed = 1.5;
    walker.state.footprint = default_footprint(AgentKind::pedestrian);
    walker.state.agent_id = 1;
    walker.state.kind = AgentKind::pedestrian;
    walker.path_index = 0;
    walker.preferred_speed = 1.5;
    sc.exo_agents.push_back(walker);
    int id = 2;
    for (const Vec2 offset : {Vec2{2.2, 0.0}, Vec2{-2.2, 0.0}, Vec2{0.0, 2.2}, Vec2{0.0, -2.2}}) {
        ExoSetup wall;
        wall.state.pose = Pose2D(30 + offset.x, offset.y, kPi / 2.0);
        wall.state.speed = 0.0;
        wall.state.footprint = {3.5, 3.5};
        wall.state.agent_id = id++;
        wall.state.kind = AgentKind::vehicle;
        wall.path_index = 0;
        wall.preferred_speed = 0.0;
        sc.exo_agents.push_back(wall);
    }

    WorldState world;
    world.ego = sc.ego_start;
    for (const ExoSetup& e : sc.exo_agents) world.exo.push_back(e.state);
    for (int t = 0; t < 60; ++t) world.exo = step_exo_agents(world, sc, 0.03);
    CHECK(world.exo[0].speed == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("run_episode on an empty road reaches the path end") {
    const Scenario sc = empty_road_scenario();
    RvoPlanner planner;
    CvPredictor predictor;
    TickConfig cfg;
    const EpisodeLog log = run_episode(sc, planner, predictor, cfg);
    CHECK(log.num_ticks() < sc.spec.horizon_ticks);  // early goal termination
    const auto& final_row = log.ticks.back();
    const double s = sc.ego_path().project(final_row[0].position()).arc_length;
    CHECK(s >= sc.ego_path().total_length() - kGoalTolerance - 1e-9);
    CHECK(log.collisions.empty());
}

TEST_CASE("run_episode is deterministic") {
    const Scenario sc = generate_scenario(11, MapTemplate::straight, 6);
    TickConfig cfg;
    RvoPlanner p1, p2;
    CvPredictor predictor;
    const EpisodeLog a = run_episode(sc, p1, predictor, cfg);
    const EpisodeLog b = run_episode(sc, p2, predictor, cfg);
    REQUIRE(a.num_ticks() == b.num_ticks());
    for (int t = 0; t < a.num_ticks(); ++t) {
        for (std::size_t i = 0; i < a.ticks[static_cast<std::size_t>(t)].size(); ++i) {
            CHECK(a.ticks[static_cast<std::size_t>(t)][i].pose.x ==
                  b.ticks[static_cast<std::size_t>(t)][i].pose.x);
            CHECK(a.ticks[static_cast<std::size_t>(t)][i].speed ==
                  b.ticks[static_cast<std::size_t>(t)][i].speed);
        }
    }
    REQUIRE(a.decisions.size() == b.decisions.size());
}

TEST_CASE("planner falls back when the budget cannot afford one call") {
    const Scenario sc = generate_scenario(13, MapTemplate::straight, 4);
    TickConfig cfg;
    cfg.mode = BudgetMode::fixed_time;
    cfg.tick_rate = 30.0;  // 1/30 s budget
    RvoPlanner planner;
    // KNN-like latency of 0.224 s can never fit in 1/30 s.
    NoisyOraclePredictor predictor("slow_oracle", 0.0, 0.224);
    const EpisodeLog log = run_episode(sc, planner, predictor, cfg);
    REQUIRE_FALSE(log.decisions.empty());
    for (const DecisionRecord& d : log.decisions) CHECK(d.fallback);
    CHECK(log.predictions.empty());
}

TEST_CASE("episode logs replay exactly") {
    const Scenario sc = generate_scenario(21, MapTemplate::intersection, 8);
    TickConfig cfg;
    RvoPlanner planner;
    CvPredictor predictor;
    EpisodeLog log = run_episode(sc, planner, predictor, cfg);
    CHECK(replay_matches(log));

    // Through the file round-trip too.
    const std::string prefix = "/tmp/predloop_world_test_log";
    write_episode_files(log, prefix);
    const EpisodeLog loaded = read_episode_files(prefix);
    CHECK(replay_matches(loaded));
}

TEST_CASE("scripted episodes ignore the ego and replay too") {
    const Scenario sc = generate_scenario(23, MapTemplate::straight, 5);
    TickConfig cfg;
    RvoPlanner planner;
    NoisyOraclePredictor predictor("oracle", 0.0, 0.001);
    EpisodeLog log = run_episode(sc, planner, predictor, cfg);
    CHECK(log.scripted_exo);
    CHECK(replay_matches(log));
    // The exo trajectory equals the precomputed script.
    const ExoScript script = compute_exo_script(sc, cfg, log.num_ticks() + 1);
    for (int t = 0; t < log.num_ticks(); ++t) {
        for (std::size_t i = 0; i + 1 < log.agent_ids.size(); ++i) {
            const Vec2 logged = log.ticks[static_cast<std::size_t>(t)][i + 1].position();
            const Vec2 scripted = script.states[static_cast<std::size_t>(t)][i].position();
            CHECK((logged - scripted).norm() == 0.0);
        }
    }
}

TEST_CASE("virtual time spent stays within the fixed_time budget") {
    const Scenario sc = generate_scenario(27, MapTemplate::mixed, 8);
    TickConfig cfg;
    cfg.mode = BudgetMode::fixed_time;
    cfg.tick_rate = 30.0;
    RvoPlanner planner;
    CvPredictor predictor;
    const EpisodeLog log = run_episode(sc, planner, predictor, cfg);
    for (const DecisionRecord& d : log.decisions) CHECK(d.virtual_spent <= 1.0 / 30.0 + 1e-9);
}

TEST_CASE("build_database window arithmetic") {
    auto make_log = [](int n_ticks) {
        EpisodeLog log;
        log.ticks_cfg.predictor_stride = 1;
        log.agent_ids = {0};
        log.agent_kinds = {AgentKind::ego};
        for (int t = 0; t < n_ticks; ++t) {
            AgentState a;
            a.pose = Pose2D(0.5 * t, 0.0, 0.0);
            a.speed = 0.5;
            log.ticks.push_back({a});
        }
        return log;
    };
    const EpisodeLog l50 = make_log(50);
    CHECK(build_database({&l50}).size() == 1);
    const EpisodeLog l49 = make_log(49);
    CHECK_THROWS(build_database({&l49}));
    const EpisodeLog l51 = make_log(51);
    CHECK(build_database({&l51}).size() == 2);
}
