#include <doctest.h>

#include <cmath>

#include "predloop/metrics.hpp"
#include "predloop/rng.hpp"

using namespace predloop;

namespace {

EpisodeLog log_with_speeds(const std::vector<double>& speeds, double dt = 1.0) {
    EpisodeLog log;
    log.ticks_cfg.dt_sim = dt;
    log.agent_ids = {0};
    log.agent_kinds = {AgentKind::ego};
    double x = 0.0;
    for (double v : speeds) {
        AgentState ego;
        ego.agent_id = 0;
        ego.kind = AgentKind::ego;
        ego.pose = Pose2D(x, 0.0, 0.0);
        ego.speed = v;
        log.ticks.push_back({ego});
        x += v * dt;
    }
    return log;
}

MetricRow raw_row(double safety, double efficiency, double comfort) {
    MetricRow r;
    r.safety_raw = safety;
    r.efficiency_raw = efficiency;
    r.comfort_raw = comfort;
    return r;
}

}  // namespace

TEST_CASE("ade basics") {
    const Trajectory a{{1, 0}, {2, 0}};
    CHECK(ade(a, a) == 0.0);
    const Trajectory b{{1, 0}, {2, 1}};
    CHECK(ade(a, b) == doctest::Approx(0.5));
    CHECK_THROWS_AS(ade(a, Trajectory{{0, 0}}), std::invalid_argument);
}

TEST_CASE("ade equals the mean of prefix fdes") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        Trajectory pred, truth;
        const int n = 1 + rng.uniform_int(10);
        for (int i = 0; i < n; ++i) {
            pred.push_back({rng.normal(), rng.normal()});
            truth.push_back({rng.normal(), rng.normal()});
        }
        double mean_of_fdes = 0.0;
        for (int k = 1; k <= n; ++k) {
            const Trajectory pp(pred.begin(), pred.begin() + k);
            const Trajectory tt(truth.begin(), truth.begin() + k);
            mean_of_fdes += fde(pp, tt);
        }
        mean_of_fdes /= n;
        CHECK(ade(pred, truth) == doctest::Approx(mean_of_fdes).epsilon(1e-12));
    }
}

TEST_CASE("fde basics") {
    const Trajectory a{{1, 0}, {2, 0}};
    const Trajectory b{{1, 0}, {2, 1}};
    CHECK(fde(a, a) == 0.0);
    CHECK(fde(a, b) == doctest::Approx(1.0));
    const Trajectory one_a{{3, 4}}, one_b{{0, 0}};
    CHECK(fde(one_a, one_b) == doctest::Approx(ade(one_a, one_b)));
}

TEST_CASE("min_ade and min_fde take the best mode") {
    PredictionSet ps;
    ps.modes.push_back({{1, 0}, {2, 0}});
    ps.modes.push_back({{50, 50}, {60, 60}});
    ps.mode_weights = {0.5, 0.5};
    const Trajectory truth{{1, 0}, {2, 0}};
    CHECK(min_ade(ps, truth) == 0.0);
    CHECK(min_fde(ps, truth) == 0.0);

    PredictionSet single;
    single.modes.push_back({{1, 1}, {2, 2}});
    single.mode_weights = {1.0};
    CHECK(min_ade(single, truth) == doctest::Approx(ade(single.modes[0], truth)));

    // Exhaustive over 6 random modes.
    Rng rng(23);
    PredictionSet many;
    double best = 1e300;
    for (int m = 0; m < 6; ++m) {
        Trajectory mode;
        for (int i = 0; i < 2; ++i) mode.push_back({rng.normal(), rng.normal()});
        best = std::min(best, ade(mode, truth));
        many.modes.push_back(std::move(mode));
        many.mode_weights.push_back(1.0 / 6.0);
    }
    CHECK(min_ade(many, truth) == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("min_ade is never above any single mode's ade") {
    Rng rng(29);
    for (int trial = 0; trial < 30; ++trial) {
        PredictionSet ps;
        Trajectory truth;
        for (int i = 0; i < 5; ++i) truth.push_back({rng.normal(), rng.normal()});
        const int k = 1 + rng.uniform_int(6);
        for (int m = 0; m < k; ++m) {
            Trajectory mode;
            for (int i = 0; i < 5; ++i) mode.push_back({rng.normal(), rng.normal()});
            ps.modes.push_back(std::move(mode));
            ps.mode_weights.push_back(1.0 / k);
        }
        const double m = min_ade(ps, truth);
        for (const Trajectory& mode : ps.modes) CHECK(m <= ade(mode, truth) + 1e-12);
    }
}

TEST_CASE("avg_speed examples") {
    CHECK(avg_speed(log_with_speeds({6, 6, 6})) == doctest::Approx(6.0));
    CHECK(avg_speed(log_with_speeds({0, 6})) == doctest::Approx(3.0));
    std::vector<double> ramp;
    for (int i = 0; i < 100; ++i) ramp.push_back(6.0 * i / 99.0);
    CHECK(avg_speed(log_with_speeds(ramp)) == doctest::Approx(3.0).epsilon(0.02));
}

TEST_CASE("mean_jerk examples") {
    CHECK(mean_jerk(log_with_speeds({2, 2, 2, 2})) == 0.0);
    CHECK(mean_jerk(log_with_speeds({0, 1, 3})) == doctest::Approx(1.0));
    CHECK(mean_jerk(log_with_speeds({0, 1, 2, 3, 4})) == 0.0);  // constant acceleration
    CHECK_THROWS_AS(mean_jerk(log_with_speeds({0, 1})), std::invalid_argument);
}

TEST_CASE("safety_rate with no exo-agents is zero") {
    CHECK(safety_rate(log_with_speeds({1, 1, 1}), SafetyMode{}) == 0.0);
}

TEST_CASE("safety_rate counts overlap ticks") {
    EpisodeLog log;
    log.ticks_cfg.dt_sim = 0.03;
    log.agent_ids = {0, 1};
    log.agent_kinds = {AgentKind::ego, AgentKind::vehicle};
    for (int t = 0; t < 10; ++t) {
        AgentState ego;
        ego.pose = Pose2D(0, 0, 0);
        AgentState exo;
        exo.agent_id = 1;
        // Overlapping only at t == 0.
        exo.pose = Pose2D(t == 0 ? 1.0 : 50.0, 0, 0);
        log.ticks.push_back({ego, exo});
    }
    SafetyMode buffered;
    buffered.kind = SafetyMode::Kind::buffered_obb;
    buffered.buffer = 0.0;
    CHECK(safety_rate(log, buffered) == doctest::Approx(0.1));
}

TEST_CASE("safety_rate is monotone in epsilon") {
    // Grazing pass: the exo slides by at a lateral gap of about 0.7 m.
    EpisodeLog log;
    log.ticks_cfg.dt_sim = 0.03;
    log.agent_ids = {0, 1};
    log.agent_kinds = {AgentKind::ego, AgentKind::vehicle};
    for (int t = 0; t < 40; ++t) {
        AgentState ego;
        ego.pose = Pose2D(0, 0, 0);
        AgentState exo;
        exo.agent_id = 1;
        exo.pose = Pose2D(-10.0 + 0.5 * t, 2.5, 0);
        log.ticks.push_back({ego, exo});
    }
    SafetyMode tight;
    tight.epsilon = 0.5;
    SafetyMode loose;
    loose.epsilon = 1.0;
    CHECK(safety_rate(log, loose) >= safety_rate(log, tight));
    CHECK(safety_rate(log, loose) > 0.0);
}

TEST_CASE("normalize_cohort examples") {
    const std::vector<MetricRow> rows{raw_row(0.0, 2.0, 5.0), raw_row(0.05, 4.0, 5.0),
                                      raw_row(0.1, 6.0, 5.0)};
    const NormalizedCohort c = normalize_cohort(rows);
    CHECK(c.rows[0].efficiency == doctest::Approx(0.0));
    CHECK(c.rows[1].efficiency == doctest::Approx(0.5));
    CHECK(c.rows[2].efficiency == doctest::Approx(1.0));
    // Safety direction flips: lower collision rate scores higher.
    CHECK(c.rows[0].safety == doctest::Approx(1.0));
    CHECK(c.rows[2].safety == doctest::Approx(0.0));
    // Comfort column is degenerate: all 1.0 and flagged.
    CHECK(c.spec.comfort.degenerate);
    for (const NormalizedRow& r : c.rows) CHECK(r.comfort == 1.0);
    CHECK_FALSE(c.spec.efficiency.degenerate);
}

TEST_CASE("normalized outputs stay in [0,1] and argmax is rescale-invariant") {
    Rng rng(41);
    std::vector<MetricRow> rows;
    for (int i = 0; i < 8; ++i)
        rows.push_back(raw_row(rng.uniform(), rng.uniform(0.0, 6.0), rng.uniform(0.0, 3.0)));
    const NormalizedCohort base = normalize_cohort(rows);
    int argmax = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(base.rows[i].safety >= 0.0);
        CHECK(base.rows[i].safety <= 1.0);
        CHECK(base.rows[i].efficiency >= 0.0);
        CHECK(base.rows[i].efficiency <= 1.0);
        if (driving_performance(base.rows[i]) > driving_performance(base.rows[static_cast<std::size_t>(argmax)]))
            argmax = static_cast<int>(i);
    }
    // Positive affine rescale of one raw metric across the cohort.
    std::vector<MetricRow> scaled = rows;
    for (MetricRow& r : scaled) r.efficiency_raw = 3.7 * r.efficiency_raw + 11.0;
    const NormalizedCohort after = normalize_cohort(scaled);
    int argmax2 = 0;
    for (std::size_t i = 0; i < scaled.size(); ++i) {
        CHECK(after.rows[i].efficiency == doctest::Approx(base.rows[i].efficiency).epsilon(1e-9));
        if (driving_performance(after.rows[i]) > driving_performance(after.rows[static_cast<std::size_t>(argmax2)]))
            argmax2 = static_cast<int>(i);
    }
    CHECK(argmax == argmax2);
}

TEST_CASE("driving_performance is the mean of the three components") {
    CHECK(driving_performance({1.0, 1.0, 1.0}) == doctest::Approx(1.0));
    CHECK(driving_performance({1.0, 0.0, 0.5}) == doctest::Approx(0.5));
}

TEST_CASE("metric row CSV round-trip") {
    MetricRow r;
    r.scenario_id = "s001";
    r.predictor_id = "cv";
    r.planner_id = "rvo";
    r.safety_raw = 0.125;
    r.efficiency_raw = 4.5;
    r.comfort_raw = 0.75;
    r.dynamic_ade = 1.25;
    // other dynamic fields intentionally absent
    const std::string line = metric_row_to_csv(r);
    const MetricRow back = metric_row_from_csv(line);
    CHECK(back.scenario_id == "s001");
    CHECK(back.safety_raw == doctest::Approx(0.125));
    CHECK(back.dynamic_ade.has_value());
    CHECK_FALSE(back.dynamic_fde.has_value());
}

TEST_CASE("dynamic filters: closest_k no-op with one exo, fullobs subsets") {
    EpisodeLog log;
    log.ticks_cfg.dt_sim = 1.0;
    log.ticks_cfg.predictor_stride = 1;
    log.agent_ids = {0, 1};
    log.agent_kinds = {AgentKind::ego, AgentKind::vehicle};
    for (int t = 0; t < 60; ++t) {
        AgentState ego;
        ego.kind = AgentKind::ego;
        ego.pose = Pose2D(0, 50, 0);
        AgentState mover;
        mover.agent_id = 1;
        mover.pose = Pose2D(2.0 * t, 0, 0);
        log.ticks.push_back({ego, mover});
    }
    for (int t = 0; t < 40; ++t) {
        LoggedPrediction lp;
        lp.issue_tick = t;
        lp.agent_id = 1;
        lp.complete_history = t >= kHistoryFrames - 1;
        lp.ego_distance = 10.0;
        Trajectory mode;
        for (int j = 1; j <= kPredictionFrames; ++j)
            mode.push_back({2.0 * t + 2.0 * j + 0.5, 0.0});  // constant 0.5 m error
        lp.prediction.modes.push_back(std::move(mode));
        lp.prediction.mode_weights.push_back(1.0);
        log.predictions.push_back(std::move(lp));
    }
    const double plain = dynamic_prediction_error(log, DynamicMetric::ade, {});
    DynamicFilters closest;
    closest.closest_k = 1;
    CHECK(dynamic_prediction_error(log, DynamicMetric::ade, closest) == plain);
    DynamicFilters fullobs;
    fullobs.full_observation_only = true;
    CHECK(dynamic_prediction_error(log, DynamicMetric::ade, fullobs) ==
          doctest::Approx(0.5).epsilon(1e-12));
    CHECK(plain == doctest::Approx(0.5).epsilon(1e-12));
}
