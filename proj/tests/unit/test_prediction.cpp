#include <doctest.h>

#include <cmath>

#include "predloop/prediction.hpp"
#include "predloop/rng.hpp"

using namespace predloop;

namespace {

History make_history(const std::vector<Vec2>& positions, double heading = 0.0) {
    History h;
    h.agent_id = 1;
    for (std::size_t i = 0; i < positions.size(); ++i) {
        HistoryFrame f;
        f.tick = static_cast<int>(i) * 3;
        f.position = positions[i];
        f.heading = heading;
        f.speed = i > 0 ? (positions[i] - positions[i - 1]).norm() / 0.09 : 0.0;
        h.frames.push_back(f);
    }
    return h;
}

History straight_history(Vec2 start, Vec2 step, int n, double heading) {
    std::vector<Vec2> pts;
    for (int i = 0; i < n; ++i) pts.push_back(start + step * i);
    return make_history(pts, heading);
}

}  // namespace

TEST_CASE("predict_cv repeats the last displacement") {
    const History h = make_history({{0, 0}, {1, 0}});
    const PredictionSet ps = predict_cv(h, 1.0);
    ps.validate();
    CHECK(ps.num_modes() == 1);
    CHECK(ps.virtual_latency == doctest::Approx(0.001));
    for (int i = 0; i < kPredictionFrames; ++i) {
        CHECK(ps.modes[0][static_cast<std::size_t>(i)].x == doctest::Approx(2.0 + i));
        CHECK(ps.modes[0][static_cast<std::size_t>(i)].y == doctest::Approx(0.0));
    }
}

TEST_CASE("predict_cv stationary history stays put") {
    const History h = make_history({{2, 3}, {2, 3}, {2, 3}});
    const PredictionSet ps = predict_cv(h, 1.0);
    for (const Vec2& p : ps.modes[0]) {
        CHECK(p.x == doctest::Approx(2.0));
        CHECK(p.y == doctest::Approx(3.0));
    }
}

TEST_CASE("predict_cv needs two frames") {
    const History h = make_history({{0, 0}});
    CHECK_THROWS_AS(predict_cv(h, 1.0), InsufficientHistoryError);
}

TEST_CASE("predict_ca extrapolates acceleration") {
    const History h = make_history({{0, 0}, {1, 0}, {3, 0}});
    const PredictionSet ps = predict_ca(h, 1.0);
    // Displacements grow 3, 4, 5, ... along +x.
    Vec2 prev{3, 0};
    for (int i = 0; i < 5; ++i) {
        const Vec2 p = ps.modes[0][static_cast<std::size_t>(i)];
        CHECK((p - prev).norm() == doctest::Approx(3.0 + i));
        CHECK(p.y == doctest::Approx(0.0));
        prev = p;
    }
}

TEST_CASE("predict_ca equals predict_cv for constant velocity") {
    const History h = make_history({{0, 0}, {0.5, 0.5}, {1.0, 1.0}, {1.5, 1.5}});
    const PredictionSet cv = predict_cv(h, 1.0);
    const PredictionSet ca = predict_ca(h, 1.0);
    for (int i = 0; i < kPredictionFrames; ++i) {
        CHECK(ca.modes[0][static_cast<std::size_t>(i)].x ==
              doctest::Approx(cv.modes[0][static_cast<std::size_t>(i)].x).epsilon(1e-12));
        CHECK(ca.modes[0][static_cast<std::size_t>(i)].y ==
              doctest::Approx(cv.modes[0][static_cast<std::size_t>(i)].y).epsilon(1e-12));
    }
}

TEST_CASE("predict_ca floors the speed at zero") {
    const History h = make_history({{0, 0}, {3, 0}, {4, 0}});  // decelerating by 2 per frame
    const PredictionSet ps = predict_ca(h, 1.0);
    // First displacement already clamps to max(0, 1 - 2) = 0: frozen.
    for (const Vec2& p : ps.modes[0]) {
        CHECK(p.x == doctest::Approx(4.0));
        CHECK(p.y == doctest::Approx(0.0));
    }
}

TEST_CASE("knn returns an exact database match") {
    TrajectoryDatabase db;
    const History base = straight_history({0, 0}, {1, 0}, kHistoryFrames, 0.0);
    TrajectoryEntry e;
    e.feature = history_feature(base);
    for (int j = 0; j < kPredictionFrames; ++j) {
        e.future[2 * j] = 2.0;  // constant 2 m/frame straight ahead
        e.future[2 * j + 1] = 0.0;
    }
    db.add(e);
    // A decoy far away in feature space.
    TrajectoryEntry decoy = e;
    for (double& v : decoy.feature) v += 10.0;
    db.add(decoy);

    const PredictionSet ps = predict_knn(base, db, 1);
    CHECK(ps.num_modes() == 1);
    CHECK(ps.virtual_latency == doctest::Approx(0.224));
    const Vec2 last = base.last().position;
    for (int j = 0; j < kPredictionFrames; ++j) {
        CHECK(ps.modes[0][static_cast<std::size_t>(j)].x ==
              doctest::Approx(last.x + 2.0 * (j + 1)).epsilon(1e-12));
    }
}

TEST_CASE("knn clamps K to the database size and flags it") {
    TrajectoryDatabase db;
    const History base = straight_history({0, 0}, {1, 0}, kHistoryFrames, 0.0);
    TrajectoryEntry e;
    e.feature = history_feature(base);
    for (int j = 0; j < kPredictionFrames; ++j) e.future[2 * j] = 1.0;
    db.add(e);
    db.add(e);
    db.add(e);
    const PredictionSet ps = predict_knn(base, db, 6);
    CHECK(ps.num_modes() == 3);
    CHECK(ps.k_clamped);
    double sum = 0.0;
    for (double w : ps.mode_weights) sum += w;
    CHECK(sum == doctest::Approx(1.0));
}

TEST_CASE("knn errors on empty database and incomplete history") {
    TrajectoryDatabase db;
    const History base = straight_history({0, 0}, {1, 0}, kHistoryFrames, 0.0);
    CHECK_THROWS_AS(predict_knn(base, db, 1), EmptyDatabaseError);
    TrajectoryEntry e;
    db.add(e);
    const History incomplete = straight_history({0, 0}, {1, 0}, 5, 0.0);
    CHECK_THROWS_AS(predict_knn(incomplete, db, 1), InsufficientHistoryError);
}

TEST_CASE("knn matches exhaustive-scan nearest neighbors") {
    Rng rng(21);
    TrajectoryDatabase db;
    std::vector<std::array<double, 2 * (kHistoryFrames - 1)>> features;
    for (int n = 0; n < 100; ++n) {
        const double speed = rng.uniform(0.2, 3.0);
        const double heading = rng.uniform(-kPi, kPi);
        const History h =
            straight_history({rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0)},
                             Vec2::from_angle(heading) * speed, kHistoryFrames, heading);
        TrajectoryEntry e;
        e.feature = history_feature(h);
        for (int j = 0; j < kPredictionFrames; ++j) e.future[2 * j] = speed;
        features.push_back(e.feature);
        db.add(e);
    }
    // Curved query.
    std::vector<Vec2> pts;
    for (int i = 0; i < kHistoryFrames; ++i) {
        const double a = 0.08 * i;
        pts.push_back({10.0 * std::sin(a), 10.0 * (1.0 - std::cos(a))});
    }
    const History query = make_history(pts, 0.08 * (kHistoryFrames - 1));
    const auto qf = history_feature(query);

    // Independent exhaustive scan.
    std::vector<std::pair<double, int>> scored;
    for (int n = 0; n < 100; ++n) {
        double d = 0.0;
        for (std::size_t i = 0; i < qf.size(); ++i) {
            const double diff = qf[i] - features[static_cast<std::size_t>(n)][i];
            d += diff * diff;
        }
        scored.push_back({d, n});
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });

    const PredictionSet ps = predict_knn(query, db, 6);
    REQUIRE(ps.num_modes() == 6);
    const Vec2 origin = query.last().position;
    const double theta = query.last().heading;
    for (int m = 0; m < 6; ++m) {
        // Reconstruct the returned future's first step and compare with the
        // oracle entry's stored displacement mapped into the query frame.
        const int oracle_idx = scored[static_cast<std::size_t>(m)].second;
        const TrajectoryEntry& e = db.entry(static_cast<std::size_t>(oracle_idx));
        const Vec2 expected = origin + Vec2{e.future[0], e.future[1]}.rotated(theta);
        const Vec2 got = ps.modes[static_cast<std::size_t>(m)].front();
        CHECK((got - expected).norm() < 1e-9);
    }
}

TEST_CASE("sknn reduces to knn without neighbors and breaks ties socially") {
    TrajectoryDatabase db;
    const History base = straight_history({0, 0}, {1, 0}, kHistoryFrames, 0.0);
    TrajectoryEntry lonely;
    lonely.feature = history_feature(base);
    for (int j = 0; j < kPredictionFrames; ++j) lonely.future[2 * j] = 1.0;
    TrajectoryEntry social = lonely;
    social.neighbor_feature = {2.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    for (int j = 0; j < kPredictionFrames; ++j) social.future[2 * j] = 3.0;
    db.add(lonely);
    db.add(social);

    // No neighbors: identical ego features, zero-padded social feature picks
    // the lonely entry (insertion order on the remaining tie is irrelevant:
    // lonely has distance 0, social has 4).
    const PredictionSet empty_n = predict_sknn(base, {}, db, 1);
    CHECK((empty_n.modes[0].front() - Vec2{20.0, 0.0}).norm() < 1e-9);

    // A neighbor 2 m ahead matches the social entry exactly.
    const Vec2 neighbor = base.last().position + Vec2{2.0, 0.0};
    const PredictionSet with_n = predict_sknn(base, {neighbor}, db, 1);
    CHECK((with_n.modes[0].front() - Vec2{22.0, 0.0}).norm() < 1e-9);
    CHECK(with_n.virtual_latency == doctest::Approx(0.248));
}

TEST_CASE("knn outputs are equivariant under rigid transforms") {
    Rng rng(31);
    TrajectoryDatabase db;
    for (int n = 0; n < 40; ++n) {
        const double speed = rng.uniform(0.2, 3.0);
        const double heading = rng.uniform(-kPi, kPi);
        const History h =
            straight_history({rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)},
                             Vec2::from_angle(heading) * speed, kHistoryFrames, heading);
        TrajectoryEntry e;
        e.feature = history_feature(h);
        for (int j = 0; j < kPredictionFrames; ++j) {
            e.future[2 * j] = rng.uniform(0.0, 1.0);
            e.future[2 * j + 1] = rng.uniform(-0.2, 0.2);
        }
        db.add(e);
    }

    const History query = straight_history({1.0, 2.0}, {0.9, 0.3}, kHistoryFrames,
                                           std::atan2(0.3, 0.9));
    const PredictionSet base_ps = predict_knn(query, db, 3);

    const double rot = 1.1;
    const Vec2 shift{4.0, -7.0};
    History moved = query;
    for (HistoryFrame& f : moved.frames) {
        f.position = f.position.rotated(rot) + shift;
        f.heading = wrap_angle(f.heading + rot);
    }
    const PredictionSet moved_ps = predict_knn(moved, db, 3);
    REQUIRE(moved_ps.num_modes() == base_ps.num_modes());
    for (int m = 0; m < base_ps.num_modes(); ++m) {
        for (int j = 0; j < kPredictionFrames; ++j) {
            const Vec2 expected =
                base_ps.modes[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)].rotated(
                    rot) +
                shift;
            const Vec2 got =
                moved_ps.modes[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)];
            CHECK((got - expected).norm() < 1e-9);
        }
    }
}

TEST_CASE("noisy oracle noise magnitude is calibrated") {
    ExoScript script;
    script.agent_ids = {1};
    // Static agent for 400 ticks.
    AgentState a;
    a.agent_id = 1;
    a.pose = Pose2D(5.0, -3.0, 0.0);
    script.states.assign(400, {a});

    History h;
    h.agent_id = 1;
    HistoryFrame f;
    f.position = {5.0, -3.0};
    h.frames.push_back(f);

    double sum_sq = 0.0;
    long count = 0;
    for (int tick = 0; tick < 1700; ++tick) {
        PredictContext ctx;
        ctx.script = &script;
        ctx.tick = tick % 300;
        ctx.stride = 3;
        ctx.episode_seed = static_cast<std::uint64_t>(tick) * 977 + 13;
        const PredictionSet ps = predict_noisy_oracle(h, ctx, 1.0, 0.0);
        for (const Vec2& p : ps.modes[0]) {
            sum_sq += (p.x - 5.0) * (p.x - 5.0) + (p.y + 3.0) * (p.y + 3.0);
            count += 2;
        }
    }
    const double rms = std::sqrt(sum_sq / static_cast<double>(count));
    CHECK(rms == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("noisy oracle with zero sigma returns the script exactly") {
    ExoScript script;
    script.agent_ids = {7};
    for (int t = 0; t < 200; ++t) {
        AgentState a;
        a.agent_id = 7;
        a.pose = Pose2D(0.1 * t, 0.05 * t, 0.0);
        script.states.push_back({a});
    }
    History h;
    h.agent_id = 7;
    HistoryFrame f;
    f.position = {0, 0};
    h.frames.push_back(f);
    PredictContext ctx;
    ctx.script = &script;
    ctx.tick = 9;
    ctx.stride = 3;
    ctx.episode_seed = 42;
    const PredictionSet ps = predict_noisy_oracle(h, ctx, 0.0, 0.5);
    CHECK(ps.virtual_latency == doctest::Approx(0.5));
    for (int j = 1; j <= kPredictionFrames; ++j) {
        const int tick = 9 + 3 * j;
        CHECK(ps.modes[0][static_cast<std::size_t>(j - 1)].x == doctest::Approx(0.1 * tick));
        CHECK(ps.modes[0][static_cast<std::size_t>(j - 1)].y == doctest::Approx(0.05 * tick));
    }
}

TEST_CASE("trajectory database round-trips bit-exactly") {
    Rng rng(99);
    TrajectoryDatabase db;
    for (int n = 0; n < 5; ++n) {
        TrajectoryEntry e;
        for (double& v : e.feature) v = rng.normal();
        for (double& v : e.neighbor_feature) v = rng.normal();
        for (double& v : e.future) v = rng.normal();
        db.add(e);
    }
    const std::string path = "/tmp/predloop_db_test.csv";
    db.save_csv(path);
    const TrajectoryDatabase loaded = TrajectoryDatabase::load_csv(path);
    REQUIRE(loaded.size() == db.size());
    for (std::size_t i = 0; i < db.size(); ++i) {
        for (std::size_t j = 0; j < db.entry(i).feature.size(); ++j)
            CHECK(loaded.entry(i).feature[j] == db.entry(i).feature[j]);
        for (std::size_t j = 0; j < db.entry(i).future.size(); ++j)
            CHECK(loaded.entry(i).future[j] == db.entry(i).future[j]);
        for (std::size_t j = 0; j < 6; ++j)
            CHECK(loaded.entry(i).neighbor_feature[j] == db.entry(i).neighbor_feature[j]);
    }
}
