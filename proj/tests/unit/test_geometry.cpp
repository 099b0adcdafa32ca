#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "predloop/geometry.hpp"
#include "predloop/rng.hpp"

using namespace predloop;

namespace {

// Dense inclusive point-sampling oracle: any point of one rectangle (grid over
// the interior, corners and edges included) inside the other means overlap.
bool obb_intersect_oracle(const OrientedBox& a, const OrientedBox& b, int grid = 200) {
    if ((a.center - b.center).norm() > a.circumradius() + b.circumradius()) return false;
    auto contains = [](const OrientedBox& box, const Vec2& p) {
        const Vec2 r = (p - box.center).rotated(-box.heading);
        return std::abs(r.x) <= box.half_length && std::abs(r.y) <= box.half_width;
    };
    auto scan = [&](const OrientedBox& src, const OrientedBox& dst) {
        for (int i = 0; i <= grid; ++i) {
            const double u = -src.half_length + 2.0 * src.half_length * i / grid;
            for (int j = 0; j <= grid; ++j) {
                const double v = -src.half_width + 2.0 * src.half_width * j / grid;
                const Vec2 p = src.center + Vec2{u, v}.rotated(src.heading);
                if (contains(dst, p)) return true;
            }
        }
        return false;
    };
    return scan(a, b) || scan(b, a);
}

OrientedBox random_box(Rng& rng) {
    OrientedBox box;
    box.center = {rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0)};
    box.heading = rng.uniform(-kPi, kPi);
    box.half_length = rng.uniform(0.15, 2.5);
    box.half_width = rng.uniform(0.15, 1.5);
    return box;
}

AgentState make_agent(double x, double y, double heading, double speed) {
    AgentState a;
    a.pose = Pose2D(x, y, heading);
    a.speed = speed;
    return a;
}

}  // namespace

TEST_CASE("wrap_angle lands in (-pi, pi]") {
    CHECK(wrap_angle(kPi) == doctest::Approx(kPi));
    CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
    CHECK(wrap_angle(3.0 * kPi) == doctest::Approx(kPi));
    CHECK(wrap_angle(0.0) == 0.0);
    Rng rng(7);
    for (int i = 0; i < 1000; ++i) {
        const double a = wrap_angle(rng.uniform(-50.0, 50.0));
        CHECK(a > -kPi);
        CHECK(a <= kPi);
    }
}

TEST_CASE("bicycle_step straight-line identity") {
    const AgentState s = make_agent(0, 0, 0, 1.0);
    const AgentState next = bicycle_step(s, 0.0, 0.0, 1.0, 2.8);
    CHECK(next.pose.x == doctest::Approx(1.0));
    CHECK(next.pose.y == doctest::Approx(0.0));
    CHECK(next.pose.heading == 0.0);
    CHECK(next.speed == doctest::Approx(1.0));
}

TEST_CASE("bicycle_step forward-Euler scheme") {
    const AgentState s = make_agent(0, 0, 0, 1.0);
    const AgentState next = bicycle_step(s, 1.0, 0.0, 1.0, 2.8);
    CHECK(next.pose.x == doctest::Approx(1.0));  // x uses the pre-update speed
    CHECK(next.speed == doctest::Approx(2.0));
}

TEST_CASE("bicycle_step heading update vs fine integrator") {
    const AgentState s = make_agent(0, 0, 0, 2.0);
    const double steer = 0.1, wheelbase = 2.8, dt = 0.03;
    const AgentState next = bicycle_step(s, 0.0, steer, dt, wheelbase);
    CHECK(next.pose.heading == doctest::Approx((2.0 / 2.8) * std::tan(0.1) * 0.03).epsilon(1e-12));

    // 1000-substep integration of the same kinematics.
    double theta = 0.0;
    const double h = dt / 1000.0;
    for (int i = 0; i < 1000; ++i) theta += (2.0 / wheelbase) * std::tan(steer) * h;
    CHECK(std::abs(next.pose.heading - theta) < 1e-4);
}

TEST_CASE("bicycle_step rejects non-finite input and clamps speed") {
    const AgentState s = make_agent(0, 0, 0, 1.0);
    CHECK_THROWS_AS(bicycle_step(s, std::nan(""), 0.0, 1.0, 2.8), std::invalid_argument);
    CHECK_THROWS_AS(bicycle_step(s, 0.0, 0.0, -1.0, 2.8), std::invalid_argument);
    const AgentState brake = bicycle_step(s, -10.0, 0.0, 1.0, 2.8);
    CHECK(brake.speed == 0.0);
    const AgentState cap = bicycle_step(make_agent(0, 0, 0, 5.9), 10.0, 0.0, 1.0, 2.8, 6.0);
    CHECK(cap.speed == 6.0);
}

TEST_CASE("bicycle_step heading stays normalized over long turns") {
    AgentState s = make_agent(0, 0, 0, 5.0);
    for (int i = 0; i < 5000; ++i) {
        s = bicycle_step(s, 0.0, 0.5, 0.03, 2.8);
        CHECK(s.pose.heading > -kPi);
        CHECK(s.pose.heading <= kPi);
    }
}

TEST_CASE("pure_pursuit_steer on-path aligned is exactly zero") {
    const ReferencePath path = ReferencePath::line({0, 0}, {50, 0});
    const AgentState s = make_agent(5.0, 0.0, 0.0, 2.0);
    CHECK(pure_pursuit_steer(s, path, 3.0) == 0.0);
}

TEST_CASE("pure_pursuit_steer turns toward the path") {
    const ReferencePath path = ReferencePath::line({0, 0}, {50, 0});
    // 1 m left of the path, heading parallel: the correction is a rightward
    // (negative, clockwise) steer under the CCW-positive convention.
    const AgentState left = make_agent(5.0, 1.0, 0.0, 2.0);
    CHECK(pure_pursuit_steer(left, path, 3.0) < 0.0);
    const AgentState right = make_agent(5.0, -1.0, 0.0, 2.0);
    CHECK(pure_pursuit_steer(right, path, 3.0) > 0.0);
}

TEST_CASE("pure_pursuit_steer matches the curvature formula") {
    // Projection of the origin onto y=3 plus a 3 m lookahead targets (3, 3).
    const ReferencePath path = ReferencePath::line({0, 3}, {30, 3});
    const AgentState s = make_agent(0.0, 0.0, 0.0, 2.0);
    const double ld = std::sqrt(18.0);
    const double expected = std::atan(2.0 * 2.8 * std::sin(kPi / 4.0) / ld);
    CHECK(pure_pursuit_steer(s, path, 3.0, 2.8, 2.0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("pure_pursuit_steer targets the final waypoint near the path end") {
    const ReferencePath path = ReferencePath::line({0, 0}, {10, 0});
    const AgentState s = make_agent(9.5, 0.0, 0.0, 1.0);
    CHECK(pure_pursuit_steer(s, path, 5.0) == 0.0);
    // Degenerate: standing on the final waypoint.
    const AgentState end = make_agent(10.0, 0.0, 0.0, 1.0);
    CHECK(pure_pursuit_steer(end, path, 5.0) == 0.0);
}

TEST_CASE("obb_corners_with_buffer extends the length direction only") {
    const OrientedBox box{{0, 0}, 0.0, 0.5, 0.5};
    const auto plain = obb_corners_with_buffer(box, 0.0);
    for (const Vec2& c : plain) {
        CHECK(std::abs(c.x) == doctest::Approx(0.5));
        CHECK(std::abs(c.y) == doctest::Approx(0.5));
    }
    const auto buffered = obb_corners_with_buffer(box, 0.5);
    for (const Vec2& c : buffered) {
        CHECK(std::abs(c.x) == doctest::Approx(1.0));
        CHECK(std::abs(c.y) == doctest::Approx(0.5));
    }
    const OrientedBox rotated{{0, 0}, kPi / 2.0, 1.0, 0.5};
    for (const Vec2& c : obb_corners_with_buffer(rotated, 0.0)) {
        CHECK(std::abs(c.x) == doctest::Approx(0.5));
        CHECK(std::abs(c.y) == doctest::Approx(1.0));
    }
}

TEST_CASE("obb corners are counter-clockwise") {
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        const OrientedBox box = random_box(rng);
        const auto c = box.corners();
        double area2 = 0.0;
        for (int k = 0; k < 4; ++k) area2 += c[k].cross(c[(k + 1) % 4]);
        CHECK(area2 > 0.0);
    }
}

TEST_CASE("obb_intersect basics") {
    const OrientedBox unit{{0, 0}, 0.0, 0.5, 0.5};
    CHECK(obb_intersect(unit, unit));
    OrientedBox far = unit;
    far.center = {10, 0};
    CHECK_FALSE(obb_intersect(unit, far));
    // Touching edges count as intersecting.
    OrientedBox touch = unit;
    touch.center = {1.0, 0};
    CHECK(obb_intersect(unit, touch));
}

TEST_CASE("obb_intersect agrees with the point-sampling oracle") {
    Rng rng(11);
    int disagreements = 0;
    for (int i = 0; i < 1000; ++i) {
        const OrientedBox a = random_box(rng);
        const OrientedBox b = random_box(rng);
        const bool sat = obb_intersect(a, b);
        CHECK(sat == obb_intersect(b, a));  // symmetry
        if (sat != obb_intersect_oracle(a, b, 200)) {
            ++disagreements;
            CHECK(std::abs(obb_separation_margin(a, b)) <= 1e-9);
        }
    }
    CHECK(disagreements <= 1);
}

TEST_CASE("buffer monotonicity of intersection") {
    Rng rng(13);
    for (int i = 0; i < 300; ++i) {
        const OrientedBox a = random_box(rng);
        OrientedBox b = random_box(rng);
        b.center = a.center + Vec2{rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)};
        const double beta = rng.uniform(0.0, 1.0);
        if (obb_intersect(a.with_length_buffer(beta), b.with_length_buffer(beta))) {
            const double beta2 = beta + rng.uniform(0.0, 1.0);
            CHECK(obb_intersect(a.with_length_buffer(beta2), b.with_length_buffer(beta2)));
        }
    }
}

TEST_CASE("obb_distance is zero on overlap and exact for aligned gaps") {
    const OrientedBox a{{0, 0}, 0.0, 1.0, 0.5};
    const OrientedBox b{{5, 0}, 0.0, 1.0, 0.5};
    CHECK(obb_distance(a, b) == doctest::Approx(3.0));
    const OrientedBox c{{0.5, 0}, 0.0, 1.0, 0.5};
    CHECK(obb_distance(a, c) == 0.0);
}

TEST_CASE("path_query basics and tie-break") {
    const ReferencePath path = ReferencePath::line({0, 0}, {50, 0});
    const PathQuery origin = path_query(path, {0, 0});
    CHECK(origin.arc_length == doctest::Approx(0.0));
    CHECK(origin.lateral_offset == doctest::Approx(0.0));
    CHECK(origin.nearest_index == 0);

    const PathQuery left = path_query(path, {10, 2});
    CHECK(left.arc_length == doctest::Approx(10.0));
    CHECK(left.lateral_offset == doctest::Approx(2.0));
    CHECK(left.nearest_index == 20);  // 0.5 m spacing

    const PathQuery right = path_query(path, {10, -2});
    CHECK(right.lateral_offset == doctest::Approx(-2.0));

    // Equidistant between waypoints 0 and 1: the smaller arc length wins.
    const PathQuery tie = path_query(path, {0.25, 1.0});
    CHECK(tie.nearest_index == 0);
}

TEST_CASE("project_near equals project when the hint is close") {
    const ReferencePath path = ReferencePath::line({0, 0}, {60, 0});
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const Vec2 p{rng.uniform(0.0, 60.0), rng.uniform(-2.0, 2.0)};
        const PathQuery full = path.project(p);
        const PathQuery near = path.project_near(p, full.arc_length + rng.uniform(-2.0, 2.0), 6.0);
        CHECK(near.arc_length == doctest::Approx(full.arc_length).epsilon(1e-12));
        CHECK(near.lateral_offset == doctest::Approx(full.lateral_offset).epsilon(1e-12));
    }
}

TEST_CASE("reference path construction validates spacing") {
    CHECK_THROWS_AS(ReferencePath({Vec2{0, 0}, Vec2{5, 0}}), std::invalid_argument);
    const ReferencePath arc = ReferencePath::arc({0, 0}, 10.0, 0.0, kPi);
    CHECK(arc.total_length() == doctest::Approx(kPi * 10.0).epsilon(1e-3));
}
