#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "predloop/vec2.hpp"

namespace predloop {

struct Pose2D {
    double x = 0.0;
    double y = 0.0;
    double heading = 0.0;  // radians, kept in (-pi, pi]

    Pose2D() = default;
    Pose2D(double x_, double y_, double heading_) : x(x_), y(y_), heading(wrap_angle(heading_)) {}

    Vec2 position() const { return {x, y}; }
};

enum class AgentKind : std::uint8_t { ego = 0, vehicle = 1, cyclist = 2, pedestrian = 3 };

const char* kind_name(AgentKind k);
AgentKind kind_from_name(const std::string& name);

/// Hard speed cap per kind, m/s.
double kind_max_speed(AgentKind k);

struct Footprint {
    double length = 4.4;  // m, > 0
    double width = 1.8;   // m, > 0
};

Footprint default_footprint(AgentKind k);

struct OrientedBox {
    Vec2 center;
    double heading = 0.0;
    double half_length = 0.0;
    double half_width = 0.0;

    /// Corners in counter-clockwise order starting at (+hl, +hw) in box frame.
    std::array<Vec2, 4> corners() const;

    /// Box grown by `buffer` in the length direction only (heading-aligned).
    OrientedBox with_length_buffer(double buffer) const;

    /// Radius of the circumscribed disc (half the footprint diagonal).
    double circumradius() const { return std::sqrt(half_length * half_length + half_width * half_width); }
};

struct AgentState {
    Pose2D pose;
    double speed = 0.0;  // m/s, >= 0
    Footprint footprint;
    int agent_id = 0;
    AgentKind kind = AgentKind::vehicle;

    Vec2 position() const { return pose.position(); }
    Vec2 velocity() const { return Vec2::from_angle(pose.heading) * speed; }
    OrientedBox box() const {
        return {pose.position(), pose.heading, footprint.length * 0.5, footprint.width * 0.5};
    }
};

/// Corners of `box` buffered in the length direction only.
std::array<Vec2, 4> obb_corners_with_buffer(const OrientedBox& box, double buffer);

/// Separating-axis overlap test over the four face normals. Touching edges
/// count as intersecting.
bool obb_intersect(const OrientedBox& a, const OrientedBox& b);

/// Minimum distance between the two rectangles (0 when they intersect).
double obb_distance(const OrientedBox& a, const OrientedBox& b);

/// Signed SAT margin: most positive separation over the four axes when
/// disjoint (> 0), deepest penetration (< 0) when overlapping. Zero at
/// tangency. Used by tests to qualify disagreements near touching boxes.
double obb_separation_margin(const OrientedBox& a, const OrientedBox& b);

struct PathQuery {
    double arc_length = 0.0;
    double lateral_offset = 0.0;  // left of travel direction is positive
    int nearest_index = 0;
};

/// Polyline reference path with waypoint spacing <= 1 m and monotone arc
/// length. Built by resampling geometric primitives at fixed spacing.
class ReferencePath {
public:
    ReferencePath() = default;
    explicit ReferencePath(std::vector<Vec2> waypoints);

    static ReferencePath line(const Vec2& a, const Vec2& b, double spacing = 0.5);
    /// Circular arc from angle a0 to a1 (radians, either direction).
    static ReferencePath arc(const Vec2& center, double radius, double a0, double a1,
                             double spacing = 0.5);
    /// Resample a coarse polyline at uniform spacing.
    static ReferencePath polyline(const std::vector<Vec2>& points, double spacing = 0.5);

    bool empty() const { return waypoints_.empty(); }
    std::size_t size() const { return waypoints_.size(); }
    const std::vector<Vec2>& waypoints() const { return waypoints_; }
    double total_length() const { return lengths_.empty() ? 0.0 : lengths_.back(); }

    Vec2 point_at(double s) const;
    Vec2 tangent_at(double s) const;
    Pose2D pose_at(double s) const;

    PathQuery project(const Vec2& point) const;

    /// Projection restricted to segments within `window` meters of arc length
    /// `hint_arc`. Equal to project() whenever the true closest point lies in
    /// the window; used on hot paths where motion between queries is small.
    PathQuery project_near(const Vec2& point, double hint_arc, double window) const;

private:
    PathQuery project_range(const Vec2& point, std::size_t first_seg, std::size_t last_seg) const;

    std::vector<Vec2> waypoints_;
    std::vector<double> lengths_;  // cumulative arc length per waypoint
};

/// Closest-point query against a path; ties broken toward smaller arc length.
PathQuery path_query(const ReferencePath& path, const Vec2& point);

/// Forward-Euler bicycle-model step. Speed is clamped to [0, v_max], the
/// steering angle to [-max_steer, max_steer], and the heading renormalized.
/// Non-finite inputs are rejected with std::invalid_argument.
AgentState bicycle_step(const AgentState& state, double accel, double steer, double dt,
                        double wheelbase, double v_max = 6.0, double max_steer = 0.6);

/// Pure-pursuit steering toward the path point one lookahead ahead of the
/// projection of `state` onto `path`; targets the final waypoint when the
/// path end is within the lookahead. Positive steer turns counter-clockwise.
double pure_pursuit_steer(const AgentState& state, const ReferencePath& path, double lookahead,
                          double wheelbase = 2.8, double max_steer = 0.6);

}  // namespace predloop
