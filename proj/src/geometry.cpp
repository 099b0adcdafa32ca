#include "predloop/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace predloop {

double segment_segment_distance(const Vec2& a1, const Vec2& a2, const Vec2& b1, const Vec2& b2) {
    // Proper crossing means distance zero.
    const Vec2 da = a2 - a1, db = b2 - b1;
    const double denom = da.cross(db);
    if (denom != 0.0) {
        const double t = (b1 - a1).cross(db) / denom;
        const double u = (b1 - a1).cross(da) / denom;
        if (t >= 0.0 && t <= 1.0 && u >= 0.0 && u <= 1.0) return 0.0;
    }
    double d = point_segment_distance(a1, b1, b2);
    d = std::min(d, point_segment_distance(a2, b1, b2));
    d = std::min(d, point_segment_distance(b1, a1, a2));
    d = std::min(d, point_segment_distance(b2, a1, a2));
    return d;
}

const char* kind_name(AgentKind k) {
    switch (k) {
        case AgentKind::ego: return "ego";
        case AgentKind::vehicle: return "vehicle";
        case AgentKind::cyclist: return "cyclist";
        case AgentKind::pedestrian: return "pedestrian";
    }
    return "vehicle";
}

AgentKind kind_from_name(const std::string& name) {
    if (name == "ego") return AgentKind::ego;
    if (name == "vehicle") return AgentKind::vehicle;
    if (name == "cyclist") return AgentKind::cyclist;
    if (name == "pedestrian") return AgentKind::pedestrian;
    throw std::invalid_argument("unknown agent kind: " + name);
}

double kind_max_speed(AgentKind k) {
    switch (k) {
        case AgentKind::ego: return 6.0;
        case AgentKind::vehicle: return 6.0;
        case AgentKind::cyclist: return 3.0;
        case AgentKind::pedestrian: return 2.0;
    }
    return 6.0;
}

Footprint default_footprint(AgentKind k) {
    switch (k) {
        case AgentKind::ego: return {4.4, 1.8};
        case AgentKind::vehicle: return {4.4, 1.8};
        case AgentKind::cyclist: return {1.8, 0.6};
        case AgentKind::pedestrian: return {0.5, 0.5};
    }
    return {4.4, 1.8};
}

std::array<Vec2, 4> OrientedBox::corners() const {
    const Vec2 u = Vec2::from_angle(heading);   // length axis
    const Vec2 v = u.perp();                    // width axis
    const Vec2 l = u * half_length, w = v * half_width;
    return {center + l + w, center - l + w, center - l - w, center + l - w};
}

OrientedBox OrientedBox::with_length_buffer(double buffer) const {
    return {center, heading, half_length + buffer, half_width};
}

std::array<Vec2, 4> obb_corners_with_buffer(const OrientedBox& box, double buffer) {
    if (buffer < 0.0) throw std::invalid_argument("obb_corners_with_buffer: negative buffer");
    return box.with_length_buffer(buffer).corners();
}

namespace {

// Separation of centers along `axis` minus the summed projected extents.
// Positive means the axis separates the boxes.
double axis_gap(const Vec2& axis, const OrientedBox& a, const OrientedBox& b) {
    const Vec2 ua = Vec2::from_angle(a.heading), ub = Vec2::from_angle(b.heading);
    const double ext_a =
        a.half_length * std::abs(axis.dot(ua)) + a.half_width * std::abs(axis.dot(ua.perp()));
    const double ext_b =
        b.half_length * std::abs(axis.dot(ub)) + b.half_width * std::abs(axis.dot(ub.perp()));
    return std::abs(axis.dot(b.center - a.center)) - (ext_a + ext_b);
}

}  // namespace

double obb_separation_margin(const OrientedBox& a, const OrientedBox& b) {
    const Vec2 ua = Vec2::from_angle(a.heading), ub = Vec2::from_angle(b.heading);
    const Vec2 axes[4] = {ua, ua.perp(), ub, ub.perp()};
    double margin = -std::numeric_limits<double>::infinity();
    for (const Vec2& axis : axes) margin = std::max(margin, axis_gap(axis, a, b));
    return margin;
}

bool obb_intersect(const OrientedBox& a, const OrientedBox& b) {
    return obb_separation_margin(a, b) <= 0.0;
}

double obb_distance(const OrientedBox& a, const OrientedBox& b) {
    if (obb_intersect(a, b)) return 0.0;
    const auto ca = a.corners(), cb = b.corners();
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            best = std::min(best, segment_segment_distance(ca[i], ca[(i + 1) % 4], cb[j],
                                                           cb[(j + 1) % 4]));
        }
    }
    return best;
}

ReferencePath::ReferencePath(std::vector<Vec2> waypoints) : waypoints_(std::move(waypoints)) {
    if (waypoints_.empty()) throw std::invalid_argument("ReferencePath: no waypoints");
    lengths_.resize(waypoints_.size());
    lengths_[0] = 0.0;
    for (std::size_t i = 1; i < waypoints_.size(); ++i) {
        const double step = (waypoints_[i] - waypoints_[i - 1]).norm();
        if (step <= 0.0) throw std::invalid_argument("ReferencePath: zero-length segment");
        if (step > 1.0 + 1e-9) throw std::invalid_argument("ReferencePath: spacing above 1 m");
        lengths_[i] = lengths_[i - 1] + step;
    }
}

ReferencePath ReferencePath::line(const Vec2& a, const Vec2& b, double spacing) {
    return polyline({a, b}, spacing);
}

ReferencePath ReferencePath::arc(const Vec2& center, double radius, double a0, double a1,
                                 double spacing) {
    const double span = a1 - a0;
    const double arc_len = std::abs(span) * radius;
    const int n = std::max(2, static_cast<int>(std::ceil(arc_len / spacing)) + 1);
    std::vector<Vec2> pts;
    pts.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double t = a0 + span * (static_cast<double>(i) / (n - 1));
        pts.push_back(center + Vec2::from_angle(t) * radius);
    }
    return ReferencePath(std::move(pts));
}

ReferencePath ReferencePath::polyline(const std::vector<Vec2>& points, double spacing) {
    if (points.size() < 2) throw std::invalid_argument("polyline: need at least 2 points");
    double total = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) total += (points[i] - points[i - 1]).norm();
    const int n = std::max(2, static_cast<int>(std::ceil(total / spacing)) + 1);
    std::vector<Vec2> pts;
    pts.reserve(static_cast<std::size_t>(n));
    // Walk the polyline at uniform arc-length steps.
    std::size_t seg = 1;
    double seg_start = 0.0;
    double seg_len = (points[1] - points[0]).norm();
    for (int i = 0; i < n; ++i) {
        const double s = total * (static_cast<double>(i) / (n - 1));
        while (seg + 1 < points.size() && s > seg_start + seg_len) {
            seg_start += seg_len;
            ++seg;
            seg_len = (points[seg] - points[seg - 1]).norm();
        }
        const double t = seg_len > 0.0 ? std::clamp((s - seg_start) / seg_len, 0.0, 1.0) : 0.0;
        pts.push_back(points[seg - 1] + (points[seg] - points[seg - 1]) * t);
    }
    return ReferencePath(std::move(pts));
}

Vec2 ReferencePath::point_at(double s) const {
    if (waypoints_.empty()) throw std::logic_error("point_at on empty path");
    if (s <= 0.0) return waypoints_.front();
    if (s >= total_length()) return waypoints_.back();
    const auto it = std::upper_bound(lengths_.begin(), lengths_.end(), s);
    const std::size_t i = static_cast<std::size_t>(it - lengths_.begin());
    const double seg_len = lengths_[i] - lengths_[i - 1];
    const double t = (s - lengths_[i - 1]) / seg_len;
    return waypoints_[i - 1] + (waypoints_[i] - waypoints_[i - 1]) * t;
}

Vec2 ReferencePath::tangent_at(double s) const {
    if (waypoints_.size() < 2) return {1.0, 0.0};
    std::size_t i;
    if (s <= 0.0) {
        i = 1;
    } else if (s >= total_length()) {
        i = waypoints_.size() - 1;
    } else {
        i = static_cast<std::size_t>(std::upper_bound(lengths_.begin(), lengths_.end(), s) -
                                     lengths_.begin());
        if (i >= waypoints_.size()) i = waypoints_.size() - 1;
    }
    return (waypoints_[i] - waypoints_[i - 1]).normalized();
}

Pose2D ReferencePath::pose_at(double s) const {
    const Vec2 p = point_at(s);
    const Vec2 t = tangent_at(s);
    return {p.x, p.y, std::atan2(t.y, t.x)};
}

PathQuery ReferencePath::project_range(const Vec2& point, std::size_t first_seg,
                                       std::size_t last_seg) const {
    PathQuery best;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = first_seg; i <= last_seg && i + 1 < waypoints_.size(); ++i) {
        const Vec2 a = waypoints_[i], b = waypoints_[i + 1];
        const Vec2 ab = b - a;
        const double len_sq = ab.norm_sq();
        double t = len_sq > 0.0 ? (point - a).dot(ab) / len_sq : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const Vec2 proj = a + ab * t;
        const double dist = (point - proj).norm();
        const double s = lengths_[i] + t * std::sqrt(len_sq);
        // Strict improvement keeps the smaller arc length on ties.
        if (dist < best_dist - 1e-12) {
            best_dist = dist;
            best.arc_length = s;
            const double side = ab.normalized().cross(point - proj);
            best.lateral_offset = side >= 0.0 ? dist : -dist;
        }
    }
    // Nearest waypoint by distance, ties to the smaller index.
    double best_wp = std::numeric_limits<double>::infinity();
    const std::size_t wp_last = std::min(last_seg + 1, waypoints_.size() - 1);
    for (std::size_t i = first_seg; i <= wp_last; ++i) {
        const double d = (point - waypoints_[i]).norm();
        if (d < best_wp - 1e-12) {
            best_wp = d;
            best.nearest_index = static_cast<int>(i);
        }
    }
    return best;
}

PathQuery ReferencePath::project(const Vec2& point) const {
    if (waypoints_.empty()) throw std::logic_error("project on empty path");
    if (waypoints_.size() == 1) {
        PathQuery q;
        q.arc_length = 0.0;
        q.lateral_offset = (point - waypoints_[0]).norm();
        q.nearest_index = 0;
        return q;
    }
    return project_range(point, 0, waypoints_.size() - 2);
}

PathQuery ReferencePath::project_near(const Vec2& point, double hint_arc, double window) const {
    if (waypoints_.empty()) throw std::logic_error("project_near on empty path");
    if (waypoints_.size() == 1) return project(point);
    const double lo = std::max(0.0, hint_arc - window);
    const double hi = std::min(total_length(), hint_arc + window);
    std::size_t first =
        static_cast<std::size_t>(std::upper_bound(lengths_.begin(), lengths_.end(), lo) -
                                 lengths_.begin()) -
        1;
    if (first > waypoints_.size() - 2) first = waypoints_.size() - 2;
    std::size_t last = static_cast<std::size_t>(
        std::upper_bound(lengths_.begin(), lengths_.end(), hi) - lengths_.begin());
    if (last >= waypoints_.size() - 1) last = waypoints_.size() - 2;
    return project_range(point, first, last);
}

PathQuery path_query(const ReferencePath& path, const Vec2& point) { return path.project(point); }

AgentState bicycle_step(const AgentState& state, double accel, double steer, double dt,
                        double wheelbase, double v_max, double max_steer) {
    if (!std::isfinite(accel) || !std::isfinite(steer) || !std::isfinite(dt) ||
        !std::isfinite(wheelbase) || !std::isfinite(state.pose.x) ||
        !std::isfinite(state.pose.y) || !std::isfinite(state.pose.heading) ||
        !std::isfinite(state.speed)) {
        throw std::invalid_argument("bicycle_step: non-finite input");
    }
    if (dt <= 0.0) throw std::invalid_argument("bicycle_step: dt must be positive");
    if (wheelbase <= 0.0) throw std::invalid_argument("bicycle_step: wheelbase must be positive");
    steer = std::clamp(steer, -max_steer, max_steer);

    AgentState next = state;
    const double v = state.speed;
    const double theta = state.pose.heading;
    next.pose.x = state.pose.x + v * std::cos(theta) * dt;
    next.pose.y = state.pose.y + v * std::sin(theta) * dt;
    next.pose.heading = wrap_angle(theta + (v / wheelbase) * std::tan(steer) * dt);
    next.speed = std::clamp(v + accel * dt, 0.0, v_max);
    return next;
}

double pure_pursuit_steer(const AgentState& state, const ReferencePath& path, double lookahead,
                          double wheelbase, double max_steer) {
    if (path.empty()) throw std::invalid_argument("pure_pursuit_steer: empty path");
    if (lookahead <= 0.0) throw std::invalid_argument("pure_pursuit_steer: lookahead must be positive");
    const PathQuery q = path.project(state.position());
    const double s_target = std::min(q.arc_length + lookahead, path.total_length());
    const Vec2 target = path.point_at(s_target);
    const Vec2 rel = (target - state.position()).rotated(-state.pose.heading);
    const double ld_sq = rel.norm_sq();
    if (ld_sq < 1e-12) return 0.0;
    // Pure-pursuit curvature: kappa = 2 sin(alpha) / ld = 2 y / ld^2.
    const double curvature = 2.0 * rel.y / ld_sq;
    return std::clamp(std::atan(curvature * wheelbase), -max_steer, max_steer);
}

}  // namespace predloop
