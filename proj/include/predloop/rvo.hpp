#pragma once

#include <stdexcept>
#include <vector>

#include "predloop/world.hpp"

namespace predloop {

class AgentOverlapError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Truncated velocity-obstacle cone in velocity space. Membership of a
/// velocity v is defined through the collision ray: v is inside iff the point
/// swept by scale*(v - apex) over the time horizon passes within
/// combined_radius of the obstacle disc. scale is 1 for a VO and doubles per
/// reciprocal transform, keeping membership the exact affine image of the VO.
struct VelocityObstacleCone {
    Vec2 apex;            // v_B for a VO
    Vec2 left_leg;        // unit tangent directions, legs span (0, pi)
    Vec2 right_leg;
    int source_agent = 0;
    Vec2 disc_center;     // p_B - p_A
    double combined_radius = 0.0;
    double time_horizon = 4.0;
    double scale = 1.0;
    bool overlap = false;  // agents already penetrating: every velocity blocked

    bool contains(const Vec2& v) const { return penetration(v) > 0.0; }

    /// Depth by which the swept ray of v enters the obstacle disc (0 when
    /// outside). Used to pick the least-bad velocity when nothing is free.
    double penetration(const Vec2& v) const {
        const Vec2 u = (v - apex) * scale;
        const double d = point_segment_distance(disc_center, Vec2{0.0, 0.0}, u * time_horizon);
        const double pen = combined_radius - d;
        return pen > 0.0 ? pen : 0.0;
    }
};

struct RvoPlanConfig {
    double v_max = 6.0;
    int candidate_dirs = 16;
    int candidate_speeds = 16;
    double time_horizon = 4.0;
    double max_accel = 3.0;

    int candidate_count() const { return candidate_dirs * candidate_speeds; }
};

/// VO of `ego` with respect to `exo` moving at `exo_velocity`: apex at
/// exo_velocity, legs tangent to the Minkowski disc (combined circumradius
/// plus `radius_inflation`). Throws AgentOverlapError when the agents already
/// penetrate the disc.
VelocityObstacleCone compute_vo(const AgentState& ego, const AgentState& exo,
                                const Vec2& exo_velocity, double time_horizon = 4.0,
                                double radius_inflation = 0.0);

/// Reciprocal cone: apex moved to (apex + v_ego)/2, legs unchanged.
VelocityObstacleCone compute_rvo(const VelocityObstacleCone& vo, const Vec2& ego_velocity);

/// Cone that blocks every velocity (agents overlapping); penetration still
/// ranks escape directions.
VelocityObstacleCone blocked_cone(const AgentState& ego, const AgentState& exo,
                                  const Vec2& exo_velocity, double time_horizon);

/// Deterministic candidate set: v_target, zero, then the polar grid
/// (dirs x speeds up to v_max).
std::vector<Vec2> candidate_velocities(const Vec2& v_target, const RvoPlanConfig& cfg);

/// Argmin ||v - v_target|| over candidates outside every cone; ties keep the
/// first candidate in sampling order. When no candidate is free, the one with
/// the smallest maximum penetration wins.
Vec2 select_velocity(const std::vector<Vec2>& candidates,
                     const std::vector<VelocityObstacleCone>& cones, const Vec2& v_target);

struct RvoDebug {
    std::vector<VelocityObstacleCone> cones;
    std::vector<Vec2> candidates;
    Vec2 v_target;
    Vec2 v_selected;
    bool free_space_nonempty = false;
};

class RvoPlanner final : public Planner {
public:
    explicit RvoPlanner(RvoPlanConfig cfg = {}) : cfg_(cfg) {}

    std::string name() const override { return "rvo"; }
    void begin_episode(const Scenario&, std::uint64_t) override { prev_accel_ = 0.0; }
    PlannerDecision decide(const PlanInput& input, const Predictor& predictor,
                           Budget& budget) override;

    /// Last decision's full velocity-space picture, for tests.
    const RvoDebug& debug() const { return debug_; }

private:
    RvoPlanConfig cfg_;
    double prev_accel_ = 0.0;
    RvoDebug debug_;
};

}  // namespace predloop
