#include "predloop/rvo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace predloop {

VelocityObstacleCone compute_vo(const AgentState& ego, const AgentState& exo,
                                const Vec2& exo_velocity, double time_horizon,
                                double radius_inflation) {
    const Vec2 d = exo.position() - ego.position();
    const double dist = d.norm();
    const double radius =
        ego.box().circumradius() + exo.box().circumradius() + radius_inflation;
    if (dist <= 0.0 || dist < radius)
        throw AgentOverlapError("compute_vo: agents within combined radius");

    VelocityObstacleCone cone;
    cone.apex = exo_velocity;
    cone.source_agent = exo.agent_id;
    cone.disc_center = d;
    cone.combined_radius = radius;
    cone.time_horizon = time_horizon;
    const double half_angle = std::asin(std::min(1.0, radius / dist));
    const Vec2 dir = d / dist;
    cone.left_leg = dir.rotated(half_angle);
    cone.right_leg = dir.rotated(-half_angle);
    return cone;
}

VelocityObstacleCone compute_rvo(const VelocityObstacleCone& vo, const Vec2& ego_velocity) {
    VelocityObstacleCone cone = vo;
    cone.apex = (vo.apex + ego_velocity) * 0.5;
    cone.scale = vo.scale * 2.0;
    return cone;
}

VelocityObstacleCone blocked_cone(const AgentState& ego, const AgentState& exo,
                                  const Vec2& exo_velocity, double time_horizon) {
    VelocityObstacleCone cone;
    cone.apex = exo_velocity;
    cone.source_agent = exo.agent_id;
    cone.disc_center = exo.position() - ego.position();
    cone.combined_radius = ego.box().circumradius() + exo.box().circumradius();
    cone.time_horizon = time_horizon;
    cone.overlap = true;
    const Vec2 dir = cone.disc_center.normalized();
    cone.left_leg = dir.rotated(kPi / 2.0);
    cone.right_leg = dir.rotated(-kPi / 2.0);
    return cone;
}

std::vector<Vec2> candidate_velocities(const Vec2& v_target, const RvoPlanConfig& cfg) {
    std::vector<Vec2> out;
    out.reserve(static_cast<std::size_t>(cfg.candidate_count()) + 2);
    out.push_back(v_target);
    out.push_back({0.0, 0.0});
    for (int j = 0; j < cfg.candidate_dirs; ++j) {
        const double angle = 2.0 * kPi * j / cfg.candidate_dirs;
        const Vec2 dir = Vec2::from_angle(angle);
        for (int k = 1; k <= cfg.candidate_speeds; ++k) {
            out.push_back(dir * (cfg.v_max * k / cfg.candidate_speeds));
        }
    }
    return out;
}

Vec2 select_velocity(const std::vector<Vec2>& candidates,
                     const std::vector<VelocityObstacleCone>& cones, const Vec2& v_target) {
    if (candidates.empty()) throw std::invalid_argument("select_velocity: no candidates");

    int best = -1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        bool free = true;
        for (const auto& cone : cones) {
            if (cone.overlap || cone.contains(candidates[i])) {
                free = false;
                break;
            }
        }
        if (!free) continue;
        const double dist = (candidates[i] - v_target).norm();
        if (dist < best_dist) {
            best_dist = dist;
            best = static_cast<int>(i);
        }
    }
    if (best >= 0) return candidates[static_cast<std::size_t>(best)];

    // Nothing is free: least maximum penetration wins, first in order on ties.
    double best_pen = std::numeric_limits<double>::infinity();
    best = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        double pen = 0.0;
        for (const auto& cone : cones) pen = std::max(pen, cone.penetration(candidates[i]));
        if (pen < best_pen) {
            best_pen = pen;
            best = static_cast<int>(i);
        }
    }
    return candidates[static_cast<std::size_t>(best)];
}

PlannerDecision RvoPlanner::decide(const PlanInput& input, const Predictor& predictor,
                                   Budget& budget) {
    const WorldState& world = input.world;
    const double dt_frame = input.ticks.dt_frame();
    PlannerDecision decision;

    long calls_needed = 0;
    for (const History& h : world.exo_histories) {
        if (static_cast<int>(h.frames.size()) >= predictor.min_history_frames()) ++calls_needed;
    }
    if (calls_needed > 0 && !budget.try_charge(calls_needed, predictor.latency())) {
        decision.accel = prev_accel_;
        decision.fallback = true;
        decision.virtual_spent = budget.spent();
        return decision;
    }

    PredictContext ctx;
    ctx.script = input.script;
    ctx.tick = world.tick;
    ctx.stride = input.ticks.predictor_stride;
    ctx.dt_frame = dt_frame;
    ctx.episode_seed = input.episode_seed;

    // One predicted velocity per exo-agent: first displacement of the
    // highest-weight mode over one frame. Agents without enough history keep
    // their current velocity.
    std::vector<Vec2> exo_velocities(world.exo.size());
    for (std::size_t i = 0; i < world.exo.size(); ++i) {
        const History& h = world.exo_histories[i];
        if (static_cast<int>(h.frames.size()) >= predictor.min_history_frames()) {
            PredictionSet ps =
                predictor.predict(h, neighbor_positions(world, world.exo[i].agent_id), ctx);
            const Trajectory& mode = ps.modes[static_cast<std::size_t>(ps.best_mode())];
            exo_velocities[i] = (mode.front() - world.exo[i].position()) / dt_frame;
            LoggedPrediction lp;
            lp.issue_tick = world.tick;
            lp.agent_id = world.exo[i].agent_id;
            lp.complete_history = h.complete();
            lp.ego_distance = (world.exo[i].position() - world.ego.position()).norm();
            lp.prediction = std::move(ps);
            decision.predictions.push_back(std::move(lp));
        } else {
            exo_velocities[i] = world.exo[i].velocity();
        }
    }

    // Discs are inflated to the buffered footprints so the planner stands off
    // at the same geometry the collision score uses.
    const double buffer = input.ticks.collision_buffer;
    const double ego_inflation = world.ego.box().with_length_buffer(buffer).circumradius() -
                                 world.ego.box().circumradius();
    std::vector<VelocityObstacleCone> cones;
    cones.reserve(world.exo.size());
    const Vec2 ego_velocity = world.ego.velocity();
    for (std::size_t i = 0; i < world.exo.size(); ++i) {
        const double inflation =
            ego_inflation + world.exo[i].box().with_length_buffer(buffer).circumradius() -
            world.exo[i].box().circumradius();
        try {
            cones.push_back(compute_rvo(compute_vo(world.ego, world.exo[i], exo_velocities[i],
                                                   cfg_.time_horizon, inflation),
                                        ego_velocity));
        } catch (const AgentOverlapError&) {
            cones.push_back(
                blocked_cone(world.ego, world.exo[i], exo_velocities[i], cfg_.time_horizon));
        }
    }

    // Target velocity: maximum desired speed toward the pursuit point ahead on
    // the reference path.
    const ReferencePath& path = input.scenario.ego_path();
    const PathQuery q = path.project(world.ego.position());
    const double s_target = std::min(q.arc_length + input.ticks.lookahead, path.total_length());
    const Vec2 to_target = path.point_at(s_target) - world.ego.position();
    const Vec2 v_target = to_target.norm() > 1e-9 ? to_target.normalized() * cfg_.v_max
                                                  : Vec2{0.0, 0.0};

    const std::vector<Vec2> candidates = candidate_velocities(v_target, cfg_);
    const Vec2 v_new = select_velocity(candidates, cones, v_target);

    debug_.cones = cones;
    debug_.candidates = candidates;
    debug_.v_target = v_target;
    debug_.v_selected = v_new;
    debug_.free_space_nonempty = false;
    for (const Vec2& c : candidates) {
        bool free = true;
        for (const auto& cone : cones) {
            if (cone.overlap || cone.contains(c)) {
                free = false;
                break;
            }
        }
        if (free) {
            debug_.free_space_nonempty = true;
            break;
        }
    }

    // Scalar conversion: the ego can only execute speed along its pursuit
    // direction, so the command is the selected velocity's along-path
    // component, capped at the fastest on-path speed that is itself outside
    // every cone.
    const Vec2 pursuit_dir = to_target.norm() > 1e-9 ? to_target.normalized() : Vec2{0.0, 0.0};
    double s_free = 0.0;
    for (int k = cfg_.candidate_speeds; k >= 1; --k) {
        const double s = cfg_.v_max * k / cfg_.candidate_speeds;
        const Vec2 on_path = pursuit_dir * s;
        bool free = true;
        for (const auto& cone : cones) {
            if (cone.overlap || cone.contains(on_path)) {
                free = false;
                break;
            }
        }
        if (free) {
            s_free = s;
            break;
        }
    }
    const double speed_cmd = std::min(std::max(0.0, v_new.dot(pursuit_dir)), s_free);
    const double decision_dt = dt_frame;
    decision.accel =
        std::clamp((speed_cmd - world.ego.speed) / decision_dt, -cfg_.max_accel, cfg_.max_accel);
    prev_accel_ = decision.accel;
    decision.virtual_spent = budget.spent();
    return decision;
}

}  // namespace predloop
