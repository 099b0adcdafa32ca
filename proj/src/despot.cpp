#include "predloop/despot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace predloop {

double reward(double ego_speed, DespotAction action, bool collided, bool changed_lane,
              const RewardConfig& cfg) {
    double r = cfg.speed_weight * (ego_speed - cfg.v_max) / cfg.v_max;
    if (collided) r += -cfg.collision_coeff * (ego_speed * ego_speed + cfg.collision_offset);
    if (action == DespotAction::decelerate) r += -cfg.decel_penalty;
    if (changed_lane) r += -cfg.lane_change_penalty;
    return r;
}

double Belief::effective_sample_size() const {
    double sum_sq = 0.0;
    for (double w : weights) sum_sq += w * w;
    return sum_sq > 0.0 ? 1.0 / sum_sq : 0.0;
}

void Belief::normalize() {
    double sum = 0.0;
    for (double w : weights) sum += w;
    if (sum <= 0.0) {
        const double u = 1.0 / static_cast<double>(weights.size());
        for (double& w : weights) w = u;
        return;
    }
    for (double& w : weights) w /= sum;
}

double follow_intent_speed(AgentKind kind, double current_speed) {
    // A moving agent that intends to follow its path is expected to keep its
    // speed; a (near-)stationary one is expected to get going, which is what
    // separates "stopped but will go" from a stop intent.
    if (current_speed > 0.5) return current_speed;
    double floor = 5.0;
    if (kind == AgentKind::cyclist) floor = 2.5;
    else if (kind == AgentKind::pedestrian) floor = 1.2;
    return floor;
}

namespace {

std::vector<int> candidate_paths(const Scenario& scenario, const AgentState& agent,
                                 double radius) {
    const bool walk = agent.kind == AgentKind::pedestrian || agent.kind == AgentKind::cyclist;
    std::vector<int> out;
    int nearest = -1;
    double nearest_dist = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < scenario.map.size(); ++p) {
        if (scenario.walkable[p] != walk) continue;
        const PathQuery q = scenario.map[p].project(agent.position());
        const double dist = std::abs(q.lateral_offset);
        if (dist < nearest_dist) {
            nearest_dist = dist;
            nearest = static_cast<int>(p);
        }
        if (dist <= radius) out.push_back(static_cast<int>(p));
    }
    if (out.empty() && nearest >= 0) out.push_back(nearest);
    if (out.empty()) {
        // No kind-matched path at all; fall back to the nearest of any kind.
        for (std::size_t p = 0; p < scenario.map.size(); ++p) {
            const PathQuery q = scenario.map[p].project(agent.position());
            if (std::abs(q.lateral_offset) < nearest_dist) {
                nearest_dist = std::abs(q.lateral_offset);
                nearest = static_cast<int>(p);
            }
        }
        out.push_back(std::max(0, nearest));
    }
    return out;
}

}  // namespace

Belief init_belief(const Scenario& scenario, const DespotConfig& cfg, Rng& rng) {
    std::vector<std::vector<int>> candidates;
    candidates.reserve(scenario.exo_agents.size());
    for (const ExoSetup& e : scenario.exo_agents)
        candidates.push_back(candidate_paths(scenario, e.state, cfg.candidate_path_radius));

    Belief belief;
    belief.particles.resize(static_cast<std::size_t>(cfg.particles));
    belief.weights.assign(static_cast<std::size_t>(cfg.particles),
                          1.0 / static_cast<double>(cfg.particles));
    for (auto& particle : belief.particles) {
        particle.per_exo.resize(scenario.exo_agents.size());
        for (std::size_t i = 0; i < scenario.exo_agents.size(); ++i) {
            const auto& cands = candidates[i];
            particle.per_exo[i].path_index =
                cands[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(cands.size())))];
            particle.per_exo[i].stop = rng.uniform() < 0.2;
        }
    }
    return belief;
}

Belief update_belief(const Belief& belief, const std::vector<Vec2>& observed_displacements,
                     const BeliefContext& ctx, const DespotConfig& cfg, Rng& resample_rng) {
    if (belief.particles.empty()) throw std::invalid_argument("update_belief: empty belief");
    const WorldState& world = *ctx.world;
    const Scenario& scenario = *ctx.scenario;
    if (observed_displacements.size() != world.exo.size())
        throw std::invalid_argument("update_belief: observation count mismatch");

    Belief out = belief;
    const double inv_two_sigma_sq = 1.0 / (2.0 * cfg.sigma_obs * cfg.sigma_obs);
    for (std::size_t p = 0; p < out.particles.size(); ++p) {
        double log_like = 0.0;
        const HiddenState& hidden = out.particles[p];
        for (std::size_t i = 0; i < world.exo.size(); ++i) {
            const AgentState& agent = world.exo[i];
            const HiddenIntent& intent = hidden.per_exo[i];
            Vec2 expected;
            if (intent.stop) {
                const double v = std::max(0.0, agent.speed - kExoBrakeDecel * ctx.dt_frame);
                expected = Vec2::from_angle(agent.pose.heading) * (v * ctx.dt_frame);
            } else {
                const ReferencePath& path =
                    scenario.map[static_cast<std::size_t>(intent.path_index)];
                const PathQuery q = path.project(agent.position());
                const Vec2 dir = path.tangent_at(q.arc_length);
                const double v = follow_intent_speed(agent.kind, agent.speed);
                expected = dir * (v * ctx.dt_frame);
            }
            log_like -= (observed_displacements[i] - expected).norm_sq() * inv_two_sigma_sq;
        }
        out.weights[p] *= std::exp(log_like);
    }

    double sum = 0.0;
    for (double w : out.weights) sum += w;
    if (!(sum > 0.0) || !std::isfinite(sum)) {
        const double u = 1.0 / static_cast<double>(out.weights.size());
        for (double& w : out.weights) w = u;
        return out;
    }
    for (double& w : out.weights) w /= sum;

    if (out.effective_sample_size() < static_cast<double>(out.size()) / 2.0) {
        // Systematic resampling.
        const std::size_t n = out.size();
        std::vector<HiddenState> resampled;
        resampled.reserve(n);
        const double step = 1.0 / static_cast<double>(n);
        double pos = resample_rng.uniform() * step;
        double cum = out.weights[0];
        std::size_t idx = 0;
        for (std::size_t j = 0; j < n; ++j) {
            while (pos > cum && idx + 1 < n) {
                ++idx;
                cum += out.weights[idx];
            }
            resampled.push_back(out.particles[idx]);
            pos += step;
        }
        out.particles = std::move(resampled);
        out.weights.assign(n, step);
    }
    return out;
}

namespace {

bool collision_with_any(const AgentState& ego, const std::vector<AgentState>& exo, double buffer) {
    const OrientedBox ego_box = ego.box().with_length_buffer(buffer);
    for (const AgentState& e : exo) {
        if (obb_intersect(ego_box, e.box().with_length_buffer(buffer))) return true;
    }
    return false;
}

double hinted_pursuit_steer(const AgentState& ego, const ReferencePath& path, double& arc_hint,
                            const TransitionParams& params) {
    const PathQuery q = path.project_near(ego.position(), arc_hint, 6.0);
    arc_hint = q.arc_length;
    const double s_target = std::min(q.arc_length + params.lookahead, path.total_length());
    const Vec2 rel = (path.point_at(s_target) - ego.position()).rotated(-ego.pose.heading);
    const double ld_sq = rel.norm_sq();
    if (ld_sq < 1e-12) return 0.0;
    return std::clamp(std::atan(2.0 * rel.y / ld_sq * params.wheelbase), -params.max_steer,
                      params.max_steer);
}

}  // namespace

double despot_transition(ScenarioState& state, const HiddenState& hidden, DespotAction action,
                         const SpeedProfiles& profiles, int frame, const TransitionParams& params,
                         const RewardConfig& reward_cfg, Rng* noise_rng) {
    if (state.collided) return 0.0;  // absorbing
    const Scenario& scenario = *params.scenario;

    const double steer =
        hinted_pursuit_steer(state.ego, scenario.ego_path(), state.ego_arc, params);
    state.ego = bicycle_step(state.ego, action_accel(action), steer, params.dt_frame,
                             params.wheelbase, params.v_max, params.max_steer);

    for (std::size_t i = 0; i < state.exo.size(); ++i) {
        AgentState& agent = state.exo[i];
        const HiddenIntent& intent = hidden.per_exo[i];
        if (intent.stop) {
            const double v = std::max(0.0, agent.speed - kExoBrakeDecel * params.dt_frame);
            const Vec2 p =
                agent.position() + Vec2::from_angle(agent.pose.heading) * (v * params.dt_frame);
            agent.pose.x = p.x;
            agent.pose.y = p.y;
            agent.speed = v;
        } else {
            const ReferencePath& path = scenario.map[static_cast<std::size_t>(intent.path_index)];
            double step = agent.speed * params.dt_frame;
            if (i < profiles.size() && !profiles[i].empty()) {
                const std::size_t f = std::min<std::size_t>(static_cast<std::size_t>(frame),
                                                            profiles[i].size() - 1);
                step = profiles[i][f];
            }
            const double arc = std::min(state.exo_arc[i] + step, path.total_length());
            agent.pose = path.pose_at(arc);
            agent.speed = step / params.dt_frame;
            state.exo_arc[i] = arc;
        }
        if (noise_rng != nullptr && params.noise_sigma > 0.0) {
            agent.pose.x += noise_rng->normal(0.0, params.noise_sigma);
            agent.pose.y += noise_rng->normal(0.0, params.noise_sigma);
        }
    }

    const bool collided = collision_with_any(state.ego, state.exo, params.collision_buffer);
    state.collided = collided;
    return reward(state.ego.speed, action, collided, false, reward_cfg);
}

namespace {

bool threat_within_ttc(const AgentState& ego, const std::vector<AgentState>& exo,
                       const std::vector<Vec2>& exo_velocities, double ttc, double buffer) {
    const Vec2 ego_vel = ego.velocity();
    const double ego_r = ego.box().with_length_buffer(buffer).circumradius();
    for (std::size_t i = 0; i < exo.size(); ++i) {
        const double radius = ego_r + exo[i].box().with_length_buffer(buffer).circumradius();
        const Vec2 rel_p = exo[i].position() - ego.position();
        if (rel_p.norm() < radius) return true;
        const Vec2 rel_v =
            (i < exo_velocities.size() ? exo_velocities[i] : exo[i].velocity()) - ego_vel;
        const double v_sq = rel_v.norm_sq();
        if (v_sq <= 1e-12) continue;
        const double t_star = std::clamp(-rel_p.dot(rel_v) / v_sq, 0.0, ttc);
        if ((rel_p + rel_v * t_star).norm() < radius) return true;
    }
    return false;
}

std::vector<Vec2> current_velocities(const std::vector<AgentState>& exo) {
    std::vector<Vec2> out;
    out.reserve(exo.size());
    for (const AgentState& e : exo) out.push_back(e.velocity());
    return out;
}

}  // namespace

double rollout_default_policy(const ScenarioState& state, const HiddenState& hidden,
                              const SpeedProfiles& profiles, int depth,
                              const TransitionParams& params, const RewardConfig& reward_cfg,
                              const DespotConfig& cfg) {
    if (depth < 0) throw std::invalid_argument("rollout_default_policy: negative depth");
    ScenarioState s = state;
    TransitionParams quiet = params;
    quiet.noise_sigma = 0.0;
    double value = 0.0;
    double discount = 1.0;
    for (int step = depth; step < cfg.rollout_horizon; ++step) {
        if (s.collided) break;
        const DespotAction action =
            threat_within_ttc(s.ego, s.exo, current_velocities(s.exo), cfg.ttc_threshold,
                              params.collision_buffer)
                ? DespotAction::decelerate
                : DespotAction::maintain;
        const double r =
            despot_transition(s, hidden, action, profiles, step, quiet, reward_cfg, nullptr);
        value += discount * r;
        discount *= reward_cfg.gamma;
    }
    return value;
}

// ---------------------------------------------------------------------------
// Anytime tree search
// ---------------------------------------------------------------------------

namespace {

struct Node {
    int depth = 0;
    int parent = -1;
    int action_from_parent = -1;
    std::vector<ScenarioState> states;        // one per sampled scenario
    std::vector<double> acc_disc_reward;      // per scenario, discounted from root
    double upper = 0.0;                       // mean accumulated reward (future <= 0)
    double lower = 0.0;                       // mean accumulated + discounted rollout
    double value = 0.0;                       // backed-up best value
    std::array<int, 3> children{-1, -1, -1};
    bool expanded = false;
};

void init_bounds(Node& node, const std::vector<HiddenState>& hiddens,
                 const SpeedProfiles& profiles, const TransitionParams& params,
                 const RewardConfig& reward_cfg, const DespotConfig& cfg) {
    double acc_mean = 0.0;
    double rollout_mean = 0.0;
    const double disc = std::pow(reward_cfg.gamma, node.depth);
    for (std::size_t k = 0; k < node.states.size(); ++k) {
        acc_mean += node.acc_disc_reward[k];
        if (!node.states[k].collided) {
            rollout_mean += disc * rollout_default_policy(node.states[k], hiddens[k], profiles,
                                                          node.depth, params, reward_cfg, cfg);
        }
    }
    const double n = static_cast<double>(node.states.size());
    acc_mean /= n;
    rollout_mean /= n;
    node.upper = acc_mean;
    node.lower = acc_mean + rollout_mean;
    node.value = node.lower;
}

}  // namespace

SearchResult despot_search(const PlanInput& input, const Predictor& predictor, Budget& budget,
                           const Belief& belief, const DespotConfig& cfg,
                           const RewardConfig& reward_cfg, SearchStats* stats) {
    const WorldState& world = input.world;
    const std::size_t n_exo = world.exo.size();
    SearchResult result;

    // Root predictions: one call per exo-agent with enough history; a cold
    // agent keeps its current velocity at zero cost.
    long calls_needed = 0;
    for (const History& h : world.exo_histories) {
        if (static_cast<int>(h.frames.size()) >= predictor.min_history_frames()) ++calls_needed;
    }
    if (calls_needed > 0 && !budget.try_charge(calls_needed, predictor.latency())) {
        result.action = DespotAction::maintain;
        result.fallback = true;
        result.virtual_spent = budget.spent();
        return result;
    }

    PredictContext ctx;
    ctx.script = input.script;
    ctx.tick = world.tick;
    ctx.stride = input.ticks.predictor_stride;
    ctx.dt_frame = input.ticks.dt_frame();
    ctx.episode_seed = input.episode_seed;

    SpeedProfiles profiles(n_exo);
    std::vector<Vec2> root_velocities(n_exo);
    for (std::size_t i = 0; i < n_exo; ++i) {
        const History& h = world.exo_histories[i];
        if (static_cast<int>(h.frames.size()) >= predictor.min_history_frames()) {
            PredictionSet ps =
                predictor.predict(h, neighbor_positions(world, world.exo[i].agent_id), ctx);
            const Trajectory& mode = ps.modes[static_cast<std::size_t>(ps.best_mode())];
            Vec2 prev = world.exo[i].position();
            profiles[i].reserve(mode.size());
            for (const Vec2& p : mode) {
                profiles[i].push_back((p - prev).norm());
                prev = p;
            }
            root_velocities[i] = (mode.front() - world.exo[i].position()) / ctx.dt_frame;
            LoggedPrediction lp;
            lp.issue_tick = world.tick;
            lp.agent_id = world.exo[i].agent_id;
            lp.complete_history = h.complete();
            lp.ego_distance = (world.exo[i].position() - world.ego.position()).norm();
            lp.prediction = std::move(ps);
            result.predictions.push_back(std::move(lp));
        } else {
            profiles[i].assign(static_cast<std::size_t>(kPredictionFrames),
                               world.exo[i].speed * ctx.dt_frame);
            root_velocities[i] = world.exo[i].velocity();
        }
    }

    // Sample hidden-state scenarios from the belief (systematic, seeded).
    const int S = std::max(1, cfg.scenarios);
    std::vector<HiddenState> hiddens;
    hiddens.reserve(static_cast<std::size_t>(S));
    Rng sample_rng(derive_seed(input.episode_seed, stream_tags::kDespotSearch,
                               static_cast<std::uint64_t>(world.tick), 1));
    if (belief.particles.empty()) {
        hiddens.assign(static_cast<std::size_t>(S), HiddenState{});
    } else {
        const double step = 1.0 / static_cast<double>(S);
        double pos = sample_rng.uniform() * step;
        double cum = belief.weights[0];
        std::size_t idx = 0;
        for (int k = 0; k < S; ++k) {
            while (pos > cum && idx + 1 < belief.particles.size()) {
                ++idx;
                cum += belief.weights[idx];
            }
            hiddens.push_back(belief.particles[idx]);
            pos += step;
        }
    }

    TransitionParams params;
    params.scenario = &input.scenario;
    params.dt_frame = ctx.dt_frame;
    params.noise_sigma = cfg.noise_sigma;
    params.wheelbase = input.ticks.wheelbase;
    params.lookahead = input.ticks.lookahead;
    params.max_steer = input.ticks.max_steer;
    params.collision_buffer = input.ticks.collision_buffer;
    params.v_max = kind_max_speed(world.ego.kind);

    // Per-scenario noise streams; consumption order is fixed by the
    // deterministic expansion order, so results are thread-independent.
    std::vector<Rng> noise_rngs;
    noise_rngs.reserve(static_cast<std::size_t>(S));
    for (int k = 0; k < S; ++k) {
        noise_rngs.emplace_back(derive_seed(input.episode_seed, stream_tags::kDespotSearch,
                                            static_cast<std::uint64_t>(world.tick),
                                            static_cast<std::uint64_t>(2 + k)));
    }

    std::vector<Node> nodes;
    nodes.reserve(256);
    {
        Node root;
        root.depth = 0;
        const double ego_arc = input.scenario.ego_path().project(world.ego.position()).arc_length;
        ScenarioState proto;
        proto.ego = world.ego;
        proto.ego_arc = ego_arc;
        proto.exo = world.exo;
        proto.exo_arc.resize(n_exo, 0.0);
        root.states.assign(static_cast<std::size_t>(S), proto);
        root.acc_disc_reward.assign(static_cast<std::size_t>(S), 0.0);
        for (int k = 0; k < S; ++k) {
            for (std::size_t i = 0; i < n_exo; ++i) {
                const int pi = hiddens[static_cast<std::size_t>(k)].per_exo.empty()
                                   ? 0
                                   : hiddens[static_cast<std::size_t>(k)].per_exo[i].path_index;
                const ReferencePath& path = input.scenario.map[static_cast<std::size_t>(pi)];
                root.states[static_cast<std::size_t>(k)].exo_arc[i] =
                    path.project(world.exo[i].position()).arc_length;
            }
        }
        init_bounds(root, hiddens, profiles, params, reward_cfg, cfg);
        nodes.push_back(std::move(root));
    }

    int expansions = 0;
    while (expansions < cfg.max_expansions) {
        // Highest-upper-bound unexpanded leaf above the depth cap; ties to the
        // earliest-created node.
        int leaf = -1;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (nodes[i].expanded || nodes[i].depth >= cfg.max_depth) continue;
            if (leaf < 0 || nodes[i].upper > nodes[static_cast<std::size_t>(leaf)].upper)
                leaf = static_cast<int>(i);
        }
        if (leaf < 0) break;
        if (!budget.try_charge(static_cast<long>(n_exo), predictor.latency(), cfg.node_overhead))
            break;

        const int leaf_depth = nodes[static_cast<std::size_t>(leaf)].depth;
        const double disc = std::pow(reward_cfg.gamma, leaf_depth);
        for (std::size_t a = 0; a < kDespotActions.size(); ++a) {
            Node child;
            child.depth = leaf_depth + 1;
            child.parent = leaf;
            child.action_from_parent = static_cast<int>(a);
            child.states = nodes[static_cast<std::size_t>(leaf)].states;
            child.acc_disc_reward = nodes[static_cast<std::size_t>(leaf)].acc_disc_reward;
            for (int k = 0; k < S; ++k) {
                const double r = despot_transition(
                    child.states[static_cast<std::size_t>(k)], hiddens[static_cast<std::size_t>(k)],
                    kDespotActions[a], profiles, leaf_depth, params, reward_cfg,
                    &noise_rngs[static_cast<std::size_t>(k)]);
                child.acc_disc_reward[static_cast<std::size_t>(k)] += disc * r;
            }
            init_bounds(child, hiddens, profiles, params, reward_cfg, cfg);
            nodes.push_back(std::move(child));
            nodes[static_cast<std::size_t>(leaf)].children[a] =
                static_cast<int>(nodes.size()) - 1;
        }
        nodes[static_cast<std::size_t>(leaf)].expanded = true;
        ++expansions;
    }

    result.expansions = expansions;
    result.virtual_spent = budget.spent();
    if (stats != nullptr) {
        stats->expansions = expansions;
        stats->nodes = static_cast<int>(nodes.size());
    }

    if (expansions == 0) {
        // Enough budget for the root predictions but not for a single
        // expansion: act on the reactive default policy.
        result.fallback = true;
        if (threat_within_ttc(world.ego, world.exo, root_velocities, cfg.ttc_threshold,
                              input.ticks.collision_buffer)) {
            result.action = DespotAction::decelerate;
        } else if (world.ego.speed < params.v_max - 1e-9) {
            result.action = DespotAction::accelerate;
        } else {
            result.action = DespotAction::maintain;
        }
        return result;
    }

    // Back up values (children always follow parents in creation order).
    for (std::size_t i = nodes.size(); i-- > 0;) {
        Node& node = nodes[i];
        if (!node.expanded) continue;
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < kDespotActions.size(); ++a) {
            const int c = node.children[a];
            if (c >= 0 && nodes[static_cast<std::size_t>(c)].value > best)
                best = nodes[static_cast<std::size_t>(c)].value;
        }
        node.value = best;
    }
    double best = -std::numeric_limits<double>::infinity();
    DespotAction best_action = DespotAction::maintain;
    for (std::size_t a = 0; a < kDespotActions.size(); ++a) {
        const int c = nodes[0].children[a];
        if (c >= 0 && nodes[static_cast<std::size_t>(c)].value > best) {
            best = nodes[static_cast<std::size_t>(c)].value;
            best_action = kDespotActions[a];
        }
    }
    result.action = best_action;
    return result;
}

void DespotPlanner::begin_episode(const Scenario& scenario, std::uint64_t episode_seed) {
    episode_seed_ = episode_seed;
    Rng rng(derive_seed(episode_seed, stream_tags::kBeliefResample, 0xa11));
    belief_ = init_belief(scenario, cfg_, rng);
    belief_ready_ = true;
    stats_ = {};
}

PlannerDecision DespotPlanner::decide(const PlanInput& input, const Predictor& predictor,
                                      Budget& budget) {
    const WorldState& world = input.world;
    if (!belief_ready_) begin_episode(input.scenario, input.episode_seed);

    // Belief update on the observed last-frame displacements.
    if (!world.exo.empty()) {
        bool have_obs = true;
        std::vector<Vec2> obs(world.exo.size());
        for (std::size_t i = 0; i < world.exo.size(); ++i) {
            const auto& frames = world.exo_histories[i].frames;
            if (frames.size() < 2) {
                have_obs = false;
                break;
            }
            obs[i] = frames.back().position - frames[frames.size() - 2].position;
        }
        if (have_obs) {
            BeliefContext ctx;
            ctx.world = &world;
            ctx.scenario = &input.scenario;
            ctx.dt_frame = input.ticks.dt_frame();
            Rng rng(derive_seed(episode_seed_, stream_tags::kBeliefResample,
                                static_cast<std::uint64_t>(world.tick)));
            belief_ = update_belief(belief_, obs, ctx, cfg_, rng);
        }
    }

    SearchResult sr =
        despot_search(input, predictor, budget, belief_, cfg_, reward_cfg_, &stats_);
    PlannerDecision decision;
    decision.accel = action_accel(sr.action);
    decision.fallback = sr.fallback;
    decision.virtual_spent = sr.virtual_spent;
    decision.predictions = std::move(sr.predictions);
    return decision;
}

}  // namespace predloop
