#pragma once

#include <array>
#include <vector>

#include "predloop/rng.hpp"
#include "predloop/world.hpp"

namespace predloop {

enum class DespotAction : int { maintain = 0, accelerate = 1, decelerate = 2 };
inline constexpr std::array<DespotAction, 3> kDespotActions = {
    DespotAction::maintain, DespotAction::accelerate, DespotAction::decelerate};

inline double action_accel(DespotAction a) {
    switch (a) {
        case DespotAction::maintain: return 0.0;
        case DespotAction::accelerate: return 3.0;
        case DespotAction::decelerate: return -3.0;
    }
    return 0.0;
}

struct RewardConfig {
    double collision_coeff = 1000.0;   // R_col(v) = -coeff * (v^2 + offset)
    double collision_offset = 0.5;
    double speed_weight = 4.0;         // R_v(v) = weight * (v - v_max) / v_max
    double v_max = 6.0;
    double decel_penalty = 0.1;        // per Decelerate action
    double lane_change_penalty = 4.0;  // wired but never fired (no lane changes)
    double gamma = 0.95;
};

/// Sum of the four reward terms, each gated by its condition.
double reward(double ego_speed, DespotAction action, bool collided, bool changed_lane,
              const RewardConfig& cfg);

/// Hidden state of one exo-agent: intended path and stopping flag.
struct HiddenIntent {
    int path_index = 0;  // into the scenario map
    bool stop = false;
};

struct HiddenState {
    std::vector<HiddenIntent> per_exo;
};

struct Belief {
    std::vector<HiddenState> particles;
    std::vector<double> weights;  // nonnegative, sum 1

    std::size_t size() const { return particles.size(); }
    double effective_sample_size() const;
    void normalize();
};

struct DespotConfig {
    int scenarios = 32;       // sampled hidden-state scenarios per search
    int max_depth = 8;        // decision layers in the tree
    double noise_sigma = 0.1; // m, displacement noise inside the tree
    int particles = 100;      // belief particle count
    int rollout_horizon = 30; // frames the default policy rolls out to
    int max_expansions = 400; // hard cap per decision (budget usually binds first)
    double node_overhead = 1e-5;        // s charged per expansion
    double sigma_obs = 0.3;             // m, belief-update likelihood std
    double ttc_threshold = 1.0;         // s, default-policy braking trigger
    double candidate_path_radius = 5.0; // m, intended-path candidates near an agent
};

/// Expected follow-intent speed when the agent itself is (nearly) stopped;
/// what separates "stopped but intends to go" from a stop intent.
double follow_intent_speed(AgentKind kind, double current_speed);

struct BeliefContext {
    const WorldState* world = nullptr;
    const Scenario* scenario = nullptr;
    double dt_frame = 0.09;
};

/// Initial belief: per exo-agent, intended paths uniform over map paths within
/// candidate_path_radius (nearest path always included), stop prior 0.2.
Belief init_belief(const Scenario& scenario, const DespotConfig& cfg, Rng& rng);

/// Importance-update on the observed last-frame displacements: weights scale
/// by a Gaussian likelihood of each particle's intended motion, renormalize,
/// systematic resampling (seeded) when ESS < N/2. All-zero likelihood resets
/// to uniform.
Belief update_belief(const Belief& belief, const std::vector<Vec2>& observed_displacements,
                     const BeliefContext& ctx, const DespotConfig& cfg, Rng& resample_rng);

/// One sampled world inside the tree: physical states plus per-exo intended
/// arc positions; absorbing after a collision.
struct ScenarioState {
    AgentState ego;
    double ego_arc = 0.0;         // projection hint on the ego path
    std::vector<AgentState> exo;
    std::vector<double> exo_arc;  // arc position on the intended path
    bool collided = false;
};

struct TransitionParams {
    const Scenario* scenario = nullptr;
    double dt_frame = 0.09;
    double noise_sigma = 0.1;
    double wheelbase = 2.8;
    double lookahead = 3.0;
    double max_steer = 0.6;
    double collision_buffer = 0.3;
    double v_max = 6.0;
};

/// Per-exo displacement magnitudes for future frames, distilled from the root
/// predictions (current speed when no prediction is available).
using SpeedProfiles = std::vector<std::vector<double>>;

/// Advance one scenario state by one decision frame: bicycle + pure pursuit
/// for the ego, intended-path following at the predicted displacement (or
/// braking for stop intents) for each exo, plus Gaussian displacement noise.
/// Sets `collided` from the buffered OBB test and returns the step reward.
double despot_transition(ScenarioState& state, const HiddenState& hidden, DespotAction action,
                         const SpeedProfiles& profiles, int frame, const TransitionParams& params,
                         const RewardConfig& reward_cfg, Rng* noise_rng);

/// Discounted value of the reactive default policy (Decelerate when any exo is
/// within ttc_threshold seconds of collision, else Maintain) from `state` at
/// tree depth `depth`, rolled out noise-free to cfg.rollout_horizon.
double rollout_default_policy(const ScenarioState& state, const HiddenState& hidden,
                              const SpeedProfiles& profiles, int depth,
                              const TransitionParams& params, const RewardConfig& reward_cfg,
                              const DespotConfig& cfg);

struct SearchResult {
    DespotAction action = DespotAction::maintain;
    bool fallback = false;
    int expansions = 0;
    double virtual_spent = 0.0;
    std::vector<LoggedPrediction> predictions;
};

struct SearchStats {
    int expansions = 0;
    int nodes = 0;
};

class DespotPlanner final : public Planner {
public:
    DespotPlanner(DespotConfig cfg = {}, RewardConfig reward_cfg = {})
        : cfg_(cfg), reward_cfg_(reward_cfg) {}

    std::string name() const override { return "despot"; }
    void begin_episode(const Scenario& scenario, std::uint64_t episode_seed) override;
    PlannerDecision decide(const PlanInput& input, const Predictor& predictor,
                           Budget& budget) override;

    const Belief& belief() const { return belief_; }
    const SearchStats& last_stats() const { return stats_; }

private:
    DespotConfig cfg_;
    RewardConfig reward_cfg_;
    Belief belief_;
    std::uint64_t episode_seed_ = 0;
    bool belief_ready_ = false;
    SearchStats stats_;
};

/// Budgeted anytime search over sampled scenarios. Exposed separately so tests
/// can drive it against an exhaustive expectimax oracle.
SearchResult despot_search(const PlanInput& input, const Predictor& predictor, Budget& budget,
                           const Belief& belief, const DespotConfig& cfg,
                           const RewardConfig& reward_cfg, SearchStats* stats = nullptr);

}  // namespace predloop
