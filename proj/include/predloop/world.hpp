#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "predloop/geometry.hpp"
#include "predloop/prediction.hpp"

namespace predloop {

inline constexpr double kGoalTolerance = 0.5;  // m from path end that counts as arrival
inline constexpr double kExoBrakeDecel = 3.0;  // m/s^2 used when no feasible velocity exists

enum class MapTemplate : std::uint8_t { straight, intersection, roundabout, mixed };
const char* map_template_name(MapTemplate t);
MapTemplate map_template_from_name(const std::string& name);

/// Compact, serializable description of a scenario; generate_scenario is a
/// deterministic function of it.
struct ScenarioSpec {
    std::uint64_t seed = 1;
    MapTemplate map_template = MapTemplate::mixed;
    int n_exo = 15;
    int horizon_ticks = 1000;
    double ego_path_length = 60.0;
    double ego_start_speed = 0.0;
};

struct ExoSetup {
    AgentState state;
    int path_index = 0;           // into Scenario::map
    double preferred_speed = 1.0; // m/s
};

struct Scenario {
    ScenarioSpec spec;
    std::vector<ReferencePath> map;
    std::vector<bool> walkable;  // per map path: usable by pedestrians/cyclists
    int ego_path_index = 0;
    AgentState ego_start;
    std::vector<ExoSetup> exo_agents;

    const ReferencePath& ego_path() const { return map[static_cast<std::size_t>(ego_path_index)]; }

    std::string to_json() const;
    static Scenario from_json(const std::string& text);
};

class PlacementError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Deterministic procedural scenario: path network per template, ego path of
/// at least 50 m, and collision-free rejection-sampled exo placements
/// (<= 1000 attempts each; PlacementError past that).
Scenario generate_scenario(const ScenarioSpec& spec);
Scenario generate_scenario(std::uint64_t seed, MapTemplate map_template, int n_exo);

enum class BudgetMode : std::uint8_t { fixed_predictions, fixed_time };
const char* budget_mode_name(BudgetMode m);
BudgetMode budget_mode_from_name(const std::string& name);

/// Per-decision virtual-time ledger. fixed_time charges seconds against
/// 1/tick_rate; fixed_predictions counts predictor calls. Virtual seconds are
/// accumulated in both modes for logging.
class Budget {
public:
    static Budget fixed_time(double total_seconds) {
        Budget b;
        b.mode_ = BudgetMode::fixed_time;
        b.virtual_total_ = total_seconds;
        b.calls_remaining_ = std::numeric_limits<long>::max();
        return b;
    }
    static Budget fixed_predictions(long calls) {
        Budget b;
        b.mode_ = BudgetMode::fixed_predictions;
        b.virtual_total_ = std::numeric_limits<double>::infinity();
        b.calls_remaining_ = calls;
        return b;
    }
    static Budget unlimited() { return fixed_time(std::numeric_limits<double>::infinity()); }

    BudgetMode mode() const { return mode_; }
    double spent() const { return virtual_spent_; }
    long calls_remaining() const { return calls_remaining_; }

    /// Charge `n_calls` predictor invocations of `latency_each` plus a flat
    /// overhead. All-or-nothing: returns false (charging nothing) when the
    /// budget cannot cover it.
    bool try_charge(long n_calls, double latency_each, double overhead = 0.0) {
        const double cost = static_cast<double>(n_calls) * latency_each + overhead;
        if (mode_ == BudgetMode::fixed_time) {
            if (virtual_spent_ + cost > virtual_total_ + 1e-12) return false;
        } else {
            if (n_calls > calls_remaining_) return false;
            calls_remaining_ -= n_calls;
        }
        virtual_spent_ += cost;
        return true;
    }

private:
    BudgetMode mode_ = BudgetMode::fixed_time;
    double virtual_total_ = std::numeric_limits<double>::infinity();
    double virtual_spent_ = 0.0;
    long calls_remaining_ = 0;
};

struct TickConfig {
    double dt_sim = 0.03;
    double tick_rate = 30.0;  // Hz; 0 = unconstrained
    BudgetMode mode = BudgetMode::fixed_time;
    int predictor_stride = 3;
    long prediction_count = 500;  // per-decision call budget in fixed_predictions mode
    double lookahead = 3.0;
    double wheelbase = 2.8;
    double max_steer = 0.6;
    double collision_buffer = 0.3;

    double dt_frame() const { return dt_sim * predictor_stride; }
    Budget make_budget() const {
        if (mode == BudgetMode::fixed_predictions) return Budget::fixed_predictions(prediction_count);
        if (tick_rate <= 0.0) return Budget::unlimited();
        return Budget::fixed_time(1.0 / tick_rate);
    }
};

struct WorldState {
    int tick = 0;
    AgentState ego;
    std::vector<AgentState> exo;
    History ego_history;                 // last T_o frames at stride cadence
    std::vector<History> exo_histories;  // parallel to exo
};

/// Current positions of every agent except `exclude_agent_id` (the S-KNN
/// social context).
std::vector<Vec2> neighbor_positions(const WorldState& world, int exclude_agent_id);

struct LoggedPrediction {
    int issue_tick = 0;
    int agent_id = 0;
    PredictionSet prediction;
    bool complete_history = false;
    double ego_distance = 0.0;  // center distance to the ego at issue time
};

struct DecisionRecord {
    int tick = 0;
    double accel = 0.0;
    double virtual_spent = 0.0;
    bool fallback = false;
};

struct CollisionEvent {
    int tick = 0;
    int agent_id = 0;
};

struct EpisodeLog {
    Scenario scenario_full;  // replayable provenance
    TickConfig ticks_cfg;
    std::string planner_id;
    std::string predictor_id;
    bool scripted_exo = false;
    std::vector<int> agent_ids;  // column order for ticks[t]: ego first
    std::vector<AgentKind> agent_kinds;
    std::vector<std::vector<AgentState>> ticks;  // ticks[t][i] = state of agent_ids[i]
    std::vector<DecisionRecord> decisions;
    std::vector<LoggedPrediction> predictions;
    std::vector<CollisionEvent> collisions;

    int num_ticks() const { return static_cast<int>(ticks.size()); }
    double dt_sim() const { return ticks_cfg.dt_sim; }
    int stride() const { return ticks_cfg.predictor_stride; }
    /// Position of agent `agent_id` at `tick`, if logged.
    std::optional<Vec2> position_at(int tick, int agent_id) const;
    std::optional<double> speed_at(int tick, int agent_id) const;
};

struct PlanInput {
    const WorldState& world;
    const Scenario& scenario;
    const ExoScript* script = nullptr;
    const TickConfig& ticks;
    std::uint64_t episode_seed = 0;
};

struct PlannerDecision {
    double accel = 0.0;
    bool fallback = false;
    double virtual_spent = 0.0;
    std::vector<LoggedPrediction> predictions;
};

class Planner {
public:
    virtual ~Planner() = default;
    virtual std::string name() const = 0;
    virtual void begin_episode(const Scenario& scenario, std::uint64_t episode_seed) = 0;
    virtual PlannerDecision decide(const PlanInput& input, const Predictor& predictor,
                                   Budget& budget) = 0;
};

class EpisodeError : public std::runtime_error {
public:
    EpisodeError(int tick, const std::string& what)
        : std::runtime_error("tick " + std::to_string(tick) + ": " + what), tick_(tick) {}
    int tick() const { return tick_; }

private:
    int tick_;
};

/// Advance every exo-agent one tick: RVO-feasible velocity toward its next
/// path point at preferred speed (all other agents, ego included, act as
/// obstacles), then holonomic motion for pedestrians/cyclists or
/// path-constrained motion for vehicles. Brakes toward zero when no feasible
/// velocity exists.
std::vector<AgentState> step_exo_agents(const WorldState& world, const Scenario& scenario,
                                        double dt);

/// Exo-only rollout (no ego) for `ticks` simulation steps; the ground truth
/// replayed by scripted episodes and read by the noisy oracle.
ExoScript compute_exo_script(const Scenario& scenario, const TickConfig& cfg, int ticks);

/// Synchronous closed loop: the planner is invoked every predictor_stride
/// ticks with a fresh budget, its acceleration is latched and applied with
/// pure-pursuit steering each tick, exo-agents step each tick, and everything
/// is logged. Ends early only when the ego reaches the path end.
EpisodeLog run_episode(const Scenario& scenario, Planner& planner, const Predictor& predictor,
                       const TickConfig& cfg);

/// Re-simulate the logged actions; returns true when every tick state matches
/// the log exactly (as serialized at 9 significant digits).
bool replay_matches(const EpisodeLog& log);

// --- Episode log file I/O (states/predictions/decisions CSVs + meta JSON) ---

void write_episode_files(const EpisodeLog& log, const std::string& prefix);
EpisodeLog read_episode_files(const std::string& prefix);

/// Build a trajectory database from logs: every agent window of T_o history
/// frames plus T_p future frames (sliding by one frame) becomes one entry,
/// ordered by (log index, agent, tick).
TrajectoryDatabase build_database(const std::vector<const EpisodeLog*>& logs);

}  // namespace predloop
