#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "predloop/geometry.hpp"
#include "predloop/rng.hpp"

namespace predloop {

inline constexpr int kHistoryFrames = 20;    // T_o
inline constexpr int kPredictionFrames = 30; // T_p

/// One observed frame of an agent at prediction-frame cadence.
struct HistoryFrame {
    int tick = 0;
    Vec2 position;
    double heading = 0.0;
    double speed = 0.0;
};

struct History {
    int agent_id = 0;
    AgentKind kind = AgentKind::vehicle;
    std::vector<HistoryFrame> frames;  // time-ordered, uniform spacing, size <= T_o

    bool complete() const { return static_cast<int>(frames.size()) == kHistoryFrames; }
    const HistoryFrame& last() const { return frames.back(); }
};

using Trajectory = std::vector<Vec2>;  // exactly T_p future positions

struct PredictionSet {
    std::vector<Trajectory> modes;      // 1 <= K <= 6
    std::vector<double> mode_weights;   // nonnegative, sum 1
    double virtual_latency = 0.0;       // declared cost of the call, seconds
    bool k_clamped = false;             // K was reduced to the database size

    int num_modes() const { return static_cast<int>(modes.size()); }
    /// Index of the highest-weight mode (lowest index on ties); the mode
    /// planners consume.
    int best_mode() const;
    void validate() const;  // throws std::logic_error on invariant violation
};

/// Scripted exo future used by the noisy oracle: per-agent positions for every
/// simulation tick, computed by an exo-only rollout.
struct ExoScript {
    std::vector<int> agent_ids;
    // states[t][i] is the state of agent_ids[i] at tick t.
    std::vector<std::vector<AgentState>> states;

    int ticks() const { return static_cast<int>(states.size()); }
    std::optional<Vec2> position_at(int tick, int agent_id) const;
};

struct PredictContext {
    const ExoScript* script = nullptr;  // oracle only
    int tick = 0;                       // issue tick
    int stride = 3;                     // simulation ticks per prediction frame
    double dt_frame = 0.09;             // seconds per prediction frame
    std::uint64_t episode_seed = 0;
};

class InsufficientHistoryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class EmptyDatabaseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Constant-velocity extrapolation: the last observed displacement repeated
/// T_p times. Needs at least 2 frames.
PredictionSet predict_cv(const History& history, double dt_frame);

/// Constant-acceleration extrapolation from the last two displacement deltas;
/// speed floored at 0. Needs at least 3 frames.
PredictionSet predict_ca(const History& history, double dt_frame);

/// Ground-truth future from the exo script plus iid Gaussian noise of std
/// `sigma` per coordinate. The noise stream is derived from
/// (episode seed, tick, agent id) so concurrency cannot perturb it.
PredictionSet predict_noisy_oracle(const History& history, const PredictContext& ctx, double sigma,
                                   double latency);

/// One database entry: history displacements and the future, both rotated into
/// the agent frame at the last history pose, plus the social feature for
/// S-KNN (relative positions of the 3 nearest neighbors, zero-padded).
struct TrajectoryEntry {
    std::array<double, 2 * (kHistoryFrames - 1)> feature{};
    std::array<double, 6> neighbor_feature{};
    std::array<double, 2 * kPredictionFrames> future{};
};

class TrajectoryDatabase {
public:
    void add(const TrajectoryEntry& e) { entries_.push_back(e); }
    bool empty() const { return entries_.empty(); }
    std::size_t size() const { return entries_.size(); }
    const TrajectoryEntry& entry(std::size_t i) const { return entries_[i]; }

    void save_csv(const std::string& path) const;
    static TrajectoryDatabase load_csv(const std::string& path);

private:
    std::vector<TrajectoryEntry> entries_;
};

/// History feature: canonicalized displacement sequence of a complete history.
std::array<double, 2 * (kHistoryFrames - 1)> history_feature(const History& history);

/// Social feature: agent-frame offsets of the up-to-3 nearest neighbor
/// positions at the last history frame, sorted by distance, zero-padded.
std::array<double, 6> neighbor_feature(const History& history,
                                       const std::vector<Vec2>& neighbor_positions);

/// K nearest database entries by L2 feature distance, futures mapped into the
/// query agent frame. Ties by insertion order; K above the database size is
/// clamped and flagged.
PredictionSet predict_knn(const History& history, const TrajectoryDatabase& db, int k,
                          double latency = 0.224);

/// KNN over the concatenation of the history feature and the social feature.
PredictionSet predict_sknn(const History& history, const std::vector<Vec2>& neighbor_positions,
                           const TrajectoryDatabase& db, int k, double latency = 0.248);

/// Predictor interface used by the planners and the episode loop.
class Predictor {
public:
    virtual ~Predictor() = default;
    virtual std::string name() const = 0;
    virtual double latency() const = 0;
    /// Frames of history required before predict() can run. Planners use a
    /// zero-cost current-velocity stand-in for agents below this.
    virtual int min_history_frames() const = 0;
    /// Whether the episode must run exo-agents in scripted playback mode.
    virtual bool needs_script() const { return false; }
    virtual PredictionSet predict(const History& history,
                                  const std::vector<Vec2>& neighbor_positions,
                                  const PredictContext& ctx) const = 0;
};

class CvPredictor final : public Predictor {
public:
    std::string name() const override { return "cv"; }
    double latency() const override { return 0.001; }
    int min_history_frames() const override { return 2; }
    PredictionSet predict(const History& h, const std::vector<Vec2>&,
                          const PredictContext& ctx) const override {
        return predict_cv(h, ctx.dt_frame);
    }
};

class CaPredictor final : public Predictor {
public:
    std::string name() const override { return "ca"; }
    double latency() const override { return 0.001; }
    int min_history_frames() const override { return 3; }
    PredictionSet predict(const History& h, const std::vector<Vec2>&,
                          const PredictContext& ctx) const override {
        return predict_ca(h, ctx.dt_frame);
    }
};

class KnnPredictor final : public Predictor {
public:
    KnnPredictor(std::shared_ptr<const TrajectoryDatabase> db, int k, double latency = 0.224)
        : db_(std::move(db)), k_(k), latency_(latency) {}
    std::string name() const override { return "knn"; }
    double latency() const override { return latency_; }
    int min_history_frames() const override { return kHistoryFrames; }
    PredictionSet predict(const History& h, const std::vector<Vec2>&,
                          const PredictContext&) const override {
        return predict_knn(h, *db_, k_, latency_);
    }

private:
    std::shared_ptr<const TrajectoryDatabase> db_;
    int k_;
    double latency_;
};

class SknnPredictor final : public Predictor {
public:
    SknnPredictor(std::shared_ptr<const TrajectoryDatabase> db, int k, double latency = 0.248)
        : db_(std::move(db)), k_(k), latency_(latency) {}
    std::string name() const override { return "sknn"; }
    double latency() const override { return latency_; }
    int min_history_frames() const override { return kHistoryFrames; }
    PredictionSet predict(const History& h, const std::vector<Vec2>& neighbors,
                          const PredictContext&) const override {
        return predict_sknn(h, neighbors, *db_, k_, latency_);
    }

private:
    std::shared_ptr<const TrajectoryDatabase> db_;
    int k_;
    double latency_;
};

class NoisyOraclePredictor final : public Predictor {
public:
    NoisyOraclePredictor(std::string id, double sigma, double latency)
        : id_(std::move(id)), sigma_(sigma), latency_(latency) {
        if (sigma_ < 0.0 || latency_ < 0.0)
            throw std::invalid_argument("noisy oracle: sigma and latency must be >= 0");
    }
    std::string name() const override { return id_; }
    double latency() const override { return latency_; }
    int min_history_frames() const override { return 1; }
    bool needs_script() const override { return true; }
    PredictionSet predict(const History& h, const std::vector<Vec2>&,
                          const PredictContext& ctx) const override {
        return predict_noisy_oracle(h, ctx, sigma_, latency_);
    }

private:
    std::string id_;
    double sigma_;
    double latency_;
};

}  // namespace predloop
