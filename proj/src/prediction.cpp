#include "predloop/prediction.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "predloop/csv.hpp"

namespace predloop {

int PredictionSet::best_mode() const {
    int best = 0;
    for (int i = 1; i < num_modes(); ++i) {
        if (mode_weights[i] > mode_weights[best]) best = i;
    }
    return best;
}

void PredictionSet::validate() const {
    if (modes.empty() || modes.size() > 6) throw std::logic_error("PredictionSet: K out of [1,6]");
    if (mode_weights.size() != modes.size())
        throw std::logic_error("PredictionSet: weight count mismatch");
    double sum = 0.0;
    for (double w : mode_weights) {
        if (w < 0.0) throw std::logic_error("PredictionSet: negative weight");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::logic_error("PredictionSet: weights not normalized");
    for (const auto& m : modes) {
        if (static_cast<int>(m.size()) != kPredictionFrames)
            throw std::logic_error("PredictionSet: trajectory length != T_p");
    }
}

std::optional<Vec2> ExoScript::position_at(int tick, int agent_id) const {
    if (tick < 0 || tick >= ticks()) return std::nullopt;
    for (std::size_t i = 0; i < agent_ids.size(); ++i) {
        if (agent_ids[i] == agent_id) return states[tick][i].position();
    }
    return std::nullopt;
}

namespace {

PredictionSet single_mode(Trajectory traj, double latency) {
    PredictionSet out;
    out.modes.push_back(std::move(traj));
    out.mode_weights.push_back(1.0);
    out.virtual_latency = latency;
    return out;
}

}  // namespace

PredictionSet predict_cv(const History& history, double /*dt_frame*/) {
    if (history.frames.size() < 2)
        throw InsufficientHistoryError("predict_cv: need at least 2 frames");
    const auto& frames = history.frames;
    const Vec2 disp = frames.back().position - frames[frames.size() - 2].position;
    Trajectory traj;
    traj.reserve(kPredictionFrames);
    Vec2 p = frames.back().position;
    for (int i = 0; i < kPredictionFrames; ++i) {
        p += disp;
        traj.push_back(p);
    }
    return single_mode(std::move(traj), 0.001);
}

PredictionSet predict_ca(const History& history, double /*dt_frame*/) {
    if (history.frames.size() < 3)
        throw InsufficientHistoryError("predict_ca: need at least 3 frames");
    const auto& frames = history.frames;
    const Vec2 d1 = frames[frames.size() - 2].position - frames[frames.size() - 3].position;
    const Vec2 d2 = frames.back().position - frames[frames.size() - 2].position;
    const double s1 = d1.norm(), s2 = d2.norm();
    Vec2 dir = d2.normalized();
    if (s2 == 0.0) dir = d1.normalized();
    const double accel = s2 - s1;  // per-frame speed delta
    Trajectory traj;
    traj.reserve(kPredictionFrames);
    Vec2 p = frames.back().position;
    for (int i = 1; i <= kPredictionFrames; ++i) {
        const double step = std::max(0.0, s2 + accel * i);
        p += dir * step;
        traj.push_back(p);
    }
    return single_mode(std::move(traj), 0.001);
}

PredictionSet predict_noisy_oracle(const History& history, const PredictContext& ctx, double sigma,
                                   double latency) {
    if (ctx.script == nullptr) throw std::logic_error("noisy oracle: no exo script available");
    Rng rng(derive_seed(ctx.episode_seed, stream_tags::kOracleNoise,
                        static_cast<std::uint64_t>(ctx.tick),
                        static_cast<std::uint64_t>(history.agent_id)));
    Trajectory traj;
    traj.reserve(kPredictionFrames);
    Vec2 fallback = history.frames.empty() ? Vec2{0.0, 0.0} : history.last().position;
    for (int j = 1; j <= kPredictionFrames; ++j) {
        auto p = ctx.script->position_at(ctx.tick + j * ctx.stride, history.agent_id);
        // Past the script horizon the agent is extrapolated as holding its
        // final scripted position.
        Vec2 base = p ? *p : (traj.empty() ? fallback : traj.back());
        if (p) fallback = *p;
        if (sigma > 0.0) base += Vec2{rng.normal(0.0, sigma), rng.normal(0.0, sigma)};
        traj.push_back(base);
    }
    return single_mode(std::move(traj), latency);
}

std::array<double, 2 * (kHistoryFrames - 1)> history_feature(const History& history) {
    if (!history.complete())
        throw InsufficientHistoryError("history_feature: incomplete history");
    std::array<double, 2 * (kHistoryFrames - 1)> f{};
    const double theta = history.last().heading;
    for (int i = 0; i + 1 < kHistoryFrames; ++i) {
        const Vec2 d =
            (history.frames[i + 1].position - history.frames[i].position).rotated(-theta);
        f[2 * i] = d.x;
        f[2 * i + 1] = d.y;
    }
    return f;
}

std::array<double, 6> neighbor_feature(const History& history,
                                       const std::vector<Vec2>& neighbor_positions) {
    if (history.frames.empty())
        throw InsufficientHistoryError("neighbor_feature: empty history");
    const Vec2 origin = history.last().position;
    const double theta = history.last().heading;
    std::vector<Vec2> rel;
    rel.reserve(neighbor_positions.size());
    for (const Vec2& p : neighbor_positions) rel.push_back((p - origin).rotated(-theta));
    std::stable_sort(rel.begin(), rel.end(),
                     [](const Vec2& a, const Vec2& b) { return a.norm_sq() < b.norm_sq(); });
    std::array<double, 6> f{};
    for (std::size_t i = 0; i < rel.size() && i < 3; ++i) {
        f[2 * i] = rel[i].x;
        f[2 * i + 1] = rel[i].y;
    }
    return f;
}

namespace {

struct Ranked {
    double dist_sq;
    std::size_t index;
};

template <typename DistFn>
PredictionSet knn_common(const History& history, const TrajectoryDatabase& db, int k,
                         double latency, DistFn&& dist_sq_of) {
    if (db.empty()) throw EmptyDatabaseError("knn: empty trajectory database");
    if (!history.complete()) throw InsufficientHistoryError("knn: incomplete history");
    if (k < 1) throw std::invalid_argument("knn: k must be >= 1");

    PredictionSet out;
    out.virtual_latency = latency;
    if (k > static_cast<int>(db.size())) {
        k = static_cast<int>(db.size());
        out.k_clamped = true;
    }
    std::vector<Ranked> ranked;
    ranked.reserve(db.size());
    for (std::size_t i = 0; i < db.size(); ++i) ranked.push_back({dist_sq_of(db.entry(i)), i});
    // Ties by insertion order: stable sort on distance only.
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const Ranked& a, const Ranked& b) { return a.dist_sq < b.dist_sq; });

    const Vec2 origin = history.last().position;
    const double theta = history.last().heading;
    for (int m = 0; m < k; ++m) {
        const TrajectoryEntry& e = db.entry(ranked[static_cast<std::size_t>(m)].index);
        Trajectory traj;
        traj.reserve(kPredictionFrames);
        Vec2 p = origin;
        for (int j = 0; j < kPredictionFrames; ++j) {
            p += Vec2{e.future[2 * j], e.future[2 * j + 1]}.rotated(theta);
            traj.push_back(p);
        }
        out.modes.push_back(std::move(traj));
        out.mode_weights.push_back(1.0 / k);
    }
    return out;
}

double array_dist_sq(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace

PredictionSet predict_knn(const History& history, const TrajectoryDatabase& db, int k,
                          double latency) {
    const auto f = history_feature(history);
    return knn_common(history, db, k, latency, [&](const TrajectoryEntry& e) {
        return array_dist_sq(f.data(), e.feature.data(), f.size());
    });
}

PredictionSet predict_sknn(const History& history, const std::vector<Vec2>& neighbor_positions,
                           const TrajectoryDatabase& db, int k, double latency) {
    const auto f = history_feature(history);
    const auto nf = neighbor_feature(history, neighbor_positions);
    return knn_common(history, db, k, latency, [&](const TrajectoryEntry& e) {
        return array_dist_sq(f.data(), e.feature.data(), f.size()) +
               array_dist_sq(nf.data(), e.neighbor_feature.data(), nf.size());
    });
}

void TrajectoryDatabase::save_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "layout:feature[" << 2 * (kHistoryFrames - 1) << "],neighbor[6],future["
        << 2 * kPredictionFrames << "]\n";
    for (const TrajectoryEntry& e : entries_) {
        std::string line;
        bool first = true;
        auto append = [&](double v) {
            if (!first) line += ',';
            line += fmt_g17(v);
            first = false;
        };
        for (double v : e.feature) append(v);
        for (double v : e.neighbor_feature) append(v);
        for (double v : e.future) append(v);
        out << line << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

TrajectoryDatabase TrajectoryDatabase::load_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string header;
    if (!std::getline(in, header) || header.rfind("layout:", 0) != 0)
        throw std::runtime_error("trajectory database missing layout header: " + path);
    TrajectoryDatabase db;
    std::string line;
    const std::size_t expected = 2 * (kHistoryFrames - 1) + 6 + 2 * kPredictionFrames;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != expected)
            throw std::runtime_error("trajectory database row has wrong arity: " + path);
        TrajectoryEntry e;
        std::size_t i = 0;
        for (double& v : e.feature) v = parse_double(fields[i++], "feature");
        for (double& v : e.neighbor_feature) v = parse_double(fields[i++], "neighbor");
        for (double& v : e.future) v = parse_double(fields[i++], "future");
        db.add(e);
    }
    return db;
}

}  // namespace predloop
