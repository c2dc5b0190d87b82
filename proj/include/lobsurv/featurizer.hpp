#pragma once

// Sample construction from labeled event streams. The stream is replayed
// through the matching engine (labels are recomputed, never trusted from the
// generator), candidate orders are those inserted at the best level of their
// side, and observation times are drawn uniformly over each order's resting
// interval with up to five retries.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "lobsurv/book.hpp"
#include "lobsurv/sim.hpp"
#include "lobsurv/snapshot.hpp"
#include "lobsurv/util.hpp"

namespace lobsurv {

constexpr std::size_t kActionCols = 6;  // raw action-type code + five agent ratios

struct OrderSample {
    std::size_t lookback = 0;
    std::vector<double> a_actions;  // lookback x kActionCols, row-major
    std::vector<double> x_lob;      // lookback x kSnapshotWidth, row-major
    std::uint32_t queue = 0;
    double t0 = 0.0;
    double duration = 0.0;
    int delta = 0;
    Side side = Side::Bid;

    double action_code(std::size_t row) const { return a_actions[row * kActionCols]; }
};

struct FeaturizerConfig {
    std::size_t lookback = 50;
    std::size_t per_day_quota = 100;
    std::size_t max_draws = 5;
};

struct DrawOutcome {
    std::vector<OrderSample> samples;
    std::size_t n_candidates = 0;
    bool quota_unmet = false;
};

// ----------------------------- stream replay -----------------------------

inline EventIntent intent_from_event(const EventRecord& ev) {
    EventIntent in;
    in.kind = ev.action_type;
    in.agent_id = ev.agent_id;
    in.order_id = ev.order_id;
    in.side = ev.side;
    in.price = ev.price_ticks;
    in.quantity = ev.quantity;
    return in;
}

// Replays a session stream event by event, mirroring the generator's book
// seeding and volatility updates so recomputed snapshots match the stream.
class StreamReplayer {
public:
    StreamReplayer(const SimConfig& sim) : sim_(sim) {
        std::uint64_t next_id = 1;
        detail::seed_book(engine_, sim_, next_id);
    }

    ApplyResult apply(const EventRecord& ev) {
        ApplyResult res = engine_.apply(intent_from_event(ev), ev.time);
        if (res.rejected)
            throw std::runtime_error("stream replay rejected event seq " + std::to_string(ev.seq) +
                                     ": " + res.reject_reason);
        if (res.event.action_type != ev.action_type)
            throw std::runtime_error("stream replay diverged at seq " + std::to_string(ev.seq));
        if (!res.fills.empty()) {
            const auto bb = engine_.book().best_bid();
            const auto ba = engine_.book().best_ask();
            if (bb && ba) vol_.on_trade(0.5 * (double(*bb) + double(*ba)));
        }
        return res;
    }

    std::array<double, kSnapshotWidth> snapshot(double time, Side studied_side) const {
        SnapshotContext ctx{vol_.value(), time / sim_.session_seconds};
        return snapshot_features(engine_.book(), studied_side, ctx);
    }

    const MatchingEngine& engine() const { return engine_; }

private:
    SimConfig sim_;
    MatchingEngine engine_;
    RollingVolatility vol_;
};

// ----------------------------- sample drawing -----------------------------

namespace detail {

struct CandidateState {
    std::size_t insert_event = 0;
    double submit_time = 0.0;
    Side side = Side::Bid;
    std::optional<double> first_fill;
    std::optional<double> cancel_time;
    // piecewise-constant (event index, at best, units ahead); queue is -1 when
    // not at the best level
    std::vector<std::tuple<std::size_t, bool, std::int64_t>> timeline;

    double t_star(double t_close) const {
        if (first_fill) return *first_fill;
        if (cancel_time) return *cancel_time;
        return t_close;
    }
    bool executed() const { return first_fill.has_value(); }
};

}  // namespace detail

inline DrawOutcome draw_samples(const std::vector<EventRecord>& events, const SimConfig& sim,
                                const FeaturizerConfig& cfg, std::uint64_t rng_seed) {
    const auto profiles = sim.agent_profiles();
    const double t_close = sim.session_seconds;
    const std::size_t L = cfg.lookback;

    StreamReplayer replay(sim);
    std::vector<double> times;
    std::vector<double> act_rows;   // n x kActionCols
    std::vector<double> snap_rows;  // n x kSnapshotWidth, bid perspective
    times.reserve(events.size());

    std::unordered_map<std::uint64_t, detail::CandidateState> cands;
    std::vector<std::uint64_t> live;
    std::vector<std::uint64_t> candidate_order;  // insertion order

    for (std::size_t i = 0; i < events.size(); ++i) {
        const EventRecord& ev = events[i];
        ApplyResult res = replay.apply(ev);
        times.push_back(ev.time);

        act_rows.push_back(static_cast<double>(static_cast<int>(ev.action_type)));
        const auto r = profiles.at(static_cast<std::size_t>(ev.agent_id)).ratios();
        act_rows.insert(act_rows.end(), r.begin(), r.end());
        const auto snap = replay.snapshot(ev.time, Side::Bid);
        snap_rows.insert(snap_rows.end(), snap.begin(), snap.end());

        // new candidate: plain insertion resting at the best level
        if (ev.action_type == ActionType::Insert && replay.engine().has_order(ev.order_id)) {
            const Order* o = replay.engine().find_order(ev.order_id);
            const auto best = o->side == Side::Bid ? replay.engine().book().best_bid()
                                                   : replay.engine().book().best_ask();
            if (best && o->price == *best) {
                detail::CandidateState c;
                c.insert_event = i;
                c.submit_time = ev.time;
                c.side = o->side;
                cands.emplace(ev.order_id, std::move(c));
                live.push_back(ev.order_id);
                candidate_order.push_back(ev.order_id);
            }
        }
        for (const auto& f : res.fills) {
            auto mark = [&](std::uint64_t id) {
                auto it = cands.find(id);
                if (it != cands.end() && !it->second.first_fill) it->second.first_fill = ev.time;
            };
            mark(f.maker_order_id);
            mark(f.taker_order_id);
        }
        if (ev.action_type == ActionType::Cancel) {
            auto it = cands.find(ev.order_id);
            if (it != cands.end() && !it->second.cancel_time) it->second.cancel_time = ev.time;
        }

        // advance candidate timelines
        for (std::size_t c = 0; c < live.size();) {
            const std::uint64_t id = live[c];
            auto& st = cands.at(id);
            const Order* o = replay.engine().find_order(id);
            if (!o) {
                live.erase(live.begin() + static_cast<std::ptrdiff_t>(c));
                continue;
            }
            const auto best = o->side == Side::Bid ? replay.engine().book().best_bid()
                                                   : replay.engine().book().best_ask();
            const bool at_best = best && o->price == *best;
            std::int64_t queue = -1;
            if (at_best) {
                auto ahead = replay.engine().book().units_ahead(id);
                queue = ahead ? *ahead : -1;
            }
            if (st.timeline.empty() || std::get<1>(st.timeline.back()) != at_best ||
                std::get<2>(st.timeline.back()) != queue)
                st.timeline.emplace_back(i, at_best, queue);
            ++c;
        }
    }

    // sampling pass
    DrawOutcome out;
    out.n_candidates = candidate_order.size();
    std::mt19937_64 rng(rng_seed);
    std::vector<std::uint64_t> shuffled = candidate_order;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);

    for (const std::uint64_t id : shuffled) {
        if (out.samples.size() >= cfg.per_day_quota) break;
        const auto& st = cands.at(id);
        const double t_star = st.t_star(t_close);
        if (!(t_star > st.submit_time)) continue;
        std::uniform_real_distribution<double> u(st.submit_time, t_star);

        for (std::size_t attempt = 0; attempt < cfg.max_draws; ++attempt) {
            const double t0 = u(rng);
            // last event strictly before t0
            auto it = std::lower_bound(times.begin(), times.end(), t0);
            if (it == times.begin()) break;
            const std::size_t j = static_cast<std::size_t>(it - times.begin()) - 1;
            if (j + 1 < L) continue;  // not enough history yet

            // timeline lookup at event j
            auto tl = std::upper_bound(
                st.timeline.begin(), st.timeline.end(), j,
                [](std::size_t v, const auto& p) { return v < std::get<0>(p); });
            if (tl == st.timeline.begin()) continue;
            --tl;
            if (!std::get<1>(*tl)) continue;  // not resting at the best level at t0
            const std::int64_t queue = std::get<2>(*tl);
            if (queue < 0) continue;

            OrderSample s;
            s.lookback = L;
            s.queue = static_cast<std::uint32_t>(queue);
            s.t0 = t0;
            s.side = st.side;
            s.delta = st.executed() ? 1 : 0;
            s.duration = t_star - t0;
            if (!st.executed() && !st.cancel_time) s.duration = t_close - t0;
            s.a_actions.resize(L * kActionCols);
            s.x_lob.resize(L * kSnapshotWidth);
            const std::size_t first = j + 1 - L;
            for (std::size_t r = 0; r < L; ++r) {
                const std::size_t e = first + r;
                std::copy_n(act_rows.data() + e * kActionCols, kActionCols,
                            s.a_actions.data() + r * kActionCols);
                const double* snap = snap_rows.data() + e * kSnapshotWidth;
                if (st.side == Side::Ask) {
                    std::array<double, kSnapshotWidth> bidview;
                    std::copy_n(snap, kSnapshotWidth, bidview.begin());
                    const auto m = mirror_snapshot(bidview);
                    std::copy_n(m.begin(), kSnapshotWidth, s.x_lob.data() + r * kSnapshotWidth);
                } else {
                    std::copy_n(snap, kSnapshotWidth, s.x_lob.data() + r * kSnapshotWidth);
                }
            }
            out.samples.push_back(std::move(s));
            break;
        }
    }
    out.quota_unmet = out.samples.size() < cfg.per_day_quota;
    return out;
}

// ----------------------------- normalization -----------------------------

// Per-feature z-scoring fit on the training split only. Continuous features
// (the 24 snapshot columns and the five agent ratios) are standardized;
// action-type codes, queue, duration and delta pass through raw. Constant
// columns (std == 0) are passed through unscaled.
struct NormalizationStats {
    std::array<double, kSnapshotWidth> lob_mean{}, lob_std{};
    std::array<double, 5> ratio_mean{}, ratio_std{};
};

inline NormalizationStats fit_normalizer(const std::vector<OrderSample>& train) {
    if (train.size() < 2) throw std::invalid_argument("fit_normalizer: need at least 2 samples");
    NormalizationStats st;
    double n = 0.0;
    std::array<double, kSnapshotWidth> lob_sq{};
    std::array<double, 5> ratio_sq{};
    for (const auto& s : train) {
        for (std::size_t r = 0; r < s.lookback; ++r) {
            for (std::size_t c = 0; c < kSnapshotWidth; ++c) {
                const double v = s.x_lob[r * kSnapshotWidth + c];
                st.lob_mean[c] += v;
                lob_sq[c] += v * v;
            }
            for (std::size_t c = 0; c < 5; ++c) {
                const double v = s.a_actions[r * kActionCols + 1 + c];
                st.ratio_mean[c] += v;
                ratio_sq[c] += v * v;
            }
            n += 1.0;
        }
    }
    for (std::size_t c = 0; c < kSnapshotWidth; ++c) {
        st.lob_mean[c] /= n;
        const double var = lob_sq[c] / n - st.lob_mean[c] * st.lob_mean[c];
        st.lob_std[c] = var > 0.0 ? std::sqrt(var) : 0.0;
    }
    for (std::size_t c = 0; c < 5; ++c) {
        st.ratio_mean[c] /= n;
        const double var = ratio_sq[c] / n - st.ratio_mean[c] * st.ratio_mean[c];
        st.ratio_std[c] = var > 0.0 ? std::sqrt(var) : 0.0;
    }
    return st;
}

inline OrderSample apply_normalizer(const NormalizationStats& st, const OrderSample& in) {
    OrderSample s = in;
    constexpr double eps = 1e-12;
    for (std::size_t r = 0; r < s.lookback; ++r) {
        for (std::size_t c = 0; c < kSnapshotWidth; ++c) {
            if (st.lob_std[c] <= eps) continue;
            double& v = s.x_lob[r * kSnapshotWidth + c];
            v = (v - st.lob_mean[c]) / st.lob_std[c];
        }
        for (std::size_t c = 0; c < 5; ++c) {
            if (st.ratio_std[c] <= eps) continue;
            double& v = s.a_actions[r * kActionCols + 1 + c];
            v = (v - st.ratio_mean[c]) / st.ratio_std[c];
        }
    }
    return s;
}

inline std::vector<OrderSample> apply_normalizer(const NormalizationStats& st,
                                                 const std::vector<OrderSample>& in) {
    std::vector<OrderSample> out;
    out.reserve(in.size());
    for (const auto& s : in) out.push_back(apply_normalizer(st, s));
    return out;
}

inline void save_normalizer(const NormalizationStats& st, const std::string& path) {
    nlohmann::ordered_json j;
    j["lob_mean"] = st.lob_mean;
    j["lob_std"] = st.lob_std;
    j["ratio_mean"] = st.ratio_mean;
    j["ratio_std"] = st.ratio_std;
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write normalizer: " + path);
    os << j.dump(2) << "\n";
}

inline NormalizationStats load_normalizer(const std::string& path) {
    auto j = nlohmann::json::parse(read_text_file(path));
    NormalizationStats st;
    for (std::size_t i = 0; i < kSnapshotWidth; ++i) {
        st.lob_mean[i] = j.at("lob_mean").at(i).get<double>();
        st.lob_std[i] = j.at("lob_std").at(i).get<double>();
    }
    for (std::size_t i = 0; i < 5; ++i) {
        st.ratio_mean[i] = j.at("ratio_mean").at(i).get<double>();
        st.ratio_std[i] = j.at("ratio_std").at(i).get<double>();
    }
    return st;
}

// ----------------------------- shard files -----------------------------

inline constexpr char kShardMagic[] = "LOBDS001";

inline void save_shard(const std::vector<OrderSample>& samples, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write shard: " + path);
    os.write(kShardMagic, 8);
    detail::write_u64(os, samples.size());
    for (const auto& s : samples) {
        detail::write_u64(os, s.lookback);
        detail::write_u64(os, kActionCols);
        detail::write_u64(os, kSnapshotWidth);
        detail::write_f64(os, &s.t0, 1);
        detail::write_f64(os, s.a_actions.data(), s.a_actions.size());
        detail::write_f64(os, s.x_lob.data(), s.x_lob.size());
        std::uint32_t q = s.queue;
        os.write(reinterpret_cast<const char*>(&q), 4);
        detail::write_f64(os, &s.duration, 1);
        std::uint8_t d = static_cast<std::uint8_t>(s.delta);
        std::uint8_t sd = static_cast<std::uint8_t>(s.side);
        os.write(reinterpret_cast<const char*>(&d), 1);
        os.write(reinterpret_cast<const char*>(&sd), 1);
    }
    if (!os) throw std::runtime_error("shard write failed: " + path);
}

inline std::vector<OrderSample> load_shard(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open shard: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kShardMagic, 8) != 0)
        throw std::runtime_error("not a sample shard: " + path);
    const std::uint64_t count = detail::read_u64(is);
    std::vector<OrderSample> out;
    out.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        OrderSample s;
        s.lookback = detail::read_u64(is);
        const std::uint64_t ac = detail::read_u64(is);
        const std::uint64_t xc = detail::read_u64(is);
        if (ac != kActionCols || xc != kSnapshotWidth)
            throw std::runtime_error("shard column mismatch in " + path);
        detail::read_f64(is, &s.t0, 1);
        s.a_actions.resize(s.lookback * kActionCols);
        s.x_lob.resize(s.lookback * kSnapshotWidth);
        detail::read_f64(is, s.a_actions.data(), s.a_actions.size());
        detail::read_f64(is, s.x_lob.data(), s.x_lob.size());
        std::uint32_t q;
        is.read(reinterpret_cast<char*>(&q), 4);
        s.queue = q;
        detail::read_f64(is, &s.duration, 1);
        std::uint8_t d, sd;
        is.read(reinterpret_cast<char*>(&d), 1);
        is.read(reinterpret_cast<char*>(&sd), 1);
        if (!is) throw std::runtime_error("truncated shard: " + path);
        s.delta = d;
        s.side = static_cast<Side>(sd);
        out.push_back(std::move(s));
    }
    return out;
}

inline void export_samples_ndjson(const std::vector<OrderSample>& samples, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write ndjson export: " + path);
    for (const auto& s : samples) {
        nlohmann::ordered_json j;
        j["a_actions"] = s.a_actions;
        j["x_lob"] = s.x_lob;
        j["queue"] = s.queue;
        j["t0"] = s.t0;
        j["duration"] = s.duration;
        j["delta"] = s.delta;
        j["side"] = side_name(s.side);
        os << j.dump() << "\n";
    }
}

}  // namespace lobsurv
