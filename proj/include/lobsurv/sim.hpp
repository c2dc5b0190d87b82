#pragma once

// Synthetic session generator: a population of scripted agents drives the
// matching engine under an exponential event clock. Each agent draws its next
// action type from a categorical distribution parameterized by its profile,
// prices passive inserts geometrically around the touch, and targets its own
// oldest order for cancels and modifications. The emitted stream is a complete
// intent log: replaying it through the engine reproduces the book exactly.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "lobsurv/book.hpp"
#include "lobsurv/snapshot.hpp"
#include "lobsurv/util.hpp"

namespace lobsurv {

struct AgentProfile {
    std::int64_t agent_id = 0;
    double limit_ratio = 0.4;
    double market_ratio = 0.1;
    double cancel_ratio = 0.3;
    double trade_ratio = 0.5;
    double aggressive_trade_ratio = 0.3;

    std::array<double, 5> ratios() const {
        return {limit_ratio, market_ratio, cancel_ratio, trade_ratio, aggressive_trade_ratio};
    }

    void validate() const {
        for (double r : ratios())
            if (r < 0.0 || r > 1.0) throw std::invalid_argument("agent ratio outside [0,1]");
        if (limit_ratio + market_ratio + cancel_ratio > 1.0 + 1e-9)
            throw std::invalid_argument("limit+market+cancel ratios exceed 1");
    }
};

struct SimConfig {
    std::size_t n_agents = 20;
    double session_seconds = 600.0;
    double mean_event_rate = 50.0;  // events per second
    std::uint64_t seed = 1;
    std::size_t n_days = 10;
    std::int64_t init_price = 10000;
    // (agent index, ratio name) -> value
    std::map<std::pair<std::size_t, std::string>, double> overrides;

    // Default profiles are a deterministic function of the seed, so the
    // featurizer can rebuild them from the same config without a sidecar file.
    std::vector<AgentProfile> agent_profiles() const {
        if (n_agents == 0) throw std::invalid_argument("sim config: empty agent population");
        std::mt19937_64 rng(derive_seed(seed, "agent-profiles"));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::vector<AgentProfile> out(n_agents);
        for (std::size_t i = 0; i < n_agents; ++i) {
            AgentProfile& p = out[i];
            p.agent_id = static_cast<std::int64_t>(i);
            p.limit_ratio = 0.30 + 0.25 * u(rng);
            p.market_ratio = 0.05 + 0.17 * u(rng);
            p.cancel_ratio = 0.18 + 0.20 * u(rng);
            const double s = p.limit_ratio + p.market_ratio + p.cancel_ratio;
            if (s > 0.92) {
                p.limit_ratio *= 0.92 / s;
                p.market_ratio *= 0.92 / s;
                p.cancel_ratio *= 0.92 / s;
            }
            p.trade_ratio = 0.25 + 0.50 * u(rng);
            p.aggressive_trade_ratio = 0.10 + 0.80 * u(rng);
        }
        for (const auto& [key, value] : overrides) {
            if (key.first >= n_agents)
                throw std::invalid_argument("agent override index out of range: " +
                                            std::to_string(key.first));
            AgentProfile& p = out[key.first];
            if (key.second == "limit_ratio") p.limit_ratio = value;
            else if (key.second == "market_ratio") p.market_ratio = value;
            else if (key.second == "cancel_ratio") p.cancel_ratio = value;
            else if (key.second == "trade_ratio") p.trade_ratio = value;
            else if (key.second == "aggressive_trade_ratio") p.aggressive_trade_ratio = value;
            else throw std::invalid_argument("unknown agent ratio: " + key.second);
        }
        for (const auto& p : out) p.validate();
        return out;
    }
};

// Key-value text file with keys n_agents, session_seconds, mean_event_rate,
// seed, optional n_days / init_price, and per-agent overrides written as
// agent.<index>.<ratio> = value.
inline SimConfig parse_sim_config(const std::map<std::string, std::string>& kv) {
    SimConfig cfg;
    for (const auto& [key, value] : kv) {
        if (key == "n_agents") cfg.n_agents = std::stoul(value);
        else if (key == "session_seconds") cfg.session_seconds = std::stod(value);
        else if (key == "mean_event_rate") cfg.mean_event_rate = std::stod(value);
        else if (key == "seed") cfg.seed = std::stoull(value);
        else if (key == "n_days") cfg.n_days = std::stoul(value);
        else if (key == "init_price") cfg.init_price = std::stoll(value);
        else if (key.rfind("agent.", 0) == 0) {
            auto parts = split(key, '.');
            if (parts.size() != 3) throw std::invalid_argument("bad agent override key: " + key);
            cfg.overrides[{std::stoul(parts[1]), parts[2]}] = std::stod(value);
        } else {
            throw std::invalid_argument("unknown sim config key: " + key);
        }
    }
    return cfg;
}

// Per-order ground truth kept by the generator; tests cross-check it against
// labels recomputed from the stream.
struct OrderLifecycle {
    std::int64_t agent_id = 0;
    Side side = Side::Bid;
    double submit_time = 0.0;
    bool submitted_at_best = false;
    std::optional<double> first_fill_time;
    std::optional<double> cancel_time;
};

struct SessionResult {
    std::vector<EventRecord> events;
    std::unordered_map<std::uint64_t, OrderLifecycle> lifecycles;
    std::vector<AgentProfile> profiles;
    double session_seconds = 0.0;
};

namespace detail {

// Pre-opens the book with five levels a tick apart on both sides. Seed orders
// never appear in the stream, so the replayer rebuilds them from the config.
inline void seed_book(MatchingEngine& engine, const SimConfig& cfg, std::uint64_t& next_order_id) {
    const std::size_t n = cfg.n_agents;
    for (int level = 1; level <= 5; ++level) {
        for (int k = 0; k < 2; ++k) {
            const std::int64_t agent =
                static_cast<std::int64_t>((static_cast<std::size_t>(level * 2 + k)) % n);
            EventIntent bid{ActionType::Insert, agent, next_order_id++, Side::Bid,
                            cfg.init_price - level, 3};
            EventIntent ask{ActionType::Insert, agent, next_order_id++, Side::Ask,
                            cfg.init_price + level, 3};
            engine.apply(bid, 0.0);
            engine.apply(ask, 0.0);
        }
    }
}

inline std::int64_t geometric_offset(std::mt19937_64& rng, double p, std::int64_t cap) {
    std::geometric_distribution<std::int64_t> g(p);
    return std::min<std::int64_t>(g(rng), cap);
}

}  // namespace detail

class SessionGenerator {
public:
    SessionGenerator(const SimConfig& cfg, std::uint64_t rng_seed)
        : cfg_(cfg), profiles_(cfg.agent_profiles()), rng_(rng_seed) {
        detail::seed_book(engine_, cfg_, next_order_id_);
        own_orders_.resize(cfg_.n_agents);
    }

    SessionResult run() {
        SessionResult out;
        out.profiles = profiles_;
        out.session_seconds = cfg_.session_seconds;
        if (cfg_.mean_event_rate <= 0.0) return out;

        std::exponential_distribution<double> clock(cfg_.mean_event_rate);
        std::uniform_int_distribution<std::size_t> pick_agent(0, cfg_.n_agents - 1);
        double t = 0.0;
        while (true) {
            t += clock(rng_);
            if (t >= cfg_.session_seconds) break;
            const std::size_t agent = pick_agent(rng_);
            step_(agent, t, out);
        }
        out.lifecycles = std::move(lifecycles_);
        return out;
    }

    const MatchingEngine& engine() const { return engine_; }

private:
    void step_(std::size_t agent, double t, SessionResult& out) {
        const AgentProfile& p = profiles_[agent];
        const double rest = std::max(0.0, 1.0 - p.limit_ratio - p.market_ratio - p.cancel_ratio);
        const std::array<double, 7> probs = {p.limit_ratio,  p.market_ratio, p.cancel_ratio,
                                             0.40 * rest,    0.40 * rest,    0.10 * rest,
                                             0.10 * rest};
        std::discrete_distribution<int> draw(probs.begin(), probs.end());
        const int choice = draw(rng_);

        std::optional<EventIntent> intent;
        switch (choice) {
            case 0: intent = make_insert_(agent); break;
            case 1: intent = make_market_(agent); break;
            case 2: intent = make_cancel_(agent); break;
            case 3: intent = make_requeue_(agent); break;
            case 4: intent = make_reduce_(agent); break;
            case 5: intent = make_aggressive_mod_(agent); break;
            case 6: intent = make_stop_(agent); break;
        }
        if (!intent) intent = make_insert_(agent);  // fall back to passive liquidity
        if (!intent) return;

        ApplyResult res = engine_.apply(*intent, t);
        if (res.rejected) return;

        track_(res, t);
        res.event.seq = next_event_seq_++;
        if (!res.fills.empty()) {
            const auto bb = engine_.book().best_bid();
            const auto ba = engine_.book().best_ask();
            if (bb && ba) vol_.on_trade(0.5 * (double(*bb) + double(*ba)));
        }
        SnapshotContext ctx{vol_.value(), t / cfg_.session_seconds};
        res.event.snapshot = snapshot_features(engine_.book(), Side::Bid, ctx);
        out.events.push_back(res.event);
    }

    void track_(const ApplyResult& res, double t) {
        const EventRecord& ev = res.event;
        if (ev.action_type == ActionType::Insert || ev.action_type == ActionType::Aggressive) {
            OrderLifecycle lc;
            lc.agent_id = ev.agent_id;
            lc.side = ev.side;
            lc.submit_time = t;
            if (engine_.has_order(ev.order_id)) {
                const auto best = ev.side == Side::Bid ? engine_.book().best_bid()
                                                       : engine_.book().best_ask();
                const Order* o = engine_.find_order(ev.order_id);
                lc.submitted_at_best = best && o && o->price == *best;
                own_orders_[static_cast<std::size_t>(ev.agent_id)].push_back(ev.order_id);
            }
            lifecycles_[ev.order_id] = lc;
        } else if (ev.action_type == ActionType::Cancel) {
            auto it = lifecycles_.find(ev.order_id);
            if (it != lifecycles_.end() && !it->second.cancel_time) it->second.cancel_time = t;
        }
        for (const auto& f : res.fills) {
            auto mark = [&](std::uint64_t id) {
                auto it = lifecycles_.find(id);
                if (it != lifecycles_.end() && !it->second.first_fill_time)
                    it->second.first_fill_time = t;
            };
            mark(f.maker_order_id);
            mark(f.taker_order_id);
        }
    }

    // True when removing this order would empty its whole side.
    bool would_empty_side_(std::uint64_t id) const {
        const Order* o = engine_.find_order(id);
        if (!o) return false;
        const auto& book = engine_.book();
        if (book.side_depth(o->side) > 1) return false;
        const auto* q = book.find_level(o->side, o->price);
        return q && q->size() == 1;
    }

    std::optional<std::uint64_t> pop_own_order_(std::size_t agent, bool need_reducible,
                                                bool allow_emptying = false) {
        auto& ids = own_orders_[agent];
        for (std::size_t i = 0; i < ids.size();) {
            if (!engine_.has_order(ids[i])) {
                ids.erase(ids.begin() + static_cast<std::ptrdiff_t>(i));
                continue;
            }
            const Order* o = engine_.find_order(ids[i]);
            const bool reducible = o && o->quantity >= 2;
            if ((!need_reducible || reducible) && (allow_emptying || !would_empty_side_(ids[i])))
                return ids[i];
            ++i;
        }
        return std::nullopt;
    }

    std::optional<EventIntent> make_insert_(std::size_t agent) {
        const auto& book = engine_.book();
        std::uniform_int_distribution<int> coin(0, 1);
        const Side side = coin(rng_) ? Side::Ask : Side::Bid;
        const auto bb = book.best_bid();
        const auto ba = book.best_ask();
        std::int64_t price;
        if (side == Side::Bid) {
            std::int64_t anchor = bb ? *bb : (ba ? *ba - 2 : cfg_.init_price - 1);
            const std::int64_t spread = (bb && ba) ? *ba - *bb : 2;
            std::uniform_real_distribution<double> u(0.0, 1.0);
            if (spread >= 2 && u(rng_) < 0.15)
                price = anchor + 1;  // improve the touch inside the spread
            else
                price = anchor - detail::geometric_offset(rng_, 0.45, 7);
            if (ba) price = std::min(price, *ba - 1);  // never cross
        } else {
            std::int64_t anchor = ba ? *ba : (bb ? *bb + 2 : cfg_.init_price + 1);
            const std::int64_t spread = (bb && ba) ? *ba - *bb : 2;
            std::uniform_real_distribution<double> u(0.0, 1.0);
            if (spread >= 2 && u(rng_) < 0.15)
                price = anchor - 1;
            else
                price = anchor + detail::geometric_offset(rng_, 0.45, 7);
            if (bb) price = std::max(price, *bb + 1);
        }
        const std::int64_t qty = 1 + detail::geometric_offset(rng_, 0.5, 5);
        return EventIntent{ActionType::Insert, static_cast<std::int64_t>(agent), next_order_id_++,
                           side, price, qty};
    }

    std::optional<EventIntent> make_market_(std::size_t agent) {
        const auto& book = engine_.book();
        std::uniform_int_distribution<int> coin(0, 1);
        const Side side = coin(rng_) ? Side::Ask : Side::Bid;
        const auto opp_best = side == Side::Bid ? book.best_ask() : book.best_bid();
        if (!opp_best) return std::nullopt;
        std::int64_t qty = 1 + detail::geometric_offset(rng_, 0.5, 2);
        if (book.side_depth(other(side)) == 1) {
            // never consume the final resting unit of a side
            qty = std::min(qty, book.level_volume(other(side), *opp_best) - 1);
            if (qty <= 0) return std::nullopt;
        }
        return EventIntent{ActionType::Aggressive, static_cast<std::int64_t>(agent),
                           next_order_id_++, side, *opp_best, qty};
    }

    std::optional<EventIntent> make_cancel_(std::size_t agent) {
        auto id = pop_own_order_(agent, false);
        if (!id) return std::nullopt;
        return EventIntent{ActionType::Cancel, static_cast<std::int64_t>(agent), *id, Side::Bid, 0, 0};
    }

    std::optional<EventIntent> make_requeue_(std::size_t agent) {
        auto id = pop_own_order_(agent, false);
        if (!id) return std::nullopt;
        const Order* o = engine_.find_order(*id);
        const auto& book = engine_.book();
        std::uniform_int_distribution<int> coin(0, 1);
        std::int64_t price = o->price;
        std::int64_t qty = o->quantity;
        if (coin(rng_)) {
            qty += 1 + detail::geometric_offset(rng_, 0.5, 2);
        } else {
            price += coin(rng_) ? 1 : -1;
            if (o->side == Side::Bid) {
                if (auto ba = book.best_ask()) price = std::min(price, *ba - 1);
            } else {
                if (auto bb = book.best_bid()) price = std::max(price, *bb + 1);
            }
        }
        return EventIntent{ActionType::ModifyRequeue, static_cast<std::int64_t>(agent), *id,
                           o->side, price, qty};
    }

    std::optional<EventIntent> make_reduce_(std::size_t agent) {
        auto id = pop_own_order_(agent, true);
        if (!id) return std::nullopt;
        const Order* o = engine_.find_order(*id);
        return EventIntent{ActionType::ModifyReduce, static_cast<std::int64_t>(agent), *id, o->side,
                           o->price, o->quantity - 1};
    }

    std::optional<EventIntent> make_aggressive_mod_(std::size_t agent) {
        auto id = pop_own_order_(agent, false);
        if (!id) return std::nullopt;
        const Order* o = engine_.find_order(*id);
        const auto& book = engine_.book();
        const auto opp_best = o->side == Side::Bid ? book.best_ask() : book.best_bid();
        if (!opp_best) return std::nullopt;
        std::int64_t qty = o->quantity;
        if (book.side_depth(other(o->side)) == 1)
            qty = std::min(qty, book.level_volume(other(o->side), *opp_best) - 1);
        if (qty <= 0) return std::nullopt;
        return EventIntent{ActionType::ModifyAggressive, static_cast<std::int64_t>(agent), *id,
                           o->side, *opp_best, qty};
    }

    std::optional<EventIntent> make_stop_(std::size_t agent) {
        const auto& book = engine_.book();
        std::uniform_int_distribution<int> coin(0, 1);
        const Side side = coin(rng_) ? Side::Ask : Side::Bid;
        const auto best = side == Side::Bid ? book.best_bid() : book.best_ask();
        if (!best) return std::nullopt;
        const std::int64_t price =
            side == Side::Bid ? *best - 2 - detail::geometric_offset(rng_, 0.5, 3)
                              : *best + 2 + detail::geometric_offset(rng_, 0.5, 3);
        return EventIntent{ActionType::Stop, static_cast<std::int64_t>(agent), next_order_id_++,
                           side, price, 1 + detail::geometric_offset(rng_, 0.5, 3)};
    }

    SimConfig cfg_;
    std::vector<AgentProfile> profiles_;
    std::mt19937_64 rng_;
    MatchingEngine engine_;
    RollingVolatility vol_;
    std::vector<std::vector<std::uint64_t>> own_orders_;
    std::unordered_map<std::uint64_t, OrderLifecycle> lifecycles_;
    std::uint64_t next_order_id_ = 1;
    std::uint64_t next_event_seq_ = 0;
};

inline SessionResult run_session(const SimConfig& cfg, std::uint64_t rng_seed) {
    SessionGenerator gen(cfg, rng_seed);
    return gen.run();
}

// ----------------------------- stream files -----------------------------

inline void write_stream(const std::string& path, const std::vector<EventRecord>& events) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write stream: " + path);
    for (const auto& ev : events) {
        nlohmann::ordered_json j;
        j["seq"] = ev.seq;
        j["time"] = ev.time;
        j["action_type"] = std::string(1, action_letter(ev.action_type));
        j["agent_id"] = ev.agent_id;
        j["order_id"] = ev.order_id;
        j["side"] = side_name(ev.side);
        j["price_ticks"] = ev.price_ticks;
        j["quantity"] = ev.quantity;
        j["snapshot"] = ev.snapshot;
        os << j.dump() << "\n";
    }
}

inline std::vector<EventRecord> read_stream(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open stream: " + path);
    std::vector<EventRecord> out;
    std::string line;
    while (std::getline(is, line)) {
        if (trim(line).empty()) continue;
        auto j = nlohmann::json::parse(line);
        EventRecord ev;
        ev.seq = j.at("seq").get<std::uint64_t>();
        ev.time = j.at("time").get<double>();
        ev.action_type = action_from_letter(j.at("action_type").get<std::string>().at(0));
        ev.agent_id = j.at("agent_id").get<std::int64_t>();
        ev.order_id = j.at("order_id").get<std::uint64_t>();
        ev.side = j.at("side").get<std::string>() == "bid" ? Side::Bid : Side::Ask;
        ev.price_ticks = j.at("price_ticks").get<std::int64_t>();
        ev.quantity = j.at("quantity").get<std::int64_t>();
        const auto& snap = j.at("snapshot");
        for (std::size_t i = 0; i < kSnapshotWidth; ++i) ev.snapshot[i] = snap.at(i).get<double>();
        out.push_back(ev);
    }
    return out;
}

}  // namespace lobsurv
