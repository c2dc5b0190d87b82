#pragma once

// Price-time-priority limit order book. Prices are integer ticks; within a
// level orders are served in ascending arrival_seq. The engine consumes
// intents and emits fills plus an EventRecord labeled with the action
// taxonomy {I, C, R, r, S, T, J}.

#include <array>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace lobsurv {

enum class Side : std::uint8_t { Bid = 0, Ask = 1 };

inline Side other(Side s) { return s == Side::Bid ? Side::Ask : Side::Bid; }
inline const char* side_name(Side s) { return s == Side::Bid ? "bid" : "ask"; }

// Action taxonomy. Codes index the embedding table.
enum class ActionType : std::uint8_t {
    Insert = 0,          // I: insertion of a new limit order
    Cancel = 1,          // C: cancellation of an outstanding order
    ModifyRequeue = 2,   // R: modification that loses priority
    ModifyReduce = 3,    // r: modification that keeps priority
    ModifyAggressive = 4,  // S: modification that becomes aggressive
    Aggressive = 5,      // T: order that executes immediately
    Stop = 6,            // J: stop order insertion (never triggers)
};

inline char action_letter(ActionType a) {
    static constexpr std::array<char, 7> letters = {'I', 'C', 'R', 'r', 'S', 'T', 'J'};
    return letters[static_cast<std::size_t>(a)];
}

inline ActionType action_from_letter(char c) {
    switch (c) {
        case 'I': return ActionType::Insert;
        case 'C': return ActionType::Cancel;
        case 'R': return ActionType::ModifyRequeue;
        case 'r': return ActionType::ModifyReduce;
        case 'S': return ActionType::ModifyAggressive;
        case 'T': return ActionType::Aggressive;
        case 'J': return ActionType::Stop;
        default: throw std::invalid_argument(std::string("unknown action letter: ") + c);
    }
}

constexpr std::size_t kActionVocab = 7;
constexpr std::size_t kSnapshotWidth = 24;

struct Order {
    std::uint64_t order_id = 0;
    std::int64_t agent_id = 0;
    Side side = Side::Bid;
    std::int64_t price = 0;     // ticks
    std::int64_t quantity = 0;  // units, > 0 while resting
    std::uint64_t arrival_seq = 0;
    double arrival_time = 0.0;  // seconds since session open
};

struct Fill {
    std::uint64_t taker_order_id = 0;
    std::uint64_t maker_order_id = 0;
    std::int64_t maker_agent_id = 0;
    std::int64_t taker_agent_id = 0;
    std::int64_t price = 0;
    std::int64_t quantity = 0;
};

struct EventRecord {
    std::uint64_t seq = 0;
    double time = 0.0;
    ActionType action_type = ActionType::Insert;
    std::int64_t agent_id = 0;
    std::uint64_t order_id = 0;
    Side side = Side::Bid;
    std::int64_t price_ticks = 0;
    std::int64_t quantity = 0;
    std::array<double, kSnapshotWidth> snapshot{};  // filled after the event is applied
};

// Intent fed into the engine; `kind` mirrors the taxonomy letters.
struct EventIntent {
    ActionType kind = ActionType::Insert;
    std::int64_t agent_id = 0;
    std::uint64_t order_id = 0;  // new id for I/T/J, existing id for C/R/r/S
    Side side = Side::Bid;
    std::int64_t price = 0;
    std::int64_t quantity = 0;
};

class BookState {
public:
    using LevelQueue = std::deque<Order>;

    const std::map<std::int64_t, LevelQueue, std::greater<>>& bids() const { return bids_; }
    const std::map<std::int64_t, LevelQueue, std::less<>>& asks() const { return asks_; }

    std::optional<std::int64_t> best_bid() const {
        return bids_.empty() ? std::nullopt : std::optional(bids_.begin()->first);
    }
    std::optional<std::int64_t> best_ask() const {
        return asks_.empty() ? std::nullopt : std::optional(asks_.begin()->first);
    }

    std::int64_t level_volume(Side s, std::int64_t price) const {
        std::int64_t v = 0;
        if (const LevelQueue* q = find_level(s, price))
            for (const auto& o : *q) v += o.quantity;
        return v;
    }

    std::int64_t side_depth(Side s) const {
        return s == Side::Bid ? static_cast<std::int64_t>(bids_.size())
                              : static_cast<std::int64_t>(asks_.size());
    }

    // Units with higher time priority at the same price level.
    std::optional<std::int64_t> units_ahead(std::uint64_t order_id) const;

    const LevelQueue* find_level(Side s, std::int64_t price) const {
        if (s == Side::Bid) {
            auto it = bids_.find(price);
            return it == bids_.end() ? nullptr : &it->second;
        }
        auto it = asks_.find(price);
        return it == asks_.end() ? nullptr : &it->second;
    }

private:
    friend class MatchingEngine;
    std::map<std::int64_t, LevelQueue, std::greater<>> bids_;  // best first
    std::map<std::int64_t, LevelQueue, std::less<>> asks_;     // best first
};

struct ApplyResult {
    std::vector<Fill> fills;
    EventRecord event;           // snapshot left empty; caller fills it
    bool rejected = false;
    std::string reject_reason;
};

class MatchingEngine {
public:
    const BookState& book() const { return book_; }

    bool has_order(std::uint64_t id) const { return locator_.count(id) != 0; }

    const Order* find_order(std::uint64_t id) const {
        auto it = locator_.find(id);
        if (it == locator_.end()) return nullptr;
        const auto* q = book_.find_level(it->second.side, it->second.price);
        if (!q) return nullptr;
        for (const auto& o : *q)
            if (o.order_id == id) return &o;
        return nullptr;
    }

    // Applies one intent. The event's seq and snapshot are the caller's to
    // fill in; rejected intents must not be recorded.
    ApplyResult apply(const EventIntent& intent, double time) {
        ApplyResult res;
        res.event.time = time;
        res.event.action_type = intent.kind;
        res.event.agent_id = intent.agent_id;
        res.event.order_id = intent.order_id;
        res.event.side = intent.side;
        res.event.price_ticks = intent.price;
        res.event.quantity = intent.quantity;

        switch (intent.kind) {
            case ActionType::Insert:
            case ActionType::Aggressive: {
                if (intent.quantity <= 0) return reject_(res, "non-positive quantity");
                if (locator_.count(intent.order_id)) return reject_(res, "duplicate order id");
                insert_and_match_(intent.agent_id, intent.order_id, intent.side, intent.price,
                                  intent.quantity, time, res.fills);
                // An insert that crossed is an aggressive execution.
                res.event.action_type = res.fills.empty() ? intent.kind : ActionType::Aggressive;
                if (intent.kind == ActionType::Aggressive && res.fills.empty())
                    res.event.action_type = ActionType::Insert;
                break;
            }
            case ActionType::Cancel: {
                Order removed;
                if (!remove_order_(intent.order_id, &removed)) return reject_(res, "unknown order id");
                res.event.side = removed.side;
                res.event.price_ticks = removed.price;
                res.event.quantity = removed.quantity;
                res.event.agent_id = removed.agent_id;
                break;
            }
            case ActionType::ModifyReduce: {
                Order* o = find_mutable_(intent.order_id);
                if (!o) return reject_(res, "unknown order id");
                if (intent.quantity <= 0 || intent.quantity >= o->quantity)
                    return reject_(res, "reduce requires 0 < new quantity < old quantity");
                o->quantity = intent.quantity;  // keeps queue position
                res.event.side = o->side;
                res.event.price_ticks = o->price;
                res.event.agent_id = o->agent_id;
                break;
            }
            case ActionType::ModifyRequeue:
            case ActionType::ModifyAggressive: {
                Order removed;
                if (!peek_order_(intent.order_id, &removed)) return reject_(res, "unknown order id");
                if (intent.quantity <= 0) return reject_(res, "non-positive quantity");
                remove_order_(intent.order_id, &removed);
                insert_and_match_(removed.agent_id, intent.order_id, removed.side, intent.price,
                                  intent.quantity, time, res.fills);
                res.event.side = removed.side;
                res.event.agent_id = removed.agent_id;
                // A reprice that crossed executes and is recorded as S.
                res.event.action_type =
                    res.fills.empty() ? ActionType::ModifyRequeue : ActionType::ModifyAggressive;
                break;
            }
            case ActionType::Stop:
                // Stop orders are recorded but never rest or trigger.
                if (intent.quantity <= 0) return reject_(res, "non-positive quantity");
                break;
        }
        return res;
    }

private:
    struct Locator {
        Side side;
        std::int64_t price;
    };

    static ApplyResult& reject_(ApplyResult& res, std::string why) {
        res.rejected = true;
        res.reject_reason = std::move(why);
        return res;
    }

    Order* find_mutable_(std::uint64_t id) {
        auto it = locator_.find(id);
        if (it == locator_.end()) return nullptr;
        auto* q = level_(it->second.side, it->second.price);
        for (auto& o : *q)
            if (o.order_id == id) return &o;
        return nullptr;
    }

    bool peek_order_(std::uint64_t id, Order* out) {
        Order* o = find_mutable_(id);
        if (!o) return false;
        *out = *o;
        return true;
    }

    bool remove_order_(std::uint64_t id, Order* removed) {
        auto it = locator_.find(id);
        if (it == locator_.end()) return false;
        auto* q = level_(it->second.side, it->second.price);
        for (auto qi = q->begin(); qi != q->end(); ++qi) {
            if (qi->order_id != id) continue;
            if (removed) *removed = *qi;
            q->erase(qi);
            if (q->empty()) erase_level_(it->second.side, it->second.price);
            locator_.erase(it);
            return true;
        }
        return false;
    }

    BookState::LevelQueue* level_(Side s, std::int64_t price) {
        if (s == Side::Bid) {
            auto it = book_.bids_.find(price);
            return it == book_.bids_.end() ? nullptr : &it->second;
        }
        auto it = book_.asks_.find(price);
        return it == book_.asks_.end() ? nullptr : &it->second;
    }

    void erase_level_(Side s, std::int64_t price) {
        if (s == Side::Bid)
            book_.bids_.erase(price);
        else
            book_.asks_.erase(price);
    }

    // Inserts a limit order, matching any crossing part against the opposite
    // side in (price, arrival_seq) order. The unfilled remainder rests.
    void insert_and_match_(std::int64_t agent, std::uint64_t id, Side side, std::int64_t price,
                           std::int64_t qty, double time, std::vector<Fill>& fills) {
        std::int64_t remaining = qty;
        auto crosses = [&](std::int64_t opp_price) {
            return side == Side::Bid ? price >= opp_price : price <= opp_price;
        };
        while (remaining > 0) {
            auto opp_best = side == Side::Bid ? book_.best_ask() : book_.best_bid();
            if (!opp_best || !crosses(*opp_best)) break;
            auto* q = level_(other(side), *opp_best);
            while (remaining > 0 && !q->empty()) {
                Order& maker = q->front();
                const std::int64_t traded = std::min(remaining, maker.quantity);
                fills.push_back(Fill{id, maker.order_id, maker.agent_id, agent, maker.price, traded});
                maker.quantity -= traded;
                remaining -= traded;
                if (maker.quantity == 0) {
                    locator_.erase(maker.order_id);
                    q->pop_front();
                }
            }
            if (q->empty()) erase_level_(other(side), *opp_best);
        }
        if (remaining > 0) {
            Order o{id, agent, side, price, remaining, next_arrival_seq_++, time};
            auto& q = side == Side::Bid ? book_.bids_[price] : book_.asks_[price];
            q.push_back(o);
            locator_[id] = Locator{side, price};
        }
    }

    BookState book_;
    std::unordered_map<std::uint64_t, Locator> locator_;
    std::uint64_t next_arrival_seq_ = 0;
};

inline std::optional<std::int64_t> BookState::units_ahead(std::uint64_t order_id) const {
    auto scan = [&](const auto& side_map) -> std::optional<std::int64_t> {
        for (const auto& [price, q] : side_map) {
            std::int64_t ahead = 0;
            for (const auto& o : q) {
                if (o.order_id == order_id) return ahead;
                ahead += o.quantity;
            }
        }
        return std::nullopt;
    };
    if (auto v = scan(bids_)) return v;
    return scan(asks_);
}

}  // namespace lobsurv
