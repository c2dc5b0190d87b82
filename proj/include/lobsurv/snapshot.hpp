#pragma once

// The 24-feature LOB snapshot: per level l=1..5 the same-side price distance
// from mid (in ticks), same-side cumulative volume, opposite-side distance and
// cumulative volume, then volatility, spread, level-1 volume imbalance and
// time of day. Books with fewer than 5 levels are padded by repeating the
// deepest cumulative volume one tick further out per missing level.

#include <array>
#include <cmath>
#include <deque>
#include <optional>
#include <stdexcept>

#include "lobsurv/book.hpp"

namespace lobsurv {

constexpr std::size_t kSnapshotLevels = 5;

// Rolling average of squared mid-price returns (tick units) over the last
// 1000 trades; averages whatever is available before that, zero with no
// history.
class RollingVolatility {
public:
    static constexpr std::size_t kWindow = 1000;

    void on_trade(double mid) {
        if (last_mid_.has_value()) {
            const double r = mid - *last_mid_;
            push_(r * r);
        }
        last_mid_ = mid;
    }

    double value() const { return returns_.empty() ? 0.0 : sum_ / static_cast<double>(returns_.size()); }

    void reset() {
        returns_.clear();
        sum_ = 0.0;
        last_mid_.reset();
    }

private:
    void push_(double sq) {
        returns_.push_back(sq);
        sum_ += sq;
        if (returns_.size() > kWindow) {
            sum_ -= returns_.front();
            returns_.pop_front();
        }
    }

    std::deque<double> returns_;
    double sum_ = 0.0;
    std::optional<double> last_mid_;
};

struct SnapshotError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SnapshotContext {
    double volatility = 0.0;
    double time_of_day = 0.0;  // fraction of session elapsed
};

namespace detail {

struct SideLevels {
    std::array<double, kSnapshotLevels> dist{};
    std::array<double, kSnapshotLevels> cumvol{};
    double level1_volume = 0.0;
};

template <typename LevelMap>
SideLevels side_levels(const LevelMap& levels, double mid) {
    SideLevels out;
    std::size_t l = 0;
    double cum = 0.0;
    for (const auto& [price, q] : levels) {
        if (l >= kSnapshotLevels) break;
        double vol = 0.0;
        for (const auto& o : q) vol += static_cast<double>(o.quantity);
        cum += vol;
        out.dist[l] = std::abs(static_cast<double>(price) - mid);
        out.cumvol[l] = cum;
        if (l == 0) out.level1_volume = vol;
        ++l;
    }
    if (l == 0) throw SnapshotError("snapshot unavailable: empty book side");
    // padding: repeat deepest cumulative volume, one tick further per level
    for (std::size_t p = l; p < kSnapshotLevels; ++p) {
        out.dist[p] = out.dist[l - 1] + static_cast<double>(p - l + 1);
        out.cumvol[p] = out.cumvol[l - 1];
    }
    return out;
}

}  // namespace detail

inline std::array<double, kSnapshotWidth> snapshot_features(const BookState& book, Side studied_side,
                                                            const SnapshotContext& ctx) {
    const auto bb = book.best_bid();
    const auto ba = book.best_ask();
    if (!bb || !ba) throw SnapshotError("snapshot unavailable: empty book side");
    const double mid = 0.5 * (static_cast<double>(*bb) + static_cast<double>(*ba));

    const auto bid_lv = detail::side_levels(book.bids(), mid);
    const auto ask_lv = detail::side_levels(book.asks(), mid);
    const auto& same = studied_side == Side::Bid ? bid_lv : ask_lv;
    const auto& opp = studied_side == Side::Bid ? ask_lv : bid_lv;

    std::array<double, kSnapshotWidth> v{};
    for (std::size_t l = 0; l < kSnapshotLevels; ++l) {
        v[4 * l + 0] = same.dist[l];
        v[4 * l + 1] = same.cumvol[l];
        v[4 * l + 2] = opp.dist[l];
        v[4 * l + 3] = opp.cumvol[l];
    }
    const double vs = same.level1_volume;
    const double vo = opp.level1_volume;
    v[20] = ctx.volatility;
    v[21] = static_cast<double>(*ba - *bb);                       // spread in ticks
    v[22] = (vs + vo) > 0.0 ? (vs - vo) / (vs + vo) : 0.0;        // level-1 volume imbalance
    v[23] = ctx.time_of_day;
    return v;
}

// A bid-perspective snapshot reinterpreted for an ask-side studied order:
// same/opposite blocks swap per level and the imbalance flips sign.
inline std::array<double, kSnapshotWidth> mirror_snapshot(const std::array<double, kSnapshotWidth>& bid_view) {
    std::array<double, kSnapshotWidth> v = bid_view;
    for (std::size_t l = 0; l < kSnapshotLevels; ++l) {
        std::swap(v[4 * l + 0], v[4 * l + 2]);
        std::swap(v[4 * l + 1], v[4 * l + 3]);
    }
    v[22] = -v[22];
    return v;
}

// Feature channel names for reports, in snapshot order.
inline const char* snapshot_channel_name(std::size_t idx) {
    static constexpr const char* names[kSnapshotWidth] = {
        "lob.p_same_l1", "lob.v_same_l1", "lob.p_opp_l1", "lob.v_opp_l1",
        "lob.p_same_l2", "lob.v_same_l2", "lob.p_opp_l2", "lob.v_opp_l2",
        "lob.p_same_l3", "lob.v_same_l3", "lob.p_opp_l3", "lob.v_opp_l3",
        "lob.p_same_l4", "lob.v_same_l4", "lob.p_opp_l4", "lob.v_opp_l4",
        "lob.p_same_l5", "lob.v_same_l5", "lob.p_opp_l5", "lob.v_opp_l5",
        "lob.volatility", "lob.spread", "lob.volume_imbalance", "lob.time_of_day"};
    return names[idx];
}

constexpr std::size_t kVolumeImbalanceIndex = 22;

}  // namespace lobsurv
