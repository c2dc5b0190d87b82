#pragma once

// Gradient-based Shapley-value approximation via expected gradients: sampled
// straight-line paths from background samples, with the per-horizon target
// F_t(x) = 1 - S(t | x). Attributions are reported per feature channel, the
// action-type embedding collapsing to a single channel.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "lobsurv/kanformer.hpp"
#include "lobsurv/snapshot.hpp"
#include "lobsurv/tensor.hpp"
#include "lobsurv/util.hpp"

namespace lobsurv {

struct AttributionConfig {
    std::vector<double> horizons;       // evaluation horizons in seconds
    std::size_t background_size = 64;   // background samples drawn from the training split
    std::size_t n_path_samples = 32;    // interpolation draws per explained sample
    std::uint64_t seed = 0;

    void validate() const {
        if (background_size < 1 || n_path_samples < 1)
            throw std::invalid_argument("attribution config: sizes must be >= 1");
    }
};

// Builds a scalar output from a [1, M] input tensor on the given tape.
using ScalarFn = std::function<Tensor(Tape&, Tensor)>;

// phi_j = E_{b ~ background, alpha ~ U(0,1)} [(x_j - b_j) * dF/dx_j(b + alpha (x - b))],
// estimated with n_draws joint (b, alpha) draws.
inline std::vector<double> expected_gradients(const ScalarFn& fn, const std::vector<double>& x,
                                              const std::vector<std::vector<double>>& background,
                                              std::size_t n_draws, std::mt19937_64& rng) {
    if (background.empty()) throw std::invalid_argument("expected_gradients: empty background");
    const std::size_t m = x.size();
    std::vector<double> phi(m, 0.0);
    std::uniform_int_distribution<std::size_t> pick(0, background.size() - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t d = 0; d < n_draws; ++d) {
        const std::vector<double>& b = background[pick(rng)];
        if (b.size() != m) throw std::invalid_argument("expected_gradients: background size mismatch");
        const double alpha = unit(rng);
        std::vector<double> point(m);
        for (std::size_t j = 0; j < m; ++j) point[j] = b[j] + alpha * (x[j] - b[j]);
        Tape tape;
        Tensor in = tape.input({1, m}, point, true);
        Tensor out = fn(tape, in);
        tape.backward(out);
        const auto& g = tape.node(in).grad;
        for (std::size_t j = 0; j < m; ++j) phi[j] += (x[j] - b[j]) * g[j];
    }
    for (auto& v : phi) v /= static_cast<double>(n_draws);
    return phi;
}

// ----------------------------- model input flattening -----------------------------

namespace detail {

struct FlatLayout {
    std::size_t lookback = 0, embed_dim = 0;
    bool use_queue = false;
    std::size_t lob_off = 0, embed_off = 0, ratio_off = 0, queue_off = 0;
    std::size_t total = 0;

    static FlatLayout from(const ModelConfig& cfg) {
        FlatLayout f;
        f.lookback = cfg.lookback;
        f.embed_dim = cfg.embed_dim;
        f.use_queue = cfg.use_queue;
        f.lob_off = 0;
        f.embed_off = f.lob_off + cfg.lookback * kSnapshotWidth;
        f.ratio_off = f.embed_off + cfg.lookback * cfg.embed_dim;
        f.queue_off = f.ratio_off + cfg.lookback * 5;
        f.total = f.queue_off + (cfg.use_queue ? 1 : 0);
        return f;
    }
};

// Flattened differentiable input of one sample: LOB window, embedded action
// rows (looked up outside the differentiable path), agent ratios, queue.
inline std::vector<double> flatten_sample(const ModelState& model, const OrderSample& s,
                                          const FlatLayout& f) {
    std::vector<double> x(f.total);
    std::copy(s.x_lob.begin(), s.x_lob.end(), x.begin() + static_cast<std::ptrdiff_t>(f.lob_off));
    const auto idx = action_indices(model.config, s);
    const auto& table = model.params.at("embed.table");
    for (std::size_t r = 0; r < f.lookback; ++r)
        std::copy_n(table.value.data() + idx[r] * f.embed_dim, f.embed_dim,
                    x.begin() + static_cast<std::ptrdiff_t>(f.embed_off + r * f.embed_dim));
    const auto ratios = ratio_matrix(model.config, s);
    std::copy(ratios.begin(), ratios.end(), x.begin() + static_cast<std::ptrdiff_t>(f.ratio_off));
    if (f.use_queue) x[f.queue_off] = static_cast<double>(s.queue);
    return x;
}

// Risk at horizon t as a function of the flattened inputs.
inline ScalarFn risk_fn(const ModelState& model, const FlatLayout& f, double horizon) {
    return [&model, f, horizon](Tape& tape, Tensor in) {
        BoundParams bp = bind_params(tape, model.params, false);
        Tensor lob = tape.reshape(tape.slice_cols(in, f.lob_off, f.lookback * kSnapshotWidth),
                                  {f.lookback, kSnapshotWidth});
        Tensor emb = tape.reshape(tape.slice_cols(in, f.embed_off, f.lookback * f.embed_dim),
                                  {f.lookback, f.embed_dim});
        Tensor ratios =
            tape.reshape(tape.slice_cols(in, f.ratio_off, f.lookback * 5), {f.lookback, 5});
        Tensor queue;
        if (f.use_queue) queue = tape.slice_cols(in, f.queue_off, 1);
        ForwardOptions opts;  // evaluation mode: no dropout
        WeibullOut out = model_forward_parts(tape, model, bp, emb, ratios, lob, queue, opts);
        // 1 - S(t) = 1 - exp(-exp(u)), u = k (log t - log lambda)
        Tensor u = tape.mul(tape.exp(out.log_k),
                            tape.sub(tape.scalar(std::log(horizon)), out.log_lambda));
        return tape.sub(tape.scalar(1.0), tape.exp(tape.neg(tape.exp(u))));
    };
}

}  // namespace detail

struct SampleAttribution {
    std::vector<double> lob;        // lookback x 24
    std::vector<double> act_embed;  // lookback x embed_dim
    std::vector<double> ratios;     // lookback x 5
    double queue = 0.0;
};

// Explains one sample at one horizon against a background set. The model must
// be in evaluation mode; horizons far outside the fitted range still compute.
inline SampleAttribution explain(const ModelState& model, const OrderSample& sample,
                                 const std::vector<OrderSample>& background,
                                 const AttributionConfig& cfg, double horizon,
                                 std::mt19937_64& rng) {
    cfg.validate();
    const auto layout = detail::FlatLayout::from(model.config);
    const std::vector<double> x = detail::flatten_sample(model, sample, layout);
    std::vector<std::vector<double>> bg;
    bg.reserve(background.size());
    for (const auto& b : background) bg.push_back(detail::flatten_sample(model, b, layout));

    const auto phi = expected_gradients(detail::risk_fn(model, layout, horizon), x, bg,
                                        cfg.n_path_samples, rng);
    SampleAttribution out;
    out.lob.assign(phi.begin() + static_cast<std::ptrdiff_t>(layout.lob_off),
                   phi.begin() + static_cast<std::ptrdiff_t>(layout.embed_off));
    out.act_embed.assign(phi.begin() + static_cast<std::ptrdiff_t>(layout.embed_off),
                         phi.begin() + static_cast<std::ptrdiff_t>(layout.ratio_off));
    out.ratios.assign(phi.begin() + static_cast<std::ptrdiff_t>(layout.ratio_off),
                      phi.begin() + static_cast<std::ptrdiff_t>(layout.queue_off));
    if (layout.use_queue) out.queue = phi[layout.queue_off];
    return out;
}

// ----------------------------- aggregation -----------------------------

inline const char* agent_ratio_channel_name(std::size_t idx) {
    static constexpr const char* names[5] = {"agent.limit_ratio", "agent.market_ratio",
                                             "agent.cancel_ratio", "agent.trade_ratio",
                                             "agent.aggressive_trade_ratio"};
    return names[idx];
}

// Channel set follows the model's active inputs: 24 LOB channels, one
// action-type channel, five agent ratios, queue.
inline std::vector<std::string> attribution_channels(const ModelConfig& cfg) {
    std::vector<std::string> ch;
    for (std::size_t c = 0; c < kSnapshotWidth; ++c) ch.push_back(snapshot_channel_name(c));
    if (cfg.use_action_type) ch.push_back("action_type");
    if (cfg.use_agent_features)
        for (std::size_t c = 0; c < 5; ++c) ch.push_back(agent_ratio_channel_name(c));
    if (cfg.use_queue) ch.push_back("queue");
    return ch;
}

struct AttributionReport {
    std::vector<std::string> channels;
    std::vector<double> horizons;
    std::vector<double> mean_abs;  // channels x horizons, row-major

    double at(std::size_t channel, std::size_t horizon) const {
        return mean_abs[channel * horizons.size() + horizon];
    }
};

// Mean |phi| per channel: averaged over explained samples and the lookback
// axis; the embedding axis is collapsed by summing |phi| before averaging.
inline AttributionReport aggregate(const ModelState& model,
                                   const std::vector<std::vector<SampleAttribution>>& per_horizon,
                                   const std::vector<double>& horizons) {
    if (per_horizon.size() != horizons.size())
        throw std::invalid_argument("aggregate: horizon count mismatch");
    const ModelConfig& cfg = model.config;
    AttributionReport rep;
    rep.channels = attribution_channels(cfg);
    rep.horizons = horizons;
    rep.mean_abs.assign(rep.channels.size() * horizons.size(), 0.0);

    for (std::size_t h = 0; h < horizons.size(); ++h) {
        const auto& explained = per_horizon[h];
        if (explained.empty()) throw std::invalid_argument("aggregate: no explained samples");
        const double n_samples = static_cast<double>(explained.size());
        const double n_rows = static_cast<double>(cfg.lookback);
        std::size_t col = 0;
        for (std::size_t c = 0; c < kSnapshotWidth; ++c, ++col) {
            double acc = 0.0;
            for (const auto& e : explained)
                for (std::size_t r = 0; r < cfg.lookback; ++r)
                    acc += std::abs(e.lob[r * kSnapshotWidth + c]);
            rep.mean_abs[col * horizons.size() + h] = acc / (n_samples * n_rows);
        }
        if (cfg.use_action_type) {
            double acc = 0.0;
            for (const auto& e : explained)
                for (std::size_t r = 0; r < cfg.lookback; ++r) {
                    double row = 0.0;
                    for (std::size_t d = 0; d < cfg.embed_dim; ++d)
                        row += std::abs(e.act_embed[r * cfg.embed_dim + d]);
                    acc += row;
                }
            rep.mean_abs[col * horizons.size() + h] = acc / (n_samples * n_rows);
            ++col;
        }
        if (cfg.use_agent_features) {
            for (std::size_t c = 0; c < 5; ++c, ++col) {
                double acc = 0.0;
                for (const auto& e : explained)
                    for (std::size_t r = 0; r < cfg.lookback; ++r) acc += std::abs(e.ratios[r * 5 + c]);
                rep.mean_abs[col * horizons.size() + h] = acc / (n_samples * n_rows);
            }
        }
        if (cfg.use_queue) {
            double acc = 0.0;
            for (const auto& e : explained) acc += std::abs(e.queue);
            rep.mean_abs[col * horizons.size() + h] = acc / n_samples;
            ++col;
        }
    }
    return rep;
}

// CSV with columns channel, horizon_seconds, mean_abs_shap.
inline void write_attribution_csv(const AttributionReport& rep, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write attribution report: " + path);
    os << "channel,horizon_seconds,mean_abs_shap\n";
    os.precision(12);
    for (std::size_t c = 0; c < rep.channels.size(); ++c)
        for (std::size_t h = 0; h < rep.horizons.size(); ++h)
            os << rep.channels[c] << "," << rep.horizons[h] << "," << rep.at(c, h) << "\n";
}

}  // namespace lobsurv
