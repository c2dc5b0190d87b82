#pragma once

// Training under the right-censored log-likelihood: Adam with decoupled
// weight decay, per-epoch exponential learning-rate decay, early stopping on
// validation RCLL, the warm-initialized repetition protocol, and grid search
// over the hyperparameter ranges.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "lobsurv/featurizer.hpp"
#include "lobsurv/kanformer.hpp"
#include "lobsurv/metrics.hpp"
#include "lobsurv/util.hpp"

namespace lobsurv {

struct TrainConfig {
    double lr0 = 1e-3;
    double decay_gamma = 0.9;
    std::size_t max_epochs = 200;
    std::size_t patience = 10;
    std::size_t batch_size = 256;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
    std::size_t n_repeats = 30;
    bool warm_init = true;
    double min_improvement = 1e-5;  // absolute improvement required to reset patience
};

inline double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
    return cfg.lr0 * std::pow(cfg.decay_gamma, static_cast<double>(epoch));
}

// ----------------------------- RCLL loss -----------------------------

// Per-sample negative right-censored log-likelihood as a differentiable
// expression: with u = k (log T - log lambda),
//   executed: log T - log k - u + exp(u)
//   censored: exp(u)
inline Tensor rcll_sample_loss(Tape& tape, Tensor log_lambda, Tensor log_k, double duration,
                               int delta) {
    if (!(duration > 0.0)) throw std::invalid_argument("rcll: duration must be positive");
    Tensor log_t = tape.scalar(std::log(duration));
    Tensor u = tape.mul(tape.exp(log_k), tape.sub(log_t, log_lambda));
    Tensor eu = tape.exp(u);
    if (!delta) return eu;
    return tape.add(tape.sub(tape.sub(log_t, log_k), u), eu);
}

// Scalar-domain twin of rcll_sample_loss; metrics::rcll_eval plus the Weibull
// closed forms provide an independent route that must agree with the tape.
inline double rcll_scalar(const WeibullParams& w, double duration, int delta) {
    return weibull::rcll_term(duration, delta, w);
}

// Mean RCLL of a dataset under a model (evaluation mode).
inline double dataset_rcll(const ModelState& model, const std::vector<OrderSample>& samples) {
    if (samples.empty()) throw std::invalid_argument("dataset_rcll: empty dataset");
    std::vector<double> terms(samples.size());
    parallel_chunks(samples.size(), 64, [&](std::size_t, std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const WeibullParams w = predict(model, samples[i]);
            terms[i] = rcll_scalar(w, samples[i].duration, samples[i].delta);
        }
    });
    double acc = 0.0;
    for (double t : terms) acc += t;
    return acc / static_cast<double>(samples.size());
}

// ----------------------------- early stopping -----------------------------

class EarlyStopper {
public:
    EarlyStopper(std::size_t patience, double min_improvement)
        : patience_(patience), min_improvement_(min_improvement) {}

    // Returns true when training should stop after this epoch.
    bool update(double val_loss, std::size_t epoch) {
        if (val_loss < best_ - min_improvement_) {
            best_ = val_loss;
            best_epoch_ = epoch;
            bad_ = 0;
            improved_ = true;
        } else {
            ++bad_;
            improved_ = false;
        }
        return bad_ >= patience_;
    }

    std::size_t best_epoch() const { return best_epoch_; }
    double best_value() const { return best_; }
    bool improved_last() const { return improved_; }

private:
    std::size_t patience_;
    double min_improvement_;
    double best_ = std::numeric_limits<double>::infinity();
    std::size_t best_epoch_ = 0;
    std::size_t bad_ = 0;
    bool improved_ = false;
};

// ----------------------------- Adam -----------------------------

using GradMap = std::map<std::string, std::vector<double>>;

inline GradMap zero_grads_like(const ParamStore& store) {
    GradMap g;
    for (const auto& [name, p] : store.all()) g[name] = std::vector<double>(p.value.size(), 0.0);
    return g;
}

// Adam with decoupled weight decay: the decay term is applied directly to the
// parameters, not folded into the gradient.
class AdamOptimizer {
public:
    explicit AdamOptimizer(ParamStore& params, double beta1 = 0.9, double beta2 = 0.999,
                           double eps = 1e-8)
        : params_(params), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& [name, p] : params.all()) {
            m_[name] = std::vector<double>(p.value.size(), 0.0);
            v_[name] = std::vector<double>(p.value.size(), 0.0);
        }
    }

    void step(const GradMap& grads, double lr, double weight_decay) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (auto& [name, p] : params_.all()) {
            const auto& g = grads.at(name);
            auto& m = m_[name];
            auto& v = v_[name];
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p.value[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
                if (weight_decay > 0.0) p.value[i] -= lr * weight_decay * p.value[i];
            }
        }
    }

private:
    ParamStore& params_;
    double beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
};

// ----------------------------- training loop -----------------------------

struct EpochLog {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_rcll = 0.0;
    double val_rcll = 0.0;
    double wall_seconds = 0.0;
};

struct TrainResult {
    ModelState best;
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;
    double best_val = 0.0;
    std::size_t epochs_run = 0;
};

inline void write_train_log(const std::vector<EpochLog>& log, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write train log: " + path);
    for (const auto& e : log) {
        nlohmann::ordered_json j;
        j["epoch"] = e.epoch;
        j["lr"] = e.lr;
        j["train_rcll"] = e.train_rcll;
        j["val_rcll"] = e.val_rcll;
        j["wall_seconds"] = e.wall_seconds;
        os << j.dump() << "\n";
    }
}

namespace detail {

// Gradient of the mean batch loss, accumulated in fixed 16-sample chunks so
// the reduction order (and hence the trajectory) does not depend on the
// thread count.
inline double batch_gradients(const ModelState& model, const std::vector<OrderSample>& data,
                              const std::vector<std::size_t>& batch_idx, std::size_t epoch,
                              std::uint64_t seed, GradMap& grads) {
    constexpr std::size_t kChunk = 16;
    const std::size_t nb = batch_idx.size();
    const std::size_t n_chunks = (nb + kChunk - 1) / kChunk;
    std::vector<GradMap> chunk_grads(n_chunks);
    std::vector<double> chunk_loss(n_chunks, 0.0);

    parallel_chunks(nb, kChunk, [&](std::size_t chunk, std::size_t lo, std::size_t hi) {
        GradMap local = zero_grads_like(model.params);
        double loss_acc = 0.0;
        for (std::size_t bi = lo; bi < hi; ++bi) {
            const OrderSample& s = data[batch_idx[bi]];
            Tape tape;
            BoundParams bp = bind_params(tape, model.params, true);
            std::mt19937_64 drop_rng(derive_seed(seed, "dropout", epoch * 1000003ull + batch_idx[bi]));
            ForwardOptions opts{true, &drop_rng};
            WeibullOut out = model_forward(tape, model, bp, s, opts);
            Tensor loss = rcll_sample_loss(tape, out.log_lambda, out.log_k, s.duration, s.delta);
            loss_acc += loss.val()[0];
            tape.backward(loss);
            for (auto& [name, g] : local) {
                const auto& pg = tape.node(bp.at(name)).grad;
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += pg[i];
            }
        }
        chunk_grads[chunk] = std::move(local);
        chunk_loss[chunk] = loss_acc;
    });

    double total_loss = 0.0;
    const double inv = 1.0 / static_cast<double>(nb);
    for (std::size_t c = 0; c < n_chunks; ++c) {
        total_loss += chunk_loss[c];
        if (chunk_grads[c].empty()) continue;
        for (auto& [name, g] : grads) {
            const auto& cg = chunk_grads[c].at(name);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += cg[i] * inv;
        }
    }
    return total_loss * inv;
}

}  // namespace detail

inline TrainResult train(const ModelState& initial, const std::vector<OrderSample>& train_set,
                         const std::vector<OrderSample>& val_set, const TrainConfig& cfg) {
    if (train_set.empty() || val_set.empty())
        throw std::invalid_argument("train: empty train or validation split");

    ModelState model = initial;
    AdamOptimizer adam(model.params);
    EarlyStopper stopper(cfg.patience, cfg.min_improvement);
    TrainResult result;
    result.best = model;

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const auto t_start = std::chrono::steady_clock::now();
        const double lr = lr_at_epoch(cfg, epoch);
        std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, "shuffle", epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double train_loss = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));
            GradMap grads = zero_grads_like(model.params);
            const double batch_loss =
                detail::batch_gradients(model, train_set, batch, epoch, cfg.seed, grads);
            if (!std::isfinite(batch_loss))
                throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                         ", batch " + std::to_string(n_batches) + " (batch size " +
                                         std::to_string(batch.size()) + ")");
            adam.step(grads, lr, cfg.weight_decay);
            train_loss += batch_loss;
            ++n_batches;
        }
        train_loss /= static_cast<double>(n_batches);

        const double val_loss = dataset_rcll(model, val_set);
        if (!std::isfinite(val_loss))
            throw std::runtime_error("train: validation RCLL is not finite at epoch " +
                                     std::to_string(epoch));
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        result.log.push_back(EpochLog{epoch, lr, train_loss, val_loss, wall});

        const bool stop = stopper.update(val_loss, epoch);
        if (stopper.improved_last()) result.best = model;
        result.epochs_run = epoch + 1;
        if (stop) break;
    }
    result.best_epoch = stopper.best_epoch();
    result.best_val = stopper.best_value();
    return result;
}

// ----------------------------- repetition protocol -----------------------------

struct DataSplits {
    std::vector<OrderSample> train, val, test;
};

using SplitGenerator = std::function<DataSplits(std::size_t repeat)>;

struct AggregateMetric {
    double mean = 0.0;
    double stddev = 0.0;
};

struct ProtocolResult {
    std::vector<MetricReport> per_repeat;
    AggregateMetric rcll, ibs, iauc, cindex;
    ModelState first_model;  // repeat-1 checkpoint used for warm initialization
};

inline EvaluationSet model_eval_set(const ModelState& model, const std::vector<OrderSample>& test) {
    EvaluationSet set(test.size());
    parallel_chunks(test.size(), 64, [&](std::size_t, std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const WeibullParams w = predict(model, test[i]);
            set[i] = make_weibull_eval_sample(w, test[i].duration, test[i].delta);
        }
    });
    return set;
}

namespace detail {

inline AggregateMetric aggregate(const std::vector<double>& xs) {
    AggregateMetric a;
    if (xs.empty()) return a;
    for (double x : xs) a.mean += x;
    a.mean /= static_cast<double>(xs.size());
    for (double x : xs) a.stddev += (x - a.mean) * (x - a.mean);
    a.stddev = std::sqrt(a.stddev / static_cast<double>(xs.size()));
    return a;
}

}  // namespace detail

// Repeats the full draw/train/evaluate cycle; repeats after the first start
// from the first run's selected checkpoint when warm_init is set, so run-to-
// run variability reflects dataset composition rather than initialization.
inline ProtocolResult run_protocol(const ModelConfig& mc, const TrainConfig& tc,
                                   const SplitGenerator& gen, std::size_t n_horizons = 20) {
    if (tc.n_repeats < 1) throw std::invalid_argument("run_protocol: n_repeats must be >= 1");
    ProtocolResult out;
    std::vector<double> rclls, ibss, iaucs, cidxs;
    for (std::size_t rep = 0; rep < tc.n_repeats; ++rep) {
        DataSplits splits = gen(rep);
        const NormalizationStats norm = fit_normalizer(splits.train);
        const auto train_n = apply_normalizer(norm, splits.train);
        const auto val_n = apply_normalizer(norm, splits.val);
        const auto test_n = apply_normalizer(norm, splits.test);

        ModelState init = (rep == 0 || !tc.warm_init)
                              ? init_model(mc, derive_seed(tc.seed, "init", rep))
                              : out.first_model;
        TrainConfig rep_cfg = tc;
        rep_cfg.seed = derive_seed(tc.seed, "train", rep);
        TrainResult tr = train(init, train_n, val_n, rep_cfg);
        if (rep == 0) out.first_model = tr.best;

        const MetricReport rep_metrics = evaluate_model(model_eval_set(tr.best, test_n), n_horizons);
        rclls.push_back(rep_metrics.rcll);
        ibss.push_back(rep_metrics.ibs);
        iaucs.push_back(rep_metrics.iauc);
        cidxs.push_back(rep_metrics.cindex);
        out.per_repeat.push_back(rep_metrics);
    }
    out.rcll = detail::aggregate(rclls);
    out.ibs = detail::aggregate(ibss);
    out.iauc = detail::aggregate(iaucs);
    out.cindex = detail::aggregate(cidxs);
    return out;
}

// ----------------------------- grid search -----------------------------

struct HyperGrid {
    std::vector<double> weight_decay = {1e-3, 1e-4, 1e-5};
    std::vector<std::size_t> batch_size = {256, 512, 1024};
    std::vector<std::size_t> n_heads = {2, 4};
    std::vector<std::size_t> hidden_size = {8, 16, 32};
    std::vector<std::size_t> kan_grid_size = {5, 7};
    std::vector<std::size_t> spline_order = {3};
    std::vector<std::size_t> n_layers = {2, 4, 6};
    std::vector<double> dropout = {0.1, 0.2, 0.3, 0.4, 0.5};
    std::vector<std::size_t> embed_dim = {2, 4, 8, 16};

    std::size_t total() const {
        return weight_decay.size() * batch_size.size() * n_heads.size() * hidden_size.size() *
               kan_grid_size.size() * spline_order.size() * n_layers.size() * dropout.size() *
               embed_dim.size();
    }
};

struct GridPoint {
    ModelConfig model;
    TrainConfig train;
    double val_rcll = 0.0;
};

struct GridSearchResult {
    std::vector<GridPoint> leaderboard;  // ascending validation RCLL
    GridPoint best;
};

inline void write_leaderboard_csv(const std::vector<GridPoint>& board, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write leaderboard: " + path);
    os << "rank,val_rcll,weight_decay,batch_size,n_heads,hidden_size,grid_size,spline_order,"
          "n_layers,dropout,embed_dim\n";
    os.precision(12);
    for (std::size_t i = 0; i < board.size(); ++i) {
        const auto& p = board[i];
        os << i + 1 << "," << p.val_rcll << "," << p.train.weight_decay << ","
           << p.train.batch_size << "," << p.model.encoder.n_heads << ","
           << p.model.encoder.hidden_size << "," << p.model.encoder.grid_size << ","
           << p.model.encoder.spline_order << "," << p.model.encoder.n_layers << ","
           << p.model.encoder.dropout_rate << "," << p.model.embed_dim << "\n";
    }
}

// Exhaustive enumeration, or a seeded random subset when budget < grid size.
inline GridSearchResult grid_search(const ModelConfig& base_mc, const TrainConfig& base_tc,
                                    const HyperGrid& grid, const DataSplits& splits,
                                    std::size_t budget, std::uint64_t seed) {
    const std::size_t total = grid.total();
    if (total == 0) throw std::invalid_argument("grid_search: empty grid");

    std::vector<GridPoint> points;
    points.reserve(total);
    for (double wd : grid.weight_decay)
        for (std::size_t bs : grid.batch_size)
            for (std::size_t nh : grid.n_heads)
                for (std::size_t hs : grid.hidden_size)
                    for (std::size_t gs : grid.kan_grid_size)
                        for (std::size_t so : grid.spline_order)
                            for (std::size_t nl : grid.n_layers)
                                for (double dr : grid.dropout)
                                    for (std::size_t ed : grid.embed_dim) {
                                        GridPoint p{base_mc, base_tc, 0.0};
                                        p.train.weight_decay = wd;
                                        p.train.batch_size = bs;
                                        p.model.encoder.n_heads = nh;
                                        p.model.encoder.hidden_size = hs;
                                        p.model.encoder.grid_size = gs;
                                        p.model.encoder.spline_order = so;
                                        p.model.encoder.n_layers = nl;
                                        p.model.encoder.dropout_rate = dr;
                                        p.model.embed_dim = ed;
                                        points.push_back(std::move(p));
                                    }
    if (budget > 0 && budget < points.size()) {
        std::mt19937_64 rng(derive_seed(seed, "grid-subset"));
        std::shuffle(points.begin(), points.end(), rng);
        points.resize(budget);
    }

    const NormalizationStats norm = fit_normalizer(splits.train);
    const auto train_n = apply_normalizer(norm, splits.train);
    const auto val_n = apply_normalizer(norm, splits.val);

    GridSearchResult out;
    for (auto& p : points) {
        ModelState init = init_model(p.model, derive_seed(seed, "grid-init"));
        TrainConfig tc = p.train;
        tc.seed = derive_seed(seed, "grid-train");
        TrainResult tr = train(init, train_n, val_n, tc);
        p.val_rcll = tr.best_val;
        out.leaderboard.push_back(p);
    }
    std::stable_sort(out.leaderboard.begin(), out.leaderboard.end(),
                     [](const GridPoint& a, const GridPoint& b) { return a.val_rcll < b.val_rcll; });
    out.best = out.leaderboard.front();
    return out;
}

}  // namespace lobsurv
