#pragma once

// Kolmogorov-Arnold layer: per-edge learnable univariate functions built from
// cubic B-splines on a clamped uniform knot grid over [-3, 3], plus a silu
// base path. Implemented as one fused tape op with a hand-written pullback.

#include <cmath>
#include <memory>
#include <vector>

#include "lobsurv/checkpoint.hpp"
#include "lobsurv/tensor.hpp"

namespace lobsurv {

// Clamped uniform knot vector on [lo, hi]: order-fold repeated ends around
// grid_size+1 uniform interior points. Basis count = grid_size + order.
class BSplineBasis {
public:
    BSplineBasis(std::size_t grid_size, std::size_t order = 3, double lo = -3.0, double hi = 3.0)
        : grid_(grid_size), order_(order), lo_(lo), hi_(hi) {
        const std::size_t n_knots = grid_ + 2 * order_ + 1;
        knots_.resize(n_knots);
        for (std::size_t i = 0; i < n_knots; ++i) {
            if (i < order_)
                knots_[i] = lo_;
            else if (i > order_ + grid_)
                knots_[i] = hi_;
            else
                knots_[i] = lo_ + (hi_ - lo_) * static_cast<double>(i - order_) / static_cast<double>(grid_);
        }
    }

    std::size_t n_basis() const { return grid_ + order_; }
    const std::vector<double>& knots() const { return knots_; }
    double lo() const { return lo_; }
    double hi() const { return hi_; }

    // Evaluates all basis functions (and optionally derivatives) at x.
    // Inputs outside [lo, hi] are clamped, so values extend as constants and
    // derivatives vanish out of range.
    void eval(double x, double* basis, double* deriv = nullptr) const {
        const bool inside = x >= lo_ && x <= hi_;
        const double xc = std::min(std::max(x, lo_), hi_);
        const std::size_t nb = n_basis();
        const std::size_t n_lower = nb + order_;  // order-0 basis count
        std::vector<double> b(n_lower, 0.0);
        // order 0: indicator of [t_m, t_{m+1}), right-closed at the top knot
        for (std::size_t m = 0; m < n_lower; ++m) {
            const double t0 = knots_[m], t1 = knots_[m + 1];
            if ((xc >= t0 && xc < t1) || (xc == hi_ && t1 == hi_ && t0 < t1)) b[m] = 1.0;
        }
        std::vector<double> prev;
        for (std::size_t k = 1; k <= order_; ++k) {
            if (deriv != nullptr && k == order_) prev = b;  // order k_s-1 basis for derivatives
            const std::size_t cnt = n_lower - k;
            for (std::size_t m = 0; m < cnt; ++m) {
                const double d1 = knots_[m + k] - knots_[m];
                const double d2 = knots_[m + k + 1] - knots_[m + 1];
                double v = 0.0;
                if (d1 > 0.0) v += (xc - knots_[m]) / d1 * b[m];
                if (d2 > 0.0) v += (knots_[m + k + 1] - xc) / d2 * b[m + 1];
                b[m] = v;
            }
        }
        for (std::size_t m = 0; m < nb; ++m) basis[m] = b[m];
        if (deriv != nullptr) {
            const double ko = static_cast<double>(order_);
            for (std::size_t m = 0; m < nb; ++m) {
                double v = 0.0;
                const double d1 = knots_[m + order_] - knots_[m];
                const double d2 = knots_[m + order_ + 1] - knots_[m + 1];
                if (d1 > 0.0) v += ko / d1 * prev[m];
                if (d2 > 0.0) v -= ko / d2 * prev[m + 1];
                deriv[m] = inside ? v : 0.0;
            }
        }
    }

private:
    std::size_t grid_;
    std::size_t order_;
    double lo_, hi_;
    std::vector<double> knots_;
};

struct KanLayerSpec {
    std::size_t in_width = 0;
    std::size_t out_width = 0;
    std::size_t grid_size = 5;
    std::size_t spline_order = 3;
};

// Registers the three parameter tensors of one KAN layer under `prefix`.
inline void init_kan_params(ParamStore& store, const std::string& prefix, const KanLayerSpec& spec,
                            std::mt19937_64& rng) {
    const std::size_t nb = spec.grid_size + spec.spline_order;
    const std::size_t in = spec.in_width, out = spec.out_width;
    store.add(prefix + ".coeffs", {out, in, nb}, normal_init(out * in * nb, 0.1 / std::sqrt(double(in)), rng));
    store.add(prefix + ".base_w", {out, in}, xavier_uniform(in, out, out * in, rng));
    store.add(prefix + ".spline_w", {out, in}, std::vector<double>(out * in, 1.0));
}

// out[b,j] = sum_i base_w[j,i]*silu(x[b,i]) + spline_w[j,i]*sum_m c[j,i,m]*B_m(x[b,i])
inline Tensor kan_layer_forward(Tape& tape, Tensor x, Tensor coeffs, Tensor base_w, Tensor spline_w,
                                const BSplineBasis& basis) {
    const auto& nx = tape.node(x);
    const auto& nc = tape.node(coeffs);
    if (nx.shape.size() != 2 || nc.shape.size() != 3 || nc.shape[1] != nx.shape[1])
        throw ShapeError("kan_layer_forward: shapes " + shape_str(nx.shape) + " and " + shape_str(nc.shape));
    const std::size_t batch = nx.shape[0], in = nx.shape[1];
    const std::size_t out_w = nc.shape[0], nb = nc.shape[2];
    if (nb != basis.n_basis()) throw ShapeError("kan_layer_forward: basis count mismatch");

    const bool rg = nx.requires_grad || nc.requires_grad || tape.requires(base_w) || tape.requires(spline_w);
    Tensor out = tape.alloc({batch, out_w}, rg);

    // caches shared with the pullback
    auto bvals = std::make_shared<std::vector<double>>(batch * in * nb);
    auto bders = std::make_shared<std::vector<double>>(batch * in * nb);
    auto silu_v = std::make_shared<std::vector<double>>(batch * in);
    auto silu_d = std::make_shared<std::vector<double>>(batch * in);
    auto spline_sum = std::make_shared<std::vector<double>>(batch * in * out_w);  // s[b,i,j]

    const auto& vx = nx.val;
    const auto& vc = nc.val;
    const auto& vbw = tape.node(base_w).val;
    const auto& vsw = tape.node(spline_w).val;
    auto& vo = tape.val(out);

    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < in; ++i) {
            const double xi = vx[b * in + i];
            double* bv = bvals->data() + (b * in + i) * nb;
            double* bd = bders->data() + (b * in + i) * nb;
            basis.eval(xi, bv, bd);
            const double s = 1.0 / (1.0 + std::exp(-xi));
            (*silu_v)[b * in + i] = xi * s;
            (*silu_d)[b * in + i] = s * (1.0 + xi * (1.0 - s));
            for (std::size_t j = 0; j < out_w; ++j) {
                const double* cj = vc.data() + (j * in + i) * nb;
                double acc = 0.0;
                for (std::size_t m = 0; m < nb; ++m) acc += cj[m] * bv[m];
                (*spline_sum)[(b * in + i) * out_w + j] = acc;
            }
        }
        for (std::size_t j = 0; j < out_w; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < in; ++i) {
                acc += vbw[j * in + i] * (*silu_v)[b * in + i];
                acc += vsw[j * in + i] * (*spline_sum)[(b * in + i) * out_w + j];
            }
            vo[b * out_w + j] = acc;
        }
    }

    tape.record([&tape, x, coeffs, base_w, spline_w, out, bvals, bders, silu_v, silu_d, spline_sum,
                 batch, in, out_w, nb]() {
        const auto& go = tape.adj(out);
        const auto& vbw = tape.node(base_w).val;
        const auto& vsw = tape.node(spline_w).val;
        const auto& vc = tape.node(coeffs).val;
        const bool need_x = tape.requires(x);
        const bool need_c = tape.requires(coeffs);
        const bool need_bw = tape.requires(base_w);
        const bool need_sw = tape.requires(spline_w);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t j = 0; j < out_w; ++j) {
                const double g = go[b * out_w + j];
                if (g == 0.0) continue;
                for (std::size_t i = 0; i < in; ++i) {
                    const std::size_t bi = b * in + i;
                    if (need_bw) tape.adj(base_w)[j * in + i] += g * (*silu_v)[bi];
                    if (need_sw) tape.adj(spline_w)[j * in + i] += g * (*spline_sum)[bi * out_w + j];
                    if (need_c) {
                        const double* bv = bvals->data() + bi * nb;
                        double* gc = tape.adj(coeffs).data() + (j * in + i) * nb;
                        const double w = g * vsw[j * in + i];
                        for (std::size_t m = 0; m < nb; ++m) gc[m] += w * bv[m];
                    }
                    if (need_x) {
                        const double* bd = bders->data() + bi * nb;
                        const double* cj = vc.data() + (j * in + i) * nb;
                        double ds = 0.0;
                        for (std::size_t m = 0; m < nb; ++m) ds += cj[m] * bd[m];
                        tape.adj(x)[bi] += g * (vbw[j * in + i] * (*silu_d)[bi] + vsw[j * in + i] * ds);
                    }
                }
            }
        }
    });
    return out;
}

}  // namespace lobsurv
