#pragma once

// Dense float64 tensors with taped reverse-mode differentiation. One Tape per
// forward/backward pass; nodes are owned by the tape and addressed through
// lightweight Tensor handles. Broadcasting is limited to scalars and vectors
// along the trailing axis.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace lobsurv {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

class Tape;

struct Tensor {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Shape& shape() const;
    const std::vector<double>& val() const;
    const std::vector<double>& grad() const;
    double scalar() const;
    std::size_t size() const { return numel(shape()); }
};

class Tape {
public:
    struct Node {
        Shape shape;
        std::vector<double> val;
        std::vector<double> grad;  // accumulated across backward() calls
        bool requires_grad = false;
    };

    // ---- node creation ----

    Tensor input(Shape shape, std::vector<double> values, bool requires_grad = false) {
        const std::size_t n = numel(shape);
        if (values.size() != n)
            throw ShapeError("input: value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
        nodes_.push_back(Node{std::move(shape), std::move(values),
                              std::vector<double>(n, 0.0), requires_grad});
        return Tensor{this, nodes_.size() - 1};
    }

    Tensor constant(Shape shape, std::vector<double> values) {
        return input(std::move(shape), std::move(values), false);
    }

    Tensor scalar(double v) { return input({1}, {v}, false); }

    Tensor zeros(Shape shape, bool requires_grad = false) {
        std::size_t n = numel(shape);
        return input(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    // Raw extension point for fused ops (used by the KAN layer): allocate an
    // output node and record a pullback that reads adjoints via adj().
    Tensor alloc(Shape shape, bool requires_grad) { return zeros(std::move(shape), requires_grad); }

    Node& node(Tensor t) { return nodes_[t.id]; }
    const Node& node(Tensor t) const { return nodes_[t.id]; }
    std::vector<double>& val(Tensor t) { return nodes_[t.id].val; }
    std::vector<double>& adj(Tensor t) { return adjoints_[t.id]; }
    bool requires(Tensor t) const { return nodes_[t.id].requires_grad; }

    void record(std::function<void()> pullback) { steps_.push_back(std::move(pullback)); }

    std::size_t node_count() const { return nodes_.size(); }

    // ---- backward ----

    void backward(Tensor loss) {
        if (loss.tape != this) throw std::invalid_argument("backward: loss not on this tape");
        if (numel(nodes_[loss.id].shape) != 1)
            throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                        shape_str(nodes_[loss.id].shape));
        adjoints_.assign(nodes_.size(), {});
        for (std::size_t i = 0; i < nodes_.size(); ++i)
            adjoints_[i].assign(nodes_[i].val.size(), 0.0);
        adjoints_[loss.id][0] = 1.0;
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (!nodes_[i].requires_grad) continue;
            auto& g = nodes_[i].grad;
            const auto& a = adjoints_[i];
            for (std::size_t j = 0; j < g.size(); ++j) g[j] += a[j];
        }
        adjoints_.clear();
    }

    void zero_grad() {
        for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
    }

    // ---- ops ----

    Tensor matmul(Tensor a, Tensor b) {
        const auto& na = node(a);
        const auto& nb = node(b);
        if (na.shape.size() != 2 || nb.shape.size() != 2 || na.shape[1] != nb.shape[0])
            throw ShapeError("matmul: incompatible shapes " + shape_str(na.shape) + " and " +
                             shape_str(nb.shape));
        const std::size_t m = na.shape[0], k = na.shape[1], n = nb.shape[1];
        Tensor out = alloc({m, n}, na.requires_grad || nb.requires_grad);
        matmul_into_(val(out).data(), na.val.data(), nb.val.data(), m, k, n);
        record([this, a, b, out, m, k, n]() {
            const auto& go = adj(out);
            if (requires(a)) {
                auto& ga = adj(a);
                const auto& vb = node(b).val;
                // dA = dOut * B^T
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const double g = go[i * n + j];
                        if (g == 0.0) continue;
                        for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += g * vb[p * n + j];
                    }
            }
            if (requires(b)) {
                auto& gb = adj(b);
                const auto& va = node(a).val;
                // dB = A^T * dOut
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = va[i * k + p];
                        if (av == 0.0) continue;
                        for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * go[i * n + j];
                    }
            }
        });
        return out;
    }

    Tensor transpose(Tensor a) {
        const auto& na = node(a);
        if (na.shape.size() != 2) throw ShapeError("transpose: need 2-d, got " + shape_str(na.shape));
        const std::size_t m = na.shape[0], n = na.shape[1];
        Tensor out = alloc({n, m}, na.requires_grad);
        auto& vo = val(out);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) vo[j * m + i] = na.val[i * n + j];
        record([this, a, out, m, n]() {
            if (!requires(a)) return;
            auto& ga = adj(a);
            const auto& go = adj(out);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += go[j * m + i];
        });
        return out;
    }

    Tensor add(Tensor a, Tensor b) { return binary_(a, b, BinOp::Add); }
    Tensor sub(Tensor a, Tensor b) { return binary_(a, b, BinOp::Sub); }
    Tensor mul(Tensor a, Tensor b) { return binary_(a, b, BinOp::Mul); }

    Tensor neg(Tensor a) {
        Tensor out = unary_alloc_(a);
        const auto& va = node(a).val;
        auto& vo = val(out);
        for (std::size_t i = 0; i < va.size(); ++i) vo[i] = -va[i];
        record([this, a, out]() {
            if (!requires(a)) return;
            auto& ga = adj(a);
            const auto& go = adj(out);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] -= go[i];
        });
        return out;
    }

    Tensor exp(Tensor a) {
        Tensor out = unary_alloc_(a);
        const auto& va = node(a).val;
        auto& vo = val(out);
        for (std::size_t i = 0; i < va.size(); ++i) vo[i] = std::exp(va[i]);
        record([this, a, out]() {
            if (!requires(a)) return;
            auto& ga = adj(a);
            const auto& go = adj(out);
            const auto& vo = node(out).val;
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * vo[i];
        });
        return out;
    }

    Tensor log(Tensor a) {
        const auto& na = node(a);
        if (na.requires_grad)
            for (double v : na.val)
                if (v <= 0.0)
                    throw std::domain_error("log: non-positive input " + std::to_string(v) +
                                            " with gradient requested");
        Tensor out = unary_alloc_(a);
        auto& vo = val(out);
        for (std::size_t i = 0; i < na.val.size(); ++i) vo[i] = std::log(na.val[i]);
        record([this, a, out]() {
            if (!requires(a)) return;
            auto& ga = adj(a);
            const auto& go = adj(out);
            const auto& va = node(a).val;
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] / va[i];
        });
        return out;
    }

    Tensor pow(Tensor a, double p) {
        const auto& na = node(a);
        if (na.requires_grad)
            for (double v : na.val)
                if (v <= 0.0)
                    throw std::domain_error("pow: non-positive base " + std::to_string(v) +
                                            " with gradient requested");
        Tensor out = unary_alloc_(a);
        auto& vo = val(out);
        for (std::size_t i = 0; i < na.val.size(); ++i) vo[i] = std::pow(na.val[i], p);
        record([this, a, out, p]() {
            if (!requires(a)) return;
            auto& ga = adj(a);
            const auto& go = adj(out);
            const auto& va = node(a).val;
            for (std::size_t i = 0; i < ga.size(); ++i)
                ga[i] += go[i] * p * std::pow(va[i], p - 1.0);
        });
        return out;
    }

    Tensor silu(Tensor a) {
        Tensor out = unary_alloc_(a);
        const auto& va = node(a).val;
        auto& vo = val(out);
        for (std::size_t i = 0; i < va.size(); ++i) vo[i] = va[i] * sigmoid_(va[i]);
        record([this, a, out]() {
            if (!requires(a)) return;
            auto& ga = adj(a);
            const auto& go = adj(out);
            const auto& va = node(a).val;
            for (std::size_t i = 0; i < ga.size(); ++i) {
                const double s = sigmoid_(va[i]);
                ga[i] += go[i] * (s * (1.0 + va[i] * (1.0 - s)));
            }
        });
        return out;
    }

    Tensor scale(Tensor a, double c) {
        Tensor out = unary_alloc_(a);
        const auto& va = node(a).val;
        auto& vo = val(out);
        for (std::size_t i = 0; i < va.size(); ++i) vo[i] = c * va[i];
        record([this, a, out, c]() {
            if (!requires(a)) return;
            auto& ga = adj(a);
            const auto& go = adj(out);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += c * go[i];
        });
        return out;
    }

    // Softmax over the last axis, computed with max subtraction. Rows sum to 1.
    Tensor softmax_lastdim(Tensor a) {
        const auto& na = node(a);
        if (na.shape.empty() || na.shape.back() < 1)
            throw ShapeError("softmax_lastdim: empty last axis");
        const std::size_t w = na.shape.back();
        const std::size_t rows = na.val.size() / w;
        Tensor out = unary_alloc_(a);
        auto& vo = val(out);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* x = na.val.data() + r * w;
            double* y = vo.data() + r * w;
            double mx = x[0];
            for (std::size_t j = 1; j < w; ++j) mx = std::max(mx, x[j]);
            double sum = 0.0;
            for (std::size_t j = 0; j < w; ++j) {
                y[j] = std::exp(x[j] - mx);
                sum += y[j];
            }
            for (std::size_t j = 0; j < w; ++j) y[j] /= sum;
        }
        record([this, a, out, rows, w]() {
            if (!requires(a)) return;
            auto& ga = adj(a);
            const auto& go = adj(out);
            const auto& vo = node(out).val;
            for (std::size_t r = 0; r < rows; ++r) {
                const double* y = vo.data() + r * w;
                const double* g = go.data() + r * w;
                double dot = 0.0;
                for (std::size_t j = 0; j < w; ++j) dot += y[j] * g[j];
                for (std::size_t j = 0; j < w; ++j) ga[r * w + j] += y[j] * (g[j] - dot);
            }
        });
        return out;
    }

    // y[t, co] = sum_{j, ci} kernel[j, ci, co] * x[t - j*dilation, ci], zero
    // padded on the left so position t never sees inputs past t.
    Tensor dilated_causal_conv1d(Tensor x, Tensor kernel, std::size_t dilation) {
        const auto& nx = node(x);
        const auto& nk = node(kernel);
        if (nx.shape.size() != 2 || nk.shape.size() != 3 || nk.shape[1] != nx.shape[1])
            throw ShapeError("dilated_causal_conv1d: shapes " + shape_str(nx.shape) + " and " +
                             shape_str(nk.shape));
        if (dilation < 1) throw std::invalid_argument("dilated_causal_conv1d: dilation must be >= 1");
        const std::size_t L = nx.shape[0], ci_n = nx.shape[1];
        const std::size_t K = nk.shape[0], co_n = nk.shape[2];
        Tensor out = alloc({L, co_n}, nx.requires_grad || nk.requires_grad);
        auto& vo = val(out);
        for (std::size_t t = 0; t < L; ++t)
            for (std::size_t j = 0; j < K; ++j) {
                const std::size_t off = j * dilation;
                if (off > t) break;
                const std::size_t s = t - off;
                for (std::size_t ci = 0; ci < ci_n; ++ci) {
                    const double xv = nx.val[s * ci_n + ci];
                    if (xv == 0.0) continue;
                    const double* kr = nk.val.data() + (j * ci_n + ci) * co_n;
                    for (std::size_t co = 0; co < co_n; ++co) vo[t * co_n + co] += xv * kr[co];
                }
            }
        record([this, x, kernel, out, L, ci_n, K, co_n, dilation]() {
            const auto& go = adj(out);
            const bool gx = requires(x), gk = requires(kernel);
            if (!gx && !gk) return;
            const auto& vx = node(x).val;
            const auto& vk = node(kernel).val;
            for (std::size_t t = 0; t < L; ++t)
                for (std::size_t j = 0; j < K; ++j) {
                    const std::size_t off = j * dilation;
                    if (off > t) break;
                    const std::size_t s = t - off;
                    for (std::size_t ci = 0; ci < ci_n; ++ci) {
                        const double xv = vx[s * ci_n + ci];
                        const double* kr = vk.data() + (j * ci_n + ci) * co_n;
                        const double* g = go.data() + t * co_n;
                        if (gk) {
                            auto& gkb = adj(kernel);
                            double* dst = gkb.data() + (j * ci_n + ci) * co_n;
                            for (std::size_t co = 0; co < co_n; ++co) dst[co] += xv * g[co];
                        }
                        if (gx) {
                            double acc = 0.0;
                            for (std::size_t co = 0; co < co_n; ++co) acc += kr[co] * g[co];
                            adj(x)[s * ci_n + ci] += acc;
                        }
                    }
                }
        });
        return out;
    }

    Tensor embedding_lookup(Tensor table, std::size_t index) {
        return embedding_rows(table, std::vector<std::size_t>{index});
    }

    Tensor embedding_rows(Tensor table, const std::vector<std::size_t>& idx) {
        const auto& nt = node(table);
        if (nt.shape.size() != 2)
            throw ShapeError("embedding_rows: table must be 2-d, got " + shape_str(nt.shape));
        const std::size_t v = nt.shape[0], d = nt.shape[1];
        for (auto i : idx)
            if (i >= v) throw std::out_of_range("embedding_rows: index " + std::to_string(i));
        Tensor out = alloc({idx.size(), d}, nt.requires_grad);
        auto& vo = val(out);
        for (std::size_t r = 0; r < idx.size(); ++r)
            std::copy_n(nt.val.data() + idx[r] * d, d, vo.data() + r * d);
        record([this, table, out, idx, d]() {
            if (!requires(table)) return;
            auto& gt = adj(table);
            const auto& go = adj(out);
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t j = 0; j < d; ++j) gt[idx[r] * d + j] += go[r * d + j];
        });
        return out;
    }

    Tensor concat(const std::vector<Tensor>& ts, std::size_t axis) {
        if (ts.empty()) throw std::invalid_argument("concat: no inputs");
        const Shape& s0 = node(ts[0]).shape;
        if (axis >= s0.size()) throw ShapeError("concat: axis out of range");
        Shape out_shape = s0;
        std::size_t total = 0;
        bool rg = false;
        for (auto t : ts) {
            const Shape& s = node(t).shape;
            if (s.size() != s0.size()) throw ShapeError("concat: rank mismatch");
            for (std::size_t d = 0; d < s.size(); ++d)
                if (d != axis && s[d] != s0[d])
                    throw ShapeError("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(s0));
            total += s[axis];
            rg = rg || node(t).requires_grad;
        }
        out_shape[axis] = total;
        std::size_t outer = 1, inner = 1;
        for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
        for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];
        Tensor out = alloc(out_shape, rg);
        auto& vo = val(out);
        std::size_t off = 0;
        std::vector<std::size_t> offsets;
        for (auto t : ts) {
            offsets.push_back(off);
            const auto& nt = node(t);
            const std::size_t w = nt.shape[axis] * inner;
            for (std::size_t o = 0; o < outer; ++o)
                std::copy_n(nt.val.data() + o * w, w, vo.data() + o * total * inner + off * inner);
            off += nt.shape[axis];
        }
        record([this, ts, out, offsets, outer, inner, total, axis]() {
            const auto& go = adj(out);
            for (std::size_t i = 0; i < ts.size(); ++i) {
                if (!requires(ts[i])) continue;
                auto& g = adj(ts[i]);
                const std::size_t w = node(ts[i]).shape[axis] * inner;
                for (std::size_t o = 0; o < outer; ++o) {
                    const double* src = go.data() + o * total * inner + offsets[i] * inner;
                    double* dst = g.data() + o * w;
                    for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
                }
            }
        });
        return out;
    }

    // Mean over axis 0 of a 2-d tensor, keeping a leading unit dim: [L,H] -> [1,H].
    Tensor mean_rows(Tensor a) {
        const auto& na = node(a);
        if (na.shape.size() != 2) throw ShapeError("mean_rows: need 2-d, got " + shape_str(na.shape));
        const std::size_t L = na.shape[0], h = na.shape[1];
        Tensor out = alloc({1, h}, na.requires_grad);
        auto& vo = val(out);
        for (std::size_t i = 0; i < L; ++i)
            for (std::size_t j = 0; j < h; ++j) vo[j] += na.val[i * h + j];
        for (std::size_t j = 0; j < h; ++j) vo[j] /= static_cast<double>(L);
        record([this, a, out, L, h]() {
            if (!requires(a)) return;
            auto& ga = adj(a);
            const auto& go = adj(out);
            const double inv = 1.0 / static_cast<double>(L);
            for (std::size_t i = 0; i < L; ++i)
                for (std::size_t j = 0; j < h; ++j) ga[i * h + j] += go[j] * inv;
        });
        return out;
    }

    Tensor sum_all(Tensor a) {
        const auto& na = node(a);
        Tensor out = alloc({1}, na.requires_grad);
        val(out)[0] = std::accumulate(na.val.begin(), na.val.end(), 0.0);
        record([this, a, out]() {
            if (!requires(a)) return;
            auto& ga = adj(a);
            const double g = adj(out)[0];
            for (auto& v : ga) v += g;
        });
        return out;
    }

    Tensor mean_all(Tensor a) { return scale(sum_all(a), 1.0 / static_cast<double>(node(a).val.size())); }

    // Layer normalization over the last axis with learnable scale/shift.
    Tensor layer_norm(Tensor x, Tensor gamma, Tensor beta, double eps = 1e-5) {
        const auto& nx = node(x);
        const std::size_t h = nx.shape.back();
        if (node(gamma).val.size() != h || node(beta).val.size() != h)
            throw ShapeError("layer_norm: scale/shift must have trailing-axis length " +
                             std::to_string(h));
        const std::size_t rows = nx.val.size() / h;
        Tensor out = alloc(nx.shape, nx.requires_grad || requires(gamma) || requires(beta));
        auto xhat = std::make_shared<std::vector<double>>(nx.val.size());
        auto inv_std = std::make_shared<std::vector<double>>(rows);
        auto& vo = val(out);
        const auto& vg = node(gamma).val;
        const auto& vb = node(beta).val;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* xr = nx.val.data() + r * h;
            double mean = 0.0;
            for (std::size_t j = 0; j < h; ++j) mean += xr[j];
            mean /= static_cast<double>(h);
            double var = 0.0;
            for (std::size_t j = 0; j < h; ++j) var += (xr[j] - mean) * (xr[j] - mean);
            var /= static_cast<double>(h);
            const double is = 1.0 / std::sqrt(var + eps);
            (*inv_std)[r] = is;
            for (std::size_t j = 0; j < h; ++j) {
                const double xh = (xr[j] - mean) * is;
                (*xhat)[r * h + j] = xh;
                vo[r * h + j] = xh * vg[j] + vb[j];
            }
        }
        record([this, x, gamma, beta, out, xhat, inv_std, rows, h]() {
            const auto& go = adj(out);
            const auto& vg = node(gamma).val;
            if (requires(gamma)) {
                auto& gg = adj(gamma);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < h; ++j) gg[j] += go[r * h + j] * (*xhat)[r * h + j];
            }
            if (requires(beta)) {
                auto& gb = adj(beta);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < h; ++j) gb[j] += go[r * h + j];
            }
            if (requires(x)) {
                auto& gx = adj(x);
                for (std::size_t r = 0; r < rows; ++r) {
                    double mean_g = 0.0, mean_gx = 0.0;
                    for (std::size_t j = 0; j < h; ++j) {
                        const double g = go[r * h + j] * vg[j];
                        mean_g += g;
                        mean_gx += g * (*xhat)[r * h + j];
                    }
                    mean_g /= static_cast<double>(h);
                    mean_gx /= static_cast<double>(h);
                    const double is = (*inv_std)[r];
                    for (std::size_t j = 0; j < h; ++j) {
                        const double g = go[r * h + j] * vg[j];
                        gx[r * h + j] += is * (g - mean_g - (*xhat)[r * h + j] * mean_gx);
                    }
                }
            }
        });
        return out;
    }

    Tensor slice_rows(Tensor a, std::size_t start, std::size_t count) {
        const auto& na = node(a);
        if (na.shape.empty() || start + count > na.shape[0])
            throw ShapeError("slice_rows: range out of bounds for " + shape_str(na.shape));
        std::size_t inner = 1;
        for (std::size_t d = 1; d < na.shape.size(); ++d) inner *= na.shape[d];
        Shape os = na.shape;
        os[0] = count;
        Tensor out = alloc(os, na.requires_grad);
        std::copy_n(na.val.data() + start * inner, count * inner, val(out).data());
        record([this, a, out, start, count, inner]() {
            if (!requires(a)) return;
            auto& ga = adj(a);
            const auto& go = adj(out);
            for (std::size_t j = 0; j < count * inner; ++j) ga[start * inner + j] += go[j];
        });
        return out;
    }

    Tensor slice_cols(Tensor a, std::size_t start, std::size_t count) {
        const auto& na = node(a);
        if (na.shape.size() != 2 || start + count > na.shape[1])
            throw ShapeError("slice_cols: range out of bounds for " + shape_str(na.shape));
        const std::size_t m = na.shape[0], n = na.shape[1];
        Tensor out = alloc({m, count}, na.requires_grad);
        auto& vo = val(out);
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(na.val.data() + i * n + start, count, vo.data() + i * count);
        record([this, a, out, start, count, m, n]() {
            if (!requires(a)) return;
            auto& ga = adj(a);
            const auto& go = adj(out);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < count; ++j) ga[i * n + start + j] += go[i * count + j];
        });
        return out;
    }

    Tensor reshape(Tensor a, Shape s) {
        const auto& na = node(a);
        if (numel(s) != na.val.size())
            throw ShapeError("reshape: cannot view " + shape_str(na.shape) + " as " + shape_str(s));
        Tensor out = alloc(std::move(s), na.requires_grad);
        val(out) = na.val;
        record([this, a, out]() {
            if (!requires(a)) return;
            auto& ga = adj(a);
            const auto& go = adj(out);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
        });
        return out;
    }

    // Inverted dropout; identity when rate == 0. Draws the mask from rng so a
    // caller-supplied seed makes the whole pass reproducible.
    Tensor dropout(Tensor a, double rate, std::mt19937_64& rng) {
        if (rate == 0.0) return a;
        if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
        const auto& na = node(a);
        auto mask = std::make_shared<std::vector<double>>(na.val.size());
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double keep = 1.0 - rate;
        for (auto& m : *mask) m = (u(rng) < keep) ? 1.0 / keep : 0.0;
        Tensor out = unary_alloc_(a);
        auto& vo = val(out);
        for (std::size_t i = 0; i < vo.size(); ++i) vo[i] = na.val[i] * (*mask)[i];
        record([this, a, out, mask]() {
            if (!requires(a)) return;
            auto& ga = adj(a);
            const auto& go = adj(out);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * (*mask)[i];
        });
        return out;
    }

private:
    enum class BinOp { Add, Sub, Mul };

    // Broadcast classes: identical shapes, scalar (1 element), or a vector
    // matching the trailing axis of the other operand.
    enum class Bcast { None, AScalar, BScalar, AVector, BVector };

    static double sigmoid_(double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }

    Tensor unary_alloc_(Tensor a) { return alloc(node(a).shape, node(a).requires_grad); }

    Bcast classify_(const Shape& sa, const Shape& sb) const {
        if (sa == sb) return Bcast::None;
        if (numel(sb) == 1) return Bcast::BScalar;
        if (numel(sa) == 1) return Bcast::AScalar;
        if (!sa.empty() && numel(sb) == sa.back() && sa.back() > 1) return Bcast::BVector;
        if (!sb.empty() && numel(sa) == sb.back() && sb.back() > 1) return Bcast::AVector;
        throw ShapeError("elementwise: incompatible shapes " + shape_str(sa) + " and " +
                         shape_str(sb));
    }

    Tensor binary_(Tensor a, Tensor b, BinOp op) {
        const auto& na = node(a);
        const auto& nb = node(b);
        const Bcast bc = classify_(na.shape, nb.shape);
        const bool a_small = (bc == Bcast::AScalar || bc == Bcast::AVector);
        const Shape& os = a_small ? nb.shape : na.shape;
        Tensor out = alloc(os, na.requires_grad || nb.requires_grad);
        auto& vo = val(out);
        const std::size_t n = vo.size();
        const std::size_t wa = na.val.size(), wb = nb.val.size();
        for (std::size_t i = 0; i < n; ++i) {
            const double x = na.val[wa == n ? i : i % wa];
            const double y = nb.val[wb == n ? i : i % wb];
            vo[i] = op == BinOp::Add ? x + y : op == BinOp::Sub ? x - y : x * y;
        }
        record([this, a, b, out, op, n, wa, wb]() {
            const auto& go = adj(out);
            const auto& va = node(a).val;
            const auto& vb = node(b).val;
            if (requires(a)) {
                auto& ga = adj(a);
                for (std::size_t i = 0; i < n; ++i) {
                    const double g = op == BinOp::Mul ? go[i] * vb[wb == n ? i : i % wb] : go[i];
                    ga[wa == n ? i : i % wa] += g;
                }
            }
            if (requires(b)) {
                auto& gb = adj(b);
                for (std::size_t i = 0; i < n; ++i) {
                    double g = go[i];
                    if (op == BinOp::Mul) g *= va[wa == n ? i : i % wa];
                    if (op == BinOp::Sub) g = -g;
                    gb[wb == n ? i : i % wb] += g;
                }
            }
        });
        return out;
    }

    static void matmul_into_(double* out, const double* a, const double* b, std::size_t m,
                             std::size_t k, std::size_t n) {
        std::fill_n(out, m * n, 0.0);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                const double av = a[i * k + p];
                if (av == 0.0) continue;
                const double* br = b + p * n;
                double* orow = out + i * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += av * br[j];
            }
    }

    std::deque<Node> nodes_;
    std::vector<std::function<void()>> steps_;
    std::vector<std::vector<double>> adjoints_;
};

inline const Shape& Tensor::shape() const { return tape->node(*this).shape; }
inline const std::vector<double>& Tensor::val() const { return tape->node(*this).val; }
inline const std::vector<double>& Tensor::grad() const { return tape->node(*this).grad; }
inline double Tensor::scalar() const {
    if (val().size() != 1) throw ShapeError("scalar: tensor has " + std::to_string(val().size()) + " elements");
    return val()[0];
}

}  // namespace lobsurv
