#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <type_traits>
#include <vector>

#include "mmfusion/graph.hpp"
#include "mmfusion/tensor.hpp"

// Tape ops. Each op computes its forward value eagerly and, when a graph is
// active and an input participates in differentiation, records a backward
// closure on the tape. Outputs never alias inputs. Single-threaded loops
// with fixed reduction order keep results bitwise reproducible.

namespace mmf {

namespace fault {
// Test hook for the verify harness: disables the max-subtraction in softmax
// so numerical-stability checks can be shown to catch the failure.
inline bool& softmax_skip_max_subtraction() {
    static bool v = false;
    return v;
}
}  // namespace fault

namespace detail {

// Forward accumulations in the f64 path run at extended precision. The f64
// mode exists for gradient checking, where central differences at eps=1e-5
// resolve gradients near the rounding noise of the forward evaluation;
// extended-precision sums push that noise floor well below the 1e-4 check
// tolerance. The f32 training path is unaffected.
template <typename S>
struct acc {
    using type = S;
};
template <>
struct acc<double> {
    using type = long double;
};
template <typename S>
using acc_t = typename acc<S>::type;

template <typename S>
inline void ensure_grad(const std::shared_ptr<TensorImpl<S>>& t) {
    if (t->grad.size() != t->data.size()) t->grad.assign(t->data.size(), S(0));
}

template <typename S>
inline bool same_shape(const Tensor<S>& a, const Tensor<S>& b) {
    return a.shape() == b.shape();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    if (!detail::same_shape(a, b)) {
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor<S> out(a.shape());
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];

    auto* g = Graph<S>::active();
    if (g) {
        bool ta = g->tracks(a), tb = g->tracks(b);
        if (ta || tb) {
            g->mark(out);
            auto ai = a.impl(), bi = b.impl(), oi = out.impl();
            g->record([ai, bi, oi, ta, tb]() {
                if (oi->grad.empty()) return;
                if (ta) {
                    detail::ensure_grad(ai);
                    for (std::size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
                }
                if (tb) {
                    detail::ensure_grad(bi);
                    for (std::size_t i = 0; i < oi->grad.size(); ++i) bi->grad[i] += oi->grad[i];
                }
            });
        }
    }
    return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    if (!detail::same_shape(a, b)) {
        throw ShapeError("sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor<S> out(a.shape());
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] - pb[i];

    auto* g = Graph<S>::active();
    if (g) {
        bool ta = g->tracks(a), tb = g->tracks(b);
        if (ta || tb) {
            g->mark(out);
            auto ai = a.impl(), bi = b.impl(), oi = out.impl();
            g->record([ai, bi, oi, ta, tb]() {
                if (oi->grad.empty()) return;
                if (ta) {
                    detail::ensure_grad(ai);
                    for (std::size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
                }
                if (tb) {
                    detail::ensure_grad(bi);
                    for (std::size_t i = 0; i < oi->grad.size(); ++i) bi->grad[i] -= oi->grad[i];
                }
            });
        }
    }
    return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    if (!detail::same_shape(a, b)) {
        throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor<S> out(a.shape());
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];

    auto* g = Graph<S>::active();
    if (g) {
        bool ta = g->tracks(a), tb = g->tracks(b);
        if (ta || tb) {
            g->mark(out);
            auto ai = a.impl(), bi = b.impl(), oi = out.impl();
            g->record([ai, bi, oi, ta, tb]() {
                if (oi->grad.empty()) return;
                if (ta) {
                    detail::ensure_grad(ai);
                    for (std::size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i] * bi->data[i];
                }
                if (tb) {
                    detail::ensure_grad(bi);
                    for (std::size_t i = 0; i < oi->grad.size(); ++i) bi->grad[i] += oi->grad[i] * ai->data[i];
                }
            });
        }
    }
    return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor) {
    Tensor<S> out(x.shape());
    const S* px = x.data();
    S* po = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = px[i] * factor;

    auto* g = Graph<S>::active();
    if (g && g->tracks(x)) {
        g->mark(out);
        auto xi = x.impl(), oi = out.impl();
        g->record([xi, oi, factor]() {
            if (oi->grad.empty()) return;
            detail::ensure_grad(xi);
            for (std::size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += oi->grad[i] * factor;
        });
    }
    return out;
}

// Exact-CDF GELU: x * Phi(x) with Phi the standard normal CDF (erfc form),
// not the tanh approximation. Gradient is Phi(x) + x * phi(x).
template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    Tensor<S> out(x.shape());
    const S* px = x.data();
    S* po = out.data();
    for (std::size_t i = 0; i < out.numel(); ++i) {
        double v = static_cast<double>(px[i]);
        po[i] = static_cast<S>(v * 0.5 * std::erfc(-v * inv_sqrt2));
    }

    auto* g = Graph<S>::active();
    if (g && g->tracks(x)) {
        g->mark(out);
        auto xi = x.impl(), oi = out.impl();
        g->record([xi, oi]() {
            if (oi->grad.empty()) return;
            detail::ensure_grad(xi);
            constexpr double inv_sqrt_2pi = 0.3989422804014326779;
            for (std::size_t i = 0; i < oi->grad.size(); ++i) {
                double v = static_cast<double>(xi->data[i]);
                double cdf = 0.5 * std::erfc(-v * inv_sqrt2);
                double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                xi->grad[i] += oi->grad[i] * static_cast<S>(cdf + v * pdf);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.extent(1) != b.extent(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor<S> out({m, n});
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
    using A = detail::acc_t<S>;
    if constexpr (std::is_same_v<A, S>) {
        for (std::size_t i = 0; i < m; ++i) {
            S* orow = po + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const S av = pa[i * k + p];
                const S* brow = pb + p * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    } else {
        std::vector<A> acc(n);
        for (std::size_t i = 0; i < m; ++i) {
            std::fill(acc.begin(), acc.end(), A(0));
            for (std::size_t p = 0; p < k; ++p) {
                const A av = pa[i * k + p];
                const S* brow = pb + p * n;
                for (std::size_t j = 0; j < n; ++j) acc[j] += av * static_cast<A>(brow[j]);
            }
            S* orow = po + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] = static_cast<S>(acc[j]);
        }
    }

    auto* g = Graph<S>::active();
    if (g) {
        bool ta = g->tracks(a), tb = g->tracks(b);
        if (ta || tb) {
            g->mark(out);
            auto ai = a.impl(), bi = b.impl(), oi = out.impl();
            g->record([ai, bi, oi, ta, tb, m, k, n]() {
                if (oi->grad.empty()) return;
                const S* gout = oi->grad.data();
                if (ta) {
                    detail::ensure_grad(ai);
                    // dA = dC * B^T
                    S* ga = ai->grad.data();
                    const S* pb2 = bi->data.data();
                    for (std::size_t i = 0; i < m; ++i) {
                        const S* grow = gout + i * n;
                        for (std::size_t p = 0; p < k; ++p) {
                            const S* brow = pb2 + p * n;
                            S acc = 0;
                            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                            ga[i * k + p] += acc;
                        }
                    }
                }
                if (tb) {
                    detail::ensure_grad(bi);
                    // dB = A^T * dC
                    S* gb = bi->grad.data();
                    const S* pa2 = ai->data.data();
                    for (std::size_t i = 0; i < m; ++i) {
                        const S* grow = gout + i * n;
                        for (std::size_t p = 0; p < k; ++p) {
                            const S av = pa2[i * k + p];
                            S* gbrow = gb + p * n;
                            for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                        }
                    }
                }
            });
        }
    }
    return out;
}

template <typename S>
Tensor<S> transpose2d(const Tensor<S>& x) {
    if (x.ndim() != 2) {
        throw ShapeError("transpose2d: expected 2-d tensor, got " + shape_str(x.shape()));
    }
    const std::size_t r = x.extent(0), c = x.extent(1);
    Tensor<S> out({c, r});
    const S* px = x.data();
    S* po = out.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) po[j * r + i] = px[i * c + j];

    auto* g = Graph<S>::active();
    if (g && g->tracks(x)) {
        g->mark(out);
        auto xi = x.impl(), oi = out.impl();
        g->record([xi, oi, r, c]() {
            if (oi->grad.empty()) return;
            detail::ensure_grad(xi);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) xi->grad[i * c + j] += oi->grad[j * r + i];
        });
    }
    return out;
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    Tensor<S> out(std::move(shape), std::vector<S>(x.values()));

    auto* g = Graph<S>::active();
    if (g && g->tracks(x)) {
        g->mark(out);
        auto xi = x.impl(), oi = out.impl();
        g->record([xi, oi]() {
            if (oi->grad.empty()) return;
            detail::ensure_grad(xi);
            for (std::size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Row-structured ops (last axis = feature axis)
// ---------------------------------------------------------------------------

// x[r x c] + bias[c] broadcast over rows.
template <typename S>
Tensor<S> add_row_bias(const Tensor<S>& x, const Tensor<S>& bias) {
    if (x.ndim() != 2 || bias.ndim() != 1 || bias.extent(0) != x.extent(1)) {
        throw ShapeError("add_row_bias: shapes " + shape_str(x.shape()) + " and " +
                         shape_str(bias.shape()) + " do not conform");
    }
    const std::size_t r = x.extent(0), c = x.extent(1);
    Tensor<S> out({r, c});
    const S* px = x.data();
    const S* pbv = bias.data();
    S* po = out.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) po[i * c + j] = px[i * c + j] + pbv[j];

    auto* g = Graph<S>::active();
    if (g) {
        bool tx = g->tracks(x), tb = g->tracks(bias);
        if (tx || tb) {
            g->mark(out);
            auto xi = x.impl(), bi = bias.impl(), oi = out.impl();
            g->record([xi, bi, oi, tx, tb, r, c]() {
                if (oi->grad.empty()) return;
                if (tx) {
                    detail::ensure_grad(xi);
                    for (std::size_t i = 0; i < r * c; ++i) xi->grad[i] += oi->grad[i];
                }
                if (tb) {
                    detail::ensure_grad(bi);
                    for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < c; ++j) bi->grad[j] += oi->grad[i * c + j];
                }
            });
        }
    }
    return out;
}

// Softmax over the last axis, computed with max-subtraction. Rows sum to 1.
template <typename S>
Tensor<S> softmax(const Tensor<S>& x) {
    if (x.ndim() < 1) throw ShapeError("softmax: scalar input " + shape_str(x.shape()));
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.numel() / n;
    Tensor<S> out(x.shape());
    const S* px = x.data();
    S* po = out.data();
    const bool skip_max = fault::softmax_skip_max_subtraction();
    for (std::size_t i = 0; i < rows; ++i) {
        const S* xr = px + i * n;
        S* orow = po + i * n;
        S mx = skip_max ? S(0) : xr[0];
        if (!skip_max) {
            for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
        }
        detail::acc_t<S> denom = 0;
        for (std::size_t j = 0; j < n; ++j) {
            orow[j] = std::exp(xr[j] - mx);
            denom += orow[j];
        }
        const S inv = static_cast<S>(detail::acc_t<S>(1) / denom);
        for (std::size_t j = 0; j < n; ++j) orow[j] *= inv;
    }

    auto* g = Graph<S>::active();
    if (g && g->tracks(x)) {
        g->mark(out);
        auto xi = x.impl(), oi = out.impl();
        g->record([xi, oi, rows, n]() {
            if (oi->grad.empty()) return;
            detail::ensure_grad(xi);
            for (std::size_t i = 0; i < rows; ++i) {
                const S* s = oi->data.data() + i * n;
                const S* gr = oi->grad.data() + i * n;
                S dot = 0;
                for (std::size_t j = 0; j < n; ++j) dot += gr[j] * s[j];
                S* gx = xi->grad.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) gx[j] += s[j] * (gr[j] - dot);
            }
        });
    }
    return out;
}

// Per-row layer norm over the last axis with biased (1/d) variance, then an
// affine transform by gamma/beta.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps) {
    if (x.ndim() < 1) throw ShapeError("layer_norm: scalar input");
    const std::size_t d = x.shape().back();
    if (d < 2) throw ShapeError("layer_norm: feature axis must have extent >= 2, got " + shape_str(x.shape()));
    if (gamma.numel() != d || beta.numel() != d) {
        throw ShapeError("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " +
                         shape_str(beta.shape()) + " do not match feature extent of " +
                         shape_str(x.shape()));
    }
    if (!(eps > S(0))) throw ValueError("layer_norm: eps must be positive");
    const std::size_t rows = x.numel() / d;
    Tensor<S> out(x.shape());
    std::vector<S> inv_std(rows);
    std::vector<S> mean(rows);
    const S* px = x.data();
    const S* pg = gamma.data();
    const S* pbv = beta.data();
    S* po = out.data();
    for (std::size_t i = 0; i < rows; ++i) {
        const S* xr = px + i * d;
        detail::acc_t<S> mu_acc = 0;
        for (std::size_t j = 0; j < d; ++j) mu_acc += xr[j];
        const S mu = static_cast<S>(mu_acc / static_cast<detail::acc_t<S>>(d));
        detail::acc_t<S> var_acc = 0;
        for (std::size_t j = 0; j < d; ++j) {
            const detail::acc_t<S> del = xr[j] - mu;
            var_acc += del * del;
        }
        const S var = static_cast<S>(var_acc / static_cast<detail::acc_t<S>>(d));
        S inv = S(1) / std::sqrt(var + eps);
        mean[i] = mu;
        inv_std[i] = inv;
        S* orow = po + i * d;
        for (std::size_t j = 0; j < d; ++j) orow[j] = (xr[j] - mu) * inv * pg[j] + pbv[j];
    }

    auto* g = Graph<S>::active();
    if (g) {
        bool tx = g->tracks(x), tg = g->tracks(gamma), tb = g->tracks(beta);
        if (tx || tg || tb) {
            g->mark(out);
            auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl();
            g->record([xi, gi, bi, oi, tx, tg, tb, rows, d, mean, inv_std]() {
                if (oi->grad.empty()) return;
                if (tx) detail::ensure_grad(xi);
                if (tg) detail::ensure_grad(gi);
                if (tb) detail::ensure_grad(bi);
                const S* pg2 = gi->data.data();
                for (std::size_t i = 0; i < rows; ++i) {
                    const S* xr = xi->data.data() + i * d;
                    const S* gr = oi->grad.data() + i * d;
                    const S mu = mean[i];
                    const S inv = inv_std[i];
                    if (tg || tb) {
                        for (std::size_t j = 0; j < d; ++j) {
                            S xhat = (xr[j] - mu) * inv;
                            if (tg) gi->grad[j] += gr[j] * xhat;
                            if (tb) bi->grad[j] += gr[j];
                        }
                    }
                    if (tx) {
                        S sum_dxhat = 0, sum_dxhat_xhat = 0;
                        for (std::size_t j = 0; j < d; ++j) {
                            S dxhat = gr[j] * pg2[j];
                            S xhat = (xr[j] - mu) * inv;
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                        }
                        const S inv_d = S(1) / static_cast<S>(d);
                        S* gx = xi->grad.data() + i * d;
                        for (std::size_t j = 0; j < d; ++j) {
                            S dxhat = gr[j] * pg2[j];
                            S xhat = (xr[j] - mu) * inv;
                            gx[j] += inv * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
                        }
                    }
                }
            });
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Slicing / concatenation
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, std::size_t c0, std::size_t c1) {
    if (x.ndim() != 2 || c0 >= c1 || c1 > x.extent(1)) {
        throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") invalid for " + shape_str(x.shape()));
    }
    const std::size_t r = x.extent(0), c = x.extent(1), w = c1 - c0;
    Tensor<S> out({r, w});
    const S* px = x.data();
    S* po = out.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) po[i * w + j] = px[i * c + c0 + j];

    auto* g = Graph<S>::active();
    if (g && g->tracks(x)) {
        g->mark(out);
        auto xi = x.impl(), oi = out.impl();
        g->record([xi, oi, r, c, c0, w]() {
            if (oi->grad.empty()) return;
            detail::ensure_grad(xi);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < w; ++j) xi->grad[i * c + c0 + j] += oi->grad[i * w + j];
        });
    }
    return out;
}

template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& xs) {
    if (xs.empty()) throw ShapeError("concat_cols: empty input list");
    const std::size_t r = xs[0].extent(0);
    std::size_t total = 0;
    for (const auto& t : xs) {
        if (t.ndim() != 2 || t.extent(0) != r) {
            throw ShapeError("concat_cols: row mismatch " + shape_str(xs[0].shape()) + " vs " +
                             shape_str(t.shape()));
        }
        total += t.extent(1);
    }
    Tensor<S> out({r, total});
    S* po = out.data();
    std::size_t off = 0;
    for (const auto& t : xs) {
        const std::size_t w = t.extent(1);
        const S* pt = t.data();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) po[i * total + off + j] = pt[i * w + j];
        off += w;
    }

    auto* g = Graph<S>::active();
    if (g) {
        bool any = false;
        std::vector<bool> tracked(xs.size());
        for (std::size_t t = 0; t < xs.size(); ++t) {
            tracked[t] = g->tracks(xs[t]);
            any = any || tracked[t];
        }
        if (any) {
            g->mark(out);
            std::vector<std::shared_ptr<TensorImpl<S>>> impls;
            impls.reserve(xs.size());
            for (const auto& t : xs) impls.push_back(t.impl());
            auto oi = out.impl();
            g->record([impls, oi, tracked, r, total]() {
                if (oi->grad.empty()) return;
                std::size_t off2 = 0;
                for (std::size_t t = 0; t < impls.size(); ++t) {
                    const std::size_t w = impls[t]->shape[1];
                    if (tracked[t]) {
                        detail::ensure_grad(impls[t]);
                        for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < w; ++j)
                                impls[t]->grad[i * w + j] += oi->grad[i * total + off2 + j];
                    }
                    off2 += w;
                }
            });
        }
    }
    return out;
}

template <typename S>
Tensor<S> concat_rows(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.extent(1) != b.extent(1)) {
        throw ShapeError("concat_rows: column mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    const std::size_t ra = a.extent(0), rb = b.extent(0), c = a.extent(1);
    Tensor<S> out({ra + rb, c});
    std::copy(a.data(), a.data() + ra * c, out.data());
    std::copy(b.data(), b.data() + rb * c, out.data() + ra * c);

    auto* g = Graph<S>::active();
    if (g) {
        bool ta = g->tracks(a), tb = g->tracks(b);
        if (ta || tb) {
            g->mark(out);
            auto ai = a.impl(), bi = b.impl(), oi = out.impl();
            g->record([ai, bi, oi, ta, tb, ra, rb, c]() {
                if (oi->grad.empty()) return;
                if (ta) {
                    detail::ensure_grad(ai);
                    for (std::size_t i = 0; i < ra * c; ++i) ai->grad[i] += oi->grad[i];
                }
                if (tb) {
                    detail::ensure_grad(bi);
                    for (std::size_t i = 0; i < rb * c; ++i) bi->grad[i] += oi->grad[ra * c + i];
                }
            });
        }
    }
    return out;
}

template <typename S>
Tensor<S> slice_rows(const Tensor<S>& x, std::size_t r0, std::size_t r1) {
    if (x.ndim() != 2 || r0 >= r1 || r1 > x.extent(0)) {
        throw ShapeError("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") invalid for " + shape_str(x.shape()));
    }
    const std::size_t c = x.extent(1), h = r1 - r0;
    Tensor<S> out({h, c});
    std::copy(x.data() + r0 * c, x.data() + r1 * c, out.data());

    auto* g = Graph<S>::active();
    if (g && g->tracks(x)) {
        g->mark(out);
        auto xi = x.impl(), oi = out.impl();
        g->record([xi, oi, r0, h, c]() {
            if (oi->grad.empty()) return;
            detail::ensure_grad(xi);
            for (std::size_t i = 0; i < h * c; ++i) xi->grad[r0 * c + i] += oi->grad[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convolution and pooling
// ---------------------------------------------------------------------------

// Cross-correlation convention. x[Cin x H x W], w[Cout x Cin x kh x kw].
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, std::size_t stride, std::size_t padding) {
    if (x.ndim() != 3 || w.ndim() != 4 || w.extent(1) != x.extent(0)) {
        throw ShapeError("conv2d: input " + shape_str(x.shape()) + " incompatible with kernel " +
                         shape_str(w.shape()));
    }
    if (stride == 0) throw ValueError("conv2d: stride must be >= 1");
    const std::size_t cin = x.extent(0), h = x.extent(1), wd = x.extent(2);
    const std::size_t cout = w.extent(0), kh = w.extent(2), kw = w.extent(3);
    if (kh > h + 2 * padding || kw > wd + 2 * padding) {
        throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                         shape_str(x.shape()));
    }
    const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
    const std::size_t ow = (wd + 2 * padding - kw) / stride + 1;
    Tensor<S> out({cout, oh, ow});
    const S* px = x.data();
    const S* pw = w.data();
    S* po = out.data();

    const long p = static_cast<long>(padding);
    const long st = static_cast<long>(stride);
    auto accumulate = [&](auto* obuf) {
        for (std::size_t co = 0; co < cout; ++co) {
            auto* oplane = obuf + co * oh * ow;
            for (std::size_t ci = 0; ci < cin; ++ci) {
                const S* xplane = px + ci * h * wd;
                for (std::size_t i = 0; i < kh; ++i) {
                    for (std::size_t j = 0; j < kw; ++j) {
                        const S wv = pw[((co * cin + ci) * kh + i) * kw + j];
                        for (std::size_t r = 0; r < oh; ++r) {
                            const long ih = static_cast<long>(r) * st + static_cast<long>(i) - p;
                            if (ih < 0 || ih >= static_cast<long>(h)) continue;
                            const S* xrow = xplane + ih * wd;
                            auto* orow = oplane + r * ow;
                            for (std::size_t cix = 0; cix < ow; ++cix) {
                                const long iw = static_cast<long>(cix) * st + static_cast<long>(j) - p;
                                if (iw < 0 || iw >= static_cast<long>(wd)) continue;
                                orow[cix] += wv * xrow[iw];
                            }
                        }
                    }
                }
            }
        }
    };
    using A = detail::acc_t<S>;
    if constexpr (std::is_same_v<A, S>) {
        accumulate(po);
    } else {
        std::vector<A> buf(cout * oh * ow, A(0));
        accumulate(buf.data());
        for (std::size_t i = 0; i < buf.size(); ++i) po[i] = static_cast<S>(buf[i]);
    }

    auto* g = Graph<S>::active();
    if (g) {
        bool tx = g->tracks(x), tw = g->tracks(w);
        if (tx || tw) {
            g->mark(out);
            auto xi = x.impl(), wi = w.impl(), oi = out.impl();
            g->record([xi, wi, oi, tx, tw, cin, h, wd, cout, kh, kw, oh, ow, p, st]() {
                if (oi->grad.empty()) return;
                if (tx) detail::ensure_grad(xi);
                if (tw) detail::ensure_grad(wi);
                const S* gout = oi->grad.data();
                for (std::size_t co = 0; co < cout; ++co) {
                    const S* gplane = gout + co * oh * ow;
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        const S* xplane = xi->data.data() + ci * h * wd;
                        S* gxplane = tx ? xi->grad.data() + ci * h * wd : nullptr;
                        for (std::size_t i = 0; i < kh; ++i) {
                            for (std::size_t j = 0; j < kw; ++j) {
                                const std::size_t widx = ((co * cin + ci) * kh + i) * kw + j;
                                const S wv = wi->data[widx];
                                S wacc = 0;
                                for (std::size_t r = 0; r < oh; ++r) {
                                    const long ih = static_cast<long>(r) * st + static_cast<long>(i) - p;
                                    if (ih < 0 || ih >= static_cast<long>(h)) continue;
                                    const S* xrow = xplane + ih * wd;
                                    S* gxrow = tx ? gxplane + ih * wd : nullptr;
                                    const S* grow = gplane + r * ow;
                                    for (std::size_t cix = 0; cix < ow; ++cix) {
                                        const long iw = static_cast<long>(cix) * st + static_cast<long>(j) - p;
                                        if (iw < 0 || iw >= static_cast<long>(wd)) continue;
                                        if (tw) wacc += grow[cix] * xrow[iw];
                                        if (tx) gxrow[iw] += grow[cix] * wv;
                                    }
                                }
                                if (tw) wi->grad[widx] += wacc;
                            }
                        }
                    }
                }
            });
        }
    }
    return out;
}

// x[C x H x W] + bias[C] broadcast over spatial positions.
template <typename S>
Tensor<S> add_channel_bias(const Tensor<S>& x, const Tensor<S>& bias) {
    if (x.ndim() != 3 || bias.ndim() != 1 || bias.extent(0) != x.extent(0)) {
        throw ShapeError("add_channel_bias: shapes " + shape_str(x.shape()) + " and " +
                         shape_str(bias.shape()) + " do not conform");
    }
    const std::size_t c = x.extent(0), hw = x.extent(1) * x.extent(2);
    Tensor<S> out(x.shape());
    const S* px = x.data();
    const S* pbv = bias.data();
    S* po = out.data();
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t i = 0; i < hw; ++i) po[ci * hw + i] = px[ci * hw + i] + pbv[ci];

    auto* g = Graph<S>::active();
    if (g) {
        bool tx = g->tracks(x), tb = g->tracks(bias);
        if (tx || tb) {
            g->mark(out);
            auto xi = x.impl(), bi = bias.impl(), oi = out.impl();
            g->record([xi, bi, oi, tx, tb, c, hw]() {
                if (oi->grad.empty()) return;
                if (tx) {
                    detail::ensure_grad(xi);
                    for (std::size_t i = 0; i < c * hw; ++i) xi->grad[i] += oi->grad[i];
                }
                if (tb) {
                    detail::ensure_grad(bi);
                    for (std::size_t ci = 0; ci < c; ++ci)
                        for (std::size_t i = 0; i < hw; ++i) bi->grad[ci] += oi->grad[ci * hw + i];
                }
            });
        }
    }
    return out;
}

// 2x2/stride-2 style spatial max pooling; gradient routes to the first
// argmax in scan order.
template <typename S>
Tensor<S> max_pool2d(const Tensor<S>& x, std::size_t k, std::size_t stride) {
    if (x.ndim() != 3) throw ShapeError("max_pool2d: expected CxHxW, got " + shape_str(x.shape()));
    const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    if (k == 0 || stride == 0 || k > h || k > w) {
        throw ShapeError("max_pool2d: window " + std::to_string(k) + " invalid for " + shape_str(x.shape()));
    }
    const std::size_t oh = (h - k) / stride + 1;
    const std::size_t ow = (w - k) / stride + 1;
    Tensor<S> out({c, oh, ow});
    std::vector<std::size_t> argmax(c * oh * ow);
    const S* px = x.data();
    S* po = out.data();
    for (std::size_t ci = 0; ci < c; ++ci) {
        const S* xplane = px + ci * h * w;
        for (std::size_t r = 0; r < oh; ++r) {
            for (std::size_t q = 0; q < ow; ++q) {
                std::size_t best = (r * stride) * w + q * stride;
                S bv = xplane[best];
                for (std::size_t i = 0; i < k; ++i) {
                    for (std::size_t j = 0; j < k; ++j) {
                        std::size_t idx = (r * stride + i) * w + q * stride + j;
                        if (xplane[idx] > bv) {
                            bv = xplane[idx];
                            best = idx;
                        }
                    }
                }
                po[(ci * oh + r) * ow + q] = bv;
                argmax[(ci * oh + r) * ow + q] = ci * h * w + best;
            }
        }
    }

    auto* g = Graph<S>::active();
    if (g && g->tracks(x)) {
        g->mark(out);
        auto xi = x.impl(), oi = out.impl();
        g->record([xi, oi, argmax]() {
            if (oi->grad.empty()) return;
            detail::ensure_grad(xi);
            for (std::size_t i = 0; i < oi->grad.size(); ++i) xi->grad[argmax[i]] += oi->grad[i];
        });
    }
    return out;
}

// Adaptive average pooling along the token axis: out row i averages input
// rows in [floor(i*L/N), ceil((i+1)*L/N)). Rejects up-sampling (N > L).
template <typename S>
Tensor<S> adaptive_avg_pool_tokens(const Tensor<S>& x, std::size_t n_out) {
    if (x.ndim() != 2) throw ShapeError("adaptive_avg_pool_tokens: expected Lxd, got " + shape_str(x.shape()));
    const std::size_t l = x.extent(0), d = x.extent(1);
    if (n_out < 1 || n_out > l) {
        throw ShapeError("adaptive_avg_pool_tokens: output length " + std::to_string(n_out) +
                         " invalid for input " + shape_str(x.shape()) +
                         " (up-sampling requires a linear projection)");
    }
    Tensor<S> out({n_out, d});
    std::vector<std::size_t> lo(n_out), hi(n_out);
    for (std::size_t i = 0; i < n_out; ++i) {
        lo[i] = (i * l) / n_out;
        hi[i] = ((i + 1) * l + n_out - 1) / n_out;  // ceil
    }
    const S* px = x.data();
    S* po = out.data();
    std::vector<detail::acc_t<S>> acc(d);
    for (std::size_t i = 0; i < n_out; ++i) {
        std::fill(acc.begin(), acc.end(), detail::acc_t<S>(0));
        for (std::size_t r = lo[i]; r < hi[i]; ++r) {
            const S* xr = px + r * d;
            for (std::size_t j = 0; j < d; ++j) acc[j] += xr[j];
        }
        const auto inv = detail::acc_t<S>(1) / static_cast<detail::acc_t<S>>(hi[i] - lo[i]);
        S* orow = po + i * d;
        for (std::size_t j = 0; j < d; ++j) orow[j] = static_cast<S>(acc[j] * inv);
    }

    auto* g = Graph<S>::active();
    if (g && g->tracks(x)) {
        g->mark(out);
        auto xi = x.impl(), oi = out.impl();
        g->record([xi, oi, lo, hi, n_out, d]() {
            if (oi->grad.empty()) return;
            detail::ensure_grad(xi);
            for (std::size_t i = 0; i < n_out; ++i) {
                const S inv = S(1) / static_cast<S>(hi[i] - lo[i]);
                const S* grow = oi->grad.data() + i * d;
                for (std::size_t r = lo[i]; r < hi[i]; ++r) {
                    S* gx = xi->grad.data() + r * d;
                    for (std::size_t j = 0; j < d; ++j) gx[j] += grow[j] * inv;
                }
            }
        });
    }
    return out;
}

// Elementwise max over the token axis: [N x d] -> [d]. Ties route the
// gradient to the first argmax so backward is deterministic.
template <typename S>
Tensor<S> max_pool_tokens(const Tensor<S>& x) {
    if (x.ndim() != 2 || x.extent(0) < 1) {
        throw ShapeError("max_pool_tokens: expected non-empty Nxd, got " + shape_str(x.shape()));
    }
    const std::size_t n = x.extent(0), d = x.extent(1);
    Tensor<S> out({d});
    std::vector<std::size_t> argmax(d, 0);
    const S* px = x.data();
    S* po = out.data();
    for (std::size_t j = 0; j < d; ++j) po[j] = px[j];
    for (std::size_t r = 1; r < n; ++r) {
        const S* xr = px + r * d;
        for (std::size_t j = 0; j < d; ++j) {
            if (xr[j] > po[j]) {
                po[j] = xr[j];
                argmax[j] = r;
            }
        }
    }

    auto* g = Graph<S>::active();
    if (g && g->tracks(x)) {
        g->mark(out);
        auto xi = x.impl(), oi = out.impl();
        g->record([xi, oi, argmax, d]() {
            if (oi->grad.empty()) return;
            detail::ensure_grad(xi);
            for (std::size_t j = 0; j < d; ++j) xi->grad[argmax[j] * d + j] += oi->grad[j];
        });
    }
    return out;
}

// Mean over the token axis: [N x d] -> [d].
template <typename S>
Tensor<S> mean_pool_tokens(const Tensor<S>& x) {
    if (x.ndim() != 2 || x.extent(0) < 1) {
        throw ShapeError("mean_pool_tokens: expected non-empty Nxd, got " + shape_str(x.shape()));
    }
    const std::size_t n = x.extent(0), d = x.extent(1);
    Tensor<S> out({d});
    const S* px = x.data();
    S* po = out.data();
    std::vector<detail::acc_t<S>> acc(d, detail::acc_t<S>(0));
    for (std::size_t r = 0; r < n; ++r) {
        const S* xr = px + r * d;
        for (std::size_t j = 0; j < d; ++j) acc[j] += xr[j];
    }
    const auto inv = detail::acc_t<S>(1) / static_cast<detail::acc_t<S>>(n);
    for (std::size_t j = 0; j < d; ++j) po[j] = static_cast<S>(acc[j] * inv);

    auto* g = Graph<S>::active();
    if (g && g->tracks(x)) {
        g->mark(out);
        auto xi = x.impl(), oi = out.impl();
        const S inv_s = S(1) / static_cast<S>(n);
        g->record([xi, oi, n, d, inv_s]() {
            if (oi->grad.empty()) return;
            detail::ensure_grad(xi);
            for (std::size_t r = 0; r < n; ++r) {
                S* gx = xi->grad.data() + r * d;
                for (std::size_t j = 0; j < d; ++j) gx[j] += oi->grad[j] * inv_s;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions and loss
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
    Tensor<S> out({1});
    detail::acc_t<S> acc = 0;
    const S* px = x.data();
    for (std::size_t i = 0; i < x.numel(); ++i) acc += px[i];
    out.data()[0] = static_cast<S>(acc);

    auto* g = Graph<S>::active();
    if (g && g->tracks(x)) {
        g->mark(out);
        auto xi = x.impl(), oi = out.impl();
        g->record([xi, oi]() {
            if (oi->grad.empty()) return;
            detail::ensure_grad(xi);
            const S gv = oi->grad[0];
            for (std::size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += gv;
        });
    }
    return out;
}

// Numerically stable binary cross-entropy on a single logit:
// loss = log(1 + exp(-(2y-1) * z)). Gradient w.r.t. z is sigmoid(z) - y.
template <typename S>
Tensor<S> bce_with_logits(const Tensor<S>& logit, int y) {
    if (logit.numel() != 1) {
        throw ShapeError("bce_with_logits: logit must be scalar, got " + shape_str(logit.shape()));
    }
    if (y != 0 && y != 1) throw ValueError("bce_with_logits: label must be 0 or 1");
    const double z = static_cast<double>(logit.data()[0]);
    const double t = (y == 1 ? z : -z);
    const double loss = t > 0 ? std::log1p(std::exp(-t)) : -t + std::log1p(std::exp(t));
    Tensor<S> out = Tensor<S>::scalar(static_cast<S>(loss));

    auto* g = Graph<S>::active();
    if (g && g->tracks(logit)) {
        g->mark(out);
        auto li = logit.impl(), oi = out.impl();
        g->record([li, oi, y]() {
            if (oi->grad.empty()) return;
            detail::ensure_grad(li);
            const double z2 = static_cast<double>(li->data[0]);
            const double sig = z2 >= 0 ? 1.0 / (1.0 + std::exp(-z2))
                                       : std::exp(z2) / (1.0 + std::exp(z2));
            li->grad[0] += oi->grad[0] * static_cast<S>(sig - y);
        });
    }
    return out;
}

}  // namespace mmf
