#pragma once

// Differentiable primitives over rank-2 tensors recorded on a Tape.

#include "tljd/errors.hpp"
#include "tljd/tape.hpp"
#include "tljd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace tljd {

namespace kernel {

// C(m x n) += A(m x k) * B(k x n)
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c)
{
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j)
                ci[j] += av * bp[j];
        }
    }
}

// C(m x n) += A(m x k) * B(n x k)^T
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c)
{
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p)
                s += ai[p] * bj[p];
            c[i * n + j] += s;
        }
    }
}

// C(m x n) += A(k x m)^T * B(k x n)
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c)
{
    for (std::size_t p = 0; p < k; ++p) {
        const double* ap = a + p * m;
        const double* bp = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = ap[i];
            double* ci = c + i * n;
            for (std::size_t j = 0; j < n; ++j)
                ci[j] += av * bp[j];
        }
    }
}

} // namespace kernel

namespace detail {

inline void require_same_tape(const Var& a, const Var& b, const char* op)
{
    if (&a.tape() != &b.tape())
        throw StateError(std::string(op) + ": operands live on different tapes");
}

inline bool any_needs(const Var& a)
{
    return a.tape().needs_grad(a.id());
}
inline bool any_needs(const Var& a, const Var& b)
{
    return a.tape().needs_grad(a.id()) || b.tape().needs_grad(b.id());
}
inline bool any_needs(const std::vector<Var>& vs)
{
    for (const auto& v : vs)
        if (v.tape().needs_grad(v.id()))
            return true;
    return false;
}

inline void accumulate(Tensor& dst, const Tensor& src)
{
    auto d = dst.data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i)
        d[i] += s[i];
}

} // namespace detail

inline Var matmul(const Var& a, const Var& b)
{
    detail::require_same_tape(a, b, "matmul");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.cols() != bv.rows())
        throw ShapeError("matmul: shape mismatch " + shape_to_string(av.shape()) + " vs " + shape_to_string(bv.shape()));
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    Tensor out = Tensor::matrix(m, n);
    kernel::gemm_nn(m, n, k, av.data().data(), bv.data().data(), out.data().data());
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().push(std::move(out), detail::any_needs(a, b), [ia, ib, m, n, k](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.needs_grad(ia))
            kernel::gemm_nt(m, k, n, g.data().data(), t.value(ib).data().data(), t.grad(ia).data().data());
        if (t.needs_grad(ib))
            kernel::gemm_tn(k, n, m, t.value(ia).data().data(), g.data().data(), t.grad(ib).data().data());
    });
}

/// a * b^T
inline Var matmul_nt(const Var& a, const Var& b)
{
    detail::require_same_tape(a, b, "matmul_nt");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.cols() != bv.cols())
        throw ShapeError("matmul_nt: shape mismatch " + shape_to_string(av.shape()) + " vs " +
                         shape_to_string(bv.shape()));
    const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
    Tensor out = Tensor::matrix(m, n);
    kernel::gemm_nt(m, n, k, av.data().data(), bv.data().data(), out.data().data());
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().push(std::move(out), detail::any_needs(a, b), [ia, ib, m, n, k](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.needs_grad(ia))
            kernel::gemm_nn(m, k, n, g.data().data(), t.value(ib).data().data(), t.grad(ia).data().data());
        if (t.needs_grad(ib))
            kernel::gemm_tn(n, k, m, g.data().data(), t.value(ia).data().data(), t.grad(ib).data().data());
    });
}

inline Var add(const Var& a, const Var& b)
{
    detail::require_same_tape(a, b, "add");
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    detail::accumulate(out, b.value());
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().push(std::move(out), detail::any_needs(a, b), [ia, ib](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.needs_grad(ia))
            detail::accumulate(t.grad(ia), g);
        if (t.needs_grad(ib))
            detail::accumulate(t.grad(ib), g);
    });
}

inline Var sub(const Var& a, const Var& b)
{
    detail::require_same_tape(a, b, "sub");
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    auto o = out.data();
    auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i)
        o[i] -= bv[i];
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().push(std::move(out), detail::any_needs(a, b), [ia, ib](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.needs_grad(ia))
            detail::accumulate(t.grad(ia), g);
        if (t.needs_grad(ib)) {
            auto d = t.grad(ib).data();
            auto gs = g.data();
            for (std::size_t i = 0; i < d.size(); ++i)
                d[i] -= gs[i];
        }
    });
}

/// Element-wise (Hadamard) product.
inline Var mul(const Var& a, const Var& b)
{
    detail::require_same_tape(a, b, "mul");
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    auto o = out.data();
    auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i)
        o[i] *= bv[i];
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().push(std::move(out), detail::any_needs(a, b), [ia, ib](Tape& t, std::size_t self) {
        auto g = t.grad(self).data();
        if (t.needs_grad(ia)) {
            auto d = t.grad(ia).data();
            auto bv = t.value(ib).data();
            for (std::size_t i = 0; i < d.size(); ++i)
                d[i] += g[i] * bv[i];
        }
        if (t.needs_grad(ib)) {
            auto d = t.grad(ib).data();
            auto av = t.value(ia).data();
            for (std::size_t i = 0; i < d.size(); ++i)
                d[i] += g[i] * av[i];
        }
    });
}

/// a (r x c) + b (1 x c) broadcast over rows.
inline Var add_row_bias(const Var& a, const Var& b)
{
    detail::require_same_tape(a, b, "add_row_bias");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (bv.rows() != 1 || bv.cols() != av.cols())
        throw ShapeError("add_row_bias: shape mismatch " + shape_to_string(av.shape()) + " vs " +
                         shape_to_string(bv.shape()));
    const std::size_t r = av.rows(), c = av.cols();
    Tensor out = av;
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            out(i, j) += bv[j];
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().push(std::move(out), detail::any_needs(a, b), [ia, ib, r, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.needs_grad(ia))
            detail::accumulate(t.grad(ia), g);
        if (t.needs_grad(ib)) {
            Tensor& d = t.grad(ib);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    d[j] += g(i, j);
        }
    });
}

/// a (r x c) + b (r x 1) broadcast over columns.
inline Var add_col_bias(const Var& a, const Var& b)
{
    detail::require_same_tape(a, b, "add_col_bias");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (bv.cols() != 1 || bv.rows() != av.rows())
        throw ShapeError("add_col_bias: shape mismatch " + shape_to_string(av.shape()) + " vs " +
                         shape_to_string(bv.shape()));
    const std::size_t r = av.rows(), c = av.cols();
    Tensor out = av;
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            out(i, j) += bv[i];
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().push(std::move(out), detail::any_needs(a, b), [ia, ib, r, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.needs_grad(ia))
            detail::accumulate(t.grad(ia), g);
        if (t.needs_grad(ib)) {
            Tensor& d = t.grad(ib);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    d[i] += g(i, j);
        }
    });
}

/// out[i, j] = a[i, j] * s[i] for s of shape (r x 1).
inline Var scale_rows(const Var& a, const Var& s)
{
    detail::require_same_tape(a, s, "scale_rows");
    const Tensor& av = a.value();
    const Tensor& sv = s.value();
    if (sv.cols() != 1 || sv.rows() != av.rows())
        throw ShapeError("scale_rows: shape mismatch " + shape_to_string(av.shape()) + " vs " +
                         shape_to_string(sv.shape()));
    const std::size_t r = av.rows(), c = av.cols();
    Tensor out = av;
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            out(i, j) *= sv[i];
    const std::size_t ia = a.id(), is = s.id();
    return a.tape().push(std::move(out), detail::any_needs(a, s), [ia, is, r, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.needs_grad(ia)) {
            Tensor& d = t.grad(ia);
            const Tensor& sv = t.value(is);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    d(i, j) += g(i, j) * sv[i];
        }
        if (t.needs_grad(is)) {
            Tensor& d = t.grad(is);
            const Tensor& av = t.value(ia);
            for (std::size_t i = 0; i < r; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < c; ++j)
                    acc += g(i, j) * av(i, j);
                d[i] += acc;
            }
        }
    });
}

inline Var scale(const Var& a, double factor)
{
    Tensor out = a.value();
    for (double& v : out.data())
        v *= factor;
    const std::size_t ia = a.id();
    return a.tape().push(std::move(out), detail::any_needs(a), [ia, factor](Tape& t, std::size_t self) {
        auto g = t.grad(self).data();
        auto d = t.grad(ia).data();
        for (std::size_t i = 0; i < d.size(); ++i)
            d[i] += factor * g[i];
    });
}

inline Var add_scalar(const Var& a, double value)
{
    Tensor out = a.value();
    for (double& v : out.data())
        v += value;
    const std::size_t ia = a.id();
    return a.tape().push(std::move(out), detail::any_needs(a), [ia](Tape& t, std::size_t self) {
        detail::accumulate(t.grad(ia), t.grad(self));
    });
}

/// max(0, x); the derivative at exactly 0 is taken as 0.
inline Var relu(const Var& a)
{
    const Tensor& av = a.value();
    a.tape().note_relu(av);
    Tensor out = av;
    for (double& v : out.data())
        v = v > 0.0 ? v : 0.0;
    const std::size_t ia = a.id();
    return a.tape().push(std::move(out), detail::any_needs(a), [ia](Tape& t, std::size_t self) {
        auto g = t.grad(self).data();
        auto x = t.value(ia).data();
        auto d = t.grad(ia).data();
        for (std::size_t i = 0; i < d.size(); ++i)
            if (x[i] > 0.0)
                d[i] += g[i];
    });
}

inline Var exp(const Var& a)
{
    Tensor out = a.value();
    for (double& v : out.data())
        v = std::exp(v);
    const std::size_t ia = a.id();
    return a.tape().push(std::move(out), detail::any_needs(a), [ia](Tape& t, std::size_t self) {
        auto g = t.grad(self).data();
        auto y = t.value(self).data();
        auto d = t.grad(ia).data();
        for (std::size_t i = 0; i < d.size(); ++i)
            d[i] += g[i] * y[i];
    });
}

inline Var log(const Var& a)
{
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(out[i] > 0.0))
            throw DomainError("log: non-positive input " + std::to_string(out[i]) + " at flat index " +
                              std::to_string(i));
        out[i] = std::log(out[i]);
    }
    const std::size_t ia = a.id();
    return a.tape().push(std::move(out), detail::any_needs(a), [ia](Tape& t, std::size_t self) {
        auto g = t.grad(self).data();
        auto x = t.value(ia).data();
        auto d = t.grad(ia).data();
        for (std::size_t i = 0; i < d.size(); ++i)
            d[i] += g[i] / x[i];
    });
}

inline Var square(const Var& a)
{
    Tensor out = a.value();
    for (double& v : out.data())
        v = v * v;
    const std::size_t ia = a.id();
    return a.tape().push(std::move(out), detail::any_needs(a), [ia](Tape& t, std::size_t self) {
        auto g = t.grad(self).data();
        auto x = t.value(ia).data();
        auto d = t.grad(ia).data();
        for (std::size_t i = 0; i < d.size(); ++i)
            d[i] += 2.0 * x[i] * g[i];
    });
}

inline Var abs(const Var& a)
{
    Tensor out = a.value();
    for (double& v : out.data())
        v = std::fabs(v);
    const std::size_t ia = a.id();
    return a.tape().push(std::move(out), detail::any_needs(a), [ia](Tape& t, std::size_t self) {
        auto g = t.grad(self).data();
        auto x = t.value(ia).data();
        auto d = t.grad(ia).data();
        for (std::size_t i = 0; i < d.size(); ++i)
            d[i] += x[i] > 0.0 ? g[i] : (x[i] < 0.0 ? -g[i] : 0.0);
    });
}

namespace detail {

// Max-shifted softmax over contiguous groups of `len` elements spaced by `stride`.
inline void softmax_group(const double* x, double* y, std::size_t len, std::size_t stride)
{
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < len; ++i)
        m = std::max(m, x[i * stride]);
    double s = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
        y[i * stride] = std::exp(x[i * stride] - m);
        s += y[i * stride];
    }
    for (std::size_t i = 0; i < len; ++i)
        y[i * stride] /= s;
}

} // namespace detail

/// Softmax along `axis` (1: each row sums to one, 0: each column sums to one).
inline Var softmax(const Var& a, int axis = 1)
{
    if (axis != 0 && axis != 1)
        throw ShapeError("softmax: axis must be 0 or 1, got " + std::to_string(axis));
    const Tensor& av = a.value();
    const std::size_t r = av.rows(), c = av.cols();
    Tensor out(av.shape());
    const double* x = av.data().data();
    double* y = out.data().data();
    if (axis == 1) {
        for (std::size_t i = 0; i < r; ++i)
            detail::softmax_group(x + i * c, y + i * c, c, 1);
    } else {
        for (std::size_t j = 0; j < c; ++j)
            detail::softmax_group(x + j, y + j, r, c);
    }
    const std::size_t ia = a.id();
    return a.tape().push(std::move(out), detail::any_needs(a), [ia, r, c, axis](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor& d = t.grad(ia);
        if (axis == 1) {
            for (std::size_t i = 0; i < r; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j)
                    dot += g(i, j) * y(i, j);
                for (std::size_t j = 0; j < c; ++j)
                    d(i, j) += y(i, j) * (g(i, j) - dot);
            }
        } else {
            for (std::size_t j = 0; j < c; ++j) {
                double dot = 0.0;
                for (std::size_t i = 0; i < r; ++i)
                    dot += g(i, j) * y(i, j);
                for (std::size_t i = 0; i < r; ++i)
                    d(i, j) += y(i, j) * (g(i, j) - dot);
            }
        }
    });
}

/// Row-wise log(sum(exp(x))) computed in max-shifted form; returns (r x 1).
inline Var logsumexp_rows(const Var& a)
{
    const Tensor& av = a.value();
    const std::size_t r = av.rows(), c = av.cols();
    Tensor out = Tensor::matrix(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j)
            m = std::max(m, av(i, j));
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j)
            s += std::exp(av(i, j) - m);
        out[i] = m + std::log(s);
    }
    const std::size_t ia = a.id();
    return a.tape().push(std::move(out), detail::any_needs(a), [ia, r, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        const Tensor& x = t.value(ia);
        Tensor& d = t.grad(ia);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
                d(i, j) += g[i] * std::exp(x(i, j) - y[i]);
    });
}

namespace detail {

inline Var log_weighted_exp_rows(const Var& w, const Var& z, bool normalized)
{
    detail::require_same_tape(w, z, "log_weighted_sum_exp_rows");
    require_same_shape(w.value(), z.value(), "log_weighted_sum_exp_rows");
    const Tensor& wv = w.value();
    const Tensor& zv = z.value();
    const std::size_t r = wv.rows(), c = wv.cols();
    Tensor out = Tensor::matrix(r, 1);
    std::vector<double> shift(r), total(r), weight(r);
    for (std::size_t i = 0; i < r; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j)
            m = std::max(m, zv(i, j));
        double s = 0.0, ws = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            if (wv(i, j) < 0.0)
                throw DomainError("log_weighted_sum_exp_rows: negative weight " + std::to_string(wv(i, j)) +
                                  " in row " + std::to_string(i));
            s += wv(i, j) * std::exp(zv(i, j) - m);
            ws += wv(i, j);
        }
        if (!(s > 0.0))
            throw DomainError("log_weighted_sum_exp_rows: row " + std::to_string(i) + " has no positive term");
        shift[i] = m;
        total[i] = s;
        weight[i] = ws;
        out[i] = normalized ? m + std::log(s / ws) : m + std::log(s);
    }
    const std::size_t iw = w.id(), iz = z.id();
    return w.tape().push(std::move(out), detail::any_needs(w, z),
                         [iw, iz, r, c, normalized, shift = std::move(shift), total = std::move(total),
                          weight = std::move(weight)](Tape& t, std::size_t self) {
                             const Tensor& g = t.grad(self);
                             const Tensor& wv = t.value(iw);
                             const Tensor& zv = t.value(iz);
                             for (std::size_t i = 0; i < r; ++i) {
                                 for (std::size_t j = 0; j < c; ++j) {
                                     const double e = std::exp(zv(i, j) - shift[i]) / total[i];
                                     if (t.needs_grad(iw))
                                         t.grad(iw)(i, j) += g[i] * (normalized ? e - 1.0 / weight[i] : e);
                                     if (t.needs_grad(iz))
                                         t.grad(iz)(i, j) += g[i] * wv(i, j) * e;
                                 }
                             }
                         });
}

} // namespace detail

/// Row-wise log(sum_t w_t * exp(z_t)) for non-negative weights, computed as
/// m + log(sum_t w_t * exp(z_t - m)) with m the row maximum of z. Zero weights
/// simply drop their term. Returns (r x 1).
inline Var log_weighted_sum_exp_rows(const Var& w, const Var& z)
{
    return detail::log_weighted_exp_rows(w, z, false);
}

/// Row-wise log(sum_t w_t * exp(z_t) / sum_t w_t). Rows with equal z give
/// exactly max(z).
inline Var log_weighted_mean_exp_rows(const Var& w, const Var& z)
{
    return detail::log_weighted_exp_rows(w, z, true);
}

/// Per-row layer normalization with population variance:
/// y = gain * (x - mean) / sqrt(var + eps) + bias.
inline Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5)
{
    detail::require_same_tape(x, gain, "layer_norm");
    detail::require_same_tape(x, bias, "layer_norm");
    const Tensor& xv = x.value();
    const std::size_t r = xv.rows(), c = xv.cols();
    if (c < 2)
        throw ShapeError("layer_norm: degenerate normalized axis of length " + std::to_string(c));
    const Tensor& gv = gain.value();
    const Tensor& bv = bias.value();
    if (gv.rows() != 1 || gv.cols() != c || bv.rows() != 1 || bv.cols() != c)
        throw ShapeError("layer_norm: gain/bias shapes " + shape_to_string(gv.shape()) + ", " +
                         shape_to_string(bv.shape()) + " do not match input " + shape_to_string(xv.shape()));
    Tensor xhat = Tensor::matrix(r, c);
    std::vector<double> inv_std(r);
    Tensor out = Tensor::matrix(r, c);
    for (std::size_t i = 0; i < r; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j)
            mean += xv(i, j);
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double dv = xv(i, j) - mean;
            var += dv * dv;
        }
        var /= static_cast<double>(c);
        const double denom = std::sqrt(var + eps);
        if (denom == 0.0)
            throw DomainError("layer_norm: zero variance row " + std::to_string(i) + " with eps=0");
        inv_std[i] = 1.0 / denom;
        for (std::size_t j = 0; j < c; ++j) {
            xhat(i, j) = (xv(i, j) - mean) * inv_std[i];
            out(i, j) = gv[j] * xhat(i, j) + bv[j];
        }
    }
    const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
    const bool needs = detail::any_needs(x) || detail::any_needs(gain, bias);
    return x.tape().push(std::move(out), needs,
                         [ix, ig, ib, r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t,
                                                                                                 std::size_t self) {
                             const Tensor& g = t.grad(self);
                             const Tensor& gv = t.value(ig);
                             if (t.needs_grad(ig)) {
                                 Tensor& dg = t.grad(ig);
                                 for (std::size_t i = 0; i < r; ++i)
                                     for (std::size_t j = 0; j < c; ++j)
                                         dg[j] += g(i, j) * xhat(i, j);
                             }
                             if (t.needs_grad(ib)) {
                                 Tensor& db = t.grad(ib);
                                 for (std::size_t i = 0; i < r; ++i)
                                     for (std::size_t j = 0; j < c; ++j)
                                         db[j] += g(i, j);
                             }
                             if (t.needs_grad(ix)) {
                                 Tensor& dx = t.grad(ix);
                                 const double inv_c = 1.0 / static_cast<double>(c);
                                 for (std::size_t i = 0; i < r; ++i) {
                                     double mean_dh = 0.0, mean_dh_xhat = 0.0;
                                     for (std::size_t j = 0; j < c; ++j) {
                                         const double dh = g(i, j) * gv[j];
                                         mean_dh += dh;
                                         mean_dh_xhat += dh * xhat(i, j);
                                     }
                                     mean_dh *= inv_c;
                                     mean_dh_xhat *= inv_c;
                                     for (std::size_t j = 0; j < c; ++j) {
                                         const double dh = g(i, j) * gv[j];
                                         dx(i, j) += inv_std[i] * (dh - mean_dh - xhat(i, j) * mean_dh_xhat);
                                     }
                                 }
                             }
                         });
}

/// Stacks matrices with equal column counts vertically.
inline Var concat_rows(const std::vector<Var>& parts)
{
    if (parts.empty())
        throw ShapeError("concat_rows: no inputs");
    const std::size_t c = parts.front().cols();
    std::size_t r = 0;
    for (const auto& p : parts) {
        detail::require_same_tape(parts.front(), p, "concat_rows");
        if (p.cols() != c)
            throw ShapeError("concat_rows: shape mismatch " + shape_to_string(parts.front().value().shape()) + " vs " +
                             shape_to_string(p.value().shape()));
        r += p.rows();
    }
    Tensor out = Tensor::matrix(r, c);
    std::vector<std::size_t> ids;
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        const auto src = p.value().data();
        std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
        ids.push_back(p.id());
        offsets.push_back(off);
        off += src.size();
    }
    return parts.front().tape().push(std::move(out), detail::any_needs(parts),
                                     [ids = std::move(ids), offsets = std::move(offsets)](Tape& t, std::size_t self) {
                                         auto g = t.grad(self).data();
                                         for (std::size_t k = 0; k < ids.size(); ++k) {
                                             if (!t.needs_grad(ids[k]))
                                                 continue;
                                             auto d = t.grad(ids[k]).data();
                                             for (std::size_t i = 0; i < d.size(); ++i)
                                                 d[i] += g[offsets[k] + i];
                                         }
                                     });
}

/// Places matrices with equal row counts side by side.
inline Var concat_cols(const std::vector<Var>& parts)
{
    if (parts.empty())
        throw ShapeError("concat_cols: no inputs");
    const std::size_t r = parts.front().rows();
    std::size_t c = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        detail::require_same_tape(parts.front(), p, "concat_cols");
        if (p.rows() != r)
            throw ShapeError("concat_cols: shape mismatch " + shape_to_string(parts.front().value().shape()) + " vs " +
                             shape_to_string(p.value().shape()));
        widths.push_back(p.cols());
        c += p.cols();
    }
    Tensor out = Tensor::matrix(r, c);
    std::vector<std::size_t> ids;
    std::size_t col0 = 0;
    for (const auto& p : parts) {
        const Tensor& pv = p.value();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < pv.cols(); ++j)
                out(i, col0 + j) = pv(i, j);
        ids.push_back(p.id());
        col0 += pv.cols();
    }
    return parts.front().tape().push(
        std::move(out), detail::any_needs(parts),
        [ids = std::move(ids), widths = std::move(widths), r](Tape& t, std::size_t self) {
            const Tensor& g = t.grad(self);
            std::size_t col0 = 0;
            for (std::size_t k = 0; k < ids.size(); ++k) {
                if (t.needs_grad(ids[k])) {
                    Tensor& d = t.grad(ids[k]);
                    for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < widths[k]; ++j)
                            d(i, j) += g(i, col0 + j);
                }
                col0 += widths[k];
            }
        });
}

/// Rows [begin, begin + count).
inline Var slice_rows(const Var& a, std::size_t begin, std::size_t count)
{
    const Tensor& av = a.value();
    if (count == 0 || begin + count > av.rows())
        throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + shape_to_string(av.shape()));
    const std::size_t c = av.cols();
    Tensor out = Tensor::matrix(count, c);
    std::copy_n(av.data().begin() + static_cast<std::ptrdiff_t>(begin * c), count * c, out.data().begin());
    const std::size_t ia = a.id();
    return a.tape().push(std::move(out), detail::any_needs(a), [ia, begin, c](Tape& t, std::size_t self) {
        auto g = t.grad(self).data();
        auto d = t.grad(ia).data();
        for (std::size_t i = 0; i < g.size(); ++i)
            d[begin * c + i] += g[i];
    });
}

/// Columns [begin, begin + count).
inline Var slice_cols(const Var& a, std::size_t begin, std::size_t count)
{
    const Tensor& av = a.value();
    if (count == 0 || begin + count > av.cols())
        throw ShapeError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + shape_to_string(av.shape()));
    const std::size_t r = av.rows();
    Tensor out = Tensor::matrix(r, count);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < count; ++j)
            out(i, j) = av(i, begin + j);
    const std::size_t ia = a.id();
    return a.tape().push(std::move(out), detail::any_needs(a), [ia, begin, r, count](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& d = t.grad(ia);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < count; ++j)
                d(i, begin + j) += g(i, j);
    });
}

/// Selects rows by index (indices may repeat).
inline Var gather_rows(const Var& a, std::vector<std::size_t> rows)
{
    const Tensor& av = a.value();
    if (rows.empty())
        throw ShapeError("gather_rows: empty index list");
    const std::size_t c = av.cols();
    Tensor out = Tensor::matrix(rows.size(), c);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k] >= av.rows())
            throw ShapeError("gather_rows: row " + std::to_string(rows[k]) + " out of range for " +
                             shape_to_string(av.shape()));
        for (std::size_t j = 0; j < c; ++j)
            out(k, j) = av(rows[k], j);
    }
    const std::size_t ia = a.id();
    return a.tape().push(std::move(out), detail::any_needs(a), [ia, c, rows = std::move(rows)](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& d = t.grad(ia);
        for (std::size_t k = 0; k < rows.size(); ++k)
            for (std::size_t j = 0; j < c; ++j)
                d(rows[k], j) += g(k, j);
    });
}

inline Var transpose(const Var& a)
{
    const Tensor& av = a.value();
    const std::size_t r = av.rows(), c = av.cols();
    Tensor out = Tensor::matrix(c, r);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j)
            out(j, i) = av(i, j);
    const std::size_t ia = a.id();
    return a.tape().push(std::move(out), detail::any_needs(a), [ia, r, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor& d = t.grad(ia);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
                d(i, j) += g(j, i);
    });
}

/// Sum of all elements, as a 1 x 1 value.
inline Var sum(const Var& a)
{
    double s = 0.0;
    for (double v : a.value().data())
        s += v;
    const std::size_t ia = a.id();
    return a.tape().push(Tensor::scalar(s), detail::any_needs(a), [ia](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        for (double& d : t.grad(ia).data())
            d += g;
    });
}

inline Var mean(const Var& a)
{
    return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

/// Combines two scalars: a * wa + b * wb.
inline Var lerp_scalars(const Var& a, double wa, const Var& b, double wb)
{
    if (a.value().size() != 1 || b.value().size() != 1)
        throw ShapeError("lerp_scalars: operands must be scalars, got " + shape_to_string(a.value().shape()) + " and " +
                         shape_to_string(b.value().shape()));
    detail::require_same_tape(a, b, "lerp_scalars");
    const double v = wa * a.value()[0] + wb * b.value()[0];
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().push(Tensor::scalar(v), detail::any_needs(a, b), [ia, ib, wa, wb](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        if (t.needs_grad(ia))
            t.grad(ia)[0] += wa * g;
        if (t.needs_grad(ib))
            t.grad(ib)[0] += wb * g;
    });
}

} // namespace tljd
