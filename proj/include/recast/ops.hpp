#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "recast/tape.hpp"

namespace recast {
namespace detail {

template <class Real>
using EMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using CMap = Eigen::Map<const EMat<Real>>;
template <class Real>
using MMap = Eigen::Map<EMat<Real>>;

template <class Real>
void acc(std::vector<Real>& dst, const std::vector<Real>& src) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

using Data = void;  // marker for readability in comments

template <class Real>
std::shared_ptr<std::vector<Real>> alloc(int64_t n) {
    return std::make_shared<std::vector<Real>>(n);
}

// Finalizes an op: finiteness check, tape attachment, record registration.
template <class Real>
Grid<Real> make_out(const char* name, Shape shape, std::shared_ptr<std::vector<Real>> data, Tape<Real>* tp,
                    std::function<void(Tape<Real>&, const std::vector<Real>&)> bw) {
    check_finite(*data, name);
    Grid<Real> out(std::move(shape), std::move(data));
    if (tp) {
        out.tape = tp;
        out.node = tp->add_node(out.size());
        tp->add_record(out.node, std::move(bw));
    }
    return out;
}

// (outer, axis_len, inner) decomposition for strided axis iteration
inline void axis_split(const Shape& s, int axis, int64_t& outer, int64_t& n, int64_t& inner) {
    if (axis < 0 || axis >= static_cast<int>(s.size())) throw ShapeError("invalid axis");
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    n = s[axis];
    for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) inner *= s[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <class Real>
Grid<Real> add(const Grid<Real>& a, const Grid<Real>& b) {
    check_same_shape(a.shape, b.shape, "add");
    auto out = detail::alloc<Real>(a.size());
    const auto &av = a.values(), &bv = b.values();
    for (int64_t i = 0; i < a.size(); ++i) (*out)[i] = av[i] + bv[i];
    auto* tp = tape_of<Real>({&a, &b});
    int an = a.attached() ? a.node : -1, bn = b.attached() ? b.node : -1;
    return detail::make_out<Real>("add", a.shape, out, tp, [an, bn](Tape<Real>& t, const std::vector<Real>& g) {
        if (an >= 0) detail::acc(t.grad_buf(an), g);
        if (bn >= 0) detail::acc(t.grad_buf(bn), g);
    });
}

template <class Real>
Grid<Real> sub(const Grid<Real>& a, const Grid<Real>& b) {
    check_same_shape(a.shape, b.shape, "sub");
    auto out = detail::alloc<Real>(a.size());
    const auto &av = a.values(), &bv = b.values();
    for (int64_t i = 0; i < a.size(); ++i) (*out)[i] = av[i] - bv[i];
    auto* tp = tape_of<Real>({&a, &b});
    int an = a.attached() ? a.node : -1, bn = b.attached() ? b.node : -1;
    return detail::make_out<Real>("sub", a.shape, out, tp, [an, bn](Tape<Real>& t, const std::vector<Real>& g) {
        if (an >= 0) detail::acc(t.grad_buf(an), g);
        if (bn >= 0) {
            auto& dst = t.grad_buf(bn);
            for (size_t i = 0; i < dst.size(); ++i) dst[i] -= g[i];
        }
    });
}

template <class Real>
Grid<Real> mul(const Grid<Real>& a, const Grid<Real>& b) {
    check_same_shape(a.shape, b.shape, "mul");
    auto out = detail::alloc<Real>(a.size());
    const auto &av = a.values(), &bv = b.values();
    for (int64_t i = 0; i < a.size(); ++i) (*out)[i] = av[i] * bv[i];
    auto* tp = tape_of<Real>({&a, &b});
    int an = a.attached() ? a.node : -1, bn = b.attached() ? b.node : -1;
    return detail::make_out<Real>("mul", a.shape, out, tp,
                                  [an, bn, ad = a.data, bd = b.data](Tape<Real>& t, const std::vector<Real>& g) {
                                      if (an >= 0) {
                                          auto& dst = t.grad_buf(an);
                                          for (size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * (*bd)[i];
                                      }
                                      if (bn >= 0) {
                                          auto& dst = t.grad_buf(bn);
                                          for (size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * (*ad)[i];
                                      }
                                  });
}

template <class Real>
Grid<Real> div(const Grid<Real>& a, const Grid<Real>& b) {
    check_same_shape(a.shape, b.shape, "div");
    auto out = detail::alloc<Real>(a.size());
    const auto &av = a.values(), &bv = b.values();
    for (int64_t i = 0; i < a.size(); ++i) (*out)[i] = av[i] / bv[i];
    auto* tp = tape_of<Real>({&a, &b});
    int an = a.attached() ? a.node : -1, bn = b.attached() ? b.node : -1;
    return detail::make_out<Real>(
        "div", a.shape, out, tp,
        [an, bn, ad = a.data, bd = b.data, od = std::shared_ptr<const std::vector<Real>>(out)](
            Tape<Real>& t, const std::vector<Real>& g) {
            if (an >= 0) {
                auto& dst = t.grad_buf(an);
                for (size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] / (*bd)[i];
            }
            if (bn >= 0) {
                auto& dst = t.grad_buf(bn);
                for (size_t i = 0; i < dst.size(); ++i) dst[i] -= g[i] * (*od)[i] / (*bd)[i];
            }
        });
}

template <class Real>
Grid<Real> add_scalar(const Grid<Real>& a, Real c) {
    auto out = detail::alloc<Real>(a.size());
    const auto& av = a.values();
    for (int64_t i = 0; i < a.size(); ++i) (*out)[i] = av[i] + c;
    auto* tp = tape_of<Real>({&a});
    int an = a.attached() ? a.node : -1;
    return detail::make_out<Real>("add_scalar", a.shape, out, tp, [an](Tape<Real>& t, const std::vector<Real>& g) {
        if (an >= 0) detail::acc(t.grad_buf(an), g);
    });
}

template <class Real>
Grid<Real> mul_scalar(const Grid<Real>& a, Real c) {
    auto out = detail::alloc<Real>(a.size());
    const auto& av = a.values();
    for (int64_t i = 0; i < a.size(); ++i) (*out)[i] = av[i] * c;
    auto* tp = tape_of<Real>({&a});
    int an = a.attached() ? a.node : -1;
    return detail::make_out<Real>("mul_scalar", a.shape, out, tp, [an, c](Tape<Real>& t, const std::vector<Real>& g) {
        if (an >= 0) {
            auto& dst = t.grad_buf(an);
            for (size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * c;
        }
    });
}

template <class Real>
Grid<Real> gelu(const Grid<Real>& a) {
    // tanh approximation; smooth everywhere, which the gradient checker needs
    constexpr double k0 = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double k1 = 0.044715;
    auto out = detail::alloc<Real>(a.size());
    const auto& av = a.values();
    for (int64_t i = 0; i < a.size(); ++i) {
        double x = av[i];
        (*out)[i] = static_cast<Real>(0.5 * x * (1.0 + std::tanh(k0 * (x + k1 * x * x * x))));
    }
    auto* tp = tape_of<Real>({&a});
    int an = a.attached() ? a.node : -1;
    return detail::make_out<Real>("gelu", a.shape, out, tp,
                                  [an, ad = a.data](Tape<Real>& t, const std::vector<Real>& g) {
                                      if (an < 0) return;
                                      auto& dst = t.grad_buf(an);
                                      for (size_t i = 0; i < dst.size(); ++i) {
                                          double x = (*ad)[i];
                                          double u = k0 * (x + k1 * x * x * x);
                                          double th = std::tanh(u);
                                          double d = 0.5 * (1.0 + th) +
                                                     0.5 * x * (1.0 - th * th) * k0 * (1.0 + 3.0 * k1 * x * x);
                                          dst[i] += g[i] * static_cast<Real>(d);
                                      }
                                  });
}

template <class Real>
Grid<Real> sqrt_g(const Grid<Real>& a) {
    auto out = detail::alloc<Real>(a.size());
    const auto& av = a.values();
    for (int64_t i = 0; i < a.size(); ++i) (*out)[i] = std::sqrt(av[i]);
    auto* tp = tape_of<Real>({&a});
    int an = a.attached() ? a.node : -1;
    return detail::make_out<Real>(
        "sqrt", a.shape, out, tp,
        [an, od = std::shared_ptr<const std::vector<Real>>(out)](Tape<Real>& t, const std::vector<Real>& g) {
            if (an < 0) return;
            auto& dst = t.grad_buf(an);
            for (size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] / (Real(2) * (*od)[i]);
        });
}

// ---------------------------------------------------------------------------
// row-broadcast ops: x is [..., d], v is [d]
// ---------------------------------------------------------------------------

template <class Real>
Grid<Real> add_rowwise(const Grid<Real>& x, const Grid<Real>& v) {
    if (x.shape.empty() || v.shape.size() != 1 || x.shape.back() != v.shape[0])
        throw ShapeError("add_rowwise: last axis of x must match v");
    int64_t d = v.shape[0], rows = x.size() / d;
    auto out = detail::alloc<Real>(x.size());
    const auto &xv = x.values(), &vv = v.values();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j) (*out)[r * d + j] = xv[r * d + j] + vv[j];
    auto* tp = tape_of<Real>({&x, &v});
    int xn = x.attached() ? x.node : -1, vn = v.attached() ? v.node : -1;
    return detail::make_out<Real>("add_rowwise", x.shape, out, tp,
                                  [xn, vn, rows, d](Tape<Real>& t, const std::vector<Real>& g) {
                                      if (xn >= 0) detail::acc(t.grad_buf(xn), g);
                                      if (vn >= 0) {
                                          auto& dst = t.grad_buf(vn);
                                          for (int64_t r = 0; r < rows; ++r)
                                              for (int64_t j = 0; j < d; ++j) dst[j] += g[r * d + j];
                                      }
                                  });
}

template <class Real>
Grid<Real> mul_rowwise(const Grid<Real>& x, const Grid<Real>& v) {
    if (x.shape.empty() || v.shape.size() != 1 || x.shape.back() != v.shape[0])
        throw ShapeError("mul_rowwise: last axis of x must match v");
    int64_t d = v.shape[0], rows = x.size() / d;
    auto out = detail::alloc<Real>(x.size());
    const auto &xv = x.values(), &vv = v.values();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j) (*out)[r * d + j] = xv[r * d + j] * vv[j];
    auto* tp = tape_of<Real>({&x, &v});
    int xn = x.attached() ? x.node : -1, vn = v.attached() ? v.node : -1;
    return detail::make_out<Real>("mul_rowwise", x.shape, out, tp,
                                  [xn, vn, rows, d, xd = x.data, vd = v.data](Tape<Real>& t,
                                                                              const std::vector<Real>& g) {
                                      if (xn >= 0) {
                                          auto& dst = t.grad_buf(xn);
                                          for (int64_t r = 0; r < rows; ++r)
                                              for (int64_t j = 0; j < d; ++j) dst[r * d + j] += g[r * d + j] * (*vd)[j];
                                      }
                                      if (vn >= 0) {
                                          auto& dst = t.grad_buf(vn);
                                          for (int64_t r = 0; r < rows; ++r)
                                              for (int64_t j = 0; j < d; ++j) dst[j] += g[r * d + j] * (*xd)[r * d + j];
                                      }
                                  });
}

// ---------------------------------------------------------------------------
// matmul over last two axes, batched over identical leading axes;
// a 2-D rhs/lhs is shared across the batch
// ---------------------------------------------------------------------------

namespace detail {

struct MatmulDims {
    int64_t batch, m, k, n;
    bool b_shared;
};

inline MatmulDims matmul_dims(const Shape& a, const Shape& b, bool b_transposed) {
    if (a.size() < 2 || b.size() < 2) throw ShapeError("matmul: operands must have >= 2 axes");
    int64_t m = a[a.size() - 2], ka = a[a.size() - 1];
    int64_t kb = b_transposed ? b[b.size() - 1] : b[b.size() - 2];
    int64_t n = b_transposed ? b[b.size() - 2] : b[b.size() - 1];
    if (ka != kb)
        throw ShapeError("matmul: inner dimensions disagree " + shape_str(a) + " x " + shape_str(b));
    int64_t batch = 1;
    for (size_t i = 0; i + 2 < a.size(); ++i) batch *= a[i];
    bool b_shared = (b.size() == 2) && (a.size() > 2);
    if (!b_shared && a.size() != b.size())
        throw ShapeError("matmul: leading axes disagree " + shape_str(a) + " x " + shape_str(b));
    if (!b_shared)
        for (size_t i = 0; i + 2 < a.size(); ++i)
            if (a[i] != b[i]) throw ShapeError("matmul: leading axes disagree");
    return {batch, m, ka, n, b_shared};
}

}  // namespace detail

template <class Real>
Grid<Real> matmul(const Grid<Real>& a, const Grid<Real>& b) {
    auto dm = detail::matmul_dims(a.shape, b.shape, false);
    Shape os(a.shape.begin(), a.shape.end() - 1);
    os.push_back(static_cast<int>(dm.n));
    auto out = detail::alloc<Real>(numel(os));
    const Real* ap = a.values().data();
    const Real* bp = b.values().data();
    Real* op = out->data();
    for (int64_t l = 0; l < dm.batch; ++l) {
        detail::CMap<Real> A(ap + l * dm.m * dm.k, dm.m, dm.k);
        detail::CMap<Real> B(bp + (dm.b_shared ? 0 : l * dm.k * dm.n), dm.k, dm.n);
        detail::MMap<Real> C(op + l * dm.m * dm.n, dm.m, dm.n);
        C.noalias() = A * B;
    }
    auto* tp = tape_of<Real>({&a, &b});
    int an = a.attached() ? a.node : -1, bn = b.attached() ? b.node : -1;
    return detail::make_out<Real>(
        "matmul", os, out, tp,
        [an, bn, dm, ad = a.data, bd = b.data](Tape<Real>& t, const std::vector<Real>& g) {
            const Real* gp = g.data();
            if (an >= 0) {
                auto& da = t.grad_buf(an);
                for (int64_t l = 0; l < dm.batch; ++l) {
                    detail::CMap<Real> G(gp + l * dm.m * dm.n, dm.m, dm.n);
                    detail::CMap<Real> B(bd->data() + (dm.b_shared ? 0 : l * dm.k * dm.n), dm.k, dm.n);
                    detail::MMap<Real> dA(da.data() + l * dm.m * dm.k, dm.m, dm.k);
                    dA.noalias() += G * B.transpose();
                }
            }
            if (bn >= 0) {
                auto& db = t.grad_buf(bn);
                for (int64_t l = 0; l < dm.batch; ++l) {
                    detail::CMap<Real> G(gp + l * dm.m * dm.n, dm.m, dm.n);
                    detail::CMap<Real> A(ad->data() + l * dm.m * dm.k, dm.m, dm.k);
                    detail::MMap<Real> dB(db.data() + (dm.b_shared ? 0 : l * dm.k * dm.n), dm.k, dm.n);
                    dB.noalias() += A.transpose() * G;
                }
            }
        });
}

// a x transpose(b) over the last two axes: a is [..., m, k], b is [..., n, k]
template <class Real>
Grid<Real> matmul_bt(const Grid<Real>& a, const Grid<Real>& b) {
    auto dm = detail::matmul_dims(a.shape, b.shape, true);
    Shape os(a.shape.begin(), a.shape.end() - 1);
    os.push_back(static_cast<int>(dm.n));
    auto out = detail::alloc<Real>(numel(os));
    const Real* ap = a.values().data();
    const Real* bp = b.values().data();
    Real* op = out->data();
    for (int64_t l = 0; l < dm.batch; ++l) {
        detail::CMap<Real> A(ap + l * dm.m * dm.k, dm.m, dm.k);
        detail::CMap<Real> B(bp + (dm.b_shared ? 0 : l * dm.n * dm.k), dm.n, dm.k);
        detail::MMap<Real> C(op + l * dm.m * dm.n, dm.m, dm.n);
        C.noalias() = A * B.transpose();
    }
    auto* tp = tape_of<Real>({&a, &b});
    int an = a.attached() ? a.node : -1, bn = b.attached() ? b.node : -1;
    return detail::make_out<Real>(
        "matmul_bt", os, out, tp,
        [an, bn, dm, ad = a.data, bd = b.data](Tape<Real>& t, const std::vector<Real>& g) {
            const Real* gp = g.data();
            if (an >= 0) {
                auto& da = t.grad_buf(an);
                for (int64_t l = 0; l < dm.batch; ++l) {
                    detail::CMap<Real> G(gp + l * dm.m * dm.n, dm.m, dm.n);
                    detail::CMap<Real> B(bd->data() + (dm.b_shared ? 0 : l * dm.n * dm.k), dm.n, dm.k);
                    detail::MMap<Real> dA(da.data() + l * dm.m * dm.k, dm.m, dm.k);
                    dA.noalias() += G * B;
                }
            }
            if (bn >= 0) {
                auto& db = t.grad_buf(bn);
                for (int64_t l = 0; l < dm.batch; ++l) {
                    detail::CMap<Real> G(gp + l * dm.m * dm.n, dm.m, dm.n);
                    detail::CMap<Real> A(ad->data() + l * dm.m * dm.k, dm.m, dm.k);
                    detail::MMap<Real> dB(db.data() + (dm.b_shared ? 0 : l * dm.n * dm.k), dm.n, dm.k);
                    dB.noalias() += G.transpose() * A;
                }
            }
        });
}

// ---------------------------------------------------------------------------
// layout ops
// ---------------------------------------------------------------------------

namespace detail {

template <class Real>
void permute_values(const Real* in, const Shape& shape, const std::vector<int>& perm, Real* out) {
    int nd = static_cast<int>(shape.size());
    std::vector<int64_t> in_strides(nd, 1);
    for (int i = nd - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * shape[i + 1];
    Shape oshape(nd);
    for (int i = 0; i < nd; ++i) oshape[i] = shape[perm[i]];
    std::vector<int64_t> map_stride(nd);  // stride in input per output axis
    for (int i = 0; i < nd; ++i) map_stride[i] = in_strides[perm[i]];
    int64_t total = numel(shape);
    std::vector<int64_t> coord(nd, 0);
    int64_t in_idx = 0;
    for (int64_t o = 0; o < total; ++o) {
        out[o] = in[in_idx];
        for (int ax = nd - 1; ax >= 0; --ax) {
            in_idx += map_stride[ax];
            if (++coord[ax] < oshape[ax]) break;
            in_idx -= map_stride[ax] * oshape[ax];
            coord[ax] = 0;
        }
    }
}

}  // namespace detail

template <class Real>
Grid<Real> permute(const Grid<Real>& x, const std::vector<int>& perm) {
    int nd = static_cast<int>(x.shape.size());
    if (static_cast<int>(perm.size()) != nd) throw ShapeError("permute: axis count mismatch");
    Shape os(nd);
    for (int i = 0; i < nd; ++i) os[i] = x.shape[perm[i]];
    auto out = detail::alloc<Real>(x.size());
    detail::permute_values(x.values().data(), x.shape, perm, out->data());
    auto* tp = tape_of<Real>({&x});
    int xn = x.attached() ? x.node : -1;
    std::vector<int> inv(nd);
    for (int i = 0; i < nd; ++i) inv[perm[i]] = i;
    return detail::make_out<Real>("permute", os, out, tp,
                                  [xn, os, inv](Tape<Real>& t, const std::vector<Real>& g) {
                                      if (xn < 0) return;
                                      std::vector<Real> gx(g.size());
                                      detail::permute_values(g.data(), os, inv, gx.data());
                                      detail::acc(t.grad_buf(xn), gx);
                                  });
}

template <class Real>
Grid<Real> reshape(const Grid<Real>& x, Shape s) {
    if (numel(s) != x.size()) throw ShapeError("reshape: element count mismatch");
    Grid<Real> out(std::move(s), x.data);
    auto* tp = tape_of<Real>({&x});
    if (tp) {
        out.tape = tp;
        out.node = tp->add_node(out.size());
        int xn = x.node;
        tp->add_record(out.node, [xn](Tape<Real>& t, const std::vector<Real>& g) {
            detail::acc(t.grad_buf(xn), g);
        });
    }
    return out;
}

template <class Real>
Grid<Real> slice(const Grid<Real>& x, int axis, int64_t start, int64_t len) {
    int64_t outer, n, inner;
    detail::axis_split(x.shape, axis, outer, n, inner);
    if (start < 0 || len < 0 || start + len > n) throw ShapeError("slice: range out of bounds");
    Shape os = x.shape;
    os[axis] = static_cast<int>(len);
    auto out = detail::alloc<Real>(outer * len * inner);
    const auto& xv = x.values();
    for (int64_t o = 0; o < outer; ++o)
        std::copy_n(xv.data() + (o * n + start) * inner, len * inner, out->data() + o * len * inner);
    auto* tp = tape_of<Real>({&x});
    int xn = x.attached() ? x.node : -1;
    return detail::make_out<Real>("slice", os, out, tp,
                                  [xn, outer, n, inner, start, len](Tape<Real>& t, const std::vector<Real>& g) {
                                      if (xn < 0) return;
                                      auto& dst = t.grad_buf(xn);
                                      for (int64_t o = 0; o < outer; ++o) {
                                          const Real* gp = g.data() + o * len * inner;
                                          Real* dp = dst.data() + (o * n + start) * inner;
                                          for (int64_t i = 0; i < len * inner; ++i) dp[i] += gp[i];
                                      }
                                  });
}

template <class Real>
Grid<Real> concat(const std::vector<Grid<Real>>& xs, int axis) {
    if (xs.empty()) throw ShapeError("concat: no operands");
    Shape os = xs[0].shape;
    int64_t total_axis = 0;
    for (const auto& x : xs) {
        if (static_cast<int>(x.shape.size()) != static_cast<int>(os.size()))
            throw ShapeError("concat: rank mismatch");
        for (int i = 0; i < static_cast<int>(os.size()); ++i)
            if (i != axis && x.shape[i] != os[i]) throw ShapeError("concat: non-axis dims differ");
        total_axis += x.shape[axis];
    }
    os[axis] = static_cast<int>(total_axis);
    int64_t outer, n, inner;
    detail::axis_split(os, axis, outer, n, inner);
    auto out = detail::alloc<Real>(numel(os));
    int64_t off = 0;
    for (const auto& x : xs) {
        int64_t xa = x.shape[axis];
        const auto& xv = x.values();
        for (int64_t o = 0; o < outer; ++o)
            std::copy_n(xv.data() + o * xa * inner, xa * inner, out->data() + (o * n + off) * inner);
        off += xa;
    }
    Tape<Real>* tp = nullptr;
    for (const auto& x : xs)
        if (x.attached()) {
            if (tp && x.tape != tp) throw ShapeError("concat: operands belong to different tapes");
            tp = x.tape;
        }
    struct Part {
        int node;
        int64_t offset, axis_len;
    };
    std::vector<Part> parts;
    int64_t o2 = 0;
    for (const auto& x : xs) {
        parts.push_back({x.attached() ? x.node : -1, o2, static_cast<int64_t>(x.shape[axis])});
        o2 += x.shape[axis];
    }
    return detail::make_out<Real>("concat", os, out, tp,
                                  [parts, outer, n, inner](Tape<Real>& t, const std::vector<Real>& g) {
                                      for (const auto& p : parts) {
                                          if (p.node < 0) continue;
                                          auto& dst = t.grad_buf(p.node);
                                          for (int64_t o = 0; o < outer; ++o) {
                                              const Real* gp = g.data() + (o * n + p.offset) * inner;
                                              Real* dp = dst.data() + o * p.axis_len * inner;
                                              for (int64_t i = 0; i < p.axis_len * inner; ++i) dp[i] += gp[i];
                                          }
                                      }
                                  });
}

// ---------------------------------------------------------------------------
// normalization / reductions
// ---------------------------------------------------------------------------

template <class Real>
Grid<Real> softmax(const Grid<Real>& x, int axis) {
    int64_t outer, n, inner;
    detail::axis_split(x.shape, axis, outer, n, inner);
    auto out = detail::alloc<Real>(x.size());
    const auto& xv = x.values();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
            const Real* src = xv.data() + o * n * inner + i;
            Real* dst = out->data() + o * n * inner + i;
            Real mx = src[0];
            for (int64_t j = 1; j < n; ++j) mx = std::max(mx, src[j * inner]);
            Real sum = Real(0);
            for (int64_t j = 0; j < n; ++j) {
                Real e = std::exp(src[j * inner] - mx);
                dst[j * inner] = e;
                sum += e;
            }
            Real invsum = Real(1) / sum;
            for (int64_t j = 0; j < n; ++j) dst[j * inner] *= invsum;
        }
    auto* tp = tape_of<Real>({&x});
    int xn = x.attached() ? x.node : -1;
    return detail::make_out<Real>(
        "softmax", x.shape, out, tp,
        [xn, outer, n, inner, od = std::shared_ptr<const std::vector<Real>>(out)](Tape<Real>& t,
                                                                                  const std::vector<Real>& g) {
            if (xn < 0) return;
            auto& dst = t.grad_buf(xn);
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < inner; ++i) {
                    const Real* y = od->data() + o * n * inner + i;
                    const Real* gp = g.data() + o * n * inner + i;
                    Real dot = Real(0);
                    for (int64_t j = 0; j < n; ++j) dot += gp[j * inner] * y[j * inner];
                    Real* dp = dst.data() + o * n * inner + i;
                    for (int64_t j = 0; j < n; ++j) dp[j * inner] += (gp[j * inner] - dot) * y[j * inner];
                }
        });
}

// normalizes the last axis to zero mean / unit variance (no affine part;
// gain and shift are applied by the caller where needed)
template <class Real>
Grid<Real> layer_norm(const Grid<Real>& x, Real eps) {
    if (x.shape.empty()) throw ShapeError("layer_norm: rank-0 input");
    int64_t d = x.shape.back(), rows = x.size() / d;
    auto out = detail::alloc<Real>(x.size());
    auto rstd = std::make_shared<std::vector<Real>>(rows);
    const auto& xv = x.values();
    for (int64_t r = 0; r < rows; ++r) {
        const Real* src = xv.data() + r * d;
        Real mean = Real(0);
        for (int64_t j = 0; j < d; ++j) mean += src[j];
        mean /= static_cast<Real>(d);
        Real var = Real(0);
        for (int64_t j = 0; j < d; ++j) {
            Real c = src[j] - mean;
            var += c * c;
        }
        var /= static_cast<Real>(d);
        Real rs = Real(1) / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        Real* dst = out->data() + r * d;
        for (int64_t j = 0; j < d; ++j) dst[j] = (src[j] - mean) * rs;
    }
    auto* tp = tape_of<Real>({&x});
    int xn = x.attached() ? x.node : -1;
    return detail::make_out<Real>(
        "layer_norm", x.shape, out, tp,
        [xn, rows, d, rstd, od = std::shared_ptr<const std::vector<Real>>(out)](Tape<Real>& t,
                                                                                const std::vector<Real>& g) {
            if (xn < 0) return;
            auto& dst = t.grad_buf(xn);
            for (int64_t r = 0; r < rows; ++r) {
                const Real* y = od->data() + r * d;
                const Real* gp = g.data() + r * d;
                Real mg = Real(0), mgy = Real(0);
                for (int64_t j = 0; j < d; ++j) {
                    mg += gp[j];
                    mgy += gp[j] * y[j];
                }
                mg /= static_cast<Real>(d);
                mgy /= static_cast<Real>(d);
                Real rs = (*rstd)[r];
                Real* dp = dst.data() + r * d;
                for (int64_t j = 0; j < d; ++j) dp[j] += rs * (gp[j] - mg - y[j] * mgy);
            }
        });
}

template <class Real>
Grid<Real> sum_all(const Grid<Real>& x) {
    Real s = Real(0);
    for (Real v : x.values()) s += v;
    auto out = detail::alloc<Real>(1);
    (*out)[0] = s;
    auto* tp = tape_of<Real>({&x});
    int xn = x.attached() ? x.node : -1;
    return detail::make_out<Real>("sum_all", {1}, out, tp, [xn](Tape<Real>& t, const std::vector<Real>& g) {
        if (xn < 0) return;
        auto& dst = t.grad_buf(xn);
        for (auto& v : dst) v += g[0];
    });
}

template <class Real>
Grid<Real> mean_all(const Grid<Real>& x) {
    Real s = Real(0);
    for (Real v : x.values()) s += v;
    Real inv = Real(1) / static_cast<Real>(x.size());
    auto out = detail::alloc<Real>(1);
    (*out)[0] = s * inv;
    auto* tp = tape_of<Real>({&x});
    int xn = x.attached() ? x.node : -1;
    return detail::make_out<Real>("mean_all", {1}, out, tp, [xn, inv](Tape<Real>& t, const std::vector<Real>& g) {
        if (xn < 0) return;
        auto& dst = t.grad_buf(xn);
        for (auto& v : dst) v += g[0] * inv;
    });
}

// ---------------------------------------------------------------------------
// specialized ops
// ---------------------------------------------------------------------------

// row lookup into an embedding table E [R, d] by integer ids
template <class Real>
Grid<Real> embed_rows(const Grid<Real>& table, const std::vector<int>& ids) {
    if (table.shape.size() != 2) throw ShapeError("embed_rows: table must be 2-D");
    int64_t R = table.shape[0], d = table.shape[1];
    for (int id : ids)
        if (id < 0 || id >= R) throw ShapeError("embed_rows: id out of range");
    int64_t T = static_cast<int64_t>(ids.size());
    auto out = detail::alloc<Real>(T * d);
    const auto& tv = table.values();
    for (int64_t i = 0; i < T; ++i) std::copy_n(tv.data() + ids[i] * d, d, out->data() + i * d);
    auto* tp = tape_of<Real>({&table});
    int tn = table.attached() ? table.node : -1;
    return detail::make_out<Real>("embed_rows", {static_cast<int>(T), static_cast<int>(d)}, out, tp,
                                  [tn, ids, d](Tape<Real>& t, const std::vector<Real>& g) {
                                      if (tn < 0) return;
                                      auto& dst = t.grad_buf(tn);
                                      for (size_t i = 0; i < ids.size(); ++i)
                                          for (int64_t j = 0; j < d; ++j) dst[ids[i] * d + j] += g[i * d + j];
                                  });
}

// Rotary rotation of adjacent feature pairs. x is [heads, T, D]; cos/sin are
// [T, D/2] tables owned by the caller (constants). Rotation is orthogonal, so
// the backward pass is the transposed rotation.
template <class Real>
Grid<Real> rope_apply(const Grid<Real>& x, std::shared_ptr<const std::vector<Real>> cs,
                      std::shared_ptr<const std::vector<Real>> sn) {
    if (x.shape.size() != 3) throw ShapeError("rope_apply: expected [heads, T, D]");
    int64_t H = x.shape[0], T = x.shape[1], D = x.shape[2];
    if (D % 2 != 0) throw ShapeError("rope_apply: feature dim must be even");
    int64_t P = D / 2;
    if (static_cast<int64_t>(cs->size()) != T * P || static_cast<int64_t>(sn->size()) != T * P)
        throw ShapeError("rope_apply: table size mismatch");
    auto out = detail::alloc<Real>(x.size());
    const auto& xv = x.values();
    for (int64_t h = 0; h < H; ++h)
        for (int64_t t = 0; t < T; ++t) {
            const Real* src = xv.data() + (h * T + t) * D;
            Real* dst = out->data() + (h * T + t) * D;
            const Real* c = cs->data() + t * P;
            const Real* s = sn->data() + t * P;
            for (int64_t j = 0; j < P; ++j) {
                Real x0 = src[2 * j], x1 = src[2 * j + 1];
                dst[2 * j] = x0 * c[j] - x1 * s[j];
                dst[2 * j + 1] = x0 * s[j] + x1 * c[j];
            }
        }
    auto* tp = tape_of<Real>({&x});
    int xn = x.attached() ? x.node : -1;
    return detail::make_out<Real>("rope_apply", x.shape, out, tp,
                                  [xn, H, T, D, P, cs, sn](Tape<Real>& t, const std::vector<Real>& g) {
                                      if (xn < 0) return;
                                      auto& dst = t.grad_buf(xn);
                                      for (int64_t h = 0; h < H; ++h)
                                          for (int64_t tt = 0; tt < T; ++tt) {
                                              const Real* gp = g.data() + (h * T + tt) * D;
                                              Real* dp = dst.data() + (h * T + tt) * D;
                                              const Real* c = cs->data() + tt * P;
                                              const Real* s = sn->data() + tt * P;
                                              for (int64_t j = 0; j < P; ++j) {
                                                  Real g0 = gp[2 * j], g1 = gp[2 * j + 1];
                                                  dp[2 * j] += g0 * c[j] + g1 * s[j];
                                                  dp[2 * j + 1] += -g0 * s[j] + g1 * c[j];
                                              }
                                          }
                                  });
}

// Axis-aligned crop of a [C, H, W] grid resampled to [C, oh, ow] with
// bilinear weights and clamp-to-edge. box is (x0, y0, w, h) in pixel units.
struct CropBox {
    double x0, y0, w, h;
};

template <class Real>
Grid<Real> crop_resize_bilinear(const Grid<Real>& img, const CropBox& box, int oh, int ow) {
    if (img.shape.size() != 3) throw ShapeError("crop_resize_bilinear: expected [C, H, W]");
    if (box.w <= 0 || box.h <= 0) throw DataError("crop_resize_bilinear: empty box");
    int64_t C = img.shape[0], H = img.shape[1], W = img.shape[2];
    auto clampi = [](int64_t v, int64_t hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
    struct Tap {
        int64_t i00, i01, i10, i11;
        Real w00, w01, w10, w11;
    };
    std::vector<Tap> taps(static_cast<size_t>(oh) * ow);
    for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
            double sx = box.x0 + (ox + 0.5) * box.w / ow - 0.5;
            double sy = box.y0 + (oy + 0.5) * box.h / oh - 0.5;
            int64_t x0 = static_cast<int64_t>(std::floor(sx)), y0 = static_cast<int64_t>(std::floor(sy));
            double fx = sx - x0, fy = sy - y0;
            int64_t xa = clampi(x0, W - 1), xb = clampi(x0 + 1, W - 1);
            int64_t ya = clampi(y0, H - 1), yb = clampi(y0 + 1, H - 1);
            Tap& tp = taps[oy * ow + ox];
            tp.i00 = ya * W + xa;
            tp.i01 = ya * W + xb;
            tp.i10 = yb * W + xa;
            tp.i11 = yb * W + xb;
            tp.w00 = static_cast<Real>((1 - fy) * (1 - fx));
            tp.w01 = static_cast<Real>((1 - fy) * fx);
            tp.w10 = static_cast<Real>(fy * (1 - fx));
            tp.w11 = static_cast<Real>(fy * fx);
        }
    auto taps_sh = std::make_shared<const std::vector<Tap>>(std::move(taps));
    auto out = detail::alloc<Real>(C * oh * ow);
    const auto& iv = img.values();
    for (int64_t c = 0; c < C; ++c) {
        const Real* plane = iv.data() + c * H * W;
        Real* dst = out->data() + c * oh * ow;
        for (size_t i = 0; i < taps_sh->size(); ++i) {
            const Tap& tp = (*taps_sh)[i];
            dst[i] = plane[tp.i00] * tp.w00 + plane[tp.i01] * tp.w01 + plane[tp.i10] * tp.w10 +
                     plane[tp.i11] * tp.w11;
        }
    }
    auto* tp = tape_of<Real>({&img});
    int xn = img.attached() ? img.node : -1;
    int64_t hw = static_cast<int64_t>(H) * W;
    return detail::make_out<Real>("crop_resize_bilinear", {static_cast<int>(C), oh, ow}, out, tp,
                                  [xn, C, hw, taps_sh](Tape<Real>& t, const std::vector<Real>& g) {
                                      if (xn < 0) return;
                                      auto& dst = t.grad_buf(xn);
                                      int64_t n = static_cast<int64_t>(taps_sh->size());
                                      for (int64_t c = 0; c < C; ++c) {
                                          Real* plane = dst.data() + c * hw;
                                          const Real* gp = g.data() + c * n;
                                          for (int64_t i = 0; i < n; ++i) {
                                              const auto& tap = (*taps_sh)[i];
                                              plane[tap.i00] += gp[i] * tap.w00;
                                              plane[tap.i01] += gp[i] * tap.w01;
                                              plane[tap.i10] += gp[i] * tap.w10;
                                              plane[tap.i11] += gp[i] * tap.w11;
                                          }
                                      }
                                  });
}

// scalar grid broadcast to an arbitrary shape
template <class Real>
Grid<Real> broadcast_scalar(const Grid<Real>& s, const Shape& shape) {
    if (s.size() != 1) throw ShapeError("broadcast_scalar: source must be scalar");
    auto out = detail::alloc<Real>(numel(shape));
    std::fill(out->begin(), out->end(), s.values()[0]);
    auto* tp = tape_of<Real>({&s});
    int sn = s.attached() ? s.node : -1;
    return detail::make_out<Real>("broadcast_scalar", shape, out, tp,
                                  [sn](Tape<Real>& t, const std::vector<Real>& g) {
                                      if (sn < 0) return;
                                      Real total = Real(0);
                                      for (Real v : g) total += v;
                                      t.grad_buf(sn)[0] += total;
                                  });
}

// ---------------------------------------------------------------------------
// composites
// ---------------------------------------------------------------------------

template <class Real>
Grid<Real> mse(const Grid<Real>& a, const Grid<Real>& b) {
    auto d = sub(a, b);
    return mean_all(mul(d, d));
}

template <class Real>
Grid<Real> dot_all(const Grid<Real>& a, const Grid<Real>& b) {
    return sum_all(mul(a, b));
}

// ---------------------------------------------------------------------------
// finite-difference gradient checker
// ---------------------------------------------------------------------------

// Max over coordinates of the relative error between the analytic gradient of
// a scalar-valued f at x and central differences with step eps.
template <class Real>
double grad_check(const std::function<Grid<Real>(const Grid<Real>&)>& f, const Grid<Real>& x, double eps) {
    if (eps <= 0) throw ShapeError("grad_check: eps must be positive");
    Tape<Real> tape;
    auto xl = tape.leaf(x);
    auto y = f(xl);
    if (y.size() != 1) throw ShapeError("grad_check: f must be scalar-valued");
    tape.backward(y);
    auto analytic = tape.leaf_grad(xl);

    double max_rel = 0.0;
    std::vector<Real> work = x.values();
    for (int64_t i = 0; i < x.size(); ++i) {
        Real orig = work[i];
        work[i] = orig + static_cast<Real>(eps);
        auto fp = f(Grid<Real>::from(x.shape, work)).scalar_value();
        work[i] = orig - static_cast<Real>(eps);
        auto fm = f(Grid<Real>::from(x.shape, work)).scalar_value();
        work[i] = orig;
        double numeric = (static_cast<double>(fp) - static_cast<double>(fm)) / (2.0 * eps);
        double a = static_cast<double>(analytic[i]);
        double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
        max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
    return max_rel;
}

}  // namespace recast
