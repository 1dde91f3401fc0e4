#include "aspvm/ops.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace aspvm {

namespace {

// Right-aligned broadcast plan. Stride 0 marks a broadcast axis.
struct BcastPlan {
    Shape out_shape;
    std::vector<int64_t> stride_a;
    std::vector<int64_t> stride_b;
    int64_t n = 0;
    bool same = false;
};

BcastPlan make_bcast(const Shape& a, const Shape& b, const char* where) {
    BcastPlan plan;
    if (a == b) {
        plan.out_shape = a;
        plan.n = numel_of(a);
        plan.same = true;
        return plan;
    }
    const size_t nd = std::max(a.size(), b.size());
    plan.out_shape.assign(nd, 1);
    plan.stride_a.assign(nd, 0);
    plan.stride_b.assign(nd, 0);
    // element strides of the padded inputs
    std::vector<int64_t> pa(nd, 1), pb(nd, 1);
    for (size_t i = 0; i < a.size(); ++i) pa[nd - a.size() + i] = a[i];
    for (size_t i = 0; i < b.size(); ++i) pb[nd - b.size() + i] = b[i];
    for (size_t i = 0; i < nd; ++i) {
        if (pa[i] == pb[i]) {
            plan.out_shape[i] = pa[i];
        } else if (pa[i] == 1) {
            plan.out_shape[i] = pb[i];
        } else if (pb[i] == 1) {
            plan.out_shape[i] = pa[i];
        } else {
            throw DimensionError(std::string(where) + ": shapes not broadcastable " +
                                 shape_str(a) + " vs " + shape_str(b));
        }
    }
    int64_t sa = 1, sb = 1;
    for (size_t i = nd; i-- > 0;) {
        plan.stride_a[i] = (pa[i] == 1 && plan.out_shape[i] != 1) ? 0 : sa;
        plan.stride_b[i] = (pb[i] == 1 && plan.out_shape[i] != 1) ? 0 : sb;
        sa *= pa[i];
        sb *= pb[i];
    }
    plan.n = numel_of(plan.out_shape);
    return plan;
}

// Walks the broadcast output in row-major order, tracking input offsets.
template <typename F>
void bcast_iter(const BcastPlan& p, F&& f) {
    const size_t nd = p.out_shape.size();
    std::vector<int64_t> idx(nd, 0);
    int64_t ia = 0, ib = 0;
    for (int64_t i = 0; i < p.n; ++i) {
        f(i, ia, ib);
        for (size_t d = nd; d-- > 0;) {
            ++idx[d];
            ia += p.stride_a[d];
            ib += p.stride_b[d];
            if (idx[d] < p.out_shape[d]) break;
            ia -= p.stride_a[d] * p.out_shape[d];
            ib -= p.stride_b[d] * p.out_shape[d];
            idx[d] = 0;
        }
    }
}

enum class Bin { Add, Sub, Mul, Div };

template <typename T>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, Bin kind, const char* name) {
    BcastPlan plan = make_bcast(a.shape(), b.shape(), name);
    std::vector<T> out(static_cast<size_t>(plan.n));
    const T* pa = a.data();
    const T* pb = b.data();
    if (plan.same) {
        const int64_t n = plan.n;
        switch (kind) {
            case Bin::Add:
                for (int64_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i];
                break;
            case Bin::Sub:
                for (int64_t i = 0; i < n; ++i) out[i] = pa[i] - pb[i];
                break;
            case Bin::Mul:
                for (int64_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i];
                break;
            case Bin::Div:
                for (int64_t i = 0; i < n; ++i) out[i] = pa[i] / pb[i];
                break;
        }
    } else {
        bcast_iter(plan, [&](int64_t i, int64_t ia, int64_t ib) {
            switch (kind) {
                case Bin::Add: out[i] = pa[ia] + pb[ib]; break;
                case Bin::Sub: out[i] = pa[ia] - pb[ib]; break;
                case Bin::Mul: out[i] = pa[ia] * pb[ib]; break;
                case Bin::Div: out[i] = pa[ia] / pb[ib]; break;
            }
        });
    }
    return make_op<T>(plan.out_shape, std::move(out), {a, b},
                      [plan, kind](TensorNode<T>& o) {
                          auto& pa_node = *o.parents[0];
                          auto& pb_node = *o.parents[1];
                          const T* g = o.grad.data();
                          const T* av = pa_node.data.data();
                          const T* bv = pb_node.data.data();
                          T* ga = pa_node.requires_grad ? pa_node.grad_buf() : nullptr;
                          T* gb = pb_node.requires_grad ? pb_node.grad_buf() : nullptr;
                          auto accum = [&](int64_t i, int64_t ia, int64_t ib) {
                              const T gi = g[i];
                              switch (kind) {
                                  case Bin::Add:
                                      if (ga) ga[ia] += gi;
                                      if (gb) gb[ib] += gi;
                                      break;
                                  case Bin::Sub:
                                      if (ga) ga[ia] += gi;
                                      if (gb) gb[ib] -= gi;
                                      break;
                                  case Bin::Mul:
                                      if (ga) ga[ia] += gi * bv[ib];
                                      if (gb) gb[ib] += gi * av[ia];
                                      break;
                                  case Bin::Div:
                                      if (ga) ga[ia] += gi / bv[ib];
                                      if (gb) gb[ib] -= gi * av[ia] / (bv[ib] * bv[ib]);
                                      break;
                              }
                          };
                          if (plan.same) {
                              for (int64_t i = 0; i < plan.n; ++i) accum(i, i, i);
                          } else {
                              bcast_iter(plan, accum);
                          }
                      });
}

template <typename T, typename Fwd, typename Der>
Tensor<T> unary_op(const Tensor<T>& x, Fwd fwd, Der der) {
    const int64_t n = x.numel();
    std::vector<T> out(static_cast<size_t>(n));
    const T* px = x.data();
    for (int64_t i = 0; i < n; ++i) out[i] = fwd(px[i]);
    return make_op<T>(x.shape(), std::move(out), {x}, [der, n](TensorNode<T>& o) {
        auto& p = *o.parents[0];
        if (!p.requires_grad) return;
        T* gx = p.grad_buf();
        const T* g = o.grad.data();
        const T* xv = p.data.data();
        const T* yv = o.data.data();
        for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * der(xv[i], yv[i]);
    });
}

template <typename T>
T stable_sigmoid(T x) {
    if (x >= T(0)) {
        const T e = std::exp(-x);
        return T(1) / (T(1) + e);
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

}  // namespace

// ---------------------------------------------------------------- binary ----

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(a, b, Bin::Add, "add");
}
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(a, b, Bin::Sub, "sub");
}
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(a, b, Bin::Mul, "mul");
}
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(a, b, Bin::Div, "div");
}

// ----------------------------------------------------------------- unary ----

template <typename T> Tensor<T> neg(const Tensor<T>& x) {
    return unary_op(x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor) {
    return unary_op(x, [factor](T v) { return v * factor; },
                    [factor](T, T) { return factor; });
}

template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T value) {
    return unary_op(x, [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

template <typename T> Tensor<T> sigmoid(const Tensor<T>& x) {
    return unary_op(x, [](T v) { return stable_sigmoid(v); },
                    [](T, T y) { return y * (T(1) - y); });
}

template <typename T> Tensor<T> silu(const Tensor<T>& x) {
    return unary_op(x, [](T v) { return v * stable_sigmoid(v); },
                    [](T v, T) {
                        const T s = stable_sigmoid(v);
                        return s * (T(1) + v * (T(1) - s));
                    });
}

template <typename T> Tensor<T> gelu(const Tensor<T>& x) {
    return unary_op(x,
                    [](T v) {
                        const double vd = static_cast<double>(v);
                        return static_cast<T>(0.5 * vd * (1.0 + std::erf(vd * 0.7071067811865475)));
                    },
                    [](T v, T) {
                        const double vd = static_cast<double>(v);
                        const double cdf = 0.5 * (1.0 + std::erf(vd * 0.7071067811865475));
                        const double pdf = 0.3989422804014327 * std::exp(-0.5 * vd * vd);
                        return static_cast<T>(cdf + vd * pdf);
                    });
}

template <typename T> Tensor<T> softplus(const Tensor<T>& x) {
    return unary_op(x,
                    [](T v) {
                        if (v > T(20)) return v;
                        if (v < T(-20)) return std::exp(v);
                        return std::log1p(std::exp(v));
                    },
                    [](T v, T) { return stable_sigmoid(v); });
}

template <typename T> Tensor<T> exp(const Tensor<T>& x) {
    return unary_op(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T> Tensor<T> log(const Tensor<T>& x) {
    return unary_op(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T> Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
    return unary_op(x, [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
                    [lo, hi](T v, T) { return (v > lo && v < hi) ? T(1) : T(0); });
}

// ------------------------------------------------------------- reductions ----

template <typename T> Tensor<T> sum_all(const Tensor<T>& x) {
    const int64_t n = x.numel();
    const T* px = x.data();
    T acc = T(0);
    for (int64_t i = 0; i < n; ++i) acc += px[i];
    return make_op<T>({1}, {acc}, {x}, [n](TensorNode<T>& o) {
        auto& p = *o.parents[0];
        if (!p.requires_grad) return;
        T* gx = p.grad_buf();
        const T g = o.grad[0];
        for (int64_t i = 0; i < n; ++i) gx[i] += g;
    });
}

template <typename T> Tensor<T> mean_all(const Tensor<T>& x) {
    return scale(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

namespace {
// (outer, axis, inner) decomposition for a single-axis walk.
struct AxisPlan {
    int64_t outer = 1, len = 1, inner = 1;
};

AxisPlan make_axis_plan(const Shape& shape, int axis) {
    AxisPlan p;
    p.len = shape[static_cast<size_t>(axis)];
    for (int i = 0; i < axis; ++i) p.outer *= shape[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) p.inner *= shape[i];
    return p;
}

int normalize_axis(const Shape& shape, int axis, const char* where) {
    const int nd = static_cast<int>(shape.size());
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd) {
        throw DimensionError(std::string(where) + ": axis out of range for " + shape_str(shape));
    }
    return axis;
}
}  // namespace

template <typename T> Tensor<T> sum_axis(const Tensor<T>& x, int axis, bool keepdim) {
    axis = normalize_axis(x.shape(), axis, "sum_axis");
    const AxisPlan p = make_axis_plan(x.shape(), axis);
    Shape out_shape = x.shape();
    if (keepdim) {
        out_shape[static_cast<size_t>(axis)] = 1;
    } else {
        out_shape.erase(out_shape.begin() + axis);
        if (out_shape.empty()) out_shape = {1};
    }
    std::vector<T> out(static_cast<size_t>(p.outer * p.inner), T(0));
    const T* px = x.data();
    for (int64_t o = 0; o < p.outer; ++o) {
        for (int64_t k = 0; k < p.len; ++k) {
            const T* row = px + (o * p.len + k) * p.inner;
            T* dst = out.data() + o * p.inner;
            for (int64_t i = 0; i < p.inner; ++i) dst[i] += row[i];
        }
    }
    return make_op<T>(out_shape, std::move(out), {x}, [p](TensorNode<T>& o) {
        auto& par = *o.parents[0];
        if (!par.requires_grad) return;
        T* gx = par.grad_buf();
        const T* g = o.grad.data();
        for (int64_t ou = 0; ou < p.outer; ++ou) {
            for (int64_t k = 0; k < p.len; ++k) {
                T* row = gx + (ou * p.len + k) * p.inner;
                const T* src = g + ou * p.inner;
                for (int64_t i = 0; i < p.inner; ++i) row[i] += src[i];
            }
        }
    });
}

template <typename T> Tensor<T> mean_axis(const Tensor<T>& x, int axis, bool keepdim) {
    axis = normalize_axis(x.shape(), axis, "mean_axis");
    const T inv = T(1) / static_cast<T>(x.shape()[static_cast<size_t>(axis)]);
    return scale(sum_axis(x, axis, keepdim), inv);
}

// ------------------------------------------------------------------ shape ----

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel_of(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(shape));
    }
    std::vector<T> out(x.vec());
    return make_op<T>(std::move(shape), std::move(out), {x}, [](TensorNode<T>& o) {
        auto& p = *o.parents[0];
        if (!p.requires_grad) return;
        T* gx = p.grad_buf();
        const T* g = o.grad.data();
        const int64_t n = o.numel();
        for (int64_t i = 0; i < n; ++i) gx[i] += g[i];
    });
}

template <typename T> Tensor<T> transpose(const Tensor<T>& x, int axis_a, int axis_b) {
    axis_a = normalize_axis(x.shape(), axis_a, "transpose");
    axis_b = normalize_axis(x.shape(), axis_b, "transpose");
    if (axis_a == axis_b) return reshape(x, x.shape());
    if (axis_a > axis_b) std::swap(axis_a, axis_b);
    Shape out_shape = x.shape();
    std::swap(out_shape[static_cast<size_t>(axis_a)], out_shape[static_cast<size_t>(axis_b)]);

    // x viewed as (outer, A, mid, B, inner); output swaps A and B.
    const Shape& s = x.shape();
    int64_t outer = 1, mid = 1, inner = 1;
    for (int i = 0; i < axis_a; ++i) outer *= s[static_cast<size_t>(i)];
    for (int i = axis_a + 1; i < axis_b; ++i) mid *= s[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis_b) + 1; i < s.size(); ++i) inner *= s[i];
    const int64_t A = s[static_cast<size_t>(axis_a)];
    const int64_t B = s[static_cast<size_t>(axis_b)];

    auto map = [=](const T* src, T* dst, bool forward) {
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t a = 0; a < A; ++a)
                for (int64_t m = 0; m < mid; ++m)
                    for (int64_t b = 0; b < B; ++b) {
                        const int64_t src_i = (((o * A + a) * mid + m) * B + b) * inner;
                        const int64_t dst_i = (((o * B + b) * mid + m) * A + a) * inner;
                        const int64_t from = forward ? src_i : dst_i;
                        const int64_t to = forward ? dst_i : src_i;
                        for (int64_t k = 0; k < inner; ++k) dst[to + k] += src[from + k];
                    }
    };

    std::vector<T> out(static_cast<size_t>(x.numel()), T(0));
    map(x.data(), out.data(), true);
    return make_op<T>(std::move(out_shape), std::move(out), {x}, [map](TensorNode<T>& o) {
        auto& p = *o.parents[0];
        if (!p.requires_grad) return;
        map(o.grad.data(), p.grad_buf(), false);
    });
}

template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    axis = normalize_axis(parts[0].shape(), axis, "concat");
    Shape out_shape = parts[0].shape();
    int64_t total_axis = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (s.size() != out_shape.size()) {
            throw DimensionError("concat: rank mismatch " + shape_str(s) + " vs " +
                                 shape_str(out_shape));
        }
        for (size_t i = 0; i < s.size(); ++i) {
            if (static_cast<int>(i) != axis && s[i] != out_shape[i]) {
                throw DimensionError("concat: shape mismatch " + shape_str(s) + " vs " +
                                     shape_str(out_shape));
            }
        }
        total_axis += s[static_cast<size_t>(axis)];
    }
    out_shape[static_cast<size_t>(axis)] = total_axis;
    const AxisPlan p0 = make_axis_plan(out_shape, axis);
    std::vector<T> out(static_cast<size_t>(numel_of(out_shape)));
    std::vector<int64_t> axis_sizes;
    int64_t offset = 0;
    for (const auto& part : parts) {
        const int64_t len = part.dim(axis);
        axis_sizes.push_back(len);
        const T* src = part.data();
        for (int64_t o = 0; o < p0.outer; ++o) {
            std::copy(src + o * len * p0.inner, src + (o + 1) * len * p0.inner,
                      out.data() + (o * total_axis + offset) * p0.inner);
        }
        offset += len;
    }
    std::vector<Tensor<T>> parents = parts;
    return make_op<T>(out_shape, std::move(out), std::move(parents),
                      [p0, axis_sizes, total_axis](TensorNode<T>& o) {
                          const T* g = o.grad.data();
                          int64_t off = 0;
                          for (size_t pi = 0; pi < o.parents.size(); ++pi) {
                              auto& par = *o.parents[pi];
                              const int64_t len = axis_sizes[pi];
                              if (par.requires_grad) {
                                  T* gx = par.grad_buf();
                                  for (int64_t ou = 0; ou < p0.outer; ++ou) {
                                      const T* src = g + (ou * total_axis + off) * p0.inner;
                                      T* dst = gx + ou * len * p0.inner;
                                      for (int64_t i = 0; i < len * p0.inner; ++i) dst[i] += src[i];
                                  }
                              }
                              off += len;
                          }
                      });
}

template <typename T> std::vector<Tensor<T>> split(const Tensor<T>& x,
                                                   const std::vector<int64_t>& sizes, int axis) {
    axis = normalize_axis(x.shape(), axis, "split");
    const int64_t axis_len = x.dim(axis);
    int64_t total = 0;
    for (int64_t s : sizes) total += s;
    if (total != axis_len) {
        throw DimensionError("split: sizes sum to " + std::to_string(total) + ", axis has " +
                             std::to_string(axis_len));
    }
    const AxisPlan p = make_axis_plan(x.shape(), axis);
    std::vector<Tensor<T>> outs;
    int64_t offset = 0;
    for (int64_t len : sizes) {
        Shape s = x.shape();
        s[static_cast<size_t>(axis)] = len;
        std::vector<T> data(static_cast<size_t>(p.outer * len * p.inner));
        const T* src = x.data();
        for (int64_t o = 0; o < p.outer; ++o) {
            std::copy(src + (o * axis_len + offset) * p.inner,
                      src + (o * axis_len + offset + len) * p.inner,
                      data.data() + o * len * p.inner);
        }
        const int64_t off_here = offset;
        outs.push_back(make_op<T>(std::move(s), std::move(data), {x},
                                  [p, axis_len, off_here, len](TensorNode<T>& o) {
                                      auto& par = *o.parents[0];
                                      if (!par.requires_grad) return;
                                      T* gx = par.grad_buf();
                                      const T* g = o.grad.data();
                                      for (int64_t ou = 0; ou < p.outer; ++ou) {
                                          T* dst = gx + (ou * axis_len + off_here) * p.inner;
                                          const T* src_g = g + ou * len * p.inner;
                                          for (int64_t i = 0; i < len * p.inner; ++i)
                                              dst[i] += src_g[i];
                                      }
                                  }));
        offset += len;
    }
    return outs;
}

template <typename T> std::vector<Tensor<T>> chunk(const Tensor<T>& x, int64_t n, int axis) {
    const int norm = normalize_axis(x.shape(), axis, "chunk");
    const int64_t len = x.dim(norm);
    if (n <= 0 || len % n != 0) {
        throw DimensionError("chunk: axis of length " + std::to_string(len) +
                             " not divisible into " + std::to_string(n) + " parts");
    }
    return split(x, std::vector<int64_t>(static_cast<size_t>(n), len / n), norm);
}

template <typename T> Tensor<T> roll_last_axis(const Tensor<T>& x, int64_t shift) {
    const int64_t c = x.dim(-1);
    const int64_t rows = x.numel() / c;
    const int64_t s = ((shift % c) + c) % c;
    std::vector<T> out(static_cast<size_t>(x.numel()));
    const T* px = x.data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* src = px + r * c;
        T* dst = out.data() + r * c;
        for (int64_t j = 0; j < c; ++j) dst[j] = src[(j + s) % c];
    }
    return make_op<T>(x.shape(), std::move(out), {x}, [rows, c, s](TensorNode<T>& o) {
        auto& p = *o.parents[0];
        if (!p.requires_grad) return;
        T* gx = p.grad_buf();
        const T* g = o.grad.data();
        for (int64_t r = 0; r < rows; ++r) {
            const T* src = g + r * c;
            T* dst = gx + r * c;
            for (int64_t j = 0; j < c; ++j) dst[(j + s) % c] += src[j];
        }
    });
}

template <typename T> Tensor<T> image_to_seq(const Tensor<T>& x) {
    if (x.ndim() != 4) {
        throw DimensionError("image_to_seq: expected B x C x H x W, got " + shape_str(x.shape()));
    }
    const int64_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<T> out(static_cast<size_t>(x.numel()));
    const T* px = x.data();
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ci = 0; ci < c; ++ci) {
            const T* src = px + (bi * c + ci) * hw;
            T* dst = out.data() + bi * hw * c + ci;
            for (int64_t p = 0; p < hw; ++p) dst[p * c] = src[p];
        }
    return make_op<T>({b, hw, c}, std::move(out), {x}, [b, c, hw](TensorNode<T>& o) {
        auto& par = *o.parents[0];
        if (!par.requires_grad) return;
        T* gx = par.grad_buf();
        const T* g = o.grad.data();
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t ci = 0; ci < c; ++ci) {
                T* dst = gx + (bi * c + ci) * hw;
                const T* src = g + bi * hw * c + ci;
                for (int64_t p = 0; p < hw; ++p) dst[p] += src[p * c];
            }
    });
}

template <typename T> Tensor<T> seq_to_image(const Tensor<T>& x, int64_t height, int64_t width) {
    if (x.ndim() != 3 || x.dim(1) != height * width) {
        throw DimensionError("seq_to_image: expected B x " + std::to_string(height * width) +
                             " x C, got " + shape_str(x.shape()));
    }
    const int64_t b = x.dim(0), hw = x.dim(1), c = x.dim(2);
    std::vector<T> out(static_cast<size_t>(x.numel()));
    const T* px = x.data();
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ci = 0; ci < c; ++ci) {
            T* dst = out.data() + (bi * c + ci) * hw;
            const T* src = px + bi * hw * c + ci;
            for (int64_t p = 0; p < hw; ++p) dst[p] = src[p * c];
        }
    return make_op<T>({b, c, height, width}, std::move(out), {x}, [b, c, hw](TensorNode<T>& o) {
        auto& par = *o.parents[0];
        if (!par.requires_grad) return;
        T* gx = par.grad_buf();
        const T* g = o.grad.data();
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t ci = 0; ci < c; ++ci) {
                const T* src = g + (bi * c + ci) * hw;
                T* dst = gx + bi * hw * c + ci;
                for (int64_t p = 0; p < hw; ++p) dst[p * c] += src[p];
            }
    });
}

// ---------------------------------------------------------- linear algebra ----

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(static_cast<size_t>(m * n), T(0));
    const T* pa = a.data();
    const T* pb = b.data();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t kk = 0; kk < k; ++kk) {
            const T av = pa[i * k + kk];
            const T* brow = pb + kk * n;
            T* orow = out.data() + i * n;
            for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    return make_op<T>({m, n}, std::move(out), {a, b}, [m, k, n](TensorNode<T>& o) {
        auto& pa_node = *o.parents[0];
        auto& pb_node = *o.parents[1];
        const T* g = o.grad.data();
        if (pa_node.requires_grad) {
            T* ga = pa_node.grad_buf();
            const T* bv = pb_node.data.data();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t kk = 0; kk < k; ++kk) {
                    T acc = T(0);
                    const T* grow = g + i * n;
                    const T* brow = bv + kk * n;
                    for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    ga[i * k + kk] += acc;
                }
        }
        if (pb_node.requires_grad) {
            T* gb = pb_node.grad_buf();
            const T* av = pa_node.data.data();
            for (int64_t kk = 0; kk < k; ++kk)
                for (int64_t i = 0; i < m; ++i) {
                    const T a_ik = av[i * k + kk];
                    const T* grow = g + i * n;
                    T* brow = gb + kk * n;
                    for (int64_t j = 0; j < n; ++j) brow[j] += a_ik * grow[j];
                }
        }
    });
}

template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w,
                                       const Tensor<T>& b) {
    if (w.ndim() != 2 || x.dim(-1) != w.dim(0)) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                             shape_str(w.shape()));
    }
    const int64_t k = w.dim(0), n = w.dim(1);
    const int64_t rows = x.numel() / k;
    const bool has_bias = b.defined();
    if (has_bias && b.numel() != n) {
        throw DimensionError("linear: bias length " + std::to_string(b.numel()) +
                             " does not match output width " + std::to_string(n));
    }
    Shape out_shape = x.shape();
    out_shape.back() = n;
    std::vector<T> out(static_cast<size_t>(rows * n));
    {
        const T* px = x.data();
        const T* pw = w.data();
        const T* pb = has_bias ? b.data() : nullptr;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (rows * n * k > 16384)
#endif
        for (int64_t r = 0; r < rows; ++r) {
            T* orow = out.data() + r * n;
            if (pb) {
                std::copy(pb, pb + n, orow);
            } else {
                std::fill(orow, orow + n, T(0));
            }
            const T* xrow = px + r * k;
            for (int64_t kk = 0; kk < k; ++kk) {
                const T xv = xrow[kk];
                const T* wrow = pw + kk * n;
                for (int64_t j = 0; j < n; ++j) orow[j] += xv * wrow[j];
            }
        }
    }
    std::vector<Tensor<T>> parents = has_bias ? std::vector<Tensor<T>>{x, w, b}
                                              : std::vector<Tensor<T>>{x, w};
    return make_op<T>(std::move(out_shape), std::move(out), std::move(parents),
                      [rows, k, n, has_bias](TensorNode<T>& o) {
                          auto& xn = *o.parents[0];
                          auto& wn = *o.parents[1];
                          const T* g = o.grad.data();
                          if (xn.requires_grad) {
                              T* gx = xn.grad_buf();
                              const T* wv = wn.data.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (rows * n * k > 16384)
#endif
                              for (int64_t r = 0; r < rows; ++r) {
                                  const T* grow = g + r * n;
                                  T* gxrow = gx + r * k;
                                  for (int64_t kk = 0; kk < k; ++kk) {
                                      T acc = T(0);
                                      const T* wrow = wv + kk * n;
                                      for (int64_t j = 0; j < n; ++j) acc += grow[j] * wrow[j];
                                      gxrow[kk] += acc;
                                  }
                              }
                          }
                          if (wn.requires_grad) {
                              T* gw = wn.grad_buf();
                              const T* xv = xn.data.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (rows * n * k > 16384)
#endif
                              for (int64_t kk = 0; kk < k; ++kk) {
                                  T* gwrow = gw + kk * n;
                                  for (int64_t r = 0; r < rows; ++r) {
                                      const T xv_rk = xv[r * k + kk];
                                      if (xv_rk == T(0)) continue;
                                      const T* grow = g + r * n;
                                      for (int64_t j = 0; j < n; ++j) gwrow[j] += xv_rk * grow[j];
                                  }
                              }
                          }
                          if (has_bias) {
                              auto& bn = *o.parents[2];
                              if (bn.requires_grad) {
                                  T* gb = bn.grad_buf();
                                  for (int64_t r = 0; r < rows; ++r) {
                                      const T* grow = g + r * n;
                                      for (int64_t j = 0; j < n; ++j) gb[j] += grow[j];
                                  }
                              }
                          }
                      });
}

// ------------------------------------------------------ softmax / norms ----

template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis) {
    axis = normalize_axis(x.shape(), axis, "softmax");
    const AxisPlan p = make_axis_plan(x.shape(), axis);
    std::vector<T> out(static_cast<size_t>(x.numel()));
    const T* px = x.data();
    for (int64_t o = 0; o < p.outer; ++o) {
        for (int64_t i = 0; i < p.inner; ++i) {
            const int64_t base = o * p.len * p.inner + i;
            T mx = px[base];
            for (int64_t kk = 1; kk < p.len; ++kk)
                mx = std::max(mx, px[base + kk * p.inner]);
            T denom = T(0);
            for (int64_t kk = 0; kk < p.len; ++kk) {
                const T e = std::exp(px[base + kk * p.inner] - mx);
                out[static_cast<size_t>(base + kk * p.inner)] = e;
                denom += e;
            }
            const T inv = T(1) / denom;
            for (int64_t kk = 0; kk < p.len; ++kk)
                out[static_cast<size_t>(base + kk * p.inner)] *= inv;
        }
    }
    return make_op<T>(x.shape(), std::move(out), {x}, [p](TensorNode<T>& o) {
        auto& par = *o.parents[0];
        if (!par.requires_grad) return;
        T* gx = par.grad_buf();
        const T* g = o.grad.data();
        const T* y = o.data.data();
        for (int64_t ou = 0; ou < p.outer; ++ou) {
            for (int64_t i = 0; i < p.inner; ++i) {
                const int64_t base = ou * p.len * p.inner + i;
                T dot = T(0);
                for (int64_t kk = 0; kk < p.len; ++kk) {
                    const int64_t at = base + kk * p.inner;
                    dot += g[at] * y[at];
                }
                for (int64_t kk = 0; kk < p.len; ++kk) {
                    const int64_t at = base + kk * p.inner;
                    gx[at] += y[at] * (g[at] - dot);
                }
            }
        }
    });
}

template <typename T> Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                                           const Tensor<T>& beta, T eps) {
    const int64_t c = x.dim(-1);
    if (c == 0) throw DimensionError("layer_norm: empty channel axis");
    if (gamma.numel() != c || beta.numel() != c) {
        throw DimensionError("layer_norm: affine params of length " +
                             std::to_string(gamma.numel()) + "/" + std::to_string(beta.numel()) +
                             " do not match channels " + std::to_string(c));
    }
    const int64_t rows = x.numel() / c;
    std::vector<T> out(static_cast<size_t>(x.numel()));
    std::vector<T> inv_std(static_cast<size_t>(rows));
    std::vector<T> means(static_cast<size_t>(rows));
    const T* px = x.data();
    const T* pg = gamma.data();
    const T* pb = beta.data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* row = px + r * c;
        T mean = T(0);
        for (int64_t j = 0; j < c; ++j) mean += row[j];
        mean /= static_cast<T>(c);
        T var = T(0);
        for (int64_t j = 0; j < c; ++j) {
            const T d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<T>(c);
        const T inv = T(1) / std::sqrt(var + eps);
        means[static_cast<size_t>(r)] = mean;
        inv_std[static_cast<size_t>(r)] = inv;
        T* orow = out.data() + r * c;
        for (int64_t j = 0; j < c; ++j) orow[j] = (row[j] - mean) * inv * pg[j] + pb[j];
    }
    return make_op<T>(x.shape(), std::move(out), {x, gamma, beta},
                      [rows, c, means, inv_std](TensorNode<T>& o) {
                          auto& xn = *o.parents[0];
                          auto& gn = *o.parents[1];
                          auto& bn = *o.parents[2];
                          const T* g = o.grad.data();
                          const T* xv = xn.data.data();
                          const T* gv = gn.data.data();
                          T* gx = xn.requires_grad ? xn.grad_buf() : nullptr;
                          T* gg = gn.requires_grad ? gn.grad_buf() : nullptr;
                          T* gb = bn.requires_grad ? bn.grad_buf() : nullptr;
                          for (int64_t r = 0; r < rows; ++r) {
                              const T mean = means[static_cast<size_t>(r)];
                              const T inv = inv_std[static_cast<size_t>(r)];
                              const T* grow = g + r * c;
                              const T* xrow = xv + r * c;
                              T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
                              for (int64_t j = 0; j < c; ++j) {
                                  const T xhat = (xrow[j] - mean) * inv;
                                  const T dxhat = grow[j] * gv[j];
                                  sum_dxhat += dxhat;
                                  sum_dxhat_xhat += dxhat * xhat;
                                  if (gg) gg[j] += grow[j] * xhat;
                                  if (gb) gb[j] += grow[j];
                              }
                              if (gx) {
                                  T* gxrow = gx + r * c;
                                  const T invc = T(1) / static_cast<T>(c);
                                  for (int64_t j = 0; j < c; ++j) {
                                      const T xhat = (xrow[j] - mean) * inv;
                                      const T dxhat = grow[j] * gv[j];
                                      gxrow[j] += inv * (dxhat - invc * sum_dxhat -
                                                         xhat * invc * sum_dxhat_xhat);
                                  }
                              }
                          }
                      });
}

namespace {
template <typename T>
void bn_shape_check(const Tensor<T>& x, int64_t c_params, const char* where) {
    if (x.ndim() != 4) {
        throw DimensionError(std::string(where) + ": expected B x C x H x W, got " +
                             shape_str(x.shape()));
    }
    if (x.dim(1) != c_params) {
        throw DimensionError(std::string(where) + ": channel count " + std::to_string(x.dim(1)) +
                             " does not match affine params " + std::to_string(c_params));
    }
}
}  // namespace

template <typename T> Tensor<T> batch_norm_train(const Tensor<T>& x, const Tensor<T>& gamma,
                                                 const Tensor<T>& beta,
                                                 std::vector<T>& running_mean,
                                                 std::vector<T>& running_var, T momentum, T eps) {
    bn_shape_check(x, gamma.numel(), "batch_norm");
    const int64_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    const int64_t per_channel = b * hw;
    std::vector<T> mean(static_cast<size_t>(c), T(0)), var(static_cast<size_t>(c), T(0));
    const T* px = x.data();
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ci = 0; ci < c; ++ci) {
            const T* src = px + (bi * c + ci) * hw;
            T acc = T(0);
            for (int64_t i = 0; i < hw; ++i) acc += src[i];
            mean[static_cast<size_t>(ci)] += acc;
        }
    for (int64_t ci = 0; ci < c; ++ci) mean[static_cast<size_t>(ci)] /= static_cast<T>(per_channel);
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ci = 0; ci < c; ++ci) {
            const T* src = px + (bi * c + ci) * hw;
            const T m = mean[static_cast<size_t>(ci)];
            T acc = T(0);
            for (int64_t i = 0; i < hw; ++i) {
                const T d = src[i] - m;
                acc += d * d;
            }
            var[static_cast<size_t>(ci)] += acc;
        }
    for (int64_t ci = 0; ci < c; ++ci) var[static_cast<size_t>(ci)] /= static_cast<T>(per_channel);

    // Running stats keep the unbiased variance.
    const T unbias = per_channel > 1 ? static_cast<T>(per_channel) / static_cast<T>(per_channel - 1)
                                     : T(1);
    for (int64_t ci = 0; ci < c; ++ci) {
        const size_t s = static_cast<size_t>(ci);
        running_mean[s] = (T(1) - momentum) * running_mean[s] + momentum * mean[s];
        running_var[s] = (T(1) - momentum) * running_var[s] + momentum * var[s] * unbias;
    }

    std::vector<T> inv_std(static_cast<size_t>(c));
    for (int64_t ci = 0; ci < c; ++ci)
        inv_std[static_cast<size_t>(ci)] = T(1) / std::sqrt(var[static_cast<size_t>(ci)] + eps);

    std::vector<T> out(static_cast<size_t>(x.numel()));
    const T* pg = gamma.data();
    const T* pbeta = beta.data();
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ci = 0; ci < c; ++ci) {
            const size_t s = static_cast<size_t>(ci);
            const T m = mean[s], inv = inv_std[s], gmm = pg[ci], bta = pbeta[ci];
            const T* src = px + (bi * c + ci) * hw;
            T* dst = out.data() + (bi * c + ci) * hw;
            for (int64_t i = 0; i < hw; ++i) dst[i] = (src[i] - m) * inv * gmm + bta;
        }
    return make_op<T>(x.shape(), std::move(out), {x, gamma, beta},
                      [b, c, hw, mean, inv_std](TensorNode<T>& o) {
                          auto& xn = *o.parents[0];
                          auto& gn = *o.parents[1];
                          auto& btn = *o.parents[2];
                          const T* g = o.grad.data();
                          const T* xv = xn.data.data();
                          const T* gv = gn.data.data();
                          const int64_t n = b * hw;
                          std::vector<T> sum_g(static_cast<size_t>(c), T(0));
                          std::vector<T> sum_g_xhat(static_cast<size_t>(c), T(0));
                          for (int64_t bi = 0; bi < b; ++bi)
                              for (int64_t ci = 0; ci < c; ++ci) {
                                  const size_t s = static_cast<size_t>(ci);
                                  const T m = mean[s], inv = inv_std[s];
                                  const T* grow = g + (bi * c + ci) * hw;
                                  const T* xrow = xv + (bi * c + ci) * hw;
                                  T a = T(0), bacc = T(0);
                                  for (int64_t i = 0; i < hw; ++i) {
                                      a += grow[i];
                                      bacc += grow[i] * (xrow[i] - m) * inv;
                                  }
                                  sum_g[s] += a;
                                  sum_g_xhat[s] += bacc;
                              }
                          if (gn.requires_grad) {
                              T* gg = gn.grad_buf();
                              for (int64_t ci = 0; ci < c; ++ci)
                                  gg[ci] += sum_g_xhat[static_cast<size_t>(ci)];
                          }
                          if (btn.requires_grad) {
                              T* gb = btn.grad_buf();
                              for (int64_t ci = 0; ci < c; ++ci) gb[ci] += sum_g[static_cast<size_t>(ci)];
                          }
                          if (xn.requires_grad) {
                              T* gx = xn.grad_buf();
                              const T invn = T(1) / static_cast<T>(n);
                              for (int64_t bi = 0; bi < b; ++bi)
                                  for (int64_t ci = 0; ci < c; ++ci) {
                                      const size_t s = static_cast<size_t>(ci);
                                      const T m = mean[s], inv = inv_std[s], gmm = gv[ci];
                                      const T mg = sum_g[s] * invn;
                                      const T mgx = sum_g_xhat[s] * invn;
                                      const T* grow = g + (bi * c + ci) * hw;
                                      const T* xrow = xv + (bi * c + ci) * hw;
                                      T* dst = gx + (bi * c + ci) * hw;
                                      for (int64_t i = 0; i < hw; ++i) {
                                          const T xhat = (xrow[i] - m) * inv;
                                          dst[i] += gmm * inv * (grow[i] - mg - xhat * mgx);
                                      }
                                  }
                          }
                      });
}

template <typename T> Tensor<T> batch_norm_infer(const Tensor<T>& x, const Tensor<T>& gamma,
                                                 const Tensor<T>& beta,
                                                 const std::vector<T>& running_mean,
                                                 const std::vector<T>& running_var, T eps) {
    bn_shape_check(x, gamma.numel(), "batch_norm");
    const int64_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<T> inv_std(static_cast<size_t>(c));
    for (int64_t ci = 0; ci < c; ++ci)
        inv_std[static_cast<size_t>(ci)] =
            T(1) / std::sqrt(running_var[static_cast<size_t>(ci)] + eps);
    std::vector<T> out(static_cast<size_t>(x.numel()));
    const T* px = x.data();
    const T* pg = gamma.data();
    const T* pb = beta.data();
    std::vector<T> rm = running_mean;
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ci = 0; ci < c; ++ci) {
            const size_t s = static_cast<size_t>(ci);
            const T m = rm[s], inv = inv_std[s], gmm = pg[ci], bta = pb[ci];
            const T* src = px + (bi * c + ci) * hw;
            T* dst = out.data() + (bi * c + ci) * hw;
            for (int64_t i = 0; i < hw; ++i) dst[i] = (src[i] - m) * inv * gmm + bta;
        }
    return make_op<T>(x.shape(), std::move(out), {x, gamma, beta},
                      [b, c, hw, rm, inv_std](TensorNode<T>& o) {
                          auto& xn = *o.parents[0];
                          auto& gn = *o.parents[1];
                          auto& btn = *o.parents[2];
                          const T* g = o.grad.data();
                          const T* xv = xn.data.data();
                          const T* gv = gn.data.data();
                          T* gx = xn.requires_grad ? xn.grad_buf() : nullptr;
                          T* gg = gn.requires_grad ? gn.grad_buf() : nullptr;
                          T* gb = btn.requires_grad ? btn.grad_buf() : nullptr;
                          for (int64_t bi = 0; bi < b; ++bi)
                              for (int64_t ci = 0; ci < c; ++ci) {
                                  const size_t s = static_cast<size_t>(ci);
                                  const T m = rm[s], inv = inv_std[s], gmm = gv[ci];
                                  const T* grow = g + (bi * c + ci) * hw;
                                  const T* xrow = xv + (bi * c + ci) * hw;
                                  for (int64_t i = 0; i < hw; ++i) {
                                      if (gx) gx[(bi * c + ci) * hw + i] += grow[i] * gmm * inv;
                                      if (gg) gg[ci] += grow[i] * (xrow[i] - m) * inv;
                                      if (gb) gb[ci] += grow[i];
                                  }
                              }
                      });
}

// -------------------------------------------------------- instantiation ----

#define ASPVM_INSTANTIATE_OPS(T)                                                              \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> neg(const Tensor<T>&);                                                \
    template Tensor<T> scale(const Tensor<T>&, T);                                           \
    template Tensor<T> add_scalar(const Tensor<T>&, T);                                      \
    template Tensor<T> sigmoid(const Tensor<T>&);                                            \
    template Tensor<T> silu(const Tensor<T>&);                                               \
    template Tensor<T> gelu(const Tensor<T>&);                                               \
    template Tensor<T> softplus(const Tensor<T>&);                                           \
    template Tensor<T> exp(const Tensor<T>&);                                                \
    template Tensor<T> log(const Tensor<T>&);                                                \
    template Tensor<T> clamp(const Tensor<T>&, T, T);                                        \
    template Tensor<T> sum_all(const Tensor<T>&);                                            \
    template Tensor<T> mean_all(const Tensor<T>&);                                           \
    template Tensor<T> sum_axis(const Tensor<T>&, int, bool);                                \
    template Tensor<T> mean_axis(const Tensor<T>&, int, bool);                               \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                     \
    template Tensor<T> transpose(const Tensor<T>&, int, int);                                \
    template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                           \
    template std::vector<Tensor<T>> chunk(const Tensor<T>&, int64_t, int);                   \
    template std::vector<Tensor<T>> split(const Tensor<T>&, const std::vector<int64_t>&, int); \
    template Tensor<T> roll_last_axis(const Tensor<T>&, int64_t);                            \
    template Tensor<T> image_to_seq(const Tensor<T>&);                                       \
    template Tensor<T> seq_to_image(const Tensor<T>&, int64_t, int64_t);                     \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
    template Tensor<T> softmax(const Tensor<T>&, int);                                       \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);  \
    template Tensor<T> batch_norm_train(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                        std::vector<T>&, std::vector<T>&, T, T);             \
    template Tensor<T> batch_norm_infer(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                        const std::vector<T>&, const std::vector<T>&, T);

ASPVM_INSTANTIATE_OPS(float)
ASPVM_INSTANTIATE_OPS(double)

#undef ASPVM_INSTANTIATE_OPS

}  // namespace aspvm
