#include <algorithm>
#include <cmath>

#include "aspvm/ops.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace aspvm {

template <typename T> Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w,
                                       const Tensor<T>& bias, const Conv2dSpec& spec) {
    if (x.ndim() != 4 || w.ndim() != 4) {
        throw DimensionError("conv2d: expected 4D input/weight, got " + shape_str(x.shape()) +
                             " and " + shape_str(w.shape()));
    }
    const int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Cout = w.dim(0), Cg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    const int64_t g = spec.groups, s = spec.stride, p = spec.padding, d = spec.dilation;
    if (g < 1 || Cin % g != 0 || Cout % g != 0 || Cg != Cin / g) {
        throw DimensionError("conv2d: weight " + shape_str(w.shape()) +
                             " inconsistent with input " + shape_str(x.shape()) + " and groups " +
                             std::to_string(g));
    }
    if (d < 1 || s < 1) throw DimensionError("conv2d: stride/dilation must be >= 1");
    const int64_t Ho = (H + 2 * p - d * (kh - 1) - 1) / s + 1;
    const int64_t Wo = (W + 2 * p - d * (kw - 1) - 1) / s + 1;
    if (Ho <= 0 || Wo <= 0) {
        throw DimensionError("conv2d: non-positive output size for input " + shape_str(x.shape()));
    }
    const bool has_bias = bias.defined();
    if (has_bias && bias.numel() != Cout) {
        throw DimensionError("conv2d: bias length " + std::to_string(bias.numel()) +
                             " does not match out channels " + std::to_string(Cout));
    }
    const int64_t oc_per_g = Cout / g;

    std::vector<T> out(static_cast<size_t>(B * Cout * Ho * Wo));
    {
        const T* px = x.data();
        const T* pw = w.data();
        const T* pb = has_bias ? bias.data() : nullptr;
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) if (B * Cout > 1)
#endif
        for (int64_t b = 0; b < B; ++b)
            for (int64_t oc = 0; oc < Cout; ++oc) {
                const int64_t grp = oc / oc_per_g;
                T* dst = out.data() + (b * Cout + oc) * Ho * Wo;
                for (int64_t oh = 0; oh < Ho; ++oh)
                    for (int64_t ow = 0; ow < Wo; ++ow) {
                        T acc = pb ? pb[oc] : T(0);
                        for (int64_t ic = 0; ic < Cg; ++ic) {
                            const T* xrow = px + (b * Cin + grp * Cg + ic) * H * W;
                            const T* wrow = pw + ((oc * Cg + ic) * kh) * kw;
                            for (int64_t ki = 0; ki < kh; ++ki) {
                                const int64_t ih = oh * s - p + ki * d;
                                if (ih < 0 || ih >= H) continue;
                                for (int64_t kj = 0; kj < kw; ++kj) {
                                    const int64_t iw = ow * s - p + kj * d;
                                    if (iw < 0 || iw >= W) continue;
                                    acc += wrow[ki * kw + kj] * xrow[ih * W + iw];
                                }
                            }
                        }
                        dst[oh * Wo + ow] = acc;
                    }
            }
    }
    std::vector<Tensor<T>> parents = has_bias ? std::vector<Tensor<T>>{x, w, bias}
                                              : std::vector<Tensor<T>>{x, w};
    return make_op<T>(
        {B, Cout, Ho, Wo}, std::move(out), std::move(parents),
        [=](TensorNode<T>& o) {
            auto& xn = *o.parents[0];
            auto& wn = *o.parents[1];
            const T* gout = o.grad.data();
            const T* px = xn.data.data();
            const T* pw = wn.data.data();
            if (xn.requires_grad) {
                T* gx = xn.grad_buf();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (B > 1)
#endif
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t oc = 0; oc < Cout; ++oc) {
                        const int64_t grp = oc / oc_per_g;
                        const T* grow = gout + (b * Cout + oc) * Ho * Wo;
                        for (int64_t oh = 0; oh < Ho; ++oh)
                            for (int64_t ow = 0; ow < Wo; ++ow) {
                                const T gv = grow[oh * Wo + ow];
                                if (gv == T(0)) continue;
                                for (int64_t ic = 0; ic < Cg; ++ic) {
                                    T* xg = gx + (b * Cin + grp * Cg + ic) * H * W;
                                    const T* wrow = pw + ((oc * Cg + ic) * kh) * kw;
                                    for (int64_t ki = 0; ki < kh; ++ki) {
                                        const int64_t ih = oh * s - p + ki * d;
                                        if (ih < 0 || ih >= H) continue;
                                        for (int64_t kj = 0; kj < kw; ++kj) {
                                            const int64_t iw = ow * s - p + kj * d;
                                            if (iw < 0 || iw >= W) continue;
                                            xg[ih * W + iw] += gv * wrow[ki * kw + kj];
                                        }
                                    }
                                }
                            }
                    }
            }
            if (wn.requires_grad) {
                T* gw = wn.grad_buf();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (Cout > 1)
#endif
                for (int64_t oc = 0; oc < Cout; ++oc) {
                    const int64_t grp = oc / oc_per_g;
                    for (int64_t b = 0; b < B; ++b) {
                        const T* grow = gout + (b * Cout + oc) * Ho * Wo;
                        for (int64_t oh = 0; oh < Ho; ++oh)
                            for (int64_t ow = 0; ow < Wo; ++ow) {
                                const T gv = grow[oh * Wo + ow];
                                if (gv == T(0)) continue;
                                for (int64_t ic = 0; ic < Cg; ++ic) {
                                    const T* xrow = px + (b * Cin + grp * Cg + ic) * H * W;
                                    T* wrow = gw + ((oc * Cg + ic) * kh) * kw;
                                    for (int64_t ki = 0; ki < kh; ++ki) {
                                        const int64_t ih = oh * s - p + ki * d;
                                        if (ih < 0 || ih >= H) continue;
                                        for (int64_t kj = 0; kj < kw; ++kj) {
                                            const int64_t iw = ow * s - p + kj * d;
                                            if (iw < 0 || iw >= W) continue;
                                            wrow[ki * kw + kj] += gv * xrow[ih * W + iw];
                                        }
                                    }
                                }
                            }
                    }
                }
            }
            if (has_bias) {
                auto& bn = *o.parents[2];
                if (bn.requires_grad) {
                    T* gb = bn.grad_buf();
                    for (int64_t b = 0; b < B; ++b)
                        for (int64_t oc = 0; oc < Cout; ++oc) {
                            const T* grow = gout + (b * Cout + oc) * Ho * Wo;
                            T acc = T(0);
                            for (int64_t i = 0; i < Ho * Wo; ++i) acc += grow[i];
                            gb[oc] += acc;
                        }
                }
            }
        });
}

template <typename T> Tensor<T> conv1d_depthwise_causal(const Tensor<T>& x, const Tensor<T>& w,
                                                        const Tensor<T>& bias) {
    if (x.ndim() != 3 || w.ndim() != 2 || x.dim(2) != w.dim(0)) {
        throw DimensionError("conv1d_depthwise_causal: input " + shape_str(x.shape()) +
                             " incompatible with weight " + shape_str(w.shape()));
    }
    const int64_t B = x.dim(0), L = x.dim(1), D = x.dim(2), k = w.dim(1);
    const bool has_bias = bias.defined();
    std::vector<T> out(static_cast<size_t>(x.numel()));
    {
        const T* px = x.data();
        const T* pw = w.data();
        const T* pb = has_bias ? bias.data() : nullptr;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (B > 1)
#endif
        for (int64_t b = 0; b < B; ++b)
            for (int64_t l = 0; l < L; ++l) {
                T* dst = out.data() + (b * L + l) * D;
                if (pb) {
                    std::copy(pb, pb + D, dst);
                } else {
                    std::fill(dst, dst + D, T(0));
                }
                for (int64_t j = 0; j < k; ++j) {
                    const int64_t lp = l - (k - 1) + j;
                    if (lp < 0) continue;
                    const T* src = px + (b * L + lp) * D;
                    for (int64_t dd = 0; dd < D; ++dd) dst[dd] += pw[dd * k + j] * src[dd];
                }
            }
    }
    std::vector<Tensor<T>> parents = has_bias ? std::vector<Tensor<T>>{x, w, bias}
                                              : std::vector<Tensor<T>>{x, w};
    return make_op<T>(x.shape(), std::move(out), std::move(parents), [=](TensorNode<T>& o) {
        auto& xn = *o.parents[0];
        auto& wn = *o.parents[1];
        const T* g = o.grad.data();
        const T* px = xn.data.data();
        const T* pw = wn.data.data();
        if (xn.requires_grad) {
            T* gx = xn.grad_buf();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (B > 1)
#endif
            for (int64_t b = 0; b < B; ++b)
                for (int64_t l = 0; l < L; ++l) {
                    const T* grow = g + (b * L + l) * D;
                    for (int64_t j = 0; j < k; ++j) {
                        const int64_t lp = l - (k - 1) + j;
                        if (lp < 0) continue;
                        T* dst = gx + (b * L + lp) * D;
                        for (int64_t dd = 0; dd < D; ++dd) dst[dd] += pw[dd * k + j] * grow[dd];
                    }
                }
        }
        if (wn.requires_grad) {
            T* gw = wn.grad_buf();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t l = 0; l < L; ++l) {
                    const T* grow = g + (b * L + l) * D;
                    for (int64_t j = 0; j < k; ++j) {
                        const int64_t lp = l - (k - 1) + j;
                        if (lp < 0) continue;
                        const T* src = px + (b * L + lp) * D;
                        for (int64_t dd = 0; dd < D; ++dd) gw[dd * k + j] += grow[dd] * src[dd];
                    }
                }
        }
        if (has_bias) {
            auto& bn = *o.parents[2];
            if (bn.requires_grad) {
                T* gb = bn.grad_buf();
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t l = 0; l < L; ++l) {
                        const T* grow = g + (b * L + l) * D;
                        for (int64_t dd = 0; dd < D; ++dd) gb[dd] += grow[dd];
                    }
            }
        }
    });
}

template <typename T> Tensor<T> conv1d_vector(const Tensor<T>& x, const Tensor<T>& w,
                                              const Tensor<T>& bias) {
    if (x.ndim() != 2 || w.ndim() != 1) {
        throw DimensionError("conv1d_vector: expected B x N input and 1D kernel, got " +
                             shape_str(x.shape()) + " and " + shape_str(w.shape()));
    }
    const int64_t B = x.dim(0), N = x.dim(1), k = w.dim(0);
    const int64_t pad = k / 2;
    const bool has_bias = bias.defined();
    std::vector<T> out(static_cast<size_t>(B * N));
    const T* px = x.data();
    const T* pw = w.data();
    const T bv = has_bias ? bias.data()[0] : T(0);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < N; ++i) {
            T acc = bv;
            for (int64_t j = 0; j < k; ++j) {
                const int64_t ip = i - pad + j;
                if (ip < 0 || ip >= N) continue;
                acc += pw[j] * px[b * N + ip];
            }
            out[static_cast<size_t>(b * N + i)] = acc;
        }
    std::vector<Tensor<T>> parents = has_bias ? std::vector<Tensor<T>>{x, w, bias}
                                              : std::vector<Tensor<T>>{x, w};
    return make_op<T>(x.shape(), std::move(out), std::move(parents), [=](TensorNode<T>& o) {
        auto& xn = *o.parents[0];
        auto& wn = *o.parents[1];
        const T* g = o.grad.data();
        const T* px2 = xn.data.data();
        const T* pw2 = wn.data.data();
        T* gx = xn.requires_grad ? xn.grad_buf() : nullptr;
        T* gw = wn.requires_grad ? wn.grad_buf() : nullptr;
        T* gb = nullptr;
        if (has_bias && o.parents[2]->requires_grad) gb = o.parents[2]->grad_buf();
        for (int64_t b = 0; b < B; ++b)
            for (int64_t i = 0; i < N; ++i) {
                const T gv = g[b * N + i];
                if (gb) gb[0] += gv;
                for (int64_t j = 0; j < k; ++j) {
                    const int64_t ip = i - pad + j;
                    if (ip < 0 || ip >= N) continue;
                    if (gx) gx[b * N + ip] += gv * pw2[j];
                    if (gw) gw[j] += gv * px2[b * N + ip];
                }
            }
    });
}

template <typename T> Tensor<T> maxpool2x2(const Tensor<T>& x) {
    if (x.ndim() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
        throw DimensionError("maxpool2x2: expected even spatial dims, got " +
                             shape_str(x.shape()));
    }
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Ho = H / 2, Wo = W / 2;
    std::vector<T> out(static_cast<size_t>(B * C * Ho * Wo));
    std::vector<int64_t> argmax(out.size());
    const T* px = x.data();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* src = px + bc * H * W;
        T* dst = out.data() + bc * Ho * Wo;
        int64_t* am = argmax.data() + bc * Ho * Wo;
        for (int64_t oh = 0; oh < Ho; ++oh)
            for (int64_t ow = 0; ow < Wo; ++ow) {
                int64_t best = (2 * oh) * W + 2 * ow;
                T bv = src[best];
                const int64_t cand[3] = {(2 * oh) * W + 2 * ow + 1, (2 * oh + 1) * W + 2 * ow,
                                         (2 * oh + 1) * W + 2 * ow + 1};
                for (int64_t idx : cand) {
                    if (src[idx] > bv) {
                        bv = src[idx];
                        best = idx;
                    }
                }
                dst[oh * Wo + ow] = bv;
                am[oh * Wo + ow] = best;
            }
    }
    return make_op<T>({B, C, Ho, Wo}, std::move(out), {x},
                      [B, C, H, W, Ho, Wo, argmax](TensorNode<T>& o) {
                          auto& p = *o.parents[0];
                          if (!p.requires_grad) return;
                          T* gx = p.grad_buf();
                          const T* g = o.grad.data();
                          for (int64_t bc = 0; bc < B * C; ++bc) {
                              const T* grow = g + bc * Ho * Wo;
                              const int64_t* am = argmax.data() + bc * Ho * Wo;
                              T* dst = gx + bc * H * W;
                              for (int64_t i = 0; i < Ho * Wo; ++i) dst[am[i]] += grow[i];
                          }
                      });
}

template <typename T> Tensor<T> avgpool2x2(const Tensor<T>& x) {
    if (x.ndim() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
        throw DimensionError("avgpool2x2: expected even spatial dims, got " +
                             shape_str(x.shape()));
    }
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Ho = H / 2, Wo = W / 2;
    std::vector<T> out(static_cast<size_t>(B * C * Ho * Wo));
    const T* px = x.data();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* src = px + bc * H * W;
        T* dst = out.data() + bc * Ho * Wo;
        for (int64_t oh = 0; oh < Ho; ++oh)
            for (int64_t ow = 0; ow < Wo; ++ow) {
                dst[oh * Wo + ow] = (src[(2 * oh) * W + 2 * ow] + src[(2 * oh) * W + 2 * ow + 1] +
                                     src[(2 * oh + 1) * W + 2 * ow] +
                                     src[(2 * oh + 1) * W + 2 * ow + 1]) *
                                    T(0.25);
            }
    }
    return make_op<T>({B, C, Ho, Wo}, std::move(out), {x},
                      [B, C, H, W, Ho, Wo](TensorNode<T>& o) {
                          auto& p = *o.parents[0];
                          if (!p.requires_grad) return;
                          T* gx = p.grad_buf();
                          const T* g = o.grad.data();
                          for (int64_t bc = 0; bc < B * C; ++bc) {
                              const T* grow = g + bc * Ho * Wo;
                              T* dst = gx + bc * H * W;
                              for (int64_t oh = 0; oh < Ho; ++oh)
                                  for (int64_t ow = 0; ow < Wo; ++ow) {
                                      const T gv = grow[oh * Wo + ow] * T(0.25);
                                      dst[(2 * oh) * W + 2 * ow] += gv;
                                      dst[(2 * oh) * W + 2 * ow + 1] += gv;
                                      dst[(2 * oh + 1) * W + 2 * ow] += gv;
                                      dst[(2 * oh + 1) * W + 2 * ow + 1] += gv;
                                  }
                          }
                      });
}

template <typename T> Tensor<T> global_avgpool(const Tensor<T>& x) {
    if (x.ndim() != 4) {
        throw DimensionError("global_avgpool: expected B x C x H x W, got " +
                             shape_str(x.shape()));
    }
    const int64_t B = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<T> out(static_cast<size_t>(B * C));
    const T* px = x.data();
    const T inv = T(1) / static_cast<T>(hw);
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* src = px + bc * hw;
        T acc = T(0);
        for (int64_t i = 0; i < hw; ++i) acc += src[i];
        out[static_cast<size_t>(bc)] = acc * inv;
    }
    return make_op<T>({B, C}, std::move(out), {x}, [B, C, hw, inv](TensorNode<T>& o) {
        auto& p = *o.parents[0];
        if (!p.requires_grad) return;
        T* gx = p.grad_buf();
        const T* g = o.grad.data();
        for (int64_t bc = 0; bc < B * C; ++bc) {
            const T gv = g[bc] * inv;
            T* dst = gx + bc * hw;
            for (int64_t i = 0; i < hw; ++i) dst[i] += gv;
        }
    });
}

template <typename T> Tensor<T> upsample_bilinear2x(const Tensor<T>& x) {
    if (x.ndim() != 4) {
        throw DimensionError("upsample_bilinear2x: expected B x C x H x W, got " +
                             shape_str(x.shape()));
    }
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Ho = 2 * H, Wo = 2 * W;
    // Half-pixel-centered source coordinates, edges clamped.
    auto make_axis = [](int64_t in, int64_t out, std::vector<int64_t>& i0, std::vector<int64_t>& i1,
                        std::vector<T>& w1) {
        i0.resize(static_cast<size_t>(out));
        i1.resize(static_cast<size_t>(out));
        w1.resize(static_cast<size_t>(out));
        for (int64_t o = 0; o < out; ++o) {
            const double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
            const double lo = std::floor(src);
            double frac = src - lo;
            int64_t a = static_cast<int64_t>(lo);
            int64_t b = a + 1;
            if (a < 0) {
                a = 0;
                b = 0;
                frac = 0.0;
            }
            if (b > in - 1) {
                b = in - 1;
                if (a > in - 1) a = in - 1;
            }
            i0[static_cast<size_t>(o)] = a;
            i1[static_cast<size_t>(o)] = b;
            w1[static_cast<size_t>(o)] = static_cast<T>(frac);
        }
    };
    std::vector<int64_t> r0, r1, c0, c1;
    std::vector<T> rw, cw;
    make_axis(H, Ho, r0, r1, rw);
    make_axis(W, Wo, c0, c1, cw);

    std::vector<T> out(static_cast<size_t>(B * C * Ho * Wo));
    const T* px = x.data();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* src = px + bc * H * W;
        T* dst = out.data() + bc * Ho * Wo;
        for (int64_t oh = 0; oh < Ho; ++oh) {
            const int64_t a = r0[static_cast<size_t>(oh)], b = r1[static_cast<size_t>(oh)];
            const T fr = rw[static_cast<size_t>(oh)];
            for (int64_t ow = 0; ow < Wo; ++ow) {
                const int64_t l = c0[static_cast<size_t>(ow)], r = c1[static_cast<size_t>(ow)];
                const T fc = cw[static_cast<size_t>(ow)];
                const T top = src[a * W + l] * (T(1) - fc) + src[a * W + r] * fc;
                const T bot = src[b * W + l] * (T(1) - fc) + src[b * W + r] * fc;
                dst[oh * Wo + ow] = top * (T(1) - fr) + bot * fr;
            }
        }
    }
    return make_op<T>({B, C, Ho, Wo}, std::move(out), {x},
                      [B, C, H, W, Ho, Wo, r0, r1, c0, c1, rw, cw](TensorNode<T>& o) {
                          auto& p = *o.parents[0];
                          if (!p.requires_grad) return;
                          T* gx = p.grad_buf();
                          const T* g = o.grad.data();
                          for (int64_t bc = 0; bc < B * C; ++bc) {
                              const T* grow = g + bc * Ho * Wo;
                              T* dst = gx + bc * H * W;
                              for (int64_t oh = 0; oh < Ho; ++oh) {
                                  const int64_t a = r0[static_cast<size_t>(oh)];
                                  const int64_t b = r1[static_cast<size_t>(oh)];
                                  const T fr = rw[static_cast<size_t>(oh)];
                                  for (int64_t ow = 0; ow < Wo; ++ow) {
                                      const int64_t l = c0[static_cast<size_t>(ow)];
                                      const int64_t r = c1[static_cast<size_t>(ow)];
                                      const T fc = cw[static_cast<size_t>(ow)];
                                      const T gv = grow[oh * Wo + ow];
                                      dst[a * W + l] += gv * (T(1) - fr) * (T(1) - fc);
                                      dst[a * W + r] += gv * (T(1) - fr) * fc;
                                      dst[b * W + l] += gv * fr * (T(1) - fc);
                                      dst[b * W + r] += gv * fr * fc;
                                  }
                              }
                          }
                      });
}

template <typename T> Tensor<T> channel_max(const Tensor<T>& x) {
    if (x.ndim() != 4) {
        throw DimensionError("channel_max: expected B x C x H x W, got " + shape_str(x.shape()));
    }
    const int64_t B = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<T> out(static_cast<size_t>(B * hw));
    std::vector<int64_t> argmax(out.size());
    const T* px = x.data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < hw; ++i) {
            T best = px[(b * C) * hw + i];
            int64_t bc = 0;
            for (int64_t c = 1; c < C; ++c) {
                const T v = px[(b * C + c) * hw + i];
                if (v > best) {
                    best = v;
                    bc = c;
                }
            }
            out[static_cast<size_t>(b * hw + i)] = best;
            argmax[static_cast<size_t>(b * hw + i)] = bc;
        }
    return make_op<T>({B, 1, x.dim(2), x.dim(3)}, std::move(out), {x},
                      [B, C, hw, argmax](TensorNode<T>& o) {
                          auto& p = *o.parents[0];
                          if (!p.requires_grad) return;
                          T* gx = p.grad_buf();
                          const T* g = o.grad.data();
                          for (int64_t b = 0; b < B; ++b)
                              for (int64_t i = 0; i < hw; ++i) {
                                  const int64_t c = argmax[static_cast<size_t>(b * hw + i)];
                                  gx[(b * C + c) * hw + i] += g[b * hw + i];
                              }
                      });
}

template <typename T> Tensor<T> channel_mean(const Tensor<T>& x) {
    if (x.ndim() != 4) {
        throw DimensionError("channel_mean: expected B x C x H x W, got " + shape_str(x.shape()));
    }
    const int64_t B = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<T> out(static_cast<size_t>(B * hw), T(0));
    const T* px = x.data();
    const T inv = T(1) / static_cast<T>(C);
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t c = 0; c < C; ++c) {
            const T* src = px + (b * C + c) * hw;
            T* dst = out.data() + b * hw;
            for (int64_t i = 0; i < hw; ++i) dst[i] += src[i];
        }
        T* dst = out.data() + b * hw;
        for (int64_t i = 0; i < hw; ++i) dst[i] *= inv;
    }
    return make_op<T>({B, 1, x.dim(2), x.dim(3)}, std::move(out), {x},
                      [B, C, hw, inv](TensorNode<T>& o) {
                          auto& p = *o.parents[0];
                          if (!p.requires_grad) return;
                          T* gx = p.grad_buf();
                          const T* g = o.grad.data();
                          for (int64_t b = 0; b < B; ++b)
                              for (int64_t c = 0; c < C; ++c) {
                                  const T* grow = g + b * hw;
                                  T* dst = gx + (b * C + c) * hw;
                                  for (int64_t i = 0; i < hw; ++i) dst[i] += grow[i] * inv;
                              }
                      });
}

#define ASPVM_INSTANTIATE_CONV(T)                                                           \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                              const Conv2dSpec&);                                           \
    template Tensor<T> conv1d_depthwise_causal(const Tensor<T>&, const Tensor<T>&,          \
                                               const Tensor<T>&);                           \
    template Tensor<T> conv1d_vector(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
    template Tensor<T> maxpool2x2(const Tensor<T>&);                                        \
    template Tensor<T> avgpool2x2(const Tensor<T>&);                                        \
    template Tensor<T> global_avgpool(const Tensor<T>&);                                    \
    template Tensor<T> upsample_bilinear2x(const Tensor<T>&);                               \
    template Tensor<T> channel_max(const Tensor<T>&);                                       \
    template Tensor<T> channel_mean(const Tensor<T>&);

ASPVM_INSTANTIATE_CONV(float)
ASPVM_INSTANTIATE_CONV(double)

#undef ASPVM_INSTANTIATE_CONV

}  // namespace aspvm
