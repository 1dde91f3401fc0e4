#pragma once

// Independent reference implementations used as test oracles. These follow
// the literal definitions (nested loops, per-timestep recurrences) and must
// stay decoupled from the library's computation paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

// Plain quintuple-loop cross-correlation. x: B x Cin x H x W (flat row-major),
// w: Cout x Cin/g x kh x kw.
inline std::vector<double> conv2d_naive(const std::vector<double>& x, int64_t B, int64_t Cin,
                                        int64_t H, int64_t W, const std::vector<double>& w,
                                        int64_t Cout, int64_t kh, int64_t kw,
                                        const std::vector<double>& bias, int64_t stride,
                                        int64_t pad, int64_t dil, int64_t groups) {
    const int64_t Ho = (H + 2 * pad - dil * (kh - 1) - 1) / stride + 1;
    const int64_t Wo = (W + 2 * pad - dil * (kw - 1) - 1) / stride + 1;
    const int64_t Cg = Cin / groups;
    const int64_t oc_per_g = Cout / groups;
    std::vector<double> out(static_cast<size_t>(B * Cout * Ho * Wo), 0.0);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t oc = 0; oc < Cout; ++oc)
            for (int64_t oh = 0; oh < Ho; ++oh)
                for (int64_t ow = 0; ow < Wo; ++ow) {
                    double acc = bias.empty() ? 0.0 : bias[static_cast<size_t>(oc)];
                    const int64_t g = oc / oc_per_g;
                    for (int64_t ic = 0; ic < Cg; ++ic)
                        for (int64_t ki = 0; ki < kh; ++ki)
                            for (int64_t kj = 0; kj < kw; ++kj) {
                                const int64_t ih = oh * stride - pad + ki * dil;
                                const int64_t iw = ow * stride - pad + kj * dil;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += w[static_cast<size_t>(((oc * Cg + ic) * kh + ki) * kw + kj)] *
                                       x[static_cast<size_t>(((b * Cin + g * Cg + ic) * H + ih) * W +
                                                             iw)];
                            }
                    out[static_cast<size_t>(((b * Cout + oc) * Ho + oh) * Wo + ow)] = acc;
                }
    return out;
}

// Literal per-timestep state-space recurrence.
// u, delta: B x L x D; A: D x N; Bseq, Cseq: B x L x N; skip: D.
// h_t = exp(delta_t * A) . h_{t-1} + (delta_t * B_t) * u_t; y_t = C_t . h_t + skip * u_t.
inline std::vector<double> selective_scan_naive(const std::vector<double>& u,
                                                const std::vector<double>& delta,
                                                const std::vector<double>& A,
                                                const std::vector<double>& Bseq,
                                                const std::vector<double>& Cseq,
                                                const std::vector<double>& skip, int64_t B,
                                                int64_t L, int64_t D, int64_t N) {
    std::vector<double> y(static_cast<size_t>(B * L * D), 0.0);
    for (int64_t b = 0; b < B; ++b) {
        std::vector<double> h(static_cast<size_t>(D * N), 0.0);
        for (int64_t t = 0; t < L; ++t) {
            for (int64_t d = 0; d < D; ++d) {
                const double ut = u[static_cast<size_t>((b * L + t) * D + d)];
                const double dt = delta[static_cast<size_t>((b * L + t) * D + d)];
                double acc = 0.0;
                for (int64_t n = 0; n < N; ++n) {
                    const double abar = std::exp(dt * A[static_cast<size_t>(d * N + n)]);
                    const double bbar = dt * Bseq[static_cast<size_t>((b * L + t) * N + n)];
                    double& hh = h[static_cast<size_t>(d * N + n)];
                    hh = abar * hh + bbar * ut;
                    acc += Cseq[static_cast<size_t>((b * L + t) * N + n)] * hh;
                }
                y[static_cast<size_t>((b * L + t) * D + d)] =
                    acc + (skip.empty() ? 0.0 : skip[static_cast<size_t>(d)]) * ut;
            }
        }
    }
    return y;
}

// Enumerates the atrous partition rule directly: padded cell (r, c) goes to
// sub-image (r % s, c % s) at intra position (r / s, c / s); sub-images
// row-major; each flattened row-major. Returns padded-grid flat indices.
inline std::vector<std::vector<int64_t>> atrous_order_naive(int64_t h, int64_t w, int64_t s) {
    const int64_t hp = (h + s - 1) / s * s;
    const int64_t wp = (w + s - 1) / s * s;
    const int64_t sub_h = hp / s, sub_w = wp / s;
    std::vector<std::vector<int64_t>> seqs(static_cast<size_t>(s * s),
                                           std::vector<int64_t>(static_cast<size_t>(sub_h * sub_w)));
    for (int64_t r = 0; r < hp; ++r)
        for (int64_t c = 0; c < wp; ++c) {
            const int64_t seq = (r % s) * s + (c % s);
            const int64_t pos = (r / s) * sub_w + (c / s);
            seqs[static_cast<size_t>(seq)][static_cast<size_t>(pos)] = r * wp + c;
        }
    return seqs;
}

// Softmax by the direct formula (no max subtraction; inputs must be modest).
inline std::vector<double> softmax_naive(const std::vector<double>& x) {
    std::vector<double> out(x.size());
    double denom = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i]);
        denom += out[i];
    }
    for (auto& v : out) v /= denom;
    return out;
}

// Per-pixel confusion counting at threshold 0.5 (prediction >= 0.5 is
// foreground).
struct Confusion {
    int64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

inline Confusion count_naive(const std::vector<double>& pred, const std::vector<double>& target) {
    Confusion c;
    for (size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] >= 0.5;
        const bool t = target[i] >= 0.5;
        if (p && t) ++c.tp;
        else if (p && !t) ++c.fp;
        else if (!p && t) ++c.fn;
        else ++c.tn;
    }
    return c;
}

}  // namespace oracle
