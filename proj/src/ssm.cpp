#include "aspvm/ssm.hpp"

#include <atomic>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace aspvm::ssm {

template <typename T>
Tensor<T> selective_scan(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& A,
                         const Tensor<T>& Bseq, const Tensor<T>& Cseq, const Tensor<T>& skip) {
    if (u.ndim() != 3 || delta.shape() != u.shape()) {
        throw DimensionError("selective_scan: u " + shape_str(u.shape()) + " vs delta " +
                             shape_str(delta.shape()));
    }
    const int64_t B = u.dim(0), L = u.dim(1), D = u.dim(2);
    if (A.ndim() != 2 || A.dim(0) != D) {
        throw DimensionError("selective_scan: state matrix " + shape_str(A.shape()) +
                             " does not match d_inner " + std::to_string(D));
    }
    const int64_t N = A.dim(1);
    if (Bseq.shape() != Shape{B, L, N} || Cseq.shape() != Shape{B, L, N}) {
        throw DimensionError("selective_scan: B/C sequences must be " + shape_str({B, L, N}));
    }
    if (skip.numel() != D) {
        throw DimensionError("selective_scan: skip term length " + std::to_string(skip.numel()) +
                             " != " + std::to_string(D));
    }

    std::vector<T> out(static_cast<size_t>(B * L * D));
    auto h_hist = std::make_shared<std::vector<T>>(static_cast<size_t>(B * L * D * N));
    std::atomic<int64_t> bad_t{-1};
    {
        const T* pu = u.data();
        const T* pd = delta.data();
        const T* pa = A.data();
        const T* pb = Bseq.data();
        const T* pc = Cseq.data();
        const T* ps = skip.data();
        T* ph = h_hist->data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (B > 1)
#endif
        for (int64_t b = 0; b < B; ++b) {
            std::vector<T> h(static_cast<size_t>(D * N), T(0));
            for (int64_t t = 0; t < L; ++t) {
                const int64_t bt = b * L + t;
                const T* brow = pb + bt * N;
                const T* crow = pc + bt * N;
                for (int64_t d = 0; d < D; ++d) {
                    const T ut = pu[bt * D + d];
                    const T dt = pd[bt * D + d];
                    const T* arow = pa + d * N;
                    T* hrow = h.data() + d * N;
                    T* hist = ph + (bt * D + d) * N;
                    T acc = T(0);
                    for (int64_t n = 0; n < N; ++n) {
                        const T abar = std::exp(dt * arow[n]);
                        hrow[n] = abar * hrow[n] + dt * brow[n] * ut;
                        hist[n] = hrow[n];
                        acc += crow[n] * hrow[n];
                    }
                    const T y = acc + ps[d] * ut;
                    if (!std::isfinite(y)) {
                        int64_t expected = -1;
                        bad_t.compare_exchange_strong(expected, t);
                    }
                    out[static_cast<size_t>(bt * D + d)] = y;
                }
            }
        }
    }
    if (bad_t.load() >= 0) {
        throw NumericError("selective_scan: non-finite state at timestep " +
                           std::to_string(bad_t.load()));
    }
    return make_op<T>(
        u.shape(), std::move(out), {u, delta, A, Bseq, Cseq, skip},
        [B, L, D, N, h_hist](TensorNode<T>& o) {
            auto& un = *o.parents[0];
            auto& dn = *o.parents[1];
            auto& an = *o.parents[2];
            auto& bn = *o.parents[3];
            auto& cn = *o.parents[4];
            auto& sn = *o.parents[5];
            const T* g = o.grad.data();
            const T* pu = un.data.data();
            const T* pd = dn.data.data();
            const T* pa = an.data.data();
            const T* pb = bn.data.data();
            const T* pc = cn.data.data();
            const T* ps = sn.data.data();
            const T* ph = h_hist->data();
            T* gu = un.requires_grad ? un.grad_buf() : nullptr;
            T* gd = dn.requires_grad ? dn.grad_buf() : nullptr;
            T* gb = bn.requires_grad ? bn.grad_buf() : nullptr;
            T* gc = cn.requires_grad ? cn.grad_buf() : nullptr;
            // A and the skip term collect over every batch element; per-batch
            // scratch keeps the parallel loop deterministic.
            std::vector<T> ga_scratch(static_cast<size_t>(B * D * N), T(0));
            std::vector<T> gs_scratch(static_cast<size_t>(B * D), T(0));
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (B > 1)
#endif
            for (int64_t b = 0; b < B; ++b) {
                std::vector<T> dh(static_cast<size_t>(D * N), T(0));
                T* ga_b = ga_scratch.data() + b * D * N;
                T* gs_b = gs_scratch.data() + b * D;
                for (int64_t t = L - 1; t >= 0; --t) {
                    const int64_t bt = b * L + t;
                    const T* brow = pb + bt * N;
                    const T* crow = pc + bt * N;
                    for (int64_t d = 0; d < D; ++d) {
                        const T gy = g[bt * D + d];
                        const T ut = pu[bt * D + d];
                        const T dt = pd[bt * D + d];
                        const T* arow = pa + d * N;
                        const T* hist = ph + (bt * D + d) * N;
                        const T* hist_prev = t > 0 ? ph + ((bt - 1) * D + d) * N : nullptr;
                        T* dhrow = dh.data() + d * N;
                        gs_b[d] += gy * ut;
                        T du_acc = gy * ps[d];
                        T ddt_acc = T(0);
                        for (int64_t n = 0; n < N; ++n) {
                            T dhn = dhrow[n] + gy * crow[n];
                            if (gc) gc[bt * N + n] += gy * hist[n];
                            const T abar = std::exp(dt * arow[n]);
                            const T hprev = hist_prev ? hist_prev[n] : T(0);
                            const T dabar = dhn * hprev;
                            ga_b[d * N + n] += dabar * abar * dt;
                            ddt_acc += dabar * abar * arow[n] + dhn * brow[n] * ut;
                            if (gb) gb[bt * N + n] += dhn * dt * ut;
                            du_acc += dhn * dt * brow[n];
                            dhrow[n] = dhn * abar;
                        }
                        if (gu) gu[bt * D + d] += du_acc;
                        if (gd) gd[bt * D + d] += ddt_acc;
                    }
                }
            }
            if (an.requires_grad) {
                T* ga = an.grad_buf();
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t i = 0; i < D * N; ++i) ga[i] += ga_scratch[b * D * N + i];
            }
            if (sn.requires_grad) {
                T* gs = sn.grad_buf();
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t d = 0; d < D; ++d) gs[d] += gs_scratch[b * D + d];
            }
        });
}

// ------------------------------------------------------------- MambaCore ----

template <typename T>
MambaCore<T>::MambaCore(int64_t d_model, Rng& rng, MambaHyper hyper)
    : d_model_(d_model),
      d_inner_(hyper.expand * d_model),
      d_state_(hyper.d_state),
      dt_rank_(hyper.dt_rank(d_model)) {
    in_proj_w_ = init_linear_weight<T>(d_model_, 2 * d_inner_, rng);
    conv_w_ = init_uniform<T>({d_inner_, hyper.conv_kernel},
                              1.0 / std::sqrt(static_cast<double>(hyper.conv_kernel)), rng);
    conv_b_ = init_uniform<T>({d_inner_},
                              1.0 / std::sqrt(static_cast<double>(hyper.conv_kernel)), rng);
    x_proj_w_ = init_linear_weight<T>(d_inner_, dt_rank_ + 2 * d_state_, rng);
    dt_proj_w_ = init_uniform<T>({dt_rank_, d_inner_},
                                 1.0 / std::sqrt(static_cast<double>(dt_rank_)), rng);
    // Bias chosen so softplus(bias) lands log-uniformly in [dt_min, dt_max].
    {
        std::vector<T> bias(static_cast<size_t>(d_inner_));
        const double lo = std::log(hyper.dt_min), hi = std::log(hyper.dt_max);
        for (auto& v : bias) {
            const double dt = std::exp(rng.uniform(lo, hi));
            v = static_cast<T>(std::log(std::expm1(dt)));
        }
        dt_proj_b_ = Tensor<T>::from_data({d_inner_}, std::move(bias));
        dt_proj_b_.set_requires_grad(true);
    }
    // A = -(1..d_state) per row, stored as the log of -A.
    {
        std::vector<T> alog(static_cast<size_t>(d_inner_ * d_state_));
        for (int64_t d = 0; d < d_inner_; ++d)
            for (int64_t n = 0; n < d_state_; ++n)
                alog[static_cast<size_t>(d * d_state_ + n)] =
                    static_cast<T>(std::log(static_cast<double>(n + 1)));
        a_log_ = Tensor<T>::from_data({d_inner_, d_state_}, std::move(alog));
        a_log_.set_requires_grad(true);
    }
    skip_ = init_const<T>({d_inner_}, T(1));
    out_proj_w_ = init_linear_weight<T>(d_inner_, d_model_, rng);
}

template <typename T>
Tensor<T> MambaCore<T>::forward(const Tensor<T>& x) const {
    if (x.ndim() != 3 || x.dim(2) != d_model_) {
        throw DimensionError("MambaCore: expected B x L x " + std::to_string(d_model_) +
                             ", got " + shape_str(x.shape()));
    }
    auto xz = linear(x, in_proj_w_);
    auto parts = chunk(xz, 2, 2);
    auto stream = silu(conv1d_depthwise_causal(parts[0], conv_w_, conv_b_));
    auto gate = parts[1];

    auto dbc = linear(stream, x_proj_w_);
    auto pieces = split(dbc, {dt_rank_, d_state_, d_state_}, 2);
    auto delta = softplus(linear(pieces[0], dt_proj_w_, dt_proj_b_));
    auto A = neg(aspvm::exp(a_log_));
    auto y = selective_scan(stream, delta, A, pieces[1], pieces[2], skip_);
    return linear(mul(y, silu(gate)), out_proj_w_);
}

template <typename T>
void MambaCore<T>::register_params(ParamRegistry<T>& reg, const std::string& prefix) {
    reg.add(prefix + ".in_proj.weight", in_proj_w_);
    reg.add(prefix + ".conv1d.weight", conv_w_);
    reg.add(prefix + ".conv1d.bias", conv_b_);
    reg.add(prefix + ".x_proj.weight", x_proj_w_);
    reg.add(prefix + ".dt_proj.weight", dt_proj_w_);
    reg.add(prefix + ".dt_proj.bias", dt_proj_b_);
    reg.add(prefix + ".a_log", a_log_);
    reg.add(prefix + ".skip", skip_);
    reg.add(prefix + ".out_proj.weight", out_proj_w_);
}

template <typename T>
int64_t MambaCore<T>::param_count() const {
    return in_proj_w_.numel() + conv_w_.numel() + conv_b_.numel() + x_proj_w_.numel() +
           dt_proj_w_.numel() + dt_proj_b_.numel() + a_log_.numel() + skip_.numel() +
           out_proj_w_.numel();
}

template <typename T>
void MambaCore<T>::zero_out_proj() {
    std::fill(out_proj_w_.vec().begin(), out_proj_w_.vec().end(), T(0));
}

// ----------------------------------------------------------- AtrousMamba ----

namespace {

// Row-wise linear with a per-row weight choice: rows of sub-image g use
// weights[g]. Parents: [x, w_0..w_{G-1}, b_0..b_{G-1}].
template <typename T>
Tensor<T> linear_per_group(const Tensor<T>& x, const std::vector<Tensor<T>>& ws,
                           const std::vector<Tensor<T>>& bs, int64_t groups, bool seq_major) {
    const int64_t R = x.dim(0), L = x.dim(1), C = x.dim(2);
    const int64_t batch = R / groups;
    auto group_of = [groups, batch, seq_major](int64_t row) {
        return seq_major ? row / batch : row % groups;
    };
    std::vector<T> out(static_cast<size_t>(x.numel()));
    const T* px = x.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (R > 1)
#endif
    for (int64_t r = 0; r < R; ++r) {
        const int64_t g = group_of(r);
        const T* w = ws[static_cast<size_t>(g)].data();
        const T* b = bs[static_cast<size_t>(g)].data();
        for (int64_t l = 0; l < L; ++l) {
            const T* xrow = px + (r * L + l) * C;
            T* orow = out.data() + (r * L + l) * C;
            std::copy(b, b + C, orow);
            for (int64_t k = 0; k < C; ++k) {
                const T xv = xrow[k];
                const T* wrow = w + k * C;
                for (int64_t j = 0; j < C; ++j) orow[j] += xv * wrow[j];
            }
        }
    }
    std::vector<Tensor<T>> parents;
    parents.push_back(x);
    for (const auto& w : ws) parents.push_back(w);
    for (const auto& b : bs) parents.push_back(b);
    return make_op<T>(x.shape(), std::move(out), std::move(parents),
                      [R, L, C, groups, batch, seq_major](TensorNode<T>& o) {
                          auto group_of2 = [groups, batch, seq_major](int64_t row) {
                              return seq_major ? row / batch : row % groups;
                          };
                          auto& xn = *o.parents[0];
                          const T* g = o.grad.data();
                          const T* px = xn.data.data();
                          if (xn.requires_grad) {
                              T* gx = xn.grad_buf();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (R > 1)
#endif
                              for (int64_t r = 0; r < R; ++r) {
                                  const T* w = o.parents[static_cast<size_t>(1 + group_of2(r))]
                                                   ->data.data();
                                  for (int64_t l = 0; l < L; ++l) {
                                      const T* grow = g + (r * L + l) * C;
                                      T* gxrow = gx + (r * L + l) * C;
                                      for (int64_t k = 0; k < C; ++k) {
                                          T acc = T(0);
                                          const T* wrow = w + k * C;
                                          for (int64_t j = 0; j < C; ++j) acc += grow[j] * wrow[j];
                                          gxrow[k] += acc;
                                      }
                                  }
                              }
                          }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (groups > 1)
#endif
                          for (int64_t grp = 0; grp < groups; ++grp) {
                              auto& wn = *o.parents[static_cast<size_t>(1 + grp)];
                              auto& bn = *o.parents[static_cast<size_t>(1 + groups + grp)];
                              T* gw = wn.requires_grad ? wn.grad_buf() : nullptr;
                              T* gbv = bn.requires_grad ? bn.grad_buf() : nullptr;
                              if (!gw && !gbv) continue;
                              for (int64_t r = 0; r < R; ++r) {
                                  if (group_of2(r) != grp) continue;
                                  for (int64_t l = 0; l < L; ++l) {
                                      const T* grow = g + (r * L + l) * C;
                                      const T* xrow = px + (r * L + l) * C;
                                      if (gbv) {
                                          for (int64_t j = 0; j < C; ++j) gbv[j] += grow[j];
                                      }
                                      if (gw) {
                                          for (int64_t k = 0; k < C; ++k) {
                                              const T xv = xrow[k];
                                              if (xv == T(0)) continue;
                                              T* gwrow = gw + k * C;
                                              for (int64_t j = 0; j < C; ++j)
                                                  gwrow[j] += xv * grow[j];
                                          }
                                      }
                                  }
                              }
                          }
                      });
}

}  // namespace

template <typename T>
AtrousMamba<T>::AtrousMamba(int64_t d_model, scan::ScanSpec spec, Rng& rng, MambaHyper hyper)
    : d_model_(d_model), spec_(std::move(spec)), core_(d_model, rng, hyper) {
    spec_.validate();
    const int64_t s2 = spec_.atrous_step * spec_.atrous_step;
    const int64_t n_plans = spec_.per_subimage_directions.empty()
                                ? static_cast<int64_t>(spec_.directions.size())
                                : 1;
    for (int64_t i = 0; i < n_plans * s2; ++i) {
        proj_w_.push_back(init_linear_weight<T>(d_model_, d_model_, rng));
        proj_b_.push_back(init_linear_bias<T>(d_model_, d_model_, rng));
    }
}

template <typename T>
std::vector<scan::PlanPtr> AtrousMamba<T>::resolve_plans(int64_t h, int64_t w) const {
    std::vector<scan::PlanPtr> plans;
    if (!spec_.per_subimage_directions.empty()) {
        plans.push_back(std::make_shared<const scan::ScanPlan>(scan::build_plan_with_directions(
            h, w, spec_.atrous_step, spec_.per_subimage_directions)));
    } else {
        for (auto dir : spec_.directions) {
            plans.push_back(scan::PlanCache::instance().atrous(h, w, spec_.atrous_step, dir));
        }
    }
    return plans;
}

template <typename T>
Tensor<T> AtrousMamba<T>::forward(const Tensor<T>& x, int64_t h, int64_t w) const {
    if (x.ndim() != 3 || x.dim(1) != h * w || x.dim(2) != d_model_) {
        throw DimensionError("AtrousMamba: expected B x " + std::to_string(h * w) + " x " +
                             std::to_string(d_model_) + ", got " + shape_str(x.shape()));
    }
    const int64_t s2 = spec_.atrous_step * spec_.atrous_step;
    auto plans = resolve_plans(h, w);
    Tensor<T> out;
    for (size_t pi = 0; pi < plans.size(); ++pi) {
        auto seqs = scan::apply_plan(x, plans[pi], seq_major_);
        std::vector<Tensor<T>> ws(proj_w_.begin() + static_cast<int64_t>(pi) * s2,
                                  proj_w_.begin() + static_cast<int64_t>(pi + 1) * s2);
        std::vector<Tensor<T>> bs(proj_b_.begin() + static_cast<int64_t>(pi) * s2,
                                  proj_b_.begin() + static_cast<int64_t>(pi + 1) * s2);
        auto projected = linear_per_group(seqs, ws, bs, s2, seq_major_);
        auto y = core_.forward(projected);
        auto grid = scan::invert_plan(y, plans[pi], seq_major_);
        out = out.defined() ? add(out, grid) : grid;
    }
    return out;
}

template <typename T>
void AtrousMamba<T>::register_params(ParamRegistry<T>& reg, const std::string& prefix) {
    for (size_t i = 0; i < proj_w_.size(); ++i) {
        reg.add(prefix + ".subimage_proj." + std::to_string(i) + ".weight", proj_w_[i]);
        reg.add(prefix + ".subimage_proj." + std::to_string(i) + ".bias", proj_b_[i]);
    }
    core_.register_params(reg, prefix + ".core");
}

template <typename T>
int64_t AtrousMamba<T>::param_count() const {
    return projection_param_count() + core_.param_count();
}

template <typename T>
int64_t AtrousMamba<T>::projection_param_count() const {
    int64_t n = 0;
    for (const auto& w : proj_w_) n += w.numel();
    for (const auto& b : proj_b_) n += b.numel();
    return n;
}

template <typename T>
Tensor<T> across_mamba(const Tensor<T>& x, const std::vector<scan::PlanPtr>& plans,
                       const MambaCore<T>& core) {
    Tensor<T> out;
    for (const auto& plan : plans) {
        auto grid = scan::invert_plan(core.forward(scan::apply_plan(x, plan)), plan);
        out = out.defined() ? add(out, grid) : grid;
    }
    return out;
}

scan::ScanSpec across_spec(int64_t atrous_step) {
    scan::ScanSpec spec;
    spec.atrous_step = atrous_step;
    spec.directions = {scan::Direction::TLHorizontal, scan::Direction::TLVertical,
                       scan::Direction::BRHorizontal, scan::Direction::BRVertical};
    return spec;
}

scan::ScanSpec vallian_spec(int64_t atrous_step) {
    scan::ScanSpec spec;
    spec.atrous_step = atrous_step;
    spec.directions = {scan::Direction::TLHorizontal};
    return spec;
}

scan::ScanSpec efficient_spec() {
    scan::ScanSpec spec;
    spec.atrous_step = 2;
    spec.directions = {scan::Direction::TLHorizontal};
    spec.per_subimage_directions = {scan::Direction::TLHorizontal, scan::Direction::TLHorizontal,
                                    scan::Direction::TLVertical, scan::Direction::TLVertical};
    return spec;
}

#define ASPVM_INSTANTIATE_SSM(T)                                                             \
    template Tensor<T> selective_scan(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                      const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);\
    template Tensor<T> across_mamba(const Tensor<T>&, const std::vector<scan::PlanPtr>&,    \
                                    const MambaCore<T>&);                                   \
    template class MambaCore<T>;                                                            \
    template class AtrousMamba<T>;

ASPVM_INSTANTIATE_SSM(float)
ASPVM_INSTANTIATE_SSM(double)

#undef ASPVM_INSTANTIATE_SSM

}  // namespace aspvm::ssm
