#pragma once

#include <string>
#include <vector>

#include "aspvm/module.hpp"
#include "aspvm/ops.hpp"
#include "aspvm/scan.hpp"

namespace aspvm::ssm {

// Selective state-space recurrence, processed strictly left to right:
//   h_t = exp(delta_t * A) . h_{t-1} + (delta_t * B_t) * u_t,   h_0 = 0
//   y_t = C_t . h_t + D . u_t
// u, delta: B x L x D;  A: D x N;  Bseq, Cseq: B x L x N;  skip: D.
// Throws NumericError naming the timestep if the state goes non-finite.
template <typename T>
Tensor<T> selective_scan(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& A,
                         const Tensor<T>& Bseq, const Tensor<T>& Cseq, const Tensor<T>& skip);

struct MambaHyper {
    int64_t d_state = 16;
    int64_t expand = 2;
    int64_t conv_kernel = 4;
    double dt_min = 1e-3;
    double dt_max = 0.1;

    int64_t dt_rank(int64_t d_model) const { return (d_model + 15) / 16; }
};

// One sequence-model block: in_proj -> (stream, gate); stream through a causal
// depthwise conv and SiLU into the selective scan; output gated by SiLU(gate)
// and projected back to d_model.
template <typename T>
class MambaCore {
public:
    MambaCore(int64_t d_model, Rng& rng, MambaHyper hyper = {});

    Tensor<T> forward(const Tensor<T>& x) const;  // B x L x d_model, shape-preserving

    void register_params(ParamRegistry<T>& reg, const std::string& prefix);
    int64_t param_count() const;

    int64_t d_model() const { return d_model_; }
    int64_t d_inner() const { return d_inner_; }

    // test hook: makes the block the zero map on zero-bias paths
    void zero_out_proj();

private:
    int64_t d_model_, d_inner_, d_state_, dt_rank_;
    Tensor<T> in_proj_w_;
    Tensor<T> conv_w_, conv_b_;
    Tensor<T> x_proj_w_;
    Tensor<T> dt_proj_w_, dt_proj_b_;
    Tensor<T> a_log_;
    Tensor<T> skip_;
    Tensor<T> out_proj_w_;
};

// Scan-plan wiring around a shared core: gather the grid into sub-sequences,
// apply the per-sub-image input projection, run the shared core over the
// stack, scatter back. Multiple directions are merged by elementwise sum.
template <typename T>
class AtrousMamba {
public:
    AtrousMamba(int64_t d_model, scan::ScanSpec spec, Rng& rng, MambaHyper hyper = {});

    // x: B x L x C with L == h*w (row-major grid).
    Tensor<T> forward(const Tensor<T>& x, int64_t h, int64_t w) const;

    void register_params(ParamRegistry<T>& reg, const std::string& prefix);
    int64_t param_count() const;
    int64_t projection_param_count() const;

    const scan::ScanSpec& spec() const { return spec_; }
    MambaCore<T>& core() { return core_; }

    // Stacking order of the sub-sequence batch; outputs are invariant to it.
    void set_seq_major_stacking(bool on) { seq_major_ = on; }

private:
    std::vector<scan::PlanPtr> resolve_plans(int64_t h, int64_t w) const;

    int64_t d_model_;
    scan::ScanSpec spec_;
    MambaCore<T> core_;
    std::vector<Tensor<T>> proj_w_;  // one per (direction, sub-image)
    std::vector<Tensor<T>> proj_b_;
    bool seq_major_ = false;
};

// Runs one shared core over several directional plans and merges the
// inverted grids by elementwise sum.
template <typename T>
Tensor<T> across_mamba(const Tensor<T>& x, const std::vector<scan::PlanPtr>& plans,
                       const MambaCore<T>& core);

// Four-direction spec (merged by sum), optionally composed with atrous
// sampling.
scan::ScanSpec across_spec(int64_t atrous_step = 1);
// Single forward raster, optionally with atrous sampling.
scan::ScanSpec vallian_spec(int64_t atrous_step = 1);
// Step-2 partition with mixed per-sub-image directions.
scan::ScanSpec efficient_spec();

}  // namespace aspvm::ssm
