#pragma once

#include <memory>
#include <string>

#include "aspvm/ssm.hpp"

namespace aspvm::blocks {

enum class ScanMethod { Vallian, Across, Efficient };

enum class ShiftMode {
    None,   // plain 4-segment parallel block
    Round,  // circular channel rotation by C/8 around the shared core
    Split,  // non-circular: edge C/8 segments go through a second small core
};

struct BlockConfig {
    int64_t channels = 0;
    int64_t segments = 4;
    int64_t atrous_step = 2;
    double theta_init = 1.0;
    bool use_shift_noncircular = false;
    bool use_shift_round = false;
    bool use_atrous = false;
    bool use_cnn_branch = false;
    bool use_se = false;
    bool use_sk = false;
    int64_t se_reduction = 16;
    int64_t sk_reduction = 16;
    ScanMethod scan_method = ScanMethod::Vallian;

    void validate() const;
    int64_t effective_step() const;
    scan::ScanSpec scan_spec() const;
};

// Circular rotation of the channel axis by C/8 (and its exact inverse), the
// segment-recombination step between chunking and the shared core.
template <typename T> Tensor<T> shift_round(const Tensor<T>& x);
template <typename T> Tensor<T> shift_round_back(const Tensor<T>& x);

// Channel-chunked parallel Mamba branch: LN -> (optional shift) -> chunk into
// 4 segments -> one shared AtrousMamba per segment -> concat -> (optional
// un-shift) -> + theta * input -> Linear(LN(.)).
template <typename T>
class ParallelMamba {
public:
    ParallelMamba(const BlockConfig& cfg, ShiftMode mode, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x, int64_t h, int64_t w) const;  // B x L x C

    void register_params(ParamRegistry<T>& reg, const std::string& prefix);
    int64_t param_count() const;
    ShiftMode mode() const { return mode_; }

    // test hook: bypasses the cores so the block reduces to its wiring
    void set_identity_stub(bool on) { identity_stub_ = on; }
    ssm::AtrousMamba<T>& mamba() { return *mamba_; }

private:
    int64_t channels_;
    ShiftMode mode_;
    Tensor<T> ln1_g_, ln1_b_;
    std::unique_ptr<ssm::AtrousMamba<T>> mamba_;       // width C/4
    std::unique_ptr<ssm::AtrousMamba<T>> edge_mamba_;  // width C/8, Split only
    Tensor<T> theta_;
    Tensor<T> ln2_g_, ln2_b_;
    Tensor<T> tail_w_, tail_b_;
    bool identity_stub_ = false;
};

// Depthwise 3x3 -> BatchNorm -> GELU -> 1x1.
template <typename T>
class CnnBranch {
public:
    CnnBranch(int64_t channels, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x, bool training);

    void register_params(ParamRegistry<T>& reg, const std::string& prefix);
    void register_buffers(BufferRegistry<T>& reg, const std::string& prefix);
    int64_t param_count() const;

private:
    int64_t channels_;
    Tensor<T> dw_w_;
    Tensor<T> bn_g_, bn_b_;
    std::vector<T> bn_mean_, bn_var_;
    Tensor<T> pw_w_, pw_b_;
};

// Channel gating: LN -> GAP -> squeeze/excite linears -> sigmoid -> scale.
template <typename T>
class SqueezeExcite {
public:
    SqueezeExcite(int64_t channels, int64_t reduction, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x) const;  // B x C x H x W

    void register_params(ParamRegistry<T>& reg, const std::string& prefix);
    int64_t param_count() const;

private:
    int64_t channels_, hidden_;
    Tensor<T> ln_g_, ln_b_;
    Tensor<T> w1_, b1_, w2_, b2_;
};

// Two-branch fusion: per-channel softmax weights over (global, local) from a
// squeezed descriptor of their sum; output is the convex combination.
template <typename T>
class SelectiveKernelFusion {
public:
    SelectiveKernelFusion(int64_t channels, int64_t reduction, Rng& rng);

    Tensor<T> forward(const Tensor<T>& global_f, const Tensor<T>& local_f) const;

    void register_params(ParamRegistry<T>& reg, const std::string& prefix);
    int64_t param_count() const;

private:
    int64_t channels_, hidden_;
    Tensor<T> w1_, b1_;
    Tensor<T> wg_, bg_, wl_, bl_;
};

// Two repeats of (Mamba branch || CNN branch) -> shared SE -> SK fusion.
// Repeat 1 uses the plain parallel block, repeat 2 the shifted one.
template <typename T>
class AspBlock {
public:
    AspBlock(const BlockConfig& cfg, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x, bool training);  // B x C x H x W

    void register_params(ParamRegistry<T>& reg, const std::string& prefix);
    void register_buffers(BufferRegistry<T>& reg, const std::string& prefix);
    int64_t param_count() const;

    const BlockConfig& config() const { return cfg_; }
    ParallelMamba<T>& repeat_mamba(int i) { return i == 0 ? *pm1_ : *pm2_; }

private:
    Tensor<T> run_repeat(const Tensor<T>& x, ParallelMamba<T>& pm, CnnBranch<T>* cnn,
                         SqueezeExcite<T>* se, SelectiveKernelFusion<T>* sk, bool training);

    BlockConfig cfg_;
    std::unique_ptr<ParallelMamba<T>> pm1_, pm2_;
    std::unique_ptr<CnnBranch<T>> cnn1_, cnn2_;
    std::unique_ptr<SqueezeExcite<T>> se1_, se2_;
    std::unique_ptr<SelectiveKernelFusion<T>> sk1_, sk2_;
};

}  // namespace aspvm::blocks
