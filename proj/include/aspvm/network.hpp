#pragma once

#include <memory>
#include <string>
#include <vector>

#include "aspvm/attention.hpp"
#include "aspvm/blocks.hpp"

namespace aspvm::net {

struct NetworkConfig {
    std::vector<int64_t> stage_channels = {32, 64, 96, 128, 256, 384};
    std::vector<int64_t> encoder_depths = {1, 1, 1, 1, 3, 1};
    int64_t atrous_step = 2;
    int64_t input_h = 256;
    int64_t input_w = 256;
    std::string scan_method = "vallian";  // vallian | across | efficient
    bool use_shift_noncircular = false;
    bool use_shift_round = true;
    bool use_atrous = true;
    bool use_cnn_branch = true;
    bool use_se = true;
    bool use_sk = true;
    int64_t se_reduction = 16;
    int64_t sk_reduction = 16;
    double theta_init = 1.0;
    std::string variant = "base";

    static NetworkConfig base();
    static NetworkConfig tiny();

    void validate() const;
    blocks::BlockConfig block_config(int64_t channels) const;
    blocks::ScanMethod scan_method_enum() const;

    std::string to_json() const;
    static NetworkConfig from_json(const std::string& text);
    // Field names whose values differ between the two configs.
    static std::vector<std::string> diff(const NetworkConfig& a, const NetworkConfig& b);
};

// Per-component multiply-accumulate estimate. Covers convolutions, linear
// projections (including the per-sub-image ones), and the state recurrence,
// all at unpadded token counts; normalizations, activations, pooling and
// resampling are excluded. Padding slots are not counted, so the estimate is
// exactly invariant in the atrous step.
struct FlopReport {
    int64_t conv = 0;
    int64_t linear = 0;
    int64_t scan = 0;
    int64_t total() const { return conv + linear + scan; }
};

FlopReport count_flops(const NetworkConfig& cfg, int64_t input_h, int64_t input_w);

// Parameter totals by component, for the accounting report.
struct ParamBreakdown {
    int64_t cores = 0;            // shared sequence cores
    int64_t subimage_proj = 0;    // per-sub-image input projections
    int64_t mamba_branch_rest = 0;
    int64_t cnn_branch = 0;
    int64_t se = 0;
    int64_t sk = 0;
    int64_t stem_and_resample = 0;
    int64_t skip_attention = 0;
    int64_t head = 0;
    int64_t total = 0;
};

// Six encoder stages (stage 1 convolutional, 2-6 scan blocks), a mirrored
// one-block-per-stage decoder, shared-weight skip attention, sigmoid head.
template <typename T>
class Network {
public:
    Network(const NetworkConfig& cfg, Rng& rng);

    // image: B x 3 x H x W with H, W divisible by 32 -> B x 1 x H x W in (0,1)
    Tensor<T> forward(const Tensor<T>& image, bool training);

    const NetworkConfig& config() const { return cfg_; }
    ParamRegistry<T>& params() { return params_; }
    BufferRegistry<T>& buffers() { return buffers_; }
    int64_t param_count() const { return params_.total_count(); }
    ParamBreakdown param_breakdown() const;

private:
    struct ConvBnGelu {
        Tensor<T> conv_w, conv_b;
        Tensor<T> bn_g, bn_b;
        std::vector<T> bn_mean, bn_var;
    };
    struct Resample {
        Tensor<T> conv_w, conv_b;
    };

    Tensor<T> conv_stage(ConvBnGelu& blk, const Tensor<T>& x, bool training);

    NetworkConfig cfg_;
    std::vector<ConvBnGelu> stem_;                   // encoder stage 1
    std::vector<Resample> down_;                     // 5 transitions
    std::vector<std::vector<blocks::AspBlock<T>>> enc_;  // stages 2..6
    attention::SpatialAttention<T> sab_;
    attention::ChannelAttention<T> cab_;
    std::unique_ptr<blocks::AspBlock<T>> dec6_;
    std::vector<Resample> up_;                       // 5 transitions
    std::vector<std::unique_ptr<blocks::AspBlock<T>>> dec_;  // stages 5..2
    ConvBnGelu dec1_;
    Tensor<T> head_w_, head_b_;
    ParamRegistry<T> params_;
    BufferRegistry<T> buffers_;
};

}  // namespace aspvm::net
