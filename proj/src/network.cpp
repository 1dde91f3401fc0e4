#include "aspvm/network.hpp"

#include <cmath>

#include <json.hpp>

namespace aspvm::net {

using nlohmann::json;

NetworkConfig NetworkConfig::base() {
    NetworkConfig cfg;
    cfg.variant = "base";
    return cfg;
}

NetworkConfig NetworkConfig::tiny() {
    NetworkConfig cfg;
    cfg.stage_channels = {8, 16, 24, 32, 48, 64};
    cfg.variant = "tiny";
    return cfg;
}

void NetworkConfig::validate() const {
    if (stage_channels.size() != 6) {
        throw ConfigError("network.stage_channels: expected 6 entries, got " +
                          std::to_string(stage_channels.size()));
    }
    for (size_t k = 1; k < 6; ++k) {
        // stage 1 is convolutional and exempt from the segment constraint
        if (stage_channels[k] <= 0 || stage_channels[k] % 8 != 0) {
            throw ConfigError("network.stage_channels[" + std::to_string(k) +
                              "]: stage " + std::to_string(k + 1) +
                              " must be a positive multiple of 8, got " +
                              std::to_string(stage_channels[k]));
        }
    }
    if (stage_channels[0] <= 0) {
        throw ConfigError("network.stage_channels[0]: must be positive");
    }
    if (encoder_depths.size() != 6) {
        throw ConfigError("network.encoder_depths: expected 6 entries, got " +
                          std::to_string(encoder_depths.size()));
    }
    for (size_t k = 0; k < 6; ++k) {
        if (encoder_depths[k] < 1) {
            throw ConfigError("network.encoder_depths[" + std::to_string(k) + "]: must be >= 1");
        }
    }
    if (input_h <= 0 || input_w <= 0 || input_h % 32 != 0 || input_w % 32 != 0) {
        throw ConfigError("network.input size: H and W must be positive multiples of 32, got " +
                          std::to_string(input_h) + "x" + std::to_string(input_w));
    }
    if (atrous_step < 1) {
        throw ConfigError("network.atrous_step: must be >= 1, got " + std::to_string(atrous_step));
    }
    if (scan_method != "vallian" && scan_method != "across" && scan_method != "efficient") {
        throw ConfigError("network.scan_method: expected vallian|across|efficient, got '" +
                          scan_method + "'");
    }
    block_config(stage_channels[1]).validate();
}

blocks::ScanMethod NetworkConfig::scan_method_enum() const {
    if (scan_method == "across") return blocks::ScanMethod::Across;
    if (scan_method == "efficient") return blocks::ScanMethod::Efficient;
    return blocks::ScanMethod::Vallian;
}

blocks::BlockConfig NetworkConfig::block_config(int64_t channels) const {
    blocks::BlockConfig cfg;
    cfg.channels = channels;
    cfg.atrous_step = atrous_step;
    cfg.theta_init = theta_init;
    cfg.use_shift_noncircular = use_shift_noncircular;
    cfg.use_shift_round = use_shift_round;
    cfg.use_atrous = use_atrous;
    cfg.use_cnn_branch = use_cnn_branch;
    cfg.use_se = use_se;
    cfg.use_sk = use_sk;
    cfg.se_reduction = se_reduction;
    cfg.sk_reduction = sk_reduction;
    cfg.scan_method = scan_method_enum();
    return cfg;
}

std::string NetworkConfig::to_json() const {
    json j;
    j["stage_channels"] = stage_channels;
    j["encoder_depths"] = encoder_depths;
    j["atrous_step"] = atrous_step;
    j["input_h"] = input_h;
    j["input_w"] = input_w;
    j["scan_method"] = scan_method;
    j["use_shift_noncircular"] = use_shift_noncircular;
    j["use_shift_round"] = use_shift_round;
    j["use_atrous"] = use_atrous;
    j["use_cnn_branch"] = use_cnn_branch;
    j["use_se"] = use_se;
    j["use_sk"] = use_sk;
    j["se_reduction"] = se_reduction;
    j["sk_reduction"] = sk_reduction;
    j["theta_init"] = theta_init;
    j["variant"] = variant;
    return j.dump(2);
}

NetworkConfig NetworkConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    NetworkConfig cfg;
    cfg.stage_channels = j.at("stage_channels").get<std::vector<int64_t>>();
    cfg.encoder_depths = j.at("encoder_depths").get<std::vector<int64_t>>();
    cfg.atrous_step = j.at("atrous_step").get<int64_t>();
    cfg.input_h = j.at("input_h").get<int64_t>();
    cfg.input_w = j.at("input_w").get<int64_t>();
    cfg.scan_method = j.at("scan_method").get<std::string>();
    cfg.use_shift_noncircular = j.at("use_shift_noncircular").get<bool>();
    cfg.use_shift_round = j.at("use_shift_round").get<bool>();
    cfg.use_atrous = j.at("use_atrous").get<bool>();
    cfg.use_cnn_branch = j.at("use_cnn_branch").get<bool>();
    cfg.use_se = j.at("use_se").get<bool>();
    cfg.use_sk = j.at("use_sk").get<bool>();
    cfg.se_reduction = j.at("se_reduction").get<int64_t>();
    cfg.sk_reduction = j.at("sk_reduction").get<int64_t>();
    cfg.theta_init = j.at("theta_init").get<double>();
    cfg.variant = j.at("variant").get<std::string>();
    return cfg;
}

std::vector<std::string> NetworkConfig::diff(const NetworkConfig& a, const NetworkConfig& b) {
    std::vector<std::string> fields;
    auto cmp = [&fields](const std::string& name, const auto& x, const auto& y) {
        if (x != y) fields.push_back(name);
    };
    cmp("stage_channels", a.stage_channels, b.stage_channels);
    cmp("encoder_depths", a.encoder_depths, b.encoder_depths);
    cmp("atrous_step", a.atrous_step, b.atrous_step);
    cmp("input_h", a.input_h, b.input_h);
    cmp("input_w", a.input_w, b.input_w);
    cmp("scan_method", a.scan_method, b.scan_method);
    cmp("use_shift_noncircular", a.use_shift_noncircular, b.use_shift_noncircular);
    cmp("use_shift_round", a.use_shift_round, b.use_shift_round);
    cmp("use_atrous", a.use_atrous, b.use_atrous);
    cmp("use_cnn_branch", a.use_cnn_branch, b.use_cnn_branch);
    cmp("use_se", a.use_se, b.use_se);
    cmp("use_sk", a.use_sk, b.use_sk);
    cmp("se_reduction", a.se_reduction, b.se_reduction);
    cmp("sk_reduction", a.sk_reduction, b.sk_reduction);
    cmp("theta_init", a.theta_init, b.theta_init);
    cmp("variant", a.variant, b.variant);
    return fields;
}

namespace {
const NetworkConfig& validated(const NetworkConfig& cfg) {
    cfg.validate();
    return cfg;
}

std::vector<int64_t> skip_channels(const NetworkConfig& cfg) {
    return {cfg.stage_channels[0], cfg.stage_channels[1], cfg.stage_channels[2],
            cfg.stage_channels[3], cfg.stage_channels[4]};
}
}  // namespace

template <typename T>
Network<T>::Network(const NetworkConfig& cfg, Rng& rng)
    : cfg_(validated(cfg)), sab_(rng), cab_(skip_channels(cfg_), rng) {
    const auto& ch = cfg_.stage_channels;

    auto make_conv_block = [&](int64_t c_in, int64_t c_out) {
        ConvBnGelu blk;
        blk.conv_w = init_conv2d_weight<T>(c_out, c_in, 3, 3, rng);
        blk.conv_b = init_uniform<T>({c_out}, 1.0 / std::sqrt(9.0 * static_cast<double>(c_in)), rng);
        blk.bn_g = init_const<T>({c_out}, T(1));
        blk.bn_b = init_const<T>({c_out}, T(0));
        blk.bn_mean.assign(static_cast<size_t>(c_out), T(0));
        blk.bn_var.assign(static_cast<size_t>(c_out), T(1));
        return blk;
    };
    auto make_resample = [&](int64_t c_in, int64_t c_out) {
        Resample r;
        r.conv_w = init_conv2d_weight<T>(c_out, c_in, 1, 1, rng);
        r.conv_b = init_uniform<T>({c_out}, 1.0 / std::sqrt(static_cast<double>(c_in)), rng);
        return r;
    };

    for (int64_t j = 0; j < cfg_.encoder_depths[0]; ++j) {
        stem_.push_back(make_conv_block(j == 0 ? 3 : ch[0], ch[0]));
    }
    for (size_t k = 0; k < 5; ++k) down_.push_back(make_resample(ch[k], ch[k + 1]));
    enc_.resize(5);
    for (size_t k = 0; k < 5; ++k) {
        const int64_t depth = cfg_.encoder_depths[k + 1];
        for (int64_t j = 0; j < depth; ++j) {
            enc_[k].emplace_back(cfg_.block_config(ch[k + 1]), rng);
        }
    }
    dec6_ = std::make_unique<blocks::AspBlock<T>>(cfg_.block_config(ch[5]), rng);
    for (size_t k = 0; k < 5; ++k) up_.push_back(make_resample(ch[5 - k], ch[4 - k]));
    for (size_t k = 0; k < 4; ++k) {
        // decoder stages 5..2, one block each
        dec_.push_back(
            std::make_unique<blocks::AspBlock<T>>(cfg_.block_config(ch[4 - k]), rng));
    }
    dec1_ = make_conv_block(ch[0], ch[0]);
    head_w_ = init_conv2d_weight<T>(1, ch[0], 1, 1, rng);
    head_b_ = init_uniform<T>({1}, 1.0 / std::sqrt(static_cast<double>(ch[0])), rng);

    // registries (fixed walk order defines the checkpoint layout)
    for (size_t j = 0; j < stem_.size(); ++j) {
        const std::string p = "enc.stage1.block" + std::to_string(j + 1);
        params_.add(p + ".conv.weight", stem_[j].conv_w);
        params_.add(p + ".conv.bias", stem_[j].conv_b);
        params_.add(p + ".bn.gamma", stem_[j].bn_g);
        params_.add(p + ".bn.beta", stem_[j].bn_b);
        buffers_.add(p + ".bn.running_mean", &stem_[j].bn_mean);
        buffers_.add(p + ".bn.running_var", &stem_[j].bn_var);
    }
    for (size_t k = 0; k < 5; ++k) {
        const std::string p = "enc.down" + std::to_string(k + 1);
        params_.add(p + ".conv.weight", down_[k].conv_w);
        params_.add(p + ".conv.bias", down_[k].conv_b);
    }
    for (size_t k = 0; k < 5; ++k) {
        for (size_t j = 0; j < enc_[k].size(); ++j) {
            const std::string p =
                "enc.stage" + std::to_string(k + 2) + ".block" + std::to_string(j + 1);
            enc_[k][j].register_params(params_, p);
            enc_[k][j].register_buffers(buffers_, p);
        }
    }
    sab_.register_params(params_, "skip.sab");
    cab_.register_params(params_, "skip.cab");
    dec6_->register_params(params_, "dec.stage6.block1");
    dec6_->register_buffers(buffers_, "dec.stage6.block1");
    for (size_t k = 0; k < 5; ++k) {
        const std::string p = "dec.up" + std::to_string(5 - k);
        params_.add(p + ".conv.weight", up_[k].conv_w);
        params_.add(p + ".conv.bias", up_[k].conv_b);
    }
    for (size_t k = 0; k < 4; ++k) {
        const std::string p = "dec.stage" + std::to_string(5 - k) + ".block1";
        dec_[k]->register_params(params_, p);
        dec_[k]->register_buffers(buffers_, p);
    }
    params_.add("dec.stage1.block1.conv.weight", dec1_.conv_w);
    params_.add("dec.stage1.block1.conv.bias", dec1_.conv_b);
    params_.add("dec.stage1.block1.bn.gamma", dec1_.bn_g);
    params_.add("dec.stage1.block1.bn.beta", dec1_.bn_b);
    buffers_.add("dec.stage1.block1.bn.running_mean", &dec1_.bn_mean);
    buffers_.add("dec.stage1.block1.bn.running_var", &dec1_.bn_var);
    params_.add("head.conv.weight", head_w_);
    params_.add("head.conv.bias", head_b_);
}

template <typename T>
Tensor<T> Network<T>::conv_stage(ConvBnGelu& blk, const Tensor<T>& x, bool training) {
    auto y = conv2d(x, blk.conv_w, blk.conv_b, {.stride = 1, .padding = 1});
    y = training ? batch_norm_train(y, blk.bn_g, blk.bn_b, blk.bn_mean, blk.bn_var)
                 : batch_norm_infer(y, blk.bn_g, blk.bn_b, blk.bn_mean, blk.bn_var);
    return gelu(y);
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& image, bool training) {
    if (image.ndim() != 4 || image.dim(1) != 3) {
        throw DimensionError("Network: expected B x 3 x H x W, got " + shape_str(image.shape()));
    }
    if (image.dim(2) % 32 != 0 || image.dim(3) % 32 != 0) {
        throw DimensionError("Network: spatial size " + std::to_string(image.dim(2)) + "x" +
                             std::to_string(image.dim(3)) + " must be divisible by 32");
    }
    auto x = image;
    for (auto& blk : stem_) x = conv_stage(blk, x, training);
    std::vector<Tensor<T>> skips;
    skips.push_back(x);
    for (size_t k = 0; k < 5; ++k) {
        x = conv2d(maxpool2x2(x), down_[k].conv_w, down_[k].conv_b, {});
        for (auto& block : enc_[k]) x = block.forward(x, training);
        if (k < 4) skips.push_back(x);
    }
    // x is the stage-6 output at 1/32 resolution
    std::vector<Tensor<T>> attended;
    for (auto& s : skips) attended.push_back(sab_.forward(s));
    auto fused = cab_.forward(attended);

    auto d = dec6_->forward(x, training);
    for (size_t k = 0; k < 5; ++k) {
        d = conv2d(upsample_bilinear2x(d), up_[k].conv_w, up_[k].conv_b, {});
        d = add(d, fused[4 - k]);
        if (k < 4) {
            d = dec_[k]->forward(d, training);
        } else {
            d = conv_stage(dec1_, d, training);
        }
    }
    return sigmoid(conv2d(d, head_w_, head_b_, {}));
}

template <typename T>
ParamBreakdown Network<T>::param_breakdown() const {
    ParamBreakdown b;
    for (const auto& p : params_.items()) {
        const auto& n = p.name;
        const int64_t c = p.tensor.numel();
        b.total += c;
        if (n.find("subimage_proj") != std::string::npos) {
            b.subimage_proj += c;
        } else if (n.find(".mamba.core.") != std::string::npos ||
                   n.find(".edge_mamba.core.") != std::string::npos) {
            b.cores += c;
        } else if (n.find(".mamba_branch.") != std::string::npos) {
            b.mamba_branch_rest += c;
        } else if (n.find(".cnn_branch.") != std::string::npos) {
            b.cnn_branch += c;
        } else if (n.find(".se.") != std::string::npos) {
            b.se += c;
        } else if (n.find(".sk.") != std::string::npos) {
            b.sk += c;
        } else if (n.rfind("skip.", 0) == 0) {
            b.skip_attention += c;
        } else if (n.rfind("head.", 0) == 0) {
            b.head += c;
        } else {
            b.stem_and_resample += c;
        }
    }
    return b;
}

// --------------------------------------------------------- flop estimate ----

FlopReport count_flops(const NetworkConfig& cfg, int64_t input_h, int64_t input_w) {
    cfg.validate();
    FlopReport r;
    const auto& ch = cfg.stage_channels;
    const int64_t n_dir = cfg.scan_method == "across" ? 4 : 1;

    auto tokens_at = [&](int k) {  // stage index 1..6
        return (input_h >> (k - 1)) * (input_w >> (k - 1));
    };
    auto hidden = [](int64_t c, int64_t red) { return std::max<int64_t>(4, c / red); };

    // one shifted/plain parallel block on `tokens` positions at width C
    auto parallel_mamba = [&](int64_t tokens, int64_t c) {
        const int64_t d = c / 4;
        const int64_t d_inner = 2 * d;
        const int64_t rank = (d + 15) / 16;
        const int64_t n_state = 16;
        int64_t per_token = 0;
        per_token += d * d;                       // sub-image projection
        per_token += d * 2 * d_inner;             // in_proj
        per_token += d_inner * (rank + 2 * n_state);  // x_proj
        per_token += rank * d_inner;              // dt_proj
        per_token += d_inner * d;                 // out_proj
        r.linear += 4 * n_dir * tokens * per_token;
        r.conv += 4 * n_dir * tokens * d_inner * 4;            // causal conv, k=4
        r.scan += 4 * n_dir * tokens * 4 * d_inner * n_state;  // recurrence
        r.linear += tokens * c * c;               // tail
    };
    auto asp_block = [&](int64_t tokens, int64_t c) {
        for (int repeat = 0; repeat < 2; ++repeat) {
            parallel_mamba(tokens, c);
            if (cfg.use_cnn_branch) {
                r.conv += tokens * c * 9;      // depthwise 3x3
                r.conv += tokens * c * c;      // pointwise
            }
            if (cfg.use_se) r.linear += 2 * c * hidden(c, cfg.se_reduction);
            if (cfg.use_sk && cfg.use_cnn_branch)
                r.linear += 3 * c * hidden(c, cfg.sk_reduction);
        }
    };

    // encoder
    for (int64_t j = 0; j < cfg.encoder_depths[0]; ++j) {
        r.conv += tokens_at(1) * ch[0] * (j == 0 ? 3 : ch[0]) * 9;
    }
    for (int k = 1; k <= 5; ++k) r.conv += tokens_at(k + 1) * ch[k] * ch[k - 1];  // 1x1 down
    for (int k = 2; k <= 6; ++k) {
        for (int64_t j = 0; j < cfg.encoder_depths[static_cast<size_t>(k - 1)]; ++j) {
            asp_block(tokens_at(k), ch[static_cast<size_t>(k - 1)]);
        }
    }
    // skip attention
    for (int k = 1; k <= 5; ++k) r.conv += tokens_at(k) * 1 * 2 * 49;
    {
        int64_t sum_c = 0, sum_c2 = 0;
        for (int k = 0; k < 5; ++k) {
            sum_c += ch[static_cast<size_t>(k)];
            sum_c2 += ch[static_cast<size_t>(k)] * ch[static_cast<size_t>(k)];
        }
        r.linear += sum_c * 3 + sum_c2;
    }
    // decoder
    asp_block(tokens_at(6), ch[5]);
    for (int k = 5; k >= 1; --k) r.conv += tokens_at(k) * ch[static_cast<size_t>(k - 1)] * ch[static_cast<size_t>(k)];
    for (int k = 5; k >= 2; --k) asp_block(tokens_at(k), ch[static_cast<size_t>(k - 1)]);
    r.conv += tokens_at(1) * ch[0] * ch[0] * 9;  // decoder stage 1
    r.conv += tokens_at(1) * ch[0];              // head 1x1
    return r;
}

template class Network<float>;
template class Network<double>;

}  // namespace aspvm::net
