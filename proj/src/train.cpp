#include "aspvm/train.hpp"

#include <cmath>
#include <cstdio>

namespace aspvm::pipeline {

void TrainConfig::validate() const {
    if (lr <= 0 || weight_decay < 0 || t_max < 1 || eta_min <= 0 || epochs < 1 ||
        batch_size < 1 || beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1 || adam_eps <= 0) {
        throw ConfigError("TrainConfig: all fields must be positive (betas in (0,1))");
    }
}

double cosine_lr(const TrainConfig& tc, int64_t epoch) {
    const int64_t t = std::min(epoch, tc.t_max);
    const double cosv = std::cos(M_PI * static_cast<double>(t) / static_cast<double>(tc.t_max));
    return tc.eta_min + (tc.lr - tc.eta_min) * 0.5 * (1.0 + cosv);
}

std::string log_to_csv(const std::vector<EpochLog>& log) {
    std::string out = "epoch,lr,loss,miou,dsc,acc,spe,sen\n";
    char buf[256];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof(buf), "%lld,%.10g,%.8f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                      static_cast<long long>(e.epoch), e.lr, e.loss, e.metrics.miou(),
                      e.metrics.dsc(), e.metrics.acc(), e.metrics.spe(), e.metrics.sen());
        out += buf;
    }
    return out;
}

AdamW::AdamW(ParamRegistry<float>& params, const TrainConfig& tc) : params_(params), tc_(tc) {
    for (const auto& p : params_.items()) {
        m_.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0f);
        v_.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0f);
    }
}

void AdamW::step(double lr) {
    ++step_;
    const double bias1 = 1.0 - std::pow(tc_.beta1, static_cast<double>(step_));
    const double bias2 = 1.0 - std::pow(tc_.beta2, static_cast<double>(step_));
    auto& items = params_.items();
    for (size_t i = 0; i < items.size(); ++i) {
        auto& t = items[i].tensor;
        if (t.grad().empty()) continue;
        float* w = t.data();
        const float* g = t.grad().data();
        float* m = m_[i].data();
        float* v = v_[i].data();
        const int64_t n = t.numel();
        for (int64_t j = 0; j < n; ++j) {
            m[j] = static_cast<float>(tc_.beta1 * m[j] + (1.0 - tc_.beta1) * g[j]);
            v[j] = static_cast<float>(tc_.beta2 * v[j] +
                                      (1.0 - tc_.beta2) * static_cast<double>(g[j]) * g[j]);
            const double mhat = m[j] / bias1;
            const double vhat = v[j] / bias2;
            const double update = mhat / (std::sqrt(vhat) + tc_.adam_eps);
            w[j] = static_cast<float>(w[j] - lr * update - lr * tc_.weight_decay * w[j]);
        }
    }
}

void AdamW::export_state(ckpt::TrainerState& out) const {
    out.step = step_;
    out.moment1 = m_;
    out.moment2 = v_;
}

void AdamW::import_state(const ckpt::TrainerState& in) {
    if (in.moment1.size() != m_.size() || in.moment2.size() != v_.size()) {
        throw ConfigError("AdamW: resumed optimizer state has wrong parameter count");
    }
    step_ = in.step;
    m_ = in.moment1;
    v_ = in.moment2;
}

namespace {

// Assemble one batch (leaf tensors) from augmented samples.
struct Batch {
    Tensor<float> images;
    Tensor<float> masks;
};

Batch make_batch(const std::vector<Sample>& samples, const std::vector<int64_t>& indices,
                 size_t begin, size_t end) {
    const int64_t b = static_cast<int64_t>(end - begin);
    const auto& first = samples[static_cast<size_t>(indices[begin])];
    const int64_t h = first.image.dim(1), w = first.image.dim(2);
    std::vector<float> img(static_cast<size_t>(b * 3 * h * w));
    std::vector<float> msk(static_cast<size_t>(b * h * w));
    for (size_t i = begin; i < end; ++i) {
        const auto& s = samples[static_cast<size_t>(indices[i])];
        std::copy(s.image.data(), s.image.data() + 3 * h * w,
                  img.data() + static_cast<int64_t>(i - begin) * 3 * h * w);
        std::copy(s.mask.data(), s.mask.data() + h * w,
                  msk.data() + static_cast<int64_t>(i - begin) * h * w);
    }
    return {Tensor<float>::from_data({b, 3, h, w}, std::move(img)),
            Tensor<float>::from_data({b, 1, h, w}, std::move(msk))};
}

}  // namespace

Metrics evaluate(net::Network<float>& network, const std::vector<Sample>& dataset,
                 const NormStats& stats, int64_t batch_size) {
    NoGradGuard ng;
    Metrics total;
    std::vector<int64_t> order(dataset.size());
    for (size_t i = 0; i < dataset.size(); ++i) order[i] = static_cast<int64_t>(i);
    std::vector<Sample> normalized;
    normalized.reserve(dataset.size());
    for (const auto& s : dataset) {
        normalized.push_back({normalize_image(s.image, stats), s.mask, s.id});
    }
    for (size_t begin = 0; begin < normalized.size();
         begin += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(normalized.size(), begin + static_cast<size_t>(batch_size));
        auto batch = make_batch(normalized, order, begin, end);
        auto pred = network.forward(batch.images, false);
        total.accumulate(compute_metrics(pred, batch.masks));
    }
    return total;
}

TrainResult train(net::Network<float>& network, const std::vector<Sample>& dataset,
                  const TrainConfig& tc, const ckpt::TrainerState* resume,
                  std::ostream* progress) {
    tc.validate();
    if (dataset.empty()) throw ConfigError("train: dataset is empty");

    NormStats stats;
    if (resume && resume->norm_mean.size() == 3) {
        for (int c = 0; c < 3; ++c) {
            stats.mean[static_cast<size_t>(c)] = resume->norm_mean[static_cast<size_t>(c)];
            stats.stddev[static_cast<size_t>(c)] = resume->norm_std[static_cast<size_t>(c)];
        }
    } else {
        stats = compute_norm_stats(dataset);
    }

    Rng rng(tc.seed);
    AdamW opt(network.params(), tc);
    int64_t start_epoch = 0;
    if (resume) {
        opt.import_state(*resume);
        rng.deserialize(resume->rng_state);
        start_epoch = static_cast<int64_t>(resume->epoch);
    }

    TrainResult result;
    for (int64_t epoch = start_epoch; epoch < tc.epochs; ++epoch) {
        const double lr = cosine_lr(tc, epoch);
        std::vector<int64_t> order(dataset.size());
        for (size_t i = 0; i < dataset.size(); ++i) order[i] = static_cast<int64_t>(i);
        for (size_t i = dataset.size(); i > 1; --i) {  // Fisher-Yates under the run RNG
            const size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1));
            std::swap(order[i - 1], order[j]);
        }

        double loss_sum = 0.0;
        int64_t seen = 0, step_in_epoch = 0;
        for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(tc.batch_size)) {
            const size_t end = std::min(order.size(), begin + static_cast<size_t>(tc.batch_size));
            std::vector<Sample> augmented;
            augmented.reserve(end - begin);
            std::vector<int64_t> local(end - begin);
            for (size_t i = begin; i < end; ++i) {
                Rng srng = derive_rng(tc.seed, static_cast<uint64_t>(epoch),
                                      static_cast<uint64_t>(order[i]));
                augmented.push_back(augment(dataset[static_cast<size_t>(order[i])], srng, stats));
                local[i - begin] = static_cast<int64_t>(i - begin);
            }
            auto batch = make_batch(augmented, local, 0, local.size());
            auto pred = network.forward(batch.images, true);
            auto loss = bce_dice_loss(pred, batch.masks);
            const double loss_val = loss.item();
            if (!std::isfinite(loss_val)) {
                throw NumericError("train: loss diverged at epoch " + std::to_string(epoch) +
                                   ", step " + std::to_string(step_in_epoch));
            }
            network.params().zero_grad();
            loss.backward();
            opt.step(lr);
            loss_sum += loss_val * static_cast<double>(end - begin);
            seen += static_cast<int64_t>(end - begin);
            ++step_in_epoch;
        }

        EpochLog entry;
        entry.epoch = epoch;
        entry.lr = lr;
        entry.loss = loss_sum / static_cast<double>(seen);
        entry.metrics = evaluate(network, dataset, stats, tc.batch_size);
        result.log.push_back(entry);
        if (progress) {
            char buf[256];
            std::snprintf(buf, sizeof(buf), "epoch %3lld  lr %.6f  loss %.5f  %s\n",
                          static_cast<long long>(epoch), lr, entry.loss,
                          format_metrics(entry.metrics).c_str());
            (*progress) << buf << std::flush;
        }
    }

    opt.export_state(result.state);
    result.state.epoch = static_cast<uint64_t>(tc.epochs);
    result.state.rng_state = rng.serialize();
    result.state.norm_mean.assign(stats.mean.begin(), stats.mean.end());
    result.state.norm_std.assign(stats.stddev.begin(), stats.stddev.end());
    return result;
}

}  // namespace aspvm::pipeline
