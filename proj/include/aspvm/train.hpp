#pragma once

#include <ostream>
#include <vector>

#include "aspvm/checkpoint.hpp"
#include "aspvm/data.hpp"
#include "aspvm/loss.hpp"
#include "aspvm/metrics.hpp"
#include "aspvm/network.hpp"

namespace aspvm::pipeline {

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 1e-2;
    int64_t t_max = 50;     // cosine schedule span
    double eta_min = 1e-5;  // schedule floor
    int64_t epochs = 50;
    int64_t batch_size = 8;
    uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
};

// Cosine annealing from lr to eta_min over t_max epochs, clamped at the
// floor afterwards.
double cosine_lr(const TrainConfig& tc, int64_t epoch);

struct EpochLog {
    int64_t epoch = 0;
    double lr = 0;
    double loss = 0;
    Metrics metrics;
};

// "epoch,lr,loss,miou,dsc,acc,spe,sen" rows.
std::string log_to_csv(const std::vector<EpochLog>& log);

// Decoupled weight decay; moments aligned with the registry walk order.
class AdamW {
public:
    AdamW(ParamRegistry<float>& params, const TrainConfig& tc);

    void step(double lr);

    uint64_t step_count() const { return step_; }
    void export_state(ckpt::TrainerState& out) const;
    void import_state(const ckpt::TrainerState& in);

private:
    ParamRegistry<float>& params_;
    TrainConfig tc_;
    uint64_t step_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

struct TrainResult {
    std::vector<EpochLog> log;
    ckpt::TrainerState state;
};

// Shuffled mini-batch training with per-sample augmentation streams keyed by
// (seed, epoch, sample index); the per-epoch metrics come from an
// inference-mode pass over the training set. Aborts with NumericError on a
// non-finite loss. Resuming from a saved state continues the same stream.
TrainResult train(net::Network<float>& network, const std::vector<Sample>& dataset,
                  const TrainConfig& tc, const ckpt::TrainerState* resume = nullptr,
                  std::ostream* progress = nullptr);

Metrics evaluate(net::Network<float>& network, const std::vector<Sample>& dataset,
                 const NormStats& stats, int64_t batch_size = 8);

}  // namespace aspvm::pipeline
