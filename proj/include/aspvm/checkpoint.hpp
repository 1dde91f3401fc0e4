#pragma once

#include <memory>
#include <string>
#include <vector>

#include "aspvm/network.hpp"

namespace aspvm::ckpt {

// Optimizer and run-progress state serialized alongside the parameters.
// The moment vectors are aligned with the network's parameter walk order.
struct TrainerState {
    uint64_t step = 0;
    std::vector<std::vector<float>> moment1;
    std::vector<std::vector<float>> moment2;
    uint64_t epoch = 0;
    std::string rng_state;
    std::vector<float> norm_mean;  // per-channel input normalization
    std::vector<float> norm_std;
};

// Self-describing binary container (little-endian): magic, format version,
// config as JSON text, named float32 parameter arrays, named float32 buffer
// arrays (batch-norm running stats), optional optimizer state, epoch, RNG
// stream state, optional normalization constants. See docs/checkpoint.md.
void save_checkpoint(const std::string& path, net::Network<float>& network,
                     const TrainerState* state = nullptr);

struct LoadedCheckpoint {
    net::NetworkConfig config;
    std::unique_ptr<net::Network<float>> network;
    TrainerState state;
    bool has_state = false;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Rejects the file when its config differs from `expected`, naming the
// mismatched fields.
LoadedCheckpoint load_checkpoint(const std::string& path, const net::NetworkConfig& expected);

}  // namespace aspvm::ckpt
