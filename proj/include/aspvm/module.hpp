#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "aspvm/rng.hpp"
#include "aspvm/tensor.hpp"

namespace aspvm {

// Named trainable tensor. Names are hierarchical, e.g.
// "enc.stage5.block2.repeat1.mamba.core.in_proj.weight".
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> tensor;
};

template <typename T>
class ParamRegistry {
public:
    void add(const std::string& name, const Tensor<T>& t) {
        if (index_.count(name)) {
            throw ConfigError("duplicate parameter name: " + name);
        }
        index_[name] = items_.size();
        items_.push_back({name, t});
    }

    const std::vector<Parameter<T>>& items() const { return items_; }
    std::vector<Parameter<T>>& items() { return items_; }

    Tensor<T>* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &items_[it->second].tensor;
    }

    int64_t total_count() const {
        int64_t n = 0;
        for (const auto& p : items_) n += p.tensor.numel();
        return n;
    }

    // Sum of counts for parameters whose name contains `needle`.
    int64_t count_matching(const std::string& needle) const {
        int64_t n = 0;
        for (const auto& p : items_) {
            if (p.name.find(needle) != std::string::npos) n += p.tensor.numel();
        }
        return n;
    }

    void zero_grad() {
        for (auto& p : items_) p.tensor.zero_grad();
    }

private:
    std::vector<Parameter<T>> items_;
    std::unordered_map<std::string, size_t> index_;
};

// Non-trainable state serialized with checkpoints (BN running stats,
// normalization constants). Holds pointers into the owning modules.
template <typename T>
class BufferRegistry {
public:
    void add(const std::string& name, std::vector<T>* data) {
        if (index_.count(name)) {
            throw ConfigError("duplicate buffer name: " + name);
        }
        index_[name] = items_.size();
        items_.push_back({name, data});
    }

    struct Entry {
        std::string name;
        std::vector<T>* data;
    };

    const std::vector<Entry>& items() const { return items_; }
    std::vector<Entry>& items() { return items_; }

    std::vector<T>* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : items_[it->second].data;
    }

private:
    std::vector<Entry> items_;
    std::unordered_map<std::string, size_t> index_;
};

// ---- initialization ----

template <typename T>
Tensor<T> init_uniform(Shape shape, double bound, Rng& rng) {
    const int64_t n = numel_of(shape);
    std::vector<T> data(static_cast<size_t>(n));
    for (auto& v : data) v = static_cast<T>(rng.uniform(-bound, bound));
    auto t = Tensor<T>::from_data(std::move(shape), std::move(data));
    t.set_requires_grad(true);
    return t;
}

template <typename T>
Tensor<T> init_const(Shape shape, T value) {
    auto t = Tensor<T>::full(std::move(shape), value);
    t.set_requires_grad(true);
    return t;
}

// Weight layout is (in, out); bound 1/sqrt(fan_in).
template <typename T>
Tensor<T> init_linear_weight(int64_t in, int64_t out, Rng& rng) {
    return init_uniform<T>({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
}

template <typename T>
Tensor<T> init_linear_bias(int64_t in, int64_t out, Rng& rng) {
    return init_uniform<T>({out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
}

template <typename T>
Tensor<T> init_conv2d_weight(int64_t c_out, int64_t c_in_per_group, int64_t kh, int64_t kw,
                             Rng& rng) {
    const double fan_in = static_cast<double>(c_in_per_group * kh * kw);
    return init_uniform<T>({c_out, c_in_per_group, kh, kw}, 1.0 / std::sqrt(fan_in), rng);
}

}  // namespace aspvm
