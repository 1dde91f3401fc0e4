#include "aspvm/scan.hpp"

#include <sstream>

namespace aspvm::scan {

const char* direction_name(Direction d) {
    switch (d) {
        case Direction::TLHorizontal: return "tl-horizontal";
        case Direction::TLVertical: return "tl-vertical";
        case Direction::TRHorizontal: return "tr-horizontal";
        case Direction::TRVertical: return "tr-vertical";
        case Direction::BLHorizontal: return "bl-horizontal";
        case Direction::BLVertical: return "bl-vertical";
        case Direction::BRHorizontal: return "br-horizontal";
        case Direction::BRVertical: return "br-vertical";
    }
    return "?";
}

void ScanSpec::validate() const {
    if (atrous_step < 1) throw ConfigError("ScanSpec: atrous_step must be >= 1");
    if (directions.empty()) throw ConfigError("ScanSpec: directions must be non-empty");
    if (directions.size() > 8) throw ConfigError("ScanSpec: at most 8 directions");
    if (!per_subimage_directions.empty() &&
        static_cast<int64_t>(per_subimage_directions.size()) != atrous_step * atrous_step) {
        throw ConfigError("ScanSpec: per_subimage_directions needs step^2 entries");
    }
}

std::pair<int64_t, int64_t> compute_padding(int64_t h, int64_t w, int64_t s) {
    if (h < 1 || w < 1 || s < 1) throw ConfigError("compute_padding: extents and step must be >= 1");
    const int64_t ph = (s - h % s) % s;
    const int64_t pw = (s - w % s) % s;
    return {ph, pw};
}

namespace {

// Traversal order of an h x w sub-grid for one direction.
void raster_order(int64_t h, int64_t w, Direction dir, std::vector<std::pair<int64_t, int64_t>>& out) {
    out.clear();
    out.reserve(static_cast<size_t>(h * w));
    auto push_rows = [&](bool r_asc, bool c_asc) {
        for (int64_t i = 0; i < h; ++i) {
            const int64_t r = r_asc ? i : h - 1 - i;
            for (int64_t j = 0; j < w; ++j) out.emplace_back(r, c_asc ? j : w - 1 - j);
        }
    };
    auto push_cols = [&](bool c_asc, bool r_asc) {
        for (int64_t j = 0; j < w; ++j) {
            const int64_t c = c_asc ? j : w - 1 - j;
            for (int64_t i = 0; i < h; ++i) out.emplace_back(r_asc ? i : h - 1 - i, c);
        }
    };
    switch (dir) {
        case Direction::TLHorizontal: push_rows(true, true); break;
        case Direction::TRHorizontal: push_rows(true, false); break;
        case Direction::BLHorizontal: push_rows(false, true); break;
        case Direction::BRHorizontal: push_rows(false, false); break;
        case Direction::TLVertical: push_cols(true, true); break;
        case Direction::TRVertical: push_cols(false, true); break;
        case Direction::BLVertical: push_cols(true, false); break;
        case Direction::BRVertical: push_cols(false, false); break;
    }
}

ScanPlan build_impl(int64_t h, int64_t w, int64_t s, const std::vector<Direction>& per_sub) {
    ScanPlan plan;
    plan.height = h;
    plan.width = w;
    plan.step = s;
    auto [ph, pw] = compute_padding(h, w, s);
    plan.pad_h = ph;
    plan.pad_w = pw;
    const int64_t hp = plan.padded_h(), wp = plan.padded_w();
    const int64_t sub_h = hp / s, sub_w = wp / s;
    const int64_t seq_len = sub_h * sub_w;
    plan.forward.assign(static_cast<size_t>(s * s), {});
    plan.inverse.assign(static_cast<size_t>(hp * wp), -1);
    std::vector<std::pair<int64_t, int64_t>> order;
    for (int64_t sr = 0; sr < s; ++sr) {
        for (int64_t sc = 0; sc < s; ++sc) {
            const int64_t seq = sr * s + sc;
            raster_order(sub_h, sub_w, per_sub[static_cast<size_t>(seq)], order);
            auto& fwd = plan.forward[static_cast<size_t>(seq)];
            fwd.reserve(static_cast<size_t>(seq_len));
            for (int64_t p = 0; p < seq_len; ++p) {
                const auto [ir, ic] = order[static_cast<size_t>(p)];
                const int64_t r = ir * s + sr;
                const int64_t c = ic * s + sc;
                const int64_t flat = r * wp + c;
                fwd.push_back(flat);
                plan.inverse[static_cast<size_t>(flat)] = seq * seq_len + p;
            }
        }
    }
    return plan;
}

}  // namespace

ScanPlan build_atrous_plan(int64_t h, int64_t w, int64_t s, Direction dir) {
    return build_impl(h, w, s, std::vector<Direction>(static_cast<size_t>(s * s), dir));
}

std::vector<ScanPlan> build_across_plans(int64_t h, int64_t w, int64_t s) {
    std::vector<ScanPlan> plans;
    for (Direction dir : {Direction::TLHorizontal, Direction::TLVertical, Direction::BRHorizontal,
                          Direction::BRVertical}) {
        plans.push_back(build_atrous_plan(h, w, s, dir));
    }
    return plans;
}

ScanPlan build_efficient_plan(int64_t h, int64_t w) {
    return build_impl(h, w, 2,
                      {Direction::TLHorizontal, Direction::TLHorizontal, Direction::TLVertical,
                       Direction::TLVertical});
}

ScanPlan build_plan_with_directions(int64_t h, int64_t w, int64_t s,
                                    const std::vector<Direction>& per_subimage) {
    if (static_cast<int64_t>(per_subimage.size()) != s * s) {
        throw ConfigError("build_plan_with_directions: need step^2 direction entries");
    }
    return build_impl(h, w, s, per_subimage);
}

template <typename T>
Tensor<T> apply_plan(const Tensor<T>& x, const PlanPtr& plan, bool seq_major) {
    if (x.ndim() != 3 || x.dim(1) != plan->height * plan->width) {
        throw DimensionError("apply_plan: input " + shape_str(x.shape()) +
                             " does not match grid " + std::to_string(plan->height) + "x" +
                             std::to_string(plan->width));
    }
    const int64_t B = x.dim(0), C = x.dim(2);
    const int64_t S2 = plan->num_seqs(), L = plan->seq_len();
    const int64_t w = plan->width, wp = plan->padded_w();
    std::vector<T> out(static_cast<size_t>(B * S2 * L * C), T(0));
    const T* px = x.data();
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t s = 0; s < S2; ++s) {
            const int64_t row = seq_major ? s * B + b : b * S2 + s;
            const auto& fwd = plan->forward[static_cast<size_t>(s)];
            for (int64_t p = 0; p < L; ++p) {
                const int64_t q = fwd[static_cast<size_t>(p)];
                const int64_t r = q / wp, c = q % wp;
                if (r >= plan->height || c >= w) continue;  // padding slot stays zero
                const T* src = px + (b * plan->height * w + r * w + c) * C;
                T* dst = out.data() + (row * L + p) * C;
                std::copy(src, src + C, dst);
            }
        }
    }
    return make_op<T>({B * S2, L, C}, std::move(out), {x},
                      [plan, B, S2, L, C, w, wp, seq_major](TensorNode<T>& o) {
                          auto& par = *o.parents[0];
                          if (!par.requires_grad) return;
                          T* gx = par.grad_buf();
                          const T* g = o.grad.data();
                          for (int64_t b = 0; b < B; ++b)
                              for (int64_t s = 0; s < S2; ++s) {
                                  const int64_t row = seq_major ? s * B + b : b * S2 + s;
                                  const auto& fwd = plan->forward[static_cast<size_t>(s)];
                                  for (int64_t p = 0; p < L; ++p) {
                                      const int64_t q = fwd[static_cast<size_t>(p)];
                                      const int64_t r = q / wp, c = q % wp;
                                      if (r >= plan->height || c >= w) continue;
                                      const T* src = g + (row * L + p) * C;
                                      T* dst = gx + (b * plan->height * w + r * w + c) * C;
                                      for (int64_t k = 0; k < C; ++k) dst[k] += src[k];
                                  }
                              }
                      });
}

template <typename T>
Tensor<T> invert_plan(const Tensor<T>& y, const PlanPtr& plan, bool seq_major) {
    const int64_t S2 = plan->num_seqs(), L = plan->seq_len();
    if (y.ndim() != 3 || y.dim(0) % S2 != 0 || y.dim(1) != L) {
        throw DimensionError("invert_plan: input " + shape_str(y.shape()) +
                             " does not match plan with " + std::to_string(S2) +
                             " sequences of length " + std::to_string(L));
    }
    const int64_t B = y.dim(0) / S2, C = y.dim(2);
    const int64_t w = plan->width, wp = plan->padded_w();
    std::vector<T> out(static_cast<size_t>(B * plan->height * w * C));
    const T* py = y.data();
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t s = 0; s < S2; ++s) {
            const int64_t row = seq_major ? s * B + b : b * S2 + s;
            const auto& fwd = plan->forward[static_cast<size_t>(s)];
            for (int64_t p = 0; p < L; ++p) {
                const int64_t q = fwd[static_cast<size_t>(p)];
                const int64_t r = q / wp, c = q % wp;
                if (r >= plan->height || c >= w) continue;
                const T* src = py + (row * L + p) * C;
                T* dst = out.data() + (b * plan->height * w + r * w + c) * C;
                std::copy(src, src + C, dst);
            }
        }
    }
    return make_op<T>({B, plan->height * w, C}, std::move(out), {y},
                      [plan, B, S2, L, C, w, wp, seq_major](TensorNode<T>& o) {
                          auto& par = *o.parents[0];
                          if (!par.requires_grad) return;
                          T* gy = par.grad_buf();
                          const T* g = o.grad.data();
                          for (int64_t b = 0; b < B; ++b)
                              for (int64_t s = 0; s < S2; ++s) {
                                  const int64_t row = seq_major ? s * B + b : b * S2 + s;
                                  const auto& fwd = plan->forward[static_cast<size_t>(s)];
                                  for (int64_t p = 0; p < L; ++p) {
                                      const int64_t q = fwd[static_cast<size_t>(p)];
                                      const int64_t r = q / wp, c = q % wp;
                                      if (r >= plan->height || c >= w) continue;
                                      const T* src = g + (b * plan->height * w + r * w + c) * C;
                                      T* dst = gy + (row * L + p) * C;
                                      for (int64_t k = 0; k < C; ++k) dst[k] += src[k];
                                  }
                              }
                      });
}

PlanCache& PlanCache::instance() {
    static PlanCache cache;
    return cache;
}

PlanPtr PlanCache::atrous(int64_t h, int64_t w, int64_t s, Direction dir) {
    std::ostringstream key;
    key << "a:" << h << ':' << w << ':' << s << ':' << static_cast<int>(dir);
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(key.str());
    if (it != cache_.end()) return it->second;
    auto plan = std::make_shared<ScanPlan>(build_atrous_plan(h, w, s, dir));
    cache_[key.str()] = plan;
    return plan;
}

PlanPtr PlanCache::efficient(int64_t h, int64_t w) {
    std::ostringstream key;
    key << "e:" << h << ':' << w;
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(key.str());
    if (it != cache_.end()) return it->second;
    auto plan = std::make_shared<ScanPlan>(build_efficient_plan(h, w));
    cache_[key.str()] = plan;
    return plan;
}

std::string plan_to_csv(const ScanPlan& plan) {
    std::ostringstream os;
    for (const auto& seq : plan.forward) {
        for (size_t i = 0; i < seq.size(); ++i) {
            if (i) os << ',';
            os << (plan.is_padding(seq[i]) ? -1 : seq[i]);
        }
        os << '\n';
    }
    return os.str();
}

template Tensor<float> apply_plan(const Tensor<float>&, const PlanPtr&, bool);
template Tensor<double> apply_plan(const Tensor<double>&, const PlanPtr&, bool);
template Tensor<float> invert_plan(const Tensor<float>&, const PlanPtr&, bool);
template Tensor<double> invert_plan(const Tensor<double>&, const PlanPtr&, bool);

}  // namespace aspvm::scan
