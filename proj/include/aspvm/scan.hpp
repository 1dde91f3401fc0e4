#pragma once

#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "aspvm/ops.hpp"
#include "aspvm/tensor.hpp"

// Scan plans: bijections between a (padded) 2D patch grid and a set of 1D
// sub-sequences. Atrous sampling with step S partitions the padded grid into
// S^2 interleaved sub-images; S=1 degenerates to a global raster scan.
namespace aspvm::scan {

enum class Direction {
    TLHorizontal,
    TLVertical,
    TRHorizontal,
    TRVertical,
    BLHorizontal,
    BLVertical,
    BRHorizontal,
    BRVertical,
};

const char* direction_name(Direction d);

enum class Mode { Vallian };  // raster traversal; other modes are out of scope

struct ScanSpec {
    int64_t atrous_step = 1;  // 1 == global sampling
    Mode mode = Mode::Vallian;
    std::vector<Direction> directions = {Direction::TLHorizontal};
    std::vector<Direction> per_subimage_directions;  // optional; step^2 entries

    void validate() const;
};

struct ScanPlan {
    int64_t height = 0, width = 0;  // unpadded patch grid
    int64_t pad_h = 0, pad_w = 0;   // bottom / right padding
    int64_t step = 1;
    // forward[s][p]: flat index into the padded grid (row-major, width+pad_w).
    std::vector<std::vector<int64_t>> forward;
    // inverse[padded_idx] = s * seq_len + p
    std::vector<int64_t> inverse;

    int64_t padded_h() const { return height + pad_h; }
    int64_t padded_w() const { return width + pad_w; }
    int64_t num_seqs() const { return static_cast<int64_t>(forward.size()); }
    int64_t seq_len() const { return forward.empty() ? 0 : static_cast<int64_t>(forward[0].size()); }

    bool is_padding(int64_t padded_idx) const {
        const int64_t r = padded_idx / padded_w();
        const int64_t c = padded_idx % padded_w();
        return r >= height || c >= width;
    }
};

using PlanPtr = std::shared_ptr<const ScanPlan>;

// Minimal non-negative padding making both extents divisible by the step.
std::pair<int64_t, int64_t> compute_padding(int64_t h, int64_t w, int64_t s);

// Atrous partition: padded cell (r, c) belongs to sub-image (r mod S, c mod S)
// ordered row-major; each sub-image is traversed in the given direction.
ScanPlan build_atrous_plan(int64_t h, int64_t w, int64_t s,
                           Direction dir = Direction::TLHorizontal);

// One atrous plan per direction (global sampling when s == 1).
std::vector<ScanPlan> build_across_plans(int64_t h, int64_t w, int64_t s = 1);

// Step-2 partition where the top-row sub-images scan horizontally and the
// bottom-row ones vertically.
ScanPlan build_efficient_plan(int64_t h, int64_t w);

// Arbitrary per-sub-image direction assignment (s^2 entries).
ScanPlan build_plan_with_directions(int64_t h, int64_t w, int64_t s,
                                    const std::vector<Direction>& per_subimage);

// Gather B x L x C (L == h*w row-major) into stacked sub-sequences; padding
// slots are zero-filled. seq_major=false stacks as b*S^2+s, true as s*B+b.
template <typename T>
Tensor<T> apply_plan(const Tensor<T>& x, const PlanPtr& plan, bool seq_major = false);

// Exact inverse of apply_plan (padding slots dropped).
template <typename T>
Tensor<T> invert_plan(const Tensor<T>& y, const PlanPtr& plan, bool seq_major = false);

// Process-wide cache; plans are immutable and shared.
class PlanCache {
public:
    static PlanCache& instance();
    PlanPtr atrous(int64_t h, int64_t w, int64_t s, Direction dir = Direction::TLHorizontal);
    PlanPtr efficient(int64_t h, int64_t w);

private:
    std::mutex mu_;
    std::unordered_map<std::string, PlanPtr> cache_;
};

// CSV serialization: one row per sub-sequence, padded-grid indices, padding
// slots rendered as -1.
std::string plan_to_csv(const ScanPlan& plan);

}  // namespace aspvm::scan
