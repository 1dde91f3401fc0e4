#pragma once

#include <string>

#include "aspvm/tensor.hpp"

namespace aspvm::pipeline {

// Pixel confusion counts plus the derived scores. Aggregation across a
// dataset sums counts before deriving (micro-average). Degenerate cases:
// a score whose denominator is empty is 1 when the other side is empty too,
// otherwise 0.
struct Metrics {
    int64_t tp = 0, fp = 0, tn = 0, fn = 0;

    int64_t total() const { return tp + fp + tn + fn; }
    void accumulate(const Metrics& o) {
        tp += o.tp;
        fp += o.fp;
        tn += o.tn;
        fn += o.fn;
    }

    // Foreground IoU tp/(tp+fp+fn).
    double miou() const;
    // Mean of foreground and background IoU (alternative reading, not used
    // for reporting).
    double miou_two_class() const;
    double dsc() const;
    double acc() const;
    double sen() const;
    double spe() const;
};

// Exhaustive pixel comparison at threshold 0.5 (probability >= 0.5 is
// foreground). Target must be strictly binary.
template <typename T>
Metrics compute_metrics(const Tensor<T>& pred, const Tensor<T>& target);

// "MIOU=.. DSC=.. Acc=.. Spe=.. Sen=.." as percentages with two decimals.
std::string format_metrics(const Metrics& m);

}  // namespace aspvm::pipeline
