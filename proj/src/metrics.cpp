#include "aspvm/metrics.hpp"

#include <cmath>
#include <cstdio>

namespace aspvm::pipeline {

namespace {
double ratio(int64_t num, int64_t den, int64_t other_side) {
    if (den == 0) return other_side == 0 ? 1.0 : 0.0;
    return static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace

double Metrics::miou() const { return ratio(tp, tp + fp + fn, 0); }

double Metrics::miou_two_class() const {
    const double fg = ratio(tp, tp + fp + fn, 0);
    const double bg = ratio(tn, tn + fp + fn, 0);
    return 0.5 * (fg + bg);
}

double Metrics::dsc() const { return ratio(2 * tp, 2 * tp + fp + fn, 0); }

double Metrics::acc() const {
    return total() == 0 ? 1.0 : static_cast<double>(tp + tn) / static_cast<double>(total());
}

double Metrics::sen() const { return ratio(tp, tp + fn, fp); }

double Metrics::spe() const { return ratio(tn, tn + fp, fn); }

template <typename T>
Metrics compute_metrics(const Tensor<T>& pred, const Tensor<T>& target) {
    require_same_shape(pred.shape(), target.shape(), "compute_metrics");
    Metrics m;
    const T* p = pred.data();
    const T* t = target.data();
    const int64_t n = pred.numel();
    for (int64_t i = 0; i < n; ++i) {
        if (t[i] != T(0) && t[i] != T(1)) {
            throw DataError("compute_metrics: target is not binary at index " + std::to_string(i));
        }
        const bool hit = p[i] >= T(0.5);
        const bool truth = t[i] == T(1);
        if (hit && truth) ++m.tp;
        else if (hit) ++m.fp;
        else if (truth) ++m.fn;
        else ++m.tn;
    }
    return m;
}

std::string format_metrics(const Metrics& m) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "MIOU=%.2f DSC=%.2f Acc=%.2f Spe=%.2f Sen=%.2f",
                  100.0 * m.miou(), 100.0 * m.dsc(), 100.0 * m.acc(), 100.0 * m.spe(),
                  100.0 * m.sen());
    return buf;
}

template Metrics compute_metrics(const Tensor<float>&, const Tensor<float>&);
template Metrics compute_metrics(const Tensor<double>&, const Tensor<double>&);

}  // namespace aspvm::pipeline
