#include <doctest.h>

#include "aspvm/ops.hpp"
#include "aspvm/scan.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

// Central finite differences (64-bit, step 1e-4) against every reverse-mode
// gradient, per op.

using namespace aspvm;
using testutil::GradCheck;
using testutil::random_tensor;

namespace {
constexpr double kTol = 1e-5;

Tensor<double> weighted_sum(const Tensor<double>& y, uint64_t seed) {
    Rng rng(seed);
    auto w = random_tensor<double>(y.shape(), rng, -1, 1);
    return mean_all(mul(y, w));
}
}  // namespace

TEST_CASE("grad: elementwise unary") {
    Rng rng(100);
    auto x = random_tensor<double>({3, 5}, rng, -2, 2, true);
    int id = 0;
    for (auto fn : {+[](const Tensor<double>& t) { return sigmoid(t); },
                    +[](const Tensor<double>& t) { return silu(t); },
                    +[](const Tensor<double>& t) { return gelu(t); },
                    +[](const Tensor<double>& t) { return softplus(t); },
                    +[](const Tensor<double>& t) { return exp(t); },
                    +[](const Tensor<double>& t) { return neg(t); },
                    +[](const Tensor<double>& t) { return scale(t, 1.7); },
                    +[](const Tensor<double>& t) { return add_scalar(t, 0.3); }}) {
        GradCheck gc;
        const double err = gc.run([&] { return weighted_sum(fn(x), 50 + id); }, {x});
        CAPTURE(id);
        CHECK(err < kTol);
        ++id;
    }
}

TEST_CASE("grad: log and clamp on their domains") {
    Rng rng(101);
    auto x = random_tensor<double>({10}, rng, 0.5, 3.0, true);
    GradCheck gc;
    CHECK(gc.run([&] { return weighted_sum(log(x), 1); }, {x}) < kTol);
    auto y = random_tensor<double>({10}, rng, -2, 2, true);
    CHECK(gc.run([&] { return weighted_sum(clamp(y, -0.5, 0.5), 2); }, {y}) < kTol);
}

TEST_CASE("grad: binary ops with broadcasting") {
    Rng rng(102);
    auto a = random_tensor<double>({2, 3, 4}, rng, -2, 2, true);
    auto b = random_tensor<double>({3, 1}, rng, 0.5, 2.0, true);
    GradCheck gc;
    CHECK(gc.run([&] { return weighted_sum(add(a, b), 3); }, {a, b}) < kTol);
    CHECK(gc.run([&] { return weighted_sum(sub(a, b), 4); }, {a, b}) < kTol);
    CHECK(gc.run([&] { return weighted_sum(mul(a, b), 5); }, {a, b}) < kTol);
    CHECK(gc.run([&] { return weighted_sum(div(a, b), 6); }, {a, b}) < kTol);
}

TEST_CASE("grad: reductions and shape ops") {
    Rng rng(103);
    auto x = random_tensor<double>({2, 3, 4}, rng, -2, 2, true);
    GradCheck gc;
    CHECK(gc.run([&] { return weighted_sum(sum_axis(x, 1), 7); }, {x}) < kTol);
    CHECK(gc.run([&] { return weighted_sum(mean_axis(x, 2, true), 8); }, {x}) < kTol);
    CHECK(gc.run([&] { return scale(sum_all(x), 0.1); }, {x}) < kTol);
    CHECK(gc.run([&] { return weighted_sum(reshape(x, {6, 4}), 9); }, {x}) < kTol);
    CHECK(gc.run([&] { return weighted_sum(transpose(x, 0, 2), 10); }, {x}) < kTol);
    CHECK(gc.run([&] { return weighted_sum(roll_last_axis(x, 3), 11); }, {x}) < kTol);
    CHECK(gc.run([&] { return weighted_sum(concat(chunk(x, 2, 2), 1), 12); }, {x}) < kTol);
    auto img = random_tensor<double>({2, 3, 2, 2}, rng, -1, 1, true);
    CHECK(gc.run([&] { return weighted_sum(image_to_seq(img), 13); }, {img}) < kTol);
    CHECK(gc.run([&] { return weighted_sum(seq_to_image(image_to_seq(img), 2, 2), 14); }, {img}) <
          kTol);
}

TEST_CASE("grad: matmul and linear") {
    Rng rng(104);
    auto a = random_tensor<double>({3, 4}, rng, -1, 1, true);
    auto b = random_tensor<double>({4, 5}, rng, -1, 1, true);
    GradCheck gc;
    CHECK(gc.run([&] { return weighted_sum(matmul(a, b), 15); }, {a, b}) < kTol);

    auto x = random_tensor<double>({2, 3, 4}, rng, -1, 1, true);
    auto w = random_tensor<double>({4, 6}, rng, -1, 1, true);
    auto bias = random_tensor<double>({6}, rng, -1, 1, true);
    CHECK(gc.run([&] { return weighted_sum(linear(x, w, bias), 16); }, {x, w, bias}) < kTol);
    CHECK(gc.run([&] { return weighted_sum(linear(x, w), 17); }, {x, w}) < kTol);
}

TEST_CASE("grad: softmax / layer_norm / batch_norm") {
    Rng rng(105);
    auto x = random_tensor<double>({2, 5, 3}, rng, -2, 2, true);
    GradCheck gc;
    CHECK(gc.run([&] { return weighted_sum(softmax(x, 1), 18); }, {x}) < kTol);
    CHECK(gc.run([&] { return weighted_sum(softmax(x, -1), 19); }, {x}) < kTol);

    auto gamma = random_tensor<double>({3}, rng, 0.5, 1.5, true);
    auto beta = random_tensor<double>({3}, rng, -0.5, 0.5, true);
    CHECK(gc.run([&] { return weighted_sum(layer_norm(x, gamma, beta), 20); }, {x, gamma, beta}) <
          kTol);

    auto img = random_tensor<double>({3, 2, 4, 4}, rng, -2, 2, true);
    auto g2 = random_tensor<double>({2}, rng, 0.5, 1.5, true);
    auto b2 = random_tensor<double>({2}, rng, -0.5, 0.5, true);
    CHECK(gc.run(
              [&] {
                  std::vector<double> rm(2, 0.0), rv(2, 1.0);
                  return weighted_sum(batch_norm_train(img, g2, b2, rm, rv), 21);
              },
              {img, g2, b2}) < kTol);
    std::vector<double> rm = {0.1, -0.2}, rv = {0.9, 1.1};
    CHECK(gc.run([&] { return weighted_sum(batch_norm_infer(img, g2, b2, rm, rv), 22); },
                 {img, g2, b2}) < kTol);
}

TEST_CASE("grad: conv2d variants") {
    Rng rng(106);
    GradCheck gc;
    {
        auto x = random_tensor<double>({2, 3, 5, 5}, rng, -1, 1, true);
        auto w = random_tensor<double>({4, 3, 3, 3}, rng, -1, 1, true);
        auto b = random_tensor<double>({4}, rng, -1, 1, true);
        CHECK(gc.run([&] { return weighted_sum(conv2d(x, w, b, {.stride = 1, .padding = 1}), 23); },
                     {x, w, b}) < kTol);
        CHECK(gc.run([&] { return weighted_sum(conv2d(x, w, b, {.stride = 2, .padding = 1}), 24); },
                     {x, w, b}) < kTol);
    }
    {
        auto x = random_tensor<double>({1, 4, 6, 6}, rng, -1, 1, true);
        auto w = random_tensor<double>({4, 1, 3, 3}, rng, -1, 1, true);
        auto b = random_tensor<double>({4}, rng, -1, 1, true);
        CHECK(gc.run(
                  [&] {
                      return weighted_sum(
                          conv2d(x, w, b, {.stride = 1, .padding = 3, .dilation = 3, .groups = 4}),
                          25);
                  },
                  {x, w, b}) < kTol);
    }
}

TEST_CASE("grad: 1d convolutions") {
    Rng rng(107);
    GradCheck gc;
    auto x = random_tensor<double>({2, 6, 3}, rng, -1, 1, true);
    auto w = random_tensor<double>({3, 4}, rng, -1, 1, true);
    auto b = random_tensor<double>({3}, rng, -1, 1, true);
    CHECK(gc.run([&] { return weighted_sum(conv1d_depthwise_causal(x, w, b), 26); }, {x, w, b}) <
          kTol);

    auto v = random_tensor<double>({2, 9}, rng, -1, 1, true);
    auto k = random_tensor<double>({3}, rng, -1, 1, true);
    auto kb = random_tensor<double>({1}, rng, -1, 1, true);
    CHECK(gc.run([&] { return weighted_sum(conv1d_vector(v, k, kb), 27); }, {v, k, kb}) < kTol);
}

TEST_CASE("grad: pooling, upsampling, channel reductions") {
    Rng rng(108);
    GradCheck gc;
    auto x = random_tensor<double>({2, 3, 4, 4}, rng, -1, 1, true);
    CHECK(gc.run([&] { return weighted_sum(maxpool2x2(x), 28); }, {x}) < kTol);
    CHECK(gc.run([&] { return weighted_sum(avgpool2x2(x), 29); }, {x}) < kTol);
    CHECK(gc.run([&] { return weighted_sum(global_avgpool(x), 30); }, {x}) < kTol);
    CHECK(gc.run([&] { return weighted_sum(upsample_bilinear2x(x), 31); }, {x}) < kTol);
    CHECK(gc.run([&] { return weighted_sum(channel_mean(x), 32); }, {x}) < kTol);
    CHECK(gc.run([&] { return weighted_sum(channel_max(x), 33); }, {x}) < kTol);
}

TEST_CASE("grad: scan apply/invert") {
    Rng rng(109);
    GradCheck gc;
    auto plan = std::make_shared<const scan::ScanPlan>(scan::build_atrous_plan(5, 7, 3));
    auto x = random_tensor<double>({2, 35, 3}, rng, -1, 1, true);
    CHECK(gc.run([&] { return weighted_sum(scan::apply_plan(x, plan), 34); }, {x}) < kTol);
    CHECK(gc.run(
              [&] { return weighted_sum(scan::invert_plan(scan::apply_plan(x, plan), plan), 35); },
              {x}) < kTol);
}
