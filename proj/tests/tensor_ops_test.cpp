#include <doctest.h>

#include <cmath>

#include "aspvm/ops.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace aspvm;
using testutil::random_tensor;

TEST_CASE("tensor basics") {
    auto t = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.dim(-1) == 3);
    CHECK_THROWS_AS(Tensor<double>::from_data({2, 2}, {1, 2, 3}), DimensionError);
    CHECK_THROWS_AS(t.item(), DimensionError);
    CHECK(Tensor<double>::scalar(4.0).item() == 4.0);
}

TEST_CASE("backward: linear case grad(w) == x") {
    Rng rng(1);
    auto x = random_tensor<double>({6}, rng);
    auto w = random_tensor<double>({6}, rng, -1, 1, true);
    auto loss = sum_all(mul(w, x));
    loss.backward();
    for (int64_t i = 0; i < 6; ++i) CHECK(w.grad()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("backward: sigmoid at zero has grad 0.25") {
    auto w = Tensor<double>::zeros({5});
    w.set_requires_grad(true);
    auto loss = sum_all(sigmoid(w));
    loss.backward();
    for (int64_t i = 0; i < 5; ++i) CHECK(w.grad()[i] == doctest::Approx(0.25));
}

TEST_CASE("backward: repeated calls accumulate, non-scalar rejected") {
    auto w = Tensor<double>::full({3}, 2.0);
    w.set_requires_grad(true);
    auto y = mul(w, w);
    CHECK_THROWS_AS(y.backward(), DimensionError);
    auto loss = sum_all(y);
    loss.backward();
    loss.backward();
    CHECK(w.grad()[0] == doctest::Approx(8.0));  // 2 * dy/dw = 2 * 2w
}

TEST_CASE("conv2d: box sum on all-ones 3x3") {
    auto x = Tensor<double>::full({1, 1, 3, 3}, 1.0);
    auto w = Tensor<double>::full({1, 1, 3, 3}, 1.0);
    auto y = conv2d(x, w, Tensor<double>(), {.stride = 1, .padding = 1});
    CHECK(y.shape() == Shape{1, 1, 3, 3});
    CHECK(y.data()[4] == doctest::Approx(9.0));  // center
    CHECK(y.data()[0] == doctest::Approx(4.0));  // corner
    CHECK(y.data()[1] == doctest::Approx(6.0));  // edge
}

TEST_CASE("conv2d: 1x1 identity kernel") {
    Rng rng(2);
    auto x = random_tensor<double>({1, 1, 4, 5}, rng);
    auto w = Tensor<double>::full({1, 1, 1, 1}, 1.0);
    auto y = conv2d(x, w, Tensor<double>(), {});
    CHECK(testutil::bit_equal(x, reshape(y, {1, 1, 4, 5})));
}

TEST_CASE("conv2d: dilation 3 vs naive oracle") {
    Rng rng(3);
    auto x = random_tensor<double>({1, 2, 5, 5}, rng);
    auto w = random_tensor<double>({3, 2, 3, 3}, rng);
    auto b = random_tensor<double>({3}, rng);
    auto y = conv2d(x, w, b, {.stride = 1, .padding = 3, .dilation = 3});
    auto ref = oracle::conv2d_naive(x.vec(), 1, 2, 5, 5, w.vec(), 3, 3, 3, b.vec(), 1, 3, 3, 1);
    REQUIRE(y.numel() == static_cast<int64_t>(ref.size()));
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-9));
}

TEST_CASE("conv2d: grouped/depthwise vs naive oracle") {
    Rng rng(4);
    auto x = random_tensor<double>({2, 4, 6, 6}, rng);
    auto w = random_tensor<double>({4, 1, 3, 3}, rng);
    auto b = random_tensor<double>({4}, rng);
    auto y = conv2d(x, w, b, {.stride = 1, .padding = 1, .dilation = 1, .groups = 4});
    auto ref = oracle::conv2d_naive(x.vec(), 2, 4, 6, 6, w.vec(), 4, 3, 3, b.vec(), 1, 1, 1, 4);
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-9));
}

TEST_CASE("conv2d: stride 2 vs naive oracle") {
    Rng rng(5);
    auto x = random_tensor<double>({1, 3, 7, 8}, rng);
    auto w = random_tensor<double>({2, 3, 3, 3}, rng);
    auto y = conv2d(x, w, Tensor<double>(), {.stride = 2, .padding = 1});
    auto ref = oracle::conv2d_naive(x.vec(), 1, 3, 7, 8, w.vec(), 2, 3, 3, {}, 2, 1, 1, 1);
    REQUIRE(y.numel() == static_cast<int64_t>(ref.size()));
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-9));
}

TEST_CASE("conv2d: shape mismatch reports both shapes") {
    auto x = Tensor<double>::zeros({1, 3, 4, 4});
    auto w = Tensor<double>::zeros({2, 2, 3, 3});
    try {
        conv2d(x, w, Tensor<double>(), {});
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x2x3x3]") != std::string::npos);
        CHECK(msg.find("[1x3x4x4]") != std::string::npos);
    }
}

TEST_CASE("layer_norm: constant vector maps to zeros") {
    auto x = Tensor<double>::full({1, 4}, 5.0);
    auto gamma = Tensor<double>::full({4}, 1.0);
    auto beta = Tensor<double>::zeros({4});
    auto y = layer_norm(x, gamma, beta);
    for (int64_t i = 0; i < 4; ++i) CHECK(std::abs(y.data()[i]) < 1e-9);
}

TEST_CASE("layer_norm: already-normalized pair") {
    auto x = Tensor<double>::from_data({1, 2}, {1.0, -1.0});
    auto gamma = Tensor<double>::full({2}, 1.0);
    auto beta = Tensor<double>::zeros({2});
    auto y = layer_norm(x, gamma, beta);
    CHECK(y.data()[0] == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(y.data()[1] == doctest::Approx(-1.0).epsilon(1e-4));
}

TEST_CASE("layer_norm: random row statistics") {
    Rng rng(6);
    auto x = random_tensor<double>({1, 16}, rng, -3, 3);
    auto gamma = Tensor<double>::full({16}, 1.0);
    auto beta = Tensor<double>::zeros({16});
    auto y = layer_norm(x, gamma, beta);
    double mean = 0, var = 0;
    for (int64_t i = 0; i < 16; ++i) mean += y.data()[i];
    mean /= 16;
    for (int64_t i = 0; i < 16; ++i) var += (y.data()[i] - mean) * (y.data()[i] - mean);
    var /= 16;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-3);
}

TEST_CASE("softmax: symmetry, stability, oracle") {
    auto a = softmax(Tensor<double>::from_data({2}, {0.0, 0.0}), 0);
    CHECK(a.data()[0] == doctest::Approx(0.5));

    auto b = softmax(Tensor<double>::from_data({2}, {1000.0, 0.0}), 0);
    CHECK(std::isfinite(b.data()[0]));
    CHECK(b.data()[0] == doctest::Approx(1.0));
    CHECK(b.data()[1] == doctest::Approx(0.0));

    Rng rng(7);
    auto x = random_tensor<double>({8}, rng, -2, 2);
    auto y = softmax(x, 0);
    auto ref = oracle::softmax_naive(x.vec());
    double total = 0;
    for (int64_t i = 0; i < 8; ++i) {
        CHECK(std::abs(y.data()[i] - ref[i]) < 1e-7);
        CHECK(y.data()[i] > 0.0);
        total += y.data()[i];
    }
    CHECK(std::abs(total - 1.0) < 1e-6);

    // shift invariance along the axis
    auto shifted = softmax(add_scalar(x, 3.7), 0);
    CHECK(testutil::max_abs_diff(y, shifted) < 1e-12);
}

TEST_CASE("softmax over a middle axis") {
    Rng rng(8);
    auto x = random_tensor<double>({2, 3, 4}, rng);
    auto y = softmax(x, 1);
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t i = 0; i < 4; ++i) {
            double s = 0;
            for (int64_t k = 0; k < 3; ++k) s += y.data()[(b * 3 + k) * 4 + i];
            CHECK(s == doctest::Approx(1.0));
        }
}

TEST_CASE("chunk then concat is the identity") {
    Rng rng(9);
    for (int axis = 0; axis < 3; ++axis) {
        auto x = random_tensor<double>({4, 6, 8}, rng);
        for (int64_t parts : {int64_t{2}, x.dim(axis)}) {
            if (x.dim(axis) % parts != 0) continue;
            auto pieces = chunk(x, parts, axis);
            auto back = concat(pieces, axis);
            CHECK(testutil::bit_equal(x, back));
        }
    }
    auto x = random_tensor<double>({4, 6}, rng);
    CHECK_THROWS_AS(chunk(x, 5, 1), DimensionError);
}

TEST_CASE("split sizes must cover the axis") {
    Rng rng(10);
    auto x = random_tensor<double>({2, 7}, rng);
    auto parts = split(x, {3, 2, 2}, 1);
    CHECK(parts.size() == 3);
    CHECK(parts[0].shape() == Shape{2, 3});
    CHECK(parts[2].data()[0] == x.data()[5]);
    CHECK_THROWS_AS(split(x, {3, 3}, 1), DimensionError);
}

TEST_CASE("roll_last_axis rotates and inverts") {
    auto x = Tensor<double>::from_data({1, 8}, {0, 1, 2, 3, 4, 5, 6, 7});
    auto y = roll_last_axis(x, 1);
    const std::vector<double> want = {1, 2, 3, 4, 5, 6, 7, 0};
    for (int64_t i = 0; i < 8; ++i) CHECK(y.data()[i] == want[i]);
    auto back = roll_last_axis(y, -1);
    CHECK(testutil::bit_equal(x, back));
}

TEST_CASE("image_to_seq round trip") {
    Rng rng(11);
    auto x = random_tensor<double>({2, 3, 4, 5}, rng);
    auto seq = image_to_seq(x);
    CHECK(seq.shape() == Shape{2, 20, 3});
    auto back = seq_to_image(seq, 4, 5);
    CHECK(testutil::bit_equal(x, back));
}

TEST_CASE("transpose matches manual permutation") {
    Rng rng(12);
    auto x = random_tensor<double>({2, 3, 4}, rng);
    auto y = transpose(x, 0, 2);
    CHECK(y.shape() == Shape{4, 3, 2});
    for (int64_t a = 0; a < 2; ++a)
        for (int64_t b = 0; b < 3; ++b)
            for (int64_t c = 0; c < 4; ++c)
                CHECK(y.data()[(c * 3 + b) * 2 + a] == x.data()[(a * 3 + b) * 4 + c]);
}

TEST_CASE("matmul against explicit loops") {
    Rng rng(13);
    auto a = random_tensor<double>({3, 4}, rng);
    auto b = random_tensor<double>({4, 5}, rng);
    auto y = matmul(a, b);
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 5; ++j) {
            double acc = 0;
            for (int64_t k = 0; k < 4; ++k) acc += a.data()[i * 4 + k] * b.data()[k * 5 + j];
            CHECK(y.data()[i * 5 + j] == doctest::Approx(acc));
        }
    CHECK_THROWS_AS(matmul(a, a), DimensionError);
}

TEST_CASE("linear applies to the last axis with bias") {
    Rng rng(14);
    auto x = random_tensor<double>({2, 3, 4}, rng);
    auto w = random_tensor<double>({4, 6}, rng);
    auto b = random_tensor<double>({6}, rng);
    auto y = linear(x, w, b);
    CHECK(y.shape() == Shape{2, 3, 6});
    double acc = b.data()[2];
    for (int64_t k = 0; k < 4; ++k) acc += x.data()[(1 * 3 + 2) * 4 + k] * w.data()[k * 6 + 2];
    CHECK(y.data()[(1 * 3 + 2) * 6 + 2] == doctest::Approx(acc));
}

TEST_CASE("broadcasting add/mul") {
    auto a = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    auto b = Tensor<double>::from_data({3}, {10, 20, 30});
    auto y = add(a, b);
    CHECK(y.data()[0] == 11);
    CHECK(y.data()[5] == 36);

    auto c = Tensor<double>::from_data({2, 1}, {2, 3});
    auto z = mul(a, c);
    CHECK(z.data()[2] == 6);
    CHECK(z.data()[3] == 12);

    auto s = Tensor<double>::scalar(2.0);
    auto w = mul(a, s);
    CHECK(w.data()[5] == 12);

    CHECK_THROWS_AS(add(a, Tensor<double>::zeros({4})), DimensionError);
}

TEST_CASE("pooling and upsampling") {
    auto x = Tensor<double>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(maxpool2x2(x).data()[0] == 4.0);
    CHECK(avgpool2x2(x).data()[0] == doctest::Approx(2.5));
    auto g = global_avgpool(x);
    CHECK(g.shape() == Shape{1, 1});
    CHECK(g.data()[0] == doctest::Approx(2.5));
    CHECK_THROWS_AS(maxpool2x2(Tensor<double>::zeros({1, 1, 3, 3})), DimensionError);

    auto up = upsample_bilinear2x(x);
    CHECK(up.shape() == Shape{1, 1, 4, 4});
    CHECK(up.data()[0] == doctest::Approx(1.0));   // corner keeps value
    CHECK(up.data()[15] == doctest::Approx(4.0));
    // total mass is preserved up to the boundary-clamp weighting
    auto ones_up = upsample_bilinear2x(Tensor<double>::full({1, 1, 2, 2}, 1.0));
    for (int64_t i = 0; i < 16; ++i) CHECK(ones_up.data()[i] == doctest::Approx(1.0));
}

TEST_CASE("channel max/mean") {
    auto x = Tensor<double>::from_data({1, 2, 1, 2}, {1, 5, 4, 2});
    auto mx = channel_max(x);
    CHECK(mx.shape() == Shape{1, 1, 1, 2});
    CHECK(mx.data()[0] == 4.0);
    CHECK(mx.data()[1] == 5.0);
    auto mn = channel_mean(x);
    CHECK(mn.data()[0] == doctest::Approx(2.5));
    CHECK(mn.data()[1] == doctest::Approx(3.5));
}

TEST_CASE("batch norm: train normalizes batch, infer uses running stats") {
    Rng rng(15);
    auto x = random_tensor<double>({4, 3, 5, 5}, rng, -2, 2);
    auto gamma = Tensor<double>::full({3}, 1.0);
    auto beta = Tensor<double>::zeros({3});
    std::vector<double> rm(3, 0.0), rv(3, 1.0);
    auto y = batch_norm_train(x, gamma, beta, rm, rv, 0.1, 1e-5);
    // per-channel output stats are ~N(0,1)
    for (int64_t c = 0; c < 3; ++c) {
        double mean = 0;
        for (int64_t b = 0; b < 4; ++b)
            for (int64_t i = 0; i < 25; ++i) mean += y.data()[(b * 3 + c) * 25 + i];
        mean /= 100;
        CHECK(std::abs(mean) < 1e-9);
    }
    CHECK(rm[0] != 0.0);  // running stats moved

    auto z = batch_norm_infer(x, gamma, beta, rm, rv, 1e-5);
    CHECK(z.shape() == x.shape());
}

TEST_CASE("forward ops stay finite on large-magnitude inputs") {
    Rng rng(16);
    auto x = random_tensor<double>({64}, rng, -1e3, 1e3);
    for (auto& t : {sigmoid(x), silu(x), gelu(x), softplus(x), softmax(x, 0),
                    add(x, x), mul(x, x), clamp(x, -10.0, 10.0)}) {
        for (int64_t i = 0; i < t.numel(); ++i) CHECK(std::isfinite(t.data()[i]));
    }
    auto img = random_tensor<double>({1, 4, 4, 4}, rng, -1e3, 1e3);
    auto gamma = Tensor<double>::full({4}, 1.0);
    auto beta = Tensor<double>::zeros({4});
    for (auto& t : {maxpool2x2(img), avgpool2x2(img), upsample_bilinear2x(img), channel_max(img)}) {
        for (int64_t i = 0; i < t.numel(); ++i) CHECK(std::isfinite(t.data()[i]));
    }
    auto ln = layer_norm(image_to_seq(img), gamma, beta);
    for (int64_t i = 0; i < ln.numel(); ++i) CHECK(std::isfinite(ln.data()[i]));
}
