#include <doctest.h>

#include <cmath>

#include "aspvm/ssm.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace aspvm;
using namespace aspvm::ssm;
using testutil::GradCheck;
using testutil::random_tensor;

TEST_CASE("selective_scan: A=0 reduces to a delta-weighted prefix sum") {
    const int64_t L = 5;
    auto u = Tensor<double>::from_data({1, L, 1}, {1, 2, 3, 4, 5});
    auto delta = Tensor<double>::from_data({1, L, 1}, {0.5, 1.0, 0.25, 2.0, 1.0});
    auto A = Tensor<double>::zeros({1, 1});
    auto B = Tensor<double>::full({1, L, 1}, 1.0);
    auto C = Tensor<double>::full({1, L, 1}, 1.0);
    auto D = Tensor<double>::zeros({1});
    auto y = selective_scan(u, delta, A, B, C, D);
    double acc = 0;
    for (int64_t t = 0; t < L; ++t) {
        acc += delta.data()[t] * u.data()[t];
        CHECK(y.data()[t] == doctest::Approx(acc));
    }
}

TEST_CASE("selective_scan: single step closed form") {
    auto u = Tensor<double>::from_data({1, 1, 2}, {1.5, -0.5});
    auto delta = Tensor<double>::from_data({1, 1, 2}, {0.3, 0.7});
    auto A = Tensor<double>::from_data({2, 1}, {-1.0, -2.0});
    auto B = Tensor<double>::from_data({1, 1, 1}, {0.8});
    auto C = Tensor<double>::from_data({1, 1, 1}, {1.2});
    auto D = Tensor<double>::from_data({2}, {0.1, 0.2});
    auto y = selective_scan(u, delta, A, B, C, D);
    for (int64_t d = 0; d < 2; ++d) {
        const double want = C.data()[0] * (delta.data()[d] * B.data()[0]) * u.data()[d] +
                            D.data()[d] * u.data()[d];
        CHECK(y.data()[d] == doctest::Approx(want));
    }
}

TEST_CASE("selective_scan: random instances match the timestep-loop oracle") {
    Rng rng(200);
    for (int rep = 0; rep < 20; ++rep) {
        const int64_t B = 1 + rep % 2, L = 2 + rep % 7, D = 1 + rep % 4, N = 1 + rep % 4;
        auto u = random_tensor<double>({B, L, D}, rng);
        auto delta = random_tensor<double>({B, L, D}, rng, 0.01, 1.0);
        auto A = random_tensor<double>({D, N}, rng, -2.0, -0.1);
        auto Bseq = random_tensor<double>({B, L, N}, rng);
        auto Cseq = random_tensor<double>({B, L, N}, rng);
        auto skip = random_tensor<double>({D}, rng);
        auto y = selective_scan(u, delta, A, Bseq, Cseq, skip);
        auto ref = oracle::selective_scan_naive(u.vec(), delta.vec(), A.vec(), Bseq.vec(),
                                                Cseq.vec(), skip.vec(), B, L, D, N);
        for (int64_t i = 0; i < y.numel(); ++i) CHECK(std::abs(y.data()[i] - ref[i]) < 1e-6);
    }
}

TEST_CASE("selective_scan: gradients match finite differences") {
    Rng rng(201);
    auto u = random_tensor<double>({1, 4, 2}, rng, -1, 1, true);
    auto delta = random_tensor<double>({1, 4, 2}, rng, 0.05, 0.8, true);
    auto A = random_tensor<double>({2, 3}, rng, -2.0, -0.2, true);
    auto Bseq = random_tensor<double>({1, 4, 3}, rng, -1, 1, true);
    auto Cseq = random_tensor<double>({1, 4, 3}, rng, -1, 1, true);
    auto skip = random_tensor<double>({2}, rng, -1, 1, true);
    GradCheck gc;
    auto loss = [&] {
        Rng wr(9);
        auto w = random_tensor<double>({1, 4, 2}, wr);
        return mean_all(mul(selective_scan(u, delta, A, Bseq, Cseq, skip), w));
    };
    CHECK(gc.run(loss, {u, delta, A, Bseq, Cseq, skip}) < 1e-6);
}

TEST_CASE("selective_scan: non-finite state reports the timestep") {
    auto u = Tensor<double>::from_data({1, 3, 1}, {1.0, 1e308, 1e308});
    auto delta = Tensor<double>::full({1, 3, 1}, 1.0);
    auto A = Tensor<double>::zeros({1, 1});
    auto B = Tensor<double>::full({1, 3, 1}, 1e10);
    auto C = Tensor<double>::full({1, 3, 1}, 1e10);
    auto D = Tensor<double>::zeros({1});
    try {
        selective_scan(u, delta, A, B, C, D);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("timestep") != std::string::npos);
    }
}

TEST_CASE("mamba core: shape preservation") {
    Rng rng(202);
    MambaCore<double> core(8, rng);
    for (auto [b, l] : {std::pair<int64_t, int64_t>{1, 4}, {2, 7}, {3, 1}}) {
        auto x = random_tensor<double>({b, l, 8}, rng);
        CHECK(core.forward(x).shape() == Shape{b, l, 8});
    }
    CHECK_THROWS_AS(core.forward(random_tensor<double>({1, 4, 6}, rng)), DimensionError);
}

TEST_CASE("mamba core: zero input with zero biases gives zero output") {
    Rng rng(203);
    MambaCore<double> core(8, rng);
    ParamRegistry<double> reg;
    core.register_params(reg, "m");
    for (const char* name : {"m.conv1d.bias", "m.dt_proj.bias"}) {
        auto* t = reg.find(name);
        REQUIRE(t != nullptr);
        std::fill(t->vec().begin(), t->vec().end(), 0.0);
    }
    auto y = core.forward(Tensor<double>::zeros({1, 5, 8}));
    for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.0);
}

TEST_CASE("mamba core: gradcheck at B=1 L=4 d_model=8") {
    Rng rng(204);
    MambaCore<double> core(8, rng);
    ParamRegistry<double> reg;
    core.register_params(reg, "m");
    auto x = random_tensor<double>({1, 4, 8}, rng, -1, 1, true);
    std::vector<Tensor<double>> params = {x};
    for (auto& p : reg.items()) params.push_back(p.tensor);
    GradCheck gc;
    auto loss = [&] {
        Rng wr(5);
        auto w = random_tensor<double>({1, 4, 8}, wr);
        return mean_all(mul(core.forward(x), w));
    };
    CHECK(gc.run(loss, params) < 1e-5);
}

TEST_CASE("mamba core: causality") {
    Rng rng(205);
    MambaCore<double> core(4, rng);
    auto x = random_tensor<double>({1, 8, 4}, rng);
    auto y_full = core.forward(x);
    const int64_t k = 5;
    auto trunc = x.detached();
    for (int64_t t = k; t < 8; ++t)
        for (int64_t c = 0; c < 4; ++c) trunc.data()[t * 4 + c] = 0.0;
    auto y_trunc = core.forward(trunc);
    for (int64_t t = 0; t < k; ++t)
        for (int64_t c = 0; c < 4; ++c)
            CHECK(y_full.data()[t * 4 + c] == doctest::Approx(y_trunc.data()[t * 4 + c]));
}

TEST_CASE("stability: decay factors stay inside the unit interval") {
    Rng rng(206);
    MambaCore<double> core(8, rng);
    ParamRegistry<double> reg;
    core.register_params(reg, "m");
    auto* a_log = reg.find("m.a_log");
    REQUIRE(a_log != nullptr);
    for (double v : a_log->vec()) {
        const double a = -std::exp(v);
        CHECK(a < 0.0);
        for (double dt : {1e-3, 0.05, 0.1, 1.0, 7.3}) {
            const double decay = std::exp(dt * a);
            CHECK(decay > 0.0);
            CHECK(decay < 1.0);
        }
    }
}

TEST_CASE("atrous mamba: S=1 equals the core over the projected raster") {
    Rng rng(207);
    AtrousMamba<double> am(6, vallian_spec(1), rng);
    ParamRegistry<double> reg;
    am.register_params(reg, "am");
    auto* pw = reg.find("am.subimage_proj.0.weight");
    auto* pb = reg.find("am.subimage_proj.0.bias");
    REQUIRE(pw != nullptr);

    auto x = random_tensor<double>({2, 12, 6}, rng);
    auto got = am.forward(x, 3, 4);
    auto want = am.core().forward(linear(x, *pw, *pb));
    CHECK(testutil::bit_equal(got, want));
}

TEST_CASE("atrous mamba: projection parameters grow as S^2, core unchanged") {
    Rng rng(208);
    const int64_t d = 96;
    AtrousMamba<double> s1(d, vallian_spec(1), rng);
    AtrousMamba<double> s2(d, vallian_spec(2), rng);
    CHECK(s1.projection_param_count() == d * (d + 1));
    CHECK(s2.projection_param_count() == 4 * d * (d + 1));
    CHECK(s1.param_count() - s1.projection_param_count() ==
          s2.param_count() - s2.projection_param_count());
    CHECK(s2.param_count() > s1.param_count());
}

TEST_CASE("atrous mamba: batch elements do not mix") {
    Rng rng(209);
    AtrousMamba<double> am(4, vallian_spec(2), rng);
    auto x = random_tensor<double>({2, 9, 4}, rng);
    auto y = am.forward(x, 3, 3);
    // swap batch rows
    std::vector<double> swapped(x.vec());
    std::copy(x.data() + 36, x.data() + 72, swapped.begin());
    std::copy(x.data(), x.data() + 36, swapped.begin() + 36);
    auto y2 = am.forward(Tensor<double>::from_data({2, 9, 4}, std::move(swapped)), 3, 3);
    for (int64_t i = 0; i < 36; ++i) {
        CHECK(y.data()[i] == y2.data()[36 + i]);
        CHECK(y.data()[36 + i] == y2.data()[i]);
    }
}

TEST_CASE("atrous mamba: output invariant to the stacking order") {
    Rng rng(210);
    AtrousMamba<double> am(4, vallian_spec(2), rng);
    auto x = random_tensor<double>({3, 25, 4}, rng);
    am.set_seq_major_stacking(false);
    auto a = am.forward(x, 5, 5);
    am.set_seq_major_stacking(true);
    auto b = am.forward(x, 5, 5);
    CHECK(testutil::bit_equal(a, b));
}

TEST_CASE("across mamba: degenerate 1x1 grid sums four identical passes") {
    Rng rng(211);
    MambaCore<double> core(4, rng);
    auto plans_raw = scan::build_across_plans(1, 1);
    std::vector<scan::PlanPtr> plans;
    for (auto& p : plans_raw) plans.push_back(std::make_shared<const scan::ScanPlan>(p));
    auto x = random_tensor<double>({2, 1, 4}, rng);
    auto y = across_mamba(x, plans, core);
    auto single = across_mamba(x, {plans[0]}, core);
    for (int64_t i = 0; i < y.numel(); ++i)
        CHECK(y.data()[i] == doctest::Approx(4.0 * single.data()[i]));
}

TEST_CASE("across mamba: horizontal mirror symmetry under the {TL-h, TR-h} pair") {
    Rng rng(212);
    MambaCore<double> core(3, rng);
    const int64_t H = 2, W = 3, C = 3;
    auto tlh = std::make_shared<const scan::ScanPlan>(
        scan::build_atrous_plan(H, W, 1, scan::Direction::TLHorizontal));
    auto trh = std::make_shared<const scan::ScanPlan>(
        scan::build_atrous_plan(H, W, 1, scan::Direction::TRHorizontal));
    auto x = random_tensor<double>({1, H * W, C}, rng);
    auto y = across_mamba(x, {tlh, trh}, core);

    std::vector<double> mirrored(x.vec().size());
    for (int64_t r = 0; r < H; ++r)
        for (int64_t c = 0; c < W; ++c)
            for (int64_t k = 0; k < C; ++k)
                mirrored[static_cast<size_t>((r * W + (W - 1 - c)) * C + k)] =
                    x.data()[(r * W + c) * C + k];
    auto ym = across_mamba(Tensor<double>::from_data({1, H * W, C}, std::move(mirrored)),
                           {tlh, trh}, core);
    for (int64_t r = 0; r < H; ++r)
        for (int64_t c = 0; c < W; ++c)
            for (int64_t k = 0; k < C; ++k)
                CHECK(y.data()[(r * W + c) * C + k] ==
                      doctest::Approx(ym.data()[(r * W + (W - 1 - c)) * C + k]));
}

TEST_CASE("across mamba: shape preservation, composable with atrous sampling") {
    Rng rng(213);
    AtrousMamba<double> am(4, across_spec(2), rng);
    CHECK(am.projection_param_count() == 4 * 4 * (4 * 5));  // 4 directions x S^2 x d(d+1)
    auto x = random_tensor<double>({2, 16, 4}, rng);
    CHECK(am.forward(x, 4, 4).shape() == Shape{2, 16, 4});
}
