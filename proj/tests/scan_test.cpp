#include <doctest.h>

#include <set>

#include "aspvm/scan.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace aspvm;
using namespace aspvm::scan;
using testutil::random_tensor;

TEST_CASE("compute_padding: minimal non-negative padding") {
    CHECK(compute_padding(8, 8, 2) == std::pair<int64_t, int64_t>{0, 0});
    CHECK(compute_padding(7, 7, 2) == std::pair<int64_t, int64_t>{1, 1});
    CHECK(compute_padding(5, 7, 3) == std::pair<int64_t, int64_t>{1, 2});
    CHECK(compute_padding(4, 4, 1) == std::pair<int64_t, int64_t>{0, 0});
    for (int64_t h = 1; h <= 9; ++h)
        for (int64_t s = 1; s <= 8; ++s) {
            auto [ph, pw] = compute_padding(h, h, s);
            CHECK(ph >= 0);
            CHECK(ph < s);
            CHECK((h + ph) % s == 0);
            CHECK(pw == ph);
        }
}

TEST_CASE("atrous plan: S=1 is the identity raster") {
    auto plan = build_atrous_plan(4, 4, 1);
    REQUIRE(plan.num_seqs() == 1);
    REQUIRE(plan.seq_len() == 16);
    for (int64_t i = 0; i < 16; ++i) CHECK(plan.forward[0][static_cast<size_t>(i)] == i);
}

TEST_CASE("atrous plan: 4x4 step 2 enumeration") {
    auto plan = build_atrous_plan(4, 4, 2);
    const std::vector<std::vector<int64_t>> want = {
        {0, 2, 8, 10}, {1, 3, 9, 11}, {4, 6, 12, 14}, {5, 7, 13, 15}};
    REQUIRE(plan.num_seqs() == 4);
    CHECK(plan.forward == want);
    // agrees with the brute-force enumeration of the sampling rule
    CHECK(plan.forward == oracle::atrous_order_naive(4, 4, 2));
}

TEST_CASE("atrous plan: 3x3 step 2 pads to 4x4") {
    auto plan = build_atrous_plan(3, 3, 2);
    CHECK(plan.pad_h == 1);
    CHECK(plan.pad_w == 1);
    CHECK(plan.num_seqs() == 4);
    CHECK(plan.seq_len() == 4);
    CHECK(plan.forward == oracle::atrous_order_naive(3, 3, 2));
    // padding slots live on padded row 3 / column 3
    int64_t padding_count = 0;
    for (const auto& seq : plan.forward)
        for (int64_t q : seq) {
            if (plan.is_padding(q)) {
                ++padding_count;
                CHECK((q / 4 == 3 || q % 4 == 3));
            }
        }
    CHECK(padding_count == 16 - 9);
}

TEST_CASE("scan partition sweep: bijection, length formula, round trip") {
    Rng rng(42);
    for (int64_t h = 1; h <= 17; ++h) {
        for (int64_t w = 1; w <= 17; w += 3) {
            for (int64_t s = 1; s <= 8; ++s) {
                auto plan = build_atrous_plan(h, w, s);
                const int64_t hp = plan.padded_h(), wp = plan.padded_w();
                CHECK(hp % s == 0);
                CHECK(wp % s == 0);
                CHECK(plan.num_seqs() == s * s);
                CHECK(plan.seq_len() == hp * wp / (s * s));
                std::set<int64_t> seen;
                for (const auto& seq : plan.forward)
                    for (int64_t q : seq) {
                        CHECK(q >= 0);
                        CHECK(q < hp * wp);
                        seen.insert(q);
                    }
                CHECK(static_cast<int64_t>(seen.size()) == hp * wp);
            }
        }
    }
}

TEST_CASE("apply_plan: S=1 equals row-major flatten") {
    Rng rng(1);
    auto x = random_tensor<double>({2, 12, 3}, rng);
    auto plan = std::make_shared<const ScanPlan>(build_atrous_plan(3, 4, 1));
    auto y = apply_plan(x, plan);
    CHECK(y.shape() == Shape{2, 12, 3});
    CHECK(testutil::bit_equal(x, y));
}

TEST_CASE("apply_plan: ramp image, step 2") {
    std::vector<double> ramp(16);
    for (int i = 0; i < 16; ++i) ramp[static_cast<size_t>(i)] = i;
    auto x = Tensor<double>::from_data({1, 16, 1}, std::move(ramp));
    auto plan = std::make_shared<const ScanPlan>(build_atrous_plan(4, 4, 2));
    auto y = apply_plan(x, plan);
    REQUIRE(y.shape() == Shape{4, 4, 1});
    const std::vector<double> want = {0, 2, 8, 10, 1, 3, 9, 11, 4, 6, 12, 14, 5, 7, 13, 15};
    for (int64_t i = 0; i < 16; ++i) CHECK(y.data()[i] == want[static_cast<size_t>(i)]);
}

TEST_CASE("invert_plan: exact round trip for many shapes and steps") {
    Rng rng(2);
    for (int64_t s : {1, 2, 3, 4, 8}) {
        auto x = random_tensor<double>({2, 7 * 5, 3}, rng);
        auto plan = std::make_shared<const ScanPlan>(build_atrous_plan(7, 5, s));
        auto y = invert_plan(apply_plan(x, plan), plan);
        CHECK(testutil::bit_equal(x, y));
        // alternative stacking order also round-trips
        auto y2 = invert_plan(apply_plan(x, plan, true), plan, true);
        CHECK(testutil::bit_equal(x, y2));
    }
}

TEST_CASE("invert_plan: zeros map to zeros, single nonzero lands at grid (1,1)") {
    auto plan = std::make_shared<const ScanPlan>(build_atrous_plan(4, 4, 2));
    auto zero = Tensor<double>::zeros({4, 4, 1});
    auto img = invert_plan(zero, plan);
    for (int64_t i = 0; i < img.numel(); ++i) CHECK(img.data()[i] == 0.0);

    auto y = Tensor<double>::zeros({4, 4, 1});
    y.data()[3 * 4 + 0] = 1.0;  // sub-sequence 3, position 0
    auto back = invert_plan(y, plan);
    for (int64_t p = 0; p < 16; ++p) {
        CHECK(back.data()[p] == (p == 5 ? 1.0 : 0.0));  // (1,1) -> flat 5
    }
}

TEST_CASE("across plans: 2x2 direction rasters") {
    auto plans = build_across_plans(2, 2);
    REQUIRE(plans.size() == 4);
    CHECK(plans[0].forward[0] == std::vector<int64_t>{0, 1, 2, 3});  // TL horizontal
    CHECK(plans[1].forward[0] == std::vector<int64_t>{0, 2, 1, 3});  // TL vertical
    CHECK(plans[2].forward[0] == std::vector<int64_t>{3, 2, 1, 0});  // BR horizontal
    CHECK(plans[3].forward[0] == std::vector<int64_t>{3, 1, 2, 0});  // BR vertical
}

TEST_CASE("across plans: 1xN forward/backward differ by reversal") {
    auto plans = build_across_plans(1, 5);
    auto fwd = plans[0].forward[0];
    auto bwd = plans[2].forward[0];
    std::reverse(bwd.begin(), bwd.end());
    CHECK(fwd == bwd);
}

TEST_CASE("across composed with atrous sampling applies direction inside sub-images") {
    auto plans = build_across_plans(4, 4, 2);
    // BR-horizontal within each sub-image = reversed TL-horizontal order
    auto tl = build_atrous_plan(4, 4, 2, Direction::TLHorizontal);
    for (size_t s = 0; s < 4; ++s) {
        auto rev = tl.forward[s];
        std::reverse(rev.begin(), rev.end());
        CHECK(plans[2].forward[s] == rev);
    }
}

TEST_CASE("efficient plan: top row horizontal, bottom row vertical") {
    auto plan = build_efficient_plan(4, 4);
    CHECK(plan.forward[0] == std::vector<int64_t>{0, 2, 8, 10});
    CHECK(plan.forward[1] == std::vector<int64_t>{1, 3, 9, 11});
    CHECK(plan.forward[2] == std::vector<int64_t>{4, 12, 6, 14});
    CHECK(plan.forward[3] == std::vector<int64_t>{5, 13, 7, 15});

    // same partition as the plain step-2 plan, different intra-sequence order
    auto atrous = build_atrous_plan(4, 4, 2);
    for (size_t s = 0; s < 4; ++s) {
        std::multiset<int64_t> a(atrous.forward[s].begin(), atrous.forward[s].end());
        std::multiset<int64_t> e(plan.forward[s].begin(), plan.forward[s].end());
        CHECK(a == e);
    }
    CHECK(plan.forward[0] == atrous.forward[0]);
    CHECK(plan.forward[1] == atrous.forward[1]);
    CHECK(plan.forward[2] != atrous.forward[2]);
    CHECK(plan.forward[3] != atrous.forward[3]);

    // round trip
    Rng rng(3);
    auto x = random_tensor<double>({1, 16, 2}, rng);
    auto p = std::make_shared<const ScanPlan>(plan);
    CHECK(testutil::bit_equal(x, invert_plan(apply_plan(x, p), p)));
}

TEST_CASE("degenerate: step >= max extent gives length-1 sequences") {
    for (int64_t s : {4, 5, 8}) {
        auto plan = build_atrous_plan(4, 3, s);
        CHECK(plan.seq_len() == 1);
        CHECK(plan.num_seqs() == s * s);
    }
}

TEST_CASE("plan csv: padding rendered as -1") {
    auto plan = build_atrous_plan(3, 3, 2);
    auto csv = plan_to_csv(plan);
    CHECK(csv.find("-1") != std::string::npos);
    auto lines = std::count(csv.begin(), csv.end(), '\n');
    CHECK(lines == 4);
    auto plain = build_atrous_plan(4, 4, 1);
    CHECK(plan_to_csv(plain) == "0,1,2,3,4,5,6,7,8,9,10,11,12,13,14,15\n");
}

TEST_CASE("scan spec validation") {
    ScanSpec spec;
    spec.atrous_step = 2;
    spec.validate();
    spec.per_subimage_directions = {Direction::TLHorizontal};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.per_subimage_directions.assign(4, Direction::TLHorizontal);
    spec.validate();
    spec.directions.clear();
    CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("plan cache returns shared instances") {
    auto a = PlanCache::instance().atrous(6, 6, 2);
    auto b = PlanCache::instance().atrous(6, 6, 2);
    CHECK(a.get() == b.get());
    auto c = PlanCache::instance().atrous(6, 6, 3);
    CHECK(a.get() != c.get());
}
