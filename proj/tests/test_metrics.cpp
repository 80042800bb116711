#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "tiledepth/metrics.hpp"

using namespace tiledepth;
using TD = Tensor<double>;

namespace {

Tensor<uint8_t> ones_mask(std::vector<int> shape) {
    Tensor<uint8_t> m(shape);
    for (auto& e : m.v) e = 1;
    return m;
}

}  // namespace

TEST(Standard, MatchesScalarOracleOnRandomMaps) {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> ud(0.5, 79.0);
    for (int trial = 0; trial < 100; ++trial) {
        TD pred({8, 8}), gt({8, 8});
        for (auto& e : pred.v) e = ud(rng);
        for (auto& e : gt.v) e = ud(rng);
        auto m = standard_metrics(pred, gt, ones_mask({8, 8}));
        auto ref = oracles::standard_reference(pred.v, gt.v, 1e-3, 80.0);
        EXPECT_NEAR(m.delta1, ref.delta1, 1e-9);
        EXPECT_NEAR(m.rel, ref.rel, 1e-9);
        EXPECT_NEAR(m.rms, ref.rms, 1e-9);
        EXPECT_NEAR(m.silog, ref.silog, 1e-9);
    }
}

TEST(Standard, PerfectPrediction) {
    std::mt19937_64 rng(1);
    TD gt({8, 8});
    std::uniform_real_distribution<double> ud(1.0, 70.0);
    for (auto& e : gt.v) e = ud(rng);
    auto m = standard_metrics(gt, gt, ones_mask({8, 8}));
    EXPECT_DOUBLE_EQ(m.delta1, 100.0);
    EXPECT_DOUBLE_EQ(m.rel, 0.0);
    EXPECT_DOUBLE_EQ(m.rms, 0.0);
    EXPECT_DOUBLE_EQ(m.silog, 0.0);
    EXPECT_EQ(m.n, 64);
}

TEST(Standard, Delta1InvariantUnderJointRescale) {
    std::mt19937_64 rng(2);
    TD pred({10, 10}), gt({10, 10});
    std::uniform_real_distribution<double> ud(1.0, 20.0);
    for (auto& e : pred.v) e = ud(rng);
    for (auto& e : gt.v) e = ud(rng);
    auto base = standard_metrics(pred, gt, ones_mask({10, 10}), 1e-6, 1e6);
    TD p2 = pred, g2 = gt;
    for (auto& e : p2.v) e *= 3.0;
    for (auto& e : g2.v) e *= 3.0;
    auto scaled = standard_metrics(p2, g2, ones_mask({10, 10}), 1e-6, 1e6);
    EXPECT_NEAR(scaled.delta1, base.delta1, 1e-12);
    EXPECT_NEAR(scaled.rel, base.rel, 1e-12);
    EXPECT_NEAR(scaled.silog, base.silog, 1e-9);
    EXPECT_NEAR(scaled.rms, 3.0 * base.rms, 1e-9);
}

TEST(Standard, PermutationInvariant) {
    std::mt19937_64 rng(3);
    TD pred({6, 6}), gt({6, 6});
    std::uniform_real_distribution<double> ud(1.0, 60.0);
    for (auto& e : pred.v) e = ud(rng);
    for (auto& e : gt.v) e = ud(rng);
    std::vector<size_t> perm(36);
    for (size_t i = 0; i < 36; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    TD p2({6, 6}), g2({6, 6});
    for (size_t i = 0; i < 36; ++i) {
        p2.v[i] = pred.v[perm[i]];
        g2.v[i] = gt.v[perm[i]];
    }
    auto a = standard_metrics(pred, gt, ones_mask({6, 6}));
    auto b = standard_metrics(p2, g2, ones_mask({6, 6}));
    EXPECT_NEAR(a.rms, b.rms, 1e-9);
    EXPECT_NEAR(a.rel, b.rel, 1e-12);
    EXPECT_NEAR(a.delta1, b.delta1, 1e-12);
    EXPECT_NEAR(a.silog, b.silog, 1e-9);
}

TEST(Standard, CapExcludesOutOfRangeGt) {
    TD pred({4}), gt({4});
    pred.v = {1.0, 2.0, 3.0, 4.0};
    gt.v = {1.1, 0.0005, 90.0, 4.2};  // middle two fall outside the cap
    auto m = standard_metrics(pred, gt, ones_mask({4}));
    EXPECT_EQ(m.n, 2);
    TD pred2({2}), gt2({2});
    pred2.v = {1.0, 4.0};
    gt2.v = {1.1, 4.2};
    auto m2 = standard_metrics(pred2, gt2, ones_mask({2}));
    EXPECT_DOUBLE_EQ(m.rms, m2.rms);
    EXPECT_DOUBLE_EQ(m.rel, m2.rel);
    // empty selection is an error, not a silent zero
    TD bad_gt({2});
    bad_gt.v = {0.0001, 100.0};
    EXPECT_THROW(standard_metrics(pred2, bad_gt, ones_mask({2})), std::runtime_error);
}

TEST(EdgeMask, ConstantDepthHasNoEdges) {
    TD gt({8, 8});
    for (auto& e : gt.v) e = 7.0;
    auto m = edge_mask(gt);
    for (auto e : m.v) EXPECT_EQ(e, 0);
}

TEST(EdgeMask, StepEdgeMarksBothSides) {
    TD gt({6, 10});
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 10; ++x) gt.at(y, x) = x < 5 ? 2.0 : 8.0;
    auto m = edge_mask(gt, 0.05);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 10; ++x) {
            bool expect_edge = (x == 4 || x == 5);  // central diff spans the step
            EXPECT_EQ(m.at(y, x), expect_edge ? 1 : 0) << "at " << y << "," << x;
        }
}

TEST(See, ZeroForOnePixelShiftedEdge) {
    // prediction places the step one pixel off; SEE forgives it, MAE does not
    TD gt({6, 12}), pred({6, 12});
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 12; ++x) {
            gt.at(y, x) = x < 6 ? 2.0 : 8.0;
            pred.at(y, x) = x < 7 ? 2.0 : 8.0;
        }
    auto edges = edge_mask(gt);
    EXPECT_DOUBLE_EQ(see(pred, gt, edges), 0.0);
    double mae = 0;
    int64_t n = 0;
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 12; ++x)
            if (edges.at(y, x)) {
                mae += std::abs(pred.at(y, x) - gt.at(y, x));
                ++n;
            }
    EXPECT_GT(mae / n, 0.0);
}

TEST(See, NeverExceedsEdgeMae) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> ud(1.0, 40.0);
    for (int trial = 0; trial < 20; ++trial) {
        TD gt({8, 8}), pred({8, 8});
        for (auto& e : gt.v) e = ud(rng);
        for (auto& e : pred.v) e = ud(rng);
        auto edges = edge_mask(gt, 0.01);
        double mae = 0;
        int64_t n = 0;
        for (int i = 0; i < 64; ++i)
            if (edges.v[static_cast<size_t>(i)]) {
                mae += std::abs(pred.v[static_cast<size_t>(i)] - gt.v[static_cast<size_t>(i)]);
                ++n;
            }
        if (n == 0) continue;
        EXPECT_LE(see(pred, gt, edges), mae / n + 1e-12);
    }
}

TEST(See, MatchesReference) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> ud(1.0, 40.0);
    for (int trial = 0; trial < 20; ++trial) {
        TD gt({9, 7}), pred({9, 7});
        for (auto& e : gt.v) e = ud(rng);
        for (auto& e : pred.v) e = ud(rng);
        auto edges = edge_mask(gt, 0.01);
        bool any = false;
        for (auto e : edges.v) any = any || e;
        if (!any) continue;
        EXPECT_NEAR(see(pred, gt, edges), oracles::see_reference(pred, gt, edges), 1e-12);
    }
}

TEST(Ce, ZeroForGloballyConsistentPredictor) {
    TD global({512, 768});
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> ud(1.0, 40.0);
    for (auto& e : global.v) e = ud(rng);
    auto fn = [&](const Window& w) {
        TD out({w.h, w.w});
        for (int y = 0; y < w.h; ++y)
            for (int x = 0; x < w.w; ++x) out.at(y, x) = global.at(w.y0 + y, w.x0 + x);
        return out;
    };
    EXPECT_DOUBLE_EQ(ce<double>(fn, 512, 768, 128, 192), 0.0);
}

TEST(Ce, ClosedFormForAffineWindowValue) {
    // predictor emits the constant x0+y0 per window: every horizontal pair
    // disagrees by sx, every vertical pair by sy; 24 pairs of each
    auto fn = [](const Window& w) {
        TD out({w.h, w.w});
        for (auto& e : out.v) e = static_cast<double>(w.x0 + w.y0);
        return out;
    };
    double expect = (24.0 * 96.0 + 24.0 * 64.0) / 48.0;
    EXPECT_DOUBLE_EQ(ce<double>(fn, 512, 768, 128, 192), expect);
}

TEST(Ce, CachesWindowPredictions) {
    // 4x4 grid: 28 horizontal + 28 vertical lattice windows share the 16
    // grid positions, so exactly 40 predictions are computed
    int calls = 0;
    auto fn = [&](const Window& w) {
        ++calls;
        TD out({w.h, w.w});
        for (auto& e : out.v) e = 1.0;
        return out;
    };
    EXPECT_DOUBLE_EQ(ce<double>(fn, 512, 768, 128, 192), 0.0);
    EXPECT_EQ(calls, 40);
}

TEST(Ce, InvariantToGlobalOffset) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> ud(1.0, 5.0);
    std::map<std::pair<int, int>, double> vals;
    auto value_of = [&](const Window& w) {
        auto key = std::make_pair(w.x0, w.y0);
        auto it = vals.find(key);
        if (it == vals.end()) it = vals.emplace(key, ud(rng)).first;
        return it->second;
    };
    auto make_fn = [&](double off) {
        return [&, off](const Window& w) {
            TD out({w.h, w.w});
            for (auto& e : out.v) e = value_of(w) + off;
            return out;
        };
    };
    double a = ce<double>(make_fn(0.0), 256, 384, 128, 192);
    double b = ce<double>(make_fn(10.0), 256, 384, 128, 192);
    EXPECT_NEAR(a, b, 1e-12);
    EXPECT_GT(a, 0.0);
}

TEST(EvalReport, CsvAndJson) {
    EvalReport r;
    r.delta1 = 95.0;
    r.rel = 0.05;
    r.rms = 1.2;
    r.silog = 8.0;
    r.see = 0.3;
    r.ce = 0.1;
    r.n_pixels = 100;
    EXPECT_STREQ(EvalReport::csv_header(), "id,method,delta1,rel,rms,silog,see,ce");
    EXPECT_EQ(r.csv_row("img0", "fused").substr(0, 11), "img0,fused,");
    auto j = r.to_json();
    EXPECT_DOUBLE_EQ(j.at("rms").get<double>(), 1.2);
    EXPECT_EQ(j.at("n_pixels").get<int64_t>(), 100);
}
