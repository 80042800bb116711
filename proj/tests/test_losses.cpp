#include <gtest/gtest.h>

#include <random>

#include "tiledepth/losses.hpp"

using namespace tiledepth;
using TD = Tensor<double>;

namespace {

Tensor<uint8_t> ones_mask(std::vector<int> shape) {
    Tensor<uint8_t> m(shape);
    for (auto& e : m.v) e = 1;
    return m;
}

}  // namespace

TEST(Silog, HandWorkedExamples) {
    // e = {0, 1}: mean(e^2)=0.5, mean(e)=0.5 -> 10*sqrt(0.5 - 0.85*0.25)
    TD gt({2}), pred({2});
    gt.v = {1.0, 1.0};
    pred.v = {1.0, std::exp(1.0)};
    auto m = ones_mask({2});
    EXPECT_NEAR(silog_loss(pred, gt, m), 10.0 * std::sqrt(0.2875), 1e-12);

    // e = {0.5,-0.5}: mean(e)=0 so the variance penalty vanishes
    pred.v = {std::exp(0.5), std::exp(-0.5)};
    EXPECT_NEAR(silog_loss(pred, gt, m), 10.0 * std::sqrt(0.25), 1e-12);
}

TEST(Silog, ZeroAtExactMatch) {
    std::mt19937_64 rng(1);
    TD gt({6, 7});
    std::uniform_real_distribution<double> ud(1.0, 70.0);
    for (auto& e : gt.v) e = ud(rng);
    EXPECT_DOUBLE_EQ(silog_loss(gt, gt, ones_mask({6, 7})), 0.0);
}

TEST(Silog, ScaleInvariantAtLambdaOne) {
    std::mt19937_64 rng(2);
    TD gt({8, 8}), pred({8, 8});
    std::uniform_real_distribution<double> ud(1.0, 70.0);
    for (auto& e : gt.v) e = ud(rng);
    for (auto& e : pred.v) e = ud(rng);
    auto m = ones_mask({8, 8});
    double base = silog_loss(pred, gt, m, 10.0, 1.0);
    for (double c : {0.1, 2.0, 17.5}) {
        TD scaled = pred;
        for (auto& e : scaled.v) e *= c;
        EXPECT_NEAR(silog_loss(scaled, gt, m, 10.0, 1.0), base, 1e-9);
    }
    // at lambda < 1 scaling does change the loss
    TD scaled = pred;
    for (auto& e : scaled.v) e *= 3.0;
    EXPECT_GT(std::abs(silog_loss(scaled, gt, m) - silog_loss(pred, gt, m)), 1e-6);
}

TEST(Silog, MaskedPixelsIgnored) {
    TD gt({4}), pred({4});
    gt.v = {2.0, 3.0, 4.0, 5.0};
    pred.v = {2.5, 3.0, 1e6, 5.0};  // huge error at the masked-out pixel
    Tensor<uint8_t> m({4});
    m.v = {1, 1, 0, 1};
    TD gt3({3}), pred3({3});
    gt3.v = {2.0, 3.0, 5.0};
    pred3.v = {2.5, 3.0, 5.0};
    EXPECT_DOUBLE_EQ(silog_loss(pred, gt, m), silog_loss(pred3, gt3, ones_mask({3})));
    Tensor<uint8_t> empty({4});
    EXPECT_THROW(silog_loss(pred, gt, empty), std::runtime_error);
}

TEST(Silog, GraphNodeMatchesTensorVersion) {
    std::mt19937_64 rng(3);
    TD gt({5, 9}), pred({5, 9});
    std::uniform_real_distribution<double> ud(1.5, 60.0);
    for (auto& e : gt.v) e = ud(rng);
    for (auto& e : pred.v) e = ud(rng);
    auto m = ones_mask({5, 9});
    LossConfig lc;
    Graph<double> g;
    Var l = silog_loss_node(g, g.input(pred), gt, m, lc);
    EXPECT_NEAR(g.val(l).v[0], silog_loss(pred, gt, m), 1e-12);
}

namespace {

// Two patch outputs whose depth and features sample one global field, so
// values on any overlap agree exactly.
struct FakePair {
    Graph<double> g;
    NetOut<double> o1, o2;
};

NetOut<double> fake_out(Graph<double>& g, const Window& w, const ModelConfig& cfg,
                        double jitter, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ud(-jitter, jitter);
    TD d({cfg.patch_h, cfg.patch_w});
    for (int y = 0; y < cfg.patch_h; ++y)
        for (int x = 0; x < cfg.patch_w; ++x)
            d.at(y, x) = 1.0 + 0.01 * (w.y0 + y) + 0.02 * (w.x0 + x) + ud(rng);
    NetOut<double> o;
    o.depth = g.input(d, false);
    for (int i = 1; i <= cfg.levels; ++i) {
        int C = cfg.channels[static_cast<size_t>(i - 1)];
        int h = cfg.patch_h >> i, wdt = cfg.patch_w >> i;
        TD f({C, h, wdt});
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < wdt; ++x)
                    f.at(c, y, x) = 0.1 * c + 0.03 * (w.y0 / (1 << i) + y) +
                                    0.07 * (w.x0 / (1 << i) + x) + ud(rng);
        o.pyramid.push_back(g.input(f, false));
    }
    return o;
}

}  // namespace

TEST(Consistency, ZeroWhenPredictionsAgreeOnOverlap) {
    ModelConfig cfg;
    cfg.levels = 2;
    cfg.channels = {4, 6};
    cfg.patch_h = 32;
    cfg.patch_w = 48;
    Window w1{0, 0, 48, 32}, w2{16, 8, 48, 32};
    Graph<double> g;
    auto o1 = fake_out(g, w1, cfg, 0.0, 1);
    auto o2 = fake_out(g, w2, cfg, 0.0, 2);
    auto [feat, depth] = consistency_loss(g, o1, o2, w1, w2, cfg);
    EXPECT_NEAR(g.val(feat).v[0], 0.0, 1e-24);
    EXPECT_NEAR(g.val(depth).v[0], 0.0, 1e-24);
}

TEST(Consistency, SymmetricInArguments) {
    ModelConfig cfg;
    cfg.levels = 2;
    cfg.channels = {4, 6};
    cfg.patch_h = 32;
    cfg.patch_w = 48;
    Window w1{0, 0, 48, 32}, w2{16, 8, 48, 32};
    Graph<double> g;
    auto o1 = fake_out(g, w1, cfg, 0.2, 3);
    auto o2 = fake_out(g, w2, cfg, 0.2, 4);
    auto [f12, d12] = consistency_loss(g, o1, o2, w1, w2, cfg);
    auto [f21, d21] = consistency_loss(g, o2, o1, w2, w1, cfg);
    EXPECT_NEAR(g.val(f12).v[0], g.val(f21).v[0], 1e-12);
    EXPECT_NEAR(g.val(d12).v[0], g.val(d21).v[0], 1e-12);
    EXPECT_GT(g.val(f12).v[0], 0.0);
    EXPECT_GT(g.val(d12).v[0], 0.0);
}

TEST(Consistency, MatchesLoopOracle) {
    ModelConfig cfg;
    cfg.levels = 2;
    cfg.channels = {4, 6};
    cfg.patch_h = 32;
    cfg.patch_w = 48;
    Window w1{0, 0, 48, 32}, w2{16, 8, 48, 32};
    Graph<double> g;
    auto o1 = fake_out(g, w1, cfg, 0.3, 5);
    auto o2 = fake_out(g, w2, cfg, 0.3, 6);
    auto [feat, depth] = consistency_loss(g, o1, o2, w1, w2, cfg);

    Window r = intersect(w1, w2)->region;
    const TD& d1 = g.val(o1.depth);
    const TD& d2 = g.val(o2.depth);
    double dep = 0;
    for (int y = 0; y < r.h; ++y)
        for (int x = 0; x < r.w; ++x) {
            double diff = d1.at(r.y0 - w1.y0 + y, r.x0 - w1.x0 + x) -
                          d2.at(r.y0 - w2.y0 + y, r.x0 - w2.x0 + x);
            dep += diff * diff;
        }
    dep /= static_cast<double>(r.h) * r.w;
    EXPECT_NEAR(g.val(depth).v[0], dep, 1e-12);

    double ft = 0;
    for (int i = 1; i <= cfg.levels; ++i) {
        int s = 1 << i;
        const TD& f1 = g.val(o1.pyramid[static_cast<size_t>(i - 1)]);
        const TD& f2 = g.val(o2.pyramid[static_cast<size_t>(i - 1)]);
        int C = f1.dim(0);
        double lvl = 0;
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < r.h / s; ++y)
                for (int x = 0; x < r.w / s; ++x) {
                    double diff = f1.at(c, (r.y0 - w1.y0) / s + y, (r.x0 - w1.x0) / s + x) -
                                  f2.at(c, (r.y0 - w2.y0) / s + y, (r.x0 - w2.x0) / s + x);
                    lvl += diff * diff;
                }
        ft += lvl / (static_cast<double>(C) * (r.h / s) * (r.w / s));
    }
    EXPECT_NEAR(g.val(feat).v[0], ft, 1e-12);
}

TEST(Consistency, DisjointWindowsRejected) {
    ModelConfig cfg;
    cfg.levels = 2;
    cfg.channels = {4, 6};
    cfg.patch_h = 32;
    cfg.patch_w = 48;
    Graph<double> g;
    Window w1{0, 0, 48, 32}, w2{48, 0, 48, 32};
    auto o1 = fake_out(g, w1, cfg, 0.1, 7);
    auto o2 = fake_out(g, w2, cfg, 0.1, 8);
    EXPECT_THROW(consistency_loss(g, o1, o2, w1, w2, cfg), std::runtime_error);
}

TEST(LossReport, CombinationIdentity) {
    LossConfig lc;
    LossReport r = make_report(1.5, 0.25, 4.0, lc);
    EXPECT_DOUBLE_EQ(r.total, 1.5 + lc.mu2 * (0.25 + lc.mu1 * 4.0));
    EXPECT_DOUBLE_EQ(total_loss(1.5, 0.25 + lc.mu1 * 4.0, lc.mu2), r.total);
    // mu2 = 0 reduces the objective to the silog term alone
    LossConfig off = lc;
    off.mu2 = 0.0;
    EXPECT_DOUBLE_EQ(make_report(1.5, 0.25, 4.0, off).total, 1.5);
    EXPECT_THROW(total_loss(std::nan(""), 0.0, 0.1), std::runtime_error);
}

TEST(LossReport, CsvRow) {
    LossReport r = make_report(2.0, 0.5, 1.0, LossConfig{});
    EXPECT_STREQ(LossReport::csv_header(), "step,total,si,feat,depth");
    EXPECT_EQ(r.csv_row(3).substr(0, 2), "3,");
}
