#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "tiledepth/autograd.hpp"

using namespace tiledepth;
using G = Graph<double>;
using TD = Tensor<double>;

namespace {

TD randn(std::vector<int> shape, std::mt19937_64& rng, double scale = 1.0) {
    TD t(shape);
    std::normal_distribution<double> d(0.0, scale);
    for (auto& e : t.v) e = d(rng);
    return t;
}

// Wraps an op-specific graph builder into the oracle's BuildFn. The builder
// gets a graph plus a leaf Var per parameter and returns the scalar loss Var.
oracles::BuildFn wrap(std::function<Var(G&, std::map<std::string, Var>&)> body) {
    return [body](const ParamStore<double>& p,
                  std::map<std::string, TD>* grads) -> double {
        G g;
        std::map<std::string, Var> vs;
        for (const auto& [k, v] : p.t) vs[k] = g.input(v, true);
        Var loss = body(g, vs);
        double L = g.val(loss).v[0];
        if (grads) {
            g.backward(loss);
            for (const auto& [k, var] : vs) {
                if (g.grad(var).v.empty())
                    (*grads)[k] = TD(p.t.at(k).shape);
                else
                    (*grads)[k] = g.grad(var);
            }
        }
        return L;
    };
}

// reduce any tensor to a scalar by mse against a fixed pseudo-target
Var to_scalar(G& g, Var y, uint64_t seed = 5) {
    std::mt19937_64 rng(seed);
    Var tgt = g.input(randn(g.val(y).shape, rng), false);
    return g.mse(y, tgt);
}

}  // namespace

TEST(Autograd, MseKnownGradient) {
    G g;
    TD a({2, 2});
    a.v = {1.0, 2.0, 3.0, 4.0};
    TD b({2, 2});
    b.v = {0.0, 0.0, 0.0, 0.0};
    Var va = g.input(a, true);
    Var vb = g.input(b, false);
    Var l = g.mse(va, vb);
    EXPECT_DOUBLE_EQ(g.val(l).v[0], (1.0 + 4.0 + 9.0 + 16.0) / 4.0);
    g.backward(l);
    for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(g.grad(va)[i], 2.0 * a[i] / 4.0);
    EXPECT_TRUE(g.grad(vb).v.empty());  // frozen leaf stays untouched
}

TEST(Autograd, Conv2dGradcheck) {
    std::mt19937_64 rng(11);
    ParamStore<double> p;
    p.t["x"] = randn({3, 6, 7}, rng);
    p.t["w"] = randn({4, 3, 3, 3}, rng, 0.5);
    p.t["b"] = randn({4}, rng, 0.1);
    auto fn = wrap([](G& g, std::map<std::string, Var>& vs) {
        return to_scalar(g, g.conv2d(vs["x"], vs["w"], vs["b"], 1, 1));
    });
    auto r = oracles::finite_diff_check(p, fn, 60, 1);
    EXPECT_LT(r.max_rel_err, 1e-4) << "checked " << r.n_checked;
}

TEST(Autograd, Conv2dStride2Gradcheck) {
    std::mt19937_64 rng(12);
    ParamStore<double> p;
    p.t["x"] = randn({2, 8, 8}, rng);
    p.t["w"] = randn({5, 2, 3, 3}, rng, 0.5);
    p.t["b"] = randn({5}, rng, 0.1);
    auto fn = wrap([](G& g, std::map<std::string, Var>& vs) {
        return to_scalar(g, g.conv2d(vs["x"], vs["w"], vs["b"], 2, 1));
    });
    auto r = oracles::finite_diff_check(p, fn, 60, 2);
    EXPECT_LT(r.max_rel_err, 1e-4);
}

TEST(Autograd, Conv2dShape) {
    G g;
    std::mt19937_64 rng(3);
    Var x = g.input(randn({3, 16, 24}, rng));
    Var w = g.input(randn({8, 3, 3, 3}, rng));
    Var b = g.input(TD({8}));
    Var y = g.conv2d(x, w, b, 2, 1);
    EXPECT_EQ(g.val(y).shape, (std::vector<int>{8, 8, 12}));
}

TEST(Autograd, LinearGradcheck) {
    std::mt19937_64 rng(13);
    ParamStore<double> p;
    p.t["x"] = randn({7, 5}, rng);
    p.t["w"] = randn({5, 6}, rng, 0.5);
    p.t["b"] = randn({6}, rng, 0.1);
    auto fn = wrap([](G& g, std::map<std::string, Var>& vs) {
        return to_scalar(g, g.linear(vs["x"], vs["w"], vs["b"]));
    });
    auto r = oracles::finite_diff_check(p, fn, 60, 3);
    EXPECT_LT(r.max_rel_err, 1e-4);
}

TEST(Autograd, LayerNormGradcheck) {
    std::mt19937_64 rng(14);
    ParamStore<double> p;
    p.t["x"] = randn({6, 8}, rng);
    p.t["gamma"] = randn({8}, rng, 0.3);
    p.t["beta"] = randn({8}, rng, 0.3);
    for (auto& e : p.t["gamma"].v) e += 1.0;
    auto fn = wrap([](G& g, std::map<std::string, Var>& vs) {
        return to_scalar(g, g.layernorm(vs["x"], vs["gamma"], vs["beta"]));
    });
    auto r = oracles::finite_diff_check(p, fn, 60, 4);
    EXPECT_LT(r.max_rel_err, 1e-4);
}

TEST(Autograd, LayerNormNormalizes) {
    G g;
    std::mt19937_64 rng(4);
    Var x = g.input(randn({3, 16}, rng, 3.0));
    TD gamma({16}), beta({16});
    for (auto& e : gamma.v) e = 1.0;
    Var y = g.layernorm(x, g.input(gamma), g.input(beta));
    for (int i = 0; i < 3; ++i) {
        double mu = 0, var = 0;
        for (int j = 0; j < 16; ++j) mu += g.val(y).at(i, j);
        mu /= 16;
        for (int j = 0; j < 16; ++j) {
            double d = g.val(y).at(i, j) - mu;
            var += d * d;
        }
        EXPECT_NEAR(mu, 0.0, 1e-9);
        EXPECT_NEAR(var / 16, 1.0, 1e-4);  // eps shifts variance slightly
    }
}

TEST(Autograd, WindowAttentionGradcheck) {
    std::mt19937_64 rng(15);
    ParamStore<double> p;
    // 2 windows of 4 tokens, C=6, 2 heads
    p.t["qkv"] = randn({8, 18}, rng, 0.7);
    auto fn = wrap([](G& g, std::map<std::string, Var>& vs) {
        return to_scalar(g, g.window_attention(vs["qkv"], 2, 4, 2));
    });
    auto r = oracles::finite_diff_check(p, fn, 80, 5);
    EXPECT_LT(r.max_rel_err, 1e-4);
}

TEST(Autograd, WindowAttentionIsolatesWindows) {
    // perturbing tokens of window 1 must not change outputs of window 0
    std::mt19937_64 rng(6);
    TD qkv = randn({8, 18}, rng);
    G g1;
    Var a = g1.window_attention(g1.input(qkv), 2, 4, 2);
    TD qkv2 = qkv;
    for (int t = 4; t < 8; ++t)
        for (int c = 0; c < 18; ++c) qkv2.at(t, c) += 0.37 * (t + c);
    G g2;
    Var b = g2.window_attention(g2.input(qkv2), 2, 4, 2);
    for (int t = 0; t < 4; ++t)
        for (int c = 0; c < 6; ++c)
            EXPECT_DOUBLE_EQ(g1.val(a).at(t, c), g2.val(b).at(t, c));
}

TEST(Autograd, Upsample2xGradcheck) {
    std::mt19937_64 rng(16);
    ParamStore<double> p;
    p.t["x"] = randn({3, 4, 5}, rng);
    auto fn = wrap([](G& g, std::map<std::string, Var>& vs) {
        return to_scalar(g, g.upsample2x(vs["x"]));
    });
    auto r = oracles::finite_diff_check(p, fn, 50, 6);
    EXPECT_LT(r.max_rel_err, 1e-4);
}

TEST(Autograd, Upsample2xConstantPreserving) {
    G g;
    TD x({2, 3, 4});
    for (auto& e : x.v) e = 2.5;
    Var y = g.upsample2x(g.input(x));
    EXPECT_EQ(g.val(y).shape, (std::vector<int>{2, 6, 8}));
    for (double e : g.val(y).v) EXPECT_DOUBLE_EQ(e, 2.5);
}

TEST(Autograd, RoiSampleGradcheck) {
    std::mt19937_64 rng(17);
    ParamStore<double> p;
    p.t["f"] = randn({3, 8, 12}, rng);
    auto fn = wrap([](G& g, std::map<std::string, Var>& vs) {
        return to_scalar(g, g.roi_sample(vs["f"], 48, 16, 96, 64, 128, 192, 10, 14));
    });
    auto r = oracles::finite_diff_check(p, fn, 50, 7);
    EXPECT_LT(r.max_rel_err, 1e-4);
}

TEST(Autograd, RoiSampleMatchesReference) {
    std::mt19937_64 rng(8);
    TD f = randn({4, 16, 24}, rng);
    struct Case {
        int x0, y0, w, h, oh, ow;
    };
    for (Case c : {Case{0, 0, 192, 128, 16, 24}, {32, 64, 96, 64, 8, 12},
                   {160, 96, 32, 32, 5, 7}}) {
        G g;
        Var y = g.roi_sample(g.input(f), c.x0, c.y0, c.w, c.h, 128, 192, c.oh, c.ow);
        TD ref = oracles::roi_reference(f, c.x0, c.y0, c.w, c.h, 128, 192, c.oh, c.ow);
        ASSERT_EQ(g.val(y).shape, ref.shape);
        for (int64_t i = 0; i < ref.numel(); ++i)
            EXPECT_NEAR(g.val(y)[i], ref[i], 1e-12);
    }
}

TEST(Autograd, RoiFullWindowIsIdentityAtMatchingRes) {
    // sampling the whole image at the feature map's own resolution is exact
    std::mt19937_64 rng(9);
    TD f = randn({2, 8, 12}, rng);
    G g;
    Var y = g.roi_sample(g.input(f), 0, 0, 192, 128, 128, 192, 8, 12);
    for (int64_t i = 0; i < f.numel(); ++i) EXPECT_NEAR(g.val(y)[i], f[i], 1e-12);
}

TEST(Autograd, SilogGradcheck) {
    std::mt19937_64 rng(18);
    ParamStore<double> p;
    p.t["x"] = randn({5, 6}, rng);
    TD gt({5, 6});
    std::uniform_real_distribution<double> ud(1.0, 10.0);
    for (auto& e : gt.v) e = ud(rng);
    Tensor<uint8_t> mask({5, 6});
    for (size_t i = 0; i < mask.v.size(); ++i) mask.v[i] = (i % 7 != 0);
    auto fn = wrap([gt, mask](G& g, std::map<std::string, Var>& vs) {
        Var pred = g.sigmoid_range(vs["x"], 0.5, 20.0);
        return g.silog(pred, gt, mask, 10.0, 0.85);
    });
    auto r = oracles::finite_diff_check(p, fn, 60, 8);
    EXPECT_LT(r.max_rel_err, 1e-4);
}

TEST(Autograd, SilogZeroAtExactMatch) {
    G g;
    TD gt({3, 3});
    for (size_t i = 0; i < 9; ++i) gt.v[i] = 1.0 + static_cast<double>(i);
    Tensor<uint8_t> mask({3, 3});
    for (auto& m : mask.v) m = 1;
    Var pred = g.input(gt, true);
    Var l = g.silog(pred, gt, mask, 10.0, 0.85);
    EXPECT_DOUBLE_EQ(g.val(l).v[0], 0.0);
}

TEST(Autograd, SigmoidRangeBoundsAndGradcheck) {
    std::mt19937_64 rng(19);
    ParamStore<double> p;
    p.t["x"] = randn({4, 4}, rng, 2.0);
    auto fn = wrap([](G& g, std::map<std::string, Var>& vs) {
        return to_scalar(g, g.sigmoid_range(vs["x"], 1.0, 80.0));
    });
    auto r = oracles::finite_diff_check(p, fn, 40, 9);
    EXPECT_LT(r.max_rel_err, 1e-4);

    G g;
    Var y = g.sigmoid_range(g.input(randn({10, 10}, rng, 5.0)), 1.0, 80.0);
    for (double e : g.val(y).v) {
        EXPECT_GT(e, 1.0);
        EXPECT_LT(e, 80.0);
    }
}

TEST(Autograd, StructureOpsGradcheck) {
    // composite: concat -> relu -> crop -> gather -> add/scale -> mse
    std::mt19937_64 rng(20);
    ParamStore<double> p;
    p.t["a"] = randn({2, 5, 6}, rng);
    p.t["b"] = randn({3, 5, 6}, rng);
    auto idx = std::make_shared<std::vector<int64_t>>();
    for (int i = 0; i < 24; ++i) idx->push_back((i * 7) % 60);
    auto fn = wrap([idx](G& g, std::map<std::string, Var>& vs) {
        Var c = g.concat_ch({vs["a"], vs["b"]});
        Var r = g.relu(c);
        Var cr = g.crop(r, 1, 1, 4, 3);  // [5,4,3]
        Var ga = g.gather(cr, {4, 6}, idx);
        Var s = g.scale(ga, 1.7);
        Var t = g.add(s, g.reshape(ga, {4, 6}));
        return to_scalar(g, t);
    });
    auto r = oracles::finite_diff_check(p, fn, 60, 10);
    EXPECT_LT(r.max_rel_err, 1e-4);
}

TEST(Autograd, WeightedSumGradient) {
    G g;
    TD a({1}), b({1});
    a.v[0] = 2.0;
    b.v[0] = 5.0;
    Var va = g.input(a, true);
    Var vb = g.input(b, true);
    Var l = g.weighted_sum({va, vb}, {0.5, 0.1});
    EXPECT_DOUBLE_EQ(g.val(l).v[0], 1.5);
    g.backward(l);
    EXPECT_DOUBLE_EQ(g.grad(va).v[0], 0.5);
    EXPECT_DOUBLE_EQ(g.grad(vb).v[0], 0.1);
}

TEST(Autograd, FrozenBranchRecordsNoBackward) {
    G g;
    std::mt19937_64 rng(21);
    Var x = g.input(randn({2, 4, 4}, rng), false);
    Var w = g.input(randn({2, 2, 3, 3}, rng), false);
    Var y = g.conv2d(x, w, g.input(TD({2})), 1, 1);
    EXPECT_FALSE(g.needs_grad(y));
    EXPECT_FALSE(static_cast<bool>(g.nodes.back().back));
}
