// Independent reference implementations used as test oracles. These stay
// deliberately naive (plain loops, no shared code with the library paths
// they check).
#ifndef TILEDEPTH_TEST_ORACLES_HPP
#define TILEDEPTH_TEST_ORACLES_HPP

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "tiledepth/models.hpp"
#include "tiledepth/tensor.hpp"

namespace oracles {

using tiledepth::ParamStore;
using tiledepth::Tensor;

// ---- finite-difference gradient check ----------------------------------

// build: evaluates the scalar loss for the given params; when grads_out is
// non-null it must also fill analytic gradients (one graph construction).
using BuildFn = std::function<double(const ParamStore<double>&,
                                     std::map<std::string, Tensor<double>>*)>;

struct GradCheck {
    double max_rel_err = 0;
    int n_checked = 0;
};

inline GradCheck finite_diff_check(ParamStore<double>& params, const BuildFn& build,
                                   int n_picks, uint64_t seed, double eps = 1e-5) {
    std::map<std::string, Tensor<double>> grads;
    build(params, &grads);

    std::vector<std::string> names;
    for (const auto& [k, v] : params.t) names.push_back(k);
    std::mt19937_64 rng(seed);
    GradCheck res;
    for (int p = 0; p < n_picks; ++p) {
        const std::string& name =
            names[std::uniform_int_distribution<size_t>(0, names.size() - 1)(rng)];
        Tensor<double>& t = params.at(name);
        int64_t idx =
            std::uniform_int_distribution<int64_t>(0, t.numel() - 1)(rng);
        double orig = t[idx];
        t[idx] = orig + eps;
        double lp = build(params, nullptr);
        t[idx] = orig - eps;
        double lm = build(params, nullptr);
        t[idx] = orig;
        double fd = (lp - lm) / (2 * eps);
        double an = grads.at(name)[idx];
        double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
        res.max_rel_err = std::max(res.max_rel_err, rel);
        ++res.n_checked;
    }
    return res;
}

// ---- reference bilinear sampler (for the roi oracle) -------------------

// Samples feature plane (border-clamped) at continuous coords; matches the
// half-pixel-center convention.
inline double bilinear_at(const Tensor<double>& f, int c, double fy, double fx) {
    int H = f.dim(1), W = f.dim(2);
    double yf = std::floor(fy), xf = std::floor(fx);
    int y0 = static_cast<int>(yf), x0 = static_cast<int>(xf);
    double wy = fy - yf, wx = fx - xf;
    auto px = [&](int y, int x) {
        y = std::clamp(y, 0, H - 1);
        x = std::clamp(x, 0, W - 1);
        return f.at(c, y, x);
    };
    return px(y0, x0) * (1 - wy) * (1 - wx) + px(y0, x0 + 1) * (1 - wy) * wx +
           px(y0 + 1, x0) * wy * (1 - wx) + px(y0 + 1, x0 + 1) * wy * wx;
}

inline Tensor<double> roi_reference(const Tensor<double>& feat, int win_x0, int win_y0,
                                    int win_w, int win_h, int img_h, int img_w,
                                    int out_h, int out_w) {
    int C = feat.dim(0), FH = feat.dim(1), FW = feat.dim(2);
    Tensor<double> out({C, out_h, out_w});
    for (int c = 0; c < C; ++c)
        for (int oy = 0; oy < out_h; ++oy)
            for (int ox = 0; ox < out_w; ++ox) {
                double iy = win_y0 + (oy + 0.5) * static_cast<double>(win_h) / out_h;
                double ix = win_x0 + (ox + 0.5) * static_cast<double>(win_w) / out_w;
                double fy = iy / img_h * FH - 0.5;
                double fx = ix / img_w * FW - 0.5;
                out.at(c, oy, ox) = bilinear_at(feat, c, fy, fx);
            }
    return out;
}

// ---- scalar-loop metric oracles ----------------------------------------

struct RefStandard {
    double delta1, rel, rms, silog;
};

inline RefStandard standard_reference(const std::vector<double>& pred,
                                      const std::vector<double>& gt, double cap_lo,
                                      double cap_hi) {
    double se = 0, rel = 0, s1 = 0, s2 = 0;
    int64_t n = 0, ok = 0;
    for (size_t i = 0; i < gt.size(); ++i) {
        if (gt[i] < cap_lo || gt[i] > cap_hi) continue;
        se += (gt[i] - pred[i]) * (gt[i] - pred[i]);
        rel += std::abs(gt[i] - pred[i]) / gt[i];
        double e = std::log(pred[i]) - std::log(gt[i]);
        s1 += e;
        s2 += e * e;
        if (std::max(gt[i] / pred[i], pred[i] / gt[i]) < 1.25) ++ok;
        ++n;
    }
    RefStandard r;
    r.rms = std::sqrt(se / n);
    r.rel = rel / n;
    r.silog = std::sqrt(std::abs(s2 / n - (s1 / n) * (s1 / n))) * 100.0;
    r.delta1 = 100.0 * ok / n;
    return r;
}

inline double see_reference(const Tensor<double>& pred, const Tensor<double>& gt,
                            const Tensor<uint8_t>& edges) {
    int H = gt.dim(0), W = gt.dim(1);
    double acc = 0;
    int64_t n = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (!edges.at(y, x)) continue;
            double best = 1e300;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    int qy = std::min(std::max(y + dy, 0), H - 1);
                    int qx = std::min(std::max(x + dx, 0), W - 1);
                    best = std::min(best, std::abs(pred.at(qy, qx) - gt.at(y, x)));
                }
            acc += best;
            ++n;
        }
    return acc / n;
}

// normal-equations solution of min sum (s*f + t - c)^2
inline std::pair<double, double> scale_shift_reference(const std::vector<double>& f,
                                                       const std::vector<double>& c) {
    double a11 = 0, a12 = 0, a22 = static_cast<double>(f.size()), b1 = 0, b2 = 0;
    for (size_t i = 0; i < f.size(); ++i) {
        a11 += f[i] * f[i];
        a12 += f[i];
        b1 += f[i] * c[i];
        b2 += c[i];
    }
    double det = a11 * a22 - a12 * a12;
    double s = (b1 * a22 - a12 * b2) / det;
    double t = (a11 * b2 - a12 * b1) / det;
    return {s, t};
}

}  // namespace oracles

#endif
