#ifndef TILEDEPTH_METRICS_HPP
#define TILEDEPTH_METRICS_HPP

#include <map>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tiledepth/geometry.hpp"
#include "tiledepth/tensor.hpp"

namespace tiledepth {

struct EvalReport {
    double delta1 = 0;  // percent
    double rel = 0;
    double rms = 0;     // meters
    double silog = 0;   // x100
    double see = 0;     // meters
    double ce = 0;      // meters
    int64_t n_pixels = 0;
    double cap_lo = 1e-3, cap_hi = 80.0;

    static const char* csv_header() { return "id,method,delta1,rel,rms,silog,see,ce"; }
    std::string csv_row(const std::string& id, const std::string& method) const {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%s,%s,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g", id.c_str(),
                      method.c_str(), delta1, rel, rms, silog, see, ce);
        return buf;
    }
    nlohmann::json to_json() const {
        return {{"delta1", delta1}, {"rel", rel},   {"rms", rms}, {"silog", silog},
                {"see", see},       {"ce", ce},     {"n_pixels", n_pixels}};
    }
};

struct StandardMetrics {
    double delta1, rel, rms, silog;
    int64_t n;
};

// delta1 / REL / RMS / SiLog over pixels with mask set and gt inside the cap.
template <class T>
StandardMetrics standard_metrics(const Tensor<T>& pred, const Tensor<T>& gt,
                                 const Tensor<uint8_t>& mask, double cap_lo = 1e-3,
                                 double cap_hi = 80.0) {
    check(pred.numel() == gt.numel() && gt.numel() == mask.numel(),
          "standard_metrics: shape mismatch");
    double se = 0, rel = 0, e1 = 0, e2 = 0;
    int64_t n = 0, ok = 0;
    for (int64_t i = 0; i < gt.numel(); ++i) {
        double d = gt[i], dh = pred[i];
        if (!mask[i] || d < cap_lo || d > cap_hi) continue;
        check(dh > 0, "standard_metrics: non-positive prediction");
        se += (d - dh) * (d - dh);
        rel += std::abs(d - dh) / d;
        double e = std::log(dh) - std::log(d);
        e1 += e;
        e2 += e * e;
        if (std::max(d / dh, dh / d) < 1.25) ++ok;
        ++n;
    }
    check(n > 0, "standard_metrics: no pixels inside depth cap");
    StandardMetrics m;
    m.n = n;
    m.rms = std::sqrt(se / n);
    m.rel = rel / n;
    m.silog = std::sqrt(std::abs(e2 / n - (e1 / n) * (e1 / n))) * 100.0;
    m.delta1 = 100.0 * ok / n;
    return m;
}

// Edge pixels: max central-difference gradient component of log-depth
// above grad_thresh (borders replicate).
template <class T>
Tensor<uint8_t> edge_mask(const Tensor<T>& gt, double grad_thresh = 0.05) {
    int H = gt.dim(0), W = gt.dim(1);
    Tensor<uint8_t> m({H, W});
    auto lg = [&](int y, int x) {
        y = std::clamp(y, 0, H - 1);
        x = std::clamp(x, 0, W - 1);
        return std::log(static_cast<double>(gt.at(y, x)));
    };
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double gx = std::abs(lg(y, x + 1) - lg(y, x - 1)) / 2.0;
            double gy = std::abs(lg(y + 1, x) - lg(y - 1, x)) / 2.0;
            m.at(y, x) = std::max(gx, gy) > grad_thresh ? 1 : 0;
        }
    return m;
}

// Soft Edge Error: per edge pixel, the minimum absolute depth error within
// its 3x3 neighborhood (border-clamped); mean over edge pixels. Tolerates
// one-pixel edge misalignment while still penalizing over-smoothing.
template <class T>
double see(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<uint8_t>& edges) {
    int H = gt.dim(0), W = gt.dim(1);
    check(pred.shape == gt.shape && edges.shape == gt.shape, "see: shape mismatch");
    double acc = 0;
    int64_t n = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (!edges.at(y, x)) continue;
            double best = std::numeric_limits<double>::infinity();
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    int qy = std::clamp(y + dy, 0, H - 1);
                    int qx = std::clamp(x + dx, 0, W - 1);
                    best = std::min(
                        best, std::abs(static_cast<double>(pred.at(qy, qx)) -
                                       static_cast<double>(gt.at(y, x))));
                }
            acc += best;
            ++n;
        }
    check(n > 0, "see: empty edge mask");
    return acc / n;
}

// Consistency Error: mean absolute disagreement of per-patch predictions
// on half-overlapping window pairs (horizontal and vertical adjacencies
// over the grid + half-shifted window lattice).
template <class T>
double ce(const std::function<Tensor<T>(const Window&)>& predict_fn, int img_h, int img_w,
          int patch_h, int patch_w) {
    check_divisible(img_h, patch_h, "height");
    check_divisible(img_w, patch_w, "width");
    int rows = img_h / patch_h, cols = img_w / patch_w;
    int sx = patch_w / 2, sy = patch_h / 2;
    std::vector<std::pair<Window, Window>> pairs;
    // horizontal: along grid rows, windows at successive half-strides
    for (int r = 0; r < rows; ++r)
        for (int k = 0; k + 1 < 2 * cols - 1; ++k)
            pairs.push_back({Window{k * sx, r * patch_h, patch_w, patch_h},
                             Window{(k + 1) * sx, r * patch_h, patch_w, patch_h}});
    // vertical: along grid columns
    for (int c = 0; c < cols; ++c)
        for (int k = 0; k + 1 < 2 * rows - 1; ++k)
            pairs.push_back({Window{c * patch_w, k * sy, patch_w, patch_h},
                             Window{c * patch_w, (k + 1) * sy, patch_w, patch_h}});
    check(!pairs.empty(), "ce: fewer than one window pair");

    // cache per-window predictions (windows repeat across pairs)
    std::map<std::pair<int, int>, Tensor<T>> cache;
    auto get = [&](const Window& w) -> const Tensor<T>& {
        auto key = std::make_pair(w.x0, w.y0);
        auto it = cache.find(key);
        if (it == cache.end()) it = cache.emplace(key, predict_fn(w)).first;
        return it->second;
    };

    double acc = 0;
    for (const auto& [a, b] : pairs) {
        auto ov = intersect(a, b);
        const Window& r = ov->region;
        const Tensor<T>& pa = get(a);
        const Tensor<T>& pb = get(b);
        double mae = 0;
        for (int y = 0; y < r.h; ++y)
            for (int x = 0; x < r.w; ++x)
                mae += std::abs(
                    static_cast<double>(pa.at(r.y0 - a.y0 + y, r.x0 - a.x0 + x)) -
                    static_cast<double>(pb.at(r.y0 - b.y0 + y, r.x0 - b.x0 + x)));
        acc += mae / (static_cast<double>(r.h) * r.w);
    }
    return acc / static_cast<double>(pairs.size());
}

}  // namespace tiledepth

#endif
