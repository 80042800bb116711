#ifndef TILEDEPTH_LOSSES_HPP
#define TILEDEPTH_LOSSES_HPP

#include <cmath>
#include <string>

#include "tiledepth/autograd.hpp"
#include "tiledepth/geometry.hpp"
#include "tiledepth/models.hpp"
#include "tiledepth/tensor.hpp"

namespace tiledepth {

struct LossConfig {
    double silog_alpha = 10.0;
    double silog_lambda = 0.85;
    double mu1 = 0.1;  // depth term weight inside the consistency loss
    double mu2 = 0.1;  // consistency weight in the combined objective
};

struct LossReport {
    double total = 0;
    double si = 0;
    double consistency_feat = 0;
    double consistency_depth = 0;
    double mu1 = 0.1, mu2 = 0.1;

    static const char* csv_header() { return "step,total,si,feat,depth"; }
    std::string csv_row(int64_t step) const {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g",
                      static_cast<long long>(step), total, si, consistency_feat,
                      consistency_depth);
        return buf;
    }
};

// Scale-invariant log loss on plain tensors:
// alpha * sqrt(mean(e^2) - lambda*mean(e)^2), e = log(pred)-log(gt).
template <class T>
double silog_loss(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<uint8_t>& mask,
                  double alpha = 10.0, double lambda = 0.85) {
    check(pred.numel() == gt.numel() && gt.numel() == mask.numel(),
          "silog_loss: shape mismatch");
    double s1 = 0, s2 = 0;
    int64_t m = 0;
    for (int64_t i = 0; i < pred.numel(); ++i) {
        if (!mask[i]) continue;
        check(pred[i] > T(0) && gt[i] > T(0), "silog_loss: non-positive depth");
        double e = std::log(static_cast<double>(pred[i])) -
                   std::log(static_cast<double>(gt[i]));
        s1 += e;
        s2 += e * e;
        ++m;
    }
    check(m > 0, "silog_loss: empty mask");
    double m1 = s1 / m, m2 = s2 / m;
    double arg = m2 - lambda * m1 * m1;
    return alpha * std::sqrt(arg < 0 ? 0 : arg);
}

// Graph version used during training (see Graph::silog for the backward).
template <class T>
Var silog_loss_node(Graph<T>& g, Var pred, const Tensor<T>& gt,
                    const Tensor<uint8_t>& mask, const LossConfig& lc) {
    return g.silog(pred, gt, mask, static_cast<T>(lc.silog_alpha),
                   static_cast<T>(lc.silog_lambda));
}

// Consistency terms over the overlap of two patch predictions:
//   depth term = mean over the overlap of (D1-D2)^2
//   feat term  = sum over levels of the mean squared feature gap on the
//                overlap mapped to that level's stride
// The caller combines them as feat + mu1*depth.
template <class T>
std::pair<Var, Var> consistency_loss(Graph<T>& g, const NetOut<T>& out1,
                                     const NetOut<T>& out2, const Window& w1,
                                     const Window& w2, const ModelConfig& cfg) {
    auto ov = intersect(w1, w2);
    check(ov.has_value(), "consistency_loss: empty overlap");
    const Window& r = ov->region;
    auto local = [](const Window& reg, const Window& w) {
        return Window{reg.x0 - w.x0, reg.y0 - w.y0, reg.w, reg.h};
    };
    Window l1 = local(r, w1), l2 = local(r, w2);

    Var d1 = g.crop(out1.depth, l1.y0, l1.x0, l1.h, l1.w);
    Var d2 = g.crop(out2.depth, l2.y0, l2.x0, l2.h, l2.w);
    Var depth_term = g.mse(d1, d2);

    std::vector<Var> level_terms;
    for (int i = 1; i <= cfg.levels; ++i) {
        int s = 1 << i;
        Window f1 = scale_window(l1, s);
        Window f2 = scale_window(l2, s);
        Var c1 = g.crop(out1.pyramid[static_cast<size_t>(i - 1)], f1.y0, f1.x0, f1.h,
                        f1.w);
        Var c2 = g.crop(out2.pyramid[static_cast<size_t>(i - 1)], f2.y0, f2.x0, f2.h,
                        f2.w);
        level_terms.push_back(g.mse(c1, c2));
    }
    Var feat_term = g.weighted_sum(level_terms,
                                   std::vector<T>(level_terms.size(), T(1)));
    return {feat_term, depth_term};
}

inline double total_loss(double si, double consistency, double mu2) {
    check(std::isfinite(si) && std::isfinite(consistency), "total_loss: non-finite input");
    return si + mu2 * consistency;
}

inline LossReport make_report(double si, double feat, double depth, const LossConfig& lc) {
    LossReport r;
    r.si = si;
    r.consistency_feat = feat;
    r.consistency_depth = depth;
    r.mu1 = lc.mu1;
    r.mu2 = lc.mu2;
    r.total = si + lc.mu2 * (feat + lc.mu1 * depth);
    return r;
}

}  // namespace tiledepth

#endif
