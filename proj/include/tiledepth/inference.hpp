#ifndef TILEDEPTH_INFERENCE_HPP
#define TILEDEPTH_INFERENCE_HPP

#include <functional>
#include <optional>
#include <vector>

#include "tiledepth/geometry.hpp"
#include "tiledepth/imageproc.hpp"
#include "tiledepth/models.hpp"
#include "tiledepth/tensor.hpp"

namespace tiledepth {

// Running-mean depth canvas built up during consistency-aware inference.
template <class T>
struct FusionState {
    Tensor<T> canvas;     // [H,W] meters; valid where counts > 0
    Tensor<int> counts;   // [H,W] visit counts
    size_t cursor = 0;    // windows processed so far

    FusionState() = default;
    FusionState(int h, int w) : canvas({h, w}), counts({h, w}) {}

    void fold(const Window& win, const Tensor<T>& patch) {
        for (int y = 0; y < win.h; ++y)
            for (int x = 0; x < win.w; ++x) {
                int iy = win.y0 + y, ix = win.x0 + x;
                int c = counts.at(iy, ix);
                canvas.at(iy, ix) =
                    (canvas.at(iy, ix) * static_cast<T>(c) + patch.at(y, x)) /
                    static_cast<T>(c + 1);
                counts.at(iy, ix) = c + 1;
            }
        ++cursor;
    }
};

struct BlendFit {
    double s = 1.0;  // scale
    double t = 0.0;  // shift, meters
};

// Patch predictor: window + optional guidance depth -> patch depth map.
// Stubs plug in here for the running-mean contract tests.
template <class T>
using PatchPredictor =
    std::function<Tensor<T>(const Window&, const Tensor<T>* d_guided)>;

// ---------------------------------------------------------------------------
// Core tiling algorithms (network-agnostic)
// ---------------------------------------------------------------------------

template <class T>
FusionState<T> infer_stitched_with(const PatchPredictor<T>& predict, int img_h, int img_w,
                                   int patch_h, int patch_w) {
    FusionState<T> st(img_h, img_w);
    for (const Window& w : grid_windows(img_h, img_w, patch_h, patch_w)) {
        Tensor<T> d = predict(w, nullptr);
        for (int y = 0; y < w.h; ++y)
            for (int x = 0; x < w.w; ++x) {
                st.canvas.at(w.y0 + y, w.x0 + x) = d.at(y, x);
                st.counts.at(w.y0 + y, w.x0 + x) = 1;
            }
        ++st.cursor;
    }
    return st;
}

// Phase 1 stitches the grid part of the plan; phase 2 walks the remaining
// windows in plan order, feeding each one the current canvas as guidance
// and folding its prediction back by running mean. Sequential by contract.
template <class T>
FusionState<T> infer_cai_with(const PatchPredictor<T>& predict, const PatchPlan& plan) {
    // the grid prefix must tile the image
    {
        auto grid = grid_windows(plan.img_h, plan.img_w, plan.patch_h, plan.patch_w);
        check(plan.windows.size() >= grid.size(), "infer_cai: plan lacks the grid part");
        for (size_t i = 0; i < grid.size(); ++i)
            check(plan.kinds[i] == WindowKind::grid && plan.windows[i] == grid[i],
                  "infer_cai: plan grid part does not tile the image");
    }
    FusionState<T> st(plan.img_h, plan.img_w);
    size_t n_grid = grid_windows(plan.img_h, plan.img_w, plan.patch_h, plan.patch_w).size();
    for (size_t i = 0; i < plan.windows.size(); ++i) {
        const Window& w = plan.windows[i];
        if (i < n_grid) {
            Tensor<T> d = predict(w, nullptr);
            for (int y = 0; y < w.h; ++y)
                for (int x = 0; x < w.w; ++x) {
                    st.canvas.at(w.y0 + y, w.x0 + x) = d.at(y, x);
                    st.counts.at(w.y0 + y, w.x0 + x) = 1;
                }
            ++st.cursor;
        } else {
            Tensor<T> guided = crop(st.canvas, w.y0, w.x0, w.h, w.w);
            Tensor<T> d = predict(w, &guided);
            st.fold(w, d);
        }
    }
    return st;
}

// Least squares: minimize sum over mask of (s*d_f + t - d_c)^2.
template <class T>
BlendFit fit_scale_shift(const Tensor<T>& d_f, const Tensor<T>& d_c,
                         const Tensor<uint8_t>& mask) {
    check(d_f.numel() == d_c.numel() && d_c.numel() == mask.numel(),
          "fit_scale_shift: shape mismatch");
    double sf = 0, sff = 0, sc = 0, sfc = 0;
    int64_t n = 0;
    for (int64_t i = 0; i < d_f.numel(); ++i) {
        if (!mask[i]) continue;
        double f = d_f[i], c = d_c[i];
        sf += f;
        sff += f * f;
        sc += c;
        sfc += f * c;
        ++n;
    }
    check(n >= 2, "fit_scale_shift: fewer than 2 masked pixels");
    double det = n * sff - sf * sf;
    check(std::abs(det) > 1e-12 * n * std::max(1.0, sff),
          "fit_scale_shift: degenerate (constant) fine depth");
    BlendFit fit;
    fit.s = (n * sfc - sf * sc) / det;
    fit.t = (sc - fit.s * sf) / n;
    return fit;
}

// Per-pixel Gaussian-weighted average of overlapping patches; weight of a
// patch peaks at its center with std sigma*min(patch dims).
template <class T>
Tensor<T> blend_feathered(const std::vector<std::pair<Window, Tensor<T>>>& patches,
                          int img_h, int img_w, double sigma = 0.5) {
    Tensor<double> acc({img_h, img_w});
    Tensor<double> wsum({img_h, img_w});
    for (const auto& [w, d] : patches) {
        double std_px = sigma * std::min(w.w, w.h);
        double cx = w.x0 + (w.w - 1) / 2.0, cy = w.y0 + (w.h - 1) / 2.0;
        double inv2s2 = 1.0 / (2.0 * std_px * std_px);
        for (int y = 0; y < w.h; ++y)
            for (int x = 0; x < w.w; ++x) {
                int iy = w.y0 + y, ix = w.x0 + x;
                double dx = ix - cx, dy = iy - cy;
                double wt = std::exp(-(dx * dx + dy * dy) * inv2s2);
                acc.at(iy, ix) += wt * d.at(y, x);
                wsum.at(iy, ix) += wt;
            }
    }
    Tensor<T> out({img_h, img_w});
    for (int y = 0; y < img_h; ++y)
        for (int x = 0; x < img_w; ++x) {
            check(wsum.at(y, x) > 0, "blend_feathered: uncovered pixel (" +
                                         std::to_string(y) + "," + std::to_string(x) +
                                         ")");
            out.at(y, x) = static_cast<T>(acc.at(y, x) / wsum.at(y, x));
        }
    return out;
}

// ---------------------------------------------------------------------------
// Full three-network pipeline
// ---------------------------------------------------------------------------

template <class T>
class InferenceEngine {
public:
    InferenceEngine(const ParamStore<T>* nc, const ParamStore<T>* nf,
                    const ParamStore<T>* ng, ModelConfig cfg)
        : nc_(nc), nf_(nf), ng_(ng), cfg_(std::move(cfg)) {}

    struct ImageState {
        Tensor<T> image;                  // [3,H,W]
        Tensor<T> d_c_full;               // coarse depth upsampled to H x W
        Tensor<T> d_c_native;             // coarse depth at patch dims
        std::vector<Tensor<T>> f_c;       // coarse pyramid
        std::vector<Tensor<T>> f_g2l;     // g2l(f_c), precomputed once
        int img_h = 0, img_w = 0;
    };

    ImageState prepare(const Tensor<T>& image) const {
        ImageState st;
        st.image = image;
        st.img_h = image.dim(1);
        st.img_w = image.dim(2);
        Tensor<T> down = resize(image, cfg_.patch_h, cfg_.patch_w, ResizeMode::bilinear);
        EvalOut<T> coarse = base_eval(*nc_, down, cfg_);
        st.d_c_native = coarse.depth;
        st.d_c_full =
            resize(coarse.depth, st.img_h, st.img_w, ResizeMode::bilinear);
        st.f_c = std::move(coarse.pyramid);
        // params are frozen at inference: evaluate G2L once per image
        Graph<T> g;
        BoundParams<T> p{&g, ng_, false};
        for (int i = 1; i <= cfg_.levels; ++i) {
            Var fc = g.input(st.f_c[static_cast<size_t>(i - 1)], false);
            Var fg = g2l_forward(g, p, "g2l.l" + std::to_string(i), fc, cfg_);
            st.f_g2l.push_back(g.val(fg));
        }
        return st;
    }

    // One fusion pass over a window. d_guided==nullptr means "use the fine
    // prediction as guidance" (training-style first pass).
    Tensor<T> predict_patch(const ImageState& st, const Window& win,
                            const Tensor<T>* d_guided) const {
        Tensor<T> crop_img = crop(st.image, win.y0, win.x0, win.h, win.w);
        Tensor<T> d_c_crop = crop(st.d_c_full, win.y0, win.x0, win.h, win.w);
        EvalOut<T> fine = base_eval(*nf_, crop_img, cfg_);
        const Tensor<T>& guide = d_guided ? *d_guided : fine.depth;
        Graph<T> g;
        BoundParams<T> p{&g, ng_, false};
        FusionContext<T> ctx;
        ctx.img_h = st.img_h;
        ctx.img_w = st.img_w;
        for (int i = 0; i < cfg_.levels; ++i) {
            ctx.f_c.push_back(g.input(st.f_c[static_cast<size_t>(i)], false));
            ctx.f_g2l.push_back(g.input(st.f_g2l[static_cast<size_t>(i)], false));
        }
        NetOut<T> out = fusion_forward(g, p, ctx, crop_img, d_c_crop, guide, fine.pyramid,
                                       win, cfg_);
        return g.val(out.depth);
    }

    Tensor<T> predict_fine_patch(const ImageState& st, const Window& win) const {
        Tensor<T> crop_img = crop(st.image, win.y0, win.x0, win.h, win.w);
        return base_eval(*nf_, crop_img, cfg_).depth;
    }

    PatchPredictor<T> predictor(const ImageState& st) const {
        return [this, &st](const Window& w, const Tensor<T>* guided) {
            return predict_patch(st, w, guided);
        };
    }

    const ModelConfig& config() const { return cfg_; }

private:
    const ParamStore<T>* nc_;
    const ParamStore<T>* nf_;
    const ParamStore<T>* ng_;
    ModelConfig cfg_;
};

// Standard P=16 pipeline: non-overlapping grid, every pixel written once.
template <class T>
Tensor<T> infer_stitched(const InferenceEngine<T>& eng,
                         const typename InferenceEngine<T>::ImageState& st) {
    const ModelConfig& c = eng.config();
    return infer_stitched_with<T>(eng.predictor(st), st.img_h, st.img_w, c.patch_h,
                                  c.patch_w)
        .canvas;
}

template <class T>
std::pair<Tensor<T>, FusionState<T>> infer_cai(
    const InferenceEngine<T>& eng, const typename InferenceEngine<T>::ImageState& st,
    const PatchPlan& plan) {
    FusionState<T> fs = infer_cai_with<T>(eng.predictor(st), plan);
    return {fs.canvas, std::move(fs)};
}

// Baseline for the ablation harness: per-patch scale/shift alignment of the
// raw fine predictions against the coarse map, then feathered blending.
template <class T>
Tensor<T> infer_baseline_blend(const InferenceEngine<T>& eng,
                               const typename InferenceEngine<T>::ImageState& st,
                               double sigma = 0.5) {
    const ModelConfig& c = eng.config();
    auto grid = grid_windows(st.img_h, st.img_w, c.patch_h, c.patch_w);
    auto shifted = shifted_windows(st.img_h, st.img_w, c.patch_h, c.patch_w);
    std::vector<Window> all = grid;
    all.insert(all.end(), shifted.begin(), shifted.end());
    std::vector<std::pair<Window, Tensor<T>>> patches;
    Tensor<uint8_t> ones({c.patch_h, c.patch_w});
    ones.fill(1);
    for (const Window& w : all) {
        Tensor<T> df = eng.predict_fine_patch(st, w);
        Tensor<T> dc = crop(st.d_c_full, w.y0, w.x0, w.h, w.w);
        BlendFit fit;
        try {
            fit = fit_scale_shift(df, dc, ones);
        } catch (const std::exception&) {
            // constant fine patch: fall back to a pure shift
            double mf = 0, mc = 0;
            for (int64_t i = 0; i < df.numel(); ++i) {
                mf += df[i];
                mc += dc[i];
            }
            fit.s = 1.0;
            fit.t = (mc - mf) / static_cast<double>(df.numel());
        }
        for (T& v : df.v)
            v = static_cast<T>(std::clamp(fit.s * v + fit.t, 1e-3, 1e6));
        patches.emplace_back(w, std::move(df));
    }
    return blend_feathered(patches, st.img_h, st.img_w, sigma);
}

}  // namespace tiledepth

#endif
