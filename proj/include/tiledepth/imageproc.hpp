#ifndef TILEDEPTH_IMAGEPROC_HPP
#define TILEDEPTH_IMAGEPROC_HPP

#include <cmath>
#include <vector>

#include "tiledepth/tensor.hpp"

namespace tiledepth {

enum class ResizeMode { bilinear, area };

namespace detail {

// bilinear sample of one plane at output-pixel centers
template <class T>
void resize_bilinear_plane(const T* src, int ih, int iw, T* dst, int oh, int ow) {
    double sy = static_cast<double>(ih) / oh;
    double sx = static_cast<double>(iw) / ow;
    for (int oy = 0; oy < oh; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int y1 = std::min(y0 + 1, ih - 1);
        y0 = std::max(0, std::min(y0, ih - 1));
        for (int ox = 0; ox < ow; ++ox) {
            double fx = (ox + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int x1 = std::min(x0 + 1, iw - 1);
            x0 = std::max(0, std::min(x0, iw - 1));
            double a = src[y0 * iw + x0] * (1 - wx) + src[y0 * iw + x1] * wx;
            double b = src[y1 * iw + x0] * (1 - wx) + src[y1 * iw + x1] * wx;
            dst[oy * ow + ox] = static_cast<T>(a * (1 - wy) + b * wy);
        }
    }
}

// average over the exact source footprint of each output pixel
template <class T>
void resize_area_plane(const T* src, int ih, int iw, T* dst, int oh, int ow) {
    double sy = static_cast<double>(ih) / oh;
    double sx = static_cast<double>(iw) / ow;
    for (int oy = 0; oy < oh; ++oy) {
        double ry0 = oy * sy, ry1 = (oy + 1) * sy;
        int iy0 = static_cast<int>(std::floor(ry0));
        int iy1 = std::min(static_cast<int>(std::ceil(ry1)), ih);
        for (int ox = 0; ox < ow; ++ox) {
            double rx0 = ox * sx, rx1 = (ox + 1) * sx;
            int ix0 = static_cast<int>(std::floor(rx0));
            int ix1 = std::min(static_cast<int>(std::ceil(rx1)), iw);
            double acc = 0, wsum = 0;
            for (int y = iy0; y < iy1; ++y) {
                double wy = std::min<double>(y + 1, ry1) - std::max<double>(y, ry0);
                for (int x = ix0; x < ix1; ++x) {
                    double wx = std::min<double>(x + 1, rx1) - std::max<double>(x, rx0);
                    acc += wy * wx * src[y * iw + x];
                    wsum += wy * wx;
                }
            }
            dst[oy * ow + ox] = static_cast<T>(acc / wsum);
        }
    }
}

}  // namespace detail

// Resize [H,W] or [C,H,W]. Depth maps should use area mode when
// downsampling so patch statistics stay unbiased.
template <class T>
Tensor<T> resize(const Tensor<T>& x, int out_h, int out_w, ResizeMode mode) {
    check(out_h > 0 && out_w > 0, "resize: non-positive target dims");
    bool is3 = x.ndim() == 3;
    int C = is3 ? x.dim(0) : 1;
    int H = is3 ? x.dim(1) : x.dim(0);
    int W = is3 ? x.dim(2) : x.dim(1);
    if (H == out_h && W == out_w) return x;
    Tensor<T> out(is3 ? std::vector<int>{C, out_h, out_w}
                      : std::vector<int>{out_h, out_w});
    for (int c = 0; c < C; ++c) {
        const T* src = x.data() + static_cast<size_t>(c) * H * W;
        T* dst = out.data() + static_cast<size_t>(c) * out_h * out_w;
        if (mode == ResizeMode::bilinear)
            detail::resize_bilinear_plane(src, H, W, dst, out_h, out_w);
        else
            detail::resize_area_plane(src, H, W, dst, out_h, out_w);
    }
    return out;
}

template <class T>
Tensor<T> crop(const Tensor<T>& x, int y0, int x0, int h, int w) {
    bool is3 = x.ndim() == 3;
    int C = is3 ? x.dim(0) : 1;
    int H = is3 ? x.dim(1) : x.dim(0);
    int W = is3 ? x.dim(2) : x.dim(1);
    check(y0 >= 0 && x0 >= 0 && y0 + h <= H && x0 + w <= W, "crop: out of bounds");
    Tensor<T> out(is3 ? std::vector<int>{C, h, w} : std::vector<int>{h, w});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < h; ++y) {
            const T* src = x.data() + (static_cast<size_t>(c) * H + y0 + y) * W + x0;
            std::copy(src, src + w, out.data() + (static_cast<size_t>(c) * h + y) * w);
        }
    return out;
}

template <class T>
Tensor<T> hflip(const Tensor<T>& x) {
    bool is3 = x.ndim() == 3;
    int C = is3 ? x.dim(0) : 1;
    int H = is3 ? x.dim(1) : x.dim(0);
    int W = is3 ? x.dim(2) : x.dim(1);
    Tensor<T> out(x.shape);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx)
                out.v[(static_cast<size_t>(c) * H + y) * W + xx] =
                    x.v[(static_cast<size_t>(c) * H + y) * W + (W - 1 - xx)];
    return out;
}

template <class T>
Tensor<T> rgb_to_gray(const Tensor<T>& img) {
    check(img.ndim() == 3 && img.dim(0) == 3, "rgb_to_gray: expected [3,H,W]");
    int H = img.dim(1), W = img.dim(2);
    Tensor<T> g({H, W});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            g.at(y, x) = static_cast<T>(0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) +
                                        0.114 * img.at(2, y, x));
    return g;
}

// SSIM over sliding 8x8 uniform windows, unit dynamic range,
// C1=(0.01)^2, C2=(0.03)^2; mean over all window positions.
template <class T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
    check(a.shape == b.shape && a.ndim() == 2, "ssim: dim mismatch");
    const int H = a.dim(0), W = a.dim(1), K = 8;
    check(H >= K && W >= K, "ssim: image smaller than 8x8 window");
    const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    // integral images of a, b, a^2, b^2, ab
    const int IW = W + 1;
    std::vector<double> Sa((H + 1) * IW, 0), Sb((H + 1) * IW, 0), Saa((H + 1) * IW, 0),
        Sbb((H + 1) * IW, 0), Sab((H + 1) * IW, 0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double av = a.at(y, x), bv = b.at(y, x);
            size_t i = static_cast<size_t>(y + 1) * IW + x + 1;
            size_t up = i - IW, left = i - 1, diag = up - 1;
            Sa[i] = av + Sa[up] + Sa[left] - Sa[diag];
            Sb[i] = bv + Sb[up] + Sb[left] - Sb[diag];
            Saa[i] = av * av + Saa[up] + Saa[left] - Saa[diag];
            Sbb[i] = bv * bv + Sbb[up] + Sbb[left] - Sbb[diag];
            Sab[i] = av * bv + Sab[up] + Sab[left] - Sab[diag];
        }
    auto box = [&](const std::vector<double>& S, int y, int x) {
        return S[static_cast<size_t>(y + K) * IW + x + K] -
               S[static_cast<size_t>(y) * IW + x + K] -
               S[static_cast<size_t>(y + K) * IW + x] + S[static_cast<size_t>(y) * IW + x];
    };
    const double N = K * K;
    double acc = 0;
    int cnt = 0;
    for (int y = 0; y + K <= H; ++y)
        for (int x = 0; x + K <= W; ++x) {
            double ma = box(Sa, y, x) / N, mb = box(Sb, y, x) / N;
            double va = box(Saa, y, x) / N - ma * ma;
            double vb = box(Sbb, y, x) / N - mb * mb;
            double cab = box(Sab, y, x) / N - ma * mb;
            double s = ((2 * ma * mb + C1) * (2 * cab + C2)) /
                       ((ma * ma + mb * mb + C1) * (va + vb + C2));
            acc += s;
            ++cnt;
        }
    return acc / cnt;
}

}  // namespace tiledepth

#endif
