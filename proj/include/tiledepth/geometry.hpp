#ifndef TILEDEPTH_GEOMETRY_HPP
#define TILEDEPTH_GEOMETRY_HPP

#include <algorithm>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tiledepth/tensor.hpp"

namespace tiledepth {

// Axis-aligned pixel rectangle in image space.
struct Window {
    int x0 = 0, y0 = 0, w = 0, h = 0;

    bool operator==(const Window&) const = default;
    long long area() const { return static_cast<long long>(w) * h; }
    bool valid_in(int img_h, int img_w) const {
        return w > 0 && h > 0 && x0 >= 0 && y0 >= 0 && x0 + w <= img_w && y0 + h <= img_h;
    }
};

struct Overlap {
    Window region;
    double frac = 0;  // area(region)/area(one patch), in (0,1]
};

enum class WindowKind { grid, shifted, random };

inline const char* kind_name(WindowKind k) {
    switch (k) {
        case WindowKind::grid: return "grid";
        case WindowKind::shifted: return "shifted";
        default: return "random";
    }
}

struct PatchPlan {
    int img_h = 0, img_w = 0;
    int patch_h = 0, patch_w = 0;
    std::vector<Window> windows;
    std::vector<WindowKind> kinds;
    uint64_t seed = 0;

    size_t grid_count() const {
        size_t n = 0;
        for (auto k : kinds)
            if (k == WindowKind::grid) ++n;
        return n;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["image"] = {img_h, img_w};
        j["patch"] = {patch_h, patch_w};
        j["seed"] = seed;
        j["windows"] = nlohmann::json::array();
        for (size_t i = 0; i < windows.size(); ++i) {
            const Window& w = windows[i];
            j["windows"].push_back({{"x0", w.x0},
                                    {"y0", w.y0},
                                    {"w", w.w},
                                    {"h", w.h},
                                    {"kind", kind_name(kinds[i])}});
        }
        return j;
    }

    static PatchPlan from_json(const nlohmann::json& j) {
        PatchPlan p;
        p.img_h = j.at("image")[0];
        p.img_w = j.at("image")[1];
        p.patch_h = j.at("patch")[0];
        p.patch_w = j.at("patch")[1];
        p.seed = j.value("seed", uint64_t(0));
        for (const auto& jw : j.at("windows")) {
            p.windows.push_back(
                {jw.at("x0"), jw.at("y0"), jw.at("w"), jw.at("h")});
            std::string k = jw.at("kind");
            p.kinds.push_back(k == "grid"     ? WindowKind::grid
                              : k == "shifted" ? WindowKind::shifted
                                               : WindowKind::random);
        }
        return p;
    }
};

inline void check_divisible(int img, int patch, const char* axis) {
    if (patch <= 0 || img % patch != 0)
        throw std::invalid_argument(std::string("image ") + axis + " " +
                                    std::to_string(img) + " not divisible by patch " +
                                    axis + " " + std::to_string(patch));
}

// Non-overlapping row-major tiling of the image.
inline std::vector<Window> grid_windows(int img_h, int img_w, int patch_h, int patch_w) {
    check_divisible(img_h, patch_h, "height");
    check_divisible(img_w, patch_w, "width");
    std::vector<Window> out;
    for (int y = 0; y < img_h; y += patch_h)
        for (int x = 0; x < img_w; x += patch_w) out.push_back({x, y, patch_w, patch_h});
    return out;
}

// Three half-stride interior grids: right-shift, down-shift, both-shift.
// A 4x4 base grid yields 12+12+9 = 33 windows.
inline std::vector<Window> shifted_windows(int img_h, int img_w, int patch_h,
                                           int patch_w) {
    check_divisible(img_h, patch_h, "height");
    check_divisible(img_w, patch_w, "width");
    int rows = img_h / patch_h, cols = img_w / patch_w;
    int sx = patch_w / 2, sy = patch_h / 2;
    std::vector<Window> out;
    // right-shift: rows x (cols-1)
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c + 1 < cols; ++c)
            out.push_back({c * patch_w + sx, r * patch_h, patch_w, patch_h});
    // down-shift: (rows-1) x cols
    for (int r = 0; r + 1 < rows; ++r)
        for (int c = 0; c < cols; ++c)
            out.push_back({c * patch_w, r * patch_h + sy, patch_w, patch_h});
    // both-shift: (rows-1) x (cols-1)
    for (int r = 0; r + 1 < rows; ++r)
        for (int c = 0; c + 1 < cols; ++c)
            out.push_back({c * patch_w + sx, r * patch_h + sy, patch_w, patch_h});
    return out;
}

// n aligned random windows; pure function of the seed.
inline std::vector<Window> random_windows(int n, int img_h, int img_w, int patch_h,
                                          int patch_w, int align, uint64_t seed) {
    if (n < 0) throw std::invalid_argument("random_windows: n < 0");
    if (patch_h > img_h || patch_w > img_w)
        throw std::invalid_argument("random_windows: patch larger than image");
    check(align > 0 && patch_h % align == 0 && patch_w % align == 0,
          "random_windows: align must divide patch dims");
    int nx = (img_w - patch_w) / align + 1;
    int ny = (img_h - patch_h) / align + 1;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> dx(0, nx - 1), dy(0, ny - 1);
    std::vector<Window> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        out.push_back({dx(rng) * align, dy(rng) * align, patch_w, patch_h});
    return out;
}

inline std::optional<Overlap> intersect(const Window& a, const Window& b) {
    int x0 = std::max(a.x0, b.x0), y0 = std::max(a.y0, b.y0);
    int x1 = std::min(a.x0 + a.w, b.x0 + b.w), y1 = std::min(a.y0 + a.h, b.y0 + b.h);
    if (x1 <= x0 || y1 <= y0) return std::nullopt;
    Overlap ov;
    ov.region = {x0, y0, x1 - x0, y1 - y0};
    ov.frac = static_cast<double>(ov.region.area()) / static_cast<double>(a.area());
    return ov;
}

// Map a window into feature-map coordinates at the given stride.
inline Window scale_window(const Window& w, int stride) {
    if (w.x0 % stride || w.y0 % stride || w.w % stride || w.h % stride)
        throw std::invalid_argument("scale_window: window " + std::to_string(w.x0) + "," +
                                    std::to_string(w.y0) + "," + std::to_string(w.w) +
                                    "," + std::to_string(w.h) +
                                    " not aligned to stride " + std::to_string(stride));
    return {w.x0 / stride, w.y0 / stride, w.w / stride, w.h / stride};
}

// Deterministic pair of aligned windows with overlap fraction >= min_frac.
inline std::tuple<Window, Window, Overlap> sample_overlapping_pair(
    int img_h, int img_w, int patch_h, int patch_w, double min_frac, int align,
    uint64_t seed) {
    check(min_frac > 0 && min_frac < 1, "sample_overlapping_pair: min_frac out of range");
    std::mt19937_64 rng(seed);
    Window a = random_windows(1, img_h, img_w, patch_h, patch_w, align, rng())[0];
    // enumerate aligned positions whose overlap with a meets the threshold
    int nx = (img_w - patch_w) / align + 1;
    int ny = (img_h - patch_h) / align + 1;
    std::vector<Window> feasible;
    for (int iy = 0; iy < ny; ++iy)
        for (int ix = 0; ix < nx; ++ix) {
            Window b{ix * align, iy * align, patch_w, patch_h};
            if (b == a) continue;
            auto ov = intersect(a, b);
            if (ov && ov->frac >= min_frac) feasible.push_back(b);
        }
    if (feasible.empty())
        throw std::runtime_error(
            "sample_overlapping_pair: no feasible partner window (min_frac=" +
            std::to_string(min_frac) + ", align=" + std::to_string(align) + ")");
    Window b = feasible[std::uniform_int_distribution<size_t>(0, feasible.size() - 1)(rng)];
    return {a, b, *intersect(a, b)};
}

// Full inference plan: grid, then shifted, then seeded random windows.
inline PatchPlan make_plan(int img_h, int img_w, int patch_h, int patch_w,
                           bool with_shifted, int n_random, int align, uint64_t seed) {
    PatchPlan p;
    p.img_h = img_h;
    p.img_w = img_w;
    p.patch_h = patch_h;
    p.patch_w = patch_w;
    p.seed = seed;
    for (const Window& w : grid_windows(img_h, img_w, patch_h, patch_w)) {
        p.windows.push_back(w);
        p.kinds.push_back(WindowKind::grid);
    }
    if (with_shifted)
        for (const Window& w : shifted_windows(img_h, img_w, patch_h, patch_w)) {
            p.windows.push_back(w);
            p.kinds.push_back(WindowKind::shifted);
        }
    if (n_random > 0)
        for (const Window& w :
             random_windows(n_random, img_h, img_w, patch_h, patch_w, align, seed)) {
            p.windows.push_back(w);
            p.kinds.push_back(WindowKind::random);
        }
    return p;
}

}  // namespace tiledepth

#endif
