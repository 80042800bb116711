#ifndef TILEDEPTH_DATAIO_HPP
#define TILEDEPTH_DATAIO_HPP

#include <map>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "tiledepth/imageproc.hpp"
#include "tiledepth/tensor.hpp"

namespace tiledepth {

namespace fs = std::filesystem;

// RGB image + metric ground-truth depth + validity mask.
struct Sample {
    Tensor<float> image;   // [3,H,W] in [0,1]
    Tensor<float> depth;   // [H,W] meters
    Tensor<uint8_t> mask;  // [H,W]
    std::string id;
};

// ---------------------------------------------------------------------------
// Procedural scene generation
// ---------------------------------------------------------------------------

struct SceneConfig {
    double d_min = 1.0;
    double d_max = 80.0;
    int k_min = 6;          // primitive count range
    int k_max = 14;
    double min_step = 2.0;  // silhouette depth discontinuity, meters
    int patch_h = 128;
    int patch_w = 192;
};

struct SceneAux {
    double gain = 1.0;
    int n_primitives = 0;
};

namespace detail {

struct Primitive {
    int type;                 // 0 rect, 1 ellipse, 2 convex polygon
    double cx, cy, rx, ry, rot;
    std::vector<double> poly;  // x,y pairs for type 2
    double depth;
    double tint[3];
    double freq1, freq2, phase1, phase2, ang1, ang2;

    bool contains(double x, double y) const {
        double dx = x - cx, dy = y - cy;
        double c = std::cos(-rot), s = std::sin(-rot);
        double lx = dx * c - dy * s, ly = dx * s + dy * c;
        if (type == 0) return std::abs(lx) <= rx && std::abs(ly) <= ry;
        if (type == 1) return (lx * lx) / (rx * rx) + (ly * ly) / (ry * ry) <= 1.0;
        // convex polygon, vertices counter-clockwise
        size_t n = poly.size() / 2;
        for (size_t i = 0; i < n; ++i) {
            double x1 = poly[2 * i], y1 = poly[2 * i + 1];
            double x2 = poly[2 * ((i + 1) % n)], y2 = poly[2 * ((i + 1) % n) + 1];
            if ((x2 - x1) * (y - y1) - (y2 - y1) * (x - x1) < 0) return false;
        }
        return true;
    }

    double texture(double x, double y) const {
        double t1 = std::sin(freq1 * (x * std::cos(ang1) + y * std::sin(ang1)) + phase1);
        double t2 = std::sin(freq2 * (x * std::cos(ang2) + y * std::sin(ang2)) + phase2);
        return 0.5 * (t1 + t2) * 0.5 + 0.5;  // in [0,1]
    }
};

inline double log_norm(double d, double d_min, double d_max) {
    return (std::log(d) - std::log(d_min)) / (std::log(d_max) - std::log(d_min));
}

}  // namespace detail

// Depth-dependent shading used by the renderer (and by the SSIM filter
// as its reconstruction reference): near surfaces render bright.
inline double depth_shade(double d, double gain, const SceneConfig& cfg) {
    return gain * (1.0 - 0.85 * detail::log_norm(d, cfg.d_min, cfg.d_max));
}

// Deterministic synthetic RGB-D scene: a smooth background depth ramp with
// layered textured primitives at distinct depths. Consecutive depth layers
// are separated by at least cfg.min_step meters, so every primitive
// silhouette carries a depth discontinuity of at least that magnitude.
inline Sample generate_scene(uint64_t seed, int h, int w, const SceneConfig& cfg,
                             SceneAux* aux = nullptr) {
    check(h > 0 && w > 0 && h % cfg.patch_h == 0 && w % cfg.patch_w == 0,
          "generate_scene: dims must be positive multiples of patch dims");
    check(cfg.d_min > 0, "generate_scene: d_min must be positive");
    check(cfg.d_max > cfg.d_min, "generate_scene: d_max must exceed d_min");

    std::mt19937_64 rng(seed);
    auto uni = [&](double a, double b) {
        return std::uniform_real_distribution<double>(a, b)(rng);
    };

    int K = cfg.k_min == cfg.k_max
                ? cfg.k_min
                : std::uniform_int_distribution<int>(cfg.k_min, cfg.k_max)(rng);
    // Foreground layers occupy [d_min, bg_lo - min_step]; clamp K if the
    // depth range cannot host that many separated layers.
    int k_fit = static_cast<int>(
        std::floor((0.9 * cfg.d_max - cfg.d_min) / (1.5 * cfg.min_step))) - 1;
    K = std::max(0, std::min(K, k_fit));
    double bg_lo = cfg.d_min + 1.5 * cfg.min_step * (K + 1);

    // background ramp: far at the top, near at the bottom
    double ramp_tilt = uni(0.85, 1.0);
    double ramp_skew = uni(-0.1, 0.1);
    double gain = uni(0.7, 1.3);

    std::vector<detail::Primitive> prims(static_cast<size_t>(K));
    double level = bg_lo;
    for (int k = 0; k < K; ++k) {
        detail::Primitive& p = prims[static_cast<size_t>(k)];
        level -= cfg.min_step * uni(1.0, 1.4);
        p.depth = level;
        p.type = std::uniform_int_distribution<int>(0, 2)(rng);
        p.cx = uni(0.1, 0.9) * w;
        p.cy = uni(0.1, 0.9) * h;
        double smin = 0.04 * std::min(h, w), smax = 0.18 * std::min(h, w);
        p.rx = uni(smin, smax);
        p.ry = uni(smin, smax);
        p.rot = uni(0, 2 * M_PI);
        if (p.type == 2) {
            int nv = std::uniform_int_distribution<int>(3, 6)(rng);
            std::vector<double> angs(static_cast<size_t>(nv));
            for (double& a : angs) a = uni(0, 2 * M_PI);
            std::sort(angs.begin(), angs.end());
            for (double a : angs) {
                p.poly.push_back(p.cx + p.rx * std::cos(a));
                p.poly.push_back(p.cy + p.ry * std::sin(a));
            }
        }
        for (double& t : p.tint) t = uni(0.5, 1.0);
        p.freq1 = uni(0.08, 0.7);
        p.freq2 = uni(0.08, 0.7);
        p.phase1 = uni(0, 2 * M_PI);
        p.phase2 = uni(0, 2 * M_PI);
        p.ang1 = uni(0, 2 * M_PI);
        p.ang2 = uni(0, 2 * M_PI);
    }
    detail::Primitive bg;
    bg.freq1 = uni(0.01, 0.06);
    bg.freq2 = uni(0.05, 0.2);
    bg.phase1 = uni(0, 2 * M_PI);
    bg.phase2 = uni(0, 2 * M_PI);
    bg.ang1 = uni(0, 2 * M_PI);
    bg.ang2 = uni(0, 2 * M_PI);
    double bg_tint[3] = {uni(0.6, 1.0), uni(0.6, 1.0), uni(0.6, 1.0)};

    std::mt19937_64 noise_rng(rng());
    std::uniform_real_distribution<double> noise(-1.0, 1.0);

    Sample s;
    s.image = Tensor<float>({3, h, w});
    s.depth = Tensor<float>({h, w});
    s.mask = Tensor<uint8_t>({h, w});
    s.mask.fill(1);

    for (int y = 0; y < h; ++y) {
        double yn = static_cast<double>(y) / (h - 1);
        for (int x = 0; x < w; ++x) {
            double xn = static_cast<double>(x) / (w - 1);
            double t = ramp_tilt * (1.0 - yn) + ramp_skew * (xn - 0.5) + (1 - ramp_tilt);
            t = std::clamp(t, 0.0, 1.0);
            double d = bg_lo + (cfg.d_max - bg_lo) * t;
            const double* tint = bg_tint;
            double tex = bg.texture(x, y);
            // painter's order: primitives are sorted near-last
            for (const auto& p : prims)
                if (p.contains(x, y)) {
                    d = p.depth;
                    tint = p.tint;
                    tex = p.texture(x, y);
                }
            double shade = depth_shade(d, gain, cfg);
            double lum = shade * (0.7 + 0.3 * tex);
            double nz = 0.015 * noise(noise_rng);
            s.depth.at(y, x) = static_cast<float>(d);
            for (int c = 0; c < 3; ++c)
                s.image.at(c, y, x) =
                    static_cast<float>(std::clamp(lum * tint[c] + nz, 0.0, 1.0));
        }
    }
    if (aux) {
        aux->gain = gain;
        aux->n_primitives = K;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Depth file formats
// ---------------------------------------------------------------------------

enum class DepthFormat { pfm, png16, rawf32 };

inline DepthFormat depth_format_from_name(const std::string& name) {
    if (name == "pfm") return DepthFormat::pfm;
    if (name == "png16") return DepthFormat::png16;
    if (name == "rawf32") return DepthFormat::rawf32;
    throw std::invalid_argument("unknown depth format: " + name);
}

inline const char* depth_format_ext(DepthFormat f) {
    switch (f) {
        case DepthFormat::pfm: return ".pfm";
        case DepthFormat::png16: return ".png";
        default: return ".raw";
    }
}

inline void save_depth(const Tensor<float>& depth, const std::string& path,
                       DepthFormat fmt, double png16_scale = 1.0 / 256.0) {
    check(depth.ndim() == 2, "save_depth: expected [H,W]");
    int h = depth.dim(0), w = depth.dim(1);
    for (float v : depth.v)
        check(std::isfinite(v) && v > 0, "save_depth: values must be finite and positive");

    if (fmt == DepthFormat::pfm) {
        std::ofstream f(path, std::ios::binary);
        check(f.good(), "save_depth: cannot open " + path);
        f << "Pf\n" << w << " " << h << "\n-1.0\n";  // negative scale: little-endian
        // PFM stores rows bottom-to-top
        for (int y = h - 1; y >= 0; --y)
            f.write(reinterpret_cast<const char*>(depth.data() + static_cast<size_t>(y) * w),
                    static_cast<std::streamsize>(sizeof(float)) * w);
    } else if (fmt == DepthFormat::rawf32) {
        std::ofstream f(path, std::ios::binary);
        check(f.good(), "save_depth: cannot open " + path);
        f << "RAWF32 " << h << " " << w << "\n";
        f.write(reinterpret_cast<const char*>(depth.data()),
                static_cast<std::streamsize>(sizeof(float)) * depth.numel());
    } else {
        cv::Mat m(h, w, CV_16UC1);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double steps = std::round(depth.at(y, x) / png16_scale);
                check(steps <= 65535.0, "save_depth: png16 overflow at value " +
                                            std::to_string(depth.at(y, x)));
                m.at<uint16_t>(y, x) = static_cast<uint16_t>(steps);
            }
        check(cv::imwrite(path, m), "save_depth: png write failed: " + path);
        nlohmann::json meta = {{"scale_m_per_step", png16_scale}};
        std::ofstream jf(path + ".json");
        jf << meta.dump(2) << "\n";
    }
}

inline Tensor<float> load_depth(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    check(f.good(), "load_depth: cannot open " + path);
    std::string magic;
    f >> magic;
    if (magic == "Pf") {
        int w, h;
        double scale;
        f >> w >> h >> scale;
        f.get();  // single whitespace after header
        Tensor<float> d({h, w});
        check(scale < 0, "load_depth: big-endian PFM not supported");
        for (int y = h - 1; y >= 0; --y)
            f.read(reinterpret_cast<char*>(d.data() + static_cast<size_t>(y) * w),
                   static_cast<std::streamsize>(sizeof(float)) * w);
        check(f.good(), "load_depth: truncated PFM " + path);
        return d;
    }
    if (magic == "RAWF32") {
        int h, w;
        f >> h >> w;
        f.get();
        Tensor<float> d({h, w});
        f.read(reinterpret_cast<char*>(d.data()),
               static_cast<std::streamsize>(sizeof(float)) * d.numel());
        check(f.good(), "load_depth: truncated rawf32 " + path);
        return d;
    }
    f.close();
    // fall back to png16 + side-car
    cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
    check(!m.empty() && m.type() == CV_16UC1, "load_depth: unrecognized file " + path);
    std::ifstream jf(path + ".json");
    check(jf.good(), "load_depth: missing side-car for " + path);
    nlohmann::json meta = nlohmann::json::parse(jf);
    double scale = meta.at("scale_m_per_step");
    Tensor<float> d({m.rows, m.cols});
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x)
            d.at(y, x) = static_cast<float>(m.at<uint16_t>(y, x) * scale);
    return d;
}

inline void save_image_png(const Tensor<float>& img, const std::string& path) {
    check(img.ndim() == 3 && img.dim(0) == 3, "save_image_png: expected [3,H,W]");
    int h = img.dim(1), w = img.dim(2);
    cv::Mat m(h, w, CV_8UC3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            auto& px = m.at<cv::Vec3b>(y, x);
            for (int c = 0; c < 3; ++c)
                px[2 - c] = static_cast<uint8_t>(
                    std::lround(std::clamp(img.at(c, y, x), 0.f, 1.f) * 255.f));
        }
    check(cv::imwrite(path, m), "save_image_png: write failed: " + path);
}

inline Tensor<float> load_image_png(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
    check(!m.empty(), "load_image_png: cannot read " + path);
    Tensor<float> img({3, m.rows, m.cols});
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) {
            const auto& px = m.at<cv::Vec3b>(y, x);
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = px[2 - c] / 255.f;
        }
    return img;
}

// ---------------------------------------------------------------------------
// Dataset on disk
// ---------------------------------------------------------------------------

struct DatasetManifest {
    std::string root;
    uint64_t seed = 0;
    int img_h = 0, img_w = 0;
    int patch_h = 0, patch_w = 0;
    SceneConfig scene;
    std::map<std::string, std::vector<std::string>> splits;  // split -> ids
    int n_rejected = 0;  // SSIM-filtered candidates

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["seed"] = seed;
        j["image"] = {img_h, img_w};
        j["patch"] = {patch_h, patch_w};
        j["scene"] = {{"d_min", scene.d_min},     {"d_max", scene.d_max},
                      {"k_min", scene.k_min},     {"k_max", scene.k_max},
                      {"min_step", scene.min_step}};
        j["splits"] = splits;
        j["n_rejected"] = n_rejected;
        return j;
    }

    static DatasetManifest from_json(const nlohmann::json& j, const std::string& root) {
        DatasetManifest m;
        m.root = root;
        m.seed = j.at("seed");
        m.img_h = j.at("image")[0];
        m.img_w = j.at("image")[1];
        m.patch_h = j.at("patch")[0];
        m.patch_w = j.at("patch")[1];
        m.scene.d_min = j.at("scene").at("d_min");
        m.scene.d_max = j.at("scene").at("d_max");
        m.scene.k_min = j.at("scene").at("k_min");
        m.scene.k_max = j.at("scene").at("k_max");
        m.scene.min_step = j.at("scene").at("min_step");
        m.scene.patch_h = m.patch_h;
        m.scene.patch_w = m.patch_w;
        m.splits = j.at("splits").get<std::map<std::string, std::vector<std::string>>>();
        m.n_rejected = j.value("n_rejected", 0);
        return m;
    }

    static DatasetManifest load(const std::string& root) {
        std::ifstream f(fs::path(root) / "manifest.json");
        check(f.good(), "manifest not found under " + root);
        return from_json(nlohmann::json::parse(f), root);
    }

    void save() const {
        std::ofstream f(fs::path(root) / "manifest.json");
        f << to_json().dump(2) << "\n";
    }

    std::string image_path(const std::string& split, const std::string& id) const {
        return (fs::path(root) / split / (id + ".rgb.png")).string();
    }
    std::string depth_path(const std::string& split, const std::string& id) const {
        return (fs::path(root) / split / (id + ".depth.raw")).string();
    }

    Sample load_sample(const std::string& split, const std::string& id) const {
        Sample s;
        s.id = id;
        s.image = load_image_png(image_path(split, id));
        s.depth = load_depth(depth_path(split, id));
        s.mask = Tensor<uint8_t>({s.depth.dim(0), s.depth.dim(1)});
        s.mask.fill(1);
        return s;
    }
};

// SSIM quality gate: compare the rendered image's luma against a pure
// depth-shading reconstruction; degenerate renders score below 0.7.
inline double scene_ssim_score(const Sample& s, double gain, const SceneConfig& cfg) {
    Tensor<float> gray = rgb_to_gray(s.image);
    Tensor<float> recon({s.depth.dim(0), s.depth.dim(1)});
    for (int64_t i = 0; i < recon.numel(); ++i)
        recon[i] = static_cast<float>(std::clamp(
            depth_shade(s.depth[i], gain, cfg) * 0.85, 0.0, 1.0));
    return ssim(gray, recon);
}

constexpr double kSsimFilterThreshold = 0.7;

// Generate n accepted samples for one split; candidates failing the SSIM
// gate are skipped (their seeds burned), keeping generation deterministic.
inline std::vector<std::string> generate_split(DatasetManifest& m,
                                               const std::string& split, int n,
                                               uint64_t split_seed) {
    fs::create_directories(fs::path(m.root) / split);
    std::vector<std::string> ids;
    uint64_t s = split_seed;
    while (static_cast<int>(ids.size()) < n) {
        SceneAux aux;
        Sample smp = generate_scene(s, m.img_h, m.img_w, m.scene, &aux);
        double score = scene_ssim_score(smp, aux.gain, m.scene);
        if (score < kSsimFilterThreshold) {
            ++m.n_rejected;
            ++s;
            continue;
        }
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%s_%06llu", split.c_str(),
                      static_cast<unsigned long long>(s));
        smp.id = buf;
        save_image_png(smp.image, m.image_path(split, smp.id));
        save_depth(smp.depth, m.depth_path(split, smp.id), DepthFormat::rawf32);
        ids.push_back(smp.id);
        ++s;
    }
    return ids;
}

}  // namespace tiledepth

#endif
