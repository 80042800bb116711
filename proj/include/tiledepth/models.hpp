#ifndef TILEDEPTH_MODELS_HPP
#define TILEDEPTH_MODELS_HPP

#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tiledepth/autograd.hpp"
#include "tiledepth/geometry.hpp"
#include "tiledepth/tensor.hpp"

namespace tiledepth {

struct ModelConfig {
    int levels = 4;
    std::vector<int> channels{32, 64, 128, 256};
    int g2l_window = 4;   // feature-space attention window
    int g2l_heads = 4;
    int mlp_ratio = 2;
    double d_min = 1.0;
    double d_max = 80.0;
    int patch_h = 128;
    int patch_w = 192;

    // stride of the coarsest pyramid level; crop offsets are constrained
    // to multiples of this so overlaps map exactly onto every level
    int align() const { return 1 << levels; }

    nlohmann::json to_json() const {
        return {{"levels", levels},     {"channels", channels},
                {"g2l_window", g2l_window}, {"g2l_heads", g2l_heads},
                {"mlp_ratio", mlp_ratio},   {"d_min", d_min},
                {"d_max", d_max},           {"patch_h", patch_h},
                {"patch_w", patch_w}};
    }
    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.levels = j.at("levels");
        c.channels = j.at("channels").get<std::vector<int>>();
        c.g2l_window = j.at("g2l_window");
        c.g2l_heads = j.at("g2l_heads");
        c.mlp_ratio = j.at("mlp_ratio");
        c.d_min = j.at("d_min");
        c.d_max = j.at("d_max");
        c.patch_h = j.at("patch_h");
        c.patch_w = j.at("patch_w");
        return c;
    }
};

// Named parameter arrays of one network.
template <class T>
struct ParamStore {
    std::map<std::string, Tensor<T>> t;  // ordered: deterministic iteration

    Tensor<T>& at(const std::string& n) {
        auto it = t.find(n);
        check(it != t.end(), "ParamStore: missing parameter " + n);
        return it->second;
    }
    const Tensor<T>& at(const std::string& n) const {
        auto it = t.find(n);
        check(it != t.end(), "ParamStore: missing parameter " + n);
        return it->second;
    }

    template <class U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& [k, v] : t) out.t[k] = v.template cast<U>();
        return out;
    }

    bool all_finite() const {
        for (const auto& [k, v] : t)
            if (!v.all_finite()) return false;
        return true;
    }
};

// Binds a ParamStore to a graph; leaves are created on first use so the
// caller can later map gradients back to parameter names.
template <class T>
struct BoundParams {
    Graph<T>* g = nullptr;
    const ParamStore<T>* store = nullptr;
    bool trainable = false;
    std::map<std::string, Var> vars{};

    Var operator()(const std::string& name) {
        auto it = vars.find(name);
        if (it != vars.end()) return it->second;
        Var v = g->input(store->at(name), trainable);
        vars.emplace(name, v);
        return v;
    }
};

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace init {

template <class T>
void conv(ParamStore<T>& p, const std::string& name, int cout, int cin,
          std::mt19937_64& rng) {
    Tensor<T> w({cout, cin, 3, 3});
    double std = std::sqrt(2.0 / (cin * 9));
    std::normal_distribution<double> nd(0, std);
    for (T& v : w.v) v = static_cast<T>(nd(rng));
    p.t[name + ".w"] = std::move(w);
    p.t[name + ".b"] = Tensor<T>({cout});
}

template <class T>
void dense(ParamStore<T>& p, const std::string& name, int in, int out,
           std::mt19937_64& rng) {
    Tensor<T> w({in, out});
    double a = std::sqrt(1.0 / in);
    std::uniform_real_distribution<double> ud(-a, a);
    for (T& v : w.v) v = static_cast<T>(ud(rng));
    p.t[name + ".w"] = std::move(w);
    p.t[name + ".b"] = Tensor<T>({out});
}

template <class T>
void norm(ParamStore<T>& p, const std::string& name, int c) {
    Tensor<T> g({c});
    g.fill(T(1));
    p.t[name + ".g"] = std::move(g);
    p.t[name + ".b"] = Tensor<T>({c});
}

}  // namespace init

// ---------------------------------------------------------------------------
// Base depth network (instantiated twice: coarse N_c and fine N_f)
// ---------------------------------------------------------------------------

template <class T>
ParamStore<T> init_base_params(const ModelConfig& cfg, uint64_t seed) {
    ParamStore<T> p;
    std::mt19937_64 rng(seed);
    const auto& ch = cfg.channels;
    init::conv(p, "stem", ch[0], 3, rng);
    for (int i = 0; i < cfg.levels; ++i)
        init::conv(p, "down" + std::to_string(i + 1), ch[static_cast<size_t>(i)],
                   i == 0 ? ch[0] : ch[static_cast<size_t>(i - 1)], rng);
    for (int i = cfg.levels; i >= 1; --i) {
        int cin = i == cfg.levels
                      ? ch[static_cast<size_t>(i - 1)]
                      : ch[static_cast<size_t>(i - 1)] + ch[static_cast<size_t>(i)];
        init::conv(p, "dec" + std::to_string(i), ch[static_cast<size_t>(i - 1)], cin, rng);
    }
    init::conv(p, "head", 1, ch[0], rng);
    return p;
}

template <class T>
struct NetOut {
    Var depth;                   // [H,W] meters, strictly inside (d_min,d_max)
    std::vector<Var> pyramid;    // level i (1-based) = pyramid[i-1], C_i x H/2^i x W/2^i
};

template <class T>
NetOut<T> base_forward(Graph<T>& g, BoundParams<T>& p, const Tensor<T>& image,
                       const ModelConfig& cfg) {
    check(image.ndim() == 3 && image.dim(0) == 3 && image.dim(1) == cfg.patch_h &&
              image.dim(2) == cfg.patch_w,
          "base_forward: input must be [3," + std::to_string(cfg.patch_h) + "," +
              std::to_string(cfg.patch_w) + "], got " +
              Tensor<T>::shape_str(image.shape));
    check(image.all_finite(), "base_forward: non-finite input");
    Var x = g.input(image, false);
    auto cv = [&](const std::string& n, Var in, int stride) {
        return g.relu(g.conv2d(in, p(n + ".w"), p(n + ".b"), stride, 1));
    };
    Var s = cv("stem", x, 1);
    std::vector<Var> enc;  // enc[i] at stride 2^(i+1)
    Var cur = s;
    for (int i = 1; i <= cfg.levels; ++i) {
        cur = cv("down" + std::to_string(i), cur, 2);
        enc.push_back(cur);
    }
    std::vector<Var> dec(static_cast<size_t>(cfg.levels));
    Var d = cv("dec" + std::to_string(cfg.levels), enc.back(), 1);
    dec[static_cast<size_t>(cfg.levels - 1)] = d;
    for (int i = cfg.levels - 1; i >= 1; --i) {
        Var up = g.upsample2x(d);
        d = cv("dec" + std::to_string(i),
               g.concat_ch({up, enc[static_cast<size_t>(i - 1)]}), 1);
        dec[static_cast<size_t>(i - 1)] = d;
    }
    Var h = g.upsample2x(d);
    Var logits = g.conv2d(h, p("head.w"), p("head.b"), 1, 1);
    Var depth = g.sigmoid_range(logits, static_cast<T>(cfg.d_min),
                                static_cast<T>(cfg.d_max));
    NetOut<T> out;
    out.depth = g.reshape(depth, {cfg.patch_h, cfg.patch_w});
    out.pyramid = dec;
    return out;
}

// Convenience: run a network with frozen params outside any training graph.
template <class T>
struct EvalOut {
    Tensor<T> depth;
    std::vector<Tensor<T>> pyramid;
};

template <class T>
EvalOut<T> base_eval(const ParamStore<T>& params, const Tensor<T>& image,
                     const ModelConfig& cfg) {
    Graph<T> g;
    BoundParams<T> p{&g, &params, false};
    NetOut<T> o = base_forward(g, p, image, cfg);
    EvalOut<T> out;
    out.depth = g.val(o.depth);
    for (Var v : o.pyramid) out.pyramid.push_back(g.val(v));
    return out;
}

// ---------------------------------------------------------------------------
// G2L: windowed self-attention, then the same block over a half-window
// cyclically shifted grid
// ---------------------------------------------------------------------------

namespace detail {

// gather map: [C,H,W] -> window-grouped tokens [nW*win*win, C],
// reading pixels at a cyclic offset (sy,sx)
inline std::shared_ptr<std::vector<int64_t>> partition_idx(int C, int H, int W, int win,
                                                           int sy, int sx) {
    auto idx = std::make_shared<std::vector<int64_t>>(
        static_cast<size_t>(C) * H * W);
    int wy = H / win, wx = W / win;
    size_t o = 0;
    for (int by = 0; by < wy; ++by)
        for (int bx = 0; bx < wx; ++bx)
            for (int ty = 0; ty < win; ++ty)
                for (int tx = 0; tx < win; ++tx)
                    for (int c = 0; c < C; ++c) {
                        int y = (by * win + ty + sy % H + H) % H;
                        int x = (bx * win + tx + sx % W + W) % W;
                        (*idx)[o++] = (static_cast<int64_t>(c) * H + y) * W + x;
                    }
    return idx;
}

// inverse map: tokens [nW*win*win, C] -> [C,H,W] written at offset (sy,sx)
inline std::shared_ptr<std::vector<int64_t>> unpartition_idx(int C, int H, int W, int win,
                                                             int sy, int sx) {
    auto fwd = partition_idx(C, H, W, win, sy, sx);
    auto idx = std::make_shared<std::vector<int64_t>>(fwd->size());
    for (size_t i = 0; i < fwd->size(); ++i)
        (*idx)[static_cast<size_t>((*fwd)[i])] = static_cast<int64_t>(i);
    return idx;
}

}  // namespace detail

template <class T>
ParamStore<T>& g2l_level_init(ParamStore<T>& p, const std::string& prefix, int c,
                              int mlp_ratio, std::mt19937_64& rng) {
    for (const char* stage : {"wsa", "swsa"}) {
        std::string s = prefix + "." + stage;
        init::norm(p, s + ".ln1", c);
        init::dense(p, s + ".qkv", c, 3 * c, rng);
        init::dense(p, s + ".proj", c, c, rng);
        init::norm(p, s + ".ln2", c);
        init::dense(p, s + ".mlp1", c, c * mlp_ratio, rng);
        init::dense(p, s + ".mlp2", c * mlp_ratio, c, rng);
    }
    return p;
}

// One pre-norm transformer block over window-grouped tokens.
template <class T>
Var g2l_block(Graph<T>& g, BoundParams<T>& p, const std::string& s, Var tokens, int nw,
              int tw, int heads) {
    Var h = g.layernorm(tokens, p(s + ".ln1.g"), p(s + ".ln1.b"));
    Var qkv = g.linear(h, p(s + ".qkv.w"), p(s + ".qkv.b"));
    Var att = g.window_attention(qkv, nw, tw, heads);
    att = g.linear(att, p(s + ".proj.w"), p(s + ".proj.b"));
    Var x = g.add(tokens, att);
    Var h2 = g.layernorm(x, p(s + ".ln2.g"), p(s + ".ln2.b"));
    Var m = g.linear(h2, p(s + ".mlp1.w"), p(s + ".mlp1.b"));
    m = g.relu(m);
    m = g.linear(m, p(s + ".mlp2.w"), p(s + ".mlp2.b"));
    return g.add(x, m);
}

// f_g2l = SW-SA(W-SA(f_c)): shape-preserving on [C,H',W'].
template <class T>
Var g2l_forward(Graph<T>& g, BoundParams<T>& p, const std::string& prefix, Var f_c,
                const ModelConfig& cfg) {
    const Tensor<T>& v = g.val(f_c);
    int C = v.dim(0), H = v.dim(1), W = v.dim(2);
    int win = cfg.g2l_window;
    check(H % win == 0 && W % win == 0,
          "g2l_forward: spatial dims " + Tensor<T>::shape_str({H, W}) +
              " not divisible by window " + std::to_string(win));
    int nw = (H / win) * (W / win), tw = win * win;
    int shift = win / 2;

    // W-SA stage
    Var tok = g.gather(f_c, {nw * tw, C}, detail::partition_idx(C, H, W, win, 0, 0));
    tok = g2l_block(g, p, prefix + ".wsa", tok, nw, tw, cfg.g2l_heads);
    Var x = g.gather(tok, {C, H, W}, detail::unpartition_idx(C, H, W, win, 0, 0));
    // SW-SA stage: cyclic half-window shift, attention, shift back
    Var tok2 =
        g.gather(x, {nw * tw, C}, detail::partition_idx(C, H, W, win, shift, shift));
    tok2 = g2l_block(g, p, prefix + ".swsa", tok2, nw, tw, cfg.g2l_heads);
    return g.gather(tok2, {C, H, W},
                    detail::unpartition_idx(C, H, W, win, shift, shift));
}

// ---------------------------------------------------------------------------
// Fusion block and Guided Fusion Network
// ---------------------------------------------------------------------------

// FB: concat -> conv3x3 -> ReLU -> conv3x3 -> ReLU
template <class T>
Var fb(Graph<T>& g, BoundParams<T>& p, const std::string& prefix,
       const std::vector<Var>& inputs) {
    Var x = g.concat_ch(inputs);
    x = g.relu(g.conv2d(x, p(prefix + ".c1.w"), p(prefix + ".c1.b"), 1, 1));
    x = g.relu(g.conv2d(x, p(prefix + ".c2.w"), p(prefix + ".c2.b"), 1, 1));
    return x;
}

template <class T>
void fb_init(ParamStore<T>& p, const std::string& prefix, int cin, int cout,
             std::mt19937_64& rng) {
    init::conv(p, prefix + ".c1", cout, cin, rng);
    init::conv(p, prefix + ".c2", cout, cout, rng);
}

template <class T>
ParamStore<T> init_fusion_params(const ModelConfig& cfg, uint64_t seed) {
    ParamStore<T> p;
    std::mt19937_64 rng(seed);
    const auto& ch = cfg.channels;
    // encoder over [image(3), coarse depth(1), guided depth(1)]
    init::conv(p, "stem", ch[0], 5, rng);
    for (int i = 0; i < cfg.levels; ++i)
        init::conv(p, "down" + std::to_string(i + 1), ch[static_cast<size_t>(i)],
                   i == 0 ? ch[0] : ch[static_cast<size_t>(i - 1)], rng);
    for (int i = 1; i <= cfg.levels; ++i) {
        int c = ch[static_cast<size_t>(i - 1)];
        g2l_level_init(p, "g2l.l" + std::to_string(i), c, cfg.mlp_ratio, rng);
        fb_init(p, "skip" + std::to_string(i), 2 * c, c, rng);
        int cin = 3 * c;
        if (i < cfg.levels) cin += ch[static_cast<size_t>(i)];  // upsampled coarser level
        fb_init(p, "dec" + std::to_string(i), cin, c, rng);
    }
    init::conv(p, "head", 1, ch[0], rng);
    return p;
}

// Per-image state shared by every patch of one image: coarse features as
// graph nodes plus their G2L transforms.
template <class T>
struct FusionContext {
    std::vector<Var> f_c;
    std::vector<Var> f_g2l;
    int img_h = 0, img_w = 0;
};

template <class T>
FusionContext<T> make_fusion_context(Graph<T>& g, BoundParams<T>& p,
                                     const std::vector<Tensor<T>>& coarse_pyramid,
                                     int img_h, int img_w, const ModelConfig& cfg) {
    FusionContext<T> ctx;
    ctx.img_h = img_h;
    ctx.img_w = img_w;
    for (int i = 1; i <= cfg.levels; ++i) {
        Var fc = g.input(coarse_pyramid[static_cast<size_t>(i - 1)], false);
        ctx.f_c.push_back(fc);
        ctx.f_g2l.push_back(g2l_forward(g, p, "g2l.l" + std::to_string(i), fc, cfg));
    }
    return ctx;
}

template <class T>
Tensor<T> log_norm_depth(const Tensor<T>& d, const ModelConfig& cfg) {
    Tensor<T> out(d.shape);
    double lo = std::log(cfg.d_min), hi = std::log(cfg.d_max);
    for (int64_t i = 0; i < d.numel(); ++i)
        out[i] = static_cast<T>(
            (std::log(std::clamp(static_cast<double>(d[i]), cfg.d_min, cfg.d_max)) - lo) /
            (hi - lo));
    return out;
}

// Guided fusion: encoder sees only image+depth values; network features
// enter at the skips (roi of G2L output) and in the decoder (roi of
// coarse features + fine features + upsampled previous level).
template <class T>
NetOut<T> fusion_forward(Graph<T>& g, BoundParams<T>& p, const FusionContext<T>& ctx,
                         const Tensor<T>& crop_img, const Tensor<T>& d_c_crop,
                         const Tensor<T>& d_guided,
                         const std::vector<Tensor<T>>& fine_pyramid, const Window& win,
                         const ModelConfig& cfg) {
    int ph = cfg.patch_h, pw = cfg.patch_w;
    check(crop_img.ndim() == 3 && crop_img.dim(1) == ph && crop_img.dim(2) == pw,
          "fusion_forward: bad crop shape");
    check(win.valid_in(ctx.img_h, ctx.img_w), "fusion_forward: window out of image");
    check(win.x0 % cfg.align() == 0 && win.y0 % cfg.align() == 0,
          "fusion_forward: window offsets must be multiples of " +
              std::to_string(cfg.align()));

    // 5-channel input: image + coarse depth + guided depth (log-normalized)
    Tensor<T> in5({5, ph, pw});
    std::copy(crop_img.v.begin(), crop_img.v.end(), in5.v.begin());
    Tensor<T> nc = log_norm_depth(d_c_crop, cfg);
    Tensor<T> ng = log_norm_depth(d_guided, cfg);
    std::copy(nc.v.begin(), nc.v.end(), in5.v.begin() + 3 * static_cast<size_t>(ph) * pw);
    std::copy(ng.v.begin(), ng.v.end(), in5.v.begin() + 4 * static_cast<size_t>(ph) * pw);

    Var x = g.input(std::move(in5), false);
    auto cv = [&](const std::string& n, Var in, int stride) {
        return g.relu(g.conv2d(in, p(n + ".w"), p(n + ".b"), stride, 1));
    };
    Var s = cv("stem", x, 1);
    std::vector<Var> enc;
    Var cur = s;
    for (int i = 1; i <= cfg.levels; ++i) {
        cur = cv("down" + std::to_string(i), cur, 2);
        enc.push_back(cur);
    }

    // skip fusion, then decoder from the deepest level
    std::vector<Var> skip(static_cast<size_t>(cfg.levels));
    for (int i = 1; i <= cfg.levels; ++i) {
        int oh = ph >> i, ow = pw >> i;
        Var roi_g2l = g.roi_sample(ctx.f_g2l[static_cast<size_t>(i - 1)], win.x0, win.y0,
                                   win.w, win.h, ctx.img_h, ctx.img_w, oh, ow);
        skip[static_cast<size_t>(i - 1)] = fb(
            g, p, "skip" + std::to_string(i), {roi_g2l, enc[static_cast<size_t>(i - 1)]});
    }
    std::vector<Var> dec(static_cast<size_t>(cfg.levels));
    Var prev = -1;
    for (int i = cfg.levels; i >= 1; --i) {
        int oh = ph >> i, ow = pw >> i;
        Var roi_c = g.roi_sample(ctx.f_c[static_cast<size_t>(i - 1)], win.x0, win.y0,
                                 win.w, win.h, ctx.img_h, ctx.img_w, oh, ow);
        Var ff = g.input(fine_pyramid[static_cast<size_t>(i - 1)], false);
        std::vector<Var> ins{skip[static_cast<size_t>(i - 1)], roi_c, ff};
        if (prev >= 0) ins.push_back(g.upsample2x(prev));
        prev = fb(g, p, "dec" + std::to_string(i), ins);
        dec[static_cast<size_t>(i - 1)] = prev;
    }
    Var h = g.upsample2x(prev);
    Var logits = g.conv2d(h, p("head.w"), p("head.b"), 1, 1);
    // The head predicts a correction to the guidance depth in logit space:
    // with zero logits the output equals d_guided, so independently predicted
    // tiles that share guidance agree by construction and assembly-time
    // guidance propagates into the prediction.
    T lo = static_cast<T>(cfg.d_min), hi = static_cast<T>(cfg.d_max);
    Tensor<T> gl({1, ph, pw});
    for (size_t i = 0; i < gl.v.size(); ++i) {
        T u = (d_guided.v[i] - lo) / (hi - lo);
        u = std::min(std::max(u, T(1e-4)), T(1) - T(1e-4));
        gl.v[i] = std::log(u / (T(1) - u));
    }
    Var depth = g.sigmoid_range(g.add(logits, g.input(std::move(gl), false)), lo, hi);
    NetOut<T> out;
    out.depth = g.reshape(depth, {ph, pw});
    out.pyramid = dec;
    return out;
}

}  // namespace tiledepth

#endif
