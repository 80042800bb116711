#ifndef TILEDEPTH_TRAINING_HPP
#define TILEDEPTH_TRAINING_HPP

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tiledepth/dataio.hpp"
#include "tiledepth/losses.hpp"
#include "tiledepth/models.hpp"
#include "tiledepth/tensor.hpp"

namespace tiledepth {

struct TrainConfig {
    std::string stage = "coarse";  // coarse | fine | fusion
    int epochs = 16;               // fusion default is 12
    int batch_size = 1;
    double lr = 3e-4;
    double weight_decay = 1e-2;
    uint64_t seed = 0;
    double mu1 = 0.1;
    double mu2 = 0.1;
    double pair_min_overlap = 0.25;
    bool hflip = true;
    int pairs_per_step = 2;  // distinct images (one pair each) per fusion step
    double silog_alpha = 10.0;
    double silog_lambda = 0.85;

    LossConfig loss_config() const {
        return {silog_alpha, silog_lambda, mu1, mu2};
    }
    nlohmann::json to_json() const {
        return {{"stage", stage},       {"epochs", epochs},
                {"batch_size", batch_size}, {"lr", lr},
                {"weight_decay", weight_decay}, {"seed", seed},
                {"mu1", mu1},           {"mu2", mu2},
                {"pair_min_overlap", pair_min_overlap}, {"hflip", hflip},
                {"pairs_per_step", pairs_per_step}};
    }
};

// ---------------------------------------------------------------------------
// Optimizer: Adam with decoupled weight decay, cosine-decayed lr
// ---------------------------------------------------------------------------

template <class T>
class AdamW {
public:
    AdamW(double lr, double weight_decay, int64_t total_steps)
        : lr_(lr), wd_(weight_decay), total_steps_(total_steps) {}

    void step(ParamStore<T>& params, const std::map<std::string, Tensor<T>>& grads) {
        ++t_;
        double lr_t = lr_ * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(t_ - 1) /
                                                  static_cast<double>(total_steps_)));
        double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (auto& [name, g] : grads) {
            Tensor<T>& p = params.at(name);
            auto& [m, v] = state_[name];
            if (m.v.empty()) {
                m = Tensor<T>(p.shape);
                v = Tensor<T>(p.shape);
            }
            for (int64_t i = 0; i < p.numel(); ++i) {
                double gi = g[i];
                double mi = beta1_ * m[i] + (1 - beta1_) * gi;
                double vi = beta2_ * v[i] + (1 - beta2_) * gi * gi;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                double upd = (mi / bc1) / (std::sqrt(vi / bc2) + eps_) + wd_ * p[i];
                p[i] = static_cast<T>(p[i] - lr_t * upd);
            }
        }
    }

    int64_t steps_taken() const { return t_; }

private:
    double lr_, wd_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    int64_t total_steps_, t_ = 0;
    std::map<std::string, std::pair<Tensor<T>, Tensor<T>>> state_;
};

template <class T>
std::map<std::string, Tensor<T>> collect_grads(Graph<T>& g, const BoundParams<T>& bp) {
    std::map<std::string, Tensor<T>> out;
    for (const auto& [name, var] : bp.vars) {
        const Tensor<T>& gr = g.grad(var);
        out[name] = gr.v.empty() ? Tensor<T>(g.val(var).shape) : gr;
    }
    return out;
}

template <class T>
void accumulate_grads(std::map<std::string, Tensor<T>>& acc,
                      const std::map<std::string, Tensor<T>>& g) {
    for (const auto& [name, t] : g) {
        auto it = acc.find(name);
        if (it == acc.end()) {
            acc[name] = t;
        } else {
            for (int64_t i = 0; i < t.numel(); ++i) it->second[i] += t[i];
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints: binary tensor blob + self-describing JSON header
// ---------------------------------------------------------------------------

struct CheckpointMeta {
    ModelConfig config;
    int64_t step = 0;
    std::string rng_state;
    int version = 1;
};

template <class T>
void save_checkpoint(const std::string& path, const ParamStore<T>& params,
                     const CheckpointMeta& meta) {
    nlohmann::json header;
    header["version"] = meta.version;
    header["step"] = meta.step;
    header["rng_state"] = meta.rng_state;
    header["config"] = meta.config.to_json();
    header["tensors"] = nlohmann::json::array();
    for (const auto& [name, t] : params.t)
        header["tensors"].push_back({{"name", name}, {"shape", t.shape}});
    std::string hs = header.dump();
    std::ofstream f(path, std::ios::binary);
    check(f.good(), "save_checkpoint: cannot open " + path);
    uint64_t hl = hs.size();
    f.write("TDCK", 4);
    f.write(reinterpret_cast<const char*>(&hl), 8);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, t] : params.t) {
        std::vector<float> buf(t.v.begin(), t.v.end());
        f.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
}

template <class T>
std::pair<ParamStore<T>, CheckpointMeta> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    check(f.good(), "load_checkpoint: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    check(std::string(magic, 4) == "TDCK", "load_checkpoint: bad magic in " + path);
    uint64_t hl = 0;
    f.read(reinterpret_cast<char*>(&hl), 8);
    std::string hs(hl, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hl));
    nlohmann::json header = nlohmann::json::parse(hs);
    CheckpointMeta meta;
    meta.version = header.at("version");
    meta.step = header.at("step");
    meta.rng_state = header.value("rng_state", "");
    meta.config = ModelConfig::from_json(header.at("config"));
    ParamStore<T> params;
    for (const auto& jt : header.at("tensors")) {
        std::vector<int> shape = jt.at("shape").get<std::vector<int>>();
        Tensor<float> buf(shape);
        f.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.numel() * sizeof(float)));
        params.t[jt.at("name")] = buf.template cast<T>();
    }
    check(f.good(), "load_checkpoint: truncated " + path);
    return {std::move(params), std::move(meta)};
}

// ---------------------------------------------------------------------------
// Stage trainers
// ---------------------------------------------------------------------------

namespace detail {

inline std::string rng_state_str(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

template <class T>
void abort_on_nonfinite(double loss, int64_t step) {
    check(std::isfinite(loss),
          "training: non-finite loss at step " + std::to_string(step));
}

}  // namespace detail

// Shared driver for the coarse and fine stages; `make_batch` maps a sample
// to (network input image, target depth at patch dims).
template <class T>
ParamStore<T> train_base_stage(const DatasetManifest& data, const ModelConfig& mcfg,
                               const TrainConfig& tcfg, const std::string& out_dir,
                               bool fine_stage) {
    fs::create_directories(out_dir);
    const auto& ids = data.splits.at("train");
    check(!ids.empty(), "train: empty training split");
    ParamStore<T> params = init_base_params<T>(mcfg, tcfg.seed);
    std::mt19937_64 rng(tcfg.seed ^ 0x9e3779b97f4a7c15ULL);
    int64_t steps_per_epoch =
        (static_cast<int64_t>(ids.size()) + tcfg.batch_size - 1) / tcfg.batch_size;
    AdamW<T> opt(tcfg.lr, tcfg.weight_decay, steps_per_epoch * tcfg.epochs);
    LossConfig lc = tcfg.loss_config();

    std::ofstream csv(fs::path(out_dir) / "loss.csv");
    csv << LossReport::csv_header() << "\n";
    int64_t step = 0;
    int align = mcfg.align();

    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        std::vector<std::string> order = ids;
        std::shuffle(order.begin(), order.end(), rng);
        size_t cursor = 0;
        while (cursor < order.size()) {
            std::map<std::string, Tensor<T>> grads;
            double loss_acc = 0;
            int in_batch = 0;
            for (; in_batch < tcfg.batch_size && cursor < order.size();
                 ++in_batch, ++cursor) {
                Sample s = data.load_sample("train", order[cursor]);
                Tensor<T> img, gt;
                if (fine_stage) {
                    bool flip = tcfg.hflip && (rng() & 1);
                    Window w = random_windows(1, data.img_h, data.img_w, mcfg.patch_h,
                                              mcfg.patch_w, align, rng())[0];
                    Tensor<float> ci = crop(s.image, w.y0, w.x0, w.h, w.w);
                    Tensor<float> cd = crop(s.depth, w.y0, w.x0, w.h, w.w);
                    if (flip) {
                        ci = hflip(ci);
                        cd = hflip(cd);
                    }
                    img = ci.template cast<T>();
                    gt = cd.template cast<T>();
                } else {
                    img = resize(s.image, mcfg.patch_h, mcfg.patch_w,
                                 ResizeMode::bilinear)
                              .template cast<T>();
                    gt = resize(s.depth, mcfg.patch_h, mcfg.patch_w, ResizeMode::area)
                             .template cast<T>();
                }
                Tensor<uint8_t> mask(gt.shape);
                mask.fill(1);
                Graph<T> g;
                BoundParams<T> bp{&g, &params, true};
                NetOut<T> out = base_forward(g, bp, img, mcfg);
                Var loss = silog_loss_node(g, out.depth, gt, mask, lc);
                g.backward(loss);
                loss_acc += g.val(loss).v[0];
                accumulate_grads(grads, collect_grads(g, bp));
            }
            for (auto& [k, t] : grads)
                for (T& v : t.v) v /= static_cast<T>(in_batch);
            double loss_mean = loss_acc / in_batch;
            detail::abort_on_nonfinite<T>(loss_mean, step);
            opt.step(params, grads);
            LossReport r = make_report(loss_mean, 0, 0, lc);
            csv << r.csv_row(step) << "\n";
            ++step;
        }
        CheckpointMeta meta{mcfg, step, detail::rng_state_str(rng)};
        save_checkpoint((fs::path(out_dir) / (tcfg.stage + ".ckpt")).string(), params,
                        meta);
        csv.flush();
    }
    return params;
}

template <class T>
ParamStore<T> train_coarse(const DatasetManifest& data, const ModelConfig& mcfg,
                           const TrainConfig& tcfg, const std::string& out_dir) {
    return train_base_stage<T>(data, mcfg, tcfg, out_dir, false);
}

template <class T>
ParamStore<T> train_fine(const DatasetManifest& data, const ModelConfig& mcfg,
                         const TrainConfig& tcfg, const std::string& out_dir) {
    return train_base_stage<T>(data, mcfg, tcfg, out_dir, true);
}

// Consistency-aware training of the guided fusion network. N_c and N_f stay
// frozen; each step draws `pairs_per_step` distinct images and one
// overlapping crop pair per image.
template <class T>
ParamStore<T> train_fusion(const DatasetManifest& data, const ModelConfig& mcfg,
                           const TrainConfig& tcfg, const ParamStore<T>& nc,
                           const ParamStore<T>& nf, const std::string& out_dir) {
    fs::create_directories(out_dir);
    const auto& ids = data.splits.at("train");
    check(static_cast<int>(ids.size()) >= tcfg.pairs_per_step,
          "train_fusion: too few training images");
    ParamStore<T> ng = init_fusion_params<T>(mcfg, tcfg.seed + 1);
    std::mt19937_64 rng(tcfg.seed ^ 0x2545f4914f6cdd1dULL);
    int64_t steps_per_epoch = static_cast<int64_t>(ids.size()) / tcfg.pairs_per_step;
    AdamW<T> opt(tcfg.lr, tcfg.weight_decay, steps_per_epoch * tcfg.epochs);
    LossConfig lc = tcfg.loss_config();

    std::ofstream csv(fs::path(out_dir) / "loss.csv");
    csv << LossReport::csv_header() << "\n";
    int64_t step = 0;
    int align = mcfg.align();

    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        std::vector<std::string> order = ids;
        std::shuffle(order.begin(), order.end(), rng);
        size_t cursor = 0;
        for (int64_t se = 0; se < steps_per_epoch; ++se) {
            std::map<std::string, Tensor<T>> grads;
            double si_acc = 0, feat_acc = 0, depth_acc = 0;
            for (int k = 0; k < tcfg.pairs_per_step; ++k, ++cursor) {
                Sample s = data.load_sample("train", order[cursor % order.size()]);
                if (tcfg.hflip && (rng() & 1)) {
                    s.image = hflip(s.image);
                    s.depth = hflip(s.depth);
                }
                Tensor<T> image = s.image.template cast<T>();
                Tensor<T> gt = s.depth.template cast<T>();
                // frozen coarse pass on the downsampled image
                Tensor<T> down =
                    resize(image, mcfg.patch_h, mcfg.patch_w, ResizeMode::bilinear);
                EvalOut<T> coarse = base_eval(nc, down, mcfg);
                Tensor<T> d_c_full =
                    resize(coarse.depth, data.img_h, data.img_w, ResizeMode::bilinear);

                auto [w1, w2, ov] = sample_overlapping_pair(
                    data.img_h, data.img_w, mcfg.patch_h, mcfg.patch_w,
                    tcfg.pair_min_overlap, align, rng());

                Graph<T> g;
                BoundParams<T> bp{&g, &ng, true};
                FusionContext<T> ctx = make_fusion_context(g, bp, coarse.pyramid,
                                                           data.img_h, data.img_w, mcfg);
                NetOut<T> outs[2];
                Var si_terms[2];
                const Window* wins[2] = {&w1, &w2};
                // Guidance augmentation: a random log-space affine error on the
                // guidance depth. The head predicts a correction to the guide,
                // so training must vary the guide or the network memorizes the
                // fine network's error pattern instead of correcting whatever
                // guidance it is given. Both crops of a pair share the error:
                // the consistency terms must not reward ignoring the guide,
                // which is how overlapping crops with different guide errors
                // would agree most cheaply. Half the pairs use the reference
                // depth as the guide base instead of the fine prediction, so
                // the network also sees the accurate, self-consistent guides
                // it gets from the assembled canvas at inference and learns to
                // track them rather than re-correct them.
                std::uniform_real_distribution<double> uaff(-0.25, 0.25);
                double ga = std::exp(uaff(rng)), gb = 0.15 * uaff(rng) / 0.25;
                bool gt_guide = rng() & 1;
                double llo = std::log(mcfg.d_min), lhi = std::log(mcfg.d_max);
                for (int j = 0; j < 2; ++j) {
                    const Window& w = *wins[j];
                    Tensor<T> ci = crop(image, w.y0, w.x0, w.h, w.w);
                    Tensor<T> dcc = crop(d_c_full, w.y0, w.x0, w.h, w.w);
                    Tensor<T> cgt = crop(gt, w.y0, w.x0, w.h, w.w);
                    EvalOut<T> fine = base_eval(nf, ci, mcfg);
                    Tensor<T> guide = gt_guide ? cgt : fine.depth;
                    for (auto& v : guide.v) {
                        double u = (std::log(static_cast<double>(v)) - llo) / (lhi - llo);
                        u = std::clamp(ga * (u - 0.5) + 0.5 + gb, 0.02, 0.98);
                        v = static_cast<T>(std::exp(llo + u * (lhi - llo)));
                    }
                    outs[j] = fusion_forward(g, bp, ctx, ci, dcc, guide,
                                             fine.pyramid, w, mcfg);
                    Tensor<uint8_t> mask(cgt.shape);
                    mask.fill(1);
                    si_terms[j] = silog_loss_node(g, outs[j].depth, cgt, mask, lc);
                }
                auto [feat, depth] = consistency_loss(g, outs[0], outs[1], w1, w2, mcfg);
                T inv = T(1) / T(tcfg.pairs_per_step);
                Var loss = g.weighted_sum(
                    {si_terms[0], si_terms[1], feat, depth},
                    {T(0.5) * inv, T(0.5) * inv, static_cast<T>(lc.mu2) * inv,
                     static_cast<T>(lc.mu2 * lc.mu1) * inv});
                g.backward(loss);
                si_acc += 0.5 * (g.val(si_terms[0]).v[0] + g.val(si_terms[1]).v[0]);
                feat_acc += g.val(feat).v[0];
                depth_acc += g.val(depth).v[0];
                accumulate_grads(grads, collect_grads(g, bp));
            }
            double n = tcfg.pairs_per_step;
            LossReport r = make_report(si_acc / n, feat_acc / n, depth_acc / n, lc);
            detail::abort_on_nonfinite<T>(r.total, step);
            opt.step(ng, grads);
            csv << r.csv_row(step) << "\n";
            ++step;
        }
        CheckpointMeta meta{mcfg, step, detail::rng_state_str(rng)};
        save_checkpoint((fs::path(out_dir) / "fusion.ckpt").string(), ng, meta);
        csv.flush();
    }
    return ng;
}

}  // namespace tiledepth

#endif
