// Command line front end: dataset generation, staged training, inference,
// evaluation, and the scripted ablation matrix. Every command resolves its
// configuration (defaults < config file < flags < PF_SEED), runs, and writes
// a run manifest that can replay the command bit-identically.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "tiledepth/dataio.hpp"
#include "tiledepth/geometry.hpp"
#include "tiledepth/inference.hpp"
#include "tiledepth/metrics.hpp"
#include "tiledepth/models.hpp"
#include "tiledepth/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tiledepth;

namespace {

constexpr const char* kVersion = "tiledepth 0.1.0";

using Config = std::map<std::string, std::string>;

[[noreturn]] void fail(const std::string& msg) {
    throw std::runtime_error(msg);
}

// Flat "key = value" file, '#' comments, blank lines ignored.
Config parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f.good()) fail("config file not readable: " + path);
    Config cfg;
    std::string line;
    int ln = 0;
    while (std::getline(f, line)) {
        ++ln;
        size_t h = line.find('#');
        if (h != std::string::npos) line = line.substr(0, h);
        size_t eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r") != std::string::npos)
                fail("config parse error at " + path + ":" + std::to_string(ln));
            continue;
        }
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        std::string k = trim(line.substr(0, eq));
        std::string v = trim(line.substr(eq + 1));
        if (k.empty()) fail("empty key at " + path + ":" + std::to_string(ln));
        cfg[k] = v;
    }
    return cfg;
}

// Getters write resolved defaults back into the config so the run manifest
// records every effective value, not just the explicitly passed ones.
std::string get(Config& c, const std::string& k, const std::string& dflt) {
    auto it = c.find(k);
    if (it == c.end()) {
        c[k] = dflt;
        return dflt;
    }
    return it->second;
}
std::string require(const Config& c, const std::string& k) {
    auto it = c.find(k);
    if (it == c.end() || it->second.empty()) fail("missing required option --" + k);
    return it->second;
}
int geti(Config& c, const std::string& k, int dflt) {
    return std::stoi(get(c, k, std::to_string(dflt)));
}
double getd(Config& c, const std::string& k, double dflt) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", dflt);
    return std::stod(get(c, k, buf));
}
uint64_t getu(Config& c, const std::string& k, uint64_t dflt) {
    return std::stoull(get(c, k, std::to_string(dflt)));
}
bool getb(Config& c, const std::string& k, bool dflt) {
    std::string v = get(c, k, dflt ? "1" : "0");
    return v == "1" || v == "true" || v == "yes";
}

uint64_t fnv64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string file_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f.good()) fail("cannot hash missing file: " + path);
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0)
        h = fnv64(buf, static_cast<size_t>(f.gcount()), h);
    char out[32];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

// The manifest records the fully resolved config plus input hashes; the
// wall-time field is informational and excluded from the replay contract.
struct RunManifest {
    std::string command;
    Config config;
    std::map<std::string, std::string> inputs;
    std::string out_path;  // set by the handler; written once wall time is known
    double wall_s = 0;

    void write(const std::string& path) const {
        json j;
        j["version"] = kVersion;
        j["command"] = command;
        j["config"] = config;
        j["inputs"] = inputs;
        j["wall_s"] = wall_s;
        fs::create_directories(fs::path(path).parent_path());
        std::ofstream f(path);
        f << j.dump(2) << "\n";
    }
    static std::pair<std::string, Config> load(const std::string& path) {
        std::ifstream f(path);
        if (!f.good()) fail("manifest not readable: " + path);
        json j = json::parse(f);
        return {j.at("command").get<std::string>(),
                j.at("config").get<Config>()};
    }
};

// ---------------------------------------------------------------------------
// Checkpoint bundle
// ---------------------------------------------------------------------------

struct Nets {
    ParamStore<float> nc, nf, ng;
    ModelConfig cfg;
};

Nets load_nets(const std::string& ckpt_dir) {
    Nets n;
    for (const char* name : {"coarse.ckpt", "fine.ckpt", "fusion.ckpt"}) {
        std::string p = (fs::path(ckpt_dir) / name).string();
        if (!fs::exists(p)) fail("missing checkpoint: " + p);
    }
    auto [nc, mc] = load_checkpoint<float>((fs::path(ckpt_dir) / "coarse.ckpt").string());
    auto [nf, mf] = load_checkpoint<float>((fs::path(ckpt_dir) / "fine.ckpt").string());
    auto [ng, mg] = load_checkpoint<float>((fs::path(ckpt_dir) / "fusion.ckpt").string());
    (void)mc;
    (void)mf;
    n.nc = std::move(nc);
    n.nf = std::move(nf);
    n.ng = std::move(ng);
    n.cfg = mg.config;
    return n;
}

// ---------------------------------------------------------------------------
// Depth visualization: inverse-depth scaled, perceptually uniform colormap
// ---------------------------------------------------------------------------

void save_viz(const Tensor<float>& depth, double d_min, double d_max,
              const std::string& path) {
    int h = depth.dim(0), w = depth.dim(1);
    cv::Mat gray(h, w, CV_8UC1);
    double inv_lo = 1.0 / d_max, inv_hi = 1.0 / d_min;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double inv = 1.0 / std::clamp(static_cast<double>(depth.at(y, x)),
                                          d_min, d_max);
            double t = (inv - inv_lo) / (inv_hi - inv_lo);
            gray.at<uint8_t>(y, x) = cv::saturate_cast<uint8_t>(t * 255.0);
        }
    cv::Mat color;
    cv::applyColorMap(gray, color, cv::COLORMAP_VIRIDIS);
    if (!cv::imwrite(path, color)) fail("viz write failed: " + path);
}

void save_counts(const Tensor<int>& counts, const std::string& path) {
    cv::Mat m(counts.dim(0), counts.dim(1), CV_16UC1);
    for (int y = 0; y < counts.dim(0); ++y)
        for (int x = 0; x < counts.dim(1); ++x)
            m.at<uint16_t>(y, x) = static_cast<uint16_t>(counts.at(y, x));
    if (!cv::imwrite(path, m)) fail("counts write failed: " + path);
}

// ---------------------------------------------------------------------------
// Prediction methods shared by infer and eval
// ---------------------------------------------------------------------------

struct MethodOut {
    Tensor<float> canvas;
    Tensor<int> counts;
    // predicts one arbitrary aligned window, for cross-window consistency
    std::function<Tensor<float>(const Window&)> window_fn;
};

uint64_t plan_seed(uint64_t base, const std::string& id) {
    return base ^ fnv64(id.data(), id.size());
}

MethodOut run_method(const std::string& method, const InferenceEngine<float>& eng,
                     const InferenceEngine<float>::ImageState& st,
                     uint64_t seed, int n_random) {
    const ModelConfig& c = eng.config();
    MethodOut out;
    auto crop_canvas = [](const Tensor<float>& canvas) {
        return [&canvas](const Window& w) {
            return crop(canvas, w.y0, w.x0, w.h, w.w);
        };
    };
    if (method == "coarse") {
        out.canvas = st.d_c_full;
        out.counts = Tensor<int>({st.img_h, st.img_w});
        out.counts.fill(1);
        out.window_fn = crop_canvas(out.canvas);
    } else if (method == "fine") {
        FusionState<float> fsst(st.img_h, st.img_w);
        for (const Window& w : grid_windows(st.img_h, st.img_w, c.patch_h, c.patch_w))
            fsst.fold(w, eng.predict_fine_patch(st, w));
        out.canvas = std::move(fsst.canvas);
        out.counts = std::move(fsst.counts);
        out.window_fn = [&eng, &st](const Window& w) {
            return eng.predict_fine_patch(st, w);
        };
    } else if (method == "blend") {
        out.canvas = infer_baseline_blend(eng, st);
        out.counts = Tensor<int>({st.img_h, st.img_w});
        out.counts.fill(1);
        out.window_fn = crop_canvas(out.canvas);
    } else if (method == "p16") {
        FusionState<float> fsst = infer_stitched_with<float>(
            eng.predictor(st), st.img_h, st.img_w, c.patch_h, c.patch_w);
        out.canvas = std::move(fsst.canvas);
        out.counts = std::move(fsst.counts);
        out.window_fn = [&eng, &st](const Window& w) {
            return eng.predict_patch(st, w, nullptr);
        };
    } else if (method == "p49" || method == "r") {
        PatchPlan plan = make_plan(st.img_h, st.img_w, c.patch_h, c.patch_w, true,
                                   method == "r" ? n_random : 0, c.align(), seed);
        FusionState<float> fsst = infer_cai_with<float>(eng.predictor(st), plan);
        out.canvas = fsst.canvas;
        out.counts = std::move(fsst.counts);
        auto canvas = std::make_shared<Tensor<float>>(std::move(fsst.canvas));
        // cross-window consistency of this method: every window is predicted
        // under the method's guidance source, the assembled canvas
        out.window_fn = [&eng, &st, canvas](const Window& w) {
            Tensor<float> guide = crop(*canvas, w.y0, w.x0, w.h, w.w);
            return eng.predict_patch(st, w, &guide);
        };
    } else if (method == "p49_nocai" || method == "r_nocai") {
        PatchPlan plan = make_plan(st.img_h, st.img_w, c.patch_h, c.patch_w, true,
                                   method == "r_nocai" ? n_random : 0, c.align(), seed);
        FusionState<float> fsst(st.img_h, st.img_w);
        for (const Window& w : plan.windows)
            fsst.fold(w, eng.predict_patch(st, w, nullptr));
        out.canvas = std::move(fsst.canvas);
        out.counts = std::move(fsst.counts);
        out.window_fn = [&eng, &st](const Window& w) {
            return eng.predict_patch(st, w, nullptr);
        };
    } else {
        fail("unknown method: " + method);
    }
    return out;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) out.push_back(tok);
    return out;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

int cmd_gen_data(Config& cfg, RunManifest& man) {
    std::string out = require(cfg, "out");
    DatasetManifest m;
    m.root = out;
    m.seed = getu(cfg, "seed", 7);
    m.img_h = geti(cfg, "h", 512);
    m.img_w = geti(cfg, "w", 768);
    m.patch_h = geti(cfg, "patch-h", 128);
    m.patch_w = geti(cfg, "patch-w", 192);
    m.scene.d_min = getd(cfg, "d-min", 1.0);
    m.scene.d_max = getd(cfg, "d-max", 80.0);
    m.scene.k_min = geti(cfg, "k-min", 6);
    m.scene.k_max = geti(cfg, "k-max", 14);
    m.scene.min_step = getd(cfg, "min-step", 2.0);
    m.scene.patch_h = m.patch_h;
    m.scene.patch_w = m.patch_w;
    check_divisible(m.img_h, m.patch_h, "height");
    check_divisible(m.img_w, m.patch_w, "width");
    fs::create_directories(out);

    struct SplitSpec { const char* name; const char* key; int dflt; uint64_t off; };
    const SplitSpec specs[] = {{"train", "n-train", 200, 0},
                               {"val", "n-val", 20, 10000000},
                               {"test", "n-test", 0, 20000000}};
    int total = 0;
    for (const auto& sp : specs) {
        int n = geti(cfg, sp.key, sp.dflt);
        if (n <= 0) continue;
        m.splits[sp.name] = generate_split(m, sp.name, n, m.seed * 100000000ULL + sp.off);
        total += n;
    }
    m.save();
    std::cout << "wrote " << total << " samples under " << out << " (rejected "
              << m.n_rejected << ")\n";
    man.inputs["manifest.json"] = file_hash((fs::path(out) / "manifest.json").string());
    man.out_path = (fs::path(out) / "run.manifest.json").string();
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(Config& cfg, RunManifest& man) {
    std::string data_root = require(cfg, "data");
    std::string out = require(cfg, "out");
    DatasetManifest data = DatasetManifest::load(data_root);

    TrainConfig tc;
    tc.stage = get(cfg, "stage", "coarse");
    if (tc.stage != "coarse" && tc.stage != "fine" && tc.stage != "fusion")
        fail("unknown stage: " + tc.stage);
    tc.epochs = geti(cfg, "epochs", tc.stage == "fusion" ? 12 : 16);
    tc.lr = getd(cfg, "lr", 3e-4);
    tc.weight_decay = getd(cfg, "wd", 1e-2);
    tc.seed = getu(cfg, "seed", 0);
    tc.mu1 = getd(cfg, "mu1", 0.1);
    tc.mu2 = getd(cfg, "mu2", 0.1);
    tc.pair_min_overlap = getd(cfg, "pair-min-overlap", 0.25);
    tc.hflip = getb(cfg, "hflip", true);
    tc.pairs_per_step = geti(cfg, "pairs-per-step", 2);

    ModelConfig mc;
    mc.levels = geti(cfg, "levels", 4);
    mc.g2l_window = geti(cfg, "g2l-window", 4);
    mc.patch_h = data.patch_h;
    mc.patch_w = data.patch_w;
    mc.d_min = data.scene.d_min;
    mc.d_max = data.scene.d_max;

    man.inputs["dataset"] = file_hash((fs::path(data_root) / "manifest.json").string());
    fs::create_directories(out);

    if (tc.stage == "fusion") {
        std::string cp = get(cfg, "coarse-ckpt", (fs::path(out) / "coarse.ckpt").string());
        std::string fp = get(cfg, "fine-ckpt", (fs::path(out) / "fine.ckpt").string());
        if (!fs::exists(cp)) fail("fusion stage requires coarse checkpoint, missing: " + cp);
        if (!fs::exists(fp)) fail("fusion stage requires fine checkpoint, missing: " + fp);
        man.inputs["coarse.ckpt"] = file_hash(cp);
        man.inputs["fine.ckpt"] = file_hash(fp);
        auto [nc, metac] = load_checkpoint<float>(cp);
        auto [nf, metaf] = load_checkpoint<float>(fp);
        (void)metaf;
        train_fusion<float>(data, metac.config, tc, nc, nf, out);
    } else if (tc.stage == "coarse") {
        train_coarse<float>(data, mc, tc, out);
    } else {
        train_fine<float>(data, mc, tc, out);
    }
    std::cout << "stage " << tc.stage << " done: " << out << "/" << tc.stage
              << ".ckpt\n";
    man.out_path = (fs::path(out) / ("run." + tc.stage + ".manifest.json")).string();
    return 0;
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

int cmd_infer(Config& cfg, RunManifest& man) {
    std::string data_root = require(cfg, "data");
    std::string ckpt_dir = require(cfg, "ckpt-dir");
    std::string out = require(cfg, "out");
    std::string split = get(cfg, "split", "val");
    std::string mode = get(cfg, "mode", "p16");
    int n_random = geti(cfg, "r", 0);
    uint64_t seed = getu(cfg, "seed", 0);
    DepthFormat fmt = depth_format_from_name(get(cfg, "format", "rawf32"));
    bool viz = getb(cfg, "viz", false);
    bool counts = getb(cfg, "counts", false);
    if (mode == "r" && n_random <= 0) fail("mode r requires --r N with N > 0");

    DatasetManifest data = DatasetManifest::load(data_root);
    Nets nets = load_nets(ckpt_dir);
    check_divisible(data.img_h, nets.cfg.patch_h, "height");
    check_divisible(data.img_w, nets.cfg.patch_w, "width");
    InferenceEngine<float> eng(&nets.nc, &nets.nf, &nets.ng, nets.cfg);

    man.inputs["dataset"] = file_hash((fs::path(data_root) / "manifest.json").string());
    for (const char* n : {"coarse.ckpt", "fine.ckpt", "fusion.ckpt"})
        man.inputs[n] = file_hash((fs::path(ckpt_dir) / n).string());

    std::vector<std::string> ids;
    if (cfg.count("id")) ids = {cfg.at("id")};
    else {
        if (!data.splits.count(split)) fail("no such split: " + split);
        ids = data.splits.at(split);
    }
    fs::create_directories(out);
    for (const std::string& id : ids) {
        Sample s = data.load_sample(split, id);
        auto st = eng.prepare(s.image.cast<float>());
        MethodOut mo = run_method(mode, eng, st, plan_seed(seed, id), n_random);
        std::string base = (fs::path(out) / id).string();
        save_depth(mo.canvas, base + ".depth" + depth_format_ext(fmt), fmt);
        if (viz) save_viz(mo.canvas, nets.cfg.d_min, nets.cfg.d_max, base + ".viz.png");
        if (counts) save_counts(mo.counts, base + ".counts.png");
    }
    std::cout << "wrote " << ids.size() << " predictions under " << out << "\n";
    man.out_path = (fs::path(out) / "run.manifest.json").string();
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

EvalReport eval_one(const Tensor<float>& pred, const Tensor<float>& gt,
                    const Tensor<uint8_t>& mask, double cap_hi) {
    EvalReport r;
    r.cap_hi = cap_hi;
    StandardMetrics sm = standard_metrics(pred, gt, mask, r.cap_lo, cap_hi);
    r.delta1 = sm.delta1;
    r.rel = sm.rel;
    r.rms = sm.rms;
    r.silog = sm.silog;
    r.see = see(pred, gt, edge_mask(gt));
    r.n_pixels = gt.numel();
    return r;
}

int cmd_eval(Config& cfg, RunManifest& man) {
    std::string data_root = require(cfg, "data");
    std::string split = get(cfg, "split", "val");
    std::string out = require(cfg, "out");
    DatasetManifest data = DatasetManifest::load(data_root);
    if (!data.splits.count(split)) fail("no such split: " + split);
    const auto& ids = data.splits.at(split);
    man.inputs["dataset"] = file_hash((fs::path(data_root) / "manifest.json").string());
    fs::create_directories(out);
    double cap_hi = data.scene.d_max;

    std::ofstream csv(fs::path(out) / "results.csv");
    csv << EvalReport::csv_header() << "\n";
    json summary;

    if (cfg.count("pred")) {
        // stored-prediction mode: one depth file per id, any supported format
        std::string pred_dir = cfg.at("pred");
        std::vector<std::string> missing;
        for (const std::string& id : ids) {
            bool found = false;
            for (const char* ext : {".depth.raw", ".depth.pfm", ".depth.png"})
                if (fs::exists(fs::path(pred_dir) / (id + ext))) found = true;
            if (!found) missing.push_back(id);
        }
        if (!missing.empty()) {
            std::string msg = "missing predictions for ids:";
            for (const auto& id : missing) msg += " " + id;
            fail(msg);
        }
        EvalReport agg;
        for (const std::string& id : ids) {
            Sample s = data.load_sample(split, id);
            Tensor<float> pred;
            for (const char* ext : {".depth.raw", ".depth.pfm", ".depth.png"}) {
                fs::path p = fs::path(pred_dir) / (id + ext);
                if (fs::exists(p)) { pred = load_depth(p.string()); break; }
            }
            EvalReport r = eval_one(pred, s.depth, s.mask, cap_hi);
            csv << r.csv_row(id, "stored") << "\n";
            agg.delta1 += r.delta1; agg.rel += r.rel; agg.rms += r.rms;
            agg.silog += r.silog; agg.see += r.see;
        }
        double n = static_cast<double>(ids.size());
        summary["stored"] = {{"delta1", agg.delta1 / n}, {"rel", agg.rel / n},
                             {"rms", agg.rms / n},       {"silog", agg.silog / n},
                             {"see", agg.see / n},       {"ce", 0.0}};
    } else {
        std::string ckpt_dir = require(cfg, "ckpt-dir");
        Nets nets = load_nets(ckpt_dir);
        check_divisible(data.img_h, nets.cfg.patch_h, "height");
        check_divisible(data.img_w, nets.cfg.patch_w, "width");
        InferenceEngine<float> eng(&nets.nc, &nets.nf, &nets.ng, nets.cfg);
        for (const char* n : {"coarse.ckpt", "fine.ckpt", "fusion.ckpt"})
            man.inputs[n] = file_hash((fs::path(ckpt_dir) / n).string());
        std::vector<std::string> methods = split_csv(get(cfg, "methods", "p16"));
        bool with_ce = getb(cfg, "ce", true);
        int n_random = geti(cfg, "r", 0);
        uint64_t seed = getu(cfg, "seed", 0);

        std::map<std::string, EvalReport> agg;
        for (const std::string& id : ids) {
            Sample s = data.load_sample(split, id);
            Tensor<float> gt = s.depth;
            auto st = eng.prepare(s.image.cast<float>());
            for (const std::string& method : methods) {
                MethodOut mo = run_method(method, eng, st, plan_seed(seed, id),
                                          n_random);
                EvalReport r = eval_one(mo.canvas, gt, s.mask, cap_hi);
                if (with_ce)
                    r.ce = ce<float>(mo.window_fn, data.img_h, data.img_w,
                                     nets.cfg.patch_h, nets.cfg.patch_w);
                csv << r.csv_row(id, method) << "\n";
                EvalReport& a = agg[method];
                a.delta1 += r.delta1; a.rel += r.rel; a.rms += r.rms;
                a.silog += r.silog; a.see += r.see; a.ce += r.ce;
            }
            csv.flush();
        }
        double n = static_cast<double>(ids.size());
        for (const auto& [method, a] : agg)
            summary[method] = {{"delta1", a.delta1 / n}, {"rel", a.rel / n},
                               {"rms", a.rms / n},       {"silog", a.silog / n},
                               {"see", a.see / n},       {"ce", a.ce / n}};
    }
    {
        std::ofstream jf(fs::path(out) / "summary.json");
        jf << summary.dump(2) << "\n";
    }
    std::cout << summary.dump(2) << "\n";
    man.out_path = (fs::path(out) / "run.manifest.json").string();
    return 0;
}

// ---------------------------------------------------------------------------
// ablate: the scripted desk-scale ablation matrix
// ---------------------------------------------------------------------------

int run_command(const std::string& cmd, Config cfg);

int cmd_ablate(Config& cfg, RunManifest& man) {
    std::string out = require(cfg, "out");
    std::string step = get(cfg, "step", "all");
    fs::create_directories(out);
    auto sub = [&](const char* p) { return (fs::path(out) / p).string(); };
    auto passthrough = [&](Config& c, std::initializer_list<const char*> keys) {
        for (const char* k : keys)
            if (cfg.count(k)) c[k] = cfg.at(k);
    };
    auto want = [&](const char* s) { return step == "all" || step == s; };

    if (want("data")) {
        Config c{{"out", sub("data")}};
        passthrough(c, {"seed", "h", "w", "patch-h", "patch-w", "n-train", "n-val",
                        "d-min", "d-max", "k-min", "k-max", "min-step"});
        run_command("gen-data", c);
    }
    for (const char* stage : {"coarse", "fine"}) {
        if (!want(stage)) continue;
        Config c{{"data", sub("data")}, {"out", sub("ckpts")}, {"stage", stage}};
        passthrough(c, {"seed", "epochs", "lr", "wd", "levels", "g2l-window"});
        run_command("train", c);
    }
    if (want("fusion-cat") || want("fusion-nocat")) {
        for (const auto& [name, mu2] :
             std::vector<std::pair<std::string, std::string>>{{"fusion-cat", ""},
                                                              {"fusion-nocat", "0"}}) {
            if (!want(name.c_str())) continue;
            std::string dir = sub(name == "fusion-cat" ? "ckpts_cat" : "ckpts_nocat");
            fs::create_directories(dir);
            for (const char* base : {"coarse.ckpt", "fine.ckpt"})
                fs::copy_file(fs::path(sub("ckpts")) / base, fs::path(dir) / base,
                              fs::copy_options::overwrite_existing);
            Config c{{"data", sub("data")}, {"out", dir}, {"stage", "fusion"}};
            passthrough(c, {"seed", "fusion-epochs", "lr", "wd", "mu1"});
            if (c.count("fusion-epochs")) {
                c["epochs"] = c["fusion-epochs"];
                c.erase("fusion-epochs");
            }
            if (!mu2.empty()) c["mu2"] = mu2;
            run_command("train", c);
        }
    }
    struct EvalSpec { const char* step; const char* dir; const char* ckpts; };
    for (const EvalSpec& es : {EvalSpec{"eval-cat", "eval_cat", "ckpts_cat"},
                               EvalSpec{"eval-nocat", "eval_nocat", "ckpts_nocat"}}) {
        if (!want(es.step)) continue;
        Config c{{"data", sub("data")},
                 {"ckpt-dir", sub(es.ckpts)},
                 {"out", sub(es.dir)},
                 {"methods", "coarse,fine,blend,p16,p49,p49_nocai"}};
        passthrough(c, {"seed"});
        run_command("eval", c);
    }
    if (want("report")) {
        json report;
        for (const char* name : {"eval_cat", "eval_nocat"}) {
            std::ifstream f(fs::path(sub(name)) / "summary.json");
            if (!f.good()) fail("ablate report: missing " + std::string(name) +
                                "/summary.json");
            report[name] = json::parse(f);
        }
        auto g = [&](const char* ev, const char* m, const char* k) {
            return report.at(ev).at(m).at(k).get<double>();
        };
        report["checks"] = {
            {"fused_beats_parts",
             g("eval_cat", "p16", "rms") < std::min(g("eval_cat", "coarse", "rms"),
                                                    g("eval_cat", "fine", "rms"))},
            {"cat_reduces_ce",
             g("eval_cat", "p16", "ce") < g("eval_nocat", "p16", "ce")},
            {"cai_reduces_ce",
             g("eval_cat", "p49", "ce") < g("eval_cat", "p49_nocai", "ce")}};
        std::ofstream jf(fs::path(out) / "ablation.json");
        jf << report.dump(2) << "\n";
        std::cout << report["checks"].dump(2) << "\n";
    }
    man.out_path = (fs::path(out) / "run.manifest.json").string();
    return 0;
}

// ---------------------------------------------------------------------------
// driver
// ---------------------------------------------------------------------------

int run_command(const std::string& cmd, Config cfg) {
    RunManifest man;
    man.command = cmd;
    auto t0 = std::chrono::steady_clock::now();
    int rc;
    if (cmd == "gen-data") rc = cmd_gen_data(cfg, man);
    else if (cmd == "train") rc = cmd_train(cfg, man);
    else if (cmd == "infer") rc = cmd_infer(cfg, man);
    else if (cmd == "eval") rc = cmd_eval(cfg, man);
    else if (cmd == "ablate") rc = cmd_ablate(cfg, man);
    else fail("unknown command: " + cmd);
    auto t1 = std::chrono::steady_clock::now();
    man.wall_s = std::chrono::duration<double>(t1 - t0).count();
    man.config = cfg;  // handlers resolve defaults in place
    if (!man.out_path.empty()) man.write(man.out_path);
    return rc;
}

const char* kUsage =
    "usage: tiledepth <command> [--config FILE] [--from-manifest FILE] [--key value ...]\n"
    "commands:\n"
    "  gen-data  --out DIR [--n-train N --n-val N --n-test N --seed S --h H --w W\n"
    "            --patch-h H --patch-w W --d-min M --d-max M]\n"
    "  train     --data DIR --out DIR --stage coarse|fine|fusion [--epochs N --lr X\n"
    "            --wd X --seed S --mu1 X --mu2 X --coarse-ckpt F --fine-ckpt F]\n"
    "  infer     --data DIR --ckpt-dir DIR --out DIR [--mode coarse|fine|blend|p16|p49|r\n"
    "            --r N --seed S --split NAME --id ID --format rawf32|pfm|png16\n"
    "            --viz 1 --counts 1]\n"
    "  eval      --data DIR --out DIR (--ckpt-dir DIR [--methods a,b,c --ce 0|1]\n"
    "            | --pred DIR) [--split NAME --seed S]\n"
    "  ablate    --out DIR [--step all|data|coarse|fine|fusion-cat|fusion-nocat|\n"
    "            eval-cat|eval-nocat|report ... plus gen-data/train keys]\n"
    "env: PF_SEED overrides --seed for every command (ignored with --from-manifest).\n";

}  // namespace

int main(int argc, char** argv) {
    try {
        if (argc < 2) {
            std::cerr << kUsage;
            return 2;
        }
        std::string cmd = argv[1];
        if (cmd == "--help" || cmd == "-h" || cmd == "help") {
            std::cout << kUsage;
            return 0;
        }
        if (cmd == "--version") {
            std::cout << kVersion << "\n";
            return 0;
        }
        Config flags;
        std::string config_path, manifest_path;
        for (int i = 2; i < argc; ++i) {
            std::string a = argv[i];
            if (a.rfind("--", 0) != 0) fail("expected --key, got: " + a);
            if (i + 1 >= argc) fail("missing value for " + a);
            std::string v = argv[++i];
            std::string k = a.substr(2);
            if (k == "config") config_path = v;
            else if (k == "from-manifest") manifest_path = v;
            else flags[k] = v;
        }
        if (!manifest_path.empty()) {
            // replay: the stored config is final, no overrides apply
            auto [mcmd, mcfg] = RunManifest::load(manifest_path);
            if (mcmd != cmd)
                fail("manifest records command '" + mcmd + "', invoked as '" + cmd + "'");
            return run_command(cmd, std::move(mcfg));
        }
        Config cfg;
        if (!config_path.empty()) cfg = parse_config_file(config_path);
        for (auto& [k, v] : flags) cfg[k] = v;  // flags win over file
        if (const char* s = std::getenv("PF_SEED")) cfg["seed"] = s;
        return run_command(cmd, std::move(cfg));
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
