#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gshdr/data.hpp"
#include "gshdr/gradcheck.hpp"
#include "gshdr/imageio.hpp"
#include "gshdr/loss.hpp"
#include "gshdr/model.hpp"
#include "gshdr/ops.hpp"
#include "gshdr/ref.hpp"
#include "gshdr/trainer.hpp"

namespace fs = std::filesystem;
using namespace gshdr;

namespace {

std::string join4(const std::array<i64, 4>& a) {
    std::ostringstream os;
    for (int i = 0; i < 4; ++i) os << (i ? "," : "") << a[static_cast<std::size_t>(i)];
    return os.str();
}

void print_model_config(const ModelConfig& cfg) {
    std::cout << "config:\n"
              << "  base_width = " << cfg.base_width << "\n"
              << "  scale_count = " << cfg.scale_count << "\n"
              << "  unit_counts = " << join4(cfg.unit_counts) << "\n"
              << "  refinement_count = " << cfg.refinement_count << "\n"
              << "  heads = " << join4(cfg.heads) << "\n"
              << "  window = " << cfg.window << "\n"
              << "  gating = " << to_string(cfg.gating) << "\n"
              << "  gamma = " << cfg.gamma << "\n"
              << "  mu = " << cfg.mu << "\n";
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::array<i64, 4> parse_list4(const std::string& v, const std::string& key) {
    std::array<i64, 4> out{};
    std::istringstream ss(v);
    std::string tok;
    int n = 0;
    while (std::getline(ss, tok, ',')) {
        if (n >= 4) fail(ErrorKind::Config, key + ": expected 4 comma-separated values");
        try {
            out[static_cast<std::size_t>(n++)] = std::stoll(trim(tok));
        } catch (...) {
            fail(ErrorKind::Config, key + ": bad integer '" + tok + "'");
        }
    }
    if (n != 4) fail(ErrorKind::Config, key + ": expected 4 comma-separated values");
    return out;
}

ModelConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail(ErrorKind::Io, "cannot open " + path + " for reading");
    ModelConfig cfg;
    std::string line;
    while (std::getline(f, line)) {
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            fail(ErrorKind::Config, path + ": expected key = value, got '" + t + "'");
        const std::string key = trim(t.substr(0, eq));
        const std::string val = trim(t.substr(eq + 1));
        try {
            if (key == "base_width") cfg.base_width = std::stoll(val);
            else if (key == "scale_count") cfg.scale_count = std::stoll(val);
            else if (key == "unit_counts") cfg.unit_counts = parse_list4(val, key);
            else if (key == "refinement_count") cfg.refinement_count = std::stoll(val);
            else if (key == "heads") cfg.heads = parse_list4(val, key);
            else if (key == "window") cfg.window = std::stoll(val);
            else if (key == "gating") cfg.gating = gating_from_string(val);
            else if (key == "gamma") cfg.gamma = std::stod(val);
            else if (key == "mu") cfg.mu = std::stod(val);
            else fail(ErrorKind::Config, path + ": unknown key '" + key + "'");
        } catch (const Error&) {
            throw;
        } catch (...) {
            fail(ErrorKind::Config, path + ": bad value '" + val + "' for " + key);
        }
    }
    validate(cfg);
    return cfg;
}

void parse_size(const std::string& s, i64& h, i64& w) {
    long long hh = 0, ww = 0;
    char x = 0;
    std::istringstream ss(s);
    if (!(ss >> hh >> x >> ww) || (x != 'x' && x != 'X') || hh < 1 || ww < 1)
        fail(ErrorKind::Config, "bad --size '" + s + "', expected HxW");
    h = hh;
    w = ww;
}

// ---- synth ------------------------------------------------------------------

struct SynthArgs {
    std::string out;
    i64 count = 4;
    std::string size = "128x128";
    std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
    i64 h = 0, w = 0;
    parse_size(a.size, h, w);
    std::cout << "config:\n  out = " << a.out << "\n  count = " << a.count
              << "\n  size = " << h << "x" << w << "\n  seed = " << a.seed << "\n";
    std::error_code ec;
    fs::create_directories(a.out, ec);
    if (ec) fail(ErrorKind::Io, "cannot create directory " + a.out + ": " + ec.message());
    for (i64 i = 0; i < a.count; ++i) {
        const std::uint64_t si =
            a.seed ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(i + 1));
        data::Sample s = data::synth_scene(si, h, w);
        const std::string stem = "scene" + std::to_string(i);
        const char* names[3] = {"_short.ppm", "_mid.ppm", "_long.ppm"};
        data::StackManifest m;
        for (int k = 0; k < 3; ++k) {
            m.paths[static_cast<std::size_t>(k)] = stem + names[k];
            io::write_ppm(a.out + "/" + stem + names[k],
                          s.stack.ldr[static_cast<std::size_t>(k)]);
        }
        m.stops = {-2.0, 0.0, 2.0};
        m.gt_path = stem + "_gt.pfm";
        io::write_pfm(a.out + "/" + m.gt_path, s.gt);
        data::write_manifest(a.out + "/" + stem + ".txt", m);
    }
    std::cout << "wrote " << a.count << " samples to " << a.out << "\n";
    return 0;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string config;
    std::string gating;
    std::string out = "train.ckpt";
    std::string log;
    std::string resume;
    i64 epochs = 40;
    i64 batch = 4;
    i64 patch = 64;
    i64 stride = 64;
    i64 max_steps = 0;
    double lr = 1e-4;
    double lr_dropped = 1e-5;
    i64 lr_drop_epoch = 20;
    std::uint64_t seed = 0;
    bool no_augment = false;
};

std::vector<data::Sample> load_dataset(const std::string& dir, double gamma) {
    std::vector<std::string> manifests;
    std::error_code ec;
    for (const auto& e : fs::directory_iterator(dir, ec)) {
        if (e.path().extension() == ".txt") manifests.push_back(e.path().string());
    }
    if (ec) fail(ErrorKind::Io, "cannot list directory " + dir + ": " + ec.message());
    std::sort(manifests.begin(), manifests.end());
    std::vector<data::Sample> out;
    for (const auto& m : manifests) out.push_back(data::load_sample(m, gamma));
    if (out.empty()) fail(ErrorKind::Value, "no stack manifests (*.txt) found in " + dir);
    return out;
}

int run_train(const TrainArgs& a) {
    ModelConfig cfg = a.config.empty() ? ModelConfig::full() : load_config_file(a.config);
    if (!a.gating.empty()) cfg.gating = gating_from_string(a.gating);

    ModelParams<float> params;
    TrainState<float> state;
    bool resuming = false;
    if (!a.resume.empty()) {
        Checkpoint ck = load_checkpoint(a.resume);
        cfg = ck.cfg;
        params = std::move(ck.params);
        state = std::move(ck.state);
        resuming = true;
    }
    validate(cfg);
    print_model_config(cfg);

    std::vector<data::Sample> dataset = load_dataset(a.data, cfg.gamma);
    std::cout << "samples = " << dataset.size() << "\n";

    if (!resuming) {
        params = init_parameters<float>(cfg, a.seed);
        state.seed = a.seed;
    }
    std::cout << "parameters = " << parameter_set(params, cfg).total_elements() << "\n";

    TrainOptions opts;
    opts.epochs = a.epochs;
    opts.batch = a.batch;
    opts.seed = a.seed;
    opts.lr_initial = a.lr;
    opts.lr_dropped = a.lr_dropped;
    opts.lr_drop_epoch = a.lr_drop_epoch;
    opts.patch = a.patch;
    opts.stride = a.stride;
    opts.augment = !a.no_augment;
    opts.checkpoint_path = a.out;
    opts.log_path = a.log;
    opts.max_steps = a.max_steps;

    TrainResult res = train(dataset, cfg, opts, std::move(params), std::move(state));
    std::cout << "checkpoint = " << a.out << " (steps " << res.state.step << ")\n";
    return 0;
}

// ---- infer ------------------------------------------------------------------

struct InferArgs {
    std::string ckpt, stack, out, out_tm;
};

int run_infer(const InferArgs& a) {
    Checkpoint ck = load_checkpoint(a.ckpt);
    print_model_config(ck.cfg);
    data::Sample s = data::load_sample(a.stack, ck.cfg.gamma);
    auto [x, x2] = data::build_input(s.stack);
    Tensor<float> pred = hdr_forward(x, x2, ck.params, ck.cfg);
    const i64 h = pred.dim(2), w = pred.dim(3);
    io::Image img(Shape{3, h, w});
    std::copy(pred.data(), pred.data() + pred.numel(), img.data());
    io::write_pfm(a.out, img);
    std::cout << "wrote " << a.out << " (" << w << "x" << h << ")\n";
    if (!a.out_tm.empty()) {
        io::Image tm(Shape{3, h, w});
        const float inv_ln = 1.0f / std::log1p(static_cast<float>(ck.cfg.mu));
        for (i64 i = 0; i < img.numel(); ++i) {
            const float v = std::clamp(img[i], 0.0f, 1.0f);
            tm[i] = std::log1p(static_cast<float>(ck.cfg.mu) * v) * inv_ln;
        }
        io::write_ppm(a.out_tm, tm);
        std::cout << "wrote " << a.out_tm << "\n";
    }
    return 0;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
    std::string pred, gt;
    double gt_scale = 1.0;
    double mu = 5000.0;
};

int run_eval(const EvalArgs& a) {
    std::cout << "config:\n  pred = " << a.pred << "\n  gt = " << a.gt
              << "\n  gt_scale = " << a.gt_scale << "\n  mu = " << a.mu << "\n";
    io::Image pred = io::read_image(a.pred);
    io::Image gt = io::read_image(a.gt);
    if (pred.shape() != gt.shape())
        fail(ErrorKind::Shape, "eval: prediction " + pred.shape().str() +
                                   " does not match ground truth " + gt.shape().str());
    if (a.gt_scale != 1.0) {
        const float inv = static_cast<float>(1.0 / a.gt_scale);
        for (i64 i = 0; i < gt.numel(); ++i) gt[i] = std::clamp(gt[i] * inv, 0.0f, 1.0f);
    }
    const i64 h = pred.dim(1), w = pred.dim(2);
    Tensor<float> tp(Shape{1, 3, h, w}), tg(Shape{1, 3, h, w});
    std::copy(pred.data(), pred.data() + pred.numel(), tp.data());
    std::copy(gt.data(), gt.data() + gt.numel(), tg.data());
    const MetricReport r = compute_metrics(tp, tg, a.mu);
    std::printf("psnr_mu=%.6f\n", r.psnr_mu);
    std::printf("psnr_l=%.6f\n", r.psnr_l);
    std::printf("ssim_mu=%.6f\n", r.ssim_mu);
    std::printf("ssim_l=%.6f\n", r.ssim_l);
    std::printf("%.6f,%.6f,%.6f,%.6f\n", r.psnr_mu, r.psnr_l, r.ssim_mu, r.ssim_l);
    return 0;
}

// ---- gradcheck / selftest ---------------------------------------------------

struct GradArgs {
    std::uint64_t seed = 0;
    i64 samples = 2;
    bool exhaustive = false;
};

int run_gradcheck(const GradArgs& a) {
    print_model_config(ModelConfig::tiny());
    GradCheckOptions opts;
    opts.seed = a.seed;
    opts.samples_per_tensor = a.samples;
    opts.exhaustive = a.exhaustive;
    const GradCheckReport rep = gradcheck_model(opts, std::cout);
    return rep.pass ? 0 : 1;
}

int run_selftest() {
    print_model_config(ModelConfig::tiny());
    int failures = 0;
    auto check = [&](const char* what, bool ok) {
        std::cout << "selftest: " << what << " ... " << (ok ? "ok" : "FAIL") << "\n";
        if (!ok) ++failures;
    };
    std::mt19937_64 rng(7);
    auto frand = [&]() { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };

    {  // autodiff on a small closed-form expression: d/dx mean(x*x) = 2x/n
        Tensor<double> x(Shape{8});
        for (i64 i = 0; i < 8; ++i) x[i] = frand() * 2 - 1;
        x.set_requires_grad(true);
        Tape<double> tape;
        Tape<double>::Scope scope(tape);
        Tensor<double> y = ops::mean_all(ops::mul(x, x));
        tape.backward(y);
        double err = 0;
        for (i64 i = 0; i < 8; ++i) err = std::max(err, std::fabs(x.grad()[i] - 2 * x[i] / 8));
        check("tape gradient of mean(x*x)", err < 1e-12);
    }
    {  // full 3x3 convolution against the serial reference
        Tensor<float> x(Shape{1, 4, 9, 9}), wgt(Shape{3, 4, 3, 3}), b(Shape{3});
        for (i64 i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(frand() - 0.5);
        for (i64 i = 0; i < wgt.numel(); ++i) wgt[i] = static_cast<float>(frand() - 0.5);
        for (i64 i = 0; i < 3; ++i) b[i] = static_cast<float>(frand() - 0.5);
        Tensor<float> y = ops::conv2d(x, wgt, b, ops::ConvKind::Full3x3);
        Tensor<float> yr = ref::conv2d_full3x3_reflect(x, wgt, b);
        float err = 0;
        for (i64 i = 0; i < y.numel(); ++i) err = std::max(err, std::fabs(y[i] - yr[i]));
        check("conv3x3 vs serial reference", err < 1e-5f);
    }
    {  // windowed attention against the dense affinity oracle
        const i64 c = 4, heads = 2, m = 4;
        Tensor<double> x(Shape{1, c, 8, 8});
        for (i64 i = 0; i < x.numel(); ++i) x[i] = frand() - 0.5;
        AttentionParams<double> p;
        for (Tensor<double>* t : {&p.wq, &p.wk, &p.wv, &p.wo}) {
            *t = Tensor<double>(Shape{c, c});
            for (i64 i = 0; i < c * c; ++i) (*t)[i] = frand() - 0.5;
        }
        for (Tensor<double>* t : {&p.bq, &p.bk, &p.bv, &p.bo}) {
            *t = Tensor<double>(Shape{c});
            for (i64 i = 0; i < c; ++i) (*t)[i] = frand() - 0.5;
        }
        p.bias_table = Tensor<double>(Shape{heads, (2 * m - 1) * (2 * m - 1)});
        for (i64 i = 0; i < p.bias_table.numel(); ++i) p.bias_table[i] = frand() - 0.5;
        double err = 0;
        for (i64 shift : {i64(0), m / 2}) {
            Tensor<double> y = window_attention(x, p, m, heads, shift);
            Tensor<double> yd = ref::window_attention_dense(x, p.wq, p.bq, p.wk, p.bk, p.wv,
                                                            p.bv, p.wo, p.bo, p.bias_table, m,
                                                            heads, shift);
            for (i64 i = 0; i < y.numel(); ++i) err = std::max(err, std::fabs(y[i] - yd[i]));
        }
        check("window attention vs dense oracle", err < 1e-6);
    }
    {  // pixel shuffle round trip
        Tensor<float> x(Shape{2, 8, 6, 6});
        for (i64 i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(frand());
        Tensor<float> y = ops::pixel_shuffle(ops::pixel_unshuffle(x, 2), 2);
        bool same = true;
        for (i64 i = 0; i < x.numel(); ++i) same = same && x[i] == y[i];
        check("pixel unshuffle/shuffle identity", same);
    }
    {  // range compression endpoints and inverse
        Tensor<double> x(Shape{3});
        x[0] = 0.0; x[1] = 0.5; x[2] = 1.0;
        Tensor<double> y = ops::mu_law(x, 5000.0, true);
        bool ok = y[0] == 0.0 && y[2] == 1.0;
        ok = ok && std::fabs(y[1] - std::log1p(2500.0) / std::log1p(5000.0)) < 1e-12;
        for (i64 i = 0; i < 3; ++i)
            ok = ok && std::fabs(ref::mu_law_inverse_scalar(y[i], 5000.0) - x[i]) < 1e-6;
        check("mu-law endpoints and inverse", ok);
    }
    {  // ssim: identity and the zero-variance closed form
        Tensor<double> a = Tensor<double>::full(Shape{1, 1, 16, 16}, 0.5);
        Tensor<double> b = Tensor<double>::full(Shape{1, 1, 16, 16}, 0.25);
        const double s_ab = ssim(a, b).item();
        const double expect = (2 * 0.5 * 0.25 + 1e-4) / (0.25 + 0.0625 + 1e-4);
        bool ok = std::fabs(ssim(a, a).item() - 1.0) < 1e-9;
        ok = ok && std::fabs(s_ab - expect) < 1e-9;
        check("ssim identity and constant-image value", ok);
    }
    {  // psnr scalar anchor: uniform squared error 0.01 -> 20 dB
        Tensor<double> a(Shape{1, 3, 4, 4}), b(Shape{1, 3, 4, 4});
        for (i64 i = 0; i < a.numel(); ++i) {
            a[i] = 0.5;
            b[i] = 0.6;
        }
        check("psnr of uniform 0.1 error", std::fabs(psnr(a, b) - 20.0) < 1e-9);
    }
    {  // synthetic scene determinism and exposure round trip
        data::Sample s1 = data::synth_scene(11, 48, 48);
        data::Sample s2 = data::synth_scene(11, 48, 48);
        bool same = true;
        for (int k = 0; k < 3; ++k)
            for (i64 i = 0; i < s1.stack.ldr[0].numel(); ++i)
                same = same && s1.stack.ldr[static_cast<std::size_t>(k)][i] ==
                                   s2.stack.ldr[static_cast<std::size_t>(k)][i];
        Tensor<float> moved;
        data::Sample s3 = data::synth_scene_debug(11, 48, 48, moved);
        const io::Image& mid = s3.stack.ldr[1];
        Tensor<float> h2 = data::gamma_normalize(mid, 1.0, 2.2);
        float err = 0;
        for (i64 i = 0; i < h2.numel(); ++i) {
            const i64 pix = i % (48 * 48);
            if (mid[i] > 0.05f && mid[i] < 0.95f && moved[pix] == 0.0f)
                err = std::max(err, std::fabs(h2[i] - s3.gt[i]));
        }
        check("synth determinism and exposure round trip", same && err <= 2.0f / 255.0f);
    }
    {  // checkpoint byte-identical round trip
        const std::string path = (fs::temp_directory_path() / "gshdr_selftest.ckpt").string();
        ModelConfig cfg = ModelConfig::tiny();
        ModelParams<float> mp = init_parameters<float>(cfg, 3);
        TrainState<float> st;
        st.seed = 3;
        save_checkpoint(path, mp, st, cfg);
        Checkpoint ck = load_checkpoint(path);
        const std::string path2 = path + "2";
        save_checkpoint(path2, ck.params, ck.state, ck.cfg);
        std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
        std::stringstream b1, b2;
        b1 << f1.rdbuf();
        b2 << f2.rdbuf();
        check("checkpoint save/load/save byte identity", b1.str() == b2.str() && !b1.str().empty());
        fs::remove(path);
        fs::remove(path2);
    }
    std::cout << (failures ? "selftest FAILED\n" : "selftest passed\n");
    return failures ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gated window-attention HDR fusion tool"};
    app.require_subcommand(1);

    SynthArgs sa;
    CLI::App* synth = app.add_subcommand("synth", "generate synthetic training scenes");
    synth->add_option("--out", sa.out, "output directory")->required();
    synth->add_option("--count", sa.count, "number of scenes");
    synth->add_option("--size", sa.size, "scene size HxW");
    synth->add_option("--seed", sa.seed, "base RNG seed");

    TrainArgs ta;
    CLI::App* tr = app.add_subcommand("train", "train a model");
    tr->add_option("--data", ta.data, "directory of stack manifests")->required();
    tr->add_option("--config", ta.config, "model config file (key = value)");
    tr->add_option("--gating", ta.gating, "gating mode: all|first|none");
    tr->add_option("--epochs", ta.epochs, "epoch budget");
    tr->add_option("--batch", ta.batch, "batch size");
    tr->add_option("--patch", ta.patch, "training patch size");
    tr->add_option("--stride", ta.stride, "patch grid stride");
    tr->add_option("--seed", ta.seed, "RNG seed");
    tr->add_option("--lr", ta.lr, "initial learning rate");
    tr->add_option("--lr-dropped", ta.lr_dropped, "learning rate after the drop");
    tr->add_option("--lr-drop-epoch", ta.lr_drop_epoch, "epoch of the learning-rate drop");
    tr->add_option("--max-steps", ta.max_steps, "stop after this many optimizer steps");
    tr->add_option("--out", ta.out, "checkpoint path");
    tr->add_option("--log", ta.log, "per-epoch CSV log path");
    tr->add_option("--resume", ta.resume, "checkpoint to resume from");
    tr->add_flag("--no-augment", ta.no_augment, "disable flip/rotation augmentation");

    InferArgs ia;
    CLI::App* inf = app.add_subcommand("infer", "fuse one exposure stack");
    inf->add_option("--ckpt", ia.ckpt, "checkpoint path")->required();
    inf->add_option("--stack", ia.stack, "stack manifest path")->required();
    inf->add_option("--out", ia.out, "output HDR (PFM)")->required();
    inf->add_option("--out-tm", ia.out_tm, "optional tone-mapped preview (PPM)");

    EvalArgs ea;
    CLI::App* ev = app.add_subcommand("eval", "compare a prediction against ground truth");
    ev->add_option("--pred", ea.pred, "predicted image")->required();
    ev->add_option("--gt", ea.gt, "ground-truth image")->required();
    ev->add_option("--gt-scale", ea.gt_scale, "divide GT by this before comparing");
    ev->add_option("--mu", ea.mu, "tone-mapping strength");

    GradArgs ga;
    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
    gc->add_option("--seed", ga.seed, "RNG seed");
    gc->add_option("--samples", ga.samples, "probes per parameter tensor");
    gc->add_flag("--exhaustive", ga.exhaustive, "probe every element (slow)");

    CLI::App* st = app.add_subcommand("selftest", "run built-in oracle checks");

    CLI11_PARSE(app, argc, argv);
    try {
        if (synth->parsed()) return run_synth(sa);
        if (tr->parsed()) return run_train(ta);
        if (inf->parsed()) return run_infer(ia);
        if (ev->parsed()) return run_eval(ea);
        if (gc->parsed()) return run_gradcheck(ga);
        if (st->parsed()) return run_selftest();
    } catch (const Error& e) {
        std::cerr << "error[" << to_string(e.kind()) << "]: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error[internal]: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
