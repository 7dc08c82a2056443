#include "gshdr/model.hpp"

#include <cmath>
#include <random>
#include <string>

#include "gshdr/ops.hpp"

namespace gshdr {

const char* to_string(GatingMode m) {
    switch (m) {
        case GatingMode::All: return "all";
        case GatingMode::First: return "first";
        case GatingMode::None: return "none";
    }
    return "unknown";
}

GatingMode gating_from_string(const std::string& s) {
    if (s == "all") return GatingMode::All;
    if (s == "first") return GatingMode::First;
    if (s == "none") return GatingMode::None;
    fail(ErrorKind::Config, "unknown gating mode '" + s + "' (expected all|first|none)");
}

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
    ModelConfig c;
    c.base_width = 16;
    return c;
}

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.base_width = 8;
    c.unit_counts = {1, 1, 1, 1};
    c.refinement_count = 1;
    c.heads = {1, 1, 1, 1};
    c.window = 4;
    return c;
}

void validate(const ModelConfig& cfg) {
    if (cfg.scale_count != 4)
        fail(ErrorKind::Config, "scale_count must be 4, got " + std::to_string(cfg.scale_count));
    if (cfg.base_width < 1) fail(ErrorKind::Config, "base_width must be positive");
    if (cfg.window < 1) fail(ErrorKind::Config, "window must be positive");
    if (cfg.refinement_count < 0) fail(ErrorKind::Config, "refinement_count must be >= 0");
    if (!(cfg.gamma > 0)) fail(ErrorKind::Config, "gamma must be positive");
    if (!(cfg.mu > 0)) fail(ErrorKind::Config, "mu must be positive");
    for (int s = 0; s < 4; ++s) {
        if (cfg.unit_counts[static_cast<std::size_t>(s)] < 0)
            fail(ErrorKind::Config, "unit count at scale " + std::to_string(s + 1) +
                                        " must be >= 0");
        const i64 h = cfg.heads[static_cast<std::size_t>(s)];
        const i64 w = cfg.width_at(s);
        if (h < 1)
            fail(ErrorKind::Config, "head count at scale " + std::to_string(s + 1) +
                                        " must be >= 1");
        if (w % h != 0)
            fail(ErrorKind::Config, "head count " + std::to_string(h) +
                                        " does not divide channel width " + std::to_string(w) +
                                        " at scale " + std::to_string(s + 1));
        if (w / h < 2)
            fail(ErrorKind::Config, "per-head width " + std::to_string(w / h) + " at scale " +
                                        std::to_string(s + 1) +
                                        " is below the minimum of 2; increase base_width");
    }
}

// ---- parameter registry -----------------------------------------------------

template <typename T>
void ParameterSet<T>::add(const std::string& name, Tensor<T> t) {
    if (index_.count(name)) fail(ErrorKind::State, "duplicate parameter name " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(t));
}

template <typename T>
bool ParameterSet<T>::contains(const std::string& name) const {
    return index_.count(name) != 0;
}

template <typename T>
Tensor<T>& ParameterSet<T>::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorKind::State, "unknown parameter name " + name);
    return items_[it->second].second;
}

template <typename T>
const Tensor<T>& ParameterSet<T>::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorKind::State, "unknown parameter name " + name);
    return items_[it->second].second;
}

template <typename T>
i64 ParameterSet<T>::total_elements() const {
    i64 n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
}

template <typename T>
void ParameterSet<T>::zero_grads() {
    for (auto& [name, t] : items_) {
        t.ensure_grad();
        t.zero_grad();
    }
}

template <typename T>
void ParameterSet<T>::set_requires_grad(bool v) {
    for (auto& [name, t] : items_) t.set_requires_grad(v);
}

template class ParameterSet<float>;
template class ParameterSet<double>;

// ---- structure traversal ----------------------------------------------------

namespace {

enum class Init { Zero, One, Proj, Conv, ResidualConv };

bool gated_block(const ModelConfig& cfg, bool first_encoder_block) {
    switch (cfg.gating) {
        case GatingMode::All: return true;
        case GatingMode::First: return first_encoder_block;
        case GatingMode::None: return false;
    }
    return true;
}

// Pre-sizes the nested vectors and stamps each feed-forward sub-layer's
// mode so a traversal can visit every tensor slot.
template <typename T>
void shape_params(ModelParams<T>& p, const ModelConfig& cfg) {
    const auto mode_for = [&](bool first_enc) {
        return gated_block(cfg, first_enc) ? FfnMode::Gated : FfnMode::Plain;
    };
    p.enc.resize(4);
    p.dec.resize(3);
    p.down.resize(3);
    p.up.resize(3);
    p.fuse_w.resize(3);
    p.fuse_b.resize(3);
    for (int s = 0; s < 4; ++s) {
        p.enc[s].units.resize(static_cast<std::size_t>(cfg.unit_counts[s]));
        for (auto& u : p.enc[s].units) u.ffn1.mode = u.ffn2.mode = mode_for(s == 0);
    }
    for (int s = 0; s < 3; ++s) {
        p.dec[s].units.resize(static_cast<std::size_t>(cfg.unit_counts[s]));
        for (auto& u : p.dec[s].units) u.ffn1.mode = u.ffn2.mode = mode_for(false);
    }
    p.refine.units.resize(static_cast<std::size_t>(cfg.refinement_count));
    for (auto& u : p.refine.units) u.ffn1.mode = u.ffn2.mode = mode_for(false);
}

// Visits every parameter tensor in a fixed order, reporting its canonical
// name, shape and initialization family.
template <typename T, typename F>
void visit_params(ModelParams<T>& p, const ModelConfig& cfg, F&& f) {
    const i64 m = cfg.window, span = 2 * m - 1;

    auto attn = [&](AttentionParams<T>& a, const std::string& pre, i64 wd, i64 h) {
        f(pre + ".wq", a.wq, Shape{wd, wd}, Init::Proj);
        f(pre + ".bq", a.bq, Shape{wd}, Init::Zero);
        f(pre + ".wk", a.wk, Shape{wd, wd}, Init::Proj);
        f(pre + ".bk", a.bk, Shape{wd}, Init::Zero);
        f(pre + ".wv", a.wv, Shape{wd, wd}, Init::Proj);
        f(pre + ".bv", a.bv, Shape{wd}, Init::Zero);
        f(pre + ".wo", a.wo, Shape{wd, wd}, Init::Proj);
        f(pre + ".bo", a.bo, Shape{wd}, Init::Zero);
        f(pre + ".table", a.bias_table, Shape{h, span * span}, Init::Proj);
    };
    auto ffn = [&](FeedForwardParams<T>& q, const std::string& pre, i64 wd) {
        const i64 hidden = kFfnExpansion * wd;
        f(pre + ".norm.g", q.norm_gamma, Shape{wd}, Init::One);
        f(pre + ".norm.b", q.norm_beta, Shape{wd}, Init::Zero);
        if (q.mode == FfnMode::Gated) {
            f(pre + ".a_pw.w", q.a_pw_w, Shape{hidden, wd, 1, 1}, Init::Conv);
            f(pre + ".a_pw.b", q.a_pw_b, Shape{hidden}, Init::Zero);
            f(pre + ".a_dw.w", q.a_dw_w, Shape{hidden, 1, 3, 3}, Init::Conv);
            f(pre + ".a_dw.b", q.a_dw_b, Shape{hidden}, Init::Zero);
            f(pre + ".b_pw.w", q.b_pw_w, Shape{hidden, wd, 1, 1}, Init::Conv);
            f(pre + ".b_pw.b", q.b_pw_b, Shape{hidden}, Init::Zero);
            f(pre + ".b_dw.w", q.b_dw_w, Shape{hidden, 1, 3, 3}, Init::Conv);
            f(pre + ".b_dw.b", q.b_dw_b, Shape{hidden}, Init::Zero);
        } else {
            f(pre + ".expand.w", q.a_pw_w, Shape{hidden, wd, 1, 1}, Init::Conv);
            f(pre + ".expand.b", q.a_pw_b, Shape{hidden}, Init::Zero);
        }
        f(pre + ".out.w", q.out_w, Shape{wd, hidden, 1, 1}, Init::ResidualConv);
        f(pre + ".out.b", q.out_b, Shape{wd}, Init::Zero);
    };
    auto unit = [&](UnitParams<T>& u, const std::string& pre, i64 wd, i64 h) {
        f(pre + ".norm1.g", u.norm1_gamma, Shape{wd}, Init::One);
        f(pre + ".norm1.b", u.norm1_beta, Shape{wd}, Init::Zero);
        attn(u.attn1, pre + ".attn1", wd, h);
        ffn(u.ffn1, pre + ".ffn1", wd);
        f(pre + ".norm2.g", u.norm2_gamma, Shape{wd}, Init::One);
        f(pre + ".norm2.b", u.norm2_beta, Shape{wd}, Init::Zero);
        attn(u.attn2, pre + ".attn2", wd, h);
        ffn(u.ffn2, pre + ".ffn2", wd);
    };
    auto block = [&](BlockParams<T>& b, const std::string& pre, i64 wd, i64 h) {
        for (std::size_t i = 0; i < b.units.size(); ++i)
            unit(b.units[i], pre + ".u" + std::to_string(i + 1), wd, h);
        f(pre + ".conv.w", b.conv_w, Shape{wd, wd, 3, 3}, Init::ResidualConv);
        f(pre + ".conv.b", b.conv_b, Shape{wd}, Init::Zero);
    };

    const i64 c0 = cfg.base_width;
    f("embed.w", p.embed_w, Shape{c0, 18, 3, 3}, Init::Conv);
    f("embed.b", p.embed_b, Shape{c0}, Init::Zero);
    f("shallow.w", p.shallow_w, Shape{c0, 6, 3, 3}, Init::Conv);
    f("shallow.b", p.shallow_b, Shape{c0}, Init::Zero);
    for (int s = 0; s < 4; ++s)
        block(p.enc[s], "enc" + std::to_string(s + 1), cfg.width_at(s), cfg.heads[s]);
    for (int s = 0; s < 3; ++s) {
        const i64 wd = cfg.width_at(s);
        f("down" + std::to_string(s + 1) + ".w", p.down[s].w, Shape{2 * wd, 4 * wd, 1, 1},
          Init::Conv);
        f("down" + std::to_string(s + 1) + ".b", p.down[s].b, Shape{2 * wd}, Init::Zero);
    }
    for (int s = 0; s < 3; ++s) {
        const i64 wu = cfg.width_at(s + 1);
        f("up" + std::to_string(s + 1) + ".w", p.up[s].w, Shape{2 * wu, wu, 1, 1}, Init::Conv);
        f("up" + std::to_string(s + 1) + ".b", p.up[s].b, Shape{2 * wu}, Init::Zero);
    }
    for (int s = 0; s < 3; ++s) {
        const i64 wd = cfg.width_at(s);
        f("fuse" + std::to_string(s + 1) + ".w", p.fuse_w[s], Shape{wd, 2 * wd, 1, 1},
          Init::Conv);
        f("fuse" + std::to_string(s + 1) + ".b", p.fuse_b[s], Shape{wd}, Init::Zero);
    }
    for (int s = 0; s < 3; ++s)
        block(p.dec[s], "dec" + std::to_string(s + 1), cfg.width_at(s), cfg.heads[s]);
    block(p.refine, "refine", c0, cfg.heads[0]);
    f("head.w", p.head_w, Shape{3, c0, 3, 3}, Init::Conv);
    f("head.b", p.head_b, Shape{3}, Init::Zero);
}

// Deterministic scalar source for initialization: Box-Muller normals from a
// single mt19937_64 stream, consumed in visit order.
class InitRng {
public:
    explicit InitRng(std::uint64_t seed) : eng_(seed) {}

    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    // Normal with std 0.02, redrawn until within two standard deviations.
    double trunc_normal() {
        double z = normal();
        while (std::fabs(z) > 2.0) z = normal();
        return 0.02 * z;
    }

private:
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
    static constexpr double kPi = 3.14159265358979323846;
    std::mt19937_64 eng_;
};

}  // namespace

template <typename T>
ModelParams<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    ModelParams<T> p;
    shape_params(p, cfg);
    InitRng rng(seed);
    // Convolutions that write into the residual stream (feed-forward output
    // projections and the trailing conv of every block) start smaller by
    // 1/sqrt(2 * blocks). Without this the stream variance roughly doubles
    // per block and the head logits saturate the f32 sigmoid at init.
    const double res_blocks = static_cast<double>(2 * cfg.scale_count);
    const double res_gain = 1.0 / std::sqrt(2.0 * res_blocks);
    visit_params(p, cfg, [&](const std::string&, Tensor<T>& t, const Shape& shape, Init kind) {
        t = Tensor<T>(shape);
        const auto fill_conv = [&](double gain) {
            // fan-in = product of all dims but the first (output) one
            i64 fan = 1;
            for (int d = 1; d < shape.rank(); ++d) fan *= shape[d];
            const double std_dev = gain * std::sqrt(1.0 / static_cast<double>(fan));
            for (i64 i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(std_dev * rng.normal());
        };
        switch (kind) {
            case Init::Zero: break;
            case Init::One:
                for (i64 i = 0; i < t.numel(); ++i) t[i] = T(1);
                break;
            case Init::Proj:
                for (i64 i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.trunc_normal());
                break;
            case Init::Conv: fill_conv(1.0); break;
            case Init::ResidualConv: fill_conv(res_gain); break;
        }
    });
    return p;
}

template <typename T>
ParameterSet<T> parameter_set(ModelParams<T>& p, const ModelConfig& cfg) {
    validate(cfg);
    ParameterSet<T> set;
    visit_params(p, cfg, [&](const std::string& name, Tensor<T>& t, const Shape& shape, Init) {
        if (!t.defined() || t.shape() != shape)
            fail(ErrorKind::State, "parameter " + name + " missing or mis-shaped; expected " +
                                       shape.str());
        set.add(name, t);
    });
    return set;
}

template <typename T>
Tensor<T> hdr_forward(const Tensor<T>& x, const Tensor<T>& x2, const ModelParams<T>& p,
                      const ModelConfig& cfg) {
    validate(cfg);
    if (!x.defined() || x.rank() != 4 || x.dim(1) != 18)
        fail(ErrorKind::Shape, "forward: main input must be (B,18,H,W)");
    if (!x2.defined() || x2.rank() != 4 || x2.dim(1) != 6)
        fail(ErrorKind::Shape, "forward: reference input must be (B,6,H,W)");
    if (x2.dim(0) != x.dim(0) || x2.dim(2) != x.dim(2) || x2.dim(3) != x.dim(3))
        fail(ErrorKind::Shape, "forward: input shapes disagree, " + x.shape().str() + " vs " +
                                   x2.shape().str());
    const i64 H = x.dim(2), W = x.dim(3);
    if (H < 8 || W < 8)
        fail(ErrorKind::Shape, "forward: spatial size must be at least 8x8, got " +
                                   x.shape().str());
    if (!x.all_finite() || !x2.all_finite())
        fail(ErrorKind::Value, "forward: non-finite input values");

    const i64 mlt = cfg.pad_multiple();
    const i64 ph = (mlt - H % mlt) % mlt, pw = (mlt - W % mlt) % mlt;
    Tensor<T> xp = (ph || pw) ? ops::reflect_pad(x, 0, ph, 0, pw) : x;
    Tensor<T> x2p = (ph || pw) ? ops::reflect_pad(x2, 0, ph, 0, pw) : x2;

    const i64 m = cfg.window;
    Tensor<T> feat = ops::conv2d(xp, p.embed_w, p.embed_b, ops::ConvKind::Full3x3);
    std::vector<Tensor<T>> skips(4);
    skips[0] = run_block(feat, p.enc[0], m, cfg.heads[0]);
    for (int s = 1; s < 4; ++s)
        skips[s] = run_block(downscale(skips[s - 1], p.down[s - 1]), p.enc[s], m, cfg.heads[s]);

    Tensor<T> d = skips[3];
    for (int s = 2; s >= 0; --s) {
        Tensor<T> u = upscale(d, p.up[s]);
        Tensor<T> fused = ops::conv2d(ops::concat_channels<T>({u, skips[s]}), p.fuse_w[s],
                                      p.fuse_b[s], ops::ConvKind::Pointwise1x1);
        d = run_block(fused, p.dec[s], m, cfg.heads[s]);
    }
    Tensor<T> refined = run_block(d, p.refine, m, cfg.heads[0]);
    Tensor<T> shallow = ops::conv2d(x2p, p.shallow_w, p.shallow_b, ops::ConvKind::Full3x3);
    Tensor<T> out = ops::sigmoid(
        ops::conv2d(ops::add(refined, shallow), p.head_w, p.head_b, ops::ConvKind::Full3x3));
    return (ph || pw) ? ops::crop(out, 0, 0, H, W) : out;
}

std::vector<i64> window_footprints(const ModelConfig& cfg) {
    validate(cfg);
    std::vector<i64> out;
    for (int s = 0; s < cfg.scale_count; ++s) out.push_back(cfg.window << s);
    return out;
}

#define GSHDR_INSTANTIATE_MODEL(T)                                                          \
    template ModelParams<T> init_parameters<T>(const ModelConfig&, std::uint64_t);          \
    template ParameterSet<T> parameter_set<T>(ModelParams<T>&, const ModelConfig&);         \
    template Tensor<T> hdr_forward<T>(const Tensor<T>&, const Tensor<T>&,                   \
                                      const ModelParams<T>&, const ModelConfig&);

GSHDR_INSTANTIATE_MODEL(float)
GSHDR_INSTANTIATE_MODEL(double)
#undef GSHDR_INSTANTIATE_MODEL

}  // namespace gshdr
