#include "gshdr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "gshdr/loss.hpp"
#include "gshdr/ops.hpp"

namespace gshdr {

double lr_schedule(i64 epoch, double initial, double dropped, i64 drop_epoch) {
    if (epoch < 0) fail(ErrorKind::Value, "lr_schedule: negative epoch");
    return epoch < drop_epoch ? initial : dropped;
}

template <typename T>
void adam_step(ParameterSet<T>& params, TrainState<T>& state, double lr,
               const AdamConfig& cfg) {
    if (state.m.size() == 0) {
        for (auto& [name, p] : params) {
            state.m.add(name, Tensor<T>(p.shape()));
            state.v.add(name, Tensor<T>(p.shape()));
        }
    }
    const std::uint64_t t = state.step + 1;
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T bc1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
    const T bc2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
    const T lrt = static_cast<T>(lr), eps = static_cast<T>(cfg.eps);
    for (auto& [name, p] : params) {
        if (!p.has_grad()) fail(ErrorKind::State, "adam_step: missing gradient for " + name);
        T* m = state.m.get(name).data();
        T* v = state.v.get(name).data();
        T* w = p.data();
        const T* g = p.grad();
        const i64 n = p.numel();
        for (i64 i = 0; i < n; ++i) {
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            w[i] -= lrt * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
    }
    state.step = t;
}

template void adam_step<float>(ParameterSet<float>&, TrainState<float>&, double,
                               const AdamConfig&);
template void adam_step<double>(ParameterSet<double>&, TrainState<double>&, double,
                                const AdamConfig&);

// ---- checkpoint serialization ----------------------------------------------

namespace {

constexpr char kMagic[8] = {'G', 'S', 'H', 'D', 'R', 'C', 'K', '\0'};
constexpr std::uint32_t kVersion = 1;

void put_bytes(std::ostream& f, const void* p, std::size_t n) {
    f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u32(std::ostream& f, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    put_bytes(f, b, 4);
}

void put_u64(std::ostream& f, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    put_bytes(f, b, 8);
}

void put_i64(std::ostream& f, i64 v) { put_u64(f, static_cast<std::uint64_t>(v)); }

void put_f64(std::ostream& f, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    put_u64(f, u);
}

void take_bytes(std::istream& f, void* p, std::size_t n, const std::string& path) {
    f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(f.gcount()) != n)
        fail(ErrorKind::Format, path + ": truncated payload");
}

std::uint32_t take_u32(std::istream& f, const std::string& path) {
    unsigned char b[4];
    take_bytes(f, b, 4, path);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
    return v;
}

std::uint64_t take_u64(std::istream& f, const std::string& path) {
    unsigned char b[8];
    take_bytes(f, b, 8, path);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
}

i64 take_i64(std::istream& f, const std::string& path) {
    return static_cast<i64>(take_u64(f, path));
}

double take_f64(std::istream& f, const std::string& path) {
    const std::uint64_t u = take_u64(f, path);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

void put_tensor(std::ostream& f, const std::string& name, const Tensor<float>& t) {
    put_u32(f, static_cast<std::uint32_t>(name.size()));
    put_bytes(f, name.data(), name.size());
    f.put(0);  // dtype tag: f32
    put_u32(f, static_cast<std::uint32_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) put_i64(f, t.dim(d));
    const float* p = t.data();
    std::vector<unsigned char> buf(static_cast<std::size_t>(t.numel()) * 4);
    for (i64 i = 0; i < t.numel(); ++i) {
        std::uint32_t u;
        std::memcpy(&u, &p[i], 4);
        for (int k = 0; k < 4; ++k)
            buf[static_cast<std::size_t>(i) * 4 + static_cast<std::size_t>(k)] =
                static_cast<unsigned char>((u >> (8 * k)) & 0xff);
    }
    put_bytes(f, buf.data(), buf.size());
}

// Reads the next record, which must be `name` with `expect`ed shape.
void take_tensor(std::istream& f, const std::string& path, const std::string& name,
                 Tensor<float>& dst) {
    const std::uint32_t len = take_u32(f, path);
    if (len > 4096) fail(ErrorKind::Format, path + ": implausible tensor name length");
    std::string got(len, '\0');
    take_bytes(f, got.data(), len, path);
    if (got != name)
        fail(ErrorKind::Format,
             path + ": unexpected tensor record '" + got + "' (expected '" + name + "')");
    unsigned char dtype;
    take_bytes(f, &dtype, 1, path);
    if (dtype != 0) fail(ErrorKind::Format, path + ": unsupported dtype tag for " + got);
    const std::uint32_t rank = take_u32(f, path);
    if (rank > 4) fail(ErrorKind::Format, path + ": bad rank for " + got);
    Shape s;
    for (std::uint32_t d = 0; d < rank; ++d) s.push_back(take_i64(f, path));
    if (s != dst.shape())
        fail(ErrorKind::Shape, path + ": shape mismatch for tensor '" + name +
                                   "': file has " + s.str() + ", config implies " +
                                   dst.shape().str());
    std::vector<unsigned char> buf(static_cast<std::size_t>(dst.numel()) * 4);
    take_bytes(f, buf.data(), buf.size(), path);
    float* p = dst.data();
    for (i64 i = 0; i < dst.numel(); ++i) {
        std::uint32_t u = 0;
        for (int k = 0; k < 4; ++k)
            u |= std::uint32_t(buf[static_cast<std::size_t>(i) * 4 +
                                   static_cast<std::size_t>(k)])
                 << (8 * k);
        std::memcpy(&p[i], &u, 4);
    }
}

void ensure_moments(ParameterSet<float>& pset, TrainState<float>& state) {
    if (state.m.size() != 0) return;
    for (auto& [name, p] : pset) {
        state.m.add(name, Tensor<float>(p.shape()));
        state.v.add(name, Tensor<float>(p.shape()));
    }
}

}  // namespace

void save_checkpoint(const std::string& path, ModelParams<float>& params,
                     const TrainState<float>& state, const ModelConfig& cfg) {
    validate(cfg);
    ParameterSet<float> pset = parameter_set(params, cfg);
    std::ofstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::Io, "cannot open " + path + " for writing");
    put_bytes(f, kMagic, 8);
    put_u32(f, kVersion);
    put_i64(f, cfg.base_width);
    put_i64(f, cfg.scale_count);
    for (i64 c : cfg.unit_counts) put_i64(f, c);
    put_i64(f, cfg.refinement_count);
    for (i64 h : cfg.heads) put_i64(f, h);
    put_i64(f, cfg.window);
    f.put(static_cast<char>(cfg.gating));
    put_f64(f, cfg.gamma);
    put_f64(f, cfg.mu);
    put_u64(f, state.step);
    put_i64(f, state.epoch);
    put_f64(f, state.lr);
    put_u64(f, state.seed);

    const bool have_moments = state.m.size() != 0;
    put_u64(f, static_cast<std::uint64_t>(pset.size() * (have_moments ? 3 : 1)));
    for (auto& [name, t] : pset) put_tensor(f, name, t);
    if (have_moments) {
        for (auto& [name, t] : pset) put_tensor(f, "adam.m." + name, state.m.get(name));
        for (auto& [name, t] : pset) put_tensor(f, "adam.v." + name, state.v.get(name));
    }
    if (!f) fail(ErrorKind::Io, "write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorKind::Io, "cannot open " + path + " for reading");
    char magic[8];
    take_bytes(f, magic, 8, path);
    if (std::memcmp(magic, kMagic, 8) != 0)
        fail(ErrorKind::Format, path + ": bad magic, not a checkpoint file");
    const std::uint32_t version = take_u32(f, path);
    if (version != kVersion)
        fail(ErrorKind::Format,
             path + ": unsupported checkpoint version " + std::to_string(version));

    Checkpoint ck;
    ck.cfg.base_width = take_i64(f, path);
    ck.cfg.scale_count = take_i64(f, path);
    for (auto& c : ck.cfg.unit_counts) c = take_i64(f, path);
    ck.cfg.refinement_count = take_i64(f, path);
    for (auto& h : ck.cfg.heads) h = take_i64(f, path);
    ck.cfg.window = take_i64(f, path);
    unsigned char gating;
    take_bytes(f, &gating, 1, path);
    if (gating > 2) fail(ErrorKind::Format, path + ": bad gating tag");
    ck.cfg.gating = static_cast<GatingMode>(gating);
    ck.cfg.gamma = take_f64(f, path);
    ck.cfg.mu = take_f64(f, path);
    validate(ck.cfg);

    ck.state.step = take_u64(f, path);
    ck.state.epoch = take_i64(f, path);
    ck.state.lr = take_f64(f, path);
    ck.state.seed = take_u64(f, path);

    ck.params = init_parameters<float>(ck.cfg, 0);
    ParameterSet<float> pset = parameter_set(ck.params, ck.cfg);
    const std::uint64_t count = take_u64(f, path);
    if (count != pset.size() && count != pset.size() * 3)
        fail(ErrorKind::Format, path + ": unexpected tensor record count " +
                                    std::to_string(count));
    for (auto& [name, t] : pset) take_tensor(f, path, name, t);
    if (count == pset.size() * 3) {
        ensure_moments(pset, ck.state);
        for (auto& [name, t] : pset) take_tensor(f, path, "adam.m." + name, ck.state.m.get(name));
        for (auto& [name, t] : pset) take_tensor(f, path, "adam.v." + name, ck.state.v.get(name));
    }
    return ck;
}

// ---- training loop ----------------------------------------------------------

namespace {

// PSNR in the tone-mapped domain, straight from raw batch buffers.
double batch_psnr_mu(const Tensor<float>& pred, const Tensor<float>& gt, double mu) {
    const float* a = pred.data();
    const float* b = gt.data();
    const i64 n = pred.numel();
    const double iln = 1.0 / std::log1p(mu);
    double mse = 0;
    for (i64 i = 0; i < n; ++i) {
        const double ta = std::log1p(mu * std::clamp(double(a[i]), 0.0, 1.0)) * iln;
        const double tb = std::log1p(mu * std::clamp(double(b[i]), 0.0, 1.0)) * iln;
        mse += (ta - tb) * (ta - tb);
    }
    mse /= static_cast<double>(n);
    if (mse <= 0) return 99.0;
    return std::min(99.0, -10.0 * std::log10(mse));
}

}  // namespace

TrainResult train(const std::vector<data::Sample>& dataset, const ModelConfig& cfg,
                  const TrainOptions& opts) {
    validate(cfg);
    ModelParams<float> params = init_parameters<float>(cfg, opts.seed);
    TrainState<float> state;
    state.seed = opts.seed;
    state.lr = opts.lr_initial;
    return train(dataset, cfg, opts, std::move(params), std::move(state));
}

TrainResult train(const std::vector<data::Sample>& dataset, const ModelConfig& cfg,
                  const TrainOptions& opts, ModelParams<float> params,
                  TrainState<float> state) {
    validate(cfg);
    if (dataset.empty()) fail(ErrorKind::Value, "train: empty dataset");
    if (opts.batch < 1) fail(ErrorKind::Config, "train: batch size must be >= 1");

    std::vector<data::Sample> patches;
    for (const auto& s : dataset) {
        if (!s.gt.defined())
            fail(ErrorKind::Value, "train: dataset sample without ground truth");
        auto ps = data::extract_patches(s, opts.patch, opts.stride);
        for (auto& p : ps) patches.push_back(std::move(p));
    }
    const i64 side = opts.patch;

    ParameterSet<float> pset = parameter_set(params, cfg);
    pset.set_requires_grad(true);
    ensure_moments(pset, state);

    std::ofstream log;
    if (!opts.log_path.empty()) {
        log.open(opts.log_path, state.epoch >= 0 ? std::ios::app : std::ios::trunc);
        if (!log) fail(ErrorKind::Io, "cannot open " + opts.log_path + " for writing");
        if (state.epoch < 0) log << "epoch,lr,L,L1,L2,psnr_mu\n";
    }

    TrainResult res;
    bool stop = false;
    for (i64 epoch = state.epoch + 1; epoch < opts.epochs && !stop; ++epoch) {
        const double lr =
            lr_schedule(epoch, opts.lr_initial, opts.lr_dropped, opts.lr_drop_epoch);
        state.lr = lr;
        std::mt19937_64 rng(state.seed ^
                            (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(epoch + 1)));
        std::vector<std::size_t> order(patches.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size() - 1; i > 0; --i) {
            const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
            std::swap(order[i], order[j]);
        }

        double sum_loss = 0, sum_l1 = 0, sum_l2 = 0, sum_psnr = 0;
        i64 batches = 0;
        for (std::size_t pos = 0; pos < order.size() && !stop; pos += static_cast<std::size_t>(opts.batch)) {
            const i64 bs = std::min<i64>(opts.batch,
                                         static_cast<i64>(order.size() - pos));
            Tensor<float> bx(Shape{bs, 18, side, side});
            Tensor<float> bx2(Shape{bs, 6, side, side});
            Tensor<float> bgt(Shape{bs, 3, side, side});
            for (i64 b = 0; b < bs; ++b) {
                data::Sample sm = patches[order[pos + static_cast<std::size_t>(b)]];
                if (opts.augment) sm = data::augment(sm, static_cast<int>(rng() % 8));
                auto [x, x2] = data::build_input(sm.stack);
                std::copy(x.data(), x.data() + x.numel(), bx.data() + b * x.numel());
                std::copy(x2.data(), x2.data() + x2.numel(), bx2.data() + b * x2.numel());
                std::copy(sm.gt.data(), sm.gt.data() + sm.gt.numel(),
                          bgt.data() + b * sm.gt.numel());
            }

            double L, L1, L2, psnr_mu;
            {
                Tape<float> tape;
                typename Tape<float>::Scope scope(tape);
                Tensor<float> pred = hdr_forward(bx, bx2, params, cfg);
                LossTerms<float> terms = total_loss(pred, bgt, cfg.mu);
                L = terms.total.item();
                L1 = terms.l1.item();
                L2 = terms.l2.item();
                if (!std::isfinite(L))
                    fail(ErrorKind::Value,
                         "train: diverged (non-finite loss) at step " +
                             std::to_string(state.step + 1));
                pset.zero_grads();
                tape.backward(terms.total);
                psnr_mu = batch_psnr_mu(pred, bgt, cfg.mu);
            }
            adam_step(pset, state, lr);
            sum_loss += L;
            sum_l1 += L1;
            sum_l2 += L2;
            sum_psnr += psnr_mu;
            ++batches;
            if (opts.keep_step_log) res.step_losses.push_back(L);
            if (opts.max_steps > 0 && static_cast<i64>(state.step) >= opts.max_steps)
                stop = true;
        }

        state.epoch = epoch;
        EpochStats es;
        es.epoch = epoch;
        es.lr = lr;
        es.loss = sum_loss / static_cast<double>(batches);
        es.l1 = sum_l1 / static_cast<double>(batches);
        es.l2 = sum_l2 / static_cast<double>(batches);
        es.psnr_mu = sum_psnr / static_cast<double>(batches);
        res.epochs.push_back(es);
        if (log.is_open()) {
            log.precision(10);
            log << es.epoch << "," << es.lr << "," << es.loss << "," << es.l1 << "," << es.l2
                << "," << es.psnr_mu << "\n";
            log.flush();
        }
        if (!opts.quiet)
            std::fprintf(stderr, "epoch %lld  lr %.1e  loss %.5f  l1 %.5f  l2 %.5f  psnr_mu %.2f\n",
                         static_cast<long long>(es.epoch), es.lr, es.loss, es.l1, es.l2,
                         es.psnr_mu);
        if (!opts.checkpoint_path.empty()) save_checkpoint(opts.checkpoint_path, params, state, cfg);
    }

    if (!opts.checkpoint_path.empty())
        save_checkpoint(opts.checkpoint_path, params, state, cfg);
    res.params = std::move(params);
    res.state = std::move(state);
    return res;
}

}  // namespace gshdr
