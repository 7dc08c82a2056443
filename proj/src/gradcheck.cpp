#include "gshdr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "gshdr/loss.hpp"
#include "gshdr/model.hpp"

namespace gshdr {

namespace {

double uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

Tensor<double> random_tensor(std::mt19937_64& rng, const Shape& s) {
    Tensor<double> t(s);
    for (i64 i = 0; i < t.numel(); ++i) t[i] = uniform(rng);
    return t;
}

}  // namespace

GradCheckReport gradcheck_model(const GradCheckOptions& opts, std::ostream& out) {
    const ModelConfig cfg = ModelConfig::tiny();
    ModelParams<double> params = init_parameters<double>(cfg, opts.seed);
    ParameterSet<double> pset = parameter_set(params, cfg);

    std::mt19937_64 rng(opts.seed ^ 0xA5A5A5A5DEADBEEFull);
    const Tensor<double> x = random_tensor(rng, Shape{2, 18, 32, 32});
    const Tensor<double> x2 = random_tensor(rng, Shape{2, 6, 32, 32});
    const Tensor<double> gt = random_tensor(rng, Shape{2, 3, 32, 32});

    auto loss_value = [&]() {
        Tensor<double> pred = hdr_forward(x, x2, params, cfg);
        return total_loss(pred, gt, cfg.mu).total.item();
    };

    // One taped pass for the analytic gradient.
    std::vector<std::pair<std::string, std::vector<double>>> grads;
    {
        pset.set_requires_grad(true);
        pset.zero_grads();
        Tape<double> tape;
        Tape<double>::Scope scope(tape);
        Tensor<double> pred = hdr_forward(x, x2, params, cfg);
        LossTerms<double> terms = total_loss(pred, gt, cfg.mu);
        tape.backward(terms.total);
        for (auto& [name, t] : pset)
            grads.emplace_back(name, std::vector<double>(t.grad(), t.grad() + t.numel()));
        pset.set_requires_grad(false);
    }

    GradCheckReport rep;
    const double h = opts.step;
    auto probe = [&](Tensor<double>& t, i64 i, double analytic, const std::string& name) {
        const double old = t[i];
        t[i] = old + h;
        const double lp = loss_value();
        t[i] = old - h;
        const double lm = loss_value();
        t[i] = old;
        const double fd = (lp - lm) / (2.0 * h);
        ++rep.probes;
        const double diff = std::fabs(fd - analytic);
        rep.max_abs = std::max(rep.max_abs, diff);
        if (diff <= opts.floor_abs) return;
        const double rel = diff / std::max(std::fabs(fd), std::fabs(analytic));
        if (rel > rep.max_rel) {
            rep.max_rel = rel;
            rep.worst_name = name;
        }
    };

    std::size_t gi = 0;
    for (auto& [name, t] : pset) {
        const std::vector<double>& g = grads[gi++].second;
        const i64 n = t.numel();
        if (opts.exhaustive) {
            for (i64 i = 0; i < n; ++i) probe(t, i, g[static_cast<std::size_t>(i)], name);
        } else {
            const i64 k = std::min<i64>(opts.samples_per_tensor, n);
            for (i64 s = 0; s < k; ++s) {
                const i64 i = static_cast<i64>(rng() % static_cast<std::uint64_t>(n));
                probe(t, i, g[static_cast<std::size_t>(i)], name);
            }
        }
        if (!opts.quiet && gi % 50 == 0)
            out << "gradcheck: " << gi << "/" << pset.size() << " tensors, worst so far "
                << rep.max_rel << "\n";
    }

    // Global directional derivative along one random unit vector.
    {
        std::vector<std::vector<double>> dirs;
        double norm_sq = 0;
        for (auto& [name, t] : pset) {
            std::vector<double> d(static_cast<std::size_t>(t.numel()));
            for (auto& v : d) {
                v = uniform(rng) * 2.0 - 1.0;
                norm_sq += v * v;
            }
            dirs.push_back(std::move(d));
        }
        const double inv_norm = 1.0 / std::sqrt(norm_sq);
        double analytic = 0;
        gi = 0;
        for (auto& [name, g] : grads) {
            const std::vector<double>& d = dirs[gi++];
            for (std::size_t i = 0; i < d.size(); ++i) analytic += g[i] * d[i] * inv_norm;
        }
        auto shift = [&](double scale) {
            std::size_t k = 0;
            for (auto& [name, t] : pset) {
                const std::vector<double>& d = dirs[k++];
                for (i64 i = 0; i < t.numel(); ++i)
                    t[i] += scale * d[static_cast<std::size_t>(i)] * inv_norm;
            }
        };
        shift(h);
        const double lp = loss_value();
        shift(-2.0 * h);
        const double lm = loss_value();
        shift(h);
        const double fd = (lp - lm) / (2.0 * h);
        const double diff = std::fabs(fd - analytic);
        rep.directional_rel =
            diff <= opts.floor_abs ? 0.0 : diff / std::max(std::fabs(fd), std::fabs(analytic));
        rep.probes += 2;
    }

    rep.pass = rep.max_rel < opts.tolerance && rep.directional_rel < opts.tolerance;
    out << "gradcheck: max_rel=" << rep.max_rel
        << (rep.worst_name.empty() ? "" : " (" + rep.worst_name + ")")
        << " max_abs=" << rep.max_abs << " directional_rel=" << rep.directional_rel
        << " probes=" << rep.probes << " -> " << (rep.pass ? "pass" : "FAIL") << "\n";
    return rep;
}

}  // namespace gshdr
