#pragma once

// Shared helpers for the test suite: random tensor filling, max-difference
// reducers, and a generic finite-difference gradient checker that exercises
// the tape against numeric derivatives.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gshdr/tensor.hpp"

namespace testsup {

using gshdr::Shape;
using gshdr::Tape;
using gshdr::Tensor;

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

template <typename T>
void fill_uniform(Tensor<T>& t, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        const double u = double(rng() >> 11) * 0x1.0p-53;
        t[i] = T(lo + (hi - lo) * u);
    }
}

template <typename T>
Tensor<T> random_tensor(const Shape& s, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    Tensor<T> t(s);
    auto rng = make_rng(seed);
    fill_uniform(t, rng, lo, hi);
    return t;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    double m = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    }
    return m;
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
    if (!(a.shape() == b.shape())) return false;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        if (a[i] != b[i]) return false;
    }
    return true;
}

// Result of one finite-difference sweep.
struct FdReport {
    double max_abs_err = 0.0;  // worst |fd - analytic|
    double max_rel_err = 0.0;  // worst relative error among entries above floor
    std::int64_t checked = 0;
    bool pass = true;
};

// Compares tape gradients against central differences for every element of
// every leaf. `build` must construct a scalar loss from `leaves` using taped
// ops; it is re-invoked for each probe, so it must be a pure function of the
// leaf values. Intended for double-precision leaves with a handful of
// elements per tensor.
inline FdReport fd_check(std::vector<Tensor<double>*> leaves,
                         const std::function<Tensor<double>()>& build,
                         double h = 1e-5, double tol = 1e-3, double floor_abs = 1e-6) {
    for (auto* leaf : leaves) {
        leaf->set_requires_grad(true);
        leaf->zero_grad();
    }
    {
        Tape<double> tape;
        Tape<double>::Scope scope(tape);
        Tensor<double> loss = build();
        tape.backward(loss);
    }
    std::vector<std::vector<double>> grads;
    grads.reserve(leaves.size());
    for (auto* leaf : leaves) {
        std::vector<double> g(static_cast<std::size_t>(leaf->numel()), 0.0);
        if (leaf->has_grad()) {
            for (std::int64_t i = 0; i < leaf->numel(); ++i) g[static_cast<std::size_t>(i)] = leaf->grad()[i];
        }
        grads.push_back(std::move(g));
    }

    const auto eval = [&]() { return double(build().item()); };

    FdReport rep;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Tensor<double>& leaf = *leaves[li];
        leaf.set_requires_grad(false);
        for (std::int64_t i = 0; i < leaf.numel(); ++i) {
            const double keep = leaf[i];
            leaf[i] = keep + h;
            const double up = eval();
            leaf[i] = keep - h;
            const double dn = eval();
            leaf[i] = keep;
            const double fd = (up - dn) / (2.0 * h);
            const double an = grads[li][static_cast<std::size_t>(i)];
            const double abs_err = std::abs(fd - an);
            const double rel = abs_err / std::max(std::abs(fd), std::abs(an));
            rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
            if (abs_err > floor_abs) {
                rep.max_rel_err = std::max(rep.max_rel_err, rel);
                if (rel > tol) rep.pass = false;
            }
            ++rep.checked;
        }
        leaf.set_requires_grad(true);
    }
    return rep;
}

}  // namespace testsup
