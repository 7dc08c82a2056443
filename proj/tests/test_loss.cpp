// Tone mapping, SSIM, PSNR, and the composite training loss, checked
// against explicit-loop oracles and closed-form values.

#include <cmath>

#include "doctest.h"
#include "gshdr/loss.hpp"
#include "gshdr/ops.hpp"
#include "gshdr/ref.hpp"
#include "support/checks.hpp"

using namespace gshdr;
using testsup::random_tensor;

TEST_CASE("tone mapping endpoints and inverse round trip") {
    auto x = random_tensor<double>(Shape{1, 3, 4, 4}, 1);
    auto y = ops::mu_law(x, 5000.0, true);
    for (i64 i = 0; i < x.numel(); ++i) {
        CHECK(y[i] >= 0.0);
        CHECK(y[i] <= 1.0);
        CHECK(ref::mu_law_inverse_scalar(y[i], 5000.0) ==
              doctest::Approx(x[i]).epsilon(1e-6));
    }
    CHECK(ops::mu_law(Tensor<double>(Shape{1}, 0.0), 5000.0, true).item() == 0.0);
    CHECK(ops::mu_law(Tensor<double>(Shape{1}, 1.0), 5000.0, true).item() == 1.0);
}

TEST_CASE("tone mapping compresses highlights") {
    // Half the linear range already maps close to one.
    auto y = ops::mu_law(Tensor<double>(Shape{1}, 0.5), 5000.0, true);
    CHECK(y.item() == doctest::Approx(0.9186432719).epsilon(1e-6));
}

TEST_CASE("ssim of identical images is one") {
    auto a = random_tensor<double>(Shape{1, 3, 16, 16}, 11);
    CHECK(std::abs(ssim(a, a).item() - 1.0) <= 1e-9);
}

TEST_CASE("ssim is symmetric and bounded by one for unequal pairs") {
    auto a = random_tensor<double>(Shape{1, 1, 16, 16}, 21);
    auto b = random_tensor<double>(Shape{1, 1, 16, 16}, 22);
    const double sab = ssim(a, b).item();
    const double sba = ssim(b, a).item();
    CHECK(sab == doctest::Approx(sba).epsilon(1e-12));
    CHECK(sab < 1.0 - 1e-6);
}

TEST_CASE("ssim of two flat images matches the closed form") {
    // Constant images have zero variance, so only the luminance term is
    // active: (2ab + c1) / (a^2 + b^2 + c1).
    Tensor<double> a(Shape{1, 1, 16, 16}, 0.25);
    Tensor<double> b(Shape{1, 1, 16, 16}, 0.5);
    const double c1 = 1e-4;
    const double want = (2 * 0.25 * 0.5 + c1) / (0.25 * 0.25 + 0.5 * 0.5 + c1);
    CHECK(ssim(a, b).item() == doctest::Approx(want).epsilon(1e-9));
    CHECK(want == doctest::Approx(0.800064).epsilon(1e-6));
}

TEST_CASE("ssim matches the explicit-loop oracle") {
    auto a = random_tensor<double>(Shape{2, 3, 16, 16}, 31);
    auto b = random_tensor<double>(Shape{2, 3, 16, 16}, 32);
    CHECK(std::abs(ssim(a, b).item() - ref::ssim(a, b)) <= 1e-9);
}

TEST_CASE("ssim input validation") {
    auto a = random_tensor<double>(Shape{1, 1, 16, 16}, 41);
    SUBCASE("shape mismatch") {
        auto b = random_tensor<double>(Shape{1, 1, 16, 8}, 42);
        CHECK_THROWS_AS(ssim(a, b), Error);
    }
    SUBCASE("image smaller than the window") {
        auto s = random_tensor<double>(Shape{1, 1, 8, 8}, 43);
        CHECK_THROWS_AS(ssim(s, s), Error);
    }
    SUBCASE("values outside the unit range") {
        auto b = a.clone();
        b[7] = 1.5;
        CHECK_THROWS_AS(ssim(a, b), Error);
    }
    SUBCASE("bad window configuration") {
        SsimConfig cfg;
        cfg.window = 4;  // must be odd
        CHECK_THROWS_AS(ssim(a, a, cfg), Error);
    }
}

TEST_CASE("ssim gradient check") {
    auto a = random_tensor<double>(Shape{1, 1, 12, 12}, 51, 0.1, 0.9);
    auto b = random_tensor<double>(Shape{1, 1, 12, 12}, 52, 0.1, 0.9);
    SsimConfig cfg;
    cfg.window = 5;  // keep the probe cheap
    auto r = testsup::fd_check({&a, &b}, [&] { return ssim(a, b, cfg); }, 1e-6, 1e-3, 1e-8);
    CHECK_MESSAGE(r.pass, "max_rel=", r.max_rel_err);
}

TEST_CASE("psnr anchors") {
    auto a = random_tensor<double>(Shape{1, 3, 8, 8}, 61);
    CHECK(psnr(a, a) == 99.0);

    // A uniform error of 0.1 gives an MSE of 0.01 and exactly 20 dB.
    Tensor<double> z(Shape{1, 1, 4, 4}, 0.4);
    Tensor<double> w(Shape{1, 1, 4, 4}, 0.5);
    CHECK(psnr(z, w) == doctest::Approx(20.0).epsilon(1e-12));
    CHECK(std::abs(psnr(z, w) - ref::psnr(z, w)) <= 1e-12);
}

TEST_CASE("psnr matches the oracle on random pairs") {
    auto a = random_tensor<double>(Shape{1, 3, 16, 16}, 71);
    auto b = random_tensor<double>(Shape{1, 3, 16, 16}, 72);
    CHECK(std::abs(psnr(a, b) - ref::psnr(a, b)) <= 1e-9);
}

TEST_CASE("total loss vanishes on identical inputs and splits into terms") {
    auto x = random_tensor<double>(Shape{1, 3, 16, 16}, 81);
    auto t = total_loss(x, x);
    CHECK(std::abs(t.total.item()) <= 1e-9);
    CHECK(std::abs(t.l1.item()) <= 1e-9);
    CHECK(std::abs(t.l2.item()) <= 1e-9);

    auto y = random_tensor<double>(Shape{1, 3, 16, 16}, 82);
    auto u = total_loss(x, y);
    CHECK(u.total.item() == doctest::Approx(u.l1.item() + u.l2.item()).epsilon(1e-12));
    CHECK(u.total.item() > 0.0);
    CHECK(u.l1.item() > 0.0);
}

TEST_CASE("total loss rejects out-of-range input") {
    auto x = random_tensor<double>(Shape{1, 3, 16, 16}, 91);
    auto bad = x.clone();
    bad[3] = -0.25;
    CHECK_THROWS_AS(total_loss(bad, x), Error);
    CHECK_THROWS_AS(total_loss(x, bad), Error);
}

TEST_CASE("total loss gradient near the optimum") {
    auto gt = random_tensor<double>(Shape{1, 1, 12, 12}, 101, 0.2, 0.8);
    auto pred = gt.clone();
    auto noise = random_tensor<double>(Shape{1, 1, 12, 12}, 102, -0.05, 0.05);
    for (i64 i = 0; i < pred.numel(); ++i) pred[i] += noise[i];
    SsimConfig cfg;
    cfg.window = 5;
    auto r = testsup::fd_check(
        {&pred}, [&] { return total_loss(pred, gt, 5000.0, cfg).total; }, 1e-6, 2e-3, 1e-7);
    CHECK_MESSAGE(r.pass, "max_rel=", r.max_rel_err);
}

TEST_CASE("metric report agrees with the double-precision oracles") {
    auto pred = random_tensor<float>(Shape{1, 3, 16, 16}, 111);
    auto gt = random_tensor<float>(Shape{1, 3, 16, 16}, 112);
    auto rep = compute_metrics(pred, gt, 5000.0);

    auto pd = ops::cast<double>(pred);
    auto gd = ops::cast<double>(gt);
    auto pm = ref::mu_law(pd, 5000.0);
    auto gm = ref::mu_law(gd, 5000.0);
    CHECK(std::abs(rep.psnr_l - ref::psnr(pd, gd)) <= 1e-9);
    CHECK(std::abs(rep.psnr_mu - ref::psnr(pm, gm)) <= 1e-9);
    CHECK(std::abs(rep.ssim_l - ref::ssim(pd, gd)) <= 1e-9);
    CHECK(std::abs(rep.ssim_mu - ref::ssim(pm, gm)) <= 1e-9);
}

TEST_CASE("metrics clamp out-of-range values instead of failing") {
    auto gt = random_tensor<float>(Shape{1, 3, 16, 16}, 121);
    auto pred = gt.clone();
    pred[0] = 1.5f;
    pred[1] = -0.5f;
    auto rep = compute_metrics(pred, gt, 5000.0);
    auto clamped = gt.clone();
    clamped[0] = 1.0f;
    clamped[1] = 0.0f;
    auto rep2 = compute_metrics(clamped, gt, 5000.0);
    CHECK(rep.psnr_l == doctest::Approx(rep2.psnr_l).epsilon(1e-12));
    CHECK(rep.ssim_mu == doctest::Approx(rep2.ssim_mu).epsilon(1e-12));
}

TEST_CASE("perfect prediction reports the capped psnr and unit ssim") {
    auto gt = random_tensor<float>(Shape{1, 3, 16, 16}, 131);
    auto rep = compute_metrics(gt, gt, 5000.0);
    CHECK(rep.psnr_mu == 99.0);
    CHECK(rep.psnr_l == 99.0);
    CHECK(rep.ssim_mu == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(rep.ssim_l == doctest::Approx(1.0).epsilon(1e-9));
}
