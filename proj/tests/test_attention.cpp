// Windowed attention against two independently coded baselines: a dense
// per-window loop with the additive mask, and a mask-free version that
// splits shifted windows into contiguous source regions.

#include <cmath>
#include <vector>

#include "doctest.h"
#include "gshdr/attention.hpp"
#include "gshdr/ops.hpp"
#include "gshdr/ref.hpp"
#include "support/checks.hpp"

using namespace gshdr;
using testsup::max_abs_diff;
using testsup::random_tensor;

namespace {

AttentionParams<double> random_params(i64 c, i64 heads, i64 m, std::uint64_t seed) {
    AttentionParams<double> p;
    p.wq = random_tensor<double>(Shape{c, c}, seed + 1, -0.4, 0.4);
    p.bq = random_tensor<double>(Shape{c}, seed + 2, -0.1, 0.1);
    p.wk = random_tensor<double>(Shape{c, c}, seed + 3, -0.4, 0.4);
    p.bk = random_tensor<double>(Shape{c}, seed + 4, -0.1, 0.1);
    p.wv = random_tensor<double>(Shape{c, c}, seed + 5, -0.4, 0.4);
    p.bv = random_tensor<double>(Shape{c}, seed + 6, -0.1, 0.1);
    p.wo = random_tensor<double>(Shape{c, c}, seed + 7, -0.4, 0.4);
    p.bo = random_tensor<double>(Shape{c}, seed + 8, -0.1, 0.1);
    const i64 span = 2 * m - 1;
    p.bias_table = random_tensor<double>(Shape{heads, span * span}, seed + 9, -0.5, 0.5);
    return p;
}

}  // namespace

TEST_CASE("relative index map layout") {
    CHECK(relative_index_map(1) == std::vector<std::int32_t>{0});
    auto idx = relative_index_map(2);
    REQUIRE(idx.size() == 16);
    // Token i sits at (i/2, i%2); the table column is (dy+1)*3 + (dx+1).
    CHECK(idx[0 * 4 + 0] == 4);  // self pair -> center column
    CHECK(idx[0 * 4 + 3] == 0);  // (0,0) vs (1,1): dy=dx=-1
    CHECK(idx[3 * 4 + 0] == 8);  // (1,1) vs (0,0): dy=dx=+1
    CHECK(idx[1 * 4 + 0] == 5);  // (0,1) vs (0,0): dx=+1
}

TEST_CASE("shift mask blocks exactly the cross-region pairs") {
    const i64 h = 8, w = 8, m = 4, shift = 2;
    auto sm = build_shift_mask<double>(h, w, m, shift);
    REQUIRE(sm.mask.shape() == Shape{4, 16, 16});

    // Independent labeling: a token pair is allowed iff both tokens sit on
    // the same side of the row seam and of the column seam of the rolled
    // canvas (the seams are at h-shift and w-shift).
    auto side = [&](i64 pos, i64 extent) { return pos < extent - shift ? 0 : 1; };
    for (i64 wy = 0; wy < 2; ++wy)
        for (i64 wx = 0; wx < 2; ++wx) {
            const i64 wi = wy * 2 + wx;
            for (i64 i = 0; i < 16; ++i)
                for (i64 j = 0; j < 16; ++j) {
                    const i64 yi = wy * m + i / m, xi = wx * m + i % m;
                    const i64 yj = wy * m + j / m, xj = wx * m + j % m;
                    const bool ok = side(yi, h) == side(yj, h) && side(xi, w) == side(xj, w);
                    CHECK(sm.mask.at(wi, i, j) == (ok ? 0.0 : -1e9));
                }
        }

    // The window away from both seams is fully unmasked.
    for (i64 i = 0; i < 16 * 16; ++i) CHECK(sm.mask[i] == 0.0);
}

TEST_CASE("shift mask argument validation") {
    CHECK_THROWS_AS(build_shift_mask<double>(8, 8, 4, 4), Error);   // shift == window
    CHECK_THROWS_AS(build_shift_mask<double>(8, 8, 4, -1), Error);  // negative
    CHECK_THROWS_AS(build_shift_mask<double>(10, 8, 4, 1), Error);  // indivisible canvas
    CHECK(build_shift_mask<double>(8, 8, 4, 0).mask.numel() == 4 * 16 * 16);
}

TEST_CASE("window attention matches the dense baseline") {
    const i64 c = 4, m = 4;
    auto x = random_tensor<double>(Shape{1, c, 8, 8}, 7, -1.0, 1.0);
    for (i64 heads : {i64(1), i64(2), i64(4)}) {
        auto p = random_params(c, heads, m, 100 * static_cast<std::uint64_t>(heads));
        for (i64 shift : {i64(0), m / 2}) {
            auto got = window_attention(x, p, m, heads, shift);
            auto want = ref::window_attention_dense(x, p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo,
                                                    p.bo, p.bias_table, m, heads, shift);
            CHECK(max_abs_diff(got, want) < 1e-6);
        }
    }
}

TEST_CASE("window attention matches the region-split baseline") {
    // The region construction never builds a mask, so agreement here shows
    // the -1e9 surrogate really removes cross-region influence.
    const i64 c = 4, m = 4, heads = 2, shift = 2;
    auto x = random_tensor<double>(Shape{2, c, 8, 16}, 9, -1.0, 1.0);
    auto p = random_params(c, heads, m, 500);
    auto got = window_attention(x, p, m, heads, shift);
    auto want = ref::window_attention_regions(x, p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo,
                                              p.bias_table, m, heads, shift);
    CHECK(max_abs_diff(got, want) < 1e-9);
}

TEST_CASE("unshifted attention of a constant image is constant") {
    // With identical tokens, softmax mixing cannot change anything: the
    // output is the same affine image regardless of window position.
    const i64 c = 4, m = 4;
    Tensor<double> x(Shape{1, c, 8, 8}, 0.75);
    auto p = random_params(c, 2, m, 900);
    auto y = window_attention(x, p, m, 2, 0);
    for (i64 ch = 0; ch < c; ++ch) {
        const double v0 = y.at(0, ch, 0, 0);
        for (i64 i = 0; i < 64; ++i)
            CHECK(y[ch * 64 + i] == doctest::Approx(v0).epsilon(1e-12));
    }
}

TEST_CASE("window attention gradients") {
    const i64 c = 2, m = 2;
    auto x = random_tensor<double>(Shape{1, c, 4, 4}, 31, -1.0, 1.0);
    auto p = random_params(c, 1, m, 600);
    for (i64 shift : {i64(0), i64(1)}) {
        auto r = testsup::fd_check(
            {&x, &p.wq, &p.bq, &p.wk, &p.bk, &p.wv, &p.bv, &p.wo, &p.bo, &p.bias_table},
            [&] {
                Tensor<double> w =
                    random_tensor<double>(Shape{1, c, 4, 4}, 77, 0.25, 1.75);
                return ops::mean_all(ops::mul(window_attention(x, p, m, 1, shift), w));
            });
        CHECK_MESSAGE(r.pass, "shift=", shift, " max_rel=", r.max_rel_err);
    }
}

TEST_CASE("window attention input validation") {
    const i64 c = 4, m = 4;
    auto p = random_params(c, 2, m, 800);
    auto x = random_tensor<double>(Shape{1, c, 8, 8}, 41);
    CHECK_THROWS_AS(window_attention(x, p, m, 2, m), Error);      // shift out of range
    CHECK_THROWS_AS(window_attention(x, p, m, 3, 0), Error);      // heads do not divide c
    auto odd = random_tensor<double>(Shape{1, c, 10, 8}, 42);
    CHECK_THROWS_AS(window_attention(odd, p, m, 2, 0), Error);    // height not divisible
    auto bad = p;
    bad.bias_table = random_tensor<double>(Shape{2, 9}, 43);      // wrong span for m=4
    CHECK_THROWS_AS(window_attention(x, bad, m, 2, 0), Error);
}
