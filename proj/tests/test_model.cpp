// Model configuration, parameter registry, deterministic initialization,
// and end-to-end forward behavior.

#include <cmath>
#include <set>
#include <string>

#include "doctest.h"
#include "gshdr/model.hpp"
#include "support/checks.hpp"

using namespace gshdr;
using testsup::bit_equal;
using testsup::random_tensor;

TEST_CASE("config presets validate and derived sizes are right") {
    for (auto cfg : {ModelConfig::full(), ModelConfig::desk(), ModelConfig::tiny()})
        CHECK_NOTHROW(validate(cfg));

    auto full = ModelConfig::full();
    CHECK(full.base_width == 60);
    CHECK(full.width_at(0) == 60);
    CHECK(full.width_at(3) == 480);
    CHECK(full.pad_multiple() == 64);

    auto tiny = ModelConfig::tiny();
    CHECK(tiny.base_width == 8);
    CHECK(tiny.window == 4);
    CHECK(tiny.pad_multiple() == 32);
}

TEST_CASE("config validation rejects divisibility violations") {
    auto cfg = ModelConfig::desk();
    SUBCASE("width of one leaves no room for a head dimension") {
        cfg.base_width = 1;
        CHECK_THROWS_AS(validate(cfg), Error);
    }
    SUBCASE("heads must divide the scale width") {
        cfg.heads = {1, 2, 4, 7};  // 7 does not divide 128
        CHECK_THROWS_AS(validate(cfg), Error);
    }
    SUBCASE("head dimension below two") {
        cfg.base_width = 2;
        cfg.heads = {2, 2, 2, 2};  // scale 0 width 2 -> d_head 1
        CHECK_THROWS_AS(validate(cfg), Error);
    }
    SUBCASE("scale count is fixed") {
        cfg.scale_count = 3;
        CHECK_THROWS_AS(validate(cfg), Error);
    }
    SUBCASE("window must be positive") {
        cfg.window = 0;
        CHECK_THROWS_AS(validate(cfg), Error);
    }
    SUBCASE("negative unit count") {
        cfg.unit_counts[2] = -1;
        CHECK_THROWS_AS(validate(cfg), Error);
    }
}

TEST_CASE("gating mode string round trip") {
    CHECK(gating_from_string("all") == GatingMode::All);
    CHECK(gating_from_string("first") == GatingMode::First);
    CHECK(gating_from_string("none") == GatingMode::None);
    CHECK(std::string(to_string(GatingMode::First)) == "first");
    CHECK_THROWS_AS(gating_from_string("some"), Error);
}

TEST_CASE("parameter counts match the closed-form tally") {
    // Independently derived from the layer shapes: embeddings, per-scale
    // attention/feed-forward stacks, scale changers, skip fusions, and the
    // output head.
    struct Want {
        ModelConfig cfg;
        i64 count;
    };
    auto desk_none = ModelConfig::desk();
    desk_none.gating = GatingMode::None;
    auto desk_first = ModelConfig::desk();
    desk_first.gating = GatingMode::First;
    auto tiny_all = ModelConfig::tiny();
    const Want wants[] = {
        {ModelConfig::desk(), 2455815},
        {desk_none, 1965191},
        {desk_first, 1969927},
        {tiny_all, 245611},
        {ModelConfig::full(), 32847363},
    };
    for (const Want& w : wants) {
        auto params = init_parameters<float>(w.cfg, 1);
        auto set = parameter_set(params, w.cfg);
        CHECK(set.total_elements() == w.count);
    }
}

TEST_CASE("gated configurations strictly grow the parameter count") {
    auto all = ModelConfig::tiny();
    auto first = all;
    first.gating = GatingMode::First;
    auto none = all;
    none.gating = GatingMode::None;
    auto pa = init_parameters<float>(all, 0);
    auto pf = init_parameters<float>(first, 0);
    auto pn = init_parameters<float>(none, 0);
    const i64 na = parameter_set(pa, all).total_elements();
    const i64 nf = parameter_set(pf, first).total_elements();
    const i64 nn = parameter_set(pn, none).total_elements();
    CHECK(na > nf);
    CHECK(nf > nn);
}

TEST_CASE("initialization is deterministic in the seed") {
    auto cfg = ModelConfig::tiny();
    auto a = init_parameters<float>(cfg, 7);
    auto b = init_parameters<float>(cfg, 7);
    auto c = init_parameters<float>(cfg, 8);
    CHECK(bit_equal(a.embed_w, b.embed_w));
    CHECK(bit_equal(a.enc[0].units[0].attn1.wq, b.enc[0].units[0].attn1.wq));
    CHECK(bit_equal(a.head_w, b.head_w));
    CHECK_FALSE(bit_equal(a.embed_w, c.embed_w));
}

TEST_CASE("initialization statistics") {
    auto cfg = ModelConfig::desk();
    auto p = init_parameters<float>(cfg, 3);

    // Attention projections: truncated normal, std 0.02, cut at two sigma.
    const Tensor<float>& wq = p.enc[3].units[0].attn1.wq;  // 128x128, plenty of samples
    double sum = 0, sq = 0, mx = 0;
    for (i64 i = 0; i < wq.numel(); ++i) {
        sum += wq[i];
        sq += double(wq[i]) * wq[i];
        mx = std::max(mx, std::abs(double(wq[i])));
    }
    const double mean = sum / double(wq.numel());
    const double stdev = std::sqrt(sq / double(wq.numel()) - mean * mean);
    CHECK(std::abs(mean) < 0.002);
    CHECK(stdev == doctest::Approx(0.02).epsilon(0.15));
    CHECK(mx <= 0.04 + 1e-7);

    // Norm gains start at one, biases and shifts at zero.
    for (i64 i = 0; i < 16; ++i) {
        CHECK(p.enc[0].units[0].norm1_gamma[i] == 1.0f);
        CHECK(p.enc[0].units[0].norm1_beta[i] == 0.0f);
        CHECK(p.embed_b[i] == 0.0f);
    }
}

TEST_CASE("parameter names are unique and in a stable order") {
    auto cfg = ModelConfig::tiny();
    auto p = init_parameters<float>(cfg, 0);
    auto set = parameter_set(p, cfg);
    std::set<std::string> names;
    std::string first, last;
    for (const auto& [name, t] : set) {
        CHECK(t.defined());
        if (first.empty()) first = name;
        last = name;
        CHECK(names.insert(name).second);
    }
    CHECK(first == "embed.w");
    CHECK(last == "head.b");
    CHECK(set.contains("enc1.u1.attn1.wq"));
    CHECK(set.contains("dec3.u1.ffn2.out.w"));
    CHECK(set.contains("refine.conv.w"));
    CHECK_FALSE(set.contains("enc5.u1.attn1.wq"));
    CHECK_THROWS_AS(set.get("not-a-parameter"), Error);
}

TEST_CASE("parameter set shares storage with the tree") {
    auto cfg = ModelConfig::tiny();
    auto p = init_parameters<float>(cfg, 0);
    auto set = parameter_set(p, cfg);
    set.get("embed.w")[0] = 42.0f;
    CHECK(p.embed_w[0] == 42.0f);
}

TEST_CASE("forward maps stacked exposures to an in-range prediction") {
    auto cfg = ModelConfig::tiny();
    auto p = init_parameters<float>(cfg, 5);
    auto x = random_tensor<float>(Shape{1, 18, 64, 64}, 100, 0.0, 1.0);
    auto x2 = random_tensor<float>(Shape{1, 6, 64, 64}, 101, 0.0, 1.0);
    auto y = hdr_forward(x, x2, p, cfg);
    REQUIRE(y.shape() == Shape{1, 3, 64, 64});
    for (i64 i = 0; i < y.numel(); ++i) {
        CHECK(y[i] > 0.0f);
        CHECK(y[i] < 1.0f);
    }
}

TEST_CASE("forward pads and crops sizes that are not pyramid multiples") {
    auto cfg = ModelConfig::tiny();
    auto p = init_parameters<float>(cfg, 6);
    auto x = random_tensor<float>(Shape{1, 18, 75, 100}, 102, 0.0, 1.0);
    auto x2 = random_tensor<float>(Shape{1, 6, 75, 100}, 103, 0.0, 1.0);
    auto y = hdr_forward(x, x2, p, cfg);
    REQUIRE(y.shape() == Shape{1, 3, 75, 100});
    for (i64 i = 0; i < y.numel(); ++i) {
        CHECK(y[i] > 0.0f);
        CHECK(y[i] < 1.0f);
    }
}

TEST_CASE("forward is deterministic") {
    auto cfg = ModelConfig::tiny();
    auto p = init_parameters<float>(cfg, 7);
    auto x = random_tensor<float>(Shape{1, 18, 32, 32}, 104, 0.0, 1.0);
    auto x2 = random_tensor<float>(Shape{1, 6, 32, 32}, 105, 0.0, 1.0);
    CHECK(bit_equal(hdr_forward(x, x2, p, cfg), hdr_forward(x, x2, p, cfg)));
}

TEST_CASE("zeroed head produces a constant image") {
    auto cfg = ModelConfig::tiny();
    auto p = init_parameters<float>(cfg, 8);
    for (i64 i = 0; i < p.head_w.numel(); ++i) p.head_w[i] = 0.0f;
    for (i64 i = 0; i < 3; ++i) p.head_b[i] = float(i);
    auto x = random_tensor<float>(Shape{1, 18, 32, 32}, 106, 0.0, 1.0);
    auto x2 = random_tensor<float>(Shape{1, 6, 32, 32}, 107, 0.0, 1.0);
    auto y = hdr_forward(x, x2, p, cfg);
    for (i64 c = 0; c < 3; ++c) {
        const float want = 1.0f / (1.0f + std::exp(-float(c)));
        for (i64 i = 0; i < 32 * 32; ++i) CHECK(y[c * 32 * 32 + i] == want);
    }
}

TEST_CASE("forward input validation") {
    auto cfg = ModelConfig::tiny();
    auto p = init_parameters<float>(cfg, 9);
    auto x = random_tensor<float>(Shape{1, 18, 32, 32}, 108);
    auto x2 = random_tensor<float>(Shape{1, 6, 32, 32}, 109);
    SUBCASE("wrong stack channel count") {
        auto bad = random_tensor<float>(Shape{1, 17, 32, 32}, 110);
        CHECK_THROWS_AS(hdr_forward(bad, x2, p, cfg), Error);
    }
    SUBCASE("wrong reference channel count") {
        auto bad = random_tensor<float>(Shape{1, 5, 32, 32}, 111);
        CHECK_THROWS_AS(hdr_forward(x, bad, p, cfg), Error);
    }
    SUBCASE("mismatched spatial sizes") {
        auto bad = random_tensor<float>(Shape{1, 6, 16, 32}, 112);
        CHECK_THROWS_AS(hdr_forward(x, bad, p, cfg), Error);
    }
    SUBCASE("non-finite input values") {
        x[5] = std::numeric_limits<float>::quiet_NaN();
        try {
            hdr_forward(x, x2, p, cfg);
            FAIL("expected a value error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Value);
            CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
        }
    }
    SUBCASE("input below the minimum size") {
        auto sx = random_tensor<float>(Shape{1, 18, 4, 4}, 113);
        auto sx2 = random_tensor<float>(Shape{1, 6, 4, 4}, 114);
        CHECK_THROWS_AS(hdr_forward(sx, sx2, p, cfg), Error);
    }
}

TEST_CASE("window footprints double per scale") {
    auto cfg = ModelConfig::full();
    CHECK(window_footprints(cfg) == std::vector<i64>{8, 16, 32, 64});
    CHECK(window_footprints(ModelConfig::tiny()) == std::vector<i64>{4, 8, 16, 32});
}
