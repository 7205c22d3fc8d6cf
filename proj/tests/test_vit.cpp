#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "mmpkd/rng.hpp"
#include "mmpkd/vit.hpp"
#include "temp_dir.hpp"

using namespace mmpkd;
using namespace mmpkd::student;

namespace {

VitConfig tiny(bool zero_head = true) {
    VitConfig c;
    c.image_height = c.image_width = 16;
    c.patch = 4;
    c.dim = 16;
    c.depth = 2;
    c.heads = 2;
    c.mlp_hidden = 32;
    c.zero_head = zero_head;
    return c;
}

Image random_image(Rng& rng, std::size_t h, std::size_t w) {
    Image img(h, w);
    for (auto& v : img.values) v = rng.uniform();
    return img;
}

}  // namespace

TEST_CASE("config validation") {
    auto c = tiny();
    c.patch = 5;
    CHECK_THROWS_AS(StudentViT(c, 0), std::invalid_argument);
    c = tiny();
    c.heads = 3;
    CHECK_THROWS_AS(StudentViT(c, 0), std::invalid_argument);
    StudentViT m(tiny(), 0);
    CHECK_THROWS_AS(m.forward(std::vector<Image>{Image(8, 8)}), std::invalid_argument);
}

TEST_CASE("attention rows are distributions") {
    StudentViT m(tiny(false), 3);
    Rng rng(1);
    std::vector<Image> batch;
    for (int i = 0; i < 100; ++i) batch.push_back(random_image(rng, 16, 16));
    // scale up some weights so attention is far from uniform
    for (auto& v : m.parameter("blocks.0.attn.qkv.weight").mutable_data()) v *= 20.0;
    const auto r = m.forward(batch, true);
    REQUIRE(r.attention.size() == batch.size());
    double worst = 0.0;
    for (const auto& rec : r.attention) {
        REQUIRE(rec.layers.size() == 2);
        for (std::size_t l = 0; l < 2; ++l)
            for (std::size_t h = 0; h < rec.heads; ++h)
                for (std::size_t q = 0; q < rec.tokens; ++q) {
                    double s = 0.0;
                    for (std::size_t k = 0; k < rec.tokens; ++k) {
                        const double a = rec.at(l, h, q, k);
                        CHECK(a >= 0.0);
                        s += a;
                    }
                    worst = std::max(worst, std::abs(s - 1.0));
                }
    }
    CHECK(worst <= 1e-9);
}

TEST_CASE("zero head gives logit 0") {
    StudentViT m(tiny(true), 9);
    Rng rng(2);
    for (int i = 0; i < 5; ++i) CHECK(m.infer(random_image(rng, 16, 16)).first == 0.0);
}

TEST_CASE("swapping two patches together with their positional rows leaves the logit unchanged") {
    StudentViT m(tiny(false), 5);
    Rng rng(7);
    const auto img = random_image(rng, 16, 16);
    const double before = m.infer(img).first;
    CHECK(before != 0.0);

    // patches (row 0, col 1) and (row 2, col 3) in a 4x4 grid
    const std::size_t pa = 1, pb = 2 * 4 + 3;
    auto swapped = img;
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) std::swap(swapped(0 + y, 4 + x), swapped(8 + y, 12 + x));
    auto pos = m.parameter("pos_embed").mutable_data();
    const std::size_t D = 16;
    std::swap_ranges(pos.begin() + static_cast<std::ptrdiff_t>((1 + pa) * D),
                     pos.begin() + static_cast<std::ptrdiff_t>((2 + pa) * D),
                     pos.begin() + static_cast<std::ptrdiff_t>((1 + pb) * D));
    CHECK(std::abs(m.infer(swapped).first - before) <= 1e-9);
}

TEST_CASE("same seed gives identical weights and maps") {
    StudentViT a(tiny(false), 11), b(tiny(false), 11), c(tiny(false), 12);
    CHECK(a.weight_bytes() == b.weight_bytes());
    CHECK(a.weight_bytes() != c.weight_bytes());
    Rng rng(3);
    const auto img = random_image(rng, 16, 16);
    const auto ma = extract_attention_map(a.infer(img).second);
    const auto mb = extract_attention_map(b.infer(img).second);
    CHECK(ma.grid == mb.grid);
    CHECK(ma.normalized == mb.normalized);
}

TEST_CASE("init statistics") {
    StudentViT m(VitConfig{}, 1);
    CHECK(m.config().tokens() == 65);
    for (double v : m.parameter("norm.weight").data()) CHECK(v == 1.0);
    for (double v : m.parameter("blocks.3.mlp.fc1.bias").data()) CHECK(v == 0.0);
    for (double v : m.parameter("blocks.3.mlp.fc1.weight").data()) CHECK(std::abs(v) <= 0.04);
}

TEST_CASE("checkpoint round trip") {
    testing::TempDir tmp;
    StudentViT m(tiny(false), 4);
    m.save(tmp.path() / "m.ckpt");
    const auto back = StudentViT::load(tmp.path() / "m.ckpt");
    CHECK(back.config() == m.config());
    CHECK(back.weight_bytes() == m.weight_bytes());
    Rng rng(5);
    const auto img = random_image(rng, 16, 16);
    CHECK(back.infer(img).first == m.infer(img).first);

    std::ofstream(tmp.path() / "bad.ckpt", std::ios::binary) << "NOTACKPT";
    CHECK_THROWS(StudentViT::load(tmp.path() / "bad.ckpt"));
}

TEST_CASE("attention map extraction") {
    SUBCASE("shape contract") {
        StudentViT m(tiny(false), 2);
        Rng rng(1);
        const auto rec = m.infer(random_image(rng, 16, 16)).second;
        for (auto method : {ExtractionMethod::LastCls, ExtractionMethod::Rollout}) {
            const auto am = extract_attention_map(rec, method);
            CHECK(am.grid.height == 4);
            CHECK(am.grid.width == 4);
            CHECK(am.normalized.height == 16);
            CHECK(am.normalized.width == 16);
            CHECK_FALSE(am.constant);
            const auto [lo, hi] = std::minmax_element(am.normalized.values.begin(), am.normalized.values.end());
            CHECK(*lo == 0.0);
            CHECK(*hi == 1.0);
        }
    }

    SUBCASE("uniform attention is flagged constant") {
        AttentionRecord rec{1, 5, 2, 2, 8, 8, {std::vector<double>(25, 0.2)}};
        for (auto method : {ExtractionMethod::LastCls, ExtractionMethod::Rollout}) {
            const auto am = extract_attention_map(rec, method);
            CHECK(am.constant);
            for (double v : am.normalized.values) CHECK(v == 0.5);
        }
    }

    SUBCASE("rollout on a 3-token toy") {
        // one head, one layer, CLS + 2 patches on a 1x2 grid
        AttentionRecord rec{1, 3, 1, 2, 1, 2, {{0.2, 0.3, 0.5, 0.1, 0.6, 0.3, 0.4, 0.4, 0.2}}};
        const auto am = extract_attention_map(rec, ExtractionMethod::Rollout);
        // 0.5*[0.2,0.3,0.5] + 0.5*[1,0,0] = [0.6, 0.15, 0.25]
        CHECK(std::abs(am.grid.values[0] - 0.15) < 1e-15);
        CHECK(std::abs(am.grid.values[1] - 0.25) < 1e-15);
        const auto last = extract_attention_map(rec, ExtractionMethod::LastCls);
        CHECK(last.grid.values == std::vector<double>{0.3, 0.5});
    }

    SUBCASE("two-layer rollout multiplies through") {
        // identity-like second layer leaves the first layer's result
        AttentionRecord rec{1, 3, 1, 2, 1, 2,
                            {{0.2, 0.3, 0.5, 0.1, 0.6, 0.3, 0.4, 0.4, 0.2}, {1, 0, 0, 0, 1, 0, 0, 0, 1}}};
        const auto am = extract_attention_map(rec, ExtractionMethod::Rollout);
        CHECK(std::abs(am.grid.values[0] - 0.15) < 1e-15);
        CHECK(std::abs(am.grid.values[1] - 0.25) < 1e-15);
    }

    CHECK_THROWS_AS(parse_method("gradcam"), std::invalid_argument);
    CHECK(parse_method("rollout") == ExtractionMethod::Rollout);
}

TEST_CASE("upsampling") {
    SUBCASE("ramp") {
        Grid<double> g(2, 2);
        g.values = {0, 1, 0, 1};
        const auto up = upsample_map(g, 8, 8);
        for (std::size_t y = 0; y < 8; ++y) {
            CHECK(up.map(y, 0) == 0.0);
            CHECK(up.map(y, 7) == 1.0);
            for (std::size_t x = 1; x < 8; ++x) CHECK(up.map(y, x) > up.map(y, x - 1));
        }
    }

    SUBCASE("positive affine rescaling is absorbed") {
        Rng rng(6);
        for (int i = 0; i < 50; ++i) {
            Grid<double> g(4, 4);
            for (auto& v : g.values) v = rng.uniform();
            auto h = g;
            const double a = rng.uniform(0.1, 50.0), b = rng.uniform(-5.0, 5.0);
            for (auto& v : h.values) v = a * v + b;
            const auto ug = upsample_map(g, 16, 16), uh = upsample_map(h, 16, 16);
            double worst = 0.0;
            for (std::size_t k = 0; k < ug.map.size(); ++k)
                worst = std::max(worst, std::abs(ug.map.values[k] - uh.map.values[k]));
            CHECK(worst <= 1e-12);
            const auto am = std::max_element(ug.map.values.begin(), ug.map.values.end()) - ug.map.values.begin();
            const auto bm = std::max_element(uh.map.values.begin(), uh.map.values.end()) - uh.map.values.begin();
            CHECK(am == bm);
        }
    }

    SUBCASE("scale 1 keeps the argmax") {
        Grid<double> g(3, 5);
        Rng rng(2);
        for (auto& v : g.values) v = rng.uniform();
        const auto up = upsample_map(g, 3, 5);
        CHECK(std::max_element(up.map.values.begin(), up.map.values.end()) - up.map.values.begin() ==
              std::max_element(g.values.begin(), g.values.end()) - g.values.begin());
    }

    SUBCASE("constant and non-finite grids") {
        Grid<double> g(2, 3, 0.7);
        const auto up = upsample_map(g, 6, 9);
        CHECK(up.constant);
        for (double v : up.map.values) CHECK(v == 0.5);
        g.values[1] = std::nan("");
        CHECK_THROWS_AS(upsample_map(g, 6, 9), std::invalid_argument);
    }
}
