// Copyright (C) 2026 The stylemask Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "stylemask/toy.hpp"

using namespace stylemask;
namespace st = stylemask::testing;

namespace {

constexpr std::size_t kQuadrantCount = 4;

/// Quadrant index (backdrop, disc, stripes, texture) of every pixel whose
/// value differs between a and b.
std::set<std::size_t> changed_quadrants(const Image& a, const Image& b) {
    std::set<std::size_t> out;
    const std::size_t q = a.height / 2;
    for (std::size_t y = 0; y < a.height; ++y)
        for (std::size_t x = 0; x < a.width; ++x)
            for (std::size_t k = 0; k < 3; ++k)
                if (a.at(y, x, k) != b.at(y, x, k))
                    out.insert((y >= q ? 2 : 0) + (x >= q ? 1 : 0));
    return out;
}

/// Statistic the scorer should read, written out from the image definition.
double pixel_statistic(const Image& img, const std::string& region) {
    const std::size_t q = img.height / 2;
    const std::size_t oy = region == "stripes" ? q : 0;
    const std::size_t ox = region == "disc" ? q : 0;
    double total = 0.0;
    for (std::size_t y = oy; y < oy + q; ++y)
        for (std::size_t x = ox; x < ox + q; ++x)
            total += region == "backdrop" ? img.at(y, x, 2) - img.at(y, x, 0)
                                          : (img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0;
    return total / static_cast<double>(q * q);
}

}  // namespace

TEST(ToyWorld, StandardLayout) {
    const auto w = ToyWorld::standard();
    EXPECT_EQ(w.n_channels, 32u);
    EXPECT_EQ(w.attributes.size(), 3u);
    const auto ed = w.editable();
    std::set<std::size_t> planted;
    for (const auto& a : w.attributes) {
        EXPECT_EQ(a.channels.size(), 4u);
        for (std::size_t c : a.channels) {
            EXPECT_TRUE(ed[c]);
            EXPECT_TRUE(planted.insert(c).second);
        }
    }
    EXPECT_EQ(w.texture_channels().size(), 32u - 4u - 12u);
}

TEST(ToyWorld, ManifestRoundTrip) {
    const auto w = ToyWorld::standard();
    const auto m = w.manifest();
    EXPECT_NO_THROW(m.validate());
    EXPECT_EQ(ToyWorld::from_manifest(m), w);
    EXPECT_EQ(manifest_from_json(to_json(m)), m);
    EXPECT_EQ(m.editable(), w.editable());
}

TEST(ToyWorld, ValidationRejectsOverlapsAndFrozenPlants) {
    auto w = ToyWorld::standard();
    w.attributes[1].channels.push_back(3);
    EXPECT_THROW(w.validate(), InvalidInput);
    w = ToyWorld::standard();
    w.attributes[0].channels.push_back(7);
    EXPECT_THROW(w.validate(), InvalidInput);
    w = ToyWorld::standard();
    w.attributes[2].entangled.push_back(1);
    EXPECT_THROW(w.validate(), InvalidInput);
    w = ToyWorld::standard();
    w.attributes[2].entangled.push_back(0);
    EXPECT_THROW(w.validate(), InvalidInput);
}

TEST(ToyGenerator, Deterministic) {
    const auto& r = st::rig();
    const auto s = r.generator.sample_style(17);
    EXPECT_EQ(s, r.generator.sample_style(17));
    EXPECT_EQ(r.generator.synthesize(s), r.generator.synthesize(s));
    EXPECT_NE(s, r.generator.sample_style(18));
}

TEST(ToyGenerator, PoseLandsInFrozenChannels) {
    const auto& r = st::rig();
    const Latent l = r.generator.sample_latent(5);
    const auto s = r.generator.to_style(l);
    EXPECT_EQ(s.values[r.world.yaw_channel], l.pose[0]);
    EXPECT_EQ(s.values[r.world.pitch_channel], l.pose[1]);
    EXPECT_FALSE(s.editable[r.world.yaw_channel]);
}

TEST(ToyGenerator, PoseWarpsTheView) {
    const auto& r = st::rig();
    auto s = r.generator.sample_style(3);
    const Image before = r.generator.synthesize(s);
    s.values[r.world.yaw_channel] += 0.3;
    const auto changed = changed_quadrants(before, r.generator.synthesize(s));
    EXPECT_TRUE(changed.count(2) && changed.count(3));
}

TEST(ToyGenerator, RejectsWrongLength) {
    const auto& r = st::rig();
    EXPECT_THROW(r.generator.synthesize(StyleCode({1.0, 2.0}, {true, true})), InvalidInput);
}

// Raising an attribute's planted channels only changes that attribute's quadrant.
TEST(ToyGenerator, PlantedChannelsAreLocalized) {
    const auto& r = st::rig();
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 10; ++trial) {
        const auto s = r.generator.sample_style(rng());
        const Image base = r.generator.synthesize(s);
        for (const auto& a : r.world.attributes) {
            auto t = s;
            for (std::size_t c : a.channels)
                t.values[c] += 0.7;
            const auto changed = changed_quadrants(base, r.generator.synthesize(t));
            const auto expected = r.segmenter.region_index(toy_region(a.property));
            EXPECT_EQ(changed, std::set<std::size_t>{expected}) << a.name;
        }
        for (std::size_t c : r.world.texture_channels()) {
            auto t = s;
            t.values[c] += 0.7;
            const auto changed = changed_quadrants(base, r.generator.synthesize(t));
            EXPECT_TRUE(changed.count(3)) << c;
        }
    }
}

TEST(ToyGenerator, EntangledChannelsTouchTextureAndTheirProperty) {
    const auto& r = st::rig();
    const auto s = r.generator.sample_style(2);
    const Image base = r.generator.synthesize(s);
    for (const auto& a : r.world.attributes)
        for (std::size_t c : a.entangled) {
            auto t = s;
            t.values[c] += 0.7;
            const auto changed = changed_quadrants(base, r.generator.synthesize(t));
            EXPECT_TRUE(changed.count(3));
            EXPECT_TRUE(changed.count(r.segmenter.region_index(toy_region(a.property))));
        }
}

TEST(ToyGenerator, PixelsStayInUnitRange) {
    const auto& r = st::rig();
    for (std::uint64_t seed = 0; seed < 20; ++seed)
        for (double v : r.generator.synthesize(r.generator.sample_style(seed)).pixels) {
            ASSERT_GE(v, 0.0);
            ASSERT_LE(v, 1.0);
        }
}

// <G, I(s)> differentiated by central differences on every channel.
TEST(ToyGenerator, VjpMatchesFiniteDifferences) {
    const auto& r = st::rig();
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 3; ++trial) {
        const auto s = r.generator.sample_style(rng());
        const Image g = st::random_image(rng, 64, 64, 3);
        const auto analytic = r.generator.synthesize_vjp(s, g);
        auto inner = [&](const StyleCode& x) {
            const Image img = r.generator.synthesize(x);
            double total = 0.0;
            for (std::size_t i = 0; i < img.pixels.size(); ++i)
                total += g.pixels[i] * img.pixels[i];
            return total;
        };
        const double h = 1e-4;
        for (std::size_t c = 0; c < s.size(); ++c) {
            auto up = s, dn = s;
            up.values[c] += h;
            dn.values[c] -= h;
            const double fd = (inner(up) - inner(dn)) / (2 * h);
            EXPECT_NEAR(analytic[c], fd, 1e-4 * std::max(1.0, std::abs(fd))) << "channel " << c;
        }
    }
}

TEST(ToySegmenter, MasksTileTheImage) {
    const auto& r = st::rig();
    const auto masks = r.segmenter.segment(Image(64, 64, 3));
    ASSERT_EQ(masks.size(), kQuadrantCount);
    EXPECT_EQ(r.segmenter.regions(), (std::vector<std::string>{"backdrop", "disc", "stripes", "texture"}));
    for (std::size_t p = 0; p < 64 * 64; ++p) {
        int covered = 0;
        for (const auto& m : masks) {
            ASSERT_LE(m.bits[p], 1);
            covered += m.bits[p];
        }
        ASSERT_EQ(covered, 1);
    }
    EXPECT_THROW(r.segmenter.segment(Image(32, 32, 3)), InvalidInput);
    EXPECT_THROW(r.segmenter.region_index("sky"), InvalidInput);
}

TEST(ToyScorer, CanonicalImageScoresHighest) {
    const auto& r = st::rig();
    for (const auto& a : r.world.attributes) {
        const auto spec_it = std::find_if(r.specs.begin(), r.specs.end(), [&](auto& s) { return s.name == a.name; });
        for (const auto& g : spec_it->groups) {
            const auto texts = g.rendered();
            for (std::size_t j = 0; j < g.phrases.size(); ++j) {
                const Image img = r.generator.render_property(a.property, a.lexicon.at(g.phrases[j]));
                const auto scores = r.scorer.score(img, texts);
                const auto best = std::max_element(scores.begin(), scores.end()) - scores.begin();
                EXPECT_EQ(static_cast<std::size_t>(best), j) << g.phrases[j];
            }
        }
    }
}

TEST(ToyScorer, MatchesPixelStatisticOracle) {
    const auto& r = st::rig();
    const double sharpness = r.world.scorer_sharpness;
    for (const auto& a : r.world.attributes) {
        const std::string region = toy_region(a.property);
        const double lo = pixel_statistic(r.generator.render_property(a.property, 0.1), region);
        const double hi = pixel_statistic(r.generator.render_property(a.property, 0.9), region);
        const double spacing = std::abs(hi - lo) / 2.0;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const Image img = r.generator.synthesize(r.generator.sample_style(seed));
            const double stat = pixel_statistic(img, region);
            for (const auto& [phrase, level] : a.lexicon) {
                const double canonical = pixel_statistic(r.generator.render_property(a.property, level), region);
                const double z = (stat - canonical) / spacing;
                const std::vector<std::string> text = {"a toy scene with " + phrase};
                EXPECT_NEAR(r.scorer.score(img, text)[0], -sharpness * z * z, 1e-10) << phrase;
            }
        }
    }
}

TEST(ToyScorer, IdenticalRegionGivesIdenticalScores) {
    const auto& r = st::rig();
    Image a = r.generator.synthesize(r.generator.sample_style(1));
    Image b = a;
    for (std::size_t y = 32; y < 64; ++y)  // scribble over the texture quadrant
        for (std::size_t x = 32; x < 64; ++x)
            b.at(y, x, 0) = 1.0 - b.at(y, x, 0);
    for (const auto& spec : r.specs)
        for (const auto& g : spec.groups)
            EXPECT_EQ(r.scorer.score(a, g.rendered()), r.scorer.score(b, g.rendered()));
}

TEST(ToyScorer, UnknownPhraseOrImageIsUnavailable) {
    const auto& r = st::rig();
    const std::vector<std::string> bad = {"a toy scene with a moustache"};
    EXPECT_THROW(r.scorer.score(Image(64, 64, 3), bad), ScorerUnavailable);
    const std::vector<std::string> good = {"large disc"};
    EXPECT_THROW(r.scorer.score(Image(8, 8, 3), good), ScorerUnavailable);
}

TEST(ToyScorer, VjpMatchesFiniteDifferences) {
    const auto& r = st::rig();
    std::mt19937_64 rng(6);
    const Image img = r.generator.synthesize(r.generator.sample_style(9));
    const auto texts = r.specs[0].groups[0].rendered();
    std::vector<double> w = {0.7, -1.3, 0.4};
    const Image grad = r.scorer.score_vjp(img, texts, w);
    std::uniform_int_distribution<std::size_t> pick(0, img.pixels.size() - 1);
    for (int k = 0; k < 40; ++k) {
        const std::size_t i = pick(rng);
        Image up = img, dn = img;
        up.pixels[i] += 1e-4;
        dn.pixels[i] -= 1e-4;
        const auto su = r.scorer.score(up, texts);
        const auto sd = r.scorer.score(dn, texts);
        double fd = 0.0;
        for (std::size_t j = 0; j < w.size(); ++j)
            fd += w[j] * (su[j] - sd[j]) / 2e-4;
        EXPECT_NEAR(grad.pixels[i], fd, 1e-7 * std::max(1.0, std::abs(fd)));
    }
}

TEST(ToyBackends, ParameterHashesAreStable) {
    const st::ToyRig a, b;
    EXPECT_EQ(a.generator.parameter_hash(), b.generator.parameter_hash());
    EXPECT_EQ(a.scorer.parameter_hash(), b.scorer.parameter_hash());
    auto w = ToyWorld::standard();
    w.scorer_sharpness = 2.0;
    EXPECT_NE(ToyScorer(w).parameter_hash(), a.scorer.parameter_hash());
}
