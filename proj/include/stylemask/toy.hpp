// Copyright (C) 2026 The stylemask Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "stylemask/backends.hpp"
#include "stylemask/errors.hpp"
#include "stylemask/hash.hpp"
#include "stylemask/image.hpp"
#include "stylemask/qmm.hpp"

// Toy world: a deterministic, differentiable stand-in for a style-based
// generator with planted channel semantics.
//
// The image is split into four quadrants. Three of them each show one visual
// property driven by h = sigmoid(mean of that attribute's planted channels):
//
//   backdrop (top-left)     color blend red -> blue
//   disc     (top-right)    radius of a soft-edged disc
//   stripes  (bottom-left)  strength of a vertical stripe pattern
//
// The bottom-right "texture" quadrant is split into four tiles, each driven by a
// signed sum of the remaining editable channels. An attribute may also list
// entangled channels: texture channels that additionally nudge the attribute's
// level by a small weight while shifting the whole texture quadrant strongly,
// the kind of channel a background-preserving objective has to reject. Non-editable channels carry the
// camera pose (a horizontal/vertical phase warp of the stripe and texture
// patterns) and texture gain/offset, standing in for toRGB-style parameters.
// Every pixel is monotone in the one scalar that drives its quadrant (or tile),
// so pixel differences between two renders never change sign inside a region.

namespace stylemask {

enum class ToyProperty { backdrop_hue, disc_size, stripe_strength };

inline const char* to_string(ToyProperty p) {
    switch (p) {
        case ToyProperty::backdrop_hue: return "backdrop_hue";
        case ToyProperty::disc_size: return "disc_size";
        case ToyProperty::stripe_strength: return "stripe_strength";
    }
    return "?";
}

inline ToyProperty toy_property_from_string(const std::string& s) {
    if (s == "backdrop_hue") return ToyProperty::backdrop_hue;
    if (s == "disc_size") return ToyProperty::disc_size;
    if (s == "stripe_strength") return ToyProperty::stripe_strength;
    detail::throw_invalid("unknown toy property '", s, "'");
}

/// Region label of the quadrant that shows a property.
inline const char* toy_region(ToyProperty p) {
    switch (p) {
        case ToyProperty::backdrop_hue: return "backdrop";
        case ToyProperty::disc_size: return "disc";
        case ToyProperty::stripe_strength: return "stripes";
    }
    return "?";
}

inline constexpr std::array<const char*, 4> kToyRegions = {"backdrop", "disc", "stripes", "texture"};

struct ToyAttribute {
    std::string name;
    ToyProperty property = ToyProperty::backdrop_hue;
    std::vector<std::size_t> channels;
    /// phrase -> canonical property level h in (0, 1)
    std::map<std::string, double> lexicon;
    std::vector<std::size_t> entangled;

    bool operator==(const ToyAttribute&) const = default;
};

struct ToyWorld {
    std::string model_id = "toy-world/v1";
    std::size_t n_channels = 32;
    std::size_t image_size = 64;
    std::vector<ToyAttribute> attributes;
    std::vector<std::size_t> frozen;  // non-editable channels
    std::size_t yaw_channel = 7;
    std::size_t pitch_channel = 15;
    std::size_t texture_gain_channel = 23;
    std::size_t texture_offset_channel = 31;
    double style_gain = 2.5;
    double texture_coupling = 0.35;
    double entangled_level_weight = 0.025;
    double entangled_texture_weight = 1.0;
    double scorer_sharpness = 1.5;
    double disc_softness = 0.04;

    bool operator==(const ToyWorld&) const = default;

    /// 32 channels in four 8-channel blocks whose last channel is a frozen
    /// toRGB-like parameter; three attributes with four planted channels each.
    static ToyWorld standard() {
        ToyWorld w;
        w.frozen = {7, 15, 23, 31};
        w.attributes = {
            {"backdrop", ToyProperty::backdrop_hue, {3, 11, 19, 26},
             {{"red backdrop", 0.1}, {"violet backdrop", 0.5}, {"blue backdrop", 0.9}},
             {0}},
            {"disc", ToyProperty::disc_size, {1, 8, 14, 29},
             {{"small disc", 0.1}, {"medium disc", 0.5}, {"large disc", 0.9}},
             {10}},
            {"stripes", ToyProperty::stripe_strength, {5, 12, 22, 27},
             {{"faint stripes", 0.1}, {"moderate stripes", 0.5}, {"bold stripes", 0.9}},
             {20}},
        };
        w.attributes[0].lexicon.emplace("warm colors", 0.2);
        w.attributes[0].lexicon.emplace("cool colors", 0.8);
        return w;
    }

    std::vector<bool> editable() const {
        std::vector<bool> out(n_channels, true);
        for (std::size_t c : frozen)
            out[c] = false;
        return out;
    }

    /// Editable channels not planted in any attribute, ascending.
    std::vector<std::size_t> texture_channels() const {
        const auto ed = editable();
        std::vector<bool> planted(n_channels, false);
        for (const auto& a : attributes)
            for (std::size_t c : a.channels)
                planted[c] = true;
        std::vector<std::size_t> out;
        for (std::size_t c = 0; c < n_channels; ++c)
            if (ed[c] && !planted[c])
                out.push_back(c);
        return out;
    }

    std::optional<std::size_t> attribute_for(ToyProperty p) const {
        for (std::size_t i = 0; i < attributes.size(); ++i)
            if (attributes[i].property == p)
                return i;
        return std::nullopt;
    }

    void validate() const {
        if (n_channels == 0)
            detail::throw_invalid("toy world needs channels");
        if (image_size < 8 || image_size % 4 != 0)
            detail::throw_invalid("toy image size must be a multiple of 4 and at least 8");
        std::set<std::size_t> frozen_set(frozen.begin(), frozen.end());
        for (std::size_t c : frozen)
            if (c >= n_channels)
                detail::throw_invalid("frozen channel ", c, " out of range");
        const std::array<std::size_t, 4> roles = {yaw_channel, pitch_channel, texture_gain_channel,
                                                  texture_offset_channel};
        if (std::set<std::size_t>(roles.begin(), roles.end()).size() != roles.size())
            detail::throw_invalid("toy pose/texture role channels must be distinct");
        for (std::size_t c : roles)
            if (!frozen_set.count(c))
                detail::throw_invalid("toy role channel ", c, " must be non-editable");
        std::set<std::size_t> used;
        std::set<ToyProperty> props;
        for (const auto& a : attributes) {
            if (!props.insert(a.property).second)
                detail::throw_invalid("toy property ", to_string(a.property), " is planted twice");
            if (a.channels.empty())
                detail::throw_invalid("toy attribute '", a.name, "' has no planted channels");
            if (a.lexicon.size() < 2)
                detail::throw_invalid("toy attribute '", a.name, "' needs at least two lexicon phrases");
            for (std::size_t c : a.channels) {
                if (c >= n_channels)
                    detail::throw_invalid("planted channel ", c, " out of range");
                if (frozen_set.count(c))
                    detail::throw_invalid("planted channel ", c, " is not editable");
                if (!used.insert(c).second)
                    detail::throw_invalid("channel ", c, " is planted in more than one attribute");
            }
            for (const auto& [phrase, level] : a.lexicon)
                if (!(level > 0.0 && level < 1.0))
                    detail::throw_invalid("lexicon level for '", phrase, "' must lie in (0, 1)");
        }
        std::set<std::size_t> tangled;
        for (const auto& a : attributes)
            for (std::size_t c : a.entangled) {
                if (c >= n_channels || frozen_set.count(c))
                    detail::throw_invalid("entangled channel ", c, " must be an editable channel");
                if (used.count(c))
                    detail::throw_invalid("entangled channel ", c, " is also planted");
                if (!tangled.insert(c).second)
                    detail::throw_invalid("entangled channel ", c, " is listed twice");
            }
        if (attributes.empty())
            detail::throw_invalid("toy world needs at least one attribute");
    }

    BackendManifest manifest() const {
        validate();
        BackendManifest m;
        m.model_id = model_id;
        m.kind = "toy";
        m.n_channels = n_channels;
        m.image_height = image_size;
        m.image_width = image_size;
        m.image_channels = 3;
        const auto ed = editable();
        std::size_t start = 0;
        std::size_t block = 0;
        while (start < n_channels) {
            std::size_t end = start;
            while (end < n_channels && ed[end] == ed[start])
                ++end;
            m.layers.push_back({std::string("block") + std::to_string(block) + (ed[start] ? ".conv" : ".torgb"),
                                start, end - start, static_cast<bool>(ed[start])});
            if (!ed[start])
                ++block;
            start = end;
        }
        nlohmann::json attrs = nlohmann::json::array();
        for (const auto& a : attributes)
            attrs.push_back({{"name", a.name},
                             {"property", to_string(a.property)},
                             {"channels", a.channels},
                             {"lexicon", a.lexicon},
                             {"entangled", a.entangled}});
        m.params = {{"attributes", attrs},
                    {"yaw_channel", yaw_channel},
                    {"pitch_channel", pitch_channel},
                    {"texture_gain_channel", texture_gain_channel},
                    {"texture_offset_channel", texture_offset_channel},
                    {"style_gain", style_gain},
                    {"texture_coupling", texture_coupling},
                    {"entangled_level_weight", entangled_level_weight},
                    {"entangled_texture_weight", entangled_texture_weight},
                    {"scorer_sharpness", scorer_sharpness},
                    {"disc_softness", disc_softness}};
        return m;
    }

    static ToyWorld from_manifest(const BackendManifest& m) {
        if (m.kind != "toy")
            detail::throw_invalid("manifest kind '", m.kind, "' is not a toy world");
        if (m.image_height != m.image_width || m.image_channels != 3)
            detail::throw_invalid("toy world renders square RGB images");
        ToyWorld w;
        w.model_id = m.model_id;
        w.n_channels = m.n_channels;
        w.image_size = m.image_height;
        w.frozen.clear();
        const auto ed = m.editable();
        for (std::size_t c = 0; c < ed.size(); ++c)
            if (!ed[c])
                w.frozen.push_back(c);
        const auto& p = m.params;
        w.attributes.clear();
        for (const auto& a : p.at("attributes"))
            w.attributes.push_back({a.at("name").get<std::string>(),
                                    toy_property_from_string(a.at("property").get<std::string>()),
                                    a.at("channels").get<std::vector<std::size_t>>(),
                                    a.at("lexicon").get<std::map<std::string, double>>(),
                                    a.value("entangled", std::vector<std::size_t>{})});
        w.yaw_channel = p.at("yaw_channel").get<std::size_t>();
        w.pitch_channel = p.at("pitch_channel").get<std::size_t>();
        w.texture_gain_channel = p.at("texture_gain_channel").get<std::size_t>();
        w.texture_offset_channel = p.at("texture_offset_channel").get<std::size_t>();
        w.style_gain = p.value("style_gain", w.style_gain);
        w.texture_coupling = p.value("texture_coupling", w.texture_coupling);
        w.entangled_level_weight = p.value("entangled_level_weight", w.entangled_level_weight);
        w.entangled_texture_weight = p.value("entangled_texture_weight", w.entangled_texture_weight);
        w.scorer_sharpness = p.value("scorer_sharpness", w.scorer_sharpness);
        w.disc_softness = p.value("disc_softness", w.disc_softness);
        w.validate();
        return w;
    }
};

namespace toy_detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr double kPoseShift = 0.125;
inline constexpr std::array<double, 3> kBackdropA = {0.90, 0.35, 0.20};
inline constexpr std::array<double, 3> kBackdropB = {0.30, 0.50, 0.95};
inline constexpr std::array<double, 3> kDiscBg = {0.15, 0.20, 0.25};
inline constexpr std::array<double, 3> kDiscFg = {0.95, 0.85, 0.35};
inline constexpr double kDiscRadius0 = 0.12;
inline constexpr double kDiscRadiusSpan = 0.30;
inline constexpr double kStripeBase = 0.15;
inline constexpr double kStripeSpan = 0.70;
inline constexpr double kStripeFreq = 4.0;
inline constexpr std::array<std::array<double, 3>, 4> kTileTint = {{
    {0.90, 0.60, 0.40}, {0.50, 0.80, 0.60}, {0.60, 0.50, 0.90}, {0.85, 0.85, 0.50}}};

/// Scalar drivers derived from a style code.
struct Drivers {
    std::array<double, 3> level{0.5, 0.5, 0.5};  // h per property (default when unplanted)
    std::array<double, 4> tile{0.0, 0.0, 0.0, 0.0};
    double yaw = 0.0;
    double pitch = 0.0;
    double gain = 1.0;
    double offset = 0.0;
};

inline std::size_t prop_index(ToyProperty p) { return static_cast<std::size_t>(p); }

/// Renders (and optionally back-propagates through) the toy scene.
class Renderer {
public:
    explicit Renderer(const ToyWorld& w) : m_world(w), m_texture(w.texture_channels()) {}

    Drivers drivers(const StyleCode& s) const {
        Drivers d;
        for (const auto& a : m_world.attributes) {
            double mean = 0.0;
            for (std::size_t c : a.channels)
                mean += s.values[c];
            mean /= static_cast<double>(a.channels.size());
            for (std::size_t c : a.entangled)
                mean += m_world.entangled_level_weight * s.values[c];
            d.level[prop_index(a.property)] = sigmoid(mean);
        }
        for (std::size_t j = 0; j < m_texture.size(); ++j)
            d.tile[j % 4] += m_world.texture_coupling * tile_sign(j) * s.values[m_texture[j]];
        for (const auto& a : m_world.attributes)
            for (std::size_t c : a.entangled)
                for (double& t : d.tile)
                    t += m_world.entangled_texture_weight * s.values[c];
        d.yaw = s.values[m_world.yaw_channel];
        d.pitch = s.values[m_world.pitch_channel];
        d.gain = s.values[m_world.texture_gain_channel];
        d.offset = s.values[m_world.texture_offset_channel];
        return d;
    }

    /// Renders the image. When grad_image is given, also returns the gradient of
    /// <grad_image, image> with respect to every style channel.
    Image render(const StyleCode& s, const Image* grad_image, std::vector<double>* grad_style) const {
        const Drivers d = drivers(s);
        const std::size_t size = m_world.image_size;
        const std::size_t q = size / 2;
        Image img(size, size, 3);
        // accumulated adjoints of the drivers
        std::array<double, 3> g_level{};
        std::array<double, 4> g_tile{};
        double g_yaw = 0.0, g_pitch = 0.0, g_gain = 0.0, g_offset = 0.0;
        const bool back = grad_image != nullptr;
        const double phase_u = kPoseShift * d.yaw;
        const double phase_v = kPoseShift * d.pitch;

        for (std::size_t y = 0; y < size; ++y) {
            for (std::size_t x = 0; x < size; ++x) {
                const std::size_t ly = y % q;
                const std::size_t lx = x % q;
                const double u = (static_cast<double>(lx) + 0.5) / static_cast<double>(q);
                const double v = (static_cast<double>(ly) + 0.5) / static_cast<double>(q);
                const bool bottom = y >= q;
                const bool right = x >= q;
                auto grad = [&](std::size_t k) { return back ? grad_image->at(y, x, k) : 0.0; };

                if (!bottom && !right) {
                    const double h = d.level[0];
                    const double shade = 0.8 + 0.2 * (1.0 - v);
                    for (std::size_t k = 0; k < 3; ++k) {
                        img.at(y, x, k) = (kBackdropA[k] + h * (kBackdropB[k] - kBackdropA[k])) * shade;
                        g_level[0] += grad(k) * (kBackdropB[k] - kBackdropA[k]) * shade;
                    }
                } else if (!bottom && right) {
                    const double h = d.level[1];
                    const double radius = kDiscRadius0 + kDiscRadiusSpan * h;
                    const double dist = std::hypot(u - 0.5, v - 0.5);
                    const double e = sigmoid((radius - dist) / m_world.disc_softness);
                    const double de_dh = e * (1.0 - e) / m_world.disc_softness * kDiscRadiusSpan;
                    for (std::size_t k = 0; k < 3; ++k) {
                        img.at(y, x, k) = kDiscBg[k] + (kDiscFg[k] - kDiscBg[k]) * e;
                        g_level[1] += grad(k) * (kDiscFg[k] - kDiscBg[k]) * de_dh;
                    }
                } else if (bottom && !right) {
                    const double h = d.level[2];
                    const double arg = kTwoPi * kStripeFreq * (u + phase_u);
                    const double w = 0.5 + 0.5 * std::sin(arg);
                    const double value = kStripeBase + kStripeSpan * h * w;
                    double g = 0.0;
                    for (std::size_t k = 0; k < 3; ++k) {
                        img.at(y, x, k) = value;
                        g += grad(k);
                    }
                    g_level[2] += g * kStripeSpan * w;
                    g_yaw += g * kStripeSpan * h * 0.5 * std::cos(arg) * kTwoPi * kStripeFreq * kPoseShift;
                } else {
                    const std::size_t tile = (ly >= q / 2 ? 2 : 0) + (lx >= q / 2 ? 1 : 0);
                    const double au = kTwoPi * 2.0 * (u + phase_u);
                    const double av = kTwoPi * 2.0 * (v + phase_v);
                    const double base = std::sin(au) * std::cos(av);
                    const double ag = kTwoPi * 3.0 * (u + phase_u);
                    const double carrier = 0.75 + 0.25 * std::cos(ag);
                    const double z = d.gain * base + carrier * d.tile[tile] + 0.3 * d.offset;
                    const double sz = sigmoid(z);
                    double gz = 0.0;
                    for (std::size_t k = 0; k < 3; ++k) {
                        img.at(y, x, k) = kTileTint[tile][k] * sz;
                        gz += grad(k) * kTileTint[tile][k];
                    }
                    gz *= sz * (1.0 - sz);
                    g_tile[tile] += gz * carrier;
                    g_gain += gz * base;
                    g_offset += gz * 0.3;
                    const double dbase_du = kTwoPi * 2.0 * std::cos(au) * std::cos(av);
                    const double dbase_dv = -kTwoPi * 2.0 * std::sin(au) * std::sin(av);
                    const double dcarrier_du = -0.25 * kTwoPi * 3.0 * std::sin(ag);
                    g_yaw += gz * (d.gain * dbase_du + dcarrier_du * d.tile[tile]) * kPoseShift;
                    g_pitch += gz * d.gain * dbase_dv * kPoseShift;
                }
            }
        }

        if (back) {
            grad_style->assign(s.size(), 0.0);
            auto& gs = *grad_style;
            for (const auto& a : m_world.attributes) {
                const double h = d.level[prop_index(a.property)];
                const double per = g_level[prop_index(a.property)] * h * (1.0 - h) /
                                   static_cast<double>(a.channels.size());
                for (std::size_t c : a.channels)
                    gs[c] += per;
                const double g_tiles = g_tile[0] + g_tile[1] + g_tile[2] + g_tile[3];
                for (std::size_t c : a.entangled)
                    gs[c] += g_level[prop_index(a.property)] * h * (1.0 - h) * m_world.entangled_level_weight +
                             g_tiles * m_world.entangled_texture_weight;
            }
            for (std::size_t j = 0; j < m_texture.size(); ++j)
                gs[m_texture[j]] += g_tile[j % 4] * m_world.texture_coupling * tile_sign(j);
            gs[m_world.yaw_channel] += g_yaw;
            gs[m_world.pitch_channel] += g_pitch;
            gs[m_world.texture_gain_channel] += g_gain;
            gs[m_world.texture_offset_channel] += g_offset;
        }
        return img;
    }

private:
    static double tile_sign(std::size_t j) { return (j / 4) % 2 == 0 ? 1.0 : -1.0; }

    const ToyWorld& m_world;
    std::vector<std::size_t> m_texture;
};

/// Pixel statistic the toy scorer reads for a property, with its image gradient.
struct Statistic {
    ToyProperty property;
    std::size_t size;

    std::pair<std::size_t, std::size_t> origin() const {
        const std::size_t q = size / 2;
        switch (property) {
            case ToyProperty::backdrop_hue: return {0, 0};
            case ToyProperty::disc_size: return {0, q};
            case ToyProperty::stripe_strength: return {q, 0};
        }
        return {0, 0};
    }

    /// Per-channel weight of each region pixel in the statistic (before 1/N).
    std::array<double, 3> weights() const {
        if (property == ToyProperty::backdrop_hue)
            return {-1.0, 0.0, 1.0};  // blue minus red
        return {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};  // mean intensity
    }

    double value(const Image& img) const {
        const std::size_t q = size / 2;
        const auto [oy, ox] = origin();
        const auto w = weights();
        double total = 0.0;
        for (std::size_t y = oy; y < oy + q; ++y)
            for (std::size_t x = ox; x < ox + q; ++x)
                for (std::size_t k = 0; k < 3; ++k)
                    total += w[k] * img.at(y, x, k);
        return total / static_cast<double>(q * q);
    }

    void add_gradient(double g, Image& grad) const {
        const std::size_t q = size / 2;
        const auto [oy, ox] = origin();
        const auto w = weights();
        const double scale = g / static_cast<double>(q * q);
        for (std::size_t y = oy; y < oy + q; ++y)
            for (std::size_t x = ox; x < ox + q; ++x)
                for (std::size_t k = 0; k < 3; ++k)
                    grad.at(y, x, k) += scale * w[k];
    }
};

}  // namespace toy_detail

class ToyGenerator final : public GeneratorBackend {
public:
    explicit ToyGenerator(ToyWorld world)
        : m_world(std::move(world)), m_manifest(m_world.manifest()), m_renderer(m_world) {}
    ToyGenerator(const ToyGenerator&) = delete;
    ToyGenerator& operator=(const ToyGenerator&) = delete;

    const ToyWorld& world() const { return m_world; }
    const BackendManifest& manifest() const override { return m_manifest; }

    Latent sample_latent(std::uint64_t seed) const override {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal;
        std::uniform_real_distribution<double> uniform(-1.0, 1.0);
        Latent l;
        l.z.resize(m_world.n_channels);
        for (double& v : l.z)
            v = normal(rng);
        l.pose = {uniform(rng), uniform(rng)};
        return l;
    }

    /// Identity mapping network followed by a per-channel affine; pose lands in
    /// the frozen yaw/pitch channels.
    StyleCode to_style(const Latent& l) const override {
        if (l.z.size() != m_world.n_channels)
            detail::throw_invalid("toy latent has ", l.z.size(), " dims, expected ", m_world.n_channels);
        std::vector<double> values(m_world.n_channels);
        for (std::size_t i = 0; i < values.size(); ++i)
            values[i] = m_world.style_gain * l.z[i];
        values[m_world.yaw_channel] = l.pose[0];
        values[m_world.pitch_channel] = l.pose[1];
        values[m_world.texture_gain_channel] = 1.0 + 0.25 * l.z[m_world.texture_gain_channel];
        values[m_world.texture_offset_channel] = 0.25 * l.z[m_world.texture_offset_channel];
        return StyleCode(std::move(values), m_world.editable());
    }

    Image synthesize(const StyleCode& s) const override {
        check(s);
        return m_renderer.render(s, nullptr, nullptr);
    }

    bool differentiable() const override { return true; }

    std::vector<double> synthesize_vjp(const StyleCode& s, const Image& grad_image) const override {
        check(s);
        if (grad_image.height != m_world.image_size || grad_image.width != m_world.image_size ||
            grad_image.channels != 3)
            detail::throw_invalid("image gradient has the wrong shape");
        std::vector<double> out;
        m_renderer.render(s, &grad_image, &out);
        return out;
    }

    std::string parameter_hash() const override { return sha256_hex(to_json(m_manifest).dump()); }

    /// Renders a standalone image of one property at level h (pose 0); used to
    /// place the scorer's canonical values.
    Image render_property(ToyProperty p, double h) const {
        std::vector<double> values(m_world.n_channels, 0.0);
        values[m_world.texture_gain_channel] = 1.0;
        if (auto a = m_world.attribute_for(p)) {
            const double logit = std::log(h / (1.0 - h));
            for (std::size_t c : m_world.attributes[*a].channels)
                values[c] = logit;
        }
        return synthesize(StyleCode(std::move(values), m_world.editable()));
    }

private:
    void check(const StyleCode& s) const {
        if (s.size() != m_world.n_channels)
            detail::throw_invalid("style code has ", s.size(), " channels, toy world expects ", m_world.n_channels);
    }

    ToyWorld m_world;
    BackendManifest m_manifest;
    toy_detail::Renderer m_renderer;
};

/// Fixed quadrant segmentation; masks tile the image exactly.
class ToySegmenter final : public RegionSegmenter {
public:
    explicit ToySegmenter(std::size_t image_size) : m_size(image_size) {}

    std::vector<std::string> regions() const override { return {kToyRegions.begin(), kToyRegions.end()}; }

    std::vector<RegionMask> segment(const Image& image) const override {
        if (image.height != m_size || image.width != m_size)
            detail::throw_invalid("toy segmenter expects ", m_size, "x", m_size, " images");
        const std::size_t q = m_size / 2;
        std::vector<RegionMask> out(4, RegionMask(m_size, m_size));
        for (std::size_t y = 0; y < m_size; ++y)
            for (std::size_t x = 0; x < m_size; ++x)
                out[(y >= q ? 2 : 0) + (x >= q ? 1 : 0)].at(y, x) = 1;
        return out;
    }

private:
    std::size_t m_size;
};

/// Analytic image-text scorer over toy images. A phrase is recognised when it
/// contains one of the world's lexicon phrases; its score is
///   -sharpness * ((stat(I) - stat_j) / spacing)^2
/// where stat is the pixel statistic of the property's quadrant and stat_j the
/// statistic of an image rendered at the phrase's canonical level.
class ToyScorer final : public ImageTextScorer {
public:
    explicit ToyScorer(const ToyWorld& world) : m_size(world.image_size), m_sharpness(world.scorer_sharpness) {
        ToyGenerator gen(world);
        for (const auto& a : world.attributes) {
            const toy_detail::Statistic stat{a.property, m_size};
            const double lo = stat.value(gen.render_property(a.property, 0.1));
            const double hi = stat.value(gen.render_property(a.property, 0.9));
            const double spacing = std::abs(hi - lo) / 2.0;
            for (const auto& [phrase, level] : a.lexicon)
                m_lexicon.push_back({phrase, a.property, stat.value(gen.render_property(a.property, level)), spacing});
        }
        // longest phrases first so that substring matching prefers specific entries
        std::stable_sort(m_lexicon.begin(), m_lexicon.end(),
                         [](const Entry& x, const Entry& y) { return x.phrase.size() > y.phrase.size(); });
        nlohmann::json fp = nlohmann::json::array();
        for (const auto& e : m_lexicon)
            fp.push_back({e.phrase, to_string(e.property), e.canonical, e.spacing});
        m_hash = sha256_hex(nlohmann::json{{"sharpness", m_sharpness}, {"lexicon", fp}}.dump());
    }

    std::vector<double> score(const Image& image, std::span<const std::string> phrases) const override {
        check(image);
        std::vector<double> out;
        out.reserve(phrases.size());
        for (const auto& text : phrases) {
            const Entry& e = lookup(text);
            const double stat = toy_detail::Statistic{e.property, m_size}.value(image);
            const double r = (stat - e.canonical) / e.spacing;
            out.push_back(-m_sharpness * r * r);
        }
        return out;
    }

    bool differentiable() const override { return true; }

    Image score_vjp(const Image& image, std::span<const std::string> phrases,
                    std::span<const double> grad_scores) const override {
        check(image);
        Image grad(image.height, image.width, image.channels);
        for (std::size_t j = 0; j < phrases.size(); ++j) {
            if (grad_scores[j] == 0.0)
                continue;
            const Entry& e = lookup(phrases[j]);
            toy_detail::Statistic stat{e.property, m_size};
            const double r = (stat.value(image) - e.canonical) / e.spacing;
            stat.add_gradient(grad_scores[j] * (-2.0 * m_sharpness * r / e.spacing), grad);
        }
        return grad;
    }

    std::string parameter_hash() const override { return m_hash; }

    /// Canonical statistic value of a lexicon phrase.
    double canonical(const std::string& phrase) const { return lookup(phrase).canonical; }

private:
    struct Entry {
        std::string phrase;
        ToyProperty property;
        double canonical;
        double spacing;
    };

    void check(const Image& image) const {
        if (image.height != m_size || image.width != m_size || image.channels != 3)
            throw ScorerUnavailable("toy scorer only accepts toy-world images");
    }

    const Entry& lookup(const std::string& text) const {
        for (const auto& e : m_lexicon)
            if (text.find(e.phrase) != std::string::npos)
                return e;
        throw ScorerUnavailable("toy scorer does not know phrase '" + text + "'");
    }

    std::size_t m_size;
    double m_sharpness;
    std::vector<Entry> m_lexicon;
    std::string m_hash;
};

}  // namespace stylemask
