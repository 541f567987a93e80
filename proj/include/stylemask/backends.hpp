// Copyright (C) 2026 The stylemask Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stylemask/errors.hpp"
#include "stylemask/image.hpp"
#include "stylemask/stylespace.hpp"

namespace stylemask {

/// Contiguous run of style channels belonging to one generator layer.
struct LayerSpan {
    std::string name;
    std::size_t start = 0;
    std::size_t count = 0;
    bool editable = true;

    bool operator==(const LayerSpan&) const = default;
};

/// Describes a generator backend: identity, style-space layout and image size.
/// Backend specific parameters travel in `params` (toy world settings, remote
/// endpoint, weight files).
struct BackendManifest {
    std::string model_id;
    std::string kind;
    std::size_t n_channels = 0;
    std::size_t image_height = 0;
    std::size_t image_width = 0;
    std::size_t image_channels = 3;
    std::vector<LayerSpan> layers;
    nlohmann::json params = nlohmann::json::object();

    std::vector<bool> editable() const {
        std::vector<bool> out(n_channels, false);
        for (const auto& l : layers)
            for (std::size_t i = l.start; i < l.start + l.count; ++i)
                out[i] = l.editable;
        return out;
    }

    void validate() const {
        if (model_id.empty())
            detail::throw_invalid("manifest is missing model_id");
        if (n_channels == 0)
            detail::throw_invalid("manifest declares zero style channels");
        if (image_height == 0 || image_width == 0 || image_channels == 0)
            detail::throw_invalid("manifest declares an empty image size");
        std::vector<int> covered(n_channels, 0);
        for (const auto& l : layers) {
            if (l.start + l.count > n_channels)
                detail::throw_invalid("layer '", l.name, "' runs past channel ", n_channels);
            for (std::size_t i = l.start; i < l.start + l.count; ++i)
                ++covered[i];
        }
        for (std::size_t i = 0; i < n_channels; ++i)
            if (covered[i] != 1)
                detail::throw_invalid("channel ", i, " is covered by ", covered[i], " layers, expected exactly 1");
    }

    bool operator==(const BackendManifest&) const = default;
};

inline constexpr const char* kManifestFormat = "stylemask-manifest/1";

inline nlohmann::json to_json(const BackendManifest& m) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : m.layers)
        layers.push_back({{"name", l.name}, {"start", l.start}, {"count", l.count}, {"editable", l.editable}});
    return {{"format", kManifestFormat},
            {"model_id", m.model_id},
            {"kind", m.kind},
            {"n_channels", m.n_channels},
            {"image", {{"height", m.image_height}, {"width", m.image_width}, {"channels", m.image_channels}}},
            {"layers", layers},
            {"params", m.params}};
}

inline BackendManifest manifest_from_json(const nlohmann::json& j) {
    if (j.value("format", std::string{}) != kManifestFormat)
        detail::throw_invalid("unsupported manifest format '", j.value("format", std::string{}), "'");
    BackendManifest m;
    m.model_id = j.at("model_id").get<std::string>();
    m.kind = j.at("kind").get<std::string>();
    m.n_channels = j.at("n_channels").get<std::size_t>();
    const auto& img = j.at("image");
    m.image_height = img.at("height").get<std::size_t>();
    m.image_width = img.at("width").get<std::size_t>();
    m.image_channels = img.value("channels", std::size_t{3});
    for (const auto& l : j.at("layers"))
        m.layers.push_back({l.at("name").get<std::string>(), l.at("start").get<std::size_t>(),
                            l.at("count").get<std::size_t>(), l.value("editable", true)});
    m.params = j.value("params", nlohmann::json::object());
    m.validate();
    return m;
}

/// A latent sample: noise vector plus camera pose (yaw, pitch).
struct Latent {
    std::vector<double> z;
    std::array<double, 2> pose{0.0, 0.0};
};

class GeneratorBackend {
public:
    virtual ~GeneratorBackend() = default;

    virtual const BackendManifest& manifest() const = 0;

    std::size_t channel_count() const { return manifest().n_channels; }
    std::vector<bool> editable() const { return manifest().editable(); }

    virtual Latent sample_latent(std::uint64_t seed) const = 0;
    virtual StyleCode to_style(const Latent& latent) const = 0;
    virtual Image synthesize(const StyleCode& s) const = 0;

    virtual bool differentiable() const { return false; }

    /// Gradient of <grad_image, synthesize(s)> with respect to the style values.
    virtual std::vector<double> synthesize_vjp(const StyleCode&, const Image&) const {
        throw BackendUnavailable("generator '" + manifest().model_id + "' is not differentiable");
    }

    virtual bool thread_safe() const { return true; }

    virtual std::string parameter_hash() const = 0;

    StyleCode sample_style(std::uint64_t seed) const { return to_style(sample_latent(seed)); }
};

/// Predicts binary masks for a fixed list of semantic regions.
class RegionSegmenter {
public:
    virtual ~RegionSegmenter() = default;
    virtual std::vector<std::string> regions() const = 0;
    virtual std::vector<RegionMask> segment(const Image& image) const = 0;

    std::size_t region_index(const std::string& label) const {
        const auto labels = regions();
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == label)
                return i;
        detail::throw_invalid("unknown region '", label, "'");
    }
};

}  // namespace stylemask
