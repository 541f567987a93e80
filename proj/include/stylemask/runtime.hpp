// Copyright (C) 2026 The stylemask Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "stylemask/config.hpp"
#include "stylemask/remote.hpp"
#include "stylemask/toy.hpp"
#include "stylemask/trainer.hpp"

namespace stylemask {

/// Owns the backends a configuration names.
struct BackendBundle {
    std::unique_ptr<GeneratorBackend> generator;
    std::unique_ptr<RegionSegmenter> segmenter;
    std::unique_ptr<ImageTextScorer> scorer;
    std::vector<AttributeSpec> specs;

    Backends view() const { return {*generator, *segmenter, *scorer, specs}; }
};

/// Manifest kinds:
///   "toy"     the built-in toy world; params as written by ToyWorld::manifest()
///   "remote"  model processes speaking the wire format in remote.hpp; params
///             endpoint, differentiable, and optionally scorer_endpoint,
///             scorer_differentiable, segmenter_endpoint, weights (informational:
///             the weight file the model process is expected to load)
inline BackendBundle make_backends(const ProjectConfig& cfg) {
    BackendBundle b;
    b.specs = cfg.attributes;
    const auto& m = cfg.manifest;
    if (m.kind == "toy") {
        const ToyWorld world = ToyWorld::from_manifest(m);
        b.generator = std::make_unique<ToyGenerator>(world);
        b.segmenter = std::make_unique<ToySegmenter>(world.image_size);
        b.scorer = std::make_unique<ToyScorer>(world);
    } else if (m.kind == "remote") {
        const auto endpoint = m.params.value("endpoint", std::string{});
        if (endpoint.empty())
            detail::throw_invalid("remote backend needs params.endpoint");
        b.generator = std::make_unique<RemoteGenerator>(m);
        b.segmenter = std::make_unique<RemoteSegmenter>(m.params.value("segmenter_endpoint", endpoint));
        b.scorer = std::make_unique<RemoteScorer>(m.params.value("scorer_endpoint", endpoint),
                                                  m.params.value("scorer_differentiable", false));
    } else {
        detail::throw_invalid("unknown backend kind '", m.kind, "'");
    }
    const auto regions = b.segmenter->regions();
    for (const auto& a : b.specs)
        if (!a.region.empty() && std::find(regions.begin(), regions.end(), a.region) == regions.end())
            detail::throw_invalid("attribute '", a.name, "' uses region '", a.region,
                                  "' which the segmenter does not provide");
    return b;
}

inline constexpr const char* kToyTemplate = "a toy scene with {}";

/// Attribute catalog matching a toy world: one group of level phrases per
/// attribute, plus any extra phrases of the backdrop lexicon as a second group.
inline std::vector<AttributeSpec> toy_attribute_specs(const ToyWorld& world, std::size_t k = 4) {
    std::vector<AttributeSpec> out;
    for (const auto& a : world.attributes) {
        AttributeSpec s;
        s.name = a.name;
        s.region = toy_region(a.property);
        s.preselect_k = k;
        DescriptorGroup levels{{}, kToyTemplate};
        DescriptorGroup extra{{}, kToyTemplate};
        // lexicon entries naming the property's own region word are level phrases
        for (const auto& [phrase, level] : a.lexicon)
            (phrase.find(s.region) != std::string::npos ? levels : extra).phrases.push_back(phrase);
        s.groups.push_back(std::move(levels));
        if (extra.phrases.size() >= 2)
            s.groups.push_back(std::move(extra));
        s.validate();
        out.push_back(std::move(s));
    }
    return out;
}

inline ProjectConfig toy_project_config(const ToyWorld& world = ToyWorld::standard()) {
    ProjectConfig c;
    c.attributes = toy_attribute_specs(world);
    c.manifest = world.manifest();
    return c;
}

}  // namespace stylemask
