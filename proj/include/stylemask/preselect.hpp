// Copyright (C) 2026 The stylemask Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stylemask/backends.hpp"
#include "stylemask/errors.hpp"
#include "stylemask/qmm.hpp"
#include "stylemask/random.hpp"
#include "stylemask/stylespace.hpp"

namespace stylemask {

/// Per (channel, region) mean absolute gradient, normalized by region size,
/// averaged over iterations and then L1-normalized over regions per channel.
struct AttributionTable {
    Matrix scores;  // n channels x R regions
    std::vector<std::string> regions;
    std::vector<bool> editable;
    std::size_t iterations = 0;
    std::uint64_t seed = 0;

    std::size_t region_index(const std::string& label) const {
        for (std::size_t r = 0; r < regions.size(); ++r)
            if (regions[r] == label)
                return r;
        detail::throw_invalid("unknown region '", label, "'");
    }

    bool operator==(const AttributionTable&) const = default;
};

inline constexpr std::uint64_t kPreselectStream = 0x70726573;  // "pres"

inline AttributionTable accumulate_attribution(const GeneratorBackend& gen, const RegionSegmenter& seg,
                                               std::size_t iterations, std::uint64_t seed) {
    if (iterations == 0)
        detail::throw_invalid("attribution needs at least one iteration");
    if (!gen.differentiable())
        throw BackendUnavailable("channel pre-selection needs a differentiable generator");
    const std::size_t n = gen.channel_count();
    AttributionTable table;
    table.regions = seg.regions();
    table.editable = gen.editable();
    table.iterations = iterations;
    table.seed = seed;
    table.scores = Matrix(n, table.regions.size());

    for (std::size_t it = 0; it < iterations; ++it) {
        const StyleCode s = gen.sample_style(derive_seed(seed, kPreselectStream, it));
        const Image img = gen.synthesize(s);
        const auto masks = seg.segment(img);
        for (std::size_t r = 0; r < masks.size(); ++r) {
            const std::size_t pixels = masks[r].count();
            if (pixels == 0)
                continue;
            // the binary region mask, broadcast over color channels, is the image gradient
            Image grad(img.height, img.width, img.channels);
            for (std::size_t p = 0; p < masks[r].bits.size(); ++p)
                if (masks[r].bits[p])
                    for (std::size_t k = 0; k < img.channels; ++k)
                        grad.pixels[p * img.channels + k] = 1.0;
            const auto g = gen.synthesize_vjp(s, grad);
            for (std::size_t c = 0; c < n; ++c)
                table.scores(c, r) += std::abs(g[c]) / static_cast<double>(pixels);
        }
    }
    for (double& v : table.scores.data())
        v /= static_cast<double>(iterations);
    for (std::size_t c = 0; c < n; ++c) {
        double row = 0.0;
        for (std::size_t r = 0; r < table.regions.size(); ++r)
            row += table.scores(c, r);
        if (row > 0.0)
            for (std::size_t r = 0; r < table.regions.size(); ++r)
                table.scores(c, r) /= row;
    }
    return table;
}

/// Editable channels ranked by score for a region (descending, ties by
/// ascending index), truncated to k.
inline std::vector<std::size_t> topk_channels(const AttributionTable& table, const std::string& region,
                                              std::size_t k) {
    const std::size_t r = table.region_index(region);
    std::vector<std::size_t> order;
    for (std::size_t c = 0; c < table.scores.rows(); ++c)
        if (table.editable.empty() || table.editable[c])
            order.push_back(c);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return table.scores(a, r) > table.scores(b, r); });
    if (order.size() > k)
        order.resize(k);
    return order;
}

/// Attribute index -> pre-selected channels.
using Preselection = std::map<std::size_t, std::vector<std::size_t>>;

inline Preselection preselect_channels(const AttributionTable& table, std::span<const AttributeSpec> specs) {
    Preselection out;
    for (std::size_t t = 0; t < specs.size(); ++t)
        if (specs[t].preselect_k > 0)
            out[t] = topk_channels(table, specs[t].region, specs[t].preselect_k);
    return out;
}

/// All zeros; d_t at pre-selected (t, i); others = 1 for every channel no
/// attribute pre-selected (always the case for non-editable channels).
inline MaskMatrix init_mask_matrix(std::size_t n, std::span<const AttributeSpec> specs, const Preselection& preselected,
                                   const std::vector<bool>& editable) {
    if (specs.empty())
        detail::throw_invalid("at least one attribute is required");
    if (editable.size() != n)
        detail::throw_invalid("editability flags have length ", editable.size(), ", expected ", n);
    const std::size_t m = specs.size();
    Matrix entries(m + 1, n);
    std::vector<std::size_t> owner(n, m);
    for (const auto& [t, channels] : preselected) {
        if (t >= m)
            detail::throw_invalid("pre-selection for unknown attribute index ", t);
        for (std::size_t c : channels) {
            if (c >= n)
                detail::throw_invalid("pre-selected channel ", c, " out of range");
            if (!editable[c])
                detail::throw_invalid("pre-selected channel ", c, " is not editable");
            if (owner[c] != m && owner[c] != t)
                detail::throw_invalid("channel ", c, " is pre-selected by both '", specs[owner[c]].name, "' and '",
                                      specs[t].name, "'");
            owner[c] = t;
        }
    }
    for (std::size_t c = 0; c < n; ++c) {
        if (owner[c] == m)
            entries(m, c) = 1.0;
        else
            entries(owner[c], c) = specs[owner[c]].init_weight;
    }
    std::vector<std::string> names;
    for (const auto& s : specs)
        names.push_back(s.name);
    return MaskMatrix(std::move(entries), std::move(names));
}

inline constexpr const char* kPreselectFormat = "stylemask-preselect/1";

inline nlohmann::json preselect_to_json(const AttributionTable& table, std::span<const AttributeSpec> specs,
                                        const Preselection& selected) {
    nlohmann::json scores = nlohmann::json::array();
    for (std::size_t c = 0; c < table.scores.rows(); ++c) {
        std::vector<double> row(table.regions.size());
        for (std::size_t r = 0; r < row.size(); ++r)
            row[r] = table.scores(c, r);
        scores.push_back(row);
    }
    nlohmann::json sel = nlohmann::json::object();
    for (const auto& [t, channels] : selected)
        sel[specs[t].name] = channels;
    return {{"format", kPreselectFormat}, {"iterations", table.iterations}, {"seed", table.seed},
            {"regions", table.regions},   {"editable", table.editable},     {"scores", scores},
            {"selected", sel}};
}

inline AttributionTable attribution_from_json(const nlohmann::json& j) {
    if (j.value("format", std::string{}) != kPreselectFormat)
        detail::throw_invalid("not a pre-selection artifact");
    AttributionTable t;
    t.iterations = j.at("iterations").get<std::size_t>();
    t.seed = j.at("seed").get<std::uint64_t>();
    t.regions = j.at("regions").get<std::vector<std::string>>();
    t.editable = j.at("editable").get<std::vector<bool>>();
    const auto& rows = j.at("scores");
    t.scores = Matrix(rows.size(), t.regions.size());
    for (std::size_t c = 0; c < rows.size(); ++c)
        for (std::size_t r = 0; r < t.regions.size(); ++r)
            t.scores(c, r) = rows[c].at(r).get<double>();
    return t;
}

inline Preselection selection_from_json(const nlohmann::json& j, std::span<const AttributeSpec> specs) {
    Preselection out;
    for (const auto& [name, channels] : j.at("selected").items()) {
        std::size_t t = specs.size();
        for (std::size_t i = 0; i < specs.size(); ++i)
            if (specs[i].name == name)
                t = i;
        if (t == specs.size())
            detail::throw_invalid("pre-selection names unknown attribute '", name, "'");
        out[t] = channels.get<std::vector<std::size_t>>();
    }
    return out;
}

}  // namespace stylemask
