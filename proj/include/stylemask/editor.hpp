// Copyright (C) 2026 The stylemask Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stylemask/backends.hpp"
#include "stylemask/errors.hpp"
#include "stylemask/losses.hpp"
#include "stylemask/qmm.hpp"
#include "stylemask/stylespace.hpp"
#include "stylemask/trainer.hpp"

namespace stylemask {

struct EditRequest {
    StyleCode src;
    StyleCode ref;
    std::vector<std::size_t> omega;
    double delta = 1.0;
};

/// Distance-to-reference for targeted attributes, distance-to-source for the rest.
struct AttributeReport {
    std::string name;
    bool target = false;
    double distance = 0.0;
    double baseline = 0.0;  // distance(source, reference) for the same attribute
};

struct EditResult {
    StyleCode style;
    Image image;
    std::vector<AttributeReport> report;
    double background_loss = 0.0;
};

inline constexpr std::array<double, 6> kDefaultSweep = {1.0, 1.25, 1.5, 1.75, 2.0, 2.25};

inline nlohmann::json report_to_json(const EditResult& r) {
    nlohmann::json attrs = nlohmann::json::array();
    for (const auto& a : r.report)
        attrs.push_back({{"name", a.name},
                         {"role", a.target ? "target" : "preserved"},
                         {"distance", a.distance},
                         {"baseline", a.baseline}});
    return {{"attributes", attrs}, {"background_loss", r.background_loss}};
}

/// Inference-time editing with a trained mask matrix. Stateless after
/// construction; safe to share between threads when the backends are.
class Editor {
public:
    Editor(MaskMatrix mask, const Backends& backends)
        : m_mask(std::move(mask)), m_backends(backends), m_probs(control_probabilities(m_mask)) {
        if (m_mask.attribute_count() != backends.specs.size())
            detail::throw_invalid("checkpoint has ", m_mask.attribute_count(), " attributes, configuration has ",
                                  backends.specs.size());
        for (std::size_t t = 0; t < backends.specs.size(); ++t)
            if (m_mask.attribute_names[t] != backends.specs[t].name)
                detail::throw_invalid("checkpoint attribute '", m_mask.attribute_names[t],
                                      "' does not match configured attribute '", backends.specs[t].name, "'");
        if (m_mask.channel_count() != backends.generator.channel_count())
            detail::throw_invalid("checkpoint covers ", m_mask.channel_count(), " channels, generator has ",
                                  backends.generator.channel_count());
    }

    const MaskMatrix& mask_matrix() const { return m_mask; }

    std::vector<std::size_t> resolve(std::span<const std::string> names) const {
        std::vector<std::size_t> out;
        for (const auto& name : names) {
            std::size_t t = 0;
            while (t < m_mask.attribute_count() && m_mask.attribute_names[t] != name)
                ++t;
            if (t == m_mask.attribute_count())
                detail::throw_invalid("unknown attribute '", name, "'");
            out.push_back(t);
        }
        return out;
    }

    AttributeMask mask_for(std::span<const std::size_t> omega, const std::vector<bool>& editable) const {
        return attribute_mask(m_probs, omega, editable);
    }

    StyleCode edited_style(const EditRequest& req) const {
        check(req);
        return edit_style_code(req.src, req.ref, mask_for(req.omega, req.src.editable), req.delta);
    }

    EditResult edit(const EditRequest& req) const { return measure(req.src, req.ref, edited_style(req), req.omega); }

    /// Synthesizes an already edited style code and attaches the QMM report.
    EditResult measure(const StyleCode& src, const StyleCode& ref, const StyleCode& edited,
                       std::span<const std::size_t> omega) const {
        const auto& b = m_backends;
        const Image i_src = b.generator.synthesize(src);
        const Image i_ref = b.generator.synthesize(ref);
        EditResult out;
        out.style = edited;
        out.image = b.generator.synthesize(edited);
        std::set<std::size_t> targets(omega.begin(), omega.end());
        for (std::size_t t = 0; t < b.specs.size(); ++t) {
            AttributeReport a;
            a.name = b.specs[t].name;
            a.target = targets.count(t) > 0;
            a.distance = attribute_distance(out.image, a.target ? i_ref : i_src, b.specs[t], b.scorer);
            a.baseline = attribute_distance(i_src, i_ref, b.specs[t], b.scorer);
            out.report.push_back(a);
        }
        const RegionMask bg = background_mask(alterable_region(b.segmenter, i_src, omega, b.specs),
                                              alterable_region(b.segmenter, out.image, omega, b.specs));
        out.background_loss = background_loss(out.image, i_src, bg);
        return out;
    }

    std::vector<EditResult> sweep(const EditRequest& req, std::span<const double> deltas) const {
        if (deltas.empty())
            detail::throw_invalid("sweep needs at least one intensity");
        std::vector<EditResult> out;
        for (double d : deltas) {
            EditRequest r = req;
            r.delta = d;
            out.push_back(edit(r));
        }
        return out;
    }

    /// Applies one attribute set at a time, each edit starting from the
    /// previous result while the reference stays fixed.
    std::vector<EditResult> sequential(const StyleCode& src, const StyleCode& ref,
                                       std::span<const std::vector<std::size_t>> omegas,
                                       std::span<const double> deltas) const {
        if (omegas.size() != deltas.size())
            detail::throw_invalid("sequential edit got ", omegas.size(), " attribute sets but ", deltas.size(),
                                  " intensities");
        std::vector<EditResult> out;
        StyleCode current = src;
        for (std::size_t i = 0; i < omegas.size(); ++i) {
            out.push_back(edit({current, ref, omegas[i], deltas[i]}));
            current = out.back().style;
        }
        return out;
    }

    /// Single edit with the union of the attribute sets.
    EditResult combined(const StyleCode& src, const StyleCode& ref, std::span<const std::vector<std::size_t>> omegas,
                        double delta) const {
        std::set<std::size_t> all;
        for (const auto& o : omegas)
            all.insert(o.begin(), o.end());
        return edit({src, ref, std::vector<std::size_t>(all.begin(), all.end()), delta});
    }

private:
    void check(const EditRequest& req) const {
        if (req.omega.empty())
            detail::throw_invalid("edit needs at least one target attribute");
        if (!std::isfinite(req.delta))
            detail::throw_invalid("editing intensity must be finite");
        for (std::size_t t : req.omega)
            if (t >= m_mask.attribute_count())
                detail::throw_invalid("unknown attribute index ", t);
    }

    MaskMatrix m_mask;
    Backends m_backends;
    ControlProbabilities m_probs;
};

}  // namespace stylemask
