// Copyright (C) 2026 The stylemask Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "stylemask/errors.hpp"
#include "stylemask/image.hpp"
#include "stylemask/stylespace.hpp"

// Quantitative measurement: descriptor groups are scored against an image by an
// image-text scorer and softmax-normalized into a probability vector per group.
// Distances between images are L1 over those vectors, summed over the groups of
// an attribute.

namespace stylemask {

inline constexpr const char* kDefaultTemplate = "a face with {}";

struct DescriptorGroup {
    std::vector<std::string> phrases;
    std::string text_template = kDefaultTemplate;

    void validate() const {
        if (phrases.size() < 2)
            detail::throw_invalid("descriptor group needs at least 2 phrases, got ", phrases.size());
        std::set<std::string> seen;
        for (const auto& p : phrases) {
            if (p.empty())
                detail::throw_invalid("descriptor group contains an empty phrase");
            if (!seen.insert(p).second)
                detail::throw_invalid("descriptor group repeats phrase '", p, "'");
        }
        const auto first = text_template.find("{}");
        if (first == std::string::npos || text_template.find("{}", first + 2) != std::string::npos)
            detail::throw_invalid("template '", text_template, "' must contain exactly one {} placeholder");
    }

    std::string render(const std::string& phrase) const {
        std::string out = text_template;
        out.replace(out.find("{}"), 2, phrase);
        return out;
    }

    std::vector<std::string> rendered() const {
        std::vector<std::string> out;
        out.reserve(phrases.size());
        for (const auto& p : phrases)
            out.push_back(render(p));
        return out;
    }

    bool operator==(const DescriptorGroup&) const = default;
};

struct AttributeSpec {
    std::string name;
    std::vector<DescriptorGroup> groups;
    std::string region;
    std::size_t preselect_k = 0;
    double init_weight = 1.0;

    void validate() const {
        if (name.empty())
            detail::throw_invalid("attribute name must not be empty");
        if (groups.empty())
            detail::throw_invalid("attribute '", name, "' needs at least one descriptor group");
        for (const auto& g : groups)
            g.validate();
        if (!std::isfinite(init_weight))
            detail::throw_invalid("attribute '", name, "' has a non-finite init weight");
    }

    bool operator==(const AttributeSpec&) const = default;
};

/// Softmax over one descriptor group's phrases.
struct AttributeProbability {
    std::vector<double> probs;
};

/// Image-phrase relevance scorer. Implementations must be deterministic and
/// return one score per phrase.
class ImageTextScorer {
public:
    virtual ~ImageTextScorer() = default;

    virtual std::vector<double> score(const Image& image, std::span<const std::string> phrases) const = 0;

    /// Row-aligned batch variant.
    virtual std::vector<std::vector<double>> score_batch(std::span<const Image> images,
                                                         std::span<const std::string> phrases) const {
        std::vector<std::vector<double>> out;
        out.reserve(images.size());
        for (const auto& img : images)
            out.push_back(score(img, phrases));
        return out;
    }

    virtual bool differentiable() const { return false; }

    /// Gradient of <grad_scores, score(image, phrases)> with respect to the image.
    virtual Image score_vjp(const Image&, std::span<const std::string>, std::span<const double>) const {
        throw ScorerUnavailable("scorer is not differentiable");
    }

    /// False when the adapter must be driven from a single thread.
    virtual bool thread_safe() const { return true; }

    /// Fingerprint of the scorer's fixed parameters.
    virtual std::string parameter_hash() const = 0;
};

namespace detail {

inline std::vector<double> checked_scores(const Image& image, const DescriptorGroup& group,
                                          const ImageTextScorer& scorer) {
    const auto texts = group.rendered();
    std::vector<double> raw;
    try {
        raw = scorer.score(image, texts);
    } catch (const ScorerUnavailable&) {
        throw;
    } catch (const std::exception& e) {
        throw ScorerUnavailable(std::string("scorer failed: ") + e.what());
    }
    if (raw.size() != texts.size())
        throw ScorerUnavailable(concat("scorer returned ", raw.size(), " scores for ", texts.size(), " phrases"));
    for (double v : raw)
        if (!std::isfinite(v))
            throw ScorerUnavailable("scorer returned a non-finite score");
    return raw;
}

}  // namespace detail

inline AttributeProbability classify(const Image& image, const DescriptorGroup& group, const ImageTextScorer& scorer) {
    return {softmax(detail::checked_scores(image, group, scorer))};
}

inline double attribute_distance(const Image& a, const Image& b, const AttributeSpec& spec,
                                 const ImageTextScorer& scorer) {
    double total = 0.0;
    for (const auto& group : spec.groups) {
        const auto pa = classify(a, group, scorer).probs;
        const auto pb = classify(b, group, scorer).probs;
        for (std::size_t j = 0; j < pa.size(); ++j)
            total += std::abs(pa[j] - pb[j]);
    }
    return total;
}

/// Adds weight * d attribute_distance(a, b) / d a into grad_a; b is held fixed.
/// Returns the distance.
inline double attribute_distance_vjp(const Image& a, const Image& b, const AttributeSpec& spec,
                                     const ImageTextScorer& scorer, double weight, Image& grad_a) {
    if (!scorer.differentiable())
        throw ScorerUnavailable("scorer does not provide gradients");
    double total = 0.0;
    for (const auto& group : spec.groups) {
        const auto texts = group.rendered();
        const auto pa = softmax(detail::checked_scores(a, group, scorer));
        const auto pb = classify(b, group, scorer).probs;
        std::vector<double> g_prob(pa.size());
        for (std::size_t j = 0; j < pa.size(); ++j) {
            const double d = pa[j] - pb[j];
            total += std::abs(d);
            g_prob[j] = weight * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
        }
        // softmax backward
        double dot = 0.0;
        for (std::size_t j = 0; j < pa.size(); ++j)
            dot += g_prob[j] * pa[j];
        std::vector<double> g_score(pa.size());
        bool any = false;
        for (std::size_t j = 0; j < pa.size(); ++j) {
            g_score[j] = pa[j] * (g_prob[j] - dot);
            any = any || g_score[j] != 0.0;
        }
        if (!any)
            continue;
        const Image g = scorer.score_vjp(a, texts, g_score);
        if (!g.same_shape(grad_a))
            throw ScorerUnavailable("scorer gradient has the wrong shape");
        for (std::size_t i = 0; i < g.pixels.size(); ++i)
            grad_a.pixels[i] += g.pixels[i];
    }
    return total;
}

}  // namespace stylemask
