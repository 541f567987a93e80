// Copyright (C) 2026 The stylemask Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "stylemask/errors.hpp"
#include "stylemask/image.hpp"
#include "stylemask/qmm.hpp"
#include "stylemask/stylespace.hpp"

namespace stylemask {

struct LossWeights {
    double attr = 1.0;
    double bg = 1.0;
    double prob = 0.1;

    void validate() const {
        for (double w : {attr, bg, prob})
            if (!std::isfinite(w) || w < 0.0)
                detail::throw_invalid("loss weights must be finite and non-negative");
    }

    bool operator==(const LossWeights&) const = default;
};

/// Unweighted loss terms of one training step.
struct LossParts {
    double l_ref = 0.0;
    double l_src = 0.0;
    double l_bg = 0.0;
    double l_prob = 0.0;
};

struct LossReport {
    double l_ref = 0.0;
    double l_src = 0.0;
    double l_attr = 0.0;
    double l_bg = 0.0;
    double l_prob = 0.0;
    double total = 0.0;
};

namespace detail {

inline std::vector<bool> omega_flags(std::span<const std::size_t> omega, std::size_t m) {
    std::vector<bool> in(m, false);
    for (std::size_t t : omega) {
        if (t >= m)
            throw_invalid("unknown attribute index ", t, " (", m, " attributes)");
        in[t] = true;
    }
    return in;
}

}  // namespace detail

inline double transfer_loss(const Image& edit, const Image& ref, std::span<const std::size_t> omega,
                            std::span<const AttributeSpec> specs, const ImageTextScorer& scorer) {
    if (omega.empty())
        detail::throw_invalid("target attribute set must not be empty");
    detail::omega_flags(omega, specs.size());
    double total = 0.0;
    for (std::size_t t : omega)
        total += attribute_distance(edit, ref, specs[t], scorer);
    return total;
}

inline double preservation_loss(const Image& edit, const Image& src, std::span<const std::size_t> omega,
                                std::span<const AttributeSpec> specs, const ImageTextScorer& scorer) {
    const auto in = detail::omega_flags(omega, specs.size());
    double total = 0.0;
    for (std::size_t t = 0; t < specs.size(); ++t)
        if (!in[t])
            total += attribute_distance(edit, src, specs[t], scorer);
    return total;
}

/// Pixels outside the alterable region in both the source and edited image.
inline RegionMask background_mask(const RegionMask& b_src, const RegionMask& b_edit) {
    if (b_src.height != b_edit.height || b_src.width != b_edit.width)
        detail::throw_invalid("region masks differ in shape: ", b_src.height, "x", b_src.width, " vs ", b_edit.height,
                              "x", b_edit.width);
    RegionMask out(b_src.height, b_src.width);
    for (std::size_t i = 0; i < out.bits.size(); ++i)
        out.bits[i] = static_cast<std::uint8_t>(!b_src.bits[i] && !b_edit.bits[i]);
    return out;
}

namespace detail {

inline void check_bg_shapes(const Image& edit, const Image& src, const RegionMask& b) {
    if (!edit.same_shape(src))
        throw_invalid("edited and source images differ in shape");
    if (edit.height != b.height || edit.width != b.width)
        throw_invalid("background mask is ", b.height, "x", b.width, " but images are ", edit.height, "x", edit.width);
}

}  // namespace detail

/// Mean absolute difference over the background support, averaged over color
/// channels as well. Zero when the support is empty.
inline double background_loss(const Image& edit, const Image& src, const RegionMask& b) {
    detail::check_bg_shapes(edit, src, b);
    const std::size_t support = b.count();
    if (support == 0)
        return 0.0;
    double total = 0.0;
    const std::size_t c = edit.channels;
    for (std::size_t p = 0; p < b.bits.size(); ++p) {
        if (!b.bits[p])
            continue;
        for (std::size_t k = 0; k < c; ++k)
            total += std::abs(edit.pixels[p * c + k] - src.pixels[p * c + k]);
    }
    return total / static_cast<double>(support * c);
}

/// Adds weight * d background_loss / d edit into grad_edit.
inline void background_loss_vjp(const Image& edit, const Image& src, const RegionMask& b, double weight,
                                 Image& grad_edit) {
    detail::check_bg_shapes(edit, src, b);
    const std::size_t support = b.count();
    if (support == 0 || weight == 0.0)
        return;
    const std::size_t c = edit.channels;
    const double scale = weight / static_cast<double>(support * c);
    for (std::size_t p = 0; p < b.bits.size(); ++p) {
        if (!b.bits[p])
            continue;
        for (std::size_t k = 0; k < c; ++k) {
            const double d = edit.pixels[p * c + k] - src.pixels[p * c + k];
            if (d != 0.0)
                grad_edit.pixels[p * c + k] += d > 0.0 ? scale : -scale;
        }
    }
}

namespace detail {

inline std::size_t editable_count(const MaskMatrix& m, const std::vector<bool>& editable) {
    if (editable.size() != m.channel_count())
        throw_invalid("editability flags have length ", editable.size(), ", expected ", m.channel_count());
    std::size_t n = 0;
    for (bool e : editable)
        n += e ? 1 : 0;
    if (n == 0)
        throw_invalid("probability loss needs at least one editable channel");
    return n;
}

}  // namespace detail

/// Mean over editable channels of 1 - max(softmax(column)).
inline double probability_loss(const MaskMatrix& m, const std::vector<bool>& editable) {
    const std::size_t n_e = detail::editable_count(m, editable);
    const auto p = control_probabilities(m);
    double total = 0.0;
    for (std::size_t i = 0; i < m.channel_count(); ++i) {
        if (!editable[i])
            continue;
        double hi = 0.0;
        for (std::size_t r = 0; r < p.probs.rows(); ++r)
            hi = std::max(hi, p.probs(r, i));
        total += std::abs(1.0 - hi);
    }
    return total / static_cast<double>(n_e);
}

/// Gradient of probability_loss with respect to M. When several rows tie for the
/// column maximum the subgradient averages over them, so an exactly uniform
/// column receives no push toward any particular row.
inline Matrix probability_loss_grad(const MaskMatrix& m, const std::vector<bool>& editable) {
    const std::size_t n_e = detail::editable_count(m, editable);
    const auto p = control_probabilities(m);
    const std::size_t rows = p.probs.rows();
    Matrix grad(rows, m.channel_count());
    for (std::size_t i = 0; i < m.channel_count(); ++i) {
        if (!editable[i])
            continue;
        double hi = 0.0;
        for (std::size_t r = 0; r < rows; ++r)
            hi = std::max(hi, p.probs(r, i));
        std::vector<std::size_t> ties;
        for (std::size_t r = 0; r < rows; ++r)
            if (p.probs(r, i) == hi)
                ties.push_back(r);
        const double scale = -1.0 / (static_cast<double>(n_e) * static_cast<double>(ties.size()));
        for (std::size_t a : ties) {
            const double pa = p.probs(a, i);
            for (std::size_t u = 0; u < rows; ++u)
                grad(u, i) += scale * pa * ((u == a ? 1.0 : 0.0) - p.probs(u, i));
        }
    }
    return grad;
}

inline LossReport total_loss(const LossParts& parts, const LossWeights& w) {
    w.validate();
    for (double v : {parts.l_ref, parts.l_src, parts.l_bg, parts.l_prob})
        if (!std::isfinite(v))
            detail::throw_invalid("loss term is not finite");
    LossReport r;
    r.l_ref = parts.l_ref;
    r.l_src = parts.l_src;
    r.l_attr = parts.l_ref + parts.l_src;
    r.l_bg = parts.l_bg;
    r.l_prob = parts.l_prob;
    r.total = w.attr * r.l_attr + w.bg * r.l_bg + w.prob * r.l_prob;
    return r;
}

}  // namespace stylemask
