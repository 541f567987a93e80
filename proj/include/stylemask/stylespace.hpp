// Copyright (C) 2026 The stylemask Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "stylemask/errors.hpp"

namespace stylemask {

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : m_rows(rows), m_cols(cols), m_data(rows * cols, fill) {}

    std::size_t rows() const { return m_rows; }
    std::size_t cols() const { return m_cols; }

    double& operator()(std::size_t r, std::size_t c) { return m_data[r * m_cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return m_data[r * m_cols + c]; }

    std::span<double> data() { return m_data; }
    std::span<const double> data() const { return m_data; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t m_rows = 0;
    std::size_t m_cols = 0;
    std::vector<double> m_data;
};

/// A point in style space. Channels flagged non-editable (toRGB, super-resolution)
/// keep their index so that layer metadata still lines up, but are never edited.
struct StyleCode {
    std::vector<double> values;
    std::vector<bool> editable;

    StyleCode() = default;
    StyleCode(std::vector<double> v, std::vector<bool> e) : values(std::move(v)), editable(std::move(e)) {
        validate();
    }

    std::size_t size() const { return values.size(); }

    void validate() const {
        if (values.empty())
            detail::throw_invalid("style code must have at least one channel");
        if (values.size() != editable.size())
            detail::throw_invalid("style code has ", values.size(), " values but ", editable.size(), " editability flags");
        for (std::size_t i = 0; i < values.size(); ++i)
            if (!std::isfinite(values[i]))
                detail::throw_invalid("style code channel ", i, " is not finite");
    }

    bool operator==(const StyleCode&) const = default;
};

/// Learnable (m+1) x n attribute/channel affinity matrix. The last row is "others".
struct MaskMatrix {
    Matrix entries;
    std::vector<std::string> attribute_names;

    MaskMatrix() = default;
    MaskMatrix(Matrix e, std::vector<std::string> names) : entries(std::move(e)), attribute_names(std::move(names)) {
        validate();
    }

    std::size_t attribute_count() const { return attribute_names.size(); }
    std::size_t others_row() const { return attribute_names.size(); }
    std::size_t channel_count() const { return entries.cols(); }

    void validate() const {
        if (attribute_names.empty())
            detail::throw_invalid("mask matrix needs at least one attribute");
        if (entries.rows() != attribute_names.size() + 1)
            detail::throw_invalid("mask matrix has ", entries.rows(), " rows, expected ", attribute_names.size() + 1);
        if (entries.cols() == 0)
            detail::throw_invalid("mask matrix has no channels");
        for (double v : entries.data())
            if (!std::isfinite(v))
                detail::throw_invalid("mask matrix contains a non-finite entry");
    }

    bool operator==(const MaskMatrix&) const = default;
};

/// Column-stochastic softmax of a MaskMatrix.
struct ControlProbabilities {
    Matrix probs;

    std::size_t attribute_count() const { return probs.rows() - 1; }
    std::size_t others_row() const { return probs.rows() - 1; }
};

struct AttributeMask {
    std::vector<double> mask;
};

/// Numerically stable softmax of a contiguous vector.
inline std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty())
        return {};
    const double hi = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - hi);
        total += out[i];
    }
    for (double& v : out)
        v /= total;
    return out;
}

inline ControlProbabilities control_probabilities(const MaskMatrix& m) {
    m.validate();
    const std::size_t rows = m.entries.rows();
    const std::size_t cols = m.entries.cols();
    ControlProbabilities out{Matrix(rows, cols)};
    std::vector<double> column(rows);
    for (std::size_t c = 0; c < cols; ++c) {
        for (std::size_t r = 0; r < rows; ++r)
            column[r] = m.entries(r, c);
        const auto p = softmax(column);
        for (std::size_t r = 0; r < rows; ++r)
            out.probs(r, c) = p[r];
    }
    return out;
}

namespace detail {

inline void check_omega(std::span<const std::size_t> omega, std::size_t attribute_count) {
    for (std::size_t t : omega)
        if (t >= attribute_count)
            throw_invalid("attribute index ", t, " is out of range (", attribute_count,
                          " attributes; the others row cannot be targeted)");
}

}  // namespace detail

inline AttributeMask attribute_mask(const ControlProbabilities& p, std::span<const std::size_t> omega,
                                    const std::vector<bool>& editable) {
    const std::size_t n = p.probs.cols();
    if (editable.size() != n)
        detail::throw_invalid("editability flags have length ", editable.size(), ", expected ", n);
    detail::check_omega(omega, p.attribute_count());
    AttributeMask out{std::vector<double>(n, 0.0)};
    for (std::size_t i = 0; i < n; ++i) {
        if (!editable[i])
            continue;
        double sum = 0.0;
        for (std::size_t t : omega)
            sum += p.probs(t, i);
        out.mask[i] = std::clamp(sum, 0.0, 1.0);
    }
    return out;
}

/// s_edit = s_src + (s_ref - s_src) * mask * delta. At delta == 1 this is the
/// interpolation s_src * (1 - mask) + s_ref * mask.
inline StyleCode edit_style_code(const StyleCode& src, const StyleCode& ref, const AttributeMask& mask, double delta) {
    if (src.size() != ref.size() || src.size() != mask.mask.size())
        detail::throw_invalid("edit_style_code length mismatch: source ", src.size(), ", reference ", ref.size(),
                              ", mask ", mask.mask.size());
    if (!std::isfinite(delta))
        detail::throw_invalid("editing intensity must be finite");
    StyleCode out = src;
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (!src.editable[i])
            continue;
        out.values[i] = src.values[i] + (ref.values[i] - src.values[i]) * mask.mask[i] * delta;
    }
    return out;
}

/// Pulls a gradient with respect to the attribute mask back to the mask matrix
/// logits through the column softmax.
inline Matrix attribute_mask_vjp(const ControlProbabilities& p, std::span<const std::size_t> omega,
                                 const std::vector<bool>& editable, std::span<const double> grad_mask) {
    const std::size_t rows = p.probs.rows();
    const std::size_t n = p.probs.cols();
    detail::check_omega(omega, p.attribute_count());
    std::vector<bool> in_omega(rows, false);
    for (std::size_t t : omega)
        in_omega[t] = true;
    Matrix grad(rows, n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!editable[i] || grad_mask[i] == 0.0)
            continue;
        double mask = 0.0;
        for (std::size_t t : omega)
            mask += p.probs(t, i);
        for (std::size_t u = 0; u < rows; ++u) {
            const double pu = p.probs(u, i);
            grad(u, i) = grad_mask[i] * ((in_omega[u] ? pu : 0.0) - pu * mask);
        }
    }
    return grad;
}

/// Gradient of the edited style code with respect to the mask, given the
/// gradient with respect to the edited code.
inline std::vector<double> edit_style_code_vjp(const StyleCode& src, const StyleCode& ref, double delta,
                                               std::span<const double> grad_edit) {
    std::vector<double> out(src.size(), 0.0);
    for (std::size_t i = 0; i < src.size(); ++i)
        if (src.editable[i])
            out[i] = grad_edit[i] * (ref.values[i] - src.values[i]) * delta;
    return out;
}

}  // namespace stylemask
