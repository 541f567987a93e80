// Copyright (C) 2026 The stylemask Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stylemask/backends.hpp"
#include "stylemask/config.hpp"
#include "stylemask/errors.hpp"
#include "stylemask/hash.hpp"
#include "stylemask/losses.hpp"
#include "stylemask/qmm.hpp"
#include "stylemask/random.hpp"
#include "stylemask/stylespace.hpp"

namespace stylemask {

/// Frozen generator, segmenter and scorer plus the attribute catalog.
struct Backends {
    const GeneratorBackend& generator;
    const RegionSegmenter& segmenter;
    const ImageTextScorer& scorer;
    std::span<const AttributeSpec> specs;
};

struct OptimizerState {
    Matrix first;   // momentum / Adam first moment
    Matrix second;  // Adam second moment
    std::size_t updates = 0;

    bool operator==(const OptimizerState&) const = default;
};

struct TrainState {
    MaskMatrix mask;
    OptimizerState optimizer;
    std::size_t step = 0;
};

/// One training sample: source, reference and target attribute set.
struct StepSample {
    StyleCode src;
    StyleCode ref;
    std::vector<std::size_t> omega;
};

inline constexpr std::uint64_t kTrainStream = 0x747261696e;  // "train"

inline StepSample sample_step(const GeneratorBackend& gen, std::size_t attribute_count, OmegaPolicy policy,
                              std::uint64_t seed, std::size_t step) {
    std::mt19937_64 rng(derive_seed(seed, kTrainStream, step));
    StepSample out;
    out.src = gen.sample_style(rng());
    out.ref = gen.sample_style(rng());
    std::uniform_int_distribution<std::size_t> pick(0, attribute_count - 1);
    const std::size_t first = pick(rng);
    out.omega.push_back(first);
    if (policy == OmegaPolicy::pair && attribute_count > 1) {
        std::uniform_int_distribution<std::size_t> other(0, attribute_count - 2);
        std::size_t second = other(rng);
        if (second >= first)
            ++second;
        out.omega.push_back(second);
        std::sort(out.omega.begin(), out.omega.end());
    }
    return out;
}

/// Union over attributes in omega of their alterable region in one image.
inline RegionMask alterable_region(const RegionSegmenter& seg, const Image& img, std::span<const std::size_t> omega,
                                   std::span<const AttributeSpec> specs) {
    const auto masks = seg.segment(img);
    RegionMask out(img.height, img.width);
    for (std::size_t t : omega) {
        if (specs[t].region.empty())
            continue;
        const auto& m = masks.at(seg.region_index(specs[t].region));
        for (std::size_t i = 0; i < out.bits.size(); ++i)
            out.bits[i] = static_cast<std::uint8_t>(out.bits[i] | m.bits[i]);
    }
    return out;
}

struct LossEvaluation {
    LossReport report;
    Matrix gradient;  // empty unless requested
};

/// Total training loss for one sample at mask matrix M, optionally with its
/// analytic gradient with respect to M.
inline LossEvaluation evaluate_loss(const MaskMatrix& m, const StepSample& sample, const Backends& b,
                                    const LossWeights& w, double delta, bool with_gradient) {
    const auto editable = sample.src.editable;
    const auto probs = control_probabilities(m);
    const auto mask = attribute_mask(probs, sample.omega, editable);
    const StyleCode s_edit = edit_style_code(sample.src, sample.ref, mask, delta);

    const Image i_src = b.generator.synthesize(sample.src);
    const Image i_ref = b.generator.synthesize(sample.ref);
    const Image i_edit = b.generator.synthesize(s_edit);

    const RegionMask bg = background_mask(alterable_region(b.segmenter, i_src, sample.omega, b.specs),
                                          alterable_region(b.segmenter, i_edit, sample.omega, b.specs));
    std::vector<bool> in_omega(b.specs.size(), false);
    for (std::size_t t : sample.omega)
        in_omega.at(t) = true;

    LossParts parts;
    LossEvaluation out;
    if (!with_gradient) {
        parts.l_ref = transfer_loss(i_edit, i_ref, sample.omega, b.specs, b.scorer);
        parts.l_src = preservation_loss(i_edit, i_src, sample.omega, b.specs, b.scorer);
        parts.l_bg = background_loss(i_edit, i_src, bg);
        parts.l_prob = probability_loss(m, editable);
        out.report = total_loss(parts, w);
        return out;
    }

    Image g_image(i_edit.height, i_edit.width, i_edit.channels);
    for (std::size_t t = 0; t < b.specs.size(); ++t) {
        if (in_omega[t])
            parts.l_ref += attribute_distance_vjp(i_edit, i_ref, b.specs[t], b.scorer, w.attr, g_image);
        else
            parts.l_src += attribute_distance_vjp(i_edit, i_src, b.specs[t], b.scorer, w.attr, g_image);
    }
    parts.l_bg = background_loss(i_edit, i_src, bg);
    background_loss_vjp(i_edit, i_src, bg, w.bg, g_image);
    parts.l_prob = probability_loss(m, editable);
    out.report = total_loss(parts, w);

    const auto g_style = b.generator.synthesize_vjp(s_edit, g_image);
    const auto g_mask = edit_style_code_vjp(sample.src, sample.ref, delta, g_style);
    out.gradient = attribute_mask_vjp(probs, sample.omega, editable, g_mask);
    if (w.prob != 0.0) {
        const Matrix g_prob = probability_loss_grad(m, editable);
        for (std::size_t i = 0; i < out.gradient.data().size(); ++i)
            out.gradient.data()[i] += w.prob * g_prob.data()[i];
    }
    return out;
}

inline void require_differentiable(const Backends& b) {
    if (!b.generator.differentiable())
        throw BackendUnavailable("generator '" + b.generator.manifest().model_id +
                                 "' is not differentiable; training is refused");
    if (!b.scorer.differentiable())
        throw ScorerUnavailable("scorer is not differentiable; training is refused");
}

/// Applies one optimizer update to the editable columns of M.
inline void apply_update(TrainState& state, const Matrix& grad, const std::vector<bool>& editable,
                         const TrainConfig& cfg) {
    Matrix& m = state.mask.entries;
    auto& opt = state.optimizer;
    if (opt.first.rows() != m.rows() || opt.first.cols() != m.cols()) {
        opt.first = Matrix(m.rows(), m.cols());
        opt.second = Matrix(m.rows(), m.cols());
    }
    ++opt.updates;
    const double t = static_cast<double>(opt.updates);
    const double bias1 = 1.0 - std::pow(cfg.beta1, t);
    const double bias2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t c = 0; c < m.cols(); ++c) {
        if (!editable[c])
            continue;
        for (std::size_t r = 0; r < m.rows(); ++r) {
            const double g = grad(r, c);
            switch (cfg.optimizer) {
                case OptimizerKind::sgd:
                    m(r, c) -= cfg.learning_rate * g;
                    break;
                case OptimizerKind::momentum:
                    opt.first(r, c) = cfg.beta1 * opt.first(r, c) + g;
                    m(r, c) -= cfg.learning_rate * opt.first(r, c);
                    break;
                case OptimizerKind::adam: {
                    opt.first(r, c) = cfg.beta1 * opt.first(r, c) + (1.0 - cfg.beta1) * g;
                    opt.second(r, c) = cfg.beta2 * opt.second(r, c) + (1.0 - cfg.beta2) * g * g;
                    const double mh = opt.first(r, c) / bias1;
                    const double vh = opt.second(r, c) / bias2;
                    m(r, c) -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.epsilon);
                    break;
                }
            }
        }
    }
}

/// Samples (s_src, s_ref, omega) for the state's next step, evaluates the loss
/// and updates M. Non-editable columns are never touched.
inline LossReport train_step(TrainState& state, const Backends& b, const TrainConfig& cfg) {
    require_differentiable(b);
    const std::size_t step = state.step + 1;
    const StepSample sample = sample_step(b.generator, b.specs.size(), cfg.omega, cfg.seed, step);
    const auto eval = evaluate_loss(state.mask, sample, b, cfg.weights, cfg.delta, true);
    if (!std::isfinite(eval.report.total))
        throw TrainingDiverged(detail::concat("non-finite loss at step ", step, ": l_ref=", eval.report.l_ref,
                                              " l_src=", eval.report.l_src, " l_bg=", eval.report.l_bg,
                                              " l_prob=", eval.report.l_prob));
    apply_update(state, eval.gradient, sample.src.editable, cfg);
    state.step = step;
    return eval.report;
}

struct Checkpoint {
    static constexpr int kFormatVersion = 1;

    MaskMatrix mask;
    OptimizerState optimizer;
    std::size_t step = 0;
    std::uint64_t seed = 0;
    LossWeights weights;
    std::string model_id;
    std::string manifest_hash;
    TrainConfig config;

    TrainState state() const { return {mask, optimizer, step}; }
};

inline constexpr const char* kCheckpointFormat = "stylemask-checkpoint/1";

namespace detail {

inline nlohmann::json matrix_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) {
        std::vector<double> row(m.cols());
        for (std::size_t c = 0; c < m.cols(); ++c)
            row[c] = m(r, c);
        rows.push_back(row);
    }
    return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& rows) {
    if (rows.empty())
        return {};
    Matrix m(rows.size(), rows.at(0).size());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        if (rows[r].size() != m.cols())
            throw_invalid("ragged matrix in checkpoint");
        for (std::size_t c = 0; c < m.cols(); ++c)
            m(r, c) = rows[r][c].get<double>();
    }
    return m;
}

}  // namespace detail

/// Checkpoint JSON. Doubles are written in shortest round-trip form, so
/// save/load is bit exact.
inline nlohmann::json to_json(const Checkpoint& c) {
    return {{"format", kCheckpointFormat},
            {"version", Checkpoint::kFormatVersion},
            {"attributes", c.mask.attribute_names},
            {"mask", detail::matrix_json(c.mask.entries)},
            {"optimizer",
             {{"updates", c.optimizer.updates},
              {"first", detail::matrix_json(c.optimizer.first)},
              {"second", detail::matrix_json(c.optimizer.second)}}},
            {"step", c.step},
            {"seed", c.seed},
            {"loss_weights", to_json(c.weights)},
            {"backend", {{"model_id", c.model_id}, {"manifest_sha256", c.manifest_hash}}},
            {"training", to_json(c.config)}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    if (j.value("format", std::string{}) != kCheckpointFormat)
        detail::throw_invalid("not a checkpoint (format '", j.value("format", std::string{}), "')");
    if (j.at("version").get<int>() != Checkpoint::kFormatVersion)
        detail::throw_invalid("unsupported checkpoint version ", j.at("version").get<int>());
    Checkpoint c;
    c.mask = MaskMatrix(detail::matrix_from_json(j.at("mask")), j.at("attributes").get<std::vector<std::string>>());
    const auto& o = j.at("optimizer");
    c.optimizer.updates = o.at("updates").get<std::size_t>();
    c.optimizer.first = detail::matrix_from_json(o.at("first"));
    c.optimizer.second = detail::matrix_from_json(o.at("second"));
    c.step = j.at("step").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.weights = weights_from_json(j.at("loss_weights"));
    c.model_id = j.at("backend").at("model_id").get<std::string>();
    c.manifest_hash = j.at("backend").at("manifest_sha256").get<std::string>();
    c.config = train_config_from_json(j.at("training"));
    return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    write_text_atomic(path, to_json(c).dump(1) + "\n");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_json(read_json_file(path)); }

inline std::string manifest_hash(const BackendManifest& m) { return sha256_hex(to_json(m).dump()); }

inline Checkpoint make_checkpoint(const TrainState& s, const TrainConfig& cfg, const BackendManifest& manifest) {
    Checkpoint c;
    c.mask = s.mask;
    c.optimizer = s.optimizer;
    c.step = s.step;
    c.seed = cfg.seed;
    c.weights = cfg.weights;
    c.model_id = manifest.model_id;
    c.manifest_hash = manifest_hash(manifest);
    c.config = cfg;
    return c;
}

inline nlohmann::json loss_record(std::size_t step, const LossReport& r) {
    return {{"step", step},     {"l_ref", r.l_ref},   {"l_src", r.l_src}, {"l_attr", r.l_attr},
            {"l_bg", r.l_bg},   {"l_prob", r.l_prob}, {"total", r.total}};
}

struct TrainOutputs {
    std::optional<std::filesystem::path> checkpoint;  // rewritten every checkpoint_every steps
    std::ostream* log = nullptr;                       // JSON lines, one per step
};

/// Runs from state.step up to cfg.steps. Starting from a checkpoint taken at
/// step k reproduces an uninterrupted run bitwise, since each step draws its
/// sample from (seed, step) alone.
inline Checkpoint train(TrainState state, const TrainConfig& cfg, const Backends& b, const TrainOutputs& out = {}) {
    cfg.validate();
    require_differentiable(b);
    if (state.mask.attribute_count() != b.specs.size())
        detail::throw_invalid("mask matrix has ", state.mask.attribute_count(), " attributes but the catalog has ",
                              b.specs.size());
    for (std::size_t t = 0; t < b.specs.size(); ++t)
        if (state.mask.attribute_names[t] != b.specs[t].name)
            detail::throw_invalid("mask matrix attribute ", t, " is '", state.mask.attribute_names[t],
                                  "' but the catalog has '", b.specs[t].name, "'");
    const auto& manifest = b.generator.manifest();
    while (state.step < cfg.steps) {
        const LossReport r = train_step(state, b, cfg);
        if (out.log)
            *out.log << loss_record(state.step, r).dump() << '\n';
        if (out.checkpoint && cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0)
            save_checkpoint(*out.checkpoint, make_checkpoint(state, cfg, manifest));
    }
    Checkpoint final_ckpt = make_checkpoint(state, cfg, manifest);
    if (out.checkpoint)
        save_checkpoint(*out.checkpoint, final_ckpt);
    return final_ckpt;
}

}  // namespace stylemask
