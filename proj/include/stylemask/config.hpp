// Copyright (C) 2026 The stylemask Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stylemask/backends.hpp"
#include "stylemask/errors.hpp"
#include "stylemask/losses.hpp"
#include "stylemask/qmm.hpp"

// Project configuration file (JSON). Schema, format "stylemask-config/1":
//
//   template      default text template, one {} placeholder
//   attributes[]  name, region, k (pre-selection budget), d (init weight),
//                 groups[] of {phrases[], template?}
//   backend       generator manifest (format "stylemask-manifest/1")
//   training      see TrainConfig
//   editor        delta_min, delta_max, delta_default
//
// Attribute names are the stable keys checkpoints refer to.

namespace stylemask {

inline constexpr const char* kConfigFormat = "stylemask-config/1";

enum class OptimizerKind { sgd, momentum, adam };
enum class OmegaPolicy { singleton, pair };

inline const char* to_string(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::sgd: return "sgd";
        case OptimizerKind::momentum: return "momentum";
        case OptimizerKind::adam: return "adam";
    }
    return "?";
}

inline const char* to_string(OmegaPolicy p) { return p == OmegaPolicy::singleton ? "singleton" : "pair"; }

struct TrainConfig {
    std::size_t steps = 500;
    double learning_rate = 0.05;
    OptimizerKind optimizer = OptimizerKind::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    OmegaPolicy omega = OmegaPolicy::singleton;
    double delta = 1.0;
    std::uint64_t seed = 1;
    std::size_t checkpoint_every = 100;
    LossWeights weights;
    bool preselect = false;
    std::size_t preselect_iterations = 256;
    std::uint64_t preselect_seed = 7;

    void validate() const {
        if (steps == 0)
            detail::throw_invalid("training needs at least one step");
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
            detail::throw_invalid("learning rate must be finite and non-negative");
        if (!std::isfinite(delta))
            detail::throw_invalid("training delta must be finite");
        weights.validate();
    }

    bool operator==(const TrainConfig&) const = default;
};

struct EditorBounds {
    double delta_min = 0.0;
    double delta_max = 3.0;
    double delta_default = 1.0;
};

struct ProjectConfig {
    std::vector<AttributeSpec> attributes;
    BackendManifest manifest;
    TrainConfig training;
    EditorBounds editor;

    std::vector<std::string> attribute_names() const {
        std::vector<std::string> out;
        for (const auto& a : attributes)
            out.push_back(a.name);
        return out;
    }
};

inline nlohmann::json to_json(const LossWeights& w) { return {{"attr", w.attr}, {"bg", w.bg}, {"prob", w.prob}}; }

inline LossWeights weights_from_json(const nlohmann::json& j) {
    LossWeights w;
    w.attr = j.value("attr", w.attr);
    w.bg = j.value("bg", w.bg);
    w.prob = j.value("prob", w.prob);
    w.validate();
    return w;
}

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"steps", c.steps},
            {"learning_rate", c.learning_rate},
            {"optimizer", to_string(c.optimizer)},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"epsilon", c.epsilon},
            {"omega", to_string(c.omega)},
            {"delta", c.delta},
            {"seed", c.seed},
            {"checkpoint_every", c.checkpoint_every},
            {"loss_weights", to_json(c.weights)},
            {"preselect", {{"enabled", c.preselect}, {"iterations", c.preselect_iterations}, {"seed", c.preselect_seed}}}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.steps = j.value("steps", c.steps);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    const auto opt = j.value("optimizer", std::string(to_string(c.optimizer)));
    if (opt == "sgd")
        c.optimizer = OptimizerKind::sgd;
    else if (opt == "momentum")
        c.optimizer = OptimizerKind::momentum;
    else if (opt == "adam")
        c.optimizer = OptimizerKind::adam;
    else
        detail::throw_invalid("unknown optimizer '", opt, "'");
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    const auto omega = j.value("omega", std::string(to_string(c.omega)));
    if (omega == "singleton")
        c.omega = OmegaPolicy::singleton;
    else if (omega == "pair")
        c.omega = OmegaPolicy::pair;
    else
        detail::throw_invalid("unknown omega policy '", omega, "'");
    c.delta = j.value("delta", c.delta);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    if (j.contains("loss_weights"))
        c.weights = weights_from_json(j.at("loss_weights"));
    if (j.contains("preselect")) {
        const auto& p = j.at("preselect");
        c.preselect = p.value("enabled", c.preselect);
        c.preselect_iterations = p.value("iterations", c.preselect_iterations);
        c.preselect_seed = p.value("seed", c.preselect_seed);
    }
    c.validate();
    return c;
}

inline nlohmann::json to_json(const AttributeSpec& a, const std::string& default_template) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : a.groups) {
        nlohmann::json jg = {{"phrases", g.phrases}};
        if (g.text_template != default_template)
            jg["template"] = g.text_template;
        groups.push_back(jg);
    }
    return {{"name", a.name}, {"region", a.region}, {"k", a.preselect_k}, {"d", a.init_weight}, {"groups", groups}};
}

inline std::vector<AttributeSpec> attributes_from_json(const nlohmann::json& list, const std::string& default_template) {
    std::vector<AttributeSpec> out;
    for (const auto& j : list) {
        AttributeSpec a;
        a.name = j.at("name").get<std::string>();
        a.region = j.value("region", std::string{});
        a.preselect_k = j.value("k", std::size_t{0});
        a.init_weight = j.value("d", 1.0);
        for (const auto& g : j.at("groups")) {
            DescriptorGroup group;
            group.phrases = g.at("phrases").get<std::vector<std::string>>();
            group.text_template = g.value("template", default_template);
            a.groups.push_back(std::move(group));
        }
        a.validate();
        for (const auto& prev : out)
            if (prev.name == a.name)
                detail::throw_invalid("attribute '", a.name, "' is defined twice");
        out.push_back(std::move(a));
    }
    if (out.empty())
        detail::throw_invalid("configuration defines no attributes");
    return out;
}

inline ProjectConfig config_from_json(const nlohmann::json& j) {
    if (j.value("format", std::string{}) != kConfigFormat)
        detail::throw_invalid("unsupported config format '", j.value("format", std::string{}), "'");
    ProjectConfig c;
    const auto tmpl = j.value("template", std::string(kDefaultTemplate));
    c.attributes = attributes_from_json(j.at("attributes"), tmpl);
    c.manifest = manifest_from_json(j.at("backend"));
    if (j.contains("training"))
        c.training = train_config_from_json(j.at("training"));
    if (j.contains("editor")) {
        const auto& e = j.at("editor");
        c.editor.delta_min = e.value("delta_min", c.editor.delta_min);
        c.editor.delta_max = e.value("delta_max", c.editor.delta_max);
        c.editor.delta_default = e.value("delta_default", c.editor.delta_default);
    }
    return c;
}

inline nlohmann::json to_json(const ProjectConfig& c, const std::string& default_template = kDefaultTemplate) {
    nlohmann::json attrs = nlohmann::json::array();
    for (const auto& a : c.attributes)
        attrs.push_back(to_json(a, default_template));
    return {{"format", kConfigFormat},
            {"template", default_template},
            {"attributes", attrs},
            {"backend", to_json(c.manifest)},
            {"training", to_json(c.training)},
            {"editor",
             {{"delta_min", c.editor.delta_min},
              {"delta_max", c.editor.delta_max},
              {"delta_default", c.editor.delta_default}}}};
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f)
        detail::throw_invalid("cannot open ", path.string());
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        detail::throw_invalid("cannot parse ", path.string(), ": ", e.what());
    }
}

/// Writes through a temporary file and renames, so readers never observe a
/// partially written file.
inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f)
            throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        f << text;
        if (!f.flush())
            throw std::runtime_error("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline ProjectConfig load_config(const std::filesystem::path& path) { return config_from_json(read_json_file(path)); }

}  // namespace stylemask
