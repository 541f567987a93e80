// Copyright (C) 2026 The stylemask Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <tuple>
#include <vector>

#include "stylemask/editor.hpp"
#include "stylemask/preselect.hpp"
#include "stylemask/runtime.hpp"
#include "stylemask/toy.hpp"
#include "stylemask/trainer.hpp"

namespace stylemask::testing {

/// Standard toy world with its segmenter, scorer and attribute catalog.
struct ToyRig {
    ToyWorld world;
    ToyGenerator generator;
    ToySegmenter segmenter;
    ToyScorer scorer;
    std::vector<AttributeSpec> specs;

    explicit ToyRig(ToyWorld w = ToyWorld::standard())
        : world(w), generator(w), segmenter(w.image_size), scorer(w), specs(toy_attribute_specs(w)) {}

    Backends backends() const { return {generator, segmenter, scorer, specs}; }

    MaskMatrix initial_mask(const Preselection& sel = {}) const {
        return init_mask_matrix(world.n_channels, specs, sel, world.editable());
    }
};

inline const ToyRig& rig() {
    static const ToyRig r;
    return r;
}

/// Trains once per (lambda_bg, preselect) and memoizes the result.
inline const Checkpoint& trained(double lambda_bg = 1.0, bool preselect = false) {
    static std::mutex mu;
    static std::map<std::pair<double, bool>, std::unique_ptr<Checkpoint>> cache;
    std::lock_guard lock(mu);
    auto& slot = cache[{lambda_bg, preselect}];
    if (!slot) {
        const auto& r = rig();
        TrainConfig cfg;
        cfg.weights.bg = lambda_bg;
        Preselection sel;
        if (preselect)
            sel = preselect_channels(accumulate_attribution(r.generator, r.segmenter, cfg.preselect_iterations,
                                                            cfg.preselect_seed),
                                     r.specs);
        slot = std::make_unique<Checkpoint>(train({r.initial_mask(sel), {}, 0}, cfg, r.backends()));
    }
    return *slot;
}

/// Softmax evaluated in long double without max subtraction; independent of
/// the library implementation.
inline std::vector<long double> reference_softmax(const std::vector<double>& x) {
    long double z = 0.0L;
    std::vector<long double> e(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        z += e[i] = std::exp(static_cast<long double>(x[i]));
    for (auto& v : e)
        v /= z;
    return e;
}

inline Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale) {
    std::normal_distribution<double> normal(0.0, scale);
    Matrix m(rows, cols);
    for (double& v : m.data())
        v = normal(rng);
    return m;
}

inline std::vector<std::string> attribute_names(std::size_t m) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < m; ++i)
        out.push_back("a" + std::to_string(i));
    return out;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

/// Random image with values in [0, 1].
inline Image random_image(std::mt19937_64& rng, std::size_t h, std::size_t w, std::size_t c) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(h, w, c);
    for (double& v : img.pixels)
        v = u(rng);
    return img;
}

}  // namespace stylemask::testing
