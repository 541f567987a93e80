// Copyright (C) 2026 The stylemask Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "stylemask/backends.hpp"
#include "stylemask/errors.hpp"
#include "stylemask/hash.hpp"
#include "stylemask/image.hpp"
#include "stylemask/qmm.hpp"

// HTTP adapters for out-of-process models (a pre-trained generator, an
// image-text scorer, a face parser). The model process implements the
// endpoints below; mount_model_endpoints() is a reference implementation that
// serves any in-process backend with the same wire format.
//
//   GET  /info            {manifest, generator_hash, scorer_hash, regions}
//   POST /sample_latent   {seed}                          -> {z, pose}
//   POST /to_style        {z, pose}                       -> {values}
//   POST /synthesize      {values}                        -> {image}
//   POST /synthesize_vjp  {values, grad_image}            -> {grad}
//   POST /segment         {image}                         -> {masks}
//   POST /score           {image, phrases}                -> {scores}
//   POST /score_vjp       {image, phrases, grad_scores}   -> {grad_image}
//
// Images travel as {height, width, channels, pixels[]} with HWC doubles; masks
// as arrays of 0/1. Non-2xx answers carry {"error": message}.

namespace stylemask {

namespace wire {

inline nlohmann::json to_json(const Image& img) {
    return {{"height", img.height}, {"width", img.width}, {"channels", img.channels}, {"pixels", img.pixels}};
}

inline Image image_from_json(const nlohmann::json& j) {
    Image img(j.at("height").get<std::size_t>(), j.at("width").get<std::size_t>(),
              j.at("channels").get<std::size_t>());
    auto pixels = j.at("pixels").get<std::vector<double>>();
    if (pixels.size() != img.pixels.size())
        detail::throw_invalid("image payload has ", pixels.size(), " values, expected ", img.pixels.size());
    img.pixels = std::move(pixels);
    return img;
}

/// Splits "http://host:port" into the pieces httplib::Client expects.
struct Endpoint {
    std::string host;
    int port = 80;

    static Endpoint parse(const std::string& url) {
        std::string rest = url;
        const std::string scheme = "http://";
        if (rest.rfind(scheme, 0) == 0)
            rest = rest.substr(scheme.size());
        else if (rest.find("://") != std::string::npos)
            detail::throw_invalid("only plain http endpoints are supported: '", url, "'");
        while (!rest.empty() && rest.back() == '/')
            rest.pop_back();
        Endpoint e;
        const auto colon = rest.rfind(':');
        if (colon == std::string::npos) {
            e.host = rest;
        } else {
            e.host = rest.substr(0, colon);
            try {
                e.port = std::stoi(rest.substr(colon + 1));
            } catch (const std::exception&) {
                detail::throw_invalid("bad port in endpoint '", url, "'");
            }
        }
        if (e.host.empty())
            detail::throw_invalid("endpoint '", url, "' has no host");
        return e;
    }
};

/// One JSON request. A fresh client per call keeps the adapters safe to use
/// from several threads.
template <class Error>
nlohmann::json call(const Endpoint& ep, const std::string& path, const nlohmann::json* body, int timeout_s) {
    httplib::Client client(ep.host, ep.port);
    client.set_connection_timeout(timeout_s, 0);
    client.set_read_timeout(timeout_s, 0);
    auto res = body ? client.Post(path, body->dump(), "application/json") : client.Get(path);
    if (!res)
        throw Error("model endpoint " + ep.host + ":" + std::to_string(ep.port) + path +
                    " unreachable: " + httplib::to_string(res.error()));
    nlohmann::json out;
    try {
        out = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::parse_error&) {
        throw Error("model endpoint " + path + " returned malformed JSON (HTTP " + std::to_string(res->status) + ")");
    }
    if (res->status < 200 || res->status >= 300)
        throw Error("model endpoint " + path + " failed (HTTP " + std::to_string(res->status) +
                    "): " + out.value("error", std::string("no message")));
    return out;
}

}  // namespace wire

/// Generator served by a model process. The manifest comes from the local
/// configuration; params.endpoint names the process, params.differentiable
/// declares whether /synthesize_vjp is available.
class RemoteGenerator final : public GeneratorBackend {
public:
    explicit RemoteGenerator(BackendManifest manifest, int timeout_s = 30)
        : m_manifest(std::move(manifest)),
          m_endpoint(wire::Endpoint::parse(m_manifest.params.value("endpoint", std::string{}))),
          m_differentiable(m_manifest.params.value("differentiable", false)),
          m_timeout(timeout_s) {}

    const BackendManifest& manifest() const override { return m_manifest; }

    Latent sample_latent(std::uint64_t seed) const override {
        const nlohmann::json body = {{"seed", seed}};
        const auto r = post("/sample_latent", body);
        Latent l;
        l.z = r.at("z").get<std::vector<double>>();
        const auto pose = r.at("pose").get<std::vector<double>>();
        if (pose.size() != 2)
            throw BackendUnavailable("model returned a pose with " + std::to_string(pose.size()) + " entries");
        l.pose = {pose[0], pose[1]};
        return l;
    }

    StyleCode to_style(const Latent& l) const override {
        const nlohmann::json body = {{"z", l.z}, {"pose", l.pose}};
        auto values = post("/to_style", body).at("values").get<std::vector<double>>();
        if (values.size() != m_manifest.n_channels)
            throw BackendUnavailable("model returned " + std::to_string(values.size()) + " style channels, manifest says " +
                                     std::to_string(m_manifest.n_channels));
        return StyleCode(std::move(values), m_manifest.editable());
    }

    Image synthesize(const StyleCode& s) const override {
        check(s);
        const nlohmann::json body = {{"values", s.values}};
        Image img = wire::image_from_json(post("/synthesize", body).at("image"));
        if (img.height != m_manifest.image_height || img.width != m_manifest.image_width ||
            img.channels != m_manifest.image_channels)
            throw BackendUnavailable("model returned an image of the wrong shape");
        return img;
    }

    bool differentiable() const override { return m_differentiable; }

    std::vector<double> synthesize_vjp(const StyleCode& s, const Image& grad_image) const override {
        if (!m_differentiable)
            throw BackendUnavailable("generator '" + m_manifest.model_id + "' is not differentiable");
        check(s);
        const nlohmann::json body = {{"values", s.values}, {"grad_image", wire::to_json(grad_image)}};
        auto g = post("/synthesize_vjp", body).at("grad").get<std::vector<double>>();
        if (g.size() != s.size())
            throw BackendUnavailable("model returned a style gradient of the wrong length");
        return g;
    }

    /// Hash of the local manifest together with the hash the model reports.
    std::string parameter_hash() const override {
        const auto info = wire::call<BackendUnavailable>(m_endpoint, "/info", nullptr, m_timeout);
        return sha256_hex(to_json(m_manifest).dump() + "|" + info.value("generator_hash", std::string{}));
    }

private:
    nlohmann::json post(const std::string& path, const nlohmann::json& body) const {
        try {
            return wire::call<BackendUnavailable>(m_endpoint, path, &body, m_timeout);
        } catch (const nlohmann::json::exception& e) {
            throw BackendUnavailable(std::string("unexpected model response: ") + e.what());
        }
    }

    void check(const StyleCode& s) const {
        if (s.size() != m_manifest.n_channels)
            detail::throw_invalid("style code has ", s.size(), " channels, manifest declares ", m_manifest.n_channels);
    }

    BackendManifest m_manifest;
    wire::Endpoint m_endpoint;
    bool m_differentiable;
    int m_timeout;
};

class RemoteScorer final : public ImageTextScorer {
public:
    explicit RemoteScorer(const std::string& endpoint, bool differentiable = false, int timeout_s = 30)
        : m_endpoint(wire::Endpoint::parse(endpoint)), m_differentiable(differentiable), m_timeout(timeout_s) {}

    std::vector<double> score(const Image& image, std::span<const std::string> phrases) const override {
        const nlohmann::json body = {{"image", wire::to_json(image)},
                                     {"phrases", std::vector<std::string>(phrases.begin(), phrases.end())}};
        auto s = post("/score", body).at("scores").get<std::vector<double>>();
        if (s.size() != phrases.size())
            throw ScorerUnavailable("scorer returned " + std::to_string(s.size()) + " scores for " +
                                    std::to_string(phrases.size()) + " phrases");
        return s;
    }

    bool differentiable() const override { return m_differentiable; }

    Image score_vjp(const Image& image, std::span<const std::string> phrases,
                    std::span<const double> grad_scores) const override {
        if (!m_differentiable)
            throw ScorerUnavailable("scorer is not differentiable");
        const nlohmann::json body = {{"image", wire::to_json(image)},
                                     {"phrases", std::vector<std::string>(phrases.begin(), phrases.end())},
                                     {"grad_scores", std::vector<double>(grad_scores.begin(), grad_scores.end())}};
        return wire::image_from_json(post("/score_vjp", body).at("grad_image"));
    }

    std::string parameter_hash() const override {
        return wire::call<ScorerUnavailable>(m_endpoint, "/info", nullptr, m_timeout).value("scorer_hash", std::string{});
    }

private:
    nlohmann::json post(const std::string& path, const nlohmann::json& body) const {
        try {
            return wire::call<ScorerUnavailable>(m_endpoint, path, &body, m_timeout);
        } catch (const nlohmann::json::exception& e) {
            throw ScorerUnavailable(std::string("unexpected scorer response: ") + e.what());
        }
    }

    wire::Endpoint m_endpoint;
    bool m_differentiable;
    int m_timeout;
};

class RemoteSegmenter final : public RegionSegmenter {
public:
    explicit RemoteSegmenter(const std::string& endpoint, int timeout_s = 30)
        : m_endpoint(wire::Endpoint::parse(endpoint)), m_timeout(timeout_s) {
        m_regions = wire::call<BackendUnavailable>(m_endpoint, "/info", nullptr, m_timeout)
                        .at("regions")
                        .get<std::vector<std::string>>();
    }

    std::vector<std::string> regions() const override { return m_regions; }

    std::vector<RegionMask> segment(const Image& image) const override {
        const nlohmann::json body = {{"image", wire::to_json(image)}};
        const auto r = wire::call<BackendUnavailable>(m_endpoint, "/segment", &body, m_timeout);
        std::vector<RegionMask> out;
        for (const auto& bits : r.at("masks")) {
            RegionMask m(image.height, image.width);
            auto v = bits.get<std::vector<std::uint8_t>>();
            if (v.size() != m.bits.size())
                throw BackendUnavailable("segmenter returned a mask of the wrong size");
            for (auto b : v)
                if (b > 1)
                    throw BackendUnavailable("segmenter returned a non-binary mask");
            m.bits = std::move(v);
            out.push_back(std::move(m));
        }
        if (out.size() != m_regions.size())
            throw BackendUnavailable("segmenter returned " + std::to_string(out.size()) + " masks for " +
                                     std::to_string(m_regions.size()) + " regions");
        return out;
    }

private:
    wire::Endpoint m_endpoint;
    int m_timeout;
    std::vector<std::string> m_regions;
};

/// Serves in-process backends over the wire format above.
inline void mount_model_endpoints(httplib::Server& server, const GeneratorBackend& gen, const RegionSegmenter& seg,
                                  const ImageTextScorer& scorer) {
    auto handle = [](auto fn) {
        return [fn](const httplib::Request& req, httplib::Response& res) {
            try {
                const auto body = req.body.empty() ? nlohmann::json::object() : nlohmann::json::parse(req.body);
                res.set_content(fn(body).dump(), "application/json");
            } catch (const std::exception& e) {
                res.status = 400;
                res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
            }
        };
    };
    server.Get("/info", handle([&](const nlohmann::json&) {
                   return nlohmann::json{{"manifest", to_json(gen.manifest())},
                                         {"generator_hash", gen.parameter_hash()},
                                         {"scorer_hash", scorer.parameter_hash()},
                                         {"regions", seg.regions()}};
               }));
    server.Post("/sample_latent", handle([&](const nlohmann::json& j) {
                    const Latent l = gen.sample_latent(j.at("seed").get<std::uint64_t>());
                    return nlohmann::json{{"z", l.z}, {"pose", l.pose}};
                }));
    server.Post("/to_style", handle([&](const nlohmann::json& j) {
                    Latent l;
                    l.z = j.at("z").get<std::vector<double>>();
                    const auto pose = j.at("pose").get<std::vector<double>>();
                    if (pose.size() != 2)
                        detail::throw_invalid("pose needs two entries");
                    l.pose = {pose[0], pose[1]};
                    return nlohmann::json{{"values", gen.to_style(l).values}};
                }));
    server.Post("/synthesize", handle([&](const nlohmann::json& j) {
                    const StyleCode s(j.at("values").get<std::vector<double>>(), gen.editable());
                    return nlohmann::json{{"image", wire::to_json(gen.synthesize(s))}};
                }));
    server.Post("/synthesize_vjp", handle([&](const nlohmann::json& j) {
                    const StyleCode s(j.at("values").get<std::vector<double>>(), gen.editable());
                    return nlohmann::json{
                        {"grad", gen.synthesize_vjp(s, wire::image_from_json(j.at("grad_image")))}};
                }));
    server.Post("/segment", handle([&](const nlohmann::json& j) {
                    nlohmann::json masks = nlohmann::json::array();
                    for (const auto& m : seg.segment(wire::image_from_json(j.at("image"))))
                        masks.push_back(m.bits);
                    return nlohmann::json{{"masks", masks}};
                }));
    server.Post("/score", handle([&](const nlohmann::json& j) {
                    const auto phrases = j.at("phrases").get<std::vector<std::string>>();
                    return nlohmann::json{{"scores", scorer.score(wire::image_from_json(j.at("image")), phrases)}};
                }));
    server.Post("/score_vjp", handle([&](const nlohmann::json& j) {
                    const auto phrases = j.at("phrases").get<std::vector<std::string>>();
                    const auto g = j.at("grad_scores").get<std::vector<double>>();
                    return nlohmann::json{
                        {"grad_image",
                         wire::to_json(scorer.score_vjp(wire::image_from_json(j.at("image")), phrases, g))}};
                }));
}

}  // namespace stylemask
