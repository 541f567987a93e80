// Copyright (C) 2026 The stylemask Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <type_traits>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "stylemask/editor.hpp"
#include "stylemask/hash.hpp"
#include "stylemask/image.hpp"
#include "stylemask/runtime.hpp"
#include "stylemask/trainer.hpp"

// HTTP+JSON facade, API version 1. All bodies are JSON; errors are
// {"error": {"status": int, "message": string}}.
//
//   GET  /health         {version, status, model_id, checkpoint}
//   GET  /attributes     {version, checkpoint, attributes[{name, region, groups[{template, phrases}]}],
//                         delta{min, max, default, step, useful[lo, hi]}}          409 without checkpoint
//   POST /sample         {count, seed} -> {version, entries[{id, seed, pose[yaw, pitch], image}]}
//                        entry k uses latent seed seed + k
//   POST /edit           {source_id, reference_id, attributes[], delta?}
//                        -> {version, id, image, source_id, reference_id, attributes, delta, report}
//                        the result id is itself a valid source/reference id
//   GET  /images/{id}    image/png
//   POST /reload         re-reads the checkpoint file the service was started with
//
// Ids are SHA-256 hex digests of the request that produced them, so equal
// requests map to equal ids.

namespace stylemask {

inline constexpr int kApiVersion = 1;
inline constexpr double kUsefulDeltaLow = 1.0;
inline constexpr double kUsefulDeltaHigh = 2.25;
inline constexpr double kDeltaStep = 0.05;

class HttpError : public std::runtime_error {
public:
    HttpError(int status, const std::string& msg) : std::runtime_error(msg), m_status(status) {}
    int status() const { return m_status; }

private:
    int m_status;
};

struct ServiceOptions {
    std::optional<std::filesystem::path> cache_dir;
    std::optional<std::filesystem::path> checkpoint_path;
    std::optional<std::filesystem::path> static_dir;
};

/// Loaded model state; replaced as a whole, never modified in place.
struct SessionState {
    std::string checkpoint_id;
    std::shared_ptr<const Checkpoint> checkpoint;
    std::shared_ptr<const Editor> editor;
};

inline std::string checkpoint_id(const Checkpoint& c) { return sha256_hex(to_json(c).dump()); }

class Service {
public:
    Service(ProjectConfig config, BackendBundle backends, ServiceOptions options = {})
        : m_config(std::move(config)),
          m_backends(std::move(backends)),
          m_options(std::move(options)),
          m_manifest_hash(manifest_hash(m_backends.generator->manifest())),
          m_session(std::make_shared<const SessionState>()) {
        if (m_options.cache_dir)
            std::filesystem::create_directories(*m_options.cache_dir);
    }

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Validates the checkpoint against the configuration and swaps it in.
    void load_checkpoint(const Checkpoint& c) {
        if (c.mask.attribute_names != m_config.attribute_names())
            detail::throw_invalid("checkpoint attributes do not match the configuration");
        const auto& manifest = m_backends.generator->manifest();
        if (c.model_id != manifest.model_id)
            detail::throw_invalid("checkpoint was trained on '", c.model_id, "', backend is '", manifest.model_id, "'");
        if (c.manifest_hash != m_manifest_hash)
            detail::throw_invalid("checkpoint manifest hash differs from the configured backend");
        auto next = std::make_shared<SessionState>();
        next->checkpoint_id = checkpoint_id(c);
        next->checkpoint = std::make_shared<const Checkpoint>(c);
        next->editor = std::make_shared<const Editor>(c.mask, m_backends.view());
        std::lock_guard lock(m_session_mutex);
        m_session = std::move(next);
    }

    std::shared_ptr<const SessionState> session() const {
        std::lock_guard lock(m_session_mutex);
        return m_session;
    }

    nlohmann::json health() const {
        const auto s = session();
        return {{"version", kApiVersion},
                {"status", "ok"},
                {"model_id", m_backends.generator->manifest().model_id},
                {"checkpoint", s->checkpoint ? nlohmann::json(s->checkpoint_id) : nlohmann::json(nullptr)}};
    }

    nlohmann::json attributes() const {
        const auto s = require_session();
        nlohmann::json attrs = nlohmann::json::array();
        for (const auto& a : m_config.attributes) {
            nlohmann::json groups = nlohmann::json::array();
            for (const auto& g : a.groups)
                groups.push_back({{"template", g.text_template}, {"phrases", g.phrases}});
            attrs.push_back({{"name", a.name}, {"region", a.region}, {"groups", groups}});
        }
        const auto& e = m_config.editor;
        return {{"version", kApiVersion},
                {"checkpoint", s->checkpoint_id},
                {"attributes", attrs},
                {"delta",
                 {{"min", e.delta_min},
                  {"max", e.delta_max},
                  {"default", e.delta_default},
                  {"step", kDeltaStep},
                  {"useful", {kUsefulDeltaLow, kUsefulDeltaHigh}}}}};
    }

    nlohmann::json sample(const nlohmann::json& body) {
        const auto count = field<std::size_t>(body, "count");
        const auto seed = field<std::uint64_t>(body, "seed");
        if (count > kMaxSample)
            throw HttpError(400, "count must be at most " + std::to_string(kMaxSample));
        nlohmann::json entries = nlohmann::json::array();
        for (std::size_t k = 0; k < count; ++k) {
            const std::uint64_t latent_seed = seed + k;
            const std::string id =
                sha256_hex(nlohmann::json{{"kind", "sample"}, {"manifest", m_manifest_hash}, {"seed", latent_seed}}.dump());
            nlohmann::json pose;
            if (auto known = find_source(id)) {
                pose = known->descriptor.at("pose");
            } else {
                const Latent l = backend_call([&] { return m_backends.generator->sample_latent(latent_seed); });
                const StyleCode s = backend_call([&] { return m_backends.generator->to_style(l); });
                const Image img = backend_call([&] { return m_backends.generator->synthesize(s); });
                pose = l.pose;
                store(id, {s, {{"seed", latent_seed}, {"pose", pose}}}, img);
            }
            entries.push_back({{"id", id}, {"seed", latent_seed}, {"pose", pose}, {"image", image_url(id)}});
        }
        return {{"version", kApiVersion}, {"entries", entries}};
    }

    nlohmann::json edit(const nlohmann::json& body) {
        const auto s = require_session();
        const auto source_id = field<std::string>(body, "source_id");
        const auto reference_id = field<std::string>(body, "reference_id");
        const auto names = field<std::vector<std::string>>(body, "attributes");
        const double delta = body.contains("delta") ? field<double>(body, "delta") : m_config.editor.delta_default;
        if (!std::isfinite(delta))
            throw HttpError(400, "delta must be finite");
        if (names.empty())
            throw HttpError(400, "attributes must name at least one attribute");
        std::set<std::size_t> omega_set;
        for (const auto& name : names) {
            const auto idx = attribute_index(name);
            if (!idx)
                throw HttpError(400, "unknown attribute '" + name + "'");
            omega_set.insert(*idx);
        }
        const auto src = find_source(source_id);
        if (!src)
            throw HttpError(404, "unknown source id '" + source_id + "'");
        const auto ref = find_source(reference_id);
        if (!ref)
            throw HttpError(404, "unknown reference id '" + reference_id + "'");

        const std::vector<std::size_t> omega(omega_set.begin(), omega_set.end());
        std::vector<std::string> canonical_names;
        for (std::size_t t : omega)
            canonical_names.push_back(m_config.attributes[t].name);
        const std::string id = sha256_hex(nlohmann::json{{"kind", "edit"},
                                                         {"checkpoint", s->checkpoint_id},
                                                         {"source", source_id},
                                                         {"reference", reference_id},
                                                         {"attributes", canonical_names},
                                                         {"delta", delta}}
                                              .dump());
        const EditResult result = backend_call([&] { return s->editor->edit({src->style, ref->style, omega, delta}); });
        store(id,
              {result.style,
               {{"source", source_id}, {"reference", reference_id}, {"attributes", canonical_names}, {"delta", delta}}},
              result.image);
        return {{"version", kApiVersion},
                {"id", id},
                {"image", image_url(id)},
                {"source_id", source_id},
                {"reference_id", reference_id},
                {"attributes", canonical_names},
                {"delta", delta},
                {"report", report_to_json(result)}};
    }

    std::optional<std::string> image_png(const std::string& id) const {
        {
            std::shared_lock lock(m_store_mutex);
            if (auto it = m_images.find(id); it != m_images.end())
                return it->second;
        }
        if (m_options.cache_dir && is_hex(id)) {
            std::ifstream f(*m_options.cache_dir / (id + ".png"), std::ios::binary);
            if (f)
                return std::string(std::istreambuf_iterator<char>(f), {});
        }
        return std::nullopt;
    }

    nlohmann::json reload() {
        if (!m_options.checkpoint_path)
            throw HttpError(409, "service was started without a checkpoint file");
        load_checkpoint(load_checkpoint_file(*m_options.checkpoint_path));
        return health();
    }

    void mount(httplib::Server& server) {
        server.Get("/health", wrap([this](const httplib::Request&) { return health(); }));
        server.Get("/attributes", wrap([this](const httplib::Request&) { return attributes(); }));
        server.Post("/sample", wrap([this](const httplib::Request& r) { return sample(parse(r)); }));
        server.Post("/edit", wrap([this](const httplib::Request& r) { return edit(parse(r)); }));
        server.Post("/reload", wrap([this](const httplib::Request&) { return reload(); }));
        server.Get(R"(/images/([0-9a-f]{64})(?:\.png)?)", [this](const httplib::Request& req, httplib::Response& res) {
            if (auto png = image_png(req.matches[1].str())) {
                res.set_content(*png, "image/png");
                res.set_header("Cache-Control", "public, max-age=31536000, immutable");
            } else {
                send_error(res, 404, "unknown image id '" + req.matches[1].str() + "'");
            }
        });
        if (m_options.static_dir)
            server.set_mount_point("/", m_options.static_dir->string());
    }

private:
    static constexpr std::size_t kMaxSample = 256;

    struct Source {
        StyleCode style;
        nlohmann::json descriptor;
    };

    static Checkpoint load_checkpoint_file(const std::filesystem::path& p) { return stylemask::load_checkpoint(p); }

    static std::string image_url(const std::string& id) { return "/images/" + id; }

    static bool is_hex(const std::string& s) {
        return !s.empty() && s.find_first_not_of("0123456789abcdef") == std::string::npos;
    }

    std::shared_ptr<const SessionState> require_session() const {
        auto s = session();
        if (!s->checkpoint)
            throw HttpError(409, "no checkpoint is loaded");
        return s;
    }

    std::optional<std::size_t> attribute_index(const std::string& name) const {
        for (std::size_t t = 0; t < m_config.attributes.size(); ++t)
            if (m_config.attributes[t].name == name)
                return t;
        return std::nullopt;
    }

    std::optional<Source> find_source(const std::string& id) const {
        std::shared_lock lock(m_store_mutex);
        if (auto it = m_sources.find(id); it != m_sources.end())
            return it->second;
        return std::nullopt;
    }

    void store(const std::string& id, Source src, const Image& img) {
        const auto bytes = png::encode(img);
        std::string png(bytes.begin(), bytes.end());
        if (m_options.cache_dir)
            write_text_atomic(*m_options.cache_dir / (id + ".png"), png);
        std::unique_lock lock(m_store_mutex);
        m_sources.emplace(id, std::move(src));
        m_images.emplace(id, std::move(png));
    }

    /// Runs a backend call, serialized when the backends are single-consumer.
    template <class F>
    std::invoke_result_t<F&> backend_call(F&& f) const {
        const bool serial = !m_backends.generator->thread_safe() || !m_backends.scorer->thread_safe();
        std::unique_lock<std::mutex> lock(m_backend_mutex, std::defer_lock);
        if (serial)
            lock.lock();
        return f();
    }

    template <class T>
    static T field(const nlohmann::json& body, const char* name) {
        if (!body.is_object() || !body.contains(name))
            throw HttpError(400, std::string("missing field '") + name + "'");
        try {
            return body.at(name).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw HttpError(400, std::string("field '") + name + "' has the wrong type");
        }
    }

    static nlohmann::json parse(const httplib::Request& r) {
        try {
            return r.body.empty() ? nlohmann::json::object() : nlohmann::json::parse(r.body);
        } catch (const nlohmann::json::parse_error&) {
            throw HttpError(400, "request body is not valid JSON");
        }
    }

    static void send_error(httplib::Response& res, int status, const std::string& msg) {
        res.status = status;
        res.set_content(nlohmann::json{{"error", {{"status", status}, {"message", msg}}}}.dump(), "application/json");
    }

    template <class F>
    static httplib::Server::Handler wrap(F fn) {
        return [fn](const httplib::Request& req, httplib::Response& res) {
            try {
                res.set_content(fn(req).dump(), "application/json");
            } catch (const HttpError& e) {
                send_error(res, e.status(), e.what());
            } catch (const InvalidInput& e) {
                send_error(res, 400, e.what());
            } catch (const BackendUnavailable& e) {
                send_error(res, 503, e.what());
            } catch (const ScorerUnavailable& e) {
                send_error(res, 503, e.what());
            } catch (const std::exception& e) {
                send_error(res, 500, e.what());
            }
        };
    }

    ProjectConfig m_config;
    BackendBundle m_backends;
    ServiceOptions m_options;
    std::string m_manifest_hash;

    mutable std::mutex m_session_mutex;
    std::shared_ptr<const SessionState> m_session;

    mutable std::shared_mutex m_store_mutex;
    std::map<std::string, Source> m_sources;
    std::map<std::string, std::string> m_images;

    mutable std::mutex m_backend_mutex;
};

}  // namespace stylemask
