// Copyright (C) 2026 The stylemask Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <thread>

#include "fixtures.hpp"
#include "stylemask/remote.hpp"
#include "stylemask/service.hpp"

using namespace stylemask;
namespace st = stylemask::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::unique_ptr<Service> make_service(bool with_checkpoint = true, ServiceOptions opts = {}) {
    auto svc = std::make_unique<Service>(toy_project_config(), make_backends(toy_project_config()), std::move(opts));
    if (with_checkpoint)
        svc->load_checkpoint(st::trained());
    return svc;
}

int status_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const HttpError& e) {
        return e.status();
    }
    return 200;
}

std::string message_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
}

fs::path temp_dir(const std::string& name) {
    auto d = fs::temp_directory_path() / ("stylemask_service_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string png_of(const Image& img) {
    const auto bytes = png::encode(img);
    return std::string(bytes.begin(), bytes.end());
}

/// Runs a service behind a real HTTP listener on an ephemeral port.
class Listener {
public:
    explicit Listener(Service& svc) {
        svc.mount(m_server);
        m_port = m_server.bind_to_any_port("127.0.0.1");
        m_thread = std::thread([this] { m_server.listen_after_bind(); });
        m_server.wait_until_ready();
    }
    ~Listener() {
        m_server.stop();
        m_thread.join();
    }
    httplib::Client client() const { return httplib::Client("127.0.0.1", m_port); }

private:
    httplib::Server m_server;
    int m_port = 0;
    std::thread m_thread;
};

std::string dead_url() {
    httplib::Server probe;
    const int port = probe.bind_to_any_port("127.0.0.1");
    probe.stop();
    return "http://127.0.0.1:" + std::to_string(port);
}

}  // namespace

TEST(ServiceSample, CountZeroIsEmpty) {
    auto svc = make_service();
    EXPECT_TRUE(svc->sample({{"count", 0}, {"seed", 5}}).at("entries").empty());
}

TEST(ServiceSample, DeterministicIdsAndImages) {
    auto a = make_service();
    auto b = make_service();
    const auto ra = a->sample({{"count", 4}, {"seed", 11}});
    const auto rb = b->sample({{"count", 4}, {"seed", 11}});
    EXPECT_EQ(ra, rb);
    for (const auto& e : ra.at("entries"))
        EXPECT_EQ(a->image_png(e.at("id")), b->image_png(e.at("id")));
    EXPECT_EQ(a->sample({{"count", 4}, {"seed", 11}}), ra);
}

TEST(ServiceSample, DistinctIdsAndRegenerableEntries) {
    auto svc = make_service();
    const auto r = svc->sample({{"count", 8}, {"seed", 100}});
    std::set<std::string> ids;
    const auto& gen = st::rig().generator;
    for (const auto& e : r.at("entries")) {
        ids.insert(e.at("id").get<std::string>());
        const auto seed = e.at("seed").get<std::uint64_t>();
        EXPECT_EQ((e.at("pose").get<std::array<double, 2>>()), gen.sample_latent(seed).pose);
        EXPECT_EQ(svc->image_png(e.at("id")), png_of(gen.synthesize(gen.sample_style(seed))));
        EXPECT_EQ(e.at("image"), "/images/" + e.at("id").get<std::string>());
    }
    EXPECT_EQ(ids.size(), 8u);
}

TEST(ServiceSample, BadRequests) {
    auto svc = make_service();
    EXPECT_EQ(status_of([&] { svc->sample({{"seed", 1}}); }), 400);
    EXPECT_EQ(status_of([&] { svc->sample({{"count", "many"}, {"seed", 1}}); }), 400);
    EXPECT_EQ(status_of([&] { svc->sample({{"count", 100000}, {"seed", 1}}); }), 400);
}

TEST(ServiceAttributes, CatalogFollowsConfig) {
    auto svc = make_service();
    const auto cat = svc->attributes();
    const auto cfg = toy_project_config();
    ASSERT_EQ(cat.at("attributes").size(), cfg.attributes.size());
    EXPECT_EQ(cat.at("checkpoint"), checkpoint_id(st::trained()));
    // rebuild the specs from the wire catalog as a client would
    for (std::size_t t = 0; t < cfg.attributes.size(); ++t) {
        const auto& a = cat.at("attributes")[t];
        AttributeSpec back;
        back.name = a.at("name");
        back.region = a.at("region");
        for (const auto& g : a.at("groups"))
            back.groups.push_back({g.at("phrases").get<std::vector<std::string>>(), g.at("template")});
        back.preselect_k = cfg.attributes[t].preselect_k;
        back.init_weight = cfg.attributes[t].init_weight;
        EXPECT_EQ(back, cfg.attributes[t]);
    }
    EXPECT_EQ(cat.at("delta").at("min"), 0.0);
    EXPECT_EQ(cat.at("delta").at("max"), 3.0);
    EXPECT_EQ(cat.at("delta").at("default"), 1.0);
}

TEST(ServiceAttributes, ConflictWithoutCheckpoint) {
    auto svc = make_service(false);
    EXPECT_EQ(status_of([&] { svc->attributes(); }), 409);
    EXPECT_TRUE(svc->health().at("checkpoint").is_null());
    const auto ids = svc->sample({{"count", 2}, {"seed", 1}}).at("entries");
    EXPECT_EQ(status_of([&] {
                  svc->edit({{"source_id", ids[0].at("id")}, {"reference_id", ids[1].at("id")}, {"attributes", {"disc"}}});
              }),
              409);
    EXPECT_EQ(status_of([&] { svc->reload(); }), 409);
}

TEST(ServiceCheckpoint, RejectsForeignCheckpoints) {
    auto svc = make_service(false);
    auto c = st::trained();
    c.manifest_hash = "0";
    EXPECT_THROW(svc->load_checkpoint(c), InvalidInput);
    c = st::trained();
    c.mask.attribute_names[1] = "hat";
    EXPECT_THROW(svc->load_checkpoint(c), InvalidInput);
    EXPECT_TRUE(svc->health().at("checkpoint").is_null());
}

class ServiceEdit : public ::testing::Test {
protected:
    void SetUp() override {
        svc = make_service();
        const auto e = svc->sample({{"count", 6}, {"seed", 1000}}).at("entries");
        for (const auto& x : e)
            ids.push_back(x.at("id"));
    }
    json request(std::size_t s, std::size_t r, std::vector<std::string> attrs, double delta) const {
        return {{"source_id", ids[s]}, {"reference_id", ids[r]}, {"attributes", attrs}, {"delta", delta}};
    }
    std::unique_ptr<Service> svc;
    std::vector<std::string> ids;
};

TEST_F(ServiceEdit, ZeroDeltaReturnsSourceBytes) {
    const auto r = svc->edit(request(0, 1, {"backdrop", "disc", "stripes"}, 0.0));
    EXPECT_EQ(svc->image_png(r.at("id")), svc->image_png(ids[0]));
}

TEST_F(ServiceEdit, RepeatedRequestSameAddress) {
    const auto a = svc->edit(request(2, 3, {"stripes"}, 1.5));
    const auto b = svc->edit(request(2, 3, {"stripes"}, 1.5));
    EXPECT_EQ(a, b);
    // attribute order and duplicates do not change the address
    EXPECT_EQ(svc->edit(request(2, 3, {"stripes", "disc"}, 1.0)).at("id"),
              svc->edit(request(2, 3, {"disc", "stripes", "disc"}, 1.0)).at("id"));
    EXPECT_NE(svc->edit(request(2, 3, {"stripes"}, 1.25)).at("id"), a.at("id"));
}

TEST_F(ServiceEdit, DefaultDeltaIsOne) {
    json body = request(0, 1, {"disc"}, 1.0);
    body.erase("delta");
    EXPECT_EQ(svc->edit(body), svc->edit(request(0, 1, {"disc"}, 1.0)));
}

TEST_F(ServiceEdit, ResultsChainAsSources) {
    const auto first = svc->edit(request(0, 1, {"disc"}, 1.0));
    json body = request(0, 1, {"stripes"}, 1.0);
    body["source_id"] = first.at("id");
    const auto second = svc->edit(body);
    const Editor e(st::trained().mask, st::rig().backends());
    const auto& gen = st::rig().generator;
    const std::vector<std::vector<std::size_t>> steps = {{1}, {2}};
    const auto seq = e.sequential(gen.sample_style(1000), gen.sample_style(1001), steps, std::vector<double>{1.0, 1.0});
    EXPECT_EQ(svc->image_png(second.at("id")), png_of(seq.back().image));
}

TEST_F(ServiceEdit, ErrorStatuses) {
    auto body = request(0, 1, {"disc"}, 1.0);
    body["source_id"] = std::string(64, 'a');
    EXPECT_EQ(status_of([&] { svc->edit(body); }), 404);
    body = request(0, 1, {"disc"}, 1.0);
    body["reference_id"] = "nope";
    EXPECT_EQ(status_of([&] { svc->edit(body); }), 404);
    EXPECT_EQ(status_of([&] { svc->edit(request(0, 1, {"disc", "mustache"}, 1.0)); }), 400);
    EXPECT_NE(message_of([&] { svc->edit(request(0, 1, {"mustache"}, 1.0)); }).find("mustache"), std::string::npos);
    EXPECT_EQ(status_of([&] { svc->edit(request(0, 1, {}, 1.0)); }), 400);
    body = request(0, 1, {"disc"}, 1.0);
    body["delta"] = "big";
    EXPECT_EQ(status_of([&] { svc->edit(body); }), 400);
    EXPECT_FALSE(svc->image_png(std::string(64, 'b')).has_value());
}

TEST_F(ServiceEdit, ConcurrentEqualsSerial) {
    std::vector<json> requests;
    for (std::size_t k = 0; k < 24; ++k)
        requests.push_back(request(k % 6, (k + 1) % 6, {svc->attributes().at("attributes")[k % 3].at("name")},
                                   0.25 * static_cast<double>(k % 9)));
    auto parallel_svc = make_service();
    parallel_svc->sample({{"count", 6}, {"seed", 1000}});
    std::vector<std::future<json>> futures;
    for (const auto& r : requests)
        futures.push_back(std::async(std::launch::async, [&, r] { return parallel_svc->edit(r); }));
    for (std::size_t k = 0; k < requests.size(); ++k) {
        const auto serial = svc->edit(requests[k]);
        const auto parallel = futures[k].get();
        EXPECT_EQ(parallel, serial);
        EXPECT_EQ(parallel_svc->image_png(parallel.at("id")), svc->image_png(serial.at("id")));
    }
}

TEST_F(ServiceEdit, CheckpointUntouchedByRequests) {
    const auto before = to_json(*svc->session()->checkpoint).dump();
    for (std::size_t k = 0; k < 5; ++k)
        svc->edit(request(k, k + 1, {"backdrop"}, 2.0));
    EXPECT_EQ(to_json(*svc->session()->checkpoint).dump(), before);
}

TEST(ServiceReload, SwapsCheckpointFromFile) {
    const auto dir = temp_dir("reload");
    const auto path = dir / "ckpt.json";
    save_checkpoint(path, st::trained());
    ServiceOptions opts;
    opts.checkpoint_path = path;
    auto svc = make_service(false, opts);
    const auto h = svc->reload();
    EXPECT_EQ(h.at("checkpoint"), checkpoint_id(st::trained()));
    const auto held = svc->session();
    save_checkpoint(path, st::trained(0.0));
    svc->reload();
    EXPECT_EQ(svc->health().at("checkpoint"), checkpoint_id(st::trained(0.0)));
    // a session obtained before the swap stays intact
    EXPECT_EQ(held->checkpoint_id, checkpoint_id(st::trained()));
}

TEST(ServiceCache, ImagesPersistAcrossInstances) {
    const auto dir = temp_dir("cache");
    ServiceOptions opts;
    opts.cache_dir = dir;
    std::string id, bytes;
    {
        auto svc = make_service(true, opts);
        id = svc->sample({{"count", 1}, {"seed", 3}}).at("entries")[0].at("id");
        bytes = *svc->image_png(id);
    }
    EXPECT_EQ(read_file(dir / (id + ".png")), bytes);
    auto fresh = make_service(true, opts);
    EXPECT_EQ(fresh->image_png(id), bytes);
    EXPECT_FALSE(fresh->image_png("../../etc/passwd").has_value());
}

TEST(ServiceHttp, EndToEnd) {
    auto svc = make_service();
    Listener l(*svc);
    auto cli = l.client();

    auto health = cli.Get("/health");
    ASSERT_TRUE(health);
    EXPECT_EQ(health->status, 200);
    EXPECT_EQ(json::parse(health->body).at("version"), kApiVersion);

    auto attrs = cli.Get("/attributes");
    ASSERT_TRUE(attrs);
    EXPECT_EQ(json::parse(attrs->body), svc->attributes());

    auto sample = cli.Post("/sample", json{{"count", 2}, {"seed", 40}}.dump(), "application/json");
    ASSERT_TRUE(sample);
    ASSERT_EQ(sample->status, 200);
    const auto entries = json::parse(sample->body).at("entries");

    const json body = {{"source_id", entries[0].at("id")},
                       {"reference_id", entries[1].at("id")},
                       {"attributes", {"disc"}},
                       {"delta", 1.0}};
    auto edit = cli.Post("/edit", body.dump(), "application/json");
    ASSERT_TRUE(edit);
    ASSERT_EQ(edit->status, 200);
    const auto result = json::parse(edit->body);
    EXPECT_EQ(result, svc->edit(body));

    auto img = cli.Get(result.at("image").get<std::string>());
    ASSERT_TRUE(img);
    EXPECT_EQ(img->status, 200);
    EXPECT_EQ(img->get_header_value("Content-Type"), "image/png");
    EXPECT_EQ(img->body, *svc->image_png(result.at("id")));

    auto missing = cli.Get("/images/" + std::string(64, 'c'));
    ASSERT_TRUE(missing);
    EXPECT_EQ(missing->status, 404);
    EXPECT_EQ(json::parse(missing->body).at("error").at("status"), 404);

    json bad = body;
    bad["attributes"] = {"mustache"};
    auto unknown = cli.Post("/edit", bad.dump(), "application/json");
    ASSERT_TRUE(unknown);
    EXPECT_EQ(unknown->status, 400);
    EXPECT_NE(json::parse(unknown->body).at("error").at("message").get<std::string>().find("mustache"),
              std::string::npos);

    auto garbage = cli.Post("/edit", "{oops", "application/json");
    ASSERT_TRUE(garbage);
    EXPECT_EQ(garbage->status, 400);
}

TEST(ServiceHttp, ConflictWithoutCheckpoint) {
    auto svc = make_service(false);
    Listener l(*svc);
    auto res = l.client().Get("/attributes");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 409);
}

TEST(ServiceHttp, UnavailableBackendIs503) {
    auto cfg = toy_project_config();
    auto manifest = cfg.manifest;
    manifest.kind = "remote";
    manifest.params = {{"endpoint", dead_url()}};
    BackendBundle b = make_backends(cfg);
    b.generator = std::make_unique<RemoteGenerator>(manifest, 2);
    Service svc(cfg, std::move(b));
    Listener l(svc);
    auto res = l.client().Post("/sample", json{{"count", 1}, {"seed", 1}}.dump(), "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 503);
}

TEST(ServiceHttp, UnavailableScorerIs503) {
    auto cfg = toy_project_config();
    BackendBundle b = make_backends(cfg);
    b.scorer = std::make_unique<RemoteScorer>(dead_url(), false, 2);
    Service svc(cfg, std::move(b));
    svc.load_checkpoint(st::trained());
    const auto ids = svc.sample({{"count", 2}, {"seed", 1}}).at("entries");
    Listener l(svc);
    const json body = {{"source_id", ids[0].at("id")}, {"reference_id", ids[1].at("id")}, {"attributes", {"disc"}}};
    auto res = l.client().Post("/edit", body.dump(), "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 503);
}

// The same (source, reference, attributes, delta) triple through the CLI.
TEST(ServiceCli, ReportAndImageMatchCli) {
    const auto dir = temp_dir("cli");
    const auto ckpt = dir / "ckpt.json";
    save_checkpoint(ckpt, st::trained());
    const auto config = fs::path(STYLEMASK_SOURCE_DIR) / "configs/toy.json";
    auto svc = make_service();
    for (const auto& [src, ref, attrs, delta] :
         std::vector<std::tuple<int, int, std::string, double>>{{1000, 1001, "disc", 1.0},
                                                                {7, 8, "backdrop,stripes", 1.75},
                                                                {20, 21, "stripes", 0.5}}) {
        const auto entries = svc->sample({{"count", 1}, {"seed", src}}).at("entries");
        const auto refs = svc->sample({{"count", 1}, {"seed", ref}}).at("entries");
        std::vector<std::string> names;
        for (std::size_t pos = 0, next; pos <= attrs.size(); pos = next + 1) {
            next = attrs.find(',', pos);
            if (next == std::string::npos)
                next = attrs.size();
            names.push_back(attrs.substr(pos, next - pos));
        }
        const auto r = svc->edit({{"source_id", entries[0].at("id")},
                                  {"reference_id", refs[0].at("id")},
                                  {"attributes", names},
                                  {"delta", delta}});
        const auto png = dir / "edit.png";
        const auto report = dir / "edit.json";
        const auto measured = dir / "measure.json";
        const std::string common = " --config \"" + config.string() + "\" --checkpoint \"" + ckpt.string() +
                                   "\" --source-seed " + std::to_string(src) + " --reference-seed " +
                                   std::to_string(ref) + " --attributes " + attrs + " --delta " +
                                   std::to_string(delta);
        ASSERT_EQ(std::system((std::string("\"") + STYLEMASK_CLI_PATH + "\" edit" + common + " --out \"" +
                               png.string() + "\" --report \"" + report.string() + "\"")
                                  .c_str()),
                  0);
        ASSERT_EQ(std::system((std::string("\"") + STYLEMASK_CLI_PATH + "\" measure" + common + " --report \"" +
                               measured.string() + "\"")
                                  .c_str()),
                  0);
        EXPECT_EQ(json::parse(read_file(measured)), r.at("report"));
        EXPECT_EQ(json::parse(read_file(report)), r.at("report"));
        EXPECT_EQ(read_file(png), *svc->image_png(r.at("id")));
    }
}
