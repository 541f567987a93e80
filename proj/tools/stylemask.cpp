// Copyright (C) 2026 The stylemask Authors
// SPDX-License-Identifier: Apache-2.0

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "stylemask/config.hpp"
#include "stylemask/editor.hpp"
#include "stylemask/preselect.hpp"
#include "stylemask/remote.hpp"
#include "stylemask/runtime.hpp"
#include "stylemask/service.hpp"
#include "stylemask/trainer.hpp"

namespace sm = stylemask;
namespace fs = std::filesystem;

namespace {

httplib::Server* g_server = nullptr;

void stop_server(int) {
    if (g_server)
        g_server->stop();
}

void write_or_print(const std::optional<std::string>& path, const nlohmann::json& j) {
    const std::string text = j.dump(2) + "\n";
    if (path)
        sm::write_text_atomic(*path, text);
    else
        std::cout << text;
}

/// Source or reference: a latent seed or a latent file {z, pose}.
struct LatentArg {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> file;

    sm::StyleCode resolve(const sm::GeneratorBackend& gen, const char* what) const {
        if (seed.has_value() == file.has_value())
            sm::detail::throw_invalid("give exactly one of --", what, "-seed and --", what, "-latent");
        if (seed)
            return gen.sample_style(*seed);
        const auto j = sm::read_json_file(*file);
        sm::Latent l;
        l.z = j.at("z").get<std::vector<double>>();
        const auto pose = j.value("pose", std::vector<double>{0.0, 0.0});
        if (pose.size() != 2)
            sm::detail::throw_invalid("latent pose needs two entries");
        l.pose = {pose[0], pose[1]};
        return gen.to_style(l);
    }
};

struct EditArgs {
    std::string config;
    std::string checkpoint;
    LatentArg source;
    LatentArg reference;
    std::vector<std::string> attributes;
    double delta = 1.0;
};

void add_edit_options(CLI::App* cmd, EditArgs& a, bool with_attributes = true) {
    cmd->add_option("--config", a.config, "project configuration")->required()->check(CLI::ExistingFile);
    cmd->add_option("--checkpoint", a.checkpoint, "trained checkpoint")->required()->check(CLI::ExistingFile);
    cmd->add_option("--source-seed", a.source.seed, "latent seed of the source");
    cmd->add_option("--source-latent", a.source.file, "latent file {z, pose} of the source");
    cmd->add_option("--reference-seed", a.reference.seed, "latent seed of the reference");
    cmd->add_option("--reference-latent", a.reference.file, "latent file {z, pose} of the reference");
    if (with_attributes)
        cmd->add_option("--attributes", a.attributes, "target attributes")->required()->delimiter(',');
}

struct Session {
    sm::ProjectConfig config;
    sm::BackendBundle backends;
    sm::Checkpoint checkpoint;
    std::unique_ptr<sm::Editor> editor;
    sm::StyleCode src;
    sm::StyleCode ref;

    explicit Session(const EditArgs& a)
        : config(sm::load_config(a.config)),
          backends(sm::make_backends(config)),
          checkpoint(sm::load_checkpoint(a.checkpoint)) {
        if (checkpoint.manifest_hash != sm::manifest_hash(backends.generator->manifest()))
            sm::detail::throw_invalid("checkpoint was trained with a different backend manifest");
        editor = std::make_unique<sm::Editor>(checkpoint.mask, backends.view());
        src = a.source.resolve(*backends.generator, "source");
        ref = a.reference.resolve(*backends.generator, "reference");
    }
};

nlohmann::json style_json(const sm::StyleCode& s) { return {{"values", s.values}, {"editable", s.editable}}; }

int run(int argc, char** argv) {
    CLI::App app{"stylemask: learned style-channel masks for attribute transfer"};
    app.require_subcommand(1);

    // config
    auto* cmd_config = app.add_subcommand("config", "print the default toy-world configuration");
    std::optional<std::string> config_out;
    cmd_config->add_option("--out", config_out, "write to a file instead of stdout");

    // preselect
    auto* cmd_pre = app.add_subcommand("preselect", "rank style channels per region by gradient attribution");
    std::string pre_config, pre_out;
    std::optional<std::size_t> pre_iters;
    std::optional<std::uint64_t> pre_seed;
    cmd_pre->add_option("--config", pre_config)->required()->check(CLI::ExistingFile);
    cmd_pre->add_option("--out", pre_out, "artifact path")->required();
    cmd_pre->add_option("--iterations", pre_iters);
    cmd_pre->add_option("--seed", pre_seed);

    // train
    auto* cmd_train = app.add_subcommand("train", "optimize the mask matrix");
    std::string tr_config, tr_out;
    std::optional<std::string> tr_log, tr_resume, tr_pre;
    std::optional<std::size_t> tr_steps;
    std::optional<std::uint64_t> tr_seed;
    std::optional<double> tr_bg, tr_lr;
    cmd_train->add_option("--config", tr_config)->required()->check(CLI::ExistingFile);
    cmd_train->add_option("--out", tr_out, "checkpoint path (rewritten periodically)")->required();
    cmd_train->add_option("--log", tr_log, "per-step loss log (JSON lines)");
    cmd_train->add_option("--resume", tr_resume, "continue from this checkpoint")->check(CLI::ExistingFile);
    cmd_train->add_option("--preselect", tr_pre, "pre-selection artifact used to initialize M")
        ->check(CLI::ExistingFile);
    cmd_train->add_option("--steps", tr_steps);
    cmd_train->add_option("--seed", tr_seed);
    cmd_train->add_option("--lambda-bg", tr_bg);
    cmd_train->add_option("--lr", tr_lr);

    // edit / measure
    EditArgs ed;
    std::string ed_out;
    std::optional<std::string> ed_report, ed_style;
    auto* cmd_edit = app.add_subcommand("edit", "transfer attributes from a reference and write the image");
    add_edit_options(cmd_edit, ed);
    cmd_edit->add_option("--delta", ed.delta, "editing intensity");
    cmd_edit->add_option("--out", ed_out, "PNG output")->required();
    cmd_edit->add_option("--report", ed_report, "QMM report JSON (default stdout)");
    cmd_edit->add_option("--style-out", ed_style, "edited style code JSON");

    EditArgs ms;
    std::optional<std::string> ms_report;
    auto* cmd_measure = app.add_subcommand("measure", "QMM report for an edit, without writing images");
    add_edit_options(cmd_measure, ms);
    cmd_measure->add_option("--delta", ms.delta, "editing intensity");
    cmd_measure->add_option("--report", ms_report, "write the report here instead of stdout");

    // sweep
    EditArgs sw;
    std::vector<double> sw_deltas(sm::kDefaultSweep.begin(), sm::kDefaultSweep.end());
    std::string sw_dir;
    auto* cmd_sweep = app.add_subcommand("sweep", "edit at several intensities");
    add_edit_options(cmd_sweep, sw);
    cmd_sweep->add_option("--deltas", sw_deltas, "intensities")->delimiter(',');
    cmd_sweep->add_option("--out-dir", sw_dir)->required();

    // sequential
    EditArgs sq;
    std::vector<std::string> sq_steps;
    std::vector<double> sq_deltas;
    std::string sq_dir;
    auto* cmd_seq = app.add_subcommand("sequential", "apply attribute sets one after another");
    add_edit_options(cmd_seq, sq, false);
    cmd_seq->add_option("--step", sq_steps, "comma separated attributes of one step (repeat)")->required();
    cmd_seq->add_option("--deltas", sq_deltas, "one intensity per step (default 1)")->delimiter(',');
    cmd_seq->add_option("--out-dir", sq_dir)->required();

    // serve
    auto* cmd_serve = app.add_subcommand("serve", "run the HTTP service");
    std::string sv_config;
    std::optional<std::string> sv_ckpt, sv_cache, sv_static;
    std::optional<int> sv_port;
    std::string sv_host = "127.0.0.1";
    cmd_serve->add_option("--config", sv_config)->required()->check(CLI::ExistingFile);
    cmd_serve->add_option("--checkpoint", sv_ckpt)->check(CLI::ExistingFile);
    cmd_serve->add_option("--port", sv_port, "port (default $STYLEMASK_PORT or 8080)");
    cmd_serve->add_option("--host", sv_host);
    cmd_serve->add_option("--cache-dir", sv_cache, "image cache directory (default $STYLEMASK_CACHE_DIR)");
    cmd_serve->add_option("--static-dir", sv_static, "serve a built web client from this directory");

    // model-server
    auto* cmd_model = app.add_subcommand("model-server", "serve the configured backends over the model wire protocol");
    std::string mv_config;
    int mv_port = 8090;
    std::string mv_host = "127.0.0.1";
    cmd_model->add_option("--config", mv_config)->required()->check(CLI::ExistingFile);
    cmd_model->add_option("--port", mv_port);
    cmd_model->add_option("--host", mv_host);

    CLI11_PARSE(app, argc, argv);

    if (cmd_config->parsed()) {
        write_or_print(config_out, sm::to_json(sm::toy_project_config(), sm::kToyTemplate));
        return 0;
    }

    if (cmd_pre->parsed()) {
        const auto cfg = sm::load_config(pre_config);
        const auto b = sm::make_backends(cfg);
        const auto table =
            sm::accumulate_attribution(*b.generator, *b.segmenter, pre_iters.value_or(cfg.training.preselect_iterations),
                                       pre_seed.value_or(cfg.training.preselect_seed));
        const auto sel = sm::preselect_channels(table, b.specs);
        sm::write_text_atomic(pre_out, sm::preselect_to_json(table, b.specs, sel).dump(1) + "\n");
        return 0;
    }

    if (cmd_train->parsed()) {
        const auto cfg = sm::load_config(tr_config);
        const auto b = sm::make_backends(cfg);
        sm::TrainConfig tc = cfg.training;
        sm::TrainState state;
        if (tr_resume) {
            const auto ck = sm::load_checkpoint(*tr_resume);
            if (ck.manifest_hash != sm::manifest_hash(b.generator->manifest()))
                sm::detail::throw_invalid("checkpoint was trained with a different backend manifest");
            tc = ck.config;
            state = ck.state();
        } else {
            sm::Preselection sel;
            if (tr_pre)
                sel = sm::selection_from_json(sm::read_json_file(*tr_pre), b.specs);
            else if (tc.preselect)
                sel = sm::preselect_channels(sm::accumulate_attribution(*b.generator, *b.segmenter,
                                                                        tc.preselect_iterations, tc.preselect_seed),
                                             b.specs);
            state.mask = sm::init_mask_matrix(b.generator->channel_count(), b.specs, sel, b.generator->editable());
        }
        if (tr_steps)
            tc.steps = *tr_steps;
        if (tr_seed) {
            if (tr_resume)
                sm::detail::throw_invalid("--seed cannot change the seed of a resumed run");
            tc.seed = *tr_seed;
        }
        if (tr_bg)
            tc.weights.bg = *tr_bg;
        if (tr_lr)
            tc.learning_rate = *tr_lr;
        tc.validate();
        std::ofstream log;
        sm::TrainOutputs out;
        out.checkpoint = fs::path(tr_out);
        if (tr_log) {
            log.open(*tr_log, tr_resume ? std::ios::app : std::ios::trunc);
            if (!log)
                sm::detail::throw_invalid("cannot open log file ", *tr_log);
            out.log = &log;
        }
        const auto ck = sm::train(std::move(state), tc, b.view(), out);
        std::cerr << "trained to step " << ck.step << ", checkpoint " << tr_out << "\n";
        return 0;
    }

    if (cmd_edit->parsed()) {
        Session s(ed);
        const auto r = s.editor->edit({s.src, s.ref, s.editor->resolve(ed.attributes), ed.delta});
        sm::png::write(ed_out, r.image);
        if (ed_style)
            sm::write_text_atomic(*ed_style, style_json(r.style).dump() + "\n");
        write_or_print(ed_report, sm::report_to_json(r));
        return 0;
    }

    if (cmd_measure->parsed()) {
        Session s(ms);
        const auto r = s.editor->edit({s.src, s.ref, s.editor->resolve(ms.attributes), ms.delta});
        write_or_print(ms_report, sm::report_to_json(r));
        return 0;
    }

    if (cmd_sweep->parsed()) {
        Session s(sw);
        const auto results = s.editor->sweep({s.src, s.ref, s.editor->resolve(sw.attributes), 1.0}, sw_deltas);
        fs::create_directories(sw_dir);
        nlohmann::json index = nlohmann::json::array();
        for (std::size_t i = 0; i < results.size(); ++i) {
            const std::string name = "delta_" + std::to_string(i) + ".png";
            sm::png::write(fs::path(sw_dir) / name, results[i].image);
            index.push_back({{"delta", sw_deltas[i]}, {"image", name}, {"report", sm::report_to_json(results[i])}});
        }
        sm::write_text_atomic(fs::path(sw_dir) / "sweep.json", index.dump(2) + "\n");
        std::cout << index.dump(2) << "\n";
        return 0;
    }

    if (cmd_seq->parsed()) {
        Session s(sq);
        std::vector<std::vector<std::size_t>> omegas;
        for (const auto& step : sq_steps) {
            std::vector<std::string> names;
            std::stringstream ss(step);
            for (std::string item; std::getline(ss, item, ',');)
                if (!item.empty())
                    names.push_back(item);
            omegas.push_back(s.editor->resolve(names));
        }
        if (sq_deltas.empty())
            sq_deltas.assign(omegas.size(), 1.0);
        const auto results = s.editor->sequential(s.src, s.ref, omegas, sq_deltas);
        fs::create_directories(sq_dir);
        nlohmann::json index = nlohmann::json::array();
        for (std::size_t i = 0; i < results.size(); ++i) {
            const std::string name = "step_" + std::to_string(i) + ".png";
            sm::png::write(fs::path(sq_dir) / name, results[i].image);
            index.push_back({{"attributes", sq_steps[i]},
                             {"delta", sq_deltas[i]},
                             {"image", name},
                             {"report", sm::report_to_json(results[i])}});
        }
        sm::write_text_atomic(fs::path(sq_dir) / "sequential.json", index.dump(2) + "\n");
        std::cout << index.dump(2) << "\n";
        return 0;
    }

    if (cmd_serve->parsed()) {
        auto cfg = sm::load_config(sv_config);
        auto b = sm::make_backends(cfg);
        sm::ServiceOptions opts;
        if (!sv_cache)
            if (const char* env = std::getenv("STYLEMASK_CACHE_DIR"))
                sv_cache = env;
        if (sv_cache)
            opts.cache_dir = *sv_cache;
        if (sv_ckpt)
            opts.checkpoint_path = *sv_ckpt;
        if (sv_static)
            opts.static_dir = *sv_static;
        int port = 8080;
        if (sv_port)
            port = *sv_port;
        else if (const char* env = std::getenv("STYLEMASK_PORT"))
            port = std::stoi(env);
        sm::Service service(std::move(cfg), std::move(b), opts);
        if (sv_ckpt)
            service.load_checkpoint(sm::load_checkpoint(*sv_ckpt));
        httplib::Server server;
        service.mount(server);
        g_server = &server;
        std::signal(SIGINT, stop_server);
        std::signal(SIGTERM, stop_server);
        std::cerr << "listening on http://" << sv_host << ":" << port << "\n";
        if (!server.listen(sv_host, port))
            throw std::runtime_error("cannot listen on " + sv_host + ":" + std::to_string(port));
        return 0;
    }

    if (cmd_model->parsed()) {
        const auto cfg = sm::load_config(mv_config);
        const auto b = sm::make_backends(cfg);
        httplib::Server server;
        sm::mount_model_endpoints(server, *b.generator, *b.segmenter, *b.scorer);
        g_server = &server;
        std::signal(SIGINT, stop_server);
        std::signal(SIGTERM, stop_server);
        std::cerr << "model endpoints on http://" << mv_host << ":" << mv_port << "\n";
        if (!server.listen(mv_host, mv_port))
            throw std::runtime_error("cannot listen on " + mv_host + ":" + std::to_string(mv_port));
        return 0;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const sm::InvalidInput& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const sm::BackendUnavailable& e) {
        std::cerr << "backend unavailable: " << e.what() << "\n";
        return 3;
    } catch (const sm::ScorerUnavailable& e) {
        std::cerr << "scorer unavailable: " << e.what() << "\n";
        return 3;
    } catch (const sm::TrainingDiverged& e) {
        std::cerr << "training diverged: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
