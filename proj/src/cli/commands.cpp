#include "orbitedit/cli.hpp"

#include <chrono>
#include <optional>

#include <CLI11.hpp>

#include "orbitedit/config.hpp"
#include "orbitedit/evalkit.hpp"
#include "orbitedit/io.hpp"

namespace orbitedit::cli {

namespace {

namespace fs = std::filesystem;
using config::RunConfig;

struct Options {
    std::string config_file;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string scene;
    std::string split = "test";
    std::string edit_file;
    std::optional<int> anchor;
    std::string resync;
    bool no_cva = false;
    bool no_spf = false;
    std::optional<int> snapshot_every;
    std::string inspect_path;
};

class Timer {
public:
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

RunConfig resolve_config(const Options& o) {
    std::vector<std::string> overrides = o.overrides;
    if (o.seed) overrides.push_back("seed=" + std::to_string(*o.seed));
    if (!o.resync.empty()) overrides.push_back("fusion.resync=\"" + o.resync + "\"");
    if (o.no_cva) overrides.push_back("fusion.cva=false");
    if (o.no_spf) overrides.push_back("fusion.spf=false");
    if (o.snapshot_every) overrides.push_back("snapshot_every=" + std::to_string(*o.snapshot_every));
    const fs::path file = o.config_file;
    return config::load(o.config_file.empty() ? nullptr : &file, overrides);
}

diffcore::TrainState load_model(const RunConfig& c) {
    diffcore::DiffusionConfig diffusion;
    diffcore::TrainState state = diffcore::load_checkpoint(c.paths.checkpoint, &diffusion);
    if (!(state.model.config() == c.model))
        throw ConfigError("checkpoint in " + c.paths.checkpoint.string() + " has a different model architecture");
    if (!(diffusion == c.diffusion))
        throw ConfigError("checkpoint in " + c.paths.checkpoint.string() + " was trained with a different schedule");
    return state;
}

std::vector<dataset::Record> test_records(const RunConfig& c) {
    return dataset::load_split(c.paths.data, "test", c.eval.max_scenes);
}

dataset::Record find_record(const RunConfig& c, const std::string& split, const std::string& id) {
    const auto manifest = dataset::load_manifest(c.paths.data);
    return dataset::load_record(c.paths.data, manifest, split, id);
}

nlohmann::json report_json(const ViewStack& out, const ViewStack& gt) {
    return evalkit::to_json(evalkit::orbit_report(out, gt));
}

void write_text(const fs::path& path, const std::string& s) { io::write_atomic(path, s); }

int cmd_gen(const RunConfig& c, std::ostream& out) {
    const auto stats = dataset::generate(c.paths.data, c.dataset);
    out << "dataset " << c.paths.data.string() << ": " << stats.written << " records written, " << stats.skipped
        << " already present (train " << c.dataset.train << ", val " << c.dataset.val << ", test " << c.dataset.test
        << ")\n";
    return kSuccess;
}

int cmd_train(const RunConfig& c, std::ostream& out) {
    fs::create_directories(c.paths.checkpoint);
    io::DirLock lock(c.paths.checkpoint);
    const auto records = dataset::load_split(c.paths.data, "train");
    std::vector<ViewStack> orbits;
    for (const auto& r : records) orbits.push_back(r.orbit);
    if (!(c.dataset.orbit == dataset::config_from_manifest(dataset::load_manifest(c.paths.data)).orbit))
        throw ConfigError("dataset orbit parameters differ from the config");

    diffcore::TrainState state = diffcore::init_training(c.model, c.diffusion);
    if (diffcore::has_checkpoint(c.paths.checkpoint)) {
        diffcore::DiffusionConfig diffusion;
        diffcore::TrainConfig previous;
        state = diffcore::load_checkpoint(c.paths.checkpoint, &diffusion, &previous);
        previous.epochs = c.train.epochs;
        previous.threads = c.train.threads;
        if (!(state.model.config() == c.model) || !(diffusion == c.diffusion) || !(previous == c.train))
            throw ConfigError("checkpoint in " + c.paths.checkpoint.string() +
                              " was trained with a different config; use a fresh checkpoint path");
        out << "resuming from epoch " << state.epochs_done << "\n";
    }
    const auto sch = diffcore::make_schedule(c.diffusion);
    const std::string hash = config::config_hash(c);
    auto write_log = [&](const diffcore::TrainState& s) {
        std::string lines;
        for (const auto& e : s.log) lines += diffcore::to_json(e).dump() + "\n";
        write_text(c.paths.checkpoint / "train_log.jsonl", lines);
    };
    diffcore::train(state, orbits, sch, c.train, [&](const diffcore::TrainState& s, const diffcore::EpochLog& e,
                                                     double seconds) {
        diffcore::save_checkpoint(c.paths.checkpoint, s, c.diffusion, c.train);
        write_log(s);
        char line[160];
        std::snprintf(line, sizeof line, "epoch %3d  train %.5f  probe %.5f  lr %.2e  (%.1f s)\n", e.epoch,
                      e.train_loss, e.probe_loss, e.lr, seconds);
        out << line << std::flush;
    });
    if (state.epochs_done == 0) diffcore::save_checkpoint(c.paths.checkpoint, state, c.diffusion, c.train);
    write_log(state);
    const double final_probe = state.log.empty() ? state.initial_probe_loss : state.log.back().probe_loss;
    io::write_json(c.paths.checkpoint / "train_manifest.json",
                   {{"config_hash", hash},
                    {"config", config::to_json(c)},
                    {"records", orbits.size()},
                    {"epochs", state.epochs_done},
                    {"initial_probe_loss", state.initial_probe_loss},
                    {"final_probe_loss", final_probe}});
    out << "probe loss " << state.initial_probe_loss << " -> " << final_probe << "\n";
    return kSuccess;
}

int cmd_sample(const RunConfig& c, const Options& o, std::ostream& out) {
    const auto state = load_model(c);
    const auto rec = find_record(c, o.split, o.scene);
    const auto sch = diffcore::make_schedule(c.diffusion);
    const fs::path dir = c.paths.out / "sample" / rec.id;
    fs::create_directories(dir);
    io::DirLock lock(dir);
    std::vector<sampler::Hook> hooks;
    if (c.snapshot_every > 0)
        hooks.push_back([&](sampler::SamplerState s, const diffcore::Schedule&) {
            if (s.t % c.snapshot_every == 0)
                io::write_strip(dir / ("snapshot_t" + std::to_string(s.t) + ".ppm"), sampler::to_image_range(s.x));
            return s;
        });
    const int n = rec.orbit.views();
    const ViewStack y = sampler::sample_orbit(sampler::network_eps(state.model, sch.T),
                                              diffcore::Conditioning::trajectory(rec.orbit.frame(0), n), sch, c.seed,
                                              n, hooks, c.fusion.kind);
    io::save_tensors(dir / "orbit.safetensors", {{"orbit", io::orbit_to_u8(y)}});
    io::write_strip(dir / "strip.ppm", y);
    io::write_strip(dir / "gt_strip.ppm", rec.orbit);
    const auto report = report_json(y, rec.orbit);
    io::write_json(dir / "manifest.json", {{"command", "sample"},
                                           {"config_hash", config::config_hash(c)},
                                           {"scene_id", rec.id},
                                           {"split", rec.split},
                                           {"seed", c.seed},
                                           {"metrics", report}});
    out << "sampled " << rec.id << ": mean PSNR " << report["mean_psnr"].dump() << " dB -> " << dir.string()
        << "\n";
    return kSuccess;
}

int cmd_edit(const RunConfig& c, const Options& o, std::ostream& out) {
    const auto rec = find_record(c, o.split, o.scene);
    scenegen::EditSpec edit;
    if (!o.edit_file.empty()) edit = scenegen::edit_from_json(io::read_json(o.edit_file));
    else if (rec.edit) edit = *rec.edit;
    else throw EditError("record " + rec.id + " has no stored edit; pass --edit FILE");

    const auto sel = propagate::resolve_anchor(o.anchor, rec.scene, edit, c.dataset.orbit);
    const int n = c.dataset.orbit.n_views;
    if (sel.p == 0)
        throw DegenerateAnchorError("anchor index 0 coincides with the front view; choose an anchor in [1, " +
                                    std::to_string(n - 1) + "]");
    const auto edited = scenegen::apply_edit(rec.scene, edit);
    const ViewStack gt = io::orbit_from_u8(io::orbit_to_u8(scenegen::render_orbit(edited, c.dataset.orbit)));

    const auto state = load_model(c);
    const auto sch = diffcore::make_schedule(c.diffusion);
    const fs::path dir = c.paths.out / "edit" / rec.id;
    fs::create_directories(dir);
    io::DirLock lock(dir);
    propagate::StepObserver observer;
    if (c.snapshot_every > 0)
        observer = [&](int t, const ViewStack& fused) {
            if (t % c.snapshot_every == 0)
                io::write_strip(dir / ("snapshot_t" + std::to_string(t) + ".ppm"), sampler::to_image_range(fused));
        };
    const ViewStack y = propagate::run_dual_stream(sampler::network_eps(state.model, sch.T), gt.frame(0),
                                                   gt.frame(sel.p), n, sel.p, sch, c.fusion, c.seed,
                                                   state.model.attention_layers(), observer);
    io::save_tensors(dir / "orbit.safetensors", {{"orbit", io::orbit_to_u8(y)}, {"edited_gt", io::orbit_to_u8(gt)}});
    io::write_strip(dir / "strip.ppm", y);
    io::write_strip(dir / "gt_strip.ppm", gt);
    const auto report = report_json(y, gt);
    io::write_json(dir / "manifest.json", {{"command", "edit"},
                                           {"config_hash", config::config_hash(c)},
                                           {"scene_id", rec.id},
                                           {"split", rec.split},
                                           {"edit", scenegen::to_json(edit)},
                                           {"anchor", sel.p},
                                           {"anchor_source", o.anchor ? "manual" : "visibility"},
                                           {"changed_pixels", sel.changed_pixels},
                                           {"seed", c.seed},
                                           {"settings", propagate::to_json(c.fusion)},
                                           {"metrics", report}});
    out << "edited " << rec.id << " with anchor p = " << sel.p << ": mean PSNR vs edited ground truth "
        << report["mean_psnr"].dump() << " dB -> " << dir.string() << "\n";
    return kSuccess;
}

evalkit::HarnessOptions harness_options(const RunConfig& c, const diffcore::TrainState& state) {
    evalkit::HarnessOptions h;
    h.settings = c.fusion;
    h.seed = c.seed;
    h.min_scenes = c.eval.min_scenes;
    h.threads = c.eval.threads;
    h.config_hash = config::config_hash(c);
    h.layer_names = state.model.attention_layers();
    return h;
}

int report_checks(const std::vector<evalkit::TrendCheck>& checks, const fs::path& dir, const RunConfig& c,
                  const std::string& command, std::ostream& out) {
    nlohmann::json list = nlohmann::json::array();
    bool ok = true;
    for (const auto& ch : checks) {
        out << (ch.passed ? "PASS  " : "FAIL  ") << ch.name << ": " << ch.detail << "\n";
        list.push_back({{"name", ch.name}, {"passed", ch.passed}, {"detail", ch.detail}});
        ok = ok && ch.passed;
    }
    io::write_json(dir / "manifest.json",
                   {{"command", command}, {"config_hash", config::config_hash(c)}, {"seed", c.seed}, {"checks", list}});
    return ok ? kSuccess : kAcceptanceFailure;
}

void emit(const evalkit::Table& t, const fs::path& dir, std::ostream& out) {
    write_text(dir / (t.name + ".jsonl"), evalkit::to_jsonl(t));
    const std::string text = evalkit::to_text(t);
    write_text(dir / (t.name + ".txt"), text);
    out << text << "\n";
}

int cmd_eval(const RunConfig& c, std::ostream& out) {
    const auto state = load_model(c);
    const auto records = test_records(c);
    const auto sch = diffcore::make_schedule(c.diffusion);
    const fs::path dir = c.paths.out / "eval";
    fs::create_directories(dir);
    io::DirLock lock(dir);
    const auto eps = sampler::network_eps(state.model, sch.T);
    const auto h = harness_options(c, state);
    const auto views = evalkit::run_view_settings(records, eps, sch, h);
    emit(views, dir, out);
    const auto prop = evalkit::run_propagation(records, eps, sch, h);
    emit(prop, dir, out);
    return report_checks({evalkit::check_no_degradation(views), evalkit::check_two_gt(views),
                          evalkit::check_propagation(prop)},
                         dir, c, "eval", out);
}

int cmd_ablate(const RunConfig& c, std::ostream& out) {
    const auto state = load_model(c);
    const auto records = test_records(c);
    const auto sch = diffcore::make_schedule(c.diffusion);
    const fs::path dir = c.paths.out / "ablate";
    fs::create_directories(dir);
    io::DirLock lock(dir);
    const auto table =
        evalkit::run_ablation(records, sampler::network_eps(state.model, sch.T), sch, harness_options(c, state));
    emit(table, dir, out);
    return report_checks({evalkit::check_ablation_order(table)}, dir, c, "ablate", out);
}

int cmd_inspect(const RunConfig& c, const Options& o, std::ostream& out) {
    const fs::path p = o.inspect_path.empty() ? c.paths.data : fs::path(o.inspect_path);
    if (fs::is_directory(p) && fs::exists(p / "manifest.json") && fs::exists(p / "train")) {
        const auto m = dataset::load_manifest(p);
        out << "dataset " << p.string() << "\n  config " << m.at("config").dump() << "\n";
        for (const auto& split : dataset::split_names())
            out << "  " << split << ": " << m.at("splits").at(split).size() << " records\n";
        return kSuccess;
    }
    if (fs::is_directory(p) && diffcore::has_checkpoint(p)) {
        auto side = io::read_json(p / "model.json");
        side.erase("log");
        out << "checkpoint " << p.string() << "\n" << side.dump(2) << "\n";
        return kSuccess;
    }
    if (p.extension() == ".safetensors") {
        nlohmann::json meta;
        const auto tensors = io::load_tensors(p, &meta);
        out << p.string() << "\n";
        for (const auto& [name, t] : tensors) {
            out << "  " << name << " " << (t.dtype == io::Tensor::DType::f32 ? "F32" : "U8") << " [";
            for (std::size_t k = 0; k < t.shape.size(); ++k) out << (k ? "," : "") << t.shape[k];
            out << "]\n";
        }
        return kSuccess;
    }
    if (p.extension() == ".json" || p.extension() == ".jsonl") {
        out << io::read_file(p);
        return kSuccess;
    }
    if (o.inspect_path.empty()) {
        out << config::to_json(c).dump(2) << "\nconfig_hash " << config::config_hash(c) << "\n";
        return kSuccess;
    }
    throw IoError("nothing to inspect at " + p.string());
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"orbitedit: anchor-view edit propagation on procedural 360-degree orbits"};
    app.require_subcommand(1);
    Options o;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config_file, "JSON run config")->check(CLI::ExistingFile);
        sub->add_option("--set", o.overrides, "Config override key=value (repeatable)")
            ->allow_extra_args(false);
        sub->add_option("--seed", o.seed, "Sampling and evaluation seed");
    };
    auto add_stream = [&](CLI::App* sub) {
        sub->add_option("--resync", o.resync, "Stream resynchronisation after fusion")
            ->check(CLI::IsMember({"always", "never"}));
        sub->add_flag("--no-cva", o.no_cva, "Disable cross-view alignment");
        sub->add_flag("--no-spf", o.no_spf, "Equal-weight fusion without detail refinement");
    };
    auto* gen = app.add_subcommand("gen", "Generate the procedural dataset");
    auto* train = app.add_subcommand("train", "Train the denoiser (resumes from the checkpoint)");
    auto* sample = app.add_subcommand("sample", "Single-stream orbit from a record's front view");
    auto* edit = app.add_subcommand("edit", "Propagate an anchor-view edit around the orbit");
    auto* eval = app.add_subcommand("eval", "View-setting and propagation tables");
    auto* ablate = app.add_subcommand("ablate", "SPF / CVA ablation table");
    auto* inspect = app.add_subcommand("inspect", "Describe a dataset, checkpoint or artifact");
    for (auto* sub : {gen, train, sample, edit, eval, ablate, inspect}) add_common(sub);
    for (auto* sub : {sample, edit}) {
        sub->add_option("--scene", o.scene, "Record id")->required();
        sub->add_option("--split", o.split, "Dataset split")->check(CLI::IsMember({"train", "val", "test"}));
        sub->add_option("--snapshot-every", o.snapshot_every, "Write an image strip every k steps")
            ->check(CLI::NonNegativeNumber);
    }
    edit->add_option("--edit", o.edit_file, "Edit JSON (defaults to the record's stored edit)")
        ->check(CLI::ExistingFile);
    edit->add_option("--anchor", o.anchor, "Anchor view index (overrides visibility selection)");
    for (auto* sub : {edit, eval, ablate}) add_stream(sub);
    inspect->add_option("path", o.inspect_path, "Path to inspect (default: dataset root)");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kSuccess : kOperationalError;
    }

    try {
        const RunConfig c = resolve_config(o);
        const Timer timer;
        int rc = kSuccess;
        if (*gen) rc = cmd_gen(c, out);
        else if (*train) rc = cmd_train(c, out);
        else if (*sample) rc = cmd_sample(c, o, out);
        else if (*edit) rc = cmd_edit(c, o, out);
        else if (*eval) rc = cmd_eval(c, out);
        else if (*ablate) rc = cmd_ablate(c, out);
        else rc = cmd_inspect(c, o, out);
        char line[64];
        std::snprintf(line, sizeof line, "elapsed %.1f s\n", timer.seconds());
        err << line;
        return rc;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kOperationalError;
    }
}

}  // namespace orbitedit::cli
