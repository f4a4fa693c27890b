#include "orbitedit/config.hpp"

#include "orbitedit/io.hpp"

namespace orbitedit::config {

namespace {

propagate::DualStreamSettings fusion_from_json(const nlohmann::json& j) {
    propagate::DualStreamSettings s;
    s.spf = j.at("spf").get<bool>();
    s.cva = j.at("cva").get<bool>();
    s.falloff = propagate::falloff_from_string(j.at("falloff").get<std::string>());
    s.detail_threshold = j.at("detail_threshold").get<double>();
    s.detail_gain = j.at("detail_gain").get<double>();
    s.resync = propagate::resync_from_string(j.at("resync").get<std::string>());
    s.shared_noise = j.at("shared_noise").get<bool>();
    s.cva_layer_mask = j.at("cva_layer_mask").get<std::vector<bool>>();
    s.cva_timestep_mask = j.at("cva_timestep_mask").get<std::vector<bool>>();
    const auto kind = j.at("sampler").get<std::string>();
    if (kind == "ancestral") s.kind = sampler::SamplerKind::ancestral;
    else if (kind == "deterministic") s.kind = sampler::SamplerKind::deterministic;
    else throw ConfigError("unknown sampler '" + kind + "'");
    if (s.detail_threshold < 0.0 || s.detail_threshold > 1.0) throw ConfigError("detail_threshold must lie in [0, 1]");
    if (s.detail_gain < 0.0) throw ConfigError("detail_gain must be nonnegative");
    return s;
}

}  // namespace

nlohmann::json to_json(const RunConfig& c) {
    return {{"seed", c.seed},
            {"paths",
             {{"data", c.paths.data.string()},
              {"checkpoint", c.paths.checkpoint.string()},
              {"out", c.paths.out.string()}}},
            {"dataset", dataset::to_json(c.dataset)},
            {"model", diffcore::to_json(c.model)},
            {"diffusion", diffcore::to_json(c.diffusion)},
            {"train", diffcore::to_json(c.train)},
            {"fusion", propagate::to_json(c.fusion)},
            {"eval", {{"min_scenes", c.eval.min_scenes}, {"max_scenes", c.eval.max_scenes}, {"threads", c.eval.threads}}},
            {"snapshot_every", c.snapshot_every}};
}

nlohmann::json default_document() { return to_json(RunConfig{}); }

RunConfig from_json(const nlohmann::json& doc) {
    nlohmann::json full = default_document();
    merge_strict(full, doc);
    RunConfig c;
    try {
        c.seed = full.at("seed").get<std::uint64_t>();
        c.paths.data = full.at("paths").at("data").get<std::string>();
        c.paths.checkpoint = full.at("paths").at("checkpoint").get<std::string>();
        c.paths.out = full.at("paths").at("out").get<std::string>();
        c.dataset = dataset::dataset_config_from_json(full.at("dataset"));
        c.model = diffcore::model_config_from_json(full.at("model"));
        c.diffusion = diffcore::diffusion_config_from_json(full.at("diffusion"));
        c.train = diffcore::train_config_from_json(full.at("train"));
        c.fusion = fusion_from_json(full.at("fusion"));
        c.eval.min_scenes = full.at("eval").at("min_scenes").get<int>();
        c.eval.max_scenes = full.at("eval").at("max_scenes").get<int>();
        c.eval.threads = full.at("eval").at("threads").get<int>();
        c.snapshot_every = full.at("snapshot_every").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid config value: ") + e.what());
    }
    if (c.model.resolution != c.dataset.orbit.resolution || c.model.channels != c.dataset.orbit.channels)
        throw ConfigError("model resolution/channels must match the dataset orbit");
    if (c.eval.min_scenes < 1) throw ConfigError("eval.min_scenes must be positive");
    if (c.snapshot_every < 0) throw ConfigError("snapshot_every must be nonnegative");
    return c;
}

void merge_strict(nlohmann::json& base, const nlohmann::json& patch, const std::string& prefix) {
    if (!patch.is_object()) throw ConfigError("config document must be a JSON object");
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
        auto& slot = base[it.key()];
        if (slot.is_object()) merge_strict(slot, it.value(), key);
        else slot = it.value();
    }
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    nlohmann::json patch = value;
    std::size_t end = path.size();
    while (true) {
        const auto dot = path.rfind('.', end - 1);
        const std::string key = path.substr(dot == std::string::npos ? 0 : dot + 1,
                                            end - (dot == std::string::npos ? 0 : dot + 1));
        patch = nlohmann::json{{key, patch}};
        if (dot == std::string::npos) break;
        end = dot;
    }
    merge_strict(doc, patch);
}

RunConfig load(const std::filesystem::path* file, const std::vector<std::string>& overrides) {
    nlohmann::json doc = default_document();
    if (file) merge_strict(doc, io::read_json(*file));
    for (const auto& o : overrides) apply_override(doc, o);
    return from_json(doc);
}

std::string config_hash(const RunConfig& c) { return io::sha256_hex(to_json(c).dump()); }

}  // namespace orbitedit::config
