#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "orbitedit/dataset.hpp"
#include "orbitedit/diffcore/train.hpp"
#include "orbitedit/propagate.hpp"

namespace orbitedit::config {

struct Paths {
    std::filesystem::path data = "data";
    std::filesystem::path checkpoint = "runs/checkpoint";
    std::filesystem::path out = "runs/out";
};

struct EvalConfig {
    int min_scenes = 20;
    int max_scenes = -1;  // -1 = whole test split
    int threads = 0;
};

// Every tunable of the pipeline. The JSON document form is canonical: keys are
// sorted, unknown keys are rejected, and config_hash is the SHA-256 of its dump.
struct RunConfig {
    std::uint64_t seed = 0;  // sampling and evaluation seed
    Paths paths;
    dataset::DatasetConfig dataset;
    diffcore::ModelConfig model;
    diffcore::DiffusionConfig diffusion;
    diffcore::TrainConfig train;
    propagate::DualStreamSettings fusion;
    EvalConfig eval;
    int snapshot_every = 0;
};

nlohmann::json default_document();
nlohmann::json to_json(const RunConfig& c);
RunConfig from_json(const nlohmann::json& doc);

// Overlays `patch` onto `base`; every key in `patch` must already exist in `base`.
void merge_strict(nlohmann::json& base, const nlohmann::json& patch, const std::string& prefix = "");

// Applies "a.b.c=value"; the value is parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

RunConfig load(const std::filesystem::path* file, const std::vector<std::string>& overrides);

std::string config_hash(const RunConfig& c);

}  // namespace orbitedit::config
