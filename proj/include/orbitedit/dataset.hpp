#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "orbitedit/scenegen.hpp"

namespace orbitedit::dataset {

namespace fs = std::filesystem;

// On-disk layout under the dataset root:
//   manifest.json                 orbit params, generator seed, record list with digests
//   <split>/<id>.json             {"id", "split", "scene", and for test records "edit",
//                                  "edited_scene", "edit_kind", "anchor"}
//   <split>/<id>.safetensors      U8 "orbit" [N,R,R,C]; test records add "edited_orbit"
struct DatasetConfig {
    scenegen::OrbitParams orbit;
    int train = 420;
    int val = 20;
    int test = 60;
    scenegen::Difficulty difficulty = scenegen::Difficulty::medium;
    std::uint64_t seed = 0;

    friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

void validate(const DatasetConfig& c);
nlohmann::json to_json(const DatasetConfig& c);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

inline const std::vector<std::string>& split_names() {
    static const std::vector<std::string> names{"train", "val", "test"};
    return names;
}

struct Record {
    std::string split;
    std::string id;
    scenegen::SceneSpec scene;
    ViewStack orbit;  // [0,1], quantized to 8 bits
    // Test records only.
    std::optional<scenegen::EditSpec> edit;
    std::optional<scenegen::SceneSpec> edited_scene;
    std::optional<ViewStack> edited_orbit;
    std::string edit_kind;  // "back_insert", "delete", "replace", "recolor_all"
    int anchor = -1;
};

// Deterministic record content for (config, split, index); nothing is read or written.
Record make_record(const DatasetConfig& c, const std::string& split, int index);

struct GenStats {
    int written = 0;
    int skipped = 0;
};

// Writes missing records and the manifest. Existing records are compared with
// the regenerated bytes and the manifest digests and left untouched; any
// difference raises IntegrityError.
GenStats generate(const fs::path& root, const DatasetConfig& c, int threads = 0);

nlohmann::json load_manifest(const fs::path& root);
DatasetConfig config_from_manifest(const nlohmann::json& manifest);

// Loads one record and checks both files against the manifest digests.
Record load_record(const fs::path& root, const nlohmann::json& manifest, const std::string& split,
                   const std::string& id);
std::vector<Record> load_split(const fs::path& root, const std::string& split, int limit = -1);

std::string record_id(const std::string& split, int index);

}  // namespace orbitedit::dataset
