#include "orbitedit/dataset.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <random>

#include "orbitedit/io.hpp"
#include "orbitedit/parallel.hpp"
#include "orbitedit/propagate.hpp"

namespace orbitedit::dataset {

namespace {

using scenegen::EditOp;
using scenegen::EditSpec;
using scenegen::Primitive;
using scenegen::SceneSpec;

constexpr const char* kFormat = "orbitedit-dataset/1";
constexpr int kEditAttempts = 16;

std::uint64_t split_code(const std::string& split) {
    if (split == "train") return 1;
    if (split == "val") return 2;
    if (split == "test") return 3;
    throw DataError("unknown split '" + split + "'");
}

int split_count(const DatasetConfig& c, const std::string& split) {
    if (split == "train") return c.train;
    if (split == "val") return c.val;
    return c.test;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    return (static_cast<std::uint64_t>(words[1]) << 32) | words[0];
}

float uniform(std::mt19937_64& rng, double lo, double hi) {
    return static_cast<float>(std::uniform_real_distribution<double>(lo, hi)(rng));
}

scenegen::Color random_color(std::mt19937_64& rng) {
    return {uniform(rng, 0.3, 1.0), uniform(rng, 0.3, 1.0), uniform(rng, 0.3, 1.0)};
}

EditSpec make_delete(const SceneSpec& scene, std::mt19937_64& rng) {
    EditSpec e;
    e.op = EditOp::remove;
    const auto k = std::uniform_int_distribution<std::size_t>(0, scene.primitives.size() - 1)(rng);
    e.target_tag = scene.primitives[k].tag;
    return e;
}

EditSpec make_replace(const SceneSpec& scene, std::mt19937_64& rng) {
    EditSpec e;
    e.op = EditOp::replace;
    const auto k = std::uniform_int_distribution<std::size_t>(0, scene.primitives.size() - 1)(rng);
    Primitive p = scene.primitives[k];
    e.target_tag = p.tag;
    const int shift = std::uniform_int_distribution<int>(1, 2)(rng);
    p.kind = static_cast<scenegen::PrimitiveKind>((static_cast<int>(p.kind) + shift) % 3);
    p.color = random_color(rng);
    p.size = std::clamp(p.size * uniform(rng, 1.0, 1.3), 0.05f, 0.3f);
    p.yaw = uniform(rng, 0.0, 3.14159);
    e.new_primitive = p;
    return e;
}

EditSpec make_recolor(std::mt19937_64& rng) {
    EditSpec e;
    e.op = EditOp::recolor_all;
    scenegen::PaletteMap m;
    // Cyclic channel permutation with a small tint.
    const int r = std::uniform_int_distribution<int>(1, 2)(rng);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m.matrix[i][j] = (j == (i + r) % 3) ? 0.9f : 0.0f;
    m.offset = {uniform(rng, 0.0, 0.1), uniform(rng, 0.0, 0.1), uniform(rng, 0.0, 0.1)};
    e.palette_map = m;
    return e;
}

std::string kind_for_index(int index) {
    static const char* cycle[] = {"back_insert", "delete", "back_insert", "replace", "back_insert", "recolor_all"};
    return cycle[index % 6];
}

// Picks an edit of the requested kind whose auto-selected anchor is not the front
// view, falling back to a back insert.
void attach_edit(Record& r, const DatasetConfig& c, int index) {
    std::mt19937_64 rng(derive_seed(c.seed, 0x65646974ULL, static_cast<std::uint64_t>(index)));
    std::string kind = kind_for_index(index);
    if (kind == "delete" && r.scene.primitives.size() < 2) kind = "replace";
    for (int attempt = 0; attempt <= kEditAttempts; ++attempt) {
        const std::string k = attempt == kEditAttempts ? "back_insert" : kind;
        EditSpec e;
        if (k == "back_insert") e = scenegen::sample_back_insert(r.scene, rng());
        else if (k == "delete") e = make_delete(r.scene, rng);
        else if (k == "replace") e = make_replace(r.scene, rng);
        else e = make_recolor(rng);
        try {
            const auto sel = propagate::select_anchor(r.scene, e, c.orbit);
            if (sel.p == 0) continue;
            r.edit = e;
            r.edit_kind = k;
            r.anchor = sel.p;
            r.edited_scene = scenegen::apply_edit(r.scene, e);
            return;
        } catch (const SelectionError&) {
            continue;
        } catch (const EditError&) {
            continue;
        }
    }
    throw DataError("could not construct a test edit for record " + r.id);
}

ViewStack quantize(const ViewStack& x) { return io::orbit_from_u8(io::orbit_to_u8(x)); }

struct Encoded {
    std::string json;
    std::string tensors;
};

Encoded encode(const Record& r) {
    nlohmann::json j = {{"id", r.id}, {"split", r.split}, {"scene", scenegen::to_json(r.scene)}};
    io::TensorMap t;
    t["orbit"] = io::orbit_to_u8(r.orbit);
    if (r.edit) {
        j["edit"] = scenegen::to_json(*r.edit);
        j["edit_kind"] = r.edit_kind;
        j["edited_scene"] = scenegen::to_json(*r.edited_scene);
        j["anchor"] = r.anchor;
        t["edited_orbit"] = io::orbit_to_u8(*r.edited_orbit);
    }
    return {j.dump(2) + "\n", io::encode_tensors(t)};
}

void check_digest(const std::string& bytes, const std::string& expected, const fs::path& path) {
    const std::string got = io::sha256_hex(bytes);
    if (got != expected)
        throw IntegrityError("digest mismatch for " + path.string() + ": manifest " + expected + ", file " + got);
}

}  // namespace

void validate(const DatasetConfig& c) {
    scenegen::validate(c.orbit);
    if (c.train < 1) throw ConfigError("dataset needs at least one training record");
    if (c.val < 0 || c.test < 0) throw ConfigError("split counts must be nonnegative");
}

nlohmann::json to_json(const DatasetConfig& c) {
    return {{"orbit", scenegen::to_json(c.orbit)},
            {"train", c.train},
            {"val", c.val},
            {"test", c.test},
            {"difficulty", scenegen::to_string(c.difficulty)},
            {"seed", c.seed}};
}

DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
    DatasetConfig c;
    c.orbit = scenegen::orbit_from_json(j.at("orbit"));
    c.train = j.at("train").get<int>();
    c.val = j.at("val").get<int>();
    c.test = j.at("test").get<int>();
    c.difficulty = scenegen::difficulty_from_string(j.at("difficulty").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    validate(c);
    return c;
}

std::string record_id(const std::string& split, int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s-%05d", split.c_str(), index);
    return buf;
}

Record make_record(const DatasetConfig& c, const std::string& split, int index) {
    Record r;
    r.split = split;
    r.id = record_id(split, index);
    r.scene = scenegen::sample_random_scene(derive_seed(c.seed, split_code(split), static_cast<std::uint64_t>(index)),
                                            c.difficulty);
    r.orbit = quantize(scenegen::render_orbit(r.scene, c.orbit));
    if (split == "test") {
        attach_edit(r, c, index);
        r.edited_orbit = quantize(scenegen::render_orbit(*r.edited_scene, c.orbit));
    }
    return r;
}

GenStats generate(const fs::path& root, const DatasetConfig& c, int threads) {
    validate(c);
    fs::create_directories(root);
    io::DirLock lock(root);

    std::optional<nlohmann::json> old_manifest;
    if (fs::exists(root / "manifest.json")) {
        old_manifest = io::read_json(root / "manifest.json");
        if (config_from_manifest(*old_manifest) != c)
            throw IntegrityError("existing dataset at " + root.string() + " was generated with a different config");
    }

    struct Job {
        std::string split;
        int index;
    };
    std::vector<Job> jobs;
    for (const auto& split : split_names()) {
        fs::create_directories(root / split);
        for (int i = 0; i < split_count(c, split); ++i) jobs.push_back({split, i});
    }
    std::vector<std::array<std::string, 2>> digests(jobs.size());
    std::vector<char> written(jobs.size(), 0);
    std::map<std::string, std::string> expected;
    if (old_manifest)
        for (const auto& split : split_names())
            for (const auto& e : old_manifest->at("splits").at(split)) {
                expected[split + "/" + e.at("id").get<std::string>() + ".json"] = e.at("json_sha256");
                expected[split + "/" + e.at("id").get<std::string>() + ".safetensors"] = e.at("tensors_sha256");
            }

    parallel_for(static_cast<int>(jobs.size()), threads > 0 ? threads : default_threads(), [&](int k) {
        const Record r = make_record(c, jobs[k].split, jobs[k].index);
        const Encoded enc = encode(r);
        const std::string stem = jobs[k].split + "/" + r.id;
        const std::pair<std::string, const std::string*> files[2] = {{stem + ".json", &enc.json},
                                                                     {stem + ".safetensors", &enc.tensors}};
        for (int f = 0; f < 2; ++f) {
            const fs::path path = root / files[f].first;
            const std::string& bytes = *files[f].second;
            digests[k][f] = io::sha256_hex(bytes);
            if (auto it = expected.find(files[f].first); it != expected.end() && it->second != digests[k][f])
                throw IntegrityError("manifest digest for " + path.string() + " does not match the generator output");
            if (fs::exists(path)) {
                check_digest(io::read_file(path), digests[k][f], path);
            } else {
                io::write_atomic(path, bytes);
                written[k] = 1;
            }
        }
    });

    nlohmann::json splits = nlohmann::json::object();
    for (const auto& split : split_names()) splits[split] = nlohmann::json::array();
    GenStats stats;
    for (std::size_t k = 0; k < jobs.size(); ++k) {
        const std::string id = record_id(jobs[k].split, jobs[k].index);
        splits[jobs[k].split].push_back({{"id", id}, {"json_sha256", digests[k][0]}, {"tensors_sha256", digests[k][1]}});
        (written[k] ? stats.written : stats.skipped) += 1;
    }
    const nlohmann::json manifest = {{"format", kFormat},
                                     {"generator_seed", c.seed},
                                     {"orbit", scenegen::to_json(c.orbit)},
                                     {"config", to_json(c)},
                                     {"splits", splits}};
    const std::string bytes = manifest.dump(2) + "\n";
    if (!fs::exists(root / "manifest.json") || io::read_file(root / "manifest.json") != bytes)
        io::write_atomic(root / "manifest.json", bytes);
    return stats;
}

nlohmann::json load_manifest(const fs::path& root) {
    if (!fs::exists(root / "manifest.json")) throw DataError("no dataset manifest in " + root.string());
    nlohmann::json m = io::read_json(root / "manifest.json");
    if (m.value("format", "") != kFormat) throw DataError("unrecognized dataset format in " + root.string());
    return m;
}

DatasetConfig config_from_manifest(const nlohmann::json& manifest) {
    return dataset_config_from_json(manifest.at("config"));
}

Record load_record(const fs::path& root, const nlohmann::json& manifest, const std::string& split,
                   const std::string& id) {
    const auto& entries = manifest.at("splits").at(split);
    const auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.at("id") == id; });
    if (it == entries.end()) throw DataError("record " + split + "/" + id + " is not in the manifest");
    const fs::path json_path = root / split / (id + ".json");
    const fs::path tensor_path = root / split / (id + ".safetensors");
    if (!fs::exists(json_path) || !fs::exists(tensor_path)) throw DataError("record files missing for " + id);
    const std::string json_bytes = io::read_file(json_path);
    const std::string tensor_bytes = io::read_file(tensor_path);
    check_digest(json_bytes, it->at("json_sha256"), json_path);
    check_digest(tensor_bytes, it->at("tensors_sha256"), tensor_path);

    const nlohmann::json j = nlohmann::json::parse(json_bytes);
    const io::TensorMap t = io::decode_tensors(tensor_bytes);
    Record r;
    r.split = split;
    r.id = id;
    r.scene = scenegen::scene_from_json(j.at("scene"));
    r.orbit = io::orbit_from_u8(t.at("orbit"));
    if (j.contains("edit")) {
        r.edit = scenegen::edit_from_json(j.at("edit"));
        r.edit_kind = j.at("edit_kind").get<std::string>();
        r.edited_scene = scenegen::scene_from_json(j.at("edited_scene"));
        r.anchor = j.at("anchor").get<int>();
        r.edited_orbit = io::orbit_from_u8(t.at("edited_orbit"));
    }
    return r;
}

std::vector<Record> load_split(const fs::path& root, const std::string& split, int limit) {
    const nlohmann::json manifest = load_manifest(root);
    const auto& entries = manifest.at("splits").at(split);
    const int n = limit < 0 ? static_cast<int>(entries.size()) : std::min<int>(limit, entries.size());
    std::vector<Record> out(n);
    parallel_for(n, default_threads(), [&](int k) {
        out[k] = load_record(root, manifest, split, entries[k].at("id").get<std::string>());
    });
    return out;
}

}  // namespace orbitedit::dataset
