#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "orbitedit/scenegen.hpp"

namespace orbitedit::scenegen {

double OrbitParams::azimuth_deg(int i) const { return 360.0 / n_views * i; }

Color PaletteMap::apply(const Color& c) const {
    Color out{};
    for (int r = 0; r < 3; ++r) {
        float v = offset[r];
        for (int k = 0; k < 3; ++k) v += matrix[r][k] * c[k];
        out[r] = std::clamp(v, 0.0f, 1.0f);
    }
    return out;
}

DifficultyPreset preset(Difficulty d) {
    switch (d) {
        case Difficulty::easy: return {1, 3, 0.14f, 0.28f};
        case Difficulty::medium: return {2, 5, 0.12f, 0.28f};
        case Difficulty::hard: return {3, 7, 0.10f, 0.26f};
    }
    throw ConfigError("unknown difficulty");
}

namespace {

bool in_unit_cube(const Vec3& c) {
    return std::all_of(c.begin(), c.end(), [](float v) { return v >= -0.5f && v <= 0.5f; });
}

bool valid_color(const Color& c) {
    return std::all_of(c.begin(), c.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
}

}  // namespace

void validate(const SceneSpec& scene) {
    if (!valid_color(scene.background)) throw ConfigError("background color outside [0,1]");
    std::set<std::string> tags;
    for (const auto& p : scene.primitives) {
        if (!(p.size > 0.0f)) throw ConfigError("primitive '" + p.tag + "' has non-positive size");
        if (!valid_color(p.color)) throw ConfigError("primitive '" + p.tag + "' color outside [0,1]");
        if (!in_unit_cube(p.center))
            throw ConfigError("primitive '" + p.tag + "' center outside the unit object cube");
        if (!tags.insert(p.tag).second) throw ConfigError("duplicate primitive tag '" + p.tag + "'");
    }
}

void validate(const OrbitParams& orbit) {
    if (orbit.n_views < 4) throw ConfigError("orbit needs at least 4 views");
    if (orbit.resolution < 1) throw ConfigError("orbit resolution must be positive");
    if (orbit.channels != 1 && orbit.channels != 3) throw ConfigError("orbit channels must be 1 or 3");
}

SceneSpec apply_edit(const SceneSpec& scene, const EditSpec& edit) {
    SceneSpec out = scene;
    auto find_tag = [&](const std::string& tag) {
        auto it = std::find_if(out.primitives.begin(), out.primitives.end(),
                               [&](const Primitive& p) { return p.tag == tag; });
        if (it == out.primitives.end()) throw EditError("edit target tag '" + tag + "' not found in scene");
        return it;
    };
    switch (edit.op) {
        case EditOp::insert:
            if (!edit.new_primitive) throw EditError("insert edit requires new_primitive");
            out.primitives.push_back(*edit.new_primitive);
            break;
        case EditOp::remove:
            out.primitives.erase(find_tag(edit.target_tag));
            break;
        case EditOp::replace: {
            if (!edit.new_primitive) throw EditError("replace edit requires new_primitive");
            *find_tag(edit.target_tag) = *edit.new_primitive;
            break;
        }
        case EditOp::recolor_all: {
            if (!edit.palette_map) throw EditError("recolor_all edit requires palette_map");
            for (auto& p : out.primitives) p.color = edit.palette_map->apply(p.color);
            break;
        }
    }
    validate(out);
    return out;
}

SceneSpec rotate_scene(const SceneSpec& scene, double radians) {
    SceneSpec out = scene;
    const double c = std::cos(radians), s = std::sin(radians);
    for (auto& p : out.primitives) {
        const double x = p.center[0], y = p.center[1];
        p.center[0] = static_cast<float>(x * c + y * s);
        p.center[1] = static_cast<float>(-x * s + y * c);
        p.yaw = static_cast<float>(p.yaw - radians);
    }
    return out;
}

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Color random_color(std::mt19937_64& rng) {
    Color c{};
    for (auto& v : c) v = static_cast<float>(uniform(rng, 0.1, 0.95));
    return c;
}

PrimitiveKind random_kind(std::mt19937_64& rng) {
    return static_cast<PrimitiveKind>(std::uniform_int_distribution<int>(0, 2)(rng));
}

}  // namespace

SceneSpec sample_random_scene(std::uint64_t seed, Difficulty difficulty) {
    const auto pre = preset(difficulty);
    std::mt19937_64 rng(seed);
    SceneSpec scene;
    scene.seed = seed;
    const float bg = static_cast<float>(uniform(rng, 0.05, 0.25));
    scene.background = {bg, bg, bg};
    const int count = std::uniform_int_distribution<int>(pre.min_primitives, pre.max_primitives)(rng);
    for (int k = 0; k < count; ++k) {
        Primitive p;
        p.kind = random_kind(rng);
        p.center = {static_cast<float>(uniform(rng, -0.35, 0.35)),
                    static_cast<float>(uniform(rng, -0.35, 0.35)),
                    static_cast<float>(uniform(rng, -0.4, 0.4))};
        p.size = static_cast<float>(uniform(rng, pre.min_size, pre.max_size));
        p.color = random_color(rng);
        p.yaw = static_cast<float>(uniform(rng, 0.0, std::numbers::pi));
        p.tag = "p" + std::to_string(k);
        scene.primitives.push_back(std::move(p));
    }
    return scene;
}

EditSpec sample_back_insert(const SceneSpec& scene, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    Primitive p;
    p.kind = random_kind(rng);
    p.center = {static_cast<float>(uniform(rng, -0.25, 0.25)),
                static_cast<float>(uniform(rng, -0.5, -0.38)),
                static_cast<float>(uniform(rng, -0.3, 0.3))};
    p.size = static_cast<float>(uniform(rng, 0.15, 0.25));
    p.color = random_color(rng);
    p.yaw = static_cast<float>(uniform(rng, -0.3, 0.3));
    std::string tag = "insert";
    int n = 0;
    auto taken = [&](const std::string& t) {
        return std::any_of(scene.primitives.begin(), scene.primitives.end(),
                           [&](const Primitive& q) { return q.tag == t; });
    };
    while (taken(tag)) tag = "insert" + std::to_string(++n);
    p.tag = tag;
    EditSpec e;
    e.op = EditOp::insert;
    e.new_primitive = p;
    return e;
}

std::string to_string(PrimitiveKind k) {
    switch (k) {
        case PrimitiveKind::disk: return "disk";
        case PrimitiveKind::box: return "box";
        case PrimitiveKind::triangle: return "triangle";
    }
    return "?";
}

std::string to_string(EditOp op) {
    switch (op) {
        case EditOp::insert: return "insert";
        case EditOp::remove: return "delete";
        case EditOp::replace: return "replace";
        case EditOp::recolor_all: return "recolor_all";
    }
    return "?";
}

std::string to_string(Difficulty d) {
    switch (d) {
        case Difficulty::easy: return "easy";
        case Difficulty::medium: return "medium";
        case Difficulty::hard: return "hard";
    }
    return "?";
}

Difficulty difficulty_from_string(const std::string& s) {
    if (s == "easy") return Difficulty::easy;
    if (s == "medium") return Difficulty::medium;
    if (s == "hard") return Difficulty::hard;
    throw ConfigError("unknown difficulty '" + s + "'");
}

namespace {

PrimitiveKind kind_from_string(const std::string& s) {
    if (s == "disk") return PrimitiveKind::disk;
    if (s == "box") return PrimitiveKind::box;
    if (s == "triangle") return PrimitiveKind::triangle;
    throw ConfigError("unknown primitive kind '" + s + "'");
}

EditOp op_from_string(const std::string& s) {
    if (s == "insert") return EditOp::insert;
    if (s == "delete") return EditOp::remove;
    if (s == "replace") return EditOp::replace;
    if (s == "recolor_all") return EditOp::recolor_all;
    throw ConfigError("unknown edit op '" + s + "'");
}

}  // namespace

nlohmann::json to_json(const Primitive& p) {
    return {{"kind", to_string(p.kind)}, {"center", p.center}, {"size", p.size},
            {"color", p.color},          {"tag", p.tag},       {"yaw", p.yaw}};
}

nlohmann::json to_json(const SceneSpec& s) {
    nlohmann::json prims = nlohmann::json::array();
    for (const auto& p : s.primitives) prims.push_back(to_json(p));
    return {{"primitives", prims}, {"background", s.background}, {"seed", s.seed}};
}

nlohmann::json to_json(const OrbitParams& o) {
    return {{"n_views", o.n_views}, {"resolution", o.resolution}, {"channels", o.channels}, {"elevation", 0}};
}

nlohmann::json to_json(const EditSpec& e) {
    nlohmann::json j{{"op", to_string(e.op)}};
    if (!e.target_tag.empty()) j["target_tag"] = e.target_tag;
    if (e.new_primitive) j["new_primitive"] = to_json(*e.new_primitive);
    if (e.palette_map) j["palette_map"] = {{"matrix", e.palette_map->matrix}, {"offset", e.palette_map->offset}};
    return j;
}

Primitive primitive_from_json(const nlohmann::json& j) {
    Primitive p;
    p.kind = kind_from_string(j.at("kind").get<std::string>());
    p.center = j.at("center").get<Vec3>();
    p.size = j.at("size").get<float>();
    p.color = j.at("color").get<Color>();
    p.tag = j.at("tag").get<std::string>();
    p.yaw = j.value("yaw", 0.0f);
    return p;
}

SceneSpec scene_from_json(const nlohmann::json& j) {
    SceneSpec s;
    for (const auto& p : j.at("primitives")) s.primitives.push_back(primitive_from_json(p));
    s.background = j.at("background").get<Color>();
    s.seed = j.value("seed", std::uint64_t{0});
    validate(s);
    return s;
}

OrbitParams orbit_from_json(const nlohmann::json& j) {
    OrbitParams o;
    o.n_views = j.at("n_views").get<int>();
    o.resolution = j.at("resolution").get<int>();
    o.channels = j.at("channels").get<int>();
    if (j.value("elevation", 0) != 0) throw ConfigError("only elevation 0 orbits are supported");
    validate(o);
    return o;
}

EditSpec edit_from_json(const nlohmann::json& j) {
    EditSpec e;
    e.op = op_from_string(j.at("op").get<std::string>());
    e.target_tag = j.value("target_tag", std::string{});
    if (j.contains("new_primitive")) e.new_primitive = primitive_from_json(j.at("new_primitive"));
    if (j.contains("palette_map")) {
        PaletteMap m;
        m.matrix = j.at("palette_map").at("matrix").get<decltype(m.matrix)>();
        m.offset = j.at("palette_map").value("offset", Color{0, 0, 0});
        e.palette_map = m;
    }
    if ((e.op == EditOp::remove || e.op == EditOp::replace) && e.target_tag.empty())
        throw EditError(to_string(e.op) + " edit requires target_tag");
    if ((e.op == EditOp::insert || e.op == EditOp::replace) && !e.new_primitive)
        throw EditError(to_string(e.op) + " edit requires new_primitive");
    return e;
}

}  // namespace orbitedit::scenegen
