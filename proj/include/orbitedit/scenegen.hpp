#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "orbitedit/view_stack.hpp"

namespace orbitedit::scenegen {

// Colors are always stored as RGB; single-channel orbits render the channel mean.
using Color = std::array<float, 3>;
using Vec3 = std::array<float, 3>;

enum class PrimitiveKind { disk, box, triangle };

// Object space: x to the right, y toward the front camera, z up. The front view
// (view 0) looks along -y, so the object-space back is -y.
struct Primitive {
    PrimitiveKind kind = PrimitiveKind::disk;
    Vec3 center{0, 0, 0};
    float size = 0.1f;  // radius for disks, half-extent for boxes and triangles
    Color color{1, 1, 1};
    std::string tag;
    float yaw = 0.0f;   // radians about +z; only boxes and triangles are orientation-dependent

    friend bool operator==(const Primitive&, const Primitive&) = default;
};

struct SceneSpec {
    std::vector<Primitive> primitives;
    Color background{0, 0, 0};
    std::uint64_t seed = 0;

    friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

struct OrbitParams {
    int n_views = 8;
    int resolution = 32;
    int channels = 3;

    // Clockwise azimuth of view i in degrees.
    double azimuth_deg(int i) const;
    friend bool operator==(const OrbitParams&, const OrbitParams&) = default;
};

enum class EditOp { insert, remove, replace, recolor_all };

// Affine color map applied per primitive, clamped to [0,1].
struct PaletteMap {
    std::array<std::array<float, 3>, 3> matrix{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
    Color offset{0, 0, 0};

    Color apply(const Color& c) const;
    friend bool operator==(const PaletteMap&, const PaletteMap&) = default;
};

struct EditSpec {
    EditOp op = EditOp::insert;
    std::string target_tag;
    std::optional<Primitive> new_primitive;
    std::optional<PaletteMap> palette_map;
};

enum class Difficulty { easy, medium, hard };

struct DifficultyPreset {
    int min_primitives;
    int max_primitives;
    float min_size;
    float max_size;
};

DifficultyPreset preset(Difficulty d);

void validate(const SceneSpec& scene);
void validate(const OrbitParams& orbit);

Frame render_view(const SceneSpec& scene, const OrbitParams& orbit, int view);
ViewStack render_orbit(const SceneSpec& scene, const OrbitParams& orbit);

SceneSpec apply_edit(const SceneSpec& scene, const EditSpec& edit);

SceneSpec sample_random_scene(std::uint64_t seed, Difficulty difficulty);

// Insert of a fresh primitive somewhere in the back half (-y) of the scene.
EditSpec sample_back_insert(const SceneSpec& scene, std::uint64_t seed);

// Rotates every primitive of the scene about +z by the given angle (radians),
// matching the camera-orbit convention: rotating by 2*pi/N moves view i+1's
// content into view i.
SceneSpec rotate_scene(const SceneSpec& scene, double radians);

// JSON descriptors.
nlohmann::json to_json(const Primitive& p);
nlohmann::json to_json(const SceneSpec& s);
nlohmann::json to_json(const OrbitParams& o);
nlohmann::json to_json(const EditSpec& e);
Primitive primitive_from_json(const nlohmann::json& j);
SceneSpec scene_from_json(const nlohmann::json& j);
OrbitParams orbit_from_json(const nlohmann::json& j);
EditSpec edit_from_json(const nlohmann::json& j);

std::string to_string(PrimitiveKind k);
std::string to_string(EditOp op);
std::string to_string(Difficulty d);
Difficulty difficulty_from_string(const std::string& s);

}  // namespace orbitedit::scenegen
