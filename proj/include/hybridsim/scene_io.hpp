#pragma once

#include <filesystem>

#include "hybridsim/procedural.hpp"
#include "hybridsim/scene.hpp"
#include "json.hpp"

namespace hybridsim {

// Scene files are JSON with top-level keys `camera`, `background`, `objects`
// and optionally `particle_size`, `fill_color`. Unknown keys are rejected.
// See README.md for the field reference.
Scene scene_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
Scene load_scene(const std::filesystem::path& path);

// Explicit-surfel form (no procedural entries); particles are not stored and
// are regenerated on load.
nlohmann::json scene_to_json(const Scene& scene);
void save_scene(const Scene& scene, const std::filesystem::path& path);

// Procedural form: every primitive is written as a `procedural` entry.
nlohmann::json procedural_spec_to_json(const ProceduralSpec& spec);

nlohmann::json material_to_json(const Material& m);
Material material_from_json(MaterialKind kind, const nlohmann::json& j);

}  // namespace hybridsim
