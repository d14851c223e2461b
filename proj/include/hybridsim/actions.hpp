#pragma once

#include <filesystem>
#include <vector>

#include "hybridsim/scene.hpp"
#include "json.hpp"

namespace hybridsim {

enum class WindKind { uniform, vortex };

// Wind acceleration field (N/kg). `direction` is the flow direction for
// uniform winds and the rotation axis for vortices.
struct WindField {
  WindKind kind = WindKind::uniform;
  double strength = 0.0;
  Vec3 direction = Vec3::UnitX();
  Vec3 center = Vec3::Zero();
  double falloff_radius = 1.0;
  double t_start = 0.0;
  double t_end = 1e30;
};

struct ForceKnot {
  double time = 0.0;
  Vec3 force = Vec3::Zero();  // N
};

// Force applied at one surfel of one object; piecewise-linear between knots,
// held constant before the first and after the last knot inside the window.
struct PointForce {
  std::size_t object = 0;
  std::size_t anchor = 0;  // surfel index
  std::vector<ForceKnot> profile;
  double t_start = 0.0;
  double t_end = 1e30;
};

struct ActionSet {
  Vec3 gravity = Vec3(0.0, 0.0, -9.8);
  std::vector<WindField> winds;
  std::vector<PointForce> point_forces;
};

Vec3 eval_wind(const WindField& field, const Vec3& x, double t);
Vec3 eval_point_force(const PointForce& pf, double t);
// Sum of all wind fields at (x, t).
Vec3 eval_winds(const ActionSet& actions, const Vec3& x, double t);

// Structural checks (unit vectors, windows, finite values). Throws Error.
void validate_actions(const ActionSet& actions);
// Additionally checks that every point force anchors to an existing surfel.
void validate_actions(const ActionSet& actions, const Scene& scene);

ActionSet actions_from_json(const nlohmann::json& j);
nlohmann::json actions_to_json(const ActionSet& actions);
ActionSet load_actions(const std::filesystem::path& path);
// With a scene, dangling anchors are rejected.
ActionSet load_actions(const std::filesystem::path& path, const Scene& scene);
void save_actions(const ActionSet& actions, const std::filesystem::path& path);

}  // namespace hybridsim
