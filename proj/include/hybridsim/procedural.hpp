#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hybridsim/scene.hpp"
#include "hybridsim/sdf.hpp"

namespace hybridsim {

// One procedural primitive. Shapes: plane, basin, box, sphere, ellipsoid,
// toy_duck, cloth, fluid_block, smoke_volume, mesh. Unused fields are ignored.
struct PrimitiveSpec {
  std::string shape;
  std::string name;
  Vec3 center = Vec3::Zero();
  Quat rotation = Quat::Identity();
  Vec3 size = Vec3::Constant(0.1);    // full extents: box, fluid_block, smoke_volume, plane (x, y), basin (x, y, wall height)
  double radius = 0.05;               // sphere; toy_duck body length scale
  Vec3 radii = Vec3::Constant(0.05);  // ellipsoid semi-axes
  int rows = 10, cols = 10;           // cloth vertex grid
  double spacing = 0.0;               // 0 selects the scene particle size
  std::string path;                   // mesh (Wavefront OBJ)
  Vec3 color = Vec3(0.8, 0.3, 0.2);
  std::optional<Vec3> color2;         // plane/basin checker color
  double opacity = 1.0;
  Vec3 velocity = Vec3::Zero();
  std::optional<Material> material;   // defaults by shape when absent
  bool gravity = true;
  std::vector<std::uint32_t> pinned;  // cloth vertex indices
};

struct CameraSpec {
  Vec3 eye = Vec3(0.0, -1.2, 0.5);
  Vec3 target = Vec3(0.0, 0.0, 0.15);
  Vec3 up = Vec3::UnitZ();
  double vertical_fov = 45.0;
  int width = 720;
  int height = 480;
};

struct ProceduralSpec {
  std::vector<PrimitiveSpec> background;
  std::vector<PrimitiveSpec> objects;
  CameraSpec camera;
  Vec3 fill_color = Vec3::Constant(0.5);
  double particle_size = 1e-2;
};

// Builds, prepares (interior fill + binding) and validates a scene. Throws on
// unknown shapes, non-positive dimensions, background interpenetration beyond
// half a particle size, or any validation diagnostic.
Scene build_procedural_scene(const ProceduralSpec& spec);

// Background interpenetration check, interior fill, binding and validation.
Scene finalize_scene(Scene scene);

// Background surfels of one primitive (plane or basin).
std::vector<Surfel> make_background_surfels(const PrimitiveSpec& prim, double particle_size);
// Unprepared object (surfels, edges, velocities, material) of one primitive.
ObjectSurfels make_object(const PrimitiveSpec& prim, double particle_size);

// Axis-aligned bounds over background surfels and object surfels/particles.
struct Bounds {
  Vec3 lower = Vec3::Zero();
  Vec3 upper = Vec3::Zero();
  Vec3 extent() const { return upper - lower; }
};
Bounds scene_bounds(const Scene& scene);

// Signed distance of the static background. The grid covers `bounds` padded
// by 20% of its longest side, with `resolution` nodes along that side.
GridSdf background_sdf(const Scene& scene, const Bounds& bounds, int resolution);

}  // namespace hybridsim
