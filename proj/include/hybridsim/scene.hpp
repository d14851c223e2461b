#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hybridsim/types.hpp"

namespace hybridsim {

enum class MaterialKind { rigid, elastic, cloth, smoke, liquid, granular };

std::string_view to_string(MaterialKind kind);
MaterialKind material_kind_from_string(std::string_view name);

// Physical parameters of one object. Only the fields relevant to `kind` are
// consulted by the solvers.
struct Material {
  MaterialKind kind = MaterialKind::rigid;
  double density = 1000.0;             // kg/m^3
  double friction = 0.1;               // rigid contact friction coefficient
  double youngs = 3e5;                 // Pa
  double poisson = 0.2;
  double friction_angle = 45.0;        // degrees, granular
  double stretch_compliance = 1e-7;    // cloth
  double bending_compliance = 1e-5;    // cloth
  double viscosity = 0.1;              // smoke (XSPH coefficient)

  // Default parameter set for a kind.
  static Material defaults(MaterialKind kind);

  bool uses_mpm() const {
    return kind == MaterialKind::elastic || kind == MaterialKind::liquid || kind == MaterialKind::granular;
  }
  bool uses_pbd() const { return kind == MaterialKind::cloth || kind == MaterialKind::smoke; }
  bool is_volumetric() const { return kind != MaterialKind::cloth; }
};

struct Lame {
  double mu;
  double lambda;
};
Lame lame_parameters(double youngs, double poisson);

struct Surfel {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();
  Vec2 scale = Vec2::Constant(5e-3);  // tangent-plane extents (m)
  double opacity = 1.0;
  Vec3 color = Vec3::Constant(0.5);

  // Local +z axis of the surfel frame.
  Vec3 normal() const { return orientation * Vec3::UnitZ(); }
  double radius() const { return 0.5 * (scale.x() + scale.y()); }
};

// Simulation particle. Deformation/affine matrices are only meaningful for
// MPM materials and stay identity/zero otherwise.
struct Particle {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  double mass = 0.0;
  double volume = 0.0;
  Mat3 deformation = Mat3::Identity();
  Mat3 affine = Mat3::Zero();
};

// Symmetric adjacency lists over surfel indices.
using Adjacency = std::vector<std::vector<std::uint32_t>>;

void add_edge(Adjacency& adjacency, std::uint32_t i, std::uint32_t j);
// Unique (i < j) pairs; only meaningful for symmetric adjacency.
std::vector<std::pair<std::uint32_t, std::uint32_t>> edge_list(const Adjacency& adjacency);
std::size_t edge_count(const Adjacency& adjacency);

inline constexpr std::size_t kBindingSize = 10;

// Topological surfels: an object's render primitives plus connectivity,
// velocities, material and the particles that drive them.
struct ObjectSurfels {
  std::string name;
  std::vector<Surfel> surfels;
  Adjacency edges;
  std::vector<std::array<std::uint32_t, 3>> faces;  // optional triangle topology
  std::vector<Vec3> velocities;
  Material material;
  bool gravity_enabled = true;

  // Simulation particles: one per surfel (surface registered) followed by the
  // interior samples.
  std::vector<Particle> particles;
  std::size_t surface_particle_count = 0;
  std::vector<std::uint32_t> pinned;  // particle indices with zero inverse mass

  // Per-surfel indices of the nearest particles at rest.
  std::vector<std::vector<std::uint32_t>> binding;
  std::vector<Vec3> rest_particle_positions;
  std::vector<Vec3> rest_surfel_positions;
  std::vector<Quat> rest_surfel_orientations;

  std::span<const Particle> interior_particles() const {
    return std::span<const Particle>(particles).subspan(std::min(surface_particle_count, particles.size()));
  }
  double total_mass() const;
  bool prepared() const { return !particles.empty() && binding.size() == surfels.size(); }
};

// Pinhole camera, OpenCV convention (x right, y down, z forward). `rotation`
// and `translation` map world to camera coordinates. Pixel (i, j) is centred
// at continuous coordinate (i, j).
struct Camera {
  double fx = 600.0, fy = 600.0, cx = 359.5, cy = 239.5;
  int width = 720, height = 480;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double vertical_fov_deg, int width,
                        int height);
  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
  Vec3 eye() const { return -rotation.transpose() * translation; }
  // Pixel coordinates of a camera-space point (z must be positive).
  Vec2 project_camera(const Vec3& c) const { return {fx * c.x() / c.z() + cx, fy * c.y() / c.z() + cy}; }
};

struct Scene {
  std::vector<Surfel> background;
  std::vector<ObjectSurfels> objects;
  Camera camera;
  Vec3 fill_color = Vec3::Constant(0.5);  // composited where surfels do not cover a pixel
  double particle_size = 1e-2;
};

struct Diagnostic {
  int object = -1;         // -1: background or scene-level
  std::size_t index = 0;   // element index within the field, when relevant
  std::string field;
  std::string message;
};

// Empty iff every structural invariant holds.
std::vector<Diagnostic> validate_scene(const Scene& scene);
std::vector<Diagnostic> validate_object(const ObjectSurfels& object, int object_index);
std::vector<Diagnostic> validate_material(const Material& material, int object_index);

// Registers surfels as particles and samples the enclosed volume on a jittered
// grid of the given spacing. Cloth only registers its surfels.
ObjectSurfels fill_interior(const ObjectSurfels& object, double particle_size);

// Records the nearest kBindingSize particles of every surfel and snapshots the
// rest configuration used by surfel updates.
ObjectSurfels bind_surfels(const ObjectSurfels& object);

// fill_interior followed by bind_surfels for every object that needs it.
Scene prepare_scene(const Scene& scene);

}  // namespace hybridsim
