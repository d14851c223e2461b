#pragma once

#include <array>
#include <span>
#include <vector>

#include "hybridsim/scene.hpp"
#include "hybridsim/sdf.hpp"

namespace hybridsim {

// Particles of every MPM object in a scene share one grid; `material` indexes
// the material table passed to mpm_step.
struct MpmParticles {
  std::vector<Vec3> positions;
  std::vector<Vec3> velocities;
  std::vector<double> masses;
  std::vector<double> volumes;
  std::vector<Mat3> deformation;
  std::vector<Mat3> affine;
  std::vector<std::uint32_t> material;

  std::size_t size() const { return positions.size(); }
  void push_back(const Particle& p, std::uint32_t material_index);
  double total_mass() const;
  Vec3 momentum() const;
};

// Background grid with sparse active-node bookkeeping.
class MpmGrid {
 public:
  MpmGrid(const Vec3& origin, double dx, std::array<int, 3> resolution);
  // Covers [lower, upper] dilated by 10% with `resolution` cells along the
  // longest axis, but never finer than min_dx.
  static MpmGrid covering(const Vec3& lower, const Vec3& upper, int resolution, double min_dx);

  const Vec3& origin() const { return origin_; }
  double dx() const { return dx_; }
  const std::array<int, 3>& resolution() const { return res_; }
  std::size_t node(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * res_[1] + j) * res_[0] + i;
  }
  Vec3 node_position(std::size_t n) const;

  // Zeroes the buffers of every node touched since the last clear.
  void clear();
  // Adds to node n, registering it as active.
  void accumulate(std::size_t n, double mass, const Vec3& momentum);

  const std::vector<std::size_t>& active() const { return active_; }
  double mass(std::size_t n) const { return mass_[n]; }
  const Vec3& momentum(std::size_t n) const { return momentum_[n]; }
  Vec3& velocity(std::size_t n) { return velocity_[n]; }
  const Vec3& velocity(std::size_t n) const { return velocity_[n]; }
  double total_mass() const;
  Vec3 total_momentum() const;

 private:
  Vec3 origin_;
  double dx_;
  std::array<int, 3> res_;
  std::vector<double> mass_;
  std::vector<Vec3> momentum_;
  std::vector<Vec3> velocity_;
  std::vector<char> touched_;
  std::vector<std::size_t> active_;
};

// Quadratic B-spline weights and derivatives (w.r.t. the cell-normalized
// coordinate) for the three nodes base, base+1, base+2, where fx is the
// particle coordinate relative to base in cell units (fx in [0.5, 1.5)).
void bspline_weights(double fx, double w[3], double dw[3]);

// First Piola-Kirchhoff stress. Throws when det F <= 0.
Mat3 stress(const Material& material, const Mat3& F);

// Drucker-Prager return mapping on the Hencky strain of F.
Mat3 drucker_prager_project(const Mat3& F, double friction_angle_deg, double poisson = 0.2);
// Yield function value (<= 0 inside the admissible cone); +inf for expansion.
double drucker_prager_yield(const Mat3& F, double friction_angle_deg, double poisson = 0.2);

struct MpmOptions {
  double cfl = 0.5;        // sub-step dt <= cfl * dx / (wave speed + max speed)
  double friction = 0.1;   // grid/particle boundary friction
  int wall_cells = 3;      // domain walls: slip boundary on the outer cells
  bool project_particles = true;
};

// Sound speed sqrt((lambda + 2 mu) / rho) of a material.
double wave_speed(const Material& material);
// Number of explicit sub-steps mpm_step will take for this dt.
int mpm_substep_count(const MpmParticles& particles, const MpmGrid& grid, std::span<const Material> materials,
                      double dt, const MpmOptions& options = {});

// Particle-to-grid transfer (APIC momentum, stress and external forces over
// dt). Exposed for conservation checks.
void particle_to_grid(const MpmParticles& particles, MpmGrid& grid, std::span<const Material> materials,
                      std::span<const Vec3> external_accel, double dt);

// Advances by dt, sub-cycling to satisfy the CFL bound. `boundary` may be null.
MpmParticles mpm_step(const MpmParticles& particles, MpmGrid& grid, std::span<const Material> materials,
                      std::span<const Vec3> external_accel, const Sdf* boundary, double dt,
                      const MpmOptions& options = {});

}  // namespace hybridsim
