#pragma once

#include <array>
#include <span>
#include <utility>
#include <vector>

#include "hybridsim/scene.hpp"
#include "hybridsim/sdf.hpp"

namespace hybridsim {

enum class ConstraintKind { stretch, bend, density };

// stretch: indices[0..1], rest length (m).
// bend: indices[0..1] shared edge, indices[2..3] wing vertices, rest dihedral angle (rad).
// density: indices[0] particle, rest density (kernel units), kernel radius (m).
struct Constraint {
  ConstraintKind kind = ConstraintKind::stretch;
  std::array<std::uint32_t, 4> indices{};
  double rest = 0.0;
  double compliance = 0.0;
  double kernel_radius = 0.0;
};

struct PbdState {
  std::vector<Vec3> positions;
  std::vector<Vec3> predicted;
  std::vector<Vec3> velocities;
  std::vector<double> inv_masses;  // 0 = pinned
  std::vector<Constraint> constraints;
  double viscosity = 0.0;          // XSPH coefficient; smoothing is skipped at 0

  std::size_t size() const { return positions.size(); }
};

struct PbdOptions {
  int iterations = 10;
  bool jacobi = false;            // averaged parallel corrections instead of Gauss-Seidel
  double damping = 0.0;           // velocity decay rate (1/s) applied after each substep
  double boundary_friction = 0.0;
};

// Poly6 kernel and spiky kernel gradient.
double poly6(double r, double h);
Vec3 spiky_gradient(const Vec3& r, double h);
// Number density (unit mass) at a particle of an infinite cubic lattice with the
// given spacing, using the poly6 kernel of radius h.
double lattice_rest_density(double spacing, double h);

// XPBD distance constraint. Updates the accumulated multiplier `lambda`.
std::pair<Vec3, Vec3> solve_stretch(const Vec3& pi, const Vec3& pj, double rest_length, double wi, double wj,
                                    double compliance, double dt, double& lambda);

// Signed dihedral angle across edge (x0, x1) between triangles (x0, x1, x2)
// and (x1, x0, x3); 0 for a flat configuration.
double dihedral_angle(const Vec3& x0, const Vec3& x1, const Vec3& x2, const Vec3& x3);
std::array<Vec3, 4> dihedral_angle_gradient(const Vec3& x0, const Vec3& x1, const Vec3& x2, const Vec3& x3);

// XPBD dihedral bending constraint on (x0, x1 | x2, x3).
std::array<Vec3, 4> solve_bend(const std::array<Vec3, 4>& x, const std::array<double, 4>& w, double rest_angle,
                               double compliance, double dt, double& lambda);

// Neighbor lists (excluding self) within radius h.
std::vector<std::vector<std::uint32_t>> find_neighbors(std::span<const Vec3> positions, double h);

// Per-particle density constraint values C_i = max(rho_i / rho0 - 1, 0).
std::vector<double> density_constraints(std::span<const Vec3> positions,
                                        const std::vector<std::vector<std::uint32_t>>& neighbors, double rest_density,
                                        double h);

// One position-based-fluids pass (Jacobi): corrections for every particle.
std::vector<Vec3> solve_density(std::span<const Vec3> positions,
                                const std::vector<std::vector<std::uint32_t>>& neighbors, double rest_density,
                                double h, double relaxation = 0.0);

// XSPH smoothing with symmetric weights W_ij / max(S_i, S_j); preserves the
// mean velocity and never increases the velocity variance for mu in [0, 1].
std::vector<Vec3> xsph_smooth(std::span<const Vec3> positions, std::span<const Vec3> velocities,
                              const std::vector<std::vector<std::uint32_t>>& neighbors, double h, double mu);

// Cloth state: one particle per surfel, stretch constraints on the edges,
// bending constraints on interior edges of the triangle topology.
PbdState make_cloth_state(const ObjectSurfels& object);
// Smoke state: all particles, one density constraint each, kernel radius
// twice the particle size.
PbdState make_smoke_state(const ObjectSurfels& object, double particle_size);

// Advances dt with `substeps` equal substeps. `boundary` may be null.
PbdState pbd_step(const PbdState& state, std::span<const Vec3> external_accel, const Sdf* boundary, double dt,
                  int substeps, const PbdOptions& options = {});

// Largest |C| over stretch constraints relative to rest length.
double max_stretch_residual(const PbdState& state);
// Largest density constraint value.
double max_density_residual(const PbdState& state);

}  // namespace hybridsim
