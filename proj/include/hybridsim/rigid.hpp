#pragma once

#include <span>
#include <vector>

#include "hybridsim/sdf.hpp"
#include "hybridsim/types.hpp"

namespace hybridsim {

struct RigidState {
  std::vector<Vec3> rest_positions;
  std::vector<Vec3> positions;
  std::vector<Vec3> velocities;
  std::vector<double> masses;
  Vec3 rest_center_of_mass = Vec3::Zero();

  static RigidState from_particles(std::vector<Vec3> rest, std::vector<Vec3> positions, std::vector<Vec3> velocities,
                                   std::vector<double> masses);

  std::size_t size() const { return positions.size(); }
  double total_mass() const;
  Vec3 center_of_mass() const;
  Vec3 linear_momentum() const;
  Vec3 angular_momentum() const;  // about the current center of mass
};

// x = R * x_rest + translation, with translation = com - R * rest_com.
struct RigidTransform {
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();
  Vec3 apply(const Vec3& rest) const { return rotation * rest + translation; }
};

// Best-fit rigid transform from the polar decomposition of the mass-weighted
// covariance. Throws on fewer than 3 particles or a collinear configuration.
RigidTransform shape_match(std::span<const Vec3> rest, std::span<const Vec3> current, std::span<const double> masses);

// Symplectic Euler prediction followed by projection onto the shape-matched
// goal positions; velocities become (goal - old) / dt.
RigidState rigid_step(const RigidState& state, std::span<const Vec3> forces, double dt);

struct ContactOptions {
  int position_passes = 8;
  int velocity_passes = 4;
  double tolerance = 1e-5;      // accepted residual penetration (m)
  double candidate_band = 2e-2; // particles closer than this are contact candidates (m)
};

// Projects the body out of `boundary` by generalized-mass rigid corrections,
// then removes approaching normal velocity at the contacts and applies
// Coulomb friction with coefficient `friction`. The body stays rigid.
RigidState resolve_collisions(const RigidState& state, const Sdf& boundary, double friction,
                              const ContactOptions& options = {});

}  // namespace hybridsim
