#pragma once

#include <memory>
#include <span>
#include <vector>

#include "hybridsim/spatial_grid.hpp"
#include "hybridsim/types.hpp"

namespace hybridsim {

// Signed distance (negative inside the obstacle), outward unit normal, and the
// obstacle's velocity at the query point.
struct SdfSample {
  double distance = 0.0;
  Vec3 normal = Vec3::UnitZ();
  Vec3 velocity = Vec3::Zero();
};

class Sdf {
 public:
  virtual ~Sdf() = default;
  virtual SdfSample sample(const Vec3& x) const = 0;
  double distance(const Vec3& x) const { return sample(x).distance; }
};

class PlaneSdf final : public Sdf {
 public:
  PlaneSdf(const Vec3& point, const Vec3& normal) : point_(point), normal_(normal.normalized()) {}
  SdfSample sample(const Vec3& x) const override { return {(x - point_).dot(normal_), normal_, Vec3::Zero()}; }

 private:
  Vec3 point_;
  Vec3 normal_;
};

// Voxelized signed distance built from oriented surface samples. Each node
// stores the signed plane distance to its closest sample (found by fast
// sweeping over the grid); queries interpolate trilinearly.
class GridSdf final : public Sdf {
 public:
  static GridSdf from_oriented_points(std::span<const Vec3> positions, std::span<const Vec3> normals,
                                      const Vec3& lower, const Vec3& upper, int resolution);

  SdfSample sample(const Vec3& x) const override;

  const Vec3& lower() const { return lower_; }
  double spacing() const { return dx_; }
  std::array<int, 3> dims() const { return dims_; }

 private:
  std::size_t node(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * dims_[1] + j) * dims_[0] + i;
  }
  Vec3 lower_ = Vec3::Zero();
  double dx_ = 1.0;
  std::array<int, 3> dims_{0, 0, 0};
  std::vector<double> phi_;
  std::vector<Vec3> normals_;
};

// Treats a frozen particle set as a collider: distance to the nearest particle
// minus the particle radius. Far queries report +search_radius.
class ParticleSetSdf final : public Sdf {
 public:
  ParticleSetSdf(std::vector<Vec3> positions, std::vector<Vec3> velocities, double radius);
  SdfSample sample(const Vec3& x) const override;

 private:
  std::vector<Vec3> velocities_;
  double radius_;
  SpatialGrid grid_;
};

// Union of obstacles (pointwise minimum distance). Does not own its children.
class CompositeSdf final : public Sdf {
 public:
  void add(const Sdf* child) {
    if (child) children_.push_back(child);
  }
  bool empty() const { return children_.empty(); }
  SdfSample sample(const Vec3& x) const override;

 private:
  std::vector<const Sdf*> children_;
};

}  // namespace hybridsim
