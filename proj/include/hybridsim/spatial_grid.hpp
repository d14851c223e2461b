#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "hybridsim/types.hpp"

namespace hybridsim {

// Hashed uniform grid over a static point set. Rebuilt, not updated.
class SpatialGrid {
 public:
  SpatialGrid() = default;
  SpatialGrid(std::span<const Vec3> points, double cell_size);

  double cell_size() const { return cell_size_; }
  std::size_t size() const { return points_.size(); }
  const Vec3& point(std::size_t i) const { return points_[i]; }

  // Calls fn(index, squared_distance) for every point within radius of x.
  template <class Fn>
  void for_each_within(const Vec3& x, double radius, Fn&& fn) const;

  // Indices of the k nearest points sorted by (distance, index).
  std::vector<std::uint32_t> nearest(const Vec3& x, std::size_t k) const;

  // Index of the nearest point, or -1 when empty. Searches at most max_radius.
  std::int64_t nearest_one(const Vec3& x, double max_radius, double* dist2 = nullptr) const;

 private:
  using Cell = std::array<std::int32_t, 3>;
  Cell cell_of(const Vec3& x) const;
  std::size_t bucket_of(const Cell& c) const;

  std::vector<Vec3> points_;
  std::vector<Cell> cells_;
  std::vector<std::uint32_t> bucket_start_;
  std::vector<std::uint32_t> sorted_;
  std::size_t mask_ = 0;
  double cell_size_ = 1.0;
  Cell lo_{}, hi_{};
};

template <class Fn>
void SpatialGrid::for_each_within(const Vec3& x, double radius, Fn&& fn) const {
  if (points_.empty()) return;
  const double r2 = radius * radius;
  const Cell a = cell_of(x - Vec3::Constant(radius));
  const Cell b = cell_of(x + Vec3::Constant(radius));
  for (std::int32_t i = std::max(a[0], lo_[0]); i <= std::min(b[0], hi_[0]); ++i)
    for (std::int32_t j = std::max(a[1], lo_[1]); j <= std::min(b[1], hi_[1]); ++j)
      for (std::int32_t k = std::max(a[2], lo_[2]); k <= std::min(b[2], hi_[2]); ++k) {
        const Cell c{i, j, k};
        const std::size_t bucket = bucket_of(c);
        for (std::uint32_t s = bucket_start_[bucket]; s < bucket_start_[bucket + 1]; ++s) {
          const std::uint32_t idx = sorted_[s];
          if (cells_[idx] != c) continue;
          const double d2 = (points_[idx] - x).squaredNorm();
          if (d2 <= r2) fn(idx, d2);
        }
      }
}

}  // namespace hybridsim
