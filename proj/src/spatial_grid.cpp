#include "hybridsim/spatial_grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hybridsim {

SpatialGrid::SpatialGrid(std::span<const Vec3> points, double cell_size)
    : points_(points.begin(), points.end()), cell_size_(cell_size) {
  if (!(cell_size > 0.0)) throw Error("SpatialGrid: cell size must be positive");
  std::size_t table = 64;
  while (table < 2 * points_.size()) table <<= 1;
  mask_ = table - 1;
  cells_.resize(points_.size());
  lo_ = {std::numeric_limits<std::int32_t>::max(), std::numeric_limits<std::int32_t>::max(),
         std::numeric_limits<std::int32_t>::max()};
  hi_ = {std::numeric_limits<std::int32_t>::min(), std::numeric_limits<std::int32_t>::min(),
         std::numeric_limits<std::int32_t>::min()};
  std::vector<std::uint32_t> counts(table + 1, 0);
  for (std::size_t i = 0; i < points_.size(); ++i) {
    cells_[i] = cell_of(points_[i]);
    for (int a = 0; a < 3; ++a) {
      lo_[a] = std::min(lo_[a], cells_[i][a]);
      hi_[a] = std::max(hi_[a], cells_[i][a]);
    }
    ++counts[bucket_of(cells_[i]) + 1];
  }
  for (std::size_t b = 0; b < table; ++b) counts[b + 1] += counts[b];
  bucket_start_ = counts;
  sorted_.resize(points_.size());
  std::vector<std::uint32_t> fill(counts.begin(), counts.end() - 1);
  for (std::size_t i = 0; i < points_.size(); ++i)
    sorted_[fill[bucket_of(cells_[i])]++] = static_cast<std::uint32_t>(i);
}

SpatialGrid::Cell SpatialGrid::cell_of(const Vec3& x) const {
  return {static_cast<std::int32_t>(std::floor(x.x() / cell_size_)),
          static_cast<std::int32_t>(std::floor(x.y() / cell_size_)),
          static_cast<std::int32_t>(std::floor(x.z() / cell_size_))};
}

std::size_t SpatialGrid::bucket_of(const Cell& c) const {
  const auto h = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(c[0])) * 73856093ULL) ^
                 (static_cast<std::uint64_t>(static_cast<std::uint32_t>(c[1])) * 19349663ULL) ^
                 (static_cast<std::uint64_t>(static_cast<std::uint32_t>(c[2])) * 83492791ULL);
  return static_cast<std::size_t>(h) & mask_;
}

std::vector<std::uint32_t> SpatialGrid::nearest(const Vec3& x, std::size_t k) const {
  k = std::min(k, points_.size());
  std::vector<std::pair<double, std::uint32_t>> best;
  if (k == 0) return {};
  const Cell center = cell_of(x);
  std::int32_t max_ring = 0;
  for (int a = 0; a < 3; ++a)
    max_ring = std::max({max_ring, std::abs(center[a] - lo_[a]), std::abs(center[a] - hi_[a])});

  auto better = [](const std::pair<double, std::uint32_t>& l, const std::pair<double, std::uint32_t>& r) {
    return l.first < r.first || (l.first == r.first && l.second < r.second);
  };
  for (std::int32_t ring = 0; ring <= max_ring; ++ring) {
    for (std::int32_t i = center[0] - ring; i <= center[0] + ring; ++i)
      for (std::int32_t j = center[1] - ring; j <= center[1] + ring; ++j)
        for (std::int32_t l = center[2] - ring; l <= center[2] + ring; ++l) {
          const bool on_shell = std::abs(i - center[0]) == ring || std::abs(j - center[1]) == ring ||
                                std::abs(l - center[2]) == ring;
          if (!on_shell) continue;
          if (i < lo_[0] || i > hi_[0] || j < lo_[1] || j > hi_[1] || l < lo_[2] || l > hi_[2]) continue;
          const Cell c{i, j, l};
          const std::size_t bucket = bucket_of(c);
          for (std::uint32_t s = bucket_start_[bucket]; s < bucket_start_[bucket + 1]; ++s) {
            const std::uint32_t idx = sorted_[s];
            if (cells_[idx] != c) continue;
            std::pair<double, std::uint32_t> cand{(points_[idx] - x).squaredNorm(), idx};
            if (best.size() < k) {
              best.insert(std::upper_bound(best.begin(), best.end(), cand, better), cand);
            } else if (better(cand, best.back())) {
              best.pop_back();
              best.insert(std::upper_bound(best.begin(), best.end(), cand, better), cand);
            }
          }
        }
    // Anything in ring+1 lies at least ring*cell away from x.
    const double reach = ring * cell_size_;
    if (best.size() == k && best.back().first < reach * reach) break;
  }
  std::vector<std::uint32_t> out;
  out.reserve(best.size());
  for (const auto& b : best) out.push_back(b.second);
  return out;
}

std::int64_t SpatialGrid::nearest_one(const Vec3& x, double max_radius, double* dist2) const {
  std::int64_t best = -1;
  double best_d2 = max_radius * max_radius;
  for_each_within(x, max_radius, [&](std::uint32_t idx, double d2) {
    if (d2 < best_d2 || (d2 == best_d2 && (best < 0 || idx < best))) {
      best_d2 = d2;
      best = idx;
    }
  });
  if (dist2) *dist2 = best_d2;
  return best;
}

}  // namespace hybridsim
