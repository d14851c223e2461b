#include "hybridsim/sdf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hybridsim {

GridSdf GridSdf::from_oriented_points(std::span<const Vec3> positions, std::span<const Vec3> normals,
                                      const Vec3& lower, const Vec3& upper, int resolution) {
  if (positions.empty() || positions.size() != normals.size())
    throw Error("GridSdf: need a nonempty set of oriented points");
  if (resolution < 2) throw Error("GridSdf: resolution must be >= 2");
  GridSdf sdf;
  const Vec3 extent = (upper - lower).cwiseMax(Vec3::Constant(1e-9));
  sdf.dx_ = extent.maxCoeff() / resolution;
  sdf.lower_ = lower;
  for (int a = 0; a < 3; ++a) sdf.dims_[a] = static_cast<int>(std::ceil(extent[a] / sdf.dx_)) + 1;
  const std::size_t total = static_cast<std::size_t>(sdf.dims_[0]) * sdf.dims_[1] * sdf.dims_[2];
  std::vector<std::int32_t> closest(total, -1);
  std::vector<double> best(total, std::numeric_limits<double>::infinity());

  auto node_pos = [&](int i, int j, int k) { return Vec3(lower + sdf.dx_ * Vec3(i, j, k)); };
  auto consider = [&](std::size_t n, const Vec3& x, std::int32_t cand) {
    if (cand < 0) return;
    const double d2 = (x - positions[cand]).squaredNorm();
    if (d2 < best[n] || (d2 == best[n] && cand < closest[n])) {
      best[n] = d2;
      closest[n] = cand;
    }
  };

  // Seed the nodes around each sample.
  for (std::size_t s = 0; s < positions.size(); ++s) {
    const Vec3 g = (positions[s] - lower) / sdf.dx_;
    const int ci = static_cast<int>(std::floor(g.x())), cj = static_cast<int>(std::floor(g.y())),
              ck = static_cast<int>(std::floor(g.z()));
    for (int k = ck - 1; k <= ck + 2; ++k)
      for (int j = cj - 1; j <= cj + 2; ++j)
        for (int i = ci - 1; i <= ci + 2; ++i) {
          if (i < 0 || j < 0 || k < 0 || i >= sdf.dims_[0] || j >= sdf.dims_[1] || k >= sdf.dims_[2]) continue;
          consider(sdf.node(i, j, k), node_pos(i, j, k), static_cast<std::int32_t>(s));
        }
  }

  // Fast sweeping in the 8 octant orders propagates closest-sample indices.
  for (int pass = 0; pass < 2; ++pass)
    for (int dir = 0; dir < 8; ++dir) {
      const int si = (dir & 1) ? -1 : 1, sj = (dir & 2) ? -1 : 1, sk = (dir & 4) ? -1 : 1;
      for (int kk = 0; kk < sdf.dims_[2]; ++kk) {
        const int k = sk > 0 ? kk : sdf.dims_[2] - 1 - kk;
        for (int jj = 0; jj < sdf.dims_[1]; ++jj) {
          const int j = sj > 0 ? jj : sdf.dims_[1] - 1 - jj;
          for (int ii = 0; ii < sdf.dims_[0]; ++ii) {
            const int i = si > 0 ? ii : sdf.dims_[0] - 1 - ii;
            const std::size_t n = sdf.node(i, j, k);
            const Vec3 x = node_pos(i, j, k);
            const int pi = i - si, pj = j - sj, pk = k - sk;
            if (pi >= 0 && pi < sdf.dims_[0]) consider(n, x, closest[sdf.node(pi, j, k)]);
            if (pj >= 0 && pj < sdf.dims_[1]) consider(n, x, closest[sdf.node(i, pj, k)]);
            if (pk >= 0 && pk < sdf.dims_[2]) consider(n, x, closest[sdf.node(i, j, pk)]);
          }
        }
      }
    }

  sdf.phi_.resize(total);
  sdf.normals_.resize(total);
  for (int k = 0; k < sdf.dims_[2]; ++k)
    for (int j = 0; j < sdf.dims_[1]; ++j)
      for (int i = 0; i < sdf.dims_[0]; ++i) {
        const std::size_t n = sdf.node(i, j, k);
        const std::int32_t c = closest[n];
        if (c < 0) throw Error("GridSdf: no oriented point lies inside the grid bounds");
        const Vec3 nrm = normals[c].normalized();
        sdf.phi_[n] = (node_pos(i, j, k) - positions[c]).dot(nrm);
        sdf.normals_[n] = nrm;
      }
  return sdf;
}

SdfSample GridSdf::sample(const Vec3& x) const {
  Vec3 g = (x - lower_) / dx_;
  const Vec3 upper_idx(dims_[0] - 1, dims_[1] - 1, dims_[2] - 1);
  const Vec3 clamped = g.cwiseMax(Vec3::Zero()).cwiseMin(upper_idx);
  const double outside = (g - clamped).norm() * dx_;
  g = clamped;
  int i = std::min(static_cast<int>(g.x()), dims_[0] - 2);
  int j = std::min(static_cast<int>(g.y()), dims_[1] - 2);
  int k = std::min(static_cast<int>(g.z()), dims_[2] - 2);
  i = std::max(i, 0);
  j = std::max(j, 0);
  k = std::max(k, 0);
  const double fx = g.x() - i, fy = g.y() - j, fz = g.z() - k;
  double phi = 0.0;
  Vec3 nrm = Vec3::Zero();
  for (int c = 0; c < 8; ++c) {
    const int di = c & 1, dj = (c >> 1) & 1, dk = (c >> 2) & 1;
    const double w = (di ? fx : 1 - fx) * (dj ? fy : 1 - fy) * (dk ? fz : 1 - fz);
    const std::size_t n = node(i + di, j + dj, k + dk);
    phi += w * phi_[n];
    nrm += w * normals_[n];
  }
  const double len = nrm.norm();
  return {phi + outside, len > 1e-12 ? Vec3(nrm / len) : Vec3(Vec3::UnitZ()), Vec3::Zero()};
}

ParticleSetSdf::ParticleSetSdf(std::vector<Vec3> positions, std::vector<Vec3> velocities, double radius)
    : velocities_(std::move(velocities)), radius_(radius), grid_(positions, 2.0 * radius) {
  if (velocities_.size() != grid_.size()) throw Error("ParticleSetSdf: positions/velocities size mismatch");
}

SdfSample ParticleSetSdf::sample(const Vec3& x) const {
  const double search = 2.0 * radius_;
  double d2 = 0.0;
  const std::int64_t idx = grid_.nearest_one(x, search, &d2);
  if (idx < 0) return {search, Vec3::UnitZ(), Vec3::Zero()};
  const Vec3 diff = x - grid_.point(static_cast<std::size_t>(idx));
  const double d = std::sqrt(d2);
  return {d - radius_, d > 1e-12 ? Vec3(diff / d) : Vec3(Vec3::UnitZ()), velocities_[static_cast<std::size_t>(idx)]};
}

SdfSample CompositeSdf::sample(const Vec3& x) const {
  SdfSample out{std::numeric_limits<double>::infinity(), Vec3::UnitZ(), Vec3::Zero()};
  for (const Sdf* child : children_) {
    const SdfSample s = child->sample(x);
    if (s.distance < out.distance) out = s;
  }
  return out;
}

}  // namespace hybridsim
