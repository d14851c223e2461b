#include "hybridsim/pbd.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "hybridsim/math.hpp"
#include "hybridsim/parallel.hpp"
#include "hybridsim/spatial_grid.hpp"

namespace hybridsim {

namespace {

double wrap_angle(double a) {
  while (a > kPi) a -= 2.0 * kPi;
  while (a <= -kPi) a += 2.0 * kPi;
  return a;
}

// Sum over lattice neighbors of |grad C|^2 for a particle at rest; scales the
// constraint-force mixing term of the density solve.
double lattice_gradient_sum(double spacing, double h, double rest_density) {
  const int n = static_cast<int>(std::ceil(h / spacing));
  Vec3 self = Vec3::Zero();
  double others = 0.0;
  for (int i = -n; i <= n; ++i)
    for (int j = -n; j <= n; ++j)
      for (int k = -n; k <= n; ++k) {
        if (i == 0 && j == 0 && k == 0) continue;
        const Vec3 g = spiky_gradient(Vec3(i, j, k) * spacing, h) / rest_density;
        self += g;
        others += g.squaredNorm();
      }
  return self.squaredNorm() + others;
}

double auto_relaxation(double h, double rest_density) {
  return 0.01 * lattice_gradient_sum(0.5 * h, h, rest_density);
}

void project_boundary(Vec3& x, const Vec3& previous, const Sdf& boundary, double friction) {
  const SdfSample smp = boundary.sample(x);
  if (smp.distance >= 0.0) return;
  x -= smp.distance * smp.normal;
  if (friction <= 0.0) return;
  // Static-style friction on the tangential displacement of this substep.
  const Vec3 dx = x - previous;
  const Vec3 dt = dx - dx.dot(smp.normal) * smp.normal;
  const double len = dt.norm();
  const double limit = friction * (-smp.distance);
  x -= len <= limit ? dt : Vec3(dt * (limit / len));
}

}  // namespace

double poly6(double r, double h) {
  if (r >= h) return 0.0;
  const double d = h * h - r * r;
  return 315.0 / (64.0 * kPi * std::pow(h, 9)) * d * d * d;
}

Vec3 spiky_gradient(const Vec3& r, double h) {
  const double len = r.norm();
  if (len >= h || len < 1e-12) return Vec3::Zero();
  const double d = h - len;
  return (-45.0 / (kPi * std::pow(h, 6)) * d * d / len) * r;
}

double lattice_rest_density(double spacing, double h) {
  const int n = static_cast<int>(std::ceil(h / spacing));
  double rho = 0.0;
  for (int i = -n; i <= n; ++i)
    for (int j = -n; j <= n; ++j)
      for (int k = -n; k <= n; ++k) rho += poly6((Vec3(i, j, k) * spacing).norm(), h);
  return rho;
}

std::pair<Vec3, Vec3> solve_stretch(const Vec3& pi, const Vec3& pj, double rest_length, double wi, double wj,
                                    double compliance, double dt, double& lambda) {
  const Vec3 d = pi - pj;
  const double len = d.norm();
  const double alpha = compliance / (dt * dt);
  const double denom = wi + wj + alpha;
  if (len < 1e-12 || denom <= 0.0) return {Vec3::Zero(), Vec3::Zero()};
  const Vec3 n = d / len;
  const double C = len - rest_length;
  const double dl = (-C - alpha * lambda) / denom;
  lambda += dl;
  return {wi * dl * n, -wj * dl * n};
}

double dihedral_angle(const Vec3& x0, const Vec3& x1, const Vec3& x2, const Vec3& x3) {
  const Vec3 e = x1 - x0;
  const Vec3 n1 = e.cross(x2 - x0);
  const Vec3 n2 = (x0 - x1).cross(x3 - x1);
  const double l1 = n1.norm(), l2 = n2.norm(), le = e.norm();
  if (l1 < 1e-300 || l2 < 1e-300 || le < 1e-300) return 0.0;
  const Vec3 a = n1 / l1, b = n2 / l2;
  return std::atan2(a.cross(b).dot(e / le), a.dot(b));
}

std::array<Vec3, 4> dihedral_angle_gradient(const Vec3& x0, const Vec3& x1, const Vec3& x2, const Vec3& x3) {
  const Vec3 e = x1 - x0;
  const Vec3 n1 = e.cross(x2 - x0);
  const Vec3 n2 = (x0 - x1).cross(x3 - x1);
  const double l1 = n1.squaredNorm(), l2 = n2.squaredNorm(), le = e.norm();
  if (l1 < 1e-300 || l2 < 1e-300 || le < 1e-300) return {Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
  std::array<Vec3, 4> g;
  g[2] = -le * n1 / l1;
  g[3] = -le * n2 / l2;
  // Translation and rotation invariance fix the hinge gradients; sliding
  // along the hinge leaves the angle unchanged.
  const Vec3 rhs = -((x2 - x1).cross(g[2]) + (x3 - x1).cross(g[3]));
  g[0] = e.cross(rhs) / (le * le);
  g[1] = -(g[0] + g[2] + g[3]);
  return g;
}

std::array<Vec3, 4> solve_bend(const std::array<Vec3, 4>& x, const std::array<double, 4>& w, double rest_angle,
                               double compliance, double dt, double& lambda) {
  const double C = wrap_angle(dihedral_angle(x[0], x[1], x[2], x[3]) - rest_angle);
  const auto g = dihedral_angle_gradient(x[0], x[1], x[2], x[3]);
  const double alpha = compliance / (dt * dt);
  double denom = alpha;
  for (int k = 0; k < 4; ++k) denom += w[k] * g[k].squaredNorm();
  std::array<Vec3, 4> out{Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
  if (denom < 1e-300) return out;
  const double dl = (-C - alpha * lambda) / denom;
  lambda += dl;
  for (int k = 0; k < 4; ++k) out[k] = w[k] * dl * g[k];
  return out;
}

std::vector<std::vector<std::uint32_t>> find_neighbors(std::span<const Vec3> positions, double h) {
  std::vector<std::vector<std::uint32_t>> out(positions.size());
  if (positions.empty()) return out;
  const SpatialGrid grid(positions, h);
  parallel_for(positions.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      grid.for_each_within(positions[i], h, [&](std::uint32_t j, double) {
        if (j != i) out[i].push_back(j);
      });
      std::sort(out[i].begin(), out[i].end());
    }
  });
  return out;
}

std::vector<double> density_constraints(std::span<const Vec3> positions,
                                        const std::vector<std::vector<std::uint32_t>>& neighbors, double rest_density,
                                        double h) {
  std::vector<double> c(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    double rho = poly6(0.0, h);
    for (auto j : neighbors[i]) rho += poly6((positions[i] - positions[j]).norm(), h);
    c[i] = std::max(rho / rest_density - 1.0, 0.0);
  }
  return c;
}

std::vector<Vec3> solve_density(std::span<const Vec3> positions,
                                const std::vector<std::vector<std::uint32_t>>& neighbors, double rest_density,
                                double h, double relaxation) {
  const std::size_t n = positions.size();
  if (relaxation <= 0.0) relaxation = auto_relaxation(h, rest_density);
  const auto C = density_constraints(positions, neighbors, rest_density, h);
  std::vector<double> lambda(n, 0.0);
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      if (C[i] <= 0.0) continue;
      Vec3 self = Vec3::Zero();
      double sum = 0.0;
      for (auto j : neighbors[i]) {
        const Vec3 g = spiky_gradient(positions[i] - positions[j], h) / rest_density;
        self += g;
        sum += g.squaredNorm();
      }
      lambda[i] = -C[i] / (self.squaredNorm() + sum + relaxation);
    }
  });
  std::vector<Vec3> dp(n, Vec3::Zero());
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Vec3 d = Vec3::Zero();
      for (auto j : neighbors[i]) d += (lambda[i] + lambda[j]) * spiky_gradient(positions[i] - positions[j], h);
      dp[i] = d / rest_density;
    }
  });
  return dp;
}

std::vector<Vec3> xsph_smooth(std::span<const Vec3> positions, std::span<const Vec3> velocities,
                              const std::vector<std::vector<std::uint32_t>>& neighbors, double h, double mu) {
  const std::size_t n = positions.size();
  std::vector<double> total(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (auto j : neighbors[i]) total[i] += poly6((positions[i] - positions[j]).norm(), h);
  std::vector<Vec3> out(velocities.begin(), velocities.end());
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Vec3 dv = Vec3::Zero();
      for (auto j : neighbors[i]) {
        const double norm = std::max(total[i], total[j]);
        if (norm <= 0.0) continue;
        dv += poly6((positions[i] - positions[j]).norm(), h) / norm * (velocities[j] - velocities[i]);
      }
      out[i] = velocities[i] + mu * dv;
    }
  });
  return out;
}

PbdState make_cloth_state(const ObjectSurfels& obj) {
  PbdState s;
  const std::size_t n = obj.particles.size();
  s.positions.resize(n);
  s.velocities.resize(n);
  s.inv_masses.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.positions[i] = obj.particles[i].position;
    s.velocities[i] = obj.particles[i].velocity;
    s.inv_masses[i] = 1.0 / obj.particles[i].mass;
  }
  for (auto p : obj.pinned)
    if (p < n) s.inv_masses[p] = 0.0;
  s.predicted = s.positions;
  for (auto [i, j] : edge_list(obj.edges)) {
    if (i >= n || j >= n) continue;
    Constraint c;
    c.kind = ConstraintKind::stretch;
    c.indices = {i, j, 0, 0};
    c.rest = (s.positions[i] - s.positions[j]).norm();
    c.compliance = obj.material.stretch_compliance;
    s.constraints.push_back(c);
  }
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<std::pair<std::uint32_t, std::uint32_t>>> wings;
  for (const auto& f : obj.faces)
    for (int e = 0; e < 3; ++e) {
      const std::uint32_t a = f[e], b = f[(e + 1) % 3], c = f[(e + 2) % 3];
      wings[{std::min(a, b), std::max(a, b)}].push_back({a, c});
    }
  for (const auto& [edge, list] : wings) {
    if (list.size() != 2) continue;
    const std::uint32_t x0 = list[0].first;
    const std::uint32_t x1 = x0 == edge.first ? edge.second : edge.first;
    Constraint c;
    c.kind = ConstraintKind::bend;
    c.indices = {x0, x1, list[0].second, list[1].second};
    c.rest = dihedral_angle(s.positions[x0], s.positions[x1], s.positions[c.indices[2]], s.positions[c.indices[3]]);
    c.compliance = obj.material.bending_compliance;
    s.constraints.push_back(c);
  }
  return s;
}

PbdState make_smoke_state(const ObjectSurfels& obj, double particle_size) {
  PbdState s;
  const std::size_t n = obj.particles.size();
  s.positions.resize(n);
  s.velocities.resize(n);
  s.inv_masses.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.positions[i] = obj.particles[i].position;
    s.velocities[i] = obj.particles[i].velocity;
    s.inv_masses[i] = 1.0 / obj.particles[i].mass;
  }
  for (auto p : obj.pinned)
    if (p < n) s.inv_masses[p] = 0.0;
  s.predicted = s.positions;
  const double h = 2.0 * particle_size;
  // The initial sampling is taken as admissible: the rest density is at
  // least the densest initial neighborhood.
  double rho0 = lattice_rest_density(particle_size, h);
  const auto nb = find_neighbors(s.positions, h);
  for (std::size_t i = 0; i < n; ++i) {
    double rho = poly6(0.0, h);
    for (auto j : nb[i]) rho += poly6((s.positions[i] - s.positions[j]).norm(), h);
    rho0 = std::max(rho0, rho);
  }
  for (std::uint32_t i = 0; i < n; ++i) {
    Constraint c;
    c.kind = ConstraintKind::density;
    c.indices = {i, 0, 0, 0};
    c.rest = rho0;
    c.kernel_radius = h;
    s.constraints.push_back(c);
  }
  s.viscosity = obj.material.viscosity;
  return s;
}

PbdState pbd_step(const PbdState& state, std::span<const Vec3> external_accel, const Sdf* boundary, double dt,
                  int substeps, const PbdOptions& options) {
  if (!(dt > 0.0)) throw Error("pbd_step: dt must be positive");
  if (substeps < 1) throw Error("pbd_step: substeps must be >= 1");
  if (external_accel.size() != state.size()) throw Error("pbd_step: external acceleration count mismatch");
  PbdState s = state;
  const std::size_t n = s.size();
  const double h = dt / substeps;

  std::vector<const Constraint*> pairwise;
  double density_h = 0.0, rest_density = 0.0;
  std::vector<char> density_member(n, 0);
  for (const auto& c : s.constraints) {
    if (c.kind == ConstraintKind::density) {
      density_h = c.kernel_radius;
      rest_density = c.rest;
      density_member[c.indices[0]] = 1;
    } else {
      pairwise.push_back(&c);
    }
  }
  const bool has_density = density_h > 0.0;
  const double relaxation = has_density ? auto_relaxation(density_h, rest_density) : 0.0;
  std::vector<double> lambda(pairwise.size());

  for (int sub = 0; sub < substeps; ++sub) {
    for (std::size_t i = 0; i < n; ++i) {
      if (s.inv_masses[i] > 0.0) s.velocities[i] += h * external_accel[i];
      else s.velocities[i].setZero();
      s.predicted[i] = s.positions[i] + h * s.velocities[i];
    }
    std::fill(lambda.begin(), lambda.end(), 0.0);
    std::vector<std::vector<std::uint32_t>> neighbors;
    if (has_density) neighbors = find_neighbors(s.predicted, density_h);

    for (int it = 0; it < options.iterations; ++it) {
      if (options.jacobi) {
        std::vector<Vec3> acc(n, Vec3::Zero());
        std::vector<int> count(n, 0);
        for (std::size_t c = 0; c < pairwise.size(); ++c) {
          const Constraint& con = *pairwise[c];
          if (con.kind == ConstraintKind::stretch) {
            const auto i = con.indices[0], j = con.indices[1];
            auto [di, dj] = solve_stretch(s.predicted[i], s.predicted[j], con.rest, s.inv_masses[i], s.inv_masses[j],
                                          con.compliance, h, lambda[c]);
            acc[i] += di;
            acc[j] += dj;
            ++count[i];
            ++count[j];
          } else {
            std::array<Vec3, 4> x;
            std::array<double, 4> w;
            for (int k = 0; k < 4; ++k) {
              x[k] = s.predicted[con.indices[k]];
              w[k] = s.inv_masses[con.indices[k]];
            }
            const auto d = solve_bend(x, w, con.rest, con.compliance, h, lambda[c]);
            for (int k = 0; k < 4; ++k) {
              acc[con.indices[k]] += d[k];
              ++count[con.indices[k]];
            }
          }
        }
        for (std::size_t i = 0; i < n; ++i)
          if (count[i] > 0) s.predicted[i] += acc[i] / count[i];
      } else {
        for (std::size_t c = 0; c < pairwise.size(); ++c) {
          const Constraint& con = *pairwise[c];
          if (con.kind == ConstraintKind::stretch) {
            const auto i = con.indices[0], j = con.indices[1];
            auto [di, dj] = solve_stretch(s.predicted[i], s.predicted[j], con.rest, s.inv_masses[i], s.inv_masses[j],
                                          con.compliance, h, lambda[c]);
            s.predicted[i] += di;
            s.predicted[j] += dj;
          } else {
            std::array<Vec3, 4> x;
            std::array<double, 4> w;
            for (int k = 0; k < 4; ++k) {
              x[k] = s.predicted[con.indices[k]];
              w[k] = s.inv_masses[con.indices[k]];
            }
            const auto d = solve_bend(x, w, con.rest, con.compliance, h, lambda[c]);
            for (int k = 0; k < 4; ++k) s.predicted[con.indices[k]] += d[k];
          }
        }
      }
      if (has_density) {
        const auto dp = solve_density(s.predicted, neighbors, rest_density, density_h, relaxation);
        for (std::size_t i = 0; i < n; ++i)
          if (density_member[i] && s.inv_masses[i] > 0.0) s.predicted[i] += dp[i];
      }
    }

    if (boundary)
      for (std::size_t i = 0; i < n; ++i)
        if (s.inv_masses[i] > 0.0) project_boundary(s.predicted[i], s.positions[i], *boundary, options.boundary_friction);

    const double keep = options.damping > 0.0 ? std::exp(-options.damping * h) : 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      s.velocities[i] = keep * (s.predicted[i] - s.positions[i]) / h;
      s.positions[i] = s.predicted[i];
    }
    if (has_density && s.viscosity > 0.0) {
      const auto nb = find_neighbors(s.positions, density_h);
      s.velocities = xsph_smooth(s.positions, s.velocities, nb, density_h, s.viscosity);
    }
  }
  return s;
}

double max_stretch_residual(const PbdState& s) {
  double r = 0.0;
  for (const auto& c : s.constraints)
    if (c.kind == ConstraintKind::stretch && c.rest > 0.0)
      r = std::max(r, std::abs((s.positions[c.indices[0]] - s.positions[c.indices[1]]).norm() - c.rest) / c.rest);
  return r;
}

double max_density_residual(const PbdState& s) {
  double h = 0.0, rho0 = 0.0;
  for (const auto& c : s.constraints)
    if (c.kind == ConstraintKind::density) {
      h = c.kernel_radius;
      rho0 = c.rest;
      break;
    }
  if (h <= 0.0) return 0.0;
  const auto nb = find_neighbors(s.positions, h);
  const auto C = density_constraints(s.positions, nb, rho0, h);
  return C.empty() ? 0.0 : *std::max_element(C.begin(), C.end());
}

}  // namespace hybridsim
