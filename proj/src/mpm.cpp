#include "hybridsim/mpm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "hybridsim/math.hpp"
#include "hybridsim/parallel.hpp"

namespace hybridsim {

namespace {

constexpr int kMarginCells = 4;  // extra cells on each side beyond the dilated bounds

struct Stencil {
  std::array<int, 3> base;
  double w[3][3];   // [axis][node]
  double dw[3][3];
  Vec3 frac;        // particle position relative to base, cell units

  double weight(int a, int b, int c) const { return w[0][a] * w[1][b] * w[2][c]; }
  Vec3 gradient(int a, int b, int c, double inv_dx) const {
    return Vec3(dw[0][a] * w[1][b] * w[2][c], w[0][a] * dw[1][b] * w[2][c], w[0][a] * w[1][b] * dw[2][c]) * inv_dx;
  }
  Vec3 offset(int a, int b, int c, double dx) const { return (Vec3(a, b, c) - frac) * dx; }
};

Stencil make_stencil(const Vec3& x, const MpmGrid& grid) {
  Stencil s;
  const Vec3 g = (x - grid.origin()) / grid.dx();
  for (int a = 0; a < 3; ++a) {
    s.base[a] = static_cast<int>(std::floor(g[a] - 0.5));
    s.frac[a] = g[a] - s.base[a];
    bspline_weights(s.frac[a], s.w[a], s.dw[a]);
  }
  return s;
}

bool stencil_inside(const Stencil& s, const MpmGrid& grid) {
  for (int a = 0; a < 3; ++a)
    if (s.base[a] < 0 || s.base[a] + 2 >= grid.resolution()[a]) return false;
  return true;
}

// F^T F - I with error-free products and compensated sums, so that the
// principal stretches of a near-rotation are not lost to cancellation.
Mat3 gram_minus_identity(const Mat3& F) {
  Mat3 C;
  for (int i = 0; i < 3; ++i)
    for (int j = i; j < 3; ++j) {
      double sum = i == j ? -1.0 : 0.0, comp = 0.0;
      for (int k = 0; k < 3; ++k) {
        const double p = F(k, i) * F(k, j);
        const double pe = std::fma(F(k, i), F(k, j), -p);
        const double t = sum + p;
        const double z = t - sum;
        comp += (sum - (t - z)) + (p - z) + pe;
        sum = t;
      }
      C(i, j) = C(j, i) = sum + comp;
    }
  return C;
}

// Fixed-corotated stress in the principal basis of F^T F:
// P = F V diag(d / s) V^T with d = 2 mu (s - 1) + lambda (J - 1) J / s.
Mat3 corotated_stress(const Mat3& F, const Lame& lame) {
  Eigen::SelfAdjointEigenSolver<Mat3> eig(gram_minus_identity(F));
  const Vec3 c = eig.eigenvalues();
  Vec3 e, sig;
  for (int a = 0; a < 3; ++a) {
    e[a] = c[a] / (std::sqrt(1.0 + c[a]) + 1.0);  // s - 1
    sig[a] = 1.0 + e[a];
  }
  const double J1 = e[0] + e[1] + e[2] + e[0] * e[1] + e[0] * e[2] + e[1] * e[2] + e[0] * e[1] * e[2];
  const double J = 1.0 + J1;
  Vec3 k;
  for (int a = 0; a < 3; ++a) k[a] = (2.0 * lame.mu * e[a] + lame.lambda * J1 * J / sig[a]) / sig[a];
  const Mat3& V = eig.eigenvectors();
  return F * V * k.asDiagonal() * V.transpose();
}

// Hencky-strain St. Venant-Kirchhoff stress. The principal stretches come from
// F^T F - I so that rotations give an exactly zero strain; det F > 0 makes
// F V diag(1 / s) the rotation factor.
Mat3 hencky_stress(const Mat3& F, const Lame& lame) {
  Eigen::SelfAdjointEigenSolver<Mat3> eig(gram_minus_identity(F));
  const Vec3 c = eig.eigenvalues();
  Vec3 eps, sig2;
  for (int a = 0; a < 3; ++a) {
    const double ca = std::max(c[a], 1e-24 - 1.0);
    eps[a] = 0.5 * std::log1p(ca);
    sig2[a] = 1.0 + ca;
  }
  const double tr = eps.sum();
  Vec3 k;
  for (int a = 0; a < 3; ++a) k[a] = (2.0 * lame.mu * eps[a] + lame.lambda * tr) / sig2[a];
  const Mat3& V = eig.eigenvectors();
  return F * V * k.asDiagonal() * V.transpose();
}

struct DpParams {
  double alpha;   // cone slope
  double ratio;   // (3 lambda + 2 mu) / (2 mu) = (1 + nu) / (1 - 2 nu)
};

DpParams dp_params(double friction_angle_deg, double poisson) {
  const double s = std::sin(friction_angle_deg * kPi / 180.0);
  return {std::sqrt(2.0 / 3.0) * 2.0 * s / (3.0 - s), (1.0 + poisson) / (1.0 - 2.0 * poisson)};
}

}  // namespace

void MpmParticles::push_back(const Particle& p, std::uint32_t material_index) {
  positions.push_back(p.position);
  velocities.push_back(p.velocity);
  masses.push_back(p.mass);
  volumes.push_back(p.volume);
  deformation.push_back(p.deformation);
  affine.push_back(p.affine);
  material.push_back(material_index);
}

double MpmParticles::total_mass() const {
  double m = 0.0;
  for (double v : masses) m += v;
  return m;
}

Vec3 MpmParticles::momentum() const {
  Vec3 p = Vec3::Zero();
  for (std::size_t i = 0; i < size(); ++i) p += masses[i] * velocities[i];
  return p;
}

MpmGrid::MpmGrid(const Vec3& origin, double dx, std::array<int, 3> resolution)
    : origin_(origin), dx_(dx), res_(resolution) {
  if (!(dx > 0.0)) throw Error("MpmGrid: cell size must be positive");
  for (int r : res_)
    if (r < 8) throw Error("MpmGrid: resolution must be >= 8 along every axis");
  const std::size_t total = static_cast<std::size_t>(res_[0]) * res_[1] * res_[2];
  mass_.assign(total, 0.0);
  momentum_.assign(total, Vec3::Zero());
  velocity_.assign(total, Vec3::Zero());
  touched_.assign(total, 0);
}

MpmGrid MpmGrid::covering(const Vec3& lower, const Vec3& upper, int resolution, double min_dx) {
  if (resolution < 8) throw Error("MpmGrid: resolution must be >= 8");
  const Vec3 extent = (upper - lower).cwiseMax(Vec3::Constant(1e-6)) * 1.1;
  const Vec3 center = 0.5 * (upper + lower);
  const double dx = std::max(extent.maxCoeff() / resolution, min_dx);
  std::array<int, 3> res{};
  for (int a = 0; a < 3; ++a) res[a] = std::max(8, static_cast<int>(std::ceil(extent[a] / dx)) + 2 * kMarginCells);
  const Vec3 origin = center - 0.5 * dx * Vec3(res[0] - 1, res[1] - 1, res[2] - 1);
  return MpmGrid(origin, dx, res);
}

Vec3 MpmGrid::node_position(std::size_t n) const {
  const std::size_t i = n % res_[0];
  const std::size_t j = (n / res_[0]) % res_[1];
  const std::size_t k = n / (static_cast<std::size_t>(res_[0]) * res_[1]);
  return origin_ + dx_ * Vec3(static_cast<double>(i), static_cast<double>(j), static_cast<double>(k));
}

void MpmGrid::clear() {
  for (auto n : active_) {
    mass_[n] = 0.0;
    momentum_[n].setZero();
    velocity_[n].setZero();
    touched_[n] = 0;
  }
  active_.clear();
}

void MpmGrid::accumulate(std::size_t n, double mass, const Vec3& momentum) {
  if (!touched_[n]) {
    touched_[n] = 1;
    active_.push_back(n);
  }
  mass_[n] += mass;
  momentum_[n] += momentum;
}

double MpmGrid::total_mass() const {
  double m = 0.0;
  for (auto n : active_) m += mass_[n];
  return m;
}

Vec3 MpmGrid::total_momentum() const {
  Vec3 p = Vec3::Zero();
  for (auto n : active_) p += momentum_[n];
  return p;
}

void bspline_weights(double fx, double w[3], double dw[3]) {
  w[0] = 0.5 * (1.5 - fx) * (1.5 - fx);
  w[1] = 0.75 - (fx - 1.0) * (fx - 1.0);
  w[2] = 0.5 * (fx - 0.5) * (fx - 0.5);
  dw[0] = fx - 1.5;
  dw[1] = -2.0 * (fx - 1.0);
  dw[2] = fx - 0.5;
}

Mat3 stress(const Material& material, const Mat3& F) {
  const double J = F.determinant();
  if (!(J > 0.0)) {
    std::ostringstream msg;
    msg << "stress: inverted deformation gradient (det F = " << J << ")";
    throw Error(msg.str());
  }
  const Lame lame = lame_parameters(material.youngs, material.poisson);
  switch (material.kind) {
    case MaterialKind::elastic:
      return corotated_stress(F, lame);
    case MaterialKind::liquid:
      return lame.lambda * (J - 1.0) * J * F.inverse().transpose();
    case MaterialKind::granular:
      return hencky_stress(F, lame);
    default:
      throw Error("stress: material kind '" + std::string(to_string(material.kind)) + "' is not an MPM material");
  }
}

double drucker_prager_yield(const Mat3& F, double friction_angle_deg, double poisson) {
  Eigen::JacobiSVD<Mat3> svd(F);
  const Vec3 eps = svd.singularValues().array().max(1e-12).log();
  const double tr = eps.sum();
  const Vec3 dev = eps - Vec3::Constant(tr / 3.0);
  const DpParams p = dp_params(friction_angle_deg, poisson);
  if (tr > 0.0) return dev.norm() < 1e-14 && tr < 1e-14 ? 0.0 : std::numeric_limits<double>::infinity();
  return dev.norm() + p.ratio * p.alpha * tr;
}

Mat3 drucker_prager_project(const Mat3& F, double friction_angle_deg, double poisson) {
  Eigen::JacobiSVD<Mat3> svd(F, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 U = svd.matrixU(), V = svd.matrixV();
  Vec3 sig = svd.singularValues();
  const Vec3 eps = sig.array().max(1e-12).log();
  const double tr = eps.sum();
  const Vec3 dev = eps - Vec3::Constant(tr / 3.0);
  const double dev_norm = dev.norm();
  if (tr > 0.0) return Mat3::Identity();  // expansion: project to the cone tip
  const DpParams p = dp_params(friction_angle_deg, poisson);
  const double dgamma = dev_norm + p.ratio * p.alpha * tr;
  if (dgamma <= 0.0 || dev_norm < 1e-300) return F;
  const Vec3 h = eps - (dgamma / dev_norm) * dev;
  return U * h.array().exp().matrix().asDiagonal() * V.transpose();
}

double wave_speed(const Material& material) {
  const Lame lame = lame_parameters(material.youngs, material.poisson);
  const double modulus = material.kind == MaterialKind::liquid ? lame.lambda : lame.lambda + 2.0 * lame.mu;
  return std::sqrt(modulus / material.density);
}

int mpm_substep_count(const MpmParticles& particles, const MpmGrid& grid, std::span<const Material> materials,
                      double dt, const MpmOptions& options) {
  double c = 0.0;
  for (const auto& m : materials)
    if (m.uses_mpm()) c = std::max(c, wave_speed(m));
  double vmax = 0.0;
  for (const auto& v : particles.velocities) vmax = std::max(vmax, v.norm());
  const double limit = options.cfl * grid.dx() / std::max(c + vmax, 1e-12);
  return std::max(1, static_cast<int>(std::ceil(dt / limit - 1e-9)));
}

void particle_to_grid(const MpmParticles& ps, MpmGrid& grid, std::span<const Material> materials,
                      std::span<const Vec3> external_accel, double dt) {
  const double dx = grid.dx(), inv_dx = 1.0 / dx;
  grid.clear();
  for (std::size_t p = 0; p < ps.size(); ++p) {
    const Stencil s = make_stencil(ps.positions[p], grid);
    if (!stencil_inside(s, grid)) {
      std::ostringstream msg;
      msg << "mpm: particle " << p << " at (" << ps.positions[p].transpose() << ") is outside the grid domain";
      throw Error(msg.str());
    }
    const Material& mat = materials[ps.material[p]];
    const Mat3& F = ps.deformation[p];
    Mat3 P;
    try {
      P = stress(mat, F);
    } catch (const Error& e) {
      throw Error("mpm: particle " + std::to_string(p) + ": " + e.what());
    }
    const Mat3 Q = -dt * ps.volumes[p] * P * F.transpose();
    const double m = ps.masses[p];
    const Vec3 mv = m * (ps.velocities[p] + dt * external_accel[p]);
    const Mat3 mC = m * ps.affine[p];
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 3; ++c) {
          const double w = s.weight(a, b, c);
          const Vec3 mom = w * (mv + mC * s.offset(a, b, c, dx)) + Q * s.gradient(a, b, c, inv_dx);
          grid.accumulate(grid.node(s.base[0] + a, s.base[1] + b, s.base[2] + c), w * m, mom);
        }
  }
}

MpmParticles mpm_step(const MpmParticles& particles, MpmGrid& grid, std::span<const Material> materials,
                      std::span<const Vec3> external_accel, const Sdf* boundary, double dt,
                      const MpmOptions& options) {
  if (!(dt > 0.0)) throw Error("mpm_step: dt must be positive");
  if (external_accel.size() != particles.size()) throw Error("mpm_step: external acceleration count mismatch");
  for (auto id : particles.material)
    if (id >= materials.size() || !materials[id].uses_mpm()) throw Error("mpm_step: invalid material index");
  MpmParticles ps = particles;
  if (ps.size() == 0) return ps;
  const int n_sub = mpm_substep_count(ps, grid, materials, dt, options);
  const double h = dt / n_sub;
  const double dx = grid.dx(), inv_dx = 1.0 / dx;
  const auto& res = grid.resolution();
  const Vec3 lo = grid.origin() + Vec3::Constant(2.0 * dx);
  const Vec3 hi = grid.origin() + dx * Vec3(res[0] - 3, res[1] - 3, res[2] - 3);

  for (int sub = 0; sub < n_sub; ++sub) {
    particle_to_grid(ps, grid, materials, external_accel, h);

    const auto& active = grid.active();
    parallel_for(active.size(), [&](std::size_t begin, std::size_t end) {
      for (std::size_t a = begin; a < end; ++a) {
        const std::size_t n = active[a];
        const double m = grid.mass(n);
        if (m <= 0.0) continue;
        Vec3 v = grid.momentum(n) / m;
        if (boundary) {
          const Vec3 x = grid.node_position(n);
          const SdfSample smp = boundary->sample(x);
          if (smp.distance < 0.0) {
            Vec3 rel = v - smp.velocity;
            const double vn = rel.dot(smp.normal);
            if (vn < 0.0) {
              Vec3 vt = rel - vn * smp.normal;
              const double t = vt.norm();
              vt *= t > 0.0 ? std::max(0.0, 1.0 + options.friction * vn / t) : 0.0;
              v = smp.velocity + vt;
            }
          }
        }
        const std::size_t i = n % res[0], j = (n / res[0]) % res[1], k = n / (static_cast<std::size_t>(res[0]) * res[1]);
        const std::size_t idx[3] = {i, j, k};
        for (int ax = 0; ax < 3; ++ax) {
          if (idx[ax] < static_cast<std::size_t>(options.wall_cells) && v[ax] < 0.0) v[ax] = 0.0;
          if (idx[ax] + options.wall_cells >= static_cast<std::size_t>(res[ax]) && v[ax] > 0.0) v[ax] = 0.0;
        }
        grid.velocity(n) = v;
      }
    });

    parallel_for(ps.size(), [&](std::size_t begin, std::size_t end) {
      for (std::size_t p = begin; p < end; ++p) {
        const Stencil s = make_stencil(ps.positions[p], grid);
        Vec3 v = Vec3::Zero();
        Mat3 B = Mat3::Zero(), grad_v = Mat3::Zero();
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b)
            for (int c = 0; c < 3; ++c) {
              const double w = s.weight(a, b, c);
              const Vec3& vi = grid.velocity(grid.node(s.base[0] + a, s.base[1] + b, s.base[2] + c));
              v += w * vi;
              B += w * vi * s.offset(a, b, c, dx).transpose();
              grad_v += vi * s.gradient(a, b, c, inv_dx).transpose();
            }
        ps.velocities[p] = v;
        ps.affine[p] = (4.0 * inv_dx * inv_dx) * B;
        Mat3 F = (Mat3::Identity() + h * grad_v) * ps.deformation[p];
        const Material& mat = materials[ps.material[p]];
        if (mat.kind == MaterialKind::liquid) {
          const double J = F.determinant();
          F = std::cbrt(J) * Mat3::Identity();
        } else if (mat.kind == MaterialKind::granular) {
          F = drucker_prager_project(F, mat.friction_angle, mat.poisson);
        }
        ps.deformation[p] = F;
        Vec3 x = ps.positions[p] + h * v;
        if (boundary && options.project_particles) {
          const SdfSample smp = boundary->sample(x);
          if (smp.distance < 0.0) {
            x -= smp.distance * smp.normal;
            Vec3 rel = ps.velocities[p] - smp.velocity;
            const double vn = rel.dot(smp.normal);
            if (vn < 0.0) {
              Vec3 vt = rel - vn * smp.normal;
              const double t = vt.norm();
              vt *= t > 0.0 ? std::max(0.0, 1.0 + options.friction * vn / t) : 0.0;
              ps.velocities[p] = smp.velocity + vt;
            }
          }
        }
        for (int ax = 0; ax < 3; ++ax) {
          if (x[ax] < lo[ax]) {
            x[ax] = lo[ax];
            ps.velocities[p][ax] = std::max(ps.velocities[p][ax], 0.0);
          } else if (x[ax] > hi[ax]) {
            x[ax] = hi[ax];
            ps.velocities[p][ax] = std::min(ps.velocities[p][ax], 0.0);
          }
        }
        ps.positions[p] = x;
      }
    });
  }
  return ps;
}

}  // namespace hybridsim
