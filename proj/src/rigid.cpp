#include "hybridsim/rigid.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "hybridsim/math.hpp"

namespace hybridsim {

namespace {

// Pseudo-inverse of a symmetric positive semi-definite inertia tensor; null
// directions (point or collinear bodies) get zero inverse inertia.
Mat3 inertia_pinv(const Mat3& I) {
  Eigen::SelfAdjointEigenSolver<Mat3> eig(I);
  const Vec3 ev = eig.eigenvalues();
  const double cutoff = 1e-12 * std::max(ev.maxCoeff(), 1e-300);
  Vec3 inv;
  for (int a = 0; a < 3; ++a) inv[a] = ev[a] > cutoff ? 1.0 / ev[a] : 0.0;
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

struct Body {
  double mass = 0.0;
  Vec3 com = Vec3::Zero();
  Mat3 R = Mat3::Identity();
  Mat3 inertia_rest = Mat3::Zero();  // about the rest center of mass, rest frame
  Mat3 inv_inertia = Mat3::Zero();   // world frame
  std::vector<Vec3> offsets;         // rest offsets from the rest center of mass

  void update_inertia() { inv_inertia = inertia_pinv(R * inertia_rest * R.transpose()); }
  Vec3 point(std::size_t i) const { return com + R * offsets[i]; }
  double generalized_inverse_mass(const Vec3& r, const Vec3& dir) const {
    const Vec3 rn = r.cross(dir);
    return 1.0 / mass + rn.dot(inv_inertia * rn);
  }
};

Body make_body(const RigidState& s) {
  Body b;
  b.mass = s.total_mass();
  b.com = s.center_of_mass();
  b.offsets.resize(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    b.offsets[i] = s.rest_positions[i] - s.rest_center_of_mass;
    const Vec3& r = b.offsets[i];
    b.inertia_rest += s.masses[i] * (r.squaredNorm() * Mat3::Identity() - r * r.transpose());
  }
  if (s.size() >= 3) {
    try {
      b.R = shape_match(s.rest_positions, s.positions, s.masses).rotation.toRotationMatrix();
    } catch (const Error&) {
      b.R = Mat3::Identity();
    }
  }
  b.update_inertia();
  return b;
}

struct Contact {
  std::size_t index;
  Vec3 normal;
  Vec3 obstacle_velocity;
};

}  // namespace

RigidState RigidState::from_particles(std::vector<Vec3> rest, std::vector<Vec3> positions, std::vector<Vec3> velocities,
                                      std::vector<double> masses) {
  if (rest.size() != positions.size() || rest.size() != velocities.size() || rest.size() != masses.size())
    throw Error("RigidState: array lengths differ");
  RigidState s;
  s.rest_positions = std::move(rest);
  s.positions = std::move(positions);
  s.velocities = std::move(velocities);
  s.masses = std::move(masses);
  double m = 0.0;
  Vec3 c = Vec3::Zero();
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!(s.masses[i] > 0.0)) throw Error("RigidState: masses must be positive");
    m += s.masses[i];
    c += s.masses[i] * s.rest_positions[i];
  }
  s.rest_center_of_mass = m > 0.0 ? Vec3(c / m) : Vec3::Zero();
  return s;
}

double RigidState::total_mass() const {
  double m = 0.0;
  for (double v : masses) m += v;
  return m;
}

Vec3 RigidState::center_of_mass() const {
  Vec3 c = Vec3::Zero();
  double m = 0.0;
  for (std::size_t i = 0; i < size(); ++i) {
    c += masses[i] * positions[i];
    m += masses[i];
  }
  return m > 0.0 ? Vec3(c / m) : Vec3::Zero();
}

Vec3 RigidState::linear_momentum() const {
  Vec3 p = Vec3::Zero();
  for (std::size_t i = 0; i < size(); ++i) p += masses[i] * velocities[i];
  return p;
}

Vec3 RigidState::angular_momentum() const {
  const Vec3 c = center_of_mass();
  Vec3 l = Vec3::Zero();
  for (std::size_t i = 0; i < size(); ++i) l += masses[i] * (positions[i] - c).cross(velocities[i]);
  return l;
}

RigidTransform shape_match(std::span<const Vec3> rest, std::span<const Vec3> current, std::span<const double> masses) {
  const std::size_t n = rest.size();
  if (n < 3 || current.size() != n || masses.size() != n)
    throw Error("shape_match: need at least 3 particles with matching arrays");
  double m = 0.0;
  Vec3 c = Vec3::Zero(), c0 = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    m += masses[i];
    c += masses[i] * current[i];
    c0 += masses[i] * rest[i];
  }
  c /= m;
  c0 /= m;
  Mat3 A = Mat3::Zero();
  for (std::size_t i = 0; i < n; ++i) A += masses[i] * (current[i] - c) * (rest[i] - c0).transpose();
  Eigen::JacobiSVD<Mat3> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(sv[1] > 1e-12 * sv[0])) throw Error("shape_match: degenerate (collinear) particle configuration");
  Mat3 D = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) D(2, 2) = -1.0;
  const Mat3 R = svd.matrixU() * D * svd.matrixV().transpose();
  RigidTransform t;
  t.rotation = Quat(R).normalized();
  if (t.rotation.w() < 0.0) t.rotation.coeffs() *= -1.0;
  t.translation = c - R * c0;
  return t;
}

RigidState rigid_step(const RigidState& state, std::span<const Vec3> forces, double dt) {
  if (!(dt > 0.0)) throw Error("rigid_step: dt must be positive");
  if (forces.size() != state.size()) throw Error("rigid_step: force count differs from particle count");
  RigidState out = state;
  std::vector<Vec3> predicted(state.size());
  for (std::size_t i = 0; i < state.size(); ++i) {
    out.velocities[i] = state.velocities[i] + dt * forces[i] / state.masses[i];
    predicted[i] = state.positions[i] + dt * out.velocities[i];
  }
  bool moving = false;
  for (const auto& v : out.velocities) moving = moving || !v.isZero();
  if (!moving) return out;
  if (state.size() < 3) {
    out.positions = predicted;
    return out;
  }
  const RigidTransform t = shape_match(state.rest_positions, predicted, state.masses);
  const Mat3 R = t.rotation.toRotationMatrix();
  for (std::size_t i = 0; i < state.size(); ++i) {
    out.positions[i] = R * state.rest_positions[i] + t.translation;
    out.velocities[i] = (out.positions[i] - state.positions[i]) / dt;
  }
  return out;
}

RigidState resolve_collisions(const RigidState& state, const Sdf& boundary, double friction,
                              const ContactOptions& options) {
  if (state.size() == 0) return state;
  std::vector<std::size_t> candidates;
  std::vector<double> distance(state.size());
  for (std::size_t i = 0; i < state.size(); ++i) {
    distance[i] = boundary.distance(state.positions[i]);
    if (distance[i] < options.candidate_band) candidates.push_back(i);
  }
  if (candidates.empty()) return state;
  bool touching = false;
  for (auto i : candidates) touching = touching || distance[i] < 0.0;
  if (!touching) return state;

  Body body = make_body(state);
  // Rigid velocity from momentum and angular momentum.
  Vec3 v = state.linear_momentum() / body.mass;
  Vec3 w = body.inv_inertia * state.angular_momentum();

  std::vector<Contact> contacts;
  std::vector<char> in_contact(state.size(), 0);
  auto record = [&](std::size_t i, const SdfSample& smp) {
    if (in_contact[i]) return;
    in_contact[i] = 1;
    contacts.push_back({i, smp.normal, smp.velocity});
  };
  auto rotate = [&](const Vec3& dtheta) {
    const double angle = dtheta.norm();
    if (angle <= 0.0) return;
    body.R = (Eigen::AngleAxisd(angle, dtheta / angle).toRotationMatrix() * body.R).eval();
    body.update_inertia();
  };

  // Each pass pushes the body out at the depth-weighted mean contact point, so
  // a flat landing gets no spurious spin.
  for (int pass = 0; pass < options.position_passes; ++pass) {
    Vec3 point = Vec3::Zero(), normal = Vec3::Zero();
    double weight = 0.0, depth = 0.0;
    for (auto i : candidates) {
      const SdfSample smp = boundary.sample(body.point(i));
      if (smp.distance >= 0.0) continue;
      record(i, smp);
      const double w = -smp.distance;
      point += w * body.point(i);
      normal += w * smp.normal;
      weight += w;
      depth = std::max(depth, w);
    }
    if (weight <= 0.0 || depth <= options.tolerance) break;
    point /= weight;
    if (!(normal.norm() > 0.0)) break;
    normal.normalize();
    const Vec3 r = point - body.com;
    const double dl = depth / body.generalized_inverse_mass(r, normal);
    body.com += dl * normal / body.mass;
    rotate(body.inv_inertia * r.cross(normal) * dl);
  }
  // Residual penetration (rotation coupling or non-candidates) is removed by
  // translating along the deepest contact normal.
  for (int guard = 0; guard < 8; ++guard) {
    double deepest = -options.tolerance;
    std::size_t worst = state.size();
    SdfSample worst_smp;
    for (std::size_t i = 0; i < state.size(); ++i) {
      const SdfSample smp = boundary.sample(body.point(i));
      if (smp.distance < deepest) {
        deepest = smp.distance;
        worst = i;
        worst_smp = smp;
      }
    }
    if (worst == state.size()) break;
    record(worst, worst_smp);
    body.com -= (deepest - 0.1 * options.tolerance) * worst_smp.normal;
  }

  // Velocity passes use the same aggregation, weighted by approach speed.
  for (int pass = 0; pass < options.velocity_passes; ++pass) {
    Vec3 point = Vec3::Zero(), normal = Vec3::Zero(), obstacle = Vec3::Zero();
    double weight = 0.0;
    for (const auto& c : contacts) {
      const Vec3 x = body.point(c.index);
      const double vn = (v + w.cross(x - body.com) - c.obstacle_velocity).dot(c.normal);
      if (vn >= 0.0) continue;
      point += -vn * x;
      normal += -vn * c.normal;
      obstacle += -vn * c.obstacle_velocity;
      weight += -vn;
    }
    if (weight <= 0.0 || !(normal.norm() > 0.0)) break;
    point /= weight;
    obstacle /= weight;
    normal.normalize();
    const Vec3 r = point - body.com;
    const Vec3 rel = v + w.cross(r) - obstacle;
    const double vn = rel.dot(normal);
    if (vn >= 0.0) break;
    const double jn = -vn / body.generalized_inverse_mass(r, normal);
    v += jn * normal / body.mass;
    w += body.inv_inertia * r.cross(normal) * jn;
    if (friction <= 0.0) continue;
    const Vec3 rel2 = v + w.cross(r) - obstacle;
    const Vec3 vt = rel2 - rel2.dot(normal) * normal;
    const double speed = vt.norm();
    if (speed < 1e-12) continue;
    const Vec3 t = vt / speed;
    const double jt = std::min(speed / body.generalized_inverse_mass(r, t), friction * jn);
    v -= jt * t / body.mass;
    w -= body.inv_inertia * r.cross(t) * jt;
  }

  RigidState out = state;
  for (std::size_t i = 0; i < state.size(); ++i) {
    out.positions[i] = body.point(i);
    out.velocities[i] = v + w.cross(out.positions[i] - body.com);
  }
  return out;
}

}  // namespace hybridsim
