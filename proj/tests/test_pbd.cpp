#include <cmath>
#include <random>

#include "doctest.h"
#include "hybridsim/math.hpp"
#include "hybridsim/pbd.hpp"
#include "hybridsim/procedural.hpp"

using namespace hybridsim;

namespace {

std::vector<Vec3> compressed_blob(std::uint64_t seed, double spacing, double squeeze) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> j(-0.15, 0.15);
  std::vector<Vec3> x;
  for (int a = 0; a < 6; ++a)
    for (int b = 0; b < 6; ++b)
      for (int c = 0; c < 6; ++c) x.push_back(squeeze * spacing * Vec3(a + j(rng), b + j(rng), c + j(rng)));
  return x;
}

double total_density_residual(const std::vector<Vec3>& x, double rho0, double h) {
  const auto nb = find_neighbors(x, h);
  double r = 0.0;
  for (double c : density_constraints(x, nb, rho0, h)) r += c * c;
  return std::sqrt(r);
}

}  // namespace

TEST_CASE("stretch constraint with zero compliance restores the rest length") {
  double lambda = 0.0;
  const Vec3 a(0, 0, 0), b(1.5, 0, 0);
  auto [da, db] = solve_stretch(a, b, 1.0, 1.0, 3.0, 0.0, 1e-3, lambda);
  CHECK(((b + db) - (a + da)).norm() == doctest::Approx(1.0).epsilon(1e-14));
  // Mass-weighted split conserves the weighted centre.
  CHECK((da / 1.0 + db / 3.0).norm() < 1e-14);
}

TEST_CASE("compliant stretch constraint moves partially") {
  double lambda = 0.0;
  const double alpha = 1e-5 / (1e-2 * 1e-2);
  auto [da, db] = solve_stretch(Vec3::Zero(), Vec3(2, 0, 0), 1.0, 1.0, 1.0, 1e-5, 1e-2, lambda);
  // dlambda = -C / (w_i + w_j + alpha)
  CHECK(lambda == doctest::Approx(-1.0 / (2.0 + alpha)));
  CHECK((db - da).x() == doctest::Approx(2.0 * lambda));
}

TEST_CASE("dihedral angle of known configurations") {
  const Vec3 x0(0, 0, 0), x1(1, 0, 0), x2(0.5, 1, 0);
  CHECK(dihedral_angle(x0, x1, x2, Vec3(0.5, -1, 0)) == doctest::Approx(0.0));
  const double a = dihedral_angle(x0, x1, x2, Vec3(0.5, -1, 1));
  CHECK(std::abs(a) == doctest::Approx(kPi / 4));
  CHECK(dihedral_angle(x0, x1, x2, Vec3(0.5, -1, -1)) == doctest::Approx(-a));
}

TEST_CASE("dihedral angle gradient matches central differences") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (int trial = 0; trial < 50; ++trial) {
    std::array<Vec3, 4> x = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0.5, 1, 0), Vec3(0.5, -1, 0.4)};
    for (auto& p : x) p += Vec3(u(rng), u(rng), u(rng));
    const auto g = dihedral_angle_gradient(x[0], x[1], x[2], x[3]);
    const double eps = 1e-6;
    for (int k = 0; k < 4; ++k)
      for (int d = 0; d < 3; ++d) {
        auto xp = x, xm = x;
        xp[k][d] += eps;
        xm[k][d] -= eps;
        const double fd = (dihedral_angle(xp[0], xp[1], xp[2], xp[3]) - dihedral_angle(xm[0], xm[1], xm[2], xm[3])) /
                          (2 * eps);
        CHECK(std::abs(g[k][d] - fd) < 1e-6);
      }
  }
}

TEST_CASE("bending solve reduces the angle error") {
  std::array<Vec3, 4> x = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0.5, 1, 0), Vec3(0.5, -1, 0.5)};
  const std::array<double, 4> w = {1, 1, 1, 1};
  double lambda = 0.0;
  const double before = std::abs(dihedral_angle(x[0], x[1], x[2], x[3]));
  const auto d = solve_bend(x, w, 0.0, 0.0, 1e-2, lambda);
  for (int k = 0; k < 4; ++k) x[k] += d[k];
  CHECK(std::abs(dihedral_angle(x[0], x[1], x[2], x[3])) < 0.2 * before);
}

TEST_CASE("kernels") {
  const double h = 0.02;
  CHECK(poly6(h, h) == 0.0);
  CHECK(poly6(0.0, h) > poly6(0.5 * h, h));
  // Poly6 integrates to one over its support.
  double integral = 0.0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    const double r = (i + 0.5) * h / n;
    integral += 4.0 * kPi * r * r * poly6(r, h) * h / n;
  }
  CHECK(integral == doctest::Approx(1.0).epsilon(1e-4));
  const Vec3 g = spiky_gradient(Vec3(0.5 * h, 0, 0), h);
  CHECK(g.x() < 0.0);
  CHECK(spiky_gradient(Vec3::Zero(), h).isZero());
}

TEST_CASE("neighbor search is symmetric and matches brute force") {
  const auto x = compressed_blob(1, 0.01, 1.0);
  const auto nb = find_neighbors(x, 0.02);
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::size_t brute = 0;
    for (std::size_t j = 0; j < x.size(); ++j) brute += j != i && (x[i] - x[j]).norm() <= 0.02 ? 1 : 0;
    CHECK(nb[i].size() == brute);
  }
}

TEST_CASE("density solve lowers the residual monotonically over the first iterations") {
  const double spacing = 0.01, h = 2 * spacing;
  const double rho0 = lattice_rest_density(spacing, h);
  int monotone = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto x = compressed_blob(seed, spacing, 0.8);
    std::vector<double> r = {total_density_residual(x, rho0, h)};
    for (int it = 0; it < 3; ++it) {
      const auto nb = find_neighbors(x, h);
      const auto dp = solve_density(x, nb, rho0, h);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += dp[i];
      r.push_back(total_density_residual(x, rho0, h));
    }
    monotone += r[1] < r[0] && r[2] < r[1] && r[3] < r[2] ? 1 : 0;
  }
  CHECK(monotone == 50);
}

TEST_CASE("XSPH preserves the mean velocity and does not increase variance") {
  const auto x = compressed_blob(3, 0.01, 1.0);
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n;
  std::vector<Vec3> v(x.size());
  for (auto& vi : v) vi = Vec3(n(rng), n(rng), n(rng));
  const auto nb = find_neighbors(x, 0.02);
  const auto out = xsph_smooth(x, v, nb, 0.02, 0.1);
  Vec3 m0 = Vec3::Zero(), m1 = Vec3::Zero();
  for (std::size_t i = 0; i < x.size(); ++i) {
    m0 += v[i];
    m1 += out[i];
  }
  CHECK((m0 - m1).norm() < 1e-10);
  double var0 = 0.0, var1 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    var0 += (v[i] - m0 / x.size()).squaredNorm();
    var1 += (out[i] - m1 / x.size()).squaredNorm();
  }
  CHECK(var1 <= var0);
}

TEST_CASE("cloth state builds stretch and bending constraints") {
  PrimitiveSpec prim;
  prim.shape = "cloth";
  prim.rows = 4;
  prim.cols = 5;
  prim.spacing = 0.02;
  prim.pinned = {0};
  const ObjectSurfels obj = fill_interior(make_object(prim, 0.01), 0.01);
  const PbdState s = make_cloth_state(obj);
  std::size_t stretch = 0, bend = 0;
  for (const auto& c : s.constraints) (c.kind == ConstraintKind::stretch ? stretch : bend) += 1;
  CHECK(stretch == edge_count(obj.edges));
  CHECK(bend > 0);
  CHECK(s.inv_masses[0] == 0.0);
  CHECK(max_stretch_residual(s) < 1e-12);
}

TEST_CASE("pinned hanging cloth keeps its pin and stays near inextensible") {
  PrimitiveSpec prim;
  prim.shape = "cloth";
  prim.rows = 6;
  prim.cols = 6;
  prim.spacing = 0.02;
  prim.pinned = {0, 5};
  prim.center = Vec3(0, 0, 0.5);
  const ObjectSurfels obj = fill_interior(make_object(prim, 0.01), 0.01);
  PbdState s = make_cloth_state(obj);
  const Vec3 pin = s.positions[0];
  std::vector<Vec3> g(s.size(), Vec3(0, 0, -9.8));
  for (int k = 0; k < 50; ++k) s = pbd_step(s, g, nullptr, 1e-2, 10);
  CHECK(s.positions[0] == pin);
  CHECK(max_stretch_residual(s) < 0.05);
}

TEST_CASE("pbd step rejects bad arguments") {
  PbdState s;
  s.positions = {Vec3::Zero()};
  s.predicted = s.positions;
  s.velocities = {Vec3::Zero()};
  s.inv_masses = {1.0};
  std::vector<Vec3> g(1, Vec3::Zero());
  CHECK_THROWS_AS(pbd_step(s, g, nullptr, 0.0, 1), Error);
  CHECK_THROWS_AS(pbd_step(s, g, nullptr, 1e-2, 0), Error);
  CHECK_THROWS_AS(pbd_step(s, {}, nullptr, 1e-2, 1), Error);
}

TEST_CASE("rigid stretch splits the correction symmetrically or onto the free end") {
  double lambda = 0.0;
  auto [a, b] = solve_stretch(Vec3::Zero(), Vec3(2, 0, 0), 1.0, 1.0, 1.0, 0.0, 1e-3, lambda);
  CHECK((a - Vec3(0.5, 0, 0)).norm() < 1e-15);
  CHECK((b - Vec3(-0.5, 0, 0)).norm() < 1e-15);
  lambda = 0.0;
  auto [c, d] = solve_stretch(Vec3::Zero(), Vec3(2, 0, 0), 1.0, 0.0, 1.0, 0.0, 1e-3, lambda);
  CHECK(c.isZero());
  CHECK((d - Vec3(-1, 0, 0)).norm() < 1e-15);
}

TEST_CASE("XPBD stretch at the default compliance matches the hand formula") {
  // alpha~ = 1e-7 / 1e-6 = 0.1, C = 1, w = 1 + 1: dlambda = -1 / 2.1, each end moves 1 / 2.1.
  double lambda = 0.0;
  auto [a, b] = solve_stretch(Vec3::Zero(), Vec3(2, 0, 0), 1.0, 1.0, 1.0, 1e-7, 1e-3, lambda);
  CHECK(lambda == doctest::Approx(-1.0 / 2.1));
  const double residual = ((Vec3(2, 0, 0) + b) - a).norm() - 1.0;
  CHECK(residual == doctest::Approx(1.0 - 2.0 / 2.1));
}

TEST_CASE("density solve leaves a rest lattice alone and separates a close pair") {
  const double spacing = 0.01, h = 0.02;
  const double rho0 = lattice_rest_density(spacing, h);
  std::vector<Vec3> grid;
  for (int a = 0; a < 6; ++a)
    for (int b = 0; b < 6; ++b)
      for (int c = 0; c < 6; ++c) grid.push_back(spacing * Vec3(a, b, c));
  const auto dp = solve_density(grid, find_neighbors(grid, h), rho0, h);
  double worst = 0.0;
  for (const auto& d : dp) worst = std::max(worst, d.norm());
  CHECK(worst < 1e-8);

  const std::vector<Vec3> pair = {Vec3::Zero(), Vec3(0.001, 0, 0)};
  const double rho_pair = 1.5 * poly6(0.0, h);  // below the pair density
  const auto dq = solve_density(pair, find_neighbors(pair, h), rho_pair, h);
  CHECK(dq[0].x() < 0.0);
  CHECK(dq[1].x() > 0.0);
  CHECK(std::abs(dq[0].y()) + std::abs(dq[0].z()) < 1e-15);
}

TEST_CASE("pinned cloth without gravity does not move") {
  PrimitiveSpec prim;
  prim.shape = "cloth";
  prim.rows = 5;
  prim.cols = 5;
  prim.spacing = 0.02;
  prim.pinned = {0, 4};
  const ObjectSurfels obj = fill_interior(make_object(prim, 0.01), 0.01);
  PbdState s = make_cloth_state(obj);
  const auto start = s.positions;
  const std::vector<Vec3> zero(s.size(), Vec3::Zero());
  for (int k = 0; k < 20; ++k) s = pbd_step(s, zero, nullptr, 1e-2, 10);
  for (std::size_t i = 0; i < s.size(); ++i) CHECK((s.positions[i] - start[i]).norm() < 1e-12);
}
