#include <algorithm>
#include <random>

#include "doctest.h"
#include "hybridsim/math.hpp"
#include "hybridsim/sdf.hpp"
#include "hybridsim/spatial_grid.hpp"

using namespace hybridsim;

namespace {

Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Quat q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

}  // namespace

TEST_CASE("polar rotation recovers R from R * S") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Mat3 R = random_rotation(rng);
    const Mat3 Q = random_rotation(rng);
    const Mat3 S = Q * Vec3(u(rng), u(rng), u(rng)).asDiagonal() * Q.transpose();
    const Mat3 got = polar_rotation(R * S);
    CHECK((got - R).norm() < 1e-9);
    CHECK(got.determinant() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("polar rotation of an inverted matrix is still proper") {
  Mat3 F = Mat3::Identity();
  F(2, 2) = -0.5;
  const Mat3 R = polar_rotation(F);
  CHECK(R.determinant() == doctest::Approx(1.0));
  CHECK((R * R.transpose() - Mat3::Identity()).norm() < 1e-12);
}

TEST_CASE("proper_rotation_svd handles coplanar covariance") {
  std::mt19937_64 rng(2);
  const Mat3 R = random_rotation(rng);
  // Covariance of a planar point set rotated by R: rank 2.
  Mat3 A = Mat3::Zero();
  const Vec3 pts[] = {{1, 0, 0}, {0, 1, 0}, {-1, 0, 0}, {0, -2, 0}};
  for (const auto& p : pts) A += (R * p) * p.transpose();
  CHECK((proper_rotation_svd(A) - R).norm() < 1e-9);
}

TEST_CASE("rotation vector update matches angle-axis composition") {
  const Quat q(Eigen::AngleAxisd(0.3, Vec3::UnitY()));
  const Vec3 w(0.0, 0.0, 0.2);
  const Quat expect = Quat(Eigen::AngleAxisd(0.2, Vec3::UnitZ())) * q;
  CHECK(apply_rotation_vector(q, w).angularDistance(expect) < 1e-12);
}

TEST_CASE("quat_from_normal maps +z to the normal") {
  for (const Vec3 n : {Vec3(0, 0, 1), Vec3(0, 0, -1), Vec3(1, 2, 3).normalized(), Vec3(1, 0, 0)}) {
    const Quat q = quat_from_normal(n);
    CHECK((q * Vec3::UnitZ() - n).norm() < 1e-12);
    CHECK(q.norm() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("spatial grid k-nearest matches brute force") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vec3> pts(500);
  for (auto& p : pts) p = Vec3(u(rng), u(rng), u(rng));
  const SpatialGrid grid(pts, 0.2);
  for (int q = 0; q < 50; ++q) {
    const Vec3 x(u(rng), u(rng), u(rng));
    std::vector<std::uint32_t> idx(pts.size());
    for (std::uint32_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) {
      const double da = (pts[a] - x).squaredNorm(), db = (pts[b] - x).squaredNorm();
      return da != db ? da < db : a < b;
    });
    const auto got = grid.nearest(x, 10);
    REQUIRE(got.size() == 10);
    for (int k = 0; k < 10; ++k) CHECK(got[k] == idx[k]);
  }
}

TEST_CASE("spatial grid radius query matches brute force") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec3> pts(300);
  for (auto& p : pts) p = Vec3(u(rng), u(rng), u(rng));
  const SpatialGrid grid(pts, 0.1);
  const Vec3 x(0.5, 0.5, 0.5);
  std::size_t count = 0;
  grid.for_each_within(x, 0.25, [&](std::uint32_t, double) { ++count; });
  std::size_t brute = 0;
  for (const auto& p : pts) brute += (p - x).norm() <= 0.25 ? 1 : 0;
  CHECK(count == brute);
}

TEST_CASE("grid SDF of a sampled plane matches the analytic plane") {
  std::vector<Vec3> pos, nrm;
  for (int i = -20; i <= 20; ++i)
    for (int j = -20; j <= 20; ++j) {
      pos.emplace_back(i * 0.05, j * 0.05, 0.0);
      nrm.push_back(Vec3::UnitZ());
    }
  const GridSdf sdf = GridSdf::from_oriented_points(pos, nrm, Vec3(-1.2, -1.2, -0.5), Vec3(1.2, 1.2, 0.5), 96);
  const PlaneSdf plane(Vec3::Zero(), Vec3::UnitZ());
  for (double z : {-0.2, -0.05, 0.0, 0.03, 0.2}) {
    const Vec3 x(0.13, -0.27, z);
    CHECK(std::abs(sdf.distance(x) - z) < 2e-3);
    CHECK(sdf.sample(x).normal.dot(Vec3::UnitZ()) > 0.99);
  }
}

TEST_CASE("particle set SDF is distance to nearest particle minus radius") {
  std::vector<Vec3> pts = {{0, 0, 0}, {1, 0, 0}};
  std::vector<Vec3> vel = {{1, 0, 0}, {0, 2, 0}};
  const ParticleSetSdf sdf(pts, vel, 0.1);
  const SdfSample s = sdf.sample(Vec3(0.8, 0.0, 0.0));
  CHECK(s.distance == doctest::Approx(0.1));
  CHECK((s.normal - Vec3(-1, 0, 0)).norm() < 1e-12);
  CHECK((s.velocity - Vec3(0, 2, 0)).norm() < 1e-12);
}

TEST_CASE("composite SDF takes the minimum") {
  const PlaneSdf a(Vec3::Zero(), Vec3::UnitZ());
  const PlaneSdf b(Vec3(0, 0, 1), -Vec3::UnitZ());
  CompositeSdf c;
  c.add(&a);
  c.add(&b);
  CHECK(c.distance(Vec3(0, 0, 0.3)) == doctest::Approx(0.3));
  CHECK(c.distance(Vec3(0, 0, 0.8)) == doctest::Approx(0.2));
  CHECK(c.sample(Vec3(0, 0, 0.8)).normal.z() == doctest::Approx(-1.0));
}
