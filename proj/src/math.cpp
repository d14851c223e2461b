#include "hybridsim/math.hpp"

#include <cmath>

#include <Eigen/SVD>

namespace hybridsim {

Mat3 proper_rotation_svd(const Mat3& A) {
  Eigen::JacobiSVD<Mat3> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 U = svd.matrixU();
  const Mat3 V = svd.matrixV();
  Mat3 D = Mat3::Identity();
  D(2, 2) = (U * V.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return U * D * V.transpose();
}

Mat3 polar_rotation(const Mat3& F) {
  // Scaled Newton iteration (Higham); converges quadratically for det F > 0.
  if (!(F.determinant() > 1e-12 * std::max(1.0, F.squaredNorm() * F.norm()))) {
    return proper_rotation_svd(F);
  }
  Mat3 X = F;
  for (int it = 0; it < 32; ++it) {
    const double det = X.determinant();
    const double zeta = std::pow(std::abs(det), -1.0 / 3.0);
    const Mat3 Y = zeta * X;
    const Mat3 next = 0.5 * (Y + Y.inverse().transpose());
    const double delta = (next - X).norm();
    X = next;
    if (delta < 1e-15) break;
  }
  // One unscaled step settles the last ulps once X is orthogonal to working precision.
  X = 0.5 * (X + X.inverse().transpose());
  return X;
}

Quat apply_rotation_vector(const Quat& q, const Vec3& w) {
  const double angle = w.norm();
  if (angle < 1e-300) return q;
  const Quat dq(Eigen::AngleAxisd(angle, w / angle));
  return (dq * q).normalized();
}

Quat quat_from_normal(const Vec3& normal) {
  const Vec3 n = normal.normalized();
  return Quat::FromTwoVectors(Vec3::UnitZ(), n).normalized();
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value) {
  return splitmix64(seed ^ (splitmix64(value) + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2)));
}

double hash_to_unit(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

}  // namespace hybridsim
