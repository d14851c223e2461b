#pragma once

#include <cstdint>

#include "hybridsim/types.hpp"

namespace hybridsim {

// Rotation factor R of the polar decomposition F = R S (S symmetric positive
// semi-definite), with det R = +1 even when det F <= 0.
Mat3 polar_rotation(const Mat3& F);

// Best-fit proper rotation of a 3x3 covariance-like matrix via SVD.
// Robust for rank-2 inputs (coplanar point sets).
Mat3 proper_rotation_svd(const Mat3& A);

// Axis-angle vector (small rotation) applied to a quaternion: q' = exp(w) q.
Quat apply_rotation_vector(const Quat& q, const Vec3& w);

Quat quat_from_normal(const Vec3& normal);

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value);
// Uniform double in [0, 1) derived from a 64-bit hash.
double hash_to_unit(std::uint64_t h);

constexpr double kPi = 3.14159265358979323846;

}  // namespace hybridsim
