#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "hybridsim/scene.hpp"
#include "hybridsim/simulator.hpp"

namespace hybridsim {

// Raw float32 table: 16-byte header ("WPLY", u32 version, u32 rows, u32 width)
// followed by rows * width little-endian floats.
struct WplyTable {
  std::uint32_t rows = 0;
  std::uint32_t width = 0;
  std::vector<float> data;
};

inline constexpr std::uint32_t kWplyVersion = 1;

void write_wply(const std::filesystem::path& path, const WplyTable& table);
WplyTable read_wply(const std::filesystem::path& path);

// Surfel rows (width 17): object id (-1 background), position, quaternion
// (w, x, y, z), scale (2), opacity, color, velocity.
WplyTable surfel_table(const Scene& scene);
// Particle rows (width 8): object id, position, velocity, mass.
WplyTable particle_table(const Scene& scene);

// Writes scene.json (frame 0), trajectory.json (times, stride) and per-frame
// frame_NNNN_surfels.wply / frame_NNNN_particles.wply.
void save_trajectory(const std::filesystem::path& dir, const CoarseTrajectory& trajectory);
// Rebuilds frame 0 from scene.json and applies the per-frame dynamic state.
// Values round-trip through float32.
CoarseTrajectory load_trajectory(const std::filesystem::path& dir);

}  // namespace hybridsim
