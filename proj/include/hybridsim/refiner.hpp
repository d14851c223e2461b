#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "hybridsim/image_io.hpp"
#include "hybridsim/render.hpp"
#include "hybridsim/simulator.hpp"

namespace hybridsim {

struct RefineOptions {
  // Initial step sizes of the largest parameter move per group. A group's step
  // grows by step_growth after a full accepted step and takes the backtracked
  // length otherwise.
  double position_rate = 2e-3;   // m
  double color_rate = 2e-2;
  double step_growth = 1.2;
  double max_position_step = 2e-2;  // m
  double max_color_step = 0.1;
  int max_iterations = 60;       // per frame
  double edge_weight = 0.1;      // weight of sum_edges (|p_i - p_j| - rest_ij)^2
  double tolerance = 1e-7;       // stop when the relative loss decrease falls below this
  int backtracking = 8;          // step halvings tried before giving up
  // Residuals smaller than this (float quantization of stored video) count as 0.
  double residual_deadzone = 1e-6;
  // Per-pixel loss is quadratic below this residual and |d| - delta / 2 above.
  double huber_delta = 1e-3;
  bool optimize_positions = true;
  // Position steps along the camera axis. Off by default: depth is barely
  // observable in one frame and depth moves reorder overlapping splats.
  bool optimize_depth = false;
  bool optimize_colors = true;
  bool optimize_background = true;  // background surfel colors and the fill color
  RenderOptions render;

  void validate() const;
};

// Mean (Huber-smoothed) absolute error over pixels and channels plus the edge
// regularizer (rest lengths taken from `rest`).
double refine_loss(const Scene& scene, const Scene& rest, const Image& target, const Camera& camera,
                   const RefineOptions& options);

struct FrameRefinement {
  Scene scene;
  std::vector<double> losses;  // accepted losses, starting with the initial one
};

FrameRefinement refine_frame(const Scene& coarse, const Image& target, const Camera& camera,
                             const RefineOptions& options = {});

struct RefinedTrajectory {
  CoarseTrajectory trajectory;
  std::vector<std::vector<double>> losses;  // per frame; frame 0 is empty
};

// Frame 0 is returned untouched; every later frame is refined independently.
RefinedTrajectory photometric_refine(const CoarseTrajectory& trajectory, const Video& video, const Camera& camera,
                                     const RefineOptions& options = {});

// frame,iteration,loss rows.
void write_loss_csv(const std::filesystem::path& path, const std::vector<std::vector<double>>& losses);

struct GradientCheck {
  double position_error = 0.0;
  double color_error = 0.0;
  double max_error() const { return std::max(position_error, color_error); }
};

// Compares rasterize_gradients against central differences of
// sum(adjoint * rgb) for a seeded random adjoint over object positions, object
// colors and background colors. Relative error is
// |a - n| / max(|a|, |n|, 1e-3 * largest |a| of the group).
GradientCheck check_gradients(const Scene& scene, const Camera& camera, double epsilon, std::uint64_t seed = 0,
                              bool zero_adjoint = false, const RenderOptions& options = {});

}  // namespace hybridsim
