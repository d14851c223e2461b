#pragma once

#include <span>
#include <vector>

#include "hybridsim/image_io.hpp"
#include "hybridsim/scene.hpp"
#include "hybridsim/simulator.hpp"

namespace hybridsim {

// Surfels are addressed globally: background surfels first, then each
// object's surfels in object order.
std::size_t total_surfel_count(const Scene& scene);

struct FrameBundle {
  Image rgb;    // 3 channels, [0, 1]
  Image flow;   // 2 channels, pixels, forward to the next frame
  Image mask;   // 1 channel, {0, 1}
  Image depth;  // 1 channel, m; 0 where nothing is drawn
};

struct RenderOptions {
  // Screen-space footprint floor (pixels), added in quadrature to the
  // projected surfel scale so distant surfels still cover pixel centres.
  double min_sigma = 0.3;
  double near_plane = 1e-3;  // m
  // Footprint contributions below this opacity are not drawn.
  double min_alpha = 0.0;
  // Splats are sorted by round(depth / depth_bucket), then by surfel index,
  // so nearly coplanar surfels keep their order under small perturbations.
  double depth_bucket = 1e-4;  // m
  // When non-empty (one key per global surfel), splats are sorted by these keys
  // instead of their depth. Lets an optimizer hold the visibility order fixed.
  std::vector<double> sort_keys;
};

struct Raster {
  int width = 0, height = 0;
  std::vector<double> rgb;           // H * W * 3
  std::vector<double> depth;         // H * W
  std::vector<double> object_alpha;  // H * W, accumulated alpha of object surfels
  std::vector<double> flow;          // H * W * 2, only when a next frame is given
  std::vector<double> weight_sum;    // H * W, sum of compositing weights
};

// Front-to-back compositing of isotropic Gaussian splats with
// footprint exp(-q/2) (1 - q/16)^2 for q = |d|^2 / sigma^2 < 16. Pixels are
// finished over scene.fill_color. `next` (optional) supplies the surfel
// positions one frame later for the flow channel.
Raster render_raster(const Scene& scene, const Camera& camera, const Scene* next = nullptr,
                     const RenderOptions& options = {});

FrameBundle rasterize(const Scene& scene, const Camera& camera, const RenderOptions& options = {});
// Forward flow from `scene` to `next`; throws if the surfel counts differ.
Image render_flow(const Scene& scene, const Scene& next, const Camera& camera, const RenderOptions& options = {});
// 1 where the accumulated object alpha is at least 0.5.
Image render_mask(const Scene& scene, const Camera& camera, const RenderOptions& options = {});
FrameBundle render_frame(const Scene& scene, const Scene* next, const Camera& camera,
                         const RenderOptions& options = {});

struct RenderedTrajectory {
  Video rgb;    // T + 1 frames
  Video flow;   // T frames
  Video mask;   // T + 1 frames
};
RenderedTrajectory render_trajectory(const CoarseTrajectory& trajectory, const Camera& camera,
                                     const RenderOptions& options = {});

// Gradients of sum(adjoint * rgb) with respect to surfel positions and colors
// (global surfel order) and the fill color.
struct RasterGradients {
  std::vector<Vec3> position;
  std::vector<Vec3> color;
  Vec3 fill = Vec3::Zero();
};
RasterGradients rasterize_gradients(const Scene& scene, const Camera& camera, std::span<const double> adjoint_rgb,
                                    const RenderOptions& options = {});
RasterGradients rasterize_gradients(const Scene& scene, const Camera& camera, const Image& adjoint_rgb,
                                    const RenderOptions& options = {});

}  // namespace hybridsim
