#include "hybridsim/render.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "hybridsim/parallel.hpp"

namespace hybridsim {

namespace {

constexpr int kTile = 16;
constexpr double kCutoff = 16.0;  // q cutoff, i.e. 4 sigma

double footprint(double q) {
  const double t = 1.0 - q / kCutoff;
  return std::exp(-0.5 * q) * t * t;
}

double footprint_derivative(double q) {
  const double t = 1.0 - q / kCutoff;
  return std::exp(-0.5 * q) * (-0.5 * t * t - 2.0 * t / kCutoff);
}

struct Splat {
  std::size_t id = 0;
  bool object = false;
  Vec3 cam = Vec3::Zero();
  double mx = 0.0, my = 0.0;
  double sigma = 0.0;  // projected surfel scale
  double s = 0.0;      // effective footprint scale
  double opacity = 0.0;
  Vec3 color = Vec3::Zero();
  Vec2 flow = Vec2::Zero();
  double order = 0.0;  // sort key
};

struct SurfelRef {
  const Surfel* surfel;
  bool object;
};

std::vector<SurfelRef> gather(const Scene& scene) {
  std::vector<SurfelRef> out;
  out.reserve(total_surfel_count(scene));
  for (const auto& s : scene.background) out.push_back({&s, false});
  for (const auto& obj : scene.objects)
    for (const auto& s : obj.surfels) out.push_back({&s, true});
  return out;
}

struct Prepared {
  std::vector<Splat> splats;                  // sorted front to back
  std::vector<std::vector<std::uint32_t>> tiles;
  int tiles_x = 0, tiles_y = 0;
};

Prepared prepare(const Scene& scene, const Camera& camera, const Scene* next, const RenderOptions& options) {
  const auto refs = gather(scene);
  std::vector<SurfelRef> next_refs;
  if (next) {
    next_refs = gather(*next);
    if (next_refs.size() != refs.size()) throw Error("render_flow: surfel counts differ between frames");
  }
  Prepared out;
  const double W = camera.width, H = camera.height;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const Surfel& sf = *refs[i].surfel;
    Splat sp;
    sp.id = i;
    sp.object = refs[i].object;
    sp.cam = camera.to_camera(sf.position);
    if (!(sp.cam.z() > options.near_plane)) continue;
    const Vec2 m = camera.project_camera(sp.cam);
    sp.mx = m.x();
    sp.my = m.y();
    sp.sigma = camera.fx * sf.radius() / sp.cam.z();
    sp.s = std::sqrt(sp.sigma * sp.sigma + options.min_sigma * options.min_sigma);
    if (!(sp.s > 0.0)) continue;
    const double reach = 4.0 * sp.s;
    if (sp.mx + reach < -0.5 || sp.mx - reach > W - 0.5 || sp.my + reach < -0.5 || sp.my - reach > H - 0.5) continue;
    sp.opacity = sf.opacity;
    sp.color = sf.color;
    if (next) {
      const Vec3 c2 = camera.to_camera(next_refs[i].surfel->position);
      if (c2.z() > options.near_plane) sp.flow = camera.project_camera(c2) - m;
    }
    out.splats.push_back(sp);
  }
  if (!options.sort_keys.empty()) {
    if (options.sort_keys.size() != refs.size()) throw Error("render: sort_keys must have one entry per surfel");
    for (auto& sp : out.splats) sp.order = options.sort_keys[sp.id];
  } else if (options.depth_bucket > 0.0)
    for (auto& sp : out.splats) sp.order = std::round(sp.cam.z() / options.depth_bucket);
  else
    for (auto& sp : out.splats) sp.order = sp.cam.z();
  std::sort(out.splats.begin(), out.splats.end(), [](const Splat& a, const Splat& b) {
    return a.order != b.order ? a.order < b.order : a.id < b.id;
  });
  out.tiles_x = (camera.width + kTile - 1) / kTile;
  out.tiles_y = (camera.height + kTile - 1) / kTile;
  out.tiles.resize(static_cast<std::size_t>(out.tiles_x) * out.tiles_y);
  for (std::size_t k = 0; k < out.splats.size(); ++k) {
    const Splat& sp = out.splats[k];
    const double reach = 4.0 * sp.s;
    const int x0 = std::max(0, static_cast<int>(std::floor(sp.mx - reach)));
    const int x1 = std::min(camera.width - 1, static_cast<int>(std::ceil(sp.mx + reach)));
    const int y0 = std::max(0, static_cast<int>(std::floor(sp.my - reach)));
    const int y1 = std::min(camera.height - 1, static_cast<int>(std::ceil(sp.my + reach)));
    if (x0 > x1 || y0 > y1) continue;
    for (int ty = y0 / kTile; ty <= y1 / kTile; ++ty)
      for (int tx = x0 / kTile; tx <= x1 / kTile; ++tx)
        out.tiles[static_cast<std::size_t>(ty) * out.tiles_x + tx].push_back(static_cast<std::uint32_t>(k));
  }
  return out;
}

// Calls visit(k, alpha, transmittance, q) for every splat contributing to the
// pixel, front to back, and returns the final transmittance.
template <class Visit>
double composite_pixel(const Prepared& prep, const std::vector<std::uint32_t>& list, int x, int y,
                       const RenderOptions& options, Visit&& visit) {
  double T = 1.0;
  for (auto k : list) {
    const Splat& sp = prep.splats[k];
    const double dx = x - sp.mx, dy = y - sp.my;
    const double q = (dx * dx + dy * dy) / (sp.s * sp.s);
    if (q >= kCutoff) continue;
    const double a = sp.opacity * footprint(q);
    if (a <= options.min_alpha) continue;
    visit(k, a, T, q);
    T *= 1.0 - a;
  }
  return T;
}

template <class Body>
void for_each_tile(const Prepared& prep, const Camera& camera, Body&& body) {
  const std::size_t n = prep.tiles.size();
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t t = begin; t < end; ++t) {
      const int tx = static_cast<int>(t % prep.tiles_x), ty = static_cast<int>(t / prep.tiles_x);
      const int x1 = std::min(camera.width, (tx + 1) * kTile), y1 = std::min(camera.height, (ty + 1) * kTile);
      for (int y = ty * kTile; y < y1; ++y)
        for (int x = tx * kTile; x < x1; ++x) body(t, x, y);
    }
  });
}

Image to_image(const std::vector<double>& v, int w, int h, int c) {
  Image img(w, h, c);
  for (std::size_t i = 0; i < v.size(); ++i) img.data[i] = static_cast<float>(v[i]);
  return img;
}

}  // namespace

std::size_t total_surfel_count(const Scene& scene) {
  std::size_t n = scene.background.size();
  for (const auto& obj : scene.objects) n += obj.surfels.size();
  return n;
}

Raster render_raster(const Scene& scene, const Camera& camera, const Scene* next, const RenderOptions& options) {
  if (camera.width <= 0 || camera.height <= 0) throw Error("render: camera has no pixels");
  const Prepared prep = prepare(scene, camera, next, options);
  Raster r;
  r.width = camera.width;
  r.height = camera.height;
  const std::size_t npix = static_cast<std::size_t>(r.width) * r.height;
  r.rgb.assign(npix * 3, 0.0);
  r.depth.assign(npix, 0.0);
  r.object_alpha.assign(npix, 0.0);
  r.weight_sum.assign(npix, 0.0);
  if (next) r.flow.assign(npix * 2, 0.0);
  for_each_tile(prep, camera, [&](std::size_t t, int x, int y) {
    const std::size_t p = static_cast<std::size_t>(y) * r.width + x;
    Vec3 c = Vec3::Zero();
    Vec2 f = Vec2::Zero();
    double depth = 0.0, obj = 0.0, wsum = 0.0;
    const double T = composite_pixel(prep, prep.tiles[t], x, y, options, [&](std::uint32_t k, double a, double Ti, double) {
      const Splat& sp = prep.splats[k];
      const double w = a * Ti;
      c += w * sp.color;
      depth += w * sp.cam.z();
      wsum += w;
      if (sp.object) obj += w;
      f += w * sp.flow;
    });
    c += T * scene.fill_color;
    for (int ch = 0; ch < 3; ++ch) r.rgb[p * 3 + ch] = c[ch];
    r.depth[p] = wsum > 0.0 ? depth / wsum : 0.0;
    r.object_alpha[p] = obj;
    r.weight_sum[p] = wsum;
    if (next) {
      r.flow[p * 2] = f.x();
      r.flow[p * 2 + 1] = f.y();
    }
  });
  return r;
}

FrameBundle render_frame(const Scene& scene, const Scene* next, const Camera& camera, const RenderOptions& options) {
  const Raster r = render_raster(scene, camera, next, options);
  FrameBundle b;
  b.rgb = to_image(r.rgb, r.width, r.height, 3);
  b.depth = to_image(r.depth, r.width, r.height, 1);
  b.mask = Image(r.width, r.height, 1);
  for (std::size_t p = 0; p < r.object_alpha.size(); ++p) b.mask.data[p] = r.object_alpha[p] >= 0.5 ? 1.0f : 0.0f;
  b.flow = next ? to_image(r.flow, r.width, r.height, 2) : Image(r.width, r.height, 2);
  return b;
}

FrameBundle rasterize(const Scene& scene, const Camera& camera, const RenderOptions& options) {
  return render_frame(scene, nullptr, camera, options);
}

Image render_flow(const Scene& scene, const Scene& next, const Camera& camera, const RenderOptions& options) {
  return render_frame(scene, &next, camera, options).flow;
}

Image render_mask(const Scene& scene, const Camera& camera, const RenderOptions& options) {
  return render_frame(scene, nullptr, camera, options).mask;
}

RenderedTrajectory render_trajectory(const CoarseTrajectory& trajectory, const Camera& camera,
                                     const RenderOptions& options) {
  RenderedTrajectory out;
  const std::size_t n = trajectory.frames.size();
  for (std::size_t k = 0; k < n; ++k) {
    const Scene* next = k + 1 < n ? &trajectory.frames[k + 1] : nullptr;
    FrameBundle b = render_frame(trajectory.frames[k], next, camera, options);
    out.rgb.push_back(std::move(b.rgb));
    out.mask.push_back(std::move(b.mask));
    if (next) out.flow.push_back(std::move(b.flow));
  }
  return out;
}

RasterGradients rasterize_gradients(const Scene& scene, const Camera& camera, std::span<const double> adjoint,
                                    const RenderOptions& options) {
  const std::size_t npix = static_cast<std::size_t>(camera.width) * camera.height;
  if (adjoint.size() != npix * 3) throw Error("rasterize_gradients: adjoint does not match the camera size");
  const Prepared prep = prepare(scene, camera, nullptr, options);
  const std::size_t ns = prep.splats.size();

  // Per-splat accumulators: d/d(mean x, mean y, s) and d/d(color). One buffer
  // per parallel chunk, merged in chunk order.
  struct Accum {
    std::vector<double> geo;  // ns * 3
    std::vector<double> col;  // ns * 3
    Vec3 fill = Vec3::Zero();
  };
  const std::size_t n_tiles = prep.tiles.size();
  std::vector<Accum> chunks;
  std::vector<std::size_t> chunk_begin;
  std::mutex chunk_mutex;
  parallel_for(n_tiles, [&](std::size_t begin, std::size_t end) {
    Accum acc;
    acc.geo.assign(ns * 3, 0.0);
    acc.col.assign(ns * 3, 0.0);
    struct Contribution {
      std::uint32_t k;
      double a, T, q;
    };
    std::vector<Contribution> list;
    for (std::size_t t = begin; t < end; ++t) {
      const int tx = static_cast<int>(t % prep.tiles_x), ty = static_cast<int>(t / prep.tiles_x);
      const int x1 = std::min(camera.width, (tx + 1) * kTile), y1 = std::min(camera.height, (ty + 1) * kTile);
      for (int y = ty * kTile; y < y1; ++y)
        for (int x = tx * kTile; x < x1; ++x) {
          const std::size_t p = static_cast<std::size_t>(y) * camera.width + x;
          const Vec3 adj(adjoint[p * 3], adjoint[p * 3 + 1], adjoint[p * 3 + 2]);
          if (adj.isZero()) continue;
          list.clear();
          const double T_end = composite_pixel(prep, prep.tiles[t], x, y, options,
                                               [&](std::uint32_t k, double a, double T, double q) {
                                                 list.push_back({k, a, T, q});
                                               });
          acc.fill += T_end * adj;
          Vec3 behind = scene.fill_color;  // color composited behind the current splat
          for (auto it = list.rbegin(); it != list.rend(); ++it) {
            const Splat& sp = prep.splats[it->k];
            for (int ch = 0; ch < 3; ++ch) acc.col[it->k * 3 + ch] += adj[ch] * it->a * it->T;
            const double dL_da = it->T * adj.dot(sp.color - behind);
            behind = it->a * sp.color + (1.0 - it->a) * behind;
            const double dL_dq = dL_da * sp.opacity * footprint_derivative(it->q);
            const double dx = x - sp.mx, dy = y - sp.my, s2 = sp.s * sp.s;
            acc.geo[it->k * 3] += dL_dq * (-2.0 * dx / s2);
            acc.geo[it->k * 3 + 1] += dL_dq * (-2.0 * dy / s2);
            acc.geo[it->k * 3 + 2] += dL_dq * (-2.0 * it->q / sp.s);
          }
        }
    }
    std::lock_guard<std::mutex> lock(chunk_mutex);
    chunk_begin.push_back(begin);
    chunks.push_back(std::move(acc));
  });
  std::vector<std::size_t> order(chunks.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return chunk_begin[a] < chunk_begin[b]; });

  RasterGradients g;
  const std::size_t n = total_surfel_count(scene);
  g.position.assign(n, Vec3::Zero());
  g.color.assign(n, Vec3::Zero());
  std::vector<double> geo(ns * 3, 0.0), col(ns * 3, 0.0);
  for (auto c : order) {
    for (std::size_t i = 0; i < ns * 3; ++i) {
      geo[i] += chunks[c].geo[i];
      col[i] += chunks[c].col[i];
    }
    g.fill += chunks[c].fill;
  }
  for (std::size_t k = 0; k < ns; ++k) {
    const Splat& sp = prep.splats[k];
    const double X = sp.cam.x(), Y = sp.cam.y(), Z = sp.cam.z();
    const double gmx = geo[k * 3], gmy = geo[k * 3 + 1], gs = geo[k * 3 + 2];
    // s = sqrt(sigma^2 + floor^2), sigma = fx r / Z.
    const double gsigma = gs * sp.sigma / sp.s;
    const Vec3 dcam(gmx * camera.fx / Z, gmy * camera.fy / Z,
                    -gmx * camera.fx * X / (Z * Z) - gmy * camera.fy * Y / (Z * Z) - gsigma * sp.sigma / Z);
    g.position[sp.id] = camera.rotation.transpose() * dcam;
    g.color[sp.id] = Vec3(col[k * 3], col[k * 3 + 1], col[k * 3 + 2]);
  }
  return g;
}

RasterGradients rasterize_gradients(const Scene& scene, const Camera& camera, const Image& adjoint_rgb,
                                    const RenderOptions& options) {
  if (adjoint_rgb.channels != 3 || adjoint_rgb.width != camera.width || adjoint_rgb.height != camera.height)
    throw Error("rasterize_gradients: adjoint does not match the camera size");
  std::vector<double> adj(adjoint_rgb.data.begin(), adjoint_rgb.data.end());
  return rasterize_gradients(scene, camera, adj, options);
}

}  // namespace hybridsim
