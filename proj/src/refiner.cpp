#include "hybridsim/refiner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

namespace hybridsim {

namespace {

struct Evaluation {
  double loss = 0.0;
  std::vector<double> adjoint;  // d loss / d rgb
};

Evaluation photometric(const Scene& scene, const Image& target, const Camera& camera, const RefineOptions& options,
                       bool want_adjoint) {
  const Raster r = render_raster(scene, camera, nullptr, options.render);
  Evaluation e;
  const double inv_n = 1.0 / static_cast<double>(r.rgb.size());
  if (want_adjoint) e.adjoint.assign(r.rgb.size(), 0.0);
  const double delta = options.huber_delta;
  for (std::size_t i = 0; i < r.rgb.size(); ++i) {
    const double d = r.rgb[i] - static_cast<double>(target.data[i]);
    const double a = std::abs(d);
    if (a <= options.residual_deadzone) continue;
    if (a < delta) {
      e.loss += 0.5 * d * d / delta * inv_n;
      if (want_adjoint) e.adjoint[i] = d / delta * inv_n;
    } else {
      e.loss += (a - 0.5 * delta) * inv_n;
      if (want_adjoint) e.adjoint[i] = (d > 0.0 ? 1.0 : -1.0) * inv_n;
    }
  }
  return e;
}

double edge_term(const Scene& scene, const Scene& rest, double weight, std::vector<Vec3>* grad, std::size_t offset) {
  if (weight <= 0.0) return 0.0;
  double e = 0.0;
  std::size_t base = offset;
  for (std::size_t o = 0; o < scene.objects.size(); ++o) {
    const auto& obj = scene.objects[o];
    const auto& ref = rest.objects[o];
    for (auto [i, j] : edge_list(obj.edges)) {
      const Vec3 d = obj.surfels[i].position - obj.surfels[j].position;
      const double l = d.norm();
      const double l0 = (ref.surfels[i].position - ref.surfels[j].position).norm();
      const double r = l - l0;
      e += weight * r * r;
      if (grad && l > 0.0) {
        const Vec3 g = 2.0 * weight * r * d / l;
        (*grad)[base + i] += g;
        (*grad)[base + j] -= g;
      }
    }
    base += obj.surfels.size();
  }
  return e;
}

std::vector<double> depth_keys(const Scene& scene, const Camera& camera, const RenderOptions& options) {
  std::vector<double> keys;
  keys.reserve(total_surfel_count(scene));
  auto key = [&](const Surfel& s) {
    const double z = camera.to_camera(s.position).z();
    return options.depth_bucket > 0.0 ? std::round(z / options.depth_bucket) : z;
  };
  for (const auto& s : scene.background) keys.push_back(key(s));
  for (const auto& obj : scene.objects)
    for (const auto& s : obj.surfels) keys.push_back(key(s));
  return keys;
}

void check_target(const Image& target, const Camera& camera) {
  if (target.channels != 3 || target.width != camera.width || target.height != camera.height)
    throw Error("refiner: target frame dimensions do not match the camera");
}

}  // namespace

void RefineOptions::validate() const {
  if (!(position_rate > 0.0) || !(color_rate > 0.0)) throw Error("refine options: rates must be positive");
  if (!(max_position_step >= position_rate) || !(max_color_step >= color_rate))
    throw Error("refine options: step caps must not be below the initial rates");
  if (!(step_growth >= 1.0)) throw Error("refine options: step_growth must be at least 1");
  if (!(huber_delta >= 0.0)) throw Error("refine options: huber_delta must be non-negative");
  if (max_iterations < 0) throw Error("refine options: max_iterations must be non-negative");
  if (!(edge_weight >= 0.0)) throw Error("refine options: edge_weight must be non-negative");
  if (!(tolerance >= 0.0)) throw Error("refine options: tolerance must be non-negative");
  if (backtracking < 0) throw Error("refine options: backtracking must be non-negative");
}

double refine_loss(const Scene& scene, const Scene& rest, const Image& target, const Camera& camera,
                   const RefineOptions& options) {
  check_target(target, camera);
  return photometric(scene, target, camera, options, false).loss +
         edge_term(scene, rest, options.edge_weight, nullptr, 0);
}

FrameRefinement refine_frame(const Scene& coarse, const Image& target, const Camera& camera,
                             const RefineOptions& options) {
  options.validate();
  check_target(target, camera);
  const std::size_t nb = coarse.background.size();
  const std::size_t n = total_surfel_count(coarse);

  FrameRefinement out;
  out.scene = coarse;
  Scene& scene = out.scene;
  RefineOptions work = options;

  // Parameters: per global surfel, 3 position and 3 color components; color
  // index n is the fill color. Each phase frees a subset of them.
  struct Phase {
    bool positions, object_colors, background_colors;
  };
  Phase phase{false, false, false};
  auto pos_free = [&](std::size_t g) { return phase.positions && g >= nb && g < n; };
  auto col_free = [&](std::size_t g) { return g >= nb && g < n ? phase.object_colors : phase.background_colors; };
  auto surfel = [&](Scene& s, std::size_t g) -> Surfel& {
    if (g < nb) return s.background[g];
    g -= nb;
    for (auto& obj : s.objects) {
      if (g < obj.surfels.size()) return obj.surfels[g];
      g -= obj.surfels.size();
    }
    throw Error("refiner: surfel index out of range");
  };
  std::vector<Surfel*> refs(n);
  for (std::size_t g = 0; g < n; ++g) refs[g] = &surfel(scene, g);

  auto evaluate = [&](bool want_grad, std::vector<Vec3>* gp, std::vector<Vec3>* gc, Vec3* gfill) {
    Evaluation e = photometric(scene, target, camera, work, want_grad);
    double loss = e.loss;
    if (want_grad) {
      const RasterGradients rg = rasterize_gradients(scene, camera, e.adjoint, work.render);
      *gp = rg.position;
      *gc = rg.color;
      *gfill = rg.fill;
      loss += edge_term(scene, coarse, options.edge_weight, gp, nb);
    } else {
      loss += edge_term(scene, coarse, options.edge_weight, nullptr, nb);
    }
    if (!std::isfinite(loss)) throw Error("refiner: non-finite loss");
    return loss;
  };

  std::vector<Vec3> gp, gc;
  Vec3 gfill = Vec3::Zero();
  double loss = evaluate(true, &gp, &gc, &gfill);
  out.losses.push_back(loss);

  // Step sizes per parameter group (positions, object colors, background and
  // fill colors). Within a group the step is the gradient scaled so that its
  // largest component moves by the group's step size.
  enum Group { kPos, kObjCol, kBgCol };
  double rate[3];
  std::vector<Vec3> step_p(n, Vec3::Zero()), step_c(n + 1, Vec3::Zero());
  std::vector<Vec3> saved_p(n), saved_c(n + 1);
  gc.push_back(gfill);
  const Vec3 axis = camera.rotation.row(2).transpose();  // optical axis in world coordinates
  auto color_group = [&](std::size_t g) { return g >= nb && g < n ? kObjCol : kBgCol; };

  auto run_phase = [&] {
    // Visibility order is held at the phase's starting depths so that the loss
    // stays continuous in the positions.
    work.render.sort_keys = depth_keys(scene, camera, options.render);
    loss = evaluate(true, &gp, &gc, &gfill);
    gc.push_back(gfill);
    rate[kPos] = options.position_rate;
    rate[kObjCol] = rate[kBgCol] = options.color_rate;
    for (int it = 1; it <= options.max_iterations; ++it) {
      if (!options.optimize_depth)
        for (auto& g : gp) g -= axis * axis.dot(g);
      double gmax[3] = {0.0, 0.0, 0.0};
      for (std::size_t g = 0; g <= n; ++g) {
        if (g < n && pos_free(g)) gmax[kPos] = std::max(gmax[kPos], gp[g].cwiseAbs().maxCoeff());
        if (col_free(g)) gmax[color_group(g)] = std::max(gmax[color_group(g)], gc[g].cwiseAbs().maxCoeff());
      }
      if (gmax[kPos] == 0.0 && gmax[kObjCol] == 0.0 && gmax[kBgCol] == 0.0) break;
      for (std::size_t g = 0; g <= n; ++g) {
        if (g < n) {
          step_p[g] = pos_free(g) && gmax[kPos] > 0.0 ? Vec3(gp[g] * (rate[kPos] / gmax[kPos])) : Vec3::Zero();
          saved_p[g] = refs[g]->position;
        }
        const int cg = color_group(g);
        step_c[g] = col_free(g) && gmax[cg] > 0.0 ? Vec3(gc[g] * (rate[cg] / gmax[cg])) : Vec3::Zero();
        saved_c[g] = g < n ? refs[g]->color : scene.fill_color;
      }
      double scale = 1.0;
      double trial = loss;
      bool accepted = false;
      for (int b = 0; b <= options.backtracking; ++b, scale *= 0.5) {
        for (std::size_t g = 0; g <= n; ++g) {
          const Vec3 c = (saved_c[g] - scale * step_c[g]).cwiseMax(0.0).cwiseMin(1.0);
          if (g == n) {
            scene.fill_color = c;
            continue;
          }
          refs[g]->position = saved_p[g] - scale * step_p[g];
          refs[g]->color = c;
        }
        trial = evaluate(false, nullptr, nullptr, nullptr);
        if (trial < loss) {
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        for (std::size_t g = 0; g < n; ++g) {
          refs[g]->position = saved_p[g];
          refs[g]->color = saved_c[g];
        }
        scene.fill_color = saved_c[n];
        break;
      }
      const double caps[3] = {options.max_position_step, options.max_color_step, options.max_color_step};
      for (int k = 0; k < 3; ++k)
        rate[k] = scale < 1.0 ? std::max(rate[k] * scale, 1e-12) : std::min(rate[k] * options.step_growth, caps[k]);
      const double previous = loss;
      loss = evaluate(true, &gp, &gc, &gfill);
      gc.push_back(gfill);
      out.losses.push_back(loss);
      if (previous - loss <= options.tolerance * previous) break;
    }
  };

  // Shading first (background), then geometry, then everything jointly, so
  // color changes cannot absorb a misplaced object before it is moved.
  const bool bg = options.optimize_colors && options.optimize_background;
  if (bg) {
    phase = {false, false, true};
    run_phase();
  }
  if (options.optimize_positions) {
    phase = {true, false, false};
    run_phase();
  }
  phase = {options.optimize_positions, options.optimize_colors, bg};
  run_phase();

  // Judge the result under the true depth order.
  if (out.losses.size() > 1) {
    work.render.sort_keys.clear();
    const double final_loss = evaluate(false, nullptr, nullptr, nullptr);
    if (final_loss > out.losses.front()) {
      out.scene = coarse;
      out.losses.push_back(out.losses.front());
    } else {
      out.losses.push_back(final_loss);
    }
  }
  return out;
}

RefinedTrajectory photometric_refine(const CoarseTrajectory& trajectory, const Video& video, const Camera& camera,
                                     const RefineOptions& options) {
  if (video.size() != trajectory.frames.size())
    throw Error("refiner: video has " + std::to_string(video.size()) + " frames, trajectory has " +
                std::to_string(trajectory.frames.size()));
  for (const auto& f : video) check_target(f, camera);
  RefinedTrajectory out;
  out.trajectory = trajectory;
  out.losses.resize(trajectory.frames.size());
  for (std::size_t k = 1; k < trajectory.frames.size(); ++k) {
    try {
      FrameRefinement r = refine_frame(trajectory.frames[k], video[k], camera, options);
      out.trajectory.frames[k] = std::move(r.scene);
      out.losses[k] = std::move(r.losses);
    } catch (const Error& e) {
      throw Error("refiner: frame " + std::to_string(k) + ": " + e.what());
    }
  }
  return out;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<std::vector<double>>& losses) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << "frame,iteration,loss\n";
  out.precision(10);
  for (std::size_t k = 0; k < losses.size(); ++k)
    for (std::size_t i = 0; i < losses[k].size(); ++i) out << k << ',' << i << ',' << losses[k][i] << '\n';
}

GradientCheck check_gradients(const Scene& scene, const Camera& camera, double epsilon, std::uint64_t seed,
                              bool zero_adjoint, const RenderOptions& options) {
  const std::size_t npix = static_cast<std::size_t>(camera.width) * camera.height;
  std::vector<double> adj(npix * 3, 0.0);
  if (!zero_adjoint) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& a : adj) a = u(rng);
  }
  const RasterGradients g = rasterize_gradients(scene, camera, adj, options);
  auto objective = [&](const Scene& s) {
    const Raster r = render_raster(s, camera, nullptr, options);
    double v = 0.0;
    for (std::size_t i = 0; i < r.rgb.size(); ++i) v += adj[i] * r.rgb[i];
    return v;
  };
  const std::size_t nb = scene.background.size();
  const std::size_t n = total_surfel_count(scene);
  Scene work = scene;
  auto surfel = [&](std::size_t gi) -> Surfel& {
    if (gi < nb) return work.background[gi];
    gi -= nb;
    for (auto& obj : work.objects) {
      if (gi < obj.surfels.size()) return obj.surfels[gi];
      gi -= obj.surfels.size();
    }
    throw Error("check_gradients: surfel index out of range");
  };
  double pos_scale = 0.0, col_scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= nb) pos_scale = std::max(pos_scale, g.position[i].cwiseAbs().maxCoeff());
    col_scale = std::max(col_scale, g.color[i].cwiseAbs().maxCoeff());
  }
  auto rel = [](double a, double b, double floor) {
    const double den = std::max({std::abs(a), std::abs(b), floor});
    return den > 0.0 ? std::abs(a - b) / den : 0.0;
  };
  GradientCheck out;
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) {
      Surfel& s = surfel(i);
      if (i >= nb) {
        const double x0 = s.position[c];
        s.position[c] = x0 + epsilon;
        const double fp = objective(work);
        s.position[c] = x0 - epsilon;
        const double fm = objective(work);
        s.position[c] = x0;
        out.position_error =
            std::max(out.position_error, rel(g.position[i][c], (fp - fm) / (2.0 * epsilon), 1e-3 * pos_scale));
      }
      const double c0 = s.color[c];
      s.color[c] = c0 + epsilon;
      const double fp = objective(work);
      s.color[c] = c0 - epsilon;
      const double fm = objective(work);
      s.color[c] = c0;
      out.color_error = std::max(out.color_error, rel(g.color[i][c], (fp - fm) / (2.0 * epsilon), 1e-3 * col_scale));
    }
  return out;
}

}  // namespace hybridsim
