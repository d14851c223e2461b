#include <cmath>
#include <random>

#include "doctest.h"
#include "hybridsim/refiner.hpp"

using namespace hybridsim;

namespace {

Camera small_camera() {
  Camera c;
  c.width = 64;
  c.height = 48;
  c.fx = c.fy = 50.0;
  c.cx = 31.5;
  c.cy = 23.5;
  return c;
}

// A textured sheet of object surfels at depth 1 over a surfel background at
// depth 2. Neighbouring surfels are joined by edges.
Scene textured_scene(const Camera& cam, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  Scene scene;
  scene.camera = cam;
  scene.fill_color = Vec3(0.2, 0.2, 0.2);
  for (int y = -2; y < 26; ++y)
    for (int x = -2; x < 34; ++x) {
      Surfel s;
      s.position = Vec3((x * 2.0 - cam.cx) * 2.0 / cam.fx, (y * 2.0 - cam.cy) * 2.0 / cam.fy, 2.0);
      s.scale = Vec2::Constant(2.0 * 2.0 / cam.fx);
      s.color = Vec3(0.3, 0.35, 0.4);
      scene.background.push_back(s);
    }
  ObjectSurfels obj;
  const int n = 6;
  const double spacing = 2.5 / cam.fx;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      Surfel s;
      s.position = Vec3((i - (n - 1) / 2.0) * spacing, (j - (n - 1) / 2.0) * spacing, 1.0);
      s.scale = Vec2::Constant(1.6 / cam.fx);
      s.color = Vec3(u(rng), u(rng), u(rng));
      obj.surfels.push_back(s);
    }
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      if (i + 1 < n) add_edge(obj.edges, j * n + i, j * n + i + 1);
      if (j + 1 < n) add_edge(obj.edges, j * n + i, (j + 1) * n + i);
    }
  scene.objects.push_back(obj);
  return scene;
}

Image render_rgb(const Scene& s, const Camera& cam) { return rasterize(s, cam).rgb; }

Vec2 mean_projection(const Scene& s, const Camera& cam) {
  Vec2 m = Vec2::Zero();
  for (const auto& sf : s.objects[0].surfels) m += cam.project_camera(cam.to_camera(sf.position));
  return m / static_cast<double>(s.objects[0].surfels.size());
}

double photometric_l1(const Scene& s, const Image& target, const Camera& cam) {
  RefineOptions o;
  o.edge_weight = 0.0;
  return refine_loss(s, s, target, cam, o);
}

}  // namespace

TEST_CASE("options validation") {
  RefineOptions o;
  CHECK_NOTHROW(o.validate());
  o.position_rate = 0.0;
  CHECK_THROWS_AS(o.validate(), Error);
  o = RefineOptions{};
  o.edge_weight = -1.0;
  CHECK_THROWS_AS(o.validate(), Error);
}

TEST_CASE("the rendered coarse frame is a fixed point") {
  const Camera cam = small_camera();
  const Scene scene = textured_scene(cam);
  const FrameRefinement r = refine_frame(scene, render_rgb(scene, cam), cam);
  REQUIRE(r.losses.size() == 1);
  CHECK(r.losses[0] == 0.0);
  for (std::size_t k = 0; k < scene.objects[0].surfels.size(); ++k) {
    CHECK((r.scene.objects[0].surfels[k].position - scene.objects[0].surfels[k].position).norm() <= 1e-8);
    CHECK((r.scene.objects[0].surfels[k].color - scene.objects[0].surfels[k].color).norm() <= 1e-8);
  }
}

TEST_CASE("a two pixel shift is recovered") {
  const Camera cam = small_camera();
  const Scene scene = textured_scene(cam);
  Scene shifted = scene;
  for (auto& s : shifted.objects[0].surfels) s.position.x() += 2.0 * s.position.z() / cam.fx;
  const Image target = render_rgb(shifted, cam);
  const FrameRefinement r = refine_frame(scene, target, cam);
  const double moved = mean_projection(r.scene, cam).x() - mean_projection(scene, cam).x();
  MESSAGE("recovered shift " << moved << " px after " << r.losses.size() - 1 << " iterations");
  CHECK(std::abs(moved - 2.0) < 0.5);
  const double before = photometric_l1(scene, target, cam), after = photometric_l1(r.scene, target, cam);
  CHECK(after <= 0.2 * before);
  for (std::size_t k = 1; k < r.losses.size(); ++k) CHECK(r.losses[k] <= r.losses[k - 1]);
}

TEST_CASE("a darkened background is absorbed by background colors") {
  const Camera cam = small_camera();
  const Scene scene = textured_scene(cam);
  Scene dark = scene;
  for (auto& s : dark.background) s.color *= 0.9;
  dark.fill_color *= 0.9;
  const Image target = render_rgb(dark, cam);
  RefineOptions o;
  o.max_iterations = 150;
  const FrameRefinement r = refine_frame(scene, target, cam, o);
  // Only background surfels that are visible are constrained by the image.
  double worst = 0.0;
  const double cx = cam.cx, cy = cam.cy;
  for (std::size_t k = 0; k < scene.background.size(); ++k) {
    const Vec2 p = cam.project_camera(cam.to_camera(scene.background[k].position));
    if (p.x() < 2 || p.x() > cam.width - 3 || p.y() < 2 || p.y() > cam.height - 3) continue;
    if (std::abs(p.x() - cx) < 10 && std::abs(p.y() - cy) < 10) continue;  // behind the object
    worst = std::max(worst, (r.scene.background[k].color - dark.background[k].color).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 2.0 / 255);
  for (std::size_t k = 0; k < scene.objects[0].surfels.size(); ++k)
    CHECK((r.scene.objects[0].surfels[k].position - scene.objects[0].surfels[k].position).norm() < 1e-4);
}

TEST_CASE("a very stiff edge regularizer keeps the sheet rigid") {
  const Camera cam = small_camera();
  const Scene scene = textured_scene(cam);
  Scene shifted = scene;
  for (std::size_t k = 0; k < shifted.objects[0].surfels.size(); ++k)
    shifted.objects[0].surfels[k].position.x() += (k % 2 ? 1.0 : -1.0) * 1.5 / cam.fx;
  RefineOptions o;
  o.edge_weight = 1e6;
  const FrameRefinement r = refine_frame(scene, render_rgb(shifted, cam), cam, o);
  double worst = 0.0;
  for (auto [i, j] : edge_list(scene.objects[0].edges)) {
    const double l0 = (scene.objects[0].surfels[i].position - scene.objects[0].surfels[j].position).norm();
    const double l = (r.scene.objects[0].surfels[i].position - r.scene.objects[0].surfels[j].position).norm();
    worst = std::max(worst, std::abs(l - l0) / l0);
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("trajectory refinement leaves frame 0 alone") {
  const Camera cam = small_camera();
  const Scene scene = textured_scene(cam);
  Scene shifted = scene;
  for (auto& s : shifted.objects[0].surfels) s.position.x() += 1.0 / cam.fx;
  CoarseTrajectory traj;
  traj.frames = {scene, scene};
  const Video video = {render_rgb(shifted, cam), render_rgb(shifted, cam)};
  RefineOptions o;
  o.max_iterations = 5;
  const RefinedTrajectory r = photometric_refine(traj, video, cam, o);
  for (std::size_t k = 0; k < scene.objects[0].surfels.size(); ++k)
    CHECK(r.trajectory.frames[0].objects[0].surfels[k].position == scene.objects[0].surfels[k].position);
  CHECK(r.losses[0].empty());
  CHECK(r.losses[1].back() <= r.losses[1].front());
  CHECK_THROWS_AS(photometric_refine(traj, {video[0]}, cam, o), Error);
  CHECK_THROWS_AS(photometric_refine(traj, {Image(3, 3, 3), Image(3, 3, 3)}, cam, o), Error);
}

TEST_CASE("gradient check") {
  Camera cam = small_camera();
  cam.width = 32;
  cam.height = 24;
  cam.cx = 15.5;
  cam.cy = 11.5;
  auto surfel = [&](double px, double py, double z, double r, double o, const Vec3& c) {
    Surfel s;
    s.position = Vec3((px - cam.cx) * z / cam.fx, (py - cam.cy) * z / cam.fy, z);
    s.scale = Vec2::Constant(r);
    s.opacity = o;
    s.color = c;
    return s;
  };
  SUBCASE("one surfel, colors") {
    Scene s;
    ObjectSurfels o;
    o.surfels = {surfel(15.2, 11.7, 1.0, 0.05, 0.8, Vec3(0.7, 0.2, 0.4))};
    s.objects.push_back(o);
    CHECK(check_gradients(s, cam, 1e-4, 3).color_error < 1e-6);
  }
  SUBCASE("three surfels, positions") {
    Scene s;
    ObjectSurfels o;
    o.surfels = {surfel(14.3, 11.2, 1.0, 0.06, 0.8, Vec3(0.9, 0.2, 0.1)),
                 surfel(17.6, 12.9, 1.3, 0.08, 0.7, Vec3(0.1, 0.7, 0.3)),
                 surfel(12.1, 14.4, 0.9, 0.05, 0.6, Vec3(0.3, 0.3, 0.9))};
    s.objects.push_back(o);
    const GradientCheck g = check_gradients(s, cam, 1e-4, 4);
    CHECK(g.position_error < 1e-3);
    CHECK(g.color_error < 1e-6);
  }
  SUBCASE("zero adjoint") {
    Scene s;
    ObjectSurfels o;
    o.surfels = {surfel(15.0, 11.0, 1.0, 0.05, 0.8, Vec3(0.5, 0.5, 0.5))};
    s.objects.push_back(o);
    const GradientCheck g = check_gradients(s, cam, 1e-4, 0, true);
    CHECK(g.max_error() == 0.0);
  }
}
