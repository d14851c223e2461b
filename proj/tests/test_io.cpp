#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "hybridsim/image_io.hpp"
#include "hybridsim/metrics.hpp"
#include "hybridsim/procedural.hpp"
#include "hybridsim/simulator.hpp"
#include "hybridsim/snapshot_io.hpp"

using namespace hybridsim;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hybridsim_test_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Image random_image(int w, int h, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(w, h, c);
  for (auto& v : img.data) v = u(rng);
  return img;
}

}  // namespace

TEST_CASE("ppm and pgm round trip at 8-bit precision") {
  const fs::path dir = scratch("ppm");
  const Image rgb = random_image(13, 7, 3, 1);
  write_ppm(dir / "a.ppm", rgb);
  const Image back = read_ppm(dir / "a.ppm");
  REQUIRE(back.same_shape(rgb));
  for (std::size_t i = 0; i < rgb.data.size(); ++i) CHECK(std::abs(back.data[i] - rgb.data[i]) <= 0.5f / 255 + 1e-6f);
  const Image gray = random_image(5, 9, 1, 2);
  write_pgm(dir / "b.pgm", gray);
  const Image g2 = read_pgm(dir / "b.pgm");
  REQUIRE(g2.same_shape(gray));
  for (std::size_t i = 0; i < gray.data.size(); ++i) CHECK(std::abs(g2.data[i] - gray.data[i]) <= 0.5f / 255 + 1e-6f);
  CHECK_THROWS_AS(write_ppm(dir / "c.ppm", gray), Error);
  CHECK_THROWS_AS(read_ppm(dir / "missing.ppm"), Error);
}

TEST_CASE("flo round trip is exact") {
  const fs::path dir = scratch("flo");
  Image flow = random_image(11, 6, 2, 3);
  for (auto& v : flow.data) v = (v - 0.5f) * 40.0f;
  write_flo(dir / "f.flo", flow);
  const Image back = read_flo(dir / "f.flo");
  REQUIRE(back.same_shape(flow));
  CHECK(back.data == flow.data);
  std::ofstream(dir / "bad.flo") << "NOPE";
  CHECK_THROWS_AS(read_flo(dir / "bad.flo"), Error);
}

TEST_CASE("video directories round trip") {
  const fs::path dir = scratch("video");
  Video v = {random_image(8, 6, 3, 4), random_image(8, 6, 3, 5), random_image(8, 6, 3, 6)};
  write_video(dir / "v", v, 24.0);
  CHECK(fs::exists(dir / "v" / "manifest.json"));
  const Video back = read_video(dir / "v");
  REQUIRE(back.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) CHECK(back[k].same_shape(v[k]));
}

TEST_CASE("wply tables round trip and reject corruption") {
  const fs::path dir = scratch("wply");
  WplyTable t;
  t.rows = 4;
  t.width = 3;
  for (int i = 0; i < 12; ++i) t.data.push_back(0.25f * i - 1.0f);
  write_wply(dir / "t.wply", t);
  const WplyTable back = read_wply(dir / "t.wply");
  CHECK(back.rows == 4);
  CHECK(back.width == 3);
  CHECK(back.data == t.data);
  {
    std::ofstream f(dir / "short.wply", std::ios::binary);
    f << "WPLY";
  }
  CHECK_THROWS_AS(read_wply(dir / "short.wply"), Error);
  t.data.pop_back();
  CHECK_THROWS_AS(write_wply(dir / "bad.wply", t), Error);
}

TEST_CASE("trajectories round trip through float32") {
  const fs::path dir = scratch("traj");
  ProceduralSpec spec;
  PrimitiveSpec plane;
  plane.shape = "plane";
  spec.background.push_back(plane);
  PrimitiveSpec ball;
  ball.shape = "sphere";
  ball.radius = 0.05;
  ball.center = Vec3(0, 0, 0.2);
  spec.objects.push_back(ball);
  spec.camera.width = 32;
  spec.camera.height = 24;
  const Scene scene = build_procedural_scene(spec);
  SimConfig config;
  config.total_steps = 10;
  config.frame_stride = 5;
  const CoarseTrajectory traj = run_simulation(scene, ActionSet{}, config);
  save_trajectory(dir, traj);
  const CoarseTrajectory back = load_trajectory(dir);
  REQUIRE(back.frames.size() == traj.frames.size());
  CHECK(back.frame_stride == 5);
  for (std::size_t k = 0; k < traj.frames.size(); ++k) {
    CHECK(back.times[k] == doctest::Approx(traj.times[k]));
    const auto& a = traj.frames[k].objects[0];
    const auto& b = back.frames[k].objects[0];
    REQUIRE(a.surfels.size() == b.surfels.size());
    REQUIRE(a.particles.size() == b.particles.size());
    for (std::size_t i = 0; i < a.surfels.size(); ++i)
      CHECK((a.surfels[i].position - b.surfels[i].position).norm() < 1e-6);
    for (std::size_t i = 0; i < a.particles.size(); ++i)
      CHECK((a.particles[i].velocity - b.particles[i].velocity).norm() < 1e-5);
  }
  const MetricsReport m1 = compute_metrics(traj), m2 = compute_metrics(back);
  CHECK(m2.momentum.back().z() == doctest::Approx(m1.momentum.back().z()).epsilon(1e-5));
  CHECK_THROWS_AS(load_trajectory(dir / "nothing_here"), Error);
}

TEST_CASE("metrics serialize every field") {
  MetricsReport r;
  r.penetration = {0.0, 1e-3};
  r.momentum = {Vec3::Zero(), Vec3(1, 2, 3)};
  r.mass = {1.0, 1.0};
  r.max_penetration = 1e-3;
  const auto j = metrics_to_json(r);
  for (const char* key : {"penetration", "momentum", "mass", "max_penetration", "momentum_drift", "mass_drift",
                          "max_constraint_residual", "settle_velocity"})
    CHECK(j.contains(key));
}
