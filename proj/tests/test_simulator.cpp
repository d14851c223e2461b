#include <cmath>

#include "doctest.h"
#include "hybridsim/metrics.hpp"
#include "hybridsim/procedural.hpp"
#include "hybridsim/simulator.hpp"

using namespace hybridsim;

namespace {

ProceduralSpec ball_scene(MaterialKind kind, double height, double radius = 0.05) {
  ProceduralSpec spec;
  PrimitiveSpec plane;
  plane.shape = "plane";
  plane.size = Vec3(1.0, 1.0, 0.0);
  spec.background.push_back(plane);
  PrimitiveSpec ball;
  ball.shape = "sphere";
  ball.name = "ball";
  ball.radius = radius;
  ball.center = Vec3(0, 0, height);
  ball.material = Material::defaults(kind);
  spec.objects.push_back(ball);
  spec.camera.width = 96;
  spec.camera.height = 64;
  return spec;
}

Vec3 surfel_center(const ObjectSurfels& o) {
  Vec3 c = Vec3::Zero();
  for (const auto& s : o.surfels) c += s.position;
  return c / static_cast<double>(o.surfels.size());
}

Vec3 mean_velocity(const ObjectSurfels& o) {
  Vec3 p = Vec3::Zero();
  double m = 0.0;
  for (const auto& q : o.particles) {
    p += q.mass * q.velocity;
    m += q.mass;
  }
  return p / m;
}

}  // namespace

TEST_CASE("config validation names the offending field") {
  SimConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.frame_count() == 49);
  c.frame_stride = 7;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("frame_stride"), Error);
  c = SimConfig{};
  c.step_time = 0.0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("step_time"), Error);
}

TEST_CASE("surfels follow their bound particles") {
  const Scene scene = build_procedural_scene(ball_scene(MaterialKind::elastic, 0.3));
  const ObjectSurfels& o = scene.objects[0];

  SUBCASE("uniform displacement") {
    ObjectSurfels moved = o;
    for (auto& p : moved.particles) p.position += Vec3(1, 0, 0);
    const ObjectSurfels out = update_surfels_from_particles(moved);
    for (std::size_t s = 0; s < o.surfels.size(); ++s)
      CHECK((out.surfels[s].position - o.surfels[s].position - Vec3(1, 0, 0)).norm() < 1e-12);
  }
  SUBCASE("opposite displacements cancel") {
    ObjectSurfels moved = o;
    const auto& b = o.binding[0];
    for (std::size_t k = 0; k < b.size(); ++k)
      moved.particles[b[k]].position += Vec3(k % 2 == 0 ? 1.0 : -1.0, 0, 0);
    const ObjectSurfels out = update_surfels_from_particles(moved);
    CHECK((out.surfels[0].position - o.surfels[0].position).norm() < 1e-12);
  }
}

TEST_CASE("rigid surfels rotate with the body") {
  const Scene scene = build_procedural_scene(ball_scene(MaterialKind::rigid, 0.3));
  ObjectSurfels o = scene.objects[0];
  const Quat q(Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()));
  const Vec3 c = Vec3(0, 0, 0.3);
  for (auto& p : o.particles) p.position = c + q * (p.position - c);
  const ObjectSurfels out = update_surfels_from_particles(o);
  for (std::size_t s = 0; s < o.surfels.size(); ++s) {
    CHECK(out.surfels[s].orientation.angularDistance(q * scene.objects[0].surfels[s].orientation) < 1e-6);
    CHECK((out.surfels[s].position - (c + q * (scene.objects[0].surfels[s].position - c))).norm() < 1e-9);
  }
}

TEST_CASE("a static scene without gravity is unchanged") {
  const Scene scene = build_procedural_scene(ball_scene(MaterialKind::rigid, 0.3));
  ActionSet none;
  none.gravity = Vec3::Zero();
  SimConfig config;
  const Scene next = step_scene(scene, none, config, 0.0);
  for (std::size_t s = 0; s < scene.objects[0].surfels.size(); ++s)
    CHECK(next.objects[0].surfels[s].position == scene.objects[0].surfels[s].position);
  const CoarseTrajectory traj = run_simulation(scene, none, config);
  REQUIRE(traj.frames.size() == 49);
  for (const auto& f : traj.frames)
    for (std::size_t s = 0; s < scene.objects[0].surfels.size(); s += 17)
      CHECK(f.objects[0].surfels[s].position == scene.objects[0].surfels[s].position);
  const MetricsReport m = compute_metrics(traj);
  CHECK(m.mass_drift == 0.0);
  CHECK(m.momentum_drift == 0.0);
  CHECK(m.max_penetration <= 0.0);
}

TEST_CASE("point force on a 1 kg rigid ball in zero gravity gives the impulse velocity") {
  ProceduralSpec spec = ball_scene(MaterialKind::rigid, 0.5);
  Scene scene = build_procedural_scene(spec);
  spec.objects[0].material->density /= scene.objects[0].total_mass();
  scene = build_procedural_scene(spec);
  REQUIRE(scene.objects[0].total_mass() == doctest::Approx(1.0).epsilon(1e-9));
  ActionSet a;
  a.gravity = Vec3::Zero();
  PointForce pf;
  pf.object = 0;
  pf.anchor = 0;
  pf.profile = {{0.0, Vec3(5, 0, 0)}};
  pf.t_end = 1.0 - 1e-9;
  a.point_forces.push_back(pf);
  SimConfig config;
  config.total_steps = 100;
  config.frame_stride = 100;
  const CoarseTrajectory traj = run_simulation(scene, a, config);
  const Vec3 v = mean_velocity(traj.frames.back().objects[0]);
  CHECK(v.x() == doctest::Approx(5.0).epsilon(0.01));
  CHECK(std::abs(v.y()) < 0.05);
}

TEST_CASE("free fall momentum grows as m g t before contact") {
  const Scene scene = build_procedural_scene(ball_scene(MaterialKind::rigid, 1.0));
  SimConfig config;
  config.total_steps = 20;
  config.frame_stride = 10;
  const CoarseTrajectory traj = run_simulation(scene, ActionSet{}, config);
  const MetricsReport m = compute_metrics(traj);
  const double mass = scene.objects[0].total_mass();
  CHECK(m.momentum.back().z() == doctest::Approx(-mass * 9.8 * 0.2).epsilon(0.01));
  CHECK(m.mass_drift == 0.0);
}

TEST_CASE("rigid ball first touches the plane at the ballistic time") {
  const Scene scene = build_procedural_scene(ball_scene(MaterialKind::rigid, 0.5));
  SimConfig config;
  config.total_steps = 60;
  config.frame_stride = 1;
  const CoarseTrajectory traj = run_simulation(scene, ActionSet{}, config);
  // Drop height 0.45 m from the bottom of the ball: t = sqrt(2 h / g) ~ 0.303 s.
  int contact = -1;
  for (std::size_t k = 0; k < traj.frames.size() && contact < 0; ++k) {
    double lowest = 1e9;
    for (const auto& p : traj.frames[k].objects[0].particles) lowest = std::min(lowest, p.position.z());
    if (lowest <= 0.006) contact = static_cast<int>(k);
  }
  CHECK(std::abs(contact * 0.01 - std::sqrt(2 * 0.45 / 9.8)) <= 0.02);
  // Resting afterwards: above the plane, no deep penetration.
  const MetricsReport m = compute_metrics(traj);
  CHECK(m.max_penetration < 1e-3);
}

TEST_CASE("elastic ball rebounds lower than it was dropped") {
  const Scene scene = build_procedural_scene(ball_scene(MaterialKind::elastic, 0.2));
  SimConfig config;
  config.total_steps = 40;
  config.frame_stride = 1;
  const CoarseTrajectory traj = run_simulation(scene, ActionSet{}, config);
  const double start = surfel_center(traj.frames[0].objects[0]).z();
  double lowest = start, peak_after = 0.0;
  std::size_t bottom = 0;
  for (std::size_t k = 0; k < traj.frames.size(); ++k) {
    const double z = surfel_center(traj.frames[k].objects[0]).z();
    if (z < lowest) {
      lowest = z;
      bottom = k;
    }
  }
  for (std::size_t k = bottom; k < traj.frames.size(); ++k)
    peak_after = std::max(peak_after, surfel_center(traj.frames[k].objects[0]).z());
  CHECK(bottom > 0);
  CHECK(peak_after < start);
  CHECK(compute_metrics(traj).mass_drift == 0.0);
}

TEST_CASE("pinned cloth drape settles") {
  ProceduralSpec spec;
  PrimitiveSpec plane;
  plane.shape = "plane";
  spec.background.push_back(plane);
  PrimitiveSpec cloth;
  cloth.shape = "cloth";
  cloth.rows = 8;
  cloth.cols = 8;
  cloth.spacing = 0.02;
  cloth.center = Vec3(0, 0, 0.4);
  cloth.pinned = {0, 7};
  spec.objects.push_back(cloth);
  const Scene scene = build_procedural_scene(spec);
  SimConfig config;
  config.total_steps = 500;
  config.frame_stride = 10;
  const CoarseTrajectory traj = run_simulation(scene, ActionSet{}, config);
  const MetricsReport m = compute_metrics(traj);
  CHECK(m.settle_velocity < 1e-2);
  CHECK(m.max_constraint_residual < 0.05);
}

TEST_CASE("simulator rejects unprepared objects and dangling anchors") {
  Scene scene = build_procedural_scene(ball_scene(MaterialKind::rigid, 0.3));
  ActionSet a;
  PointForce pf;
  pf.object = 3;
  a.point_forces.push_back(pf);
  CHECK_THROWS_AS(Simulator(scene, a, SimConfig{}), Error);
  scene.objects[0].binding.clear();
  CHECK_THROWS_AS(Simulator(scene, ActionSet{}, SimConfig{}), Error);
}
