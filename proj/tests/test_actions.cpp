#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "hybridsim/actions.hpp"
#include "hybridsim/procedural.hpp"

using namespace hybridsim;

TEST_CASE("uniform wind is constant inside its window and zero outside") {
  WindField w;
  w.strength = 2.0;
  w.direction = Vec3::UnitY();
  w.t_start = 0.5;
  w.t_end = 1.0;
  CHECK(eval_wind(w, Vec3::Zero(), 0.4).isZero());
  CHECK((eval_wind(w, Vec3(3, 1, 2), 0.7) - Vec3(0, 2, 0)).norm() == 0.0);
  CHECK(eval_wind(w, Vec3::Zero(), 1.01).isZero());
}

TEST_CASE("vortex wind is tangential with gaussian falloff") {
  WindField w;
  w.kind = WindKind::vortex;
  w.strength = 1.5;
  w.direction = Vec3::UnitZ();
  w.center = Vec3(0.1, 0, 0);
  w.falloff_radius = 0.2;
  const Vec3 x(0.1 + 0.1, 0, 0.3);
  const Vec3 a = eval_wind(w, x, 0.0);
  // Oracle: strength * (axis x r) / |r| * exp(-|r|^2 / R^2) with r = (0.1, 0, 0.3).
  const Vec3 r = x - w.center;
  const Vec3 expect = 1.5 * Vec3::UnitZ().cross(r) / r.norm() * std::exp(-r.squaredNorm() / 0.04);
  CHECK((a - expect).norm() < 1e-14);
  CHECK(a.dot(r) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(eval_wind(w, w.center, 0.0).allFinite());
}

TEST_CASE("point force profile is piecewise linear and held at the ends") {
  PointForce pf;
  pf.profile = {{0.1, Vec3(0, 0, 0)}, {0.3, Vec3(4, 0, 0)}, {0.5, Vec3(0, 2, 0)}};
  pf.t_end = 0.8;
  CHECK(eval_point_force(pf, 0.0).isZero());
  CHECK((eval_point_force(pf, 0.2) - Vec3(2, 0, 0)).norm() < 1e-12);
  CHECK((eval_point_force(pf, 0.4) - Vec3(2, 1, 0)).norm() < 1e-12);
  CHECK((eval_point_force(pf, 0.7) - Vec3(0, 2, 0)).norm() < 1e-12);
  CHECK(eval_point_force(pf, 0.9).isZero());
}

TEST_CASE("winds superpose") {
  ActionSet a;
  WindField w1, w2;
  w1.strength = 1.0;
  w2.strength = 2.0;
  w2.direction = Vec3::UnitZ();
  a.winds = {w1, w2};
  CHECK((eval_winds(a, Vec3::Zero(), 0.0) - Vec3(1, 0, 2)).norm() == 0.0);
}

TEST_CASE("validation rejects malformed actions") {
  ActionSet a;
  CHECK_NOTHROW(validate_actions(a));
  SUBCASE("non-unit direction") {
    WindField w;
    w.direction = Vec3(1, 1, 0);
    a.winds.push_back(w);
    CHECK_THROWS_AS(validate_actions(a), Error);
  }
  SUBCASE("reversed window") {
    WindField w;
    w.t_start = 2.0;
    w.t_end = 1.0;
    a.winds.push_back(w);
    CHECK_THROWS_AS(validate_actions(a), Error);
  }
  SUBCASE("unsorted profile") {
    PointForce p;
    p.profile = {{0.5, Vec3::Zero()}, {0.1, Vec3::Zero()}};
    a.point_forces.push_back(p);
    CHECK_THROWS_AS(validate_actions(a), Error);
  }
}

TEST_CASE("dangling anchors are rejected against a scene") {
  ProceduralSpec spec;
  PrimitiveSpec ground;
  ground.shape = "plane";
  spec.background.push_back(ground);
  PrimitiveSpec ball;
  ball.shape = "sphere";
  ball.radius = 0.04;
  ball.center = Vec3(0, 0, 0.1);
  spec.objects.push_back(ball);
  const Scene scene = build_procedural_scene(spec);
  ActionSet a;
  PointForce p;
  p.object = 0;
  p.anchor = scene.objects[0].surfels.size() - 1;
  a.point_forces.push_back(p);
  CHECK_NOTHROW(validate_actions(a, scene));
  a.point_forces[0].anchor = scene.objects[0].surfels.size();
  CHECK_THROWS_AS(validate_actions(a, scene), Error);
  a.point_forces[0].anchor = 0;
  a.point_forces[0].object = 1;
  CHECK_THROWS_AS(validate_actions(a, scene), Error);
}

TEST_CASE("actions JSON round trip") {
  ActionSet a;
  a.gravity = Vec3(0, 0, -1.6);
  WindField w;
  w.kind = WindKind::vortex;
  w.strength = 0.7;
  w.center = Vec3(0.1, 0.2, 0.3);
  w.falloff_radius = 0.4;
  w.direction = Vec3::UnitZ();
  a.winds.push_back(w);
  PointForce p;
  p.object = 0;
  p.anchor = 3;
  p.profile = {{0.0, Vec3(1, 2, 3)}, {0.25, Vec3(0, 0, 0)}};
  p.t_end = 0.5;
  a.point_forces.push_back(p);

  const ActionSet b = actions_from_json(actions_to_json(a));
  CHECK(b.gravity == a.gravity);
  REQUIRE(b.winds.size() == 1);
  CHECK(b.winds[0].kind == WindKind::vortex);
  CHECK(b.winds[0].center == w.center);
  CHECK(b.winds[0].falloff_radius == w.falloff_radius);
  REQUIRE(b.point_forces.size() == 1);
  CHECK(b.point_forces[0].anchor == 3);
  CHECK(b.point_forces[0].profile[0].force == Vec3(1, 2, 3));
  CHECK(b.point_forces[0].t_end == 0.5);
}

TEST_CASE("actions JSON rejects unknown keys and kinds") {
  CHECK_THROWS_AS(actions_from_json({{"gravity", {0, 0, -9.8}}, {"magnetism", 1}}), Error);
  CHECK_THROWS_AS(actions_from_json({{"winds", {{{"kind", "tornado"}}}}}), Error);
  CHECK_THROWS_AS(actions_from_json({{"point_forces", {{{"anchor", 0}}}}}), Error);
  CHECK_THROWS_AS(load_actions(std::filesystem::path("/nonexistent/actions.json")), Error);
}
