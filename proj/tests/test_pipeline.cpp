#include <filesystem>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "hybridsim/parallel.hpp"
#include "hybridsim/pipeline.hpp"
#include "hybridsim/scene_io.hpp"
#include "hybridsim/snapshot_io.hpp"

using namespace hybridsim;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hybridsim_test_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_stage_scene(const fs::path& dir, int stage) {
  const fs::path p = dir / ("stage" + std::to_string(stage) + ".json");
  std::ofstream(p) << procedural_spec_to_json(staged_scene(stage)).dump(2);
  return p;
}

PipelineConfig small_config(const fs::path& dir, int stage) {
  PipelineConfig c;
  c.scene_path = write_stage_scene(dir, stage);
  c.output_dir = dir / "out";
  c.sim.total_steps = 60;
  c.sim.frame_stride = 20;
  c.width = 96;
  c.height = 64;
  c.threads = 1;
  c.seed = 3;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("default configuration accounts for 49 frames at 480 x 720") {
  PipelineConfig c;
  CHECK(c.sim.total_steps == 960);
  CHECK(c.sim.frame_stride == 20);
  CHECK(c.sim.frame_count() == 49);
  const Scene scene = build_procedural_scene(staged_scene(1));
  CHECK(scene.camera.width == 720);
  CHECK(scene.camera.height == 480);
  const DiffusionSchedule s = c.schedule();
  CHECK(s.steps == 25);
  CHECK(s.s1 == 21);
  CHECK(s.s2 == 18);
  CHECK(s.gamma == 0.4);
}

TEST_CASE("config json round trip and rejection") {
  PipelineConfig c;
  c.seed = 42;
  c.sim.total_steps = 100;
  c.refine.edge_weight = 0.5;
  c.denoiser = "identity_blend";
  PipelineConfig d;
  apply_config_json(d, config_to_json(c));
  CHECK(d.seed == 42);
  CHECK(d.sim.total_steps == 100);
  CHECK(d.refine.edge_weight == 0.5);
  CHECK(d.denoiser == "identity_blend");
  CHECK_THROWS_AS(apply_config_json(d, nlohmann::json{{"no_such_key", 1}}), Error);
  PipelineConfig bad;
  bad.denoiser = "magic";
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("resized camera keeps the field of view") {
  const Camera c = build_procedural_scene(staged_scene(1)).camera;
  const Camera r = resized_camera(c, 360, 240);
  CHECK(r.fx == doctest::Approx(c.fx / 2));
  CHECK((r.cx + 0.5) == doctest::Approx((c.cx + 0.5) / 2));
}

TEST_CASE("a missing scene fails in the scene model stage") {
  const fs::path dir = scratch("missing");
  PipelineConfig c;
  c.scene_path = dir / "does_not_exist.json";
  c.output_dir = dir / "out";
  const PipelineResult r = run_pipeline(c);
  CHECK(r.exit_code != 0);
  CHECK(r.stage == "scene_model");
}

TEST_CASE("toward the coarse video the refined trajectory equals the coarse one") {
  const fs::path dir = scratch("fixed_point");
  const PipelineConfig c = small_config(dir, 1);
  const PipelineResult r = run_pipeline(c);
  REQUIRE_MESSAGE(r.exit_code == 0, r.stage << ": " << r.message);
  const CoarseTrajectory coarse = load_trajectory(c.output_dir / "coarse");
  const CoarseTrajectory refined = load_trajectory(c.output_dir / "refined");
  REQUIRE(coarse.frames.size() == 4);
  REQUIRE(refined.frames.size() == 4);
  double worst = 0.0;
  for (std::size_t k = 0; k < coarse.frames.size(); ++k)
    for (std::size_t i = 0; i < coarse.frames[k].objects[0].surfels.size(); ++i)
      worst = std::max(worst, (coarse.frames[k].objects[0].surfels[i].position -
                               refined.frames[k].objects[0].surfels[i].position)
                                  .norm());
  CHECK(worst < 1e-4);
  for (const char* f : {"metrics.json", "config.json", "noise/manifest.json", "generated/manifest.json",
                        "refined/losses.csv", "frames/rgb_0000.ppm", "frames/flow_0000.flo", "frames/mask_0003.pgm"})
    CHECK_MESSAGE(fs::exists(c.output_dir / f), f);
}

TEST_CASE("single-threaded runs are byte-identical") {
  const fs::path dir = scratch("determinism");
  PipelineConfig a = small_config(dir, 2);
  a.output_dir = dir / "a";
  PipelineConfig b = a;
  b.output_dir = dir / "b";
  REQUIRE(run_pipeline(a).exit_code == 0);
  REQUIRE(run_pipeline(b).exit_code == 0);
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.output_dir)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a.output_dir);
    if (rel == "config.json") continue;  // records the output directory
    CHECK_MESSAGE(slurp(e.path()) == slurp(b.output_dir / rel), rel.string());
    ++compared;
  }
  CHECK(compared > 20);
}

TEST_CASE("stage 1 of the staged evaluation passes") {
  const StageReport r = run_stage(1);
  CHECK(r.completed);
  for (const auto& c : r.checks) CHECK_MESSAGE(c.passed, c.name << " = " << c.value);
  CHECK(r.runtime < 30.0);
}

TEST_CASE("staged scenes are well formed") {
  for (int s = 1; s <= 4; ++s) {
    const Scene scene = build_procedural_scene(staged_scene(s));
    CHECK(validate_scene(scene).empty());
  }
  CHECK_THROWS_AS(staged_scene(5), Error);
}
