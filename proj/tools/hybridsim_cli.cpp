#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "hybridsim/actions.hpp"
#include "hybridsim/conditioner.hpp"
#include "hybridsim/image_io.hpp"
#include "hybridsim/parallel.hpp"
#include "hybridsim/pipeline.hpp"
#include "hybridsim/refiner.hpp"
#include "hybridsim/render.hpp"
#include "hybridsim/scene_io.hpp"
#include "hybridsim/snapshot_io.hpp"
#include "json.hpp"

using namespace hybridsim;
namespace fs = std::filesystem;

namespace {

// Flags that were actually given on the command line override the config file.
struct Flags {
  std::string config;
  std::string scene, actions, out = "out";
  std::uint64_t seed = 0;
  int steps = 0, stride = 0, s1 = 0, s2 = 0, threads = 0, width = 0, height = 0, diffusion_steps = 0;
  double gamma = 0.0;
  std::string denoiser;
  bool no_refine = false;
};

std::string numbered(const char* prefix, std::size_t k, const char* ext) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%s_%04zu.%s", prefix, k, ext);
  return buf;
}

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON config file (flags override it)");
  app->add_option("--seed", f.seed, "Noise seed");
  app->add_option("--steps", f.steps, "Total simulation steps");
  app->add_option("--stride", f.stride, "Steps per output frame");
  app->add_option("--s1", f.s1, "Object injection step");
  app->add_option("--s2", f.s2, "Background injection step");
  app->add_option("--gamma", f.gamma, "Noise degradation factor");
  app->add_option("--diffusion-steps", f.diffusion_steps, "Sampler step count");
  app->add_option("--denoiser", f.denoiser, "toward_target or identity_blend");
  app->add_option("--threads", f.threads, "Worker threads (1 = deterministic single-thread mode)");
  app->add_option("--width", f.width, "Render width");
  app->add_option("--height", f.height, "Render height");
}

PipelineConfig resolve(const CLI::App* app, const Flags& f) {
  PipelineConfig c;
  if (!f.config.empty()) {
    const fs::path p = f.config;
    std::ifstream in(p);
    if (!in) throw Error("cannot open config '" + f.config + "'");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw Error("malformed config '" + f.config + "': " + e.what());
    }
    apply_config_json(c, j, p.parent_path());
  }
  auto given = [&](const char* name) {
    const CLI::Option* o = app->get_option_no_throw(name);
    return o != nullptr && o->count() > 0;
  };
  if (given("--scene")) c.scene_path = f.scene;
  if (given("--actions")) c.actions_path = f.actions;
  if (given("--out")) c.output_dir = f.out;
  if (given("--seed")) c.seed = f.seed;
  if (given("--steps")) c.sim.total_steps = f.steps;
  if (given("--stride")) c.sim.frame_stride = f.stride;
  if (given("--s1")) c.s1 = f.s1;
  if (given("--s2")) c.s2 = f.s2;
  if (given("--gamma")) c.gamma = f.gamma;
  if (given("--diffusion-steps")) c.diffusion_steps = f.diffusion_steps;
  if (given("--denoiser")) c.denoiser = f.denoiser;
  if (given("--threads")) c.threads = f.threads;
  if (given("--width")) c.width = f.width;
  if (given("--height")) c.height = f.height;
  if (given("--no-refine")) c.run_refine = false;
  return c;
}

void use_threads(const PipelineConfig& c) {
  if (c.threads > 0) set_thread_count(c.threads);
}

Camera camera_for(const Scene& scene, const PipelineConfig& c) {
  if (!c.width && !c.height) return scene.camera;
  return resized_camera(scene.camera, c.width.value_or(scene.camera.width), c.height.value_or(scene.camera.height));
}

Video read_numbered(const fs::path& dir, const char* prefix, const char* ext, Image (*reader)(const fs::path&)) {
  Video v;
  for (std::size_t k = 0; fs::exists(dir / numbered(prefix, k, ext)); ++k) v.push_back(reader(dir / numbered(prefix, k, ext)));
  return v;
}

int fail(const std::string& stage, const std::string& message) {
  std::cerr << "error [" << stage << "]: " << message << '\n';
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid physics simulation and video conditioning pipeline"};
  app.require_subcommand(1);
  Flags f;
  std::string trajectory_dir, frames_dir, video_dir;

  auto* sim = app.add_subcommand("simulate", "Simulate a scene into a coarse trajectory");
  sim->add_option("--scene", f.scene, "Scene JSON")->required();
  sim->add_option("--actions", f.actions, "Actions JSON");
  sim->add_option("--out", f.out, "Output trajectory directory");
  add_common(sim, f);

  auto* ren = app.add_subcommand("render", "Render frames, flow and masks of a trajectory");
  ren->add_option("--trajectory", trajectory_dir, "Trajectory directory")->required();
  ren->add_option("--out", f.out, "Output frames directory");
  add_common(ren, f);

  auto* cond = app.add_subcommand("condition", "Generate a video from rendered frames, flow and masks");
  cond->add_option("--frames", frames_dir, "Frames directory written by render")->required();
  cond->add_option("--out", f.out, "Output video directory");
  add_common(cond, f);

  auto* ref = app.add_subcommand("refine", "Refine a trajectory against a video");
  ref->add_option("--trajectory", trajectory_dir, "Trajectory directory")->required();
  ref->add_option("--video", video_dir, "Video directory")->required();
  ref->add_option("--out", f.out, "Output trajectory directory");
  add_common(ref, f);

  auto* pipe = app.add_subcommand("pipeline", "Run simulate, render, condition, refine and metrics");
  pipe->add_option("--scene", f.scene, "Scene JSON");
  pipe->add_option("--actions", f.actions, "Actions JSON");
  pipe->add_option("--out", f.out, "Output directory");
  pipe->add_flag("--no-refine", f.no_refine, "Skip refinement");
  add_common(pipe, f);

  auto* staged = app.add_subcommand("staged-eval", "Run the four staged physics scenes and report metrics");
  staged->add_option("--out", f.out, "Output directory");
  add_common(staged, f);

  int scene_stage = 1;
  std::string scene_out;
  auto* make = app.add_subcommand("make-scene", "Write one of the staged scenes as a procedural scene JSON");
  make->add_option("--stage", scene_stage, "Stage 1..4")->check(CLI::Range(1, 4));
  make->add_option("--out", scene_out, "Output JSON path")->required();

  CLI11_PARSE(app, argc, argv);

  CLI::App* active = app.get_subcommands().front();
  if (active == make) {
    try {
      std::ofstream out(scene_out);
      if (!out) throw Error("cannot write '" + scene_out + "'");
      out << procedural_spec_to_json(staged_scene(scene_stage)).dump(2) << '\n';
    } catch (const std::exception& e) {
      return fail("scene_model", e.what());
    }
    return 0;
  }
  PipelineConfig config;
  try {
    config = resolve(active, f);
    config.validate();
  } catch (const std::exception& e) {
    return fail("harness", e.what());
  }
  use_threads(config);

  if (active == pipe) {
    if (config.scene_path.empty()) return fail("harness", "no scene given (--scene or config 'scene')");
    const PipelineResult r = run_pipeline(config);
    if (r.exit_code != 0) return fail(r.stage, r.message);
    std::cout << "pipeline outputs written to " << config.output_dir.string() << '\n';
    return 0;
  }

  if (active == staged) {
    StagedEvalOptions opts;
    if (active->count("--steps")) opts.total_steps = config.sim.total_steps;
    if (active->count("--stride")) opts.frame_stride = config.sim.frame_stride;
    const auto reports = run_staged_eval(config.output_dir, opts);
    int failed = 0;
    for (const auto& r : reports) {
      std::printf("stage %d (%s): %s in %.1f s, %zu particles%s%s\n", r.stage, r.name.c_str(),
                  r.passed() ? "PASS" : "FAIL", r.runtime, r.particle_count, r.error.empty() ? "" : ", error: ",
                  r.error.c_str());
      for (const auto& c : r.checks)
        std::printf("  %-26s %-12.6g threshold %-10.4g %s\n", c.name.c_str(), c.value, c.threshold,
                    c.passed ? "ok" : "FAILED");
      failed += r.passed() ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
  }

  std::string stage_name = "harness";
  try {
    if (active == sim) {
      stage_name = "scene_model";
      const Scene scene = load_scene(config.scene_path);
      stage_name = "actions";
      const ActionSet actions = config.actions_path.empty() ? ActionSet{} : load_actions(config.actions_path, scene);
      stage_name = "orchestrator";
      const CoarseTrajectory traj = run_simulation(scene, actions, config.sim);
      save_trajectory(config.output_dir, traj);
      std::cout << traj.frames.size() << " frames written to " << config.output_dir.string() << '\n';
    } else if (active == ren) {
      stage_name = "orchestrator";
      const CoarseTrajectory traj = load_trajectory(trajectory_dir);
      stage_name = "renderer";
      const Camera camera = camera_for(traj.frames.at(0), config);
      const RenderedTrajectory r = render_trajectory(traj, camera);
      fs::create_directories(config.output_dir);
      for (std::size_t k = 0; k < r.rgb.size(); ++k) {
        write_ppm(config.output_dir / numbered("rgb", k, "ppm"), r.rgb[k]);
        write_pgm(config.output_dir / numbered("mask", k, "pgm"), r.mask[k]);
      }
      for (std::size_t k = 0; k < r.flow.size(); ++k) write_flo(config.output_dir / numbered("flow", k, "flo"), r.flow[k]);
      std::cout << r.rgb.size() << " frames rendered to " << config.output_dir.string() << '\n';
    } else if (active == cond) {
      stage_name = "conditioner";
      const fs::path dir = frames_dir;
      const Video rgb = read_numbered(dir, "rgb", "ppm", &read_ppm);
      const Video mask = read_numbered(dir, "mask", "pgm", &read_pgm);
      const Video flow = read_numbered(dir, "flow", "flo", &read_flo);
      if (rgb.empty()) throw Error("no rgb_NNNN.ppm frames in '" + frames_dir + "'");
      const DenoiserInterface denoiser = config.denoiser == "identity_blend" ? make_identity_blend_denoiser()
                                                                             : make_toward_target_denoiser(rgb);
      const Video v = run_conditioned_generation(denoiser, config.schedule(), rgb, flow, mask, config.seed);
      write_video(config.output_dir, v, 1.0 / (config.sim.step_time * config.sim.frame_stride));
      std::cout << v.size() << " frames generated into " << config.output_dir.string() << '\n';
    } else if (active == ref) {
      stage_name = "orchestrator";
      const CoarseTrajectory traj = load_trajectory(trajectory_dir);
      stage_name = "refiner";
      const Video video = read_video(video_dir);
      const Camera camera = camera_for(traj.frames.at(0), config);
      const RefinedTrajectory r = photometric_refine(traj, video, camera, config.refine);
      save_trajectory(config.output_dir, r.trajectory);
      write_loss_csv(config.output_dir / "losses.csv", r.losses);
      std::cout << "refined trajectory written to " << config.output_dir.string() << '\n';
    }
  } catch (const std::exception& e) {
    return fail(stage_name, e.what());
  }
  return 0;
}
