#include "hybridsim/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <thread>

#include "hybridsim/actions.hpp"
#include "hybridsim/parallel.hpp"
#include "hybridsim/render.hpp"
#include "hybridsim/scene_io.hpp"
#include "hybridsim/snapshot_io.hpp"
#include "json_util.hpp"

namespace hybridsim {

namespace {

using detail::check_keys;
using nlohmann::json;

std::string numbered(const char* prefix, std::size_t k, const char* ext) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%s_%04zu.%s", prefix, k, ext);
  return buf;
}

// Runs `body`, rethrowing any error tagged with the stage name.
struct StageError {
  std::string stage;
  std::string message;
};

template <class F>
auto stage(const char* name, F&& body) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError{name, e.what()};
  }
}

void apply_sim_json(SimConfig& c, const json& j) {
  check_keys(j, {"step_time", "substeps", "total_steps", "frame_stride", "particle_size", "grid_resolution",
                 "pbd_iterations", "cloth_damping"},
             "config.sim");
  if (j.contains("step_time")) c.step_time = j["step_time"].get<double>();
  if (j.contains("substeps")) c.substeps = j["substeps"].get<int>();
  if (j.contains("total_steps")) c.total_steps = j["total_steps"].get<int>();
  if (j.contains("frame_stride")) c.frame_stride = j["frame_stride"].get<int>();
  if (j.contains("particle_size")) c.particle_size = j["particle_size"].get<double>();
  if (j.contains("grid_resolution")) c.grid_resolution = j["grid_resolution"].get<int>();
  if (j.contains("pbd_iterations")) c.pbd_iterations = j["pbd_iterations"].get<int>();
  if (j.contains("cloth_damping")) c.cloth_damping = j["cloth_damping"].get<double>();
}

void apply_refine_json(RefineOptions& r, const json& j) {
  check_keys(j, {"position_rate", "color_rate", "max_iterations", "edge_weight", "tolerance", "backtracking",
                 "optimize_positions", "optimize_colors", "optimize_background", "huber_delta", "optimize_depth"},
             "config.refine");
  if (j.contains("position_rate")) r.position_rate = j["position_rate"].get<double>();
  if (j.contains("color_rate")) r.color_rate = j["color_rate"].get<double>();
  if (j.contains("max_iterations")) r.max_iterations = j["max_iterations"].get<int>();
  if (j.contains("edge_weight")) r.edge_weight = j["edge_weight"].get<double>();
  if (j.contains("tolerance")) r.tolerance = j["tolerance"].get<double>();
  if (j.contains("backtracking")) r.backtracking = j["backtracking"].get<int>();
  if (j.contains("optimize_positions")) r.optimize_positions = j["optimize_positions"].get<bool>();
  if (j.contains("optimize_colors")) r.optimize_colors = j["optimize_colors"].get<bool>();
  if (j.contains("optimize_background")) r.optimize_background = j["optimize_background"].get<bool>();
  if (j.contains("huber_delta")) r.huber_delta = j["huber_delta"].get<double>();
  if (j.contains("optimize_depth")) r.optimize_depth = j["optimize_depth"].get<bool>();
}

json image_stats(const Image& img) {
  double sum = 0.0, sq = 0.0;
  for (float v : img.data) {
    sum += v;
    sq += static_cast<double>(v) * v;
  }
  const double n = static_cast<double>(img.data.size());
  const double mean = n > 0 ? sum / n : 0.0;
  return {{"mean", mean}, {"variance", n > 0 ? sq / n - mean * mean : 0.0}};
}

}  // namespace

DiffusionSchedule PipelineConfig::schedule() const {
  return DiffusionSchedule::scaled_linear(diffusion_steps, s1, s2, gamma);
}

void PipelineConfig::validate() const {
  sim.validate();
  schedule().validate();
  if (s1 >= diffusion_steps) throw Error("config: s1 must be below the diffusion step count");
  refine.validate();
  if (denoiser != "toward_target" && denoiser != "identity_blend")
    throw Error("config: unknown denoiser '" + denoiser + "' (toward_target, identity_blend)");
  if (threads < 0) throw Error("config: threads must be non-negative");
  if ((width && *width <= 0) || (height && *height <= 0)) throw Error("config: width/height must be positive");
}

void apply_config_json(PipelineConfig& c, const json& j, const std::filesystem::path& base_dir) {
  check_keys(j, {"scene", "actions", "output", "sim", "diffusion_steps", "s1", "s2", "gamma", "denoiser", "refine",
                 "run_refine", "seed", "threads", "width", "height"},
             "config");
  auto path = [&](const char* key) {
    std::filesystem::path p = j[key].get<std::string>();
    return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  };
  try {
    if (j.contains("scene")) c.scene_path = path("scene");
    if (j.contains("actions")) c.actions_path = path("actions");
    if (j.contains("output")) c.output_dir = path("output");
    if (j.contains("sim")) apply_sim_json(c.sim, j["sim"]);
    if (j.contains("diffusion_steps")) c.diffusion_steps = j["diffusion_steps"].get<int>();
    if (j.contains("s1")) c.s1 = j["s1"].get<int>();
    if (j.contains("s2")) c.s2 = j["s2"].get<int>();
    if (j.contains("gamma")) c.gamma = j["gamma"].get<double>();
    if (j.contains("denoiser")) c.denoiser = j["denoiser"].get<std::string>();
    if (j.contains("refine")) apply_refine_json(c.refine, j["refine"]);
    if (j.contains("run_refine")) c.run_refine = j["run_refine"].get<bool>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("threads")) c.threads = j["threads"].get<int>();
    if (j.contains("width")) c.width = j["width"].get<int>();
    if (j.contains("height")) c.height = j["height"].get<int>();
  } catch (const json::exception& e) {
    throw Error(std::string("config: wrong value type: ") + e.what());
  }
}

json config_to_json(const PipelineConfig& c) {
  json j;
  j["scene"] = c.scene_path.string();
  j["actions"] = c.actions_path.string();
  j["output"] = c.output_dir.string();
  j["sim"] = {{"step_time", c.sim.step_time},         {"substeps", c.sim.substeps},
              {"total_steps", c.sim.total_steps},     {"frame_stride", c.sim.frame_stride},
              {"particle_size", c.sim.particle_size}, {"grid_resolution", c.sim.grid_resolution},
              {"pbd_iterations", c.sim.pbd_iterations}, {"cloth_damping", c.sim.cloth_damping}};
  j["diffusion_steps"] = c.diffusion_steps;
  j["s1"] = c.s1;
  j["s2"] = c.s2;
  j["gamma"] = c.gamma;
  j["denoiser"] = c.denoiser;
  j["refine"] = {{"position_rate", c.refine.position_rate},
                 {"color_rate", c.refine.color_rate},
                 {"max_iterations", c.refine.max_iterations},
                 {"edge_weight", c.refine.edge_weight},
                 {"tolerance", c.refine.tolerance},
                 {"backtracking", c.refine.backtracking},
                 {"optimize_positions", c.refine.optimize_positions},
                 {"optimize_colors", c.refine.optimize_colors},
                 {"optimize_background", c.refine.optimize_background},
                 {"huber_delta", c.refine.huber_delta},
                 {"optimize_depth", c.refine.optimize_depth}};
  j["run_refine"] = c.run_refine;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  if (c.width) j["width"] = *c.width;
  if (c.height) j["height"] = *c.height;
  return j;
}

Camera resized_camera(const Camera& camera, int width, int height) {
  Camera c = camera;
  const double sx = static_cast<double>(width) / camera.width, sy = static_cast<double>(height) / camera.height;
  c.fx *= sx;
  c.fy *= sy;
  c.cx = (camera.cx + 0.5) * sx - 0.5;
  c.cy = (camera.cy + 0.5) * sy - 0.5;
  c.width = width;
  c.height = height;
  return c;
}

PipelineResult run_pipeline(const PipelineConfig& config) {
  PipelineResult result;
  try {
    stage("harness", [&] {
      config.validate();
      set_thread_count(config.threads > 0 ? config.threads
                                          : static_cast<int>(std::max(1u, std::thread::hardware_concurrency())));
      std::filesystem::create_directories(config.output_dir);
      detail::write_json_file(config.output_dir / "config.json", config_to_json(config));
      return 0;
    });
    const std::filesystem::path& out = config.output_dir;
    Scene scene = stage("scene_model", [&] { return load_scene(config.scene_path); });
    const ActionSet actions = stage("actions", [&] {
      return config.actions_path.empty() ? ActionSet{} : load_actions(config.actions_path, scene);
    });
    Camera camera = scene.camera;
    if (config.width || config.height)
      camera = resized_camera(scene.camera, config.width.value_or(scene.camera.width),
                              config.height.value_or(scene.camera.height));

    const CoarseTrajectory coarse = stage("orchestrator", [&] {
      CoarseTrajectory t = run_simulation(scene, actions, config.sim);
      save_trajectory(out / "coarse", t);
      return t;
    });

    const RenderedTrajectory frames = stage("renderer", [&] {
      RenderedTrajectory r = render_trajectory(coarse, camera);
      const auto dir = out / "frames";
      std::filesystem::create_directories(dir);
      for (std::size_t k = 0; k < r.rgb.size(); ++k) {
        write_ppm(dir / numbered("rgb", k, "ppm"), r.rgb[k]);
        write_pgm(dir / numbered("mask", k, "pgm"), r.mask[k]);
      }
      for (std::size_t k = 0; k < r.flow.size(); ++k) write_flo(dir / numbered("flow", k, "flo"), r.flow[k]);
      return r;
    });

    const double fps = 1.0 / (config.sim.step_time * config.sim.frame_stride);
    const Video generated = stage("conditioner", [&] {
      const DiffusionSchedule schedule = config.schedule();
      const StructuredNoise noise =
          build_structured_noise(frames.flow, camera.width, camera.height, schedule.gamma, config.seed);
      const auto dir = out / "noise";
      std::filesystem::create_directories(dir);
      json manifest;
      manifest["seed"] = config.seed;
      manifest["gamma"] = schedule.gamma;
      manifest["width"] = camera.width;
      manifest["height"] = camera.height;
      manifest["frame_count"] = noise.frames.size();
      manifest["alpha"] = schedule.alpha;
      json stats = json::array();
      for (const auto& f : noise.frames) stats.push_back(image_stats(f));
      manifest["frames"] = stats;
      detail::write_json_file(dir / "manifest.json", manifest);
      WplyTable t;
      t.width = 3;
      t.rows = static_cast<std::uint32_t>(noise.frames[0].pixel_count());
      t.data = noise.frames[0].data;
      write_wply(dir / "noise_0000.wply", t);

      const DenoiserInterface denoiser = config.denoiser == "identity_blend"
                                             ? make_identity_blend_denoiser()
                                             : make_toward_target_denoiser(frames.rgb);
      Video v = run_conditioned_generation(denoiser, schedule, frames.rgb, noise, frames.mask);
      write_video(out / "generated", v, fps);
      return v;
    });

    const RefinedTrajectory refined = stage("refiner", [&] {
      RefinedTrajectory r;
      if (!config.run_refine) {
        r.trajectory = coarse;
        r.losses.resize(coarse.frames.size());
      } else {
        r = photometric_refine(coarse, generated, camera, config.refine);
      }
      save_trajectory(out / "refined", r.trajectory);
      write_loss_csv(out / "refined" / "losses.csv", r.losses);
      return r;
    });

    stage("harness", [&] {
      const MetricsReport m = compute_metrics(coarse, config.sim.grid_resolution);
      json j = metrics_to_json(m);
      j["frame_count"] = coarse.frames.size();
      j["width"] = camera.width;
      j["height"] = camera.height;
      json final_losses = json::array();
      for (const auto& l : refined.losses) final_losses.push_back(l.empty() ? 0.0 : l.back());
      j["refine_final_loss"] = final_losses;
      detail::write_json_file(out / "metrics.json", j);
      return 0;
    });
  } catch (const StageError& e) {
    result.exit_code = 1;
    result.stage = e.stage;
    result.message = e.message;
  }
  return result;
}

ProceduralSpec staged_scene(int stage_index) {
  if (stage_index < 1 || stage_index > 4) throw Error("staged_scene: stage must be 1..4");
  ProceduralSpec spec;
  const double r = 0.05;
  if (stage_index <= 2) {
    PrimitiveSpec plane;
    plane.shape = "plane";
    plane.name = "ground";
    plane.size = Vec3(1.0, 1.0, 0.0);
    plane.color = Vec3(0.75, 0.75, 0.7);
    plane.color2 = Vec3(0.45, 0.45, 0.42);
    spec.background.push_back(plane);
    PrimitiveSpec ball;
    ball.shape = "sphere";
    ball.name = "ball";
    ball.radius = r;
    ball.center = Vec3(0.0, 0.0, 0.45 + r);
    ball.color = Vec3(0.85, 0.2, 0.15);
    ball.material = Material::defaults(stage_index == 1 ? MaterialKind::rigid : MaterialKind::elastic);
    spec.objects.push_back(ball);
    return spec;
  }
  PrimitiveSpec basin;
  basin.shape = "basin";
  basin.name = "basin";
  basin.size = Vec3(0.3, 0.3, 0.1);
  basin.color = Vec3(0.7, 0.7, 0.65);
  basin.color2 = Vec3(0.5, 0.5, 0.47);
  spec.background.push_back(basin);
  PrimitiveSpec solid;
  solid.name = stage_index == 3 ? "ball" : "duck";
  solid.shape = stage_index == 3 ? "sphere" : "toy_duck";
  solid.radius = r;
  solid.center = Vec3(0.0, 0.0, 0.25);
  solid.color = stage_index == 3 ? Vec3(0.85, 0.2, 0.15) : Vec3(0.95, 0.8, 0.15);
  solid.material = Material::defaults(MaterialKind::elastic);
  spec.objects.push_back(solid);
  PrimitiveSpec water;
  water.shape = "fluid_block";
  water.name = "water";
  water.size = Vec3(0.26, 0.26, 0.04);
  water.center = Vec3(0.0, 0.0, 0.021);
  water.color = Vec3(0.25, 0.45, 0.85);
  spec.objects.push_back(water);
  spec.camera.eye = Vec3(0.0, -0.9, 0.55);
  spec.camera.target = Vec3(0.0, 0.0, 0.05);
  return spec;
}

SimConfig staged_sim_config(int stage_index) {
  SimConfig c;
  if (stage_index >= 3) c.total_steps = 100;
  return c;
}

bool StageReport::passed() const {
  if (!completed) return false;
  for (const auto& c : checks)
    if (!c.passed) return false;
  return true;
}

StageReport run_stage(int stage_index, const StagedEvalOptions& options) {
  static const char* names[] = {"", "rigid ball on plane", "elastic ball on plane", "elastic ball into liquid",
                                "elastic duck into liquid"};
  StageReport rep;
  rep.stage = stage_index;
  rep.name = names[std::clamp(stage_index, 0, 4)];
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const Scene scene = build_procedural_scene(staged_scene(stage_index));
    SimConfig cfg = staged_sim_config(stage_index);
    if (options.total_steps > 0) cfg.total_steps = options.total_steps;
    if (options.frame_stride > 0) cfg.frame_stride = options.frame_stride;
    cfg.frame_stride = std::min(cfg.frame_stride, cfg.total_steps);
    for (const auto& o : scene.objects) rep.particle_count += o.particles.size();
    const CoarseTrajectory traj = run_simulation(scene, ActionSet{}, cfg);
    rep.metrics = compute_metrics(traj, cfg.grid_resolution);
    const MetricsReport solid = compute_object_metrics(traj, 0, cfg.grid_resolution);
    auto add = [&](std::string name, double value, double threshold, bool passed) {
      rep.checks.push_back({std::move(name), value, threshold, passed});
    };
    auto com_z = [&](std::size_t k) {
      Vec3 c = Vec3::Zero();
      double m = 0.0;
      for (const auto& p : traj.frames[k].objects[0].particles) {
        c += p.mass * p.position;
        m += p.mass;
      }
      return c.z() / m;
    };
    // First frame whose solid particles come within contact range of the
    // ground: half a particle, or one grid cell (2 particle sizes) for MPM
    // solids, whose grid boundary acts at cell resolution.
    const double gap = scene.objects[0].material.uses_mpm() ? 2.0 * cfg.particle_size : 0.5 * cfg.particle_size;
    std::size_t contact = traj.frames.size();
    for (std::size_t k = 0; k < traj.frames.size() && contact == traj.frames.size(); ++k)
      if (solid.penetration[k] >= -gap) contact = k;

    if (stage_index == 1) {
      add("contact_frame", static_cast<double>(contact), 2.0, contact >= 1 && contact <= 2);
      double worst = 0.0;
      const double g = 9.8;
      for (std::size_t k = 1; k < std::min(contact, traj.frames.size()); ++k) {
        const double t = traj.times[k];
        const double drop = com_z(0) - com_z(k), expected = 0.5 * g * t * t;
        worst = std::max(worst, std::abs(drop - expected) / expected);
      }
      add("ballistic_relative_error", worst, 0.01, worst < 0.01);
    }
    if (stage_index == 2) {
      double peak = -std::numeric_limits<double>::infinity();
      for (std::size_t k = contact; k < traj.frames.size(); ++k) peak = std::max(peak, com_z(k));
      const double ratio = contact < traj.frames.size() ? peak / com_z(0) : 0.0;
      add("contact_reached", contact < traj.frames.size() ? 1.0 : 0.0, 1.0, contact < traj.frames.size());
      add("rebound_height_ratio", ratio, 1.0, ratio < 1.0);
    }
    if (stage_index >= 3) {
      const MetricsReport liquid = compute_object_metrics(traj, 1, cfg.grid_resolution);
      std::size_t count0 = traj.frames.front().objects[1].particles.size();
      std::size_t count_end = traj.frames.back().objects[1].particles.size();
      add("liquid_mass_drift", liquid.mass_drift + (count0 == count_end ? 0.0 : 1.0), 0.0,
          liquid.mass_drift == 0.0 && count0 == count_end);
      add("liquid_penetration", liquid.max_penetration, 1e-3, liquid.max_penetration < 1e-3);
    }
    add("max_penetration", rep.metrics.max_penetration, 1e-3, rep.metrics.max_penetration < 1e-3);
    rep.completed = true;
  } catch (const std::exception& e) {
    rep.error = e.what();
  }
  rep.runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

json staged_report_to_json(const std::vector<StageReport>& reports) {
  json arr = json::array();
  for (const auto& r : reports) {
    json j;
    j["stage"] = r.stage;
    j["name"] = r.name;
    j["completed"] = r.completed;
    j["passed"] = r.passed();
    j["error"] = r.error;
    j["runtime_seconds"] = r.runtime;
    j["particle_count"] = r.particle_count;
    j["metrics"] = metrics_to_json(r.metrics);
    json checks = json::array();
    for (const auto& c : r.checks)
      checks.push_back({{"name", c.name}, {"value", c.value}, {"threshold", c.threshold}, {"passed", c.passed}});
    j["checks"] = checks;
    arr.push_back(j);
  }
  return {{"stages", arr}};
}

std::vector<StageReport> run_staged_eval(const std::filesystem::path& output_dir, const StagedEvalOptions& options) {
  std::vector<StageReport> reports;
  for (int s = 1; s <= 4; ++s) reports.push_back(run_stage(s, options));
  if (!output_dir.empty()) {
    std::filesystem::create_directories(output_dir);
    detail::write_json_file(output_dir / "staged_eval.json", staged_report_to_json(reports));
  }
  return reports;
}

}  // namespace hybridsim
