#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hybridsim/conditioner.hpp"
#include "hybridsim/metrics.hpp"
#include "hybridsim/procedural.hpp"
#include "hybridsim/refiner.hpp"
#include "hybridsim/simulator.hpp"
#include "json.hpp"

namespace hybridsim {

struct PipelineConfig {
  std::filesystem::path scene_path;
  std::filesystem::path actions_path;  // empty: no actions beyond gravity
  std::filesystem::path output_dir = "out";
  SimConfig sim;
  int diffusion_steps = 25;
  int s1 = 21;
  int s2 = 18;
  double gamma = 0.4;
  std::string denoiser = "toward_target";  // toward_target (coarse video) or identity_blend
  RefineOptions refine;
  bool run_refine = true;
  std::uint64_t seed = 0;
  int threads = 0;  // 0: hardware concurrency
  // Optional render size; intrinsics are rescaled from the scene camera.
  std::optional<int> width;
  std::optional<int> height;

  DiffusionSchedule schedule() const;
  void validate() const;
};

// Keys mirror the struct fields; `sim` and `refine` are nested objects.
// Unknown keys are rejected. Relative paths resolve against `base_dir`.
void apply_config_json(PipelineConfig& config, const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json config_to_json(const PipelineConfig& config);

// Camera resized to the given image size with proportionally scaled intrinsics.
Camera resized_camera(const Camera& camera, int width, int height);

struct PipelineResult {
  int exit_code = 0;  // 0 on success
  std::string stage;  // failing stage name
  std::string message;
};

// Runs simulate, render, condition, refine and metrics, writing under
// config.output_dir:
//   coarse/          trajectory snapshots
//   frames/          rgb_NNNN.ppm, flow_NNNN.flo, mask_NNNN.pgm
//   noise/           manifest.json (per-frame statistics), noise_0000.wply
//   generated/       video frames and manifest.json
//   refined/         trajectory snapshots and losses.csv
//   metrics.json
// Never throws; failures are reported with the module name as the stage.
PipelineResult run_pipeline(const PipelineConfig& config);

// Staged evaluation scenes: 1 rigid ball on a plane, 2 elastic ball on a
// plane, 3 elastic ball into liquid in a basin, 4 elastic toy duck into
// liquid.
ProceduralSpec staged_scene(int stage);
SimConfig staged_sim_config(int stage);

struct StageCheck {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool passed = false;
};

struct StageReport {
  int stage = 0;
  std::string name;
  bool completed = false;
  std::string error;
  double runtime = 0.0;  // s
  std::size_t particle_count = 0;
  MetricsReport metrics;
  std::vector<StageCheck> checks;
  bool passed() const;
};

struct StagedEvalOptions {
  // Overrides the per-stage step count (and caps the stride) when positive.
  int total_steps = 0;
  int frame_stride = 0;
};

// Runs all four stages; a failing stage does not stop the others. Writes
// staged_eval.json into output_dir when it is not empty.
std::vector<StageReport> run_staged_eval(const std::filesystem::path& output_dir,
                                         const StagedEvalOptions& options = {});
StageReport run_stage(int stage, const StagedEvalOptions& options = {});
nlohmann::json staged_report_to_json(const std::vector<StageReport>& reports);

}  // namespace hybridsim
