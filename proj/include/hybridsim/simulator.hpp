#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "hybridsim/actions.hpp"
#include "hybridsim/mpm.hpp"
#include "hybridsim/pbd.hpp"
#include "hybridsim/procedural.hpp"
#include "hybridsim/rigid.hpp"
#include "hybridsim/scene.hpp"

namespace hybridsim {

struct SimConfig {
  double step_time = 1e-2;    // s
  int substeps = 10;
  int total_steps = 960;
  int frame_stride = 20;
  double particle_size = 1e-2;  // m
  int grid_resolution = 128;
  int pbd_iterations = 10;
  double cloth_damping = 4.0;   // 1/s, velocity decay for cloth
  MpmOptions mpm;

  double substep_time() const { return step_time / substeps; }
  int frame_count() const { return total_steps / frame_stride + 1; }
  // Throws Error naming the offending field.
  void validate() const;
};

struct CoarseTrajectory {
  std::vector<Scene> frames;  // frame k is the scene after k * frame_stride steps
  std::vector<double> times;  // s
  int frame_stride = 0;
  double step_time = 0.0;
};

// Moves surfels with their bound particles: rigid objects follow the
// shape-matched transform (positions and orientations); other objects are
// displaced by the mean displacement of their bound particles. Surfel
// velocities are refreshed from the particles.
ObjectSurfels update_surfels_from_particles(const ObjectSurfels& object);

// Steps all objects of a prepared scene. Collision geometry (background SDF,
// MPM grid) is built once at construction.
class Simulator {
 public:
  Simulator(const Scene& scene, ActionSet actions, SimConfig config, double start_time = 0.0);
  ~Simulator();
  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  // Advances one step (config.substeps substeps).
  void step();
  double time() const { return time_; }
  long steps_taken() const { return steps_; }
  // Current scene with particles written back and surfels updated.
  Scene snapshot() const;
  const Sdf& background() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  double time_ = 0.0;
  long steps_ = 0;
};

// One step from time t. Builds a fresh Simulator, so prefer
// run_simulation for long runs.
Scene step_scene(const Scene& scene, const ActionSet& actions, const SimConfig& config, double t);

// Runs config.total_steps steps and snapshots every frame_stride steps.
// `on_frame` (optional) is called after each snapshot with the frame index.
CoarseTrajectory run_simulation(const Scene& scene, const ActionSet& actions, const SimConfig& config,
                                const std::function<void(int)>& on_frame = {});

}  // namespace hybridsim
