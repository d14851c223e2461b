#pragma once

#include <string>
#include <vector>

#include "hybridsim/simulator.hpp"
#include "json.hpp"

namespace hybridsim {

struct MetricsReport {
  std::vector<double> penetration;  // per frame: -min background SDF over object particles (m)
  std::vector<Vec3> momentum;       // per frame, all object particles (kg m/s)
  std::vector<double> mass;         // per frame (kg)
  double max_penetration = 0.0;
  // max_t |P_t - P_0| / max(|P_0|, max_t |P_t|); 0 when nothing moves.
  double momentum_drift = 0.0;
  double mass_drift = 0.0;          // max_t |M_t - M_0| / M_0
  // Cloth: largest relative edge-length error against frame 0.
  // Smoke: largest density constraint value in the last frame.
  double max_constraint_residual = 0.0;
  double settle_velocity = 0.0;     // max particle speed over the last 10 frames (m/s)
};

// `sdf_resolution` sets the background SDF grid used for penetration.
MetricsReport compute_metrics(const CoarseTrajectory& trajectory, int sdf_resolution = 128);
// Penetration, momentum and mass restricted to one object.
MetricsReport compute_object_metrics(const CoarseTrajectory& trajectory, std::size_t object, int sdf_resolution = 128);

nlohmann::json metrics_to_json(const MetricsReport& report);

}  // namespace hybridsim
