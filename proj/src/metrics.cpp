#include "hybridsim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "hybridsim/pbd.hpp"
#include "hybridsim/procedural.hpp"

namespace hybridsim {

namespace {

MetricsReport metrics_for(const CoarseTrajectory& traj, std::optional<std::size_t> only, int sdf_resolution) {
  MetricsReport r;
  if (traj.frames.empty()) return r;
  const Scene& first = traj.frames[0];
  if (only && *only >= first.objects.size()) throw Error("metrics: object index out of range");
  std::optional<GridSdf> sdf;
  if (!first.background.empty()) sdf.emplace(background_sdf(first, scene_bounds(first), sdf_resolution));
  auto selected = [&](std::size_t o) { return !only || *only == o; };

  for (const Scene& frame : traj.frames) {
    double pen = -std::numeric_limits<double>::infinity();
    Vec3 p = Vec3::Zero();
    double m = 0.0;
    for (std::size_t o = 0; o < frame.objects.size(); ++o) {
      if (!selected(o)) continue;
      for (const auto& q : frame.objects[o].particles) {
        if (sdf) pen = std::max(pen, -sdf->distance(q.position));
        p += q.mass * q.velocity;
        m += q.mass;
      }
    }
    r.penetration.push_back(std::isfinite(pen) ? pen : 0.0);
    r.momentum.push_back(p);
    r.mass.push_back(m);
  }
  r.max_penetration = *std::max_element(r.penetration.begin(), r.penetration.end());

  double pmax = r.momentum[0].norm(), dmax = 0.0;
  for (const auto& p : r.momentum) {
    pmax = std::max(pmax, p.norm());
    dmax = std::max(dmax, (p - r.momentum[0]).norm());
  }
  r.momentum_drift = pmax > 0.0 ? dmax / pmax : 0.0;
  for (double m : r.mass)
    r.mass_drift = std::max(r.mass_drift, r.mass[0] > 0.0 ? std::abs(m - r.mass[0]) / r.mass[0] : 0.0);

  const Scene& last = traj.frames.back();
  for (std::size_t o = 0; o < first.objects.size(); ++o) {
    if (!selected(o)) continue;
    const auto& obj0 = first.objects[o];
    const auto& objn = last.objects[o];
    if (obj0.material.kind == MaterialKind::cloth) {
      for (auto [i, j] : edge_list(obj0.edges)) {
        const double l0 = (obj0.particles[i].position - obj0.particles[j].position).norm();
        const double l = (objn.particles[i].position - objn.particles[j].position).norm();
        if (l0 > 0.0) r.max_constraint_residual = std::max(r.max_constraint_residual, std::abs(l - l0) / l0);
      }
    } else if (obj0.material.kind == MaterialKind::smoke) {
      PbdState st = make_smoke_state(obj0, first.particle_size);
      for (std::size_t i = 0; i < st.size(); ++i) st.positions[i] = objn.particles[i].position;
      r.max_constraint_residual = std::max(r.max_constraint_residual, max_density_residual(st));
    }
  }

  const std::size_t n = traj.frames.size();
  for (std::size_t k = n > 10 ? n - 10 : 0; k < n; ++k)
    for (std::size_t o = 0; o < traj.frames[k].objects.size(); ++o) {
      if (!selected(o)) continue;
      for (const auto& q : traj.frames[k].objects[o].particles)
        r.settle_velocity = std::max(r.settle_velocity, q.velocity.norm());
    }
  return r;
}

}  // namespace

MetricsReport compute_metrics(const CoarseTrajectory& trajectory, int sdf_resolution) {
  return metrics_for(trajectory, std::nullopt, sdf_resolution);
}

MetricsReport compute_object_metrics(const CoarseTrajectory& trajectory, std::size_t object, int sdf_resolution) {
  return metrics_for(trajectory, object, sdf_resolution);
}

nlohmann::json metrics_to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["penetration"] = r.penetration;
  nlohmann::json mom = nlohmann::json::array();
  for (const auto& p : r.momentum) mom.push_back({p.x(), p.y(), p.z()});
  j["momentum"] = mom;
  j["mass"] = r.mass;
  j["max_penetration"] = r.max_penetration;
  j["momentum_drift"] = r.momentum_drift;
  j["mass_drift"] = r.mass_drift;
  j["max_constraint_residual"] = r.max_constraint_residual;
  j["settle_velocity"] = r.settle_velocity;
  return j;
}

}  // namespace hybridsim
