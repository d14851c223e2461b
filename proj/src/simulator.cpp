#include "hybridsim/simulator.hpp"

#include <algorithm>
#include <cmath>

#include "hybridsim/parallel.hpp"

namespace hybridsim {

namespace {

struct Aabb {
  Vec3 lower = Vec3::Constant(1e300);
  Vec3 upper = Vec3::Constant(-1e300);
  void grow(const Vec3& x) {
    lower = lower.cwiseMin(x);
    upper = upper.cwiseMax(x);
  }
  bool overlaps(const Aabb& o, double margin) const {
    return ((lower.array() - margin) <= o.upper.array()).all() && ((o.lower.array() - margin) <= upper.array()).all();
  }
};

bool is_mpm_solid(MaterialKind k) { return k == MaterialKind::elastic || k == MaterialKind::granular; }

// Which other objects act as frozen colliders for an object of kind `self`.
bool collides_with(MaterialKind self, MaterialKind other) {
  switch (self) {
    case MaterialKind::rigid:
    case MaterialKind::cloth:
    case MaterialKind::smoke:
      return other == MaterialKind::rigid || is_mpm_solid(other);
    case MaterialKind::elastic:
    case MaterialKind::liquid:
    case MaterialKind::granular:
      return other == MaterialKind::rigid || other == MaterialKind::cloth;
  }
  return false;
}

}  // namespace

void SimConfig::validate() const {
  if (!(step_time > 0.0)) throw Error("config: step_time must be positive");
  if (substeps < 1) throw Error("config: substeps must be positive");
  if (total_steps < 1) throw Error("config: total_steps must be positive");
  if (frame_stride < 1) throw Error("config: frame_stride must be positive");
  if (total_steps % frame_stride != 0) throw Error("config: total_steps must be divisible by frame_stride");
  if (!(particle_size > 0.0)) throw Error("config: particle_size must be positive");
  if (grid_resolution < 8) throw Error("config: grid_resolution must be >= 8");
  if (pbd_iterations < 1) throw Error("config: pbd_iterations must be positive");
}

ObjectSurfels update_surfels_from_particles(const ObjectSurfels& obj) {
  if (obj.binding.size() != obj.surfels.size() || obj.rest_surfel_positions.size() != obj.surfels.size() ||
      obj.rest_particle_positions.size() != obj.particles.size())
    throw Error("update_surfels: object '" + obj.name + "' is not bound to its particles");
  ObjectSurfels out = obj;
  const std::size_t n = obj.particles.size();
  bool at_rest = true;
  for (std::size_t i = 0; i < n && at_rest; ++i) at_rest = obj.particles[i].position == obj.rest_particle_positions[i];

  if (obj.material.kind == MaterialKind::rigid && n >= 3) {
    if (at_rest) {
      for (std::size_t s = 0; s < obj.surfels.size(); ++s) {
        out.surfels[s].position = obj.rest_surfel_positions[s];
        out.surfels[s].orientation = obj.rest_surfel_orientations[s];
      }
    } else {
      std::vector<Vec3> current(n);
      std::vector<double> masses(n);
      for (std::size_t i = 0; i < n; ++i) {
        current[i] = obj.particles[i].position;
        masses[i] = obj.particles[i].mass;
      }
      const RigidTransform t = shape_match(obj.rest_particle_positions, current, masses);
      for (std::size_t s = 0; s < obj.surfels.size(); ++s) {
        out.surfels[s].position = t.apply(obj.rest_surfel_positions[s]);
        out.surfels[s].orientation = (t.rotation * obj.rest_surfel_orientations[s]).normalized();
      }
    }
  } else {
    for (std::size_t s = 0; s < obj.surfels.size(); ++s) {
      Vec3 d = Vec3::Zero();
      for (auto k : obj.binding[s]) d += obj.particles[k].position - obj.rest_particle_positions[k];
      out.surfels[s].position = obj.rest_surfel_positions[s] + d / static_cast<double>(obj.binding[s].size());
    }
  }
  for (std::size_t s = 0; s < obj.surfels.size(); ++s) {
    Vec3 v = Vec3::Zero();
    for (auto k : obj.binding[s]) v += obj.particles[k].velocity;
    out.velocities[s] = v / static_cast<double>(obj.binding[s].size());
  }
  return out;
}

struct Simulator::Impl {
  Scene scene;
  ActionSet actions;
  SimConfig config;
  std::unique_ptr<GridSdf> background;

  std::optional<MpmGrid> grid;
  MpmParticles mpm;
  std::vector<Material> mpm_materials;
  struct Range {
    std::size_t object, begin, count;
  };
  std::vector<Range> mpm_ranges;
  std::vector<std::optional<RigidState>> rigid;
  std::vector<std::optional<PbdState>> pbd;

  void substep(double t);
  void write_back();
  std::vector<Vec3> accelerations(std::size_t o, double t) const;
};

Simulator::Simulator(const Scene& scene, ActionSet actions, SimConfig config, double start_time)
    : impl_(std::make_unique<Impl>()), time_(start_time) {
  config.validate();
  validate_actions(actions, scene);
  Impl& s = *impl_;
  s.scene = scene;
  s.actions = std::move(actions);
  s.config = config;
  for (std::size_t o = 0; o < s.scene.objects.size(); ++o)
    if (!s.scene.objects[o].prepared())
      throw Error("simulator: object " + std::to_string(o) + " ('" + s.scene.objects[o].name +
                  "') has no particles or binding");

  const Bounds bounds = scene_bounds(s.scene);
  s.background = std::make_unique<GridSdf>(background_sdf(s.scene, bounds, config.grid_resolution));

  const std::size_t n_obj = s.scene.objects.size();
  s.rigid.resize(n_obj);
  s.pbd.resize(n_obj);
  for (std::size_t o = 0; o < n_obj; ++o) {
    const auto& obj = s.scene.objects[o];
    switch (obj.material.kind) {
      case MaterialKind::rigid: {
        std::vector<Vec3> pos, vel;
        std::vector<double> mass;
        for (const auto& p : obj.particles) {
          pos.push_back(p.position);
          vel.push_back(p.velocity);
          mass.push_back(p.mass);
        }
        s.rigid[o] = RigidState::from_particles(obj.rest_particle_positions, pos, vel, mass);
        break;
      }
      case MaterialKind::cloth: s.pbd[o] = make_cloth_state(obj); break;
      case MaterialKind::smoke: s.pbd[o] = make_smoke_state(obj, config.particle_size); break;
      default: {
        const auto mat_index = static_cast<std::uint32_t>(s.mpm_materials.size());
        s.mpm_materials.push_back(obj.material);
        s.mpm_ranges.push_back({o, s.mpm.size(), obj.particles.size()});
        for (const auto& p : obj.particles) s.mpm.push_back(p, mat_index);
      }
    }
  }
  if (s.mpm.size() > 0)
    s.grid.emplace(MpmGrid::covering(bounds.lower, bounds.upper, config.grid_resolution, 2.0 * config.particle_size));
}

Simulator::~Simulator() = default;

const Sdf& Simulator::background() const { return *impl_->background; }

std::vector<Vec3> Simulator::Impl::accelerations(std::size_t o, double t) const {
  const auto& obj = scene.objects[o];
  std::vector<Vec3> a(obj.particles.size());
  const Vec3 g = obj.gravity_enabled ? actions.gravity : Vec3::Zero();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = g + eval_winds(actions, obj.particles[i].position, t);
  for (const auto& pf : actions.point_forces) {
    if (pf.object != o) continue;
    const Vec3 f = eval_point_force(pf, t);
    if (f.isZero()) continue;
    const auto& bound = obj.binding[pf.anchor];
    const double share = 1.0 / static_cast<double>(bound.size());
    for (auto k : bound) a[k] += share * f / obj.particles[k].mass;
  }
  return a;
}

void Simulator::Impl::write_back() {
  for (std::size_t o = 0; o < scene.objects.size(); ++o) {
    auto& obj = scene.objects[o];
    if (rigid[o]) {
      for (std::size_t i = 0; i < obj.particles.size(); ++i) {
        obj.particles[i].position = rigid[o]->positions[i];
        obj.particles[i].velocity = rigid[o]->velocities[i];
      }
    } else if (pbd[o]) {
      for (std::size_t i = 0; i < obj.particles.size(); ++i) {
        obj.particles[i].position = pbd[o]->positions[i];
        obj.particles[i].velocity = pbd[o]->velocities[i];
      }
    }
  }
  for (const auto& r : mpm_ranges) {
    auto& obj = scene.objects[r.object];
    for (std::size_t i = 0; i < r.count; ++i) {
      auto& p = obj.particles[i];
      const std::size_t k = r.begin + i;
      p.position = mpm.positions[k];
      p.velocity = mpm.velocities[k];
      p.deformation = mpm.deformation[k];
      p.affine = mpm.affine[k];
    }
  }
}

void Simulator::Impl::substep(double t) {
  const double h = config.substep_time();
  const std::size_t n_obj = scene.objects.size();
  const double radius = 0.5 * config.particle_size;

  std::vector<Aabb> boxes(n_obj);
  double vmax = 0.0;
  for (std::size_t o = 0; o < n_obj; ++o)
    for (const auto& p : scene.objects[o].particles) {
      boxes[o].grow(p.position);
      vmax = std::max(vmax, p.velocity.norm());
    }
  const double margin = 2.0 * config.particle_size + 2.0 * vmax * h;

  // Frozen particle colliders, built only for objects some other object sees.
  std::vector<std::unique_ptr<ParticleSetSdf>> colliders(n_obj);
  auto collider = [&](std::size_t o) -> const Sdf* {
    if (!colliders[o]) {
      std::vector<Vec3> pos, vel;
      for (const auto& p : scene.objects[o].particles) {
        pos.push_back(p.position);
        vel.push_back(p.velocity);
      }
      colliders[o] = std::make_unique<ParticleSetSdf>(std::move(pos), std::move(vel), radius);
    }
    return colliders[o].get();
  };
  auto boundary_for = [&](MaterialKind kind, const Aabb& box, auto&& skip) {
    CompositeSdf c;
    c.add(background.get());
    for (std::size_t o = 0; o < n_obj; ++o) {
      if (skip(o)) continue;
      if (!collides_with(kind, scene.objects[o].material.kind)) continue;
      if (!box.overlaps(boxes[o], margin)) continue;
      c.add(collider(o));
    }
    return c;
  };

  for (std::size_t o = 0; o < n_obj; ++o) {
    const auto& obj = scene.objects[o];
    if (!rigid[o] && !pbd[o]) continue;
    const auto accel = accelerations(o, t);
    const CompositeSdf boundary = boundary_for(obj.material.kind, boxes[o], [&](std::size_t other) { return other == o; });
    if (rigid[o]) {
      std::vector<Vec3> forces(accel.size());
      for (std::size_t i = 0; i < accel.size(); ++i) forces[i] = rigid[o]->masses[i] * accel[i];
      RigidState next = rigid_step(*rigid[o], forces, h);
      ContactOptions opts;
      opts.candidate_band = std::max(opts.candidate_band, 2.0 * config.particle_size) + vmax * h;
      rigid[o] = resolve_collisions(next, boundary, obj.material.friction, opts);
    } else {
      PbdOptions opts;
      opts.iterations = config.pbd_iterations;
      if (obj.material.kind == MaterialKind::cloth) opts.damping = config.cloth_damping;
      pbd[o] = pbd_step(*pbd[o], accel, &boundary, h, 1, opts);
    }
  }

  if (!mpm_ranges.empty()) {
    std::vector<Vec3> accel(mpm.size());
    Aabb box;
    for (const auto& r : mpm_ranges) {
      const auto a = accelerations(r.object, t);
      std::copy(a.begin(), a.end(), accel.begin() + static_cast<std::ptrdiff_t>(r.begin));
      for (const auto& p : scene.objects[r.object].particles) box.grow(p.position);
    }
    const CompositeSdf boundary = boundary_for(MaterialKind::liquid, box, [&](std::size_t other) {
      return scene.objects[other].material.uses_mpm();
    });
    try {
      mpm = mpm_step(mpm, *grid, mpm_materials, accel, &boundary, h, config.mpm);
    } catch (const Error& e) {
      throw Error(std::string("mpm solver: ") + e.what());
    }
  }
  write_back();
}

void Simulator::step() {
  const int n = impl_->config.substeps;
  const double h = impl_->config.substep_time();
  for (int s = 0; s < n; ++s) impl_->substep(time_ + s * h);
  ++steps_;
  time_ += impl_->config.step_time;
}

Scene Simulator::snapshot() const {
  Scene out = impl_->scene;
  for (auto& obj : out.objects) obj = update_surfels_from_particles(obj);
  return out;
}

Scene step_scene(const Scene& scene, const ActionSet& actions, const SimConfig& config, double t) {
  Simulator sim(scene, actions, config, t);
  sim.step();
  return sim.snapshot();
}

CoarseTrajectory run_simulation(const Scene& scene, const ActionSet& actions, const SimConfig& config,
                                const std::function<void(int)>& on_frame) {
  Simulator sim(scene, actions, config);
  CoarseTrajectory traj;
  traj.frame_stride = config.frame_stride;
  traj.step_time = config.step_time;
  traj.frames.reserve(static_cast<std::size_t>(config.frame_count()));
  traj.frames.push_back(scene);
  traj.times.push_back(0.0);
  if (on_frame) on_frame(0);
  for (int step = 1; step <= config.total_steps; ++step) {
    sim.step();
    if (step % config.frame_stride == 0) {
      traj.frames.push_back(sim.snapshot());
      traj.times.push_back(sim.time());
      if (on_frame) on_frame(static_cast<int>(traj.frames.size()) - 1);
    }
  }
  return traj;
}

}  // namespace hybridsim
