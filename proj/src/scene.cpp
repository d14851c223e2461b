#include "hybridsim/scene.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

#include "hybridsim/math.hpp"
#include "hybridsim/spatial_grid.hpp"

namespace hybridsim {

namespace {

constexpr double kClothThickness = 1e-3;  // m, converts volumetric density to areal

bool finite_surfel(const Surfel& s) {
  return s.position.allFinite() && s.orientation.coeffs().allFinite() && s.scale.allFinite() &&
         std::isfinite(s.opacity) && s.color.allFinite();
}

void check_surfel(const Surfel& s, int object, std::size_t index, std::string_view field,
                  std::vector<Diagnostic>& out) {
  auto report = [&](std::string msg) {
    out.push_back({object, index, std::string(field), std::move(msg)});
  };
  if (!finite_surfel(s)) {
    report("surfel " + std::to_string(index) + " has a non-finite field");
    return;
  }
  if (std::abs(s.orientation.norm() - 1.0) > 1e-6) report("surfel " + std::to_string(index) + " quaternion not unit");
  if (!(s.scale.x() > 0.0 && s.scale.y() > 0.0)) report("surfel " + std::to_string(index) + " scale not positive");
  if (s.opacity < 0.0 || s.opacity > 1.0) report("surfel " + std::to_string(index) + " opacity outside [0,1]");
  if ((s.color.array() < 0.0).any() || (s.color.array() > 1.0).any())
    report("surfel " + std::to_string(index) + " color outside [0,1]");
}

}  // namespace

std::string_view to_string(MaterialKind kind) {
  switch (kind) {
    case MaterialKind::rigid: return "rigid";
    case MaterialKind::elastic: return "elastic";
    case MaterialKind::cloth: return "cloth";
    case MaterialKind::smoke: return "smoke";
    case MaterialKind::liquid: return "liquid";
    case MaterialKind::granular: return "granular";
  }
  return "rigid";
}

MaterialKind material_kind_from_string(std::string_view name) {
  for (auto k : {MaterialKind::rigid, MaterialKind::elastic, MaterialKind::cloth, MaterialKind::smoke,
                 MaterialKind::liquid, MaterialKind::granular})
    if (to_string(k) == name) return k;
  throw Error("unknown material kind '" + std::string(name) + "'");
}

Material Material::defaults(MaterialKind kind) {
  Material m;
  m.kind = kind;
  switch (kind) {
    case MaterialKind::rigid: m.density = 1000.0; break;
    case MaterialKind::elastic: m.youngs = 3e5; break;
    case MaterialKind::liquid: m.youngs = 1e7; break;
    case MaterialKind::granular:
      m.density = 1600.0;
      m.youngs = 1e6;
      break;
    case MaterialKind::cloth: m.density = 300.0; break;
    case MaterialKind::smoke: m.density = 1.0; break;
  }
  return m;
}

Lame lame_parameters(double youngs, double poisson) {
  return {youngs / (2.0 * (1.0 + poisson)), youngs * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson))};
}

void add_edge(Adjacency& adjacency, std::uint32_t i, std::uint32_t j) {
  if (i == j) return;
  const std::size_t need = std::max(i, j) + 1;
  if (adjacency.size() < need) adjacency.resize(need);
  auto insert = [](std::vector<std::uint32_t>& list, std::uint32_t v) {
    auto it = std::lower_bound(list.begin(), list.end(), v);
    if (it == list.end() || *it != v) list.insert(it, v);
  };
  insert(adjacency[i], j);
  insert(adjacency[j], i);
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> edge_list(const Adjacency& adjacency) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  for (std::uint32_t i = 0; i < adjacency.size(); ++i)
    for (std::uint32_t j : adjacency[i])
      if (i < j) out.emplace_back(i, j);
  return out;
}

std::size_t edge_count(const Adjacency& adjacency) { return edge_list(adjacency).size(); }

double ObjectSurfels::total_mass() const {
  double m = 0.0;
  for (const auto& p : particles) m += p.mass;
  return m;
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double vertical_fov_deg, int width,
                       int height) {
  Camera cam;
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(up);
  if (x.norm() < 1e-9) x = z.unitOrthogonal();
  x.normalize();
  const Vec3 y = z.cross(x);
  cam.rotation.row(0) = x.transpose();
  cam.rotation.row(1) = y.transpose();
  cam.rotation.row(2) = z.transpose();
  cam.translation = -cam.rotation * eye;
  cam.width = width;
  cam.height = height;
  cam.fy = 0.5 * height / std::tan(0.5 * vertical_fov_deg * kPi / 180.0);
  cam.fx = cam.fy;
  cam.cx = 0.5 * (width - 1);
  cam.cy = 0.5 * (height - 1);
  return cam;
}

std::vector<Diagnostic> validate_material(const Material& m, int object) {
  std::vector<Diagnostic> out;
  auto report = [&](std::string field, std::string msg) { out.push_back({object, 0, std::move(field), std::move(msg)}); };
  if (!(m.density > 0.0) || !std::isfinite(m.density)) report("material.density", "density must be positive");
  if (m.kind == MaterialKind::rigid && !(m.friction >= 0.0)) report("material.friction", "friction must be >= 0");
  if (m.uses_mpm()) {
    if (!(m.youngs > 0.0) || !std::isfinite(m.youngs)) report("material.youngs", "Young's modulus must be positive");
    if (!(m.poisson >= 0.0 && m.poisson < 0.5)) report("material.poisson", "Poisson ratio must lie in [0, 0.5)");
  }
  if (m.kind == MaterialKind::granular && !(m.friction_angle > 0.0 && m.friction_angle < 90.0))
    report("material.friction_angle", "friction angle must lie in (0, 90) degrees");
  if (m.kind == MaterialKind::cloth && !(m.stretch_compliance >= 0.0 && m.bending_compliance >= 0.0))
    report("material.compliance", "compliances must be >= 0");
  if (m.kind == MaterialKind::smoke && !(m.viscosity >= 0.0)) report("material.viscosity", "viscosity must be >= 0");
  return out;
}

std::vector<Diagnostic> validate_object(const ObjectSurfels& obj, int object) {
  std::vector<Diagnostic> out;
  const std::size_t n = obj.surfels.size();
  if (n == 0) out.push_back({object, 0, "surfels", "object has no surfels"});
  for (std::size_t i = 0; i < n; ++i) check_surfel(obj.surfels[i], object, i, "surfels", out);

  if (obj.edges.size() > n) out.push_back({object, 0, "edges", "edge matrix larger than surfel count"});
  bool symmetric = true;
  for (std::uint32_t i = 0; i < obj.edges.size(); ++i)
    for (std::uint32_t j : obj.edges[i]) {
      if (j == i) {
        out.push_back({object, i, "edges", "edge matrix has a nonzero diagonal at " + std::to_string(i)});
        continue;
      }
      if (j >= n) {
        out.push_back({object, i, "edges", "edge references invalid surfel " + std::to_string(j)});
        continue;
      }
      const auto& back = j < obj.edges.size() ? obj.edges[j] : std::vector<std::uint32_t>{};
      if (std::find(back.begin(), back.end(), i) == back.end()) symmetric = false;
    }
  if (!symmetric) out.push_back({object, 0, "edges", "edges not symmetric"});

  if (obj.velocities.size() != n) out.push_back({object, 0, "velocities", "velocity count differs from surfel count"});
  for (std::size_t i = 0; i < obj.velocities.size(); ++i)
    if (!obj.velocities[i].allFinite()) out.push_back({object, i, "velocities", "non-finite velocity " + std::to_string(i)});

  for (std::size_t i = 0; i < obj.particles.size(); ++i) {
    const auto& p = obj.particles[i];
    if (!p.position.allFinite() || !p.velocity.allFinite() || !std::isfinite(p.mass))
      out.push_back({object, i, "particles", "particle " + std::to_string(i) + " has a non-finite field"});
    else if (!(p.mass > 0.0))
      out.push_back({object, i, "particles", "particle " + std::to_string(i) + " has non-positive mass"});
  }
  for (std::uint32_t pin : obj.pinned)
    if (pin >= obj.particles.size() && pin >= n)
      out.push_back({object, pin, "pinned", "pinned index out of range"});

  if (!obj.binding.empty()) {
    if (obj.binding.size() != n) out.push_back({object, 0, "binding", "binding count differs from surfel count"});
    const std::size_t expect = std::min(kBindingSize, obj.particles.size());
    for (std::size_t i = 0; i < obj.binding.size(); ++i) {
      const auto& b = obj.binding[i];
      bool ok = b.size() == expect;
      for (auto idx : b) ok = ok && idx < obj.particles.size();
      if (!ok) out.push_back({object, i, "binding", "invalid binding for surfel " + std::to_string(i)});
    }
  }
  auto mat = validate_material(obj.material, object);
  out.insert(out.end(), mat.begin(), mat.end());
  return out;
}

std::vector<Diagnostic> validate_scene(const Scene& scene) {
  std::vector<Diagnostic> out;
  const Camera& c = scene.camera;
  if (c.width <= 0 || c.height <= 0) out.push_back({-1, 0, "camera", "image size must be positive"});
  if (!(c.fx > 0.0 && c.fy > 0.0) || !std::isfinite(c.cx) || !std::isfinite(c.cy) || !c.rotation.allFinite() ||
      !c.translation.allFinite())
    out.push_back({-1, 0, "camera", "invalid intrinsics or pose"});
  else if (std::abs(c.rotation.determinant() - 1.0) > 1e-6 ||
           (c.rotation * c.rotation.transpose() - Mat3::Identity()).norm() > 1e-6)
    out.push_back({-1, 0, "camera", "camera rotation is not orthonormal"});
  if (scene.background.empty()) out.push_back({-1, 0, "background", "background is empty"});
  for (std::size_t i = 0; i < scene.background.size(); ++i)
    check_surfel(scene.background[i], -1, i, "background", out);
  if (!(scene.particle_size > 0.0)) out.push_back({-1, 0, "particle_size", "particle size must be positive"});
  for (std::size_t o = 0; o < scene.objects.size(); ++o) {
    auto d = validate_object(scene.objects[o], static_cast<int>(o));
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

ObjectSurfels fill_interior(const ObjectSurfels& obj, double h) {
  if (!(h > 0.0)) throw Error("fill_interior: particle size must be positive");
  if (obj.surfels.empty()) throw Error("fill_interior: object '" + obj.name + "' has no surfels");
  ObjectSurfels out = obj;
  out.particles.clear();
  out.binding.clear();
  const std::size_t ns = obj.surfels.size();
  Vec3 mean_velocity = Vec3::Zero();
  for (std::size_t i = 0; i < ns; ++i) {
    Particle p;
    p.position = obj.surfels[i].position;
    p.velocity = i < obj.velocities.size() ? obj.velocities[i] : Vec3::Zero();
    mean_velocity += p.velocity;
    out.particles.push_back(p);
  }
  mean_velocity /= static_cast<double>(ns);
  out.surface_particle_count = ns;
  const double rho = obj.material.density;

  if (!obj.material.is_volumetric()) {
    const double m = rho * h * h * kClothThickness;
    for (auto& p : out.particles) {
      p.mass = m;
      p.volume = m / rho;
    }
    return out;
  }

  // Voxelize the surfel disks at the particle spacing.
  Vec3 lo = obj.surfels[0].position, hi = lo;
  for (const auto& s : obj.surfels) {
    lo = lo.cwiseMin(s.position);
    hi = hi.cwiseMax(s.position);
  }
  lo -= Vec3::Constant(3.0 * h);
  hi += Vec3::Constant(3.0 * h);
  std::array<int, 3> dims{};
  for (int a = 0; a < 3; ++a) dims[a] = static_cast<int>(std::ceil((hi[a] - lo[a]) / h));
  const std::size_t total = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  if (total > 200'000'000ULL) throw Error("fill_interior: object '" + obj.name + "' too large for particle size");
  auto vid = [&](int i, int j, int k) { return (static_cast<std::size_t>(k) * dims[1] + j) * dims[0] + i; };
  std::vector<std::uint8_t> state(total, 0);  // 1 = surface, 2 = outside
  for (const auto& s : obj.surfels) {
    const double rd = std::max(1.25 * s.radius(), 0.5 * h);
    const Vec3 t1 = s.orientation * Vec3::UnitX();
    const Vec3 t2 = s.orientation * Vec3::UnitY();
    const double step = h / 4.0;
    const int steps = static_cast<int>(std::ceil(rd / step));
    for (int a = -steps; a <= steps; ++a)
      for (int b = -steps; b <= steps; ++b) {
        const double u = a * step, v = b * step;
        if (u * u + v * v > rd * rd) continue;
        const Vec3 x = s.position + u * t1 + v * t2;
        const Vec3 g = (x - lo) / h;
        const int i = static_cast<int>(std::floor(g.x())), j = static_cast<int>(std::floor(g.y())),
                  k = static_cast<int>(std::floor(g.z()));
        if (i < 0 || j < 0 || k < 0 || i >= dims[0] || j >= dims[1] || k >= dims[2]) continue;
        state[vid(i, j, k)] = 1;
      }
  }

  // 6-connected flood fill of the exterior from a padded corner.
  std::deque<std::array<int, 3>> queue;
  queue.push_back({0, 0, 0});
  state[vid(0, 0, 0)] = 2;
  const int nbr[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  while (!queue.empty()) {
    const auto c = queue.front();
    queue.pop_front();
    for (const auto& d : nbr) {
      const int i = c[0] + d[0], j = c[1] + d[1], k = c[2] + d[2];
      if (i < 0 || j < 0 || k < 0 || i >= dims[0] || j >= dims[1] || k >= dims[2]) continue;
      auto& st = state[vid(i, j, k)];
      if (st != 0) continue;
      st = 2;
      queue.push_back({i, j, k});
    }
  }
  std::size_t enclosed = 0;
  for (auto st : state) enclosed += st == 0;
  if (enclosed == 0)
    throw Error("fill_interior: surface of object '" + obj.name + "' is not watertight at particle size " +
                std::to_string(h));

  std::vector<Vec3> surfel_pos(ns);
  for (std::size_t i = 0; i < ns; ++i) surfel_pos[i] = obj.surfels[i].position;
  const SpatialGrid surfel_grid(surfel_pos, 2.0 * h);

  // Enclosed volume: interior voxels count fully, shell voxels by the fraction
  // of sub-samples behind their nearest surfel.
  auto behind = [&](const Vec3& x, double margin) {
    const std::int64_t near = surfel_grid.nearest_one(x, 4.0 * h);
    if (near < 0) return false;
    const Surfel& s = obj.surfels[static_cast<std::size_t>(near)];
    return (x - s.position).dot(s.normal()) < -margin;
  };
  constexpr int kSub = 4;
  double volume = 0.0;
  for (int k = 0; k < dims[2]; ++k)
    for (int j = 0; j < dims[1]; ++j)
      for (int i = 0; i < dims[0]; ++i) {
        const auto st = state[vid(i, j, k)];
        if (st == 0) {
          volume += h * h * h;
        } else if (st == 1) {
          int inside = 0;
          for (int c = 0; c < kSub * kSub * kSub; ++c) {
            const Vec3 f((c % kSub + 0.5) / kSub, ((c / kSub) % kSub + 0.5) / kSub, (c / (kSub * kSub) + 0.5) / kSub);
            inside += behind(lo + h * (Vec3(i, j, k) + f), 0.0) ? 1 : 0;
          }
          volume += h * h * h * inside / (kSub * kSub * kSub);
        }
      }

  std::vector<Particle> interior;
  for (int k = 0; k < dims[2]; ++k)
    for (int j = 0; j < dims[1]; ++j)
      for (int i = 0; i < dims[0]; ++i) {
        const auto st = state[vid(i, j, k)];
        if (st == 2) continue;
        std::uint64_t hash = hash_combine(hash_combine(hash_combine(0x5eedULL, static_cast<std::uint64_t>(i)),
                                                       static_cast<std::uint64_t>(j)),
                                          static_cast<std::uint64_t>(k));
        Vec3 jitter;
        for (int a = 0; a < 3; ++a) {
          hash = splitmix64(hash);
          jitter[a] = (hash_to_unit(hash) - 0.5) * 0.4 * h;
        }
        const Vec3 x = lo + h * Vec3(i + 0.5, j + 0.5, k + 0.5) + jitter;
        // Shell voxel: keep only samples clearly behind the nearest surfel.
        if (st == 1 && !behind(x, 0.3 * h)) continue;
        Particle p;
        p.position = x;
        p.velocity = mean_velocity;
        interior.push_back(p);
      }

  out.particles.insert(out.particles.end(), interior.begin(), interior.end());
  const double m = rho * volume / static_cast<double>(out.particles.size());
  for (auto& p : out.particles) {
    p.mass = m;
    p.volume = m / rho;
  }
  return out;
}

ObjectSurfels bind_surfels(const ObjectSurfels& obj) {
  if (obj.particles.empty()) throw Error("bind_surfels: object '" + obj.name + "' has no particles");
  ObjectSurfels out = obj;
  std::vector<Vec3> pos(obj.particles.size());
  Vec3 lo = obj.particles[0].position, hi = lo;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    pos[i] = obj.particles[i].position;
    lo = lo.cwiseMin(pos[i]);
    hi = hi.cwiseMax(pos[i]);
  }
  const double extent = std::max((hi - lo).maxCoeff(), 1e-6);
  const double cell = std::max(extent / std::max(1.0, std::cbrt(static_cast<double>(pos.size()))), 1e-6);
  const SpatialGrid grid(pos, cell);
  out.binding.assign(obj.surfels.size(), {});
  for (std::size_t s = 0; s < obj.surfels.size(); ++s) out.binding[s] = grid.nearest(obj.surfels[s].position, kBindingSize);
  out.rest_particle_positions = pos;
  out.rest_surfel_positions.resize(obj.surfels.size());
  out.rest_surfel_orientations.resize(obj.surfels.size());
  for (std::size_t s = 0; s < obj.surfels.size(); ++s) {
    out.rest_surfel_positions[s] = obj.surfels[s].position;
    out.rest_surfel_orientations[s] = obj.surfels[s].orientation;
  }
  return out;
}

Scene prepare_scene(const Scene& scene) {
  Scene out = scene;
  for (auto& obj : out.objects) {
    if (obj.prepared()) continue;
    if (obj.particles.empty()) obj = fill_interior(obj, scene.particle_size);
    obj = bind_surfels(obj);
  }
  return out;
}

}  // namespace hybridsim
