#include "hybridsim/procedural.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "hybridsim/math.hpp"
#include "hybridsim/spatial_grid.hpp"

namespace hybridsim {

namespace {

constexpr double kScaleFactor = 0.6;  // surfel extent relative to sample spacing
constexpr std::size_t kSurfaceNeighbors = 6;

struct Sample {
  Vec3 position;
  Vec3 normal;
};

void require_positive(double v, const std::string& what, const PrimitiveSpec& prim) {
  if (!(v > 0.0) || !std::isfinite(v))
    throw Error("primitive '" + prim.name + "' (" + prim.shape + "): " + what + " must be positive");
}

double spacing_of(const PrimitiveSpec& prim, double particle_size) {
  const double h = prim.spacing > 0.0 ? prim.spacing : particle_size;
  require_positive(h, "spacing", prim);
  return h;
}

std::vector<Sample> fibonacci_sphere(std::size_t n) {
  std::vector<Sample> out(n);
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < n; ++i) {
    const double z = 1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * static_cast<double>(i);
    const Vec3 u(r * std::cos(phi), r * std::sin(phi), z);
    out[i] = {u, u};
  }
  return out;
}

// Hexagonal-packing count for a surface of the given area at spacing h.
std::size_t hex_count(double area, double h) {
  return static_cast<std::size_t>(std::ceil(area * 2.0 / (std::sqrt(3.0) * h * h)));
}

std::vector<Sample> ellipsoid_samples(const Vec3& radii, double h) {
  const double p = 1.6075;
  const double a = radii.x(), b = radii.y(), c = radii.z();
  const double area =
      4.0 * kPi * std::pow((std::pow(a * b, p) + std::pow(a * c, p) + std::pow(b * c, p)) / 3.0, 1.0 / p);
  // Fibonacci points are uniform on the sphere, not on the stretched surface;
  // oversample by the axis ratio so the sparsest region still meets h.
  const double stretch = radii.maxCoeff() / radii.minCoeff();
  auto pts = fibonacci_sphere(static_cast<std::size_t>(std::ceil(hex_count(area, h) * std::sqrt(stretch))));
  for (auto& s : pts) {
    const Vec3 u = s.position;
    s.position = radii.cwiseProduct(u);
    s.normal = u.cwiseQuotient(radii).normalized();
  }
  return pts;
}

std::vector<Sample> box_samples(const Vec3& size, double h) {
  std::array<int, 3> n{};
  for (int a = 0; a < 3; ++a) n[a] = std::max(1, static_cast<int>(std::ceil(size[a] / h)));
  std::vector<Sample> out;
  for (int k = 0; k <= n[2]; ++k)
    for (int j = 0; j <= n[1]; ++j)
      for (int i = 0; i <= n[0]; ++i) {
        const int idx[3] = {i, j, k};
        Vec3 normal = Vec3::Zero();
        for (int a = 0; a < 3; ++a) {
          if (idx[a] == 0) normal[a] -= 1.0;
          if (idx[a] == n[a]) normal[a] += 1.0;
        }
        if (normal.isZero()) continue;
        Vec3 x;
        for (int a = 0; a < 3; ++a) x[a] = -0.5 * size[a] + size[a] * idx[a] / n[a];
        out.push_back({x, normal.normalized()});
      }
  return out;
}

// Samples of a union of implicit parts: each part's surface points that lie
// outside every other part.
struct Part {
  Vec3 center;
  Vec3 radii;
  Vec3 color;
  bool inside(const Vec3& x) const { return (x - center).cwiseQuotient(radii).squaredNorm() < 1.0; }
};

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;
};

Mesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open mesh file '" + path + "'");
  Mesh mesh;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ss >> v.x() >> v.y() >> v.z())) throw Error(path + ":" + std::to_string(line_no) + ": bad vertex");
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<std::uint32_t> idx;
      std::string tok;
      while (ss >> tok) {
        const long v = std::stol(tok.substr(0, tok.find('/')));
        const long resolved = v < 0 ? static_cast<long>(mesh.vertices.size()) + v : v - 1;
        if (resolved < 0 || resolved >= static_cast<long>(mesh.vertices.size()))
          throw Error(path + ":" + std::to_string(line_no) + ": face index out of range");
        idx.push_back(static_cast<std::uint32_t>(resolved));
      }
      if (idx.size() < 3) throw Error(path + ":" + std::to_string(line_no) + ": face with fewer than 3 vertices");
      for (std::size_t t = 1; t + 1 < idx.size(); ++t) mesh.triangles.push_back({idx[0], idx[t], idx[t + 1]});
    }
  }
  if (mesh.triangles.empty()) throw Error("mesh file '" + path + "' has no faces");
  return mesh;
}

std::vector<Sample> mesh_samples(const Mesh& mesh, double h) {
  // Barycentric lattice per triangle; shared edge points are merged by
  // quantized position and their normals averaged.
  std::map<std::array<long long, 3>, std::size_t> index;
  std::vector<Sample> out;
  const double q = h * 1e-3;
  for (const auto& t : mesh.triangles) {
    const Vec3 &a = mesh.vertices[t[0]], &b = mesh.vertices[t[1]], &c = mesh.vertices[t[2]];
    const Vec3 cross = (b - a).cross(c - a);
    if (cross.norm() < 1e-14) continue;
    const Vec3 n = cross.normalized() * cross.norm();  // area weighted
    const double longest = std::max({(b - a).norm(), (c - b).norm(), (a - c).norm()});
    const int div = std::max(1, static_cast<int>(std::ceil(longest / h)));
    for (int i = 0; i <= div; ++i)
      for (int j = 0; j <= div - i; ++j) {
        const Vec3 x = a + (b - a) * (static_cast<double>(i) / div) + (c - a) * (static_cast<double>(j) / div);
        const std::array<long long, 3> key{std::llround(x.x() / q), std::llround(x.y() / q), std::llround(x.z() / q)};
        auto [it, inserted] = index.emplace(key, out.size());
        if (inserted) out.push_back({x, n});
        else out[it->second].normal += n;
      }
  }
  for (auto& s : out) s.normal.normalize();
  return out;
}

Adjacency knn_edges(const std::vector<Surfel>& surfels) {
  std::vector<Vec3> pos(surfels.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = surfels[i].position;
  Adjacency adj(surfels.size());
  if (surfels.size() < 2) return adj;
  Vec3 lo = pos[0], hi = pos[0];
  for (const auto& p : pos) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double cell = std::max((hi - lo).maxCoeff() / std::max(1.0, std::sqrt(static_cast<double>(pos.size()))), 1e-9);
  const SpatialGrid grid(pos, cell);
  for (std::uint32_t i = 0; i < pos.size(); ++i)
    for (auto j : grid.nearest(pos[i], kSurfaceNeighbors + 1))
      if (j != i) add_edge(adj, i, j);
  return adj;
}

Surfel make_surfel(const Vec3& position, const Vec3& normal, double extent, const Vec3& color, double opacity) {
  Surfel s;
  s.position = position;
  s.orientation = quat_from_normal(normal);
  s.scale = Vec2::Constant(extent);
  s.opacity = opacity;
  s.color = color;
  return s;
}

Material default_material(const std::string& shape) {
  if (shape == "cloth") return Material::defaults(MaterialKind::cloth);
  if (shape == "fluid_block") return Material::defaults(MaterialKind::liquid);
  if (shape == "smoke_volume") return Material::defaults(MaterialKind::smoke);
  return Material::defaults(MaterialKind::rigid);
}

Vec3 checker(const PrimitiveSpec& prim, const Vec3& local, double tile) {
  const long cx = static_cast<long>(std::floor(local.x() / tile));
  const long cy = static_cast<long>(std::floor(local.y() / tile));
  const Vec3 alt = prim.color2.value_or(prim.color * 0.7);
  return ((cx + cy) & 1) ? alt : prim.color;
}

}  // namespace

std::vector<Surfel> make_background_surfels(const PrimitiveSpec& prim, double particle_size) {
  const double h = spacing_of(prim, particle_size);
  std::vector<Surfel> out;
  constexpr double kTile = 0.1;
  auto emit = [&](const Vec3& local, const Vec3& local_normal, const Vec3& color) {
    out.push_back(make_surfel(prim.center + prim.rotation * local, prim.rotation * local_normal, kScaleFactor * h, color,
                              prim.opacity));
  };
  if (prim.shape == "plane") {
    require_positive(prim.size.x(), "size.x", prim);
    require_positive(prim.size.y(), "size.y", prim);
    const int nx = static_cast<int>(std::ceil(prim.size.x() / h)), ny = static_cast<int>(std::ceil(prim.size.y() / h));
    for (int j = 0; j <= ny; ++j)
      for (int i = 0; i <= nx; ++i) {
        const Vec3 local(-0.5 * prim.size.x() + prim.size.x() * i / nx, -0.5 * prim.size.y() + prim.size.y() * j / ny,
                         0.0);
        emit(local, Vec3::UnitZ(), checker(prim, local, kTile));
      }
  } else if (prim.shape == "basin") {
    for (int a = 0; a < 3; ++a) require_positive(prim.size[a], "size", prim);
    const double sx = prim.size.x(), sy = prim.size.y(), wall = prim.size.z();
    const int nx = static_cast<int>(std::ceil(sx / h)), ny = static_cast<int>(std::ceil(sy / h));
    const int nz = static_cast<int>(std::ceil(wall / h));
    for (int j = 0; j <= ny; ++j)
      for (int i = 0; i <= nx; ++i) {
        const Vec3 local(-0.5 * sx + sx * i / nx, -0.5 * sy + sy * j / ny, 0.0);
        emit(local, Vec3::UnitZ(), checker(prim, local, kTile));
      }
    const Vec3 wall_color = prim.color2.value_or(prim.color * 0.7);
    for (int k = 1; k <= nz; ++k) {
      const double z = wall * k / nz;
      for (int i = 0; i <= nx; ++i) {
        const double x = -0.5 * sx + sx * i / nx;
        emit({x, -0.5 * sy, z}, Vec3::UnitY(), wall_color);
        emit({x, 0.5 * sy, z}, -Vec3::UnitY(), wall_color);
      }
      for (int j = 1; j < ny; ++j) {
        const double y = -0.5 * sy + sy * j / ny;
        emit({-0.5 * sx, y, z}, Vec3::UnitX(), wall_color);
        emit({0.5 * sx, y, z}, -Vec3::UnitX(), wall_color);
      }
    }
  } else {
    throw Error("unknown background primitive '" + prim.shape + "'");
  }
  return out;
}

ObjectSurfels make_object(const PrimitiveSpec& prim, double particle_size) {
  const double h = spacing_of(prim, particle_size);
  ObjectSurfels obj;
  obj.name = prim.name.empty() ? prim.shape : prim.name;
  obj.material = prim.material.value_or(default_material(prim.shape));
  obj.gravity_enabled = prim.gravity && obj.material.kind != MaterialKind::smoke;

  std::vector<Sample> samples;
  std::vector<Vec3> colors;
  const std::string& shape = prim.shape;
  if (shape == "sphere") {
    require_positive(prim.radius, "radius", prim);
    samples = fibonacci_sphere(hex_count(4.0 * kPi * prim.radius * prim.radius, h));
    for (auto& s : samples) s.position *= prim.radius;
  } else if (shape == "ellipsoid") {
    for (int a = 0; a < 3; ++a) require_positive(prim.radii[a], "radii", prim);
    samples = ellipsoid_samples(prim.radii, h);
  } else if (shape == "box" || shape == "fluid_block" || shape == "smoke_volume") {
    for (int a = 0; a < 3; ++a) require_positive(prim.size[a], "size", prim);
    samples = box_samples(prim.size, h);
  } else if (shape == "toy_duck") {
    require_positive(prim.radius, "radius", prim);
    const double s = prim.radius;
    const Vec3 body_color = prim.color;
    const std::vector<Part> parts = {
        {Vec3::Zero(), Vec3(1.0, 0.7, 0.55) * s, body_color},
        {Vec3(0.55, 0.0, 0.6) * s, Vec3::Constant(0.38 * s), body_color},
        {Vec3(0.92, 0.0, 0.55) * s, Vec3(0.16, 0.12, 0.07) * s, Vec3(0.95, 0.45, 0.1)},
    };
    for (std::size_t p = 0; p < parts.size(); ++p) {
      for (auto smp : ellipsoid_samples(parts[p].radii, h)) {
        smp.position += parts[p].center;
        bool covered = false;
        for (std::size_t o = 0; o < parts.size(); ++o) covered = covered || (o != p && parts[o].inside(smp.position));
        if (covered) continue;
        samples.push_back(smp);
        colors.push_back(parts[p].color);
      }
    }
    // Eyes: darken the head samples nearest the two eye points.
    for (const Vec3 eye : {Vec3(0.82, 0.16, 0.72) * s, Vec3(0.82, -0.16, 0.72) * s})
      for (std::size_t i = 0; i < samples.size(); ++i)
        if ((samples[i].position - eye).norm() < std::max(0.06 * s, 0.75 * h)) colors[i] = Vec3::Constant(0.05);
  } else if (shape == "mesh") {
    if (prim.path.empty()) throw Error("primitive '" + prim.name + "' (mesh): path is required");
    samples = mesh_samples(load_obj(prim.path), h);
  } else if (shape == "cloth") {
    if (prim.rows < 2 || prim.cols < 2) throw Error("primitive '" + prim.name + "' (cloth): needs at least 2x2 vertices");
    for (int r = 0; r < prim.rows; ++r)
      for (int c = 0; c < prim.cols; ++c) {
        const Vec3 local(h * (c - 0.5 * (prim.cols - 1)), -h * (r - 0.5 * (prim.rows - 1)), 0.0);
        samples.push_back({local, Vec3::UnitZ()});
      }
  } else {
    throw Error("unknown object primitive '" + shape + "'");
  }

  const Vec3 default_color = prim.color;
  obj.surfels.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Vec3 color = i < colors.size() ? colors[i] : default_color;
    obj.surfels.push_back(make_surfel(prim.center + prim.rotation * samples[i].position,
                                      prim.rotation * samples[i].normal, kScaleFactor * h, color, prim.opacity));
  }
  obj.velocities.assign(obj.surfels.size(), prim.velocity);

  if (shape == "cloth") {
    obj.edges.assign(obj.surfels.size(), {});
    auto id = [&](int r, int c) { return static_cast<std::uint32_t>(r * prim.cols + c); };
    for (int r = 0; r < prim.rows; ++r)
      for (int c = 0; c < prim.cols; ++c) {
        if (c + 1 < prim.cols) add_edge(obj.edges, id(r, c), id(r, c + 1));
        if (r + 1 < prim.rows) add_edge(obj.edges, id(r, c), id(r + 1, c));
        if (c + 1 < prim.cols && r + 1 < prim.rows) {
          obj.faces.push_back({id(r, c), id(r + 1, c), id(r + 1, c + 1)});
          obj.faces.push_back({id(r, c), id(r + 1, c + 1), id(r, c + 1)});
        }
      }
    for (auto p : prim.pinned) {
      if (p >= obj.surfels.size()) throw Error("primitive '" + prim.name + "' (cloth): pinned index out of range");
      obj.pinned.push_back(p);
    }
  } else {
    obj.edges = knn_edges(obj.surfels);
  }
  return obj;
}

Bounds scene_bounds(const Scene& scene) {
  bool any = false;
  Bounds b;
  auto grow = [&](const Vec3& x) {
    if (!any) {
      b.lower = b.upper = x;
      any = true;
    } else {
      b.lower = b.lower.cwiseMin(x);
      b.upper = b.upper.cwiseMax(x);
    }
  };
  for (const auto& s : scene.background) grow(s.position);
  for (const auto& o : scene.objects) {
    for (const auto& s : o.surfels) grow(s.position);
    for (const auto& p : o.particles) grow(p.position);
  }
  if (!any) throw Error("scene_bounds: scene has no geometry");
  return b;
}

GridSdf background_sdf(const Scene& scene, const Bounds& bounds, int resolution) {
  if (scene.background.empty()) throw Error("background_sdf: background is empty");
  std::vector<Vec3> pos, nrm;
  pos.reserve(scene.background.size());
  nrm.reserve(scene.background.size());
  for (const auto& s : scene.background) {
    pos.push_back(s.position);
    nrm.push_back(s.normal());
  }
  const double pad = 0.2 * std::max(bounds.extent().maxCoeff(), 1e-3);
  return GridSdf::from_oriented_points(pos, nrm, bounds.lower - Vec3::Constant(pad), bounds.upper + Vec3::Constant(pad),
                                       resolution);
}

Scene build_procedural_scene(const ProceduralSpec& spec) {
  if (!(spec.particle_size > 0.0)) throw Error("procedural scene: particle size must be positive");
  Scene scene;
  scene.particle_size = spec.particle_size;
  scene.fill_color = spec.fill_color;
  scene.camera = Camera::look_at(spec.camera.eye, spec.camera.target, spec.camera.up, spec.camera.vertical_fov,
                                 spec.camera.width, spec.camera.height);
  if (spec.camera.width <= 0 || spec.camera.height <= 0) throw Error("procedural scene: camera size must be positive");
  for (const auto& prim : spec.background) {
    auto surfels = make_background_surfels(prim, spec.particle_size);
    scene.background.insert(scene.background.end(), surfels.begin(), surfels.end());
  }
  for (const auto& prim : spec.objects) scene.objects.push_back(make_object(prim, spec.particle_size));

  return finalize_scene(std::move(scene));
}

Scene finalize_scene(Scene scene) {
  if (!scene.background.empty() && !scene.objects.empty()) {
    const GridSdf sdf = background_sdf(scene, scene_bounds(scene), 96);
    for (const auto& obj : scene.objects)
      for (std::size_t i = 0; i < obj.surfels.size(); ++i) {
        const double d = sdf.distance(obj.surfels[i].position);
        if (d < -0.5 * scene.particle_size) {
          std::ostringstream msg;
          msg << "object '" << obj.name << "' interpenetrates the background (surfel " << i << " at depth " << -d
              << " m)";
          throw Error(msg.str());
        }
      }
  }

  scene = prepare_scene(scene);
  const auto diags = validate_scene(scene);
  if (!diags.empty()) {
    std::string msg = "scene failed validation:";
    for (const auto& d : diags) msg += "\n  object " + std::to_string(d.object) + " " + d.field + ": " + d.message;
    throw Error(msg);
  }
  return scene;
}

}  // namespace hybridsim
