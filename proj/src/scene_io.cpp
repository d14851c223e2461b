#include "hybridsim/scene_io.hpp"

#include <cmath>

#include "json_util.hpp"

namespace hybridsim {

using detail::check_keys;
using detail::get_number;
using detail::get_vec3;
using detail::json;
using detail::to_json;

namespace {

constexpr std::size_t kSurfelWidth = 13;  // position 3, quaternion 4 (w x y z), scale 2, opacity 1, color 3

Surfel surfel_from_json(const json& j, const std::string& ctx) {
  if (!j.is_array() || j.size() != kSurfelWidth) throw Error(ctx + ": surfel must be an array of 13 numbers");
  double v[kSurfelWidth];
  for (std::size_t i = 0; i < kSurfelWidth; ++i) v[i] = get_number(j[i], ctx);
  Surfel s;
  s.position = Vec3(v[0], v[1], v[2]);
  s.orientation = Quat(v[3], v[4], v[5], v[6]);
  s.scale = Vec2(v[7], v[8]);
  s.opacity = v[9];
  s.color = Vec3(v[10], v[11], v[12]);
  return s;
}

json surfel_to_json(const Surfel& s) {
  const auto& q = s.orientation;
  return json::array({s.position.x(), s.position.y(), s.position.z(), q.w(), q.x(), q.y(), q.z(), s.scale.x(),
                      s.scale.y(), s.opacity, s.color.x(), s.color.y(), s.color.z()});
}

Quat quat_from_json(const json& j, const std::string& ctx) {
  if (!j.is_array() || j.size() != 4) throw Error(ctx + ": quaternion must be [w, x, y, z]");
  Quat q(get_number(j[0], ctx), get_number(j[1], ctx), get_number(j[2], ctx), get_number(j[3], ctx));
  if (!(q.norm() > 0.0)) throw Error(ctx + ": zero quaternion");
  return q.normalized();
}

json quat_to_json(const Quat& q) { return json::array({q.w(), q.x(), q.y(), q.z()}); }

Camera camera_from_json(const json& j) {
  const std::string ctx = "camera";
  if (!j.is_object()) throw Error(ctx + ": expected a JSON object");
  if (j.contains("eye")) {
    check_keys(j, {"eye", "target", "up", "vertical_fov", "width", "height"}, ctx);
    CameraSpec c;
    c.eye = get_vec3(j.at("eye"), ctx + ".eye");
    if (j.contains("target")) c.target = get_vec3(j["target"], ctx + ".target");
    if (j.contains("up")) c.up = get_vec3(j["up"], ctx + ".up");
    if (j.contains("vertical_fov")) c.vertical_fov = get_number(j["vertical_fov"], ctx + ".vertical_fov");
    if (j.contains("width")) c.width = j["width"].get<int>();
    if (j.contains("height")) c.height = j["height"].get<int>();
    return Camera::look_at(c.eye, c.target, c.up, c.vertical_fov, c.width, c.height);
  }
  check_keys(j, {"fx", "fy", "cx", "cy", "width", "height", "rotation", "translation"}, ctx);
  Camera cam;
  for (const char* key : {"fx", "fy", "cx", "cy", "width", "height", "rotation", "translation"})
    if (!j.contains(key)) throw Error(ctx + ": missing key '" + std::string(key) + "'");
  cam.fx = get_number(j["fx"], ctx + ".fx");
  cam.fy = get_number(j["fy"], ctx + ".fy");
  cam.cx = get_number(j["cx"], ctx + ".cx");
  cam.cy = get_number(j["cy"], ctx + ".cy");
  cam.width = j["width"].get<int>();
  cam.height = j["height"].get<int>();
  const json& r = j["rotation"];
  if (!r.is_array() || r.size() != 9) throw Error(ctx + ".rotation: expected 9 numbers (row-major)");
  for (int i = 0; i < 9; ++i) cam.rotation(i / 3, i % 3) = get_number(r[i], ctx + ".rotation");
  cam.translation = get_vec3(j["translation"], ctx + ".translation");
  return cam;
}

json camera_to_json(const Camera& c) {
  json rot = json::array();
  for (int i = 0; i < 9; ++i) rot.push_back(c.rotation(i / 3, i % 3));
  return {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"width", c.width}, {"height", c.height},
          {"rotation", rot}, {"translation", to_json(c.translation)}};
}

PrimitiveSpec primitive_from_json(const json& j, const std::filesystem::path& base_dir) {
  const std::string ctx = "procedural";
  check_keys(j,
             {"shape", "name", "center", "rotation", "size", "radius", "radii", "rows", "cols", "spacing", "path",
              "color", "color2", "opacity", "velocity", "gravity", "pinned"},
             ctx);
  PrimitiveSpec p;
  if (!j.contains("shape") || !j["shape"].is_string()) throw Error(ctx + ": missing 'shape'");
  p.shape = j["shape"].get<std::string>();
  const std::string c = ctx + "(" + p.shape + ")";
  if (j.contains("name")) p.name = j["name"].get<std::string>();
  if (j.contains("center")) p.center = get_vec3(j["center"], c + ".center");
  if (j.contains("rotation")) p.rotation = quat_from_json(j["rotation"], c + ".rotation");
  if (j.contains("size")) p.size = get_vec3(j["size"], c + ".size");
  if (j.contains("radius")) p.radius = get_number(j["radius"], c + ".radius");
  if (j.contains("radii")) p.radii = get_vec3(j["radii"], c + ".radii");
  if (j.contains("rows")) p.rows = j["rows"].get<int>();
  if (j.contains("cols")) p.cols = j["cols"].get<int>();
  if (j.contains("spacing")) p.spacing = get_number(j["spacing"], c + ".spacing");
  if (j.contains("path")) {
    std::filesystem::path path = j["path"].get<std::string>();
    if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
    p.path = path.string();
  }
  if (j.contains("color")) p.color = get_vec3(j["color"], c + ".color");
  if (j.contains("color2")) p.color2 = get_vec3(j["color2"], c + ".color2");
  if (j.contains("opacity")) p.opacity = get_number(j["opacity"], c + ".opacity");
  if (j.contains("velocity")) p.velocity = get_vec3(j["velocity"], c + ".velocity");
  if (j.contains("gravity")) p.gravity = j["gravity"].get<bool>();
  if (j.contains("pinned")) p.pinned = j["pinned"].get<std::vector<std::uint32_t>>();
  return p;
}

json primitive_to_json(const PrimitiveSpec& p) {
  json j = {{"shape", p.shape}, {"center", to_json(p.center)}, {"rotation", quat_to_json(p.rotation)},
            {"color", to_json(p.color)}, {"opacity", p.opacity}};
  if (!p.name.empty()) j["name"] = p.name;
  if (p.shape == "sphere" || p.shape == "toy_duck") j["radius"] = p.radius;
  if (p.shape == "ellipsoid") j["radii"] = to_json(p.radii);
  if (p.shape == "box" || p.shape == "fluid_block" || p.shape == "smoke_volume" || p.shape == "plane" ||
      p.shape == "basin")
    j["size"] = to_json(p.size);
  if (p.shape == "cloth") {
    j["rows"] = p.rows;
    j["cols"] = p.cols;
    if (!p.pinned.empty()) j["pinned"] = p.pinned;
  }
  if (p.shape == "mesh") j["path"] = p.path;
  if (p.spacing > 0.0) j["spacing"] = p.spacing;
  if (p.color2) j["color2"] = to_json(*p.color2);
  if (!p.velocity.isZero()) j["velocity"] = to_json(p.velocity);
  if (!p.gravity) j["gravity"] = false;
  return j;
}

ObjectSurfels object_from_json(const json& j, std::size_t index, double particle_size,
                               const std::filesystem::path& base_dir) {
  const std::string ctx = "objects[" + std::to_string(index) + "]";
  check_keys(j, {"name", "kind", "material", "surfels", "edges", "faces", "velocities", "pinned", "gravity",
                 "procedural"},
             ctx);
  std::optional<Material> material;
  if (j.contains("kind")) {
    const MaterialKind kind = material_kind_from_string(j["kind"].get<std::string>());
    material = material_from_json(kind, j.value("material", json::object()));
  } else if (j.contains("material")) {
    throw Error(ctx + ": 'material' requires 'kind'");
  }

  if (j.contains("procedural")) {
    for (const char* key : {"surfels", "edges", "faces", "velocities", "pinned", "gravity"})
      if (j.contains(key)) throw Error(ctx + ": '" + std::string(key) + "' cannot be combined with 'procedural'");
    PrimitiveSpec prim = primitive_from_json(j["procedural"], base_dir);
    if (j.contains("name")) prim.name = j["name"].get<std::string>();
    prim.material = material;
    return make_object(prim, particle_size);
  }

  if (!material) throw Error(ctx + ": missing 'kind'");
  if (!j.contains("surfels") || !j["surfels"].is_array()) throw Error(ctx + ": missing 'surfels' array");
  ObjectSurfels obj;
  obj.name = j.value("name", "object" + std::to_string(index));
  obj.material = *material;
  for (std::size_t i = 0; i < j["surfels"].size(); ++i)
    obj.surfels.push_back(surfel_from_json(j["surfels"][i], ctx + ".surfels[" + std::to_string(i) + "]"));
  const std::size_t n = obj.surfels.size();
  obj.edges.assign(n, {});
  if (j.contains("edges"))
    for (const auto& e : j["edges"]) {
      if (!e.is_array() || e.size() != 2) throw Error(ctx + ".edges: each edge must be [i, j]");
      const auto a = e[0].get<std::uint32_t>(), b = e[1].get<std::uint32_t>();
      if (a >= n || b >= n || a == b) throw Error(ctx + ".edges: invalid edge [" + std::to_string(a) + ", " +
                                                  std::to_string(b) + "]");
      add_edge(obj.edges, a, b);
    }
  if (j.contains("faces"))
    for (const auto& f : j["faces"]) {
      if (!f.is_array() || f.size() != 3) throw Error(ctx + ".faces: each face must have 3 indices");
      std::array<std::uint32_t, 3> face{f[0].get<std::uint32_t>(), f[1].get<std::uint32_t>(), f[2].get<std::uint32_t>()};
      for (auto v : face)
        if (v >= n) throw Error(ctx + ".faces: index out of range");
      obj.faces.push_back(face);
    }
  if (j.contains("velocities")) {
    if (!j["velocities"].is_array() || j["velocities"].size() != n)
      throw Error(ctx + ".velocities: expected one velocity per surfel");
    for (const auto& v : j["velocities"]) obj.velocities.push_back(get_vec3(v, ctx + ".velocities"));
  } else {
    obj.velocities.assign(n, Vec3::Zero());
  }
  if (j.contains("pinned")) obj.pinned = j["pinned"].get<std::vector<std::uint32_t>>();
  obj.gravity_enabled = j.value("gravity", obj.material.kind != MaterialKind::smoke);
  return obj;
}

}  // namespace

json material_to_json(const Material& m) {
  json j = {{"density", m.density}};
  switch (m.kind) {
    case MaterialKind::rigid: j["friction"] = m.friction; break;
    case MaterialKind::elastic:
    case MaterialKind::liquid:
      j["youngs"] = m.youngs;
      j["poisson"] = m.poisson;
      break;
    case MaterialKind::granular:
      j["youngs"] = m.youngs;
      j["poisson"] = m.poisson;
      j["friction_angle"] = m.friction_angle;
      break;
    case MaterialKind::cloth:
      j["stretch_compliance"] = m.stretch_compliance;
      j["bending_compliance"] = m.bending_compliance;
      break;
    case MaterialKind::smoke: j["viscosity"] = m.viscosity; break;
  }
  return j;
}

Material material_from_json(MaterialKind kind, const json& j) {
  check_keys(j,
             {"density", "friction", "youngs", "poisson", "friction_angle", "stretch_compliance", "bending_compliance",
              "viscosity"},
             "material");
  Material m = Material::defaults(kind);
  auto read = [&](const char* key, double& field) {
    if (j.contains(key)) field = get_number(j[key], std::string("material.") + key);
  };
  read("density", m.density);
  read("friction", m.friction);
  read("youngs", m.youngs);
  read("poisson", m.poisson);
  read("friction_angle", m.friction_angle);
  read("stretch_compliance", m.stretch_compliance);
  read("bending_compliance", m.bending_compliance);
  read("viscosity", m.viscosity);
  auto diags = validate_material(m, -1);
  if (!diags.empty()) throw Error("material: " + diags.front().message);
  return m;
}

Scene scene_from_json(const json& j, const std::filesystem::path& base_dir) {
  check_keys(j, {"camera", "background", "objects", "particle_size", "fill_color"}, "scene");
  for (const char* key : {"camera", "background", "objects"})
    if (!j.contains(key)) throw Error("scene: missing key '" + std::string(key) + "'");
  Scene scene;
  if (j.contains("particle_size")) scene.particle_size = get_number(j["particle_size"], "scene.particle_size");
  if (!(scene.particle_size > 0.0)) throw Error("scene.particle_size must be positive");
  if (j.contains("fill_color")) scene.fill_color = get_vec3(j["fill_color"], "scene.fill_color");
  scene.camera = camera_from_json(j["camera"]);
  if (!j["background"].is_array()) throw Error("scene.background: expected an array");
  for (std::size_t i = 0; i < j["background"].size(); ++i) {
    const json& e = j["background"][i];
    const std::string ctx = "background[" + std::to_string(i) + "]";
    if (e.is_array()) {
      scene.background.push_back(surfel_from_json(e, ctx));
    } else {
      check_keys(e, {"procedural"}, ctx);
      if (!e.contains("procedural")) throw Error(ctx + ": expected a surfel array or a 'procedural' entry");
      auto surfels = make_background_surfels(primitive_from_json(e["procedural"], base_dir), scene.particle_size);
      scene.background.insert(scene.background.end(), surfels.begin(), surfels.end());
    }
  }
  if (!j["objects"].is_array()) throw Error("scene.objects: expected an array");
  for (std::size_t i = 0; i < j["objects"].size(); ++i)
    scene.objects.push_back(object_from_json(j["objects"][i], i, scene.particle_size, base_dir));
  return finalize_scene(std::move(scene));
}

Scene load_scene(const std::filesystem::path& path) {
  return scene_from_json(detail::read_json_file(path), path.parent_path());
}

json scene_to_json(const Scene& scene) {
  json j;
  j["particle_size"] = scene.particle_size;
  j["fill_color"] = to_json(scene.fill_color);
  j["camera"] = camera_to_json(scene.camera);
  json bg = json::array();
  for (const auto& s : scene.background) bg.push_back(surfel_to_json(s));
  j["background"] = std::move(bg);
  json objects = json::array();
  for (const auto& o : scene.objects) {
    json jo;
    jo["name"] = o.name;
    jo["kind"] = std::string(to_string(o.material.kind));
    jo["material"] = material_to_json(o.material);
    json surfels = json::array();
    for (const auto& s : o.surfels) surfels.push_back(surfel_to_json(s));
    jo["surfels"] = std::move(surfels);
    json edges = json::array();
    for (auto [a, b] : edge_list(o.edges)) edges.push_back({a, b});
    jo["edges"] = std::move(edges);
    if (!o.faces.empty()) jo["faces"] = o.faces;
    json vel = json::array();
    for (const auto& v : o.velocities) vel.push_back(to_json(v));
    jo["velocities"] = std::move(vel);
    if (!o.pinned.empty()) jo["pinned"] = o.pinned;
    jo["gravity"] = o.gravity_enabled;
    objects.push_back(std::move(jo));
  }
  j["objects"] = std::move(objects);
  return j;
}

void save_scene(const Scene& scene, const std::filesystem::path& path) { detail::write_json_file(path, scene_to_json(scene)); }

json procedural_spec_to_json(const ProceduralSpec& spec) {
  json j;
  j["particle_size"] = spec.particle_size;
  j["fill_color"] = to_json(spec.fill_color);
  j["camera"] = {{"eye", to_json(spec.camera.eye)},
                 {"target", to_json(spec.camera.target)},
                 {"up", to_json(spec.camera.up)},
                 {"vertical_fov", spec.camera.vertical_fov},
                 {"width", spec.camera.width},
                 {"height", spec.camera.height}};
  json bg = json::array();
  for (const auto& p : spec.background) bg.push_back({{"procedural", primitive_to_json(p)}});
  j["background"] = std::move(bg);
  json objects = json::array();
  for (const auto& p : spec.objects) {
    json jo = {{"procedural", primitive_to_json(p)}};
    if (p.material) {
      jo["kind"] = std::string(to_string(p.material->kind));
      jo["material"] = material_to_json(*p.material);
    }
    objects.push_back(std::move(jo));
  }
  j["objects"] = std::move(objects);
  return j;
}

}  // namespace hybridsim
