#include "hybridsim/actions.hpp"

#include <algorithm>
#include <cmath>

#include "json_util.hpp"

namespace hybridsim {

using detail::check_keys;
using detail::get_number;
using detail::get_vec3;
using detail::json;
using detail::to_json;

namespace {

constexpr double kVortexEpsilon = 1e-6;  // m, regularizes the vortex core

bool inside(double t, double t0, double t1) { return t >= t0 && t <= t1; }

}  // namespace

Vec3 eval_wind(const WindField& field, const Vec3& x, double t) {
  if (!inside(t, field.t_start, field.t_end)) return Vec3::Zero();
  if (field.kind == WindKind::uniform) return field.strength * field.direction;
  const Vec3 r = x - field.center;
  const double d = r.norm();
  const double falloff = std::exp(-(d * d) / (field.falloff_radius * field.falloff_radius));
  return field.strength * field.direction.cross(r) / std::max(d, kVortexEpsilon) * falloff;
}

Vec3 eval_winds(const ActionSet& actions, const Vec3& x, double t) {
  Vec3 a = Vec3::Zero();
  for (const auto& w : actions.winds) a += eval_wind(w, x, t);
  return a;
}

Vec3 eval_point_force(const PointForce& pf, double t) {
  if (!inside(t, pf.t_start, pf.t_end) || pf.profile.empty()) return Vec3::Zero();
  const auto& k = pf.profile;
  if (t <= k.front().time) return k.front().force;
  if (t >= k.back().time) return k.back().force;
  auto hi = std::upper_bound(k.begin(), k.end(), t, [](double v, const ForceKnot& knot) { return v < knot.time; });
  auto lo = hi - 1;
  const double span = hi->time - lo->time;
  if (span <= 0.0) return hi->force;
  const double s = (t - lo->time) / span;
  return (1.0 - s) * lo->force + s * hi->force;
}

void validate_actions(const ActionSet& actions) {
  if (!actions.gravity.allFinite()) throw Error("actions: gravity is not finite");
  for (std::size_t i = 0; i < actions.winds.size(); ++i) {
    const auto& w = actions.winds[i];
    const std::string ctx = "winds[" + std::to_string(i) + "]";
    if (!std::isfinite(w.strength) || !w.direction.allFinite() || !w.center.allFinite())
      throw Error(ctx + ": non-finite field");
    if (std::abs(w.direction.norm() - 1.0) > 1e-6) throw Error(ctx + ": direction/axis must be a unit vector");
    if (!(w.t_start <= w.t_end)) throw Error(ctx + ": t_start must not exceed t_end");
    if (!(w.falloff_radius > 0.0)) throw Error(ctx + ": falloff_radius must be positive");
  }
  for (std::size_t i = 0; i < actions.point_forces.size(); ++i) {
    const auto& p = actions.point_forces[i];
    const std::string ctx = "point_forces[" + std::to_string(i) + "]";
    if (!(p.t_start <= p.t_end)) throw Error(ctx + ": t_start must not exceed t_end");
    for (std::size_t k = 0; k < p.profile.size(); ++k) {
      if (!std::isfinite(p.profile[k].time) || !p.profile[k].force.allFinite()) throw Error(ctx + ": non-finite profile");
      if (k > 0 && p.profile[k].time < p.profile[k - 1].time) throw Error(ctx + ": profile times must be non-decreasing");
    }
  }
}

void validate_actions(const ActionSet& actions, const Scene& scene) {
  validate_actions(actions);
  for (std::size_t i = 0; i < actions.point_forces.size(); ++i) {
    const auto& p = actions.point_forces[i];
    if (p.object >= scene.objects.size())
      throw Error("point_forces[" + std::to_string(i) + "]: dangling anchor, object index " + std::to_string(p.object) +
                  " but scene has " + std::to_string(scene.objects.size()) + " objects");
    if (p.anchor >= scene.objects[p.object].surfels.size())
      throw Error("point_forces[" + std::to_string(i) + "]: dangling anchor, surfel index " + std::to_string(p.anchor) +
                  " out of range for object " + std::to_string(p.object));
  }
}

ActionSet actions_from_json(const json& j) {
  check_keys(j, {"gravity", "winds", "point_forces"}, "actions");
  ActionSet a;
  if (j.contains("gravity")) a.gravity = get_vec3(j["gravity"], "actions.gravity");
  if (j.contains("winds")) {
    if (!j["winds"].is_array()) throw Error("actions.winds: expected an array");
    for (std::size_t i = 0; i < j["winds"].size(); ++i) {
      const json& w = j["winds"][i];
      const std::string ctx = "winds[" + std::to_string(i) + "]";
      check_keys(w, {"kind", "strength", "direction", "axis", "center", "falloff_radius", "t_start", "t_end"}, ctx);
      WindField f;
      const std::string kind = w.value("kind", "uniform");
      if (kind == "uniform") f.kind = WindKind::uniform;
      else if (kind == "vortex") f.kind = WindKind::vortex;
      else throw Error(ctx + ": unknown wind kind '" + kind + "'");
      if (w.contains("strength")) f.strength = get_number(w["strength"], ctx + ".strength");
      if (w.contains("direction") && w.contains("axis")) throw Error(ctx + ": give either 'direction' or 'axis'");
      if (w.contains("direction")) f.direction = get_vec3(w["direction"], ctx + ".direction");
      if (w.contains("axis")) f.direction = get_vec3(w["axis"], ctx + ".axis");
      if (w.contains("center")) f.center = get_vec3(w["center"], ctx + ".center");
      if (w.contains("falloff_radius")) f.falloff_radius = get_number(w["falloff_radius"], ctx + ".falloff_radius");
      if (w.contains("t_start")) f.t_start = get_number(w["t_start"], ctx + ".t_start");
      if (w.contains("t_end")) f.t_end = get_number(w["t_end"], ctx + ".t_end");
      a.winds.push_back(f);
    }
  }
  if (j.contains("point_forces")) {
    if (!j["point_forces"].is_array()) throw Error("actions.point_forces: expected an array");
    for (std::size_t i = 0; i < j["point_forces"].size(); ++i) {
      const json& p = j["point_forces"][i];
      const std::string ctx = "point_forces[" + std::to_string(i) + "]";
      check_keys(p, {"object", "anchor", "profile", "t_start", "t_end"}, ctx);
      PointForce f;
      if (!p.contains("object") || !p.contains("anchor")) throw Error(ctx + ": 'object' and 'anchor' are required");
      f.object = p["object"].get<std::size_t>();
      f.anchor = p["anchor"].get<std::size_t>();
      if (p.contains("profile")) {
        for (const auto& k : p["profile"]) {
          check_keys(k, {"t", "force"}, ctx + ".profile");
          f.profile.push_back({get_number(k.at("t"), ctx + ".profile.t"), get_vec3(k.at("force"), ctx + ".profile.force")});
        }
      }
      if (p.contains("t_start")) f.t_start = get_number(p["t_start"], ctx + ".t_start");
      if (p.contains("t_end")) f.t_end = get_number(p["t_end"], ctx + ".t_end");
      a.point_forces.push_back(std::move(f));
    }
  }
  validate_actions(a);
  return a;
}

json actions_to_json(const ActionSet& a) {
  json j;
  j["gravity"] = to_json(a.gravity);
  json winds = json::array();
  for (const auto& w : a.winds) {
    json jw = {{"kind", w.kind == WindKind::uniform ? "uniform" : "vortex"},
               {"strength", w.strength},
               {w.kind == WindKind::uniform ? "direction" : "axis", to_json(w.direction)},
               {"t_start", w.t_start},
               {"t_end", w.t_end}};
    if (w.kind == WindKind::vortex) {
      jw["center"] = to_json(w.center);
      jw["falloff_radius"] = w.falloff_radius;
    }
    winds.push_back(std::move(jw));
  }
  j["winds"] = std::move(winds);
  json forces = json::array();
  for (const auto& p : a.point_forces) {
    json profile = json::array();
    for (const auto& k : p.profile) profile.push_back({{"t", k.time}, {"force", to_json(k.force)}});
    forces.push_back({{"object", p.object}, {"anchor", p.anchor}, {"profile", profile}, {"t_start", p.t_start},
                      {"t_end", p.t_end}});
  }
  j["point_forces"] = std::move(forces);
  return j;
}

ActionSet load_actions(const std::filesystem::path& path) { return actions_from_json(detail::read_json_file(path)); }

ActionSet load_actions(const std::filesystem::path& path, const Scene& scene) {
  ActionSet a = load_actions(path);
  validate_actions(a, scene);
  return a;
}

void save_actions(const ActionSet& actions, const std::filesystem::path& path) {
  detail::write_json_file(path, actions_to_json(actions));
}

}  // namespace hybridsim
