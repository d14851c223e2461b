#include "hybridsim/snapshot_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "hybridsim/scene_io.hpp"
#include "json_util.hpp"

namespace hybridsim {

static_assert(std::endian::native == std::endian::little, "WPLY assumes a little-endian host");

namespace {

std::string frame_name(std::size_t k, const char* kind) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "frame_%04zu_%s.wply", k, kind);
  return buf;
}

void push(std::vector<float>& row, const Vec3& v) {
  for (int a = 0; a < 3; ++a) row.push_back(static_cast<float>(v[a]));
}

Vec3 vec_at(const float* p) { return {p[0], p[1], p[2]}; }

}  // namespace

void write_wply(const std::filesystem::path& path, const WplyTable& table) {
  if (table.data.size() != static_cast<std::size_t>(table.rows) * table.width)
    throw Error("write_wply: data size does not match rows * width");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  const std::uint32_t header[3] = {kWplyVersion, table.rows, table.width};
  out.write("WPLY", 4);
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(table.data.data()), static_cast<std::streamsize>(table.data.size() * 4));
}

WplyTable read_wply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  char magic[4];
  std::uint32_t header[3];
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in || std::memcmp(magic, "WPLY", 4) != 0) throw Error("'" + path.string() + "': not a WPLY file");
  if (header[0] != kWplyVersion) throw Error("'" + path.string() + "': unsupported WPLY version");
  WplyTable t;
  t.rows = header[1];
  t.width = header[2];
  t.data.resize(static_cast<std::size_t>(t.rows) * t.width);
  in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
  if (in.gcount() != static_cast<std::streamsize>(t.data.size() * 4)) throw Error("'" + path.string() + "': truncated");
  return t;
}

WplyTable surfel_table(const Scene& scene) {
  WplyTable t;
  t.width = 17;
  auto add = [&](int id, const Surfel& s, const Vec3& v) {
    t.data.push_back(static_cast<float>(id));
    push(t.data, s.position);
    for (double q : {s.orientation.w(), s.orientation.x(), s.orientation.y(), s.orientation.z()})
      t.data.push_back(static_cast<float>(q));
    t.data.push_back(static_cast<float>(s.scale.x()));
    t.data.push_back(static_cast<float>(s.scale.y()));
    t.data.push_back(static_cast<float>(s.opacity));
    push(t.data, s.color);
    push(t.data, v);
    ++t.rows;
  };
  for (const auto& s : scene.background) add(-1, s, Vec3::Zero());
  for (std::size_t o = 0; o < scene.objects.size(); ++o) {
    const auto& obj = scene.objects[o];
    for (std::size_t i = 0; i < obj.surfels.size(); ++i)
      add(static_cast<int>(o), obj.surfels[i], i < obj.velocities.size() ? obj.velocities[i] : Vec3::Zero());
  }
  return t;
}

WplyTable particle_table(const Scene& scene) {
  WplyTable t;
  t.width = 8;
  for (std::size_t o = 0; o < scene.objects.size(); ++o)
    for (const auto& p : scene.objects[o].particles) {
      t.data.push_back(static_cast<float>(o));
      push(t.data, p.position);
      push(t.data, p.velocity);
      t.data.push_back(static_cast<float>(p.mass));
      ++t.rows;
    }
  return t;
}

void save_trajectory(const std::filesystem::path& dir, const CoarseTrajectory& trajectory) {
  if (trajectory.frames.empty()) throw Error("save_trajectory: empty trajectory");
  std::filesystem::create_directories(dir);
  save_scene(trajectory.frames[0], dir / "scene.json");
  nlohmann::json meta;
  meta["frame_count"] = trajectory.frames.size();
  meta["frame_stride"] = trajectory.frame_stride;
  meta["step_time"] = trajectory.step_time;
  meta["times"] = trajectory.times;
  detail::write_json_file(dir / "trajectory.json", meta);
  for (std::size_t k = 0; k < trajectory.frames.size(); ++k) {
    write_wply(dir / frame_name(k, "surfels"), surfel_table(trajectory.frames[k]));
    write_wply(dir / frame_name(k, "particles"), particle_table(trajectory.frames[k]));
  }
}

CoarseTrajectory load_trajectory(const std::filesystem::path& dir) {
  const nlohmann::json meta = detail::read_json_file(dir / "trajectory.json");
  detail::check_keys(meta, {"frame_count", "frame_stride", "step_time", "times"}, "trajectory.json");
  CoarseTrajectory traj;
  traj.frame_stride = meta.at("frame_stride").get<int>();
  traj.step_time = meta.at("step_time").get<double>();
  traj.times = meta.at("times").get<std::vector<double>>();
  const auto count = meta.at("frame_count").get<std::size_t>();
  if (traj.times.size() != count) throw Error("trajectory.json: times has the wrong length");
  const Scene base = load_scene(dir / "scene.json");

  for (std::size_t k = 0; k < count; ++k) {
    Scene frame = base;
    const WplyTable st = read_wply(dir / frame_name(k, "surfels"));
    const WplyTable pt = read_wply(dir / frame_name(k, "particles"));
    std::size_t expected_surfels = frame.background.size(), expected_particles = 0;
    for (const auto& obj : frame.objects) {
      expected_surfels += obj.surfels.size();
      expected_particles += obj.particles.size();
    }
    if (st.width != 17 || st.rows != expected_surfels || pt.width != 8 || pt.rows != expected_particles)
      throw Error("trajectory frame " + std::to_string(k) + ": surfel/particle tables do not match scene.json");
    const float* row = st.data.data();
    for (auto& s : frame.background) {
      s.position = vec_at(row + 1);
      row += 17;
    }
    for (auto& obj : frame.objects)
      for (std::size_t i = 0; i < obj.surfels.size(); ++i, row += 17) {
        auto& s = obj.surfels[i];
        s.position = vec_at(row + 1);
        s.orientation = Quat(row[4], row[5], row[6], row[7]).normalized();
        obj.velocities[i] = vec_at(row + 14);
      }
    const float* prow = pt.data.data();
    for (auto& obj : frame.objects)
      for (auto& p : obj.particles) {
        p.position = vec_at(prow + 1);
        p.velocity = vec_at(prow + 4);
        prow += 8;
      }
    traj.frames.push_back(std::move(frame));
  }
  // Frame 0 keeps the exact values from scene.json.
  if (!traj.frames.empty()) traj.frames[0] = base;
  return traj;
}

}  // namespace hybridsim
