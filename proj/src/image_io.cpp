#include "hybridsim/image_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>

#include "json_util.hpp"

namespace hybridsim {

namespace {

std::uint8_t to_byte(float v) {
  const float c = std::clamp(std::isfinite(v) ? v : 0.0f, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

void write_netpbm(const std::filesystem::path& path, const Image& img, int channels, const char* magic) {
  if (img.channels != channels) throw Error("write " + path.string() + ": expected " + std::to_string(channels) + " channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << magic << '\n' << img.width << ' ' << img.height << "\n255\n";
  std::vector<std::uint8_t> bytes(img.data.size());
  std::transform(img.data.begin(), img.data.end(), bytes.begin(), to_byte);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Reads the next header token, skipping whitespace and # comments.
std::string token(std::istream& in) {
  std::string t;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!t.empty()) break;
      continue;
    }
    t.push_back(static_cast<char>(c));
  }
  return t;
}

Image read_netpbm(const std::filesystem::path& path, int channels, const char* magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  if (token(in) != magic) throw Error("'" + path.string() + "': expected " + magic + " header");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token(in));
    h = std::stoi(token(in));
    maxval = std::stoi(token(in));
  } catch (const std::exception&) {
    throw Error("'" + path.string() + "': malformed header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw Error("'" + path.string() + "': unsupported dimensions or maxval");
  Image img(w, h, channels);
  std::vector<std::uint8_t> bytes(img.data.size());
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw Error("'" + path.string() + "': truncated pixel data");
  for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = static_cast<float>(bytes[i]) / 255.0f;
  return img;
}

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

constexpr float kFloMagic = 202021.25f;  // "PIEH" read as little-endian float32

}  // namespace

void write_ppm(const std::filesystem::path& path, const Image& rgb) { write_netpbm(path, rgb, 3, "P6"); }
Image read_ppm(const std::filesystem::path& path) { return read_netpbm(path, 3, "P6"); }
void write_pgm(const std::filesystem::path& path, const Image& gray) { write_netpbm(path, gray, 1, "P5"); }
Image read_pgm(const std::filesystem::path& path) { return read_netpbm(path, 1, "P5"); }

void write_flo(const std::filesystem::path& path, const Image& flow) {
  if (flow.channels != 2) throw Error("write_flo: expected 2 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write("PIEH", 4);
  const std::int32_t dims[2] = {flow.width, flow.height};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(flow.data.data()), static_cast<std::streamsize>(flow.data.size() * sizeof(float)));
}

Image read_flo(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  float magic = 0.0f;
  std::int32_t dims[2] = {0, 0};
  in.read(reinterpret_cast<char*>(&magic), sizeof(magic));
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!in || magic != kFloMagic) throw Error("'" + path.string() + "': not a .flo file");
  if (dims[0] <= 0 || dims[1] <= 0 || dims[0] > 1 << 16 || dims[1] > 1 << 16)
    throw Error("'" + path.string() + "': bad dimensions");
  Image flow(dims[0], dims[1], 2);
  in.read(reinterpret_cast<char*>(flow.data.data()), static_cast<std::streamsize>(flow.data.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(flow.data.size() * sizeof(float)))
    throw Error("'" + path.string() + "': truncated flow data");
  return flow;
}

void write_video(const std::filesystem::path& dir, const Video& video, double fps) {
  std::filesystem::create_directories(dir);
  for (std::size_t k = 0; k < video.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04zu.ppm", k);
    write_ppm(dir / name, video[k]);
  }
  nlohmann::json m;
  m["fps"] = fps;
  m["width"] = video.empty() ? 0 : video[0].width;
  m["height"] = video.empty() ? 0 : video[0].height;
  m["frame_count"] = video.size();
  detail::write_json_file(dir / "manifest.json", m);
}

Video read_video(const std::filesystem::path& dir) {
  const nlohmann::json m = detail::read_json_file(dir / "manifest.json");
  detail::check_keys(m, {"fps", "width", "height", "frame_count"}, "video manifest");
  const auto count = m.at("frame_count").get<std::size_t>();
  const int w = m.at("width").get<int>(), h = m.at("height").get<int>();
  Video video;
  for (std::size_t k = 0; k < count; ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04zu.ppm", k);
    video.push_back(read_ppm(dir / name));
    if (video.back().width != w || video.back().height != h)
      throw Error("video '" + dir.string() + "': frame " + std::to_string(k) + " does not match the manifest size");
  }
  return video;
}

}  // namespace hybridsim
