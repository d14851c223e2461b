#pragma once

#include <filesystem>
#include <vector>

#include "hybridsim/types.hpp"

namespace hybridsim {

// Row-major, channel-interleaved float image.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c, float value = 0.0f)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, value) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  float& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  float at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }
  bool same_shape(const Image& o) const { return width == o.width && height == o.height && channels == o.channels; }
};

using Video = std::vector<Image>;

// Binary PPM (P6, maxval 255) from a 3-channel image in [0, 1].
void write_ppm(const std::filesystem::path& path, const Image& rgb);
Image read_ppm(const std::filesystem::path& path);
// Binary PGM (P5, maxval 255) from a 1-channel image in [0, 1].
void write_pgm(const std::filesystem::path& path, const Image& gray);
Image read_pgm(const std::filesystem::path& path);
// Middlebury .flo: "PIEH", int32 width, int32 height, float32 (u, v) pairs.
void write_flo(const std::filesystem::path& path, const Image& flow);
Image read_flo(const std::filesystem::path& path);

// Directory of frame_NNNN.ppm files plus manifest.json (fps, width, height,
// frame_count).
void write_video(const std::filesystem::path& dir, const Video& video, double fps);
Video read_video(const std::filesystem::path& dir);

}  // namespace hybridsim
