#include "hybridsim/conditioner.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "hybridsim/math.hpp"
#include "hybridsim/parallel.hpp"

namespace hybridsim {

namespace {

enum Stream : std::uint64_t { kInfill = 1, kFresh = 2, kInitial = 3 };

void check_same(const Video& a, const Video& b, const char* what) {
  if (a.size() != b.size()) throw Error(std::string(what) + ": frame counts differ");
  for (std::size_t k = 0; k < a.size(); ++k)
    if (!a[k].same_shape(b[k])) throw Error(std::string(what) + ": frame " + std::to_string(k) + " dimensions differ");
}

}  // namespace

DiffusionSchedule DiffusionSchedule::scaled_linear(int steps, int s1, int s2, double gamma) {
  constexpr int kTrain = 1000;
  const double b0 = std::sqrt(0.00085), b1 = std::sqrt(0.012);
  std::vector<double> alpha_bar(kTrain);
  double prod = 1.0;
  for (int k = 0; k < kTrain; ++k) {
    const double b = b0 + (b1 - b0) * k / (kTrain - 1);
    prod *= 1.0 - b * b;
    alpha_bar[k] = prod;
  }
  DiffusionSchedule s;
  s.steps = steps;
  s.s1 = s1;
  s.s2 = s2;
  s.gamma = gamma;
  if (steps < 1) throw Error("schedule: steps must be positive");
  s.alpha.resize(steps + 1);
  s.alpha[0] = 1.0;
  for (int i = 1; i <= steps; ++i) {
    const int t = std::clamp(static_cast<int>(std::lround(static_cast<double>(i) * kTrain / steps)) - 1, 0, kTrain - 1);
    s.alpha[i] = std::sqrt(alpha_bar[t]);
  }
  return s;
}

double DiffusionSchedule::noise_scale(int s) const {
  return std::sqrt(std::max(0.0, 1.0 - alpha[s] * alpha[s]));
}

void DiffusionSchedule::validate() const {
  if (steps < 1) throw Error("schedule: steps must be positive");
  if (alpha.size() != static_cast<std::size_t>(steps) + 1) throw Error("schedule: alpha must have steps + 1 entries");
  if (alpha[0] != 1.0) throw Error("schedule: alpha[0] must be 1");
  for (int s = 1; s <= steps; ++s) {
    if (!(alpha[s] > 0.0 && alpha[s] < 1.0)) throw Error("schedule: alpha[" + std::to_string(s) + "] must lie in (0, 1)");
    if (alpha[s] > alpha[s - 1]) throw Error("schedule: alpha must decrease with the step index");
  }
  if (s1 > steps) throw Error("schedule: s1 must not exceed the step count");
  if (s1 < 1) throw Error("schedule: s1 must be at least 1");
  if (s2 < 0 || s2 >= s1) throw Error("schedule: need 0 <= s2 < s1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error("schedule: gamma must lie in [0, 1]");
}

NoiseRng make_frame_rng(std::uint64_t seed, std::uint64_t frame, std::uint64_t stream) {
  return NoiseRng(splitmix64(splitmix64(splitmix64(seed) ^ frame) ^ (stream * 0x632be59bd9b4e019ULL)));
}

Image gaussian_image(int width, int height, int channels, NoiseRng& rng) {
  Image img(width, height, channels);
  std::normal_distribution<double> normal;
  for (auto& v : img.data) v = static_cast<float>(normal(rng));
  return img;
}

Image warp_noise(const Image& noise, const Image& flow, NoiseRng& rng) {
  if (flow.channels != 2 || flow.width != noise.width || flow.height != noise.height)
    throw Error("warp_noise: flow dimensions do not match the noise");
  const int W = noise.width, H = noise.height, C = noise.channels;
  Image out(W, H, C);
  std::vector<std::int64_t> source(static_cast<std::size_t>(W) * H, -1);
  std::vector<double> best(source.size(), -1.0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double u = flow.at(x, y, 0), v = flow.at(x, y, 1);
      if (!std::isfinite(u) || !std::isfinite(v)) throw Error("warp_noise: non-finite flow");
      const long tx = std::lround(x + u), ty = std::lround(y + v);
      if (tx < 0 || ty < 0 || tx >= W || ty >= H) continue;
      const std::size_t d = static_cast<std::size_t>(ty) * W + tx;
      const double mag = u * u + v * v;
      if (source[d] < 0 || mag > best[d]) {
        source[d] = static_cast<std::int64_t>(y) * W + x;
        best[d] = mag;
      }
    }
  std::normal_distribution<double> normal;
  for (std::size_t d = 0; d < source.size(); ++d)
    for (int c = 0; c < C; ++c)
      out.data[d * C + c] =
          source[d] >= 0 ? noise.data[static_cast<std::size_t>(source[d]) * C + c] : static_cast<float>(normal(rng));
  return out;
}

StructuredNoise build_structured_noise(const Video& flow, int width, int height, double gamma, std::uint64_t seed) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error("structured noise: gamma must lie in [0, 1]");
  StructuredNoise out;
  out.seed = seed;
  const double keep = std::sqrt(1.0 - gamma), mix = std::sqrt(gamma);
  NoiseRng r0 = make_frame_rng(seed, 0, kInitial);
  Image warped = gaussian_image(width, height, 3, r0);
  for (std::size_t t = 0; t <= flow.size(); ++t) {
    if (t > 0) {
      NoiseRng r = make_frame_rng(seed, t, kInfill);
      warped = warp_noise(warped, flow[t - 1], r);
    }
    if (gamma == 0.0) {
      out.frames.push_back(warped);
      continue;
    }
    NoiseRng rf = make_frame_rng(seed, t, kFresh);
    Image frame = gaussian_image(width, height, 3, rf);
    for (std::size_t i = 0; i < frame.data.size(); ++i)
      frame.data[i] = static_cast<float>(keep * warped.data[i] + mix * frame.data[i]);
    out.frames.push_back(std::move(frame));
  }
  return out;
}

Video ddim_update(const Video& v, const Video& clean, double alpha_s, double alpha_prev) {
  check_same(v, clean, "ddim_update");
  const double sig_s = std::sqrt(std::max(0.0, 1.0 - alpha_s * alpha_s));
  const double sig_p = std::sqrt(std::max(0.0, 1.0 - alpha_prev * alpha_prev));
  if (!(sig_s > 0.0)) throw Error("ddim_update: step has no noise");
  Video out = v;
  for (std::size_t k = 0; k < v.size(); ++k) {
    auto& o = out[k].data;
    const auto& x = v[k].data;
    const auto& c = clean[k].data;
    parallel_for(o.size(), [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        const double eps = (x[i] - alpha_s * c[i]) / sig_s;
        o[i] = static_cast<float>(alpha_prev * c[i] + sig_p * eps);
      }
    });
  }
  return out;
}

DenoiserInterface make_toward_target_denoiser(Video target) {
  auto shared = std::make_shared<const Video>(std::move(target));
  return {"toward_target", [shared](const Video& v, int s, const DiffusionSchedule& sch) {
            check_same(v, *shared, "toward_target");
            return ddim_update(v, *shared, sch.alpha[s], sch.alpha[s - 1]);
          }};
}

DenoiserInterface make_identity_blend_denoiser() {
  return {"identity_blend", [](const Video& v, int, const DiffusionSchedule&) {
            Video out = v;
            for (auto& f : out)
              for (auto& x : f.data) x = std::clamp(x, 0.0f, 1.0f);
            return out;
          }};
}

Video noised(const Video& coarse, const Video& noise, double alpha) {
  check_same(coarse, noise, "noised");
  const double sigma = std::sqrt(std::max(0.0, 1.0 - alpha * alpha));
  Video out = coarse;
  for (std::size_t k = 0; k < out.size(); ++k)
    for (std::size_t i = 0; i < out[k].data.size(); ++i)
      out[k].data[i] = static_cast<float>(alpha * coarse[k].data[i] + sigma * noise[k].data[i]);
  return out;
}

Video run_conditioned_generation(const DenoiserInterface& denoiser, const DiffusionSchedule& schedule,
                                 const Video& coarse, const Video& flow, const Video& mask, std::uint64_t seed,
                                 const ConditionOptions& options) {
  if (coarse.empty()) throw Error("conditioner: empty video");
  if (flow.size() + 1 != coarse.size()) throw Error("conditioner: need one flow frame fewer than video frames");
  for (std::size_t k = 0; k < flow.size(); ++k)
    if (flow[k].channels != 2 || flow[k].width != coarse[0].width || flow[k].height != coarse[0].height)
      throw Error("conditioner: flow frame " + std::to_string(k) + " dimensions differ from the video");
  schedule.validate();
  const StructuredNoise noise = build_structured_noise(flow, coarse[0].width, coarse[0].height, schedule.gamma, seed);
  return run_conditioned_generation(denoiser, schedule, coarse, noise, mask, options);
}

Video run_conditioned_generation(const DenoiserInterface& denoiser, const DiffusionSchedule& schedule,
                                 const Video& coarse, const StructuredNoise& noise, const Video& mask,
                                 const ConditionOptions& options) {
  schedule.validate();
  if (schedule.s1 >= schedule.steps) throw Error("conditioner: s1 must be below the step count");
  check_same(coarse, noise.frames, "conditioner (noise)");
  if (mask.size() != coarse.size()) throw Error("conditioner: mask frame count differs from the video");
  for (std::size_t k = 0; k < mask.size(); ++k)
    if (mask[k].channels != 1 || mask[k].width != coarse[k].width || mask[k].height != coarse[k].height)
      throw Error("conditioner: mask frame " + std::to_string(k) + " dimensions differ from the video");
  if (!denoiser.denoise) throw Error("conditioner: denoiser '" + denoiser.name + "' has no callable");

  auto inject = [&](Video& v, int s) {
    const Video guide = noised(coarse, noise.frames, schedule.alpha[s]);
    for (std::size_t k = 0; k < v.size(); ++k) {
      const int C = v[k].channels;
      for (std::size_t p = 0; p < mask[k].data.size(); ++p)
        if (mask[k].data[p] < 0.5f)
          for (int c = 0; c < C; ++c) v[k].data[p * C + c] = guide[k].data[p * C + c];
    }
  };

  Video v = noised(coarse, noise.frames, schedule.alpha[schedule.s1]);
  for (int s = schedule.s1; s >= 1; --s) {
    if (s == schedule.s2 && options.inject_background) inject(v, s);
    Video next = denoiser.denoise(v, s, schedule);
    check_same(v, next, ("denoiser '" + denoiser.name + "'").c_str());
    v = std::move(next);
  }
  if (schedule.s2 == 0 && options.inject_background) inject(v, 0);
  for (auto& f : v)
    for (auto& x : f.data) x = std::isfinite(x) ? std::clamp(x, 0.0f, 1.0f) : 0.0f;
  return v;
}

}  // namespace hybridsim
