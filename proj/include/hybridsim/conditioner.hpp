#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "hybridsim/image_io.hpp"

namespace hybridsim {

// Step coefficients of a deterministic sampler. alpha[s] multiplies the clean
// signal at step s (alpha[0] = 1) and sqrt(1 - alpha[s]^2) the noise.
struct DiffusionSchedule {
  int steps = 25;
  std::vector<double> alpha;
  int s1 = 21;  // object (mask) injection step
  int s2 = 18;  // background injection step
  double gamma = 0.4;

  // Scaled-linear betas (0.00085 to 0.012 over 1000 training steps); step s
  // maps to training timestep s * 1000 / steps - 1.
  static DiffusionSchedule scaled_linear(int steps = 25, int s1 = 21, int s2 = 18, double gamma = 0.4);
  double noise_scale(int s) const;
  // Throws Error naming the broken invariant.
  void validate() const;
};

using NoiseRng = std::mt19937_64;

// Per-frame generator seeded from (seed, frame, stream) with splitmix64.
NoiseRng make_frame_rng(std::uint64_t seed, std::uint64_t frame, std::uint64_t stream);
Image gaussian_image(int width, int height, int channels, NoiseRng& rng);

// Forward nearest-pixel transport: the value at source pixel x moves to
// round(x + flow(x)). On collisions the source with the largest flow
// magnitude wins (ties: lowest source index). Unwritten pixels get fresh
// standard normal draws from rng.
Image warp_noise(const Image& noise, const Image& flow, NoiseRng& rng);

struct StructuredNoise {
  Video frames;  // T + 1 frames, 3 channels
  std::uint64_t seed = 0;
};

// Frame 0 is fresh noise, frame t+1 warps the unmixed frame t along flow[t];
// every frame is then mixed as sqrt(1 - gamma) * warped + sqrt(gamma) * fresh.
StructuredNoise build_structured_noise(const Video& flow, int width, int height, double gamma, std::uint64_t seed);

struct DenoiserInterface {
  std::string name;
  // Returns V_{s-1} from V_s; output dimensions equal input dimensions.
  std::function<Video(const Video& v, int s, const DiffusionSchedule& schedule)> denoise;
};

// Deterministic sampler update from step s to s - 1 given a clean prediction.
Video ddim_update(const Video& v, const Video& clean, double alpha_s, double alpha_prev);

// toward_target: sampler step whose clean prediction is exactly `target`.
DenoiserInterface make_toward_target_denoiser(Video target);
// identity_blend: returns its input projected onto [0, 1].
DenoiserInterface make_identity_blend_denoiser();

// alpha * coarse + sqrt(1 - alpha^2) * noise.
Video noised(const Video& coarse, const Video& noise, double alpha);

struct ConditionOptions {
  bool inject_background = true;  // the step-s2 background replacement
};

// Starts at s1 from the noised coarse video, replaces background pixels
// (mask 0) with the noised coarse video at s2, denoises to step 0 and clips
// the result to [0, 1].
Video run_conditioned_generation(const DenoiserInterface& denoiser, const DiffusionSchedule& schedule,
                                 const Video& coarse, const Video& flow, const Video& mask, std::uint64_t seed,
                                 const ConditionOptions& options = {});
// Same, with a prebuilt noise tensor.
Video run_conditioned_generation(const DenoiserInterface& denoiser, const DiffusionSchedule& schedule,
                                 const Video& coarse, const StructuredNoise& noise, const Video& mask,
                                 const ConditionOptions& options = {});

}  // namespace hybridsim
