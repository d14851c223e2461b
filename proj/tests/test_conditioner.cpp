#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "hybridsim/conditioner.hpp"

using namespace hybridsim;

namespace {

Video constant_flow(int frames, int w, int h, float u, float v) {
  Video out;
  for (int k = 0; k < frames; ++k) {
    Image f(w, h, 2);
    for (std::size_t p = 0; p < f.pixel_count(); ++p) {
      f.data[p * 2] = u;
      f.data[p * 2 + 1] = v;
    }
    out.push_back(f);
  }
  return out;
}

// Rotation about the image centre, a non-trivial many-to-one transport.
Video swirl_flow(int frames, int w, int h) {
  Video out;
  for (int k = 0; k < frames; ++k) {
    Image f(w, h, 2);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        f.at(x, y, 0) = static_cast<float>(-0.05 * (y - h / 2.0));
        f.at(x, y, 1) = static_cast<float>(0.05 * (x - w / 2.0));
      }
    out.push_back(f);
  }
  return out;
}

Video random_video(int frames, int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Video out;
  for (int k = 0; k < frames; ++k) {
    Image img(w, h, 3);
    for (auto& v : img.data) v = u(rng);
    out.push_back(img);
  }
  return out;
}

Video masks(int frames, int w, int h, float value) {
  return Video(frames, Image(w, h, 1, value));
}

double ks_normal(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double cdf = 0.5 * std::erfc(-x[i] / std::sqrt(2.0));
    d = std::max({d, std::abs((i + 1) / n - cdf), std::abs(cdf - i / n)});
  }
  return d;
}

double max_abs_diff(const Video& a, const Video& b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < a[k].data.size(); ++i)
      d = std::max(d, std::abs(static_cast<double>(a[k].data[i]) - b[k].data[i]));
  return d;
}

}  // namespace

TEST_CASE("schedule coefficients") {
  const DiffusionSchedule s = DiffusionSchedule::scaled_linear();
  CHECK_NOTHROW(s.validate());
  CHECK(s.alpha.size() == 26);
  CHECK(s.alpha[0] == 1.0);
  // Independent recomputation of alpha_bar at the last training step.
  double prod = 1.0;
  for (int k = 0; k < 1000; ++k) {
    const double b = std::pow(std::sqrt(0.00085) + (std::sqrt(0.012) - std::sqrt(0.00085)) * k / 999.0, 2);
    prod *= 1.0 - b;
  }
  CHECK(s.alpha[25] == doctest::Approx(std::sqrt(prod)).epsilon(1e-12));
  for (int k = 1; k <= 25; ++k) CHECK(s.alpha[k] < s.alpha[k - 1]);

  DiffusionSchedule bad = s;
  bad.s2 = 21;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = s;
  bad.gamma = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = s;
  bad.s1 = 30;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("frame generators are reproducible and independent") {
  NoiseRng a = make_frame_rng(7, 3, 1), b = make_frame_rng(7, 3, 1), c = make_frame_rng(7, 4, 1);
  const Image ia = gaussian_image(8, 8, 3, a), ib = gaussian_image(8, 8, 3, b), ic = gaussian_image(8, 8, 3, c);
  CHECK(ia.data == ib.data);
  CHECK(ia.data != ic.data);
}

TEST_CASE("zero flow warp is the identity") {
  NoiseRng r = make_frame_rng(1, 0, 0);
  const Image n = gaussian_image(40, 30, 3, r);
  NoiseRng fill = make_frame_rng(1, 1, 0);
  const Image w = warp_noise(n, constant_flow(1, 40, 30, 0, 0)[0], fill);
  CHECK(w.data == n.data);
}

TEST_CASE("integer flow shifts the noise and refills the vacated column") {
  NoiseRng r = make_frame_rng(2, 0, 0);
  const Image n = gaussian_image(20, 10, 3, r);
  NoiseRng fill = make_frame_rng(2, 1, 0);
  const Image w = warp_noise(n, constant_flow(1, 20, 10, 1, 0)[0], fill);
  for (int y = 0; y < 10; ++y) {
    for (int x = 1; x < 20; ++x)
      for (int c = 0; c < 3; ++c) CHECK(w.at(x, y, c) == n.at(x - 1, y, c));
    for (int c = 0; c < 3; ++c) CHECK(w.at(0, y, c) != n.at(0, y, c));
  }
  NoiseRng bad = make_frame_rng(0, 0, 0);
  CHECK_THROWS_AS(warp_noise(n, Image(5, 5, 2), bad), Error);
}

TEST_CASE("structured noise keeps standard normal statistics") {
  const int w = 180, h = 120;
  const Video flow = swirl_flow(4, w, h);
  std::vector<double> ks;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const StructuredNoise n = build_structured_noise(flow, w, h, 0.4, seed);
    REQUIRE(n.frames.size() == 5);
    const Image& last = n.frames.back();
    std::vector<double> x(last.data.begin(), last.data.end());
    double mean = 0.0, var = 0.0;
    for (double v : x) mean += v;
    mean /= x.size();
    for (double v : x) var += (v - mean) * (v - mean);
    var /= x.size();
    CHECK(std::abs(mean) < 0.02);
    CHECK(var > 0.95);
    CHECK(var < 1.05);
    ks.push_back(ks_normal(x));
  }
  std::sort(ks.begin(), ks.end());
  CHECK(0.5 * (ks[4] + ks[5]) < 0.01);
}

TEST_CASE("gamma extremes") {
  const int w = 50, h = 40;
  const Video flow = constant_flow(1, w, h, 2, 1);
  SUBCASE("gamma 0 is a pure warp") {
    const StructuredNoise n = build_structured_noise(flow, w, h, 0.0, 9);
    for (int y = 1; y < h; ++y)
      for (int x = 2; x < w; ++x) CHECK(n.frames[1].at(x, y, 0) == n.frames[0].at(x - 2, y - 1, 0));
  }
  SUBCASE("gamma 1 decorrelates consecutive frames") {
    const Video zero = constant_flow(1, 200, 200, 0, 0);
    const StructuredNoise n = build_structured_noise(zero, 200, 200, 1.0, 9);
    double c = 0.0;
    for (std::size_t i = 0; i < n.frames[0].data.size(); ++i) c += n.frames[0].data[i] * n.frames[1].data[i];
    c /= n.frames[0].data.size();
    CHECK(std::abs(c) < 0.01);
  }
  SUBCASE("intermediate gamma correlates as sqrt(1 - gamma)") {
    const Video zero = constant_flow(1, 200, 200, 0, 0);
    const StructuredNoise n = build_structured_noise(zero, 200, 200, 0.4, 9);
    double c = 0.0;
    for (std::size_t i = 0; i < n.frames[0].data.size(); ++i) c += n.frames[0].data[i] * n.frames[1].data[i];
    c /= n.frames[0].data.size();
    // frame0 = k w0 + m f0, frame1 = k w0 + m f1 with k^2 = 1 - gamma.
    CHECK(c == doctest::Approx(0.6).epsilon(0.03));
  }
  CHECK_THROWS_AS(build_structured_noise(flow, w, h, -0.1, 0), Error);
}

TEST_CASE("sampler update reproduces its clean prediction at step 0") {
  const Video x = random_video(2, 8, 6, 1), c = random_video(2, 8, 6, 2);
  const Video out = ddim_update(x, c, 0.5, 1.0);
  CHECK(max_abs_diff(out, c) < 1e-6);
  CHECK_THROWS_AS(ddim_update(x, c, 1.0, 1.0), Error);
}

TEST_CASE("toward_target converges to its target") {
  const int w = 24, h = 16, T = 4;
  const Video coarse = random_video(T, w, h, 3), target = random_video(T, w, h, 4);
  const Video flow = constant_flow(T - 1, w, h, 1, 0);
  Video mask = masks(T, w, h, 0.0f);
  for (auto& m : mask)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w / 2; ++x) m.at(x, y) = 1.0f;
  const Video v = run_conditioned_generation(make_toward_target_denoiser(target), DiffusionSchedule::scaled_linear(),
                                             coarse, flow, mask, 5);
  CHECK(max_abs_diff(v, target) < 1e-4);

  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const int steps = std::uniform_int_distribution<int>(5, 50)(rng);
    const int s1 = std::uniform_int_distribution<int>(1, steps - 1)(rng);
    const int s2 = std::uniform_int_distribution<int>(0, s1 - 1)(rng);
    const double gamma = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const DiffusionSchedule s = DiffusionSchedule::scaled_linear(steps, s1, s2, gamma);
    const Video out = run_conditioned_generation(make_toward_target_denoiser(target), s, coarse, flow, mask, trial);
    CHECK(max_abs_diff(out, target) < 1e-4);
  }
}

TEST_CASE("an all-ones mask makes background injection a no-op") {
  const int w = 24, h = 16, T = 3;
  const Video coarse = random_video(T, w, h, 6), target = random_video(T, w, h, 7);
  const Video flow = constant_flow(T - 1, w, h, 0.4f, -1.2f);
  const Video ones = masks(T, w, h, 1.0f);
  const DenoiserInterface d = make_toward_target_denoiser(target);
  const DiffusionSchedule s = DiffusionSchedule::scaled_linear();
  ConditionOptions off;
  off.inject_background = false;
  const Video a = run_conditioned_generation(d, s, coarse, flow, ones, 8);
  const Video b = run_conditioned_generation(d, s, coarse, flow, ones, 8, off);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k].data == b[k].data);
}

TEST_CASE("one-step conditioning toward the coarse video returns it") {
  const int w = 16, h = 12, T = 3;
  const Video coarse = random_video(T, w, h, 9);
  const DiffusionSchedule s = DiffusionSchedule::scaled_linear(25, 1, 0, 0.4);
  const Video out = run_conditioned_generation(make_toward_target_denoiser(coarse), s, coarse,
                                               constant_flow(T - 1, w, h, 0, 0), masks(T, w, h, 0.0f), 1);
  CHECK(max_abs_diff(out, coarse) < 1e-4);
  CHECK(out.size() == coarse.size());
  CHECK(out[0].same_shape(coarse[0]));
}

TEST_CASE("identity_blend leaves a clean video unchanged") {
  const Video v = random_video(2, 10, 10, 10);
  const DenoiserInterface d = make_identity_blend_denoiser();
  const Video out = d.denoise(v, 5, DiffusionSchedule::scaled_linear());
  CHECK(max_abs_diff(out, v) < 1e-6);
}

TEST_CASE("conditioning rejects mismatched inputs") {
  const Video coarse = random_video(3, 8, 8, 1);
  const DenoiserInterface d = make_toward_target_denoiser(coarse);
  const DiffusionSchedule s = DiffusionSchedule::scaled_linear();
  CHECK_THROWS_AS(run_conditioned_generation(d, s, coarse, constant_flow(3, 8, 8, 0, 0), masks(3, 8, 8, 0), 0), Error);
  CHECK_THROWS_AS(run_conditioned_generation(d, s, coarse, constant_flow(2, 8, 8, 0, 0), masks(2, 8, 8, 0), 0), Error);
  CHECK_THROWS_AS(run_conditioned_generation(d, s, coarse, constant_flow(2, 9, 8, 0, 0), masks(3, 8, 8, 0), 0), Error);
  DenoiserInterface broken{"broken", [](const Video& v, int, const DiffusionSchedule&) {
                             Video out = v;
                             out.pop_back();
                             return out;
                           }};
  CHECK_THROWS_AS(run_conditioned_generation(broken, s, coarse, constant_flow(2, 8, 8, 0, 0), masks(3, 8, 8, 0), 0),
                  Error);
}
