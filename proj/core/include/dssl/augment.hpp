#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dssl/rng.hpp"
#include "dssl/tensor.hpp"

namespace dssl {

/// One image, C×H×W, pixel values in [0,1].
struct Frame {
  Tensor pixels;

  Frame() = default;
  explicit Frame(Tensor p);
  Frame(std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0);

  std::size_t channels() const { return pixels.dim(0); }
  std::size_t height() const { return pixels.dim(1); }
  std::size_t width() const { return pixels.dim(2); }
  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height() + y) * width() + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height() + y) * width() + x]; }
};

struct CropBox {
  std::size_t top = 0, left = 0, height = 0, width = 0;
};

struct AugmentConfig {
  double crop_scale_lo = 0.4;
  double crop_scale_hi = 1.0;
  double flip_prob = 0.5;
  double brightness_delta = 0.2;
  double contrast_lo = 0.8;
  double contrast_hi = 1.2;
  double noise_sigma = 0.02;
  std::size_t out_height = 32;
  std::size_t out_width = 32;

  void validate() const;
};

// The random draws behind one view, exposed so tests can inspect them.
struct ViewTransform {
  CropBox box;
  bool flip = false;
  double brightness = 0.0;
  double contrast = 1.0;
};

ViewTransform sample_transform(const Frame& v, const AugmentConfig& cfg, Rng& rng);

// crop_resize → horizontal_flip → photometric_jitter → gaussian_noise.
Frame apply_transform(const Frame& v, const ViewTransform& t, const AugmentConfig& cfg, Rng& rng);

Frame sample_view(const Frame& v, const AugmentConfig& cfg, Rng& rng);

// Bilinear resample of the box with half-pixel centers.
Frame crop_resize(const Frame& v, const CropBox& box, std::size_t out_height, std::size_t out_width);
Frame horizontal_flip(const Frame& v);
// Per channel: clip((x − mean)·c + mean + b, 0, 1).
Frame photometric_jitter(const Frame& v, double b, double c);
Frame gaussian_noise(const Frame& v, double sigma, Rng& rng);

Tensor stack_frames(std::span<const Frame> frames);

// View `view_index` of every frame in the batch. Sample i draws from its own stream keyed by
// (step_seed, i, view_index), so the two views never share draws.
Tensor make_view_batch(std::span<const Frame> batch, const AugmentConfig& cfg, std::uint64_t step_seed,
                       std::uint64_t view_index);

}  // namespace dssl
