#include "dssl/augment.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "dssl/errors.hpp"

namespace dssl {
namespace {

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

Frame::Frame(Tensor p) : pixels(std::move(p)) {
  if (pixels.rank() != 3) throw DimensionError("frame must be C×H×W, got " + shape_to_string(pixels.shape()));
}

Frame::Frame(std::size_t channels, std::size_t height, std::size_t width, double fill)
    : pixels({channels, height, width}, fill) {}

void AugmentConfig::validate() const {
  if (!(crop_scale_lo > 0.0 && crop_scale_lo <= crop_scale_hi && crop_scale_hi <= 1.0)) {
    throw ParameterError("crop_scale_range must satisfy 0 < lo <= hi <= 1");
  }
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ParameterError("flip_prob must lie in [0,1]");
  if (!(brightness_delta >= 0.0)) throw ParameterError("brightness_delta must be non-negative");
  if (!(contrast_lo > 0.0 && contrast_lo <= contrast_hi)) {
    throw ParameterError("contrast_range must satisfy 0 < lo <= hi");
  }
  if (!(noise_sigma >= 0.0)) throw ParameterError("noise_sigma must be non-negative");
  if (out_height == 0 || out_width == 0) throw ParameterError("output_size must be positive");
}

ViewTransform sample_transform(const Frame& v, const AugmentConfig& cfg, Rng& rng) {
  ViewTransform t;
  const double H = static_cast<double>(v.height()), W = static_cast<double>(v.width());
  const double log_lo = std::log(3.0 / 4.0), log_hi = std::log(4.0 / 3.0);
  t.box = CropBox{0, 0, v.height(), v.width()};
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double area = rng.uniform(cfg.crop_scale_lo, cfg.crop_scale_hi) * H * W;
    const double aspect = std::exp(rng.uniform(log_lo, log_hi));
    const auto w = static_cast<std::size_t>(std::lround(std::sqrt(area * aspect)));
    const auto h = static_cast<std::size_t>(std::lround(std::sqrt(area / aspect)));
    if (w >= 1 && h >= 1 && w <= v.width() && h <= v.height()) {
      t.box.height = h;
      t.box.width = w;
      t.box.top = static_cast<std::size_t>(rng.uniform_int(v.height() - h + 1));
      t.box.left = static_cast<std::size_t>(rng.uniform_int(v.width() - w + 1));
      break;
    }
  }
  t.flip = rng.uniform() < cfg.flip_prob;
  t.brightness = rng.uniform(-cfg.brightness_delta, cfg.brightness_delta);
  t.contrast = rng.uniform(cfg.contrast_lo, cfg.contrast_hi);
  return t;
}

Frame apply_transform(const Frame& v, const ViewTransform& t, const AugmentConfig& cfg, Rng& rng) {
  Frame out = crop_resize(v, t.box, cfg.out_height, cfg.out_width);
  if (t.flip) out = horizontal_flip(out);
  out = photometric_jitter(out, t.brightness, t.contrast);
  return gaussian_noise(out, cfg.noise_sigma, rng);
}

Frame sample_view(const Frame& v, const AugmentConfig& cfg, Rng& rng) {
  const ViewTransform t = sample_transform(v, cfg, rng);
  return apply_transform(v, t, cfg, rng);
}

Frame crop_resize(const Frame& v, const CropBox& box, std::size_t out_height, std::size_t out_width) {
  if (box.height == 0 || box.width == 0 || box.top + box.height > v.height() || box.left + box.width > v.width()) {
    throw ParameterError("crop box [" + std::to_string(box.top) + "," + std::to_string(box.left) + "," +
                         std::to_string(box.height) + "," + std::to_string(box.width) + "] outside frame " +
                         shape_to_string(v.pixels.shape()));
  }
  if (out_height == 0 || out_width == 0) throw ParameterError("crop_resize output size must be positive");
  Frame out(v.channels(), out_height, out_width);
  const double sy = static_cast<double>(box.height) / static_cast<double>(out_height);
  const double sx = static_cast<double>(box.width) / static_cast<double>(out_width);
  const double y_max = static_cast<double>(box.height - 1);
  const double x_max = static_cast<double>(box.width - 1);
  for (std::size_t oy = 0; oy < out_height; ++oy) {
    const double fy = std::clamp((static_cast<double>(oy) + 0.5) * sy - 0.5, 0.0, y_max);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, box.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < out_width; ++ox) {
      const double fx = std::clamp((static_cast<double>(ox) + 0.5) * sx - 0.5, 0.0, x_max);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, box.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < v.channels(); ++c) {
        const double a = v.at(c, box.top + y0, box.left + x0);
        const double b = v.at(c, box.top + y0, box.left + x1);
        const double d = v.at(c, box.top + y1, box.left + x0);
        const double e = v.at(c, box.top + y1, box.left + x1);
        const double top = a * (1.0 - wx) + b * wx;
        const double bottom = d * (1.0 - wx) + e * wx;
        out.at(c, oy, ox) = clip01(top * (1.0 - wy) + bottom * wy);
      }
    }
  }
  return out;
}

Frame horizontal_flip(const Frame& v) {
  Frame out = v;
  for (std::size_t c = 0; c < v.channels(); ++c) {
    for (std::size_t y = 0; y < v.height(); ++y) {
      for (std::size_t x = 0; x < v.width(); ++x) out.at(c, y, x) = v.at(c, y, v.width() - 1 - x);
    }
  }
  return out;
}

Frame photometric_jitter(const Frame& v, double b, double c) {
  if (!(c > 0.0)) throw ParameterError("contrast factor must be positive");
  if (b == 0.0 && c == 1.0) return v;
  Frame out = v;
  const std::size_t plane = v.height() * v.width();
  for (std::size_t ch = 0; ch < v.channels(); ++ch) {
    double* p = out.pixels.raw() + ch * plane;
    double mean = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mean += p[i];
    mean /= static_cast<double>(plane);
    for (std::size_t i = 0; i < plane; ++i) p[i] = clip01((p[i] - mean) * c + mean + b);
  }
  return out;
}

Frame gaussian_noise(const Frame& v, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw ParameterError("noise sigma must be non-negative");
  if (sigma == 0.0) return v;
  Frame out = v;
  for (double& p : out.pixels.data()) p = clip01(p + sigma * rng.normal());
  return out;
}

Tensor stack_frames(std::span<const Frame> frames) {
  if (frames.empty()) throw DimensionError("cannot stack an empty frame batch");
  const Shape& s = frames.front().pixels.shape();
  Tensor out({frames.size(), s[0], s[1], s[2]});
  const std::size_t per = shape_numel(s);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].pixels.shape() != s) {
      throw DimensionError("frame " + std::to_string(i) + " has shape " + shape_to_string(frames[i].pixels.shape()) +
                           ", expected " + shape_to_string(s));
    }
    std::memcpy(out.raw() + i * per, frames[i].pixels.raw(), per * sizeof(double));
  }
  return out;
}

Tensor make_view_batch(std::span<const Frame> batch, const AugmentConfig& cfg, std::uint64_t step_seed,
                       std::uint64_t view_index) {
  std::vector<Frame> views;
  views.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Rng rng = Rng::derive({step_seed, static_cast<std::uint64_t>(Stream::kView), i, view_index});
    views.push_back(sample_view(batch[i], cfg, rng));
  }
  return stack_frames(views);
}

}  // namespace dssl
