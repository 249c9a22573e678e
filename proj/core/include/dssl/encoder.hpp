#pragma once

#include <cstddef>

#include "dssl/autograd.hpp"
#include "dssl/rng.hpp"

namespace dssl {

/// Desk-scale stand-in for a ResNet backbone plus a 2-layer MLP projection head:
///   conv(in→c1, k, stride, pad) → relu → conv(c1→c2, k, stride, pad) → relu → gap → affine(c2→d_backbone)
///   head: affine(d_backbone→d_backbone) → relu → affine(d_backbone→d)
struct EncoderConfig {
  std::size_t in_channels = 1;
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  std::size_t conv1_channels = 8;
  std::size_t conv2_channels = 16;
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t pad = 1;
  std::size_t d_backbone = 64;
  std::size_t d = 32;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// θ^f (backbone) and θ^h (projection head) of one encoder.
struct EncoderParams {
  ParamSet backbone;
  ParamSet head;
};

inline constexpr double kNormalizeEps = 1e-12;

// Uniform in [−1/√fan_in, 1/√fan_in].
EncoderParams init_encoder(const EncoderConfig& cfg, Rng& rng);

// Parameter-by-parameter shape agreement.
bool same_architecture(const EncoderParams& a, const EncoderParams& b);
// Bitwise copy of values; optimizer state and gradients are reset.
void copy_values(const EncoderParams& from, EncoderParams& to);
bool values_bitwise_equal(const EncoderParams& a, const EncoderParams& b);

// Gradient-free path. batch: B×C×H×W.
Tensor backbone_features(const EncoderParams& enc, const EncoderConfig& cfg, const Tensor& batch);
Tensor encode(const EncoderParams& enc, const EncoderConfig& cfg, const Tensor& batch);

// Recorded path: returns unit-norm B×d embeddings with gradients flowing to enc.
Var encode(Graph& g, EncoderParams& enc, const EncoderConfig& cfg, const Tensor& batch);

}  // namespace dssl
