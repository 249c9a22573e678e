#include "dssl/encoder.hpp"

#include <cmath>

#include "dssl/errors.hpp"
#include "dssl/ops.hpp"

namespace dssl {
namespace {

Tensor uniform_tensor(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data()) v = rng.uniform(-s, s);
  return t;
}

void check_batch(const EncoderConfig& cfg, const Tensor& batch) {
  if (batch.rank() != 4 || batch.dim(1) != cfg.in_channels || batch.dim(2) != cfg.image_height ||
      batch.dim(3) != cfg.image_width) {
    throw DimensionError("encoder expects B×" + std::to_string(cfg.in_channels) + "×" +
                         std::to_string(cfg.image_height) + "×" + std::to_string(cfg.image_width) + ", got " +
                         shape_to_string(batch.shape()));
  }
}

}  // namespace

void EncoderConfig::validate() const {
  if (in_channels == 0 || image_height == 0 || image_width == 0 || conv1_channels == 0 || conv2_channels == 0 ||
      kernel == 0 || stride == 0 || d_backbone == 0 || d == 0) {
    throw ParameterError("encoder extents must be positive");
  }
}

EncoderParams init_encoder(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderParams enc;
  const std::size_t k2 = cfg.kernel * cfg.kernel;
  enc.backbone.add("conv1.W", uniform_tensor({cfg.conv1_channels, cfg.in_channels, cfg.kernel, cfg.kernel},
                                             cfg.in_channels * k2, rng));
  enc.backbone.add("conv2.W", uniform_tensor({cfg.conv2_channels, cfg.conv1_channels, cfg.kernel, cfg.kernel},
                                             cfg.conv1_channels * k2, rng));
  enc.backbone.add("fc.W", uniform_tensor({cfg.conv2_channels, cfg.d_backbone}, cfg.conv2_channels, rng));
  enc.backbone.add("fc.b", uniform_tensor({cfg.d_backbone}, cfg.conv2_channels, rng));
  enc.head.add("fc1.W", uniform_tensor({cfg.d_backbone, cfg.d_backbone}, cfg.d_backbone, rng));
  enc.head.add("fc1.b", uniform_tensor({cfg.d_backbone}, cfg.d_backbone, rng));
  enc.head.add("fc2.W", uniform_tensor({cfg.d_backbone, cfg.d}, cfg.d_backbone, rng));
  enc.head.add("fc2.b", uniform_tensor({cfg.d}, cfg.d_backbone, rng));
  return enc;
}

bool same_architecture(const EncoderParams& a, const EncoderParams& b) {
  auto same = [](const ParamSet& x, const ParamSet& y) {
    if (x.size() != y.size()) return false;
    for (const auto& [name, p] : x) {
      if (!y.contains(name) || y.at(name).value.shape() != p.value.shape()) return false;
    }
    return true;
  };
  return same(a.backbone, b.backbone) && same(a.head, b.head);
}

void copy_values(const EncoderParams& from, EncoderParams& to) {
  if (!same_architecture(from, to)) throw ContractError("copy_values: encoder architectures differ");
  auto copy = [](const ParamSet& src, ParamSet& dst) {
    for (auto& [name, p] : dst) {
      p.value = src.at(name).value;
      p.grad.fill(0.0);
      p.velocity.fill(0.0);
    }
  };
  copy(from.backbone, to.backbone);
  copy(from.head, to.head);
}

bool values_bitwise_equal(const EncoderParams& a, const EncoderParams& b) {
  if (!same_architecture(a, b)) return false;
  auto eq = [](const ParamSet& x, const ParamSet& y) {
    for (const auto& [name, p] : x) {
      if (!bitwise_equal(p.value, y.at(name).value)) return false;
    }
    return true;
  };
  return eq(a.backbone, b.backbone) && eq(a.head, b.head);
}

Tensor backbone_features(const EncoderParams& enc, const EncoderConfig& cfg, const Tensor& batch) {
  check_batch(cfg, batch);
  const ParamSet& bb = enc.backbone;
  Tensor h = ops::relu(ops::conv2d(batch, bb.at("conv1.W").value, cfg.stride, cfg.pad));
  h = ops::relu(ops::conv2d(h, bb.at("conv2.W").value, cfg.stride, cfg.pad));
  return ops::affine(ops::global_avg_pool(h), bb.at("fc.W").value, bb.at("fc.b").value);
}

Tensor encode(const EncoderParams& enc, const EncoderConfig& cfg, const Tensor& batch) {
  const ParamSet& hd = enc.head;
  Tensor z = backbone_features(enc, cfg, batch);
  z = ops::relu(ops::affine(z, hd.at("fc1.W").value, hd.at("fc1.b").value));
  z = ops::affine(z, hd.at("fc2.W").value, hd.at("fc2.b").value);
  return ops::l2_normalize(z, kNormalizeEps);
}

Var encode(Graph& g, EncoderParams& enc, const EncoderConfig& cfg, const Tensor& batch) {
  check_batch(cfg, batch);
  ParamSet& bb = enc.backbone;
  ParamSet& hd = enc.head;
  Var x = g.constant(batch);
  Var h = ag::relu(g, ag::conv2d(g, x, g.param(bb.at("conv1.W")), cfg.stride, cfg.pad));
  h = ag::relu(g, ag::conv2d(g, h, g.param(bb.at("conv2.W")), cfg.stride, cfg.pad));
  h = ag::affine(g, ag::global_avg_pool(g, h), g.param(bb.at("fc.W")), g.param(bb.at("fc.b")));
  h = ag::relu(g, ag::affine(g, h, g.param(hd.at("fc1.W")), g.param(hd.at("fc1.b"))));
  h = ag::affine(g, h, g.param(hd.at("fc2.W")), g.param(hd.at("fc2.b")));
  return ag::l2_normalize(g, h, kNormalizeEps);
}

}  // namespace dssl
