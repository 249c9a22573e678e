#include "dssl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include "dssl/checkpoint.hpp"
#include "dssl/errors.hpp"

namespace dssl {

std::string to_string(Domain d) { return d == Domain::kGeneric ? "generic" : "target"; }

SyntheticSpec SyntheticSpec::make(Domain domain, std::size_t classes, std::size_t frames_per_class) {
  SyntheticSpec s;
  s.domain = domain;
  s.num_phases = classes;
  s.frames_per_phase = frames_per_class;
  s.freq_bands.clear();
  s.base_intensity.clear();
  for (std::size_t p = 0; p < classes; ++p) {
    const double k = static_cast<double>(p);
    if (domain == Domain::kTarget) {
      s.freq_bands.emplace_back(1.0 + k, 2.0 + k);
      s.base_intensity.push_back(classes > 1 ? 0.50 + 0.30 * k / static_cast<double>(classes - 1) : 0.65);
    } else {
      s.freq_bands.emplace_back(5.0 + 0.75 * k, 5.75 + 0.75 * k);
      s.base_intensity.push_back(classes > 1 ? 0.20 + 0.245 * k / static_cast<double>(classes - 1) : 0.32);
    }
  }
  return s;
}

SyntheticSpec SyntheticSpec::target_default() { return make(Domain::kTarget, 4, 300); }
SyntheticSpec SyntheticSpec::generic_default() { return make(Domain::kGeneric, 8, 300); }

void SyntheticSpec::validate() const {
  if (num_phases == 0 || frames_per_phase == 0 || height == 0 || width == 0 || channels == 0) {
    throw ParameterError("synthetic spec extents must be positive");
  }
  if (freq_bands.size() != num_phases || base_intensity.size() != num_phases) {
    throw ParameterError("synthetic spec needs one frequency band and intensity per phase");
  }
  for (std::size_t p = 0; p < num_phases; ++p) {
    const auto [lo, hi] = freq_bands[p];
    if (!(lo >= 0.0 && lo < hi)) throw ParameterError("frequency band " + std::to_string(p) + " is empty");
    if (!(base_intensity[p] >= 0.2 && base_intensity[p] <= 0.8)) {
      throw ParameterError("base intensity of phase " + std::to_string(p) + " outside [0.2, 0.8]");
    }
    for (std::size_t q = 0; q < p; ++q) {
      const auto [lo2, hi2] = freq_bands[q];
      if (lo < hi2 && lo2 < hi) throw ParameterError("frequency bands of phases " + std::to_string(q) + " and " +
                                                     std::to_string(p) + " overlap");
    }
  }
  if (!(noise_sigma >= 0.0) || !(texture_amplitude >= 0.0)) throw ParameterError("noise and amplitude must be >= 0");
}

Dataset generate_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  Dataset ds;
  ds.num_classes = spec.num_phases;
  const std::uint64_t domain_key = spec.domain == Domain::kGeneric ? 1 : 2;
  const double W = static_cast<double>(spec.width);
  for (std::size_t i = 0; i < spec.frames_per_phase; ++i) {
    for (std::size_t p = 0; p < spec.num_phases; ++p) {
      Rng rng = Rng::derive({seed, static_cast<std::uint64_t>(Stream::kData), domain_key, p, i});
      const double freq = rng.uniform(spec.freq_bands[p].first, spec.freq_bands[p].second);
      const double theta = rng.uniform(0.0, std::numbers::pi);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double cx = std::cos(theta), cy = std::sin(theta);
      Frame f(spec.channels, spec.height, spec.width);
      for (std::size_t c = 0; c < spec.channels; ++c) {
        for (std::size_t y = 0; y < spec.height; ++y) {
          for (std::size_t x = 0; x < spec.width; ++x) {
            const double u = (static_cast<double>(x) * cx + static_cast<double>(y) * cy) / W;
            double v = spec.base_intensity[p] + spec.texture_amplitude * std::sin(2.0 * std::numbers::pi * freq * u + phase);
            if (spec.noise_sigma > 0.0) v += spec.noise_sigma * rng.normal();
            f.at(c, y, x) = std::clamp(v, 0.0, 1.0);
          }
        }
      }
      ds.frames.push_back(std::move(f));
      ds.labels.push_back(static_cast<int>(p));
    }
  }
  return ds;
}

DatasetSplit split_dataset(const Dataset& ds, std::size_t test_every) {
  if (test_every < 2) throw ParameterError("test_every must be at least 2");
  DatasetSplit out;
  out.train.num_classes = out.test.num_classes = ds.num_classes;
  std::vector<std::size_t> seen(ds.num_classes, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto c = static_cast<std::size_t>(ds.labels[i]);
    Dataset& dst = (seen[c]++ % test_every == test_every - 1) ? out.test : out.train;
    dst.frames.push_back(ds.frames[i]);
    dst.labels.push_back(ds.labels[i]);
  }
  return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& stem, const std::string& domain) {
  if (ds.frames.empty()) throw ContractError("cannot cache an empty dataset");
  Checkpoint ckpt;
  ckpt.meta["kind"] = "dataset";
  ckpt.meta["domain"] = domain;
  ckpt.meta["num_classes"] = ds.num_classes;
  ckpt.add("frames", stack_frames(ds.frames));
  Tensor labels({ds.labels.size()});
  for (std::size_t i = 0; i < ds.labels.size(); ++i) labels[i] = ds.labels[i];
  ckpt.add("labels", std::move(labels));
  save_checkpoint(ckpt, stem);
}

Dataset load_dataset(const std::filesystem::path& stem) {
  const Checkpoint ckpt = load_checkpoint(stem);
  const Tensor& frames = ckpt.at("frames");
  const Tensor& labels = ckpt.at("labels");
  if (frames.rank() != 4 || labels.rank() != 1 || labels.dim(0) != frames.dim(0)) {
    throw CheckpointError(CheckpointError::Kind::kShape, "dataset cache " + stem.string() + " has inconsistent shapes");
  }
  Dataset ds;
  ds.num_classes = ckpt.meta.value("num_classes", std::size_t{0});
  const Shape fs{frames.dim(1), frames.dim(2), frames.dim(3)};
  const std::size_t per = shape_numel(fs);
  for (std::size_t i = 0; i < frames.dim(0); ++i) {
    Tensor t(fs);
    std::memcpy(t.raw(), frames.raw() + i * per, per * sizeof(double));
    ds.frames.emplace_back(std::move(t));
    const int label = static_cast<int>(labels[i]);
    if (label < 0 || static_cast<std::size_t>(label) >= ds.num_classes) {
      throw CheckpointError(CheckpointError::Kind::kManifest, "dataset label out of range in " + stem.string());
    }
    ds.labels.push_back(label);
  }
  return ds;
}

}  // namespace dssl
