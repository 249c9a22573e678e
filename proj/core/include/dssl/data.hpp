#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dssl/augment.hpp"

namespace dssl {

enum class Domain { kGeneric, kTarget };

std::string to_string(Domain d);

/// Parameters of a synthetic phase-labelled image set: each phase owns a base intensity and a
/// band of sinusoidal texture frequencies (cycles per image width).
struct SyntheticSpec {
  std::size_t num_phases = 4;
  std::size_t frames_per_phase = 300;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  std::vector<std::pair<double, double>> freq_bands;
  std::vector<double> base_intensity;
  double texture_amplitude = 0.15;
  double noise_sigma = 0.05;
  Domain domain = Domain::kTarget;

  // 4 phases, bands [1,2)…[4,5), intensities 0.50…0.80.
  static SyntheticSpec target_default();
  // 8 classes, bands [5,5.75)…[10.25,11), intensities 0.200…0.445.
  static SyntheticSpec generic_default();
  // Same layout with a different class count / frame count; keeps the domain's bands.
  static SyntheticSpec make(Domain domain, std::size_t classes, std::size_t frames_per_class);

  void validate() const;
};

/// Frames with integer phase labels in [0, num_classes).
struct Dataset {
  std::vector<Frame> frames;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return frames.size(); }
};

// Pure function of (spec, seed). Frames are interleaved by phase: index i has phase i % num_phases.
Dataset generate_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed);

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

// Within each class, every `test_every`-th frame (in order) goes to the test split.
DatasetSplit split_dataset(const Dataset& ds, std::size_t test_every);

// Dataset cache: checkpoint-format pair holding "frames" (n×C×H×W) and "labels" (n).
void save_dataset(const Dataset& ds, const std::filesystem::path& stem, const std::string& domain);
Dataset load_dataset(const std::filesystem::path& stem);

}  // namespace dssl
