#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dssl/augment.hpp"
#include "dssl/contrastive.hpp"
#include "dssl/data.hpp"
#include "dssl/encoder.hpp"
#include "dssl/eval.hpp"

namespace dssl::cli {

/// Flat configuration shared by every subcommand. Keys map one-to-one onto JSON keys.
struct RunConfig {
  std::string command;
  std::string out;

  std::uint64_t seed = 7;
  std::uint64_t data_seed = 7;
  std::size_t steps = 500;
  double tau = 0.07;
  double m = 0.999;
  double lambda = 5.0;
  double distill_tau = 0.07;
  std::size_t batch = 32;
  std::size_t queue = 256;
  double lr = 0.03;
  double momentum = 0.9;
  double weight_decay = 1e-4;

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

  double crop_scale_lo = 0.4;
  double crop_scale_hi = 1.0;
  double flip_prob = 0.5;
  double brightness_delta = 0.2;
  double contrast_lo = 0.8;
  double contrast_hi = 1.2;
  double noise_sigma = 0.02;

  std::size_t target_phases = 4;
  std::size_t target_frames_per_phase = 300;
  std::size_t generic_classes = 8;
  std::size_t generic_frames_per_class = 300;
  double texture_amplitude = 0.15;
  double data_noise_sigma = 0.05;
  std::size_t test_every = 4;

  double probe_lr = 0.5;
  std::size_t probe_steps = 300;
  double probe_weight_decay = 1e-4;
  double label_fraction = 1.0;
  std::vector<double> fractions{0.05, 0.1, 0.5, 1.0};
  std::vector<std::uint64_t> probe_seeds{0, 1, 2};
  std::string mode = "student";
  std::vector<std::string> modes{"student"};

  std::string target_data;
  std::string generic_data;
  std::string images;
  std::string generic_ckpt;
  std::string teacher;
  std::string init_from;
  std::string ckpt;
  bool distill = false;
  bool freeze_backbone = true;
  std::size_t gradcheck_instances = 100;
  std::size_t progress_every = 50;

  EncoderConfig encoder() const;
  AugmentConfig augment() const;
  TrainConfig train() const;
  ProbeConfig probe(double fraction, std::uint64_t probe_seed) const;
  SyntheticSpec target_spec() const;
  SyntheticSpec generic_spec() const;

  // Throws ParameterError on any out-of-range value.
  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
// Keys absent from `j` keep their current value; unknown keys and wrong types throw ParameterError.
void merge_json(RunConfig& cfg, const nlohmann::json& j);
// "key=value"; value is read as JSON when it parses, else as a plain string.
void apply_assignment(RunConfig& cfg, const std::string& assignment);
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

std::vector<std::string> config_keys();

}  // namespace dssl::cli
