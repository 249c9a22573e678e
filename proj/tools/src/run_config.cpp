#include "run_config.hpp"

#include <fstream>
#include <sstream>
#include <type_traits>

#include "dssl/errors.hpp"

namespace dssl::cli {
namespace {

template <class Cfg, class F>
void visit_fields(Cfg& c, F&& f) {
  f("command", c.command);
  f("out", c.out);
  f("seed", c.seed);
  f("data_seed", c.data_seed);
  f("steps", c.steps);
  f("tau", c.tau);
  f("m", c.m);
  f("lambda", c.lambda);
  f("distill_tau", c.distill_tau);
  f("batch", c.batch);
  f("queue", c.queue);
  f("lr", c.lr);
  f("momentum", c.momentum);
  f("weight_decay", c.weight_decay);
  f("in_channels", c.in_channels);
  f("image_height", c.image_height);
  f("image_width", c.image_width);
  f("conv1_channels", c.conv1_channels);
  f("conv2_channels", c.conv2_channels);
  f("kernel", c.kernel);
  f("stride", c.stride);
  f("pad", c.pad);
  f("d_backbone", c.d_backbone);
  f("d", c.d);
  f("crop_scale_lo", c.crop_scale_lo);
  f("crop_scale_hi", c.crop_scale_hi);
  f("flip_prob", c.flip_prob);
  f("brightness_delta", c.brightness_delta);
  f("contrast_lo", c.contrast_lo);
  f("contrast_hi", c.contrast_hi);
  f("noise_sigma", c.noise_sigma);
  f("target_phases", c.target_phases);
  f("target_frames_per_phase", c.target_frames_per_phase);
  f("generic_classes", c.generic_classes);
  f("generic_frames_per_class", c.generic_frames_per_class);
  f("texture_amplitude", c.texture_amplitude);
  f("data_noise_sigma", c.data_noise_sigma);
  f("test_every", c.test_every);
  f("probe_lr", c.probe_lr);
  f("probe_steps", c.probe_steps);
  f("probe_weight_decay", c.probe_weight_decay);
  f("label_fraction", c.label_fraction);
  f("fractions", c.fractions);
  f("probe_seeds", c.probe_seeds);
  f("mode", c.mode);
  f("modes", c.modes);
  f("target_data", c.target_data);
  f("generic_data", c.generic_data);
  f("images", c.images);
  f("generic_ckpt", c.generic_ckpt);
  f("teacher", c.teacher);
  f("init_from", c.init_from);
  f("ckpt", c.ckpt);
  f("distill", c.distill);
  f("freeze_backbone", c.freeze_backbone);
  f("gradcheck_instances", c.gradcheck_instances);
  f("progress_every", c.progress_every);
}

template <class T>
void assign(T& field, const nlohmann::json& v, const std::string& key) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ParameterError("config key '" + key + "' expects true/false");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      throw ParameterError("config key '" + key + "' expects a non-negative integer");
    }
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ParameterError("config key '" + key + "' expects a number");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ParameterError("config key '" + key + "' expects a string");
  } else {
    if (!v.is_array()) throw ParameterError("config key '" + key + "' expects an array");
    T out;
    for (const auto& e : v) {
      typename T::value_type x{};
      assign(x, e, key);
      out.push_back(x);
    }
    field = std::move(out);
    return;
  }
  field = v.get<T>();
}

}  // namespace

EncoderConfig RunConfig::encoder() const {
  EncoderConfig e;
  e.in_channels = in_channels;
  e.image_height = image_height;
  e.image_width = image_width;
  e.conv1_channels = conv1_channels;
  e.conv2_channels = conv2_channels;
  e.kernel = kernel;
  e.stride = stride;
  e.pad = pad;
  e.d_backbone = d_backbone;
  e.d = d;
  return e;
}

AugmentConfig RunConfig::augment() const {
  AugmentConfig a;
  a.crop_scale_lo = crop_scale_lo;
  a.crop_scale_hi = crop_scale_hi;
  a.flip_prob = flip_prob;
  a.brightness_delta = brightness_delta;
  a.contrast_lo = contrast_lo;
  a.contrast_hi = contrast_hi;
  a.noise_sigma = noise_sigma;
  a.out_height = image_height;
  a.out_width = image_width;
  return a;
}

TrainConfig RunConfig::train() const {
  TrainConfig t;
  t.tau = tau;
  t.m = m;
  t.lambda = lambda;
  t.distill_tau = distill_tau;
  t.batch = batch;
  t.queue = queue;
  t.lr = lr;
  t.momentum = momentum;
  t.weight_decay = weight_decay;
  t.steps = steps;
  t.seed = seed;
  return t;
}

ProbeConfig RunConfig::probe(double fraction, std::uint64_t probe_seed) const {
  ProbeConfig p;
  p.lr = probe_lr;
  p.steps = probe_steps;
  p.weight_decay = probe_weight_decay;
  p.label_fraction = fraction;
  p.seed = probe_seed;
  return p;
}

SyntheticSpec RunConfig::target_spec() const {
  SyntheticSpec s = SyntheticSpec::make(Domain::kTarget, target_phases, target_frames_per_phase);
  s.height = image_height;
  s.width = image_width;
  s.channels = in_channels;
  s.texture_amplitude = texture_amplitude;
  s.noise_sigma = data_noise_sigma;
  return s;
}

SyntheticSpec RunConfig::generic_spec() const {
  SyntheticSpec s = SyntheticSpec::make(Domain::kGeneric, generic_classes, generic_frames_per_class);
  s.height = image_height;
  s.width = image_width;
  s.channels = in_channels;
  s.texture_amplitude = texture_amplitude;
  s.noise_sigma = data_noise_sigma;
  return s;
}

void RunConfig::validate() const {
  encoder().validate();
  augment().validate();
  train().validate();
  probe(label_fraction, 0).validate();
  for (double f : fractions) probe(f, 0).validate();
  target_spec().validate();
  generic_spec().validate();
  if (test_every < 2) throw ParameterError("test_every must be at least 2");
  if (fractions.empty()) throw ParameterError("fractions must not be empty");
  if (probe_seeds.empty()) throw ParameterError("probe_seeds must not be empty");
  parse_feature_mode(mode);
  if (modes.empty()) throw ParameterError("modes must not be empty");
  for (const auto& md : modes) parse_feature_mode(md);
  if (gradcheck_instances == 0) throw ParameterError("gradcheck_instances must be positive");
}

nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  visit_fields(cfg, [&](const char* key, const auto& field) { j[key] = field; });
  return j;
}

void merge_json(RunConfig& cfg, const nlohmann::json& j) {
  if (!j.is_object()) throw ParameterError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool found = false;
    visit_fields(cfg, [&](const char* name, auto& field) {
      if (key == name) {
        assign(field, value, key);
        found = true;
      }
    });
    if (!found) throw ParameterError("unknown config key '" + key + "'");
  }
}

void apply_assignment(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ParameterError("expected key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  merge_json(cfg, nlohmann::json{{key, value}});
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const nlohmann::json j = nlohmann::json::parse(buf.str(), nullptr, false);
  if (j.is_discarded()) throw ParameterError("config file " + path.string() + " is not valid JSON");
  merge_json(base, j);
  return base;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  RunConfig c;
  visit_fields(c, [&](const char* key, const auto&) { keys.emplace_back(key); });
  return keys;
}

}  // namespace dssl::cli
