#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dssl/checkpoint.hpp"
#include "dssl/data.hpp"

namespace dssl {

enum class FeatureMode { kStudent, kTeacher, kAddition, kConcatenation };

std::string to_string(FeatureMode mode);
FeatureMode parse_feature_mode(const std::string& text);

/// Query encoder of a checkpoint together with its architecture.
struct EncoderHandle {
  EncoderParams params;
  EncoderConfig config;
};

EncoderHandle encoder_handle_from(const Checkpoint& ckpt, const std::string& prefix = "query");
EncoderHandle load_encoder_handle(const std::filesystem::path& stem, const std::string& prefix = "query");

struct FeatureSet {
  Tensor features;  // n×D
  std::vector<int> labels;
  std::size_t num_classes = 0;
};

// Backbone (pre-head) features on center-resized frames, no augmentation.
// addition = F_t + F_s; concatenation = [F_t ; F_s]. Teacher is required for all but kStudent.
FeatureSet extract_features(const EncoderHandle& student, const EncoderHandle* teacher, const Dataset& data,
                            FeatureMode mode);

struct ProbeConfig {
  double lr = 0.5;
  std::size_t steps = 300;
  double weight_decay = 1e-4;
  double label_fraction = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// ⌈fraction·n_c⌉ indices of each class c, drawn from `seed`; sorted ascending.
std::vector<std::size_t> stratified_subset(std::span<const int> labels, std::size_t num_classes, double fraction,
                                           std::uint64_t seed);

/// Multinomial logistic regression on standardized frozen features.
struct LinearProbe {
  Tensor mean;     // D
  Tensor inv_std;  // D
  Tensor W;        // D×C
  Tensor b;        // C
  std::size_t num_classes = 0;
  std::vector<std::size_t> train_indices;
  std::vector<double> loss_history;  // cross-entropy before each update, then the final value

  Tensor logits(const Tensor& features) const;
  std::vector<int> predict(const Tensor& features) const;
};

// Full-batch gradient descent on the stratified label subset.
LinearProbe fit_linear_probe(const FeatureSet& fs, const ProbeConfig& cfg);

struct ClassMetrics {
  std::size_t tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, jaccard = 0.0;
  bool precision_defined = false;  // false when the class was never predicted
  bool recall_defined = false;     // false when the class never occurs
  bool excluded = false;           // never predicted and never occurs
};

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double jaccard = 0.0;
  std::vector<ClassMetrics> per_class;
};

// Macro averages over classes; undefined per-class values are left out of the corresponding mean.
Metrics compute_phase_metrics(std::span<const int> preds, std::span<const int> labels, std::size_t num_classes);

// Probe on train features, score on test features.
Metrics probe_and_score(const FeatureSet& train, const FeatureSet& test, const ProbeConfig& cfg);

struct SweepEncoder {
  std::string name;
  FeatureMode mode = FeatureMode::kStudent;
  EncoderHandle student;
  std::optional<EncoderHandle> teacher;
};

struct SweepRow {
  std::string encoder;
  FeatureMode mode = FeatureMode::kStudent;
  double fraction = 1.0;
  std::uint64_t seed = 0;
  Metrics metrics;
};

struct SweepSummary {
  std::string encoder;
  FeatureMode mode = FeatureMode::kStudent;
  double fraction = 1.0;
  std::size_t runs = 0;
  double accuracy_mean = 0.0, accuracy_std = 0.0;
  double precision_mean = 0.0, precision_std = 0.0;
  double recall_mean = 0.0, recall_std = 0.0;
  double jaccard_mean = 0.0, jaccard_std = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;         // encoder-major, then fraction, then seed
  std::vector<SweepSummary> summary;  // one per (encoder, fraction)
};

SweepResult label_efficiency_sweep(std::span<const SweepEncoder> encoders, std::span<const double> fractions,
                                   std::span<const std::uint64_t> seeds, const DatasetSplit& data,
                                   const ProbeConfig& base);

inline constexpr const char* kResultsCsvHeader = "encoder,mode,fraction,seed,accuracy,precision,recall,jaccard";

std::string results_csv(std::span<const SweepRow> rows);
nlohmann::json summary_json(const SweepResult& result);
// Accuracy vs label fraction, one polyline per encoder.
std::string accuracy_chart_svg(const SweepResult& result);

// Student whose query and key start as bitwise copies of the teacher checkpoint's encoders.
MoCoState init_transfer(const Checkpoint& teacher_ckpt, const AugmentConfig& aug, const TrainConfig& cfg);

}  // namespace dssl
