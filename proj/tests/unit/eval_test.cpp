#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "dssl/errors.hpp"
#include "dssl/eval.hpp"
#include "dssl/pipeline.hpp"
#include "test_util.hpp"

namespace dssl {
namespace {

EncoderHandle random_handle(std::uint64_t seed) {
  Rng rng(seed);
  return EncoderHandle{init_encoder(EncoderConfig{}, rng), EncoderConfig{}};
}

const Dataset& small_target() {
  static const Dataset ds = generate_synthetic_dataset(SyntheticSpec::make(Domain::kTarget, 4, 40), 3);
  return ds;
}

FeatureSet separable_toy() {
  FeatureSet fs;
  fs.num_classes = 2;
  fs.features = Tensor({40, 2});
  Rng rng(1);
  for (std::size_t i = 0; i < 40; ++i) {
    const int c = static_cast<int>(i % 2);
    fs.features.at(i, 0) = (c == 0 ? -2.0 : 2.0) + rng.uniform(-0.5, 0.5);
    fs.features.at(i, 1) = rng.uniform(-1, 1);
    fs.labels.push_back(c);
  }
  return fs;
}

double training_accuracy(const LinearProbe& p, const FeatureSet& fs) {
  const auto pred = p.predict(fs.features);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == fs.labels[i];
  return static_cast<double>(ok) / static_cast<double>(pred.size());
}

TEST(FeatureMode, RoundTripNames) {
  for (FeatureMode m : {FeatureMode::kStudent, FeatureMode::kTeacher, FeatureMode::kAddition,
                        FeatureMode::kConcatenation})
    EXPECT_EQ(parse_feature_mode(to_string(m)), m);
  EXPECT_THROW(parse_feature_mode("sum"), ParameterError);
}

TEST(ExtractFeatures, ConcatenationDimension) {
  const EncoderHandle s = random_handle(1), t = random_handle(2);
  const FeatureSet fs = extract_features(s, &t, small_target(), FeatureMode::kConcatenation);
  EXPECT_EQ(fs.features.shape(), (Shape{small_target().size(), 2 * EncoderConfig{}.d_backbone}));
  EXPECT_EQ(fs.labels, small_target().labels);
}

TEST(ExtractFeatures, SelfAdditionDoublesStudent) {
  const EncoderHandle s = random_handle(3);
  const FeatureSet add = extract_features(s, &s, small_target(), FeatureMode::kAddition);
  const FeatureSet one = extract_features(s, nullptr, small_target(), FeatureMode::kStudent);
  for (std::size_t i = 0; i < add.features.numel(); ++i) EXPECT_EQ(add.features[i], 2.0 * one.features[i]);
}

TEST(ExtractFeatures, Deterministic) {
  const EncoderHandle s = random_handle(4), t = random_handle(5);
  EXPECT_TRUE(bitwise_equal(extract_features(s, &t, small_target(), FeatureMode::kConcatenation).features,
                            extract_features(s, &t, small_target(), FeatureMode::kConcatenation).features));
}

TEST(ExtractFeatures, ModeRequirements) {
  const EncoderHandle s = random_handle(6);
  EncoderConfig wide;
  wide.d_backbone = 48;
  Rng rng(7);
  const EncoderHandle t{init_encoder(wide, rng), wide};
  EXPECT_THROW(extract_features(s, &t, small_target(), FeatureMode::kAddition), ContractError);
  EXPECT_THROW(extract_features(s, nullptr, small_target(), FeatureMode::kTeacher), ContractError);
}

TEST(ExtractFeatures, TeacherModeUsesTeacher) {
  const EncoderHandle s = random_handle(8), t = random_handle(9);
  const FeatureSet a = extract_features(s, &t, small_target(), FeatureMode::kTeacher);
  const FeatureSet b = extract_features(t, nullptr, small_target(), FeatureMode::kStudent);
  EXPECT_TRUE(bitwise_equal(a.features, b.features));
}

TEST(LinearProbe, SeparableToyReachesFullTrainingAccuracy) {
  const FeatureSet fs = separable_toy();
  const LinearProbe p = fit_linear_probe(fs, ProbeConfig{});
  EXPECT_EQ(training_accuracy(p, fs), 1.0);
}

TEST(LinearProbe, FullFractionUsesEveryRowOnce) {
  const FeatureSet fs = separable_toy();
  const LinearProbe p = fit_linear_probe(fs, ProbeConfig{});
  std::vector<std::size_t> all(fs.labels.size());
  std::iota(all.begin(), all.end(), 0);
  EXPECT_EQ(p.train_indices, all);
}

TEST(LinearProbe, SameConfigBitwiseIdentical) {
  const FeatureSet fs = separable_toy();
  ProbeConfig cfg;
  cfg.label_fraction = 0.5;
  cfg.seed = 3;
  const LinearProbe a = fit_linear_probe(fs, cfg);
  const LinearProbe b = fit_linear_probe(fs, cfg);
  EXPECT_TRUE(bitwise_equal(a.W, b.W));
  EXPECT_TRUE(bitwise_equal(a.b, b.b));
}

TEST(LinearProbe, MissingClassIsSamplingError) {
  FeatureSet fs = separable_toy();
  fs.num_classes = 3;
  EXPECT_THROW(fit_linear_probe(fs, ProbeConfig{}), SamplingError);
}

TEST(LinearProbe, InvalidFraction) {
  ProbeConfig cfg;
  cfg.label_fraction = 0.0;
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg.label_fraction = 1.5;
  EXPECT_THROW(cfg.validate(), ParameterError);
}

TEST(LinearProbe, LossNonIncreasingAtSmallStep) {
  const FeatureSet fs = extract_features(random_handle(10), nullptr, small_target(), FeatureMode::kStudent);
  ProbeConfig cfg;
  cfg.lr = 0.01;
  cfg.steps = 200;
  const LinearProbe p = fit_linear_probe(fs, cfg);
  ASSERT_EQ(p.loss_history.size(), 201u);
  for (std::size_t i = 1; i < p.loss_history.size(); ++i) EXPECT_LE(p.loss_history[i], p.loss_history[i - 1] + 1e-15);
}

TEST(StratifiedSubset, CeilCountsPerClass) {
  std::vector<int> labels;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 10 + 7 * c; ++i) labels.push_back(c);
  for (double f : {0.05, 0.1, 0.33, 0.5, 1.0}) {
    const auto idx = stratified_subset(labels, 3, f, 4);
    std::vector<std::size_t> counts(3, 0);
    for (std::size_t i : idx) ++counts[static_cast<std::size_t>(labels[i])];
    for (int c = 0; c < 3; ++c)
      EXPECT_EQ(counts[static_cast<std::size_t>(c)], static_cast<std::size_t>(std::ceil(f * (10 + 7 * c))));
    EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
  }
}

TEST(StratifiedSubset, SeedChangesSelection) {
  std::vector<int> labels(100);
  for (std::size_t i = 0; i < 100; ++i) labels[i] = static_cast<int>(i % 2);
  EXPECT_NE(stratified_subset(labels, 2, 0.1, 0), stratified_subset(labels, 2, 0.1, 1));
}

TEST(PhaseMetrics, PerfectPredictions) {
  const std::vector<int> y{0, 1, 2, 1, 0};
  const Metrics m = compute_phase_metrics(y, y, 3);
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.precision, 1.0);
  EXPECT_EQ(m.recall, 1.0);
  EXPECT_EQ(m.jaccard, 1.0);
}

TEST(PhaseMetrics, AllOneClassOnBalancedPair) {
  const std::vector<int> labels{0, 0, 1, 1};
  const std::vector<int> preds{0, 0, 0, 0};
  const Metrics m = compute_phase_metrics(preds, labels, 2);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.5);
  EXPECT_DOUBLE_EQ(m.recall, 0.5);
  EXPECT_DOUBLE_EQ(m.jaccard, 0.25);
  // Class 1 is never predicted: its precision is undefined and left out of the mean.
  EXPECT_FALSE(m.per_class[1].precision_defined);
  EXPECT_DOUBLE_EQ(m.precision, 0.5);
}

TEST(PhaseMetrics, ThreeClassConfusionMatrix) {
  // Rows are true classes, columns predictions: [[2,1,0],[0,2,0],[1,0,2]].
  const std::vector<int> labels{0, 0, 0, 1, 1, 2, 2, 2};
  const std::vector<int> preds{0, 0, 1, 1, 1, 0, 2, 2};
  const Metrics m = compute_phase_metrics(preds, labels, 3);
  EXPECT_DOUBLE_EQ(m.accuracy, 6.0 / 8.0);
  const double P[] = {2.0 / 3, 2.0 / 3, 1.0}, R[] = {2.0 / 3, 1.0, 2.0 / 3}, J[] = {0.5, 2.0 / 3, 2.0 / 3};
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_NEAR(m.per_class[c].precision, P[c], 1e-15);
    EXPECT_NEAR(m.per_class[c].recall, R[c], 1e-15);
    EXPECT_NEAR(m.per_class[c].jaccard, J[c], 1e-15);
  }
  EXPECT_NEAR(m.precision, (P[0] + P[1] + P[2]) / 3, 1e-15);
  EXPECT_NEAR(m.recall, (R[0] + R[1] + R[2]) / 3, 1e-15);
  EXPECT_NEAR(m.jaccard, (J[0] + J[1] + J[2]) / 3, 1e-15);
}

TEST(PhaseMetrics, AbsentClassExcluded) {
  const std::vector<int> y{0, 1, 0, 1};
  const Metrics m = compute_phase_metrics(y, y, 3);
  EXPECT_TRUE(m.per_class[2].excluded);
  EXPECT_EQ(m.recall, 1.0);
  EXPECT_EQ(m.jaccard, 1.0);
}

TEST(PhaseMetrics, LengthMismatch) {
  const std::vector<int> a{0, 1}, b{0};
  EXPECT_THROW(compute_phase_metrics(a, b, 2), ContractError);
}

TEST(PhaseMetrics, RelabelingInvarianceAndJaccardBound) {
  Rng rng(11);
  for (int t = 0; t < 300; ++t) {
    const std::size_t k = 2 + rng.uniform_int(5), n = 5 + rng.uniform_int(60);
    std::vector<int> preds(n), labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      preds[i] = static_cast<int>(rng.uniform_int(k));
      labels[i] = static_cast<int>(rng.uniform_int(k));
    }
    std::vector<int> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<int> pp(n), pl(n);
    for (std::size_t i = 0; i < n; ++i) {
      pp[i] = perm[static_cast<std::size_t>(preds[i])];
      pl[i] = perm[static_cast<std::size_t>(labels[i])];
    }
    const Metrics a = compute_phase_metrics(preds, labels, k);
    EXPECT_EQ(a.accuracy, compute_phase_metrics(pp, pl, k).accuracy);
    for (const ClassMetrics& c : a.per_class) {
      if (c.precision_defined) EXPECT_LE(c.jaccard, c.precision);
      if (c.recall_defined) EXPECT_LE(c.jaccard, c.recall);
    }
    for (double v : {a.accuracy, a.precision, a.recall, a.jaccard}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

class Sweep : public ::testing::Test {
 protected:
  static DatasetSplit split() { return split_dataset(small_target(), 4); }
};

TEST_F(Sweep, RowCountAndOrder) {
  std::vector<SweepEncoder> enc;
  enc.push_back({"a", FeatureMode::kStudent, random_handle(1), std::nullopt});
  enc.push_back({"b", FeatureMode::kConcatenation, random_handle(2), random_handle(3)});
  const std::vector<double> fractions{0.25, 1.0};
  const std::vector<std::uint64_t> seeds{0, 1, 2};
  ProbeConfig base;
  base.steps = 50;
  const SweepResult r = label_efficiency_sweep(enc, fractions, seeds, split(), base);
  ASSERT_EQ(r.rows.size(), 12u);
  EXPECT_EQ(r.summary.size(), 4u);
  EXPECT_EQ(r.rows[0].encoder, "a");
  EXPECT_EQ(r.rows[6].encoder, "b");
  EXPECT_EQ(r.rows[3].fraction, 1.0);
  EXPECT_EQ(r.rows[5].seed, 2u);
  EXPECT_EQ(r.summary[0].runs, 3u);
}

TEST_F(Sweep, DegenerateSweepEqualsDirectProbe) {
  const DatasetSplit data = split();
  const EncoderHandle h = random_handle(4);
  std::vector<SweepEncoder> enc{{"s", FeatureMode::kStudent, h, std::nullopt}};
  const std::vector<double> fractions{1.0};
  const std::vector<std::uint64_t> seeds{5};
  const SweepResult r = label_efficiency_sweep(enc, fractions, seeds, data, ProbeConfig{});
  ProbeConfig direct;
  direct.seed = 5;
  const Metrics m = probe_and_score(extract_features(h, nullptr, data.train, FeatureMode::kStudent),
                                    extract_features(h, nullptr, data.test, FeatureMode::kStudent), direct);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].metrics.accuracy, m.accuracy);
  EXPECT_EQ(r.rows[0].metrics.jaccard, m.jaccard);
  EXPECT_EQ(r.summary[0].accuracy_std, 0.0);
}

TEST_F(Sweep, Outputs) {
  std::vector<SweepEncoder> enc{{"s", FeatureMode::kStudent, random_handle(5), std::nullopt}};
  const std::vector<double> fractions{0.5, 1.0};
  const std::vector<std::uint64_t> seeds{0};
  ProbeConfig base;
  base.steps = 20;
  const SweepResult r = label_efficiency_sweep(enc, fractions, seeds, split(), base);
  const std::string csv = results_csv(r.rows);
  EXPECT_EQ(csv.rfind(std::string(kResultsCsvHeader) + "\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  const auto j = summary_json(r);
  ASSERT_EQ(j["summary"].size(), 2u);
  EXPECT_EQ(j["summary"][1]["accuracy"]["mean"].get<double>(), r.summary[1].accuracy_mean);
  EXPECT_EQ(j["rows"], 2);
  const std::string svg = accuracy_chart_svg(r);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("polyline"), std::string::npos);
}

TEST(InitTransfer, CopiesTeacherBitwise) {
  TrainConfig cfg;
  cfg.batch = 8;
  cfg.queue = 32;
  MoCoState teacher = make_moco_state(EncoderConfig{}, AugmentConfig{}, cfg);
  Rng rng(12);
  for (auto& [name, p] : teacher.key.head)
    for (double& v : p.value.data()) v += 0.01 * rng.uniform(-1, 1);
  const Checkpoint ck = moco_checkpoint(teacher);
  TrainConfig student_cfg = cfg;
  student_cfg.seed = 99;
  MoCoState student = init_transfer(ck, AugmentConfig{}, student_cfg);
  EXPECT_TRUE(values_bitwise_equal(student.query, teacher.query));
  EXPECT_TRUE(values_bitwise_equal(student.key, teacher.key));
  const EncoderHandle ht = encoder_handle_from(ck);
  const EncoderHandle hs{student.query, student.encoder};
  EXPECT_TRUE(bitwise_equal(extract_features(hs, nullptr, small_target(), FeatureMode::kStudent).features,
                            extract_features(ht, nullptr, small_target(), FeatureMode::kStudent).features));
  train_moco(student, small_target(), 1);
  EXPECT_FALSE(values_bitwise_equal(student.query, teacher.query));
}

TEST(InitTransfer, ShapeMismatch) {
  EncoderConfig other;
  other.d = 16;
  MoCoState teacher = make_moco_state(other, AugmentConfig{}, TrainConfig{});
  Checkpoint ck = moco_checkpoint(teacher);
  ck.meta["encoder"] = encoder_config_to_json(EncoderConfig{});
  EXPECT_THROW(init_transfer(ck, AugmentConfig{}, TrainConfig{}), CheckpointError);
}

}  // namespace
}  // namespace dssl
