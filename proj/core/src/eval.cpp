#include "dssl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "dssl/errors.hpp"
#include "dssl/ops.hpp"

namespace dssl {
namespace {

constexpr std::size_t kFeatureChunk = 64;

Tensor backbone_on(const EncoderHandle& h, const Dataset& data) {
  const std::size_t n = data.size();
  Tensor out({n, h.config.d_backbone});
  for (std::size_t start = 0; start < n; start += kFeatureChunk) {
    const std::size_t stop = std::min(n, start + kFeatureChunk);
    std::vector<Frame> chunk;
    chunk.reserve(stop - start);
    for (std::size_t i = start; i < stop; ++i) {
      const Frame& f = data.frames[i];
      chunk.push_back(crop_resize(f, CropBox{0, 0, f.height(), f.width()}, h.config.image_height,
                                  h.config.image_width));
    }
    const Tensor feats = backbone_features(h.params, h.config, stack_frames(chunk));
    std::copy(feats.data().begin(), feats.data().end(), out.raw() + start * h.config.d_backbone);
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

}  // namespace

std::string to_string(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::kStudent: return "student";
    case FeatureMode::kTeacher: return "teacher";
    case FeatureMode::kAddition: return "addition";
    case FeatureMode::kConcatenation: return "concatenation";
  }
  return "unknown";
}

FeatureMode parse_feature_mode(const std::string& text) {
  if (text == "student") return FeatureMode::kStudent;
  if (text == "teacher") return FeatureMode::kTeacher;
  if (text == "addition") return FeatureMode::kAddition;
  if (text == "concatenation") return FeatureMode::kConcatenation;
  throw ParameterError("unknown feature mode '" + text + "' (student|teacher|addition|concatenation)");
}

EncoderHandle encoder_handle_from(const Checkpoint& ckpt, const std::string& prefix) {
  if (!ckpt.meta.contains("encoder")) {
    throw CheckpointError(CheckpointError::Kind::kManifest, "checkpoint metadata lacks an encoder config");
  }
  EncoderHandle h;
  h.config = encoder_config_from_json(ckpt.meta.at("encoder"));
  h.params = load_encoder(ckpt, prefix, h.config);
  return h;
}

EncoderHandle load_encoder_handle(const std::filesystem::path& stem, const std::string& prefix) {
  return encoder_handle_from(load_checkpoint(stem), prefix);
}

FeatureSet extract_features(const EncoderHandle& student, const EncoderHandle* teacher, const Dataset& data,
                            FeatureMode mode) {
  if (mode != FeatureMode::kStudent && !teacher) {
    throw ContractError("feature mode '" + to_string(mode) + "' needs a teacher encoder");
  }
  FeatureSet fs;
  fs.labels = data.labels;
  fs.num_classes = data.num_classes;
  switch (mode) {
    case FeatureMode::kStudent:
      fs.features = backbone_on(student, data);
      break;
    case FeatureMode::kTeacher:
      fs.features = backbone_on(*teacher, data);
      break;
    case FeatureMode::kAddition: {
      if (student.config.d_backbone != teacher->config.d_backbone) {
        throw ContractError("addition needs equal feature dims: student " + std::to_string(student.config.d_backbone) +
                            ", teacher " + std::to_string(teacher->config.d_backbone));
      }
      fs.features = ops::add(backbone_on(*teacher, data), backbone_on(student, data));
      break;
    }
    case FeatureMode::kConcatenation: {
      const Tensor ft = backbone_on(*teacher, data);
      const Tensor fsd = backbone_on(student, data);
      const std::size_t dt = ft.dim(1), ds = fsd.dim(1);
      fs.features = Tensor({data.size(), dt + ds});
      for (std::size_t r = 0; r < data.size(); ++r) {
        std::copy(ft.row(r).begin(), ft.row(r).end(), fs.features.raw() + r * (dt + ds));
        std::copy(fsd.row(r).begin(), fsd.row(r).end(), fs.features.raw() + r * (dt + ds) + dt);
      }
      break;
    }
  }
  return fs;
}

void ProbeConfig::validate() const {
  if (!(label_fraction > 0.0 && label_fraction <= 1.0)) throw ParameterError("label_fraction must lie in (0,1]");
  if (!(lr > 0.0)) throw ParameterError("probe lr must be positive");
  if (!(weight_decay >= 0.0)) throw ParameterError("probe weight_decay must be non-negative");
}

std::vector<std::size_t> stratified_subset(std::span<const int> labels, std::size_t num_classes, double fraction,
                                           std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ParameterError("label fraction must lie in (0,1]");
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw ParameterError("label " + std::to_string(labels[i]) + " out of range");
    }
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) {
      throw SamplingError("class " + std::to_string(c) + " has no labelled samples at fraction " +
                          std::to_string(fraction) + "; choose a different seed or fraction");
    }
    Rng rng = Rng::derive({seed, static_cast<std::uint64_t>(Stream::kProbe), c});
    rng.shuffle(idx);
    const auto take = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(idx.size()) - 1e-9));
    out.insert(out.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(std::max<std::size_t>(take, 1)));
  }
  std::sort(out.begin(), out.end());
  return out;
}

Tensor LinearProbe::logits(const Tensor& features) const {
  Tensor x = features;
  const std::size_t d = mean.numel();
  if (x.rank() != 2 || x.dim(1) != d) {
    throw DimensionError("probe expects n×" + std::to_string(d) + " features, got " + shape_to_string(x.shape()));
  }
  for (std::size_t r = 0; r < x.dim(0); ++r) {
    for (std::size_t c = 0; c < d; ++c) x.at(r, c) = (x.at(r, c) - mean[c]) * inv_std[c];
  }
  return ops::affine(x, W, b);
}

std::vector<int> LinearProbe::predict(const Tensor& features) const {
  const Tensor z = logits(features);
  std::vector<int> out(z.dim(0));
  for (std::size_t r = 0; r < z.dim(0); ++r) {
    auto row = z.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

LinearProbe fit_linear_probe(const FeatureSet& fs, const ProbeConfig& cfg) {
  cfg.validate();
  if (fs.features.rank() != 2 || fs.features.dim(0) != fs.labels.size()) {
    throw DimensionError("feature rows and labels disagree");
  }
  LinearProbe probe;
  probe.num_classes = fs.num_classes;
  probe.train_indices = stratified_subset(fs.labels, fs.num_classes, cfg.label_fraction, cfg.seed);

  const std::size_t n = probe.train_indices.size(), d = fs.features.dim(1);
  Tensor x({n, d});
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = probe.train_indices[i];
    std::copy(fs.features.row(src).begin(), fs.features.row(src).end(), x.raw() + i * d);
    y[i] = fs.labels[src];
  }
  probe.mean = Tensor({d});
  probe.inv_std = Tensor({d}, 1.0);
  for (std::size_t c = 0; c < d; ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < n; ++r) m += x.at(r, c);
    m /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t r = 0; r < n; ++r) ss += (x.at(r, c) - m) * (x.at(r, c) - m);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    probe.mean[c] = m;
    probe.inv_std[c] = sd > 1e-12 ? 1.0 / sd : 1.0;
  }
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) x.at(r, c) = (x.at(r, c) - probe.mean[c]) * probe.inv_std[c];
  }

  ParamSet params;
  params.add("W", Tensor({d, fs.num_classes}));
  params.add("b", Tensor({fs.num_classes}));
  const SgdConfig sgd{cfg.lr, 0.0, cfg.weight_decay};
  for (std::size_t step = 0; step <= cfg.steps; ++step) {
    Graph g;
    Var logits = ag::affine(g, g.constant(x), g.param(params.at("W")), g.param(params.at("b")));
    Var loss = ag::cross_entropy(g, logits, y);
    probe.loss_history.push_back(g.value(loss).item());
    if (step == cfg.steps) break;
    g.backward(loss);
    sgd_step(params, sgd);
  }
  probe.W = params.at("W").value;
  probe.b = params.at("b").value;
  return probe;
}

Metrics compute_phase_metrics(std::span<const int> preds, std::span<const int> labels, std::size_t num_classes) {
  if (preds.size() != labels.size()) {
    throw ContractError("metrics: " + std::to_string(preds.size()) + " predictions vs " +
                        std::to_string(labels.size()) + " labels");
  }
  Metrics m;
  m.per_class.resize(num_classes);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || labels[i] < 0 || static_cast<std::size_t>(preds[i]) >= num_classes ||
        static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw ParameterError("metrics: class index out of range at position " + std::to_string(i));
    }
    const auto p = static_cast<std::size_t>(preds[i]), l = static_cast<std::size_t>(labels[i]);
    if (p == l) {
      ++correct;
      ++m.per_class[p].tp;
    } else {
      ++m.per_class[p].fp;
      ++m.per_class[l].fn;
    }
  }
  m.accuracy = preds.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(preds.size());

  double p_sum = 0.0, r_sum = 0.0, j_sum = 0.0;
  std::size_t p_n = 0, r_n = 0, j_n = 0;
  for (auto& c : m.per_class) {
    const double tp = static_cast<double>(c.tp);
    c.excluded = c.tp + c.fp + c.fn == 0;
    if (c.excluded) continue;
    c.precision_defined = c.tp + c.fp > 0;
    c.recall_defined = c.tp + c.fn > 0;
    c.precision = c.precision_defined ? tp / static_cast<double>(c.tp + c.fp) : 0.0;
    c.recall = c.recall_defined ? tp / static_cast<double>(c.tp + c.fn) : 0.0;
    c.jaccard = tp / static_cast<double>(c.tp + c.fp + c.fn);
    if (c.precision_defined) {
      p_sum += c.precision;
      ++p_n;
    }
    if (c.recall_defined) {
      r_sum += c.recall;
      ++r_n;
    }
    j_sum += c.jaccard;
    ++j_n;
  }
  m.precision = p_n ? p_sum / static_cast<double>(p_n) : 0.0;
  m.recall = r_n ? r_sum / static_cast<double>(r_n) : 0.0;
  m.jaccard = j_n ? j_sum / static_cast<double>(j_n) : 0.0;
  return m;
}

Metrics probe_and_score(const FeatureSet& train, const FeatureSet& test, const ProbeConfig& cfg) {
  const LinearProbe probe = fit_linear_probe(train, cfg);
  const auto preds = probe.predict(test.features);
  return compute_phase_metrics(preds, test.labels, test.num_classes);
}

SweepResult label_efficiency_sweep(std::span<const SweepEncoder> encoders, std::span<const double> fractions,
                                   std::span<const std::uint64_t> seeds, const DatasetSplit& data,
                                   const ProbeConfig& base) {
  if (encoders.empty() || fractions.empty() || seeds.empty()) {
    throw ParameterError("sweep needs at least one encoder, fraction and seed");
  }
  SweepResult result;
  for (const auto& enc : encoders) {
    const EncoderHandle* teacher = enc.teacher ? &*enc.teacher : nullptr;
    const FeatureSet train = extract_features(enc.student, teacher, data.train, enc.mode);
    const FeatureSet test = extract_features(enc.student, teacher, data.test, enc.mode);
    for (double fraction : fractions) {
      SweepSummary s;
      s.encoder = enc.name;
      s.mode = enc.mode;
      s.fraction = fraction;
      std::vector<double> acc, prec, rec, jac;
      for (std::uint64_t seed : seeds) {
        ProbeConfig cfg = base;
        cfg.label_fraction = fraction;
        cfg.seed = seed;
        SweepRow row{enc.name, enc.mode, fraction, seed, probe_and_score(train, test, cfg)};
        acc.push_back(row.metrics.accuracy);
        prec.push_back(row.metrics.precision);
        rec.push_back(row.metrics.recall);
        jac.push_back(row.metrics.jaccard);
        result.rows.push_back(std::move(row));
      }
      s.runs = seeds.size();
      std::tie(s.accuracy_mean, s.accuracy_std) = mean_std(acc);
      std::tie(s.precision_mean, s.precision_std) = mean_std(prec);
      std::tie(s.recall_mean, s.recall_std) = mean_std(rec);
      std::tie(s.jaccard_mean, s.jaccard_std) = mean_std(jac);
      result.summary.push_back(s);
    }
  }
  return result;
}

std::string results_csv(std::span<const SweepRow> rows) {
  std::ostringstream out;
  out << kResultsCsvHeader << "\n";
  for (const auto& r : rows) {
    out << r.encoder << "," << to_string(r.mode) << "," << format_double(r.fraction) << "," << r.seed << ","
        << format_double(r.metrics.accuracy) << "," << format_double(r.metrics.precision) << ","
        << format_double(r.metrics.recall) << "," << format_double(r.metrics.jaccard) << "\n";
  }
  return out.str();
}

nlohmann::json summary_json(const SweepResult& result) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : result.summary) {
    rows.push_back({{"encoder", s.encoder},
                    {"mode", to_string(s.mode)},
                    {"fraction", s.fraction},
                    {"runs", s.runs},
                    {"accuracy", {{"mean", s.accuracy_mean}, {"std", s.accuracy_std}}},
                    {"precision", {{"mean", s.precision_mean}, {"std", s.precision_std}}},
                    {"recall", {{"mean", s.recall_mean}, {"std", s.recall_std}}},
                    {"jaccard", {{"mean", s.jaccard_mean}, {"std", s.jaccard_std}}}});
  }
  return nlohmann::json{{"summary", rows}, {"rows", result.rows.size()}};
}

std::string accuracy_chart_svg(const SweepResult& result) {
  constexpr double kW = 640, kH = 400, kLeft = 60, kRight = 160, kTop = 20, kBottom = 50;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  std::map<std::string, std::vector<const SweepSummary*>> series;
  std::vector<std::string> order;
  for (const auto& s : result.summary) {
    if (!series.count(s.encoder)) order.push_back(s.encoder);
    series[s.encoder].push_back(&s);
  }
  auto px = [&](double fraction) { return kLeft + fraction * (kW - kLeft - kRight); };
  auto py = [&](double acc) { return kTop + (1.0 - acc) * (kH - kTop - kBottom); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<line x1=\"" << kLeft << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\"" << py(0)
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << kLeft << "\" y1=\"" << py(0) << "\" x2=\"" << kLeft << "\" y2=\"" << py(1)
      << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = t / 4.0;
    svg << "<text x=\"" << px(v) << "\" y=\"" << py(0) + 18 << "\" font-size=\"11\" text-anchor=\"middle\">" << v
        << "</text>\n";
    svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(v) + 4 << "\" font-size=\"11\" text-anchor=\"end\">" << v
        << "</text>\n";
  }
  svg << "<text x=\"" << (kLeft + px(1)) / 2 << "\" y=\"" << kH - 10
      << "\" font-size=\"12\" text-anchor=\"middle\">label fraction</text>\n";
  svg << "<text x=\"14\" y=\"" << (kTop + py(0)) / 2 << "\" font-size=\"12\" transform=\"rotate(-90 14 "
      << (kTop + py(0)) / 2 << ")\" text-anchor=\"middle\">accuracy</text>\n";
  for (std::size_t i = 0; i < order.size(); ++i) {
    const char* color = kColors[i % std::size(kColors)];
    auto pts = series[order[i]];
    std::sort(pts.begin(), pts.end(), [](auto* a, auto* b) { return a->fraction < b->fraction; });
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto* s : pts) svg << px(s->fraction) << "," << py(s->accuracy_mean) << " ";
    svg << "\"/>\n";
    for (const auto* s : pts) {
      svg << "<circle cx=\"" << px(s->fraction) << "\" cy=\"" << py(s->accuracy_mean) << "\" r=\"3\" fill=\""
          << color << "\"/>\n";
    }
    svg << "<text x=\"" << px(1) + 12 << "\" y=\"" << kTop + 16 * (i + 1) << "\" font-size=\"12\" fill=\"" << color
        << "\">" << order[i] << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

MoCoState init_transfer(const Checkpoint& teacher_ckpt, const AugmentConfig& aug, const TrainConfig& cfg) {
  const EncoderHandle q = encoder_handle_from(teacher_ckpt, "query");
  const EncoderHandle k = encoder_handle_from(teacher_ckpt, "key");
  MoCoState s = make_moco_state(q.config, aug, cfg);
  copy_values(q.params, s.query);
  copy_values(k.params, s.key);
  return s;
}

}  // namespace dssl
