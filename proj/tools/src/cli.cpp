#include "cli.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dssl/checkpoint.hpp"
#include "dssl/errors.hpp"
#include "dssl/eval.hpp"
#include "dssl/gradcheck.hpp"
#include "dssl/netpbm.hpp"
#include "dssl/pipeline.hpp"
#include "run_config.hpp"

namespace dssl::cli {
namespace {

namespace fs = std::filesystem;

constexpr const char* kSeedEnv = "DISTILL_SSL_SEED";
constexpr const char* kModelStem = "model";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Kind::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw CheckpointError(CheckpointError::Kind::kIo, "write failed for " + path.string());
}

class Command {
 public:
  Command(const RunConfig& cfg, std::ostream& err) : cfg_(cfg), err_(err), out_dir_(cfg.out) {}

  int run();

 private:
  int gen_data();
  int pretrain_generic();
  int adapt_teacher_cmd();
  int pretrain_student();
  int linear_probe();
  int sweep_labels();
  int gradcheck();
  int compare_transfer();

  Dataset target() const;
  Dataset generic() const;
  DatasetSplit target_split() const { return split_dataset(target(), cfg_.test_every); }
  ProgressFn progress(const std::string& stage, std::size_t total) const;
  void write_step_log(const std::vector<StepLog>& log, const fs::path& csv) const;
  void save_model(Checkpoint ckpt, const std::string& stem) const;
  void write_sweep(const SweepResult& result) const;
  std::vector<SweepEncoder> sweep_encoders(const std::vector<std::string>& modes) const;
  Checkpoint require_checkpoint(const std::string& path, const char* key) const;

  RunConfig cfg_;
  std::ostream& err_;
  fs::path out_dir_;
};

Dataset Command::target() const {
  if (!cfg_.target_data.empty()) return load_dataset(cfg_.target_data);
  return generate_synthetic_dataset(cfg_.target_spec(), cfg_.data_seed);
}

Dataset Command::generic() const {
  if (!cfg_.generic_data.empty()) return load_dataset(cfg_.generic_data);
  return generate_synthetic_dataset(cfg_.generic_spec(), cfg_.data_seed);
}

ProgressFn Command::progress(const std::string& stage, std::size_t total) const {
  const std::size_t every = cfg_.progress_every;
  return [this, stage, total, every](const StepLog& s) {
    if (every == 0 || ((s.step + 1) % every != 0 && s.step + 1 != total)) return;
    char buf[160];
    std::snprintf(buf, sizeof buf, "[%s] step %zu/%zu  con %.4f  dis %.4f  total %.4f\n", stage.c_str(), s.step + 1,
                  total, s.con, s.dis, s.total);
    err_ << buf << std::flush;
  };
}

void Command::write_step_log(const std::vector<StepLog>& log, const fs::path& csv) const {
  std::string text = "step,con,dis,total\n";
  for (const auto& s : log) {
    text += std::to_string(s.step) + "," + fmt(s.con) + "," + fmt(s.dis) + "," + fmt(s.total) + "\n";
  }
  write_text(csv, text);
}

void Command::save_model(Checkpoint ckpt, const std::string& stem) const {
  ckpt.meta["config"] = to_json(cfg_);
  save_checkpoint(ckpt, out_dir_ / stem);
}

Checkpoint Command::require_checkpoint(const std::string& path, const char* key) const {
  if (path.empty()) throw UsageError(std::string("missing required input '") + key + "'");
  return load_checkpoint(path);
}

int Command::gen_data() {
  Dataset tgt;
  if (!cfg_.images.empty()) {
    ImageDirectory dir = load_image_directory(cfg_.images, cfg_.image_height, cfg_.image_width);
    if (dir.frames.empty()) throw ParseError("no Netpbm images found under " + cfg_.images);
    if (dir.labels.empty()) throw ParseError("images under " + cfg_.images + " must sit in per-class subdirectories");
    tgt.frames = std::move(dir.frames);
    tgt.labels = std::move(dir.labels);
    tgt.num_classes = dir.class_names.size();
  } else {
    tgt = target();
  }
  const Dataset gen = generic();
  save_dataset(tgt, out_dir_ / "target", "target");
  save_dataset(gen, out_dir_ / "generic", "generic");
  write_text(out_dir_ / "metrics.csv", "dataset,frames,classes\ntarget," + std::to_string(tgt.size()) + "," +
                                           std::to_string(tgt.num_classes) + "\ngeneric," + std::to_string(gen.size()) +
                                           "," + std::to_string(gen.num_classes) + "\n");
  err_ << "[gen-data] target " << tgt.size() << " frames, generic " << gen.size() << " frames\n";
  return kExitOk;
}

int Command::pretrain_generic() {
  const Dataset data = generic();
  MoCoState state = make_moco_state(cfg_.encoder(), cfg_.augment(), cfg_.train());
  const auto log = train_moco(state, data, cfg_.steps, progress("pretrain-generic", cfg_.steps));
  write_step_log(log, out_dir_ / "metrics.csv");
  Checkpoint ckpt = moco_checkpoint(state);
  ckpt.meta["stage"] = "pretrain-generic";
  save_model(std::move(ckpt), kModelStem);
  return kExitOk;
}

int Command::adapt_teacher_cmd() {
  const Checkpoint generic_ckpt = require_checkpoint(cfg_.generic_ckpt, "generic_ckpt");
  const EncoderHandle handle = encoder_handle_from(generic_ckpt, "query");
  TeacherState teacher = init_teacher(generic_ckpt, handle.config, cfg_.augment(), cfg_.train());
  set_backbone_frozen(teacher, cfg_.freeze_backbone);
  const DatasetSplit split = target_split();
  const auto log = adapt_teacher(teacher, split.train, cfg_.steps, progress("adapt-teacher", cfg_.steps));
  write_step_log(log, out_dir_ / "metrics.csv");
  Checkpoint ckpt = moco_checkpoint(teacher.moco);
  ckpt.meta["stage"] = "adapt-teacher";
  ckpt.meta["backbone_frozen"] = teacher.backbone_frozen;
  save_model(std::move(ckpt), kModelStem);
  return kExitOk;
}

int Command::pretrain_student() {
  const DatasetSplit split = target_split();
  MoCoState student = cfg_.init_from.empty()
                          ? make_moco_state(cfg_.encoder(), cfg_.augment(), cfg_.train())
                          : init_transfer(load_checkpoint(cfg_.init_from), cfg_.augment(), cfg_.train());
  std::vector<StepLog> log;
  if (cfg_.distill) {
    TeacherState teacher = restore_teacher(require_checkpoint(cfg_.teacher, "teacher"), cfg_.augment(), cfg_.train());
    log = train_distilled(student, teacher, split.train, cfg_.steps, progress("pretrain-student", cfg_.steps));
  } else {
    log = train_moco(student, split.train, cfg_.steps, progress("pretrain-student", cfg_.steps));
  }
  write_step_log(log, out_dir_ / "metrics.csv");
  Checkpoint ckpt = moco_checkpoint(student);
  ckpt.meta["stage"] = "pretrain-student";
  ckpt.meta["distilled"] = cfg_.distill;
  save_model(std::move(ckpt), kModelStem);
  return kExitOk;
}

std::vector<SweepEncoder> Command::sweep_encoders(const std::vector<std::string>& modes) const {
  std::optional<EncoderHandle> student;
  std::optional<EncoderHandle> teacher;
  if (!cfg_.ckpt.empty()) student = load_encoder_handle(cfg_.ckpt);
  if (!cfg_.teacher.empty()) teacher = load_encoder_handle(cfg_.teacher);
  std::vector<SweepEncoder> encoders;
  for (const auto& name : modes) {
    const FeatureMode mode = parse_feature_mode(name);
    SweepEncoder e;
    e.name = name;
    e.mode = mode;
    if (mode == FeatureMode::kTeacher) {
      if (!teacher) throw UsageError("mode 'teacher' needs --teacher");
      e.student = *teacher;
      e.teacher = teacher;
    } else {
      if (!student) throw UsageError("mode '" + name + "' needs --ckpt");
      e.student = *student;
      if (mode != FeatureMode::kStudent) {
        if (!teacher) throw UsageError("mode '" + name + "' needs --teacher");
        e.teacher = teacher;
      }
    }
    encoders.push_back(std::move(e));
  }
  return encoders;
}

void Command::write_sweep(const SweepResult& result) const {
  write_text(out_dir_ / "metrics.csv", results_csv(result.rows));
  write_text(out_dir_ / "summary.json", summary_json(result).dump(2) + "\n");
  write_text(out_dir_ / "accuracy.svg", accuracy_chart_svg(result));
}

int Command::linear_probe() {
  const auto encoders = sweep_encoders({cfg_.mode});
  const std::vector<double> fractions{cfg_.label_fraction};
  const SweepResult result = label_efficiency_sweep(encoders, fractions, cfg_.probe_seeds, target_split(),
                                                    cfg_.probe(cfg_.label_fraction, 0));
  write_sweep(result);
  for (const auto& s : result.summary) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "[linear-probe] %s fraction %.3g accuracy %.4f ± %.4f\n", s.encoder.c_str(),
                  s.fraction, s.accuracy_mean, s.accuracy_std);
    err_ << buf;
  }
  return kExitOk;
}

int Command::sweep_labels() {
  const auto encoders = sweep_encoders(cfg_.modes);
  const SweepResult result =
      label_efficiency_sweep(encoders, cfg_.fractions, cfg_.probe_seeds, target_split(), cfg_.probe(1.0, 0));
  write_sweep(result);
  for (const auto& s : result.summary) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "[sweep-labels] %-14s fraction %-5.3g accuracy %.4f ± %.4f\n", s.encoder.c_str(),
                  s.fraction, s.accuracy_mean, s.accuracy_std);
    err_ << buf;
  }
  return kExitOk;
}

int Command::gradcheck() {
  const GradcheckReport report = run_gradcheck_suite(cfg_.seed, cfg_.gradcheck_instances);
  std::string csv = "op,instances,max_rel_error,passed\n";
  nlohmann::json j;
  j["tolerance"] = report.tolerance;
  j["step"] = report.step;
  j["seconds"] = report.seconds;
  j["passed"] = report.passed();
  j["ops"] = nlohmann::json::array();
  for (const auto& e : report.entries) {
    const bool ok = e.max_rel_error <= report.tolerance;
    csv += e.name + "," + std::to_string(e.instances) + "," + fmt(e.max_rel_error) + "," + (ok ? "1" : "0") + "\n";
    j["ops"].push_back({{"op", e.name}, {"instances", e.instances}, {"max_rel_error", e.max_rel_error}, {"passed", ok}});
    char buf[160];
    std::snprintf(buf, sizeof buf, "[gradcheck] %-26s n=%zu  max rel err %.3e  %s\n", e.name.c_str(), e.instances,
                  e.max_rel_error, ok ? "ok" : "FAIL");
    err_ << buf;
  }
  write_text(out_dir_ / "metrics.csv", csv);
  write_text(out_dir_ / "gradcheck.json", j.dump(2) + "\n");
  char buf[96];
  std::snprintf(buf, sizeof buf, "[gradcheck] %s in %.1fs\n", report.passed() ? "passed" : "FAILED", report.seconds);
  err_ << buf;
  return report.passed() ? kExitOk : kExitFailure;
}

int Command::compare_transfer() {
  const Checkpoint teacher_ckpt = require_checkpoint(cfg_.teacher, "teacher");
  const DatasetSplit split = target_split();
  const EncoderHandle teacher_handle = encoder_handle_from(teacher_ckpt, "query");

  auto finish = [&](MoCoState& s, const std::vector<StepLog>& log, const std::string& arm) {
    write_step_log(log, out_dir_ / (arm + "_metrics.csv"));
    Checkpoint ckpt = moco_checkpoint(s);
    ckpt.meta["stage"] = "compare-transfer";
    ckpt.meta["arm"] = arm;
    save_model(ckpt, arm);
    return EncoderHandle{s.query, s.encoder};
  };

  MoCoState plain = make_moco_state(cfg_.encoder(), cfg_.augment(), cfg_.train());
  const EncoderHandle plain_h = finish(plain, train_moco(plain, split.train, cfg_.steps, progress("plain", cfg_.steps)),
                                       "plain");

  MoCoState init = init_transfer(teacher_ckpt, cfg_.augment(), cfg_.train());
  const EncoderHandle init_h =
      finish(init, train_moco(init, split.train, cfg_.steps, progress("initialization", cfg_.steps)), "initialization");

  MoCoState distilled = make_moco_state(cfg_.encoder(), cfg_.augment(), cfg_.train());
  TeacherState teacher = restore_teacher(teacher_ckpt, cfg_.augment(), cfg_.train());
  const EncoderHandle distill_h = finish(
      distilled, train_distilled(distilled, teacher, split.train, cfg_.steps, progress("distillation", cfg_.steps)),
      "distillation");

  std::vector<SweepEncoder> arms;
  arms.push_back({"addition", FeatureMode::kAddition, plain_h, teacher_handle});
  arms.push_back({"concatenation", FeatureMode::kConcatenation, plain_h, teacher_handle});
  arms.push_back({"initialization", FeatureMode::kStudent, init_h, std::nullopt});
  arms.push_back({"distillation", FeatureMode::kStudent, distill_h, std::nullopt});

  const std::vector<double> fractions{cfg_.label_fraction};
  const SweepResult result =
      label_efficiency_sweep(arms, fractions, cfg_.probe_seeds, split, cfg_.probe(cfg_.label_fraction, 0));
  write_sweep(result);

  std::string csv = "arm,fraction,runs,accuracy_mean,accuracy_std,precision_mean,recall_mean,jaccard_mean\n";
  for (const auto& s : result.summary) {
    csv += s.encoder + "," + fmt(s.fraction) + "," + std::to_string(s.runs) + "," + fmt(s.accuracy_mean) + "," +
           fmt(s.accuracy_std) + "," + fmt(s.precision_mean) + "," + fmt(s.recall_mean) + "," + fmt(s.jaccard_mean) +
           "\n";
    char buf[160];
    std::snprintf(buf, sizeof buf, "[compare-transfer] %-14s accuracy %.4f ± %.4f\n", s.encoder.c_str(),
                  s.accuracy_mean, s.accuracy_std);
    err_ << buf;
  }
  write_text(out_dir_ / "comparison.csv", csv);
  return kExitOk;
}

int Command::run() {
  fs::create_directories(out_dir_);
  write_text(out_dir_ / "config.json", to_json(cfg_).dump(2) + "\n");
  const std::string& c = cfg_.command;
  if (c == "gen-data") return gen_data();
  if (c == "pretrain-generic") return pretrain_generic();
  if (c == "adapt-teacher") return adapt_teacher_cmd();
  if (c == "pretrain-student") return pretrain_student();
  if (c == "linear-probe") return linear_probe();
  if (c == "sweep-labels") return sweep_labels();
  if (c == "gradcheck") return gradcheck();
  if (c == "compare-transfer") return compare_transfer();
  throw UsageError("unknown command '" + c + "'");
}

// Flag values are kept as text and applied after the config file, so flags always win.
struct FlagSet {
  std::vector<std::function<void(RunConfig&)>> appliers;

  void json_value(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto text = std::make_shared<std::string>();
    CLI::Option* opt = app->add_option(flag, *text, help);
    appliers.push_back([opt, text, key](RunConfig& cfg) {
      if (opt->count() > 0) apply_assignment(cfg, key + "=" + *text);
    });
  }

  void string_value(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto text = std::make_shared<std::string>();
    CLI::Option* opt = app->add_option(flag, *text, help);
    appliers.push_back([opt, text, key](RunConfig& cfg) {
      if (opt->count() > 0) merge_json(cfg, nlohmann::json{{key, *text}});
    });
  }

  void list_value(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help,
                  bool strings) {
    auto items = std::make_shared<std::vector<std::string>>();
    CLI::Option* opt = app->add_option(flag, *items, help)->delimiter(',');
    appliers.push_back([opt, items, key, strings](RunConfig& cfg) {
      if (opt->count() == 0) return;
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& s : *items) {
        if (strings) {
          arr.push_back(s);
        } else {
          nlohmann::json v = nlohmann::json::parse(s, nullptr, false);
          if (v.is_discarded()) throw ParameterError("'" + s + "' is not a number for " + key);
          arr.push_back(v);
        }
      }
      merge_json(cfg, nlohmann::json{{key, arr}});
    });
  }

  void flag(CLI::App* app, const std::string& flag, const std::string& key, bool value, const std::string& help) {
    CLI::Option* opt = app->add_flag(flag, help);
    appliers.push_back([opt, key, value](RunConfig& cfg) {
      if (opt->count() > 0) merge_json(cfg, nlohmann::json{{key, value}});
    });
  }
};

struct Subcommand {
  CLI::App* app = nullptr;
  std::string config_path;
  std::vector<std::string> assignments;
  FlagSet flags;
};

void add_common(Subcommand& s) {
  s.app->add_option("--config", s.config_path, "JSON config file (flat keys)");
  s.app->add_option("--set", s.assignments, "override one config key, key=value (repeatable)");
  s.flags.string_value(s.app, "--out", "out", "output directory");
  s.flags.json_value(s.app, "--seed", "seed", "run seed (falls back to $DISTILL_SSL_SEED, then 7)");
}

void add_training(Subcommand& s) {
  s.flags.json_value(s.app, "--steps", "steps", "training steps");
  s.flags.json_value(s.app, "--lr", "lr", "learning rate");
  s.flags.json_value(s.app, "--tau", "tau", "InfoNCE temperature");
  s.flags.json_value(s.app, "--m", "m", "key encoder momentum");
  s.flags.json_value(s.app, "--batch", "batch", "batch size N");
  s.flags.json_value(s.app, "--queue", "queue", "queue size M");
  s.flags.string_value(s.app, "--data", "target_data", "target dataset cache stem (synthesized when omitted)");
}

void add_probe(Subcommand& s) {
  s.flags.string_value(s.app, "--ckpt", "ckpt", "student checkpoint stem");
  s.flags.string_value(s.app, "--teacher", "teacher", "teacher checkpoint stem");
  s.flags.string_value(s.app, "--data", "target_data", "target dataset cache stem (synthesized when omitted)");
  s.flags.list_value(s.app, "--probe-seeds", "probe_seeds", "probe seeds", false);
}

RunConfig initial_config() {
  RunConfig cfg;
  if (const char* env = std::getenv(kSeedEnv); env != nullptr && *env != '\0') {
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (errno != 0 || end == env || *end != '\0' || env[0] == '-') {
      throw ParameterError(std::string(kSeedEnv) + " is not a non-negative integer: '" + env + "'");
    }
    cfg.seed = v;
  }
  return cfg;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Distilled momentum-contrastive self-supervised learning at desk scale", "distill-ssl"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  std::vector<std::unique_ptr<Subcommand>> subs;
  auto add = [&](const char* name, const char* help) -> Subcommand& {
    auto s = std::make_unique<Subcommand>();
    s->app = app.add_subcommand(name, help);
    add_common(*s);
    subs.push_back(std::move(s));
    return *subs.back();
  };

  {
    Subcommand& s = add("gen-data", "write target and generic dataset caches");
    s.flags.string_value(s.app, "--images", "images", "Netpbm directory with one subdirectory per class (target)");
    s.flags.json_value(s.app, "--data-seed", "data_seed", "dataset seed");
  }
  {
    Subcommand& s = add("pretrain-generic", "contrastive pretraining on the generic domain");
    add_training(s);
    s.flags.string_value(s.app, "--generic-data", "generic_data", "generic dataset cache stem");
  }
  {
    Subcommand& s = add("adapt-teacher", "train the teacher head on the target domain, backbone frozen");
    add_training(s);
    s.flags.string_value(s.app, "--generic", "generic_ckpt", "checkpoint stem written by pretrain-generic");
    s.flags.flag(s.app, "--no-freeze", "freeze_backbone", false, "train the backbone too");
  }
  {
    Subcommand& s = add("pretrain-student", "contrastive student training, optionally distilled");
    add_training(s);
    s.flags.flag(s.app, "--distill", "distill", true, "add the teacher KL term");
    s.flags.string_value(s.app, "--teacher", "teacher", "checkpoint stem written by adapt-teacher");
    s.flags.json_value(s.app, "--lambda", "lambda", "distillation weight");
    s.flags.string_value(s.app, "--init-from", "init_from", "start from this teacher checkpoint");
  }
  {
    Subcommand& s = add("linear-probe", "linear probe on frozen backbone features");
    add_probe(s);
    s.flags.string_value(s.app, "--mode", "mode", "student | teacher | addition | concatenation");
    s.flags.json_value(s.app, "--fraction", "label_fraction", "labelled fraction per class");
  }
  {
    Subcommand& s = add("sweep-labels", "probe accuracy over label fractions and seeds");
    add_probe(s);
    s.flags.list_value(s.app, "--modes", "modes", "feature modes", true);
    s.flags.list_value(s.app, "--fractions", "fractions", "label fractions", false);
  }
  {
    Subcommand& s = add("gradcheck", "finite-difference check of every op and loss");
    s.flags.json_value(s.app, "--instances", "gradcheck_instances", "random instances per op");
  }
  {
    Subcommand& s = add("compare-transfer", "addition / concatenation / initialization / distillation arms");
    add_training(s);
    s.flags.string_value(s.app, "--teacher", "teacher", "checkpoint stem written by adapt-teacher");
    s.flags.json_value(s.app, "--fraction", "label_fraction", "labelled fraction per class");
    s.flags.list_value(s.app, "--probe-seeds", "probe_seeds", "probe seeds", false);
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  Subcommand* chosen = nullptr;
  for (auto& s : subs) {
    if (s->app->parsed()) chosen = s.get();
  }
  if (chosen == nullptr) {
    err << app.help();
    return kExitUsage;
  }

  RunConfig cfg;
  try {
    cfg = initial_config();
    if (!chosen->config_path.empty()) cfg = load_run_config(chosen->config_path, cfg);
    for (const auto& a : chosen->assignments) apply_assignment(cfg, a);
    for (const auto& apply : chosen->flags.appliers) apply(cfg);
    cfg.command = chosen->app->get_name();
    if (cfg.out.empty()) throw UsageError("an output directory is required (--out)");
    cfg.validate();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n\n" << chosen->app->help();
    return kExitUsage;
  }

  try {
    return Command(cfg, err).run();
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << chosen->app->help();
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace dssl::cli
