// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
// Usage: dssl_acceptance [work-dir]   (default: ./acceptance_work)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "dssl/checkpoint.hpp"
#include "dssl/distill.hpp"
#include "dssl/gradcheck.hpp"
#include "dssl/ops.hpp"
#include "dssl/pipeline.hpp"

namespace fs = std::filesystem;
using namespace dssl;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string format(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

// Runs one CLI command in-process; progress output is kept for error reports only.
void cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != cli::kExitOk) {
    std::string cmd;
    for (const auto& a : args) cmd += a + " ";
    throw std::runtime_error("command failed (exit " + std::to_string(code) + "): " + cmd + "\n" + err.str());
  }
}

Tensor unit_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    double n = 0;
    for (double& v : t.row(r)) {
      v = rng.normal();
      n += v * v;
    }
    for (double& v : t.row(r)) v /= std::sqrt(n);
  }
  return t;
}

const Dataset& target_train() {
  static const Dataset data = split_dataset(generate_synthetic_dataset(SyntheticSpec::target_default(), 7), 4).train;
  return data;
}

TeacherState generic_teacher(const TrainConfig& cfg) {
  Rng rng(1234);
  Checkpoint ck;
  ck.meta["encoder"] = encoder_config_to_json(EncoderConfig{});
  append_encoder(ck, "query", init_encoder(EncoderConfig{}, rng));
  return init_teacher(ck, EncoderConfig{}, AugmentConfig{}, cfg);
}

// 1
Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  const GradcheckReport r = run_gradcheck_suite(7, 100, 1e-6);
  const double secs = seconds_since(t0);
  std::set<std::string> names;
  double worst = 0;
  std::string worst_name;
  bool counts_ok = true;
  for (const auto& e : r.entries) {
    names.insert(e.name);
    counts_ok &= e.instances >= 100;
    if (e.max_rel_error >= worst) {
      worst = e.max_rel_error;
      worst_name = e.name;
    }
  }
  bool covered = true;
  for (const char* op : {"affine", "conv2d", "relu", "global_avg_pool", "l2_normalize", "softmax_with_temperature",
                         "key_logits", "cross_entropy", "kl_to_logits", "L_con", "L_dis", "L_total"})
    covered &= names.count(op) > 0;
  const bool pass = r.passed() && worst <= 1e-5 && counts_ok && covered && secs < 120.0;
  return {pass, format("%zu checks x 100 instances, worst rel err %.2e (%s), %.1fs", r.entries.size(), worst,
                       worst_name.c_str(), secs)};
}

// 2
Outcome closed_form_info_nce() {
  double worst_uniform = 0, worst_orth = 0;
  for (std::size_t M : {1, 2, 8}) {
    const std::size_t d = M + 1;
    Tensor same({M, d});
    for (std::size_t i = 0; i < M; ++i) same.at(i, 0) = 1.0;
    KeyQueue uq(M, d);
    uq.push(same);
    Tensor q({1, d});
    q.at(0, 0) = 1.0;
    worst_uniform =
        std::max(worst_uniform, std::abs(info_nce_loss(q, q, uq, 0.07) - std::log(static_cast<double>(M + 1))));

    Tensor orth({M, d});
    for (std::size_t i = 0; i < M; ++i) orth.at(i, i + 1) = 1.0;
    KeyQueue oq(M, d);
    oq.push(orth);
    const double expect = std::log(1.0 + static_cast<double>(M) / std::exp(1.0));
    worst_orth = std::max(worst_orth, std::abs(info_nce_loss(q, q, oq, 1.0) - expect));
  }
  return {worst_uniform <= 1e-12 && worst_orth <= 1e-12,
          format("M in {1,2,8}: |L - ln(M+1)| <= %.1e, |L - ln(1+M/e)| <= %.1e", worst_uniform, worst_orth)};
}

// 3
Outcome kl_properties() {
  Rng rng(3);
  double min_kl = 1e300, max_self = 0, min_distinct = 1e300;
  for (int t = 0; t < 10000; ++t) {
    const std::size_t n = 2 + rng.uniform_int(15);
    Tensor a({n}), b({n});
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng.uniform(-3, 3);
      b[i] = rng.uniform(-3, 3);
    }
    const Tensor p = ops::softmax_with_temperature(a, 1.0);
    const Tensor q = ops::softmax_with_temperature(b, 1.0);
    const double kl = kl_distillation_loss({p}, {q});
    min_kl = std::min(min_kl, kl);
    min_distinct = std::min(min_distinct, kl);
    max_self = std::max(max_self, std::abs(kl_distillation_loss({p}, {p})));
  }
  const double hand = kl_distillation_loss({Tensor::vector({0.5, 0.5})}, {Tensor::vector({0.25, 0.75})});
  const bool pass = min_kl >= 0.0 && max_self <= 1e-12 && min_distinct > 1e-12 && std::abs(hand - 0.14384) <= 1e-5;
  return {pass, format("min KL over 1e4 distinct pairs %.3e, max |KL(p,p)| %.1e, hand case %.6f", min_distinct,
                       max_self, hand)};
}

// 4
Outcome momentum_queue_invariants() {
  Rng rng(4);
  EncoderParams key = init_encoder(EncoderConfig{}, rng);
  const EncoderParams query = init_encoder(EncoderConfig{}, rng);
  EncoderParams before = key;
  momentum_update(key, query, 1.0);
  const bool identity = values_bitwise_equal(key, before);
  momentum_update(key, query, 0.0);
  const bool copy = values_bitwise_equal(key, query);

  std::size_t mismatches = 0;
  for (int seq = 0; seq < 1000; ++seq) {
    const std::size_t N = 1 + rng.uniform_int(6);
    const std::size_t M = N * (1 + rng.uniform_int(6));
    const std::size_t d = 2 + rng.uniform_int(3);
    const std::size_t pushes = 1 + rng.uniform_int(20);
    KeyQueue q(M, d);
    std::deque<std::vector<double>> fifo;
    for (std::size_t k = 1; k <= pushes; ++k) {
      const Tensor keys = unit_rows(N, d, rng);
      q.push(keys);
      for (std::size_t r = 0; r < N; ++r) {
        fifo.emplace_back(keys.row(r).begin(), keys.row(r).end());
        if (fifo.size() > M) fifo.pop_front();
      }
      if (q.ptr() != (k * N) % M) ++mismatches;
    }
    // Oldest surviving key sits at ptr once the ring is full, at slot 0 before that.
    const std::size_t start = fifo.size() == M ? q.ptr() : 0;
    for (std::size_t i = 0; i < fifo.size(); ++i) {
      const auto slot = q.keys().row((start + i) % M);
      if (!std::equal(slot.begin(), slot.end(), fifo[i].begin())) ++mismatches;
    }
  }
  return {identity && copy && mismatches == 0,
          format("m=1 identity %s, m=0 copy %s, %zu mismatches over 1000 random push sequences",
                 identity ? "bitwise" : "DIFFERS", copy ? "bitwise" : "DIFFERS", mismatches)};
}

// 5
Outcome semantic_preserving_freeze() {
  const TrainConfig cfg;
  TeacherState t = generic_teacher(cfg);
  const EncoderParams init = t.moco.query;
  adapt_teacher(t, target_train(), 100);
  bool backbone_same = true, head_moved = false;
  for (const ParamSet* ps : {&t.moco.query.backbone, &t.moco.key.backbone})
    for (const auto& [name, p] : *ps) backbone_same &= bitwise_equal(p.value, init.backbone.at(name).value);
  for (const auto& [name, p] : t.moco.query.head) head_moved |= !bitwise_equal(p.value, init.head.at(name).value);

  TeacherState u = generic_teacher(cfg);
  set_backbone_frozen(u, false);
  MoCoState plain = u.moco;
  const auto lu = adapt_teacher(u, target_train(), 20);
  const auto lp = train_moco(plain, target_train(), 20);
  bool same = values_bitwise_equal(u.moco.query, plain.query) && values_bitwise_equal(u.moco.key, plain.key) &&
              bitwise_equal(u.moco.queue.keys(), plain.queue.keys());
  for (std::size_t i = 0; i < lu.size(); ++i) same &= lu[i].con == lp[i].con;
  return {backbone_same && head_moved && same,
          format("100 frozen steps: backbone %s, head %s; unfrozen 20 steps vs plain MoCo: %s",
                 backbone_same ? "bitwise unchanged" : "CHANGED", head_moved ? "moved" : "UNCHANGED",
                 same ? "bitwise equal" : "DIFFERS")};
}

// 6
Outcome zero_lambda_equivalence() {
  TrainConfig cfg;
  cfg.lambda = 0.0;
  MoCoState student = make_moco_state(EncoderConfig{}, AugmentConfig{}, cfg);
  MoCoState plain = make_moco_state(EncoderConfig{}, AugmentConfig{}, cfg);
  TeacherState teacher = generic_teacher(cfg);
  const auto ld = train_distilled(student, teacher, target_train(), 50);
  const auto lp = train_moco(plain, target_train(), 50);
  bool same = values_bitwise_equal(student.query, plain.query) && values_bitwise_equal(student.key, plain.key) &&
              bitwise_equal(student.queue.keys(), plain.queue.keys());
  for (std::size_t i = 0; i < 50; ++i) same &= ld[i].total == lp[i].con;
  return {same, format("50 steps, lambda=0 vs plain MoCo: %s", same ? "bitwise identical" : "DIFFERS")};
}

// 7
Outcome self_teacher() {
  const TrainConfig cfg;
  MoCoState student = make_moco_state(EncoderConfig{}, AugmentConfig{}, cfg);
  TeacherState teacher = restore_teacher(moco_checkpoint(student), AugmentConfig{}, cfg);
  warm_up_queues(student, teacher, target_train().frames);
  double worst = 0;
  for (std::size_t step = 0; step < 20; ++step) {
    // The teacher is re-copied from the student before each step; pushes keep the queues identical.
    copy_values(student.query, teacher.moco.query);
    copy_values(student.key, teacher.moco.key);
    const auto r = distilled_train_step(student, teacher, training_batch(target_train(), cfg, step),
                                        step_seed(cfg.seed, step));
    worst = std::max(worst, r.dis);
  }
  const bool synced = bitwise_equal(student.queue.keys(), teacher.moco.queue.keys());
  return {worst < 1e-10 && synced, format("max L_dis over 20 steps %.2e, queues %s", worst,
                                          synced ? "identical" : "DIVERGED")};
}

struct PipelineRun {
  std::uint64_t seed = 0;
  fs::path root;
  double seconds = 0;
  double generic_ratio = 0;
  double student_ratio = 0;
  double probe_accuracy = 0;
};

double window_ratio(const fs::path& metrics_csv) {
  const auto rows = read_csv(metrics_csv);
  if (rows.size() < 20) throw std::runtime_error("too few steps in " + metrics_csv.string());
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    first += std::stod(rows[i][1]);
    last += std::stod(rows[rows.size() - 10 + i][1]);
  }
  return last / first;
}

PipelineRun run_pipeline(const fs::path& work, std::uint64_t seed) {
  PipelineRun run;
  run.seed = seed;
  run.root = work / ("seed" + std::to_string(seed));
  fs::remove_all(run.root);
  auto p = [&](const char* name) { return (run.root / name).string(); };
  const std::string s = std::to_string(seed);
  const auto t0 = Clock::now();
  cli({"gen-data", "--out", p("data"), "--seed", s, "--data-seed", s});
  cli({"pretrain-generic", "--out", p("generic"), "--seed", s, "--generic-data", p("data/generic")});
  cli({"adapt-teacher", "--out", p("teacher"), "--seed", s, "--data", p("data/target"), "--generic",
       p("generic/model")});
  cli({"pretrain-student", "--distill", "--out", p("student"), "--seed", s, "--data", p("data/target"), "--teacher",
       p("teacher/model")});
  cli({"linear-probe", "--out", p("probe"), "--seed", s, "--data", p("data/target"), "--ckpt", p("student/model"),
       "--fraction", "0.1", "--probe-seeds", s});
  run.seconds = seconds_since(t0);
  run.generic_ratio = window_ratio(run.root / "generic" / "metrics.csv");
  run.student_ratio = window_ratio(run.root / "student" / "metrics.csv");
  run.probe_accuracy = std::stod(read_csv(run.root / "probe" / "metrics.csv").at(0).at(4));
  return run;
}

std::vector<PipelineRun> g_runs;

// 8
Outcome desk_scale_end_to_end(const fs::path& work) {
  for (std::uint64_t seed : {7, 8, 9}) g_runs.push_back(run_pipeline(work, seed));
  double max_secs = 0, gen = 0, stu = 0, acc = 0;
  for (const auto& r : g_runs) {
    max_secs = std::max(max_secs, r.seconds);
    gen += r.generic_ratio / 3;
    stu += r.student_ratio / 3;
    acc += r.probe_accuracy / 3;
  }
  const bool time_ok = max_secs <= 600.0;
  const bool loss_ok = gen < 0.6 && stu < 0.6;
  const bool probe_ok = acc >= 0.375;
  return {time_ok && loss_ok && probe_ok,
          format("slowest pipeline %.0fs (<=600 %s); L_con last/first window ratio generic %.3f, student %.3f "
                 "(<0.6 %s); probe@10%% accuracy %.3f (>=0.375 %s); 3 seeds",
                 max_secs, time_ok ? "ok" : "FAIL", gen, stu, loss_ok ? "ok" : "FAIL", acc, probe_ok ? "ok" : "FAIL")};
}

// 9
Outcome label_efficiency_trend() {
  const PipelineRun& r = g_runs.at(0);
  auto p = [&](const char* name) { return (r.root / name).string(); };
  cli({"sweep-labels", "--out", p("sweep"), "--seed", std::to_string(r.seed), "--data", p("data/target"), "--ckpt",
       p("student/model"), "--teacher", p("teacher/model"), "--modes", "student,teacher,addition,concatenation",
       "--fractions", "0.05,0.1,0.5,1.0", "--probe-seeds", "0,1,2"});
  const auto j = nlohmann::json::parse(slurp(r.root / "sweep" / "summary.json"));
  std::map<std::string, std::vector<std::pair<double, double>>> curves;
  for (const auto& s : j["summary"])
    curves[s["encoder"].get<std::string>()].emplace_back(s["fraction"].get<double>(),
                                                         s["accuracy"]["mean"].get<double>());
  bool pass = curves.size() == 4;
  std::string detail;
  for (auto& [name, pts] : curves) {
    std::sort(pts.begin(), pts.end());
    pass &= pts.size() == 4;
    double worst_drop = 0;
    for (std::size_t i = 1; i < pts.size(); ++i) worst_drop = std::max(worst_drop, pts[i - 1].second - pts[i].second);
    pass &= worst_drop <= 0.02;
    detail += format("%s %.3f->%.3f (max drop %.3f); ", name.c_str(), pts.front().second, pts.back().second,
                     worst_drop);
  }
  return {pass, detail + "3 seeds"};
}

// 10
Outcome transfer_ablation() {
  const PipelineRun& r = g_runs.at(0);
  auto p = [&](const char* name) { return (r.root / name).string(); };
  cli({"compare-transfer", "--out", p("compare"), "--seed", std::to_string(r.seed), "--data", p("data/target"),
       "--teacher", p("teacher/model"), "--fraction", "0.1"});
  std::set<std::string> arms;
  std::string detail;
  for (const auto& row : read_csv(r.root / "compare" / "comparison.csv")) {
    arms.insert(row.at(0));
    detail += row.at(0) + " " + format("%.3f", std::stod(row.at(3))) + "; ";
  }
  const bool pass =
      arms == std::set<std::string>{"addition", "concatenation", "initialization", "distillation"};
  return {pass, "comparison.csv accuracy@10%: " + detail};
}

// 11
Outcome persistence(const fs::path& work) {
  std::vector<fs::path> models;
  for (const auto& r : g_runs)
    for (const char* stem : {"generic/model", "teacher/model", "student/model"}) models.push_back(r.root / stem);
  for (const char* arm : {"plain", "initialization", "distillation"}) models.push_back(g_runs.at(0).root / "compare" / arm);
  std::size_t round_trip_ok = 0;
  const fs::path copy = work / "roundtrip" / "model";
  fs::create_directories(copy.parent_path());
  for (const auto& m : models) {
    const Checkpoint a = load_checkpoint(m);
    save_checkpoint(a, copy);
    const Checkpoint b = load_checkpoint(copy);
    bool same = a.tensors.size() == b.tensors.size() && slurp(blob_path(m)) == slurp(blob_path(copy));
    for (std::size_t i = 0; same && i < a.tensors.size(); ++i)
      same = a.tensors[i].first == b.tensors[i].first && bitwise_equal(a.tensors[i].second, b.tensors[i].second);
    round_trip_ok += same;
  }

  // Rerun every checkpoint-writing command of the seed-7 pipeline and compare bytes.
  const PipelineRun& r = g_runs.at(0);
  const fs::path again = work / "rerun";
  fs::remove_all(again);
  auto p = [&](const char* name) { return (r.root / name).string(); };
  auto q = [&](const char* name) { return (again / name).string(); };
  const std::string s = std::to_string(r.seed);
  cli({"gen-data", "--out", q("data"), "--seed", s, "--data-seed", s});
  cli({"pretrain-generic", "--out", q("generic"), "--seed", s, "--generic-data", p("data/generic")});
  cli({"adapt-teacher", "--out", q("teacher"), "--seed", s, "--data", p("data/target"), "--generic",
       p("generic/model")});
  cli({"pretrain-student", "--distill", "--out", q("student"), "--seed", s, "--data", p("data/target"), "--teacher",
       p("teacher/model")});
  const fs::path plain_a = work / "plain_a", plain_b = work / "plain_b";
  for (const auto& dir : {plain_a, plain_b}) {
    fs::remove_all(dir);
    cli({"pretrain-student", "--out", dir.string(), "--seed", s, "--data", p("data/target")});
  }
  std::vector<std::pair<fs::path, fs::path>> pairs{
      {r.root / "data" / "target", again / "data" / "target"},
      {r.root / "data" / "generic", again / "data" / "generic"},
      {r.root / "generic" / "model", again / "generic" / "model"},
      {r.root / "teacher" / "model", again / "teacher" / "model"},
      {r.root / "student" / "model", again / "student" / "model"},
      {plain_a / "model", plain_b / "model"}};
  // Manifests record the output directory, which differs between reruns by construction.
  auto manifest = [](const fs::path& stem) {
    auto j = nlohmann::json::parse(slurp(manifest_path(stem)));
    std::function<void(nlohmann::json&)> strip = [&](nlohmann::json& v) {
      if (!v.is_object()) return;
      v.erase("out");
      for (auto& [k, child] : v.items()) strip(child);
    };
    strip(j);
    return j;
  };
  std::size_t identical = 0;
  for (const auto& [a, b] : pairs)
    identical += slurp(blob_path(a)) == slurp(blob_path(b)) && manifest(a) == manifest(b);
  return {round_trip_ok == models.size() && identical == pairs.size(),
          format("round-trip bitwise %zu/%zu trained models; reruns bitwise identical %zu/%zu checkpoints",
                 round_trip_ok, models.size(), identical, pairs.size())};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::current_path() / "acceptance_work";
  fs::create_directories(work);

  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> fn;
  };
  const std::vector<Criterion> criteria{
      {1, "gradient fidelity", gradient_fidelity},
      {2, "closed-form InfoNCE", closed_form_info_nce},
      {3, "KL properties", kl_properties},
      {4, "momentum and queue invariants", momentum_queue_invariants},
      {5, "semantic-preserving freeze", semantic_preserving_freeze},
      {6, "zero-lambda equivalence", zero_lambda_equivalence},
      {7, "self-teacher zero distillation", self_teacher},
      {8, "desk-scale end-to-end", [&] { return desk_scale_end_to_end(work); }},
      {9, "label-efficiency trend", label_efficiency_trend},
      {10, "transfer-mode ablation harness", transfer_ablation},
      {11, "persistence", [&] { return persistence(work); }},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %2d %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
