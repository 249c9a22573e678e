#include "dssl/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>

#include "dssl/autograd.hpp"
#include "dssl/contrastive.hpp"
#include "dssl/encoder.hpp"
#include "dssl/ops.hpp"
#include "dssl/rng.hpp"

namespace dssl {
namespace {

constexpr double kGradTolerance = 1e-5;

double norm2(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Draws entries with |v| >= margin so that relu kinks stay out of reach of ±h.
Tensor away_from_zero(Shape shape, Rng& rng, double margin) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) {
    const double mag = rng.uniform(margin, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

Tensor unit_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  return ops::l2_normalize(random_tensor({rows, cols}, rng), 1e-12);
}

// Builds a scalar from one differentiable input. Returns the value and, if requested, the gradient.
using ScalarBuilder = std::function<Var(Graph&, Var)>;

double scalar_value(const ScalarBuilder& build, const Tensor& x) {
  Graph g;
  return g.value(build(g, g.constant(x))).item();
}

Tensor analytic_gradient(const ScalarBuilder& build, const Tensor& x) {
  Graph g;
  Var in = g.leaf(x);
  Var out = build(g, in);
  g.backward(out);
  return g.grad(in);
}

double check_one(const ScalarBuilder& build, const Tensor& x, double h) {
  const Tensor a = analytic_gradient(build, x);
  const Tensor n = finite_diff_gradient([&](const Tensor& p) { return scalar_value(build, p); }, x, h);
  return gradient_relative_error(a, n);
}

// Σ w ⊙ y for a fixed random weighting; turns any op output into a scalar test function.
Var weighted_sum(Graph& g, Var y, const Tensor& w) {
  Tensor prod = g.value(y);
  for (std::size_t i = 0; i < prod.numel(); ++i) prod[i] *= w[i];
  double s = 0.0;
  for (double v : prod.data()) s += v;
  return g.record(Tensor::scalar(s), {y},
                  [w](const Tensor&, const Tensor& gy, std::span<const Tensor* const>, std::span<Tensor* const> gin) {
                    for (std::size_t i = 0; i < w.numel(); ++i) (*gin[0])[i] += gy[0] * w[i];
                  });
}

struct Suite {
  Rng rng;
  std::size_t instances;
  double h;
  GradcheckReport report;

  void run(const std::string& name, const std::function<double(Rng&)>& instance) {
    GradcheckEntry e{name, 0, 0.0};
    for (std::size_t i = 0; i < instances; ++i) {
      e.max_rel_error = std::max(e.max_rel_error, instance(rng));
      ++e.instances;
    }
    report.entries.push_back(e);
  }
};

}  // namespace

double gradient_relative_error(const Tensor& analytic, const Tensor& numeric) {
  Tensor diff = analytic;
  for (std::size_t i = 0; i < diff.numel(); ++i) diff[i] -= numeric[i];
  return norm2(diff) / std::max({norm2(analytic), norm2(numeric), 1e-3});
}

bool GradcheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [&](const GradcheckEntry& e) {
    return e.instances > 0 && e.max_rel_error <= tolerance;
  });
}

GradcheckReport run_gradcheck_suite(std::uint64_t seed, std::size_t instances, double h) {
  const auto start = std::chrono::steady_clock::now();
  Suite s{Rng(seed), instances, h, {}};
  s.report.tolerance = kGradTolerance;
  s.report.step = h;

  auto dim = [](Rng& r, std::size_t lo, std::size_t hi) { return lo + static_cast<std::size_t>(r.uniform_int(hi - lo + 1)); };

  s.run("affine", [&](Rng& r) {
    const std::size_t b = dim(r, 1, 4), in = dim(r, 1, 5), out = dim(r, 1, 5);
    const Tensor x = random_tensor({b, in}, r), W = random_tensor({in, out}, r), bias = random_tensor({out}, r);
    const Tensor w = random_tensor({b, out}, r);
    double worst = check_one([&](Graph& g, Var v) { return weighted_sum(g, ag::affine(g, v, g.constant(W), g.constant(bias)), w); }, x, h);
    worst = std::max(worst, check_one([&](Graph& g, Var v) { return weighted_sum(g, ag::affine(g, g.constant(x), v, g.constant(bias)), w); }, W, h));
    return std::max(worst, check_one([&](Graph& g, Var v) { return weighted_sum(g, ag::affine(g, g.constant(x), g.constant(W), v), w); }, bias, h));
  });

  s.run("conv2d", [&](Rng& r) {
    const std::size_t cin = dim(r, 1, 2), cout = dim(r, 1, 3), k = dim(r, 1, 3), stride = dim(r, 1, 2),
                      pad = dim(r, 0, 1);
    const std::size_t hgt = dim(r, k, 6), wid = dim(r, k, 6);
    const bool batched = r.uniform() < 0.5;
    const Shape xs = batched ? Shape{2, cin, hgt, wid} : Shape{cin, hgt, wid};
    const Tensor x = random_tensor(xs, r), kern = random_tensor({cout, cin, k, k}, r);
    const Tensor w = random_tensor(ops::conv2d(x, kern, stride, pad).shape(), r);
    const double a = check_one([&](Graph& g, Var v) { return weighted_sum(g, ag::conv2d(g, v, g.constant(kern), stride, pad), w); }, x, h);
    return std::max(a, check_one([&](Graph& g, Var v) { return weighted_sum(g, ag::conv2d(g, g.constant(x), v, stride, pad), w); }, kern, h));
  });

  s.run("relu", [&](Rng& r) {
    const Tensor x = away_from_zero({dim(r, 1, 12)}, r, 1e-3);
    const Tensor w = random_tensor(x.shape(), r);
    return check_one([&](Graph& g, Var v) { return weighted_sum(g, ag::relu(g, v), w); }, x, h);
  });

  s.run("global_avg_pool", [&](Rng& r) {
    const Tensor x = random_tensor({dim(r, 1, 3), dim(r, 1, 4), dim(r, 1, 4)}, r);
    const Tensor w = random_tensor({x.dim(0)}, r);
    return check_one([&](Graph& g, Var v) { return weighted_sum(g, ag::global_avg_pool(g, v), w); }, x, h);
  });

  s.run("l2_normalize", [&](Rng& r) {
    const Tensor x = random_tensor({dim(r, 1, 3), dim(r, 2, 6)}, r);
    const Tensor w = random_tensor(x.shape(), r);
    return check_one([&](Graph& g, Var v) { return weighted_sum(g, ag::l2_normalize(g, v, kNormalizeEps), w); }, x, h);
  });

  s.run("softmax_with_temperature", [&](Rng& r) {
    const Tensor z = random_tensor({dim(r, 1, 3), dim(r, 2, 6)}, r);
    const double tau = r.uniform(0.07, 1.0);
    const Tensor w = random_tensor(z.shape(), r);
    return check_one([&](Graph& g, Var v) { return weighted_sum(g, ag::softmax_with_temperature(g, v, tau), w); }, z, h);
  });

  s.run("key_logits", [&](Rng& r) {
    const std::size_t b = dim(r, 1, 3), d = dim(r, 2, 5), m = dim(r, 1, 6);
    const Tensor q = random_tensor({b, d}, r), kp = unit_rows(b, d, r), queue = unit_rows(m, d, r);
    const double tau = r.uniform(0.07, 1.0);
    const Tensor w = random_tensor({b, m + 1}, r);
    return check_one([&](Graph& g, Var v) { return weighted_sum(g, ag::key_logits(g, v, kp, queue, tau), w); }, q, h);
  });

  s.run("cross_entropy", [&](Rng& r) {
    const std::size_t b = dim(r, 1, 4), n = dim(r, 2, 6);
    const Tensor z = random_tensor({b, n}, r, -3.0, 3.0);
    std::vector<int> labels(b);
    for (int& l : labels) l = static_cast<int>(r.uniform_int(n));
    return check_one([&](Graph& g, Var v) { return ag::cross_entropy(g, v, labels); }, z, h);
  });

  s.run("kl_to_logits", [&](Rng& r) {
    const std::size_t b = dim(r, 1, 4), n = dim(r, 2, 6);
    const Tensor z = random_tensor({b, n}, r, -3.0, 3.0);
    const Tensor p = ops::softmax_with_temperature(random_tensor({b, n}, r, -2.0, 2.0), 1.0);
    return check_one([&](Graph& g, Var v) { return ag::kl_to_logits(g, p, v); }, z, h);
  });

  s.run("add", [&](Rng& r) {
    const Tensor x = random_tensor({dim(r, 1, 4), dim(r, 1, 5)}, r);
    const Tensor c = random_tensor(x.shape(), r);
    const Tensor w = random_tensor(x.shape(), r);
    return check_one([&](Graph& g, Var v) { return weighted_sum(g, ag::add(g, v, g.constant(c)), w); }, x, h);
  });

  s.run("scale", [&](Rng& r) {
    const Tensor x = random_tensor({dim(r, 1, 8)}, r);
    const Tensor w = random_tensor(x.shape(), r);
    const double a = r.uniform(-3.0, 3.0);
    return check_one([&](Graph& g, Var v) { return weighted_sum(g, ag::scale(g, v, a), w); }, x, h);
  });

  s.run("sum", [&](Rng& r) {
    const Tensor x = random_tensor({dim(r, 1, 4), dim(r, 1, 5)}, r);
    return check_one([&](Graph& g, Var v) { return ag::sum(g, v); }, x, h);
  });

  s.run("sum_squares", [&](Rng& r) {
    const Tensor x = random_tensor({dim(r, 1, 8)}, r);
    return check_one([&](Graph& g, Var v) { return ag::sum_squares(g, ag::scale(g, ag::add(g, v, v), 0.5)); }, x, h);
  });

  // Composite losses as functions of the raw (pre-normalization) query vectors.
  struct LossToy {
    Tensor u, k_plus, targets;
    KeyQueue queue;
    double tau, tau_d, lambda;
  };
  auto make_toy = [&](Rng& r) {
    const std::size_t b = dim(r, 1, 3), d = dim(r, 2, 6), m = dim(r, 1, 8);
    LossToy t;
    t.u = random_tensor({b, d}, r);
    t.k_plus = unit_rows(b, d, r);
    t.queue = KeyQueue(m, d);
    t.queue.push(unit_rows(m, d, r));
    t.tau = r.uniform(0.07, 1.0);
    t.tau_d = r.uniform() < 0.5 ? t.tau : r.uniform(0.07, 1.0);
    t.lambda = r.uniform(0.5, 5.0);
    const Tensor qt = unit_rows(b, d, r), kt = unit_rows(b, d, r), teacher_queue = unit_rows(m, d, r);
    t.targets = ops::softmax_with_temperature(ops::key_logits(qt, kt, teacher_queue, 1.0), t.tau_d);
    return t;
  };
  auto con_term = [](Graph& g, Var u, const LossToy& t) {
    Var q = ag::l2_normalize(g, u, kNormalizeEps);
    return info_nce_loss(g, q, t.k_plus, t.queue, t.tau);
  };
  auto dis_term = [](Graph& g, Var u, const LossToy& t) {
    Var q = ag::l2_normalize(g, u, kNormalizeEps);
    return ag::kl_to_logits(g, t.targets, ag::key_logits(g, q, t.k_plus, t.queue.keys(), t.tau_d));
  };

  s.run("L_con", [&](Rng& r) {
    const LossToy t = make_toy(r);
    return check_one([&](Graph& g, Var u) { return con_term(g, u, t); }, t.u, h);
  });
  s.run("L_dis", [&](Rng& r) {
    const LossToy t = make_toy(r);
    return check_one([&](Graph& g, Var u) { return dis_term(g, u, t); }, t.u, h);
  });
  s.run("L_total", [&](Rng& r) {
    const LossToy t = make_toy(r);
    return check_one(
        [&](Graph& g, Var u) { return ag::add(g, con_term(g, u, t), ag::scale(g, dis_term(g, u, t), t.lambda)); },
        t.u, h);
  });

  // End-to-end: gradient of L_con with respect to every query-encoder parameter of a small encoder.
  s.run("encoder_L_con", [&](Rng& r) {
    EncoderConfig cfg;
    cfg.image_height = cfg.image_width = 6;
    cfg.conv1_channels = 2;
    cfg.conv2_channels = 3;
    cfg.d_backbone = 4;
    cfg.d = 3;
    for (;;) {
      EncoderParams enc = init_encoder(cfg, r);
      const Tensor x = random_tensor({2, 1, 6, 6}, r, 0.0, 1.0);
      // Reject draws that put a relu input within reach of the perturbation.
      Tensor h1 = ops::conv2d(x, enc.backbone.at("conv1.W").value, cfg.stride, cfg.pad);
      Tensor h2 = ops::conv2d(ops::relu(h1), enc.backbone.at("conv2.W").value, cfg.stride, cfg.pad);
      Tensor f = ops::affine(ops::global_avg_pool(ops::relu(h2)), enc.backbone.at("fc.W").value,
                             enc.backbone.at("fc.b").value);
      Tensor h3 = ops::affine(f, enc.head.at("fc1.W").value, enc.head.at("fc1.b").value);
      auto near_kink = [](const Tensor& t) {
        return std::any_of(t.data().begin(), t.data().end(), [](double v) { return std::abs(v) < 1e-4; });
      };
      if (near_kink(h1) || near_kink(h2) || near_kink(h3)) continue;

      const Tensor kp = unit_rows(2, cfg.d, r);
      KeyQueue queue(4, cfg.d);
      queue.push(unit_rows(4, cfg.d, r));
      const double tau = r.uniform(0.1, 1.0);

      auto loss_of = [&](EncoderParams& e) {
        Graph g;
        Var q = encode(g, e, cfg, x);
        Var loss = info_nce_loss(g, q, kp, queue, tau);
        return std::pair<Graph, Var>{std::move(g), loss};
      };
      auto [g, loss] = loss_of(enc);
      g.backward(loss);

      double worst = 0.0;
      for (ParamSet* set : {&enc.backbone, &enc.head}) {
        for (auto& [name, p] : *set) {
          Tensor analytic = p.grad;
          const Tensor saved = p.value;
          const Tensor numeric = finite_diff_gradient(
              [&](const Tensor& v) {
                p.value = v;
                auto [g2, l2] = loss_of(enc);
                return g2.value(l2).item();
              },
              saved, h);
          p.value = saved;
          worst = std::max(worst, gradient_relative_error(analytic, numeric));
        }
      }
      return worst;
    }
  });

  s.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return s.report;
}

}  // namespace dssl
