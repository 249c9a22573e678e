#include "dssl/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "dssl/errors.hpp"
#include "dssl/ops.hpp"

namespace dssl {

Param& ParamSet::add(const std::string& name, Tensor value) {
  if (params_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
  Param p;
  p.grad = Tensor(value.shape());
  p.velocity = Tensor(value.shape());
  p.value = std::move(value);
  return params_.emplace(name, std::move(p)).first->second;
}

Param& ParamSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

const Param& ParamSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, p] : params_) out.push_back(name);
  return out;
}

void ParamSet::zero_grad() {
  for (auto& [name, p] : params_) p.grad.fill(0.0);
}

void ParamSet::set_frozen(bool frozen) {
  for (auto& [name, p] : params_) p.frozen = frozen;
}

std::size_t ParamSet::numel() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p.value.numel();
  return n;
}

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, false});
  return Var{nodes_.size() - 1};
}

Var Graph::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, true});
  return Var{nodes_.size() - 1};
}

Var Graph::param(Param& p) {
  nodes_.push_back(Node{p.value, {}, {}, {}, p.frozen ? nullptr : &p, !p.frozen});
  return Var{nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::vector<Var> inputs, BackwardFn fn) {
  const bool needs = std::any_of(inputs.begin(), inputs.end(), [&](Var v) { return node(v).requires_grad; });
  Node n{std::move(value), {}, std::move(inputs), needs ? std::move(fn) : BackwardFn{}, nullptr, needs};
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Graph::Node& Graph::node(Var v) const {
  if (v.id >= nodes_.size()) throw ContractError("variable does not belong to this graph");
  return nodes_[v.id];
}

const Tensor& Graph::value(Var v) const { return node(v).value; }

Tensor Graph::grad(Var v) const {
  const Node& n = node(v);
  return n.grad.empty() && !n.value.empty() ? Tensor(n.value.shape()) : n.grad;
}

bool Graph::requires_grad(Var v) const { return node(v).requires_grad; }

void Graph::backward(Var loss) {
  Node& root = nodes_.at(loss.id);
  if (root.value.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_to_string(root.value.shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  root.grad = Tensor(root.value.shape(), 1.0);

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.sink) {
      for (std::size_t k = 0; k < n.grad.numel(); ++k) n.sink->grad[k] += n.grad[k];
      continue;
    }
    if (!n.fn) continue;
    in_values.clear();
    in_grads.clear();
    for (Var in : n.inputs) {
      Node& src = nodes_[in.id];
      in_values.push_back(&src.value);
      if (src.requires_grad) {
        if (src.grad.empty()) src.grad = Tensor(src.value.shape());
        in_grads.push_back(&src.grad);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    n.fn(n.value, n.grad, in_values, in_grads);
  }
}

namespace ag {
namespace {

std::size_t rows_of(const Tensor& t) { return t.rank() == 1 ? 1 : t.dim(0); }
std::size_t cols_of(const Tensor& t) { return t.rank() == 1 ? t.dim(0) : t.dim(1); }

}  // namespace

Var affine(Graph& g, Var x, Var W, Var b) {
  Tensor y = ops::affine(g.value(x), g.value(W), g.value(b));
  return g.record(std::move(y), {x, W, b},
                  [](const Tensor&, const Tensor& gy, std::span<const Tensor* const> in, std::span<Tensor* const> gin) {
                    const Tensor& xv = *in[0];
                    const Tensor& Wv = *in[1];
                    const std::size_t rows = xv.dim(0), n_in = Wv.dim(0), n_out = Wv.dim(1);
                    for (std::size_t r = 0; r < rows; ++r) {
                      const double* gr = gy.raw() + r * n_out;
                      for (std::size_t k = 0; k < n_in; ++k) {
                        const double* wk = Wv.raw() + k * n_out;
                        if (gin[0]) {
                          double s = 0.0;
                          for (std::size_t c = 0; c < n_out; ++c) s += gr[c] * wk[c];
                          (*gin[0])[r * n_in + k] += s;
                        }
                        if (gin[1]) {
                          const double xv_rk = xv[r * n_in + k];
                          double* gw = gin[1]->raw() + k * n_out;
                          for (std::size_t c = 0; c < n_out; ++c) gw[c] += xv_rk * gr[c];
                        }
                      }
                      if (gin[2]) {
                        for (std::size_t c = 0; c < n_out; ++c) (*gin[2])[c] += gr[c];
                      }
                    }
                  });
}

Var conv2d(Graph& g, Var x, Var kernels, std::size_t stride, std::size_t pad) {
  Tensor y = ops::conv2d(g.value(x), g.value(kernels), stride, pad);
  return g.record(std::move(y), {x, kernels},
                  [stride, pad](const Tensor&, const Tensor& gy, std::span<const Tensor* const> in,
                                std::span<Tensor* const> gin) {
                    ops::conv2d_backward(*in[0], *in[1], stride, pad, gy, gin[0], gin[1]);
                  });
}

Var relu(Graph& g, Var x) {
  return g.record(ops::relu(g.value(x)), {x},
                  [](const Tensor&, const Tensor& gy, std::span<const Tensor* const> in, std::span<Tensor* const> gin) {
                    const Tensor& xv = *in[0];
                    for (std::size_t i = 0; i < xv.numel(); ++i) {
                      if (xv[i] > 0.0) (*gin[0])[i] += gy[i];
                    }
                  });
}

Var global_avg_pool(Graph& g, Var x) {
  return g.record(ops::global_avg_pool(g.value(x)), {x},
                  [](const Tensor&, const Tensor& gy, std::span<const Tensor* const> in, std::span<Tensor* const> gin) {
                    const Tensor& xv = *in[0];
                    const std::size_t spatial = xv.rank() == 3 ? xv.dim(1) * xv.dim(2) : xv.dim(2) * xv.dim(3);
                    const double inv = 1.0 / static_cast<double>(spatial);
                    for (std::size_t i = 0; i < gy.numel(); ++i) {
                      double* dst = gin[0]->raw() + i * spatial;
                      const double v = gy[i] * inv;
                      for (std::size_t p = 0; p < spatial; ++p) dst[p] += v;
                    }
                  });
}

Var l2_normalize(Graph& g, Var v, double eps) {
  return g.record(ops::l2_normalize(g.value(v), eps), {v},
                  [eps](const Tensor&, const Tensor& gy, std::span<const Tensor* const> in,
                        std::span<Tensor* const> gin) {
                    const Tensor& xv = *in[0];
                    const std::size_t rows = rows_of(xv), cols = cols_of(xv);
                    for (std::size_t r = 0; r < rows; ++r) {
                      const double* xr = xv.raw() + r * cols;
                      const double* gr = gy.raw() + r * cols;
                      double* dst = gin[0]->raw() + r * cols;
                      double ss = 0.0, dot = 0.0;
                      for (std::size_t c = 0; c < cols; ++c) {
                        ss += xr[c] * xr[c];
                        dot += xr[c] * gr[c];
                      }
                      const double n = std::sqrt(ss);
                      const double denom = n + eps;
                      // d/dv [v/(|v|+eps)] = I/denom - v v^T / (denom^2 |v|)
                      const double coef = n > 0.0 ? dot / (denom * denom * n) : 0.0;
                      for (std::size_t c = 0; c < cols; ++c) dst[c] += gr[c] / denom - xr[c] * coef;
                    }
                  });
}

Var softmax_with_temperature(Graph& g, Var z, double tau) {
  return g.record(ops::softmax_with_temperature(g.value(z), tau), {z},
                  [tau](const Tensor& p, const Tensor& gy, std::span<const Tensor* const>,
                        std::span<Tensor* const> gin) {
                    const std::size_t rows = rows_of(p), cols = cols_of(p);
                    for (std::size_t r = 0; r < rows; ++r) {
                      const double* pr = p.raw() + r * cols;
                      const double* gr = gy.raw() + r * cols;
                      double dot = 0.0;
                      for (std::size_t c = 0; c < cols; ++c) dot += pr[c] * gr[c];
                      double* dst = gin[0]->raw() + r * cols;
                      for (std::size_t c = 0; c < cols; ++c) dst[c] += pr[c] * (gr[c] - dot) / tau;
                    }
                  });
}

Var key_logits(Graph& g, Var q, const Tensor& k_plus, const Tensor& queue, double tau) {
  Tensor logits = ops::key_logits(g.value(q), k_plus, queue, tau);
  return g.record(std::move(logits), {q},
                  [k_plus, queue, tau](const Tensor&, const Tensor& gy, std::span<const Tensor* const> in,
                                       std::span<Tensor* const> gin) {
                    const std::size_t batch = in[0]->dim(0), d = in[0]->dim(1), m = queue.dim(0);
                    for (std::size_t b = 0; b < batch; ++b) {
                      const double* gb = gy.raw() + b * (m + 1);
                      double* dst = gin[0]->raw() + b * d;
                      const double g0 = gb[0] / tau;
                      for (std::size_t c = 0; c < d; ++c) dst[c] += g0 * k_plus[b * d + c];
                      for (std::size_t j = 0; j < m; ++j) {
                        const double gj = gb[1 + j] / tau;
                        const double* kj = queue.raw() + j * d;
                        for (std::size_t c = 0; c < d; ++c) dst[c] += gj * kj[c];
                      }
                    }
                  });
}

Var cross_entropy(Graph& g, Var logits, std::vector<int> labels) {
  const double loss = ops::cross_entropy(g.value(logits), labels);
  return g.record(Tensor::scalar(loss), {logits},
                  [labels = std::move(labels)](const Tensor&, const Tensor& gy, std::span<const Tensor* const> in,
                                               std::span<Tensor* const> gin) {
                    const Tensor& z = *in[0];
                    const Tensor p = ops::softmax_with_temperature(z, 1.0);
                    const double s = gy[0] / static_cast<double>(z.dim(0));
                    const std::size_t n = z.dim(1);
                    for (std::size_t r = 0; r < z.dim(0); ++r) {
                      double* dst = gin[0]->raw() + r * n;
                      for (std::size_t c = 0; c < n; ++c) {
                        const double onehot = static_cast<std::size_t>(labels[r]) == c ? 1.0 : 0.0;
                        dst[c] += s * (p[r * n + c] - onehot);
                      }
                    }
                  });
}

Var kl_to_logits(Graph& g, const Tensor& targets, Var logits) {
  const double loss = ops::kl_to_logits(targets, g.value(logits));
  return g.record(Tensor::scalar(loss), {logits},
                  [targets](const Tensor&, const Tensor& gy, std::span<const Tensor* const> in,
                            std::span<Tensor* const> gin) {
                    const Tensor& z = *in[0];
                    const Tensor p = ops::softmax_with_temperature(z, 1.0);
                    const double s = gy[0] / static_cast<double>(z.dim(0));
                    const std::size_t n = z.dim(1);
                    for (std::size_t r = 0; r < z.dim(0); ++r) {
                      double mass = 0.0;
                      for (std::size_t c = 0; c < n; ++c) mass += targets[r * n + c];
                      double* dst = gin[0]->raw() + r * n;
                      for (std::size_t c = 0; c < n; ++c) dst[c] += s * (p[r * n + c] * mass - targets[r * n + c]);
                    }
                  });
}

Var add(Graph& g, Var a, Var b) {
  return g.record(ops::add(g.value(a), g.value(b)), {a, b},
                  [](const Tensor&, const Tensor& gy, std::span<const Tensor* const>, std::span<Tensor* const> gin) {
                    for (Tensor* dst : gin) {
                      if (!dst) continue;
                      for (std::size_t i = 0; i < gy.numel(); ++i) (*dst)[i] += gy[i];
                    }
                  });
}

Var scale(Graph& g, Var a, double s) {
  return g.record(ops::scale(g.value(a), s), {a},
                  [s](const Tensor&, const Tensor& gy, std::span<const Tensor* const>, std::span<Tensor* const> gin) {
                    for (std::size_t i = 0; i < gy.numel(); ++i) (*gin[0])[i] += s * gy[i];
                  });
}

Var sum(Graph& g, Var a) {
  double s = 0.0;
  for (double v : g.value(a).data()) s += v;
  return g.record(Tensor::scalar(s), {a},
                  [](const Tensor&, const Tensor& gy, std::span<const Tensor* const>, std::span<Tensor* const> gin) {
                    for (double& v : gin[0]->data()) v += gy[0];
                  });
}

Var sum_squares(Graph& g, Var a) {
  double s = 0.0;
  for (double v : g.value(a).data()) s += v * v;
  return g.record(Tensor::scalar(s), {a},
                  [](const Tensor&, const Tensor& gy, std::span<const Tensor* const> in, std::span<Tensor* const> gin) {
                    for (std::size_t i = 0; i < in[0]->numel(); ++i) (*gin[0])[i] += 2.0 * (*in[0])[i] * gy[0];
                  });
}

}  // namespace ag

Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw ParameterError("finite-difference step must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace dssl
