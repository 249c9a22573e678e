#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dssl/tensor.hpp"

namespace dssl {

/// A trainable tensor with its gradient slot and optimizer state.
struct Param {
  Tensor value;
  Tensor grad;      // same shape as value
  Tensor velocity;  // SGD momentum buffer
  bool frozen = false;
};

/// Named parameters in deterministic (lexicographic) order.
class ParamSet {
 public:
  using Map = std::map<std::string, Param>;

  Param& add(const std::string& name, Tensor value);
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const noexcept { return params_.size(); }
  std::vector<std::string> names() const;

  void zero_grad();
  void set_frozen(bool frozen);
  // Total parameter count.
  std::size_t numel() const;

  Map::iterator begin() { return params_.begin(); }
  Map::iterator end() { return params_.end(); }
  Map::const_iterator begin() const { return params_.begin(); }
  Map::const_iterator end() const { return params_.end(); }

 private:
  Map params_;
};

struct Var {
  std::size_t id = 0;
};

/// Tape for reverse-mode differentiation over the fixed op set below.
class Graph {
 public:
  // in_values/in_grads are parallel to the recorded inputs; an in_grads entry is null when that
  // input does not need a gradient.
  using BackwardFn = std::function<void(const Tensor& out_value, const Tensor& out_grad,
                                        std::span<const Tensor* const> in_values,
                                        std::span<Tensor* const> in_grads)>;

  Var constant(Tensor value);
  // Differentiable input that is not a parameter; read its gradient via grad().
  Var leaf(Tensor value);
  // Frozen parameters enter as constants and never receive gradient writes.
  Var param(Param& p);
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn fn);

  const Tensor& value(Var v) const;
  // Zero tensor of the value's shape when nothing flowed into v.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and accumulates into every reachable parameter's grad slot.
  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<Var> inputs;
    BackwardFn fn;
    Param* sink = nullptr;
    bool requires_grad = false;
  };
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
};

// Differentiable counterparts of dssl::ops.
namespace ag {

Var affine(Graph& g, Var x, Var W, Var b);
Var conv2d(Graph& g, Var x, Var kernels, std::size_t stride, std::size_t pad);
Var relu(Graph& g, Var x);
Var global_avg_pool(Graph& g, Var x);
Var l2_normalize(Graph& g, Var v, double eps);
Var softmax_with_temperature(Graph& g, Var z, double tau);
// Gradient flows to q only; k_plus and queue are detached constants.
Var key_logits(Graph& g, Var q, const Tensor& k_plus, const Tensor& queue, double tau);
Var cross_entropy(Graph& g, Var logits, std::vector<int> labels);
// Mean over rows of KL(targets || softmax(logits)); targets are constants.
Var kl_to_logits(Graph& g, const Tensor& targets, Var logits);
Var add(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, double s);
Var sum(Graph& g, Var a);
Var sum_squares(Graph& g, Var a);

}  // namespace ag

/// Central differences (f(x+h·e_i) − f(x−h·e_i)) / (2h) for every coordinate of x.
Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);

}  // namespace dssl
