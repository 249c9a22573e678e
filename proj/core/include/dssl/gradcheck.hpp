#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dssl/tensor.hpp"

namespace dssl {

// ‖a − n‖₂ / max(‖a‖₂, ‖n‖₂, 1e-3). The floor keeps exactly-zero gradients from dividing by zero.
double gradient_relative_error(const Tensor& analytic, const Tensor& numeric);

struct GradcheckEntry {
  std::string name;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double tolerance = 1e-5;
  double step = 1e-6;
  double seconds = 0.0;

  bool passed() const;
};

// Compares every differentiable op, L_con, L_dis, L = L_con + λ·L_dis and a small end-to-end encoder
// against central differences on `instances` random draws each.
GradcheckReport run_gradcheck_suite(std::uint64_t seed, std::size_t instances = 100, double h = 1e-6);

}  // namespace dssl
