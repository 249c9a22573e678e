#include "dssl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dssl/errors.hpp"

namespace dssl::ops {
namespace {

struct ConvGeometry {
  std::size_t batch, in_c, h, w, out_c, kh, kw, out_h, out_w;
  bool batched;
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& k, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ParameterError("conv2d stride must be positive");
  if (k.rank() != 4) throw DimensionError("conv2d kernels must be rank 4, got " + shape_to_string(k.shape()));
  ConvGeometry g{};
  if (x.rank() == 3) {
    g.batched = false;
    g.batch = 1;
    g.in_c = x.dim(0);
    g.h = x.dim(1);
    g.w = x.dim(2);
  } else if (x.rank() == 4) {
    g.batched = true;
    g.batch = x.dim(0);
    g.in_c = x.dim(1);
    g.h = x.dim(2);
    g.w = x.dim(3);
  } else {
    throw DimensionError("conv2d input must be C×H×W or B×C×H×W, got " + shape_to_string(x.shape()));
  }
  g.out_c = k.dim(0);
  g.kh = k.dim(2);
  g.kw = k.dim(3);
  if (k.dim(1) != g.in_c) {
    throw DimensionError("conv2d channel mismatch: input " + shape_to_string(x.shape()) + " vs kernels " +
                         shape_to_string(k.shape()));
  }
  if (g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw) {
    throw DimensionError("conv2d kernel " + shape_to_string(k.shape()) + " larger than padded input " +
                         shape_to_string(x.shape()) + " with pad " + std::to_string(pad));
  }
  g.out_h = (g.h + 2 * pad - g.kh) / stride + 1;
  g.out_w = (g.w + 2 * pad - g.kw) / stride + 1;
  return g;
}

void check_tau(double tau) {
  if (!(tau > 0.0)) throw ParameterError("temperature must be positive, got " + std::to_string(tau));
}

// log Σ exp(z_i) over one row, max-subtracted.
double log_sum_exp(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

void require_rows(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + " must be rank 2, got " + shape_to_string(t.shape()));
}

}  // namespace

Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b) {
  if (x.rank() != 2 || W.rank() != 2 || b.rank() != 1 || x.dim(1) != W.dim(0) || W.dim(1) != b.dim(0)) {
    throw DimensionError("affine shape mismatch: x " + shape_to_string(x.shape()) + ", W " +
                         shape_to_string(W.shape()) + ", b " + shape_to_string(b.shape()));
  }
  const std::size_t rows = x.dim(0), in = W.dim(0), out = W.dim(1);
  Tensor y({rows, out});
  for (std::size_t r = 0; r < rows; ++r) {
    double* yr = y.raw() + r * out;
    for (std::size_t c = 0; c < out; ++c) yr[c] = b[c];
    const double* xr = x.raw() + r * in;
    for (std::size_t k = 0; k < in; ++k) {
      const double xv = xr[k];
      const double* wk = W.raw() + k * out;
      for (std::size_t c = 0; c < out; ++c) yr[c] += xv * wk[c];
    }
  }
  return y;
}

Tensor conv2d(const Tensor& x, const Tensor& kernels, std::size_t stride, std::size_t pad) {
  const ConvGeometry g = conv_geometry(x, kernels, stride, pad);
  Tensor y = g.batched ? Tensor({g.batch, g.out_c, g.out_h, g.out_w}) : Tensor({g.out_c, g.out_h, g.out_w});
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(g.h), W = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t o = 0; o < g.out_c; ++o) {
      double* yo = y.raw() + (b * g.out_c + o) * g.out_h * g.out_w;
      for (std::size_t c = 0; c < g.in_c; ++c) {
        const double* xc = x.raw() + (b * g.in_c + c) * g.h * g.w;
        const double* kc = kernels.raw() + (o * g.in_c + c) * g.kh * g.kw;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            double acc = 0.0;
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= H) continue;
              for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= W) continue;
                acc += xc[iy * W + ix] * kc[ky * g.kw + kx];
              }
            }
            yo[oy * g.out_w + ox] += acc;
          }
        }
      }
    }
  }
  return y;
}

void conv2d_backward(const Tensor& x, const Tensor& kernels, std::size_t stride, std::size_t pad,
                     const Tensor& grad_out, Tensor* grad_x, Tensor* grad_kernels) {
  const ConvGeometry g = conv_geometry(x, kernels, stride, pad);
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(g.h), W = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t o = 0; o < g.out_c; ++o) {
      const double* go = grad_out.raw() + (b * g.out_c + o) * g.out_h * g.out_w;
      for (std::size_t c = 0; c < g.in_c; ++c) {
        const std::size_t x_off = (b * g.in_c + c) * g.h * g.w;
        const std::size_t k_off = (o * g.in_c + c) * g.kh * g.kw;
        const double* xc = x.raw() + x_off;
        const double* kc = kernels.raw() + k_off;
        double* gx = grad_x ? grad_x->raw() + x_off : nullptr;
        double* gk = grad_kernels ? grad_kernels->raw() + k_off : nullptr;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const double gv = go[oy * g.out_w + ox];
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= H) continue;
              for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= W) continue;
                if (gx) gx[iy * W + ix] += gv * kc[ky * g.kw + kx];
                if (gk) gk[ky * g.kw + kx] += gv * xc[iy * W + ix];
              }
            }
          }
        }
      }
    }
  }
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor global_avg_pool(const Tensor& x) {
  std::size_t batch = 1, channels = 0, spatial = 0;
  Tensor y;
  if (x.rank() == 3) {
    channels = x.dim(0);
    spatial = x.dim(1) * x.dim(2);
    y = Tensor({channels});
  } else if (x.rank() == 4) {
    batch = x.dim(0);
    channels = x.dim(1);
    spatial = x.dim(2) * x.dim(3);
    y = Tensor({batch, channels});
  } else {
    throw DimensionError("global_avg_pool expects C×H×W or B×C×H×W, got " + shape_to_string(x.shape()));
  }
  if (spatial == 0) throw DimensionError("global_avg_pool over empty spatial extent " + shape_to_string(x.shape()));
  for (std::size_t i = 0; i < batch * channels; ++i) {
    const double* src = x.raw() + i * spatial;
    double s = 0.0;
    for (std::size_t p = 0; p < spatial; ++p) s += src[p];
    y[i] = s / static_cast<double>(spatial);
  }
  return y;
}

Tensor l2_normalize(const Tensor& v, double eps) {
  if (!(eps > 0.0)) throw ParameterError("l2_normalize eps must be positive");
  if (v.rank() != 1 && v.rank() != 2) {
    throw DimensionError("l2_normalize expects rank 1 or 2, got " + shape_to_string(v.shape()));
  }
  const std::size_t rows = v.rank() == 1 ? 1 : v.dim(0);
  const std::size_t cols = v.rank() == 1 ? v.dim(0) : v.dim(1);
  Tensor y = v;
  for (std::size_t r = 0; r < rows; ++r) {
    double* yr = y.raw() + r * cols;
    double ss = 0.0;
    for (std::size_t c = 0; c < cols; ++c) ss += yr[c] * yr[c];
    const double denom = std::sqrt(ss) + eps;
    for (std::size_t c = 0; c < cols; ++c) yr[c] /= denom;
  }
  return y;
}

Tensor softmax_with_temperature(const Tensor& z, double tau) {
  check_tau(tau);
  if (z.rank() != 1 && z.rank() != 2) {
    throw DimensionError("softmax expects rank 1 or 2, got " + shape_to_string(z.shape()));
  }
  const std::size_t rows = z.rank() == 1 ? 1 : z.dim(0);
  const std::size_t cols = z.rank() == 1 ? z.dim(0) : z.dim(1);
  Tensor p(z.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* zr = z.raw() + r * cols;
    double* pr = p.raw() + r * cols;
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) m = std::max(m, zr[c] / tau);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      pr[c] = std::exp(zr[c] / tau - m);
      s += pr[c];
    }
    for (std::size_t c = 0; c < cols; ++c) pr[c] /= s;
  }
  return p;
}

Tensor log_softmax_rows(const Tensor& z) {
  require_rows(z, "log_softmax_rows input");
  Tensor out(z.shape());
  for (std::size_t r = 0; r < z.dim(0); ++r) {
    const double lse = log_sum_exp(z.row(r));
    auto zr = z.row(r);
    auto orow = out.row(r);
    for (std::size_t c = 0; c < zr.size(); ++c) orow[c] = zr[c] - lse;
  }
  return out;
}

Tensor key_logits(const Tensor& q, const Tensor& k_plus, const Tensor& queue, double tau) {
  check_tau(tau);
  require_rows(q, "query batch");
  require_rows(k_plus, "positive keys");
  require_rows(queue, "key queue");
  if (k_plus.shape() != q.shape() || queue.dim(1) != q.dim(1)) {
    throw DimensionError("key_logits shape mismatch: q " + shape_to_string(q.shape()) + ", k_plus " +
                         shape_to_string(k_plus.shape()) + ", queue " + shape_to_string(queue.shape()));
  }
  const std::size_t batch = q.dim(0), d = q.dim(1), m = queue.dim(0);
  Tensor logits({batch, m + 1});
  for (std::size_t b = 0; b < batch; ++b) {
    const double* qb = q.raw() + b * d;
    double* lb = logits.raw() + b * (m + 1);
    double pos = 0.0;
    for (std::size_t c = 0; c < d; ++c) pos += qb[c] * k_plus[b * d + c];
    lb[0] = pos / tau;
    for (std::size_t j = 0; j < m; ++j) {
      const double* kj = queue.raw() + j * d;
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += qb[c] * kj[c];
      lb[1 + j] = s / tau;
    }
  }
  return logits;
}

double cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rows(logits, "cross_entropy logits");
  if (labels.size() != logits.dim(0)) throw DimensionError("cross_entropy: label count differs from row count");
  const std::size_t n = logits.dim(1);
  double total = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= n) {
      throw ParameterError("cross_entropy label " + std::to_string(labels[r]) + " out of range");
    }
    total += log_sum_exp(logits.row(r)) - logits.row(r)[static_cast<std::size_t>(labels[r])];
  }
  return total / static_cast<double>(labels.size());
}

double kl_to_logits(const Tensor& targets, const Tensor& logits) {
  require_rows(logits, "kl logits");
  if (targets.shape() != logits.shape()) {
    throw ContractError("KL length mismatch: targets " + shape_to_string(targets.shape()) + " vs logits " +
                        shape_to_string(logits.shape()));
  }
  double total = 0.0;
  for (std::size_t r = 0; r < logits.dim(0); ++r) {
    const double lse = log_sum_exp(logits.row(r));
    auto p = targets.row(r);
    auto z = logits.row(r);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i] > 0.0) total += p[i] * (std::log(p[i]) - (z[i] - lse));
    }
  }
  return total / static_cast<double>(logits.dim(0));
}

double kl_divergence(const Tensor& p, const Tensor& q) {
  if (p.shape() != q.shape()) {
    throw ContractError("KL length mismatch: " + shape_to_string(p.shape()) + " vs " + shape_to_string(q.shape()));
  }
  if (p.rank() != 1 && p.rank() != 2) throw DimensionError("kl_divergence expects rank 1 or 2");
  const std::size_t rows = p.rank() == 1 ? 1 : p.dim(0);
  const std::size_t cols = p.rank() == 1 ? p.dim(0) : p.dim(1);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < cols; ++i) {
      const double pi = p[r * cols + i];
      if (pi > 0.0) total += pi * std::log(pi / q[r * cols + i]);
    }
  }
  return total / static_cast<double>(rows);
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add shape mismatch " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  Tensor y = a;
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += b[i];
  return y;
}

Tensor scale(const Tensor& a, double s) {
  Tensor y = a;
  for (double& v : y.data()) v *= s;
  return y;
}

}  // namespace dssl::ops
