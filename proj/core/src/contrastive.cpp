#include "dssl/contrastive.hpp"

#include <cmath>
#include <cstring>
#include <numeric>

#include "dssl/errors.hpp"
#include "dssl/ops.hpp"

namespace dssl {

void TrainConfig::validate() const {
  if (!(tau > 0.0)) throw ParameterError("tau must be positive");
  if (!(distill_tau > 0.0)) throw ParameterError("distill_tau must be positive");
  if (!(m >= 0.0 && m < 1.0)) throw ParameterError("momentum coefficient m must lie in [0,1)");
  if (!(lambda >= 0.0)) throw ParameterError("lambda must be non-negative");
  if (batch == 0 || queue == 0) throw ParameterError("batch and queue sizes must be positive");
  if (queue % batch != 0) throw ParameterError("queue size must be a multiple of the batch size");
  if (!(lr >= 0.0)) throw ParameterError("lr must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("optimizer momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0)) throw ParameterError("weight_decay must be non-negative");
}

KeyQueue::KeyQueue(std::size_t capacity, std::size_t dim)
    : capacity_(capacity), dim_(dim), rows_({capacity, dim}) {
  if (capacity == 0 || dim == 0) throw ParameterError("key queue capacity and dimension must be positive");
}

void KeyQueue::push(const Tensor& keys) {
  if (keys.rank() != 2 || keys.dim(1) != dim_) {
    throw DimensionError("queue expects N×" + std::to_string(dim_) + " keys, got " + shape_to_string(keys.shape()));
  }
  const std::size_t n = keys.dim(0);
  if (n == 0 || capacity_ % n != 0) {
    throw ContractError("push of " + std::to_string(n) + " keys does not divide queue capacity " +
                        std::to_string(capacity_));
  }
  for (std::size_t r = 0; r < n; ++r) {
    double ss = 0.0;
    for (double v : keys.row(r)) ss += v * v;
    if (std::abs(std::sqrt(ss) - 1.0) > kNormTolerance) {
      throw ContractError("queue key " + std::to_string(r) + " is not unit-norm (norm " +
                          std::to_string(std::sqrt(ss)) + ")");
    }
  }
  for (std::size_t r = 0; r < n; ++r) {
    std::memcpy(rows_.raw() + ((ptr_ + r) % capacity_) * dim_, keys.raw() + r * dim_, dim_ * sizeof(double));
  }
  ptr_ = (ptr_ + n) % capacity_;
  filled_ = std::min(capacity_, filled_ + n);
}

KeyQueue KeyQueue::restore(Tensor rows, std::size_t ptr, std::size_t filled) {
  if (rows.rank() != 2) throw DimensionError("queue rows must be rank 2");
  KeyQueue q(rows.dim(0), rows.dim(1));
  if (ptr >= q.capacity_ || filled > q.capacity_) throw ContractError("queue pointer out of range");
  for (std::size_t r = 0; r < filled; ++r) {
    double ss = 0.0;
    for (double v : rows.row(r)) ss += v * v;
    if (std::abs(std::sqrt(ss) - 1.0) > kNormTolerance) throw ContractError("restored queue row is not unit-norm");
  }
  q.rows_ = std::move(rows);
  q.ptr_ = ptr;
  q.filled_ = filled;
  return q;
}

MoCoState make_moco_state(const EncoderConfig& enc, const AugmentConfig& aug, const TrainConfig& cfg) {
  enc.validate();
  aug.validate();
  cfg.validate();
  MoCoState s;
  s.encoder = enc;
  s.augment = aug;
  s.cfg = cfg;
  Rng rng = Rng::derive({cfg.seed, static_cast<std::uint64_t>(Stream::kInit)});
  s.query = init_encoder(enc, rng);
  s.key = s.query;
  s.queue = KeyQueue(cfg.queue, enc.d);
  return s;
}

void momentum_update(EncoderParams& key, const EncoderParams& query, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw ParameterError("momentum coefficient must lie in [0,1]");
  if (!same_architecture(key, query)) throw ContractError("momentum_update: key and query shapes differ");
  auto blend = [m](ParamSet& k, const ParamSet& q) {
    for (auto& [name, p] : k) {
      if (p.frozen) continue;
      const Tensor& qv = q.at(name).value;
      for (std::size_t i = 0; i < p.value.numel(); ++i) p.value[i] = m * p.value[i] + (1.0 - m) * qv[i];
    }
  };
  blend(key.backbone, query.backbone);
  blend(key.head, query.head);
}

double info_nce_loss(const Tensor& q, const Tensor& k_plus, const KeyQueue& queue, double tau) {
  const Tensor logits = ops::key_logits(q, k_plus, queue.keys(), tau);
  const std::vector<int> zeros(q.dim(0), 0);
  return ops::cross_entropy(logits, zeros);
}

Var info_nce_loss(Graph& g, Var q, const Tensor& k_plus, const KeyQueue& queue, double tau) {
  Var logits = ag::key_logits(g, q, k_plus, queue.keys(), tau);
  return ag::cross_entropy(g, logits, std::vector<int>(g.value(q).dim(0), 0));
}

std::vector<std::size_t> sample_batch_indices(std::size_t n, std::size_t batch, std::uint64_t seed) {
  if (batch > n) {
    throw ParameterError("batch size " + std::to_string(batch) + " exceeds dataset size " + std::to_string(n));
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < batch; ++i) {
    std::swap(idx[i], idx[i + static_cast<std::size_t>(rng.uniform_int(n - i))]);
  }
  idx.resize(batch);
  return idx;
}

std::vector<Frame> gather_frames(std::span<const Frame> frames, std::span<const std::size_t> indices) {
  std::vector<Frame> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(frames[i]);
  return out;
}

std::uint64_t step_seed(std::uint64_t run_seed, std::size_t step) {
  return mix_seed({run_seed, static_cast<std::uint64_t>(Stream::kStep), step});
}

std::uint64_t warmup_seed(std::uint64_t run_seed, std::size_t batch_index) {
  return mix_seed({run_seed, static_cast<std::uint64_t>(Stream::kWarmup), batch_index});
}

void warm_up_queue(MoCoState& state, std::span<const Frame> dataset) {
  const std::size_t batches = state.cfg.queue / state.cfg.batch;
  for (std::size_t j = 0; j < batches; ++j) {
    const std::uint64_t seed = warmup_seed(state.cfg.seed, j);
    const auto idx = sample_batch_indices(dataset.size(), state.cfg.batch, seed);
    const auto frames = gather_frames(dataset, idx);
    const Tensor view = make_view_batch(frames, state.augment, seed, 1);
    state.queue.push(encode(state.key, state.encoder, view));
  }
}

double moco_train_step(MoCoState& state, std::span<const Frame> batch, std::uint64_t seed) {
  const auto views = detail::make_step_views(batch, state.augment, seed);
  return detail::contrastive_update(state, views, nullptr).con;
}

namespace detail {

StepViews make_step_views(std::span<const Frame> batch, const AugmentConfig& aug, std::uint64_t seed) {
  return StepViews{make_view_batch(batch, aug, seed, 0), make_view_batch(batch, aug, seed, 1)};
}

StepOutcome contrastive_update(MoCoState& state, const StepViews& views, const ExtraLossFn& extra) {
  if (views.query_view.dim(0) != state.cfg.batch) {
    throw ContractError("step batch has " + std::to_string(views.query_view.dim(0)) + " frames, expected " +
                        std::to_string(state.cfg.batch));
  }
  if (!state.queue.warmed()) throw ContractError("key queue must be warmed before training");

  StepOutcome out;
  out.k_plus = encode(state.key, state.encoder, views.key_view);

  Graph g;
  Var q = encode(g, state.query, state.encoder, views.query_view);
  Var logits = ag::key_logits(g, q, out.k_plus, state.queue.keys(), state.cfg.tau);
  Var con = ag::cross_entropy(g, logits, std::vector<int>(state.cfg.batch, 0));
  out.con = g.value(con).item();
  Var total = con;
  if (extra) {
    ExtraTerm t = extra(g, q, logits, out.k_plus);
    out.extra = t.unweighted;
    if (t.present) total = ag::add(g, con, t.term);
  }
  out.total = g.value(total).item();

  g.backward(total);
  sgd_step(state.query.backbone, state.cfg.sgd());
  sgd_step(state.query.head, state.cfg.sgd());
  momentum_update(state.key, state.query, state.cfg.m);
  state.queue.push(out.k_plus);
  ++state.step_count;
  return out;
}

}  // namespace detail
}  // namespace dssl
