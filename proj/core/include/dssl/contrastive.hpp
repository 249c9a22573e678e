#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dssl/augment.hpp"
#include "dssl/encoder.hpp"
#include "dssl/optim.hpp"

namespace dssl {

struct TrainConfig {
  double tau = 0.07;
  double m = 0.999;
  double lambda = 5.0;
  double distill_tau = 0.07;
  std::size_t batch = 32;
  std::size_t queue = 256;
  double lr = 0.03;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t steps = 500;
  std::uint64_t seed = 7;

  void validate() const;
  SgdConfig sgd() const { return SgdConfig{lr, momentum, weight_decay}; }
};

/// Fixed-capacity FIFO ring of unit-norm keys. Oldest rows are overwritten first.
class KeyQueue {
 public:
  static constexpr double kNormTolerance = 1e-6;

  KeyQueue() = default;
  KeyQueue(std::size_t capacity, std::size_t dim);

  // keys: N×d with N dividing the capacity; rows [ptr, ptr+N) are overwritten in order.
  void push(const Tensor& keys);

  const Tensor& keys() const noexcept { return rows_; }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t ptr() const noexcept { return ptr_; }
  std::size_t filled() const noexcept { return filled_; }
  bool warmed() const noexcept { return capacity_ > 0 && filled_ == capacity_; }

  // Restores a persisted queue; every row must already be unit-norm.
  static KeyQueue restore(Tensor rows, std::size_t ptr, std::size_t filled);

 private:
  std::size_t capacity_ = 0;
  std::size_t dim_ = 0;
  std::size_t ptr_ = 0;
  std::size_t filled_ = 0;
  Tensor rows_;
};

struct MoCoState {
  EncoderConfig encoder;
  AugmentConfig augment;
  TrainConfig cfg;
  EncoderParams query;
  EncoderParams key;
  KeyQueue queue;
  std::size_t step_count = 0;
};

// Query drawn from the run seed; key starts as a bitwise copy of the query.
MoCoState make_moco_state(const EncoderConfig& enc, const AugmentConfig& aug, const TrainConfig& cfg);

// θ_k <- m·θ_k + (1−m)·θ_q for backbone and head. Frozen key parameters are left alone.
void momentum_update(EncoderParams& key, const EncoderParams& query, double m);

// Batch mean of −log softmax([q·k+, q·k_1, …, q·k_M] / τ)[0].
double info_nce_loss(const Tensor& q, const Tensor& k_plus, const KeyQueue& queue, double tau);
Var info_nce_loss(Graph& g, Var q, const Tensor& k_plus, const KeyQueue& queue, double tau);

// N distinct indices in [0, n), drawn from `seed`.
std::vector<std::size_t> sample_batch_indices(std::size_t n, std::size_t batch, std::uint64_t seed);
std::vector<Frame> gather_frames(std::span<const Frame> frames, std::span<const std::size_t> indices);

// Seeds of the i-th training step and the j-th warm-up batch of a run.
std::uint64_t step_seed(std::uint64_t run_seed, std::size_t step);
std::uint64_t warmup_seed(std::uint64_t run_seed, std::size_t batch_index);

// Fills the queue with key-encoder embeddings of capacity/N warm-up batches.
void warm_up_queue(MoCoState& state, std::span<const Frame> dataset);

// One step: views, InfoNCE, SGD on the query, momentum update, queue push. Returns L_con.
double moco_train_step(MoCoState& state, std::span<const Frame> batch, std::uint64_t seed);

namespace detail {

struct StepViews {
  Tensor query_view;
  Tensor key_view;
};
StepViews make_step_views(std::span<const Frame> batch, const AugmentConfig& aug, std::uint64_t seed);

// Extra term added to L_con: receives the student query embedding, its InfoNCE logits and the
// positive keys; returns the weighted term to add, or nullopt-like {false} to add nothing.
struct ExtraTerm {
  Var term{};
  bool present = false;
  double unweighted = 0.0;
};
using ExtraLossFn = std::function<ExtraTerm(Graph& g, Var q, Var logits, const Tensor& k_plus)>;

struct StepOutcome {
  double con = 0.0;
  double extra = 0.0;
  double total = 0.0;
  Tensor k_plus;
};

StepOutcome contrastive_update(MoCoState& state, const StepViews& views, const ExtraLossFn& extra);

}  // namespace detail
}  // namespace dssl
