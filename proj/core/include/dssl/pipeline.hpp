#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "dssl/data.hpp"
#include "dssl/distill.hpp"

namespace dssl {

struct StepLog {
  std::size_t step = 0;
  double con = 0.0;
  double dis = 0.0;
  double total = 0.0;
};

using ProgressFn = std::function<void(const StepLog&)>;

// Frames of training step `step`: cfg.batch distinct indices drawn from (seed, step).
std::vector<Frame> training_batch(const Dataset& data, const TrainConfig& cfg, std::size_t step);

// Plain MoCo; warms the queue first when it is not yet full.
std::vector<StepLog> train_moco(MoCoState& state, const Dataset& data, std::size_t steps,
                                const ProgressFn& progress = {});

// Head-only contrastive adaptation of a teacher (or full training with the freeze disabled).
std::vector<StepLog> adapt_teacher(TeacherState& teacher, const Dataset& data, std::size_t steps,
                                   const ProgressFn& progress = {});

// Distilled training. When the student queue is cold, both queues are reset and warmed together.
std::vector<StepLog> train_distilled(MoCoState& student, TeacherState& teacher, const Dataset& data,
                                     std::size_t steps, const ProgressFn& progress = {});

}  // namespace dssl
