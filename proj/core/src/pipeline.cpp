#include "dssl/pipeline.hpp"

namespace dssl {

std::vector<Frame> training_batch(const Dataset& data, const TrainConfig& cfg, std::size_t step) {
  const auto idx = sample_batch_indices(
      data.size(), cfg.batch, mix_seed({cfg.seed, static_cast<std::uint64_t>(Stream::kBatch), step}));
  return gather_frames(data.frames, idx);
}

std::vector<StepLog> train_moco(MoCoState& state, const Dataset& data, std::size_t steps, const ProgressFn& progress) {
  if (!state.queue.warmed()) warm_up_queue(state, data.frames);
  std::vector<StepLog> log;
  log.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const std::size_t step = state.step_count;
    const auto batch = training_batch(data, state.cfg, step);
    const double loss = moco_train_step(state, batch, step_seed(state.cfg.seed, step));
    log.push_back(StepLog{step, loss, 0.0, loss});
    if (progress) progress(log.back());
  }
  return log;
}

std::vector<StepLog> adapt_teacher(TeacherState& teacher, const Dataset& data, std::size_t steps,
                                   const ProgressFn& progress) {
  if (!teacher.moco.queue.warmed()) warm_up_queue(teacher.moco, data.frames);
  std::vector<StepLog> log;
  log.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const std::size_t step = teacher.moco.step_count;
    const auto batch = training_batch(data, teacher.moco.cfg, step);
    const double loss = teacher_adapt_step(teacher, batch, step_seed(teacher.moco.cfg.seed, step));
    log.push_back(StepLog{step, loss, 0.0, loss});
    if (progress) progress(log.back());
  }
  return log;
}

std::vector<StepLog> train_distilled(MoCoState& student, TeacherState& teacher, const Dataset& data,
                                     std::size_t steps, const ProgressFn& progress) {
  if (!student.queue.warmed()) {
    student.queue = KeyQueue(student.cfg.queue, student.encoder.d);
    teacher.moco.queue = KeyQueue(student.cfg.queue, teacher.moco.encoder.d);
    warm_up_queues(student, teacher, data.frames);
  }
  std::vector<StepLog> log;
  log.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const std::size_t step = student.step_count;
    const auto batch = training_batch(data, student.cfg, step);
    const auto r = distilled_train_step(student, teacher, batch, step_seed(student.cfg.seed, step));
    log.push_back(StepLog{step, r.con, r.dis, r.total});
    if (progress) progress(log.back());
  }
  return log;
}

}  // namespace dssl
