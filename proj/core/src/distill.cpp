#include "dssl/distill.hpp"

#include "dssl/errors.hpp"
#include "dssl/ops.hpp"

namespace dssl {

TeacherState init_teacher(const Checkpoint& generic, const EncoderConfig& enc, const AugmentConfig& aug,
                          const TrainConfig& cfg, const std::string& prefix) {
  EncoderParams loaded = load_encoder(generic, prefix, enc);
  TeacherState t;
  t.moco = make_moco_state(enc, aug, cfg);
  t.moco.query = loaded;
  t.moco.key = std::move(loaded);
  set_backbone_frozen(t, true);
  return t;
}

TeacherState restore_teacher(const Checkpoint& adapted, const AugmentConfig& aug, const TrainConfig& cfg) {
  if (!adapted.meta.contains("encoder")) {
    throw CheckpointError(CheckpointError::Kind::kManifest, "teacher checkpoint has no encoder description");
  }
  const EncoderConfig enc = encoder_config_from_json(adapted.meta["encoder"]);
  EncoderParams query = load_encoder(adapted, "query", enc);
  EncoderParams key = load_encoder(adapted, "key", enc);
  TeacherState t;
  t.moco = make_moco_state(enc, aug, cfg);
  t.moco.query = std::move(query);
  t.moco.key = std::move(key);
  set_backbone_frozen(t, true);
  return t;
}

void set_backbone_frozen(TeacherState& teacher, bool frozen) {
  teacher.backbone_frozen = frozen;
  teacher.moco.query.backbone.set_frozen(frozen);
  teacher.moco.key.backbone.set_frozen(frozen);
}

double teacher_adapt_step(TeacherState& teacher, std::span<const Frame> batch, std::uint64_t seed) {
  return moco_train_step(teacher.moco, batch, seed);
}

SimilarityDistribution soft_targets(const Tensor& q_t, const Tensor& k_t_plus, const KeyQueue& teacher_queue,
                                    double tau) {
  // Logits are computed at τ = 1 and tempered inside the softmax.
  const Tensor sims = ops::key_logits(q_t, k_t_plus, teacher_queue.keys(), 1.0);
  return SimilarityDistribution{ops::softmax_with_temperature(sims, tau)};
}

double kl_distillation_loss(const SimilarityDistribution& p_t, const SimilarityDistribution& p_s) {
  return ops::kl_divergence(p_t.probs, p_s.probs);
}

void warm_up_queues(MoCoState& student, TeacherState& teacher, std::span<const Frame> dataset) {
  if (student.cfg.queue != teacher.moco.cfg.queue || student.cfg.batch != teacher.moco.cfg.batch) {
    throw ContractError("student and teacher queues must share capacity and batch size");
  }
  const std::size_t batches = student.cfg.queue / student.cfg.batch;
  for (std::size_t j = 0; j < batches; ++j) {
    const std::uint64_t seed = warmup_seed(student.cfg.seed, j);
    const auto idx = sample_batch_indices(dataset.size(), student.cfg.batch, seed);
    const auto frames = gather_frames(dataset, idx);
    const Tensor view = make_view_batch(frames, student.augment, seed, 1);
    student.queue.push(encode(student.key, student.encoder, view));
    teacher.moco.queue.push(encode(teacher.moco.key, teacher.moco.encoder, view));
  }
}

DistillStepResult distilled_train_step(MoCoState& student, TeacherState& teacher, std::span<const Frame> batch,
                                       std::uint64_t seed) {
  if (student.queue.ptr() != teacher.moco.queue.ptr() || student.queue.filled() != teacher.moco.queue.filled() ||
      student.queue.capacity() != teacher.moco.queue.capacity()) {
    throw ContractError("student and teacher queues are desynchronized");
  }
  const auto views = detail::make_step_views(batch, student.augment, seed);

  const Tensor q_t = encode(teacher.moco.query, teacher.moco.encoder, views.query_view);
  const Tensor k_t = encode(teacher.moco.key, teacher.moco.encoder, views.key_view);
  const double tau_d = student.cfg.distill_tau;
  const SimilarityDistribution p_t = soft_targets(q_t, k_t, teacher.moco.queue, tau_d);
  const double lambda = student.cfg.lambda;

  auto extra = [&](Graph& g, Var q, Var logits, const Tensor& k_plus) {
    Var student_logits =
        tau_d == student.cfg.tau ? logits : ag::key_logits(g, q, k_plus, student.queue.keys(), tau_d);
    Var dis = ag::kl_to_logits(g, p_t.probs, student_logits);
    detail::ExtraTerm t;
    t.unweighted = g.value(dis).item();
    if (lambda > 0.0) {
      t.term = ag::scale(g, dis, lambda);
      t.present = true;
    }
    return t;
  };
  const detail::StepOutcome out = detail::contrastive_update(student, views, extra);
  teacher.moco.queue.push(k_t);
  return DistillStepResult{out.con, out.extra, out.con + lambda * out.extra};
}

}  // namespace dssl
