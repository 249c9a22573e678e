#pragma once

#include <cstdint>
#include <span>

#include "dssl/checkpoint.hpp"
#include "dssl/contrastive.hpp"

namespace dssl {

/// Teacher built from a generic-domain checkpoint. Both backbones are frozen by default, so
/// adaptation only moves the projection heads.
struct TeacherState {
  MoCoState moco;
  bool backbone_frozen = true;
};

/// Probability vector over {positive key, queue keys}; rank 1 for one query or B×(M+1) rows.
struct SimilarityDistribution {
  Tensor probs;
};

// Teacher query and key both start from the checkpoint's "query" encoder (or the checkpoint's
// "key" tensors when `prefix` says so). Validation happens before anything is assigned.
TeacherState init_teacher(const Checkpoint& generic, const EncoderConfig& enc, const AugmentConfig& aug,
                          const TrainConfig& cfg, const std::string& prefix = "query");

// Adapted teacher saved by moco_checkpoint: query and key are restored separately, backbones frozen.
TeacherState restore_teacher(const Checkpoint& adapted, const AugmentConfig& aug, const TrainConfig& cfg);

void set_backbone_frozen(TeacherState& teacher, bool frozen);

// MoCo step on the teacher; with frozen backbones only the heads receive gradients.
double teacher_adapt_step(TeacherState& teacher, std::span<const Frame> batch, std::uint64_t seed);

// Softmax over [sim(q,k+), sim(q,k_1..M)] / τ. No gradients: teacher targets are constants.
SimilarityDistribution soft_targets(const Tensor& q_t, const Tensor& k_t_plus, const KeyQueue& teacher_queue,
                                    double tau);

// Σ_i p_t,i ln(p_t,i / p_s,i) with 0·ln 0 = 0, averaged over rows.
double kl_distillation_loss(const SimilarityDistribution& p_t, const SimilarityDistribution& p_s);

// Warms the student and teacher queues from one sample stream so that slot i of both queues
// holds embeddings of the same raw frame.
void warm_up_queues(MoCoState& student, TeacherState& teacher, std::span<const Frame> dataset);

struct DistillStepResult {
  double con = 0.0;
  double dis = 0.0;
  double total = 0.0;
};

// L = L_con + λ·L_dis. Both models see the same augmented views; the student's and teacher's
// positive keys are pushed to their queues at the same slot.
DistillStepResult distilled_train_step(MoCoState& student, TeacherState& teacher, std::span<const Frame> batch,
                                       std::uint64_t seed);

}  // namespace dssl
