#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dfr/models.hpp"
#include "dfr/tensor.hpp"

namespace dfr {

enum class MatchNorm { L1, SquaredL2 };

// Configuration for inverting a frozen teacher into a generator. Each outer
// iteration draws fresh noise, applies k_inner generator updates against the
// mismatch-plus-entropy objective, then one auxiliary update toward the
// teacher. Both nets train with Adam; the milestone schedule applies to both
// learning rates on the epoch index.
struct GenTrainConfig {
    int epochs = 30;
    int steps_per_epoch = 10;
    int batch_size = 64;
    int k_inner = 5;           // generator updates per auxiliary update
    float alpha = 0.01f;       // generator lr
    float beta = 0.001f;       // auxiliary lr
    float entropy_weight = 1.0f;
    MatchNorm match_norm = MatchNorm::L1;
    std::vector<int> lr_milestones;
    float lr_factor = 0.1f;
    int noise_dim = 8;
    std::vector<int> hidden{32, 32};
    uint64_t seed = 0;

    void validate() const;
};

// Generated stand-ins for old-class data: samples, their argmax labels under
// the teacher, and the teacher's prediction entropy per sample.
struct ReplayBatch {
    Tensor samples;  // [count x input_dim], detached
    std::vector<int> labels;
    std::vector<float> teacher_entropy;

    size_t size() const { return labels.size(); }
};

// Per-sample Shannon entropy (nats) of probability rows, in [0, ln C].
// Differentiable; 0*log 0 contributes 0. Rows must sum to 1 within 1e-5 with
// non-negative entries.
Tensor shannon_entropy(const Tensor& probabilities);

// Mean-over-batch squared-L2 distance between teacher and auxiliary logit
// rows. Freeze the teacher so gradient reaches the auxiliary side only.
Tensor aux_loss(const Tensor& teacher_logits, const Tensor& aux_logits);

// -match_distance - entropy_weight * mean entropy of the teacher's
// predictions. With entropy_weight = 0 and SquaredL2 this is exactly the
// negated aux_loss. teacher_probs must be softmax(teacher_logits).
Tensor gen_loss(const Tensor& teacher_logits, const Tensor& aux_logits,
                const Tensor& teacher_probs, const GenTrainConfig& cfg);

struct GenEpochStats {
    int epoch = 0;
    double mean_gen_loss = 0.0;
    double mean_aux_loss = 0.0;
};

using GenEpochHook =
    std::function<void(const GenEpochStats&, const GeneratorModel&, const AuxiliaryModel&)>;

// Alternating generator/auxiliary training against a frozen teacher. The
// teacher's parameters are bit-identical before and after. Non-finite losses
// abort with a NumericError naming the epoch/step and loss values.
std::pair<GeneratorModel, AuxiliaryModel> train_generator(const ClassifierModel& teacher,
                                                          const GenTrainConfig& cfg,
                                                          const GenEpochHook& hook = nullptr);

// Draw `count` samples from fresh noise, label them by the teacher's argmax
// (ties toward the lowest class id) and record per-sample teacher entropy.
ReplayBatch sample_replay(const GeneratorModel& gen, const ClassifierModel& teacher, int count,
                          uint64_t seed);

// One row per sample: label, entropy, then the flattened sample values.
void dump_replay_csv(const ReplayBatch& batch, const std::string& path);

}  // namespace dfr
