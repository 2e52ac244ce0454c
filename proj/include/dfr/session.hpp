#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dfr/datasets.hpp"
#include "dfr/metrics.hpp"
#include "dfr/models.hpp"
#include "dfr/optim.hpp"
#include "dfr/replay.hpp"

namespace dfr {

struct AblationFlags {
    bool entropy_regularization = true;  // ER: entropy term in generator training
    bool relabel = true;                 // RL: argmax labels vs. soft-target distillation
    bool backbone_finetune = true;       // BF: backbone updates during incremental sessions
};

struct ProtocolConfig {
    // model
    std::vector<int> backbone_hidden{32, 32};
    int feature_dim = 16;
    float cosine_scale = 16.0f;

    // base session
    int base_epochs = 40;
    float base_lr = 0.1f;
    int base_batch = 32;
    std::vector<int> base_milestones{25, 35};
    float base_lr_factor = 0.1f;
    float momentum = 0.9f;

    // incremental sessions: old parameters fine-tune at lambda1, the new
    // head trains at lambda2
    int incremental_epochs = 40;
    int incremental_batch = 16;
    float lambda1 = 1e-4f;
    float lambda2 = 0.1f;
    std::vector<int> incremental_milestones{10, 30};
    float incremental_lr_factor = 0.1f;

    // replay budget per epoch; 0 disables replay (fine-tune-only baseline)
    int replay_count = 25;

    AblationFlags ablation;
    // used only when ablation.relabel == false (soft-target distillation arm)
    float kd_weight = 1.0f;
    float kd_temperature = 2.0f;

    GenTrainConfig gen_cfg;
    uint64_t seed = 0;

    void validate(int input_dim) const;
    std::vector<int> backbone_widths(int input_dim) const;
};

// Audit record of one incremental session.
struct SessionRun {
    int session_index = 0;
    int heads_before = 0;
    int heads_after = 0;
    uint64_t model_before_hash = 0;
    uint64_t model_after_hash = 0;
    // real + generated example counts per class, aggregated over epochs
    std::map<int, int> merged_class_counts;
    // generated-sample argmax labels, aggregated over epochs
    std::map<int, int> replay_histogram;
};

struct StepInfo {
    int session_index = 0;
    int epoch = 0;
    int step = 0;
    std::vector<std::string> loss_terms;  // e.g. {"cross_entropy"} or +"kd_kl"
    double loss_value = 0.0;
    // primitive op counts of the recorded loss graph, for structural checks
    std::map<std::string, int> loss_graph_ops;
};

using StepHook = std::function<void(const StepInfo&)>;
// Called after each completed session; `run` is null for the base session.
using SessionHook =
    std::function<void(int session_index, const ClassifierModel& model, const SessionRun* run)>;

// Plain-SGD-style partitioned update: parameters that existed before this
// session move at lambda1, the new head at lambda2. With backbone_finetune
// off the backbone is excluded from the lambda1 group and its grads are
// discarded each step.
class TwoTierOptimizer {
public:
    TwoTierOptimizer(const ClassifierModel& model, float lambda1, float lambda2, float momentum,
                     bool backbone_finetune);

    void set_lrs(float lr_old, float lr_new);
    void step();

private:
    std::optional<Optimizer> old_opt_;  // absent when the old group is empty
    std::optional<Optimizer> new_opt_;
    ParameterSet discard_grads_;  // backbone when frozen
};

// Cross-entropy training of a fresh cosine-head classifier on the base
// session (SGD with momentum, milestone schedule). Needs >= 2 classes.
ClassifierModel base_train(const SessionDataset& base, const ProtocolConfig& cfg,
                           const StepHook& hook = nullptr);

// Union of novel data and re-labeled replay pairs. Replay labels must be
// disjoint from the novel session's label space. Provenance is retained.
SessionDataset merge_dataset(const SessionDataset& novel, const ReplayBatch& replay);

// One full incremental session: train a generator against the old model
// (when replay_count > 0), expand the head for the novel classes, then
// fine-tune on the merged data with the two-tier update. Fresh replay
// samples are drawn every epoch.
std::pair<ClassifierModel, SessionRun> incremental_step(const ClassifierModel& old_model,
                                                        const SessionDataset& novel,
                                                        const ProtocolConfig& cfg,
                                                        const StepHook& hook = nullptr);

// Base training followed by one incremental_step per session, evaluating
// cumulative top-1 accuracy after each. On failure the partially filled
// report is stored in *partial (when given) before the error propagates.
SessionReport run_protocol(const std::vector<SessionDataset>& sessions,
                           const std::vector<SessionDataset>& cumulative_tests,
                           const ProtocolConfig& cfg, const SessionHook& session_hook = nullptr,
                           const StepHook& step_hook = nullptr,
                           SessionReport* partial = nullptr);

}  // namespace dfr
