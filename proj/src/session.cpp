#include "dfr/session.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "dfr/checkpoint.hpp"
#include "dfr/json_io.hpp"
#include "dfr/util.hpp"

namespace dfr {

void ProtocolConfig::validate(int input_dim) const {
    if (input_dim <= 0) throw ContractError("ProtocolConfig: input_dim must be positive");
    if (feature_dim <= 0) throw ContractError("ProtocolConfig: feature_dim must be positive");
    if (cosine_scale <= 0.0f) throw ContractError("ProtocolConfig: cosine_scale must be positive");
    if (base_epochs <= 0 || incremental_epochs <= 0) {
        throw ContractError("ProtocolConfig: epoch counts must be positive");
    }
    if (base_batch <= 0 || incremental_batch <= 0) {
        throw ContractError("ProtocolConfig: batch sizes must be positive");
    }
    if (!(base_lr > 0.0f)) throw ContractError("ProtocolConfig: base_lr must be positive");
    if (!(lambda1 >= 0.0f) || !(lambda2 >= 0.0f)) {
        throw ContractError("ProtocolConfig: learning rates must be non-negative");
    }
    if (replay_count < 0) throw ContractError("ProtocolConfig: replay_count must be non-negative");
    if (!(kd_weight >= 0.0f)) throw ContractError("ProtocolConfig: kd_weight must be non-negative");
    if (!(kd_temperature > 0.0f)) {
        throw ContractError("ProtocolConfig: kd_temperature must be positive");
    }
    gen_cfg.validate();
}

std::vector<int> ProtocolConfig::backbone_widths(int input_dim) const {
    std::vector<int> widths;
    widths.push_back(input_dim);
    widths.insert(widths.end(), backbone_hidden.begin(), backbone_hidden.end());
    widths.push_back(feature_dim);
    return widths;
}

// ---- TwoTierOptimizer ----------------------------------------------------------

TwoTierOptimizer::TwoTierOptimizer(const ClassifierModel& model, float lambda1, float lambda2,
                                   float momentum, bool backbone_finetune) {
    ParameterSet old_group =
        backbone_finetune ? model.old_parameters() : model.old_head_parameters();
    if (!backbone_finetune) discard_grads_ = model.backbone_parameters();
    if (!old_group.empty()) {
        old_opt_ = Optimizer::sgd(std::move(old_group),
                                  SgdConfig{.lr = lambda1, .momentum = momentum});
    }
    ParameterSet new_group = model.new_head_parameters();
    if (new_group.empty()) throw ContractError("TwoTierOptimizer: model has no head");
    new_opt_ = Optimizer::sgd(std::move(new_group),
                              SgdConfig{.lr = lambda2, .momentum = momentum});
}

void TwoTierOptimizer::set_lrs(float lr_old, float lr_new) {
    if (old_opt_) old_opt_->set_lr(lr_old);
    new_opt_->set_lr(lr_new);
}

void TwoTierOptimizer::step() {
    discard_grads_.zero_grad_all();
    if (old_opt_) old_opt_->step();
    new_opt_->step();
}

// ---- training loops --------------------------------------------------------------

namespace {

std::vector<int> to_columns(const ClassifierModel& model, const std::vector<int>& labels) {
    std::vector<int> cols;
    cols.reserve(labels.size());
    for (int label : labels) {
        const int c = model.column_of(label);
        if (c < 0) {
            throw ContractError("training label " + std::to_string(label) +
                                " is not covered by the model");
        }
        cols.push_back(c);
    }
    return cols;
}

std::vector<std::vector<size_t>> minibatch_indices(size_t n, int batch_size, Rng& rng) {
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<std::vector<size_t>> batches;
    for (size_t start = 0; start < n; start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(n, start + static_cast<size_t>(batch_size));
        batches.emplace_back(order.begin() + static_cast<long>(start),
                             order.begin() + static_cast<long>(end));
    }
    return batches;
}

// Soft-target distillation term for the relabel-off arm: mean KL between the
// old model's temperature-softened predictions and the new model's softened
// predictions restricted to the old classes.
Tensor kd_kl_term(const ClassifierModel& old_model, const ClassifierModel& new_model,
                  const Tensor& samples, float temperature) {
    const int old_classes = old_model.total_classes();
    const int total = new_model.total_classes();
    const int batch = samples.shape()[0];

    // Old-model soft targets, constant w.r.t. the new model.
    ParameterSet old_params = old_model.parameters();
    double p_logp_sum = 0.0;
    Tensor p_const;
    {
        FreezeGuard freeze_old(old_params);
        const Tensor old_logits = old_model.forward(samples);
        const auto lv = old_logits.values();
        std::vector<float> p(static_cast<size_t>(batch) * old_classes);
        std::vector<float> scaled(static_cast<size_t>(old_classes));
        for (int i = 0; i < batch; ++i) {
            for (int j = 0; j < old_classes; ++j) {
                scaled[static_cast<size_t>(j)] =
                    lv[static_cast<size_t>(i) * old_classes + j] / temperature;
            }
            const auto row = softmax_double(scaled);
            for (int j = 0; j < old_classes; ++j) {
                p[static_cast<size_t>(i) * old_classes + j] = static_cast<float>(row[j]);
                if (row[j] > 0.0) p_logp_sum += row[j] * std::log(row[j]);
            }
        }
        p_const = Tensor::from_values({batch, old_classes}, std::move(p));
    }

    // New-model softened log-probabilities over the old columns (the first
    // old_classes columns, selected through a constant matrix).
    const Tensor new_logits = new_model.forward(samples);
    std::vector<float> sel(static_cast<size_t>(total) * old_classes, 0.0f);
    for (int j = 0; j < old_classes; ++j) sel[static_cast<size_t>(j) * old_classes + j] = 1.0f;
    const Tensor old_cols =
        matmul(new_logits, Tensor::from_values({total, old_classes}, std::move(sel)));
    const Tensor log_q = log_softmax(scale(old_cols, 1.0f / temperature));

    // KL = mean_i [ sum_j p log p - sum_j p log q ]
    const Tensor cross = scale(sum(mul(p_const, log_q)), -1.0f / static_cast<float>(batch));
    const Tensor const_t = Tensor::scalar(static_cast<float>(p_logp_sum / batch));
    return add(const_t, cross);
}

}  // namespace

ClassifierModel base_train(const SessionDataset& base, const ProtocolConfig& cfg,
                           const StepHook& hook) {
    if (base.empty()) throw ContractError("base_train: empty dataset");
    cfg.validate(base.feature_dim());
    if (base.class_ids().size() < 2) {
        throw ContractError("base_train: need at least 2 classes, got " +
                            std::to_string(base.class_ids().size()));
    }

    const std::vector<int> class_ids(base.class_ids().begin(), base.class_ids().end());
    ClassifierModel model(cfg.backbone_widths(base.feature_dim()), cfg.cosine_scale, class_ids,
                          derive_seed(cfg.seed, 1));

    Optimizer opt = Optimizer::sgd(model.parameters(),
                                   SgdConfig{.lr = cfg.base_lr, .momentum = cfg.momentum});
    Rng shuffle_rng(derive_seed(cfg.seed, 2));

    for (int epoch = 0; epoch < cfg.base_epochs; ++epoch) {
        opt.set_lr(lr_schedule(epoch, cfg.base_lr, cfg.base_milestones, cfg.base_lr_factor));
        const auto batches = minibatch_indices(base.size(), cfg.base_batch, shuffle_rng);
        for (size_t b = 0; b < batches.size(); ++b) {
            const Tensor x = base.features_tensor(batches[b]);
            const Tensor logits = model.forward(x);
            const Tensor loss = cross_entropy(logits, to_columns(model, base.labels(batches[b])));
            backward(loss);
            opt.step();
            if (hook) {
                hook(StepInfo{0, epoch, static_cast<int>(b), {"cross_entropy"},
                              static_cast<double>(loss.value()), graph_op_counts(loss)});
            }
        }
    }
    return model;
}

SessionDataset merge_dataset(const SessionDataset& novel, const ReplayBatch& replay) {
    if (novel.empty()) throw ContractError("merge_dataset: empty novel dataset");
    SessionDataset merged(novel.feature_shape(), novel.session_index());
    for (const auto& ex : novel.examples()) merged.add(ex.features, ex.label, ex.provenance);

    if (replay.size() == 0) return merged;
    for (int label : replay.labels) {
        if (novel.class_ids().count(label)) {
            throw ContractError("merge_dataset: replay label " + std::to_string(label) +
                                " collides with the novel session's class space");
        }
    }
    const int dim = replay.samples.shape()[1];
    if (dim != novel.feature_dim()) {
        throw ContractError("merge_dataset: replay sample dim " + std::to_string(dim) +
                            " does not match novel feature dim " +
                            std::to_string(novel.feature_dim()));
    }
    const auto sv = replay.samples.values();
    for (size_t i = 0; i < replay.size(); ++i) {
        std::vector<float> f(sv.begin() + static_cast<long>(i * static_cast<size_t>(dim)),
                             sv.begin() + static_cast<long>((i + 1) * static_cast<size_t>(dim)));
        merged.add(std::move(f), replay.labels[i], Provenance::Generated);
    }
    return merged;
}

std::pair<ClassifierModel, SessionRun> incremental_step(const ClassifierModel& old_model,
                                                        const SessionDataset& novel,
                                                        const ProtocolConfig& cfg,
                                                        const StepHook& hook) {
    if (novel.empty()) throw ContractError("incremental_step: empty novel dataset");
    cfg.validate(novel.feature_dim());
    const auto old_ids = old_model.class_column_ids();
    for (int cls : novel.class_ids()) {
        if (std::find(old_ids.begin(), old_ids.end(), cls) != old_ids.end()) {
            throw ContractError("incremental_step: class " + std::to_string(cls) +
                                " already learned in an earlier session");
        }
    }

    const int session = novel.session_index();
    const uint64_t session_seed = derive_seed(cfg.seed, 1000 + static_cast<uint64_t>(session));

    SessionRun run;
    run.session_index = session;
    run.heads_before = static_cast<int>(old_model.heads().size());
    run.model_before_hash = parameter_hash(old_model.parameters());

    // 1. Generator training against the frozen old model. The ER switch
    // only gates the entropy term.
    std::optional<GeneratorModel> gen;
    if (cfg.replay_count > 0) {
        GenTrainConfig gcfg = cfg.gen_cfg;
        if (!cfg.ablation.entropy_regularization) gcfg.entropy_weight = 0.0f;
        gcfg.seed = derive_seed(session_seed, 3);
        gen = train_generator(old_model, gcfg).first;
    }

    // 2. Head expansion for the novel classes.
    const std::vector<int> new_ids(novel.class_ids().begin(), novel.class_ids().end());
    ClassifierModel model = old_model.expand_head(new_ids, derive_seed(session_seed, 5));

    TwoTierOptimizer opt(model, cfg.lambda1, cfg.lambda2, cfg.momentum,
                         cfg.ablation.backbone_finetune);
    Rng shuffle_rng(derive_seed(session_seed, 7));

    for (int epoch = 0; epoch < cfg.incremental_epochs; ++epoch) {
        const float decay = lr_schedule(epoch, 1.0f, cfg.incremental_milestones,
                                        cfg.incremental_lr_factor);
        opt.set_lrs(cfg.lambda1 * decay, cfg.lambda2 * decay);

        // Fresh replay samples every epoch.
        std::optional<ReplayBatch> replay;
        if (gen) {
            replay = sample_replay(*gen, old_model, cfg.replay_count,
                                   derive_seed(session_seed, 100 + static_cast<uint64_t>(epoch)));
            const auto hist = replay_label_histogram(*replay, old_model.total_classes() +
                                                                  static_cast<int>(new_ids.size()));
            for (size_t c = 0; c < hist.size(); ++c) {
                if (hist[c] > 0) run.replay_histogram[static_cast<int>(c)] += hist[c];
            }
        }

        if (cfg.ablation.relabel) {
            // Re-labeled replay joins the novel data; cross-entropy is the
            // only loss term.
            const SessionDataset merged =
                replay ? merge_dataset(novel, *replay) : novel;
            for (const auto& [cls, n] : merged.class_histogram()) {
                run.merged_class_counts[cls] += n;
            }
            const auto batches = minibatch_indices(merged.size(), cfg.incremental_batch,
                                                   shuffle_rng);
            for (size_t b = 0; b < batches.size(); ++b) {
                const Tensor x = merged.features_tensor(batches[b]);
                const Tensor logits = model.forward(x);
                const Tensor loss =
                    cross_entropy(logits, to_columns(model, merged.labels(batches[b])));
                backward(loss);
                opt.step();
                if (hook) {
                    hook(StepInfo{session, epoch, static_cast<int>(b), {"cross_entropy"},
                                  static_cast<double>(loss.value()), graph_op_counts(loss)});
                }
            }
        } else {
            // Soft-target distillation arm: novel-data cross-entropy plus
            // kd_weight * KL on the generated batch.
            for (const auto& [cls, n] : novel.class_histogram()) {
                run.merged_class_counts[cls] += n;
            }
            const auto batches = minibatch_indices(novel.size(), cfg.incremental_batch,
                                                   shuffle_rng);
            for (size_t b = 0; b < batches.size(); ++b) {
                const Tensor x = novel.features_tensor(batches[b]);
                const Tensor logits = model.forward(x);
                Tensor loss = cross_entropy(logits, to_columns(model, novel.labels(batches[b])));
                std::vector<std::string> terms{"cross_entropy"};
                if (replay) {
                    const Tensor kd =
                        kd_kl_term(old_model, model, replay->samples, cfg.kd_temperature);
                    loss = add(loss, scale(kd, cfg.kd_weight));
                    terms.push_back("kd_kl");
                }
                backward(loss);
                opt.step();
                if (hook) {
                    hook(StepInfo{session, epoch, static_cast<int>(b), terms,
                                  static_cast<double>(loss.value()), graph_op_counts(loss)});
                }
            }
        }
    }

    run.heads_after = static_cast<int>(model.heads().size());
    run.model_after_hash = parameter_hash(model.parameters());
    return {std::move(model), std::move(run)};
}

SessionReport run_protocol(const std::vector<SessionDataset>& sessions,
                           const std::vector<SessionDataset>& cumulative_tests,
                           const ProtocolConfig& cfg, const SessionHook& session_hook,
                           const StepHook& step_hook, SessionReport* partial) {
    if (sessions.empty()) throw ContractError("run_protocol: no sessions");
    if (cumulative_tests.size() != sessions.size()) {
        throw ContractError("run_protocol: " + std::to_string(sessions.size()) +
                            " sessions but " + std::to_string(cumulative_tests.size()) +
                            " cumulative test sets");
    }
    // Class sets must be pairwise disjoint across sessions.
    std::set<int> seen;
    for (const auto& s : sessions) {
        for (int cls : s.class_ids()) {
            if (!seen.insert(cls).second) {
                throw ContractError("run_protocol: class " + std::to_string(cls) +
                                    " appears in two sessions");
            }
        }
    }

    SessionReport report;
    report.seed = cfg.seed;
    report.config_hash = hex64(fnv1a64(protocol_config_json(cfg).dump()));

    auto record_eval = [&](const ClassifierModel& model, size_t i) {
        report.per_session_accuracy.push_back(cumulative_accuracy(model, cumulative_tests[i]));
        report.n_test_classes.push_back(static_cast<int>(cumulative_tests[i].class_ids().size()));
        report.n_test_examples.push_back(static_cast<int>(cumulative_tests[i].size()));
    };

    try {
        ClassifierModel model = base_train(sessions[0], cfg, step_hook);
        record_eval(model, 0);
        if (session_hook) session_hook(0, model, nullptr);

        for (size_t i = 1; i < sessions.size(); ++i) {
            auto [next, run] = incremental_step(model, sessions[i], cfg, step_hook);
            model = std::move(next);
            record_eval(model, i);
            report.replay_histograms.push_back(run.replay_histogram);
            if (session_hook) session_hook(static_cast<int>(i), model, &run);
        }

        report.per_class_entropy = per_class_entropy(model, cumulative_tests.back());
        report.finalize();
    } catch (...) {
        report.finalize();
        if (partial) *partial = report;
        throw;
    }
    return report;
}

}  // namespace dfr
