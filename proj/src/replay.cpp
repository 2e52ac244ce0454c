#include "dfr/replay.hpp"

#include <cmath>
#include <sstream>

#include "dfr/checkpoint.hpp"
#include "dfr/optim.hpp"
#include "dfr/util.hpp"

namespace dfr {

void GenTrainConfig::validate() const {
    if (epochs <= 0) throw ContractError("GenTrainConfig: epochs must be positive");
    if (steps_per_epoch <= 0) throw ContractError("GenTrainConfig: steps_per_epoch must be positive");
    if (batch_size < 1) throw ContractError("GenTrainConfig: batch_size must be at least 1");
    if (k_inner < 1) throw ContractError("GenTrainConfig: k_inner must be at least 1");
    if (!(alpha > 0.0f) || !(beta > 0.0f)) {
        throw ContractError("GenTrainConfig: learning rates must be positive");
    }
    if (!(entropy_weight >= 0.0f)) {
        throw ContractError("GenTrainConfig: entropy_weight must be non-negative");
    }
    if (noise_dim <= 0) throw ContractError("GenTrainConfig: noise_dim must be positive");
}

Tensor shannon_entropy(const Tensor& probabilities) {
    if (!probabilities.defined() || probabilities.shape().size() != 2) {
        throw ContractError("shannon_entropy: expected [batch x classes] probabilities");
    }
    const int rows = probabilities.shape()[0];
    const int cols = probabilities.shape()[1];
    const auto pv = probabilities.values();
    for (int i = 0; i < rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < cols; ++j) {
            const float p = pv[static_cast<size_t>(i) * cols + j];
            if (p < 0.0f) {
                throw ContractError("shannon_entropy: negative probability in row " +
                                    std::to_string(i));
            }
            s += static_cast<double>(p);
        }
        if (std::abs(s - 1.0) > 1e-5) {
            throw ContractError("shannon_entropy: row " + std::to_string(i) +
                                " sums to " + std::to_string(s) + ", not a distribution");
        }
    }
    // H = -sum p * log(max(p, eps)); max() via relu keeps one-hot rows at
    // exactly zero entropy and the gradient finite at p = 0.
    const float eps = 1e-12f;
    const Tensor eps_t = Tensor::full(probabilities.shape(), eps);
    const Tensor guarded = add(relu(sub(probabilities, eps_t)), eps_t);
    return scale(row_sum(mul(probabilities, log(guarded))), -1.0f);
}

Tensor aux_loss(const Tensor& teacher_logits, const Tensor& aux_logits) {
    return squared_l2_distance(teacher_logits, aux_logits);
}

Tensor gen_loss(const Tensor& teacher_logits, const Tensor& aux_logits,
                const Tensor& teacher_probs, const GenTrainConfig& cfg) {
    const Tensor match = cfg.match_norm == MatchNorm::L1
                             ? l1_distance(teacher_logits, aux_logits)
                             : squared_l2_distance(teacher_logits, aux_logits);
    if (cfg.entropy_weight == 0.0f) {
        return scale(match, -1.0f);
    }
    const Tensor ent = mean(shannon_entropy(teacher_probs));
    return scale(add(match, scale(ent, cfg.entropy_weight)), -1.0f);
}

std::pair<GeneratorModel, AuxiliaryModel> train_generator(const ClassifierModel& teacher,
                                                          const GenTrainConfig& cfg,
                                                          const GenEpochHook& hook) {
    cfg.validate();

    GeneratorModel gen(cfg.noise_dim, cfg.hidden, teacher.input_dim(),
                       derive_seed(cfg.seed, 11));
    AuxiliaryModel aux(teacher, derive_seed(cfg.seed, 13));

    Optimizer gen_opt = Optimizer::adam(gen.parameters(), AdamConfig{.lr = cfg.alpha});
    Optimizer aux_opt = Optimizer::adam(aux.parameters(), AdamConfig{.lr = cfg.beta});

    Rng noise_rng(derive_seed(cfg.seed, 17));
    ParameterSet teacher_params = teacher.parameters();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        gen_opt.set_lr(lr_schedule(epoch, cfg.alpha, cfg.lr_milestones, cfg.lr_factor));
        aux_opt.set_lr(lr_schedule(epoch, cfg.beta, cfg.lr_milestones, cfg.lr_factor));

        double gen_loss_sum = 0.0;
        double aux_loss_sum = 0.0;
        for (int step = 0; step < cfg.steps_per_epoch; ++step) {
            const Tensor z = Tensor::from_values(
                {cfg.batch_size, cfg.noise_dim},
                noise_rng.normal_vec(static_cast<size_t>(cfg.batch_size) * cfg.noise_dim));

            try {
                // Generator evolving phase: teacher and auxiliary act as fixed
                // functions, gradient flows to the generator through the samples.
                {
                    FreezeGuard freeze_teacher(teacher_params);
                    FreezeGuard freeze_aux(aux.parameters());
                    for (int k = 0; k < cfg.k_inner; ++k) {
                        const Tensor x = gen.forward(z);
                        const Tensor tl = teacher.forward(x);
                        const Tensor al = aux.forward(x);
                        const Tensor loss = gen_loss(tl, al, softmax(tl), cfg);
                        if (k + 1 == cfg.k_inner) gen_loss_sum += loss.value();
                        backward(loss);
                        gen_opt.step();
                    }
                }

                // Knowledge transferring phase: one auxiliary update on the same
                // noise; generator and teacher frozen.
                {
                    FreezeGuard freeze_teacher(teacher_params);
                    FreezeGuard freeze_gen(gen.parameters());
                    const Tensor x = gen.forward(z);
                    const Tensor tl = teacher.forward(x);
                    const Tensor al = aux.forward(x);
                    const Tensor loss = aux_loss(tl, al);
                    aux_loss_sum += loss.value();
                    backward(loss);
                    aux_opt.step();
                }
            } catch (const NumericError& e) {
                throw NumericError("train_generator diverged at epoch " + std::to_string(epoch) +
                                   " step " + std::to_string(step) + " (last gen loss " +
                                   std::to_string(gen_loss_sum) + ", aux loss " +
                                   std::to_string(aux_loss_sum) + "): " + e.what());
            }
        }

        if (hook) {
            GenEpochStats stats;
            stats.epoch = epoch;
            stats.mean_gen_loss = gen_loss_sum / cfg.steps_per_epoch;
            stats.mean_aux_loss = aux_loss_sum / cfg.steps_per_epoch;
            hook(stats, gen, aux);
        }
    }

    return {std::move(gen), std::move(aux)};
}

ReplayBatch sample_replay(const GeneratorModel& gen, const ClassifierModel& teacher, int count,
                          uint64_t seed) {
    if (count < 1) throw ContractError("sample_replay: count must be at least 1");

    ParameterSet gen_params = gen.parameters();
    ParameterSet teacher_params = teacher.parameters();
    FreezeGuard freeze_gen(gen_params);
    FreezeGuard freeze_teacher(teacher_params);

    Rng rng(seed);
    const Tensor z = Tensor::from_values(
        {count, gen.noise_dim()},
        rng.normal_vec(static_cast<size_t>(count) * gen.noise_dim()));
    const Tensor samples = gen.forward(z);
    const Tensor logits = teacher.forward(samples);

    const auto column_ids = teacher.class_column_ids();
    const int cols = logits.shape()[1];
    const auto lv = logits.values();

    ReplayBatch batch;
    batch.samples = samples.detached_copy();
    batch.labels.reserve(static_cast<size_t>(count));
    batch.teacher_entropy.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        const std::span<const float> row = lv.subspan(static_cast<size_t>(i) * cols,
                                                      static_cast<size_t>(cols));
        batch.labels.push_back(argmax_label(row, column_ids));
        batch.teacher_entropy.push_back(static_cast<float>(entropy_nats_from_logits(row)));
    }
    return batch;
}

void dump_replay_csv(const ReplayBatch& batch, const std::string& path) {
    if (batch.size() == 0) throw ContractError("dump_replay_csv: empty batch");
    const int dim = batch.samples.shape()[1];
    const auto sv = batch.samples.values();
    std::ostringstream csv;
    csv << "label,entropy";
    for (int j = 0; j < dim; ++j) csv << ",f" << j;
    csv << '\n';
    for (size_t i = 0; i < batch.size(); ++i) {
        csv << batch.labels[i] << ',' << format_f32(batch.teacher_entropy[i]);
        for (int j = 0; j < dim; ++j) {
            csv << ',' << format_f32(sv[i * static_cast<size_t>(dim) + j]);
        }
        csv << '\n';
    }
    write_file(path, csv.str());
}

}  // namespace dfr
