#include "dfr/json_io.hpp"

#include <set>

#include "dfr/errors.hpp"

namespace dfr {

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known,
                    const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        if (!known.count(key)) {
            throw ParseError(where + ": unknown field '" + key + "'");
        }
    }
}

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

nlohmann::ordered_json gen_config_json(const GenTrainConfig& cfg) {
    nlohmann::ordered_json j;
    j["epochs"] = cfg.epochs;
    j["steps_per_epoch"] = cfg.steps_per_epoch;
    j["batch_size"] = cfg.batch_size;
    j["k_inner"] = cfg.k_inner;
    j["alpha"] = cfg.alpha;
    j["beta"] = cfg.beta;
    j["entropy_weight"] = cfg.entropy_weight;
    j["match_norm"] = cfg.match_norm == MatchNorm::L1 ? "l1" : "squared_l2";
    j["lr_milestones"] = cfg.lr_milestones;
    j["lr_factor"] = cfg.lr_factor;
    j["noise_dim"] = cfg.noise_dim;
    j["hidden"] = cfg.hidden;
    j["seed"] = cfg.seed;
    return j;
}

GenTrainConfig gen_config_from_json(const nlohmann::json& j) {
    reject_unknown(j,
                   {"epochs", "steps_per_epoch", "batch_size", "k_inner", "alpha", "beta",
                    "entropy_weight", "match_norm", "lr_milestones", "lr_factor", "noise_dim",
                    "hidden", "seed"},
                   "generator config");
    GenTrainConfig cfg;
    get_if(j, "epochs", cfg.epochs);
    get_if(j, "steps_per_epoch", cfg.steps_per_epoch);
    get_if(j, "batch_size", cfg.batch_size);
    get_if(j, "k_inner", cfg.k_inner);
    get_if(j, "alpha", cfg.alpha);
    get_if(j, "beta", cfg.beta);
    get_if(j, "entropy_weight", cfg.entropy_weight);
    if (j.contains("match_norm")) {
        const std::string norm = j.at("match_norm").get<std::string>();
        if (norm == "l1") {
            cfg.match_norm = MatchNorm::L1;
        } else if (norm == "squared_l2") {
            cfg.match_norm = MatchNorm::SquaredL2;
        } else {
            throw ParseError("generator config: match_norm must be 'l1' or 'squared_l2', got '" +
                             norm + "'");
        }
    }
    get_if(j, "lr_milestones", cfg.lr_milestones);
    get_if(j, "lr_factor", cfg.lr_factor);
    get_if(j, "noise_dim", cfg.noise_dim);
    get_if(j, "hidden", cfg.hidden);
    get_if(j, "seed", cfg.seed);
    return cfg;
}

nlohmann::ordered_json protocol_config_json(const ProtocolConfig& cfg) {
    nlohmann::ordered_json j;
    j["backbone_hidden"] = cfg.backbone_hidden;
    j["feature_dim"] = cfg.feature_dim;
    j["cosine_scale"] = cfg.cosine_scale;
    j["base_epochs"] = cfg.base_epochs;
    j["base_lr"] = cfg.base_lr;
    j["base_batch"] = cfg.base_batch;
    j["base_milestones"] = cfg.base_milestones;
    j["base_lr_factor"] = cfg.base_lr_factor;
    j["momentum"] = cfg.momentum;
    j["incremental_epochs"] = cfg.incremental_epochs;
    j["incremental_batch"] = cfg.incremental_batch;
    j["lambda1"] = cfg.lambda1;
    j["lambda2"] = cfg.lambda2;
    j["incremental_milestones"] = cfg.incremental_milestones;
    j["incremental_lr_factor"] = cfg.incremental_lr_factor;
    j["replay_count"] = cfg.replay_count;
    j["ablation"] = nlohmann::ordered_json{
        {"entropy_regularization", cfg.ablation.entropy_regularization},
        {"relabel", cfg.ablation.relabel},
        {"backbone_finetune", cfg.ablation.backbone_finetune}};
    j["kd_weight"] = cfg.kd_weight;
    j["kd_temperature"] = cfg.kd_temperature;
    j["generator"] = gen_config_json(cfg.gen_cfg);
    j["seed"] = cfg.seed;
    return j;
}

ProtocolConfig protocol_config_from_json(const nlohmann::json& j) {
    reject_unknown(j,
                   {"backbone_hidden", "feature_dim", "cosine_scale", "base_epochs", "base_lr",
                    "base_batch", "base_milestones", "base_lr_factor", "momentum",
                    "incremental_epochs", "incremental_batch", "lambda1", "lambda2",
                    "incremental_milestones", "incremental_lr_factor", "replay_count", "ablation",
                    "kd_weight", "kd_temperature", "generator", "seed"},
                   "protocol config");
    ProtocolConfig cfg;
    get_if(j, "backbone_hidden", cfg.backbone_hidden);
    get_if(j, "feature_dim", cfg.feature_dim);
    get_if(j, "cosine_scale", cfg.cosine_scale);
    get_if(j, "base_epochs", cfg.base_epochs);
    get_if(j, "base_lr", cfg.base_lr);
    get_if(j, "base_batch", cfg.base_batch);
    get_if(j, "base_milestones", cfg.base_milestones);
    get_if(j, "base_lr_factor", cfg.base_lr_factor);
    get_if(j, "momentum", cfg.momentum);
    get_if(j, "incremental_epochs", cfg.incremental_epochs);
    get_if(j, "incremental_batch", cfg.incremental_batch);
    get_if(j, "lambda1", cfg.lambda1);
    get_if(j, "lambda2", cfg.lambda2);
    get_if(j, "incremental_milestones", cfg.incremental_milestones);
    get_if(j, "incremental_lr_factor", cfg.incremental_lr_factor);
    get_if(j, "replay_count", cfg.replay_count);
    if (j.contains("ablation")) {
        const auto& a = j.at("ablation");
        reject_unknown(a, {"entropy_regularization", "relabel", "backbone_finetune"},
                       "protocol config ablation");
        get_if(a, "entropy_regularization", cfg.ablation.entropy_regularization);
        get_if(a, "relabel", cfg.ablation.relabel);
        get_if(a, "backbone_finetune", cfg.ablation.backbone_finetune);
    }
    get_if(j, "kd_weight", cfg.kd_weight);
    get_if(j, "kd_temperature", cfg.kd_temperature);
    if (j.contains("generator")) cfg.gen_cfg = gen_config_from_json(j.at("generator"));
    get_if(j, "seed", cfg.seed);
    return cfg;
}

nlohmann::ordered_json protocol_spec_json(const ProtocolSpec& spec) {
    nlohmann::ordered_json j;
    j["base_classes"] = spec.base_class_count;
    j["way"] = spec.way;
    j["shot"] = spec.shot;
    j["sessions"] = spec.session_count;
    j["test_per_class"] = spec.test_per_class;
    j["seed"] = spec.seed;
    return j;
}

ProtocolSpec protocol_spec_from_json(const nlohmann::json& j) {
    reject_unknown(j, {"base_classes", "way", "shot", "sessions", "test_per_class", "seed"},
                   "split spec");
    ProtocolSpec spec;
    get_if(j, "base_classes", spec.base_class_count);
    get_if(j, "way", spec.way);
    get_if(j, "shot", spec.shot);
    get_if(j, "sessions", spec.session_count);
    get_if(j, "test_per_class", spec.test_per_class);
    get_if(j, "seed", spec.seed);
    return spec;
}

}  // namespace dfr
