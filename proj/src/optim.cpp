#include "dfr/optim.hpp"

#include <cmath>

namespace dfr {

float lr_schedule(int epoch, float base_lr, const std::vector<int>& milestones, float factor) {
    if (base_lr <= 0.0f) throw ContractError("lr_schedule: base_lr must be positive");
    if (factor <= 0.0f || factor > 1.0f) throw ContractError("lr_schedule: factor must be in (0, 1]");
    for (size_t i = 1; i < milestones.size(); ++i) {
        if (milestones[i] <= milestones[i - 1]) {
            throw ContractError("lr_schedule: milestones must be strictly increasing");
        }
    }
    float lr = base_lr;
    for (int m : milestones) {
        if (m <= epoch) lr *= factor;
    }
    return lr;
}

Optimizer::Optimizer(Kind kind, ParameterSet params) : kind_(kind), params_(std::move(params)) {
    moment1_.reserve(params_.size());
    for (const auto& [id, t] : params_) {
        moment1_.emplace_back(static_cast<size_t>(t.numel()), 0.0);
    }
    if (kind_ == Kind::Adam) {
        moment2_.reserve(params_.size());
        for (const auto& [id, t] : params_) {
            moment2_.emplace_back(static_cast<size_t>(t.numel()), 0.0);
        }
    }
}

Optimizer Optimizer::sgd(ParameterSet params, const SgdConfig& cfg) {
    Optimizer opt(Kind::SgdMomentum, std::move(params));
    opt.lr_ = cfg.lr;
    opt.momentum_ = cfg.momentum;
    opt.weight_decay_ = cfg.weight_decay;
    return opt;
}

Optimizer Optimizer::adam(ParameterSet params, const AdamConfig& cfg) {
    Optimizer opt(Kind::Adam, std::move(params));
    opt.lr_ = cfg.lr;
    opt.beta1_ = cfg.beta1;
    opt.beta2_ = cfg.beta2;
    opt.epsilon_ = cfg.epsilon;
    opt.weight_decay_ = cfg.weight_decay;
    return opt;
}

void Optimizer::step() {
    ++step_count_;
    size_t pi = 0;
    for (auto& [id, t] : params_) {
        if (!t.requires_grad() || !t.has_grad()) {
            throw ContractError("Optimizer::step: missing grad on parameter '" + id + "'");
        }
        auto values = t.values_mut();
        auto grads = t.grad_mut();
        auto& m1 = moment1_[pi];

        if (kind_ == Kind::SgdMomentum) {
            for (size_t i = 0; i < values.size(); ++i) {
                double g = static_cast<double>(grads[i]);
                if (weight_decay_ != 0.0f) g += static_cast<double>(weight_decay_) * values[i];
                m1[i] = static_cast<double>(momentum_) * m1[i] + g;
                values[i] = static_cast<float>(static_cast<double>(values[i]) -
                                               static_cast<double>(lr_) * m1[i]);
            }
        } else {
            auto& m2 = moment2_[pi];
            const double bc1 = 1.0 - std::pow(static_cast<double>(beta1_), step_count_);
            const double bc2 = 1.0 - std::pow(static_cast<double>(beta2_), step_count_);
            for (size_t i = 0; i < values.size(); ++i) {
                double g = static_cast<double>(grads[i]);
                if (weight_decay_ != 0.0f) g += static_cast<double>(weight_decay_) * values[i];
                m1[i] = beta1_ * m1[i] + (1.0 - beta1_) * g;
                m2[i] = beta2_ * m2[i] + (1.0 - beta2_) * g * g;
                const double mhat = m1[i] / bc1;
                const double vhat = m2[i] / bc2;
                values[i] = static_cast<float>(
                    static_cast<double>(values[i]) -
                    static_cast<double>(lr_) * mhat / (std::sqrt(vhat) + epsilon_));
            }
        }
        t.zero_grad();
        ++pi;
    }
}

}  // namespace dfr
