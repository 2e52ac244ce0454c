#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dfr/param_set.hpp"

namespace dfr {

// base_lr * factor^(number of milestones <= epoch). Milestones strictly
// increasing, factor in (0, 1].
float lr_schedule(int epoch, float base_lr, const std::vector<int>& milestones, float factor);

struct SgdConfig {
    float lr = 0.1f;
    float momentum = 0.0f;
    float weight_decay = 0.0f;
};

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float epsilon = 1e-8f;
    float weight_decay = 0.0f;
};

// SGD-with-momentum or Adam over a fixed parameter set. Moment buffers are
// allocated at construction for exactly the bound parameters; update
// arithmetic runs in double, parameters stay float32. step() consumes the
// grads (they are cleared afterwards) and bumps the step counter.
class Optimizer {
public:
    enum class Kind { SgdMomentum, Adam };

    static Optimizer sgd(ParameterSet params, const SgdConfig& cfg);
    static Optimizer adam(ParameterSet params, const AdamConfig& cfg);

    void step();
    void set_lr(float lr) { lr_ = lr; }
    float lr() const { return lr_; }
    int64_t step_count() const { return step_count_; }
    Kind kind() const { return kind_; }

private:
    Optimizer(Kind kind, ParameterSet params);

    Kind kind_;
    ParameterSet params_;
    float lr_ = 0.0f;
    float momentum_ = 0.0f;
    float beta1_ = 0.9f, beta2_ = 0.999f, epsilon_ = 1e-8f;
    float weight_decay_ = 0.0f;
    int64_t step_count_ = 0;
    // one buffer per parameter, element counts matching the parameter
    std::vector<std::vector<double>> moment1_;
    std::vector<std::vector<double>> moment2_;  // Adam only
};

}  // namespace dfr
