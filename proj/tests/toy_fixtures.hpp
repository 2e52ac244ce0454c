#pragma once

// Shared desk-scale fixtures: a 2-D Gaussian-ring classification problem and
// calibrated training configs sized for tests. The ring lives inside
// [-1, 1]^2 (the generator's tanh range) and the teacher uses a moderate
// cosine scale so its softmax stays soft enough for entropy gradients.

#include <cmath>
#include <vector>

#include "dfr/datasets.hpp"
#include "dfr/session.hpp"

namespace toyfix {

// `classes` equally spaced isotropic Gaussian clusters on a circle.
inline std::vector<dfr::GaussianClassSpec> ring_specs(int classes, int count,
                                                      float radius = 0.7f,
                                                      float sigma = 0.1f) {
    std::vector<dfr::GaussianClassSpec> specs;
    const float tau = 6.2831853f;
    for (int c = 0; c < classes; ++c) {
        const float angle = tau * static_cast<float>(c) / static_cast<float>(classes);
        dfr::GaussianClassSpec spec;
        spec.mean = {radius * std::cos(angle), radius * std::sin(angle)};
        spec.covariance = {{sigma * sigma, 0.0f}, {0.0f, sigma * sigma}};
        spec.count = count;
        specs.push_back(std::move(spec));
    }
    return specs;
}

// Generator-inversion settings calibrated on the toy teacher: the auxiliary
// learns an order of magnitude faster than the generator, and the late decay
// lets the entropy term dominate once the mismatch has flattened.
inline dfr::GenTrainConfig toy_gen_config(uint64_t seed) {
    dfr::GenTrainConfig cfg;
    cfg.epochs = 100;
    cfg.steps_per_epoch = 6;
    cfg.batch_size = 32;
    cfg.k_inner = 5;
    cfg.alpha = 0.001f;
    cfg.beta = 0.01f;
    cfg.entropy_weight = 1.0f;
    cfg.lr_milestones = {50, 75};
    cfg.lr_factor = 0.1f;
    cfg.noise_dim = 4;
    cfg.hidden = {32, 32};
    cfg.seed = seed;
    return cfg;
}

// Training recipe for the 2-D toy problems, pilot-calibrated: lambda1 large
// enough that the no-replay baseline forgets hard, replay budget large enough
// to cover every old class each epoch, lambda2 moderate so replay cannot
// suppress the 5-shot novel class.
inline dfr::ProtocolConfig toy_protocol_config(uint64_t seed) {
    dfr::ProtocolConfig cfg;
    cfg.backbone_hidden = {32};
    cfg.feature_dim = 8;
    cfg.cosine_scale = 6.0f;
    cfg.base_epochs = 20;
    cfg.base_lr = 0.1f;
    cfg.base_batch = 32;
    cfg.base_milestones = {12, 17};
    cfg.momentum = 0.9f;
    cfg.incremental_epochs = 100;
    cfg.incremental_batch = 16;
    cfg.lambda1 = 0.02f;
    cfg.lambda2 = 0.05f;
    cfg.incremental_milestones = {15, 25};
    cfg.replay_count = 50;
    cfg.gen_cfg = toy_gen_config(seed);
    cfg.seed = seed;
    return cfg;
}

// Base-session classifier trained on three well-separated clusters.
inline dfr::ClassifierModel trained_toy_teacher(uint64_t seed) {
    const dfr::SessionDataset base = dfr::gen_toy_gaussians(ring_specs(3, 200), seed);
    return dfr::base_train(base, toy_protocol_config(seed));
}

// 3 base clusters at 120-degree spacing plus `extra` incremental clusters at
// the midpoints between them. Novel classes land in the boundary regions of
// the base model, where boundary-seeking replay has the most leverage.
inline std::vector<dfr::GaussianClassSpec> staggered_ring_specs(int extra, int count,
                                                                float radius = 0.7f,
                                                                float sigma = 0.1f) {
    std::vector<dfr::GaussianClassSpec> specs;
    const float tau = 6.2831853f;
    auto cluster = [&](float angle) {
        dfr::GaussianClassSpec spec;
        spec.mean = {radius * std::cos(angle), radius * std::sin(angle)};
        spec.covariance = {{sigma * sigma, 0.0f}, {0.0f, sigma * sigma}};
        spec.count = count;
        return spec;
    };
    for (int c = 0; c < 3; ++c) specs.push_back(cluster(tau * c / 3.0f));
    for (int c = 0; c < extra; ++c) {
        specs.push_back(cluster(tau * c / 3.0f + tau / 6.0f));
    }
    return specs;
}

// Full toy protocol: 6 ring classes, 3 base + 3 sessions of 1-way 5-shot.
struct ToyProtocolData {
    std::vector<dfr::SessionDataset> sessions;
    std::vector<dfr::SessionDataset> cumulative_tests;
    dfr::SessionDataset base_test;  // classes 0..2 only
};

inline ToyProtocolData toy_protocol_data(uint64_t seed) {
    const dfr::SessionDataset train = dfr::gen_toy_gaussians(
        staggered_ring_specs(3, 200, 0.7f, 0.15f), dfr::derive_seed(seed, 21));
    const dfr::SessionDataset test = dfr::gen_toy_gaussians(
        staggered_ring_specs(3, 100, 0.7f, 0.15f), dfr::derive_seed(seed, 22));
    dfr::ProtocolSpec spec;
    spec.base_class_count = 3;
    spec.way = 1;
    spec.shot = 5;
    spec.session_count = 3;
    spec.test_per_class = 100;
    spec.seed = dfr::derive_seed(seed, 23);
    auto split = dfr::split_sessions(train, test, spec);
    ToyProtocolData data;
    data.base_test = split.cumulative_tests[0];
    data.sessions = std::move(split.train_sessions);
    data.cumulative_tests = std::move(split.cumulative_tests);
    return data;
}

}  // namespace toyfix
