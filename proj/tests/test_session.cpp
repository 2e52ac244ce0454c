#include <doctest.h>

#include <cmath>
#include <set>

#include "dfr/checkpoint.hpp"
#include "dfr/metrics.hpp"
#include "dfr/session.hpp"
#include "toy_fixtures.hpp"

using dfr::ClassifierModel;
using dfr::ProtocolConfig;
using dfr::SessionDataset;
using dfr::Tensor;

TEST_CASE("two-tier step moves old params by exactly lambda1 and new head by lambda2") {
    ClassifierModel model = ClassifierModel({2, 6, 4}, 8.0f, {0, 1}, 3).expand_head({2}, 4);
    dfr::ParameterSet params = model.parameters();
    // Zeroed parameters + unit grads make the plain-SGD delta equal to -lr.
    for (auto& [id, t] : params) {
        auto values = t.values_mut();
        std::fill(values.begin(), values.end(), 0.0f);
    }

    const float lambda1 = 0.25f, lambda2 = 0.5f;
    dfr::TwoTierOptimizer opt(model, lambda1, lambda2, /*momentum=*/0.0f,
                              /*backbone_finetune=*/true);
    for (auto& [id, t] : params) {
        auto g = t.grad_mut();
        std::fill(g.begin(), g.end(), 1.0f);
    }
    opt.step();

    const auto new_ids = model.new_head_parameters().ids();
    for (auto& [id, t] : params) {
        const bool is_new = std::find(new_ids.begin(), new_ids.end(), id) != new_ids.end();
        const float expected = is_new ? -lambda2 : -lambda1;
        for (float v : t.values()) CHECK(v == expected);
    }
}

TEST_CASE("base_train reaches >95% on separable clusters, deterministically") {
    const SessionDataset base = dfr::gen_toy_gaussians(toyfix::ring_specs(3, 200), 11);
    const ProtocolConfig cfg = toyfix::toy_protocol_config(11);
    const ClassifierModel model = dfr::base_train(base, cfg);
    CHECK(dfr::cumulative_accuracy(model, base) > 0.95);

    const ClassifierModel again = dfr::base_train(base, cfg);
    CHECK(dfr::parameter_bytes(again.parameters()) == dfr::parameter_bytes(model.parameters()));
}

TEST_CASE("base_train rejects degenerate datasets") {
    const ProtocolConfig cfg = toyfix::toy_protocol_config(1);
    SessionDataset empty({2}, 0);
    CHECK_THROWS_AS(dfr::base_train(empty, cfg), dfr::ContractError);

    SessionDataset single({2}, 0);
    for (int i = 0; i < 10; ++i) single.add({0.1f * i, 0.0f}, 0);
    CHECK_THROWS_AS(dfr::base_train(single, cfg), dfr::ContractError);
}

TEST_CASE("merge_dataset combines counts, provenance and rejects overlap") {
    SessionDataset novel({2}, 1);
    for (int i = 0; i < 25; ++i) novel.add({0.01f * i, 0.5f}, 3);

    dfr::ReplayBatch replay;
    dfr::Rng rng(5);
    replay.samples = Tensor::from_values({25, 2}, rng.normal_vec(50));
    for (int i = 0; i < 25; ++i) {
        replay.labels.push_back(i % 3);
        replay.teacher_entropy.push_back(0.1f);
    }

    const SessionDataset merged = dfr::merge_dataset(novel, replay);
    CHECK(merged.size() == 50);
    CHECK(merged.session_index() == 1);
    const auto hist = merged.class_histogram();
    CHECK(hist.at(3) == 25);
    CHECK(hist.at(0) + hist.at(1) + hist.at(2) == 25);

    int generated = 0;
    for (const auto& ex : merged.examples()) {
        if (ex.provenance == dfr::Provenance::Generated) ++generated;
    }
    CHECK(generated == 25);

    // Histogram additivity.
    const auto novel_hist = novel.class_histogram();
    const auto replay_hist = dfr::replay_label_histogram(replay, 4);
    for (const auto& [cls, n] : hist) {
        const int from_novel = novel_hist.count(cls) ? novel_hist.at(cls) : 0;
        const int from_replay = cls < 4 ? replay_hist[static_cast<size_t>(cls)] : 0;
        CHECK(n == from_novel + from_replay);
    }

    // Empty replay: merged == novel.
    const SessionDataset same = dfr::merge_dataset(novel, dfr::ReplayBatch{});
    CHECK(same == novel);

    // Label-space overlap.
    replay.labels[0] = 3;
    CHECK_THROWS_AS(dfr::merge_dataset(novel, replay), dfr::ContractError);
}

namespace {

ProtocolConfig fast_session_config(uint64_t seed) {
    ProtocolConfig cfg = toyfix::toy_protocol_config(seed);
    cfg.incremental_epochs = 5;
    cfg.incremental_milestones = {};
    cfg.replay_count = 10;
    cfg.gen_cfg.epochs = 8;
    cfg.gen_cfg.lr_milestones = {};
    return cfg;
}

}  // namespace

TEST_CASE("incremental_step with backbone_finetune off keeps the backbone bit-identical") {
    const auto data = toyfix::toy_protocol_data(7);
    ProtocolConfig cfg = fast_session_config(7);
    cfg.ablation.backbone_finetune = false;

    const ClassifierModel teacher = dfr::base_train(data.sessions[0], cfg);
    const auto backbone_before = dfr::parameter_bytes(teacher.backbone_parameters());
    const auto [model, run] = dfr::incremental_step(teacher, data.sessions[1], cfg);

    CHECK(dfr::parameter_bytes(model.backbone_parameters()) == backbone_before);
    CHECK(run.heads_after == run.heads_before + 1);
    // Old heads did move (lambda1 applies to them).
    CHECK(dfr::parameter_bytes(model.old_head_parameters()) !=
          dfr::parameter_bytes(teacher.head_parameters()));
}

TEST_CASE("zero learning rates are a fixed point of the incremental step") {
    const auto data = toyfix::toy_protocol_data(9);
    ProtocolConfig cfg = fast_session_config(9);
    cfg.lambda1 = 0.0f;
    cfg.lambda2 = 0.0f;

    const ClassifierModel teacher = dfr::base_train(data.sessions[0], cfg);
    const auto [model, run] = dfr::incremental_step(teacher, data.sessions[1], cfg);

    // Old logits unchanged on arbitrary inputs.
    dfr::Rng rng(3);
    const Tensor x = Tensor::from_values({8, 2}, rng.normal_vec(16));
    const Tensor before = teacher.forward(x);
    const Tensor after = model.forward(x);
    for (int i = 0; i < 8; ++i) {
        for (int c = 0; c < teacher.total_classes(); ++c) {
            CHECK(after.at(i, c) == before.at(i, c));
        }
    }

    // Nothing moves regardless of how long we "train".
    ProtocolConfig longer = cfg;
    longer.incremental_epochs = 17;
    const auto [model2, run2] = dfr::incremental_step(teacher, data.sessions[1], longer);
    CHECK(dfr::parameter_bytes(model2.parameters()) == dfr::parameter_bytes(model.parameters()));
}

TEST_CASE("incremental_step rejects class overlap with earlier sessions") {
    const auto data = toyfix::toy_protocol_data(13);
    ProtocolConfig cfg = fast_session_config(13);
    const ClassifierModel teacher = dfr::base_train(data.sessions[0], cfg);

    SessionDataset overlapping({2}, 1);
    for (int i = 0; i < 5; ++i) overlapping.add({0.1f * i, 0.2f}, 1);  // class 1 is base
    CHECK_THROWS_AS(dfr::incremental_step(teacher, overlapping, cfg), dfr::ContractError);
}

TEST_CASE("relabel-on training is cross-entropy only; the KD arm adds a soft-target term") {
    const auto data = toyfix::toy_protocol_data(17);
    ProtocolConfig cfg = fast_session_config(17);
    cfg.incremental_epochs = 2;

    const ClassifierModel teacher = dfr::base_train(data.sessions[0], cfg);

    std::vector<dfr::StepInfo> steps;
    const auto hook = [&](const dfr::StepInfo& info) {
        if (info.session_index > 0) steps.push_back(info);
    };

    SUBCASE("relabel on") {
        dfr::incremental_step(teacher, data.sessions[1], cfg, hook);
        REQUIRE(!steps.empty());
        for (const auto& step : steps) {
            CHECK(step.loss_terms == std::vector<std::string>{"cross_entropy"});
            // Structural graph check: exactly the one log_softmax of the CE
            // composite, and no temperature scaling beyond the cosine scale.
            CHECK(step.loss_graph_ops.at("log_softmax") == 1);
        }
    }
    SUBCASE("relabel off") {
        cfg.ablation.relabel = false;
        dfr::incremental_step(teacher, data.sessions[1], cfg, hook);
        REQUIRE(!steps.empty());
        for (const auto& step : steps) {
            CHECK(step.loss_terms ==
                  std::vector<std::string>{"cross_entropy", "kd_kl"});
            CHECK(step.loss_graph_ops.at("log_softmax") == 2);
        }
    }
}

TEST_CASE("run_protocol: single base session yields a one-entry report") {
    const SessionDataset base = dfr::gen_toy_gaussians(toyfix::ring_specs(3, 60), 19);
    const SessionDataset test = dfr::gen_toy_gaussians(toyfix::ring_specs(3, 30), 20);
    ProtocolConfig cfg = fast_session_config(19);
    const dfr::SessionReport report = dfr::run_protocol({base}, {test}, cfg);
    CHECK(report.per_session_accuracy.size() == 1);
    CHECK(report.average_accuracy == doctest::Approx(report.per_session_accuracy[0]));
    CHECK(report.replay_histograms.empty());
}

TEST_CASE("run_protocol: toy protocol shape and bookkeeping") {
    const auto data = toyfix::toy_protocol_data(23);
    ProtocolConfig cfg = fast_session_config(23);

    int sessions_seen = 0;
    const auto session_hook = [&](int session, const ClassifierModel& model,
                                  const dfr::SessionRun* run) {
        if (session == 0) {
            CHECK(run == nullptr);
        } else {
            REQUIRE(run != nullptr);
            CHECK(run->session_index == session);
            CHECK(run->heads_after == session + 1);
            int replay_total = 0;
            for (const auto& [cls, n] : run->replay_histogram) replay_total += n;
            CHECK(replay_total == cfg.replay_count * cfg.incremental_epochs);
        }
        CHECK(model.total_classes() == 3 + session);
        ++sessions_seen;
    };
    const dfr::SessionReport report =
        dfr::run_protocol(data.sessions, data.cumulative_tests, cfg, session_hook);

    CHECK(sessions_seen == 4);
    REQUIRE(report.per_session_accuracy.size() == 4);
    for (double acc : report.per_session_accuracy) {
        CHECK(acc >= 0.0);
        CHECK(acc <= 1.0);
    }
    for (size_t i = 1; i < report.n_test_examples.size(); ++i) {
        CHECK(report.n_test_examples[i] > report.n_test_examples[i - 1]);
    }
    double mean = 0.0;
    for (double acc : report.per_session_accuracy) mean += acc;
    mean /= 4.0;
    CHECK(report.average_accuracy == doctest::Approx(mean).epsilon(1e-12));
    CHECK(report.replay_histograms.size() == 3);
    CHECK(!report.per_class_entropy.empty());
}

TEST_CASE("run_protocol rejects duplicated classes across sessions and keeps a partial report") {
    const auto data = toyfix::toy_protocol_data(29);
    ProtocolConfig cfg = fast_session_config(29);

    // Corrupt the 2nd incremental session to reuse base class 0.
    std::vector<SessionDataset> sessions = data.sessions;
    SessionDataset bad({2}, 2);
    for (int i = 0; i < 5; ++i) bad.add({0.1f, 0.1f}, 0);
    sessions[2] = bad;
    CHECK_THROWS_AS(dfr::run_protocol(sessions, data.cumulative_tests, cfg),
                    dfr::ContractError);

    // Disjoint sessions but an evaluation-breaking test set later: the
    // partial report keeps the sessions that completed.
    std::vector<SessionDataset> tests = data.cumulative_tests;
    SessionDataset bad_test({2}, 2);
    bad_test.add({0.0f, 0.0f}, 99);  // class unknown to the model
    tests[2] = bad_test;
    dfr::SessionReport partial;
    CHECK_THROWS_AS(
        dfr::run_protocol(data.sessions, tests, cfg, nullptr, nullptr, &partial),
        dfr::ContractError);
    CHECK(partial.per_session_accuracy.size() == 2);  // base + session 1
}

TEST_CASE("forgetting monotonicity: the no-replay baseline only degrades on base classes") {
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        const auto data = toyfix::toy_protocol_data(seed);
        ProtocolConfig cfg = toyfix::toy_protocol_config(seed);
        cfg.replay_count = 0;

        std::vector<double> base_acc;
        const auto hook = [&](int, const ClassifierModel& model, const dfr::SessionRun*) {
            base_acc.push_back(dfr::cumulative_accuracy(model, data.base_test));
        };
        dfr::run_protocol(data.sessions, data.cumulative_tests, cfg, hook);
        REQUIRE(base_acc.size() == 4);
        for (size_t i = 1; i < base_acc.size(); ++i) {
            CHECK(base_acc[i] <= base_acc[i - 1] + 0.01);  // 1-point noise allowance
        }
    }
}
