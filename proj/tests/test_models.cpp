#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "dfr/checkpoint.hpp"
#include "dfr/models.hpp"
#include "dfr/optim.hpp"

using dfr::ClassifierModel;
using dfr::GeneratorModel;
using dfr::ParameterSet;
using dfr::Tensor;

namespace {

ClassifierModel small_model(uint64_t seed = 7) {
    return ClassifierModel({2, 8, 4}, 16.0f, {0, 1, 2}, seed);
}

}  // namespace

TEST_CASE("cosine logit equals scale when the feature matches a head row") {
    ClassifierModel model = small_model();
    const Tensor x = Tensor::from_values({1, 2}, {0.3f, -0.8f});
    const Tensor f = model.features(x);

    // Overwrite head row 1 with the feature itself: cos = 1 at that row.
    ParameterSet params = model.parameters();
    auto head = params.get("head0.w").values_mut();
    for (int j = 0; j < 4; ++j) head[4 + j] = f.at(0, j);

    const Tensor logits = model.forward(x);
    CHECK(logits.at(0, 1) == doctest::Approx(16.0f).epsilon(1e-5));
}

TEST_CASE("cosine logit is zero for an orthogonal head row") {
    ClassifierModel model = small_model();
    const Tensor x = Tensor::from_values({1, 2}, {0.5f, 0.2f});
    const Tensor f = model.features(x);

    // Construct a vector orthogonal to f by swapping a pair and negating.
    ParameterSet params = model.parameters();
    auto head = params.get("head0.w").values_mut();
    head[0] = -f.at(0, 1);
    head[1] = f.at(0, 0);
    head[2] = -f.at(0, 3);
    head[3] = f.at(0, 2);

    const Tensor logits = model.forward(x);
    CHECK(logits.at(0, 0) == doctest::Approx(0.0f).epsilon(1e-4));
}

TEST_CASE("cosine logits are bounded by the scale (Cauchy-Schwarz)") {
    dfr::Rng rng(5);
    for (int trial = 0; trial < 5; ++trial) {
        ClassifierModel model = small_model(100 + trial);
        const Tensor x = Tensor::from_values({8, 2}, rng.normal_vec(16));
        const Tensor logits = model.forward(x);
        for (float v : logits.values()) {
            CHECK(std::abs(v) <= 16.0f + 1e-4f);
        }
    }
}

TEST_CASE("cosine logits are invariant to positive feature rescaling") {
    ClassifierModel model = small_model();
    dfr::Rng rng(17);
    const Tensor f = Tensor::from_values({3, 4}, rng.normal_vec(12));
    const Tensor a = model.logits_from_features(f);
    const Tensor b = model.logits_from_features(dfr::scale(f, 41.5f));
    for (size_t i = 0; i < a.values().size(); ++i) {
        CHECK(a.values()[i] == doctest::Approx(b.values()[i]).epsilon(1e-5));
    }
}

TEST_CASE("expand_head grows the logit width and preserves old logits") {
    ClassifierModel model = small_model();
    ClassifierModel grown = model.expand_head({3, 4}, 99);
    CHECK(grown.total_classes() == 5);
    CHECK(grown.heads().size() == 2);
    CHECK(model.total_classes() == 3);  // source unmodified

    dfr::Rng rng(23);
    const Tensor x = Tensor::from_values({4, 2}, rng.normal_vec(8));
    const Tensor old_logits = model.forward(x);
    const Tensor new_logits = grown.forward(x);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 3; ++j) {
            CHECK(new_logits.at(i, j) == old_logits.at(i, j));
        }
    }
}

TEST_CASE("expand_head rejects empty and colliding class ids") {
    ClassifierModel model = small_model();
    CHECK_THROWS_AS(model.expand_head({}, 1), dfr::ContractError);
    CHECK_THROWS_WITH_AS(model.expand_head({5, 1}, 1),
                         doctest::Contains("class id 1"), dfr::ContractError);
}

TEST_CASE("expand_head is deterministic in the seed") {
    ClassifierModel model = small_model();
    const ClassifierModel a = model.expand_head({3}, 555);
    const ClassifierModel b = model.expand_head({3}, 555);
    CHECK(dfr::parameter_bytes(a.parameters()) == dfr::parameter_bytes(b.parameters()));
    const ClassifierModel c = model.expand_head({3}, 556);
    CHECK(dfr::parameter_bytes(a.parameters()) != dfr::parameter_bytes(c.parameters()));
}

TEST_CASE("head growth bookkeeping: |C0| + i*W logits after i sessions") {
    ClassifierModel model = small_model();  // 3 base classes
    const int way = 2;
    int next_id = 3;
    for (int session = 1; session <= 3; ++session) {
        std::vector<int> ids;
        for (int w = 0; w < way; ++w) ids.push_back(next_id++);
        model = model.expand_head(ids, 700 + session);
        CHECK(model.total_classes() == 3 + session * way);
        CHECK(static_cast<int>(model.heads().size()) == 1 + session);
    }
}

TEST_CASE("clone isolates training and matches checkpoints byte-for-byte") {
    ClassifierModel source = small_model();
    ClassifierModel copy = source.clone();

    const std::string dir = "/tmp/dfr_model_test";
    std::filesystem::create_directories(dir);
    source.save(dir + "/source");
    copy.save(dir + "/copy");
    CHECK(dfr::read_file(dir + "/source.bin") == dfr::read_file(dir + "/copy.bin"));

    dfr::Rng rng(3);
    const Tensor x = Tensor::from_values({4, 2}, rng.normal_vec(8));
    const Tensor before = source.forward(x);
    const std::vector<float> logits_before(before.values().begin(), before.values().end());

    // Train the clone a few steps.
    dfr::Optimizer opt = dfr::Optimizer::sgd(copy.parameters(), {.lr = 0.1f, .momentum = 0.9f});
    for (int step = 0; step < 10; ++step) {
        dfr::backward(dfr::cross_entropy(copy.forward(x), {0, 1, 2, 0}));
        opt.step();
    }

    const Tensor after = source.forward(x);
    for (size_t i = 0; i < logits_before.size(); ++i) {
        CHECK(after.values()[i] == logits_before[i]);
    }
    CHECK(dfr::parameter_bytes(source.parameters()) !=
          dfr::parameter_bytes(copy.parameters()));
}

TEST_CASE("classifier save/load round-trips structure and parameters") {
    ClassifierModel model = small_model().expand_head({7, 9}, 12);
    const std::string dir = "/tmp/dfr_model_test";
    std::filesystem::create_directories(dir);
    model.save(dir + "/roundtrip");

    const ClassifierModel loaded = ClassifierModel::load(dir + "/roundtrip");
    CHECK(loaded.total_classes() == model.total_classes());
    CHECK(loaded.class_column_ids() == model.class_column_ids());
    CHECK(loaded.cosine_scale() == model.cosine_scale());
    CHECK(dfr::parameter_bytes(loaded.parameters()) == dfr::parameter_bytes(model.parameters()));
}

TEST_CASE("generator outputs tanh-bounded samples of the right shape") {
    GeneratorModel gen(6, {16}, 2, 44);
    dfr::Rng rng(8);
    const Tensor z = Tensor::from_values({4, 6}, rng.normal_vec(24));
    const Tensor x = gen.forward(z);
    CHECK(x.shape() == std::vector<int>{4, 2});
    for (float v : x.values()) {
        CHECK(v >= -1.0f);
        CHECK(v <= 1.0f);
    }
    CHECK_THROWS_AS(gen.forward(Tensor::zeros({4, 5})), dfr::ContractError);
}

TEST_CASE("generator gradients w.r.t. its parameters match finite differences") {
    GeneratorModel gen(3, {5}, 2, 91);
    dfr::Rng rng(14);
    const std::vector<float> zv = rng.normal_vec(6);
    const Tensor z = Tensor::from_values({2, 3}, zv);

    dfr::backward(dfr::mean(gen.forward(z)));
    ParameterSet params = gen.parameters();

    // Finite differences on an independent double-precision forward.
    auto oracle = [&](const ParameterSet& ps) {
        std::vector<double> h(zv.begin(), zv.end());
        int in_dim = 3;
        const std::vector<std::pair<std::string, int>> layers = {{"0", 5}, {"1", 2}};
        for (size_t l = 0; l < layers.size(); ++l) {
            const auto w = ps.get("generator.w" + layers[l].first).values();
            const auto b = ps.get("generator.b" + layers[l].first).values();
            const int out_dim = layers[l].second;
            std::vector<double> next(2 * static_cast<size_t>(out_dim));
            for (int i = 0; i < 2; ++i) {
                for (int o = 0; o < out_dim; ++o) {
                    double acc = b[o];
                    for (int k = 0; k < in_dim; ++k) {
                        acc += static_cast<double>(w[static_cast<size_t>(o) * in_dim + k]) *
                               h[static_cast<size_t>(i) * in_dim + k];
                    }
                    next[static_cast<size_t>(i) * out_dim + o] = acc;
                }
            }
            for (auto& v : next) {
                v = l + 1 < layers.size() ? (v > 0.0 ? v : 0.0) : std::tanh(v);
            }
            h = std::move(next);
            in_dim = out_dim;
        }
        double s = 0.0;
        for (double v : h) s += v;
        return s / static_cast<double>(h.size());
    };

    for (auto& [id, t] : params) {
        auto values = t.values_mut();
        const auto grads = t.grad();
        for (size_t i = 0; i < values.size(); ++i) {
            const float saved = values[i];
            const float step = 1e-3f * std::max(1.0f, std::abs(saved));
            values[i] = saved + step;
            const double up = oracle(params);
            values[i] = saved - step;
            const double down = oracle(params);
            values[i] = saved;
            const double fd = (up - down) / (2.0 * static_cast<double>(step));
            CHECK(std::abs(grads[i] - fd) <=
                  std::max(1e-4 * std::max(std::abs(fd), static_cast<double>(std::abs(grads[i]))),
                           1e-6));
        }
    }
}
