#include "dfr/models.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "dfr/checkpoint.hpp"
#include "dfr/util.hpp"

namespace dfr {

// ---- Mlp --------------------------------------------------------------------

Mlp::Mlp(std::vector<int> widths, Output output, std::string id_prefix, Rng& rng)
    : widths_(std::move(widths)), output_(output), prefix_(std::move(id_prefix)) {
    if (widths_.size() < 2) {
        throw ContractError("Mlp: need at least input and output widths");
    }
    for (int w : widths_) {
        if (w <= 0) throw ContractError("Mlp: widths must be positive");
    }
    const size_t layers = widths_.size() - 1;
    for (size_t l = 0; l < layers; ++l) {
        const int in = widths_[l];
        const int out = widths_[l + 1];
        const bool last = l + 1 == layers;
        // Kaiming-style for ReLU layers, smaller for the linear output.
        const float std_dev = std::sqrt((last ? 1.0f : 2.0f) / static_cast<float>(in));
        std::vector<float> w(static_cast<size_t>(out) * in);
        for (auto& v : w) v = static_cast<float>(rng.normal() * std_dev);
        weights_.push_back(Tensor::from_values({out, in}, std::move(w), true));
        biases_.push_back(Tensor::zeros({out}, true));
    }
}

Tensor Mlp::forward(const Tensor& x) const {
    if (!x.defined() || x.shape().size() != 2 || x.shape()[1] != input_dim()) {
        throw ContractError("Mlp::forward: expected input [batch x " +
                            std::to_string(input_dim()) + "], got " +
                            (x.defined() ? shape_str(x.shape()) : "undefined"));
    }
    Tensor h = x;
    for (size_t l = 0; l < weights_.size(); ++l) {
        h = add_bias(matmul_nt(h, weights_[l]), biases_[l]);
        const bool last = l + 1 == weights_.size();
        if (!last) {
            h = relu(h);
        } else if (output_ == Output::Tanh) {
            h = tanh(h);
        }
    }
    return h;
}

ParameterSet Mlp::parameters() const {
    ParameterSet ps;
    for (size_t l = 0; l < weights_.size(); ++l) {
        ps.add(prefix_ + ".w" + std::to_string(l), weights_[l]);
        ps.add(prefix_ + ".b" + std::to_string(l), biases_[l]);
    }
    return ps;
}

Mlp Mlp::clone() const {
    Mlp out;
    out.widths_ = widths_;
    out.output_ = output_;
    out.prefix_ = prefix_;
    for (const auto& w : weights_) {
        Tensor c = w.detached_copy();
        c.set_requires_grad(true);
        out.weights_.push_back(std::move(c));
    }
    for (const auto& b : biases_) {
        Tensor c = b.detached_copy();
        c.set_requires_grad(true);
        out.biases_.push_back(std::move(c));
    }
    return out;
}

// ---- ClassifierModel ----------------------------------------------------------

namespace {

Tensor init_head_weights(int class_count, int feature_dim, Rng& rng) {
    // std = 1/sqrt(feature_dim): small symmetric cosine logits at start.
    const float std_dev = 1.0f / std::sqrt(static_cast<float>(feature_dim));
    std::vector<float> w(static_cast<size_t>(class_count) * feature_dim);
    for (auto& v : w) v = static_cast<float>(rng.normal() * std_dev);
    return Tensor::from_values({class_count, feature_dim}, std::move(w), true);
}

void check_class_ids(const std::vector<int>& ids) {
    if (ids.empty()) throw ContractError("head block: class id list must be non-empty");
    std::set<int> seen;
    for (int id : ids) {
        if (!seen.insert(id).second) {
            throw ContractError("head block: duplicate class id " + std::to_string(id));
        }
    }
}

}  // namespace

ClassifierModel::ClassifierModel(std::vector<int> backbone_widths, float cosine_scale,
                                 std::vector<int> base_class_ids, uint64_t seed)
    : scale_(cosine_scale) {
    if (cosine_scale <= 0.0f) throw ContractError("ClassifierModel: cosine scale must be positive");
    check_class_ids(base_class_ids);
    Rng rng(seed);
    backbone_ = Mlp(std::move(backbone_widths), Mlp::Output::Linear, "backbone", rng);
    HeadBlock head;
    head.session_index = 0;
    head.class_ids = std::move(base_class_ids);
    head.weights = init_head_weights(static_cast<int>(head.class_ids.size()), feature_dim(), rng);
    heads_.push_back(std::move(head));
}

Tensor ClassifierModel::features(const Tensor& x) const { return backbone_.forward(x); }

Tensor ClassifierModel::logits_from_features(const Tensor& f) const {
    if (heads_.empty()) throw ContractError("ClassifierModel: no head blocks");
    const Tensor fn = l2_normalize_rows(f);
    const int total = total_classes();
    if (heads_.size() == 1) {
        return scale(matmul_nt(fn, l2_normalize_rows(heads_[0].weights)), scale_);
    }
    // Per-head cosine blocks placed into the full logit width via constant
    // selection matrices, then summed; keeps old columns bit-stable when a
    // head is appended.
    Tensor acc;
    int col = 0;
    for (const auto& head : heads_) {
        const int c = static_cast<int>(head.class_ids.size());
        const Tensor part = matmul_nt(fn, l2_normalize_rows(head.weights));  // [B x c]
        std::vector<float> sel(static_cast<size_t>(c) * total, 0.0f);
        for (int r = 0; r < c; ++r) sel[static_cast<size_t>(r) * total + col + r] = 1.0f;
        const Tensor placed = matmul(part, Tensor::from_values({c, total}, std::move(sel)));
        acc = acc.defined() ? add(acc, placed) : placed;
        col += c;
    }
    return scale(acc, scale_);
}

Tensor ClassifierModel::forward(const Tensor& x) const {
    return logits_from_features(features(x));
}

ClassifierModel ClassifierModel::clone() const {
    ClassifierModel out;
    out.backbone_ = backbone_.clone();
    out.scale_ = scale_;
    for (const auto& head : heads_) {
        HeadBlock h;
        h.session_index = head.session_index;
        h.class_ids = head.class_ids;
        h.weights = head.weights.detached_copy();
        h.weights.set_requires_grad(true);
        out.heads_.push_back(std::move(h));
    }
    return out;
}

ClassifierModel ClassifierModel::expand_head(const std::vector<int>& new_class_ids,
                                             uint64_t seed) const {
    check_class_ids(new_class_ids);
    const auto existing = class_column_ids();
    for (int id : new_class_ids) {
        if (std::find(existing.begin(), existing.end(), id) != existing.end()) {
            throw ContractError("expand_head: class id " + std::to_string(id) +
                                " already present");
        }
    }
    ClassifierModel out = clone();
    Rng rng(seed);
    HeadBlock head;
    head.session_index = heads_.back().session_index + 1;
    head.class_ids = new_class_ids;
    head.weights =
        init_head_weights(static_cast<int>(new_class_ids.size()), feature_dim(), rng);
    out.heads_.push_back(std::move(head));
    return out;
}

int ClassifierModel::total_classes() const {
    int n = 0;
    for (const auto& head : heads_) n += static_cast<int>(head.class_ids.size());
    return n;
}

std::vector<int> ClassifierModel::class_column_ids() const {
    std::vector<int> ids;
    for (const auto& head : heads_) {
        ids.insert(ids.end(), head.class_ids.begin(), head.class_ids.end());
    }
    return ids;
}

int ClassifierModel::column_of(int class_id) const {
    const auto ids = class_column_ids();
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] == class_id) return static_cast<int>(i);
    }
    return -1;
}

ParameterSet ClassifierModel::parameters() const {
    ParameterSet ps = backbone_.parameters();
    ps.merge(head_parameters());
    return ps;
}

ParameterSet ClassifierModel::head_parameters() const {
    ParameterSet ps;
    for (size_t h = 0; h < heads_.size(); ++h) {
        ps.add("head" + std::to_string(h) + ".w", heads_[h].weights);
    }
    return ps;
}

ParameterSet ClassifierModel::old_parameters() const {
    ParameterSet ps = backbone_.parameters();
    ps.merge(old_head_parameters());
    return ps;
}

ParameterSet ClassifierModel::old_head_parameters() const {
    ParameterSet ps;
    if (heads_.size() < 2) return ps;
    for (size_t h = 0; h + 1 < heads_.size(); ++h) {
        ps.add("head" + std::to_string(h) + ".w", heads_[h].weights);
    }
    return ps;
}

ParameterSet ClassifierModel::new_head_parameters() const {
    ParameterSet ps;
    if (heads_.empty()) return ps;
    const size_t h = heads_.size() - 1;
    ps.add("head" + std::to_string(h) + ".w", heads_[h].weights);
    return ps;
}

void ClassifierModel::save(const std::string& stem) const {
    save_parameters(parameters(), stem);
    // Extend the parameter manifest with the model structure.
    nlohmann::ordered_json manifest = nlohmann::ordered_json::parse(read_file(stem + ".json"));
    manifest["model"] = "classifier";
    manifest["backbone_widths"] = backbone_.widths();
    manifest["cosine_scale"] = scale_;
    auto& hlist = manifest["heads"] = nlohmann::ordered_json::array();
    for (const auto& head : heads_) {
        nlohmann::ordered_json rec;
        rec["session_index"] = head.session_index;
        rec["class_ids"] = head.class_ids;
        hlist.push_back(std::move(rec));
    }
    write_file(stem + ".json", manifest.dump(2) + "\n");
}

ClassifierModel ClassifierModel::load(const std::string& stem) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_file(stem + ".json"));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("model manifest " + stem + ".json: " + e.what());
    }
    if (manifest.value("model", "") != "classifier") {
        throw ParseError("model manifest " + stem + ".json: not a classifier checkpoint");
    }
    const auto widths = manifest.at("backbone_widths").get<std::vector<int>>();
    const float cscale = manifest.at("cosine_scale").get<float>();

    ClassifierModel out;
    out.scale_ = cscale;
    Rng rng(0);
    out.backbone_ = Mlp(widths, Mlp::Output::Linear, "backbone", rng);
    for (const auto& rec : manifest.at("heads")) {
        HeadBlock head;
        head.session_index = rec.at("session_index").get<int>();
        head.class_ids = rec.at("class_ids").get<std::vector<int>>();
        head.weights = Tensor::zeros(
            {static_cast<int>(head.class_ids.size()), out.feature_dim()}, true);
        out.heads_.push_back(std::move(head));
    }
    ParameterSet ps = out.parameters();
    load_parameters(ps, stem);
    return out;
}

// ---- GeneratorModel ------------------------------------------------------------

GeneratorModel::GeneratorModel(int noise_dim, std::vector<int> hidden, int output_dim,
                               uint64_t seed)
    : noise_dim_(noise_dim) {
    if (noise_dim <= 0) throw ContractError("GeneratorModel: noise_dim must be positive");
    std::vector<int> widths;
    widths.push_back(noise_dim);
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(output_dim);
    Rng rng(seed);
    net_ = Mlp(std::move(widths), Mlp::Output::Tanh, "generator", rng);
}

Tensor GeneratorModel::forward(const Tensor& z) const {
    if (!z.defined() || z.shape().size() != 2 || z.shape()[1] != noise_dim_) {
        throw ContractError("GeneratorModel::forward: expected noise [batch x " +
                            std::to_string(noise_dim_) + "], got " +
                            (z.defined() ? shape_str(z.shape()) : "undefined"));
    }
    return net_.forward(z);
}

// ---- AuxiliaryModel ------------------------------------------------------------

AuxiliaryModel::AuxiliaryModel(const ClassifierModel& teacher, uint64_t seed) {
    model_ = ClassifierModel(teacher.backbone_widths(), teacher.cosine_scale(),
                             teacher.class_column_ids(), seed);
}

}  // namespace dfr
