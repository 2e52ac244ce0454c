#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dfr/param_set.hpp"
#include "dfr/rng.hpp"
#include "dfr/tensor.hpp"

namespace dfr {

// Fully connected stack. ReLU between layers; output either linear
// (classifier features) or tanh (generator samples).
class Mlp {
public:
    enum class Output { Linear, Tanh };

    Mlp() = default;
    // widths = {in, hidden..., out}; at least two entries.
    Mlp(std::vector<int> widths, Output output, std::string id_prefix, Rng& rng);

    Tensor forward(const Tensor& x) const;
    ParameterSet parameters() const;
    Mlp clone() const;

    const std::vector<int>& widths() const { return widths_; }
    int input_dim() const { return widths_.front(); }
    int output_dim() const { return widths_.back(); }

private:
    std::vector<int> widths_;
    Output output_ = Output::Linear;
    std::string prefix_;
    std::vector<Tensor> weights_;  // [out x in] per layer
    std::vector<Tensor> biases_;   // [out] per layer
};

// One classifier head block: the rows of `weights` are class weight vectors,
// aligned with `class_ids`. Rows are L2-normalized at logit time, not in
// storage.
struct HeadBlock {
    int session_index = 0;
    std::vector<int> class_ids;
    Tensor weights;  // [class count x feature dim]
};

// MLP backbone plus a growing list of cosine-classifier head blocks.
// logit(c) = scale * cos(feature, head row c).
class ClassifierModel {
public:
    ClassifierModel() = default;
    // backbone_widths = {input, hidden..., feature_dim}
    ClassifierModel(std::vector<int> backbone_widths, float cosine_scale,
                    std::vector<int> base_class_ids, uint64_t seed);

    Tensor features(const Tensor& x) const;
    Tensor logits_from_features(const Tensor& f) const;
    Tensor forward(const Tensor& x) const;

    // Deep copy; training the clone leaves this model untouched.
    ClassifierModel clone() const;

    // New model sharing copies of the backbone and existing heads bit-exactly,
    // with one appended head block of seeded-random rows. This model is left
    // unmodified. new_class_ids must be non-empty and disjoint from existing ids.
    ClassifierModel expand_head(const std::vector<int>& new_class_ids, uint64_t seed) const;

    int input_dim() const { return backbone_.input_dim(); }
    int feature_dim() const { return backbone_.output_dim(); }
    int total_classes() const;
    float cosine_scale() const { return scale_; }
    const std::vector<int>& backbone_widths() const { return backbone_.widths(); }
    const std::vector<HeadBlock>& heads() const { return heads_; }
    // Global class id of each logit column, in column order.
    std::vector<int> class_column_ids() const;
    // Logit column of a global class id; -1 if absent.
    int column_of(int class_id) const;

    ParameterSet parameters() const;
    ParameterSet backbone_parameters() const { return backbone_.parameters(); }
    ParameterSet head_parameters() const;
    ParameterSet old_parameters() const;       // backbone + all heads but the last
    ParameterSet old_head_parameters() const;  // all heads but the last
    ParameterSet new_head_parameters() const;  // the last head

    // <stem>.json carries backbone widths, scale and head structure on top of
    // the parameter manifest; <stem>.bin is the flat f32 payload.
    void save(const std::string& stem) const;
    static ClassifierModel load(const std::string& stem);

private:
    Mlp backbone_;
    float scale_ = 16.0f;
    std::vector<HeadBlock> heads_;
};

// Noise-to-sample network, tanh output in [-1, 1].
class GeneratorModel {
public:
    GeneratorModel() = default;
    GeneratorModel(int noise_dim, std::vector<int> hidden, int output_dim, uint64_t seed);

    Tensor forward(const Tensor& z) const;  // [B x noise_dim] -> [B x output_dim]
    ParameterSet parameters() const { return net_.parameters(); }
    int noise_dim() const { return noise_dim_; }
    int output_dim() const { return net_.output_dim(); }

private:
    int noise_dim_ = 0;
    Mlp net_;
};

// Classifier-shaped student used only during generator training: same
// backbone widths and cosine scale as the teacher, one fixed head covering
// the teacher's full class set, fresh seeded parameters.
class AuxiliaryModel {
public:
    AuxiliaryModel() = default;
    AuxiliaryModel(const ClassifierModel& teacher, uint64_t seed);

    Tensor forward(const Tensor& x) const { return model_.forward(x); }
    ParameterSet parameters() const { return model_.parameters(); }
    int total_classes() const { return model_.total_classes(); }

private:
    ClassifierModel model_;
};

}  // namespace dfr
