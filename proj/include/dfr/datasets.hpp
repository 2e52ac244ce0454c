#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dfr/rng.hpp"
#include "dfr/tensor.hpp"

namespace dfr {

enum class Provenance : uint8_t { Real = 0, Generated = 1 };

struct Example {
    std::vector<float> features;
    int label = 0;
    Provenance provenance = Provenance::Real;
};

// Labeled examples for one session. Labels carry global class ids; every
// label is registered in class_ids; all feature vectors share feature_shape
// and are finite.
class SessionDataset {
public:
    SessionDataset() = default;
    SessionDataset(std::vector<int> feature_shape, int session_index);

    void add(std::vector<float> features, int label,
             Provenance provenance = Provenance::Real);

    size_t size() const { return examples_.size(); }
    bool empty() const { return examples_.empty(); }
    const Example& operator[](size_t i) const { return examples_[i]; }
    const std::vector<Example>& examples() const { return examples_; }

    const std::set<int>& class_ids() const { return class_ids_; }
    const std::vector<int>& feature_shape() const { return feature_shape_; }
    int feature_dim() const;
    int session_index() const { return session_index_; }
    void set_session_index(int i) { session_index_ = i; }

    std::map<int, int> class_histogram() const;

    // Feature matrix [indices.size() x feature_dim] for a batch.
    Tensor features_tensor(const std::vector<size_t>& indices) const;
    Tensor features_tensor() const;  // all examples, in order
    std::vector<int> labels(const std::vector<size_t>& indices) const;
    std::vector<int> labels() const;

    bool operator==(const SessionDataset& other) const;

private:
    std::vector<Example> examples_;
    std::set<int> class_ids_;
    std::vector<int> feature_shape_;
    int session_index_ = 0;
};

// ---- synthetic generators ------------------------------------------------------

struct GaussianClassSpec {
    std::vector<float> mean;
    std::vector<std::vector<float>> covariance;  // symmetric PSD
    int count = 0;
};

// Seeded Gaussian clusters, one class per spec, labels 0..K-1.
SessionDataset gen_toy_gaussians(const std::vector<GaussianClassSpec>& class_specs,
                                 uint64_t seed);

// size x size procedural patterns in [-1, 1], flattened row-major. Class
// identity is a seeded oriented-sine template plus per-example Gaussian noise.
SessionDataset gen_pattern_set(int classes, int per_class, int size, uint64_t seed,
                               float noise_amplitude = 0.15f);

// Noise-free class templates backing gen_pattern_set, same seed convention.
std::vector<std::vector<float>> pattern_templates(int classes, int size, uint64_t seed);

// ---- protocol splitting ---------------------------------------------------------

struct ProtocolSpec {
    int base_class_count = 0;
    int way = 0;
    int shot = 0;
    int session_count = 0;
    int test_per_class = 0;
    uint64_t seed = 0;

    void validate() const;
};

struct SessionSplit {
    std::vector<SessionDataset> train_sessions;    // [0] base, then session_count few-shot
    std::vector<SessionDataset> cumulative_tests;  // [i] covers classes seen through i
};

// Session 0 holds every train example of the first base_class_count classes
// (ascending id order); later sessions hold exactly way x shot examples
// seeded-sampled without replacement from their fresh classes. Cumulative
// test i holds test_per_class examples per class seen through session i.
SessionSplit split_sessions(const SessionDataset& train, const SessionDataset& test,
                            const ProtocolSpec& spec);

// ---- file I/O -------------------------------------------------------------------

// <path> is the JSON manifest (feature_shape, class ids, counts, provenance);
// the example body lives beside it as CSV (label, then features, one example
// per row) referenced from the manifest.
void save_dataset(const SessionDataset& dataset, const std::string& path);
SessionDataset load_dataset(const std::string& path);

}  // namespace dfr
