#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dfr/datasets.hpp"
#include "dfr/models.hpp"
#include "dfr/replay.hpp"

namespace dfr {

// Per-run evaluation record. Wall-clock metadata lives in the CLI's run
// manifest, not here: identical config + seed must serialize to identical
// bytes.
struct SessionReport {
    int schema_version = 1;
    std::string config_hash;
    uint64_t seed = 0;
    std::vector<double> per_session_accuracy;  // cumulative top-1, [0, 1]
    std::vector<int> n_test_classes;
    std::vector<int> n_test_examples;
    double average_accuracy = 0.0;
    std::map<int, double> per_class_entropy;          // class id -> mean entropy (nats)
    std::vector<std::map<int, int>> replay_histograms;  // per incremental session

    void finalize();  // recomputes average_accuracy
};

// Top-1 accuracy with argmax over all current logits; ties resolve to the
// lowest class id. The model's class set must cover the test set's.
double cumulative_accuracy(const ClassifierModel& model, const SessionDataset& cumulative_test);

// Predicted global class id per example, same tie-break rule.
std::vector<int> predict_labels(const ClassifierModel& model, const SessionDataset& dataset);

// Mean Shannon entropy (nats) of softmaxed logits, grouped by true class.
// Classes of the model absent from the test set are omitted with a warning
// on stderr.
std::map<int, double> per_class_entropy(const ClassifierModel& model,
                                        const SessionDataset& test);

// Zero-filled integer counts per class id in [0, class_count).
std::vector<int> replay_label_histogram(const ReplayBatch& batch, int class_count);
std::vector<int> replay_label_histogram(const std::vector<int>& labels, int class_count);

enum class ReportFormat { Csv, Json };

// CSV: header `session,accuracy,n_test_classes,n_test_examples`, one row per
// session. JSON mirrors SessionReport fields with deterministic order.
void export_report(const SessionReport& report, const std::string& path, ReportFormat format);

SessionReport load_report_json(const std::string& path);

}  // namespace dfr
