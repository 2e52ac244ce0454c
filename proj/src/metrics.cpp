#include "dfr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "dfr/checkpoint.hpp"
#include "dfr/param_set.hpp"
#include "dfr/util.hpp"

namespace dfr {

void SessionReport::finalize() {
    double s = 0.0;
    for (double a : per_session_accuracy) s += a;
    average_accuracy = per_session_accuracy.empty()
                           ? 0.0
                           : s / static_cast<double>(per_session_accuracy.size());
}

namespace {

// Evaluation forward pass with the model's parameters frozen (no graph).
Tensor eval_logits(const ClassifierModel& model, const SessionDataset& ds) {
    ParameterSet params = model.parameters();
    FreezeGuard freeze(params);
    return model.forward(ds.features_tensor());
}

}  // namespace

std::vector<int> predict_labels(const ClassifierModel& model, const SessionDataset& dataset) {
    if (dataset.empty()) throw ContractError("predict_labels: empty dataset");
    const Tensor logits = eval_logits(model, dataset);
    const auto column_ids = model.class_column_ids();
    const int cols = logits.shape()[1];
    const auto lv = logits.values();
    std::vector<int> out(dataset.size());
    for (size_t i = 0; i < dataset.size(); ++i) {
        out[i] = argmax_label(lv.subspan(i * static_cast<size_t>(cols),
                                         static_cast<size_t>(cols)),
                              column_ids);
    }
    return out;
}

double cumulative_accuracy(const ClassifierModel& model, const SessionDataset& cumulative_test) {
    if (cumulative_test.empty()) throw ContractError("cumulative_accuracy: empty test set");
    const auto model_ids = model.class_column_ids();
    for (int cls : cumulative_test.class_ids()) {
        if (std::find(model_ids.begin(), model_ids.end(), cls) == model_ids.end()) {
            throw ContractError("cumulative_accuracy: model lacks class " + std::to_string(cls));
        }
    }
    const auto predicted = predict_labels(model, cumulative_test);
    size_t correct = 0;
    for (size_t i = 0; i < cumulative_test.size(); ++i) {
        if (predicted[i] == cumulative_test[i].label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(cumulative_test.size());
}

std::map<int, double> per_class_entropy(const ClassifierModel& model,
                                        const SessionDataset& test) {
    if (test.empty()) throw ContractError("per_class_entropy: empty test set");
    const Tensor logits = eval_logits(model, test);
    const int cols = logits.shape()[1];
    const auto lv = logits.values();

    std::map<int, double> sums;
    std::map<int, int> counts;
    for (size_t i = 0; i < test.size(); ++i) {
        const double h = entropy_nats_from_logits(
            lv.subspan(i * static_cast<size_t>(cols), static_cast<size_t>(cols)));
        sums[test[i].label] += h;
        ++counts[test[i].label];
    }

    std::map<int, double> out;
    for (const auto& [cls, s] : sums) out[cls] = s / counts[cls];
    for (int cls : model.class_column_ids()) {
        if (!out.count(cls)) {
            std::cerr << "per_class_entropy: class " << cls
                      << " has no test examples; omitted\n";
        }
    }
    return out;
}

std::vector<int> replay_label_histogram(const std::vector<int>& labels, int class_count) {
    if (class_count <= 0) throw ContractError("replay_label_histogram: class_count must be positive");
    std::vector<int> counts(static_cast<size_t>(class_count), 0);
    for (int label : labels) {
        if (label < 0 || label >= class_count) {
            throw ContractError("replay_label_histogram: label " + std::to_string(label) +
                                " out of range [0, " + std::to_string(class_count) + ")");
        }
        ++counts[static_cast<size_t>(label)];
    }
    return counts;
}

std::vector<int> replay_label_histogram(const ReplayBatch& batch, int class_count) {
    return replay_label_histogram(batch.labels, class_count);
}

namespace {

nlohmann::ordered_json report_to_json(const SessionReport& report) {
    nlohmann::ordered_json j;
    j["schema_version"] = report.schema_version;
    j["config_hash"] = report.config_hash;
    j["seed"] = report.seed;
    j["per_session_accuracy"] = report.per_session_accuracy;
    j["n_test_classes"] = report.n_test_classes;
    j["n_test_examples"] = report.n_test_examples;
    j["average_accuracy"] = report.average_accuracy;
    auto& ent = j["per_class_entropy"] = nlohmann::ordered_json::object();
    for (const auto& [cls, h] : report.per_class_entropy) ent[std::to_string(cls)] = h;
    auto& hists = j["replay_histograms"] = nlohmann::ordered_json::array();
    for (const auto& hist : report.replay_histograms) {
        nlohmann::ordered_json h = nlohmann::ordered_json::object();
        for (const auto& [cls, n] : hist) h[std::to_string(cls)] = n;
        hists.push_back(std::move(h));
    }
    return j;
}

}  // namespace

void export_report(const SessionReport& report, const std::string& path, ReportFormat format) {
    if (format == ReportFormat::Json) {
        write_file(path, report_to_json(report).dump(2) + "\n");
        return;
    }
    if (report.per_session_accuracy.size() != report.n_test_classes.size() ||
        report.per_session_accuracy.size() != report.n_test_examples.size()) {
        throw ContractError("export_report: per-session field lengths differ");
    }
    std::ostringstream csv;
    csv << "session,accuracy,n_test_classes,n_test_examples\n";
    for (size_t i = 0; i < report.per_session_accuracy.size(); ++i) {
        csv << i << ',' << format_f64(report.per_session_accuracy[i]) << ','
            << report.n_test_classes[i] << ',' << report.n_test_examples[i] << '\n';
    }
    write_file(path, csv.str());
}

SessionReport load_report_json(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("report " + path + ": " + e.what());
    }
    SessionReport report;
    report.schema_version = j.at("schema_version").get<int>();
    report.config_hash = j.at("config_hash").get<std::string>();
    report.seed = j.at("seed").get<uint64_t>();
    report.per_session_accuracy = j.at("per_session_accuracy").get<std::vector<double>>();
    report.n_test_classes = j.at("n_test_classes").get<std::vector<int>>();
    report.n_test_examples = j.at("n_test_examples").get<std::vector<int>>();
    report.average_accuracy = j.at("average_accuracy").get<double>();
    for (const auto& [key, value] : j.at("per_class_entropy").items()) {
        report.per_class_entropy[std::stoi(key)] = value.get<double>();
    }
    for (const auto& hist : j.at("replay_histograms")) {
        std::map<int, int> h;
        for (const auto& [key, value] : hist.items()) h[std::stoi(key)] = value.get<int>();
        report.replay_histograms.push_back(std::move(h));
    }
    return report;
}

}  // namespace dfr
