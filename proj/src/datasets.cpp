#include "dfr/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "dfr/checkpoint.hpp"
#include "dfr/errors.hpp"
#include "dfr/util.hpp"

namespace dfr {

// ---- SessionDataset -------------------------------------------------------------

SessionDataset::SessionDataset(std::vector<int> feature_shape, int session_index)
    : feature_shape_(std::move(feature_shape)), session_index_(session_index) {
    if (feature_shape_.empty()) throw ContractError("SessionDataset: empty feature shape");
    for (int e : feature_shape_) {
        if (e <= 0) throw ContractError("SessionDataset: feature extents must be positive");
    }
}

int SessionDataset::feature_dim() const {
    int n = 1;
    for (int e : feature_shape_) n *= e;
    return n;
}

void SessionDataset::add(std::vector<float> features, int label, Provenance provenance) {
    if (feature_shape_.empty()) throw ContractError("SessionDataset::add: dataset has no shape");
    if (static_cast<int>(features.size()) != feature_dim()) {
        throw ContractError("SessionDataset::add: feature length " +
                            std::to_string(features.size()) + " does not match shape " +
                            shape_str(feature_shape_));
    }
    for (float v : features) {
        if (!std::isfinite(v)) throw ContractError("SessionDataset::add: non-finite feature value");
    }
    class_ids_.insert(label);
    examples_.push_back({std::move(features), label, provenance});
}

std::map<int, int> SessionDataset::class_histogram() const {
    std::map<int, int> hist;
    for (const auto& ex : examples_) ++hist[ex.label];
    return hist;
}

Tensor SessionDataset::features_tensor(const std::vector<size_t>& indices) const {
    if (indices.empty()) throw ContractError("features_tensor: empty index list");
    const int d = feature_dim();
    std::vector<float> buf;
    buf.reserve(indices.size() * static_cast<size_t>(d));
    for (size_t i : indices) {
        const auto& f = examples_.at(i).features;
        buf.insert(buf.end(), f.begin(), f.end());
    }
    return Tensor::from_values({static_cast<int>(indices.size()), d}, std::move(buf));
}

Tensor SessionDataset::features_tensor() const {
    std::vector<size_t> idx(size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return features_tensor(idx);
}

std::vector<int> SessionDataset::labels(const std::vector<size_t>& indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (size_t i : indices) out.push_back(examples_.at(i).label);
    return out;
}

std::vector<int> SessionDataset::labels() const {
    std::vector<int> out;
    out.reserve(size());
    for (const auto& ex : examples_) out.push_back(ex.label);
    return out;
}

bool SessionDataset::operator==(const SessionDataset& other) const {
    if (feature_shape_ != other.feature_shape_ || session_index_ != other.session_index_ ||
        class_ids_ != other.class_ids_ || examples_.size() != other.examples_.size()) {
        return false;
    }
    for (size_t i = 0; i < examples_.size(); ++i) {
        if (examples_[i].label != other.examples_[i].label ||
            examples_[i].provenance != other.examples_[i].provenance ||
            examples_[i].features != other.examples_[i].features) {
            return false;
        }
    }
    return true;
}

// ---- gaussians -------------------------------------------------------------------

namespace {

// Cholesky factor of a symmetric PSD matrix; tolerant of semi-definite
// inputs (zero pivots), rejects indefinite ones.
std::vector<std::vector<float>> psd_cholesky(const std::vector<std::vector<float>>& cov) {
    const size_t d = cov.size();
    double scale = 0.0;
    for (size_t i = 0; i < d; ++i) {
        if (cov[i].size() != d) throw ContractError("covariance matrix must be square");
        for (size_t j = 0; j < d; ++j) {
            scale = std::max(scale, std::abs(static_cast<double>(cov[i][j])));
            if (std::abs(cov[i][j] - cov[j][i]) > 1e-5f * (1.0f + std::abs(cov[i][j]))) {
                throw ContractError("covariance matrix must be symmetric");
            }
        }
    }
    const double tol = 1e-9 * std::max(1.0, scale);
    std::vector<std::vector<float>> L(d, std::vector<float>(d, 0.0f));
    for (size_t j = 0; j < d; ++j) {
        double diag = cov[j][j];
        for (size_t k = 0; k < j; ++k) diag -= static_cast<double>(L[j][k]) * L[j][k];
        if (diag < -tol) {
            throw ContractError("covariance matrix is not positive semi-definite (pivot " +
                                std::to_string(j) + " = " + std::to_string(diag) + ")");
        }
        diag = std::max(diag, 0.0);
        L[j][j] = static_cast<float>(std::sqrt(diag));
        for (size_t i = j + 1; i < d; ++i) {
            if (L[j][j] <= tol) {
                L[i][j] = 0.0f;
                continue;
            }
            double acc = cov[i][j];
            for (size_t k = 0; k < j; ++k) acc -= static_cast<double>(L[i][k]) * L[j][k];
            L[i][j] = static_cast<float>(acc / L[j][j]);
        }
    }
    return L;
}

}  // namespace

SessionDataset gen_toy_gaussians(const std::vector<GaussianClassSpec>& class_specs,
                                 uint64_t seed) {
    if (class_specs.empty()) throw ContractError("gen_toy_gaussians: no class specs");
    const size_t dim = class_specs.front().mean.size();
    if (dim == 0) throw ContractError("gen_toy_gaussians: zero-dimensional mean");

    SessionDataset out({static_cast<int>(dim)}, 0);
    Rng rng(seed);
    for (size_t c = 0; c < class_specs.size(); ++c) {
        const auto& spec = class_specs[c];
        if (spec.mean.size() != dim) {
            throw ContractError("gen_toy_gaussians: inconsistent mean dimension for class " +
                                std::to_string(c));
        }
        if (spec.count <= 0) {
            throw ContractError("gen_toy_gaussians: class " + std::to_string(c) +
                                " has non-positive count");
        }
        const auto L = psd_cholesky(spec.covariance);
        if (L.size() != dim) {
            throw ContractError("gen_toy_gaussians: covariance dimension mismatch for class " +
                                std::to_string(c));
        }
        for (int i = 0; i < spec.count; ++i) {
            std::vector<float> n(dim);
            for (auto& v : n) v = rng.normal_f();
            std::vector<float> x(dim);
            for (size_t r = 0; r < dim; ++r) {
                double acc = spec.mean[r];
                for (size_t k = 0; k <= r; ++k) {
                    acc += static_cast<double>(L[r][k]) * n[k];
                }
                x[r] = static_cast<float>(acc);
            }
            out.add(std::move(x), static_cast<int>(c));
        }
    }
    return out;
}

// ---- patterns --------------------------------------------------------------------

std::vector<std::vector<float>> pattern_templates(int classes, int size, uint64_t seed) {
    if (classes <= 0) throw ContractError("pattern_templates: classes must be positive");
    if (size < 4) throw ContractError("pattern_templates: size must be at least 4");
    std::vector<std::vector<float>> templates;
    templates.reserve(static_cast<size_t>(classes));
    const double pi = 3.14159265358979323846;
    for (int c = 0; c < classes; ++c) {
        Rng rng(derive_seed(seed, 1000 + static_cast<uint64_t>(c)));
        // Distinct orientation per class; frequency cycles 1..3; random phase.
        const double theta = pi * static_cast<double>(c) / classes;
        const double freq = 1.0 + static_cast<double>(c % 3);
        const double phase = rng.uniform(0.0, 2.0 * pi);
        std::vector<float> t(static_cast<size_t>(size) * size);
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double u =
                    (x * std::cos(theta) + y * std::sin(theta)) / static_cast<double>(size);
                t[static_cast<size_t>(y) * size + x] =
                    static_cast<float>(std::sin(2.0 * pi * freq * u + phase));
            }
        }
        templates.push_back(std::move(t));
    }
    return templates;
}

SessionDataset gen_pattern_set(int classes, int per_class, int size, uint64_t seed,
                               float noise_amplitude) {
    if (per_class <= 0) throw ContractError("gen_pattern_set: per_class must be positive");
    if (noise_amplitude < 0.0f) throw ContractError("gen_pattern_set: negative noise amplitude");
    const auto templates = pattern_templates(classes, size, seed);

    SessionDataset out({size, size}, 0);
    Rng rng(derive_seed(seed, 2));
    for (int c = 0; c < classes; ++c) {
        for (int i = 0; i < per_class; ++i) {
            std::vector<float> x = templates[static_cast<size_t>(c)];
            if (noise_amplitude > 0.0f) {
                for (auto& v : x) {
                    v = std::clamp(v + noise_amplitude * rng.normal_f(), -1.0f, 1.0f);
                }
            }
            out.add(std::move(x), c);
        }
    }
    return out;
}

// ---- splitting -------------------------------------------------------------------

void ProtocolSpec::validate() const {
    if (base_class_count <= 0) throw ContractError("ProtocolSpec: base_class_count must be positive");
    if (session_count < 0) throw ContractError("ProtocolSpec: session_count must be non-negative");
    if (session_count > 0 && (way <= 0 || shot <= 0)) {
        throw ContractError("ProtocolSpec: way and shot must be positive for incremental sessions");
    }
    if (test_per_class <= 0) throw ContractError("ProtocolSpec: test_per_class must be positive");
}

namespace {

std::map<int, std::vector<size_t>> index_by_class(const SessionDataset& ds) {
    std::map<int, std::vector<size_t>> by_class;
    for (size_t i = 0; i < ds.size(); ++i) by_class[ds[i].label].push_back(i);
    return by_class;
}

}  // namespace

SessionSplit split_sessions(const SessionDataset& train, const SessionDataset& test,
                            const ProtocolSpec& spec) {
    spec.validate();
    if (train.feature_shape() != test.feature_shape()) {
        throw ContractError("split_sessions: train/test feature shapes differ");
    }

    std::vector<int> classes(train.class_ids().begin(), train.class_ids().end());
    const int needed = spec.base_class_count + spec.session_count * spec.way;
    if (static_cast<int>(classes.size()) < needed) {
        throw ContractError("split_sessions: need " + std::to_string(needed) + " classes, have " +
                            std::to_string(classes.size()) + " (deficit " +
                            std::to_string(needed - static_cast<int>(classes.size())) + ")");
    }

    const auto train_by_class = index_by_class(train);
    const auto test_by_class = index_by_class(test);
    Rng rng(spec.seed);

    auto check_test_coverage = [&](int cls) {
        auto it = test_by_class.find(cls);
        const int have = it == test_by_class.end() ? 0 : static_cast<int>(it->second.size());
        if (have < spec.test_per_class) {
            throw ContractError("split_sessions: class " + std::to_string(cls) + " has " +
                                std::to_string(have) + " test examples, need " +
                                std::to_string(spec.test_per_class) + " (deficit " +
                                std::to_string(spec.test_per_class - have) + ")");
        }
    };

    SessionSplit out;
    std::vector<int> seen;

    // Base session: everything from the first base_class_count classes.
    SessionDataset base(train.feature_shape(), 0);
    for (int c = 0; c < spec.base_class_count; ++c) {
        const int cls = classes[static_cast<size_t>(c)];
        for (size_t i : train_by_class.at(cls)) {
            base.add(train[i].features, cls, train[i].provenance);
        }
        seen.push_back(cls);
    }
    out.train_sessions.push_back(std::move(base));

    // Few-shot sessions: shot examples per class, seeded, without replacement.
    for (int s = 1; s <= spec.session_count; ++s) {
        SessionDataset session(train.feature_shape(), s);
        for (int w = 0; w < spec.way; ++w) {
            const int cls =
                classes[static_cast<size_t>(spec.base_class_count + (s - 1) * spec.way + w)];
            auto pool = train_by_class.at(cls);
            if (static_cast<int>(pool.size()) < spec.shot) {
                throw ContractError("split_sessions: class " + std::to_string(cls) + " has " +
                                    std::to_string(pool.size()) + " train examples, need " +
                                    std::to_string(spec.shot) + " (deficit " +
                                    std::to_string(spec.shot - static_cast<int>(pool.size())) +
                                    ")");
            }
            rng.shuffle(pool);
            for (int k = 0; k < spec.shot; ++k) {
                session.add(train[pool[static_cast<size_t>(k)]].features, cls,
                            train[pool[static_cast<size_t>(k)]].provenance);
            }
            seen.push_back(cls);
        }
        out.train_sessions.push_back(std::move(session));
    }

    // Cumulative test sets.
    size_t seen_upto = static_cast<size_t>(spec.base_class_count);
    for (int s = 0; s <= spec.session_count; ++s) {
        SessionDataset cumulative(test.feature_shape(), s);
        for (size_t c = 0; c < seen_upto; ++c) {
            const int cls = seen[c];
            check_test_coverage(cls);
            const auto& pool = test_by_class.at(cls);
            for (int k = 0; k < spec.test_per_class; ++k) {
                cumulative.add(test[pool[static_cast<size_t>(k)]].features, cls,
                               test[pool[static_cast<size_t>(k)]].provenance);
            }
        }
        out.cumulative_tests.push_back(std::move(cumulative));
        seen_upto += static_cast<size_t>(spec.way);
    }

    return out;
}

// ---- file I/O --------------------------------------------------------------------

void save_dataset(const SessionDataset& dataset, const std::string& path) {
    if (dataset.empty()) throw ContractError("save_dataset: empty dataset");
    const std::filesystem::path manifest_path(path);
    std::filesystem::path csv_path = manifest_path;
    csv_path.replace_extension(".csv");

    bool any_generated = false;
    std::string provenance;
    provenance.reserve(dataset.size());
    for (const auto& ex : dataset.examples()) {
        const bool gen = ex.provenance == Provenance::Generated;
        any_generated = any_generated || gen;
        provenance.push_back(gen ? '1' : '0');
    }

    nlohmann::ordered_json manifest;
    manifest["schema_version"] = 1;
    manifest["feature_shape"] = dataset.feature_shape();
    manifest["session_index"] = dataset.session_index();
    manifest["class_ids"] = std::vector<int>(dataset.class_ids().begin(),
                                             dataset.class_ids().end());
    manifest["example_count"] = dataset.size();
    auto& counts = manifest["class_counts"] = nlohmann::ordered_json::object();
    for (const auto& [cls, n] : dataset.class_histogram()) counts[std::to_string(cls)] = n;
    if (any_generated) manifest["provenance"] = provenance;
    manifest["csv"] = csv_path.filename().string();
    write_file(manifest_path.string(), manifest.dump(2) + "\n");

    std::ostringstream csv;
    for (const auto& ex : dataset.examples()) {
        csv << ex.label;
        for (float v : ex.features) csv << ',' << format_f32(v);
        csv << '\n';
    }
    write_file(csv_path.string(), csv.str());
}

SessionDataset load_dataset(const std::string& path) {
    std::vector<int> feature_shape;
    std::vector<int> declared_classes;
    size_t declared_count = 0;
    int session_index = 0;
    std::string provenance;
    std::string csv_name;
    try {
        const nlohmann::json manifest = nlohmann::json::parse(read_file(path));
        feature_shape = manifest.at("feature_shape").get<std::vector<int>>();
        declared_classes = manifest.at("class_ids").get<std::vector<int>>();
        declared_count = manifest.at("example_count").get<size_t>();
        session_index = manifest.value("session_index", 0);
        provenance = manifest.value("provenance", std::string());
        csv_name = manifest.at("csv").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("dataset manifest " + path + ": " + e.what());
    }
    if (declared_count == 0) throw ParseError("dataset manifest " + path + ": zero examples");

    const std::filesystem::path manifest_path(path);
    const std::string csv_path = (manifest_path.parent_path() / csv_name).string();
    const std::string body = read_file(csv_path);

    SessionDataset out(feature_shape, session_index);
    const int dim = out.feature_dim();

    size_t line_no = 0;
    size_t pos = 0;
    while (pos < body.size()) {
        size_t eol = body.find('\n', pos);
        if (eol == std::string::npos) eol = body.size();
        const std::string_view line(body.data() + pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (line.empty()) continue;

        std::vector<float> features;
        features.reserve(static_cast<size_t>(dim));
        int label = 0;
        size_t field = 0;
        size_t start = 0;
        while (start <= line.size()) {
            size_t comma = line.find(',', start);
            if (comma == std::string::npos) comma = line.size();
            const std::string tok(line.substr(start, comma - start));
            try {
                if (field == 0) {
                    size_t used = 0;
                    label = std::stoi(tok, &used);
                    if (used != tok.size()) throw std::invalid_argument(tok);
                } else {
                    size_t used = 0;
                    features.push_back(std::stof(tok, &used));
                    if (used != tok.size()) throw std::invalid_argument(tok);
                }
            } catch (const std::exception&) {
                throw ParseError(csv_path + ":" + std::to_string(line_no) + ": bad field " +
                                 std::to_string(field) + " '" + tok + "'");
            }
            ++field;
            start = comma + 1;
            if (comma == line.size()) break;
        }
        if (static_cast<int>(features.size()) != dim) {
            throw ParseError(csv_path + ":" + std::to_string(line_no) + ": expected " +
                             std::to_string(dim) + " features, got " +
                             std::to_string(features.size()));
        }
        Provenance prov = Provenance::Real;
        if (!provenance.empty()) {
            if (provenance.size() < out.size() + 1) {
                throw ParseError("dataset manifest " + path + ": provenance shorter than rows");
            }
            prov = provenance[out.size()] == '1' ? Provenance::Generated : Provenance::Real;
        }
        out.add(std::move(features), label, prov);
    }

    if (out.size() != declared_count) {
        throw ParseError("dataset " + path + ": manifest declares " +
                         std::to_string(declared_count) + " examples, CSV has " +
                         std::to_string(out.size()));
    }
    const std::vector<int> actual_classes(out.class_ids().begin(), out.class_ids().end());
    if (actual_classes != declared_classes) {
        throw ParseError("dataset " + path + ": manifest class ids do not match CSV labels");
    }
    return out;
}

}  // namespace dfr
