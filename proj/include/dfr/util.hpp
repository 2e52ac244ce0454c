#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace dfr {

// FNV-1a, 64-bit.
inline uint64_t fnv1a64(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Shortest decimal that round-trips a float32 (9 significant digits).
inline std::string format_f32(float v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

inline std::string format_f64(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Index of the largest entry; ties resolved toward the lowest global id.
inline int argmax_label(std::span<const float> row, std::span<const int> column_ids) {
    size_t best = 0;
    for (size_t c = 1; c < row.size(); ++c) {
        if (row[c] > row[best] ||
            (row[c] == row[best] && column_ids[c] < column_ids[best])) {
            best = c;
        }
    }
    return column_ids[best];
}

// Numerically stable softmax into a double vector.
inline std::vector<double> softmax_double(std::span<const float> logits) {
    double m = -std::numeric_limits<double>::infinity();
    for (float v : logits) m = std::max(m, static_cast<double>(v));
    std::vector<double> p(logits.size());
    double s = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(static_cast<double>(logits[i]) - m);
        s += p[i];
    }
    for (auto& v : p) v /= s;
    return p;
}

// Shannon entropy (nats) of the softmax of a logit row.
inline double entropy_nats_from_logits(std::span<const float> logits) {
    const std::vector<double> p = softmax_double(logits);
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

}  // namespace dfr
