#pragma once

// Gradient checking against an independent oracle: a plain double-precision
// reimplementation of small MLP forward passes, differentiated by central
// finite differences (h = 1e-3 * max(1, |theta|)). The oracle shares no code
// with the library's graph machinery.

#include <cmath>
#include <string>
#include <vector>

#include "dfr/rng.hpp"
#include "dfr/replay.hpp"
#include "dfr/tensor.hpp"

namespace gradcheck {

struct NetSpec {
    enum class Act { Relu, Tanh };
    enum class Loss { CrossEntropy, SquaredL2, L1, Entropy };

    int batch = 2;
    std::vector<int> widths;  // {in, hidden..., out}
    Act act = Act::Tanh;
    Loss loss = Loss::CrossEntropy;
    std::vector<int> labels;                  // CrossEntropy
    std::vector<double> target;               // SquaredL2 / L1, batch x out
    std::vector<double> x;                    // batch x in
    std::vector<std::vector<double>> weights;  // [layer] out x in, row-major
    std::vector<std::vector<double>> biases;   // [layer] out
};

// ---- double-precision oracle --------------------------------------------------

inline std::vector<double> oracle_forward(const NetSpec& net) {
    std::vector<double> h = net.x;
    int in_dim = net.widths[0];
    for (size_t l = 0; l + 1 < net.widths.size(); ++l) {
        const int out_dim = net.widths[l + 1];
        std::vector<double> next(static_cast<size_t>(net.batch) * out_dim);
        for (int i = 0; i < net.batch; ++i) {
            for (int o = 0; o < out_dim; ++o) {
                double acc = net.biases[l][static_cast<size_t>(o)];
                for (int k = 0; k < in_dim; ++k) {
                    acc += net.weights[l][static_cast<size_t>(o) * in_dim + k] *
                           h[static_cast<size_t>(i) * in_dim + k];
                }
                next[static_cast<size_t>(i) * out_dim + o] = acc;
            }
        }
        if (l + 2 < net.widths.size()) {
            for (auto& v : next) {
                v = net.act == NetSpec::Act::Relu ? (v > 0.0 ? v : 0.0) : std::tanh(v);
            }
        }
        h = std::move(next);
        in_dim = out_dim;
    }
    return h;
}

inline std::vector<double> oracle_softmax_row(const std::vector<double>& y, int base, int n) {
    double m = y[static_cast<size_t>(base)];
    for (int j = 1; j < n; ++j) m = std::max(m, y[static_cast<size_t>(base + j)]);
    std::vector<double> p(static_cast<size_t>(n));
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
        p[static_cast<size_t>(j)] = std::exp(y[static_cast<size_t>(base + j)] - m);
        s += p[static_cast<size_t>(j)];
    }
    for (auto& v : p) v /= s;
    return p;
}

inline double oracle_loss(const NetSpec& net) {
    const std::vector<double> y = oracle_forward(net);
    const int out = net.widths.back();
    switch (net.loss) {
        case NetSpec::Loss::CrossEntropy: {
            double acc = 0.0;
            for (int i = 0; i < net.batch; ++i) {
                const auto p = oracle_softmax_row(y, i * out, out);
                acc -= std::log(p[static_cast<size_t>(net.labels[static_cast<size_t>(i)])]);
            }
            return acc / net.batch;
        }
        case NetSpec::Loss::SquaredL2: {
            double acc = 0.0;
            for (size_t i = 0; i < y.size(); ++i) {
                const double d = y[i] - net.target[i];
                acc += d * d;
            }
            return acc / net.batch;
        }
        case NetSpec::Loss::L1: {
            double acc = 0.0;
            for (size_t i = 0; i < y.size(); ++i) acc += std::abs(y[i] - net.target[i]);
            return acc / net.batch;
        }
        case NetSpec::Loss::Entropy: {
            double acc = 0.0;
            for (int i = 0; i < net.batch; ++i) {
                const auto p = oracle_softmax_row(y, i * out, out);
                for (double v : p) {
                    if (v > 0.0) acc -= v * std::log(v);
                }
            }
            return acc / net.batch;
        }
    }
    return 0.0;
}

// ---- library path ---------------------------------------------------------------

struct ImplGrads {
    std::vector<std::vector<float>> weights;
    std::vector<std::vector<float>> biases;
};

inline ImplGrads impl_gradients(const NetSpec& net) {
    using dfr::Tensor;
    std::vector<Tensor> ws, bs;
    for (size_t l = 0; l + 1 < net.widths.size(); ++l) {
        const int out_dim = net.widths[l + 1];
        const int in_dim = net.widths[l];
        std::vector<float> w(net.weights[l].begin(), net.weights[l].end());
        std::vector<float> b(net.biases[l].begin(), net.biases[l].end());
        ws.push_back(Tensor::from_values({out_dim, in_dim}, std::move(w), true));
        bs.push_back(Tensor::from_values({out_dim}, std::move(b), true));
    }
    const Tensor x = Tensor::from_values({net.batch, net.widths[0]},
                                         std::vector<float>(net.x.begin(), net.x.end()));

    Tensor h = x;
    for (size_t l = 0; l < ws.size(); ++l) {
        h = dfr::add_bias(dfr::matmul_nt(h, ws[l]), bs[l]);
        if (l + 1 < ws.size()) {
            h = net.act == NetSpec::Act::Relu ? dfr::relu(h) : dfr::tanh(h);
        }
    }

    Tensor loss;
    switch (net.loss) {
        case NetSpec::Loss::CrossEntropy:
            loss = dfr::cross_entropy(h, net.labels);
            break;
        case NetSpec::Loss::SquaredL2:
            loss = dfr::squared_l2_distance(
                h, Tensor::from_values(h.shape(), std::vector<float>(net.target.begin(),
                                                                     net.target.end())));
            break;
        case NetSpec::Loss::L1:
            loss = dfr::l1_distance(
                h, Tensor::from_values(h.shape(), std::vector<float>(net.target.begin(),
                                                                     net.target.end())));
            break;
        case NetSpec::Loss::Entropy:
            loss = dfr::mean(dfr::shannon_entropy(dfr::softmax(h)));
            break;
    }
    dfr::backward(loss);

    ImplGrads grads;
    for (auto& w : ws) grads.weights.emplace_back(w.grad().begin(), w.grad().end());
    for (auto& b : bs) grads.biases.emplace_back(b.grad().begin(), b.grad().end());
    return grads;
}

// ---- comparison ------------------------------------------------------------------

struct Result {
    bool pass = true;
    double worst_err = 0.0;     // |impl - fd|
    double worst_bound = 0.0;   // allowed at the worst point
    std::string detail;
};

// relative error < rel_tol with an absolute floor: errors below abs_floor pass.
inline bool within(double impl, double fd, double rel_tol, double abs_floor, double& err,
                   double& bound) {
    err = std::abs(impl - fd);
    bound = std::max(rel_tol * std::max(std::abs(impl), std::abs(fd)), abs_floor);
    return err <= bound;
}

inline Result check_gradients(NetSpec net, double rel_tol = 1e-4, double abs_floor = 1e-6) {
    const ImplGrads grads = impl_gradients(net);
    Result result;

    auto check_param = [&](std::vector<double>& vec, const std::vector<float>& g,
                           const char* kind, size_t layer) {
        for (size_t i = 0; i < vec.size(); ++i) {
            const double saved = vec[i];
            const double h = 1e-3 * std::max(1.0, std::abs(saved));
            vec[i] = saved + h;
            const double up = oracle_loss(net);
            vec[i] = saved - h;
            const double down = oracle_loss(net);
            vec[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            double err = 0.0, bound = 0.0;
            if (!within(static_cast<double>(g[i]), fd, rel_tol, abs_floor, err, bound)) {
                result.pass = false;
                if (err > result.worst_err) {
                    result.worst_err = err;
                    result.worst_bound = bound;
                    result.detail = std::string(kind) + std::to_string(layer) + "[" +
                                    std::to_string(i) + "]: impl " + std::to_string(g[i]) +
                                    " vs fd " + std::to_string(fd);
                }
            } else {
                result.worst_err = std::max(result.worst_err, err);
            }
        }
    };

    for (size_t l = 0; l < net.weights.size(); ++l) {
        check_param(net.weights[l], grads.weights[l], "W", l);
        check_param(net.biases[l], grads.biases[l], "b", l);
    }
    return result;
}

// ---- seeded random cases ----------------------------------------------------------

// Kink screening for non-smooth losses: every ReLU preactivation and every
// L1 residual stays away from zero so the finite differences are clean.
inline bool has_clean_kinks(const NetSpec& net, double margin) {
    if (net.act == NetSpec::Act::Relu) {
        std::vector<double> h = net.x;
        int in_dim = net.widths[0];
        for (size_t l = 0; l + 2 < net.widths.size(); ++l) {
            const int out_dim = net.widths[l + 1];
            std::vector<double> next(static_cast<size_t>(net.batch) * out_dim);
            for (int i = 0; i < net.batch; ++i) {
                for (int o = 0; o < out_dim; ++o) {
                    double acc = net.biases[l][static_cast<size_t>(o)];
                    for (int k = 0; k < in_dim; ++k) {
                        acc += net.weights[l][static_cast<size_t>(o) * in_dim + k] *
                               h[static_cast<size_t>(i) * in_dim + k];
                    }
                    if (std::abs(acc) < margin) return false;
                    next[static_cast<size_t>(i) * out_dim + o] = acc > 0.0 ? acc : 0.0;
                }
            }
            h = std::move(next);
            in_dim = out_dim;
        }
    }
    if (net.loss == NetSpec::Loss::L1) {
        const auto y = oracle_forward(net);
        for (size_t i = 0; i < y.size(); ++i) {
            if (std::abs(y[i] - net.target[i]) < margin) return false;
        }
    }
    return true;
}

inline NetSpec random_net_spec(uint64_t seed) {
    for (uint64_t attempt = 0;; ++attempt) {
        dfr::Rng rng(dfr::derive_seed(seed, attempt));
        NetSpec net;
        net.batch = rng.uniform_int(1, 4);
        const int depth = rng.uniform_int(1, 3);
        net.widths.push_back(rng.uniform_int(2, 5));
        for (int l = 0; l < depth; ++l) net.widths.push_back(rng.uniform_int(2, 6));
        net.act = rng.uniform_int(0, 1) ? NetSpec::Act::Relu : NetSpec::Act::Tanh;
        switch (rng.uniform_int(0, 3)) {
            case 0: net.loss = NetSpec::Loss::CrossEntropy; break;
            case 1: net.loss = NetSpec::Loss::SquaredL2; break;
            case 2: net.loss = NetSpec::Loss::L1; break;
            default: net.loss = NetSpec::Loss::Entropy; break;
        }

        // Parameters and inputs are generated as float32 so the oracle and the
        // implementation evaluate at the same point.
        auto f32 = [&](double scale) {
            return static_cast<double>(static_cast<float>(rng.normal() * scale));
        };
        for (size_t l = 0; l + 1 < net.widths.size(); ++l) {
            const int in_dim = net.widths[l];
            const int out_dim = net.widths[l + 1];
            std::vector<double> w(static_cast<size_t>(out_dim) * in_dim);
            for (auto& v : w) v = f32(0.7 / std::sqrt(static_cast<double>(in_dim)));
            std::vector<double> b(static_cast<size_t>(out_dim));
            for (auto& v : b) v = f32(0.3);
            net.weights.push_back(std::move(w));
            net.biases.push_back(std::move(b));
        }
        net.x.resize(static_cast<size_t>(net.batch) * net.widths[0]);
        for (auto& v : net.x) v = f32(1.0);

        const int out = net.widths.back();
        if (net.loss == NetSpec::Loss::CrossEntropy) {
            for (int i = 0; i < net.batch; ++i) net.labels.push_back(rng.uniform_int(0, out - 1));
        } else if (net.loss != NetSpec::Loss::Entropy) {
            net.target.resize(static_cast<size_t>(net.batch) * out);
            for (auto& v : net.target) v = f32(1.0);
        }

        if (has_clean_kinks(net, 0.05)) return net;
    }
}

}  // namespace gradcheck
