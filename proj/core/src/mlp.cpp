#include "wisk/mlp.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace wisk {

Mlp::Mlp(std::vector<std::size_t> widths, OutputActivation out, std::uint64_t seed)
    : widths_(std::move(widths)), out_(out) {
    if (widths_.size() < 2) throw std::invalid_argument("Mlp needs at least an input and an output layer");
    for (auto w : widths_)
        if (w == 0) throw std::invalid_argument("Mlp layer widths must be positive");

    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        offsets_.push_back(total);
        total += widths_[l] * widths_[l + 1] + widths_[l + 1];
    }
    params_.assign(total, 0.0);

    std::mt19937_64 rng(seed);
    const std::size_t layers = widths_.size() - 1;
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t in = widths_[l];
        const std::size_t outw = widths_[l + 1];
        const bool last = l + 1 == layers;
        const double scale = last ? std::sqrt(1.0 / static_cast<double>(in)) : std::sqrt(2.0 / static_cast<double>(in));
        std::normal_distribution<double> g(0.0, scale);
        double* w = params_.data() + offsets_[l];
        double* b = w + in * outw;
        for (std::size_t k = 0; k < in * outw; ++k) w[k] = g(rng);
        if (l == 0 && in == 1 && !last) {
            // Scalar input lives on [0, 1]: spread the ReLU kinks over it.
            std::uniform_real_distribution<double> kink(0.0, 1.0);
            for (std::size_t j = 0; j < outw; ++j) b[j] = -w[j] * kink(rng);
        }
    }
}

std::span<const double> Mlp::forward(std::span<const double> x, Workspace& ws) const {
    if (x.size() != widths_[0]) throw std::invalid_argument("Mlp::forward: input size mismatch");
    ws.act.resize(widths_.size());
    ws.nonzero.clear();
    ws.act[0].clear();
    for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] != 0.0) {
            ws.nonzero.push_back(static_cast<std::uint32_t>(i));
            ws.act[0].push_back(x[i]);
        }
    return run(ws);
}

std::span<const double> Mlp::forward_sparse(std::span<const std::uint32_t> idx, std::span<const double> val,
                                            Workspace& ws) const {
    if (idx.size() != val.size()) throw std::invalid_argument("Mlp::forward_sparse: index/value size mismatch");
    ws.act.resize(widths_.size());
    ws.nonzero.clear();
    ws.act[0].clear();
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] >= widths_[0]) throw std::invalid_argument("Mlp::forward_sparse: input position out of range");
        if (val[k] == 0.0) continue;
        ws.nonzero.push_back(idx[k]);
        ws.act[0].push_back(val[k]);
    }
    return run(ws);
}

std::span<const double> Mlp::run(Workspace& ws) const {
    const std::size_t layers = widths_.size() - 1;
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t in = widths_[l];
        const std::size_t outw = widths_[l + 1];
        const double* w = params_.data() + offsets_[l];
        const double* b = w + in * outw;
        const auto& a = ws.act[l];
        auto& z = ws.act[l + 1];
        z.assign(b, b + outw);
        const auto accumulate = [&](std::size_t i, double ai) {
            const double* row = w + i * outw;
            for (std::size_t j = 0; j < outw; ++j) z[j] += ai * row[j];
        };
        if (l == 0) {
            for (std::size_t k = 0; k < ws.nonzero.size(); ++k) accumulate(ws.nonzero[k], a[k]);
        } else {
            for (std::size_t i = 0; i < in; ++i)
                if (a[i] != 0.0) accumulate(i, a[i]);
        }
        if (l + 1 < layers) {
            for (auto& v : z) v = v > 0.0 ? v : 0.0;
        } else if (out_ == OutputActivation::Sigmoid) {
            for (auto& v : z) v = sigmoid(v);
        }
    }
    return ws.act[layers];
}

double Mlp::backward(std::span<const double> dloss_dy, Workspace& ws, std::span<double> grad,
                     bool want_input_grad) const {
    const std::size_t layers = widths_.size() - 1;
    if (grad.size() != params_.size() && !grad.empty()) throw std::invalid_argument("Mlp::backward: gradient size mismatch");
    ws.delta.resize(layers + 1);
    auto& top = ws.delta[layers];
    top.assign(dloss_dy.begin(), dloss_dy.end());
    if (out_ == OutputActivation::Sigmoid) {
        const auto& y = ws.act[layers];
        for (std::size_t j = 0; j < top.size(); ++j) top[j] *= y[j] * (1.0 - y[j]);
    }

    double input_grad = 0.0;
    for (std::size_t l = layers; l-- > 0;) {
        const std::size_t in = widths_[l];
        const std::size_t outw = widths_[l + 1];
        const double* w = params_.data() + offsets_[l];
        const auto& d = ws.delta[l + 1];
        const auto& a = ws.act[l];
        if (!grad.empty()) {
            double* gw = grad.data() + offsets_[l];
            double* gb = gw + in * outw;
            for (std::size_t j = 0; j < outw; ++j) gb[j] += d[j];
            const auto accumulate = [&](std::size_t i, double ai) {
                double* row = gw + i * outw;
                for (std::size_t j = 0; j < outw; ++j) row[j] += ai * d[j];
            };
            if (l == 0) {
                for (std::size_t k = 0; k < ws.nonzero.size(); ++k) accumulate(ws.nonzero[k], a[k]);
            } else {
                for (std::size_t i = 0; i < in; ++i)
                    if (a[i] != 0.0) accumulate(i, a[i]);
            }
        }
        if (l > 0) {
            auto& dp = ws.delta[l];
            dp.assign(in, 0.0);
            for (std::size_t i = 0; i < in; ++i) {
                if (a[i] <= 0.0) continue;  // ReLU gate
                const double* row = w + i * outw;
                double s = 0.0;
                for (std::size_t j = 0; j < outw; ++j) s += row[j] * d[j];
                dp[i] = s;
            }
        } else if (want_input_grad) {
            for (std::size_t j = 0; j < outw; ++j) input_grad += w[j] * d[j];
        }
    }
    return input_grad;
}

double Mlp::eval_scalar(double x, double* dydx) const {
    thread_local Workspace ws;
    const double in[1] = {x};
    // A zero input would be skipped by the sparse first layer; that is still
    // the correct forward value, and the input gradient below does not depend
    // on the skip.
    const double y = forward(in, ws)[0];
    if (dydx) {
        const double one[1] = {1.0};
        *dydx = backward(one, ws, {}, true);
    }
    return y;
}

nlohmann::json Mlp::to_json() const {
    return {{"widths", widths_},
            {"output", out_ == OutputActivation::Sigmoid ? "sigmoid" : "identity"},
            {"params", params_}};
}

Mlp Mlp::from_json(const nlohmann::json& j) {
    Mlp m(j.at("widths").get<std::vector<std::size_t>>(),
          j.at("output").get<std::string>() == "sigmoid" ? OutputActivation::Sigmoid : OutputActivation::Identity, 0);
    auto p = j.at("params").get<std::vector<double>>();
    if (p.size() != m.params_.size()) throw std::runtime_error("Mlp::from_json: parameter count mismatch");
    m.params_ = std::move(p);
    return m;
}

Adam::Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    const double step = lr_ * std::sqrt(c2) / c1;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i];
        m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
        v_[i] = b2_ * v_[i] + (1.0 - b2_) * g * g;
        params[i] -= step * m_[i] / (std::sqrt(v_[i]) + eps_);
    }
}

}  // namespace wisk
