#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace wisk {

enum class OutputActivation : std::uint8_t { Identity, Sigmoid };

// Fully connected ReLU network with a flat parameter vector.
//
// Layer l stores its weights input-major (W[i * out + j]) followed by its
// bias, so a zero input row can be skipped in both passes. Packing states
// are mostly zeros and rely on that.
class Mlp {
  public:
    struct Workspace {
        std::vector<std::vector<double>> act;    // post-activation per layer; act[0] holds the nonzero inputs only
        std::vector<std::vector<double>> delta;  // dL/d(pre-activation) per layer
        std::vector<std::uint32_t> nonzero;      // positions of act[0] in the input
    };

    Mlp() = default;
    // widths = {input, hidden..., output}
    Mlp(std::vector<std::size_t> widths, OutputActivation out, std::uint64_t seed);

    std::size_t input_size() const { return widths_.front(); }
    std::size_t output_size() const { return widths_.back(); }
    const std::vector<std::size_t>& widths() const { return widths_; }
    OutputActivation output_activation() const { return out_; }
    std::size_t num_params() const { return params_.size(); }
    std::span<double> params() { return params_; }
    std::span<const double> params() const { return params_; }

    // Forward pass; returns a view of the output stored in ws.
    std::span<const double> forward(std::span<const double> x, Workspace& ws) const;
    // Same, for an input given as (position, value) pairs with unique positions.
    std::span<const double> forward_sparse(std::span<const std::uint32_t> idx, std::span<const double> val,
                                           Workspace& ws) const;

    // Backpropagates dL/dy for the sample last run through forward(ws) and
    // adds the parameter gradient into grad. Returns dL/dx[0] when
    // want_input_grad, else 0.
    double backward(std::span<const double> dloss_dy, Workspace& ws, std::span<double> grad,
                    bool want_input_grad = false) const;

    // Scalar-in scalar-out convenience with the input derivative.
    double eval_scalar(double x, double* dydx = nullptr) const;

    nlohmann::json to_json() const;
    static Mlp from_json(const nlohmann::json& j);

    bool operator==(const Mlp&) const = default;

  private:
    std::size_t layer_offset(std::size_t l) const { return offsets_[l]; }
    std::span<const double> run(Workspace& ws) const;

    std::vector<std::size_t> widths_;
    std::vector<std::size_t> offsets_;
    OutputActivation out_ = OutputActivation::Identity;
    std::vector<double> params_;
};

class Adam {
  public:
    Adam() = default;
    Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(std::span<double> params, std::span<const double> grad);
    void set_learning_rate(double lr) { lr_ = lr; }
    double learning_rate() const { return lr_; }

  private:
    double lr_ = 1e-3;
    double b1_ = 0.9;
    double b2_ = 0.999;
    double eps_ = 1e-8;
    std::uint64_t t_ = 0;
    std::vector<double> m_;
    std::vector<double> v_;
};

inline double sigmoid(double z) {
    if (z >= 0) {
        const double e = std::exp(-z);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace wisk
