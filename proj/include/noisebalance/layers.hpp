#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "noisebalance/tensor.hpp"

namespace noisebalance {

// Weights, bias, and their gradient / momentum buffers for one linear layer.
template <typename S>
struct LayerParams {
    Tensor<S> weights;       // din x dout
    Tensor<S> bias;          // dout
    Tensor<S> grad_weights;
    Tensor<S> grad_bias;
    Tensor<S> vel_weights;
    Tensor<S> vel_bias;

    LayerParams() = default;
    LayerParams(std::int64_t din, std::int64_t dout)
        : weights({din, dout}),
          bias({dout}),
          grad_weights({din, dout}),
          grad_bias({dout}),
          vel_weights({din, dout}),
          vel_bias({dout}) {}

    std::int64_t in_dim() const { return weights.dim(0); }
    std::int64_t out_dim() const { return weights.dim(1); }

    void zero_grad() {
        grad_weights.fill(S(0));
        grad_bias.fill(S(0));
    }
};

struct OptimizerConfig {
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 2e-4;
    // (epoch index, multiplicative factor); factors compound once their epoch
    // is reached.
    std::vector<std::pair<int, double>> lr_schedule;

    void validate() const {
        if (learning_rate <= 0) throw ConfigError("learning_rate must be positive");
        if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0,1)");
        if (weight_decay < 0) throw ConfigError("weight_decay must be nonnegative");
        int prev = -1;
        for (const auto& [epoch, factor] : lr_schedule) {
            if (epoch <= prev) throw ConfigError("lr_schedule epochs must be strictly increasing");
            if (factor <= 0) throw ConfigError("lr_schedule factors must be positive");
            prev = epoch;
        }
    }

    double lr_at(int epoch) const {
        double lr = learning_rate;
        for (const auto& [e, factor] : lr_schedule) {
            if (epoch >= e) lr *= factor;
        }
        return lr;
    }
};

// out[n,j] = sum_i x[n,i] * W[i,j] + b[j]
template <typename S>
Tensor<S> linear_forward(const Tensor<S>& x, const LayerParams<S>& p) {
    x.require_ndim(2, "linear_forward input");
    if (x.dim(1) != p.in_dim()) {
        throw ShapeError("linear_forward: input " + shape_str(x.shape()) +
                         " incompatible with weights " + shape_str(p.weights.shape()));
    }
    const std::int64_t n = x.dim(0), din = p.in_dim(), dout = p.out_dim();
    Tensor<S> out({n, dout});
    const S* xd = x.data();
    const S* w = p.weights.data();
    const S* b = p.bias.data();
    S* o = out.data();
    for (std::int64_t r = 0; r < n; ++r) {
        S* orow = o + r * dout;
        for (std::int64_t j = 0; j < dout; ++j) orow[j] = b[j];
        const S* xrow = xd + r * din;
        for (std::int64_t i = 0; i < din; ++i) {
            const S a = xrow[i];
            const S* wrow = w + i * dout;
            for (std::int64_t j = 0; j < dout; ++j) orow[j] += a * wrow[j];
        }
    }
    return out;
}

// Returns dL/dx; accumulates dL/dW = x^T * upstream and dL/db = colsum(upstream).
template <typename S>
Tensor<S> linear_backward(const Tensor<S>& x, LayerParams<S>& p, const Tensor<S>& upstream) {
    x.require_ndim(2, "linear_backward input");
    upstream.require_ndim(2, "linear_backward upstream");
    if (x.dim(1) != p.in_dim() || upstream.dim(0) != x.dim(0) || upstream.dim(1) != p.out_dim()) {
        throw ShapeError("linear_backward: x " + shape_str(x.shape()) + ", weights " +
                         shape_str(p.weights.shape()) + ", upstream " + shape_str(upstream.shape()) +
                         " are inconsistent");
    }
    const std::int64_t n = x.dim(0), din = p.in_dim(), dout = p.out_dim();
    const S* xd = x.data();
    const S* w = p.weights.data();
    const S* u = upstream.data();
    S* gw = p.grad_weights.data();
    S* gb = p.grad_bias.data();
    Tensor<S> dx({n, din});
    S* dxd = dx.data();
    for (std::int64_t r = 0; r < n; ++r) {
        const S* urow = u + r * dout;
        const S* xrow = xd + r * din;
        for (std::int64_t j = 0; j < dout; ++j) gb[j] += urow[j];
        for (std::int64_t i = 0; i < din; ++i) {
            const S a = xrow[i];
            S* gwrow = gw + i * dout;
            const S* wrow = w + i * dout;
            S acc = S(0);
            for (std::int64_t j = 0; j < dout; ++j) {
                gwrow[j] += a * urow[j];
                acc += urow[j] * wrow[j];
            }
            dxd[r * din + i] = acc;
        }
    }
    return dx;
}

template <typename S>
Tensor<S> relu_forward(const Tensor<S>& x) {
    Tensor<S> out = x;
    for (auto& v : out.vec()) v = v > S(0) ? v : S(0);
    return out;
}

// Subgradient at 0 is 0.
template <typename S>
Tensor<S> relu_backward(const Tensor<S>& x, const Tensor<S>& upstream) {
    require_same_shape(x, upstream, "relu_backward");
    Tensor<S> dx(x.shape());
    const S* xd = x.data();
    const S* u = upstream.data();
    S* d = dx.data();
    for (std::int64_t i = 0; i < x.numel(); ++i) d[i] = xd[i] > S(0) ? u[i] : S(0);
    return dx;
}

// Mean cross-entropy over the batch with max-subtracted softmax.
// Returns (loss, dloss/dlogits) where dlogits = (softmax - onehot) / N.
template <typename S>
std::pair<double, Tensor<S>> softmax_cross_entropy(const Tensor<S>& logits,
                                                   const std::vector<std::int32_t>& labels) {
    logits.require_ndim(2, "softmax_cross_entropy logits");
    const std::int64_t n = logits.dim(0), c = logits.dim(1);
    if (static_cast<std::int64_t>(labels.size()) != n) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " rows");
    }
    Tensor<S> dlogits({n, c});
    double loss = 0.0;
    const S* ld = logits.data();
    S* dd = dlogits.data();
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::int64_t r = 0; r < n; ++r) {
        const std::int32_t y = labels[static_cast<std::size_t>(r)];
        if (y < 0 || y >= c) {
            throw ShapeError("label " + std::to_string(y) + " out of range [0," + std::to_string(c) + ")");
        }
        const S* row = ld + r * c;
        double mx = static_cast<double>(row[0]);
        for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double sum = 0.0;
        for (std::int64_t j = 0; j < c; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
        const double lse = mx + std::log(sum);
        loss += (lse - static_cast<double>(row[y])) * inv_n;
        S* drow = dd + r * c;
        for (std::int64_t j = 0; j < c; ++j) {
            double p = std::exp(static_cast<double>(row[j]) - lse);
            drow[j] = static_cast<S>((p - (j == y ? 1.0 : 0.0)) * inv_n);
        }
    }
    return {loss, std::move(dlogits)};
}

// g <- grad + wd*w; v <- momentum*v + g; w <- w - lr(epoch)*v
template <typename S>
void sgd_update(std::vector<S>& value, const std::vector<S>& grad, std::vector<S>& vel,
                const OptimizerConfig& cfg, int epoch) {
    const S lr = static_cast<S>(cfg.lr_at(epoch));
    const S mom = static_cast<S>(cfg.momentum);
    const S wd = static_cast<S>(cfg.weight_decay);
    for (std::size_t i = 0; i < value.size(); ++i) {
        const S g = grad[i] + wd * value[i];
        vel[i] = mom * vel[i] + g;
        value[i] -= lr * vel[i];
    }
}

template <typename S>
void sgd_step(LayerParams<S>& p, const OptimizerConfig& cfg, int epoch) {
    sgd_update(p.weights.vec(), p.grad_weights.vec(), p.vel_weights.vec(), cfg, epoch);
    sgd_update(p.bias.vec(), p.grad_bias.vec(), p.vel_bias.vec(), cfg, epoch);
}

} // namespace noisebalance
