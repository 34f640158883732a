#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "noisebalance/layers.hpp"
#include "noisebalance/normalization.hpp"
#include "noisebalance/rng.hpp"

namespace noisebalance {

enum class NormVariant { none, standard_bn, aux_bn, dar_bn };

inline const char* norm_variant_name(NormVariant v) {
    switch (v) {
        case NormVariant::none: return "none";
        case NormVariant::standard_bn: return "standard_bn";
        case NormVariant::aux_bn: return "aux_bn";
        case NormVariant::dar_bn: return "dar_bn";
    }
    return "?";
}

struct ModelConfig {
    std::int64_t input_dim = 0;   // 0 = infer from dataset
    std::vector<std::int64_t> hidden_dims = {256, 256};
    std::int64_t num_classes = 0; // 0 = infer from dataset
    NormVariant norm_variant = NormVariant::dar_bn;
    // Weights ~ U(-a, a) with a = init_scale / sqrt(fan_in); biases start at 0.
    double init_scale = 1.0;

    void validate() const {
        if (input_dim < 1) throw ConfigError("model.input_dim must be positive");
        if (num_classes < 2) throw ConfigError("model.num_classes must be >= 2");
        if (norm_variant != NormVariant::none && hidden_dims.empty()) {
            throw ConfigError("model.hidden_dims must be nonempty when a norm variant is selected");
        }
        for (auto h : hidden_dims) {
            if (h < 1) throw ConfigError("model.hidden_dims entries must be positive");
        }
        if (init_scale <= 0) throw ConfigError("model.init_scale must be positive");
    }
};

// MLP over flattened images: per hidden layer Linear -> (norm) -> ReLU, then a
// final Linear producing logits. The noise mask is forwarded to every
// normalization layer. forward() caches activations for the matching
// backward().
template <typename S>
class Mlp {
public:
    Mlp(const ModelConfig& cfg, RngStream& init_rng) : cfg_(cfg) {
        cfg.validate();
        std::int64_t din = cfg.input_dim;
        for (auto h : cfg.hidden_dims) {
            linears_.emplace_back(din, h);
            init_linear(linears_.back(), init_rng);
            if (cfg.norm_variant == NormVariant::standard_bn ||
                cfg.norm_variant == NormVariant::dar_bn) {
                norms_.emplace_back(h);
            } else if (cfg.norm_variant == NormVariant::aux_bn) {
                aux_norms_.emplace_back(h);
            }
            din = h;
        }
        linears_.emplace_back(din, cfg.num_classes);
        init_linear(linears_.back(), init_rng);
    }

    const ModelConfig& config() const { return cfg_; }
    std::size_t num_hidden() const { return cfg_.hidden_dims.size(); }

    Tensor<S> forward(const Tensor<S>& x, const NoiseMask& mask, Mode mode) {
        x.require_ndim(2, "model input");
        if (mask.size() != x.dim(0)) {
            throw ShapeError("noise mask length " + std::to_string(mask.size()) +
                             " does not match batch " + std::to_string(x.dim(0)));
        }
        linear_inputs_.clear();
        norm_inputs_.clear();
        relu_inputs_.clear();
        mask_ = mask;
        Tensor<S> h = x;
        for (std::size_t k = 0; k < num_hidden(); ++k) {
            linear_inputs_.push_back(h);
            h = linear_forward(h, linears_[k]);
            norm_inputs_.push_back(h);
            h = norm_forward(k, h, mode);
            relu_inputs_.push_back(h);
            h = relu_forward(h);
        }
        linear_inputs_.push_back(h);
        return linear_forward(h, linears_.back());
    }

    // Accumulates parameter gradients; returns dL/dinput for completeness.
    Tensor<S> backward(const Tensor<S>& dlogits) {
        if (linear_inputs_.size() != num_hidden() + 1) {
            throw Error("model backward called without a matching forward");
        }
        Tensor<S> g = linear_backward(linear_inputs_.back(), linears_.back(), dlogits);
        for (std::size_t k = num_hidden(); k-- > 0;) {
            g = relu_backward(relu_inputs_[k], g);
            g = norm_backward(k, g);
            g = linear_backward(linear_inputs_[k], linears_[k], g);
        }
        return g;
    }

    void zero_grad() {
        for (auto& l : linears_) l.zero_grad();
        for (auto& n : norms_) n.zero_grad();
        for (auto& n : aux_norms_) {
            n.natural.zero_grad();
            n.noise.zero_grad();
        }
    }

    void sgd_step(const OptimizerConfig& opt, int epoch) {
        for (auto& l : linears_) noisebalance::sgd_step(l, opt, epoch);
        for (auto& n : norms_) {
            sgd_update(n.gamma, n.grad_gamma, n.vel_gamma, opt, epoch);
            sgd_update(n.beta, n.grad_beta, n.vel_beta, opt, epoch);
        }
        for (auto& a : aux_norms_) {
            for (auto* n : {&a.natural, &a.noise}) {
                sgd_update(n->gamma, n->grad_gamma, n->vel_gamma, opt, epoch);
                sgd_update(n->beta, n->grad_beta, n->vel_beta, opt, epoch);
            }
        }
    }

    // Input activations of the final linear layer, cached by forward().
    const Tensor<S>& final_linear_input() const {
        if (linear_inputs_.size() != num_hidden() + 1) {
            throw Error("final_linear_input requested before forward");
        }
        return linear_inputs_.back();
    }

    LayerParams<S>& final_layer() { return linears_.back(); }
    std::vector<LayerParams<S>>& linears() { return linears_; }
    const std::vector<LayerParams<S>>& linears() const { return linears_; }
    std::vector<BatchNormState<S>>& norms() { return norms_; }
    const std::vector<BatchNormState<S>>& norms() const { return norms_; }
    std::vector<AuxBnState<S>>& aux_norms() { return aux_norms_; }
    const std::vector<AuxBnState<S>>& aux_norms() const { return aux_norms_; }

    // Named tensors for checkpointing: parameters plus running statistics.
    struct NamedVec {
        std::string name;
        std::vector<S>* data;
    };
    std::vector<NamedVec> named_state() {
        std::vector<NamedVec> out;
        for (std::size_t k = 0; k < linears_.size(); ++k) {
            const auto p = "linear" + std::to_string(k);
            out.push_back({p + ".weight", &linears_[k].weights.vec()});
            out.push_back({p + ".bias", &linears_[k].bias.vec()});
        }
        auto add_bn = [&out](const std::string& p, BatchNormState<S>& n) {
            out.push_back({p + ".gamma", &n.gamma});
            out.push_back({p + ".beta", &n.beta});
            out.push_back({p + ".running_mean", &n.running_mean});
            out.push_back({p + ".running_var", &n.running_var});
        };
        for (std::size_t k = 0; k < norms_.size(); ++k) {
            add_bn("norm" + std::to_string(k), norms_[k]);
        }
        for (std::size_t k = 0; k < aux_norms_.size(); ++k) {
            add_bn("norm" + std::to_string(k) + ".natural", aux_norms_[k].natural);
            add_bn("norm" + std::to_string(k) + ".noise", aux_norms_[k].noise);
        }
        return out;
    }

private:
    void init_linear(LayerParams<S>& p, RngStream& rng) {
        const double a = cfg_.init_scale / std::sqrt(static_cast<double>(p.in_dim()));
        for (auto& w : p.weights.vec()) {
            w = static_cast<S>((rng.uniform() * 2.0 - 1.0) * a);
        }
    }

    Tensor<S> norm_forward(std::size_t k, const Tensor<S>& h, Mode mode) {
        switch (cfg_.norm_variant) {
            case NormVariant::none: return h;
            case NormVariant::standard_bn: return bn_forward(h, norms_[k], mode);
            case NormVariant::dar_bn: return dar_bn_forward(h, mask_, norms_[k], mode);
            case NormVariant::aux_bn: return aux_bn_forward(h, mask_, aux_norms_[k], mode);
        }
        throw Error("unknown norm variant");
    }

    Tensor<S> norm_backward(std::size_t k, const Tensor<S>& g) {
        switch (cfg_.norm_variant) {
            case NormVariant::none: return g;
            case NormVariant::standard_bn: return bn_backward(norm_inputs_[k], norms_[k], g);
            case NormVariant::dar_bn: return dar_bn_backward(norm_inputs_[k], mask_, norms_[k], g);
            case NormVariant::aux_bn:
                return aux_bn_backward(norm_inputs_[k], mask_, aux_norms_[k], g);
        }
        throw Error("unknown norm variant");
    }

    ModelConfig cfg_;
    std::vector<LayerParams<S>> linears_;
    std::vector<BatchNormState<S>> norms_;
    std::vector<AuxBnState<S>> aux_norms_;

    std::vector<Tensor<S>> linear_inputs_;
    std::vector<Tensor<S>> norm_inputs_;
    std::vector<Tensor<S>> relu_inputs_;
    NoiseMask mask_;
};

} // namespace noisebalance
