#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <vector>

#include "noisebalance/tensor.hpp"

namespace noisebalance {

enum class Mode { train, eval };

// Per-example annotation: true marks an activation map that originated as a
// pure-noise image. Carried unchanged through shape-preserving layers.
struct NoiseMask {
    std::vector<std::uint8_t> flags;

    NoiseMask() = default;
    explicit NoiseMask(std::vector<std::uint8_t> f) : flags(std::move(f)) {}
    static NoiseMask all_natural(std::int64_t n) {
        return NoiseMask(std::vector<std::uint8_t>(static_cast<std::size_t>(n), 0));
    }

    std::int64_t size() const { return static_cast<std::int64_t>(flags.size()); }
    bool is_noise(std::int64_t i) const { return flags[static_cast<std::size_t>(i)] != 0; }
    void set(std::int64_t i, bool noise) { flags[static_cast<std::size_t>(i)] = noise ? 1 : 0; }

    std::int64_t noise_count() const {
        std::int64_t c = 0;
        for (auto f : flags) c += (f != 0);
        return c;
    }
    bool any_noise() const { return noise_count() > 0; }
};

namespace detail {

// Saved context from a train-mode forward over one row subset, consumed by the
// matching backward.
template <typename S>
struct BnCache {
    bool valid = false;
    bool freeze_affine = false;          // noise split under dar_bn
    std::vector<std::int64_t> rows;      // batch rows of this split, ascending
    std::vector<S> xhat;                 // gathered [rows x d x spatial]
    std::vector<double> inv_std;         // per channel, 1/sqrt(var + eps)
    Shape input_shape;
};

} // namespace detail

template <typename S>
struct BatchNormState {
    std::vector<S> gamma, beta;
    std::vector<S> running_mean, running_var;
    std::vector<S> grad_gamma, grad_beta;
    std::vector<S> vel_gamma, vel_beta;
    double eps = 1e-5;
    double momentum = 0.1; // EMA weight on the fresh batch statistics

    detail::BnCache<S> cache_primary; // full batch (bn) or natural split (dar_bn)
    detail::BnCache<S> cache_noise;   // noise split (dar_bn only)

    BatchNormState() = default;
    explicit BatchNormState(std::int64_t channels)
        : gamma(static_cast<std::size_t>(channels), S(1)),
          beta(static_cast<std::size_t>(channels), S(0)),
          running_mean(static_cast<std::size_t>(channels), S(0)),
          running_var(static_cast<std::size_t>(channels), S(1)),
          grad_gamma(static_cast<std::size_t>(channels), S(0)),
          grad_beta(static_cast<std::size_t>(channels), S(0)),
          vel_gamma(static_cast<std::size_t>(channels), S(0)),
          vel_beta(static_cast<std::size_t>(channels), S(0)) {}

    std::int64_t channels() const { return static_cast<std::int64_t>(gamma.size()); }

    void zero_grad() {
        std::fill(grad_gamma.begin(), grad_gamma.end(), S(0));
        std::fill(grad_beta.begin(), grad_beta.end(), S(0));
    }
};

// Two fully independent standard BN layers; natural and noise rows never share
// statistics, affine parameters, or gradients.
template <typename S>
struct AuxBnState {
    BatchNormState<S> natural;
    BatchNormState<S> noise;

    AuxBnState() = default;
    explicit AuxBnState(std::int64_t channels) : natural(channels), noise(channels) {}
};

namespace detail {

template <typename S>
void check_norm_input(const Tensor<S>& x) {
    if (x.ndim() != 2 && x.ndim() != 4) {
        throw ShapeError("batch norm expects 2-d or 4-d input, got " + shape_str(x.shape()));
    }
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        if (std::isnan(static_cast<double>(x[i]))) {
            throw NumericError("NaN in batch norm input of shape " + shape_str(x.shape()));
        }
    }
}

template <typename S>
std::int64_t spatial_size(const Tensor<S>& x) {
    std::int64_t sp = 1;
    for (std::size_t i = 2; i < x.ndim(); ++i) sp *= x.dim(i);
    return sp;
}

struct SplitMoments {
    std::vector<double> mean;
    std::vector<double> var; // biased (population)
    std::int64_t count = 0;  // elements per channel: rows * spatial
};

// Per-channel mean and biased variance over the given rows, accumulated in a
// fixed order (ascending row, then spatial) so that the all-rows split is
// bit-identical to an unsplit pass.
template <typename S>
SplitMoments split_moments(const Tensor<S>& x, const std::vector<std::int64_t>& rows) {
    const std::int64_t d = x.dim(1);
    const std::int64_t sp = spatial_size(x);
    SplitMoments m;
    m.count = static_cast<std::int64_t>(rows.size()) * sp;
    m.mean.assign(static_cast<std::size_t>(d), 0.0);
    m.var.assign(static_cast<std::size_t>(d), 0.0);
    const S* xd = x.data();
    for (std::int64_t r : rows) {
        const S* base = xd + r * d * sp;
        for (std::int64_t c = 0; c < d; ++c) {
            const S* ch = base + c * sp;
            double acc = 0.0;
            for (std::int64_t k = 0; k < sp; ++k) acc += static_cast<double>(ch[k]);
            m.mean[static_cast<std::size_t>(c)] += acc;
        }
    }
    const double inv = 1.0 / static_cast<double>(m.count);
    for (auto& v : m.mean) v *= inv;
    for (std::int64_t r : rows) {
        const S* base = xd + r * d * sp;
        for (std::int64_t c = 0; c < d; ++c) {
            const S* ch = base + c * sp;
            const double mu = m.mean[static_cast<std::size_t>(c)];
            double acc = 0.0;
            for (std::int64_t k = 0; k < sp; ++k) {
                const double dv = static_cast<double>(ch[k]) - mu;
                acc += dv * dv;
            }
            m.var[static_cast<std::size_t>(c)] += acc;
        }
    }
    for (auto& v : m.var) v *= inv;
    return m;
}

// Normalize the rows of x with the split's own statistics, apply the given
// affine parameters, write results at the original batch positions, and fill
// the cache for backward.
template <typename S>
void normalize_split(const Tensor<S>& x, const std::vector<std::int64_t>& rows,
                     const SplitMoments& m, const std::vector<S>& gamma,
                     const std::vector<S>& beta, double eps, bool freeze_affine,
                     Tensor<S>& out, BnCache<S>& cache) {
    const std::int64_t d = x.dim(1);
    const std::int64_t sp = spatial_size(x);
    cache.valid = true;
    cache.freeze_affine = freeze_affine;
    cache.rows = rows;
    cache.input_shape = x.shape();
    cache.inv_std.assign(static_cast<std::size_t>(d), 0.0);
    cache.xhat.assign(rows.size() * static_cast<std::size_t>(d * sp), S(0));
    for (std::int64_t c = 0; c < d; ++c) {
        cache.inv_std[static_cast<std::size_t>(c)] =
            1.0 / std::sqrt(m.var[static_cast<std::size_t>(c)] + eps);
    }
    const S* xd = x.data();
    S* od = out.data();
    S* xh = cache.xhat.data();
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const std::int64_t r = rows[k];
        const S* base = xd + r * d * sp;
        S* obase = od + r * d * sp;
        S* hbase = xh + static_cast<std::int64_t>(k) * d * sp;
        for (std::int64_t c = 0; c < d; ++c) {
            const double mu = m.mean[static_cast<std::size_t>(c)];
            const double istd = cache.inv_std[static_cast<std::size_t>(c)];
            const double g = static_cast<double>(gamma[static_cast<std::size_t>(c)]);
            const double b = static_cast<double>(beta[static_cast<std::size_t>(c)]);
            for (std::int64_t p = 0; p < sp; ++p) {
                const double h = (static_cast<double>(base[c * sp + p]) - mu) * istd;
                hbase[c * sp + p] = static_cast<S>(h);
                obase[c * sp + p] = static_cast<S>(g * h + b);
            }
        }
    }
}

// EMA update per Eqs. mu <- eta*E + (1-eta)*mu, v <- eta*Var_unbiased + (1-eta)*v.
template <typename S>
void ema_update(BatchNormState<S>& st, const SplitMoments& m) {
    const double eta = st.momentum;
    const double bessel = static_cast<double>(m.count) / static_cast<double>(m.count - 1);
    for (std::int64_t c = 0; c < st.channels(); ++c) {
        const auto i = static_cast<std::size_t>(c);
        st.running_mean[i] = static_cast<S>(eta * m.mean[i] + (1.0 - eta) * static_cast<double>(st.running_mean[i]));
        st.running_var[i] = static_cast<S>(eta * (m.var[i] * bessel) + (1.0 - eta) * static_cast<double>(st.running_var[i]));
    }
}

// Backward through one split's normalization. dx rows are written at the
// cached batch positions; affine gradients accumulate unless the split was
// applied with frozen parameters.
template <typename S>
void backward_split(const BnCache<S>& cache, BatchNormState<S>& st, const Tensor<S>& upstream,
                    Tensor<S>& dx) {
    const std::int64_t d = upstream.dim(1);
    const std::int64_t sp = spatial_size(upstream);
    const double m = static_cast<double>(cache.rows.size()) * static_cast<double>(sp);
    const S* u = upstream.data();
    const S* xh = cache.xhat.data();
    S* dxd = dx.data();
    std::vector<double> sum_g(static_cast<std::size_t>(d), 0.0);
    std::vector<double> sum_gx(static_cast<std::size_t>(d), 0.0);
    for (std::size_t k = 0; k < cache.rows.size(); ++k) {
        const S* ub = u + cache.rows[k] * d * sp;
        const S* hb = xh + static_cast<std::int64_t>(k) * d * sp;
        for (std::int64_t c = 0; c < d; ++c) {
            double sg = 0.0, sgx = 0.0;
            for (std::int64_t p = 0; p < sp; ++p) {
                const double g = static_cast<double>(ub[c * sp + p]);
                sg += g;
                sgx += g * static_cast<double>(hb[c * sp + p]);
            }
            sum_g[static_cast<std::size_t>(c)] += sg;
            sum_gx[static_cast<std::size_t>(c)] += sgx;
        }
    }
    if (!cache.freeze_affine) {
        for (std::int64_t c = 0; c < d; ++c) {
            const auto i = static_cast<std::size_t>(c);
            st.grad_gamma[i] += static_cast<S>(sum_gx[i]);
            st.grad_beta[i] += static_cast<S>(sum_g[i]);
        }
    }
    for (std::size_t k = 0; k < cache.rows.size(); ++k) {
        const S* ub = u + cache.rows[k] * d * sp;
        const S* hb = xh + static_cast<std::int64_t>(k) * d * sp;
        S* db = dxd + cache.rows[k] * d * sp;
        for (std::int64_t c = 0; c < d; ++c) {
            const auto i = static_cast<std::size_t>(c);
            const double scale = static_cast<double>(st.gamma[i]) * cache.inv_std[i] / m;
            for (std::int64_t p = 0; p < sp; ++p) {
                const double g = static_cast<double>(ub[c * sp + p]);
                const double h = static_cast<double>(hb[c * sp + p]);
                db[c * sp + p] = static_cast<S>(scale * (m * g - sum_g[i] - h * sum_gx[i]));
            }
        }
    }
}

template <typename S>
Tensor<S> eval_forward(const Tensor<S>& x, const BatchNormState<S>& st) {
    const std::int64_t n = x.dim(0), d = x.dim(1);
    const std::int64_t sp = spatial_size(x);
    Tensor<S> out(x.shape());
    const S* xd = x.data();
    S* od = out.data();
    for (std::int64_t r = 0; r < n; ++r) {
        for (std::int64_t c = 0; c < d; ++c) {
            const auto i = static_cast<std::size_t>(c);
            const double mu = static_cast<double>(st.running_mean[i]);
            const double istd = 1.0 / std::sqrt(static_cast<double>(st.running_var[i]) + st.eps);
            const double g = static_cast<double>(st.gamma[i]);
            const double b = static_cast<double>(st.beta[i]);
            const S* xb = xd + (r * d + c) * sp;
            S* ob = od + (r * d + c) * sp;
            for (std::int64_t p = 0; p < sp; ++p) {
                ob[p] = static_cast<S>(g * ((static_cast<double>(xb[p]) - mu) * istd) + b);
            }
        }
    }
    return out;
}

template <typename S>
void check_channels(const Tensor<S>& x, const BatchNormState<S>& st) {
    if (x.dim(1) != st.channels()) {
        throw ShapeError("batch norm state has " + std::to_string(st.channels()) +
                         " channels, input is " + shape_str(x.shape()));
    }
}

inline std::vector<std::int64_t> all_rows(std::int64_t n) {
    std::vector<std::int64_t> rows(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) rows[static_cast<std::size_t>(i)] = i;
    return rows;
}

inline void warn_singleton_split(const char* which) {
    std::fprintf(stderr, "[noisebalance] warning: %s split of size 1 in train-mode batch norm\n", which);
}

} // namespace detail

// Standard batch normalization over the batch (and spatial, for 4-d input)
// axes, per channel. Train mode normalizes with biased batch variance and
// updates the EMA running statistics with unbiased variance; eval mode is a
// pure function of the running statistics.
template <typename S>
Tensor<S> bn_forward(const Tensor<S>& x, BatchNormState<S>& state, Mode mode) {
    detail::check_norm_input(x);
    detail::check_channels(x, state);
    if (mode == Mode::eval) {
        return detail::eval_forward(x, const_cast<const BatchNormState<S>&>(state));
    }
    if (x.dim(0) < 2) {
        throw ShapeError("train-mode batch norm requires batch size >= 2, got " +
                         shape_str(x.shape()));
    }
    Tensor<S> out(x.shape());
    const auto rows = detail::all_rows(x.dim(0));
    const auto m = detail::split_moments(x, rows);
    detail::normalize_split(x, rows, m, state.gamma, state.beta, state.eps, false, out,
                            state.cache_primary);
    detail::ema_update(state, m);
    state.cache_noise.valid = false;
    return out;
}

template <typename S>
Tensor<S> bn_backward(const Tensor<S>& x, BatchNormState<S>& state, const Tensor<S>& upstream) {
    require_same_shape(x, upstream, "bn_backward");
    if (!state.cache_primary.valid || state.cache_primary.input_shape != x.shape() ||
        static_cast<std::int64_t>(state.cache_primary.rows.size()) != x.dim(0)) {
        throw Error("bn_backward called without a matching train-mode forward");
    }
    Tensor<S> dx(x.shape());
    detail::backward_split(state.cache_primary, state, upstream, dx);
    return dx;
}

// Distribution-aware routing: natural and noise rows are normalized with their
// own batch statistics, both are scaled and shifted with the natural affine
// parameters (frozen with respect to the noise split), and running statistics
// track the natural split only. Eval mode ignores the mask entirely.
template <typename S>
Tensor<S> dar_bn_forward(const Tensor<S>& x, const NoiseMask& mask, BatchNormState<S>& state,
                         Mode mode) {
    detail::check_norm_input(x);
    detail::check_channels(x, state);
    if (mask.size() != x.dim(0)) {
        throw ShapeError("noise mask length " + std::to_string(mask.size()) +
                         " does not match batch size " + std::to_string(x.dim(0)));
    }
    if (mode == Mode::eval) {
        return detail::eval_forward(x, const_cast<const BatchNormState<S>&>(state));
    }
    std::vector<std::int64_t> nat_rows, noise_rows;
    for (std::int64_t i = 0; i < x.dim(0); ++i) {
        (mask.is_noise(i) ? noise_rows : nat_rows).push_back(i);
    }
    Tensor<S> out(x.shape());
    state.cache_primary.valid = false;
    state.cache_noise.valid = false;
    if (!nat_rows.empty()) {
        if (nat_rows.size() == 1) detail::warn_singleton_split("natural");
        const auto m = detail::split_moments(x, nat_rows);
        detail::normalize_split(x, nat_rows, m, state.gamma, state.beta, state.eps, false, out,
                                state.cache_primary);
        if (nat_rows.size() >= 2) detail::ema_update(state, m);
    }
    if (!noise_rows.empty()) {
        if (noise_rows.size() == 1) detail::warn_singleton_split("noise");
        const auto m = detail::split_moments(x, noise_rows);
        detail::normalize_split(x, noise_rows, m, state.gamma, state.beta, state.eps, true, out,
                                state.cache_noise);
    }
    return out;
}

template <typename S>
Tensor<S> dar_bn_backward(const Tensor<S>& x, const NoiseMask& mask, BatchNormState<S>& state,
                          const Tensor<S>& upstream) {
    require_same_shape(x, upstream, "dar_bn_backward");
    if (mask.size() != x.dim(0)) {
        throw ShapeError("noise mask length " + std::to_string(mask.size()) +
                         " does not match batch size " + std::to_string(x.dim(0)));
    }
    const bool has_any =
        (state.cache_primary.valid && state.cache_primary.input_shape == x.shape()) ||
        (state.cache_noise.valid && state.cache_noise.input_shape == x.shape());
    if (!has_any) {
        throw Error("dar_bn_backward called without a matching train-mode forward");
    }
    Tensor<S> dx(x.shape());
    if (state.cache_primary.valid) detail::backward_split(state.cache_primary, state, upstream, dx);
    if (state.cache_noise.valid) detail::backward_split(state.cache_noise, state, upstream, dx);
    return dx;
}

// AdvProp-style auxiliary normalization: natural rows through state.natural,
// noise rows through state.noise, each a fully independent standard BN with
// its own trainable affine parameters and running statistics.
template <typename S>
Tensor<S> aux_bn_forward(const Tensor<S>& x, const NoiseMask& mask, AuxBnState<S>& state,
                         Mode mode) {
    detail::check_norm_input(x);
    detail::check_channels(x, state.natural);
    if (mask.size() != x.dim(0)) {
        throw ShapeError("noise mask length " + std::to_string(mask.size()) +
                         " does not match batch size " + std::to_string(x.dim(0)));
    }
    if (mode == Mode::eval) {
        return detail::eval_forward(x, const_cast<const BatchNormState<S>&>(state.natural));
    }
    std::vector<std::int64_t> nat_rows, noise_rows;
    for (std::int64_t i = 0; i < x.dim(0); ++i) {
        (mask.is_noise(i) ? noise_rows : nat_rows).push_back(i);
    }
    Tensor<S> out(x.shape());
    state.natural.cache_primary.valid = false;
    state.natural.cache_noise.valid = false;
    state.noise.cache_primary.valid = false;
    state.noise.cache_noise.valid = false;
    if (!nat_rows.empty()) {
        if (nat_rows.size() == 1) detail::warn_singleton_split("natural");
        const auto m = detail::split_moments(x, nat_rows);
        detail::normalize_split(x, nat_rows, m, state.natural.gamma, state.natural.beta,
                                state.natural.eps, false, out, state.natural.cache_primary);
        if (nat_rows.size() >= 2) detail::ema_update(state.natural, m);
    }
    if (!noise_rows.empty()) {
        if (noise_rows.size() == 1) detail::warn_singleton_split("noise");
        const auto m = detail::split_moments(x, noise_rows);
        detail::normalize_split(x, noise_rows, m, state.noise.gamma, state.noise.beta,
                                state.noise.eps, false, out, state.noise.cache_primary);
        if (noise_rows.size() >= 2) detail::ema_update(state.noise, m);
    }
    return out;
}

template <typename S>
Tensor<S> aux_bn_backward(const Tensor<S>& x, const NoiseMask& mask, AuxBnState<S>& state,
                          const Tensor<S>& upstream) {
    require_same_shape(x, upstream, "aux_bn_backward");
    if (mask.size() != x.dim(0)) {
        throw ShapeError("noise mask length " + std::to_string(mask.size()) +
                         " does not match batch size " + std::to_string(x.dim(0)));
    }
    const bool has_any =
        (state.natural.cache_primary.valid && state.natural.cache_primary.input_shape == x.shape()) ||
        (state.noise.cache_primary.valid && state.noise.cache_primary.input_shape == x.shape());
    if (!has_any) {
        throw Error("aux_bn_backward called without a matching train-mode forward");
    }
    Tensor<S> dx(x.shape());
    if (state.natural.cache_primary.valid) {
        detail::backward_split(state.natural.cache_primary, state.natural, upstream, dx);
    }
    if (state.noise.cache_primary.valid) {
        detail::backward_split(state.noise.cache_primary, state.noise, upstream, dx);
    }
    return dx;
}

} // namespace noisebalance
