#include "noisebalance/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace noisebalance {

std::pair<Tensor<float>, std::vector<std::int32_t>> sample_balanced_batch(const Dataset& d,
                                                                          std::int64_t batch_size,
                                                                          RngStream& rng) {
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    const auto c = d.num_classes();
    for (std::int64_t k = 0; k < c; ++k) {
        if (d.class_counts()[static_cast<std::size_t>(k)] == 0) {
            throw ConfigError("balanced sampling with empty class " + std::to_string(k));
        }
    }
    const auto ppi = d.pixels_per_image();
    Tensor<float> images({batch_size, d.channels(), d.height(), d.width()});
    std::vector<std::int32_t> labels(static_cast<std::size_t>(batch_size));
    for (std::int64_t j = 0; j < batch_size; ++j) {
        const auto cls = rng.uniform_int(0, c - 1);
        const auto& rows = d.per_class_indices()[static_cast<std::size_t>(cls)];
        const auto pick = rows[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(rows.size()) - 1))];
        std::memcpy(images.data() + j * ppi, d.images().data() + pick * ppi,
                    sizeof(float) * static_cast<std::size_t>(ppi));
        labels[static_cast<std::size_t>(j)] = static_cast<std::int32_t>(cls);
    }
    return {std::move(images), std::move(labels)};
}

std::int64_t balanced_epoch_batches(const Dataset& d, std::int64_t batch_size) {
    const auto n_max = *std::max_element(d.class_counts().begin(), d.class_counts().end());
    const auto total = d.num_classes() * n_max;
    return (total + batch_size - 1) / batch_size;
}

double replacement_probability(double rho, double delta) {
    if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("rho must be in (0,1]");
    if (delta < 0.0 || delta > 1.0) throw ConfigError("delta must be in [0,1]");
    return (1.0 - rho) * delta;
}

Tensor<float> sample_noise_image_raw(const ChannelStats& stats, std::int64_t channels,
                                     std::int64_t height, std::int64_t width, RngStream& rng) {
    if (static_cast<std::int64_t>(stats.mean.size()) != channels ||
        static_cast<std::int64_t>(stats.std.size()) != channels) {
        throw ShapeError("channel stats cover " + std::to_string(stats.mean.size()) +
                         " channels, image has " + std::to_string(channels));
    }
    for (double s : stats.std) {
        if (!std::isfinite(s)) throw NumericError("non-finite channel std");
    }
    Tensor<float> img({channels, height, width});
    float* px = img.data();
    const auto sp = height * width;
    for (std::int64_t c = 0; c < channels; ++c) {
        const double mu = stats.mean[static_cast<std::size_t>(c)];
        const double sd = stats.std[static_cast<std::size_t>(c)];
        for (std::int64_t p = 0; p < sp; ++p) {
            px[c * sp + p] = static_cast<float>(mu + sd * rng.normal());
        }
    }
    return img;
}

Tensor<float> sample_noise_image(const ChannelStats& stats, std::int64_t channels,
                                 std::int64_t height, std::int64_t width, RngStream& rng) {
    Tensor<float> img = sample_noise_image_raw(stats, channels, height, width, rng);
    for (auto& v : img.vec()) v = std::min(1.0f, std::max(0.0f, v));
    return img;
}

Batch apply_open(Tensor<float> images, std::vector<std::int32_t> labels, const Dataset& d,
                 const ChannelStats& stats, const OpenConfig& cfg, RngStream& rng) {
    cfg.validate();
    images.require_ndim(4, "apply_open images");
    const std::int64_t b = images.dim(0);
    if (static_cast<std::int64_t>(labels.size()) != b) {
        throw ShapeError("apply_open: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(b));
    }
    if (stats.mean.empty()) throw ConfigError("apply_open needs channel statistics");
    const auto rho = d.representation_ratios();
    const auto ppi = images.dim(1) * images.dim(2) * images.dim(3);
    NoiseMask mask = NoiseMask::all_natural(b);
    for (std::int64_t j = 0; j < b; ++j) {
        const auto y = labels[static_cast<std::size_t>(j)];
        if (y < 0 || y >= d.num_classes()) {
            throw ShapeError("apply_open: label " + std::to_string(y) + " out of range");
        }
        const double xi = cfg.mode == OpenMode::longtail
                              ? replacement_probability(rho[static_cast<std::size_t>(y)], cfg.delta)
                              : cfg.fixed_noise_fraction;
        if (!rng.bernoulli(xi)) continue;
        mask.set(j, true);
        float* dst = images.data() + j * ppi;
        if (cfg.noise_kind == NoiseKind::pure) {
            const auto noise =
                sample_noise_image(stats, images.dim(1), images.dim(2), images.dim(3), rng);
            std::memcpy(dst, noise.data(), sizeof(float) * static_cast<std::size_t>(ppi));
        } else {
            for (std::int64_t p = 0; p < ppi; ++p) {
                const double v = static_cast<double>(dst[p]) + cfg.additive_sigma * rng.normal();
                dst[p] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
            }
        }
    }
    return Batch{std::move(images), std::move(labels), std::move(mask)};
}

} // namespace noisebalance
