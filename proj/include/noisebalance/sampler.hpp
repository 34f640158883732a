#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "noisebalance/dataset.hpp"
#include "noisebalance/normalization.hpp"
#include "noisebalance/rng.hpp"

namespace noisebalance {

enum class OpenMode { longtail, fixed_ratio };
enum class NoiseKind { pure, additive };

struct OpenConfig {
    double delta = 1.0 / 3.0;   // noise ratio; scales the replacement probability
    OpenMode mode = OpenMode::longtail;
    double fixed_noise_fraction = 0.2; // fixed_ratio mode only (1:4 noise-to-real)
    std::int64_t batch_size = 128;
    // Replacement payload: fresh pure-noise image, or additive Gaussian noise
    // on the selected natural image (both keep the label and set the mask).
    NoiseKind noise_kind = NoiseKind::pure;
    double additive_sigma = 0.0;

    void validate() const {
        if (delta < 0.0 || delta > 1.0) throw ConfigError("open.delta must be in [0,1]");
        if (fixed_noise_fraction < 0.0 || fixed_noise_fraction >= 1.0) {
            throw ConfigError("open.fixed_noise_fraction must be in [0,1)");
        }
        if (batch_size < 1) throw ConfigError("open.batch_size must be positive");
        if (additive_sigma < 0.0) throw ConfigError("open.additive_sigma must be nonnegative");
    }
};

struct Batch {
    Tensor<float> images; // B x C x H x W
    std::vector<std::int32_t> labels;
    NoiseMask noise_mask;
};

// Class-uniform sampling with replacement: uniform class choice, then uniform
// instance choice within the class.
std::pair<Tensor<float>, std::vector<std::int32_t>> sample_balanced_batch(const Dataset& d,
                                                                          std::int64_t batch_size,
                                                                          RngStream& rng);

// Batches per balanced epoch: ceil(C * n_max / batch_size).
std::int64_t balanced_epoch_batches(const Dataset& d, std::int64_t batch_size);

// xi = (1 - rho) * delta
double replacement_probability(double rho, double delta);

// Per-pixel Normal(mean[l], std[l]^2) per channel, before clamping.
Tensor<float> sample_noise_image_raw(const ChannelStats& stats, std::int64_t channels,
                                     std::int64_t height, std::int64_t width, RngStream& rng);

// The raw sample clamped elementwise to [0,1].
Tensor<float> sample_noise_image(const ChannelStats& stats, std::int64_t channels,
                                 std::int64_t height, std::int64_t width, RngStream& rng);

// Per slot: replace the image with probability (1-rho[label])*delta (longtail
// mode) or fixed_noise_fraction (fixed_ratio mode), keeping the label and
// flagging the mask.
Batch apply_open(Tensor<float> images, std::vector<std::int32_t> labels, const Dataset& d,
                 const ChannelStats& stats, const OpenConfig& cfg, RngStream& rng);

} // namespace noisebalance
