#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "noisebalance/rng.hpp"
#include "noisebalance/tensor.hpp"

namespace noisebalance {

// Per-channel pixel statistics over every pixel of every image in a dataset.
// std is the population (biased) standard deviation.
struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> std;
};

// An image classification dataset. Images live in [0,1]; labels index classes.
// Immutable after construction.
class Dataset {
public:
    Dataset() = default;
    Dataset(std::string name, Tensor<float> images, std::vector<std::int32_t> labels,
            std::int64_t num_classes);

    const std::string& name() const { return name_; }
    const Tensor<float>& images() const { return images_; }
    const std::vector<std::int32_t>& labels() const { return labels_; }
    const std::vector<std::int64_t>& class_counts() const { return class_counts_; }

    std::int64_t size() const { return images_.empty() ? 0 : images_.dim(0); }
    std::int64_t num_classes() const { return static_cast<std::int64_t>(class_counts_.size()); }
    std::int64_t channels() const { return images_.dim(1); }
    std::int64_t height() const { return images_.dim(2); }
    std::int64_t width() const { return images_.dim(3); }
    std::int64_t pixels_per_image() const { return channels() * height() * width(); }

    // rho_i = n_i / n_max; 1 for the largest class, in (0,1] elsewhere.
    std::vector<double> representation_ratios() const;

    // Row indices per class, ascending.
    const std::vector<std::vector<std::int64_t>>& per_class_indices() const {
        return per_class_indices_;
    }

    bool balanced() const;

private:
    std::string name_;
    Tensor<float> images_; // N x C x H x W
    std::vector<std::int32_t> labels_;
    std::vector<std::int64_t> class_counts_;
    std::vector<std::vector<std::int64_t>> per_class_indices_;
};

struct LongTailSpec {
    std::int64_t num_classes = 10;
    std::int64_t n_max = 500;
    double imbalance_ratio = 100.0;

    void validate() const;
};

struct SyntheticSpec {
    std::int64_t num_classes = 10;
    std::int64_t channels = 1;
    std::int64_t height = 16;
    std::int64_t width = 16;
    std::uint64_t prototype_seed = 7;
    double within_class_std = 0.15;
    std::int64_t shift_range = 2; // pixels
    std::int64_t test_per_class = 100;

    void validate() const;
};

// n_i = round(n_max * IR^(-(i-1)/(C-1))), round-half-up, clamped to >= 1.
// Nonincreasing; endpoints are n_max and ~n_max/IR.
std::vector<std::int64_t> longtail_sizes(const LongTailSpec& spec);

// Keep, per class, the first sizes[c] samples under a seed-determined
// permutation of that class's rows.
Dataset build_longtail(const Dataset& balanced, const LongTailSpec& spec, std::uint64_t seed);

ChannelStats channel_stats(const Dataset& d);

// Deterministic synthetic image classification data: one smoothed random
// prototype per class; each sample is the prototype circularly shifted by
// uniform offsets in [-shift_range, shift_range]^2 plus Gaussian pixel noise,
// clamped to [0,1]. The test split is balanced and drawn from a disjoint
// stream.
struct SynthDatasets {
    Dataset train;
    Dataset test;
};
SynthDatasets synth_generate(const SyntheticSpec& spec, const std::vector<std::int64_t>& sizes,
                             std::uint64_t seed);

// Binary `ILSB1` container; round-trips bit-exactly. See README for layout.
void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path);

} // namespace noisebalance
