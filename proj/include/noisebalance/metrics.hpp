#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace noisebalance {

struct EpochStat {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double noise_fraction = 0.0; // observed share of noise slots this epoch
};

struct Metrics {
    std::vector<EpochStat> epochs;
    double overall_accuracy = 0.0;
    // NaN marks a class absent from the test set.
    std::vector<double> per_class_accuracy;
    // Group 1 = smallest 20% of classes by training-set size, group 5 = largest.
    std::array<double, 5> group_accuracy{};
    std::vector<std::int64_t> confusion; // C x C row-major, row = true class
    std::int64_t num_classes = 0;

    std::int64_t confusion_at(std::int64_t t, std::int64_t p) const {
        return confusion[static_cast<std::size_t>(t * num_classes + p)];
    }
};

} // namespace noisebalance
