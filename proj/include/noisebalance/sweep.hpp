#pragma once

#include <algorithm>
#include <cstdint>
#include <utility>
#include <vector>

#include "noisebalance/parallel.hpp"
#include "noisebalance/train.hpp"

namespace noisebalance {

struct SweepRow {
    double sigma = 0.0;
    bool pure = false; // the reference run with pure-noise replacement
    double overall_acc = 0.0;
    double minority_group_acc = 0.0; // group 1, the smallest classes
    int seed_count = 0;
};

// One training run per (sigma, seed) where the replacement step adds
// Gaussian(0, sigma^2) to the selected natural image instead of substituting
// pure noise (the mask is still set, so routing applies), plus a pure-noise
// reference. Rows are means over seeds, sorted by ascending sigma with the
// pure row last.
template <typename S>
std::vector<SweepRow> additive_noise_sweep(const ModelConfig& model_cfg, const TrainConfig& base,
                                           const Dataset& trainset, const Dataset& testset,
                                           std::vector<double> sigmas,
                                           const std::vector<std::uint64_t>& seeds,
                                           int threads = 1) {
    if (seeds.empty()) throw ConfigError("additive_noise_sweep needs at least one seed");
    for (double s : sigmas) {
        if (s < 0) throw ConfigError("sweep sigmas must be nonnegative");
    }
    std::sort(sigmas.begin(), sigmas.end());

    struct Job {
        TrainConfig cfg;
        std::size_t row;
    };
    std::vector<SweepRow> rows;
    std::vector<Job> jobs;
    for (double sigma : sigmas) {
        TrainConfig cfg = base;
        cfg.open.noise_kind = NoiseKind::additive;
        cfg.open.additive_sigma = sigma;
        for (auto seed : seeds) {
            cfg.master_seed = seed;
            jobs.push_back({cfg, rows.size()});
        }
        rows.push_back({sigma, false, 0.0, 0.0, static_cast<int>(seeds.size())});
    }
    {
        TrainConfig cfg = base;
        cfg.open.noise_kind = NoiseKind::pure;
        for (auto seed : seeds) {
            cfg.master_seed = seed;
            jobs.push_back({cfg, rows.size()});
        }
        rows.push_back({0.0, true, 0.0, 0.0, static_cast<int>(seeds.size())});
    }

    std::vector<std::pair<double, double>> results(jobs.size());
    parallel_for(static_cast<int>(jobs.size()), threads, [&](int i) {
        const auto& job = jobs[static_cast<std::size_t>(i)];
        auto r = train<S>(model_cfg, job.cfg, trainset, testset);
        results[static_cast<std::size_t>(i)] = {r.metrics.overall_accuracy,
                                                r.metrics.group_accuracy[0]};
    });
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        auto& row = rows[jobs[i].row];
        row.overall_acc += results[i].first / static_cast<double>(seeds.size());
        row.minority_group_acc += results[i].second / static_cast<double>(seeds.size());
    }
    return rows;
}

} // namespace noisebalance
