#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "noisebalance/dataset.hpp"
#include "noisebalance/metrics.hpp"
#include "noisebalance/model.hpp"
#include "noisebalance/sampler.hpp"

namespace noisebalance {

enum class Precision { single, dbl };

struct TrainConfig {
    int epochs = 60;
    // OPeN activates at this epoch; -1 resolves to max(0, epochs - 20).
    int defer_epoch = -1;
    OptimizerConfig optimizer{0.1, 0.9, 2e-4, {{40, 0.1}, {50, 0.1}}};
    OpenConfig open;
    bool augment_flip = true; // natural images only
    std::uint64_t master_seed = 1;
    Precision precision = Precision::single;

    int resolved_defer() const { return defer_epoch < 0 ? std::max(0, epochs - 20) : defer_epoch; }

    void validate() const {
        if (epochs < 0) throw ConfigError("train.epochs must be nonnegative");
        const int d = resolved_defer();
        if (d < 0 || d > epochs) throw ConfigError("train.defer_epoch must be in [0, epochs]");
        optimizer.validate();
        open.validate();
    }
};

namespace detail {

// Horizontal flip (reverse the W axis) with probability 1/2 per image. One
// uniform draw is consumed per image regardless of the outcome.
inline void flip_batch(Tensor<float>& images, RngStream& rng) {
    const std::int64_t n = images.dim(0), ch = images.dim(1), h = images.dim(2), w = images.dim(3);
    float* px = images.data();
    for (std::int64_t i = 0; i < n; ++i) {
        if (!rng.bernoulli(0.5)) continue;
        for (std::int64_t c = 0; c < ch; ++c) {
            for (std::int64_t y = 0; y < h; ++y) {
                float* row = px + ((i * ch + c) * h + y) * w;
                std::reverse(row, row + w);
            }
        }
    }
}

template <typename S>
Tensor<S> flatten_to(const Tensor<float>& images) {
    const std::int64_t n = images.dim(0);
    const std::int64_t d = images.numel() / n;
    std::vector<S> data(static_cast<std::size_t>(images.numel()));
    const float* src = images.data();
    for (std::int64_t i = 0; i < images.numel(); ++i) data[static_cast<std::size_t>(i)] = static_cast<S>(src[i]);
    return Tensor<S>({n, d}, std::move(data));
}

} // namespace detail

// Classes bucketed into five groups by ascending training-set size
// (deterministic tie-break on class index); out[g] lists the classes of
// group g, g=0 holding the smallest classes.
inline std::vector<std::vector<std::int64_t>> class_groups(
    const std::vector<std::int64_t>& train_class_counts) {
    const auto c = static_cast<std::int64_t>(train_class_counts.size());
    std::vector<std::int64_t> order(static_cast<std::size_t>(c));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
        const auto ca = train_class_counts[static_cast<std::size_t>(a)];
        const auto cb = train_class_counts[static_cast<std::size_t>(b)];
        return ca != cb ? ca < cb : a < b;
    });
    std::vector<std::vector<std::int64_t>> groups(5);
    for (std::int64_t g = 0; g < 5; ++g) {
        const auto lo = g * c / 5, hi = (g + 1) * c / 5;
        for (std::int64_t i = lo; i < hi; ++i) {
            groups[static_cast<std::size_t>(g)].push_back(order[static_cast<std::size_t>(i)]);
        }
    }
    return groups;
}

// Eval-mode forward over a balanced test set; per-class, grouped, and overall
// accuracy plus the confusion matrix. Group membership is determined by the
// training-set class sizes. Mutates nothing in the model.
template <typename S>
Metrics evaluate(Mlp<S>& model, const Dataset& test,
                 const std::vector<std::int64_t>& train_class_counts) {
    if (static_cast<std::int64_t>(train_class_counts.size()) != test.num_classes()) {
        throw ConfigError("evaluate: train class counts cover " +
                          std::to_string(train_class_counts.size()) + " classes, test has " +
                          std::to_string(test.num_classes()));
    }
    if (!test.balanced()) {
        std::fprintf(stderr, "[noisebalance] warning: test set is not class-balanced\n");
    }
    const std::int64_t c = test.num_classes();
    Metrics m;
    m.num_classes = c;
    m.confusion.assign(static_cast<std::size_t>(c * c), 0);

    const std::int64_t chunk = 256;
    const auto ppi = test.pixels_per_image();
    for (std::int64_t start = 0; start < test.size(); start += chunk) {
        const auto stop = std::min(test.size(), start + chunk);
        const auto rows = stop - start;
        std::vector<S> data(static_cast<std::size_t>(rows * ppi));
        const float* src = test.images().data() + start * ppi;
        for (std::int64_t i = 0; i < rows * ppi; ++i) data[static_cast<std::size_t>(i)] = static_cast<S>(src[i]);
        Tensor<S> x({rows, ppi}, std::move(data));
        const auto logits = model.forward(x, NoiseMask::all_natural(rows), Mode::eval);
        for (std::int64_t r = 0; r < rows; ++r) {
            std::int64_t best = 0;
            for (std::int64_t j = 1; j < c; ++j) {
                if (logits.at(r, j) > logits.at(r, best)) best = j;
            }
            const auto truth = test.labels()[static_cast<std::size_t>(start + r)];
            m.confusion[static_cast<std::size_t>(truth * c + best)]++;
        }
    }

    m.per_class_accuracy.assign(static_cast<std::size_t>(c),
                                std::numeric_limits<double>::quiet_NaN());
    std::int64_t total = 0, correct = 0;
    for (std::int64_t t = 0; t < c; ++t) {
        std::int64_t row_total = 0;
        for (std::int64_t p = 0; p < c; ++p) row_total += m.confusion_at(t, p);
        if (row_total > 0) {
            m.per_class_accuracy[static_cast<std::size_t>(t)] =
                static_cast<double>(m.confusion_at(t, t)) / static_cast<double>(row_total);
        }
        total += row_total;
        correct += m.confusion_at(t, t);
    }
    if (test.balanced()) {
        // On a balanced test set the overall accuracy is the mean of the
        // per-class accuracies; computing it that way keeps the identity exact.
        double acc = 0.0;
        for (auto v : m.per_class_accuracy) acc += v;
        m.overall_accuracy = acc / static_cast<double>(c);
    } else {
        m.overall_accuracy = static_cast<double>(correct) / static_cast<double>(total);
    }

    const auto groups = class_groups(train_class_counts);
    for (std::size_t g = 0; g < 5; ++g) {
        double acc = 0.0;
        std::int64_t seen = 0;
        for (auto cls : groups[g]) {
            const double a = m.per_class_accuracy[static_cast<std::size_t>(cls)];
            if (!std::isnan(a)) {
                acc += a;
                ++seen;
            }
        }
        m.group_accuracy[g] = seen > 0 ? acc / static_cast<double>(seen)
                                       : std::numeric_limits<double>::quiet_NaN();
    }
    return m;
}

// Deferred-OPeN training: plain shuffled ERM over the imbalanced data before
// defer_epoch, then balanced oversampling with per-slot noise replacement.
// Deterministic given (configs, dataset, master_seed).
template <typename S>
struct TrainRun {
    Mlp<S> model;
    Metrics metrics;
};

template <typename S>
TrainRun<S> train(const ModelConfig& model_cfg_in, const TrainConfig& cfg, const Dataset& trainset,
                  const Dataset& testset) {
    cfg.validate();
    if (trainset.size() == 0) throw ConfigError("train: empty dataset");
    ModelConfig model_cfg = model_cfg_in;
    if (model_cfg.input_dim == 0) model_cfg.input_dim = trainset.pixels_per_image();
    if (model_cfg.num_classes == 0) model_cfg.num_classes = trainset.num_classes();
    if (model_cfg.input_dim != trainset.pixels_per_image()) {
        throw ConfigError("model.input_dim " + std::to_string(model_cfg.input_dim) +
                          " does not match dataset pixels " +
                          std::to_string(trainset.pixels_per_image()));
    }
    if (model_cfg.num_classes != trainset.num_classes()) {
        throw ConfigError("model.num_classes does not match dataset");
    }
    model_cfg.validate();

    RngStream init_rng(cfg.master_seed, "init");
    RngStream shuffle_rng(cfg.master_seed, "shuffle");
    RngStream balanced_rng(cfg.master_seed, "balanced-sampling");
    RngStream noise_rng(cfg.master_seed, "noise-images");
    RngStream flip_rng(cfg.master_seed, "augment-flip");

    Mlp<S> model(model_cfg, init_rng);
    const auto stats = channel_stats(trainset);
    const auto defer = cfg.resolved_defer();
    const auto b = cfg.open.batch_size;
    const auto ppi = trainset.pixels_per_image();

    Metrics metrics;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double loss_sum = 0.0;
        std::int64_t batches = 0;
        std::int64_t noise_slots = 0, total_slots = 0;
        auto step = [&](Tensor<float> images, std::vector<std::int32_t> labels, NoiseMask mask) {
            auto x = detail::flatten_to<S>(images);
            const auto logits = model.forward(x, mask, Mode::train);
            auto [loss, dlogits] = softmax_cross_entropy(logits, labels);
            if (!std::isfinite(loss)) {
                throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batches) + ", lr " +
                                   std::to_string(cfg.optimizer.lr_at(epoch)));
            }
            model.zero_grad();
            model.backward(dlogits);
            model.sgd_step(cfg.optimizer, epoch);
            loss_sum += loss;
            ++batches;
            noise_slots += mask.noise_count();
            total_slots += mask.size();
        };

        if (epoch < defer) {
            // ERM phase: sequential shuffled passes, no re-balancing, no noise.
            std::vector<std::int64_t> order(static_cast<std::size_t>(trainset.size()));
            std::iota(order.begin(), order.end(), 0);
            for (std::int64_t i = trainset.size() - 1; i > 0; --i) {
                const auto j = shuffle_rng.uniform_int(0, i);
                std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
            }
            for (std::int64_t start = 0; start < trainset.size(); start += b) {
                const auto stop = std::min(trainset.size(), start + b);
                const auto rows = stop - start;
                if (rows < 2) break; // batch norm needs >= 2 rows in train mode
                Tensor<float> images({rows, trainset.channels(), trainset.height(), trainset.width()});
                std::vector<std::int32_t> labels(static_cast<std::size_t>(rows));
                for (std::int64_t r = 0; r < rows; ++r) {
                    const auto src = order[static_cast<std::size_t>(start + r)];
                    std::memcpy(images.data() + r * ppi, trainset.images().data() + src * ppi,
                                sizeof(float) * static_cast<std::size_t>(ppi));
                    labels[static_cast<std::size_t>(r)] = trainset.labels()[static_cast<std::size_t>(src)];
                }
                if (cfg.augment_flip) detail::flip_batch(images, flip_rng);
                step(std::move(images), std::move(labels), NoiseMask::all_natural(rows));
            }
        } else {
            const auto nb = balanced_epoch_batches(trainset, b);
            for (std::int64_t i = 0; i < nb; ++i) {
                auto [images, labels] = sample_balanced_batch(trainset, b, balanced_rng);
                // Flip resolves before the replacement decision; replaced
                // slots are overwritten wholesale so noise is never flipped.
                if (cfg.augment_flip) detail::flip_batch(images, flip_rng);
                auto batch = apply_open(std::move(images), std::move(labels), trainset, stats,
                                        cfg.open, noise_rng);
                step(std::move(batch.images), std::move(batch.labels), std::move(batch.noise_mask));
            }
        }

        EpochStat es;
        es.epoch = epoch;
        es.lr = cfg.optimizer.lr_at(epoch);
        es.train_loss = batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0;
        es.noise_fraction =
            total_slots > 0 ? static_cast<double>(noise_slots) / static_cast<double>(total_slots) : 0.0;
        metrics.epochs.push_back(es);
    }

    auto final_metrics = evaluate(model, testset, trainset.class_counts());
    final_metrics.epochs = std::move(metrics.epochs);
    return TrainRun<S>{std::move(model), std::move(final_metrics)};
}

// Per-class decomposition of the loss gradient with respect to the final
// linear layer's weights, measured over probe batches drawn like training
// batches. Direction variance is the summed per-coordinate variance of the
// unit-normalized per-class gradients across batches (in [0,2]).
struct GradProbeReport {
    std::vector<double> mean_magnitude;     // NaN where a class never appeared
    std::vector<double> direction_variance; // NaN where a class never appeared
    std::vector<std::int64_t> batches_seen;
    int num_batches = 0;
};

template <typename S>
GradProbeReport grad_probe(const Mlp<S>& model_in, const Dataset& d, const OpenConfig& cfg,
                           int num_batches, std::uint64_t seed) {
    if (num_batches < 1) throw ConfigError("grad_probe needs num_batches >= 1");
    Mlp<S> model = model_in; // train-mode forwards mutate BN state; probe a copy
    const auto stats = channel_stats(d);
    RngStream rng(seed, "probe");
    const std::int64_t c = d.num_classes();
    const std::int64_t din = model.config().hidden_dims.empty()
                                 ? model.config().input_dim
                                 : model.config().hidden_dims.back();
    const std::int64_t dim = din * c;

    std::vector<std::vector<double>> sum_u(static_cast<std::size_t>(c)),
        sum_u2(static_cast<std::size_t>(c));
    for (std::int64_t k = 0; k < c; ++k) {
        sum_u[static_cast<std::size_t>(k)].assign(static_cast<std::size_t>(dim), 0.0);
        sum_u2[static_cast<std::size_t>(k)].assign(static_cast<std::size_t>(dim), 0.0);
    }
    std::vector<double> mag_sum(static_cast<std::size_t>(c), 0.0);
    std::vector<std::int64_t> seen(static_cast<std::size_t>(c), 0);

    std::vector<double> g(static_cast<std::size_t>(dim));
    for (int bi = 0; bi < num_batches; ++bi) {
        auto [images, labels] = sample_balanced_batch(d, cfg.batch_size, rng);
        auto batch = apply_open(std::move(images), std::move(labels), d, stats, cfg, rng);
        auto x = detail::flatten_to<S>(batch.images);
        const auto logits = model.forward(x, batch.noise_mask, Mode::train);
        auto [loss, dlogits] = softmax_cross_entropy(logits, batch.labels);
        (void)loss;
        const auto& h = model.final_linear_input();
        for (std::int64_t cls = 0; cls < c; ++cls) {
            std::fill(g.begin(), g.end(), 0.0);
            bool present = false;
            for (std::int64_t r = 0; r < static_cast<std::int64_t>(batch.labels.size()); ++r) {
                if (batch.labels[static_cast<std::size_t>(r)] != cls) continue;
                present = true;
                for (std::int64_t i = 0; i < din; ++i) {
                    const double hv = static_cast<double>(h.at(r, i));
                    for (std::int64_t j = 0; j < c; ++j) {
                        g[static_cast<std::size_t>(i * c + j)] +=
                            hv * static_cast<double>(dlogits.at(r, j));
                    }
                }
            }
            if (!present) continue;
            double norm2 = 0.0;
            for (auto v : g) norm2 += v * v;
            const double norm = std::sqrt(norm2);
            if (norm == 0.0) continue;
            const auto k = static_cast<std::size_t>(cls);
            mag_sum[k] += norm;
            ++seen[k];
            for (std::int64_t i = 0; i < dim; ++i) {
                const double u = g[static_cast<std::size_t>(i)] / norm;
                sum_u[k][static_cast<std::size_t>(i)] += u;
                sum_u2[k][static_cast<std::size_t>(i)] += u * u;
            }
        }
    }

    GradProbeReport rep;
    rep.num_batches = num_batches;
    rep.batches_seen = seen;
    rep.mean_magnitude.assign(static_cast<std::size_t>(c),
                              std::numeric_limits<double>::quiet_NaN());
    rep.direction_variance.assign(static_cast<std::size_t>(c),
                                  std::numeric_limits<double>::quiet_NaN());
    for (std::int64_t cls = 0; cls < c; ++cls) {
        const auto k = static_cast<std::size_t>(cls);
        if (seen[k] == 0) continue;
        const double n = static_cast<double>(seen[k]);
        rep.mean_magnitude[k] = mag_sum[k] / n;
        double var = 0.0;
        for (std::int64_t i = 0; i < dim; ++i) {
            const double eu = sum_u[k][static_cast<std::size_t>(i)] / n;
            var += std::max(0.0, sum_u2[k][static_cast<std::size_t>(i)] / n - eu * eu);
        }
        rep.direction_variance[k] = var;
    }
    return rep;
}

} // namespace noisebalance
