#include "noisebalance/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace noisebalance {

Dataset::Dataset(std::string name, Tensor<float> images, std::vector<std::int32_t> labels,
                 std::int64_t num_classes)
    : name_(std::move(name)), images_(std::move(images)), labels_(std::move(labels)) {
    images_.require_ndim(4, "dataset images");
    if (static_cast<std::int64_t>(labels_.size()) != images_.dim(0)) {
        throw ShapeError("dataset has " + std::to_string(images_.dim(0)) + " images but " +
                         std::to_string(labels_.size()) + " labels");
    }
    if (num_classes <= 0) throw ConfigError("dataset needs at least one class");
    class_counts_.assign(static_cast<std::size_t>(num_classes), 0);
    per_class_indices_.assign(static_cast<std::size_t>(num_classes), {});
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        const auto y = labels_[i];
        if (y < 0 || y >= num_classes) {
            throw FormatError("label " + std::to_string(y) + " out of range [0," +
                              std::to_string(num_classes) + ")");
        }
        class_counts_[static_cast<std::size_t>(y)]++;
        per_class_indices_[static_cast<std::size_t>(y)].push_back(static_cast<std::int64_t>(i));
    }
    for (float v : images_.vec()) {
        if (!(v >= 0.0f && v <= 1.0f)) {
            throw FormatError("pixel value " + std::to_string(v) + " outside [0,1]");
        }
    }
}

std::vector<double> Dataset::representation_ratios() const {
    const auto n_max = *std::max_element(class_counts_.begin(), class_counts_.end());
    std::vector<double> rho(class_counts_.size());
    for (std::size_t i = 0; i < class_counts_.size(); ++i) {
        rho[i] = static_cast<double>(class_counts_[i]) / static_cast<double>(n_max);
    }
    return rho;
}

bool Dataset::balanced() const {
    for (auto c : class_counts_) {
        if (c != class_counts_[0]) return false;
    }
    return true;
}

void LongTailSpec::validate() const {
    if (num_classes < 2) throw ConfigError("longtail spec needs num_classes >= 2");
    if (n_max < 1) throw ConfigError("longtail spec needs n_max >= 1");
    if (imbalance_ratio < 1.0) throw ConfigError("imbalance_ratio must be >= 1");
    if (std::llround(static_cast<double>(n_max) / imbalance_ratio + 0.5) < 1) {
        throw ConfigError("longtail spec yields an empty smallest class");
    }
}

void SyntheticSpec::validate() const {
    if (num_classes < 1) throw ConfigError("synthetic spec needs num_classes >= 1");
    if (channels < 1 || height < 1 || width < 1) {
        throw ConfigError("synthetic spec needs positive image dimensions");
    }
    if (within_class_std < 0) throw ConfigError("within_class_std must be nonnegative");
    if (shift_range < 0) throw ConfigError("shift_range must be nonnegative");
    if (test_per_class < 1) throw ConfigError("test_per_class must be >= 1");
}

std::vector<std::int64_t> longtail_sizes(const LongTailSpec& spec) {
    spec.validate();
    std::vector<std::int64_t> sizes(static_cast<std::size_t>(spec.num_classes));
    const double c1 = static_cast<double>(spec.num_classes - 1);
    for (std::int64_t i = 0; i < spec.num_classes; ++i) {
        const double exact =
            static_cast<double>(spec.n_max) *
            std::pow(spec.imbalance_ratio, -static_cast<double>(i) / c1);
        // round-half-up, clamp to >= 1
        const auto n = static_cast<std::int64_t>(std::floor(exact + 0.5));
        sizes[static_cast<std::size_t>(i)] = std::max<std::int64_t>(1, n);
    }
    return sizes;
}

Dataset build_longtail(const Dataset& balanced, const LongTailSpec& spec, std::uint64_t seed) {
    const auto sizes = longtail_sizes(spec);
    if (balanced.num_classes() != spec.num_classes) {
        throw ConfigError("longtail spec has " + std::to_string(spec.num_classes) +
                          " classes, dataset has " + std::to_string(balanced.num_classes()));
    }
    RngStream shuffle(seed, "shuffle");
    std::vector<std::int64_t> keep;
    for (std::int64_t c = 0; c < spec.num_classes; ++c) {
        auto rows = balanced.per_class_indices()[static_cast<std::size_t>(c)];
        const auto want = sizes[static_cast<std::size_t>(c)];
        if (static_cast<std::int64_t>(rows.size()) < want) {
            throw ConfigError("class " + std::to_string(c) + " has " +
                              std::to_string(rows.size()) + " samples, longtail spec needs " +
                              std::to_string(want));
        }
        // Fisher-Yates with the named stream, then take the first n_c rows.
        for (std::int64_t i = static_cast<std::int64_t>(rows.size()) - 1; i > 0; --i) {
            const auto j = shuffle.uniform_int(0, i);
            std::swap(rows[static_cast<std::size_t>(i)], rows[static_cast<std::size_t>(j)]);
        }
        keep.insert(keep.end(), rows.begin(), rows.begin() + want);
    }
    const auto ppi = balanced.pixels_per_image();
    Tensor<float> images({static_cast<std::int64_t>(keep.size()), balanced.channels(),
                          balanced.height(), balanced.width()});
    std::vector<std::int32_t> labels(keep.size());
    for (std::size_t i = 0; i < keep.size(); ++i) {
        const auto src = keep[i];
        std::memcpy(images.data() + static_cast<std::int64_t>(i) * ppi,
                    balanced.images().data() + src * ppi, sizeof(float) * static_cast<std::size_t>(ppi));
        labels[i] = balanced.labels()[static_cast<std::size_t>(src)];
    }
    return Dataset(balanced.name() + "-lt", std::move(images), std::move(labels),
                   spec.num_classes);
}

ChannelStats channel_stats(const Dataset& d) {
    if (d.size() == 0) throw ConfigError("channel_stats on empty dataset");
    const std::int64_t n = d.size(), ch = d.channels(), sp = d.height() * d.width();
    ChannelStats stats;
    stats.mean.assign(static_cast<std::size_t>(ch), 0.0);
    stats.std.assign(static_cast<std::size_t>(ch), 0.0);
    // Welford, streamed per channel over all pixels of all images.
    std::vector<double> m(static_cast<std::size_t>(ch), 0.0), m2(static_cast<std::size_t>(ch), 0.0);
    std::vector<std::int64_t> cnt(static_cast<std::size_t>(ch), 0);
    const float* px = d.images().data();
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t c = 0; c < ch; ++c) {
            const float* base = px + (i * ch + c) * sp;
            auto& mc = m[static_cast<std::size_t>(c)];
            auto& m2c = m2[static_cast<std::size_t>(c)];
            auto& kc = cnt[static_cast<std::size_t>(c)];
            for (std::int64_t p = 0; p < sp; ++p) {
                const double v = static_cast<double>(base[p]);
                ++kc;
                const double delta = v - mc;
                mc += delta / static_cast<double>(kc);
                m2c += delta * (v - mc);
            }
        }
    }
    for (std::int64_t c = 0; c < ch; ++c) {
        const auto i = static_cast<std::size_t>(c);
        stats.mean[i] = m[i];
        stats.std[i] = std::sqrt(m2[i] / static_cast<double>(cnt[i]));
    }
    return stats;
}

namespace {

float clamp01(double v) {
    return static_cast<float>(std::min(1.0, std::max(0.0, v)));
}

// 3x3 box filter with circular boundary, applied per channel.
std::vector<float> box_filter_wrap(const std::vector<float>& img, std::int64_t ch, std::int64_t h,
                                   std::int64_t w) {
    std::vector<float> out(img.size());
    for (std::int64_t c = 0; c < ch; ++c) {
        const float* src = img.data() + c * h * w;
        float* dst = out.data() + c * h * w;
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (std::int64_t dy = -1; dy <= 1; ++dy) {
                    for (std::int64_t dx = -1; dx <= 1; ++dx) {
                        const auto yy = (y + dy + h) % h;
                        const auto xx = (x + dx + w) % w;
                        acc += static_cast<double>(src[yy * w + xx]);
                    }
                }
                dst[y * w + x] = static_cast<float>(acc / 9.0);
            }
        }
    }
    return out;
}

void render_sample(const std::vector<float>& prototype, std::int64_t ch, std::int64_t h,
                   std::int64_t w, const SyntheticSpec& spec, RngStream& rng, float* dst) {
    std::int64_t sx = 0, sy = 0;
    if (spec.shift_range > 0) {
        sy = rng.uniform_int(-spec.shift_range, spec.shift_range);
        sx = rng.uniform_int(-spec.shift_range, spec.shift_range);
    }
    for (std::int64_t c = 0; c < ch; ++c) {
        const float* src = prototype.data() + c * h * w;
        float* out = dst + c * h * w;
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t x = 0; x < w; ++x) {
                const auto yy = ((y - sy) % h + h) % h;
                const auto xx = ((x - sx) % w + w) % w;
                double v = static_cast<double>(src[yy * w + xx]);
                if (spec.within_class_std > 0) v += rng.normal() * spec.within_class_std;
                out[y * w + x] = clamp01(v);
            }
        }
    }
}

} // namespace

SynthDatasets synth_generate(const SyntheticSpec& spec, const std::vector<std::int64_t>& sizes,
                             std::uint64_t seed) {
    spec.validate();
    if (static_cast<std::int64_t>(sizes.size()) != spec.num_classes) {
        throw ConfigError("synth_generate got " + std::to_string(sizes.size()) +
                          " class sizes for " + std::to_string(spec.num_classes) + " classes");
    }
    const std::int64_t ch = spec.channels, h = spec.height, w = spec.width;
    const std::int64_t ppi = ch * h * w;

    RngStream proto_rng(spec.prototype_seed, "prototypes");
    std::vector<std::vector<float>> prototypes;
    prototypes.reserve(static_cast<std::size_t>(spec.num_classes));
    for (std::int64_t c = 0; c < spec.num_classes; ++c) {
        std::vector<float> img(static_cast<std::size_t>(ppi));
        for (auto& v : img) v = static_cast<float>(proto_rng.uniform());
        img = box_filter_wrap(img, ch, h, w);
        img = box_filter_wrap(img, ch, h, w);
        prototypes.push_back(std::move(img));
    }

    const std::int64_t n_train = std::accumulate(sizes.begin(), sizes.end(), std::int64_t(0));
    Tensor<float> train_images({n_train, ch, h, w});
    std::vector<std::int32_t> train_labels(static_cast<std::size_t>(n_train));
    RngStream train_rng(seed, "train-sampling");
    std::int64_t row = 0;
    for (std::int64_t c = 0; c < spec.num_classes; ++c) {
        for (std::int64_t i = 0; i < sizes[static_cast<std::size_t>(c)]; ++i, ++row) {
            render_sample(prototypes[static_cast<std::size_t>(c)], ch, h, w, spec, train_rng,
                          train_images.data() + row * ppi);
            train_labels[static_cast<std::size_t>(row)] = static_cast<std::int32_t>(c);
        }
    }

    const std::int64_t n_test = spec.num_classes * spec.test_per_class;
    Tensor<float> test_images({n_test, ch, h, w});
    std::vector<std::int32_t> test_labels(static_cast<std::size_t>(n_test));
    RngStream test_rng(seed, "test-sampling");
    row = 0;
    for (std::int64_t c = 0; c < spec.num_classes; ++c) {
        for (std::int64_t i = 0; i < spec.test_per_class; ++i, ++row) {
            render_sample(prototypes[static_cast<std::size_t>(c)], ch, h, w, spec, test_rng,
                          test_images.data() + row * ppi);
            test_labels[static_cast<std::size_t>(row)] = static_cast<std::int32_t>(c);
        }
    }

    return SynthDatasets{
        Dataset("synthetic-train", std::move(train_images), std::move(train_labels), spec.num_classes),
        Dataset("synthetic-test", std::move(test_images), std::move(test_labels), spec.num_classes)};
}

namespace {

constexpr char kMagic[5] = {'I', 'L', 'S', 'B', '1'};
// magic(5) + reserved(3) + u32 N, Cch, H, W, Cclasses
constexpr std::int64_t kHeaderSize = 28;

void put_u32(std::string& buf, std::uint32_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
    buf.push_back(static_cast<char>((v >> 16) & 0xff));
    buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

} // namespace

void save_dataset(const Dataset& d, const std::string& path) {
    std::string header;
    header.append(kMagic, 5);
    header.append(3, '\0');
    put_u32(header, static_cast<std::uint32_t>(d.size()));
    put_u32(header, static_cast<std::uint32_t>(d.channels()));
    put_u32(header, static_cast<std::uint32_t>(d.height()));
    put_u32(header, static_cast<std::uint32_t>(d.width()));
    put_u32(header, static_cast<std::uint32_t>(d.num_classes()));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open " + path + " for writing");
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (auto y : d.labels()) {
        const auto v = static_cast<std::uint16_t>(y);
        const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
        f.write(b, 2);
    }
    // f32 little-endian; this build targets little-endian hosts.
    f.write(reinterpret_cast<const char*>(d.images().data()),
            static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(d.images().numel())));
    if (!f) throw FormatError("short write to " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open " + path);
    unsigned char header[kHeaderSize];
    f.read(reinterpret_cast<char*>(header), kHeaderSize);
    if (f.gcount() != kHeaderSize) throw FormatError(path + ": truncated header");
    if (std::memcmp(header, kMagic, 5) != 0 || header[5] != 0 || header[6] != 0 || header[7] != 0) {
        throw FormatError(path + ": bad magic, not an ILSB1 dataset file");
    }
    const std::int64_t n = get_u32(header + 8);
    const std::int64_t ch = get_u32(header + 12);
    const std::int64_t h = get_u32(header + 16);
    const std::int64_t w = get_u32(header + 20);
    const std::int64_t num_classes = get_u32(header + 24);
    if (n == 0 || ch == 0 || h == 0 || w == 0 || num_classes == 0) {
        throw FormatError(path + ": zero dimension in header");
    }

    std::vector<std::int32_t> labels(static_cast<std::size_t>(n));
    std::vector<unsigned char> lbuf(static_cast<std::size_t>(2 * n));
    f.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(lbuf.size()));
    if (f.gcount() != static_cast<std::streamsize>(lbuf.size())) {
        throw FormatError(path + ": truncated label block");
    }
    for (std::int64_t i = 0; i < n; ++i) {
        const auto v = static_cast<std::uint16_t>(
            lbuf[static_cast<std::size_t>(2 * i)] |
            (static_cast<std::uint16_t>(lbuf[static_cast<std::size_t>(2 * i + 1)]) << 8));
        if (v >= num_classes) {
            throw FormatError(path + ": label " + std::to_string(v) + " out of range [0," +
                              std::to_string(num_classes) + ")");
        }
        labels[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(v);
    }

    const std::int64_t count = n * ch * h * w;
    Tensor<float> images({n, ch, h, w});
    f.read(reinterpret_cast<char*>(images.data()),
           static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(count)));
    if (f.gcount() != static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(count))) {
        throw FormatError(path + ": truncated image block");
    }
    f.peek();
    if (!f.eof()) throw FormatError(path + ": trailing bytes after image block");
    for (float v : images.vec()) {
        if (!(v >= 0.0f && v <= 1.0f)) {
            throw FormatError(path + ": pixel value outside [0,1]");
        }
    }
    return Dataset(path, std::move(images), std::move(labels), num_classes);
}

} // namespace noisebalance
