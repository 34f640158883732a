#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace noisebalance {

// 64-bit FNV-1a. Used to turn stream names into seed material.
std::uint64_t fnv1a64(std::string_view s);

// SplitMix64 finalizer; whitens the (master ^ name-hash) seed.
std::uint64_t splitmix64(std::uint64_t x);

// One named random stream. A master seed plus a stream name yields an
// independent engine, so adding or reordering one consumer never perturbs
// the draws seen by another. Stream seed = splitmix64(master ^ fnv1a64(name)).
class RngStream {
public:
    RngStream(std::uint64_t master_seed, std::string_view name);

    double uniform();                                // [0, 1)
    double normal();                                 // N(0, 1)
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi); // inclusive
    bool bernoulli(double p);                        // always consumes one draw

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_;
};

} // namespace noisebalance
