#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "noisebalance/model.hpp"
#include "noisebalance/rng.hpp"

namespace noisebalance {

namespace detail {

template <typename S>
constexpr std::uint8_t dtype_tag() {
    return sizeof(S) == 4 ? 4 : 8;
}

inline void put_u64(std::ofstream& f, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    f.write(b, 8);
}

inline std::uint64_t get_u64(std::ifstream& f, const std::string& path) {
    unsigned char b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    if (f.gcount() != 8) throw FormatError(path + ": truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

} // namespace detail

// Canonical hash of everything that determines checkpoint layout.
template <typename S>
std::uint64_t model_config_hash(const ModelConfig& cfg) {
    std::string canon = "input_dim=" + std::to_string(cfg.input_dim) + ";hidden=";
    for (auto h : cfg.hidden_dims) canon += std::to_string(h) + ",";
    canon += ";num_classes=" + std::to_string(cfg.num_classes);
    canon += ";norm=" + std::string(norm_variant_name(cfg.norm_variant));
    canon += ";dtype=f" + std::to_string(8 * sizeof(S));
    return fnv1a64(canon);
}

// `ILCK1` + u64 config hash + u32 blob count, then per blob: u16 name length,
// name bytes, u8 dtype tag (4=f32, 8=f64), u64 element count, raw LE payload.
template <typename S>
void save_checkpoint(Mlp<S>& model, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open " + path + " for writing");
    f.write("ILCK1", 5);
    detail::put_u64(f, model_config_hash<S>(model.config()));
    auto blobs = model.named_state();
    const auto count = static_cast<std::uint32_t>(blobs.size());
    char cb[4];
    for (int i = 0; i < 4; ++i) cb[i] = static_cast<char>((count >> (8 * i)) & 0xff);
    f.write(cb, 4);
    for (auto& blob : blobs) {
        const auto len = static_cast<std::uint16_t>(blob.name.size());
        const char lb[2] = {static_cast<char>(len & 0xff), static_cast<char>((len >> 8) & 0xff)};
        f.write(lb, 2);
        f.write(blob.name.data(), static_cast<std::streamsize>(blob.name.size()));
        const char tag = static_cast<char>(detail::dtype_tag<S>());
        f.write(&tag, 1);
        detail::put_u64(f, blob.data->size());
        f.write(reinterpret_cast<const char*>(blob.data->data()),
                static_cast<std::streamsize>(sizeof(S) * blob.data->size()));
    }
    if (!f) throw FormatError("short write to " + path);
}

template <typename S>
void load_checkpoint(Mlp<S>& model, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open " + path);
    char magic[5];
    f.read(magic, 5);
    if (f.gcount() != 5 || std::memcmp(magic, "ILCK1", 5) != 0) {
        throw FormatError(path + ": bad magic, not an ILCK1 checkpoint");
    }
    const auto hash = detail::get_u64(f, path);
    const auto expect = model_config_hash<S>(model.config());
    if (hash != expect) {
        throw FormatError(path + ": checkpoint config hash mismatch");
    }
    unsigned char cb[4];
    f.read(reinterpret_cast<char*>(cb), 4);
    if (f.gcount() != 4) throw FormatError(path + ": truncated checkpoint");
    const std::uint32_t count = static_cast<std::uint32_t>(cb[0]) | (static_cast<std::uint32_t>(cb[1]) << 8) |
                                (static_cast<std::uint32_t>(cb[2]) << 16) |
                                (static_cast<std::uint32_t>(cb[3]) << 24);
    auto blobs = model.named_state();
    if (count != blobs.size()) throw FormatError(path + ": checkpoint blob count mismatch");
    for (auto& blob : blobs) {
        unsigned char lb[2];
        f.read(reinterpret_cast<char*>(lb), 2);
        if (f.gcount() != 2) throw FormatError(path + ": truncated checkpoint");
        const auto len = static_cast<std::size_t>(lb[0] | (static_cast<std::size_t>(lb[1]) << 8));
        std::string name(len, '\0');
        f.read(name.data(), static_cast<std::streamsize>(len));
        if (f.gcount() != static_cast<std::streamsize>(len) || name != blob.name) {
            throw FormatError(path + ": unexpected blob name, wanted " + blob.name);
        }
        char tag;
        f.read(&tag, 1);
        if (f.gcount() != 1 || static_cast<std::uint8_t>(tag) != detail::dtype_tag<S>()) {
            throw FormatError(path + ": dtype mismatch in blob " + blob.name);
        }
        const auto n = detail::get_u64(f, path);
        if (n != blob.data->size()) {
            throw FormatError(path + ": size mismatch in blob " + blob.name);
        }
        f.read(reinterpret_cast<char*>(blob.data->data()),
               static_cast<std::streamsize>(sizeof(S) * n));
        if (f.gcount() != static_cast<std::streamsize>(sizeof(S) * n)) {
            throw FormatError(path + ": truncated blob " + blob.name);
        }
    }
    f.peek();
    if (!f.eof()) throw FormatError(path + ": trailing bytes after blobs");
}

} // namespace noisebalance
