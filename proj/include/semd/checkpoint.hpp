#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bytes.hpp"
#include "model.hpp"

namespace semd {

// Checkpoint file layout (all integers and floats little-endian):
//   "SEMD"            4 bytes magic
//   u16               format version (1)
//   u32 + bytes       architecture config as JSON
//   u32               tensor count
//   per tensor        u32 ndim, ndim x u32 extents, numel x f32 data
// Tensors appear in for_each_param order followed by for_each_buffer order.

inline constexpr std::uint16_t kCheckpointVersion = 1;

inline nlohmann::json arch_to_json(const ArchConfig& c) {
    return nlohmann::json{{"n_channels", c.n_channels},
                          {"n_samples", c.n_samples},
                          {"f1", c.f1},
                          {"depth_mult", c.depth_mult},
                          {"f2", c.f2},
                          {"k_temporal", c.k_temporal},
                          {"k_separable", c.k_separable},
                          {"pool1", c.pool1},
                          {"pool2", c.pool2},
                          {"dropout_p", c.dropout_p},
                          {"reduction", c.reduction},
                          {"se_input", c.se_input},
                          {"se_post_conv1", c.se_post_conv1},
                          {"se_map1", c.se_map1},
                          {"se_map2", c.se_map2},
                          {"se_map3", c.se_map3},
                          {"bn_eps", c.bn_eps},
                          {"bn_momentum", c.bn_momentum},
                          {"maxnorm_spatial", c.maxnorm_spatial},
                          {"maxnorm_dense", c.maxnorm_dense}};
}

inline ArchConfig arch_from_json(const nlohmann::json& j) {
    ArchConfig c;
    c.n_channels = j.value("n_channels", c.n_channels);
    c.n_samples = j.value("n_samples", c.n_samples);
    c.f1 = j.value("f1", c.f1);
    c.depth_mult = j.value("depth_mult", c.depth_mult);
    c.f2 = j.value("f2", c.f2);
    c.k_temporal = j.value("k_temporal", c.k_temporal);
    c.k_separable = j.value("k_separable", c.k_separable);
    c.pool1 = j.value("pool1", c.pool1);
    c.pool2 = j.value("pool2", c.pool2);
    c.dropout_p = j.value("dropout_p", c.dropout_p);
    c.reduction = j.value("reduction", c.reduction);
    c.se_input = j.value("se_input", c.se_input);
    c.se_post_conv1 = j.value("se_post_conv1", c.se_post_conv1);
    c.se_map1 = j.value("se_map1", c.se_map1);
    c.se_map2 = j.value("se_map2", c.se_map2);
    c.se_map3 = j.value("se_map3", c.se_map3);
    c.bn_eps = j.value("bn_eps", c.bn_eps);
    c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
    c.maxnorm_spatial = j.value("maxnorm_spatial", c.maxnorm_spatial);
    c.maxnorm_dense = j.value("maxnorm_dense", c.maxnorm_dense);
    return c;
}

namespace detail {

template <typename Fn>
void ordered_tensors(const ModelState<float>& m, Fn&& fn) {
    for_each_param(m, fn);
    for_each_buffer(m, fn);
}

template <typename Fn>
void ordered_tensors(ModelState<float>& m, Fn&& fn) {
    for_each_param(m, fn);
    for_each_buffer(m, fn);
}

}  // namespace detail

inline void save_checkpoint(const ModelState<float>& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open checkpoint file for writing: " + path);

    os.write("SEMD", 4);
    detail::put_u16(os, kCheckpointVersion);
    const std::string cfg = arch_to_json(m.cfg).dump();
    detail::put_u32(os, static_cast<std::uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    std::uint32_t count = 0;
    detail::ordered_tensors(m, [&](const std::string&, const Tensor<float>&) { ++count; });
    detail::put_u32(os, count);
    detail::ordered_tensors(m, [&](const std::string&, const Tensor<float>& t) {
        detail::put_u32(os, static_cast<std::uint32_t>(t.ndim()));
        for (int i = 0; i < t.ndim(); ++i) detail::put_u32(os, static_cast<std::uint32_t>(t.dim(i)));
        detail::put_f32_block(os, t.data(), t.numel());
    });
    os.flush();
    if (!os) throw std::runtime_error("failed writing checkpoint: " + path);
}

inline ModelState<float> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint file: " + path);

    char magic[4];
    if (!is.read(magic, 4)) throw std::runtime_error("truncated checkpoint: missing magic");
    if (std::memcmp(magic, "SEMD", 4) != 0)
        throw std::runtime_error("bad checkpoint magic in " + path);
    const std::uint16_t version = detail::take_u16(is, "checkpoint: missing version");
    if (version != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) +
                                 " (expected " + std::to_string(kCheckpointVersion) + ")");

    const std::uint32_t cfg_len = detail::take_u32(is, "checkpoint: missing config length");
    std::string cfg_text(cfg_len, '\0');
    if (cfg_len && !is.read(cfg_text.data(), cfg_len))
        throw std::runtime_error("truncated checkpoint: missing config");
    ArchConfig cfg;
    try {
        cfg = arch_from_json(nlohmann::json::parse(cfg_text));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed checkpoint config: " + std::string(e.what()));
    }

    ModelState<float> m = allocate_model<float>(cfg);
    std::uint32_t expect = 0;
    detail::ordered_tensors(m, [&](const std::string&, const Tensor<float>&) { ++expect; });
    const std::uint32_t count = detail::take_u32(is, "checkpoint: missing tensor count");
    if (count != expect)
        throw std::runtime_error("checkpoint holds " + std::to_string(count) + " tensors, expected " +
                                 std::to_string(expect));

    detail::ordered_tensors(m, [&](const std::string& name, Tensor<float>& t) {
        const std::uint32_t ndim = detail::take_u32(is, "checkpoint: missing rank of " + name);
        Shape shape(ndim);
        for (std::uint32_t i = 0; i < ndim; ++i)
            shape[i] = static_cast<int>(detail::take_u32(is, "checkpoint: missing extent of " + name));
        if (shape != t.shape())
            throw std::runtime_error("checkpoint tensor " + name + " has shape " + shape_str(shape) +
                                     ", expected " + shape_str(t.shape()));
        detail::take_f32_block(is, t.data(), t.numel(), "checkpoint: missing data of " + name);
    });
    is.peek();
    if (!is.eof()) throw std::runtime_error("checkpoint has trailing bytes: " + path);
    return m;
}

}  // namespace semd
