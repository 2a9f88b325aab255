// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "side/io.hpp"
#include "side/nn.hpp"

namespace side {

inline std::vector<std::string> mlp_param_names(const nn::Mlp& m) {
    std::vector<std::string> names;
    const std::size_t L = m.cfg.blocks();
    for (std::size_t i = 0; i <= L; ++i) {
        names.push_back("lin" + std::to_string(i) + ".w");
        names.push_back("lin" + std::to_string(i) + ".b");
    }
    for (std::size_t i = 0; i < L; ++i) {
        names.push_back("norm" + std::to_string(i) + ".gamma");
        names.push_back("norm" + std::to_string(i) + ".beta");
    }
    if (m.cfg.time_conditioned) {
        names.push_back("time.w_proj");
        names.push_back("time.b_proj");
        for (std::size_t i = 0; i < L; ++i) {
            names.push_back("tmod" + std::to_string(i) + ".w_scale");
            names.push_back("tmod" + std::to_string(i) + ".b_scale");
            names.push_back("tmod" + std::to_string(i) + ".w_shift");
            names.push_back("tmod" + std::to_string(i) + ".b_shift");
        }
    }
    for (std::size_t i = 0; i < L; ++i) {
        names.push_back("norm" + std::to_string(i) + ".run_mean");
        names.push_back("norm" + std::to_string(i) + ".run_var");
    }
    return names;
}

/// Checksum over all parameters and buffers, in declaration order.
inline std::uint64_t mlp_checksum(const nn::Mlp& m) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto eat = [&](const Tensor* t) {
        auto bytes = std::as_bytes(std::span<const double>(t->flat()));
        h = fnv1a64({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()}, h);
    };
    for (const Tensor* t : m.trainable()) eat(t);
    for (const Tensor* t : const_cast<nn::Mlp&>(m).buffers()) eat(t);
    return h;
}

/// Writes a network as a container: json header carries the architecture,
/// role tag, seed and optimizer step count; arrays hold parameters then
/// normalization buffers.
inline void save_mlp(const std::filesystem::path& path, const nn::Mlp& m, const std::string& role,
                     std::uint64_t seed = 0, std::uint64_t step_count = 0) {
    nlohmann::json meta;
    meta["config"] = m.cfg;
    meta["role"] = role;
    meta["seed"] = seed;
    meta["step_count"] = step_count;
    auto names = mlp_param_names(m);
    std::vector<const Tensor*> tensors;
    for (const Tensor* t : m.trainable()) tensors.push_back(t);
    for (Tensor* t : const_cast<nn::Mlp&>(m).buffers()) tensors.push_back(t);
    check(tensors.size() == names.size(), "save_mlp: name/tensor count mismatch");
    std::vector<std::pair<std::string, const Tensor*>> arrays;
    for (std::size_t i = 0; i < names.size(); ++i) arrays.emplace_back(names[i], tensors[i]);
    io::save_container(path, "mlp", meta, arrays);
}

struct LoadedMlp {
    nn::Mlp net;
    std::string role;
    std::uint64_t seed = 0;
    std::uint64_t step_count = 0;
};

inline LoadedMlp load_mlp(const std::filesystem::path& path) {
    io::Container c = io::load_container(path);
    check(c.kind == "mlp", "load_mlp: container kind is '" + c.kind + "', expected 'mlp'");
    LoadedMlp out;
    nn::MlpConfig cfg = c.meta.at("config").get<nn::MlpConfig>();
    out.net = nn::Mlp(cfg);
    out.role = c.meta.at("role").get<std::string>();
    out.seed = c.meta.value("seed", std::uint64_t(0));
    out.step_count = c.meta.value("step_count", std::uint64_t(0));
    auto names = mlp_param_names(out.net);
    std::vector<Tensor*> tensors;
    for (Tensor* t : out.net.trainable()) tensors.push_back(t);
    for (Tensor* t : out.net.buffers()) tensors.push_back(t);
    for (std::size_t i = 0; i < names.size(); ++i) {
        const Tensor& src = c.array(names[i]);
        check(src.same_shape(*tensors[i]),
              "load_mlp: shape mismatch for array '" + names[i] + "'");
        *tensors[i] = src;
    }
    return out;
}

}  // namespace side
