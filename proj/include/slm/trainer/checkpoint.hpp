#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "slm/numcore/nn.hpp"

namespace slm::trainer {

/// Versioned container: "SLMF", u32 version, u64 config digest, metadata
/// JSON, tokenizer table, then named tensors (name, dtype, shape, LE data).
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    /// "encoder", "joint" or "train_state".
    std::string kind;
    /// Model-defining configuration sections; the digest covers exactly this.
    nlohmann::json config = nlohmann::json::object();
    /// Everything else: derived sizes, training summary, resume state.
    nlohmann::json meta = nlohmann::json::object();
    std::u32string tokenizer;
    std::map<std::string, Tensor<float>> tensors;

    std::uint64_t digest() const;
    bool has(const std::string& name) const { return tensors.count(name) > 0; }
    const Tensor<float>& tensor(const std::string& name) const;

    void put(const nn::ParamList<float>& params, const std::string& prefix = "");
    /// Loads every destination parameter by name; missing names or shape
    /// mismatches are DataErrors.
    void get(const nn::ParamList<float>& params, const std::string& prefix = "") const;
};

/// FNV-1a over the compact JSON dump (keys sorted).
std::uint64_t fnv1a(std::string_view bytes);
std::uint64_t config_digest(const nlohmann::json& config);
std::string hex64(std::uint64_t v);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws DataError on bad magic, unsupported version, truncation or a
/// digest that does not match the stored configuration.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a of a whole file.
std::uint64_t file_digest(const std::filesystem::path& path);
/// FNV-1a over the values of `params` in order.
std::uint64_t params_digest(const nn::ParamList<float>& params);

} // namespace slm::trainer
