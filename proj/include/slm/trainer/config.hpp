#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slm/bridge/bridge.hpp"
#include "slm/declm/lm.hpp"
#include "slm/encoder/encoder.hpp"
#include "slm/frontend/features.hpp"
#include "slm/numcore/optim.hpp"

namespace slm::trainer {

struct StageConfig {
    LrSchedule schedule;
    /// Audio seconds per optimizer step.
    double batch_seconds = 80.0;
};

struct TrainingConfig {
    std::uint64_t seed = 1;
    /// Probability of replacing an input text token with unk.
    double mask_fraction = 0.0;
    /// Per-language replacements for mask_fraction.
    std::map<std::string, double> mask_overrides;
    double sampling_alpha = 0.5;
    /// Held-out share of the manifest used for validation.
    double valid_fraction = 0.05;
    std::size_t eval_interval = 500;
    /// Evaluations without improvement before stopping.
    std::size_t patience = 10;
    double clip_norm = 1.0;
    /// Steps of next-token training on transcripts (no audio, base weights
    /// unfrozen) that stand in for LM pretraining. 0 keeps the random LM.
    std::size_t lm_text_steps = 0;
    double lm_text_lr = 1e-3;
    StageConfig pretrain{{1e-3, 1e-5, 20000, 250000}, 500.0};
    StageConfig joint{{5e-4, 5e-6, 5000, 250000}, 80.0};
    std::vector<std::string> languages;

    double mask_fraction_for(const std::string& language) const;
};

struct LmSection {
    std::string preset = "small";
    /// Zero keeps the preset value.
    std::size_t d_llm = 0;
    std::size_t num_layers = 0;
    std::size_t num_heads = 0;
    std::size_t ffn_dim = 0;
    std::size_t max_positions = 512;
    double dropout = 0.0;
};

struct EvalConfig {
    std::size_t max_len = 200;
};

/// Every tunable of a run. JSON sections: frontend, encoder, bridge, lm,
/// lora, training, eval. Unknown keys are rejected.
struct RunConfig {
    frontend::FrontendConfig frontend;
    encoder::EncoderConfig encoder;
    std::size_t stack_n = 3;
    LmSection lm;
    declm::LoraConfig lora;
    TrainingConfig training;
    EvalConfig eval;

    RunConfig();

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    void validate() const;

    /// Sections that define the encoder checkpoint (frontend, encoder).
    nlohmann::json encoder_sections() const;
    /// Sections that define the joint model (adds bridge, lm, lora).
    nlohmann::json model_sections() const;

    encoder::EncoderConfig encoder_config(std::size_t ctc_vocab) const;
    bridge::StackConfig stack_config() const;
    declm::LmConfig lm_config(std::size_t vocab_size) const;
};

/// Short names for the ablation axes accepted by apply_override.
const std::map<std::string, std::string>& override_aliases();

/// Applies "key=value" where key is a dotted path or an alias; the value is
/// parsed as JSON when possible, otherwise taken as a string.
void apply_override(nlohmann::json& config, const std::string& assignment);

/// Overlays `patch` on `base`, rejecting keys that `base` does not have.
void merge_strict(nlohmann::json& base, const nlohmann::json& patch, const std::string& path = "");

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

} // namespace slm::trainer
