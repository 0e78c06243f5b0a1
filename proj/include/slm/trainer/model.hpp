#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "slm/bridge/bridge.hpp"
#include "slm/declm/lm.hpp"
#include "slm/declm/tokenizer.hpp"
#include "slm/encoder/encoder.hpp"
#include "slm/frontend/features.hpp"
#include "slm/trainer/checkpoint.hpp"
#include "slm/trainer/config.hpp"

namespace slm::trainer {

/// Audio file -> normalized log-mel features.
class FeaturePipeline {
public:
    FeaturePipeline(const frontend::FrontendConfig& config, frontend::NormStats norm);

    frontend::FeatureMatrix raw(const std::filesystem::path& audio) const;
    frontend::FeatureMatrix raw(const frontend::Waveform& wave) const;
    void normalize(frontend::FeatureMatrix& features) const;
    frontend::FeatureMatrix operator()(const std::filesystem::path& audio) const;

    const frontend::NormStats& norm() const { return norm_; }
    void set_norm(frontend::NormStats norm) { norm_ = std::move(norm); }

private:
    frontend::FrontendConfig config_;
    frontend::NormStats norm_;
};

void put_norm(Checkpoint& ckpt, const frontend::NormStats& norm);
frontend::NormStats get_norm(const Checkpoint& ckpt);

/// Stage-1 model: conformer encoder with its CTC head.
class CtcModel {
public:
    CtcModel(const RunConfig& config, declm::CharTokenizer tokenizer, frontend::NormStats norm, Rng& rng);
    static CtcModel from_checkpoint(const Checkpoint& ckpt);

    Checkpoint to_checkpoint();
    std::string transcribe(const Tensor<float>& features);

    encoder::Encoder<float>& encoder() { return *encoder_; }
    const declm::CharTokenizer& tokenizer() const { return tokenizer_; }
    const FeaturePipeline& pipeline() const { return pipeline_; }
    const RunConfig& config() const { return config_; }
    nn::ParamList<float> parameters() { return encoder_->parameters(); }

private:
    RunConfig config_;
    declm::CharTokenizer tokenizer_;
    FeaturePipeline pipeline_;
    std::unique_ptr<encoder::Encoder<float>> encoder_;
};

/// Stage-2 model: encoder (CTC head dropped) -> stacking bridge -> LM.
class SpeechModel {
public:
    SpeechModel(const RunConfig& config, declm::CharTokenizer tokenizer, frontend::NormStats norm, Rng& rng);
    static SpeechModel from_checkpoint(const Checkpoint& ckpt);

    /// Copies encoder weights from a stage-1 checkpoint whose frontend and
    /// encoder sections must match this model's.
    void load_encoder(const Checkpoint& encoder_ckpt);

    /// After lm().merge_adapters() the checkpoint is a merged export with no
    /// "lora.*" tensors.
    Checkpoint to_checkpoint();

    /// M x d_llm audio embeddings (bridge outputs).
    Var<float> audio_embeddings(Tape<float>& tape, const Tensor<float>& features, Rng* dropout_rng = nullptr);
    Var<float> loss(Tape<float>& tape, const Tensor<float>& features, std::span<const int> inputs,
                    std::span<const int> targets, Rng* dropout_rng = nullptr);
    std::vector<int> decode_ids(const Tensor<float>& features);
    std::string transcribe(const Tensor<float>& features);
    /// Rows of the LM token embedding table for `ids`.
    Tensor<float> text_embeddings(std::span<const int> ids) const;

    encoder::Encoder<float>& encoder() { return *encoder_; }
    bridge::Bridge<float>& bridge() { return *bridge_; }
    declm::DecoderLM<float>& lm() { return *lm_; }
    const declm::CharTokenizer& tokenizer() const { return tokenizer_; }
    const FeaturePipeline& pipeline() const { return pipeline_; }
    const RunConfig& config() const { return config_; }

    nn::ParamList<float> parameters();
    nn::ParamList<float> lm_parameters() { return lm_->parameters(); }
    /// Encoder and bridge always train; the LM contributes whatever it marks
    /// trainable (adapters, or nothing at rank 0).
    nn::ParamList<float> trainable_parameters();

private:
    RunConfig config_;
    declm::CharTokenizer tokenizer_;
    FeaturePipeline pipeline_;
    std::unique_ptr<encoder::Encoder<float>> encoder_;
    std::unique_ptr<bridge::Bridge<float>> bridge_;
    std::unique_ptr<declm::DecoderLM<float>> lm_;
};

/// Rebuilds the run configuration stored in a checkpoint.
RunConfig config_from_checkpoint(const Checkpoint& ckpt);

} // namespace slm::trainer
