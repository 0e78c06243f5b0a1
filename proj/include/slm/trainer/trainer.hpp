#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "slm/trainer/checkpoint.hpp"
#include "slm/trainer/config.hpp"
#include "slm/trainer/manifest.hpp"
#include "slm/trainer/model.hpp"
#include "slm/trainer/sampling.hpp"

namespace slm::trainer {

/// One utterance with everything training needs precomputed.
struct Example {
    std::string id;
    std::string language;
    std::string text;
    std::vector<int> ids;
    std::vector<int> ctc_ids;
    Tensor<float> features;
    double seconds = 0.0;
};

struct Corpus {
    std::vector<Example> train;
    std::vector<Example> valid;
    declm::CharTokenizer tokenizer;
    frontend::NormStats norm;
    /// True when the manifest was too small for a held-out split.
    bool valid_is_train = false;
    std::size_t skipped = 0;
};

/// Loads and featurizes a manifest in parallel (results keep manifest order),
/// splits off the validation share, builds the tokenizer and normalization
/// statistics unless given. Unreadable audio is skipped with a warning.
Corpus prepare_corpus(const std::vector<ManifestEntry>& entries, const RunConfig& config,
                      const declm::CharTokenizer* tokenizer = nullptr, const frontend::NormStats* norm = nullptr);

struct LogRow {
    std::size_t step = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    /// NaN when no evaluation happened at this step.
    double valid_loss = 0.0;
};

void write_training_log(const std::filesystem::path& path, const std::vector<LogRow>& rows);

struct TrainOptions {
    /// Training log and resumable state go here when non-empty.
    std::filesystem::path out_dir;
    std::optional<std::filesystem::path> resume;
    /// Saves the resumable state after this step and returns (0 = never).
    std::size_t stop_after = 0;
    /// Called after every evaluation; returning true stops training.
    std::function<bool(std::size_t step, double valid_loss)> on_eval;
};

struct TrainResult {
    Checkpoint best;
    std::size_t best_step = 0;
    double best_valid_loss = 0.0;
    std::size_t steps_run = 0;
    std::vector<LogRow> log;
    bool diverged = false;
    bool stopped_early = false;
    bool interrupted = false;
    std::string message;
};

/// Shared optimization loop: duration-capped batches from the balanced
/// sampler, Adam with the stage schedule, periodic validation, best-loss
/// checkpoint selection, early stopping and resumable state.
class TrainerBase {
public:
    virtual ~TrainerBase() = default;
    TrainResult run(const TrainOptions& options);

protected:
    TrainerBase(RunConfig config, Corpus corpus, const StageConfig& stage, std::string stage_name);

    virtual nn::ParamList<float> all_parameters() = 0;
    virtual nn::ParamList<float> trainable_parameters() = 0;
    virtual Var<float> example_loss(Tape<float>& tape, const Example& ex, Rng* dropout_rng, Rng& mask_rng) = 0;
    virtual double validation_loss() = 0;
    virtual Checkpoint snapshot() = 0;
    /// Work done once before the first step of a fresh run.
    virtual void before_training() {}

    RunConfig config_;
    Corpus corpus_;
    StageConfig stage_;
    std::string stage_name_;

private:
    std::vector<std::size_t> draw_batch(Rng& rng) const;

    std::optional<BalancedSampler> sampler_;
    std::vector<std::vector<std::size_t>> by_language_;
};

class CtcTrainer : public TrainerBase {
public:
    CtcTrainer(const RunConfig& config, Corpus corpus);
    CtcModel& model() { return model_; }
    const Corpus& corpus() const { return corpus_; }

protected:
    nn::ParamList<float> all_parameters() override { return model_.parameters(); }
    nn::ParamList<float> trainable_parameters() override { return model_.parameters(); }
    Var<float> example_loss(Tape<float>& tape, const Example& ex, Rng* dropout_rng, Rng& mask_rng) override;
    double validation_loss() override;
    Checkpoint snapshot() override { return model_.to_checkpoint(); }

private:
    CtcModel model_;
};

class JointTrainer : public TrainerBase {
public:
    /// `encoder_ckpt` may be null for an encoder trained from scratch.
    JointTrainer(const RunConfig& config, Corpus corpus, const Checkpoint* encoder_ckpt);
    SpeechModel& model() { return model_; }
    const Corpus& corpus() const { return corpus_; }

    /// Mean next-token loss over `examples` without masking or dropout.
    double mean_loss(const std::vector<Example>& examples);

protected:
    nn::ParamList<float> all_parameters() override { return model_.parameters(); }
    nn::ParamList<float> trainable_parameters() override { return model_.trainable_parameters(); }
    Var<float> example_loss(Tape<float>& tape, const Example& ex, Rng* dropout_rng, Rng& mask_rng) override;
    double validation_loss() override { return mean_loss(corpus_.valid); }
    Checkpoint snapshot() override { return model_.to_checkpoint(); }
    void before_training() override;

private:
    SpeechModel model_;
};

/// Text-only next-token training of the LM base weights on transcripts,
/// standing in for a pretrained LM. Adapters are left untouched.
void pretrain_lm_on_text(declm::DecoderLM<float>& lm, const std::vector<Example>& examples, std::size_t steps,
                         double lr, std::uint64_t seed);

TrainResult pretrain_encoder(const std::vector<ManifestEntry>& manifest, const RunConfig& config,
                             const TrainOptions& options = {});
TrainResult train_joint(const std::vector<ManifestEntry>& manifest, const RunConfig& config,
                        const Checkpoint* encoder_ckpt, const TrainOptions& options = {});

} // namespace slm::trainer
