#include "slm/trainer/model.hpp"

#include "slm/ctc/ctc.hpp"
#include "slm/errors.hpp"
#include "slm/frontend/audio.hpp"

namespace slm::trainer {

namespace {

// Independent init streams so changing one module's size leaves the others'
// initial weights unchanged.
enum Stream : std::uint64_t { kEncoderInit = 1, kBridgeInit = 2, kLmInit = 3 };

std::vector<float> to_vector(const Tensor<float>& t) { return t.vec(); }

} // namespace

FeaturePipeline::FeaturePipeline(const frontend::FrontendConfig& config, frontend::NormStats norm)
    : config_(config), norm_(std::move(norm)) {}

frontend::FeatureMatrix FeaturePipeline::raw(const frontend::Waveform& wave) const {
    thread_local std::unique_ptr<frontend::LogMelExtractor> extractor;
    thread_local frontend::FrontendConfig cached;
    auto same = [](const frontend::FrontendConfig& a, const frontend::FrontendConfig& b) {
        return a.window == b.window && a.hop == b.hop && a.fft_size == b.fft_size && a.num_mel == b.num_mel &&
               a.fmin == b.fmin && a.fmax == b.fmax && a.log_floor == b.log_floor;
    };
    if (!extractor || !same(cached, config_)) {
        extractor = std::make_unique<frontend::LogMelExtractor>(config_);
        cached = config_;
    }
    return (*extractor)(wave);
}

frontend::FeatureMatrix FeaturePipeline::raw(const std::filesystem::path& audio) const {
    return raw(frontend::load_audio(audio));
}

void FeaturePipeline::normalize(frontend::FeatureMatrix& features) const {
    if (!norm_.empty()) frontend::apply_norm(features, norm_);
}

frontend::FeatureMatrix FeaturePipeline::operator()(const std::filesystem::path& audio) const {
    auto f = raw(audio);
    normalize(f);
    return f;
}

void put_norm(Checkpoint& ckpt, const frontend::NormStats& norm) {
    const std::size_t d = norm.mean.size();
    ckpt.tensors["frontend.norm.mean"] = Tensor<float>(Shape{d}, norm.mean);
    ckpt.tensors["frontend.norm.std"] = Tensor<float>(Shape{d}, norm.stddev);
}

frontend::NormStats get_norm(const Checkpoint& ckpt) {
    frontend::NormStats n;
    n.mean = to_vector(ckpt.tensor("frontend.norm.mean"));
    n.stddev = to_vector(ckpt.tensor("frontend.norm.std"));
    return n;
}

RunConfig config_from_checkpoint(const Checkpoint& ckpt) {
    try {
        return RunConfig::from_json(ckpt.config);
    } catch (const InputError& e) {
        throw DataError(std::string("checkpoint configuration is invalid: ") + e.what());
    }
}

CtcModel::CtcModel(const RunConfig& config, declm::CharTokenizer tokenizer, frontend::NormStats norm, Rng& rng)
    : config_(config), tokenizer_(std::move(tokenizer)), pipeline_(config.frontend, std::move(norm)) {
    Rng init = rng.split(kEncoderInit);
    encoder_ = std::make_unique<encoder::Encoder<float>>(config_.encoder_config(tokenizer_.ctc_vocab()), init);
}

CtcModel CtcModel::from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.kind != "encoder") throw DataError("expected an encoder checkpoint, got '" + ckpt.kind + "'");
    Rng rng(0);
    CtcModel m(config_from_checkpoint(ckpt), declm::CharTokenizer(ckpt.tokenizer), get_norm(ckpt), rng);
    ckpt.get(m.parameters());
    return m;
}

Checkpoint CtcModel::to_checkpoint() {
    Checkpoint c;
    c.kind = "encoder";
    c.config = config_.encoder_sections();
    c.meta["ctc_vocab"] = tokenizer_.ctc_vocab();
    c.tokenizer = tokenizer_.chars();
    c.put(parameters());
    put_norm(c, pipeline_.norm());
    return c;
}

std::string CtcModel::transcribe(const Tensor<float>& features) {
    Tape<float> tape(false);
    auto out = encoder_->encode(tape, features);
    auto lp = ad::log_softmax_rows(out.ctc_logits);
    return tokenizer_.decode_ctc(ctc::ctc_greedy_decode(lp.value()));
}

SpeechModel::SpeechModel(const RunConfig& config, declm::CharTokenizer tokenizer, frontend::NormStats norm, Rng& rng)
    : config_(config), tokenizer_(std::move(tokenizer)), pipeline_(config.frontend, std::move(norm)) {
    Rng enc_rng = rng.split(kEncoderInit);
    encoder_ = std::make_unique<encoder::Encoder<float>>(config_.encoder_config(0), enc_rng);
    Rng bridge_rng = rng.split(kBridgeInit);
    bridge_ = std::make_unique<bridge::Bridge<float>>(config_.stack_config(), bridge_rng);
    Rng lm_rng = rng.split(kLmInit);
    lm_ = std::make_unique<declm::DecoderLM<float>>(config_.lm_config(tokenizer_.vocab_size()), lm_rng);
}

SpeechModel SpeechModel::from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.kind != "joint") throw DataError("expected a joint checkpoint, got '" + ckpt.kind + "'");
    RunConfig config = config_from_checkpoint(ckpt);
    // merged exports carry no adapters
    if (ckpt.meta.value("merged", false)) config.lora.rank = 0;
    Rng rng(0);
    SpeechModel m(config, declm::CharTokenizer(ckpt.tokenizer), get_norm(ckpt), rng);
    ckpt.get(m.parameters());
    return m;
}

void SpeechModel::load_encoder(const Checkpoint& encoder_ckpt) {
    if (encoder_ckpt.kind != "encoder")
        throw DataError("expected an encoder checkpoint, got '" + encoder_ckpt.kind + "'");
    const auto expected = config_.encoder_sections();
    if (config_digest(expected) != encoder_ckpt.digest())
        throw DataError("encoder checkpoint config digest " + hex64(encoder_ckpt.digest()) +
                        " does not match the run's frontend/encoder sections (" + hex64(config_digest(expected)) +
                        ")");
    encoder_ckpt.get(encoder_->parameters());
}

Checkpoint SpeechModel::to_checkpoint() {
    Checkpoint c;
    c.kind = "joint";
    c.config = config_.model_sections();
    c.meta["vocab_size"] = tokenizer_.vocab_size();
    c.meta["merged"] = !lm_->has_adapters() && config_.lora.rank > 0;
    c.tokenizer = tokenizer_.chars();
    c.put(parameters());
    put_norm(c, pipeline_.norm());
    return c;
}

Var<float> SpeechModel::audio_embeddings(Tape<float>& tape, const Tensor<float>& features, Rng* dropout_rng) {
    auto enc = encoder_->encode(tape, features, dropout_rng);
    return (*bridge_)(enc.embeddings);
}

Var<float> SpeechModel::loss(Tape<float>& tape, const Tensor<float>& features, std::span<const int> inputs,
                             std::span<const int> targets, Rng* dropout_rng) {
    Var<float> audio = audio_embeddings(tape, features, dropout_rng);
    return lm_->loss(tape, audio, inputs, targets, dropout_rng);
}

std::vector<int> SpeechModel::decode_ids(const Tensor<float>& features) {
    Tape<float> tape(false);
    Var<float> audio = audio_embeddings(tape, features);
    return lm_->greedy_decode(audio.value(), config_.eval.max_len);
}

std::string SpeechModel::transcribe(const Tensor<float>& features) { return tokenizer_.decode(decode_ids(features)); }

Tensor<float> SpeechModel::text_embeddings(std::span<const int> ids) const {
    const auto& table = lm_->token_embeddings();
    Tensor<float> out = Tensor<float>::matrix(ids.size(), table.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto row = table.row(static_cast<std::size_t>(ids[i]));
        std::copy(row.begin(), row.end(), out.row(i).begin());
    }
    return out;
}

nn::ParamList<float> SpeechModel::parameters() {
    nn::ParamList<float> ps = encoder_->parameters();
    for (auto* p : bridge_->parameters()) ps.push_back(p);
    for (auto* p : lm_->parameters()) ps.push_back(p);
    return ps;
}

nn::ParamList<float> SpeechModel::trainable_parameters() {
    nn::ParamList<float> ps;
    for (auto* p : parameters())
        if (p->trainable) ps.push_back(p);
    return ps;
}

} // namespace slm::trainer
