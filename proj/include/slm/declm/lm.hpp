#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "slm/declm/lora.hpp"
#include "slm/numcore/nn.hpp"

namespace slm::declm {

struct LmConfig {
    std::size_t vocab_size = 0;
    std::size_t d_llm = 128;
    std::size_t num_layers = 2;
    std::size_t num_heads = 4;
    std::size_t ffn_dim = 512;
    std::size_t max_positions = 512;
    int pad_id = 0;
    int unk_id = 1;
    int bos_id = 2;
    int eos_id = 3;
    LoraConfig lora;
    double dropout = 0.0;
    /// Base weights (embeddings, projections, norms, head) excluded from
    /// optimization; only adapters train.
    bool freeze_base = true;

    void validate() const;
};

/// Desk-scale presets: "tiny", "small", "base".
LmConfig lm_preset(std::string_view name, std::size_t vocab_size);
std::vector<std::string> lm_preset_names();

/// Published decoder shapes, used only for parameter accounting.
struct LmShape {
    std::string name;
    std::size_t d_model;
    std::size_t num_layers;
    std::size_t num_heads;
    std::size_t ffn_dim;
};
std::optional<LmShape> reference_lm_shape(std::string_view name);
std::vector<LmShape> reference_lm_shapes();

/// Trainable parameters added by rank-R adapters on q, k, v, o of every layer.
std::size_t lora_param_count(std::size_t d_model, std::size_t num_layers, std::size_t rank);

template <typename T>
struct LmBlock {
    nn::LayerNorm<T> attn_norm;
    LoraLinear<T> q, k, v, o;
    nn::LayerNorm<T> ffn_norm;
    nn::Linear<T> ffn_in, ffn_out;
};

/// Causal decoder over [audio rows ; text tokens]. Audio occupies positions
/// 0..M-1, text follows contiguously.
template <typename T>
class DecoderLM {
public:
    DecoderLM(const LmConfig& config, Rng& rng);

    /// Logits for every position, (M + |ids|) x vocab. `audio` may be empty.
    Var<T> forward(Tape<T>& tape, Var<T> audio, std::span<const int> ids, Rng* dropout_rng = nullptr);

    /// Next-token loss over the transcript: inputs [bos, t...], targets
    /// [t..., eos]; audio positions carry no target.
    Var<T> loss(Tape<T>& tape, Var<T> audio, std::span<const int> text, Rng* dropout_rng = nullptr);
    /// As above with separately supplied (e.g. masked) inputs; `inputs` and
    /// `targets` have equal length.
    Var<T> loss(Tape<T>& tape, Var<T> audio, std::span<const int> inputs, std::span<const int> targets,
                Rng* dropout_rng = nullptr);

    /// Greedy search from bos; stops at eos, after `max_len` tokens or at the
    /// position limit. Returned ids exclude bos and eos.
    std::vector<int> greedy_decode(const Tensor<T>& audio, std::size_t max_len = 200);
    /// Same search, recomputing the full sequence every step.
    std::vector<int> greedy_decode_uncached(const Tensor<T>& audio, std::size_t max_len = 200);

    /// Folds every adapter into its base weight.
    void merge_adapters();
    bool has_adapters() const;
    void set_base_trainable(bool trainable);

    nn::ParamList<T> parameters();
    nn::ParamList<T> adapter_parameters();
    std::size_t trainable_count();

    const Tensor<T>& token_embeddings() const { return tok_embed_.value; }
    const LmConfig& config() const { return config_; }
    LmBlock<T>& block(std::size_t i) { return blocks_[i]; }

private:
    struct KvCache {
        std::vector<Tensor<T>> k, v;
        std::size_t length = 0;
    };

    Var<T> embed(Tape<T>& tape, Var<T> audio, std::span<const int> ids, std::size_t pos0);
    Var<T> run_blocks(Var<T> h, KvCache* cache, Rng* dropout_rng);
    void check_fits(std::size_t audio_rows, std::size_t text_len) const;

    LmConfig config_;
    Parameter<T> tok_embed_;
    Parameter<T> pos_embed_;
    std::vector<LmBlock<T>> blocks_;
    nn::LayerNorm<T> final_norm_;
    nn::Linear<T> head_;
};

extern template class DecoderLM<float>;
extern template class DecoderLM<double>;

} // namespace slm::declm
