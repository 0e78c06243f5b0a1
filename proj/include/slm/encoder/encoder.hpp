#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "slm/numcore/nn.hpp"

namespace slm::encoder {

struct EncoderConfig {
    std::size_t input_dim = 80;
    std::size_t num_layers = 2;
    std::size_t d_model = 64;
    std::size_t ffn_dim = 128;
    std::size_t conv_kernel = 11;
    std::size_t num_heads = 4;
    std::size_t subsample_stride = 8;
    std::size_t subsample_channels = 64;
    /// Learned absolute positions; 20 s of audio is 250 frames at stride 8.
    std::size_t max_frames = 256;
    /// Size of the CTC label inventory, excluding the blank.
    std::size_t ctc_vocab = 0;
    double dropout = 0.1;

    void validate() const;
    std::size_t num_subsample_convs() const;
};

/// Output length law: ceil(T / stride).
std::size_t output_frames(std::size_t input_frames, std::size_t stride = 8);

/// Non-macaron conformer block: MHSA, then the depthwise convolution
/// module, then a single feed-forward net; each pre-normalized with a
/// residual add.
template <typename T>
class ConformerBlock {
public:
    ConformerBlock(const std::string& prefix, const EncoderConfig& config, Rng& rng);

    Var<T> operator()(Var<T> x, Rng* dropout_rng);

    /// Zeroes the last projection of every residual branch so the block is
    /// the identity map.
    void zero_residual_outputs();
    void collect(nn::ParamList<T>& out);

private:
    std::size_t heads_;
    double dropout_;
    nn::LayerNorm<T> attn_norm_;
    nn::Linear<T> q_, k_, v_, attn_out_;
    nn::LayerNorm<T> conv_norm_;
    nn::Linear<T> pointwise_in_;
    Parameter<T> depthwise_w_, depthwise_b_;
    nn::LayerNorm<T> depthwise_norm_;
    nn::Linear<T> pointwise_out_;
    nn::LayerNorm<T> ffn_norm_;
    nn::Linear<T> ffn_in_, ffn_out_;
};

template <typename T>
struct EncoderOutput {
    /// U x d_model, the final block output (80 ms frames).
    Var<T> embeddings;
    /// U x (ctc_vocab + 1); empty when the head has been detached.
    Var<T> ctc_logits;
};

template <typename T>
class Encoder {
public:
    Encoder(const EncoderConfig& config, Rng& rng);

    /// Stride-2 conv stack (kernel 3, swish) then the linear projection to
    /// d_model. Input is right-padded with zeros to a multiple of the stride.
    Var<T> subsample(Tape<T>& tape, const Tensor<T>& features);

    EncoderOutput<T> encode(Tape<T>& tape, const Tensor<T>& features, Rng* dropout_rng = nullptr);

    bool has_ctc_head() const { return ctc_head_.has_value(); }
    void drop_ctc_head() { ctc_head_.reset(); }
    void zero_residual_outputs();

    nn::ParamList<T> parameters();
    nn::ParamList<T> block_parameters(std::size_t index);
    ConformerBlock<T>& block(std::size_t i) { return blocks_[i]; }
    const EncoderConfig& config() const { return config_; }

private:
    EncoderConfig config_;
    std::vector<Parameter<T>> conv_w_;
    std::vector<Parameter<T>> conv_b_;
    nn::Linear<T> proj_;
    Parameter<T> positions_;
    std::vector<ConformerBlock<T>> blocks_;
    std::optional<nn::Linear<T>> ctc_head_;
};

extern template class ConformerBlock<float>;
extern template class ConformerBlock<double>;
extern template class Encoder<float>;
extern template class Encoder<double>;

} // namespace slm::encoder
