#include "slm/encoder/encoder.hpp"

#include <bit>
#include <cmath>

#include "slm/errors.hpp"

namespace slm::encoder {

void EncoderConfig::validate() const {
    if (num_heads == 0 || d_model % num_heads != 0) throw InputError("encoder: d_model must be divisible by num_heads");
    if (conv_kernel % 2 == 0) throw InputError("encoder: conv_kernel must be odd");
    if (!std::has_single_bit(subsample_stride) || subsample_stride < 2)
        throw InputError("encoder: subsample_stride must be a power of two >= 2");
    if (input_dim == 0 || ffn_dim == 0 || subsample_channels == 0 || max_frames == 0)
        throw InputError("encoder: dimensions must be positive");
}

std::size_t EncoderConfig::num_subsample_convs() const {
    return static_cast<std::size_t>(std::countr_zero(subsample_stride));
}

std::size_t output_frames(std::size_t input_frames, std::size_t stride) {
    return (input_frames + stride - 1) / stride;
}

template <typename T>
ConformerBlock<T>::ConformerBlock(const std::string& p, const EncoderConfig& c, Rng& rng)
    : heads_(c.num_heads),
      dropout_(c.dropout),
      attn_norm_(p + ".attn_norm", c.d_model),
      q_(p + ".attn.q", c.d_model, c.d_model, rng),
      k_(p + ".attn.k", c.d_model, c.d_model, rng),
      v_(p + ".attn.v", c.d_model, c.d_model, rng),
      attn_out_(p + ".attn.out", c.d_model, c.d_model, rng),
      conv_norm_(p + ".conv_norm", c.d_model),
      pointwise_in_(p + ".conv.pointwise_in", c.d_model, 2 * c.d_model, rng),
      depthwise_w_(p + ".conv.depthwise.weight",
                   nn::normal_init<T>({c.d_model, c.conv_kernel}, 1.0 / std::sqrt(static_cast<double>(c.conv_kernel)), rng)),
      depthwise_b_(p + ".conv.depthwise.bias", Tensor<T>(Shape{c.d_model})),
      depthwise_norm_(p + ".conv.norm", c.d_model),
      pointwise_out_(p + ".conv.pointwise_out", c.d_model, c.d_model, rng),
      ffn_norm_(p + ".ffn_norm", c.d_model),
      ffn_in_(p + ".ffn.in", c.d_model, c.ffn_dim, rng),
      ffn_out_(p + ".ffn.out", c.ffn_dim, c.d_model, rng) {}

template <typename T>
Var<T> ConformerBlock<T>::operator()(Var<T> x, Rng* rng) {
    auto& tape = x.tape();
    const double p = rng ? dropout_ : 0.0;
    Rng dummy;
    Rng& r = rng ? *rng : dummy;

    Var<T> h = attn_norm_(x);
    h = ad::attention(q_(h), k_(h), v_(h), heads_, false);
    x = ad::add(x, ad::dropout(attn_out_(h), p, r));

    h = conv_norm_(x);
    h = ad::glu(pointwise_in_(h));
    h = ad::depthwise_conv1d(h, tape.param(depthwise_w_), tape.param(depthwise_b_));
    h = ad::swish(depthwise_norm_(h));
    x = ad::add(x, ad::dropout(pointwise_out_(h), p, r));

    h = ffn_norm_(x);
    h = ad::dropout(ad::swish(ffn_in_(h)), p, r);
    return ad::add(x, ad::dropout(ffn_out_(h), p, r));
}

template <typename T>
void ConformerBlock<T>::zero_residual_outputs() {
    attn_out_.zero();
    pointwise_out_.zero();
    ffn_out_.zero();
}

template <typename T>
void ConformerBlock<T>::collect(nn::ParamList<T>& out) {
    attn_norm_.collect(out);
    q_.collect(out);
    k_.collect(out);
    v_.collect(out);
    attn_out_.collect(out);
    conv_norm_.collect(out);
    pointwise_in_.collect(out);
    out.push_back(&depthwise_w_);
    out.push_back(&depthwise_b_);
    depthwise_norm_.collect(out);
    pointwise_out_.collect(out);
    ffn_norm_.collect(out);
    ffn_in_.collect(out);
    ffn_out_.collect(out);
}

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    const std::size_t nconv = config_.num_subsample_convs();
    std::size_t in_ch = config_.input_dim;
    for (std::size_t i = 0; i < nconv; ++i) {
        const std::string name = "encoder.subsample." + std::to_string(i);
        const std::size_t out_ch = config_.subsample_channels;
        conv_w_.emplace_back(name + ".weight",
                             nn::normal_init<T>({out_ch, 3 * in_ch}, 1.0 / std::sqrt(3.0 * static_cast<double>(in_ch)), rng));
        conv_b_.emplace_back(name + ".bias", Tensor<T>(Shape{out_ch}));
        in_ch = out_ch;
    }
    proj_ = nn::Linear<T>("encoder.proj", in_ch, config_.d_model, rng);
    positions_ = Parameter<T>("encoder.positions", nn::normal_init<T>({config_.max_frames, config_.d_model}, 0.02, rng));
    blocks_.reserve(config_.num_layers);
    for (std::size_t i = 0; i < config_.num_layers; ++i)
        blocks_.emplace_back("encoder.layers." + std::to_string(i), config_, rng);
    if (config_.ctc_vocab > 0) ctc_head_.emplace("encoder.ctc_head", config_.d_model, config_.ctc_vocab + 1, rng);
}

template <typename T>
Var<T> Encoder<T>::subsample(Tape<T>& tape, const Tensor<T>& features) {
    if (features.rank() != 2 || features.cols() != config_.input_dim)
        throw ShapeError("encoder: expected T x " + std::to_string(config_.input_dim) + " features, got " +
                         shape_str(features.shape()));
    if (features.rows() == 0) throw ShapeError("encoder: empty feature matrix");
    const std::size_t padded = output_frames(features.rows(), config_.subsample_stride) * config_.subsample_stride;
    Var<T> x = ad::pad_rows(tape.constant(features), padded);
    for (std::size_t i = 0; i < conv_w_.size(); ++i)
        x = ad::swish(ad::conv1d(x, tape.param(conv_w_[i]), tape.param(conv_b_[i]), 3, 2, 1));
    return proj_(x);
}

template <typename T>
EncoderOutput<T> Encoder<T>::encode(Tape<T>& tape, const Tensor<T>& features, Rng* rng) {
    Var<T> x = subsample(tape, features);
    const std::size_t frames = x.rows();
    if (frames > config_.max_frames)
        throw ShapeError("encoder: " + std::to_string(frames) + " frames exceed max_frames " +
                         std::to_string(config_.max_frames));
    x = ad::add(x, ad::slice_rows(tape.param(positions_), 0, frames));
    for (auto& b : blocks_) x = b(x, rng);
    EncoderOutput<T> out;
    out.embeddings = x;
    if (ctc_head_) out.ctc_logits = (*ctc_head_)(x);
    return out;
}

template <typename T>
void Encoder<T>::zero_residual_outputs() {
    for (auto& b : blocks_) b.zero_residual_outputs();
}

template <typename T>
nn::ParamList<T> Encoder<T>::parameters() {
    nn::ParamList<T> out;
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
        out.push_back(&conv_w_[i]);
        out.push_back(&conv_b_[i]);
    }
    proj_.collect(out);
    out.push_back(&positions_);
    for (auto& b : blocks_) b.collect(out);
    if (ctc_head_) ctc_head_->collect(out);
    return out;
}

template <typename T>
nn::ParamList<T> Encoder<T>::block_parameters(std::size_t index) {
    nn::ParamList<T> out;
    blocks_.at(index).collect(out);
    return out;
}

template class ConformerBlock<float>;
template class ConformerBlock<double>;
template class Encoder<float>;
template class Encoder<double>;

} // namespace slm::encoder
