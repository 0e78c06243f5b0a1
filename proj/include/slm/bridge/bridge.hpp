#pragma once

#include <cstddef>

#include "slm/numcore/nn.hpp"

namespace slm::bridge {

struct StackConfig {
    std::size_t n = 3;
    std::size_t d_encoder = 64;
    std::size_t d_llm = 128;

    void validate() const;
    /// Embedding period in milliseconds given 80 ms encoder frames.
    std::size_t frame_ms() const { return 80 * n; }
};

/// ceil(frames / n)
std::size_t stacked_frames(std::size_t frames, std::size_t n);

/// Concatenates every n consecutive rows into one row of width n*d; the tail
/// is zero-padded. Earlier rows occupy lower column indices.
template <typename T>
Var<T> stack_frames(Var<T> embeddings, std::size_t n);

template <typename T>
Tensor<T> stack_frames(const Tensor<T>& embeddings, std::size_t n);

/// Inverse of stack_frames for inputs whose length was divisible by n.
template <typename T>
Tensor<T> unstack_frames(const Tensor<T>& stacked, std::size_t n);

/// Stacking followed by a single affine map into the LM embedding space.
template <typename T>
class Bridge {
public:
    Bridge(const StackConfig& config, Rng& rng);

    Var<T> project(Var<T> stacked);
    Var<T> operator()(Var<T> embeddings) { return project(stack_frames(embeddings, config_.n)); }

    nn::ParamList<T> parameters();
    const StackConfig& config() const { return config_; }

private:
    StackConfig config_;
    nn::Linear<T> proj_;
};

extern template class Bridge<float>;
extern template class Bridge<double>;

} // namespace slm::bridge
