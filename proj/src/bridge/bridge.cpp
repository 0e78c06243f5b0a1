#include "slm/bridge/bridge.hpp"

#include <cstring>

#include "slm/errors.hpp"

namespace slm::bridge {

void StackConfig::validate() const {
    if (n < 1) throw InputError("bridge: stacking factor must be >= 1");
    if (d_encoder == 0 || d_llm == 0) throw InputError("bridge: widths must be positive");
}

std::size_t stacked_frames(std::size_t frames, std::size_t n) {
    if (n < 1) throw InputError("bridge: stacking factor must be >= 1");
    return (frames + n - 1) / n;
}

template <typename T>
Var<T> stack_frames(Var<T> embeddings, std::size_t n) {
    const std::size_t out = stacked_frames(embeddings.rows(), n);
    if (n == 1) return embeddings;
    const std::size_t d = embeddings.cols();
    return ad::reshape(ad::pad_rows(embeddings, out * n), Shape{out, n * d});
}

template <typename T>
Tensor<T> stack_frames(const Tensor<T>& e, std::size_t n) {
    const std::size_t out = stacked_frames(e.rows(), n);
    Tensor<T> s = Tensor<T>::matrix(out, n * e.cols());
    std::memcpy(s.data(), e.data(), e.size() * sizeof(T));
    return s;
}

template <typename T>
Tensor<T> unstack_frames(const Tensor<T>& s, std::size_t n) {
    if (n < 1 || s.cols() % n != 0) throw ShapeError("unstack_frames: width not divisible by n");
    return s.reshaped(Shape{s.rows() * n, s.cols() / n});
}

template <typename T>
Bridge<T>::Bridge(const StackConfig& config, Rng& rng)
    : config_(config), proj_("bridge.proj", config.n * config.d_encoder, config.d_llm, rng) {
    config_.validate();
}

template <typename T>
Var<T> Bridge<T>::project(Var<T> stacked) {
    if (stacked.cols() != config_.n * config_.d_encoder)
        throw ShapeError("bridge: stacked width " + std::to_string(stacked.cols()) + " != n * d_encoder = " +
                         std::to_string(config_.n * config_.d_encoder));
    return proj_(stacked);
}

template <typename T>
nn::ParamList<T> Bridge<T>::parameters() {
    nn::ParamList<T> out;
    proj_.collect(out);
    return out;
}

template Var<float> stack_frames<float>(Var<float>, std::size_t);
template Var<double> stack_frames<double>(Var<double>, std::size_t);
template Tensor<float> stack_frames<float>(const Tensor<float>&, std::size_t);
template Tensor<double> stack_frames<double>(const Tensor<double>&, std::size_t);
template Tensor<float> unstack_frames<float>(const Tensor<float>&, std::size_t);
template Tensor<double> unstack_frames<double>(const Tensor<double>&, std::size_t);
template class Bridge<float>;
template class Bridge<double>;

} // namespace slm::bridge
