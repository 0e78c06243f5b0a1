#include "slm/declm/lora.hpp"

#include <cmath>

#include "slm/numcore/kernels.hpp"
#include "slm/numcore/log.hpp"

namespace slm::declm {

template <typename T>
LoraAdapter<T>::LoraAdapter(const std::string& name, std::size_t in, std::size_t out, const LoraConfig& config,
                            Rng& rng)
    : a(name + ".A", nn::normal_init<T>({config.rank, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng)),
      b(name + ".B", Tensor<T>(Shape{out, config.rank})),
      rank(config.rank),
      alpha(config.alpha) {}

template <typename T>
Var<T> lora_linear(Var<T> x, Var<T> w, Var<T> bias, LoraAdapter<T>* adapter) {
    Var<T> y = bias ? ad::linear(x, w, bias) : ad::linear(x, w);
    if (!adapter || adapter->rank == 0) return y;
    auto& tape = x.tape();
    Var<T> down = ad::linear(x, tape.param(adapter->a));
    Var<T> up = ad::linear(down, tape.param(adapter->b));
    return ad::add(y, ad::scale(up, static_cast<T>(adapter->scale())));
}

template <typename T>
Tensor<T> merge_lora(const Tensor<T>& w, const LoraAdapter<T>& adapter) {
    if (adapter.rank == 0) {
        log::warn("merge_lora: rank-0 adapter, nothing to merge");
        return w;
    }
    const std::size_t out = w.rows(), in = w.cols(), r = adapter.rank;
    require_same_shape(adapter.a.value.shape(), Shape{r, in}, "merge_lora A");
    require_same_shape(adapter.b.value.shape(), Shape{out, r}, "merge_lora B");
    Tensor<T> delta = Tensor<T>::matrix(out, in);
    kernels::gemm_nn(out, in, r, adapter.b.value.data(), adapter.a.value.data(), delta.data());
    Tensor<T> merged = w;
    const auto s = static_cast<T>(adapter.scale());
    for (std::size_t i = 0; i < merged.size(); ++i) merged[i] += s * delta[i];
    return merged;
}

template <typename T>
LoraLinear<T>::LoraLinear(const std::string& base_name, const std::string& adapter_name, std::size_t in,
                          std::size_t out, const LoraConfig& config, Rng& rng)
    : base(base_name, in, out, rng) {
    if (config.enabled()) adapter.emplace(adapter_name, in, out, config, rng);
}

template <typename T>
Var<T> LoraLinear<T>::operator()(Var<T> x) {
    auto& tape = x.tape();
    return lora_linear(x, tape.param(base.weight), tape.param(base.bias), adapter ? &*adapter : nullptr);
}

template <typename T>
void LoraLinear<T>::merge() {
    if (!adapter) return;
    base.weight.value = merge_lora(base.weight.value, *adapter);
    adapter.reset();
}

template struct LoraAdapter<float>;
template struct LoraAdapter<double>;
template struct LoraLinear<float>;
template struct LoraLinear<double>;
template Var<float> lora_linear(Var<float>, Var<float>, Var<float>, LoraAdapter<float>*);
template Var<double> lora_linear(Var<double>, Var<double>, Var<double>, LoraAdapter<double>*);
template Tensor<float> merge_lora(const Tensor<float>&, const LoraAdapter<float>&);
template Tensor<double> merge_lora(const Tensor<double>&, const LoraAdapter<double>&);

} // namespace slm::declm
