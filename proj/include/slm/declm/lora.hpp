#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "slm/numcore/nn.hpp"

namespace slm::declm {

struct LoraConfig {
    std::size_t rank = 8;
    double alpha = 16.0;

    bool enabled() const { return rank > 0; }
    double scale() const { return rank > 0 ? alpha / static_cast<double>(rank) : 0.0; }
};

/// Low-rank delta (alpha/R) * B * A; A is R x in, B is out x R. B starts at
/// zero so a fresh adapter contributes exactly nothing.
template <typename T>
struct LoraAdapter {
    Parameter<T> a;
    Parameter<T> b;
    std::size_t rank = 0;
    double alpha = 0.0;

    LoraAdapter() = default;
    LoraAdapter(const std::string& name, std::size_t in, std::size_t out, const LoraConfig& config, Rng& rng);

    double scale() const { return rank > 0 ? alpha / static_cast<double>(rank) : 0.0; }
};

/// y = x W^T + b + (alpha/R) (x A^T) B^T; the adapter term is skipped when
/// `adapter` is null.
template <typename T>
Var<T> lora_linear(Var<T> x, Var<T> w, Var<T> bias, LoraAdapter<T>* adapter);

/// W + (alpha/R) B A. A rank-0 adapter is a no-op and logs a warning.
template <typename T>
Tensor<T> merge_lora(const Tensor<T>& w, const LoraAdapter<T>& adapter);

/// A frozen base projection with an optional adapter.
template <typename T>
struct LoraLinear {
    nn::Linear<T> base;
    std::optional<LoraAdapter<T>> adapter;

    LoraLinear() = default;
    LoraLinear(const std::string& base_name, const std::string& adapter_name, std::size_t in, std::size_t out,
               const LoraConfig& config, Rng& rng);

    Var<T> operator()(Var<T> x);
    /// Folds the adapter into the base weight and removes it.
    void merge();
    void collect_base(nn::ParamList<T>& out) { base.collect(out); }
    void collect_adapter(nn::ParamList<T>& out) {
        if (adapter) {
            out.push_back(&adapter->a);
            out.push_back(&adapter->b);
        }
    }
};

} // namespace slm::declm
