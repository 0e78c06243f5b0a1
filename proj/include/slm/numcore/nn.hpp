#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "slm/numcore/autodiff.hpp"

namespace slm::nn {

template <typename T>
using ParamList = std::vector<Parameter<T>*>;

template <typename T>
Tensor<T> normal_init(Shape shape, double stddev, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.vec()) v = static_cast<T>(rng.normal() * stddev);
    return t;
}

/// y = x W^T + b, W is [out, in].
template <typename T>
struct Linear {
    Parameter<T> weight;
    Parameter<T> bias;

    Linear() = default;
    Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
        : weight(name + ".weight", normal_init<T>({out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng)),
          bias(name + ".bias", Tensor<T>(Shape{out})) {}

    Var<T> operator()(Var<T> x) {
        auto& tape = x.tape();
        return ad::linear(x, tape.param(weight), tape.param(bias));
    }

    void zero() {
        weight.value.fill(T{0});
        bias.value.fill(T{0});
    }
    void collect(ParamList<T>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }
    std::size_t in_features() const { return weight.value.cols(); }
    std::size_t out_features() const { return weight.value.rows(); }
};

template <typename T>
struct LayerNorm {
    Parameter<T> gamma;
    Parameter<T> beta;

    LayerNorm() = default;
    LayerNorm(const std::string& name, std::size_t dim)
        : gamma(name + ".gamma", Tensor<T>(Shape{dim}, T{1})), beta(name + ".beta", Tensor<T>(Shape{dim})) {}

    Var<T> operator()(Var<T> x) {
        auto& tape = x.tape();
        return ad::layer_norm(x, tape.param(gamma), tape.param(beta));
    }
    void collect(ParamList<T>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }
};

/// Copies values between parameter lists matched by name, converting the
/// scalar type. Throws if a destination name is missing from the source.
template <typename From, typename To>
void copy_params(const ParamList<From>& src, const ParamList<To>& dst) {
    std::map<std::string, const Parameter<From>*> by_name;
    for (const auto* p : src) by_name[p->name] = p;
    for (auto* d : dst) {
        auto it = by_name.find(d->name);
        if (it == by_name.end()) throw std::out_of_range("copy_params: missing " + d->name);
        require_same_shape(it->second->value.shape(), d->value.shape(), d->name.c_str());
        d->value = it->second->value.template cast<To>();
    }
}

template <typename T>
std::size_t count_params(const ParamList<T>& ps, bool trainable_only) {
    std::size_t n = 0;
    for (const auto* p : ps)
        if (!trainable_only || p->trainable) n += p->value.size();
    return n;
}

} // namespace slm::nn
