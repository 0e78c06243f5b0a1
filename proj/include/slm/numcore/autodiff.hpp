#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "slm/numcore/rng.hpp"
#include "slm/numcore/tensor.hpp"

namespace slm {

/// A named, persistent model weight. Gradients accumulate into `grad` after
/// every Tape::backward that touched it.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, Tensor<T> v, bool train = true)
        : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(train) {}

    void zero_grad() {
        if (!grad.same_shape(value)) grad = Tensor<T>(value.shape());
        grad.fill(T{0});
    }
};

template <typename T>
class Tape;

template <typename T>
struct Node {
    Tape<T>* tape = nullptr;
    Tensor<T> owned;
    const Tensor<T>* ref = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    std::function<void(Node&)> backward;

    const Tensor<T>& value() const { return ref ? *ref : owned; }

    /// Gradient buffer, zero-initialized on first use.
    Tensor<T>& grad_buf() {
        if (grad.empty() && !value().empty()) grad = Tensor<T>(value().shape());
        return grad;
    }
};

/// Handle to a value recorded on a Tape.
template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(Node<T>* n) : node_(n) {}

    const Tensor<T>& value() const { return node_->value(); }
    const Shape& shape() const { return value().shape(); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    std::size_t size() const { return value().size(); }
    T item() const { return value()[0]; }

    bool requires_grad() const { return node_->requires_grad; }
    /// Gradient after backward; empty when the value did not receive one.
    const Tensor<T>& grad() const { return node_->grad; }

    Node<T>* node() const { return node_; }
    Tape<T>& tape() const { return *node_->tape; }
    explicit operator bool() const { return node_ != nullptr; }

private:
    Node<T>* node_ = nullptr;
};

/// Reverse-mode tape. Nodes are recorded in creation order, which is a
/// topological order, so backward is a single reverse sweep.
template <typename T>
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }
    std::size_t size() const { return nodes_.size(); }

    Var<T> constant(Tensor<T> v);
    /// Leaf that receives a gradient (used for inputs under test).
    Var<T> leaf(Tensor<T> v);
    /// Leaf referencing a parameter without copying; one node per parameter.
    Var<T> param(Parameter<T>& p);

    using Backward = std::function<void(Node<T>&)>;
    /// Records an op result. `bw` is kept only when some parent needs a gradient.
    Var<T> record(Tensor<T> v, std::initializer_list<Var<T>> parents, Backward bw);
    Var<T> record(Tensor<T> v, std::span<const Var<T>> parents, Backward bw);

    /// Seeds d(loss)/d(loss) = 1, sweeps backward and adds parameter grads
    /// into Parameter::grad.
    void backward(Var<T> loss);

private:
    Node<T>* push();

    bool grad_enabled_;
    std::vector<std::unique_ptr<Node<T>>> nodes_;
    std::unordered_map<Parameter<T>*, Node<T>*> param_nodes_;
};

/// Differentiable primitives. Matrices are (rows x cols), row-major.
namespace ad {

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// x[m,in] * w[out,in]^T (+ b[out])
template <typename T> Var<T> linear(Var<T> x, Var<T> w);
template <typename T> Var<T> linear(Var<T> x, Var<T> w, Var<T> b);

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T s);
/// a[m,n] + v[n] broadcast over rows.
template <typename T> Var<T> add_row(Var<T> a, Var<T> v);

template <typename T> Var<T> sigmoid(Var<T> a);
template <typename T> Var<T> swish(Var<T> a);
/// Gated linear unit over columns: a[:, :c] * sigmoid(a[:, c:]).
template <typename T> Var<T> glu(Var<T> a);

template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));
template <typename T> Var<T> softmax_rows(Var<T> x);
template <typename T> Var<T> log_softmax_rows(Var<T> x);

/// Multi-head scaled dot-product attention. q is [n,d], k and v are [m,d].
/// With `causal`, query i sees keys j <= i + (m - n).
template <typename T> Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads, bool causal);

/// 1-D convolution over rows (time). x[T,Cin], w[Cout, K*Cin] with tap-major
/// layout (index kk*Cin + c), b[Cout].
template <typename T>
Var<T> conv1d(Var<T> x, Var<T> w, Var<T> b, std::size_t kernel, std::size_t stride, std::size_t pad);
/// Depthwise "same" convolution: x[T,C], w[C,K] (K odd), b[C].
template <typename T> Var<T> depthwise_conv1d(Var<T> x, Var<T> w, Var<T> b);

template <typename T> Var<T> embedding(Var<T> table, std::span<const int> ids);

template <typename T> Var<T> concat_rows(std::span<const Var<T>> parts);
template <typename T> Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end);
/// Appends zero rows up to `rows` total.
template <typename T> Var<T> pad_rows(Var<T> a, std::size_t rows);
template <typename T> Var<T> reshape(Var<T> a, Shape shape);

/// Mean cross-entropy over rows whose target is >= 0.
template <typename T> Var<T> cross_entropy(Var<T> logits, std::span<const int> targets);

template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);

/// Inverted dropout; identity when p == 0 or the tape has no gradients.
template <typename T> Var<T> dropout(Var<T> a, double p, Rng& rng);

} // namespace ad

extern template class Tape<float>;
extern template class Tape<double>;

} // namespace slm
