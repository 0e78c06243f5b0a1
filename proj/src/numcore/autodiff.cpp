#include "slm/numcore/autodiff.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "slm/numcore/kernels.hpp"

namespace slm {

template <typename T>
Node<T>* Tape<T>::push() {
    nodes_.push_back(std::make_unique<Node<T>>());
    Node<T>* n = nodes_.back().get();
    n->tape = this;
    return n;
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> v) {
    Node<T>* n = push();
    n->owned = std::move(v);
    return Var<T>(n);
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> v) {
    Node<T>* n = push();
    n->owned = std::move(v);
    n->requires_grad = grad_enabled_;
    return Var<T>(n);
}

template <typename T>
Var<T> Tape<T>::param(Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var<T>(it->second);
    Node<T>* n = push();
    n->ref = &p.value;
    n->param = &p;
    n->requires_grad = grad_enabled_ && p.trainable;
    param_nodes_.emplace(&p, n);
    return Var<T>(n);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> v, std::initializer_list<Var<T>> parents, Backward bw) {
    return record(std::move(v), std::span<const Var<T>>(parents.begin(), parents.size()), std::move(bw));
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> v, std::span<const Var<T>> parents, Backward bw) {
    Node<T>* n = push();
    n->owned = std::move(v);
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    n->requires_grad = grad_enabled_ && needs;
    if (n->requires_grad) n->backward = std::move(bw);
    return Var<T>(n);
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
    if (loss.size() != 1) throw ShapeError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;
    loss.node()->grad_buf()[0] = T{1};
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node<T>& n = **it;
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.backward) n.backward(n);
        if (n.param) {
            Parameter<T>& p = *n.param;
            if (!p.grad.same_shape(p.value)) p.zero_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
        }
    }
}

template class Tape<float>;
template class Tape<double>;

namespace ad {
namespace {

template <typename T>
Tensor<T>* grad_of(Var<T> v) {
    return v.requires_grad() ? &v.node()->grad_buf() : nullptr;
}

void require_matrix(const Shape& s, const char* what) {
    if (s.size() != 2) throw ShapeError(std::string(what) + ": expected a matrix, got " + shape_str(s));
}

} // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    require_matrix(a.shape(), "matmul");
    require_matrix(b.shape(), "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Tensor<T> out = Tensor<T>::matrix(m, n);
    kernels::gemm_nn(m, n, k, a.value().data(), b.value().data(), out.data());
    return a.tape().record(std::move(out), {a, b}, [a, b, m, n, k](Node<T>& self) {
        if (auto* ga = grad_of(a)) kernels::gemm_nt(m, k, n, self.grad.data(), b.value().data(), ga->data());
        if (auto* gb = grad_of(b)) kernels::gemm_tn(m, n, k, a.value().data(), self.grad.data(), gb->data());
    });
}

template <typename T>
static Var<T> linear_impl(Var<T> x, Var<T> w, Var<T>* b) {
    require_matrix(x.shape(), "linear");
    require_matrix(w.shape(), "linear");
    const std::size_t m = x.rows(), in = x.cols(), out_dim = w.rows();
    if (w.cols() != in) throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
    Tensor<T> out = Tensor<T>::matrix(m, out_dim);
    if (b) {
        if (b->size() != out_dim) throw ShapeError("linear: bias " + shape_str(b->shape()));
        for (std::size_t i = 0; i < m; ++i) std::memcpy(out.data() + i * out_dim, b->value().data(), out_dim * sizeof(T));
    }
    kernels::gemm_nt(m, out_dim, in, x.value().data(), w.value().data(), out.data());
    Var<T> bias = b ? *b : Var<T>();
    auto bw = [x, w, bias, m, in, out_dim](Node<T>& self) {
        const T* gy = self.grad.data();
        if (auto* gx = grad_of(x)) kernels::gemm_nn(m, in, out_dim, gy, w.value().data(), gx->data());
        if (auto* gw = grad_of(w)) kernels::gemm_tn(m, in, out_dim, gy, x.value().data(), gw->data());
        if (bias) {
            if (auto* gb = grad_of(bias)) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < out_dim; ++j) (*gb)[j] += gy[i * out_dim + j];
            }
        }
    };
    if (b) return x.tape().record(std::move(out), {x, w, *b}, bw);
    return x.tape().record(std::move(out), {x, w}, bw);
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w) {
    return linear_impl<T>(x, w, nullptr);
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
    return linear_impl<T>(x, w, &b);
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    require_same_shape(a.shape(), b.shape(), "add");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return a.tape().record(std::move(out), {a, b}, [a, b](Node<T>& self) {
        if (auto* ga = grad_of(a))
            for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i];
        if (auto* gb = grad_of(b))
            for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += self.grad[i];
    });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    require_same_shape(a.shape(), b.shape(), "sub");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return a.tape().record(std::move(out), {a, b}, [a, b](Node<T>& self) {
        if (auto* ga = grad_of(a))
            for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i];
        if (auto* gb = grad_of(b))
            for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] -= self.grad[i];
    });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    require_same_shape(a.shape(), b.shape(), "mul");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return a.tape().record(std::move(out), {a, b}, [a, b](Node<T>& self) {
        if (auto* ga = grad_of(a))
            for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i] * b.value()[i];
        if (auto* gb = grad_of(b))
            for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += self.grad[i] * a.value()[i];
    });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
    Tensor<T> out = a.value();
    for (auto& v : out.vec()) v *= s;
    return a.tape().record(std::move(out), {a}, [a, s](Node<T>& self) {
        if (auto* ga = grad_of(a))
            for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i] * s;
    });
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> v) {
    const std::size_t m = a.rows(), n = a.cols();
    if (v.size() != n) throw ShapeError("add_row: " + shape_str(a.shape()) + " + " + shape_str(v.shape()));
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += v.value()[j];
    return a.tape().record(std::move(out), {a, v}, [a, v, m, n](Node<T>& self) {
        if (auto* ga = grad_of(a))
            for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i];
        if (auto* gv = grad_of(v))
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) (*gv)[j] += self.grad[i * n + j];
    });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
    Tensor<T> out = a.value();
    for (auto& v : out.vec()) v = kernels::sigmoid(v);
    auto bw = [a](Node<T>& self) {
        if (auto* ga = grad_of(a)) {
            const auto& y = self.value();
            for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i] * y[i] * (T{1} - y[i]);
        }
    };
    return a.tape().record(std::move(out), {a}, bw);
}

template <typename T>
Var<T> swish(Var<T> a) {
    Tensor<T> out = a.value();
    for (auto& v : out.vec()) v = kernels::swish(v);
    return a.tape().record(std::move(out), {a}, [a](Node<T>& self) {
        if (auto* ga = grad_of(a)) {
            const auto& x = a.value();
            for (std::size_t i = 0; i < ga->size(); ++i) {
                const T s = kernels::sigmoid(x[i]);
                (*ga)[i] += self.grad[i] * (s + x[i] * s * (T{1} - s));
            }
        }
    });
}

template <typename T>
Var<T> glu(Var<T> a) {
    const std::size_t m = a.rows(), n2 = a.cols();
    if (n2 % 2 != 0) throw ShapeError("glu: odd column count " + std::to_string(n2));
    const std::size_t n = n2 / 2;
    Tensor<T> out = Tensor<T>::matrix(m, n);
    const auto& x = a.value();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n2 + j] * kernels::sigmoid(x[i * n2 + n + j]);
    return a.tape().record(std::move(out), {a}, [a, m, n, n2](Node<T>& self) {
        if (auto* ga = grad_of(a)) {
            const auto& x = a.value();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const T g = self.grad[i * n + j];
                    const T s = kernels::sigmoid(x[i * n2 + n + j]);
                    (*ga)[i * n2 + j] += g * s;
                    (*ga)[i * n2 + n + j] += g * x[i * n2 + j] * s * (T{1} - s);
                }
        }
    });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
    const std::size_t m = x.rows(), n = x.cols();
    if (gamma.size() != n || beta.size() != n) throw ShapeError("layer_norm: affine size vs " + shape_str(x.shape()));
    Tensor<T> out = Tensor<T>::matrix(m, n);
    std::vector<T> rstd(m);
    for (std::size_t i = 0; i < m; ++i)
        rstd[i] = kernels::layer_norm_row(x.value().data() + i * n, gamma.value().data(), beta.value().data(),
                                          out.data() + i * n, n, eps);
    return x.tape().record(std::move(out), {x, gamma, beta}, [x, gamma, beta, m, n, rstd](Node<T>& self) {
        auto* gx = grad_of(x);
        auto* gg = grad_of(gamma);
        auto* gb = grad_of(beta);
        std::vector<T> xhat(n), dxhat(n);
        for (std::size_t i = 0; i < m; ++i) {
            const T* xi = x.value().data() + i * n;
            const T* gy = self.grad.data() + i * n;
            T mu{0};
            for (std::size_t j = 0; j < n; ++j) mu += xi[j];
            mu /= static_cast<T>(n);
            T mean_d{0}, mean_dx{0};
            for (std::size_t j = 0; j < n; ++j) {
                xhat[j] = (xi[j] - mu) * rstd[i];
                dxhat[j] = gy[j] * gamma.value()[j];
                mean_d += dxhat[j];
                mean_dx += dxhat[j] * xhat[j];
                if (gg) (*gg)[j] += gy[j] * xhat[j];
                if (gb) (*gb)[j] += gy[j];
            }
            mean_d /= static_cast<T>(n);
            mean_dx /= static_cast<T>(n);
            if (gx)
                for (std::size_t j = 0; j < n; ++j) (*gx)[i * n + j] += rstd[i] * (dxhat[j] - mean_d - xhat[j] * mean_dx);
        }
    });
}

template <typename T>
Var<T> softmax_rows(Var<T> x) {
    const std::size_t m = x.rows(), n = x.cols();
    Tensor<T> out = x.value();
    for (std::size_t i = 0; i < m; ++i) kernels::softmax_inplace(out.data() + i * n, n);
    return x.tape().record(std::move(out), {x}, [x, m, n](Node<T>& self) {
        if (auto* gx = grad_of(x)) {
            const auto& y = self.value();
            for (std::size_t i = 0; i < m; ++i) {
                T dot{0};
                for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * y[i * n + j];
                for (std::size_t j = 0; j < n; ++j) (*gx)[i * n + j] += y[i * n + j] * (self.grad[i * n + j] - dot);
            }
        }
    });
}

template <typename T>
Var<T> log_softmax_rows(Var<T> x) {
    const std::size_t m = x.rows(), n = x.cols();
    Tensor<T> out = x.value();
    for (std::size_t i = 0; i < m; ++i) {
        const T lse = kernels::log_sum_exp(out.data() + i * n, n);
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] -= lse;
    }
    return x.tape().record(std::move(out), {x}, [x, m, n](Node<T>& self) {
        if (auto* gx = grad_of(x)) {
            const auto& y = self.value();
            for (std::size_t i = 0; i < m; ++i) {
                T gsum{0};
                for (std::size_t j = 0; j < n; ++j) gsum += self.grad[i * n + j];
                for (std::size_t j = 0; j < n; ++j)
                    (*gx)[i * n + j] += self.grad[i * n + j] - std::exp(y[i * n + j]) * gsum;
            }
        }
    });
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads, bool causal) {
    const std::size_t n = q.rows(), m = k.rows(), d = q.cols();
    if (k.cols() != d || v.cols() != d || v.rows() != m)
        throw ShapeError("attention: q " + shape_str(q.shape()) + " k " + shape_str(k.shape()) + " v " +
                         shape_str(v.shape()));
    if (heads == 0 || d % heads != 0) throw ShapeError("attention: width not divisible by heads");
    if (causal && m < n) throw ShapeError("attention: causal needs at least as many keys as queries");
    const std::size_t dh = d / heads;
    const T inv = T{1} / std::sqrt(static_cast<T>(dh));
    const std::size_t offset = m - n;
    // probs[h][i][j]
    std::vector<T> probs(heads * n * m, T{0});
    Tensor<T> out = Tensor<T>::matrix(n, d);
    const T* qd = q.value().data();
    const T* kd = k.value().data();
    const T* vd = v.value().data();
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * dh;
        for (std::size_t i = 0; i < n; ++i) {
            T* p = probs.data() + (h * n + i) * m;
            const std::size_t visible = causal ? i + offset + 1 : m;
            for (std::size_t j = 0; j < visible; ++j) {
                T s{0};
                for (std::size_t c = 0; c < dh; ++c) s += qd[i * d + c0 + c] * kd[j * d + c0 + c];
                p[j] = s * inv;
            }
            kernels::softmax_inplace(p, visible);
            T* o = out.data() + i * d + c0;
            for (std::size_t j = 0; j < visible; ++j) {
                const T pj = p[j];
                for (std::size_t c = 0; c < dh; ++c) o[c] += pj * vd[j * d + c0 + c];
            }
        }
    }
    return q.tape().record(std::move(out), {q, k, v},
                           [q, k, v, heads, causal, n, m, d, dh, inv, offset, probs](Node<T>& self) {
        auto* gq = grad_of(q);
        auto* gk = grad_of(k);
        auto* gv = grad_of(v);
        const T* qd = q.value().data();
        const T* kd = k.value().data();
        const T* vd = v.value().data();
        const T* go = self.grad.data();
        std::vector<T> dp(m);
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t c0 = h * dh;
            for (std::size_t i = 0; i < n; ++i) {
                const T* p = probs.data() + (h * n + i) * m;
                const std::size_t visible = causal ? i + offset + 1 : m;
                T dot{0};
                for (std::size_t j = 0; j < visible; ++j) {
                    T s{0};
                    for (std::size_t c = 0; c < dh; ++c) s += go[i * d + c0 + c] * vd[j * d + c0 + c];
                    dp[j] = s;
                    dot += s * p[j];
                    if (gv)
                        for (std::size_t c = 0; c < dh; ++c) (*gv)[j * d + c0 + c] += p[j] * go[i * d + c0 + c];
                }
                for (std::size_t j = 0; j < visible; ++j) {
                    const T ds = p[j] * (dp[j] - dot) * inv;
                    if (ds == T{0}) continue;
                    if (gq)
                        for (std::size_t c = 0; c < dh; ++c) (*gq)[i * d + c0 + c] += ds * kd[j * d + c0 + c];
                    if (gk)
                        for (std::size_t c = 0; c < dh; ++c) (*gk)[j * d + c0 + c] += ds * qd[i * d + c0 + c];
                }
            }
        }
    });
}

template <typename T>
Var<T> conv1d(Var<T> x, Var<T> w, Var<T> b, std::size_t kernel, std::size_t stride, std::size_t pad) {
    const std::size_t len = x.rows(), cin = x.cols(), cout = w.rows();
    if (w.cols() != kernel * cin || b.size() != cout)
        throw ShapeError("conv1d: weight " + shape_str(w.shape()) + " for input " + shape_str(x.shape()));
    if (stride == 0 || len + 2 * pad < kernel) throw ShapeError("conv1d: input too short");
    const std::size_t out_len = (len + 2 * pad - kernel) / stride + 1;
    const std::size_t width = kernel * cin;
    // im2col: row t holds input rows t*stride-pad .. +kernel-1, concatenated.
    Tensor<T> cols = Tensor<T>::matrix(out_len, width);
    for (std::size_t t = 0; t < out_len; ++t)
        for (std::size_t kk = 0; kk < kernel; ++kk) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + kk) - static_cast<std::ptrdiff_t>(pad);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
            std::memcpy(cols.data() + t * width + kk * cin, x.value().data() + src * cin, cin * sizeof(T));
        }
    Tensor<T> out = Tensor<T>::matrix(out_len, cout);
    for (std::size_t t = 0; t < out_len; ++t) std::memcpy(out.data() + t * cout, b.value().data(), cout * sizeof(T));
    kernels::gemm_nt(out_len, cout, width, cols.data(), w.value().data(), out.data());
    return x.tape().record(std::move(out), {x, w, b},
                           [x, w, b, cols = std::move(cols), len, cin, cout, kernel, stride, pad, out_len,
                            width](Node<T>& self) {
        const T* gy = self.grad.data();
        if (auto* gw = grad_of(w)) kernels::gemm_tn(out_len, width, cout, gy, cols.data(), gw->data());
        if (auto* gb = grad_of(b))
            for (std::size_t t = 0; t < out_len; ++t)
                for (std::size_t o = 0; o < cout; ++o) (*gb)[o] += gy[t * cout + o];
        if (auto* gx = grad_of(x)) {
            Tensor<T> gcols = Tensor<T>::matrix(out_len, width);
            kernels::gemm_nn(out_len, width, cout, gy, w.value().data(), gcols.data());
            for (std::size_t t = 0; t < out_len; ++t)
                for (std::size_t kk = 0; kk < kernel; ++kk) {
                    const std::ptrdiff_t src =
                        static_cast<std::ptrdiff_t>(t * stride + kk) - static_cast<std::ptrdiff_t>(pad);
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                    for (std::size_t c = 0; c < cin; ++c) (*gx)[src * cin + c] += gcols[t * width + kk * cin + c];
                }
        }
    });
}

template <typename T>
Var<T> depthwise_conv1d(Var<T> x, Var<T> w, Var<T> b) {
    const std::size_t len = x.rows(), ch = x.cols(), kernel = w.cols();
    if (w.rows() != ch || b.size() != ch || kernel % 2 == 0)
        throw ShapeError("depthwise_conv1d: weight " + shape_str(w.shape()) + " for input " + shape_str(x.shape()));
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(kernel / 2);
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(len);
    Tensor<T> out = Tensor<T>::matrix(len, ch);
    const T* xd = x.value().data();
    const T* wd = w.value().data();
    for (std::ptrdiff_t t = 0; t < n; ++t)
        for (std::size_t c = 0; c < ch; ++c) {
            T acc = b.value()[c];
            for (std::size_t kk = 0; kk < kernel; ++kk) {
                const std::ptrdiff_t src = t + static_cast<std::ptrdiff_t>(kk) - half;
                if (src < 0 || src >= n) continue;
                acc += wd[c * kernel + kk] * xd[src * ch + c];
            }
            out[t * ch + c] = acc;
        }
    return x.tape().record(std::move(out), {x, w, b}, [x, w, b, ch, kernel, half, n](Node<T>& self) {
        auto* gx = grad_of(x);
        auto* gw = grad_of(w);
        auto* gb = grad_of(b);
        const T* xd = x.value().data();
        const T* wd = w.value().data();
        for (std::ptrdiff_t t = 0; t < n; ++t)
            for (std::size_t c = 0; c < ch; ++c) {
                const T g = self.grad[t * ch + c];
                if (gb) (*gb)[c] += g;
                for (std::size_t kk = 0; kk < kernel; ++kk) {
                    const std::ptrdiff_t src = t + static_cast<std::ptrdiff_t>(kk) - half;
                    if (src < 0 || src >= n) continue;
                    if (gw) (*gw)[c * kernel + kk] += g * xd[src * ch + c];
                    if (gx) (*gx)[src * ch + c] += g * wd[c * kernel + kk];
                }
            }
    });
}

template <typename T>
Var<T> embedding(Var<T> table, std::span<const int> ids) {
    const std::size_t vocab = table.rows(), d = table.cols();
    Tensor<T> out = Tensor<T>::matrix(ids.size(), d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
            throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside vocab " + std::to_string(vocab));
        std::memcpy(out.data() + i * d, table.value().data() + ids[i] * d, d * sizeof(T));
    }
    std::vector<int> idv(ids.begin(), ids.end());
    return table.tape().record(std::move(out), {table}, [table, idv, d](Node<T>& self) {
        if (auto* gt = grad_of(table))
            for (std::size_t i = 0; i < idv.size(); ++i)
                for (std::size_t j = 0; j < d; ++j) (*gt)[idv[i] * d + j] += self.grad[i * d + j];
    });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const std::size_t d = parts[0].cols();
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.cols() != d && p.size() != 0) throw ShapeError("concat_rows: width mismatch");
        total += p.rows();
    }
    Tensor<T> out = Tensor<T>::matrix(total, d);
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::memcpy(out.data() + off, p.value().data(), p.size() * sizeof(T));
        off += p.size();
    }
    std::vector<Var<T>> pv(parts.begin(), parts.end());
    return parts[0].tape().record(std::move(out), parts, [pv](Node<T>& self) {
        std::size_t off = 0;
        for (const auto& p : pv) {
            if (auto* gp = grad_of(p))
                for (std::size_t i = 0; i < p.size(); ++i) (*gp)[i] += self.grad[off + i];
            off += p.size();
        }
    });
}

template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end) {
    if (begin > end || end > a.rows()) throw ShapeError("slice_rows: range out of bounds");
    const std::size_t d = a.cols();
    std::vector<T> data(a.value().data() + begin * d, a.value().data() + end * d);
    Tensor<T> out(Shape{end - begin, d}, std::move(data));
    return a.tape().record(std::move(out), {a}, [a, begin, d](Node<T>& self) {
        if (auto* ga = grad_of(a))
            for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[begin * d + i] += self.grad[i];
    });
}

template <typename T>
Var<T> pad_rows(Var<T> a, std::size_t rows) {
    if (rows < a.rows()) throw ShapeError("pad_rows: target shorter than input");
    if (rows == a.rows()) return a;
    Tensor<T> out = Tensor<T>::matrix(rows, a.cols());
    std::memcpy(out.data(), a.value().data(), a.size() * sizeof(T));
    return a.tape().record(std::move(out), {a}, [a](Node<T>& self) {
        if (auto* ga = grad_of(a))
            for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i];
    });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
    Tensor<T> out = a.value().reshaped(std::move(shape));
    return a.tape().record(std::move(out), {a}, [a](Node<T>& self) {
        if (auto* ga = grad_of(a))
            for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i];
    });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> targets) {
    const std::size_t m = logits.rows(), n = logits.cols();
    if (targets.size() != m) throw ShapeError("cross_entropy: target count vs rows");
    Tensor<T> probs = logits.value();
    T total{0};
    std::size_t count = 0;
    for (std::size_t i = 0; i < m; ++i) {
        T* row = probs.data() + i * n;
        const T lse = kernels::log_sum_exp(row, n);
        if (targets[i] >= 0) {
            if (static_cast<std::size_t>(targets[i]) >= n) throw std::out_of_range("cross_entropy: target id");
            total += lse - row[targets[i]];
            ++count;
        }
        for (std::size_t j = 0; j < n; ++j) row[j] = std::exp(row[j] - lse);
    }
    const T denom = count ? static_cast<T>(count) : T{1};
    std::vector<int> tv(targets.begin(), targets.end());
    return logits.tape().record(Tensor<T>::scalar(total / denom), {logits},
                                [logits, probs = std::move(probs), tv, m, n, denom](Node<T>& self) {
        if (auto* gl = grad_of(logits)) {
            const T g = self.grad[0] / denom;
            for (std::size_t i = 0; i < m; ++i) {
                if (tv[i] < 0) continue;
                for (std::size_t j = 0; j < n; ++j) (*gl)[i * n + j] += g * probs[i * n + j];
                (*gl)[i * n + tv[i]] -= g;
            }
        }
    });
}

template <typename T>
Var<T> sum(Var<T> a) {
    T s{0};
    for (T v : a.value().vec()) s += v;
    return a.tape().record(Tensor<T>::scalar(s), {a}, [a](Node<T>& self) {
        if (auto* ga = grad_of(a))
            for (auto& g : ga->vec()) g += self.grad[0];
    });
}

template <typename T>
Var<T> mean(Var<T> a) {
    if (a.size() == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(a), T{1} / static_cast<T>(a.size()));
}

template <typename T>
Var<T> dropout(Var<T> a, double p, Rng& rng) {
    if (p <= 0.0 || !a.tape().grad_enabled()) return a;
    const T keep = static_cast<T>(1.0 - p);
    Tensor<T> mask(a.shape());
    for (auto& m : mask.vec()) m = rng.bernoulli(p) ? T{0} : T{1} / keep;
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    return a.tape().record(std::move(out), {a}, [a, mask = std::move(mask)](Node<T>& self) {
        if (auto* ga = grad_of(a))
            for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i] * mask[i];
    });
}

#define SLM_INSTANTIATE_AD(T)                                                                          \
    template Var<T> matmul(Var<T>, Var<T>);                                                            \
    template Var<T> linear(Var<T>, Var<T>);                                                            \
    template Var<T> linear(Var<T>, Var<T>, Var<T>);                                                    \
    template Var<T> add(Var<T>, Var<T>);                                                               \
    template Var<T> sub(Var<T>, Var<T>);                                                               \
    template Var<T> mul(Var<T>, Var<T>);                                                               \
    template Var<T> scale(Var<T>, T);                                                                  \
    template Var<T> add_row(Var<T>, Var<T>);                                                           \
    template Var<T> sigmoid(Var<T>);                                                                   \
    template Var<T> swish(Var<T>);                                                                     \
    template Var<T> glu(Var<T>);                                                                       \
    template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                             \
    template Var<T> softmax_rows(Var<T>);                                                              \
    template Var<T> log_softmax_rows(Var<T>);                                                          \
    template Var<T> attention(Var<T>, Var<T>, Var<T>, std::size_t, bool);                              \
    template Var<T> conv1d(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t, std::size_t);            \
    template Var<T> depthwise_conv1d(Var<T>, Var<T>, Var<T>);                                          \
    template Var<T> embedding(Var<T>, std::span<const int>);                                           \
    template Var<T> concat_rows(std::span<const Var<T>>);                                              \
    template Var<T> slice_rows(Var<T>, std::size_t, std::size_t);                                      \
    template Var<T> pad_rows(Var<T>, std::size_t);                                                     \
    template Var<T> reshape(Var<T>, Shape);                                                            \
    template Var<T> cross_entropy(Var<T>, std::span<const int>);                                       \
    template Var<T> sum(Var<T>);                                                                       \
    template Var<T> mean(Var<T>);                                                                      \
    template Var<T> dropout(Var<T>, double, Rng&);

SLM_INSTANTIATE_AD(float)
SLM_INSTANTIATE_AD(double)

#undef SLM_INSTANTIATE_AD

} // namespace ad
} // namespace slm
