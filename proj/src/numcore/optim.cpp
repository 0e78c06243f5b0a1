#include "slm/numcore/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace slm {

template <typename T>
UpdateResult adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads, AdamState<T>& state,
                       double lr) {
    if (params.size() != grads.size()) throw ShapeError("adam_step: parameter and gradient counts differ");
    if (!(lr > 0.0)) throw std::invalid_argument("adam_step: learning rate must be positive");
    if (state.m.empty()) {
        for (auto* p : params) {
            state.m.emplace_back(p->shape());
            state.v.emplace_back(p->shape());
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adam_step: moment buffers do not match parameters");

    UpdateResult result;
    double sq = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        require_same_shape(params[i]->shape(), grads[i]->shape(), "adam_step grad");
        require_same_shape(params[i]->shape(), state.m[i].shape(), "adam_step moment");
        for (std::size_t j = 0; j < grads[i]->size(); ++j) {
            const double g = (*grads[i])[j];
            if (!std::isfinite(g)) {
                result.diagnostic = "non-finite gradient in tensor " + std::to_string(i) + " at index " + std::to_string(j);
                return result;
            }
            sq += g * g;
        }
    }
    result.grad_norm = std::sqrt(sq);

    state.step += 1;
    const double b1 = state.beta1, b2 = state.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = *params[i];
        const Tensor<T>& g = *grads[i];
        Tensor<T>& m = state.m[i];
        Tensor<T>& v = state.v[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = static_cast<T>(b1 * m[j] + (1.0 - b1) * g[j]);
            v[j] = static_cast<T>(b2 * v[j] + (1.0 - b2) * g[j] * g[j]);
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            p[j] = static_cast<T>(p[j] - lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
    result.applied = true;
    return result;
}

template <typename T>
double clip_grad_norm(std::span<Parameter<T>* const> params, double max_norm) {
    double sq = 0.0;
    for (auto* p : params)
        for (T g : p->grad.vec()) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm && std::isfinite(norm)) {
        const T s = static_cast<T>(max_norm / norm);
        for (auto* p : params)
            for (T& g : p->grad.vec()) g *= s;
    }
    return norm;
}

template <typename T>
Adam<T>::Adam(std::vector<Parameter<T>*> params, AdamConfig config) : params_(std::move(params)), config_(config) {
    state_.beta1 = config.beta1;
    state_.beta2 = config.beta2;
    state_.eps = config.eps;
}

template <typename T>
UpdateResult Adam<T>::step(double lr) {
    const double norm = clip_grad_norm<T>(params_, config_.clip_norm);
    std::vector<Tensor<T>*> values;
    std::vector<const Tensor<T>*> grads;
    for (auto* p : params_) {
        if (!p->grad.same_shape(p->value)) p->zero_grad();
        values.push_back(&p->value);
        grads.push_back(&p->grad);
    }
    UpdateResult r = adam_step<T>(values, grads, state_, lr);
    r.grad_norm = norm;
    return r;
}

template <typename T>
void Adam<T>::zero_grad() {
    for (auto* p : params_) p->zero_grad();
}

void LrSchedule::validate() const {
    if (warmup_steps >= total_steps) throw std::invalid_argument("schedule: warmup_steps must be below total_steps");
    if (!(final_lr > 0.0) || peak_lr < final_lr) throw std::invalid_argument("schedule: need peak_lr >= final_lr > 0");
}

double schedule_lr(const LrSchedule& s, std::size_t step) {
    if (step < s.warmup_steps) return s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    if (step >= s.total_steps) return s.final_lr;
    const double frac =
        static_cast<double>(step - s.warmup_steps) / static_cast<double>(s.total_steps - s.warmup_steps);
    return s.peak_lr * std::pow(s.final_lr / s.peak_lr, frac);
}

template UpdateResult adam_step<float>(std::span<Tensor<float>* const>, std::span<const Tensor<float>* const>,
                                       AdamState<float>&, double);
template UpdateResult adam_step<double>(std::span<Tensor<double>* const>, std::span<const Tensor<double>* const>,
                                        AdamState<double>&, double);
template double clip_grad_norm<float>(std::span<Parameter<float>* const>, double);
template double clip_grad_norm<double>(std::span<Parameter<double>* const>, double);
template class Adam<float>;
template class Adam<double>;

} // namespace slm
