#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "slm/numcore/autodiff.hpp"

namespace slm {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
    /// Global gradient-norm clip; <= 0 disables.
    double clip_norm = 1.0;
};

template <typename T>
struct AdamState {
    std::size_t step = 0;
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
};

struct UpdateResult {
    bool applied = false;
    double grad_norm = 0.0;
    std::string diagnostic;
};

/// Bias-corrected Adam update over parallel lists of parameters and
/// gradients. Moment buffers are created on the first call. A non-finite
/// gradient rejects the whole update and leaves params and state untouched.
template <typename T>
UpdateResult adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads, AdamState<T>& state,
                       double lr);

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(std::span<Parameter<T>* const> params, double max_norm);

/// Adam bound to a fixed set of trainable parameters.
template <typename T>
class Adam {
public:
    Adam(std::vector<Parameter<T>*> params, AdamConfig config);

    UpdateResult step(double lr);
    void zero_grad();

    const std::vector<Parameter<T>*>& params() const { return params_; }
    AdamState<T>& state() { return state_; }
    const AdamState<T>& state() const { return state_; }

private:
    std::vector<Parameter<T>*> params_;
    AdamConfig config_;
    AdamState<T> state_;
};

/// Linear warmup to `peak_lr`, then geometric decay reaching `final_lr`
/// exactly at `total_steps`; constant afterwards.
struct LrSchedule {
    double peak_lr = 1e-3;
    double final_lr = 1e-5;
    std::size_t warmup_steps = 20000;
    std::size_t total_steps = 250000;

    void validate() const;
};

double schedule_lr(const LrSchedule& schedule, std::size_t step);

extern template class Adam<float>;
extern template class Adam<double>;

} // namespace slm
