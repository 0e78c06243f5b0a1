#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "slm/numcore/autodiff.hpp"

namespace slm::ctc {

inline constexpr int kBlank = 0;

/// Negative log-likelihood of `labels` (ids >= 1, no blanks) under
/// U x (V+1) log-probabilities, plus its gradient with respect to those
/// log-probabilities. Infeasible items report +inf and feasible = false.
struct CtcResult {
    double loss = 0.0;
    bool feasible = true;
    Tensor<double> grad;
};

/// Minimum frame count that can emit `labels`: L plus one blank between each
/// pair of equal neighbours.
std::size_t min_frames(std::span<const int> labels);

template <typename T>
CtcResult ctc_loss(const Tensor<T>& log_probs, std::span<const int> labels, bool with_grad = true);

/// Sums the probability of every length-U path whose collapse equals
/// `labels`. Exponential in U; refuses U > 12 with std::invalid_argument.
double ctc_brute_force(const Tensor<double>& log_probs, std::span<const int> labels);

/// Removes repeats, then blanks.
std::vector<int> collapse(std::span<const int> path);

/// Per-frame argmax followed by collapse.
template <typename T>
std::vector<int> ctc_greedy_decode(const Tensor<T>& log_probs);

/// Tape op: CTC loss of already log-normalized rows. Infeasible items yield
/// an empty Var and set `feasible` to false.
template <typename T>
Var<T> ctc_loss_op(Var<T> log_probs, std::span<const int> labels, bool* feasible = nullptr);

/// Mean CTC loss over the feasible items of a batch. Infeasible items are
/// skipped and counted.
template <typename T>
struct BatchLoss {
    Var<T> loss;
    std::size_t used = 0;
    std::size_t skipped = 0;
};

template <typename T>
BatchLoss<T> ctc_batch_loss(std::span<const Var<T>> log_probs, std::span<const std::vector<int>> labels);

} // namespace slm::ctc
