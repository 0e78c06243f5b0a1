#include "slm/ctc/ctc.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "slm/numcore/kernels.hpp"

namespace slm::ctc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_labels(std::span<const int> labels, std::size_t classes) {
    for (int l : labels)
        if (l <= kBlank || static_cast<std::size_t>(l) >= classes)
            throw std::out_of_range("ctc: label " + std::to_string(l) + " outside 1.." + std::to_string(classes - 1));
}

} // namespace

std::size_t min_frames(std::span<const int> labels) {
    std::size_t n = labels.size();
    for (std::size_t i = 1; i < labels.size(); ++i)
        if (labels[i] == labels[i - 1]) ++n;
    return n;
}

template <typename T>
CtcResult ctc_loss(const Tensor<T>& lp, std::span<const int> labels, bool with_grad) {
    const std::size_t frames = lp.rows(), classes = lp.cols();
    check_labels(labels, classes);
    CtcResult r;
    if (frames == 0 || min_frames(labels) > frames) {
        r.loss = std::numeric_limits<double>::infinity();
        r.feasible = false;
        return r;
    }
    const std::size_t states = 2 * labels.size() + 1;
    std::vector<int> ext(states, kBlank);
    for (std::size_t i = 0; i < labels.size(); ++i) ext[2 * i + 1] = labels[i];
    auto emit = [&](std::size_t t, std::size_t s) { return static_cast<double>(lp.at(t, ext[s])); };
    auto can_skip = [&](std::size_t s) { return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2]; };

    // alpha includes the emission at t; beta excludes it.
    std::vector<double> alpha(frames * states, kNegInf), beta(frames * states, kNegInf);
    alpha[0] = emit(0, 0);
    if (states > 1) alpha[1] = emit(0, 1);
    for (std::size_t t = 1; t < frames; ++t)
        for (std::size_t s = 0; s < states; ++s) {
            const double* prev = alpha.data() + (t - 1) * states;
            double a = prev[s];
            if (s >= 1) a = kernels::log_add(a, prev[s - 1]);
            if (can_skip(s)) a = kernels::log_add(a, prev[s - 2]);
            alpha[t * states + s] = a == kNegInf ? kNegInf : a + emit(t, s);
        }
    const double* last = alpha.data() + (frames - 1) * states;
    const double log_p = states > 1 ? kernels::log_add(last[states - 1], last[states - 2]) : last[0];
    if (log_p == kNegInf) {
        r.loss = std::numeric_limits<double>::infinity();
        r.feasible = false;
        return r;
    }
    r.loss = -log_p;
    if (!with_grad) return r;

    beta[(frames - 1) * states + states - 1] = 0.0;
    if (states > 1) beta[(frames - 1) * states + states - 2] = 0.0;
    for (std::size_t t = frames - 1; t-- > 0;)
        for (std::size_t s = 0; s < states; ++s) {
            const double* next = beta.data() + (t + 1) * states;
            double b = next[s] == kNegInf ? kNegInf : next[s] + emit(t + 1, s);
            if (s + 1 < states && next[s + 1] != kNegInf) b = kernels::log_add(b, next[s + 1] + emit(t + 1, s + 1));
            if (s + 2 < states && can_skip(s + 2) && next[s + 2] != kNegInf)
                b = kernels::log_add(b, next[s + 2] + emit(t + 1, s + 2));
            beta[t * states + s] = b;
        }

    r.grad = Tensor<double>::matrix(frames, classes);
    for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t s = 0; s < states; ++s) {
            const double ab = alpha[t * states + s] + beta[t * states + s];
            if (ab == kNegInf) continue;
            r.grad.at(t, ext[s]) -= std::exp(ab - log_p);
        }
    return r;
}

std::vector<int> collapse(std::span<const int> path) {
    std::vector<int> out;
    int prev = -1;
    for (int k : path) {
        if (k != prev && k != kBlank) out.push_back(k);
        prev = k;
    }
    return out;
}

double ctc_brute_force(const Tensor<double>& lp, std::span<const int> labels) {
    const std::size_t frames = lp.rows(), classes = lp.cols();
    if (frames > 12) throw std::invalid_argument("ctc_brute_force: refusing U = " + std::to_string(frames) + " > 12");
    check_labels(labels, classes);
    const std::vector<int> target(labels.begin(), labels.end());
    std::vector<int> path(frames, 0);
    double log_total = kNegInf;
    while (true) {
        if (collapse(path) == target) {
            double lpath = 0.0;
            for (std::size_t t = 0; t < frames; ++t) lpath += lp.at(t, path[t]);
            log_total = kernels::log_add(log_total, lpath);
        }
        // odometer increment
        std::size_t t = 0;
        while (t < frames && ++path[t] == static_cast<int>(classes)) path[t++] = 0;
        if (t == frames) break;
    }
    return -log_total;
}

template <typename T>
std::vector<int> ctc_greedy_decode(const Tensor<T>& lp) {
    std::vector<int> best(lp.rows());
    for (std::size_t t = 0; t < lp.rows(); ++t) best[t] = static_cast<int>(kernels::argmax(lp.row(t).data(), lp.cols()));
    return collapse(best);
}

template <typename T>
Var<T> ctc_loss_op(Var<T> log_probs, std::span<const int> labels, bool* feasible) {
    CtcResult r = ctc_loss(log_probs.value(), labels, log_probs.requires_grad());
    if (feasible) *feasible = r.feasible;
    if (!r.feasible) return Var<T>();
    Tensor<T> grad = r.grad.empty() ? Tensor<T>() : r.grad.template cast<T>();
    return log_probs.tape().record(Tensor<T>::scalar(static_cast<T>(r.loss)), {log_probs},
                                   [log_probs, grad = std::move(grad)](Node<T>& self) {
        Tensor<T>& g = log_probs.node()->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * grad[i];
    });
}

template <typename T>
BatchLoss<T> ctc_batch_loss(std::span<const Var<T>> log_probs, std::span<const std::vector<int>> labels) {
    if (log_probs.size() != labels.size()) throw std::invalid_argument("ctc_batch_loss: size mismatch");
    BatchLoss<T> out;
    std::vector<Var<T>> losses;
    for (std::size_t i = 0; i < log_probs.size(); ++i) {
        bool ok = false;
        Var<T> l = ctc_loss_op(log_probs[i], labels[i], &ok);
        if (ok) losses.push_back(l);
        else ++out.skipped;
    }
    out.used = losses.size();
    if (losses.empty()) return out;
    Var<T> total = ad::concat_rows<T>(losses);
    out.loss = ad::mean(total);
    return out;
}

template CtcResult ctc_loss<float>(const Tensor<float>&, std::span<const int>, bool);
template CtcResult ctc_loss<double>(const Tensor<double>&, std::span<const int>, bool);
template std::vector<int> ctc_greedy_decode<float>(const Tensor<float>&);
template std::vector<int> ctc_greedy_decode<double>(const Tensor<double>&);
template Var<float> ctc_loss_op<float>(Var<float>, std::span<const int>, bool*);
template Var<double> ctc_loss_op<double>(Var<double>, std::span<const int>, bool*);
template BatchLoss<float> ctc_batch_loss<float>(std::span<const Var<float>>, std::span<const std::vector<int>>);
template BatchLoss<double> ctc_batch_loss<double>(std::span<const Var<double>>, std::span<const std::vector<int>>);

} // namespace slm::ctc
