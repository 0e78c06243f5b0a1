#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "slm/ctc/ctc.hpp"
#include "slm/numcore/gradcheck.hpp"

using namespace slm;
using namespace slm::ctc;

namespace {

Tensor<double> uniform_lp(std::size_t frames, std::size_t classes) {
    return Tensor<double>(Shape{frames, classes}, -std::log(static_cast<double>(classes)));
}

Tensor<double> random_lp(std::size_t frames, std::size_t classes, Rng& rng) {
    Tensor<double> t = Tensor<double>::matrix(frames, classes);
    for (std::size_t u = 0; u < frames; ++u) {
        double mx = -1e30;
        for (std::size_t k = 0; k < classes; ++k) mx = std::max(mx, t.at(u, k) = rng.normal() * 2.0);
        double s = 0;
        for (std::size_t k = 0; k < classes; ++k) s += std::exp(t.at(u, k) - mx);
        for (std::size_t k = 0; k < classes; ++k) t.at(u, k) -= mx + std::log(s);
    }
    return t;
}

} // namespace

TEST_CASE("ctc_loss: hand-evaluated uniform cases") {
    const std::vector<int> a{1};
    CHECK(ctc_loss(uniform_lp(1, 3), a).loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    // paths aa, a-, -a out of 9
    CHECK(ctc_loss(uniform_lp(2, 3), a).loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(ctc_brute_force(uniform_lp(2, 3), a) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("ctc: infeasible and empty labels") {
    Rng rng(1);
    const auto lp = random_lp(3, 3, rng);
    const std::vector<int> too_long{1, 2, 1, 2};
    CHECK(std::isinf(ctc_brute_force(lp, too_long)));
    const auto r = ctc_loss(lp, too_long);
    CHECK_FALSE(r.feasible);
    CHECK(std::isinf(r.loss));
    // repeats need a separating blank
    const std::vector<int> rep{1, 1};
    CHECK(min_frames(rep) == 3);
    CHECK(ctc_loss(random_lp(2, 3, rng), rep).feasible == false);

    const std::vector<int> none;
    double expected = 0;
    for (std::size_t u = 0; u < 3; ++u) expected -= lp.at(u, 0);
    CHECK(ctc_brute_force(lp, none) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(ctc_loss(lp, none).loss == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("ctc_brute_force refuses long inputs") {
    const std::vector<int> l{1};
    CHECK_THROWS_AS(ctc_brute_force(uniform_lp(13, 2), l), std::invalid_argument);
}

TEST_CASE("ctc_loss matches brute force on random items") {
    Rng rng(99);
    for (std::size_t frames = 1; frames <= 8; ++frames)
        for (std::size_t vocab = 1; vocab <= 4; ++vocab)
            for (std::size_t len = 0; len <= 3; ++len)
                for (int rep = 0; rep < 2; ++rep) {
                    if (frames == 8 && vocab == 4 && rep == 1) continue;  // keep the test quick
                    const auto lp = random_lp(frames, vocab + 1, rng);
                    std::vector<int> labels(len);
                    for (auto& l : labels) l = 1 + static_cast<int>(rng.below(vocab));
                    const double dp = ctc_loss(lp, labels).loss;
                    const double bf = ctc_brute_force(lp, labels);
                    if (std::isinf(bf)) CHECK(std::isinf(dp));
                    else CHECK(std::abs(dp - bf) < 1e-6);
                }
}

TEST_CASE("ctc_loss is covariant under relabeling of non-blank symbols") {
    Rng rng(5);
    const auto lp = random_lp(6, 4, rng);
    const std::vector<int> labels{1, 3, 3, 2};
    const int perm[4] = {0, 2, 3, 1};
    Tensor<double> plp = lp;
    for (std::size_t u = 0; u < 6; ++u)
        for (int k = 0; k < 4; ++k) plp.at(u, perm[k]) = lp.at(u, k);
    std::vector<int> plabels;
    for (int l : labels) plabels.push_back(perm[l]);
    CHECK(ctc_loss(lp, labels).loss == doctest::Approx(ctc_loss(plp, plabels).loss).epsilon(1e-12));
}

TEST_CASE("ctc_loss gradient matches finite differences (64-bit)") {
    Rng rng(3);
    Parameter<double> lp("log_probs", random_lp(5, 3, rng));
    const std::vector<int> labels{1, 2};
    std::vector<Parameter<double>*> ps{&lp};
    const auto report = grad_check([&](Tape<double>& t) { return ctc_loss_op(t.param(lp), labels); }, ps);
    INFO(report.summary());
    CHECK(report.max_rel_error < 1e-5);

    // through log-softmax from raw logits
    Parameter<double> logits("logits", random_lp(5, 3, rng));
    std::vector<Parameter<double>*> ps2{&logits};
    const auto r2 = grad_check(
        [&](Tape<double>& t) { return ctc_loss_op(ad::log_softmax_rows(t.param(logits)), labels); }, ps2);
    CHECK(r2.max_rel_error < 1e-5);
}

TEST_CASE("ctc_greedy_decode collapse rule") {
    auto path_lp = [](std::vector<int> path) {
        Tensor<double> t = Tensor<double>::matrix(path.size(), 3, -5.0);
        for (std::size_t u = 0; u < path.size(); ++u) t.at(u, path[u]) = -0.1;
        return t;
    };
    CHECK(ctc_greedy_decode(path_lp({0, 1, 1, 0, 2})) == std::vector<int>{1, 2});
    CHECK(ctc_greedy_decode(path_lp({0, 0, 0})).empty());
    CHECK(ctc_greedy_decode(path_lp({1, 0, 1})) == std::vector<int>{1, 1});
}

TEST_CASE("ctc_batch_loss skips infeasible items") {
    Rng rng(8);
    Tape<double> t;
    std::vector<Var<double>> lps{t.leaf(random_lp(4, 3, rng)), t.leaf(random_lp(1, 3, rng))};
    std::vector<std::vector<int>> labels{{1, 2}, {1, 2}};
    auto b = ctc_batch_loss<double>(lps, labels);
    CHECK(b.used == 1);
    CHECK(b.skipped == 1);
    CHECK(b.loss.item() == doctest::Approx(ctc_loss(lps[0].value(), labels[0]).loss));
}
