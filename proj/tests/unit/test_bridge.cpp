#include "doctest.h"
#include "slm/bridge/bridge.hpp"
#include "slm/encoder/encoder.hpp"
#include "slm/errors.hpp"
#include "slm/numcore/gradcheck.hpp"

using namespace slm;
using namespace slm::bridge;

namespace {

Tensor<double> ramp(std::size_t rows, std::size_t cols) {
    Tensor<double> t = Tensor<double>::matrix(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i + 1);
    return t;
}

} // namespace

TEST_CASE("stack_frames: shape, identity and tail padding") {
    Tape<double> t(false);
    auto six = stack_frames(t.constant(Tensor<double>::matrix(6, 512)), 3);
    CHECK(six.shape() == Shape{2, 1536});
    CHECK(StackConfig{3, 512, 4096}.frame_ms() == 240);

    auto x = t.constant(ramp(5, 4));
    CHECK(stack_frames(x, 1).value() == x.value());

    const auto seven = stack_frames(ramp(7, 2), 3);
    REQUIRE(seven.shape() == Shape{3, 6});
    // row 0 = frames 0,1,2 in temporal order
    CHECK(seven.at(0, 0) == 1.0);
    CHECK(seven.at(0, 2) == 3.0);
    CHECK(seven.at(0, 4) == 5.0);
    // last row: frame 6 then 2*d zeros
    CHECK(seven.at(2, 0) == 13.0);
    CHECK(seven.at(2, 1) == 14.0);
    for (std::size_t j = 2; j < 6; ++j) CHECK(seven.at(2, j) == 0.0);
    CHECK_THROWS_AS(stacked_frames(4, 0), InputError);
}

TEST_CASE("stack_frames is invertible when U is divisible by n") {
    for (std::size_t n : {1u, 2u, 3u, 6u, 12u}) {
        const auto e = ramp(12, 5);
        CHECK(unstack_frames(stack_frames(e, n), n) == e);
    }
}

TEST_CASE("length law composed with the encoder") {
    Rng rng(11);
    for (int i = 0; i < 1000; ++i) {
        const std::size_t frames = 1 + rng.below(2000);
        const std::size_t n = 1 + rng.below(12);
        const std::size_t expected = ((frames + 7) / 8 + n - 1) / n;
        CHECK(stacked_frames(encoder::output_frames(frames), n) == expected);
    }
    // 20 s at 10 ms hop is 1998 frames; n = 12 gives 21 embeddings
    CHECK(stacked_frames(encoder::output_frames(1998), 12) == 21);
}

TEST_CASE("project: zero input, width law, width mismatch") {
    for (std::size_t n : {1u, 2u, 3u, 6u, 12u}) {
        Rng rng(n);
        Bridge<double> b(StackConfig{n, 4, 7}, rng);
        for (auto* p : b.parameters())
            if (p->name == "bridge.proj.bias") p->value.fill(0.0);
        Tape<double> t(false);
        auto y = b(t.constant(Tensor<double>::matrix(5, 4)));
        CHECK(y.cols() == 7);
        CHECK(y.rows() == stacked_frames(5, n));
        for (double v : y.value().vec()) CHECK(v == 0.0);
    }
    Rng rng(1);
    Bridge<double> b(StackConfig{3, 4, 7}, rng);
    Tape<double> t(false);
    CHECK_THROWS_AS(b.project(t.constant(Tensor<double>::matrix(2, 11))), ShapeError);
}

TEST_CASE("stack + project gradient matches finite differences") {
    Rng rng(4);
    Bridge<double> b(StackConfig{3, 4, 5}, rng);
    Tensor<double> e = Tensor<double>::matrix(7, 4);
    for (auto& v : e.vec()) v = rng.normal();
    Parameter<double> x("embeddings", e);
    auto ps = b.parameters();
    ps.push_back(&x);
    const auto report = grad_check([&](Tape<double>& t) {
        auto y = b(t.param(x));
        return ad::sum(ad::mul(y, y));
    }, ps);
    INFO(report.summary());
    CHECK(report.max_rel_error < 1e-5);
}
