#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "dst/autograd.hpp"
#include "dst/errors.hpp"
#include "support/oracles.hpp"

using namespace dst;
using dst::testing::finite_difference_grad;
using dst::testing::max_rel_error;
using dst::testing::random_tensor;
using dst::testing::random_tensor_nonzero;

namespace {

// Scalar loss sum(R ⊙ op(x)) gives every output element its own upstream
// weight, so one FD pass checks the whole Jacobian.
double weighted_sum(const Tensor& out, const Tensor& r) {
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * r[i];
    return s;
}

} // namespace

TEST_CASE("tensor invariants") {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.size() == 6);
    CHECK(t.at2(1, 2) == 6.0);
    CHECK(t.all_finite());
    t.values[0] = std::nan("");
    CHECK_FALSE(t.all_finite());
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0}), ShapeError);
    CHECK_THROWS_AS(t.reshaped({5}), ShapeError);
}

TEST_CASE("matmul forward examples") {
    auto a = ag::leaf(Tensor({2, 2}, {1, 0, 0, 1}));
    auto b = ag::leaf(Tensor({2, 2}, {5, 6, 7, 8}));
    CHECK(ag::matmul(a, b)->value.values == std::vector<double>{5, 6, 7, 8});

    auto r = ag::matmul(ag::leaf(Tensor({1, 2}, {1, 2})), ag::leaf(Tensor({2, 1}, {3, 4})));
    CHECK(r->value.values == std::vector<double>{11});
}

TEST_CASE("matmul shape mismatch names both shapes") {
    auto a = ag::leaf(Tensor::zeros({4, 3}));
    auto b = ag::leaf(Tensor::zeros({2, 5}));
    try {
        ag::matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("(4, 3)") != std::string::npos);
        CHECK(msg.find("(2, 5)") != std::string::npos);
    }
}

TEST_CASE("matmul backward matches finite differences") {
    Rng rng(11);
    const Tensor a0 = random_tensor({4, 3}, rng);
    const Tensor b0 = random_tensor({3, 2}, rng);
    const Tensor r = random_tensor({4, 2}, rng);

    auto an = ag::leaf(a0, true);
    auto bn = ag::leaf(b0, true);
    auto loss = ag::sum(ag::mul(ag::matmul(an, bn), ag::leaf(r)));
    ag::backward(loss);

    const Tensor fd_a = finite_difference_grad(
        [&](const Tensor& a) {
            return weighted_sum(ag::matmul(ag::leaf(a), ag::leaf(b0))->value, r);
        },
        a0);
    const Tensor fd_b = finite_difference_grad(
        [&](const Tensor& b) {
            return weighted_sum(ag::matmul(ag::leaf(a0), ag::leaf(b))->value, r);
        },
        b0);
    CHECK(max_rel_error(*an->grad, fd_a) < 1e-4);
    CHECK(max_rel_error(*bn->grad, fd_b) < 1e-4);
}

TEST_CASE("conv2d forward examples") {
    auto ones_in = ag::leaf(Tensor::full({1, 1, 3, 3}, 1.0));
    auto ones_k = ag::leaf(Tensor::full({1, 1, 3, 3}, 1.0));
    auto out = ag::conv2d(ones_in, ones_k, 1, 0);
    CHECK(out->value.shape == std::vector<std::size_t>{1, 1, 1, 1});
    CHECK(out->value[0] == doctest::Approx(9.0));

    auto x = ag::leaf(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
    auto k = ag::leaf(Tensor({1, 1, 1, 1}, {2}));
    CHECK(ag::conv2d(x, k, 1, 0)->value.values == std::vector<double>{2, 4, 6, 8});
}

TEST_CASE("conv2d rejects kernels larger than the padded input") {
    auto x = ag::leaf(Tensor::zeros({1, 1, 3, 3}));
    auto k = ag::leaf(Tensor::zeros({1, 1, 5, 5}));
    CHECK_THROWS_AS(ag::conv2d(x, k, 1, 0), ShapeError);
    CHECK_NOTHROW(ag::conv2d(x, k, 1, 1)); // padded size 5 fits
}

TEST_CASE("conv2d weight gradient matches finite differences") {
    Rng rng(12);
    const Tensor x0 = random_tensor({2, 2, 5, 5}, rng);
    const Tensor w0 = random_tensor({3, 2, 3, 3}, rng);
    auto xn = ag::leaf(x0, true);
    auto wn = ag::leaf(w0, true);
    auto out = ag::conv2d(xn, wn, 2, 1);
    const Tensor r = random_tensor(out->value.shape, rng);
    ag::backward(ag::sum(ag::mul(out, ag::leaf(r))));

    const Tensor fd_w = finite_difference_grad(
        [&](const Tensor& w) {
            return weighted_sum(ag::conv2d(ag::leaf(x0), ag::leaf(w), 2, 1)->value, r);
        },
        w0);
    const Tensor fd_x = finite_difference_grad(
        [&](const Tensor& x) {
            return weighted_sum(ag::conv2d(ag::leaf(x), ag::leaf(w0), 2, 1)->value, r);
        },
        x0);
    CHECK(max_rel_error(*wn->grad, fd_w) < 1e-4);
    CHECK(max_rel_error(*xn->grad, fd_x) < 1e-4);
}

TEST_CASE("relu and maxpool examples") {
    auto x = ag::leaf(Tensor({1, 3}, {-1, 0, 2}));
    CHECK(ag::relu(x)->value.values == std::vector<double>{0, 0, 2});

    auto p = ag::leaf(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}), true);
    auto pooled = ag::maxpool2d(p, 2, 2);
    CHECK(pooled->value.values == std::vector<double>{4});

    ag::backward(ag::sum(pooled));
    CHECK(p->grad->values == std::vector<double>{0, 0, 0, 1});

    CHECK_THROWS_AS(ag::maxpool2d(ag::leaf(Tensor::zeros({1, 1, 2, 2})), 3, 1), ShapeError);
}

TEST_CASE("maxpool backward matches finite differences") {
    Rng rng(13);
    const Tensor x0 = random_tensor_nonzero({2, 2, 6, 6}, rng);
    auto xn = ag::leaf(x0, true);
    auto out = ag::maxpool2d(xn, 2, 2);
    const Tensor r = random_tensor(out->value.shape, rng);
    ag::backward(ag::sum(ag::mul(out, ag::leaf(r))));
    const Tensor fd = finite_difference_grad(
        [&](const Tensor& x) {
            return weighted_sum(ag::maxpool2d(ag::leaf(x), 2, 2)->value, r);
        },
        x0);
    CHECK(max_rel_error(*xn->grad, fd) < 1e-4);
}

TEST_CASE("softmax cross entropy examples") {
    auto logits = ag::leaf(Tensor::full({3, 4}, 0.7), true);
    auto loss = ag::softmax_cross_entropy(logits, {0, 1, 3});
    CHECK(loss->value[0] == doctest::Approx(std::log(4.0)));

    ag::backward(loss);
    // Per-sample gradient rows sum to zero (softmax minus one-hot).
    for (std::size_t i = 0; i < 3; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < 4; ++j) row += logits->grad->values[i * 4 + j];
        CHECK(row == doctest::Approx(0.0).epsilon(1e-12));
    }

    CHECK_THROWS_AS(
        ag::softmax_cross_entropy(ag::leaf(Tensor::zeros({2, 3})), {0, 3}),
        std::out_of_range);
}

TEST_CASE("softmax cross entropy gradient matches finite differences") {
    Rng rng(14);
    const Tensor l0 = random_tensor({8, 10}, rng, -2.0, 2.0);
    std::vector<std::size_t> labels(8);
    for (auto& l : labels) l = static_cast<std::size_t>(uniform_real(rng, 0.0, 10.0));
    auto ln = ag::leaf(l0, true);
    ag::backward(ag::softmax_cross_entropy(ln, labels));
    const Tensor fd = finite_difference_grad(
        [&](const Tensor& l) {
            return ag::softmax_cross_entropy(ag::leaf(l), labels)->value[0];
        },
        l0);
    CHECK(max_rel_error(*ln->grad, fd) < 1e-4);
}

TEST_CASE("backward on an identity chain") {
    auto x = ag::leaf(Tensor::scalar(3.0), true);
    ag::backward(x);
    CHECK(x->grad->values == std::vector<double>{1});
}

TEST_CASE("masked linear computes the dense weight gradient") {
    // y = x · (w ⊙ m)ᵀ: the weight gradient ignores the mask, so dy/dw_i
    // equals x_i at every position, masked ones included.
    const Tensor x0({1, 4}, {0.5, -1.5, 2.0, 0.25});
    const Tensor m({1, 4}, {1, 0, 1, 0});
    auto xn = ag::leaf(x0);
    auto wn = ag::leaf(Tensor({1, 4}, {0.1, 0.2, 0.3, 0.4}), true);
    auto bn = ag::leaf(Tensor::zeros({1}), true);
    auto y = ag::masked_linear(xn, wn, bn, m);
    CHECK(y->value[0] == doctest::Approx(0.5 * 0.1 + 2.0 * 0.3));

    ag::backward(ag::sum(y));
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(wn->grad->values[i] == doctest::Approx(x0[i]));
    }
    CHECK(bn->grad->values[0] == doctest::Approx(1.0));
}

TEST_CASE("masked linear activation gradient respects the mask") {
    Rng rng(15);
    const Tensor x0 = random_tensor({3, 5}, rng);
    const Tensor w0 = random_tensor({2, 5}, rng);
    const Tensor b0 = random_tensor({2}, rng);
    Tensor m = Tensor::zeros({2, 5});
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = i % 3 == 0 ? 1.0 : 0.0;
    const Tensor r = random_tensor({3, 2}, rng);

    auto xn = ag::leaf(x0, true);
    auto y = ag::masked_linear(xn, ag::leaf(w0), ag::leaf(b0), m);
    ag::backward(ag::sum(ag::mul(y, ag::leaf(r))));

    const Tensor fd = finite_difference_grad(
        [&](const Tensor& x) {
            return weighted_sum(
                ag::masked_linear(ag::leaf(x), ag::leaf(w0), ag::leaf(b0), m)->value, r);
        },
        x0);
    CHECK(max_rel_error(*xn->grad, fd) < 1e-4);
}

TEST_CASE("masked conv2d dense weight gradient vs correlation oracle") {
    Rng rng(16);
    const Tensor x0 = random_tensor({1, 1, 4, 4}, rng);
    const Tensor w0 = random_tensor({1, 1, 3, 3}, rng);
    Tensor m = Tensor::full({1, 1, 3, 3}, 1.0);
    m.values[4] = 0.0; // knock out the center tap

    auto wn = ag::leaf(w0, true);
    auto y = ag::masked_conv2d(ag::leaf(x0), wn, ag::leaf(Tensor::zeros({1})), m, 1, 0);
    ag::backward(ag::sum(y));

    // With an all-ones upstream, dW[ky,kx] is the sum of the input patch the
    // tap sees, mask or not.
    for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
            double expect = 0.0;
            for (std::size_t oy = 0; oy < 2; ++oy)
                for (std::size_t ox = 0; ox < 2; ++ox)
                    expect += x0.values[(oy + ky) * 4 + (ox + kx)];
            CHECK(wn->grad->values[ky * 3 + kx] == doctest::Approx(expect));
        }
    }
}

TEST_CASE("diamond-shaped graph accumulates both contributions") {
    Rng rng(17);
    const Tensor x0 = random_tensor({2, 3}, rng);
    auto xn = ag::leaf(x0, true);
    auto u = ag::add(xn, xn);
    auto loss = ag::sum(ag::mul(u, u));
    ag::backward(loss);
    const Tensor fd = finite_difference_grad(
        [&](const Tensor& x) {
            double s = 0.0;
            for (double v : x.values) s += (v + v) * (v + v);
            return s;
        },
        x0);
    CHECK(max_rel_error(*xn->grad, fd) < 1e-4);
}

TEST_CASE("backward contract violations") {
    auto x = ag::leaf(Tensor({1, 3}, {1, 2, 3}), true);
    CHECK_THROWS_AS(ag::backward(ag::relu(x)), ContractError);

    auto loss = ag::sum(x);
    ag::backward(loss);
    CHECK_THROWS_AS(ag::backward(loss), StateError);
}

TEST_CASE("forward outputs stay finite on random graphs") {
    Rng rng(18);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = ag::leaf(random_tensor({2, 1, 6, 6}, rng), true);
        auto w = ag::leaf(random_tensor({4, 1, 3, 3}, rng), true);
        auto b = ag::leaf(random_tensor({4}, rng), true);
        auto h = ag::maxpool2d(ag::relu(ag::conv2d(x, w, 1, 1)), 2, 2);
        auto fl = ag::flatten(h);
        auto w2 = ag::leaf(random_tensor({3, fl->value.shape[1]}, rng), true);
        auto y = ag::masked_linear(fl, w2, ag::leaf(Tensor::zeros({3}), true),
                                   Tensor::full(w2->value.shape, 1.0));
        auto loss = ag::softmax_cross_entropy(y, {0, 2});
        CHECK(loss->value.all_finite());
        ag::backward(loss);
        CHECK(w->grad->all_finite());
        CHECK(w2->grad->all_finite());
    }
}
