#include <doctest.h>

#include <cmath>

#include "cryoforge/diffcore/adam.hpp"
#include "cryoforge/diffcore/ops.hpp"
#include "gradcheck.hpp"

using namespace cryoforge;
using namespace cryoforge::diff;
using gradcheck::max_relative_error;
using gradcheck::probe;
using gradcheck::random_tensor;

namespace {
using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

void expect_gradients(const char* name, const Fn& f, std::vector<Tensor> inputs, double tol = 1e-4) {
    CAPTURE(name);
    CHECK(max_relative_error(f, std::move(inputs)) < tol);
}
} // namespace

TEST_CASE("trivial forward values") {
    Tensor zeros(Shape{4});
    const auto s = sin(zeros);
    const auto e = exp(zeros);
    for (auto v : s.data())
        CHECK(v == 0.0);
    for (auto v : e.data())
        CHECK(v == 1.0);

    std::mt19937_64 rng(1);
    auto r = random_tensor({3, 3}, rng, -1, 1, false);
    Tensor eye(Shape{3, 3}, std::vector<Real>{1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto prod = matmul(eye, r);
    for (int i = 0; i < 9; ++i)
        CHECK(prod.at(i) == r.at(i));
}

TEST_CASE("backward on hand-derived graphs") {
    Tensor x(Shape{3}, std::vector<Real>{1, 2, 3}, true);
    backward(sum(mul(x, x)));
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 4.0);
    CHECK(x.grad()[2] == 6.0);

    Tensor z = Tensor::scalar(0.0, true);
    backward(sin(z));
    CHECK(z.grad()[0] == 1.0);

    SUBCASE("repeated calls accumulate") {
        backward(sum(mul(x, x)));
        CHECK(x.grad()[0] == 4.0);
        x.zero_grad();
        CHECK(x.grad()[0] == 0.0);
    }
}

TEST_CASE("backward errors") {
    Tensor x(Shape{2}, 1.0, true);
    CHECK_THROWS_AS(backward(mul(x, x)), ShapeError);
    Tensor c(Shape{2}, 1.0, false);
    CHECK_THROWS_AS(backward(sum(c)), DomainError);
}

TEST_CASE("shape errors name the op and shapes") {
    Tensor a(Shape{2, 3}), b(Shape{4});
    try {
        (void)add(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("add") != std::string::npos);
        CHECK(msg.find("[2, 3]") != std::string::npos);
        CHECK(msg.find("[4]") != std::string::npos);
    }
    CHECK_THROWS_AS((void)matmul(Tensor(Shape{2, 3}), Tensor(Shape{2, 3})), ShapeError);
    CHECK_THROWS_AS((void)reshape(Tensor(Shape{2, 3}), {5}), ShapeError);
}

TEST_CASE("no-grad mode records nothing and forward never mutates leaves") {
    Tensor x(Shape{3}, std::vector<Real>{0.1, 0.2, 0.3}, true);
    const std::vector<Real> before(x.data().begin(), x.data().end());
    {
        NoGradGuard guard;
        auto y = exp(mul(x, x));
        CHECK_FALSE(y.requires_grad());
    }
    auto y = sum(exp(x));
    CHECK(y.requires_grad());
    CHECK(std::vector<Real>(x.data().begin(), x.data().end()) == before);
}

TEST_CASE("finite-difference checks: elementwise and broadcasting") {
    std::mt19937_64 rng(7);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({3, 4}, rng);
    auto row = random_tensor({4}, rng);
    auto col = random_tensor({3, 1}, rng);
    auto pos = random_tensor({3, 4}, rng, 0.5, 2.0);

    expect_gradients("add", [](const auto& v) { return probe(add(v[0], v[1])); }, {a, b});
    expect_gradients("sub", [](const auto& v) { return probe(sub(v[0], v[1])); }, {a, b});
    expect_gradients("mul", [](const auto& v) { return probe(mul(v[0], v[1])); }, {a, b});
    expect_gradients("div", [](const auto& v) { return probe(div(v[0], v[1])); }, {a, pos});
    expect_gradients("mul suffix", [](const auto& v) { return probe(mul(v[0], v[1])); }, {a, row});
    expect_gradients("mul suffix swapped", [](const auto& v) { return probe(mul(v[1], v[0])); }, {a, row});
    expect_gradients("sub prefix", [](const auto& v) { return probe(sub(v[0], v[1])); }, {a, col});
    expect_gradients("div prefix swapped", [](const auto& v) { return probe(div(v[1], v[0])); }, {pos, col});
    auto c = random_tensor({2, 1, 4}, rng);
    auto d = random_tensor({3, 1}, rng);
    expect_gradients("general broadcast", [](const auto& v) { return probe(mul(v[0], v[1])); }, {c, d});
}

TEST_CASE("finite-difference checks: scalar and unary maps") {
    std::mt19937_64 rng(8);
    auto a = random_tensor({2, 5}, rng);
    auto pos = random_tensor({2, 5}, rng, 0.2, 2.0);
    expect_gradients("add_scalar", [](const auto& v) { return probe(add_scalar(v[0], 0.3)); }, {a});
    expect_gradients("mul_scalar", [](const auto& v) { return probe(mul_scalar(v[0], -1.7)); }, {a});
    expect_gradients("neg", [](const auto& v) { return probe(neg(v[0])); }, {a});
    expect_gradients("sin", [](const auto& v) { return probe(sin(v[0])); }, {a});
    expect_gradients("sine", [](const auto& v) { return probe(sine(v[0], 30.0)); }, {a});
    expect_gradients("cos", [](const auto& v) { return probe(cos(v[0])); }, {a});
    expect_gradients("exp", [](const auto& v) { return probe(exp(v[0])); }, {a});
    expect_gradients("relu", [](const auto& v) { return probe(relu(v[0])); }, {a});
    expect_gradients("tanh", [](const auto& v) { return probe(tanh(v[0])); }, {a});
    expect_gradients("sqrt", [](const auto& v) { return probe(sqrt(v[0])); }, {pos});
    expect_gradients("square", [](const auto& v) { return probe(square(v[0])); }, {a});
    expect_gradients("clamp_max", [](const auto& v) { return probe(clamp_max(v[0], 0.25)); }, {a});
}

TEST_CASE("vectorized maps agree with the standard library") {
    std::mt19937_64 rng(18);
    const auto a = random_tensor({4099}, rng, -40.0, 40.0, false);
    const auto s = sin(a), c = cos(a), w = sine(a, 3.0), t = tanh(a), r = relu(a);
    const auto e = exp(mul_scalar(a, 0.25));
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const double x = a.at(i);
        CHECK(s.at(i) == doctest::Approx(std::sin(x)).epsilon(1e-13).scale(1.0));
        CHECK(c.at(i) == doctest::Approx(std::cos(x)).epsilon(1e-13).scale(1.0));
        CHECK(w.at(i) == doctest::Approx(std::sin(3.0 * x)).epsilon(1e-13).scale(1.0));
        CHECK(t.at(i) == doctest::Approx(std::tanh(x)).epsilon(1e-13).scale(1.0));
        CHECK(e.at(i) == doctest::Approx(std::exp(0.25 * x)).epsilon(1e-13));
        CHECK(r.at(i) == std::max(x, 0.0));
    }
}

TEST_CASE("finite-difference checks: contractions") {
    std::mt19937_64 rng(9);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({4, 2}, rng);
    auto ba = random_tensor({2, 3, 4}, rng);
    auto bb = random_tensor({2, 4, 2}, rng);
    expect_gradients("matmul 2x2", [](const auto& v) { return probe(matmul(v[0], v[1])); }, {a, b});
    expect_gradients("matmul batched", [](const auto& v) { return probe(matmul(v[0], v[1])); }, {ba, bb});
    expect_gradients("matmul shared left", [](const auto& v) { return probe(matmul(v[0], v[1])); }, {a, bb});
    expect_gradients("matmul shared right", [](const auto& v) { return probe(matmul(v[0], v[1])); }, {ba, b});
    expect_gradients("transpose", [](const auto& v) { return probe(transpose(v[0])); }, {ba});

    auto x = random_tensor({5, 4}, rng);
    auto w = random_tensor({4, 3}, rng);
    auto bias = random_tensor({3}, rng);
    expect_gradients("linear", [](const auto& v) { return probe(linear(v[0], v[1], v[2])); }, {x, w, bias});
    expect_gradients("linear no bias", [](const auto& v) { return probe(linear(v[0], v[1], Tensor())); }, {x, w});

    auto img = random_tensor({2, 2, 6, 6}, rng);
    auto kern = random_tensor({3, 2, 3, 3}, rng);
    auto kb = random_tensor({3}, rng);
    expect_gradients("conv2d", [](const auto& v) { return probe(conv2d(v[0], v[1], v[2])); }, {img, kern, kb});
    expect_gradients("conv2d stride 2", [](const auto& v) { return probe(conv2d(v[0], v[1], v[2], 2)); },
                     {img, kern, kb});
    expect_gradients("max_pool2x2", [](const auto& v) { return probe(max_pool2x2(v[0])); }, {img});

    auto conv_shape = conv2d(img, kern, kb, 1).shape();
    CHECK(conv_shape == Shape{2, 3, 6, 6});
    CHECK(conv2d(img, kern, kb, 2).shape() == Shape{2, 3, 3, 3});
    CHECK(max_pool2x2(img).shape() == Shape{2, 2, 3, 3});
}

TEST_CASE("finite-difference checks: reductions and layout") {
    std::mt19937_64 rng(10);
    auto a = random_tensor({3, 4, 2}, rng);
    auto b = random_tensor({3, 2, 2}, rng);
    expect_gradients("sum", [](const auto& v) { return sum(mul(v[0], v[0])); }, {a});
    expect_gradients("sum axis", [](const auto& v) { return probe(sum(v[0], 1)); }, {a});
    expect_gradients("sum axis keepdim", [](const auto& v) { return probe(sum(v[0], -1, true)); }, {a});
    expect_gradients("mean", [](const auto& v) { return mean(square(v[0])); }, {a});
    expect_gradients("mean axis", [](const auto& v) { return probe(mean(v[0], 0)); }, {a});
    expect_gradients("l2_norm_squared", [](const auto& v) { return l2_norm_squared(v[0]); }, {a});
    expect_gradients("reshape", [](const auto& v) { return probe(reshape(v[0], {4, 6})); }, {a});
    expect_gradients("concat", [](const auto& v) { return probe(concat({v[0], v[1]}, 1)); }, {a, b});
    expect_gradients("narrow", [](const auto& v) { return probe(narrow(v[0], 1, 1, 2)); }, {a});
    expect_gradients("gather_rows", [](const auto& v) { return probe(gather_rows(v[0], {2, 0, 2, 1})); }, {a});
}

TEST_CASE("finite-difference checks: complex helpers") {
    std::mt19937_64 rng(11);
    auto ar = random_tensor({6}, rng), ai = random_tensor({6}, rng);
    auto br = random_tensor({6}, rng), bi = random_tensor({6}, rng);
    auto s = random_tensor({6}, rng);
    expect_gradients("complex_mul",
                     [](const auto& v) {
                         auto p = complex_mul({v[0], v[1]}, {v[2], v[3]});
                         return add(probe(p.re, 1), probe(p.im, 2));
                     },
                     {ar, ai, br, bi});
    expect_gradients("complex_scale",
                     [](const auto& v) {
                         auto p = complex_scale({v[0], v[1]}, v[2]);
                         return add(probe(p.re, 1), probe(p.im, 2));
                     },
                     {ar, ai, s});
    expect_gradients("conj + abs_squared",
                     [](const auto& v) { return probe(abs_squared(conj({v[0], v[1]}))); }, {ar, ai});
}

TEST_CASE("finite-difference check on a composed random graph") {
    std::mt19937_64 rng(12);
    auto x = random_tensor({4, 3}, rng);
    auto w1 = random_tensor({3, 5}, rng);
    auto b1 = random_tensor({5}, rng);
    auto w2 = random_tensor({5, 2}, rng);
    expect_gradients("mlp",
                     [](const auto& v) {
                         auto h = sin(mul_scalar(linear(v[0], v[1], v[2]), 3.0));
                         auto o = matmul(h, v[3]);
                         auto e = exp(clamp_max(narrow(o, 1, 0, 1), 1.0));
                         return l2_norm_squared(mul(e, narrow(o, 1, 1, 1)));
                     },
                     {x, w1, b1, w2});
}

TEST_CASE("adam") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        Tensor p(Shape{3}, std::vector<Real>{1, -2, 3}, true);
        (void)p.mutable_grad();
        std::vector<Tensor> params{p};
        AdamState state;
        adam_step(params, state);
        CHECK(p.at(0) == 1.0);
        CHECK(p.at(1) == -2.0);
        CHECK(p.at(2) == 3.0);
        CHECK(state.step_count == 1);
    }
    SUBCASE("first step moves by about lr against the gradient sign") {
        Tensor p = Tensor::scalar(0.5, true);
        p.mutable_grad()[0] = 3.0;
        std::vector<Tensor> params{p};
        AdamState state;
        state.learning_rate = 1e-3;
        adam_step(params, state);
        CHECK(p.item() - 0.5 == doctest::Approx(-1e-3).epsilon(1e-6));
        Tensor q = Tensor::scalar(0.5, true);
        q.mutable_grad()[0] = -0.2;
        std::vector<Tensor> qs{q};
        AdamState qstate;
        qstate.learning_rate = 1e-3;
        adam_step(qs, qstate);
        CHECK(q.item() - 0.5 == doctest::Approx(1e-3).epsilon(1e-6));
    }
    SUBCASE("errors") {
        Tensor p(Shape{2}, 0.0, true);
        std::vector<Tensor> params{p};
        AdamState state;
        CHECK_THROWS(adam_step(params, state));
        (void)params[0].mutable_grad();
        adam_step(params, state);
        std::vector<Tensor> other{Tensor(Shape{3}, 0.0, true)};
        (void)other[0].mutable_grad();
        CHECK_THROWS_AS(adam_step(other, state), ShapeError);
    }
    SUBCASE("identical runs give identical trajectories") {
        auto run = [] {
            std::mt19937_64 rng(5);
            auto w = random_tensor({4, 2}, rng);
            auto x = random_tensor({6, 4}, rng, -1, 1, false);
            std::vector<Tensor> params{w};
            AdamState state;
            state.learning_rate = 1e-2;
            for (int it = 0; it < 20; ++it) {
                params[0].zero_grad();
                backward(l2_norm_squared(sin(matmul(x, params[0]))));
                adam_step(params, state);
            }
            return std::vector<Real>(w.data().begin(), w.data().end());
        };
        CHECK(run() == run());
    }
}
