#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>

#include "codir/error.hpp"
#include "codir/gradcheck.hpp"
#include "codir/ops.hpp"
#include "codir/tensor.hpp"

using namespace codir;

namespace {

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true, double scale = 1.0) {
    const std::size_t n = shape_numel(shape);
    return Tensor::from(std::move(shape), random_values(n, rng, scale), requires_grad);
}

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::State;
}

void check_values(const Tensor& t, const std::vector<double>& expected, double tol = 0.0) {
    REQUIRE(t.numel() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (tol == 0.0)
            CHECK(t.values()[i] == expected[i]);
        else
            CHECK(t.values()[i] == doctest::Approx(expected[i]).epsilon(tol));
    }
}

}  // namespace

TEST_CASE("tensor shape and value invariants") {
    const Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.rank() == 2);
    CHECK(t.numel() == 6);
    CHECK(t.at(1, 2) == 6.0);
    CHECK(kind_of([] { Tensor::from({2, 2}, {1, 2, 3}); }) == ErrorKind::Dimension);
    CHECK(kind_of([] { Tensor::from({1, 1, 1, 1}, {1}); }) == ErrorKind::Dimension);
    CHECK(kind_of([] { Tensor::vector({1.0, std::numeric_limits<double>::quiet_NaN()}); }) == ErrorKind::Numeric);
}

TEST_CASE("matmul examples") {
    const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
    const Tensor m = Tensor::matrix(2, 2, {1, 2, 3, 4});
    check_values(matmul(eye, m), {1, 2, 3, 4});
    check_values(matmul(eye, Tensor::zeros({2, 2})), {0, 0, 0, 0});
    const Tensor r = matmul(m, Tensor::matrix(2, 1, {5, 6}));
    CHECK(r.shape() == Shape{2, 1});
    check_values(r, {17, 39});
}

TEST_CASE("matmul shape mismatch names both shapes") {
    try {
        matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
        FAIL("expected dimension error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Dimension);
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("x [2x3]") != std::string::npos);
    }
}

TEST_CASE("softmax_rows examples") {
    for (double t : {0.1, 1.0, 7.0}) check_values(softmax_rows(Tensor::matrix(1, 2, {0, 0}), t), {0.5, 0.5}, 1e-15);
    check_values(softmax_rows(Tensor::matrix(1, 3, {1, 1, 1})), {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1e-15);
    const double e = std::exp(1.0);
    const Tensor s = softmax_rows(Tensor::matrix(1, 2, {2, 0}), 2.0);
    CHECK(s.values()[0] == doctest::Approx(e / (e + 1)).epsilon(1e-14));
    CHECK(s.values()[1] == doctest::Approx(1 / (e + 1)).epsilon(1e-14));
    CHECK(s.values()[0] == doctest::Approx(0.73106).epsilon(1e-5));
}

TEST_CASE("softmax_rows rejects non-positive temperature") {
    const Tensor z = Tensor::matrix(1, 2, {1, 2});
    CHECK(kind_of([&] { softmax_rows(z, 0.0); }) == ErrorKind::Parameter);
    CHECK(kind_of([&] { softmax_rows(z, -1.0); }) == ErrorKind::Parameter);
    CHECK(kind_of([&] { log_softmax_rows(z, 0.0); }) == ErrorKind::Parameter);
}

TEST_CASE("softmax rows are stochastic and positive") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t k = 1 + trial % 9;
        const Tensor z = random_tensor({4, k}, rng, false, 1.0 + trial % 5);
        const double temp = 0.25 + (trial % 7);
        const Tensor s = softmax_rows(z, temp);
        for (std::size_t r = 0; r < 4; ++r) {
            double sum = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                CHECK(s.at(r, j) > 0.0);
                sum += s.at(r, j);
            }
            CHECK(std::abs(sum - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("softmax is stable for large logits") {
    const Tensor s = softmax_rows(Tensor::matrix(1, 2, {1000.0, 999.0}));
    CHECK(s.values()[0] == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1)));
    const Tensor ls = log_softmax_rows(Tensor::matrix(1, 2, {-1000.0, 0.0}));
    CHECK(ls.values()[0] == doctest::Approx(-1000.0));
}

TEST_CASE("mean_pool_rows examples") {
    check_values(mean_pool_rows(Tensor::matrix(2, 2, {1, 3, 3, 5}), 2), {2, 4});
    check_values(mean_pool_rows(Tensor::matrix(1, 2, {7, -1}), 1), {7, -1});
    check_values(mean_pool_rows(Tensor::matrix(3, 2, {1, 0, 2, 0, 9, 9}), 2), {1.5, 0});
}

TEST_CASE("mean_pool_rows rejects out-of-range lengths") {
    const Tensor h = Tensor::matrix(2, 2, {1, 2, 3, 4});
    CHECK(kind_of([&] { mean_pool_rows(h, 0); }) == ErrorKind::Parameter);
    CHECK(kind_of([&] { mean_pool_rows(h, 3); }) == ErrorKind::Parameter);
}

TEST_CASE("mean_pool_rows is permutation invariant over included rows") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t L = 6, d = 3, valid = 1 + trial % L;
        std::vector<double> v = random_values(L * d, rng);
        const Tensor a = mean_pool_rows(Tensor::matrix(L, d, v), valid);
        std::vector<std::size_t> perm(valid);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<double> w = v;
        for (std::size_t i = 0; i < valid; ++i) std::copy_n(v.begin() + perm[i] * d, d, w.begin() + i * d);
        const Tensor b = mean_pool_rows(Tensor::matrix(L, d, w), valid);
        for (std::size_t j = 0; j < d; ++j) CHECK(a.values()[j] == doctest::Approx(b.values()[j]).epsilon(1e-14));
    }
}

TEST_CASE("cosine_sim examples") {
    CHECK(cosine_sim(Tensor::vector({1, 0}), Tensor::vector({0, 1})).item() == 0.0);
    const Tensor v = Tensor::vector({0.3, -2.0, 5.0});
    CHECK(cosine_sim(v, v).item() == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(cosine_sim(Tensor::vector({1, 1}), Tensor::vector({1, 0})).item() == doctest::Approx(1 / std::sqrt(2.0)));
    CHECK(cosine_sim(Tensor::vector({1, 1}), Tensor::vector({1, 0})).item() == doctest::Approx(0.70711).epsilon(1e-5));
}

TEST_CASE("cosine_sim rejects zero vectors") {
    CHECK(kind_of([] { cosine_sim(Tensor::vector({0, 0}), Tensor::vector({1, 0})); }) == ErrorKind::DegenerateVector);
    CHECK(kind_of([] { cosine_sim(Tensor::vector({1, 0}), Tensor::vector({0, 0})); }) == ErrorKind::DegenerateVector);
    const std::vector<double> z = {0, 0}, u = {1, 2};
    CHECK(kind_of([&] { cosine_sim_value(z, u); }) == ErrorKind::DegenerateVector);
}

TEST_CASE("cosine_sim is symmetric, scale invariant and bounded") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t m = 1 + trial % 8;
        const Tensor u = random_tensor({m}, rng, false), v = random_tensor({m}, rng, false);
        const double c = cosine_sim(u, v).item();
        CHECK(c >= -1.0);
        CHECK(c <= 1.0);
        CHECK(std::abs(c - cosine_sim(v, u).item()) <= 1e-15);
        for (double s : {0.5, 2.0, 10.0}) CHECK(std::abs(cosine_sim(scale(u, s), v).item() - c) <= 1e-12);
    }
}

TEST_CASE("backward examples") {
    SUBCASE("sum gives ones") {
        TapeScope scope;
        Tensor w = Tensor::vector({0.5, -1.0, 2.0}, true);
        backward(sum(w));
        CHECK(std::vector<double>(w.grad().begin(), w.grad().end()) == std::vector<double>{1, 1, 1});
    }
    SUBCASE("detached constant leaves grads at zero") {
        TapeScope scope;
        Tensor w = Tensor::vector({1.0, 2.0}, true);
        const Tensor loss = scale(sum(w), 0.0).detach();
        backward(loss);
        for (double g : w.grad()) CHECK(g == 0.0);
    }
    SUBCASE("squared norm gives 2w") {
        TapeScope scope;
        Tensor w = Tensor::vector({1.0, -2.0}, true);
        backward(sum(mul(w, w)));
        CHECK(w.grad()[0] == 2.0);
        CHECK(w.grad()[1] == -4.0);
    }
}

TEST_CASE("backward rejects non-scalar losses") {
    TapeScope scope;
    Tensor w = Tensor::vector({1.0, 2.0}, true);
    CHECK(kind_of([&] { backward(scale(w, 2.0)); }) == ErrorKind::Dimension);
}

TEST_CASE("leaf gradients accumulate across backward calls") {
    TapeScope scope;
    Tensor w = Tensor::vector({1.0, -2.0}, true);
    const Tensor loss = sum(mul(w, w));
    backward(loss);
    backward(loss);
    CHECK(w.grad()[0] == 4.0);
    CHECK(w.grad()[1] == -8.0);
    w.zero_grad();
    backward(loss);
    CHECK(w.grad()[0] == 2.0);
}

TEST_CASE("backward visits each recorded op once") {
    TapeScope scope;
    std::mt19937_64 rng(1);
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    const Tensor c = matmul(a, b);
    const Tensor d = gelu(c);
    const Tensor e = add(d, c);  // c feeds two consumers
    const Tensor loss = sum(e);
    CHECK(scope.tape().size() == 4);
    backward(loss);
    CHECK(last_backward_visits() == 4);
}

TEST_CASE("no-grad mode records nothing") {
    TapeScope scope;
    Tensor w = Tensor::vector({1.0, 2.0}, true);
    {
        NoGradGuard guard;
        const Tensor y = sum(mul(w, w));
        CHECK_FALSE(y.requires_grad());
    }
    CHECK(scope.tape().size() == 0);
}

TEST_CASE("check_gradients examples") {
    SUBCASE("polynomial") {
        Tensor w = Tensor::vector({3.0}, true);
        const double err = check_gradients([&] { return mul(w, w); }, w, 1e-5);
        CHECK(err < 1e-8);
    }
    SUBCASE("constant function") {
        Tensor w = Tensor::vector({3.0, 1.0}, true);
        const GradCheckReport r = check_gradients([&] { return Tensor::scalar(4.0); }, {w}, {"w"});
        CHECK(r.max_rel_error == 0.0);
        CHECK(r.entries[0].analytic == 0.0);
        CHECK(r.entries[0].numeric == 0.0);
    }
    SUBCASE("non-finite probe is a numeric error") {
        Tensor w = Tensor::vector({0.0}, true);
        // Finite at w = 0, infinite at w = +-h.
        auto fn = [&] {
            const double v = w.values()[0];
            return Tensor::scalar(v == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
        };
        CHECK(kind_of([&] { check_gradients(fn, w, 1e-5); }) == ErrorKind::Numeric);
    }
    SUBCASE("non-positive step") {
        Tensor w = Tensor::vector({1.0}, true);
        CHECK(kind_of([&] { check_gradients([&] { return sum(w); }, w, 0.0); }) == ErrorKind::Parameter);
    }
}

TEST_CASE("relative error uses the documented denominator") {
    CHECK(gradient_relative_error(0.0, 0.0) == 0.0);
    CHECK(gradient_relative_error(1e-12, 0.0) == doctest::Approx(1e-4));
    CHECK(gradient_relative_error(2.0, 1.0) == doctest::Approx(0.5));
}

TEST_CASE("gradients of every op pass finite differences") {
    std::mt19937_64 rng(42);
    auto check = [&](const char* name, const std::vector<Tensor>& params, const std::function<Tensor()>& fn) {
        std::vector<std::string> names(params.size(), name);
        const GradCheckReport r = check_gradients(fn, params, names);
        INFO(std::string(name));
        CHECK(r.max_rel_error <= 1e-4);
    };
    const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng), c = random_tensor({3, 4}, rng);
    const Tensor w = random_tensor({3, 5}, rng, false);
    check("matmul", {a, b}, [&] { return sum(mul(matmul(a, b), w)); });
    check("add/sub/mul", {a, c}, [&] { return sum(mul(add(a, c), sub(a, scale(c, 0.5)))); });
    check("transpose", {a}, [&] { return sum(mul(matmul(transpose(a), c), Tensor::full({4, 4}, 0.3))); });
    const Tensor t3 = random_tensor({2, 3, 4}, rng), u3 = random_tensor({2, 4, 2}, rng);
    check("bmm", {t3, u3}, [&] { return sum(mul(bmm(t3, u3), bmm(t3, u3))); });
    check("softmax", {a}, [&] { return sum(mul(softmax_rows(a, 1.7), c)); });
    check("log_softmax", {a}, [&] { return sum(mul(log_softmax_rows(a, 0.6), c)); });
    const Tensor gain = random_tensor({4}, rng), bias = random_tensor({4}, rng);
    check("layer_norm", {a, gain, bias}, [&] { return sum(mul(layer_norm(a, gain, bias), c)); });
    check("gelu", {a}, [&] { return sum(mul(gelu(a), c)); });
    const Tensor d = random_tensor({3, 2}, rng);
    const Tensor w10 = random_tensor({3, 10}, rng, false);
    check("concat", {a, d}, [&] { return sum(mul(concat({a, d, a}), w10)); });
    const Tensor vbias = random_tensor({4}, rng);
    check("add_bias", {a, vbias}, [&] { return sum(mul(add_bias(a, vbias), c)); });
    const std::size_t rows[] = {2, 0, 2};
    check("select_rows", {a}, [&] { return sum(mul(select_rows(a, rows), c)); });
    const std::size_t lens[] = {3, 1};
    const Tensor h = random_tensor({2, 3, 4}, rng);
    const Tensor w24 = random_tensor({2, 4}, rng, false);
    check("mean_pool", {h}, [&] { return sum(mul(mean_pool_rows(h, lens), w24)); });
    const Tensor u = random_tensor({5}, rng), v = random_tensor({5}, rng);
    check("cosine", {u, v}, [&] { return cosine_sim(u, v); });
    const Tensor scores = random_tensor({2, 3, 3}, rng);
    const std::size_t valid[] = {2, 3};
    const Tensor w233 = random_tensor({2, 3, 3}, rng, false);
    check("masked_softmax", {scores}, [&] { return sum(mul(masked_softmax_rows(scores, valid), w233)); });
    const std::size_t targets[] = {1, 3, 0};
    check("nll", {a}, [&] { return nll_rows(log_softmax_rows(a), targets); });
    check("kl", {a}, [&] { return kl_rows(log_softmax_rows(c.detach()), log_softmax_rows(a, 2.0)); });
    const Tensor x = random_tensor({6, 4}, rng);
    const Tensor w64 = random_tensor({6, 4}, rng, false);
    check("heads", {x}, [&] { return sum(mul(merge_heads(gelu(split_heads(x, 2, 3, 2)), 2, 3, 2), w64)); });
    check("mean/add_scalar", {a}, [&] { return mean(mul(add_scalar(a, 0.7), a)); });
    check("reshape/row", {a}, [&] { return sum(mul(row(reshape(a, {4, 3}), 1), Tensor::vector({1, -2, 3}))); });
}

TEST_CASE("random composites of at most 200 values pass finite differences") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 25; ++trial) {
        // Layer norm over two columns always yields +-1, so r >= 3 keeps gradients resolvable.
        const std::size_t p = 2 + trial % 4, q = 2 + (trial / 4) % 5, r = 3 + trial % 3;
        const Tensor a = random_tensor({p, q}, rng), b = random_tensor({q, r}, rng);
        const Tensor g = random_tensor({r}, rng), bb = random_tensor({r}, rng);
        REQUIRE(a.numel() + b.numel() + g.numel() + bb.numel() <= 200);
        const Tensor target = random_tensor({p, r}, rng, false);
        auto fn = [&] {
            Tensor h = layer_norm(gelu(matmul(a, b)), g, bb);
            h = add(h, softmax_rows(h, 1.3));
            return add(mean(mul(h, target)), scale(sum(log_softmax_rows(concat({h, h}))), 0.01));
        };
        const GradCheckReport rep = check_gradients(fn, {a, b, g, bb}, {"a", "b", "g", "bb"});
        for (const auto& e : rep.entries) {
            INFO(e.name << " analytic " << e.analytic << " numeric " << e.numeric);
            CHECK(e.worst_rel_error <= 1e-4);
        }
    }
}

TEST_CASE("masked softmax gives padded columns exactly zero") {
    std::mt19937_64 rng(3);
    const Tensor s = random_tensor({1, 2, 4}, rng, false);
    const std::size_t valid[] = {2};
    const Tensor p = masked_softmax_rows(s, valid);
    for (std::size_t r = 0; r < 2; ++r) {
        CHECK(p.at(0, r, 2) == 0.0);
        CHECK(p.at(0, r, 3) == 0.0);
        CHECK(p.at(0, r, 0) + p.at(0, r, 1) == doctest::Approx(1.0));
    }
}

TEST_CASE("dropout is identity at rate zero and inverted otherwise") {
    std::mt19937_64 rng(1);
    const Tensor x = Tensor::full({1, 1000}, 1.0);
    CHECK(dropout(x, 0.0, rng).node() == x.node());
    const Tensor y = dropout(x, 0.5, rng);
    std::size_t zeros = 0;
    for (double v : y.values()) {
        CHECK((v == 0.0 || v == 2.0));
        zeros += v == 0.0;
    }
    CHECK(zeros > 400);
    CHECK(zeros < 600);
}

TEST_CASE("ops are deterministic") {
    auto run = [] {
        std::mt19937_64 rng(77);
        const Tensor a = random_tensor({4, 6}, rng), b = random_tensor({6, 3}, rng);
        const Tensor g = Tensor::full({3}, 1.0), z = Tensor::zeros({3});
        return layer_norm(gelu(matmul(a, b)), g, z);
    };
    const Tensor x = run(), y = run();
    CHECK(std::equal(x.values().begin(), x.values().end(), y.values().begin()));
}
