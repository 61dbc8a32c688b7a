#include <doctest.h>

#include <cmath>

#include "calm/tensor.hpp"

using namespace calm;

TEST_CASE("cosine similarity basics") {
    CHECK(cosine_similarity({1, 0}, {1, 0}) == doctest::Approx(1.0));
    CHECK(cosine_similarity({1, 0}, {0, 1}) == doctest::Approx(0.0));
    CHECK(cosine_similarity({1, 0}, {-2, 0}) == doctest::Approx(-1.0));

    CHECK_THROWS_AS(cosine_similarity({1, 0}, {1, 0, 0}), Error);
    try {
        cosine_similarity({0, 0}, {1, 0});
        FAIL("expected ZeroNorm");
    } catch (const Error& e) {
        CHECK(e.code() == ErrCode::zero_norm);
    }
}

TEST_CASE("cosine similarity properties") {
    Rng rng(41);
    for (int trial = 0; trial < 50; ++trial) {
        Vec64 a(5), b(5);
        for (auto& x : a) x = rng.normal();
        for (auto& x : b) x = rng.normal();
        const double c = cosine_similarity(a, b);
        CHECK(c >= -1.0);
        CHECK(c <= 1.0);
        CHECK(cosine_similarity(a, a) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(cosine_similarity(b, a) == doctest::Approx(c).epsilon(1e-12));

        // positive rescaling of either argument changes nothing
        Vec64 a3 = a;
        for (auto& x : a3) x *= 3.7;
        CHECK(cosine_similarity(a3, b) == doctest::Approx(c).epsilon(1e-12));
    }
}

TEST_CASE("softmax values and invariants") {
    const Vec64 uniform = softmax({0.0, 0.0});
    CHECK(uniform[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(uniform[1] == doctest::Approx(0.5).epsilon(1e-15));

    const Vec64 two = softmax({std::log(2.0), 0.0});
    CHECK(two[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(two[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

    CHECK_THROWS_AS(softmax({}), Error);

    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        Vec64 v(4);
        for (auto& x : v) x = rng.uniform(-30, 30);
        const Vec64 y = softmax(v);
        double sum = 0.0;
        for (double x : y) {
            CHECK(x > 0.0);
            CHECK(x < 1.0);
            sum += x;
        }
        CHECK(std::fabs(sum - 1.0) < 1e-12);

        // shift invariance
        Vec64 shifted = v;
        for (auto& x : shifted) x += 123.25;
        const Vec64 ys = softmax(shifted);
        for (std::size_t i = 0; i < y.size(); ++i)
            CHECK(ys[i] == doctest::Approx(y[i]).epsilon(1e-12));
    }
}

TEST_CASE("mse") {
    Mat64 a(2, 2), b(2, 2);
    a.data = {1, 1, 1, 1};
    b.data = {0, 0, 0, 0};
    CHECK(mse(a, a) == 0.0);
    CHECK(mse(a, b) == doctest::Approx(1.0));

    Mat64 one(1, 1), neg(1, 1);
    one.data = {1};
    neg.data = {-1};
    CHECK(mse(one, neg) == doctest::Approx(4.0));

    Mat64 wrong(2, 1);
    CHECK_THROWS_AS(mse(a, wrong), Error);

    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        Mat64 m(3, 3), n(3, 3);
        for (auto& x : m.data) x = rng.normal();
        for (auto& x : n.data) x = rng.normal();
        CHECK(mse(m, n) >= 0.0);
    }
}

TEST_CASE("finite difference gradient") {
    auto square = [](const Vec64& t) { return t[0] * t[0]; };
    const Vec64 g = finite_diff_grad(square, {1.0}, 1e-5);
    CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-6));

    auto constant = [](const Vec64&) { return 3.25; };
    for (double x : finite_diff_grad(constant, {0.3, -2.0, 5.0}, 1e-5))
        CHECK(x == doctest::Approx(0.0));

    // f(x) = x^T A x has gradient (A + A^T) x
    const Mat64 a = [] {
        Mat64 m(2, 2);
        m.data = {1.5, -0.5, 2.0, 0.75};
        return m;
    }();
    auto quad = [&](const Vec64& t) { return dot(t, matvec(a, t)); };
    const Vec64 theta = {0.4, -1.2};
    const Vec64 fd = finite_diff_grad(quad, theta, 1e-5);
    Vec64 expected = matvec(a, theta);
    axpy(1.0, matvec_t(a, theta), expected);
    for (std::size_t i = 0; i < 2; ++i)
        CHECK(fd[i] == doctest::Approx(expected[i]).epsilon(1e-5));

    auto bad = [](const Vec64& t) { return std::log(t[0]); };
    CHECK_THROWS_AS(finite_diff_grad(bad, {-1.0}, 1e-5), Error);
    CHECK_THROWS_AS(finite_diff_grad(square, {1.0}, 0.0), Error);
}

TEST_CASE("rng determinism and uniformity") {
    Rng a(987654321), b(987654321);
    for (int i = 0; i < 10000; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng c(1), d(2);
    bool differs = false;
    for (int i = 0; i < 10 && !differs; ++i) differs = c.next_u64() != d.next_u64();
    CHECK(differs);

    Rng u(5);
    int buckets[8] = {0};
    for (int i = 0; i < 80000; ++i) buckets[u.below(8)]++;
    for (int k = 0; k < 8; ++k) CHECK(std::abs(buckets[k] - 10000) < 400);
}

TEST_CASE("softmax backward matches finite differences") {
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        Vec64 z(5), upstream(5);
        for (auto& x : z) x = rng.uniform(-2, 2);
        for (auto& x : upstream) x = rng.normal();
        auto loss = [&](const Vec64& t) { return dot(softmax(t), upstream); };
        const Vec64 fd = finite_diff_grad(loss, z, 1e-6);
        const Vec64 analytic = softmax_backward(softmax(z), upstream);
        CHECK(max_relative_error(analytic, fd, 1e-6) < 1e-6);
    }
}
