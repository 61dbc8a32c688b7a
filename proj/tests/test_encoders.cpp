#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "calm/encoders.hpp"

using namespace calm;

namespace {

std::vector<Vec64> random_sequence(std::size_t len, std::size_t dim, Rng& rng) {
    std::vector<Vec64> seq(len, Vec64(dim));
    for (auto& v : seq)
        for (auto& x : v) x = rng.normal();
    return seq;
}

EncoderConfig tiny_config() {
    EncoderConfig c;
    c.speech_dim = 3;
    c.text_dim = 3;
    c.hidden = 4;
    c.style_dim = 2;
    c.n_tokens = 3;
    c.dropout = 0.0;
    return c;
}

}  // namespace

TEST_CASE("style encoder: zero frames give uniform attention") {
    EncoderConfig cfg;
    cfg.speech_dim = 4;
    cfg.style_dim = 3;
    cfg.n_tokens = 4;
    Rng rng(1);
    EncoderParams p = init_params(cfg, rng);

    const std::vector<Vec64> frames(3, Vec64(4, 0.0));
    StyleCache cache;
    const Vec64 out = style_encode(frames, p.style, cache);

    for (double a : cache.alpha) CHECK(a == doctest::Approx(0.25).epsilon(1e-12));
    for (std::size_t b = 0; b < 3; ++b) {
        double mean = 0.0;
        for (std::size_t j = 0; j < 4; ++j) mean += p.style.token_bank(j, b);
        mean /= 4.0;
        CHECK(out[b] == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("style encoder: frame order does not matter") {
    Rng rng(2);
    EncoderParams p = init_params(tiny_config(), rng);
    auto frames = random_sequence(5, 3, rng);
    const Vec64 a = style_encode(frames, p.style);
    std::swap(frames[0], frames[4]);
    std::swap(frames[1], frames[3]);
    const Vec64 b = style_encode(frames, p.style);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-14));
}

TEST_CASE("style encoder: hand-evaluated 1-dim case") {
    // style_dim = 1, two bank tokens, two scripted frames
    StyleEncoderParams p;
    p.pool_proj = Mat64(1, 1);
    p.pool_proj(0, 0) = 0.5;
    p.token_bank = Mat64(2, 1);
    p.token_bank(0, 0) = 1.0;
    p.token_bank(1, 0) = -2.0;
    p.key_proj = Mat64(1, 1);
    p.key_proj(0, 0) = 0.8;

    const std::vector<Vec64> frames = {{0.6}, {1.4}};
    const Vec64 out = style_encode(frames, p);

    const double mean = (0.6 + 1.4) / 2.0;
    const double q = std::tanh(0.5 * mean);
    const double k0 = 0.8 * std::tanh(1.0);
    const double k1 = 0.8 * std::tanh(-2.0);
    const double z0 = q * k0, z1 = q * k1;  // / sqrt(1)
    const double e0 = std::exp(z0), e1 = std::exp(z1);
    const double a0 = e0 / (e0 + e1), a1 = e1 / (e0 + e1);
    const double expected = a0 * 1.0 + a1 * -2.0;
    CHECK(out[0] == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("style encoder: attention stays on the simplex, output in hull") {
    Rng rng(3);
    EncoderParams p = init_params(tiny_config(), rng);
    for (int trial = 0; trial < 20; ++trial) {
        const auto frames = random_sequence(1 + trial % 4, 3, rng);
        StyleCache cache;
        const Vec64 out = style_encode(frames, p.style, cache);
        double sum = 0.0;
        for (double a : cache.alpha) sum += a;
        CHECK(std::fabs(sum - 1.0) < 1e-12);
        for (std::size_t b = 0; b < 2; ++b) {
            double lo = 1e300, hi = -1e300;
            for (std::size_t j = 0; j < 3; ++j) {
                lo = std::min(lo, p.style.token_bank(j, b));
                hi = std::max(hi, p.style.token_bank(j, b));
            }
            CHECK(out[b] >= lo - 1e-12);
            CHECK(out[b] <= hi + 1e-12);
        }
    }
    CHECK_THROWS_AS(style_encode({}, p.style), Error);
}

TEST_CASE("text encoder: zero weights give zero output") {
    Rng rng(4);
    EncoderParams p = init_params(tiny_config(), rng);
    EncoderParams z = zeros_like(p);
    const auto tokens = random_sequence(4, 3, rng);
    const Vec64 out = text_encode(tokens, z.ling, Mode::eval);
    for (double x : out) CHECK(x == 0.0);
}

TEST_CASE("text encoder: scalar GRU matches the gating formula by hand") {
    // H = 1, style_dim = 1, one token; layer weights chosen by hand
    LinguisticEncoderParams p;
    auto scalar_layer = [](double wz, double uz, double bz, double wr, double ur, double br,
                           double wh, double uh, double bh) {
        GruLayerParams g;
        g.w_z = Mat64(1, 1);
        g.w_z(0, 0) = wz;
        g.u_z = Mat64(1, 1);
        g.u_z(0, 0) = uz;
        g.b_z = {bz};
        g.w_r = Mat64(1, 1);
        g.w_r(0, 0) = wr;
        g.u_r = Mat64(1, 1);
        g.u_r(0, 0) = ur;
        g.b_r = {br};
        g.w_h = Mat64(1, 1);
        g.w_h(0, 0) = wh;
        g.u_h = Mat64(1, 1);
        g.u_h(0, 0) = uh;
        g.b_h = {bh};
        return g;
    };
    p.layer1 = scalar_layer(0.7, 0.3, 0.1, -0.4, 0.2, 0.0, 1.1, -0.6, 0.2);
    p.layer2 = scalar_layer(0.5, -0.2, 0.0, 0.9, 0.1, -0.1, -0.8, 0.4, 0.3);
    p.out_proj = Mat64(1, 1);
    p.out_proj(0, 0) = 2.0;
    p.dropout_rate = 0.0;

    const double x = 0.75;
    auto sigma = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    // layer 1, h_prev = 0
    const double z1 = sigma(0.7 * x + 0.1);
    const double h1 = z1 * std::tanh(1.1 * x + 0.2);
    // layer 2 with input h1
    const double z2 = sigma(0.5 * h1 + 0.0);
    const double h2 = z2 * std::tanh(-0.8 * h1 + 0.3);
    const double expected = 2.0 * h2;

    const Vec64 out = text_encode({{x}}, p, Mode::eval);
    CHECK(out[0] == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("text encoder: eval mode is deterministic, train mode uses dropout") {
    EncoderConfig cfg = tiny_config();
    cfg.dropout = 0.5;
    Rng rng(5);
    EncoderParams p = init_params(cfg, rng);
    const auto tokens = random_sequence(6, 3, rng);

    const Vec64 a = text_encode(tokens, p.ling, Mode::eval);
    const Vec64 b = text_encode(tokens, p.ling, Mode::eval);
    CHECK(a == b);  // bitwise

    Rng d1(9), d2(9), d3(10);
    const Vec64 t1 = text_encode(tokens, p.ling, Mode::train, &d1);
    const Vec64 t2 = text_encode(tokens, p.ling, Mode::train, &d2);
    const Vec64 t3 = text_encode(tokens, p.ling, Mode::train, &d3);
    CHECK(t1 == t2);
    CHECK(t1 != t3);

    CHECK_THROWS_AS(text_encode(tokens, p.ling, Mode::train, nullptr), Error);
    CHECK_THROWS_AS(text_encode({}, p.ling, Mode::eval), Error);
}

TEST_CASE("backward: zero upstream gradient leaves all grads zero") {
    Rng rng(6);
    EncoderParams p = init_params(tiny_config(), rng);
    const auto frames = random_sequence(3, 3, rng);
    const auto tokens = random_sequence(4, 3, rng);

    StyleCache sc;
    style_encode(frames, p.style, sc);
    TextCache tc;
    text_encode(tokens, p.ling, Mode::eval, nullptr, tc);

    EncoderParams grads = zeros_like(p);
    style_backward(Vec64(2, 0.0), sc, p.style, grads.style);
    text_backward(Vec64(2, 0.0), tc, p.ling, grads.ling);
    for (double g : flatten(grads)) CHECK(g == 0.0);
}

TEST_CASE("backward without a forward pass is rejected") {
    Rng rng(7);
    EncoderParams p = init_params(tiny_config(), rng);
    EncoderParams grads = zeros_like(p);
    StyleCache sc;
    TextCache tc;
    CHECK_THROWS_AS(style_backward(Vec64(2, 0.0), sc, p.style, grads.style), Error);
    CHECK_THROWS_AS(text_backward(Vec64(2, 0.0), tc, p.ling, grads.ling), Error);
}

TEST_CASE("backward: doubling the upstream gradient doubles every grad") {
    Rng rng(8);
    EncoderParams p = init_params(tiny_config(), rng);
    const auto tokens = random_sequence(5, 3, rng);
    TextCache tc;
    text_encode(tokens, p.ling, Mode::eval, nullptr, tc);

    Vec64 upstream(2);
    for (auto& x : upstream) x = rng.normal();
    Vec64 twice = upstream;
    for (auto& x : twice) x *= 2.0;

    EncoderParams g1 = zeros_like(p), g2 = zeros_like(p);
    text_backward(upstream, tc, p.ling, g1.ling);
    text_backward(twice, tc, p.ling, g2.ling);
    const Vec64 f1 = flatten(g1), f2 = flatten(g2);
    for (std::size_t i = 0; i < f1.size(); ++i)
        CHECK(f2[i] == doctest::Approx(2.0 * f1[i]).epsilon(1e-12));
}

// The load-bearing test: analytic gradients of both encoders against the
// finite-difference oracle, via a scalar probe loss dot(output, u).
TEST_CASE("backward matches finite differences over 20 seeds") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        EncoderParams p = init_params(tiny_config(), rng);
        const auto frames = random_sequence(2 + seed % 3, 3, rng);
        const auto tokens = random_sequence(2 + seed % 4, 3, rng);
        Vec64 probe(2);
        for (auto& x : probe) x = rng.normal();

        EncoderParams grads = zeros_like(p);
        StyleCache sc;
        style_encode(frames, p.style, sc);
        style_backward(probe, sc, p.style, grads.style);
        TextCache tc;
        text_encode(tokens, p.ling, Mode::eval, nullptr, tc);
        text_backward(probe, tc, p.ling, grads.ling);

        auto loss = [&](const Vec64& theta) {
            EncoderParams q = p;
            unflatten(theta, q);
            const Vec64 s = style_encode(frames, q.style);
            const Vec64 t = text_encode(tokens, q.ling, Mode::eval);
            return dot(s, probe) + dot(t, probe);
        };
        const Vec64 fd = finite_diff_grad(loss, flatten(p), 1e-4);
        CHECK(max_relative_error(flatten(grads), fd) < 1e-3);
    }
}

TEST_CASE("both encoders emit style_dim-sized vectors for any valid config") {
    Rng rng(12);
    for (std::size_t style_dim : {1UL, 2UL, 8UL, 13UL}) {
        EncoderConfig cfg;
        cfg.speech_dim = 1 + rng.below(6);
        cfg.text_dim = 1 + rng.below(6);
        cfg.hidden = 1 + rng.below(8);
        cfg.style_dim = style_dim;
        cfg.n_tokens = 1 + rng.below(5);
        EncoderParams p = init_params(cfg, rng);
        const auto frames = random_sequence(3, cfg.speech_dim, rng);
        const auto tokens = random_sequence(3, cfg.text_dim, rng);
        CHECK(style_encode(frames, p.style).size() == style_dim);
        CHECK(text_encode(tokens, p.ling, Mode::eval).size() == style_dim);
    }
}

TEST_CASE("init_params: deterministic, bounded, seed-sensitive") {
    EncoderConfig cfg = tiny_config();
    Rng r1(42), r2(42), r3(43);
    const EncoderParams a = init_params(cfg, r1);
    const EncoderParams b = init_params(cfg, r2);
    const EncoderParams c = init_params(cfg, r3);
    CHECK(flatten(a) == flatten(b));
    CHECK(flatten(a) != flatten(c));

    // every weight within its documented bound; all biases zero
    auto check_mat = [](const Mat64& m) {
        const double bound = std::sqrt(6.0 / static_cast<double>(m.rows + m.cols));
        for (double x : m.data) {
            CHECK(std::fabs(x) <= bound);
        }
    };
    check_mat(a.style.pool_proj);
    check_mat(a.style.token_bank);
    check_mat(a.style.key_proj);
    check_mat(a.ling.layer1.w_z);
    check_mat(a.ling.layer2.u_h);
    check_mat(a.ling.out_proj);
    for (double x : a.ling.layer1.b_z) CHECK(x == 0.0);
    for (double x : a.ling.layer2.b_h) CHECK(x == 0.0);
}

TEST_CASE("checkpoint round-trip is bit-exact and rejects damage") {
    Rng rng(99);
    EncoderConfig cfg;
    cfg.dropout = 0.2;
    EncoderParams p = init_params(cfg, rng);
    const auto dir = std::filesystem::temp_directory_path() / "calm_ckpt_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "params.ckpt").string();

    save_checkpoint(p, path);
    const EncoderParams loaded = load_checkpoint(path);
    CHECK(loaded.config == p.config);
    CHECK(flatten(loaded) == flatten(p));  // bitwise

    // truncated file
    const auto full = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full / 2);
    CHECK_THROWS_AS(load_checkpoint(path), Error);

    // wrong magic
    save_checkpoint(p, path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("JUNKJUNK", 8);
    }
    try {
        load_checkpoint(path);
        FAIL("expected FormatVersionMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrCode::format_version_mismatch);
    }
    std::filesystem::remove_all(dir);
}
