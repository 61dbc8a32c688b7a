#include "calm/encoders.hpp"

#include <cmath>
#include <fstream>

#include "calm/binio.hpp"

namespace calm {

namespace {

constexpr char kCheckpointMagic[8] = {'C', 'A', 'L', 'M', 'C', 'K', 'P', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Mat64 uniform_mat(std::size_t rows, std::size_t cols, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Mat64 m(rows, cols);
    for (auto& x : m.data) x = rng.uniform(-a, a);
    return m;
}

GruLayerParams init_gru_layer(std::size_t input, std::size_t hidden, Rng& rng) {
    GruLayerParams g;
    g.w_z = uniform_mat(hidden, input, rng);
    g.u_z = uniform_mat(hidden, hidden, rng);
    g.b_z = Vec64(hidden, 0.0);
    g.w_r = uniform_mat(hidden, input, rng);
    g.u_r = uniform_mat(hidden, hidden, rng);
    g.b_r = Vec64(hidden, 0.0);
    g.w_h = uniform_mat(hidden, input, rng);
    g.u_h = uniform_mat(hidden, hidden, rng);
    g.b_h = Vec64(hidden, 0.0);
    return g;
}

// One GRU layer over the whole sequence, caching what backward needs.
void gru_forward(const GruLayerParams& g, const std::vector<Vec64>& xs,
                 GruLayerCache& cache) {
    const std::size_t hidden = g.b_z.size();
    const std::size_t steps = xs.size();
    cache.steps = steps;
    cache.inputs = xs;
    cache.h.assign(steps + 1, Vec64(hidden, 0.0));
    cache.z.assign(steps, Vec64());
    cache.r.assign(steps, Vec64());
    cache.cand.assign(steps, Vec64());
    cache.rh.assign(steps, Vec64());

    for (std::size_t t = 0; t < steps; ++t) {
        const Vec64& x = xs[t];
        const Vec64& h_prev = cache.h[t];
        Vec64 az = matvec(g.w_z, x);
        axpy(1.0, matvec(g.u_z, h_prev), az);
        axpy(1.0, g.b_z, az);
        Vec64 ar = matvec(g.w_r, x);
        axpy(1.0, matvec(g.u_r, h_prev), ar);
        axpy(1.0, g.b_r, ar);
        Vec64 z(hidden), r(hidden);
        for (std::size_t i = 0; i < hidden; ++i) {
            z[i] = sigmoid(az[i]);
            r[i] = sigmoid(ar[i]);
        }
        Vec64 rh(hidden);
        for (std::size_t i = 0; i < hidden; ++i) rh[i] = r[i] * h_prev[i];
        Vec64 ah = matvec(g.w_h, x);
        axpy(1.0, matvec(g.u_h, rh), ah);
        axpy(1.0, g.b_h, ah);
        Vec64 cand(hidden), h(hidden);
        for (std::size_t i = 0; i < hidden; ++i) {
            cand[i] = std::tanh(ah[i]);
            h[i] = (1.0 - z[i]) * h_prev[i] + z[i] * cand[i];
        }
        cache.z[t] = std::move(z);
        cache.r[t] = std::move(r);
        cache.cand[t] = std::move(cand);
        cache.rh[t] = std::move(rh);
        cache.h[t + 1] = std::move(h);
    }
}

// BPTT over one layer. d_out holds per-step gradients arriving at h_t from
// outside the layer (the next layer, or the head for the last step only).
// Returns per-step input gradients; parameter grads accumulate into `grads`.
std::vector<Vec64> gru_backward(const GruLayerParams& g, const GruLayerCache& cache,
                                const std::vector<Vec64>& d_out,
                                GruLayerParams& grads) {
    const std::size_t hidden = g.b_z.size();
    const std::size_t steps = cache.steps;
    std::vector<Vec64> dxs(steps);
    Vec64 dh(hidden, 0.0);

    for (std::size_t ti = steps; ti-- > 0;) {
        axpy(1.0, d_out[ti], dh);
        const Vec64& h_prev = cache.h[ti];
        const Vec64& z = cache.z[ti];
        const Vec64& r = cache.r[ti];
        const Vec64& cand = cache.cand[ti];
        const Vec64& rh = cache.rh[ti];
        const Vec64& x = cache.inputs[ti];

        Vec64 dah(hidden), daz(hidden), dh_prev(hidden);
        for (std::size_t i = 0; i < hidden; ++i) {
            const double dc = dh[i] * z[i];
            const double dz = dh[i] * (cand[i] - h_prev[i]);
            dah[i] = dc * (1.0 - cand[i] * cand[i]);
            daz[i] = dz * z[i] * (1.0 - z[i]);
            dh_prev[i] = dh[i] * (1.0 - z[i]);
        }
        add_outer(grads.w_h, dah, x);
        add_outer(grads.u_h, dah, rh);
        axpy(1.0, dah, grads.b_h);

        const Vec64 drh = matvec_t(g.u_h, dah);
        Vec64 dar(hidden);
        for (std::size_t i = 0; i < hidden; ++i) {
            const double dr = drh[i] * h_prev[i];
            dar[i] = dr * r[i] * (1.0 - r[i]);
            dh_prev[i] += drh[i] * r[i];
        }
        add_outer(grads.w_z, daz, x);
        add_outer(grads.u_z, daz, h_prev);
        axpy(1.0, daz, grads.b_z);
        add_outer(grads.w_r, dar, x);
        add_outer(grads.u_r, dar, h_prev);
        axpy(1.0, dar, grads.b_r);

        axpy(1.0, matvec_t(g.u_z, daz), dh_prev);
        axpy(1.0, matvec_t(g.u_r, dar), dh_prev);

        Vec64 dx = matvec_t(g.w_z, daz);
        axpy(1.0, matvec_t(g.w_r, dar), dx);
        axpy(1.0, matvec_t(g.w_h, dah), dx);
        dxs[ti] = std::move(dx);

        dh = std::move(dh_prev);
    }
    return dxs;
}

GruLayerParams zeros_like_gru(const GruLayerParams& g) {
    GruLayerParams z;
    z.w_z = Mat64(g.w_z.rows, g.w_z.cols);
    z.u_z = Mat64(g.u_z.rows, g.u_z.cols);
    z.b_z = Vec64(g.b_z.size(), 0.0);
    z.w_r = Mat64(g.w_r.rows, g.w_r.cols);
    z.u_r = Mat64(g.u_r.rows, g.u_r.cols);
    z.b_r = Vec64(g.b_r.size(), 0.0);
    z.w_h = Mat64(g.w_h.rows, g.w_h.cols);
    z.u_h = Mat64(g.u_h.rows, g.u_h.cols);
    z.b_h = Vec64(g.b_h.size(), 0.0);
    return z;
}

}  // namespace

void EncoderConfig::validate() const {
    if (speech_dim == 0 || text_dim == 0 || hidden == 0 || style_dim == 0 ||
        n_tokens == 0)
        fail(ErrCode::bad_argument, "encoder dimensions must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0))
        fail(ErrCode::bad_argument, "dropout rate must lie in [0, 1)");
}

EncoderParams init_params(const EncoderConfig& config, Rng& rng) {
    config.validate();
    EncoderParams p;
    p.config = config;
    p.style.pool_proj = uniform_mat(config.style_dim, config.speech_dim, rng);
    p.style.token_bank = uniform_mat(config.n_tokens, config.style_dim, rng);
    p.style.key_proj = uniform_mat(config.style_dim, config.style_dim, rng);
    p.ling.layer1 = init_gru_layer(config.text_dim, config.hidden, rng);
    p.ling.layer2 = init_gru_layer(config.hidden, config.hidden, rng);
    p.ling.out_proj = uniform_mat(config.style_dim, config.hidden, rng);
    p.ling.dropout_rate = config.dropout;
    return p;
}

Vec64 style_encode(const std::vector<Vec64>& frames, const StyleEncoderParams& p) {
    StyleCache cache;
    return style_encode(frames, p, cache);
}

Vec64 style_encode(const std::vector<Vec64>& frames, const StyleEncoderParams& p,
                   StyleCache& cache) {
    if (frames.empty()) fail(ErrCode::empty_sequence, "style_encode: no frames");
    const std::size_t speech_dim = p.pool_proj.cols;
    const std::size_t style_dim = p.pool_proj.rows;
    const std::size_t n_tokens = p.token_bank.rows;
    if (p.token_bank.cols != style_dim || p.key_proj.rows != style_dim ||
        p.key_proj.cols != style_dim)
        fail(ErrCode::dim_mismatch, "style_encode: inconsistent parameter shapes");

    Vec64 mean(speech_dim, 0.0);
    for (const auto& f : frames) {
        if (f.size() != speech_dim)
            fail(ErrCode::dim_mismatch, "style_encode: frame dim " +
                                            std::to_string(f.size()) + " != " +
                                            std::to_string(speech_dim));
        axpy(1.0, f, mean);
    }
    for (auto& x : mean) x /= static_cast<double>(frames.size());

    Vec64 query = matvec(p.pool_proj, mean);
    for (auto& x : query) x = std::tanh(x);

    Mat64 bank_tanh(n_tokens, style_dim);
    for (std::size_t i = 0; i < bank_tanh.data.size(); ++i)
        bank_tanh.data[i] = std::tanh(p.token_bank.data[i]);

    // keys = tanh(bank) * key_proj^T, one row per token
    Mat64 keys(n_tokens, style_dim);
    for (std::size_t j = 0; j < n_tokens; ++j) {
        for (std::size_t a = 0; a < style_dim; ++a) {
            double s = 0.0;
            for (std::size_t b = 0; b < style_dim; ++b)
                s += p.key_proj(a, b) * bank_tanh(j, b);
            keys(j, a) = s;
        }
    }

    const double scale = 1.0 / std::sqrt(static_cast<double>(style_dim));
    Vec64 logits(n_tokens, 0.0);
    for (std::size_t j = 0; j < n_tokens; ++j) {
        double s = 0.0;
        for (std::size_t a = 0; a < style_dim; ++a) s += query[a] * keys(j, a);
        logits[j] = s * scale;
    }
    Vec64 alpha = softmax(logits);

    Vec64 out(style_dim, 0.0);
    for (std::size_t j = 0; j < n_tokens; ++j)
        for (std::size_t b = 0; b < style_dim; ++b)
            out[b] += alpha[j] * p.token_bank(j, b);

    cache.valid = true;
    cache.n_frames = frames.size();
    cache.frame_mean = std::move(mean);
    cache.query = std::move(query);
    cache.bank_tanh = std::move(bank_tanh);
    cache.keys = std::move(keys);
    cache.alpha = std::move(alpha);
    return out;
}

void style_backward(const Vec64& d_out, const StyleCache& cache,
                    const StyleEncoderParams& p, StyleEncoderParams& grads) {
    if (!cache.valid) fail(ErrCode::missing_cache, "style_backward without forward");
    const std::size_t style_dim = p.pool_proj.rows;
    const std::size_t n_tokens = p.token_bank.rows;
    if (d_out.size() != style_dim) fail(ErrCode::dim_mismatch, "style_backward: d_out");

    // out = sum_j alpha_j * bank_j
    Vec64 dalpha(n_tokens, 0.0);
    for (std::size_t j = 0; j < n_tokens; ++j) {
        double s = 0.0;
        for (std::size_t b = 0; b < style_dim; ++b) {
            s += p.token_bank(j, b) * d_out[b];
            grads.token_bank(j, b) += cache.alpha[j] * d_out[b];
        }
        dalpha[j] = s;
    }

    const Vec64 dlogits = softmax_backward(cache.alpha, dalpha);
    const double scale = 1.0 / std::sqrt(static_cast<double>(style_dim));

    Vec64 dquery(style_dim, 0.0);
    Mat64 dkeys(n_tokens, style_dim);
    for (std::size_t j = 0; j < n_tokens; ++j) {
        const double dl = dlogits[j] * scale;
        for (std::size_t a = 0; a < style_dim; ++a) {
            dquery[a] += dl * cache.keys(j, a);
            dkeys(j, a) = dl * cache.query[a];
        }
    }

    // keys_{j,a} = sum_b key_proj(a,b) * bank_tanh(j,b)
    for (std::size_t j = 0; j < n_tokens; ++j) {
        for (std::size_t b = 0; b < style_dim; ++b) {
            double dg = 0.0;
            for (std::size_t a = 0; a < style_dim; ++a) {
                grads.key_proj(a, b) += dkeys(j, a) * cache.bank_tanh(j, b);
                dg += dkeys(j, a) * p.key_proj(a, b);
            }
            const double g = cache.bank_tanh(j, b);
            grads.token_bank(j, b) += dg * (1.0 - g * g);
        }
    }

    // query = tanh(pool_proj * mean)
    Vec64 du(style_dim);
    for (std::size_t a = 0; a < style_dim; ++a)
        du[a] = dquery[a] * (1.0 - cache.query[a] * cache.query[a]);
    add_outer(grads.pool_proj, du, cache.frame_mean);
}

Vec64 text_encode(const std::vector<Vec64>& tokens, const LinguisticEncoderParams& p,
                  Mode mode, Rng* rng) {
    TextCache cache;
    return text_encode(tokens, p, mode, rng, cache);
}

Vec64 text_encode(const std::vector<Vec64>& tokens, const LinguisticEncoderParams& p,
                  Mode mode, Rng* rng, TextCache& cache) {
    if (tokens.empty()) fail(ErrCode::empty_sequence, "text_encode: no tokens");
    const std::size_t input_dim = p.layer1.w_z.cols;
    const std::size_t hidden = p.layer1.b_z.size();
    for (const auto& t : tokens)
        if (t.size() != input_dim)
            fail(ErrCode::dim_mismatch, "text_encode: token dim " +
                                            std::to_string(t.size()) + " != " +
                                            std::to_string(input_dim));
    if (mode == Mode::train && rng == nullptr)
        fail(ErrCode::bad_argument, "text_encode: train mode needs an rng");

    gru_forward(p.layer1, tokens, cache.l1);
    gru_forward(p.layer2, std::vector<Vec64>(cache.l1.h.begin() + 1, cache.l1.h.end()),
                cache.l2);
    cache.final_hidden = cache.l2.h.back();

    cache.dropout_scale.assign(hidden, 1.0);
    if (mode == Mode::train && p.dropout_rate > 0.0) {
        const double keep_scale = 1.0 / (1.0 - p.dropout_rate);
        for (std::size_t i = 0; i < hidden; ++i)
            cache.dropout_scale[i] = (rng->uniform() < p.dropout_rate) ? 0.0 : keep_scale;
    }
    cache.dropped.resize(hidden);
    for (std::size_t i = 0; i < hidden; ++i)
        cache.dropped[i] = cache.final_hidden[i] * cache.dropout_scale[i];

    cache.mode = mode;
    cache.valid = true;
    return matvec(p.out_proj, cache.dropped);
}

void text_backward(const Vec64& d_stf, const TextCache& cache,
                   const LinguisticEncoderParams& p, LinguisticEncoderParams& grads) {
    if (!cache.valid) fail(ErrCode::missing_cache, "text_backward without forward");
    const std::size_t hidden = p.layer1.b_z.size();
    if (d_stf.size() != p.out_proj.rows) fail(ErrCode::dim_mismatch, "text_backward: d_stf");

    add_outer(grads.out_proj, d_stf, cache.dropped);
    Vec64 dh_final = matvec_t(p.out_proj, d_stf);
    for (std::size_t i = 0; i < hidden; ++i) dh_final[i] *= cache.dropout_scale[i];

    std::vector<Vec64> d_l2(cache.l2.steps, Vec64(hidden, 0.0));
    d_l2.back() = std::move(dh_final);
    const std::vector<Vec64> d_l1 = gru_backward(p.layer2, cache.l2, d_l2, grads.layer2);
    gru_backward(p.layer1, cache.l1, d_l1, grads.layer1);
}

StyleEncoderParams zeros_like(const StyleEncoderParams& p) {
    StyleEncoderParams z;
    z.pool_proj = Mat64(p.pool_proj.rows, p.pool_proj.cols);
    z.token_bank = Mat64(p.token_bank.rows, p.token_bank.cols);
    z.key_proj = Mat64(p.key_proj.rows, p.key_proj.cols);
    return z;
}

LinguisticEncoderParams zeros_like(const LinguisticEncoderParams& p) {
    LinguisticEncoderParams z;
    z.layer1 = zeros_like_gru(p.layer1);
    z.layer2 = zeros_like_gru(p.layer2);
    z.out_proj = Mat64(p.out_proj.rows, p.out_proj.cols);
    z.dropout_rate = p.dropout_rate;
    return z;
}

EncoderParams zeros_like(const EncoderParams& p) {
    EncoderParams z;
    z.config = p.config;
    z.style = zeros_like(p.style);
    z.ling = zeros_like(p.ling);
    return z;
}

std::size_t param_count(const EncoderParams& p) {
    std::size_t n = 0;
    for_each_tensor(p, [&](const auto& v) { n += v.size(); });
    return n;
}

Vec64 flatten(const EncoderParams& p) {
    Vec64 flat;
    flat.reserve(param_count(p));
    for_each_tensor(p, [&](const auto& v) { flat.insert(flat.end(), v.begin(), v.end()); });
    return flat;
}

void unflatten(const Vec64& flat, EncoderParams& p) {
    if (flat.size() != param_count(p)) fail(ErrCode::dim_mismatch, "unflatten: size");
    std::size_t off = 0;
    for_each_tensor(p, [&](auto& v) {
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                  flat.begin() + static_cast<std::ptrdiff_t>(off + v.size()), v.begin());
        off += v.size();
    });
}

void save_checkpoint(const EncoderParams& p, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) fail(ErrCode::io, "cannot write " + path);
    write_bytes(os, kCheckpointMagic, sizeof(kCheckpointMagic));
    write_u32(os, kCheckpointVersion);
    write_u32(os, static_cast<std::uint32_t>(p.config.speech_dim));
    write_u32(os, static_cast<std::uint32_t>(p.config.text_dim));
    write_u32(os, static_cast<std::uint32_t>(p.config.hidden));
    write_u32(os, static_cast<std::uint32_t>(p.config.style_dim));
    write_u32(os, static_cast<std::uint32_t>(p.config.n_tokens));
    write_f64(os, p.config.dropout);
    for_each_tensor(p, [&](const auto& v) {
        write_u64(os, static_cast<std::uint64_t>(v.size()));
        for (double x : v) write_f64(os, x);
    });
    if (!os) fail(ErrCode::io, "write failed for " + path);
}

EncoderParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrCode::io, "cannot open " + path);
    char magic[8];
    read_bytes(is, magic, sizeof(magic));
    if (std::string(magic, 8) != std::string(kCheckpointMagic, 8))
        fail(ErrCode::format_version_mismatch, "not a checkpoint file: " + path);
    const std::uint32_t version = read_u32(is);
    if (version != kCheckpointVersion)
        fail(ErrCode::format_version_mismatch,
             "checkpoint version " + std::to_string(version) + " unsupported");

    EncoderConfig config;
    config.speech_dim = read_u32(is);
    config.text_dim = read_u32(is);
    config.hidden = read_u32(is);
    config.style_dim = read_u32(is);
    config.n_tokens = read_u32(is);
    config.dropout = read_f64(is);
    config.validate();

    Rng dummy(0);
    EncoderParams p = init_params(config, dummy);
    for_each_tensor(p, [&](auto& v) {
        const std::uint64_t n = read_u64(is);
        if (n != v.size())
            fail(ErrCode::format_version_mismatch,
                 "checkpoint tensor size mismatch in " + path);
        for (auto& x : v) x = read_f64(is);
    });
    // Anything after the last tensor means the file was not written by us.
    is.peek();
    if (!is.eof()) fail(ErrCode::format_version_mismatch, "trailing bytes in " + path);
    for_each_tensor(p, [&](const auto& v) {
        for (double x : v)
            if (!std::isfinite(x))
                fail(ErrCode::non_finite_evaluation, "non-finite parameter in " + path);
    });
    return p;
}

}  // namespace calm
