#pragma once

// Trainable encoders mapping both modalities into one embedding space.
//
// Style encoder: mean-pool the speech frames, project through tanh to a
// query, attend over a learned token bank (single head, scaled dot product),
// output the attention-weighted sum of bank rows.
//
// Linguistic encoder: two stacked GRU layers over the token sequence, final
// hidden state of layer 2, inverted dropout in train mode, linear projection
// to the style dimension.
//
// Both have hand-written backward passes; see finite_diff_grad for the
// oracle they are verified against.

#include <cstdint>
#include <string>
#include <vector>

#include "calm/tensor.hpp"

namespace calm {

struct EncoderConfig {
    std::size_t speech_dim = 8;   // frame feature width
    std::size_t text_dim = 16;    // token feature width
    std::size_t hidden = 16;      // GRU hidden size
    std::size_t style_dim = 8;    // shared embedding width (also attention query width)
    std::size_t n_tokens = 4;     // style token bank rows
    double dropout = 0.2;

    void validate() const;
    bool operator==(const EncoderConfig&) const = default;
};

struct StyleEncoderParams {
    Mat64 pool_proj;   // style_dim x speech_dim
    Mat64 token_bank;  // n_tokens x style_dim
    Mat64 key_proj;    // style_dim x style_dim
};

struct GruLayerParams {
    Mat64 w_z, u_z;  // hidden x input, hidden x hidden
    Mat64 w_r, u_r;
    Mat64 w_h, u_h;
    Vec64 b_z, b_r, b_h;
};

struct LinguisticEncoderParams {
    GruLayerParams layer1;  // input width = text_dim
    GruLayerParams layer2;  // input width = hidden
    Mat64 out_proj;         // style_dim x hidden
    double dropout_rate = 0.0;
};

struct EncoderParams {
    EncoderConfig config;
    StyleEncoderParams style;
    LinguisticEncoderParams ling;
};

enum class Mode { train, eval };

// ---- forward caches (consumed by the backward passes) ----

struct StyleCache {
    bool valid = false;
    std::size_t n_frames = 0;
    Vec64 frame_mean;  // speech_dim
    Vec64 query;       // style_dim, post-tanh
    Mat64 bank_tanh;   // n_tokens x style_dim
    Mat64 keys;        // n_tokens x style_dim
    Vec64 alpha;       // n_tokens, attention weights
};

struct GruLayerCache {
    std::size_t steps = 0;
    std::vector<Vec64> inputs;    // x_t per step
    std::vector<Vec64> h;         // h_0 .. h_L (h[0] is zero)
    std::vector<Vec64> z, r, cand, rh;  // gates, candidate, r*h_prev per step
};

struct TextCache {
    bool valid = false;
    Mode mode = Mode::eval;
    GruLayerCache l1, l2;
    Vec64 final_hidden;    // h_L of layer 2
    Vec64 dropout_scale;   // per-unit 0 or 1/(1-r); all ones in eval mode
    Vec64 dropped;         // final_hidden * dropout_scale
};

// Uniform init in [-a, a] with a = sqrt(6 / (rows + cols)) per weight
// matrix; biases zero. Deterministic given the rng seed.
EncoderParams init_params(const EncoderConfig& config, Rng& rng);

Vec64 style_encode(const std::vector<Vec64>& frames, const StyleEncoderParams& p);
Vec64 style_encode(const std::vector<Vec64>& frames, const StyleEncoderParams& p,
                   StyleCache& cache);
// Accumulates into grads (caller zeroes between steps, not between items).
void style_backward(const Vec64& d_out, const StyleCache& cache,
                    const StyleEncoderParams& p, StyleEncoderParams& grads);

Vec64 text_encode(const std::vector<Vec64>& tokens, const LinguisticEncoderParams& p,
                  Mode mode, Rng* rng = nullptr);
Vec64 text_encode(const std::vector<Vec64>& tokens, const LinguisticEncoderParams& p,
                  Mode mode, Rng* rng, TextCache& cache);
void text_backward(const Vec64& d_stf, const TextCache& cache,
                   const LinguisticEncoderParams& p, LinguisticEncoderParams& grads);

StyleEncoderParams zeros_like(const StyleEncoderParams& p);
LinguisticEncoderParams zeros_like(const LinguisticEncoderParams& p);
EncoderParams zeros_like(const EncoderParams& p);

// Visits every trainable tensor's storage in one fixed, documented order:
// style (pool_proj, token_bank, key_proj), then GRU layer 1 and 2 (w_z, u_z,
// b_z, w_r, u_r, b_r, w_h, u_h, b_h), then out_proj. Checkpoints, the
// optimizer, and gradient flattening all share this order.
template <typename Params, typename Fn>
void for_each_tensor(Params& p, Fn&& fn) {
    fn(p.style.pool_proj.data);
    fn(p.style.token_bank.data);
    fn(p.style.key_proj.data);
    for (auto* layer : {&p.ling.layer1, &p.ling.layer2}) {
        fn(layer->w_z.data);
        fn(layer->u_z.data);
        fn(layer->b_z);
        fn(layer->w_r.data);
        fn(layer->u_r.data);
        fn(layer->b_r);
        fn(layer->w_h.data);
        fn(layer->u_h.data);
        fn(layer->b_h);
    }
    fn(p.ling.out_proj.data);
}

std::size_t param_count(const EncoderParams& p);
Vec64 flatten(const EncoderParams& p);
void unflatten(const Vec64& flat, EncoderParams& p);

// ---- checkpoint file ----
// Binary, versioned, little-endian: magic "CALMCKP1", version u32, config
// (five u32 dims + dropout f64), then each tensor in for_each_tensor order
// as raw f64 payload (shapes are implied by the config). Round-trips are
// bit-exact.
void save_checkpoint(const EncoderParams& p, const std::string& path);
EncoderParams load_checkpoint(const std::string& path);

}  // namespace calm
