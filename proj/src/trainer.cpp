#include "calm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "calm/binio.hpp"

namespace calm {

namespace {

constexpr char kOptMagic[8] = {'C', 'A', 'L', 'M', 'O', 'P', 'T', '1'};
constexpr std::uint32_t kOptVersion = 1;

const FeaturePair& resolve(const Dataset& dataset,
                           const std::unordered_map<std::string, std::size_t>& item_of,
                           const std::string& id) {
    auto it = item_of.find(id);
    if (it == item_of.end())
        fail(ErrCode::bad_argument, "batch references unknown item '" + id + "'");
    return dataset[it->second];
}

struct JointPass {
    double l_calm = 0.0;
    double l_proxy = 0.0;
    double l_total = 0.0;
};

// One anchor's forward pass through both losses and, when `grads` is given,
// the full backward. Shared by train_step (train mode) and the gradient
// check harness (eval mode, no dropout).
JointPass run_joint(const FeaturePair& anchor, const ContrastiveBatch& batch,
                    const Dataset& dataset,
                    const std::unordered_map<std::string, std::size_t>& item_of,
                    const EncoderParams& params, const StyleTable& targets, double lambda,
                    Mode mode, Rng* rng, EncoderParams* grads) {
    const std::size_t k = batch.positives.size();
    if (k == 0 || batch.negatives.size() != k)
        fail(ErrCode::bad_argument, "batch must hold K positives and K negatives");
    const std::size_t n = 2 * k;
    const std::size_t style_dim = params.config.style_dim;

    std::vector<const FeaturePair*> items;
    items.reserve(n);
    for (const auto& id : batch.positives) items.push_back(&resolve(dataset, item_of, id));
    for (const auto& id : batch.negatives) items.push_back(&resolve(dataset, item_of, id));

    TextCache anchor_cache;
    const Vec64 t0 = text_encode(anchor.text_tokens, params.ling, mode, rng, anchor_cache);

    std::vector<StyleCache> style_caches(n);
    std::vector<TextCache> text_caches(n);
    std::vector<Vec64> styles(n), stfs(n);
    for (std::size_t i = 0; i < n; ++i) {
        styles[i] = style_encode(items[i]->speech_frames, params.style, style_caches[i]);
        stfs[i] = text_encode(items[i]->text_tokens, params.ling, mode, rng, text_caches[i]);
    }

    Vec64 style_norms(n), stf_norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        style_norms[i] = norm(styles[i]);
        stf_norms[i] = norm(stfs[i]);
        if (style_norms[i] < 1e-12)
            fail(ErrCode::zero_norm, "style embedding collapsed for '" + items[i]->id + "'");
        if (stf_norms[i] < 1e-12)
            fail(ErrCode::zero_norm, "STF collapsed for '" + items[i]->id + "'");
    }

    const GroundTruthMatrix truth = build_ground_truth(k);
    Mat64 pred(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double c = dot(styles[i], stfs[j]) / (style_norms[i] * stf_norms[j]);
            pred(i, j) = std::clamp(c, -1.0, 1.0);
        }

    // Eq. (1)-(2) over the K positives, scored against the anchor's frozen
    // style-table embedding.
    Vec64 logits(k);
    for (std::size_t i = 0; i < k; ++i) logits[i] = dot(stfs[i], t0);
    const Vec64 w = softmax(logits);
    Vec64 final_style(style_dim, 0.0);
    for (std::size_t i = 0; i < k; ++i) axpy(w[i], styles[i], final_style);
    const Vec64& target = targets.embedding_of(anchor.id);

    JointPass out;
    out.l_calm = mse(pred, truth.m);
    out.l_proxy = mse(final_style, target);
    out.l_total = out.l_proxy + lambda * out.l_calm;
    if (grads == nullptr) return out;

    std::vector<Vec64> d_styles(n, Vec64(style_dim, 0.0));
    std::vector<Vec64> d_stfs(n, Vec64(style_dim, 0.0));
    Vec64 d_t0(style_dim, 0.0);

    // proxy loss
    Vec64 d_final(style_dim);
    for (std::size_t b = 0; b < style_dim; ++b)
        d_final[b] = 2.0 * (final_style[b] - target[b]) / static_cast<double>(style_dim);
    Vec64 d_w(k);
    for (std::size_t i = 0; i < k; ++i) {
        d_w[i] = dot(styles[i], d_final);
        axpy(w[i], d_final, d_styles[i]);
    }
    const Vec64 d_logits = softmax_backward(w, d_w);
    for (std::size_t i = 0; i < k; ++i) {
        axpy(d_logits[i], stfs[i], d_t0);
        axpy(d_logits[i], t0, d_stfs[i]);
    }

    // contrastive loss through each cosine entry
    const double coeff = lambda * 2.0 / static_cast<double>(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double g = coeff * (pred(i, j) - truth.m(i, j));
            if (g == 0.0) continue;
            const double c = pred(i, j);
            const double inv = 1.0 / (style_norms[i] * stf_norms[j]);
            const double si2 = style_norms[i] * style_norms[i];
            const double tj2 = stf_norms[j] * stf_norms[j];
            for (std::size_t b = 0; b < style_dim; ++b) {
                d_styles[i][b] += g * (stfs[j][b] * inv - c * styles[i][b] / si2);
                d_stfs[j][b] += g * (styles[i][b] * inv - c * stfs[j][b] / tj2);
            }
        }
    }

    text_backward(d_t0, anchor_cache, params.ling, grads->ling);
    for (std::size_t i = 0; i < n; ++i) {
        style_backward(d_styles[i], style_caches[i], params.style, grads->style);
        text_backward(d_stfs[i], text_caches[i], params.ling, grads->ling);
    }
    return out;
}

// Pre-training reconstructs the mean speech frame from the direction of the
// style embedding through a transient linear head, the desk-scale stand-in
// for training the style encoder inside a TTS reconstruction objective.
// Normalizing before the head means distinct inputs must map to distinct
// directions, not just distinct magnitudes the head could amplify. The head
// is discarded once the style table is frozen.
struct PretrainHead {
    Mat64 recon;  // speech_dim x style_dim
};

Vec64 flatten_pretrain(const StyleEncoderParams& style, const PretrainHead& head) {
    Vec64 flat;
    flat.reserve(style.pool_proj.data.size() + style.token_bank.data.size() +
                 style.key_proj.data.size() + head.recon.data.size());
    for (const auto* v : {&style.pool_proj.data, &style.token_bank.data,
                          &style.key_proj.data, &head.recon.data})
        flat.insert(flat.end(), v->begin(), v->end());
    return flat;
}

void unflatten_pretrain(const Vec64& flat, StyleEncoderParams& style, PretrainHead& head) {
    std::size_t off = 0;
    for (auto* v : {&style.pool_proj.data, &style.token_bank.data, &style.key_proj.data,
                    &head.recon.data}) {
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                  flat.begin() + static_cast<std::ptrdiff_t>(off + v->size()), v->begin());
        off += v->size();
    }
}

std::string step_tag(std::size_t step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "step_%06zu", step);
    return buf;
}

void append_double(std::string& line, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    line += buf;
}

}  // namespace

void TrainConfig::validate() const {
    if (k == 0) fail(ErrCode::bad_argument, "k must be >= 1");
    if (lambda < 0.0) fail(ErrCode::bad_argument, "lambda must be >= 0");
    if (!(lr > 0.0)) fail(ErrCode::bad_argument, "learning rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        fail(ErrCode::bad_argument, "Adam betas must lie in [0, 1)");
    if (!(eps > 0.0)) fail(ErrCode::bad_argument, "Adam eps must be > 0");
    encoder.validate();
}

GroundTruthMatrix build_ground_truth(std::size_t k) {
    if (k == 0) fail(ErrCode::bad_argument, "build_ground_truth: k must be >= 1");
    const std::size_t n = 2 * k;
    GroundTruthMatrix gt{Mat64(n, n, -1.0)};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if ((i < k && j < k) || (i == j && i >= k)) gt.m(i, j) = 1.0;
    return gt;
}

Mat64 similarity_matrix(const std::vector<Vec64>& styles, const std::vector<Vec64>& stfs) {
    Mat64 m(styles.size(), stfs.size());
    for (std::size_t i = 0; i < styles.size(); ++i)
        for (std::size_t j = 0; j < stfs.size(); ++j)
            m(i, j) = cosine_similarity(styles[i], stfs[j]);
    return m;
}

Mat64 predict_similarity_matrix(const ContrastiveBatch& batch, const Dataset& dataset,
                                const EncoderParams& params, Mode mode, Rng* rng) {
    const auto item_of = index_by_id(dataset);
    std::vector<Vec64> styles, stfs;
    for (const auto* list : {&batch.positives, &batch.negatives}) {
        for (const auto& id : *list) {
            const FeaturePair& item = resolve(dataset, item_of, id);
            styles.push_back(style_encode(item.speech_frames, params.style));
            stfs.push_back(text_encode(item.text_tokens, params.ling, mode, rng));
        }
    }
    return similarity_matrix(styles, stfs);
}

double calm_loss(const Mat64& pred, const GroundTruthMatrix& truth) {
    return mse(pred, truth.m);
}

double proxy_tts_loss(const ContrastiveBatch& batch, const FeaturePair& anchor,
                      const Dataset& dataset, const EncoderParams& params,
                      const StyleTable& targets, Mode mode, Rng* rng) {
    if (batch.positives.empty()) fail(ErrCode::bad_argument, "batch has no positives");
    const auto item_of = index_by_id(dataset);
    const Vec64 t0 = text_encode(anchor.text_tokens, params.ling, mode, rng);

    const std::size_t k = batch.positives.size();
    std::vector<Vec64> styles(k), stfs(k);
    for (std::size_t i = 0; i < k; ++i) {
        const FeaturePair& item = resolve(dataset, item_of, batch.positives[i]);
        styles[i] = style_encode(item.speech_frames, params.style);
        stfs[i] = text_encode(item.text_tokens, params.ling, mode, rng);
    }
    Vec64 logits(k);
    for (std::size_t i = 0; i < k; ++i) logits[i] = dot(stfs[i], t0);
    const Vec64 w = softmax(logits);
    Vec64 final_style(params.config.style_dim, 0.0);
    for (std::size_t i = 0; i < k; ++i) axpy(w[i], styles[i], final_style);
    return mse(final_style, targets.embedding_of(anchor.id));
}

AdamState make_adam_state(std::size_t n) {
    AdamState s;
    s.m.assign(n, 0.0);
    s.v.assign(n, 0.0);
    s.t = 0;
    return s;
}

void adam_update(Vec64& params, const Vec64& grads, AdamState& state, double lr,
                 double beta1, double beta2, double eps) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        fail(ErrCode::dim_mismatch, "adam_update: size mismatch");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
}

void save_adam_state(const AdamState& s, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) fail(ErrCode::io, "cannot write " + path);
    write_bytes(os, kOptMagic, sizeof(kOptMagic));
    write_u32(os, kOptVersion);
    write_u64(os, s.t);
    write_u64(os, static_cast<std::uint64_t>(s.m.size()));
    write_f64_array(os, s.m);
    write_f64_array(os, s.v);
    if (!os) fail(ErrCode::io, "write failed for " + path);
}

AdamState load_adam_state(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrCode::io, "cannot open " + path);
    char magic[8];
    read_bytes(is, magic, sizeof(magic));
    if (std::string(magic, 8) != std::string(kOptMagic, 8))
        fail(ErrCode::format_version_mismatch, "not an optimizer state file: " + path);
    if (read_u32(is) != kOptVersion)
        fail(ErrCode::format_version_mismatch, "optimizer state version unsupported");
    AdamState s;
    s.t = read_u64(is);
    const std::uint64_t n = read_u64(is);
    read_f64_array(is, s.m, n);
    read_f64_array(is, s.v, n);
    is.peek();
    if (!is.eof()) fail(ErrCode::format_version_mismatch, "trailing bytes in " + path);
    return s;
}

StatsRecord train_step(const FeaturePair& anchor, const ContrastiveBatch& batch,
                       const Dataset& dataset,
                       const std::unordered_map<std::string, std::size_t>& item_of,
                       EncoderParams& params, AdamState& adam, const TrainConfig& config,
                       const StyleTable& targets, Rng& rng, std::size_t step) {
    EncoderParams grads = zeros_like(params);
    const JointPass pass = run_joint(anchor, batch, dataset, item_of, params, targets,
                                     config.lambda, Mode::train, &rng, &grads);
    if (!std::isfinite(pass.l_total))
        fail(ErrCode::non_finite_loss,
             "step " + std::to_string(step) + " anchor '" + anchor.id + "': l_calm=" +
                 std::to_string(pass.l_calm) + " l_tts_proxy=" + std::to_string(pass.l_proxy));

    if (config.freeze_style_encoder) {
        std::fill(grads.style.pool_proj.data.begin(), grads.style.pool_proj.data.end(), 0.0);
        std::fill(grads.style.token_bank.data.begin(), grads.style.token_bank.data.end(), 0.0);
        std::fill(grads.style.key_proj.data.begin(), grads.style.key_proj.data.end(), 0.0);
    }

    Vec64 flat = flatten(params);
    const Vec64 gflat = flatten(grads);
    adam_update(flat, gflat, adam, config.lr, config.beta1, config.beta2, config.eps);
    unflatten(flat, params);

    return StatsRecord{step, pass.l_calm, pass.l_proxy, pass.l_total};
}

double joint_loss_and_grad(const FeaturePair& anchor, const ContrastiveBatch& batch,
                           const Dataset& dataset,
                           const std::unordered_map<std::string, std::size_t>& item_of,
                           const EncoderParams& params, const StyleTable& targets,
                           double lambda, double* l_calm_out, double* l_proxy_out,
                           EncoderParams* grads) {
    const JointPass pass = run_joint(anchor, batch, dataset, item_of, params, targets,
                                     lambda, Mode::eval, nullptr, grads);
    if (l_calm_out) *l_calm_out = pass.l_calm;
    if (l_proxy_out) *l_proxy_out = pass.l_proxy;
    return pass.l_total;
}

TrainResult train_loop(const Dataset& dataset, const TrainConfig& config,
                       const std::string& out_dir) {
    config.validate();
    if (dataset.empty()) fail(ErrCode::empty_dataset, "training set is empty");
    std::filesystem::create_directories(out_dir);
    const auto dir = std::filesystem::path(out_dir);

    Rng rng(config.seed);
    TrainResult result;
    result.params = init_params(config.encoder, rng);
    result.checkpoint_path = (dir / "checkpoint.ckpt").string();
    result.stats_path = (dir / "stats.csv").string();

    if (config.steps == 0) {
        save_checkpoint(result.params, result.checkpoint_path);
        write_stats_csv(result.stats, result.stats_path);
        return result;
    }

    const std::size_t n = dataset.size();
    if (n < 2 * config.k + 1)
        fail(ErrCode::dataset_too_small,
             "need at least 2K+1 = " + std::to_string(2 * config.k + 1) + " items, have " +
                 std::to_string(n));
    const auto item_of = index_by_id(dataset);

    // ---- phase 1: style encoder pre-training ----
    const std::size_t speech_dim = config.encoder.speech_dim;
    const std::size_t style_dim = config.encoder.style_dim;
    PretrainHead head;
    {
        const double a = std::sqrt(6.0 / static_cast<double>(speech_dim + style_dim));
        head.recon = Mat64(speech_dim, style_dim);
        for (auto& x : head.recon.data) x = rng.uniform(-a, a);
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);

    AdamState pre_adam = make_adam_state(flatten_pretrain(result.params.style, head).size());
    for (std::size_t step = 0; step < config.pretrain_steps; ++step) {
        const FeaturePair& item = dataset[order[step % n]];
        StyleCache cache;
        const Vec64 s = style_encode(item.speech_frames, result.params.style, cache);
        const double s_norm = norm(s);
        if (s_norm < 1e-12)
            fail(ErrCode::zero_norm, "style embedding collapsed at pre-train step " +
                                         std::to_string(step));
        Vec64 s_hat(style_dim);
        for (std::size_t i = 0; i < style_dim; ++i) s_hat[i] = s[i] / s_norm;
        const Vec64 recon_out = matvec(head.recon, s_hat);
        const double loss = mse(recon_out, cache.frame_mean);
        if (!std::isfinite(loss))
            fail(ErrCode::non_finite_loss, "pre-train step " + std::to_string(step));

        StyleEncoderParams style_grads = zeros_like(result.params.style);
        PretrainHead head_grads{Mat64(speech_dim, style_dim)};
        Vec64 err(speech_dim);
        for (std::size_t i = 0; i < speech_dim; ++i)
            err[i] = 2.0 * (recon_out[i] - cache.frame_mean[i]) / static_cast<double>(speech_dim);
        add_outer(head_grads.recon, err, s_hat);
        // d(s/|s|)/ds = (I - s_hat s_hat^T) / |s|
        const Vec64 d_s_hat = matvec_t(head.recon, err);
        Vec64 d_s(style_dim);
        const double radial = dot(d_s_hat, s_hat);
        for (std::size_t i = 0; i < style_dim; ++i)
            d_s[i] = (d_s_hat[i] - radial * s_hat[i]) / s_norm;
        style_backward(d_s, cache, result.params.style, style_grads);

        Vec64 flat = flatten_pretrain(result.params.style, head);
        const Vec64 gflat = flatten_pretrain(style_grads, head_grads);
        adam_update(flat, gflat, pre_adam, config.lr, config.beta1, config.beta2, config.eps);
        unflatten_pretrain(flat, result.params.style, head);
    }
    save_checkpoint(result.params, (dir / "pretrain.ckpt").string());

    // ---- frozen style table + batch selection ----
    for (const auto& item : dataset)
        result.style_table.add(item.id, style_encode(item.speech_frames, result.params.style));

    std::vector<ContrastiveBatch> batches;
    batches.reserve(n);
    for (const auto& item : dataset)
        batches.push_back(make_batch(item.id, result.style_table, config.k, rng));
    save_batches(batches, (dir / "batches.jsonl").string());

    // ---- phase 2: joint contrastive training ----
    std::vector<std::size_t> joint_order(n);
    for (std::size_t i = 0; i < n; ++i) joint_order[i] = i;
    rng.shuffle(joint_order);

    AdamState adam = make_adam_state(param_count(result.params));
    result.stats.reserve(config.steps);
    for (std::size_t step = 0; step < config.steps; ++step) {
        const std::size_t idx = joint_order[step % n];
        result.stats.push_back(train_step(dataset[idx], batches[idx], dataset, item_of,
                                          result.params, adam, config, result.style_table,
                                          rng, step));
        if (config.checkpoint_interval > 0 && (step + 1) % config.checkpoint_interval == 0 &&
            step + 1 < config.steps) {
            save_checkpoint(result.params, (dir / (step_tag(step + 1) + ".ckpt")).string());
            save_adam_state(adam, (dir / (step_tag(step + 1) + ".opt")).string());
        }
    }

    save_checkpoint(result.params, result.checkpoint_path);
    save_adam_state(adam, (dir / "checkpoint.opt").string());
    write_stats_csv(result.stats, result.stats_path);
    return result;
}

void write_stats_csv(const TrainStats& stats, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) fail(ErrCode::io, "cannot write " + path);
    os << "step,l_calm,l_tts_proxy,l_total\n";
    for (const auto& r : stats) {
        std::string line = std::to_string(r.step);
        line += ',';
        append_double(line, r.l_calm);
        line += ',';
        append_double(line, r.l_tts_proxy);
        line += ',';
        append_double(line, r.l_total);
        os << line << '\n';
    }
    if (!os) fail(ErrCode::io, "write failed for " + path);
}

}  // namespace calm
