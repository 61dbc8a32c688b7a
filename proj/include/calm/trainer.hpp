#pragma once

// Contrastive training: ground-truth matrix construction, the CALM loss,
// the proxy style-reconstruction loss standing in for the TTS loss, and the
// two-phase optimization loop (style-encoder pre-training, then joint
// contrastive training).

#include <cstdint>
#include <string>
#include <vector>

#include "calm/dataio.hpp"
#include "calm/encoders.hpp"
#include "calm/sampling.hpp"
#include "calm/tensor.hpp"

namespace calm {

struct TrainConfig {
    std::size_t k = 20;     // references per batch half
    double lambda = 1.0;    // contrastive loss weight
    double lr = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t steps = 2000;           // joint contrastive steps
    std::size_t pretrain_steps = 1500;  // style-encoder pre-training steps
    std::size_t checkpoint_interval = 500;  // 0 disables periodic checkpoints
    std::uint64_t seed = 12345;
    bool freeze_style_encoder = false;
    EncoderConfig encoder;

    void validate() const;
};

struct GroundTruthMatrix {
    Mat64 m;  // 2K x 2K, entries in {-1, +1}
};

struct StatsRecord {
    std::size_t step = 0;
    double l_calm = 0.0;
    double l_tts_proxy = 0.0;
    double l_total = 0.0;
};

using TrainStats = std::vector<StatsRecord>;

// +1 where both sides come from the positive set, or from the same negative
// pair; -1 everywhere else.
GroundTruthMatrix build_ground_truth(std::size_t k);

// Entry (i, j) = cosine(styles[i], stfs[j]).
Mat64 similarity_matrix(const std::vector<Vec64>& styles, const std::vector<Vec64>& stfs);

// Encodes the batch items (positives first, then negatives) and fills the
// 2K x 2K cosine matrix. Dropout is live in train mode.
Mat64 predict_similarity_matrix(const ContrastiveBatch& batch, const Dataset& dataset,
                                const EncoderParams& params, Mode mode, Rng* rng);

double calm_loss(const Mat64& pred, const GroundTruthMatrix& truth);

// Weighted style summarization over the K positives (softmax of raw STF dot
// products), scored against the anchor's frozen style-table embedding.
double proxy_tts_loss(const ContrastiveBatch& batch, const FeaturePair& anchor,
                      const Dataset& dataset, const EncoderParams& params,
                      const StyleTable& targets, Mode mode, Rng* rng);

struct AdamState {
    Vec64 m, v;
    std::uint64_t t = 0;
};

AdamState make_adam_state(std::size_t n);
void adam_update(Vec64& params, const Vec64& grads, AdamState& state, double lr,
                 double beta1, double beta2, double eps);

void save_adam_state(const AdamState& s, const std::string& path);
AdamState load_adam_state(const std::string& path);

// Forward + backward + Adam update for one anchor. `item_of` maps ids to
// dataset positions. Throws non_finite_loss if the total loss diverges.
StatsRecord train_step(const FeaturePair& anchor, const ContrastiveBatch& batch,
                       const Dataset& dataset,
                       const std::unordered_map<std::string, std::size_t>& item_of,
                       EncoderParams& params, AdamState& adam, const TrainConfig& config,
                       const StyleTable& targets, Rng& rng, std::size_t step);

// Joint loss and analytic gradient for one anchor, dropout off. Used by the
// finite-difference verification harness; mirrors train_step's forward.
double joint_loss_and_grad(const FeaturePair& anchor, const ContrastiveBatch& batch,
                           const Dataset& dataset,
                           const std::unordered_map<std::string, std::size_t>& item_of,
                           const EncoderParams& params, const StyleTable& targets,
                           double lambda, double* l_calm_out, double* l_proxy_out,
                           EncoderParams* grads);

struct TrainResult {
    EncoderParams params;
    TrainStats stats;
    StyleTable style_table;  // frozen, from the pre-trained snapshot
    std::string checkpoint_path;
    std::string stats_path;
};

// Pre-train the style encoder, snapshot the frozen style table, build the
// per-anchor batches, run `steps` joint updates. Writes checkpoint.ckpt,
// checkpoint.opt, pretrain.ckpt, stats.csv and batches.jsonl into out_dir
// (plus step_NNNNNN.ckpt/.opt at every checkpoint_interval).
TrainResult train_loop(const Dataset& dataset, const TrainConfig& config,
                       const std::string& out_dir);

void write_stats_csv(const TrainStats& stats, const std::string& path);

}  // namespace calm
