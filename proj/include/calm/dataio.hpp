#pragma once

// Dataset ingestion plus the synthetic clustered corpus used for desk-scale
// experiments. JSONL record schema, one item per line:
//   {"id": str, "speech_frames": [[f64]], "text_tokens": [[f64]], "label": str|null}

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "calm/tensor.hpp"

namespace calm {

struct FeaturePair {
    std::string id;
    std::vector<Vec64> speech_frames;
    std::vector<Vec64> text_tokens;
    std::optional<std::string> label;
};

using Dataset = std::vector<FeaturePair>;

// id -> position; throws duplicate_id.
std::unordered_map<std::string, std::size_t> index_by_id(const Dataset& ds);

Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& ds, const std::string& path);

// Synthetic corpus: per cluster a speech centroid and a matching
// style-informative text direction; every token additionally carries a
// confound block encoding a topic id drawn independently of the cluster.
// The confound is what makes raw semantic similarity retrieve by topic
// rather than by style.
struct SynthSpec {
    std::size_t n_clusters = 6;
    std::size_t items_per_cluster = 150;
    std::size_t speech_dim = 8;
    std::size_t text_dim = 16;
    std::size_t confound_dims = 8;  // trailing token dims carrying the topic
    std::size_t n_topics = 6;
    // Speech noise is large enough that single-reference retrieval stays
    // noticeably worse than averaging several references; token noise is
    // calibrated so a trained extractor recovers the style block while raw
    // cosine ranking within a topic degrades.
    double style_noise = 0.75;
    double text_noise = 0.4;
    double confound_scale = 2.0;  // topic signal amplitude (2.0 -> 4x the variance)
    std::uint64_t seed = 1;

    void validate() const;
};

struct SynthItem {
    FeaturePair pair;
    std::size_t cluster = 0;
    std::size_t topic = 0;
    std::size_t index_in_cluster = 0;
};

// Deterministic given the spec. Items are cluster-major; ids look like
// "c03_i0007_t2" and labels like "c03".
std::vector<SynthItem> generate_synthetic(const SynthSpec& spec);

Dataset to_dataset(const std::vector<SynthItem>& items);

// First `train_per_cluster` items of each cluster go to train, the rest to
// test; callers typically generate items_per_cluster = m + holdout.
void split_synthetic(const std::vector<SynthItem>& items, std::size_t train_per_cluster,
                     Dataset& train, Dataset& test);

}  // namespace calm
