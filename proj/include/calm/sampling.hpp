#pragma once

// Positive/negative sample selection for contrastive batches. Ranking uses
// style embeddings from a frozen style-encoder pass over the training set;
// positives are the top-K most similar items, negatives are drawn uniformly
// without replacement from the latter half of the ranking.

#include <string>
#include <unordered_map>
#include <vector>

#include "calm/tensor.hpp"

namespace calm {

struct StyleTable {
    std::vector<std::pair<std::string, Vec64>> rows;
    std::unordered_map<std::string, std::size_t> by_id;

    void add(const std::string& id, Vec64 embedding);
    const Vec64& embedding_of(const std::string& id) const;  // throws anchor_missing
    std::size_t size() const { return rows.size(); }
};

struct ContrastiveBatch {
    std::string anchor_id;
    std::vector<std::string> positives;
    std::vector<std::string> negatives;
};

struct RankedItem {
    std::string id;
    double similarity;
};

// Every item except the anchor, by cosine similarity to the anchor's
// embedding, descending; ties broken by ascending id.
std::vector<RankedItem> rank_by_style(const std::string& anchor_id, const StyleTable& table);

// First K ids of the ranking. Requires |ranked| >= 2K so the latter half
// can still supply negatives.
std::vector<std::string> select_positives(const std::vector<RankedItem>& ranked, std::size_t k);

// K distinct ids drawn uniformly from positions floor(n/2)..n-1 of the
// ranking. Deterministic given the rng state.
std::vector<std::string> select_negatives(const std::vector<RankedItem>& ranked, std::size_t k,
                                          Rng& rng);

ContrastiveBatch make_batch(const std::string& anchor_id, const StyleTable& table,
                            std::size_t k, Rng& rng);

// Batch cache, one JSON object per line:
//   {"anchor": str, "positives": [str], "negatives": [str]}
void save_batches(const std::vector<ContrastiveBatch>& batches, const std::string& path);
std::vector<ContrastiveBatch> load_batches(const std::string& path);

}  // namespace calm
