#pragma once

// Inference-time reference selection: an exact linear-scan index over
// (STF, style embedding) rows, top-N query by STF cosine similarity, and
// the softmax-weighted style summarization.
//
// Index file layout (all integers and floats little-endian):
//
//   offset  size          field
//   0       8             magic "CALMIDX1"
//   8       4             format version (u32, currently 1)
//   12      4             style_dim (u32)
//   16      4             id_width  (u32, bytes per id slot)
//   20      4             label_width (u32, bytes per label slot)
//   24      8             entry count (u64)
//   32      8             encoder fingerprint (u64, FNV-1a of the checkpoint file)
//   40      ...           `count` fixed-size records
//
// Each record:
//   id        id_width bytes, NUL-padded
//   has_label 1 byte (0 or 1)
//   label     label_width bytes, NUL-padded
//   stf       style_dim f64
//   style     style_dim f64
//
// The file must end exactly after the last record; loaders reject anything
// shorter or longer.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "calm/dataio.hpp"
#include "calm/encoders.hpp"
#include "calm/tensor.hpp"

namespace calm {

struct IndexEntry {
    std::string id;
    Vec64 stf;
    Vec64 style;
    std::optional<std::string> label;
};

struct RetrievalIndex {
    std::size_t style_dim = 0;
    std::uint64_t encoder_fingerprint = 0;
    std::vector<IndexEntry> entries;
};

struct ReferenceSet {
    std::vector<std::string> ids;
    std::vector<std::optional<std::string>> labels;
    Mat64 stf_rows;    // N x style_dim, aligned with ids
    Mat64 style_rows;  // N x style_dim
    Vec64 sims;        // descending
};

struct SummaryResult {
    Vec64 weights;          // softmax(T t0), sums to 1
    Vec64 final_embedding;  // w^T S
};

RetrievalIndex build_index(const Dataset& dataset, const EncoderParams& params,
                           std::uint64_t fingerprint);
// Loads the checkpoint and fingerprints its file contents.
RetrievalIndex build_index(const Dataset& dataset, const std::string& checkpoint_path);

// The N entries most cosine-similar to t0, descending, ties by ascending
// id. `exclude_id`, when set, removes that entry before ranking (used for
// held-out evaluation when the query happens to be indexed).
ReferenceSet query_top_n(const Vec64& t0, const RetrievalIndex& index, std::size_t n,
                         const std::string* exclude_id = nullptr);

// w = softmax(T t0) over raw dot products (not cosine); final = w^T S.
SummaryResult summarize(const ReferenceSet& refs, const Vec64& t0);

void save_index(const RetrievalIndex& index, const std::string& path);
RetrievalIndex load_index(const std::string& path);

// Throws fingerprint_mismatch naming both fingerprints.
void verify_fingerprint(const RetrievalIndex& index, const std::string& checkpoint_path);

}  // namespace calm
