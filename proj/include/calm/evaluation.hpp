#pragma once

// Objective metrics: retrieval precision against class labels, cosine
// similarity of the summarized style embedding to the ground-truth one, and
// the similarity-vs-N sweep. Also hosts the semantic-control baseline that
// ranks by raw mean token vectors instead of learned STFs.

#include <optional>
#include <string>
#include <vector>

#include "calm/dataio.hpp"
#include "calm/encoders.hpp"
#include "calm/retrieval.hpp"
#include "calm/tensor.hpp"

namespace calm {

struct PrecisionRow {
    std::string query_id;
    std::size_t n = 0;
    std::size_t n_plus = 0;
    double precision = 0.0;
};

struct PrecisionReport {
    std::vector<PrecisionRow> rows;
    double mean_precision = 0.0;
};

struct SweepPoint {
    std::size_t n = 0;
    double mean_similarity = 0.0;
};

struct SweepCurve {
    std::vector<SweepPoint> points;
    std::string dataset_desc;
};

struct EvalOptions {
    bool allow_self_match = false;  // keep the query's own index entry if present
    unsigned threads = 1;
};

// N_+/N. Throws unlabeled_item if the query or any retrieved item lacks a label.
double precision_at_n(const std::optional<std::string>& query_label,
                      const std::vector<std::optional<std::string>>& retrieved_labels);

// Per test item: STF -> top-N -> summarize -> cosine against the item's own
// style embedding under the same checkpoint. Returns the mean.
double style_similarity_eval(const Dataset& test, const RetrievalIndex& index,
                             const EncoderParams& params, std::size_t n,
                             const EvalOptions& opt = {});

PrecisionReport precision_eval(const Dataset& test, const RetrievalIndex& index,
                               const EncoderParams& params, std::size_t n,
                               const EvalOptions& opt = {});

// style_similarity_eval at each N; n_values must be strictly increasing.
SweepCurve n_sweep(const Dataset& test, const RetrievalIndex& index,
                   const EncoderParams& params, const std::vector<std::size_t>& n_values,
                   const EvalOptions& opt = {});

// ---- semantic control (reference selection by raw text similarity) ----

struct ControlEntry {
    std::string id;
    Vec64 mean_tokens;
    Vec64 style;  // from the retrieval index, same checkpoint
    std::optional<std::string> label;
};

struct ControlIndex {
    std::vector<ControlEntry> entries;
};

// Pairs every corpus item's mean raw token vector with its indexed style
// embedding; corpus and index must cover the same ids.
ControlIndex build_control_index(const Dataset& corpus, const RetrievalIndex& index);

double control_similarity_eval(const Dataset& test, const ControlIndex& control,
                               const EncoderParams& params, std::size_t n,
                               const EvalOptions& opt = {});

PrecisionReport control_precision_eval(const Dataset& test, const ControlIndex& control,
                                       std::size_t n, const EvalOptions& opt = {});

Vec64 mean_token_vector(const FeaturePair& item);

void write_precision_csv(const PrecisionReport& report, const std::string& path);
void write_sweep_csv(const SweepCurve& curve, const std::string& path);

}  // namespace calm
