#include "calm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>
#include <unordered_map>

namespace calm {

namespace {

// Chunked parallel map over [0, n); results land in caller-owned slots so
// the aggregation order never depends on the thread count.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    if (threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const unsigned workers = std::min<unsigned>(threads, static_cast<unsigned>(n));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

double mean_of(const Vec64& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

struct ControlRanked {
    std::vector<const ControlEntry*> refs;
    Vec64 logits;  // raw dot products of mean token vectors
};

ControlRanked control_top_n(const Vec64& query_mean, const ControlIndex& control,
                            std::size_t n, const std::string* exclude_id) {
    std::size_t available = control.entries.size();
    if (exclude_id != nullptr)
        for (const auto& e : control.entries)
            if (e.id == *exclude_id) --available;
    if (n < 1 || n > available)
        fail(ErrCode::n_out_of_range, "N=" + std::to_string(n) + " with " +
                                          std::to_string(available) + " candidates");

    std::vector<std::pair<double, const ControlEntry*>> scored;
    scored.reserve(available);
    for (const auto& e : control.entries) {
        if (exclude_id != nullptr && e.id == *exclude_id) continue;
        scored.emplace_back(cosine_similarity(query_mean, e.mean_tokens), &e);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second->id < b.second->id;
    });

    ControlRanked out;
    out.refs.reserve(n);
    out.logits.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.refs.push_back(scored[i].second);
        out.logits.push_back(dot(query_mean, scored[i].second->mean_tokens));
    }
    return out;
}

std::size_t count_matching(const std::optional<std::string>& query_label,
                           const std::vector<std::optional<std::string>>& retrieved_labels) {
    if (retrieved_labels.empty()) fail(ErrCode::bad_argument, "precision needs N >= 1");
    if (!query_label) fail(ErrCode::unlabeled_item, "query has no label");
    std::size_t n_plus = 0;
    for (const auto& l : retrieved_labels) {
        if (!l) fail(ErrCode::unlabeled_item, "retrieved item has no label");
        if (*l == *query_label) ++n_plus;
    }
    return n_plus;
}

}  // namespace

double precision_at_n(const std::optional<std::string>& query_label,
                      const std::vector<std::optional<std::string>>& retrieved_labels) {
    return static_cast<double>(count_matching(query_label, retrieved_labels)) /
           static_cast<double>(retrieved_labels.size());
}

double style_similarity_eval(const Dataset& test, const RetrievalIndex& index,
                             const EncoderParams& params, std::size_t n,
                             const EvalOptions& opt) {
    if (test.empty()) fail(ErrCode::empty_dataset, "no test items");
    Vec64 sims(test.size(), 0.0);
    parallel_for(test.size(), opt.threads, [&](std::size_t i) {
        const FeaturePair& item = test[i];
        const Vec64 t0 = text_encode(item.text_tokens, params.ling, Mode::eval);
        const std::string* exclude = opt.allow_self_match ? nullptr : &item.id;
        const ReferenceSet refs = query_top_n(t0, index, n, exclude);
        const SummaryResult summary = summarize(refs, t0);
        const Vec64 ground_truth = style_encode(item.speech_frames, params.style);
        sims[i] = cosine_similarity(summary.final_embedding, ground_truth);
    });
    return mean_of(sims);
}

PrecisionReport precision_eval(const Dataset& test, const RetrievalIndex& index,
                               const EncoderParams& params, std::size_t n,
                               const EvalOptions& opt) {
    if (test.empty()) fail(ErrCode::empty_dataset, "no test items");
    PrecisionReport report;
    report.rows.resize(test.size());
    parallel_for(test.size(), opt.threads, [&](std::size_t i) {
        const FeaturePair& item = test[i];
        const Vec64 t0 = text_encode(item.text_tokens, params.ling, Mode::eval);
        const std::string* exclude = opt.allow_self_match ? nullptr : &item.id;
        const ReferenceSet refs = query_top_n(t0, index, n, exclude);
        const std::size_t n_plus = count_matching(item.label, refs.labels);
        report.rows[i] = PrecisionRow{item.id, n, n_plus,
                                      static_cast<double>(n_plus) / static_cast<double>(n)};
    });
    double s = 0.0;
    for (const auto& r : report.rows) s += r.precision;
    report.mean_precision = s / static_cast<double>(report.rows.size());
    return report;
}

SweepCurve n_sweep(const Dataset& test, const RetrievalIndex& index,
                   const EncoderParams& params, const std::vector<std::size_t>& n_values,
                   const EvalOptions& opt) {
    if (n_values.empty()) fail(ErrCode::bad_argument, "n_sweep needs at least one N");
    for (std::size_t i = 0; i < n_values.size(); ++i) {
        if (i > 0 && n_values[i] <= n_values[i - 1])
            fail(ErrCode::bad_argument, "N values must be strictly increasing");
        if (n_values[i] < 1 || n_values[i] > index.entries.size())
            fail(ErrCode::n_out_of_range,
                 "N=" + std::to_string(n_values[i]) + " exceeds index size " +
                     std::to_string(index.entries.size()));
    }
    SweepCurve curve;
    curve.points.reserve(n_values.size());
    for (std::size_t n : n_values)
        curve.points.push_back({n, style_similarity_eval(test, index, params, n, opt)});
    return curve;
}

Vec64 mean_token_vector(const FeaturePair& item) {
    if (item.text_tokens.empty())
        fail(ErrCode::empty_sequence, "item '" + item.id + "' has no tokens");
    Vec64 mean(item.text_tokens[0].size(), 0.0);
    for (const auto& t : item.text_tokens) axpy(1.0, t, mean);
    for (auto& x : mean) x /= static_cast<double>(item.text_tokens.size());
    return mean;
}

ControlIndex build_control_index(const Dataset& corpus, const RetrievalIndex& index) {
    std::unordered_map<std::string, const IndexEntry*> by_id;
    by_id.reserve(index.entries.size());
    for (const auto& e : index.entries) by_id.emplace(e.id, &e);

    ControlIndex control;
    control.entries.reserve(corpus.size());
    for (const auto& item : corpus) {
        auto it = by_id.find(item.id);
        if (it == by_id.end())
            fail(ErrCode::checkpoint_mismatch,
                 "corpus item '" + item.id + "' is missing from the index");
        ControlEntry e;
        e.id = item.id;
        e.mean_tokens = mean_token_vector(item);
        e.style = it->second->style;
        e.label = item.label;
        control.entries.push_back(std::move(e));
    }
    return control;
}

double control_similarity_eval(const Dataset& test, const ControlIndex& control,
                               const EncoderParams& params, std::size_t n,
                               const EvalOptions& opt) {
    if (test.empty()) fail(ErrCode::empty_dataset, "no test items");
    Vec64 sims(test.size(), 0.0);
    parallel_for(test.size(), opt.threads, [&](std::size_t i) {
        const FeaturePair& item = test[i];
        const Vec64 query_mean = mean_token_vector(item);
        const std::string* exclude = opt.allow_self_match ? nullptr : &item.id;
        const ControlRanked ranked = control_top_n(query_mean, control, n, exclude);

        const Vec64 w = softmax(ranked.logits);
        Vec64 final_style(params.config.style_dim, 0.0);
        for (std::size_t r = 0; r < ranked.refs.size(); ++r)
            axpy(w[r], ranked.refs[r]->style, final_style);
        const Vec64 ground_truth = style_encode(item.speech_frames, params.style);
        sims[i] = cosine_similarity(final_style, ground_truth);
    });
    return mean_of(sims);
}

PrecisionReport control_precision_eval(const Dataset& test, const ControlIndex& control,
                                       std::size_t n, const EvalOptions& opt) {
    if (test.empty()) fail(ErrCode::empty_dataset, "no test items");
    PrecisionReport report;
    report.rows.resize(test.size());
    parallel_for(test.size(), opt.threads, [&](std::size_t i) {
        const FeaturePair& item = test[i];
        const Vec64 query_mean = mean_token_vector(item);
        const std::string* exclude = opt.allow_self_match ? nullptr : &item.id;
        const ControlRanked ranked = control_top_n(query_mean, control, n, exclude);
        std::vector<std::optional<std::string>> labels;
        labels.reserve(ranked.refs.size());
        for (const auto* e : ranked.refs) labels.push_back(e->label);
        const std::size_t n_plus = count_matching(item.label, labels);
        report.rows[i] = PrecisionRow{item.id, n, n_plus,
                                      static_cast<double>(n_plus) / static_cast<double>(n)};
    });
    double s = 0.0;
    for (const auto& r : report.rows) s += r.precision;
    report.mean_precision = s / static_cast<double>(report.rows.size());
    return report;
}

void write_precision_csv(const PrecisionReport& report, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) fail(ErrCode::io, "cannot write " + path);
    os << "query_id,N,N_plus,precision\n";
    char buf[64];
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof(buf), "%.17g", r.precision);
        os << r.query_id << ',' << r.n << ',' << r.n_plus << ',' << buf << '\n';
    }
    if (!os) fail(ErrCode::io, "write failed for " + path);
}

void write_sweep_csv(const SweepCurve& curve, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) fail(ErrCode::io, "cannot write " + path);
    os << "N,mean_similarity\n";
    char buf[64];
    for (const auto& p : curve.points) {
        std::snprintf(buf, sizeof(buf), "%.17g", p.mean_similarity);
        os << p.n << ',' << buf << '\n';
    }
    if (!os) fail(ErrCode::io, "write failed for " + path);
}

}  // namespace calm
