#include "calm/dataio.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace calm {

namespace {

using json = nlohmann::ordered_json;

std::vector<Vec64> parse_rows(const json& j, const char* field, std::size_t line_no) {
    if (!j.is_array() || j.empty())
        fail(ErrCode::parse_error, "line " + std::to_string(line_no) + ": " + field +
                                       " must be a non-empty array of arrays");
    std::vector<Vec64> rows;
    rows.reserve(j.size());
    for (const auto& row : j) {
        if (!row.is_array() || row.empty())
            fail(ErrCode::parse_error, "line " + std::to_string(line_no) + ": " + field +
                                           " rows must be non-empty arrays");
        Vec64 v;
        v.reserve(row.size());
        for (const auto& x : row) {
            if (!x.is_number())
                fail(ErrCode::parse_error,
                     "line " + std::to_string(line_no) + ": non-numeric entry in " + field);
            v.push_back(x.get<double>());
        }
        if (!all_finite(v))
            fail(ErrCode::parse_error,
                 "line " + std::to_string(line_no) + ": non-finite entry in " + field);
        rows.push_back(std::move(v));
    }
    return rows;
}

void check_dims(const std::vector<Vec64>& rows, std::size_t expect, const char* field,
                const std::string& id) {
    for (const auto& r : rows)
        if (r.size() != expect)
            fail(ErrCode::dim_inconsistency,
                 std::string(field) + " dim " + std::to_string(r.size()) + " in item '" +
                     id + "' differs from corpus dim " + std::to_string(expect));
}

// Item-specific semantic content amplitude, relative to the topic direction.
constexpr double kSemanticResidual = 0.8;

// Gram-Schmidt orthonormal directions; needs count <= dim.
std::vector<Vec64> orthonormal_directions(std::size_t count, std::size_t dim, Rng& rng) {
    std::vector<Vec64> dirs;
    while (dirs.size() < count) {
        Vec64 v(dim);
        for (auto& x : v) x = rng.normal();
        for (const auto& u : dirs) axpy(-dot(u, v), u, v);
        const double n = norm(v);
        if (n < 1e-8) continue;  // rare degenerate draw, resample
        for (auto& x : v) x /= n;
        dirs.push_back(std::move(v));
    }
    return dirs;
}

}  // namespace

std::unordered_map<std::string, std::size_t> index_by_id(const Dataset& ds) {
    std::unordered_map<std::string, std::size_t> map;
    map.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (!map.emplace(ds[i].id, i).second)
            fail(ErrCode::duplicate_id, "duplicate item id '" + ds[i].id + "'");
    }
    return map;
}

Dataset load_dataset(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail(ErrCode::io, "cannot open " + path);

    Dataset ds;
    std::string line;
    std::size_t line_no = 0;
    std::size_t speech_dim = 0, text_dim = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const std::exception& e) {
            fail(ErrCode::parse_error, "line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.is_object() || !j.contains("id") || !j.contains("speech_frames") ||
            !j.contains("text_tokens"))
            fail(ErrCode::parse_error,
                 "line " + std::to_string(line_no) + ": missing required fields");
        FeaturePair p;
        if (!j["id"].is_string())
            fail(ErrCode::parse_error, "line " + std::to_string(line_no) + ": id must be a string");
        p.id = j["id"].get<std::string>();
        p.speech_frames = parse_rows(j["speech_frames"], "speech_frames", line_no);
        p.text_tokens = parse_rows(j["text_tokens"], "text_tokens", line_no);
        if (j.contains("label") && !j["label"].is_null()) {
            if (!j["label"].is_string())
                fail(ErrCode::parse_error,
                     "line " + std::to_string(line_no) + ": label must be a string or null");
            p.label = j["label"].get<std::string>();
        }

        if (ds.empty()) {
            speech_dim = p.speech_frames[0].size();
            text_dim = p.text_tokens[0].size();
        }
        check_dims(p.speech_frames, speech_dim, "speech frame", p.id);
        check_dims(p.text_tokens, text_dim, "text token", p.id);
        ds.push_back(std::move(p));
    }
    if (ds.empty()) fail(ErrCode::empty_dataset, "no items in " + path);
    index_by_id(ds);  // throws on duplicate ids
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) fail(ErrCode::io, "cannot write " + path);
    for (const auto& p : ds) {
        json j;
        j["id"] = p.id;
        j["speech_frames"] = p.speech_frames;
        j["text_tokens"] = p.text_tokens;
        if (p.label)
            j["label"] = *p.label;
        else
            j["label"] = nullptr;
        os << j.dump() << '\n';
    }
    if (!os) fail(ErrCode::io, "write failed for " + path);
}

void SynthSpec::validate() const {
    if (n_clusters < 2) fail(ErrCode::bad_argument, "n_clusters must be >= 2");
    if (items_per_cluster < 2) fail(ErrCode::bad_argument, "items_per_cluster must be >= 2");
    if (confound_dims < 1 || confound_dims >= text_dim)
        fail(ErrCode::bad_argument, "confound_dims must lie in [1, text_dim)");
    if (style_noise < 0.0 || text_noise < 0.0 || confound_scale < 0.0)
        fail(ErrCode::bad_argument, "noise and scale parameters must be >= 0");
    if (n_clusters > speech_dim)
        fail(ErrCode::bad_argument, "orthogonal speech centroids need n_clusters <= speech_dim");
    if (n_clusters > text_dim - confound_dims)
        fail(ErrCode::bad_argument,
             "orthogonal text style directions need n_clusters <= text_dim - confound_dims");
    if (n_topics < 2 || n_topics > confound_dims)
        fail(ErrCode::bad_argument, "need 2 <= n_topics <= confound_dims");
}

std::vector<SynthItem> generate_synthetic(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);

    const std::size_t style_block = spec.text_dim - spec.confound_dims;
    const auto speech_centroids = orthonormal_directions(spec.n_clusters, spec.speech_dim, rng);
    const auto text_style_dirs = orthonormal_directions(spec.n_clusters, style_block, rng);
    const auto topic_dirs = orthonormal_directions(spec.n_topics, spec.confound_dims, rng);

    std::vector<SynthItem> items;
    items.reserve(spec.n_clusters * spec.items_per_cluster);
    char idbuf[64];
    for (std::size_t c = 0; c < spec.n_clusters; ++c) {
        for (std::size_t i = 0; i < spec.items_per_cluster; ++i) {
            SynthItem item;
            item.cluster = c;
            item.index_in_cluster = i;
            item.topic = static_cast<std::size_t>(rng.below(spec.n_topics));

            const std::size_t n_frames = 4 + static_cast<std::size_t>(rng.below(5));
            item.pair.speech_frames.reserve(n_frames);
            for (std::size_t f = 0; f < n_frames; ++f) {
                Vec64 frame = speech_centroids[c];
                for (auto& x : frame) x += spec.style_noise * rng.normal();
                item.pair.speech_frames.push_back(std::move(frame));
            }

            // The confound block carries the shared topic direction plus an
            // item-specific semantic residual; both scale with confound_scale,
            // so raw-similarity ranking within a topic degrades as the
            // confound grows while the style block stays fixed.
            Vec64 semantic_residual(spec.confound_dims);
            {
                for (auto& x : semantic_residual) x = rng.normal();
                const double n = norm(semantic_residual);
                for (auto& x : semantic_residual) x *= kSemanticResidual / n;
            }
            const std::size_t n_tokens = 5 + static_cast<std::size_t>(rng.below(6));
            item.pair.text_tokens.reserve(n_tokens);
            for (std::size_t t = 0; t < n_tokens; ++t) {
                Vec64 tok(spec.text_dim, 0.0);
                for (std::size_t d = 0; d < style_block; ++d)
                    tok[d] = text_style_dirs[c][d] + spec.text_noise * rng.normal();
                for (std::size_t d = 0; d < spec.confound_dims; ++d)
                    tok[style_block + d] =
                        spec.confound_scale *
                            (topic_dirs[item.topic][d] + semantic_residual[d]) +
                        spec.text_noise * rng.normal();
                item.pair.text_tokens.push_back(std::move(tok));
            }

            std::snprintf(idbuf, sizeof(idbuf), "c%02zu_i%04zu_t%zu", c, i, item.topic);
            item.pair.id = idbuf;
            std::snprintf(idbuf, sizeof(idbuf), "c%02zu", c);
            item.pair.label = std::string(idbuf);
            items.push_back(std::move(item));
        }
    }
    return items;
}

Dataset to_dataset(const std::vector<SynthItem>& items) {
    Dataset ds;
    ds.reserve(items.size());
    for (const auto& it : items) ds.push_back(it.pair);
    return ds;
}

void split_synthetic(const std::vector<SynthItem>& items, std::size_t train_per_cluster,
                     Dataset& train, Dataset& test) {
    train.clear();
    test.clear();
    for (const auto& it : items) {
        if (it.index_in_cluster < train_per_cluster)
            train.push_back(it.pair);
        else
            test.push_back(it.pair);
    }
}

}  // namespace calm
