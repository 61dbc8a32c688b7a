#include "calm/sampling.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

namespace calm {

void StyleTable::add(const std::string& id, Vec64 embedding) {
    if (by_id.count(id)) fail(ErrCode::duplicate_id, "style table already has '" + id + "'");
    if (norm(embedding) < 1e-12)
        fail(ErrCode::zero_norm, "style embedding for '" + id + "' has zero norm");
    by_id.emplace(id, rows.size());
    rows.emplace_back(id, std::move(embedding));
}

const Vec64& StyleTable::embedding_of(const std::string& id) const {
    auto it = by_id.find(id);
    if (it == by_id.end()) fail(ErrCode::anchor_missing, "'" + id + "' not in style table");
    return rows[it->second].second;
}

std::vector<RankedItem> rank_by_style(const std::string& anchor_id, const StyleTable& table) {
    if (table.size() < 2)
        fail(ErrCode::table_too_small, "need at least 2 items to rank");
    const Vec64& anchor = table.embedding_of(anchor_id);

    std::vector<RankedItem> ranked;
    ranked.reserve(table.size() - 1);
    for (const auto& [id, emb] : table.rows) {
        if (id == anchor_id) continue;
        ranked.push_back({id, cosine_similarity(anchor, emb)});
    }
    std::sort(ranked.begin(), ranked.end(), [](const RankedItem& a, const RankedItem& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.id < b.id;
    });
    return ranked;
}

std::vector<std::string> select_positives(const std::vector<RankedItem>& ranked, std::size_t k) {
    if (k == 0) fail(ErrCode::bad_argument, "k must be >= 1");
    if (ranked.size() < 2 * k)
        fail(ErrCode::insufficient_items,
             "ranking of " + std::to_string(ranked.size()) + " items cannot supply K=" +
                 std::to_string(k) + " positives and negatives");
    std::vector<std::string> ids;
    ids.reserve(k);
    for (std::size_t i = 0; i < k; ++i) ids.push_back(ranked[i].id);
    return ids;
}

std::vector<std::string> select_negatives(const std::vector<RankedItem>& ranked, std::size_t k,
                                          Rng& rng) {
    if (k == 0) fail(ErrCode::bad_argument, "k must be >= 1");
    const std::size_t start = ranked.size() / 2;
    const std::size_t pool_size = ranked.size() - start;
    if (pool_size < k)
        fail(ErrCode::insufficient_items,
             "latter half holds " + std::to_string(pool_size) + " items, need " +
                 std::to_string(k));

    // partial Fisher-Yates over the pool positions
    std::vector<std::size_t> pool(pool_size);
    for (std::size_t i = 0; i < pool_size; ++i) pool[i] = start + i;
    std::vector<std::string> ids;
    ids.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(pool_size - i));
        std::swap(pool[i], pool[j]);
        ids.push_back(ranked[pool[i]].id);
    }
    return ids;
}

ContrastiveBatch make_batch(const std::string& anchor_id, const StyleTable& table,
                            std::size_t k, Rng& rng) {
    const auto ranked = rank_by_style(anchor_id, table);
    ContrastiveBatch batch;
    batch.anchor_id = anchor_id;
    batch.positives = select_positives(ranked, k);
    batch.negatives = select_negatives(ranked, k, rng);
    return batch;
}

void save_batches(const std::vector<ContrastiveBatch>& batches, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) fail(ErrCode::io, "cannot write " + path);
    for (const auto& b : batches) {
        nlohmann::ordered_json j;
        j["anchor"] = b.anchor_id;
        j["positives"] = b.positives;
        j["negatives"] = b.negatives;
        os << j.dump() << '\n';
    }
    if (!os) fail(ErrCode::io, "write failed for " + path);
}

std::vector<ContrastiveBatch> load_batches(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail(ErrCode::io, "cannot open " + path);
    std::vector<ContrastiveBatch> batches;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            ContrastiveBatch b;
            b.anchor_id = j.at("anchor").get<std::string>();
            b.positives = j.at("positives").get<std::vector<std::string>>();
            b.negatives = j.at("negatives").get<std::vector<std::string>>();
            batches.push_back(std::move(b));
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            fail(ErrCode::parse_error, "line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return batches;
}

}  // namespace calm
