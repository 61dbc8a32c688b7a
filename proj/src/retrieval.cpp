#include "calm/retrieval.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unordered_set>

#include "calm/binio.hpp"

namespace calm {

namespace {

constexpr char kIndexMagic[8] = {'C', 'A', 'L', 'M', 'I', 'D', 'X', '1'};
constexpr std::uint32_t kIndexVersion = 1;

void write_padded(std::ostream& os, const std::string& s, std::size_t width) {
    std::string buf(width, '\0');
    std::memcpy(buf.data(), s.data(), s.size());
    write_bytes(os, buf.data(), width);
}

std::string read_padded(std::istream& is, std::size_t width) {
    std::string buf(width, '\0');
    read_bytes(is, buf.data(), width);
    return buf.substr(0, buf.find('\0') == std::string::npos ? width : buf.find('\0'));
}

}  // namespace

RetrievalIndex build_index(const Dataset& dataset, const EncoderParams& params,
                           std::uint64_t fingerprint) {
    if (dataset.empty()) fail(ErrCode::empty_dataset, "cannot index an empty dataset");
    if (!dataset[0].speech_frames.empty() &&
        dataset[0].speech_frames[0].size() != params.config.speech_dim)
        fail(ErrCode::checkpoint_mismatch,
             "checkpoint speech_dim " + std::to_string(params.config.speech_dim) +
                 " does not match dataset dim " +
                 std::to_string(dataset[0].speech_frames[0].size()));
    if (!dataset[0].text_tokens.empty() &&
        dataset[0].text_tokens[0].size() != params.config.text_dim)
        fail(ErrCode::checkpoint_mismatch,
             "checkpoint text_dim " + std::to_string(params.config.text_dim) +
                 " does not match dataset dim " +
                 std::to_string(dataset[0].text_tokens[0].size()));

    RetrievalIndex index;
    index.style_dim = params.config.style_dim;
    index.encoder_fingerprint = fingerprint;
    index.entries.reserve(dataset.size());
    for (const auto& item : dataset) {
        IndexEntry e;
        e.id = item.id;
        e.stf = text_encode(item.text_tokens, params.ling, Mode::eval);
        e.style = style_encode(item.speech_frames, params.style);
        e.label = item.label;
        index.entries.push_back(std::move(e));
    }
    return index;
}

RetrievalIndex build_index(const Dataset& dataset, const std::string& checkpoint_path) {
    const EncoderParams params = load_checkpoint(checkpoint_path);
    return build_index(dataset, params, fnv1a64_file(checkpoint_path));
}

ReferenceSet query_top_n(const Vec64& t0, const RetrievalIndex& index, std::size_t n,
                         const std::string* exclude_id) {
    std::size_t available = index.entries.size();
    if (exclude_id != nullptr)
        for (const auto& e : index.entries)
            if (e.id == *exclude_id) --available;
    if (n < 1 || n > available)
        fail(ErrCode::n_out_of_range, "N=" + std::to_string(n) + " with " +
                                          std::to_string(available) + " candidates");

    std::vector<std::pair<double, const IndexEntry*>> scored;
    scored.reserve(available);
    for (const auto& e : index.entries) {
        if (exclude_id != nullptr && e.id == *exclude_id) continue;
        scored.emplace_back(cosine_similarity(t0, e.stf), &e);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second->id < b.second->id;
    });
    scored.resize(n);

    ReferenceSet refs;
    refs.ids.reserve(n);
    refs.labels.reserve(n);
    refs.stf_rows = Mat64(n, index.style_dim);
    refs.style_rows = Mat64(n, index.style_dim);
    refs.sims.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const IndexEntry& e = *scored[i].second;
        refs.ids.push_back(e.id);
        refs.labels.push_back(e.label);
        refs.sims.push_back(scored[i].first);
        for (std::size_t b = 0; b < index.style_dim; ++b) {
            refs.stf_rows(i, b) = e.stf[b];
            refs.style_rows(i, b) = e.style[b];
        }
    }
    return refs;
}

SummaryResult summarize(const ReferenceSet& refs, const Vec64& t0) {
    const std::size_t n = refs.ids.size();
    if (n == 0) fail(ErrCode::empty_input, "summarize: no references");
    if (t0.size() != refs.stf_rows.cols)
        fail(ErrCode::dim_mismatch, "summarize: t0 dim mismatch");

    Vec64 logits(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t b = 0; b < t0.size(); ++b) s += refs.stf_rows(i, b) * t0[b];
        logits[i] = s;
    }
    SummaryResult out;
    out.weights = softmax(logits);
    out.final_embedding.assign(refs.style_rows.cols, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t b = 0; b < refs.style_rows.cols; ++b)
            out.final_embedding[b] += out.weights[i] * refs.style_rows(i, b);
    return out;
}

void save_index(const RetrievalIndex& index, const std::string& path) {
    std::size_t id_width = 1, label_width = 1;
    for (const auto& e : index.entries) {
        id_width = std::max(id_width, e.id.size() + 1);
        if (e.label) label_width = std::max(label_width, e.label->size() + 1);
    }

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) fail(ErrCode::io, "cannot write " + path);
    write_bytes(os, kIndexMagic, sizeof(kIndexMagic));
    write_u32(os, kIndexVersion);
    write_u32(os, static_cast<std::uint32_t>(index.style_dim));
    write_u32(os, static_cast<std::uint32_t>(id_width));
    write_u32(os, static_cast<std::uint32_t>(label_width));
    write_u64(os, static_cast<std::uint64_t>(index.entries.size()));
    write_u64(os, index.encoder_fingerprint);
    for (const auto& e : index.entries) {
        if (e.stf.size() != index.style_dim || e.style.size() != index.style_dim)
            fail(ErrCode::dim_mismatch, "index entry '" + e.id + "' has wrong embedding dim");
        write_padded(os, e.id, id_width);
        const unsigned char has_label = e.label ? 1 : 0;
        write_bytes(os, &has_label, 1);
        write_padded(os, e.label ? *e.label : std::string(), label_width);
        write_f64_array(os, e.stf);
        write_f64_array(os, e.style);
    }
    if (!os) fail(ErrCode::io, "write failed for " + path);
}

RetrievalIndex load_index(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrCode::io, "cannot open " + path);

    char magic[8];
    read_bytes(is, magic, sizeof(magic));
    if (std::string(magic, 8) != std::string(kIndexMagic, 8))
        fail(ErrCode::format_version_mismatch, "not an index file: " + path);
    if (read_u32(is) != kIndexVersion)
        fail(ErrCode::format_version_mismatch, "index version unsupported in " + path);

    RetrievalIndex index;
    index.style_dim = read_u32(is);
    const std::size_t id_width = read_u32(is);
    const std::size_t label_width = read_u32(is);
    const std::uint64_t count = read_u64(is);
    index.encoder_fingerprint = read_u64(is);

    // Validate the payload size before reading any record.
    const std::uintmax_t record_size =
        id_width + 1 + label_width + 2 * index.style_dim * sizeof(double);
    const std::uintmax_t expected = 40 + count * record_size;
    std::error_code ec;
    const std::uintmax_t actual = std::filesystem::file_size(path, ec);
    if (ec) fail(ErrCode::io, "cannot stat " + path);
    if (actual != expected)
        fail(ErrCode::format_version_mismatch,
             path + " holds " + std::to_string(actual) + " bytes, expected " +
                 std::to_string(expected));

    index.entries.reserve(count);
    std::unordered_set<std::string> seen;
    seen.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        IndexEntry e;
        e.id = read_padded(is, id_width);
        if (!seen.insert(e.id).second)
            fail(ErrCode::duplicate_id, "index holds '" + e.id + "' twice");
        unsigned char has_label = 0;
        read_bytes(is, &has_label, 1);
        const std::string label = read_padded(is, label_width);
        if (has_label) e.label = label;
        read_f64_array(is, e.stf, index.style_dim);
        read_f64_array(is, e.style, index.style_dim);
        index.entries.push_back(std::move(e));
    }
    return index;
}

void verify_fingerprint(const RetrievalIndex& index, const std::string& checkpoint_path) {
    const std::uint64_t actual = fnv1a64_file(checkpoint_path);
    if (actual != index.encoder_fingerprint)
        fail(ErrCode::fingerprint_mismatch,
             "index was built with checkpoint " + fingerprint_hex(index.encoder_fingerprint) +
                 " but " + checkpoint_path + " has fingerprint " + fingerprint_hex(actual));
}

}  // namespace calm
