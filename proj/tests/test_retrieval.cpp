#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "calm/retrieval.hpp"

using namespace calm;

namespace {

std::filesystem::path scratch_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "calm_retrieval_test";
    std::filesystem::create_directories(dir);
    return dir;
}

RetrievalIndex random_index(std::size_t n, std::size_t dim, Rng& rng) {
    RetrievalIndex index;
    index.style_dim = dim;
    index.encoder_fingerprint = 0x1234abcd5678ef00ULL;
    for (std::size_t i = 0; i < n; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "e%03zu", i);
        IndexEntry e;
        e.id = id;
        e.stf.resize(dim);
        e.style.resize(dim);
        for (auto& x : e.stf) x = rng.normal();
        for (auto& x : e.style) x = rng.normal();
        if (i % 3 != 0) e.label = "L" + std::to_string(i % 4);
        index.entries.push_back(std::move(e));
    }
    return index;
}

Dataset small_corpus(std::size_t n, Rng& rng) {
    Dataset ds;
    for (std::size_t i = 0; i < n; ++i) {
        FeaturePair p;
        p.id = "item" + std::to_string(i);
        p.speech_frames.assign(3, Vec64(4));
        p.text_tokens.assign(4, Vec64(6));
        for (auto& f : p.speech_frames)
            for (auto& x : f) x = rng.normal();
        for (auto& t : p.text_tokens)
            for (auto& x : t) x = rng.normal();
        p.label = "L" + std::to_string(i % 2);
        ds.push_back(std::move(p));
    }
    return ds;
}

EncoderParams small_params(Rng& rng) {
    EncoderConfig cfg;
    cfg.speech_dim = 4;
    cfg.text_dim = 6;
    cfg.hidden = 5;
    cfg.style_dim = 3;
    cfg.n_tokens = 4;
    return init_params(cfg, rng);
}

}  // namespace

TEST_CASE("build_index: one eval-mode entry per item") {
    Rng rng(1);
    const Dataset ds = small_corpus(7, rng);
    const EncoderParams params = small_params(rng);
    const RetrievalIndex index = build_index(ds, params, 42);

    REQUIRE(index.entries.size() == 7);
    CHECK(index.encoder_fingerprint == 42);
    for (std::size_t i = 0; i < 7; ++i) {
        CHECK(index.entries[i].id == ds[i].id);
        CHECK(index.entries[i].label == ds[i].label);
        // per-item oracle: a direct encoder call gives the same embeddings
        CHECK(index.entries[i].stf ==
              text_encode(ds[i].text_tokens, params.ling, Mode::eval));
        CHECK(index.entries[i].style == style_encode(ds[i].speech_frames, params.style));
    }

    CHECK_THROWS_AS(build_index(Dataset{}, params, 0), Error);

    // config/dataset mismatch
    Rng rng2(2);
    EncoderConfig wrong;
    wrong.speech_dim = 9;
    wrong.text_dim = 6;
    try {
        build_index(ds, init_params(wrong, rng2), 0);
        FAIL("expected CheckpointMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrCode::checkpoint_mismatch);
    }
}

TEST_CASE("query_top_n: full sort, self hit, bounds") {
    Rng rng(3);
    RetrievalIndex index = random_index(10, 4, rng);

    // N == index size returns everything, sorted descending
    const Vec64 q = index.entries[4].stf;
    const ReferenceSet all = query_top_n(q, index, 10);
    CHECK(all.ids.size() == 10);
    for (std::size_t i = 1; i < 10; ++i) CHECK(all.sims[i - 1] >= all.sims[i]);
    CHECK(all.ids[0] == "e004");  // exact match ranks first
    CHECK(all.sims[0] == doctest::Approx(1.0));

    CHECK_THROWS_AS(query_top_n(q, index, 0), Error);
    CHECK_THROWS_AS(query_top_n(q, index, 11), Error);

    // the excluded id never appears
    const std::string self = "e004";
    const ReferenceSet rest = query_top_n(q, index, 9, &self);
    for (const auto& id : rest.ids) CHECK(id != self);
    CHECK_THROWS_AS(query_top_n(q, index, 10, &self), Error);
}

TEST_CASE("query_top_n equals the brute-force oracle on random instances") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 20 + rng.below(80);
        RetrievalIndex index = random_index(n, 5, rng);
        if (trial % 3 == 0) {
            // inject exact ties
            index.entries[3].stf = index.entries[11].stf;
            index.entries[7].stf = index.entries[11].stf;
        }
        Vec64 q(5);
        for (auto& x : q) x = rng.normal();
        const std::size_t top = 1 + rng.below(20);

        // oracle: full sort of (similarity, id) pairs
        std::vector<std::pair<double, std::string>> oracle;
        for (const auto& e : index.entries)
            oracle.emplace_back(cosine_similarity(q, e.stf), e.id);
        std::sort(oracle.begin(), oracle.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });

        const ReferenceSet refs = query_top_n(q, index, top);
        for (std::size_t i = 0; i < top; ++i) {
            CHECK(refs.ids[i] == oracle[i].second);
            CHECK(refs.sims[i] == doctest::Approx(oracle[i].first).epsilon(1e-14));
        }
    }
}

TEST_CASE("query ranking is invariant to positive scaling of the query") {
    Rng rng(11);
    RetrievalIndex index = random_index(30, 4, rng);
    Vec64 q(4);
    for (auto& x : q) x = rng.normal();
    const ReferenceSet a = query_top_n(q, index, 12);
    Vec64 q2 = q;
    for (auto& x : q2) x *= 37.5;
    const ReferenceSet b = query_top_n(q2, index, 12);
    CHECK(a.ids == b.ids);
}

TEST_CASE("summarize: degenerate and closed-form cases") {
    Rng rng(13);
    RetrievalIndex index = random_index(5, 3, rng);

    // N=1: weight exactly 1, final is s1 bitwise
    const ReferenceSet one = query_top_n(index.entries[2].stf, index, 1);
    const SummaryResult r1 = summarize(one, index.entries[2].stf);
    CHECK(r1.weights == Vec64{1.0});
    Vec64 s1(3);
    for (std::size_t b = 0; b < 3; ++b) s1[b] = one.style_rows(0, b);
    CHECK(r1.final_embedding == s1);

    // identical STF rows: exact uniform weights, final = mean of styles
    ReferenceSet same;
    same.ids = {"a", "b", "c", "d"};
    same.labels.assign(4, std::nullopt);
    same.stf_rows = Mat64(4, 3);
    same.style_rows = Mat64(4, 3);
    same.sims.assign(4, 1.0);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t b = 0; b < 3; ++b) {
            same.stf_rows(i, b) = 0.7 - 0.1 * static_cast<double>(b);
            same.style_rows(i, b) = rng.normal();
        }
    const Vec64 t0 = {0.3, -0.2, 0.9};
    const SummaryResult ru = summarize(same, t0);
    for (double w : ru.weights) CHECK(w == 0.25);  // power-of-two N: exact
    for (std::size_t b = 0; b < 3; ++b) {
        const double mean = (same.style_rows(0, b) + same.style_rows(1, b) +
                             same.style_rows(2, b) + same.style_rows(3, b)) /
                            4.0;
        CHECK(ru.final_embedding[b] == mean);  // bitwise for N=4
    }

    // N=2, 1-dim closed form: T=[[ln2],[0]], t0=(1) -> w=(2/3,1/3)
    ReferenceSet two;
    two.ids = {"x", "y"};
    two.labels.assign(2, std::nullopt);
    two.stf_rows = Mat64(2, 1);
    two.stf_rows(0, 0) = std::log(2.0);
    two.stf_rows(1, 0) = 0.0;
    two.style_rows = Mat64(2, 1);
    two.style_rows(0, 0) = 5.0;
    two.style_rows(1, 0) = -1.0;
    two.sims = {1.0, 0.5};
    const SummaryResult r2 = summarize(two, {1.0});
    CHECK(r2.weights[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(r2.weights[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
    CHECK(r2.final_embedding[0] ==
          doctest::Approx((2.0 * 5.0 + 1.0 * -1.0) / 3.0).epsilon(1e-14));
}

TEST_CASE("summarize invariants: simplex weights, convex hull membership") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        RetrievalIndex index = random_index(12, 4, rng);
        Vec64 q(4);
        for (auto& x : q) x = rng.normal();
        const ReferenceSet refs = query_top_n(q, index, 5);
        const SummaryResult s = summarize(refs, q);
        double sum = 0.0;
        for (double w : s.weights) {
            CHECK(w > 0.0);
            sum += w;
        }
        CHECK(std::fabs(sum - 1.0) < 1e-12);
        for (std::size_t b = 0; b < 4; ++b) {
            double lo = 1e300, hi = -1e300;
            for (std::size_t i = 0; i < 5; ++i) {
                lo = std::min(lo, refs.style_rows(i, b));
                hi = std::max(hi, refs.style_rows(i, b));
            }
            CHECK(s.final_embedding[b] >= lo - 1e-12);
            CHECK(s.final_embedding[b] <= hi + 1e-12);
        }
    }
}

TEST_CASE("index save/load round-trips bit-exactly and rejects damage") {
    Rng rng(23);
    const RetrievalIndex index = random_index(100, 6, rng);
    const auto dir = scratch_dir();
    const std::string path = (dir / "test.idx").string();
    save_index(index, path);

    const RetrievalIndex loaded = load_index(path);
    CHECK(loaded.style_dim == index.style_dim);
    CHECK(loaded.encoder_fingerprint == index.encoder_fingerprint);
    REQUIRE(loaded.entries.size() == index.entries.size());
    for (std::size_t i = 0; i < index.entries.size(); ++i) {
        CHECK(loaded.entries[i].id == index.entries[i].id);
        CHECK(loaded.entries[i].label == index.entries[i].label);
        CHECK(loaded.entries[i].stf == index.entries[i].stf);      // bitwise
        CHECK(loaded.entries[i].style == index.entries[i].style);  // bitwise
    }

    // queries behave identically after a round trip
    Vec64 q(6);
    for (auto& x : q) x = rng.normal();
    const ReferenceSet before = query_top_n(q, index, 9);
    const ReferenceSet after = query_top_n(q, loaded, 9);
    CHECK(before.ids == after.ids);
    CHECK(before.sims == after.sims);

    // truncation: never a silent partial load
    const auto full_size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full_size - 17);
    try {
        load_index(path);
        FAIL("expected FormatVersionMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrCode::format_version_mismatch);
    }

    // wrong magic
    save_index(index, path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.write("NOTANIDX", 8);
    }
    try {
        load_index(path);
        FAIL("expected FormatVersionMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrCode::format_version_mismatch);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("rebuilding an index from the same checkpoint gives identical bytes") {
    Rng rng(31);
    const Dataset ds = small_corpus(6, rng);
    const EncoderParams params = small_params(rng);
    const auto dir = scratch_dir();
    const std::string ckpt = (dir / "enc.ckpt").string();
    save_checkpoint(params, ckpt);

    const std::string p1 = (dir / "a.idx").string();
    const std::string p2 = (dir / "b.idx").string();
    save_index(build_index(ds, ckpt), p1);
    save_index(build_index(ds, ckpt), p2);

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), {});
    const std::string b2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(b1 == b2);

    // fingerprint verification
    const RetrievalIndex index = load_index(p1);
    verify_fingerprint(index, ckpt);  // must not throw
    EncoderParams other = params;
    other.ling.out_proj(0, 0) += 1.0;
    const std::string ckpt2 = (dir / "other.ckpt").string();
    save_checkpoint(other, ckpt2);
    try {
        verify_fingerprint(index, ckpt2);
        FAIL("expected FingerprintMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrCode::fingerprint_mismatch);
        CHECK(std::string(e.what()).find("fingerprint") != std::string::npos);
    }
    std::filesystem::remove_all(dir);
}
