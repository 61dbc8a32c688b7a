// calm: command-line pipeline around the contrastive style-retrieval engine.
// Subcommands: gen-data, train, index, retrieve, eval, sweep.
//
// Exit codes: 0 success, 1 I/O or unexpected failure, 2 invalid
// configuration or arguments, 3 bad or missing data, 4 numeric failure,
// 5 format/fingerprint mismatch.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "calm/binio.hpp"
#include "calm/dataio.hpp"
#include "calm/encoders.hpp"
#include "calm/evaluation.hpp"
#include "calm/retrieval.hpp"
#include "calm/sampling.hpp"
#include "calm/tensor.hpp"
#include "calm/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace calm;

namespace {

int exit_code_for(ErrCode c) {
    switch (c) {
        case ErrCode::bad_argument:
        case ErrCode::n_out_of_range:
            return 2;
        case ErrCode::parse_error:
        case ErrCode::dim_inconsistency:
        case ErrCode::duplicate_id:
        case ErrCode::empty_dataset:
        case ErrCode::dataset_too_small:
        case ErrCode::empty_sequence:
        case ErrCode::unlabeled_item:
        case ErrCode::table_too_small:
        case ErrCode::insufficient_items:
        case ErrCode::anchor_missing:
            return 3;
        case ErrCode::non_finite_loss:
        case ErrCode::non_finite_evaluation:
        case ErrCode::zero_norm:
            return 4;
        case ErrCode::format_version_mismatch:
        case ErrCode::fingerprint_mismatch:
        case ErrCode::checkpoint_mismatch:
            return 5;
        default:
            return 1;
    }
}

// Operator-facing configuration. Defaults are the synthetic-experiment
// profile; a JSON config file can replace them and explicit flags win over
// both.
struct RunConfig {
    TrainConfig train;
    std::size_t n = 20;  // references at inference
    bool allow_self_match = false;
    unsigned threads = 1;

    RunConfig() {
        train.encoder.speech_dim = 8;
        train.encoder.text_dim = 16;
        train.encoder.hidden = 16;
        train.encoder.style_dim = 8;
        train.encoder.n_tokens = 10;
        train.encoder.dropout = 0.2;
    }
};

void apply_config_file(RunConfig& rc, const std::string& path) {
    std::ifstream is(path);
    if (!is) fail(ErrCode::io, "cannot open config " + path);
    json j;
    try {
        j = json::parse(is);
    } catch (const std::exception& e) {
        fail(ErrCode::bad_argument, "config " + path + ": " + e.what());
    }
    const auto get = [](const json& obj, const char* key, auto& out) {
        if (obj.contains(key)) out = obj.at(key).get<std::decay_t<decltype(out)>>();
    };
    if (j.contains("encoder")) {
        const auto& e = j["encoder"];
        get(e, "speech_dim", rc.train.encoder.speech_dim);
        get(e, "text_dim", rc.train.encoder.text_dim);
        get(e, "hidden", rc.train.encoder.hidden);
        get(e, "style_dim", rc.train.encoder.style_dim);
        get(e, "n_tokens", rc.train.encoder.n_tokens);
        get(e, "dropout", rc.train.encoder.dropout);
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        get(t, "k", rc.train.k);
        get(t, "lambda", rc.train.lambda);
        get(t, "lr", rc.train.lr);
        get(t, "beta1", rc.train.beta1);
        get(t, "beta2", rc.train.beta2);
        get(t, "eps", rc.train.eps);
        get(t, "steps", rc.train.steps);
        get(t, "pretrain_steps", rc.train.pretrain_steps);
        get(t, "checkpoint_interval", rc.train.checkpoint_interval);
        get(t, "seed", rc.train.seed);
        get(t, "freeze_style_encoder", rc.train.freeze_style_encoder);
    }
    if (j.contains("inference")) {
        const auto& i = j["inference"];
        get(i, "n", rc.n);
        get(i, "allow_self_match", rc.allow_self_match);
        get(i, "threads", rc.threads);
    }
}

json encoder_echo(const EncoderConfig& e) {
    json j;
    j["speech_dim"] = e.speech_dim;
    j["text_dim"] = e.text_dim;
    j["hidden"] = e.hidden;
    j["style_dim"] = e.style_dim;
    j["n_tokens"] = e.n_tokens;
    j["dropout"] = e.dropout;
    return j;
}

json config_echo(const RunConfig& rc) {
    json j;
    j["encoder"] = encoder_echo(rc.train.encoder);
    json t;
    t["k"] = rc.train.k;
    t["lambda"] = rc.train.lambda;
    t["lr"] = rc.train.lr;
    t["beta1"] = rc.train.beta1;
    t["beta2"] = rc.train.beta2;
    t["eps"] = rc.train.eps;
    t["steps"] = rc.train.steps;
    t["pretrain_steps"] = rc.train.pretrain_steps;
    t["checkpoint_interval"] = rc.train.checkpoint_interval;
    t["seed"] = rc.train.seed;
    t["freeze_style_encoder"] = rc.train.freeze_style_encoder;
    j["train"] = t;
    json i;
    i["n"] = rc.n;
    i["allow_self_match"] = rc.allow_self_match;
    i["threads"] = rc.threads;
    j["inference"] = i;
    return j;
}

void write_json(const json& j, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) fail(ErrCode::io, "cannot write " + path);
    os << j.dump(2) << '\n';
    if (!os) fail(ErrCode::io, "write failed for " + path);
}

std::string default_report_dir(const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    if (const char* env = std::getenv("CALM_REPORT_DIR"); env != nullptr && *env != '\0')
        return env;
    return ".";
}

std::string derive_test_path(const std::string& train_path) {
    fs::path p(train_path);
    fs::path stem = p.stem();
    stem += "_test";
    stem += p.extension();
    return (p.parent_path() / stem).string();
}

// ---- gen-data ----

int cmd_gen_data(const SynthSpec& spec, std::size_t test_per_cluster, std::string out,
                 std::string test_out) {
    SynthSpec full = spec;
    full.items_per_cluster = spec.items_per_cluster + test_per_cluster;
    full.validate();

    const auto items = generate_synthetic(full);
    Dataset train, test;
    split_synthetic(items, spec.items_per_cluster, train, test);

    if (const auto dir = fs::path(out).parent_path(); !dir.empty())
        fs::create_directories(dir);
    save_dataset(train, out);
    std::fprintf(stderr, "wrote %zu train items to %s\n", train.size(), out.c_str());

    if (test_per_cluster > 0) {
        if (test_out.empty()) test_out = derive_test_path(out);
        save_dataset(test, test_out);
        std::fprintf(stderr, "wrote %zu test items to %s\n", test.size(), test_out.c_str());
    }

    json echo;
    echo["n_clusters"] = full.n_clusters;
    echo["items_per_cluster"] = spec.items_per_cluster;
    echo["test_per_cluster"] = test_per_cluster;
    echo["speech_dim"] = full.speech_dim;
    echo["text_dim"] = full.text_dim;
    echo["confound_dims"] = full.confound_dims;
    echo["n_topics"] = full.n_topics;
    echo["style_noise"] = full.style_noise;
    echo["text_noise"] = full.text_noise;
    echo["confound_scale"] = full.confound_scale;
    echo["seed"] = full.seed;
    echo["train_items"] = train.size();
    echo["test_items"] = test.size();
    const auto spec_path = (fs::path(out).parent_path() / "spec.json").string();
    write_json(echo, spec_path.empty() ? "spec.json" : spec_path);

    std::printf("train=%zu test=%zu\n", train.size(), test.size());
    return 0;
}

// ---- train ----

// Verifies the analytic joint-loss gradient against central finite
// differences at the configured encoder dimensions (dropout off, K=2
// batches) before committing to a long run.
int run_grad_check(const RunConfig& rc, const Dataset& dataset) {
    const std::size_t k = 2;
    if (dataset.size() < 2 * k + 1)
        fail(ErrCode::dataset_too_small, "grad check needs at least 5 items");
    TrainConfig cfg = rc.train;
    cfg.encoder.dropout = 0.0;

    Rng rng(cfg.seed);
    EncoderParams params = init_params(cfg.encoder, rng);
    const Dataset subset(dataset.begin(), dataset.begin() + 2 * k + 1);
    const auto item_of = index_by_id(subset);
    StyleTable table;
    for (const auto& item : subset)
        table.add(item.id, style_encode(item.speech_frames, params.style));
    const ContrastiveBatch batch = make_batch(subset[0].id, table, k, rng);

    EncoderParams grads = zeros_like(params);
    joint_loss_and_grad(subset[0], batch, subset, item_of, params, table, cfg.lambda,
                        nullptr, nullptr, &grads);
    auto loss = [&](const Vec64& theta) {
        EncoderParams q = params;
        unflatten(theta, q);
        return joint_loss_and_grad(subset[0], batch, subset, item_of, q, table,
                                   cfg.lambda, nullptr, nullptr, nullptr);
    };
    const Vec64 fd = finite_diff_grad(loss, flatten(params), 1e-4);
    const double err = max_relative_error(flatten(grads), fd);
    std::printf("grad-check max relative error %.3e over %zu parameters (%s)\n", err,
                flatten(params).size(), err < 1e-3 ? "ok" : "FAILED");
    return err < 1e-3 ? 0 : 4;
}

int cmd_train(const RunConfig& rc, const std::string& dataset_path,
              const std::string& out_dir, bool grad_check) {
    rc.train.validate();
    if (!fs::exists(dataset_path))
        fail(ErrCode::io, "dataset not found: " + dataset_path);
    const Dataset dataset = load_dataset(dataset_path);
    std::fprintf(stderr, "loaded %zu items from %s\n", dataset.size(), dataset_path.c_str());

    if (grad_check) return run_grad_check(rc, dataset);

    const TrainResult result = train_loop(dataset, rc.train, out_dir);

    json echo = config_echo(rc);
    echo["dataset"] = dataset_path;
    echo["out_dir"] = out_dir;
    write_json(echo, (fs::path(out_dir) / "run_config.json").string());

    if (result.stats.empty()) {
        std::printf("steps=0 checkpoint=%s\n", result.checkpoint_path.c_str());
    } else {
        const StatsRecord& last = result.stats.back();
        std::printf("steps=%zu l_calm=%.6f l_tts_proxy=%.6f l_total=%.6f checkpoint=%s\n",
                    result.stats.size(), last.l_calm, last.l_tts_proxy, last.l_total,
                    result.checkpoint_path.c_str());
    }
    return 0;
}

// ---- index ----

int cmd_index(const std::string& dataset_path, const std::string& checkpoint_path,
              const std::string& out_path) {
    const Dataset dataset = load_dataset(dataset_path);
    const RetrievalIndex index = build_index(dataset, checkpoint_path);
    if (const auto dir = fs::path(out_path).parent_path(); !dir.empty())
        fs::create_directories(dir);
    save_index(index, out_path);
    std::printf("indexed %zu items (fingerprint %s) -> %s\n", index.entries.size(),
                fingerprint_hex(index.encoder_fingerprint).c_str(), out_path.c_str());
    return 0;
}

// ---- retrieve ----

std::vector<Vec64> load_query_tokens(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail(ErrCode::io, "cannot open query file " + path);
    json j;
    try {
        j = json::parse(is);
    } catch (const std::exception& e) {
        fail(ErrCode::parse_error, std::string("query file: ") + e.what());
    }
    if (!j.contains("text_tokens"))
        fail(ErrCode::parse_error, "query file needs a text_tokens field");
    const auto rows = j["text_tokens"].get<std::vector<Vec64>>();
    if (rows.empty()) fail(ErrCode::empty_sequence, "query has no tokens");
    return rows;
}

int cmd_retrieve(const RunConfig& rc, const std::string& index_path,
                 const std::string& checkpoint_path, const std::string& dataset_path,
                 const std::string& query_id, const std::string& query_file,
                 const std::string& out_path) {
    const RetrievalIndex index = load_index(index_path);
    verify_fingerprint(index, checkpoint_path);
    const EncoderParams params = load_checkpoint(checkpoint_path);

    std::vector<Vec64> tokens;
    std::string self_id;
    if (!query_file.empty()) {
        tokens = load_query_tokens(query_file);
    } else {
        if (dataset_path.empty() || query_id.empty())
            fail(ErrCode::bad_argument, "need either --query-file or --dataset with --id");
        const Dataset dataset = load_dataset(dataset_path);
        const auto by_id = index_by_id(dataset);
        const auto it = by_id.find(query_id);
        if (it == by_id.end())
            fail(ErrCode::anchor_missing, "id '" + query_id + "' not in " + dataset_path);
        tokens = dataset[it->second].text_tokens;
        self_id = query_id;
    }

    const Vec64 t0 = text_encode(tokens, params.ling, Mode::eval);
    const std::string* exclude =
        (!rc.allow_self_match && !self_id.empty()) ? &self_id : nullptr;
    const ReferenceSet refs = query_top_n(t0, index, rc.n, exclude);
    const SummaryResult summary = summarize(refs, t0);

    for (std::size_t i = 0; i < refs.ids.size(); ++i)
        std::printf("%s\t%.17g\n", refs.ids[i].c_str(), refs.sims[i]);

    if (!out_path.empty()) {
        json j;
        j["ids"] = refs.ids;
        j["sims"] = refs.sims;
        j["weights"] = summary.weights;
        j["final_style_embedding"] = summary.final_embedding;
        j["checkpoint_fingerprint"] = fingerprint_hex(index.encoder_fingerprint);
        write_json(j, out_path);
        std::fprintf(stderr, "wrote summary to %s\n", out_path.c_str());
    }
    return 0;
}

// ---- eval ----

int cmd_eval(const RunConfig& rc, const std::string& index_path,
             const std::string& checkpoint_path, const std::string& test_path,
             const std::string& dataset_path, const std::string& report_dir_flag) {
    const RetrievalIndex index = load_index(index_path);
    verify_fingerprint(index, checkpoint_path);
    const EncoderParams params = load_checkpoint(checkpoint_path);
    const Dataset test = load_dataset(test_path);
    const Dataset corpus = load_dataset(dataset_path);
    const ControlIndex control = build_control_index(corpus, index);

    EvalOptions opt;
    opt.allow_self_match = rc.allow_self_match;
    opt.threads = rc.threads;

    const std::string report_dir = default_report_dir(report_dir_flag);
    fs::create_directories(report_dir);

    const double calm_sim = style_similarity_eval(test, index, params, rc.n, opt);
    const double control_sim = control_similarity_eval(test, control, params, rc.n, opt);

    json summary;
    summary["n"] = rc.n;
    summary["test_items"] = test.size();
    summary["index_items"] = index.entries.size();
    summary["checkpoint_fingerprint"] = fingerprint_hex(index.encoder_fingerprint);

    // Precision needs labels; mirror the unlabeled-corpus case by reporting
    // null instead of failing the whole evaluation.
    bool labelled = true;
    for (const auto& t : test)
        if (!t.label) labelled = false;
    for (const auto& e : index.entries)
        if (!e.label) labelled = false;

    json calm_block, control_block;
    if (labelled) {
        const PrecisionReport calm_prec = precision_eval(test, index, params, rc.n, opt);
        const PrecisionReport control_prec =
            control_precision_eval(test, control, rc.n, opt);
        write_precision_csv(calm_prec, (fs::path(report_dir) / "precision.csv").string());
        write_precision_csv(control_prec,
                            (fs::path(report_dir) / "precision_control.csv").string());
        calm_block["mean_precision"] = calm_prec.mean_precision;
        control_block["mean_precision"] = control_prec.mean_precision;
        std::printf("precision@%zu calm=%.4f control=%.4f\n", rc.n,
                    calm_prec.mean_precision, control_prec.mean_precision);
    } else {
        calm_block["mean_precision"] = nullptr;
        control_block["mean_precision"] = nullptr;
        std::fprintf(stderr, "unlabeled items present; precision not computed\n");
    }
    calm_block["mean_style_similarity"] = calm_sim;
    control_block["mean_style_similarity"] = control_sim;
    summary["calm"] = calm_block;
    summary["control"] = control_block;
    summary["config"] = config_echo(rc);
    write_json(summary, (fs::path(report_dir) / "summary.json").string());

    std::printf("similarity@%zu calm=%.4f control=%.4f\n", rc.n, calm_sim, control_sim);
    return 0;
}

// ---- sweep ----

int cmd_sweep(const RunConfig& rc, const std::string& index_path,
              const std::string& checkpoint_path, const std::string& test_path,
              const std::vector<std::size_t>& n_values, const std::string& report_dir_flag) {
    const RetrievalIndex index = load_index(index_path);
    verify_fingerprint(index, checkpoint_path);
    const EncoderParams params = load_checkpoint(checkpoint_path);
    const Dataset test = load_dataset(test_path);

    EvalOptions opt;
    opt.allow_self_match = rc.allow_self_match;
    opt.threads = rc.threads;

    const SweepCurve curve = n_sweep(test, index, params, n_values, opt);
    const std::string report_dir = default_report_dir(report_dir_flag);
    fs::create_directories(report_dir);
    write_sweep_csv(curve, (fs::path(report_dir) / "sweep.csv").string());

    json meta;
    meta["n_values"] = n_values;
    meta["test_items"] = test.size();
    meta["checkpoint_fingerprint"] = fingerprint_hex(index.encoder_fingerprint);
    json points = json::array();
    for (const auto& p : curve.points) {
        json e;
        e["n"] = p.n;
        e["mean_similarity"] = p.mean_similarity;
        points.push_back(e);
    }
    meta["points"] = points;
    meta["config"] = config_echo(rc);
    write_json(meta, (fs::path(report_dir) / "sweep_summary.json").string());

    for (const auto& p : curve.points)
        std::printf("%zu,%.17g\n", p.n, p.mean_similarity);
    return 0;
}

std::vector<std::size_t> parse_n_values(const std::string& csv) {
    std::vector<std::size_t> out;
    std::string token;
    for (char c : csv + ",") {
        if (c == ',') {
            if (!token.empty()) {
                try {
                    out.push_back(std::stoull(token));
                } catch (const std::exception&) {
                    fail(ErrCode::bad_argument, "bad N value '" + token + "'");
                }
                token.clear();
            }
        } else {
            token += c;
        }
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contrastive style-retrieval engine"};
    app.require_subcommand(1);

    RunConfig rc;
    // honor --config before flag overrides
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--config") {
            try {
                apply_config_file(rc, argv[i + 1]);
            } catch (const Error& e) {
                std::fprintf(stderr, "error: %s\n", e.what());
                return exit_code_for(e.code());
            }
            break;
        }
    }
    std::string config_path;

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic clustered corpus");
    SynthSpec spec;
    std::size_t test_per_cluster = 10;
    std::string gen_out, gen_test_out;
    gen->add_option("--out", gen_out, "Training JSONL path")->required();
    gen->add_option("--test-out", gen_test_out, "Held-out JSONL path");
    gen->add_option("--clusters", spec.n_clusters, "Style clusters");
    gen->add_option("--per-cluster", spec.items_per_cluster, "Training items per cluster");
    gen->add_option("--test-per-cluster", test_per_cluster, "Held-out items per cluster");
    gen->add_option("--speech-dim", spec.speech_dim, "Frame feature width");
    gen->add_option("--text-dim", spec.text_dim, "Token feature width");
    gen->add_option("--confound-dims", spec.confound_dims, "Token dims carrying the topic");
    gen->add_option("--topics", spec.n_topics, "Topic count");
    gen->add_option("--style-noise", spec.style_noise, "Frame noise sigma");
    gen->add_option("--text-noise", spec.text_noise, "Token noise sigma");
    gen->add_option("--confound-scale", spec.confound_scale, "Topic signal amplitude");
    gen->add_option("--seed", spec.seed, "Generator seed");

    // train
    auto* train = app.add_subcommand("train", "Pre-train, sample, and jointly train");
    std::string train_dataset, train_out_dir;
    bool grad_check = false;
    train->add_option("--config", config_path, "JSON config file");
    train->add_option("--dataset", train_dataset, "Training JSONL")->required();
    train->add_option("--out-dir", train_out_dir, "Output directory")->required();
    train->add_flag("--grad-check", grad_check,
                    "Verify analytic gradients against finite differences and exit");
    train->add_option("--k", rc.train.k, "References per batch half");
    train->add_option("--lambda", rc.train.lambda, "Contrastive loss weight");
    train->add_option("--lr", rc.train.lr, "Adam learning rate");
    train->add_option("--steps", rc.train.steps, "Joint training steps");
    train->add_option("--pretrain-steps", rc.train.pretrain_steps, "Style pre-training steps");
    train->add_option("--checkpoint-interval", rc.train.checkpoint_interval,
                      "Steps between periodic checkpoints (0 = none)");
    train->add_option("--seed", rc.train.seed, "Run seed");
    train->add_flag("--freeze-style-encoder", rc.train.freeze_style_encoder,
                    "Keep the style encoder at its pre-trained state");
    train->add_option("--speech-dim", rc.train.encoder.speech_dim, "Frame feature width");
    train->add_option("--text-dim", rc.train.encoder.text_dim, "Token feature width");
    train->add_option("--hidden", rc.train.encoder.hidden, "GRU hidden size");
    train->add_option("--style-dim", rc.train.encoder.style_dim, "Embedding width");
    train->add_option("--n-tokens", rc.train.encoder.n_tokens, "Style token bank rows");
    train->add_option("--dropout", rc.train.encoder.dropout, "Dropout rate");

    // index
    auto* index_cmd = app.add_subcommand("index", "Build a retrieval index");
    std::string idx_dataset, idx_checkpoint, idx_out;
    index_cmd->add_option("--dataset", idx_dataset, "Corpus JSONL")->required();
    index_cmd->add_option("--checkpoint", idx_checkpoint, "Encoder checkpoint")->required();
    index_cmd->add_option("--out", idx_out, "Index output path")->required();

    // retrieve
    auto* retrieve = app.add_subcommand("retrieve", "Top-N references for one text");
    std::string r_index, r_checkpoint, r_dataset, r_id, r_query, r_out;
    retrieve->add_option("--config", config_path, "JSON config file");
    retrieve->add_option("--index", r_index, "Index file")->required();
    retrieve->add_option("--checkpoint", r_checkpoint, "Encoder checkpoint")->required();
    retrieve->add_option("--dataset", r_dataset, "Corpus JSONL holding the query text");
    retrieve->add_option("--id", r_id, "Query item id inside --dataset");
    retrieve->add_option("--query-file", r_query, "JSON file with a text_tokens field");
    retrieve->add_option("--n", rc.n, "References to retrieve");
    retrieve->add_flag("--allow-self-match", rc.allow_self_match,
                       "Keep the query's own index entry");
    retrieve->add_option("--out", r_out, "Write the summary JSON here");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Precision and style-similarity reports");
    std::string e_index, e_checkpoint, e_test, e_dataset, e_report_dir;
    eval_cmd->add_option("--config", config_path, "JSON config file");
    eval_cmd->add_option("--index", e_index, "Index file")->required();
    eval_cmd->add_option("--checkpoint", e_checkpoint, "Encoder checkpoint")->required();
    eval_cmd->add_option("--test", e_test, "Held-out JSONL")->required();
    eval_cmd->add_option("--dataset", e_dataset, "Corpus JSONL (control baseline)")->required();
    eval_cmd->add_option("--n", rc.n, "References per query");
    eval_cmd->add_option("--report-dir", e_report_dir, "Report directory ($CALM_REPORT_DIR)");
    eval_cmd->add_option("--threads", rc.threads, "Worker threads");
    eval_cmd->add_flag("--allow-self-match", rc.allow_self_match,
                       "Keep query items that appear in the index");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "Similarity-vs-N curve");
    std::string s_index, s_checkpoint, s_test, s_report_dir;
    std::string s_n_values = "1,5,20,75,150,300,600";
    sweep->add_option("--config", config_path, "JSON config file");
    sweep->add_option("--index", s_index, "Index file")->required();
    sweep->add_option("--checkpoint", s_checkpoint, "Encoder checkpoint")->required();
    sweep->add_option("--test", s_test, "Held-out JSONL")->required();
    sweep->add_option("--n-values", s_n_values, "Comma-separated N values, increasing");
    sweep->add_option("--report-dir", s_report_dir, "Report directory ($CALM_REPORT_DIR)");
    sweep->add_option("--threads", rc.threads, "Worker threads");
    sweep->add_flag("--allow-self-match", rc.allow_self_match,
                    "Keep query items that appear in the index");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }

    try {
        if (gen->parsed())
            return cmd_gen_data(spec, test_per_cluster, gen_out, gen_test_out);
        if (train->parsed()) return cmd_train(rc, train_dataset, train_out_dir, grad_check);
        if (index_cmd->parsed()) return cmd_index(idx_dataset, idx_checkpoint, idx_out);
        if (retrieve->parsed())
            return cmd_retrieve(rc, r_index, r_checkpoint, r_dataset, r_id, r_query, r_out);
        if (eval_cmd->parsed())
            return cmd_eval(rc, e_index, e_checkpoint, e_test, e_dataset, e_report_dir);
        if (sweep->parsed())
            return cmd_sweep(rc, s_index, s_checkpoint, s_test, parse_n_values(s_n_values),
                             s_report_dir);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
