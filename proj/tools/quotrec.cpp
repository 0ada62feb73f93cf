// quotrec: train / evaluate / recommend / interpret / gradcheck / synth
// command-line front end.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "quotrec/checkpoint.hpp"
#include "quotrec/data.hpp"
#include "quotrec/evaluation.hpp"
#include "quotrec/gradcheck.hpp"
#include "quotrec/interpretation.hpp"
#include "quotrec/training.hpp"

using json = nlohmann::json;
using namespace quotrec;

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitCorpusMismatch = 4;
constexpr int kExitEmptyConversation = 5;
constexpr int kExitNoHistory = 6;

void apply_ablation(TrainConfig& cfg, const std::string& ablate) {
    if (ablate.empty()) return;
    if (ablate == "no-M") {
        cfg.model.use_M = false;
    } else if (ablate == "no-map-loss") {
        cfg.model.use_map_loss = false;
    } else if (ablate == "no-transformer") {
        cfg.model.turn_encoder = TurnEncoderKind::bigru;
    } else {
        throw ConfigError("unknown ablation: " + ablate +
                          " (expected no-M | no-map-loss | no-transformer)");
    }
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_path, const std::string& ablate, long long seed) {
    TrainConfig cfg;
    try {
        if (!config_path.empty()) cfg = load_train_config(config_path);
        apply_ablation(cfg, ablate);
        if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
        cfg.validate();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfigError;
    }

    const Corpus corpus = load_corpus(data_dir);
    std::ofstream log(out_path + ".log.jsonl");
    try {
        const auto t0 = std::chrono::steady_clock::now();
        TrainResult result = train(cfg, corpus, &log);
        const auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const EvalReport valid = evaluate_model(*result.model, corpus.valid, corpus.quotes);
        CheckpointMetrics metrics;
        metrics.valid_map = valid.map;
        metrics.valid_p1 = valid.p1;
        metrics.valid_p3 = valid.p3;
        metrics.valid_ndcg5 = valid.ndcg5;
        metrics.best_epoch = result.best_epoch;
        save_checkpoint(out_path, *result.model, cfg, corpus.vocab, corpus.quotes, metrics);
        std::cout << "trained " << result.log.size() << " epochs in " << secs
                  << " s, best epoch " << result.best_epoch << " (valid MAP "
                  << result.best_valid_map << ")\n"
                  << "checkpoint written to " << out_path << "\n";
    } catch (const TrainingDiverged& e) {
        std::cerr << "training diverged: " << e.what() << "\n";
        return kExitDiverged;
    }
    return 0;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& data_dir,
                 const std::string& split, const std::string& ranks_out) {
    const LoadedCheckpoint ck = load_checkpoint(ckpt_path);
    const Corpus corpus = load_corpus(data_dir, &ck.vocab);
    if (corpus.quotes.texts != ck.quotes.texts) {
        std::cerr << "corpus quotation list does not match checkpoint\n";
        return kExitCorpusMismatch;
    }
    const std::vector<Conversation>* convs = nullptr;
    if (split == "train")
        convs = &corpus.train;
    else if (split == "valid")
        convs = &corpus.valid;
    else if (split == "test")
        convs = &corpus.test;
    else {
        std::cerr << "unknown split: " << split << "\n";
        return kExitConfigError;
    }
    const EvalReport r = evaluate_model(*ck.model, *convs, corpus.quotes);
    std::printf("%-8s %8s %8s %8s %8s\n", "split", "MAP", "P@1", "P@3", "nDCG@5");
    std::printf("%-8s %8.4f %8.4f %8.4f %8.4f\n", split.c_str(), r.map, r.p1, r.p3, r.ndcg5);
    if (!ranks_out.empty()) {
        std::ofstream out(ranks_out);
        for (std::size_t i = 0; i < r.ranks.size(); ++i) {
            json j;
            j["id"] = (*convs)[i].id;
            j["rank"] = r.ranks[i];
            out << j.dump() << "\n";
        }
        std::cout << "per-conversation ranks written to " << ranks_out << "\n";
    }
    return 0;
}

int cmd_recommend(const std::string& ckpt_path, const std::string& conv_path, int top_n) {
    const LoadedCheckpoint ck = load_checkpoint(ckpt_path);
    std::ifstream in(conv_path);
    if (!in) throw DataError("cannot open conversation file: " + conv_path);
    std::string line;
    std::getline(in, line);
    if (line.empty()) {
        std::cerr << "empty conversation file\n";
        return kExitEmptyConversation;
    }
    RawConversation raw;
    try {
        json j = json::parse(line);
        raw.id = j.value("id", "query");
        raw.turns = j.at("turns").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        std::cerr << "bad conversation record: " << e.what() << "\n";
        return kExitEmptyConversation;
    }
    if (raw.turns.empty()) {
        std::cerr << "conversation has no turns\n";
        return kExitEmptyConversation;
    }
    const Conversation conv = tokenize_conversation(raw, ck.vocab, ck.quotes);
    Rng rng(0);
    const Tensor Q = encode_quotations(*ck.model, ck.quotes, false, rng);
    const RankedResult r = predict(*ck.model, conv.turns, Q, top_n);
    for (std::size_t i = 0; i < r.ids.size(); ++i)
        std::printf("%2zu. [%3d] p=%.6f  %s\n", i + 1, r.ids[i], r.probs[i],
                    ck.quotes.texts[static_cast<std::size_t>(r.ids[i])].c_str());
    return 0;
}

int cmd_interpret(const std::string& ckpt_path, const std::string& data_dir, int quote_id,
                  bool all, int top_k) {
    const LoadedCheckpoint ck = load_checkpoint(ckpt_path);
    const Corpus corpus = load_corpus(data_dir, &ck.vocab);
    if (corpus.quotes.texts != ck.quotes.texts) {
        std::cerr << "corpus quotation list does not match checkpoint\n";
        return kExitCorpusMismatch;
    }
    Rng rng(0);
    const Tensor Q = encode_quotations(*ck.model, corpus.quotes, false, rng);
    const auto history = build_history(corpus.train, corpus.quotes.size());

    std::vector<int> targets;
    if (all) {
        for (const auto& h : history)
            if (!h.members.empty()) targets.push_back(h.quote_id);
    } else {
        if (quote_id < 0 || quote_id >= corpus.quotes.size()) {
            std::cerr << "quote id out of range\n";
            return kExitConfigError;
        }
        if (history[static_cast<std::size_t>(quote_id)].members.empty()) {
            std::cerr << "no history queries for quotation " << quote_id << "\n";
            return kExitNoHistory;
        }
        targets.push_back(quote_id);
    }
    InterpretOptions opt;
    opt.top_k = top_k;
    for (int id : targets) {
        const IndicativeWords iw = indicative_words(*ck.model, Q, corpus, id, opt);
        std::cout << indicative_words_to_json(iw) << "\n";
        std::cout << heat_report(iw);
    }
    return 0;
}

int cmd_gradcheck(long long seed) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto results = run_gradcheck_suites(seed < 0 ? 1234 : static_cast<std::uint64_t>(seed));
    bool all_pass = true;
    std::printf("%-22s %14s  %s\n", "op", "max_rel_err", "status");
    for (const auto& r : results) {
        std::printf("%-22s %14.3e  %s\n", r.name.c_str(), r.max_rel_err,
                    r.pass ? "pass" : "FAIL");
        all_pass = all_pass && r.pass;
    }
    const auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("ran %zu suites in %.1f s\n", results.size(), secs);
    return all_pass ? 0 : 1;
}

int cmd_synth(const std::string& out_dir, int n_q, int n_convs, int vocab_size, double noise,
              long long seed) {
    SynthParams p;
    p.n_q = n_q;
    p.n_convs = n_convs;
    p.vocab_size = vocab_size;
    p.noise = noise;
    if (seed >= 0) p.seed = static_cast<std::uint64_t>(seed);
    synth_corpus(p, out_dir);
    std::cout << "synthetic corpus written to " << out_dir << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"conversational quotation recommendation"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_path, ablate, ckpt_path, conv_path, split = "test";
    std::string ranks_out;
    long long seed = -1;
    int top_n = 5, top_k = 8, quote_id = -1;
    bool all_quotes = false;
    int n_q = 10, n_convs = 500, vocab_size = 300;
    double noise = 0.1;

    auto* train_cmd = app.add_subcommand("train", "train a model");
    train_cmd->add_option("--config", config_path, "JSON config file");
    train_cmd->add_option("--data", data_dir, "corpus directory")->required();
    train_cmd->add_option("--out", out_path, "checkpoint output path")->required();
    train_cmd->add_option("--ablate", ablate, "no-M | no-map-loss | no-transformer");
    train_cmd->add_option("--seed", seed, "RNG seed override");

    auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint");
    eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    eval_cmd->add_option("--data", data_dir, "corpus directory")->required();
    eval_cmd->add_option("--split", split, "train | valid | test");
    eval_cmd->add_option("--ranks-out", ranks_out, "write per-conversation ranks here");

    auto* rec_cmd = app.add_subcommand("recommend", "rank quotations for one conversation");
    rec_cmd->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    rec_cmd->add_option("--conv", conv_path, "conversation record (jsonl)")->required();
    rec_cmd->add_option("--top-n", top_n, "number of quotations to print");

    auto* int_cmd = app.add_subcommand("interpret", "indicative words per quotation");
    int_cmd->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    int_cmd->add_option("--data", data_dir, "corpus directory")->required();
    int_cmd->add_option("--quote", quote_id, "quotation id");
    int_cmd->add_flag("--all", all_quotes, "all quotations with history");
    int_cmd->add_option("--top-k", top_k, "indicative words per quotation");

    auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference checks for all layers");
    gc_cmd->add_option("--seed", seed, "RNG seed");

    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
    synth_cmd->add_option("--out", out_path, "output directory")->required();
    synth_cmd->add_option("--n-q", n_q, "number of quotations");
    synth_cmd->add_option("--n-convs", n_convs, "number of conversations");
    synth_cmd->add_option("--vocab-size", vocab_size, "filler vocabulary size");
    synth_cmd->add_option("--noise", noise, "query-turn noise fraction");
    synth_cmd->add_option("--seed", seed, "RNG seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) return cmd_train(config_path, data_dir, out_path, ablate, seed);
        if (eval_cmd->parsed()) return cmd_evaluate(ckpt_path, data_dir, split, ranks_out);
        if (rec_cmd->parsed()) return cmd_recommend(ckpt_path, conv_path, top_n);
        if (int_cmd->parsed())
            return cmd_interpret(ckpt_path, data_dir, quote_id, all_quotes, top_k);
        if (gc_cmd->parsed()) return cmd_gradcheck(seed);
        if (synth_cmd->parsed())
            return cmd_synth(out_path, n_q, n_convs, vocab_size, noise, seed);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
