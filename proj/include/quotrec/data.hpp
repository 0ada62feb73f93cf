#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "quotrec/common.hpp"
#include "quotrec/layers.hpp"
#include "quotrec/rng.hpp"

namespace quotrec {

// lowercase, whitespace/punctuation split; CJK codepoints become single-char
// tokens
std::vector<std::string> tokenize(const std::string& text);

struct Vocabulary {
    static constexpr int kPad = 0;
    static constexpr int kCls = 1;
    static constexpr int kUnk = 2;

    std::unordered_map<std::string, int> to_id;
    std::vector<std::string> tokens; // index = id; reserved ids 0..2
    int min_count = 2;

    Vocabulary();
    int id_of(const std::string& tok) const {
        auto it = to_id.find(tok);
        return it == to_id.end() ? kUnk : it->second;
    }
    int size() const { return static_cast<int>(tokens.size()); }
    int add(const std::string& tok); // idempotent
};

struct QuotationSet {
    std::vector<std::string> texts;
    std::vector<std::vector<int>> token_ids;
    int size() const { return static_cast<int>(texts.size()); }
};

struct Conversation {
    std::string id;
    std::vector<std::vector<int>> turns; // token ids; last turn is the query
    int gold = -1;                       // 0-based quotation id, -1 = unlabeled
};

struct RawConversation {
    std::string id;
    std::vector<std::string> turns;
    std::optional<std::string> quote;
};

struct RawCorpus {
    std::vector<RawConversation> train, valid, test;
    std::vector<std::string> quotations;
};

struct Corpus {
    std::vector<Conversation> train, valid, test;
    QuotationSet quotes;
    Vocabulary vocab;
};

// Directory layout: quotations.txt + {train,valid,test}.jsonl, one JSON record
// per line: {"id": ..., "turns": [...], "quote": text-or-null}.
RawCorpus load_raw_corpus(const std::string& dir);
void write_raw_corpus(const RawCorpus& raw, const std::string& dir);

// Vocabulary is built from the train split plus the quotation texts
// (min_count applies to conversation tokens only). Pass an existing
// vocabulary to tokenize under a checkpoint's vocab instead.
Corpus load_corpus(const std::string& dir, const Vocabulary* fixed_vocab = nullptr);

Conversation tokenize_conversation(const RawConversation& raw, const Vocabulary& vocab,
                                   const QuotationSet& quotes);

struct Batch {
    std::vector<Conversation> convs; // turns padded to the batch max turn length
};

std::vector<Batch> make_batches(const std::vector<Conversation>& convs, int batch_size);

// Overwrites vocab rows found in a "token v1 .. vdim" text file; returns the
// covered fraction of non-reserved vocab entries.
double load_pretrained_embeddings(const std::string& path, const Vocabulary& vocab,
                                  EmbeddingTable& table);

struct SynthParams {
    std::uint64_t seed = 42;
    int n_q = 10;
    int n_convs = 500;
    int vocab_size = 300; // filler word pool size
    double noise = 0.1;
    int topic_size = 8;
    int query_len = 8;
    int context_len = 6;
    int quote_len = 6;
};

// Writes quotations.txt, the three jsonl splits (80/10/10) and topics.json
// (quote id -> generating topic word set). Deterministic in the seed.
void synth_corpus(const SynthParams& p, const std::string& out_dir);

// topic word sets as written by synth_corpus
std::vector<std::vector<std::string>> load_topics(const std::string& dir);

} // namespace quotrec
