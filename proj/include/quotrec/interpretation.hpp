#pragma once

#include <string>
#include <utility>
#include <vector>

#include "quotrec/data.hpp"
#include "quotrec/model.hpp"

namespace quotrec {

enum class HeadAggregation { mean, max };

struct InterpretOptions {
    bool use_transform = true; // history reps are M r^t (quotation space)
    int layer = -1;            // attention layer for word scores, -1 = last
    HeadAggregation heads = HeadAggregation::mean;
    std::vector<std::string> stopwords;
    int top_k = 8;
};

struct HistorySet {
    int quote_id = -1;
    std::vector<const Conversation*> members; // training convs with this gold
};

std::vector<HistorySet> build_history(const std::vector<Conversation>& train, int n_q);

struct QueryAttention {
    std::vector<std::string> conv_ids;
    std::vector<double> weights; // sums to 1
};

// quotation-aware attention: softmax over dot(r^q_k, rep of each history
// query turn), rep transformed by M when use_transform
QueryAttention query_attention(const QuoteRecModel& model, const Tensor& quote_repr,
                               const HistorySet& history, bool use_transform = true);

// per-real-token weights from the turn encoder's [CLS] attention row,
// head-aggregated and renormalized over non-CLS non-PAD positions
std::vector<double> word_scores(const QuoteRecModel& model, const std::vector<int>& turn_tokens,
                                int layer = -1,
                                HeadAggregation agg = HeadAggregation::mean);

struct IndicativeWords {
    int quote_id = -1;
    std::string quote_text;
    std::vector<std::pair<std::string, double>> words; // descending score
    QueryAttention attention;
};

// weighted sum of word-level scores across the quotation's history queries;
// ties broken lexicographically
IndicativeWords indicative_words(const QuoteRecModel& model, const Tensor& Q,
                                 const Corpus& corpus, int quote_id,
                                 const InterpretOptions& opt = {});

std::string indicative_words_to_json(const IndicativeWords& iw);
std::string heat_report(const IndicativeWords& iw);

} // namespace quotrec
