#include "quotrec/interpretation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <json.hpp>

using json = nlohmann::json;

namespace quotrec {

std::vector<HistorySet> build_history(const std::vector<Conversation>& train, int n_q) {
    std::vector<HistorySet> out(static_cast<std::size_t>(n_q));
    for (int k = 0; k < n_q; ++k) out[static_cast<std::size_t>(k)].quote_id = k;
    for (const auto& c : train)
        if (c.gold >= 0 && c.gold < n_q) out[static_cast<std::size_t>(c.gold)].members.push_back(&c);
    return out;
}

QueryAttention query_attention(const QuoteRecModel& model, const Tensor& quote_repr,
                               const HistorySet& history, bool use_transform) {
    if (history.members.empty())
        throw Error("query_attention: no history queries for quotation " +
                    std::to_string(history.quote_id));
    Rng rng(0);
    std::vector<double> dots;
    QueryAttention out;
    for (const Conversation* c : history.members) {
        const TurnEncoding te =
            model.run_turn_encoder(c->turns.back(), /*quote_side=*/false, /*training=*/false, rng);
        Tensor rep = te.repr;
        if (use_transform && model.cfg.use_M) rep = matmul(model.M, rep);
        double dot = 0.0;
        for (int j = 0; j < rep.dim(0); ++j) dot += quote_repr.at(j) * rep.at(j);
        // same 1/sqrt(dim) temperature as scoring: keeps the attention from
        // collapsing onto one history query at large dims
        dots.push_back(dot / std::sqrt(static_cast<double>(model.cfg.dim)));
        out.conv_ids.push_back(c->id);
    }
    double m = dots[0];
    for (double d : dots) m = std::max(m, d);
    double z = 0.0;
    out.weights.resize(dots.size());
    for (std::size_t i = 0; i < dots.size(); ++i) {
        out.weights[i] = std::exp(dots[i] - m);
        z += out.weights[i];
    }
    for (double& w : out.weights) w /= z;
    return out;
}

std::vector<double> word_scores(const QuoteRecModel& model, const std::vector<int>& turn_tokens,
                                int layer, HeadAggregation agg) {
    if (model.cfg.turn_encoder != TurnEncoderKind::transformer)
        throw ConfigError("word_scores: requires the transformer turn encoder");
    if (model.cfg.n_layers == 0)
        throw ConfigError("word_scores: model has no attention layers");
    if (turn_tokens.empty()) throw ContractError("word_scores: empty turn");
    Rng rng(0);
    const TurnEncoding te =
        model.run_turn_encoder(turn_tokens, /*quote_side=*/false, /*training=*/false, rng);
    if (layer < 0) layer += static_cast<int>(te.attn.size());
    if (layer < 0 || layer >= static_cast<int>(te.attn.size()))
        throw ConfigError("word_scores: layer index out of range");
    const auto& heads = te.attn[static_cast<std::size_t>(layer)];
    const int len = heads[0].dim(1); // CLS + tokens (possibly truncated/padded)

    std::vector<double> cls_row(static_cast<std::size_t>(len), 0.0);
    for (std::size_t h = 0; h < heads.size(); ++h) {
        for (int j = 0; j < len; ++j) {
            const double a = heads[h].at(0, j);
            if (agg == HeadAggregation::mean)
                cls_row[static_cast<std::size_t>(j)] += a / static_cast<double>(heads.size());
            else
                cls_row[static_cast<std::size_t>(j)] = std::max(cls_row[static_cast<std::size_t>(j)], a);
        }
    }
    // keep real-token positions only (drop CLS and PAD), renormalize
    std::vector<double> out;
    double z = 0.0;
    for (int j = 1; j < len; ++j) {
        const int tok = j - 1 < static_cast<int>(turn_tokens.size()) ? turn_tokens[static_cast<std::size_t>(j - 1)] : Vocabulary::kPad;
        if (tok == Vocabulary::kPad) continue;
        out.push_back(cls_row[static_cast<std::size_t>(j)]);
        z += cls_row[static_cast<std::size_t>(j)];
    }
    if (z > 0.0)
        for (double& w : out) w /= z;
    return out;
}

IndicativeWords indicative_words(const QuoteRecModel& model, const Tensor& Q,
                                 const Corpus& corpus, int quote_id,
                                 const InterpretOptions& opt) {
    if (quote_id < 0 || quote_id >= corpus.quotes.size())
        throw ContractError("indicative_words: quote id " + std::to_string(quote_id) +
                            " out of range for " + std::to_string(corpus.quotes.size()) +
                            " quotations");
    const auto history = build_history(corpus.train, corpus.quotes.size());
    const HistorySet& hs = history[static_cast<std::size_t>(quote_id)];
    if (hs.members.empty())
        throw Error("indicative_words: no history for quotation " + std::to_string(quote_id));

    IndicativeWords out;
    out.quote_id = quote_id;
    out.quote_text = corpus.quotes.texts[static_cast<std::size_t>(quote_id)];
    out.attention = query_attention(model, slice_row(Q, quote_id), hs, opt.use_transform);

    std::map<std::string, double> acc;
    for (std::size_t i = 0; i < hs.members.size(); ++i) {
        const Conversation* c = hs.members[i];
        const std::vector<int>& query = c->turns.back();
        const std::vector<double> ws = word_scores(model, query, opt.layer, opt.heads);
        // word_scores covers the first min(len, max_turn_len) non-PAD tokens
        std::size_t wi = 0;
        for (int tok : query) {
            if (tok == Vocabulary::kPad) continue;
            if (wi >= ws.size()) break;
            const std::string& word = corpus.vocab.tokens[static_cast<std::size_t>(tok)];
            if (std::find(opt.stopwords.begin(), opt.stopwords.end(), word) ==
                opt.stopwords.end())
                acc[word] += out.attention.weights[i] * ws[wi];
            ++wi;
        }
    }

    std::vector<std::pair<std::string, double>> ranked(acc.begin(), acc.end());
    // descending score, lexicographic tie-break (map iteration is already
    // lexicographic; stable sort preserves it)
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    if (static_cast<int>(ranked.size()) > opt.top_k) ranked.resize(static_cast<std::size_t>(opt.top_k));
    out.words = std::move(ranked);
    return out;
}

std::string indicative_words_to_json(const IndicativeWords& iw) {
    json j;
    j["quote_id"] = iw.quote_id;
    j["quote_text"] = iw.quote_text;
    json words = json::array();
    for (const auto& [w, s] : iw.words) words.push_back({{"token", w}, {"score", s}});
    j["words"] = words;
    json qa = json::array();
    for (std::size_t i = 0; i < iw.attention.conv_ids.size(); ++i)
        qa.push_back({{"conv_id", iw.attention.conv_ids[i]}, {"a", iw.attention.weights[i]}});
    j["query_attention"] = qa;
    return j.dump();
}

std::string heat_report(const IndicativeWords& iw) {
    std::ostringstream os;
    os << "quotation " << iw.quote_id << ": " << iw.quote_text << "\n";
    os << "  history queries (" << iw.attention.conv_ids.size() << "):\n";
    for (std::size_t i = 0; i < iw.attention.conv_ids.size(); ++i) {
        os << "    " << iw.attention.conv_ids[i] << "  a=";
        os.precision(4);
        os << std::fixed << iw.attention.weights[i] << "\n";
    }
    os << "  indicative words:\n";
    for (const auto& [w, s] : iw.words) os << "    " << w << "  " << s << "\n";
    return os.str();
}

} // namespace quotrec
