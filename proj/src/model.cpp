#include "quotrec/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace quotrec {

QuoteRecModel::QuoteRecModel(const ModelConfig& cfg_, int vocab_size_, int n_q_, Rng& rng)
    : cfg(cfg_), vocab_size(vocab_size_), n_q(n_q_) {
    if (n_q < 2) throw ConfigError("model: n_q must be >= 2");
    conv_embed = EmbeddingTable(vocab_size, cfg.dim, rng);
    quote_embed = EmbeddingTable(vocab_size, cfg.dim, rng);
    if (cfg.turn_encoder == TurnEncoderKind::transformer) {
        conv_encoder.emplace(cfg.n_layers, cfg.n_heads, cfg.dim, cfg.d_ff, cfg.dropout, rng);
        quote_encoder.emplace(cfg.n_layers, cfg.n_heads, cfg.dim, cfg.d_ff, cfg.dropout, rng);
    } else {
        conv_bigru_encoder.emplace(cfg.dim, cfg.hidden, rng);
        quote_bigru_encoder.emplace(cfg.dim, cfg.hidden, rng);
    }
    bigru = BiGru(cfg.dim, cfg.hidden, rng);
    if (cfg.use_M) M = xavier_uniform(rng, cfg.dim, cfg.dim);
    const int feat = n_q + 2 * cfg.hidden + cfg.dim;
    W = xavier_uniform(rng, n_q, feat);
    b = Tensor::zeros({n_q});

    conv_embed.collect("conv_embed", params);
    quote_embed.collect("quote_embed", params);
    if (conv_encoder) conv_encoder->collect("conv_encoder", params);
    if (quote_encoder) quote_encoder->collect("quote_encoder", params);
    if (conv_bigru_encoder) conv_bigru_encoder->collect("conv_turn_bigru", params);
    if (quote_bigru_encoder) quote_bigru_encoder->collect("quote_turn_bigru", params);
    bigru.collect("bigru", params);
    if (cfg.use_M) params.add("M", M, Decay::full);
    params.add("W", W, Decay::full);
    params.add("b", b, Decay::none);
}

TurnEncoding QuoteRecModel::run_turn_encoder(const std::vector<int>& tokens, bool quote_side,
                                             bool training, Rng& rng) const {
    const EmbeddingTable& table = quote_side ? quote_embed : conv_embed;
    const EmbeddedTurn emb = embed_turn(table, tokens, cfg.max_turn_len);
    if (cfg.turn_encoder == TurnEncoderKind::transformer) {
        const TransformerEncoder& enc = quote_side ? *quote_encoder : *conv_encoder;
        return encode_turn(enc, emb.rows, emb.mask, training, rng);
    }
    const BiGruTurnEncoder& enc = quote_side ? *quote_bigru_encoder : *conv_bigru_encoder;
    TurnEncoding out;
    out.repr = encode_turn_bigru(enc, emb.rows, emb.mask);
    return out;
}

ConvEncoding encode_conversation(const QuoteRecModel& model,
                                 const std::vector<std::vector<int>>& turns, bool training,
                                 Rng& rng) {
    if (turns.empty()) throw ContractError("encode_conversation: conversation has no turns");
    ConvEncoding out;
    std::vector<Tensor> reps;
    reps.reserve(turns.size());
    for (const auto& t : turns) {
        TurnEncoding te = model.run_turn_encoder(t, /*quote_side=*/false, training, rng);
        reps.push_back(te.repr);
        out.turns.push_back(std::move(te));
    }
    out.r_query = reps.back();
    // dropout on turn representations entering the Bi-GRU; r_query itself is
    // used undropped by the mapping
    std::vector<Tensor> gru_in;
    gru_in.reserve(reps.size());
    for (const auto& r : reps)
        gru_in.push_back(dropout(r, model.cfg.dropout, training, rng));
    out.h_c = bigru_encode(model.bigru, stack_rows(gru_in)).final;
    return out;
}

Tensor encode_quotations(const QuoteRecModel& model, const QuotationSet& quotes, bool training,
                         Rng& rng) {
    if (quotes.size() < 2) throw ContractError("encode_quotations: need at least 2 quotations");
    std::vector<Tensor> rows;
    rows.reserve(static_cast<std::size_t>(quotes.size()));
    for (const auto& ids : quotes.token_ids)
        rows.push_back(model.run_turn_encoder(ids, /*quote_side=*/true, training, rng).repr);
    return stack_rows(rows);
}

Scores score(const QuoteRecModel& model, const Tensor& h_c, const Tensor& r_query,
             const Tensor& Q) {
    if (Q.dim(0) != model.n_q)
        throw DimensionError("score: Q has " + std::to_string(Q.dim(0)) + " rows but model has " +
                             std::to_string(model.n_q) + " quotations");
    Scores s;
    s.mapped = model.cfg.use_M ? matmul(model.M, r_query) : r_query;
    // dot products between layer-normed representations grow with dim; the
    // 1/sqrt(dim) temperature keeps relevance scores dimension-independent
    s.z = mulc(matmul(Q, s.mapped), 1.0 / std::sqrt(static_cast<double>(model.cfg.dim)));
    const Tensor feat = concat({s.z, h_c, s.mapped});
    s.logits = add(matmul(model.W, feat), model.b);
    return s;
}

RankedResult rank_logits(const std::vector<double>& logits, int top_n) {
    const int n = static_cast<int>(logits.size());
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        z += p[i];
    }
    for (double& v : p) v /= z;
    std::vector<int> ids(logits.size());
    std::iota(ids.begin(), ids.end(), 0);
    std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) { return p[static_cast<std::size_t>(a)] > p[static_cast<std::size_t>(b)]; });
    if (top_n > n || top_n < 0) top_n = n;
    RankedResult r;
    for (int i = 0; i < top_n; ++i) {
        r.ids.push_back(ids[static_cast<std::size_t>(i)]);
        r.probs.push_back(p[static_cast<std::size_t>(ids[static_cast<std::size_t>(i)])]);
    }
    return r;
}

RankedResult predict(const QuoteRecModel& model, const std::vector<std::vector<int>>& turns,
                     const Tensor& Q, int top_n) {
    Rng rng(0); // unused in eval mode (no dropout draws)
    const ConvEncoding enc = encode_conversation(model, turns, /*training=*/false, rng);
    const Scores s = score(model, enc.h_c, enc.r_query, Q);
    return rank_logits(s.logits.value(), top_n);
}

} // namespace quotrec
