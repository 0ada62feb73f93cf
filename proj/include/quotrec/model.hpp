#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "quotrec/data.hpp"
#include "quotrec/layers.hpp"

namespace quotrec {

enum class TurnEncoderKind { transformer, bigru };

struct ModelConfig {
    int dim = 200;    // embedding / transformer width
    int hidden = 200; // Bi-GRU hidden per direction
    int n_layers = 2;
    int n_heads = 3;
    int d_ff = 400;
    int max_turn_len = 50;
    double dropout = 0.1;
    bool use_M = true;
    bool use_map_loss = true;
    TurnEncoderKind turn_encoder = TurnEncoderKind::transformer;
};

// Full architecture: per-turn encoder -> Bi-GRU over turn representations on
// the conversation side, a separate (unshared) encoder on the quotation side,
// mapping matrix M and the output layer over [z; h_c; M r_query].
class QuoteRecModel {
public:
    QuoteRecModel(const ModelConfig& cfg, int vocab_size, int n_q, Rng& rng);

    ModelConfig cfg;
    int vocab_size = 0;
    int n_q = 0;

    EmbeddingTable conv_embed, quote_embed;
    std::optional<TransformerEncoder> conv_encoder, quote_encoder;
    std::optional<BiGruTurnEncoder> conv_bigru_encoder, quote_bigru_encoder;
    BiGru bigru; // over turn representations
    Tensor M;    // dim x dim, absent under the W/O-M ablation
    Tensor W;    // n_q x (n_q + 2*hidden + dim)
    Tensor b;    // n_q

    ParamRegistry params;

    // turn representation + (transformer only) attention maps
    TurnEncoding run_turn_encoder(const std::vector<int>& tokens, bool quote_side,
                                  bool training, Rng& rng) const;
};

struct ConvEncoding {
    Tensor h_c;     // 2H conversation representation
    Tensor r_query; // query-turn representation
    std::vector<TurnEncoding> turns;
};

ConvEncoding encode_conversation(const QuoteRecModel& model,
                                 const std::vector<std::vector<int>>& turns, bool training,
                                 Rng& rng);

// quotation matrix Q, one row per quotation
Tensor encode_quotations(const QuoteRecModel& model, const QuotationSet& quotes, bool training,
                         Rng& rng);

struct Scores {
    Tensor mapped; // M r_query (or r_query when use_M is off)
    Tensor z;      // Q * mapped
    Tensor logits; // W [z; h_c; mapped] + b
};

Scores score(const QuoteRecModel& model, const Tensor& h_c, const Tensor& r_query,
             const Tensor& Q);

struct RankedResult {
    std::vector<int> ids;      // descending probability, ties by ascending id
    std::vector<double> probs; // aligned with ids
};

// eval-mode forward + ranking; top_n clamped to n_q
RankedResult predict(const QuoteRecModel& model, const std::vector<std::vector<int>>& turns,
                     const Tensor& Q, int top_n);

RankedResult rank_logits(const std::vector<double>& logits, int top_n);

} // namespace quotrec
