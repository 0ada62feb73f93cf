#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "quotrec/rng.hpp"
#include "quotrec/tensor.hpp"

namespace quotrec {

// How a parameter participates in the L2 penalty.
enum class Decay {
    none,         // biases, layer-norm parameters
    full,         // weight matrices
    skip_pad_row, // embedding tables: PAD row excluded
};

struct ParamRegistry {
    struct Item {
        std::string name;
        Tensor tensor;
        Decay decay;
    };
    std::vector<Item> items;

    void add(std::string name, Tensor t, Decay decay) {
        t.set_requires_grad(true);
        items.push_back({std::move(name), std::move(t), decay});
    }
    const Tensor* find(const std::string& name) const {
        for (const auto& it : items)
            if (it.name == name) return &it.tensor;
        return nullptr;
    }
};

Tensor xavier_uniform(Rng& rng, int rows, int cols);
Tensor uniform_init(Rng& rng, int rows, int cols, double lo, double hi);

// y = x W^T + b for 2-D x (row-wise) or 1-D x
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

struct EmbeddingTable {
    static constexpr int kPad = 0;
    static constexpr int kCls = 1;
    static constexpr int kUnk = 2;

    int vocab_size = 0;
    int dim = 0;
    Tensor weights; // vocab_size x dim

    EmbeddingTable() = default;
    EmbeddingTable(int vocab_size, int dim, Rng& rng);
    void collect(const std::string& prefix, ParamRegistry& reg);
};

struct EmbeddedTurn {
    Tensor rows;            // (L+1) x dim, row 0 = CLS
    std::vector<char> mask; // true at PAD rows
};

// Truncates to max_turn_len tokens; an empty (or all-PAD) turn becomes a
// single UNK token.
EmbeddedTurn embed_turn(const EmbeddingTable& table, const std::vector<int>& tokens,
                        int max_turn_len);

struct TransformerLayer {
    Tensor wq, bq, wk, bk, wv, bv; // projections: (n_heads*head_dim) x dim
    Tensor wo, bo;                 // dim x (n_heads*head_dim)
    Tensor w1, b1, w2, b2;         // position-wise FFN
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
};

struct TransformerEncoder {
    int n_layers = 0;
    int n_heads = 0;
    int dim = 0;
    int head_dim = 0;
    int d_ff = 0;
    double dropout_rate = 0.0;
    std::vector<TransformerLayer> layers;

    TransformerEncoder() = default;
    TransformerEncoder(int n_layers, int n_heads, int dim, int d_ff, double dropout_rate,
                       Rng& rng);
    void collect(const std::string& prefix, ParamRegistry& reg);
};

struct TurnEncoding {
    Tensor repr; // [CLS] hidden state of the last layer
    // pre-dropout attention weights, [layer][head], each (L+1)x(L+1), values only
    std::vector<std::vector<Tensor>> attn;
};

TurnEncoding encode_turn(const TransformerEncoder& enc, const Tensor& embedded,
                         const std::vector<char>& mask, bool training, Rng& rng);

// sinusoidal encodings for positions 0..len-1
Tensor positional_encoding(int len, int dim);

struct GruCell {
    int in_dim = 0;
    int hidden = 0;
    Tensor wz, uz, bz;
    Tensor wr, ur, br;
    Tensor wn, un, bn;

    GruCell() = default;
    GruCell(int in_dim, int hidden, Rng& rng);
    void collect(const std::string& prefix, ParamRegistry& reg);
};

// z = sigma(Wz x + Uz h + bz), r = sigma(Wr x + Ur h + br),
// n = tanh(Wn x + r .* (Un h) + bn), h' = (1-z) .* n + z .* h
Tensor gru_step(const GruCell& cell, const Tensor& h_prev, const Tensor& x);

struct BiGru {
    int in_dim = 0;
    int hidden = 0;
    GruCell fwd, bwd;

    BiGru() = default;
    BiGru(int in_dim, int hidden, Rng& rng);
    void collect(const std::string& prefix, ParamRegistry& reg);
};

struct BiGruOut {
    Tensor states; // n x 2H, row i = [fwd h_i ; bwd h_i]
    Tensor final;  // [fwd h_n ; bwd h_1]
};

BiGruOut bigru_encode(const BiGru& bigru, const Tensor& seq);

// Turn encoder used by the W/O-transformer ablation: a word-level Bi-GRU whose
// concatenated final states are projected back to dim.
struct BiGruTurnEncoder {
    BiGru gru;
    Tensor proj_w, proj_b; // dim x 2H

    BiGruTurnEncoder() = default;
    BiGruTurnEncoder(int dim, int hidden, Rng& rng);
    void collect(const std::string& prefix, ParamRegistry& reg);
};

Tensor encode_turn_bigru(const BiGruTurnEncoder& enc, const Tensor& embedded,
                         const std::vector<char>& mask);

} // namespace quotrec
