#include "quotrec/layers.hpp"

#include <cmath>
#include <limits>

namespace quotrec {

Tensor xavier_uniform(Rng& rng, int rows, int cols) {
    const double limit = std::sqrt(6.0 / (rows + cols));
    std::vector<double> v(static_cast<std::size_t>(rows) * cols);
    for (double& x : v) x = rng.uniform(-limit, limit);
    return Tensor::from({rows, cols}, std::move(v));
}

Tensor uniform_init(Rng& rng, int rows, int cols, double lo, double hi) {
    std::vector<double> v(static_cast<std::size_t>(rows) * cols);
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::from({rows, cols}, std::move(v));
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() == 1) return add(matmul(w, x), b);
    return add_row(matmul(x, transpose(w)), b);
}

// ---- embedding ----

EmbeddingTable::EmbeddingTable(int vocab_size_, int dim_, Rng& rng)
    : vocab_size(vocab_size_), dim(dim_) {
    weights = uniform_init(rng, vocab_size, dim, -0.1, 0.1);
}

void EmbeddingTable::collect(const std::string& prefix, ParamRegistry& reg) {
    reg.add(prefix + ".weights", weights, Decay::skip_pad_row);
}

EmbeddedTurn embed_turn(const EmbeddingTable& table, const std::vector<int>& tokens,
                        int max_turn_len) {
    std::vector<int> ids;
    ids.reserve(tokens.size() + 1);
    ids.push_back(EmbeddingTable::kCls);
    for (int t : tokens) {
        if (static_cast<int>(ids.size()) > max_turn_len) break; // tail truncation
        ids.push_back(t);
    }
    bool any_real = false;
    for (std::size_t i = 1; i < ids.size(); ++i)
        if (ids[i] != EmbeddingTable::kPad) any_real = true;
    if (!any_real) ids.assign({EmbeddingTable::kCls, EmbeddingTable::kUnk});

    EmbeddedTurn out;
    out.rows = embed_rows(table.weights, ids);
    out.mask.resize(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
        out.mask[i] = (i > 0 && ids[i] == EmbeddingTable::kPad) ? 1 : 0;
    return out;
}

// ---- transformer ----

TransformerEncoder::TransformerEncoder(int n_layers_, int n_heads_, int dim_, int d_ff_,
                                       double dropout_rate_, Rng& rng)
    : n_layers(n_layers_), n_heads(n_heads_), dim(dim_), d_ff(d_ff_),
      dropout_rate(dropout_rate_) {
    // dim need not divide n_heads evenly; each head gets floor(dim/n_heads)
    // and the O-projection maps n_heads*head_dim back to dim.
    head_dim = dim / n_heads;
    if (head_dim < 1) throw ConfigError("transformer: more heads than dimensions");
    const int proj = n_heads * head_dim;
    layers.resize(static_cast<std::size_t>(n_layers));
    for (auto& l : layers) {
        l.wq = xavier_uniform(rng, proj, dim);
        l.bq = Tensor::zeros({proj});
        l.wk = xavier_uniform(rng, proj, dim);
        l.bk = Tensor::zeros({proj});
        l.wv = xavier_uniform(rng, proj, dim);
        l.bv = Tensor::zeros({proj});
        l.wo = xavier_uniform(rng, dim, proj);
        l.bo = Tensor::zeros({dim});
        l.w1 = xavier_uniform(rng, d_ff, dim);
        l.b1 = Tensor::zeros({d_ff});
        l.w2 = xavier_uniform(rng, dim, d_ff);
        l.b2 = Tensor::zeros({dim});
        l.ln1_g = Tensor::full({dim}, 1.0);
        l.ln1_b = Tensor::zeros({dim});
        l.ln2_g = Tensor::full({dim}, 1.0);
        l.ln2_b = Tensor::zeros({dim});
    }
}

void TransformerEncoder::collect(const std::string& prefix, ParamRegistry& reg) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        auto& l = layers[i];
        const std::string p = prefix + ".layer" + std::to_string(i);
        reg.add(p + ".wq", l.wq, Decay::full);
        reg.add(p + ".bq", l.bq, Decay::none);
        reg.add(p + ".wk", l.wk, Decay::full);
        reg.add(p + ".bk", l.bk, Decay::none);
        reg.add(p + ".wv", l.wv, Decay::full);
        reg.add(p + ".bv", l.bv, Decay::none);
        reg.add(p + ".wo", l.wo, Decay::full);
        reg.add(p + ".bo", l.bo, Decay::none);
        reg.add(p + ".w1", l.w1, Decay::full);
        reg.add(p + ".b1", l.b1, Decay::none);
        reg.add(p + ".w2", l.w2, Decay::full);
        reg.add(p + ".b2", l.b2, Decay::none);
        reg.add(p + ".ln1_g", l.ln1_g, Decay::none);
        reg.add(p + ".ln1_b", l.ln1_b, Decay::none);
        reg.add(p + ".ln2_g", l.ln2_g, Decay::none);
        reg.add(p + ".ln2_b", l.ln2_b, Decay::none);
    }
}

Tensor positional_encoding(int len, int dim) {
    std::vector<double> v(static_cast<std::size_t>(len) * dim);
    for (int pos = 0; pos < len; ++pos) {
        for (int i = 0; i < dim; ++i) {
            const double freq = std::pow(10000.0, -2.0 * (i / 2) / dim);
            v[static_cast<std::size_t>(pos) * dim + i] =
                (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
        }
    }
    return Tensor::from({len, dim}, std::move(v));
}

TurnEncoding encode_turn(const TransformerEncoder& enc, const Tensor& embedded,
                         const std::vector<char>& mask, bool training, Rng& rng) {
    if (embedded.rank() != 2 || embedded.dim(1) != enc.dim)
        throw DimensionError("encode_turn: embedded must be [L+1 x dim], got " +
                             shape_str(embedded.shape()));
    const int len = embedded.dim(0);
    if (static_cast<int>(mask.size()) != len)
        throw DimensionError("encode_turn: mask length mismatch");

    TurnEncoding out;
    if (enc.n_layers == 0) { // degenerate engine-test config: identity
        out.repr = slice_row(embedded, 0);
        return out;
    }

    // additive key mask: -inf at PAD columns, 0 elsewhere
    std::vector<double> maskv(static_cast<std::size_t>(len), 0.0);
    for (int j = 0; j < len; ++j)
        if (mask[static_cast<std::size_t>(j)])
            maskv[static_cast<std::size_t>(j)] = -std::numeric_limits<double>::infinity();
    const Tensor key_mask = Tensor::from({len}, std::move(maskv));

    Tensor x = add(embedded, positional_encoding(len, enc.dim));
    const double scale = 1.0 / std::sqrt(static_cast<double>(enc.head_dim));
    out.attn.reserve(enc.layers.size());
    for (const auto& l : enc.layers) {
        const Tensor q = linear(x, l.wq, l.bq);
        const Tensor k = linear(x, l.wk, l.bk);
        const Tensor v = linear(x, l.wv, l.bv);
        std::vector<Tensor> head_ctx;
        std::vector<Tensor> head_attn;
        head_ctx.reserve(static_cast<std::size_t>(enc.n_heads));
        for (int h = 0; h < enc.n_heads; ++h) {
            const int c0 = h * enc.head_dim, c1 = c0 + enc.head_dim;
            const Tensor qh = slice_cols(q, c0, c1);
            const Tensor kh = slice_cols(k, c0, c1);
            const Tensor vh = slice_cols(v, c0, c1);
            Tensor scores = mulc(matmul(qh, transpose(kh)), scale);
            scores = add_row(scores, key_mask);
            const Tensor a = softmax(scores, 1);
            head_attn.push_back(a.detached());
            const Tensor a_drop = dropout(a, enc.dropout_rate, training, rng);
            head_ctx.push_back(matmul(a_drop, vh));
        }
        out.attn.push_back(std::move(head_attn));
        const Tensor o = linear(concat_cols(head_ctx), l.wo, l.bo);
        x = layer_norm(add(x, o), l.ln1_g, l.ln1_b);
        Tensor f = linear(relu(linear(x, l.w1, l.b1)), l.w2, l.b2);
        f = dropout(f, enc.dropout_rate, training, rng);
        x = layer_norm(add(x, f), l.ln2_g, l.ln2_b);
    }
    out.repr = slice_row(x, 0);
    return out;
}

// ---- GRU ----

GruCell::GruCell(int in_dim_, int hidden_, Rng& rng) : in_dim(in_dim_), hidden(hidden_) {
    wz = xavier_uniform(rng, hidden, in_dim);
    uz = xavier_uniform(rng, hidden, hidden);
    bz = Tensor::zeros({hidden});
    wr = xavier_uniform(rng, hidden, in_dim);
    ur = xavier_uniform(rng, hidden, hidden);
    br = Tensor::zeros({hidden});
    wn = xavier_uniform(rng, hidden, in_dim);
    un = xavier_uniform(rng, hidden, hidden);
    bn = Tensor::zeros({hidden});
}

void GruCell::collect(const std::string& prefix, ParamRegistry& reg) {
    reg.add(prefix + ".wz", wz, Decay::full);
    reg.add(prefix + ".uz", uz, Decay::full);
    reg.add(prefix + ".bz", bz, Decay::none);
    reg.add(prefix + ".wr", wr, Decay::full);
    reg.add(prefix + ".ur", ur, Decay::full);
    reg.add(prefix + ".br", br, Decay::none);
    reg.add(prefix + ".wn", wn, Decay::full);
    reg.add(prefix + ".un", un, Decay::full);
    reg.add(prefix + ".bn", bn, Decay::none);
}

Tensor gru_step(const GruCell& cell, const Tensor& h_prev, const Tensor& x) {
    const Tensor z = sigmoid(add(add(matmul(cell.wz, x), matmul(cell.uz, h_prev)), cell.bz));
    const Tensor r = sigmoid(add(add(matmul(cell.wr, x), matmul(cell.ur, h_prev)), cell.br));
    const Tensor n =
        tanh(add(add(matmul(cell.wn, x), mul(r, matmul(cell.un, h_prev))), cell.bn));
    // h = (1-z).*n + z.*h_prev
    const Tensor one_minus_z = addc(mulc(z, -1.0), 1.0);
    return add(mul(one_minus_z, n), mul(z, h_prev));
}

BiGru::BiGru(int in_dim_, int hidden_, Rng& rng)
    : in_dim(in_dim_), hidden(hidden_), fwd(in_dim_, hidden_, rng), bwd(in_dim_, hidden_, rng) {}

void BiGru::collect(const std::string& prefix, ParamRegistry& reg) {
    fwd.collect(prefix + ".fwd", reg);
    bwd.collect(prefix + ".bwd", reg);
}

BiGruOut bigru_encode(const BiGru& bigru, const Tensor& seq) {
    if (seq.rank() != 2 || seq.dim(1) != bigru.in_dim)
        throw DimensionError("bigru_encode: need [n x in_dim], got " + shape_str(seq.shape()));
    const int n = seq.dim(0);
    if (n < 1) throw ContractError("bigru_encode: empty sequence");

    std::vector<Tensor> fh(static_cast<std::size_t>(n)), bh(static_cast<std::size_t>(n));
    Tensor h = Tensor::zeros({bigru.hidden});
    for (int i = 0; i < n; ++i) {
        h = gru_step(bigru.fwd, h, slice_row(seq, i));
        fh[static_cast<std::size_t>(i)] = h;
    }
    h = Tensor::zeros({bigru.hidden});
    for (int i = n - 1; i >= 0; --i) {
        h = gru_step(bigru.bwd, h, slice_row(seq, i));
        bh[static_cast<std::size_t>(i)] = h;
    }

    std::vector<Tensor> rows;
    rows.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        rows.push_back(concat({fh[static_cast<std::size_t>(i)], bh[static_cast<std::size_t>(i)]}));
    BiGruOut out;
    out.states = stack_rows(rows);
    out.final = concat({fh[static_cast<std::size_t>(n - 1)], bh[0]});
    return out;
}

// ---- Bi-GRU turn encoder (ablation) ----

BiGruTurnEncoder::BiGruTurnEncoder(int dim, int hidden, Rng& rng) : gru(dim, hidden, rng) {
    proj_w = xavier_uniform(rng, dim, 2 * hidden);
    proj_b = Tensor::zeros({dim});
}

void BiGruTurnEncoder::collect(const std::string& prefix, ParamRegistry& reg) {
    gru.collect(prefix + ".gru", reg);
    reg.add(prefix + ".proj_w", proj_w, Decay::full);
    reg.add(prefix + ".proj_b", proj_b, Decay::none);
}

Tensor encode_turn_bigru(const BiGruTurnEncoder& enc, const Tensor& embedded,
                         const std::vector<char>& mask) {
    // drop PAD rows so padding cannot change the result
    std::vector<Tensor> real;
    for (int i = 0; i < embedded.dim(0); ++i)
        if (!mask[static_cast<std::size_t>(i)]) real.push_back(slice_row(embedded, i));
    const BiGruOut g = bigru_encode(enc.gru, stack_rows(real));
    return linear(g.final, enc.proj_w, enc.proj_b);
}

} // namespace quotrec
