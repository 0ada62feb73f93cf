#include "quotrec/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "quotrec/layers.hpp"
#include "quotrec/losses.hpp"
#include "quotrec/model.hpp"

namespace quotrec {

GradCheckResult gradcheck(const std::string& name, const std::function<Tensor()>& forward,
                          std::vector<Tensor> params, double step, double tolerance) {
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        const Tensor loss = forward();
        tape.backward(loss);
    }
    for (auto& p : params) analytic.push_back(p.impl->grad.empty()
                                                  ? std::vector<double>(p.size(), 0.0)
                                                  : p.impl->grad);

    GradCheckResult res;
    res.name = name;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& val = params[pi].value();
        for (std::size_t i = 0; i < val.size(); ++i) {
            const double orig = val[i];
            val[i] = orig + step;
            const double up = forward().item();
            val[i] = orig - step;
            const double down = forward().item();
            val[i] = orig;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[pi][i];
            const double err = std::fabs(a - numeric) /
                               std::max({std::fabs(a), std::fabs(numeric), 1e-4});
            res.max_rel_err = std::max(res.max_rel_err, err);
        }
    }
    res.pass = res.max_rel_err < tolerance;
    for (auto& p : params) p.zero_grad();
    return res;
}

std::vector<GradCheckResult> run_gradcheck_suites(std::uint64_t seed) {
    std::vector<GradCheckResult> out;
    Rng rng(seed);
    const int dim = 8, hidden = 6, n_q = 4;

    auto rand_vec = [&](int n) {
        std::vector<double> v(static_cast<std::size_t>(n));
        for (double& x : v) x = rng.uniform(-1.0, 1.0);
        return Tensor::from({n}, std::move(v));
    };

    // embedding: sum over encoded rows of a small table
    {
        EmbeddingTable table(10, dim, rng);
        const std::vector<int> ids = {1, 3, 3, 7};
        auto fwd = [&] { return sum(tanh(embed_rows(table.weights, ids))); };
        out.push_back(gradcheck("embedding", fwd, {table.weights}));
    }

    // attention + FFN + layer norm, via a full transformer turn encoder
    {
        TransformerEncoder enc(1, 2, dim, 2 * dim, 0.0, rng);
        EmbeddingTable table(10, dim, rng);
        const std::vector<int> ids = {1, 4, 5, 0}; // includes a PAD position
        Rng dummy(0);
        auto fwd = [&] {
            const EmbeddedTurn emb = embed_turn(table, ids, 10);
            return sum(encode_turn(enc, emb.rows, emb.mask, false, dummy).repr);
        };
        std::vector<Tensor> params = {table.weights};
        auto& l = enc.layers[0];
        for (const Tensor& t : {l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo})
            params.push_back(t);
        out.push_back(gradcheck("attention", fwd, params));
        out.push_back(gradcheck("ffn", fwd, {l.w1, l.b1, l.w2, l.b2}));
        out.push_back(gradcheck("layer_norm", fwd, {l.ln1_g, l.ln1_b, l.ln2_g, l.ln2_b}));
    }

    // single GRU step
    {
        GruCell cell(dim, hidden, rng);
        const Tensor h0 = rand_vec(hidden);
        const Tensor x = rand_vec(dim);
        auto fwd = [&] { return sum(gru_step(cell, h0, x)); };
        out.push_back(gradcheck(
            "gru", fwd, {cell.wz, cell.uz, cell.bz, cell.wr, cell.ur, cell.br, cell.wn, cell.un, cell.bn}));
    }

    // Bi-GRU over a short sequence
    {
        BiGru bg(dim, hidden, rng);
        std::vector<double> seq(3 * static_cast<std::size_t>(dim));
        for (double& v : seq) v = rng.uniform(-1.0, 1.0);
        const Tensor s = Tensor::from({3, dim}, std::move(seq));
        auto fwd = [&] {
            const BiGruOut g = bigru_encode(bg, s);
            return add(sum(g.final), mean(g.states));
        };
        std::vector<Tensor> params;
        for (const GruCell* c : {&bg.fwd, &bg.bwd})
            for (const Tensor& t : {c->wz, c->uz, c->bz, c->wr, c->ur, c->br, c->wn, c->un, c->bn})
                params.push_back(t);
        out.push_back(gradcheck("bigru", fwd, params));
    }

    // mapping z = Q (M r) and the output layer, plus both losses
    {
        Rng mrng(seed + 1);
        const Tensor M = xavier_uniform(mrng, dim, dim);
        const Tensor Q = xavier_uniform(mrng, n_q, dim);
        const Tensor W = xavier_uniform(mrng, n_q, n_q + 2 * hidden + dim);
        const Tensor b = Tensor::zeros({n_q});
        const Tensor r = rand_vec(dim);
        const Tensor hc = rand_vec(2 * hidden);
        const int gold = 2;
        auto logits = [&] {
            const Tensor mapped = matmul(M, r);
            const Tensor z = matmul(Q, mapped);
            return add(matmul(W, concat({z, hc, mapped})), b);
        };
        out.push_back(gradcheck("mapping", [&] { return sum(matmul(Q, matmul(M, r))); }, {M, Q}));
        out.push_back(gradcheck("output_layer", [&] { return sum(tanh(logits())); }, {M, Q, W, b}));
        out.push_back(gradcheck("recommendation_loss",
                                [&] { return recommendation_loss(logits(), gold); }, {M, Q, W, b}));
        out.push_back(gradcheck("mapping_loss",
                                [&] { return mapping_loss(matmul(M, r), Q, gold); }, {M, Q}));
    }

    return out;
}

} // namespace quotrec
