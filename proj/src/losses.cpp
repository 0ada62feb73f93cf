#include "quotrec/losses.hpp"

#include <algorithm>
#include <cmath>

namespace quotrec {

Tensor recommendation_loss(const Tensor& logits, int gold) {
    if (logits.rank() != 1) throw DimensionError("recommendation_loss: logits must be rank-1");
    const int n = logits.dim(0);
    if (gold < 0 || gold >= n)
        throw DataError("recommendation_loss: gold id " + std::to_string(gold) +
                        " out of range for " + std::to_string(n) + " quotations");
    double m = logits.at(0);
    for (double v : logits.value()) m = std::max(m, v);
    // lse = m + log sum exp(x - m); m is a detached constant so the gradient
    // is still exactly softmax(x)
    const Tensor lse = addc(log(sum(exp(addc(logits, -m)))), m);
    return sub(lse, at_index(logits, gold));
}

Tensor mapping_loss(const Tensor& mapped, const Tensor& Q, int gold) {
    if (gold < 0 || gold >= Q.dim(0))
        throw DataError("mapping_loss: gold id " + std::to_string(gold) + " out of range");
    return sqdist(mapped, slice_row(Q, gold));
}

Tensor l2_penalty(const ParamRegistry& params) {
    Tensor acc = Tensor::scalar(0.0);
    for (const auto& item : params.items) {
        if (item.decay == Decay::none) continue;
        Tensor w = item.tensor;
        if (item.decay == Decay::skip_pad_row) w = slice_rows(w, 1, w.dim(0));
        acc = add(acc, sum(mul(w, w)));
    }
    return acc;
}

CombinedLoss combined_loss(const Tensor& rec, const Tensor& map, double lambda,
                           const Tensor& l2, double mu) {
    if (lambda < 0.0) throw ConfigError("combined_loss: lambda must be >= 0");
    if (mu < 0.0) throw ConfigError("combined_loss: mu must be >= 0");
    CombinedLoss out;
    out.total = add(rec, add(mulc(map, lambda), mulc(l2, mu)));
    out.breakdown.rec = rec.item();
    out.breakdown.map = map.item();
    out.breakdown.l2 = l2.item();
    out.breakdown.total = out.total.item();
    return out;
}

} // namespace quotrec
