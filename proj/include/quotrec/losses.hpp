#pragma once

#include "quotrec/model.hpp"
#include "quotrec/tensor.hpp"

namespace quotrec {

struct LossBreakdown {
    double rec = 0.0;
    double map = 0.0;
    double l2 = 0.0;
    double total = 0.0;
};

// cross entropy -log softmax(logits)[gold], via log-sum-exp
Tensor recommendation_loss(const Tensor& logits, int gold);

// ||mapped - Q[gold]||^2; gradients flow into both the mapping and the
// quotation encoder
Tensor mapping_loss(const Tensor& mapped, const Tensor& Q, int gold);

// sum of squared weights over decaying parameters; embedding PAD rows excluded
Tensor l2_penalty(const ParamRegistry& params);

struct CombinedLoss {
    Tensor total;
    LossBreakdown breakdown;
};

CombinedLoss combined_loss(const Tensor& rec, const Tensor& map, double lambda,
                           const Tensor& l2, double mu);

} // namespace quotrec
