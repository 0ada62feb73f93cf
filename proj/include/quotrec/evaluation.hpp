#pragma once

#include <vector>

#include "quotrec/model.hpp"

namespace quotrec {

struct EvalReport {
    double map = 0.0;
    double p1 = 0.0;
    double p3 = 0.0;
    double ndcg5 = 0.0;
    std::vector<int> ranks; // 1-based gold ranks per conversation
    int n = 0;
};

// 1-based position of the gold id in a full ranking
int rank_of_gold(const RankedResult& ranked, int gold);

// single-relevant-item metrics: AP = 1/rank, P@k = [rank <= k],
// nDCG@5 = 1/log2(rank+1) for rank <= 5 else 0
EvalReport compute_metrics(const std::vector<int>& ranks);

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    bool degenerate = false; // all differences zero
};

// two-sided paired t-test
TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b);

} // namespace quotrec
