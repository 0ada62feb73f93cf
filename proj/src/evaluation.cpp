#include "quotrec/evaluation.hpp"

#include <algorithm>
#include <cmath>

namespace quotrec {

namespace {

// regularized incomplete beta via Lentz continued fraction
double betacf(double a, double b, double x) {
    const double eps = 3e-14, fpmin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::fabs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 300; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

double betai(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                               a * std::log(x) + b * std::log(1.0 - x));
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
    return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

double student_t_pvalue(double t, double dof) {
    return betai(0.5 * dof, 0.5, dof / (dof + t * t));
}

} // namespace

int rank_of_gold(const RankedResult& ranked, int gold) {
    for (std::size_t i = 0; i < ranked.ids.size(); ++i)
        if (ranked.ids[i] == gold) return static_cast<int>(i) + 1;
    throw ContractError("rank_of_gold: gold id " + std::to_string(gold) +
                        " absent from ranking");
}

EvalReport compute_metrics(const std::vector<int>& ranks) {
    if (ranks.empty()) throw ContractError("compute_metrics: empty rank list");
    EvalReport r;
    r.ranks = ranks;
    r.n = static_cast<int>(ranks.size());
    for (int rank : ranks) {
        if (rank < 1) throw ContractError("compute_metrics: ranks are 1-based");
        r.map += 1.0 / rank;
        r.p1 += rank <= 1 ? 1.0 : 0.0;
        r.p3 += rank <= 3 ? 1.0 : 0.0;
        r.ndcg5 += rank <= 5 ? 1.0 / std::log2(rank + 1.0) : 0.0;
    }
    r.map /= r.n;
    r.p1 /= r.n;
    r.p3 /= r.n;
    r.ndcg5 /= r.n;
    return r;
}

TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ContractError("paired_ttest: length mismatch");
    const std::size_t n = a.size();
    if (n < 2) throw ContractError("paired_ttest: need at least 2 pairs");
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(n - 1);
    TTestResult res;
    if (var == 0.0) {
        res.degenerate = true;
        res.p = 1.0;
        return res;
    }
    res.t = mean / std::sqrt(var / static_cast<double>(n));
    res.p = student_t_pvalue(res.t, static_cast<double>(n - 1));
    return res;
}

} // namespace quotrec
