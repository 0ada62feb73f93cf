#include "quotrec/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace quotrec {

namespace {

thread_local Tape* g_current_tape = nullptr;

std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " +
                             shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

bool tracking(std::initializer_list<const Tensor*> ins) {
    if (!Tape::current()) return false;
    for (const Tensor* t : ins)
        if (t->requires_grad()) return true;
    return false;
}

Tensor make_out(Shape s) {
    Tensor t;
    t.impl = std::make_shared<TensorImpl>();
    t.impl->shape = std::move(s);
    t.impl->value.resize(numel(t.impl->shape));
    return t;
}

// Deterministic cache-friendly GEMMs. Fixed accumulation order keeps forward
// results bit-identical across runs.

// C += A(m x k) * B(k x n)
void gemm_nn(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        double* crow = C + static_cast<std::size_t>(i) * n;
        const double* arow = A + static_cast<std::size_t>(i) * k;
        for (int l = 0; l < k; ++l) {
            const double a = arow[l];
            if (a == 0.0) continue;
            const double* brow = B + static_cast<std::size_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

// C += A(m x k) * B(n x k)^T
void gemm_nt(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = A + static_cast<std::size_t>(i) * k;
        double* crow = C + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = B + static_cast<std::size_t>(j) * k;
            double acc = 0.0;
            for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
            crow[j] += acc;
        }
    }
}

// C += A(k x m)^T * B(k x n)
void gemm_tn(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int l = 0; l < k; ++l) {
        const double* arow = A + static_cast<std::size_t>(l) * m;
        const double* brow = B + static_cast<std::size_t>(l) * n;
        for (int i = 0; i < m; ++i) {
            const double a = arow[i];
            if (a == 0.0) continue;
            double* crow = C + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

} // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

// ---- Tensor ----

Tensor Tensor::zeros(Shape s) {
    return make_out(std::move(s));
}

Tensor Tensor::full(Shape s, double v) {
    Tensor t = make_out(std::move(s));
    std::fill(t.impl->value.begin(), t.impl->value.end(), v);
    return t;
}

Tensor Tensor::scalar(double v) {
    Tensor t = make_out({1});
    t.impl->value[0] = v;
    return t;
}

Tensor Tensor::from(Shape s, std::vector<double> v) {
    if (numel(s) != v.size())
        throw DimensionError("Tensor::from: " + shape_str(s) + " needs " +
                             std::to_string(numel(s)) + " values, got " +
                             std::to_string(v.size()));
    Tensor t;
    t.impl = std::make_shared<TensorImpl>();
    t.impl->shape = std::move(s);
    t.impl->value = std::move(v);
    return t;
}

Tensor Tensor::param(Shape s, std::vector<double> v) {
    Tensor t = from(std::move(s), std::move(v));
    t.impl->requires_grad = true;
    return t;
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("item(): tensor is not scalar, shape " + shape_str(shape()));
    return impl->value[0];
}

Tensor Tensor::detached() const {
    return Tensor::from(shape(), value());
}

// ---- Tape ----

namespace testhook {
const char* corrupt_backward_op = nullptr;
}

Tape::Tape() {
    prev_ = g_current_tape;
    g_current_tape = this;
}

Tape::~Tape() {
    g_current_tape = prev_;
}

Tape* Tape::current() {
    return g_current_tape;
}

void Tape::record(const char* op, std::vector<std::shared_ptr<TensorImpl>> inputs,
                  std::shared_ptr<TensorImpl> output, std::function<void()> backward) {
    Node n;
    n.op = op;
    n.inputs.reserve(inputs.size());
    for (auto& in : inputs) n.inputs.push_back(in.get());
    n.output = output.get();
    n.backward = std::move(backward);
    output->requires_grad = true;
    retained_.push_back(std::move(output));
    for (auto& in : inputs) retained_.push_back(std::move(in));
    nodes_.push_back(std::move(n));
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1)
        throw ContractError("backward: loss must be scalar, shape " + shape_str(loss.shape()));
    // Intermediates (node outputs) are re-seeded each call; leaves keep
    // accumulating until the caller zeroes them.
    for (auto& n : nodes_) {
        n.output->ensure_grad();
        std::fill(n.output->grad.begin(), n.output->grad.end(), 0.0);
    }
    loss.impl->ensure_grad();
    loss.impl->grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (testhook::corrupt_backward_op &&
            std::string_view(it->op) == testhook::corrupt_backward_op) {
            for (double& g : it->output->grad) g *= 1.01;
        }
        it->backward();
    }
}

std::size_t Tape::count_op(std::string_view op) const {
    std::size_t c = 0;
    for (const auto& n : nodes_)
        if (op == n.op) ++c;
    return c;
}

bool Tape::op_touches(std::string_view op, const TensorImpl* t) const {
    for (const auto& n : nodes_) {
        if (op != n.op) continue;
        for (const TensorImpl* in : n.inputs)
            if (in == t) return true;
    }
    return false;
}

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() == 2 && b.rank() == 2) {
        const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
        if (k != k2)
            throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) +
                                 " vs " + shape_str(b.shape()));
        Tensor out = make_out({m, n});
        gemm_nn(a.value().data(), b.value().data(), out.value().data(), m, k, n);
        if (tracking({&a, &b})) {
            auto ai = a.impl, bi = b.impl, oi = out.impl;
            Tape::current()->record("matmul", {ai, bi}, oi, [ai, bi, oi, m, k, n] {
                if (ai->requires_grad) {
                    ai->ensure_grad();
                    gemm_nt(oi->grad.data(), bi->value.data(), ai->grad.data(), m, n, k);
                }
                if (bi->requires_grad) {
                    bi->ensure_grad();
                    gemm_tn(ai->value.data(), oi->grad.data(), bi->grad.data(), k, m, n);
                }
            });
        }
        return out;
    }
    if (a.rank() == 2 && b.rank() == 1) {
        const int m = a.dim(0), k = a.dim(1);
        if (k != b.dim(0))
            throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) +
                                 " vs " + shape_str(b.shape()));
        Tensor out = make_out({m});
        gemm_nn(a.value().data(), b.value().data(), out.value().data(), m, k, 1);
        if (tracking({&a, &b})) {
            auto ai = a.impl, bi = b.impl, oi = out.impl;
            Tape::current()->record("matmul", {ai, bi}, oi, [ai, bi, oi, m, k] {
                if (ai->requires_grad) {
                    ai->ensure_grad();
                    // gA += g x^T (outer product)
                    for (int i = 0; i < m; ++i) {
                        const double g = oi->grad[static_cast<std::size_t>(i)];
                        if (g == 0.0) continue;
                        double* row = ai->grad.data() + static_cast<std::size_t>(i) * k;
                        for (int j = 0; j < k; ++j) row[j] += g * bi->value[static_cast<std::size_t>(j)];
                    }
                }
                if (bi->requires_grad) {
                    bi->ensure_grad();
                    gemm_tn(ai->value.data(), oi->grad.data(), bi->grad.data(), k, m, 1);
                }
            });
        }
        return out;
    }
    throw DimensionError("matmul: unsupported ranks " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
}

Tensor transpose(const Tensor& x) {
    if (x.rank() != 2) throw DimensionError("transpose: rank-2 required, got " + shape_str(x.shape()));
    const int m = x.dim(0), n = x.dim(1);
    Tensor out = make_out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out.value()[static_cast<std::size_t>(j) * m + i] =
                x.value()[static_cast<std::size_t>(i) * n + j];
    if (tracking({&x})) {
        auto xi = x.impl, oi = out.impl;
        Tape::current()->record("transpose", {xi}, oi, [xi, oi, m, n] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    xi->grad[static_cast<std::size_t>(i) * n + j] +=
                        oi->grad[static_cast<std::size_t>(j) * m + i];
        });
    }
    return out;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_elementwise(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
    check_same_shape(a, b, name);
    Tensor out = make_out(a.shape());
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) out.value()[i] = fwd(a.value()[i], b.value()[i]);
    if (tracking({&a, &b})) {
        auto ai = a.impl, bi = b.impl, oi = out.impl;
        Tape::current()->record(name, {ai, bi}, oi, [ai, bi, oi, n, bwd] {
            const bool ga = ai->requires_grad, gb = bi->requires_grad;
            if (ga) ai->ensure_grad();
            if (gb) bi->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                double da, db;
                bwd(ai->value[i], bi->value[i], da, db);
                if (ga) ai->grad[i] += oi->grad[i] * da;
                if (gb) bi->grad[i] += oi->grad[i] * db;
            }
        });
    }
    return out;
}

template <typename Fwd, typename Bwd>
Tensor unary_elementwise(const char* name, const Tensor& x, Fwd fwd, Bwd bwd) {
    Tensor out = make_out(x.shape());
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) out.value()[i] = fwd(x.value()[i]);
    if (tracking({&x})) {
        auto xi = x.impl, oi = out.impl;
        Tape::current()->record(name, {xi}, oi, [xi, oi, n, bwd] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                xi->grad[i] += oi->grad[i] * bwd(xi->value[i], oi->value[i]);
        });
    }
    return out;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double& da, double& db) { da = 1.0; db = 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double& da, double& db) { da = 1.0; db = -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double x, double y, double& da, double& db) { da = y; db = x; });
}

Tensor addc(const Tensor& a, double c) {
    return unary_elementwise(
        "addc", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor mulc(const Tensor& a, double c) {
    return unary_elementwise(
        "mulc", a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Tensor add_row(const Tensor& x, const Tensor& v) {
    if (x.rank() != 2 || v.rank() != 1 || x.dim(1) != v.dim(0))
        throw DimensionError("add_row: need [m x n] and [n], got " + shape_str(x.shape()) +
                             " and " + shape_str(v.shape()));
    const int m = x.dim(0), n = x.dim(1);
    Tensor out = make_out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out.value()[static_cast<std::size_t>(i) * n + j] =
                x.value()[static_cast<std::size_t>(i) * n + j] + v.value()[static_cast<std::size_t>(j)];
    if (tracking({&x, &v})) {
        auto xi = x.impl, vi = v.impl, oi = out.impl;
        Tape::current()->record("add_row", {xi, vi}, oi, [xi, vi, oi, m, n] {
            if (xi->requires_grad) {
                xi->ensure_grad();
                for (std::size_t i = 0; i < static_cast<std::size_t>(m) * n; ++i)
                    xi->grad[i] += oi->grad[i];
            }
            if (vi->requires_grad) {
                vi->ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        vi->grad[static_cast<std::size_t>(j)] +=
                            oi->grad[static_cast<std::size_t>(i) * n + j];
            }
        });
    }
    return out;
}

Tensor tanh(const Tensor& x) {
    return unary_elementwise(
        "tanh", x, [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_elementwise(
        "sigmoid", x,
        [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
    return unary_elementwise(
        "relu", x, [](double v) { return v > 0 ? v : 0.0; },
        [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& x) {
    return unary_elementwise(
        "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary_elementwise(
        "log", x, [](double v) { return std::log(v); },
        [](double v, double) { return 1.0 / v; });
}

Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat: empty input");
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != 1) throw DimensionError("concat: rank-1 parts required, got " + shape_str(p.shape()));
        total += p.size();
    }
    Tensor out = make_out({static_cast<int>(total)});
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::memcpy(out.value().data() + off, p.value().data(), p.size() * sizeof(double));
        off += p.size();
    }
    bool track = false;
    for (const auto& p : parts)
        if (p.requires_grad()) track = true;
    if (track && Tape::current()) {
        std::vector<std::shared_ptr<TensorImpl>> ins;
        for (const auto& p : parts) ins.push_back(p.impl);
        auto oi = out.impl;
        auto impls = ins;
        Tape::current()->record("concat", std::move(ins), oi, [impls, oi] {
            std::size_t off = 0;
            for (auto& pi : impls) {
                if (pi->requires_grad) {
                    pi->ensure_grad();
                    for (std::size_t i = 0; i < pi->value.size(); ++i)
                        pi->grad[i] += oi->grad[off + i];
                }
                off += pi->value.size();
            }
        });
    }
    return out;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw ContractError("stack_rows: empty input");
    const int n = rows[0].rank() == 1 ? rows[0].dim(0) : -1;
    if (n < 0) throw DimensionError("stack_rows: rank-1 rows required");
    for (const auto& r : rows)
        if (r.rank() != 1 || r.dim(0) != n)
            throw DimensionError("stack_rows: inconsistent row shape " + shape_str(r.shape()));
    const int m = static_cast<int>(rows.size());
    Tensor out = make_out({m, n});
    for (int i = 0; i < m; ++i)
        std::memcpy(out.value().data() + static_cast<std::size_t>(i) * n,
                    rows[static_cast<std::size_t>(i)].value().data(), sizeof(double) * n);
    bool track = false;
    for (const auto& r : rows)
        if (r.requires_grad()) track = true;
    if (track && Tape::current()) {
        std::vector<std::shared_ptr<TensorImpl>> ins;
        for (const auto& r : rows) ins.push_back(r.impl);
        auto oi = out.impl;
        auto impls = ins;
        Tape::current()->record("stack_rows", std::move(ins), oi, [impls, oi, n] {
            for (std::size_t i = 0; i < impls.size(); ++i) {
                auto& ri = impls[i];
                if (!ri->requires_grad) continue;
                ri->ensure_grad();
                for (int j = 0; j < n; ++j)
                    ri->grad[static_cast<std::size_t>(j)] += oi->grad[i * n + j];
            }
        });
    }
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& mats) {
    if (mats.empty()) throw ContractError("concat_cols: empty input");
    const int m = mats[0].rank() == 2 ? mats[0].dim(0) : -1;
    if (m < 0) throw DimensionError("concat_cols: rank-2 inputs required");
    int total = 0;
    for (const auto& t : mats) {
        if (t.rank() != 2 || t.dim(0) != m)
            throw DimensionError("concat_cols: inconsistent shape " + shape_str(t.shape()));
        total += t.dim(1);
    }
    Tensor out = make_out({m, total});
    int off = 0;
    for (const auto& t : mats) {
        const int w = t.dim(1);
        for (int i = 0; i < m; ++i)
            std::memcpy(out.value().data() + static_cast<std::size_t>(i) * total + off,
                        t.value().data() + static_cast<std::size_t>(i) * w, sizeof(double) * w);
        off += w;
    }
    bool track = false;
    for (const auto& t : mats)
        if (t.requires_grad()) track = true;
    if (track && Tape::current()) {
        std::vector<std::shared_ptr<TensorImpl>> ins;
        std::vector<int> widths;
        for (const auto& t : mats) {
            ins.push_back(t.impl);
            widths.push_back(t.dim(1));
        }
        auto oi = out.impl;
        auto impls = ins;
        Tape::current()->record("concat_cols", std::move(ins), oi, [impls, widths, oi, m, total] {
            int off = 0;
            for (std::size_t p = 0; p < impls.size(); ++p) {
                const int w = widths[p];
                auto& ti = impls[p];
                if (ti->requires_grad) {
                    ti->ensure_grad();
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < w; ++j)
                            ti->grad[static_cast<std::size_t>(i) * w + j] +=
                                oi->grad[static_cast<std::size_t>(i) * total + off + j];
                }
                off += w;
            }
        });
    }
    return out;
}

Tensor slice_row(const Tensor& x, int i) {
    if (x.rank() != 2) throw DimensionError("slice_row: rank-2 required");
    if (i < 0 || i >= x.dim(0)) throw DimensionError("slice_row: row index out of range");
    const int n = x.dim(1);
    Tensor out = make_out({n});
    std::memcpy(out.value().data(), x.value().data() + static_cast<std::size_t>(i) * n,
                sizeof(double) * n);
    if (tracking({&x})) {
        auto xi = x.impl, oi = out.impl;
        Tape::current()->record("slice_row", {xi}, oi, [xi, oi, i, n] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            for (int j = 0; j < n; ++j)
                xi->grad[static_cast<std::size_t>(i) * n + j] += oi->grad[static_cast<std::size_t>(j)];
        });
    }
    return out;
}

Tensor slice_rows(const Tensor& x, int from, int to) {
    if (x.rank() != 2) throw DimensionError("slice_rows: rank-2 required");
    if (from < 0 || to > x.dim(0) || from >= to)
        throw DimensionError("slice_rows: bad range [" + std::to_string(from) + "," +
                             std::to_string(to) + ") for " + shape_str(x.shape()));
    const int n = x.dim(1), m = to - from;
    Tensor out = make_out({m, n});
    std::memcpy(out.value().data(), x.value().data() + static_cast<std::size_t>(from) * n,
                sizeof(double) * static_cast<std::size_t>(m) * n);
    if (tracking({&x})) {
        auto xi = x.impl, oi = out.impl;
        Tape::current()->record("slice_rows", {xi}, oi, [xi, oi, from, m, n] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < static_cast<std::size_t>(m) * n; ++i)
                xi->grad[static_cast<std::size_t>(from) * n + i] += oi->grad[i];
        });
    }
    return out;
}

Tensor slice_cols(const Tensor& x, int from, int to) {
    if (x.rank() != 2) throw DimensionError("slice_cols: rank-2 required");
    if (from < 0 || to > x.dim(1) || from >= to)
        throw DimensionError("slice_cols: bad range for " + shape_str(x.shape()));
    const int m = x.dim(0), n = x.dim(1), w = to - from;
    Tensor out = make_out({m, w});
    for (int i = 0; i < m; ++i)
        std::memcpy(out.value().data() + static_cast<std::size_t>(i) * w,
                    x.value().data() + static_cast<std::size_t>(i) * n + from, sizeof(double) * w);
    if (tracking({&x})) {
        auto xi = x.impl, oi = out.impl;
        Tape::current()->record("slice_cols", {xi}, oi, [xi, oi, from, m, n, w] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j)
                    xi->grad[static_cast<std::size_t>(i) * n + from + j] +=
                        oi->grad[static_cast<std::size_t>(i) * w + j];
        });
    }
    return out;
}

Tensor at_index(const Tensor& v, int i) {
    if (v.rank() != 1) throw DimensionError("at_index: rank-1 required");
    if (i < 0 || i >= v.dim(0)) throw DimensionError("at_index: index out of range");
    Tensor out = Tensor::scalar(v.at(i));
    if (tracking({&v})) {
        auto vi = v.impl, oi = out.impl;
        Tape::current()->record("at_index", {vi}, oi, [vi, oi, i] {
            if (!vi->requires_grad) return;
            vi->ensure_grad();
            vi->grad[static_cast<std::size_t>(i)] += oi->grad[0];
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.value()) acc += v;
    Tensor out = Tensor::scalar(acc);
    if (tracking({&x})) {
        auto xi = x.impl, oi = out.impl;
        Tape::current()->record("sum", {xi}, oi, [xi, oi] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            for (double& g : xi->grad) g += oi->grad[0];
        });
    }
    return out;
}

Tensor mean(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.size());
    double acc = 0.0;
    for (double v : x.value()) acc += v;
    Tensor out = Tensor::scalar(acc * inv);
    if (tracking({&x})) {
        auto xi = x.impl, oi = out.impl;
        Tape::current()->record("mean", {xi}, oi, [xi, oi, inv] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            for (double& g : xi->grad) g += oi->grad[0] * inv;
        });
    }
    return out;
}

Tensor sqdist(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sqdist");
    double acc = 0.0;
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a.value()[i] - b.value()[i];
        acc += d * d;
    }
    Tensor out = Tensor::scalar(acc);
    if (tracking({&a, &b})) {
        auto ai = a.impl, bi = b.impl, oi = out.impl;
        Tape::current()->record("sqdist", {ai, bi}, oi, [ai, bi, oi, n] {
            const double g = oi->grad[0];
            const bool ga = ai->requires_grad, gb = bi->requires_grad;
            if (ga) ai->ensure_grad();
            if (gb) bi->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                const double d = 2.0 * (ai->value[i] - bi->value[i]) * g;
                if (ga) ai->grad[i] += d;
                if (gb) bi->grad[i] -= d;
            }
        });
    }
    return out;
}

namespace {

// softmax over contiguous rows of length n; -inf entries produce exactly-zero
// probabilities, full -inf rows and NaN are rejected.
void softmax_rows(const double* in, double* out, int rows, int n) {
    for (int r = 0; r < rows; ++r) {
        const double* x = in + static_cast<std::size_t>(r) * n;
        double* y = out + static_cast<std::size_t>(r) * n;
        double m = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j) {
            if (std::isnan(x[j])) throw NumericError("softmax: NaN input");
            m = std::max(m, x[j]);
        }
        if (std::isinf(m) && m < 0) throw NumericError("softmax: all inputs are -inf");
        double z = 0.0;
        for (int j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - m);
            z += y[j];
        }
        const double inv = 1.0 / z;
        for (int j = 0; j < n; ++j) y[j] *= inv;
    }
}

} // namespace

Tensor softmax(const Tensor& x, int axis) {
    if (x.rank() == 1) {
        if (!(axis == -1 || axis == 0)) throw DimensionError("softmax: bad axis for rank-1");
        if (x.dim(0) < 1) throw ContractError("softmax: empty input");
        Tensor out = make_out(x.shape());
        softmax_rows(x.value().data(), out.value().data(), 1, x.dim(0));
        if (tracking({&x})) {
            auto xi = x.impl, oi = out.impl;
            const int n = x.dim(0);
            Tape::current()->record("softmax", {xi}, oi, [xi, oi, n] {
                if (!xi->requires_grad) return;
                xi->ensure_grad();
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += oi->grad[static_cast<std::size_t>(j)] * oi->value[static_cast<std::size_t>(j)];
                for (int j = 0; j < n; ++j)
                    xi->grad[static_cast<std::size_t>(j)] +=
                        oi->value[static_cast<std::size_t>(j)] * (oi->grad[static_cast<std::size_t>(j)] - dot);
            });
        }
        return out;
    }
    if (x.rank() == 2) {
        if (axis == -1) axis = 1;
        if (axis == 0) return transpose(softmax(transpose(x), 1));
        if (axis != 1) throw DimensionError("softmax: bad axis for rank-2");
        const int m = x.dim(0), n = x.dim(1);
        Tensor out = make_out(x.shape());
        softmax_rows(x.value().data(), out.value().data(), m, n);
        if (tracking({&x})) {
            auto xi = x.impl, oi = out.impl;
            Tape::current()->record("softmax", {xi}, oi, [xi, oi, m, n] {
                if (!xi->requires_grad) return;
                xi->ensure_grad();
                for (int r = 0; r < m; ++r) {
                    const double* y = oi->value.data() + static_cast<std::size_t>(r) * n;
                    const double* gy = oi->grad.data() + static_cast<std::size_t>(r) * n;
                    double* gx = xi->grad.data() + static_cast<std::size_t>(r) * n;
                    double dot = 0.0;
                    for (int j = 0; j < n; ++j) dot += gy[j] * y[j];
                    for (int j = 0; j < n; ++j) gx[j] += y[j] * (gy[j] - dot);
                }
            });
        }
        return out;
    }
    throw DimensionError("softmax: rank > 2 unsupported");
}

Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw ConfigError("dropout: rate must be in [0,1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return x;
    const double scale = 1.0 / (1.0 - rate);
    const std::size_t n = x.size();
    auto mask = std::make_shared<std::vector<double>>(n);
    for (std::size_t i = 0; i < n; ++i)
        (*mask)[i] = rng.bernoulli(rate) ? 0.0 : scale;
    Tensor out = make_out(x.shape());
    for (std::size_t i = 0; i < n; ++i) out.value()[i] = x.value()[i] * (*mask)[i];
    if (tracking({&x})) {
        auto xi = x.impl, oi = out.impl;
        Tape::current()->record("dropout", {xi}, oi, [xi, oi, mask, n] {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) xi->grad[i] += oi->grad[i] * (*mask)[i];
        });
    }
    return out;
}

Tensor embed_rows(const Tensor& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw DimensionError("embed_rows: table must be rank-2");
    const int v = table.dim(0), d = table.dim(1);
    for (int id : ids)
        if (id < 0 || id >= v)
            throw DataError("embed_rows: token id " + std::to_string(id) +
                            " outside vocab of size " + std::to_string(v));
    const int m = static_cast<int>(ids.size());
    Tensor out = make_out({m, d});
    for (int i = 0; i < m; ++i)
        std::memcpy(out.value().data() + static_cast<std::size_t>(i) * d,
                    table.value().data() + static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * d,
                    sizeof(double) * d);
    if (tracking({&table})) {
        auto ti = table.impl, oi = out.impl;
        auto ids_copy = std::make_shared<std::vector<int>>(ids);
        Tape::current()->record("embed_rows", {ti}, oi, [ti, oi, ids_copy, d] {
            if (!ti->requires_grad) return;
            ti->ensure_grad();
            for (std::size_t i = 0; i < ids_copy->size(); ++i) {
                double* row = ti->grad.data() + static_cast<std::size_t>((*ids_copy)[i]) * d;
                const double* g = oi->grad.data() + i * d;
                for (int j = 0; j < d; ++j) row[j] += g[j];
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps) {
    const bool vec = x.rank() == 1;
    if (!vec && x.rank() != 2) throw DimensionError("layer_norm: rank-1 or rank-2 required");
    const int n = vec ? x.dim(0) : x.dim(1);
    const int m = vec ? 1 : x.dim(0);
    if (gain.rank() != 1 || gain.dim(0) != n || shift.rank() != 1 || shift.dim(0) != n)
        throw DimensionError("layer_norm: gain/shift must be [n]");
    Tensor out = make_out(x.shape());
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m));
    for (int r = 0; r < m; ++r) {
        const double* row = x.value().data() + static_cast<std::size_t>(r) * n;
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += row[j];
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<std::size_t>(r)] = is;
        for (int j = 0; j < n; ++j) {
            const double xh = (row[j] - mu) * is;
            (*xhat)[static_cast<std::size_t>(r) * n + j] = xh;
            out.value()[static_cast<std::size_t>(r) * n + j] =
                gain.value()[static_cast<std::size_t>(j)] * xh + shift.value()[static_cast<std::size_t>(j)];
        }
    }
    if (tracking({&x, &gain, &shift})) {
        auto xi = x.impl, gi = gain.impl, si = shift.impl, oi = out.impl;
        Tape::current()->record("layer_norm", {xi, gi, si}, oi, [xi, gi, si, oi, xhat, inv_std, m, n] {
            if (gi->requires_grad) gi->ensure_grad();
            if (si->requires_grad) si->ensure_grad();
            if (xi->requires_grad) xi->ensure_grad();
            for (int r = 0; r < m; ++r) {
                const double* gy = oi->grad.data() + static_cast<std::size_t>(r) * n;
                const double* xh = xhat->data() + static_cast<std::size_t>(r) * n;
                if (gi->requires_grad)
                    for (int j = 0; j < n; ++j) gi->grad[static_cast<std::size_t>(j)] += gy[j] * xh[j];
                if (si->requires_grad)
                    for (int j = 0; j < n; ++j) si->grad[static_cast<std::size_t>(j)] += gy[j];
                if (xi->requires_grad) {
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (int j = 0; j < n; ++j) {
                        const double gj = gy[j] * gi->value[static_cast<std::size_t>(j)];
                        sum_g += gj;
                        sum_gx += gj * xh[j];
                    }
                    const double is = (*inv_std)[static_cast<std::size_t>(r)];
                    for (int j = 0; j < n; ++j) {
                        const double gj = gy[j] * gi->value[static_cast<std::size_t>(j)];
                        xi->grad[static_cast<std::size_t>(r) * n + j] +=
                            is * (gj - sum_g / n - xh[j] * sum_gx / n);
                    }
                }
            }
        });
    }
    return out;
}

} // namespace quotrec
