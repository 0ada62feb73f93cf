#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string_view>
#include <vector>

#include "quotrec/common.hpp"
#include "quotrec/rng.hpp"

namespace quotrec {

class Rng;

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);

struct TensorImpl {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // empty until first needed
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

// Handle to a dense row-major double array. Copies are shallow (shared
// storage); use detached()/clone semantics explicitly where needed.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape s);
    static Tensor full(Shape s, double v);
    static Tensor scalar(double v);
    static Tensor from(Shape s, std::vector<double> v);
    static Tensor param(Shape s, std::vector<double> v); // requires_grad = true

    bool defined() const { return impl != nullptr; }
    const Shape& shape() const { return impl->shape; }
    int rank() const { return static_cast<int>(impl->shape.size()); }
    int dim(int i) const { return impl->shape[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return impl->value.size(); }

    std::vector<double>& value() { return impl->value; }
    const std::vector<double>& value() const { return impl->value; }
    std::vector<double>& grad() {
        impl->ensure_grad();
        return impl->grad;
    }
    bool has_grad() const { return !impl->grad.empty(); }

    double item() const;
    double at(int i) const { return impl->value[static_cast<std::size_t>(i)]; }
    double at(int i, int j) const {
        return impl->value[static_cast<std::size_t>(i) * dim(1) + j];
    }

    bool requires_grad() const { return impl && impl->requires_grad; }
    void set_requires_grad(bool b) { impl->requires_grad = b; }
    void zero_grad() {
        if (impl) impl->grad.assign(impl->value.size(), 0.0);
    }

    // value copy with no grad tracking
    Tensor detached() const;

    std::shared_ptr<TensorImpl> impl;
};

// Define-by-run gradient tape. Constructing a Tape makes it current for the
// thread; ops record backward closures while one is active and any input
// requires grad. Single-threaded within one tape.
class Tape {
public:
    struct Node {
        const char* op;
        std::vector<TensorImpl*> inputs;
        TensorImpl* output;
        std::function<void()> backward;
    };

    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* current();

    void record(const char* op, std::vector<std::shared_ptr<TensorImpl>> inputs,
                std::shared_ptr<TensorImpl> output, std::function<void()> backward);

    // Reverse sweep from a scalar loss. Grads of leaf tensors (parameters)
    // accumulate across calls; intermediates are re-seeded every call.
    void backward(const Tensor& loss);

    std::size_t node_count() const { return nodes_.size(); }
    std::size_t count_op(std::string_view op) const;
    bool op_touches(std::string_view op, const TensorImpl* t) const;

private:
    std::vector<Node> nodes_;
    std::vector<std::shared_ptr<TensorImpl>> retained_;
    Tape* prev_ = nullptr;
};

namespace testhook {
// When set to an op name, Tape::backward perturbs that op's upstream gradient,
// so gradient checks must fail. Test harness sanity only.
extern const char* corrupt_backward_op;
} // namespace testhook

// ---- primitive ops ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor addc(const Tensor& a, double c);
Tensor mulc(const Tensor& a, double c);
Tensor add_row(const Tensor& x, const Tensor& v); // v added to every row of x

Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

Tensor concat(const std::vector<Tensor>& parts);     // 1-D
Tensor stack_rows(const std::vector<Tensor>& rows);  // list of 1-D -> 2-D
Tensor concat_cols(const std::vector<Tensor>& mats); // 2-D, same row count
Tensor slice_row(const Tensor& x, int i);            // 2-D -> 1-D
Tensor slice_rows(const Tensor& x, int from, int to);
Tensor slice_cols(const Tensor& x, int from, int to);
Tensor at_index(const Tensor& v, int i); // 1-D -> scalar

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sqdist(const Tensor& a, const Tensor& b); // ||a-b||^2

// axis -1 means last. Stable (max-subtraction); -inf inputs allowed and give
// exactly-zero weight, NaN raises NumericError.
Tensor softmax(const Tensor& x, int axis = -1);

// inverted dropout; identity when !training or rate == 0
Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng);

Tensor embed_rows(const Tensor& table, const std::vector<int>& ids);

// row-wise layer normalization with learnable gain/shift
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                  double eps = 1e-5);

} // namespace quotrec
