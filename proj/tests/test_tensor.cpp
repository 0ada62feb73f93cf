#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "quotrec/tensor.hpp"

using namespace quotrec;

namespace {

// independent central-difference oracle used throughout this file
double numeric_grad(const std::function<double()>& f, double& slot, double h = 1e-5) {
    const double orig = slot;
    slot = orig + h;
    const double up = f();
    slot = orig - h;
    const double down = f();
    slot = orig;
    return (up - down) / (2.0 * h);
}

Tensor rand_tensor(Rng& rng, Shape s, bool grad = true) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-2.0, 2.0);
    Tensor t = Tensor::from(std::move(s), std::move(v));
    t.set_requires_grad(grad);
    return t;
}

// checks tape gradients of a scalar-valued forward against the oracle for
// every entry of every param
double max_rel_err(const std::function<Tensor()>& fwd, std::vector<Tensor> params) {
    for (auto& p : params) p.zero_grad();
    {
        Tape tape;
        tape.backward(fwd());
    }
    double worst = 0.0;
    auto scalar_fwd = [&] { return fwd().item(); };
    for (auto& p : params) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double n = numeric_grad(scalar_fwd, p.value()[i]);
            const double a = p.impl->grad.empty() ? 0.0 : p.impl->grad[i];
            const double err =
                std::fabs(a - n) / std::max({std::fabs(a), std::fabs(n), 1e-4});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

} // namespace

TEST_CASE("matmul basic examples") {
    const Tensor I = Tensor::from({2, 2}, {1, 0, 0, 1});
    const Tensor A = Tensor::from({2, 2}, {1, 2, 3, 4});
    const Tensor P = matmul(I, A);
    CHECK(P.value() == std::vector<double>{1, 2, 3, 4});

    const Tensor r = Tensor::from({1, 2}, {1, 2});
    const Tensor c = Tensor::from({2, 1}, {3, 4});
    CHECK(matmul(r, c).value() == std::vector<double>{11});

    CHECK_THROWS_AS(matmul(Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}), A), DimensionError);
}

TEST_CASE("matmul gradient matches finite differences") {
    Rng rng(11);
    Tensor A = rand_tensor(rng, {3, 3});
    Tensor B = rand_tensor(rng, {3, 3});
    const double err = max_rel_err([&] { return sum(matmul(A, B)); }, {A, B});
    CHECK(err < 1e-6);
}

TEST_CASE("softmax values and stability") {
    const Tensor u = softmax(Tensor::from({3}, {0, 0, 0}));
    for (int i = 0; i < 3; ++i) CHECK(u.at(i) == doctest::Approx(1.0 / 3).epsilon(1e-12));

    const Tensor v = softmax(Tensor::from({2}, {0.0, std::log(2.0)}));
    CHECK(v.at(0) == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(v.at(1) == doctest::Approx(2.0 / 3).epsilon(1e-12));

    const Tensor big = softmax(Tensor::from({2}, {1000.0, 0.0}));
    CHECK(big.at(0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(big.at(1) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(std::isfinite(big.at(0)));

    CHECK_THROWS_AS(softmax(Tensor::from({2}, {std::nan(""), 0.0})), NumericError);
}

TEST_CASE("softmax rows sum to one and are permutation-equivariant") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(6));
        Tensor x = rand_tensor(rng, {n}, false);
        const Tensor y = softmax(x);
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += y.at(i);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));

        // rotate input, expect rotated output
        std::vector<double> rot(x.value());
        std::rotate(rot.begin(), rot.begin() + 1, rot.end());
        const Tensor yr = softmax(Tensor::from({n}, rot));
        for (int i = 0; i < n; ++i)
            CHECK(yr.at(i) == doctest::Approx(y.at((i + 1) % n)).epsilon(1e-12));
    }
}

TEST_CASE("masked softmax gives exactly zero weight") {
    const double ninf = -std::numeric_limits<double>::infinity();
    const Tensor y = softmax(Tensor::from({3}, {1.0, ninf, 2.0}));
    CHECK(y.at(1) == 0.0);
    CHECK(y.at(0) + y.at(2) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(softmax(Tensor::from({2}, {ninf, ninf})), NumericError);
}

TEST_CASE("elementwise examples") {
    const Tensor v = Tensor::from({3}, {1.5, -2.0, 0.25});
    CHECK(sqdist(v, v).item() == 0.0);
    CHECK(sqdist(Tensor::from({2}, {1, 0}), Tensor::from({2}, {0, 1})).item() == 2.0);

    Tensor x = Tensor::from({1}, {0.0});
    x.set_requires_grad(true);
    {
        Tape tape;
        tape.backward(tanh(x));
    }
    CHECK(x.grad()[0] == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(add(v, Tensor::from({2}, {1, 2})), DimensionError);
}

TEST_CASE("backward fills ones for sum and accumulates across calls") {
    Rng rng(3);
    Tensor x = rand_tensor(rng, {2, 3});
    {
        Tape tape;
        const Tensor loss = sum(x);
        tape.backward(loss);
        for (double g : x.grad()) CHECK(g == 1.0);
        tape.backward(loss);
        for (double g : x.grad()) CHECK(g == 2.0); // exact doubling, no zeroing
    }

    Tape tape;
    CHECK_THROWS_AS(tape.backward(x), ContractError);
}

TEST_CASE("backward of sqdist(M r, t) w.r.t. M matches finite differences") {
    Rng rng(17);
    Tensor M = rand_tensor(rng, {4, 4});
    Tensor r = rand_tensor(rng, {4}, false);
    Tensor t = rand_tensor(rng, {4}, false);
    const double err = max_rel_err([&] { return sqdist(matmul(M, r), t); }, {M});
    CHECK(err < 1e-5);
}

TEST_CASE("tensors created outside a tape never accumulate gradient") {
    Tensor c = Tensor::from({2}, {1.0, 2.0}); // no requires_grad
    Tensor p = Tensor::from({2}, {3.0, 4.0});
    p.set_requires_grad(true);
    Tape tape;
    tape.backward(sum(mul(c, p)));
    CHECK(!c.has_grad());
    CHECK(p.grad() == std::vector<double>{1.0, 2.0});
}

TEST_CASE("every primitive op passes finite-difference checks on random shapes") {
    struct Case {
        const char* name;
        std::function<double(Rng&)> run; // returns max rel err for one seed
    };
    auto vec = [](Rng& rng, int n) {
        std::vector<double> v(static_cast<std::size_t>(n));
        for (double& x : v) x = rng.uniform(-1.5, 1.5);
        return v;
    };
    std::vector<Case> cases = {
        {"matmul", [&](Rng& rng) {
             const int m = 1 + static_cast<int>(rng.below(4));
             const int k = 1 + static_cast<int>(rng.below(4));
             const int n = 1 + static_cast<int>(rng.below(4));
             Tensor a = rand_tensor(rng, {m, k});
             Tensor b = rand_tensor(rng, {k, n});
             return max_rel_err([&] { return mean(tanh(matmul(a, b))); }, {a, b});
         }},
        {"matvec", [&](Rng& rng) {
             const int m = 1 + static_cast<int>(rng.below(4));
             const int k = 1 + static_cast<int>(rng.below(4));
             Tensor a = rand_tensor(rng, {m, k});
             Tensor x = rand_tensor(rng, {k});
             return max_rel_err([&] { return sum(sigmoid(matmul(a, x))); }, {a, x});
         }},
        {"transpose", [&](Rng& rng) {
             Tensor a = rand_tensor(rng, {3, 2});
             return max_rel_err([&] { return sum(tanh(transpose(a))); }, {a});
         }},
        {"add/sub/mul", [&](Rng& rng) {
             Tensor a = rand_tensor(rng, {4});
             Tensor b = rand_tensor(rng, {4});
             return max_rel_err([&] { return sum(mul(add(a, b), sub(a, b))); }, {a, b});
         }},
        {"addc/mulc", [&](Rng& rng) {
             Tensor a = rand_tensor(rng, {3});
             return max_rel_err([&] { return sum(mulc(addc(a, 0.7), -1.3)); }, {a});
         }},
        {"add_row", [&](Rng& rng) {
             Tensor a = rand_tensor(rng, {3, 4});
             Tensor v = rand_tensor(rng, {4});
             return max_rel_err([&] { return mean(tanh(add_row(a, v))); }, {a, v});
         }},
        {"tanh/sigmoid/relu/exp/log", [&](Rng& rng) {
             Tensor a = rand_tensor(rng, {5});
             return max_rel_err(
                 [&] { return sum(log(addc(exp(relu(tanh(sigmoid(a)))), 1.0))); }, {a});
         }},
        {"concat/stack_rows/concat_cols", [&](Rng& rng) {
             Tensor a = rand_tensor(rng, {3});
             Tensor b = rand_tensor(rng, {2});
             Tensor m1 = rand_tensor(rng, {2, 2});
             Tensor m2 = rand_tensor(rng, {2, 3});
             return max_rel_err(
                 [&] {
                     return add(sum(tanh(concat({a, b}))),
                                add(sum(tanh(stack_rows({b, b}))),
                                    sum(tanh(concat_cols({m1, m2})))));
                 },
                 {a, b, m1, m2});
         }},
        {"slices", [&](Rng& rng) {
             Tensor m = rand_tensor(rng, {4, 5});
             return max_rel_err(
                 [&] {
                     return add(sum(tanh(slice_rows(m, 1, 3))),
                                add(sum(tanh(slice_cols(m, 2, 4))),
                                    add(sum(tanh(slice_row(m, 0))),
                                        at_index(slice_row(m, 3), 1))));
                 },
                 {m});
         }},
        {"sum/mean/sqdist", [&](Rng& rng) {
             Tensor a = rand_tensor(rng, {2, 3});
             Tensor b = rand_tensor(rng, {2, 3});
             return max_rel_err([&] { return add(mean(a), sqdist(a, b)); }, {a, b});
         }},
        {"softmax", [&](Rng& rng) {
             const int n = 2 + static_cast<int>(rng.below(5));
             Tensor a = rand_tensor(rng, {n});
             return max_rel_err([&] { return at_index(softmax(a), 0); }, {a});
         }},
        {"softmax2d", [&](Rng& rng) {
             Tensor a = rand_tensor(rng, {3, 4});
             Tensor w = rand_tensor(rng, {3, 4}, false);
             return max_rel_err([&] { return sum(mul(softmax(a, 1), w)); }, {a});
         }},
        {"layer_norm", [&](Rng& rng) {
             Tensor x = rand_tensor(rng, {3, 6});
             Tensor g = rand_tensor(rng, {6});
             Tensor b = rand_tensor(rng, {6});
             return max_rel_err([&] { return mean(tanh(layer_norm(x, g, b))); }, {x, g, b});
         }},
        {"embed_rows", [&](Rng& rng) {
             Tensor table = rand_tensor(rng, {6, 3});
             const std::vector<int> ids = {0, 2, 2, 5};
             return max_rel_err([&] { return sum(tanh(embed_rows(table, ids))); }, {table});
         }},
    };
    for (const auto& c : cases) {
        CAPTURE(c.name);
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            Rng rng(1000 * seed + 77);
            CHECK(c.run(rng) < 1e-4);
        }
    }
}

TEST_CASE("forward results are bit-identical across runs") {
    auto run = [] {
        Rng rng(99);
        Tensor a = rand_tensor(rng, {8, 8}, false);
        Tensor b = rand_tensor(rng, {8, 8}, false);
        return softmax(matmul(tanh(a), sigmoid(b)), 1).value();
    };
    CHECK(run() == run());
}

TEST_CASE("dropout") {
    Rng rng(1);
    const Tensor x = Tensor::full({100}, 1.0);
    CHECK(dropout(x, 0.0, true, rng).value() == x.value());  // rate 0: identity
    CHECK(dropout(x, 0.5, false, rng).value() == x.value()); // eval: identity
    CHECK_THROWS_AS(dropout(x, 1.0, true, rng), ConfigError);
    CHECK_THROWS_AS(dropout(x, -0.1, true, rng), ConfigError);

    // inverted dropout preserves expectation
    double acc = 0.0;
    const int trials = 10000;
    Rng mc(7);
    for (int t = 0; t < trials; ++t) {
        const Tensor y = dropout(Tensor::full({10}, 1.0), 0.5, true, mc);
        for (double v : y.value()) acc += v;
    }
    CHECK(acc / (trials * 10) == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("tape op inspection") {
    Rng rng(4);
    Tensor M = rand_tensor(rng, {3, 3});
    Tensor r = rand_tensor(rng, {3});
    Tape tape;
    const Tensor y = matmul(M, r);
    CHECK(tape.count_op("matmul") == 1);
    CHECK(tape.op_touches("matmul", M.impl.get()));
    CHECK(!tape.op_touches("matmul", y.impl.get()));
}

TEST_CASE("corrupt-backward hook breaks gradients and names the op") {
    Rng rng(21);
    Tensor a = rand_tensor(rng, {3, 3});
    Tensor b = rand_tensor(rng, {3, 3});
    auto fwd = [&] { return sum(tanh(matmul(a, b))); };
    CHECK(max_rel_err(fwd, {a, b}) < 1e-6);
    testhook::corrupt_backward_op = "matmul";
    CHECK(max_rel_err(fwd, {a, b}) > 1e-3);
    testhook::corrupt_backward_op = nullptr;
}
