#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "plumeemu/adam.hpp"
#include "plumeemu/error.hpp"
#include "plumeemu/graph.hpp"
#include "plumeemu/tensor.hpp"

using namespace plumeemu;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
    return t;
}

// Builds a graph from leaf values and returns sum(output * weights).
using Builder = std::function<Var(Graph&, const std::vector<Var>&)>;

struct FdResult {
    double worst = 0.0;
    std::size_t checked = 0;
};

FdResult finite_difference_check(const Builder& build, std::vector<Tensor> inputs, std::mt19937_64& rng) {
    Tensor weights;
    auto evaluate = [&](const std::vector<Tensor>& values, Graph& g, std::vector<Var>& leaves) {
        leaves.clear();
        for (const auto& v : values) leaves.push_back(g.parameter(v));
        const Var out = build(g, leaves);
        if (weights.size() == 0) weights = random_tensor(g.value(out).shape(), rng);
        return g.sum(g.mul(out, g.constant(weights)));
    };

    Graph g;
    std::vector<Var> leaves;
    const Var loss = evaluate(inputs, g, leaves);
    g.backward(loss);

    FdResult res;
    const double h = 1e-5;
    for (std::size_t p = 0; p < inputs.size(); ++p) {
        const Tensor analytic = g.grad(leaves[p]);
        for (std::size_t i = 0; i < inputs[p].size(); ++i) {
            const double saved = inputs[p][i];
            inputs[p][i] = saved + h;
            Graph gp;
            std::vector<Var> lp;
            const double fp = gp.value(evaluate(inputs, gp, lp))[0];
            inputs[p][i] = saved - h;
            Graph gm;
            std::vector<Var> lm;
            const double fm = gm.value(evaluate(inputs, gm, lm))[0];
            inputs[p][i] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
            res.worst = std::max(res.worst, std::abs(a - numeric) / denom);
            ++res.checked;
        }
    }
    return res;
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("tensor construction checks element count") {
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
    CHECK_THROWS_AS(t.reshaped({4, 2}), DimensionError);
}

TEST_CASE("conv2d examples") {
    SUBCASE("zero input gives zero output") {
        std::mt19937_64 rng(1);
        const Tensor out = ops::conv2d(Tensor({1, 3, 3}), random_tensor({2, 1, 2, 2}, rng), Tensor({2}), 1, 0);
        for (double v : out.values()) CHECK(v == 0.0);
    }
    SUBCASE("identity kernel is exact") {
        std::mt19937_64 rng(2);
        const Tensor x = random_tensor({1, 5, 4}, rng);
        const Tensor out = ops::conv2d(x, Tensor({1, 1, 1, 1}, 1.0), Tensor({1}), 1, 0);
        CHECK(out.shape() == x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(out[i] == x[i]);
    }
    SUBCASE("hand-summed 2x2 windows") {
        const Tensor x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
        const Tensor out = ops::conv2d(x, Tensor({1, 1, 2, 2}, 1.0), Tensor({1}), 1, 0);
        REQUIRE(out.shape() == Shape{1, 2, 2});
        CHECK(out[0] == 12.0);
        CHECK(out[1] == 16.0);
        CHECK(out[2] == 24.0);
        CHECK(out[3] == 28.0);
    }
    SUBCASE("output size formula with stride and padding") {
        const Tensor out = ops::conv2d(Tensor({1, 7, 7}), Tensor({3, 1, 3, 3}), Tensor({3}), 2, 1);
        CHECK(out.shape() == Shape{3, 4, 4});
    }
    SUBCASE("channel mismatch") {
        CHECK_THROWS_AS(ops::conv2d(Tensor({2, 3, 3}), Tensor({1, 1, 2, 2}), Tensor({1}), 1, 0), DimensionError);
    }
}

TEST_CASE("conv2d_transpose examples") {
    SUBCASE("zero input") {
        std::mt19937_64 rng(3);
        const Tensor out =
            ops::conv2d_transpose(Tensor({2, 3, 3}), random_tensor({2, 1, 3, 3}, rng), Tensor({1}), 2, 1, 1);
        for (double v : out.values()) CHECK(v == 0.0);
    }
    SUBCASE("scalar product") {
        const Tensor out = ops::conv2d_transpose(Tensor({1, 1, 1}, {3.0}), Tensor({1, 1, 1, 1}, {-2.5}),
                                                 Tensor({1}), 1, 0);
        REQUIRE(out.size() == 1);
        CHECK(out[0] == -7.5);
    }
    SUBCASE("matches the transposed conv2d matrix on 4x4") {
        std::mt19937_64 rng(4);
        const Tensor k = random_tensor({2, 1, 3, 3}, rng);  // conv: 1 -> 2 channels
        const int stride = 2, padding = 1;
        const Tensor zero_bias_out({2});
        const std::size_t n_in = 16;
        const Tensor probe = ops::conv2d(Tensor({1, 4, 4}), k, zero_bias_out, stride, padding);
        const std::size_t n_out = probe.size();
        // Column j of M is conv2d(e_j).
        std::vector<std::vector<double>> m(n_out, std::vector<double>(n_in));
        for (std::size_t j = 0; j < n_in; ++j) {
            Tensor e({1, 4, 4});
            e[j] = 1.0;
            const Tensor col = ops::conv2d(e, k, zero_bias_out, stride, padding);
            for (std::size_t i = 0; i < n_out; ++i) m[i][j] = col[i];
        }
        const Tensor y = random_tensor(probe.shape(), rng);
        // conv2d kernels [C_out, C_in] read as transposed-conv kernels [C_in', C_out'] with C_in' = 2.
        const Tensor xt = ops::conv2d_transpose(y, k, Tensor(), stride, padding, 1);
        REQUIRE(xt.shape() == Shape{1, 4, 4});
        for (std::size_t j = 0; j < n_in; ++j) {
            double expect = 0.0;
            for (std::size_t i = 0; i < n_out; ++i) expect += m[i][j] * y[i];
            CHECK(xt[j] == doctest::Approx(expect).epsilon(1e-12));
        }
    }
    SUBCASE("stride 2 after stride 2 conv doubles back") {
        const Tensor down = ops::conv2d(Tensor({1, 8, 8}, 1.0), Tensor({1, 1, 3, 3}, 0.1), Tensor({1}), 2, 1);
        CHECK(down.shape() == Shape{1, 4, 4});
        const Tensor up = ops::conv2d_transpose(down, Tensor({1, 1, 3, 3}, 0.1), Tensor({1}), 2, 1, 1);
        CHECK(up.shape() == Shape{1, 8, 8});
    }
    SUBCASE("channel mismatch") {
        CHECK_THROWS_AS(ops::conv2d_transpose(Tensor({2, 3, 3}), Tensor({1, 1, 3, 3}), Tensor({1}), 1, 1),
                        DimensionError);
    }
}

TEST_CASE("max_pool2d examples") {
    const Tensor c = ops::max_pool2d(Tensor({2, 4, 6}, 0.7), 2);
    CHECK(c.shape() == Shape{2, 2, 3});
    for (double v : c.values()) CHECK(v == 0.7);

    const Tensor x({1, 2, 2}, {1, 2, 3, 4});
    const Tensor m = ops::max_pool2d(x, 2);
    REQUIRE(m.size() == 1);
    CHECK(m[0] == 4.0);

    Graph g;
    const Var in = g.parameter(x);
    g.backward(g.sum(g.max_pool2d(in, 2)));
    const Tensor& grad = g.grad(in);
    CHECK(grad[0] == 0.0);
    CHECK(grad[1] == 0.0);
    CHECK(grad[2] == 0.0);
    CHECK(grad[3] == 1.0);

    CHECK_THROWS_AS(ops::max_pool2d(Tensor({1, 3, 4}), 2), DimensionError);
}

TEST_CASE("max_pool2d ties route to the first maximum") {
    Graph g;
    const Var in = g.parameter(Tensor({1, 2, 2}, {5, 5, 5, 5}));
    g.backward(g.sum(g.max_pool2d(in, 2)));
    CHECK(g.grad(in)[0] == 1.0);
    CHECK(g.grad(in)[1] == 0.0);
    CHECK(g.grad(in)[3] == 0.0);
}

TEST_CASE("activation examples") {
    CHECK(ops::selu(Tensor::scalar(0.0))[0] == 0.0);
    CHECK(ops::leaky_relu(Tensor::scalar(-1.0), 0.3)[0] == doctest::Approx(-0.3).epsilon(1e-15));
    CHECK(ops::leaky_relu(Tensor::scalar(2.0), 0.3)[0] == 2.0);
    const double expected = ops::kSeluScale * ops::kSeluAlpha * (std::exp(-1.0) - 1.0);
    CHECK(ops::selu(Tensor::scalar(-1.0))[0] == doctest::Approx(expected).epsilon(1e-15));
    CHECK(ops::selu(Tensor::scalar(-1.0))[0] == doctest::Approx(-1.1113).epsilon(1e-4));
}

TEST_CASE("dense examples") {
    const Tensor x = Tensor::vector({1.5, -2.0});
    const Tensor id = ops::dense(x, Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}));
    CHECK(id[0] == 1.5);
    CHECK(id[1] == -2.0);
    const Tensor b = ops::dense(x, Tensor({2, 2}), Tensor::vector({3, 4}));
    CHECK(b[0] == 3.0);
    CHECK(b[1] == 4.0);
    const Tensor h = ops::dense(Tensor::vector({1, 1}), Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2}));
    CHECK(h[0] == 3.0);
    CHECK(h[1] == 7.0);
    CHECK_THROWS_AS(ops::dense(Tensor::vector({1, 2, 3}), Tensor({2, 2}), Tensor({2})), DimensionError);
}

TEST_CASE("backward examples") {
    SUBCASE("constant loss gives zero gradients") {
        Graph g;
        const Var p = g.parameter(Tensor({3}, 2.0));
        const Var c = g.constant(Tensor::scalar(4.0));
        g.backward(c);
        for (double v : g.grad(p).values()) CHECK(v == 0.0);
    }
    SUBCASE("sum of parameters gives ones") {
        Graph g;
        const Var a = g.parameter(Tensor({2, 2}, 0.3));
        const Var b = g.parameter(Tensor({2, 2}, -1.0));
        g.backward(g.sum(g.add(a, b)));
        for (double v : g.grad(a).values()) CHECK(v == 1.0);
        for (double v : g.grad(b).values()) CHECK(v == 1.0);
    }
    SUBCASE("non-scalar loss is a contract error") {
        Graph g;
        const Var a = g.parameter(Tensor({3}, 1.0));
        CHECK_THROWS_AS(g.backward(a), ContractError);
    }
}

TEST_CASE("composite network gradients match finite differences") {
    std::mt19937_64 rng(11);
    const Builder net = [](Graph& g, const std::vector<Var>& v) {
        Var h = g.conv2d(v[0], v[1], v[2], 1, 1);
        h = g.selu(h);
        h = g.max_pool2d(h, 2);
        h = g.reshape(h, {8});
        h = g.leaky_relu(h, 0.3);
        h = g.dense(h, v[3], v[4]);
        Var s = g.reshape(g.dense(h, v[5], v[6]), {2, 1, 1});
        s = g.conv2d_transpose(s, v[7], v[8], 2, 1, 1);
        return g.add(g.square(s), g.scale(g.exp(g.add_scalar(s, -1.0)), 0.5));
    };
    const auto res = finite_difference_check(
        net,
        {random_tensor({1, 4, 4}, rng), random_tensor({2, 1, 3, 3}, rng), random_tensor({2}, rng),
         random_tensor({3, 8}, rng), random_tensor({3}, rng), random_tensor({2, 3}, rng), random_tensor({2}, rng),
         random_tensor({2, 1, 3, 3}, rng), random_tensor({1}, rng)},
        rng);
    CHECK(res.checked > 60);
    CHECK(res.worst < 1e-4);
}

TEST_CASE("layer gradients over random configurations") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> side(2, 5), chans(1, 3), kern(1, 3), strd(1, 2), pad(0, 1);
    std::size_t configs = 0;
    double worst = 0.0;
    for (int trial = 0; trial < 120; ++trial) {
        const int op = trial % 8;
        Builder build;
        std::vector<Tensor> inputs;
        const auto c_in = static_cast<std::size_t>(chans(rng)), c_out = static_cast<std::size_t>(chans(rng));
        const int k = kern(rng), s = strd(rng), p = std::min(pad(rng), k - 1);
        const auto hw = static_cast<std::size_t>(std::max(side(rng), k));
        switch (op) {
        case 0:
            inputs = {random_tensor({c_in, hw, hw + 1}, rng), random_tensor({c_out, c_in, std::size_t(k), std::size_t(k)}, rng),
                      random_tensor({c_out}, rng)};
            build = [s, p](Graph& g, const std::vector<Var>& v) { return g.conv2d(v[0], v[1], v[2], s, p); };
            break;
        case 1: {
            const int op_pad = s > 1 ? 1 : 0;
            inputs = {random_tensor({c_in, hw, hw}, rng), random_tensor({c_in, c_out, std::size_t(k), std::size_t(k)}, rng),
                      random_tensor({c_out}, rng)};
            build = [s, p, op_pad](Graph& g, const std::vector<Var>& v) {
                return g.conv2d_transpose(v[0], v[1], v[2], s, p, op_pad);
            };
            break;
        }
        case 2: {
            const std::size_t w = std::size_t(s + 1);
            inputs = {random_tensor({c_in, 2 * w, 3 * w}, rng)};
            build = [w](Graph& g, const std::vector<Var>& v) { return g.max_pool2d(v[0], int(w)); };
            break;
        }
        case 3:
            inputs = {random_tensor({c_in, hw}, rng, -2.0, 2.0)};
            build = [](Graph& g, const std::vector<Var>& v) { return g.selu(v[0]); };
            break;
        case 4:
            inputs = {random_tensor({c_in, hw}, rng, -2.0, 2.0)};
            build = [](Graph& g, const std::vector<Var>& v) { return g.leaky_relu(v[0], 0.3); };
            break;
        case 5:
            inputs = {random_tensor({hw}, rng), random_tensor({c_out + 1, hw}, rng), random_tensor({c_out + 1}, rng)};
            build = [](Graph& g, const std::vector<Var>& v) { return g.dense(v[0], v[1], v[2]); };
            break;
        case 6:
            inputs = {random_tensor({hw, c_in}, rng), random_tensor({hw, c_in}, rng)};
            build = [](Graph& g, const std::vector<Var>& v) {
                return g.sub(g.mul(v[0], v[1]), g.square(v[1]));
            };
            break;
        default:
            inputs = {random_tensor({hw, c_in}, rng)};
            build = [](Graph& g, const std::vector<Var>& v) { return g.exp(g.scale(g.add_scalar(v[0], 0.2), 1.3)); };
            break;
        }
        const auto res = finite_difference_check(build, inputs, rng);
        worst = std::max(worst, res.worst);
        ++configs;
        if (res.worst >= 1e-4) FAIL_CHECK("op " << op << " trial " << trial << " rel error " << res.worst);
    }
    CHECK(configs >= 100);
    CHECK(worst < 1e-4);
}

TEST_CASE("forward passes on finite inputs stay finite") {
    std::mt19937_64 rng(5);
    const Tensor x = random_tensor({2, 6, 6}, rng, -30.0, 30.0);
    CHECK(ops::selu(x).all_finite());
    CHECK(ops::leaky_relu(x, 0.3).all_finite());
    CHECK(ops::conv2d(x, random_tensor({3, 2, 3, 3}, rng), Tensor({3}), 1, 1).all_finite());
    CHECK(ops::max_pool2d(x, 3).all_finite());
}

TEST_CASE("adam examples") {
    SUBCASE("zero gradient is a no-op that still counts the step") {
        std::vector<Tensor> params{Tensor({3}, {1.0, -2.0, 0.5})};
        AdamState st(params, AdamConfig{});
        adam_step(params, {Tensor({3})}, st);
        CHECK(st.step_count == 1);
        CHECK(params[0][0] == 1.0);
        CHECK(params[0][1] == -2.0);
        CHECK(params[0][2] == 0.5);
        CHECK(st.first_moment[0].shape() == params[0].shape());
        CHECK(st.second_moment[0].shape() == params[0].shape());
    }
    SUBCASE("first step moves by about lr") {
        std::vector<Tensor> params{Tensor::scalar(1.0)};
        AdamConfig cfg;
        cfg.learning_rate = 1e-3;
        cfg.epsilon = 1e-8;
        AdamState st(params, cfg);
        adam_step(params, {Tensor::scalar(2.0)}, st);
        CHECK(params[0][0] == doctest::Approx(0.999).epsilon(1e-8));
    }
    SUBCASE("two steps decrease a quadratic") {
        std::vector<Tensor> params{Tensor({2}, {3.0, -1.0})};
        AdamConfig cfg;
        cfg.learning_rate = 0.1;
        AdamState st(params, cfg);
        auto f = [&] { return params[0][0] * params[0][0] + 4.0 * params[0][1] * params[0][1]; };
        double prev = f();
        for (int i = 0; i < 2; ++i) {
            adam_step(params, {Tensor({2}, {2.0 * params[0][0], 8.0 * params[0][1]})}, st);
            const double now = f();
            CHECK(now < prev);
            prev = now;
        }
        CHECK(st.step_count == 2);
    }
    SUBCASE("shape mismatch") {
        std::vector<Tensor> params{Tensor({2})};
        AdamState st(params, AdamConfig{});
        CHECK_THROWS_AS(adam_step(params, {Tensor({3})}, st), DimensionError);
    }
}

}  // TEST_SUITE
