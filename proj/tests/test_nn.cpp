#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "rtl/error.hpp"
#include "rtl/nn.hpp"

using namespace rtl;
using namespace rtl::nn;

namespace {

NetworkSpec dense_spec(std::size_t in, std::size_t out) { return {{in}, {LayerKind::dense(out)}, {}}; }

}  // namespace

TEST_CASE("tensor rejects inconsistent shapes") {
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK_THROWS_AS(t.reshape({4}), ShapeError);
    t.reshape({3, 2});
    CHECK(t.shape() == Shape{3, 2});
}

TEST_CASE("dense identity weights pass the input through") {
    Network net(dense_spec(3, 3));
    net.initialize(1);
    auto& w = net.mutable_param("layer1/trunk/w");
    w.fill(0.0);
    for (std::size_t i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
    net.mutable_param("layer1/trunk/b").fill(0.0);
    const Tensor x({1, 3}, std::vector<double>{0.5, -2.0, 7.25});
    CHECK(net.forward(x).output.values() == x.values());
}

TEST_CASE("1x1 convolution with kernel 2 doubles a grid of ones") {
    Network net({{1, 3, 3}, {LayerKind::conv2d(1, 1, 1)}, {}});
    net.mutable_param("layer1/trunk/w").fill(2.0);
    net.mutable_param("layer1/trunk/b").fill(0.0);
    const auto y = net.forward(Tensor({1, 1, 3, 3}, 1.0)).output;
    REQUIRE(y.size() == 9);
    for (double v : y.data()) CHECK(v == 2.0);
}

TEST_CASE("convolution matches a hand-enumerated sum") {
    // 1 input channel, 3x3 input, 2x2 kernel, stride 1 -> 2x2 output.
    Network net({{1, 3, 3}, {LayerKind::conv2d(1, 2, 1)}, {}});
    auto& w = net.mutable_param("layer1/trunk/w");
    const double k[4] = {1, 2, 3, 4};
    for (int i = 0; i < 4; ++i) w[i] = k[i];
    net.mutable_param("layer1/trunk/b")[0] = 0.5;
    Tensor x({1, 1, 3, 3});
    for (int i = 0; i < 9; ++i) x[i] = i + 1;  // 1..9
    const auto y = net.forward(x).output;
    // top-left window (1,2,4,5): 1+4+12+20 = 37
    CHECK(y[0] == doctest::Approx(37.5));
    // top-right (2,3,5,6): 2+6+15+24 = 47
    CHECK(y[1] == doctest::Approx(47.5));
    // bottom-left (4,5,7,8): 4+10+21+32 = 67
    CHECK(y[2] == doctest::Approx(67.5));
    CHECK(y[3] == doctest::Approx(77.5));
}

TEST_CASE("zero padding reads the border as zeros") {
    // 3x3 kernel of ones, padding 1: each output counts the in-bounds cells of its window.
    Network net({{1, 3, 3}, {LayerKind::conv2d(1, 3, 1, 1)}, {}});
    net.mutable_param("layer1/trunk/w").fill(1.0);
    net.mutable_param("layer1/trunk/b").fill(0.0);
    const auto y = net.forward(Tensor({1, 1, 3, 3}, 1.0)).output;
    const double expect[9] = {4, 6, 4, 6, 9, 6, 4, 6, 4};
    for (int i = 0; i < 9; ++i) CHECK(y[i] == expect[i]);
}

TEST_CASE("every input cell reaches the default trunk output") {
    Network net(rainbow_spec(5, 21));
    net.initialize(1);
    std::mt19937_64 rng(2);
    const auto noise = net.sample_noise(rng);
    const auto f = net.forward(oracle::random_tensor({1, 4, 10, 10}, rng), &noise);
    // Perturb each corner cell and check the output moves.
    for (auto [r, c] : {std::pair{0, 0}, std::pair{0, 9}, std::pair{9, 0}, std::pair{9, 9}}) {
        auto x = f.cache.inputs[0];
        x[static_cast<std::size_t>(3 * 100 + r * 10 + c)] += 1.0;
        CHECK(net.forward(x, &noise).output != f.output);
    }
}

TEST_CASE("noisy dense with zero sigma equals dense on the means") {
    std::mt19937_64 rng(3);
    Network noisy({{4}, {LayerKind::noisy_dense(3)}, {}});
    noisy.initialize(9);
    noisy.mutable_param("layer1/trunk/w_sigma").fill(0.0);
    noisy.mutable_param("layer1/trunk/b_sigma").fill(0.0);
    Network plain(dense_spec(4, 3));
    plain.mutable_param("layer1/trunk/w") = noisy.param("layer1/trunk/w_mu");
    plain.mutable_param("layer1/trunk/b") = noisy.param("layer1/trunk/b_mu");
    const auto x = oracle::random_tensor({2, 4}, rng);
    const auto draw = noisy.sample_noise(rng);
    CHECK(noisy.forward(x, &draw).output == plain.forward(x).output);
}

TEST_CASE("noisy dense initialization follows the fan-in rules") {
    Network net({{16}, {LayerKind::noisy_dense(8, 0.5)}, {}});
    net.initialize(4);
    const double bound = 1.0 / std::sqrt(16.0);
    for (double v : net.param("layer1/trunk/w_mu").data()) CHECK(std::abs(v) <= bound);
    for (double v : net.param("layer1/trunk/w_sigma").data()) CHECK(v == doctest::Approx(0.5 / 4.0));
    for (double v : net.param("layer1/trunk/b_sigma").data()) CHECK(v >= 0.0);
}

TEST_CASE("single dense unit gradient against hand value and finite differences") {
    Network net(dense_spec(1, 1));
    net.mutable_param("layer1/trunk/w")[0] = 3.0;
    net.mutable_param("layer1/trunk/b")[0] = 0.0;
    const Tensor x({1, 1}, 2.0);
    // loss = y^2, dL/dy = 2y
    const auto f = net.forward(x);
    const auto g = net.backward(f.cache, Tensor({1, 1}, 2.0 * f.output[0]));
    CHECK(g.get("layer1/trunk/w")[0] == doctest::Approx(24.0));
    const double h = 1e-6;
    auto loss = [&](double w) {
        net.mutable_param("layer1/trunk/w")[0] = w;
        const double y = net.forward(x).output[0];
        return y * y;
    };
    const double numeric = (loss(3.0 + h) - loss(3.0 - h)) / (2 * h);
    CHECK(numeric == doctest::Approx(24.0).epsilon(1e-6));
}

TEST_CASE("zero output gradient gives zero parameter gradients") {
    Network net(rainbow_spec(5, 21));
    net.initialize(2);
    std::mt19937_64 rng(1);
    const auto noise = net.sample_noise(rng);
    const auto f = net.forward(oracle::random_tensor({3, 4, 10, 10}, rng), &noise);
    const auto g = net.backward(f.cache, Tensor(f.output.shape(), 0.0));
    for (const auto& t : g.tensors)
        for (double v : t.data()) CHECK(v == 0.0);
}

TEST_CASE("finite-difference agreement for every layer kind") {
    std::mt19937_64 rng(20240611);
    for (auto type : {LayerType::conv2d, LayerType::dense, LayerType::noisy_dense}) {
        CAPTURE(std::string(to_string(type)));
        for (int trial = 0; trial < 20; ++trial) {
            Network net(oracle::random_single_layer(type, rng));
            net.initialize(rng());
            const std::size_t batch = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
            Shape in{batch};
            in.insert(in.end(), net.input_shape().begin(), net.input_shape().end());
            const auto x = oracle::random_tensor(in, rng);
            const auto target = oracle::random_tensor({batch, net.output_size()}, rng);
            const auto noise = net.sample_noise(rng);
            CHECK(oracle::gradient_check(net, x, &noise, target) < 1e-5);
        }
    }
}

TEST_CASE("finite differences through the full stacked network") {
    // Small sizes keep this quick; ReLU kinks are avoided by random inputs.
    NetworkSpec spec{{2, 6, 6},
                     {LayerKind::conv2d(3, 3, 1), LayerKind::conv2d(2, 2, 2)},
                     {{"value", {LayerKind::noisy_dense(4), LayerKind::noisy_dense(3)}},
                      {"advantage", {LayerKind::noisy_dense(4), LayerKind::noisy_dense(6)}}}};
    Network net(spec);
    net.initialize(11);
    std::mt19937_64 rng(5);
    const auto x = oracle::random_tensor({2, 2, 6, 6}, rng);
    const auto target = oracle::random_tensor({2, net.output_size()}, rng);
    const auto noise = net.sample_noise(rng);
    CHECK(oracle::gradient_check(net, x, &noise, target) < 1e-5);
}

TEST_CASE("default architecture has five depth positions") {
    Network net(rainbow_spec(5, 21));
    CHECK(net.depth() == 5);
    CHECK(net.output_size() == 21 + 5 * 21);
    CHECK(net.layer_names_at_depth(4) == std::vector<std::string>{"layer4/value", "layer4/advantage"});
    CHECK(net.layer_names_at_depth(1) == std::vector<std::string>{"layer1/trunk"});
    for (std::size_t i = 1; i < 3; ++i) CHECK(net.layers()[i].in_shape == net.layers()[i - 1].out_shape);
    CHECK(net.layers()[0].out_shape == Shape{8, 10, 10});
    CHECK(net.layers()[1].out_shape == Shape{16, 5, 5});
    CHECK(net.layers()[2].out_shape == Shape{16, 5, 5});
}

TEST_CASE("forward rejects wrong input shapes with a descriptive error") {
    Network net(rainbow_spec(5, 21));
    try {
        net.forward(Tensor({1, 4, 9, 10}));
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("10") != std::string::npos);
    }
}

TEST_CASE("architecture hash depends on structure only") {
    Network a(rainbow_spec(5, 21)), b(rainbow_spec(5, 21)), c(rainbow_spec(4, 21));
    a.initialize(1);
    b.initialize(2);
    CHECK(a.architecture_hash() == b.architecture_hash());
    CHECK(a.architecture_hash() != c.architecture_hash());
}

TEST_CASE("backward rejects a stale cache") {
    Network net(dense_spec(2, 2));
    net.initialize(1);
    const auto f = net.forward(Tensor({1, 2}, 1.0));
    net.mutable_param("layer1/trunk/b")[0] += 1.0;
    CHECK_THROWS_AS(net.backward(f.cache, Tensor({1, 2}, 1.0)), StateError);
}

TEST_CASE("noise sampling") {
    CHECK(scale_noise(4.0) == 2.0);
    CHECK(scale_noise(-4.0) == -2.0);
    CHECK(scale_noise(0.0) == 0.0);

    Network plain(dense_spec(3, 2));
    std::mt19937_64 rng(1);
    CHECK(plain.sample_noise(rng).empty());

    Network net(rainbow_spec(5, 21));
    std::mt19937_64 r1(42), r2(42);
    const auto d1 = net.sample_noise(r1), d2 = net.sample_noise(r2);
    REQUIRE(d1.layers.size() == 4);
    for (std::size_t i = 0; i < d1.layers.size(); ++i) {
        CHECK(d1.layers[i].in == d2.layers[i].in);
        CHECK(d1.layers[i].out == d2.layers[i].out);
    }
}

TEST_CASE("adam") {
    SUBCASE("one step on a scalar moves against the gradient by about lr") {
        Network net(dense_spec(1, 1));
        net.mutable_param("layer1/trunk/w")[0] = 1.0;
        net.mutable_param("layer1/trunk/b")[0] = 0.0;
        Adam adam(net, {0.1, 0.9, 0.999, 1e-8});
        GradientSet g;
        g.names = net.parameter_names();
        g.tensors = {Tensor({1, 1}, 1.0), Tensor({1}, 0.0)};
        adam.apply(net, g);
        // m_hat = 1, v_hat = 1 -> step = lr * 1 / (1 + eps)
        CHECK(net.param("layer1/trunk/w")[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-12));
        CHECK(net.param("layer1/trunk/b")[0] == 0.0);
        CHECK(adam.step() == 1);
    }
    SUBCASE("zero gradients and fresh moments leave parameters unchanged") {
        Network net(rainbow_spec(5, 21));
        net.initialize(3);
        const Network before = net;
        Adam adam(net);
        GradientSet g;
        g.names = net.parameter_names();
        for (const auto& n : g.names) g.tensors.emplace_back(net.param(n).shape(), 0.0);
        adam.apply(net, g);
        CHECK(net.parameters_equal(before));
    }
    SUBCASE("full freeze mask keeps everything bitwise identical") {
        Network net(rainbow_spec(5, 21));
        net.initialize(3);
        const Network before = net;
        Adam adam(net);
        std::mt19937_64 rng(1);
        GradientSet g;
        g.names = net.parameter_names();
        for (const auto& n : g.names) g.tensors.push_back(oracle::random_tensor(net.param(n).shape(), rng));
        FreezeMask mask;
        for (const auto& l : net.layers()) mask.insert(l.name);
        adam.apply(net, g, &mask);
        CHECK(net.parameters_equal(before));
        CHECK(adam.step() == 1);
        FreezeMask bogus{"layer9/trunk"};
        CHECK_THROWS_AS(adam.apply(net, g, &bogus), ConfigError);
    }
}

TEST_CASE("forward and backward stay finite") {
    Network net(rainbow_spec(5, 21));
    net.initialize(8);
    std::mt19937_64 rng(2);
    const auto noise = net.sample_noise(rng);
    const auto f = net.forward(oracle::random_tensor({4, 4, 10, 10}, rng), &noise);
    CHECK(f.output.all_finite());
    const auto g = net.backward(f.cache, oracle::random_tensor(f.output.shape(), rng));
    for (const auto& t : g.tensors) CHECK(t.all_finite());
}
