#include <doctest.h>

#include <cmath>
#include <cstring>

#include "gradcheck.hpp"
#include "noisebalance/layers.hpp"

using namespace noisebalance;

namespace {

LayerParams<double> make_params(std::int64_t din, std::int64_t dout,
                                std::vector<double> w, std::vector<double> b) {
    LayerParams<double> p(din, dout);
    p.weights = Tensor<double>({din, dout}, std::move(w));
    p.bias = Tensor<double>({dout}, std::move(b));
    return p;
}

} // namespace

TEST_CASE("linear_forward identity") {
    auto p = make_params(2, 2, {1, 0, 0, 1}, {0, 0});
    Tensor<double> x({1, 2}, {1, 2});
    auto out = linear_forward(x, p);
    CHECK(out.at(0, 0) == 1.0);
    CHECK(out.at(0, 1) == 2.0);
}

TEST_CASE("linear_forward scalar hand case") {
    // x=[[1,1]], W=[[1],[-1]], b=[0.5] -> [[0.5]]; scalar-loop oracle agrees
    auto p = make_params(2, 1, {1, -1}, {0.5});
    Tensor<double> x({1, 2}, {1, 1});
    auto out = linear_forward(x, p);
    double oracle = 0.5;
    for (int i = 0; i < 2; ++i) oracle += x[i] * p.weights[i];
    CHECK(out.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(out.at(0, 0) == doctest::Approx(oracle).epsilon(1e-15));
}

TEST_CASE("linear_forward zero input yields bias rows") {
    auto p = make_params(4, 3, std::vector<double>(12, 0.7), {1, 2, 3});
    auto out = linear_forward(Tensor<double>::zeros({3, 4}), p);
    for (std::int64_t r = 0; r < 3; ++r) {
        CHECK(out.at(r, 0) == 1.0);
        CHECK(out.at(r, 1) == 2.0);
        CHECK(out.at(r, 2) == 3.0);
    }
}

TEST_CASE("linear_forward shape mismatch is loud") {
    auto p = make_params(2, 2, {1, 0, 0, 1}, {0, 0});
    CHECK_THROWS_AS(linear_forward(Tensor<double>({1, 3}), p), ShapeError);
}

TEST_CASE("linear_backward zero upstream") {
    auto p = make_params(2, 2, {1, 2, 3, 4}, {0, 0});
    Tensor<double> x({2, 2}, {1, 2, 3, 4});
    auto dx = linear_backward(x, p, Tensor<double>::zeros({2, 2}));
    for (std::int64_t i = 0; i < dx.numel(); ++i) CHECK(dx[i] == 0.0);
    for (std::int64_t i = 0; i < 4; ++i) CHECK(p.grad_weights[i] == 0.0);
    for (std::int64_t i = 0; i < 2; ++i) CHECK(p.grad_bias[i] == 0.0);
}

TEST_CASE("linear_backward scalar chain rule") {
    auto p = make_params(1, 1, {3}, {0});
    Tensor<double> x({1, 1}, {2});
    auto dx = linear_backward(x, p, Tensor<double>({1, 1}, {1}));
    CHECK(dx.at(0, 0) == 3.0);
    CHECK(p.grad_weights[0] == 2.0);
    CHECK(p.grad_bias[0] == 1.0);
}

TEST_CASE("linear_backward matches finite differences on a random 5x3 case") {
    RngStream rng(7, "linear-fd");
    auto x = nbtest::random_tensor({5, 3}, rng);
    auto p = make_params(3, 4, std::vector<double>(12), std::vector<double>(4));
    for (auto& w : p.weights.vec()) w = rng.uniform() * 2 - 1;
    for (auto& b : p.bias.vec()) b = rng.uniform() * 2 - 1;
    auto r = nbtest::random_tensor({5, 4}, rng); // fixed projection defines the scalar loss

    auto loss = [&] {
        auto out = linear_forward(x, p);
        double l = 0.0;
        for (std::int64_t i = 0; i < out.numel(); ++i) l += out[i] * r[i];
        return l;
    };
    p.zero_grad();
    auto dx = linear_backward(x, p, r);

    auto fd_x = nbtest::central_diff(loss, nbtest::coord_ptrs(x.vec()));
    CHECK(nbtest::rel_err(std::vector<double>(dx.vec()), fd_x) <= 1e-6);
    auto fd_w = nbtest::central_diff(loss, nbtest::coord_ptrs(p.weights.vec()));
    CHECK(nbtest::rel_err(std::vector<double>(p.grad_weights.vec()), fd_w) <= 1e-6);
    auto fd_b = nbtest::central_diff(loss, nbtest::coord_ptrs(p.bias.vec()));
    CHECK(nbtest::rel_err(std::vector<double>(p.grad_bias.vec()), fd_b) <= 1e-6);
}

TEST_CASE("relu forward and backward basics") {
    Tensor<double> x({3}, {-1, 0, 2});
    auto out = relu_forward(x);
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 0.0);
    CHECK(out[2] == 2.0);

    Tensor<double> x2({2}, {-1, 2});
    auto dx = relu_backward(x2, Tensor<double>({2}, {5, 5}));
    CHECK(dx[0] == 0.0);
    CHECK(dx[1] == 5.0);
}

TEST_CASE("relu backward matches finite differences away from zero") {
    RngStream rng(11, "relu-fd");
    Tensor<double> x({4, 5});
    for (auto& v : x.vec()) {
        do {
            v = rng.uniform() * 2 - 1;
        } while (std::abs(v) < 1e-3); // kink at 0 breaks central differences
    }
    auto r = nbtest::random_tensor({4, 5}, rng);
    auto loss = [&] {
        auto out = relu_forward(x);
        double l = 0.0;
        for (std::int64_t i = 0; i < out.numel(); ++i) l += out[i] * r[i];
        return l;
    };
    auto dx = relu_backward(x, r);
    auto fd = nbtest::central_diff(loss, nbtest::coord_ptrs(x.vec()));
    CHECK(nbtest::rel_err(std::vector<double>(dx.vec()), fd) <= 1e-6);
}

TEST_CASE("softmax cross entropy on symmetric logits") {
    Tensor<double> logits({1, 2}, {0, 0});
    auto [loss, dlogits] = softmax_cross_entropy(logits, {0});
    CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(dlogits.at(0, 0) == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(dlogits.at(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmax cross entropy is stabilized against large logits") {
    Tensor<double> logits({1, 2}, {1000, 0});
    auto [loss, dlogits] = softmax_cross_entropy(logits, {0});
    CHECK(std::isfinite(loss));
    CHECK(loss == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std::isfinite(dlogits.at(0, 0)));
}

TEST_CASE("softmax cross entropy rejects out-of-range labels") {
    Tensor<double> logits({1, 2}, {0, 0});
    CHECK_THROWS_AS(softmax_cross_entropy(logits, {2}), ShapeError);
    CHECK_THROWS_AS(softmax_cross_entropy(logits, {-1}), ShapeError);
}

TEST_CASE("softmax gradient matches finite differences on a random 4x3 case") {
    RngStream rng(13, "softmax-fd");
    auto logits = nbtest::random_tensor({4, 3}, rng, 2.0);
    std::vector<std::int32_t> labels = {0, 2, 1, 2};
    auto loss = [&] { return softmax_cross_entropy(logits, labels).first; };
    auto [l, dlogits] = softmax_cross_entropy(logits, labels);
    (void)l;
    auto fd = nbtest::central_diff(loss, nbtest::coord_ptrs(logits.vec()));
    CHECK(nbtest::rel_err(std::vector<double>(dlogits.vec()), fd) <= 1e-6);
}

TEST_CASE("sgd step without momentum") {
    auto p = make_params(1, 1, {1}, {0});
    p.grad_weights[0] = 1.0;
    OptimizerConfig cfg{0.1, 0.0, 0.0, {}};
    sgd_step(p, cfg, 0);
    CHECK(p.weights[0] == doctest::Approx(0.9).epsilon(1e-15));
}

TEST_CASE("sgd two-step momentum recursion") {
    auto p = make_params(1, 1, {0}, {0});
    OptimizerConfig cfg{1.0, 0.9, 0.0, {}};
    p.grad_weights[0] = 1.0;
    sgd_step(p, cfg, 0);
    CHECK(p.weights[0] == doctest::Approx(-1.0).epsilon(1e-15));
    p.grad_weights[0] = 1.0;
    sgd_step(p, cfg, 0);
    CHECK(p.weights[0] == doctest::Approx(-2.9).epsilon(1e-15));
}

TEST_CASE("lr schedule applies factors from their epoch onward") {
    OptimizerConfig cfg{0.1, 0.9, 0.0, {{160, 0.01}}};
    CHECK(cfg.lr_at(159) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(cfg.lr_at(160) == doctest::Approx(0.001).epsilon(1e-12));
    CHECK(cfg.lr_at(199) == doctest::Approx(0.001).epsilon(1e-12));

    OptimizerConfig multi{0.1, 0.9, 0.0, {{40, 0.1}, {50, 0.1}}};
    CHECK(multi.lr_at(45) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(multi.lr_at(55) == doctest::Approx(0.001).epsilon(1e-12));
}

TEST_CASE("optimizer config validation") {
    OptimizerConfig bad{0.1, 0.9, 0.0, {{10, 0.1}, {10, 0.1}}};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    OptimizerConfig neg{-0.1, 0.9, 0.0, {}};
    CHECK_THROWS_AS(neg.validate(), ConfigError);
}

TEST_CASE("weight decay enters the update as grad + wd*w") {
    auto p = make_params(1, 1, {2}, {0});
    OptimizerConfig cfg{0.5, 0.0, 0.1, {}};
    p.grad_weights[0] = 1.0;
    sgd_step(p, cfg, 0);
    // g = 1 + 0.1*2 = 1.2, w = 2 - 0.5*1.2 = 1.4
    CHECK(p.weights[0] == doctest::Approx(1.4).epsilon(1e-15));
}

TEST_CASE("forward passes are deterministic") {
    RngStream rng(17, "det");
    auto x = nbtest::random_tensor({6, 5}, rng);
    auto p = make_params(5, 4, std::vector<double>(20), std::vector<double>(4));
    for (auto& w : p.weights.vec()) w = rng.uniform();
    auto a = linear_forward(x, p);
    auto b = linear_forward(x, p);
    CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * a.numel()) == 0);
}
