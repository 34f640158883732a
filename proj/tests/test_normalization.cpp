#include <doctest.h>

#include <cmath>
#include <cstring>

#include "gradcheck.hpp"
#include "noisebalance/normalization.hpp"

using namespace noisebalance;

namespace {

NoiseMask mask_of(std::vector<std::uint8_t> flags) { return NoiseMask(std::move(flags)); }

template <typename S>
bool states_identical(const BatchNormState<S>& a, const BatchNormState<S>& b) {
    return a.gamma == b.gamma && a.beta == b.beta && a.running_mean == b.running_mean &&
           a.running_var == b.running_var && a.grad_gamma == b.grad_gamma &&
           a.grad_beta == b.grad_beta;
}

} // namespace

TEST_CASE("bn train forward centers and scales a 2x1 batch") {
    BatchNormState<double> st(1);
    Tensor<double> x({2, 1}, {1, 3});
    auto out = bn_forward(x, st, Mode::train);
    // mean 2, biased var 1; eps pulls outputs slightly inside +-1
    CHECK(std::abs(out.at(0, 0) - (-1.0)) <= 1e-5);
    CHECK(std::abs(out.at(1, 0) - 1.0) <= 1e-5);
    CHECK(std::abs(out.at(0, 0) + out.at(1, 0)) <= 1e-15);
    // EMA after one pass with eta=0.1: mean 0.1*2, var 0.1*2 + 0.9*1 (unbiased var of {1,3} = 2)
    CHECK(st.running_mean[0] == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(st.running_var[0] == doctest::Approx(1.1).epsilon(1e-15));
}

TEST_CASE("bn eval with identity statistics is an eps-perturbed identity") {
    BatchNormState<double> st(2);
    Tensor<double> x({3, 2}, {0.5, -1.0, 2.0, 0.0, -3.0, 1.5});
    auto out = bn_forward(x, st, Mode::eval);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        CHECK(std::abs(out[i] - x[i]) <= 1e-5 * std::abs(x[i]) + 1e-12);
    }
}

TEST_CASE("bn eval mutates nothing") {
    BatchNormState<double> st(2);
    st.running_mean = {0.3, -0.2};
    st.running_var = {1.5, 0.7};
    const auto before = st;
    Tensor<double> x({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    auto a = bn_forward(x, st, Mode::eval);
    auto b = bn_forward(x, st, Mode::eval);
    CHECK(states_identical(st, before));
    CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * a.numel()) == 0);
}

TEST_CASE("bn train rejects tiny batches and NaN input") {
    BatchNormState<double> st(1);
    CHECK_THROWS_AS(bn_forward(Tensor<double>({1, 1}, {1.0}), st, Mode::train), ShapeError);
    Tensor<double> bad({2, 1}, {1.0, std::nan("")});
    CHECK_THROWS_AS(bn_forward(bad, st, Mode::train), NumericError);
}

TEST_CASE("bn backward: zero upstream, symmetry, and missing forward") {
    BatchNormState<double> st(1);
    Tensor<double> x({2, 1}, {-2.0, 2.0});
    CHECK_THROWS_AS(bn_backward(x, st, Tensor<double>({2, 1})), Error);

    bn_forward(x, st, Mode::train);
    auto dx0 = bn_backward(x, st, Tensor<double>::zeros({2, 1}));
    CHECK(dx0.at(0, 0) == 0.0);
    CHECK(dx0.at(1, 0) == 0.0);
    CHECK(st.grad_gamma[0] == 0.0);
    CHECK(st.grad_beta[0] == 0.0);

    // constant upstream on a symmetric batch: normalization removes uniform shifts
    auto dxc = bn_backward(x, st, Tensor<double>::full({2, 1}, 3.0));
    CHECK(dxc.at(0, 0) == 0.0);
    CHECK(dxc.at(1, 0) == 0.0);
}

TEST_CASE("bn backward matches finite differences on a random 8x4 batch") {
    RngStream rng(23, "bn-fd");
    auto x = nbtest::random_tensor({8, 4}, rng);
    auto r = nbtest::random_tensor({8, 4}, rng);
    BatchNormState<double> st(4);
    for (auto& g : st.gamma) g = 0.5 + rng.uniform();
    for (auto& b : st.beta) b = rng.uniform() - 0.5;

    auto loss = [&] {
        BatchNormState<double> fresh = st;
        auto out = bn_forward(x, fresh, Mode::train);
        double l = 0.0;
        for (std::int64_t i = 0; i < out.numel(); ++i) l += out[i] * r[i];
        return l;
    };
    BatchNormState<double> work = st;
    bn_forward(x, work, Mode::train);
    auto dx = bn_backward(x, work, r);
    auto fd = nbtest::central_diff(loss, nbtest::coord_ptrs(x.vec()));
    CHECK(nbtest::rel_err(std::vector<double>(dx.vec()), fd) <= 1e-4);

    // affine parameter gradients against the same oracle
    auto fd_gamma = nbtest::central_diff(loss, nbtest::coord_ptrs(st.gamma));
    auto fd_beta = nbtest::central_diff(loss, nbtest::coord_ptrs(st.beta));
    CHECK(nbtest::rel_err(std::vector<double>(work.grad_gamma), fd_gamma) <= 1e-4);
    CHECK(nbtest::rel_err(std::vector<double>(work.grad_beta), fd_beta) <= 1e-4);
}

TEST_CASE("bn handles 4-d activation maps per channel") {
    RngStream rng(29, "bn4d");
    auto x = nbtest::random_tensor({3, 2, 2, 2}, rng);
    auto r = nbtest::random_tensor({3, 2, 2, 2}, rng);
    BatchNormState<double> st(2);
    auto loss = [&] {
        BatchNormState<double> fresh = st;
        auto out = bn_forward(x, fresh, Mode::train);
        double l = 0.0;
        for (std::int64_t i = 0; i < out.numel(); ++i) l += out[i] * r[i];
        return l;
    };
    BatchNormState<double> work = st;
    auto out = bn_forward(x, work, Mode::train);
    // per-channel stats over batch and spatial dims: mean 0, biased var ~1
    for (std::int64_t c = 0; c < 2; ++c) {
        double sum = 0.0, sq = 0.0;
        for (std::int64_t n = 0; n < 3; ++n) {
            for (std::int64_t p = 0; p < 4; ++p) {
                const double v = out[(n * 2 + c) * 4 + p];
                sum += v;
                sq += v * v;
            }
        }
        CHECK(std::abs(sum / 12.0) <= 1e-12);
        CHECK(std::abs(sq / 12.0 - 1.0) <= 1e-4);
    }
    auto dx = bn_backward(x, work, r);
    auto fd = nbtest::central_diff(loss, nbtest::coord_ptrs(x.vec()));
    CHECK(nbtest::rel_err(std::vector<double>(dx.vec()), fd) <= 1e-4);
}

TEST_CASE("dar_bn with an all-natural mask is bit-identical to standard bn") {
    RngStream rng(31, "dar-id");
    auto x = nbtest::random_tensor({6, 3}, rng);
    BatchNormState<double> a(3), b(3);
    for (std::size_t i = 0; i < 3; ++i) {
        a.gamma[i] = b.gamma[i] = 0.5 + rng.uniform();
        a.beta[i] = b.beta[i] = rng.uniform() - 0.5;
    }
    auto out_bn = bn_forward(x, a, Mode::train);
    auto out_dar = dar_bn_forward(x, NoiseMask::all_natural(6), b, Mode::train);
    CHECK(std::memcmp(out_bn.data(), out_dar.data(), sizeof(double) * out_bn.numel()) == 0);
    CHECK(a.running_mean == b.running_mean);
    CHECK(a.running_var == b.running_var);

    auto r = nbtest::random_tensor({6, 3}, rng);
    auto dx_bn = bn_backward(x, a, r);
    auto dx_dar = dar_bn_backward(x, NoiseMask::all_natural(6), b, r);
    CHECK(std::memcmp(dx_bn.data(), dx_dar.data(), sizeof(double) * dx_bn.numel()) == 0);
    CHECK(a.grad_gamma == b.grad_gamma);
    CHECK(a.grad_beta == b.grad_beta);
}

TEST_CASE("dar_bn normalizes each split to zero mean and unit variance") {
    RngStream rng(37, "dar-split");
    Tensor<double> x({8, 2});
    auto mask = NoiseMask::all_natural(8);
    int nat_seen = 0, noise_seen = 0;
    for (std::int64_t i = 0; i < 8; ++i) {
        const bool noise = i % 3 == 0;
        mask.set(i, noise);
        // O(1) spread within each split, with the noise split far off-scale
        const int k = noise ? noise_seen++ : nat_seen++;
        for (std::int64_t c = 0; c < 2; ++c) {
            const double base = noise ? 10.0 + 4.0 * k : -1.5 + 1.0 * k;
            x.at(i, c) = base + 0.1 * rng.uniform();
        }
    }
    BatchNormState<double> st(2); // gamma=1, beta=0 exposes the pre-affine values
    auto out = dar_bn_forward(x, mask, st, Mode::train);
    for (int split = 0; split < 2; ++split) {
        for (std::int64_t c = 0; c < 2; ++c) {
            double sum = 0.0, sq = 0.0;
            std::int64_t n = 0;
            for (std::int64_t i = 0; i < 8; ++i) {
                if (mask.is_noise(i) != (split == 1)) continue;
                sum += out.at(i, c);
                sq += out.at(i, c) * out.at(i, c);
                ++n;
            }
            const double mean = sum / n;
            const double var = sq / n - mean * mean;
            CHECK(std::abs(mean) <= 1e-6);
            CHECK(std::abs(var - 1.0) <= 1e-4);
        }
    }
}

TEST_CASE("dar_bn hand example: shared natural affine, natural-only running stats") {
    BatchNormState<double> st(1);
    st.gamma[0] = 2.0;
    st.beta[0] = 1.0;
    Tensor<double> x({4, 1}, {0.0, 2.0, 10.0, 30.0});
    auto mask = mask_of({0, 0, 1, 1});
    auto out = dar_bn_forward(x, mask, st, Mode::train);
    CHECK(out.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(out.at(1, 0) == doctest::Approx(3.0).epsilon(1e-4));
    CHECK(out.at(2, 0) == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(out.at(3, 0) == doctest::Approx(3.0).epsilon(1e-4));
    // natural mean 1 drives the EMA; the noise values 10, 30 never do
    CHECK(st.running_mean[0] == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(st.running_var[0] == doctest::Approx(1.1).epsilon(1e-15));
}

TEST_CASE("dar_bn routing isolation: noise values cannot leak into natural outputs or stats") {
    RngStream rng(41, "dar-iso");
    auto x = nbtest::random_tensor({10, 3}, rng);
    auto mask = NoiseMask::all_natural(10);
    for (std::int64_t i : {1, 4, 7}) mask.set(i, true);

    BatchNormState<double> st1(3), st2(3);
    auto x2 = x;
    for (std::int64_t i : {1, 4, 7}) {
        for (std::int64_t c = 0; c < 3; ++c) x2.at(i, c) = x.at(i, c) * 3.0 + 7.0;
    }
    auto out1 = dar_bn_forward(x, mask, st1, Mode::train);
    auto out2 = dar_bn_forward(x2, mask, st2, Mode::train);
    CHECK(st1.running_mean == st2.running_mean);
    CHECK(st1.running_var == st2.running_var);
    for (std::int64_t i = 0; i < 10; ++i) {
        if (mask.is_noise(i)) continue;
        for (std::int64_t c = 0; c < 3; ++c) {
            CHECK(out1.at(i, c) == out2.at(i, c));
        }
    }
}

TEST_CASE("dar_bn freezes affine parameters against the noise split") {
    RngStream rng(43, "dar-frozen");
    auto x = nbtest::random_tensor({6, 2}, rng);
    auto mask = mask_of({0, 1, 0, 1, 0, 1});
    BatchNormState<double> st(2);
    dar_bn_forward(x, mask, st, Mode::train);
    Tensor<double> up({6, 2});
    for (std::int64_t i = 0; i < 6; ++i) {
        if (!mask.is_noise(i)) continue;
        for (std::int64_t c = 0; c < 2; ++c) up.at(i, c) = 1.0 + rng.uniform();
    }
    dar_bn_backward(x, mask, st, up);
    CHECK(st.grad_gamma[0] == 0.0);
    CHECK(st.grad_gamma[1] == 0.0);
    CHECK(st.grad_beta[0] == 0.0);
    CHECK(st.grad_beta[1] == 0.0);
}

TEST_CASE("dar_bn backward matches finite differences on a mixed batch") {
    RngStream rng(47, "dar-fd");
    auto x = nbtest::random_tensor({7, 3}, rng);
    auto r = nbtest::random_tensor({7, 3}, rng);
    auto mask = mask_of({0, 1, 0, 0, 1, 0, 1});
    BatchNormState<double> st(3);
    for (auto& g : st.gamma) g = 0.5 + rng.uniform();
    for (auto& b : st.beta) b = rng.uniform() - 0.5;

    auto loss = [&] {
        BatchNormState<double> fresh = st;
        auto out = dar_bn_forward(x, mask, fresh, Mode::train);
        double l = 0.0;
        for (std::int64_t i = 0; i < out.numel(); ++i) l += out[i] * r[i];
        return l;
    };
    BatchNormState<double> work = st;
    dar_bn_forward(x, mask, work, Mode::train);
    auto dx = dar_bn_backward(x, mask, work, r);
    auto fd = nbtest::central_diff(loss, nbtest::coord_ptrs(x.vec()));
    CHECK(nbtest::rel_err(std::vector<double>(dx.vec()), fd) <= 1e-4);

    // gamma/beta gradients must equal the natural-rows-only sensitivity: the
    // forward applies gamma, beta to the noise split too, but that application
    // is frozen, so the analytic gradient tracks only natural rows.
    auto loss_nat_only = [&] {
        BatchNormState<double> fresh = st;
        auto out = dar_bn_forward(x, mask, fresh, Mode::train);
        double l = 0.0;
        for (std::int64_t i = 0; i < 7; ++i) {
            if (mask.is_noise(i)) continue;
            for (std::int64_t c = 0; c < 3; ++c) l += out.at(i, c) * r.at(i, c);
        }
        return l;
    };
    auto fd_gamma = nbtest::central_diff(loss_nat_only, nbtest::coord_ptrs(st.gamma));
    auto fd_beta = nbtest::central_diff(loss_nat_only, nbtest::coord_ptrs(st.beta));
    CHECK(nbtest::rel_err(std::vector<double>(work.grad_gamma), fd_gamma) <= 1e-4);
    CHECK(nbtest::rel_err(std::vector<double>(work.grad_beta), fd_beta) <= 1e-4);
}

TEST_CASE("dar_bn eval ignores the mask") {
    BatchNormState<double> st(1);
    st.running_mean = {0.5};
    st.running_var = {2.0};
    Tensor<double> x({3, 1}, {0.0, 1.0, 2.0});
    auto out_masked = dar_bn_forward(x, mask_of({1, 0, 1}), st, Mode::eval);
    auto out_plain = bn_forward(x, st, Mode::eval);
    CHECK(std::memcmp(out_masked.data(), out_plain.data(), sizeof(double) * 3) == 0);
}

TEST_CASE("dar_bn validates mask length") {
    BatchNormState<double> st(1);
    Tensor<double> x({3, 1}, {0, 1, 2});
    CHECK_THROWS_AS(dar_bn_forward(x, NoiseMask::all_natural(2), st, Mode::train), ShapeError);
}

TEST_CASE("dar_bn degenerate splits: singleton normalizes to zero, no stats update") {
    BatchNormState<double> st(1);
    st.gamma[0] = 3.0;
    st.beta[0] = 0.25;
    Tensor<double> x({3, 1}, {5.0, 1.0, 2.0});
    auto mask = mask_of({1, 0, 0}); // one noise row
    auto out = dar_bn_forward(x, mask, st, Mode::train);
    // singleton split: x-hat is exactly 0, output is beta
    CHECK(out.at(0, 0) == 0.25);
    // natural split of size 2 still updates the running stats
    CHECK(st.running_mean[0] == doctest::Approx(0.15).epsilon(1e-12));

    BatchNormState<double> st2(1);
    Tensor<double> x2({3, 1}, {5.0, 1.0, 2.0});
    auto mask2 = mask_of({0, 1, 1}); // singleton natural split
    dar_bn_forward(x2, mask2, st2, Mode::train);
    CHECK(st2.running_mean[0] == 0.0); // never updated from a natural split of size < 2
    CHECK(st2.running_var[0] == 1.0);

    // singleton backward: the forward is constant in x, so dx is zero there
    Tensor<double> up({3, 1}, {1.0, 1.0, 1.0});
    auto dx = dar_bn_backward(x2, mask2, st2, up);
    CHECK(dx.at(0, 0) == 0.0);
}

TEST_CASE("aux_bn with an all-natural mask matches standard bn on the natural state") {
    RngStream rng(53, "aux-id");
    auto x = nbtest::random_tensor({5, 2}, rng);
    AuxBnState<double> aux(2);
    BatchNormState<double> plain(2);
    auto out_aux = aux_bn_forward(x, NoiseMask::all_natural(5), aux, Mode::train);
    auto out_plain = bn_forward(x, plain, Mode::train);
    CHECK(std::memcmp(out_aux.data(), out_plain.data(), sizeof(double) * x.numel()) == 0);
    CHECK(aux.natural.running_mean == plain.running_mean);
    CHECK(aux.noise.running_mean == std::vector<double>(2, 0.0)); // untouched
}

TEST_CASE("aux_bn noise rows never touch the natural branch") {
    RngStream rng(59, "aux-iso");
    auto x = nbtest::random_tensor({8, 2}, rng);
    auto mask = mask_of({0, 1, 0, 1, 0, 1, 0, 1});
    auto x2 = x;
    for (std::int64_t i = 1; i < 8; i += 2) {
        for (std::int64_t c = 0; c < 2; ++c) x2.at(i, c) = x2.at(i, c) * 5.0 + 1.0;
    }
    AuxBnState<double> a1(2), a2(2);
    aux_bn_forward(x, mask, a1, Mode::train);
    aux_bn_forward(x2, mask, a2, Mode::train);
    CHECK(a1.natural.running_mean == a2.natural.running_mean);
    CHECK(a1.natural.running_var == a2.natural.running_var);
    CHECK(a1.noise.running_mean != a2.noise.running_mean);

    // and noise-only upstream leaves the natural affine gradients at zero
    Tensor<double> up({8, 2});
    for (std::int64_t i = 1; i < 8; i += 2) {
        up.at(i, 0) = 1.0;
        up.at(i, 1) = 2.0;
    }
    aux_bn_backward(x, mask, a1, up);
    CHECK(a1.natural.grad_gamma == std::vector<double>(2, 0.0));
    CHECK(a1.natural.grad_beta == std::vector<double>(2, 0.0));
    CHECK(a1.noise.grad_beta != std::vector<double>(2, 0.0));
}

TEST_CASE("aux_bn backward matches finite differences including both affine sets") {
    RngStream rng(61, "aux-fd");
    auto x = nbtest::random_tensor({6, 2}, rng);
    auto r = nbtest::random_tensor({6, 2}, rng);
    auto mask = mask_of({0, 1, 0, 1, 0, 1});
    AuxBnState<double> st(2);
    for (auto* n : {&st.natural, &st.noise}) {
        for (auto& g : n->gamma) g = 0.5 + rng.uniform();
        for (auto& b : n->beta) b = rng.uniform() - 0.5;
    }
    auto loss = [&] {
        AuxBnState<double> fresh = st;
        auto out = aux_bn_forward(x, mask, fresh, Mode::train);
        double l = 0.0;
        for (std::int64_t i = 0; i < out.numel(); ++i) l += out[i] * r[i];
        return l;
    };
    AuxBnState<double> work = st;
    aux_bn_forward(x, mask, work, Mode::train);
    auto dx = aux_bn_backward(x, mask, work, r);
    auto fd = nbtest::central_diff(loss, nbtest::coord_ptrs(x.vec()));
    CHECK(nbtest::rel_err(std::vector<double>(dx.vec()), fd) <= 1e-4);
    for (auto [branch, fresh_branch] :
         {std::pair{&work.natural, &st.natural}, std::pair{&work.noise, &st.noise}}) {
        auto fd_gamma = nbtest::central_diff(loss, nbtest::coord_ptrs(fresh_branch->gamma));
        auto fd_beta = nbtest::central_diff(loss, nbtest::coord_ptrs(fresh_branch->beta));
        CHECK(nbtest::rel_err(std::vector<double>(branch->grad_gamma), fd_gamma) <= 1e-4);
        CHECK(nbtest::rel_err(std::vector<double>(branch->grad_beta), fd_beta) <= 1e-4);
    }
}

TEST_CASE("aux_bn eval uses the natural branch only") {
    AuxBnState<double> st(1);
    st.natural.running_mean = {1.0};
    st.noise.running_mean = {50.0};
    Tensor<double> x({2, 1}, {1.0, 2.0});
    auto out = aux_bn_forward(x, mask_of({1, 1}), st, Mode::eval);
    auto ref = bn_forward(x, st.natural, Mode::eval);
    CHECK(std::memcmp(out.data(), ref.data(), sizeof(double) * 2) == 0);
}
