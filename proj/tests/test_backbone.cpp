#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "fewtab/backbone.hpp"

using namespace fewtab;

namespace {

Tensor4<double> random_input(Rng& rng, int n, int c, int side) {
    Tensor4<double> x(n, c, side, side);
    for (auto& v : x.v) v = rng.uniform();
    return x;
}

// scalar probe loss: sum of latent * G, so dloss/dlatent = G
double probe_loss(const Matrix2<double>& latent, const Matrix2<double>& g) {
    double s = 0.0;
    for (size_t i = 0; i < latent.v.size(); ++i) s += latent.v[i] * g.v[i];
    return s;
}

void check_gradients(Backbone<double>& net, const Tensor4<double>& x) {
    Rng grng(404);
    net.zero_grad();
    Matrix2<double> latent = net.forward(x, true);
    Matrix2<double> g(latent.rows, latent.cols);
    for (auto& v : g.v) v = grng.normal();
    net.backward(g);

    const double h = 1e-5;
    double worst = 0.0;
    for (size_t i = 0; i < net.n_param_scalars(); ++i) {
        const double v0 = net.get_param(i);
        net.set_param(i, v0 + h);
        const double lp = probe_loss(net.forward(x, true), g);
        net.set_param(i, v0 - h);
        const double lm = probe_loss(net.forward(x, true), g);
        net.set_param(i, v0);
        const double fd = (lp - lm) / (2.0 * h);
        const double an = net.get_grad(i);
        const double rel = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
        worst = std::max(worst, rel);
    }
    CHECK(worst < 1e-4);
}

}  // namespace

TEST_SUITE("backbone") {

TEST_CASE("spatial sizes halve with floor") {
    CHECK(spatial_after(84, 0) == 84);
    CHECK(spatial_after(84, 1) == 42);
    CHECK(spatial_after(84, 2) == 21);
    CHECK(spatial_after(84, 3) == 10);
    CHECK(spatial_after(84, 4) == 5);
    CHECK(spatial_after(5, 1) == 2);
}

TEST_CASE("arch names round trip") {
    for (const Arch a : {Arch::Conv2, Arch::Conv3, Arch::Conv4}) {
        CHECK(arch_from_name(arch_name(a)) == a);
    }
    CHECK(block_count(Arch::Conv4) == 4);
    CHECK_THROWS_AS(arch_from_name("resnet"), ConfigError);
}

TEST_CASE("parameter counts match the 64-channel reference") {
    auto counts = [](Arch a) {
        Backbone<float> net({a, 64, LatentMode::Flatten, 3}, 1);
        long long conv_only = 0;
        for (const auto& p : net.param_breakdown()) {
            if (p.conv) {
                long long sz = 1;
                for (const int d : p.shape) sz *= d;
                conv_only += sz;
            }
        }
        return std::pair<long long, long long>(net.param_count(), conv_only);
    };
    CHECK(counts(Arch::Conv2) == std::pair<long long, long long>(38976, 38720));
    CHECK(counts(Arch::Conv3) == std::pair<long long, long long>(76032, 75648));
    CHECK(counts(Arch::Conv4) == std::pair<long long, long long>(113088, 112576));
}

TEST_CASE("parameter breakdown names and shapes") {
    Backbone<float> net({Arch::Conv2, 64, LatentMode::Flatten, 3}, 1);
    const auto infos = net.param_breakdown();
    REQUIRE(infos.size() == 8);
    CHECK(infos[0].name == "block1.conv.kernel");
    CHECK(infos[0].shape == std::vector<int>{64, 3, 3, 3});
    CHECK(infos[0].conv);
    CHECK(infos[1].name == "block1.conv.bias");
    CHECK(infos[2].name == "block1.norm.scale");
    CHECK_FALSE(infos[2].conv);
    CHECK(infos[4].name == "block2.conv.kernel");
    CHECK(infos[4].shape == std::vector<int>{64, 64, 3, 3});

    long long sum = 0;
    for (const auto& p : infos) {
        long long sz = 1;
        for (const int d : p.shape) sz *= d;
        sum += sz;
    }
    CHECK(sum == net.param_count());
    CHECK(static_cast<size_t>(net.param_count()) == net.n_param_scalars());
}

TEST_CASE("latent dimensions") {
    const BackboneSpec f2{Arch::Conv2, 64, LatentMode::Flatten, 3};
    const BackboneSpec f3{Arch::Conv3, 64, LatentMode::Flatten, 3};
    const BackboneSpec f4{Arch::Conv4, 64, LatentMode::Flatten, 3};
    const BackboneSpec g4{Arch::Conv4, 64, LatentMode::GlobalAvgPool, 3};
    CHECK(Backbone<float>(f2, 1).latent_dim() == 28224);
    CHECK(Backbone<float>(f3, 1).latent_dim() == 6400);
    CHECK(Backbone<float>(f4, 1).latent_dim() == 1600);
    CHECK(Backbone<float>(g4, 1).latent_dim() == 64);
    CHECK_THROWS_AS(Backbone<float>(f4, 1).latent_dim(8), DimensionError);
}

TEST_CASE("initialization is seed-deterministic") {
    const BackboneSpec spec{Arch::Conv2, 8, LatentMode::Flatten, 3};
    Backbone<float> a(spec, 123), b(spec, 123), c(spec, 124);
    REQUIRE(a.n_param_scalars() == b.n_param_scalars());
    bool same = true, differs = false;
    for (size_t i = 0; i < a.n_param_scalars(); ++i) {
        same = same && a.get_param(i) == b.get_param(i);
        differs = differs || a.get_param(i) != c.get_param(i);
    }
    CHECK(same);
    CHECK(differs);
    CHECK(a.seed() == 123);
}

TEST_CASE("norm layer semantics with zeroed kernels") {
    // zero kernels + constant bias makes every activation equal, so batch
    // norm sends train-mode activations exactly to the shift (zero)
    Backbone<double> net({Arch::Conv2, 2, LatentMode::Flatten, 3}, 9);
    for (auto& blk : net.blocks()) {
        std::fill(blk.kernel.begin(), blk.kernel.end(), 0.0);
        std::fill(blk.bias.begin(), blk.bias.end(), 0.0);
    }
    net.blocks()[0].bias = {1.0, 2.0};
    net.blocks()[1].bias = {3.0, 4.0};

    Rng rng(10);
    const Tensor4<double> x = random_input(rng, 3, 3, 12);
    const Matrix2<double> latent = net.forward(x, true);
    for (const double v : latent.v) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

    // running stats move 10% of the way from (0, 1) toward (batch, 0)
    CHECK(net.blocks()[0].run_mean[0] == doctest::Approx(0.1 * 1.0));
    CHECK(net.blocks()[0].run_mean[1] == doctest::Approx(0.1 * 2.0));
    CHECK(net.blocks()[0].run_var[0] == doctest::Approx(0.9));
    CHECK(net.blocks()[1].run_mean[1] == doctest::Approx(0.1 * 4.0));

    // eval mode now normalizes with the running stats instead; the last
    // block's constant outputs land directly in the flattened latent
    const Matrix2<double> ev = net.forward_eval(x);
    const double denom = std::sqrt(0.9 + 1e-5);
    CHECK(ev.at(0, 0) == doctest::Approx((3.0 - 0.3) / denom));
    CHECK(ev.at(0, ev.cols - 1) == doctest::Approx((4.0 - 0.4) / denom));
}

TEST_CASE("eval forward is pure and matches forward(train=false)") {
    Backbone<float> net({Arch::Conv2, 4, LatentMode::Flatten, 3}, 77);
    Rng rng(11);
    Tensor4<float> x(2, 3, 12, 12);
    for (auto& v : x.v) v = static_cast<float>(rng.uniform());

    const auto rm_before = net.blocks()[0].run_mean;
    const Matrix2<float> a = net.forward_eval(x);
    const Matrix2<float> b = net.forward_eval(x);
    const Matrix2<float> c = net.forward(x, false);
    CHECK(a.v == b.v);
    CHECK(a.v == c.v);
    CHECK(net.blocks()[0].run_mean == rm_before);

    net.forward(x, true);
    CHECK(net.blocks()[0].run_mean != rm_before);
}

TEST_CASE("eval latents are batch independent") {
    Backbone<float> net({Arch::Conv3, 4, LatentMode::GlobalAvgPool, 3}, 5);
    Rng rng(12);
    Image a, b;
    for (auto& v : a.data) v = static_cast<float>(rng.uniform());
    for (auto& v : b.data) v = static_cast<float>(rng.uniform());

    const std::vector<float> ea = net.embed(a);
    const std::vector<float> eb = net.embed(b);
    const Matrix2<float> both = net.embed_batch({&a, &b});
    REQUIRE(both.rows == 2);
    REQUIRE(both.cols == static_cast<int>(ea.size()));
    for (int j = 0; j < both.cols; ++j) {
        CHECK(both.at(0, j) == ea[static_cast<size_t>(j)]);
        CHECK(both.at(1, j) == eb[static_cast<size_t>(j)]);
    }
}

TEST_CASE("gradients match central differences (flatten)") {
    Backbone<double> net({Arch::Conv2, 2, LatentMode::Flatten, 3}, 2024);
    Rng rng(13);
    const Tensor4<double> x = random_input(rng, 2, 3, 12);
    check_gradients(net, x);
}

TEST_CASE("gradients match central differences (gap, three blocks)") {
    Backbone<double> net({Arch::Conv3, 2, LatentMode::GlobalAvgPool, 3}, 2025);
    Rng rng(14);
    const Tensor4<double> x = random_input(rng, 2, 3, 12);
    check_gradients(net, x);
}

TEST_CASE("conv bias gradient vanishes under train-mode norm") {
    // batch norm subtracts the per-channel mean, so a constant bias shift
    // cannot change the loss; its gradient must be numerically zero
    Backbone<double> net({Arch::Conv2, 3, LatentMode::Flatten, 3}, 31);
    Rng rng(15);
    const Tensor4<double> x = random_input(rng, 2, 3, 12);
    net.zero_grad();
    const Matrix2<double> latent = net.forward(x, true);
    Matrix2<double> g(latent.rows, latent.cols);
    for (auto& v : g.v) v = rng.normal();
    net.backward(g);
    for (const auto& blk : net.blocks()) {
        for (const double db : blk.d_bias) CHECK(std::abs(db) < 1e-8);
    }
}

TEST_CASE("backward accumulates until zero_grad") {
    Backbone<double> net({Arch::Conv2, 2, LatentMode::Flatten, 3}, 8);
    Rng rng(16);
    const Tensor4<double> x = random_input(rng, 1, 3, 12);
    Matrix2<double> g(1, net.latent_dim(12));
    for (auto& v : g.v) v = rng.normal();

    net.zero_grad();
    net.forward(x, true);
    net.backward(g);
    const double once = net.get_grad(0);
    net.forward(x, true);
    net.backward(g);
    CHECK(net.get_grad(0) == doctest::Approx(2.0 * once));

    net.zero_grad();
    CHECK(net.get_grad(0) == 0.0);
}

TEST_CASE("sgd_step moves against the gradient") {
    Backbone<double> net({Arch::Conv2, 2, LatentMode::Flatten, 3}, 8);
    Rng rng(17);
    const Tensor4<double> x = random_input(rng, 1, 3, 12);
    Matrix2<double> g(1, net.latent_dim(12));
    for (auto& v : g.v) v = rng.normal();
    net.zero_grad();
    net.forward(x, true);
    net.backward(g);

    std::vector<double> before(net.n_param_scalars());
    for (size_t i = 0; i < before.size(); ++i) before[i] = net.get_param(i);

    net.sgd_step(0.0);
    for (size_t i = 0; i < before.size(); ++i) CHECK(net.get_param(i) == before[i]);

    net.sgd_step(0.5);
    for (size_t i = 0; i < before.size(); ++i) {
        CHECK(net.get_param(i) == doctest::Approx(before[i] - 0.5 * net.get_grad(i)));
    }
}

TEST_CASE("error paths") {
    Backbone<float> net({Arch::Conv2, 2, LatentMode::Flatten, 3}, 1);

    SUBCASE("backward without a cached forward") {
        Matrix2<float> g(1, net.latent_dim());
        CHECK_THROWS_AS(net.backward(g), StateError);
    }
    SUBCASE("latent gradient shape mismatch") {
        Tensor4<float> x(2, 3, 12, 12);
        net.forward(x, true);
        Matrix2<float> bad_rows(1, net.latent_dim(12));
        CHECK_THROWS_AS(net.backward(bad_rows), DimensionError);
        Matrix2<float> bad_cols(2, net.latent_dim(12) + 1);
        CHECK_THROWS_AS(net.backward(bad_cols), DimensionError);
    }
    SUBCASE("channel mismatch") {
        Tensor4<float> x(1, 2, 12, 12);
        CHECK_THROWS_AS(net.forward(x, true), DimensionError);
    }
    SUBCASE("non-finite input") {
        Tensor4<float> x(1, 3, 12, 12);
        x.v[7] = std::numeric_limits<float>::quiet_NaN();
        CHECK_THROWS_AS(net.forward(x, true), NumericError);
        CHECK_THROWS_AS(net.forward_eval(x), NumericError);
    }
    SUBCASE("pooling below one pixel") {
        Backbone<float> deep({Arch::Conv4, 2, LatentMode::GlobalAvgPool, 3}, 1);
        Tensor4<float> x(1, 3, 12, 12);  // 12 -> 6 -> 3 -> 1 -> gone
        CHECK_THROWS_WITH_AS(deep.forward(x, true), doctest::Contains("collapsed"),
                             DimensionError);
    }
    SUBCASE("embed wants the full image shape") {
        Image small(3, 12, 12);
        CHECK_THROWS_AS(static_cast<void>(net.embed(small)), DimensionError);
        CHECK_THROWS_AS(static_cast<void>(net.embed_batch({})), DimensionError);
    }
    SUBCASE("bad construction") {
        CHECK_THROWS_AS(Backbone<float>({Arch::Conv2, 0, LatentMode::Flatten, 3}, 1),
                        ConfigError);
    }
}

TEST_CASE("embedding the full image size works end to end") {
    Backbone<float> net({Arch::Conv2, 8, LatentMode::Flatten, 3}, 55);
    Image img;
    Rng rng(18);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform());
    const std::vector<float> z = net.embed(img);
    CHECK(z.size() == 8u * 21 * 21);
    bool finite = true, nonzero = false;
    for (const float v : z) {
        finite = finite && std::isfinite(v);
        nonzero = nonzero || v != 0.0f;
    }
    CHECK(finite);
    CHECK(nonzero);
}

}  // TEST_SUITE
