#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "helpers.hpp"
#include "uvdiff/ndt_io.hpp"

using namespace uvdiff;
using namespace uvdiff::testing;

TEST_CASE("timestep embedding layout and values") {
    const std::vector<int> ts{7, 120};
    const Tensor64 e = timestep_embedding<double>(ts, 4);
    REQUIRE(e.shape() == Shape{2, 4});
    // Frequencies exp(-ln(1e4) * i / half): 1 and 1e-2 at dim 4.
    CHECK(e.data()[0] == doctest::Approx(std::sin(7.0)).epsilon(1e-12));
    CHECK(e.data()[1] == doctest::Approx(std::sin(0.07)).epsilon(1e-12));
    CHECK(e.data()[2] == doctest::Approx(std::cos(7.0)).epsilon(1e-12));
    CHECK(e.data()[3] == doctest::Approx(std::cos(0.07)).epsilon(1e-12));
    CHECK(e.data()[4] == doctest::Approx(std::sin(120.0)).epsilon(1e-12));

    // Distinct timesteps embed distinctly.
    const Tensor64 e2 = timestep_embedding<double>(std::vector<int>{8}, 4);
    CHECK_FALSE(bit_equal(ops::slice(e, 0, 0, 1), e2));

    CHECK_THROWS_AS((void)timestep_embedding<double>(ts, 3), std::invalid_argument);
}

TEST_CASE("parameter count oracles pin the architecture") {
    CHECK(UNet(UNetConfig{}, 1).param_count() == 465898);
    UNetConfig small;
    small.base_width = 16;
    small.time_dim = 32;
    CHECK(UNet(small, 1).param_count() == 118522);
    UNetConfig tiny;
    tiny.base_width = 8;
    tiny.time_dim = 16;
    CHECK(UNet(tiny, 1).param_count() == 30658);
}

TEST_CASE("initialization is seeded and head starts at zero") {
    UNetConfig cfg;
    cfg.base_width = 16;
    cfg.time_dim = 32;
    UNet a(cfg, 7), b(cfg, 7), c(cfg, 8);
    auto pa = a.named_params();
    auto pb = b.named_params();
    auto pc = c.named_params();
    REQUIRE(pa.size() == pb.size());
    bool all_equal_ab = true, all_equal_ac = true;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        all_equal_ab &= bit_equal(*pa[i].second, *pb[i].second);
        all_equal_ac &= bit_equal(*pa[i].second, *pc[i].second);
    }
    CHECK(all_equal_ab);
    CHECK_FALSE(all_equal_ac);

    // Zero head means a fresh net predicts exactly zero noise.
    Rng rng(9, 9, 0);
    const Tensor x = Tensor::randn(Shape{2, 10, 8, 8}, rng);
    const Tensor out = a.forward(x, std::vector<int>{3, 77});
    CHECK(out.shape() == x.shape());
    CHECK(bit_equal(out, Tensor::zeros(x.shape())));
}

TEST_CASE("forward shape contract") {
    UNetConfig cfg;
    cfg.base_width = 8;
    cfg.time_dim = 16;
    const UNet net(cfg, 3);
    Rng rng(10, 9, 0);

    const Tensor x = Tensor::randn(Shape{3, 10, 16, 16}, rng);
    CHECK(net.forward(x, std::vector<int>{5}).shape() == x.shape()); // broadcast t
    CHECK(net.forward(x, std::vector<int>{5, 6, 7}).shape() == x.shape());

    CHECK_THROWS_AS(
        (void)net.forward(Tensor::randn(Shape{1, 10, 10, 10}, rng), std::vector<int>{1}),
        std::invalid_argument); // not divisible by 4
    CHECK_THROWS_AS(
        (void)net.forward(Tensor::randn(Shape{1, 4, 8, 8}, rng), std::vector<int>{1}),
        std::invalid_argument); // wrong channel count
    CHECK_THROWS_AS((void)net.forward(x, std::vector<int>{1, 2}),
                    std::invalid_argument); // timestep count mismatch
    CHECK_THROWS_AS((void)net.forward(x, std::vector<int>{0}),
                    std::invalid_argument); // timesteps are 1-based
}

TEST_CASE("timestep changes the output") {
    const UNet net = make_test_net(8, 16, 11);
    Rng rng(12, 9, 0);
    const Tensor x = Tensor::randn(Shape{1, 10, 8, 8}, rng);
    const Tensor y1 = net.forward(x, std::vector<int>{1});
    const Tensor y2 = net.forward(x, std::vector<int>{900});
    CHECK_FALSE(bit_equal(y1, y2));
}

TEST_CASE("as_model snapshots the weights") {
    UNet net = make_test_net(8, 16, 13);
    Rng rng(14, 9, 0);
    const Tensor x = Tensor::randn(Shape{1, 10, 8, 8}, rng);

    const ModelFn<float> model = net.as_model();
    const Tensor before = model(x, 10);
    CHECK(bit_equal(before, net.forward(x, std::vector<int>{10})));

    // Mutating the live net must not leak into the captured model.
    for (auto& [name, p] : net.named_params()) {
        float* d = p->mutable_data();
        for (std::size_t i = 0; i < p->size(); ++i) d[i] += 0.25f;
    }
    const Tensor after = model(x, 10);
    CHECK(bit_equal(before, after));
    CHECK_FALSE(bit_equal(net.forward(x, std::vector<int>{10}), before));
}

TEST_CASE("checkpoint roundtrip") {
    const std::string path = "test_denoiser_ckpt.bin";
    UNet net = make_test_net(8, 16, 15);
    save_denoiser(path, net, {{"note", "roundtrip"}});

    auto [loaded, meta] = load_denoiser(path);
    CHECK(meta.at("note") == "roundtrip");
    CHECK(loaded.param_count() == net.param_count());
    auto pa = net.named_params();
    auto pb = loaded.named_params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].first == pb[i].first);
        CHECK(bit_equal(*pa[i].second, *pb[i].second));
    }

    Rng rng(16, 9, 0);
    const Tensor x = Tensor::randn(Shape{1, 10, 8, 8}, rng);
    CHECK(bit_equal(net.forward(x, std::vector<int>{42}),
                    loaded.forward(x, std::vector<int>{42})));
    std::remove(path.c_str());
}

TEST_CASE("end-to-end gradients match finite differences") {
    // Double-precision copy of a tiny net; gradcheck the input path and a
    // sample of weight entries through the full forward.
    UNetConfig cfg;
    cfg.base_width = 8;
    cfg.time_dim = 16;
    UNet netf = make_test_net(8, 16, 17);
    UNetT<double> net = netf.cast<double>();

    Rng rng(18, 9, 0);
    const Tensor64 x = Tensor64::randn(Shape{1, 10, 8, 8}, rng);
    const Tensor64 m = Tensor64::randn(Shape{1, 10, 8, 8}, rng);
    const std::vector<int> ts{33};

    auto loss_of_x = [&](const Tensor64& v) {
        return ops::sum(ops::mul(net.forward(v, ts), m));
    };
    CHECK(gradcheck(loss_of_x, x, 1e-4) < 1e-3);

    // Weight-path check: analytic weight grads vs central differences on a
    // subsample of entries from every parameter tensor. Gradients are pulled
    // under the tape; the finite-difference probes run tape-free.
    net.set_tracked(true);
    TapeT<double> tape;
    std::map<std::string, Tensor64> analytic;
    {
        TapeScope<double> scope(tape);
        const Tensor64 loss = loss_of_x(x);
        auto grads = tape.backward(loss);
        for (auto& [name, p] : net.named_params()) {
            auto git = grads.find(p->uid());
            REQUIRE_MESSAGE(git != grads.end(), name.c_str());
            analytic.emplace(name, git->second);
        }
    }
    Rng pick(19, 9, 0);
    double worst = 0;
    for (auto& [name, p] : net.named_params()) {
        const Tensor64& g = analytic.at(name);
        for (int probe = 0; probe < 2; ++probe) { // 2 random entries per tensor
            const std::size_t i = std::size_t(pick.uniform_int(0, int(p->size())));
            const double h = 1e-4;
            const double orig = p->data()[i];
            p->mutable_data()[i] = orig + h;
            const double fp = ops::sum(ops::mul(net.forward(x, ts), m)).data()[0];
            p->mutable_data()[i] = orig - h;
            const double fm = ops::sum(ops::mul(net.forward(x, ts), m)).data()[0];
            p->mutable_data()[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            worst = std::max(worst, std::abs(g.data()[i] - numeric) /
                                        std::max({std::abs(numeric), 1.0}));
        }
    }
    CHECK(worst < 1e-3);
    net.set_tracked(false);
}
