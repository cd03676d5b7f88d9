#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <set>

#include "doctest.h"
#include "sleepyco/backbone.hpp"

using namespace sleepyco;

namespace {
BackboneConfig tiny_config() {
    BackboneConfig cfg;
    cfg.block_channels = {4, 4, 8, 8, 8};
    return cfg;
}
}  // namespace

TEST_CASE("tap shapes follow the published table") {
    BackboneConfig cfg;  // full-size channels
    RngStream rng(1);
    Backbone net(cfg, rng);

    RngStream data_rng(2);
    Tensor x1 = Tensor::randn({1, 1, 3000}, data_rng, 1.0);
    FeatureSequenceSet f1 = net.forward(x1, Mode::Train);
    CHECK(f1.L == 1);
    CHECK(f1.taps.at(3).shape() == Shape{1, 192, 120});
    CHECK(f1.taps.at(4).shape() == Shape{1, 256, 24});
    CHECK(f1.taps.at(5).shape() == Shape{1, 256, 5});  // ceil(4.8) = 5

    Tensor x10 = Tensor::randn({1, 1, 30000}, data_rng, 1.0);
    FeatureSequenceSet f10 = net.forward(x10, Mode::Train);
    CHECK(f10.L == 10);
    CHECK(f10.taps.at(3).shape() == Shape{1, 192, 1200});
    CHECK(f10.taps.at(4).shape() == Shape{1, 256, 240});
    CHECK(f10.taps.at(5).shape() == Shape{1, 256, 48});
}

TEST_CASE("pyramid lengths obey the ceiling relation for several L") {
    BackboneConfig cfg = tiny_config();
    RngStream rng(3);
    Backbone net(cfg, rng);
    for (std::size_t L : {1, 2, 5, 10}) {
        RngStream data_rng(L);
        Tensor x = Tensor::randn({1, 1, 3000 * L}, data_rng);
        FeatureSequenceSet f = net.forward(x, Mode::Train);
        for (int stage : {3, 4, 5}) {
            const std::size_t r = cfg.reduction_ratio(stage);
            const std::size_t expect = (3000 * L + r - 1) / r;
            CHECK(f.taps.at(stage).shape()[2] == expect);
        }
    }
    CHECK(cfg.reduction_ratio(3) == 25);
    CHECK(cfg.reduction_ratio(4) == 125);
    CHECK(cfg.reduction_ratio(5) == 625);
}

TEST_CASE("backbone validates its input") {
    BackboneConfig cfg = tiny_config();
    RngStream rng(4);
    Backbone net(cfg, rng);
    CHECK_THROWS_AS(net.forward(Tensor::zeros({1, 2, 3000}), Mode::Train),
                    std::invalid_argument);
    CHECK_THROWS_AS(net.forward(Tensor::zeros({1, 1, 2999}), Mode::Train),
                    std::invalid_argument);
}

TEST_CASE("backbone structure: two convolutions per block, five blocks") {
    BackboneConfig cfg = tiny_config();
    RngStream rng(5);
    Backbone net(cfg, rng);
    CHECK(net.conv_layer_count() == 10);  // plus 3 lateral convs elsewhere = 13
    CHECK(net.blocks.size() == 5);
}

TEST_CASE("parameter names follow the checkpoint layout") {
    BackboneConfig cfg = tiny_config();
    RngStream rng(6);
    Backbone net(cfg, rng);
    std::vector<Parameter*> ps;
    net.params(ps);
    std::set<std::string> names;
    for (Parameter* p : ps) names.insert(p->name);
    CHECK(names.count("backbone.block1.conv1.weight"));
    CHECK(names.count("backbone.block1.conv2.bn.gamma"));
    CHECK(names.count("backbone.block3.conv1.prelu.alpha"));
    CHECK(names.count("backbone.block5.se.fc2.bias"));
    std::vector<BufferRef> bs;
    net.buffers(bs);
    std::set<std::string> bnames;
    for (const auto& b : bs) bnames.insert(b.name);
    CHECK(bnames.count("backbone.block2.conv1.bn.running_mean"));
    CHECK(bnames.count("backbone.block4.conv2.bn.running_var"));
}

TEST_CASE("squeeze-excitation gates per channel") {
    RngStream rng(7);
    SEBlock se("se", 6, 2, rng);

    // zero input stays zero: gating cannot create signal
    Tensor zero = Tensor::zeros({2, 6, 9});
    Tensor out_zero = se.forward(zero);
    for (double v : out_zero.data()) CHECK(v == 0.0);

    // each output channel is the input channel scaled by one value in (0,1)
    Tensor u = Tensor::randn({1, 6, 9}, rng);
    Tensor out = se.forward(u);
    for (int c = 0; c < 6; ++c) {
        double ratio = 0.0;
        bool first = true;
        for (int t = 0; t < 9; ++t) {
            const double uin = u.at({0, (std::size_t)c, (std::size_t)t});
            const double uout = out.at({0, (std::size_t)c, (std::size_t)t});
            if (std::abs(uin) < 1e-9) continue;
            const double r = uout / uin;
            if (first) {
                ratio = r;
                first = false;
            } else {
                CHECK(r == doctest::Approx(ratio).epsilon(1e-9));
            }
        }
        CHECK(ratio > 0.0);
        CHECK(ratio < 1.0);
    }

    // excitation forced to all-ones turns the block into the identity
    SEBlock ident("id", 4, 2, rng);
    for (double& v : ident.fc2.weight.tensor.data()) v = 0.0;
    for (double& v : ident.fc2.bias.tensor.data()) v = 1000.0;  // sigmoid -> 1.0
    Tensor w = Tensor::randn({1, 4, 5}, rng);
    Tensor out_id = ident.forward(w);
    CHECK(out_id.data() == w.data());
}

TEST_CASE("gradient reaches every backbone parameter") {
    BackboneConfig cfg = tiny_config();
    cfg.se_reduction = 1;  // keep the SE bottleneck wide enough to stay live
    RngStream rng(8);
    Backbone net(cfg, rng);
    RngStream data_rng(9);

    // one train pass arms the running statistics
    Tensor warm = Tensor::randn({4, 1, 3000}, data_rng);
    net.forward(warm, Mode::Train);

    // eval mode: every parameter (including conv biases) shapes the output
    Tensor x = Tensor::randn({4, 1, 3000}, data_rng);
    FeatureSequenceSet feats = net.forward(x, Mode::Eval);
    Tensor loss;
    for (auto& [stage, t] : feats.taps) {
        Tensor s = sum(tanh(t));
        loss = loss.defined() ? add(loss, s) : s;
    }
    std::vector<Parameter*> ps;
    net.params(ps);
    zero_grads(ps);
    backward(loss);
    for (Parameter* p : ps) {
        INFO(p->name);
        REQUIRE(p->tensor.has_grad());
        double norm = 0.0;
        for (double g : p->tensor.grad()) norm += g * g;
        CHECK(norm > 0.0);
    }
}

TEST_CASE("frozen backbone parameters stay bit-identical") {
    BackboneConfig cfg = tiny_config();
    RngStream rng(10);
    Backbone net(cfg, rng);
    net.freeze();
    std::vector<Parameter*> ps;
    net.params(ps);
    std::vector<std::vector<double>> before;
    for (Parameter* p : ps) before.push_back(p->tensor.data());

    RngStream data_rng(11);
    Tensor x = Tensor::randn({2, 1, 3000}, data_rng);
    FeatureSequenceSet feats = net.forward(x, Mode::Train);
    // frozen params require no grad, so no gradient flows into them
    Tensor probe = sum(feats.taps.at(5));
    CHECK_FALSE(probe.requires_grad());
    for (std::size_t i = 0; i < ps.size(); ++i)
        CHECK(ps[i]->tensor.data() == before[i]);
}
