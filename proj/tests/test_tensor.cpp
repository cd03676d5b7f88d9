#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "sleepyco/gradcheck.hpp"
#include "sleepyco/optim.hpp"
#include "sleepyco/tensor.hpp"

using namespace sleepyco;

namespace {

Tensor t1d(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor::from_data({1, 1, n}, std::move(v));
}

// direct sliding-window cross-correlation, no padding tricks
std::vector<double> conv_oracle(const std::vector<double>& x,
                                const std::vector<double>& w, long pad,
                                long stride) {
    const long T = static_cast<long>(x.size());
    const long K = static_cast<long>(w.size());
    const long To = (T + 2 * pad - K) / stride + 1;
    std::vector<double> out(To, 0.0);
    for (long t = 0; t < To; ++t)
        for (long k = 0; k < K; ++k) {
            const long xi = t * stride + k - pad;
            if (xi >= 0 && xi < T) out[t] += w[k] * x[xi];
        }
    return out;
}

}  // namespace

TEST_CASE("conv1d identity kernel") {
    Tensor out = conv1d(t1d({1, 2, 3}), Tensor::from_data({1, 1, 1}, {1.0}),
                        Tensor::zeros({1}), 1, 0);
    CHECK(out.data() == std::vector<double>{1, 2, 3});
}

TEST_CASE("conv1d box kernel with padding") {
    Tensor out = conv1d(t1d({1, 2, 3}), Tensor::from_data({1, 1, 3}, {1, 1, 1}),
                        Tensor::zeros({1}), 1, 1);
    CHECK(out.data() == std::vector<double>{3, 6, 5});
}

TEST_CASE("conv1d epoch-sized shape") {
    RngStream rng(7);
    Tensor x = Tensor::randn({1, 1, 3000}, rng);
    Tensor w = Tensor::randn({64, 1, 3}, rng, 0.1);
    Tensor out = conv1d(x, w, Tensor::zeros({64}), 1, 1);
    CHECK(out.shape() == Shape{1, 64, 3000});
}

TEST_CASE("conv1d matches the sliding-window oracle") {
    RngStream rng(21);
    for (int trial = 0; trial < 8; ++trial) {
        const std::size_t T = static_cast<std::size_t>(rng.uniform_int(5, 40));
        const std::size_t K = static_cast<std::size_t>(rng.uniform_int(1, 5));
        const std::size_t pad = static_cast<std::size_t>(rng.uniform_int(0, 3));
        const std::size_t stride = static_cast<std::size_t>(rng.uniform_int(1, 3));
        if (K > T + 2 * pad) continue;
        Tensor x = Tensor::randn({1, 1, T}, rng);
        Tensor w = Tensor::randn({1, 1, K}, rng);
        Tensor out = conv1d(x, w, Tensor::zeros({1}), stride, pad);
        const auto expect = conv_oracle(x.data(), w.data(),
                                        static_cast<long>(pad),
                                        static_cast<long>(stride));
        REQUIRE(out.size() == expect.size());
        for (std::size_t i = 0; i < expect.size(); ++i)
            CHECK(out.data()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }
}

TEST_CASE("conv1d rejects channel mismatch") {
    Tensor x = Tensor::zeros({1, 2, 8});
    Tensor w = Tensor::zeros({4, 3, 3});
    CHECK_THROWS_WITH_AS(conv1d(x, w, Tensor::zeros({4}), 1, 1),
                         doctest::Contains("channels"), std::invalid_argument);
}

TEST_CASE("maxpool1d_ceil pools the trailing partial window") {
    Tensor out = maxpool1d_ceil(t1d({1, 3, 2, 5, 4, 9}), 5);
    CHECK(out.data() == std::vector<double>{5, 9});
}

TEST_CASE("maxpool1d_ceil chain reproduces backbone lengths") {
    RngStream rng(3);
    Tensor x = Tensor::randn({1, 1, 3000}, rng);
    std::vector<std::size_t> lengths;
    for (int i = 0; i < 4; ++i) {
        x = maxpool1d_ceil(x, 5);
        lengths.push_back(x.shape()[2]);
    }
    CHECK(lengths == std::vector<std::size_t>{600, 120, 24, 5});
}

TEST_CASE("maxpool1d_ceil length property and constant invariance") {
    RngStream rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t T = static_cast<std::size_t>(rng.uniform_int(1, 50));
        const std::size_t w = static_cast<std::size_t>(rng.uniform_int(1, 9));
        Tensor x = Tensor::full({1, 1, T}, 2.5);
        Tensor out = maxpool1d_ceil(x, w);
        CHECK(out.shape()[2] == (T + w - 1) / w);
        for (double v : out.data()) CHECK(v == 2.5);
    }
    CHECK_THROWS_AS(maxpool1d_ceil(Tensor::zeros({1, 1, 0}), 3),
                    std::invalid_argument);
}

TEST_CASE("batchnorm1d normalizes per channel") {
    Tensor x = Tensor::from_data({1, 1, 2}, {1.0, 3.0});
    BatchNormState st;
    Tensor out = batchnorm1d(x, Tensor::full({1}, 1.0), Tensor::zeros({1}), st,
                             Mode::Train);
    CHECK(out.data()[0] == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(out.data()[1] == doctest::Approx(1.0).epsilon(1e-4));

    // already standardized input passes through (up to eps)
    RngStream rng(5);
    Tensor z = Tensor::randn({4, 1, 50}, rng);
    double m = 0.0;
    for (double v : z.data()) m += v;
    m /= static_cast<double>(z.size());
    double var = 0.0;
    for (double& v : z.data()) v -= m;
    for (double v : z.data()) var += v * v;
    var /= static_cast<double>(z.size());
    for (double& v : z.data()) v /= std::sqrt(var);
    BatchNormState st2;
    Tensor out2 = batchnorm1d(z, Tensor::full({1}, 1.0), Tensor::zeros({1}), st2,
                              Mode::Train);
    for (std::size_t i = 0; i < z.size(); ++i)
        CHECK(out2.data()[i] == doctest::Approx(z.data()[i]).epsilon(1e-4));
}

TEST_CASE("batchnorm1d eval mode uses running statistics only") {
    BatchNormState st;
    CHECK_THROWS_AS(batchnorm1d(Tensor::zeros({1, 1, 4}), Tensor::full({1}, 1.0),
                                Tensor::zeros({1}), st, Mode::Eval),
                    std::runtime_error);
    st.initialized = true;
    st.running_mean = {2.0};
    st.running_var = {4.0};
    Tensor a = Tensor::from_data({1, 1, 2}, {0.0, 10.0});
    Tensor b = Tensor::from_data({1, 1, 2}, {-100.0, 7.0});
    Tensor ya = batchnorm1d(a, Tensor::full({1}, 1.0), Tensor::zeros({1}), st,
                            Mode::Eval);
    Tensor yb = batchnorm1d(b, Tensor::full({1}, 1.0), Tensor::zeros({1}), st,
                            Mode::Eval);
    // same running stats -> same mapping regardless of batch content
    CHECK(ya.data()[0] == doctest::Approx((0.0 - 2.0) / std::sqrt(4.0 + st.eps)));
    CHECK(yb.data()[1] == doctest::Approx((7.0 - 2.0) / std::sqrt(4.0 + st.eps)));
    CHECK_THROWS_AS(batchnorm1d(Tensor::zeros({1, 1, 1}), Tensor::full({1}, 1.0),
                                Tensor::zeros({1}), st, Mode::Train),
                    std::invalid_argument);
}

TEST_CASE("prelu piecewise definition") {
    Tensor x = Tensor::from_data({1, 1, 3}, {-4.0, 0.0, 2.0});
    Tensor alpha = Tensor::full({1}, 0.25);
    Tensor out = prelu(x, alpha, 1);
    CHECK(out.data() == std::vector<double>{-1.0, 0.0, 2.0});

    Tensor relu_like = prelu(x, Tensor::zeros({1}), 1);
    CHECK(relu_like.data() == std::vector<double>{0.0, 0.0, 2.0});
}

TEST_CASE("linear basics") {
    Tensor x = Tensor::from_data({1, 2}, {1.0, 2.0});
    Tensor w = Tensor::from_data({2, 1}, {1.0, 1.0});
    Tensor b = Tensor::from_data({1}, {0.5});
    CHECK(linear(x, w, b).data() == std::vector<double>{3.5});

    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    CHECK(linear(x, eye, Tensor::zeros({2})).data() == x.data());

    CHECK_THROWS_AS(linear(x, Tensor::zeros({3, 4}), Tensor::zeros({4})),
                    std::invalid_argument);

    // logits sized like the class head
    RngStream rng(9);
    Tensor abar = Tensor::randn({1, 128}, rng);
    Tensor wa = Tensor::randn({128, 5}, rng);
    Tensor ba = Tensor::randn({5}, rng);
    Tensor o = linear(abar, wa, ba);
    CHECK(o.shape() == Shape{1, 5});
    for (int j = 0; j < 5; ++j) {
        double acc = ba.data()[j];
        for (int k = 0; k < 128; ++k) acc += abar.data()[k] * wa.data()[k * 5 + j];
        CHECK(o.data()[j] == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("softmax values and invariances") {
    Tensor s = softmax(Tensor::from_data({2}, {0.0, 0.0}), 0);
    CHECK(s.data()[0] == doctest::Approx(0.5));
    CHECK(s.data()[1] == doctest::Approx(0.5));

    Tensor v = Tensor::from_data({3}, {std::log(1.0), std::log(2.0), std::log(3.0)});
    Tensor sv = softmax(v, 0);
    CHECK(sv.data()[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK(sv.data()[1] == doctest::Approx(2.0 / 6.0).epsilon(1e-12));
    CHECK(sv.data()[2] == doctest::Approx(3.0 / 6.0).epsilon(1e-12));

    RngStream rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = Tensor::randn({4, 7}, rng, 3.0);
        Tensor p = softmax(x, 1);
        for (int r = 0; r < 4; ++r) {
            double rowsum = 0.0;
            for (int c = 0; c < 7; ++c) rowsum += p.at({(std::size_t)r, (std::size_t)c});
            CHECK(std::abs(rowsum - 1.0) < 1e-12);
        }
        Tensor shifted = softmax(add_scalar(x, 17.5), 1);
        for (std::size_t i = 0; i < p.size(); ++i)
            CHECK(shifted.data()[i] == doctest::Approx(p.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("layer_norm closed forms") {
    Tensor g = Tensor::full({3}, 1.0);
    Tensor b = Tensor::zeros({3});
    Tensor c = layer_norm(Tensor::from_data({3}, {4.0, 4.0, 4.0}), g, b);
    for (double v : c.data()) CHECK(v == doctest::Approx(0.0));

    Tensor pm = layer_norm(Tensor::from_data({2}, {-1.0, 1.0}), Tensor::full({2}, 1.0),
                           Tensor::zeros({2}));
    CHECK(pm.data()[0] == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(pm.data()[1] == doctest::Approx(1.0).epsilon(1e-4));

    Tensor y = layer_norm(Tensor::from_data({3}, {1.0, 2.0, 3.0}), g, b);
    double m = 0.0, var = 0.0;
    for (double v : y.data()) m += v;
    m /= 3.0;
    for (double v : y.data()) var += (v - m) * (v - m);
    var /= 3.0;
    CHECK(m == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("backward basics") {
    Tensor x = Tensor::scalar(3.0, true);
    Tensor loss = mul(x, x);
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(6.0));
    backward(loss);  // repeated calls accumulate on leaves
    CHECK(x.grad()[0] == doctest::Approx(12.0));

    Tensor v = Tensor::from_data({4}, {0.3, -1.2, 2.0, 0.5}, true);
    Tensor s = sum(softmax(v, 0));
    backward(s);
    for (double gv : v.grad()) CHECK(std::abs(gv) < 1e-12);

    CHECK_THROWS_AS(backward(Tensor::from_data({2}, {1.0, 2.0}, true)),
                    std::invalid_argument);
}

TEST_CASE("three-layer network matches finite differences") {
    RngStream rng(31);
    std::vector<Tensor> inputs{Tensor::randn({2, 4}, rng), Tensor::randn({4, 6}, rng),
                               Tensor::randn({6}, rng), Tensor::randn({6, 3}, rng),
                               Tensor::randn({3}, rng), Tensor::randn({3, 2}, rng),
                               Tensor::randn({2}, rng)};
    const double err = finite_diff_check(
        [](std::vector<Tensor>& t) {
            Tensor h1 = tanh(linear(t[0], t[1], t[2]));
            Tensor h2 = sigmoid(linear(h1, t[3], t[4]));
            return sum(linear(h2, t[5], t[6]));
        },
        inputs);
    CHECK(err < 1e-4);
}

TEST_CASE("gradient suite passes on every op") {
    for (const auto& rep : run_gradient_suite(2024, 3)) {
        INFO(rep.name, " max rel err ", rep.max_rel_err);
        CHECK(rep.pass);
    }
}

TEST_CASE("forward and gradients are deterministic across runs") {
    auto run_once = [] {
        RngStream rng(77);
        Tensor x = Tensor::randn({2, 1, 60}, rng);
        Tensor w = Tensor::randn({3, 1, 3}, rng, 0.5, true);
        Tensor b = Tensor::randn({3}, rng, 0.1, true);
        Tensor loss = sum(tanh(conv1d(x, w, b, 1, 1)));
        backward(loss);
        std::vector<double> out = loss.data();
        out.insert(out.end(), w.grad().begin(), w.grad().end());
        return out;
    };
    CHECK(run_once() == run_once());
}

TEST_CASE("attention_core equals materialized attention") {
    RngStream rng(41);
    const std::size_t B = 2, H = 2, T = 6, D = 3;
    Tensor q = Tensor::randn({B, H, T, D}, rng);
    Tensor k = Tensor::randn({B, H, T, D}, rng);
    Tensor v = Tensor::randn({B, H, T, D}, rng);
    const double scale = 1.0 / std::sqrt(static_cast<double>(D));
    Tensor fused = attention_core(q, k, v, scale, 0.0, Mode::Eval, 0);
    Tensor scores = mul_scalar(matmul(q, transpose_last2(k)), scale);
    Tensor ref = matmul(softmax(scores, 3), v);
    REQUIRE(fused.shape() == ref.shape());
    for (std::size_t i = 0; i < ref.size(); ++i)
        CHECK(fused.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
}

TEST_CASE("adam closed forms and freeze contract") {
    Parameter p{Tensor::from_data({1}, {1.0}, true), "w"};
    p.tensor.zero_grad();
    p.tensor.node()->grad = {0.5};
    std::vector<Parameter*> params{&p};
    AdamState st;
    st.weight_decay = 0.0;
    adam_step(params, st);
    CHECK(st.step_count == 1);
    CHECK(p.tensor.data()[0] ==
          doctest::Approx(1.0 - 1e-4 * (0.5 / (0.5 + 1e-8))).epsilon(1e-12));

    // zero gradient, zero weight decay: unchanged
    Parameter q{Tensor::from_data({2}, {0.25, -1.5}, true), "q"};
    q.tensor.zero_grad();
    std::vector<Parameter*> qs{&q};
    AdamState st2;
    st2.weight_decay = 0.0;
    adam_step(qs, st2);
    CHECK(q.tensor.data() == std::vector<double>{0.25, -1.5});

    // frozen parameters never move, whatever the gradient buffer says
    Parameter f{Tensor::from_data({2}, {3.0, 4.0}, true), "frozen"};
    f.tensor.zero_grad();
    f.tensor.node()->grad = {9.0, -9.0};
    f.freeze();
    std::vector<Parameter*> fs{&f};
    AdamState st3;
    for (int i = 0; i < 10; ++i) adam_step(fs, st3);
    CHECK(f.tensor.data() == std::vector<double>{3.0, 4.0});
    CHECK(st3.step_count == 10);

    Parameter n{Tensor::from_data({1}, {1.0}, true), "bad.param"};
    n.tensor.zero_grad();
    n.tensor.node()->grad = {std::nan("")};
    std::vector<Parameter*> ns{&n};
    AdamState st4;
    CHECK_THROWS_WITH_AS(adam_step(ns, st4), doctest::Contains("bad.param"),
                         std::runtime_error);
}
