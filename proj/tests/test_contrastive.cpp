#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "sleepyco/contrastive.hpp"

using namespace sleepyco;

namespace {

// direct double-loop evaluation of the supervised contrastive objective
double supcon_oracle(const std::vector<std::vector<double>>& z,
                     const std::vector<int>& labels, double tau) {
    const std::size_t n = z.size();
    auto dot = [&](std::size_t a, std::size_t b) {
        double s = 0.0;
        for (std::size_t d = 0; d < z[a].size(); ++d) s += z[a][d] * z[b][d];
        return s;
    };
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t npos = 0;
        for (std::size_t m = 0; m < n; ++m)
            if (m != i && labels[m] == labels[i]) ++npos;
        if (npos == 0) continue;
        double denom = 0.0;
        for (std::size_t a = 0; a < n; ++a)
            if (a != i) denom += std::exp(dot(i, a) / tau);
        double inner = 0.0;
        for (std::size_t m = 0; m < n; ++m)
            if (m != i && labels[m] == labels[i])
                inner += std::log(std::exp(dot(i, m) / tau) / denom);
        loss -= inner / static_cast<double>(npos);
    }
    return loss;
}

std::vector<std::vector<double>> unit_rows(const Tensor& z) {
    const std::size_t n = z.shape()[0], d = z.shape()[1];
    std::vector<std::vector<double>> rows(n, std::vector<double>(d));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) rows[i][j] = z.at({i, j});
    return rows;
}

Tensor random_unit_batch(std::size_t n, std::size_t d, RngStream& rng) {
    Tensor z = Tensor::randn({n, d}, rng);
    return l2_normalize_rows(z);
}

}  // namespace

TEST_CASE("temporal average pooling matches the mean oracle") {
    RngStream rng(1);
    Tensor feats = Tensor::randn({2, 6, 5}, rng);
    Tensor r = global_avg_pool_time(feats);
    CHECK(r.shape() == Shape{2, 6});
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t c = 0; c < 6; ++c) {
            double m = 0.0;
            for (std::size_t t = 0; t < 5; ++t) m += feats.at({b, c, t});
            m /= 5.0;
            CHECK(r.at({b, c}) == doctest::Approx(m).epsilon(1e-12));
        }

    // constant-per-channel features pool to those constants
    Tensor constant = Tensor::from_data({1, 2, 3}, {4, 4, 4, -7, -7, -7});
    Tensor rc = global_avg_pool_time(constant);
    CHECK(rc.data() == std::vector<double>{4.0, -7.0});
}

TEST_CASE("representation dimension equals the deepest tap width") {
    ModelConfig m;
    m.d_f = 8;
    m.d_m = 8;
    m.n_heads = 2;
    m.n_layers = 1;
    m.d_z = 8;
    BackboneConfig b;  // full-size: c5 = 256
    RngStream rng(2);
    CrlModel model(m, b, rng);
    RngStream data_rng(3);
    Tensor x = Tensor::randn({2, 1, 3000}, data_rng);
    Tensor r = model.represent(x, Mode::Train);
    CHECK(r.shape() == Shape{2, 256});
    Tensor z = model.embed(x, Mode::Train);
    CHECK(z.shape() == Shape{2, m.d_z});
    for (std::size_t i = 0; i < 2; ++i) {
        double norm = 0.0;
        for (std::size_t d = 0; d < m.d_z; ++d) norm += z.at({i, d}) * z.at({i, d});
        CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-10);
    }
}

TEST_CASE("the f5 reading projects through a pretraining-local lateral") {
    ModelConfig m;
    m.d_f = 16;
    m.d_m = 8;
    m.n_heads = 2;
    m.n_layers = 1;
    m.d_z = 8;
    m.crl_representation = CrlRepresentation::F5;
    BackboneConfig b;
    b.block_channels = {4, 4, 8, 8, 8};
    RngStream rng(4);
    CrlModel model(m, b, rng);
    RngStream data_rng(5);
    Tensor r = model.represent(Tensor::randn({1, 1, 3000}, data_rng), Mode::Train);
    CHECK(r.shape() == Shape{1, 16});
    std::vector<Parameter*> ps;
    model.params(ps);
    bool has_local_lateral = false;
    for (Parameter* p : ps)
        if (p->name == "projector.lateral.weight") has_local_lateral = true;
    CHECK(has_local_lateral);
}

TEST_CASE("project_normalize contracts") {
    Tensor v = Tensor::from_data({1, 4}, {3.0, 4.0, 0.0, 0.0});
    Tensor z = l2_normalize_rows(v);
    CHECK(z.data()[0] == doctest::Approx(0.6));
    CHECK(z.data()[1] == doctest::Approx(0.8));

    Tensor scaled = l2_normalize_rows(mul_scalar(v, 7.0));
    for (std::size_t i = 0; i < z.size(); ++i)
        CHECK(scaled.data()[i] == doctest::Approx(z.data()[i]).epsilon(1e-14));

    CHECK_THROWS_AS(l2_normalize_rows(Tensor::zeros({1, 3})), std::runtime_error);

    RngStream rng(6);
    ProjectionHead head("projector", 12, 128, 8, rng);
    Tensor r = Tensor::randn({3, 12}, rng);
    Tensor out = head.project_normalize(r);
    CHECK(out.shape() == Shape{3, 8});
    for (std::size_t i = 0; i < 3; ++i) {
        double norm = 0.0;
        for (std::size_t d = 0; d < 8; ++d) norm += out.at({i, d}) * out.at({i, d});
        CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-10);
    }
}

TEST_CASE("supcon closed form: identical vectors, one class") {
    std::vector<double> row{1.0, 0.0, 0.0};
    std::vector<double> data;
    for (int i = 0; i < 4; ++i) data.insert(data.end(), row.begin(), row.end());
    Tensor z = Tensor::from_data({4, 3}, std::move(data));
    const double loss = supcon_loss(z, {2, 2, 2, 2}, 0.07).item();
    CHECK(loss == doctest::Approx(4.0 * std::log(3.0)).epsilon(1e-10));
}

TEST_CASE("supcon matches the double-loop oracle") {
    RngStream rng(7);
    for (int trial = 0; trial < 12; ++trial) {
        const std::size_t n = static_cast<std::size_t>(rng.uniform_int(2, 32)) * 2;
        const int classes = static_cast<int>(rng.uniform_int(2, 5));
        Tensor z = random_unit_batch(n, 6, rng);
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; i += 2)
            labels[i] = labels[i + 1] = static_cast<int>(rng.uniform_int(0, classes - 1));
        const double got = supcon_loss(z, labels, 0.07).item();
        const double expect = supcon_oracle(unit_rows(z), labels, 0.07);
        CHECK(got == doctest::Approx(expect).epsilon(1e-10));
        CHECK(got >= 0.0);
    }
}

TEST_CASE("samples without positives contribute zero") {
    RngStream rng(8);
    Tensor z = random_unit_batch(5, 4, rng);
    std::vector<int> labels{0, 0, 1, 1, 3};  // the last sample has no positives
    CHECK(count_zero_positive(labels) == 1);
    const double got = supcon_loss(z, labels, 0.2).item();
    const double expect = supcon_oracle(unit_rows(z), labels, 0.2);
    CHECK(got == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("supcon invariances: permutation and rotation") {
    RngStream rng(9);
    const std::size_t n = 8, d = 5;
    Tensor z = random_unit_batch(n, d, rng);
    std::vector<int> labels{0, 0, 1, 1, 0, 1, 0, 1};
    const double base = supcon_loss(z, labels, 0.1).item();

    // batch order permutation
    std::vector<std::size_t> perm{5, 2, 7, 0, 3, 6, 1, 4};
    std::vector<double> pdata(n * d);
    std::vector<int> plabels(n);
    for (std::size_t i = 0; i < n; ++i) {
        plabels[i] = labels[perm[i]];
        for (std::size_t k = 0; k < d; ++k) pdata[i * d + k] = z.at({perm[i], k});
    }
    CHECK(supcon_loss(Tensor::from_data({n, d}, std::move(pdata)), plabels, 0.1)
              .item() == doctest::Approx(base).epsilon(1e-12));

    // common rotation (a chain of Givens rotations)
    std::vector<double> rdata(z.data());
    for (int g = 0; g < 6; ++g) {
        const std::size_t a = static_cast<std::size_t>(rng.uniform_int(0, d - 1));
        std::size_t b = static_cast<std::size_t>(rng.uniform_int(0, d - 1));
        if (a == b) b = (b + 1) % d;
        const double th = rng.uniform(0.0, 2.0 * M_PI);
        for (std::size_t i = 0; i < n; ++i) {
            const double xa = rdata[i * d + a], xb = rdata[i * d + b];
            rdata[i * d + a] = std::cos(th) * xa - std::sin(th) * xb;
            rdata[i * d + b] = std::sin(th) * xa + std::cos(th) * xb;
        }
    }
    CHECK(supcon_loss(Tensor::from_data({n, d}, std::move(rdata)), labels, 0.1)
              .item() == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("pulling a positive pair together never hurts its inner term") {
    // pair lives in the e1-e2 plane; all other vectors in the orthogonal
    // complement, so only the pair similarity changes
    RngStream rng(10);
    const std::size_t d = 6;
    auto pair_term = [&](double angle) {
        std::vector<double> data;
        data.insert(data.end(), {std::cos(angle), std::sin(angle), 0, 0, 0, 0});
        data.insert(data.end(), {std::cos(-angle), std::sin(-angle), 0, 0, 0, 0});
        for (int i = 0; i < 3; ++i) {
            std::vector<double> rest(d, 0.0);
            rest[2 + i] = 1.0;
            data.insert(data.end(), rest.begin(), rest.end());
        }
        Tensor z = Tensor::from_data({5, d}, std::move(data));
        // labels: the pair shares one class, the others share another
        return supcon_loss(z, {0, 0, 1, 1, 1}, 0.3).item();
    };
    double prev = pair_term(1.2);
    for (double angle = 1.0; angle >= 0.0; angle -= 0.2) {
        const double cur = pair_term(angle);
        CHECK(cur <= prev + 1e-12);
        prev = cur;
    }
}

TEST_CASE("supcon rejects bad inputs") {
    RngStream rng(11);
    Tensor z = random_unit_batch(4, 3, rng);
    CHECK_THROWS_AS(supcon_loss(z, {0, 0, 1, 1}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(supcon_loss(z, {0, 0}, 0.1), std::invalid_argument);
    Tensor one = random_unit_batch(1, 3, rng);
    CHECK_THROWS_AS(supcon_loss(one, {0}, 0.1), std::invalid_argument);
}
