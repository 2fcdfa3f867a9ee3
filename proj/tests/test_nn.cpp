#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "nn.hpp"

using namespace metacsi;
using namespace metacsi::nn;
using prep::PreprocessedSample;

namespace {

nn::ArchConfig tiny_arch(Head head, int bands = 1) {
    ArchConfig a;
    a.K = 8;
    a.M = 3;
    a.n_conv = 2;
    a.n_filters = 4;
    a.n_fc = 2;
    a.fc_width = 16;
    a.pool_bands = bands;
    a.head = head;
    a.n_classes = 6;
    a.n_people = 2;
    a.target_width = 5.0;
    a.target_depth = 4.0;
    return a;
}

PreprocessedSample random_sample(Rng& rng, const ArchConfig& a, std::int64_t index) {
    PreprocessedSample s;
    s.amplitude = RealMatrix(a.K, a.M);
    s.real_part = RealMatrix(a.K, a.M);
    s.imag_part = RealMatrix(a.K, a.M);
    for (auto& v : s.amplitude.data()) v = uniform(rng, 0.5, 1.5);
    for (auto& v : s.real_part.data()) v = gaussian(rng);
    for (auto& v : s.imag_part.data()) v = gaussian(rng);
    s.index = index;
    if (a.head == Head::classification) {
        s.label = sim::Label::count(static_cast<int>(uniform_index(rng, a.n_classes)));
    } else {
        std::vector<Point> pts;
        for (int p = 0; p < a.n_people; ++p) pts.push_back({uniform(rng, 0, 5), uniform(rng, 0, 4)});
        s.label = sim::Label::positions(pts);
    }
    return s;
}

// Worst per-block relative error between the analytic gradient and central differences.
double fd_check(const ArchConfig& arch, std::uint64_t seed) {
    Network net(arch);
    Rng rng(seed);
    std::vector<PreprocessedSample> data;
    for (int i = 0; i < 3; ++i) data.push_back(random_sample(rng, arch, i));
    std::vector<const PreprocessedSample*> batch;
    for (auto& s : data) batch.push_back(&s);
    ModelParams p = init_params(arch, seed);
    // Non-zero biases so every bias gradient is exercised away from kinks.
    for (auto& b : p.blocks)
        if (b.kind == BlockKind::conv_bias || b.kind == BlockKind::dense_bias)
            for (auto& v : b.values) v = 0.05 * gaussian(rng);

    ModelParams g;
    net.loss_and_gradient(p, batch, &g);
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t bi = 0; bi < p.blocks.size(); ++bi) {
        double num = 0, den = 0;
        for (std::size_t j = 0; j < p.blocks[bi].values.size(); ++j) {
            ModelParams q = p;
            q.blocks[bi].values[j] += h;
            const double up = net.loss_and_gradient(q, batch, nullptr);
            q.blocks[bi].values[j] -= 2 * h;
            const double dn = net.loss_and_gradient(q, batch, nullptr);
            const double fd = (up - dn) / (2 * h);
            const double an = g.blocks[bi].values[j];
            num += (fd - an) * (fd - an);
            den += std::max(fd * fd, an * an);
        }
        if (den > 0) worst = std::max(worst, std::sqrt(num / den));
    }
    return worst;
}

}  // namespace

TEST_CASE("softmax and argmax") {
    for (double v : softmax(std::vector<double>{0, 0, 0})) CHECK(v == doctest::Approx(1.0 / 3));
    const auto p = softmax(std::vector<double>{std::log(1.0), std::log(2.0), std::log(3.0)});
    CHECK(p[0] == doctest::Approx(1.0 / 6));
    CHECK(p[1] == doctest::Approx(2.0 / 6));
    CHECK(p[2] == doctest::Approx(3.0 / 6));
    const auto big = softmax(std::vector<double>{1000, 0});
    CHECK(big[0] == 1.0);
    CHECK(big[1] >= 0.0);
    CHECK(big[1] < 1e-300);

    CHECK(predict_class(std::vector<double>{0.1, 0.7, 0.2}) == 1);
    CHECK(predict_class(std::vector<double>{0.5, 0.5}) == 0);
    CHECK(predict_class(std::vector<double>{0, 0, 0, 1}) == 3);
}

TEST_CASE("losses") {
    for (int C : {6, 11, 16}) {
        std::vector<std::vector<double>> lik(2, std::vector<double>(C, 1.0 / C)), hot(2, std::vector<double>(C, 0.0));
        hot[0][0] = hot[1][C - 1] = 1.0;
        CHECK(std::abs(ce_loss(lik, hot) - std::log(double(C))) <= 1e-12);
    }
    std::vector<std::vector<double>> hot{{0, 1, 0}};
    CHECK(ce_loss(hot, hot) == 0.0);
    CHECK(ce_loss(std::vector<std::vector<double>>{{0.8, 0.2}}, std::vector<std::vector<double>>{{1, 0}}) ==
          doctest::Approx(-std::log(0.8)));

    std::vector<std::vector<double>> d{{1.0, 2.0}}, t{{1.3, 2.4}};
    CHECK(mse_loss(d, d, 1) == 0.0);
    CHECK(mse_loss(d, t, 1) == doctest::Approx(0.25));
    std::vector<std::vector<double>> d2{{1.0, 2.0}, {1.0, 2.0}}, t2{{1.3, 2.4}, {1.3, 2.4}};
    CHECK(mse_loss(d2, t2, 1) == doctest::Approx(mse_loss(d, t, 1)));
    CHECK_THROWS_AS(ce_loss(std::vector<std::vector<double>>{}, std::vector<std::vector<double>>{}), Error);
}

TEST_CASE("forward at zero parameters") {
    Rng rng(1);
    auto cls = tiny_arch(Head::classification);
    Network net(cls);
    const auto s = random_sample(rng, cls, 0);
    const auto pr = net.forward(zero_params(cls), s);
    for (double v : pr.likelihoods) CHECK(v == doctest::Approx(1.0 / 6));
    CHECK(pr.cls == 0);

    auto reg = tiny_arch(Head::regression);
    Network rnet(reg);
    const auto rs = random_sample(rng, reg, 0);
    const auto rp = rnet.forward(zero_params(reg), rs);
    REQUIRE(rp.coords.size() == 4);
    for (double v : rp.coords) CHECK(v == 0.0);

    const auto params = init_params(cls, 77);
    const auto a = net.forward(params, s);
    const auto b = net.forward(init_params(cls, 77), s);
    CHECK(a.likelihoods == b.likelihoods);
}

TEST_CASE("gradient matches finite differences") {
    CHECK(fd_check(tiny_arch(Head::classification), 3) <= 1e-3);
    CHECK(fd_check(tiny_arch(Head::regression), 4) <= 1e-3);
    CHECK(fd_check(tiny_arch(Head::classification, 3), 5) <= 1e-3);
    CHECK(fd_check(tiny_arch(Head::regression, 8), 6) <= 1e-3);
    auto dense_only = tiny_arch(Head::classification);
    dense_only.n_conv = 0;
    CHECK(fd_check(dense_only, 7) <= 1e-3);
}

TEST_CASE("softmax cross-entropy logit gradient") {
    // With no hidden layers the output bias gradient is the logit gradient.
    auto a = tiny_arch(Head::classification);
    a.n_fc = 0;
    Network net(a);
    Rng rng(8);
    const auto s = random_sample(rng, a, 0);
    const auto p = init_params(a, 9);
    ModelParams g;
    const PreprocessedSample* one[] = {&s};
    net.loss_and_gradient(p, one, &g);
    const auto lik = net.forward(p, s).likelihoods;
    const auto& gb = g.blocks.back().values;
    REQUIRE(g.blocks.back().kind == BlockKind::dense_bias);
    for (int c = 0; c < a.n_classes; ++c) {
        const double e = c == s.label.cls ? 1.0 : 0.0;
        CHECK(std::abs(gb[c] - (lik[c] - e)) <= 1e-9);
    }
}

TEST_CASE("perfect regression fit has zero gradient") {
    auto a = tiny_arch(Head::regression);
    a.n_people = 1;
    Network net(a);
    Rng rng(2);
    auto s = random_sample(rng, a, 0);
    ModelParams p = zero_params(a);
    // Zero weights leave only the output bias; set it to the normalized truth.
    auto& bias = p.blocks.back().values;
    bias[0] = s.label.coords[0].x / a.target_width;
    bias[1] = s.label.coords[0].y / a.target_depth;
    ModelParams g;
    const PreprocessedSample* one[] = {&s};
    CHECK(net.loss_and_gradient(p, one, &g) == 0.0);
    for (const auto& b : g.blocks)
        for (double v : b.values) CHECK(v == 0.0);
}

TEST_CASE("checkpoint round trip") {
    const auto a = tiny_arch(Head::classification, 2);
    const auto p = init_params(a, 11);
    const auto path = std::filesystem::temp_directory_path() / "metacsi_nn_ckpt.msnn";
    save_checkpoint(path, a, p);
    const auto [a2, p2] = load_checkpoint(path);
    CHECK(a2 == a);
    CHECK(p2 == p);

    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 5);
    CHECK_THROWS_AS(load_checkpoint(path), Error);
    {
        std::ofstream f(path, std::ios::binary);
        f << "NOPE";
    }
    CHECK_THROWS_AS(load_checkpoint(path), Error);
    std::filesystem::remove(path);
}

TEST_CASE("shape mismatch") {
    const auto a = tiny_arch(Head::classification);
    Network net(a);
    auto other = a;
    other.fc_width = 8;
    ModelParams g;
    Rng rng(1);
    const auto s = random_sample(rng, a, 0);
    const PreprocessedSample* one[] = {&s};
    CHECK_THROWS_AS(net.loss_and_gradient(init_params(other, 1), one, &g), Error);
    auto wrong = a;
    wrong.K = 9;
    const auto bad = random_sample(rng, wrong, 1);
    const PreprocessedSample* b[] = {&bad};
    CHECK_THROWS_AS(net.loss_and_gradient(init_params(a, 1), b, &g), Error);
}
