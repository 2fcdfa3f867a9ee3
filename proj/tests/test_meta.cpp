#include <doctest.h>

#include <cmath>

#include "meta.hpp"

using namespace metacsi;
using namespace metacsi::meta;
using prep::PreprocessedSample;

namespace {

struct Scalar {
    std::int64_t index = 0;
    double a = 0.0;
};

// Mean of (theta - a)^2 over the batch.
class Quadratic final : public Objective<Scalar> {
public:
    double loss(const ModelParams& p, std::span<const Scalar* const> batch, ModelParams* grad) const override {
        const double th = p.blocks[0].values[0];
        double l = 0, g = 0;
        for (const Scalar* s : batch) {
            l += (th - s->a) * (th - s->a);
            g += 2 * (th - s->a);
        }
        const double n = double(batch.size());
        if (grad) {
            *grad = p;
            grad->blocks[0].values[0] = g / n;
        }
        return l / n;
    }
};

ModelParams scalar(double v) {
    ModelParams p;
    p.blocks.push_back({nn::BlockKind::dense_weight, {1}, {v}});
    return p;
}

double value(const ModelParams& p) { return p.blocks[0].values[0]; }

nn::ArchConfig small_arch(int n_conv) {
    nn::ArchConfig a;
    a.K = 8;
    a.M = 3;
    a.n_conv = n_conv;
    a.n_filters = 4;
    a.n_fc = 2;
    a.fc_width = 16;
    a.n_classes = 3;
    return a;
}

std::vector<PreprocessedSample> samples(const nn::ArchConfig& a, int n, std::uint64_t seed, std::int64_t first = 0) {
    Rng rng(seed);
    std::vector<PreprocessedSample> out(n);
    for (int i = 0; i < n; ++i) {
        auto& s = out[i];
        const int c = i % a.n_classes;
        s.amplitude = RealMatrix(a.K, a.M);
        s.real_part = RealMatrix(a.K, a.M);
        s.imag_part = RealMatrix(a.K, a.M);
        for (auto& v : s.amplitude.data()) v = 0.5 + 0.5 * c + 0.1 * gaussian(rng);
        for (auto& v : s.real_part.data()) v = gaussian(rng);
        for (auto& v : s.imag_part.data()) v = gaussian(rng);
        s.label = sim::Label::count(c);
        s.index = first + i;
    }
    return out;
}

std::vector<const PreprocessedSample*> ptrs(const std::vector<PreprocessedSample>& v) {
    std::vector<const PreprocessedSample*> out;
    for (const auto& s : v) out.push_back(&s);
    return out;
}

}  // namespace

TEST_CASE("inner SGD update on a quadratic") {
    Quadratic q;
    MetaConfig cfg;
    cfg.inner_rate = 0.1;
    Scalar three{0, 3.0};
    const Scalar* b[] = {&three};
    const auto one = sgd_inner_update<Scalar>(q, scalar(0.0), b, cfg);
    CHECK(value(one) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(value(sgd_inner_update<Scalar>(q, one, b, cfg)) == doctest::Approx(1.08).epsilon(1e-15));
    CHECK(value(sgd_inner_update<Scalar>(q, scalar(3.0), b, cfg)) == 3.0);
}

TEST_CASE("first-order meta gradient on two quadratic tasks") {
    Quadratic q;
    MetaConfig cfg;
    cfg.inner_rate = 0.1;
    Scalar a1{0, 1.0}, a2{1, -1.0};
    for (int steps : {0, 1, 3}) {
        cfg.n_inner_steps = steps;
        std::vector<std::vector<const Scalar*>> ptr{{&a1}, {&a2}}, val{{&a1}, {&a2}};
        const double th0 = 0.5;
        const auto mg = first_order_meta_gradient<Scalar>(q, scalar(th0), ptr, val, cfg);
        // Closed form: each step maps theta -> a + (1 - 2 alpha)(theta - a).
        double expect = 0;
        for (double a : {1.0, -1.0}) expect += 2 * (a + std::pow(1 - 2 * cfg.inner_rate, steps) * (th0 - a) - a);
        CHECK(std::abs(value(mg.grad) - expect) <= 1e-10);
        if (steps == 1) CHECK(std::abs(value(mg.grad) - 1.6) <= 1e-10);
    }
}

TEST_CASE("meta training is deterministic and drives the quadratic toward the task mean") {
    Quadratic q;
    MetaConfig cfg;
    cfg.inner_rate = 0.1;
    cfg.outer_rate = 0.05;
    cfg.n_epochs = 200;
    cfg.batch_size = 2;
    cfg.n_inner_steps = 2;
    std::vector<Scalar> pool;
    for (int i = 0; i < 8; ++i) pool.push_back({i, i < 4 ? 1.0 : -1.0});
    TaskSet<Scalar> set;
    set.tasks.push_back({0, {&pool[0], &pool[1]}, {&pool[2], &pool[3]}});
    set.tasks.push_back({1, {&pool[4], &pool[5]}, {&pool[6], &pool[7]}});
    const auto a = meta_train<Scalar>(q, scalar(2.0), set, cfg);
    CHECK(a == meta_train<Scalar>(q, scalar(2.0), set, cfg));
    CHECK(std::abs(value(a)) < 0.05);

    set.tasks[1].val.push_back(&pool[0]);
    CHECK_THROWS_AS(meta_train<Scalar>(q, scalar(2.0), set, cfg), Error);
    CHECK_THROWS_AS(meta_train<Scalar>(q, scalar(2.0), TaskSet<Scalar>{}, cfg), Error);
}

TEST_CASE("one task with no inner steps reproduces pre-training exactly") {
    const auto arch = small_arch(2);
    nn::Network net(arch);
    NetworkObjective obj(net);
    const auto data = samples(arch, 21, 5);
    MetaConfig cfg;
    cfg.n_inner_steps = 0;
    cfg.n_epochs = 3;
    cfg.batch_size = 4;
    cfg.outer_rate = 1e-3;
    cfg.seed = 17;
    TaskSet<PreprocessedSample> set;
    set.tasks.push_back({0, {}, ptrs(data)});
    const auto init = nn::init_params(arch, 3);
    TrainingLog lm, lp;
    const auto m = meta_train<PreprocessedSample>(obj, init, set, cfg, &lm);
    const auto p = pretrain<PreprocessedSample>(obj, init, ptrs(data), cfg, &lp);
    CHECK(m == p);
    REQUIRE(lm.size() == lp.size());
    for (std::size_t i = 0; i < lm.size(); ++i) CHECK(lm[i].loss == lp[i].loss);
}

TEST_CASE("adaptation") {
    Quadratic q;
    MetaConfig cfg;
    cfg.inner_rate = 0.1;
    cfg.n_inner_steps = 0;
    CHECK(value(adapt<Scalar>(q, scalar(0.7), {}, cfg)) == 0.7);
    cfg.n_inner_steps = 1;
    Scalar s{0, 2.0};
    std::vector<const Scalar*> one{&s};
    CHECK(adapt<Scalar>(q, scalar(0.7), one, cfg) == sgd_inner_update<Scalar>(q, scalar(0.7), one, cfg));
    CHECK_THROWS_AS(adapt<Scalar>(q, scalar(0.7), {}, cfg), Error);

    cfg.n_inner_steps = 5;
    Scalar t{1, -0.5};
    std::vector<const Scalar*> two{&s, &t};
    const auto after = adapt<Scalar>(q, scalar(0.7), two, cfg);
    CHECK(q.loss(after, two, nullptr) <= q.loss(scalar(0.7), two, nullptr));
}

TEST_CASE("pre-training on a separable toy set") {
    auto arch = small_arch(0);
    arch.n_classes = 2;
    arch.n_fc = 1;
    nn::Network net(arch);
    NetworkObjective obj(net);
    const auto data = samples(arch, 40, 9);
    MetaConfig cfg;
    cfg.n_epochs = 60;
    cfg.batch_size = 40;
    cfg.outer_rate = 0.01;
    TrainingLog log;
    const auto init = nn::init_params(arch, 1);
    const auto p = pretrain<PreprocessedSample>(obj, init, ptrs(data), cfg, &log);
    for (std::size_t i = 1; i < log.size(); ++i) CHECK(log[i].loss <= log[i - 1].loss + 1e-12);
    CHECK(*evaluate(net, p, ptrs(data)).accuracy == 1.0);

    cfg.n_epochs = 0;
    CHECK(pretrain<PreprocessedSample>(obj, init, ptrs(data), cfg) == init);

    auto st = adam_init(init);
    auto same = init;
    adam_step(same, nn::zeros_like(init), st, 0.1, {});
    CHECK(same == init);
}

TEST_CASE("transfer-learning fine-tune") {
    const auto arch = small_arch(2);
    nn::Network net(arch);
    const auto data = samples(arch, 12, 4);
    MetaConfig cfg;
    cfg.inner_rate = 0.05;
    cfg.n_inner_steps = 5;
    const auto init = nn::init_params(arch, 2);
    const auto tuned = tl_finetune(net, init, ptrs(data), cfg);
    bool dense_moved = false;
    for (std::size_t b = 0; b < init.blocks.size(); ++b) {
        if (init.blocks[b].is_conv()) CHECK(tuned.blocks[b] == init.blocks[b]);
        else dense_moved = dense_moved || tuned.blocks[b] != init.blocks[b];
    }
    CHECK(dense_moved);

    const auto flat = small_arch(0);
    nn::Network fnet(flat);
    NetworkObjective fobj(fnet);
    const auto fdata = samples(flat, 12, 4);
    const auto finit = nn::init_params(flat, 2);
    const auto t = tl_finetune(fnet, finit, ptrs(fdata), cfg);
    const auto a = adapt<PreprocessedSample>(fobj, finit, ptrs(fdata), cfg);
    REQUIRE(t.blocks.size() == a.blocks.size());
    for (std::size_t b = 0; b < t.blocks.size(); ++b)
        for (std::size_t j = 0; j < t.blocks[b].values.size(); ++j)
            CHECK(t.blocks[b].values[j] == doctest::Approx(a.blocks[b].values[j]).epsilon(1e-12));

    // Operation count against N_gr N_adpt L N_d^2.
    auto wide = small_arch(1);
    wide.fc_width = 32;
    wide.n_filters = 8;
    nn::Network wnet(wide);
    const auto wdata = samples(wide, 20, 6);
    nn::OpCounter ops;
    tl_finetune(wnet, nn::init_params(wide, 3), ptrs(wdata), cfg, &ops);
    const double formula = 5.0 * 20 * 2 * 32 * 32;
    CHECK(double(ops.total()) <= 2 * formula);
    CHECK(double(ops.total()) >= formula / 2);
}

TEST_CASE("evaluation") {
    const auto arch = small_arch(1);
    nn::Network net(arch);
    const auto data = samples(arch, 9, 3);
    const auto p = nn::init_params(arch, 4);
    const auto r1 = evaluate(net, p, ptrs(data));
    const auto r2 = evaluate(net, p, ptrs(data));
    CHECK(r1.predicted == r2.predicted);
    CHECK(*r1.accuracy == *r2.accuracy);
    CHECK(r1.n_samples == 9);
    CHECK_THROWS_AS(evaluate(net, p, {}), Error);

    // Zero weights and a large bias on class 1 predict 1 everywhere.
    auto z = nn::zero_params(arch);
    z.blocks.back().values[1] = 5.0;
    std::vector<PreprocessedSample> ones;
    for (const auto& s : data)
        if (s.label.cls == 1) ones.push_back(s);
    CHECK(*evaluate(net, z, ptrs(ones)).accuracy == 1.0);
}

TEST_CASE("disjointness") {
    std::vector<IndexGroup> ok{{"ptr(0)", {0, 1, 2}}, {"test", {3, 4}}};
    CHECK_NOTHROW(check_disjoint(ok));
    std::vector<IndexGroup> bad{{"ptr(0)", {0, 1, 2}}, {"adpt", {5, 2}}};
    try {
        check_disjoint(bad);
        FAIL("overlap accepted");
    } catch (const Error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("ptr(0)") != std::string::npos);
        CHECK(msg.find("adpt") != std::string::npos);
    }
}
