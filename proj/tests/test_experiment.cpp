#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dataset_io.hpp"
#include "experiment.hpp"
#include "metrics.hpp"

using namespace metacsi;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

Config tiny_config() {
    return Config::parse(R"(
experiment.seed = 3
experiment.n_seeds = 1
experiment.n_adapt = 5, 10
sim.grid = uniform
sim.n_subcarriers = 8
sim.n_tx = 1
sim.n_rx = 2
split.ptr_per_scene = 4
split.val_per_scene = 4
split.adapt_pool_per_scene = 4
split.test_per_scene = 3
arch.pool_bands = 2
meta.n_epochs = 2
meta.batch_size = 4
pre.n_epochs = 2
)");
}

std::vector<sim::CsiPacket> random_packets(int n, std::size_t K, std::size_t M) {
    Rng rng(5);
    std::vector<sim::CsiPacket> out(n);
    for (int i = 0; i < n; ++i) {
        out[i].index = i;
        out[i].csi = ComplexMatrix(K, M);
        for (auto& v : out[i].csi.data()) v = {gaussian(rng), gaussian(rng)};
        out[i].label = sim::Label::count(i % 6);
    }
    return out;
}

}  // namespace

TEST_CASE("accuracy and rmse") {
    std::vector<int> p{0, 1, 2, 3}, t{0, 1, 0, 0};
    CHECK(metrics::accuracy(p, p) == 1.0);
    CHECK(metrics::accuracy(p, t) == 0.5);
    CHECK_THROWS_AS(metrics::accuracy(std::vector<int>{}, std::vector<int>{}), Error);
    CHECK_THROWS_AS(metrics::accuracy(p, std::vector<int>{0}), Error);

    using metrics::Coords;
    std::vector<Coords> truth{{{1, 1}}, {{2, 3}}}, off{{{1.3, 1.4}}, {{2.3, 3.4}}};
    CHECK(metrics::rmse(truth, truth, 1) == 0.0);
    CHECK(metrics::rmse(off, truth, 1) == doctest::Approx(0.5));
    std::vector<Coords> t2{{{0, 0}, {1, 1}}}, p2{{{0, 0}, {1.3, 1.4}}};
    CHECK(metrics::rmse(p2, t2, 2) == doctest::Approx(std::sqrt(0.125)));
}

TEST_CASE("error cdf") {
    using metrics::Coords;
    std::vector<Coords> truth, pred;
    for (int i = 1; i <= 10; ++i) {
        truth.push_back({{0, 0}});
        pred.push_back({{0.1 * i, 0}});
    }
    const auto cdf = metrics::localization_error_cdf(pred, truth, 1);
    CHECK(cdf.quantile(0.9) == doctest::Approx(0.9));
    std::vector<Coords> same(4, Coords{{0.25, 0}});
    CHECK(metrics::localization_error_cdf(same, std::vector<Coords>(4, Coords{{0, 0}}), 1).quantile(0.9) == 0.25);
}

TEST_CASE("confusion matrix") {
    const auto c = metrics::confusion_matrix(std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 1, 0, 1}, 2);
    for (double v : c.rates.data()) CHECK(v == 0.5);
    const auto id = metrics::confusion_matrix(std::vector<int>{0, 1, 2}, std::vector<int>{0, 1, 2}, 3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) CHECK(id.rates(i, j) == (i == j ? 1.0 : 0.0));
    const auto k = metrics::confusion_matrix(std::vector<int>{2, 2, 2}, std::vector<int>{0, 1, 0}, 3);
    CHECK(k.rates(0, 2) == 1.0);
    CHECK(k.rates(1, 2) == 1.0);
    CHECK(k.empty_rows[2]);
    CHECK_THROWS_AS(metrics::confusion_matrix(std::vector<int>{3}, std::vector<int>{0}, 3), Error);
}

TEST_CASE("complexity") {
    metrics::ComplexityInputs in;
    in.n_pck = 1;
    in.m = 9;
    in.k = 52;
    CHECK(metrics::complexity_estimate(in, metrics::Scheme::preproc) == 468.0);

    in.n_gr = 0;
    CHECK(metrics::complexity_estimate(in, metrics::Scheme::tl) == metrics::complexity_estimate(in, metrics::Scheme::pre));

    metrics::ComplexityInputs t;
    t.n_epoch = 20;
    t.n_ker = 25;
    t.q = 5;
    t.n_f = 64;
    t.l = 2;
    t.n_d = 256;
    CHECK(metrics::per_sample_cost(t) == 512000.0 + 131072.0);
    const double meta = metrics::complexity_estimate(t, metrics::Scheme::meta);
    CHECK(meta == (t.n_epoch * t.n_train + t.n_gr * t.n_adpt + t.n_test) * 643072.0);
    CHECK(metrics::parse_scheme("bogus") == std::nullopt);
}

TEST_CASE("dataset files round-trip") {
    const auto dir = fs::temp_directory_path() / "metacsi_io_test";
    fs::create_directories(dir);
    const auto raw = io::Dataset::from_packets(random_packets(100, 8, 3));
    io::write_dataset(dir / "raw.csid", raw);
    CHECK(io::read_dataset(dir / "raw.csid") == raw);
    io::write_dataset(dir / "raw.jsonl", raw);
    CHECK(io::read_dataset(dir / "raw.jsonl") == raw);

    const auto pre = io::Dataset::from_samples(prep::preprocess_all(raw.packets).samples);
    io::write_dataset(dir / "pre.csid", pre);
    CHECK(io::read_dataset(dir / "pre.csid") == pre);
    CHECK_THROWS_AS(io::read_dataset(dir / "pre.csid", io::PayloadKind::raw), Error);

    const auto size = fs::file_size(dir / "raw.csid");
    fs::resize_file(dir / "raw.csid", size - 3);
    try {
        io::read_dataset(dir / "raw.csid");
        FAIL("truncated file accepted");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::data);
        CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }
    {
        std::ofstream f(dir / "bad.csid", std::ios::binary);
        f << "XXXX0000000000000000";
    }
    CHECK_THROWS_AS(io::read_dataset(dir / "bad.csid"), Error);
    fs::remove_all(dir);
}

TEST_CASE("index sets and splits") {
    CHECK(exp::IndexSet{10, 5}.materialize() == std::vector<std::int64_t>{10, 11, 12, 13, 14});
    CHECK(exp::IndexSet{10, 0}.materialize().empty());

    std::vector<prep::PreprocessedSample> ds(150);
    for (std::size_t i = 0; i < ds.size(); ++i) ds[i].index = std::int64_t(i);
    const exp::Layout ok{{"ptr(0)", {0, 50}}, {"val(0)", {50, 50}}, {"test", {100, 50}}};
    const auto sets = exp::make_splits(ds, ok);
    REQUIRE(sets.size() == 3);
    CHECK(sets[1].samples.size() == 50);
    CHECK(sets[1].samples.front()->index == 50);

    const exp::Layout bad{{"train", {0, 100}}, {"test", {50, 100}}};
    try {
        exp::make_splits(ds, bad);
        FAIL("overlap accepted");
    } catch (const Error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("train") != std::string::npos);
        CHECK(msg.find("test") != std::string::npos);
    }
    const exp::Layout missing{{"test", {140, 20}}};
    CHECK_THROWS_AS(exp::make_splits(ds, missing), Error);
}

TEST_CASE("config parsing and hashing") {
    auto c = Config::parse("# comment\na.b = 1\nc.d = x, y\na.b = 2\n");
    CHECK(c.get_int("a.b", 0) == 2);
    CHECK(c.get_list("c.d", {}) == std::vector<std::string>{"x", "y"});
    CHECK(c.hash().size() == 16);
    CHECK(c.hash() == Config::parse("c.d = x, y\na.b = 2").hash());
    CHECK_THROWS_AS(Config::parse("no equals sign"), Error);

    auto bad = tiny_config();
    bad.set("experiment.task", "dance");
    CHECK_THROWS_AS(exp::ExperimentSpec::from_config(bad), Error);
    auto unknown = tiny_config();
    unknown.set("experiment.methods", "pre, magic");
    CHECK_THROWS_AS(exp::ExperimentSpec::from_config(unknown), Error);
    auto seedless = tiny_config();
    seedless.erase("experiment.seed");
    CHECK_THROWS_AS(exp::ExperimentSpec::from_config(seedless), Error);
}

TEST_CASE("scenes and adaptation subsets") {
    const auto spec = exp::ExperimentSpec::from_config(tiny_config());
    const auto scenes = exp::build_scenes(spec, 3);
    CHECK(scenes.size() == 36);
    for (std::size_t s = 0; s < scenes.size(); ++s) CHECK(int(scenes[s].people.size()) == int(s % 6));

    const auto packets = exp::generate(spec, 3);
    CHECK(packets.size() == 36 * spec.packets_per_scene());
    const auto prepared = exp::prepare(spec, packets, true);
    const auto splits = exp::split(spec, prepared.samples);
    CHECK(splits.tasks.tasks.size() == 5);
    CHECK(splits.test.size() == 18);
    // Round-robin: the first C picks cover every class once.
    const auto sub = exp::adaptation_subset(spec, splits, 6);
    std::vector<int> seen(6, 0);
    for (const auto* s : sub) seen[s->label.cls]++;
    for (int v : seen) CHECK(v == 1);
}

TEST_CASE("experiment reports") {
    const auto spec = exp::ExperimentSpec::from_config(tiny_config());
    const auto a = fs::temp_directory_path() / "metacsi_exp_a";
    const auto b = fs::temp_directory_path() / "metacsi_exp_b";
    exp::write_reports(spec, exp::run_experiment(spec), a);
    exp::write_reports(spec, exp::run_experiment(spec), b);
    const std::string ra = slurp(a / "results.csv");
    CHECK(ra == slurp(b / "results.csv"));
    CHECK(slurp(a / "results_by_seed.csv") == slurp(b / "results_by_seed.csv"));
    CHECK(slurp(a / "manifest.txt") == slurp(b / "manifest.txt"));
    // header + 3 methods x 2 preprocessing modes x 2 sizes
    CHECK(std::count(ra.begin(), ra.end(), '\n') == 13);

    auto one = tiny_config();
    one.set("experiment.preprocessing", "on");
    one.set("experiment.n_adapt", "5, 10, 20");
    const auto spec1 = exp::ExperimentSpec::from_config(one);
    exp::write_reports(spec1, exp::run_experiment(spec1), a);
    const std::string r1 = slurp(a / "results.csv");
    CHECK(std::count(r1.begin(), r1.end(), '\n') == 10);
    fs::remove_all(a);
    fs::remove_all(b);
}
