// Command-line front end over the metacsi C API.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "metacsi/metacsi.h"

namespace {

struct CliError {
    mcsi_status status;
};

void check(mcsi_status s) {
    if (s != MCSI_OK) throw CliError{s};
}

int exit_code(mcsi_status s) {
    switch (s) {
        case MCSI_ERR_CONFIG: return 2;
        case MCSI_ERR_DATA: return 3;
        case MCSI_ERR_NUMERIC: return 4;
        default: return 1;
    }
}

template <typename T, void (*Free)(T*)>
struct Deleter {
    void operator()(T* p) const { Free(p); }
};
using ConfigPtr = std::unique_ptr<mcsi_config, Deleter<mcsi_config, mcsi_config_free>>;
using DatasetPtr = std::unique_ptr<mcsi_dataset, Deleter<mcsi_dataset, mcsi_dataset_free>>;
using ModelPtr = std::unique_ptr<mcsi_model, Deleter<mcsi_model, mcsi_model_free>>;
using ReportPtr = std::unique_ptr<mcsi_report, Deleter<mcsi_report, mcsi_report_free>>;

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string config_path;
    std::string out_dir = ".";
    std::vector<std::string> overrides;
};

ConfigPtr load_config(const Globals& g) {
    mcsi_config* raw = nullptr;
    if (g.config_path.empty()) {
        check(mcsi_config_new(&raw));
    } else {
        check(mcsi_config_load(g.config_path.c_str(), &raw));
    }
    ConfigPtr cfg(raw);
    for (const std::string& kv : g.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            std::cerr << "error: --set expects key=value, got '" << kv << "'\n";
            throw CliError{MCSI_ERR_CONFIG};
        }
        check(mcsi_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
    }
    if (g.seed) {
        check(mcsi_config_set(cfg.get(), "experiment.seed", std::to_string(*g.seed).c_str()));
        check(mcsi_config_unset(cfg.get(), "experiment.seeds"));
    }
    return cfg;
}

// --seed, else experiment.seed from the config, else 0.
std::uint64_t step_seed(const Globals& g, const mcsi_config* cfg) {
    if (g.seed) return *g.seed;
    char buf[64];
    if (mcsi_config_get(cfg, "experiment.seed", buf, sizeof buf, nullptr) == MCSI_OK) {
        return std::stoull(buf);
    }
    return 0;
}

std::string in_out_dir(const Globals& g, const std::string& path, const char* fallback) {
    if (!path.empty()) return path;
    std::filesystem::create_directories(g.out_dir);
    return (std::filesystem::path(g.out_dir) / fallback).string();
}

DatasetPtr read_dataset(const std::string& path) {
    mcsi_dataset* ds = nullptr;
    check(mcsi_dataset_read(path.c_str(), &ds));
    return DatasetPtr(ds);
}

ModelPtr read_model(const std::string& path) {
    mcsi_model* m = nullptr;
    check(mcsi_model_load(path.c_str(), &m));
    return ModelPtr(m);
}

void print_metrics(const mcsi_report* report) {
    double acc = 0, rmse = 0, q90 = 0;
    size_t n = 0;
    check(mcsi_report_metrics(report, &acc, &rmse, &q90, &n));
    if (!std::isnan(acc)) std::printf("accuracy %.6f over %zu samples\n", acc, n);
    if (!std::isnan(rmse)) std::printf("rmse %.6f m, 90%% error %.6f m over %zu samples\n", rmse, q90, n);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"WiFi CSI people counting and localization: simulation, preprocessing, meta-learning"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "Random seed (overrides experiment.seed)");
    app.add_option("--config", g.config_path, "Configuration file (key = value)");
    app.add_option("--out-dir", g.out_dir, "Directory for outputs")->capture_default_str();
    app.add_option("--set", g.overrides, "Override a config key, key=value (repeatable)")
        ->allow_extra_args(false);

    std::string input, output, model_path, method = "meta", log_path, scheme;
    int reference = 0, n_adapt = 20;
    bool raw_features = false, verbose = false, defaults = false;

    auto* gen = app.add_subcommand("generate", "Simulate a labeled raw CSI dataset");
    gen->add_option("-o,--output", output, "Dataset path (.jsonl for text; default <out-dir>/raw.csid)");

    auto* pre = app.add_subcommand("preprocess", "Remove offsets and normalize a raw dataset");
    pre->add_option("-i,--input", input, "Raw dataset")->required();
    pre->add_option("-o,--output", output, "Output path (default <out-dir>/preprocessed.csid)");
    pre->add_option("--reference-subcarrier", reference, "One-based reference subcarrier k0 (default from config)")
        ->check(CLI::PositiveNumber);
    pre->add_flag("--off", raw_features, "Skip offset removal; emit raw |h|, Re h, Im h model inputs");

    auto* train = app.add_subcommand("train", "Pre-train or meta-train on the configured training tasks");
    train->add_option("-i,--input", input, "Model-input dataset")->required();
    train->add_option("-m,--method", method, "pre | tl | meta")->capture_default_str();
    train->add_option("-o,--output", output, "Checkpoint path (default <out-dir>/<method>.msnn)");
    train->add_option("--log", log_path, "Training curve CSV (epoch, task, loss)");

    auto* adapt = app.add_subcommand("adapt", "Adapt a trained model on held-out adaptation samples");
    adapt->add_option("-i,--input", input, "Model-input dataset")->required();
    adapt->add_option("--model", model_path, "Trained checkpoint")->required();
    adapt->add_option("-m,--method", method, "pre | tl | meta")->capture_default_str();
    adapt->add_option("-n,--n-adapt", n_adapt, "Adaptation set size")->capture_default_str();
    adapt->add_option("-o,--output", output, "Checkpoint path (default <out-dir>/adapted.msnn)");

    auto* eval = app.add_subcommand("evaluate", "Evaluate a checkpoint on the held-out test set");
    eval->add_option("-i,--input", input, "Model-input dataset")->required();
    eval->add_option("--model", model_path, "Checkpoint")->required();

    auto* report = app.add_subcommand("report", "Run the full method x preprocessing x N_adpt sweep");
    report->add_flag("-v,--verbose", verbose, "Progress on stderr");
    report->add_flag("--print-config", defaults, "Print the effective configuration and exit");

    mcsi_complexity_inputs ci{};
    mcsi_complexity_defaults(&ci);
    auto* cx = app.add_subcommand("complexity", "Analytic operation counts of the training schemes");
    cx->add_option("--scheme", scheme, "meta | pre | tl | preproc (default: all)");
    cx->add_option("--n-epoch", ci.n_epoch)->capture_default_str();
    cx->add_option("--n-train", ci.n_train)->capture_default_str();
    cx->add_option("--n-gr", ci.n_gr)->capture_default_str();
    cx->add_option("--n-adpt", ci.n_adpt)->capture_default_str();
    cx->add_option("--n-test", ci.n_test)->capture_default_str();
    cx->add_option("--n-ker", ci.n_ker)->capture_default_str();
    cx->add_option("--q", ci.q)->capture_default_str();
    cx->add_option("--n-f", ci.n_f)->capture_default_str();
    cx->add_option("--l", ci.l)->capture_default_str();
    cx->add_option("--n-d", ci.n_d)->capture_default_str();
    cx->add_option("--n-pck", ci.n_pck)->capture_default_str();
    cx->add_option("--m", ci.m)->capture_default_str();
    cx->add_option("--k", ci.k)->capture_default_str();

    for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*cx) {
            const char* all[] = {"meta", "pre", "tl", "preproc"};
            for (const char* s : all) {
                if (!scheme.empty() && scheme != s) continue;
                double v = 0;
                check(mcsi_complexity(s, &ci, &v));
                std::printf("%-8s %.6g\n", s, v);
            }
            if (!scheme.empty() && scheme != "meta" && scheme != "pre" && scheme != "tl" && scheme != "preproc") {
                double v = 0;
                check(mcsi_complexity(scheme.c_str(), &ci, &v));
            }
            return 0;
        }

        ConfigPtr cfg = load_config(g);

        if (*gen) {
            const std::uint64_t seed = step_seed(g, cfg.get());
            mcsi_dataset* ds = nullptr;
            check(mcsi_generate(cfg.get(), seed, &ds));
            DatasetPtr hold(ds);
            const std::string path = in_out_dir(g, output, "raw.csid");
            check(mcsi_dataset_write(ds, path.c_str()));
            mcsi_dataset_info info{};
            check(mcsi_dataset_info_get(ds, &info));
            std::printf("wrote %zu packets (K=%zu, M=%zu) to %s\n", info.n_records, info.n_subcarriers, info.n_links,
                        path.c_str());
        } else if (*pre) {
            DatasetPtr raw = read_dataset(input);
            mcsi_dataset* out = nullptr;
            size_t rejected = 0;
            if (raw_features) {
                check(mcsi_raw_features(raw.get(), &out));
            } else {
                check(mcsi_preprocess(raw.get(), cfg.get(), reference, &out, &rejected));
            }
            DatasetPtr hold(out);
            const std::string path = in_out_dir(g, output, "preprocessed.csid");
            check(mcsi_dataset_write(out, path.c_str()));
            mcsi_dataset_info info{};
            check(mcsi_dataset_info_get(out, &info));
            std::printf("wrote %zu samples to %s (%zu rejected)\n", info.n_records, path.c_str(), rejected);
        } else if (*train) {
            DatasetPtr ds = read_dataset(input);
            const std::uint64_t seed = step_seed(g, cfg.get());
            mcsi_model* m = nullptr;
            check(mcsi_train(cfg.get(), ds.get(), method.c_str(), seed, log_path.empty() ? nullptr : log_path.c_str(),
                             &m));
            ModelPtr hold(m);
            const std::string path = in_out_dir(g, output, (method + ".msnn").c_str());
            check(mcsi_model_save(m, path.c_str()));
            std::printf("saved %s model to %s\n", method.c_str(), path.c_str());
        } else if (*adapt) {
            DatasetPtr ds = read_dataset(input);
            ModelPtr model = read_model(model_path);
            mcsi_model* m = nullptr;
            check(mcsi_adapt(cfg.get(), model.get(), ds.get(), method.c_str(), n_adapt, &m));
            ModelPtr hold(m);
            const std::string path = in_out_dir(g, output, "adapted.msnn");
            check(mcsi_model_save(m, path.c_str()));
            std::printf("saved adapted model to %s\n", path.c_str());
        } else if (*eval) {
            DatasetPtr ds = read_dataset(input);
            ModelPtr model = read_model(model_path);
            mcsi_report* r = nullptr;
            check(mcsi_evaluate(cfg.get(), model.get(), ds.get(), &r));
            ReportPtr hold(r);
            std::filesystem::create_directories(g.out_dir);
            check(mcsi_report_write(r, g.out_dir.c_str()));
            print_metrics(r);
        } else if (*report) {
            if (defaults) {
                size_t needed = 0;
                check(mcsi_config_effective(cfg.get(), nullptr, 0, &needed));
                std::string text(needed, '\0');
                check(mcsi_config_effective(cfg.get(), text.data(), text.size(), nullptr));
                std::fputs(text.c_str(), stdout);
                return 0;
            }
            check(mcsi_run_experiment(cfg.get(), g.out_dir.c_str(), verbose ? 1 : 0));
            std::printf("reports written to %s\n", g.out_dir.c_str());
        }
    } catch (const CliError& e) {
        std::cerr << "error: " << mcsi_last_error() << "\n";
        return exit_code(e.status);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
