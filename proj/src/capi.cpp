#include "metacsi/metacsi.h"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <new>
#include <string>

#include "config.hpp"
#include "dataset_io.hpp"
#include "experiment.hpp"
#include "metrics.hpp"
#include "nn.hpp"

using namespace metacsi;

struct mcsi_config {
    Config cfg;
};

struct mcsi_dataset {
    io::Dataset ds;
};

struct mcsi_model {
    nn::ArchConfig arch;
    nn::ModelParams params;
};

struct mcsi_report {
    nn::ArchConfig arch;
    metrics::MetricsReport report;
};

namespace {

thread_local std::string g_last_error;

mcsi_status status_of(ErrorKind k) {
    switch (k) {
        case ErrorKind::invalid_argument: return MCSI_ERR_ARGUMENT;
        case ErrorKind::config: return MCSI_ERR_CONFIG;
        case ErrorKind::data: return MCSI_ERR_DATA;
        case ErrorKind::numeric: return MCSI_ERR_NUMERIC;
    }
    return MCSI_ERR_INTERNAL;
}

template <typename F>
mcsi_status guarded(F&& f) {
    try {
        g_last_error.clear();
        f();
        return MCSI_OK;
    } catch (const Error& e) {
        g_last_error = e.what();
        return status_of(e.kind());
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return MCSI_ERR_INTERNAL;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return MCSI_ERR_INTERNAL;
    }
}

void need(const void* p, const char* what) {
    if (!p) fail(ErrorKind::invalid_argument, std::string(what) + " is NULL");
}

void copy_out(const std::string& s, char* buf, std::size_t size, std::size_t* needed) {
    if (needed) *needed = s.size() + 1;
    if (buf && size > 0) {
        const std::size_t n = std::min(size - 1, s.size());
        std::memcpy(buf, s.data(), n);
        buf[n] = '\0';
    }
}

// Experiment spec for single-step commands, where the sweep seeds do not matter.
exp::ExperimentSpec spec_for(const mcsi_config* cfg, std::uint64_t seed) {
    Config c = cfg ? cfg->cfg : Config{};
    if (!c.has("experiment.seed") && !c.has("experiment.seeds")) c.set("experiment.seed", std::to_string(seed));
    return exp::ExperimentSpec::from_config(c);
}

const io::Dataset& model_input(const mcsi_dataset* ds) {
    need(ds, "dataset");
    if (ds->ds.kind != io::PayloadKind::preprocessed) {
        fail(ErrorKind::data, "model input needs a preprocessed (or raw-feature) dataset, got raw CSI");
    }
    return ds->ds;
}

void check_arch(const nn::ArchConfig& want, const nn::ArchConfig& have) {
    if (want.K != have.K || want.M != have.M || want.head != have.head || want.n_outputs() != have.n_outputs()) {
        fail(ErrorKind::data, "model architecture does not match the configured experiment");
    }
}

}  // namespace

extern "C" {

const char* mcsi_last_error(void) { return g_last_error.c_str(); }

const char* mcsi_version(void) { return "1.0.0"; }

mcsi_status mcsi_config_new(mcsi_config** out) {
    return guarded([&] {
        need(out, "out");
        *out = new mcsi_config{};
    });
}

mcsi_status mcsi_config_load(const char* path, mcsi_config** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = new mcsi_config{Config::load(path)};
    });
}

mcsi_status mcsi_config_set(mcsi_config* cfg, const char* key, const char* value) {
    return guarded([&] {
        need(cfg, "config");
        need(key, "key");
        need(value, "value");
        cfg->cfg.set(key, value);
    });
}

mcsi_status mcsi_config_get(const mcsi_config* cfg, const char* key, char* buf, size_t size, size_t* needed) {
    return guarded([&] {
        need(cfg, "config");
        need(key, "key");
        const auto v = cfg->cfg.raw(key);
        if (!v) fail(ErrorKind::config, std::string("config key '") + key + "' is not set");
        copy_out(*v, buf, size, needed);
    });
}

mcsi_status mcsi_config_unset(mcsi_config* cfg, const char* key) {
    return guarded([&] {
        need(cfg, "config");
        need(key, "key");
        cfg->cfg.erase(key);
    });
}

mcsi_status mcsi_config_effective(const mcsi_config* cfg, char* buf, size_t size, size_t* needed) {
    return guarded([&] {
        need(cfg, "config");
        const exp::ExperimentSpec spec = exp::ExperimentSpec::from_config(cfg->cfg);
        copy_out(spec.config.canonical_text(), buf, size, needed);
    });
}

mcsi_status mcsi_config_defaults(char* buf, size_t size, size_t* needed) {
    return guarded([&] { copy_out(exp::default_config_text(), buf, size, needed); });
}

void mcsi_config_free(mcsi_config* cfg) { delete cfg; }

mcsi_status mcsi_generate(const mcsi_config* cfg, uint64_t seed, mcsi_dataset** out) {
    return guarded([&] {
        need(out, "out");
        const exp::ExperimentSpec spec = spec_for(cfg, seed);
        *out = new mcsi_dataset{io::Dataset::from_packets(exp::generate(spec, seed))};
    });
}

mcsi_status mcsi_dataset_read(const char* path, mcsi_dataset** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = new mcsi_dataset{io::read_dataset(path)};
    });
}

mcsi_status mcsi_dataset_write(const mcsi_dataset* ds, const char* path) {
    return guarded([&] {
        need(ds, "dataset");
        need(path, "path");
        io::write_dataset(path, ds->ds);
    });
}

mcsi_status mcsi_dataset_info_get(const mcsi_dataset* ds, mcsi_dataset_info* out) {
    return guarded([&] {
        need(ds, "dataset");
        need(out, "out");
        out->n_records = ds->ds.size();
        out->n_subcarriers = ds->ds.K;
        out->n_links = ds->ds.M;
        out->n_people = ds->ds.n_people;
        out->preprocessed = ds->ds.kind == io::PayloadKind::preprocessed ? 1 : 0;
        out->label_kind = static_cast<int>(ds->ds.label_kind);
    });
}

mcsi_status mcsi_dataset_raw(const mcsi_dataset* ds, size_t i, int64_t* index, double* re_im, size_t len) {
    return guarded([&] {
        need(ds, "dataset");
        if (ds->ds.kind != io::PayloadKind::raw) fail(ErrorKind::data, "dataset holds no raw CSI");
        if (i >= ds->ds.packets.size()) fail(ErrorKind::invalid_argument, "record index out of range");
        const auto& p = ds->ds.packets[i];
        if (index) *index = p.index;
        if (re_im) {
            if (len < 2 * p.csi.data().size()) fail(ErrorKind::invalid_argument, "output buffer too small");
            for (std::size_t j = 0; j < p.csi.data().size(); ++j) {
                re_im[2 * j] = p.csi.data()[j].real();
                re_im[2 * j + 1] = p.csi.data()[j].imag();
            }
        }
    });
}

mcsi_status mcsi_preprocess(const mcsi_dataset* raw, const mcsi_config* cfg, int reference_subcarrier,
                            mcsi_dataset** out, size_t* n_rejected) {
    return guarded([&] {
        need(raw, "dataset");
        need(out, "out");
        if (raw->ds.kind != io::PayloadKind::raw) fail(ErrorKind::data, "preprocessing needs a raw CSI dataset");
        prep::PreprocessConfig pc;
        if (cfg) pc = spec_for(cfg, 0).preprocess;
        if (reference_subcarrier < 0) fail(ErrorKind::invalid_argument, "reference subcarrier must be >= 1");
        if (reference_subcarrier > 0) pc.reference_subcarrier = reference_subcarrier;
        prep::BatchResult r = prep::preprocess_all(raw->ds.packets, pc);
        if (n_rejected) *n_rejected = r.rejected.size();
        for (const auto& rej : r.rejected) std::cerr << "rejected packet " << rej.index << ": " << rej.reason << "\n";
        auto ds = io::Dataset::from_samples(std::move(r.samples));
        ds.K = raw->ds.K;
        ds.M = raw->ds.M;
        ds.label_kind = raw->ds.label_kind;
        ds.n_people = raw->ds.n_people;
        *out = new mcsi_dataset{std::move(ds)};
    });
}

mcsi_status mcsi_raw_features(const mcsi_dataset* raw, mcsi_dataset** out) {
    return guarded([&] {
        need(raw, "dataset");
        need(out, "out");
        if (raw->ds.kind != io::PayloadKind::raw) fail(ErrorKind::data, "raw features need a raw CSI dataset");
        std::vector<prep::PreprocessedSample> samples;
        samples.reserve(raw->ds.packets.size());
        for (const auto& p : raw->ds.packets) samples.push_back(prep::raw_sample(p));
        auto ds = io::Dataset::from_samples(std::move(samples));
        ds.K = raw->ds.K;
        ds.M = raw->ds.M;
        ds.label_kind = raw->ds.label_kind;
        ds.n_people = raw->ds.n_people;
        *out = new mcsi_dataset{std::move(ds)};
    });
}

void mcsi_dataset_free(mcsi_dataset* ds) { delete ds; }

mcsi_status mcsi_train(const mcsi_config* cfg, const mcsi_dataset* ds, const char* method, uint64_t seed,
                       const char* log_csv, mcsi_model** out) {
    return guarded([&] {
        need(method, "method");
        need(out, "out");
        const exp::ExperimentSpec spec = spec_for(cfg, seed);
        const io::Dataset& data = model_input(ds);
        const exp::Method m = exp::parse_method(method);
        const nn::Network net(exp::resolved_arch(spec));
        const exp::Splits splits = exp::split(spec, data.samples);
        meta::TrainingLog log;
        nn::ModelParams params = exp::train_model(spec, net, splits, m, seed, &log);
        if (log_csv) {
            std::ofstream f(log_csv, std::ios::binary);
            if (!f) fail(ErrorKind::data, std::string("cannot write ") + log_csv);
            f << "epoch,task,loss\n";
            char buf[64];
            for (const auto& r : log) {
                std::snprintf(buf, sizeof buf, "%.9g", r.loss);
                f << r.epoch << "," << r.task << "," << buf << "\n";
            }
        }
        *out = new mcsi_model{net.arch(), std::move(params)};
    });
}

mcsi_status mcsi_adapt(const mcsi_config* cfg, const mcsi_model* model, const mcsi_dataset* ds, const char* method,
                       int n_adapt, mcsi_model** out) {
    return guarded([&] {
        need(model, "model");
        need(method, "method");
        need(out, "out");
        const exp::ExperimentSpec spec = spec_for(cfg, 0);
        const io::Dataset& data = model_input(ds);
        const nn::Network net(model->arch);
        check_arch(exp::resolved_arch(spec), model->arch);
        const exp::Splits splits = exp::split(spec, data.samples);
        const exp::SamplePtrs set = exp::adaptation_subset(spec, splits, n_adapt);
        nn::ModelParams p = exp::adapt_model(spec, net, model->params, set, exp::parse_method(method));
        *out = new mcsi_model{model->arch, std::move(p)};
    });
}

mcsi_status mcsi_model_save(const mcsi_model* model, const char* path) {
    return guarded([&] {
        need(model, "model");
        need(path, "path");
        nn::save_checkpoint(path, model->arch, model->params);
    });
}

mcsi_status mcsi_model_load(const char* path, mcsi_model** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        auto [arch, params] = nn::load_checkpoint(path);
        *out = new mcsi_model{arch, std::move(params)};
    });
}

mcsi_status mcsi_model_param_count(const mcsi_model* model, size_t* out) {
    return guarded([&] {
        need(model, "model");
        need(out, "out");
        *out = model->params.total_size();
    });
}

void mcsi_model_free(mcsi_model* model) { delete model; }

mcsi_status mcsi_evaluate(const mcsi_config* cfg, const mcsi_model* model, const mcsi_dataset* ds,
                          mcsi_report** out) {
    return guarded([&] {
        need(model, "model");
        need(out, "out");
        const exp::ExperimentSpec spec = spec_for(cfg, 0);
        const io::Dataset& data = model_input(ds);
        check_arch(exp::resolved_arch(spec), model->arch);
        const nn::Network net(model->arch);
        const exp::Splits splits = exp::split(spec, data.samples);
        *out = new mcsi_report{model->arch, meta::evaluate(net, model->params, splits.test)};
    });
}

mcsi_status mcsi_report_metrics(const mcsi_report* report, double* accuracy, double* rmse_m, double* error_q90_m,
                                size_t* n_samples) {
    return guarded([&] {
        need(report, "report");
        const double nan = std::numeric_limits<double>::quiet_NaN();
        const auto& r = report->report;
        if (accuracy) *accuracy = r.accuracy.value_or(nan);
        if (rmse_m) *rmse_m = r.rmse_m.value_or(nan);
        if (error_q90_m) *error_q90_m = r.error_cdf.sorted.empty() ? nan : r.error_cdf.quantile(0.9);
        if (n_samples) *n_samples = r.n_samples;
    });
}

mcsi_status mcsi_report_write(const mcsi_report* report, const char* dir) {
    return guarded([&] {
        need(report, "report");
        need(dir, "dir");
        const std::filesystem::path d(dir);
        std::filesystem::create_directories(d);
        const auto& r = report->report;
        auto open = [](const std::filesystem::path& p) {
            std::ofstream f(p, std::ios::binary);
            if (!f) fail(ErrorKind::data, "cannot write " + p.string());
            return f;
        };
        char buf[64];
        auto fmt = [&](double v) {
            std::snprintf(buf, sizeof buf, "%.6f", v);
            return std::string(buf);
        };
        auto m = open(d / "metrics.csv");
        m << "metric,value\n";
        if (r.accuracy) m << "accuracy," << fmt(*r.accuracy) << "\n";
        if (r.rmse_m) m << "rmse_m," << fmt(*r.rmse_m) << "\n";
        if (!r.error_cdf.sorted.empty()) m << "error_q90_m," << fmt(r.error_cdf.quantile(0.9)) << "\n";
        m << "n_samples," << r.n_samples << "\n";
        if (r.accuracy) {
            auto c = open(d / "confusion.csv");
            const auto& rates = r.confusion.rates;
            c << "truth";
            for (std::size_t j = 0; j < rates.cols(); ++j) c << ",pred_" << j;
            c << "\n";
            for (std::size_t i = 0; i < rates.rows(); ++i) {
                c << i;
                for (std::size_t j = 0; j < rates.cols(); ++j) c << "," << fmt(rates(i, j));
                c << "\n";
            }
        } else {
            auto c = open(d / "cdf.csv");
            c << "rank,error_m,cdf\n";
            const auto& s = r.error_cdf.sorted;
            for (std::size_t i = 0; i < s.size(); ++i) {
                c << i + 1 << "," << fmt(s[i]) << "," << fmt(static_cast<double>(i + 1) / static_cast<double>(s.size()))
                  << "\n";
            }
        }
    });
}

void mcsi_report_free(mcsi_report* report) { delete report; }

mcsi_status mcsi_run_experiment(const mcsi_config* cfg, const char* out_dir, int verbose) {
    return guarded([&] {
        need(cfg, "config");
        need(out_dir, "out_dir");
        const exp::ExperimentSpec spec = exp::ExperimentSpec::from_config(cfg->cfg);
        const exp::ExperimentResults res = exp::run_experiment(spec, verbose ? &std::cerr : nullptr);
        exp::write_reports(spec, res, out_dir);
    });
}

mcsi_status mcsi_complexity(const char* scheme, const mcsi_complexity_inputs* in, double* out) {
    return guarded([&] {
        need(scheme, "scheme");
        need(in, "inputs");
        need(out, "out");
        const auto s = metrics::parse_scheme(scheme);
        if (!s) fail(ErrorKind::invalid_argument, std::string("unknown scheme '") + scheme + "'");
        metrics::ComplexityInputs c;
        c.n_epoch = in->n_epoch;
        c.n_train = in->n_train;
        c.n_gr = in->n_gr;
        c.n_adpt = in->n_adpt;
        c.n_test = in->n_test;
        c.n_ker = in->n_ker;
        c.q = in->q;
        c.n_f = in->n_f;
        c.l = in->l;
        c.n_d = in->n_d;
        c.n_pck = in->n_pck;
        c.m = in->m;
        c.k = in->k;
        *out = metrics::complexity_estimate(c, *s);
    });
}

mcsi_status mcsi_complexity_defaults(mcsi_complexity_inputs* out) {
    return guarded([&] {
        need(out, "out");
        const metrics::ComplexityInputs c;
        *out = {c.n_epoch, c.n_train, c.n_gr, c.n_adpt, c.n_test, c.n_ker, c.q, c.n_f, c.l, c.n_d, c.n_pck, c.m, c.k};
    });
}

}  // extern "C"
