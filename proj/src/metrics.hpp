#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"

namespace metacsi::metrics {

using Coords = std::vector<Point>;  // one entry per person

double accuracy(std::span<const int> preds, std::span<const int> truths);

double rmse(std::span<const Coords> preds, std::span<const Coords> truths, int n_people);

/// Sorted per-sample localization errors (mean distance over people).
struct ErrorCdf {
    std::vector<double> sorted;

    /// Smallest error whose empirical CDF reaches q (inverse CDF, lower value at ties).
    double quantile(double q) const;
};

ErrorCdf localization_error_cdf(std::span<const Coords> preds, std::span<const Coords> truths, int n_people);

struct Confusion {
    Matrix<std::uint64_t> counts;  // row = truth, column = prediction
    RealMatrix rates;              // row-normalized counts
    std::vector<bool> empty_rows;  // truth class never observed
};

Confusion confusion_matrix(std::span<const int> preds, std::span<const int> truths, int n_classes);

struct MetricsReport {
    std::optional<double> accuracy;
    std::optional<double> rmse_m;
    Confusion confusion;
    ErrorCdf error_cdf;
    std::vector<int> predicted;  // classification predictions, sample order
    std::size_t n_samples = 0;
    double runtime_s = 0.0;
};

enum class Scheme { meta, pre, tl, preproc };

std::optional<Scheme> parse_scheme(std::string_view name);
const char* scheme_name(Scheme s);

struct ComplexityInputs {
    double n_epoch = 20;
    double n_train = 1000;  // N_meta-train, N_pre-train or N_tl-train
    double n_gr = 5;
    double n_adpt = 20;
    double n_test = 500;
    double n_ker = 25;
    double q = 5;
    double n_f = 64;
    double l = 2;
    double n_d = 256;
    double n_pck = 1;
    double m = 9;
    double k = 52;
};

/// Per-sample network cost N_ker Q N_f^2 + L N_d^2.
double per_sample_cost(const ComplexityInputs& in);

/// Total-complexity expressions of the analytic cost table, evaluated literally.
double complexity_estimate(const ComplexityInputs& in, Scheme scheme);

}  // namespace metacsi::metrics
