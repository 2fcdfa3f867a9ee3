#include "metrics.hpp"

#include <algorithm>
#include <cmath>

namespace metacsi::metrics {

namespace {

void check_coords(std::span<const Coords> preds, std::span<const Coords> truths, int n_people) {
    if (preds.size() != truths.size()) fail(ErrorKind::invalid_argument, "prediction/truth count mismatch");
    for (std::size_t n = 0; n < preds.size(); ++n) {
        if (static_cast<int>(preds[n].size()) != n_people || static_cast<int>(truths[n].size()) != n_people) {
            fail(ErrorKind::invalid_argument, "coordinate list does not hold N_L people");
        }
    }
}

double dist(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

double accuracy(std::span<const int> preds, std::span<const int> truths) {
    if (preds.size() != truths.size()) fail(ErrorKind::invalid_argument, "prediction/truth length mismatch");
    if (preds.empty()) fail(ErrorKind::invalid_argument, "accuracy of an empty test set");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == truths[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double rmse(std::span<const Coords> preds, std::span<const Coords> truths, int n_people) {
    check_coords(preds, truths, n_people);
    if (preds.empty()) fail(ErrorKind::invalid_argument, "RMSE of an empty test set");
    double sum = 0.0;
    for (std::size_t n = 0; n < preds.size(); ++n) {
        for (int l = 0; l < n_people; ++l) {
            const double dx = preds[n][l].x - truths[n][l].x;
            const double dy = preds[n][l].y - truths[n][l].y;
            sum += dx * dx + dy * dy;
        }
    }
    return std::sqrt(sum / (static_cast<double>(preds.size()) * n_people));
}

double ErrorCdf::quantile(double q) const {
    if (sorted.empty()) fail(ErrorKind::invalid_argument, "quantile of an empty CDF");
    if (!(q > 0.0 && q <= 1.0)) fail(ErrorKind::invalid_argument, "quantile level must be in (0, 1]");
    const double n = static_cast<double>(sorted.size());
    // smallest i with (i + 1) / n >= q; the epsilon absorbs rounding in q * n
    auto rank = static_cast<std::size_t>(std::max(1.0, std::ceil(q * n - 1e-9)));
    return sorted[std::min(rank, sorted.size()) - 1];
}

ErrorCdf localization_error_cdf(std::span<const Coords> preds, std::span<const Coords> truths, int n_people) {
    check_coords(preds, truths, n_people);
    if (preds.empty()) fail(ErrorKind::invalid_argument, "error CDF of an empty test set");
    ErrorCdf cdf;
    cdf.sorted.reserve(preds.size());
    for (std::size_t n = 0; n < preds.size(); ++n) {
        double e = 0.0;
        for (int l = 0; l < n_people; ++l) e += dist(preds[n][l], truths[n][l]);
        cdf.sorted.push_back(e / n_people);
    }
    std::sort(cdf.sorted.begin(), cdf.sorted.end());
    return cdf;
}

Confusion confusion_matrix(std::span<const int> preds, std::span<const int> truths, int n_classes) {
    if (preds.size() != truths.size()) fail(ErrorKind::invalid_argument, "prediction/truth length mismatch");
    if (n_classes < 1) fail(ErrorKind::invalid_argument, "confusion matrix needs C >= 1");
    const auto C = static_cast<std::size_t>(n_classes);
    Confusion out{Matrix<std::uint64_t>(C, C, 0), RealMatrix(C, C, 0.0), std::vector<bool>(C, true)};
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] < 0 || preds[i] >= n_classes || truths[i] < 0 || truths[i] >= n_classes) {
            fail(ErrorKind::invalid_argument, "label outside [0, C) in confusion matrix");
        }
        ++out.counts(static_cast<std::size_t>(truths[i]), static_cast<std::size_t>(preds[i]));
    }
    for (std::size_t r = 0; r < C; ++r) {
        std::uint64_t total = 0;
        for (std::size_t c = 0; c < C; ++c) total += out.counts(r, c);
        if (total == 0) continue;
        out.empty_rows[r] = false;
        for (std::size_t c = 0; c < C; ++c) {
            out.rates(r, c) = static_cast<double>(out.counts(r, c)) / static_cast<double>(total);
        }
    }
    return out;
}

std::optional<Scheme> parse_scheme(std::string_view name) {
    if (name == "meta") return Scheme::meta;
    if (name == "pre") return Scheme::pre;
    if (name == "tl") return Scheme::tl;
    if (name == "preproc") return Scheme::preproc;
    return std::nullopt;
}

const char* scheme_name(Scheme s) {
    switch (s) {
        case Scheme::meta: return "meta";
        case Scheme::pre: return "pre";
        case Scheme::tl: return "tl";
        case Scheme::preproc: return "preproc";
    }
    return "unknown";
}

double per_sample_cost(const ComplexityInputs& in) {
    return in.n_ker * in.q * in.n_f * in.n_f + in.l * in.n_d * in.n_d;
}

double complexity_estimate(const ComplexityInputs& in, Scheme scheme) {
    for (double v : {in.n_epoch, in.n_train, in.n_gr, in.n_adpt, in.n_test, in.n_ker, in.q, in.n_f, in.l, in.n_d,
                     in.n_pck, in.m, in.k}) {
        if (!(v >= 0.0) || !std::isfinite(v)) fail(ErrorKind::invalid_argument, "complexity inputs must be >= 0");
    }
    const double net = per_sample_cost(in);
    switch (scheme) {
        case Scheme::meta:
        case Scheme::pre:
            return (in.n_epoch * in.n_train + in.n_gr * in.n_adpt + in.n_test) * net;
        case Scheme::tl:
            return (in.n_epoch * in.n_train + in.n_test) * net + in.n_gr * in.n_adpt * in.l * in.n_d * in.n_d;
        case Scheme::preproc:
            return in.n_pck * in.m * in.k;
    }
    fail(ErrorKind::invalid_argument, "unknown scheme");
}

}  // namespace metacsi::metrics
