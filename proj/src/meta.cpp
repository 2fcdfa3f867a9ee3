#include "meta.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "rng.hpp"

namespace metacsi::meta {

void MetaConfig::validate() const {
    if (!(inner_rate > 0.0) || !(outer_rate > 0.0)) fail(ErrorKind::config, "learning rates must be > 0");
    if (n_epochs < 0) fail(ErrorKind::config, "epoch count must be >= 0");
    if (batch_size < 1) fail(ErrorKind::config, "batch size must be >= 1");
    if (n_inner_steps < 0) fail(ErrorKind::config, "inner step count must be >= 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0)) {
        fail(ErrorKind::config, "invalid ADAM hyperparameters");
    }
}

OptimizerState adam_init(const ModelParams& params) {
    return {nn::zeros_like(params), nn::zeros_like(params), 0};
}

void adam_step(ModelParams& params, const ModelParams& grad, OptimizerState& state, double rate,
               const AdamConfig& cfg) {
    if (!nn::same_layout(params, grad) || !nn::same_layout(params, state.first_moment)) {
        fail(ErrorKind::invalid_argument, "ADAM state does not match parameter layout");
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t b = 0; b < params.blocks.size(); ++b) {
        auto& p = params.blocks[b].values;
        const auto& g = grad.blocks[b].values;
        auto& m = state.first_moment.blocks[b].values;
        auto& v = state.second_moment.blocks[b].values;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            p[i] -= rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
        }
    }
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch, std::uint64_t stream) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = substream(seed, Stream::shuffle, static_cast<std::uint64_t>(epoch), stream);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = uniform_index(rng, i);
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

void check_disjoint(std::span<const IndexGroup> groups) {
    std::unordered_map<std::int64_t, std::size_t> owner;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        for (std::int64_t idx : groups[g].indices) {
            auto [it, inserted] = owner.emplace(idx, g);
            if (!inserted) {
                fail(ErrorKind::data, "index " + std::to_string(idx) + " appears in both " + groups[it->second].role +
                                          " and " + groups[g].role);
            }
        }
    }
}

ModelParams tl_finetune(const nn::Network& net, const ModelParams& pretrained,
                        const std::vector<const prep::PreprocessedSample*>& adapt_set, const MetaConfig& cfg,
                        nn::OpCounter* ops) {
    net.check_params(pretrained);
    if (cfg.n_inner_steps == 0) return pretrained;
    if (adapt_set.empty()) fail(ErrorKind::invalid_argument, "adaptation set is empty but N_gr > 0");

    // Conv blocks are frozen, so each sample's pooled features are fixed.
    std::vector<std::vector<double>> feats;
    std::vector<const sim::Label*> labels;
    feats.reserve(adapt_set.size());
    for (const auto* s : adapt_set) {
        feats.push_back(net.features(pretrained, *s, ops));
        labels.push_back(&s->label);
    }
    BlockMask mask(pretrained.blocks.size());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = !pretrained.blocks[i].is_conv();

    ModelParams theta = pretrained;
    ModelParams grad;
    for (int s = 0; s < cfg.n_inner_steps; ++s) {
        net.head_loss_and_gradient(theta, feats, labels, &grad, ops);
        detail::require_finite(grad, "fine-tuning");
        detail::apply_update(theta, cfg.inner_rate, grad, mask);
    }
    return theta;
}

metrics::MetricsReport evaluate(const nn::Network& net, const ModelParams& params,
                                const std::vector<const prep::PreprocessedSample*>& test_set) {
    if (test_set.empty()) fail(ErrorKind::invalid_argument, "test set is empty");
    const auto start = std::chrono::steady_clock::now();
    metrics::MetricsReport report;
    report.n_samples = test_set.size();
    const nn::ArchConfig& arch = net.arch();
    if (arch.head == nn::Head::classification) {
        std::vector<int> truths;
        for (const auto* s : test_set) {
            report.predicted.push_back(net.forward(params, *s).cls);
            truths.push_back(s->label.cls);
        }
        report.accuracy = metrics::accuracy(report.predicted, truths);
        report.confusion = metrics::confusion_matrix(report.predicted, truths, arch.n_classes);
    } else {
        std::vector<metrics::Coords> preds, truths;
        for (const auto* s : test_set) {
            const nn::Prediction p = net.forward(params, *s);
            metrics::Coords c;
            for (std::size_t i = 0; i + 1 < p.coords.size(); i += 2) c.push_back({p.coords[i], p.coords[i + 1]});
            preds.push_back(std::move(c));
            truths.push_back(s->label.coords);
        }
        report.rmse_m = metrics::rmse(preds, truths, arch.n_people);
        report.error_cdf = metrics::localization_error_cdf(preds, truths, arch.n_people);
    }
    report.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

}  // namespace metacsi::meta
