#pragma once

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "metrics.hpp"
#include "nn.hpp"

namespace metacsi::meta {

using nn::ModelParams;

template <typename S>
concept IndexedSample = requires(const S& s) {
    { s.index } -> std::convertible_to<std::int64_t>;
};

/// A differentiable batch loss. `loss` returns the mean loss over the batch
/// and, when `grad` is non-null, overwrites it with the exact gradient.
template <IndexedSample Sample>
class Objective {
public:
    virtual ~Objective() = default;
    virtual double loss(const ModelParams& params, std::span<const Sample* const> batch,
                        ModelParams* grad) const = 0;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct MetaConfig {
    double inner_rate = 1e-1;  // alpha
    double outer_rate = 1e-4;  // beta
    int n_epochs = 20;
    int batch_size = 64;       // V
    int n_inner_steps = 5;     // N_gr, shared by inner loop and adaptation
    AdamConfig adam;
    std::uint64_t seed = 0;

    void validate() const;
};

struct OptimizerState {
    ModelParams first_moment;
    ModelParams second_moment;
    std::uint64_t step = 0;
};

OptimizerState adam_init(const ModelParams& params);
void adam_step(ModelParams& params, const ModelParams& grad, OptimizerState& state, double rate,
               const AdamConfig& cfg);

/// Seeded permutation of [0, n) for one epoch; `stream` separates consumers.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch, std::uint64_t stream);

struct LogRow {
    int epoch = 0;
    int task = 0;  // -1 for single-set training
    double loss = 0.0;
};
using TrainingLog = std::vector<LogRow>;

/// One named group of sample indices, for disjointness checks.
struct IndexGroup {
    std::string role;
    std::vector<std::int64_t> indices;
};

/// Rejects any index appearing twice, naming both roles.
void check_disjoint(std::span<const IndexGroup> groups);

template <IndexedSample Sample>
struct Task {
    int id = 0;
    std::vector<const Sample*> ptr;
    std::vector<const Sample*> val;
};

template <IndexedSample Sample>
struct TaskSet {
    std::vector<Task<Sample>> tasks;
};

/// Blocks with mask[i] == false are held fixed. An empty mask trains everything.
using BlockMask = std::vector<bool>;

namespace detail {

template <IndexedSample Sample>
std::vector<std::int64_t> indices_of(const std::vector<const Sample*>& set) {
    std::vector<std::int64_t> out;
    out.reserve(set.size());
    for (const Sample* s : set) out.push_back(static_cast<std::int64_t>(s->index));
    return out;
}

template <IndexedSample Sample>
std::vector<const Sample*> take_batch(const std::vector<const Sample*>& set, const std::vector<std::size_t>& order,
                                      std::size_t batch, std::size_t batch_size) {
    const std::size_t n_batches = (set.size() + batch_size - 1) / batch_size;
    const std::size_t b = batch % n_batches;
    const std::size_t begin = b * batch_size;
    const std::size_t end = std::min(set.size(), begin + batch_size);
    std::vector<const Sample*> out;
    out.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) out.push_back(set[order[i]]);
    return out;
}

inline void apply_update(ModelParams& params, double rate, const ModelParams& grad, const BlockMask& mask) {
    for (std::size_t i = 0; i < params.blocks.size(); ++i) {
        if (!mask.empty() && !mask[i]) continue;
        auto& v = params.blocks[i].values;
        const auto& g = grad.blocks[i].values;
        for (std::size_t j = 0; j < v.size(); ++j) v[j] += -rate * g[j];
    }
}

inline void require_finite(const ModelParams& grad, const char* where) {
    if (!nn::all_finite(grad)) fail(ErrorKind::numeric, std::string("non-finite gradient in ") + where);
}

}  // namespace detail

/// One SGD step: params - alpha * grad Loss(batch; params).
template <IndexedSample Sample>
ModelParams sgd_inner_update(const Objective<Sample>& obj, const ModelParams& params,
                             std::span<const Sample* const> batch, const MetaConfig& cfg, const BlockMask& mask = {}) {
    ModelParams grad;
    obj.loss(params, batch, &grad);
    detail::require_finite(grad, "SGD update");
    ModelParams out = params;
    detail::apply_update(out, cfg.inner_rate, grad, mask);
    return out;
}

struct MetaGradient {
    ModelParams grad;
    double total_loss = 0.0;
    std::vector<double> task_losses;
};

/// First-order outer gradient of sum_u Loss(val_u; Theta_u), where Theta_u is
/// Theta_0 after N_gr SGD steps on ptr_u; the inner update's Jacobian is
/// taken as the identity.
template <IndexedSample Sample>
MetaGradient first_order_meta_gradient(const Objective<Sample>& obj, const ModelParams& theta0,
                                       std::span<const std::vector<const Sample*>> ptr_batches,
                                       std::span<const std::vector<const Sample*>> val_batches,
                                       const MetaConfig& cfg) {
    if (ptr_batches.size() != val_batches.size()) fail(ErrorKind::invalid_argument, "task batch count mismatch");
    MetaGradient out{nn::zeros_like(theta0), 0.0, {}};
    ModelParams g;
    for (std::size_t u = 0; u < val_batches.size(); ++u) {
        ModelParams theta_u = theta0;
        for (int s = 0; s < cfg.n_inner_steps; ++s) theta_u = sgd_inner_update<Sample>(obj, theta_u, ptr_batches[u], cfg);
        const double l = obj.loss(theta_u, val_batches[u], &g);
        detail::require_finite(g, "outer gradient");
        nn::axpy(out.grad, 1.0, g);
        out.total_loss += l;
        out.task_losses.push_back(l);
    }
    return out;
}

template <IndexedSample Sample>
void check_task_set(const TaskSet<Sample>& set) {
    if (set.tasks.empty()) fail(ErrorKind::invalid_argument, "meta-training needs at least one task");
    std::vector<IndexGroup> groups;
    for (const auto& t : set.tasks) {
        if (t.val.empty()) fail(ErrorKind::invalid_argument, "task " + std::to_string(t.id) + " has no validation samples");
        groups.push_back({"ptr(" + std::to_string(t.id) + ")", detail::indices_of(t.ptr)});
        groups.push_back({"val(" + std::to_string(t.id) + ")", detail::indices_of(t.val)});
    }
    check_disjoint(groups);
}

/// First-order MAML. Each outer iteration clones Theta_0 per task, runs the
/// inner SGD steps on a ptr minibatch, sums validation gradients at the
/// adapted parameters and takes one ADAM step on Theta_0. An epoch has
/// ceil(max_u |val_u| / V) iterations; smaller sets cycle their batches.
template <IndexedSample Sample>
ModelParams meta_train(const Objective<Sample>& obj, const ModelParams& init, const TaskSet<Sample>& set,
                       const MetaConfig& cfg, TrainingLog* log = nullptr) {
    cfg.validate();
    check_task_set(set);
    if (cfg.n_inner_steps > 0) {
        for (const auto& t : set.tasks) {
            if (t.ptr.empty()) {
                fail(ErrorKind::invalid_argument, "task " + std::to_string(t.id) + " has no pre-training samples");
            }
        }
    }
    const auto V = static_cast<std::size_t>(cfg.batch_size);
    const std::size_t U = set.tasks.size();
    std::size_t iterations = 0;
    for (const auto& t : set.tasks) iterations = std::max(iterations, (t.val.size() + V - 1) / V);

    ModelParams theta0 = init;
    OptimizerState state = adam_init(theta0);
    std::vector<std::vector<std::size_t>> ptr_order(U), val_order(U);
    std::vector<std::vector<const Sample*>> ptr_batches(U), val_batches(U);
    for (int epoch = 0; epoch < cfg.n_epochs; ++epoch) {
        for (std::size_t u = 0; u < U; ++u) {
            val_order[u] = epoch_order(set.tasks[u].val.size(), cfg.seed, epoch, 2 * u);
            ptr_order[u] = epoch_order(set.tasks[u].ptr.size(), cfg.seed, epoch, 2 * u + 1);
        }
        std::vector<double> epoch_loss(U, 0.0);
        for (std::size_t it = 0; it < iterations; ++it) {
            for (std::size_t u = 0; u < U; ++u) {
                val_batches[u] = detail::take_batch(set.tasks[u].val, val_order[u], it, V);
                ptr_batches[u] = set.tasks[u].ptr.empty()
                                     ? std::vector<const Sample*>{}
                                     : detail::take_batch(set.tasks[u].ptr, ptr_order[u], it, V);
            }
            const MetaGradient mg = first_order_meta_gradient<Sample>(obj, theta0, ptr_batches, val_batches, cfg);
            adam_step(theta0, mg.grad, state, cfg.outer_rate, cfg.adam);
            for (std::size_t u = 0; u < U; ++u) epoch_loss[u] += mg.task_losses[u];
        }
        if (log) {
            for (std::size_t u = 0; u < U; ++u) {
                log->push_back({epoch, set.tasks[u].id, epoch_loss[u] / static_cast<double>(iterations)});
            }
        }
    }
    return theta0;
}

/// Minibatch ADAM on a single set for N_epoch epochs.
template <IndexedSample Sample>
ModelParams pretrain(const Objective<Sample>& obj, const ModelParams& init, const std::vector<const Sample*>& train,
                     const MetaConfig& cfg, TrainingLog* log = nullptr) {
    cfg.validate();
    if (train.empty()) fail(ErrorKind::invalid_argument, "pre-training set is empty");
    const auto V = static_cast<std::size_t>(cfg.batch_size);
    const std::size_t iterations = (train.size() + V - 1) / V;
    ModelParams theta = init;
    OptimizerState state = adam_init(theta);
    ModelParams grad;
    for (int epoch = 0; epoch < cfg.n_epochs; ++epoch) {
        const std::vector<std::size_t> order = epoch_order(train.size(), cfg.seed, epoch, 0);
        double epoch_loss = 0.0;
        for (std::size_t it = 0; it < iterations; ++it) {
            const std::vector<const Sample*> batch = detail::take_batch(train, order, it, V);
            epoch_loss += obj.loss(theta, batch, &grad);
            detail::require_finite(grad, "pre-training");
            adam_step(theta, grad, state, cfg.outer_rate, cfg.adam);
        }
        if (log) log->push_back({epoch, -1, epoch_loss / static_cast<double>(iterations)});
    }
    return theta;
}

/// N_gr full-batch SGD steps at the inner rate on the adaptation set.
template <IndexedSample Sample>
ModelParams adapt(const Objective<Sample>& obj, const ModelParams& theta0, const std::vector<const Sample*>& adapt_set,
                  const MetaConfig& cfg) {
    if (cfg.n_inner_steps == 0) return theta0;
    if (adapt_set.empty()) fail(ErrorKind::invalid_argument, "adaptation set is empty but N_gr > 0");
    ModelParams theta = theta0;
    for (int s = 0; s < cfg.n_inner_steps; ++s) theta = sgd_inner_update<Sample>(obj, theta, adapt_set, cfg);
    return theta;
}

/// Network loss as an Objective; optionally counts forward operations.
class NetworkObjective final : public Objective<prep::PreprocessedSample> {
public:
    explicit NetworkObjective(const nn::Network& net, nn::OpCounter* ops = nullptr) : net_(net), ops_(ops) {}

    double loss(const ModelParams& params, std::span<const prep::PreprocessedSample* const> batch,
                ModelParams* grad) const override {
        return net_.loss_and_gradient(params, batch, grad, ops_);
    }

    const nn::Network& network() const noexcept { return net_; }

private:
    const nn::Network& net_;
    nn::OpCounter* ops_;
};

/// Transfer-learning fine-tune: conv blocks frozen, N_gr SGD steps on the
/// dense stack over features extracted once per adaptation sample.
ModelParams tl_finetune(const nn::Network& net, const ModelParams& pretrained,
                        const std::vector<const prep::PreprocessedSample*>& adapt_set, const MetaConfig& cfg,
                        nn::OpCounter* ops = nullptr);

metrics::MetricsReport evaluate(const nn::Network& net, const ModelParams& params,
                                const std::vector<const prep::PreprocessedSample*>& test_set);

}  // namespace metacsi::meta
