#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"
#include "preprocess.hpp"

namespace metacsi::nn {

enum class Head : std::uint8_t { classification = 0, regression = 1 };

enum class LossKind { cross_entropy, mean_squared_error };

inline LossKind loss_kind(Head head) {
    return head == Head::classification ? LossKind::cross_entropy : LossKind::mean_squared_error;
}

/// Network family: Q same-padded stride-1 conv layers with ReLU, average
/// pooling over the K x M grid (whole grid, or per contiguous subcarrier band),
/// L hidden dense layers of width N_d with ReLU, and a linear output layer
/// (softmax applied for classification).
struct ArchConfig {
    int n_conv = 2;      // Q
    int n_filters = 8;   // N_f
    int kernel_h = 3;
    int kernel_w = 3;
    int n_fc = 2;        // L
    int fc_width = 32;   // N_d
    int pool_bands = 1;  // 1 = global average pooling
    int n_classes = 6;   // C (classification)
    int n_people = 1;    // N_L (regression)
    Head head = Head::classification;
    int K = 52;
    int M = 9;
    // Regression targets are divided by these (room width, depth) before
    // entering the loss and multiplied back for predictions.
    double target_width = 1.0;
    double target_depth = 1.0;

    static constexpr int kInputChannels = 3;

    int kernel_size() const { return kernel_h * kernel_w; }
    int n_outputs() const { return head == Head::classification ? n_classes : 2 * n_people; }
    int feature_width() const { return (n_conv > 0 ? n_filters : kInputChannels) * pool_bands; }
    /// First subcarrier of band b; band b spans [band_start(b), band_start(b + 1)).
    int band_start(int b) const { return K * b / pool_bands; }
    void validate() const;

    friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

enum class BlockKind : std::uint8_t { conv_weight = 0, conv_bias = 1, dense_weight = 2, dense_bias = 3 };

struct ParamBlock {
    BlockKind kind = BlockKind::dense_weight;
    std::vector<std::size_t> shape;
    std::vector<double> values;

    bool is_conv() const noexcept { return kind == BlockKind::conv_weight || kind == BlockKind::conv_bias; }

    friend bool operator==(const ParamBlock&, const ParamBlock&) = default;
};

struct ModelParams {
    std::vector<ParamBlock> blocks;

    std::size_t total_size() const;

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

ModelParams zeros_like(const ModelParams& p);
/// y += a * x, blockwise.
void axpy(ModelParams& y, double a, const ModelParams& x);
bool all_finite(const ModelParams& p);
bool same_layout(const ModelParams& a, const ModelParams& b);

ModelParams zero_params(const ArchConfig& arch);
/// He-normal weights (std sqrt(2 / fan_in)), zero biases.
ModelParams init_params(const ArchConfig& arch, std::uint64_t seed);

struct Prediction {
    std::vector<double> likelihoods;  // classification
    int cls = -1;
    std::vector<double> coords;       // regression, meters, (x, y) per person
};

/// Multiply-accumulate counts in the units of the analytic cost model: a conv
/// layer costs kernel_size * C_in * C_out per sample (spatial extent not
/// multiplied in), a dense layer in * out. Forward passes only.
struct OpCounter {
    std::uint64_t conv_ops = 0;
    std::uint64_t dense_ops = 0;

    std::uint64_t total() const noexcept { return conv_ops + dense_ops; }
};

std::vector<double> softmax(std::span<const double> logits);
int predict_class(std::span<const double> likelihoods);

inline constexpr double kLogFloor = 1e-12;

double ce_loss(std::span<const std::vector<double>> likelihoods, std::span<const std::vector<double>> onehots);
double mse_loss(std::span<const std::vector<double>> coords, std::span<const std::vector<double>> truths,
                int n_people);

class Network {
public:
    explicit Network(ArchConfig arch);

    const ArchConfig& arch() const noexcept { return arch_; }

    Prediction forward(const ModelParams& params, const prep::PreprocessedSample& sample,
                       OpCounter* ops = nullptr) const;

    /// Pooled conv features (the dense stack's input).
    std::vector<double> features(const ModelParams& params, const prep::PreprocessedSample& sample,
                                 OpCounter* ops = nullptr) const;
    /// Raw outputs of the dense stack: logits, or normalized coordinates.
    std::vector<double> head_outputs(const ModelParams& params, std::span<const double> features,
                                     OpCounter* ops = nullptr) const;

    /// Training target in the loss's units: one-hot, or normalized coordinates.
    std::vector<double> target(const sim::Label& label) const;

    /// Mean loss over the batch; when `grad` is non-null it receives the exact
    /// gradient (overwritten, laid out like `params`).
    double loss_and_gradient(const ModelParams& params,
                             std::span<const prep::PreprocessedSample* const> batch, ModelParams* grad,
                             OpCounter* ops = nullptr) const;

    /// Same loss evaluated from precomputed features; only dense blocks of
    /// `grad` are written (conv blocks are zeroed).
    double head_loss_and_gradient(const ModelParams& params, std::span<const std::vector<double>> features,
                                  std::span<const sim::Label* const> labels, ModelParams* grad,
                                  OpCounter* ops = nullptr) const;

    void check_params(const ModelParams& params) const;
    void check_sample(const prep::PreprocessedSample& sample) const;

    std::size_t first_dense_block() const noexcept { return 2 * static_cast<std::size_t>(arch_.n_conv); }

private:
    struct HeadCache;
    struct ConvCache;

    void conv_forward(const ModelParams& params, const prep::PreprocessedSample& sample, ConvCache& cache,
                      OpCounter* ops) const;
    void conv_backward(const ModelParams& params, const ConvCache& cache, std::span<const double> d_features,
                       ModelParams& grad) const;
    void head_forward(const ModelParams& params, std::span<const double> features, HeadCache& cache,
                      OpCounter* ops) const;
    /// Loss of one sample from head outputs; writes d loss / d outputs.
    double sample_loss(std::span<const double> outputs, const sim::Label& label,
                       std::vector<double>& d_out) const;
    void head_backward(const ModelParams& params, const HeadCache& cache, std::span<const double> d_out,
                       ModelParams& grad, std::vector<double>* d_features) const;

    ArchConfig arch_;
};

/// Checkpoint file: "MSNN", u16 version, architecture fields, then every
/// parameter value as a little-endian 64-bit float in block order.
void save_checkpoint(const std::filesystem::path& path, const ArchConfig& arch, const ModelParams& params);
std::pair<ArchConfig, ModelParams> load_checkpoint(const std::filesystem::path& path);

}  // namespace metacsi::nn
