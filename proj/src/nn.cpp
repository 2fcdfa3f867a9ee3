#include "nn.hpp"

#include <algorithm>
#include <cmath>

#include "binio.hpp"
#include "rng.hpp"

namespace metacsi::nn {

void ArchConfig::validate() const {
    if (n_conv < 0 || n_fc < 0) fail(ErrorKind::config, "layer counts must be non-negative");
    if (n_conv > 0 && (n_filters <= 0 || kernel_h <= 0 || kernel_w <= 0)) {
        fail(ErrorKind::config, "conv layers need positive filter count and kernel size");
    }
    if (n_fc > 0 && fc_width <= 0) fail(ErrorKind::config, "dense width must be positive");
    if (K <= 0 || M <= 0) fail(ErrorKind::config, "input dimensions must be positive");
    if (pool_bands < 1 || pool_bands > K) fail(ErrorKind::config, "pool_bands must lie in [1, K]");
    if (head == Head::classification && n_classes < 2) fail(ErrorKind::config, "classification needs C >= 2");
    if (head == Head::regression && n_people < 1) fail(ErrorKind::config, "regression needs N_L >= 1");
    if (!(target_width > 0.0 && target_depth > 0.0)) fail(ErrorKind::config, "target scale must be positive");
}

std::size_t ModelParams::total_size() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.values.size();
    return n;
}

ModelParams zeros_like(const ModelParams& p) {
    ModelParams z = p;
    for (auto& b : z.blocks) std::fill(b.values.begin(), b.values.end(), 0.0);
    return z;
}

void axpy(ModelParams& y, double a, const ModelParams& x) {
    for (std::size_t i = 0; i < y.blocks.size(); ++i) {
        auto& yv = y.blocks[i].values;
        const auto& xv = x.blocks[i].values;
        for (std::size_t j = 0; j < yv.size(); ++j) yv[j] += a * xv[j];
    }
}

bool all_finite(const ModelParams& p) {
    for (const auto& b : p.blocks) {
        for (double v : b.values) {
            if (!std::isfinite(v)) return false;
        }
    }
    return true;
}

bool same_layout(const ModelParams& a, const ModelParams& b) {
    if (a.blocks.size() != b.blocks.size()) return false;
    for (std::size_t i = 0; i < a.blocks.size(); ++i) {
        if (a.blocks[i].kind != b.blocks[i].kind || a.blocks[i].shape != b.blocks[i].shape ||
            a.blocks[i].values.size() != b.blocks[i].values.size()) {
            return false;
        }
    }
    return true;
}

namespace {

ParamBlock make_block(BlockKind kind, std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return {kind, std::move(shape), std::vector<double>(n, 0.0)};
}

}  // namespace

ModelParams zero_params(const ArchConfig& arch) {
    arch.validate();
    ModelParams p;
    const auto F = static_cast<std::size_t>(arch.n_filters);
    std::size_t c_in = ArchConfig::kInputChannels;
    for (int q = 0; q < arch.n_conv; ++q) {
        p.blocks.push_back(make_block(BlockKind::conv_weight,
                                      {F, c_in, static_cast<std::size_t>(arch.kernel_h),
                                       static_cast<std::size_t>(arch.kernel_w)}));
        p.blocks.push_back(make_block(BlockKind::conv_bias, {F}));
        c_in = F;
    }
    std::size_t width = static_cast<std::size_t>(arch.feature_width());
    for (int i = 0; i < arch.n_fc; ++i) {
        const auto out = static_cast<std::size_t>(arch.fc_width);
        p.blocks.push_back(make_block(BlockKind::dense_weight, {out, width}));
        p.blocks.push_back(make_block(BlockKind::dense_bias, {out}));
        width = out;
    }
    const auto n_out = static_cast<std::size_t>(arch.n_outputs());
    p.blocks.push_back(make_block(BlockKind::dense_weight, {n_out, width}));
    p.blocks.push_back(make_block(BlockKind::dense_bias, {n_out}));
    return p;
}

ModelParams init_params(const ArchConfig& arch, std::uint64_t seed) {
    ModelParams p = zero_params(arch);
    Rng rng = substream(seed, Stream::init);
    for (auto& b : p.blocks) {
        if (b.kind != BlockKind::conv_weight && b.kind != BlockKind::dense_weight) continue;
        std::size_t fan_in = 1;
        for (std::size_t d = 1; d < b.shape.size(); ++d) fan_in *= b.shape[d];
        const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (double& v : b.values) v = scale * gaussian(rng);
    }
    return p;
}

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> p(logits.size());
    if (logits.empty()) return p;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

int predict_class(std::span<const double> likelihoods) {
    if (likelihoods.empty()) fail(ErrorKind::invalid_argument, "empty likelihood vector");
    // max_element returns the first maximum: ties go to the lowest index.
    return static_cast<int>(std::max_element(likelihoods.begin(), likelihoods.end()) - likelihoods.begin());
}

double ce_loss(std::span<const std::vector<double>> likelihoods, std::span<const std::vector<double>> onehots) {
    if (likelihoods.empty()) fail(ErrorKind::invalid_argument, "cross-entropy over an empty batch");
    if (likelihoods.size() != onehots.size()) fail(ErrorKind::invalid_argument, "batch size mismatch");
    double total = 0.0;
    for (std::size_t n = 0; n < likelihoods.size(); ++n) {
        if (likelihoods[n].size() != onehots[n].size()) fail(ErrorKind::invalid_argument, "class count mismatch");
        for (std::size_t c = 0; c < likelihoods[n].size(); ++c) {
            if (onehots[n][c] != 0.0) total += onehots[n][c] * std::log(std::max(likelihoods[n][c], kLogFloor));
        }
    }
    return -total / static_cast<double>(likelihoods.size());
}

double mse_loss(std::span<const std::vector<double>> coords, std::span<const std::vector<double>> truths,
                int n_people) {
    if (coords.empty()) fail(ErrorKind::invalid_argument, "MSE over an empty batch");
    if (coords.size() != truths.size()) fail(ErrorKind::invalid_argument, "batch size mismatch");
    const auto width = static_cast<std::size_t>(2 * n_people);
    double total = 0.0;
    for (std::size_t n = 0; n < coords.size(); ++n) {
        if (coords[n].size() != width || truths[n].size() != width) {
            fail(ErrorKind::invalid_argument, "coordinate vector must hold 2 * N_L values");
        }
        for (std::size_t i = 0; i < width; ++i) {
            const double d = coords[n][i] - truths[n][i];
            total += d * d;
        }
    }
    return total / static_cast<double>(coords.size());
}

struct Network::ConvCache {
    std::vector<std::vector<double>> padded;  // per layer: C_in x (K+kh-1) x (M+kw-1)
    std::vector<std::vector<double>> pre;     // per layer: F x K x M pre-activation
    std::vector<double> features;
};

struct Network::HeadCache {
    std::vector<std::vector<double>> inputs;  // input of every dense layer incl. output
    std::vector<std::vector<double>> pre;     // pre-activation of hidden layers
    std::vector<double> outputs;
};

Network::Network(ArchConfig arch) : arch_(arch) { arch_.validate(); }

void Network::check_params(const ModelParams& params) const {
    if (!same_layout(params, zero_params(arch_))) {
        fail(ErrorKind::invalid_argument, "parameter blocks do not match the architecture");
    }
}

void Network::check_sample(const prep::PreprocessedSample& s) const {
    const auto K = static_cast<std::size_t>(arch_.K);
    const auto M = static_cast<std::size_t>(arch_.M);
    for (const RealMatrix* m : {&s.amplitude, &s.real_part, &s.imag_part}) {
        if (m->rows() != K || m->cols() != M) {
            fail(ErrorKind::invalid_argument, "sample is " + std::to_string(m->rows()) + "x" +
                                                  std::to_string(m->cols()) + ", network expects " +
                                                  std::to_string(K) + "x" + std::to_string(M));
        }
    }
}

namespace {

// Eight independent partial sums so the loop vectorizes without reassociation.
double dot(const double* __restrict a, const double* __restrict b, std::size_t n) {
    double acc[8] = {};
    std::size_t o = 0;
    for (; o + 8 <= n; o += 8) {
        for (std::size_t l = 0; l < 8; ++l) acc[l] += a[o + l] * b[o + l];
    }
    double s = 0.0;
    for (; o < n; ++o) s += a[o] * b[o];
    for (double v : acc) s += v;
    return s;
}

}  // namespace

// Convolution outputs are kept K x Wp wide (Wp = padded width); columns m >= M
// are scratch, so every tap is one contiguous run over the padded input.
void Network::conv_forward(const ModelParams& params, const prep::PreprocessedSample& sample, ConvCache& cache,
                           OpCounter* ops) const {
    const std::size_t K = static_cast<std::size_t>(arch_.K);
    const std::size_t M = static_cast<std::size_t>(arch_.M);
    const RealMatrix* inputs[3] = {&sample.amplitude, &sample.real_part, &sample.imag_part};

    const std::size_t B = static_cast<std::size_t>(arch_.pool_bands);
    if (arch_.n_conv == 0) {
        cache.features.assign(3 * B, 0.0);
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t band = 0; band < B; ++band) {
                const auto k0 = static_cast<std::size_t>(arch_.band_start(static_cast<int>(band)));
                const auto k1 = static_cast<std::size_t>(arch_.band_start(static_cast<int>(band) + 1));
                double s = 0.0;
                for (std::size_t k = k0; k < k1; ++k) {
                    for (std::size_t m = 0; m < M; ++m) s += (*inputs[c])(k, m);
                }
                cache.features[c * B + band] = s / static_cast<double>((k1 - k0) * M);
            }
        }
        return;
    }

    const std::size_t kh = static_cast<std::size_t>(arch_.kernel_h);
    const std::size_t kw = static_cast<std::size_t>(arch_.kernel_w);
    const std::size_t ph = (kh - 1) / 2;
    const std::size_t pw = (kw - 1) / 2;
    const std::size_t Hp = K + kh - 1;
    const std::size_t Wp = M + kw - 1;
    const std::size_t KW = K * Wp;
    const std::size_t plane = Hp * Wp;
    const std::size_t F = static_cast<std::size_t>(arch_.n_filters);
    const std::size_t Q = static_cast<std::size_t>(arch_.n_conv);

    cache.padded.resize(Q);
    cache.pre.resize(Q);
    cache.padded[0].assign(3 * plane + kw, 0.0);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t k = 0; k < K; ++k) {
            for (std::size_t m = 0; m < M; ++m) {
                cache.padded[0][(c * Hp + k + ph) * Wp + m + pw] = (*inputs[c])(k, m);
            }
        }
    }

    for (std::size_t q = 0; q < Q; ++q) {
        const std::size_t c_in = q == 0 ? 3 : F;
        const double* W = params.blocks[2 * q].values.data();
        const std::vector<double>& b = params.blocks[2 * q + 1].values;
        const double* P = cache.padded[q].data();
        std::vector<double>& Z = cache.pre[q];
        Z.resize(F * KW);

        const std::size_t taps = c_in * kh * kw;
        for (std::size_t f = 0; f < F; ++f) {
            double* __restrict dst = Z.data() + f * KW;
            const double* wf = W + f * taps;
            // Blocks of 32 outputs stay in registers across all taps.
            std::size_t o0 = 0;
            for (; o0 + 32 <= KW; o0 += 32) {
                double acc[32];
                for (std::size_t l = 0; l < 32; ++l) acc[l] = b[f];
                for (std::size_t c = 0; c < c_in; ++c) {
                    for (std::size_t i = 0; i < kh; ++i) {
                        for (std::size_t j = 0; j < kw; ++j) {
                            const double w = wf[(c * kh + i) * kw + j];
                            const double* src = P + c * plane + i * Wp + j + o0;
                            for (std::size_t l = 0; l < 32; ++l) acc[l] += w * src[l];
                        }
                    }
                }
                std::copy_n(acc, 32, dst + o0);
            }
            for (std::size_t o = o0; o < KW; ++o) {
                double a = b[f];
                for (std::size_t c = 0; c < c_in; ++c) {
                    for (std::size_t i = 0; i < kh; ++i) {
                        for (std::size_t j = 0; j < kw; ++j) {
                            a += wf[(c * kh + i) * kw + j] * P[c * plane + i * Wp + j + o];
                        }
                    }
                }
                dst[o] = a;
            }
        }
        if (ops) ops->conv_ops += static_cast<std::uint64_t>(kh * kw * c_in * F);

        if (q + 1 < Q) {
            std::vector<double>& next = cache.padded[q + 1];
            next.assign(F * plane + kw, 0.0);
            for (std::size_t f = 0; f < F; ++f) {
                for (std::size_t k = 0; k < K; ++k) {
                    const double* z = Z.data() + f * KW + k * Wp;
                    double* d = next.data() + (f * Hp + k + ph) * Wp + pw;
                    for (std::size_t m = 0; m < M; ++m) d[m] = std::max(0.0, z[m]);
                }
            }
        } else {
            cache.features.assign(F * B, 0.0);
            for (std::size_t f = 0; f < F; ++f) {
                for (std::size_t band = 0; band < B; ++band) {
                    const auto k0 = static_cast<std::size_t>(arch_.band_start(static_cast<int>(band)));
                    const auto k1 = static_cast<std::size_t>(arch_.band_start(static_cast<int>(band) + 1));
                    double s = 0.0;
                    for (std::size_t k = k0; k < k1; ++k) {
                        const double* z = Z.data() + f * KW + k * Wp;
                        for (std::size_t m = 0; m < M; ++m) s += std::max(0.0, z[m]);
                    }
                    cache.features[f * B + band] = s / static_cast<double>((k1 - k0) * M);
                }
            }
        }
    }
}

void Network::conv_backward(const ModelParams& params, const ConvCache& cache, std::span<const double> d_features,
                            ModelParams& grad) const {
    if (arch_.n_conv == 0) return;
    const std::size_t K = static_cast<std::size_t>(arch_.K);
    const std::size_t M = static_cast<std::size_t>(arch_.M);
    const std::size_t kh = static_cast<std::size_t>(arch_.kernel_h);
    const std::size_t kw = static_cast<std::size_t>(arch_.kernel_w);
    const std::size_t ph = (kh - 1) / 2;
    const std::size_t pw = (kw - 1) / 2;
    const std::size_t Hp = K + kh - 1;
    const std::size_t Wp = M + kw - 1;
    const std::size_t KW = K * Wp;
    const std::size_t plane = Hp * Wp;
    const std::size_t F = static_cast<std::size_t>(arch_.n_filters);
    const std::size_t Q = static_cast<std::size_t>(arch_.n_conv);

    // d loss / d post-ReLU activations of the current layer, wide layout.
    const std::size_t B = static_cast<std::size_t>(arch_.pool_bands);
    std::vector<double> dA(F * KW, 0.0);
    for (std::size_t f = 0; f < F; ++f) {
        for (std::size_t band = 0; band < B; ++band) {
            const auto k0 = static_cast<std::size_t>(arch_.band_start(static_cast<int>(band)));
            const auto k1 = static_cast<std::size_t>(arch_.band_start(static_cast<int>(band) + 1));
            const double g = d_features[f * B + band] / static_cast<double>((k1 - k0) * M);
            for (std::size_t k = k0; k < k1; ++k) std::fill_n(dA.begin() + f * KW + k * Wp, M, g);
        }
    }

    // dZ rows carry zero margins so the input gradient can gather from shifted offsets.
    const std::size_t margin = (kh - 1) * Wp + kw + 32;
    const std::size_t stride = KW + 2 * margin;
    std::vector<double> dZ(F * stride, 0.0);
    for (std::size_t qq = Q; qq-- > 0;) {
        const std::size_t c_in = qq == 0 ? 3 : F;
        const std::vector<double>& Z = cache.pre[qq];
        const double* P = cache.padded[qq].data();
        const double* W = params.blocks[2 * qq].values.data();
        std::vector<double>& gW = grad.blocks[2 * qq].values;
        std::vector<double>& gb = grad.blocks[2 * qq + 1].values;

        for (std::size_t f = 0; f < F; ++f) {
            double* dz = dZ.data() + f * stride + margin;
            const double* z = Z.data() + f * KW;
            const double* da = dA.data() + f * KW;
            double s = 0.0;
            for (std::size_t o = 0; o < KW; ++o) {
                dz[o] = z[o] > 0.0 ? da[o] : 0.0;
                s += dz[o];
            }
            gb[f] += s;
        }

        for (std::size_t f = 0; f < F; ++f) {
            const double* dz = dZ.data() + f * stride + margin;
            for (std::size_t c = 0; c < c_in; ++c) {
                for (std::size_t i = 0; i < kh; ++i) {
                    for (std::size_t j = 0; j < kw; ++j) {
                        gW[((f * c_in + c) * kh + i) * kw + j] += dot(dz, P + c * plane + i * Wp + j, KW);
                    }
                }
            }
        }
        if (qq == 0) break;

        // d loss / d inputs of this layer, gathered per output block.
        const std::size_t shift = ph * Wp + pw;
        for (std::size_t c = 0; c < c_in; ++c) {
            double* out = dA.data() + c * KW;
            for (std::size_t o0 = 0; o0 < KW; o0 += 32) {
                const std::size_t n = std::min<std::size_t>(32, KW - o0);
                double acc[32] = {};
                for (std::size_t f = 0; f < F; ++f) {
                    const double* dz = dZ.data() + f * stride + margin + o0 + shift;
                    const double* wf = W + (f * c_in + c) * kh * kw;
                    for (std::size_t i = 0; i < kh; ++i) {
                        for (std::size_t j = 0; j < kw; ++j) {
                            const double w = wf[i * kw + j];
                            const double* src = dz - i * Wp - j;
                            for (std::size_t l = 0; l < 32; ++l) acc[l] += w * src[l];
                        }
                    }
                }
                std::copy_n(acc, n, out + o0);
            }
            for (std::size_t k = 0; k < K; ++k) std::fill(out + k * Wp + M, out + (k + 1) * Wp, 0.0);
        }
    }
}

void Network::head_forward(const ModelParams& params, std::span<const double> features, HeadCache& cache,
                           OpCounter* ops) const {
    const std::size_t L = static_cast<std::size_t>(arch_.n_fc);
    const std::size_t base = first_dense_block();
    cache.inputs.resize(L + 1);
    cache.pre.resize(L);
    std::vector<double> h(features.begin(), features.end());
    for (std::size_t layer = 0; layer <= L; ++layer) {
        const ParamBlock& Wb = params.blocks[base + 2 * layer];
        const std::vector<double>& b = params.blocks[base + 2 * layer + 1].values;
        const std::size_t n_out = Wb.shape[0];
        const std::size_t n_in = Wb.shape[1];
        if (h.size() != n_in) fail(ErrorKind::invalid_argument, "dense input width mismatch");
        std::vector<double> z(b);
        for (std::size_t o = 0; o < n_out; ++o) {
            const double* w = Wb.values.data() + o * n_in;
            double s = 0.0;
            for (std::size_t i = 0; i < n_in; ++i) s += w[i] * h[i];
            z[o] += s;
        }
        if (ops) ops->dense_ops += static_cast<std::uint64_t>(n_in * n_out);
        cache.inputs[layer] = std::move(h);
        if (layer < L) {
            h.resize(n_out);
            for (std::size_t o = 0; o < n_out; ++o) h[o] = std::max(0.0, z[o]);
            cache.pre[layer] = std::move(z);
        } else {
            cache.outputs = std::move(z);
        }
    }
}

void Network::head_backward(const ModelParams& params, const HeadCache& cache, std::span<const double> d_out,
                            ModelParams& grad, std::vector<double>* d_features) const {
    const std::size_t L = static_cast<std::size_t>(arch_.n_fc);
    const std::size_t base = first_dense_block();
    std::vector<double> delta(d_out.begin(), d_out.end());
    for (std::size_t layer = L + 1; layer-- > 0;) {
        const ParamBlock& Wb = params.blocks[base + 2 * layer];
        std::vector<double>& gW = grad.blocks[base + 2 * layer].values;
        std::vector<double>& gb = grad.blocks[base + 2 * layer + 1].values;
        const std::size_t n_out = Wb.shape[0];
        const std::size_t n_in = Wb.shape[1];
        const std::vector<double>& x = cache.inputs[layer];
        for (std::size_t o = 0; o < n_out; ++o) {
            gb[o] += delta[o];
            double* g = gW.data() + o * n_in;
            for (std::size_t i = 0; i < n_in; ++i) g[i] += delta[o] * x[i];
        }
        if (layer == 0 && d_features == nullptr) break;
        std::vector<double> prev(n_in, 0.0);
        for (std::size_t o = 0; o < n_out; ++o) {
            const double* w = Wb.values.data() + o * n_in;
            for (std::size_t i = 0; i < n_in; ++i) prev[i] += w[i] * delta[o];
        }
        if (layer > 0) {
            const std::vector<double>& z = cache.pre[layer - 1];
            for (std::size_t i = 0; i < n_in; ++i) prev[i] = z[i] > 0.0 ? prev[i] : 0.0;
            delta = std::move(prev);
        } else {
            *d_features = std::move(prev);
        }
    }
}

std::vector<double> Network::target(const sim::Label& label) const {
    if (arch_.head == Head::classification) {
        if (label.kind == sim::LabelKind::coords) fail(ErrorKind::invalid_argument, "coordinate label on a classifier");
        if (label.cls < 0 || label.cls >= arch_.n_classes) {
            fail(ErrorKind::invalid_argument, "label class " + std::to_string(label.cls) + " outside [0, C)");
        }
        std::vector<double> e(static_cast<std::size_t>(arch_.n_classes), 0.0);
        e[static_cast<std::size_t>(label.cls)] = 1.0;
        return e;
    }
    if (label.kind != sim::LabelKind::coords || static_cast<int>(label.coords.size()) != arch_.n_people) {
        fail(ErrorKind::invalid_argument, "regression needs a coordinate label with N_L people");
    }
    std::vector<double> t;
    t.reserve(label.coords.size() * 2);
    for (const Point& p : label.coords) {
        t.push_back(p.x / arch_.target_width);
        t.push_back(p.y / arch_.target_depth);
    }
    return t;
}

double Network::sample_loss(std::span<const double> outputs, const sim::Label& label,
                            std::vector<double>& d_out) const {
    const std::vector<double> t = target(label);
    d_out.assign(outputs.size(), 0.0);
    if (arch_.head == Head::classification) {
        const std::vector<double> p = softmax(outputs);
        const auto c = static_cast<std::size_t>(label.cls);
        // Below the log floor the clamped loss is flat.
        if (p[c] >= kLogFloor) {
            for (std::size_t i = 0; i < p.size(); ++i) d_out[i] = p[i] - t[i];
        }
        return -std::log(std::max(p[c], kLogFloor));
    }
    double loss = 0.0;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        const double d = outputs[i] - t[i];
        loss += d * d;
        d_out[i] = 2.0 * d;
    }
    return loss;
}

std::vector<double> Network::features(const ModelParams& params, const prep::PreprocessedSample& sample,
                                      OpCounter* ops) const {
    check_sample(sample);
    ConvCache cache;
    conv_forward(params, sample, cache, ops);
    return std::move(cache.features);
}

std::vector<double> Network::head_outputs(const ModelParams& params, std::span<const double> features,
                                          OpCounter* ops) const {
    HeadCache cache;
    head_forward(params, features, cache, ops);
    return std::move(cache.outputs);
}

Prediction Network::forward(const ModelParams& params, const prep::PreprocessedSample& sample,
                            OpCounter* ops) const {
    check_params(params);
    const std::vector<double> f = features(params, sample, ops);
    const std::vector<double> out = head_outputs(params, f, ops);
    Prediction pred;
    if (arch_.head == Head::classification) {
        pred.likelihoods = softmax(out);
        pred.cls = predict_class(pred.likelihoods);
    } else {
        pred.coords = out;
        for (std::size_t i = 0; i < pred.coords.size(); ++i) {
            pred.coords[i] *= (i % 2 == 0) ? arch_.target_width : arch_.target_depth;
        }
    }
    return pred;
}

double Network::loss_and_gradient(const ModelParams& params,
                                  std::span<const prep::PreprocessedSample* const> batch, ModelParams* grad,
                                  OpCounter* ops) const {
    if (batch.empty()) fail(ErrorKind::invalid_argument, "loss over an empty batch");
    check_params(params);
    if (grad) *grad = zeros_like(params);
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    ConvCache conv;
    HeadCache head;
    std::vector<double> d_out;
    std::vector<double> d_features;
    double total = 0.0;
    for (const prep::PreprocessedSample* s : batch) {
        check_sample(*s);
        conv_forward(params, *s, conv, ops);
        head_forward(params, conv.features, head, ops);
        total += sample_loss(head.outputs, s->label, d_out);
        if (grad) {
            for (double& d : d_out) d *= inv_n;
            head_backward(params, head, d_out, *grad, &d_features);
            conv_backward(params, conv, d_features, *grad);
        }
    }
    return total * inv_n;
}

double Network::head_loss_and_gradient(const ModelParams& params, std::span<const std::vector<double>> features,
                                       std::span<const sim::Label* const> labels, ModelParams* grad,
                                       OpCounter* ops) const {
    if (features.empty()) fail(ErrorKind::invalid_argument, "loss over an empty batch");
    if (features.size() != labels.size()) fail(ErrorKind::invalid_argument, "feature/label count mismatch");
    check_params(params);
    if (grad) *grad = zeros_like(params);
    const double inv_n = 1.0 / static_cast<double>(features.size());
    HeadCache head;
    std::vector<double> d_out;
    double total = 0.0;
    for (std::size_t n = 0; n < features.size(); ++n) {
        head_forward(params, features[n], head, ops);
        total += sample_loss(head.outputs, *labels[n], d_out);
        if (grad) {
            for (double& d : d_out) d *= inv_n;
            head_backward(params, head, d_out, *grad, nullptr);
        }
    }
    return total * inv_n;
}

namespace {

constexpr std::string_view kCheckpointMagic = "MSNN";
constexpr std::uint16_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ArchConfig& arch, const ModelParams& params) {
    Network(arch).check_params(params);
    binio::ByteWriter w;
    w.bytes(kCheckpointMagic);
    w.u16(kCheckpointVersion);
    w.i32(arch.n_conv);
    w.i32(arch.n_filters);
    w.i32(arch.kernel_h);
    w.i32(arch.kernel_w);
    w.i32(arch.n_fc);
    w.i32(arch.fc_width);
    w.i32(arch.pool_bands);
    w.i32(arch.n_classes);
    w.i32(arch.n_people);
    w.u8(static_cast<std::uint8_t>(arch.head));
    w.i32(arch.K);
    w.i32(arch.M);
    w.f64(arch.target_width);
    w.f64(arch.target_depth);
    w.u64(params.total_size());
    for (const auto& b : params.blocks) {
        for (double v : b.values) w.f64(v);
    }
    w.write_file(path);
}

std::pair<ArchConfig, ModelParams> load_checkpoint(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = binio::read_file(path);
    binio::ByteReader r(bytes);
    if (r.bytes(4, "magic") != kCheckpointMagic) fail(ErrorKind::data, path.string() + " is not a model checkpoint");
    const std::uint16_t version = r.u16("version");
    if (version != kCheckpointVersion) {
        fail(ErrorKind::data, "unsupported checkpoint version " + std::to_string(version));
    }
    ArchConfig arch;
    arch.n_conv = r.i32("n_conv");
    arch.n_filters = r.i32("n_filters");
    arch.kernel_h = r.i32("kernel_h");
    arch.kernel_w = r.i32("kernel_w");
    arch.n_fc = r.i32("n_fc");
    arch.fc_width = r.i32("fc_width");
    arch.pool_bands = r.i32("pool_bands");
    arch.n_classes = r.i32("n_classes");
    arch.n_people = r.i32("n_people");
    const std::uint8_t head = r.u8("head");
    if (head > 1) fail(ErrorKind::data, "unknown head tag in checkpoint");
    arch.head = static_cast<Head>(head);
    arch.K = r.i32("K");
    arch.M = r.i32("M");
    arch.target_width = r.f64("target_width");
    arch.target_depth = r.f64("target_depth");
    try {
        arch.validate();
    } catch (const Error& e) {
        fail(ErrorKind::data, std::string("checkpoint architecture invalid: ") + e.what());
    }
    ModelParams params = zero_params(arch);
    const std::uint64_t count = r.u64("parameter count");
    if (count != params.total_size()) fail(ErrorKind::data, "checkpoint parameter count does not match architecture");
    for (auto& b : params.blocks) {
        for (double& v : b.values) v = r.f64("parameter value");
    }
    if (r.remaining() != 0) fail(ErrorKind::data, "trailing bytes after checkpoint parameters");
    return {arch, std::move(params)};
}

}  // namespace metacsi::nn
