#include "preprocess.hpp"

#include <cmath>
#include <tuple>

namespace metacsi::prep {

LinearFit::LinearFit(std::size_t n) : n_(n) {
    if (n < 2) fail(ErrorKind::invalid_argument, "linear fit needs K >= 2");
    const double nn = static_cast<double>(n);
    mean_k_ = 0.5 * (nn + 1.0);
    // sum over k of (k - mean)^2 = K (K^2 - 1) / 12
    inv_sxx_ = 12.0 / (nn * (nn * nn - 1.0));
}

std::pair<double, double> LinearFit::remove(std::span<double> col) const {
    if (col.size() != n_) fail(ErrorKind::invalid_argument, "column length does not match the fit");
    double sum_y = 0.0;
    double sum_ky = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
        const double kc = static_cast<double>(i + 1) - mean_k_;
        sum_y += col[i];
        sum_ky += kc * col[i];
    }
    const double slope = sum_ky * inv_sxx_;
    const double mean_y = sum_y / static_cast<double>(n_);
    const double intercept = mean_y - slope * mean_k_;
    for (std::size_t i = 0; i < n_; ++i) {
        col[i] -= mean_y + slope * (static_cast<double>(i + 1) - mean_k_);
    }
    return {intercept, slope};
}

std::pair<RealMatrix, RealMatrix> split_amplitude_phase(const ComplexMatrix& csi) {
    RealMatrix amp(csi.rows(), csi.cols());
    RealMatrix phase(csi.rows(), csi.cols());
    for (std::size_t i = 0; i < csi.size(); ++i) {
        const std::complex<double> z = csi.data()[i];
        amp.data()[i] = std::abs(z);
        // atan2 returns -pi for (-0, -x); fold it onto +pi. angle(0) = 0.
        double a = (z.real() == 0.0 && z.imag() == 0.0) ? 0.0 : std::arg(z);
        if (a == -kPi) a = kPi;
        phase.data()[i] = a;
    }
    return {std::move(amp), std::move(phase)};
}

namespace {

void unwrap_in_place(double* col, std::size_t n, std::size_t stride, double threshold) {
    double shift = 0.0;
    double prev_raw = col[0];
    for (std::size_t i = 1; i < n; ++i) {
        const double raw = col[i * stride];
        double d = raw - prev_raw;
        if (d > threshold || d <= -threshold) {
            // bring the step into (-pi, pi]
            const double wrapped = d - kTwoPi * std::ceil((d - kPi) / kTwoPi);
            shift += wrapped - d;
        }
        prev_raw = raw;
        col[i * stride] = raw + shift;
    }
}

}  // namespace

std::vector<double> unwrap_phases(std::span<const double> phase, double threshold) {
    std::vector<double> out(phase.begin(), phase.end());
    if (!out.empty()) unwrap_in_place(out.data(), out.size(), 1, threshold);
    return out;
}

LinearResidual fit_and_remove_linear(std::span<const double> phase) {
    const LinearFit fit(phase.size());
    LinearResidual r;
    r.residual.assign(phase.begin(), phase.end());
    std::tie(r.intercept, r.slope) = fit.remove(r.residual);
    return r;
}

RealMatrix subtract_reference(const RealMatrix& phase, int reference_subcarrier) {
    if (reference_subcarrier < 1 || static_cast<std::size_t>(reference_subcarrier) > phase.rows()) {
        fail(ErrorKind::invalid_argument, "reference subcarrier " + std::to_string(reference_subcarrier) +
                                              " outside [1, " + std::to_string(phase.rows()) + "]");
    }
    const std::size_t k0 = static_cast<std::size_t>(reference_subcarrier - 1);
    RealMatrix out = phase;
    for (std::size_t k = 0; k < phase.rows(); ++k) {
        for (std::size_t m = 0; m < phase.cols(); ++m) out(k, m) = phase(k, m) - phase(k0, m);
    }
    return out;
}

RealMatrix normalize_amplitudes(const RealMatrix& amplitude) {
    RealMatrix out = amplitude;
    const std::size_t K = amplitude.rows();
    for (std::size_t m = 0; m < amplitude.cols(); ++m) {
        double sum = 0.0;
        for (std::size_t k = 0; k < K; ++k) sum += amplitude(k, m);
        const double mean = sum / static_cast<double>(K);
        if (!(mean > 0.0) || !std::isfinite(mean)) {
            fail(ErrorKind::data, "spatial link " + std::to_string(m) +
                                      " has zero or non-finite mean amplitude");
        }
        for (std::size_t k = 0; k < K; ++k) out(k, m) = amplitude(k, m) / mean;
    }
    return out;
}

PreprocessedSample preprocess_packet(const sim::CsiPacket& packet, const PreprocessConfig& cfg) {
    const ComplexMatrix& csi = packet.csi;
    for (const auto& z : csi.data()) {
        if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) {
            fail(ErrorKind::data, "packet " + std::to_string(packet.index) + " has non-finite CSI");
        }
    }
    const std::size_t K = csi.rows();
    const std::size_t M = csi.cols();
    auto [amp, phase] = split_amplitude_phase(csi);

    const LinearFit fit(K);
    std::vector<double> col(K);
    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t k = 0; k < K; ++k) col[k] = phase(k, m);
        unwrap_in_place(col.data(), K, 1, cfg.unwrap_threshold_rad);
        fit.remove(col);
        for (std::size_t k = 0; k < K; ++k) phase(k, m) = col[k];
    }
    const RealMatrix clean_phase = subtract_reference(phase, cfg.reference_subcarrier);

    PreprocessedSample s;
    try {
        s.amplitude = normalize_amplitudes(amp);
    } catch (const Error& e) {
        fail(ErrorKind::data, "packet " + std::to_string(packet.index) + " rejected: " + e.what());
    }
    s.real_part = RealMatrix(K, M);
    s.imag_part = RealMatrix(K, M);
    for (std::size_t i = 0; i < s.amplitude.size(); ++i) {
        const double a = s.amplitude.data()[i];
        const double p = clean_phase.data()[i];
        s.real_part.data()[i] = a * std::cos(p);
        s.imag_part.data()[i] = a * std::sin(p);
    }
    s.label = packet.label;
    s.index = packet.index;
    return s;
}

PreprocessedSample raw_sample(const sim::CsiPacket& packet) {
    const ComplexMatrix& csi = packet.csi;
    PreprocessedSample s;
    s.amplitude = RealMatrix(csi.rows(), csi.cols());
    s.real_part = RealMatrix(csi.rows(), csi.cols());
    s.imag_part = RealMatrix(csi.rows(), csi.cols());
    for (std::size_t i = 0; i < csi.size(); ++i) {
        s.amplitude.data()[i] = std::abs(csi.data()[i]);
        s.real_part.data()[i] = csi.data()[i].real();
        s.imag_part.data()[i] = csi.data()[i].imag();
    }
    s.label = packet.label;
    s.index = packet.index;
    return s;
}

BatchResult preprocess_all(std::span<const sim::CsiPacket> packets, const PreprocessConfig& cfg) {
    BatchResult out;
    out.samples.reserve(packets.size());
    for (const auto& p : packets) {
        try {
            out.samples.push_back(preprocess_packet(p, cfg));
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::data) throw;
            out.rejected.push_back({p.index, e.what()});
        }
    }
    return out;
}

}  // namespace metacsi::prep
