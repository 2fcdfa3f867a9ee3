#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"
#include "csi_sim.hpp"

namespace metacsi::prep {

struct PreprocessConfig {
    int reference_subcarrier = 1;  // k_0, one-based
    double unwrap_threshold_rad = kPi;
};

/// Model input: three real K x M matrices plus the packet's label.
struct PreprocessedSample {
    RealMatrix amplitude;
    RealMatrix real_part;
    RealMatrix imag_part;
    sim::Label label;
    std::int64_t index = 0;

    friend bool operator==(const PreprocessedSample&, const PreprocessedSample&) = default;
};

/// Closed-form least squares against X = [1, k], k = 1..K.
class LinearFit {
public:
    explicit LinearFit(std::size_t n);

    std::size_t size() const noexcept { return n_; }
    /// Returns (intercept, slope) and overwrites `col` with its residual.
    std::pair<double, double> remove(std::span<double> col) const;

private:
    std::size_t n_;
    double mean_k_;
    double inv_sxx_;
};

std::pair<RealMatrix, RealMatrix> split_amplitude_phase(const ComplexMatrix& csi);

std::vector<double> unwrap_phases(std::span<const double> phase, double threshold = kPi);

struct LinearResidual {
    std::vector<double> residual;
    double intercept = 0.0;
    double slope = 0.0;
};

LinearResidual fit_and_remove_linear(std::span<const double> phase);

RealMatrix subtract_reference(const RealMatrix& phase, int reference_subcarrier);

RealMatrix normalize_amplitudes(const RealMatrix& amplitude);

PreprocessedSample preprocess_packet(const sim::CsiPacket& packet, const PreprocessConfig& cfg = {});

/// Unprocessed model input: |h|, Re h, Im h with no offset removal.
PreprocessedSample raw_sample(const sim::CsiPacket& packet);

struct Rejection {
    std::int64_t index = 0;
    std::string reason;
};

struct BatchResult {
    std::vector<PreprocessedSample> samples;
    std::vector<Rejection> rejected;
};

BatchResult preprocess_all(std::span<const sim::CsiPacket> packets, const PreprocessConfig& cfg = {});

}  // namespace metacsi::prep
