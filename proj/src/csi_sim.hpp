#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "common.hpp"
#include "rng.hpp"

namespace metacsi::sim {

inline constexpr double kLightSpeed = 299792458.0;

struct SubcarrierGrid {
    double carrier_freq_hz = 2.437e9;
    std::vector<double> offsets_hz;

    std::size_t size() const noexcept { return offsets_hz.size(); }
    void validate() const;

    /// 802.11a/g/n 20 MHz data-subcarrier layout: K=52 bins at +-1..+-26
    /// times the spacing, DC skipped, spanning +-8.125 MHz.
    static SubcarrierGrid wifi_20mhz(double carrier_freq_hz = 2.437e9, double spacing_hz = 312.5e3);
    /// K bins symmetric about the carrier with uniform spacing (no DC gap).
    static SubcarrierGrid uniform(double carrier_freq_hz, std::size_t n, double spacing_hz);
};

std::vector<double> subcarrier_frequencies(const SubcarrierGrid& grid);

struct ArrayGeometry {
    std::size_t n_tx = 3;
    std::size_t n_rx = 3;
    std::vector<double> rx_spacings_m{0.0, 0.06, 0.12};
    std::vector<double> tx_spacings_m{0.0, 0.06, 0.12};
    double light_speed_mps = kLightSpeed;

    std::size_t links() const noexcept { return n_tx * n_rx; }
    void validate() const;

    static ArrayGeometry uniform_linear(std::size_t n_tx, std::size_t n_rx, double spacing_m);
};

struct PathSpec {
    std::complex<double> attenuation{1.0, 0.0};
    double ref_delay_s = 0.0;
    double doppler_hz = 0.0;
    double aoa_rad = 0.0;
    double aod_rad = 0.0;

    friend bool operator==(const PathSpec&, const PathSpec&) = default;
};

struct InterfererSpec {
    int n_paths = 2;
    std::uint64_t seed = 0;
    double power = 0.05;  // amplitude scale of each interfering path
};

struct SceneSpec {
    Point room{5.0, 5.0};  // (width, depth)
    Point tx{0.5, 2.5};
    Point rx{4.5, 2.5};
    std::vector<Point> people;
    int n_static_scatterers = 0;
    std::uint64_t scatterer_seed = 0;
    std::vector<InterfererSpec> interferers;
    double person_reflectivity = 0.6;
    double doppler_max_hz = 5.0;

    std::size_t interferer_count() const noexcept { return interferers.size(); }
    void validate() const;
};

struct OffsetSpec {
    double boundary_offset_max = 0.01;   // eps_b ~ U(-max, max), once per scene
    double sampling_offset_max = 0.01;   // eps_s(n) ~ U(-max, max), per packet
    double carrier_offset_max = 0.5;     // eps_c(n) ~ U(-max, max), per packet
    double noise_std = 0.0;              // per-component std of eps_a(n, k)
    double gain_db_max = 0.0;            // receiver gain drawn per packet from U(-max, max) dB
    double packet_interval_s = 1e-3;
    double sampling_freq_hz = 1e3;

    void validate() const;
};

/// Realized offsets of one packet, in cycles as they enter the phase
/// exp(j 2 pi ((boundary + sampling) k + carrier)).
struct PacketOffsets {
    double boundary = 0.0;
    double sampling = 0.0;
    double carrier = 0.0;

    double slope() const noexcept { return boundary + sampling; }
};

enum class LabelKind : std::uint8_t { count = 0, sector = 1, coords = 2 };

struct Label {
    LabelKind kind = LabelKind::count;
    int cls = 0;                // count or sector class
    std::vector<Point> coords;  // person positions for the coords variant

    static Label count(int c) { return {LabelKind::count, c, {}}; }
    static Label sector(int c) { return {LabelKind::sector, c, {}}; }
    static Label positions(std::vector<Point> pts) { return {LabelKind::coords, 0, std::move(pts)}; }

    friend bool operator==(const Label&, const Label&) = default;
};

const char* label_kind_name(LabelKind kind);

struct LabelRequest {
    LabelKind kind = LabelKind::count;
    int n_classes = 6;           // C; ignored for coords
    double sector_cell_m = 1.2;  // sector edge length
};

struct CsiPacket {
    std::int64_t index = 0;
    ComplexMatrix csi;  // K x M
    Label label;

    friend bool operator==(const CsiPacket&, const CsiPacket&) = default;
};

/// Sector layout covering the room with square cells, row-major (y outer).
struct SectorGrid {
    Point room;
    double cell_m = 1.2;

    int n_cols() const;
    int n_rows() const;
    int n_sectors() const { return n_cols() * n_rows(); }
    int sector_of(Point p) const;
    Point center_of(int sector) const;
};

/// Delay of one path for packet n, subcarrier k and spatial link m
/// (all zero-based; m = m_r * n_tx + m_t).
double path_delay(const PathSpec& path, const ArrayGeometry& geom, const SubcarrierGrid& grid,
                  std::int64_t n, std::size_t k, std::size_t m, double packet_interval_s);

ComplexMatrix clean_channel(std::span<const PathSpec> paths, const ArrayGeometry& geom,
                            const SubcarrierGrid& grid, std::int64_t n, double packet_interval_s);

std::vector<PathSpec> interferer_paths(const InterfererSpec& interferer);

ComplexMatrix interference_channel(const SceneSpec& scene, const ArrayGeometry& geom,
                                   const SubcarrierGrid& grid, std::int64_t n,
                                   double packet_interval_s);

double draw_boundary_offset(const OffsetSpec& spec, Rng& rng);
PacketOffsets draw_packet_offsets(const OffsetSpec& spec, double boundary, Rng& rng);

ComplexMatrix apply_offsets(const ComplexMatrix& clean, const ComplexMatrix& interf,
                            const PacketOffsets& offsets, double noise_std, Rng& rng);

std::vector<PathSpec> scene_to_paths(const SceneSpec& scene, Rng& rng);

Label make_label(const SceneSpec& scene, const LabelRequest& request);

std::vector<CsiPacket> generate_dataset(std::span<const SceneSpec> scenes, const OffsetSpec& offsets,
                                        const ArrayGeometry& geom, const SubcarrierGrid& grid,
                                        std::size_t n_packets_per_scene, std::uint64_t seed,
                                        const LabelRequest& request);

}  // namespace metacsi::sim
