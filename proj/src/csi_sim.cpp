#include "csi_sim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace metacsi::sim {

namespace {

bool finite(std::complex<double> z) { return std::isfinite(z.real()) && std::isfinite(z.imag()); }

double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

bool inside(Point p, Point room) {
    return p.x >= 0.0 && p.y >= 0.0 && p.x <= room.x && p.y <= room.y;
}

// Angle off broadside for an array lying along the x axis.
double broadside_angle(Point from, Point to) {
    const double d = distance(from, to);
    return std::asin(std::clamp((to.x - from.x) / d, -1.0, 1.0));
}

PathSpec bounce_path(const SceneSpec& scene, Point reflector, std::complex<double> reflectivity,
                     double doppler_hz, double light_speed) {
    const double d_tx = distance(scene.tx, reflector);
    const double d_rx = distance(reflector, scene.rx);
    if (d_tx < 1e-9 || d_rx < 1e-9) {
        fail(ErrorKind::invalid_argument, "reflector coincides with the transmitter or receiver");
    }
    PathSpec p;
    p.attenuation = reflectivity / (d_tx + d_rx);
    p.ref_delay_s = (d_tx + d_rx) / light_speed;
    p.doppler_hz = doppler_hz;
    p.aoa_rad = broadside_angle(scene.rx, reflector);
    p.aod_rad = broadside_angle(scene.tx, reflector);
    return p;
}

}  // namespace

void SubcarrierGrid::validate() const {
    if (offsets_hz.size() < 2) fail(ErrorKind::invalid_argument, "subcarrier grid needs K >= 2");
    if (!std::isfinite(carrier_freq_hz) || carrier_freq_hz <= 0.0) {
        fail(ErrorKind::invalid_argument, "carrier frequency must be finite and positive");
    }
    for (std::size_t k = 0; k < offsets_hz.size(); ++k) {
        if (!std::isfinite(offsets_hz[k]) || carrier_freq_hz + offsets_hz[k] <= 0.0) {
            fail(ErrorKind::invalid_argument, "subcarrier frequency must be finite and positive");
        }
        if (k > 0 && offsets_hz[k] <= offsets_hz[k - 1]) {
            fail(ErrorKind::invalid_argument, "subcarrier offsets must be strictly increasing");
        }
    }
}

SubcarrierGrid SubcarrierGrid::wifi_20mhz(double carrier_freq_hz, double spacing_hz) {
    SubcarrierGrid g;
    g.carrier_freq_hz = carrier_freq_hz;
    g.offsets_hz.reserve(52);
    for (int i = -26; i <= 26; ++i) {
        if (i != 0) g.offsets_hz.push_back(i * spacing_hz);
    }
    return g;
}

SubcarrierGrid SubcarrierGrid::uniform(double carrier_freq_hz, std::size_t n, double spacing_hz) {
    SubcarrierGrid g;
    g.carrier_freq_hz = carrier_freq_hz;
    g.offsets_hz.resize(n);
    const double mid = 0.5 * static_cast<double>(n - 1);
    for (std::size_t k = 0; k < n; ++k) g.offsets_hz[k] = (static_cast<double>(k) - mid) * spacing_hz;
    return g;
}

std::vector<double> subcarrier_frequencies(const SubcarrierGrid& grid) {
    std::vector<double> f(grid.size());
    for (std::size_t k = 0; k < f.size(); ++k) f[k] = grid.carrier_freq_hz + grid.offsets_hz[k];
    return f;
}

void ArrayGeometry::validate() const {
    if (n_tx == 0 || n_rx == 0) fail(ErrorKind::invalid_argument, "array needs at least one antenna");
    if (rx_spacings_m.size() != n_rx || tx_spacings_m.size() != n_tx) {
        fail(ErrorKind::invalid_argument, "spacing vector length must match antenna count");
    }
    if (rx_spacings_m.front() != 0.0 || tx_spacings_m.front() != 0.0) {
        fail(ErrorKind::invalid_argument, "first antenna is the reference and must have spacing 0");
    }
    if (!(light_speed_mps > 0.0)) fail(ErrorKind::invalid_argument, "propagation speed must be positive");
}

ArrayGeometry ArrayGeometry::uniform_linear(std::size_t n_tx, std::size_t n_rx, double spacing_m) {
    ArrayGeometry g;
    g.n_tx = n_tx;
    g.n_rx = n_rx;
    g.tx_spacings_m.resize(n_tx);
    g.rx_spacings_m.resize(n_rx);
    for (std::size_t i = 0; i < n_tx; ++i) g.tx_spacings_m[i] = spacing_m * static_cast<double>(i);
    for (std::size_t i = 0; i < n_rx; ++i) g.rx_spacings_m[i] = spacing_m * static_cast<double>(i);
    return g;
}

void SceneSpec::validate() const {
    if (!(room.x > 0.0 && room.y > 0.0)) fail(ErrorKind::invalid_argument, "room dimensions must be positive");
    if (!inside(tx, room) || !inside(rx, room)) {
        fail(ErrorKind::invalid_argument, "transceiver position outside the room");
    }
    for (const Point& p : people) {
        if (!inside(p, room)) fail(ErrorKind::invalid_argument, "person position outside the room");
    }
    if (n_static_scatterers < 0) fail(ErrorKind::invalid_argument, "negative scatterer count");
    for (const auto& i : interferers) {
        if (i.n_paths < 0) fail(ErrorKind::invalid_argument, "negative interferer path count");
    }
}

void OffsetSpec::validate() const {
    if (!(noise_std >= 0.0)) fail(ErrorKind::invalid_argument, "noise_std must be >= 0");
    if (!(gain_db_max >= 0.0)) fail(ErrorKind::invalid_argument, "gain_db_max must be >= 0");
    if (!(packet_interval_s > 0.0)) fail(ErrorKind::invalid_argument, "packet interval must be > 0");
    if (boundary_offset_max < 0.0 || sampling_offset_max < 0.0 || carrier_offset_max < 0.0) {
        fail(ErrorKind::invalid_argument, "offset ranges must be >= 0");
    }
}

const char* label_kind_name(LabelKind kind) {
    switch (kind) {
        case LabelKind::count: return "count";
        case LabelKind::sector: return "sector";
        case LabelKind::coords: return "coords";
    }
    return "unknown";
}

int SectorGrid::n_cols() const { return std::max(1, static_cast<int>(std::ceil(room.x / cell_m - 1e-9))); }
int SectorGrid::n_rows() const { return std::max(1, static_cast<int>(std::ceil(room.y / cell_m - 1e-9))); }

int SectorGrid::sector_of(Point p) const {
    const int col = std::clamp(static_cast<int>(std::floor(p.x / cell_m)), 0, n_cols() - 1);
    const int row = std::clamp(static_cast<int>(std::floor(p.y / cell_m)), 0, n_rows() - 1);
    return row * n_cols() + col;
}

Point SectorGrid::center_of(int sector) const {
    const int col = sector % n_cols();
    const int row = sector / n_cols();
    return {std::min(room.x, (col + 0.5) * cell_m), std::min(room.y, (row + 0.5) * cell_m)};
}

double path_delay(const PathSpec& path, const ArrayGeometry& geom, const SubcarrierGrid& grid,
                  std::int64_t n, std::size_t k, std::size_t m, double packet_interval_s) {
    if (m >= geom.links()) fail(ErrorKind::invalid_argument, "spatial link index out of range");
    if (k >= grid.size()) fail(ErrorKind::invalid_argument, "subcarrier index out of range");
    const std::size_t m_r = m / geom.n_tx;
    const std::size_t m_t = m % geom.n_tx;
    const double f_k = grid.carrier_freq_hz + grid.offsets_hz[k];
    const double dt = static_cast<double>(n) * packet_interval_s;
    return path.ref_delay_s + (path.doppler_hz / f_k) * dt +
           (geom.rx_spacings_m[m_r] * std::sin(path.aoa_rad) +
            geom.tx_spacings_m[m_t] * std::sin(path.aod_rad)) /
               geom.light_speed_mps;
}

ComplexMatrix clean_channel(std::span<const PathSpec> paths, const ArrayGeometry& geom,
                            const SubcarrierGrid& grid, std::int64_t n, double packet_interval_s) {
    if (paths.empty()) fail(ErrorKind::invalid_argument, "clean_channel needs at least one path");
    const std::size_t K = grid.size();
    const std::size_t M = geom.links();
    const std::vector<double> freqs = subcarrier_frequencies(grid);
    const double dt = static_cast<double>(n) * packet_interval_s;

    ComplexMatrix h(K, M);
    std::vector<double> spatial(M);
    for (const PathSpec& p : paths) {
        if (!finite(p.attenuation) || !std::isfinite(p.ref_delay_s) || !std::isfinite(p.doppler_hz) ||
            !std::isfinite(p.aoa_rad) || !std::isfinite(p.aod_rad)) {
            fail(ErrorKind::numeric, "non-finite path parameter");
        }
        const double sin_aoa = std::sin(p.aoa_rad);
        const double sin_aod = std::sin(p.aod_rad);
        for (std::size_t m = 0; m < M; ++m) {
            spatial[m] = (geom.rx_spacings_m[m / geom.n_tx] * sin_aoa +
                          geom.tx_spacings_m[m % geom.n_tx] * sin_aod) /
                         geom.light_speed_mps;
        }
        for (std::size_t k = 0; k < K; ++k) {
            const double f_k = freqs[k];
            const double base = p.ref_delay_s + (p.doppler_hz / f_k) * dt;
            for (std::size_t m = 0; m < M; ++m) {
                h(k, m) += p.attenuation * std::polar(1.0, -kTwoPi * f_k * (base + spatial[m]));
            }
        }
    }
    return h;
}

std::vector<PathSpec> interferer_paths(const InterfererSpec& interferer) {
    Rng rng = substream(interferer.seed, Stream::interferer);
    std::vector<PathSpec> paths(static_cast<std::size_t>(interferer.n_paths));
    for (PathSpec& p : paths) {
        const double re = gaussian(rng);
        const double im = gaussian(rng);
        p.attenuation = interferer.power * std::complex<double>(re, im) / std::sqrt(2.0);
        p.ref_delay_s = uniform(rng, 20e-9, 200e-9);
        p.doppler_hz = 0.0;
        p.aoa_rad = uniform(rng, -kPi / 2, kPi / 2);
        p.aod_rad = uniform(rng, -kPi / 2, kPi / 2);
    }
    return paths;
}

ComplexMatrix interference_channel(const SceneSpec& scene, const ArrayGeometry& geom,
                                   const SubcarrierGrid& grid, std::int64_t n,
                                   double packet_interval_s) {
    ComplexMatrix total(grid.size(), geom.links());
    for (const InterfererSpec& j : scene.interferers) {
        const std::vector<PathSpec> paths = interferer_paths(j);
        if (paths.empty()) continue;
        const ComplexMatrix h = clean_channel(paths, geom, grid, n, packet_interval_s);
        for (std::size_t i = 0; i < h.size(); ++i) total.data()[i] += h.data()[i];
    }
    return total;
}

double draw_boundary_offset(const OffsetSpec& spec, Rng& rng) {
    return uniform(rng, -spec.boundary_offset_max, spec.boundary_offset_max);
}

PacketOffsets draw_packet_offsets(const OffsetSpec& spec, double boundary, Rng& rng) {
    PacketOffsets o;
    o.boundary = boundary;
    o.sampling = uniform(rng, -spec.sampling_offset_max, spec.sampling_offset_max);
    o.carrier = uniform(rng, -spec.carrier_offset_max, spec.carrier_offset_max);
    return o;
}

ComplexMatrix apply_offsets(const ComplexMatrix& clean, const ComplexMatrix& interf,
                            const PacketOffsets& offsets, double noise_std, Rng& rng) {
    if (!clean.same_shape(interf)) fail(ErrorKind::invalid_argument, "channel shapes differ");
    ComplexMatrix out(clean.rows(), clean.cols());
    for (std::size_t k = 0; k < clean.rows(); ++k) {
        // Subcarrier numbering in the phase exponent starts at 1.
        const double kk = static_cast<double>(k + 1);
        const std::complex<double> rot = std::polar(1.0, kTwoPi * (offsets.slope() * kk + offsets.carrier));
        std::complex<double> noise{};
        if (noise_std > 0.0) {
            const double re = noise_std * gaussian(rng);
            const double im = noise_std * gaussian(rng);
            noise = {re, im};
        }
        for (std::size_t m = 0; m < clean.cols(); ++m) {
            out(k, m) = rot * (clean(k, m) + interf(k, m)) + noise;
        }
    }
    return out;
}

std::vector<PathSpec> scene_to_paths(const SceneSpec& scene, Rng& rng) {
    scene.validate();
    std::vector<PathSpec> paths;
    paths.reserve(1 + scene.people.size() + static_cast<std::size_t>(scene.n_static_scatterers));

    const double d_los = distance(scene.tx, scene.rx);
    if (d_los < 1e-9) fail(ErrorKind::invalid_argument, "transmitter and receiver coincide");
    PathSpec los;
    los.attenuation = 1.0 / d_los;
    los.ref_delay_s = d_los / kLightSpeed;
    los.aoa_rad = broadside_angle(scene.rx, scene.tx);
    los.aod_rad = broadside_angle(scene.tx, scene.rx);
    paths.push_back(los);

    for (const Point& person : scene.people) {
        const double doppler = uniform(rng, -scene.doppler_max_hz, scene.doppler_max_hz);
        paths.push_back(bounce_path(scene, person, scene.person_reflectivity, doppler, kLightSpeed));
    }

    Rng env = substream(scene.scatterer_seed, Stream::environment);
    for (int s = 0; s < scene.n_static_scatterers; ++s) {
        Point at;
        do {
            at = {uniform(env, 0.0, scene.room.x), uniform(env, 0.0, scene.room.y)};
        } while (distance(at, scene.tx) < 1e-3 || distance(at, scene.rx) < 1e-3);
        const double mag = uniform(env, 0.2, 0.8);
        const double phase = uniform(env, 0.0, kTwoPi);
        paths.push_back(bounce_path(scene, at, std::polar(mag, phase), 0.0, kLightSpeed));
    }
    return paths;
}

Label make_label(const SceneSpec& scene, const LabelRequest& request) {
    switch (request.kind) {
        case LabelKind::count: {
            const int c = static_cast<int>(scene.people.size());
            if (c >= request.n_classes) {
                fail(ErrorKind::invalid_argument, "people count " + std::to_string(c) +
                                                      " outside class range C=" +
                                                      std::to_string(request.n_classes));
            }
            return Label::count(c);
        }
        case LabelKind::sector: {
            if (scene.people.size() != 1) {
                fail(ErrorKind::invalid_argument, "sector labels need exactly one person in the scene");
            }
            const SectorGrid grid{scene.room, request.sector_cell_m};
            const int c = grid.sector_of(scene.people.front());
            if (request.n_classes > 0 && c >= request.n_classes) {
                fail(ErrorKind::invalid_argument, "sector index outside class range");
            }
            return Label::sector(c);
        }
        case LabelKind::coords:
            return Label::positions(scene.people);
    }
    fail(ErrorKind::invalid_argument, "unknown label kind");
}

std::vector<CsiPacket> generate_dataset(std::span<const SceneSpec> scenes, const OffsetSpec& offsets,
                                        const ArrayGeometry& geom, const SubcarrierGrid& grid,
                                        std::size_t n_packets_per_scene, std::uint64_t seed,
                                        const LabelRequest& request) {
    if (n_packets_per_scene < 1) fail(ErrorKind::invalid_argument, "need at least one packet per scene");
    offsets.validate();
    geom.validate();
    grid.validate();

    std::vector<CsiPacket> out;
    out.reserve(scenes.size() * n_packets_per_scene);
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        const SceneSpec& scene = scenes[s];
        const Label label = make_label(scene, request);
        Rng scene_rng = substream(seed, Stream::scene, s);
        const std::vector<PathSpec> paths = scene_to_paths(scene, scene_rng);
        Rng boundary_rng = substream(seed, Stream::boundary_offset, s);
        const double boundary = draw_boundary_offset(offsets, boundary_rng);

        for (std::size_t i = 0; i < n_packets_per_scene; ++i) {
            const auto n = static_cast<std::int64_t>(s * n_packets_per_scene + i);
            Rng rng = substream(seed, Stream::packet, static_cast<std::uint64_t>(n));
            const PacketOffsets po = draw_packet_offsets(offsets, boundary, rng);
            const ComplexMatrix h = clean_channel(paths, geom, grid, n, offsets.packet_interval_s);
            const ComplexMatrix hi = interference_channel(scene, geom, grid, n, offsets.packet_interval_s);
            ComplexMatrix csi = apply_offsets(h, hi, po, offsets.noise_std, rng);
            if (offsets.gain_db_max > 0.0) {
                const double g = std::pow(10.0, uniform(rng, -offsets.gain_db_max, offsets.gain_db_max) / 20.0);
                for (auto& v : csi.data()) v *= g;
            }
            out.push_back({n, std::move(csi), label});
        }
    }
    return out;
}

}  // namespace metacsi::sim
