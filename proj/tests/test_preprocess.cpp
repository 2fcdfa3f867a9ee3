#include <doctest.h>

#include <cmath>

#include "preprocess.hpp"

using namespace metacsi;
using namespace metacsi::prep;

namespace {

// Normal equations for y = c + s k with k = 1..K, solved by Cramer's rule.
std::pair<double, double> lstsq_line(const std::vector<double>& y) {
    double n = double(y.size()), sk = 0, skk = 0, sy = 0, sky = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double k = double(i + 1);
        sk += k;
        skk += k * k;
        sy += y[i];
        sky += k * y[i];
    }
    const double det = n * skk - sk * sk;
    return {(sy * skk - sk * sky) / det, (n * sky - sk * sy) / det};
}

sim::CsiPacket random_packet(Rng& rng, std::size_t K, std::size_t M) {
    sim::CsiPacket p;
    p.csi = ComplexMatrix(K, M);
    for (auto& v : p.csi.data()) v = std::polar(uniform(rng, 0.2, 2.0), uniform(rng, -0.3, 0.3));
    p.label = sim::Label::count(2);
    p.index = 9;
    return p;
}

double max_diff(const RealMatrix& a, const RealMatrix& b) {
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a.data()[i] - b.data()[i]));
    return d;
}

}  // namespace

TEST_CASE("split amplitude and phase") {
    ComplexMatrix h(3, 1);
    h(0, 0) = {1, 0};
    h(1, 0) = {0, -2};
    h(2, 0) = {0, 0};
    const auto [a, p] = split_amplitude_phase(h);
    CHECK(a(0, 0) == 1.0);
    CHECK(p(0, 0) == 0.0);
    CHECK(a(1, 0) == 2.0);
    CHECK(p(1, 0) == doctest::Approx(-kPi / 2));
    CHECK(a(2, 0) == 0.0);
    CHECK(p(2, 0) == 0.0);
}

TEST_CASE("unwrap") {
    const std::vector<double> smooth{0.1, 0.5, 1.2, 0.4};
    CHECK(unwrap_phases(smooth) == smooth);
    const std::vector<double> flat(5, 1.3);
    CHECK(unwrap_phases(flat) == flat);
    const auto u = unwrap_phases(std::vector<double>{0.0, 3.0, 6.0 - 2 * kPi});
    CHECK(u[0] == 0.0);
    CHECK(u[1] == 3.0);
    CHECK(u[2] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("linear fit removal") {
    std::vector<double> line;
    for (int k = 1; k <= 10; ++k) line.push_back(0.3 - 0.07 * k);
    auto r = fit_and_remove_linear(line);
    CHECK(r.intercept == doctest::Approx(0.3));
    CHECK(r.slope == doctest::Approx(-0.07));
    for (double v : r.residual) CHECK(std::abs(v) < 1e-14);

    r = fit_and_remove_linear(std::vector<double>{0.5, 1.1, 1.7, 2.3});
    CHECK(r.intercept == doctest::Approx(-0.1));
    CHECK(r.slope == doctest::Approx(0.6));
    for (double v : r.residual) CHECK(std::abs(v) < 1e-14);

    Rng rng(4);
    std::vector<double> y(52);
    for (auto& v : y) v = gaussian(rng);
    r = fit_and_remove_linear(y);
    const auto [c, s] = lstsq_line(y);
    CHECK(std::abs(r.intercept - c) < 1e-10);
    CHECK(std::abs(r.slope - s) < 1e-10);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(r.residual[i] - (y[i] - c - s * double(i + 1))) < 1e-10);
}

TEST_CASE("reference subtraction") {
    RealMatrix m(3, 1);
    m(0, 0) = 0.2;
    m(1, 0) = 0.5;
    m(2, 0) = 0.9;
    const auto r = subtract_reference(m, 1);
    CHECK(r(0, 0) == 0.0);
    CHECK(r(1, 0) == doctest::Approx(0.3));
    CHECK(r(2, 0) == doctest::Approx(0.7));

    RealMatrix zero_row(3, 2, 1.5);
    zero_row(0, 0) = zero_row(0, 1) = 0.0;
    CHECK(subtract_reference(zero_row, 1) == zero_row);
    const auto flat = subtract_reference(RealMatrix(4, 3, 2.5), 2);
    for (double v : flat.data()) CHECK(v == 0.0);
    CHECK_THROWS_AS(subtract_reference(m, 0), Error);
    CHECK_THROWS_AS(subtract_reference(m, 4), Error);
}

TEST_CASE("amplitude normalization") {
    const auto ones = normalize_amplitudes(RealMatrix(5, 2, 3.7));
    for (double v : ones.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
    RealMatrix col(4, 1);
    for (int k = 0; k < 4; ++k) col(k, 0) = k + 1;
    const auto n = normalize_amplitudes(col);
    CHECK(n(0, 0) == doctest::Approx(0.4));
    CHECK(n(1, 0) == doctest::Approx(0.8));
    CHECK(n(2, 0) == doctest::Approx(1.2));
    CHECK(n(3, 0) == doctest::Approx(1.6));
    CHECK_THROWS_AS(normalize_amplitudes(RealMatrix(3, 1, 0.0)), Error);
}

TEST_CASE("preprocess packet") {
    sim::CsiPacket linear;
    linear.csi = ComplexMatrix(8, 2);
    for (std::size_t k = 0; k < 8; ++k)
        for (std::size_t m = 0; m < 2; ++m) linear.csi(k, m) = std::polar(1.0 + 0.1 * double(k), 0.2 * double(k + 1) * double(m + 1) - 1.0);
    const auto s = preprocess_packet(linear);
    for (std::size_t i = 0; i < s.amplitude.size(); ++i) {
        CHECK(std::abs(s.real_part.data()[i] - s.amplitude.data()[i]) < 1e-12);
        CHECK(std::abs(s.imag_part.data()[i]) < 1e-12);
    }

    Rng rng(12);
    const auto pkt = random_packet(rng, 52, 9);
    const auto base = preprocess_packet(pkt);
    CHECK(base.index == 9);
    CHECK(base.label == pkt.label);

    sim::CsiPacket shifted = pkt;
    const double slope = uniform(rng, -0.02, 0.02), carrier = uniform(rng, -kPi, kPi);
    for (std::size_t k = 0; k < 52; ++k)
        for (std::size_t m = 0; m < 9; ++m) shifted.csi(k, m) *= std::polar(1.0, slope * double(k + 1) + carrier);
    const auto out = preprocess_packet(shifted);
    CHECK(max_diff(out.amplitude, base.amplitude) < 1e-9);
    CHECK(max_diff(out.real_part, base.real_part) < 1e-9);
    CHECK(max_diff(out.imag_part, base.imag_part) < 1e-9);

    sim::CsiPacket scaled = pkt;
    for (auto& v : scaled.csi.data()) v *= 7.0;
    const auto sc = preprocess_packet(scaled);
    CHECK(max_diff(sc.amplitude, base.amplitude) < 1e-12);
    CHECK(max_diff(sc.real_part, base.real_part) < 1e-12);
    CHECK(max_diff(sc.imag_part, base.imag_part) < 1e-12);

    sim::CsiPacket dead = pkt;
    for (std::size_t k = 0; k < 52; ++k) dead.csi(k, 3) = 0.0;
    CHECK_THROWS_AS(preprocess_packet(dead), Error);
    std::vector<sim::CsiPacket> batch{pkt, dead, shifted};
    const auto res = preprocess_all(batch);
    CHECK(res.samples.size() == 2);
    REQUIRE(res.rejected.size() == 1);
    CHECK(res.rejected[0].index == 9);
}

TEST_CASE("raw features keep offsets") {
    Rng rng(2);
    const auto pkt = random_packet(rng, 8, 2);
    const auto raw = raw_sample(pkt);
    for (std::size_t i = 0; i < pkt.csi.size(); ++i) {
        CHECK(raw.amplitude.data()[i] == std::abs(pkt.csi.data()[i]));
        CHECK(raw.real_part.data()[i] == pkt.csi.data()[i].real());
        CHECK(raw.imag_part.data()[i] == pkt.csi.data()[i].imag());
    }
}
