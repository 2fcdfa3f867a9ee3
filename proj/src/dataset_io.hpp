#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "csi_sim.hpp"
#include "preprocess.hpp"

namespace metacsi::io {

enum class PayloadKind : std::uint8_t { raw = 0, preprocessed = 1 };

const char* payload_name(PayloadKind kind);

/// Either raw packets or preprocessed samples, all with the same K x M shape
/// and label variant.
struct Dataset {
    PayloadKind kind = PayloadKind::raw;
    sim::LabelKind label_kind = sim::LabelKind::count;
    std::size_t K = 0;
    std::size_t M = 0;
    std::size_t n_people = 0;  // coordinate labels only
    std::vector<sim::CsiPacket> packets;
    std::vector<prep::PreprocessedSample> samples;

    std::size_t size() const noexcept { return kind == PayloadKind::raw ? packets.size() : samples.size(); }

    static Dataset from_packets(std::vector<sim::CsiPacket> packets);
    static Dataset from_samples(std::vector<prep::PreprocessedSample> samples);

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Binary container: "CSID", u16 version, u8 schema tag (payload << 4 | label
/// kind), u32 K, u32 M, u32 N_L, u64 record count; then per record an i64
/// index, the label payload (i32 class, or N_L (x, y) f64 pairs) and the
/// matrices as little-endian f64 in row-major order (k outer, m inner): raw
/// records interleave (re, im), preprocessed records store amplitude, real
/// and imaginary matrices one after another.
void write_binary(const std::filesystem::path& path, const Dataset& ds);
Dataset read_binary(const std::filesystem::path& path, std::optional<PayloadKind> expected = std::nullopt);

/// JSON-lines interchange form: a header object line, then one object per record.
void write_jsonl(const std::filesystem::path& path, const Dataset& ds);
Dataset read_jsonl(const std::filesystem::path& path, std::optional<PayloadKind> expected = std::nullopt);

/// Detects the format from the leading bytes.
Dataset read_dataset(const std::filesystem::path& path, std::optional<PayloadKind> expected = std::nullopt);
/// Chooses the format from the extension: ".jsonl" writes text, anything else binary.
void write_dataset(const std::filesystem::path& path, const Dataset& ds);

}  // namespace metacsi::io
