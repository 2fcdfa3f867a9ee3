#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "common.hpp"

namespace metacsi::binio {

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v), 4); }
    void i64(std::int64_t v) { put(static_cast<std::uint64_t>(v), 8); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
    void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

    const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }

    void write_file(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::data, "cannot open " + path.string() + " for writing");
        out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
        if (!out) fail(ErrorKind::data, "write failed for " + path.string());
    }

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    std::uint8_t u8(std::string_view what) { return static_cast<std::uint8_t>(get(1, what)); }
    std::uint16_t u16(std::string_view what) { return static_cast<std::uint16_t>(get(2, what)); }
    std::uint32_t u32(std::string_view what) { return static_cast<std::uint32_t>(get(4, what)); }
    std::uint64_t u64(std::string_view what) { return get(8, what); }
    std::int32_t i32(std::string_view what) { return static_cast<std::int32_t>(u32(what)); }
    std::int64_t i64(std::string_view what) { return static_cast<std::int64_t>(get(8, what)); }
    double f64(std::string_view what) { return std::bit_cast<double>(get(8, what)); }

    std::string bytes(std::size_t n, std::string_view what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::size_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }

private:
    void need(std::size_t n, std::string_view what) const {
        if (data_.size() - pos_ < n) {
            fail(ErrorKind::data, "truncated file at byte offset " + std::to_string(pos_) + " while reading " +
                                      std::string(what));
        }
    }

    std::uint64_t get(int n, std::string_view what) {
        need(static_cast<std::size_t>(n), what);
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::data, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace metacsi::binio
