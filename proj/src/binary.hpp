// SPDX-License-Identifier: Apache-2.0
//
// Little-endian byte buffers for the binary file sections.
#pragma once

#include "r3/common.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

namespace r3::bin {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class Writer {
  public:
    void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
    void magic(std::string_view m) { bytes(m.data(), m.size()); }
    void u32(std::uint32_t v) { bytes(&v, sizeof v); }
    void u64(std::uint64_t v) { bytes(&v, sizeof v); }
    void f32(float v) { bytes(&v, sizeof v); }
    void f64(double v) { bytes(&v, sizeof v); }
    template <typename Derived> void f32_block(const Eigen::DenseBase<Derived>& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) f32(float(m(r, c)));
    }
    template <typename Derived> void f64_block(const Eigen::DenseBase<Derived>& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) f64(double(m(r, c)));
    }
    void string(const std::string& s) {
        u32(std::uint32_t(s.size()));
        bytes(s.data(), s.size());
    }
    const std::string& data() const { return buf_; }
    std::size_t size() const { return buf_.size(); }

  private:
    std::string buf_;
};

class Reader {
  public:
    Reader(std::string_view data, std::string context) : data_(data), ctx_(std::move(context)) {}

    void bytes(void* p, std::size_t n) {
        if (n > data_.size() - pos_) throw FormatError(ctx_ + ": truncated data");
        std::memcpy(p, data_.data() + pos_, n);
        pos_ += n;
    }
    std::string magic(std::size_t n = 4) {
        std::string m(n, '\0');
        bytes(m.data(), n);
        return m;
    }
    void expect(std::string_view m) {
        const std::string got = magic(m.size());
        if (got != m) throw FormatError(ctx_ + ": expected section '" + std::string(m) + "', found '" + got + "'");
    }
    std::uint32_t u32() { std::uint32_t v; bytes(&v, sizeof v); return v; }
    std::uint64_t u64() { std::uint64_t v; bytes(&v, sizeof v); return v; }
    float f32() { float v; bytes(&v, sizeof v); return v; }
    double f64() { double v; bytes(&v, sizeof v); return v; }
    template <typename Derived> void f32_block(Eigen::DenseBase<Derived>& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = typename Derived::Scalar(f32());
    }
    template <typename Derived> void f64_block(Eigen::DenseBase<Derived>& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = typename Derived::Scalar(f64());
    }
    std::string string() {
        const auto n = u32();
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
    /// Guards element counts read from the file before allocating.
    std::uint32_t count(std::size_t element_size) {
        const auto n = u32();
        if (element_size > 0 && std::size_t(n) > remaining() / element_size)
            throw FormatError(ctx_ + ": element count exceeds the data size");
        return n;
    }
    std::size_t remaining() const { return data_.size() - pos_; }
    bool done() const { return pos_ == data_.size(); }
    const std::string& context() const { return ctx_; }

  private:
    std::string_view data_;
    std::size_t pos_ = 0;
    std::string ctx_;
};

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out.write(data.data(), std::streamsize(data.size()));
    if (!out) throw FormatError("write failed for " + path.string());
}

} // namespace r3::bin
