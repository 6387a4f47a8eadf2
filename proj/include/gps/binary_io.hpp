#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gps {

struct Parameter;

// Little-endian byte sink.
class ByteWriter {
  public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f64(double v);
    void bytes(std::string_view s);
    // u16 length prefix followed by UTF-8 bytes.
    void name(std::string_view s);

    const std::vector<std::uint8_t>& data() const noexcept { return buf_; }
    std::vector<std::uint8_t> take() noexcept { return std::move(buf_); }

  private:
    std::vector<std::uint8_t> buf_;
};

// Little-endian byte source; every read past the end is a FormatError.
class ByteReader {
  public:
    ByteReader(std::span<const std::uint8_t> data, std::string context)
        : data_(data), context_(std::move(context)) {}

    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    std::uint64_t u64();
    double f64();
    std::string bytes(std::size_t n);
    std::string name();
    std::span<const std::uint8_t> raw(std::size_t n);

    void expect_magic(std::string_view magic);
    bool at_end() const noexcept { return pos_ == data_.size(); }
    std::size_t position() const noexcept { return pos_; }
    [[noreturn]] void fail(const std::string& what) const;

  private:
    void need(std::size_t n) const;

    std::span<const std::uint8_t> data_;
    std::string context_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// Tensor record shared by checkpoint, delta head block: name, flags, rank, dims, f64 data.
void write_tensor_record(ByteWriter& out, const Parameter& param);
Parameter read_tensor_record(ByteReader& in);

}  // namespace gps
