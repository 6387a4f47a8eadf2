#include "gps/binary_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "gps/error.hpp"
#include "gps/model.hpp"

namespace gps {

void ByteWriter::u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

void ByteWriter::name(std::string_view s) {
    if (s.size() > 0xffff) {
        throw FormatError("name longer than 65535 bytes");
    }
    u16(static_cast<std::uint16_t>(s.size()));
    bytes(s);
}

void ByteReader::fail(const std::string& what) const {
    throw FormatError(context_ + ": " + what + " at byte " + std::to_string(pos_));
}

void ByteReader::need(std::size_t n) const {
    if (data_.size() - pos_ < n) {
        fail("unexpected end of data");
    }
}

std::uint8_t ByteReader::u8() {
    need(1);
    return data_[pos_++];
}

std::uint16_t ByteReader::u16() {
    need(2);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(data_[pos_++]) << (8 * i);
    return v;
}

std::uint32_t ByteReader::u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
    return v;
}

std::uint64_t ByteReader::u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
    return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
}

std::string ByteReader::name() { return bytes(u16()); }

std::span<const std::uint8_t> ByteReader::raw(std::size_t n) {
    need(n);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
}

void ByteReader::expect_magic(std::string_view magic) {
    if (data_.size() - pos_ < magic.size() || bytes(magic.size()) != magic) {
        throw FormatError(context_ + ": bad magic, expected \"" + std::string(magic) + "\"");
    }
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot open '" + path.string() + "' for reading");
    }
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw InputError("cannot open '" + path.string() + "' for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw InputError("write to '" + path.string() + "' failed");
    }
}

void write_tensor_record(ByteWriter& out, const Parameter& param) {
    out.name(param.name);
    out.u8(param.flags);
    const Shape& s = param.value.shape();
    if (s.size() > 0xff) {
        throw FormatError("tensor '" + param.name + "' has rank above 255");
    }
    out.u8(static_cast<std::uint8_t>(s.size()));
    for (std::size_t d : s) out.u64(d);
    for (double v : param.value.data()) out.f64(v);
}

Parameter read_tensor_record(ByteReader& in) {
    Parameter p;
    p.name = in.name();
    p.flags = in.u8();
    if (p.flags & ~std::uint8_t{kHeadFlag | kNonSelectableFlag}) {
        in.fail("tensor '" + p.name + "' has unknown flag bits");
    }
    const std::size_t rank = in.u8();
    Shape shape(rank);
    for (auto& d : shape) {
        const std::uint64_t v = in.u64();
        if (v > (std::uint64_t{1} << 40)) in.fail("tensor '" + p.name + "' has implausible dimension");
        d = static_cast<std::size_t>(v);
    }
    const std::size_t n = shape_numel(shape);
    std::vector<double> data(n);
    auto bytes = in.raw(n * 8);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
        data[i] = std::bit_cast<double>(bits);
    }
    p.value = Tensor(std::move(shape), std::move(data));
    return p;
}

}  // namespace gps
