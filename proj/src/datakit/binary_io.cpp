#include "nest/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace nest {

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void ByteWriter::raw(std::string_view bytes) { bytes_.insert(bytes_.end(), bytes.begin(), bytes.end()); }

void ByteWriter::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::f64s(std::span<const double> vs) {
    bytes_.reserve(bytes_.size() + 8 * vs.size());
    for (double v : vs) f64(v);
}

void ByteWriter::str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
}

void ByteWriter::seal() { u64(fnv1a64(bytes_)); }

ByteReader::ByteReader(std::vector<std::uint8_t> bytes, std::string_view magic, std::string_view what)
    : bytes_(std::move(bytes)), what_(what) {
    if (bytes_.size() < magic.size() || std::memcmp(bytes_.data(), magic.data(), magic.size()) != 0) {
        throw FormatError(FormatError::Kind::bad_magic, what_ + ": bad magic");
    }
    pos_ = magic.size();
    end_ = bytes_.size();
}

void ByteReader::verify(std::size_t total_size) {
    if (bytes_.size() < total_size) throw FormatError(FormatError::Kind::truncated, what_ + ": truncated file");
    if (bytes_.size() > total_size) throw FormatError(FormatError::Kind::invalid, what_ + ": unexpected trailing bytes");
    end_ = total_size - 8;
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(bytes_[end_ + i]) << (8 * i);
    if (stored != fnv1a64(std::span(bytes_.data(), end_))) {
        throw FormatError(FormatError::Kind::checksum_mismatch, what_ + ": checksum mismatch");
    }
}

void ByteReader::need(std::size_t n) const {
    if (end_ - pos_ < n) throw FormatError(FormatError::Kind::truncated, what_ + ": truncated file");
}

std::uint32_t ByteReader::u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
}

std::uint64_t ByteReader::u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

void ByteReader::f64s(std::span<double> out) {
    need(8 * out.size());
    for (double& v : out) v = f64();
}

std::string ByteReader::str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
}

void ByteReader::finish() const {
    if (pos_ != end_) throw FormatError(FormatError::Kind::invalid, what_ + ": trailing bytes before checksum");
}

}  // namespace nest
