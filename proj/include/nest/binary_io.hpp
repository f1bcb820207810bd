#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nest {

/// Error raised when reading one of the binary file formats.
class FormatError : public std::runtime_error {
public:
    enum class Kind { bad_magic, truncated, checksum_mismatch, invalid };

    FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

/// File could not be opened, read or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Little-endian byte sink.
class ByteWriter {
public:
    void raw(std::string_view bytes);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f64(double v);
    void f64s(std::span<const double> vs);
    void str(std::string_view s);  // u32 length prefix

    /// Appends the FNV-1a checksum of everything written so far.
    void seal();
    const std::vector<std::uint8_t>& bytes() const { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

/// Little-endian byte source over a sealed buffer. The constructor checks the
/// magic; once the header has been read, verify() checks the expected total
/// length and then the trailing checksum, so each failure mode surfaces as
/// its own FormatError kind.
class ByteReader {
public:
    ByteReader(std::vector<std::uint8_t> bytes, std::string_view magic, std::string_view what);

    std::uint32_t u32();
    std::uint64_t u64();
    double f64();
    void f64s(std::span<double> out);
    std::string str();

    /// `total_size` includes magic, payload and the 8-byte checksum.
    void verify(std::size_t total_size);

    std::size_t size() const { return bytes_.size(); }
    std::size_t remaining() const { return end_ - pos_; }
    /// Throws unless the payload was consumed exactly.
    void finish() const;

private:
    void need(std::size_t n) const;

    std::vector<std::uint8_t> bytes_;
    std::size_t pos_ = 0;
    std::size_t end_ = 0;
    std::string what_;
};

}  // namespace nest
