#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "cupid/common.hpp"

namespace cupid {

// Keeps big freed buffers in the heap across training iterations instead of
// returning pages to the kernel (glibc mmap/trim thresholds). Idempotent.
void tune_allocator_for_training();

// ----------------------------- hashing -----------------------------

// SHA-256 of a byte buffer, lowercase hex. Used for manifest content hashes.
std::string sha256_hex(const void* data, size_t len);
std::string sha256_file_hex(const std::string& path);

// ----------------------------- files -----------------------------

std::vector<uint8_t> read_file_bytes(const std::string& path);
std::string read_file_text(const std::string& path);
void write_file_bytes(const std::string& path, const void* data, size_t len);
void write_file_text(const std::string& path, const std::string& text);

// ----------------------------- little-endian encoding -----------------------------
// Explicit byte-wise encoding so on-disk formats are LE regardless of host.

class ByteWriter {
public:
    void u8(uint8_t v) { buf_.push_back(v); }
    void u16(uint16_t v);
    void u32(uint32_t v);
    void u64(uint64_t v);
    void i16(int16_t v) { u16(static_cast<uint16_t>(v)); }
    void i32(int32_t v) { u32(static_cast<uint32_t>(v)); }
    void f32(float v);
    void f64(double v);
    void bytes(const void* data, size_t len);
    void str_u16(const std::string& s);  // u16 length + raw bytes

    const std::vector<uint8_t>& data() const { return buf_; }
    std::vector<uint8_t> take() { return std::move(buf_); }

private:
    std::vector<uint8_t> buf_;
};

class ByteReader {
public:
    ByteReader(const uint8_t* data, size_t len) : p_(data), end_(data + len) {}
    explicit ByteReader(const std::vector<uint8_t>& v) : ByteReader(v.data(), v.size()) {}

    uint8_t u8();
    uint16_t u16();
    uint32_t u32();
    uint64_t u64();
    int16_t i16() { return static_cast<int16_t>(u16()); }
    int32_t i32() { return static_cast<int32_t>(u32()); }
    float f32();
    double f64();
    void bytes(void* out, size_t len);
    std::string str_u16();
    size_t remaining() const { return static_cast<size_t>(end_ - p_); }
    bool at_end() const { return p_ == end_; }

private:
    void need(size_t n) const;
    const uint8_t* p_;
    const uint8_t* end_;
};

// ----------------------------- text helpers -----------------------------

// Shortest decimal that round-trips the value (%.17g for double).
std::string format_real(double v);

std::vector<std::string> split(const std::string& s, char sep);
std::string trim(const std::string& s);

// ----------------------------- csv -----------------------------

class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::string& header);
    ~CsvWriter();
    void row(const std::string& line);
    void flush();

private:
    std::FILE* f_ = nullptr;
    std::string path_;
};

}  // namespace cupid
