#ifndef PLACEREC_BINARY_IO_HPP
#define PLACEREC_BINARY_IO_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "placerec/errors.hpp"

namespace placerec {

// Little-endian byte buffer writer. All file formats are assembled in memory
// first so a write is a single deterministic stream operation.
class ByteWriter {
public:
    void put_u8(uint8_t v) { buf_.push_back(v); }

    void put_u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }

    void put_u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }

    void put_f32(float v) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_u32(bits);
    }

    void put_f64(double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        put_u64(bits);
    }

    void put_magic(const char magic[4]) {
        buf_.insert(buf_.end(), magic, magic + 4);
    }

    // Bulk little-endian float array. On little-endian hosts this is a memcpy.
    void put_f32_array(const float* data, size_t count) {
        if constexpr (std::endian::native == std::endian::little) {
            const size_t off = buf_.size();
            buf_.resize(off + count * 4);
            std::memcpy(buf_.data() + off, data, count * 4);
        } else {
            for (size_t i = 0; i < count; ++i) put_f32(data[i]);
        }
    }

    const std::vector<uint8_t>& bytes() const { return buf_; }
    size_t size() const { return buf_.size(); }

private:
    std::vector<uint8_t> buf_;
};

// Bounds-checked reader over a byte buffer. Overruns surface as CorruptPayload.
class ByteReader {
public:
    explicit ByteReader(const std::vector<uint8_t>& buf) : data_(buf.data()), size_(buf.size()) {}
    ByteReader(const uint8_t* data, size_t size) : data_(data), size_(size) {}

    uint8_t get_u8() {
        need(1);
        return data_[pos_++];
    }

    uint32_t get_u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    uint64_t get_u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }

    float get_f32() {
        uint32_t bits = get_u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    double get_f64() {
        uint64_t bits = get_u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    void get_f32_array(float* out, size_t count) {
        need(count * 4);
        if constexpr (std::endian::native == std::endian::little) {
            std::memcpy(out, data_ + pos_, count * 4);
            pos_ += count * 4;
        } else {
            for (size_t i = 0; i < count; ++i) out[i] = get_f32();
        }
    }

    // True if the next 4 bytes match; consumes them only on a match attempt
    // with enough bytes available.
    bool check_magic(const char magic[4]) {
        if (size_ - pos_ < 4) return false;
        bool ok = std::memcmp(data_ + pos_, magic, 4) == 0;
        pos_ += 4;
        return ok;
    }

    size_t remaining() const { return size_ - pos_; }
    size_t position() const { return pos_; }

private:
    void need(size_t n) const {
        if (size_ - pos_ < n) throw CorruptPayload("unexpected end of payload");
    }

    const uint8_t* data_;
    size_t size_;
    size_t pos_ = 0;
};

// Whole-file helpers.
std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<uint8_t>& bytes);

}  // namespace placerec

#endif
