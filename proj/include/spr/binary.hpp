#pragma once

#include <spr/error.hpp>

#include <boost/crc.hpp>

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>

namespace spr {

/// Appends little-endian fields to a byte buffer.
class BinaryWriter {
public:
    void bytes(std::string_view raw) { buf_.append(raw); }

    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }

    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) {
            buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
        }
    }

    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
        }
    }

    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

    void f32s(std::span<const float> values) {
        for (float v : values) {
            f32(v);
        }
    }

    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s);
    }

    const std::string& buffer() const { return buf_; }
    std::string take() { return std::move(buf_); }

private:
    std::string buf_;
};

/// Bounds-checked little-endian reader. Every overrun is a corrupt-data error.
class BinaryReader {
public:
    explicit BinaryReader(std::string_view data, std::string what = "input")
        : data_(data), what_(std::move(what)) {}

    std::string_view bytes(std::size_t n) {
        need(n);
        auto out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(data_[pos_++]);
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_++])) << (8 * i);
        }
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(data_[pos_++])) << (8 * i);
        }
        return v;
    }

    float f32() { return std::bit_cast<float>(u32()); }

    void f32s(std::span<float> out) {
        need(out.size() * 4);
        for (float& v : out) {
            v = f32();
        }
    }

    std::string str() {
        const auto n = u32();
        return std::string(bytes(n));
    }

    std::size_t remaining() const { return data_.size() - pos_; }
    std::size_t position() const { return pos_; }

    /// Guards count fields before allocating `count * unit` bytes.
    void expect_at_least(std::uint64_t count, std::size_t unit) {
        if (unit != 0 && count > remaining() / unit) {
            fail(ErrorCode::corrupt, what_ + ": truncated (needs " + std::to_string(count) + " records)");
        }
    }

private:
    void need(std::size_t n) const {
        if (n > data_.size() - pos_) {
            fail(ErrorCode::corrupt, what_ + ": truncated at byte " + std::to_string(pos_));
        }
    }

    std::string_view data_;
    std::size_t pos_ = 0;
    std::string what_;
};

inline std::uint32_t crc32(std::string_view data) {
    boost::crc_32_type crc;
    crc.process_bytes(data.data(), data.size());
    return crc.checksum();
}

}  // namespace spr
