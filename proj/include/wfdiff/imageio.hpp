#pragma once

// Binary PGM (P5) / PPM (P6) with maxval 255. Pixels map to [0,1] as
// byte / 255 and are stored planar [C,H,W]. Writing clamps to [0,1] and
// quantizes with round(v * 255).

#include <cctype>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "wfdiff/tensor.hpp"

namespace wfdiff {

namespace detail {

class PnmHeaderReader {
   public:
    explicit PnmHeaderReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    std::string magic() {
        if (bytes_.size() < 2) throw FormatError("PNM: file too short for magic number");
        pos_ = 2;
        return std::string(bytes_.begin(), bytes_.begin() + 2);
    }

    std::size_t number(const char* what) {
        skip_space_and_comments();
        std::size_t value = 0, digits = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            value = value * 10 + (bytes_[pos_++] - '0');
            if (++digits > 9) throw FormatError(std::string("PNM: ") + what + " too large");
        }
        if (digits == 0) throw FormatError(std::string("PNM: malformed header, expected ") + what);
        return value;
    }

    // Exactly one whitespace byte separates maxval from the payload.
    std::size_t payload_offset() {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
            throw FormatError("PNM: missing whitespace before pixel data");
        }
        return pos_ + 1;
    }

   private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed: " + path);
}

}  // namespace detail

template <class T = float>
Tensor<T> decode_pnm(const std::vector<std::uint8_t>& bytes) {
    detail::PnmHeaderReader reader(bytes);
    const std::string magic = reader.magic();
    std::size_t channels = 0;
    if (magic == "P5") {
        channels = 1;
    } else if (magic == "P6") {
        channels = 3;
    } else {
        throw FormatError("PNM: unsupported magic '" + magic + "' (need binary P5 or P6)");
    }
    const std::size_t width = reader.number("width");
    const std::size_t height = reader.number("height");
    const std::size_t maxval = reader.number("maxval");
    if (width == 0 || height == 0) throw FormatError("PNM: zero extent");
    if (maxval != 255) throw FormatError("PNM: unsupported maxval " + std::to_string(maxval) + " (need 255)");
    const std::size_t offset = reader.payload_offset();
    const std::size_t expected = width * height * channels;
    if (bytes.size() < offset + expected) {
        throw FormatError("PNM: truncated payload, expected " + std::to_string(expected) + " bytes, found " +
                          std::to_string(bytes.size() - std::min(bytes.size(), offset)));
    }
    std::vector<T> planar(expected);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x)
            for (std::size_t c = 0; c < channels; ++c) {
                const std::uint8_t v = bytes[offset + (y * width + x) * channels + c];
                planar[(c * height + y) * width + x] = static_cast<T>(v) / T{255};
            }
    return Tensor<T>(Shape{channels, height, width}, std::move(planar));
}

template <class T>
std::vector<std::uint8_t> encode_pnm(const Tensor<T>& img) {
    if (img.ndim() != 3 || (img.dim(0) != 1 && img.dim(0) != 3)) {
        throw DimensionError("PNM images must be [1|3,H,W], got " + shape_str(img.shape()));
    }
    const std::size_t channels = img.dim(0), height = img.dim(1), width = img.dim(2);
    const std::string header = std::string(channels == 3 ? "P6" : "P5") + "\n" + std::to_string(width) + " " +
                               std::to_string(height) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    bytes.reserve(header.size() + img.numel());
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x)
            for (std::size_t c = 0; c < channels; ++c) {
                double v = static_cast<double>(img[(c * height + y) * width + x]);
                v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
                bytes.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
            }
    return bytes;
}

template <class T = float>
Tensor<T> read_ppm(const std::string& path) {
    return decode_pnm<T>(detail::read_file_bytes(path));
}

template <class T>
void write_ppm(const Tensor<T>& img, const std::string& path) {
    detail::write_file_bytes(path, encode_pnm(img));
}

}  // namespace wfdiff
