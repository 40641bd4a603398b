// Binary Netpbm writers/readers: P5 (PGM, gray), P6 (PPM, RGB) and P7 (PAM,
// RGB_ALPHA). Samples are 8-bit, quantized as floor(v * 255 + 0.5).
//
// Headers written:
//   P5\n<w> <h>\n255\n
//   P6\n<w> <h>\n255\n
//   P7\nWIDTH <w>\nHEIGHT <h>\nDEPTH 4\nMAXVAL 255\nTUPLTYPE RGB_ALPHA\nENDHDR\n

#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "layerfusion/errors.hpp"
#include "layerfusion/image.hpp"
#include "layerfusion/io/tensor_file.hpp"

namespace layerfusion::io {

enum class ImageFormat { PGM, PPM, PAM };

inline std::size_t format_channels(ImageFormat f) {
    switch (f) {
        case ImageFormat::PGM: return 1;
        case ImageFormat::PPM: return 3;
        case ImageFormat::PAM: return 4;
    }
    return 0;
}

inline std::uint8_t quantize(float v) {
    if (!(v >= 0.0f && v <= 1.0f))
        throw ArgumentError("image sample " + std::to_string(v) + " outside [0,1]");
    return static_cast<std::uint8_t>(std::floor(static_cast<double>(v) * 255.0 + 0.5));
}

inline std::vector<unsigned char> encode_image(const Image& img, ImageFormat format) {
    if (img.channels != format_channels(format))
        throw ArgumentError("image has " + std::to_string(img.channels) +
                            " channels, format needs " + std::to_string(format_channels(format)));
    std::string header;
    const std::string w = std::to_string(img.width), h = std::to_string(img.height);
    switch (format) {
        case ImageFormat::PGM: header = "P5\n" + w + " " + h + "\n255\n"; break;
        case ImageFormat::PPM: header = "P6\n" + w + " " + h + "\n255\n"; break;
        case ImageFormat::PAM:
            header = "P7\nWIDTH " + w + "\nHEIGHT " + h +
                     "\nDEPTH 4\nMAXVAL 255\nTUPLTYPE RGB_ALPHA\nENDHDR\n";
            break;
    }
    std::vector<unsigned char> out(header.begin(), header.end());
    out.reserve(out.size() + img.data.size());
    for (float v : img.data) out.push_back(quantize(v));
    return out;
}

inline void write_image(const std::filesystem::path& path, const Image& img, ImageFormat format) {
    detail::write_file(path, encode_image(img, format));
}

namespace detail {

class HeaderReader {
public:
    explicit HeaderReader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

    std::size_t pos() const { return pos_; }

    // Next whitespace-delimited token; '#' starts a comment to end of line.
    std::string token() {
        for (;;) {
            while (pos_ < bytes_.size() && std::isspace(bytes_[pos_])) ++pos_;
            if (pos_ < bytes_.size() && bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
                continue;
            }
            break;
        }
        std::string t;
        while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_])) t += static_cast<char>(bytes_[pos_++]);
        if (t.empty()) throw FormatError("unexpected end of Netpbm header", pos_);
        return t;
    }

    std::size_t number() {
        const std::size_t at = pos_;
        const std::string t = token();
        try {
            std::size_t used = 0;
            const unsigned long v = std::stoul(t, &used);
            if (used != t.size()) throw std::invalid_argument(t);
            return v;
        } catch (const std::exception&) {
            throw FormatError("expected a number in Netpbm header, got '" + t + "'", at);
        }
    }

    // Consumes the single whitespace byte that ends a P5/P6 header.
    void end_of_header() {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_]))
            throw FormatError("missing whitespace after Netpbm header", pos_);
        ++pos_;
    }

    // Skips to just past the newline following ENDHDR.
    void skip_line() {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
        if (pos_ < bytes_.size()) ++pos_;
    }

private:
    const std::vector<unsigned char>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline Image decode_image(const std::vector<unsigned char>& bytes) {
    detail::HeaderReader r(bytes);
    const std::string magic = r.token();
    std::size_t width = 0, height = 0, channels = 0, maxval = 0;
    if (magic == "P5" || magic == "P6") {
        channels = magic == "P5" ? 1 : 3;
        width = r.number();
        height = r.number();
        maxval = r.number();
        r.end_of_header();
    } else if (magic == "P7") {
        for (;;) {
            const std::size_t at = r.pos();
            const std::string key = r.token();
            if (key == "ENDHDR") {
                r.skip_line();
                break;
            }
            if (key == "WIDTH") width = r.number();
            else if (key == "HEIGHT") height = r.number();
            else if (key == "DEPTH") channels = r.number();
            else if (key == "MAXVAL") maxval = r.number();
            else if (key == "TUPLTYPE") r.token();
            else throw FormatError("unknown PAM header field '" + key + "'", at);
        }
    } else {
        throw FormatError("unsupported Netpbm magic '" + magic + "'", 0);
    }
    if (maxval != 255) throw FormatError("only MAXVAL 255 is supported", r.pos());
    if (channels != 1 && channels != 3 && channels != 4)
        throw FormatError("unsupported channel depth " + std::to_string(channels), r.pos());
    if (width == 0 || height == 0) throw FormatError("empty image", r.pos());
    const std::size_t n = width * height * channels;
    if (bytes.size() - r.pos() != n)
        throw FormatError("pixel payload length mismatch: expected " + std::to_string(n) +
                              " bytes, got " + std::to_string(bytes.size() - r.pos()),
                          r.pos());
    Image img(width, height, channels);
    for (std::size_t i = 0; i < n; ++i) img.data[i] = static_cast<float>(bytes[r.pos() + i]) / 255.0f;
    return img;
}

inline Image read_image(const std::filesystem::path& path) {
    try {
        return decode_image(detail::read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.detail(), e.offset());
    }
}

}  // namespace layerfusion::io
