#pragma once

#include "objsplat/common.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

namespace objsplat {

/// Dense H x W x C image of doubles, channel-interleaved.
struct ImageXd {
    int width = 0, height = 0, channels = 0;
    std::vector<double> data;

    ImageXd() = default;
    ImageXd(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c), data(size_t(w) * h * c, fill) {}

    double& at(int y, int x, int c) { return data[(size_t(y) * width + x) * channels + c]; }
    double at(int y, int x, int c) const { return data[(size_t(y) * width + x) * channels + c]; }
    double* pixel(int y, int x) { return &data[(size_t(y) * width + x) * channels]; }
    const double* pixel(int y, int x) const { return &data[(size_t(y) * width + x) * channels]; }

    size_t size() const { return data.size(); }
    bool same_shape(const ImageXd& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
    void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

namespace detail {

inline int pnm_read_token(std::istream& in) {
    // Skips whitespace and '#' comments, then reads one integer.
    int c = in.get();
    while (c == '#' || std::isspace(c)) {
        if (c == '#') {
            while (c != '\n' && c != EOF) c = in.get();
        }
        c = in.get();
    }
    int value = 0;
    bool any = false;
    while (std::isdigit(c)) {
        value = value * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    if (!any) throw DataError("pnm: malformed header");
    return value;
}

}  // namespace detail

// 8-bit binary PPM (P6). Values are clamped to [0, 1] before quantization.
inline void write_ppm(const ImageXd& img, const std::string& path) {
    if (img.channels != 3) throw DataError("write_ppm: image must have 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("write_ppm: cannot open " + path);
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> row(size_t(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = std::clamp(img.at(y, x, c), 0.0, 1.0);
                row[size_t(x) * 3 + c] = (unsigned char)std::lround(v * 255.0);
            }
        out.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
    }
    if (!out) throw DataError("write_ppm: write failed for " + path);
}

inline ImageXd read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("read_ppm: cannot open " + path);
    char magic[2];
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || magic[1] != '6') throw DataError("read_ppm: not a P6 file: " + path);
    int w = detail::pnm_read_token(in);
    int h = detail::pnm_read_token(in);
    int maxval = detail::pnm_read_token(in);
    if (maxval != 255) throw DataError("read_ppm: only maxval 255 supported: " + path);
    ImageXd img(w, h, 3);
    std::vector<unsigned char> row(size_t(w) * 3);
    for (int y = 0; y < h; ++y) {
        in.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size()));
        if (!in) throw DataError("read_ppm: truncated pixel data: " + path);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = row[size_t(x) * 3 + c] / 255.0;
    }
    return img;
}

// 16-bit binary PGM (P5, big-endian samples per the Netpbm spec).
inline void write_pgm16(const std::vector<uint16_t>& values, int width, int height,
                        const std::string& path) {
    if (values.size() != size_t(width) * height) throw DataError("write_pgm16: size mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("write_pgm16: cannot open " + path);
    out << "P5\n" << width << " " << height << "\n65535\n";
    std::vector<unsigned char> row(size_t(width) * 2);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            uint16_t v = values[size_t(y) * width + x];
            row[size_t(x) * 2] = (unsigned char)(v >> 8);
            row[size_t(x) * 2 + 1] = (unsigned char)(v & 0xFF);
        }
        out.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
    }
    if (!out) throw DataError("write_pgm16: write failed for " + path);
}

inline std::vector<uint16_t> read_pgm16(const std::string& path, int& width, int& height) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("read_pgm16: cannot open " + path);
    char magic[2];
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || magic[1] != '5') throw DataError("read_pgm16: not a P5 file: " + path);
    width = detail::pnm_read_token(in);
    height = detail::pnm_read_token(in);
    int maxval = detail::pnm_read_token(in);
    if (maxval != 65535) throw DataError("read_pgm16: only maxval 65535 supported: " + path);
    std::vector<uint16_t> values(size_t(width) * height);
    std::vector<unsigned char> row(size_t(width) * 2);
    for (int y = 0; y < height; ++y) {
        in.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size()));
        if (!in) throw DataError("read_pgm16: truncated pixel data: " + path);
        for (int x = 0; x < width; ++x)
            values[size_t(y) * width + x] =
                uint16_t((row[size_t(x) * 2] << 8) | row[size_t(x) * 2 + 1]);
    }
    return values;
}

// 8-bit binary PGM, used for alpha maps.
inline void write_pgm8(const ImageXd& img, const std::string& path) {
    if (img.channels != 1) throw DataError("write_pgm8: image must have 1 channel");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("write_pgm8: cannot open " + path);
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> row(size_t(img.width));
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            row[x] = (unsigned char)std::lround(std::clamp(img.at(y, x, 0), 0.0, 1.0) * 255.0);
        out.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
    }
}

// Depth maps persist as 16-bit millimeters; 0 marks invalid pixels.
// Valid depths quantize to at least 1 mm so they stay distinguishable
// from the invalid marker.
inline void write_depth16(const ImageXd& depth, const ImageXd& alpha, double min_alpha,
                          const std::string& path) {
    if (depth.channels != 1) throw DataError("write_depth16: depth must have 1 channel");
    std::vector<uint16_t> mm(size_t(depth.width) * depth.height, 0);
    for (int y = 0; y < depth.height; ++y)
        for (int x = 0; x < depth.width; ++x) {
            if (alpha.size() && alpha.at(y, x, 0) < min_alpha) continue;
            double d = depth.at(y, x, 0);
            if (!(d > 0)) continue;
            long q = std::lround(d * 1000.0);
            mm[size_t(y) * depth.width + x] = uint16_t(std::clamp(q, 1l, 65535l));
        }
    write_pgm16(mm, depth.width, depth.height, path);
}

// Returns depth in meters, 0 where invalid.
inline ImageXd read_depth16(const std::string& path) {
    int w = 0, h = 0;
    std::vector<uint16_t> mm = read_pgm16(path, w, h);
    ImageXd depth(w, h, 1);
    for (size_t i = 0; i < mm.size(); ++i) depth.data[i] = mm[i] / 1000.0;
    return depth;
}

// Writes via a temp file plus rename so partially written outputs never
// appear under the final name.
template <typename WriteFn>
inline void atomic_write(const std::string& path, WriteFn&& fn) {
    std::string tmp = path + ".tmp";
    fn(tmp);
    std::filesystem::rename(tmp, path);
}

}  // namespace objsplat
