#pragma once

#include <zlib.h>

#include <cstdint>
#include <fstream>
#include <vector>

#include "trisplat/io/pfm.hpp"

namespace ts {

namespace png_detail {

inline void put_u32(std::vector<unsigned char>& v, std::uint32_t x) {
    v.push_back(static_cast<unsigned char>(x >> 24));
    v.push_back(static_cast<unsigned char>(x >> 16));
    v.push_back(static_cast<unsigned char>(x >> 8));
    v.push_back(static_cast<unsigned char>(x));
}

inline void write_chunk(std::ofstream& f, const char type[4],
                        const std::vector<unsigned char>& data) {
    std::vector<unsigned char> head;
    put_u32(head, static_cast<std::uint32_t>(data.size()));
    f.write(reinterpret_cast<const char*>(head.data()), 4);
    f.write(type, 4);
    if (!data.empty()) f.write(reinterpret_cast<const char*>(data.data()), data.size());
    std::uint32_t crc = crc32(0, reinterpret_cast<const Bytef*>(type), 4);
    if (!data.empty()) crc = crc32(crc, data.data(), static_cast<uInt>(data.size()));
    std::vector<unsigned char> tail;
    put_u32(tail, crc);
    f.write(reinterpret_cast<const char*>(tail.data()), 4);
}

}  // namespace png_detail

// 8-bit RGB PNG. Values clamped to [0,1].
inline void write_png_rgb(const std::string& path, const ImageV3& img) {
    using namespace png_detail;
    int w = img.width(), h = img.height();
    std::vector<unsigned char> raw(static_cast<size_t>(h) * (1 + 3 * w));
    size_t p = 0;
    for (int y = 0; y < h; ++y) {
        raw[p++] = 0;  // filter: none
        for (int x = 0; x < w; ++x) {
            const Vec3& c = img.at(x, y);
            raw[p++] = static_cast<unsigned char>(std::clamp(c.x, 0.0, 1.0) * 255.0 + 0.5);
            raw[p++] = static_cast<unsigned char>(std::clamp(c.y, 0.0, 1.0) * 255.0 + 0.5);
            raw[p++] = static_cast<unsigned char>(std::clamp(c.z, 0.0, 1.0) * 255.0 + 0.5);
        }
    }
    uLongf comp_size = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> comp(comp_size);
    if (compress2(comp.data(), &comp_size, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("write_png_rgb: deflate failed");
    comp.resize(comp_size);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("write_png_rgb: cannot open " + path);
    const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    f.write(reinterpret_cast<const char*>(sig), 8);
    std::vector<unsigned char> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(w));
    put_u32(ihdr, static_cast<std::uint32_t>(h));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type: truecolor
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter
    ihdr.push_back(0);   // interlace
    write_chunk(f, "IHDR", ihdr);
    write_chunk(f, "IDAT", comp);
    write_chunk(f, "IEND", {});
}

// Normal map encoded as (n+1)/2 per channel.
inline void write_png_normals(const std::string& path, const ImageV3& normals) {
    ImageV3 enc(normals.width(), normals.height());
    for (size_t i = 0; i < normals.size(); ++i)
        enc[i] = (normals[i] + Vec3{1, 1, 1}) * 0.5;
    write_png_rgb(path, enc);
}

inline void write_png_gray(const std::string& path, const ImageF& img, double lo = 0,
                           double hi = 1) {
    ImageV3 rgb(img.width(), img.height());
    for (size_t i = 0; i < img.size(); ++i) {
        double v = std::isfinite(img[i]) ? (img[i] - lo) / (hi - lo) : 0.0;
        rgb[i] = {v, v, v};
    }
    write_png_rgb(path, rgb);
}

}  // namespace ts
