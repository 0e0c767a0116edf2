#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>

#include "trisplat/image.hpp"

namespace ts {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// PFM, 32-bit float little-endian (negative scale), rows bottom-to-top.
inline void write_pfm(const std::string& path, const ImageF& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("write_pfm: cannot open " + path);
    f << "Pf\n" << img.width() << " " << img.height() << "\n-1.0\n";
    for (int y = img.height() - 1; y >= 0; --y)
        for (int x = 0; x < img.width(); ++x) {
            float v = static_cast<float>(img.at(x, y));
            f.write(reinterpret_cast<const char*>(&v), 4);
        }
}

inline void write_pfm(const std::string& path, const ImageV3& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("write_pfm: cannot open " + path);
    f << "PF\n" << img.width() << " " << img.height() << "\n-1.0\n";
    for (int y = img.height() - 1; y >= 0; --y)
        for (int x = 0; x < img.width(); ++x) {
            const Vec3& p = img.at(x, y);
            float v[3] = {static_cast<float>(p.x), static_cast<float>(p.y),
                          static_cast<float>(p.z)};
            f.write(reinterpret_cast<const char*>(v), 12);
        }
}

namespace pfm_detail {

inline void read_header(std::ifstream& f, const std::string& path, std::string& type, int& w,
                        int& h, double& scale) {
    f >> type >> w >> h >> scale;
    if (!f || (type != "Pf" && type != "PF") || w <= 0 || h <= 0)
        throw IoError("read_pfm: bad header in " + path);
    if (scale >= 0) throw IoError("read_pfm: big-endian PFM unsupported: " + path);
    f.get();  // single whitespace after the scale
}

}  // namespace pfm_detail

inline ImageF read_pfm_gray(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_pfm: cannot open " + path);
    std::string type;
    int w, h;
    double scale;
    pfm_detail::read_header(f, path, type, w, h, scale);
    if (type != "Pf") throw IoError("read_pfm: expected single channel in " + path);
    ImageF img(w, h);
    for (int y = h - 1; y >= 0; --y)
        for (int x = 0; x < w; ++x) {
            float v;
            f.read(reinterpret_cast<char*>(&v), 4);
            img.at(x, y) = v;
        }
    if (!f) throw IoError("read_pfm: truncated file " + path);
    return img;
}

inline ImageV3 read_pfm_rgb(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_pfm: cannot open " + path);
    std::string type;
    int w, h;
    double scale;
    pfm_detail::read_header(f, path, type, w, h, scale);
    if (type != "PF") throw IoError("read_pfm: expected three channels in " + path);
    ImageV3 img(w, h);
    for (int y = h - 1; y >= 0; --y)
        for (int x = 0; x < w; ++x) {
            float v[3];
            f.read(reinterpret_cast<char*>(v), 12);
            img.at(x, y) = {v[0], v[1], v[2]};
        }
    if (!f) throw IoError("read_pfm: truncated file " + path);
    return img;
}

}  // namespace ts
