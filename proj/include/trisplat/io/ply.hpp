#pragma once

#include <fstream>
#include <sstream>
#include <vector>

#include "trisplat/io/pfm.hpp"
#include "trisplat/planar.hpp"

namespace ts {

// Point cloud with an optional per-point confidence scalar.
inline void write_ply_points(const std::string& path, const std::vector<Vec3>& points,
                             const std::vector<double>* confidence = nullptr,
                             bool binary = true) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("write_ply_points: cannot open " + path);
    f.precision(9);  // float32 exact in ascii mode
    f << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n";
    f << "element vertex " << points.size() << "\n";
    f << "property float x\nproperty float y\nproperty float z\n";
    if (confidence) f << "property float confidence\n";
    f << "end_header\n";
    for (size_t i = 0; i < points.size(); ++i) {
        float v[4] = {static_cast<float>(points[i].x), static_cast<float>(points[i].y),
                      static_cast<float>(points[i].z),
                      confidence ? static_cast<float>((*confidence)[i]) : 0.0f};
        if (binary) {
            f.write(reinterpret_cast<const char*>(v), confidence ? 16 : 12);
        } else {
            f << v[0] << " " << v[1] << " " << v[2];
            if (confidence) f << " " << v[3];
            f << "\n";
        }
    }
}

struct PlyPoints {
    std::vector<Vec3> points;
    std::vector<double> confidence;  // zero-filled when the property is absent
};

inline PlyPoints read_ply_points(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_ply_points: cannot open " + path);
    std::string line;
    if (!std::getline(f, line) || line.substr(0, 3) != "ply")
        throw IoError("read_ply_points: not a PLY file: " + path);
    bool binary = false;
    size_t count = 0;
    struct Prop {
        std::string name;
        int bytes;
    };
    std::vector<Prop> props;
    bool in_vertex = false;
    while (std::getline(f, line)) {
        std::istringstream ss(line);
        std::string tok;
        ss >> tok;
        if (tok == "format") {
            std::string fmt;
            ss >> fmt;
            if (fmt == "binary_little_endian") binary = true;
            else if (fmt != "ascii") throw IoError("read_ply_points: unsupported format " + fmt);
        } else if (tok == "element") {
            std::string name;
            ss >> name >> count;
            in_vertex = name == "vertex";
            if (!in_vertex && count > 0 && !props.empty()) break;  // only vertices needed
        } else if (tok == "property" && in_vertex) {
            std::string type, name;
            ss >> type >> name;
            int bytes = type == "double" ? 8 : (type == "float" ? 4 : (type == "uchar" ? 1 : 4));
            props.push_back({name, bytes});
        } else if (tok == "end_header") {
            break;
        }
    }
    PlyPoints out;
    out.points.reserve(count);
    out.confidence.assign(count, 0.0);
    int xi = -1, yi = -1, zi = -1, ci = -1;
    for (size_t i = 0; i < props.size(); ++i) {
        if (props[i].name == "x") xi = static_cast<int>(i);
        if (props[i].name == "y") yi = static_cast<int>(i);
        if (props[i].name == "z") zi = static_cast<int>(i);
        if (props[i].name == "confidence") ci = static_cast<int>(i);
    }
    if (xi < 0 || yi < 0 || zi < 0) throw IoError("read_ply_points: missing xyz in " + path);
    for (size_t n = 0; n < count; ++n) {
        std::vector<double> vals(props.size(), 0.0);
        if (binary) {
            for (size_t p = 0; p < props.size(); ++p) {
                if (props[p].bytes == 8) {
                    double d;
                    f.read(reinterpret_cast<char*>(&d), 8);
                    vals[p] = d;
                } else if (props[p].bytes == 4) {
                    float d;
                    f.read(reinterpret_cast<char*>(&d), 4);
                    vals[p] = d;
                } else {
                    unsigned char d;
                    f.read(reinterpret_cast<char*>(&d), 1);
                    vals[p] = d;
                }
            }
        } else {
            for (size_t p = 0; p < props.size(); ++p) f >> vals[p];
        }
        if (!f) throw IoError("read_ply_points: truncated " + path);
        out.points.push_back({vals[xi], vals[yi], vals[zi]});
        if (ci >= 0) out.confidence[n] = vals[ci];
    }
    return out;
}

// Plane hulls as PLY polygons plus a plain-text sidecar with the fitted
// parameters (normal, center, inlier count, rms residual).
inline void write_planes_ply(const std::string& ply_path, const std::string& sidecar_path,
                             const std::vector<PlanarPrimitive>& planes) {
    size_t n_verts = 0;
    for (const auto& p : planes) n_verts += p.hull.size();
    std::ofstream f(ply_path, std::ios::binary);
    if (!f) throw IoError("write_planes_ply: cannot open " + ply_path);
    f << "ply\nformat ascii 1.0\n";
    f << "element vertex " << n_verts << "\n";
    f << "property float x\nproperty float y\nproperty float z\n";
    f << "element face " << planes.size() << "\n";
    f << "property list uchar int vertex_indices\n";
    f << "end_header\n";
    char buf[128];
    for (const auto& p : planes)
        for (const Vec3& v : p.hull) {
            std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", v.x, v.y, v.z);
            f << buf;
        }
    size_t base = 0;
    for (const auto& p : planes) {
        f << p.hull.size();
        for (size_t i = 0; i < p.hull.size(); ++i) f << " " << base + i;
        f << "\n";
        base += p.hull.size();
    }

    std::ofstream s(sidecar_path);
    if (!s) throw IoError("write_planes_ply: cannot open " + sidecar_path);
    s << "# nx ny nz cx cy cz inliers rms\n";
    for (const auto& p : planes) {
        std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g %.9g %.9g %.9g %zu %.9g\n", p.normal.x,
                      p.normal.y, p.normal.z, p.center.x, p.center.y, p.center.z,
                      p.inlier_ids.size(), p.rms_residual);
        s << buf;
    }
}

}  // namespace ts
