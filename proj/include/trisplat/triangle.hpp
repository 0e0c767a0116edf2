#pragma once

#include <array>
#include <vector>

#include "trisplat/vec.hpp"

namespace ts {

struct DegenerateTriangle : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr int kTriangleFeatureDim = 24;
inline constexpr double kDegenerateCrossNorm = 1e-12;

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}
inline double logit(double p) { return std::log(p / (1.0 - p)); }

// Geometry atom: three learnable vertices plus opacity / edge-sharpness /
// boundary-smoothness and a context feature used by the appearance branch.
// Opacity is stored as a logit and sharpness/smoothness as logs so that the
// (0,1) and (0,inf) ranges survive additive optimizer updates.
struct TrianglePrimitive {
    std::array<Vec3, 3> vertices;
    double opacity_logit = 0.0;
    double log_sharpness = 0.0;
    double log_smoothness = 0.0;
    std::array<double, kTriangleFeatureDim> context_feature{};
    std::int64_t source_keyframe = -1;
    std::int64_t id = -1;

    double opacity() const { return sigmoid(opacity_logit); }
    double sharpness() const { return std::exp(log_sharpness); }
    double smoothness() const { return std::exp(log_smoothness); }
    void set_opacity(double a) { opacity_logit = logit(a); }
    void set_sharpness(double d) { log_sharpness = std::log(d); }
    void set_smoothness(double s) { log_smoothness = std::log(s); }

    Vec3 barycenter() const { return (vertices[0] + vertices[1] + vertices[2]) / 3.0; }
    Vec3 raw_normal() const {
        return cross(vertices[1] - vertices[0], vertices[2] - vertices[0]);
    }
    double area() const { return 0.5 * norm(raw_normal()); }
};

// Per-triangle orthonormal frame with the barycenter at the origin. Local
// coordinates are measured in units of (s_u, s_v) along (t_u, t_v); in those
// units the vertices sit at (1,0), (a,1), (-1-a,-1) and the analytic edge
// distance polynomials of edge_distances() vanish exactly on the edges.
struct LocalFrame {
    Vec3 origin;    // barycenter
    Vec3 t_u, t_v, n;
    double s_u = 0, s_v = 0;
    double a = 0;   // u-coordinate of vertex 1; the single in-plane DoF
};

inline LocalFrame local_frame(const std::array<Vec3, 3>& p) {
    Vec3 c = cross(p[1] - p[0], p[2] - p[0]);
    double cn = norm(c);
    if (cn <= kDegenerateCrossNorm)
        throw DegenerateTriangle("local_frame: collinear vertices");
    LocalFrame f;
    f.origin = (p[0] + p[1] + p[2]) / 3.0;
    Vec3 g = p[0] - f.origin;
    f.s_u = norm(g);
    f.t_u = g / f.s_u;
    f.n = c / cn;
    f.t_v = cross(f.n, f.t_u);
    Vec3 h = p[1] - f.origin;
    f.s_v = dot(f.t_v, h);  // positive for any non-degenerate triangle
    f.a = dot(f.t_u, h) / f.s_u;
    return f;
}

inline LocalFrame local_frame(const TrianglePrimitive& tri) { return local_frame(tri.vertices); }

// Homogeneous local->world map: (u, v, 0, 1) -> origin + u s_u t_u + v s_v t_v.
struct LocalToWorld {
    double h[4][4];
};

inline LocalToWorld local_to_world(const LocalFrame& f) {
    LocalToWorld H{};
    Vec3 cu = f.t_u * f.s_u, cv = f.t_v * f.s_v;
    H.h[0][0] = cu.x; H.h[1][0] = cu.y; H.h[2][0] = cu.z;
    H.h[0][1] = cv.x; H.h[1][1] = cv.y; H.h[2][1] = cv.z;
    H.h[0][3] = f.origin.x; H.h[1][3] = f.origin.y; H.h[2][3] = f.origin.z;
    H.h[3][3] = 1.0;
    return H;
}

inline Vec3 local_point_to_world(const LocalFrame& f, const Vec2& local) {
    return f.origin + f.t_u * (f.s_u * local.u) + f.t_v * (f.s_v * local.v);
}

inline Vec2 world_point_to_local(const LocalFrame& f, const Vec3& world) {
    Vec3 q = world - f.origin;
    return {dot(f.t_u, q) / f.s_u, dot(f.t_v, q) / f.s_v};
}

}  // namespace ts
