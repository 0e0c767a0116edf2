#pragma once

#include <array>

#include "trisplat/vec.hpp"

namespace ts {

inline constexpr int kShCoeffs = 9;  // degree-2 real spherical harmonics
inline constexpr double kSh0 = 0.28209479177387814;

using ShCoeffs = std::array<Vec3, kShCoeffs>;

// Basis values at a unit direction, 3DGS ordering and signs.
inline std::array<double, kShCoeffs> sh_basis(const Vec3& dir) {
    double x = dir.x, y = dir.y, z = dir.z;
    return {kSh0,
            -0.4886025119029199 * y,
            0.4886025119029199 * z,
            -0.4886025119029199 * x,
            1.0925484305920792 * x * y,
            -1.0925484305920792 * y * z,
            0.31539156525252005 * (2.0 * z * z - x * x - y * y),
            -1.0925484305920792 * x * z,
            0.5462742152960396 * (x * x - y * y)};
}

struct ShEval {
    Vec3 color;               // after +0.5 offset and [0,1] clamp
    Vec3 unclamped;           // before the clamp, for gradient masking
};

inline ShEval sh_eval(const ShCoeffs& coeffs, const Vec3& dir) {
    auto basis = sh_basis(dir);
    Vec3 c{0, 0, 0};
    for (int i = 0; i < kShCoeffs; ++i) c += coeffs[i] * basis[i];
    c += Vec3{0.5, 0.5, 0.5};
    ShEval out;
    out.unclamped = c;
    out.color = {std::clamp(c.x, 0.0, 1.0), std::clamp(c.y, 0.0, 1.0), std::clamp(c.z, 0.0, 1.0)};
    return out;
}

// Gradients of the clamped color w.r.t. coefficients and the view direction.
// d_dir accumulates the raw (pre-normalization) direction gradient.
inline void sh_backward(const ShCoeffs& coeffs, const Vec3& dir, const ShEval& eval,
                        const Vec3& d_color, ShCoeffs& d_coeffs, Vec3& d_dir) {
    Vec3 mask{eval.unclamped.x > 0 && eval.unclamped.x < 1 ? 1.0 : 0.0,
              eval.unclamped.y > 0 && eval.unclamped.y < 1 ? 1.0 : 0.0,
              eval.unclamped.z > 0 && eval.unclamped.z < 1 ? 1.0 : 0.0};
    Vec3 g = cwise_mul(d_color, mask);
    auto basis = sh_basis(dir);
    for (int i = 0; i < kShCoeffs; ++i) d_coeffs[i] += g * basis[i];

    double x = dir.x, y = dir.y, z = dir.z;
    // d(basis_i)/d(x,y,z), folded against sum_i g . coeffs[i]
    auto dot_g = [&](int i) { return dot(g, coeffs[i]); };
    double c1 = 0.4886025119029199;
    double c20 = 1.0925484305920792, c22 = 0.31539156525252005, c24 = 0.5462742152960396;
    d_dir.x += -c1 * dot_g(3) + c20 * y * dot_g(4) + c22 * (-2 * x) * dot_g(6) -
               c20 * z * dot_g(7) + c24 * 2 * x * dot_g(8);
    d_dir.y += -c1 * dot_g(1) + c20 * x * dot_g(4) - c20 * z * dot_g(5) +
               c22 * (-2 * y) * dot_g(6) + c24 * (-2 * y) * dot_g(8);
    d_dir.z += c1 * dot_g(2) - c20 * y * dot_g(5) + c22 * 4 * z * dot_g(6) - c20 * x * dot_g(7);
}

// Pixel color -> DC coefficient so a fresh gaussian reproduces that color.
inline Vec3 rgb_to_sh0(const Vec3& rgb) { return (rgb - Vec3{0.5, 0.5, 0.5}) / kSh0; }

}  // namespace ts
