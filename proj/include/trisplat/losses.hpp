#pragma once

#include <span>

#include "trisplat/gaussian.hpp"
#include "trisplat/image.hpp"
#include "trisplat/raster.hpp"
#include "trisplat/ssim.hpp"

namespace ts {

struct LossWeights {
    double depth = 10.0;      // lambda_d
    double normal = 3.0;      // lambda_n
    double opacity = 0.2;     // lambda_o
    double color_ssim = 0.2;  // lambda_c
    double volume = 0.01;     // lambda_s
};

// Geometry loss on the triangle branch: masked L1 depth + masked L1 normal +
// binary entropy on triangle opacity. Pixels with zero confidence, invalid
// prior depth, or nothing rendered (background sentinel) are masked out.
struct GeoLoss {
    double total = 0;
    double depth_term = 0, normal_term = 0, opacity_term = 0;
    int masked_pixels = 0;
    ImageF d_depth;   // upstream gradient for backward_render
    ImageV3 d_normal;
    std::vector<double> d_opacity;  // per triangle, natural alpha space
};

inline GeoLoss geo_loss(const RenderBuffers& render, const ImageF& depth_prior,
                        const ImageV3& normal_prior, const ImageF& confidence,
                        std::span<const TrianglePrimitive> triangles, const LossWeights& w) {
    GeoLoss out;
    int width = render.width, height = render.height;
    out.d_depth = ImageF(width, height, 0.0);
    out.d_normal = ImageV3(width, height, Vec3{0, 0, 0});

    int n = 0;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            if (confidence.at(x, y) <= 0) continue;
            if (depth_prior.at(x, y) <= 0) continue;
            if (std::isinf(render.depth.at(x, y))) continue;
            ++n;
        }
    out.masked_pixels = n;
    if (n > 0) {
        double inv_n = 1.0 / n;
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                if (confidence.at(x, y) <= 0) continue;
                if (depth_prior.at(x, y) <= 0) continue;
                if (std::isinf(render.depth.at(x, y))) continue;
                double dd = render.depth.at(x, y) - depth_prior.at(x, y);
                out.depth_term += std::fabs(dd) * inv_n;
                out.d_depth.at(x, y) = w.depth * (dd > 0 ? 1.0 : (dd < 0 ? -1.0 : 0.0)) * inv_n;
                Vec3 dn = render.normal.at(x, y) - normal_prior.at(x, y);
                out.normal_term +=
                    (std::fabs(dn.x) + std::fabs(dn.y) + std::fabs(dn.z)) * inv_n;
                out.d_normal.at(x, y) = {
                    w.normal * (dn.x > 0 ? 1.0 : (dn.x < 0 ? -1.0 : 0.0)) * inv_n,
                    w.normal * (dn.y > 0 ? 1.0 : (dn.y < 0 ? -1.0 : 0.0)) * inv_n,
                    w.normal * (dn.z > 0 ? 1.0 : (dn.z < 0 ? -1.0 : 0.0)) * inv_n};
            }
    }

    out.d_opacity.assign(triangles.size(), 0.0);
    if (!triangles.empty()) {
        double inv_t = 1.0 / triangles.size();
        for (size_t i = 0; i < triangles.size(); ++i) {
            double a = triangles[i].opacity();
            out.opacity_term += -(a * std::log(a) + (1 - a) * std::log(1 - a)) * inv_t;
            out.d_opacity[i] = w.opacity * std::log((1 - a) / a) * inv_t;
        }
    }
    out.total = w.depth * out.depth_term + w.normal * out.normal_term +
                w.opacity * out.opacity_term;
    return out;
}

// Appearance loss on the gaussian branch: (1-lc) L1 + lc (1-SSIM)/2. The
// SSIM similarity enters as a dissimilarity so lower is better.
struct RgbLoss {
    double total = 0;
    double l1_term = 0, ssim_term = 0;
    double ssim_value = 0;
    ImageV3 d_color;  // upstream gradient for splat_backward
};

inline RgbLoss rgb_loss(const ImageV3& rendered, const ImageV3& target, const LossWeights& w) {
    RgbLoss out;
    int width = rendered.width(), height = rendered.height();
    out.d_color = ImageV3(width, height, Vec3{0, 0, 0});
    double inv_n = 1.0 / (static_cast<double>(width) * height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            Vec3 d = rendered.at(x, y) - target.at(x, y);
            out.l1_term += (std::fabs(d.x) + std::fabs(d.y) + std::fabs(d.z)) * inv_n;
            out.d_color.at(x, y) = {
                (1 - w.color_ssim) * (d.x > 0 ? 1.0 : (d.x < 0 ? -1.0 : 0.0)) * inv_n,
                (1 - w.color_ssim) * (d.y > 0 ? 1.0 : (d.y < 0 ? -1.0 : 0.0)) * inv_n,
                (1 - w.color_ssim) * (d.z > 0 ? 1.0 : (d.z < 0 ? -1.0 : 0.0)) * inv_n};
        }
    out.ssim_value = ssim(rendered, target).value;
    out.ssim_term = (1.0 - out.ssim_value) / 2.0;
    ImageV3 dssim = ssim_backward(rendered, target, -w.color_ssim / 2.0);
    for (size_t i = 0; i < out.d_color.size(); ++i) out.d_color[i] += dssim[i];
    out.total = (1 - w.color_ssim) * out.l1_term + w.color_ssim * out.ssim_term;
    return out;
}

// Volume regularization: mean over gaussians of the product of the decoded
// scale components, with gradients through the decoder.
struct VolumeReg {
    double total = 0;
    std::vector<GaussianGrads> gaussians;
    DecoderGrads mlp;
};

inline VolumeReg volume_reg(std::span<const NeuralGaussian> gaussians,
                            std::span<const TrianglePrimitive> triangles,
                            std::span<const std::int32_t> anchor_index, const DecoderMLP& mlp,
                            const LossWeights& w) {
    VolumeReg out;
    out.gaussians.resize(gaussians.size());
    if (gaussians.empty()) return out;
    double inv_n = 1.0 / gaussians.size();
    for (size_t i = 0; i < gaussians.size(); ++i) {
        if (anchor_index[i] < 0) continue;
        DecodedGaussian d = decode(gaussians[i], triangles[anchor_index[i]], mlp);
        Vec3 s = d.scale;
        out.total += w.volume * s.x * s.y * s.z * inv_n;
        Vec3 d_scale{w.volume * s.y * s.z * inv_n, w.volume * s.x * s.z * inv_n,
                     w.volume * s.x * s.y * inv_n};
        decode_backward(gaussians[i], d, mlp, Vec3{0, 0, 0}, d_scale, {0, 0, 0, 0},
                        out.gaussians[i], out.mlp);
    }
    return out;
}

}  // namespace ts
