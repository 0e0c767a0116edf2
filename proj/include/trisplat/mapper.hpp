#pragma once

#include <deque>

#include "trisplat/losses.hpp"
#include "trisplat/rng.hpp"
#include "trisplat/scene.hpp"
#include "trisplat/splat.hpp"

namespace ts {

struct InvalidPrior : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Streaming input unit: posed image plus dense prior maps.
struct Keyframe {
    std::int64_t id = -1;
    ImageV3 image;         // rgb in [0,1]
    ImageF depth_prior;    // meters, 0 = invalid
    ImageV3 normal_prior;  // unit, world frame
    ImageF confidence;     // [0,1]
    CameraPose pose;
    CameraIntrinsics intrinsics;

    bool consistent() const {
        int w = image.width(), h = image.height();
        return depth_prior.same_size(w, h) && normal_prior.same_size(w, h) &&
               confidence.same_size(w, h) && intrinsics.width == w && intrinsics.height == h;
    }
};

struct InsertionConfig {
    double tau_a = 0.1;          // photometric threshold
    double v_min = 0.02, v_max = 0.15;  // vicinity range, meters
    double d_min = 0.3, d_max = 8.0;    // depth range, meters
    double exponent = 2.0;       // p
    double log_sigma = 1.0;      // LoG kernel sigma, pixels
    int k_min = 4, k_max = 8;    // gaussians per triangle
    double phi_floor = 1e-3;
    double init_sharpness = 50.0;
    double init_smoothness = 1.0;
};

struct OptimizerRates {
    double vertices = 2e-4;  // scaled by scene_extent
    double opacity = 5e-2;
    double sharpness = 5e-3;
    double smoothness = 5e-3;
    double gauss_offset = 1e-3;
    double gauss_opacity = 5e-2;
    double gauss_scale = 5e-3;
    double gauss_quat = 1e-3;
    double sh = 2.5e-3;
    double features = 2e-3;
    double mlp = 2e-3;
    double scene_extent = 5.0;  // meters, scales the vertex rate
};

struct MapperConfig {
    InsertionConfig insertion;
    LossWeights losses;
    OptimizerRates rates;
    RasterConfig raster;
    SplatConfig splat;
    int keyframe_iterations = 20;  // M
    int prune_interval = 100;      // optimizer steps between prunes
    double prune_opacity = 0.5;
    double current_frame_prob = 0.2;
    bool spatial_filter_enabled = true;
    bool rgb_to_vertices = true;   // the loose geometry/appearance coupling
    bool freeze_geometry = false;  // gaussians-only ablation
    std::uint64_t seed = 0;
};

// Per-step telemetry appended to the run log.
struct StepMetrics {
    int step;
    double geo_loss, rgb_loss;
    int n_triangles, n_gaussians;
};

// --- photometric filter ----------------------------------------------------

// Laplacian-of-gaussian magnitude of the luminance, clamped to [0,1]. The
// zero-mean kernel is scaled so a unit step yields a response near one.
inline ImageF log_response(const ImageV3& img, double sigma) {
    int rad = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    int win = 2 * rad + 1;
    std::vector<double> k(static_cast<size_t>(win) * win);
    double mean = 0;
    for (int dy = -rad; dy <= rad; ++dy)
        for (int dx = -rad; dx <= rad; ++dx) {
            double r2 = dx * dx + dy * dy;
            double g = std::exp(-r2 / (2 * sigma * sigma));
            double v = (r2 - 2 * sigma * sigma) * g;
            k[static_cast<size_t>(dy + rad) * win + (dx + rad)] = v;
            mean += v;
        }
    mean /= win * win;
    double abs_sum = 0;
    for (auto& v : k) {
        v -= mean;
        abs_sum += std::fabs(v);
    }
    for (auto& v : k) v *= 8.0 / abs_sum;  // classic discrete-laplacian gain

    int w = img.width(), h = img.height();
    ImageF lum(w, h, 0.0);
    for (size_t i = 0; i < lum.size(); ++i)
        lum[i] = (img[i].x + img[i].y + img[i].z) / 3.0;
    ImageF out(w, h, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0;
            for (int dy = -rad; dy <= rad; ++dy)
                for (int dx = -rad; dx <= rad; ++dx) {
                    int sx = std::clamp(x + dx, 0, w - 1);
                    int sy = std::clamp(y + dy, 0, h - 1);
                    s += k[static_cast<size_t>(dy + rad) * win + (dx + rad)] * lum.at(sx, sy);
                }
            out.at(x, y) = std::min(std::fabs(s), 1.0);
        }
    return out;
}

struct PhotometricResult {
    ImageF phi_gt;      // LoG response of the input image
    ImageF probability; // P_a = max(phi_gt - phi_rendered, 0)
    Image<char> candidate;
};

inline PhotometricResult photometric_filter(const ImageV3& image, const ImageV3& rendered,
                                            double log_sigma, double tau_a) {
    if (!rendered.same_size(image.width(), image.height()))
        throw std::invalid_argument("photometric_filter: image size mismatch");
    PhotometricResult out;
    out.phi_gt = log_response(image, log_sigma);
    ImageF phi_r = log_response(rendered, log_sigma);
    int w = image.width(), h = image.height();
    out.probability = ImageF(w, h, 0.0);
    out.candidate = Image<char>(w, h, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double p = std::max(out.phi_gt.at(x, y) - phi_r.at(x, y), 0.0);
            out.probability.at(x, y) = p;
            out.candidate.at(x, y) = p > tau_a ? 1 : 0;
        }
    return out;
}

// Depth-adaptive vicinity: candidates suppressed when an existing triangle
// barycenter lies within an axis-aligned cube of this half extent.
inline double vicinity(double depth, const InsertionConfig& cfg) {
    double r = (depth - cfg.d_min) / (cfg.d_max - cfg.d_min);
    r = std::clamp(r, 0.0, 1.0);
    return cfg.v_min + (cfg.v_max - cfg.v_min) * std::pow(r, cfg.exponent);
}

inline bool spatial_filter_passes(const Vec3& center, double depth, const Scene& scene,
                                  const InsertionConfig& cfg) {
    double v = vicinity(depth, cfg);
    bool occupied = false;
    scene.voxels.for_each_in_cube(center, v, [&](std::int64_t id) {
        if (occupied) return;
        std::int32_t idx = scene.index_of(id);
        if (idx < 0) return;
        Vec3 b = scene.triangles[idx].barycenter();
        if (std::fabs(b.x - center.x) <= v && std::fabs(b.y - center.y) <= v &&
            std::fabs(b.z - center.z) <= v)
            occupied = true;
    });
    return !occupied;
}

// --- primitive initialization ----------------------------------------------

// Deterministic tangent basis from a unit normal.
inline void tangent_basis(const Vec3& n, Vec3& t1, Vec3& t2) {
    Vec3 a = std::fabs(n.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    t1 = normalized(cross(n, a));
    t2 = cross(n, t1);
}

inline TrianglePrimitive init_triangle(int u, int v, const Keyframe& kf, double phi,
                                       const InsertionConfig& cfg) {
    if (kf.confidence.at(u, v) <= 0)
        throw InvalidPrior("init_triangle: zero confidence at pixel");
    double d = kf.depth_prior.at(u, v);
    if (d <= 0) throw InvalidPrior("init_triangle: invalid prior depth at pixel");
    phi = std::max(phi, cfg.phi_floor);
    double f = 0.5 * (kf.intrinsics.fx + kf.intrinsics.fy);
    double scale = 3.0 * d / (2.0 * f * std::sqrt(phi));

    Vec3 center = unproject(kf.intrinsics, kf.pose, {u + 0.5, v + 0.5}, d);
    Vec3 n = normalized(kf.normal_prior.at(u, v));
    Vec3 t1, t2;
    tangent_basis(n, t1, t2);

    TrianglePrimitive tri;
    for (int k = 0; k < 3; ++k) {
        double ang = 2.0 * M_PI * k / 3.0;
        tri.vertices[k] = center + (t1 * std::cos(ang) + t2 * std::sin(ang)) * scale;
    }
    tri.set_opacity(std::max(0.2 * kf.confidence.at(u, v), 1e-4));
    tri.set_sharpness(cfg.init_sharpness);
    tri.set_smoothness(cfg.init_smoothness);
    tri.source_keyframe = kf.id;
    return tri;
}

inline std::vector<NeuralGaussian> init_gaussians(const TrianglePrimitive& tri, const Vec3& rgb,
                                                  double depth, double focal, double phi,
                                                  const InsertionConfig& cfg) {
    phi = std::max(phi, cfg.phi_floor);
    int count = phi > 0.4 ? cfg.k_max : cfg.k_min;
    double s = depth / (2.0 * focal * std::sqrt(phi));
    std::vector<NeuralGaussian> out(count);
    for (auto& g : out) {
        g.set_opacity(tri.opacity());
        g.set_base_scale({s, s, s});
        g.sh[0] = rgb_to_sh0(rgb);
        g.anchor = tri.id;  // reassigned on insertion
    }
    return out;
}

// --- the streaming mapper ----------------------------------------------------

class Mapper {
public:
    Scene scene;
    MapperConfig config;
    std::vector<StepMetrics> log;

    explicit Mapper(MapperConfig cfg = {}) : config(cfg), rng_(cfg.seed) {}

    // Photometric + spatial insertion over one keyframe. Newly added
    // triangles suppress later candidates of the same frame.
    int insert_primitives(const Keyframe& kf) {
        SplatConfig render_cfg = config.splat;
        render_cfg.retain_backward_state = false;
        SplatBuffers rendered = splat_forward(scene.gaussians, scene.triangles,
                                              scene.anchor_indices(), scene.mlp, kf.intrinsics,
                                              kf.pose, render_cfg);
        PhotometricResult photo = photometric_filter(kf.image, rendered.color,
                                                     config.insertion.log_sigma,
                                                     config.insertion.tau_a);
        double f = 0.5 * (kf.intrinsics.fx + kf.intrinsics.fy);
        int inserted = 0;
        for (int v = 0; v < kf.image.height(); ++v) {
            for (int u = 0; u < kf.image.width(); ++u) {
                if (!photo.candidate.at(u, v)) continue;
                if (kf.confidence.at(u, v) <= 0) continue;
                double d = kf.depth_prior.at(u, v);
                if (d <= 0) continue;
                Vec3 center = unproject(kf.intrinsics, kf.pose, {u + 0.5, v + 0.5}, d);
                if (config.spatial_filter_enabled &&
                    !spatial_filter_passes(center, d, scene, config.insertion))
                    continue;
                double phi = photo.phi_gt.at(u, v);
                TrianglePrimitive tri = init_triangle(u, v, kf, phi, config.insertion);
                auto gs = init_gaussians(tri, kf.image.at(u, v), d, f, phi, config.insertion);
                scene.add_triangle(std::move(tri), std::move(gs));
                ++inserted;
            }
        }
        return inserted;
    }

    // One Adam step over both branches against the given supervising frame.
    void optimize_step(const Keyframe& kf) {
        const auto anchors = scene.anchor_indices();
        const size_t n_tri = scene.triangles.size();
        const size_t n_gauss = scene.gaussians.size();

        std::vector<TriangleGradients> tri_grads(n_tri);
        std::vector<std::array<double, kTriangleFeatureDim>> tri_feat_grads(n_tri);
        for (auto& a : tri_feat_grads) a.fill(0.0);
        std::vector<GaussianGrads> gauss_grads(n_gauss);
        DecoderGrads mlp_grads;

        double geo_total = 0, rgb_total = 0;

        if (!config.freeze_geometry && n_tri > 0) {
            RenderBuffers render =
                forward_render(scene.triangles, kf.intrinsics, kf.pose, config.raster);
            GeoLoss geo = geo_loss(render, kf.depth_prior, kf.normal_prior, kf.confidence,
                                   scene.triangles, config.losses);
            geo_total = geo.total;
            if (geo.masked_pixels > 0) {
                auto grads = backward_render(render, geo.d_depth, geo.d_normal, scene.triangles,
                                             kf.intrinsics, kf.pose, config.raster);
                for (size_t i = 0; i < n_tri; ++i) tri_grads[i] += grads[i];
            }
            for (size_t i = 0; i < n_tri; ++i) tri_grads[i].d_opacity += geo.d_opacity[i];
        }

        if (n_gauss > 0) {
            SplatBuffers splat = splat_forward(scene.gaussians, scene.triangles, anchors,
                                               scene.mlp, kf.intrinsics, kf.pose, config.splat);
            RgbLoss rgb = rgb_loss(splat.color, kf.image, config.losses);
            rgb_total = rgb.total;
            SplatGradients sg = splat_backward(splat, scene.gaussians, scene.triangles, anchors,
                                               scene.mlp, kf.intrinsics, kf.pose, rgb.d_color,
                                               config.splat);
            VolumeReg vol = volume_reg(scene.gaussians, scene.triangles, anchors, scene.mlp,
                                       config.losses);
            rgb_total += vol.total;

            for (size_t i = 0; i < n_gauss; ++i) {
                merge_gauss(gauss_grads[i], sg.gaussians[i]);
                merge_gauss(gauss_grads[i], vol.gaussians[i]);
                if (anchors[i] >= 0) {
                    for (int k = 0; k < kTriangleFeatureDim; ++k)
                        tri_feat_grads[anchors[i]][k] += vol.gaussians[i].d_tri_feature[k];
                }
            }
            for (size_t i = 0; i < n_tri; ++i)
                for (int k = 0; k < kTriangleFeatureDim; ++k)
                    tri_feat_grads[i][k] += sg.tri_features[i][k];
            mlp_grads.accumulate(sg.mlp);
            mlp_grads.accumulate(vol.mlp);

            if (config.rgb_to_vertices && !config.freeze_geometry) {
                for (size_t i = 0; i < n_tri; ++i) tri_grads[i] += sg.triangles[i];
            }
        }

        apply_adam(tri_grads, tri_feat_grads, gauss_grads, mlp_grads);
        ++total_steps_;
        log.push_back({total_steps_, geo_total, rgb_total, static_cast<int>(n_tri),
                       static_cast<int>(n_gauss)});

        if (config.prune_interval > 0 && total_steps_ % config.prune_interval == 0)
            scene.prune(config.prune_opacity);
    }

    // Streaming schedule: keyframes insert primitives and get M iterations,
    // common frames get M/2 without insertion. Each iteration supervises
    // with the current frame (p=0.2) or a uniformly drawn past keyframe.
    void ingest_frame(const Keyframe& frame, bool is_keyframe) {
        if (!frame.consistent())
            throw std::invalid_argument("ingest_frame: inconsistent keyframe maps");
        if (is_keyframe) {
            scene.register_keyframe(frame.id);
            insert_primitives(frame);
        }
        int iterations =
            is_keyframe ? config.keyframe_iterations : config.keyframe_iterations / 2;
        for (int i = 0; i < iterations; ++i) {
            bool use_current = past_keyframes_.empty() ||
                               rng_.uniform() < config.current_frame_prob;
            if (use_current) {
                optimize_step(frame);
            } else {
                int pick = rng_.uniform_int(0, static_cast<int>(past_keyframes_.size()) - 1);
                optimize_step(past_keyframes_[pick]);
            }
        }
        if (is_keyframe) past_keyframes_.push_back(frame);
    }

    // Post-stream global refinement over the retained keyframes, visiting
    // the least-optimized frames first within each round.
    void global_optimize(int iterations) {
        if (past_keyframes_.empty()) return;
        std::vector<int> visits(past_keyframes_.size(), 0);
        for (int i = 0; i < iterations; ++i) {
            int pick = 0;
            for (size_t k = 1; k < past_keyframes_.size(); ++k)
                if (visits[k] < visits[pick]) pick = static_cast<int>(k);
            ++visits[pick];
            optimize_step(past_keyframes_[pick]);
        }
        scene.prune(config.prune_opacity);
    }

    const std::vector<Keyframe>& past_keyframes() const { return past_keyframes_; }
    int total_steps() const { return total_steps_; }
    Rng& rng() { return rng_; }

private:
    static void merge_gauss(GaussianGrads& dst, const GaussianGrads& src) {
        dst.d_offset += src.d_offset;
        for (int i = 0; i < kShCoeffs; ++i) dst.d_sh[i] += src.d_sh[i];
        dst.d_opacity += src.d_opacity;
        dst.d_scale_base += src.d_scale_base;
        for (int i = 0; i < 4; ++i) dst.d_base_quat[i] += src.d_base_quat[i];
        for (int i = 0; i < kGaussianFeatureDim; ++i) dst.d_feature[i] += src.d_feature[i];
    }

    void apply_adam(const std::vector<TriangleGradients>& tri_grads,
                    const std::vector<std::array<double, kTriangleFeatureDim>>& tri_feat_grads,
                    const std::vector<GaussianGrads>& gauss_grads, DecoderGrads& mlp_grads) {
        const OptimizerRates& r = config.rates;
        int t = ++scene.adam_step_count;
        double lr_vertices = r.vertices * r.scene_extent;

        for (size_t i = 0; i < scene.triangles.size(); ++i) {
            TrianglePrimitive& tri = scene.triangles[i];
            auto& mom = scene.tri_moments[i];
            const TriangleGradients& g = tri_grads[i];
            if (!config.freeze_geometry) {
                Vec3 old_bary = tri.barycenter();
                for (int vtx = 0; vtx < 3; ++vtx)
                    for (int c = 0; c < 3; ++c) {
                        double grad = g.d_vertices[vtx][c];
                        AdamMoment& mo = mom[vtx * 3 + c];
                        if (grad != 0 || mo.m != 0 || mo.v != 0)
                            tri.vertices[vtx][c] += adam_step(mo, grad, lr_vertices, t);
                    }
                scene.voxels.move(tri.id, old_bary, tri.barycenter());
                double a = tri.opacity();
                double d_logit = g.d_opacity * a * (1 - a);
                if (d_logit != 0 || mom[9].m != 0)
                    tri.opacity_logit += adam_step(mom[9], d_logit, r.opacity, t);
                double d_logsharp = g.d_sharpness * tri.sharpness();
                if (d_logsharp != 0 || mom[10].m != 0)
                    tri.log_sharpness += adam_step(mom[10], d_logsharp, r.sharpness, t);
                double d_logsmooth = g.d_smoothness * tri.smoothness();
                if (d_logsmooth != 0 || mom[11].m != 0)
                    tri.log_smoothness += adam_step(mom[11], d_logsmooth, r.smoothness, t);
            }
            for (int k = 0; k < kTriangleFeatureDim; ++k) {
                double grad = tri_feat_grads[i][k];
                AdamMoment& mo = mom[12 + k];
                if (grad != 0 || mo.m != 0 || mo.v != 0)
                    tri.context_feature[k] += adam_step(mo, grad, r.features, t);
            }
        }

        for (size_t i = 0; i < scene.gaussians.size(); ++i) {
            NeuralGaussian& g = scene.gaussians[i];
            auto& mom = scene.gauss_moments[i];
            const GaussianGrads& gg = gauss_grads[i];
            for (int c = 0; c < 3; ++c) {
                AdamMoment& mo = mom[c];
                if (gg.d_offset[c] != 0 || mo.m != 0 || mo.v != 0)
                    g.offset[c] += adam_step(mo, gg.d_offset[c], r.gauss_offset, t);
            }
            for (int s = 0; s < kShCoeffs; ++s)
                for (int c = 0; c < 3; ++c) {
                    AdamMoment& mo = mom[3 + s * 3 + c];
                    double grad = gg.d_sh[s][c];
                    if (grad != 0 || mo.m != 0 || mo.v != 0)
                        g.sh[s][c] += adam_step(mo, grad, r.sh, t);
                }
            {
                double a = g.opacity();
                double grad = gg.d_opacity * a * (1 - a);
                AdamMoment& mo = mom[30];
                if (grad != 0 || mo.m != 0 || mo.v != 0)
                    g.opacity_logit += adam_step(mo, grad, r.gauss_opacity, t);
            }
            Vec3 base = g.base_scale();
            for (int c = 0; c < 3; ++c) {
                double grad = gg.d_scale_base[c] * base[c];
                AdamMoment& mo = mom[31 + c];
                if (grad != 0 || mo.m != 0 || mo.v != 0)
                    g.log_scale[c] += adam_step(mo, grad, r.gauss_scale, t);
            }
            double* quat[4] = {&g.base_quat.w, &g.base_quat.x, &g.base_quat.y, &g.base_quat.z};
            for (int c = 0; c < 4; ++c) {
                AdamMoment& mo = mom[34 + c];
                if (gg.d_base_quat[c] != 0 || mo.m != 0 || mo.v != 0)
                    *quat[c] += adam_step(mo, gg.d_base_quat[c], r.gauss_quat, t);
            }
            for (int c = 0; c < kGaussianFeatureDim; ++c) {
                AdamMoment& mo = mom[38 + c];
                if (gg.d_feature[c] != 0 || mo.m != 0 || mo.v != 0)
                    g.feature[c] += adam_step(mo, gg.d_feature[c], r.features, t);
            }
        }

        apply_mlp_adam(scene.mlp.scale_mlp, mlp_grads.scale_mlp, 0, t);
        apply_mlp_adam(scene.mlp.rot_mlp, mlp_grads.rot_mlp, scene.mlp.scale_mlp.param_count(),
                       t);
    }

    void apply_mlp_adam(MlpCore& mlp, const MlpCore& grads, size_t offset, int t) {
        size_t i = offset;
        auto apply = [&](std::vector<double>& p, const std::vector<double>& g) {
            for (size_t k = 0; k < p.size(); ++k, ++i) {
                AdamMoment& mo = scene.mlp_moments[i];
                if (g[k] != 0 || mo.m != 0 || mo.v != 0)
                    p[k] += adam_step(mo, g[k], config.rates.mlp, t);
            }
        };
        apply(mlp.w1, grads.w1);
        apply(mlp.b1, grads.b1);
        apply(mlp.w2, grads.w2);
        apply(mlp.b2, grads.b2);
    }

    Rng rng_;
    std::vector<Keyframe> past_keyframes_;
    int total_steps_ = 0;
};

}  // namespace ts
