#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <unordered_map>
#include <vector>

#include "trisplat/camera.hpp"
#include "trisplat/gaussian.hpp"
#include "trisplat/image.hpp"
#include "trisplat/parallel.hpp"
#include "trisplat/raster.hpp"

namespace ts {

struct SplatConfig {
    double near = kNearPlane;
    double alpha_cutoff = 1.0 / 255.0;
    double alpha_clamp = 0.9999;
    double transmittance_min = 1e-4;
    double dilation = 0.3;  // screen-space low-pass added to the 2D covariance
    bool retain_backward_state = true;
};

namespace splat_detail {

// Per-gaussian state after decoding and projection, shared by both passes.
struct Projected {
    std::int32_t index;      // into the gaussian span
    DecodedGaussian decoded;
    Vec3 p_cam;              // camera-space mean
    Vec2 mean2d;
    double conic_a, conic_b, conic_c;
    double cov2d_a, cov2d_b, cov2d_c;
    Mat3 sigma3d;
    Mat3 rot;                // R(q)
    Vec3 view_dir;           // unit, camera center -> gaussian
    double view_dist;
    ShEval sh;               // clamped color + pre-clamp values
    double opacity;
    double radius_px;
};

}  // namespace splat_detail

struct SplatBuffers {
    int width = 0, height = 0;
    ImageV3 color;
    ImageF alpha;
    bool has_backward_state = false;
    std::vector<splat_detail::Projected> projected;   // depth-sorted
    std::vector<std::uint32_t> contrib_offsets;       // W*H+1
    struct Contrib {
        std::int32_t proj_index;  // into projected
        double alpha_pix;
    };
    std::vector<Contrib> contribs;

    std::span<const Contrib> pixel_contribs(int x, int y) const {
        size_t p = static_cast<size_t>(y) * width + x;
        return {contribs.data() + contrib_offsets[p],
                contribs.data() + contrib_offsets[p + 1]};
    }
};

namespace splat_detail {

inline bool project_gaussian(const NeuralGaussian& g, std::int32_t index,
                             const TrianglePrimitive& tri, const DecoderMLP& mlp,
                             const CameraIntrinsics& cam, const CameraPose& pose,
                             const RigidTransform& cam_from_world, const SplatConfig& cfg,
                             Projected& out) {
    out.index = index;
    out.decoded = decode(g, tri, mlp);
    out.p_cam = cam_from_world.apply(out.decoded.position);
    if (out.p_cam.z <= cfg.near) return false;
    double px = out.p_cam.x, py = out.p_cam.y, pz = out.p_cam.z;
    out.mean2d = {cam.fx * px / pz + cam.cx, cam.fy * py / pz + cam.cy};

    out.rot = quat_to_matrix(out.decoded.rotation);
    Vec3 s = out.decoded.scale;
    Mat3 m = out.rot;  // M = R diag(s)
    for (int r = 0; r < 3; ++r) {
        m.m[r][0] *= s.x;
        m.m[r][1] *= s.y;
        m.m[r][2] *= s.z;
    }
    out.sigma3d = m * m.transposed();

    const Mat3& w = cam_from_world.rotation;
    Vec3 j0{cam.fx / pz, 0, -cam.fx * px / (pz * pz)};
    Vec3 j1{0, cam.fy / pz, -cam.fy * py / (pz * pz)};
    Vec3 p0 = w.transposed() * j0;  // rows of P = J W
    Vec3 p1 = w.transposed() * j1;
    double a = dot(p0, out.sigma3d * p0) + cfg.dilation;
    double b = dot(p0, out.sigma3d * p1);
    double c = dot(p1, out.sigma3d * p1) + cfg.dilation;
    double det = a * c - b * b;
    if (det <= 0) return false;
    out.cov2d_a = a;
    out.cov2d_b = b;
    out.cov2d_c = c;
    out.conic_a = c / det;
    out.conic_b = -b / det;
    out.conic_c = a / det;

    out.opacity = g.opacity();
    // beyond this radius alpha_pix falls below the cutoff
    double lam_max = 0.5 * (a + c) + std::sqrt(std::max(0.0, 0.25 * (a - c) * (a - c) + b * b));
    double log_ratio = std::log(std::max(out.opacity, cfg.alpha_cutoff) / cfg.alpha_cutoff);
    out.radius_px = std::sqrt(std::max(2.0 * log_ratio * lam_max, 0.0)) + 1.0;

    out.view_dist = norm(out.decoded.position - pose.center());
    out.view_dir = (out.decoded.position - pose.center()) / out.view_dist;
    out.sh = sh_eval(g.sh, out.view_dir);
    return true;
}

}  // namespace splat_detail

// Forward gaussian splatting: global front-to-back depth sort of decoded
// means, 16x16 tile binning by conservative screen radius, per-pixel alpha
// compositing of SH colors.
inline SplatBuffers splat_forward(std::span<const NeuralGaussian> gaussians,
                                  std::span<const TrianglePrimitive> triangles,
                                  std::span<const std::int32_t> anchor_index,
                                  const DecoderMLP& mlp, const CameraIntrinsics& cam,
                                  const CameraPose& pose, const SplatConfig& cfg = {}) {
    using namespace splat_detail;
    SplatBuffers buf;
    buf.width = cam.width;
    buf.height = cam.height;
    buf.color = ImageV3(cam.width, cam.height, Vec3{0, 0, 0});
    buf.alpha = ImageF(cam.width, cam.height, 0.0);
    buf.has_backward_state = cfg.retain_backward_state;

    const RigidTransform cam_from_world = pose.camera_from_world();
    for (size_t i = 0; i < gaussians.size(); ++i) {
        if (anchor_index[i] < 0) continue;
        Projected pr;
        if (project_gaussian(gaussians[i], static_cast<std::int32_t>(i),
                             triangles[anchor_index[i]], mlp, cam, pose, cam_from_world, cfg,
                             pr))
            buf.projected.push_back(std::move(pr));
    }
    std::stable_sort(buf.projected.begin(), buf.projected.end(),
                     [](const Projected& a, const Projected& b) {
                         return a.p_cam.z < b.p_cam.z ||
                                (a.p_cam.z == b.p_cam.z && a.index < b.index);
                     });

    const int tiles_x = (cam.width + kTileSize - 1) / kTileSize;
    const int tiles_y = (cam.height + kTileSize - 1) / kTileSize;
    const int n_tiles = tiles_x * tiles_y;
    std::vector<std::vector<std::int32_t>> bins(n_tiles);  // depth order preserved
    for (std::int32_t pi = 0; pi < static_cast<std::int32_t>(buf.projected.size()); ++pi) {
        const Projected& pr = buf.projected[pi];
        int x0 = std::max(0, static_cast<int>(std::floor(pr.mean2d.u - pr.radius_px)));
        int x1 = std::min(cam.width - 1, static_cast<int>(std::ceil(pr.mean2d.u + pr.radius_px)));
        int y0 = std::max(0, static_cast<int>(std::floor(pr.mean2d.v - pr.radius_px)));
        int y1 = std::min(cam.height - 1, static_cast<int>(std::ceil(pr.mean2d.v + pr.radius_px)));
        if (x0 > x1 || y0 > y1) continue;
        for (int ty = y0 / kTileSize; ty <= y1 / kTileSize; ++ty)
            for (int tx = x0 / kTileSize; tx <= x1 / kTileSize; ++tx)
                bins[static_cast<size_t>(ty) * tiles_x + tx].push_back(pi);
    }

    std::vector<std::vector<std::uint32_t>> tile_counts(n_tiles);
    std::vector<std::vector<SplatBuffers::Contrib>> tile_contribs(n_tiles);
    parallel_for_chunks(n_tiles, [&](int tile) {
        const auto& bin = bins[tile];
        int tx = tile % tiles_x, ty = tile / tiles_x;
        int x0 = tx * kTileSize, y0 = ty * kTileSize;
        int x1 = std::min(x0 + kTileSize, cam.width), y1 = std::min(y0 + kTileSize, cam.height);
        auto& counts = tile_counts[tile];
        auto& store = tile_contribs[tile];
        counts.assign(static_cast<size_t>(x1 - x0) * (y1 - y0), 0);
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
                double T = 1.0, A = 0.0;
                Vec3 C{0, 0, 0};
                std::uint32_t count = 0;
                for (std::int32_t pi : bin) {
                    const Projected& pr = buf.projected[pi];
                    double dx = (x + 0.5) - pr.mean2d.u;
                    double dy = (y + 0.5) - pr.mean2d.v;
                    double power = -0.5 * (pr.conic_a * dx * dx + pr.conic_c * dy * dy) -
                                   pr.conic_b * dx * dy;
                    if (power > 0) continue;
                    double alpha_pix = std::min(cfg.alpha_clamp, pr.opacity * std::exp(power));
                    if (alpha_pix < cfg.alpha_cutoff) continue;
                    C += pr.sh.color * (alpha_pix * T);
                    A += alpha_pix * T;
                    if (cfg.retain_backward_state) {
                        store.push_back({pi, alpha_pix});
                        ++count;
                    }
                    T *= 1.0 - alpha_pix;
                    if (T < cfg.transmittance_min) break;
                }
                buf.color.at(x, y) = C;
                buf.alpha.at(x, y) = A;
                if (cfg.retain_backward_state)
                    counts[static_cast<size_t>(y - y0) * (x1 - x0) + (x - x0)] = count;
            }
        }
    });

    if (cfg.retain_backward_state) {
        buf.contrib_offsets.assign(static_cast<size_t>(cam.width) * cam.height + 1, 0);
        for (int tile = 0; tile < n_tiles; ++tile) {
            int tx = tile % tiles_x, ty = tile / tiles_x;
            int x0 = tx * kTileSize, y0 = ty * kTileSize;
            int x1 = std::min(x0 + kTileSize, cam.width),
                y1 = std::min(y0 + kTileSize, cam.height);
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x)
                    buf.contrib_offsets[static_cast<size_t>(y) * cam.width + x + 1] =
                        tile_counts[tile][static_cast<size_t>(y - y0) * (x1 - x0) + (x - x0)];
        }
        for (size_t i = 1; i < buf.contrib_offsets.size(); ++i)
            buf.contrib_offsets[i] += buf.contrib_offsets[i - 1];
        buf.contribs.resize(buf.contrib_offsets.back());
        std::vector<std::uint32_t> cursor(static_cast<size_t>(cam.width) * cam.height);
        for (size_t p = 0; p < cursor.size(); ++p) cursor[p] = buf.contrib_offsets[p];
        for (int tile = 0; tile < n_tiles; ++tile) {
            int tx = tile % tiles_x, ty = tile / tiles_x;
            int x0 = tx * kTileSize, y0 = ty * kTileSize;
            int x1 = std::min(x0 + kTileSize, cam.width),
                y1 = std::min(y0 + kTileSize, cam.height);
            size_t read = 0;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) {
                    size_t p = static_cast<size_t>(y) * cam.width + x;
                    std::uint32_t c =
                        tile_counts[tile][static_cast<size_t>(y - y0) * (x1 - x0) + (x - x0)];
                    for (std::uint32_t k = 0; k < c; ++k)
                        buf.contribs[cursor[p]++] = tile_contribs[tile][read++];
                }
        }
    }
    return buf;
}

// Full gradient set for a splat render.
struct SplatGradients {
    std::vector<GaussianGrads> gaussians;        // indexed like the input span
    std::vector<TriangleGradients> triangles;    // vertex gradients via barycenters
    std::vector<std::array<double, kTriangleFeatureDim>> tri_features;
    DecoderGrads mlp;
};

// Backward splatting: per-pixel compositing chain, then per-gaussian chain
// through projection, covariance, SH, and the decoder MLPs.
inline SplatGradients splat_backward(const SplatBuffers& buf,
                                     std::span<const NeuralGaussian> gaussians,
                                     std::span<const TrianglePrimitive> triangles,
                                     std::span<const std::int32_t> anchor_index,
                                     const DecoderMLP& mlp, const CameraIntrinsics& cam,
                                     const CameraPose& pose, const ImageV3& dL_dC,
                                     const SplatConfig& cfg = {}) {
    using namespace splat_detail;
    if (!buf.has_backward_state)
        throw MissingForwardState("splat_backward: forward buffers lack contributor lists");
    if (!dL_dC.same_size(buf.width, buf.height))
        throw std::invalid_argument("splat_backward: gradient image size mismatch");

    SplatGradients out;
    out.gaussians.resize(gaussians.size());
    out.triangles.resize(triangles.size());
    out.tri_features.assign(triangles.size(), {});

    // phase 1: per-pixel compositing chain -> per-projected accumulators
    struct Acc {
        Vec3 d_color{0, 0, 0};
        double d_conic_a = 0, d_conic_b = 0, d_conic_c = 0;
        double d_mean_u = 0, d_mean_v = 0;
        double d_opacity = 0;
    };
    const int tiles_x = (cam.width + kTileSize - 1) / kTileSize;
    const int tiles_y = (cam.height + kTileSize - 1) / kTileSize;
    const int n_tiles = tiles_x * tiles_y;
    std::vector<std::vector<std::pair<std::int32_t, Acc>>> tile_acc(n_tiles);
    parallel_for_chunks(n_tiles, [&](int tile) {
        int tx = tile % tiles_x, ty = tile / tiles_x;
        int x0 = tx * kTileSize, y0 = ty * kTileSize;
        int x1 = std::min(x0 + kTileSize, cam.width), y1 = std::min(y0 + kTileSize, cam.height);
        std::unordered_map<std::int32_t, Acc> acc;
        std::vector<double> trans;
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
                auto list = buf.pixel_contribs(x, y);
                if (list.empty()) continue;
                Vec3 gC = dL_dC.at(x, y);
                if (gC.x == 0 && gC.y == 0 && gC.z == 0) continue;
                size_t k = list.size();
                trans.resize(k);
                double T = 1.0;
                for (size_t i = 0; i < k; ++i) {
                    trans[i] = T;
                    T *= 1.0 - list[i].alpha_pix;
                }
                Vec3 suffix{0, 0, 0};
                for (size_t ii = k; ii-- > 0;) {
                    const auto& c = list[ii];
                    const Projected& pr = buf.projected[c.proj_index];
                    double Ti = trans[ii];
                    Acc& a = acc[c.proj_index];
                    a.d_color += gC * (Ti * c.alpha_pix);
                    double d_alpha_pix =
                        dot(gC, pr.sh.color * Ti - suffix / (1.0 - c.alpha_pix));
                    suffix += pr.sh.color * (Ti * c.alpha_pix);
                    if (c.alpha_pix >= cfg.alpha_clamp) continue;  // clamped: no local grads
                    // alpha_pix = opacity * exp(power)
                    double dx = (x + 0.5) - pr.mean2d.u;
                    double dy = (y + 0.5) - pr.mean2d.v;
                    double expw = c.alpha_pix / pr.opacity;
                    a.d_opacity += d_alpha_pix * expw;
                    double d_power = d_alpha_pix * c.alpha_pix;
                    a.d_conic_a += d_power * -0.5 * dx * dx;
                    a.d_conic_b += d_power * -dx * dy;
                    a.d_conic_c += d_power * -0.5 * dy * dy;
                    double d_dx = d_power * -(pr.conic_a * dx + pr.conic_b * dy);
                    double d_dy = d_power * -(pr.conic_b * dx + pr.conic_c * dy);
                    a.d_mean_u += -d_dx;
                    a.d_mean_v += -d_dy;
                }
            }
        }
        auto& flat = tile_acc[tile];
        flat.assign(acc.begin(), acc.end());
        std::sort(flat.begin(), flat.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
    });

    std::vector<Acc> merged(buf.projected.size());
    for (int tile = 0; tile < n_tiles; ++tile)
        for (const auto& [pi, a] : tile_acc[tile]) {
            Acc& m = merged[pi];
            m.d_color += a.d_color;
            m.d_conic_a += a.d_conic_a;
            m.d_conic_b += a.d_conic_b;
            m.d_conic_c += a.d_conic_c;
            m.d_mean_u += a.d_mean_u;
            m.d_mean_v += a.d_mean_v;
            m.d_opacity += a.d_opacity;
        }

    // phase 2: per-gaussian chain, chunked with ordered reduction
    const RigidTransform cam_from_world = pose.camera_from_world();
    const Mat3& w = cam_from_world.rotation;
    const int n_proj = static_cast<int>(buf.projected.size());
    const int chunk = 256;
    const int n_chunks = (n_proj + chunk - 1) / chunk;
    struct ChunkOut {
        std::vector<std::pair<std::int32_t, GaussianGrads>> gauss;  // projected order
        DecoderGrads mlp;
    };
    std::vector<ChunkOut> chunks(std::max(n_chunks, 1));
    parallel_for_chunks(n_chunks, [&](int ci) {
        ChunkOut& co = chunks[ci];
        for (int pi = ci * chunk; pi < std::min((ci + 1) * chunk, n_proj); ++pi) {
            const Projected& pr = buf.projected[pi];
            const Acc& a = merged[pi];
            const NeuralGaussian& g = gaussians[pr.index];
            GaussianGrads gg;

            // opacity (natural space)
            gg.d_opacity += a.d_opacity;

            // color -> sh coeffs + view dir -> position
            Vec3 d_dir{0, 0, 0};
            sh_backward(g.sh, pr.view_dir, pr.sh, a.d_color, gg.d_sh, d_dir);
            Vec3 d_pos = (d_dir - pr.view_dir * dot(pr.view_dir, d_dir)) / pr.view_dist;

            // conic -> 2D covariance
            double ca = pr.cov2d_a, cb = pr.cov2d_b, cc = pr.cov2d_c;
            double det = ca * cc - cb * cb;
            double det2 = det * det;
            double dA = a.d_conic_a, dB = a.d_conic_b, dC = a.d_conic_c;
            double d_ca = dA * (-cc * cc / det2) + dB * (cb * cc / det2) + dC * (-cb * cb / det2);
            double d_cb = dA * (2 * cb * cc / det2) + dB * (-1.0 / det - 2 * cb * cb / det2) +
                          dC * (2 * ca * cb / det2);
            double d_cc = dA * (-cb * cb / det2) + dB * (ca * cb / det2) + dC * (-ca * ca / det2);

            // 2D covariance -> Sigma3D and projection rows
            double px = pr.p_cam.x, py = pr.p_cam.y, pz = pr.p_cam.z;
            Vec3 j0{cam.fx / pz, 0, -cam.fx * px / (pz * pz)};
            Vec3 j1{0, cam.fy / pz, -cam.fy * py / (pz * pz)};
            Vec3 p0 = w.transposed() * j0;
            Vec3 p1 = w.transposed() * j1;
            Mat3 d_sigma = Mat3::outer(p0, p0) * d_ca + Mat3::outer(p0, p1) * d_cb +
                           Mat3::outer(p1, p1) * d_cc;
            Vec3 sp0 = pr.sigma3d * p0, sp1 = pr.sigma3d * p1;
            Vec3 d_p0 = sp0 * (2 * d_ca) + sp1 * d_cb;
            Vec3 d_p1 = sp1 * (2 * d_cc) + sp0 * d_cb;
            Vec3 d_j0 = w * d_p0;
            Vec3 d_j1 = w * d_p1;
            Vec3 d_pcam{0, 0, 0};
            d_pcam.x += d_j0.z * (-cam.fx / (pz * pz));
            d_pcam.z += d_j0.x * (-cam.fx / (pz * pz)) + d_j0.z * (2 * cam.fx * px / (pz * pz * pz));
            d_pcam.y += d_j1.z * (-cam.fy / (pz * pz));
            d_pcam.z += d_j1.y * (-cam.fy / (pz * pz)) + d_j1.z * (2 * cam.fy * py / (pz * pz * pz));

            // screen mean
            d_pcam.x += a.d_mean_u * cam.fx / pz;
            d_pcam.z += a.d_mean_u * (-cam.fx * px / (pz * pz));
            d_pcam.y += a.d_mean_v * cam.fy / pz;
            d_pcam.z += a.d_mean_v * (-cam.fy * py / (pz * pz));

            // Sigma3D = M M^T with M = R diag(s)
            Vec3 s = pr.decoded.scale;
            Mat3 m = pr.rot;
            for (int r = 0; r < 3; ++r) {
                m.m[r][0] *= s.x;
                m.m[r][1] *= s.y;
                m.m[r][2] *= s.z;
            }
            Mat3 d_m = (d_sigma + d_sigma.transposed()) * m;
            Mat3 d_rot = d_m;
            for (int r = 0; r < 3; ++r) {
                d_rot.m[r][0] *= s.x;
                d_rot.m[r][1] *= s.y;
                d_rot.m[r][2] *= s.z;
            }
            Vec3 d_scale{0, 0, 0};
            for (int r = 0; r < 3; ++r) {
                d_scale.x += pr.rot.m[r][0] * d_m.m[r][0];
                d_scale.y += pr.rot.m[r][1] * d_m.m[r][1];
                d_scale.z += pr.rot.m[r][2] * d_m.m[r][2];
            }

            // rotation matrix -> unit quaternion
            const Quaternion& q = pr.decoded.rotation;
            double qw = q.w, qx = q.x, qy = q.y, qz = q.z;
            const auto& dr = d_rot.m;
            std::array<double, 4> d_q{};
            d_q[0] = 2 * (dr[0][1] * -qz + dr[0][2] * qy + dr[1][0] * qz + dr[1][2] * -qx +
                          dr[2][0] * -qy + dr[2][1] * qx);
            d_q[1] = 2 * (dr[0][1] * qy + dr[0][2] * qz + dr[1][0] * qy + dr[1][1] * -2 * qx +
                          dr[1][2] * -qw + dr[2][0] * qz + dr[2][1] * qw + dr[2][2] * -2 * qx);
            d_q[2] = 2 * (dr[0][0] * -2 * qy + dr[0][1] * qx + dr[0][2] * qw + dr[1][0] * qx +
                          dr[1][2] * qz + dr[2][0] * -qw + dr[2][1] * qz + dr[2][2] * -2 * qy);
            d_q[3] = 2 * (dr[0][0] * -2 * qz + dr[0][1] * -qw + dr[0][2] * qx + dr[1][0] * qw +
                          dr[1][1] * -2 * qz + dr[1][2] * qy + dr[2][0] * qx + dr[2][1] * qy);

            // camera-space mean -> world position
            d_pos += w.transposed() * d_pcam;

            decode_backward(g, pr.decoded, mlp, d_pos, d_scale, d_q, gg, co.mlp);
            co.gauss.emplace_back(pr.index, std::move(gg));
        }
    });

    for (const ChunkOut& co : chunks) {
        out.mlp.accumulate(co.mlp);
        for (const auto& [gi, gg] : co.gauss) {
            GaussianGrads& dst = out.gaussians[gi];
            dst.d_offset += gg.d_offset;
            for (int i = 0; i < kShCoeffs; ++i) dst.d_sh[i] += gg.d_sh[i];
            dst.d_opacity += gg.d_opacity;
            dst.d_scale_base += gg.d_scale_base;
            for (int i = 0; i < 4; ++i) dst.d_base_quat[i] += gg.d_base_quat[i];
            for (int i = 0; i < kGaussianFeatureDim; ++i) dst.d_feature[i] += gg.d_feature[i];

            std::int32_t ti = anchor_index[gi];
            // barycenter gradient: each vertex receives a third
            Vec3 third = gg.d_barycenter / 3.0;
            for (int v = 0; v < 3; ++v) out.triangles[ti].d_vertices[v] += third;
            for (int i = 0; i < kTriangleFeatureDim; ++i)
                out.tri_features[ti][i] += gg.d_tri_feature[i];
        }
    }
    return out;
}

}  // namespace ts
