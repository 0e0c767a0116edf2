#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "trisplat/camera.hpp"
#include "trisplat/image.hpp"
#include "trisplat/parallel.hpp"
#include "trisplat/triangle.hpp"

namespace ts {

struct MissingForwardState : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// D(x) composites either the camera-space z of the intersection (the
// convention depth priors use) or the euclidean intersection-to-camera
// distance.
enum class DepthMode { kCameraZ, kRayDistance };

// BarycenterOnly reproduces the naive culling that drops partially visible
// triangles; it exists as an ablation baseline, not a production mode.
enum class VisibilityMode { kVertexBased, kBarycenterOnly };

struct RasterConfig {
    double near = kNearPlane;
    double subdivide_px = 4.0;     // projected edge-length target, pixels
    double subdivide_world = 0.0;  // if > 0, world-unit threshold instead
    bool subdivision_enabled = true;
    int max_subdiv_depth = 10;
    DepthMode depth_mode = DepthMode::kCameraZ;
    VisibilityMode visibility = VisibilityMode::kVertexBased;
    double w_cutoff = 1.0 / 255.0;
    double transmittance_min = 1e-4;
    bool retain_backward_state = true;
};

inline constexpr int kTileSize = 16;
inline constexpr double kBackgroundDepth = std::numeric_limits<double>::infinity();

struct SubTriangle {
    std::array<Vec3, 3> vertices;
    std::array<Vec2, 3> local;  // the same corners in the parent's local frame
    std::int32_t parent_index;  // index into the rendered triangle span
    double sort_depth;          // view-space z of the sub-triangle barycenter
};

struct PixelContrib {
    std::int32_t tri_index;
    double w;      // contribution weight after opacity
    double depth;  // composited depth value d_i
};

struct RenderBuffers {
    int width = 0, height = 0;
    ImageF depth;    // +inf where nothing composited
    ImageV3 normal;  // camera-facing orientation
    ImageF alpha;
    DepthMode depth_mode = DepthMode::kCameraZ;
    bool has_backward_state = false;
    std::vector<std::uint32_t> contrib_offsets;  // size W*H+1
    std::vector<PixelContrib> contribs;          // front-to-back per pixel

    std::span<const PixelContrib> pixel_contribs(int x, int y) const {
        size_t p = static_cast<size_t>(y) * width + x;
        return {contribs.data() + contrib_offsets[p],
                contribs.data() + contrib_offsets[p + 1]};
    }
};

// Gradients in natural parameter space (opacity, sharpness, smoothness);
// callers chain to logit/log storage.
struct TriangleGradients {
    std::array<Vec3, 3> d_vertices{};
    double d_opacity = 0, d_sharpness = 0, d_smoothness = 0;

    TriangleGradients& operator+=(const TriangleGradients& o) {
        for (int k = 0; k < 3; ++k) d_vertices[k] += o.d_vertices[k];
        d_opacity += o.d_opacity;
        d_sharpness += o.d_sharpness;
        d_smoothness += o.d_smoothness;
        return *this;
    }
};

// Signed "distances" from local point (u, v) to the three edges (polynomial
// form; exact zeros on the edges, -1 at the barycenter).
inline std::array<double, 3> edge_distances(const Vec2& x, double a) {
    return {x.u + (1.0 - a) * x.v - 1.0,
            -2.0 * x.u + (2.0 * a + 1.0) * x.v - 1.0,
            x.u + (-2.0 - a) * x.v - 1.0};
}

// Edge-preserving contribution: sigmoid(-smoothness * logsumexp(sharpness *
// dist_j)) * opacity, evaluated with a max shift so large sharpness cannot
// overflow.
inline double contribution(const Vec2& x, double a, double opacity, double sharpness,
                           double smoothness) {
    auto d = edge_distances(x, a);
    double m = std::max(d[0], std::max(d[1], d[2])) * sharpness;
    double s = std::exp(sharpness * d[0] - m) + std::exp(sharpness * d[1] - m) +
               std::exp(sharpness * d[2] - m);
    double lse = m + std::log(s);
    return sigmoid(-smoothness * lse) * opacity;
}

struct ParallelRay : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Intersection {
    Vec2 local;           // (u, v) on the original triangle's plane
    double ray_distance;  // euclidean distance from camera center
    double camera_z;
};

// Exact ray/plane intersection expressed in the triangle's local frame.
// cam_fwd is the camera's +z axis in world coordinates.
inline Intersection intersect(const LocalFrame& f, const Ray& ray, const Vec3& cam_fwd,
                              double near = kNearPlane) {
    double denom = dot(f.n, ray.dir);
    if (std::fabs(denom) <= 1e-9) throw ParallelRay("intersect: ray parallel to triangle plane");
    double t = dot(f.n, f.origin - ray.origin) / denom;
    double dz = t * dot(cam_fwd, ray.dir);
    if (dz <= near) throw BehindCamera("intersect: intersection behind near plane");
    Vec3 q = ray.origin + ray.dir * t - f.origin;
    return {{dot(f.t_u, q) / f.s_u, dot(f.t_v, q) / f.s_v}, t, dz};
}

namespace raster_detail {

struct ParentCache {
    LocalFrame frame;
    Vec3 mu_minus_origin;  // barycenter - camera center
    double tnum;           // dot(n, mu - o)
    double opacity, sharpness, smoothness;
    double margin_local;   // euclidean falloff margin in local units
    bool valid = false;
};

struct ContribEval {
    bool hit = false;
    double w = 0, d = 0, t = 0;
    double u = 0, v = 0;
    double orient = 1.0;  // +-1 flip that makes the normal face the camera
    Vec3 n;
};

inline ContribEval eval_contribution(const ParentCache& pc, const Ray& ray, double fdotr,
                                     const RasterConfig& cfg) {
    ContribEval e;
    const LocalFrame& f = pc.frame;
    double denom = dot(f.n, ray.dir);
    if (std::fabs(denom) <= 1e-9) return e;
    double t = pc.tnum / denom;
    double dz = t * fdotr;
    if (dz <= cfg.near) return e;
    Vec3 q = ray.dir * t - pc.mu_minus_origin;  // intersection - barycenter
    double u = dot(f.t_u, q) / f.s_u;
    double v = dot(f.t_v, q) / f.s_v;
    e.w = contribution({u, v}, f.a, pc.opacity, pc.sharpness, pc.smoothness);
    e.d = cfg.depth_mode == DepthMode::kCameraZ ? dz : t;
    e.t = t;
    e.u = u;
    e.v = v;
    e.orient = denom < 0 ? 1.0 : -1.0;
    e.n = f.n * e.orient;
    e.hit = true;
    return e;
}

// Reverse-mode chain for a single pixel contributor: upstream gradients on
// (w, d, composited normal) down to vertices and opacity/sharpness/smoothness.
// Mirrors eval_contribution step by step.
inline void contributor_backward(const std::array<Vec3, 3>& p, const ParentCache& pc,
                                 const Ray& ray, double fdotr, const RasterConfig& cfg,
                                 double dw_in, double dd_in, const Vec3& dn_in,
                                 TriangleGradients& g) {
    const LocalFrame& f = pc.frame;
    const double s_u = f.s_u, s_v = f.s_v, a = f.a;
    const double alpha = pc.opacity, delta = pc.sharpness, sigma = pc.smoothness;

    // Recompute forward intermediates.
    double denom = dot(f.n, ray.dir);
    double t = pc.tnum / denom;
    Vec3 q = ray.dir * t - pc.mu_minus_origin;
    double u = dot(f.t_u, q) / s_u;
    double v = dot(f.t_v, q) / s_v;
    double D0 = u + (1.0 - a) * v - 1.0;
    double D1 = -2.0 * u + (2.0 * a + 1.0) * v - 1.0;
    double D2 = u + (-2.0 - a) * v - 1.0;
    double m = std::max(D0, std::max(D1, D2)) * delta;
    double e0 = std::exp(delta * D0 - m), e1 = std::exp(delta * D1 - m),
           e2 = std::exp(delta * D2 - m);
    double S = e0 + e1 + e2;
    double lse = m + std::log(S);
    double sgm = sigmoid(-sigma * lse);

    // w = sgm * alpha
    g.d_opacity += dw_in * sgm;
    double dsgm = dw_in * alpha;
    // sgm = sigmoid(z), z = -sigma * lse
    double dz_arg = dsgm * sgm * (1.0 - sgm);
    g.d_smoothness += dz_arg * (-lse);
    double dlse = dz_arg * (-sigma);
    // lse = logsumexp(delta * D_j)
    double pi0 = e0 / S, pi1 = e1 / S, pi2 = e2 / S;
    g.d_sharpness += dlse * (pi0 * D0 + pi1 * D1 + pi2 * D2);
    double dD0 = dlse * pi0 * delta, dD1 = dlse * pi1 * delta, dD2 = dlse * pi2 * delta;
    // distance polynomials
    double du = dD0 - 2.0 * dD1 + dD2;
    double dv = dD0 * (1.0 - a) + dD1 * (2.0 * a + 1.0) + dD2 * (-2.0 - a);
    double da = v * (-dD0 + 2.0 * dD1 - dD2);
    // depth
    double dt = cfg.depth_mode == DepthMode::kCameraZ ? dd_in * fdotr : dd_in;
    // u = t_u.q / s_u, v = t_v.q / s_v, q = t*r - (mu - o)
    Vec3 dq = f.t_u * (du / s_u) + f.t_v * (dv / s_v);
    Vec3 dt_u = q * (du / s_u);
    Vec3 dt_v = q * (dv / s_v);
    double ds_u = -du * u / s_u;
    double ds_v = -dv * v / s_v;
    Vec3 dmu = -dq;
    dt += dot(dq, ray.dir);
    // t = tnum / denom with tnum = n.(mu - o), denom = n.r
    double dtnum = dt / denom;
    double ddenom = -dt * t / denom;
    Vec3 dn = pc.mu_minus_origin * dtnum + ray.dir * ddenom;
    dmu += f.n * dtnum;
    // composited normal is orient * n
    dn += dn_in * (denom < 0 ? 1.0 : -1.0);
    // a = (t_u.h)/s_u and s_v = t_v.h with h = p1 - mu
    Vec3 h = p[1] - f.origin;
    Vec3 dh = f.t_u * (da / s_u);
    dt_u += h * (da / s_u);
    ds_u += -da * a / s_u;
    dt_v += h * ds_v;
    dh += f.t_v * ds_v;
    // t_v = n x t_u
    dn += cross(f.t_u, dt_v);
    dt_u += cross(dt_v, f.n);
    // t_u = g/|g|, s_u = |g|, g = p0 - mu
    Vec3 dg = (dt_u - f.t_u * dot(f.t_u, dt_u)) / s_u + f.t_u * ds_u;
    g.d_vertices[0] += dg;
    dmu -= dg;
    // n = c/|c|, c = (p1-p0) x (p2-p0)
    Vec3 edge1 = p[1] - p[0], edge2 = p[2] - p[0];
    Vec3 c = cross(edge1, edge2);
    double cn = norm(c);
    Vec3 dc = (dn - f.n * dot(f.n, dn)) / cn;
    Vec3 de1 = cross(edge2, dc);
    Vec3 de2 = cross(dc, edge1);
    g.d_vertices[1] += de1;
    g.d_vertices[0] -= de1;
    g.d_vertices[2] += de2;
    g.d_vertices[0] -= de2;
    // h = p1 - mu
    g.d_vertices[1] += dh;
    dmu -= dh;
    // mu = (p0 + p1 + p2)/3
    Vec3 third = dmu / 3.0;
    g.d_vertices[0] += third;
    g.d_vertices[1] += third;
    g.d_vertices[2] += third;
}

struct TileEntry {
    double depth;
    std::int32_t parent;
    std::array<Vec2, 3> local;  // sub-triangle corners in parent-local coords
};

// Depth-sorted tile bin plus a per-parent index so a pixel can pick the
// sub-triangle that actually contains its intersection point.
struct TileBin {
    std::vector<TileEntry> entries;  // ascending by (depth, parent)
    struct Group {
        std::int32_t parent;
        std::uint32_t begin, end;  // range in group_indices
    };
    std::vector<Group> groups;
    std::vector<std::uint32_t> group_indices;  // entry indices, depth order

    void build_groups() {
        groups.clear();
        group_indices.clear();
        if (entries.empty()) return;
        std::unordered_map<std::int32_t, std::uint32_t> slot;
        std::vector<std::vector<std::uint32_t>> lists;
        for (std::uint32_t i = 0; i < entries.size(); ++i) {
            auto [it, fresh] = slot.emplace(entries[i].parent,
                                            static_cast<std::uint32_t>(lists.size()));
            if (fresh) lists.emplace_back();
            lists[it->second].push_back(i);
        }
        // first-occurrence order over the depth-sorted entries: deterministic
        std::vector<std::int32_t> order;
        {
            std::unordered_map<std::int32_t, char> seen;
            for (const TileEntry& e : entries)
                if (seen.emplace(e.parent, 1).second) order.push_back(e.parent);
        }
        for (std::int32_t p : order) {
            auto& lst = lists[slot[p]];
            Group g{p, static_cast<std::uint32_t>(group_indices.size()),
                    static_cast<std::uint32_t>(group_indices.size() + lst.size())};
            group_indices.insert(group_indices.end(), lst.begin(), lst.end());
            groups.push_back(g);
        }
    }
};

// Signed distance of local point to each sub-triangle edge (positive inside;
// sub-triangles inherit the parent's CCW orientation in local coordinates).
inline double local_inside_margin(const std::array<Vec2, 3>& tri, double u, double v) {
    double worst = 1e300;
    for (int k = 0; k < 3; ++k) {
        const Vec2& a = tri[k];
        const Vec2& b = tri[(k + 1) % 3];
        double eu = b.u - a.u, ev = b.v - a.v;
        double len = std::sqrt(eu * eu + ev * ev);
        double cross_z = eu * (v - a.v) - ev * (u - a.u);
        worst = std::min(worst, cross_z / std::max(len, 1e-300));
    }
    return worst;
}

struct PixelAabb {
    int x0, y0, x1, y1;  // inclusive pixel bounds
    bool empty;
};

inline ParentCache make_parent_cache(const TrianglePrimitive& tri, const Vec3& cam_center,
                                     const RasterConfig& cfg) {
    ParentCache pc;
    Vec3 c = tri.raw_normal();
    if (norm(c) <= kDegenerateCrossNorm) return pc;  // degenerate: silently skipped
    pc.frame = local_frame(tri.vertices);
    pc.mu_minus_origin = pc.frame.origin - cam_center;
    pc.tnum = dot(pc.frame.n, pc.mu_minus_origin);
    pc.opacity = tri.opacity();
    pc.sharpness = tri.sharpness();
    pc.smoothness = tri.smoothness();
    // Local euclidean distance beyond which w < cutoff even at opacity 1:
    // poly distance ~ ln(1/cutoff)/(sigma*delta), gradient norm of the
    // polynomials >= 1.
    double sd = pc.smoothness * pc.sharpness;
    pc.margin_local = std::min(std::log(1.0 / cfg.w_cutoff) / std::max(sd, 1e-6), 32.0);
    pc.valid = true;
    return pc;
}

inline double subdivision_threshold(const CameraIntrinsics& cam, const RasterConfig& cfg,
                                    double view_z) {
    if (cfg.subdivide_world > 0) return cfg.subdivide_world;
    double f = 0.5 * (cam.fx + cam.fy);
    return cfg.subdivide_px * std::max(view_z, cfg.near) / f;
}

inline void subdivide_recursive(const std::array<Vec3, 3>& v, const std::array<Vec2, 3>& l,
                                std::int32_t parent, const CameraIntrinsics& cam,
                                const RigidTransform& cam_from_world, const RasterConfig& cfg,
                                int depth, std::vector<SubTriangle>& out) {
    Vec3 bary = (v[0] + v[1] + v[2]) / 3.0;
    double view_z = cam_from_world.apply(bary).z;
    double e0 = norm(v[1] - v[0]), e1 = norm(v[2] - v[1]), e2 = norm(v[0] - v[2]);
    double longest = std::max(e0, std::max(e1, e2));
    if (!cfg.subdivision_enabled || depth >= cfg.max_subdiv_depth ||
        longest <= subdivision_threshold(cam, cfg, view_z)) {
        out.push_back({v, l, parent, view_z});
        return;
    }
    Vec3 m01 = (v[0] + v[1]) * 0.5, m12 = (v[1] + v[2]) * 0.5, m20 = (v[2] + v[0]) * 0.5;
    Vec2 l01 = (l[0] + l[1]) * 0.5, l12 = (l[1] + l[2]) * 0.5, l20 = (l[2] + l[0]) * 0.5;
    subdivide_recursive({v[0], m01, m20}, {l[0], l01, l20}, parent, cam, cam_from_world, cfg,
                        depth + 1, out);
    subdivide_recursive({m01, v[1], m12}, {l01, l[1], l12}, parent, cam, cam_from_world, cfg,
                        depth + 1, out);
    subdivide_recursive({m20, m12, v[2]}, {l20, l12, l[2]}, parent, cam, cam_from_world, cfg,
                        depth + 1, out);
    subdivide_recursive({m01, m12, m20}, {l01, l12, l20}, parent, cam, cam_from_world, cfg,
                        depth + 1, out);
}

// Conservative pixel AABB of a sub-triangle, inflated by the falloff margin.
// Sub-triangles straddling the near plane cover the whole image; fully-behind
// ones are dropped (the per-pixel depth guard makes over-binning harmless).
inline PixelAabb project_aabb(const SubTriangle& st, const CameraIntrinsics& cam,
                              const CameraPose& pose, const RasterConfig& cfg,
                              double margin_world) {
    PixelAabb box{0, 0, cam.width - 1, cam.height - 1, false};
    double minu = 1e300, minv = 1e300, maxu = -1e300, maxv = -1e300;
    double min_z = 1e300;
    int behind = 0;
    for (const Vec3& v : st.vertices) {
        PixelProjection pp;
        if (!try_project(cam, pose, v, pp, cfg.near)) {
            ++behind;
            continue;
        }
        minu = std::min(minu, pp.pixel.u);
        maxu = std::max(maxu, pp.pixel.u);
        minv = std::min(minv, pp.pixel.v);
        maxv = std::max(maxv, pp.pixel.v);
        min_z = std::min(min_z, pp.depth);
    }
    if (behind == 3) {
        box.empty = true;
        return box;
    }
    if (behind > 0) return box;  // straddles: conservative full-image bin
    double margin_px =
        margin_world * 0.5 * (cam.fx + cam.fy) / std::max(min_z, cfg.near) + 1.0;
    box.x0 = std::max(0, static_cast<int>(std::floor(minu - margin_px)));
    box.y0 = std::max(0, static_cast<int>(std::floor(minv - margin_px)));
    box.x1 = std::min(cam.width - 1, static_cast<int>(std::ceil(maxu + margin_px)));
    box.y1 = std::min(cam.height - 1, static_cast<int>(std::ceil(maxv + margin_px)));
    box.empty = box.x0 > box.x1 || box.y0 > box.y1;
    return box;
}

}  // namespace raster_detail

// Subdivision-aware forward rendering: vertex-based visibility culling,
// recursive subdivision for depth-sort keys, 16x16 tile binning with stable
// per-tile depth sort, and per-pixel front-to-back compositing where each
// surviving parent is evaluated once (at its front-most sub-triangle) via
// exact ray/plane intersection against the original triangle.
inline RenderBuffers forward_render(std::span<const TrianglePrimitive> triangles,
                                    const CameraIntrinsics& cam, const CameraPose& pose,
                                    const RasterConfig& cfg = {}) {
    using namespace raster_detail;
    RenderBuffers buf;
    buf.width = cam.width;
    buf.height = cam.height;
    buf.depth = ImageF(cam.width, cam.height, kBackgroundDepth);
    buf.normal = ImageV3(cam.width, cam.height, Vec3{0, 0, 0});
    buf.alpha = ImageF(cam.width, cam.height, 0.0);
    buf.depth_mode = cfg.depth_mode;
    buf.has_backward_state = cfg.retain_backward_state;

    const int n_tri = static_cast<int>(triangles.size());
    const RigidTransform cam_from_world = pose.camera_from_world();
    const Vec3 cam_center = pose.center();

    // 1. visibility cull + parent caches
    std::vector<ParentCache> caches(n_tri);
    std::vector<char> kept(n_tri, 0);
    for (int i = 0; i < n_tri; ++i) {
        bool visible = false;
        if (cfg.visibility == VisibilityMode::kVertexBased) {
            for (const Vec3& v : triangles[i].vertices)
                if (vertex_visible(cam, pose, v, cfg.near)) { visible = true; break; }
        } else {
            visible = vertex_visible(cam, pose, triangles[i].barycenter(), cfg.near);
        }
        if (!visible) continue;
        caches[i] = make_parent_cache(triangles[i], cam_center, cfg);
        kept[i] = caches[i].valid ? 1 : 0;
    }

    // 2. subdivision
    std::vector<SubTriangle> subtris;
    for (int i = 0; i < n_tri; ++i) {
        if (!kept[i]) continue;
        double a = caches[i].frame.a;
        std::array<Vec2, 3> local = {Vec2{1, 0}, Vec2{a, 1}, Vec2{-1 - a, -1}};
        subdivide_recursive(triangles[i].vertices, local, i, cam, cam_from_world, cfg, 0,
                            subtris);
    }

    // 3. tile binning with (depth, tile) keys
    const int tiles_x = (cam.width + kTileSize - 1) / kTileSize;
    const int tiles_y = (cam.height + kTileSize - 1) / kTileSize;
    std::vector<TileBin> bins(static_cast<size_t>(tiles_x) * tiles_y);
    for (const SubTriangle& st : subtris) {
        const ParentCache& pc = caches[st.parent_index];
        double margin_world = pc.margin_local * std::max(pc.frame.s_u, pc.frame.s_v);
        PixelAabb box = project_aabb(st, cam, pose, cfg, margin_world);
        if (box.empty) continue;
        TileEntry entry{st.sort_depth, st.parent_index, st.local};
        for (int ty = box.y0 / kTileSize; ty <= box.y1 / kTileSize; ++ty)
            for (int tx = box.x0 / kTileSize; tx <= box.x1 / kTileSize; ++tx)
                bins[static_cast<size_t>(ty) * tiles_x + tx].entries.push_back(entry);
    }

    // 4. per-tile stable depth sort + per-parent index
    const int n_tiles = tiles_x * tiles_y;
    parallel_for_chunks(n_tiles, [&](int tile) {
        auto& bin = bins[tile];
        std::stable_sort(bin.entries.begin(), bin.entries.end(),
                         [](const TileEntry& a, const TileEntry& b) {
                             return a.depth < b.depth ||
                                    (a.depth == b.depth && a.parent < b.parent);
                         });
        bin.build_groups();
    });

    // 5. per-pixel compositing, tile-parallel
    std::vector<std::vector<std::uint32_t>> tile_counts(n_tiles);
    std::vector<std::vector<PixelContrib>> tile_contribs(n_tiles);
    const Vec3 fwd = pose.forward();
    parallel_for_chunks(n_tiles, [&](int tile) {
        const auto& bin = bins[tile];
        int tx = tile % tiles_x, ty = tile / tiles_x;
        int x0 = tx * kTileSize, y0 = ty * kTileSize;
        int x1 = std::min(x0 + kTileSize, cam.width), y1 = std::min(y0 + kTileSize, cam.height);
        auto& counts = tile_counts[tile];
        auto& store = tile_contribs[tile];
        counts.assign(static_cast<size_t>(x1 - x0) * (y1 - y0), 0);
        struct Candidate {
            double key;
            std::int32_t parent;
            double u, v, t, dz;
            double orient;
        };
        std::vector<Candidate> cand;
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
                Ray ray = pixel_ray(cam, pose, x + 0.5, y + 0.5);
                double fdotr = dot(fwd, ray.dir);
                cand.clear();
                for (const TileBin::Group& grp : bin.groups) {
                    const ParentCache& pc = caches[grp.parent];
                    const LocalFrame& f = pc.frame;
                    double denom = dot(f.n, ray.dir);
                    if (std::fabs(denom) <= 1e-9) continue;
                    double t = pc.tnum / denom;
                    double dz = t * fdotr;
                    if (dz <= cfg.near) continue;
                    Vec3 q = ray.dir * t - pc.mu_minus_origin;
                    double u = dot(f.t_u, q) / f.s_u;
                    double v = dot(f.t_v, q) / f.s_v;
                    // effective sort key: the sub-triangle containing the
                    // intersection; silhouette pixels fall back to the first
                    // entry within the falloff margin
                    double key = 0;
                    bool found = false;
                    for (std::uint32_t gi = grp.begin; gi < grp.end && !found; ++gi) {
                        const TileEntry& e = bin.entries[bin.group_indices[gi]];
                        if (local_inside_margin(e.local, u, v) >= 0) {
                            key = e.depth;
                            found = true;
                        }
                    }
                    if (!found) {
                        for (std::uint32_t gi = grp.begin; gi < grp.end && !found; ++gi) {
                            const TileEntry& e = bin.entries[bin.group_indices[gi]];
                            if (local_inside_margin(e.local, u, v) >= -pc.margin_local) {
                                key = e.depth;
                                found = true;
                            }
                        }
                    }
                    if (!found) continue;
                    cand.push_back({key, grp.parent, u, v, t, dz, denom < 0 ? 1.0 : -1.0});
                }
                std::sort(cand.begin(), cand.end(), [](const Candidate& a, const Candidate& b) {
                    return a.key < b.key || (a.key == b.key && a.parent < b.parent);
                });
                double T = 1.0, D = 0.0, A = 0.0;
                Vec3 N{0, 0, 0};
                std::uint32_t count = 0;
                for (const Candidate& c : cand) {
                    const ParentCache& pc = caches[c.parent];
                    double w = contribution({c.u, c.v}, pc.frame.a, pc.opacity, pc.sharpness,
                                            pc.smoothness);
                    if (w < cfg.w_cutoff) continue;
                    double d = cfg.depth_mode == DepthMode::kCameraZ ? c.dz : c.t;
                    Vec3 n = pc.frame.n * c.orient;
                    D += T * w * d;
                    N += n * (T * w);
                    A += T * w;
                    if (cfg.retain_backward_state) {
                        store.push_back({c.parent, w, d});
                        ++count;
                    }
                    T *= 1.0 - w;
                    if (T < cfg.transmittance_min) break;
                }
                if (A > 0.0) {
                    buf.depth.at(x, y) = D;
                    buf.normal.at(x, y) = N;
                    buf.alpha.at(x, y) = A;
                }
                if (cfg.retain_backward_state)
                    counts[static_cast<size_t>(y - y0) * (x1 - x0) + (x - x0)] = count;
            }
        }
    });

    // flatten per-pixel contributor lists (sequential, tile order fixed)
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

// Backpropagates per-pixel depth/normal gradients through the compositing
// chain down to triangle vertices and opacity/sharpness/smoothness.
inline std::vector<TriangleGradients> backward_render(
    const RenderBuffers& buf, const ImageF& dL_dD, const ImageV3& dL_dN,
    std::span<const TrianglePrimitive> triangles, const CameraIntrinsics& cam,
    const CameraPose& pose, const RasterConfig& cfg = {}) {
    using namespace raster_detail;
    if (!buf.has_backward_state)
        throw MissingForwardState("backward_render: forward buffers lack contributor lists");
    if (!dL_dD.same_size(buf.width, buf.height) || !dL_dN.same_size(buf.width, buf.height))
        throw std::invalid_argument("backward_render: gradient image size mismatch");

    const int n_tri = static_cast<int>(triangles.size());
    const Vec3 cam_center = pose.center();
    const Vec3 fwd = pose.forward();
    std::vector<ParentCache> caches(n_tri);
    std::vector<char> cached(n_tri, 0);
    for (const PixelContrib& c : buf.contribs) {
        if (!cached[c.tri_index]) {
            caches[c.tri_index] = make_parent_cache(triangles[c.tri_index], cam_center, cfg);
            cached[c.tri_index] = 1;
        }
    }

    const int tiles_x = (cam.width + kTileSize - 1) / kTileSize;
    const int tiles_y = (cam.height + kTileSize - 1) / kTileSize;
    const int n_tiles = tiles_x * tiles_y;

    // tile-local accumulation, merged in tile order for determinism
    std::vector<std::vector<std::pair<std::int32_t, TriangleGradients>>> tile_grads(n_tiles);
    parallel_for_chunks(n_tiles, [&](int tile) {
        int tx = tile % tiles_x, ty = tile / tiles_x;
        int x0 = tx * kTileSize, y0 = ty * kTileSize;
        int x1 = std::min(x0 + kTileSize, cam.width), y1 = std::min(y0 + kTileSize, cam.height);
        std::unordered_map<std::int32_t, TriangleGradients> acc;
        std::vector<ContribEval> evals;
        std::vector<double> trans;
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
                auto list = buf.pixel_contribs(x, y);
                if (list.empty()) continue;
                double gD = dL_dD.at(x, y);
                Vec3 gN = dL_dN.at(x, y);
                if (gD == 0.0 && gN.x == 0.0 && gN.y == 0.0 && gN.z == 0.0) continue;
                Ray ray = pixel_ray(cam, pose, x + 0.5, y + 0.5);
                double fdotr = dot(fwd, ray.dir);
                size_t k = list.size();
                evals.resize(k);
                trans.resize(k);
                double T = 1.0;
                for (size_t i = 0; i < k; ++i) {
                    evals[i] = eval_contribution(caches[list[i].tri_index], ray, fdotr, cfg);
                    trans[i] = T;
                    T *= 1.0 - list[i].w;
                }
                double SD = 0;
                Vec3 SN{0, 0, 0};
                for (size_t ii = k; ii-- > 0;) {
                    const PixelContrib& c = list[ii];
                    const ContribEval& ev = evals[ii];
                    double Ti = trans[ii];
                    double dd = gD * Ti * c.w;
                    Vec3 dnv = gN * (Ti * c.w);
                    double one_minus_w = 1.0 - c.w;
                    double dw = gD * (Ti * c.depth - SD / one_minus_w) +
                                dot(gN, ev.n * Ti - SN / one_minus_w);
                    contributor_backward(triangles[c.tri_index].vertices, caches[c.tri_index],
                                         ray, fdotr, cfg, dw, dd, dnv, acc[c.tri_index]);
                    SD += Ti * c.w * c.depth;
                    SN += ev.n * (Ti * c.w);
                }
            }
        }
        auto& out = tile_grads[tile];
        out.assign(acc.begin(), acc.end());
        std::sort(out.begin(), out.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
    });

    std::vector<TriangleGradients> grads(n_tri);
    for (int tile = 0; tile < n_tiles; ++tile)
        for (const auto& [idx, g] : tile_grads[tile]) grads[idx] += g;
    return grads;
}

}  // namespace ts
