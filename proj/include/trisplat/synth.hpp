#pragma once

#include <vector>

#include "trisplat/mapper.hpp"
#include "trisplat/rng.hpp"

namespace ts {

// Finite textured rectangle; the ground-truth geometry unit.
struct GtPlane {
    Vec3 center;
    Vec3 normal;          // unit, faces the room interior
    Vec3 axis_u, axis_v;  // in-plane unit axes
    double half_u, half_v;
    int material = 0;
};

// Axis-aligned room (z-up, floor at z=0) with optional boxes. Albedo is a
// procedural mix of checker, gradient, and value-noise octaves; shading is
// Lambertian under one fixed directional light.
struct SyntheticScene {
    std::vector<GtPlane> planes;
    Vec3 room_min{0, 0, 0}, room_max{4, 3, 2.5};
    std::uint64_t texture_seed = 1;
    Vec3 light_dir = normalized(Vec3{0.35, 0.55, -0.76});
    double ambient = 0.45, diffuse = 0.55;
    double checker_cells = 6.0;       // cells across a plane's u extent
    double checker_contrast = 0.3;
    double noise_amplitude = 0.5;
    double noise_cells = 80.0;

    Vec3 room_center() const { return (room_min + room_max) * 0.5; }
    double extent() const { return norm(room_max - room_min); }
};

namespace synth_detail {

inline double hash01(std::uint64_t seed, std::int64_t x, std::int64_t y, int octave,
                     int material) {
    std::uint64_t h = seed;
    h ^= static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ull;
    h = (h ^ (h >> 30)) * 0xBF58476D1CE4E5B9ull;
    h ^= static_cast<std::uint64_t>(y) * 0xC2B2AE3D27D4EB4Full;
    h = (h ^ (h >> 27)) * 0x94D049BB133111EBull;
    h ^= static_cast<std::uint64_t>(octave * 31 + material * 131);
    h = (h ^ (h >> 31)) * 0xD6E8FEB86659FD93ull;
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline double value_noise(std::uint64_t seed, double u, double v, int octave, int material) {
    double fx = std::floor(u), fy = std::floor(v);
    std::int64_t ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
    double tx = u - fx, ty = v - fy;
    double sx = tx * tx * (3 - 2 * tx), sy = ty * ty * (3 - 2 * ty);  // smoothstep
    double a = hash01(seed, ix, iy, octave, material);
    double b = hash01(seed, ix + 1, iy, octave, material);
    double c = hash01(seed, ix, iy + 1, octave, material);
    double d = hash01(seed, ix + 1, iy + 1, octave, material);
    return a + (b - a) * sx + (c - a) * sy + (a - b - c + d) * sx * sy;
}

inline const Vec3 kPalette[8] = {
    {0.62, 0.55, 0.48}, {0.50, 0.58, 0.65}, {0.66, 0.60, 0.45}, {0.52, 0.62, 0.52},
    {0.60, 0.50, 0.56}, {0.55, 0.55, 0.62}, {0.64, 0.58, 0.52}, {0.48, 0.56, 0.60}};

}  // namespace synth_detail

inline Vec3 plane_albedo(const SyntheticScene& sc, const GtPlane& pl, double u, double v) {
    using namespace synth_detail;
    // u, v in [-half_u, half_u] x [-half_v, half_v]
    double cu = (u + pl.half_u) / (2 * pl.half_u) * sc.checker_cells;
    double cv = (v + pl.half_v) / (2 * pl.half_u) * sc.checker_cells;  // square cells
    int checker = (static_cast<int>(std::floor(cu)) + static_cast<int>(std::floor(cv))) & 1;
    double shade = checker ? 1.0 + sc.checker_contrast : 1.0 - sc.checker_contrast;

    double nu = (u + pl.half_u) / (2 * pl.half_u) * sc.noise_cells;
    double nv = (v + pl.half_v) / (2 * pl.half_u) * sc.noise_cells;
    double noise = 0.65 * value_noise(sc.texture_seed, nu, nv, 0, pl.material) +
                   0.35 * value_noise(sc.texture_seed, nu * 3.1, nv * 3.1, 1, pl.material);
    double gradient = 0.08 * ((u + pl.half_u) / (2 * pl.half_u) - 0.5);

    Vec3 base = kPalette[pl.material & 7];
    Vec3 c = base * shade + Vec3{1, 1, 1} * (sc.noise_amplitude * (noise - 0.5) + gradient);
    return {std::clamp(c.x, 0.0, 1.0), std::clamp(c.y, 0.0, 1.0), std::clamp(c.z, 0.0, 1.0)};
}

inline Vec3 plane_shaded(const SyntheticScene& sc, const GtPlane& pl, double u, double v) {
    Vec3 albedo = plane_albedo(sc, pl, u, v);
    double lambert = std::max(0.0, dot(pl.normal, -sc.light_dir));
    return albedo * (sc.ambient + sc.diffuse * lambert);
}

// Rectangle helper with inward normal and consistent in-plane axes.
inline GtPlane make_rect(const Vec3& center, const Vec3& normal, const Vec3& axis_u,
                         double half_u, double half_v, int material) {
    GtPlane p;
    p.center = center;
    p.normal = normalized(normal);
    p.axis_u = normalized(axis_u);
    p.axis_v = cross(p.normal, p.axis_u);
    p.half_u = half_u;
    p.half_v = half_v;
    p.material = material;
    return p;
}

inline SyntheticScene make_room(double wx = 4.0, double wy = 3.0, double wz = 2.5,
                                std::uint64_t texture_seed = 1) {
    SyntheticScene sc;
    sc.room_min = {0, 0, 0};
    sc.room_max = {wx, wy, wz};
    sc.texture_seed = texture_seed;
    double hx = wx / 2, hy = wy / 2, hz = wz / 2;
    Vec3 c = sc.room_center();
    sc.planes = {
        make_rect({c.x, c.y, 0}, {0, 0, 1}, {1, 0, 0}, hx, hy, 0),    // floor
        make_rect({c.x, c.y, wz}, {0, 0, -1}, {1, 0, 0}, hx, hy, 1),  // ceiling
        make_rect({0, c.y, c.z}, {1, 0, 0}, {0, 1, 0}, hy, hz, 2),    // x- wall
        make_rect({wx, c.y, c.z}, {-1, 0, 0}, {0, 1, 0}, hy, hz, 3),  // x+ wall
        make_rect({c.x, 0, c.z}, {0, 1, 0}, {1, 0, 0}, hx, hz, 4),    // y- wall
        make_rect({c.x, wy, c.z}, {0, -1, 0}, {1, 0, 0}, hx, hz, 5),  // y+ wall
    };
    return sc;
}

// Adds an axis-aligned box (five visible faces, the base is skipped).
inline void add_box(SyntheticScene& sc, const Vec3& mn, const Vec3& mx, int material) {
    Vec3 c = (mn + mx) * 0.5;
    Vec3 h = (mx - mn) * 0.5;
    sc.planes.push_back(make_rect({c.x, c.y, mx.z}, {0, 0, 1}, {1, 0, 0}, h.x, h.y, material));
    sc.planes.push_back(make_rect({mn.x, c.y, c.z}, {-1, 0, 0}, {0, 1, 0}, h.y, h.z, material));
    sc.planes.push_back(make_rect({mx.x, c.y, c.z}, {1, 0, 0}, {0, 1, 0}, h.y, h.z, material));
    sc.planes.push_back(make_rect({c.x, mn.y, c.z}, {0, -1, 0}, {1, 0, 0}, h.x, h.z, material));
    sc.planes.push_back(make_rect({c.x, mx.y, c.z}, {0, 1, 0}, {1, 0, 0}, h.x, h.z, material));
}

struct RayHit {
    bool hit = false;
    double t = 1e300;
    int plane = -1;
    double u = 0, v = 0;
};

inline RayHit raycast(const SyntheticScene& sc, const Vec3& origin, const Vec3& dir,
                      double near = kNearPlane) {
    RayHit best;
    for (size_t i = 0; i < sc.planes.size(); ++i) {
        const GtPlane& pl = sc.planes[i];
        double denom = dot(pl.normal, dir);
        if (denom >= -1e-12) continue;  // back side or parallel
        double t = dot(pl.normal, pl.center - origin) / denom;
        if (t <= near || t >= best.t) continue;
        Vec3 p = origin + dir * t;
        double u = dot(pl.axis_u, p - pl.center);
        double v = dot(pl.axis_v, p - pl.center);
        if (std::fabs(u) > pl.half_u || std::fabs(v) > pl.half_v) continue;
        best = {true, t, static_cast<int>(i), u, v};
    }
    return best;
}

// Exact ray-cast renderer producing the image plus prior maps that stand in
// for the feed-forward backend (confidence 1 everywhere a plane is hit).
inline Keyframe render_ground_truth(const SyntheticScene& sc, const CameraPose& pose,
                                    const CameraIntrinsics& cam, std::int64_t id = -1) {
    Keyframe kf;
    kf.id = id;
    kf.pose = pose;
    kf.intrinsics = cam;
    kf.image = ImageV3(cam.width, cam.height, Vec3{0, 0, 0});
    kf.depth_prior = ImageF(cam.width, cam.height, 0.0);
    kf.normal_prior = ImageV3(cam.width, cam.height, Vec3{0, 0, 0});
    kf.confidence = ImageF(cam.width, cam.height, 0.0);
    Vec3 fwd = pose.forward();
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            Ray ray = pixel_ray(cam, pose, x + 0.5, y + 0.5);
            RayHit hit = raycast(sc, ray.origin, ray.dir);
            if (!hit.hit) continue;
            const GtPlane& pl = sc.planes[hit.plane];
            kf.image.at(x, y) = plane_shaded(sc, pl, hit.u, hit.v);
            kf.depth_prior.at(x, y) = hit.t * dot(fwd, ray.dir);  // camera-space z
            kf.normal_prior.at(x, y) = pl.normal;
            kf.confidence.at(x, y) = 1.0;
        }
    return kf;
}

// --- trajectories ------------------------------------------------------------

enum class ScanPattern { kOrbit, kLawnmower };

struct TrajectoryConfig {
    ScanPattern pattern = ScanPattern::kOrbit;
    int frames = 120;
    double radius_scale = 0.32;  // orbit radii as a fraction of room size
    double height_wobble = 0.15;
};

inline CameraPose look_at(const Vec3& eye, const Vec3& target) {
    Vec3 f = normalized(target - eye);
    Vec3 up{0, 0, 1};
    Vec3 r = normalized(cross(f, up));
    Vec3 d = cross(f, r);
    return CameraPose{RigidTransform{Mat3::from_cols(r, d, f), eye}};
}

inline std::vector<CameraPose> make_trajectory(const SyntheticScene& sc,
                                               const TrajectoryConfig& cfg) {
    std::vector<CameraPose> poses;
    Vec3 c = sc.room_center();
    Vec3 size = sc.room_max - sc.room_min;
    for (int i = 0; i < cfg.frames; ++i) {
        double t = static_cast<double>(i) / cfg.frames;
        Vec3 eye, target;
        if (cfg.pattern == ScanPattern::kOrbit) {
            double ang = 2 * M_PI * t;
            eye = {c.x + cfg.radius_scale * size.x * std::cos(ang),
                   c.y + cfg.radius_scale * size.y * std::sin(ang),
                   c.z + cfg.height_wobble * size.z * std::sin(2 * ang)};
            // look outward past the center so walls fill the view
            target = {c.x - 1.2 * cfg.radius_scale * size.x * std::cos(ang),
                      c.y - 1.2 * cfg.radius_scale * size.y * std::sin(ang),
                      c.z + 0.1 * size.z * std::cos(3 * ang)};
        } else {
            int rows = 4;
            double row_t = t * rows;
            int row = std::min(static_cast<int>(row_t), rows - 1);
            double s = row_t - row;
            double x = sc.room_min.x + size.x * (0.3 + 0.4 * (row % 2 == 0 ? s : 1 - s));
            double y = sc.room_min.y + size.y * (0.25 + 0.5 * row / (rows - 1.0));
            eye = {x, y, c.z};
            double ang = 2 * M_PI * t * 2;
            target = eye + Vec3{std::cos(ang), std::sin(ang), -0.1} * 2.0;
        }
        poses.push_back(look_at(eye, target));
    }
    return poses;
}

// --- prior corruption --------------------------------------------------------

struct NoiseConfig {
    double depth_sigma = 0.0;   // multiplicative
    double normal_sigma = 0.0;  // radians
    std::uint64_t seed = 7;
};

inline void corrupt_priors(Keyframe& kf, const NoiseConfig& cfg) {
    if (cfg.depth_sigma <= 0 && cfg.normal_sigma <= 0) return;
    Rng rng(cfg.seed + static_cast<std::uint64_t>(kf.id) * 7919);
    for (int y = 0; y < kf.image.height(); ++y)
        for (int x = 0; x < kf.image.width(); ++x) {
            if (kf.confidence.at(x, y) <= 0) continue;
            if (cfg.depth_sigma > 0)
                kf.depth_prior.at(x, y) *= 1.0 + rng.normal(0.0, cfg.depth_sigma);
            if (cfg.normal_sigma > 0) {
                Vec3 axis = rng.unit_vec3();
                double ang = rng.normal(0.0, cfg.normal_sigma);
                RigidTransform rot = axis_angle_transform(axis, ang, {0, 0, 0});
                kf.normal_prior.at(x, y) = rot.rotation * kf.normal_prior.at(x, y);
            }
        }
}

// Accumulating per-frame pose drift for map-update experiments: frame k gets
// the composition of k random micro-motions.
struct DriftModel {
    double translation_step = 0.0;  // meters per frame
    double rotation_step = 0.0;     // radians per frame
    std::uint64_t seed = 11;

    RigidTransform drift_of(int frame_index) const {
        RigidTransform acc = RigidTransform::identity();
        Rng rng(seed);
        for (int i = 0; i <= frame_index; ++i) {
            Vec3 axis = rng.unit_vec3();
            Vec3 dir = rng.unit_vec3();
            RigidTransform step =
                axis_angle_transform(axis, rotation_step, dir * translation_step);
            acc = step.compose(acc);
        }
        return acc;
    }
};

}  // namespace ts
