#pragma once

#include "trisplat/transform.hpp"

namespace ts {

inline constexpr double kNearPlane = 0.01;  // meters

struct BehindCamera : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CameraIntrinsics {
    double fx = 0, fy = 0;  // pixels
    double cx = 0, cy = 0;  // pixels
    int width = 0, height = 0;

    void validate() const {
        if (!(fx > 0 && fy > 0)) throw std::invalid_argument("intrinsics: fx, fy must be > 0");
        if (!(cx > 0 && cx < width && cy > 0 && cy < height))
            throw std::invalid_argument("intrinsics: principal point outside image");
    }
};

// world_from_camera: camera-space points map to world as R p + t;
// the camera center in world coordinates is t.
struct CameraPose {
    RigidTransform world_from_camera;

    Vec3 center() const { return world_from_camera.translation; }
    Vec3 forward() const { return world_from_camera.rotation.col(2); }  // +z in camera frame
    RigidTransform camera_from_world() const { return world_from_camera.inverse(); }
};

struct PixelProjection {
    Vec2 pixel;   // continuous pixel coordinates
    double depth; // camera-space z
};

inline Vec3 world_to_camera(const CameraPose& pose, const Vec3& p_world) {
    return pose.camera_from_world().apply(p_world);
}

inline PixelProjection project(const CameraIntrinsics& cam, const CameraPose& pose,
                               const Vec3& p_world, double near = kNearPlane) {
    Vec3 pc = world_to_camera(pose, p_world);
    if (pc.z <= near) throw BehindCamera("project: point behind near plane");
    return {{cam.fx * pc.x / pc.z + cam.cx, cam.fy * pc.y / pc.z + cam.cy}, pc.z};
}

inline bool try_project(const CameraIntrinsics& cam, const CameraPose& pose,
                        const Vec3& p_world, PixelProjection& out, double near = kNearPlane) {
    Vec3 pc = world_to_camera(pose, p_world);
    if (pc.z <= near) return false;
    out = {{cam.fx * pc.x / pc.z + cam.cx, cam.fy * pc.y / pc.z + cam.cy}, pc.z};
    return true;
}

inline Vec3 unproject(const CameraIntrinsics& cam, const CameraPose& pose, const Vec2& pixel,
                      double depth) {
    Vec3 pc{(pixel.u - cam.cx) / cam.fx * depth, (pixel.v - cam.cy) / cam.fy * depth, depth};
    return pose.world_from_camera.apply(pc);
}

// Vertex visibility for rasterizer culling: in front of the near plane and
// projecting inside the image bounds.
inline bool vertex_visible(const CameraIntrinsics& cam, const CameraPose& pose, const Vec3& p,
                           double near = kNearPlane) {
    PixelProjection pp;
    if (!try_project(cam, pose, p, pp, near)) return false;
    return pp.pixel.u >= 0 && pp.pixel.u < cam.width && pp.pixel.v >= 0 && pp.pixel.v < cam.height;
}

struct Ray {
    Vec3 origin;
    Vec3 dir;  // unit length, world frame
};

// Ray through a continuous pixel coordinate. Pixel (ix, iy) is sampled at its
// center (ix + 0.5, iy + 0.5).
inline Ray pixel_ray(const CameraIntrinsics& cam, const CameraPose& pose, double px, double py) {
    Vec3 dir_cam{(px - cam.cx) / cam.fx, (py - cam.cy) / cam.fy, 1.0};
    return {pose.center(), normalized(pose.world_from_camera.rotation * dir_cam)};
}

}  // namespace ts
