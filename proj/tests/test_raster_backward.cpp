#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"
#include "trisplat/raster.hpp"

using namespace ts;
using oracle::close;

namespace {

// Smooth configuration for finite-difference checks: no contribution cutoff
// and no transmittance early-out, so the rendered loss is differentiable.
RasterConfig smooth_cfg() {
    RasterConfig cfg;
    cfg.w_cutoff = 0.0;
    cfg.transmittance_min = 0.0;
    return cfg;
}

std::vector<TrianglePrimitive> depth_separated_scene(Rng& rng, int count) {
    std::vector<TrianglePrimitive> tris;
    for (int i = 0; i < count; ++i) {
        Vec3 c{rng.uniform(-0.4, 0.4), rng.uniform(-0.3, 0.3), 1.6 + 0.5 * i};
        std::array<Vec3, 3> p;
        for (auto& v : p) v = c + rng.uniform_vec3(-0.35, 0.35);
        if (norm(cross(p[1] - p[0], p[2] - p[0])) < 1e-3) {
            --i;
            continue;
        }
        tris.push_back(oracle::make_triangle(p[0], p[1], p[2], rng.uniform(0.3, 0.8),
                                             rng.uniform(5, 20), rng.uniform(0.7, 2.0), i));
    }
    return tris;
}

// L = sum over pixels covered in the base render of D + gn . N
double scalar_loss(const std::vector<TrianglePrimitive>& tris, const CameraIntrinsics& cam,
                   const CameraPose& pose, const RasterConfig& cfg, const Image<char>& mask,
                   const Vec3& gn) {
    RasterConfig fwd_cfg = cfg;
    fwd_cfg.retain_backward_state = false;
    RenderBuffers buf = forward_render(tris, cam, pose, fwd_cfg);
    double L = 0;
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            if (!mask.at(x, y)) continue;
            L += buf.depth.at(x, y) + dot(gn, buf.normal.at(x, y));
        }
    return L;
}

}  // namespace

TEST_CASE("zero upstream gradient yields zero triangle gradients") {
    auto rng = oracle::test_rng(61);
    CameraIntrinsics cam = oracle::simple_cam();
    CameraPose pose = oracle::identity_pose();
    auto tris = depth_separated_scene(rng, 3);
    RenderBuffers buf = forward_render(tris, cam, pose);
    ImageF gD(cam.width, cam.height, 0.0);
    ImageV3 gN(cam.width, cam.height, Vec3{0, 0, 0});
    auto grads = backward_render(buf, gD, gN, tris, cam, pose);
    for (const auto& g : grads) {
        for (const auto& v : g.d_vertices) CHECK(norm(v) == 0.0);
        CHECK(g.d_opacity == 0.0);
        CHECK(g.d_sharpness == 0.0);
        CHECK(g.d_smoothness == 0.0);
    }
}

TEST_CASE("backward requires retained forward state") {
    CameraIntrinsics cam = oracle::simple_cam();
    CameraPose pose = oracle::identity_pose();
    auto rng = oracle::test_rng(62);
    auto tris = depth_separated_scene(rng, 1);
    RasterConfig cfg;
    cfg.retain_backward_state = false;
    RenderBuffers buf = forward_render(tris, cam, pose, cfg);
    ImageF gD(cam.width, cam.height, 0.0);
    ImageV3 gN(cam.width, cam.height, Vec3{});
    CHECK_THROWS_AS(backward_render(buf, gD, gN, tris, cam, pose), MissingForwardState);
}

TEST_CASE("render gradients match central finite differences") {
    auto rng = oracle::test_rng(67);
    CameraIntrinsics cam = oracle::simple_cam(48, 36, 45);
    CameraPose pose = oracle::identity_pose();
    RasterConfig cfg = smooth_cfg();
    const Vec3 gn{0.3, -0.2, 0.15};

    for (int scene_idx = 0; scene_idx < 3; ++scene_idx) {
        auto tris = depth_separated_scene(rng, 3);

        RenderBuffers buf = forward_render(tris, cam, pose, cfg);
        Image<char> mask(cam.width, cam.height, 0);
        ImageF gD(cam.width, cam.height, 0.0);
        ImageV3 gN(cam.width, cam.height, Vec3{0, 0, 0});
        for (int y = 0; y < cam.height; ++y)
            for (int x = 0; x < cam.width; ++x)
                if (buf.alpha.at(x, y) > 0) {
                    mask.at(x, y) = 1;
                    gD.at(x, y) = 1.0;
                    gN.at(x, y) = gn;
                }
        auto grads = backward_render(buf, gD, gN, tris, cam, pose, cfg);

        const double h = 1e-4;
        for (size_t ti = 0; ti < tris.size(); ++ti) {
            for (int vi = 0; vi < 3; ++vi)
                for (int c = 0; c < 3; ++c) {
                    auto bumped = [&](double off) {
                        auto t2 = tris;
                        t2[ti].vertices[vi][c] += off;
                        return scalar_loss(t2, cam, pose, cfg, mask, gn);
                    };
                    double fd = (bumped(h) - bumped(-h)) / (2 * h);
                    INFO("scene " << scene_idx << " tri " << ti << " vertex " << vi << " comp "
                                  << c);
                    CHECK(close(grads[ti].d_vertices[vi][c], fd, 2e-3, 1e-6));
                }
            auto bump_param = [&](auto setter) {
                return [&, setter](double off) {
                    auto t2 = tris;
                    setter(t2[ti], off);
                    return scalar_loss(t2, cam, pose, cfg, mask, gn);
                };
            };
            double fd_alpha = oracle::central_diff(
                bump_param([&](TrianglePrimitive& t, double off) {
                    t.set_opacity(tris[ti].opacity() + off);
                }),
                1e-6);
            CHECK(close(grads[ti].d_opacity, fd_alpha, 2e-3, 1e-6));
            double fd_delta = oracle::central_diff(
                bump_param([&](TrianglePrimitive& t, double off) {
                    t.set_sharpness(tris[ti].sharpness() + off);
                }),
                1e-5);
            CHECK(close(grads[ti].d_sharpness, fd_delta, 2e-3, 1e-6));
            double fd_sigma = oracle::central_diff(
                bump_param([&](TrianglePrimitive& t, double off) {
                    t.set_smoothness(tris[ti].smoothness() + off);
                }),
                1e-6);
            CHECK(close(grads[ti].d_smoothness, fd_sigma, 2e-3, 1e-6));
        }
    }
}

TEST_CASE("fully occluded triangles receive no gradient") {
    CameraIntrinsics cam = oracle::simple_cam();
    CameraPose pose = oracle::identity_pose();
    // opaque front cover, small triangle hidden behind it
    Vec3 corner{-cam.cx / cam.fx, -cam.cy / cam.fy, 1.0};
    double span = 8.0 * (cam.width / cam.fx + cam.height / cam.fy);
    std::vector<TrianglePrimitive> tris = {
        oracle::make_triangle(corner, corner + Vec3{span, 0, 0}, corner + Vec3{0, span, 0},
                              1.0 - 1e-6, 500, 1.0, 0),
        oracle::make_triangle({0, 0, 3}, {0.5, 0, 3}, {0, 0.5, 3}, 0.9, 50, 1.0, 1),
    };
    RenderBuffers buf = forward_render(tris, cam, pose);
    ImageF gD(cam.width, cam.height, 1.0);
    ImageV3 gN(cam.width, cam.height, Vec3{0.2, 0.2, 0.2});
    auto grads = backward_render(buf, gD, gN, tris, cam, pose);
    double mag = 0;
    for (const auto& v : grads[1].d_vertices) mag += norm(v);
    mag += std::fabs(grads[1].d_opacity) + std::fabs(grads[1].d_sharpness) +
           std::fabs(grads[1].d_smoothness);
    CHECK(mag < 1e-8);
}
