#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"
#include "trisplat/camera.hpp"

using namespace ts;

static CameraIntrinsics vga() {
    CameraIntrinsics c;
    c.fx = c.fy = 600;
    c.cx = 320;
    c.cy = 240;
    c.width = 640;
    c.height = 480;
    return c;
}

TEST_CASE("project pinhole examples") {
    CameraIntrinsics cam = vga();
    CameraPose pose = oracle::identity_pose();

    auto on_axis = project(cam, pose, {0, 0, 2});
    CHECK(on_axis.pixel.u == Catch::Approx(320.0));
    CHECK(on_axis.pixel.v == Catch::Approx(240.0));
    CHECK(on_axis.depth == Catch::Approx(2.0));

    auto off = project(cam, pose, {1, 0, 2});
    CHECK(off.pixel.u == Catch::Approx(620.0));
    CHECK(off.pixel.v == Catch::Approx(240.0));
}

TEST_CASE("project rejects points behind the near plane") {
    CameraIntrinsics cam = vga();
    CameraPose pose = oracle::identity_pose();
    CHECK_THROWS_AS(project(cam, pose, {0, 0, -1}), BehindCamera);
    CHECK_THROWS_AS(project(cam, pose, {0, 0, 0.005}), BehindCamera);
}

TEST_CASE("unproject inverts project") {
    CameraIntrinsics cam = vga();
    auto rng = oracle::test_rng(5);
    for (int i = 0; i < 200; ++i) {
        CameraPose pose{axis_angle_transform(rng.unit_vec3(), rng.uniform(-1, 1),
                                             rng.uniform_vec3(-2, 2))};
        Vec3 pc{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 8)};
        Vec3 pw = pose.world_from_camera.apply(pc);
        auto pp = project(cam, pose, pw);
        Vec3 back = unproject(cam, pose, pp.pixel, pp.depth);
        CHECK(norm(back - pw) < 1e-9);
    }
}

TEST_CASE("pixel rays pass through their pixel") {
    CameraIntrinsics cam = vga();
    auto rng = oracle::test_rng(6);
    for (int i = 0; i < 50; ++i) {
        CameraPose pose{axis_angle_transform(rng.unit_vec3(), rng.uniform(-1, 1),
                                             rng.uniform_vec3(-2, 2))};
        double px = rng.uniform(0, cam.width), py = rng.uniform(0, cam.height);
        Ray r = pixel_ray(cam, pose, px, py);
        Vec3 p = r.origin + r.dir * rng.uniform(0.5, 5.0);
        auto pp = project(cam, pose, p);
        CHECK(std::fabs(pp.pixel.u - px) < 1e-9);
        CHECK(std::fabs(pp.pixel.v - py) < 1e-9);
    }
}

TEST_CASE("vertex visibility") {
    CameraIntrinsics cam = vga();
    CameraPose pose = oracle::identity_pose();
    CHECK(vertex_visible(cam, pose, {0, 0, 2}));
    CHECK_FALSE(vertex_visible(cam, pose, {0, 0, -2}));
    CHECK_FALSE(vertex_visible(cam, pose, {10, 0, 2}));  // projects far off screen
}

TEST_CASE("intrinsics validation") {
    CameraIntrinsics bad = vga();
    bad.fx = -1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = vga();
    bad.cx = 900;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
