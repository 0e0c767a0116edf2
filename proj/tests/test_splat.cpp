#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"
#include "trisplat/splat.hpp"

using namespace ts;
using oracle::close;

namespace {

struct MiniScene {
    std::vector<TrianglePrimitive> tris;
    std::vector<NeuralGaussian> gaussians;
    std::vector<std::int32_t> anchors;
    DecoderMLP mlp;
};

// anchor triangles around given centers; one gaussian per call
NeuralGaussian make_gaussian(std::int64_t anchor, const Vec3& offset, const Vec3& scale,
                             double alpha, const Vec3& dc_rgb) {
    NeuralGaussian g;
    g.anchor = anchor;
    g.offset = offset;
    g.set_base_scale(scale);
    g.set_opacity(alpha);
    g.sh[0] = rgb_to_sh0(dc_rgb);
    return g;
}

TrianglePrimitive host_triangle(const Vec3& center, std::int64_t id) {
    return oracle::make_triangle(center + Vec3{0.05, 0, 0}, center + Vec3{-0.025, 0.043, 0},
                                 center + Vec3{-0.025, -0.043, 0}, 0.5, 50, 1, id);
}

MiniScene random_scene(Rng& rng, int n_tris, int n_gauss, bool random_mlp) {
    MiniScene s;
    for (int i = 0; i < n_tris; ++i) {
        Vec3 c{rng.uniform(-0.5, 0.5), rng.uniform(-0.35, 0.35), rng.uniform(1.8, 2.6)};
        s.tris.push_back(host_triangle(c, i));
        for (auto& f : s.tris.back().context_feature) f = rng.normal(0, 0.3);
    }
    for (int i = 0; i < n_gauss; ++i) {
        int anchor = rng.uniform_int(0, n_tris - 1);
        NeuralGaussian g = make_gaussian(
            anchor, rng.uniform_vec3(-0.05, 0.05),
            {rng.uniform(0.02, 0.08), rng.uniform(0.02, 0.08), rng.uniform(0.02, 0.08)},
            rng.uniform(0.3, 0.85),
            {rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7)});
        g.base_quat = Quaternion{rng.normal(), rng.normal(), rng.normal(), rng.normal()}.normalized();
        for (auto& f : g.feature) f = rng.normal(0, 0.3);
        for (int b = 1; b < kShCoeffs; ++b) g.sh[b] = rng.uniform_vec3(-0.03, 0.03);
        s.gaussians.push_back(g);
        s.anchors.push_back(anchor);
    }
    if (random_mlp) {
        for (auto& w : s.mlp.scale_mlp.w1) w = rng.normal(0, 0.2);
        for (auto& w : s.mlp.scale_mlp.w2) w = rng.normal(0, 0.2);
        for (auto& w : s.mlp.scale_mlp.b1) w = rng.normal(0, 0.1);
        for (auto& w : s.mlp.rot_mlp.w1) w = rng.normal(0, 0.2);
        for (auto& w : s.mlp.rot_mlp.w2) w = rng.normal(0, 0.2);
        for (auto& w : s.mlp.rot_mlp.b1) w = rng.normal(0, 0.1);
    }
    return s;
}

}  // namespace

TEST_CASE("single isotropic gaussian reproduces its DC color at the center") {
    CameraIntrinsics cam = oracle::simple_cam(65, 49, 60);  // odd dims: center pixel on axis
    CameraPose pose = oracle::identity_pose();
    std::vector<TrianglePrimitive> tris = {host_triangle({0, 0, 2}, 0)};
    Vec3 c{0.8, 0.3, 0.1};
    std::vector<NeuralGaussian> gs = {make_gaussian(0, {0, 0, 0}, {0.05, 0.05, 0.05}, 0.9999, c)};
    std::vector<std::int32_t> anchors = {0};
    DecoderMLP mlp;
    SplatBuffers buf = splat_forward(gs, tris, anchors, mlp, cam, pose);
    CHECK(norm(buf.color.at(32, 24) - c) < 1e-3);
    CHECK(buf.alpha.at(32, 24) > 0.999);
}

TEST_CASE("two stacked gaussians composite front to back") {
    CameraIntrinsics cam = oracle::simple_cam(65, 49, 60);
    CameraPose pose = oracle::identity_pose();
    std::vector<TrianglePrimitive> tris = {host_triangle({0, 0, 1}, 0), host_triangle({0, 0, 2}, 1)};
    std::vector<NeuralGaussian> gs = {
        make_gaussian(0, {0, 0, 0}, {0.03, 0.03, 0.03}, 0.5, {1, 0, 0}),
        make_gaussian(1, {0, 0, 0}, {0.06, 0.06, 0.06}, 0.9999, {0, 0, 1}),
    };
    std::vector<std::int32_t> anchors = {0, 1};
    DecoderMLP mlp;
    SplatBuffers buf = splat_forward(gs, tris, anchors, mlp, cam, pose);
    CHECK(norm(buf.color.at(32, 24) - Vec3{0.5, 0, 0.5}) < 2e-3);
}

TEST_CASE("empty scene splats to black") {
    CameraIntrinsics cam = oracle::simple_cam();
    SplatBuffers buf = splat_forward({}, {}, {}, DecoderMLP{}, cam, oracle::identity_pose());
    for (size_t i = 0; i < buf.color.size(); ++i) {
        CHECK(norm(buf.color[i]) == 0.0);
        CHECK(buf.alpha[i] == 0.0);
    }
}

TEST_CASE("splat matches the naive full-sort reference") {
    auto rng = oracle::test_rng(97);
    CameraIntrinsics cam = oracle::simple_cam(64, 48, 60);
    CameraPose pose = oracle::identity_pose();
    MiniScene s = random_scene(rng, 4, 10, false);  // identity MLP: plain params pass through

    SplatBuffers buf = splat_forward(s.gaussians, s.tris, s.anchors, s.mlp, cam, pose);

    std::vector<oracle::PlainGaussian> plain;
    for (size_t i = 0; i < s.gaussians.size(); ++i) {
        const auto& g = s.gaussians[i];
        plain.push_back({g.offset + s.tris[s.anchors[i]].barycenter(), g.base_scale(),
                         g.base_quat.normalized(), g.opacity(), g.sh});
    }
    oracle::RefSplat ref = oracle::reference_splat(plain, cam, pose);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            CHECK(norm(buf.color.at(x, y) - ref.color.at(x, y)) < 1e-4);
            CHECK(std::fabs(buf.alpha.at(x, y) - ref.alpha.at(x, y)) < 1e-4);
        }
}

TEST_CASE("splat determinism across thread counts") {
    auto rng = oracle::test_rng(101);
    CameraIntrinsics cam = oracle::simple_cam();
    CameraPose pose = oracle::identity_pose();
    MiniScene s = random_scene(rng, 4, 30, true);
    SplatBuffers a = splat_forward(s.gaussians, s.tris, s.anchors, s.mlp, cam, pose);
    set_worker_threads(4);
    SplatBuffers b = splat_forward(s.gaussians, s.tris, s.anchors, s.mlp, cam, pose);
    ImageV3 gC(cam.width, cam.height, Vec3{0.3, -0.2, 0.5});
    auto ga = splat_backward(a, s.gaussians, s.tris, s.anchors, s.mlp, cam, pose, gC);
    set_worker_threads(1);
    auto gb = splat_backward(b, s.gaussians, s.tris, s.anchors, s.mlp, cam, pose, gC);
    for (size_t i = 0; i < a.color.size(); ++i) CHECK(norm(a.color[i] - b.color[i]) == 0.0);
    for (size_t i = 0; i < ga.gaussians.size(); ++i) {
        CHECK(norm(ga.gaussians[i].d_offset - gb.gaussians[i].d_offset) == 0.0);
        CHECK(ga.gaussians[i].d_opacity == gb.gaussians[i].d_opacity);
    }
    for (size_t i = 0; i < ga.mlp.scale_mlp.w1.size(); ++i)
        CHECK(ga.mlp.scale_mlp.w1[i] == gb.mlp.scale_mlp.w1[i]);
}

TEST_CASE("splat gradients match finite differences") {
    auto rng = oracle::test_rng(103);
    CameraIntrinsics cam = oracle::simple_cam(48, 36, 45);
    CameraPose pose = oracle::identity_pose();
    MiniScene s = random_scene(rng, 2, 5, true);

    SplatConfig cfg;
    cfg.alpha_cutoff = 1e-9;
    cfg.transmittance_min = 0.0;

    ImageV3 gC(cam.width, cam.height, Vec3{0, 0, 0});
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x)
            gC.at(x, y) = {0.2 + 0.1 * ((x + y) % 3), -0.3 + 0.05 * (x % 4), 0.15};

    auto loss = [&](const MiniScene& sc) {
        SplatConfig c2 = cfg;
        c2.retain_backward_state = false;
        SplatBuffers b = splat_forward(sc.gaussians, sc.tris, sc.anchors, sc.mlp, cam, pose, c2);
        double L = 0;
        for (int y = 0; y < cam.height; ++y)
            for (int x = 0; x < cam.width; ++x) L += dot(gC.at(x, y), b.color.at(x, y));
        return L;
    };

    SplatBuffers buf = splat_forward(s.gaussians, s.tris, s.anchors, s.mlp, cam, pose, cfg);
    SplatGradients grads =
        splat_backward(buf, s.gaussians, s.tris, s.anchors, s.mlp, cam, pose, gC, cfg);

    const double h = 1e-5;
    auto fd = [&](auto&& mutate) {
        MiniScene p = s, m = s;
        mutate(p, +h);
        mutate(m, -h);
        return (loss(p) - loss(m)) / (2 * h);
    };

    for (size_t gi = 0; gi < s.gaussians.size(); ++gi) {
        INFO("gaussian " << gi);
        for (int c = 0; c < 3; ++c) {
            CHECK(close(grads.gaussians[gi].d_offset[c],
                        fd([&](MiniScene& sc, double o) { sc.gaussians[gi].offset[c] += o; }),
                        2e-3, 1e-6));
            Vec3 base = s.gaussians[gi].base_scale();
            CHECK(close(grads.gaussians[gi].d_scale_base[c], fd([&](MiniScene& sc, double o) {
                            Vec3 b = base;
                            b[c] += o;
                            sc.gaussians[gi].set_base_scale(b);
                        }),
                        2e-3, 1e-6));
        }
        CHECK(close(grads.gaussians[gi].d_opacity, fd([&](MiniScene& sc, double o) {
                        sc.gaussians[gi].set_opacity(s.gaussians[gi].opacity() + o);
                    }),
                    2e-3, 1e-6));
        double* quat_fields[4] = {nullptr};
        for (int qc = 0; qc < 4; ++qc) {
            CHECK(close(grads.gaussians[gi].d_base_quat[qc], fd([&](MiniScene& sc, double o) {
                            double* f[4] = {&sc.gaussians[gi].base_quat.w,
                                            &sc.gaussians[gi].base_quat.x,
                                            &sc.gaussians[gi].base_quat.y,
                                            &sc.gaussians[gi].base_quat.z};
                            *f[qc] += o;
                        }),
                        2e-3, 1e-6));
        }
        (void)quat_fields;
        for (int fi = 0; fi < kGaussianFeatureDim; fi += 3) {
            CHECK(close(grads.gaussians[gi].d_feature[fi], fd([&](MiniScene& sc, double o) {
                            sc.gaussians[gi].feature[fi] += o;
                        }),
                        2e-3, 1e-6));
        }
        for (int si = 0; si < kShCoeffs; si += 4) {
            CHECK(close(grads.gaussians[gi].d_sh[si].x, fd([&](MiniScene& sc, double o) {
                            sc.gaussians[gi].sh[si].x += o;
                        }),
                        2e-3, 1e-6));
        }
    }

    for (size_t ti = 0; ti < s.tris.size(); ++ti) {
        INFO("triangle " << ti);
        for (int vi = 0; vi < 3; ++vi)
            for (int c = 0; c < 3; ++c) {
                CHECK(close(grads.triangles[ti].d_vertices[vi][c],
                            fd([&](MiniScene& sc, double o) { sc.tris[ti].vertices[vi][c] += o; }),
                            2e-3, 1e-6));
            }
        for (int fi = 0; fi < kTriangleFeatureDim; fi += 7) {
            CHECK(close(grads.tri_features[ti][fi], fd([&](MiniScene& sc, double o) {
                            sc.tris[ti].context_feature[fi] += o;
                        }),
                        2e-3, 1e-6));
        }
    }

    // a few MLP weights from each block
    for (size_t wi = 0; wi < s.mlp.scale_mlp.w1.size(); wi += 211) {
        CHECK(close(grads.mlp.scale_mlp.w1[wi],
                    fd([&](MiniScene& sc, double o) { sc.mlp.scale_mlp.w1[wi] += o; }), 2e-3,
                    1e-6));
    }
    for (size_t wi = 0; wi < s.mlp.scale_mlp.w2.size(); wi += 17) {
        CHECK(close(grads.mlp.scale_mlp.w2[wi],
                    fd([&](MiniScene& sc, double o) { sc.mlp.scale_mlp.w2[wi] += o; }), 2e-3,
                    1e-6));
    }
    for (size_t wi = 0; wi < s.mlp.rot_mlp.w1.size(); wi += 223) {
        CHECK(close(grads.mlp.rot_mlp.w1[wi],
                    fd([&](MiniScene& sc, double o) { sc.mlp.rot_mlp.w1[wi] += o; }), 2e-3, 1e-6));
    }
    for (size_t wi = 0; wi < s.mlp.rot_mlp.w2.size(); wi += 19) {
        CHECK(close(grads.mlp.rot_mlp.w2[wi],
                    fd([&](MiniScene& sc, double o) { sc.mlp.rot_mlp.w2[wi] += o; }), 2e-3, 1e-6));
    }
}

TEST_CASE("zero upstream color gradient yields zero gradients everywhere") {
    auto rng = oracle::test_rng(107);
    CameraIntrinsics cam = oracle::simple_cam();
    CameraPose pose = oracle::identity_pose();
    MiniScene s = random_scene(rng, 2, 6, true);
    SplatBuffers buf = splat_forward(s.gaussians, s.tris, s.anchors, s.mlp, cam, pose);
    ImageV3 gC(cam.width, cam.height, Vec3{0, 0, 0});
    auto grads = splat_backward(buf, s.gaussians, s.tris, s.anchors, s.mlp, cam, pose, gC);
    for (const auto& g : grads.gaussians) {
        CHECK(norm(g.d_offset) == 0.0);
        CHECK(g.d_opacity == 0.0);
    }
    for (const auto& t : grads.triangles)
        for (const auto& v : t.d_vertices) CHECK(norm(v) == 0.0);
    for (double w : grads.mlp.scale_mlp.w1) CHECK(w == 0.0);
}

TEST_CASE("moving the anchor triangle translates the rendered footprint") {
    CameraIntrinsics cam = oracle::simple_cam(64, 48, 60);
    CameraPose pose = oracle::identity_pose();
    std::vector<TrianglePrimitive> tris = {host_triangle({0, 0, 2}, 0)};
    std::vector<NeuralGaussian> gs = {
        make_gaussian(0, {0.02, -0.01, 0}, {0.04, 0.04, 0.04}, 0.9, {0.9, 0.2, 0.2})};
    std::vector<std::int32_t> anchors = {0};
    DecoderMLP mlp;
    SplatBuffers a = splat_forward(gs, tris, anchors, mlp, cam, pose);

    Vec3 t{0.2, 0.1, 0};  // fronto-parallel shift: footprint moves by f*t/z pixels
    for (auto& v : tris[0].vertices) v += t;
    SplatBuffers b = splat_forward(gs, tris, anchors, mlp, cam, pose);

    auto centroid = [&](const SplatBuffers& s) {
        double wsum = 0, u = 0, v = 0;
        for (int y = 0; y < cam.height; ++y)
            for (int x = 0; x < cam.width; ++x) {
                double w = s.alpha.at(x, y);
                wsum += w;
                u += w * x;
                v += w * y;
            }
        return Vec2{u / wsum, v / wsum};
    };
    Vec2 shift = centroid(b) - centroid(a);
    CHECK(std::fabs(shift.u - 60 * t.x / 2.0) < 0.1);
    CHECK(std::fabs(shift.v - 60 * t.y / 2.0) < 0.1);
}

TEST_CASE("rigid re-anchoring keeps decoded gaussians rigid at identity MLP") {
    auto rng = oracle::test_rng(109);
    DecoderMLP mlp;  // identity
    for (int trial = 0; trial < 20; ++trial) {
        TrianglePrimitive tri = host_triangle(rng.uniform_vec3(-1, 1) + Vec3{0, 0, 2}, 0);
        NeuralGaussian g = make_gaussian(0, rng.uniform_vec3(-0.1, 0.1),
                                         {rng.uniform(0.02, 0.1), rng.uniform(0.02, 0.1),
                                          rng.uniform(0.02, 0.1)},
                                         0.7, {0.5, 0.5, 0.5});
        g.base_quat = Quaternion{rng.normal(), rng.normal(), rng.normal(), rng.normal()}.normalized();

        RigidTransform dT = axis_angle_transform(rng.unit_vec3(), rng.uniform(-2, 2),
                                                 rng.uniform_vec3(-1, 1));
        DecodedGaussian before = decode(g, tri, mlp);
        Mat3 cov_before = [&] {
            Mat3 r = quat_to_matrix(before.rotation);
            Mat3 m = r;
            for (int i = 0; i < 3; ++i) {
                m.m[i][0] *= before.scale.x;
                m.m[i][1] *= before.scale.y;
                m.m[i][2] *= before.scale.z;
            }
            return m * m.transposed();
        }();

        // re-anchor with the global map update rules
        Vec3 mu_old = tri.barycenter();
        TrianglePrimitive tri2 = tri;
        for (auto& v : tri2.vertices) v = dT.apply(v);
        Vec3 mu_new = tri2.barycenter();
        NeuralGaussian g2 = g;
        g2.offset = dT.apply(g.offset + mu_old) - mu_new;
        Quaternion dq = matrix_to_quat(dT.rotation);
        g2.base_quat = dq * g.base_quat;

        DecodedGaussian after = decode(g2, tri2, mlp);
        CHECK(norm(after.position - dT.apply(before.position)) < 1e-9);
        Mat3 cov_after = [&] {
            Mat3 r = quat_to_matrix(after.rotation);
            Mat3 m = r;
            for (int i = 0; i < 3; ++i) {
                m.m[i][0] *= after.scale.x;
                m.m[i][1] *= after.scale.y;
                m.m[i][2] *= after.scale.z;
            }
            return m * m.transposed();
        }();
        Mat3 want = dT.rotation * cov_before * dT.rotation.transposed();
        CHECK(cov_after.max_abs_diff(want) < 1e-6);
    }
}
