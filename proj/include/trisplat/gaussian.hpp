#pragma once

#include "trisplat/mlp.hpp"
#include "trisplat/sh.hpp"
#include "trisplat/transform.hpp"
#include "trisplat/triangle.hpp"

namespace ts {

struct AnchorMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Appearance atom anchored to a triangle. Scales are stored as logs and
// opacity as a logit so additive updates keep their ranges.
struct NeuralGaussian {
    Vec3 offset{0, 0, 0};            // o_g, meters
    ShCoeffs sh{};                   // degree-2 SH, 9 x rgb
    double opacity_logit = 0.0;      // alpha_g
    Vec3 log_scale{0, 0, 0};         // s_g stored as log
    Quaternion base_quat{1, 0, 0, 0};  // q_g (pre-normalization storage)
    std::array<double, kGaussianFeatureDim> feature{};
    std::int64_t anchor = -1;        // id of the owning triangle

    double opacity() const { return sigmoid(opacity_logit); }
    void set_opacity(double a) { opacity_logit = logit(a); }
    Vec3 base_scale() const {
        return {std::exp(log_scale.x), std::exp(log_scale.y), std::exp(log_scale.z)};
    }
    void set_base_scale(const Vec3& s) {
        log_scale = {std::log(s.x), std::log(s.y), std::log(s.z)};
    }
};

struct DecodedGaussian {
    Vec3 position;       // offset + triangle barycenter
    Vec3 scale;          // s_g (.) MLP_s multiplier
    Quaternion rotation; // normalize(q_g (.) MLP_q multiplier)

    // intermediates retained for the backward pass
    std::array<double, kFusedFeatureDim> fused{};
    std::array<double, 32> hidden_s{}, hidden_q{};
    std::array<double, 3> s_lin{};
    std::array<double, 4> q_lin{};
    Quaternion q_elem;   // q_g (.) multiplier, before normalization
    Vec3 s_mult;
    std::array<double, 4> q_mult{};
};

inline DecodedGaussian decode(const NeuralGaussian& g, const TrianglePrimitive& tri,
                              const DecoderMLP& mlp) {
    if (g.anchor != tri.id) throw AnchorMismatch("decode: gaussian anchored to another triangle");
    DecodedGaussian d;
    d.position = g.offset + tri.barycenter();
    for (int i = 0; i < kTriangleFeatureDim; ++i) d.fused[i] = tri.context_feature[i];
    for (int i = 0; i < kGaussianFeatureDim; ++i) d.fused[kTriangleFeatureDim + i] = g.feature[i];

    mlp.scale_mlp.forward(d.fused.data(), d.hidden_s.data(), d.s_lin.data());
    d.s_mult = {2.0 * sigmoid(d.s_lin[0]), 2.0 * sigmoid(d.s_lin[1]), 2.0 * sigmoid(d.s_lin[2])};
    d.scale = cwise_mul(g.base_scale(), d.s_mult);

    mlp.rot_mlp.forward(d.fused.data(), d.hidden_q.data(), d.q_lin.data());
    for (int i = 0; i < 4; ++i) d.q_mult[i] = 1.0 + std::tanh(d.q_lin[i]);
    d.q_elem = {g.base_quat.w * d.q_mult[0], g.base_quat.x * d.q_mult[1],
                g.base_quat.y * d.q_mult[2], g.base_quat.z * d.q_mult[3]};
    d.rotation = d.q_elem.normalized();
    return d;
}

// Gradients on one gaussian's learnable parameters plus its triangle hooks.
struct GaussianGrads {
    Vec3 d_offset{0, 0, 0};
    ShCoeffs d_sh{};
    double d_opacity = 0;           // natural alpha_g space
    Vec3 d_scale_base{0, 0, 0};     // natural s_g space
    std::array<double, 4> d_base_quat{};
    std::array<double, kGaussianFeatureDim> d_feature{};
    Vec3 d_barycenter{0, 0, 0};     // flows into the anchor triangle
    std::array<double, kTriangleFeatureDim> d_tri_feature{};
};

// Reverse of decode: upstream gradients on (position, scale, unit rotation)
// to gaussian parameters, triangle barycenter/feature, and the MLP weights.
inline void decode_backward(const NeuralGaussian& g, const DecodedGaussian& d,
                            const DecoderMLP& mlp, const Vec3& d_position, const Vec3& d_scale,
                            const std::array<double, 4>& d_rotation, GaussianGrads& gg,
                            DecoderGrads& mlp_grads) {
    gg.d_offset += d_position;
    gg.d_barycenter += d_position;

    std::array<double, kFusedFeatureDim> d_fused{};

    // scale head: scale = s_g (.) 2 sigmoid(lin)
    Vec3 s_g = g.base_scale();
    Vec3 d_mult = cwise_mul(d_scale, s_g);
    gg.d_scale_base += cwise_mul(d_scale, d.s_mult);
    std::array<double, 3> d_lin_s{};
    for (int i = 0; i < 3; ++i) {
        double sg = d.s_mult[i] * 0.5;  // sigmoid(lin)
        d_lin_s[i] = d_mult[i] * 2.0 * sg * (1.0 - sg);
    }
    mlp.scale_mlp.backward(d.fused.data(), d.hidden_s.data(), d_lin_s.data(),
                           mlp_grads.scale_mlp, d_fused.data());

    // rotation head: q = normalize(q_g (.) (1 + tanh(lin)))
    double n = d.q_elem.norm();
    double qn[4] = {d.rotation.w, d.rotation.x, d.rotation.y, d.rotation.z};
    double dot_dq = 0;
    for (int i = 0; i < 4; ++i) dot_dq += d_rotation[i] * qn[i];
    double d_qe[4];
    for (int i = 0; i < 4; ++i) d_qe[i] = (d_rotation[i] - qn[i] * dot_dq) / n;
    double qg[4] = {g.base_quat.w, g.base_quat.x, g.base_quat.y, g.base_quat.z};
    std::array<double, 4> d_lin_q{};
    for (int i = 0; i < 4; ++i) {
        gg.d_base_quat[i] += d_qe[i] * d.q_mult[i];
        double t = d.q_mult[i] - 1.0;  // tanh(lin)
        d_lin_q[i] = d_qe[i] * qg[i] * (1.0 - t * t);
    }
    mlp.rot_mlp.backward(d.fused.data(), d.hidden_q.data(), d_lin_q.data(), mlp_grads.rot_mlp,
                         d_fused.data());

    for (int i = 0; i < kTriangleFeatureDim; ++i) gg.d_tri_feature[i] += d_fused[i];
    for (int i = 0; i < kGaussianFeatureDim; ++i)
        gg.d_feature[i] += d_fused[kTriangleFeatureDim + i];
}

}  // namespace ts
