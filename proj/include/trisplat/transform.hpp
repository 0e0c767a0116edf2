#pragma once

#include "trisplat/vec.hpp"

namespace ts {

struct NonOrthonormal : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Quaternion {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    Quaternion() = default;
    Quaternion(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {}

    static Quaternion identity() { return {1, 0, 0, 0}; }

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
    Quaternion normalized() const {
        double n = norm();
        return {w / n, x / n, y / n, z / n};
    }
    Quaternion operator*(const Quaternion& o) const {  // Hamilton product
        return {w * o.w - x * o.x - y * o.y - z * o.z,
                w * o.x + x * o.w + y * o.z - z * o.y,
                w * o.y - x * o.z + y * o.w + z * o.x,
                w * o.z + x * o.y - y * o.x + z * o.w};
    }
};

// Quaternion -> rotation matrix. Input need not be unit; it is normalized first.
inline Mat3 quat_to_matrix(const Quaternion& q_in) {
    Quaternion q = q_in.normalized();
    double w = q.w, x = q.x, y = q.y, z = q.z;
    Mat3 r;
    r.m[0][0] = 1 - 2 * (y * y + z * z);
    r.m[0][1] = 2 * (x * y - w * z);
    r.m[0][2] = 2 * (x * z + w * y);
    r.m[1][0] = 2 * (x * y + w * z);
    r.m[1][1] = 1 - 2 * (x * x + z * z);
    r.m[1][2] = 2 * (y * z - w * x);
    r.m[2][0] = 2 * (x * z - w * y);
    r.m[2][1] = 2 * (y * z + w * x);
    r.m[2][2] = 1 - 2 * (x * x + y * y);
    return r;
}

// Rotation matrix -> unit quaternion (Shepperd's method). Throws NonOrthonormal
// if the input is not a rotation within 1e-6.
inline Quaternion matrix_to_quat(const Mat3& r) {
    Mat3 rtr = r.transposed() * r;
    if (rtr.max_abs_diff(Mat3::identity()) > 1e-6 || std::fabs(r.det() - 1.0) > 1e-6)
        throw NonOrthonormal("matrix_to_quat: input is not a rotation matrix");
    double tr = r.trace();
    Quaternion q;
    if (tr > 0) {
        double s = std::sqrt(tr + 1.0) * 2;
        q.w = 0.25 * s;
        q.x = (r.m[2][1] - r.m[1][2]) / s;
        q.y = (r.m[0][2] - r.m[2][0]) / s;
        q.z = (r.m[1][0] - r.m[0][1]) / s;
    } else if (r.m[0][0] > r.m[1][1] && r.m[0][0] > r.m[2][2]) {
        double s = std::sqrt(1.0 + r.m[0][0] - r.m[1][1] - r.m[2][2]) * 2;
        q.w = (r.m[2][1] - r.m[1][2]) / s;
        q.x = 0.25 * s;
        q.y = (r.m[0][1] + r.m[1][0]) / s;
        q.z = (r.m[0][2] + r.m[2][0]) / s;
    } else if (r.m[1][1] > r.m[2][2]) {
        double s = std::sqrt(1.0 + r.m[1][1] - r.m[0][0] - r.m[2][2]) * 2;
        q.w = (r.m[0][2] - r.m[2][0]) / s;
        q.x = (r.m[0][1] + r.m[1][0]) / s;
        q.y = 0.25 * s;
        q.z = (r.m[1][2] + r.m[2][1]) / s;
    } else {
        double s = std::sqrt(1.0 + r.m[2][2] - r.m[0][0] - r.m[1][1]) * 2;
        q.w = (r.m[1][0] - r.m[0][1]) / s;
        q.x = (r.m[0][2] + r.m[2][0]) / s;
        q.y = (r.m[1][2] + r.m[2][1]) / s;
        q.z = 0.25 * s;
    }
    return q.normalized();
}

// Rigid transform x -> R x + t.
struct RigidTransform {
    Mat3 rotation = Mat3::identity();
    Vec3 translation{0, 0, 0};

    static RigidTransform identity() { return {}; }

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
    Vec3 apply_vector(const Vec3& v) const { return rotation * v; }

    RigidTransform compose(const RigidTransform& o) const {  // this * o
        return {rotation * o.rotation, rotation * o.translation + translation};
    }
    RigidTransform inverse() const {
        Mat3 rt = rotation.transposed();
        return {rt, -(rt * translation)};
    }

    void validate() const {
        if ((rotation.transposed() * rotation).max_abs_diff(Mat3::identity()) > 1e-6 ||
            std::fabs(rotation.det() - 1.0) > 1e-6)
            throw NonOrthonormal("RigidTransform: rotation fails orthonormality check");
    }
};

inline RigidTransform axis_angle_transform(const Vec3& axis, double angle, const Vec3& t) {
    Vec3 u = normalized(axis);
    double c = std::cos(angle), s = std::sin(angle);
    Mat3 r = Mat3::identity() * c + Mat3::skew(u) * s + Mat3::outer(u, u) * (1 - c);
    return {r, t};
}

// se(3) exponential, xi = (rho, phi): translation part first.
inline RigidTransform se3_exp(const double xi[6]) {
    Vec3 rho{xi[0], xi[1], xi[2]};
    Vec3 phi{xi[3], xi[4], xi[5]};
    double th = norm(phi);
    Mat3 R, V;
    if (th < 1e-12) {
        Mat3 px = Mat3::skew(phi);
        R = Mat3::identity() + px;
        V = Mat3::identity() + px * 0.5;
    } else {
        Vec3 u = phi / th;
        double c = std::cos(th), s = std::sin(th);
        Mat3 ux = Mat3::skew(u);
        R = Mat3::identity() * c + ux * s + Mat3::outer(u, u) * (1 - c);
        V = Mat3::identity() + ux * ((1 - c) / th) + ux * ux * ((th - s) / th);
    }
    return {R, V * rho};
}

}  // namespace ts
