#include "stereopose/pose_types.hpp"

#include <cmath>

namespace stereopose {

Vec3 vadd(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 vsub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 vscale(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
double vdot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 vcross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double vnorm(const Vec3& a) { return std::sqrt(vdot(a, a)); }
Vec3 vnormalize(const Vec3& a) {
    const double n = vnorm(a);
    return n > 0.0 ? vscale(a, 1.0 / n) : a;
}

Mat3 mat_identity() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

Mat3 mat_mul(const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += a[i * 3 + k] * b[k * 3 + j];
            c[i * 3 + j] = s;
        }
    return c;
}

Mat3 mat_transpose(const Mat3& a) {
    return {a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]};
}

Vec3 mat_apply(const Mat3& m, const Vec3& v) {
    return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

double mat_det(const Mat3& m) {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Mat3 rotation_from_quat(const Quat& q) {
    const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    const double w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
    return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
            2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

Quat quat_from_rotation(const Mat3& r) {
    // Shepperd's method; picks the numerically largest pivot.
    const double tr = r[0] + r[4] + r[8];
    Quat q{};
    if (tr > 0.0) {
        const double s = std::sqrt(tr + 1.0) * 2.0;
        q = {0.25 * s, (r[7] - r[5]) / s, (r[2] - r[6]) / s, (r[3] - r[1]) / s};
    } else if (r[0] > r[4] && r[0] > r[8]) {
        const double s = std::sqrt(1.0 + r[0] - r[4] - r[8]) * 2.0;
        q = {(r[7] - r[5]) / s, 0.25 * s, (r[1] + r[3]) / s, (r[2] + r[6]) / s};
    } else if (r[4] > r[8]) {
        const double s = std::sqrt(1.0 + r[4] - r[0] - r[8]) * 2.0;
        q = {(r[2] - r[6]) / s, (r[1] + r[3]) / s, 0.25 * s, (r[5] + r[7]) / s};
    } else {
        const double s = std::sqrt(1.0 + r[8] - r[0] - r[4]) * 2.0;
        q = {(r[3] - r[1]) / s, (r[2] + r[6]) / s, (r[5] + r[7]) / s, 0.25 * s};
    }
    if (q[0] < 0.0) {
        for (double& v : q) v = -v;
    }
    return q;
}

Mat3 rodrigues(const Vec3& axis, double angle) {
    const Vec3 a = vnormalize(axis);
    const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
    return {t * a[0] * a[0] + c,        t * a[0] * a[1] - s * a[2], t * a[0] * a[2] + s * a[1],
            t * a[0] * a[1] + s * a[2], t * a[1] * a[1] + c,        t * a[1] * a[2] - s * a[0],
            t * a[0] * a[2] - s * a[1], t * a[1] * a[2] + s * a[0], t * a[2] * a[2] + c};
}

Mat3 rot_z(double angle) { return rodrigues({0, 0, 1}, angle); }

Vec3 Pose::apply(const Vec3& p) const { return vadd(mat_apply(R, p), t); }
Vec3 Pose::rotate(const Vec3& p) const { return mat_apply(R, p); }

Pose Pose::inverse() const {
    Pose inv;
    inv.R = mat_transpose(R);
    inv.t = vscale(mat_apply(inv.R, t), -1.0);
    return inv;
}

Pose Pose::compose(const Pose& other) const {
    Pose out;
    out.R = mat_mul(R, other.R);
    out.t = vadd(mat_apply(R, other.t), t);
    return out;
}

bool Pose::is_rotation(double tol) const {
    const Mat3 g = mat_mul(mat_transpose(R), R);
    const Mat3 id = mat_identity();
    for (int i = 0; i < 9; ++i) {
        if (std::fabs(g[i] - id[i]) > tol) return false;
    }
    return std::fabs(mat_det(R) - 1.0) <= tol;
}

}  // namespace stereopose
