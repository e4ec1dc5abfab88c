#pragma once

#include <array>
#include <cstdint>

namespace stereopose {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;  // row-major
using Quat = std::array<double, 4>;  // w, x, y, z

Vec3 vadd(const Vec3& a, const Vec3& b);
Vec3 vsub(const Vec3& a, const Vec3& b);
Vec3 vscale(const Vec3& a, double s);
double vdot(const Vec3& a, const Vec3& b);
Vec3 vcross(const Vec3& a, const Vec3& b);
double vnorm(const Vec3& a);
Vec3 vnormalize(const Vec3& a);

Mat3 mat_identity();
Mat3 mat_mul(const Mat3& a, const Mat3& b);
Mat3 mat_transpose(const Mat3& a);
Vec3 mat_apply(const Mat3& m, const Vec3& v);
double mat_det(const Mat3& m);
Mat3 rotation_from_quat(const Quat& q);
Quat quat_from_rotation(const Mat3& r);
Mat3 rodrigues(const Vec3& axis, double angle);
Mat3 rot_z(double angle);

// Rigid transform object frame -> camera frame: p_cam = R p_obj + t.
struct Pose {
    Mat3 R = mat_identity();
    Vec3 t{0.0, 0.0, 0.0};

    Vec3 apply(const Vec3& p) const;
    Vec3 rotate(const Vec3& p) const;
    Pose inverse() const;
    Pose compose(const Pose& other) const;  // this ∘ other

    // ||R^T R - I||_max and |det - 1| both within tol.
    bool is_rotation(double tol = 1e-9) const;
};

}  // namespace stereopose
