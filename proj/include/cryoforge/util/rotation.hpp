#pragma once

#include <array>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/LU>

namespace cryoforge {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// True when RᵀR = I and det R = +1 within tolerance (max-abs entry deviation).
[[nodiscard]] bool is_rotation(const Mat3& r, double tolerance = 1e-6);

/// Throws DomainError naming `what` when r is not a proper rotation.
void require_rotation(const Mat3& r, const char* what, double tolerance = 1e-6);

/// max |RᵀR - I| entry, plus |det R - 1|.
[[nodiscard]] double orthonormality_drift(const Mat3& r);

/// Closest proper rotation in Frobenius norm (polar factor with det fix).
[[nodiscard]] Mat3 nearest_rotation(const Mat3& m);

[[nodiscard]] Mat3 rotation_z(double angle);
[[nodiscard]] Mat3 rotation_y(double angle);

/// Proper ZYZ Euler rotation Rz(alpha) Ry(beta) Rz(gamma).
[[nodiscard]] Mat3 euler_zyz(double alpha, double beta, double gamma);

/// Inverse of euler_zyz with beta in [0, pi]; alpha, gamma in (-pi, pi].
[[nodiscard]] std::array<double, 3> zyz_angles(const Mat3& r);

/// Unit quaternion (w, x, y, z) to matrix; the input is normalized first.
[[nodiscard]] Mat3 quaternion_to_matrix(double w, double x, double y, double z);

/// diag(1, 1, -1): reflection through the xy plane.
[[nodiscard]] Mat3 z_mirror();

} // namespace cryoforge
