#include "cryoforge/util/rotation.hpp"

#include <cmath>

#include <Eigen/SVD>
#include <Eigen/LU>

#include "cryoforge/common.hpp"

namespace cryoforge {

double orthonormality_drift(const Mat3& r) {
    const Mat3 gram = r.transpose() * r - Mat3::Identity();
    return gram.cwiseAbs().maxCoeff() + std::abs(r.determinant() - 1.0);
}

bool is_rotation(const Mat3& r, double tolerance) {
    if (!r.allFinite())
        return false;
    const Mat3 gram = r.transpose() * r - Mat3::Identity();
    return gram.cwiseAbs().maxCoeff() <= tolerance && std::abs(r.determinant() - 1.0) <= tolerance;
}

void require_rotation(const Mat3& r, const char* what, double tolerance) {
    check(is_rotation(r, tolerance), "{}: matrix is not a rotation (drift {:.3g}, tolerance {:.3g})", what,
          orthonormality_drift(r), tolerance);
}

Mat3 nearest_rotation(const Mat3& m) {
    Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 fix = Mat3::Identity();
    fix(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
    return svd.matrixU() * fix * svd.matrixV().transpose();
}

Mat3 rotation_z(double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    Mat3 r;
    r << c, -s, 0, s, c, 0, 0, 0, 1;
    return r;
}

Mat3 rotation_y(double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    Mat3 r;
    r << c, 0, s, 0, 1, 0, -s, 0, c;
    return r;
}

Mat3 euler_zyz(double alpha, double beta, double gamma) {
    return rotation_z(alpha) * rotation_y(beta) * rotation_z(gamma);
}

std::array<double, 3> zyz_angles(const Mat3& r) {
    const double beta = std::acos(std::clamp(r(2, 2), -1.0, 1.0));
    if (std::abs(std::sin(beta)) < 1e-12) {
        // Gimbal lock: only alpha + gamma (or alpha - gamma) is defined; put it all in alpha.
        const double alpha = std::atan2(r(1, 0), r(0, 0)) * (r(2, 2) > 0 ? 1.0 : 1.0);
        return {r(2, 2) > 0 ? alpha : std::atan2(-r(0, 1), -r(0, 0)), beta, 0.0};
    }
    return {std::atan2(r(1, 2), r(0, 2)), beta, std::atan2(r(2, 1), -r(2, 0))};
}

Mat3 quaternion_to_matrix(double w, double x, double y, double z) {
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    check(n > 0.0, "quaternion_to_matrix: zero quaternion");
    w /= n;
    x /= n;
    y /= n;
    z /= n;
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),
         2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
         2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y);
    return r;
}

Mat3 z_mirror() {
    return Eigen::Vector3d(1.0, 1.0, -1.0).asDiagonal();
}

} // namespace cryoforge
