// Copyright Contributors to the lvslam project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <optional>
#include <vector>

#include "lvslam/errors.hpp"

namespace lvslam {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

inline Mat3 skew(const Vec3& v) {
    Mat3 m;
    m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return m;
}

/// Rigid-body pose. Stores a unit quaternion (renormalized after every
/// construction and composition) and a translation in meters.
class SE3Pose {
public:
    SE3Pose() : rotation_(Eigen::Quaterniond::Identity()), translation_(Vec3::Zero()) {}

    SE3Pose(const Eigen::Quaterniond& q, const Vec3& t)
        : rotation_(q.normalized()), translation_(t) {}

    SE3Pose(const Mat3& r, const Vec3& t) : rotation_(r), translation_(t) {
        rotation_.normalize();
    }

    static SE3Pose identity() { return SE3Pose(); }

    const Eigen::Quaterniond& rotation() const { return rotation_; }
    const Vec3& translation() const { return translation_; }
    Mat3 rotation_matrix() const { return rotation_.toRotationMatrix(); }

    Eigen::Matrix4d matrix() const {
        Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
        m.topLeftCorner<3, 3>() = rotation_matrix();
        m.topRightCorner<3, 1>() = translation_;
        return m;
    }

    SE3Pose inverse() const {
        Eigen::Quaterniond qi = rotation_.conjugate();
        return SE3Pose(qi, qi * (-translation_));
    }

    /// Applies this pose to a point: R*x + t.
    Vec3 operator*(const Vec3& x) const { return rotation_ * x + translation_; }

    /// Composition: (a*b) applies b first, then a.
    SE3Pose operator*(const SE3Pose& b) const {
        return SE3Pose(rotation_ * b.rotation_, rotation_ * b.translation_ + translation_);
    }

    /// Rotation angle in radians of the relative rotation to `other`.
    /// atan2 form: accurate for small angles where acos degrades.
    double rotation_distance(const SE3Pose& other) const {
        const Eigen::Quaterniond d = rotation_.conjugate() * other.rotation_;
        return 2.0 * std::atan2(d.vec().norm(), std::abs(d.w()));
    }

    double translation_distance(const SE3Pose& other) const {
        return (translation_ - other.translation_).norm();
    }

private:
    Eigen::Quaterniond rotation_;
    Vec3 translation_;
};

inline SE3Pose se3_compose(const SE3Pose& a, const SE3Pose& b) { return a * b; }
inline Vec3 se3_apply(const SE3Pose& p, const Vec3& x) { return p * x; }

/// SE(3) exponential map; tangent is (rho, phi) with phi the rotation part.
inline SE3Pose se3_exp(const Vec6& xi) {
    const Vec3 rho = xi.head<3>();
    const Vec3 phi = xi.tail<3>();
    const double theta = phi.norm();
    Mat3 r;
    Mat3 v;
    if (theta < 1e-9) {
        const Mat3 px = skew(phi);
        r = Mat3::Identity() + px + 0.5 * px * px;
        v = Mat3::Identity() + 0.5 * px;
    } else {
        const Vec3 axis = phi / theta;
        r = Eigen::AngleAxisd(theta, axis).toRotationMatrix();
        const Mat3 px = skew(phi);
        v = Mat3::Identity() + (1.0 - std::cos(theta)) / (theta * theta) * px +
            (theta - std::sin(theta)) / (theta * theta * theta) * px * px;
    }
    return SE3Pose(r, v * rho);
}

/// SE(3) logarithm, inverse of se3_exp.
inline Vec6 se3_log(const SE3Pose& p) {
    Eigen::AngleAxisd aa(p.rotation());
    Vec3 phi = aa.angle() * aa.axis();
    const double theta = phi.norm();
    Mat3 v_inv;
    if (theta < 1e-9) {
        v_inv = Mat3::Identity() - 0.5 * skew(phi);
    } else {
        const Mat3 px = skew(phi);
        const double half = 0.5 * theta;
        v_inv = Mat3::Identity() - 0.5 * px +
                (1.0 - half * std::cos(half) / std::sin(half)) / (theta * theta) * px * px;
    }
    Vec6 xi;
    xi.head<3>() = v_inv * p.translation();
    xi.tail<3>() = phi;
    return xi;
}

/// Right retraction used by the pose optimizer: p * exp(xi).
inline SE3Pose se3_retract(const SE3Pose& p, const Vec6& xi) { return p * se3_exp(xi); }

struct CameraIntrinsics {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;

    CameraIntrinsics() = default;
    CameraIntrinsics(double fx_, double fy_, double cx_, double cy_, int w, int h)
        : fx(fx_), fy(fy_), cx(cx_), cy(cy_), width(w), height(h) {
        if (fx <= 0 || fy <= 0) throw Error("CameraIntrinsics: focal lengths must be positive");
        if (w < 1 || h < 1) throw Error("CameraIntrinsics: image size must be at least 1x1");
    }
};

struct Projection {
    double u, v, depth;
};

/// Pinhole projection of a camera-frame point. z-forward, x-right, y-down.
inline Projection project(const CameraIntrinsics& k, const Vec3& x_cam) {
    if (x_cam.z() <= 1e-8) throw BehindCamera("project: point at or behind the camera plane");
    return Projection{k.fx * x_cam.x() / x_cam.z() + k.cx, k.fy * x_cam.y() / x_cam.z() + k.cy,
                      x_cam.z()};
}

inline Vec3 unproject(const CameraIntrinsics& k, double u, double v, double depth) {
    return Vec3((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth);
}

struct PointCloud {
    std::vector<Vec3> points;
    std::vector<float> intensities;  // optional; empty or same length as points

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

inline PointCloud transform_cloud(const PointCloud& cloud, const SE3Pose& pose) {
    PointCloud out;
    out.points.reserve(cloud.size());
    for (const auto& p : cloud.points) out.points.push_back(pose * p);
    out.intensities = cloud.intensities;
    return out;
}

}  // namespace lvslam
