// Copyright Contributors to the lvslam project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <cmath>
#include <vector>

#include "lvslam/frame.hpp"
#include "lvslam/geometry.hpp"
#include "lvslam/image.hpp"

namespace lvslam {

struct SemanticConfig {
    int num_classes = 1;
    std::vector<std::string> class_names;
};

struct FeatureConfig {
    int dimension = 1;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// One 3D splat primitive: geometry plus color, semantic-logit and feature
/// attributes. log_scale is kept in [log(1e-4), log(50)] by the optimizer.
struct Gaussian {
    Vec3 position = Vec3::Zero();               // meters, world frame
    Vec3 log_scale = Vec3::Constant(-3.0);      // log-meters, per axis
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
    double opacity_logit = 0.0;
    Vec3 color = Vec3::Zero();                  // [0,1] after clamp
    Eigen::VectorXd semantic_logits;            // length L
    Eigen::VectorXd feature;                    // length N_d
};

constexpr double kMinLogScale = -9.210340371976182;  // log(1e-4)
constexpr double kMaxLogScale = 3.912023005428146;   // log(50)

struct Submap {
    Vec3 origin = Vec3::Zero();  // meters
    double extent = 50.0;        // half-width of the active range
    std::vector<Gaussian> gaussians;
    bool frozen = false;

    bool contains(const Vec3& p) const {
        return (p - origin).cwiseAbs().maxCoeff() <= extent;
    }
};

/// Creates one Gaussian per LiDAR point that projects inside the image and
/// is not covered by the refined dynamic mask. `scan_cam` must already be in
/// the camera frame of `pose`.
inline std::vector<Gaussian> init_from_lidar(const PointCloud& scan_cam, const SE3Pose& pose,
                                             const CameraIntrinsics& k, const FrameBundle& frame,
                                             const Mask& refined_mask,
                                             const SemanticConfig& sem, const FeatureConfig& feat,
                                             double k_scale = 1.0) {
    frame.validate(k.height, k.width);
    if (refined_mask.height() != k.height || refined_mask.width() != k.width)
        throw DimensionMismatch("init_from_lidar: refined mask dimensions do not match intrinsics");
    if (frame.features.channels() != feat.dimension)
        throw DimensionMismatch("init_from_lidar: feature map channel count != N_d");

    std::vector<Gaussian> out;
    out.reserve(scan_cam.size());
    for (const auto& x_cam : scan_cam.points) {
        if (x_cam.z() <= 1e-8) continue;
        const Projection pr = project(k, x_cam);
        const int c = static_cast<int>(std::lround(pr.u));
        const int r = static_cast<int>(std::lround(pr.v));
        if (c < 0 || c >= k.width || r < 0 || r >= k.height) continue;
        if (refined_mask.at(r, c) != 0) continue;

        Gaussian g;
        g.position = pose * x_cam;
        g.log_scale = Vec3::Constant(std::log(k_scale * pr.depth / k.fx));
        g.rotation = Eigen::Quaterniond::Identity();
        g.opacity_logit = logit(0.5);
        g.color = Vec3(frame.image.at(r, c, 0), frame.image.at(r, c, 1), frame.image.at(r, c, 2));
        g.semantic_logits = Eigen::VectorXd::Zero(sem.num_classes);
        const std::uint8_t label = frame.semantic_labels.at(r, c);
        if (label < sem.num_classes) g.semantic_logits[label] = 10.0;
        g.feature = Eigen::VectorXd(feat.dimension);
        for (int ch = 0; ch < feat.dimension; ++ch) g.feature[ch] = frame.features.at(r, c, ch);
        out.push_back(std::move(g));
    }
    return out;
}

/// Submap collection with at most one active submap. Submaps live on a grid
/// of pitch `extent`; assignment snaps the pose translation to that grid.
class GaussianWorld {
public:
    explicit GaussianWorld(double extent = 50.0) : extent_(extent) {}

    double extent() const { return extent_; }
    const std::vector<Submap>& submaps() const { return submaps_; }
    std::vector<Submap>& submaps() { return submaps_; }

    /// Returns the active submap for this pose, creating it if absent.
    /// A previously active submap with a different origin becomes frozen.
    Submap& assign_submap(const SE3Pose& pose) {
        const Vec3 t = pose.translation();
        const Vec3 origin(std::round(t.x() / extent_) * extent_,
                          std::round(t.y() / extent_) * extent_,
                          std::round(t.z() / extent_) * extent_);
        int found = -1;
        for (std::size_t i = 0; i < submaps_.size(); ++i)
            if ((submaps_[i].origin - origin).norm() < 1e-9) {
                found = static_cast<int>(i);
                break;
            }
        if (found < 0) {
            Submap s;
            s.origin = origin;
            s.extent = extent_;
            submaps_.push_back(std::move(s));
            found = static_cast<int>(submaps_.size()) - 1;
        }
        if (active_ >= 0 && active_ != found) submaps_[active_].frozen = true;
        active_ = found;
        submaps_[active_].frozen = false;
        return submaps_[active_];
    }

    Submap* active_submap() { return active_ >= 0 ? &submaps_[active_] : nullptr; }
    const Submap* active_submap() const { return active_ >= 0 ? &submaps_[active_] : nullptr; }

    /// Inserts gaussians into the active submap, skipping positions outside
    /// its active range.
    std::size_t insert_into_active(const std::vector<Gaussian>& gaussians) {
        if (active_ < 0) throw StateMismatch("GaussianWorld: no active submap");
        Submap& s = submaps_[active_];
        std::size_t added = 0;
        for (const auto& g : gaussians)
            if (s.contains(g.position)) {
                s.gaussians.push_back(g);
                ++added;
            }
        return added;
    }

    std::size_t total_gaussians() const {
        std::size_t n = 0;
        for (const auto& s : submaps_) n += s.gaussians.size();
        return n;
    }

private:
    double extent_;
    std::vector<Submap> submaps_;
    int active_ = -1;
};

/// Removes Gaussians whose opacity falls below opacity_min; returns the count.
inline std::size_t prune(Submap& submap, double opacity_min) {
    const std::size_t before = submap.gaussians.size();
    std::erase_if(submap.gaussians,
                  [&](const Gaussian& g) { return sigmoid(g.opacity_logit) < opacity_min; });
    return before - submap.gaussians.size();
}

}  // namespace lvslam
