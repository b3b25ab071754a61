// Copyright Contributors to the lvslam project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <unordered_set>
#include <vector>

#include "lvslam/geometry.hpp"
#include "lvslam/voxel_hash_map.hpp"

namespace lvslam {

/// KISS-ICP style adaptive correspondence threshold driven by the deviation
/// between the motion-model prediction and the registered result.
class AdaptiveThreshold {
public:
    AdaptiveThreshold(double initial_threshold, double min_motion, double max_range)
        : initial_(initial_threshold), min_motion_(min_motion), max_range_(max_range) {}

    double current_threshold() const {
        if (num_samples_ == 0) return initial_;
        return std::sqrt(sse_ / num_samples_);
    }

    void update_model_deviation(const SE3Pose& deviation) {
        const double theta = deviation.rotation_distance(SE3Pose::identity());
        const double error =
            deviation.translation().norm() + 2.0 * max_range_ * std::sin(theta / 2.0);
        if (error > min_motion_) {
            sse_ += error * error;
            num_samples_ += 1;
        }
    }

private:
    double initial_;
    double min_motion_;
    double max_range_;
    double sse_ = 0.0;
    int num_samples_ = 0;
};

/// Keeps at most one point per voxel; the first point inserted wins.
inline PointCloud voxel_downsample(const PointCloud& cloud, double voxel_size) {
    PointCloud out;
    std::unordered_set<Voxel, VoxelHash> seen;
    seen.reserve(cloud.size());
    const bool has_intensity = cloud.intensities.size() == cloud.points.size();
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
        if (seen.insert(point_to_voxel(cloud.points[i], voxel_size)).second) {
            out.points.push_back(cloud.points[i]);
            if (has_intensity) out.intensities.push_back(cloud.intensities[i]);
        }
    }
    return out;
}

/// Constant-velocity prediction: prev * (prev_prev^-1 * prev).
inline SE3Pose predict_initial(const SE3Pose& prev, const SE3Pose& prev_prev) {
    return prev * (prev_prev.inverse() * prev);
}

struct RegistrationResult {
    SE3Pose pose;
    bool converged = false;
    int iterations = 0;
    /// Robust objective value at each accepted Gauss-Newton step.
    std::vector<double> objective_trace;
};

namespace detail {

struct Correspondence {
    Vec3 source_local;
    Vec3 target;
};

inline void find_correspondences(const VoxelHashMap& map, const PointCloud& scan,
                                 const SE3Pose& pose, double max_distance,
                                 std::vector<Correspondence>& out) {
    out.clear();
    for (const auto& p : scan.points) {
        const Vec3 world = pose * p;
        Vec3 nn;
        double dist;
        if (map.nearest_neighbor(world, nn, dist) && dist <= max_distance)
            out.push_back(Correspondence{p, nn});
    }
}

inline double robust_objective(const std::vector<Correspondence>& corr, const SE3Pose& pose,
                               double kernel) {
    const double k2 = kernel * kernel;
    double sum = 0.0;
    for (const auto& c : corr) {
        const double r2 = (pose * c.source_local - c.target).squaredNorm();
        sum += r2 / (r2 + k2);  // Geman-McClure
    }
    return sum;
}

}  // namespace detail

/// Robust point-to-point scan-to-map ICP. Correspondences come from the
/// 3x3x3 adjacent-voxel neighborhood, gated at 3x the adaptive threshold;
/// residuals are weighted with a Geman-McClure kernel at threshold/3 and the
/// pose update solved by Gauss-Newton with left perturbation. A step is only
/// accepted if it does not increase the robust objective (backtracking line
/// search); terminates when the accepted update norm drops below 1e-4.
inline RegistrationResult register_scan(const VoxelHashMap& map, const PointCloud& scan,
                                        const SE3Pose& init, const AdaptiveThreshold& thr,
                                        int max_iterations = 100) {
    if (map.empty()) throw EmptyInput("register_scan: map is empty");
    if (scan.empty()) throw EmptyInput("register_scan: scan is empty");

    const double sigma = thr.current_threshold();
    const double max_distance = 3.0 * sigma;
    const double kernel = sigma / 3.0;
    const double k2 = kernel * kernel;

    RegistrationResult result;
    result.pose = init;

    std::vector<detail::Correspondence> corr;
    double prev_update_norm = std::numeric_limits<double>::infinity();
    double prev_cost = std::numeric_limits<double>::infinity();
    int growth_streak = 0;

    for (int iter = 0; iter < max_iterations; ++iter) {
        detail::find_correspondences(map, scan, result.pose, max_distance, corr);
        if (corr.empty()) break;

        Mat6 jtj = Mat6::Zero();
        Vec6 jtr = Vec6::Zero();
        for (const auto& c : corr) {
            const Vec3 world = result.pose * c.source_local;
            const Vec3 r = world - c.target;
            const double r2 = r.squaredNorm();
            // w = d(rho)/d(r2) for rho = r2/(r2+k2)
            const double w = k2 / ((r2 + k2) * (r2 + k2));
            Eigen::Matrix<double, 3, 6> jac;
            jac.leftCols<3>() = Mat3::Identity();
            jac.rightCols<3>() = -skew(world);
            jtj.noalias() += w * jac.transpose() * jac;
            jtr.noalias() += w * jac.transpose() * r;
        }

        Vec6 dx = jtj.ldlt().solve(-jtr);
        const double cost_before = detail::robust_objective(corr, result.pose, kernel);
        double step = 1.0;
        SE3Pose candidate = se3_exp(dx) * result.pose;
        double cost_after = detail::robust_objective(corr, candidate, kernel);
        int backtracks = 0;
        while (cost_after > cost_before && backtracks < 8) {
            step *= 0.5;
            candidate = se3_exp(Vec6(step * dx)) * result.pose;
            cost_after = detail::robust_objective(corr, candidate, kernel);
            ++backtracks;
        }
        if (cost_after > cost_before) break;  // no acceptable step

        result.pose = candidate;
        result.iterations = iter + 1;
        result.objective_trace.push_back(cost_after);

        // Norm growth alone is not divergence: after a correspondence
        // refresh the solver often accelerates into a better basin while
        // the objective keeps falling. Flag only sustained growth that
        // fails to buy any objective improvement.
        const double update_norm = (step * dx).norm();
        if (update_norm > prev_update_norm && cost_after >= prev_cost) {
            if (++growth_streak >= 5)
                throw Diverged("register_scan: update norm grew 5 consecutive iterations");
        } else {
            growth_streak = 0;
        }
        prev_update_norm = update_norm;
        prev_cost = cost_after;

        if (update_norm < 1e-4) {
            result.converged = true;
            break;
        }
    }
    return result;
}

/// Transforms kept scan points into the world frame and inserts them,
/// then evicts map voxels out of range of the current pose. A nonempty
/// static_mask keeps only points flagged true (static).
inline void update_map(VoxelHashMap& map, const PointCloud& scan, const SE3Pose& pose,
                       const std::vector<bool>& static_mask = {}) {
    if (!static_mask.empty() && static_mask.size() != scan.size())
        throw LengthMismatch("update_map: static_mask length differs from scan size");
    for (std::size_t i = 0; i < scan.points.size(); ++i) {
        if (!static_mask.empty() && !static_mask[i]) continue;
        map.insert(pose * scan.points[i]);
    }
    map.evict_beyond(pose.translation());
}

}  // namespace lvslam
