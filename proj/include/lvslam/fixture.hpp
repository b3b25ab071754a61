// Copyright Contributors to the lvslam project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lvslam/dynamic_mask.hpp"
#include "lvslam/io/dataset.hpp"

namespace lvslam::fixture {

// Synthetic corridor world used by the shipped test fixture: ground, two
// side walls, an end wall, a few box obstacles and (optionally) a moving
// box. Surfaces carry analytic color, semantic class and feature fields, so
// every dataset asset can be generated exactly by raycasting.

struct Aabb {
    Vec3 lo, hi;
    int semantic = 0;
};

struct Hit {
    double t = 0.0;
    Vec3 point = Vec3::Zero();
    int semantic = -1;
    bool dynamic = false;
};

struct FixtureConfig {
    int frames = 30;
    bool dynamic = true;
    int width = 80;
    int height = 60;
    double fx = 70.0, fy = 70.0;
    int num_classes = 4;   // ground, wall, box, dynamic
    int feature_dim = 8;
    int lidar_rows = 48, lidar_cols = 128;
    double lidar_max_range = 35.0;
};

namespace detail {

inline std::vector<Aabb> shelving();

/// The bare corridor: ground, walls, ceiling, a few box obstacles and floor
/// bars, but none of the shelving clutter.
inline std::vector<Aabb> corridor() {
    return {
        {{-9.0, 1.5, -5.0}, {9.0, 1.7, 62.0}, 0},    // ground
        {{-6.2, -2.5, -5.0}, {-6.0, 1.5, 62.0}, 1},  // left wall
        {{6.0, -2.5, -5.0}, {6.2, 1.5, 62.0}, 1},    // right wall
        {{-6.2, -2.7, -5.0}, {6.2, -2.5, 62.0}, 1},  // ceiling: no sky anywhere
        {{-6.2, -2.5, 58.0}, {6.2, 1.7, 58.3}, 1},   // end wall
        {{-4.3, -0.3, 5.2}, {-2.7, 1.5, 6.8}, 2},    // box obstacles
        {{2.7, -0.3, 13.2}, {4.3, 1.5, 14.8}, 2},
        {{-3.8, -0.3, 21.2}, {-2.2, 1.5, 22.8}, 2},
        {{2.2, -0.3, 29.2}, {3.8, 1.5, 30.8}, 2},
        {{-4.3, -0.3, 37.2}, {-2.7, 1.5, 38.8}, 2},
        {{2.7, -0.3, 45.2}, {4.3, 1.5, 46.8}, 2},
        {{-6.0, 1.25, 9.8}, {6.0, 1.5, 10.2}, 2},    // low bars across the floor
        {{-6.0, 1.25, 25.8}, {6.0, 1.5, 26.2}, 2},
        {{-6.0, 1.25, 41.8}, {6.0, 1.5, 42.2}, 2},
    };
}

inline std::vector<Aabb> static_world() {
    std::vector<Aabb> world = corridor();
    const std::vector<Aabb> clutter = shelving();
    world.insert(world.end(), clutter.begin(), clutter.end());
    return world;
}

/// Corridor shelving: the bare corridor is nearly translation-invariant
/// along its axis for a LiDAR, which starves scan matching of its forward
/// component; staggered clutter anchors it.
inline std::vector<Aabb> shelving() {
    std::vector<Aabb> boxes;
    for (int i = 0; i < 24; ++i) {
        const double z = 1.5 + 1.8 * i;
        const double x = (i % 2 ? 1 : -1) * (2.4 + 1.3 * ((i * 7) % 3));
        const double sx = 0.35 + 0.2 * ((i * 5) % 3), sz = 0.3 + 0.15 * ((i * 3) % 4);
        boxes.push_back({{x - sx, -0.5 + 0.3 * (i % 3), z - sz}, {x + sx, 1.5, z + sz}, 2});
    }
    for (int i = 0; i < 8; ++i) {
        const double z = 4.0 + 5.0 * i;
        const double x = (i % 2 ? -1.7 : 1.7);
        boxes.push_back({{x - 0.25, -1.6, z - 0.25}, {x + 0.25, 1.5, z + 0.25}, 2});
    }
    return boxes;
}

inline Aabb dynamic_box(int frame) {
    const double x = -1.5 + 0.06 * frame;
    const double z = 9.0 + 0.18 * frame;
    return {{x - 0.9, -0.3, z - 0.9}, {x + 0.9, 1.5, z + 0.9}, 3};
}

inline bool ray_aabb(const Vec3& origin, const Vec3& dir, const Aabb& box, double& t_hit) {
    double t0 = 1e-4, t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (std::abs(dir[a]) < 1e-12) {
            if (origin[a] < box.lo[a] || origin[a] > box.hi[a]) return false;
            continue;
        }
        double ta = (box.lo[a] - origin[a]) / dir[a];
        double tb = (box.hi[a] - origin[a]) / dir[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return false;
    }
    t_hit = t0;
    return true;
}

inline Hit trace(const Vec3& origin, const Vec3& dir, const std::vector<Aabb>& world,
                 const Aabb* dyn) {
    Hit best;
    best.t = std::numeric_limits<double>::infinity();
    for (const auto& box : world) {
        double t;
        if (ray_aabb(origin, dir, box, t) && t < best.t) {
            best.t = t;
            best.semantic = box.semantic;
            best.dynamic = false;
        }
    }
    if (dyn) {
        double t;
        if (ray_aabb(origin, dir, *dyn, t) && t < best.t) {
            best.t = t;
            best.semantic = dyn->semantic;
            best.dynamic = true;
        }
    }
    if (std::isinf(best.t)) {
        best.semantic = -1;
        return best;
    }
    best.point = origin + best.t * dir;
    return best;
}

/// Surface color field. The broad low-frequency bands leave photometric
/// tracking weakly constrained along the corridor; the feature field below
/// carries the sharp positional signal.
inline Vec3 surface_color(const Hit& h) {
    const Vec3& p = h.point;
    switch (h.semantic) {
        case 0:
            // deliberately constant along the corridor axis: photometric
            // tracking alone cannot fix the forward component here
            return Vec3(0.42 + 0.08 * std::sin(2 * M_PI * p.x() / 4.0), 0.45,
                        0.40 + 0.05 * std::cos(2 * M_PI * p.x() / 5.0));
        case 1:
            return Vec3(0.55, 0.52 + 0.08 * std::cos(2 * M_PI * p.y() / 3.0), 0.50);
        case 2:
            return Vec3(0.20 + 0.15 * std::sin(p.z()), 0.65, 0.25 + 0.10 * std::cos(p.x()));
        case 3:
            return Vec3(0.90, 0.45, 0.10);
        default:
            return Vec3(0.70, 0.80, 0.90);  // sky
    }
}

/// Per-surface feature vectors: a class signature in the first four channels
/// and a high-frequency positional encoding in the rest.
inline Eigen::VectorXd surface_feature(const Hit& h, int dim) {
    Eigen::VectorXd f = Eigen::VectorXd::Constant(dim, 0.05);
    if (h.semantic >= 0 && h.semantic < 4 && h.semantic < dim) f[h.semantic] = 1.0;
    const Vec3& p = h.point;
    if (dim > 4) f[4] = std::sin(2 * M_PI * p.z() / 3.0);
    if (dim > 5) f[5] = std::cos(2 * M_PI * p.z() / 3.0);
    if (dim > 6) f[6] = std::sin(2 * M_PI * p.x() / 2.5);
    if (dim > 7) f[7] = std::cos(2 * M_PI * p.x() / 2.5);
    return f;
}

inline Mask dilate(const Mask& in, int radius) {
    return mask_detail::morph(in, radius, true);
}

}  // namespace detail

/// Forward speed ramps up gently (small first inter-frame motions) and then
/// keeps oscillating, so a constant-velocity prediction always carries a
/// residual error for the pose optimizer to correct.
inline SE3Pose fixture_pose(int frame) {
    double z = 0.0;
    for (int i = 1; i <= frame; ++i) z += std::min(0.25, 0.05 * i) + 0.05 * std::sin(0.5 * i);
    const double yaw = 0.03 * std::sin(0.25 * frame);
    const Vec3 t(0.25 * std::sin(0.3 * frame), 0.0, z);
    return SE3Pose(Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Vec3::UnitY())), t);
}

inline SE3Pose fixture_extrinsic() {
    return SE3Pose(Eigen::Quaterniond::Identity(), Vec3(0.0, -0.1, 0.0));
}

/// One LiDAR sweep in the sensor frame. Each ray carries a stratified jitter
/// that is deterministic in (frame, row, col), mimicking the scan-pattern
/// variation of a moving sensor; identical grids would lock scan matching at
/// zero motion, and structured ring shifts bias it on smooth ground.
inline PointCloud lidar_scan(int frame, const FixtureConfig& cfg, const std::vector<Aabb>& world,
                             const Aabb* dyn) {
    const SE3Pose lidar_to_world = fixture_pose(frame) * fixture_extrinsic();
    const Mat3 rl = lidar_to_world.rotation_matrix();
    const Vec3 lidar_origin = lidar_to_world.translation();
    const double az_step = 100.0 / (cfg.lidar_cols - 1);
    const double el_step = 48.0 / (cfg.lidar_rows - 1);
    PointCloud scan;
    for (int row = 0; row < cfg.lidar_rows; ++row)
        for (int col = 0; col < cfg.lidar_cols; ++col) {
            std::uint64_t hv = static_cast<std::uint64_t>(frame) * 1000003ull +
                               static_cast<std::uint64_t>(row) * 8191ull + col;
            hv ^= hv >> 33; hv *= 0xff51afd7ed558ccdull;
            hv ^= hv >> 33; hv *= 0xc4ceb9fe1a85ec53ull;
            hv ^= hv >> 33;
            const double ja = static_cast<double>(hv & 0xffffff) / 16777216.0;
            const double je = static_cast<double>((hv >> 24) & 0xffffff) / 16777216.0;
            const double elev = (-26.0 + el_step * (row + je)) * M_PI / 180.0;
            const double azim = (-50.0 + az_step * (col + ja)) * M_PI / 180.0;
            const Vec3 dir_l(std::sin(azim) * std::cos(elev), std::sin(elev),
                             std::cos(azim) * std::cos(elev));
            const Hit h = detail::trace(lidar_origin, rl * dir_l, world, dyn);
            if (h.semantic < 0 || h.t > cfg.lidar_max_range) continue;
            scan.points.push_back(lidar_to_world.inverse() * h.point);
            scan.intensities.push_back(0.5f);
        }
    return scan;
}

/// Writes a complete synthetic dataset (all asset types plus ground-truth
/// poses and motion masks) under `out_dir`.
inline void make_fixture(const std::string& out_dir, const FixtureConfig& cfg = {}) {
    namespace fs = std::filesystem;
    for (const char* sub : {"image", "scan", "depth", "semantic", "feature", "mask", "gt_mask"})
        fs::create_directories(fs::path(out_dir) / sub);

    io::Calibration calib;
    calib.intrinsics = CameraIntrinsics(cfg.fx, cfg.fy, cfg.width / 2.0, cfg.height / 2.0,
                                        cfg.width, cfg.height);
    calib.cam_from_lidar = fixture_extrinsic();
    calib.semantic.num_classes = cfg.num_classes;
    calib.feature.dimension = cfg.feature_dim;
    io::save_calibration((fs::path(out_dir) / "calib.txt").string(), calib);

    const auto world = detail::static_world();
    Trajectory gt;

    for (int frame = 0; frame < cfg.frames; ++frame) {
        const SE3Pose pose = fixture_pose(frame);
        gt.push_back(TimedPose{static_cast<double>(frame), pose});
        const Aabb dyn = detail::dynamic_box(frame);
        const Aabb* dyn_ptr = cfg.dynamic ? &dyn : nullptr;

        const CameraIntrinsics& k = calib.intrinsics;
        ImageF image(k.height, k.width, 3);
        ImageF depth(k.height, k.width, 1);
        ImageU8 labels(k.height, k.width, 1, 255);
        ImageF features(k.height, k.width, cfg.feature_dim);
        Mask motion(k.height, k.width, 1);

        const SE3Pose world_from_cam = pose;
        const Mat3 r = world_from_cam.rotation_matrix();
        const Vec3 origin = world_from_cam.translation();
        for (int row = 0; row < k.height; ++row)
            for (int col = 0; col < k.width; ++col) {
                const Vec3 dir_cam((col - k.cx) / k.fx, (row - k.cy) / k.fy, 1.0);
                const Vec3 dir = (r * dir_cam).normalized();
                const Hit h = detail::trace(origin, dir, world, dyn_ptr);
                const Vec3 color = detail::surface_color(h);
                for (int ch = 0; ch < 3; ++ch) image.at(row, col, ch) = color[ch];
                const Eigen::VectorXd f = detail::surface_feature(h, cfg.feature_dim);
                for (int ch = 0; ch < cfg.feature_dim; ++ch) features.at(row, col, ch) = f[ch];
                if (h.semantic >= 0) {
                    labels.at(row, col) = static_cast<std::uint8_t>(h.semantic);
                    depth.at(row, col) = (world_from_cam.inverse() * h.point).z();
                    if (h.dynamic) motion.at(row, col) = 255;
                }
            }

        const PointCloud scan = lidar_scan(frame, cfg, world, dyn_ptr);

        // Explicit mask over-segments the mover by a 2-pixel dilation, the
        // way an open-world segmenter outlines generously.
        const Mask explicit_mask = detail::dilate(motion, 2);

        auto path = [&](const char* sub, const char* ext) {
            char name[32];
            std::snprintf(name, sizeof(name), "%06d%s", frame, ext);
            return (fs::path(out_dir) / sub / name).string();
        };
        io::save_color_image(path("image", ".ppm"), image);
        io::save_scan(path("scan", ".bin"), scan);
        io::save_depth(path("depth", ".bin"), depth);
        io::save_labels(path("semantic", ".pgm"), labels);
        io::save_feature_map(path("feature", ".lvdf"), features);
        io::save_mask(path("mask", ".pgm"), explicit_mask);
        io::save_mask(path("gt_mask", ".pgm"), motion);
    }
    io::write_trajectory(gt, (fs::path(out_dir) / "gt_poses.txt").string());
}

}  // namespace lvslam::fixture
