// Copyright Contributors to the lvslam project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "lvslam/frame.hpp"
#include "lvslam/gaussian_map.hpp"
#include "lvslam/io/formats.hpp"

namespace lvslam::io {

struct Calibration {
    CameraIntrinsics intrinsics;
    SE3Pose cam_from_lidar;
    SemanticConfig semantic;
    FeatureConfig feature;
};

namespace detail {

inline std::map<std::string, std::string> parse_key_values(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw MissingFile("cannot open " + path);
    std::map<std::string, std::string> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw CalibrationParseError(path + ":" + std::to_string(lineno) +
                                        ": expected key=value");
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        auto trim = [](std::string& s) {
            const auto b = s.find_first_not_of(" \t");
            const auto e = s.find_last_not_of(" \t\r");
            s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
        };
        trim(key);
        trim(value);
        out[key] = value;
    }
    return out;
}

}  // namespace detail

inline Calibration load_calibration(const std::string& path) {
    const auto kv = detail::parse_key_values(path);
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end())
            throw CalibrationParseError(path + ": missing key '" + key + "'");
        return it->second;
    };
    auto get_double = [&](const std::string& key) {
        try {
            std::size_t used = 0;
            const double v = std::stod(get(key), &used);
            return v;
        } catch (const Error&) {
            throw;
        } catch (const std::exception&) {
            throw CalibrationParseError(path + ": key '" + key + "' is not a number");
        }
    };
    Calibration calib;
    calib.intrinsics =
        CameraIntrinsics(get_double("fx"), get_double("fy"), get_double("cx"), get_double("cy"),
                         static_cast<int>(get_double("width")),
                         static_cast<int>(get_double("height")));
    calib.semantic.num_classes = static_cast<int>(get_double("classes"));
    calib.feature.dimension = static_cast<int>(get_double("feature_dim"));
    if (calib.semantic.num_classes < 1 || calib.feature.dimension < 1)
        throw CalibrationParseError(path + ": classes and feature_dim must be >= 1");

    std::istringstream es(get("t_cam_lidar"));
    double tx, ty, tz, qx, qy, qz, qw;
    if (!(es >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
        throw CalibrationParseError(path + ": t_cam_lidar must be 'tx ty tz qx qy qz qw'");
    calib.cam_from_lidar = SE3Pose(Eigen::Quaterniond(qw, qx, qy, qz), Vec3(tx, ty, tz));
    return calib;
}

inline void save_calibration(const std::string& path, const Calibration& c) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoFailure("cannot open " + path + " for writing");
    f.precision(12);
    const auto& k = c.intrinsics;
    const auto& q = c.cam_from_lidar.rotation();
    const auto& t = c.cam_from_lidar.translation();
    f << "fx=" << k.fx << "\nfy=" << k.fy << "\ncx=" << k.cx << "\ncy=" << k.cy
      << "\nwidth=" << k.width << "\nheight=" << k.height
      << "\nclasses=" << c.semantic.num_classes << "\nfeature_dim=" << c.feature.dimension
      << "\nt_cam_lidar=" << t.x() << " " << t.y() << " " << t.z() << " " << q.x() << " "
      << q.y() << " " << q.z() << " " << q.w() << "\n";
}

/// KITTI-style dataset directory with the precomputed per-frame assets.
///
///   root/calib.txt
///   root/image/%06d.ppm       root/scan/%06d.bin      root/depth/%06d.bin
///   root/semantic/%06d.pgm    root/feature/%06d.lvdf  root/mask/%06d.pgm
///   root/gt_poses.txt         (optional, TUM)
///   root/gt_mask/%06d.pgm     (optional ground-truth motion masks)
class Dataset {
public:
    explicit Dataset(const std::string& root) : root_(root) {
        namespace fs = std::filesystem;
        calib_ = load_calibration((fs::path(root_) / "calib.txt").string());
        while (fs::exists(frame_path("image", frame_count_, ".ppm"))) ++frame_count_;
        if (frame_count_ == 0)
            throw MissingFile("no frames found under " + root_ + "/image");
        const auto gt = fs::path(root_) / "gt_poses.txt";
        if (fs::exists(gt)) gt_trajectory_ = read_trajectory(gt.string());
    }

    int frame_count() const { return frame_count_; }
    const Calibration& calibration() const { return calib_; }
    const Trajectory& gt_trajectory() const { return gt_trajectory_; }

    std::string frame_path(const std::string& dir, int index, const std::string& ext) const {
        char name[32];
        std::snprintf(name, sizeof(name), "%06d%s", index, ext.c_str());
        return (std::filesystem::path(root_) / dir / name).string();
    }

    /// Loads and validates one frame. Throws MissingFile or
    /// DimensionMismatch naming the offending path.
    FrameBundle load_frame(int index) const {
        if (index < 0 || index >= frame_count_)
            throw MissingFile("frame index out of range for " + root_);
        FrameBundle frame;
        frame.index = index;
        frame.image = load_color_image(frame_path("image", index, ".ppm"));
        frame.scan = load_scan(frame_path("scan", index, ".bin"));
        frame.dense_depth = load_depth(frame_path("depth", index, ".bin"));
        frame.semantic_labels = load_labels(frame_path("semantic", index, ".pgm"));
        {
            const std::string path = frame_path("feature", index, ".lvdf");
            frame.features = load_feature_map(path);
            if (frame.features.channels() != calib_.feature.dimension)
                throw DimensionMismatch(path + ": feature dimension does not match calibration");
        }
        frame.explicit_mask = load_mask(frame_path("mask", index, ".pgm"));
        try {
            frame.validate(calib_.intrinsics.height, calib_.intrinsics.width);
        } catch (const Error& e) {
            throw DimensionMismatch(std::string(e.what()) + " (frame " + std::to_string(index) +
                                    " of " + root_ + ")");
        }
        if (index < static_cast<int>(gt_trajectory_.size()))
            frame.gt_pose = gt_trajectory_[index].pose;
        return frame;
    }

    std::optional<Mask> load_gt_motion_mask(int index) const {
        const std::string path = frame_path("gt_mask", index, ".pgm");
        if (!std::filesystem::exists(path)) return std::nullopt;
        return load_mask(path);
    }

private:
    std::string root_;
    Calibration calib_;
    int frame_count_ = 0;
    Trajectory gt_trajectory_;
};

inline Dataset open_dataset(const std::string& root) { return Dataset(root); }

}  // namespace lvslam::io
