// Copyright Contributors to the lvslam project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>

#include "lvslam/geometry.hpp"
#include "lvslam/image.hpp"

namespace lvslam {

/// One timestep of ingested data. The depth, semantic, feature and mask
/// channels are precomputed per-frame assets loaded from disk.
struct FrameBundle {
    int index = 0;
    ImageF image;            // H x W x 3, [0,1]
    PointCloud scan;         // LiDAR frame (sensor coordinates)
    ImageF dense_depth;      // H x W, meters, 0 = invalid
    ImageU8 semantic_labels; // H x W, class index, 255 = ignore
    ImageF features;         // H x W x N_d
    Mask explicit_mask;      // H x W, nonzero = dynamic
    std::optional<SE3Pose> gt_pose;  // evaluation only

    void validate(int height, int width) const {
        auto check = [&](int h, int w, const char* what) {
            if (h != height || w != width)
                throw DimensionMismatch(std::string("FrameBundle: ") + what +
                                        " dimensions do not match the camera intrinsics");
        };
        check(image.height(), image.width(), "image");
        check(dense_depth.height(), dense_depth.width(), "dense depth");
        check(semantic_labels.height(), semantic_labels.width(), "semantic labels");
        check(features.height(), features.width(), "feature map");
        check(explicit_mask.height(), explicit_mask.width(), "explicit mask");
        if (scan.empty()) throw EmptyInput("FrameBundle: LiDAR scan is empty");
    }
};

}  // namespace lvslam
