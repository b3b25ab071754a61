// Copyright Contributors to the lvslam project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <deque>
#include <string>
#include <vector>

#include "lvslam/config.hpp"
#include "lvslam/dynamic_mask.hpp"
#include "lvslam/frame.hpp"
#include "lvslam/gaussian_map.hpp"
#include "lvslam/io/dataset.hpp"
#include "lvslam/losses.hpp"
#include "lvslam/rasterizer.hpp"
#include "lvslam/registration.hpp"

namespace lvslam {

struct Keyframe {
    int frame_index = 0;
    SE3Pose pose;
    Mask refined_mask;
    ImageF image;
    ImageF dense_depth;
    ImageU8 semantic_labels;
    ImageF features;
};

struct LossLogEntry {
    int frame = 0;
    int iteration = 0;
    LossReport report;
};

/// Frame-by-frame SLAM orchestration: loss-prior tracking with ICP
/// refinement, residual-based dynamic masking, LiDAR Gaussian initialization
/// and submap mapping. Strictly sequential; a fixed seed gives bit-identical
/// runs.
class Pipeline {
public:
    Pipeline(const io::Calibration& calib, const PipelineConfig& config)
        : calib_(calib), config_(config),
          voxel_map_(config.voxel_size, config.max_points_per_voxel, config.map_range),
          threshold_(config.icp_initial_threshold, config.icp_min_motion, config.map_range),
          world_(config.submap_extent) {}

    const Trajectory& trajectory() const { return trajectory_; }
    const GaussianWorld& world() const { return world_; }
    GaussianWorld& world() { return world_; }
    const std::vector<Mask>& refined_masks() const { return refined_masks_; }
    const std::vector<LossLogEntry>& loss_log() const { return loss_log_; }
    const std::vector<std::string>& warnings() const { return warnings_; }
    const std::vector<Keyframe>& keyframes() const { return keyframes_; }
    const io::Calibration& calibration() const { return calib_; }

    void process_frame(const FrameBundle& frame) {
        const CameraIntrinsics& k = calib_.intrinsics;
        frame.validate(k.height, k.width);

        PointCloud scan_cam;
        scan_cam.points.reserve(frame.scan.size());
        for (const auto& p : frame.scan.points) {
            if (p.norm() > config_.lidar_max_range) continue;
            scan_cam.points.push_back(calib_.cam_from_lidar * p);
        }
        if (scan_cam.empty()) throw EmptyInput("process_frame: scan empty after range filter");

        SE3Pose pose;
        if (!trajectory_.empty()) pose = track(frame, scan_cam);

        // Dynamic-mask generation: explicit mask refined by the render residual.
        Mask refined(k.height, k.width, 1);
        if (config_.dynamic_masking) {
            if (world_.total_gaussians() == 0) {
                refined = frame.explicit_mask;  // bootstrap: no render exists yet
            } else {
                const RenderOutput out = render_world(pose);
                const ImageF residual =
                    residual_map(out, frame.features, frame.dense_depth, config_.uncertainty);
                const double sigma = fit_sigma(residual, config_.masking);
                const Mask implicit = implicit_mask(residual, sigma, config_.masking);
                refined = fuse_masks(frame.explicit_mask, implicit);
            }
        }

        const bool is_keyframe =
            trajectory_.empty() || frame.index % config_.keyframe_interval == 0 ||
            (pose.translation() - last_keyframe_pose_.translation()).norm() >
                config_.keyframe_translation;

        if (is_keyframe) {
            // Registration map update with static-filtered points.
            PointCloud fine = voxel_downsample(scan_cam, 0.5 * config_.voxel_size);
            std::vector<bool> flags;
            if (config_.dynamic_masking) flags = lift_mask_to_points(refined, fine, k);
            update_map(voxel_map_, fine, pose, flags);

            world_.assign_submap(pose);
            PointCloud init_scan;
            for (std::size_t i = 0; i < scan_cam.size(); i += config_.gaussian_init_stride)
                init_scan.points.push_back(scan_cam.points[i]);
            world_.insert_into_active(init_from_lidar(init_scan, pose, k, frame, refined,
                                                      calib_.semantic, calib_.feature,
                                                      config_.gaussian_init_scale));

            Keyframe kf;
            kf.frame_index = frame.index;
            kf.pose = pose;
            kf.refined_mask = refined;
            kf.image = frame.image;
            kf.dense_depth = frame.dense_depth;
            kf.semantic_labels = frame.semantic_labels;
            kf.features = frame.features;
            keyframes_.push_back(std::move(kf));
            last_keyframe_pose_ = pose;

            map_step(frame.index);
        }

        trajectory_.push_back(TimedPose{static_cast<double>(frame.index), pose});
        refined_masks_.push_back(refined);
        prev_refined_mask_ = refined;
    }

    /// Renders every Gaussian in the world at the given camera pose.
    RenderOutput render_world(const SE3Pose& pose, RenderContext* ctx = nullptr) const {
        return render(gather_gaussians(), pose, calib_.intrinsics, calib_.semantic.num_classes,
                      calib_.feature.dimension, ctx);
    }

    std::vector<Gaussian> export_gaussians() const {
        std::vector<Gaussian> out;
        out.reserve(world_.total_gaussians());
        for (const auto& s : world_.submaps())
            out.insert(out.end(), s.gaussians.begin(), s.gaussians.end());
        return out;
    }

private:
    std::vector<const Gaussian*> gather_gaussians() const {
        std::vector<const Gaussian*> ptrs;
        ptrs.reserve(world_.total_gaussians());
        for (const auto& s : world_.submaps())
            for (const auto& g : s.gaussians) ptrs.push_back(&g);
        return ptrs;
    }

    LossWeights effective_weights() const {
        LossWeights w = config_.weights;
        if (!config_.hier_losses) {
            w.lambda_s = 0.0;
            w.lambda_dino = 0.0;
        }
        return w;
    }

    /// Loss-prior pose optimization followed by scan-to-map ICP refinement.
    SE3Pose track(const FrameBundle& frame, const PointCloud& scan_cam) {
        const std::size_t n = trajectory_.size();
        SE3Pose pose = n >= 2 ? predict_initial(trajectory_[n - 1].pose, trajectory_[n - 2].pose)
                              : trajectory_[n - 1].pose;

        if (world_.total_gaussians() > 0) {
            const LossWeights weights = effective_weights();
            const Mask& mask = config_.dynamic_masking ? prev_refined_mask_ : empty_mask_;
            Adam pose_adam(6);
            for (int it = 0; it < config_.tracking_iterations; ++it) {
                RenderContext ctx;
                const RenderOutput out = render_world(pose, &ctx);
                // Pixels the map barely covers render near-background values;
                // their residuals say nothing about the pose, so gate them out.
                Mask gated(out.alpha.height(), out.alpha.width(), 1);
                if (mask.size() == gated.size()) gated = mask;
                for (int r = 0; r < out.alpha.height(); ++r)
                    for (int c = 0; c < out.alpha.width(); ++c)
                        if (out.alpha.at(r, c) < config_.tracking_min_alpha) gated.at(r, c) = 255;
                try {
                    const OutputGrads upstream =
                        loss_backward(out, frame.image, frame.dense_depth, frame.semantic_labels,
                                      frame.features, gated, weights);
                    const RenderGrads grads = render_backward(ctx, out, upstream, true);
                    const Eigen::VectorXd update =
                        pose_adam.step(grads.pose, config_.steps.pose);
                    pose = se3_retract(pose, -Vec6(update));
                } catch (const EmptyPixelSet&) {
                    warnings_.push_back("tracking: every pixel masked, frame " +
                                       std::to_string(frame.index));
                    break;
                }
            }
        }

        if (!voxel_map_.empty()) {
            const PointCloud coarse = voxel_downsample(scan_cam, 1.5 * config_.voxel_size);
            try {
                const RegistrationResult reg = register_scan(voxel_map_, coarse, pose, threshold_,
                                                             config_.icp_max_iterations);
                threshold_.update_model_deviation(pose.inverse() * reg.pose);
                pose = reg.pose;  // the ICP result overwrites the loss prior
            } catch (const Diverged& e) {
                warnings_.push_back(std::string("tracking: ") + e.what());
            }
        }
        return pose;
    }

    /// Mapping optimization over the most recent keyframes (round-robin).
    void map_step(int frame_index) {
        Submap* active = world_.active_submap();
        if (!active || keyframes_.empty() || config_.mapping_iterations == 0) return;

        const LossWeights weights = effective_weights();
        const std::size_t recent =
            std::min<std::size_t>(config_.recent_keyframes, keyframes_.size());

        auto make_optimizers = [&](std::size_t count) {
            struct Opt {
                Adam position, log_scale, rotation, opacity, color, semantic, feature;
            };
            Opt o;
            const auto n = static_cast<Eigen::Index>(count);
            o.position = Adam(3 * n);
            o.log_scale = Adam(3 * n);
            o.rotation = Adam(4 * n);
            o.opacity = Adam(n);
            o.color = Adam(3 * n);
            o.semantic = Adam(calib_.semantic.num_classes * n);
            o.feature = Adam(calib_.feature.dimension * n);
            return o;
        };
        auto optimizers = make_optimizers(active->gaussians.size());

        for (int it = 0; it < config_.mapping_iterations; ++it) {
            const Keyframe& kf = keyframes_[keyframes_.size() - recent + (it % recent)];

            std::vector<const Gaussian*> ptrs = gather_gaussians();
            // active submap gaussians occupy a contiguous block of ptrs
            std::size_t active_offset = 0;
            for (const auto& s : world_.submaps()) {
                if (&s == active) break;
                active_offset += s.gaussians.size();
            }
            const std::size_t active_count = active->gaussians.size();
            if (ptrs.empty()) return;

            RenderContext ctx;
            const RenderOutput out =
                render(ptrs, kf.pose, calib_.intrinsics, calib_.semantic.num_classes,
                       calib_.feature.dimension, &ctx);
            LossReport report;
            try {
                const auto [l_c, l_depth] =
                    color_depth_loss(out, kf.image, kf.dense_depth, kf.refined_mask);
                const double l_s = weights.lambda_s > 0
                                       ? semantic_loss(out, kf.semantic_labels, kf.refined_mask)
                                       : 0.0;
                const double l_dino =
                    weights.lambda_dino > 0 ? dino_loss(out, kf.features, kf.refined_mask) : 0.0;
                report = total_loss(l_c, l_depth, l_s, l_dino, weights);

                const OutputGrads upstream =
                    loss_backward(out, kf.image, kf.dense_depth, kf.semantic_labels, kf.features,
                                  kf.refined_mask, weights);
                const RenderGrads grads = render_backward(ctx, out, upstream, true);
                apply_updates(*active, grads, active_offset, active_count, optimizers);
            } catch (const EmptyPixelSet&) {
                warnings_.push_back("mapping: every pixel masked, keyframe " +
                                   std::to_string(kf.frame_index));
                continue;
            }
            loss_log_.push_back(LossLogEntry{frame_index, it, report});

            if (config_.prune_every > 0 && (it + 1) % config_.prune_every == 0) {
                if (prune(*active, config_.opacity_min) > 0)
                    optimizers = make_optimizers(active->gaussians.size());
            }
        }
    }

    template <typename Optimizers>
    void apply_updates(Submap& active, const RenderGrads& grads, std::size_t offset,
                       std::size_t count, Optimizers& opt) {
        const int l = calib_.semantic.num_classes;
        const int nd = calib_.feature.dimension;
        Eigen::VectorXd gp(3 * count), gs(3 * count), gr(4 * count), go(count), gc(3 * count),
            gsem(l * count), gf(nd * count);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t j = offset + i;
            gp.segment<3>(3 * i) = grads.position[j];
            gs.segment<3>(3 * i) = grads.log_scale[j];
            gr.segment<4>(4 * i) = grads.rotation[j];
            go[i] = grads.opacity_logit[j];
            gc.segment<3>(3 * i) = grads.color[j];
            gsem.segment(l * i, l) = grads.semantic_logits[j];
            gf.segment(nd * i, nd) = grads.feature[j];
        }
        const Eigen::VectorXd up = opt.position.step(gp, config_.steps.position);
        const Eigen::VectorXd us = opt.log_scale.step(gs, config_.steps.log_scale);
        const Eigen::VectorXd ur = opt.rotation.step(gr, config_.steps.rotation);
        const Eigen::VectorXd uo = opt.opacity.step(go, config_.steps.opacity);
        const Eigen::VectorXd uc = opt.color.step(gc, config_.steps.color);
        const Eigen::VectorXd usem = opt.semantic.step(gsem, config_.steps.semantic);
        const Eigen::VectorXd uf = opt.feature.step(gf, config_.steps.feature);

        for (std::size_t i = 0; i < count; ++i) {
            Gaussian& g = active.gaussians[i];
            g.position -= up.segment<3>(3 * i);
            g.log_scale -= us.segment<3>(3 * i);
            g.log_scale = g.log_scale.cwiseMax(kMinLogScale).cwiseMin(kMaxLogScale);
            Eigen::Vector4d q(g.rotation.w(), g.rotation.x(), g.rotation.y(), g.rotation.z());
            q -= ur.segment<4>(4 * i);
            g.rotation = Eigen::Quaterniond(q[0], q[1], q[2], q[3]).normalized();
            g.opacity_logit -= uo[i];
            g.color -= uc.segment<3>(3 * i);
            g.color = g.color.cwiseMax(0.0).cwiseMin(1.0);
            g.semantic_logits -= usem.segment(l * i, l);
            g.feature -= uf.segment(nd * i, nd);
        }
    }

    io::Calibration calib_;
    PipelineConfig config_;
    VoxelHashMap voxel_map_;
    AdaptiveThreshold threshold_;
    GaussianWorld world_;
    Trajectory trajectory_;
    std::vector<Keyframe> keyframes_;
    std::vector<Mask> refined_masks_;
    std::vector<LossLogEntry> loss_log_;
    std::vector<std::string> warnings_;
    SE3Pose last_keyframe_pose_;
    Mask prev_refined_mask_;
    Mask empty_mask_;
};

}  // namespace lvslam
