// Copyright Contributors to the lvslam project
// SPDX-License-Identifier: Apache-2.0

// Shared test oracles: an independent per-pixel reference renderer and the
// finite-difference scene scaffolding. Used by the rasterizer suite and the
// acceptance checks.

#pragma once

#include <algorithm>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "lvslam/rasterizer.hpp"

namespace lvslam::testsupport {

// ---------------------------------------------------------------------------
// Reference renderer: per pixel, walk the full depth-sorted list of projected
// splats with independently written compositing arithmetic (no tiles, no
// bounding boxes). The tiled renderer must agree with this to 1e-6.
// ---------------------------------------------------------------------------
inline RenderOutput naive_render(const std::vector<Gaussian>& gaussians, const SE3Pose& pose,
                                 const CameraIntrinsics& k, int num_classes, int feature_dim) {
    RenderOutput out;
    out.color = ImageF(k.height, k.width, 3);
    out.depth = ImageF(k.height, k.width, 1);
    out.semantic_prob = ImageF(k.height, k.width, num_classes);
    out.feature = ImageF(k.height, k.width, feature_dim);
    out.alpha = ImageF(k.height, k.width, 1);

    std::vector<std::optional<ProjectedSplat>> splats(gaussians.size());
    std::vector<std::int32_t> order;
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        splats[i] = project_gaussian(gaussians[i], pose, k);
        if (splats[i]) order.push_back(static_cast<std::int32_t>(i));
    }
    std::sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) {
        const double da = splats[a]->depth, db = splats[b]->depth;
        return da < db || (da == db && a < b);
    });

    Eigen::VectorXd logits(num_classes), feat(feature_dim);
    for (int r = 0; r < k.height; ++r)
        for (int c = 0; c < k.width; ++c) {
            double transmittance = 1.0, alpha_sum = 0.0, depth_sum = 0.0;
            Vec3 color_sum = Vec3::Zero();
            logits.setZero();
            feat.setZero();
            for (const std::int32_t i : order) {
                const Gaussian& g = gaussians[i];
                const ProjectedSplat& s = *splats[i];
                const Vec2 d(c - s.mean2d.x(), r - s.mean2d.y());
                const double a =
                    std::min(kAlphaClamp,
                             sigmoid(g.opacity_logit) * std::exp(-0.5 * d.dot(s.cov2d_inv * d)));
                if (a < kAlphaSkip) continue;
                const double wk = a * transmittance;
                color_sum += wk * g.color;
                depth_sum += wk * s.depth;
                alpha_sum += wk;
                logits += wk * g.semantic_logits;
                feat += wk * g.feature;
                transmittance *= (1.0 - a);
                if (transmittance < kTransmittanceStop) break;
            }
            for (int ch = 0; ch < 3; ++ch) out.color.at(r, c, ch) = color_sum[ch];
            out.depth.at(r, c) = alpha_sum > 0.0 ? depth_sum / alpha_sum : 0.0;
            out.alpha.at(r, c) = alpha_sum;
            const double mx = logits.maxCoeff();
            double denom = 0.0;
            for (int l = 0; l < num_classes; ++l) denom += std::exp(logits[l] - mx);
            for (int l = 0; l < num_classes; ++l)
                out.semantic_prob.at(r, c, l) = std::exp(logits[l] - mx) / denom;
            for (int ch = 0; ch < feature_dim; ++ch) out.feature.at(r, c, ch) = feat[ch];
        }
    return out;
}

inline double max_image_diff(const ImageF& a, const ImageF& b) {
    if (a.size() != b.size()) throw std::logic_error("max_image_diff: size mismatch");
    double m = 0.0;
    for (int r = 0; r < a.height(); ++r)
        for (int c = 0; c < a.width(); ++c)
            for (int ch = 0; ch < a.channels(); ++ch)
                m = std::max(m, std::abs(a.at(r, c, ch) - b.at(r, c, ch)));
    return m;
}

inline double max_output_diff(const RenderOutput& a, const RenderOutput& b) {
    double m = max_image_diff(a.color, b.color);
    m = std::max(m, max_image_diff(a.depth, b.depth));
    m = std::max(m, max_image_diff(a.semantic_prob, b.semantic_prob));
    m = std::max(m, max_image_diff(a.feature, b.feature));
    m = std::max(m, max_image_diff(a.alpha, b.alpha));
    return m;
}

inline Gaussian random_gaussian(std::mt19937& rng, int num_classes, int feature_dim) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Gaussian g;
    g.position = Vec3(3 * u(rng), 3 * u(rng), 5.0 + 5 * u(rng));  // some behind, some culled
    g.log_scale = Vec3(std::log(0.02) + 1.6 * (u(rng) + 1), std::log(0.02) + 1.6 * (u(rng) + 1),
                       std::log(0.02) + 1.6 * (u(rng) + 1));
    Eigen::Quaterniond q(u(rng), u(rng), u(rng), u(rng));
    if (q.norm() < 1e-2) q = Eigen::Quaterniond::Identity();
    g.rotation = q;
    g.opacity_logit = 7.0 * u(rng) + 1.0;  // spans the hard-clamp regime
    g.color = Vec3(0.5 * (u(rng) + 1), 0.5 * (u(rng) + 1), 0.5 * (u(rng) + 1));
    g.semantic_logits = Eigen::VectorXd::NullaryExpr(num_classes, [&](int) { return 2 * u(rng); });
    g.feature = Eigen::VectorXd::NullaryExpr(feature_dim, [&](int) { return u(rng); });
    return g;
}

inline SE3Pose random_small_pose(std::mt19937& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const Vec3 axis_angle(0.2 * u(rng), 0.2 * u(rng), 0.2 * u(rng));
    const double angle = axis_angle.norm();
    Eigen::Quaterniond q = angle < 1e-12
                               ? Eigen::Quaterniond::Identity()
                               : Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis_angle / angle));
    return SE3Pose(q, Vec3(u(rng), u(rng), u(rng)));
}

// ---------------------------------------------------------------------------
// Finite-difference scaffolding. The render map is piecewise smooth: the
// 1/255 contribution skip, the 0.99 alpha clamp, the 1e-4 transmittance stop
// and depth-order ties are kinks. Scenes for the derivative check are
// resampled until every per-pixel contribution sits safely away from those
// boundaries, so a +/-1e-4 parameter step stays on one smooth piece.
// ---------------------------------------------------------------------------
struct FdScene {
    std::vector<Gaussian> gaussians;
    SE3Pose pose;
};

inline bool scene_is_smooth(const std::vector<Gaussian>& gaussians, const SE3Pose& pose,
                            const CameraIntrinsics& k) {
    std::vector<std::optional<ProjectedSplat>> splats(gaussians.size());
    std::vector<std::int32_t> order;
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        splats[i] = project_gaussian(gaussians[i], pose, k);
        if (!splats[i]) return false;  // everything must stay in view
        order.push_back(static_cast<std::int32_t>(i));
    }
    // well-separated depths so perturbations cannot reorder the compositing
    for (std::size_t i = 0; i < order.size(); ++i)
        for (std::size_t j = i + 1; j < order.size(); ++j)
            if (std::abs(splats[order[i]]->depth - splats[order[j]]->depth) < 0.05) return false;
    std::sort(order.begin(), order.end(),
              [&](std::int32_t a, std::int32_t b) { return splats[a]->depth < splats[b]->depth; });

    for (int r = 0; r < k.height; ++r)
        for (int c = 0; c < k.width; ++c) {
            double transmittance = 1.0;
            for (const std::int32_t i : order) {
                const ProjectedSplat& s = *splats[i];
                const Vec2 d(c - s.mean2d.x(), r - s.mean2d.y());
                const double raw = sigmoid(gaussians[i].opacity_logit) *
                                   std::exp(-0.5 * d.dot(s.cov2d_inv * d));
                // a 1e-4 parameter step moves raw by at most ~3e-5 here
                if (std::abs(raw - kAlphaSkip) < 1e-4) return false;
                if (raw > 0.9) return false;  // keep clear of the alpha clamp
                if (raw < kAlphaSkip) continue;
                transmittance *= (1.0 - raw);
                if (std::abs(transmittance - kTransmittanceStop) < 1e-5) return false;
                if (transmittance < kTransmittanceStop) break;
            }
        }
    return true;
}

inline FdScene make_fd_scene(unsigned seed, const CameraIntrinsics& k, int n, int num_classes,
                             int feature_dim) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int attempt = 0; attempt < 300; ++attempt) {
        FdScene scene;
        scene.pose = random_small_pose(rng);
        for (int i = 0; i < n; ++i) {
            Gaussian g;
            const double uu = 6.0 + (k.width - 13) * 0.5 * (u(rng) + 1);
            const double vv = 6.0 + (k.height - 13) * 0.5 * (u(rng) + 1);
            const double z = 2.0 + 0.45 * i + 0.1 * u(rng);
            g.position = scene.pose * unproject(k, uu, vv, z);
            g.log_scale = Vec3(std::log(0.05) + 1.2 * 0.5 * (u(rng) + 1),
                               std::log(0.05) + 1.2 * 0.5 * (u(rng) + 1),
                               std::log(0.05) + 1.2 * 0.5 * (u(rng) + 1));
            Eigen::Quaterniond q(u(rng), u(rng), u(rng), u(rng));
            if (q.norm() < 1e-2) q = Eigen::Quaterniond::Identity();
            g.rotation = q;
            g.opacity_logit = u(rng);
            g.color = Vec3(0.5 * (u(rng) + 1), 0.5 * (u(rng) + 1), 0.5 * (u(rng) + 1));
            g.semantic_logits =
                Eigen::VectorXd::NullaryExpr(num_classes, [&](int) { return 2 * u(rng); });
            g.feature = Eigen::VectorXd::NullaryExpr(feature_dim, [&](int) { return u(rng); });
            scene.gaussians.push_back(g);
        }
        if (scene_is_smooth(scene.gaussians, scene.pose, k)) return scene;
    }
    throw std::runtime_error("could not sample a derivative-check scene away from compositing kinks");
}

inline OutputGrads random_upstream(std::mt19937& rng, const CameraIntrinsics& k, int num_classes,
                                   int feature_dim) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    auto fill = [&](int ch) {
        ImageF img(k.height, k.width, ch);
        for (int r = 0; r < k.height; ++r)
            for (int c = 0; c < k.width; ++c)
                for (int x = 0; x < ch; ++x) img.at(r, c, x) = u(rng);
        return img;
    };
    OutputGrads up;
    up.color = fill(3);
    up.depth = fill(1);
    up.semantic_prob = fill(num_classes);
    up.feature = fill(feature_dim);
    up.alpha = fill(1);
    return up;
}

inline double inner_product(const ImageF& a, const ImageF& b) {
    double s = 0.0;
    for (int r = 0; r < a.height(); ++r)
        for (int c = 0; c < a.width(); ++c)
            for (int ch = 0; ch < a.channels(); ++ch) s += a.at(r, c, ch) * b.at(r, c, ch);
    return s;
}

/// Random linear functional over every output channel; its gradient with
/// respect to the outputs is exactly `up`.
inline double loss_of(const RenderOutput& out, const OutputGrads& up) {
    return inner_product(out.color, up.color) + inner_product(out.depth, up.depth) +
           inner_product(out.semantic_prob, up.semantic_prob) +
           inner_product(out.feature, up.feature) + inner_product(out.alpha, up.alpha);
}

/// Relative-error gradient comparison with an absolute floor for near-zero
/// derivatives. Returns true when the pair agrees.
inline bool grads_agree(double analytic, double fd) {
    const double denom = std::max(std::abs(analytic), std::abs(fd));
    if (denom < 1e-6) return std::abs(analytic - fd) < 1e-6;
    return std::abs(analytic - fd) / denom < 1e-3;
}

/// Direct (non-separable) convolution implementation of the structural
/// similarity index, written independently of the library version.
inline double ssim_oracle(const ImageF& a, const ImageF& b) {
    constexpr int kWin = 11;
    constexpr double kSigma = 1.5, c1 = 1e-4, c2 = 9e-4;
    double window[kWin][kWin];
    double wsum = 0.0;
    for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
            const double di = i - kWin / 2, dj = j - kWin / 2;
            window[i][j] = std::exp(-(di * di + dj * dj) / (2 * kSigma * kSigma));
            wsum += window[i][j];
        }
    for (auto& row : window)
        for (auto& v : row) v /= wsum;

    const int h = a.height(), w = a.width(), channels = a.channels();
    double total = 0.0;
    std::size_t count = 0;
    for (int ch = 0; ch < channels; ++ch)
        for (int r = 0; r + kWin <= h; ++r)
            for (int c = 0; c + kWin <= w; ++c) {
                double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
                for (int i = 0; i < kWin; ++i)
                    for (int j = 0; j < kWin; ++j) {
                        const double x = a.at(r + i, c + j, ch);
                        const double y = b.at(r + i, c + j, ch);
                        ma += window[i][j] * x;
                        mb += window[i][j] * y;
                        maa += window[i][j] * x * x;
                        mbb += window[i][j] * y * y;
                        mab += window[i][j] * x * y;
                    }
                const double va = maa - ma * ma, vb = mbb - mb * mb, cov = mab - ma * mb;
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                         ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
    return total / static_cast<double>(count);
}

}  // namespace lvslam::testsupport
