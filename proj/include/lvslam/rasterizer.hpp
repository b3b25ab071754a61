// Copyright Contributors to the lvslam project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "lvslam/gaussian_map.hpp"
#include "lvslam/geometry.hpp"
#include "lvslam/image.hpp"

namespace lvslam {

// Compositing constants. Contributions below kAlphaSkip are dropped on both
// the tiled and the reference path, so bounding boxes sized from kBinningChi2
// (= 2*ln(256)) cannot change the result. kCullChi2 is the 99%-mass ellipse.
constexpr double kAlphaSkip = 1.0 / 255.0;
constexpr double kAlphaClamp = 0.99;
constexpr double kTransmittanceStop = 1e-4;
constexpr double kMinSplatDepth = 0.2;
constexpr double kCovLowPass = 0.3;
constexpr double kCullChi2 = 9.2103403719761836;
constexpr double kBinningChi2 = 11.09035488895912;
constexpr int kTileSize = 16;

struct ProjectedSplat {
    Vec2 mean2d;
    Mat2 cov2d;
    Mat2 cov2d_inv;
    double depth = 0.0;
    Vec3 mean_cam = Vec3::Zero();
    double bound_radius = 0.0;
};

namespace rasterizer_detail {

inline Mat3 quat_to_rot(const Eigen::Quaterniond& q_raw) {
    return q_raw.normalized().toRotationMatrix();
}

/// d(R)/d(q_k) for a unit quaternion (w,x,y,z order).
inline void unit_quat_rotation_jacobians(const Eigen::Quaterniond& q, Mat3 d[4]) {
    const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
    d[0] << 0, -z, y, z, 0, -x, -y, x, 0;                      // d/dw
    d[1] << 0, y, z, y, -2 * x, -w, z, w, -2 * x;              // d/dx
    d[2] << -2 * y, x, w, x, 0, z, -w, z, -2 * y;              // d/dy
    d[3] << -2 * z, -w, x, w, -2 * z, y, x, y, 0;              // d/dz
    for (int i = 0; i < 4; ++i) d[i] *= 2.0;
}

inline Eigen::Matrix<double, 2, 3> pinhole_jacobian(const CameraIntrinsics& k, const Vec3& m) {
    const double z = m.z();
    Eigen::Matrix<double, 2, 3> j;
    j << k.fx / z, 0, -k.fx * m.x() / (z * z), 0, k.fy / z, -k.fy * m.y() / (z * z);
    return j;
}

}  // namespace rasterizer_detail

/// EWA projection of one Gaussian. Returns nullopt when culled (behind the
/// near plane or the 99%-mass ellipse misses the image).
inline std::optional<ProjectedSplat> project_gaussian(const Gaussian& g, const SE3Pose& pose,
                                                      const CameraIntrinsics& k) {
    const SE3Pose cam_from_world = pose.inverse();
    const Vec3 m = cam_from_world * g.position;
    if (m.z() < kMinSplatDepth) return std::nullopt;

    const Mat3 r3 = rasterizer_detail::quat_to_rot(g.rotation);
    const Vec3 s2 = (2.0 * g.log_scale).array().exp();
    const Mat3 sigma_world = r3 * s2.asDiagonal() * r3.transpose();
    const Mat3 w = cam_from_world.rotation_matrix();
    const Mat3 v = w * sigma_world * w.transpose();
    const Eigen::Matrix<double, 2, 3> j = rasterizer_detail::pinhole_jacobian(k, m);
    Mat2 cov = j * v * j.transpose() + kCovLowPass * Mat2::Identity();

    const double u = k.fx * m.x() / m.z() + k.cx;
    const double vpix = k.fy * m.y() / m.z() + k.cy;

    const double tr_half = 0.5 * cov.trace();
    const double det = cov.determinant();
    const double lambda_max = tr_half + std::sqrt(std::max(0.0, tr_half * tr_half - det));
    const double r99 = std::sqrt(kCullChi2 * lambda_max);
    if (u + r99 < 0 || u - r99 > k.width - 1 || vpix + r99 < 0 || vpix - r99 > k.height - 1)
        return std::nullopt;

    ProjectedSplat out;
    out.mean2d = Vec2(u, vpix);
    out.cov2d = cov;
    out.cov2d_inv = cov.inverse();
    out.depth = m.z();
    out.mean_cam = m;
    out.bound_radius = std::sqrt(kBinningChi2 * lambda_max);
    return out;
}

struct RenderOutput {
    ImageF color;          // H x W x 3
    ImageF depth;          // H x W
    ImageF semantic_prob;  // H x W x L
    ImageF feature;        // H x W x N_d
    ImageF alpha;          // H x W
};

/// Retained forward state: projected splats plus per-pixel contributor lists
/// (gaussian index and alpha in compositing order).
struct RenderContext {
    CameraIntrinsics intrinsics;
    SE3Pose pose;
    int num_classes = 0;
    int feature_dim = 0;
    std::vector<const Gaussian*> gaussians;
    std::vector<std::optional<ProjectedSplat>> splats;

    struct Contrib {
        std::int32_t index;
        double alpha;
    };
    std::vector<std::vector<Contrib>> per_pixel;  // row-major
};

struct RenderGrads {
    std::vector<Vec3> position;
    std::vector<Vec3> log_scale;
    std::vector<Eigen::Vector4d> rotation;  // (w,x,y,z)
    std::vector<double> opacity_logit;
    std::vector<Vec3> color;
    std::vector<Eigen::VectorXd> semantic_logits;
    std::vector<Eigen::VectorXd> feature;
    Vec6 pose = Vec6::Zero();  // se(3) tangent of the right retraction
};

/// Upstream gradients for the backward pass; empty images are treated as zero.
struct OutputGrads {
    ImageF color;
    ImageF depth;
    ImageF semantic_prob;
    ImageF feature;
    ImageF alpha;
};

namespace rasterizer_detail {

inline double splat_alpha(const Gaussian& g, const ProjectedSplat& s, double px, double py) {
    const Vec2 d(px - s.mean2d.x(), py - s.mean2d.y());
    const double q = d.dot(s.cov2d_inv * d);
    const double gauss = std::exp(-0.5 * q);
    return std::min(kAlphaClamp, sigmoid(g.opacity_logit) * gauss);
}

/// Front-to-back compositing of one pixel over a depth-sorted candidate list.
/// Shared between the tiled renderer and the reference renderer so both paths
/// perform identical arithmetic.
template <typename Candidates>
inline void composite_pixel(const std::vector<const Gaussian*>& gaussians,
                            const std::vector<std::optional<ProjectedSplat>>& splats,
                            const Candidates& candidates, int r, int c, int num_classes,
                            int feature_dim, RenderOutput& out,
                            std::vector<RenderContext::Contrib>* contribs,
                            Eigen::VectorXd& logit_accum, Eigen::VectorXd& feature_accum) {
    double transmittance = 1.0;
    double alpha_sum = 0.0;
    double depth_sum = 0.0;
    Vec3 color_sum = Vec3::Zero();
    logit_accum.setZero();
    feature_accum.setZero();

    for (const std::int32_t i : candidates) {
        const auto& s = *splats[i];
        const double a = splat_alpha(*gaussians[i], s, c, r);
        if (a < kAlphaSkip) continue;
        const double wgt = a * transmittance;
        const Gaussian& g = *gaussians[i];
        color_sum += wgt * g.color;
        depth_sum += wgt * s.depth;
        alpha_sum += wgt;
        logit_accum += wgt * g.semantic_logits;
        feature_accum += wgt * g.feature;
        if (contribs) contribs->push_back({i, a});
        transmittance *= (1.0 - a);
        if (transmittance < kTransmittanceStop) break;
    }

    for (int ch = 0; ch < 3; ++ch) out.color.at(r, c, ch) = color_sum[ch];
    out.depth.at(r, c) = alpha_sum > 0.0 ? depth_sum / alpha_sum : 0.0;
    out.alpha.at(r, c) = alpha_sum;
    // softmax over composited logits
    const double mx = logit_accum.maxCoeff();
    double denom = 0.0;
    for (int l = 0; l < num_classes; ++l) denom += std::exp(logit_accum[l] - mx);
    for (int l = 0; l < num_classes; ++l)
        out.semantic_prob.at(r, c, l) = std::exp(logit_accum[l] - mx) / denom;
    for (int ch = 0; ch < feature_dim; ++ch) out.feature.at(r, c, ch) = feature_accum[ch];
}

inline RenderOutput make_output(int height, int width, int num_classes, int feature_dim) {
    RenderOutput out;
    out.color = ImageF(height, width, 3);
    out.depth = ImageF(height, width, 1);
    out.semantic_prob = ImageF(height, width, num_classes);
    out.feature = ImageF(height, width, feature_dim);
    out.alpha = ImageF(height, width, 1);
    return out;
}

}  // namespace rasterizer_detail

/// Tile-based forward render. All Gaussians must share the configured
/// semantic and feature dimensions. Fills `ctx` for a later backward pass.
inline RenderOutput render(const std::vector<const Gaussian*>& gaussians, const SE3Pose& pose,
                           const CameraIntrinsics& k, int num_classes, int feature_dim,
                           RenderContext* ctx = nullptr) {
    const int h = k.height, w = k.width;
    if (h < 1 || w < 1) throw Error("render: empty image dimensions");
    RenderOutput out = rasterizer_detail::make_output(h, w, num_classes, feature_dim);

    std::vector<std::optional<ProjectedSplat>> splats(gaussians.size());
    for (std::size_t i = 0; i < gaussians.size(); ++i)
        splats[i] = project_gaussian(*gaussians[i], pose, k);

    const int tiles_x = (w + kTileSize - 1) / kTileSize;
    const int tiles_y = (h + kTileSize - 1) / kTileSize;
    std::vector<std::vector<std::int32_t>> tile_bins(static_cast<std::size_t>(tiles_x) * tiles_y);
    for (std::size_t i = 0; i < splats.size(); ++i) {
        if (!splats[i]) continue;
        const auto& s = *splats[i];
        const int x0 = std::max(0, static_cast<int>(std::floor(s.mean2d.x() - s.bound_radius)) / kTileSize);
        const int y0 = std::max(0, static_cast<int>(std::floor(s.mean2d.y() - s.bound_radius)) / kTileSize);
        const int x1 = std::min(tiles_x - 1, static_cast<int>(std::floor(s.mean2d.x() + s.bound_radius)) / kTileSize);
        const int y1 = std::min(tiles_y - 1, static_cast<int>(std::floor(s.mean2d.y() + s.bound_radius)) / kTileSize);
        if (s.mean2d.x() + s.bound_radius < 0 || s.mean2d.y() + s.bound_radius < 0) continue;
        for (int ty = y0; ty <= y1; ++ty)
            for (int tx = x0; tx <= x1; ++tx)
                tile_bins[static_cast<std::size_t>(ty) * tiles_x + tx].push_back(
                    static_cast<std::int32_t>(i));
    }

    if (ctx) {
        ctx->intrinsics = k;
        ctx->pose = pose;
        ctx->num_classes = num_classes;
        ctx->feature_dim = feature_dim;
        ctx->gaussians = gaussians;
        ctx->per_pixel.assign(static_cast<std::size_t>(h) * w, {});
    }

    Eigen::VectorXd logit_accum(num_classes), feature_accum(feature_dim);
    for (int ty = 0; ty < tiles_y; ++ty)
        for (int tx = 0; tx < tiles_x; ++tx) {
            auto& bin = tile_bins[static_cast<std::size_t>(ty) * tiles_x + tx];
            // depth order, ties broken by original index
            std::sort(bin.begin(), bin.end(), [&](std::int32_t a, std::int32_t b) {
                const double da = splats[a]->depth, db = splats[b]->depth;
                return da < db || (da == db && a < b);
            });
            const int r1 = std::min(h, (ty + 1) * kTileSize);
            const int c1 = std::min(w, (tx + 1) * kTileSize);
            for (int r = ty * kTileSize; r < r1; ++r)
                for (int c = tx * kTileSize; c < c1; ++c)
                    rasterizer_detail::composite_pixel(
                        gaussians, splats, bin, r, c, num_classes, feature_dim, out,
                        ctx ? &ctx->per_pixel[static_cast<std::size_t>(r) * w + c] : nullptr,
                        logit_accum, feature_accum);
        }

    if (ctx) ctx->splats = std::move(splats);
    return out;
}

inline RenderOutput render(const std::vector<Gaussian>& gaussians, const SE3Pose& pose,
                           const CameraIntrinsics& k, int num_classes, int feature_dim,
                           RenderContext* ctx = nullptr) {
    std::vector<const Gaussian*> ptrs;
    ptrs.reserve(gaussians.size());
    for (const auto& g : gaussians) ptrs.push_back(&g);
    return render(ptrs, pose, k, num_classes, feature_dim, ctx);
}

/// Analytic reverse-mode gradients through compositing, splat evaluation,
/// projection and the camera pose action. With detach_semantic_weights the
/// semantic channel contributes gradients only to the semantic logits; the
/// compositing weights (and everything upstream of them) receive none.
inline RenderGrads render_backward(const RenderContext& ctx, const RenderOutput& out,
                                   const OutputGrads& upstream,
                                   bool detach_semantic_weights = false) {
    const CameraIntrinsics& k = ctx.intrinsics;
    const int h = k.height, w = k.width;
    const int num_classes = ctx.num_classes, feature_dim = ctx.feature_dim;
    const std::size_t n = ctx.gaussians.size();

    auto check = [&](const ImageF& img, int ch, const char* what) {
        if (img.empty()) return;
        if (img.height() != h || img.width() != w || img.channels() != ch)
            throw StateMismatch(std::string("render_backward: upstream ") + what +
                                " does not match the forward state");
    };
    check(upstream.color, 3, "color gradient");
    check(upstream.depth, 1, "depth gradient");
    check(upstream.semantic_prob, num_classes, "semantic gradient");
    check(upstream.feature, feature_dim, "feature gradient");
    check(upstream.alpha, 1, "alpha gradient");
    if (ctx.per_pixel.size() != static_cast<std::size_t>(h) * w)
        throw StateMismatch("render_backward: context has no retained forward state");

    RenderGrads grads;
    grads.position.assign(n, Vec3::Zero());
    grads.log_scale.assign(n, Vec3::Zero());
    grads.rotation.assign(n, Eigen::Vector4d::Zero());
    grads.opacity_logit.assign(n, 0.0);
    grads.color.assign(n, Vec3::Zero());
    grads.semantic_logits.assign(n, Eigen::VectorXd::Zero(num_classes));
    grads.feature.assign(n, Eigen::VectorXd::Zero(feature_dim));

    // Per-gaussian accumulators in projected space.
    std::vector<Vec2> g_mean2d(n, Vec2::Zero());
    std::vector<Mat2> g_cov(n, Mat2::Zero());
    std::vector<double> g_depth_cam(n, 0.0);

    Eigen::VectorXd d_logits(num_classes), gp(num_classes), gf(feature_dim);
    std::vector<double> wgt, dw, tvals;

    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const auto& contribs = ctx.per_pixel[static_cast<std::size_t>(r) * w + c];
            if (contribs.empty()) continue;

            Vec3 gc = Vec3::Zero();
            double gd = 0.0, ga = 0.0;
            bool any_upstream = false;
            if (!upstream.color.empty()) {
                for (int ch = 0; ch < 3; ++ch) gc[ch] = upstream.color.at(r, c, ch);
                any_upstream = any_upstream || gc.squaredNorm() > 0;
            }
            if (!upstream.depth.empty()) {
                gd = upstream.depth.at(r, c);
                any_upstream = any_upstream || gd != 0;
            }
            if (!upstream.alpha.empty()) {
                ga = upstream.alpha.at(r, c);
                any_upstream = any_upstream || ga != 0;
            }
            gp.setZero();
            if (!upstream.semantic_prob.empty()) {
                for (int l = 0; l < num_classes; ++l) gp[l] = upstream.semantic_prob.at(r, c, l);
                any_upstream = any_upstream || gp.squaredNorm() > 0;
            }
            gf.setZero();
            if (!upstream.feature.empty()) {
                for (int ch = 0; ch < feature_dim; ++ch) gf[ch] = upstream.feature.at(r, c, ch);
                any_upstream = any_upstream || gf.squaredNorm() > 0;
            }
            if (!any_upstream) continue;

            // softmax backward: dL/dS = p .* g - (g . p) p
            d_logits.setZero();
            if (gp.squaredNorm() > 0) {
                double dot = 0.0;
                for (int l = 0; l < num_classes; ++l) {
                    d_logits[l] = out.semantic_prob.at(r, c, l) * gp[l];
                    dot += d_logits[l];
                }
                for (int l = 0; l < num_classes; ++l)
                    d_logits[l] -= dot * out.semantic_prob.at(r, c, l);
            }

            const double alpha_sum = out.alpha.at(r, c);
            const double depth_px = out.depth.at(r, c);
            const std::size_t m = contribs.size();
            wgt.resize(m);
            dw.resize(m);
            tvals.resize(m);

            double transmittance = 1.0;
            for (std::size_t kk = 0; kk < m; ++kk) {
                const auto& cb = contribs[kk];
                const Gaussian& g = *ctx.gaussians[cb.index];
                tvals[kk] = transmittance;
                const double wk = cb.alpha * transmittance;
                wgt[kk] = wk;
                transmittance *= (1.0 - cb.alpha);

                // direct attribute gradients
                grads.color[cb.index] += wk * gc;
                if (feature_dim > 0) grads.feature[cb.index] += wk * gf;
                grads.semantic_logits[cb.index] += wk * d_logits;

                double dwk = gc.dot(g.color) + ga;
                if (feature_dim > 0) dwk += gf.dot(g.feature);
                if (gd != 0) {
                    const double z = ctx.splats[cb.index]->depth;
                    dwk += (z - depth_px) / alpha_sum * gd;
                    g_depth_cam[cb.index] += wk / alpha_sum * gd;
                }
                if (!detach_semantic_weights) dwk += d_logits.dot(g.semantic_logits);
                dw[kk] = dwk;
            }

            // dL/dalpha_k = T_k dL/dw_k - (1/(1-alpha_k)) sum_{j>k} w_j dL/dw_j
            double suffix = 0.0;
            for (std::size_t kk = m; kk-- > 0;) {
                const auto& cb = contribs[kk];
                const double d_alpha = tvals[kk] * dw[kk] - suffix / (1.0 - cb.alpha);
                suffix += wgt[kk] * dw[kk];
                if (d_alpha == 0.0) continue;

                const Gaussian& g = *ctx.gaussians[cb.index];
                const auto& s = *ctx.splats[cb.index];
                const double o = sigmoid(g.opacity_logit);
                const Vec2 d(c - s.mean2d.x(), r - s.mean2d.y());
                const Vec2 pd = s.cov2d_inv * d;
                const double gauss = std::exp(-0.5 * d.dot(pd));
                if (o * gauss > kAlphaClamp) continue;  // clamped, zero slope

                const double d_gauss = o * d_alpha;
                grads.opacity_logit[cb.index] += o * (1.0 - o) * gauss * d_alpha;
                g_mean2d[cb.index] += d_gauss * gauss * pd;
                g_cov[cb.index] += (0.5 * d_gauss * gauss) * (pd * pd.transpose());
            }
        }

    // Chain projected-space gradients back to 3D parameters and the pose.
    const SE3Pose cam_from_world = ctx.pose.inverse();
    const Mat3 w_rot = cam_from_world.rotation_matrix();
    for (std::size_t i = 0; i < n; ++i) {
        if (!ctx.splats[i]) continue;
        const bool has_cov = g_cov[i].squaredNorm() > 0;
        const bool has_mean = g_mean2d[i].squaredNorm() > 0 || g_depth_cam[i] != 0;
        if (!has_cov && !has_mean) continue;

        const Gaussian& g = *ctx.gaussians[i];
        const Vec3 m = ctx.splats[i]->mean_cam;
        const double z = m.z();
        const Eigen::Matrix<double, 2, 3> j = rasterizer_detail::pinhole_jacobian(k, m);

        const Mat3 r3 = rasterizer_detail::quat_to_rot(g.rotation);
        const Vec3 s2 = (2.0 * g.log_scale).array().exp();
        const Mat3 sigma_world = r3 * s2.asDiagonal() * r3.transpose();
        const Mat3 v = w_rot * sigma_world * w_rot.transpose();

        Vec3 d_m = j.transpose() * g_mean2d[i];
        d_m.z() += g_depth_cam[i];

        if (has_cov) {
            // dependence of the pinhole Jacobian on the camera-frame mean
            const double z2 = z * z, z3 = z2 * z;
            Eigen::Matrix<double, 2, 3> dj[3];
            dj[0].setZero();
            dj[0](0, 2) = -k.fx / z2;
            dj[1].setZero();
            dj[1](1, 2) = -k.fy / z2;
            dj[2] << -k.fx / z2, 0, 2 * k.fx * m.x() / z3, 0, -k.fy / z2, 2 * k.fy * m.y() / z3;
            const Eigen::Matrix<double, 3, 2> vjt = v * j.transpose();
            for (int a = 0; a < 3; ++a) {
                const Mat2 x = dj[a] * vjt;
                d_m[a] += 2.0 * g_cov[i].cwiseProduct(x).sum();
            }

            // world-frame covariance gradient
            const Eigen::Matrix<double, 2, 3> jw = j * w_rot;
            const Mat3 d_sigma = jw.transpose() * g_cov[i] * jw;

            // log-scale
            const Mat3 rt_ds_r = r3.transpose() * d_sigma * r3;
            for (int a = 0; a < 3; ++a)
                grads.log_scale[i][a] += rt_ds_r(a, a) * 2.0 * s2[a];

            // rotation quaternion (through normalization)
            Mat3 dr[4];
            rasterizer_detail::unit_quat_rotation_jacobians(g.rotation.normalized(), dr);
            const Mat3 ds_rt = s2.asDiagonal() * r3.transpose();
            Eigen::Vector4d qg;
            for (int a = 0; a < 4; ++a)
                qg[a] = 2.0 * d_sigma.cwiseProduct(dr[a] * ds_rt).sum();
            Eigen::Vector4d qraw(g.rotation.w(), g.rotation.x(), g.rotation.y(), g.rotation.z());
            const double qn = qraw.norm();
            const Eigen::Vector4d qu = qraw / qn;
            grads.rotation[i] += (qg - qu * qu.dot(qg)) / qn;

            // pose rotation part through V = W Sigma W^T
            const Mat3 e[3] = {skew(Vec3::UnitX()), skew(Vec3::UnitY()), skew(Vec3::UnitZ())};
            for (int a = 0; a < 3; ++a) {
                const Mat3 dv = -e[a] * v + v * e[a];
                grads.pose[3 + a] += g_cov[i].cwiseProduct((j * dv * j.transpose()).eval()).sum();
            }
        }

        grads.position[i] += w_rot.transpose() * d_m;
        grads.pose.head<3>() -= d_m;
        grads.pose.tail<3>() -= m.cross(d_m);
    }
    return grads;
}

}  // namespace lvslam
