// Copyright Contributors to the lvslam project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Geometry>
#include <cmath>
#include <limits>
#include <vector>

#include "lvslam/geometry.hpp"
#include "lvslam/image.hpp"

namespace lvslam {

struct TimedPose {
    double timestamp = 0.0;
    SE3Pose pose;
};

using Trajectory = std::vector<TimedPose>;

struct AteResult {
    double rmse = 0.0;
    std::vector<double> per_frame_errors;  // meters
    SE3Pose alignment;
    double scale = 1.0;
};

enum class AteAlignment { None, Rigid, Similarity };

/// ATE-RMSE between index-associated trajectories after closed-form
/// (Umeyama) alignment of the estimated translations to the reference.
inline AteResult ate_rmse(const Trajectory& estimated, const Trajectory& reference,
                          AteAlignment alignment = AteAlignment::Rigid) {
    if (estimated.size() != reference.size())
        throw LengthMismatch("ate_rmse: trajectory lengths differ");
    if (estimated.size() < 2) throw LengthMismatch("ate_rmse: need at least 2 poses");
    const int n = static_cast<int>(estimated.size());

    AteResult result;
    Mat3 rot = Mat3::Identity();
    Vec3 trans = Vec3::Zero();
    double scale = 1.0;

    if (alignment != AteAlignment::None) {
        Eigen::Matrix3Xd src(3, n), dst(3, n);
        for (int i = 0; i < n; ++i) {
            src.col(i) = estimated[i].pose.translation();
            dst.col(i) = reference[i].pose.translation();
        }
        const Vec3 src_mean = src.rowwise().mean();
        double spread = 0.0;
        for (int i = 0; i < n; ++i) spread = std::max(spread, (src.col(i) - src_mean).norm());
        if (spread < 1e-12)
            throw DegenerateTrajectory("ate_rmse: estimated trajectory points all coincide");

        const Eigen::Matrix4d t =
            Eigen::umeyama(src, dst, alignment == AteAlignment::Similarity);
        const Mat3 sr = t.topLeftCorner<3, 3>();
        scale = std::cbrt(sr.determinant());
        rot = sr / scale;
        trans = t.topRightCorner<3, 1>();
    }

    result.alignment = SE3Pose(rot, trans);
    result.scale = scale;
    result.per_frame_errors.reserve(n);
    double sq_sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const Vec3 aligned = scale * (rot * estimated[i].pose.translation()) + trans;
        const double err = (aligned - reference[i].pose.translation()).norm();
        result.per_frame_errors.push_back(err);
        sq_sum += err * err;
    }
    result.rmse = std::sqrt(sq_sum / n);
    return result;
}

/// Peak signal-to-noise ratio for [0,1]-valued images; +infinity when
/// identical.
inline double psnr(const ImageF& a, const ImageF& b) {
    if (!a.same_shape(b)) throw ShapeMismatch("psnr: image shapes differ");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

namespace eval_detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(size);
    const int half = size / 2;
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        const double d = i - half;
        w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += w[i];
    }
    for (auto& v : w) v /= sum;
    return w;
}

/// Separable weighted filtering over one channel, valid region only.
inline void filter_valid(const ImageF& img, int ch, const std::vector<double>& win,
                         std::vector<double>& tmp, std::vector<double>& out, int h, int w) {
    const int size = static_cast<int>(win.size());
    const int half = size / 2;
    const int vw = w - 2 * half;
    // horizontal pass: rows full height, valid columns
    tmp.assign(static_cast<std::size_t>(h) * vw, 0.0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < vw; ++c) {
            double s = 0.0;
            for (int i = 0; i < size; ++i) s += win[i] * img.at(r, c + i, ch);
            tmp[static_cast<std::size_t>(r) * vw + c] = s;
        }
    const int vh = h - 2 * half;
    out.assign(static_cast<std::size_t>(vh) * vw, 0.0);
    for (int r = 0; r < vh; ++r)
        for (int c = 0; c < vw; ++c) {
            double s = 0.0;
            for (int i = 0; i < size; ++i) s += win[i] * tmp[static_cast<std::size_t>(r + i) * vw + c];
            out[static_cast<std::size_t>(r) * vw + c] = s;
        }
}

}  // namespace eval_detail

/// Structural similarity with the standard parameterization: 11x11 Gaussian
/// window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2, averaged over all valid
/// windows and channels.
inline double ssim(const ImageF& a, const ImageF& b) {
    if (!a.same_shape(b)) throw ShapeMismatch("ssim: image shapes differ");
    const int h = a.height(), w = a.width(), channels = a.channels();
    constexpr int kWin = 11;
    if (h < kWin || w < kWin) throw TooSmall("ssim: image smaller than the 11x11 window");
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const auto win = eval_detail::gaussian_window(kWin, 1.5);

    ImageF a2(h, w, channels), b2(h, w, channels), ab(h, w, channels);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            for (int ch = 0; ch < channels; ++ch) {
                const double x = a.at(r, c, ch), y = b.at(r, c, ch);
                a2.at(r, c, ch) = x * x;
                b2.at(r, c, ch) = y * y;
                ab.at(r, c, ch) = x * y;
            }

    std::vector<double> tmp, mu_a, mu_b, m_a2, m_b2, m_ab;
    double sum = 0.0;
    std::size_t count = 0;
    for (int ch = 0; ch < channels; ++ch) {
        eval_detail::filter_valid(a, ch, win, tmp, mu_a, h, w);
        eval_detail::filter_valid(b, ch, win, tmp, mu_b, h, w);
        eval_detail::filter_valid(a2, ch, win, tmp, m_a2, h, w);
        eval_detail::filter_valid(b2, ch, win, tmp, m_b2, h, w);
        eval_detail::filter_valid(ab, ch, win, tmp, m_ab, h, w);
        for (std::size_t i = 0; i < mu_a.size(); ++i) {
            const double ma = mu_a[i], mb = mu_b[i];
            const double va = m_a2[i] - ma * ma;
            const double vb = m_b2[i] - mb * mb;
            const double cov = m_ab[i] - ma * mb;
            sum += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                   ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    }
    return sum / static_cast<double>(count);
}

}  // namespace lvslam
