// Copyright Contributors to the lvslam project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include "lvslam/geometry.hpp"
#include "lvslam/image.hpp"

namespace lvslam {

/// Parameters of the implicit motion-mask extraction: the robust kernel's
/// scale search grid, the threshold multiplier and the opening radius.
struct MaskingParams {
    double sigma_min = 1e-3;
    double sigma_max = 10.0;
    int sigma_steps = 64;
    double kappa = 3.0;
    int morph_open_radius = 1;
};

struct MaskSet {
    Mask explicit_mask;
    Mask implicit_mask;
    Mask refined_mask;
};

/// Geman-McClure rho(u, sigma) = u^2 / (u^2 + sigma^2).
inline double robust_rho(double u, double sigma) {
    const double u2 = u * u;
    return u2 / (u2 + sigma * sigma);
}

/// M-estimate of the residual scale: the sigma on a log-spaced grid where
/// the mean of rho(U_ij, sigma) is closest to 1/2 (the kernel's consistency
/// point; rho depends only on u/sigma, which makes the estimate
/// scale-equivariant). Ties break toward smaller sigma. Note the raw mean of
/// rho is monotone decreasing in sigma, so minimizing it directly would
/// always return the grid maximum and carry no scale information.
inline double fit_sigma(const ImageF& residual, const MaskingParams& params) {
    const double log_min = std::log(params.sigma_min);
    const double log_max = std::log(params.sigma_max);
    double best_sigma = params.sigma_min;
    double best_obj = std::numeric_limits<double>::infinity();
    for (int s = 0; s < params.sigma_steps; ++s) {
        const double frac = params.sigma_steps > 1
                                ? static_cast<double>(s) / (params.sigma_steps - 1)
                                : 0.0;
        const double sigma = std::exp(log_min + frac * (log_max - log_min));
        double sum = 0.0;
        for (const double u : residual.data()) sum += robust_rho(u, sigma);
        const double obj = std::abs(sum / static_cast<double>(residual.size()) - 0.5);
        if (obj < best_obj) {
            best_obj = obj;
            best_sigma = sigma;
        }
    }
    return std::max(best_sigma, 1e-6);
}

namespace mask_detail {

/// Morphological erosion/dilation with a square structuring element.
inline Mask morph(const Mask& in, int radius, bool dilate) {
    if (radius <= 0) return in;
    const int h = in.height(), w = in.width();
    Mask out(h, w, 1);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            std::uint8_t v = dilate ? 0 : 255;
            for (int dr = -radius; dr <= radius; ++dr)
                for (int dc = -radius; dc <= radius; ++dc) {
                    const int rr = r + dr, cc = c + dc;
                    // out-of-bounds counts as static (0)
                    const std::uint8_t p =
                        (rr < 0 || rr >= h || cc < 0 || cc >= w) ? 0 : in.at(rr, cc);
                    if (dilate)
                        v = std::max<std::uint8_t>(v, p ? 255 : 0);
                    else
                        v = std::min<std::uint8_t>(v, p ? 255 : 0);
                }
            out.at(r, c) = v;
        }
    return out;
}

}  // namespace mask_detail

inline Mask morphological_opening(const Mask& in, int radius) {
    return mask_detail::morph(mask_detail::morph(in, radius, false), radius, true);
}

/// Thresholds the residual map at kappa * sigma and removes speckle with a
/// morphological opening. Output: 255 = dynamic, 0 = static.
inline Mask implicit_mask(const ImageF& residual, double sigma, const MaskingParams& params) {
    if (sigma <= 0) throw Error("implicit_mask: sigma must be positive");
    const int h = residual.height(), w = residual.width();
    Mask raw(h, w, 1);
    const double threshold = params.kappa * sigma;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) raw.at(r, c) = residual.at(r, c) > threshold ? 255 : 0;
    return morphological_opening(raw, params.morph_open_radius);
}

/// M_refine: elementwise intersection of the explicit and implicit masks.
inline Mask fuse_masks(const Mask& explicit_mask, const Mask& implicit) {
    require_same_shape("fuse_masks", explicit_mask.height(), explicit_mask.width(),
                       implicit.height(), implicit.width());
    Mask out(explicit_mask.height(), explicit_mask.width(), 1);
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data()[i] = (explicit_mask.data()[i] && implicit.data()[i]) ? 255 : 0;
    return out;
}

/// Per-point static flags: a point is dynamic iff it projects inside the
/// image onto a dynamic pixel. Out-of-view points count as static.
inline std::vector<bool> lift_mask_to_points(const Mask& mask, const PointCloud& scan_cam,
                                             const CameraIntrinsics& k) {
    std::vector<bool> is_static(scan_cam.size(), true);
    for (std::size_t i = 0; i < scan_cam.points.size(); ++i) {
        const Vec3& p = scan_cam.points[i];
        if (p.z() <= 1e-8) continue;
        const int c = static_cast<int>(std::lround(k.fx * p.x() / p.z() + k.cx));
        const int r = static_cast<int>(std::lround(k.fy * p.y() / p.z() + k.cy));
        if (c < 0 || c >= k.width || r < 0 || r >= k.height) continue;
        if (mask.at(r, c) != 0) is_static[i] = false;
    }
    return is_static;
}

}  // namespace lvslam
