// Copyright Contributors to the lvslam project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <utility>

#include "lvslam/image.hpp"
#include "lvslam/rasterizer.hpp"

namespace lvslam {

struct LossWeights {
    double lambda_s = 0.1;
    double lambda_dino = 0.1;
    double lambda_c = 0.8;
    double lambda_depth = 0.2;
};

struct UncertaintyWeights {
    double lambda_dino = 1.0;
    double lambda_depth = 0.5;
};

struct LossReport {
    double l_c = 0, l_depth = 0, l_s = 0, l_dino = 0, total = 0;
    std::size_t valid_pixel_count = 0;
};

namespace loss_detail {

inline bool included(const Mask& mask, int r, int c) {
    return mask.empty() || mask.at(r, c) == 0;
}

inline double pixel_cosine(const ImageF& gt, const ImageF& rendered, int r, int c, int nd,
                           bool& degenerate) {
    double dot = 0, na = 0, nb = 0;
    for (int ch = 0; ch < nd; ++ch) {
        const double a = gt.at(r, c, ch), b = rendered.at(r, c, ch);
        dot += a * b;
        na += a * a;
        nb += b * b;
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na < 1e-8 || nb < 1e-8) {
        degenerate = true;
        return 0.0;  // treated as maximally dissimilar by the caller
    }
    degenerate = false;
    return dot / (na * nb);
}

}  // namespace loss_detail

/// Mean L1 color error (per pixel-channel) and mean absolute depth error
/// over unmasked pixels. Depth pixels with invalid (<= 0) ground truth are
/// excluded from the depth term.
inline std::pair<double, double> color_depth_loss(const RenderOutput& render,
                                                  const ImageF& gt_color, const ImageF& gt_depth,
                                                  const Mask& mask) {
    const int h = render.color.height(), w = render.color.width();
    require_same_shape("color_depth_loss", h, w, gt_color.height(), gt_color.width());
    require_same_shape("color_depth_loss", h, w, gt_depth.height(), gt_depth.width());
    double c_sum = 0, d_sum = 0;
    std::size_t c_count = 0, d_count = 0;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            if (!loss_detail::included(mask, r, c)) continue;
            for (int ch = 0; ch < 3; ++ch)
                c_sum += std::abs(render.color.at(r, c, ch) - gt_color.at(r, c, ch));
            ++c_count;
            if (gt_depth.at(r, c) > 0) {
                d_sum += std::abs(render.depth.at(r, c) - gt_depth.at(r, c));
                ++d_count;
            }
        }
    if (c_count == 0) throw EmptyPixelSet("color_depth_loss: every pixel is masked");
    return {c_sum / (3.0 * c_count), d_count ? d_sum / d_count : 0.0};
}

/// Cross-entropy against one-hot ground-truth labels; 255 is the ignore
/// sentinel. Probabilities are clamped to >= 1e-12 before the log.
inline double semantic_loss(const RenderOutput& render, const ImageU8& gt_labels,
                            const Mask& mask) {
    const int h = render.semantic_prob.height(), w = render.semantic_prob.width();
    const int num_classes = render.semantic_prob.channels();
    require_same_shape("semantic_loss", h, w, gt_labels.height(), gt_labels.width());
    double sum = 0;
    std::size_t count = 0;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            if (!loss_detail::included(mask, r, c)) continue;
            const std::uint8_t label = gt_labels.at(r, c);
            if (label == 255) continue;
            if (label >= num_classes)
                throw DimensionMismatch("semantic_loss: label out of range");
            sum += -std::log(std::max(render.semantic_prob.at(r, c, label), 1e-12));
            ++count;
        }
    if (count == 0) throw EmptyPixelSet("semantic_loss: every pixel is masked or ignored");
    return sum / count;
}

/// Mean (1 - cosine similarity) between ground-truth and rendered feature
/// vectors; near-zero vectors contribute 1.
inline double dino_loss(const RenderOutput& render, const ImageF& gt_features, const Mask& mask) {
    const int h = render.feature.height(), w = render.feature.width();
    const int nd = render.feature.channels();
    require_same_shape("dino_loss", h, w, gt_features.height(), gt_features.width());
    if (gt_features.channels() != nd)
        throw DimensionMismatch("dino_loss: feature dimensions differ");
    double sum = 0;
    std::size_t count = 0;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            if (!loss_detail::included(mask, r, c)) continue;
            bool degenerate = false;
            const double cosv = loss_detail::pixel_cosine(gt_features, render.feature, r, c, nd,
                                                          degenerate);
            sum += degenerate ? 1.0 : (1.0 - cosv);
            ++count;
        }
    if (count == 0) throw EmptyPixelSet("dino_loss: every pixel is masked");
    return sum / count;
}

inline LossReport total_loss(double l_c, double l_depth, double l_s, double l_dino,
                             const LossWeights& w, std::size_t valid_pixel_count = 0) {
    LossReport rep;
    rep.l_c = l_c;
    rep.l_depth = l_depth;
    rep.l_s = l_s;
    rep.l_dino = l_dino;
    rep.total = w.lambda_s * l_s + w.lambda_dino * l_dino + w.lambda_c * l_c +
                w.lambda_depth * l_depth;
    rep.valid_pixel_count = valid_pixel_count;
    return rep;
}

/// Per-pixel residual U = lambda'_dino * (1 - cos(F, F')) + lambda'_depth *
/// |D - D_gt|. Pixels with invalid ground-truth depth use the feature term
/// only.
inline ImageF residual_map(const RenderOutput& render, const ImageF& gt_features,
                           const ImageF& gt_depth, const UncertaintyWeights& w) {
    const int h = render.feature.height(), wd = render.feature.width();
    const int nd = render.feature.channels();
    require_same_shape("residual_map", h, wd, gt_features.height(), gt_features.width());
    require_same_shape("residual_map", h, wd, gt_depth.height(), gt_depth.width());
    ImageF u(h, wd, 1);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < wd; ++c) {
            bool degenerate = false;
            const double cosv =
                loss_detail::pixel_cosine(gt_features, render.feature, r, c, nd, degenerate);
            double val = w.lambda_dino * (degenerate ? 1.0 : (1.0 - cosv));
            if (gt_depth.at(r, c) > 0)
                val += w.lambda_depth * std::abs(render.depth.at(r, c) - gt_depth.at(r, c));
            u.at(r, c) = val;
        }
    return u;
}

/// Gradients of the weighted total loss with respect to the rendered maps.
/// Feed the result to render_backward with detach_semantic_weights set so the
/// semantic term cannot move geometry, appearance or pose.
inline OutputGrads loss_backward(const RenderOutput& render, const ImageF& gt_color,
                                 const ImageF& gt_depth, const ImageU8& gt_labels,
                                 const ImageF& gt_features, const Mask& mask,
                                 const LossWeights& w) {
    const int h = render.color.height(), wd = render.color.width();
    const int num_classes = render.semantic_prob.channels();
    const int nd = render.feature.channels();

    std::size_t c_count = 0, d_count = 0, s_count = 0;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < wd; ++c) {
            if (!loss_detail::included(mask, r, c)) continue;
            ++c_count;
            if (gt_depth.at(r, c) > 0) ++d_count;
            if (gt_labels.at(r, c) != 255) ++s_count;
        }
    if (c_count == 0) throw EmptyPixelSet("loss_backward: every pixel is masked");

    OutputGrads out;
    out.color = ImageF(h, wd, 3);
    out.depth = ImageF(h, wd, 1);
    if (w.lambda_s > 0 && s_count > 0) out.semantic_prob = ImageF(h, wd, num_classes);
    if (w.lambda_dino > 0) out.feature = ImageF(h, wd, nd);

    const double c_scale = w.lambda_c / (3.0 * c_count);
    const double d_scale = d_count ? w.lambda_depth / d_count : 0.0;
    const double s_scale = s_count ? w.lambda_s / s_count : 0.0;
    const double f_scale = w.lambda_dino / c_count;

    for (int r = 0; r < h; ++r)
        for (int c = 0; c < wd; ++c) {
            if (!loss_detail::included(mask, r, c)) continue;
            for (int ch = 0; ch < 3; ++ch) {
                const double diff = render.color.at(r, c, ch) - gt_color.at(r, c, ch);
                out.color.at(r, c, ch) = c_scale * (diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0));
            }
            if (d_scale > 0 && gt_depth.at(r, c) > 0) {
                const double diff = render.depth.at(r, c) - gt_depth.at(r, c);
                out.depth.at(r, c) = d_scale * (diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0));
            }
            if (!out.semantic_prob.empty()) {
                const std::uint8_t label = gt_labels.at(r, c);
                if (label != 255 && label < num_classes) {
                    const double p = render.semantic_prob.at(r, c, label);
                    if (p > 1e-12) out.semantic_prob.at(r, c, label) = -s_scale / p;
                }
            }
            if (!out.feature.empty()) {
                double dot = 0, na2 = 0, nb2 = 0;
                for (int ch = 0; ch < nd; ++ch) {
                    const double a = gt_features.at(r, c, ch);
                    const double b = render.feature.at(r, c, ch);
                    dot += a * b;
                    na2 += a * a;
                    nb2 += b * b;
                }
                const double na = std::sqrt(na2), nb = std::sqrt(nb2);
                if (na >= 1e-8 && nb >= 1e-8) {
                    // d(1 - cos)/dF' = -(F/(|F||F'|) - cos * F'/|F'|^2)
                    const double inv = 1.0 / (na * nb);
                    const double cosv = dot * inv;
                    for (int ch = 0; ch < nd; ++ch) {
                        const double a = gt_features.at(r, c, ch);
                        const double b = render.feature.at(r, c, ch);
                        out.feature.at(r, c, ch) = f_scale * (-(a * inv - cosv * b / nb2));
                    }
                }
            }
        }
    return out;
}

}  // namespace lvslam
