// Copyright Contributors to the lvslam project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <cmath>

#include "lvslam/geometry.hpp"

namespace lvslam {

/// First-order adaptive-moment (Adam) state for a flat parameter vector.
class Adam {
public:
    Adam() = default;
    explicit Adam(Eigen::Index dim)
        : m_(Eigen::VectorXd::Zero(dim)), v_(Eigen::VectorXd::Zero(dim)) {}

    Eigen::Index dim() const { return m_.size(); }

    /// Returns the update to subtract from the parameters.
    Eigen::VectorXd step(const Eigen::VectorXd& grad, double lr) {
        ++t_;
        m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
        v_ = beta2_ * v_.array().matrix() + (1.0 - beta2_) * grad.cwiseProduct(grad);
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        return (lr / bc1) * m_.cwiseQuotient(((v_ / bc2).array().sqrt() + eps_).matrix());
    }

private:
    Eigen::VectorXd m_, v_;
    long t_ = 0;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
};

struct StepSizes {
    double position = 1e-3;
    double log_scale = 2e-3;
    double rotation = 1e-3;
    double opacity = 2e-2;
    double color = 1e-2;
    double semantic = 2e-2;
    double feature = 1e-2;
    double pose = 2e-3;
};

}  // namespace lvslam
