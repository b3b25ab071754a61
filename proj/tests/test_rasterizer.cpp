// Copyright Contributors to the lvslam project
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>
#include <algorithm>
#include <random>

#include "lvslam/rasterizer.hpp"

using namespace lvslam;

#include "support.hpp"

using namespace lvslam::testsupport;

namespace {

void check_grad(double analytic, double fd, const std::string& what) {
    INFO(what << ": analytic=" << analytic << " fd=" << fd);
    const double denom = std::max(std::abs(analytic), std::abs(fd));
    if (denom < 1e-6)
        CHECK(std::abs(analytic - fd) < 1e-6);
    else
        CHECK(std::abs(analytic - fd) / denom < 1e-3);
}

}  // namespace

// ---------------------------------------------------------------------------
// Projection
// ---------------------------------------------------------------------------

TEST_CASE("on-axis isotropic projection has the closed-form footprint") {
    const CameraIntrinsics k(100, 100, 50, 50, 100, 100);
    Gaussian g;
    g.position = Vec3(0, 0, 5);
    g.log_scale = Vec3::Constant(std::log(0.1));
    const auto s = project_gaussian(g, SE3Pose::identity(), k);
    REQUIRE(s.has_value());
    const double expected = std::pow(100.0 * 0.1 / 5.0, 2) + kCovLowPass;  // (f s / z)^2 + lowpass
    CHECK((s->cov2d - expected * Mat2::Identity()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(s->depth == Catch::Approx(5.0));
    CHECK(s->mean2d.x() == Catch::Approx(50.0));
    CHECK(s->mean2d.y() == Catch::Approx(50.0));
}

TEST_CASE("rotating an isotropic gaussian leaves the footprint unchanged") {
    const CameraIntrinsics k(100, 100, 50, 50, 100, 100);
    Gaussian g;
    g.position = Vec3(0.7, -0.4, 4);
    g.log_scale = Vec3::Constant(std::log(0.2));
    const auto base = project_gaussian(g, SE3Pose::identity(), k);
    REQUIRE(base.has_value());
    std::mt19937 rng(41);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 10; ++i) {
        Gaussian h = g;
        h.rotation = Eigen::Quaterniond(u(rng), u(rng), u(rng), u(rng));
        const auto s = project_gaussian(h, SE3Pose::identity(), k);
        REQUIRE(s.has_value());
        CHECK((s->cov2d - base->cov2d).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("near-plane and off-image gaussians are culled") {
    const CameraIntrinsics k(100, 100, 50, 50, 100, 100);
    Gaussian g;
    g.position = Vec3(0, 0, -3);
    CHECK_FALSE(project_gaussian(g, SE3Pose::identity(), k).has_value());
    g.position = Vec3(0, 0, 0.1);  // in front but inside the near margin
    CHECK_FALSE(project_gaussian(g, SE3Pose::identity(), k).has_value());
    g.position = Vec3(100, 0, 2);  // projects far beyond the right edge
    g.log_scale = Vec3::Constant(std::log(0.01));
    CHECK_FALSE(project_gaussian(g, SE3Pose::identity(), k).has_value());
}

// ---------------------------------------------------------------------------
// Forward rendering
// ---------------------------------------------------------------------------

TEST_CASE("rendering no gaussians yields blank channels") {
    const CameraIntrinsics k(50, 50, 16, 16, 32, 32);
    const RenderOutput out = render(std::vector<Gaussian>{}, SE3Pose::identity(), k, 3, 2);
    CHECK(max_image_diff(out.alpha, ImageF(32, 32, 1)) == 0.0);
    CHECK(max_image_diff(out.color, ImageF(32, 32, 3)) == 0.0);
    CHECK(max_image_diff(out.depth, ImageF(32, 32, 1)) == 0.0);
}

TEST_CASE("a single opaque gaussian dominates its center pixel") {
    const CameraIntrinsics k(100, 100, 16, 16, 32, 32);
    Gaussian g;
    g.position = Vec3(0, 0, 5);  // projects exactly onto pixel (16, 16)
    g.log_scale = Vec3::Constant(std::log(0.2));
    g.opacity_logit = 10.0;
    g.color = Vec3(0.05, 0.08, 0.02);
    g.semantic_logits = Eigen::VectorXd::Zero(3);
    g.feature = Eigen::VectorXd::Zero(2);
    const RenderOutput out = render(std::vector<Gaussian>{g}, SE3Pose::identity(), k, 3, 2);
    for (int ch = 0; ch < 3; ++ch)
        CHECK(std::abs(out.color.at(16, 16, ch) - g.color[ch]) < 1e-3);
    CHECK(std::abs(out.depth.at(16, 16) - 5.0) < 1e-6);
    CHECK(out.alpha.at(16, 16) > 0.98);
}

TEST_CASE("tiled rendering matches the naive reference on random scenes") {
    std::mt19937 rng(42);
    for (int scene = 0; scene < 20; ++scene) {
        const int w = 8 + static_cast<int>(rng() % 57);  // up to 64
        const int h = 8 + static_cast<int>(rng() % 57);
        const int n = 1 + static_cast<int>(rng() % 100);
        const CameraIntrinsics k(0.9 * w, 0.9 * h, 0.5 * w, 0.5 * h, w, h);
        const SE3Pose pose = random_small_pose(rng);
        std::vector<Gaussian> gaussians;
        for (int i = 0; i < n; ++i) {
            Gaussian g = random_gaussian(rng, 3, 2);
            g.position = pose * g.position;  // expressed in front of this camera
            gaussians.push_back(g);
        }
        const RenderOutput tiled = render(gaussians, pose, k, 3, 2);
        const RenderOutput naive = naive_render(gaussians, pose, k, 3, 2);
        INFO("scene " << scene << " (" << w << "x" << h << ", " << n << " gaussians)");
        CHECK(max_output_diff(tiled, naive) <= 1e-6);
    }
}

TEST_CASE("rendering is invariant under input permutation") {
    std::mt19937 rng(43);
    const CameraIntrinsics k(60, 60, 24, 24, 48, 48);
    std::vector<Gaussian> gaussians;
    for (int i = 0; i < 40; ++i) gaussians.push_back(random_gaussian(rng, 3, 2));
    const RenderOutput a = render(gaussians, SE3Pose::identity(), k, 3, 2);
    std::shuffle(gaussians.begin(), gaussians.end(), rng);
    const RenderOutput b = render(gaussians, SE3Pose::identity(), k, 3, 2);
    CHECK(max_output_diff(a, b) <= 1e-12);
}

TEST_CASE("semantic probabilities stay on the simplex and alpha in range") {
    std::mt19937 rng(44);
    const CameraIntrinsics k(60, 60, 24, 24, 48, 48);
    std::vector<Gaussian> gaussians;
    for (int i = 0; i < 60; ++i) gaussians.push_back(random_gaussian(rng, 4, 2));
    const RenderOutput out = render(gaussians, SE3Pose::identity(), k, 4, 2);
    for (int r = 0; r < 48; ++r)
        for (int c = 0; c < 48; ++c) {
            const double a = out.alpha.at(r, c);
            CHECK(a >= 0.0);
            CHECK(a <= 1.0);
            CHECK(out.depth.at(r, c) >= 0.0);
            if (a > 1e-3) {
                double s = 0.0;
                for (int l = 0; l < 4; ++l) s += out.semantic_prob.at(r, c, l);
                CHECK(std::abs(s - 1.0) < 1e-5);
            }
        }
}

TEST_CASE("pixel alpha is monotone in a gaussian's opacity") {
    std::mt19937 rng(45);
    const CameraIntrinsics k(60, 60, 24, 24, 48, 48);
    std::vector<Gaussian> gaussians;
    for (int i = 0; i < 20; ++i) gaussians.push_back(random_gaussian(rng, 3, 2));
    gaussians[7].opacity_logit = -1.0;
    const RenderOutput lo = render(gaussians, SE3Pose::identity(), k, 3, 2);
    gaussians[7].opacity_logit = 2.0;
    const RenderOutput hi = render(gaussians, SE3Pose::identity(), k, 3, 2);
    for (int r = 0; r < 48; ++r)
        for (int c = 0; c < 48; ++c) CHECK(hi.alpha.at(r, c) >= lo.alpha.at(r, c) - 1e-12);
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

TEST_CASE("zero upstream gradients produce zero parameter gradients") {
    const CameraIntrinsics k(30, 30, 12, 12, 24, 24);
    const FdScene scene = make_fd_scene(100, k, 6, 3, 2);
    RenderContext ctx;
    const RenderOutput out = render(scene.gaussians, scene.pose, k, 3, 2, &ctx);
    OutputGrads zero;
    zero.color = ImageF(24, 24, 3);
    zero.depth = ImageF(24, 24, 1);
    zero.semantic_prob = ImageF(24, 24, 3);
    zero.feature = ImageF(24, 24, 2);
    zero.alpha = ImageF(24, 24, 1);
    const RenderGrads g = render_backward(ctx, out, zero);
    CHECK(g.pose.norm() == 0.0);
    for (std::size_t i = 0; i < scene.gaussians.size(); ++i) {
        CHECK(g.position[i].norm() == 0.0);
        CHECK(g.log_scale[i].norm() == 0.0);
        CHECK(g.rotation[i].norm() == 0.0);
        CHECK(g.opacity_logit[i] == 0.0);
        CHECK(g.color[i].norm() == 0.0);
        CHECK(g.semantic_logits[i].norm() == 0.0);
        CHECK(g.feature[i].norm() == 0.0);
    }
}

TEST_CASE("mismatched upstream shapes are a state error") {
    const CameraIntrinsics k(30, 30, 12, 12, 24, 24);
    const FdScene scene = make_fd_scene(101, k, 4, 3, 2);
    RenderContext ctx;
    const RenderOutput out = render(scene.gaussians, scene.pose, k, 3, 2, &ctx);
    OutputGrads bad;
    bad.color = ImageF(12, 24, 3);
    CHECK_THROWS_AS(render_backward(ctx, out, bad), StateMismatch);
    OutputGrads bad_channels;
    bad_channels.semantic_prob = ImageF(24, 24, 5);
    CHECK_THROWS_AS(render_backward(ctx, out, bad_channels), StateMismatch);
    RenderContext stale;  // claims an image size but retains no forward state
    stale.intrinsics = k;
    stale.num_classes = 3;
    stale.feature_dim = 2;
    CHECK_THROWS_AS(render_backward(stale, out, OutputGrads{}), StateMismatch);
}

TEST_CASE("analytic gradients match central finite differences") {
    const CameraIntrinsics k(30, 30, 12, 12, 24, 24);
    const int num_classes = 3, feature_dim = 2, n = 6;
    const double step = 1e-4;

    for (unsigned seed = 0; seed < 20; ++seed) {
        FdScene scene = make_fd_scene(1000 + seed, k, n, num_classes, feature_dim);
        std::mt19937 rng(7000 + seed);
        const OutputGrads upstream = random_upstream(rng, k, num_classes, feature_dim);

        RenderContext ctx;
        const RenderOutput out = render(scene.gaussians, scene.pose, k, num_classes, feature_dim, &ctx);
        const RenderGrads grads = render_backward(ctx, out, upstream);

        auto fd = [&](auto&& poke) {
            poke(step);
            const double hi =
                loss_of(render(scene.gaussians, scene.pose, k, num_classes, feature_dim), upstream);
            poke(-2 * step);
            const double lo =
                loss_of(render(scene.gaussians, scene.pose, k, num_classes, feature_dim), upstream);
            poke(step);  // restore
            return (hi - lo) / (2 * step);
        };

        for (int i = 0; i < n; ++i) {
            Gaussian& g = scene.gaussians[i];
            const std::string tag = "seed " + std::to_string(seed) + " gaussian " + std::to_string(i);
            for (int a = 0; a < 3; ++a) {
                check_grad(grads.position[i][a], fd([&](double h) { g.position[a] += h; }),
                           tag + " position[" + std::to_string(a) + "]");
                check_grad(grads.log_scale[i][a], fd([&](double h) { g.log_scale[a] += h; }),
                           tag + " log_scale[" + std::to_string(a) + "]");
                check_grad(grads.color[i][a], fd([&](double h) { g.color[a] += h; }),
                           tag + " color[" + std::to_string(a) + "]");
            }
            check_grad(grads.opacity_logit[i], fd([&](double h) { g.opacity_logit += h; }),
                       tag + " opacity");
            double* quat[4] = {&g.rotation.w(), &g.rotation.x(), &g.rotation.y(), &g.rotation.z()};
            for (int a = 0; a < 4; ++a)
                check_grad(grads.rotation[i][a], fd([&](double h) { *quat[a] += h; }),
                           tag + " rotation[" + std::to_string(a) + "]");
            for (int l = 0; l < num_classes; ++l)
                check_grad(grads.semantic_logits[i][l],
                           fd([&](double h) { g.semantic_logits[l] += h; }),
                           tag + " semantic[" + std::to_string(l) + "]");
            for (int d = 0; d < feature_dim; ++d)
                check_grad(grads.feature[i][d], fd([&](double h) { g.feature[d] += h; }),
                           tag + " feature[" + std::to_string(d) + "]");
        }

        // pose tangent, via the same retraction the optimizer uses
        for (int a = 0; a < 6; ++a) {
            Vec6 xi = Vec6::Zero();
            xi[a] = step;
            const double hi = loss_of(
                render(scene.gaussians, se3_retract(scene.pose, xi), k, num_classes, feature_dim),
                upstream);
            xi[a] = -step;
            const double lo = loss_of(
                render(scene.gaussians, se3_retract(scene.pose, xi), k, num_classes, feature_dim),
                upstream);
            check_grad(grads.pose[a], (hi - lo) / (2 * step),
                       "seed " + std::to_string(seed) + " pose[" + std::to_string(a) + "]");
        }
    }
}

TEST_CASE("detached semantic gradients leave geometry, appearance and pose untouched") {
    const CameraIntrinsics k(30, 30, 12, 12, 24, 24);
    const FdScene scene = make_fd_scene(200, k, 6, 3, 2);
    RenderContext ctx;
    const RenderOutput out = render(scene.gaussians, scene.pose, k, 3, 2, &ctx);

    std::mt19937 rng(201);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    OutputGrads up;  // purely semantic upstream signal
    up.semantic_prob = ImageF(24, 24, 3);
    for (int r = 0; r < 24; ++r)
        for (int c = 0; c < 24; ++c)
            for (int l = 0; l < 3; ++l) up.semantic_prob.at(r, c, l) = u(rng);

    const RenderGrads detached = render_backward(ctx, out, up, true);
    CHECK(detached.pose.norm() == 0.0);
    double semantic_mass = 0.0;
    for (std::size_t i = 0; i < scene.gaussians.size(); ++i) {
        CHECK(detached.position[i].norm() == 0.0);
        CHECK(detached.log_scale[i].norm() == 0.0);
        CHECK(detached.rotation[i].norm() == 0.0);
        CHECK(detached.opacity_logit[i] == 0.0);
        CHECK(detached.color[i].norm() == 0.0);
        semantic_mass += detached.semantic_logits[i].norm();
    }
    CHECK(semantic_mass > 0.0);  // the logits still learn

    // without detachment the same signal moves the geometry
    const RenderGrads attached = render_backward(ctx, out, up, false);
    CHECK(attached.pose.norm() > 0.0);
}
