// Copyright Contributors to the lvslam project
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "lvslam/eval.hpp"

using namespace lvslam;

#include "support.hpp"

using lvslam::testsupport::ssim_oracle;

namespace {

Trajectory square_xy() {
    Trajectory t;
    const double pts[4][2] = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
    for (int i = 0; i < 4; ++i)
        t.push_back(TimedPose{static_cast<double>(i),
                              SE3Pose(Eigen::Quaterniond::Identity(), Vec3(pts[i][0], pts[i][1], 0))});
    return t;
}

Trajectory random_trajectory(std::mt19937& rng, int n) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Trajectory t;
    for (int i = 0; i < n; ++i) {
        Eigen::Quaterniond q(u(rng), u(rng), u(rng), u(rng));
        if (q.norm() < 1e-3) q = Eigen::Quaterniond::Identity();
        t.push_back(TimedPose{0.1 * i, SE3Pose(q, Vec3(5 * u(rng), 5 * u(rng), 5 * u(rng)))});
    }
    return t;
}

Trajectory transformed(const Trajectory& t, const SE3Pose& g, double scale = 1.0) {
    Trajectory out = t;
    for (auto& tp : out)
        tp.pose = SE3Pose(g.rotation() * tp.pose.rotation(),
                          scale * (g.rotation() * tp.pose.translation()) + g.translation());
    return out;
}


}  // namespace

TEST_CASE("identical trajectories have zero error") {
    std::mt19937 rng(81);
    const Trajectory t = random_trajectory(rng, 20);
    const AteResult r = ate_rmse(t, t, AteAlignment::Rigid);
    CHECK(r.rmse < 1e-12);
    CHECK(r.per_frame_errors.size() == 20);
}

TEST_CASE("rigid alignment absorbs a rigid offset between trajectories") {
    std::mt19937 rng(82);
    const Trajectory ref = random_trajectory(rng, 30);
    const SE3Pose g(Eigen::Quaterniond(Eigen::AngleAxisd(0.8, Vec3(1, 2, 3).normalized())),
                    Vec3(4, -2, 7));
    const Trajectory est = transformed(ref, g);
    CHECK(ate_rmse(est, ref, AteAlignment::Rigid).rmse < 1e-9);
    // without alignment the offset shows up in full
    CHECK(ate_rmse(est, ref, AteAlignment::None).rmse > 1.0);
}

TEST_CASE("similarity alignment additionally absorbs a global scale") {
    std::mt19937 rng(83);
    const Trajectory ref = random_trajectory(rng, 25);
    const Trajectory est = transformed(ref, SE3Pose::identity(), 2.0);
    const AteResult sim = ate_rmse(est, ref, AteAlignment::Similarity);
    CHECK(sim.rmse < 1e-9);
    CHECK(sim.scale == Catch::Approx(0.5).epsilon(1e-6));  // maps estimate back onto reference
    CHECK(ate_rmse(est, ref, AteAlignment::Rigid).rmse > 0.1);
}

TEST_CASE("a fixed vertical offset with alignment disabled scores exactly that offset") {
    const Trajectory ref = square_xy();
    Trajectory est = ref;
    for (auto& tp : est)
        tp.pose = SE3Pose(tp.pose.rotation(), tp.pose.translation() + Vec3(0, 0, 0.1));
    const AteResult r = ate_rmse(est, ref, AteAlignment::None);
    CHECK(r.rmse == Catch::Approx(0.1).epsilon(1e-12));
    for (const double e : r.per_frame_errors) CHECK(e == Catch::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("the rmse matches its per-frame errors exactly") {
    std::mt19937 rng(84);
    const Trajectory ref = random_trajectory(rng, 15);
    const Trajectory est = random_trajectory(rng, 15);
    const AteResult r = ate_rmse(est, ref, AteAlignment::Rigid);
    double sq = 0.0;
    for (const double e : r.per_frame_errors) sq += e * e;
    CHECK(std::abs(r.rmse - std::sqrt(sq / 15)) < 1e-12);
}

TEST_CASE("ate is invariant under a common rigid transform of both trajectories") {
    std::mt19937 rng(85);
    const Trajectory ref = random_trajectory(rng, 20);
    const Trajectory est = random_trajectory(rng, 20);
    const double base = ate_rmse(est, ref, AteAlignment::Rigid).rmse;
    const SE3Pose g(Eigen::Quaterniond(Eigen::AngleAxisd(1.1, Vec3(0, 1, 1).normalized())),
                    Vec3(-3, 5, 2));
    const double moved = ate_rmse(transformed(est, g), transformed(ref, g),
                                  AteAlignment::Rigid).rmse;
    CHECK(moved == Catch::Approx(base).epsilon(1e-9));
}

TEST_CASE("degenerate and mismatched trajectories are rejected") {
    std::mt19937 rng(86);
    const Trajectory t = random_trajectory(rng, 5);
    CHECK_THROWS_AS(ate_rmse(t, random_trajectory(rng, 6)), LengthMismatch);
    CHECK_THROWS_AS(ate_rmse(Trajectory{t[0]}, Trajectory{t[0]}), LengthMismatch);
    Trajectory coincident(4, TimedPose{0.0, SE3Pose::identity()});
    CHECK_THROWS_AS(ate_rmse(coincident, t.size() >= 4 ? Trajectory(t.begin(), t.begin() + 4)
                                                       : t,
                             AteAlignment::Rigid),
                    DegenerateTrajectory);
    // with alignment off, a coincident estimate is fine
    CHECK_NOTHROW(ate_rmse(coincident, Trajectory(t.begin(), t.begin() + 4), AteAlignment::None));
}

TEST_CASE("psnr landmarks") {
    const ImageF a(16, 16, 3, 0.5);
    CHECK(std::isinf(psnr(a, a)));

    ImageF b = a;
    for (auto& v : b.data()) v += 0.1;
    CHECK(psnr(a, b) == Catch::Approx(20.0).epsilon(1e-9));

    const ImageF black(16, 16, 3, 0.0), white(16, 16, 3, 1.0);
    CHECK(psnr(black, white) == Catch::Approx(0.0).margin(1e-12));

    CHECK(psnr(a, b) == psnr(b, a));
    CHECK_THROWS_AS(psnr(a, ImageF(16, 17, 3)), ShapeMismatch);
}

TEST_CASE("psnr strictly decreases with noise amplitude") {
    std::mt19937 rng(87);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    ImageF base(20, 20, 3, 0.5), pattern(20, 20, 3);
    for (auto& v : pattern.data()) v = u(rng);
    double prev = std::numeric_limits<double>::infinity();
    for (const double amp : {0.02, 0.04, 0.06, 0.08, 0.10}) {
        ImageF noisy = base;
        for (std::size_t i = 0; i < noisy.size(); ++i) noisy.data()[i] += amp * pattern.data()[i];
        const double p = psnr(base, noisy);
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("ssim landmarks") {
    std::mt19937 rng(88);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ImageF a(24, 24, 1);
    for (auto& v : a.data()) v = u(rng);
    CHECK(ssim(a, a) == Catch::Approx(1.0).margin(1e-9));

    // negating a 0.5-mean pattern flips the covariance sign
    ImageF neg = a;
    for (auto& v : neg.data()) v = 1.0 - v;
    CHECK(ssim(a, neg) < 0.0);

    ImageF b(24, 24, 1);
    for (auto& v : b.data()) v = u(rng);
    CHECK(ssim(a, b) == Catch::Approx(ssim(b, a)).epsilon(1e-12));

    CHECK_THROWS_AS(ssim(a, ImageF(24, 25, 1)), ShapeMismatch);
    CHECK_THROWS_AS(ssim(ImageF(10, 24, 1), ImageF(10, 24, 1)), TooSmall);
}

TEST_CASE("ssim matches a direct-convolution oracle") {
    std::mt19937 rng(89);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        ImageF a(32, 32, 3), b(32, 32, 3);
        for (auto& v : a.data()) v = u(rng);
        // correlated pair: structure plus noise, more interesting than independent noise
        for (std::size_t i = 0; i < b.size(); ++i)
            b.data()[i] = std::clamp(a.data()[i] + 0.2 * (u(rng) - 0.5), 0.0, 1.0);
        CHECK(ssim(a, b) == Catch::Approx(ssim_oracle(a, b)).margin(1e-6));
    }
}
