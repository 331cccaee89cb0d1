// Copyright Contributors to the sortsplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "test_helpers.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace sortsplat;
using namespace sortsplat::testing;

namespace {

double
gaussian3(const Mat3 &invCov, const Vec3 &mean, const Vec3 &x) {
    const Vec3 d = x - mean;
    return std::exp(-0.5 * d.dot(invCov * d));
}

Camera
axis_camera(double f = 100.0, int size = 200) {
    return Camera::make(Mat3::Identity(), Vec3::Zero(), f, f, size, size);
}

} // namespace

TEST(BuildCovariance, IdentityAndAxisScale) {
    EXPECT_LT((build_covariance(Quat::Identity(), Vec3(1, 1, 1)) - Mat3::Identity()).norm(), 1e-15);
    const Mat3 d = build_covariance(Quat::Identity(), Vec3(2, 1, 1));
    EXPECT_LT((d - Vec3(4, 1, 1).asDiagonal().toDenseMatrix()).norm(), 1e-15);
}

TEST(BuildCovariance, EigenvaluesAreSquaredScales) {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 50; ++i) {
        const Quat q = random_quat(rng);
        const Vec3 s = random_scale(rng);
        Eigen::SelfAdjointEigenSolver<Mat3> eig(build_covariance(q, s));
        Vec3 expected = s.cwiseProduct(s);
        std::sort(expected.data(), expected.data() + 3);
        for (int k = 0; k < 3; ++k) EXPECT_NEAR(eig.eigenvalues()[k], expected[k], 1e-9 * expected[2]);
    }
}

TEST(BuildInverseCovariance, IdentityAndClamp) {
    EXPECT_LT((build_inverse_covariance(Quat::Identity(), Vec3(1, 1, 1)).full() - Mat3::Identity()).norm(), 1e-15);
    const SymMat3 clamped = build_inverse_covariance(Quat::Identity(), Vec3(1e-5, 1, 1), 1e3);
    Eigen::SelfAdjointEigenSolver<Mat3> eig(clamped.full());
    EXPECT_NEAR(eig.eigenvalues().maxCoeff(), 1e6, 1e-6);
}

TEST(BuildInverseCovariance, MatchesGenericInverseWhenUnclamped) {
    std::mt19937_64 rng(2);
    for (int i = 0; i < 50; ++i) {
        const Quat q     = random_quat(rng);
        const Vec3 s     = random_scale(rng);
        const Mat3 cov   = build_covariance(q, s);
        const Mat3 oracle = cov.inverse();
        const Mat3 inv   = build_inverse_covariance(q, s).full();
        EXPECT_LT((inv - oracle).norm() / oracle.norm(), 1e-6);
        EXPECT_LT((cov * inv - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(ProjectSplat, IsotropicOnAxisMatchesPinholeJacobian) {
    const Camera cam = axis_camera(100.0);
    for (double z : {2.0, 5.0, 11.0})
        for (double sigma : {0.05, 0.2}) {
            Gaussian3D g;
            g.mean  = Vec3(0, 0, z);
            g.scale = Vec3::Constant(sigma);
            const auto p = project_splat(g, cam);
            ASSERT_TRUE(p.splat);
            EXPECT_LT((p.splat->mean2d - Vec2(cam.cx, cam.cy)).norm(), 1e-12);
            const double expected = std::pow(cam.fx * sigma / z, 2) + 0.3;
            EXPECT_NEAR(p.splat->cov2d.a, expected, 0.01 * expected);
            EXPECT_NEAR(p.splat->cov2d.c, expected, 0.01 * expected);
            EXPECT_NEAR(p.splat->cov2d.b, 0.0, 1e-12);
            EXPECT_DOUBLE_EQ(p.splat->global_depth, z);
        }
}

TEST(ProjectSplat, CullsBehindNearAndOutsideGuardBand) {
    const Camera cam = axis_camera();
    Gaussian3D g;
    g.mean = Vec3(0, 0, -1);
    EXPECT_FALSE(project_splat(g, cam).splat);
    EXPECT_EQ(project_splat(g, cam).reason, CullReason::Near);
    g.mean = Vec3(0, 0, 0.15);
    EXPECT_EQ(project_splat(g, cam).reason, CullReason::Near);
    // |u - cx| = f x / z = 100 * 1.4 = 140 > 1.3 * 100
    g.mean = Vec3(1.4, 0, 1.0);
    EXPECT_EQ(project_splat(g, cam).reason, CullReason::OutsideGuardBand);
    g.mean = Vec3(1.2, 0, 1.0);
    EXPECT_TRUE(project_splat(g, cam).splat);
}

TEST(ProjectSplat, TranslatingAlongViewAxisKeepsOnAxisMean) {
    std::mt19937_64 rng(3);
    Gaussian3D g;
    g.mean     = Vec3(0.3, -0.2, 4.0);
    g.rotation = random_quat(rng);
    g.scale    = Vec3(0.3, 0.1, 0.2);
    const Vec3 fwd = g.mean.normalized();
    for (double s : {0.0, 0.5, 1.5, 3.0}) {
        const Camera cam = look_camera(s * fwd, fwd, Vec3::UnitY(), 100, 200, 200);
        const auto p     = project_splat(g, cam);
        ASSERT_TRUE(p.splat);
        EXPECT_LT((p.splat->mean2d - Vec2(cam.cx, cam.cy)).norm(), 1e-9);
    }
}

TEST(BoundingRadius, PaperExtentAndExamples) {
    // unit eigenvalue: radius equals t_O
    EXPECT_NEAR(bounding_radius(SymMat2{1, 0, 1}, 1.0), 3.3290, 5e-5);
    EXPECT_EQ(bounding_radius(SymMat2{1, 0, 1}, 1.0 / 255.0), 0.0);
    EXPECT_EQ(bounding_radius(SymMat2{1, 0, 1}, 0.001), 0.0);
    EXPECT_NEAR(bounding_radius(SymMat2{4, 0, 1}, 1.0), 2.0 * std::sqrt(2.0 * std::log(255.0)), 1e-12);
    EXPECT_NEAR(bounding_radius(SymMat2{4, 0, 1}, 1.0), 6.658, 5e-4);
}

TEST(BoundingRadius, ContributionBelowEpsilonOutside) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        const double l1 = 0.5 + 50 * u(rng), l2 = 0.5 + 50 * u(rng), th = std::numbers::pi * u(rng);
        const Mat2 r    = Eigen::Rotation2Dd(th).toRotationMatrix();
        const Mat2 cov  = r * Vec2(l1, l2).asDiagonal() * r.transpose();
        Splat2D s;
        s.cov2d   = {cov(0, 0), cov(0, 1), cov(1, 1)};
        s.conic   = s.cov2d.inverse();
        s.opacity = 0.01 + 0.99 * u(rng);
        s.radius  = bounding_radius(s.cov2d, s.opacity);
        for (int k = 0; k < 64; ++k) {
            const double a = 2.0 * std::numbers::pi * k / 64.0;
            const Vec2 p   = s.radius * (1.0 + 1e-9) * Vec2(std::cos(a), std::sin(a));
            EXPECT_LT(s.alpha_at(p), kOpacityEpsilon);
        }
    }
}

TEST(EvaluateSh, DegreeZero) {
    std::array<Vec3, kShCoefficients> sh{};
    for (auto &c : sh) c.setZero();
    EXPECT_EQ(evaluate_sh(sh, Vec3::UnitZ()), Vec3(0.5, 0.5, 0.5));
    sh[0] = Vec3(0.3, -0.4, 1.2);
    const Vec3 expected = (1.0 / (2.0 * std::sqrt(std::numbers::pi))) * sh[0] + Vec3::Constant(0.5);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0, 1);
    for (int i = 0; i < 20; ++i) {
        const Vec3 d = Vec3(n(rng), n(rng), n(rng)).normalized();
        EXPECT_LT((evaluate_sh(sh, d) - expected).norm(), 1e-12);
    }
    EXPECT_NEAR(0.282095 * 0.3 + 0.5, expected.x(), 1e-6);
}

TEST(EvaluateSh, BasisIsOrthonormalOnTheSphere) {
    // independent oracle: numeric quadrature of Y_i Y_j over the unit sphere
    const int nTheta = 180, nPhi = 360;
    const double amp = 0.1; // keeps 0.5 + amp Y positive so the clamp never triggers
    std::vector<std::vector<double>> y(kShCoefficients, std::vector<double>(nTheta * nPhi));
    std::vector<double> w(nTheta * nPhi);
    for (int k = 0; k < kShCoefficients; ++k) {
        std::array<Vec3, kShCoefficients> sh{};
        for (auto &c : sh) c.setZero();
        sh[k] = Vec3::Constant(amp);
        for (int i = 0; i < nTheta; ++i)
            for (int j = 0; j < nPhi; ++j) {
                const double th = std::numbers::pi * (i + 0.5) / nTheta;
                const double ph = 2.0 * std::numbers::pi * (j + 0.5) / nPhi;
                const Vec3 d(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th));
                y[k][i * nPhi + j] = (evaluate_sh(sh, d).x() - 0.5) / amp;
                w[i * nPhi + j]    = std::sin(th) * (std::numbers::pi / nTheta) * (2.0 * std::numbers::pi / nPhi);
            }
    }
    for (int a = 0; a < kShCoefficients; ++a)
        for (int b = a; b < kShCoefficients; ++b) {
            double s = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * y[a][i] * y[b][i];
            EXPECT_NEAR(s, a == b ? 1.0 : 0.0, 2e-3) << a << "," << b;
        }
}

TEST(TOpt, CosineLawForIsotropicGaussian) {
    const SymMat3 inv = SymMat3::from(Mat3::Identity());
    const Vec3 mu(0, 0, 2);
    for (double th : {0.0, 0.1, 0.4, 0.9, 1.3}) {
        const Ray r{Vec3::Zero(), Vec3(std::sin(th), 0, std::cos(th))};
        EXPECT_NEAR(t_opt(inv, mu, r), 2.0 * std::cos(th), 1e-12);
    }
}

TEST(TOpt, RayThroughCenterGivesDistance) {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(-3, 3);
    for (double s : {0.1, 1.0, 4.0}) {
        const SymMat3 inv = SymMat3::from(Mat3::Identity() / (s * s));
        const Vec3 o(u(rng), u(rng), u(rng)), mu(u(rng), u(rng), u(rng) + 8);
        EXPECT_NEAR(t_opt(inv, mu, Ray{o, (mu - o).normalized()}), (mu - o).norm(), 1e-12);
    }
}

TEST(TOpt, MatchesDenseGridArgmax) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1, 1);
    std::normal_distribution<double> n(0, 1);
    const int samples = 100000;
    const double tMax = 20.0, step = tMax / (samples - 1);
    for (int i = 0; i < 100; ++i) {
        const Quat q      = random_quat(rng);
        const Vec3 s      = random_scale(rng, 0.05, 2.0);
        const Mat3 inv    = build_inverse_covariance(q, s).full();
        const Vec3 mu(2 * u(rng), 2 * u(rng), 6 + 3 * u(rng));
        const Ray ray{Vec3(u(rng), u(rng), 0), (mu + Vec3(n(rng), n(rng), n(rng)) * 0.5).normalized()};
        double bestT = 0.0, best = -1.0;
        for (int k = 0; k < samples; ++k) {
            const double t = k * step;
            const double g = gaussian3(inv, mu, ray.at(t));
            if (g > best) best = g, bestT = t;
        }
        const double t = t_opt(SymMat3::from(inv), mu, ray);
        if (t > 0.0 && t < tMax) {
            EXPECT_LE(std::abs(t - bestT), step) << "case " << i;
        }
        // maximality against the whole grid
        EXPECT_GE(gaussian3(inv, mu, ray.at(t)), best * (1.0 - 1e-12));
    }
}

TEST(TOpt, IndependentOfCameraSharingTheRay) {
    std::mt19937_64 rng(8);
    Gaussian3D g;
    g.mean     = Vec3(0.4, -0.3, 5.0);
    g.rotation = random_quat(rng);
    g.scale    = Vec3(0.6, 0.05, 0.3);
    const Vec3 o(0.1, 0.2, -0.3);
    const Vec3 d = Vec3(0.05, -0.02, 1.0).normalized();
    // two cameras with the same origin but different orientations and intrinsics
    const Camera a = look_camera(o, Vec3(0, 0, 1), Vec3::UnitY(), 120, 160, 120);
    const Camera b = look_camera(o, Vec3(0.2, 0.1, 1), Vec3(0.3, 1, 0), 80, 100, 90);
    const auto pa  = project_splat(g, a), pb = project_splat(g, b);
    ASSERT_TRUE(pa.splat && pb.splat);
    EXPECT_NEAR(t_opt(*pa.splat, d), t_opt(*pb.splat, d), 1e-9);
    EXPECT_NEAR(t_opt(*pa.splat, d), t_opt(pa.splat->inv_cov3, g.mean, Ray{o, d}), 1e-9);
    // the global depth of the same Gaussian does differ between the cameras
    EXPECT_GT(std::abs(pa.splat->global_depth - pb.splat->global_depth), 1e-3);
}

TEST(TOpt, ShiftAlongRayIsAffine) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-2, 2);
    for (int i = 0; i < 50; ++i) {
        const SymMat3 inv = build_inverse_covariance(random_quat(rng), random_scale(rng));
        const Vec3 mu(u(rng), u(rng), 5 + u(rng));
        const Ray r{Vec3(u(rng), u(rng), u(rng)), Vec3(u(rng), u(rng), 4).normalized()};
        for (double s : {-1.5, 0.3, 2.0}) {
            const Ray shifted{r.origin + s * r.direction, r.direction};
            EXPECT_NEAR(t_opt(inv, mu, shifted), t_opt(inv, mu, r) - s, 1e-9);
        }
    }
}

TEST(TOpt, OrderAlongFixedRayIsCameraIndependent) {
    // global depth order flips between cameras but t_opt order along the ray does not
    const Fixture fx = popping_fixture(60);
    const Vec3 d     = fx.tracked_ray;
    std::vector<int> orders;
    for (const Camera &cam : {fx.cameras.front(), fx.cameras.back()}) {
        const auto a = project_splat(fx.scene[0], cam), b = project_splat(fx.scene[1], cam);
        ASSERT_TRUE(a.splat && b.splat);
        orders.push_back(t_opt(*a.splat, d) < t_opt(*b.splat, d));
        orders.push_back(a.splat->global_depth < b.splat->global_depth);
    }
    EXPECT_EQ(orders[0], 1);
    EXPECT_EQ(orders[2], 1);
    EXPECT_NE(orders[1], orders[3]);
}

TEST(RayForPixel, PrincipalPointRollAndFortyFive) {
    const Camera cam = axis_camera(100.0);
    const Ray r      = ray_for_pixel(cam, cam.cx, cam.cy);
    EXPECT_LT((r.direction - cam.view_direction()).norm(), 1e-15);
    EXPECT_EQ(r.origin, cam.position);

    const Ray r45 = ray_for_pixel(cam, cam.cx + cam.fx, cam.cy);
    EXPECT_NEAR(std::acos(r45.direction.dot(cam.view_direction())), std::numbers::pi / 4, 1e-12);
    EXPECT_NEAR(r45.direction.norm(), 1.0, 1e-12);

    // roll by 90 degrees about the view axis: pixel (cx + 10, cy) maps to (cx, cy - 10)
    Mat3 roll;
    roll << 0, 1, 0, -1, 0, 0, 0, 0, 1;
    const Camera rolled = Camera::make(roll * cam.rotation, cam.position, 100, 100, 200, 200);
    const Vec3 a        = ray_for_pixel(cam, cam.cx + 10, cam.cy).direction;
    const Vec3 b        = ray_for_pixel(rolled, rolled.cx, rolled.cy - 10).direction;
    EXPECT_LT((a - b).norm(), 1e-9);
}
