// Copyright Contributors to the sortsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic scenes used by the tests and the `fixture` command.
//
#pragma once

#include "sortsplat/core.hpp"
#include "sortsplat/gaussian_math.hpp"
#include "sortsplat/scene.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace sortsplat {

struct Fixture {
    std::string name;
    Scene scene;
    std::vector<Camera> cameras;
    SparsePointSet points;
    Vec3 tracked_ray = Vec3::UnitZ(); // world direction from the camera origin, where meaningful
};

inline Gaussian3D
make_gaussian(const Vec3 &mean, const Vec3 &scale, const Vec3 &rgb, double opacity,
              const Quat &rotation = Quat::Identity()) {
    Gaussian3D g;
    g.mean     = mean;
    g.scale    = scale;
    g.rotation = rotation.normalized();
    g.opacity  = opacity;
    g.sh[0]    = sh_dc_from_rgb(rgb);
    return g;
}

/// Camera at `position` looking along `forward` with image +y along `down`
/// (orthogonalized against forward).
inline Camera
look_camera(const Vec3 &position, const Vec3 &forward, const Vec3 &down, double f, int width, int height) {
    const Vec3 z = forward.normalized();
    const Vec3 y = (down - down.dot(z) * z).normalized();
    const Vec3 x = y.cross(z);
    Mat3 r;
    r.row(0) = x.transpose();
    r.row(1) = y.transpose();
    r.row(2) = z.transpose();
    return Camera::make(r, position, f, f, width, height);
}

/// Camera at the origin yawed by `yaw` radians about +y (positive turns toward +x).
inline Camera
yaw_camera(double yaw, double f, int width, int height) {
    return look_camera(Vec3::Zero(), Vec3(std::sin(yaw), 0.0, std::cos(yaw)), Vec3::UnitY(), f, width, height);
}

/// Two wide, thin sheets (red at z = 4.0, blue at z = 4.1) with laterally
/// offset means. Along every ray the red sheet is in front, but the view-space
/// depth order of the means flips at tan(yaw) = -0.1. Camera k is yawed so
/// the tracked ray (0, 0, 1) passes through the center of pixel column
/// cx + 0.5 + k on the middle row.
inline Fixture
popping_fixture(int frames = 60) {
    Fixture fx;
    fx.name = "two-gaussian-popping";
    fx.scene.push_back(make_gaussian(Vec3(-0.5, 0.0, 4.0), Vec3(10.0, 10.0, 0.02), Vec3(1, 0, 0), 1.0));
    fx.scene.push_back(make_gaussian(Vec3(0.5, 0.0, 4.1), Vec3(10.0, 10.0, 0.02), Vec3(0, 0, 1), 1.0));
    const int width = 128, height = 129;
    const double f  = 64.0;
    for (int k = 0; k < frames; ++k) {
        const double offset = 0.5 + k * 60.0 / frames;
        fx.cameras.push_back(yaw_camera(-std::atan(offset / f), f, width, height));
    }
    fx.tracked_ray = Vec3::UnitZ();
    return fx;
}

/// An isotropic Gaussian at distance `distance` along +z, seen by a camera
/// at the origin; t_opt along a ray at angle theta equals distance cos(theta).
inline Fixture
cosine_fixture(double distance = 2.0, int size = 64) {
    Fixture fx;
    fx.name = "cosine-depth";
    fx.scene.push_back(make_gaussian(Vec3(0, 0, distance), Vec3(0.3, 0.3, 0.3), Vec3(0.8, 0.8, 0.8), 0.9));
    fx.cameras.push_back(look_camera(Vec3::Zero(), Vec3::UnitZ(), Vec3::UnitY(), size, size, size));
    return fx;
}

/// Random anisotropic Gaussians in front of a camera at the origin.
inline Fixture
random_cloud(int n, std::uint64_t seed, int size = 128) {
    Fixture fx;
    fx.name = "random-cloud";
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double f = size;
    for (int i = 0; i < n; ++i) {
        const double z = 3.0 + 1.0 * u01(rng);
        const Vec3 mean((u01(rng) - 0.5) * z * 0.9, (u01(rng) - 0.5) * z * 0.9, z);
        Vec3 scale;
        for (int c = 0; c < 3; ++c) scale[c] = 0.03 * std::pow(20.0, u01(rng));
        const Quat q(normal(rng), normal(rng), normal(rng), normal(rng));
        const Vec3 rgb(u01(rng), u01(rng), u01(rng));
        fx.scene.push_back(make_gaussian(mean, scale, rgb, 0.2 + 0.7 * u01(rng), q));
    }
    fx.cameras.push_back(look_camera(Vec3::Zero(), Vec3::UnitZ(), Vec3::UnitY(), f, size, size));
    return fx;
}

/// A tilted front sheet crossing the view axis at z = 3 whose mean sits at
/// z = 6, in front of a facing back sheet at z = 4.5. Global-z blends the
/// back sheet first near the center. Points lie on the front sheet.
inline Fixture
layered_fixture(int size = 96) {
    Fixture fx;
    fx.name = "layered-depth";
    const Quat tilt(Eigen::AngleAxisd(std::numbers::pi / 4.0, Vec3::UnitY()));
    fx.scene.push_back(make_gaussian(Vec3(-3.0, 0.0, 6.0), Vec3(8.0, 3.0, 0.02), Vec3(0.9, 0.6, 0.2), 1.0, tilt));
    fx.scene.push_back(make_gaussian(Vec3(0.0, 0.0, 4.5), Vec3(3.0, 3.0, 0.02), Vec3(0.2, 0.4, 0.9), 1.0));
    const double f = size;
    for (double dx : {-0.2, 0.0, 0.2})
        fx.cameras.push_back(look_camera(Vec3(dx, 0.0, 0.0), Vec3::UnitZ(), Vec3::UnitY(), f, size, size));
    // the sheet's long axis is (1, 0, -1)/sqrt2 through its mean: z = 3 - x
    for (int i = -3; i <= 3; ++i)
        for (int j = -3; j <= 3; ++j) {
            const double x = 0.1 * i, y = 0.1 * j;
            fx.points.points.push_back({Vec3(x, y, 3.0 - x), {0, 1, 2}});
        }
    return fx;
}

/// Thin splats elongated along the image diagonals.
inline Fixture
elongated_fixture(int n = 40, std::uint64_t seed = 7, int size = 256) {
    Fixture fx;
    fx.name = "elongated";
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double f = size;
    for (int i = 0; i < n; ++i) {
        const double z = 4.0 + 2.0 * u01(rng);
        const Vec3 mean((u01(rng) - 0.5) * z * 0.8, (u01(rng) - 0.5) * z * 0.8, z);
        const double angle = (i % 2 ? 1.0 : -1.0) * std::numbers::pi / 4.0 + 0.2 * (u01(rng) - 0.5);
        const Quat q(Eigen::AngleAxisd(angle, Vec3::UnitZ()));
        const Vec3 scale(0.6 + 0.4 * u01(rng), 0.02, 0.02);
        fx.scene.push_back(make_gaussian(mean, scale, Vec3(u01(rng), u01(rng), u01(rng)), 0.5 + 0.5 * u01(rng), q));
    }
    fx.cameras.push_back(look_camera(Vec3::Zero(), Vec3::UnitZ(), Vec3::UnitY(), f, size, size));
    return fx;
}

inline std::vector<std::string>
fixture_names() {
    return {"two-gaussian-popping", "cosine-depth", "random-cloud", "layered-depth", "elongated"};
}

/// `count` is the Gaussian count for random-cloud and elongated.
inline Fixture
make_fixture(const std::string &name, std::uint64_t seed = 1, int count = 100) {
    if (name == "two-gaussian-popping") return popping_fixture();
    if (name == "cosine-depth") return cosine_fixture();
    if (name == "random-cloud") return random_cloud(count, seed);
    if (name == "layered-depth") return layered_fixture();
    if (name == "elongated") return elongated_fixture(count, seed);
    throw UsageError("unknown fixture '" + name + "'");
}

} // namespace sortsplat
