// Copyright Contributors to the sortsplat Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "sortsplat/core.hpp"

#include <array>
#include <optional>
#include <vector>

namespace sortsplat {

inline constexpr int kShCoefficients = 16; // degree <= 3

/// One scene primitive with activated (decoded) parameters.
struct Gaussian3D {
    Vec3 mean     = Vec3::Zero();
    Quat rotation = Quat::Identity(); // unit quaternion (w, x, y, z)
    Vec3 scale    = Vec3::Ones();     // per-axis standard deviation
    double opacity = 1.0;
    std::array<Vec3, kShCoefficients> sh{}; // sh[0] is the DC term

    Gaussian3D() {
        for (auto &c : sh) c.setZero();
    }
};

using Scene = std::vector<Gaussian3D>;

/// Pinhole camera. `rotation` maps world to view coordinates; the view frame
/// looks down +z with +x to the right and +y down in the image.
struct Camera {
    Mat3 rotation = Mat3::Identity();
    Vec3 position = Vec3::Zero();
    double fx     = 1.0;
    double fy     = 1.0;
    int width     = 1;
    int height    = 1;
    double cx     = 0.5;
    double cy     = 0.5;

    static Camera
    make(const Mat3 &worldToView, const Vec3 &position, double fx, double fy, int width,
         int height) {
        Camera cam;
        cam.rotation = worldToView;
        cam.position = position;
        cam.fx       = fx;
        cam.fy       = fy;
        cam.width    = width;
        cam.height   = height;
        cam.cx       = 0.5 * width;
        cam.cy       = 0.5 * height;
        return cam;
    }

    [[nodiscard]] Vec3
    view_direction() const {
        return rotation.row(2).transpose();
    }

    [[nodiscard]] Vec3
    to_view(const Vec3 &world) const {
        return rotation * (world - position);
    }

    [[nodiscard]] bool
    operator==(const Camera &o) const {
        return rotation == o.rotation && position == o.position && fx == o.fx && fy == o.fy && width == o.width &&
               height == o.height && cx == o.cx && cy == o.cy;
    }

    /// Projects a world point to continuous pixel coordinates; nullopt behind the camera.
    [[nodiscard]] std::optional<Vec2>
    project(const Vec3 &world) const {
        const Vec3 v = to_view(world);
        if (v.z() <= 0.0) return std::nullopt;
        return Vec2(fx * v.x() / v.z() + cx, fy * v.y() / v.z() + cy);
    }
};

/// Sparse reconstruction points with the ids of the cameras that observe them.
struct SparsePointSet {
    struct Point {
        Vec3 position = Vec3::Zero();
        std::vector<int> cameras;
    };
    std::vector<Point> points;
};

} // namespace sortsplat
