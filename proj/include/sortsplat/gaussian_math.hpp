// Copyright Contributors to the sortsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Per-Gaussian, per-view math: covariance construction, EWA projection to
// screen-space splats, view-dependent color, bounding radii and the per-ray
// depth of maximum contribution.
//
#pragma once

#include "sortsplat/core.hpp"
#include "sortsplat/scene.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace sortsplat {

struct Ray {
    Vec3 origin    = Vec3::Zero();
    Vec3 direction = Vec3::UnitZ(); // unit length

    [[nodiscard]] Vec3
    at(double t) const {
        return origin + t * direction;
    }
};

/// Screen-space footprint of a Gaussian for one camera, plus the 3D data
/// needed to evaluate per-ray depth without touching the scene again.
struct Splat2D {
    Vec2 mean2d = Vec2::Zero();
    SymMat2 cov2d;             // dilated screen covariance
    SymMat2 conic;             // cov2d^-1
    SymMat3 inv_cov3;          // Sigma^-1 (inverse scales clamped)
    Vec3 inv_cov_mu  = Vec3::Zero(); // Sigma^-1 (mu - o)
    Vec3 mean3d      = Vec3::Zero();
    Vec3 color       = Vec3::Zero();
    double opacity      = 0.0;
    double radius       = 0.0; // pixels
    double global_depth = 0.0; // view-space z of the mean
    std::uint32_t source_index = 0;

    /// True when every value the rasterizer reads is finite.
    [[nodiscard]] bool
    finite() const {
        bool ok = mean2d.allFinite() && mean3d.allFinite() && color.allFinite() && inv_cov_mu.allFinite() &&
                  std::isfinite(conic.a) && std::isfinite(conic.b) && std::isfinite(conic.c) &&
                  std::isfinite(opacity) && std::isfinite(radius) && std::isfinite(global_depth);
        for (double v : inv_cov3.m) ok = ok && std::isfinite(v);
        return ok;
    }

    /// Unclamped alpha of this splat at a pixel position.
    [[nodiscard]] double
    alpha_at(const Vec2 &p) const {
        const Vec2 d = p - mean2d;
        return opacity * std::exp(-0.5 * conic.quad(d));
    }
};

struct ProjectionConfig {
    double inv_scale_clamp = 1e3;
    double near_plane      = 0.2;
    double guard_band      = 1.3;
    double dilation        = 0.3;
    double epsilon         = kOpacityEpsilon;
};

enum class CullReason { None, Near, OutsideGuardBand, Degenerate };

struct Projection {
    std::optional<Splat2D> splat;
    CullReason reason = CullReason::None;
};

/// R diag(s^2) R^T.
inline Mat3
build_covariance(const Quat &rotation, const Vec3 &scale) {
    const Mat3 r = rotation.normalized().toRotationMatrix();
    return r * scale.cwiseProduct(scale).asDiagonal() * r.transpose();
}

/// R diag(min(1/s, clamp)^2) R^T. The clamp is applied to the reciprocal
/// scales before rotation, which thickens very flat Gaussians.
inline SymMat3
build_inverse_covariance(const Quat &rotation, const Vec3 &scale, double clamp = 1e3) {
    const Mat3 r = rotation.normalized().toRotationMatrix();
    Vec3 inv;
    for (int i = 0; i < 3; ++i) inv[i] = std::min(1.0 / scale[i], clamp);
    const Mat3 m = r * inv.cwiseProduct(inv).asDiagonal() * r.transpose();
    return SymMat3::from(0.5 * (m + m.transpose()));
}

/// Radius (pixels) beyond which opacity * G2 falls below epsilon.
inline double
bounding_radius(const SymMat2 &cov2d, double opacity, double epsilon = kOpacityEpsilon) {
    if (opacity <= epsilon) return 0.0;
    const double extent = std::sqrt(2.0 * std::log(opacity / epsilon));
    return extent * std::sqrt(cov2d.max_eigenvalue());
}

namespace detail {
inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kShC1 = 0.4886025119029199;
inline constexpr double kShC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                                    -1.0925484305920792, 0.5462742152960396};
inline constexpr double kShC3[7] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
                                    0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                                    -0.5900435899266435};
} // namespace detail

/// Real SH up to degree 3 with the usual +0.5 offset, clamped at zero.
inline Vec3
evaluate_sh(const std::array<Vec3, kShCoefficients> &sh, const Vec3 &dir) {
    using namespace detail;
    const double x = dir.x(), y = dir.y(), z = dir.z();
    const double xx = x * x, yy = y * y, zz = z * z;
    const double xy = x * y, yz = y * z, xz = x * z;

    Vec3 r = kShC0 * sh[0];
    r += -kShC1 * y * sh[1] + kShC1 * z * sh[2] - kShC1 * x * sh[3];
    r += kShC2[0] * xy * sh[4] + kShC2[1] * yz * sh[5] + kShC2[2] * (2.0 * zz - xx - yy) * sh[6] +
         kShC2[3] * xz * sh[7] + kShC2[4] * (xx - yy) * sh[8];
    r += kShC3[0] * y * (3.0 * xx - yy) * sh[9] + kShC3[1] * xy * z * sh[10] +
         kShC3[2] * y * (4.0 * zz - xx - yy) * sh[11] +
         kShC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * sh[12] +
         kShC3[4] * x * (4.0 * zz - xx - yy) * sh[13] + kShC3[5] * z * (xx - yy) * sh[14] +
         kShC3[6] * x * (xx - 3.0 * yy) * sh[15];
    r.array() += 0.5;
    return r.cwiseMax(0.0);
}

/// DC coefficient that makes evaluate_sh return `rgb` (for rgb >= 0).
inline Vec3
sh_dc_from_rgb(const Vec3 &rgb) {
    return (rgb.array() - 0.5) / detail::kShC0;
}

/// Ray parameter maximizing G(o + t d):  d^T S (mu - o) / d^T S d.
inline double
t_opt(const SymMat3 &invCov, const Vec3 &mean, const Ray &ray) {
    const Vec3 sd = invCov * ray.direction;
    return sd.dot(mean - ray.origin) / sd.dot(ray.direction);
}

/// Same as above using the packed Sigma^-1 (mu - o) of a splat whose camera
/// origin equals the ray origin.
inline double
t_opt(const Splat2D &splat, const Vec3 &direction) {
    return direction.dot(splat.inv_cov_mu) / direction.dot(splat.inv_cov3 * direction);
}

/// World-space ray through continuous pixel position (x, y); pixel centers sit at +0.5.
inline Ray
ray_for_pixel(const Camera &cam, double x, double y) {
    const Vec3 local((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0);
    return Ray{cam.position, (cam.rotation.transpose() * local).normalized()};
}

inline Projection
project_splat(const Gaussian3D &g, const Camera &cam, const ProjectionConfig &cfg = {},
              std::uint32_t sourceIndex = 0) {
    const Vec3 t = cam.to_view(g.mean);
    if (t.z() <= cfg.near_plane) return {std::nullopt, CullReason::Near};

    const Vec2 mean2d(cam.fx * t.x() / t.z() + cam.cx, cam.fy * t.y() / t.z() + cam.cy);
    if (std::abs(mean2d.x() - cam.cx) > cfg.guard_band * 0.5 * cam.width ||
        std::abs(mean2d.y() - cam.cy) > cfg.guard_band * 0.5 * cam.height) {
        return {std::nullopt, CullReason::OutsideGuardBand};
    }

    Eigen::Matrix<double, 2, 3> jac;
    const double iz = 1.0 / t.z();
    jac << cam.fx * iz, 0.0, -cam.fx * t.x() * iz * iz, 0.0, cam.fy * iz, -cam.fy * t.y() * iz * iz;
    const Mat3 sigma = build_covariance(g.rotation, g.scale);
    const Eigen::Matrix<double, 2, 3> jw = jac * cam.rotation;
    const Mat2 cov = jw * sigma * jw.transpose();

    SymMat2 cov2d{cov(0, 0) + cfg.dilation, 0.5 * (cov(0, 1) + cov(1, 0)), cov(1, 1) + cfg.dilation};
    if (!(cov2d.det() > 0.0)) return {std::nullopt, CullReason::Degenerate};

    Splat2D s;
    s.mean2d       = mean2d;
    s.cov2d        = cov2d;
    s.conic        = cov2d.inverse();
    s.inv_cov3     = build_inverse_covariance(g.rotation, g.scale, cfg.inv_scale_clamp);
    s.inv_cov_mu   = s.inv_cov3 * (g.mean - cam.position);
    s.mean3d       = g.mean;
    s.color        = evaluate_sh(g.sh, (g.mean - cam.position).normalized());
    s.opacity      = g.opacity;
    s.radius       = bounding_radius(cov2d, g.opacity, cfg.epsilon);
    s.global_depth = t.z();
    s.source_index = sourceIndex;
    return {s, CullReason::None};
}

} // namespace sortsplat
