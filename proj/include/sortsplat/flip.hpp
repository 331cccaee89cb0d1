// Copyright Contributors to the sortsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// LDR-FLIP perceptual difference (Andersson et al. 2020): a color pipeline
// (CSF filtering in YCxCz, Hunt-adjusted HyAB distance in L*a*b*) combined
// with an edge/point feature pipeline on the achromatic channel.
//
#pragma once

#include "sortsplat/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

namespace sortsplat {

struct FlipConfig {
    double pixels_per_degree = 67.0;
};

namespace flip {

inline constexpr double kQc = 0.7;
inline constexpr double kQf = 0.5;
inline constexpr double kPc = 0.4;
inline constexpr double kPt = 0.95;
inline constexpr double kW  = 0.082;

using Planes = std::array<std::vector<double>, 3>;

inline double
srgb_to_linear(double v) {
    return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

inline Vec3
linear_rgb_to_xyz(const Vec3 &c) {
    return Vec3(0.4124564 * c[0] + 0.3575761 * c[1] + 0.1804375 * c[2],
                0.2126729 * c[0] + 0.7151522 * c[1] + 0.0721750 * c[2],
                0.0193339 * c[0] + 0.1191920 * c[1] + 0.9503041 * c[2]);
}

inline Vec3
xyz_to_linear_rgb(const Vec3 &c) {
    return Vec3(3.2404542 * c[0] - 1.5371385 * c[1] - 0.4985314 * c[2],
                -0.9692660 * c[0] + 1.8760108 * c[1] + 0.0415560 * c[2],
                0.0556434 * c[0] - 0.2040259 * c[1] + 1.0572252 * c[2]);
}

inline Vec3
reference_white() {
    return linear_rgb_to_xyz(Vec3::Ones());
}

inline Vec3
xyz_to_ycxcz(const Vec3 &xyz) {
    const Vec3 n = xyz.cwiseQuotient(reference_white());
    return Vec3(116.0 * n[1] - 16.0, 500.0 * (n[0] - n[1]), 200.0 * (n[1] - n[2]));
}

inline Vec3
ycxcz_to_xyz(const Vec3 &c) {
    const double y = (c[0] + 16.0) / 116.0;
    return Vec3(c[1] / 500.0 + y, y, y - c[2] / 200.0).cwiseProduct(reference_white());
}

inline Vec3
xyz_to_lab(const Vec3 &xyz) {
    constexpr double delta = 6.0 / 29.0;
    auto f                 = [](double t) {
        return t > delta * delta * delta ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
    };
    const Vec3 n = xyz.cwiseQuotient(reference_white());
    const double fx = f(n[0]), fy = f(n[1]), fz = f(n[2]);
    return Vec3(116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz));
}

inline Vec3
hunt(const Vec3 &lab) {
    return Vec3(lab[0], 0.01 * lab[0] * lab[1], 0.01 * lab[0] * lab[2]);
}

inline double
hyab(const Vec3 &a, const Vec3 &b) {
    const double da = a[1] - b[1], db = a[2] - b[2];
    return std::abs(a[0] - b[0]) + std::sqrt(da * da + db * db);
}

inline double
linear_rgb_to_hunt_lab_distance(const Vec3 &a, const Vec3 &b) {
    return hyab(hunt(xyz_to_lab(linear_rgb_to_xyz(a))), hunt(xyz_to_lab(linear_rgb_to_xyz(b))));
}

// symmetric boundary: -1 -> 0, n -> n - 1
inline int
reflect(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
}

/// 2D convolution with a separable kernel kx(x) ky(y).
inline std::vector<double>
convolve_separable(const std::vector<double> &src, int w, int h, const std::vector<double> &kx,
                   const std::vector<double> &ky) {
    const int rx = int(kx.size()) / 2, ry = int(ky.size()) / 2;
    std::vector<double> tmp(src.size()), out(src.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int k = -rx; k <= rx; ++k) s += kx[k + rx] * src[std::size_t(y) * w + reflect(x - k, w)];
            tmp[std::size_t(y) * w + x] = s;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int k = -ry; k <= ry; ++k) s += ky[k + ry] * tmp[std::size_t(reflect(y - k, h)) * w + x];
            out[std::size_t(y) * w + x] = s;
        }
    return out;
}

/// Contrast sensitivity filter of one opponent channel as a sum of
/// separable Gaussian terms {weight, 1D profile}, normalized to unit sum.
struct CsfFilter {
    int radius = 0;
    std::vector<std::pair<double, std::vector<double>>> terms;
};

inline std::array<CsfFilter, 3>
csf_filters(double ppd) {
    struct Params {
        double a1, b1, a2, b2;
    };
    const Params params[3] = {{1.0, 0.0047, 0.0, 1e-5}, {1.0, 0.0053, 0.0, 1e-5}, {34.1, 0.04, 13.5, 0.025}};
    const double maxB = 0.04;
    const int r       = int(std::ceil(3.0 * std::sqrt(maxB / (2.0 * std::numbers::pi * std::numbers::pi)) * ppd));
    const double dx   = 1.0 / ppd;
    const double pi2  = std::numbers::pi * std::numbers::pi;

    std::array<CsfFilter, 3> filters;
    for (int c = 0; c < 3; ++c) {
        CsfFilter &f = filters[c];
        f.radius     = r;
        double total = 0.0;
        for (auto [a, b] : {std::pair{params[c].a1, params[c].b1}, std::pair{params[c].a2, params[c].b2}}) {
            if (a == 0.0) continue;
            std::vector<double> profile(2 * r + 1);
            double s = 0.0;
            for (int i = -r; i <= r; ++i) {
                profile[i + r] = std::exp(-pi2 * (i * dx) * (i * dx) / b);
                s += profile[i + r];
            }
            const double weight = a * std::sqrt(std::numbers::pi / b);
            total += weight * s * s;
            f.terms.emplace_back(weight, std::move(profile));
        }
        for (auto &t : f.terms) t.first /= total;
    }
    return filters;
}

struct FeatureFilters {
    int radius = 0;
    std::vector<double> gauss_profile; // g(t)
    std::vector<double> edge_profile;  // -t g(t), scaled so positive weights sum to one
    std::vector<double> point_profile; // (t^2/sd^2 - 1) g(t), positive and negative lobes scaled separately
};

// Both kernels factor as profile(x) * g(y). The sign of the point kernel
// depends on x alone, so normalizing its lobes keeps it separable.
inline FeatureFilters
feature_filters(double ppd) {
    const double sd = 0.5 * kW * ppd;
    const int r     = int(std::ceil(3.0 * sd));
    const int size  = 2 * r + 1;
    FeatureFilters f;
    f.radius = r;
    f.gauss_profile.resize(size);
    f.edge_profile.resize(size);
    f.point_profile.resize(size);
    double gsum = 0.0;
    for (int i = -r; i <= r; ++i) {
        const double g         = std::exp(-double(i * i) / (2.0 * sd * sd));
        f.gauss_profile[i + r] = g;
        f.edge_profile[i + r]  = -i * g;
        f.point_profile[i + r] = (double(i * i) / (sd * sd) - 1.0) * g;
        gsum += g;
    }
    double edgePos = 0.0, pointPos = 0.0, pointNeg = 0.0;
    for (int i = 0; i < size; ++i) {
        edgePos += std::max(0.0, f.edge_profile[i]) * gsum;
        (f.point_profile[i] > 0 ? pointPos : pointNeg) += f.point_profile[i] * gsum;
    }
    for (auto &v : f.edge_profile) v /= edgePos;
    for (auto &v : f.point_profile) v = v > 0 ? v / pointPos : v / -pointNeg;
    return f;
}

struct Features {
    std::vector<double> edges;
    std::vector<double> points;
};

inline Features
detect_features(const std::vector<double> &achromatic, int w, int h, const FeatureFilters &f) {
    const auto ex = convolve_separable(achromatic, w, h, f.edge_profile, f.gauss_profile);
    const auto ey = convolve_separable(achromatic, w, h, f.gauss_profile, f.edge_profile);
    const auto px = convolve_separable(achromatic, w, h, f.point_profile, f.gauss_profile);
    const auto py = convolve_separable(achromatic, w, h, f.gauss_profile, f.point_profile);
    Features out;
    out.edges.resize(achromatic.size());
    out.points.resize(achromatic.size());
    for (std::size_t i = 0; i < achromatic.size(); ++i) {
        out.edges[i]  = std::hypot(ex[i], ey[i]);
        out.points[i] = std::hypot(px[i], py[i]);
    }
    return out;
}

/// YCxCz planes of an sRGB-encoded image (values clamped to [0, 1]).
inline Planes
to_ycxcz(const RgbImage &img) {
    const std::size_t n = std::size_t(img.width()) * img.height();
    Planes p;
    for (auto &c : p) c.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        Vec3 rgb;
        for (int c = 0; c < 3; ++c) rgb[c] = srgb_to_linear(std::clamp(img.data()[3 * i + c], 0.0, 1.0));
        const Vec3 y = xyz_to_ycxcz(linear_rgb_to_xyz(rgb));
        for (int c = 0; c < 3; ++c) p[c][i] = y[c];
    }
    return p;
}

/// CSF-filtered, Hunt-adjusted L*a*b* of one image.
inline std::vector<Vec3>
filtered_hunt_lab(const Planes &ycxcz, int w, int h, const std::array<CsfFilter, 3> &csf) {
    Planes filtered;
    for (int c = 0; c < 3; ++c) {
        filtered[c].assign(ycxcz[c].size(), 0.0);
        for (const auto &[weight, profile] : csf[c].terms) {
            const auto part = convolve_separable(ycxcz[c], w, h, profile, profile);
            for (std::size_t i = 0; i < part.size(); ++i) filtered[c][i] += weight * part[i];
        }
    }
    std::vector<Vec3> out(ycxcz[0].size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        Vec3 rgb = xyz_to_linear_rgb(ycxcz_to_xyz(Vec3(filtered[0][i], filtered[1][i], filtered[2][i])));
        rgb      = rgb.cwiseMax(0.0).cwiseMin(1.0);
        out[i]   = hunt(xyz_to_lab(linear_rgb_to_xyz(rgb)));
    }
    return out;
}

} // namespace flip

/// Per-pixel FLIP error in [0, 1]; symmetric in its arguments.
inline ScalarMap
flip_error_map(const RgbImage &a, const RgbImage &b, const FlipConfig &cfg = {}) {
    using namespace flip;
    if (!a.same_size(b)) throw UsageError("flip_error_map: image sizes differ");
    const int w = a.width(), h = a.height();
    ScalarMap out(w, h);
    if (a.empty()) return out;

    const auto csf  = csf_filters(cfg.pixels_per_degree);
    const auto feat = feature_filters(cfg.pixels_per_degree);
    const Planes ya = to_ycxcz(a), yb = to_ycxcz(b);

    const auto labA = filtered_hunt_lab(ya, w, h, csf);
    const auto labB = filtered_hunt_lab(yb, w, h, csf);
    const double cmax = std::pow(linear_rgb_to_hunt_lab_distance(Vec3(0, 1, 0), Vec3(0, 0, 1)), kQc);
    const double pccmax = kPc * cmax;

    std::vector<double> achroA(ya[0].size()), achroB(yb[0].size());
    for (std::size_t i = 0; i < achroA.size(); ++i) {
        achroA[i] = (ya[0][i] + 16.0) / 116.0;
        achroB[i] = (yb[0][i] + 16.0) / 116.0;
    }
    const Features fa = detect_features(achroA, w, h, feat);
    const Features fb = detect_features(achroB, w, h, feat);

    for (std::size_t i = 0; i < labA.size(); ++i) {
        const double powered = std::pow(hyab(labA[i], labB[i]), kQc);
        const double deltaC  = powered < pccmax ? (kPt / pccmax) * powered
                                                : kPt + ((powered - pccmax) / (cmax - pccmax)) * (1.0 - kPt);
        const double feature = std::max(std::abs(fa.edges[i] - fb.edges[i]), std::abs(fa.points[i] - fb.points[i]));
        const double deltaF  = std::pow(feature / std::numbers::sqrt2, kQf);
        out.data()[i]        = std::pow(deltaC, 1.0 - deltaF);
    }
    return out;
}

inline double
mean_flip(const RgbImage &a, const RgbImage &b, const FlipConfig &cfg = {}) {
    const ScalarMap m = flip_error_map(a, b, cfg);
    double s          = 0.0;
    for (double v : m.data()) s += v;
    return m.data().empty() ? 0.0 : s / double(m.data().size());
}

} // namespace sortsplat
