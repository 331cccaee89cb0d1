// Copyright Contributors to the sortsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Blend-order error, flow-warped view consistency, depth error and PSNR.
//
#pragma once

#include "sortsplat/core.hpp"
#include "sortsplat/flip.hpp"
#include "sortsplat/gaussian_math.hpp"
#include "sortsplat/parallel.hpp"
#include "sortsplat/rasterizer.hpp"
#include "sortsplat/scene.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sortsplat {

// ---------------------------------------------------------------------------
// Sort error

struct SortErrorStats {
    double delta_max = 0.0;
    double delta_avg = 0.0;
    ScalarMap per_pixel;
};

/// Sum of t_i - t_{i+1} over consecutive blended pairs with t_i > t_{i+1}.
inline double
sort_error_pixel(std::span<const BlendRecord> records) {
    double d = 0.0;
    for (std::size_t i = 1; i < records.size(); ++i)
        if (records[i - 1].t > records[i].t) d += records[i - 1].t - records[i].t;
    return d;
}

inline SortErrorStats
sort_error(const FrameOutput &frame) {
    if (!frame.has_records()) throw UsageError("sort_error needs a frame rendered with blend-record capture");
    const int w = frame.color.width(), h = frame.color.height();
    SortErrorStats s;
    s.per_pixel = ScalarMap(w, h);
    double sum  = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double d    = sort_error_pixel(frame.records[std::size_t(y) * w + x]);
            s.per_pixel.at(x, y) = d;
            s.delta_max       = std::max(s.delta_max, d);
            sum += d;
        }
    s.delta_avg = w * h > 0 ? sum / (double(w) * h) : 0.0;
    return s;
}

// ---------------------------------------------------------------------------
// Warping and flow

struct WarpResult {
    RgbImage image;
    std::vector<std::uint8_t> valid; // row-major, 1 = usable
};

namespace detail {

// Bilinear sample at continuous pixel position (pixel centers at +0.5);
// nullopt outside the span of pixel centers.
template <typename Fetch>
std::optional<Vec3>
bilinear(int w, int h, double px, double py, Fetch &&fetch) {
    const double fx = px - 0.5, fy = py - 0.5;
    constexpr double slack = 1e-9;
    if (!(fx >= -slack && fy >= -slack && fx <= w - 1 + slack && fy <= h - 1 + slack)) return std::nullopt;
    const int x0 = std::clamp(int(std::floor(fx)), 0, std::max(0, w - 2));
    const int y0 = std::clamp(int(std::floor(fy)), 0, std::max(0, h - 2));
    const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    const double ax = std::clamp(fx - x0, 0.0, 1.0), ay = std::clamp(fy - y0, 0.0, 1.0);
    return (1 - ay) * ((1 - ax) * fetch(x0, y0) + ax * fetch(x1, y0)) +
           ay * ((1 - ax) * fetch(x0, y1) + ax * fetch(x1, y1));
}

} // namespace detail

/// Backward warp: out(x) = src(x + flow(x)), where `flow` lives on the
/// output grid. Samples outside the source or at invalid flow are masked.
inline WarpResult
warp_frame(const RgbImage &src, const FlowField &flow) {
    if (flow.width != src.width() || flow.height != src.height())
        throw UsageError("warp_frame: flow and frame sizes differ");
    const int w = src.width(), h = src.height();
    WarpResult r{RgbImage(w, h), std::vector<std::uint8_t>(std::size_t(w) * h, 0)};
    auto fetch = [&](int x, int y) { return Vec3(src.at(x, y, 0), src.at(x, y, 1), src.at(x, y, 2)); };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!flow.is_valid(x, y)) continue;
            const Vec2 f = flow.at(x, y);
            if (auto v = detail::bilinear(w, h, x + 0.5 + f.x(), y + 0.5 + f.y(), fetch)) {
                for (int c = 0; c < 3; ++c) r.image.at(x, y, c) = (*v)[c];
                r.valid[std::size_t(y) * w + x] = 1;
            }
        }
    return r;
}

struct OcclusionConfig {
    double relative = 0.01;
    double absolute = 0.5;
};

/// Forward-backward consistency on the grid of `flow`: a pixel is usable
/// when |f + b(x + f)|^2 <= rel (|f|^2 + |b(x + f)|^2) + abs.
inline std::vector<std::uint8_t>
occlusion_mask(const FlowField &flow, const FlowField &back, const OcclusionConfig &cfg = {}) {
    if (flow.width != back.width || flow.height != back.height)
        throw UsageError("occlusion_mask: flow sizes differ");
    const int w = flow.width, h = flow.height;
    std::vector<std::uint8_t> mask(std::size_t(w) * h, 0);
    auto fetch = [&](int x, int y) {
        if (!back.is_valid(x, y)) return Vec3(std::numeric_limits<double>::quiet_NaN(), 0, 0);
        const Vec2 b = back.at(x, y);
        return Vec3(b.x(), b.y(), 0.0);
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!flow.is_valid(x, y)) continue;
            const Vec2 f = flow.at(x, y);
            auto s       = detail::bilinear(w, h, x + 0.5 + f.x(), y + 0.5 + f.y(), fetch);
            if (!s || !s->allFinite()) continue;
            const Vec2 b(s->x(), s->y());
            const double lhs = (f + b).squaredNorm();
            mask[std::size_t(y) * w + x] = lhs <= cfg.relative * (f.squaredNorm() + b.squaredNorm()) + cfg.absolute;
        }
    return mask;
}

/// Flow from camera `from` to camera `to` on the grid of `from`, obtained by
/// unprojecting each pixel at depth zeta / (1 - T_N). Pixels with T_N > 0.5
/// have no surface and are invalid.
inline FlowField
analytic_flow(const ScalarMap &depth, const ScalarMap &transmittance, const Camera &from, const Camera &to) {
    const int w = from.width, h = from.height;
    if (depth.width() != w || depth.height() != h || transmittance.width() != w || transmittance.height() != h)
        throw UsageError("analytic_flow: depth size does not match the camera");
    FlowField flow(w, h);
    // an unchanged camera has exactly zero flow; skip the round trip
    const bool same = from == to;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double T = transmittance.at(x, y);
            if (T > 0.5) {
                flow.set_valid(x, y, false);
                continue;
            }
            if (same) continue;
            const Ray ray = ray_for_pixel(from, x + 0.5, y + 0.5);
            const Vec3 p  = ray.at(depth.at(x, y) / (1.0 - T));
            const auto q  = to.project(p);
            if (!q || !q->allFinite()) {
                flow.set_valid(x, y, false);
                continue;
            }
            flow.set(x, y, *q - Vec2(x + 0.5, y + 0.5));
        }
    return flow;
}

// ---------------------------------------------------------------------------
// View consistency

/// Flows between frames i and j = i + t: `forward` maps i -> j on the grid
/// of i, `backward` maps j -> i on the grid of j.
struct FlowPair {
    FlowField forward;
    FlowField backward;
};

/// flows(method, i, j) for the method's own frames.
using FlowProvider = std::function<FlowPair(std::size_t, int, int)>;

enum class ConsistencyMetric { Mse, Flip };

struct ConsistencyConfig {
    int border          = 20;
    bool subtract_minimum = true;
    OcclusionConfig occlusion;
    FlipConfig flip;
    int workers = 1;
};

struct ConsistencyReport {
    std::vector<int> offsets;
    std::vector<double> flip_t;
    std::vector<double> mse_t;
    int frames_used = 0;
};

/// Border crop in pixels: 20, reduced proportionally for images below 64 px.
inline int
border_crop(int width, int height, int border = 20) {
    const int side = std::min(width, height);
    if (side >= 64) return border;
    return border * side / 64;
}

inline ScalarMap
mse_error_map(const RgbImage &a, const RgbImage &b) {
    if (!a.same_size(b)) throw UsageError("mse_error_map: image sizes differ");
    ScalarMap m(a.width(), a.height());
    for (int y = 0; y < a.height(); ++y)
        for (int x = 0; x < a.width(); ++x) {
            double s = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double d = a.at(x, y, c) - b.at(x, y, c);
                s += d * d;
            }
            m.at(x, y) = s / 3.0;
        }
    return m;
}

/// Mean error between frame i + t and frame i warped onto it, averaged over
/// i. With several methods the occlusion masks are intersected and the
/// per-pixel minimum is taken jointly over all methods and frames, so the
/// subtraction is identical for every method. Returns one value per method.
inline std::vector<double>
view_consistency(const std::vector<std::vector<RgbImage>> &methods, const FlowProvider &flows, int t,
                 ConsistencyMetric metric, const ConsistencyConfig &cfg = {}) {
    if (t < 1) throw UsageError("consistency offset must be >= 1");
    if (methods.empty()) throw UsageError("view_consistency needs at least one frame sequence");
    const int n = int(methods[0].size());
    for (const auto &m : methods)
        if (int(m.size()) != n) throw UsageError("all methods must provide the same number of frames");
    if (n < t + 1)
        throw UsageError("view_consistency needs at least " + std::to_string(t + 1) + " frames, got " +
                         std::to_string(n));
    const int w = methods[0][0].width(), h = methods[0][0].height();
    const int crop  = border_crop(w, h, cfg.border);
    const int pairs = n - t;
    const std::size_t nm = methods.size();

    std::vector<ScalarMap> errors(pairs * nm);
    std::vector<std::vector<std::uint8_t>> masks(pairs);
    parallel_for(pairs, cfg.workers, [&](int i) {
        std::vector<std::uint8_t> mask(std::size_t(w) * h, 1);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (x < crop || y < crop || x >= w - crop || y >= h - crop) mask[std::size_t(y) * w + x] = 0;
        for (std::size_t m = 0; m < nm; ++m) {
            const FlowPair fp  = flows(m, i, i + t);
            const WarpResult r = warp_frame(methods[m][i], fp.backward);
            const auto occ     = occlusion_mask(fp.backward, fp.forward, cfg.occlusion);
            for (std::size_t k = 0; k < mask.size(); ++k) mask[k] &= r.valid[k] & occ[k];
            errors[i * nm + m] = metric == ConsistencyMetric::Flip
                                     ? flip_error_map(r.image, methods[m][i + t], cfg.flip)
                                     : mse_error_map(r.image, methods[m][i + t]);
        }
        masks[i] = std::move(mask);
    });

    std::vector<double> minimum(std::size_t(w) * h, std::numeric_limits<double>::infinity());
    if (cfg.subtract_minimum)
        for (int i = 0; i < pairs; ++i)
            for (std::size_t k = 0; k < minimum.size(); ++k)
                if (masks[i][k])
                    for (std::size_t m = 0; m < nm; ++m) minimum[k] = std::min(minimum[k], errors[i * nm + m].data()[k]);

    std::vector<double> result(nm, 0.0);
    for (std::size_t m = 0; m < nm; ++m) {
        double total = 0.0;
        for (int i = 0; i < pairs; ++i) {
            double sum = 0.0;
            std::size_t count = 0;
            for (std::size_t k = 0; k < minimum.size(); ++k) {
                if (!masks[i][k]) continue;
                sum += errors[i * nm + m].data()[k] - (cfg.subtract_minimum ? minimum[k] : 0.0);
                ++count;
            }
            total += count ? sum / double(count) : 0.0;
        }
        result[m] = total / pairs;
    }
    return result;
}

/// Single-method report over several offsets with both metrics.
inline ConsistencyReport
consistency_report(const std::vector<RgbImage> &frames, const FlowProvider &flows, const std::vector<int> &offsets,
                   const ConsistencyConfig &cfg = {}) {
    ConsistencyReport r;
    r.frames_used = int(frames.size());
    const std::vector<std::vector<RgbImage>> one{frames};
    for (int t : offsets) {
        r.offsets.push_back(t);
        r.flip_t.push_back(view_consistency(one, flows, t, ConsistencyMetric::Flip, cfg)[0]);
        r.mse_t.push_back(view_consistency(one, flows, t, ConsistencyMetric::Mse, cfg)[0]);
    }
    return r;
}

/// Flow provider built from per-frame rendered depth and transmittance.
struct DepthFlowSource {
    std::vector<Camera> cameras;
    std::vector<ScalarMap> depth;
    std::vector<ScalarMap> transmittance;

    [[nodiscard]] FlowPair
    pair(int i, int j) const {
        return {analytic_flow(depth[i], transmittance[i], cameras[i], cameras[j]),
                analytic_flow(depth[j], transmittance[j], cameras[j], cameras[i])};
    }
};

// ---------------------------------------------------------------------------
// Depth error

struct DepthErrorResult {
    std::string mode;
    std::optional<double> e_depth; // absent when no point survived
};

struct DepthErrorReport {
    std::vector<DepthErrorResult> modes;
    std::size_t evaluated = 0; // (point, camera) pairs used
    std::size_t excluded  = 0; // removed by the shared transmittance filter
    std::size_t outside   = 0; // projected outside the image or behind the camera
};

/// Mean |o + zeta d - p| over visible (point, camera) pairs, with d the ray
/// through the point's projection and zeta the rendered depth of the pixel
/// containing it. A pair is dropped for every mode when T_N > threshold in any mode.
inline DepthErrorReport
depth_error(const Scene &scene, const std::vector<Camera> &cams, const SparsePointSet &points,
            const std::vector<SortMode> &modes, RenderConfig cfg = {}, double transmittanceThreshold = 1e-2) {
    cfg.capture_depth = true;
    for (std::size_t i = 0; i < points.points.size(); ++i)
        for (int c : points.points[i].cameras)
            if (c < 0 || c >= int(cams.size()))
                throw DataError("point " + std::to_string(i) + " references unknown camera " + std::to_string(c));

    // render each used camera once per mode
    std::map<int, std::vector<FrameOutput>> renders;
    for (const auto &p : points.points)
        for (int c : p.cameras)
            if (!renders.count(c)) {
                auto &list = renders[c];
                for (const auto &m : modes) list.push_back(render(scene, cams[c], m, cfg));
            }

    DepthErrorReport report;
    std::vector<double> sums(modes.size(), 0.0);
    for (const auto &p : points.points) {
        for (int c : p.cameras) {
            const Camera &cam = cams[c];
            const auto uv     = cam.project(p.position);
            if (!uv || uv->x() < 0 || uv->y() < 0 || uv->x() >= cam.width || uv->y() >= cam.height) {
                ++report.outside;
                continue;
            }
            const int px = int(uv->x()), py = int(uv->y());
            const auto &list = renders[c];
            bool keep = true;
            for (const auto &f : list) keep = keep && !(f.transmittance.at(px, py) > transmittanceThreshold);
            if (!keep) {
                ++report.excluded;
                continue;
            }
            const Ray ray = ray_for_pixel(cam, uv->x(), uv->y());
            for (std::size_t m = 0; m < modes.size(); ++m)
                sums[m] += (ray.at(list[m].depth.at(px, py)) - p.position).norm();
            ++report.evaluated;
        }
    }
    for (std::size_t m = 0; m < modes.size(); ++m) {
        DepthErrorResult r{mode_name(modes[m]), std::nullopt};
        if (report.evaluated) r.e_depth = sums[m] / double(report.evaluated);
        report.modes.push_back(r);
    }
    return report;
}

// ---------------------------------------------------------------------------
// PSNR

inline double
mse(const RgbImage &a, const RgbImage &b) {
    if (!a.same_size(b)) throw UsageError("mse: image sizes differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        s += d * d;
    }
    return a.data().empty() ? 0.0 : s / double(a.data().size());
}

/// 10 log10(1 / MSE); +inf for identical images.
inline double
psnr(const RgbImage &a, const RgbImage &b) {
    const double e = mse(a, b);
    if (e == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / e);
}

inline double
max_abs_diff(const RgbImage &a, const RgbImage &b) {
    if (!a.same_size(b)) throw UsageError("max_abs_diff: image sizes differ");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

} // namespace sortsplat
