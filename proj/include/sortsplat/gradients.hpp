// Copyright Contributors to the sortsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Front-to-back backward pass. For blended element i of a pixel with
// accumulated foreground color C and final transmittance T_N:
//
//   trailing color         S_i = C - C_i          (C_i includes element i)
//   trailing transmittance T_N / T_i
//   dC/dc_i     = alpha_i T_i
//   dC/dalpha_i = c_i T_i - (S_i + T_N bg) / (1 - alpha_i)
//
// then chained through alpha = opacity * exp(power) with
// power = -0.5 (a dx^2 + 2 b dx dy + c dy^2), d = pixel - mean2d.
//
#pragma once

#include "sortsplat/core.hpp"
#include "sortsplat/rasterizer.hpp"

#include <cstdio>
#include <fstream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace sortsplat {

/// Gradients per projected splat (index into PreparedFrame::splats).
/// d_conic holds dL/da, dL/db, dL/dc for the conic [[a, b], [b, c]] with b
/// treated as a single shared parameter.
struct SplatGradients {
    std::vector<Vec3> d_color;
    std::vector<double> d_opacity;
    std::vector<Vec2> d_mean2d;
    std::vector<SymMat2> d_conic;

    SplatGradients() = default;
    explicit SplatGradients(std::size_t n)
        : d_color(n, Vec3::Zero()), d_opacity(n, 0.0), d_mean2d(n, Vec2::Zero()), d_conic(n) {}

    [[nodiscard]] std::size_t
    size() const {
        return d_opacity.size();
    }
};

struct LossResult {
    double loss = 0.0;
    RgbImage gradient;
};

/// Mean squared error over all H*W*3 samples and its gradient 2(r - t)/(3HW).
inline LossResult
loss_l2(const RgbImage &rendered, const RgbImage &target) {
    if (!rendered.same_size(target))
        throw UsageError("loss_l2: image sizes differ (" + std::to_string(rendered.width()) + "x" +
                         std::to_string(rendered.height()) + " vs " + std::to_string(target.width()) +
                         "x" + std::to_string(target.height()) + ")");
    LossResult r;
    r.gradient     = RgbImage(rendered.width(), rendered.height());
    const auto &a  = rendered.data();
    const auto &b  = target.data();
    auto &g        = r.gradient.data();
    const double n = double(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        r.loss += d * d;
        g[i] = 2.0 * d / n;
    }
    if (n > 0) r.loss /= n;
    return r;
}

namespace detail {

struct GradAccum {
    Vec3 color   = Vec3::Zero();
    double opacity = 0.0;
    Vec2 mean      = Vec2::Zero();
    SymMat2 conic;
};

/// Gradient contribution of one blend step. `foreground` is the pixel's
/// final accumulated color without background, `accum` the color up to and
/// including this element.
inline void
accumulate_step(const Splat2D &s, const Vec2 &pixel, double alpha, double transmittance,
                const Vec3 &foreground, const Vec3 &accum, double finalT, const Vec3 &background,
                const Vec3 &upstream, double alphaCap, GradAccum &g) {
    const Vec3 trailing = foreground - accum;
    double oneMinus     = 1.0 - alpha;
    if (oneMinus < 1e-6) oneMinus = 1.0 - alphaCap;

    g.color += upstream * (alpha * transmittance);
    const Vec3 dAlphaVec = s.color * transmittance - (trailing + finalT * background) / oneMinus;
    const double dAlpha  = upstream.dot(dAlphaVec);

    const Vec2 d       = pixel - s.mean2d;
    const double power = -0.5 * s.conic.quad(d);
    const double gauss = std::exp(power);
    const double raw   = s.opacity * gauss;
    if (raw > alphaCap) return; // clamped: alpha no longer depends on the splat

    g.opacity += dAlpha * gauss;
    const double dPower = dAlpha * raw;
    g.mean += dPower * Vec2(s.conic.a * d.x() + s.conic.b * d.y(), s.conic.b * d.x() + s.conic.c * d.y());
    g.conic.a += dPower * (-0.5 * d.x() * d.x());
    g.conic.b += dPower * (-d.x() * d.y());
    g.conic.c += dPower * (-0.5 * d.y() * d.y());
}

inline void
check_finite(const GradAccum &g, std::uint32_t splat, int x, int y) {
    const bool ok = g.color.allFinite() && std::isfinite(g.opacity) && g.mean.allFinite() &&
                    std::isfinite(g.conic.a) && std::isfinite(g.conic.b) && std::isfinite(g.conic.c);
    if (!ok)
        throw DataError("non-finite gradient for splat " + std::to_string(splat) + " at pixel (" +
                        std::to_string(x) + ", " + std::to_string(y) + ")");
}

struct BackwardSink {
    const PreparedFrame *frame = nullptr;
    const FrameOutput *forward = nullptr;
    const RgbImage *upstream   = nullptr;
    const RenderConfig *cfg    = nullptr;
    std::unordered_map<std::uint32_t, GradAccum> grads;
    // running color per local pixel of this tile
    std::vector<Vec3> accum = std::vector<Vec3>(kTileSize * kTileSize, Vec3::Zero());
    int x0 = 0, y0 = 0;

    void
    blend(int x, int y, const BlendEvent &e) {
        const Splat2D &s = frame->splats[e.splat];
        Vec3 &acc        = accum[(y - y0) * kTileSize + (x - x0)];
        acc += s.color * (e.alpha * e.transmittance);
        const double finalT = forward->transmittance.at(x, y);
        Vec3 fg, up;
        for (int c = 0; c < 3; ++c) {
            fg[c] = forward->color.at(x, y, c) - finalT * cfg->background[c];
            up[c] = upstream->at(x, y, c);
        }
        GradAccum step;
        accumulate_step(s, Vec2(x + 0.5, y + 0.5), e.alpha, e.transmittance, fg, acc, finalT,
                        cfg->background, up, cfg->alpha_cap, step);
        check_finite(step, s.source_index, x, y);
        GradAccum &g = grads[e.splat];
        g.color += step.color;
        g.opacity += step.opacity;
        g.mean += step.mean;
        g.conic.a += step.conic.a;
        g.conic.b += step.conic.b;
        g.conic.c += step.conic.c;
    }
    void
    nonfinite(int x, int y, std::uint32_t splat) {
        throw DataError("non-finite value in backward pass for splat " +
                        std::to_string(frame->splats[splat].source_index) + " at pixel (" + std::to_string(x) +
                        ", " + std::to_string(y) + ")");
    }
};

inline void
add_into(SplatGradients &out, std::uint32_t i, const GradAccum &g) {
    out.d_color[i] += g.color;
    out.d_opacity[i] += g.opacity;
    out.d_mean2d[i] += g.mean;
    out.d_conic[i].a += g.conic.a;
    out.d_conic[i].b += g.conic.b;
    out.d_conic[i].c += g.conic.c;
}

} // namespace detail

/// Backward pass over a prepared frame; `forward` must come from
/// render_prepared with the same frame, mode and config. Per-tile partial
/// sums are reduced in tile order, so results do not depend on the worker count.
inline SplatGradients
backward_render(const PreparedFrame &frame, const SortMode &mode, const RenderConfig &cfg,
                const FrameOutput &forward, const RgbImage &upstream) {
    if (upstream.width() != frame.cam.width || upstream.height() != frame.cam.height)
        throw UsageError("upstream gradient size does not match the camera");
    if (forward.color.width() != frame.cam.width || forward.color.height() != frame.cam.height)
        throw UsageError("forward output size does not match the camera");

    const int tiles = frame.grid.count();
    std::vector<std::unordered_map<std::uint32_t, detail::GradAccum>> perTile(tiles);
    const int ts = frame.grid.tile_size;
    traverse_frame(
        frame, mode, cfg,
        [&](int tile) {
            detail::BackwardSink sink;
            sink.frame    = &frame;
            sink.forward  = &forward;
            sink.upstream = &upstream;
            sink.cfg      = &cfg;
            sink.x0 = (tile % frame.grid.tiles_x) * ts;
            sink.y0 = (tile / frame.grid.tiles_x) * ts;
            return sink;
        },
        [&](int tile, auto &, auto &sink) { perTile[tile] = std::move(sink.grads); });

    SplatGradients out(frame.splats.size());
    for (int t = 0; t < tiles; ++t) {
        // fixed order within a tile: ascending splat index
        std::vector<std::uint32_t> keys;
        keys.reserve(perTile[t].size());
        for (const auto &kv : perTile[t]) keys.push_back(kv.first);
        std::sort(keys.begin(), keys.end());
        for (auto k : keys) detail::add_into(out, k, perTile[t][k]);
    }
    return out;
}

/// Forward plus backward for a scene.
inline SplatGradients
backward_render(const Scene &scene, const Camera &cam, const SortMode &mode, const RgbImage &upstream,
                const RenderConfig &cfg = {}) {
    const PreparedFrame frame = prepare_frame(scene, cam, mode, cfg);
    const FrameOutput fwd     = render_prepared(frame, mode, cfg);
    return backward_render(frame, mode, cfg, fwd, upstream);
}

/// Front-to-back gradients for explicitly given per-pixel blend orders
/// (row-major lists of records). Used to replay or permute a captured order.
inline SplatGradients
backward_from_records(const std::vector<Splat2D> &splats, int width, int height,
                      const std::vector<std::vector<BlendRecord>> &records, const RgbImage &upstream,
                      const RenderConfig &cfg = {}) {
    if (records.size() != std::size_t(width) * height) throw UsageError("record count does not match image");
    SplatGradients out(splats.size());
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const auto &list = records[std::size_t(y) * width + x];
            Vec3 fg          = Vec3::Zero();
            double finalT    = 1.0;
            for (const auto &r : list) {
                fg += splats[r.splat].color * (r.alpha * finalT);
                finalT *= 1.0 - r.alpha;
            }
            const Vec3 up(upstream.at(x, y, 0), upstream.at(x, y, 1), upstream.at(x, y, 2));
            Vec3 acc = Vec3::Zero();
            double T = 1.0;
            for (const auto &r : list) {
                const Splat2D &s = splats[r.splat];
                acc += s.color * (r.alpha * T);
                detail::GradAccum g;
                detail::accumulate_step(s, Vec2(x + 0.5, y + 0.5), r.alpha, T, fg, acc, finalT,
                                        cfg.background, up, cfg.alpha_cap, g);
                detail::check_finite(g, s.source_index, x, y);
                detail::add_into(out, r.splat, g);
                T *= 1.0 - r.alpha;
            }
        }
    }
    return out;
}

/// Flat little-endian dump: uint64 count, then per splat 9 float64 values
/// (d_color rgb, d_opacity, d_mean2d xy, d_conic a b c).
inline void
write_gradients(const SplatGradients &g, const std::string &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    const std::uint64_t n = g.size();
    out.write(reinterpret_cast<const char *>(&n), sizeof(n));
    for (std::size_t i = 0; i < n; ++i) {
        const double v[9] = {g.d_color[i].x(), g.d_color[i].y(), g.d_color[i].z(), g.d_opacity[i],
                             g.d_mean2d[i].x(), g.d_mean2d[i].y(), g.d_conic[i].a, g.d_conic[i].b,
                             g.d_conic[i].c};
        out.write(reinterpret_cast<const char *>(v), sizeof(v));
    }
}

} // namespace sortsplat
