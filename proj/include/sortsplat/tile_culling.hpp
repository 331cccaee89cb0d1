// Copyright Contributors to the sortsplat Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include "sortsplat/core.hpp"
#include "sortsplat/gaussian_math.hpp"

#include <algorithm>
#include <cmath>

namespace sortsplat {

/// Continuous axis-aligned pixel rectangle; a 16x16 tile at (tx, ty) spans
/// [16 tx, 16 tx + 16] in x.
struct TileRect {
    double x_min = 0.0;
    double x_max = 0.0;
    double y_min = 0.0;
    double y_max = 0.0;

    static TileRect
    at(int px, int py, int size) {
        return {double(px), double(px + size), double(py), double(py + size)};
    }

    [[nodiscard]] bool
    contains(const Vec2 &p) const {
        return p.x() >= x_min && p.x() <= x_max && p.y() >= y_min && p.y() <= y_max;
    }
};

/// Half-open range of tile indices.
struct TileRange {
    int x0 = 0, x1 = 0, y0 = 0, y1 = 0;

    [[nodiscard]] int
    count() const {
        return std::max(0, x1 - x0) * std::max(0, y1 - y0);
    }
    [[nodiscard]] bool
    contains(int tx, int ty) const {
        return tx >= x0 && tx < x1 && ty >= y0 && ty < y1;
    }
};

struct TileGrid {
    int tiles_x = 0;
    int tiles_y = 0;
    int tile_size = kTileSize;

    static TileGrid
    for_image(int width, int height, int tileSize = kTileSize) {
        return {(width + tileSize - 1) / tileSize, (height + tileSize - 1) / tileSize, tileSize};
    }
    [[nodiscard]] int
    count() const {
        return tiles_x * tiles_y;
    }
};

/// Point of the rectangle where the 2D Gaussian (conic, mean) is largest.
/// Outside the rectangle the maximum lies on one of the two edges meeting at
/// the corner nearest the mean; each edge gets a clamped line search.
inline Vec2
max_point_in_tile(const SymMat2 &conic, const Vec2 &mean, const TileRect &tile) {
    if (tile.contains(mean)) return mean;

    const bool left   = std::abs(mean.x() - tile.x_min) <= std::abs(mean.x() - tile.x_max);
    const bool top    = std::abs(mean.y() - tile.y_min) <= std::abs(mean.y() - tile.y_max);
    const Vec2 corner(left ? tile.x_min : tile.x_max, top ? tile.y_min : tile.y_max);
    const Vec2 dx((left ? tile.x_max : tile.x_min) - corner.x(), 0.0);
    const Vec2 dy(0.0, (top ? tile.y_max : tile.y_min) - corner.y());
    const Vec2 toMean = mean - corner;

    double tx = 0.0, ty = 0.0;
    if (mean.x() < tile.x_min || mean.x() > tile.x_max) {
        const Vec2 qd = conic * dy;
        ty            = std::clamp(qd.dot(toMean) / qd.dot(dy), 0.0, 1.0);
    }
    if (mean.y() < tile.y_min || mean.y() > tile.y_max) {
        const Vec2 qd = conic * dx;
        tx            = std::clamp(qd.dot(toMean) / qd.dot(dx), 0.0, 1.0);
    }
    return corner + tx * dx + ty * dy;
}

/// Exact culling: does opacity * G2 reach epsilon anywhere inside the tile?
inline bool
tile_survives(const Splat2D &splat, const TileRect &tile, double epsilon = kOpacityEpsilon) {
    const Vec2 best = max_point_in_tile(splat.conic, splat.mean2d, tile);
    return splat.alpha_at(best) >= epsilon;
}

/// t_opt on the ray through the tile's maximizing point.
inline double
per_tile_depth(const Splat2D &splat, const Camera &cam, const TileRect &tile) {
    const Vec2 best = max_point_in_tile(splat.conic, splat.mean2d, tile);
    return t_opt(splat, ray_for_pixel(cam, best.x(), best.y()).direction);
}

/// Tiles overlapped by the bounding disc (mean2d, radius), clamped to the grid.
inline TileRange
coarse_tile_range(const Splat2D &splat, const TileGrid &grid) {
    const double ts = grid.tile_size;
    const double r  = splat.radius;
    int x0          = static_cast<int>(std::floor((splat.mean2d.x() - r) / ts));
    int y0          = static_cast<int>(std::floor((splat.mean2d.y() - r) / ts));
    int x1          = std::max(x0 + 1, static_cast<int>(std::ceil((splat.mean2d.x() + r) / ts)));
    int y1          = std::max(y0 + 1, static_cast<int>(std::ceil((splat.mean2d.y() + r) / ts)));
    x0              = std::clamp(x0, 0, grid.tiles_x);
    x1              = std::clamp(x1, 0, grid.tiles_x);
    y0              = std::clamp(y0, 0, grid.tiles_y);
    y1              = std::clamp(y1, 0, grid.tiles_y);
    return {x0, x1, y0, y1};
}

} // namespace sortsplat
