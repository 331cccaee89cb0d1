// Copyright Contributors to the sortsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Tile binning, key sorting and forward rendering under four blend-order
// strategies:
//
//   GlobalZ       one view-space depth per splat, shared by every ray
//   FullPerPixel  exact per-ray sort by t_opt
//   Window(k)     per-ray k-slot resorting buffer over the tile list
//   Hierarchical  4x4 tail queue -> 2x2 mid queues -> per-pixel head queues,
//                 with culling and depth re-evaluation at every level
//
// All per-pixel work goes through one traversal routine that reports blend
// events to a sink, so the forward and backward passes see exactly the same
// order.
//
#pragma once

#include "sortsplat/core.hpp"
#include "sortsplat/gaussian_math.hpp"
#include "sortsplat/parallel.hpp"
#include "sortsplat/radix_sort.hpp"
#include "sortsplat/scene.hpp"
#include "sortsplat/tile_culling.hpp"

#include <algorithm>
#include <bit>
#include <cassert>
#include <chrono>
#include <cstdio>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace sortsplat {

// ---------------------------------------------------------------------------
// Sort modes and configuration

struct GlobalZ {
    bool operator==(const GlobalZ &) const = default;
};
struct FullPerPixel {
    bool operator==(const FullPerPixel &) const = default;
};
struct Window {
    int k = 8;
    bool operator==(const Window &) const = default;
};
struct Hierarchical {
    int q_tail = 64;
    int q_mid  = 8;
    int q_head = 4;
    bool operator==(const Hierarchical &) const = default;
};

using SortMode = std::variant<GlobalZ, FullPerPixel, Window, Hierarchical>;

inline std::string
mode_name(const SortMode &mode) {
    struct Visitor {
        std::string operator()(const GlobalZ &) const { return "globalz"; }
        std::string operator()(const FullPerPixel &) const { return "full"; }
        std::string operator()(const Window &w) const { return "window:" + std::to_string(w.k); }
        std::string operator()(const Hierarchical &h) const {
            return "hier:" + std::to_string(h.q_tail) + "/" + std::to_string(h.q_mid) + "/" +
                   std::to_string(h.q_head);
        }
    };
    return std::visit(Visitor{}, mode);
}

inline bool
uses_per_ray_depth(const SortMode &mode) {
    return !std::holds_alternative<GlobalZ>(mode);
}

inline void
validate_mode(const SortMode &mode) {
    if (const auto *w = std::get_if<Window>(&mode); w && w->k < 1)
        throw UsageError("window size must be >= 1");
    if (const auto *h = std::get_if<Hierarchical>(&mode)) {
        if (h->q_tail < 64 || h->q_tail % 32 != 0)
            throw UsageError("tail queue size must be 32n+32 with n >= 1");
        if (h->q_mid < 8 || h->q_mid % 4 != 0)
            throw UsageError("mid queue size must be 4m+4 with m >= 1");
        if (h->q_head < 1) throw UsageError("head queue size must be >= 1");
    }
}

/// Parses "globalz", "full", "window:K", "hier" or "hier:T/M/H".
inline SortMode
parse_mode(std::string_view text) {
    const auto colon = text.find(':');
    const std::string head(text.substr(0, colon));
    const std::string args = colon == std::string_view::npos ? "" : std::string(text.substr(colon + 1));
    SortMode mode;
    if (head == "globalz" || head == "3dgs") {
        mode = GlobalZ{};
    } else if (head == "full") {
        mode = FullPerPixel{};
    } else if (head == "window") {
        Window w;
        if (!args.empty()) {
            try {
                w.k = std::stoi(args);
            } catch (const std::exception &) {
                throw UsageError("bad window size '" + args + "'");
            }
        }
        mode = w;
    } else if (head == "hier" || head == "hierarchical") {
        Hierarchical h;
        if (!args.empty()) {
            char extra = 0;
            if (std::sscanf(args.c_str(), "%d/%d/%d%c", &h.q_tail, &h.q_mid, &h.q_head, &extra) != 3)
                throw UsageError("bad queue sizes '" + args + "', expected T/M/H");
        }
        mode = h;
    } else {
        throw UsageError("unknown sort mode '" + std::string(text) + "'");
    }
    validate_mode(mode);
    return mode;
}

enum class TileCulling {
    Auto,   // exact culling for per-ray modes, bounding rectangle only for GlobalZ
    Always,
    Never,
};

enum class MidDepthPoint { MaxPoint, Center };

struct RenderConfig {
    ProjectionConfig projection;
    double epsilon       = kOpacityEpsilon;
    double termination   = 1e-4;
    double alpha_cap     = 0.99;
    Vec3 background      = Vec3::Zero();
    bool capture_depth   = false;
    bool capture_records = false;
    int workers          = 1;
    TileCulling tile_culling = TileCulling::Auto;
    MidDepthPoint mid_depth_point = MidDepthPoint::MaxPoint;
    int tail_batch = 32;
    int mid_batch  = 16;
    int head_batch = 4;

    [[nodiscard]] ProjectionConfig
    projection_config() const {
        ProjectionConfig p = projection;
        p.epsilon          = epsilon;
        return p;
    }

    [[nodiscard]] bool
    culls_tiles(const SortMode &mode) const {
        switch (tile_culling) {
        case TileCulling::Always: return true;
        case TileCulling::Never: return false;
        default: return uses_per_ray_depth(mode);
        }
    }
};

// ---------------------------------------------------------------------------
// Frame data

struct BinEntry {
    double depth_key = 0.0;
    std::uint32_t splat = 0;
    std::uint32_t global_rank = 0;
};

struct TileBin {
    int tile_id = 0;
    std::vector<BinEntry> entries;
};

struct BlendRecord {
    std::uint32_t splat = 0;
    double t     = 0.0;
    double alpha = 0.0;
};

struct FrameStats {
    int gaussians          = 0;
    int projected          = 0;
    int culled_near        = 0;
    int culled_guard_band  = 0;
    int culled_degenerate  = 0;
    std::size_t coarse_entries = 0; // tile/splat pairs inside bounding rectangles
    std::size_t bin_entries    = 0; // pairs that reached the sort
    std::size_t blend_events   = 0;
    int nonfinite_pixels       = 0;
    double preprocess_ms = 0.0;
    double duplicate_ms  = 0.0;
    double sort_ms       = 0.0;
    double render_ms     = 0.0;
};

struct PreparedFrame {
    Camera cam;
    TileGrid grid;
    std::vector<Splat2D> splats;
    std::vector<TileBin> bins; // one per tile, tile-major
    FrameStats stats;
};

struct FrameOutput {
    RgbImage color;
    ScalarMap transmittance;
    ScalarMap depth;                               // empty unless captured
    std::vector<std::vector<BlendRecord>> records; // per pixel, empty unless captured
    std::vector<int> nonfinite;                    // flat indices of flagged pixels
    FrameStats stats;

    [[nodiscard]] bool
    has_records() const {
        return !records.empty();
    }
};

namespace detail {
using Clock = std::chrono::steady_clock;
inline double
elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}
} // namespace detail

// ---------------------------------------------------------------------------
// Preprocess, duplication and sort

inline std::vector<Splat2D>
project_scene(const Scene &scene, const Camera &cam, const RenderConfig &cfg,
              FrameStats *stats = nullptr) {
    const ProjectionConfig pcfg = cfg.projection_config();
    std::vector<Projection> projected(scene.size());
    parallel_for(int(scene.size()), cfg.workers, [&](int i) {
        projected[i] = project_splat(scene[i], cam, pcfg, std::uint32_t(i));
    });

    std::vector<Splat2D> splats;
    splats.reserve(scene.size());
    FrameStats local;
    local.gaussians = int(scene.size());
    for (auto &p : projected) {
        switch (p.reason) {
        case CullReason::None: splats.push_back(*p.splat); break;
        case CullReason::Near: ++local.culled_near; break;
        case CullReason::OutsideGuardBand: ++local.culled_guard_band; break;
        case CullReason::Degenerate: ++local.culled_degenerate; break;
        }
    }
    local.projected = int(splats.size());
    if (stats) {
        stats->gaussians         = local.gaussians;
        stats->projected         = local.projected;
        stats->culled_near       = local.culled_near;
        stats->culled_guard_band = local.culled_guard_band;
        stats->culled_degenerate = local.culled_degenerate;
    }
    return splats;
}

/// Duplicates splats into the tiles they touch and sorts every tile list by
/// depth key with a single radix sort over (tile << 32 | depth bits) keys.
/// Ties keep the splat order, which is each entry's global rank.
inline std::vector<TileBin>
bin_and_sort(const std::vector<Splat2D> &splats, const Camera &cam, const SortMode &mode,
             const RenderConfig &cfg, FrameStats *stats = nullptr) {
    auto start           = detail::Clock::now();
    const TileGrid grid  = TileGrid::for_image(cam.width, cam.height);
    const bool cull      = cfg.culls_tiles(mode);
    const bool perTile   = uses_per_ray_depth(mode);

    // Per-splat work runs in parallel; concatenation happens in splat order.
    std::vector<std::vector<std::uint64_t>> perSplat(splats.size());
    std::vector<std::size_t> coarse(splats.size(), 0);
    parallel_for(int(splats.size()), cfg.workers, [&](int i) {
        const Splat2D &s    = splats[i];
        // Non-finite splats go last into every tile they may touch so the
        // traversal can flag the affected pixels.
        const bool finite   = s.finite();
        const bool bounded  = s.mean2d.allFinite() && std::isfinite(s.radius);
        const TileRange rng = bounded ? coarse_tile_range(s, grid) : TileRange{0, grid.tiles_x, 0, grid.tiles_y};
        coarse[i]           = std::size_t(rng.count());
        auto &out           = perSplat[i];
        for (int ty = rng.y0; ty < rng.y1; ++ty) {
            for (int tx = rng.x0; tx < rng.x1; ++tx) {
                const TileRect rect = TileRect::at(tx * grid.tile_size, ty * grid.tile_size, grid.tile_size);
                if (finite && cull && !tile_survives(s, rect, cfg.epsilon)) continue;
                const double depth = !finite  ? std::numeric_limits<double>::infinity()
                                     : perTile ? per_tile_depth(s, cam, rect)
                                               : s.global_depth;
                const std::uint64_t tile = std::uint64_t(ty) * grid.tiles_x + tx;
                out.push_back((tile << 32) | orderable_float_bits(static_cast<float>(depth)));
            }
        }
    });

    std::vector<std::uint64_t> keys;
    std::vector<std::uint32_t> values;
    std::size_t coarseTotal = 0;
    for (std::size_t i = 0; i < splats.size(); ++i) {
        coarseTotal += coarse[i];
        for (auto k : perSplat[i]) {
            keys.push_back(k);
            values.push_back(std::uint32_t(i));
        }
    }
    const double dupMs = detail::elapsed_ms(start);

    start = detail::Clock::now();
    const int tileBits = std::max(1, int(std::bit_width(unsigned(grid.count()))));
    radix_sort_pairs(keys, values, 32 + tileBits);

    std::vector<TileBin> bins(grid.count());
    for (int t = 0; t < grid.count(); ++t) bins[t].tile_id = t;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        const int tile = int(keys[i] >> 32);
        const float d  = float_from_orderable_bits(std::uint32_t(keys[i] & 0xffffffffu));
        bins[tile].entries.push_back({double(d), values[i], values[i]});
    }
    if (stats) {
        stats->coarse_entries = coarseTotal;
        stats->bin_entries    = keys.size();
        stats->duplicate_ms   = dupMs;
        stats->sort_ms        = detail::elapsed_ms(start);
    }
    return bins;
}

inline PreparedFrame
prepare_splats(std::vector<Splat2D> splats, const Camera &cam, const SortMode &mode,
               const RenderConfig &cfg) {
    PreparedFrame frame;
    frame.cam    = cam;
    frame.grid   = TileGrid::for_image(cam.width, cam.height);
    frame.splats = std::move(splats);
    frame.bins   = bin_and_sort(frame.splats, cam, mode, cfg, &frame.stats);
    return frame;
}

inline PreparedFrame
prepare_frame(const Scene &scene, const Camera &cam, const SortMode &mode, const RenderConfig &cfg) {
    if (cam.width <= 0 || cam.height <= 0) throw UsageError("camera has empty image size");
    validate_mode(mode);
    const auto start = detail::Clock::now();
    FrameStats stats;
    auto splats        = project_scene(scene, cam, cfg, &stats);
    stats.preprocess_ms = detail::elapsed_ms(start);
    PreparedFrame frame = prepare_splats(std::move(splats), cam, mode, cfg);
    frame.stats.gaussians         = stats.gaussians;
    frame.stats.projected         = stats.projected;
    frame.stats.culled_near       = stats.culled_near;
    frame.stats.culled_guard_band = stats.culled_guard_band;
    frame.stats.culled_degenerate = stats.culled_degenerate;
    frame.stats.preprocess_ms     = stats.preprocess_ms;
    return frame;
}

// ---------------------------------------------------------------------------
// Blending

struct Contribution {
    Vec3 color   = Vec3::Zero();
    double alpha = 0.0;
};

struct BlendResult {
    Vec3 color           = Vec3::Zero();
    double transmittance = 1.0;
};

/// Front-to-back compositing of already ordered contributions; stops once
/// transmittance drops below `termination`.
inline BlendResult
blend_pixel(std::span<const Contribution> ordered, double termination = 1e-4) {
    BlendResult r;
    for (const auto &c : ordered) {
        r.color += c.color * (c.alpha * r.transmittance);
        r.transmittance *= 1.0 - c.alpha;
        if (r.transmittance < termination) break;
    }
    return r;
}

/// One blend step as seen by a sink: the splat, its per-ray depth, its
/// alpha and the transmittance in front of it.
struct BlendEvent {
    std::uint32_t splat = 0;
    double t            = 0.0;
    double alpha        = 0.0;
    double transmittance = 1.0;
};

namespace detail {

struct Candidate {
    double t           = 0.0;
    std::uint32_t order = 0; // position in the tile bin
    std::uint32_t splat = 0;
    double alpha        = 0.0;

    bool
    operator<(const Candidate &o) const {
        return t < o.t || (t == o.t && order < o.order);
    }
};

struct QueueItem {
    double depth        = 0.0;
    std::uint32_t order = 0;
    std::uint32_t splat = 0;

    bool
    operator<(const QueueItem &o) const {
        return depth < o.depth || (depth == o.depth && order < o.order);
    }
};

inline void
merge_into(std::vector<QueueItem> &queue, std::vector<QueueItem> &incoming) {
    std::sort(incoming.begin(), incoming.end());
    std::vector<QueueItem> merged;
    merged.reserve(queue.size() + incoming.size());
    std::merge(queue.begin(), queue.end(), incoming.begin(), incoming.end(), std::back_inserter(merged));
    queue.swap(merged);
}

/// Per-tile traversal. `Sink` receives blend(x, y, BlendEvent) calls in blend
/// order and nonfinite(x, y, splat) for pixels that hit a non-finite value.
template <typename Sink> class TileTraversal {
  public:
    TileTraversal(const PreparedFrame &frame, int tileIndex, const RenderConfig &cfg, Sink &sink)
        : mFrame(frame), mBin(frame.bins[tileIndex]), mCfg(cfg), mSink(sink) {
        const int ts = frame.grid.tile_size;
        mX0          = (tileIndex % frame.grid.tiles_x) * ts;
        mY0          = (tileIndex / frame.grid.tiles_x) * ts;
        for (int ly = 0; ly < ts; ++ly) {
            for (int lx = 0; lx < ts; ++lx) {
                const int p = ly * ts + lx;
                const int x = mX0 + lx, y = mY0 + ly;
                mInside[p]  = x < frame.cam.width && y < frame.cam.height;
                mDone[p]    = !mInside[p];
                mT[p]       = 1.0;
                mCenter[p]  = Vec2(x + 0.5, y + 0.5);
                mDir[p]     = ray_for_pixel(frame.cam, mCenter[p].x(), mCenter[p].y()).direction;
            }
        }
        mBad.resize(mBin.entries.size());
        for (std::size_t i = 0; i < mBin.entries.size(); ++i)
            mBad[i] = !frame.splats[mBin.entries[i].splat].finite();
    }

    void
    run(const SortMode &mode) {
        std::visit([this](const auto &m) { this->run_mode(m); }, mode);
    }

    [[nodiscard]] double
    transmittance(int local) const {
        return mT[local];
    }

  private:
    static constexpr int kPixels = kTileSize * kTileSize;

    // Alpha of a splat at a local pixel, or nullopt below epsilon.
    std::optional<double>
    alpha(const Splat2D &s, int p) const {
        const double a = s.alpha_at(mCenter[p]);
        if (!(a >= mCfg.epsilon)) {
            if (std::isnan(a)) return std::numeric_limits<double>::quiet_NaN();
            return std::nullopt;
        }
        return std::min(mCfg.alpha_cap, a);
    }

    void
    flag(int p, std::uint32_t splat) {
        if (mFlagged[p] || !mInside[p]) return;
        mFlagged[p] = true;
        mSink.nonfinite(mX0 + p % kTileSize, mY0 + p / kTileSize, splat);
    }

    // Flags the pixels a non-finite splat may cover: inside its radius when
    // that is known, otherwise the whole tile. Returns true if the entry is bad.
    bool
    skip_bad(std::uint32_t order) {
        if (!mBad[order]) return false;
        const std::uint32_t splat = mBin.entries[order].splat;
        const Splat2D &s          = mFrame.splats[splat];
        const bool bounded        = s.mean2d.allFinite() && std::isfinite(s.radius);
        for (int p = 0; p < kPixels; ++p)
            if (!mDone[p] && (!bounded || (mCenter[p] - s.mean2d).norm() <= s.radius + 1.0)) flag(p, splat);
        return true;
    }

    void
    blend(int p, std::uint32_t splat, double t, double a) {
        if (mDone[p]) return;
        const int x = mX0 + p % kTileSize, y = mY0 + p / kTileSize;
        if (!std::isfinite(a) || !std::isfinite(t)) {
            flag(p, splat);
            return;
        }
        mSink.blend(x, y, BlendEvent{splat, t, a, mT[p]});
        mT[p] *= 1.0 - a;
        if (mT[p] < mCfg.termination) {
            mDone[p] = true;
            --mRemaining;
        }
    }

    bool
    tile_done() const {
        for (int p = 0; p < kPixels; ++p)
            if (!mDone[p]) return false;
        return true;
    }

    void
    count_remaining() {
        mRemaining = 0;
        for (int p = 0; p < kPixels; ++p) mRemaining += mDone[p] ? 0 : 1;
    }

    Candidate
    candidate(const BinEntry &e, std::uint32_t order, int p, double a) const {
        const Splat2D &s = mFrame.splats[e.splat];
        return Candidate{t_opt(s, mDir[p]), order, e.splat, a};
    }

    void
    run_mode(const GlobalZ &) {
        count_remaining();
        for (std::uint32_t i = 0; i < mBin.entries.size(); ++i) {
            if (mRemaining == 0) break;
            if (skip_bad(i)) continue;
            const auto &e    = mBin.entries[i];
            const Splat2D &s = mFrame.splats[e.splat];
            for (int p = 0; p < kPixels; ++p) {
                if (mDone[p]) continue;
                if (auto a = alpha(s, p)) blend(p, e.splat, t_opt(s, mDir[p]), *a);
            }
        }
    }

    bool
    flag_bad_entries() {
        bool any = false;
        for (std::uint32_t i = 0; i < mBin.entries.size(); ++i) any = skip_bad(i) || any;
        return any;
    }

    void
    run_mode(const FullPerPixel &) {
        count_remaining();
        const bool anyBad = flag_bad_entries();
        std::vector<Candidate> list;
        for (int p = 0; p < kPixels; ++p) {
            if (mDone[p]) continue;
            list.clear();
            for (std::uint32_t i = 0; i < mBin.entries.size(); ++i) {
                if (anyBad && mBad[i]) continue;
                const auto &e = mBin.entries[i];
                if (auto a = alpha(mFrame.splats[e.splat], p)) list.push_back(candidate(e, i, p, *a));
            }
            std::sort(list.begin(), list.end());
            for (const auto &c : list) {
                blend(p, c.splat, c.t, c.alpha);
                if (mDone[p]) break;
            }
        }
    }

    void
    run_mode(const Window &w) {
        count_remaining();
        const bool anyBad = flag_bad_entries();
        std::vector<Candidate> buffer;
        buffer.reserve(w.k + 1);
        for (int p = 0; p < kPixels; ++p) {
            if (mDone[p]) continue;
            buffer.clear();
            for (std::uint32_t i = 0; i < mBin.entries.size() && !mDone[p]; ++i) {
                if (anyBad && mBad[i]) continue;
                const auto &e = mBin.entries[i];
                auto a        = alpha(mFrame.splats[e.splat], p);
                if (!a) continue;
                const Candidate c = candidate(e, i, p, *a);
                buffer.insert(std::upper_bound(buffer.begin(), buffer.end(), c), c);
                if (int(buffer.size()) > w.k) {
                    blend(p, buffer.front().splat, buffer.front().t, buffer.front().alpha);
                    buffer.erase(buffer.begin());
                }
            }
            for (const auto &c : buffer) {
                if (mDone[p]) break;
                blend(p, c.splat, c.t, c.alpha);
            }
        }
    }

    void
    run_mode(const Hierarchical &h) {
        count_remaining();
        flag_bad_entries();
        for (int sy = 0; sy < kTileSize; sy += 4)
            for (int sx = 0; sx < kTileSize; sx += 4) run_subtile(h, sx, sy);
    }

    // Sequential emulation of one 4x4 sub-tile pipeline.
    void
    run_subtile(const Hierarchical &h, int sx, int sy) {
        auto pixel = [&](int lx, int ly) { return (sy + ly) * kTileSize + sx + lx; };
        auto subtileDone = [&] {
            for (int ly = 0; ly < 4; ++ly)
                for (int lx = 0; lx < 4; ++lx)
                    if (!mDone[pixel(lx, ly)]) return false;
            return true;
        };
        if (subtileDone()) return;

        const TileRect rect4 = TileRect::at(mX0 + sx, mY0 + sy, 4);
        TileRect rect2[4];
        for (int q = 0; q < 4; ++q) rect2[q] = TileRect::at(mX0 + sx + (q % 2) * 2, mY0 + sy + (q / 2) * 2, 2);

        std::vector<QueueItem> tail;
        tail.reserve(h.q_tail);
        std::vector<QueueItem> mids[4];
        std::vector<Candidate> heads[16];
        std::vector<QueueItem> batch;

        auto headIndex = [](int q, int k) { return ((q / 2) * 2 + k / 2) * 4 + (q % 2) * 2 + k % 2; };

        auto insertHead = [&](int q, const QueueItem &item) {
            const Splat2D &s = mFrame.splats[item.splat];
            for (int k = 0; k < 4; ++k) {
                const int hi = headIndex(q, k);
                const int p  = pixel(hi % 4, hi / 4);
                if (mDone[p]) continue;
                auto a = alpha(s, p);
                if (!a) continue;
                const Candidate c{t_opt(s, mDir[p]), item.order, item.splat, *a};
                auto &head = heads[hi];
                head.insert(std::upper_bound(head.begin(), head.end(), c), c);
                if (int(head.size()) > h.q_head) {
                    blend(p, head.front().splat, head.front().t, head.front().alpha);
                    head.erase(head.begin());
                }
                assert(int(head.size()) <= h.q_head);
            }
        };

        auto popMid = [&](int q, int count) {
            auto &mid = mids[q];
            count     = std::min<int>(count, int(mid.size()));
            for (int i = 0; i < count; ++i) insertHead(q, mid[i]);
            mid.erase(mid.begin(), mid.begin() + count);
        };

        auto pushToMids = [&](int count) {
            count = std::min<int>(count, int(tail.size()));
            for (int g = 0; g < count; g += mCfg.head_batch) {
                const int n = std::min(mCfg.head_batch, count - g);
                for (int q = 0; q < 4; ++q) {
                    batch.clear();
                    for (int i = 0; i < n; ++i) {
                        const QueueItem &it = tail[g + i];
                        const Splat2D &s    = mFrame.splats[it.splat];
                        if (!tile_survives(s, rect2[q], mCfg.epsilon)) continue;
                        batch.push_back({mid_depth(s, rect2[q]), it.order, it.splat});
                    }
                    if (batch.empty()) continue;
                    while (int(mids[q].size() + batch.size()) > h.q_mid) popMid(q, mCfg.head_batch);
                    merge_into(mids[q], batch);
                    assert(int(mids[q].size()) <= h.q_mid);
                }
            }
            tail.erase(tail.begin(), tail.begin() + count);
        };

        std::size_t pos = 0;
        const std::size_t total = mBin.entries.size();
        while (pos < total && !subtileDone()) {
            batch.clear();
            const std::size_t n = std::min<std::size_t>(mCfg.tail_batch, total - pos);
            for (std::size_t i = 0; i < n; ++i) {
                if (mBad[pos + i]) continue;
                const auto &e    = mBin.entries[pos + i];
                const Splat2D &s = mFrame.splats[e.splat];
                const double d   = tile_survives(s, rect4, mCfg.epsilon)
                                       ? per_tile_depth(s, mFrame.cam, rect4)
                                       : std::numeric_limits<double>::infinity();
                batch.push_back({d, std::uint32_t(pos + i), e.splat});
            }
            pos += n;
            merge_into(tail, batch);
            while (!tail.empty() && std::isinf(tail.back().depth)) tail.pop_back();
            assert(int(tail.size()) <= h.q_tail);

            while (int(tail.size()) > h.q_tail - mCfg.tail_batch && !subtileDone())
                pushToMids(mCfg.mid_batch);
        }

        // drain
        while (!tail.empty() && !subtileDone()) pushToMids(mCfg.mid_batch);
        for (int q = 0; q < 4; ++q)
            while (!mids[q].empty()) popMid(q, mCfg.head_batch);
        for (int hi = 0; hi < 16; ++hi) {
            const int p = pixel(hi % 4, hi / 4);
            for (const auto &c : heads[hi]) {
                if (mDone[p]) break;
                blend(p, c.splat, c.t, c.alpha);
            }
        }
    }

    double
    mid_depth(const Splat2D &s, const TileRect &rect) const {
        if (mCfg.mid_depth_point == MidDepthPoint::Center) {
            const Vec2 c(0.5 * (rect.x_min + rect.x_max), 0.5 * (rect.y_min + rect.y_max));
            return t_opt(s, ray_for_pixel(mFrame.cam, c.x(), c.y()).direction);
        }
        return per_tile_depth(s, mFrame.cam, rect);
    }

    const PreparedFrame &mFrame;
    const TileBin &mBin;
    const RenderConfig &mCfg;
    Sink &mSink;
    int mX0 = 0, mY0 = 0;
    int mRemaining = 0;
    std::array<bool, kPixels> mInside{};
    std::array<bool, kPixels> mDone{};
    std::array<bool, kPixels> mFlagged{};
    std::array<double, kPixels> mT{};
    std::array<Vec2, kPixels> mCenter;
    std::array<Vec3, kPixels> mDir;
    std::vector<bool> mBad; // per bin entry: splat has non-finite data
};

} // namespace detail

/// Runs the mode's traversal over every tile. `makeSink(tileIndex)` returns
/// the sink for one tile; `finish(tileIndex, traversal, sink)` runs after it.
template <typename MakeSink, typename Finish>
void
traverse_frame(const PreparedFrame &frame, const SortMode &mode, const RenderConfig &cfg,
               MakeSink &&makeSink, Finish &&finish) {
    parallel_for(frame.grid.count(), cfg.workers, [&](int tile) {
        auto sink = makeSink(tile);
        detail::TileTraversal<decltype(sink)> traversal(frame, tile, cfg, sink);
        traversal.run(mode);
        finish(tile, traversal, sink);
    });
}

namespace detail {

// Accumulates color, depth and records into a shared frame; each tile
// writes only its own pixels.
struct ForwardSink {
    FrameOutput *out;
    const PreparedFrame *frame;
    bool globalDepth;
    std::size_t events = 0;
    std::vector<int> flagged;

    void
    blend(int x, int y, const BlendEvent &e) {
        const Splat2D &s = frame->splats[e.splat];
        const double w   = e.alpha * e.transmittance;
        for (int c = 0; c < 3; ++c) out->color.at(x, y, c) += s.color[c] * w;
        if (!out->depth.empty()) {
            const double phi = globalDepth ? (s.mean3d - frame->cam.position).norm() : e.t;
            out->depth.at(x, y) += phi * w;
        }
        if (out->has_records())
            out->records[std::size_t(y) * out->color.width() + x].push_back({e.splat, e.t, e.alpha});
        ++events;
    }
    void
    nonfinite(int x, int y, std::uint32_t) {
        flagged.push_back(y * out->color.width() + x);
    }
};

} // namespace detail

inline FrameOutput
render_prepared(const PreparedFrame &frame, const SortMode &mode, const RenderConfig &cfg) {
    validate_mode(mode);
    const auto start = detail::Clock::now();
    const int w = frame.cam.width, h = frame.cam.height;
    FrameOutput out;
    out.stats         = frame.stats;
    out.color         = RgbImage(w, h);
    out.transmittance = ScalarMap(w, h, 1.0);
    if (cfg.capture_depth) out.depth = ScalarMap(w, h);
    if (cfg.capture_records) out.records.resize(std::size_t(w) * h);

    const bool globalDepth = std::holds_alternative<GlobalZ>(mode);
    const int tiles        = frame.grid.count();
    const int ts           = frame.grid.tile_size;
    std::vector<std::size_t> events(tiles, 0);
    std::vector<std::vector<int>> flagged(tiles);

    traverse_frame(
        frame, mode, cfg, [&](int) { return detail::ForwardSink{&out, &frame, globalDepth, 0, {}}; },
        [&](int tile, auto &traversal, auto &sink) {
            const int x0 = (tile % frame.grid.tiles_x) * ts, y0 = (tile / frame.grid.tiles_x) * ts;
            for (int ly = 0; ly < ts && y0 + ly < h; ++ly)
                for (int lx = 0; lx < ts && x0 + lx < w; ++lx)
                    out.transmittance.at(x0 + lx, y0 + ly) = traversal.transmittance(ly * ts + lx);
            events[tile]  = sink.events;
            flagged[tile] = std::move(sink.flagged);
        });

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                out.color.at(x, y, c) += out.transmittance.at(x, y) * cfg.background[c];
    for (int t = 0; t < tiles; ++t) {
        out.stats.blend_events += events[t];
        out.nonfinite.insert(out.nonfinite.end(), flagged[t].begin(), flagged[t].end());
    }
    out.stats.nonfinite_pixels = int(out.nonfinite.size());
    out.stats.render_ms        = detail::elapsed_ms(start);
    return out;
}

struct PixelResult {
    Vec3 color           = Vec3::Zero(); // without background
    double transmittance = 1.0;
};

/// Renders a single 16x16 tile of a prepared frame; results are row-major
/// over the tile, including pixels that fall outside the image.
inline std::vector<PixelResult>
render_tile(const PreparedFrame &frame, int tileIndex, const SortMode &mode, const RenderConfig &cfg) {
    validate_mode(mode);
    if (tileIndex < 0 || tileIndex >= frame.grid.count()) throw UsageError("tile index out of range");
    const int ts = frame.grid.tile_size;
    const int x0 = (tileIndex % frame.grid.tiles_x) * ts, y0 = (tileIndex / frame.grid.tiles_x) * ts;
    std::vector<PixelResult> out(std::size_t(ts) * ts);
    struct Sink {
        std::vector<PixelResult> *out;
        const PreparedFrame *frame;
        int x0, y0, ts;
        void
        blend(int x, int y, const BlendEvent &e) {
            (*out)[std::size_t(y - y0) * ts + (x - x0)].color +=
                frame->splats[e.splat].color * (e.alpha * e.transmittance);
        }
        void
        nonfinite(int, int, std::uint32_t) {}
    } sink{&out, &frame, x0, y0, ts};
    detail::TileTraversal<Sink> traversal(frame, tileIndex, cfg, sink);
    traversal.run(mode);
    for (int p = 0; p < ts * ts; ++p) out[p].transmittance = traversal.transmittance(p);
    return out;
}

/// The three-level queue pipeline on one tile.
inline std::vector<PixelResult>
hierarchical_tile_render(const PreparedFrame &frame, int tileIndex, const Hierarchical &queues,
                         const RenderConfig &cfg = {}) {
    return render_tile(frame, tileIndex, queues, cfg);
}

inline FrameOutput
render(const Scene &scene, const Camera &cam, const SortMode &mode, const RenderConfig &cfg = {}) {
    const PreparedFrame frame = prepare_frame(scene, cam, mode, cfg);
    return render_prepared(frame, mode, cfg);
}

/// Renders pre-projected splats; used when perturbing splat parameters directly.
inline FrameOutput
render_splats(std::vector<Splat2D> splats, const Camera &cam, const SortMode &mode,
              const RenderConfig &cfg = {}) {
    validate_mode(mode);
    const PreparedFrame frame = prepare_splats(std::move(splats), cam, mode, cfg);
    return render_prepared(frame, mode, cfg);
}

struct DepthOutput {
    ScalarMap depth;
    ScalarMap transmittance;
};

/// Expected depth sum(phi_i w_i) with phi = t_opt for per-ray modes and the
/// mean distance for GlobalZ; not normalized by 1 - T_N.
inline DepthOutput
render_depth(const Scene &scene, const Camera &cam, const SortMode &mode, RenderConfig cfg = {}) {
    cfg.capture_depth = true;
    FrameOutput out   = render(scene, cam, mode, cfg);
    return {std::move(out.depth), std::move(out.transmittance)};
}

// ---------------------------------------------------------------------------
// Trajectories

/// Inserts `steps` interpolated cameras between consecutive keyframes
/// (slerp on rotation, lerp on position and intrinsics). Keyframes are kept
/// exactly.
inline std::vector<Camera>
interpolate_cameras(const std::vector<Camera> &keys, int steps) {
    if (steps < 0) throw UsageError("interpolation step count must be >= 0");
    std::vector<Camera> out;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        out.push_back(keys[i]);
        if (i + 1 == keys.size()) break;
        const Camera &a = keys[i], &b = keys[i + 1];
        if (a.width != b.width || a.height != b.height)
            throw UsageError("keyframes " + std::to_string(i) + " and " + std::to_string(i + 1) +
                             " differ in image size");
        const Quat qa(a.rotation), qb(b.rotation);
        for (int s = 1; s <= steps; ++s) {
            const double f = double(s) / (steps + 1);
            Camera c       = a;
            c.rotation     = qa.slerp(f, qb).normalized().toRotationMatrix();
            c.position     = (1.0 - f) * a.position + f * b.position;
            c.fx           = (1.0 - f) * a.fx + f * b.fx;
            c.fy           = (1.0 - f) * a.fy + f * b.fy;
            c.cx           = (1.0 - f) * a.cx + f * b.cx;
            c.cy           = (1.0 - f) * a.cy + f * b.cy;
            out.push_back(c);
        }
    }
    return out;
}

/// Renders every camera in order; failures name the frame.
inline std::vector<FrameOutput>
render_trajectory(const Scene &scene, const std::vector<Camera> &cams, const SortMode &mode,
                  const RenderConfig &cfg = {}) {
    std::vector<FrameOutput> frames;
    frames.reserve(cams.size());
    for (std::size_t i = 0; i < cams.size(); ++i) {
        try {
            frames.push_back(render(scene, cams[i], mode, cfg));
        } catch (const UsageError &e) {
            throw UsageError("frame " + std::to_string(i) + ": " + e.what());
        } catch (const std::runtime_error &e) {
            throw DataError("frame " + std::to_string(i) + ": " + e.what());
        }
    }
    return frames;
}

} // namespace sortsplat
