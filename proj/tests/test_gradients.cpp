// Copyright Contributors to the sortsplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "test_helpers.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>

using namespace sortsplat;
using namespace sortsplat::testing;

namespace {

constexpr double kStep = 1e-4;

Camera
small_camera(int size = 8) {
    return look_camera(Vec3::Zero(), Vec3::UnitZ(), Vec3::UnitY(), double(size), size, size);
}

RenderConfig
records_config() {
    RenderConfig cfg;
    cfg.capture_records = true;
    return cfg;
}

/// Random splats in front of the small camera, all with opacity <= 0.9.
std::vector<Splat2D>
random_splats(std::mt19937_64 &rng, const Camera &cam, int count) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Splat2D> out;
    while (int(out.size()) < count) {
        const double z = 2.0 + 2.0 * u(rng);
        Gaussian3D g   = make_gaussian(Vec3((u(rng) - 0.5) * 0.8 * z, (u(rng) - 0.5) * 0.8 * z, z),
                                       random_scale(rng, 0.1, 0.5), Vec3(u(rng), u(rng), u(rng)),
                                       0.1 + 0.8 * u(rng));
        g.rotation = random_quat(rng);
        const auto p = project_splat(g, cam, {}, std::uint32_t(out.size()));
        if (p.splat) out.push_back(*p.splat);
    }
    return out;
}

RgbImage
random_image(std::mt19937_64 &rng, int w, int h) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    RgbImage img(w, h);
    for (double &v : img.data()) v = u(rng);
    return img;
}

double
weighted_sum(const RgbImage &img, const RgbImage &weights) {
    double s = 0.0;
    for (std::size_t i = 0; i < img.data().size(); ++i) s += img.data()[i] * weights.data()[i];
    return s;
}

std::vector<std::vector<std::uint32_t>>
blend_orders(const FrameOutput &out) {
    std::vector<std::vector<std::uint32_t>> orders;
    for (const auto &list : out.records) {
        std::vector<std::uint32_t> o;
        for (const auto &r : list) o.push_back(r.splat);
        orders.push_back(std::move(o));
    }
    return orders;
}

/// Every scalar a splat exposes to the backward pass, with read/write access
/// and the matching analytic gradient.
struct Parameter {
    const char *name;
    std::function<double &(Splat2D &)> value;
    std::function<double(const SplatGradients &, std::size_t)> grad;
};

const std::vector<Parameter> &
parameters() {
    static const std::vector<Parameter> params = {
        {"color.r", [](Splat2D &s) -> double & { return s.color.x(); },
         [](const SplatGradients &g, std::size_t i) { return g.d_color[i].x(); }},
        {"color.g", [](Splat2D &s) -> double & { return s.color.y(); },
         [](const SplatGradients &g, std::size_t i) { return g.d_color[i].y(); }},
        {"color.b", [](Splat2D &s) -> double & { return s.color.z(); },
         [](const SplatGradients &g, std::size_t i) { return g.d_color[i].z(); }},
        {"opacity", [](Splat2D &s) -> double & { return s.opacity; },
         [](const SplatGradients &g, std::size_t i) { return g.d_opacity[i]; }},
        {"mean.x", [](Splat2D &s) -> double & { return s.mean2d.x(); },
         [](const SplatGradients &g, std::size_t i) { return g.d_mean2d[i].x(); }},
        {"mean.y", [](Splat2D &s) -> double & { return s.mean2d.y(); },
         [](const SplatGradients &g, std::size_t i) { return g.d_mean2d[i].y(); }},
        {"conic.a", [](Splat2D &s) -> double & { return s.conic.a; },
         [](const SplatGradients &g, std::size_t i) { return g.d_conic[i].a; }},
        {"conic.b", [](Splat2D &s) -> double & { return s.conic.b; },
         [](const SplatGradients &g, std::size_t i) { return g.d_conic[i].b; }},
        {"conic.c", [](Splat2D &s) -> double & { return s.conic.c; },
         [](const SplatGradients &g, std::size_t i) { return g.d_conic[i].c; }},
    };
    return params;
}

bool
gradients_close(double analytic, double numeric) {
    const double diff = std::abs(analytic - numeric);
    if (diff < 1e-6) return true;
    return diff / std::max(std::abs(analytic), std::abs(numeric)) < 1e-3;
}

/// Central differences of sum(weights * render) for every parameter. Returns
/// nothing if some perturbation changes a blend order, so callers can reject
/// the fixture.
std::optional<std::vector<std::vector<double>>>
finite_differences(const std::vector<Splat2D> &splats, const Camera &cam, const SortMode &mode,
                   const RgbImage &weights) {
    const RenderConfig cfg = records_config();
    const auto base        = blend_orders(render_splats(splats, cam, mode, cfg));
    std::vector<std::vector<double>> fd(splats.size(), std::vector<double>(parameters().size()));
    for (std::size_t i = 0; i < splats.size(); ++i) {
        for (std::size_t p = 0; p < parameters().size(); ++p) {
            double sides[2];
            for (int k = 0; k < 2; ++k) {
                auto moved = splats;
                parameters()[p].value(moved[i]) += k == 0 ? kStep : -kStep;
                const auto out = render_splats(moved, cam, mode, cfg);
                if (blend_orders(out) != base) return std::nullopt;
                sides[k] = weighted_sum(out.color, weights);
            }
            fd[i][p] = (sides[0] - sides[1]) / (2 * kStep);
        }
    }
    return fd;
}

/// Reference gradients accumulated back to front: the color behind element i
/// is built up explicitly while walking the list in reverse.
SplatGradients
back_to_front(const std::vector<Splat2D> &splats, const FrameOutput &fwd, const RgbImage &upstream,
              const RenderConfig &cfg) {
    SplatGradients g(splats.size());
    const int w = fwd.color.width(), h = fwd.color.height();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const auto &list = fwd.records[std::size_t(y) * w + x];
            std::vector<double> T(list.size() + 1, 1.0);
            for (std::size_t i = 0; i < list.size(); ++i) T[i + 1] = T[i] * (1.0 - list[i].alpha);
            const Vec3 up(upstream.at(x, y, 0), upstream.at(x, y, 1), upstream.at(x, y, 2));
            const Vec2 pixel(x + 0.5, y + 0.5);
            Vec3 behind = cfg.background;
            for (std::size_t k = list.size(); k-- > 0;) {
                const auto &r    = list[k];
                const Splat2D &s = splats[r.splat];
                g.d_color[r.splat] += up * (r.alpha * T[k]);
                const double dAlpha = up.dot((s.color - behind) * T[k]);
                const Vec2 d        = pixel - s.mean2d;
                const double gauss  = std::exp(-0.5 * s.conic.quad(d));
                const double dPower = dAlpha * s.opacity * gauss;
                g.d_opacity[r.splat] += dAlpha * gauss;
                g.d_mean2d[r.splat] +=
                    dPower * Vec2(s.conic.a * d.x() + s.conic.b * d.y(), s.conic.b * d.x() + s.conic.c * d.y());
                g.d_conic[r.splat].a += dPower * (-0.5 * d.x() * d.x());
                g.d_conic[r.splat].b += dPower * (-d.x() * d.y());
                g.d_conic[r.splat].c += dPower * (-0.5 * d.y() * d.y());
                behind = s.color * r.alpha + behind * (1.0 - r.alpha);
            }
        }
    }
    return g;
}

double
component(const SplatGradients &g, std::size_t i, std::size_t p) {
    return parameters()[p].grad(g, i);
}

struct GradientFixture {
    std::vector<Splat2D> splats;
    RgbImage upstream;
    std::vector<std::vector<double>> fd;
};

/// Draws random scenes until every perturbation leaves the blend orders of
/// `mode` untouched.
GradientFixture
sample_fixture(std::uint64_t seed, const Camera &cam, const SortMode &mode) {
    std::mt19937_64 rng(seed);
    for (int attempt = 0; attempt < 200; ++attempt) {
        GradientFixture f;
        f.splats   = random_splats(rng, cam, 4 + int(rng() % 17));
        f.upstream = random_image(rng, cam.width, cam.height);
        auto fd    = finite_differences(f.splats, cam, mode, f.upstream);
        if (!fd) continue;
        f.fd = std::move(*fd);
        return f;
    }
    ADD_FAILURE() << "no usable fixture for seed " << seed;
    return {};
}

} // namespace

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
    const Fixture fx = random_cloud(80, 3, 32);
    const RgbImage zero(32, 32);
    for (const SortMode &mode : {SortMode(GlobalZ{}), SortMode(FullPerPixel{}), SortMode(Hierarchical{})}) {
        const auto g = backward_render(fx.scene, fx.cameras[0], mode, zero);
        for (std::size_t i = 0; i < g.size(); ++i) {
            EXPECT_EQ(g.d_color[i], Vec3::Zero());
            EXPECT_EQ(g.d_opacity[i], 0.0);
            EXPECT_EQ(g.d_mean2d[i], Vec2::Zero());
            EXPECT_EQ(g.d_conic[i].a, 0.0);
            EXPECT_EQ(g.d_conic[i].b, 0.0);
            EXPECT_EQ(g.d_conic[i].c, 0.0);
        }
    }
}

TEST(Backward, SingleSplatSinglePixel) {
    const Camera cam = small_camera(1);
    auto p = project_splat(make_gaussian(Vec3(0.05, -0.03, 3), Vec3(0.3, 0.3, 0.3), Vec3(0.7, 0.2, 0.4), 0.6), cam,
                           {}, 0);
    ASSERT_TRUE(p.splat);
    const Splat2D s = *p.splat;
    const double G  = std::exp(-0.5 * s.conic.quad(Vec2(0.5, 0.5) - s.mean2d));
    ASSERT_LT(G, 1.0);
    const double alpha = s.opacity * G;

    RgbImage up(1, 1);
    up.at(0, 0, 0) = 1.0;
    const PreparedFrame frame = prepare_splats({s}, cam, FullPerPixel{}, {});
    const auto fwd            = render_prepared(frame, FullPerPixel{}, {});
    const auto g              = backward_render(frame, FullPerPixel{}, {}, fwd, up);
    EXPECT_NEAR(g.d_color[0].x(), alpha, 1e-12);
    EXPECT_EQ(g.d_color[0].y(), 0.0);
    EXPECT_EQ(g.d_color[0].z(), 0.0);
    EXPECT_NEAR(g.d_opacity[0], G * s.color.x(), 1e-12);
}

TEST(Backward, SplatsBelowThresholdGetNoGradient) {
    const Camera cam = small_camera(16);
    auto faint = project_splat(make_gaussian(Vec3(0, 0, 3), Vec3(0.3, 0.3, 0.3), Vec3(1, 1, 1), 0.003), cam, {}, 0);
    auto seen  = project_splat(make_gaussian(Vec3(0.2, 0, 4), Vec3(0.3, 0.3, 0.3), Vec3(1, 0, 1), 0.5), cam, {}, 1);
    std::mt19937_64 rng(5);
    const RgbImage up = random_image(rng, 16, 16);
    for (const SortMode &mode : {SortMode(GlobalZ{}), SortMode(FullPerPixel{}), SortMode(Hierarchical{})}) {
        const PreparedFrame frame = prepare_splats({*faint.splat, *seen.splat}, cam, mode, {});
        const auto g              = backward_render(frame, mode, {}, render_prepared(frame, mode, {}), up);
        EXPECT_EQ(g.d_color[0], Vec3::Zero());
        EXPECT_EQ(g.d_opacity[0], 0.0);
        EXPECT_NE(g.d_opacity[1], 0.0);
    }
}

TEST(Backward, MatchesFiniteDifferences) {
    const Camera cam = small_camera();
    for (const SortMode &mode : {SortMode(FullPerPixel{}), SortMode(Hierarchical{}), SortMode(GlobalZ{})}) {
        for (std::uint64_t seed = 0; seed < 12; ++seed) {
            const auto f = sample_fixture(100 + seed, cam, mode);
            ASSERT_FALSE(f.splats.empty());
            const PreparedFrame frame = prepare_splats(f.splats, cam, mode, {});
            const auto g = backward_render(frame, mode, {}, render_prepared(frame, mode, {}), f.upstream);
            for (std::size_t i = 0; i < f.splats.size(); ++i)
                for (std::size_t p = 0; p < parameters().size(); ++p)
                    EXPECT_PRED2(gradients_close, component(g, i, p), f.fd[i][p])
                        << mode_name(mode) << " seed " << seed << " splat " << i << " " << parameters()[p].name;
        }
    }
}

TEST(Backward, NonBlackBackgroundMatchesFiniteDifferences) {
    const Camera cam = small_camera();
    RenderConfig cfg;
    cfg.background = Vec3(0.3, 0.6, 0.9);
    const auto f   = sample_fixture(7, cam, FullPerPixel{});
    // redo the differences with the background in place
    RenderConfig rec = records_config();
    rec.background   = cfg.background;
    const PreparedFrame frame = prepare_splats(f.splats, cam, FullPerPixel{}, cfg);
    const auto g = backward_render(frame, FullPerPixel{}, cfg, render_prepared(frame, FullPerPixel{}, cfg), f.upstream);
    for (std::size_t i = 0; i < f.splats.size(); ++i) {
        for (std::size_t p = 0; p < parameters().size(); ++p) {
            double sides[2];
            for (int k = 0; k < 2; ++k) {
                auto moved = f.splats;
                parameters()[p].value(moved[i]) += k == 0 ? kStep : -kStep;
                sides[k] = weighted_sum(render_splats(moved, cam, FullPerPixel{}, rec).color, f.upstream);
            }
            EXPECT_PRED2(gradients_close, component(g, i, p), (sides[0] - sides[1]) / (2 * kStep))
                << "splat " << i << " " << parameters()[p].name;
        }
    }
}

TEST(Backward, FrontToBackEqualsBackToFront) {
    const RenderConfig cfg = records_config();
    double worst           = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(300 + seed);
        const Camera cam  = small_camera(16);
        const auto splats = random_splats(rng, cam, 20);
        const auto up     = random_image(rng, 16, 16);
        for (const SortMode &mode : {SortMode(FullPerPixel{}), SortMode(Hierarchical{})}) {
            const PreparedFrame frame = prepare_splats(splats, cam, mode, cfg);
            const auto fwd            = render_prepared(frame, mode, cfg);
            const auto g              = backward_render(frame, mode, cfg, fwd, up);
            const auto ref            = back_to_front(frame.splats, fwd, up, cfg);
            for (std::size_t i = 0; i < splats.size(); ++i)
                for (std::size_t p = 0; p < parameters().size(); ++p) {
                    const double a = component(g, i, p), b = component(ref, i, p);
                    const double scale = std::max({std::abs(a), std::abs(b), 1.0});
                    worst              = std::max(worst, std::abs(a - b) / scale);
                    EXPECT_LE(std::abs(a - b), 1e-6 * scale) << "splat " << i << " " << parameters()[p].name;
                }
        }
    }
    RecordProperty("max_relative_deviation", std::to_string(worst));
}

TEST(Backward, ReplayingForwardOrderReproducesGradients) {
    const Camera cam       = small_camera(16);
    const RenderConfig cfg = records_config();
    std::mt19937_64 rng(17);
    const auto splats         = random_splats(rng, cam, 20);
    const auto up             = random_image(rng, 16, 16);
    const PreparedFrame frame = prepare_splats(splats, cam, FullPerPixel{}, cfg);
    const auto fwd            = render_prepared(frame, FullPerPixel{}, cfg);
    const auto g              = backward_render(frame, FullPerPixel{}, cfg, fwd, up);
    const auto replay         = backward_from_records(frame.splats, 16, 16, fwd.records, up, cfg);
    for (std::size_t i = 0; i < splats.size(); ++i)
        for (std::size_t p = 0; p < parameters().size(); ++p)
            EXPECT_NEAR(component(g, i, p), component(replay, i, p), 1e-12);
}

// Negative control: the same records in a different order must not agree
// with the finite differences of the real render.
TEST(Backward, ShuffledOrderDisagreesWithFiniteDifferences) {
    const Camera cam = small_camera();
    int controls     = 0;
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const auto f = sample_fixture(500 + seed, cam, FullPerPixel{});
        const RenderConfig cfg = records_config();
        const auto fwd         = render_splats(f.splats, cam, FullPerPixel{}, cfg);
        auto shuffled          = fwd.records;
        bool permuted          = false;
        for (auto &list : shuffled) {
            if (list.size() < 2) continue;
            std::reverse(list.begin(), list.end());
            permuted = true;
        }
        if (!permuted) continue;
        ++controls;
        const auto g = backward_from_records(f.splats, cam.width, cam.height, shuffled, f.upstream, cfg);
        int mismatches = 0;
        for (std::size_t i = 0; i < f.splats.size(); ++i)
            for (std::size_t p = 0; p < parameters().size(); ++p)
                mismatches += gradients_close(component(g, i, p), f.fd[i][p]) ? 0 : 1;
        EXPECT_GT(mismatches, 0) << "seed " << seed;
    }
    EXPECT_GT(controls, 0);
}

TEST(Backward, DeterministicAcrossWorkerCounts) {
    const Fixture fx = random_cloud(200, 21, 64);
    std::mt19937_64 rng(22);
    const auto up = random_image(rng, 64, 64);
    for (const SortMode &mode : {SortMode(FullPerPixel{}), SortMode(Hierarchical{})}) {
        RenderConfig cfg;
        const auto ref = backward_render(fx.scene, fx.cameras[0], mode, up, cfg);
        for (int workers : {2, 8}) {
            cfg.workers  = workers;
            const auto g = backward_render(fx.scene, fx.cameras[0], mode, up, cfg);
            for (std::size_t i = 0; i < g.size(); ++i) {
                EXPECT_EQ(g.d_color[i], ref.d_color[i]);
                EXPECT_EQ(g.d_opacity[i], ref.d_opacity[i]);
                EXPECT_EQ(g.d_mean2d[i], ref.d_mean2d[i]);
                EXPECT_EQ(g.d_conic[i].a, ref.d_conic[i].a);
                EXPECT_EQ(g.d_conic[i].b, ref.d_conic[i].b);
                EXPECT_EQ(g.d_conic[i].c, ref.d_conic[i].c);
            }
        }
    }
}

TEST(Backward, NonFiniteSplatNamesSplatAndPixel) {
    const Camera cam = small_camera(16);
    auto good = project_splat(make_gaussian(Vec3(0.3, 0, 3), Vec3(0.3, 0.3, 0.3), Vec3(1, 0, 0), 0.5), cam, {}, 4);
    auto bad  = project_splat(make_gaussian(Vec3(-0.3, 0, 3), Vec3(0.3, 0.3, 0.3), Vec3(0, 1, 0), 0.5), cam, {}, 9);
    bad.splat->color.y()      = std::numeric_limits<double>::infinity();
    const PreparedFrame frame = prepare_splats({*good.splat, *bad.splat}, cam, FullPerPixel{}, {});
    const auto fwd            = render_prepared(frame, FullPerPixel{}, {});
    const RgbImage up(16, 16, 1.0);
    try {
        (void)backward_render(frame, FullPerPixel{}, {}, fwd, up);
        FAIL() << "expected DataError";
    } catch (const DataError &e) {
        EXPECT_NE(std::string(e.what()).find("splat 9"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("pixel ("), std::string::npos) << e.what();
    }
}

TEST(Backward, RejectsMismatchedUpstream) {
    const Fixture fx = random_cloud(10, 1, 32);
    EXPECT_THROW((void)backward_render(fx.scene, fx.cameras[0], FullPerPixel{}, RgbImage(16, 32)), UsageError);
}

TEST(Backward, GradientDumpLayout) {
    SplatGradients g(2);
    g.d_color[1]   = Vec3(1, 2, 3);
    g.d_opacity[1] = 4;
    g.d_mean2d[1]  = Vec2(5, 6);
    g.d_conic[1].a = 7;
    g.d_conic[1].b = 8;
    g.d_conic[1].c = 9;
    const auto path = (temp_dir("grad_dump") / "g.bin").string();
    write_gradients(g, path);
    std::ifstream in(path, std::ios::binary);
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char *>(&n), sizeof(n));
    ASSERT_EQ(n, 2u);
    double v[18];
    in.read(reinterpret_cast<char *>(v), sizeof(v));
    ASSERT_TRUE(in);
    for (int k = 0; k < 9; ++k) {
        EXPECT_EQ(v[k], 0.0);
        EXPECT_EQ(v[9 + k], double(k + 1));
    }
    EXPECT_EQ(in.peek(), std::char_traits<char>::eof());
}

TEST(LossL2, IdenticalImagesGiveZero) {
    std::mt19937_64 rng(1);
    const auto img = random_image(rng, 5, 4);
    const auto r   = loss_l2(img, img);
    EXPECT_EQ(r.loss, 0.0);
    for (double v : r.gradient.data()) EXPECT_EQ(v, 0.0);
}

TEST(LossL2, SingleDifferingSample) {
    RgbImage a(2, 2), b(2, 2);
    a.at(1, 0, 2) = 1.0;
    const auto r  = loss_l2(a, b);
    EXPECT_DOUBLE_EQ(r.loss, 1.0 / 12.0);
    EXPECT_DOUBLE_EQ(r.gradient.at(1, 0, 2), 2.0 / 12.0);
}

TEST(LossL2, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(2);
    auto a       = random_image(rng, 6, 5);
    const auto b = random_image(rng, 6, 5);
    const auto r = loss_l2(a, b);
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        const double keep = a.data()[i];
        a.data()[i]       = keep + kStep;
        const double up   = loss_l2(a, b).loss;
        a.data()[i]       = keep - kStep;
        const double down = loss_l2(a, b).loss;
        a.data()[i]       = keep;
        EXPECT_NEAR(r.gradient.data()[i], (up - down) / (2 * kStep), 1e-9);
    }
}

TEST(LossL2, RejectsSizeMismatch) {
    EXPECT_THROW((void)loss_l2(RgbImage(2, 2), RgbImage(2, 3)), UsageError);
}

TEST(LossL2, ChainsIntoBackwardPass) {
    const Camera cam = small_camera();
    std::mt19937_64 rng(31);
    const auto splats = random_splats(rng, cam, 10);
    const auto target = random_image(rng, 8, 8);
    const PreparedFrame frame = prepare_splats(splats, cam, FullPerPixel{}, {});
    const auto fwd  = render_prepared(frame, FullPerPixel{}, {});
    const auto loss = loss_l2(fwd.color, target);
    const auto g    = backward_render(frame, FullPerPixel{}, {}, fwd, loss.gradient);
    const RenderConfig rec = records_config();
    const auto base        = blend_orders(render_splats(splats, cam, FullPerPixel{}, rec));
    for (std::size_t i = 0; i < splats.size(); ++i) {
        auto moved = splats;
        moved[i].opacity += kStep;
        const auto upOut = render_splats(moved, cam, FullPerPixel{}, rec);
        moved[i].opacity -= 2 * kStep;
        const auto downOut = render_splats(moved, cam, FullPerPixel{}, rec);
        if (blend_orders(upOut) != base || blend_orders(downOut) != base) continue;
        const double fd = (loss_l2(upOut.color, target).loss - loss_l2(downOut.color, target).loss) / (2 * kStep);
        EXPECT_PRED2(gradients_close, g.d_opacity[i], fd) << "splat " << i;
    }
}
