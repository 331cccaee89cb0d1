// Copyright Contributors to the sortsplat Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace sortsplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

inline constexpr double kOpacityEpsilon = 1.0 / 255.0;
inline constexpr int    kTileSize       = 16;

/// Error raised for malformed input files (missing properties, bad headers, ...).
class FormatError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Error raised for data that parses but violates a domain invariant.
class DataError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Misuse of an API (missing captured data, too few frames, ...).
class UsageError : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

/// Packed symmetric 3x3 matrix: xx, xy, xz, yy, yz, zz.
struct SymMat3 {
    std::array<double, 6> m{};

    [[nodiscard]] Mat3
    full() const {
        Mat3 out;
        out << m[0], m[1], m[2], m[1], m[3], m[4], m[2], m[4], m[5];
        return out;
    }

    [[nodiscard]] static SymMat3
    from(const Mat3 &a) {
        return SymMat3{{a(0, 0), a(0, 1), a(0, 2), a(1, 1), a(1, 2), a(2, 2)}};
    }

    [[nodiscard]] Vec3
    operator*(const Vec3 &v) const {
        return Vec3(m[0] * v.x() + m[1] * v.y() + m[2] * v.z(),
                    m[1] * v.x() + m[3] * v.y() + m[4] * v.z(),
                    m[2] * v.x() + m[4] * v.y() + m[5] * v.z());
    }
};

/// Symmetric 2x2 matrix stored as (a, b, c) for [[a, b], [b, c]].
struct SymMat2 {
    double a = 0.0;
    double b = 0.0;
    double c = 0.0;

    [[nodiscard]] double
    det() const {
        return a * c - b * b;
    }

    [[nodiscard]] SymMat2
    inverse() const {
        const double d = det();
        return {c / d, -b / d, a / d};
    }

    [[nodiscard]] double
    quad(const Vec2 &v) const {
        return a * v.x() * v.x() + 2.0 * b * v.x() * v.y() + c * v.y() * v.y();
    }

    [[nodiscard]] Vec2
    operator*(const Vec2 &v) const {
        return Vec2(a * v.x() + b * v.y(), b * v.x() + c * v.y());
    }

    [[nodiscard]] double
    max_eigenvalue() const {
        const double mid = 0.5 * (a + c);
        const double rad = std::sqrt(std::max(0.0, mid * mid - det()));
        return mid + rad;
    }

    [[nodiscard]] Mat2
    full() const {
        Mat2 out;
        out << a, b, b, c;
        return out;
    }
};

/// Row-major H x W image of `Channels` doubles per pixel.
template <int Channels> class Image {
  public:
    Image() = default;
    Image(int width, int height, double fill = 0.0)
        : mWidth(width), mHeight(height),
          mData(static_cast<std::size_t>(width) * height * Channels, fill) {}

    [[nodiscard]] int
    width() const {
        return mWidth;
    }
    [[nodiscard]] int
    height() const {
        return mHeight;
    }
    [[nodiscard]] bool
    empty() const {
        return mData.empty();
    }
    [[nodiscard]] static constexpr int
    channels() {
        return Channels;
    }

    double &
    at(int x, int y, int c = 0) {
        return mData[(static_cast<std::size_t>(y) * mWidth + x) * Channels + c];
    }
    [[nodiscard]] double
    at(int x, int y, int c = 0) const {
        return mData[(static_cast<std::size_t>(y) * mWidth + x) * Channels + c];
    }

    [[nodiscard]] std::vector<double> &
    data() {
        return mData;
    }
    [[nodiscard]] const std::vector<double> &
    data() const {
        return mData;
    }

    [[nodiscard]] bool
    same_size(const Image &other) const {
        return mWidth == other.mWidth && mHeight == other.mHeight;
    }

    bool operator==(const Image &) const = default;

  private:
    int mWidth  = 0;
    int mHeight = 0;
    std::vector<double> mData;
};

using RgbImage   = Image<3>;
using ScalarMap  = Image<1>;

/// Dense per-pixel 2D displacement field with a validity mask.
struct FlowField {
    int width  = 0;
    int height = 0;
    std::vector<float> uv;           // interleaved (u, v), row-major
    std::vector<std::uint8_t> valid; // 1 = usable

    FlowField() = default;
    FlowField(int w, int h)
        : width(w), height(h), uv(static_cast<std::size_t>(w) * h * 2, 0.0f),
          valid(static_cast<std::size_t>(w) * h, 1) {}

    [[nodiscard]] Vec2
    at(int x, int y) const {
        const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 2;
        return Vec2(uv[i], uv[i + 1]);
    }
    void
    set(int x, int y, const Vec2 &f) {
        const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 2;
        uv[i]               = static_cast<float>(f.x());
        uv[i + 1]           = static_cast<float>(f.y());
    }
    [[nodiscard]] bool
    is_valid(int x, int y) const {
        return valid[static_cast<std::size_t>(y) * width + x] != 0;
    }
    void
    set_valid(int x, int y, bool v) {
        valid[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0;
    }
};

} // namespace sortsplat
