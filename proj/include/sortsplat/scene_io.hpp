// Copyright Contributors to the sortsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// File formats:
//   .ply    binary little-endian vertex list in the common 3DGS checkpoint layout
//   .json   camera list (id, img_name, width, height, position, rotation, fx, fy[, cx, cy])
//   .gauss  text scene, one Gaussian per line:
//             mx my mz  qw qx qy qz  sx sy sz  opacity  r g b  [45 higher-order SH values]
//           values are activated (no log/logit); the DC coefficient is derived from rgb
//   .png/.ppm 8-bit RGB, byte = round(clamp(v, 0, 1) * 255)
//   .flo    Middlebury optical flow
//   .pfm    single-channel float map
//   .txt    sparse points, one per line: x y z cam_id...
//
#pragma once

#include "sortsplat/core.hpp"
#include "sortsplat/gaussian_math.hpp"
#include "sortsplat/scene.hpp"

#include <json.hpp>
#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

namespace sortsplat {

namespace detail {

inline std::string
lower_extension(const std::string &path) {
    const auto dot = path.find_last_of('.');
    if (dot == std::string::npos) return {};
    std::string ext = path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

inline std::ifstream
open_input(const std::string &path, bool binary) {
    std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
    if (!in) throw FormatError("cannot open '" + path + "'");
    return in;
}

inline std::ofstream
open_output(const std::string &path, bool binary) {
    std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    return out;
}

inline double
sigmoid(double x) {
    return 1.0 / (1.0 + std::exp(-x));
}

inline double
logit(double p) {
    return std::log(p / (1.0 - p));
}

} // namespace detail

// ---------------------------------------------------------------------------
// PLY

namespace detail {

struct PlyProperty {
    std::string name;
    std::string type;
    int size   = 0;
    int offset = 0;
};

inline int
ply_type_size(const std::string &type) {
    static const std::map<std::string, int> sizes = {
        {"char", 1},   {"uchar", 1},  {"int8", 1},   {"uint8", 1},    {"short", 2},   {"ushort", 2},
        {"int16", 2},  {"uint16", 2}, {"int", 4},    {"uint", 4},     {"int32", 4},   {"uint32", 4},
        {"float", 4},  {"float32", 4}, {"double", 8}, {"float64", 8},
    };
    const auto it = sizes.find(type);
    return it == sizes.end() ? 0 : it->second;
}

inline double
ply_read_value(const unsigned char *p, const std::string &type) {
    auto load = [p]<typename T>(T) {
        T v;
        std::memcpy(&v, p, sizeof(T));
        return double(v);
    };
    if (type == "float" || type == "float32") return load(float{});
    if (type == "double" || type == "float64") return load(double{});
    if (type == "char" || type == "int8") return load(std::int8_t{});
    if (type == "uchar" || type == "uint8") return load(std::uint8_t{});
    if (type == "short" || type == "int16") return load(std::int16_t{});
    if (type == "ushort" || type == "uint16") return load(std::uint16_t{});
    if (type == "int" || type == "int32") return load(std::int32_t{});
    return load(std::uint32_t{});
}

} // namespace detail

/// Loads a 3DGS checkpoint. Higher-order SH may be absent or truncated to
/// degree 1 or 2 (0, 9 or 24 f_rest values); missing coefficients are zero.
inline Scene
load_ply(const std::string &path) {
    static_assert(std::endian::native == std::endian::little, "PLY reader assumes a little-endian host");
    auto in = detail::open_input(path, true);

    std::string line;
    std::getline(in, line);
    if (line.rfind("ply", 0) != 0) throw FormatError("'" + path + "' is not a PLY file");

    std::vector<detail::PlyProperty> props;
    std::size_t vertexCount = 0;
    int stride = 0;
    bool inVertex = false, sawVertex = false, sawFormat = false;
    while (true) {
        if (!std::getline(in, line)) throw FormatError("unexpected end of PLY header in '" + path + "'");
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "end_header") break;
        if (word == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "binary_little_endian")
                throw FormatError("unsupported PLY format '" + fmt + "', expected binary_little_endian");
            sawFormat = true;
        } else if (word == "element") {
            std::string name;
            ls >> name;
            if (sawVertex && inVertex) inVertex = false;
            if (name == "vertex") {
                ls >> vertexCount;
                inVertex = sawVertex = true;
            } else if (sawVertex) {
                inVertex = false; // trailing elements are ignored
            } else {
                throw FormatError("PLY element '" + name + "' before vertex element is not supported");
            }
        } else if (word == "property" && inVertex) {
            std::string type, name;
            ls >> type;
            if (type == "list") throw FormatError("list properties are not supported in vertex element");
            ls >> name;
            const int size = detail::ply_type_size(type);
            if (size == 0) throw FormatError("unknown PLY property type '" + type + "' for '" + name + "'");
            props.push_back({name, type, size, stride});
            stride += size;
        }
    }
    if (!sawFormat) throw FormatError("PLY header has no format line");
    if (!sawVertex) throw FormatError("PLY file has no vertex element");

    std::map<std::string, const detail::PlyProperty *> byName;
    for (const auto &p : props) byName[p.name] = &p;
    auto require = [&](const std::string &name) {
        const auto it = byName.find(name);
        if (it == byName.end()) throw FormatError("PLY is missing property '" + name + "'");
        return it->second;
    };

    const char *required[] = {"x",       "y",       "z",       "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                              "scale_0", "scale_1", "scale_2", "rot_0",  "rot_1",  "rot_2",  "rot_3"};
    std::vector<const detail::PlyProperty *> req;
    for (const char *name : required) req.push_back(require(name));

    int restCount = 0;
    while (byName.count("f_rest_" + std::to_string(restCount))) ++restCount;
    if (restCount != 0 && restCount != 9 && restCount != 24 && restCount != 45)
        throw FormatError("PLY has " + std::to_string(restCount) +
                          " f_rest properties; expected 0, 9, 24 or 45 (missing 'f_rest_" +
                          std::to_string(restCount) + "')");
    std::vector<const detail::PlyProperty *> rest;
    for (int i = 0; i < restCount; ++i) rest.push_back(byName["f_rest_" + std::to_string(i)]);
    const int perChannel = restCount / 3;

    std::vector<unsigned char> buffer(vertexCount * std::size_t(stride));
    in.read(reinterpret_cast<char *>(buffer.data()), std::streamsize(buffer.size()));
    if (std::size_t(in.gcount()) != buffer.size())
        throw FormatError("PLY body truncated: expected " + std::to_string(vertexCount) + " vertices of " +
                          std::to_string(stride) + " bytes");

    Scene scene(vertexCount);
    for (std::size_t i = 0; i < vertexCount; ++i) {
        const unsigned char *rec = buffer.data() + i * stride;
        double v[14];
        for (int k = 0; k < 14; ++k) v[k] = detail::ply_read_value(rec + req[k]->offset, req[k]->type);
        Gaussian3D &g = scene[i];
        g.mean        = Vec3(v[0], v[1], v[2]);
        g.sh[0]       = Vec3(v[3], v[4], v[5]);
        g.opacity     = detail::sigmoid(v[6]);
        g.scale       = Vec3(std::exp(v[7]), std::exp(v[8]), std::exp(v[9]));
        const Quat q(v[10], v[11], v[12], v[13]);
        for (int k = 0; k < perChannel; ++k)
            for (int c = 0; c < 3; ++c)
                g.sh[1 + k][c] = detail::ply_read_value(rec + rest[c * perChannel + k]->offset,
                                                        rest[c * perChannel + k]->type);

        bool finite = g.mean.allFinite() && std::isfinite(g.opacity) && g.scale.allFinite() &&
                      q.coeffs().allFinite();
        for (const auto &c : g.sh) finite = finite && c.allFinite();
        if (!finite) throw DataError("PLY record " + std::to_string(i) + " has a non-finite value");
        if (!(q.norm() > 0.0)) throw DataError("PLY record " + std::to_string(i) + " has a zero quaternion");
        if (!(g.scale.minCoeff() > 0.0))
            throw DataError("PLY record " + std::to_string(i) + " has a zero scale");
        g.rotation = q.normalized();
    }
    return scene;
}

/// Writes the full degree-3 layout (float32) with log scales and logit opacities.
inline void
save_ply(const Scene &scene, const std::string &path) {
    auto out = detail::open_output(path, true);
    out << "ply\nformat binary_little_endian 1.0\nelement vertex " << scene.size() << "\n";
    std::vector<std::string> names = {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"};
    for (int i = 0; i < 45; ++i) names.push_back("f_rest_" + std::to_string(i));
    for (const char *n : {"opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"})
        names.emplace_back(n);
    for (const auto &n : names) out << "property float " << n << "\n";
    out << "end_header\n";

    std::vector<float> rec(names.size());
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const Gaussian3D &g = scene[i];
        std::size_t k       = 0;
        for (int c = 0; c < 3; ++c) rec[k++] = float(g.mean[c]);
        for (int c = 0; c < 3; ++c) rec[k++] = 0.0f;
        for (int c = 0; c < 3; ++c) rec[k++] = float(g.sh[0][c]);
        for (int c = 0; c < 3; ++c)
            for (int j = 1; j < kShCoefficients; ++j) rec[k++] = float(g.sh[j][c]);
        rec[k++] = float(detail::logit(g.opacity));
        for (int c = 0; c < 3; ++c) rec[k++] = float(std::log(g.scale[c]));
        const Quat q = g.rotation.normalized();
        rec[k++]     = float(q.w());
        rec[k++]     = float(q.x());
        rec[k++]     = float(q.y());
        rec[k++]     = float(q.z());
        out.write(reinterpret_cast<const char *>(rec.data()), std::streamsize(rec.size() * sizeof(float)));
    }
    if (!out) throw DataError("failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// Cameras

enum class RotationConvention {
    WorldToView, // stored matrix maps world to view (default)
    ViewToWorld, // stored matrix is camera-to-world and gets transposed
};

namespace detail {

inline Mat3
checked_rotation(const Mat3 &r, const std::string &where) {
    const double drift = (r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
    const double det   = r.determinant();
    if (drift > 1e-3 || det < 0.0) {
        std::ostringstream msg;
        msg << where << ": rotation is not orthonormal (determinant " << det << ", drift " << drift << ")";
        throw DataError(msg.str());
    }
    if (drift <= 1e-9) return r;
    // Gram-Schmidt on the rows
    Vec3 r0 = r.row(0).transpose().normalized();
    Vec3 r1 = r.row(1).transpose();
    r1      = (r1 - r1.dot(r0) * r0).normalized();
    Vec3 r2 = r.row(2).transpose();
    r2      = (r2 - r2.dot(r0) * r0 - r2.dot(r1) * r1).normalized();
    Mat3 out;
    out.row(0) = r0.transpose();
    out.row(1) = r1.transpose();
    out.row(2) = r2.transpose();
    return out;
}

template <typename T>
T
json_field(const nlohmann::json &entry, const char *key, std::size_t index) {
    if (!entry.contains(key))
        throw FormatError("camera " + std::to_string(index) + " is missing field '" + key + "'");
    try {
        return entry.at(key).get<T>();
    } catch (const nlohmann::json::exception &e) {
        throw FormatError("camera " + std::to_string(index) + " field '" + key + "': " + e.what());
    }
}

} // namespace detail

inline std::vector<Camera>
parse_cameras(const nlohmann::json &doc, RotationConvention convention = RotationConvention::WorldToView) {
    if (!doc.is_array()) throw FormatError("camera file must contain a JSON array");
    std::vector<Camera> cams;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto &e = doc[i];
        if (!e.is_object()) throw FormatError("camera " + std::to_string(i) + " is not an object");
        Camera c;
        c.width  = detail::json_field<int>(e, "width", i);
        c.height = detail::json_field<int>(e, "height", i);
        c.fx     = detail::json_field<double>(e, "fx", i);
        c.fy     = detail::json_field<double>(e, "fy", i);
        const auto pos = detail::json_field<std::vector<double>>(e, "position", i);
        const auto rot = detail::json_field<std::vector<std::vector<double>>>(e, "rotation", i);
        if (pos.size() != 3) throw FormatError("camera " + std::to_string(i) + " position must have 3 values");
        if (rot.size() != 3 || rot[0].size() != 3 || rot[1].size() != 3 || rot[2].size() != 3)
            throw FormatError("camera " + std::to_string(i) + " rotation must be 3x3");
        if (c.width <= 0 || c.height <= 0)
            throw DataError("camera " + std::to_string(i) + " has non-positive image size");
        c.position = Vec3(pos[0], pos[1], pos[2]);
        Mat3 r;
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) r(a, b) = rot[a][b];
        if (convention == RotationConvention::ViewToWorld) r.transposeInPlace();
        c.rotation = detail::checked_rotation(r, "camera " + std::to_string(i));
        c.cx       = e.contains("cx") ? detail::json_field<double>(e, "cx", i) : 0.5 * c.width;
        c.cy       = e.contains("cy") ? detail::json_field<double>(e, "cy", i) : 0.5 * c.height;
        cams.push_back(c);
    }
    return cams;
}

inline std::vector<Camera>
load_cameras(const std::string &path, RotationConvention convention = RotationConvention::WorldToView) {
    auto in = detail::open_input(path, false);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error &e) {
        throw FormatError("'" + path + "': " + e.what());
    }
    return parse_cameras(doc, convention);
}

inline nlohmann::json
cameras_to_json(const std::vector<Camera> &cams) {
    nlohmann::json doc = nlohmann::json::array();
    for (std::size_t i = 0; i < cams.size(); ++i) {
        const Camera &c = cams[i];
        nlohmann::json rot = nlohmann::json::array();
        for (int a = 0; a < 3; ++a) rot.push_back({c.rotation(a, 0), c.rotation(a, 1), c.rotation(a, 2)});
        doc.push_back({{"id", i},
                       {"img_name", "frame_" + std::to_string(i)},
                       {"width", c.width},
                       {"height", c.height},
                       {"position", {c.position.x(), c.position.y(), c.position.z()}},
                       {"rotation", rot},
                       {"fx", c.fx},
                       {"fy", c.fy},
                       {"cx", c.cx},
                       {"cy", c.cy}});
    }
    return doc;
}

inline void
save_cameras(const std::vector<Camera> &cams, const std::string &path) {
    auto out = detail::open_output(path, false);
    out << std::setprecision(17) << cameras_to_json(cams).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Text scenes

inline Scene
parse_gauss(std::istream &in, const std::string &name = "<stream>") {
    Scene scene;
    std::string line;
    int lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        std::vector<double> v;
        double x;
        while (ls >> x) v.push_back(x);
        if (!ls.eof()) throw FormatError(name + ":" + std::to_string(lineNo) + ": unparsable value");
        if (v.empty()) continue;
        if (v.size() != 14 && v.size() != 14 + 45)
            throw FormatError(name + ":" + std::to_string(lineNo) + ": expected 14 or 59 values, got " +
                              std::to_string(v.size()));
        for (double d : v)
            if (!std::isfinite(d)) throw DataError(name + ":" + std::to_string(lineNo) + ": non-finite value");
        Gaussian3D g;
        g.mean = Vec3(v[0], v[1], v[2]);
        const Quat q(v[3], v[4], v[5], v[6]);
        if (!(q.norm() > 0.0)) throw DataError(name + ":" + std::to_string(lineNo) + ": zero quaternion");
        g.rotation = q.normalized();
        g.scale    = Vec3(v[7], v[8], v[9]);
        g.opacity  = v[10];
        if (!(g.scale.minCoeff() > 0.0)) throw DataError(name + ":" + std::to_string(lineNo) + ": scale must be > 0");
        if (g.opacity < 0.0 || g.opacity > 1.0)
            throw DataError(name + ":" + std::to_string(lineNo) + ": opacity outside [0, 1]");
        g.sh[0] = sh_dc_from_rgb(Vec3(v[11], v[12], v[13]));
        if (v.size() > 14)
            for (int k = 0; k < 15; ++k) g.sh[1 + k] = Vec3(v[14 + 3 * k], v[15 + 3 * k], v[16 + 3 * k]);
        scene.push_back(g);
    }
    return scene;
}

inline Scene
load_gauss(const std::string &path) {
    auto in = detail::open_input(path, false);
    return parse_gauss(in, path);
}

inline void
save_gauss(const Scene &scene, const std::string &path) {
    auto out = detail::open_output(path, false);
    out << "# mean(3) quat_wxyz(4) scale(3) opacity rgb(3) [sh_rest(45)]\n";
    out << std::setprecision(17);
    for (const auto &g : scene) {
        const Vec3 rgb = (detail::kShC0 * g.sh[0]).array() + 0.5;
        out << g.mean.x() << ' ' << g.mean.y() << ' ' << g.mean.z() << ' ' << g.rotation.w() << ' '
            << g.rotation.x() << ' ' << g.rotation.y() << ' ' << g.rotation.z() << ' ' << g.scale.x() << ' '
            << g.scale.y() << ' ' << g.scale.z() << ' ' << g.opacity << ' ' << rgb.x() << ' ' << rgb.y()
            << ' ' << rgb.z();
        bool hasRest = false;
        for (int k = 1; k < kShCoefficients; ++k) hasRest = hasRest || !g.sh[k].isZero(0.0);
        if (hasRest)
            for (int k = 1; k < kShCoefficients; ++k)
                out << ' ' << g.sh[k].x() << ' ' << g.sh[k].y() << ' ' << g.sh[k].z();
        out << '\n';
    }
}

/// Dispatches on extension: .ply or .gauss.
inline Scene
load_scene(const std::string &path) {
    const std::string ext = detail::lower_extension(path);
    if (ext == "ply") return load_ply(path);
    if (ext == "gauss") return load_gauss(path);
    throw FormatError("unknown scene format '" + path + "' (expected .ply or .gauss)");
}

inline void
save_scene(const Scene &scene, const std::string &path) {
    const std::string ext = detail::lower_extension(path);
    if (ext == "ply") return save_ply(scene, path);
    if (ext == "gauss") return save_gauss(scene, path);
    throw UsageError("unknown scene format '" + path + "' (expected .ply or .gauss)");
}

// ---------------------------------------------------------------------------
// Images

inline std::uint8_t
to_byte(double v) {
    if (!(v > 0.0)) return 0; // also maps NaN to 0
    if (v >= 1.0) return 255;
    return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

inline std::vector<std::uint8_t>
to_bytes(const RgbImage &img) {
    std::vector<std::uint8_t> out(img.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = to_byte(img.data()[i]);
    return out;
}

inline void
write_ppm(const RgbImage &img, const std::string &path) {
    auto out = detail::open_output(path, true);
    out << "P6\n" << img.width() << " " << img.height() << "\n255\n";
    const auto bytes = to_bytes(img);
    out.write(reinterpret_cast<const char *>(bytes.data()), std::streamsize(bytes.size()));
}

inline void
write_png(const RgbImage &img, const std::string &path) {
    std::unique_ptr<FILE, int (*)(FILE *)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) throw DataError("cannot open '" + path + "' for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info  = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng failed writing '" + path + "'");
    }
    const auto bytes = to_bytes(img);
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, png_uint_32(img.width()), png_uint_32(img.height()), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height(); ++y)
        png_write_row(png, const_cast<png_bytep>(bytes.data() + std::size_t(y) * img.width() * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

/// Reads an 8-bit RGB PNG (other PNG layouts are converted by libpng).
inline RgbImage
read_png(const std::string &path) {
    std::unique_ptr<FILE, int (*)(FILE *)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
    if (!fp) throw FormatError("cannot open '" + path + "'");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info  = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw FormatError("libpng initialization failed");
    }
    RgbImage img;
    std::vector<png_byte> row;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("'" + path + "' is not a readable PNG");
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int w = int(png_get_image_width(png, info)), h = int(png_get_image_height(png, info));
    img         = RgbImage(w, h);
    row.resize(png_get_rowbytes(png, info));
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = row[std::size_t(x) * 3 + c] / 255.0;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

inline RgbImage
read_ppm(const std::string &path) {
    auto in = detail::open_input(path, true);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) throw FormatError("'" + path + "' is not an 8-bit P6 PPM");
    in.get();
    std::vector<std::uint8_t> bytes(std::size_t(w) * h * 3);
    in.read(reinterpret_cast<char *>(bytes.data()), std::streamsize(bytes.size()));
    if (std::size_t(in.gcount()) != bytes.size())
        throw FormatError("'" + path + "': pixel data shorter than the declared " + std::to_string(w) + "x" +
                          std::to_string(h));
    RgbImage img(w, h);
    for (std::size_t i = 0; i < bytes.size(); ++i) img.data()[i] = bytes[i] / 255.0;
    return img;
}

inline void
write_image(const RgbImage &img, const std::string &path) {
    const std::string ext = detail::lower_extension(path);
    if (ext == "png") return write_png(img, path);
    if (ext == "ppm") return write_ppm(img, path);
    throw UsageError("unknown image format '" + path + "' (expected .png or .ppm)");
}

inline RgbImage
read_image(const std::string &path) {
    const std::string ext = detail::lower_extension(path);
    if (ext == "png") return read_png(path);
    if (ext == "ppm") return read_ppm(path);
    throw UsageError("unknown image format '" + path + "' (expected .png or .ppm)");
}

/// Grayscale PFM ("Pf"), little-endian, rows stored bottom to top.
inline void
write_pfm(const ScalarMap &map, const std::string &path) {
    auto out = detail::open_output(path, true);
    out << "Pf\n" << map.width() << " " << map.height() << "\n-1.0\n";
    std::vector<float> row(map.width());
    for (int y = map.height() - 1; y >= 0; --y) {
        for (int x = 0; x < map.width(); ++x) row[x] = float(map.at(x, y));
        out.write(reinterpret_cast<const char *>(row.data()), std::streamsize(row.size() * sizeof(float)));
    }
}

inline ScalarMap
read_pfm(const std::string &path) {
    auto in = detail::open_input(path, true);
    std::string magic;
    int w = 0, h = 0;
    double scale = 0.0;
    in >> magic >> w >> h >> scale;
    if (magic != "Pf" || w <= 0 || h <= 0 || scale >= 0.0)
        throw FormatError("'" + path + "' is not a little-endian grayscale PFM");
    in.get();
    ScalarMap map(w, h);
    std::vector<float> row(w);
    for (int y = h - 1; y >= 0; --y) {
        in.read(reinterpret_cast<char *>(row.data()), std::streamsize(row.size() * sizeof(float)));
        if (in.gcount() != std::streamsize(row.size() * sizeof(float)))
            throw FormatError("'" + path + "': data shorter than the declared size");
        for (int x = 0; x < w; ++x) map.at(x, y) = row[x];
    }
    return map;
}

// ---------------------------------------------------------------------------
// Flow

inline constexpr float kFloMagic        = 202021.25f;
inline constexpr float kFloUnknownValue = 1e10f;

/// Invalid pixels are written as (1e10, 1e10); on read any component above
/// 1e9 in magnitude marks the pixel invalid.
inline void
write_flow(const FlowField &flow, const std::string &path) {
    auto out = detail::open_output(path, true);
    const float magic = kFloMagic;
    const std::int32_t w = flow.width, h = flow.height;
    out.write(reinterpret_cast<const char *>(&magic), 4);
    out.write(reinterpret_cast<const char *>(&w), 4);
    out.write(reinterpret_cast<const char *>(&h), 4);
    std::vector<float> data = flow.uv;
    for (std::size_t i = 0; i < flow.valid.size(); ++i)
        if (!flow.valid[i]) data[2 * i] = data[2 * i + 1] = kFloUnknownValue;
    out.write(reinterpret_cast<const char *>(data.data()), std::streamsize(data.size() * sizeof(float)));
}

inline FlowField
read_flow(const std::string &path) {
    auto in = detail::open_input(path, true);
    float magic = 0.0f;
    std::int32_t w = 0, h = 0;
    in.read(reinterpret_cast<char *>(&magic), 4);
    in.read(reinterpret_cast<char *>(&w), 4);
    in.read(reinterpret_cast<char *>(&h), 4);
    if (!in || magic != kFloMagic) throw FormatError("'" + path + "' is not a .flo file");
    if (w <= 0 || h <= 0 || w > (1 << 16) || h > (1 << 16))
        throw FormatError("'" + path + "' declares an invalid size " + std::to_string(w) + "x" + std::to_string(h));
    FlowField flow(w, h);
    in.read(reinterpret_cast<char *>(flow.uv.data()), std::streamsize(flow.uv.size() * sizeof(float)));
    if (in.gcount() != std::streamsize(flow.uv.size() * sizeof(float)))
        throw FormatError("'" + path + "': flow data does not match the declared " + std::to_string(w) + "x" +
                          std::to_string(h));
    if (in.peek() != std::char_traits<char>::eof())
        throw FormatError("'" + path + "': trailing data after the declared " + std::to_string(w) + "x" +
                          std::to_string(h) + " field");
    for (std::size_t i = 0; i < flow.valid.size(); ++i) {
        const float u = flow.uv[2 * i], v = flow.uv[2 * i + 1];
        if (!(std::abs(u) <= 1e9f) || !(std::abs(v) <= 1e9f)) flow.valid[i] = 0;
    }
    return flow;
}

// ---------------------------------------------------------------------------
// Sparse points

inline void
validate_points(const SparsePointSet &set, int cameraCount) {
    for (std::size_t i = 0; i < set.points.size(); ++i)
        for (int c : set.points[i].cameras)
            if (c < 0 || c >= cameraCount)
                throw DataError("point " + std::to_string(i) + " references unknown camera " + std::to_string(c));
}

inline SparsePointSet
load_points(const std::string &path, int cameraCount = -1) {
    auto in = detail::open_input(path, false);
    SparsePointSet set;
    std::string line;
    int lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        SparsePointSet::Point p;
        if (!(ls >> p.position.x())) continue;
        if (!(ls >> p.position.y() >> p.position.z()))
            throw FormatError(path + ":" + std::to_string(lineNo) + ": expected x y z");
        int cam;
        while (ls >> cam) p.cameras.push_back(cam);
        if (!ls.eof()) throw FormatError(path + ":" + std::to_string(lineNo) + ": bad camera id");
        set.points.push_back(std::move(p));
    }
    if (cameraCount >= 0) validate_points(set, cameraCount);
    return set;
}

inline void
save_points(const SparsePointSet &set, const std::string &path) {
    auto out = detail::open_output(path, false);
    out << std::setprecision(17);
    for (const auto &p : set.points) {
        out << p.position.x() << ' ' << p.position.y() << ' ' << p.position.z();
        for (int c : p.cameras) out << ' ' << c;
        out << '\n';
    }
}

} // namespace sortsplat
