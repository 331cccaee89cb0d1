// Copyright Contributors to the sortsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// sortsplat render|compare|eval|bench|fixture
//
// Every command reads an optional JSON config (--config); individual flags
// override its keys. Exit codes: 0 success, 1 usage or configuration error,
// 2 runtime data error.
//
#include "sortsplat/sortsplat.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using json   = nlohmann::json;
using namespace sortsplat;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData  = 2;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    std::string scene;
    std::string cameras;
    std::string points;
    std::string output = "out";
    std::string mode   = "hier";
    std::vector<std::string> modes;
    double epsilon     = kOpacityEpsilon;
    double termination = 1e-4;
    std::vector<double> background = {0.0, 0.0, 0.0};
    int interpolate = 0;
    std::vector<int> offsets = {1, 7};
    std::vector<std::string> metrics = {"flip", "mse", "psnr", "depth"};
    int workers   = default_worker_count();
    std::uint64_t seed = 1;
    int count     = 100;
    bool transpose_rotation = false;
    bool write_depth         = false;
    bool write_transmittance = false;
    std::string format = "gauss";
    int repeats = 1;
};

// Flags that were given on the command line override config-file values.
struct Overrides {
    std::string config;
    std::optional<std::string> scene, cameras, points, output, mode, format;
    std::vector<std::string> modes, metrics;
    std::optional<double> epsilon, termination;
    std::vector<double> background;
    std::optional<int> interpolate, workers, count, repeats;
    std::vector<int> offsets;
    std::optional<std::uint64_t> seed;
    bool transpose = false, depth = false, transmittance = false;
};

void
add_common(CLI::App *cmd, Overrides &o) {
    cmd->add_option("-c,--config", o.config, "JSON run configuration");
    cmd->add_option("--scene", o.scene, "scene file (.ply or .gauss)");
    cmd->add_option("--cameras", o.cameras, "cameras JSON");
    cmd->add_option("-o,--output", o.output, "output directory");
    cmd->add_option("--mode", o.mode, "sort mode: globalz, full, window:K, hier[:T/M/H]");
    cmd->add_option("--epsilon", o.epsilon, "opacity culling threshold");
    cmd->add_option("--termination", o.termination, "early termination transmittance");
    cmd->add_option("--background", o.background, "background RGB")->expected(3);
    cmd->add_option("--interpolate", o.interpolate, "frames inserted between consecutive cameras");
    cmd->add_option("--workers", o.workers, "worker threads (default: SORTSPLAT_WORKERS or hardware)");
    cmd->add_flag("--transpose-rotation", o.transpose, "camera rotations are stored camera-to-world");
}

template <typename T>
void
read_key(const json &doc, const char *key, T &out) {
    if (!doc.contains(key)) return;
    try {
        out = doc.at(key).get<T>();
    } catch (const json::exception &e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

RunConfig
resolve(const Overrides &o) {
    RunConfig cfg;
    if (!o.config.empty()) {
        std::ifstream in(o.config);
        if (!in) throw ConfigError("cannot open config '" + o.config + "'");
        json doc;
        try {
            doc = json::parse(in);
        } catch (const json::parse_error &e) {
            throw ConfigError("config '" + o.config + "': " + e.what());
        }
        if (!doc.is_object()) throw ConfigError("config must be a JSON object");
        static const char *known[] = {"scene",   "cameras", "points",      "output",     "mode",
                                      "modes",   "epsilon", "termination", "background", "interpolate",
                                      "offsets", "metrics", "workers",     "seed",       "count",
                                      "transpose_rotation", "depth", "transmittance", "format", "repeats"};
        for (const auto &[key, value] : doc.items()) {
            (void)value;
            if (std::find(std::begin(known), std::end(known), key) == std::end(known))
                throw ConfigError("unknown config key '" + key + "'");
        }
        read_key(doc, "scene", cfg.scene);
        read_key(doc, "cameras", cfg.cameras);
        read_key(doc, "points", cfg.points);
        read_key(doc, "output", cfg.output);
        read_key(doc, "mode", cfg.mode);
        read_key(doc, "modes", cfg.modes);
        read_key(doc, "epsilon", cfg.epsilon);
        read_key(doc, "termination", cfg.termination);
        read_key(doc, "background", cfg.background);
        read_key(doc, "interpolate", cfg.interpolate);
        read_key(doc, "offsets", cfg.offsets);
        read_key(doc, "metrics", cfg.metrics);
        read_key(doc, "workers", cfg.workers);
        read_key(doc, "seed", cfg.seed);
        read_key(doc, "count", cfg.count);
        read_key(doc, "transpose_rotation", cfg.transpose_rotation);
        read_key(doc, "depth", cfg.write_depth);
        read_key(doc, "transmittance", cfg.write_transmittance);
        read_key(doc, "format", cfg.format);
        read_key(doc, "repeats", cfg.repeats);
    }
    if (o.scene) cfg.scene = *o.scene;
    if (o.cameras) cfg.cameras = *o.cameras;
    if (o.points) cfg.points = *o.points;
    if (o.output) cfg.output = *o.output;
    if (o.mode) cfg.mode = *o.mode;
    if (o.format) cfg.format = *o.format;
    if (!o.modes.empty()) cfg.modes = o.modes;
    if (!o.metrics.empty()) cfg.metrics = o.metrics;
    if (o.epsilon) cfg.epsilon = *o.epsilon;
    if (o.termination) cfg.termination = *o.termination;
    if (!o.background.empty()) cfg.background = o.background;
    if (o.interpolate) cfg.interpolate = *o.interpolate;
    if (o.workers) cfg.workers = *o.workers;
    if (o.count) cfg.count = *o.count;
    if (o.repeats) cfg.repeats = *o.repeats;
    if (!o.offsets.empty()) cfg.offsets = o.offsets;
    if (o.seed) cfg.seed = *o.seed;
    if (o.transpose) cfg.transpose_rotation = true;
    if (o.depth) cfg.write_depth = true;
    if (o.transmittance) cfg.write_transmittance = true;

    if (cfg.workers < 1) throw ConfigError("workers must be >= 1");
    if (cfg.interpolate < 0) throw ConfigError("interpolate must be >= 0");
    if (cfg.background.size() != 3) throw ConfigError("background needs 3 values");
    if (!(cfg.epsilon > 0.0 && cfg.epsilon < 1.0)) throw ConfigError("epsilon must lie in (0, 1)");
    if (!(cfg.termination >= 0.0 && cfg.termination < 1.0)) throw ConfigError("termination must lie in [0, 1)");
    if (cfg.repeats < 1) throw ConfigError("repeats must be >= 1");
    for (int t : cfg.offsets)
        if (t < 1) throw ConfigError("offsets must be >= 1");
    return cfg;
}

void
require_inputs(const RunConfig &cfg) {
    if (cfg.scene.empty()) throw ConfigError("no scene given (--scene or config key 'scene')");
    if (cfg.cameras.empty()) throw ConfigError("no cameras given (--cameras or config key 'cameras')");
    if (!fs::exists(cfg.scene)) throw ConfigError("scene '" + cfg.scene + "' does not exist");
    if (!fs::exists(cfg.cameras)) throw ConfigError("cameras '" + cfg.cameras + "' does not exist");
    if (!cfg.points.empty() && !fs::exists(cfg.points))
        throw ConfigError("points '" + cfg.points + "' does not exist");
}

SortMode
parse_mode_or_config_error(const std::string &text) {
    try {
        return parse_mode(text);
    } catch (const UsageError &e) {
        throw ConfigError(e.what());
    }
}

RenderConfig
render_config(const RunConfig &cfg) {
    RenderConfig rc;
    rc.epsilon     = cfg.epsilon;
    rc.termination = cfg.termination;
    rc.background  = Vec3(cfg.background[0], cfg.background[1], cfg.background[2]);
    rc.workers     = cfg.workers;
    return rc;
}

struct Inputs {
    Scene scene;
    std::vector<Camera> cameras;
};

Inputs
load_inputs(const RunConfig &cfg) {
    require_inputs(cfg);
    Inputs in;
    in.scene = load_scene(cfg.scene);
    const auto keys =
        load_cameras(cfg.cameras, cfg.transpose_rotation ? RotationConvention::ViewToWorld : RotationConvention::WorldToView);
    if (keys.empty()) throw DataError("camera file '" + cfg.cameras + "' is empty");
    in.cameras = interpolate_cameras(keys, cfg.interpolate);
    return in;
}

std::vector<SortMode>
resolve_modes(const RunConfig &cfg, std::vector<std::string> fallback) {
    const auto &names = cfg.modes.empty() ? fallback : cfg.modes;
    std::vector<SortMode> modes;
    for (const auto &n : names) modes.push_back(parse_mode_or_config_error(n));
    return modes;
}

json
camera_json(const Camera &c) {
    return cameras_to_json({c})[0];
}

void
write_json(const json &doc, const fs::path &path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << doc.dump(2) << "\n";
}

std::string
frame_name(const char *prefix, std::size_t i, const char *ext) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%04zu.%s", prefix, i, ext);
    return buf;
}

double
ms_since(std::chrono::steady_clock::time_point t) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t).count();
}

// Renders one frame and records stage timings.
FrameOutput
timed_render(const Scene &scene, const Camera &cam, const SortMode &mode, const RenderConfig &rc, double *totalMs) {
    const auto start          = std::chrono::steady_clock::now();
    const PreparedFrame frame = prepare_frame(scene, cam, mode, rc);
    FrameOutput out           = render_prepared(frame, mode, rc);
    if (totalMs) *totalMs = ms_since(start);
    return out;
}

// ---------------------------------------------------------------------------

int
cmd_render(const RunConfig &cfg) {
    const SortMode mode = parse_mode_or_config_error(cfg.mode);
    const Inputs in     = load_inputs(cfg);
    fs::create_directories(cfg.output);
    RenderConfig rc  = render_config(cfg);
    rc.capture_depth = cfg.write_depth;

    json frames = json::array();
    int failures = 0;
    for (std::size_t i = 0; i < in.cameras.size(); ++i) {
        json entry{{"frame", i}, {"camera", camera_json(in.cameras[i])}};
        try {
            double total = 0.0;
            FrameOutput out = timed_render(in.scene, in.cameras[i], mode, rc, &total);
            const std::string png = frame_name("frame", i, "png");
            write_image(out.color, (fs::path(cfg.output) / png).string());
            entry["image"] = png;
            if (cfg.write_depth) {
                const std::string name = frame_name("depth", i, "pfm");
                write_pfm(out.depth, (fs::path(cfg.output) / name).string());
                entry["depth"] = name;
            }
            if (cfg.write_transmittance) {
                const std::string name = frame_name("transmittance", i, "pfm");
                write_pfm(out.transmittance, (fs::path(cfg.output) / name).string());
                entry["transmittance"] = name;
            }
            entry["time_ms"]          = total;
            entry["nonfinite_pixels"] = out.stats.nonfinite_pixels;
        } catch (const std::exception &e) {
            ++failures;
            entry["error"] = e.what();
            std::cerr << "frame " << i << ": " << e.what() << "\n";
        }
        frames.push_back(entry);
    }
    json manifest{{"mode", mode_name(mode)},
                  {"scene", cfg.scene},
                  {"cameras", cfg.cameras},
                  {"interpolate", cfg.interpolate},
                  {"frame_count", frames.size()},
                  {"failed_frames", failures},
                  {"frames", frames}};
    write_json(manifest, fs::path(cfg.output) / "manifest.json");
    std::cout << "rendered " << frames.size() - failures << "/" << frames.size() << " frames to " << cfg.output << "\n";
    return failures ? kExitData : 0;
}

int
cmd_compare(const RunConfig &cfg) {
    const auto modes = resolve_modes(cfg, {"globalz", "window:8", "hier", "full"});
    if (modes.size() < 2) throw ConfigError("compare needs at least two modes");
    const Inputs in = load_inputs(cfg);
    fs::create_directories(cfg.output);
    RenderConfig rc    = render_config(cfg);
    rc.capture_records = true;

    struct Row {
        std::string name;
        double delta_max = 0.0, delta_avg = 0.0;
        double total_ms = 0.0, preprocess = 0.0, duplicate = 0.0, sort = 0.0, render = 0.0;
        std::vector<RgbImage> frames;
    };
    std::vector<Row> rows;
    for (const auto &mode : modes) {
        Row row;
        row.name = mode_name(mode);
        for (const auto &cam : in.cameras) {
            double total    = 0.0;
            FrameOutput out = timed_render(in.scene, cam, mode, rc, &total);
            const auto err  = sort_error(out);
            row.delta_max   = std::max(row.delta_max, err.delta_max);
            row.delta_avg += err.delta_avg / double(in.cameras.size());
            row.total_ms += total;
            row.preprocess += out.stats.preprocess_ms;
            row.duplicate += out.stats.duplicate_ms;
            row.sort += out.stats.sort_ms;
            row.render += out.stats.render_ms;
            row.frames.push_back(std::move(out.color));
        }
        rows.push_back(std::move(row));
    }

    json report{{"frames", in.cameras.size()}, {"modes", json::array()}, {"pairwise_max_abs_diff", json::array()}};
    std::ostringstream table;
    char line[256];
    std::snprintf(line, sizeof(line), "%-16s %12s %12s %12s %10s %10s %10s %10s\n", "mode", "delta_max", "delta_avg",
                  "total_ms", "preproc", "dup", "sort", "render");
    table << line;
    for (const auto &r : rows) {
        report["modes"].push_back({{"mode", r.name},
                                   {"delta_max", r.delta_max},
                                   {"delta_avg", r.delta_avg},
                                   {"total_ms", r.total_ms},
                                   {"stages_ms",
                                    {{"preprocess", r.preprocess},
                                     {"duplicate", r.duplicate},
                                     {"sort", r.sort},
                                     {"render", r.render}}}});
        std::snprintf(line, sizeof(line), "%-16s %12.6f %12.6f %12.2f %10.2f %10.2f %10.2f %10.2f\n", r.name.c_str(),
                      r.delta_max, r.delta_avg, r.total_ms, r.preprocess, r.duplicate, r.sort, r.render);
        table << line;
    }
    table << "\npairwise max |a - b|\n";
    for (std::size_t a = 0; a < rows.size(); ++a)
        for (std::size_t b = a + 1; b < rows.size(); ++b) {
            double diff = 0.0;
            for (std::size_t f = 0; f < in.cameras.size(); ++f)
                diff = std::max(diff, max_abs_diff(rows[a].frames[f], rows[b].frames[f]));
            report["pairwise_max_abs_diff"].push_back({{"a", rows[a].name}, {"b", rows[b].name}, {"value", diff}});
            std::snprintf(line, sizeof(line), "  %-16s %-16s %.6f\n", rows[a].name.c_str(), rows[b].name.c_str(), diff);
            table << line;
        }
    write_json(report, fs::path(cfg.output) / "report.json");
    std::ofstream(fs::path(cfg.output) / "report.txt") << table.str();
    std::cout << table.str();
    return 0;
}

int
cmd_eval(const RunConfig &cfg) {
    const auto modes = resolve_modes(cfg, {"globalz", "hier", "full"});
    const Inputs in  = load_inputs(cfg);
    fs::create_directories(cfg.output);
    RenderConfig rc  = render_config(cfg);
    rc.capture_depth = true;

    auto wants = [&](const char *m) { return std::find(cfg.metrics.begin(), cfg.metrics.end(), m) != cfg.metrics.end(); };
    for (const auto &m : cfg.metrics)
        if (m != "flip" && m != "mse" && m != "psnr" && m != "depth") throw ConfigError("unknown metric '" + m + "'");
    for (int t : cfg.offsets)
        if ((wants("flip") || wants("mse")) && int(in.cameras.size()) < t + 1)
            throw ConfigError("offset " + std::to_string(t) + " needs at least " + std::to_string(t + 1) +
                              " frames, trajectory has " + std::to_string(in.cameras.size()));

    std::vector<std::vector<RgbImage>> frames(modes.size());
    std::vector<DepthFlowSource> flows(modes.size());
    for (std::size_t m = 0; m < modes.size(); ++m) {
        flows[m].cameras = in.cameras;
        for (const auto &cam : in.cameras) {
            FrameOutput out = render(in.scene, cam, modes[m], rc);
            frames[m].push_back(std::move(out.color));
            flows[m].depth.push_back(std::move(out.depth));
            flows[m].transmittance.push_back(std::move(out.transmittance));
        }
    }
    FlowProvider provider = [&](std::size_t m, int i, int j) { return flows[m].pair(i, j); };
    ConsistencyConfig cc;
    cc.workers = cfg.workers;

    json report{{"frames", in.cameras.size()}, {"offsets", cfg.offsets}, {"modes", json::array()}};
    std::vector<json> rows(modes.size());
    for (std::size_t m = 0; m < modes.size(); ++m) rows[m] = {{"mode", mode_name(modes[m])}};
    for (const char *metric : {"flip", "mse"}) {
        if (!wants(metric)) continue;
        const auto kind = std::string(metric) == "flip" ? ConsistencyMetric::Flip : ConsistencyMetric::Mse;
        for (int t : cfg.offsets) {
            const auto values = view_consistency(frames, provider, t, kind, cc);
            for (std::size_t m = 0; m < modes.size(); ++m)
                rows[m][std::string(metric) + "_t"][std::to_string(t)] = values[m];
        }
    }
    if (wants("psnr")) {
        // reference: exact per-ray sort
        std::vector<RgbImage> reference;
        for (const auto &cam : in.cameras) reference.push_back(render(in.scene, cam, FullPerPixel{}, rc).color);
        // PSNR of the mean squared error over the whole trajectory
        for (std::size_t m = 0; m < modes.size(); ++m) {
            double err = 0.0;
            for (std::size_t f = 0; f < reference.size(); ++f) err += mse(frames[m][f], reference[f]);
            err /= double(reference.size());
            rows[m]["psnr_vs_full"] = err == 0.0 ? json("inf") : json(10.0 * std::log10(1.0 / err));
        }
    }
    if (wants("depth") && !cfg.points.empty()) {
        const SparsePointSet points = load_points(cfg.points, int(in.cameras.size()));
        const auto rep = depth_error(in.scene, in.cameras, points, modes, rc);
        for (std::size_t m = 0; m < modes.size(); ++m)
            rows[m]["e_depth"] = rep.modes[m].e_depth ? json(*rep.modes[m].e_depth) : json(nullptr);
        report["depth_pairs"] = {{"evaluated", rep.evaluated}, {"excluded", rep.excluded}, {"outside", rep.outside}};
    }
    for (auto &r : rows) report["modes"].push_back(r);
    write_json(report, fs::path(cfg.output) / "report.json");

    std::ostringstream table;
    for (const auto &r : rows) {
        table << r["mode"].get<std::string>();
        for (const auto &[key, value] : r.items())
            if (key != "mode") table << "  " << key << "=" << value.dump();
        table << "\n";
    }
    std::ofstream(fs::path(cfg.output) / "report.txt") << table.str();
    std::cout << table.str();
    return 0;
}

int
cmd_bench(const RunConfig &cfg) {
    const auto modes = resolve_modes(cfg, {"globalz", "hier"});
    const Inputs in  = load_inputs(cfg);
    fs::create_directories(cfg.output);
    const RenderConfig rc = render_config(cfg);

    json report{{"frames", in.cameras.size()}, {"repeats", cfg.repeats}, {"modes", json::array()}};
    std::ostringstream table;
    char line[256];
    std::snprintf(line, sizeof(line), "%-16s %10s %10s %10s %10s %10s %12s %12s\n", "mode", "preproc", "dup", "sort",
                  "render", "total", "coarse", "sort_entries");
    table << line;
    for (const auto &mode : modes) {
        double pre = 0, dup = 0, sort = 0, ren = 0, total = 0;
        double coarse = 0, entries = 0;
        const double n = double(in.cameras.size() * cfg.repeats);
        for (int r = 0; r < cfg.repeats; ++r)
            for (const auto &cam : in.cameras) {
                double t        = 0.0;
                FrameOutput out = timed_render(in.scene, cam, mode, rc, &t);
                pre += out.stats.preprocess_ms / n;
                dup += out.stats.duplicate_ms / n;
                sort += out.stats.sort_ms / n;
                ren += out.stats.render_ms / n;
                total += t / n;
                coarse += double(out.stats.coarse_entries) / n;
                entries += double(out.stats.bin_entries) / n;
            }
        report["modes"].push_back({{"mode", mode_name(mode)},
                                   {"preprocess_ms", pre},
                                   {"duplicate_ms", dup},
                                   {"sort_ms", sort},
                                   {"render_ms", ren},
                                   {"total_ms", total},
                                   {"coarse_entries", coarse},
                                   {"sort_entries", entries}});
        std::snprintf(line, sizeof(line), "%-16s %10.3f %10.3f %10.3f %10.3f %10.3f %12.1f %12.1f\n",
                      mode_name(mode).c_str(), pre, dup, sort, ren, total, coarse, entries);
        table << line;
    }
    write_json(report, fs::path(cfg.output) / "bench.json");
    std::ofstream(fs::path(cfg.output) / "bench.txt") << table.str();
    std::cout << table.str();
    return 0;
}

int
cmd_fixture(const RunConfig &cfg, const std::string &name) {
    Fixture fx;
    try {
        fx = make_fixture(name, cfg.seed, cfg.count);
    } catch (const UsageError &e) {
        throw ConfigError(e.what());
    }
    if (cfg.format != "gauss" && cfg.format != "ply") throw ConfigError("format must be 'gauss' or 'ply'");
    fs::create_directories(cfg.output);
    const fs::path dir(cfg.output);
    const std::string sceneFile = "scene." + cfg.format;
    save_scene(fx.scene, (dir / sceneFile).string());
    save_cameras(fx.cameras, (dir / "cameras.json").string());
    json info{{"fixture", fx.name}, {"seed", cfg.seed}, {"gaussians", fx.scene.size()},
              {"cameras", fx.cameras.size()}, {"scene", sceneFile}};
    if (!fx.points.points.empty()) {
        save_points(fx.points, (dir / "points.txt").string());
        info["points"] = "points.txt";
    }
    write_json(info, dir / "fixture.json");
    std::cout << "wrote " << fx.name << " (" << fx.scene.size() << " gaussians, " << fx.cameras.size()
              << " cameras) to " << cfg.output << "\n";
    return 0;
}

} // namespace

int
main(int argc, char **argv) {
    CLI::App app{"Software Gaussian splatting rasterizer with per-ray sorted blending"};
    app.require_subcommand(1);

    Overrides o;
    auto *render = app.add_subcommand("render", "render a camera trajectory to images");
    add_common(render, o);
    render->add_flag("--depth", o.depth, "also write depth PFM files");
    render->add_flag("--transmittance", o.transmittance, "also write transmittance PFM files");

    auto *compare = app.add_subcommand("compare", "sort error and timing of several modes");
    add_common(compare, o);
    compare->add_option("--modes", o.modes, "modes to compare")->delimiter(',');

    auto *eval = app.add_subcommand("eval", "view consistency, depth error and PSNR");
    add_common(eval, o);
    eval->add_option("--modes", o.modes, "modes to evaluate")->delimiter(',');
    eval->add_option("--offsets", o.offsets, "frame offsets t")->delimiter(',');
    eval->add_option("--metrics", o.metrics, "flip, mse, psnr, depth")->delimiter(',');
    eval->add_option("--points", o.points, "sparse points (x y z cam...)");

    auto *bench = app.add_subcommand("bench", "per-stage timings");
    add_common(bench, o);
    bench->add_option("--modes", o.modes, "modes to time")->delimiter(',');
    bench->add_option("--repeats", o.repeats, "passes over the trajectory");

    std::string fixtureName;
    auto *fixture = app.add_subcommand("fixture", "write a synthetic scene and cameras");
    fixture->add_option("name", fixtureName, "fixture name")->required();
    fixture->add_option("-c,--config", o.config, "JSON run configuration");
    fixture->add_option("-o,--output", o.output, "output directory");
    fixture->add_option("--seed", o.seed, "random seed");
    fixture->add_option("--count", o.count, "Gaussian count (random-cloud, elongated)");
    fixture->add_option("--format", o.format, "scene format: gauss or ply");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        const RunConfig cfg = resolve(o);
        if (*render) return cmd_render(cfg);
        if (*compare) return cmd_compare(cfg);
        if (*eval) return cmd_eval(cfg);
        if (*bench) return cmd_bench(cfg);
        if (*fixture) return cmd_fixture(cfg, fixtureName);
    } catch (const ConfigError &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const UsageError &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
