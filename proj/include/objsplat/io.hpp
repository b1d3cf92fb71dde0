#pragma once

#include "objsplat/image.hpp"
#include "objsplat/metrics.hpp"
#include "objsplat/scene.hpp"
#include "objsplat/trainer.hpp"

#include <json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace objsplat {

using nlohmann::json;

/// Parsed dataset: training views with derived one-hot labels plus the
/// palette and camera registry. Background pixels are remapped to black in
/// both rgb and mask targets (the model renders objects only; background
/// supervises zero alpha).
struct Dataset {
    std::vector<TrainingView> views;
    std::vector<std::string> view_camera_ids;
    std::vector<Vec3> palette;
    int object_count = 0;
    std::optional<Bounds> bounds;
    std::map<std::string, CameraView> cameras;
};

namespace detail {

inline Vec3 color_from_json(const json& j) {
    if (!j.is_array() || j.size() != 3) throw DataError("manifest: color must be [r, g, b]");
    return Vec3(j[0].get<double>() / 255.0, j[1].get<double>() / 255.0, j[2].get<double>() / 255.0);
}

inline int color_key(const Vec3& c) {
    int r = int(std::lround(std::clamp(c[0], 0.0, 1.0) * 255.0));
    int g = int(std::lround(std::clamp(c[1], 0.0, 1.0) * 255.0));
    int b = int(std::lround(std::clamp(c[2], 0.0, 1.0) * 255.0));
    return (r << 16) | (g << 8) | b;
}

inline CameraView camera_from_json(const json& j) {
    CameraView cam;
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
    const auto& m = j.at("world_to_camera");
    if (!m.is_array() || (m.size() != 12 && m.size() != 16))
        throw DataError("manifest: world_to_camera must hold 12 or 16 row-major entries");
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) cam.rotation(r, c) = m[r * 4 + c].get<double>();
        cam.translation[r] = m[r * 4 + 3].get<double>();
    }
    cam.validate();
    return cam;
}

inline json camera_to_json(const CameraView& cam) {
    json j;
    j["fx"] = cam.fx;
    j["fy"] = cam.fy;
    j["cx"] = cam.cx;
    j["cy"] = cam.cy;
    j["width"] = cam.width;
    j["height"] = cam.height;
    std::vector<double> m;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) m.push_back(cam.rotation(r, c));
        m.push_back(cam.translation[r]);
    }
    for (int c = 0; c < 3; ++c) m.push_back(0.0);
    m.push_back(1.0);
    j["world_to_camera"] = m;
    return j;
}

}  // namespace detail

/// Loads a dataset manifest (JSON) and its referenced images. One-hot labels
/// come from exact palette matches; the declared background color maps to
/// the background channel; any other color is an error reported with its
/// pixel count.
inline Dataset load_dataset(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw DataError("load_dataset: cannot open " + manifest_path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("load_dataset: manifest parse error: " + std::string(e.what()));
    }
    std::filesystem::path root = std::filesystem::path(manifest_path).parent_path();

    Dataset ds;
    ds.object_count = j.at("object_count").get<int>();
    const auto& palette_json = j.at("palette");
    if (int(palette_json.size()) != ds.object_count)
        throw DataError("load_dataset: palette size must equal object_count");
    std::map<int, int> color_to_channel;
    for (int i = 0; i < ds.object_count; ++i) {
        Vec3 c = detail::color_from_json(palette_json[i]);
        ds.palette.push_back(c);
        if (!color_to_channel.emplace(detail::color_key(c), i).second)
            throw DataError("load_dataset: duplicate palette color for object " +
                            std::to_string(i));
    }
    Vec3 background = j.contains("background_color")
                          ? detail::color_from_json(j["background_color"])
                          : Vec3::Zero();
    if (color_to_channel.count(detail::color_key(background)))
        throw DataError("load_dataset: background color duplicates a palette color");
    color_to_channel[detail::color_key(background)] = ds.object_count;

    if (j.contains("bounds")) {
        Bounds b;
        for (int k = 0; k < 3; ++k) {
            b.min_pt[k] = j["bounds"]["min"][k].get<double>();
            b.max_pt[k] = j["bounds"]["max"][k].get<double>();
        }
        ds.bounds = b;
    }
    for (auto& [name, cj] : j.at("cameras").items()) ds.cameras[name] = detail::camera_from_json(cj);

    for (const auto& vj : j.at("views")) {
        TrainingView view;
        std::string cam_id = vj.at("camera").get<std::string>();
        auto cam_it = ds.cameras.find(cam_id);
        if (cam_it == ds.cameras.end())
            throw DataError("load_dataset: view references unknown camera '" + cam_id + "'");
        view.camera = cam_it->second;

        std::string rgb_path = (root / vj.at("rgb").get<std::string>()).string();
        std::string mask_path = (root / vj.at("mask").get<std::string>()).string();
        if (!std::filesystem::exists(rgb_path))
            throw DataError("load_dataset: missing rgb file " + rgb_path);
        if (!std::filesystem::exists(mask_path))
            throw DataError("load_dataset: missing mask file " + mask_path);
        view.rgb = read_ppm(rgb_path);
        view.mask_rgb = read_ppm(mask_path);
        if (view.rgb.width != view.camera.width || view.rgb.height != view.camera.height)
            throw DataError("load_dataset: rgb size differs from camera for " + rgb_path);
        if (view.mask_rgb.width != view.camera.width || view.mask_rgb.height != view.camera.height)
            throw DataError("load_dataset: mask size differs from camera for " + mask_path);

        view.labels.assign(size_t(view.camera.width) * view.camera.height,
                           uint8_t(ds.object_count));
        long unmatched = 0;
        int sample_key = -1;
        for (int y = 0; y < view.camera.height; ++y)
            for (int x = 0; x < view.camera.width; ++x) {
                Vec3 c(view.mask_rgb.at(y, x, 0), view.mask_rgb.at(y, x, 1),
                       view.mask_rgb.at(y, x, 2));
                auto it = color_to_channel.find(detail::color_key(c));
                if (it == color_to_channel.end()) {
                    ++unmatched;
                    sample_key = detail::color_key(c);
                    continue;
                }
                int channel = it->second;
                view.labels[size_t(y) * view.camera.width + x] = uint8_t(channel);
                if (channel == ds.object_count) {
                    // Background supervises zero alpha: black out both targets.
                    for (int k = 0; k < 3; ++k) {
                        view.mask_rgb.at(y, x, k) = 0.0;
                        view.rgb.at(y, x, k) = 0.0;
                    }
                } else {
                    for (int k = 0; k < 3; ++k) view.mask_rgb.at(y, x, k) = ds.palette[channel][k];
                }
            }
        if (unmatched > 0)
            throw DataError("load_dataset: " + std::to_string(unmatched) +
                            " mask pixels of " + mask_path + " have colors outside palette + " +
                            "background (example key " + std::to_string(sample_key) + ")");
        ds.views.push_back(std::move(view));
        ds.view_camera_ids.push_back(cam_id);
    }
    if (ds.views.empty()) throw DataError("load_dataset: manifest has no views");
    return ds;
}

inline constexpr char kSceneMagic[9] = "OSPLSC01";
inline constexpr uint32_t kSceneVersion = 1;

/// Lossless binary scene serialization with a versioned header.
inline void save_scene(const SceneSnapshot& scene, const std::string& path) {
    atomic_write(path, [&](const std::string& tmp) {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("save_scene: cannot open " + path);
        auto put = [&](const void* p, size_t n) {
            out.write(reinterpret_cast<const char*>(p), std::streamsize(n));
        };
        put(kSceneMagic, 8);
        uint32_t version = kSceneVersion;
        put(&version, 4);
        uint32_t nobj = uint32_t(scene.object_count);
        put(&nobj, 4);
        for (const auto& c : scene.palette) put(c.data(), 3 * sizeof(double));
        put(scene.bounds.min_pt.data(), 3 * sizeof(double));
        put(scene.bounds.max_pt.data(), 3 * sizeof(double));
        uint64_t count = scene.size();
        put(&count, 8);
        for (const auto& g : scene.gaussians) {
            put(g.mean.data(), 3 * sizeof(double));
            put(g.rotation.data(), 4 * sizeof(double));
            put(g.log_scale.data(), 2 * sizeof(double));
            put(&g.opacity_raw, sizeof(double));
            put(g.color.data(), 3 * sizeof(double));
            put(g.mask_color.data(), 3 * sizeof(double));
            put(g.object_logits.data(), size_t(g.object_logits.size()) * sizeof(double));
        }
        if (!out) throw DataError("save_scene: write failed for " + path);
    });
}

inline SceneSnapshot load_scene(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_scene: cannot open " + path);
    auto get = [&](void* p, size_t n) {
        in.read(reinterpret_cast<char*>(p), std::streamsize(n));
        if (!in) throw DataError("load_scene: truncated file " + path);
    };
    char magic[8];
    get(magic, 8);
    if (std::memcmp(magic, kSceneMagic, 8) != 0)
        throw DataError("load_scene: not a scene file: " + path);
    uint32_t version = 0;
    get(&version, 4);
    if (version != kSceneVersion)
        throw DataError("load_scene: unsupported version " + std::to_string(version) + " in " +
                        path);
    SceneSnapshot scene;
    uint32_t nobj = 0;
    get(&nobj, 4);
    scene.object_count = int(nobj);
    scene.palette.resize(nobj);
    for (auto& c : scene.palette) get(c.data(), 3 * sizeof(double));
    get(scene.bounds.min_pt.data(), 3 * sizeof(double));
    get(scene.bounds.max_pt.data(), 3 * sizeof(double));
    uint64_t count = 0;
    get(&count, 8);
    scene.gaussians.resize(count);
    for (auto& g : scene.gaussians) {
        get(g.mean.data(), 3 * sizeof(double));
        get(g.rotation.data(), 4 * sizeof(double));
        get(g.log_scale.data(), 2 * sizeof(double));
        get(&g.opacity_raw, sizeof(double));
        get(g.color.data(), 3 * sizeof(double));
        get(g.mask_color.data(), 3 * sizeof(double));
        g.object_logits = VecX::Zero(nobj + 1);
        get(g.object_logits.data(), size_t(nobj + 1) * sizeof(double));
    }
    return scene;
}

/// Point-cloud export of the gaussian means for external viewers: binary
/// little-endian PLY with per-object palette colors (background in gray).
inline void export_ply(const SceneSnapshot& scene, const std::string& path) {
    atomic_write(path, [&](const std::string& tmp) {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("export_ply: cannot open " + path);
        out << "ply\nformat binary_little_endian 1.0\n"
            << "element vertex " << scene.size() << "\n"
            << "property float x\nproperty float y\nproperty float z\n"
            << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
            << "end_header\n";
        for (const auto& g : scene.gaussians) {
            float xyz[3] = {float(g.mean.x()), float(g.mean.y()), float(g.mean.z())};
            out.write(reinterpret_cast<const char*>(xyz), 12);
            int obj = object_of(g);
            Vec3 c = obj < scene.object_count ? scene.palette[obj] : Vec3(0.5, 0.5, 0.5);
            unsigned char rgb[3];
            for (int k = 0; k < 3; ++k)
                rgb[k] = (unsigned char)std::lround(std::clamp(c[k], 0.0, 1.0) * 255.0);
            out.write(reinterpret_cast<const char*>(rgb), 3);
        }
        if (!out) throw DataError("export_ply: write failed for " + path);
    });
}

/// Partial overrides of TrainConfig from a JSON file; unknown keys are an
/// error so typos do not silently train with defaults.
inline TrainConfig load_train_config(const std::string& path, TrainConfig cfg = {}) {
    std::ifstream in(path);
    if (!in) throw DataError("load_train_config: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("load_train_config: parse error: " + std::string(e.what()));
    }
    for (auto& [key, value] : j.items()) {
        if (key == "iterations") cfg.iterations = value.get<int>();
        else if (key == "lr_mean") cfg.lr_mean = value.get<double>();
        else if (key == "lr_mean_final") cfg.lr_mean_final = value.get<double>();
        else if (key == "lr_rotation") cfg.lr_rotation = value.get<double>();
        else if (key == "lr_log_scale") cfg.lr_log_scale = value.get<double>();
        else if (key == "lr_opacity") cfg.lr_opacity = value.get<double>();
        else if (key == "lr_color") cfg.lr_color = value.get<double>();
        else if (key == "lr_mask_color") cfg.lr_mask_color = value.get<double>();
        else if (key == "lr_object_logits") cfg.lr_object_logits = value.get<double>();
        else if (key == "lr_object_logits_final") cfg.lr_object_logits_final = value.get<double>();
        else if (key == "object_logits_decay_iters")
            cfg.object_logits_decay_iters = value.get<int>();
        else if (key == "densify_enabled") cfg.densify_enabled = value.get<bool>();
        else if (key == "densify_interval") cfg.densify_interval = value.get<int>();
        else if (key == "densify_from") cfg.densify_from = value.get<int>();
        else if (key == "densify_until_frac") cfg.densify_until_frac = value.get<double>();
        else if (key == "densify_grad_threshold")
            cfg.densify_grad_threshold = value.get<double>();
        else if (key == "densify_scale_frac") cfg.densify_scale_frac = value.get<double>();
        else if (key == "prune_opacity") cfg.prune_opacity = value.get<double>();
        else if (key == "init_count") cfg.init_count = value.get<int>();
        else if (key == "use_object_loss") cfg.use_object_loss = value.get<bool>();
        else if (key == "seed") cfg.seed = value.get<uint64_t>();
        else if (key == "lambda_dssim") cfg.weights.lambda_dssim = value.get<double>();
        else if (key == "levels") {
            cfg.levels.clear();
            for (const auto& lv : value)
                cfg.levels.push_back({lv[0].get<int>(), lv[1].get<int>()});
        } else {
            throw DataError("load_train_config: unknown key '" + key + "'");
        }
    }
    return cfg;
}

inline json metrics_to_json(const DepthMetrics& m) {
    json j;
    j["MAE"] = m.mae;
    j["RMSE"] = m.rmse;
    const char* names[] = {"delta<0.5cm", "delta<1cm", "delta<2.5cm",
                           "delta<5cm",   "delta<10cm", "delta<20cm"};
    for (size_t t = 0; t < kDepthThresholds.size(); ++t) j[names[t]] = m.delta_pct[t];
    j["valid_pixels"] = m.valid_pixels;
    return j;
}

inline json efficiency_to_json(const EfficiencyReport& r) {
    json j;
    j["preprocess_s"] = r.preprocess_s;
    j["optimize_s"] = r.optimize_s;
    j["total_s"] = r.total_s;
    j["gaussian_count"] = r.gaussian_count;
    return j;
}

inline void write_json(const json& j, const std::string& path) {
    atomic_write(path, [&](const std::string& tmp) {
        std::ofstream out(tmp);
        if (!out) throw DataError("write_json: cannot open " + path);
        out << j.dump(2) << "\n";
    });
}

}  // namespace objsplat
