// Command-line surface: train / render / update / eval.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include "objsplat/io.hpp"
#include "objsplat/metrics.hpp"
#include "objsplat/scene_update.hpp"
#include "objsplat/trainer.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace objsplat;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json transform_to_json(const RigidTransform& rt) {
    json j;
    std::vector<double> r;
    for (int i = 0; i < 3; ++i)
        for (int c = 0; c < 3; ++c) r.push_back(rt.rotation(i, c));
    j["rotation"] = r;
    j["translation"] = {rt.translation.x(), rt.translation.y(), rt.translation.z()};
    j["rms"] = rt.rms;
    return j;
}

int run_train(const std::string& dataset_path, const std::string& out_path,
              const std::string& config_path, std::optional<uint64_t> seed,
              std::optional<int> iterations, std::optional<int> init_count, int log_every) {
    auto t0 = std::chrono::steady_clock::now();
    Dataset ds = load_dataset(dataset_path);
    double preprocess_s = seconds_since(t0);

    TrainConfig cfg;
    if (!config_path.empty()) cfg = load_train_config(config_path, cfg);
    if (seed) cfg.seed = *seed;
    if (iterations) cfg.iterations = *iterations;
    if (init_count) cfg.init_count = *init_count;
    if (ds.bounds) cfg.bounds = ds.bounds;

    std::ofstream log(out_path + ".log");
    if (!log) throw DataError("train: cannot open log file " + out_path + ".log");
    auto sink = [&](const TrainLogRecord& r) {
        if (r.iteration % log_every != 0 && r.iteration != cfg.iterations) return;
        json j;
        j["iter"] = r.iteration;
        j["total"] = r.total;
        j["color"] = r.color;
        j["mask"] = r.mask;
        j["onehot"] = r.onehot;
        j["object"] = r.object;
        j["gaussians"] = r.gaussian_count;
        j["wall_s"] = r.wall_s;
        log << j.dump() << "\n";
    };

    auto t1 = std::chrono::steady_clock::now();
    SceneSnapshot scene = train(ds.views, ds.palette, cfg, sink);
    double optimize_s = seconds_since(t1);

    save_scene(scene, out_path);
    export_ply(scene, out_path + ".ply");
    EfficiencyReport report = make_efficiency_report(preprocess_s, optimize_s, long(scene.size()));
    write_json(efficiency_to_json(report), out_path + ".report.json");
    std::printf("trained %zu gaussians in %.1f s (preprocess %.1f s) -> %s\n", scene.size(),
                optimize_s, preprocess_s, out_path.c_str());
    return 0;
}

int run_render(const std::string& scene_path, const std::string& dataset_path,
               const std::string& camera_id, const std::string& out_dir) {
    SceneSnapshot scene = load_scene(scene_path);
    Dataset ds = load_dataset(dataset_path);
    auto it = ds.cameras.find(camera_id);
    if (it == ds.cameras.end()) throw DataError("render: unknown camera id '" + camera_id + "'");
    fs::create_directories(out_dir);

    RenderOutput out = render(scene, it->second);
    write_ppm(out.rgb, (fs::path(out_dir) / "rgb.ppm").string());
    write_ppm(out.mask, (fs::path(out_dir) / "mask.ppm").string());
    write_depth16(out.depth, out.alpha, 0.5, (fs::path(out_dir) / "depth.pgm").string());
    write_pgm8(out.alpha, (fs::path(out_dir) / "alpha.pgm").string());
    std::printf("rendered camera %s -> %s\n", camera_id.c_str(), out_dir.c_str());
    return 0;
}

int run_update(const std::string& scene_path, const std::vector<int>& remove_ids,
               const std::string& post_view_path, int post_view_index,
               const std::string& dataset_path, const std::string& out_path, SimConfig sim,
               bool no_sim, bool no_fill, bool no_gravity, int refine_iters,
               const std::string& trajectory_path) {
    UpdateRequest req;
    req.scene = load_scene(scene_path);
    req.removed_ids = remove_ids;

    Dataset post = load_dataset(post_view_path);
    if (post_view_index < 0 || post_view_index >= int(post.views.size()))
        throw DataError("update: post-view index out of range");
    req.post_view = post.views[post_view_index];

    if (!dataset_path.empty()) {
        Dataset ds = load_dataset(dataset_path);
        for (const auto& v : ds.views) req.depth_cameras.push_back(v.camera);
    }
    if (no_gravity) sim.gravity = Vec3::Zero();
    req.sim = sim;
    req.simulate_enabled = !no_sim;
    req.fill_interior = !no_fill;
    req.refine_iterations = refine_iters;

    UpdateResult result = apply_update(req);

    json summary;
    summary["simulated"] = result.simulated;
    summary["diverged"] = result.diverged;
    summary["particles"] = result.particle_count;
    summary["steps"] = result.sim.steps;
    summary["dt"] = result.sim.dt;
    summary["removed"] = remove_ids;
    summary["transforms"] = json::object();
    for (const auto& [obj, rt] : result.transforms)
        summary["transforms"][std::to_string(obj)] = transform_to_json(rt);
    write_json(summary, out_path + ".sim.json");

    save_scene(result.scene, out_path);
    export_ply(result.scene, out_path + ".ply");

    if (!trajectory_path.empty() && result.simulated) {
        // Rerun the simulation deterministically to dump the trajectory.
        // (Cheap relative to rendering and keeps the primary path lean.)
        std::ofstream dump(trajectory_path, std::ios::binary);
        if (!dump) throw DataError("update: cannot open trajectory file " + trajectory_path);
        SceneSnapshot base = remove_object(req.scene, req.removed_ids);
        std::vector<CameraView> cams = {
            make_top_down_camera(base.bounds, req.top_view_size, req.top_view_size)};
        for (const auto& c : req.depth_cameras) cams.push_back(c);
        std::vector<SurfacePoint> surface;
        for (const auto& cam : cams) {
            auto pts = depth_to_surface(render(base, cam), cam, 0);
            surface.insert(surface.end(), pts.begin(), pts.end());
        }
        if (req.fill_interior) surface = fill_interior(surface, req.sim.particle_spacing);
        ParticleSystem particles =
            sample_particles(surface, req.sim.particle_spacing, req.sim.material);
        simulate(particles, req.sim, [&](int step, const ParticleSystem& sys) {
            for (size_t i = 0; i < sys.particles.size(); ++i) {
                int32_t rec[2] = {int32_t(step), int32_t(i)};
                float xyz[3] = {float(sys.particles[i].position.x()),
                                float(sys.particles[i].position.y()),
                                float(sys.particles[i].position.z())};
                dump.write(reinterpret_cast<const char*>(rec), 8);
                dump.write(reinterpret_cast<const char*>(xyz), 12);
            }
        });
    }

    if (result.diverged) {
        std::fprintf(stderr, "update: simulation diverged (%s); pre-simulation scene saved\n",
                     result.message.c_str());
        return 3;
    }
    std::printf("updated scene (%d particles simulated) -> %s\n", result.particle_count,
                out_path.c_str());
    return 0;
}

int run_eval(const std::string& scene_path, const std::string& dataset_path,
             const std::string& gt_depth_dir, const std::string& out_path) {
    SceneSnapshot scene = load_scene(scene_path);
    Dataset ds = load_dataset(dataset_path);

    json report;
    report["views"] = json::array();
    std::vector<double> pooled_pred, pooled_gt;
    std::vector<uint8_t> pooled_mask;

    for (size_t vi = 0; vi < ds.views.size(); ++vi) {
        const TrainingView& view = ds.views[vi];
        char name[64];
        std::snprintf(name, sizeof(name), "depth_%03zu.pgm", vi);
        std::string gt_path = (fs::path(gt_depth_dir) / name).string();
        if (!fs::exists(gt_path)) throw DataError("eval: missing ground truth " + gt_path);
        ImageXd gt = read_depth16(gt_path);
        if (gt.width != view.camera.width || gt.height != view.camera.height)
            throw DataError("eval: ground truth size differs for " + gt_path);

        RenderOutput out = render(scene, view.camera);
        ImageXd pred(out.depth.width, out.depth.height, 1);
        for (size_t i = 0; i < pred.data.size(); ++i)
            pred.data[i] = out.alpha.data[i] >= 0.5 ? out.depth.data[i] : 0.0;

        // Valid pixels: ground-truth object area.
        std::vector<uint8_t> mask(view.labels.size());
        for (size_t i = 0; i < mask.size(); ++i)
            mask[i] = view.labels[i] != uint8_t(ds.object_count) ? 1 : 0;

        DepthMetrics m = depth_metrics(pred, gt, mask);
        json vj = metrics_to_json(m);
        vj["view"] = int(vi);
        report["views"].push_back(vj);

        pooled_pred.insert(pooled_pred.end(), pred.data.begin(), pred.data.end());
        pooled_gt.insert(pooled_gt.end(), gt.data.begin(), gt.data.end());
        pooled_mask.insert(pooled_mask.end(), mask.begin(), mask.end());
    }

    ImageXd pred_all(int(pooled_pred.size()), 1, 1), gt_all(int(pooled_gt.size()), 1, 1);
    pred_all.data = pooled_pred;
    gt_all.data = pooled_gt;
    DepthMetrics aggregate = depth_metrics(pred_all, gt_all, pooled_mask);
    report["aggregate"] = metrics_to_json(aggregate);
    write_json(report, out_path);
    std::printf("eval: aggregate MAE %.4f m RMSE %.4f m over %ld pixels -> %s\n", aggregate.mae,
                aggregate.rmse, aggregate.valid_pixels, out_path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Object-centric 2D gaussian splatting: depth reconstruction with "
                 "physics-based scene updates"};
    app.require_subcommand(1);

    // train
    auto* train_cmd = app.add_subcommand("train", "Optimize a scene from a dataset");
    std::string dataset_path, out_path, config_path;
    std::optional<uint64_t> seed;
    std::optional<int> iterations, init_count;
    int log_every = 10;
    train_cmd->add_option("--dataset", dataset_path, "Dataset manifest (json)")->required();
    train_cmd->add_option("--out", out_path, "Output scene file")->required();
    train_cmd->add_option("--config", config_path, "Training config overrides (json)");
    train_cmd->add_option("--seed", seed, "PRNG seed");
    train_cmd->add_option("--iterations", iterations, "Optimization iterations");
    train_cmd->add_option("--init-count", init_count, "Random-init gaussian count");
    train_cmd->add_option("--log-every", log_every, "Progress log stride")->default_val(10);

    // render
    auto* render_cmd = app.add_subcommand("render", "Render a scene from a dataset camera");
    std::string r_scene, r_dataset, r_camera, r_out;
    render_cmd->add_option("--scene", r_scene, "Scene file")->required();
    render_cmd->add_option("--dataset", r_dataset, "Dataset manifest (for cameras)")->required();
    render_cmd->add_option("--camera", r_camera, "Camera id")->required();
    render_cmd->add_option("--out", r_out, "Output directory")->required();

    // update
    auto* update_cmd = app.add_subcommand("update", "Remove objects, simulate, refine");
    std::string u_scene, u_post, u_dataset, u_out, u_traj;
    std::vector<int> u_remove;
    int u_post_index = 0, u_refine = 100;
    SimConfig sim;
    bool no_sim = false, no_fill = false, no_gravity = false;
    update_cmd->add_option("--scene", u_scene, "Scene file at t=0")->required();
    update_cmd->add_option("--remove", u_remove, "Object ids to remove")
        ->required()
        ->delimiter(',');
    update_cmd->add_option("--post-view", u_post, "Manifest holding the post-change view")
        ->required();
    update_cmd->add_option("--post-view-index", u_post_index, "View index in the post manifest");
    update_cmd->add_option("--dataset", u_dataset, "Original manifest (cameras for meshing)");
    update_cmd->add_option("--out", u_out, "Output scene file")->required();
    update_cmd->add_option("--sim-steps", sim.steps, "Simulation step count");
    update_cmd->add_option("--sim-duration", sim.duration, "Simulated seconds (overrides steps)");
    update_cmd->add_option("--sim-spacing", sim.particle_spacing, "Particle spacing (m)");
    update_cmd->add_option("--sim-dx-factor", sim.grid_dx_factor, "Grid dx / particle spacing");
    update_cmd->add_option("--refine-iters", u_refine, "Refinement iterations");
    update_cmd->add_flag("--no-sim", no_sim, "Skip simulation (removal + refinement only)");
    update_cmd->add_flag("--no-fill", no_fill, "Skip interior particle fill");
    update_cmd->add_flag("--no-gravity", no_gravity, "Zero gravity (diagnostics)");
    update_cmd->add_option("--dump-trajectory", u_traj, "Binary per-step particle dump");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Depth metrics against ground truth");
    std::string e_scene, e_dataset, e_gt, e_out;
    eval_cmd->add_option("--scene", e_scene, "Scene file")->required();
    eval_cmd->add_option("--dataset", e_dataset, "Dataset manifest")->required();
    eval_cmd->add_option("--gt-depth", e_gt, "Directory of depth_###.pgm ground truth")
        ->required();
    eval_cmd->add_option("--out", e_out, "Report path (json)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (train_cmd->parsed())
            return run_train(dataset_path, out_path, config_path, seed, iterations, init_count,
                             std::max(1, log_every));
        if (render_cmd->parsed()) return run_render(r_scene, r_dataset, r_camera, r_out);
        if (update_cmd->parsed())
            return run_update(u_scene, u_remove, u_post, u_post_index, u_dataset, u_out, sim,
                              no_sim, no_fill, no_gravity, u_refine, u_traj);
        if (eval_cmd->parsed()) return run_eval(e_scene, e_dataset, e_gt, e_out);
    } catch (const SimulationDiverged& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    }
    return 1;
}
