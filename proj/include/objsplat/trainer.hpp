#pragma once

#include "objsplat/adam.hpp"
#include "objsplat/image_losses.hpp"
#include "objsplat/object_loss.hpp"
#include "objsplat/rasterizer.hpp"
#include "objsplat/scene.hpp"

#include <chrono>
#include <functional>
#include <optional>
#include <vector>

namespace objsplat {

struct TrainConfig {
    int iterations = 7000;

    // Per-group learning rates. The mean rate decays log-linearly to its
    // final value over the whole run; the object-logit rate decays from 0.1
    // to 0.0025 over the first 1000 iterations and stays constant after.
    double lr_mean = 1.6e-4;
    double lr_mean_final = 1.6e-6;
    double lr_rotation = 1e-3;
    double lr_log_scale = 5e-3;
    double lr_opacity = 5e-2;
    double lr_color = 2.5e-3;
    double lr_mask_color = 2.5e-3;
    double lr_object_logits = 0.1;
    double lr_object_logits_final = 2.5e-3;
    int object_logits_decay_iters = 1000;

    bool densify_enabled = true;
    int densify_interval = 100;
    int densify_from = 500;
    double densify_until_frac = 0.6;     // of iterations
    double densify_grad_threshold = 2e-4;
    double densify_scale_frac = 0.01;    // split (vs clone) above this * extent
    double split_scale_shrink = 1.6;
    double prune_opacity = 5e-3;

    int init_count = 10000;
    bool use_object_loss = true;
    std::vector<GroupLevelConfig> levels = default_group_levels();
    LossWeights weights;
    uint64_t seed = 0;
    std::optional<Bounds> bounds;  // defaults to the camera-derived box
};

struct LossBreakdown {
    double total = 0;
    double color = 0;
    double mask = 0;
    double onehot = 0;
    double object = 0;
};

/// One line of the training progress log.
struct TrainLogRecord {
    int iteration = 0;
    double total = 0, color = 0, mask = 0, onehot = 0, object = 0;
    int gaussian_count = 0;
    double wall_s = 0;
};

using TrainLogSink = std::function<void(const TrainLogRecord&)>;

/// Random scene initialization: means uniform in bounds, scales at the mean
/// nearest-neighbor spacing estimate for `count` uniform points, opacity
/// 0.1, colors uniform, uniform object assignment.
inline SceneSnapshot init_random(const Bounds& bounds, int count, int object_count,
                                 uint64_t seed) {
    if (count < 1) throw DataError("init_random: count must be >= 1");
    if (!(bounds.volume() > 0)) throw DataError("init_random: bounds have zero volume");
    Rng rng(seed ^ 0x51A7F00Dull);
    SceneSnapshot scene;
    scene.object_count = object_count;
    scene.bounds = bounds;
    double nn_spacing = 0.5539 * std::cbrt(bounds.volume() / double(count));
    double log_s = std::log(nn_spacing);
    scene.gaussians.reserve(count);
    for (int i = 0; i < count; ++i) {
        Gaussian2D g;
        for (int k = 0; k < 3; ++k) g.mean[k] = rng.uniform(bounds.min_pt[k], bounds.max_pt[k]);
        Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
        g.rotation = q.norm() > 1e-6 ? Vec4(q / q.norm()) : Vec4(1, 0, 0, 0);
        g.log_scale = Vec2(log_s, log_s);
        g.opacity_raw = logit(0.1);
        g.color = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
        g.mask_color = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
        g.object_logits = VecX::Zero(object_count + 1);
        scene.gaussians.push_back(g);
    }
    return scene;
}

/// Weighted total loss of one view (Eq.-of-record: a_color * L_c +
/// a_mask * L_m + a_one_hot * L_onehot + L_obj) with gradients for every raw
/// gaussian parameter.
inline LossBreakdown total_loss(const SceneSnapshot& scene, const TrainingView& view,
                                const LossWeights& weights, bool use_object_loss,
                                const std::vector<GroupLevelConfig>& levels,
                                SceneGradients* grads_out = nullptr) {
    RenderOutput out = render(scene, view.camera);
    LossBreakdown terms;
    terms.color = l1_dssim(out.rgb, view.rgb, weights.lambda_dssim);
    terms.mask = l1_dssim(out.mask, view.mask_rgb, weights.lambda_dssim);
    terms.onehot = dice_onehot(out.onehot, view.labels);

    if (grads_out) {
        RenderOutput channel_grads(view.camera.width, view.camera.height, scene.object_count + 1);
        channel_grads.rgb = l1_dssim_backward(out.rgb, view.rgb, weights.lambda_dssim,
                                              weights.a_color);
        channel_grads.mask = l1_dssim_backward(out.mask, view.mask_rgb, weights.lambda_dssim,
                                               weights.a_mask);
        channel_grads.onehot = dice_onehot_backward(out.onehot, view.labels, weights.a_one_hot);
        *grads_out = render_backward(scene, view.camera, channel_grads);
    }

    terms.object = 0;
    if (use_object_loss && scene.object_count > 0) {
        if (grads_out) {
            std::vector<Vec3> mean_grads(scene.size(), Vec3::Zero());
            terms.object = object_aware_loss(scene, levels, weights.a_group_sum,
                                             weights.a_distance, &mean_grads);
            for (size_t i = 0; i < scene.size(); ++i) grads_out->g[i].mean += mean_grads[i];
        } else {
            terms.object =
                object_aware_loss(scene, levels, weights.a_group_sum, weights.a_distance);
        }
    }
    terms.total = weights.a_color * terms.color + weights.a_mask * terms.mask +
                  weights.a_one_hot * terms.onehot + terms.object;
    return terms;
}

namespace detail {

struct DensifyStats {
    std::vector<double> grad_sum;  // accumulated view-space gradient norms
    std::vector<int> seen;         // renders in which the gaussian was visible

    void resize(size_t n) {
        grad_sum.assign(n, 0.0);
        seen.assign(n, 0);
    }
    void accumulate(const SceneGradients& grads) {
        for (size_t i = 0; i < grad_sum.size(); ++i)
            if (grads.visible[i]) {
                grad_sum[i] += grads.viewspace[i].norm();
                seen[i] += 1;
            }
    }
};

inline GroupLearningRates schedule(const TrainConfig& cfg, int iteration) {
    GroupLearningRates lr;
    double t = cfg.iterations > 0 ? double(iteration) / cfg.iterations : 1.0;
    lr.mean = cfg.lr_mean * std::pow(cfg.lr_mean_final / cfg.lr_mean, t);
    lr.rotation = cfg.lr_rotation;
    lr.log_scale = cfg.lr_log_scale;
    lr.opacity = cfg.lr_opacity;
    lr.color = cfg.lr_color;
    lr.mask_color = cfg.lr_mask_color;
    double td = std::min(1.0, double(iteration) / cfg.object_logits_decay_iters);
    lr.object_logits =
        cfg.lr_object_logits * std::pow(cfg.lr_object_logits_final / cfg.lr_object_logits, td);
    return lr;
}

// Clamp raw fields back onto their invariant domains after a step.
inline void renormalize(SceneSnapshot& scene) {
    for (auto& g : scene.gaussians) {
        double n = g.rotation.norm();
        g.rotation = n > 1e-12 ? Vec4(g.rotation / n) : Vec4(1, 0, 0, 0);
        for (int k = 0; k < 3; ++k) {
            g.color[k] = std::clamp(g.color[k], 0.0, 1.0);
            g.mask_color[k] = std::clamp(g.mask_color[k], 0.0, 1.0);
        }
    }
}

// Split/clone high-gradient gaussians, then prune nearly transparent ones.
// Children reuse zeroed Adam rows; stats reset afterwards.
inline void densify_and_prune(SceneSnapshot& scene, GaussianAdam& adam, DensifyStats& stats,
                              const TrainConfig& cfg, Rng& rng) {
    const size_t n = scene.size();
    double extent = scene.bounds.extent().norm();
    std::vector<uint8_t> keep(n, 1);
    std::vector<Gaussian2D> added;

    for (size_t i = 0; i < n; ++i) {
        if (stats.seen[i] == 0) continue;
        double avg = stats.grad_sum[i] / stats.seen[i];
        if (avg < cfg.densify_grad_threshold) continue;
        const Gaussian2D& g = scene.gaussians[i];
        ActivatedGaussian a = activate(g);
        double max_scale = std::max(a.scale_u, a.scale_v);
        if (max_scale > cfg.densify_scale_frac * extent) {
            // Split: two children at 1/shrink of the parent scale, sampled
            // inside the parent's 2-sigma footprint.
            keep[i] = 0;
            for (int c = 0; c < 2; ++c) {
                Gaussian2D child = g;
                double u, v;
                do {
                    u = rng.normal();
                    v = rng.normal();
                } while (u * u + v * v > 4.0);
                child.mean = a.mean + u * a.scale_u * a.tangent_u + v * a.scale_v * a.tangent_v;
                child.log_scale = g.log_scale.array() - std::log(cfg.split_scale_shrink);
                added.push_back(child);
            }
        } else {
            added.push_back(g);  // clone; optimization will separate the pair
        }
    }

    for (size_t i = 0; i < n; ++i)
        if (keep[i] && sigmoid(scene.gaussians[i].opacity_raw) < cfg.prune_opacity) keep[i] = 0;

    std::vector<Gaussian2D> next;
    next.reserve(n + added.size());
    for (size_t i = 0; i < n; ++i)
        if (keep[i]) next.push_back(std::move(scene.gaussians[i]));
    adam.filter_rows(keep);
    for (auto& g : added) next.push_back(std::move(g));
    adam.append_rows(added.size());
    scene.gaussians = std::move(next);
    stats.resize(scene.size());
}

inline SceneSnapshot optimize(SceneSnapshot scene, const std::vector<TrainingView>& views,
                              const TrainConfig& cfg, TrainLogSink log_sink) {
    if (views.empty()) throw DataError("train: need at least one view");
    GaussianAdam adam(scene.size(), scene.object_count + 1);
    detail::DensifyStats stats;
    stats.resize(scene.size());
    Rng rng(cfg.seed * 0x9E3779B9u + 17);
    SceneGradients grads;
    auto start = std::chrono::steady_clock::now();
    int densify_until = int(cfg.densify_until_frac * cfg.iterations);

    for (int it = 1; it <= cfg.iterations; ++it) {
        const TrainingView& view = views[(it - 1) % views.size()];
        LossBreakdown terms =
            total_loss(scene, view, cfg.weights, cfg.use_object_loss, cfg.levels, &grads);
        adam.step(scene, grads, detail::schedule(cfg, it));
        detail::renormalize(scene);
        stats.accumulate(grads);

        if (cfg.densify_enabled && it % cfg.densify_interval == 0 && it >= cfg.densify_from &&
            it <= densify_until) {
            detail::densify_and_prune(scene, adam, stats, cfg, rng);
            if (scene.gaussians.empty())
                throw Error("train: all gaussians pruned at iteration " + std::to_string(it));
        }

        if (log_sink) {
            TrainLogRecord rec;
            rec.iteration = it;
            rec.total = terms.total;
            rec.color = terms.color;
            rec.mask = terms.mask;
            rec.onehot = terms.onehot;
            rec.object = terms.object;
            rec.gaussian_count = int(scene.size());
            rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                             .count();
            log_sink(rec);
        }
    }
    return scene;
}

}  // namespace detail

/// Full optimization from random initialization. Views are consumed
/// round-robin; densification runs on the configured cadence. Deterministic
/// for a fixed seed.
inline SceneSnapshot train(const std::vector<TrainingView>& views, const std::vector<Vec3>& palette,
                           const TrainConfig& cfg, TrainLogSink log_sink = nullptr) {
    if (views.empty()) throw DataError("train: need at least one view");
    Bounds bounds;
    if (cfg.bounds) {
        bounds = *cfg.bounds;
    } else {
        std::vector<CameraView> cams;
        for (const auto& v : views) cams.push_back(v.camera);
        bounds = bounds_from_cameras(cams);
    }
    SceneSnapshot scene = init_random(bounds, cfg.init_count, int(palette.size()), cfg.seed);
    scene.palette = palette;
    return detail::optimize(std::move(scene), views, cfg, std::move(log_sink));
}

/// Post-update refinement: 100 iterations on a single view, no
/// densification, object-aware loss off.
inline SceneSnapshot refine(const SceneSnapshot& scene, const TrainingView& view,
                            int iterations = 100, TrainConfig cfg = {},
                            TrainLogSink log_sink = nullptr) {
    cfg.iterations = iterations;
    cfg.densify_enabled = false;
    cfg.use_object_loss = false;
    return detail::optimize(scene, {view}, cfg, std::move(log_sink));
}

}  // namespace objsplat
