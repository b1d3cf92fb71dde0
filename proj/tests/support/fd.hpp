#pragma once

// Central finite-difference checking of render_backward against a random
// linear functional of all output channels.

#include "objsplat/rasterizer.hpp"

#include <functional>
#include <string>
#include <vector>

namespace fd {

using objsplat::CameraView;
using objsplat::Gaussian2D;
using objsplat::ImageXd;
using objsplat::RenderOutput;
using objsplat::Rng;
using objsplat::SceneSnapshot;
using objsplat::render;
using objsplat::render_backward;

// Random gradient direction with entries in [-1, 1].
inline RenderOutput random_direction(int width, int height, int onehot_channels, Rng& rng) {
    RenderOutput g(width, height, onehot_channels);
    for (auto img : {&g.rgb, &g.mask, &g.onehot, &g.depth, &g.alpha})
        for (double& v : img->data) v = rng.uniform(-1.0, 1.0);
    return g;
}

inline double loss_value(const SceneSnapshot& scene, const CameraView& cam,
                         const RenderOutput& dir) {
    RenderOutput out = render(scene, cam);
    double loss = 0;
    const ImageXd* outs[] = {&out.rgb, &out.mask, &out.onehot, &out.depth, &out.alpha};
    const ImageXd* dirs[] = {&dir.rgb, &dir.mask, &dir.onehot, &dir.depth, &dir.alpha};
    for (int k = 0; k < 5; ++k)
        for (size_t i = 0; i < outs[k]->data.size(); ++i)
            loss += outs[k]->data[i] * dirs[k]->data[i];
    return loss;
}

struct CheckStats {
    double max_rel_err = 0;
    int checked = 0;
    std::string worst;
};

// Compares every raw parameter gradient against central differences.
// Relative error is evaluated only where |analytic| exceeds grad_floor.
inline CheckStats check_scene_gradients(SceneSnapshot scene, const CameraView& cam,
                                        const RenderOutput& dir, double step = 1e-6,
                                        double grad_floor = 1e-6) {
    objsplat::SceneGradients an = render_backward(scene, cam, dir);
    CheckStats stats;

    auto probe = [&](double* param, double analytic, const std::string& label) {
        double saved = *param;
        *param = saved + step;
        double lp = loss_value(scene, cam, dir);
        *param = saved - step;
        double lm = loss_value(scene, cam, dir);
        *param = saved;
        double numeric = (lp - lm) / (2 * step);
        if (std::abs(analytic) <= grad_floor && std::abs(numeric) <= grad_floor) return;
        double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic), std::abs(numeric));
        ++stats.checked;
        if (rel > stats.max_rel_err) {
            stats.max_rel_err = rel;
            stats.worst = label + " analytic=" + std::to_string(analytic) +
                          " numeric=" + std::to_string(numeric);
        }
    };

    for (size_t i = 0; i < scene.gaussians.size(); ++i) {
        Gaussian2D& g = scene.gaussians[i];
        const objsplat::GaussianGrad& gg = an.g[i];
        std::string tag = "g" + std::to_string(i) + ".";
        for (int k = 0; k < 3; ++k) probe(&g.mean[k], gg.mean[k], tag + "mean" + std::to_string(k));
        for (int k = 0; k < 4; ++k)
            probe(&g.rotation[k], gg.rotation[k], tag + "rot" + std::to_string(k));
        for (int k = 0; k < 2; ++k)
            probe(&g.log_scale[k], gg.log_scale[k], tag + "scale" + std::to_string(k));
        probe(&g.opacity_raw, gg.opacity_raw, tag + "opacity");
        for (int k = 0; k < 3; ++k) probe(&g.color[k], gg.color[k], tag + "color" + std::to_string(k));
        for (int k = 0; k < 3; ++k)
            probe(&g.mask_color[k], gg.mask_color[k], tag + "mask" + std::to_string(k));
        for (int k = 0; k < g.object_logits.size(); ++k)
            probe(&g.object_logits[k], gg.object_logits[k], tag + "logit" + std::to_string(k));
    }
    return stats;
}

}  // namespace fd
