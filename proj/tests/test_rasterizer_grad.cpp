#include "objsplat/rasterizer.hpp"

#include "support/fd.hpp"
#include "support/synthetic.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace objsplat;

TEST_CASE("color gradient of one opaque splat is the identity path") {
    SceneSnapshot scene;
    scene.object_count = 0;
    Gaussian2D g;
    g.mean = Vec3(0, 0, 1);
    g.log_scale = Vec2(std::log(0.2), std::log(0.2));
    g.opacity_raw = 40.0;  // alpha = 1 to double precision
    g.color = Vec3(0.3, 0.6, 0.9);
    g.mask_color = Vec3(1, 0, 0);
    g.object_logits = VecX::Zero(1);
    scene.gaussians.push_back(g);
    CameraView cam = synthetic::test_camera(16, 40.0);
    cam.cx = cam.cy = 7.0;  // projected mean lands exactly on pixel (7, 7)

    RenderOutput dir(cam.width, cam.height, 1);
    for (int c = 0; c < 3; ++c) dir.rgb.at(7, 7, c) = 1.0;
    SceneGradients grads = render_backward(scene, cam, dir);
    // omega = alpha * ghat * transmittance = 1 at the projected mean.
    for (int c = 0; c < 3; ++c) CHECK(grads.g[0].color[c] == Catch::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("fully occluded splat receives zero opacity gradient") {
    SceneSnapshot scene;
    scene.object_count = 0;
    for (int i = 0; i < 2; ++i) {
        Gaussian2D g;
        g.mean = Vec3(0, 0, 1.0 + 0.5 * i);
        g.log_scale = Vec2(std::log(0.5), std::log(0.5));
        g.opacity_raw = i == 0 ? 40.0 : 0.0;  // front splat is opaque
        g.color = Vec3(0.5, 0.5, 0.5);
        g.mask_color = Vec3(0.5, 0.5, 0.5);
        g.object_logits = VecX::Zero(1);
        scene.gaussians.push_back(g);
    }
    CameraView cam = synthetic::test_camera(16, 40.0);
    cam.cx = cam.cy = 7.0;
    // Loss reads only the pixel where the front splat is exactly opaque
    // (alpha = 1, ghat = 1), so nothing behind it can matter.
    RenderOutput dir(cam.width, cam.height, 1);
    dir.rgb.at(7, 7, 0) = 1.0;
    dir.depth.at(7, 7, 0) = 0.5;
    dir.alpha.at(7, 7, 0) = -0.25;
    SceneGradients grads = render_backward(scene, cam, dir);
    CHECK(grads.g[1].opacity_raw == 0.0);
    CHECK(grads.g[1].mean.norm() == 0.0);
}

TEST_CASE("gradients match central finite differences on random scenes") {
    for (uint64_t seed : {101ull, 202ull, 303ull}) {
        SceneSnapshot scene = synthetic::random_scene(seed, 5, 2);
        CameraView cam = synthetic::test_camera(16, 40.0);
        Rng rng(seed * 7 + 1);
        RenderOutput dir = fd::random_direction(cam.width, cam.height, 3, rng);
        fd::CheckStats stats = fd::check_scene_gradients(scene, cam, dir);
        INFO("seed " << seed << " worst: " << stats.worst);
        CHECK(stats.checked > 50);
        CHECK(stats.max_rel_err < 1e-3);
    }
}

TEST_CASE("gradients cover every parameter group") {
    SceneSnapshot scene = synthetic::random_scene(555, 8, 2);
    CameraView cam = synthetic::test_camera(16, 40.0);
    Rng rng(556);
    RenderOutput dir = fd::random_direction(cam.width, cam.height, 3, rng);
    SceneGradients grads = render_backward(scene, cam, dir);
    double mean_n = 0, rot_n = 0, scale_n = 0, op_n = 0, col_n = 0, mask_n = 0, logit_n = 0;
    for (const auto& g : grads.g) {
        mean_n += g.mean.norm();
        rot_n += g.rotation.norm();
        scale_n += g.log_scale.norm();
        op_n += std::abs(g.opacity_raw);
        col_n += g.color.norm();
        mask_n += g.mask_color.norm();
        logit_n += g.object_logits.norm();
    }
    CHECK(mean_n > 0);
    CHECK(rot_n > 0);
    CHECK(scale_n > 0);
    CHECK(op_n > 0);
    CHECK(col_n > 0);
    CHECK(mask_n > 0);
    CHECK(logit_n > 0);
}
