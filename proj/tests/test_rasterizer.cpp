#include "objsplat/rasterizer.hpp"

#include "support/oracles.hpp"
#include "support/synthetic.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace objsplat;

namespace {

// Fronto-parallel splat: tangent frame aligned with the camera axes.
ActivatedGaussian flat_splat(const Vec3& mean, double scale, double alpha) {
    ActivatedGaussian g;
    g.mean = mean;
    g.tangent_u = Vec3(1, 0, 0);
    g.tangent_v = Vec3(0, 1, 0);
    g.normal = Vec3(0, 0, 1);
    g.scale_u = g.scale_v = scale;
    g.alpha = alpha;
    g.color = Vec3(1, 1, 1);
    g.mask_color = Vec3(1, 0, 0);
    g.object_weights = VecX::Ones(1);
    return g;
}

CameraView spec_camera() {
    CameraView cam;
    cam.fx = cam.fy = 100;
    cam.cx = cam.cy = 32;
    cam.width = cam.height = 64;
    return cam;
}

double max_channel_diff(const ImageXd& a, const ImageXd& b) {
    double m = 0;
    for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace

TEST_CASE("project culls means behind the near plane") {
    CameraView cam = spec_camera();
    auto g = flat_splat(Vec3(0, 0, -0.0001), 0.05, 0.5);
    CHECK(!project(g, cam, 0).has_value());
}

TEST_CASE("project places a centered splat at the principal point") {
    CameraView cam = spec_camera();
    auto g = flat_splat(Vec3(0, 0, 1), 0.05, 0.5);
    auto prim = project(g, cam, 0);
    REQUIRE(prim.has_value());
    CHECK(prim->proj.x() == Catch::Approx(32.0));
    CHECK(prim->proj.y() == Catch::Approx(32.0));
    CHECK(prim->depth == Catch::Approx(1.0));
}

TEST_CASE("project follows the pinhole formula") {
    CameraView cam = spec_camera();
    auto g = flat_splat(Vec3(0.1, 0, 1), 0.05, 0.5);
    auto prim = project(g, cam, 0);
    REQUIRE(prim.has_value());
    CHECK(prim->proj.x() == Catch::Approx(42.0));  // fx * X / Z + cx
}

TEST_CASE("project culls splats whose footprint misses the image") {
    CameraView cam = spec_camera();
    auto g = flat_splat(Vec3(5.0, 0, 1), 0.01, 0.5);  // far off-screen
    CHECK(!project(g, cam, 0).has_value());
}

TEST_CASE("kernel weight is 1 at the projected mean of a flat splat") {
    CameraView cam = spec_camera();
    auto prim = project(flat_splat(Vec3(0, 0, 1), 0.05, 0.5), cam, 0);
    REQUIRE(prim.has_value());
    CHECK(kernel_weight(*prim, 32, 32, cam) == Catch::Approx(1.0));
}

TEST_CASE("kernel weight matches exp(-1/2) one scale unit from center") {
    CameraView cam = spec_camera();
    // scale 0.1 m at 1 m: u = 1 corresponds to world x = 0.1, pixel x = 42.
    auto prim = project(flat_splat(Vec3(0, 0, 1), 0.1, 0.5), cam, 0);
    REQUIRE(prim.has_value());
    CHECK(kernel_weight(*prim, 42, 32, cam) == Catch::Approx(std::exp(-0.5)).epsilon(1e-12));
}

TEST_CASE("low-pass kernel dominates for sub-pixel splats") {
    CameraView cam = spec_camera();
    auto prim = project(flat_splat(Vec3(0, 0, 1), 1e-4, 0.5), cam, 0);
    REQUIRE(prim.has_value());
    // 3 px from the mean: plane term underflows, screen-space term remains.
    double expected = std::exp(-9.0 / (2.0 * 0.5 * 0.5));
    CHECK(kernel_weight(*prim, 35, 32, cam) == Catch::Approx(expected).epsilon(1e-12));
}

TEST_CASE("kernel weight is zero for a ray parallel to the splat plane") {
    CameraView cam = spec_camera();
    ActivatedGaussian g = flat_splat(Vec3(0, 0, 1), 0.05, 0.5);
    // Normal perpendicular to the principal ray; plane passes through origin.
    g.tangent_u = Vec3(0, 0, 1);
    g.tangent_v = Vec3(0, 1, 0);
    g.normal = Vec3(-1, 0, 0);
    g.mean = Vec3(0, 0, 1);
    auto prim = project(g, cam, 0);
    REQUIRE(prim.has_value());
    detail::KernelEval k = detail::eval_kernel(*prim, 32, 32, cam, false);
    CHECK(k.g_plane == 0.0);  // only the low-pass branch contributes
}

TEST_CASE("composite: single opaque layer") {
    CompositeEntry e;
    e.alpha = 1.0;
    e.weight = 1.0;
    e.depth = 2.5;
    e.color = Vec3(0.2, 0.4, 0.6);
    e.mask_color = Vec3(1, 0, 0);
    e.object_weights = VecX::Ones(1);
    auto out = composite_pixel({e}, 1);
    CHECK((out.rgb - e.color).norm() < 1e-15);
    CHECK(out.alpha == Catch::Approx(1.0));
    CHECK(out.depth == Catch::Approx(2.5));
}

TEST_CASE("composite: two half-opacity layers") {
    CompositeEntry a, b;
    a.alpha = b.alpha = 0.5;
    a.weight = b.weight = 1.0;
    a.depth = 1.0;
    b.depth = 2.0;
    a.color = Vec3(1.0, 0.0, 0.2);
    b.color = Vec3(0.0, 1.0, 0.8);
    a.object_weights = b.object_weights = VecX::Ones(1);
    auto out = composite_pixel({a, b}, 1);
    Vec3 expected = 0.5 * a.color + 0.25 * b.color;
    CHECK((out.rgb - expected).norm() < 1e-6);
    CHECK(out.alpha == Catch::Approx(0.75));
}

TEST_CASE("composite: expected depth over three layers") {
    std::vector<CompositeEntry> es(3);
    for (int i = 0; i < 3; ++i) {
        es[i].alpha = 0.9;
        es[i].weight = 1.0;
        es[i].depth = i + 1.0;
        es[i].object_weights = VecX::Ones(1);
    }
    auto out = composite_pixel(es, 1);
    double expected = (0.9 * 1.0 + 0.09 * 2.0 + 0.009 * 3.0) / 0.999;
    CHECK(out.depth == Catch::Approx(expected).epsilon(1e-12));
    CHECK(out.alpha == Catch::Approx(0.999));
}

TEST_CASE("composite: alpha accumulation is monotone") {
    Rng rng(7);
    std::vector<CompositeEntry> es;
    double prev = 0.0;
    for (int i = 0; i < 30; ++i) {
        CompositeEntry e;
        e.alpha = rng.uniform(0, 1);
        e.weight = rng.uniform(0, 1);
        e.depth = 1.0 + i * 0.01;
        e.object_weights = VecX::Ones(1);
        es.push_back(e);
        double acc = composite_pixel(es, 1).alpha;
        CHECK(acc >= prev - 1e-15);
        CHECK(acc <= 1.0 + 1e-12);
        prev = acc;
    }
}

TEST_CASE("render: empty scene produces zero buffers") {
    SceneSnapshot scene;
    scene.object_count = 1;
    scene.palette = {Vec3(1, 0, 0)};
    RenderOutput out = render(scene, spec_camera());
    for (double v : out.rgb.data) CHECK(v == 0.0);
    for (double v : out.alpha.data) CHECK(v == 0.0);
}

TEST_CASE("render: opaque splat writes its mask color at the center pixel") {
    SceneSnapshot scene;
    scene.object_count = 1;
    scene.palette = {Vec3(0, 0, 1)};
    Gaussian2D g;
    g.mean = Vec3(0, 0, 1);
    g.log_scale = Vec2(std::log(0.08), std::log(0.08));
    g.opacity_raw = 40.0;  // alpha ~ 1
    g.mask_color = Vec3(0, 0, 1);
    g.color = Vec3(0.5, 0.5, 0.5);
    g.object_logits = VecX::Zero(2);
    scene.gaussians.push_back(g);
    RenderOutput out = render(scene, spec_camera());
    CHECK(std::abs(out.mask.at(32, 32, 2) - 1.0) < 1e-9);
    CHECK(std::abs(out.alpha.at(32, 32, 0) - 1.0) < 1e-9);
    CHECK(std::abs(out.depth.at(32, 32, 0) - 1.0) < 1e-9);
}

TEST_CASE("render matches the brute-force compositor on random scenes") {
    for (uint64_t seed : {11ull, 22ull, 33ull, 44ull}) {
        SceneSnapshot scene = synthetic::random_scene(seed, 5, 2);
        CameraView cam = synthetic::test_camera(24, 50.0);
        RenderOutput tiled = render(scene, cam);
        RenderOutput ref = oracle::brute_force_render(scene, cam);
        CHECK(max_channel_diff(tiled.rgb, ref.rgb) < 1e-5);
        CHECK(max_channel_diff(tiled.mask, ref.mask) < 1e-5);
        CHECK(max_channel_diff(tiled.onehot, ref.onehot) < 1e-5);
        CHECK(max_channel_diff(tiled.depth, ref.depth) < 1e-5);
        CHECK(max_channel_diff(tiled.alpha, ref.alpha) < 1e-5);
    }
}

TEST_CASE("render output satisfies the channel bounds invariants") {
    SceneSnapshot scene = synthetic::random_scene(99, 10, 2);
    CameraView cam = synthetic::test_camera(24, 50.0);
    RenderOutput out = render(scene, cam);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            double a = out.alpha.at(y, x, 0);
            CHECK(a >= 0.0);
            CHECK(a <= 1.0);
            for (int c = 0; c < 3; ++c) {
                CHECK(out.rgb.at(y, x, c) <= a + 1e-6);
                CHECK(out.mask.at(y, x, c) <= a + 1e-6);
            }
            double oh_sum = 0;
            for (int c = 0; c < out.onehot.channels; ++c) oh_sum += out.onehot.at(y, x, c);
            CHECK(oh_sum <= a + 1e-6);
        }
}

TEST_CASE("equal-depth splats composite in gaussian-index order") {
    auto make = [](const Vec3& color) {
        Gaussian2D g;
        g.mean = Vec3(0, 0, 1);
        g.log_scale = Vec2(std::log(0.2), std::log(0.2));
        g.opacity_raw = 0.0;  // alpha 0.5
        g.color = color;
        g.mask_color = color;
        g.object_logits = VecX::Zero(1);
        return g;
    };
    SceneSnapshot scene;
    scene.object_count = 0;
    scene.gaussians = {make(Vec3(1, 0, 0)), make(Vec3(0, 1, 0))};
    CameraView cam = synthetic::test_camera(16, 40.0);
    cam.cx = cam.cy = 7.0;
    RenderOutput out = render(scene, cam);
    // Index 0 in front: 0.5 red + 0.25 green at the shared center pixel.
    CHECK(out.rgb.at(7, 7, 0) == Catch::Approx(0.5));
    CHECK(out.rgb.at(7, 7, 1) == Catch::Approx(0.25));

    // Repeated renders are bit-identical.
    RenderOutput again = render(scene, cam);
    CHECK(out.rgb.data == again.rgb.data);
    CHECK(out.depth.data == again.depth.data);
}

TEST_CASE("early termination stays within its documented gap") {
    // A deep stack of nearly opaque splats: termination kicks in, and the
    // result stays within the 1e-4 transmittance bound of the full sum.
    SceneSnapshot scene;
    scene.object_count = 0;
    for (int i = 0; i < 30; ++i) {
        Gaussian2D g;
        g.mean = Vec3(0, 0, 0.8 + 0.02 * i);
        g.log_scale = Vec2(std::log(0.3), std::log(0.3));
        g.opacity_raw = 5.0;  // alpha ~ 0.993
        g.color = Vec3(1, 1, 1);
        g.mask_color = Vec3(1, 1, 1);
        g.object_logits = VecX::Zero(1);
        scene.gaussians.push_back(g);
    }
    CameraView cam = synthetic::test_camera(16, 40.0);
    RenderOutput tiled = render(scene, cam);
    RenderOutput ref = oracle::brute_force_render(scene, cam);
    CHECK(max_channel_diff(tiled.rgb, ref.rgb) < 1e-4);
    CHECK(max_channel_diff(tiled.alpha, ref.alpha) < 1e-4);
}
