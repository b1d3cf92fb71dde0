#include "objsplat/scene.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace objsplat;

namespace {

Gaussian2D basic_gaussian(int object_channels = 3) {
    Gaussian2D g;
    g.object_logits = VecX::Zero(object_channels);
    return g;
}

// Inverse of activate up to the softmax's additive constant.
Gaussian2D deactivate(const ActivatedGaussian& a) {
    Gaussian2D g;
    g.mean = a.mean;
    Mat3 frame;
    frame.col(0) = a.tangent_u;
    frame.col(1) = a.tangent_v;
    frame.col(2) = a.normal;
    g.rotation = rotation_to_quat(frame);
    g.log_scale = Vec2(std::log(a.scale_u), std::log(a.scale_v));
    g.opacity_raw = logit(a.alpha);
    g.color = a.color;
    g.mask_color = a.mask_color;
    g.object_logits = a.object_weights.array().log();
    return g;
}

}  // namespace

TEST_CASE("activate maps zero raw fields to canonical values") {
    Gaussian2D g = basic_gaussian();
    ActivatedGaussian a = activate(g);
    CHECK(a.alpha == Catch::Approx(0.5));          // sigmoid(0)
    CHECK(a.scale_u == Catch::Approx(1.0));        // exp(0)
    CHECK(a.scale_v == Catch::Approx(1.0));
    for (int i = 0; i < 3; ++i) CHECK(a.object_weights[i] == Catch::Approx(1.0 / 3.0));
}

TEST_CASE("activate produces an orthonormal tangent frame") {
    Gaussian2D g = basic_gaussian();
    g.rotation = Vec4(0.3, -0.8, 0.52, 0.1);  // not normalized
    ActivatedGaussian a = activate(g);
    CHECK(std::abs(a.tangent_u.norm() - 1.0) < 1e-12);
    CHECK(std::abs(a.tangent_v.norm() - 1.0) < 1e-12);
    CHECK(std::abs(a.normal.norm() - 1.0) < 1e-12);
    CHECK(std::abs(a.tangent_u.dot(a.tangent_v)) < 1e-12);
    CHECK(std::abs(a.tangent_u.cross(a.tangent_v).dot(a.normal) - 1.0) < 1e-12);
    CHECK(std::abs(a.object_weights.sum() - 1.0) < 1e-12);
}

TEST_CASE("activate rejects non-finite fields") {
    Gaussian2D g = basic_gaussian();
    g.mean.x() = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(activate(g), InvalidGaussian);
    Gaussian2D h = basic_gaussian();
    h.object_logits[1] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(activate(h), InvalidGaussian);
}

TEST_CASE("activate is deterministic and idempotent") {
    Gaussian2D g = basic_gaussian(4);
    g.mean = Vec3(0.2, -0.4, 1.3);
    g.rotation = Vec4(0.9, 0.1, -0.3, 0.2);
    g.log_scale = Vec2(-2.0, -2.5);
    g.opacity_raw = 1.3;
    g.object_logits << 0.5, -1.0, 2.0, 0.0;
    ActivatedGaussian a = activate(g);
    ActivatedGaussian b = activate(g);
    CHECK(a.alpha == b.alpha);
    CHECK((a.tangent_u - b.tangent_u).norm() == 0.0);
    CHECK((a.object_weights - b.object_weights).norm() == 0.0);
}

TEST_CASE("deactivate then activate round-trips") {
    Gaussian2D g = basic_gaussian(4);
    g.mean = Vec3(0.1, 0.7, -0.3);
    g.rotation = Vec4(0.2, 0.5, -0.7, 0.4);
    g.log_scale = Vec2(-3.1, -2.2);
    g.opacity_raw = -0.7;
    g.color = Vec3(0.1, 0.5, 0.9);
    g.mask_color = Vec3(1.0, 0.0, 0.5);
    g.object_logits << 1.0, -0.5, 0.25, 0.0;

    ActivatedGaussian a = activate(g);
    ActivatedGaussian b = activate(deactivate(a));
    CHECK((a.mean - b.mean).norm() < 1e-6);
    CHECK((a.tangent_u - b.tangent_u).norm() < 1e-6);
    CHECK((a.tangent_v - b.tangent_v).norm() < 1e-6);
    CHECK((a.normal - b.normal).norm() < 1e-6);
    CHECK(std::abs(a.scale_u - b.scale_u) < 1e-6);
    CHECK(std::abs(a.scale_v - b.scale_v) < 1e-6);
    CHECK(std::abs(a.alpha - b.alpha) < 1e-6);
    CHECK((a.object_weights - b.object_weights).norm() < 1e-6);
}

TEST_CASE("object_of picks the argmax channel") {
    Gaussian2D g = basic_gaussian(3);
    g.object_logits << 0.2, 1.5, 0.4;
    CHECK(object_of(g) == 1);
    g.object_logits << 0.5, 0.5, 0.5;  // ties go to the lowest index
    CHECK(object_of(g) == 0);
}

TEST_CASE("scene validation flags close palette colors") {
    SceneSnapshot scene;
    scene.object_count = 2;
    scene.palette = {Vec3(1, 0, 0), Vec3(1, 10.0 / 255.0, 0)};
    CHECK_THROWS_AS(scene.validate(), DataError);
    scene.palette = {Vec3(1, 0, 0), Vec3(0, 1, 0)};
    CHECK_NOTHROW(scene.validate());
}

TEST_CASE("camera bounds expand coplanar rings into a usable box") {
    std::vector<CameraView> cams;
    for (int i = 0; i < 6; ++i) {
        double ang = i * M_PI / 3.0;
        cams.push_back(make_look_at_camera(Vec3(0.4 * std::cos(ang), 0.4 * std::sin(ang), 0.3),
                                           Vec3(0, 0, 0), Vec3(0, 0, 1), 100, 100, 64, 64));
    }
    Bounds b = bounds_from_cameras(cams);
    CHECK(b.volume() > 0.0);
    CHECK(b.min_pt.z() < 0.3);
    CHECK(b.max_pt.z() > 0.3);
}

TEST_CASE("look-at camera projects the target to the principal point") {
    CameraView cam = make_look_at_camera(Vec3(1, 2, 3), Vec3(0, 0, 0), Vec3(0, 0, 1),
                                         120, 120, 64, 48);
    cam.validate();
    Vec3 p = cam.world_to_camera(Vec3(0, 0, 0));
    CHECK(p.x() == Catch::Approx(0.0).margin(1e-12));
    CHECK(p.y() == Catch::Approx(0.0).margin(1e-12));
    CHECK(p.z() == Catch::Approx(std::sqrt(14.0)));
    Vec3 back = cam.backproject(cam.cx, cam.cy, p.z());
    CHECK((back - Vec3(0, 0, 0)).norm() < 1e-12);
}
