#include "objsplat/scene_update.hpp"

#include "support/synthetic.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace objsplat;

namespace {

// A scene with two gaussians per object, assigned by logits.
SceneSnapshot two_object_scene() {
    SceneSnapshot scene;
    scene.object_count = 2;
    scene.palette = {Vec3(1, 0, 0), Vec3(0, 1, 0)};
    for (int i = 0; i < 4; ++i) {
        Gaussian2D g;
        g.mean = Vec3(0.1 * i, 0, 0.5);
        g.object_logits = VecX::Zero(3);
        g.object_logits[i % 2] = 3.0;
        scene.gaussians.push_back(g);
    }
    return scene;
}

// Stacked pair: object 0 is a 5 cm support under a squat 4.5 cm box.
SceneSnapshot stacked_scene() {
    SceneSnapshot scene;
    scene.object_count = 2;
    scene.palette = {Vec3(1, 0, 0), Vec3(0, 0, 1)};
    scene.bounds.min_pt = Vec3(-0.09, -0.09, 0.0);
    scene.bounds.max_pt = Vec3(0.09, 0.09, 0.12);
    synthetic::add_box_shell(scene, Vec3(-0.045, -0.045, 0.0), Vec3(0.045, 0.045, 0.05), 0,
                             Vec3(0.8, 0.2, 0.2), Vec3(1, 0, 0));
    synthetic::add_box_shell(scene, Vec3(-0.035, -0.035, 0.05), Vec3(0.035, 0.035, 0.095), 1,
                             Vec3(0.2, 0.2, 0.8), Vec3(0, 0, 1));
    return scene;
}

std::vector<CameraView> ring_cameras(const Vec3& target, double radius, double height, int count,
                                     int size, double focal) {
    std::vector<CameraView> cams;
    for (int i = 0; i < count; ++i) {
        double a = 2.0 * M_PI * i / count;
        Vec3 eye(target.x() + radius * std::cos(a), target.y() + radius * std::sin(a), height);
        cams.push_back(make_look_at_camera(eye, target, Vec3(0, 0, 1), focal, focal, size, size));
    }
    return cams;
}

}  // namespace

TEST_CASE("remove_object leaves scenes without that object unchanged") {
    SceneSnapshot scene = two_object_scene();
    for (auto& g : scene.gaussians) g.object_logits = VecX::Zero(3), g.object_logits[1] = 3.0;
    SceneSnapshot out = remove_object(scene, {0});
    CHECK(out.size() == scene.size());
}

TEST_CASE("remove_object with all ids empties the object set") {
    SceneSnapshot scene = two_object_scene();
    SceneSnapshot out = remove_object(scene, {0, 1});
    CHECK(out.size() == 0);
    CHECK(out.object_count == 2);  // indexing preserved
}

TEST_CASE("remove_object keeps only the other object's gaussians") {
    SceneSnapshot scene = two_object_scene();
    SceneSnapshot out = remove_object(scene, {0});
    REQUIRE(out.size() == 2);
    for (const auto& g : out.gaussians) CHECK(object_of(g) == 1);
}

TEST_CASE("remove_object rejects unknown ids") {
    SceneSnapshot scene = two_object_scene();
    CHECK_THROWS_AS(remove_object(scene, {5}), DataError);
    CHECK_THROWS_AS(remove_object(scene, {-1}), DataError);
}

TEST_CASE("fit_rigid recovers the identity") {
    Rng rng(3);
    std::vector<Vec3> pts;
    for (int i = 0; i < 20; ++i)
        pts.push_back(Vec3(rng.uniform(), rng.uniform(), rng.uniform()));
    RigidTransform rt = fit_rigid(pts, pts);
    CHECK((rt.rotation - Mat3::Identity()).norm() < 1e-12);
    CHECK(rt.translation.norm() < 1e-12);
    CHECK(rt.rms < 1e-12);
}

TEST_CASE("fit_rigid recovers a pure translation") {
    Rng rng(4);
    std::vector<Vec3> start, end;
    Vec3 t(0, 0, -0.05);
    for (int i = 0; i < 30; ++i) {
        Vec3 p(rng.uniform(), rng.uniform(), rng.uniform());
        start.push_back(p);
        end.push_back(p + t);
    }
    RigidTransform rt = fit_rigid(start, end);
    CHECK((rt.rotation - Mat3::Identity()).norm() < 1e-9);
    CHECK((rt.translation - t).norm() < 1e-9);
}

TEST_CASE("fit_rigid recovers a noisy rigid motion") {
    Rng rng(5);
    double angle = 0.7;
    Mat3 r;
    r << std::cos(angle), -std::sin(angle), 0, std::sin(angle), std::cos(angle), 0, 0, 0, 1;
    Vec3 t(0.02, -0.01, 0.03);
    std::vector<Vec3> start, end;
    for (int i = 0; i < 100; ++i) {
        Vec3 p(rng.uniform(), rng.uniform(), rng.uniform());
        start.push_back(p);
        end.push_back(r * p + t + 0.001 * Vec3(rng.normal(), rng.normal(), rng.normal()));
    }
    RigidTransform rt = fit_rigid(start, end);
    // Angle error via the trace identity.
    double cos_err = 0.5 * ((rt.rotation.transpose() * r).trace() - 1.0);
    CHECK(std::acos(std::clamp(cos_err, -1.0, 1.0)) < 1e-3);
    CHECK((rt.translation - t).norm() < 1e-3);
}

TEST_CASE("fit_rigid rejects collinear points") {
    std::vector<Vec3> pts;
    for (int i = 0; i < 10; ++i) pts.push_back(Vec3(i, 0, 0));
    CHECK_THROWS_AS(fit_rigid(pts, pts), DataError);
}

TEST_CASE("top-down camera sees the whole bounds") {
    Bounds b;
    b.min_pt = Vec3(-0.1, -0.1, 0);
    b.max_pt = Vec3(0.1, 0.1, 0.2);
    CameraView cam = make_top_down_camera(b, 128, 128);
    cam.validate();
    for (int corner = 0; corner < 8; ++corner) {
        Vec3 p(corner & 1 ? b.max_pt.x() : b.min_pt.x(), corner & 2 ? b.max_pt.y() : b.min_pt.y(),
               corner & 4 ? b.max_pt.z() : b.min_pt.z());
        Vec3 c = cam.world_to_camera(p);
        REQUIRE(c.z() > 0);
        Vec2 px = cam.project(c);
        CHECK(px.x() >= 0);
        CHECK(px.x() <= 127);
        CHECK(px.y() >= 0);
        CHECK(px.y() <= 127);
    }
}

TEST_CASE("gravity-off update is an exact no-op up to removal") {
    SceneSnapshot scene = stacked_scene();
    auto cams = ring_cameras(Vec3(0, 0, 0.07), 0.3, 0.25, 4, 64, 90.0);

    UpdateRequest req;
    req.scene = scene;
    req.removed_ids = {0};
    req.depth_cameras = cams;
    req.sim.gravity = Vec3::Zero();
    req.sim.duration = 0.05;
    req.sim.particle_spacing = 0.006;
    req.sim.grid_dx_factor = 1.0;
    req.refine_iterations = 0;
    SceneSnapshot base = remove_object(scene, {0});
    req.post_view = synthetic::view_from_scene(base, cams[0]);

    UpdateResult res = apply_update(req);
    CHECK(res.simulated);
    CHECK(res.particle_count > 100);
    REQUIRE(res.transforms.count(1) == 1);
    CHECK((res.transforms.at(1).rotation - Mat3::Identity()).norm() < 1e-6);
    CHECK(res.transforms.at(1).translation.norm() < 1e-6);

    // Renders match the removed-only scene.
    RenderOutput a = render(res.scene, cams[0]);
    RenderOutput b = render(base, cams[0]);
    double worst = 0;
    for (size_t i = 0; i < a.rgb.data.size(); ++i)
        worst = std::max(worst, std::abs(a.rgb.data[i] - b.rgb.data[i]));
    for (size_t i = 0; i < a.depth.data.size(); ++i)
        worst = std::max(worst, std::abs(a.depth.data[i] - b.depth.data[i]));
    CHECK(worst < 1e-5);
}

TEST_CASE("motion transfer preserves the survivor count") {
    SceneSnapshot scene = stacked_scene();
    auto cams = ring_cameras(Vec3(0, 0, 0.07), 0.3, 0.25, 4, 64, 90.0);
    SceneSnapshot base = remove_object(scene, {0});

    UpdateRequest req;
    req.scene = scene;
    req.removed_ids = {0};
    req.depth_cameras = cams;
    req.sim.duration = 0.5;
    req.sim.particle_spacing = 0.006;
    req.sim.grid_dx_factor = 1.0;
    req.refine_iterations = 0;
    req.post_view = synthetic::view_from_scene(base, cams[0]);

    UpdateResult res = apply_update(req);
    CHECK(res.pre_refine_scene.size() == base.size());
    CHECK(res.scene.size() == base.size());
}

TEST_CASE("removing the support drops the upper object onto the ground") {
    SceneSnapshot scene = stacked_scene();
    auto cams = ring_cameras(Vec3(0, 0, 0.07), 0.3, 0.25, 4, 64, 90.0);
    SceneSnapshot base = remove_object(scene, {0});

    UpdateRequest req;
    req.scene = scene;
    req.removed_ids = {0};
    req.depth_cameras = cams;
    req.sim.duration = 0.5;
    req.sim.particle_spacing = 0.006;
    req.sim.grid_dx_factor = 1.0;
    req.refine_iterations = 0;
    req.post_view = synthetic::view_from_scene(base, cams[0]);

    UpdateResult res = apply_update(req);
    REQUIRE(res.simulated);
    REQUIRE(res.transforms.count(1) == 1);
    // The upper box sat on a 0.05 m support; its centroid must drop by that
    // height (geometric oracle, 20%).
    double drop = -res.transforms.at(1).translation.z();
    CHECK(drop == Catch::Approx(0.05).epsilon(0.2));
    CHECK(std::abs(res.transforms.at(1).translation.x()) < 0.015);
    CHECK(std::abs(res.transforms.at(1).translation.y()) < 0.015);
    CHECK(res.transforms.at(1).rms < 0.01);  // the body stayed rigid
}
