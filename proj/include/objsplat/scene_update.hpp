#pragma once

#include "objsplat/mpm.hpp"
#include "objsplat/rasterizer.hpp"
#include "objsplat/scene.hpp"
#include "objsplat/trainer.hpp"

#include <map>
#include <vector>

namespace objsplat {

struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    double rms = 0;

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
    bool is_identity(double tol = 1e-9) const {
        return (rotation - Mat3::Identity()).norm() < tol && translation.norm() < tol;
    }
};

/// Drops every gaussian whose argmax object assignment is in `ids`. Object
/// indexing of the survivors is preserved (removed logit channels stay but
/// go unused).
inline SceneSnapshot remove_object(const SceneSnapshot& scene, const std::vector<int>& ids) {
    for (int id : ids)
        if (id < 0 || id >= scene.object_count)
            throw DataError("remove_object: unknown object id " + std::to_string(id));
    std::vector<bool> drop(scene.object_count + 1, false);
    for (int id : ids) drop[id] = true;
    SceneSnapshot out;
    out.object_count = scene.object_count;
    out.palette = scene.palette;
    out.bounds = scene.bounds;
    out.gaussians.reserve(scene.size());
    for (const auto& g : scene.gaussians)
        if (!drop[object_of(g)]) out.gaussians.push_back(g);
    return out;
}

/// Least-squares rigid alignment (Kabsch): finds R, t minimizing
/// sum |R a_i + t - b_i|^2 with det(R) = +1. Point sets are paired by index.
inline RigidTransform fit_rigid(const std::vector<Vec3>& start, const std::vector<Vec3>& end) {
    if (start.size() != end.size()) throw DataError("fit_rigid: point counts differ");
    const size_t n = start.size();
    if (n < 3) throw DataError("fit_rigid: need at least 3 point pairs");
    Vec3 ca = Vec3::Zero(), cb = Vec3::Zero();
    for (size_t i = 0; i < n; ++i) {
        ca += start[i];
        cb += end[i];
    }
    ca /= double(n);
    cb /= double(n);
    Mat3 h = Mat3::Zero();
    double spread = 0;
    for (size_t i = 0; i < n; ++i) {
        h += (start[i] - ca) * (end[i] - cb).transpose();
        spread += (start[i] - ca).squaredNorm();
    }
    Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    // Collinear or coincident inputs leave the rotation underdetermined.
    if (spread < 1e-18 || svd.singularValues()[1] < 1e-9 * std::max(svd.singularValues()[0], 1e-30))
        throw DataError("fit_rigid: degenerate point configuration");
    Mat3 d = Mat3::Identity();
    d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant();
    RigidTransform rt;
    rt.rotation = svd.matrixV() * d * svd.matrixU().transpose();
    rt.translation = cb - rt.rotation * ca;
    double err = 0;
    for (size_t i = 0; i < n; ++i) err += (rt.apply(start[i]) - end[i]).squaredNorm();
    rt.rms = std::sqrt(err / double(n));
    return rt;
}

// Hamilton product of two (w, x, y, z) quaternions.
inline Vec4 quat_multiply(const Vec4& a, const Vec4& b) {
    return Vec4(a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
                a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
                a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
                a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]);
}

/// Virtual bird's-eye camera above the scene bounds, looking straight down,
/// framed so the bounds fill ~90% of the image.
inline CameraView make_top_down_camera(const Bounds& bounds, int width = 256, int height = 256) {
    Vec3 center = bounds.center();
    double half_diag =
        std::max(0.5 * std::hypot(bounds.extent().x(), bounds.extent().y()), 0.025);
    double height_above = std::max(bounds.extent().z(), 0.05) + 2.4 * half_diag;
    Vec3 eye = center + Vec3(0, 0, height_above);
    // Frame so the closest (top) plane of the bounds stays inside the image.
    double dist_top = eye.z() - bounds.max_pt.z();
    double focal = 0.45 * std::min(width, height) * dist_top / half_diag;
    return make_look_at_camera(eye, center, Vec3(1, 0, 0), focal, focal, width, height);
}

struct UpdateRequest {
    SceneSnapshot scene;                  // state at t=0
    std::vector<int> removed_ids;
    TrainingView post_view;               // single post-change supervision view
    std::vector<CameraView> depth_cameras;  // training cameras merged into meshing
    SimConfig sim;
    bool simulate_enabled = true;
    bool fill_interior = true;  // filled bodies resist crushing on impact
    int refine_iterations = 100;
    TrainConfig refine_config;
    int top_view_size = 256;
    int min_surface_points = 50;
};

struct UpdateResult {
    SceneSnapshot scene;             // refined t=1 scene
    SceneSnapshot pre_refine_scene;  // after motion transfer, before refinement
    std::map<int, RigidTransform> transforms;
    SimResult sim;
    int particle_count = 0;
    bool simulated = false;
    bool diverged = false;
    std::string message;
};

/// The scene-update pipeline: remove the requested objects, lift the
/// survivors' rendered depth into particles, simulate the collapse, transfer
/// each object's rigid motion onto its gaussians, then refine against the
/// single post-change view. Simulation divergence aborts before refinement
/// and leaves the pre-simulation scene in the result.
inline UpdateResult apply_update(const UpdateRequest& req) {
    UpdateResult result;
    SceneSnapshot base = remove_object(req.scene, req.removed_ids);

    // Objects that still own gaussians after removal.
    std::map<int, int> gaussians_per_object;
    for (const auto& g : base.gaussians) {
        int obj = object_of(g);
        if (obj < base.object_count) gaussians_per_object[obj] += 1;
    }
    for (auto [obj, count] : gaussians_per_object) result.transforms[obj] = RigidTransform{};

    if (req.simulate_enabled && !gaussians_per_object.empty()) {
        std::vector<CameraView> cams;
        cams.push_back(make_top_down_camera(base.bounds, req.top_view_size, req.top_view_size));
        for (const auto& c : req.depth_cameras) cams.push_back(c);

        std::vector<SurfacePoint> surface;
        for (const auto& cam : cams) {
            RenderOutput rendered = render(base, cam);
            auto pts = depth_to_surface(rendered, cam, 0);
            surface.insert(surface.end(), pts.begin(), pts.end());
        }
        std::map<int, int> per_object;
        for (const auto& sp : surface) per_object[sp.object_id] += 1;
        for (auto [obj, count] : gaussians_per_object)
            if (per_object[obj] < req.min_surface_points)
                throw ObjectTooSparse("apply_update: object " + std::to_string(obj) +
                                      " has only " + std::to_string(per_object[obj]) +
                                      " merged surface points");

        if (req.fill_interior) surface = fill_interior(surface, req.sim.particle_spacing);
        ParticleSystem particles =
            sample_particles(surface, req.sim.particle_spacing, req.sim.material);
        result.particle_count = int(particles.particles.size());

        try {
            result.sim = simulate(particles, req.sim);
            result.simulated = true;
        } catch (const SimulationDiverged& e) {
            result.diverged = true;
            result.message = e.what();
            result.scene = base;
            result.pre_refine_scene = base;
            return result;
        }

        // Per-object rigid motion from the particle displacement field.
        std::map<int, std::vector<Vec3>> starts, ends;
        for (size_t i = 0; i < particles.particles.size(); ++i) {
            int obj = particles.particles[i].object_id;
            starts[obj].push_back(result.sim.start_positions[i]);
            ends[obj].push_back(result.sim.end_positions[i]);
        }
        for (auto& [obj, start_pts] : starts) {
            if (start_pts.size() < 3) continue;
            try {
                result.transforms[obj] = fit_rigid(start_pts, ends[obj]);
            } catch (const DataError&) {
                // Degenerate particle sets keep the identity transform.
            }
        }

        for (auto& g : base.gaussians) {
            int obj = object_of(g);
            auto it = result.transforms.find(obj);
            if (it == result.transforms.end() || it->second.is_identity(1e-15)) continue;
            const RigidTransform& rt = it->second;
            g.mean = rt.apply(g.mean);
            Vec4 q_rot = rotation_to_quat(rt.rotation);
            Vec4 q = quat_multiply(q_rot, g.rotation);
            g.rotation = q / q.norm();
        }
    }

    result.pre_refine_scene = base;
    result.scene = req.refine_iterations > 0
                       ? refine(base, req.post_view, req.refine_iterations, req.refine_config)
                       : base;
    return result;
}

}  // namespace objsplat
