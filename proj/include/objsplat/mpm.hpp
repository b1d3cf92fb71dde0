#pragma once

#include "objsplat/camera.hpp"
#include "objsplat/common.hpp"
#include "objsplat/rasterizer.hpp"

#include <functional>
#include <map>
#include <vector>

namespace objsplat {

/// Elastic material constants (fixed corotated model).
struct MaterialParams {
    double youngs_modulus = 5e4;  // Pa
    double poisson_ratio = 0.4;
    double density = 1000.0;      // kg/m^3

    double mu() const { return youngs_modulus / (2.0 * (1.0 + poisson_ratio)); }
    double lambda() const {
        return youngs_modulus * poisson_ratio /
               ((1.0 + poisson_ratio) * (1.0 - 2.0 * poisson_ratio));
    }
    double wave_speed() const { return std::sqrt(youngs_modulus / density); }
};

struct Particle {
    Vec3 position = Vec3::Zero();   // meters, world frame (z up)
    Vec3 velocity = Vec3::Zero();   // m/s
    double mass = 0;                // kg
    double volume = 0;              // m^3
    Mat3 deformation = Mat3::Identity();  // F
    Mat3 affine = Mat3::Zero();           // APIC C matrix
    int object_id = -1;
};

struct ParticleSystem {
    std::vector<Particle> particles;
    double spacing = 0.005;  // sampling spacing, meters
};

struct SurfacePoint {
    Vec3 position;
    Vec3 normal;
    int object_id = -1;
};

struct SimConfig {
    MaterialParams material;
    double particle_spacing = 0.005;   // meters
    double grid_dx_factor = 4.0;       // dx = factor * particle spacing
    double cfl_fraction = 0.3;         // CFL bound = fraction * dx / wave speed
    double dt_safety = 0.5;            // dt = safety * CFL bound
    Vec3 gravity = Vec3(0, 0, -9.81);
    double ground_height = 0.0;        // collision plane, world z
    double ground_friction = 0.4;
    int steps = 100;
    double duration = 0;               // seconds; > 0 overrides steps

    double dx() const { return grid_dx_factor * particle_spacing; }
    double cfl_bound() const { return cfl_fraction * dx() / material.wave_speed(); }
    double dt() const { return dt_safety * cfl_bound(); }
    int step_count() const {
        return duration > 0 ? int(std::ceil(duration / dt())) : steps;
    }
};

/// Background grid over a fixed axis-aligned domain. Node i,j,k sits at
/// origin + (i,j,k) * dx.
struct MpmGrid {
    Vec3 origin = Vec3::Zero();
    int nx = 0, ny = 0, nz = 0;
    double dx = 0;
    std::vector<double> mass;
    std::vector<Vec3> velocity;  // momentum during P2G, velocity afterwards

    size_t index(int i, int j, int k) const {
        return (size_t(k) * ny + j) * nx + i;
    }
    Vec3 node_position(int i, int j, int k) const {
        return origin + dx * Vec3(i, j, k);
    }
    void clear() {
        std::fill(mass.begin(), mass.end(), 0.0);
        std::fill(velocity.begin(), velocity.end(), Vec3::Zero());
    }
};

/// Back-projects every solidly covered object pixel (alpha > 0.5) of a
/// rendered view into a world-space surface point with a depth-gradient
/// normal. Objects with fewer than min_points (but more than zero) raise
/// ObjectTooSparse.
inline std::vector<SurfacePoint> depth_to_surface(const RenderOutput& rendered,
                                                  const CameraView& cam, int min_points = 50) {
    const int w = rendered.depth.width, h = rendered.depth.height;
    const int nch = rendered.onehot.channels;
    const int background = nch - 1;
    auto valid = [&](int x, int y) {
        return x >= 0 && x < w && y >= 0 && y < h && rendered.alpha.at(y, x, 0) > 0.5 &&
               rendered.depth.at(y, x, 0) > 0;
    };
    auto world_point = [&](int x, int y) {
        return cam.backproject(double(x), double(y), rendered.depth.at(y, x, 0));
    };

    std::vector<SurfacePoint> points;
    std::map<int, int> per_object;
    Vec3 cam_center = cam.center();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!valid(x, y)) continue;
            int best = 0;
            for (int c = 1; c < nch; ++c)
                if (rendered.onehot.at(y, x, c) > rendered.onehot.at(y, x, best)) best = c;
            if (best == background) continue;
            SurfacePoint sp;
            sp.position = world_point(x, y);
            sp.object_id = best;
            // Normal from image-space neighbors, one-sided at borders.
            int xm = valid(x - 1, y) ? x - 1 : x;
            int xp = valid(x + 1, y) ? x + 1 : x;
            int ym = valid(x, y - 1) ? y - 1 : y;
            int yp = valid(x, y + 1) ? y + 1 : y;
            Vec3 du = (xp != xm) ? Vec3(world_point(xp, y) - world_point(xm, y)) : Vec3::Zero();
            Vec3 dv = (yp != ym) ? Vec3(world_point(x, yp) - world_point(x, ym)) : Vec3::Zero();
            Vec3 n = du.cross(dv);
            if (n.norm() < 1e-12) n = cam_center - sp.position;  // degenerate: face the camera
            n.normalize();
            if (n.dot(cam_center - sp.position) < 0) n = -n;
            sp.normal = n;
            points.push_back(sp);
            per_object[best] += 1;
        }
    for (auto [obj, count] : per_object)
        if (count < min_points)
            throw ObjectTooSparse("depth_to_surface: object " + std::to_string(obj) + " has only " +
                                  std::to_string(count) + " surface points");
    return points;
}

/// Greedy Poisson-disk-style thinning: a point survives when no earlier
/// survivor lies within `spacing`. Survivors become particles at rest with
/// identity deformation and mass density * spacing^3.
inline ParticleSystem sample_particles(const std::vector<SurfacePoint>& surface, double spacing,
                                       const MaterialParams& material = {}) {
    if (spacing <= 0) throw DataError("sample_particles: spacing must be positive");
    if (surface.empty()) throw DataError("sample_particles: empty surface");

    struct CellKey {
        int64_t x, y, z;
        bool operator<(const CellKey& o) const {
            if (x != o.x) return x < o.x;
            if (y != o.y) return y < o.y;
            return z < o.z;
        }
    };
    const double cell = spacing;
    std::map<CellKey, std::vector<int>> hash;
    auto key_of = [&](const Vec3& p) {
        return CellKey{int64_t(std::floor(p.x() / cell)), int64_t(std::floor(p.y() / cell)),
                       int64_t(std::floor(p.z() / cell))};
    };

    ParticleSystem sys;
    sys.spacing = spacing;
    std::vector<Vec3> kept;
    for (const auto& sp : surface) {
        CellKey k = key_of(sp.position);
        bool blocked = false;
        for (int dz = -1; dz <= 1 && !blocked; ++dz)
            for (int dy = -1; dy <= 1 && !blocked; ++dy)
                for (int dx = -1; dx <= 1 && !blocked; ++dx) {
                    auto it = hash.find(CellKey{k.x + dx, k.y + dy, k.z + dz});
                    if (it == hash.end()) continue;
                    for (int idx : it->second)
                        if ((kept[idx] - sp.position).norm() < spacing) {
                            blocked = true;
                            break;
                        }
                }
        if (blocked) continue;
        hash[k].push_back(int(kept.size()));
        kept.push_back(sp.position);
        Particle p;
        p.position = sp.position;
        p.volume = spacing * spacing * spacing;
        p.mass = material.density * p.volume;
        p.object_id = sp.object_id;
        sys.particles.push_back(p);
    }
    return sys;
}

/// Adds interior samples beneath a closed-ish surface: voxel centers of each
/// object's bounding box are kept when the nearest surface point of that
/// object faces away from them. One-particle-thick shells have no bending
/// stiffness and fold on impact; filled bodies behave quasi-rigidly.
inline std::vector<SurfacePoint> fill_interior(const std::vector<SurfacePoint>& surface,
                                               double spacing) {
    std::map<int, std::vector<const SurfacePoint*>> by_object;
    for (const auto& sp : surface) by_object[sp.object_id].push_back(&sp);

    std::vector<SurfacePoint> out = surface;
    for (auto& [obj, pts] : by_object) {
        Vec3 lo = pts[0]->position, hi = lo;
        for (const auto* sp : pts) {
            lo = lo.cwiseMin(sp->position);
            hi = hi.cwiseMax(sp->position);
        }
        Eigen::Vector3i steps = ((hi - lo) / spacing).array().floor().cast<int>();
        for (int k = 1; k < steps.z(); ++k)
            for (int j = 1; j < steps.y(); ++j)
                for (int i = 1; i < steps.x(); ++i) {
                    Vec3 c = lo + spacing * Vec3(i, j, k);
                    const SurfacePoint* nearest = nullptr;
                    double best = std::numeric_limits<double>::max();
                    for (const auto* sp : pts) {
                        double d = (sp->position - c).squaredNorm();
                        if (d < best) {
                            best = d;
                            nearest = sp;
                        }
                    }
                    if (std::sqrt(best) < 0.75 * spacing) continue;  // on the shell itself
                    if ((c - nearest->position).dot(nearest->normal) < 0)
                        out.push_back({c, nearest->normal, obj});
                }
    }
    return out;
}

namespace detail {

inline Mat3 polar_rotation(const Mat3& f) {
    // Undeformed particles (free fall, resting) keep F = I exactly.
    if ((f - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-13) return Mat3::Identity();
    Eigen::JacobiSVD<Mat3> svd(f, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 u = svd.matrixU(), v = svd.matrixV();
    Mat3 d = Mat3::Identity();
    d(2, 2) = (u * v.transpose()).determinant();
    return u * d * v.transpose();
}

}  // namespace detail

/// Sizes a grid that covers the particles, the reachable fall range and the
/// collision plane, with a two-cell B-spline margin.
inline MpmGrid make_grid(const ParticleSystem& sys, const SimConfig& cfg) {
    if (sys.particles.empty()) throw DataError("make_grid: no particles");
    Vec3 lo = sys.particles[0].position, hi = lo;
    for (const auto& p : sys.particles) {
        lo = lo.cwiseMin(p.position);
        hi = hi.cwiseMax(p.position);
    }
    const double dx = cfg.dx();
    double sim_time = cfg.step_count() * cfg.dt();
    double drop_bound = 0.5 * cfg.gravity.norm() * sim_time * sim_time + 4 * dx;
    // Reachable fall range is capped by the collision plane.
    double reach = std::min(drop_bound, std::max(0.0, lo.z() - cfg.ground_height) + 4 * dx);
    Vec3 extent = hi - lo;
    double horiz_pad = std::max(4 * dx, 0.3 * std::max(extent.x(), extent.y()) + 0.75 * reach);

    MpmGrid grid;
    grid.dx = dx;
    Vec3 lo_pad(lo.x() - horiz_pad, lo.y() - horiz_pad,
                std::max(cfg.ground_height - 3 * dx, lo.z() - drop_bound) - 3 * dx);
    Vec3 hi_pad(hi.x() + horiz_pad, hi.y() + horiz_pad, hi.z() + std::max(4 * dx, 0.2 * extent.z()));
    grid.origin = lo_pad;
    grid.nx = int(std::ceil((hi_pad.x() - lo_pad.x()) / dx)) + 3;
    grid.ny = int(std::ceil((hi_pad.y() - lo_pad.y()) / dx)) + 3;
    grid.nz = int(std::ceil((hi_pad.z() - lo_pad.z()) / dx)) + 3;
    grid.mass.assign(size_t(grid.nx) * grid.ny * grid.nz, 0.0);
    grid.velocity.assign(size_t(grid.nx) * grid.ny * grid.nz, Vec3::Zero());
    return grid;
}

/// One MLS-MPM cycle: P2G with quadratic B-spline weights and fixed
/// corotated stress, grid momentum update with gravity and ground collision
/// (friction 0.4 by default), then APIC G2P with F <- (I + dt C) F.
/// Deterministic: scatter and gather run in particle index order.
inline void mpm_step(ParticleSystem& sys, MpmGrid& grid, double dt, const SimConfig& cfg,
                     int step_index = 0) {
    if (dt > cfg.cfl_bound() * (1.0 + 1e-12))
        throw DataError("mpm_step: dt exceeds the CFL bound");
    const double dx = grid.dx;
    const double inv_dx = 1.0 / dx;
    const double mu = cfg.material.mu();
    const double lambda = cfg.material.lambda();
    grid.clear();

    auto base_and_weights = [&](const Vec3& pos, Eigen::Vector3i& base, Vec3 w[3]) {
        Vec3 xp = (pos - grid.origin) * inv_dx;
        for (int a = 0; a < 3; ++a) base[a] = int(std::floor(xp[a] - 0.5));
        Vec3 fx = xp - base.cast<double>();
        w[0] = 0.5 * (Vec3::Constant(1.5) - fx).array().square();
        w[1] = Vec3::Constant(0.75) - (fx - Vec3::Constant(1.0)).array().square().matrix();
        w[2] = 0.5 * (fx - Vec3::Constant(0.5)).array().square();
    };

    // Particles to grid.
    for (const auto& p : sys.particles) {
        Eigen::Vector3i base;
        Vec3 w[3];
        base_and_weights(p.position, base, w);
        double j_det = p.deformation.determinant();
        Mat3 r = detail::polar_rotation(p.deformation);
        Mat3 pf_t = 2.0 * mu * (p.deformation - r) * p.deformation.transpose() +
                    lambda * j_det * (j_det - 1.0) * Mat3::Identity();
        Mat3 affine = -dt * p.volume * (4.0 * inv_dx * inv_dx) * pf_t + p.mass * p.affine;
        for (int k = 0; k < 3; ++k)
            for (int j = 0; j < 3; ++j)
                for (int i = 0; i < 3; ++i) {
                    int gi = base[0] + i, gj = base[1] + j, gk = base[2] + k;
                    if (gi < 0 || gi >= grid.nx || gj < 0 || gj >= grid.ny || gk < 0 ||
                        gk >= grid.nz)
                        continue;
                    double weight = w[i][0] * w[j][1] * w[k][2];
                    Vec3 dpos = grid.node_position(gi, gj, gk) - p.position;
                    size_t n = grid.index(gi, gj, gk);
                    grid.mass[n] += weight * p.mass;
                    grid.velocity[n] += weight * (p.mass * p.velocity + affine * dpos);
                }
    }

    // Grid update: momentum -> velocity, gravity, collisions.
    for (int k = 0; k < grid.nz; ++k)
        for (int j = 0; j < grid.ny; ++j)
            for (int i = 0; i < grid.nx; ++i) {
                size_t n = grid.index(i, j, k);
                if (grid.mass[n] <= 0) continue;
                Vec3 v = grid.velocity[n] / grid.mass[n] + dt * cfg.gravity;
                double node_z = grid.origin.z() + k * dx;
                if (node_z <= cfg.ground_height && v.z() < 0) {
                    // Separate with Coulomb friction against the ground.
                    double vn = -v.z();
                    Vec3 vt(v.x(), v.y(), 0.0);
                    double vt_norm = vt.norm();
                    if (vt_norm > 1e-12)
                        vt *= std::max(0.0, 1.0 - cfg.ground_friction * vn / vt_norm);
                    v = Vec3(vt.x(), vt.y(), 0.0);
                }
                // Domain walls stop outward motion.
                if ((i < 2 && v.x() < 0) || (i > grid.nx - 3 && v.x() > 0)) v.x() = 0;
                if ((j < 2 && v.y() < 0) || (j > grid.ny - 3 && v.y() > 0)) v.y() = 0;
                if ((k < 2 && v.z() < 0) || (k > grid.nz - 3 && v.z() > 0)) v.z() = 0;
                grid.velocity[n] = v;
            }

    // Grid to particles.
    for (auto& p : sys.particles) {
        Eigen::Vector3i base;
        Vec3 w[3];
        base_and_weights(p.position, base, w);
        Vec3 v_new = Vec3::Zero();
        Mat3 b = Mat3::Zero();
        for (int k = 0; k < 3; ++k)
            for (int j = 0; j < 3; ++j)
                for (int i = 0; i < 3; ++i) {
                    int gi = base[0] + i, gj = base[1] + j, gk = base[2] + k;
                    if (gi < 0 || gi >= grid.nx || gj < 0 || gj >= grid.ny || gk < 0 ||
                        gk >= grid.nz)
                        continue;
                    double weight = w[i][0] * w[j][1] * w[k][2];
                    if (grid.mass[grid.index(gi, gj, gk)] <= 0) continue;
                    Vec3 gv = grid.velocity[grid.index(gi, gj, gk)];
                    Vec3 dpos = grid.node_position(gi, gj, gk) - p.position;
                    v_new += weight * gv;
                    b += weight * gv * dpos.transpose();
                }
        p.velocity = v_new;
        p.affine = 4.0 * inv_dx * inv_dx * b;
        p.position += dt * p.velocity;
        // Safety projection onto the static ground plane; the grid-level
        // clamp handles the bulk of the contact.
        if (p.position.z() < cfg.ground_height) {
            p.position.z() = cfg.ground_height;
            if (p.velocity.z() < 0) p.velocity.z() = 0;
        }
        p.deformation = (Mat3::Identity() + dt * p.affine) * p.deformation;
        if (!p.position.allFinite() || !p.velocity.allFinite() || !p.deformation.allFinite())
            throw SimulationDiverged("mpm_step: non-finite particle state at step " +
                                     std::to_string(step_index));
    }
}

struct SimResult {
    std::vector<Vec3> start_positions;
    std::vector<Vec3> end_positions;
    std::map<int, Vec3> object_displacement;  // centroid shift per object id
    int steps = 0;
    double dt = 0;
};

using SimStepCallback = std::function<void(int step, const ParticleSystem&)>;

/// Runs the configured number of steps (or duration) and reports start/end
/// positions plus per-object centroid displacements. Bit-deterministic for
/// fixed inputs.
inline SimResult simulate(ParticleSystem& sys, const SimConfig& cfg,
                          SimStepCallback on_step = nullptr) {
    if (sys.particles.empty()) throw DataError("simulate: no particles");
    SimResult result;
    result.dt = cfg.dt();
    result.steps = cfg.step_count();
    result.start_positions.reserve(sys.particles.size());
    for (const auto& p : sys.particles) result.start_positions.push_back(p.position);

    MpmGrid grid = make_grid(sys, cfg);
    for (int s = 0; s < result.steps; ++s) {
        mpm_step(sys, grid, result.dt, cfg, s);
        if (on_step) on_step(s, sys);
    }

    result.end_positions.reserve(sys.particles.size());
    for (const auto& p : sys.particles) result.end_positions.push_back(p.position);

    std::map<int, std::pair<Vec3, int>> acc;
    for (size_t i = 0; i < sys.particles.size(); ++i) {
        auto& slot = acc[sys.particles[i].object_id];
        slot.first += result.end_positions[i] - result.start_positions[i];
        slot.second += 1;
    }
    for (auto& [obj, slot] : acc)
        result.object_displacement[obj] = slot.first / double(slot.second);
    return result;
}

}  // namespace objsplat
