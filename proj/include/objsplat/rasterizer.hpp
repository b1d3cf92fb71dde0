#pragma once

#include "objsplat/camera.hpp"
#include "objsplat/common.hpp"
#include "objsplat/scene.hpp"

#include <algorithm>
#include <optional>
#include <vector>

namespace objsplat {

// Rasterization constants. The support of a splat is truncated at 3 sigma
// (in both the surface kernel and the low-pass kernel), which is also the
// footprint used for culling and tile assignment, so a pixel outside the
// bounding box never carries weight.
inline constexpr int kTileSize = 16;
inline constexpr double kNearClip = 1e-4;          // meters
inline constexpr double kLowpassSigma = 0.5;       // pixels
inline constexpr double kKernelCutoffR2 = 9.0;     // (3 sigma)^2 in unit coords
inline constexpr double kMinTransmittance = 1e-4;  // early compositing stop
inline constexpr double kDepthNormEps = 1e-8;
inline constexpr double kRayPlaneEps = 1e-8;

/// A splat prepared for rasterization into one view. All geometry is in the
/// camera frame; axis_u/axis_v are the tangent directions scaled by the
/// per-axis splat scales.
struct SplatPrimitive {
    int index = -1;             // into the scene's gaussian list
    double depth = 0;           // camera-space z of the mean, meters
    int x0 = 0, y0 = 0, x1 = -1, y1 = -1;  // pixel bounding box, inclusive
    Vec3 center_cam;
    Vec3 axis_u, axis_v;        // scale_u * tangent_u, scale_v * tangent_v
    Vec3 normal_cam;            // unit
    double scale_u = 0, scale_v = 0;
    Vec2 proj;                  // projected mean, pixels
};

/// Per-pixel composited buffers of one render pass.
struct RenderOutput {
    ImageXd rgb;     // H x W x 3
    ImageXd mask;    // H x W x 3
    ImageXd onehot;  // H x W x (N+1), accumulated pre-softmax
    ImageXd depth;   // H x W x 1, alpha-normalized expected depth, meters
    ImageXd alpha;   // H x W x 1, accumulated opacity

    RenderOutput() = default;
    RenderOutput(int w, int h, int onehot_channels)
        : rgb(w, h, 3), mask(w, h, 3), onehot(w, h, onehot_channels),
          depth(w, h, 1), alpha(w, h, 1) {}
};

/// Gradients with respect to every raw field of a Gaussian2D.
struct GaussianGrad {
    Vec3 mean = Vec3::Zero();
    Vec4 rotation = Vec4::Zero();
    Vec2 log_scale = Vec2::Zero();
    double opacity_raw = 0;
    Vec3 color = Vec3::Zero();
    Vec3 mask_color = Vec3::Zero();
    VecX object_logits;
};

struct SceneGradients {
    std::vector<GaussianGrad> g;
    // Norm inputs for the densification statistic: dL/d(projected mean) in
    // pixels, and whether the gaussian contributed to this render at all.
    std::vector<Vec2> viewspace;
    std::vector<uint8_t> visible;
};

/// Projects an activated splat into a view. Returns nullopt when the mean is
/// behind the near plane or the conservative 3-sigma footprint misses the
/// image entirely.
inline std::optional<SplatPrimitive> project(const ActivatedGaussian& g, const CameraView& cam,
                                             int index) {
    SplatPrimitive prim;
    prim.index = index;
    prim.center_cam = cam.world_to_camera(g.mean);
    if (prim.center_cam.z() <= kNearClip) return std::nullopt;
    prim.depth = prim.center_cam.z();
    prim.axis_u = g.scale_u * (cam.rotation * g.tangent_u);
    prim.axis_v = g.scale_v * (cam.rotation * g.tangent_v);
    prim.normal_cam = cam.rotation * g.normal;
    prim.scale_u = g.scale_u;
    prim.scale_v = g.scale_v;
    prim.proj = cam.project(prim.center_cam);

    // Conservative screen bounds via the camera-frame AABB of the splat's
    // 3-sigma bounding sphere. If the sphere crosses the near plane the
    // whole image is kept.
    double radius = 3.0 * std::max(g.scale_u, g.scale_v);
    double min_x, min_y, max_x, max_y;
    if (prim.center_cam.z() - radius <= kNearClip) {
        min_x = 0;
        min_y = 0;
        max_x = cam.width - 1;
        max_y = cam.height - 1;
    } else {
        min_x = min_y = std::numeric_limits<double>::max();
        max_x = max_y = std::numeric_limits<double>::lowest();
        for (int corner = 0; corner < 8; ++corner) {
            Vec3 p = prim.center_cam;
            p.x() += (corner & 1) ? radius : -radius;
            p.y() += (corner & 2) ? radius : -radius;
            p.z() += (corner & 4) ? radius : -radius;
            Vec2 s = cam.project(p);
            min_x = std::min(min_x, s.x());
            max_x = std::max(max_x, s.x());
            min_y = std::min(min_y, s.y());
            max_y = std::max(max_y, s.y());
        }
    }
    // Pad for the low-pass kernel support (1.5 px around the projected mean).
    prim.x0 = std::max(0, int(std::floor(std::min(min_x, prim.proj.x() - 2.0))));
    prim.y0 = std::max(0, int(std::floor(std::min(min_y, prim.proj.y() - 2.0))));
    prim.x1 = std::min(cam.width - 1, int(std::ceil(std::max(max_x, prim.proj.x() + 2.0))));
    prim.y1 = std::min(cam.height - 1, int(std::ceil(std::max(max_y, prim.proj.y() + 2.0))));
    if (prim.x0 > prim.x1 || prim.y0 > prim.y1) return std::nullopt;
    return prim;
}

namespace detail {

// Ray-splat intersection state reused between the kernel and its backward.
struct KernelEval {
    double g_plane = 0;   // surface kernel value (0 when degenerate/behind)
    double g_lp = 0;      // screen-space low-pass kernel value
    bool plane_valid = false;
    double beta = 0;      // ray . normal
    double t_hit = 0;     // ray parameter of the plane intersection
    Vec3 ray;             // camera-frame ray direction, z = 1
    Vec3 hit;             // intersection point, camera frame
    double u = 0, v = 0;  // local coordinates in units of scale
};

// truncate: zero out weights beyond 3 sigma. The rasterizer truncates so
// its support matches the tile footprint; the public kernel_weight keeps
// the full tails.
inline KernelEval eval_kernel(const SplatPrimitive& prim, double px, double py,
                              const CameraView& cam, bool truncate) {
    KernelEval k;
    k.ray = cam.pixel_ray(px, py);
    k.beta = k.ray.dot(prim.normal_cam);
    if (std::abs(k.beta) > kRayPlaneEps) {
        double gamma = prim.normal_cam.dot(prim.center_cam);
        k.t_hit = gamma / k.beta;
        if (k.t_hit > kNearClip) {
            k.hit = k.t_hit * k.ray;
            Vec3 d = k.hit - prim.center_cam;
            k.u = d.dot(prim.axis_u) / (prim.scale_u * prim.scale_u);
            k.v = d.dot(prim.axis_v) / (prim.scale_v * prim.scale_v);
            double r2 = k.u * k.u + k.v * k.v;
            if (!truncate || r2 <= kKernelCutoffR2) k.g_plane = std::exp(-0.5 * r2);
            k.plane_valid = true;
        }
    }
    double dx = px - prim.proj.x();
    double dy = py - prim.proj.y();
    double rho2 = (dx * dx + dy * dy) / (kLowpassSigma * kLowpassSigma);
    if (!truncate || rho2 <= kKernelCutoffR2) k.g_lp = std::exp(-0.5 * rho2);
    return k;
}

}  // namespace detail

/// Kernel weight of a splat at a pixel: the ray-splat intersection Gaussian,
/// max'ed with a screen-space Gaussian of 0.5 px standard deviation centered
/// at the projected mean (low-pass term). Degenerate ray-plane intersections
/// contribute only through the low-pass term.
inline double kernel_weight(const SplatPrimitive& prim, double px, double py,
                            const CameraView& cam) {
    detail::KernelEval k = detail::eval_kernel(prim, px, py, cam, /*truncate=*/false);
    return std::max(k.g_plane, k.g_lp);
}

/// One entry of a per-pixel compositing chain, front-to-back order.
struct CompositeEntry {
    double alpha = 0;
    double weight = 0;  // kernel value g-hat at the pixel
    double depth = 0;
    Vec3 color = Vec3::Zero();
    Vec3 mask_color = Vec3::Zero();
    VecX object_weights;
};

struct CompositeResult {
    Vec3 rgb = Vec3::Zero();
    Vec3 mask = Vec3::Zero();
    VecX onehot;
    double depth = 0;
    double alpha = 0;
};

/// Front-to-back alpha compositing of one pixel. Entries must be sorted by
/// depth (ties by gaussian index). The depth channel is the alpha-normalized
/// expected depth; compositing stops once transmittance drops below 1e-4.
inline CompositeResult composite_pixel(const std::vector<CompositeEntry>& entries,
                                       int onehot_channels) {
    CompositeResult out;
    out.onehot = VecX::Zero(onehot_channels);
    double transmittance = 1.0;
    double depth_sum = 0.0;
    for (const auto& e : entries) {
        double w = e.alpha * e.weight;
        if (w < 1e-14) continue;
        double wt = w * transmittance;
        out.rgb += wt * e.color;
        out.mask += wt * e.mask_color;
        out.onehot += wt * e.object_weights;
        depth_sum += wt * e.depth;
        out.alpha += wt;
        transmittance *= 1.0 - w;
        if (transmittance < kMinTransmittance) break;
    }
    out.depth = depth_sum / std::max(out.alpha, kDepthNormEps);
    return out;
}

namespace detail {

struct Prepared {
    std::vector<ActivatedGaussian> activated;
    std::vector<SplatPrimitive> prims;          // sorted by (depth, index)
    std::vector<std::vector<int>> tiles;        // indices into prims
    int tiles_x = 0, tiles_y = 0;
};

inline Prepared prepare(const SceneSnapshot& scene, const CameraView& cam) {
    Prepared p;
    p.activated.reserve(scene.size());
    for (const auto& g : scene.gaussians) p.activated.push_back(activate(g));
    p.prims.reserve(scene.size());
    for (size_t i = 0; i < p.activated.size(); ++i)
        if (auto prim = project(p.activated[i], cam, int(i))) p.prims.push_back(*prim);
    std::sort(p.prims.begin(), p.prims.end(), [](const SplatPrimitive& a, const SplatPrimitive& b) {
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.index < b.index;
    });
    p.tiles_x = (cam.width + kTileSize - 1) / kTileSize;
    p.tiles_y = (cam.height + kTileSize - 1) / kTileSize;
    p.tiles.assign(size_t(p.tiles_x) * p.tiles_y, {});
    for (size_t pi = 0; pi < p.prims.size(); ++pi) {
        const auto& prim = p.prims[pi];
        int tx0 = prim.x0 / kTileSize, tx1 = prim.x1 / kTileSize;
        int ty0 = prim.y0 / kTileSize, ty1 = prim.y1 / kTileSize;
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx)
                p.tiles[size_t(ty) * p.tiles_x + tx].push_back(int(pi));
    }
    return p;
}

}  // namespace detail

/// Renders every channel of the scene into the given view. Deterministic:
/// splats composite strictly front-to-back (depth ties broken by gaussian
/// index) and pixels are visited in scan order.
inline RenderOutput render(const SceneSnapshot& scene, const CameraView& cam) {
    const int nch = scene.object_count + 1;
    RenderOutput out(cam.width, cam.height, nch);
    detail::Prepared prep = detail::prepare(scene, cam);

    for (int ty = 0; ty < prep.tiles_y; ++ty) {
        for (int tx = 0; tx < prep.tiles_x; ++tx) {
            const auto& list = prep.tiles[size_t(ty) * prep.tiles_x + tx];
            if (list.empty()) continue;
            int px1 = std::min(cam.width, (tx + 1) * kTileSize);
            int py1 = std::min(cam.height, (ty + 1) * kTileSize);
            for (int y = ty * kTileSize; y < py1; ++y) {
                for (int x = tx * kTileSize; x < px1; ++x) {
                    double transmittance = 1.0;
                    double depth_sum = 0.0, alpha_acc = 0.0;
                    double* rgb = out.rgb.pixel(y, x);
                    double* mask = out.mask.pixel(y, x);
                    double* oh = out.onehot.pixel(y, x);
                    for (int pi : list) {
                        const SplatPrimitive& prim = prep.prims[pi];
                        if (x < prim.x0 || x > prim.x1 || y < prim.y0 || y > prim.y1) continue;
                        detail::KernelEval k =
                            detail::eval_kernel(prim, double(x), double(y), cam, true);
                        double ghat = std::max(k.g_plane, k.g_lp);
                        const ActivatedGaussian& g = prep.activated[prim.index];
                        double w = g.alpha * ghat;
                        if (w < 1e-14) continue;
                        double wt = w * transmittance;
                        rgb[0] += wt * g.color[0];
                        rgb[1] += wt * g.color[1];
                        rgb[2] += wt * g.color[2];
                        mask[0] += wt * g.mask_color[0];
                        mask[1] += wt * g.mask_color[1];
                        mask[2] += wt * g.mask_color[2];
                        for (int c = 0; c < nch; ++c) oh[c] += wt * g.object_weights[c];
                        depth_sum += wt * prim.depth;
                        alpha_acc += wt;
                        transmittance *= 1.0 - w;
                        if (transmittance < kMinTransmittance) break;
                    }
                    out.alpha.at(y, x, 0) = alpha_acc;
                    out.depth.at(y, x, 0) = depth_sum / std::max(alpha_acc, kDepthNormEps);
                }
            }
        }
    }
    return out;
}

namespace detail {

// Per-primitive gradient accumulator, camera frame. Folded into raw
// parameter gradients once per primitive after the pixel sweep.
struct PrimGradAccum {
    Vec3 d_center = Vec3::Zero();
    Vec3 d_axis_dir_u = Vec3::Zero();  // wrt unit tangent_u (camera frame)
    Vec3 d_axis_dir_v = Vec3::Zero();
    Vec3 d_normal = Vec3::Zero();
    Vec2 d_proj = Vec2::Zero();
    double d_scale_u = 0, d_scale_v = 0;
    double d_alpha = 0;
    Vec3 d_color = Vec3::Zero();
    Vec3 d_mask = Vec3::Zero();
    VecX d_objw;
    bool touched = false;
};

// Gradient of R(q / |q|) contracted with per-column gradients. g_cols holds
// dL/d(column i of R) as its columns.
inline Vec4 quat_rotation_backward(const Vec4& q, const Mat3& g_cols) {
    double norm = q.norm();
    Vec4 n = q / norm;
    double w = n[0], x = n[1], y = n[2], z = n[3];
    Mat3 dw, dx, dy, dz;
    dw << 0, -z, y,
          z, 0, -x,
          -y, x, 0;
    dx << 0, y, z,
          y, -2 * x, -w,
          z, w, -2 * x;
    dy << -2 * y, x, w,
          x, 0, z,
          -w, z, -2 * y;
    dz << -2 * z, -w, x,
          w, -2 * z, y,
          x, y, 0;
    Vec4 g_unit(2.0 * (dw.array() * g_cols.array()).sum(),
                2.0 * (dx.array() * g_cols.array()).sum(),
                2.0 * (dy.array() * g_cols.array()).sum(),
                2.0 * (dz.array() * g_cols.array()).sum());
    // Through the normalization q -> q / |q|.
    return (g_unit - n * n.dot(g_unit)) / norm;
}

}  // namespace detail

/// Analytic backward pass of render(). `output_grads` holds dL/d(channel)
/// in RenderOutput layout; returns dL/d(raw parameter) for every gaussian,
/// plus the per-gaussian view-space positional gradient used by
/// densification. Recomputes the forward chain per pixel instead of storing
/// per-pixel transmittance.
inline SceneGradients render_backward(const SceneSnapshot& scene, const CameraView& cam,
                                      const RenderOutput& output_grads) {
    const int nch = scene.object_count + 1;
    detail::Prepared prep = detail::prepare(scene, cam);

    SceneGradients grads;
    grads.g.resize(scene.size());
    for (auto& g : grads.g) g.object_logits = VecX::Zero(nch);
    grads.viewspace.assign(scene.size(), Vec2::Zero());
    grads.visible.assign(scene.size(), 0);

    std::vector<detail::PrimGradAccum> accum(prep.prims.size());
    for (auto& a : accum) a.d_objw = VecX::Zero(nch);

    struct StoredContrib {
        int prim;  // index into prep.prims
        double w, transmittance, phi;
        detail::KernelEval kernel;
    };
    std::vector<StoredContrib> chain;

    for (int ty = 0; ty < prep.tiles_y; ++ty) {
        for (int tx = 0; tx < prep.tiles_x; ++tx) {
            const auto& list = prep.tiles[size_t(ty) * prep.tiles_x + tx];
            if (list.empty()) continue;
            int px1 = std::min(cam.width, (tx + 1) * kTileSize);
            int py1 = std::min(cam.height, (ty + 1) * kTileSize);
            for (int y = ty * kTileSize; y < py1; ++y) {
                for (int x = tx * kTileSize; x < px1; ++x) {
                    // Forward re-walk, mirroring render() exactly.
                    chain.clear();
                    double transmittance = 1.0;
                    double depth_sum = 0.0, alpha_acc = 0.0;
                    for (int pi : list) {
                        const SplatPrimitive& prim = prep.prims[pi];
                        if (x < prim.x0 || x > prim.x1 || y < prim.y0 || y > prim.y1) continue;
                        detail::KernelEval k =
                            detail::eval_kernel(prim, double(x), double(y), cam, true);
                        double ghat = std::max(k.g_plane, k.g_lp);
                        double w = prep.activated[prim.index].alpha * ghat;
                        if (w < 1e-14) continue;
                        chain.push_back({pi, w, transmittance, 0.0, k});
                        depth_sum += w * transmittance * prim.depth;
                        alpha_acc += w * transmittance;
                        transmittance *= 1.0 - w;
                        if (transmittance < kMinTransmittance) break;
                    }
                    if (chain.empty()) continue;

                    const double* g_rgb = output_grads.rgb.pixel(y, x);
                    const double* g_mask = output_grads.mask.pixel(y, x);
                    const double* g_oh = output_grads.onehot.pixel(y, x);
                    double g_depth = output_grads.depth.at(y, x, 0);
                    double g_alpha = output_grads.alpha.at(y, x, 0);

                    double denom = std::max(alpha_acc, kDepthNormEps);
                    double g_depth_sum = g_depth / denom;
                    double g_alpha_total = g_alpha;
                    if (alpha_acc > kDepthNormEps)
                        g_alpha_total -= g_depth * depth_sum / (denom * denom);

                    // phi_i = dL/d(contribution weight of splat i).
                    for (auto& c : chain) {
                        const SplatPrimitive& prim = prep.prims[c.prim];
                        const ActivatedGaussian& g = prep.activated[prim.index];
                        double phi = g_alpha_total + g_depth_sum * prim.depth;
                        for (int ch = 0; ch < 3; ++ch)
                            phi += g_rgb[ch] * g.color[ch] + g_mask[ch] * g.mask_color[ch];
                        for (int ch = 0; ch < nch; ++ch) phi += g_oh[ch] * g.object_weights[ch];
                        c.phi = phi;
                    }

                    // Back-to-front: suffix holds sum of phi_k * omega_k over
                    // splats behind the current one.
                    double suffix = 0.0;
                    for (int i = int(chain.size()) - 1; i >= 0; --i) {
                        StoredContrib& c = chain[i];
                        const SplatPrimitive& prim = prep.prims[c.prim];
                        const ActivatedGaussian& g = prep.activated[prim.index];
                        double omega = c.w * c.transmittance;
                        double d_w = c.phi * c.transmittance;
                        if (c.w < 1.0 - 1e-12) d_w -= suffix / (1.0 - c.w);
                        suffix += c.phi * omega;

                        detail::PrimGradAccum& a = accum[c.prim];
                        a.touched = true;
                        // Payload gradients.
                        for (int ch = 0; ch < 3; ++ch) {
                            a.d_color[ch] += omega * g_rgb[ch];
                            a.d_mask[ch] += omega * g_mask[ch];
                        }
                        for (int ch = 0; ch < nch; ++ch) a.d_objw[ch] += omega * g_oh[ch];
                        a.d_center.z() += omega * g_depth_sum;  // depth payload

                        const detail::KernelEval& k = c.kernel;
                        double ghat = std::max(k.g_plane, k.g_lp);
                        a.d_alpha += ghat * d_w;
                        double d_ghat = g.alpha * d_w;
                        if (k.g_plane >= k.g_lp) {
                            // Surface kernel branch.
                            double d_u = -k.u * k.g_plane * d_ghat;
                            double d_v = -k.v * k.g_plane * d_ghat;
                            Vec3 dir_u = prim.axis_u / prim.scale_u;
                            Vec3 dir_v = prim.axis_v / prim.scale_v;
                            double du_dt = k.ray.dot(dir_u) / prim.scale_u;
                            double dv_dt = k.ray.dot(dir_v) / prim.scale_v;
                            double d_thit = d_u * du_dt + d_v * dv_dt;
                            Vec3 rel = k.hit - prim.center_cam;
                            a.d_center += -d_u * dir_u / prim.scale_u - d_v * dir_v / prim.scale_v +
                                          d_thit / k.beta * prim.normal_cam;
                            a.d_normal += d_thit / k.beta * (prim.center_cam - k.hit);
                            a.d_axis_dir_u += d_u * rel / prim.scale_u;
                            a.d_axis_dir_v += d_v * rel / prim.scale_v;
                            a.d_scale_u += -d_u * k.u / prim.scale_u;
                            a.d_scale_v += -d_v * k.v / prim.scale_v;
                        } else {
                            // Low-pass branch: gradient flows to the
                            // projected mean only.
                            double inv_s2 = 1.0 / (kLowpassSigma * kLowpassSigma);
                            double dx = double(x) - prim.proj.x();
                            double dy = double(y) - prim.proj.y();
                            a.d_proj.x() += d_ghat * k.g_lp * dx * inv_s2;
                            a.d_proj.y() += d_ghat * k.g_lp * dy * inv_s2;
                        }
                    }
                }
            }
        }
    }

    // Fold per-primitive camera-frame accumulators into raw parameter grads.
    const Mat3 rot_t = cam.rotation.transpose();
    for (size_t pi = 0; pi < prep.prims.size(); ++pi) {
        const detail::PrimGradAccum& a = accum[pi];
        if (!a.touched) continue;
        const SplatPrimitive& prim = prep.prims[pi];
        const Gaussian2D& raw = scene.gaussians[prim.index];
        const ActivatedGaussian& act = prep.activated[prim.index];
        GaussianGrad& gg = grads.g[prim.index];

        // Projected-mean gradients feed back into the camera-frame center.
        Vec3 d_center = a.d_center;
        double z = prim.center_cam.z();
        d_center.x() += a.d_proj.x() * cam.fx / z;
        d_center.y() += a.d_proj.y() * cam.fy / z;
        d_center.z() -= (a.d_proj.x() * cam.fx * prim.center_cam.x() +
                         a.d_proj.y() * cam.fy * prim.center_cam.y()) / (z * z);

        grads.visible[prim.index] = 1;
        grads.viewspace[prim.index] += Vec2(d_center.x() * z / cam.fx, d_center.y() * z / cam.fy);

        gg.mean += rot_t * d_center;

        Mat3 g_cols;
        g_cols.col(0) = rot_t * a.d_axis_dir_u;
        g_cols.col(1) = rot_t * a.d_axis_dir_v;
        g_cols.col(2) = rot_t * a.d_normal;
        gg.rotation += detail::quat_rotation_backward(raw.rotation, g_cols);

        gg.log_scale[0] += a.d_scale_u * act.scale_u;
        gg.log_scale[1] += a.d_scale_v * act.scale_v;
        gg.opacity_raw += a.d_alpha * act.alpha * (1.0 - act.alpha);
        gg.color += a.d_color;
        gg.mask_color += a.d_mask;

        // Through the per-gaussian softmax.
        double dot = a.d_objw.dot(act.object_weights);
        for (int ch = 0; ch < nch; ++ch)
            gg.object_logits[ch] += act.object_weights[ch] * (a.d_objw[ch] - dot);
    }
    return grads;
}

}  // namespace objsplat
