#pragma once

#include "objsplat/camera.hpp"
#include "objsplat/common.hpp"
#include "objsplat/image.hpp"

#include <vector>

namespace objsplat {

/// One oriented planar splat, stored in raw (pre-activation) form.
///
/// Activations: scales are exp(log_scale), opacity is sigmoid(opacity_raw),
/// the object assignment is softmax(object_logits). object_logits has N+1
/// entries for a scene with N objects; channel N is the background.
struct Gaussian2D {
    Vec3 mean = Vec3::Zero();               // world frame, meters
    Vec4 rotation = Vec4(1, 0, 0, 0);       // unit quaternion (w, x, y, z)
    Vec2 log_scale = Vec2::Zero();          // per-axis, meters in log space
    double opacity_raw = 0.0;
    Vec3 color = Vec3::Zero();              // RGB in [0, 1]
    Vec3 mask_color = Vec3::Zero();         // segmentation color in [0, 1]
    VecX object_logits;                     // N+1 entries

    bool finite() const {
        return mean.allFinite() && rotation.allFinite() && log_scale.allFinite() &&
               std::isfinite(opacity_raw) && color.allFinite() && mask_color.allFinite() &&
               object_logits.allFinite();
    }
};

/// Activated view of a Gaussian2D: orthonormal tangent frame, positive
/// scales, opacity in (0,1), object weights summing to 1.
struct ActivatedGaussian {
    Vec3 mean;
    Vec3 tangent_u, tangent_v, normal;  // orthonormal, world frame
    double scale_u, scale_v;            // meters
    double alpha;
    Vec3 color;
    Vec3 mask_color;
    VecX object_weights;
};

// Rotation matrix of a quaternion (w, x, y, z); q is normalized first.
// Columns are the splat's tangent_u, tangent_v and normal directions.
inline Mat3 quat_to_rotation(const Vec4& q) {
    Vec4 n = q / q.norm();
    double w = n[0], x = n[1], y = n[2], z = n[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

inline Vec4 rotation_to_quat(const Mat3& r) {
    Eigen::Quaterniond q(r);
    q.normalize();
    return Vec4(q.w(), q.x(), q.y(), q.z());
}

inline VecX softmax(const VecX& logits) {
    VecX shifted = logits.array() - logits.maxCoeff();
    VecX e = shifted.array().exp();
    return e / e.sum();
}

inline ActivatedGaussian activate(const Gaussian2D& g) {
    if (!g.finite()) throw InvalidGaussian("activate: gaussian has non-finite fields");
    ActivatedGaussian a;
    a.mean = g.mean;
    Mat3 r = quat_to_rotation(g.rotation);
    a.tangent_u = r.col(0);
    a.tangent_v = r.col(1);
    a.normal = r.col(2);
    a.scale_u = std::exp(g.log_scale[0]);
    a.scale_v = std::exp(g.log_scale[1]);
    a.alpha = sigmoid(g.opacity_raw);
    a.color = g.color;
    a.mask_color = g.mask_color;
    a.object_weights = softmax(g.object_logits);
    return a;
}

// Object a Gaussian belongs to: argmax over object logits, lowest index on
// ties. Index object_count means background.
inline int object_of(const Gaussian2D& g) {
    int best = 0;
    for (int i = 1; i < g.object_logits.size(); ++i)
        if (g.object_logits[i] > g.object_logits[best]) best = i;
    return best;
}

struct Bounds {
    Vec3 min_pt = Vec3::Zero();
    Vec3 max_pt = Vec3::Zero();

    Vec3 extent() const { return max_pt - min_pt; }
    double volume() const { return extent().prod(); }
    Vec3 center() const { return 0.5 * (min_pt + max_pt); }
};

/// Full scene state. Immutable during a render pass; the trainer owns the
/// single mutable copy while optimizing.
struct SceneSnapshot {
    std::vector<Gaussian2D> gaussians;
    int object_count = 0;                 // N; logits have N+1 channels
    std::vector<Vec3> palette;            // object id -> mask color, size N
    Bounds bounds;

    size_t size() const { return gaussians.size(); }

    void validate() const {
        for (const auto& g : gaussians) {
            if (g.object_logits.size() != object_count + 1)
                throw DataError("scene: object_logits size does not match object count");
            if (!g.finite()) throw InvalidGaussian("scene: gaussian has non-finite fields");
        }
        if (int(palette.size()) != object_count)
            throw DataError("scene: palette size does not match object count");
        for (size_t i = 0; i < palette.size(); ++i)
            for (size_t j = i + 1; j < palette.size(); ++j)
                if ((palette[i] - palette[j]).cwiseAbs().maxCoeff() < 32.0 / 255.0)
                    throw DataError("scene: palette colors too close (need L-inf >= 32/255)");
    }
};

/// One supervision view: image targets plus the camera that produced them.
/// labels[pixel] is the index of the one-hot channel that is 1 (N means
/// background).
struct TrainingView {
    ImageXd rgb;                    // H x W x 3 in [0, 1]
    ImageXd mask_rgb;               // H x W x 3 colorized segmentation
    std::vector<uint8_t> labels;    // H * W channel indices
    CameraView camera;
};

// Default training bounds: box containing all camera centers, each axis
// expanded by 20% of the largest extent (so rings of coplanar cameras
// still produce a usable volume).
inline Bounds bounds_from_cameras(const std::vector<CameraView>& cams) {
    if (cams.empty()) throw DataError("bounds_from_cameras: no cameras");
    Bounds b;
    b.min_pt = b.max_pt = cams[0].center();
    for (const auto& c : cams) {
        b.min_pt = b.min_pt.cwiseMin(c.center());
        b.max_pt = b.max_pt.cwiseMax(c.center());
    }
    double pad = 0.2 * b.extent().maxCoeff();
    b.min_pt.array() -= pad;
    b.max_pt.array() += pad;
    return b;
}

}  // namespace objsplat
