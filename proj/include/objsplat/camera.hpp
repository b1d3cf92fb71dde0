#pragma once

#include "objsplat/common.hpp"

namespace objsplat {

/// Pinhole camera with a rigid world-to-camera transform.
/// Convention: camera x points right, y down, z forward (along the view
/// direction). A world point p maps to camera frame as R * p + t.
struct CameraView {
    double fx = 0, fy = 0;
    double cx = 0, cy = 0;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    int width = 0, height = 0;

    Vec3 world_to_camera(const Vec3& p) const { return rotation * p + translation; }
    Vec3 camera_to_world(const Vec3& p) const { return rotation.transpose() * (p - translation); }
    Vec3 center() const { return -rotation.transpose() * translation; }

    // Projects a camera-frame point; caller guarantees p.z() > 0.
    Vec2 project(const Vec3& p) const {
        return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy};
    }

    // Camera-frame direction of the ray through pixel (px, py), z = 1.
    Vec3 pixel_ray(double px, double py) const {
        return {(px - cx) / fx, (py - cy) / fy, 1.0};
    }

    Vec3 backproject(double px, double py, double depth) const {
        return camera_to_world(pixel_ray(px, py) * depth);
    }

    void validate() const {
        if (fx <= 0 || fy <= 0) throw DataError("camera: focal lengths must be positive");
        if (width < 1 || height < 1) throw DataError("camera: image dimensions must be >= 1");
        Mat3 rtr = rotation.transpose() * rotation;
        if ((rtr - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
            throw DataError("camera: rotation is not orthonormal");
    }
};

// Camera at `eye` looking toward `target`. `up` is the world up direction
// (must not be parallel to the view direction).
inline CameraView make_look_at_camera(const Vec3& eye, const Vec3& target, const Vec3& up,
                                      double fx, double fy, int width, int height) {
    Vec3 forward = (target - eye).normalized();
    Vec3 right = forward.cross(up).normalized();
    Vec3 down = forward.cross(right);
    CameraView cam;
    cam.rotation.row(0) = right;
    cam.rotation.row(1) = down;
    cam.rotation.row(2) = forward;
    cam.translation = -cam.rotation * eye;
    cam.fx = fx;
    cam.fy = fy;
    cam.cx = 0.5 * (width - 1);
    cam.cy = 0.5 * (height - 1);
    cam.width = width;
    cam.height = height;
    return cam;
}

}  // namespace objsplat
