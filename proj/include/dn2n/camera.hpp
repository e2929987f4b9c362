#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace dn2n {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Pinhole intrinsics. Pixel (x,y) = (column,row), centers at integer
/// coordinates, origin top-left.
struct CameraIntrinsics {
    double fx = 0, fy = 0;
    double cx = 0, cy = 0;
    int width = 0, height = 0;

    void validate() const;
    bool in_bounds(const Vec2& pixel) const {
        return pixel.x() >= 0.0 && pixel.x() <= width - 1.0 && pixel.y() >= 0.0 &&
               pixel.y() <= height - 1.0;
    }
};

/// Camera-to-world pose, +z forward in camera frame.
struct Pose {
    Mat3 rotation = Mat3::Identity();   // camera axes expressed in world frame
    Vec3 translation = Vec3::Zero();    // camera center in world coordinates

    void validate() const;

    Vec3 to_world(const Vec3& p_cam) const { return rotation * p_cam + translation; }
    Vec3 to_camera(const Vec3& p_world) const { return rotation.transpose() * (p_world - translation); }
    Vec3 center() const { return translation; }
};

struct Ray {
    Vec3 origin = Vec3::Zero();
    Vec3 direction = Vec3::UnitZ();   // unit norm
    double t_near = 0, t_far = 1;
};

struct VisibilityMask {
    std::vector<bool> values;   // row-major over the patch
    double valid_fraction = 0;

    static VisibilityMask from_values(std::vector<bool> v);
};

struct Projection {
    Vec2 pixel;
    double depth;   // z in camera frame
};

/// One camera = intrinsics + pose, the unit the reprojection ops work with.
struct Camera {
    CameraIntrinsics intrinsics;
    Pose pose;
};

// Rays through the given (possibly fractional) pixel centers. Throws
// std::invalid_argument on out-of-bounds pixels.
std::vector<Ray> rays_for_pixels(const CameraIntrinsics& intrinsics, const Pose& pose,
                                 const std::vector<Vec2>& pixels, double t_near, double t_far);

Ray ray_for_pixel(const CameraIntrinsics& intrinsics, const Pose& pose, const Vec2& pixel,
                  double t_near, double t_far);

// Perspective projection; nullopt when the point is behind the camera
// (depth <= 1e-9).
std::optional<Projection> project(const Vec3& point_world, const CameraIntrinsics& intrinsics,
                                  const Pose& pose);

Vec3 unproject(const Vec2& pixel, double depth, const CameraIntrinsics& intrinsics,
               const Pose& pose);

// Transfer pixel+depth from src into dst via the world point. Requires
// depth > 0; nullopt when the point lands behind dst.
std::optional<Projection> reproject(const Vec2& pixel, double depth, const Camera& src,
                                    const Camera& dst);

/// Per-pixel depth map stored row-major, same convention as Image.
struct DepthMap {
    int height = 0, width = 0;
    std::vector<double> values;

    DepthMap() = default;
    DepthMap(int h, int w, double fill = 0) : height(h), width(w), values(static_cast<size_t>(h) * w, fill) {}
    double at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
    double& at(int y, int x) { return values[static_cast<size_t>(y) * width + x]; }
    double sample_bilinear(double x, double y) const;
};

// Geometric visibility of each target pixel in the neighbor view: the pixel
// reprojected with its target depth must land in the neighbor image, in front
// of the camera, and agree with the neighbor's (bilinearly sampled) depth to
// rel_tol. Degenerate inputs produce an all-invalid mask rather than an error.
VisibilityMask visibility_mask(const DepthMap& target_depth, const DepthMap& nbr_depth,
                               const Camera& target_cam, const Camera& nbr_cam, double rel_tol);

// Compose the pose with a random axis-angle rotation of angle <= magnitude
// radians and a translation offset of norm <= magnitude * scene_scale.
// Deterministic under seed; result re-orthonormalized.
Pose perturb_pose(const Pose& pose, double magnitude, std::uint64_t seed, double scene_scale = 1.0);

double rotation_angle_between(const Mat3& a, const Mat3& b);

}  // namespace dn2n
