#include "dn2n/camera.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/SVD>

#include "dn2n/rng.hpp"

namespace dn2n {

void CameraIntrinsics::validate() const {
    if (!(fx > 0) || !(fy > 0)) throw std::invalid_argument("intrinsics: focal lengths must be positive");
    if (!(cx > 0 && cx < width) || !(cy > 0 && cy < height))
        throw std::invalid_argument("intrinsics: principal point outside image");
}

void Pose::validate() const {
    const Mat3 rtr = rotation.transpose() * rotation;
    if ((rtr - Mat3::Identity()).norm() > 1e-6)
        throw std::invalid_argument("pose: rotation not orthonormal");
    if (std::fabs(rotation.determinant() - 1.0) > 1e-6)
        throw std::invalid_argument("pose: rotation determinant != +1");
}

VisibilityMask VisibilityMask::from_values(std::vector<bool> v) {
    VisibilityMask m;
    m.values = std::move(v);
    if (!m.values.empty()) {
        size_t n = 0;
        for (bool b : m.values) n += b ? 1 : 0;
        m.valid_fraction = static_cast<double>(n) / static_cast<double>(m.values.size());
    }
    return m;
}

Ray ray_for_pixel(const CameraIntrinsics& intr, const Pose& pose, const Vec2& pixel,
                  double t_near, double t_far) {
    if (!intr.in_bounds(pixel))
        throw std::invalid_argument("ray_for_pixel: pixel (" + std::to_string(pixel.x()) + "," +
                                    std::to_string(pixel.y()) + ") out of bounds");
    Vec3 dir_cam((pixel.x() - intr.cx) / intr.fx, (pixel.y() - intr.cy) / intr.fy, 1.0);
    Ray r;
    r.origin = pose.center();
    r.direction = (pose.rotation * dir_cam).normalized();
    r.t_near = t_near;
    r.t_far = t_far;
    return r;
}

std::vector<Ray> rays_for_pixels(const CameraIntrinsics& intr, const Pose& pose,
                                 const std::vector<Vec2>& pixels, double t_near, double t_far) {
    std::vector<Ray> rays;
    rays.reserve(pixels.size());
    for (const Vec2& p : pixels) rays.push_back(ray_for_pixel(intr, pose, p, t_near, t_far));
    return rays;
}

std::optional<Projection> project(const Vec3& point_world, const CameraIntrinsics& intr,
                                  const Pose& pose) {
    const Vec3 pc = pose.to_camera(point_world);
    if (pc.z() <= 1e-9) return std::nullopt;
    return Projection{Vec2(intr.fx * pc.x() / pc.z() + intr.cx, intr.fy * pc.y() / pc.z() + intr.cy),
                      pc.z()};
}

Vec3 unproject(const Vec2& pixel, double depth, const CameraIntrinsics& intr, const Pose& pose) {
    const Vec3 pc((pixel.x() - intr.cx) / intr.fx * depth, (pixel.y() - intr.cy) / intr.fy * depth,
                  depth);
    return pose.to_world(pc);
}

std::optional<Projection> reproject(const Vec2& pixel, double depth, const Camera& src,
                                    const Camera& dst) {
    if (!(depth > 0)) throw std::invalid_argument("reproject: depth must be positive");
    const Vec3 world = unproject(pixel, depth, src.intrinsics, src.pose);
    return project(world, dst.intrinsics, dst.pose);
}

double DepthMap::sample_bilinear(double x, double y) const {
    const double cx = std::clamp(x, 0.0, static_cast<double>(width - 1));
    const double cy = std::clamp(y, 0.0, static_cast<double>(height - 1));
    const int x0 = std::min(static_cast<int>(cx), width >= 2 ? width - 2 : 0);
    const int y0 = std::min(static_cast<int>(cy), height >= 2 ? height - 2 : 0);
    const int x1 = std::min(x0 + 1, width - 1);
    const int y1 = std::min(y0 + 1, height - 1);
    const double fx = cx - x0;
    const double fy = cy - y0;
    return at(y0, x0) * (1 - fx) * (1 - fy) + at(y0, x1) * fx * (1 - fy) +
           at(y1, x0) * (1 - fx) * fy + at(y1, x1) * fx * fy;
}

VisibilityMask visibility_mask(const DepthMap& target_depth, const DepthMap& nbr_depth,
                               const Camera& target_cam, const Camera& nbr_cam, double rel_tol) {
    std::vector<bool> valid(target_depth.values.size(), false);
    for (int y = 0; y < target_depth.height; ++y) {
        for (int x = 0; x < target_depth.width; ++x) {
            const double d = target_depth.at(y, x);
            if (!(d > 0)) continue;
            const auto proj = reproject(Vec2(x, y), d, target_cam, nbr_cam);
            if (!proj) continue;
            if (!nbr_cam.intrinsics.in_bounds(proj->pixel)) continue;
            const double nbr_d = nbr_depth.sample_bilinear(proj->pixel.x(), proj->pixel.y());
            if (std::fabs(proj->depth - nbr_d) / proj->depth <= rel_tol)
                valid[static_cast<size_t>(y) * target_depth.width + x] = true;
        }
    }
    return VisibilityMask::from_values(std::move(valid));
}

Pose perturb_pose(const Pose& pose, double magnitude, std::uint64_t seed, double scene_scale) {
    if (magnitude < 0) throw std::invalid_argument("perturb_pose: magnitude must be >= 0");
    Rng rng(seed);
    Vec3 axis(rng.gaussian(), rng.gaussian(), rng.gaussian());
    if (axis.norm() < 1e-12) axis = Vec3::UnitX();
    axis.normalize();
    const double angle = magnitude * rng.uniform();
    Vec3 offset(rng.gaussian(), rng.gaussian(), rng.gaussian());
    if (offset.norm() > 1e-12) offset.normalize();
    const double shift = magnitude * scene_scale * rng.uniform();

    Pose out;
    out.rotation = Eigen::AngleAxisd(angle, axis).toRotationMatrix() * pose.rotation;
    out.translation = pose.translation + shift * offset;
    // re-orthonormalize so repeated perturbation cannot drift
    Eigen::JacobiSVD<Mat3> svd(out.rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
    out.rotation = svd.matrixU() * svd.matrixV().transpose();
    if (out.rotation.determinant() < 0) {
        Mat3 flip = Mat3::Identity();
        flip(2, 2) = -1;
        out.rotation = svd.matrixU() * flip * svd.matrixV().transpose();
    }
    return out;
}

double rotation_angle_between(const Mat3& a, const Mat3& b) {
    const double tr = (a.transpose() * b).trace();
    return std::acos(std::clamp((tr - 1.0) / 2.0, -1.0, 1.0));
}

}  // namespace dn2n
