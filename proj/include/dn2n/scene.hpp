#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dn2n/camera.hpp"
#include "dn2n/image.hpp"

namespace dn2n {

enum class PrimitiveShape { Sphere, Box };
enum class TextureKind { None, Noise, Stripes };

struct Primitive {
    PrimitiveShape shape = PrimitiveShape::Sphere;
    Vec3 center = Vec3::Zero();
    Vec3 size = Vec3::Constant(0.2);  // sphere: radius in x; box: half extents
    Color base_color = Color(0.5f, 0.5f, 0.5f);
    TextureKind texture = TextureKind::None;
    double tex_scale = 8.0;
    double tex_amplitude = 0.0;
    std::uint64_t tex_seed = 0;
    Vec3 stripe_dir = Vec3::UnitX();
    double density = 40.0;
    double softness = 0.06;  // edge falloff width; 0 = hard boundary
};

/// Analytic density+color field: ground truth the bench scenes are rendered
/// from, and the oracle the renderer tests substitute for the learned model.
struct AnalyticField {
    std::vector<Primitive> primitives;
    Color background = Color(0.1f, 0.1f, 0.12f);

    double density_at(const Vec3& p) const;
    Color color_at(const Vec3& p) const;
};

struct SceneBundle {
    std::string scene_id;
    std::vector<Image> images;
    std::vector<Pose> poses;
    CameraIntrinsics intrinsics;
    std::optional<AnalyticField> field;
    std::vector<int> train_views;
    std::vector<int> eval_views;
    double scene_scale = 1.0;
    Color background = Color(0.1f, 0.1f, 0.12f);
    double t_near = 0.85;
    double t_far = 2.35;

    int view_count() const { return static_cast<int>(images.size()); }
    Camera camera(int view) const { return Camera{intrinsics, poses[view]}; }
};

struct SceneGenConfig {
    int n_views = 24;
    int image_size = 64;
    int min_primitives = 2;
    int max_primitives = 5;
    double camera_distance = 1.6;
    double fov_deg = 42.0;
    int gt_samples = 256;   // quadrature samples per ray for ground truth
    int eval_every = 6;     // view i is held out when i % eval_every == eval_phase
    int eval_phase = 2;
};

SceneBundle generate_scene(const SceneGenConfig& config, std::uint64_t seed);

// Render one view of the analytic field by dense midpoint quadrature.
Image render_field_view(const AnalyticField& field, const Camera& cam, double t_near, double t_far,
                        int samples);
DepthMap render_field_depth(const AnalyticField& field, const Camera& cam, double t_near,
                            double t_far, int samples);

// Bundle directory layout: images/view_%03d.png, cameras.json,
// field.json (optional), split.json.
void save_bundle(const SceneBundle& bundle, const std::string& directory);
SceneBundle load_bundle(const std::string& directory);

// Deterministic lattice value noise in [0,1].
double value_noise3(const Vec3& p, std::uint64_t seed);

}  // namespace dn2n
