#include "dn2n/scene.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "dn2n/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace dn2n {

namespace {

std::uint64_t lattice_hash(std::int64_t x, std::int64_t y, std::int64_t z, std::uint64_t seed) {
    std::uint64_t h = seed;
    h = hash_seed(h ^ static_cast<std::uint64_t>(x) * 0x8da6b343ULL);
    h = hash_seed(h ^ static_cast<std::uint64_t>(y) * 0xd8163841ULL);
    h = hash_seed(h ^ static_cast<std::uint64_t>(z) * 0xcb1ab31fULL);
    return h;
}

double lattice_value(std::int64_t x, std::int64_t y, std::int64_t z, std::uint64_t seed) {
    return static_cast<double>(lattice_hash(x, y, z, seed) >> 11) * 0x1.0p-53;
}

double smoothstep01(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

}  // namespace

double value_noise3(const Vec3& p, std::uint64_t seed) {
    const std::int64_t x0 = static_cast<std::int64_t>(std::floor(p.x()));
    const std::int64_t y0 = static_cast<std::int64_t>(std::floor(p.y()));
    const std::int64_t z0 = static_cast<std::int64_t>(std::floor(p.z()));
    const double fx = smoothstep01(p.x() - static_cast<double>(x0));
    const double fy = smoothstep01(p.y() - static_cast<double>(y0));
    const double fz = smoothstep01(p.z() - static_cast<double>(z0));
    double acc = 0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
                acc += w * lattice_value(x0 + dx, y0 + dy, z0 + dz, seed);
            }
    return acc;
}

namespace {

// Signed distance to the primitive surface (negative inside).
double primitive_sdf(const Primitive& prim, const Vec3& p) {
    const Vec3 q = p - prim.center;
    if (prim.shape == PrimitiveShape::Sphere) return q.norm() - prim.size.x();
    const Vec3 d = q.cwiseAbs() - prim.size;
    const Vec3 outside = d.cwiseMax(0.0);
    const double inside = std::min(std::max({d.x(), d.y(), d.z()}), 0.0);
    return outside.norm() + inside;
}

double primitive_occupancy(const Primitive& prim, const Vec3& p) {
    const double d = primitive_sdf(prim, p);
    if (prim.softness <= 0) return d < 0 ? 1.0 : 0.0;
    return smoothstep01(0.5 - d / prim.softness);
}

Color primitive_color(const Primitive& prim, const Vec3& p) {
    double mod = 1.0;
    switch (prim.texture) {
        case TextureKind::None:
            break;
        case TextureKind::Noise:
            mod = 1.0 + prim.tex_amplitude * (2.0 * value_noise3(p * prim.tex_scale, prim.tex_seed) - 1.0);
            break;
        case TextureKind::Stripes:
            mod = 1.0 + prim.tex_amplitude * std::sin(prim.tex_scale * prim.stripe_dir.dot(p));
            break;
    }
    Color c = prim.base_color * static_cast<float>(mod);
    return c.cwiseMax(0.f).cwiseMin(1.f);
}

}  // namespace

double AnalyticField::density_at(const Vec3& p) const {
    double sigma = 0;
    for (const Primitive& prim : primitives) sigma += prim.density * primitive_occupancy(prim, p);
    return sigma;
}

Color AnalyticField::color_at(const Vec3& p) const {
    double total = 0;
    Color acc = Color::Zero();
    for (const Primitive& prim : primitives) {
        const double w = prim.density * primitive_occupancy(prim, p);
        if (w > 0) {
            acc += static_cast<float>(w) * primitive_color(prim, p);
            total += w;
        }
    }
    if (total <= 0) return background;
    return acc / static_cast<float>(total);
}

Image render_field_view(const AnalyticField& field, const Camera& cam, double t_near, double t_far,
                        int samples) {
    Image img(cam.intrinsics.height, cam.intrinsics.width);
    const double delta = (t_far - t_near) / samples;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const Ray ray = ray_for_pixel(cam.intrinsics, cam.pose, Vec2(x, y), t_near, t_far);
            double transmittance = 1.0;
            Eigen::Vector3d color = Eigen::Vector3d::Zero();
            for (int i = 0; i < samples; ++i) {
                const double t = t_near + (i + 0.5) * delta;
                const Vec3 p = ray.origin + t * ray.direction;
                const double sigma = field.density_at(p);
                if (sigma <= 0) continue;
                const double alpha = 1.0 - std::exp(-sigma * delta);
                color += transmittance * alpha * field.color_at(p).cast<double>();
                transmittance *= 1.0 - alpha;
                if (transmittance < 1e-6) break;
            }
            color += transmittance * field.background.cast<double>();
            img.set(y, x, color.cast<float>());
        }
    }
    return img;
}

DepthMap render_field_depth(const AnalyticField& field, const Camera& cam, double t_near,
                            double t_far, int samples) {
    DepthMap depth(cam.intrinsics.height, cam.intrinsics.width);
    const double delta = (t_far - t_near) / samples;
    for (int y = 0; y < depth.height; ++y) {
        for (int x = 0; x < depth.width; ++x) {
            const Ray ray = ray_for_pixel(cam.intrinsics, cam.pose, Vec2(x, y), t_near, t_far);
            double transmittance = 1.0;
            double d = 0, wsum = 0;
            for (int i = 0; i < samples; ++i) {
                const double t = t_near + (i + 0.5) * delta;
                const double sigma = field.density_at(ray.origin + t * ray.direction);
                if (sigma <= 0) continue;
                const double alpha = 1.0 - std::exp(-sigma * delta);
                const double w = transmittance * alpha;
                d += w * t;
                wsum += w;
                transmittance *= 1.0 - alpha;
                if (transmittance < 1e-6) break;
            }
            depth.at(y, x) = wsum > 1e-6 ? d / wsum : t_far;
        }
    }
    return depth;
}

namespace {

Color hsv_to_rgb(double h, double s, double v) {
    const double c = v * s;
    const double hp = std::fmod(h, 360.0) / 60.0;
    const double xx = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = xx; }
    else if (hp < 2) { r = xx; g = c; }
    else if (hp < 3) { g = c; b = xx; }
    else if (hp < 4) { g = xx; b = c; }
    else if (hp < 5) { r = xx; b = c; }
    else { r = c; b = xx; }
    const double m = v - c;
    return Color(static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m));
}

Pose look_at_origin(const Vec3& center) {
    Pose pose;
    const Vec3 z = (-center).normalized();       // forward, toward the origin
    Vec3 down(0, -1, 0);
    Vec3 x = down.cross(z);
    if (x.norm() < 1e-9) x = Vec3::UnitX();
    x.normalize();
    const Vec3 y = z.cross(x);
    pose.rotation.col(0) = x;
    pose.rotation.col(1) = y;
    pose.rotation.col(2) = z;
    pose.translation = center;
    return pose;
}

}  // namespace

SceneBundle generate_scene(const SceneGenConfig& config, std::uint64_t seed) {
    if (config.n_views < 8)
        throw std::invalid_argument("generate_scene: at least 8 views required");

    Rng rng(seed);
    SceneBundle bundle;
    bundle.scene_id = "scene_" + std::to_string(seed);
    bundle.scene_scale = 1.0;

    AnalyticField field;
    field.background = Color(static_cast<float>(rng.uniform(0.05, 0.25)),
                             static_cast<float>(rng.uniform(0.05, 0.25)),
                             static_cast<float>(rng.uniform(0.05, 0.25)));
    const int n_prims = static_cast<int>(rng.uniform_int(config.min_primitives, config.max_primitives));
    for (int i = 0; i < n_prims; ++i) {
        Primitive prim;
        prim.shape = rng.uniform() < 0.5 ? PrimitiveShape::Sphere : PrimitiveShape::Box;
        const double max_r = 0.24;
        const double r = rng.uniform(0.10, max_r);
        // keep the primitive inside the unit-diameter bounding sphere
        const double cmax = 0.5 - r - 0.02;
        prim.center = Vec3(rng.uniform(-cmax, cmax), rng.uniform(-cmax, cmax), rng.uniform(-cmax, cmax));
        prim.size = prim.shape == PrimitiveShape::Sphere
                        ? Vec3::Constant(r)
                        : Vec3(r * rng.uniform(0.5, 1.0), r * rng.uniform(0.5, 1.0), r * rng.uniform(0.5, 1.0));
        prim.base_color =
            hsv_to_rgb(rng.uniform(0, 360), rng.uniform(0.35, 0.85), rng.uniform(0.45, 0.95));
        const double tex = rng.uniform();
        if (tex < 0.4) {
            prim.texture = TextureKind::Noise;
            prim.tex_scale = rng.uniform(4.0, 9.0);
            prim.tex_amplitude = rng.uniform(0.15, 0.4);
        } else if (tex < 0.8) {
            prim.texture = TextureKind::Stripes;
            prim.tex_scale = rng.uniform(15.0, 35.0);
            prim.tex_amplitude = rng.uniform(0.15, 0.4);
            Vec3 dir(rng.gaussian(), rng.gaussian(), rng.gaussian());
            prim.stripe_dir = dir.norm() > 1e-9 ? dir.normalized() : Vec3::UnitX();
        } else {
            prim.texture = TextureKind::None;
        }
        prim.tex_seed = rng.raw();
        prim.density = 40.0;
        prim.softness = 0.06;
        field.primitives.push_back(prim);
    }
    bundle.field = field;
    bundle.background = field.background;

    bundle.intrinsics.width = config.image_size;
    bundle.intrinsics.height = config.image_size;
    const double f = 0.5 * config.image_size / std::tan(0.5 * config.fov_deg * M_PI / 180.0);
    bundle.intrinsics.fx = f;
    bundle.intrinsics.fy = f;
    bundle.intrinsics.cx = 0.5 * (config.image_size - 1);
    bundle.intrinsics.cy = 0.5 * (config.image_size - 1);

    bundle.t_near = config.camera_distance - 0.75;
    bundle.t_far = config.camera_distance + 0.75;

    const double phase = rng.uniform(0, 2 * M_PI);
    for (int i = 0; i < config.n_views; ++i) {
        const double az = phase + 2 * M_PI * i / config.n_views;
        const double el = (i % 2 == 0 ? 18.0 : 34.0) * M_PI / 180.0;
        const Vec3 center = config.camera_distance *
                            Vec3(std::cos(el) * std::cos(az), std::sin(el), std::cos(el) * std::sin(az));
        bundle.poses.push_back(look_at_origin(center));
    }

    for (int i = 0; i < config.n_views; ++i) {
        Image img = render_field_view(field, bundle.camera(i), bundle.t_near, bundle.t_far,
                                      config.gt_samples);
        img.quantize8();
        bundle.images.push_back(std::move(img));
    }

    for (int i = 0; i < config.n_views; ++i) {
        if (i % config.eval_every == config.eval_phase)
            bundle.eval_views.push_back(i);
        else
            bundle.train_views.push_back(i);
    }
    return bundle;
}

// ---------------------------------------------------------------------------
// serialization

namespace {

json pose_to_json(const Pose& pose) {
    std::vector<double> rot(9);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) rot[r * 3 + c] = pose.rotation(r, c);
    return json{{"rotation", rot},
                {"translation", {pose.translation.x(), pose.translation.y(), pose.translation.z()}}};
}

Pose pose_from_json(const json& j) {
    Pose pose;
    const auto rot = j.at("rotation").get<std::vector<double>>();
    if (rot.size() != 9) throw std::runtime_error("cameras.json: rotation must have 9 entries");
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) pose.rotation(r, c) = rot[r * 3 + c];
    const auto t = j.at("translation").get<std::vector<double>>();
    if (t.size() != 3) throw std::runtime_error("cameras.json: translation must have 3 entries");
    pose.translation = Vec3(t[0], t[1], t[2]);
    return pose;
}

json field_to_json(const AnalyticField& field) {
    json prims = json::array();
    for (const Primitive& p : field.primitives) {
        prims.push_back(json{
            {"shape", p.shape == PrimitiveShape::Sphere ? "sphere" : "box"},
            {"center", {p.center.x(), p.center.y(), p.center.z()}},
            {"size", {p.size.x(), p.size.y(), p.size.z()}},
            {"base_color", {p.base_color.x(), p.base_color.y(), p.base_color.z()}},
            {"texture", p.texture == TextureKind::None ? "none"
                        : p.texture == TextureKind::Noise ? "noise" : "stripes"},
            {"tex_scale", p.tex_scale},
            {"tex_amplitude", p.tex_amplitude},
            {"tex_seed", p.tex_seed},
            {"stripe_dir", {p.stripe_dir.x(), p.stripe_dir.y(), p.stripe_dir.z()}},
            {"density", p.density},
            {"softness", p.softness},
        });
    }
    return json{{"primitives", prims},
                {"background", {field.background.x(), field.background.y(), field.background.z()}}};
}

AnalyticField field_from_json(const json& j) {
    AnalyticField field;
    const auto bg = j.at("background").get<std::vector<double>>();
    field.background = Color(static_cast<float>(bg[0]), static_cast<float>(bg[1]), static_cast<float>(bg[2]));
    for (const json& pj : j.at("primitives")) {
        Primitive p;
        p.shape = pj.at("shape") == "sphere" ? PrimitiveShape::Sphere : PrimitiveShape::Box;
        auto c = pj.at("center").get<std::vector<double>>();
        p.center = Vec3(c[0], c[1], c[2]);
        auto s = pj.at("size").get<std::vector<double>>();
        p.size = Vec3(s[0], s[1], s[2]);
        auto col = pj.at("base_color").get<std::vector<double>>();
        p.base_color = Color(static_cast<float>(col[0]), static_cast<float>(col[1]), static_cast<float>(col[2]));
        const std::string tex = pj.at("texture");
        p.texture = tex == "none" ? TextureKind::None : tex == "noise" ? TextureKind::Noise : TextureKind::Stripes;
        p.tex_scale = pj.at("tex_scale");
        p.tex_amplitude = pj.at("tex_amplitude");
        p.tex_seed = pj.at("tex_seed").get<std::uint64_t>();
        auto d = pj.at("stripe_dir").get<std::vector<double>>();
        p.stripe_dir = Vec3(d[0], d[1], d[2]);
        p.density = pj.at("density");
        p.softness = pj.at("softness");
        field.primitives.push_back(p);
    }
    return field;
}

std::string view_filename(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "view_%03d.png", i);
    return buf;
}

}  // namespace

void save_bundle(const SceneBundle& bundle, const std::string& directory) {
    fs::create_directories(fs::path(directory) / "images");

    json cams;
    cams["scene_id"] = bundle.scene_id;
    cams["scene_scale"] = bundle.scene_scale;
    cams["background"] = {bundle.background.x(), bundle.background.y(), bundle.background.z()};
    cams["t_near"] = bundle.t_near;
    cams["t_far"] = bundle.t_far;
    cams["intrinsics"] = json{{"fx", bundle.intrinsics.fx}, {"fy", bundle.intrinsics.fy},
                              {"cx", bundle.intrinsics.cx}, {"cy", bundle.intrinsics.cy},
                              {"width", bundle.intrinsics.width}, {"height", bundle.intrinsics.height}};
    json poses = json::array();
    for (const Pose& p : bundle.poses) poses.push_back(pose_to_json(p));
    cams["poses"] = poses;
    std::ofstream((fs::path(directory) / "cameras.json").string()) << cams.dump(2) << "\n";

    std::ofstream((fs::path(directory) / "split.json").string())
        << json{{"train", bundle.train_views}, {"eval", bundle.eval_views}}.dump(2) << "\n";

    if (bundle.field)
        std::ofstream((fs::path(directory) / "field.json").string())
            << field_to_json(*bundle.field).dump(2) << "\n";

    for (int i = 0; i < bundle.view_count(); ++i)
        save_png(bundle.images[i], (fs::path(directory) / "images" / view_filename(i)).string());
}

SceneBundle load_bundle(const std::string& directory) {
    const fs::path dir(directory);
    const fs::path cams_path = dir / "cameras.json";
    std::ifstream cams_in(cams_path.string());
    if (!cams_in) throw std::runtime_error("load_bundle: missing " + cams_path.string());
    json cams;
    try {
        cams_in >> cams;
    } catch (const json::exception& e) {
        throw std::runtime_error("load_bundle: corrupt " + cams_path.string() + ": " + e.what());
    }

    SceneBundle bundle;
    bundle.scene_id = cams.at("scene_id");
    bundle.scene_scale = cams.at("scene_scale");
    const auto bg = cams.at("background").get<std::vector<double>>();
    bundle.background = Color(static_cast<float>(bg[0]), static_cast<float>(bg[1]), static_cast<float>(bg[2]));
    bundle.t_near = cams.at("t_near");
    bundle.t_far = cams.at("t_far");
    const json& intr = cams.at("intrinsics");
    bundle.intrinsics = CameraIntrinsics{intr.at("fx"), intr.at("fy"), intr.at("cx"), intr.at("cy"),
                                         intr.at("width"), intr.at("height")};
    for (const json& pj : cams.at("poses")) bundle.poses.push_back(pose_from_json(pj));

    const fs::path split_path = dir / "split.json";
    std::ifstream split_in(split_path.string());
    if (!split_in) throw std::runtime_error("load_bundle: missing " + split_path.string());
    json split;
    split_in >> split;
    bundle.train_views = split.at("train").get<std::vector<int>>();
    bundle.eval_views = split.at("eval").get<std::vector<int>>();

    const fs::path field_path = dir / "field.json";
    if (fs::exists(field_path)) {
        std::ifstream field_in(field_path.string());
        json fj;
        field_in >> fj;
        bundle.field = field_from_json(fj);
    }

    for (size_t i = 0;; ++i) {
        const fs::path img_path = dir / "images" / view_filename(static_cast<int>(i));
        if (!fs::exists(img_path)) break;
        try {
            bundle.images.push_back(load_png(img_path.string()));
        } catch (const std::exception& e) {
            throw std::runtime_error("load_bundle: view " + std::to_string(i) + " unreadable: " + e.what());
        }
    }
    if (bundle.images.size() != bundle.poses.size())
        throw std::runtime_error("load_bundle: " + std::to_string(bundle.images.size()) + " images vs " +
                                 std::to_string(bundle.poses.size()) + " poses in " + directory);
    return bundle;
}

}  // namespace dn2n
