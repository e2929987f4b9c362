#pragma once

#include <functional>
#include <vector>

#include "dn2n/camera.hpp"
#include "dn2n/field.hpp"
#include "dn2n/scene.hpp"

namespace dn2n {

template <class S>
struct RaySamples {
    nn::VecX<S> t;        // ascending in [t_near, t_far]
    nn::VecX<S> delta;    // t_{i+1} - t_i, last capped at (t_far - t_near)/P
};

template <class S>
struct RayRender {
    Eigen::Matrix<S, 3, 1> color = Eigen::Matrix<S, 3, 1>::Zero();
    S depth = S(0);
    bool background_depth = false;
    S opacity = S(0);
    nn::VecX<S> weights;
    nn::VecX<S> transmittance;
};

// One uniform jitter per bin over P equal bins of [t_near, t_far].
template <class S>
RaySamples<S> stratified_sample(const Ray& ray, int p, Rng& rng) {
    if (p < 2) throw std::invalid_argument("stratified_sample: P must be >= 2");
    RaySamples<S> s;
    s.t.resize(p);
    s.delta.resize(p);
    const double bin = (ray.t_far - ray.t_near) / p;
    for (int i = 0; i < p; ++i) s.t[i] = static_cast<S>(ray.t_near + (i + rng.uniform()) * bin);
    for (int i = 0; i + 1 < p; ++i) s.delta[i] = s.t[i + 1] - s.t[i];
    s.delta[p - 1] = static_cast<S>(bin);
    return s;
}

template <class S>
RaySamples<S> stratified_sample(const Ray& ray, int p, std::uint64_t seed) {
    Rng rng(seed);
    return stratified_sample<S>(ray, p, rng);
}

constexpr double kOpacityEps = 1e-6;

// Quadrature of density and color along one ray: weights, transmittance,
// opacity-normalized expected depth. No background blending here.
template <class S>
RayRender<S> composite(const nn::VecX<S>& sigma, const nn::MatX<S>& color, const RaySamples<S>& samples) {
    const int p = static_cast<int>(samples.t.size());
    RayRender<S> out;
    out.weights.resize(p);
    out.transmittance.resize(p);
    S trans = S(1);
    S depth_acc = S(0);
    for (int i = 0; i < p; ++i) {
        if (sigma[i] < S(0)) throw std::invalid_argument("composite: sigma must be >= 0");
        out.transmittance[i] = trans;
        const S att = std::exp(-sigma[i] * samples.delta[i]);
        const S w = trans * (S(1) - att);
        out.weights[i] = w;
        out.color += w * color.row(i).transpose();
        depth_acc += w * samples.t[i];
        out.opacity += w;
        trans *= att;
    }
    if (out.opacity < S(kOpacityEps)) {
        out.background_depth = true;
        out.depth = samples.t[p - 1];
    } else {
        out.depth = depth_acc / out.opacity;
    }
    return out;
}

// Gradient of a scalar loss through composite. dweights may be empty.
// ddepth is honored only on rays with opacity above the epsilon floor.
template <class S>
void composite_backward(const nn::VecX<S>& sigma, const nn::MatX<S>& color,
                        const RaySamples<S>& samples, const RayRender<S>& out,
                        const Eigen::Matrix<S, 3, 1>& dcolor, S ddepth, const nn::VecX<S>& dweights,
                        S dopacity, nn::VecX<S>& dsigma, nn::MatX<S>& dcolor_samples) {
    const int p = static_cast<int>(samples.t.size());
    dsigma.setZero(p);
    dcolor_samples.setZero(p, 3);

    nn::VecX<S> dw(p);
    for (int i = 0; i < p; ++i) {
        S g = color.row(i).dot(dcolor) + dopacity;
        if (dweights.size() == p) g += dweights[i];
        if (!out.background_depth && ddepth != S(0))
            g += ddepth * (samples.t[i] - out.depth) / out.opacity;
        dw[i] = g;
        dcolor_samples.row(i) = out.weights[i] * dcolor.transpose();
    }
    // dsigma_i = delta_i * (g_i T_i e^{-sigma_i delta_i} - sum_{k>i} g_k w_k)
    S suffix = S(0);
    for (int i = p - 1; i >= 0; --i) {
        const S att = std::exp(-sigma[i] * samples.delta[i]);
        dsigma[i] = samples.delta[i] * (dw[i] * out.transmittance[i] * att - suffix);
        suffix += dw[i] * out.weights[i];
    }
}

// -sum w log(max(w, eps)); 0 log 0 resolved by the clamp inside the log.
template <class S>
S entropy(const nn::VecX<S>& weights) {
    constexpr double eps = 1e-10;
    S e = S(0);
    for (Eigen::Index i = 0; i < weights.size(); ++i)
        e -= weights[i] * std::log(std::max(weights[i], S(eps)));
    return e;
}

template <class S>
void entropy_backward(const nn::VecX<S>& weights, S dentropy, nn::VecX<S>& dweights) {
    constexpr double eps = 1e-10;
    dweights.resize(weights.size());
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
        const S lg = std::log(std::max(weights[i], S(eps)));
        dweights[i] = -dentropy * (lg + (weights[i] > S(eps) ? S(1) : S(0)));
    }
}

// ---------------------------------------------------------------------------
// batched rendering

template <class S>
struct PatchRender {
    Eigen::Index rays = 0;
    int samples_per_ray = 0;
    nn::MatX<S> color;              // [R,3] after background blending
    nn::VecX<S> depth;              // [R]
    std::vector<std::uint8_t> background_depth;
    nn::VecX<S> opacity;
    nn::MatX<S> weights;            // [R,P]

    // retained for the backward pass
    std::vector<RaySamples<S>> ray_samples;
    std::vector<RayRender<S>> ray_out;
    QueryCache<S> qcache;
    FieldOutput<S> field_out;
    Color background = Color(0, 0, 0);
};

// Render rays through the model. Jitter per ray derived from `seed` and the
// ray index, so chunking cannot change the result.
template <class S>
PatchRender<S> render_rays(const Model<S>& model, const SourceViewSet<S>& sources,
                           const std::vector<Ray>& rays, int samples_per_ray, std::uint64_t seed,
                           bool keep_cache) {
    const Eigen::Index r = static_cast<Eigen::Index>(rays.size());
    const int p = samples_per_ray;

    PatchRender<S> out;
    out.rays = r;
    out.samples_per_ray = p;
    out.background = sources.background;
    out.ray_samples.reserve(r);

    std::vector<Vec3> points;
    std::vector<Vec3> dirs;
    points.reserve(static_cast<std::size_t>(r) * p);
    dirs.reserve(static_cast<std::size_t>(r) * p);
    for (Eigen::Index i = 0; i < r; ++i) {
        Rng jitter(derive_seed(seed, static_cast<std::uint64_t>(i)));
        RaySamples<S> s = stratified_sample<S>(rays[i], p, jitter);
        for (int j = 0; j < p; ++j) {
            points.push_back(rays[i].origin + static_cast<double>(s.t[j]) * rays[i].direction);
            dirs.push_back(rays[i].direction);
        }
        out.ray_samples.push_back(std::move(s));
    }

    out.field_out = model.query(sources, points, dirs, keep_cache ? &out.qcache : nullptr);

    out.color.resize(r, 3);
    out.depth.resize(r);
    out.background_depth.assign(r, 0);
    out.opacity.resize(r);
    out.weights.resize(r, p);
    out.ray_out.reserve(r);
    const Eigen::Matrix<S, 3, 1> bg(static_cast<S>(sources.background[0]),
                                    static_cast<S>(sources.background[1]),
                                    static_cast<S>(sources.background[2]));
    for (Eigen::Index i = 0; i < r; ++i) {
        const nn::VecX<S> sigma = out.field_out.sigma.segment(i * p, p);
        const nn::MatX<S> colors = out.field_out.color.middleRows(i * p, p);
        RayRender<S> rr = composite(sigma, colors, out.ray_samples[i]);
        out.color.row(i) = (rr.color + (S(1) - rr.opacity) * bg).transpose();
        out.depth[i] = rr.depth;
        out.background_depth[i] = rr.background_depth ? 1 : 0;
        out.opacity[i] = rr.opacity;
        out.weights.row(i) = rr.weights.transpose();
        out.ray_out.push_back(std::move(rr));
    }
    if (!keep_cache) {
        out.ray_out.clear();
        out.field_out = FieldOutput<S>{};
    }
    return out;
}

// Backward through compositing and the field query; dweights may be empty.
template <class S>
void render_rays_backward(Model<S>& model, SourceViewSet<S>& sources, PatchRender<S>& render,
                          const nn::MatX<S>& dcolor, const nn::MatX<S>& dweights) {
    const Eigen::Index r = render.rays;
    const int p = render.samples_per_ray;
    nn::VecX<S> dsigma_all = nn::VecX<S>::Zero(r * p);
    nn::MatX<S> dcol_all = nn::MatX<S>::Zero(r * p, 3);
    const Eigen::Matrix<S, 3, 1> bg(static_cast<S>(render.background[0]),
                                    static_cast<S>(render.background[1]),
                                    static_cast<S>(render.background[2]));

    nn::VecX<S> dsigma, dwrow;
    nn::MatX<S> dcols;
    for (Eigen::Index i = 0; i < r; ++i) {
        const Eigen::Matrix<S, 3, 1> dc = dcolor.row(i).transpose();
        const S dopacity = -bg.dot(dc);   // background blend term
        nn::VecX<S> dw;
        if (dweights.rows() == r) dw = dweights.row(i).transpose();
        const nn::VecX<S> sigma = render.field_out.sigma.segment(i * p, p);
        const nn::MatX<S> colors = render.field_out.color.middleRows(i * p, p);
        composite_backward(sigma, colors, render.ray_samples[i], render.ray_out[i], dc, S(0), dw,
                           dopacity, dsigma, dcols);
        dsigma_all.segment(i * p, p) = dsigma;
        dcol_all.middleRows(i * p, p) = dcols;
    }
    model.query_backward(sources, render.qcache, dsigma_all, dcol_all);
}

// Forward-only view render, chunked to bound memory.
template <class S>
void render_view(const Model<S>& model, const SourceViewSet<S>& sources, const Camera& camera,
                 double t_near, double t_far, int samples_per_ray, std::uint64_t seed, Image& image,
                 DepthMap& depth) {
    const int h = camera.intrinsics.height, w = camera.intrinsics.width;
    image = Image(h, w);
    depth = DepthMap(h, w);
    const int chunk = 512;
    std::vector<Ray> rays;
    std::vector<Eigen::Index> ray_ids;
    auto flush = [&]() {
        if (rays.empty()) return;
        PatchRender<S> pr = render_rays(model, sources, rays, samples_per_ray, seed, false);
        for (size_t j = 0; j < rays.size(); ++j) {
            const Eigen::Index id = ray_ids[j];
            image.set(static_cast<int>(id / w), static_cast<int>(id % w),
                      Color(static_cast<float>(pr.color(j, 0)), static_cast<float>(pr.color(j, 1)),
                            static_cast<float>(pr.color(j, 2))));
            depth.values[id] = static_cast<double>(pr.depth[j]);
        }
        rays.clear();
        ray_ids.clear();
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            rays.push_back(ray_for_pixel(camera.intrinsics, camera.pose, Vec2(x, y), t_near, t_far));
            ray_ids.push_back(static_cast<Eigen::Index>(y) * w + x);
            if (static_cast<int>(rays.size()) == chunk) flush();
        }
    flush();
}

// Render rays against the analytic field with the same sampling + quadrature
// machinery; the oracle the renderer tests substitute for the learned model.
template <class S>
PatchRender<S> render_rays_oracle(const AnalyticField& field, const std::vector<Ray>& rays,
                                  int samples_per_ray, std::uint64_t seed) {
    const Eigen::Index r = static_cast<Eigen::Index>(rays.size());
    const int p = samples_per_ray;
    PatchRender<S> out;
    out.rays = r;
    out.samples_per_ray = p;
    out.background = field.background;
    out.color.resize(r, 3);
    out.depth.resize(r);
    out.background_depth.assign(r, 0);
    out.opacity.resize(r);
    out.weights.resize(r, p);
    const Eigen::Matrix<S, 3, 1> bg = field.background.cast<S>();
    for (Eigen::Index i = 0; i < r; ++i) {
        Rng jitter(derive_seed(seed, static_cast<std::uint64_t>(i)));
        const RaySamples<S> s = stratified_sample<S>(rays[i], p, jitter);
        nn::VecX<S> sigma(p);
        nn::MatX<S> colors(p, 3);
        for (int j = 0; j < p; ++j) {
            const Vec3 pt = rays[i].origin + static_cast<double>(s.t[j]) * rays[i].direction;
            sigma[j] = static_cast<S>(field.density_at(pt));
            colors.row(j) = field.color_at(pt).cast<S>().transpose();
        }
        const RayRender<S> rr = composite(sigma, colors, s);
        out.color.row(i) = (rr.color + (S(1) - rr.opacity) * bg).transpose();
        out.depth[i] = rr.depth;
        out.background_depth[i] = rr.background_depth ? 1 : 0;
        out.opacity[i] = rr.opacity;
        out.weights.row(i) = rr.weights.transpose();
    }
    return out;
}

}  // namespace dn2n
