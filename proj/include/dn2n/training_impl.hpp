#pragma once

#include "dn2n/training.hpp"

namespace dn2n {

template <class S>
nn::MatX<S> sample_image_at_t(const Image& image, const std::vector<Vec2>& pixels) {
    nn::MatX<S> out(static_cast<Eigen::Index>(pixels.size()), 3);
    for (size_t i = 0; i < pixels.size(); ++i) {
        const int x = static_cast<int>(std::lround(pixels[i].x()));
        const int y = static_cast<int>(std::lround(pixels[i].y()));
        const float* p = image.px(y, x);
        out(static_cast<Eigen::Index>(i), 0) = static_cast<S>(p[0]);
        out(static_cast<Eigen::Index>(i), 1) = static_cast<S>(p[1]);
        out(static_cast<Eigen::Index>(i), 2) = static_cast<S>(p[2]);
    }
    return out;
}

template <class S>
StepResult<S> step_forward(const Model<S>& model, const TrainingPair& pair, const StepPlan& plan,
                           const TrainConfig& config, bool keep_caches, const NbrGeometry* frozen_nbr) {
    const SceneBundle& edited = pair.perturbed;
    const SceneBundle& clean = pair.clean;
    const SceneBundle* unedited = plan.use_unedited ? &clean : nullptr;

    StepResult<S> result;
    result.set_a = build_source_set<S>(model, edited, unedited, plan.sources_a);
    result.set_b = build_source_set<S>(model, edited, unedited, plan.sources_b);

    const Camera target_cam = edited.camera(plan.target_view);
    std::vector<Ray> rays;
    rays.reserve(plan.pixels.size());
    for (const Vec2& px : plan.pixels)
        rays.push_back(ray_for_pixel(target_cam.intrinsics, target_cam.pose, px, edited.t_near,
                                     edited.t_far));

    result.render_a =
        render_rays(model, result.set_a, rays, config.samples_per_ray, plan.render_seed, keep_caches);
    result.render_b =
        render_rays(model, result.set_b, rays, config.samples_per_ray, plan.render_seed, keep_caches);
    result.gt = sample_image_at_t<S>(clean.images[plan.target_view], plan.pixels);

    const Eigen::Index rcount = result.render_a.color.rows();
    result.components.rec = 0.5 * (static_cast<double>(loss_rec<S>(result.render_a.color, result.gt)) +
                                   static_cast<double>(loss_rec<S>(result.render_b.color, result.gt)));
    result.components.self = static_cast<double>(
        loss_self<S>(result.render_a.color, result.render_b.color, plan.sources_a, plan.sources_b));

    double en = 0;
    for (Eigen::Index i = 0; i < rcount; ++i) {
        en += static_cast<double>(entropy<S>(result.render_a.weights.row(i).transpose()));
        en += static_cast<double>(entropy<S>(result.render_b.weights.row(i).transpose()));
    }
    result.components.en = en / static_cast<double>(2 * rcount);

    const int ph = plan.patch_h, pw = plan.patch_w;
    const Eigen::Index patch_rows = static_cast<Eigen::Index>(ph) * pw;
    const nn::MatX<S> patch_a = result.render_a.color.topRows(patch_rows);
    const nn::MatX<S> patch_b = result.render_b.color.topRows(patch_rows);
    result.components.tv = 0.5 * (static_cast<double>(loss_tv<S>(patch_a, ph, pw)) +
                                  static_cast<double>(loss_tv<S>(patch_b, ph, pw)));

    if (plan.nbr_active) {
        if (frozen_nbr) {
            result.nbr = *frozen_nbr;
        } else {
            result.nbr.nbr_pose = perturb_pose(target_cam.pose, config.pose_perturb_magnitude,
                                               plan.nbr_pose_seed, edited.scene_scale);
        }
        const Camera nbr_cam{edited.intrinsics, result.nbr.nbr_pose};

        std::vector<double> expected_depth;
        if (!frozen_nbr) {
            for (Eigen::Index i = 0; i < patch_rows; ++i) {
                const double d = static_cast<double>(result.render_a.depth[i]);
                if (!(d > 0)) continue;
                const auto rp = reproject(plan.pixels[static_cast<size_t>(i)], d, target_cam, nbr_cam);
                if (!rp || !nbr_cam.intrinsics.in_bounds(rp->pixel)) continue;
                result.nbr.candidate_patch_idx.push_back(static_cast<int>(i));
                result.nbr.rays.push_back(ray_for_pixel(nbr_cam.intrinsics, nbr_cam.pose, rp->pixel,
                                                        edited.t_near, edited.t_far));
                expected_depth.push_back(rp->depth);
            }
        }

        if (!result.nbr.rays.empty()) {
            result.render_nbr = render_rays(model, result.set_a, result.nbr.rays,
                                            config.samples_per_ray, plan.nbr_render_seed, keep_caches);
        }

        if (!frozen_nbr) {
            std::vector<bool> valid(static_cast<size_t>(patch_rows), false);
            for (size_t j = 0; j < result.nbr.rays.size(); ++j) {
                const double d_exp = expected_depth[j];
                const double d_nbr = static_cast<double>(result.render_nbr.depth[static_cast<Eigen::Index>(j)]);
                if (std::fabs(d_exp - d_nbr) / d_exp <= config.nbr_rel_tol)
                    valid[static_cast<size_t>(result.nbr.candidate_patch_idx[j])] = true;
            }
            result.nbr.mask = VisibilityMask::from_values(std::move(valid));
        }

        result.nbr_aligned = nn::MatX<S>::Zero(patch_rows, 3);
        for (size_t j = 0; j < result.nbr.rays.size(); ++j)
            result.nbr_aligned.row(result.nbr.candidate_patch_idx[j]) =
                result.render_nbr.color.row(static_cast<Eigen::Index>(j));

        result.components.nbr =
            static_cast<double>(loss_nbr<S>(patch_a, patch_b, result.nbr_aligned, result.nbr.mask));
    }

    const LossWeights& w = config.weights;
    result.total = result.components.rec + w.lambda_self * result.components.self +
                   (plan.nbr_active ? w.lambda_nbr * result.components.nbr : 0.0) +
                   w.lambda_en * result.components.en + w.lambda_tv * result.components.tv;
    return result;
}

template <class S>
void step_backward(Model<S>& model, StepResult<S>& result, const StepPlan& plan,
                   const TrainConfig& config, std::int64_t) {
    const LossWeights& w = config.weights;
    const Eigen::Index rcount = result.render_a.color.rows();
    const int ph = plan.patch_h, pw = plan.patch_w;
    const Eigen::Index patch_rows = static_cast<Eigen::Index>(ph) * pw;
    const S n3 = static_cast<S>(rcount * 3);

    // d rec: 0.5 * MSE each; d self: coupled
    nn::MatX<S> da = (result.render_a.color - result.gt) / n3;    // 0.5 * 2/(R*3)
    nn::MatX<S> db = (result.render_b.color - result.gt) / n3;
    const nn::MatX<S> dself =
        (S(2) * static_cast<S>(w.lambda_self) / n3) * (result.render_a.color - result.render_b.color);
    da += dself;
    db -= dself;

    // d tv on the patch rows
    const nn::MatX<S> patch_a = result.render_a.color.topRows(patch_rows);
    const nn::MatX<S> patch_b = result.render_b.color.topRows(patch_rows);
    da.topRows(patch_rows) +=
        loss_tv_backward<S>(patch_a, ph, pw, static_cast<S>(0.5 * w.lambda_tv));
    db.topRows(patch_rows) +=
        loss_tv_backward<S>(patch_b, ph, pw, static_cast<S>(0.5 * w.lambda_tv));

    // d nbr
    nn::MatX<S> dnbr_rays;
    const bool have_nbr = plan.nbr_active && !result.nbr.rays.empty();
    if (have_nbr) {
        nn::MatX<S> dpa, dpb, dnbr_aligned;
        loss_nbr_backward<S>(patch_a, patch_b, result.nbr_aligned, result.nbr.mask,
                             static_cast<S>(w.lambda_nbr), dpa, dpb, dnbr_aligned);
        da.topRows(patch_rows) += dpa;
        db.topRows(patch_rows) += dpb;
        dnbr_rays.setZero(result.render_nbr.color.rows(), 3);
        for (size_t j = 0; j < result.nbr.rays.size(); ++j)
            dnbr_rays.row(static_cast<Eigen::Index>(j)) =
                dnbr_aligned.row(result.nbr.candidate_patch_idx[j]);
    }

    // d entropy on the sample weights of both target renders
    const S den = static_cast<S>(w.lambda_en / static_cast<double>(2 * rcount));
    nn::MatX<S> dwa(rcount, result.render_a.samples_per_ray);
    nn::MatX<S> dwb(rcount, result.render_b.samples_per_ray);
    nn::VecX<S> dw_row;
    for (Eigen::Index i = 0; i < rcount; ++i) {
        entropy_backward<S>(result.render_a.weights.row(i).transpose(), den, dw_row);
        dwa.row(i) = dw_row.transpose();
        entropy_backward<S>(result.render_b.weights.row(i).transpose(), den, dw_row);
        dwb.row(i) = dw_row.transpose();
    }

    render_rays_backward(model, result.set_a, result.render_a, da, dwa);
    render_rays_backward(model, result.set_b, result.render_b, db, dwb);
    if (have_nbr)
        render_rays_backward(model, result.set_a, result.render_nbr, dnbr_rays, nn::MatX<S>());

    for (auto& view : result.set_a.views) model.backward_extractor(view.feat);
    for (auto& view : result.set_b.views) model.backward_extractor(view.feat);
}

}  // namespace dn2n
