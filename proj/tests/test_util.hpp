#pragma once

#include <functional>
#include <vector>

#include "dn2n/rng.hpp"
#include "dn2n/scene.hpp"
#include "dn2n/training.hpp"

namespace dn2n::testutil {

inline SceneBundle tiny_scene(std::uint64_t seed = 21, int views = 16, int size = 16) {
    SceneGenConfig cfg;
    cfg.n_views = views;
    cfg.image_size = size;
    cfg.gt_samples = 96;
    cfg.eval_every = 7;
    return generate_scene(cfg, seed);
}

inline ModelConfig tiny_model_config(std::uint64_t init_seed = 5) {
    ModelConfig m;
    m.feat_dim = 8;
    m.enc0 = 6;
    m.enc1 = 8;
    m.enc2 = 12;
    m.prepool_dim = 8;
    m.density_hidden = 16;
    m.color_hidden = 8;
    m.init_seed = init_seed;
    return m;
}

struct FdReport {
    int checked = 0;
    int failed = 0;
    double worst_rel = 0;
};

// Central finite differences on randomly probed parameters against the
// accumulated analytic gradient. `loss` must re-run the forward path from the
// current parameter values.
template <class Vec>
FdReport check_gradients(nn::ParamStore<double>& params,
                         const std::function<double()>& loss,
                         const Vec& analytic, int probes, Rng& rng,
                         double step = 1e-4, double rel_tol = 1e-3,
                         double abs_floor = 1e-9) {
    FdReport report;
    auto& values = params.values();
    for (int p = 0; p < probes; ++p) {
        const std::size_t idx = rng.index(values.size());
        const double saved = values[idx];
        values[idx] = saved + step;
        const double up = loss();
        values[idx] = saved - step;
        const double down = loss();
        values[idx] = saved;
        const double fd = (up - down) / (2 * step);
        const double an = analytic[idx];
        const double denom = std::max({std::fabs(fd), std::fabs(an), abs_floor});
        const double rel = std::fabs(fd - an) / denom;
        // skip coordinates whose gradient is numerically zero on both sides
        if (std::fabs(fd) < abs_floor && std::fabs(an) < abs_floor) continue;
        ++report.checked;
        report.worst_rel = std::max(report.worst_rel, rel);
        if (rel > rel_tol) ++report.failed;
    }
    return report;
}

}  // namespace dn2n::testutil
