#pragma once

#include <stdexcept>
#include <vector>

#include "dn2n/camera.hpp"
#include "dn2n/nn.hpp"

namespace dn2n {

struct LossWeights {
    double lambda_self = 1e-3;
    double lambda_nbr = 1e-3;
    double lambda_en = 1e-3;
    double lambda_tv = 2e-3;

    void validate() const {
        if (lambda_self < 0 || lambda_nbr < 0 || lambda_en < 0 || lambda_tv < 0)
            throw std::invalid_argument("LossWeights: weights must be >= 0");
    }
};

struct LossComponents {
    double rec = 0, self = 0, nbr = 0, en = 0, tv = 0;
};

// Mean squared error over pixels and channels.
template <class S>
S loss_rec(const nn::MatX<S>& pred, const nn::MatX<S>& pseudo_gt) {
    if (pred.rows() != pseudo_gt.rows() || pred.cols() != pseudo_gt.cols())
        throw std::invalid_argument("loss_rec: shape mismatch");
    return (pred - pseudo_gt).squaredNorm() / static_cast<S>(pred.size());
}

template <class S>
nn::MatX<S> loss_rec_backward(const nn::MatX<S>& pred, const nn::MatX<S>& pseudo_gt, S dloss) {
    return (S(2) * dloss / static_cast<S>(pred.size())) * (pred - pseudo_gt);
}

// Consistency of two predictions of the same target view from disjoint
// source sets; the disjointness is the caller's contract, checked here.
template <class S>
S loss_self(const nn::MatX<S>& tgt_a, const nn::MatX<S>& tgt_b, const std::vector<int>& sources_a,
            const std::vector<int>& sources_b) {
    for (int a : sources_a)
        for (int b : sources_b)
            if (a == b)
                throw std::invalid_argument("loss_self: source sets overlap at view " + std::to_string(a));
    return loss_rec(tgt_a, tgt_b);
}

// Masked consistency between the target renders and the reprojection-aligned
// neighboring render. Each term is a mean over valid pixels only.
template <class S>
S loss_nbr(const nn::MatX<S>& tgt_a, const nn::MatX<S>& tgt_b, const nn::MatX<S>& nbr,
           const VisibilityMask& mask) {
    if (tgt_a.rows() != nbr.rows() || tgt_b.rows() != nbr.rows() ||
        static_cast<Eigen::Index>(mask.values.size()) != nbr.rows())
        throw std::invalid_argument("loss_nbr: shape mismatch");
    Eigen::Index valid = 0;
    S sa = S(0), sb = S(0);
    for (Eigen::Index i = 0; i < nbr.rows(); ++i) {
        if (!mask.values[i]) continue;
        ++valid;
        sa += (tgt_a.row(i) - nbr.row(i)).squaredNorm();
        sb += (tgt_b.row(i) - nbr.row(i)).squaredNorm();
    }
    if (valid == 0) return S(0);
    return (sa + sb) / static_cast<S>(valid * 3);
}

template <class S>
void loss_nbr_backward(const nn::MatX<S>& tgt_a, const nn::MatX<S>& tgt_b, const nn::MatX<S>& nbr,
                       const VisibilityMask& mask, S dloss, nn::MatX<S>& dtgt_a, nn::MatX<S>& dtgt_b,
                       nn::MatX<S>& dnbr) {
    dtgt_a.setZero(tgt_a.rows(), 3);
    dtgt_b.setZero(tgt_b.rows(), 3);
    dnbr.setZero(nbr.rows(), 3);
    Eigen::Index valid = 0;
    for (bool v : mask.values) valid += v ? 1 : 0;
    if (valid == 0) return;
    const S scale = S(2) * dloss / static_cast<S>(valid * 3);
    for (Eigen::Index i = 0; i < nbr.rows(); ++i) {
        if (!mask.values[i]) continue;
        const auto da = scale * (tgt_a.row(i) - nbr.row(i));
        const auto db = scale * (tgt_b.row(i) - nbr.row(i));
        dtgt_a.row(i) = da;
        dtgt_b.row(i) = db;
        dnbr.row(i) = -da - db;
    }
}

// Mean of squared horizontal plus squared vertical neighbor differences over
// an h x w patch stored row-major as [h*w, 3].
template <class S>
S loss_tv(const nn::MatX<S>& patch, int h, int w) {
    if (h < 2 || w < 2) throw std::invalid_argument("loss_tv: patch must be at least 2x2");
    if (patch.rows() != static_cast<Eigen::Index>(h) * w)
        throw std::invalid_argument("loss_tv: patch shape mismatch");
    S sum = S(0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x + 1 < w; ++x)
            sum += (patch.row(y * w + x + 1) - patch.row(y * w + x)).squaredNorm();
    for (int y = 0; y + 1 < h; ++y)
        for (int x = 0; x < w; ++x)
            sum += (patch.row((y + 1) * w + x) - patch.row(y * w + x)).squaredNorm();
    const Eigen::Index count = (static_cast<Eigen::Index>(h) * (w - 1) + static_cast<Eigen::Index>(h - 1) * w) * 3;
    return sum / static_cast<S>(count);
}

template <class S>
nn::MatX<S> loss_tv_backward(const nn::MatX<S>& patch, int h, int w, S dloss) {
    nn::MatX<S> dp = nn::MatX<S>::Zero(patch.rows(), 3);
    const Eigen::Index count = (static_cast<Eigen::Index>(h) * (w - 1) + static_cast<Eigen::Index>(h - 1) * w) * 3;
    const S scale = S(2) * dloss / static_cast<S>(count);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x + 1 < w; ++x) {
            const auto d = scale * (patch.row(y * w + x + 1) - patch.row(y * w + x));
            dp.row(y * w + x + 1) += d;
            dp.row(y * w + x) -= d;
        }
    for (int y = 0; y + 1 < h; ++y)
        for (int x = 0; x < w; ++x) {
            const auto d = scale * (patch.row((y + 1) * w + x) - patch.row(y * w + x));
            dp.row((y + 1) * w + x) += d;
            dp.row(y * w + x) -= d;
        }
    return dp;
}

// l = rec + l1*self + l2*nbr + l3*en + l4*tv, with the neighboring-view term
// gated off before nbr_gate_step.
inline double total_loss(const LossComponents& c, const LossWeights& w, std::int64_t step,
                         std::int64_t nbr_gate_step) {
    const double nbr = step >= nbr_gate_step ? c.nbr : 0.0;
    return c.rec + w.lambda_self * c.self + w.lambda_nbr * nbr + w.lambda_en * c.en + w.lambda_tv * c.tv;
}

}  // namespace dn2n
