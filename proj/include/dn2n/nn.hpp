#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dn2n/rng.hpp"

namespace dn2n::nn {

template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

enum class ParamGroup { Conv, Mlp };

// All trainable parameters in one flat buffer with named views. The flat
// layout is what the optimizer, the checkpoints, and the finite-difference
// probes operate on. Storage is Eigen-aligned and entries are padded to the
// SIMD width so reduction kernels see the same alignment on every run; the
// bit-reproducibility guarantees depend on that.
template <class S>
class ParamStore {
  public:
    using Buffer = std::vector<S, Eigen::aligned_allocator<S>>;

    struct Entry {
        std::string name;
        std::size_t offset = 0;
        int rows = 0, cols = 0;
        ParamGroup group = ParamGroup::Mlp;
    };

    int add(const std::string& name, int rows, int cols, ParamGroup group) {
        constexpr std::size_t pad = 32 / sizeof(S);
        Entry e;
        e.name = name;
        e.offset = values_.size();
        e.rows = rows;
        e.cols = cols;
        e.group = group;
        entries_.push_back(e);
        std::size_t next = values_.size() + static_cast<std::size_t>(rows) * cols;
        next = (next + pad - 1) / pad * pad;
        values_.resize(next, S(0));
        grads_.resize(next, S(0));
        return static_cast<int>(entries_.size()) - 1;
    }

    Eigen::Map<MatX<S>> view(int id) {
        const Entry& e = entries_[id];
        return {values_.data() + e.offset, e.rows, e.cols};
    }
    Eigen::Map<const MatX<S>> view(int id) const {
        const Entry& e = entries_[id];
        return {values_.data() + e.offset, e.rows, e.cols};
    }
    Eigen::Map<MatX<S>> grad(int id) {
        const Entry& e = entries_[id];
        return {grads_.data() + e.offset, e.rows, e.cols};
    }

    void zero_grad() { std::fill(grads_.begin(), grads_.end(), S(0)); }

    std::size_t size() const { return values_.size(); }
    Buffer& values() { return values_; }
    const Buffer& values() const { return values_; }
    Buffer& grads() { return grads_; }
    const Buffer& grads() const { return grads_; }
    const std::vector<Entry>& entries() const { return entries_; }

    ParamGroup group_of(std::size_t flat_index) const {
        for (const Entry& e : entries_)
            if (flat_index >= e.offset && flat_index < e.offset + static_cast<std::size_t>(e.rows) * e.cols)
                return e.group;
        throw std::out_of_range("ParamStore: flat index out of range");
    }

  private:
    Buffer values_, grads_;
    std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// activations

template <class S>
inline void elu_inplace(MatX<S>& x) {
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        S& v = x.data()[i];
        if (v < S(0)) v = std::expm1(v);
    }
}

// dx = dy * elu'(pre); elu'(x) = 1 for x>0, exp(x) = post+1 otherwise
template <class S>
inline void elu_backward_inplace(MatX<S>& dy, const MatX<S>& post) {
    for (Eigen::Index i = 0; i < dy.size(); ++i)
        if (post.data()[i] < S(0)) dy.data()[i] *= post.data()[i] + S(1);
}

template <class S>
inline S softplus(S x) {
    return x > S(20) ? x : std::log1p(std::exp(x));
}

template <class S>
inline S sigmoid(S x) {
    return S(1) / (S(1) + std::exp(-x));
}

// ---------------------------------------------------------------------------
// dense layer

template <class S>
struct Linear {
    int w = -1, b = -1;
    int in = 0, out = 0;

    void init(ParamStore<S>& ps, const std::string& name, int in_dim, int out_dim, Rng& rng,
              ParamGroup group, double scale_mul = 1.0) {
        in = in_dim;
        out = out_dim;
        w = ps.add(name + ".w", out_dim, in_dim, group);
        b = ps.add(name + ".b", 1, out_dim, group);
        const double scale = scale_mul * std::sqrt(2.0 / in_dim);
        auto wv = ps.view(w);
        for (Eigen::Index i = 0; i < wv.size(); ++i) wv.data()[i] = static_cast<S>(rng.gaussian() * scale);
        ps.view(b).setZero();
    }

    MatX<S> forward(const ParamStore<S>& ps, const MatX<S>& x) const {
        MatX<S> y = x * ps.view(w).transpose();
        y.rowwise() += ps.view(b).row(0);
        return y;
    }

    // accumulates dW, db; returns dX
    MatX<S> backward(ParamStore<S>& ps, const MatX<S>& x, const MatX<S>& dy) const {
        ps.grad(w).noalias() += dy.transpose() * x;
        ps.grad(b).row(0).noalias() += dy.colwise().sum();
        return dy * ps.view(w);
    }
};

// ---------------------------------------------------------------------------
// 3x3 convolution on [H*W, C] row-major feature maps, zero padding 1

template <class S>
MatX<S> im2col3x3(const MatX<S>& x, int h, int w, int stride) {
    const int c = static_cast<int>(x.cols());
    const int ho = (h + 2 - 3) / stride + 1;
    const int wo = (w + 2 - 3) / stride + 1;
    MatX<S> cols(static_cast<Eigen::Index>(ho) * wo, static_cast<Eigen::Index>(c) * 9);
    cols.setZero();
    for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
            const Eigen::Index row = static_cast<Eigen::Index>(oy) * wo + ox;
            for (int ky = 0; ky < 3; ++ky) {
                const int iy = oy * stride + ky - 1;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int ix = ox * stride + kx - 1;
                    if (ix < 0 || ix >= w) continue;
                    cols.row(row).segment(static_cast<Eigen::Index>(ky * 3 + kx) * c, c) =
                        x.row(static_cast<Eigen::Index>(iy) * w + ix);
                }
            }
        }
    }
    return cols;
}

template <class S>
MatX<S> col2im3x3(const MatX<S>& dcols, int h, int w, int c, int stride) {
    const int ho = (h + 2 - 3) / stride + 1;
    const int wo = (w + 2 - 3) / stride + 1;
    MatX<S> dx = MatX<S>::Zero(static_cast<Eigen::Index>(h) * w, c);
    for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
            const Eigen::Index row = static_cast<Eigen::Index>(oy) * wo + ox;
            for (int ky = 0; ky < 3; ++ky) {
                const int iy = oy * stride + ky - 1;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int ix = ox * stride + kx - 1;
                    if (ix < 0 || ix >= w) continue;
                    dx.row(static_cast<Eigen::Index>(iy) * w + ix) +=
                        dcols.row(row).segment(static_cast<Eigen::Index>(ky * 3 + kx) * c, c);
                }
            }
        }
    }
    return dx;
}

template <class S>
struct Conv3x3 {
    Linear<S> lin;   // weight applied to im2col rows: [out, cin*9]
    int stride = 1;
    int cin = 0;

    void init(ParamStore<S>& ps, const std::string& name, int cin_, int cout, int stride_, Rng& rng) {
        cin = cin_;
        stride = stride_;
        lin.init(ps, name, cin_ * 9, cout, rng, ParamGroup::Conv);
    }

    // caller keeps the returned im2col matrix for backward
    MatX<S> forward(const ParamStore<S>& ps, const MatX<S>& x, int h, int w, MatX<S>& cols) const {
        cols = im2col3x3(x, h, w, stride);
        return lin.forward(ps, cols);
    }

    MatX<S> backward(ParamStore<S>& ps, const MatX<S>& cols, const MatX<S>& dy, int h, int w) const {
        const MatX<S> dcols = lin.backward(ps, cols, dy);
        return col2im3x3(dcols, h, w, cin, stride);
    }
};

// nearest-neighbor 2x upsample of [h*w, c] to [(2h)*(2w), c]
template <class S>
MatX<S> upsample2(const MatX<S>& x, int h, int w) {
    MatX<S> y(static_cast<Eigen::Index>(h) * w * 4, x.cols());
    for (int yy = 0; yy < 2 * h; ++yy)
        for (int xx = 0; xx < 2 * w; ++xx)
            y.row(static_cast<Eigen::Index>(yy) * 2 * w + xx) =
                x.row(static_cast<Eigen::Index>(yy / 2) * w + xx / 2);
    return y;
}

template <class S>
MatX<S> upsample2_backward(const MatX<S>& dy, int h, int w) {
    MatX<S> dx = MatX<S>::Zero(static_cast<Eigen::Index>(h) * w, dy.cols());
    for (int yy = 0; yy < 2 * h; ++yy)
        for (int xx = 0; xx < 2 * w; ++xx)
            dx.row(static_cast<Eigen::Index>(yy / 2) * w + xx / 2) +=
                dy.row(static_cast<Eigen::Index>(yy) * 2 * w + xx);
    return dx;
}

// ---------------------------------------------------------------------------
// bilinear gather from a [h*w, c] map at continuous pixel positions

struct BilinearTap {
    Eigen::Index idx[4];
    float wgt[4];
    bool valid = false;
};

inline BilinearTap bilinear_tap(double x, double y, int h, int w) {
    BilinearTap tap;
    if (x < 0 || y < 0 || x > w - 1 || y > h - 1) return tap;
    int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
    if (x0 > w - 2) x0 = w - 2;
    if (y0 > h - 2) y0 = h - 2;
    if (w == 1) x0 = 0;
    if (h == 1) y0 = 0;
    const double fx = x - x0, fy = y - y0;
    const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    tap.idx[0] = static_cast<Eigen::Index>(y0) * w + x0;
    tap.idx[1] = static_cast<Eigen::Index>(y0) * w + x1;
    tap.idx[2] = static_cast<Eigen::Index>(y1) * w + x0;
    tap.idx[3] = static_cast<Eigen::Index>(y1) * w + x1;
    tap.wgt[0] = static_cast<float>((1 - fx) * (1 - fy));
    tap.wgt[1] = static_cast<float>(fx * (1 - fy));
    tap.wgt[2] = static_cast<float>((1 - fx) * fy);
    tap.wgt[3] = static_cast<float>(fx * fy);
    tap.valid = true;
    return tap;
}

template <class S>
inline void gather_bilinear(const MatX<S>& map, const BilinearTap& tap, Eigen::Ref<Eigen::Matrix<S, 1, Eigen::Dynamic>> out) {
    out = map.row(tap.idx[0]) * S(tap.wgt[0]) + map.row(tap.idx[1]) * S(tap.wgt[1]) +
          map.row(tap.idx[2]) * S(tap.wgt[2]) + map.row(tap.idx[3]) * S(tap.wgt[3]);
}

template <class S>
inline void scatter_bilinear(MatX<S>& dmap, const BilinearTap& tap,
                             const Eigen::Matrix<S, 1, Eigen::Dynamic>& drow) {
    for (int i = 0; i < 4; ++i) dmap.row(tap.idx[i]) += drow * S(tap.wgt[i]);
}

// ---------------------------------------------------------------------------
// Adam

template <class S>
struct AdamState {
    std::vector<S> m, v;
    std::int64_t t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void resize(std::size_t n) {
        m.assign(n, S(0));
        v.assign(n, S(0));
    }

    // lr chosen per coordinate by parameter group
    void step(ParamStore<S>& ps, double lr_conv, double lr_mlp) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        auto& vals = ps.values();
        auto& grads = ps.grads();
        for (const auto& e : ps.entries()) {
            const double lr = e.group == ParamGroup::Conv ? lr_conv : lr_mlp;
            const std::size_t end = e.offset + static_cast<std::size_t>(e.rows) * e.cols;
            for (std::size_t i = e.offset; i < end; ++i) {
                const double g = static_cast<double>(grads[i]);
                m[i] = static_cast<S>(beta1 * m[i] + (1 - beta1) * g);
                v[i] = static_cast<S>(beta2 * v[i] + (1 - beta2) * g * g);
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                vals[i] -= static_cast<S>(lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }
};

}  // namespace dn2n::nn
