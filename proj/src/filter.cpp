#include "dn2n/filter.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "dn2n/editor.hpp"
#include "dn2n/rng.hpp"
#include "dn2n/scene.hpp"

namespace dn2n {

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double na = a.norm(), nb = b.norm();
    if (na < 1e-12 || nb < 1e-12) return 0.0;
    return a.dot(b) / (na * nb);
}

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::array<double, kWindow * kWindow>& gaussian_window() {
    static const auto win = [] {
        std::array<double, kWindow * kWindow> w{};
        double sum = 0;
        for (int y = 0; y < kWindow; ++y)
            for (int x = 0; x < kWindow; ++x) {
                const double dy = y - kWindow / 2, dx = x - kWindow / 2;
                w[y * kWindow + x] = std::exp(-(dx * dx + dy * dy) / (2 * kSigma * kSigma));
                sum += w[y * kWindow + x];
            }
        for (double& v : w) v /= sum;
        return w;
    }();
    return win;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("ssim: image shapes differ");
    if (a.height < kWindow || a.width < kWindow)
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");

    const auto& win = gaussian_window();
    double total = 0;
    long count = 0;
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y + kWindow <= a.height; ++y) {
            for (int x = 0; x + kWindow <= a.width; ++x) {
                double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
                for (int wy = 0; wy < kWindow; ++wy)
                    for (int wx = 0; wx < kWindow; ++wx) {
                        const double w = win[wy * kWindow + wx];
                        const double va = a.px(y + wy, x + wx)[c];
                        const double vb = b.px(y + wy, x + wx)[c];
                        mu_a += w * va;
                        mu_b += w * vb;
                        aa += w * va * va;
                        bb += w * vb * vb;
                        ab += w * va * vb;
                    }
                const double var_a = aa - mu_a * mu_a;
                const double var_b = bb - mu_b * mu_b;
                const double cov = ab - mu_a * mu_b;
                const double s = ((2 * mu_a * mu_b + kC1) * (2 * cov + kC2)) /
                                 ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
                total += s;
                ++count;
            }
        }
    }
    return total / static_cast<double>(count);
}

FilterMetrics compute_metrics(const Image& clean, const Image& edited, const std::string& caption_in,
                              const std::string& caption_tgt, const EmbeddingProvider& provider) {
    if (!clean.same_shape(edited)) throw std::invalid_argument("compute_metrics: image shapes differ");

    FilterMetrics m;
    m.ssim = ssim(clean, edited);

    Eigen::VectorXd e_clean, e_edited, e_cin, e_ctgt;
    try {
        e_clean = provider.embed_image(clean);
        e_edited = provider.embed_image(edited);
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("image embedding failed: ") + e.what());
    }
    try {
        e_cin = provider.embed_caption(caption_in);
    } catch (const std::exception& e) {
        throw std::runtime_error("caption embedding failed for '" + caption_in + "': " + e.what());
    }
    try {
        e_ctgt = provider.embed_caption(caption_tgt);
    } catch (const std::exception& e) {
        throw std::runtime_error("caption embedding failed for '" + caption_tgt + "': " + e.what());
    }

    m.sim_img_img = cosine_similarity(e_clean, e_edited);
    m.sim_img_txt = cosine_similarity(e_edited, e_ctgt);
    m.directional = m.sim_img_img - cosine_similarity(e_cin, e_ctgt);
    return m;
}

FilterReport trim(const std::vector<std::pair<int, FilterMetrics>>& entries, double fraction) {
    const size_t n = entries.size();
    if (n < 5) throw std::invalid_argument("trim: needs at least 5 views");
    if (!(fraction > 0.0 && fraction <= 0.25))
        throw std::invalid_argument("trim: fraction must be in (0, 0.25]");

    struct MetricAccess {
        const char* name;
        double (*get)(const FilterMetrics&);
    };
    static constexpr std::array<MetricAccess, 4> metrics = {{
        {"ssim", [](const FilterMetrics& m) { return m.ssim; }},
        {"sim_img_img", [](const FilterMetrics& m) { return m.sim_img_img; }},
        {"sim_img_txt", [](const FilterMetrics& m) { return m.sim_img_txt; }},
        {"directional", [](const FilterMetrics& m) { return m.directional; }},
    }};

    const size_t k = static_cast<size_t>(std::ceil(fraction * static_cast<double>(n)));

    FilterReport report;
    report.per_view.reserve(n);
    for (const auto& [view, m] : entries) {
        FilterEntry e;
        e.view = view;
        e.metrics = m;
        report.per_view.push_back(e);
    }

    for (const MetricAccess& metric : metrics) {
        std::vector<size_t> order(n);
        std::iota(order.begin(), order.end(), size_t{0});
        std::sort(order.begin(), order.end(), [&](size_t i, size_t j) {
            const double vi = metric.get(entries[i].second);
            const double vj = metric.get(entries[j].second);
            if (vi != vj) return vi < vj;
            return entries[i].first < entries[j].first;   // tie-break by view index
        });
        for (size_t r = 0; r < k; ++r) {
            report.per_view[order[r]].discarded_by.push_back(metric.name);
            report.per_view[order[n - 1 - r]].discarded_by.push_back(metric.name);
        }
    }

    size_t discarded = 0;
    for (FilterEntry& e : report.per_view) {
        e.retained = e.discarded_by.empty();
        if (!e.retained) ++discarded;
    }
    report.discard_fraction = static_cast<double>(discarded) / static_cast<double>(n);
    report.regeneration_flag = report.discard_fraction > 0.5;
    return report;
}

namespace {

double round6(double v) { return std::round(v * 1e6) / 1e6; }

std::vector<Image> calibration_images() {
    std::vector<Image> images;
    for (int j = 0; j < 8; ++j) {
        Image img(32, 32);
        const std::uint64_t seed = derive_seed(0xca11b8a7e5ULL, j);
        Rng rng(seed);
        const double mode = rng.uniform();
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                Color c;
                if (mode < 0.5) {
                    for (int ch = 0; ch < 3; ++ch)
                        c[ch] = static_cast<float>(
                            value_noise3(Vec3(x * 0.15, y * 0.15, ch * 3.7), seed + ch));
                } else {
                    c[0] = static_cast<float>(x) / 31.f;
                    c[1] = static_cast<float>(y) / 31.f;
                    c[2] = static_cast<float>(
                        0.5 + 0.5 * std::sin(0.4 * x + 0.3 * y + static_cast<double>(j)));
                }
                img.set(y, x, c);
            }
        images.push_back(std::move(img));
    }
    return images;
}

Eigen::VectorXd toy_embed_image(const Image& img) {
    Eigen::VectorXd v(64);
    v.setZero();

    // 4x4 mean-color grid
    for (int gy = 0; gy < 4; ++gy)
        for (int gx = 0; gx < 4; ++gx) {
            const int y0 = gy * img.height / 4, y1 = (gy + 1) * img.height / 4;
            const int x0 = gx * img.width / 4, x1 = (gx + 1) * img.width / 4;
            Eigen::Vector3d mean = Eigen::Vector3d::Zero();
            int count = 0;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) {
                    mean += img.at(y, x).cast<double>();
                    ++count;
                }
            if (count > 0) mean /= count;
            for (int c = 0; c < 3; ++c) v[(gy * 4 + gx) * 3 + c] = mean[c];
        }

    // 16-bin gradient orientation histogram on luminance, magnitude weighted
    Eigen::VectorXd hist = Eigen::VectorXd::Zero(16);
    auto lum = [&](int y, int x) {
        const float* p = img.px(y, x);
        return (p[0] + p[1] + p[2]) / 3.0;
    };
    for (int y = 1; y + 1 < img.height; ++y)
        for (int x = 1; x + 1 < img.width; ++x) {
            const double gx = lum(y, x + 1) - lum(y, x - 1);
            const double gy = lum(y + 1, x) - lum(y - 1, x);
            const double mag = std::sqrt(gx * gx + gy * gy);
            if (mag < 1e-9) continue;
            const double angle = std::atan2(gy, gx);   // [-pi, pi]
            int bin = static_cast<int>((angle + M_PI) / (2 * M_PI) * 16.0);
            bin = std::clamp(bin, 0, 15);
            hist[bin] += mag;
        }
    const double hsum = hist.sum();
    if (hsum > 1e-12) hist /= hsum;
    v.segment(48, 16) = hist;

    const double norm = v.norm();
    if (norm > 1e-12) v /= norm;
    return v;
}

}  // namespace

EmbeddingProvider toy_embedding_provider() {
    auto calib = std::make_shared<std::vector<Image>>(calibration_images());
    auto anchor = std::make_shared<Eigen::VectorXd>([&] {
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(64);
        for (const Image& img : *calib) mean += toy_embed_image(img);
        mean /= static_cast<double>(calib->size());
        const double n = mean.norm();
        if (n > 1e-12) mean /= n;
        return mean;
    }());
    auto cache = std::make_shared<std::map<std::string, Eigen::VectorXd>>();

    EmbeddingProvider provider;
    provider.dim = 64;
    provider.embed_image = [](const Image& img) { return toy_embed_image(img); };
    provider.embed_caption = [calib, anchor, cache](const std::string& tag) {
        if (auto it = cache->find(tag); it != cache->end()) return it->second;
        Eigen::VectorXd emb;
        const EditSpec probe = sample_normal_edit(tag, 0);   // validates the tag
        if (probe.strength == 0.0) {
            emb = *anchor;   // identity intent: zero-displacement anchor
        } else {
            Eigen::VectorXd disp = Eigen::VectorXd::Zero(64);
            for (size_t j = 0; j < calib->size(); ++j) {
                const EditSpec spec = sample_normal_edit(tag, derive_seed(0x7a95eedULL, j));
                const Image edited = apply_edit((*calib)[j], spec).image;
                disp += toy_embed_image(edited) - toy_embed_image((*calib)[j]);
            }
            disp /= static_cast<double>(calib->size());
            const double n = disp.norm();
            if (n > 1e-12) disp /= n;
            emb = disp;
        }
        cache->emplace(tag, emb);
        return emb;
    };
    return provider;
}

std::string FilterReport::to_json() const {
    nlohmann::json j;
    nlohmann::json views = nlohmann::json::array();
    nlohmann::json retained = nlohmann::json::array();
    for (const FilterEntry& e : per_view) {
        views.push_back(nlohmann::json{{"view", e.view},
                                       {"ssim", round6(e.metrics.ssim)},
                                       {"sim_img_img", round6(e.metrics.sim_img_img)},
                                       {"sim_img_txt", round6(e.metrics.sim_img_txt)},
                                       {"directional", round6(e.metrics.directional)},
                                       {"retained", e.retained},
                                       {"discarded_by", e.discarded_by}});
        if (e.retained) retained.push_back(e.view);
    }
    j["per_view"] = views;
    j["retained"] = retained;
    j["discard_fraction"] = round6(discard_fraction);
    j["regeneration_flag"] = regeneration_flag;
    return j.dump(2);
}

}  // namespace dn2n
