#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dn2n/image.hpp"

namespace dn2n {

// Pluggable embedding backend standing in for CLIP; any failure is reported
// naming the embedding that failed.
struct EmbeddingProvider {
    std::function<Eigen::VectorXd(const Image&)> embed_image;
    std::function<Eigen::VectorXd(const std::string&)> embed_caption;
    int dim = 0;
};

struct FilterMetrics {
    double ssim = 0;          // structural similarity clean vs edited
    double sim_img_img = 0;   // cosine of clean vs edited embeddings
    double sim_img_txt = 0;   // cosine of edited embedding vs target caption
    double directional = 0;   // sim_img_img - sim(caption_in, caption_tgt)
};

struct FilterEntry {
    int view = -1;
    FilterMetrics metrics;
    bool retained = true;
    std::vector<std::string> discarded_by;   // metric names that marked this view
};

struct FilterReport {
    std::vector<FilterEntry> per_view;
    double discard_fraction = 0;
    bool regeneration_flag = false;

    std::string to_json() const;
};

// Windowed SSIM averaged over the image, 11x11 Gaussian window sigma 1.5,
// C1=(0.01)^2, C2=(0.03)^2 on unit dynamic range, per channel, windows fully
// inside the image.
double ssim(const Image& a, const Image& b);

FilterMetrics compute_metrics(const Image& clean, const Image& edited, const std::string& caption_in,
                              const std::string& caption_tgt, const EmbeddingProvider& provider);

// Per-metric trimming: for each of the four metrics independently the
// ceil(fraction*N) highest and lowest views are marked; a view is retained iff
// no metric marks it. Ties broken by view index. Requires N >= 5 and
// fraction in (0, 0.25].
FilterReport trim(const std::vector<std::pair<int, FilterMetrics>>& entries, double fraction = 0.10);

// Hand-crafted image/caption embeddings: 4x4 mean-color grid plus 16-bin
// gradient orientation histogram; caption embeddings are mean edit
// displacements over a fixed calibration set.
EmbeddingProvider toy_embedding_provider();

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

}  // namespace dn2n
