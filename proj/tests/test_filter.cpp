#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "dn2n/editor.hpp"
#include "dn2n/filter.hpp"
#include "dn2n/rng.hpp"
#include "dn2n/scene.hpp"

using namespace dn2n;

namespace {

Image noise_image(std::uint64_t seed, int size = 32) {
    Image img(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            Color c;
            for (int ch = 0; ch < 3; ++ch)
                c[ch] = static_cast<float>(value_noise3(Vec3(x * 0.13, y * 0.13, ch * 1.7), seed));
            img.set(y, x, c);
        }
    return img;
}

// direct per-window reference: same constants, no shared code with ssim()
double ssim_reference(const Image& a, const Image& b) {
    const int win = 11;
    const double sigma = 1.5;
    const double c1 = 1e-4, c2 = 9e-4;
    std::vector<double> w(win * win);
    double wsum = 0;
    for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
            const double dy = y - 5, dx = x - 5;
            w[y * win + x] = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            wsum += w[y * win + x];
        }
    for (double& v : w) v /= wsum;

    double total = 0;
    long count = 0;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y + win <= a.height; ++y)
            for (int x = 0; x + win <= a.width; ++x) {
                double ma = 0, mb = 0, va = 0, vb = 0, cov = 0;
                for (int wy = 0; wy < win; ++wy)
                    for (int wx = 0; wx < win; ++wx) {
                        const double wv = w[wy * win + wx];
                        ma += wv * a.px(y + wy, x + wx)[c];
                        mb += wv * b.px(y + wy, x + wx)[c];
                    }
                for (int wy = 0; wy < win; ++wy)
                    for (int wx = 0; wx < win; ++wx) {
                        const double wv = w[wy * win + wx];
                        const double da = a.px(y + wy, x + wx)[c] - ma;
                        const double db = b.px(y + wy, x + wx)[c] - mb;
                        va += wv * da * da;
                        vb += wv * db * db;
                        cov += wv * da * db;
                    }
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                         ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
    return total / count;
}

FilterMetrics metrics_with(double ssim_v, double img_img, double img_txt, double directional) {
    FilterMetrics m;
    m.ssim = ssim_v;
    m.sim_img_img = img_img;
    m.sim_img_txt = img_txt;
    m.directional = directional;
    return m;
}

}  // namespace

TEST_CASE("ssim of an image with itself is 1") {
    const Image img = noise_image(1);
    CHECK(ssim(img, img) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("ssim of constant images follows the closed-form luminance term") {
    const double mu1 = 0.3, mu2 = 0.7;
    Image a(16, 16), b(16, 16);
    for (auto& v : a.data) v = static_cast<float>(mu1);
    for (auto& v : b.data) v = static_cast<float>(mu2);
    const double expected = (2 * mu1 * mu2 + 1e-4) / (mu1 * mu1 + mu2 * mu2 + 1e-4);
    CHECK(ssim(a, b) == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("ssim matches the direct-convolution reference and is symmetric") {
    const Image a = noise_image(2);
    const Image b = noise_image(3);
    const double fast = ssim(a, b);
    CHECK(fast == doctest::Approx(ssim_reference(a, b)).epsilon(1e-6));
    CHECK(fast == doctest::Approx(ssim(b, a)).epsilon(1e-12));
}

TEST_CASE("ssim rejects shape mismatches") {
    CHECK_THROWS_AS(ssim(Image(16, 16), Image(16, 17)), std::invalid_argument);
}

TEST_CASE("compute_metrics covers the no-edit and algebraic cases") {
    const EmbeddingProvider provider = toy_embedding_provider();
    const Image img = noise_image(4);

    const FilterMetrics same = compute_metrics(img, img, "identity", "identity", provider);
    CHECK(same.ssim == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(same.sim_img_img == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(same.directional == doctest::Approx(0.0).epsilon(1e-9));

    const FilterMetrics moved = compute_metrics(img, img, "identity", "hue_shift", provider);
    const double sim_captions = 1.0 - moved.directional;   // since sim_img_img == 1
    CHECK(moved.sim_img_img == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(sim_captions <= 1.0 + 1e-9);
    CHECK(moved.directional >= 0.0);

    // item 4 is exactly item 3's companion identity
    const Image edited = apply_edit(img, sample_normal_edit("palette_pop", 3)).image;
    const FilterMetrics strong = compute_metrics(img, edited, "identity", "palette_pop", provider);
    const Eigen::VectorXd cin = provider.embed_caption("identity");
    const Eigen::VectorXd ctgt = provider.embed_caption("palette_pop");
    CHECK(strong.directional + cosine_similarity(cin, ctgt) ==
          doctest::Approx(strong.sim_img_img).epsilon(1e-12));
    CHECK(strong.sim_img_img < 1.0);
    CHECK(strong.ssim < 1.0);
}

TEST_CASE("unknown caption tags surface as embedding errors naming the caption") {
    const EmbeddingProvider provider = toy_embedding_provider();
    const Image img = noise_image(5);
    try {
        compute_metrics(img, img, "identity", "nonsense_tag", provider);
        FAIL("expected failure");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("nonsense_tag") != std::string::npos);
    }
}

TEST_CASE("trim with four identical rankings discards exactly the 4 extremes of 20") {
    std::vector<std::pair<int, FilterMetrics>> entries;
    for (int i = 0; i < 20; ++i) {
        const double v = i / 19.0;
        entries.emplace_back(i, metrics_with(v, v, v, v));
    }
    const FilterReport report = trim(entries, 0.10);
    int discarded = 0;
    for (const auto& e : report.per_view)
        if (!e.retained) ++discarded;
    CHECK(discarded == 4);
    CHECK(!report.per_view[0].retained);
    CHECK(!report.per_view[1].retained);
    CHECK(!report.per_view[18].retained);
    CHECK(!report.per_view[19].retained);
    CHECK(report.discard_fraction == doctest::Approx(0.2));
    CHECK(!report.regeneration_flag);
}

TEST_CASE("trim breaks ties by view index deterministically") {
    std::vector<std::pair<int, FilterMetrics>> entries;
    for (int i = 0; i < 10; ++i) entries.emplace_back(i, metrics_with(0.5, 0.5, 0.5, 0.5));
    const FilterReport a = trim(entries, 0.10);
    const FilterReport b = trim(entries, 0.10);
    for (size_t i = 0; i < a.per_view.size(); ++i) CHECK(a.per_view[i].retained == b.per_view[i].retained);
    // each metric still marks exactly one top and one bottom view
    for (const auto& e : a.per_view)
        CHECK((e.discarded_by.size() == 0 || e.discarded_by.size() == 4));
    CHECK(!a.per_view[0].retained);
    CHECK(!a.per_view[9].retained);
    int discarded = 0;
    for (const auto& e : a.per_view)
        if (!e.retained) ++discarded;
    CHECK(discarded == 2);
}

TEST_CASE("adversarially disjoint rankings still retain at least N - 8*ceil(0.1N)") {
    // metric m ranks views by a different permutation; worst case discards 8 distinct views
    std::vector<std::pair<int, FilterMetrics>> entries;
    const int n = 10;
    for (int i = 0; i < n; ++i) {
        FilterMetrics m;
        m.ssim = i;                                  // extremes 0, 9
        m.sim_img_img = (i + 2) % n;                 // extremes 8, 7 -> values 0 and 9
        m.sim_img_txt = (i + 4) % n;
        m.directional = (i + 6) % n;
        entries.emplace_back(i, m);
    }
    const FilterReport report = trim(entries, 0.10);
    int retained = 0;
    for (const auto& e : report.per_view)
        if (e.retained) ++retained;
    CHECK(retained >= 2);
}

TEST_CASE("trim rejects bad inputs") {
    std::vector<std::pair<int, FilterMetrics>> few;
    for (int i = 0; i < 4; ++i) few.emplace_back(i, FilterMetrics{});
    CHECK_THROWS_AS(trim(few, 0.10), std::invalid_argument);
    std::vector<std::pair<int, FilterMetrics>> ok;
    for (int i = 0; i < 10; ++i) ok.emplace_back(i, FilterMetrics{});
    CHECK_THROWS_AS(trim(ok, 0.3), std::invalid_argument);
    CHECK_THROWS_AS(trim(ok, 0.0), std::invalid_argument);
}

TEST_CASE("trim is permutation-equivariant") {
    Rng rng(12);
    std::vector<std::pair<int, FilterMetrics>> entries;
    for (int i = 0; i < 17; ++i)
        entries.emplace_back(i, metrics_with(rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()));

    const FilterReport base = trim(entries, 0.10);
    std::vector<int> retained_base;
    for (const auto& e : base.per_view)
        if (e.retained) retained_base.push_back(e.view);
    std::sort(retained_base.begin(), retained_base.end());

    auto shuffled = entries;
    for (size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.index(i)]);
    const FilterReport perm = trim(shuffled, 0.10);
    std::vector<int> retained_perm;
    for (const auto& e : perm.per_view)
        if (e.retained) retained_perm.push_back(e.view);
    std::sort(retained_perm.begin(), retained_perm.end());

    CHECK(retained_base == retained_perm);
}

TEST_CASE("retained fraction respects the union/intersection bounds on random tables") {
    Rng rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 10 + static_cast<int>(rng.index(30));
        std::vector<std::pair<int, FilterMetrics>> entries;
        for (int i = 0; i < n; ++i)
            entries.emplace_back(i,
                                 metrics_with(rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()));
        const FilterReport report = trim(entries, 0.10);
        int retained = 0;
        for (const auto& e : report.per_view)
            if (e.retained) ++retained;
        const int k = static_cast<int>(std::ceil(0.10 * n));
        CHECK(retained >= n - 8 * k);
        CHECK(retained <= n - 2 * k);
    }
}

TEST_CASE("toy embedding provider is consistent and strength-monotone") {
    const EmbeddingProvider provider = toy_embedding_provider();
    const Image img = noise_image(6);

    CHECK(cosine_similarity(provider.embed_image(img), provider.embed_image(img)) ==
          doctest::Approx(1.0).epsilon(1e-12));

    EditSpec zero = sample_normal_edit("warm_shift", 4);
    zero.strength = 0.0;
    const Image same = apply_edit(img, zero).image;
    CHECK(cosine_similarity(provider.embed_image(img), provider.embed_image(same)) ==
          doctest::Approx(1.0).epsilon(1e-12));

    // stronger edits of one operator move the embedding monotonically away
    double prev = 1.0;
    for (double s : {0.15, 0.35, 0.55, 0.75}) {
        EditSpec spec = sample_normal_edit("warm_shift", 4);
        spec.strength = s;
        double mean_sim = 0;
        for (int j = 0; j < 8; ++j) {
            const Image calib = noise_image(100 + j);
            mean_sim += cosine_similarity(provider.embed_image(calib),
                                          provider.embed_image(apply_edit(calib, spec).image));
        }
        mean_sim /= 8;
        CHECK(mean_sim <= prev + 1e-6);
        prev = mean_sim;
    }
}
