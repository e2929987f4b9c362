#include "dn2n/editor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include <Eigen/Geometry>

#include "dn2n/rng.hpp"

namespace dn2n {

EditOperator edit_operator_from_string(const std::string& name) {
    if (name == "hue_rotate") return EditOperator::HueRotate;
    if (name == "tone_curve") return EditOperator::ToneCurve;
    if (name == "color_temperature") return EditOperator::ColorTemperature;
    if (name == "local_color_field") return EditOperator::LocalColorField;
    if (name == "palette_stylize") return EditOperator::PaletteStylize;
    if (name == "texture_overlay") return EditOperator::TextureOverlay;
    throw std::invalid_argument("unknown edit operator: " + name);
}

std::string to_string(EditOperator op) {
    switch (op) {
        case EditOperator::HueRotate: return "hue_rotate";
        case EditOperator::ToneCurve: return "tone_curve";
        case EditOperator::ColorTemperature: return "color_temperature";
        case EditOperator::LocalColorField: return "local_color_field";
        case EditOperator::PaletteStylize: return "palette_stylize";
        case EditOperator::TextureOverlay: return "texture_overlay";
    }
    return "?";
}

void EditSpec::validate() const {
    if (!(strength >= 0.0 && strength <= 1.0))
        throw std::invalid_argument("EditSpec: strength must be in [0,1]");
    if (steps_t < 1) throw std::invalid_argument("EditSpec: T must be >= 1");
}

namespace {

// Hue rotation about the gray axis; angle = strength * 360 degrees, so
// strength 1 wraps back to the identity.
void edit_hue_rotate(Image& img, const EditSpec& spec) {
    const double angle = spec.strength * 2.0 * M_PI;
    const Eigen::Vector3f axis = Eigen::Vector3f(1, 1, 1).normalized();
    const Eigen::Matrix3f rot = Eigen::AngleAxisf(static_cast<float>(angle), axis).toRotationMatrix();
    for (size_t i = 0; i < img.data.size(); i += 3) {
        Eigen::Map<Eigen::Vector3f> p(img.data.data() + i);
        p = rot * p;
    }
    img.clamp01();
}

// Gamma curve; direction (brighten vs darken) chosen by the seed.
void edit_tone_curve(Image& img, const EditSpec& spec) {
    Rng rng(hash_seed(spec.seed ^ 0x70e5ULL));
    const double sign = rng.uniform() < 0.5 ? 1.0 : -1.0;
    const float gamma = static_cast<float>(std::exp(sign * 1.1 * spec.strength));
    for (float& v : img.data) v = std::pow(std::max(v, 0.f), gamma);
    img.clamp01();
}

void edit_color_temperature(Image& img, const EditSpec& spec) {
    Rng rng(hash_seed(spec.seed ^ 0xc01dULL));
    const float dir = rng.uniform() < 0.5 ? 1.f : -1.f;
    const float s = static_cast<float>(spec.strength);
    const float gain_r = 1.f + dir * 0.45f * s;
    const float gain_b = 1.f - dir * 0.45f * s;
    for (size_t i = 0; i < img.data.size(); i += 3) {
        img.data[i + 0] *= gain_r;
        img.data[i + 2] *= gain_b;
    }
    img.clamp01();
}

// Smooth spatially varying RGB offset, correlation length ~ image/4.
void edit_local_color_field(Image& img, const EditSpec& spec) {
    const int grid = 5;
    std::array<std::array<float, grid * grid>, 3> lattice{};
    Rng rng(hash_seed(spec.seed ^ 0x10ca1ULL));
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < grid * grid; ++i)
            lattice[c][i] = static_cast<float>(rng.gaussian());

    const float amp = 0.45f * static_cast<float>(spec.strength);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const float gx = static_cast<float>(x) / (img.width - 1) * (grid - 1);
            const float gy = static_cast<float>(y) / (img.height - 1) * (grid - 1);
            const int x0 = std::min(static_cast<int>(gx), grid - 2);
            const int y0 = std::min(static_cast<int>(gy), grid - 2);
            const float fx = gx - x0, fy = gy - y0;
            float* p = img.px(y, x);
            for (int c = 0; c < 3; ++c) {
                const auto& L = lattice[c];
                const float v = L[y0 * grid + x0] * (1 - fx) * (1 - fy) +
                                L[y0 * grid + x0 + 1] * fx * (1 - fy) +
                                L[(y0 + 1) * grid + x0] * (1 - fx) * fy +
                                L[(y0 + 1) * grid + x0 + 1] * fx * fy;
                p[c] += amp * v;
            }
        }
    }
    img.clamp01();
}

void edit_palette_stylize(Image& img, const EditSpec& spec) {
    Rng rng(hash_seed(spec.seed ^ 0x9a1eULL));
    std::array<Color, 5> palette;
    for (Color& c : palette) {
        const double h = rng.uniform(0, 360), s = rng.uniform(0.4, 0.9), v = rng.uniform(0.25, 0.95);
        const double cc = v * s;
        const double hp = h / 60.0;
        const double xx = cc * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
        double r = 0, g = 0, b = 0;
        if (hp < 1) { r = cc; g = xx; }
        else if (hp < 2) { r = xx; g = cc; }
        else if (hp < 3) { g = cc; b = xx; }
        else if (hp < 4) { g = xx; b = cc; }
        else if (hp < 5) { r = xx; b = cc; }
        else { r = cc; b = xx; }
        const double m = v - cc;
        c = Color(static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m));
    }
    const float s = static_cast<float>(spec.strength);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const Color in = img.at(y, x);
            float best = 1e9f;
            Color nearest = palette[0];
            for (const Color& c : palette) {
                const float d = (in - c).squaredNorm();
                if (d < best) {
                    best = d;
                    nearest = c;
                }
            }
            img.set(y, x, (1.f - s) * in + s * nearest);
        }
}

void edit_texture_overlay(Image& img, const EditSpec& spec) {
    Rng rng(hash_seed(spec.seed ^ 0x7e87ULL));
    const double theta = rng.uniform(0, M_PI);
    const double freq = rng.uniform(0.25, 0.6);
    const double phase = rng.uniform(0, 2 * M_PI);
    const float ux = static_cast<float>(std::cos(theta) * freq);
    const float uy = static_cast<float>(std::sin(theta) * freq);
    const float amp = 0.5f * static_cast<float>(spec.strength);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const float tex = std::sin(ux * x + uy * y + static_cast<float>(phase));
            float* p = img.px(y, x);
            for (int c = 0; c < 3; ++c) p[c] += amp * 0.5f * tex;
        }
    img.clamp01();
}

}  // namespace

EditedView apply_edit(const Image& image, const EditSpec& spec) {
    spec.validate();
    EditedView out;
    out.spec = spec;
    out.image = image;
    if (spec.strength == 0.0) return out;
    switch (spec.op) {
        case EditOperator::HueRotate: edit_hue_rotate(out.image, spec); break;
        case EditOperator::ToneCurve: edit_tone_curve(out.image, spec); break;
        case EditOperator::ColorTemperature: edit_color_temperature(out.image, spec); break;
        case EditOperator::LocalColorField: edit_local_color_field(out.image, spec); break;
        case EditOperator::PaletteStylize: edit_palette_stylize(out.image, spec); break;
        case EditOperator::TextureOverlay: edit_texture_overlay(out.image, spec); break;
    }
    return out;
}

namespace {

constexpr std::array<EditOperator, 6> kOperatorFamily = {
    EditOperator::HueRotate,        EditOperator::ToneCurve,      EditOperator::ColorTemperature,
    EditOperator::LocalColorField,  EditOperator::PaletteStylize, EditOperator::TextureOverlay,
};

}  // namespace

EditSpec sample_minor_perturbation(std::uint64_t seed) {
    Rng rng(seed);
    EditSpec spec;
    spec.seed = seed;
    spec.op = kOperatorFamily[rng.index(kOperatorFamily.size())];
    spec.guidance_w = rng.uniform(0.5, 3.5);
    spec.steps_t = static_cast<int>(rng.uniform_int(100, 300));
    const double wn = (spec.guidance_w - 0.5) / 3.0;
    const double tn = (spec.steps_t - 100) / 200.0;
    spec.strength = 0.05 + 0.25 * (0.5 * wn + 0.5 * tn);
    spec.caption_tag = to_string(spec.op);
    return spec;
}

namespace {

const std::vector<std::pair<std::string, EditOperator>>& tag_table() {
    static const std::vector<std::pair<std::string, EditOperator>> table = {
        {"identity", EditOperator::ToneCurve},
        {"hue_shift", EditOperator::HueRotate},
        {"tonal_contrast", EditOperator::ToneCurve},
        {"warm_shift", EditOperator::ColorTemperature},
        {"local_tint", EditOperator::LocalColorField},
        {"palette_pop", EditOperator::PaletteStylize},
        {"canvas_texture", EditOperator::TextureOverlay},
    };
    return table;
}

}  // namespace

EditOperator operator_for_tag(const std::string& caption_tag) {
    for (const auto& [tag, op] : tag_table())
        if (tag == caption_tag) return op;
    throw std::invalid_argument("unknown caption_tag: " + caption_tag);
}

std::vector<std::string> known_caption_tags() {
    std::vector<std::string> tags;
    for (const auto& [tag, op] : tag_table()) tags.push_back(tag);
    return tags;
}

EditSpec sample_normal_edit(const std::string& caption_tag, std::uint64_t seed) {
    EditSpec spec;
    spec.op = operator_for_tag(caption_tag);
    spec.caption_tag = caption_tag;
    spec.seed = seed;
    spec.guidance_w = 7.5;
    spec.steps_t = 500;
    spec.strength = caption_tag == "identity" ? 0.0 : 0.6;
    return spec;
}

std::vector<TrainingPair> make_training_pairs(const SceneBundle& bundle, int variants,
                                              std::uint64_t seed) {
    if (variants < 1) throw std::invalid_argument("make_training_pairs: variants must be >= 1");
    std::vector<TrainingPair> pairs;
    pairs.reserve(variants);
    for (int v = 0; v < variants; ++v) {
        TrainingPair pair;
        pair.clean = bundle;
        pair.perturbed = bundle;
        for (int i = 0; i < bundle.view_count(); ++i) {
            const EditSpec spec = sample_minor_perturbation(derive_seed(seed, v, i));
            pair.perturbed.images[i] = apply_edit(bundle.images[i], spec).image;
        }
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

namespace {

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'')
            out += "'\\''";
        else
            out += c;
    }
    return out + "'";
}

std::string substitute(std::string tmpl, const std::string& key, const std::string& value) {
    size_t pos;
    while ((pos = tmpl.find(key)) != std::string::npos) tmpl.replace(pos, key.size(), value);
    return tmpl;
}

}  // namespace

std::string external_edit(const std::string& image_path, const std::string& caption_in,
                          const std::string& caption_tgt, const ExternalEditorConfig& config,
                          double w, int steps_t, const std::string& out_path) {
    if (config.command_template.empty())
        throw ExternalEditError("external editor: no command configured");

    std::string cmd = config.command_template;
    cmd = substitute(cmd, "{in}", shell_quote(image_path));
    cmd = substitute(cmd, "{out}", shell_quote(out_path));
    cmd = substitute(cmd, "{caption_in}", shell_quote(caption_in));
    cmd = substitute(cmd, "{caption_tgt}", shell_quote(caption_tgt));
    cmd = substitute(cmd, "{w}", std::to_string(w));
    cmd = substitute(cmd, "{T}", std::to_string(steps_t));

    std::string output;
    FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
    if (!pipe) throw ExternalEditError("external editor: failed to launch: " + cmd);
    char buf[512];
    while (fgets(buf, sizeof(buf), pipe)) output += buf;
    const int status = pclose(pipe);
    if (status != 0)
        throw ExternalEditError("external editor exited with status " + std::to_string(status) +
                                ": " + cmd + "\n" + output);

    Image result;
    try {
        result = load_png(out_path);
    } catch (const std::exception& e) {
        throw ExternalEditError(std::string("external editor produced unreadable output: ") + e.what());
    }
    const Image input = load_png(image_path);
    const int want_w = config.expected_width > 0 ? config.expected_width : input.width;
    const int want_h = config.expected_height > 0 ? config.expected_height : input.height;
    if (result.width != want_w || result.height != want_h)
        throw ExternalEditError("external editor output size mismatch: expected " +
                                std::to_string(want_w) + "x" + std::to_string(want_h) + ", got " +
                                std::to_string(result.width) + "x" + std::to_string(result.height));
    return out_path;
}

}  // namespace dn2n
