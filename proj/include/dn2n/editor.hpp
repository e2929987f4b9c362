#pragma once

#include <string>
#include <vector>

#include "dn2n/image.hpp"
#include "dn2n/scene.hpp"

namespace dn2n {

enum class EditOperator {
    HueRotate,
    ToneCurve,
    ColorTemperature,
    LocalColorField,
    PaletteStylize,
    TextureOverlay,
};

EditOperator edit_operator_from_string(const std::string& name);
std::string to_string(EditOperator op);

// Parameterized description of one 2D edit. Determines the edit completely:
// applying the same spec to the same image is bit-identical.
struct EditSpec {
    EditOperator op = EditOperator::ToneCurve;
    double strength = 0.0;        // in [0,1]; 0 is the identity edit
    double guidance_w = 0.0;      // diffusion-editor knob kept as metadata
    int steps_t = 1;              // diffusion-editor knob kept as metadata
    std::uint64_t seed = 0;
    std::string caption_tag;

    void validate() const;
};

struct EditedView {
    Image image;
    int source_view_index = -1;
    EditSpec spec;
};

EditedView apply_edit(const Image& image, const EditSpec& spec);

// Low-strength random edit used to synthesize training pairs:
// w ~ U[0.5, 3.5], T ~ U{100..300}, strength mapped affinely into [0.05, 0.3],
// operator uniform over the family.
EditSpec sample_minor_perturbation(std::uint64_t seed);

// Full-strength edit applied at inference: w = 7.5, T = 500, strength 0.6
// (0 for the identity tag); operator selected by caption_tag.
EditSpec sample_normal_edit(const std::string& caption_tag, std::uint64_t seed);

// caption_tag -> operator family. "identity" maps to a zero-strength edit.
EditOperator operator_for_tag(const std::string& caption_tag);
std::vector<std::string> known_caption_tags();

struct TrainingPair {
    SceneBundle perturbed;
    SceneBundle clean;
};

// Per variant, an independent minor EditSpec per view (per-view seeds derived
// from the master seed); the untouched bundle is the pseudo ground truth.
std::vector<TrainingPair> make_training_pairs(const SceneBundle& bundle, int variants,
                                              std::uint64_t seed);

struct ExternalEditError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ExternalEditorConfig {
    // Placeholders: {in} {out} {caption_in} {caption_tgt} {w} {T}
    std::string command_template;
    int expected_width = 0;    // 0 = accept input size
    int expected_height = 0;
};

// Invokes the configured external editing command, exchanging 8-bit PNGs on
// disk. Throws ExternalEditError with captured diagnostics on failure.
std::string external_edit(const std::string& image_path, const std::string& caption_in,
                          const std::string& caption_tgt, const ExternalEditorConfig& config,
                          double w, int steps_t, const std::string& out_path);

}  // namespace dn2n
