#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dn2n/editor.hpp"
#include "dn2n/losses.hpp"
#include "dn2n/renderer.hpp"

namespace dn2n {

struct TrainConfig {
    std::int64_t total_steps = 20000;
    int rays_per_batch = 500;
    int patch_size = 16;
    int k_min = 6, k_max = 15;
    int samples_per_ray = 64;
    double lr_conv = 1e-4;
    double lr_mlp = 5e-4;
    std::int64_t nbr_gate_step = -1;     // <0: default to 20% of total_steps
    double pose_perturb_magnitude = 0.03;
    double nbr_rel_tol = 0.05;
    double unedited_dropout = 0.5;       // fraction of steps with the unedited branch zeroed
    std::uint64_t seed = 1;
    int variants = 2;                    // perturbation variants per training scene
    bool perturb_data = true;            // false trains on clean->clean pairs (the wo_dp ablation)
    std::int64_t log_every = 50;
    std::int64_t checkpoint_every = 2000;
    LossWeights weights;
    ModelConfig model;

    std::int64_t gate() const { return nbr_gate_step >= 0 ? nbr_gate_step : total_steps / 5; }
    void validate() const;
};

struct LossRow {
    std::int64_t step = 0;
    LossComponents components;
    double total = 0;
};

struct TrainState {
    std::int64_t step = 0;
    std::int64_t pair_cursor = 0;   // round-robin position over scene/variant pairs
    Model<float> model;
    Rng rng;
    std::vector<LossRow> history;

    explicit TrainState(const ModelConfig& config) : model(config) {}
};

// Per-step randomness, drawn once so the same plan can be replayed against
// perturbed parameters by the finite-difference harness.
struct StepPlan {
    int target_view = -1;
    int k = 0;
    std::vector<int> sources_a, sources_b;
    std::vector<Vec2> pixels;          // patch rows first, then independent rays
    int patch_h = 0, patch_w = 0;
    bool use_unedited = true;
    std::uint64_t render_seed = 0;     // shared by the A and B renders
    std::uint64_t nbr_render_seed = 0;
    std::uint64_t nbr_pose_seed = 0;
    bool nbr_active = false;
};

// Detached neighboring-view geometry: reprojected ray targets and the
// visibility mask carry no gradient.
struct NbrGeometry {
    Pose nbr_pose;
    std::vector<int> candidate_patch_idx;  // patch row per neighbor ray
    std::vector<Ray> rays;
    VisibilityMask mask;                   // over the patch
};

// Draws the plan from the state RNG in a fixed order. Returns nullopt when
// the scene cannot supply 2*k_min+1 views.
std::optional<StepPlan> make_step_plan(Rng& rng, const SceneBundle& bundle, const TrainConfig& config,
                                       std::int64_t step);

template <class S>
SourceViewSet<S> build_source_set(const Model<S>& model, const SceneBundle& edited,
                                  const SceneBundle* unedited, const std::vector<int>& views) {
    SourceViewSet<S> set;
    set.width = edited.intrinsics.width;
    set.height = edited.intrinsics.height;
    set.background = edited.background;
    set.views.reserve(views.size());
    for (int v : views) {
        SourceView<S> sv;
        sv.camera = edited.camera(v);
        sv.colors = image_to_matrix<S>(edited.images[v]);
        sv.feat = model.extract_features(edited.images[v], unedited ? &unedited->images[v] : nullptr);
        set.views.push_back(std::move(sv));
    }
    return set;
}

template <class S>
struct StepResult {
    LossComponents components;
    double total = 0;
    SourceViewSet<S> set_a, set_b;
    PatchRender<S> render_a, render_b, render_nbr;
    nn::MatX<S> gt;                    // [rays,3] pseudo ground truth
    NbrGeometry nbr;
    nn::MatX<S> nbr_aligned;           // [patch,3]
};

// Forward pass of one training step: renders Tgt_a/Tgt_b from disjoint source
// sets, the neighboring view at the reprojected patch pixels, and evaluates
// all loss components. When frozen_nbr is given, its rays and mask are used
// verbatim instead of being recomputed from the current depths.
template <class S>
StepResult<S> step_forward(const Model<S>& model, const TrainingPair& pair, const StepPlan& plan,
                           const TrainConfig& config, bool keep_caches,
                           const NbrGeometry* frozen_nbr = nullptr);

// Accumulates parameter gradients for the step (render backward + extractor
// backward). Call on a StepResult produced with keep_caches=true.
template <class S>
void step_backward(Model<S>& model, StepResult<S>& result, const StepPlan& plan,
                   const TrainConfig& config, std::int64_t step);

// One optimizer update; returns false when the scene was skipped.
bool train_step(TrainState& state, const TrainingPair& pair, const TrainConfig& config);

struct FitOptions {
    std::string checkpoint_path;       // empty: no checkpoints
    std::string resume_from;           // empty: fresh start
    std::string loss_csv_path;         // empty: history kept in memory only
    bool quiet = false;
};

TrainState fit(const std::vector<SceneBundle>& bundles, const TrainConfig& config,
               const FitOptions& options = {});

std::vector<TrainingPair> build_training_pairs(const std::vector<SceneBundle>& bundles,
                                               const TrainConfig& config);

void save_checkpoint(const TrainState& state, const TrainConfig& config, const std::string& path);

struct Checkpoint {
    TrainState state;
    TrainConfig config;
};

// Throws on version or model-config mismatch rather than reshaping.
Checkpoint load_checkpoint(const std::string& path, const std::optional<ModelConfig>& expected = {});

void write_loss_csv(const std::vector<LossRow>& history, const std::string& path);

}  // namespace dn2n

#include "dn2n/training_impl.hpp"
