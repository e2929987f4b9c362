#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dn2n/filter.hpp"
#include "dn2n/training.hpp"

namespace dn2n {

// 10*log10(1/MSE) on [0,1] images; zero MSE pinned to the 99 dB sentinel.
double psnr(const Image& pred, const Image& gt);

constexpr double kPsnrSentinel = 99.0;

// Smooth closed camera path through the bundle's eval poses (Catmull-Rom in
// spherical coordinates, look-at origin).
std::vector<Pose> camera_path(const SceneBundle& bundle, int frames);

std::string sha256_file(const std::string& path);
std::string sha256_string(const std::string& data);

// ---------------------------------------------------------------------------
// experiment configuration (JSON file; unknown fields are usage errors)

struct GenConfig {
    int scenes = 10;
    int views = 24;
    int image_size = 64;
    int min_primitives = 2;
    int max_primitives = 5;
    int gt_samples = 256;
    std::uint64_t seed = 7;
};

struct EditConfig {
    std::string checkpoint;
    std::string scene_dir;
    std::string caption_tag = "hue_shift";
    int frames = 30;
    double trim_fraction = 0.10;
    std::uint64_t seed = 11;
    bool fallback_to_procedural = false;
};

struct EvalConfig {
    std::string scenes_dir;
    std::map<std::string, std::string> checkpoints;   // variant name -> path
    std::vector<std::string> conditions = {"clean", "perturbed"};
    std::vector<std::uint64_t> perturb_seeds = {101, 102, 103, 104};
    int eval_scene_begin = 8;                          // scenes [begin, end) are held out
    int eval_scene_end = 10;
    int source_k = 15;
};

struct PipelineConfig {
    std::string out_dir = "runs/out";
    GenConfig gen;
    TrainConfig train;
    std::string train_variant = "full";   // full | wo_dp | wo_self | wo_nbr
    std::string train_scenes_dir;         // defaults to <out_dir>/scenes
    int train_scene_count = 8;
    EditConfig edit;
    EvalConfig eval;
};

PipelineConfig load_pipeline_config(const std::string& path);
PipelineConfig pipeline_config_from_json_text(const std::string& text);
std::string pipeline_config_to_json(const PipelineConfig& config);

// Applies an ablation variant to a training config: wo_dp trains on
// clean->clean pairs, wo_self zeroes lambda1, wo_nbr zeroes lambda2.
TrainConfig apply_variant(TrainConfig config, const std::string& variant);

// ---------------------------------------------------------------------------
// evaluation protocol

struct EvalRow {
    std::string variant;
    std::string condition;   // "clean" or "perturbed"
    std::string scene;
    std::uint64_t seed = 0;  // perturbation seed, 0 for clean
    int view = -1;
    double psnr = 0;
    double ssim = 0;
};

// Renders the held-out eval views from clean or minor-perturbed sources and
// scores them against the clean ground truth.
std::vector<EvalRow> eval_model(const Model<float>& model, const std::vector<SceneBundle>& scenes,
                                const std::string& variant, bool perturbed_sources,
                                const std::vector<std::uint64_t>& seeds, const TrainConfig& train,
                                int source_k);

double mean_psnr(const std::vector<EvalRow>& rows, const std::string& variant,
                 const std::string& condition);

void write_eval_csv(const std::vector<EvalRow>& rows, const std::string& path);

// ---------------------------------------------------------------------------
// commands (exit status 0 on success; CLI wraps these)

int cmd_gen(const PipelineConfig& config, bool force);
int cmd_train(const PipelineConfig& config, bool resume);
int cmd_edit(const PipelineConfig& config, bool regen_once);
int cmd_eval(const PipelineConfig& config);
int cmd_ablate(const PipelineConfig& config);

// Shared by cmd_edit and the acceptance suite: edit, filter, optionally
// regenerate once, then render the camera path.
struct EditOutcome {
    FilterReport report;
    std::vector<int> retained_views;
    std::vector<Image> frames;
    std::vector<DepthMap> depths;
    double adjacent_psnr = 0;    // mean PSNR between consecutive frames
    bool regenerated = false;
};

EditOutcome run_edit(const Model<float>& model, const TrainConfig& train, const SceneBundle& bundle,
                     const EditConfig& edit, bool regen_once);

std::vector<SceneBundle> load_scenes(const std::string& dir);

// Directory lock guarding concurrent writers; released on destruction.
class DirLock {
  public:
    explicit DirLock(const std::string& dir);
    ~DirLock();
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

  private:
    std::string path_;
};

}  // namespace dn2n
