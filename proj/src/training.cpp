#include "dn2n/training.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include <nlohmann/json.hpp>

using json = nlohmann::json;

namespace dn2n {

void TrainConfig::validate() const {
    if (total_steps < 0) throw std::invalid_argument("TrainConfig: total_steps must be >= 0");
    if (rays_per_batch < 1 || samples_per_ray < 2 || patch_size < 2)
        throw std::invalid_argument("TrainConfig: batch geometry must be positive");
    if (patch_size * patch_size > rays_per_batch)
        throw std::invalid_argument("TrainConfig: patch_size^2 must fit inside rays_per_batch");
    if (k_min < 6 || k_max > 15 || k_min > k_max)
        throw std::invalid_argument("TrainConfig: K range must lie in [6,15]");
    if (lr_conv <= 0 || lr_mlp <= 0) throw std::invalid_argument("TrainConfig: learning rates must be > 0");
    if (variants < 1) throw std::invalid_argument("TrainConfig: variants must be >= 1");
    weights.validate();
}

std::optional<StepPlan> make_step_plan(Rng& rng, const SceneBundle& bundle, const TrainConfig& config,
                                       std::int64_t step) {
    const std::vector<int>& train = bundle.train_views;
    StepPlan plan;
    plan.target_view = train[rng.index(train.size())];

    const int feasible_k = static_cast<int>((train.size() - 1) / 2);
    if (feasible_k < config.k_min) return std::nullopt;
    plan.k = static_cast<int>(rng.uniform_int(config.k_min, std::min(config.k_max, feasible_k)));

    // 2K nearest train views by camera-center distance, alternating A/B
    std::vector<int> candidates;
    for (int v : train)
        if (v != plan.target_view) candidates.push_back(v);
    const Vec3 target_center = bundle.poses[plan.target_view].center();
    std::sort(candidates.begin(), candidates.end(), [&](int a, int b) {
        const double da = (bundle.poses[a].center() - target_center).norm();
        const double db = (bundle.poses[b].center() - target_center).norm();
        if (da != db) return da < db;
        return a < b;
    });
    for (int i = 0; i < 2 * plan.k; ++i)
        (i % 2 == 0 ? plan.sources_a : plan.sources_b).push_back(candidates[i]);

    const int h = bundle.intrinsics.height, w = bundle.intrinsics.width;
    plan.patch_h = std::min(config.patch_size, h);
    plan.patch_w = std::min(config.patch_size, w);
    const int oy = static_cast<int>(rng.uniform_int(0, h - plan.patch_h));
    const int ox = static_cast<int>(rng.uniform_int(0, w - plan.patch_w));
    for (int y = 0; y < plan.patch_h; ++y)
        for (int x = 0; x < plan.patch_w; ++x) plan.pixels.emplace_back(ox + x, oy + y);
    const int extra = config.rays_per_batch - plan.patch_h * plan.patch_w;
    for (int i = 0; i < extra; ++i)
        plan.pixels.emplace_back(static_cast<double>(rng.uniform_int(0, w - 1)),
                                 static_cast<double>(rng.uniform_int(0, h - 1)));

    plan.use_unedited = rng.uniform() >= config.unedited_dropout;
    plan.render_seed = rng.raw();
    plan.nbr_render_seed = rng.raw();
    plan.nbr_pose_seed = rng.raw();
    plan.nbr_active = step >= config.gate();
    return plan;
}

bool train_step(TrainState& state, const TrainingPair& pair, const TrainConfig& config) {
    const auto plan = make_step_plan(state.rng, pair.clean, config, state.step);
    if (!plan) return false;

    // the alternating assignment keeps A and B disjoint; guard it anyway
    for (int a : plan->sources_a)
        for (int b : plan->sources_b)
            if (a == b) throw std::logic_error("train_step: source sets overlap");

    state.model.params().zero_grad();
    StepResult<float> result = step_forward(state.model, pair, *plan, config, true);
    step_backward(state.model, result, *plan, config, state.step);
    state.model.adam().step(state.model.params(), config.lr_conv, config.lr_mlp);

    if (state.step % config.log_every == 0 || state.step + 1 == config.total_steps)
        state.history.push_back(LossRow{state.step, result.components, result.total});
    ++state.step;
    return true;
}

std::vector<TrainingPair> build_training_pairs(const std::vector<SceneBundle>& bundles,
                                               const TrainConfig& config) {
    std::vector<TrainingPair> pairs;
    for (size_t i = 0; i < bundles.size(); ++i) {
        if (config.perturb_data) {
            auto scene_pairs =
                make_training_pairs(bundles[i], config.variants, derive_seed(config.seed, 0x9a115, i));
            for (auto& p : scene_pairs) pairs.push_back(std::move(p));
        } else {
            TrainingPair p;
            p.clean = bundles[i];
            p.perturbed = bundles[i];
            pairs.push_back(std::move(p));
        }
    }
    return pairs;
}

TrainState fit(const std::vector<SceneBundle>& bundles, const TrainConfig& config,
               const FitOptions& options) {
    config.validate();
    if (bundles.empty()) throw std::invalid_argument("fit: at least one training scene required");

    const std::vector<TrainingPair> pairs = build_training_pairs(bundles, config);

    TrainState state(config.model);
    state.rng = Rng(config.seed);
    if (!options.resume_from.empty()) {
        Checkpoint ckpt = load_checkpoint(options.resume_from, config.model);
        state = std::move(ckpt.state);
    }

    std::ofstream csv;
    if (!options.loss_csv_path.empty()) {
        csv.open(options.loss_csv_path, state.step > 0 ? std::ios::app : std::ios::out);
        if (state.step == 0) csv << "step,rec,self,nbr,en,tv,total\n";
    }
    size_t flushed = state.history.size();

    std::int64_t consecutive_skips = 0;
    while (state.step < config.total_steps) {
        const TrainingPair& pair = pairs[static_cast<size_t>(state.pair_cursor % pairs.size())];
        ++state.pair_cursor;
        if (!train_step(state, pair, config)) {
            std::cerr << "warning: scene " << pair.clean.scene_id
                      << " has too few views for K >= " << config.k_min << ", skipped\n";
            if (++consecutive_skips > static_cast<std::int64_t>(pairs.size()))
                throw std::runtime_error("fit: no scene has enough views to train");
            continue;
        }
        consecutive_skips = 0;

        if (csv.is_open()) {
            for (; flushed < state.history.size(); ++flushed) {
                const LossRow& r = state.history[flushed];
                char line[256];
                std::snprintf(line, sizeof(line), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                              static_cast<long long>(r.step), r.components.rec, r.components.self,
                              r.components.nbr, r.components.en, r.components.tv, r.total);
                csv << line;
            }
            csv.flush();
        }
        if (!options.checkpoint_path.empty() && config.checkpoint_every > 0 &&
            (state.step % config.checkpoint_every == 0 || state.step == config.total_steps))
            save_checkpoint(state, config, options.checkpoint_path);
        if (!options.quiet && state.step % (config.log_every * 10) == 0 && !state.history.empty()) {
            const LossRow& r = state.history.back();
            std::cerr << "step " << state.step << "/" << config.total_steps << " total " << r.total
                      << " rec " << r.components.rec << "\n";
        }
    }

    if (!options.checkpoint_path.empty()) save_checkpoint(state, config, options.checkpoint_path);
    return state;
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

json model_config_to_json(const ModelConfig& m) {
    return json{{"feat_dim", m.feat_dim},       {"enc0", m.enc0},
                {"enc1", m.enc1},               {"enc2", m.enc2},
                {"prepool_dim", m.prepool_dim}, {"density_hidden", m.density_hidden},
                {"color_hidden", m.color_hidden}, {"init_seed", m.init_seed}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig m;
    m.feat_dim = j.at("feat_dim");
    m.enc0 = j.at("enc0");
    m.enc1 = j.at("enc1");
    m.enc2 = j.at("enc2");
    m.prepool_dim = j.at("prepool_dim");
    m.density_hidden = j.at("density_hidden");
    m.color_hidden = j.at("color_hidden");
    m.init_seed = j.at("init_seed").get<std::uint64_t>();
    return m;
}

json train_config_to_json(const TrainConfig& c) {
    return json{{"total_steps", c.total_steps},
                {"rays_per_batch", c.rays_per_batch},
                {"patch_size", c.patch_size},
                {"k_min", c.k_min},
                {"k_max", c.k_max},
                {"samples_per_ray", c.samples_per_ray},
                {"lr_conv", c.lr_conv},
                {"lr_mlp", c.lr_mlp},
                {"nbr_gate_step", c.nbr_gate_step},
                {"pose_perturb_magnitude", c.pose_perturb_magnitude},
                {"nbr_rel_tol", c.nbr_rel_tol},
                {"unedited_dropout", c.unedited_dropout},
                {"seed", c.seed},
                {"variants", c.variants},
                {"perturb_data", c.perturb_data},
                {"log_every", c.log_every},
                {"checkpoint_every", c.checkpoint_every},
                {"lambda_self", c.weights.lambda_self},
                {"lambda_nbr", c.weights.lambda_nbr},
                {"lambda_en", c.weights.lambda_en},
                {"lambda_tv", c.weights.lambda_tv},
                {"model", model_config_to_json(c.model)}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.total_steps = j.at("total_steps");
    c.rays_per_batch = j.at("rays_per_batch");
    c.patch_size = j.at("patch_size");
    c.k_min = j.at("k_min");
    c.k_max = j.at("k_max");
    c.samples_per_ray = j.at("samples_per_ray");
    c.lr_conv = j.at("lr_conv");
    c.lr_mlp = j.at("lr_mlp");
    c.nbr_gate_step = j.at("nbr_gate_step");
    c.pose_perturb_magnitude = j.at("pose_perturb_magnitude");
    c.nbr_rel_tol = j.at("nbr_rel_tol");
    c.unedited_dropout = j.at("unedited_dropout");
    c.seed = j.at("seed").get<std::uint64_t>();
    c.variants = j.at("variants");
    c.perturb_data = j.at("perturb_data");
    c.log_every = j.at("log_every");
    c.checkpoint_every = j.at("checkpoint_every");
    c.weights.lambda_self = j.at("lambda_self");
    c.weights.lambda_nbr = j.at("lambda_nbr");
    c.weights.lambda_en = j.at("lambda_en");
    c.weights.lambda_tv = j.at("lambda_tv");
    c.model = model_config_from_json(j.at("model"));
    return c;
}

constexpr char kMagic[] = "DN2NCKPT1";

template <class Vec>
void write_floats(std::ofstream& out, const Vec& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(float)));
}

template <class Vec>
void read_floats(std::ifstream& in, Vec& v, size_t n) {
    v.resize(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) throw std::runtime_error("checkpoint: truncated tensor data");
}

}  // namespace

void save_checkpoint(const TrainState& state, const TrainConfig& config, const std::string& path) {
    json header;
    header["version"] = 1;
    header["train"] = train_config_to_json(config);
    header["step"] = state.step;
    header["pair_cursor"] = state.pair_cursor;
    header["adam_t"] = state.model.adam().t;
    header["rng"] = state.rng.serialize();
    header["param_count"] = state.model.param_count();
    json entries = json::array();
    for (const auto& e : state.model.params().entries())
        entries.push_back(json{{"name", e.name}, {"rows", e.rows}, {"cols", e.cols}});
    header["tensors"] = entries;
    json hist = json::array();
    for (const LossRow& r : state.history)
        hist.push_back(json{{"step", r.step}, {"rec", r.components.rec}, {"self", r.components.self},
                            {"nbr", r.components.nbr}, {"en", r.components.en}, {"tv", r.components.tv},
                            {"total", r.total}});
    header["history"] = hist;

    const std::string hs = header.dump();
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("save_checkpoint: cannot write " + path);
        out.write(kMagic, sizeof(kMagic) - 1);
        const std::uint64_t len = hs.size();
        out.write(reinterpret_cast<const char*>(&len), sizeof(len));
        out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
        write_floats(out, state.model.params().values());
        write_floats(out, state.model.adam().m);
        write_floats(out, state.model.adam().v);
        if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path, const std::optional<ModelConfig>& expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[sizeof(kMagic) - 1];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string hs(len, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error("load_checkpoint: truncated header in " + path);
    const json header = json::parse(hs);
    if (header.at("version") != 1)
        throw std::runtime_error("load_checkpoint: unsupported version in " + path);

    TrainConfig config = train_config_from_json(header.at("train"));
    if (expected && !(config.model == *expected))
        throw std::runtime_error("load_checkpoint: model config mismatch in " + path);

    Checkpoint ckpt{TrainState(config.model), config};
    TrainState& state = ckpt.state;
    state.step = header.at("step");
    state.pair_cursor = header.at("pair_cursor");
    state.rng.deserialize(header.at("rng"));

    const size_t n = header.at("param_count");
    if (n != state.model.param_count())
        throw std::runtime_error("load_checkpoint: parameter count mismatch in " + path);
    read_floats(in, state.model.params().values(), n);
    read_floats(in, state.model.adam().m, n);
    read_floats(in, state.model.adam().v, n);
    state.model.adam().t = header.at("adam_t");

    for (const json& r : header.at("history")) {
        LossRow row;
        row.step = r.at("step");
        row.components.rec = r.at("rec");
        row.components.self = r.at("self");
        row.components.nbr = r.at("nbr");
        row.components.en = r.at("en");
        row.components.tv = r.at("tv");
        row.total = r.at("total");
        state.history.push_back(row);
    }
    return ckpt;
}

void write_loss_csv(const std::vector<LossRow>& history, const std::string& path) {
    std::ofstream out(path);
    out << "step,rec,self,nbr,en,tv,total\n";
    for (const LossRow& r : history) {
        char line[256];
        std::snprintf(line, sizeof(line), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                      static_cast<long long>(r.step), r.components.rec, r.components.self,
                      r.components.nbr, r.components.en, r.components.tv, r.total);
        out << line;
    }
}

}  // namespace dn2n
