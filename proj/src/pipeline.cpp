#include "dn2n/pipeline.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>

#include <fcntl.h>
#include <unistd.h>

#include <nlohmann/json.hpp>
#include <openssl/sha.h>

#include "dn2n/plot.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace dn2n {

double psnr(const Image& pred, const Image& gt) {
    if (!pred.same_shape(gt)) throw std::invalid_argument("psnr: image shapes differ");
    const double m = mse(pred, gt);
    if (m <= 0.0) return kPsnrSentinel;
    return std::min(kPsnrSentinel, 10.0 * std::log10(1.0 / m));
}

std::vector<Pose> camera_path(const SceneBundle& bundle, int frames) {
    if (bundle.eval_views.empty()) throw std::invalid_argument("camera_path: bundle has no eval views");

    struct Sph {
        double r, az, el;
    };
    std::vector<Sph> knots;
    for (int v : bundle.eval_views) {
        const Vec3 c = bundle.poses[v].center();
        Sph s;
        s.r = c.norm();
        s.az = std::atan2(c.z(), c.x());
        s.el = std::asin(std::clamp(c.y() / s.r, -1.0, 1.0));
        knots.push_back(s);
    }
    std::sort(knots.begin(), knots.end(), [](const Sph& a, const Sph& b) { return a.az < b.az; });
    // unwrap azimuths so the closed loop is monotone
    std::vector<Sph> k = knots;
    const int n = static_cast<int>(k.size());

    auto knot = [&](int i) {
        Sph s = k[((i % n) + n) % n];
        const int wraps = static_cast<int>(std::floor(static_cast<double>(i) / n));
        s.az += wraps * 2.0 * M_PI;
        return s;
    };
    auto catmull = [](double p0, double p1, double p2, double p3, double t) {
        const double t2 = t * t, t3 = t2 * t;
        return 0.5 * ((2 * p1) + (-p0 + p2) * t + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t2 +
                      (-p0 + 3 * p1 - 3 * p2 + p3) * t3);
    };

    std::vector<Pose> path;
    for (int f = 0; f < frames; ++f) {
        const double u = static_cast<double>(f) * n / frames;
        const int seg = static_cast<int>(std::floor(u));
        const double t = u - seg;
        const Sph p0 = knot(seg - 1), p1 = knot(seg), p2 = knot(seg + 1), p3 = knot(seg + 2);
        const double r = catmull(p0.r, p1.r, p2.r, p3.r, t);
        const double az = catmull(p0.az, p1.az, p2.az, p3.az, t);
        const double el = catmull(p0.el, p1.el, p2.el, p3.el, t);
        const Vec3 center(r * std::cos(el) * std::cos(az), r * std::sin(el), r * std::cos(el) * std::sin(az));

        Pose pose;
        const Vec3 z = (-center).normalized();
        Vec3 x = Vec3(0, -1, 0).cross(z);
        if (x.norm() < 1e-9) x = Vec3::UnitX();
        x.normalize();
        pose.rotation.col(0) = x;
        pose.rotation.col(1) = z.cross(x);
        pose.rotation.col(2) = z;
        pose.translation = center;
        path.push_back(pose);
    }
    return path;
}

// ---------------------------------------------------------------------------
// hashing

std::string sha256_string(const std::string& data) {
    unsigned char digest[SHA256_DIGEST_LENGTH];
    SHA256(reinterpret_cast<const unsigned char*>(data.data()), data.size(), digest);
    char hex[2 * SHA256_DIGEST_LENGTH + 1];
    for (int i = 0; i < SHA256_DIGEST_LENGTH; ++i) std::snprintf(hex + 2 * i, 3, "%02x", digest[i]);
    return std::string(hex, 2 * SHA256_DIGEST_LENGTH);
}

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("sha256_file: cannot open " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return sha256_string(data);
}

namespace {

std::string sha256_dir(const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    std::string acc;
    for (const std::string& f : files)
        acc += fs::relative(f, dir).string() + ":" + sha256_file(f) + "\n";
    return sha256_string(acc);
}

}  // namespace

// ---------------------------------------------------------------------------
// configuration

namespace {

void check_keys(const json& j, const std::string& prefix, const std::set<std::string>& allowed) {
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key))
            throw std::invalid_argument("unknown config field: " + prefix + key);
}

GenConfig gen_from_json(const json& j) {
    check_keys(j, "gen.", {"scenes", "views", "image_size", "min_primitives", "max_primitives",
                           "gt_samples", "seed"});
    GenConfig g;
    if (j.contains("scenes")) g.scenes = j.at("scenes");
    if (j.contains("views")) g.views = j.at("views");
    if (j.contains("image_size")) g.image_size = j.at("image_size");
    if (j.contains("min_primitives")) g.min_primitives = j.at("min_primitives");
    if (j.contains("max_primitives")) g.max_primitives = j.at("max_primitives");
    if (j.contains("gt_samples")) g.gt_samples = j.at("gt_samples");
    if (j.contains("seed")) g.seed = j.at("seed").get<std::uint64_t>();
    return g;
}

TrainConfig train_from_json(const json& j) {
    check_keys(j, "train.",
               {"total_steps", "rays_per_batch", "patch_size", "k_min", "k_max", "samples_per_ray",
                "lr_conv", "lr_mlp", "nbr_gate_step", "pose_perturb_magnitude", "nbr_rel_tol",
                "unedited_dropout", "seed", "variants", "log_every", "checkpoint_every",
                "lambda_self", "lambda_nbr", "lambda_en", "lambda_tv", "init_seed"});
    TrainConfig c;
    if (j.contains("total_steps")) c.total_steps = j.at("total_steps");
    if (j.contains("rays_per_batch")) c.rays_per_batch = j.at("rays_per_batch");
    if (j.contains("patch_size")) c.patch_size = j.at("patch_size");
    if (j.contains("k_min")) c.k_min = j.at("k_min");
    if (j.contains("k_max")) c.k_max = j.at("k_max");
    if (j.contains("samples_per_ray")) c.samples_per_ray = j.at("samples_per_ray");
    if (j.contains("lr_conv")) c.lr_conv = j.at("lr_conv");
    if (j.contains("lr_mlp")) c.lr_mlp = j.at("lr_mlp");
    if (j.contains("nbr_gate_step")) c.nbr_gate_step = j.at("nbr_gate_step");
    if (j.contains("pose_perturb_magnitude")) c.pose_perturb_magnitude = j.at("pose_perturb_magnitude");
    if (j.contains("nbr_rel_tol")) c.nbr_rel_tol = j.at("nbr_rel_tol");
    if (j.contains("unedited_dropout")) c.unedited_dropout = j.at("unedited_dropout");
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("variants")) c.variants = j.at("variants");
    if (j.contains("log_every")) c.log_every = j.at("log_every");
    if (j.contains("checkpoint_every")) c.checkpoint_every = j.at("checkpoint_every");
    if (j.contains("lambda_self")) c.weights.lambda_self = j.at("lambda_self");
    if (j.contains("lambda_nbr")) c.weights.lambda_nbr = j.at("lambda_nbr");
    if (j.contains("lambda_en")) c.weights.lambda_en = j.at("lambda_en");
    if (j.contains("lambda_tv")) c.weights.lambda_tv = j.at("lambda_tv");
    if (j.contains("init_seed")) c.model.init_seed = j.at("init_seed").get<std::uint64_t>();
    return c;
}

EditConfig edit_from_json(const json& j) {
    check_keys(j, "edit.", {"checkpoint", "scene_dir", "caption_tag", "frames", "trim_fraction",
                            "seed", "fallback_to_procedural"});
    EditConfig e;
    if (j.contains("checkpoint")) e.checkpoint = j.at("checkpoint");
    if (j.contains("scene_dir")) e.scene_dir = j.at("scene_dir");
    if (j.contains("caption_tag")) e.caption_tag = j.at("caption_tag");
    if (j.contains("frames")) e.frames = j.at("frames");
    if (j.contains("trim_fraction")) e.trim_fraction = j.at("trim_fraction");
    if (j.contains("seed")) e.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("fallback_to_procedural")) e.fallback_to_procedural = j.at("fallback_to_procedural");
    return e;
}

EvalConfig eval_from_json(const json& j) {
    check_keys(j, "eval.", {"scenes_dir", "checkpoints", "conditions", "perturb_seeds",
                            "eval_scene_begin", "eval_scene_end", "source_k"});
    EvalConfig e;
    if (j.contains("scenes_dir")) e.scenes_dir = j.at("scenes_dir");
    if (j.contains("checkpoints"))
        e.checkpoints = j.at("checkpoints").get<std::map<std::string, std::string>>();
    if (j.contains("conditions")) e.conditions = j.at("conditions").get<std::vector<std::string>>();
    if (j.contains("perturb_seeds"))
        e.perturb_seeds = j.at("perturb_seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("eval_scene_begin")) e.eval_scene_begin = j.at("eval_scene_begin");
    if (j.contains("eval_scene_end")) e.eval_scene_end = j.at("eval_scene_end");
    if (j.contains("source_k")) e.source_k = j.at("source_k");
    return e;
}

const std::set<std::string> kValidConditions = {"clean", "perturbed", "full",
                                                "wo_dp", "wo_self", "wo_nbr"};

}  // namespace

PipelineConfig pipeline_config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
    }
    check_keys(j, "", {"out_dir", "gen", "train", "train_variant", "train_scenes_dir",
                       "train_scene_count", "edit", "eval"});
    PipelineConfig c;
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir");
    if (j.contains("gen")) c.gen = gen_from_json(j.at("gen"));
    if (j.contains("train")) c.train = train_from_json(j.at("train"));
    if (j.contains("train_variant")) c.train_variant = j.at("train_variant");
    if (j.contains("train_scenes_dir")) c.train_scenes_dir = j.at("train_scenes_dir");
    if (j.contains("train_scene_count")) c.train_scene_count = j.at("train_scene_count");
    if (j.contains("edit")) c.edit = edit_from_json(j.at("edit"));
    if (j.contains("eval")) c.eval = eval_from_json(j.at("eval"));

    for (const std::string& cond : c.eval.conditions)
        if (!kValidConditions.count(cond))
            throw std::invalid_argument("unknown eval condition: " + cond);
    if (c.train_variant != "full" && c.train_variant != "wo_dp" && c.train_variant != "wo_self" &&
        c.train_variant != "wo_nbr")
        throw std::invalid_argument("unknown train_variant: " + c.train_variant);
    return c;
}

PipelineConfig load_pipeline_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return pipeline_config_from_json_text(text);
}

std::string pipeline_config_to_json(const PipelineConfig& c) {
    json j;
    j["out_dir"] = c.out_dir;
    j["gen"] = json{{"scenes", c.gen.scenes},
                    {"views", c.gen.views},
                    {"image_size", c.gen.image_size},
                    {"min_primitives", c.gen.min_primitives},
                    {"max_primitives", c.gen.max_primitives},
                    {"gt_samples", c.gen.gt_samples},
                    {"seed", c.gen.seed}};
    j["train"] = json{{"total_steps", c.train.total_steps},
                      {"rays_per_batch", c.train.rays_per_batch},
                      {"patch_size", c.train.patch_size},
                      {"k_min", c.train.k_min},
                      {"k_max", c.train.k_max},
                      {"samples_per_ray", c.train.samples_per_ray},
                      {"lr_conv", c.train.lr_conv},
                      {"lr_mlp", c.train.lr_mlp},
                      {"nbr_gate_step", c.train.nbr_gate_step},
                      {"pose_perturb_magnitude", c.train.pose_perturb_magnitude},
                      {"nbr_rel_tol", c.train.nbr_rel_tol},
                      {"unedited_dropout", c.train.unedited_dropout},
                      {"seed", c.train.seed},
                      {"variants", c.train.variants},
                      {"log_every", c.train.log_every},
                      {"checkpoint_every", c.train.checkpoint_every},
                      {"lambda_self", c.train.weights.lambda_self},
                      {"lambda_nbr", c.train.weights.lambda_nbr},
                      {"lambda_en", c.train.weights.lambda_en},
                      {"lambda_tv", c.train.weights.lambda_tv},
                      {"init_seed", c.train.model.init_seed}};
    j["train_variant"] = c.train_variant;
    j["train_scenes_dir"] = c.train_scenes_dir;
    j["train_scene_count"] = c.train_scene_count;
    j["edit"] = json{{"checkpoint", c.edit.checkpoint},
                     {"scene_dir", c.edit.scene_dir},
                     {"caption_tag", c.edit.caption_tag},
                     {"frames", c.edit.frames},
                     {"trim_fraction", c.edit.trim_fraction},
                     {"seed", c.edit.seed},
                     {"fallback_to_procedural", c.edit.fallback_to_procedural}};
    j["eval"] = json{{"scenes_dir", c.eval.scenes_dir},
                     {"checkpoints", c.eval.checkpoints},
                     {"conditions", c.eval.conditions},
                     {"perturb_seeds", c.eval.perturb_seeds},
                     {"eval_scene_begin", c.eval.eval_scene_begin},
                     {"eval_scene_end", c.eval.eval_scene_end},
                     {"source_k", c.eval.source_k}};
    return j.dump(2);
}

TrainConfig apply_variant(TrainConfig config, const std::string& variant) {
    if (variant == "full") return config;
    if (variant == "wo_dp") {
        config.perturb_data = false;
        return config;
    }
    if (variant == "wo_self") {
        config.weights.lambda_self = 0.0;
        return config;
    }
    if (variant == "wo_nbr") {
        config.weights.lambda_nbr = 0.0;
        return config;
    }
    throw std::invalid_argument("unknown variant: " + variant);
}

// ---------------------------------------------------------------------------
// evaluation

namespace {

std::vector<int> nearest_views(const SceneBundle& bundle, const std::vector<int>& candidates,
                               const Vec3& center, int count) {
    std::vector<int> sorted = candidates;
    std::sort(sorted.begin(), sorted.end(), [&](int a, int b) {
        const double da = (bundle.poses[a].center() - center).norm();
        const double db = (bundle.poses[b].center() - center).norm();
        if (da != db) return da < db;
        return a < b;
    });
    if (static_cast<int>(sorted.size()) > count) sorted.resize(count);
    return sorted;
}

}  // namespace

std::vector<EvalRow> eval_model(const Model<float>& model, const std::vector<SceneBundle>& scenes,
                                const std::string& variant, bool perturbed_sources,
                                const std::vector<std::uint64_t>& seeds, const TrainConfig& train,
                                int source_k) {
    std::vector<EvalRow> rows;
    const std::vector<std::uint64_t> cond_seeds = perturbed_sources ? seeds : std::vector<std::uint64_t>{0};
    for (const SceneBundle& bundle : scenes) {
        const std::uint64_t scene_key = hash_seed(std::hash<std::string>{}(bundle.scene_id));
        for (std::uint64_t seed : cond_seeds) {
            SceneBundle inputs = bundle;
            if (perturbed_sources) {
                for (int v : bundle.train_views) {
                    const EditSpec spec = sample_minor_perturbation(derive_seed(seed, scene_key, v));
                    inputs.images[v] = apply_edit(bundle.images[v], spec).image;
                }
            }
            for (int ev : bundle.eval_views) {
                const std::vector<int> srcs =
                    nearest_views(bundle, bundle.train_views, bundle.poses[ev].center(), source_k);
                if (static_cast<int>(srcs.size()) < 6) continue;
                SourceViewSet<float> set = build_source_set<float>(model, inputs, &bundle, srcs);
                Image render;
                DepthMap depth;
                render_view(model, set, bundle.camera(ev), bundle.t_near, bundle.t_far,
                            train.samples_per_ray, derive_seed(0xe7a1, scene_key, seed, ev), render,
                            depth);
                EvalRow row;
                row.variant = variant;
                row.condition = perturbed_sources ? "perturbed" : "clean";
                row.scene = bundle.scene_id;
                row.seed = seed;
                row.view = ev;
                row.psnr = psnr(render, bundle.images[ev]);
                row.ssim = ssim(render, bundle.images[ev]);
                rows.push_back(row);
            }
        }
    }
    return rows;
}

double mean_psnr(const std::vector<EvalRow>& rows, const std::string& variant,
                 const std::string& condition) {
    double sum = 0;
    int count = 0;
    for (const EvalRow& r : rows)
        if (r.variant == variant && r.condition == condition) {
            sum += r.psnr;
            ++count;
        }
    return count > 0 ? sum / count : 0.0;
}

void write_eval_csv(const std::vector<EvalRow>& rows, const std::string& path) {
    std::ofstream out(path);
    out << "variant,condition,scene,seed,view,psnr,ssim\n";
    for (const EvalRow& r : rows) {
        char line[256];
        std::snprintf(line, sizeof(line), "%s,%s,%s,%llu,%d,%.6f,%.6f\n", r.variant.c_str(),
                      r.condition.c_str(), r.scene.c_str(), static_cast<unsigned long long>(r.seed),
                      r.view, r.psnr, r.ssim);
        out << line;
    }
}

std::vector<SceneBundle> load_scenes(const std::string& dir) {
    if (!fs::exists(dir)) throw std::runtime_error("scenes directory missing: " + dir);
    std::vector<std::string> subdirs;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) subdirs.push_back(e.path().string());
    std::sort(subdirs.begin(), subdirs.end());
    std::vector<SceneBundle> bundles;
    for (const std::string& d : subdirs) bundles.push_back(load_bundle(d));
    if (bundles.empty()) throw std::runtime_error("no scene bundles under " + dir);
    return bundles;
}

DirLock::DirLock(const std::string& dir) {
    fs::create_directories(dir);
    path_ = (fs::path(dir) / ".lock").string();
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
        throw std::runtime_error("output directory is locked by another process (remove " + path_ +
                                 " if stale)");
    ::close(fd);
}

DirLock::~DirLock() { ::unlink(path_.c_str()); }

// ---------------------------------------------------------------------------
// commands

namespace {

struct Stopwatch {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

void write_manifest(const std::string& out_dir, const std::string& command, json manifest) {
    manifest["command"] = command;
    write_text((fs::path(out_dir) / (command + "_manifest.json")).string(), manifest.dump(2) + "\n");
}

void write_timings(const std::string& out_dir, const std::string& command, const json& timings) {
    write_text((fs::path(out_dir) / (command + "_timings.json")).string(), timings.dump(2) + "\n");
}

std::string scene_dir_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%02d", index);
    return buf;
}

}  // namespace

int cmd_gen(const PipelineConfig& config, bool force) {
    Stopwatch watch;
    const fs::path scenes_dir = fs::path(config.out_dir) / "scenes";
    if (fs::exists(scenes_dir)) {
        if (!force)
            throw std::runtime_error("scenes directory exists: " + scenes_dir.string() +
                                     " (pass --force to overwrite)");
        fs::remove_all(scenes_dir);
    }
    fs::create_directories(config.out_dir);
    DirLock lock(config.out_dir);

    SceneGenConfig gen;
    gen.n_views = config.gen.views;
    gen.image_size = config.gen.image_size;
    gen.min_primitives = config.gen.min_primitives;
    gen.max_primitives = config.gen.max_primitives;
    gen.gt_samples = config.gen.gt_samples;

    json artifacts;
    for (int i = 0; i < config.gen.scenes; ++i) {
        SceneBundle bundle = generate_scene(gen, derive_seed(config.gen.seed, i));
        bundle.scene_id = scene_dir_name(i);
        const std::string dir = (scenes_dir / scene_dir_name(i)).string();
        save_bundle(bundle, dir);
        artifacts[scene_dir_name(i)] = json{{"path", fs::relative(dir, config.out_dir).string()},
                                            {"sha256", sha256_dir(dir)},
                                            {"views", bundle.view_count()}};
    }

    json manifest;
    manifest["config"] = json::parse(pipeline_config_to_json(config));
    manifest["seed"] = config.gen.seed;
    manifest["artifacts"] = artifacts;
    write_manifest(config.out_dir, "gen", manifest);
    write_timings(config.out_dir, "gen", json{{"seconds", watch.seconds()}});
    std::cerr << "gen: wrote " << config.gen.scenes << " scenes to " << scenes_dir << "\n";
    return 0;
}

int cmd_train(const PipelineConfig& config, bool resume) {
    Stopwatch watch;
    fs::create_directories(config.out_dir);
    DirLock lock(config.out_dir);

    const std::string scenes_dir =
        config.train_scenes_dir.empty() ? (fs::path(config.out_dir) / "scenes").string()
                                        : config.train_scenes_dir;
    std::vector<SceneBundle> all = load_scenes(scenes_dir);
    if (config.train_scene_count < 1 || config.train_scene_count > static_cast<int>(all.size()))
        throw std::invalid_argument("train_scene_count out of range");
    std::vector<SceneBundle> train_scenes(all.begin(), all.begin() + config.train_scene_count);

    const TrainConfig tcfg = apply_variant(config.train, config.train_variant);
    const fs::path ckpt_dir = fs::path(config.out_dir) / "checkpoints";
    fs::create_directories(ckpt_dir);
    FitOptions opts;
    opts.checkpoint_path = (ckpt_dir / (config.train_variant + ".ckpt")).string();
    opts.loss_csv_path = (fs::path(config.out_dir) / (config.train_variant + "_loss.csv")).string();
    if (resume) {
        if (!fs::exists(opts.checkpoint_path))
            throw std::runtime_error("--resume given but no checkpoint at " + opts.checkpoint_path);
        opts.resume_from = opts.checkpoint_path;
    }

    fit(train_scenes, tcfg, opts);

    json manifest;
    manifest["config"] = json::parse(pipeline_config_to_json(config));
    manifest["variant"] = config.train_variant;
    manifest["seed"] = tcfg.seed;
    manifest["inputs"] = json{{"scenes_dir", scenes_dir}, {"scenes_sha256", sha256_dir(scenes_dir)}};
    manifest["artifacts"] =
        json{{"checkpoint", json{{"path", fs::relative(opts.checkpoint_path, config.out_dir).string()},
                                 {"sha256", sha256_file(opts.checkpoint_path)}}},
             {"loss_csv", json{{"path", fs::relative(opts.loss_csv_path, config.out_dir).string()},
                               {"sha256", sha256_file(opts.loss_csv_path)}}}};
    write_manifest(config.out_dir, "train_" + config.train_variant, manifest);
    write_timings(config.out_dir, "train_" + config.train_variant,
                  json{{"seconds", watch.seconds()}});
    return 0;
}

EditOutcome run_edit(const Model<float>& model, const TrainConfig& train, const SceneBundle& bundle,
                     const EditConfig& edit, bool regen_once) {
    EditOutcome outcome;
    const EmbeddingProvider provider = toy_embedding_provider();

    // edit every view at normal strength
    std::vector<Image> edited(bundle.view_count());
    const char* external_cmd = std::getenv("DN2N_EXTERNAL_EDITOR");
    for (int v = 0; v < bundle.view_count(); ++v) {
        const EditSpec spec = sample_normal_edit(edit.caption_tag, derive_seed(edit.seed, v));
        if (external_cmd && *external_cmd) {
            const std::string tmp_dir = (fs::temp_directory_path() / "dn2n_edit").string();
            fs::create_directories(tmp_dir);
            const std::string in_path = tmp_dir + "/in_" + std::to_string(v) + ".png";
            const std::string out_path = tmp_dir + "/out_" + std::to_string(v) + ".png";
            save_png(bundle.images[v], in_path);
            try {
                ExternalEditorConfig ext;
                ext.command_template = external_cmd;
                external_edit(in_path, "identity", edit.caption_tag, ext, spec.guidance_w,
                              spec.steps_t, out_path);
                edited[v] = load_png(out_path);
            } catch (const ExternalEditError&) {
                if (!edit.fallback_to_procedural) throw;
                edited[v] = apply_edit(bundle.images[v], spec).image;
            }
        } else {
            edited[v] = apply_edit(bundle.images[v], spec).image;
        }
    }

    auto metrics_for = [&](const std::vector<Image>& imgs) {
        std::vector<std::pair<int, FilterMetrics>> entries;
        for (int v = 0; v < bundle.view_count(); ++v)
            entries.emplace_back(
                v, compute_metrics(bundle.images[v], imgs[v], "identity", edit.caption_tag, provider));
        return entries;
    };

    outcome.report = trim(metrics_for(edited), edit.trim_fraction);

    if (outcome.report.regeneration_flag && regen_once) {
        std::vector<int> retained;
        for (const FilterEntry& e : outcome.report.per_view)
            if (e.retained) retained.push_back(e.view);
        if (static_cast<int>(retained.size()) >= 6) {
            SceneBundle sources_bundle = bundle;
            for (int v = 0; v < bundle.view_count(); ++v) sources_bundle.images[v] = edited[v];
            for (const FilterEntry& e : outcome.report.per_view) {
                if (e.retained) continue;
                const std::vector<int> srcs =
                    nearest_views(bundle, retained, bundle.poses[e.view].center(), 15);
                SourceViewSet<float> set =
                    build_source_set<float>(model, sources_bundle, &bundle, srcs);
                Image render;
                DepthMap depth;
                render_view(model, set, bundle.camera(e.view), bundle.t_near, bundle.t_far,
                            train.samples_per_ray, derive_seed(edit.seed, 0x9e9e, e.view), render,
                            depth);
                edited[e.view] = render;
            }
            outcome.report = trim(metrics_for(edited), edit.trim_fraction);
            outcome.regenerated = true;
        }
    }

    for (const FilterEntry& e : outcome.report.per_view)
        if (e.retained) outcome.retained_views.push_back(e.view);
    if (static_cast<int>(outcome.retained_views.size()) < 6)
        throw std::runtime_error("edit: only " + std::to_string(outcome.retained_views.size()) +
                                 " views retained by the filter; need at least 6 sources");

    // render the camera path from the retained edited views
    SceneBundle edited_bundle = bundle;
    for (int v = 0; v < bundle.view_count(); ++v) edited_bundle.images[v] = edited[v];
    const std::vector<Pose> path = camera_path(bundle, edit.frames);
    for (size_t f = 0; f < path.size(); ++f) {
        const std::vector<int> srcs =
            nearest_views(bundle, outcome.retained_views, path[f].center(), 15);
        SourceViewSet<float> set = build_source_set<float>(model, edited_bundle, &bundle, srcs);
        Image frame;
        DepthMap depth;
        render_view(model, set, Camera{bundle.intrinsics, path[f]}, bundle.t_near, bundle.t_far,
                    train.samples_per_ray, derive_seed(edit.seed, 0xf0, f), frame, depth);
        outcome.frames.push_back(std::move(frame));
        outcome.depths.push_back(std::move(depth));
    }

    double acc = 0;
    for (size_t f = 0; f + 1 < outcome.frames.size(); ++f)
        acc += psnr(outcome.frames[f], outcome.frames[f + 1]);
    outcome.adjacent_psnr = outcome.frames.size() > 1 ? acc / (outcome.frames.size() - 1) : 0.0;
    return outcome;
}

int cmd_edit(const PipelineConfig& config, bool regen_once) {
    Stopwatch watch;
    // checkpoint is validated before any editing starts
    if (config.edit.checkpoint.empty() || !fs::exists(config.edit.checkpoint))
        throw std::runtime_error("edit: checkpoint missing: " + config.edit.checkpoint);
    Checkpoint ckpt = load_checkpoint(config.edit.checkpoint);

    if (config.edit.scene_dir.empty() || !fs::exists(config.edit.scene_dir))
        throw std::runtime_error("edit: scene_dir missing: " + config.edit.scene_dir);
    const SceneBundle bundle = load_bundle(config.edit.scene_dir);

    fs::create_directories(config.out_dir);
    DirLock lock(config.out_dir);
    const fs::path edit_dir = fs::path(config.out_dir) / ("edit_" + config.edit.caption_tag);
    fs::create_directories(edit_dir / "frames");
    fs::create_directories(edit_dir / "depth");

    EditOutcome outcome = run_edit(ckpt.state.model, ckpt.config, bundle, config.edit, regen_once);
    if (outcome.report.regeneration_flag && !regen_once)
        std::cerr << "edit: more than half the views were discarded; re-run with --regen-once\n";

    write_text((edit_dir / "filter_report.json").string(), outcome.report.to_json() + "\n");
    for (size_t f = 0; f < outcome.frames.size(); ++f) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%03zu.png", f);
        save_png(outcome.frames[f], (edit_dir / "frames" / name).string());
        std::vector<float> depth_norm(outcome.depths[f].values.size());
        for (size_t i = 0; i < depth_norm.size(); ++i)
            depth_norm[i] = static_cast<float>(
                std::clamp((outcome.depths[f].values[i] - bundle.t_near) / (bundle.t_far - bundle.t_near),
                           0.0, 1.0));
        std::snprintf(name, sizeof(name), "depth_%03zu.png", f);
        save_gray_png(depth_norm, outcome.depths[f].height, outcome.depths[f].width,
                      (edit_dir / "depth" / name).string());
    }

    json manifest;
    manifest["config"] = json::parse(pipeline_config_to_json(config));
    manifest["seed"] = config.edit.seed;
    manifest["caption_tag"] = config.edit.caption_tag;
    manifest["retained_views"] = outcome.retained_views;
    manifest["discard_fraction"] = outcome.report.discard_fraction;
    manifest["regeneration_flag"] = outcome.report.regeneration_flag;
    manifest["regenerated"] = outcome.regenerated;
    manifest["adjacent_frame_psnr"] = outcome.adjacent_psnr;
    manifest["artifacts"] = json{{"edit_dir", fs::relative(edit_dir, config.out_dir).string()},
                                 {"sha256", sha256_dir(edit_dir.string())}};
    write_manifest(config.out_dir, "edit", manifest);
    write_timings(config.out_dir, "edit", json{{"seconds", watch.seconds()}});
    return 0;
}

namespace {

// condition -> (variant checkpoint key, perturbed inputs?)
std::pair<std::string, bool> resolve_condition(const std::string& cond,
                                               const std::map<std::string, std::string>& checkpoints) {
    if (cond == "clean" || cond == "perturbed") {
        const std::string primary = checkpoints.count("full") || checkpoints.empty()
                                        ? std::string("full")
                                        : checkpoints.begin()->first;
        return {primary, cond == "perturbed"};
    }
    return {cond, true};
}

}  // namespace

int cmd_eval(const PipelineConfig& config) {
    Stopwatch watch;
    fs::create_directories(config.out_dir);
    DirLock lock(config.out_dir);

    const std::string scenes_dir = config.eval.scenes_dir.empty()
                                       ? (fs::path(config.out_dir) / "scenes").string()
                                       : config.eval.scenes_dir;
    std::vector<SceneBundle> all = load_scenes(scenes_dir);
    const int begin = std::clamp(config.eval.eval_scene_begin, 0, static_cast<int>(all.size()));
    const int end = std::clamp(config.eval.eval_scene_end, begin, static_cast<int>(all.size()));
    std::vector<SceneBundle> eval_scenes(all.begin() + begin, all.begin() + end);
    if (eval_scenes.empty()) throw std::runtime_error("eval: no held-out scenes in range");

    std::vector<EvalRow> rows;
    json absent = json::array();
    std::map<std::string, std::unique_ptr<Checkpoint>> loaded;
    for (const std::string& cond : config.eval.conditions) {
        const auto [variant, perturbed] = resolve_condition(cond, config.eval.checkpoints);
        auto it = config.eval.checkpoints.find(variant);
        if (it == config.eval.checkpoints.end() || !fs::exists(it->second)) {
            absent.push_back(cond);
            std::cerr << "eval: condition " << cond << " needs checkpoint '" << variant
                      << "', which is absent; skipping\n";
            continue;
        }
        if (!loaded.count(variant))
            loaded[variant] = std::make_unique<Checkpoint>(load_checkpoint(it->second));
        const Checkpoint& ckpt = *loaded[variant];
        auto cond_rows = eval_model(ckpt.state.model, eval_scenes, variant, perturbed,
                                    config.eval.perturb_seeds, ckpt.config, config.eval.source_k);
        rows.insert(rows.end(), cond_rows.begin(), cond_rows.end());
    }

    const std::string csv_path = (fs::path(config.out_dir) / "eval_table.csv").string();
    write_eval_csv(rows, csv_path);

    // per-variant summary + bar plot
    std::vector<std::string> groups = {"clean", "perturbed"};
    std::vector<BarSeries> series;
    std::set<std::string> variants;
    for (const EvalRow& r : rows) variants.insert(r.variant);
    const std::array<Color, 4> palette = {Color(0.25f, 0.45f, 0.8f), Color(0.85f, 0.45f, 0.2f),
                                          Color(0.3f, 0.65f, 0.3f), Color(0.6f, 0.3f, 0.6f)};
    int ci = 0;
    json summary;
    for (const std::string& v : variants) {
        BarSeries s;
        s.label = v;
        s.color = palette[ci++ % palette.size()];
        for (const std::string& g : groups) s.values.push_back(mean_psnr(rows, v, g));
        series.push_back(s);
        summary[v] = json{{"clean_psnr", mean_psnr(rows, v, "clean")},
                          {"perturbed_psnr", mean_psnr(rows, v, "perturbed")}};
    }
    const std::string plot_path = (fs::path(config.out_dir) / "eval_psnr.png").string();
    save_bar_chart(plot_path, "MEAN PSNR DB", groups, series);

    json manifest;
    manifest["config"] = json::parse(pipeline_config_to_json(config));
    manifest["inputs"] = json{{"scenes_dir", scenes_dir}, {"scenes_sha256", sha256_dir(scenes_dir)}};
    manifest["absent_conditions"] = absent;
    manifest["summary"] = summary;
    manifest["artifacts"] = json{{"eval_table", json{{"path", "eval_table.csv"},
                                                     {"sha256", sha256_file(csv_path)}}},
                                 {"eval_plot", json{{"path", "eval_psnr.png"},
                                                    {"sha256", sha256_file(plot_path)}}}};
    write_manifest(config.out_dir, "eval", manifest);
    write_timings(config.out_dir, "eval", json{{"seconds", watch.seconds()}});
    return 0;
}

int cmd_ablate(const PipelineConfig& config) {
    Stopwatch watch;
    fs::create_directories(config.out_dir);
    DirLock lock(config.out_dir);

    const std::string scenes_dir = config.train_scenes_dir.empty()
                                       ? (fs::path(config.out_dir) / "scenes").string()
                                       : config.train_scenes_dir;
    std::vector<SceneBundle> all = load_scenes(scenes_dir);
    if (config.train_scene_count < 1 || config.train_scene_count >= static_cast<int>(all.size()))
        throw std::invalid_argument("ablate: train_scene_count must leave held-out scenes");
    std::vector<SceneBundle> train_scenes(all.begin(), all.begin() + config.train_scene_count);
    std::vector<SceneBundle> eval_scenes(all.begin() + config.train_scene_count, all.end());

    const std::vector<std::string> variants = {"full", "wo_dp", "wo_self", "wo_nbr"};
    const fs::path ckpt_dir = fs::path(config.out_dir) / "checkpoints";
    fs::create_directories(ckpt_dir);

    json variant_info;
    std::vector<EvalRow> rows;
    json timings;
    for (const std::string& variant : variants) {
        Stopwatch vwatch;
        const TrainConfig tcfg = apply_variant(config.train, variant);
        FitOptions opts;
        opts.checkpoint_path = (ckpt_dir / (variant + ".ckpt")).string();
        opts.loss_csv_path = (fs::path(config.out_dir) / (variant + "_loss.csv")).string();
        TrainState state = fit(train_scenes, tcfg, opts);

        auto perturbed = eval_model(state.model, eval_scenes, variant, true,
                                    config.eval.perturb_seeds, tcfg, config.eval.source_k);
        auto clean = eval_model(state.model, eval_scenes, variant, false, {}, tcfg,
                                config.eval.source_k);
        rows.insert(rows.end(), perturbed.begin(), perturbed.end());
        rows.insert(rows.end(), clean.begin(), clean.end());

        variant_info[variant] =
            json{{"checkpoint", fs::relative(opts.checkpoint_path, config.out_dir).string()},
                 {"checkpoint_sha256", sha256_file(opts.checkpoint_path)},
                 {"lambda_self", tcfg.weights.lambda_self},
                 {"lambda_nbr", tcfg.weights.lambda_nbr},
                 {"lambda_en", tcfg.weights.lambda_en},
                 {"lambda_tv", tcfg.weights.lambda_tv},
                 {"perturb_data", tcfg.perturb_data},
                 {"seed", tcfg.seed}};
        timings["train_" + variant] = vwatch.seconds();
        std::cerr << "ablate: " << variant << " perturbed PSNR "
                  << mean_psnr(rows, variant, "perturbed") << " clean PSNR "
                  << mean_psnr(rows, variant, "clean") << "\n";
    }

    const std::string csv_path = (fs::path(config.out_dir) / "ablation_table.csv").string();
    write_eval_csv(rows, csv_path);

    std::vector<std::string> groups = {"perturbed", "clean"};
    std::vector<BarSeries> series;
    const std::array<Color, 4> palette = {Color(0.25f, 0.45f, 0.8f), Color(0.85f, 0.45f, 0.2f),
                                          Color(0.3f, 0.65f, 0.3f), Color(0.6f, 0.3f, 0.6f)};
    json summary;
    for (size_t i = 0; i < variants.size(); ++i) {
        BarSeries s;
        s.label = variants[i];
        s.color = palette[i];
        for (const std::string& g : groups) s.values.push_back(mean_psnr(rows, variants[i], g));
        series.push_back(s);
        summary[variants[i]] = json{{"perturbed_psnr", mean_psnr(rows, variants[i], "perturbed")},
                                    {"clean_psnr", mean_psnr(rows, variants[i], "clean")}};
    }
    const std::string plot_path = (fs::path(config.out_dir) / "ablation_psnr.png").string();
    save_bar_chart(plot_path, "ABLATION MEAN PSNR DB", groups, series);

    json manifest;
    manifest["config"] = json::parse(pipeline_config_to_json(config));
    manifest["inputs"] = json{{"scenes_dir", scenes_dir}, {"scenes_sha256", sha256_dir(scenes_dir)}};
    manifest["variants"] = variant_info;
    manifest["summary"] = summary;
    manifest["artifacts"] =
        json{{"ablation_table", json{{"path", "ablation_table.csv"}, {"sha256", sha256_file(csv_path)}}},
             {"ablation_plot", json{{"path", "ablation_psnr.png"}, {"sha256", sha256_file(plot_path)}}}};
    write_manifest(config.out_dir, "ablate", manifest);
    timings["total"] = watch.seconds();
    write_timings(config.out_dir, "ablate", timings);
    return 0;
}

}  // namespace dn2n
