#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "dn2n/pipeline.hpp"
#include "test_util.hpp"

using namespace dn2n;
using namespace dn2n::testutil;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("dn2n_pipe_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

PipelineConfig tiny_pipeline_config(const std::string& out_dir) {
    PipelineConfig c;
    c.out_dir = out_dir;
    c.gen.scenes = 3;
    c.gen.views = 16;
    c.gen.image_size = 16;
    c.gen.gt_samples = 96;
    c.gen.seed = 5;
    c.train.total_steps = 3;
    c.train.rays_per_batch = 48;
    c.train.patch_size = 6;
    c.train.k_min = 6;
    c.train.k_max = 6;
    c.train.samples_per_ray = 8;
    c.train.variants = 1;
    c.train.log_every = 1;
    c.train.checkpoint_every = 0;
    c.train.model = tiny_model_config();
    c.train_scene_count = 2;
    c.eval.eval_scene_begin = 2;
    c.eval.eval_scene_end = 3;
    c.eval.perturb_seeds = {11, 12};
    c.eval.source_k = 8;
    return c;
}

}  // namespace

TEST_CASE("psnr: sentinel, logarithm arithmetic, and the naive oracle") {
    Image a(12, 12);
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] = static_cast<float>(i % 7) / 7.f;
    CHECK(psnr(a, a) == kPsnrSentinel);

    // a uniform offset of 0.1 gives MSE 0.01 -> 20 dB
    Image b = a;
    for (auto& v : b.data) v += 0.1f;
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-6));

    Rng rng(3);
    Image c = a;
    for (auto& v : c.data) v = static_cast<float>(rng.uniform());
    const double direct = 10.0 * std::log10(1.0 / mse(a, c));
    CHECK(psnr(a, c) == doctest::Approx(direct).epsilon(1e-9));

    CHECK_THROWS_AS(psnr(a, Image(12, 13)), std::invalid_argument);
}

TEST_CASE("unknown config fields are usage errors naming the field") {
    try {
        pipeline_config_from_json_text(R"({"gen": {"scenez": 3}})");
        FAIL("expected error");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("gen.scenez") != std::string::npos);
    }
    try {
        pipeline_config_from_json_text(R"({"outdir": "x"})");
        FAIL("expected error");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("outdir") != std::string::npos);
    }
    CHECK_THROWS_AS(pipeline_config_from_json_text(R"({"eval": {"conditions": ["bogus"]}})"),
                    std::invalid_argument);
    CHECK_THROWS_AS(pipeline_config_from_json_text(R"({"train_variant": "wo_everything"})"),
                    std::invalid_argument);
}

TEST_CASE("pipeline config round-trips through json") {
    const PipelineConfig base = tiny_pipeline_config("somewhere");
    const PipelineConfig again = pipeline_config_from_json_text(pipeline_config_to_json(base));
    CHECK(again.out_dir == base.out_dir);
    CHECK(again.gen.scenes == base.gen.scenes);
    CHECK(again.train.total_steps == base.train.total_steps);
    CHECK(again.eval.perturb_seeds == base.eval.perturb_seeds);
    CHECK(pipeline_config_to_json(again) == pipeline_config_to_json(base));
}

TEST_CASE("apply_variant changes exactly the ablated field") {
    const TrainConfig base = tiny_pipeline_config("x").train;
    const TrainConfig wo_dp = apply_variant(base, "wo_dp");
    CHECK(!wo_dp.perturb_data);
    CHECK(wo_dp.weights.lambda_self == base.weights.lambda_self);
    const TrainConfig wo_self = apply_variant(base, "wo_self");
    CHECK(wo_self.weights.lambda_self == 0.0);
    CHECK(wo_self.perturb_data);
    const TrainConfig wo_nbr = apply_variant(base, "wo_nbr");
    CHECK(wo_nbr.weights.lambda_nbr == 0.0);
    CHECK_THROWS_AS(apply_variant(base, "wo_everything"), std::invalid_argument);
}

TEST_CASE("camera path interpolates smoothly through valid poses") {
    const SceneBundle bundle = tiny_scene(9, 16, 16);
    const auto path = camera_path(bundle, 30);
    REQUIRE(path.size() == 30);
    for (const Pose& p : path) {
        CHECK_NOTHROW(p.validate());
        // stays near the capture ring and looks inward
        CHECK(p.center().norm() > 0.5);
        CHECK(p.center().norm() < 4.0);
        const Vec3 fwd = p.rotation.col(2);
        CHECK(fwd.dot(-p.center().normalized()) > 0.8);
    }
    // adjacent frames move by a bounded amount
    for (size_t i = 0; i + 1 < path.size(); ++i)
        CHECK((path[i].center() - path[i + 1].center()).norm() < 0.8);
}

TEST_CASE("cmd_gen is deterministic, idempotent per seed, and guarded by --force") {
    TempDir tmp;
    PipelineConfig config = tiny_pipeline_config((tmp.path / "run").string());
    REQUIRE(cmd_gen(config, false) == 0);
    const std::string manifest1 = slurp(tmp.path / "run" / "gen_manifest.json");

    // re-run without force fails
    CHECK_THROWS_AS(cmd_gen(config, false), std::runtime_error);

    REQUIRE(cmd_gen(config, true) == 0);
    const std::string manifest2 = slurp(tmp.path / "run" / "gen_manifest.json");
    CHECK(manifest1 == manifest2);

    // scene count on disk matches the config
    int dirs = 0;
    for (const auto& e : fs::directory_iterator(tmp.path / "run" / "scenes"))
        if (e.is_directory()) ++dirs;
    CHECK(dirs == config.gen.scenes);
}

TEST_CASE("cmd_train writes a checkpoint, loss csv, and deterministic manifest") {
    TempDir tmp;
    PipelineConfig config = tiny_pipeline_config((tmp.path / "run").string());
    REQUIRE(cmd_gen(config, false) == 0);
    REQUIRE(cmd_train(config, false) == 0);
    CHECK(fs::exists(tmp.path / "run" / "checkpoints" / "full.ckpt"));
    CHECK(fs::exists(tmp.path / "run" / "full_loss.csv"));
    const std::string manifest1 = slurp(tmp.path / "run" / "train_full_manifest.json");
    const std::string csv1 = slurp(tmp.path / "run" / "full_loss.csv");

    REQUIRE(cmd_train(config, false) == 0);
    CHECK(slurp(tmp.path / "run" / "train_full_manifest.json") == manifest1);
    CHECK(slurp(tmp.path / "run" / "full_loss.csv") == csv1);

    // resume continues from the checkpoint
    PipelineConfig longer = config;
    longer.train.total_steps = 5;
    REQUIRE(cmd_train(longer, true) == 0);
    const Checkpoint ckpt =
        load_checkpoint((tmp.path / "run" / "checkpoints" / "full.ckpt").string());
    CHECK(ckpt.state.step == 5);
}

TEST_CASE("cmd_edit fails before editing when the checkpoint is missing") {
    TempDir tmp;
    PipelineConfig config = tiny_pipeline_config((tmp.path / "run").string());
    config.edit.checkpoint = (tmp.path / "nope.ckpt").string();
    config.edit.scene_dir = (tmp.path / "run" / "scenes" / "scene_00").string();
    CHECK_THROWS_AS(cmd_edit(config, false), std::runtime_error);
    CHECK(!fs::exists(tmp.path / "run" / "edit_hue_shift"));
}

TEST_CASE("eval rows cover scenes x conditions x seeds and the csv is stable") {
    TempDir tmp;
    PipelineConfig config = tiny_pipeline_config((tmp.path / "run").string());
    REQUIRE(cmd_gen(config, false) == 0);
    REQUIRE(cmd_train(config, false) == 0);
    config.eval.scenes_dir = (fs::path(config.out_dir) / "scenes").string();
    config.eval.checkpoints["full"] = (fs::path(config.out_dir) / "checkpoints" / "full.ckpt").string();
    config.eval.conditions = {"clean", "perturbed", "wo_dp"};

    REQUIRE(cmd_eval(config) == 0);
    const std::string csv1 = slurp(fs::path(config.out_dir) / "eval_table.csv");

    // row count: 1 eval scene x (1 clean + 2 perturbed seeds) x 2 eval views; wo_dp absent
    int rows = 0;
    std::istringstream is(csv1);
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line))
        if (!line.empty()) ++rows;
    const SceneBundle scene2 = load_bundle((fs::path(config.out_dir) / "scenes" / "scene_02").string());
    const int expected = static_cast<int>(scene2.eval_views.size()) * (1 + 2);
    CHECK(rows == expected);

    REQUIRE(cmd_eval(config) == 0);
    CHECK(slurp(fs::path(config.out_dir) / "eval_table.csv") == csv1);

    const std::string manifest = slurp(fs::path(config.out_dir) / "eval_manifest.json");
    CHECK(manifest.find("wo_dp") != std::string::npos);   // listed as absent
}

TEST_CASE("directory lock refuses a second writer") {
    TempDir tmp;
    const std::string dir = (tmp.path / "locked").string();
    DirLock first(dir);
    CHECK_THROWS_AS(DirLock{dir}, std::runtime_error);
}
