#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "dn2n/training.hpp"
#include "test_util.hpp"

using namespace dn2n;
using namespace dn2n::testutil;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_train_config() {
    TrainConfig c;
    c.total_steps = 4;
    c.rays_per_batch = 48;
    c.patch_size = 6;
    c.k_min = 6;
    c.k_max = 6;
    c.samples_per_ray = 8;
    c.nbr_gate_step = 2;
    c.variants = 1;
    c.log_every = 1;
    c.checkpoint_every = 0;
    c.seed = 77;
    c.model = tiny_model_config();
    return c;
}

TrainingPair tiny_pair(const SceneBundle& bundle, const TrainConfig& config) {
    return build_training_pairs({bundle}, config).front();
}

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("dn2n_train_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("config validation rejects bad geometry") {
    TrainConfig c = tiny_train_config();
    c.patch_size = 10;   // 100 > 48 rays
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = tiny_train_config();
    c.k_min = 4;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    CHECK_NOTHROW(tiny_train_config().validate());
}

TEST_CASE("step plans keep A and B disjoint and within the view budget") {
    const SceneBundle bundle = tiny_scene();
    const TrainConfig config = tiny_train_config();
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        const auto plan = make_step_plan(rng, bundle, config, i);
        REQUIRE(plan.has_value());
        CHECK(plan->sources_a.size() == static_cast<size_t>(plan->k));
        CHECK(plan->sources_b.size() == static_cast<size_t>(plan->k));
        for (int a : plan->sources_a) {
            CHECK(a != plan->target_view);
            for (int b : plan->sources_b) CHECK(a != b);
        }
        CHECK(plan->pixels.size() == static_cast<size_t>(config.rays_per_batch));
        CHECK(plan->nbr_active == (i >= config.gate()));
    }
}

TEST_CASE("scenes without enough views are skipped") {
    SceneGenConfig cfg;
    cfg.n_views = 8;   // train split of 7 < 2*6+1
    cfg.image_size = 16;
    cfg.gt_samples = 64;
    cfg.eval_every = 8;
    const SceneBundle bundle = generate_scene(cfg, 3);
    Rng rng(1);
    CHECK(!make_step_plan(rng, bundle, tiny_train_config(), 0).has_value());
}

TEST_CASE("train_step is deterministic from identical states") {
    const SceneBundle bundle = tiny_scene();
    const TrainConfig config = tiny_train_config();
    const TrainingPair pair = tiny_pair(bundle, config);

    TrainState s1(config.model);
    s1.rng = Rng(config.seed);
    TrainState s2 = s1;
    REQUIRE(train_step(s1, pair, config));
    REQUIRE(train_step(s2, pair, config));
    CHECK(s1.model.params().values() == s2.model.params().values());
    CHECK(s1.rng.serialize() == s2.rng.serialize());
}

TEST_CASE("fit with zero steps returns the initialized state unchanged") {
    const SceneBundle bundle = tiny_scene();
    TrainConfig config = tiny_train_config();
    config.total_steps = 0;
    const TrainState state = fit({bundle}, config);
    const Model<float> fresh(config.model);
    CHECK(state.step == 0);
    CHECK(state.model.params().values() == fresh.params().values());
}

TEST_CASE("checkpoint round-trip is bit-exact and resume matches an unbroken run") {
    const SceneBundle bundle = tiny_scene();
    TempDir tmp;
    TrainConfig config = tiny_train_config();
    config.total_steps = 6;
    config.checkpoint_every = 3;

    FitOptions straight;
    const TrainState full = fit({bundle}, config, straight);

    // interrupted at 3 steps, then resumed to 6
    TrainConfig half = config;
    half.total_steps = 3;
    FitOptions opts;
    opts.checkpoint_path = (tmp.path / "ckpt.bin").string();
    fit({bundle}, half, opts);

    const Checkpoint loaded = load_checkpoint(opts.checkpoint_path, config.model);
    CHECK(loaded.state.step == 3);

    FitOptions resume;
    resume.checkpoint_path = (tmp.path / "ckpt2.bin").string();
    resume.resume_from = opts.checkpoint_path;
    const TrainState resumed = fit({bundle}, config, resume);

    CHECK(resumed.step == full.step);
    CHECK(resumed.model.params().values() == full.model.params().values());
    CHECK(resumed.model.adam().m == full.model.adam().m);
    CHECK(resumed.rng.serialize() == full.rng.serialize());
}

TEST_CASE("checkpoints with a different model config are refused") {
    const SceneBundle bundle = tiny_scene();
    TempDir tmp;
    TrainConfig config = tiny_train_config();
    config.total_steps = 1;
    FitOptions opts;
    opts.checkpoint_path = (tmp.path / "ckpt.bin").string();
    fit({bundle}, config, opts);

    ModelConfig other = config.model;
    other.feat_dim += 4;
    CHECK_THROWS_AS(load_checkpoint(opts.checkpoint_path, other), std::runtime_error);
    CHECK_NOTHROW(load_checkpoint(opts.checkpoint_path, config.model));
}

TEST_CASE("a quick end-to-end gradient probe agrees with finite differences") {
    const SceneBundle bundle = tiny_scene();
    TrainConfig config = tiny_train_config();
    config.nbr_gate_step = 0;   // exercise the full loss immediately
    const TrainingPair pair = tiny_pair(bundle, config);

    Model<double> model(config.model);
    Rng rng(123);
    const auto plan = make_step_plan(rng, pair.clean, config, 1);
    REQUIRE(plan.has_value());

    // freeze the neighbor geometry at the base parameters
    StepResult<double> base = step_forward(model, pair, *plan, config, true);
    const NbrGeometry frozen = base.nbr;

    model.params().zero_grad();
    step_backward(model, base, *plan, config, 1);
    const auto analytic = model.params().grads();

    auto loss = [&]() {
        return step_forward(model, pair, *plan, config, false, &frozen).total;
    };
    Rng probes(9);
    const auto report = check_gradients(model.params(), loss, analytic, 25, probes);
    CHECK(report.checked >= 10);
    CHECK(report.failed == 0);
}

TEST_CASE("loss trend decreases over a smoke training run") {
    SceneGenConfig cfg;
    cfg.n_views = 14;
    cfg.image_size = 16;
    cfg.gt_samples = 128;
    cfg.eval_every = 14;   // all views train
    const SceneBundle bundle = generate_scene(cfg, 51);

    TrainConfig config = tiny_train_config();
    config.total_steps = 2000;
    config.rays_per_batch = 40;
    config.patch_size = 5;
    config.samples_per_ray = 8;
    config.log_every = 10;
    config.nbr_gate_step = 400;

    const TrainState state = fit({bundle}, config);
    REQUIRE(state.history.size() > 20);
    const size_t tenth = state.history.size() / 10;
    std::vector<double> first, last;
    for (size_t i = 0; i < tenth; ++i) first.push_back(state.history[i].total);
    for (size_t i = state.history.size() - tenth; i < state.history.size(); ++i)
        last.push_back(state.history[i].total);
    std::sort(first.begin(), first.end());
    std::sort(last.begin(), last.end());
    const double median_first = first[first.size() / 2];
    const double median_last = last[last.size() / 2];
    CHECK(median_last < median_first);
}

TEST_CASE("loss csv has one row per logging interval") {
    const SceneBundle bundle = tiny_scene();
    TempDir tmp;
    TrainConfig config = tiny_train_config();
    config.total_steps = 5;
    config.log_every = 2;
    FitOptions opts;
    opts.loss_csv_path = (tmp.path / "loss.csv").string();
    const TrainState state = fit({bundle}, config, opts);

    std::ifstream in(opts.loss_csv_path);
    std::string line;
    int rows = 0;
    std::getline(in, line);
    CHECK(line == "step,rec,self,nbr,en,tv,total");
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == static_cast<int>(state.history.size()));
    // steps 0,2,4 logged plus the final step 4 (already logged)
    CHECK(rows == 3);
}
