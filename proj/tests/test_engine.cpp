#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "clipvos/engine.hpp"
#include "clipvos/model.hpp"

using namespace clipvos;

namespace {

// tiny moving-disk scene shared by the training tests
std::vector<VideoRecord> tiny_dataset(int n_videos, int T = 4) {
    std::vector<VideoRecord> out;
    for (int i = 0; i < n_videos; ++i) {
        SceneScript s;
        s.seed = 100 + (std::uint64_t)i;
        s.resolution = 32;
        s.T = T;
        s.noise = 0.01;
        s.name = "tiny" + std::to_string(i);
        SceneObject o;
        o.shape = ShapeKind::disk;
        o.size_frac = 0.35;
        o.y0 = 0.5;
        o.x0 = 0.4 + 0.02 * i;
        o.vx = 1.0;
        s.objects.push_back(o);
        out.push_back(generate(s));
    }
    return out;
}

bool same_params(const ModelParams& a, const ModelParams& b, double tol = 0.0) {
    if (a.registry.size() != b.registry.size()) return false;
    for (size_t i = 0; i < a.registry.size(); ++i) {
        if (a.registry[i].first != b.registry[i].first) return false;
        const Tensor& x = a.registry[i].second->value;
        const Tensor& y = b.registry[i].second->value;
        if (x.shape != y.shape) return false;
        for (size_t j = 0; j < x.data.size(); ++j)
            if (std::fabs(x.data[j] - y.data[j]) > tol) return false;
    }
    return true;
}

} // namespace

TEST_CASE("clip windows partition every post-reference frame exactly once") {
    for (int T = 2; T <= 14; ++T) {
        for (int L = 1; L <= 4; ++L) {
            std::vector<ClipWindow> w = clip_windows(T, L);
            REQUIRE(w.front().begin == 1);
            REQUIRE(w.back().end == T);
            int covered = 0;
            for (size_t i = 0; i < w.size(); ++i) {
                REQUIRE(w[i].end > w[i].begin);
                REQUIRE(w[i].end - w[i].begin <= L);
                if (i > 0) REQUIRE(w[i].begin == w[i - 1].end);
                covered += w[i].end - w[i].begin;
            }
            REQUIRE(covered == T - 1);
            // only the final window may run short
            for (size_t i = 0; i + 1 < w.size(); ++i) REQUIRE(w[i].end - w[i].begin == L);
        }
    }
    REQUIRE(clip_windows(1, 2).empty());
    REQUIRE_THROWS_AS(clip_windows(0, 2), std::invalid_argument);
    REQUIRE_THROWS_AS(clip_windows(4, 0), std::invalid_argument);
}

TEST_CASE("run_object grows memory clip by clip up to the bank capacity") {
    ModelConfig cfg = tiny_config();
    cfg.video_length = 10;
    ModelParams mp = make_model(cfg, 3);
    std::vector<VideoRecord> data = tiny_dataset(1, 10);

    RunKnobs k;
    k.bank_capacity = 3;
    ObjectRun run = run_object(data[0].frames, data[0].gt_masks[0].frame(0), mp, cfg, k);
    // L=2 over 9 frames -> 5 clips; bank holds reference + 2
    REQUIRE(run.trace.clips.size() == 5);
    std::vector<int> seen;
    for (const auto& c : run.trace.clips) seen.push_back(c.memory_before);
    REQUIRE(seen == std::vector<int>{1, 2, 3, 3, 3});
    REQUIRE((int)run.probs.size() == 9);
    REQUIRE(run.bank.size() == 3);

    REQUIRE_THROWS_AS(
        run_object(data[0].frames, Tensor::zeros({32, 32}), mp, cfg, RunKnobs{}),
        std::invalid_argument);
}

TEST_CASE("repeated inference is bit-identical") {
    ModelConfig cfg = tiny_config();
    ModelParams mp = make_model(cfg, 5);
    std::vector<VideoRecord> data = tiny_dataset(1, 6);

    InferenceResult a = infer_video(data[0], mp, cfg);
    InferenceResult b = infer_video(data[0], mp, cfg);
    REQUIRE(a.per_object.size() == b.per_object.size());
    REQUIRE(a.per_object[0].masks.data == b.per_object[0].masks.data);
    REQUIRE(a.labels.masks.data == b.labels.masks.data);
}

TEST_CASE("inference keeps the reference frame and binarizes labels by id") {
    ModelConfig cfg = tiny_config();
    ModelParams mp = make_model(cfg, 5);
    std::vector<VideoRecord> data = tiny_dataset(1, 4);

    InferenceResult r = infer_video(data[0], mp, cfg);
    const MaskSequence& gt = data[0].gt_masks[0];
    // frame 0 of the track repeats the reference mask verbatim
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            REQUIRE(r.per_object[0].masks.at(0, y, x) == gt.masks.at(0, y, x));
    // merged labels match the per-object probabilities thresholded at 0.5
    for (int t = 1; t < 4; ++t)
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                const double p = r.per_object[0].masks.at(t, y, x);
                const double lab = r.labels.masks.at(t, y, x);
                REQUIRE(lab == (p > 0.5 ? 1.0 : 0.0));
            }
}

TEST_CASE("training zero steps returns the seed initialization untouched") {
    ModelConfig cfg = tiny_config();
    std::vector<VideoRecord> data = tiny_dataset(2);
    TrainOptions opt;
    opt.steps = 0;
    opt.seed = 9;
    TrainResult tr = train(data, cfg, opt);
    ModelParams fresh = make_model(cfg, 9);
    REQUIRE(same_params(tr.params, fresh));
    REQUIRE(tr.curve.empty());
}

TEST_CASE("training curves are reproducible for a fixed seed") {
    ModelConfig cfg = tiny_config();
    std::vector<VideoRecord> data = tiny_dataset(2);
    TrainOptions opt;
    opt.steps = 3;
    opt.seed = 4;
    TrainResult a = train(data, cfg, opt);
    TrainResult b = train(data, cfg, opt);
    REQUIRE(a.curve.size() == 3);
    for (size_t i = 0; i < a.curve.size(); ++i) {
        REQUIRE(a.curve[i].total == b.curve[i].total);
        REQUIRE(a.curve[i].dice == b.curve[i].dice);
    }
    REQUIRE(same_params(a.params, b.params));

    TrainOptions other = opt;
    other.seed = 5;
    TrainResult c = train(data, cfg, other);
    REQUIRE(a.curve[0].total != c.curve[0].total);
}

TEST_CASE("reweighting is inert while the scene holds still") {
    // static scene: uniform delta, so focal_only and none share every step
    SceneScript s;
    s.seed = 77;
    s.resolution = 32;
    s.T = 4;
    s.noise = 0.01;
    s.name = "still";
    SceneObject o;
    o.shape = ShapeKind::rect;
    o.size_frac = 0.4;
    s.objects.push_back(o);
    std::vector<VideoRecord> data = {generate(s)};

    ModelConfig cfg = tiny_config();
    cfg.reweight_targets = ReweightTargets::focal_only;
    TrainOptions opt;
    opt.steps = 3;
    opt.seed = 2;
    TrainResult a = train(data, cfg, opt);
    cfg.reweight_targets = ReweightTargets::none;
    TrainResult b = train(data, cfg, opt);
    for (size_t i = 0; i < a.curve.size(); ++i)
        REQUIRE(a.curve[i].total == Catch::Approx(b.curve[i].total).margin(1e-12));
}

TEST_CASE("batched steps average several sampled windows") {
    ModelConfig cfg = tiny_config();
    std::vector<VideoRecord> data = tiny_dataset(3);
    TrainOptions opt;
    opt.steps = 2;
    opt.videos_per_step = 3;
    opt.seed = 6;
    TrainResult tr = train(data, cfg, opt); // must run and stay finite
    REQUIRE(tr.curve.size() == 2);
    for (const auto& e : tr.curve) REQUIRE(std::isfinite(e.total));
}

TEST_CASE("AdamW decays matrices only and honors the backbone learning rate") {
    ModelConfig cfg;
    cfg.lr_main = 0.5;
    cfg.lr_backbone = 0.25;
    cfg.weight_decay = 0.1;

    ag::Var mat = ag::param(Tensor::ones({2, 2}));
    ag::Var bias = ag::param(Tensor::ones({2}));
    ag::Var bb = ag::param(Tensor::ones({2}));
    std::vector<std::pair<std::string, ag::Var>> reg = {
        {"match.s32.proj_q.w", mat}, {"match.s32.proj_q.b", bias}, {"backbone.stage0.b", bb}};
    AdamW opt(reg, cfg);

    // zero gradients: only decay moves values (adam term is 0/(0+eps))
    mat->grad = Tensor::zeros({2, 2});
    bias->grad = Tensor::zeros({2});
    bb->grad = Tensor::zeros({2});
    opt.step();
    REQUIRE(mat->value[0] == Catch::Approx(1.0 - 0.5 * 0.1 * 1.0).margin(1e-12));
    REQUIRE(bias->value[0] == 1.0); // no decay on biases
    REQUIRE(bb->value[0] == 1.0);

    // nonzero gradients: this is the optimizer's second step, so the moment
    // estimates carry one decayed zero from the step above; a parameter with
    // no accumulated gradient is skipped entirely, decay included
    ag::zero_grad({mat});
    bias->grad = Tensor::ones({2});
    bb->grad = Tensor::ones({2});
    opt.step();
    const double mhat = 0.1 / (1.0 - 0.9 * 0.9);
    const double vhat = 0.001 / (1.0 - 0.999 * 0.999);
    const double unit = mhat / (std::sqrt(vhat) + 1e-8);
    REQUIRE(bias->value[0] == Catch::Approx(1.0 - 0.5 * unit).margin(1e-9));
    REQUIRE(bb->value[0] == Catch::Approx(1.0 - 0.25 * unit).margin(1e-9));
    REQUIRE(mat->value[0] == Catch::Approx(1.0 - 0.5 * 0.1 * 1.0).margin(1e-12));

    // zero-filled gradients still move values through momentum
    const double keep = bias->value[0];
    bias->grad = Tensor::zeros({2});
    bb->grad = Tensor::zeros({2});
    opt.step();
    REQUIRE(mat->value[0] == Catch::Approx(1.0 - 0.5 * 0.1 * 1.0).margin(1e-12));
    REQUIRE(bias->value[0] != keep);
}

TEST_CASE("the step schedule decays tenfold at 40 and 80 percent") {
    REQUIRE(lr_scale_at(LrSchedule::constant, 450, 500) == 1.0);
    REQUIRE(lr_scale_at(LrSchedule::step, 0, 500) == 1.0);
    REQUIRE(lr_scale_at(LrSchedule::step, 199, 500) == 1.0);
    REQUIRE(lr_scale_at(LrSchedule::step, 200, 500) == Catch::Approx(0.1));
    REQUIRE(lr_scale_at(LrSchedule::step, 399, 500) == Catch::Approx(0.1));
    REQUIRE(lr_scale_at(LrSchedule::step, 400, 500) == Catch::Approx(0.01));
    REQUIRE(lr_scale_at(LrSchedule::step, 499, 500) == Catch::Approx(0.01));
}

TEST_CASE("checkpoints round-trip parameters and config exactly") {
    ModelConfig cfg = tiny_config();
    ModelParams mp = make_model(cfg, 11);
    // move the params off their init so the round trip is meaningful
    Rng rng(12);
    for (auto& [name, v] : mp.registry)
        for (double& x : v->value.data) x += rng.uniform(-0.01, 0.01);

    const std::string path =
        (std::filesystem::temp_directory_path() / "clipvos_ckpt_test.bin").string();
    save_checkpoint(mp, cfg, path);
    auto [lcfg, loaded] = load_checkpoint(path);
    REQUIRE(same_params(mp, loaded));
    REQUIRE(lcfg.hidden_dim == cfg.hidden_dim);
    REQUIRE(lcfg.bank_size == cfg.bank_size);
    REQUIRE(serialize_config(lcfg) == serialize_config(cfg));
    std::filesystem::remove(path);

    REQUIRE_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"), std::runtime_error);
}

TEST_CASE("corrupt checkpoints are rejected") {
    const std::string path =
        (std::filesystem::temp_directory_path() / "clipvos_ckpt_bad.bin").string();
    {
        std::ofstream f(path, std::ios::binary);
        f << "JUNKDATA";
    }
    REQUIRE_THROWS_AS(load_checkpoint(path), std::runtime_error);
    std::filesystem::remove(path);
}

TEST_CASE("longer inference clips resample the time embeddings") {
    ModelConfig cfg = tiny_config();
    ModelParams mp = make_model(cfg, 13);
    std::vector<VideoRecord> data = tiny_dataset(1, 6);
    InferOverrides ov;
    ov.clip_length = 4; // beyond the trained clip length of 2
    InferenceResult r = infer_video(data[0], mp, cfg, ov);
    REQUIRE(r.per_object[0].frames() == 6);
    for (double v : r.per_object[0].masks.data) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
    }
    // trace reflects the coarser clip partition: ceil(5/4) = 2 clips
    REQUIRE(r.trace.objects[0].clips.size() == 2);
}

TEST_CASE("evaluate_model and the copy baseline score the same videos") {
    ModelConfig cfg = tiny_config();
    ModelParams mp = make_model(cfg, 15);
    std::vector<VideoRecord> data = tiny_dataset(2, 4);
    MetricsReport model = evaluate_model(mp, cfg, data);
    MetricsReport base = copy_reference_baseline(data);
    REQUIRE(model.per_video.size() == 2);
    REQUIRE(base.per_video.size() == 2);
    REQUIRE(base.J > 0.0); // the disk drifts but overlaps its reference
    REQUIRE_THROWS_AS(evaluate_model(mp, cfg, {}), std::invalid_argument);
}

TEST_CASE("sweep plans validate values before any work happens") {
    ModelConfig base = tiny_config();
    REQUIRE_THROWS_AS(engdet::plan_sweep("rte", {"sideways"}, base), std::invalid_argument);
    REQUIRE_THROWS_AS(engdet::plan_sweep("tau", {"0"}, base), std::invalid_argument);
    REQUIRE_THROWS_AS(engdet::plan_sweep("tau", {"abc"}, base), std::invalid_argument);
    REQUIRE_THROWS_AS(engdet::plan_sweep("clip_length", {"1.5"}, base), std::invalid_argument);
    REQUIRE_THROWS_AS(engdet::plan_sweep("scales", {"4"}, base), std::invalid_argument);
    REQUIRE_THROWS_AS(engdet::plan_sweep("nonsense", {"1"}, base), std::invalid_argument);
    REQUIRE_THROWS_AS(engdet::plan_sweep("rte", {}, base), std::invalid_argument);

    std::vector<engdet::SweepCell> cells =
        engdet::plan_sweep("rte", {"on", "off", "additive"}, base);
    REQUIRE(cells.size() == 3);
    REQUIRE(cells[0].cfg.rte_mode == RteMode::multiplicative);
    REQUIRE(cells[1].cfg.rte_mode == RteMode::off);
    REQUIRE(cells[2].cfg.rte_mode == RteMode::additive);
    for (const auto& c : cells) REQUIRE(c.needs_training);

    std::vector<engdet::SweepCell> inf = engdet::plan_sweep("bank_size", {"7", "12"}, base);
    REQUIRE_FALSE(inf[0].needs_training);
    REQUIRE(inf[1].ov.bank_size == 12);
}

TEST_CASE("inference-axis sweeps reuse one model across cells") {
    ModelConfig cfg = tiny_config();
    std::vector<VideoRecord> data = tiny_dataset(2, 4);
    ModelParams shared = make_model(cfg, 17);

    SweepResult r = sweep("clip_length", {"1", "2", "3"}, cfg, data, data, 0, 17, nullptr, &shared);
    REQUIRE(r.axis == "clip_length");
    REQUIRE(r.rows.size() == 3);
    for (const auto& row : r.rows) {
        REQUIRE(row.J >= 0.0);
        REQUIRE(row.J <= 1.0);
    }
    // rendering includes the header and each value label
    std::string txt = render_sweep(r);
    REQUIRE(txt.find("clip_length") != std::string::npos);
    REQUIRE(txt.find("3") != std::string::npos);
    std::string kv = render_sweep_kv(r);
    REQUIRE(kv.find("clip_length.2.J =") != std::string::npos);
}

TEST_CASE("bank-size sweeps above the trained capacity interpolate the time table") {
    ModelConfig cfg = tiny_config(); // bank_size 3
    std::vector<VideoRecord> data = tiny_dataset(1, 10);
    ModelParams shared = make_model(cfg, 19);
    // raising the bank beyond the table length exercises select_rte interpolation
    SweepResult r = sweep("bank_size", {"3", "5"}, cfg, data, data, 0, 19, nullptr, &shared);
    REQUIRE(r.rows.size() == 2);
    for (const auto& row : r.rows) REQUIRE(std::isfinite(row.J));
}

TEST_CASE("gradcheck's probe scene treats every code path") {
    VideoRecord v = gradcheck_video(tiny_config(), 23);
    REQUIRE(v.frames.frames() >= 4);
    REQUIRE(v.gt_masks.size() == 1);
    REQUIRE(mask_area(v.gt_masks[0].frame(0)) > 0.0);
    std::vector<double> d = compute_delta(v.gt_masks[0], DeltaVariant::masked_area);
    bool nonuniform = false;
    for (double x : d) nonuniform |= x != 1.0;
    REQUIRE(nonuniform); // the mid-video shrink keeps reweighting active
}
