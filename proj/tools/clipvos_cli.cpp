// Command-line front end: data generation, training, inference, evaluation,
// gradient checking and ablation sweeps over the clip-memory segmenter.

#include <CLI11.hpp>

#include <clipvos/clipvos.hpp>

namespace {

using namespace clipvos;

// Config resolution order: built-in defaults, then --config file, then
// individual --set key=value overrides (parsed through the same reader so
// types and enums are validated identically).
struct ConfigArgs {
    std::string config_path;
    std::vector<std::string> sets;

    ModelConfig resolve() const {
        ModelConfig c = desk_config();
        if (!config_path.empty()) c = load_config_file(config_path);
        if (!sets.empty()) {
            std::string text = serialize_config(c);
            for (const std::string& s : sets) {
                const size_t eq = s.find('=');
                if (eq == std::string::npos)
                    throw CLI::ValidationError("--set", "expected key=value, got '" + s + "'");
                text += "\n" + s.substr(0, eq) + " = " + s.substr(eq + 1) + "\n";
            }
            c = parse_config(text);
        }
        const auto violations = validate_config(c);
        if (!violations.empty()) {
            std::string msg = "invalid configuration:";
            for (const auto& v : violations) msg += "\n  " + v;
            throw CLI::ValidationError("config", msg);
        }
        return c;
    }

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "configuration file (key = value lines)")
            ->check(CLI::ExistingFile);
        app->add_option("--set", sets, "override one key, e.g. --set bank_size=5 (repeatable)");
    }
};

std::vector<VideoRecord> load_split(const std::string& root, bool with_frames = true) {
    std::vector<VideoRecord> out;
    for (const std::string& name : list_videos(root)) out.push_back(read_video_tree(root, name, with_frames));
    if (out.empty()) throw std::runtime_error("no videos found under " + root);
    return out;
}

int cmd_gen_data(const std::string& out_dir, int n_videos, std::uint64_t seed,
                 const std::string& profile) {
    BenchmarkVideos splits = generate_benchmark(seed, n_videos, benchmark_profile(profile));
    const std::string train_root = out_dir + "/train";
    const std::string val_root = out_dir + "/val";
    for (const VideoRecord& v : splits.train) write_video_tree(v, train_root);
    for (const VideoRecord& v : splits.val) write_video_tree(v, val_root);
    std::cout << "wrote " << splits.train.size() << " training and " << splits.val.size()
              << " validation videos under " << out_dir << "\n";
    for (const VideoRecord& v : splits.val) {
        const SubsetFlags f = subset_membership(v);
        std::cout << "  val " << v.name << ": frames=" << v.frames.frames()
                  << " objects=" << v.gt_masks.size() << " subsets=" << (f.lng ? " LNG" : "")
                  << (f.sm ? " SM" : "") << (f.mi ? " MI" : "") << "\n";
    }
    return 0;
}

int cmd_train(const ConfigArgs& cargs, const std::string& data_root, int steps,
              std::uint64_t seed, const std::string& out_path, int log_every) {
    const ModelConfig cfg = cargs.resolve();
    std::vector<VideoRecord> videos = load_split(data_root + "/train");
    TrainOptions opt;
    opt.steps = steps;
    opt.seed = seed;
    opt.log = &std::cout;
    opt.log_every = log_every;
    TrainResult res = train(videos, cfg, opt);
    save_checkpoint(res.params, cfg, out_path);
    std::cout << "saved checkpoint (" << param_count(res.params) << " parameters) to " << out_path
              << "\n";
    return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& data_root,
              const std::string& out_dir, const InferOverrides& base_ov, bool print_trace) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    std::vector<VideoRecord> videos = load_split(data_root);
    namespace fs = std::filesystem;
    InferOverrides ov = base_ov;
    for (const VideoRecord& v : videos) {
        InferenceResult r = infer_video(v, ck.params, ck.cfg, ov);
        // debugging dumps describe the first video only
        ov.attention_dump_path.clear();
        ov.memory_dump_path.clear();
        const fs::path vdir = fs::path(out_dir) / v.name;
        fs::create_directories(vdir);
        for (int t = 0; t < r.labels.frames(); ++t)
            write_indexed_png((vdir / frame_name(t)).string(), r.labels.frame(t));
        std::cout << v.name << ": wrote " << r.labels.frames() << " label maps to " << vdir.string()
                  << "\n";
        if (print_trace)
            for (const ObjectTrace& ot : r.trace.objects)
                for (const ClipRecord& c : ot.clips) {
                    std::cout << "  object " << ot.object_id << " clip " << c.clip_index
                              << ": memory=" << c.memory_before << " time=" << std::fixed
                              << std::setprecision(3) << c.seconds << "s";
                    if (!c.frame_j.empty()) {
                        std::cout << " J=[";
                        for (size_t i = 0; i < c.frame_j.size(); ++i)
                            std::cout << (i ? " " : "") << std::setprecision(3) << c.frame_j[i];
                        std::cout << "]";
                    }
                    std::cout << "\n";
                }
    }
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_root,
             const InferOverrides& ov, const std::string& kv_path) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    std::vector<VideoRecord> videos = load_split(data_root);
    MetricsReport report = evaluate_model(ck.params, ck.cfg, videos, ov);
    std::cout << render_report(report);
    if (!kv_path.empty()) {
        std::ofstream f(kv_path);
        if (!f) throw std::runtime_error("cannot write " + kv_path);
        f << render_report_kv(report);
        std::cout << "wrote machine-readable report to " << kv_path << "\n";
    }
    return 0;
}

int cmd_gradcheck(const ConfigArgs& cargs, bool use_tiny, std::uint64_t seed, int samples) {
    ModelConfig cfg = use_tiny ? tiny_config() : cargs.resolve();
    GradcheckReport rep = gradcheck(cfg, seed, samples, &std::cout);
    std::cout << "gradcheck: " << rep.samples << " samples, max relative error "
              << std::scientific << std::setprecision(3) << rep.max_rel_err << " at "
              << rep.worst_param << "[" << rep.worst_index << "]\n";
    for (const auto& [group, err] : rep.group_max)
        std::cout << "  " << std::left << std::setw(10) << group << " " << std::scientific
                  << std::setprecision(3) << err << "\n";
    std::cout << "  rte gradient magnitude: " << rep.rte_grad_max
              << " (frozen run: " << rep.frozen_rte_grad_max << ")\n";
    const bool ok = rep.pass() && rep.rte_grad_max > 0.0 && rep.frozen_rte_grad_max == 0.0;
    std::cout << (ok ? "PASS" : "FAIL") << "\n";
    return ok ? 0 : 1;
}

int cmd_sweep(const ConfigArgs& cargs, const std::string& axis,
              const std::vector<std::string>& values, const std::string& data_root, int steps,
              std::uint64_t seed, const std::string& ckpt_path, const std::string& out_path,
              const std::string& kv_path) {
    ModelConfig base = cargs.resolve();
    std::vector<VideoRecord> train_videos = load_split(data_root + "/train");
    std::vector<VideoRecord> val_videos = load_split(data_root + "/val");

    Checkpoint ck;
    const ModelParams* shared = nullptr;
    if (!ckpt_path.empty()) {
        ck = load_checkpoint(ckpt_path);
        shared = &ck.params;
        base = ck.cfg; // the supplied model dictates the architecture
    }
    SweepResult res =
        sweep(axis, values, base, train_videos, val_videos, steps, seed, &std::cout, shared);
    const std::string table = render_sweep(res);
    std::cout << table;
    if (!out_path.empty()) {
        std::ofstream f(out_path);
        if (!f) throw std::runtime_error("cannot write " + out_path);
        f << table;
    }
    if (!kv_path.empty()) {
        std::ofstream f(kv_path);
        if (!f) throw std::runtime_error("cannot write " + kv_path);
        f << render_sweep_kv(res);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"clip-memory video object segmentation"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    app.add_option("--seed", seed, "global random seed")->capture_default_str();

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic benchmark tree");
    std::string gen_out = "data";
    int gen_n = 10;
    std::string gen_profile = "default";
    gen->add_option("--out", gen_out, "output directory")->capture_default_str();
    gen->add_option("--videos", gen_n, "total number of videos (80/20 train/val)")
        ->capture_default_str();
    gen->add_option("--profile", gen_profile, "default | transform_heavy")->capture_default_str();

    // train
    auto* tr = app.add_subcommand("train", "train a model on a generated tree");
    ConfigArgs tr_cfg;
    tr_cfg.attach(tr);
    std::string tr_data = "data";
    std::string tr_out = "model.ckpt";
    int tr_steps = 500;
    int tr_log_every = 10;
    tr->add_option("--data", tr_data, "dataset root (train/ subtree is used)")
        ->capture_default_str();
    tr->add_option("--steps", tr_steps, "optimization steps")->capture_default_str();
    tr->add_option("--out", tr_out, "checkpoint output path")->capture_default_str();
    tr->add_option("--log-every", tr_log_every, "loss log interval")->capture_default_str();

    // infer
    auto* in = app.add_subcommand("infer", "segment videos, write indexed label maps");
    std::string in_ckpt, in_data, in_out = "predictions";
    InferOverrides in_ov;
    bool in_trace = false;
    in->add_option("--checkpoint", in_ckpt, "trained checkpoint")->required();
    in->add_option("--data", in_data, "video tree root")->required();
    in->add_option("--out", in_out, "output directory")->capture_default_str();
    in->add_option("--clip-length", in_ov.clip_length, "inference clip length (0 = config)");
    in->add_option("--bank-size", in_ov.bank_size, "inference memory capacity (0 = config)");
    in->add_option("--dump-attention", in_ov.attention_dump_path,
                   "write first-clip attention maps of the first object here");
    in->add_option("--dump-memory", in_ov.memory_dump_path,
                   "write the first object's final memory state here");
    in->add_flag("--trace", in_trace, "print per-clip trace records");

    // eval
    auto* ev = app.add_subcommand("eval", "score predictions against ground truth");
    std::string ev_ckpt, ev_data, ev_kv;
    InferOverrides ev_ov;
    ev->add_option("--checkpoint", ev_ckpt, "trained checkpoint")->required();
    ev->add_option("--data", ev_data, "video tree root")->required();
    ev->add_option("--clip-length", ev_ov.clip_length, "inference clip length (0 = config)");
    ev->add_option("--bank-size", ev_ov.bank_size, "inference memory capacity (0 = config)");
    ev->add_option("--kv", ev_kv, "also write a key = value report here");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    ConfigArgs gc_cfg;
    gc_cfg.attach(gc);
    bool gc_tiny = false;
    int gc_samples = 200;
    gc->add_flag("--tiny", gc_tiny, "use the built-in tiny verification config");
    gc->add_option("--samples", gc_samples, "minimum sampled parameters")->capture_default_str();

    // sweep
    auto* sw = app.add_subcommand("sweep", "one-axis ablation study");
    ConfigArgs sw_cfg;
    sw_cfg.attach(sw);
    std::string sw_axis, sw_data = "data", sw_ckpt, sw_out, sw_kv;
    std::vector<std::string> sw_values;
    int sw_steps = 200;
    sw->add_option("--axis", sw_axis,
                   "clip_length | bank_size | rte | reweighting | tau | scales")
        ->required();
    sw->add_option("--values", sw_values, "axis values (space separated)")->required();
    sw->add_option("--data", sw_data, "dataset root with train/ and val/")->capture_default_str();
    sw->add_option("--steps", sw_steps, "training steps per trained cell")->capture_default_str();
    sw->add_option("--checkpoint", sw_ckpt,
                   "reuse this model for inference-time axes (its stored config is the base)");
    sw->add_option("--out", sw_out, "write the aligned table here");
    sw->add_option("--kv", sw_kv, "write a key = value table here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gen_out, gen_n, seed, gen_profile);
        if (tr->parsed()) return cmd_train(tr_cfg, tr_data, tr_steps, seed, tr_out, tr_log_every);
        if (in->parsed()) return cmd_infer(in_ckpt, in_data, in_out, in_ov, in_trace);
        if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_ov, ev_kv);
        if (gc->parsed()) return cmd_gradcheck(gc_cfg, gc_tiny, seed, gc_samples);
        if (sw->parsed())
            return cmd_sweep(sw_cfg, sw_axis, sw_values, sw_data, sw_steps, seed, sw_ckpt, sw_out,
                             sw_kv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
