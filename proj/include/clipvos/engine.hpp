#pragma once

#include <chrono>

#include "metrics.hpp"
#include "model.hpp"
#include "synthetic.hpp"

namespace clipvos {

// ---- clip windowing ----

// Half-open frame ranges covering {1 .. T-1}; frame 0 is the reference and is
// never part of a window.
struct ClipWindow {
    int begin = 0;
    int end = 0;
};

inline std::vector<ClipWindow> clip_windows(int total_frames, int clip_length) {
    if (total_frames < 1)
        throw std::invalid_argument("clip_windows: need at least the reference frame");
    if (clip_length < 1) throw std::invalid_argument("clip_windows: clip_length must be >= 1");
    std::vector<ClipWindow> out;
    for (int s = 1; s < total_frames; s += clip_length)
        out.push_back({s, std::min(total_frames, s + clip_length)});
    return out;
}

// ---- per-object forward pass ----

struct ClipRecord {
    int clip_index = 0;
    int memory_before = 0; // entries visible to this clip's matching
    double seconds = 0.0;
    std::vector<double> frame_j; // empty when no ground truth was supplied
};

struct ObjectTrace {
    int object_id = 0;
    std::vector<ClipRecord> clips;
};

struct InferenceTrace {
    std::vector<ObjectTrace> objects;
};

struct RunKnobs {
    int clip_length = 0;   // 0: use cfg.clip_length
    int bank_capacity = 0; // 0: use cfg.bank_size
    bool training = false; // dropout on; memory entries stay detached
    bool backprop_memory = false; // keep the graph through memory (gradient checks)
    Rng* rng = nullptr;           // dropout source when training
    const MaskSequence* gt = nullptr; // full-video track, enables per-frame J in the trace
    std::vector<AttentionMaps>* attn_dump = nullptr; // filled from the first clip only
};

struct ObjectRun {
    std::vector<ag::Var> probs; // one [H, W] probability map per frame 1..T-1
    ObjectTrace trace;
    MemoryBank bank; // final state, for debugging dumps
};

// Segment one object through the whole video: encode the reference into
// memory, then per clip match / decode / predict and push the clip's last
// predicted frame back into memory. Works under ambient autograd mode, so the
// same path serves training, inference and gradient checking.
inline ObjectRun run_object(const FrameTensor& frames, const Tensor& ref_mask,
                            const ModelParams& mp, const ModelConfig& cfg, const RunKnobs& k) {
    const int T = frames.frames();
    if (T < 2) throw std::invalid_argument("run_object: need the reference plus at least one frame");
    const int H = frames.height(), W = frames.width();
    if (ref_mask.ndim() != 2 || ref_mask.dim(0) != H || ref_mask.dim(1) != W)
        throw std::invalid_argument("run_object: reference mask shape mismatch");
    if (mask_area(ref_mask) == 0.0)
        throw std::invalid_argument("run_object: reference mask is empty");
    const int L = k.clip_length > 0 ? k.clip_length : cfg.clip_length;
    const int N = k.bank_capacity > 0 ? k.bank_capacity : cfg.bank_size;
    if (k.training && cfg.dropout_rate > 0.0 && !k.rng)
        throw std::logic_error("run_object: training mode needs an rng");

    MatchContext ctx;
    ctx.training = k.training;
    ctx.rng = k.rng;

    ObjectRun out;
    {
        std::optional<ag::NoGradGuard> detached;
        if (!k.backprop_memory) detached.emplace();
        BackboneTaps ref_taps = backbone_frames(frames.frame(0), mp.backbone, cfg);
        MultiScaleFeatures ref_mask_feats =
            select_scales(backbone_masks(ref_mask.reshaped({1, H, W}), mp.backbone, cfg), cfg);
        out.bank = MemoryBank::init_memory(select_scales(ref_taps, cfg), ref_mask_feats, N);
    }

    // time embeddings for the clip length actually in use
    ag::Var te_full = mp.time_emb;
    if (L > cfg.clip_length) te_full = ag::resample_rows(mp.time_emb, L);

    const std::vector<ClipWindow> windows = clip_windows(T, L);
    for (size_t ci = 0; ci < windows.size(); ++ci) {
        const ClipWindow w = windows[ci];
        const int l = w.end - w.begin;
        const auto t0 = std::chrono::steady_clock::now();

        ClipRecord rec;
        rec.clip_index = (int)ci;
        rec.memory_before = out.bank.size();

        BackboneTaps taps = backbone_frames(frames.slice(w.begin, w.end), mp.backbone, cfg);
        MultiScaleFeatures query = select_scales(taps, cfg);
        MultiScaleFeatures enc =
            match_clip(query, out.bank, mp.match, mp.rte, &mp.rte_bias, cfg, ctx,
                       ci == 0 ? k.attn_dump : nullptr);
        FeaturePyramid pyr = build_pyramid(taps, enc, mp.pyramid, cfg);
        ag::Var te = l == te_full->value.dim(0) ? te_full : ag::slice_rows(te_full, 0, l);
        ag::Var t_hat = space_time_decode(pyr, te, mp.pyramid, mp.decoder, cfg, ctx);
        std::vector<ag::Var> probs = predict_mask_probs(t_hat, pyr, H, W);

        // clip's last prediction becomes the next memory entry
        {
            std::optional<ag::NoGradGuard> detached;
            if (!k.backprop_memory) detached.emplace();
            MultiScaleFeatures last_feats;
            last_feats.scale_strides = query.scale_strides;
            for (const ag::Var& qv : query.per_scale)
                last_feats.per_scale.push_back(ag::slice_rows(qv, l - 1, l));
            MultiScaleFeatures last_mask_feats;
            if (k.backprop_memory) {
                ag::Var pred3 = ag::reshape(probs.back(), {1, H, W});
                last_mask_feats = select_scales(backbone_masks_var(pred3, mp.backbone), cfg);
            } else {
                Tensor pred = probs.back()->value.reshaped({1, H, W});
                last_mask_feats = select_scales(backbone_masks(pred, mp.backbone, cfg), cfg);
            }
            out.bank.update(std::move(last_feats), std::move(last_mask_feats), w.end - 1);
        }

        if (k.gt) {
            for (int j = 0; j < l; ++j)
                rec.frame_j.push_back(region_similarity(metdet::threshold(probs[(size_t)j]->value),
                                                        k.gt->frame(w.begin + j)));
        }
        for (auto& p : probs) out.probs.push_back(std::move(p));
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.trace.clips.push_back(std::move(rec));
    }
    return out;
}

// ---- whole-video inference ----

struct InferOverrides {
    int clip_length = 0; // 0: config value
    int bank_size = 0;   // 0: config value
    std::string attention_dump_path; // first clip of the first object
    std::string memory_dump_path;    // final bank of the first object
};

struct InferenceResult {
    std::vector<MaskSequence> per_object; // probability tracks, ids preserved
    MaskSequence labels;                  // merged integer labels (0 = background)
    InferenceTrace trace;
};

inline InferenceResult infer_video(const VideoRecord& video, const ModelParams& mp,
                                   const ModelConfig& cfg, const InferOverrides& ov = {}) {
    if (video.gt_masks.empty()) throw std::invalid_argument("infer_video: no reference masks");
    const int T = video.frames.frames();
    const int H = video.frames.height(), W = video.frames.width();

    ag::NoGradGuard ngg;
    InferenceResult res;
    for (size_t o = 0; o < video.gt_masks.size(); ++o) {
        const MaskSequence& gt = video.gt_masks[o];
        if (gt.frames() != T) throw std::invalid_argument("infer_video: track length mismatch");
        RunKnobs k;
        k.clip_length = ov.clip_length;
        k.bank_capacity = ov.bank_size;
        k.gt = &gt;
        std::vector<AttentionMaps> attn;
        const bool dump_here = o == 0 && !ov.attention_dump_path.empty();
        if (dump_here) k.attn_dump = &attn;

        ObjectRun run = run_object(video.frames, gt.frame(0), mp, cfg, k);
        run.trace.object_id = gt.object_id;

        Tensor track({T, H, W});
        MaskSequence seq(std::move(track), gt.object_id);
        seq.set_frame(0, gt.frame(0));
        for (int t = 1; t < T; ++t) seq.set_frame(t, run.probs[(size_t)(t - 1)]->value);

        if (dump_here) {
            std::ofstream f(ov.attention_dump_path);
            if (!f) throw std::runtime_error("cannot write " + ov.attention_dump_path);
            write_attention_dump(attn, f);
        }
        if (o == 0 && !ov.memory_dump_path.empty()) run.bank.dump_file(ov.memory_dump_path);

        res.per_object.push_back(std::move(seq));
        res.trace.objects.push_back(std::move(run.trace));
    }

    // merge: reference frame keeps the given labels, later frames take the
    // highest-probability object above threshold
    Tensor labels({T, H, W});
    for (size_t o = 0; o < res.per_object.size(); ++o) {
        const MaskSequence& seq = res.per_object[o];
        for (std::int64_t i = 0; i < (std::int64_t)H * W; ++i)
            if (seq.masks.data[(size_t)i] != 0.0) labels.data[(size_t)i] = (double)seq.object_id;
    }
    for (int t = 1; t < T; ++t)
        for (std::int64_t i = 0; i < (std::int64_t)H * W; ++i) {
            double best = 0.5;
            int id = 0;
            for (const MaskSequence& seq : res.per_object) {
                const double p = seq.masks.data[(size_t)((std::int64_t)t * H * W + i)];
                if (p > best) {
                    best = p;
                    id = seq.object_id;
                }
            }
            labels.data[(size_t)((std::int64_t)t * H * W + i)] = (double)id;
        }
    res.labels = MaskSequence(std::move(labels), 0);
    return res;
}

inline MetricsReport evaluate_model(const ModelParams& mp, const ModelConfig& cfg,
                                    const std::vector<VideoRecord>& videos,
                                    const InferOverrides& ov = {}) {
    if (videos.empty()) throw std::invalid_argument("evaluate_model: no videos");
    std::map<std::string, VideoScores> per;
    for (const auto& v : videos) {
        InferenceResult r = infer_video(v, mp, cfg, ov);
        per[v.name] = score_video(v, r.per_object, cfg.jtr_rounding);
    }
    return finalize_report(std::move(per));
}

// Trivial reference predictor: every frame repeats the frame-0 mask. The
// floor any trained model has to clear.
inline MetricsReport copy_reference_baseline(const std::vector<VideoRecord>& videos,
                                             JtrRounding rounding = JtrRounding::ceil_mode) {
    std::map<std::string, VideoScores> per;
    for (const auto& v : videos) {
        std::vector<MaskSequence> preds;
        for (const auto& gt : v.gt_masks) {
            Tensor m(gt.masks.shape);
            const Tensor ref = gt.frame(0);
            MaskSequence seq(std::move(m), gt.object_id);
            for (int t = 0; t < gt.frames(); ++t) seq.set_frame(t, ref);
            preds.push_back(std::move(seq));
        }
        per[v.name] = score_video(v, preds, rounding);
    }
    return finalize_report(std::move(per));
}

// ---- optimizer ----

// Decoupled weight decay; separate learning rates for the backbone group and
// everything else. Decay touches full matrices only: biases, layernorm
// gains, embeddings and the relative-time tables stay unregularized.
class AdamW {
public:
    AdamW(const std::vector<std::pair<std::string, ag::Var>>& registry, const ModelConfig& cfg)
        : cfg_(cfg) {
        for (const auto& [name, v] : registry) {
            if (!v->requires_grad) continue;
            Slot s;
            s.var = v;
            s.m = Tensor::zeros(v->value.shape);
            s.v = Tensor::zeros(v->value.shape);
            s.backbone = name.rfind("backbone.", 0) == 0;
            s.decay = wants_decay(name);
            slots_.push_back(std::move(s));
        }
    }

    void step(double lr_scale = 1.0) {
        ++t_;
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double bc1 = 1.0 - std::pow(b1, (double)t_);
        const double bc2 = 1.0 - std::pow(b2, (double)t_);
        for (Slot& s : slots_) {
            const Tensor& g = s.var->grad;
            if (g.shape != s.var->value.shape) continue; // untouched this step
            const double lr = (s.backbone ? cfg_.lr_backbone : cfg_.lr_main) * lr_scale;
            const double wd = s.decay ? cfg_.weight_decay : 0.0;
            for (size_t i = 0; i < g.data.size(); ++i) {
                s.m.data[i] = b1 * s.m.data[i] + (1.0 - b1) * g.data[i];
                s.v.data[i] = b2 * s.v.data[i] + (1.0 - b2) * g.data[i] * g.data[i];
                const double mh = s.m.data[i] / bc1;
                const double vh = s.v.data[i] / bc2;
                s.var->value.data[i] -=
                    lr * (mh / (std::sqrt(vh) + eps) + wd * s.var->value.data[i]);
            }
        }
    }

    int steps_taken() const { return t_; }

private:
    struct Slot {
        ag::Var var;
        Tensor m, v;
        bool backbone = false;
        bool decay = false;
    };

    static bool wants_decay(const std::string& name) {
        auto ends_with = [&](const char* suf) {
            const size_t n = std::strlen(suf);
            return name.size() >= n && name.compare(name.size() - n, n, suf) == 0;
        };
        return ends_with(".w") || ends_with(".wq") || ends_with(".wk") || ends_with(".wv") ||
               ends_with(".wo");
    }

    ModelConfig cfg_;
    std::vector<Slot> slots_;
    int t_ = 0;
};

inline double lr_scale_at(LrSchedule sched, int step, int total_steps) {
    if (sched == LrSchedule::constant || total_steps <= 0) return 1.0;
    const double frac = (double)step / (double)total_steps;
    double s = 1.0;
    if (frac >= 0.4) s *= 0.1;
    if (frac >= 0.8) s *= 0.1;
    return s;
}

// ---- training ----

struct TrainLogEntry {
    int step = 0;
    double dice = 0.0;
    double focal_rw = 0.0;
    double total = 0.0;
    double max_w = 0.0;
};

struct TrainResult {
    ModelParams params;
    std::vector<TrainLogEntry> curve;
};

struct TrainOptions {
    int steps = 100;
    int videos_per_step = 1; // losses averaged over this many sampled windows
    std::uint64_t seed = 0;
    std::ostream* log = nullptr;
    int log_every = 1;
};

// One optimization step = videos_per_step sampled (video, object, window)
// triples, each a full clip-by-clip forward with detached memory, averaged
// into one combined objective over every predicted frame of the windows.
inline TrainResult train(const std::vector<VideoRecord>& dataset, const ModelConfig& cfg,
                         const TrainOptions& opt, ModelParams* warm_start = nullptr) {
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    for (const auto& v : dataset)
        if (v.gt_masks.empty())
            throw std::invalid_argument("train: video without ground truth: " + v.name);

    TrainResult out;
    out.params = warm_start ? std::move(*warm_start) : make_model(cfg, opt.seed);
    AdamW optimizer(out.params.registry, cfg);
    Rng rng(opt.seed * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull);

    std::vector<ag::Var> trainable;
    trainable.reserve(out.params.registry.size());
    for (auto& [n, v] : out.params.registry) trainable.push_back(v);

    const int B = std::max(1, opt.videos_per_step);
    for (int step = 0; step < opt.steps; ++step) {
        ag::Var batch_total;
        double dice = 0.0, focal_rw = 0.0, total = 0.0, max_w = 0.0;
        for (int b = 0; b < B; ++b) {
            int vi = 0, oi = 0, start = 0, Tw = 0;
            bool found = false;
            for (int attempt = 0; attempt < 64 && !found; ++attempt) {
                vi = rng.uniform_int(0, (int)dataset.size() - 1);
                const VideoRecord& v = dataset[(size_t)vi];
                oi = rng.uniform_int(0, (int)v.gt_masks.size() - 1);
                const int T = v.frames.frames();
                Tw = std::min(T, cfg.video_length);
                if (Tw < 2) continue;
                start = T == Tw ? 0 : rng.uniform_int(0, T - Tw);
                if (mask_area(v.gt_masks[(size_t)oi].frame(start)) > 0.0) found = true;
            }
            if (!found) throw std::runtime_error("train: no window with a visible reference object");

            const VideoRecord& v = dataset[(size_t)vi];
            const MaskSequence& gt_full = v.gt_masks[(size_t)oi];
            const int H = v.frames.height(), W = v.frames.width();
            FrameTensor window = v.frames.slice(start, start + Tw);

            Tensor tail({Tw - 1, H, W});
            std::copy_n(gt_full.masks.data.begin() + (std::int64_t)(start + 1) * H * W,
                        (std::int64_t)(Tw - 1) * H * W, tail.data.begin());
            MaskSequence gt_tail(std::move(tail), gt_full.object_id);

            RunKnobs k;
            k.training = true;
            k.rng = &rng;
            ObjectRun run = run_object(window, gt_full.frame(start), out.params, cfg, k);

            LossBreakdown lb = total_loss_var(run.probs, gt_tail, cfg);
            if (!std::isfinite(lb.total_value)) {
                std::ostringstream os;
                os << "train: non-finite loss at step " << step << " (dice=" << lb.dice
                   << " focal_rw=" << lb.focal_reweighted << ")";
                throw std::runtime_error(os.str());
            }
            ag::Var scaled = ag::scale(lb.total, 1.0 / B);
            batch_total = batch_total ? ag::add(batch_total, scaled) : scaled;
            dice += lb.dice / B;
            focal_rw += lb.focal_reweighted / B;
            total += lb.total_value / B;
            for (double wv : lb.reweighting.weights) max_w = std::max(max_w, wv);
        }

        ag::zero_grad(trainable);
        ag::backward(batch_total);
        optimizer.step(lr_scale_at(cfg.lr_schedule, step, opt.steps));

        out.curve.push_back({step, dice, focal_rw, total, max_w});
        if (opt.log && step % std::max(1, opt.log_every) == 0)
            (*opt.log) << "step=" << step << " dice=" << dice << " focal_rw=" << focal_rw
                       << " total=" << total << " max_w=" << max_w << "\n";
    }
    return out;
}

// ---- finite-difference gradient verification ----

struct GradcheckReport {
    int samples = 0;
    double max_rel_err = 0.0;
    std::string worst_param;
    int worst_index = -1;
    double rte_grad_max = 0.0;        // trainable run: must be nonzero
    double frozen_rte_grad_max = 0.0; // frozen run: must be exactly zero
    std::vector<std::pair<std::string, double>> group_max;

    bool pass(double tol = 1e-3) const { return samples > 0 && max_rel_err < tol; }
};

// Deterministic single-object scene for gradient checks: one moving disk with
// a mid-video shrink, so every path (matching, time embedding, reweighting)
// sees non-trivial inputs.
inline VideoRecord gradcheck_video(const ModelConfig& cfg, std::uint64_t seed) {
    SceneScript s;
    s.seed = seed;
    s.resolution = cfg.input_resolution;
    s.T = cfg.video_length;
    s.noise = 0.01;
    s.name = "gradcheck";
    SceneObject o;
    o.shape = ShapeKind::disk;
    o.size_frac = 0.3;
    o.y0 = 0.45;
    o.x0 = 0.4;
    o.vy = 0.2;
    o.vx = 0.5;
    o.color[0] = 0.85;
    o.color[1] = 0.35;
    o.color[2] = 0.25;
    if (s.T >= 3) o.events.push_back({s.T / 2, EventKind::shrink, 0.3});
    s.objects.push_back(o);
    return generate(s);
}

inline GradcheckReport gradcheck(const ModelConfig& cfg, std::uint64_t seed, int min_samples = 200,
                                 std::ostream* log = nullptr) {
    VideoRecord video = gradcheck_video(cfg, seed);
    const MaskSequence& gt = video.gt_masks.at(0);
    const int T = video.frames.frames();
    const int H = video.frames.height(), W = video.frames.width();

    Tensor tail({T - 1, H, W});
    std::copy_n(gt.masks.data.begin() + (std::int64_t)H * W, (std::int64_t)(T - 1) * H * W,
                tail.data.begin());
    const MaskSequence gt_tail(std::move(tail), gt.object_id);

    ModelParams params = make_model(cfg, seed + 1);
    // Nudge every parameter off the initialization point. Zero conv biases
    // plus zero mask backgrounds put many pre-activations exactly on the relu
    // kink, where the subgradient and a central difference legitimately
    // disagree; a generic point has no such ties.
    {
        Rng jitter(seed ^ 0x5bf03635u);
        for (auto& [n, v] : params.registry)
            for (double& x : v->value.data) x += jitter.uniform(-0.02, 0.02);
    }
    const Tensor ref = gt.frame(0);

    auto forward_loss = [&]() {
        RunKnobs k;
        k.training = false;     // dropout must stay off: finite differences need a
        k.backprop_memory = true; // deterministic function of the parameters
        ObjectRun run = run_object(video.frames, ref, params, cfg, k);
        return total_loss_var(run.probs, gt_tail, cfg);
    };

    std::vector<ag::Var> vars;
    for (auto& [n, v] : params.registry) vars.push_back(v);
    ag::zero_grad(vars);
    {
        LossBreakdown lb = forward_loss();
        ag::backward(lb.total);
    }
    std::map<std::string, Tensor> analytic;
    for (auto& [n, v] : params.registry)
        analytic[n] =
            v->grad.shape == v->value.shape ? v->grad : Tensor::zeros(v->value.shape);

    GradcheckReport rep;
    for (auto& [n, g] : analytic)
        if (n.rfind("rte.e", 0) == 0) rep.rte_grad_max = std::max(rep.rte_grad_max, g.abs_max());

    std::map<std::string, double> group_max;
    Rng pick(seed ^ 0xabcdef1234567ull);
    const double h = 1e-4;
    const int per = std::max(
        1, (min_samples + (int)params.registry.size() - 1) / (int)params.registry.size());
    for (auto& [name, v] : params.registry) {
        const std::int64_t n = v->value.numel();
        const int kk = (int)std::min<std::int64_t>(n, per);
        for (int s = 0; s < kk; ++s) {
            const std::int64_t idx = pick.uniform_int(0, (int)n - 1);
            const double saved = v->value.data[(size_t)idx];
            auto fd_at = [&](double hh) {
                ag::NoGradGuard g;
                v->value.data[(size_t)idx] = saved + hh;
                const double lp = forward_loss().total_value;
                v->value.data[(size_t)idx] = saved - hh;
                const double lm = forward_loss().total_value;
                v->value.data[(size_t)idx] = saved;
                return (lp - lm) / (2.0 * hh);
            };
            // Adaptive step: a relu kink inside the probe interval makes the
            // central difference measure something other than the derivative
            // at this point. Two agreeing estimates at different steps certify
            // a kink-free interval; on disagreement, shrink.
            double hh = h;
            double fd = fd_at(hh);
            for (int attempt = 0; attempt < 3; ++attempt) {
                const double fd2 = fd_at(hh / 4.0);
                const double spread = std::abs(fd - fd2);
                if (spread <= 3e-4 * std::max(std::max(std::abs(fd), std::abs(fd2)), 1e-7)) {
                    fd = fd2;
                    break;
                }
                hh /= 4.0;
                fd = fd2;
            }
            const double an = analytic[name].data[(size_t)idx];
            const double diff = std::abs(fd - an);
            // absolute agreement below the finite-difference noise floor counts
            // as exact; otherwise compare relative to the larger magnitude
            const double rel =
                diff <= 1e-7 ? 0.0 : diff / std::max(std::max(std::abs(fd), std::abs(an)), 1e-7);
            ++rep.samples;
            const std::string group = name.substr(0, name.find('.'));
            group_max[group] = std::max(group_max[group], rel);
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = name;
                rep.worst_index = (int)idx;
            }
            if (log && rel > 1e-3)
                (*log) << "gradcheck mismatch: " << name << "[" << idx << "] fd=" << fd
                       << " analytic=" << an << " rel=" << rel << "\n";
        }
    }
    rep.group_max.assign(group_max.begin(), group_max.end());

    // frozen table: the selected embedding is detached, so its gradient must
    // vanish identically
    {
        ModelConfig fcfg = cfg;
        fcfg.frozen_rte = true;
        ModelParams fparams = make_model(fcfg, seed + 1);
        std::vector<ag::Var> fvars;
        for (auto& [n, v] : fparams.registry) fvars.push_back(v);
        ag::zero_grad(fvars);
        RunKnobs k;
        k.backprop_memory = true;
        ObjectRun run = run_object(video.frames, ref, fparams, fcfg, k);
        LossBreakdown lb = total_loss_var(run.probs, gt_tail, fcfg);
        ag::backward(lb.total);
        for (auto& [n, v] : fparams.registry)
            if (n.rfind("rte.e", 0) == 0 && v->grad.shape == v->value.shape)
                rep.frozen_rte_grad_max = std::max(rep.frozen_rte_grad_max, v->grad.abs_max());
    }
    return rep;
}

// ---- ablation sweeps ----

struct SweepRow {
    std::string value;
    double J = 0.0, F = 0.0, J_tr = 0.0;
};

struct SweepResult {
    std::string axis;
    std::vector<SweepRow> rows;
};

namespace engdet {

struct SweepCell {
    std::string label;
    ModelConfig cfg;
    InferOverrides ov;
    bool needs_training = true;
};

inline int parse_int_strict(const std::string& s, const std::string& what) {
    size_t pos = 0;
    int v = 0;
    try {
        v = std::stoi(s, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("sweep: " + what + " expects an integer, got '" + s + "'");
    }
    if (pos != s.size())
        throw std::invalid_argument("sweep: " + what + " expects an integer, got '" + s + "'");
    return v;
}

inline double parse_double_strict(const std::string& s, const std::string& what) {
    size_t pos = 0;
    double v = 0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("sweep: " + what + " expects a number, got '" + s + "'");
    }
    if (pos != s.size())
        throw std::invalid_argument("sweep: " + what + " expects a number, got '" + s + "'");
    return v;
}

// Validates the whole plan up front: a bad value must fail before any
// training or inference happens.
inline std::vector<SweepCell> plan_sweep(const std::string& axis,
                                         const std::vector<std::string>& values,
                                         const ModelConfig& base) {
    if (values.empty()) throw std::invalid_argument("sweep: no values given");
    std::vector<SweepCell> cells;
    for (const std::string& value : values) {
        SweepCell c;
        c.label = value;
        c.cfg = base;
        if (axis == "clip_length") {
            const int v = parse_int_strict(value, axis);
            if (v < 1) throw std::invalid_argument("sweep: clip_length must be >= 1");
            c.ov.clip_length = v;
            c.needs_training = false;
        } else if (axis == "bank_size") {
            const int v = parse_int_strict(value, axis);
            if (v < 1) throw std::invalid_argument("sweep: bank_size must be >= 1");
            c.ov.bank_size = v;
            c.needs_training = false;
        } else if (axis == "rte") {
            if (value == "on") c.cfg.rte_mode = RteMode::multiplicative;
            else if (value == "off") c.cfg.rte_mode = RteMode::off;
            else if (value == "additive") c.cfg.rte_mode = RteMode::additive;
            else
                throw std::invalid_argument("sweep: rte value must be on|off|additive, got '" +
                                            value + "'");
        } else if (axis == "reweighting") {
            if (value == "on") c.cfg.reweight_targets = ReweightTargets::focal_only;
            else if (value == "off") c.cfg.reweight_targets = ReweightTargets::none;
            else
                throw std::invalid_argument("sweep: reweighting value must be on|off, got '" +
                                            value + "'");
        } else if (axis == "tau") {
            const double v = parse_double_strict(value, axis);
            if (!(v > 0.0)) throw std::invalid_argument("sweep: tau must be positive");
            c.cfg.tau = v;
        } else if (axis == "scales") {
            const int v = parse_int_strict(value, axis);
            if (v < 1 || v > 3)
                throw std::invalid_argument("sweep: scales must be 1, 2 or 3");
            c.cfg.num_scales = v;
        } else {
            throw std::invalid_argument("sweep: unknown axis '" + axis + "'");
        }
        const auto violations = validate_config(c.cfg);
        if (!violations.empty())
            throw std::invalid_argument("sweep: value '" + value +
                                        "' leaves an invalid config: " + violations.front());
        cells.push_back(std::move(c));
    }
    return cells;
}

} // namespace engdet

// Axes clip_length / bank_size are inference-time: one base model serves all
// cells (trained here, or supplied). Every other axis retrains per cell with
// the same seed.
inline SweepResult sweep(const std::string& axis, const std::vector<std::string>& values,
                         const ModelConfig& base, const std::vector<VideoRecord>& train_videos,
                         const std::vector<VideoRecord>& val_videos, int steps,
                         std::uint64_t seed, std::ostream* log = nullptr,
                         const ModelParams* shared_model = nullptr) {
    std::vector<engdet::SweepCell> cells = engdet::plan_sweep(axis, values, base);
    const bool inference_axis = !cells.front().needs_training;

    SweepResult out;
    out.axis = axis;

    ModelParams shared_trained;
    const ModelParams* shared = shared_model;
    if (inference_axis && !shared) {
        TrainOptions to;
        to.steps = steps;
        to.seed = seed;
        to.log = log;
        shared_trained = train(train_videos, base, to).params;
        shared = &shared_trained;
    }

    for (auto& c : cells) {
        if (log) (*log) << "sweep " << axis << " = " << c.label << "\n";
        MetricsReport r;
        if (c.needs_training) {
            TrainOptions to;
            to.steps = steps;
            to.seed = seed;
            to.log = nullptr;
            TrainResult tr = train(train_videos, c.cfg, to);
            r = evaluate_model(tr.params, c.cfg, val_videos, c.ov);
        } else {
            r = evaluate_model(*shared, c.cfg, val_videos, c.ov);
        }
        out.rows.push_back({c.label, r.J, r.F, r.J_tr});
        if (log)
            (*log) << "  J=" << r.J << " F=" << r.F << " J_tr=" << r.J_tr << "\n";
    }
    return out;
}

inline std::string render_sweep(const SweepResult& r) {
    std::ostringstream os;
    os << std::left << std::setw(14) << r.axis << std::right << std::setw(10) << "J"
       << std::setw(10) << "F" << std::setw(10) << "J_tr" << "\n";
    os << std::fixed << std::setprecision(4);
    for (const auto& row : r.rows)
        os << std::left << std::setw(14) << row.value << std::right << std::setw(10) << row.J
           << std::setw(10) << row.F << std::setw(10) << row.J_tr << "\n";
    return os.str();
}

inline std::string render_sweep_kv(const SweepResult& r) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "axis = " << r.axis << "\n";
    for (const auto& row : r.rows)
        os << r.axis << "." << row.value << ".J = " << row.J << "\n"
           << r.axis << "." << row.value << ".F = " << row.F << "\n"
           << r.axis << "." << row.value << ".J_tr = " << row.J_tr << "\n";
    return os.str();
}

} // namespace clipvos
