#pragma once

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "data_types.hpp"
#include "loss.hpp"
#include "mask_io.hpp"

namespace clipvos {

enum class EventKind { split, shrink, grow, merge, occlude };

inline const char* event_kind_name(EventKind k) {
    switch (k) {
        case EventKind::split: return "split";
        case EventKind::shrink: return "shrink";
        case EventKind::grow: return "grow";
        case EventKind::merge: return "merge";
        case EventKind::occlude: return "occlude";
    }
    return "?";
}

struct TransformEvent {
    int frame = 1;        // 0-indexed; valid range [1, T-1] (never the reference frame)
    EventKind kind = EventKind::shrink;
    double magnitude = 0.5;
};

enum class ShapeKind { rect, disk, blob };

struct SceneObject {
    ShapeKind shape = ShapeKind::rect;
    double size_frac = 0.3;  // linear extent as a fraction of the resolution
    double y0 = 0.5, x0 = 0.5; // initial center, fractional coordinates
    double vy = 0.0, vx = 0.0; // velocity in px/frame
    double color[3] = {0.8, 0.3, 0.3};
    std::uint32_t blob_seed = 0;
    std::vector<TransformEvent> events;
};

struct SceneScript {
    std::uint64_t seed = 0;
    int resolution = 64;
    int T = 12;
    double noise = 0.02;
    std::string name;
    std::vector<SceneObject> objects;
};

namespace syndet {

constexpr double kFps = 5.0;
constexpr double kBackground = 0.35;
constexpr double kOccluderColor = 0.15;

// reflect p into [lo, hi] (triangle fold), keeps moving objects in frame
inline double reflect(double p, double lo, double hi) {
    const double span = hi - lo;
    if (span <= 0.0) return lo;
    double q = std::fmod(p - lo, 2.0 * span);
    if (q < 0.0) q += 2.0 * span;
    return q <= span ? lo + q : hi - (q - span);
}

// object state at one frame, after applying its event history
struct ObjectState {
    double cy = 0.0, cx = 0.0;
    double scale = 1.0;    // linear scale factor on size_frac
    bool split = false;
    double split_frac = 0.5;   // area fraction removed by the split event
    int split_age = 0;
    bool occluded = false;
    double occlude_frac = 0.0;
};

inline ObjectState object_state(const SceneObject& obj, int t, int resolution) {
    ObjectState st;
    const double margin = std::max(2.0, obj.size_frac * resolution * 0.75);
    st.cy = reflect(obj.y0 * resolution + obj.vy * t, margin, resolution - margin);
    st.cx = reflect(obj.x0 * resolution + obj.vx * t, margin, resolution - margin);
    for (const auto& ev : obj.events) {
        if (ev.frame > t) continue;
        switch (ev.kind) {
            case EventKind::shrink: st.scale *= std::sqrt(std::max(0.0, 1.0 - ev.magnitude)); break;
            case EventKind::grow: st.scale *= std::sqrt(1.0 + ev.magnitude); break;
            case EventKind::split:
                st.split = true;
                st.split_frac = ev.magnitude;
                st.split_age = t - ev.frame;
                break;
            case EventKind::merge: st.split = false; break;
            case EventKind::occlude:
                // transient: three frames starting at the event
                if (t - ev.frame <= 2) {
                    st.occluded = true;
                    st.occlude_frac = std::min(ev.magnitude, 0.9);
                }
                break;
        }
    }
    return st;
}

inline void paint_shape(Tensor& mask, ShapeKind shape, double cy, double cx, double extent,
                        std::uint32_t blob_seed) {
    const int H = mask.dim(0), W = mask.dim(1);
    auto paint_disk = [&](double dcy, double dcx, double r) {
        const int y0 = std::max(0, (int)std::floor(dcy - r)), y1 = std::min(H - 1, (int)std::ceil(dcy + r));
        const int x0 = std::max(0, (int)std::floor(dcx - r)), x1 = std::min(W - 1, (int)std::ceil(dcx + r));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                if ((y - dcy) * (y - dcy) + (x - dcx) * (x - dcx) <= r * r) mask.at(y, x) = 1.0;
    };
    switch (shape) {
        case ShapeKind::rect: {
            const double hh = extent / 2.0, hw = extent / 2.0;
            const int y0 = std::max(0, (int)std::lround(cy - hh)), y1 = std::min(H - 1, (int)std::lround(cy + hh) - 1);
            const int x0 = std::max(0, (int)std::lround(cx - hw)), x1 = std::min(W - 1, (int)std::lround(cx + hw) - 1);
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) mask.at(y, x) = 1.0;
            break;
        }
        case ShapeKind::disk:
            paint_disk(cy, cx, extent / 2.0);
            break;
        case ShapeKind::blob: {
            // three overlapping lobes; geometry fixed by blob_seed
            Rng brng(blob_seed + 1);
            const double r = extent / 2.0;
            paint_disk(cy, cx, r * 0.75);
            for (int i = 0; i < 2; ++i) {
                const double ang = brng.uniform(0.0, 2.0 * 3.14159265358979323846);
                paint_disk(cy + 0.45 * r * std::sin(ang), cx + 0.45 * r * std::cos(ang), r * 0.65);
            }
            break;
        }
    }
}

inline Tensor render_object_mask(const SceneObject& obj, const ObjectState& st, int resolution) {
    Tensor mask({resolution, resolution});
    const double extent = obj.size_frac * resolution * st.scale;
    if (!st.split) {
        paint_shape(mask, obj.shape, st.cy, st.cx, extent, obj.blob_seed);
    } else {
        // two fragments holding (1 - magnitude) of the pre-split area between them
        const double frag_extent = extent * std::sqrt((1.0 - st.split_frac) / 2.0);
        const double drift = std::min(st.split_age, 4) * 0.5;
        const double sep = frag_extent / 2.0 + 2.0 + drift;
        paint_shape(mask, obj.shape, st.cy, st.cx - sep, frag_extent, obj.blob_seed);
        paint_shape(mask, obj.shape, st.cy, st.cx + sep, frag_extent, obj.blob_seed + 7);
    }
    if (st.occluded) {
        // horizontal occluder band through the object's center
        int ylo = resolution, yhi = -1;
        for (int y = 0; y < resolution; ++y)
            for (int x = 0; x < resolution; ++x)
                if (mask.at(y, x) != 0.0) {
                    ylo = std::min(ylo, y);
                    yhi = std::max(yhi, y);
                }
        if (yhi >= ylo) {
            const int height = yhi - ylo + 1;
            const int band = std::max(1, (int)std::lround(height * st.occlude_frac));
            const int b0 = ylo + (height - band) / 2;
            for (int y = b0; y < b0 + band && y < resolution; ++y)
                for (int x = 0; x < resolution; ++x) mask.at(y, x) = 0.0;
        }
    }
    return mask;
}

} // namespace syndet

inline void validate_script(const SceneScript& s) {
    if (s.T < 2) throw std::invalid_argument("script: T must be >= 2");
    if (s.resolution < 32 || s.resolution % 32 != 0)
        throw std::invalid_argument("script: resolution must be a positive multiple of 32");
    if (s.objects.empty()) throw std::invalid_argument("script: needs at least one object");
    for (const auto& obj : s.objects) {
        bool split_open = false;
        for (const auto& ev : obj.events) {
            if (ev.frame < 1 || ev.frame > s.T - 1)
                throw std::invalid_argument("script: event frame " + std::to_string(ev.frame) +
                                            " outside [1, T-1]");
            if (ev.magnitude < 0.0 || (ev.kind != EventKind::grow && ev.magnitude >= 1.0))
                throw std::invalid_argument("script: event magnitude out of range");
            if (ev.kind == EventKind::split) split_open = true;
            if (ev.kind == EventKind::merge && !split_open)
                throw std::invalid_argument("script: merge without a preceding split");
        }
    }
}

// Renders the script: flat-color objects over a noisy background, exact masks.
// Bit-identical output for identical scripts.
inline VideoRecord generate(const SceneScript& script) {
    validate_script(script);
    const int R = script.resolution, T = script.T;
    const int K = (int)script.objects.size();
    Rng rng(script.seed);

    VideoRecord video;
    video.name = script.name.empty() ? ("video" + std::to_string(script.seed)) : script.name;
    video.fps = syndet::kFps;
    video.duration_sec = T / syndet::kFps;
    video.metadata["source"] = "synthetic";

    Tensor frames({T, 3, R, R});
    std::vector<Tensor> gt((size_t)K, Tensor({T, R, R}));
    std::vector<bool> seen_nonempty((size_t)K, false);
    std::vector<int> empty_since((size_t)K, -1);

    for (int t = 0; t < T; ++t) {
        // raw per-object masks, then visibility by z-order (later objects on top)
        std::vector<Tensor> raw;
        std::vector<syndet::ObjectState> states;
        for (int o = 0; o < K; ++o) {
            states.push_back(syndet::object_state(script.objects[(size_t)o], t, R));
            raw.push_back(syndet::render_object_mask(script.objects[(size_t)o], states.back(), R));
        }
        for (int o = 0; o < K; ++o)
            for (int j = o + 1; j < K; ++j)
                for (std::int64_t i = 0; i < raw[(size_t)o].numel(); ++i)
                    if (raw[(size_t)j][i] != 0.0) raw[(size_t)o][i] = 0.0;

        for (int y = 0; y < R; ++y)
            for (int x = 0; x < R; ++x)
                for (int c = 0; c < 3; ++c)
                    frames.data[(((size_t)t * 3 + c) * R + y) * R + x] = syndet::kBackground;
        for (int o = 0; o < K; ++o) {
            const auto& obj = script.objects[(size_t)o];
            for (int y = 0; y < R; ++y)
                for (int x = 0; x < R; ++x)
                    if (raw[(size_t)o].at(y, x) != 0.0)
                        for (int c = 0; c < 3; ++c)
                            frames.data[(((size_t)t * 3 + c) * R + y) * R + x] = obj.color[c];
            // paint transient occluders over the object's bounding box
            if (states[(size_t)o].occluded) {
                const Tensor full = syndet::render_object_mask(
                    obj, [&] { auto s2 = states[(size_t)o]; s2.occluded = false; return s2; }(), R);
                for (int y = 0; y < R; ++y)
                    for (int x = 0; x < R; ++x)
                        if (full.at(y, x) != 0.0 && raw[(size_t)o].at(y, x) == 0.0)
                            for (int c = 0; c < 3; ++c)
                                frames.data[(((size_t)t * 3 + c) * R + y) * R + x] = syndet::kOccluderColor;
            }
            for (int y = 0; y < R; ++y)
                for (int x = 0; x < R; ++x) gt[(size_t)o].at(t, y, x) = raw[(size_t)o].at(y, x);
            const double area = mask_area(raw[(size_t)o]);
            if (area > 0.0) {
                seen_nonempty[(size_t)o] = true;
                empty_since[(size_t)o] = -1;
            } else if (empty_since[(size_t)o] < 0)
                empty_since[(size_t)o] = t;
        }
        // additive pixel noise over everything
        if (script.noise > 0.0)
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < R; ++y)
                    for (int x = 0; x < R; ++x) {
                        double& v = frames.data[(((size_t)t * 3 + c) * R + y) * R + x];
                        v = std::min(1.0, std::max(0.0, v + rng.gaussian(0.0, script.noise)));
                    }
    }

    for (int o = 0; o < K; ++o) {
        if (!seen_nonempty[(size_t)o])
            throw std::invalid_argument("script: object " + std::to_string(o + 1) +
                                        " never visible");
        if (empty_since[(size_t)o] >= 0)
            throw std::invalid_argument("script: object " + std::to_string(o + 1) +
                                        " emptied permanently at frame " +
                                        std::to_string(empty_since[(size_t)o]));
    }

    video.frames = FrameTensor(std::move(frames));
    for (int o = 0; o < K; ++o) video.gt_masks.emplace_back(std::move(gt[(size_t)o]), o + 1);
    return video;
}

struct BenchmarkProfile {
    std::string name = "default";
    double event_prob = 0.75;    // chance an object carries a transformation event
    int base_T = 12;
    int lng_T = 128;             // > 100 frames -> duration > 20 s at 5 fps
    int lng_quota = 1;           // designated val videos per subset
    int sm_quota = 1;
    int mi_quota = 1;
    double noise = 0.02;
};

inline BenchmarkProfile benchmark_profile(const std::string& name) {
    BenchmarkProfile p;
    p.name = name;
    if (name == "default") return p;
    if (name == "transform_heavy") {
        p.event_prob = 1.0;
        return p;
    }
    throw std::invalid_argument("unknown benchmark profile: " + name);
}

struct BenchmarkSplits {
    std::vector<SceneScript> train;
    std::vector<SceneScript> val;
};

namespace syndet {

inline void pick_color(Rng& rng, double* color) {
    // bright, away from the gray background
    const int hue = rng.uniform_int(0, 5);
    const double hi = rng.uniform(0.75, 0.95), lo = rng.uniform(0.05, 0.25);
    const double mid = rng.uniform(0.2, 0.8);
    switch (hue) {
        case 0: color[0] = hi; color[1] = lo; color[2] = lo; break;
        case 1: color[0] = lo; color[1] = hi; color[2] = lo; break;
        case 2: color[0] = lo; color[1] = lo; color[2] = hi; break;
        case 3: color[0] = hi; color[1] = mid; color[2] = lo; break;
        case 4: color[0] = lo; color[1] = hi; color[2] = mid; break;
        default: color[0] = hi; color[1] = lo; color[2] = hi; break;
    }
}

inline SceneObject random_object(Rng& rng, int lane, int lanes, bool small_object, int T,
                                 double event_prob) {
    SceneObject obj;
    const int shape_pick = rng.uniform_int(0, 2);
    obj.shape = shape_pick == 0 ? ShapeKind::rect : shape_pick == 1 ? ShapeKind::disk : ShapeKind::blob;
    obj.size_frac = small_object ? rng.uniform(0.055, 0.07) : rng.uniform(0.24, 0.38);
    obj.y0 = (lane + 0.5) / lanes + rng.uniform(-0.04, 0.04);
    obj.x0 = rng.uniform(0.35, 0.65);
    obj.vy = rng.uniform(-0.6, 0.6);
    obj.vx = rng.uniform(-1.2, 1.2);
    obj.blob_seed = (std::uint32_t)rng.raw();
    pick_color(rng, obj.color);
    if (!small_object && rng.uniform() < event_prob) {
        const int f = rng.uniform_int(std::max(1, T / 4), std::max(2, (3 * T) / 4));
        const int kind = rng.uniform_int(0, 3);
        TransformEvent ev;
        ev.frame = f;
        switch (kind) {
            case 0:
                ev.kind = EventKind::split;
                ev.magnitude = rng.uniform(0.4, 0.55);
                obj.events.push_back(ev);
                if (rng.uniform() < 0.5 && f + 3 <= T - 1)
                    obj.events.push_back({f + 3, EventKind::merge, 0.0});
                break;
            case 1:
                ev.kind = EventKind::shrink;
                ev.magnitude = rng.uniform(0.4, 0.6);
                obj.events.push_back(ev);
                break;
            case 2:
                ev.kind = EventKind::grow;
                ev.magnitude = rng.uniform(0.5, 0.9);
                obj.events.push_back(ev);
                break;
            default:
                ev.kind = EventKind::occlude;
                ev.magnitude = rng.uniform(0.4, 0.7);
                obj.events.push_back(ev);
                break;
        }
    } else if (small_object && rng.uniform() < event_prob * 0.5) {
        // keep SM objects small: only transient occlusion
        const int f = rng.uniform_int(std::max(1, T / 4), std::max(2, (3 * T) / 4));
        obj.events.push_back({f, EventKind::occlude, rng.uniform(0.3, 0.5)});
    }
    return obj;
}

} // namespace syndet

// Deterministic train/val scripts; the val split carries designated LNG / SM /
// MI videos so the subset breakdowns have members.
inline BenchmarkSplits make_benchmark(std::uint64_t seed, int n_videos,
                                      const BenchmarkProfile& profile) {
    if (n_videos < 2) throw std::invalid_argument("make_benchmark: n_videos must be >= 2");
    const int n_val = std::max(1, (int)std::llround(0.2 * n_videos));
    const int n_train = n_videos - n_val;
    Rng rng(seed);
    BenchmarkSplits out;
    char buf[32];
    for (int i = 0; i < n_videos; ++i) {
        const bool is_val = i >= n_train;
        const int vi = i - n_train;
        SceneScript s;
        s.seed = rng.raw();
        s.resolution = 64;
        s.noise = profile.noise;
        s.T = profile.base_T;
        std::snprintf(buf, sizeof(buf), "%s%03d", is_val ? "val" : "train", is_val ? vi : i);
        s.name = buf;

        bool lng = false, sm = false, mi = false;
        if (is_val) {
            // designate subset members among the first val videos
            int q = 0;
            if (vi < (q += profile.lng_quota)) lng = true;
            else if (vi < (q += profile.sm_quota)) sm = true;
            else if (vi < (q += profile.mi_quota)) mi = true;
            if (n_val == 1) sm = false, mi = false; // single val video: keep it LNG only
        } else {
            // train draws the same modes so the val subsets are learnable
            const double r = rng.uniform();
            if (r < 0.20) mi = true;
            else if (r < 0.35) sm = true;
        }
        if (lng) s.T = profile.lng_T;
        const int K = mi ? 2 : 1;
        const int lanes = std::max(K, 1);
        for (int o = 0; o < K; ++o)
            s.objects.push_back(syndet::random_object(rng, o, lanes, sm, s.T, profile.event_prob));
        (is_val ? out.val : out.train).push_back(std::move(s));
    }
    return out;
}

struct BenchmarkVideos {
    std::vector<VideoRecord> train;
    std::vector<VideoRecord> val;
};

inline BenchmarkVideos generate_benchmark(std::uint64_t seed, int n_videos,
                                          const BenchmarkProfile& profile) {
    BenchmarkSplits scripts = make_benchmark(seed, n_videos, profile);
    BenchmarkVideos out;
    for (const SceneScript& s : scripts.train) out.train.push_back(generate(s));
    for (const SceneScript& s : scripts.val) out.val.push_back(generate(s));
    return out;
}

// ---- DAVIS-style tree I/O ----

inline std::string frame_name(int t) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05d.png", t);
    return buf;
}

// root/JPEGImages/<name>/NNNNN.png, root/Annotations/<name>/NNNNN.png,
// root/meta/<name>.json
inline void write_video_tree(const VideoRecord& v, const std::string& root) {
    namespace fs = std::filesystem;
    const fs::path img_dir = fs::path(root) / "JPEGImages" / v.name;
    const fs::path ann_dir = fs::path(root) / "Annotations" / v.name;
    const fs::path meta_dir = fs::path(root) / "meta";
    fs::create_directories(img_dir);
    fs::create_directories(ann_dir);
    fs::create_directories(meta_dir);
    const int T = v.frames.frames(), H = v.frames.height(), W = v.frames.width();
    for (int t = 0; t < T; ++t) {
        Tensor frame({3, H, W});
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    frame.data[((size_t)c * H + y) * W + x] =
                        v.frames.data.data[(((size_t)t * 3 + c) * H + y) * W + x];
        write_rgb_png((img_dir / frame_name(t)).string(), frame);
        Tensor labels({H, W});
        for (const auto& gm : v.gt_masks)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    if (gm.masks.at(t, y, x) != 0.0) labels.at(y, x) = (double)gm.object_id;
        write_indexed_png((ann_dir / frame_name(t)).string(), labels);
    }

    nlohmann::json meta;
    meta["name"] = v.name;
    meta["frames"] = T;
    meta["fps"] = v.fps;
    meta["duration_sec"] = v.duration_sec;
    meta["resolution"] = {H, W};
    nlohmann::json objs = nlohmann::json::array();
    for (const auto& gm : v.gt_masks) {
        double frac_sum = 0.0;
        int present = 0;
        for (int t = 0; t < T; ++t) {
            const double a = mask_area(gm.frame(t));
            if (a > 0.0) {
                frac_sum += a / ((double)H * W);
                ++present;
            }
        }
        objs.push_back({{"id", gm.object_id},
                        {"mean_area_fraction", present ? frac_sum / present : 0.0}});
    }
    meta["objects"] = objs;
    for (const auto& [k, val] : v.metadata) meta["tags"][k] = val;
    std::ofstream mf(meta_dir / (v.name + ".json"));
    if (!mf) throw std::runtime_error("cannot write metadata for " + v.name);
    mf << meta.dump(2) << "\n";
}

inline std::vector<std::string> list_videos(const std::string& root) {
    namespace fs = std::filesystem;
    std::vector<std::string> names;
    const fs::path ann = fs::path(root) / "Annotations";
    if (!fs::exists(ann)) throw std::runtime_error("no Annotations directory under " + root);
    for (const auto& e : fs::directory_iterator(ann))
        if (e.is_directory()) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    return names;
}

inline VideoRecord read_video_tree(const std::string& root, const std::string& name,
                                   bool with_frames = true) {
    namespace fs = std::filesystem;
    const fs::path ann_dir = fs::path(root) / "Annotations" / name;
    const fs::path img_dir = fs::path(root) / "JPEGImages" / name;
    if (!fs::exists(ann_dir)) throw std::runtime_error("no annotations for video " + name);
    std::vector<fs::path> ann_files;
    for (const auto& e : fs::directory_iterator(ann_dir))
        if (e.path().extension() == ".png") ann_files.push_back(e.path());
    std::sort(ann_files.begin(), ann_files.end());
    if (ann_files.empty()) throw std::runtime_error("zero-frame video: " + name);
    const int T = (int)ann_files.size();

    Tensor first = read_indexed_png(ann_files[0].string());
    const int H = first.dim(0), W = first.dim(1);
    // object ids present in the reference frame
    std::set<int> ids;
    for (double v : first.data)
        if (v != 0.0) ids.insert((int)v);
    if (ids.empty()) throw std::runtime_error("reference frame has no objects: " + name);

    VideoRecord video;
    video.name = name;
    for (int id : ids) video.gt_masks.emplace_back(Tensor({T, H, W}), id);
    for (int t = 0; t < T; ++t) {
        Tensor labels = t == 0 ? first : read_indexed_png(ann_files[(size_t)t].string());
        if (labels.dim(0) != H || labels.dim(1) != W)
            throw std::runtime_error("annotation size varies within video " + name);
        for (auto& gm : video.gt_masks)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    gm.masks.at(t, y, x) = labels.at(y, x) == (double)gm.object_id ? 1.0 : 0.0;
    }

    if (with_frames) {
        Tensor frames({T, 3, H, W});
        for (int t = 0; t < T; ++t) {
            const fs::path p = img_dir / frame_name(t);
            if (!fs::exists(p)) throw std::runtime_error("missing frame image " + p.string());
            Tensor img = read_rgb_png(p.string());
            if (img.dim(1) != H || img.dim(2) != W)
                throw std::runtime_error("frame size differs from annotations in " + name);
            std::copy(img.data.begin(), img.data.end(),
                      frames.data.begin() + (std::int64_t)t * 3 * H * W);
        }
        video.frames = FrameTensor(std::move(frames));
    }

    const fs::path meta_path = fs::path(root) / "meta" / (name + ".json");
    if (fs::exists(meta_path)) {
        std::ifstream mf(meta_path);
        nlohmann::json meta = nlohmann::json::parse(mf);
        video.fps = meta.value("fps", syndet::kFps);
        video.duration_sec = meta.value("duration_sec", 0.0);
        if (meta.contains("tags"))
            for (auto it = meta["tags"].begin(); it != meta["tags"].end(); ++it)
                video.metadata[it.key()] = it.value().is_string() ? it.value().get<std::string>()
                                                                  : it.value().dump();
    } else {
        video.fps = 0.0;
        video.duration_sec = 0.0; // unclassifiable for subset purposes
    }
    return video;
}

} // namespace clipvos
