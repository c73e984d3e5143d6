#pragma once

#include <filesystem>
#include <iomanip>
#include <map>
#include <set>

#include "loss.hpp"
#include "mask_io.hpp"

namespace clipvos {

// Region similarity J = |intersection| / |union|; both empty -> 1.
inline double region_similarity(const Tensor& pred, const Tensor& gt) {
    if (!pred.same_shape(gt)) throw std::invalid_argument("region_similarity: shape mismatch");
    std::int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] != 0.0, g = gt.data[i] != 0.0;
        inter += p && g;
        uni += p || g;
    }
    return uni == 0 ? 1.0 : (double)inter / (double)uni;
}

namespace metdet {

// Foreground pixels with a 4-neighbor that is background or out of bounds.
inline std::vector<char> boundary(const Tensor& m) {
    const int H = m.dim(0), W = m.dim(1);
    std::vector<char> b((size_t)H * W, 0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (m.at(y, x) == 0.0) continue;
            const bool edge =
                y == 0 || y == H - 1 || x == 0 || x == W - 1 || m.at(y - 1, x) == 0.0 ||
                m.at(y + 1, x) == 0.0 || m.at(y, x - 1) == 0.0 || m.at(y, x + 1) == 0.0;
            if (edge) b[(size_t)y * W + x] = 1;
        }
    return b;
}

inline std::vector<char> dilate_disk(const std::vector<char>& src, int H, int W, int r) {
    std::vector<char> out((size_t)H * W, 0);
    std::vector<std::pair<int, int>> offsets;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
            if (dy * dy + dx * dx <= r * r) offsets.push_back({dy, dx});
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (!src[(size_t)y * W + x]) continue;
            for (auto [dy, dx] : offsets) {
                const int ny = y + dy, nx = x + dx;
                if (ny >= 0 && ny < H && nx >= 0 && nx < W) out[(size_t)ny * W + nx] = 1;
            }
        }
    return out;
}

} // namespace metdet

// DAVIS-style boundary F-measure: precision/recall of boundary pixels matched
// within a tolerance disk of radius ceil(0.008 * image diagonal).
inline double contour_accuracy(const Tensor& pred, const Tensor& gt) {
    if (!pred.same_shape(gt)) throw std::invalid_argument("contour_accuracy: shape mismatch");
    const int H = pred.dim(0), W = pred.dim(1);
    const auto pb = metdet::boundary(pred);
    const auto gb = metdet::boundary(gt);
    std::int64_t np = 0, ng = 0;
    for (char v : pb) np += v;
    for (char v : gb) ng += v;
    if (np == 0 && ng == 0) return 1.0;
    if (np == 0 || ng == 0) return 0.0;
    const int r = (int)std::ceil(0.008 * std::sqrt((double)H * H + (double)W * W));
    const auto pd = metdet::dilate_disk(pb, H, W, r);
    const auto gd = metdet::dilate_disk(gb, H, W, r);
    std::int64_t p_match = 0, g_match = 0;
    for (size_t i = 0; i < pb.size(); ++i) {
        if (pb[i] && gd[i]) ++p_match;
        if (gb[i] && pd[i]) ++g_match;
    }
    const double precision = (double)p_match / (double)np;
    const double recall = (double)g_match / (double)ng;
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

// Mean J over the last 25% of evaluated frames (at least one frame).
inline double j_tr(const std::vector<double>& per_frame_j,
                   JtrRounding rounding = JtrRounding::ceil_mode) {
    if (per_frame_j.empty()) throw std::invalid_argument("j_tr: empty per-frame scores");
    const double frac = 0.25 * (double)per_frame_j.size();
    int k = rounding == JtrRounding::ceil_mode ? (int)std::ceil(frac) : (int)std::floor(frac);
    k = std::max(1, std::min(k, (int)per_frame_j.size()));
    double s = 0.0;
    for (size_t i = per_frame_j.size() - (size_t)k; i < per_frame_j.size(); ++i) s += per_frame_j[i];
    return s / k;
}

struct SubsetFlags {
    bool classifiable = false;
    bool lng = false; // duration > 20 s (strict)
    bool sm = false;  // mean foreground fraction < 0.5%
    bool mi = false;  // more than one object
};

inline SubsetFlags subset_membership(double duration_sec, int object_count,
                                     double mean_area_fraction) {
    SubsetFlags f;
    f.classifiable = true;
    f.lng = duration_sec > 20.0;
    f.sm = mean_area_fraction < 0.005;
    f.mi = object_count > 1;
    return f;
}

// Classification straight from a record's ground truth: per-object foreground
// fraction averaged over frames where the object is present, then averaged
// over objects.
inline SubsetFlags subset_membership(const VideoRecord& video) {
    if (video.gt_masks.empty() || video.duration_sec <= 0.0) return SubsetFlags{}; // unclassifiable
    double mean_frac = 0.0;
    for (const auto& gm : video.gt_masks) {
        double frac_sum = 0.0;
        int present = 0;
        const double pixels = (double)gm.height() * gm.width();
        for (int t = 0; t < gm.frames(); ++t) {
            const double a = mask_area(gm.frame(t));
            if (a > 0.0) {
                frac_sum += a / pixels;
                ++present;
            }
        }
        mean_frac += present > 0 ? frac_sum / present : 0.0;
    }
    mean_frac /= (double)video.gt_masks.size();
    return subset_membership(video.duration_sec, (int)video.gt_masks.size(), mean_frac);
}

struct VideoScores {
    double J = 0.0, F = 0.0, J_tr = 0.0;
    SubsetFlags subsets;
};

struct MetricsReport {
    std::map<std::string, VideoScores> per_video;
    double J = 0.0, F = 0.0, J_tr = 0.0; // aggregates over all videos
    std::map<std::string, double> subset_jtr;  // ALL, LNG, SM, MI
    std::map<std::string, int> subset_counts;
};

namespace metdet {

inline Tensor binarize_id(const Tensor& labels, int object_id) {
    Tensor out(labels.shape);
    for (size_t i = 0; i < labels.data.size(); ++i)
        out.data[i] = labels.data[i] == (double)object_id ? 1.0 : 0.0;
    return out;
}

inline Tensor threshold(const Tensor& probs, double thr = 0.5) {
    Tensor out(probs.shape);
    for (size_t i = 0; i < probs.data.size(); ++i) out.data[i] = probs.data[i] >= thr ? 1.0 : 0.0;
    return out;
}

} // namespace metdet

// Scores one video from per-object prediction tracks (probabilities or binary).
// Frame 0 is the given reference and is excluded from evaluation.
inline VideoScores score_video(const VideoRecord& gt_video,
                               const std::vector<MaskSequence>& preds,
                               JtrRounding rounding = JtrRounding::ceil_mode) {
    if (preds.size() != gt_video.gt_masks.size())
        throw std::invalid_argument("score_video: object count mismatch");
    const int T = gt_video.gt_masks.empty() ? 0 : gt_video.gt_masks[0].frames();
    if (T < 2) throw std::invalid_argument("score_video: needs at least 2 frames");
    VideoScores vs;
    for (size_t o = 0; o < preds.size(); ++o) {
        std::vector<double> js;
        double fsum = 0.0;
        for (int t = 1; t < T; ++t) {
            Tensor p = metdet::threshold(preds[o].frame(t));
            Tensor g = gt_video.gt_masks[o].frame(t);
            js.push_back(region_similarity(p, g));
            fsum += contour_accuracy(p, g);
        }
        double jmean = 0.0;
        for (double v : js) jmean += v;
        jmean /= (double)js.size();
        vs.J += jmean;
        vs.F += fsum / (double)js.size();
        vs.J_tr += j_tr(js, rounding);
    }
    const double no = (double)preds.size();
    vs.J /= no;
    vs.F /= no;
    vs.J_tr /= no;
    vs.subsets = subset_membership(gt_video);
    return vs;
}

inline MetricsReport finalize_report(std::map<std::string, VideoScores> per_video) {
    MetricsReport r;
    r.per_video = std::move(per_video);
    const char* keys[] = {"ALL", "LNG", "SM", "MI"};
    std::map<std::string, double> sums;
    for (const char* k : keys) {
        r.subset_counts[k] = 0;
        sums[k] = 0.0;
    }
    for (const auto& [name, vs] : r.per_video) {
        r.J += vs.J;
        r.F += vs.F;
        r.J_tr += vs.J_tr;
        sums["ALL"] += vs.J_tr;
        r.subset_counts["ALL"] += 1;
        if (vs.subsets.classifiable) {
            if (vs.subsets.lng) {
                sums["LNG"] += vs.J_tr;
                r.subset_counts["LNG"] += 1;
            }
            if (vs.subsets.sm) {
                sums["SM"] += vs.J_tr;
                r.subset_counts["SM"] += 1;
            }
            if (vs.subsets.mi) {
                sums["MI"] += vs.J_tr;
                r.subset_counts["MI"] += 1;
            }
        }
    }
    const int n = (int)r.per_video.size();
    if (n > 0) {
        r.J /= n;
        r.F /= n;
        r.J_tr /= n;
    }
    for (const char* k : keys)
        r.subset_jtr[k] = r.subset_counts[k] > 0 ? sums[k] / r.subset_counts[k] : 0.0;
    return r;
}

inline std::string render_report(const MetricsReport& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << std::left << std::setw(18) << "video" << std::right << std::setw(8) << "J"
       << std::setw(8) << "F" << std::setw(8) << "J_tr" << "  subsets\n";
    for (const auto& [name, vs] : r.per_video) {
        os << std::left << std::setw(18) << name << std::right << std::setw(8) << vs.J
           << std::setw(8) << vs.F << std::setw(8) << vs.J_tr << "  ";
        if (!vs.subsets.classifiable) os << "unclassifiable";
        else {
            bool any = false;
            if (vs.subsets.lng) { os << "LNG"; any = true; }
            if (vs.subsets.sm) { os << (any ? ",SM" : "SM"); any = true; }
            if (vs.subsets.mi) { os << (any ? ",MI" : "MI"); any = true; }
            if (!any) os << "-";
        }
        os << "\n";
    }
    os << std::left << std::setw(18) << "MEAN" << std::right << std::setw(8) << r.J << std::setw(8)
       << r.F << std::setw(8) << r.J_tr << "\n\n";
    os << "J_tr by subset:\n";
    for (const auto& [k, v] : r.subset_jtr)
        os << "  " << std::left << std::setw(5) << k << std::right << std::setw(8) << v << "  (n="
           << r.subset_counts.at(k) << ")\n";
    return os.str();
}

inline std::string render_report_kv(const MetricsReport& r) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "aggregate.J = " << r.J << "\naggregate.F = " << r.F << "\naggregate.J_tr = " << r.J_tr
       << "\n";
    for (const auto& [k, v] : r.subset_jtr)
        os << "subset." << k << ".J_tr = " << v << "\nsubset." << k
           << ".count = " << r.subset_counts.at(k) << "\n";
    for (const auto& [name, vs] : r.per_video)
        os << "video." << name << ".J = " << vs.J << "\nvideo." << name << ".F = " << vs.F
           << "\nvideo." << name << ".J_tr = " << vs.J_tr << "\n";
    return os.str();
}

} // namespace clipvos
