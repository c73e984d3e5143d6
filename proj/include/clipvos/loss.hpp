#pragma once

#include <deque>

#include "data_types.hpp"

namespace clipvos {

inline double mask_area(const Tensor& m) {
    double a = 0.0;
    for (double v : m.data)
        if (v != 0.0) a += 1.0;
    return a;
}

// (y, x) centroid in pixel units, origin top-left; false if no foreground.
inline bool mask_centroid(const Tensor& m, double& cy, double& cx) {
    if (m.ndim() != 2) throw std::invalid_argument("mask_centroid: expects [H,W]");
    double sy = 0.0, sx = 0.0, cnt = 0.0;
    for (int y = 0; y < m.dim(0); ++y)
        for (int x = 0; x < m.dim(1); ++x)
            if (m.at(y, x) != 0.0) {
                sy += y;
                sx += x;
                cnt += 1.0;
            }
    if (cnt == 0.0) return false;
    cy = sy / cnt;
    cx = sx / cnt;
    return true;
}

inline int count_components(const Tensor& m, int connectivity = 4) {
    if (m.ndim() != 2) throw std::invalid_argument("count_components: expects [H,W]");
    if (connectivity != 4 && connectivity != 8)
        throw std::invalid_argument("count_components: connectivity must be 4 or 8");
    const int H = m.dim(0), W = m.dim(1);
    std::vector<char> seen((size_t)H * W, 0);
    int count = 0;
    const int dy4[] = {-1, 1, 0, 0}, dx4[] = {0, 0, -1, 1};
    const int dy8[] = {-1, -1, -1, 0, 0, 1, 1, 1}, dx8[] = {-1, 0, 1, -1, 1, -1, 0, 1};
    const int* dy = connectivity == 4 ? dy4 : dy8;
    const int* dx = connectivity == 4 ? dx4 : dx8;
    const int nn = connectivity;
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (m.at(y, x) == 0.0 || seen[(size_t)y * W + x]) continue;
            ++count;
            seen[(size_t)y * W + x] = 1;
            queue.push_back({y, x});
            while (!queue.empty()) {
                auto [cy, cx] = queue.front();
                queue.pop_front();
                for (int k = 0; k < nn; ++k) {
                    const int ny = cy + dy[k], nx = cx + dx[k];
                    if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
                    if (m.at(ny, nx) == 0.0 || seen[(size_t)ny * W + nx]) continue;
                    seen[(size_t)ny * W + nx] = 1;
                    queue.push_back({ny, nx});
                }
            }
        }
    return count;
}

struct ReweightingResult {
    std::vector<double> delta;
    std::vector<double> weights;
    double tau = 1.0;
    DeltaVariant variant = DeltaVariant::masked_area;
};

// Per-frame normalized change delta^t = c^t / (mean of c); c^1 = 0 (no
// predecessor); all-zero change degenerates to uniform delta = 1.
inline std::vector<double> compute_delta(const MaskSequence& gt, DeltaVariant variant,
                                         int cc_connectivity = 4) {
    const int T = gt.frames();
    if (T < 2) throw std::invalid_argument("compute_delta: needs >= 2 frames");
    std::vector<double> c((size_t)T, 0.0);
    switch (variant) {
        case DeltaVariant::masked_area: {
            double prev = mask_area(gt.frame(0));
            for (int t = 1; t < T; ++t) {
                const double cur = mask_area(gt.frame(t));
                c[(size_t)t] = std::fabs(cur - prev);
                prev = cur;
            }
            break;
        }
        case DeltaVariant::center_of_mass: {
            std::vector<double> cy((size_t)T), cx((size_t)T);
            std::vector<bool> ok((size_t)T);
            for (int t = 0; t < T; ++t) ok[(size_t)t] = mask_centroid(gt.frame(t), cy[(size_t)t], cx[(size_t)t]);
            for (int t = 1; t < T; ++t) {
                // empty foreground leaves the centroid undefined: that frame's
                // change and its successor's fall back to 0
                if (!ok[(size_t)t] || !ok[(size_t)t - 1]) {
                    c[(size_t)t] = 0.0;
                    continue;
                }
                const double dy = cy[(size_t)t] - cy[(size_t)t - 1];
                const double dx = cx[(size_t)t] - cx[(size_t)t - 1];
                c[(size_t)t] = std::sqrt(dy * dy + dx * dx);
            }
            break;
        }
        case DeltaVariant::connected_components: {
            int prev = count_components(gt.frame(0), cc_connectivity);
            for (int t = 1; t < T; ++t) {
                const int cur = count_components(gt.frame(t), cc_connectivity);
                c[(size_t)t] = std::fabs((double)(cur - prev));
                prev = cur;
            }
            break;
        }
    }
    double total = 0.0;
    for (double v : c) total += v;
    std::vector<double> delta((size_t)T, 1.0);
    if (total > 0.0) {
        const double mean = total / T;
        for (int t = 0; t < T; ++t) delta[(size_t)t] = c[(size_t)t] / mean;
    }
    return delta;
}

// w = L * softmax(delta / tau), max-subtracted.
inline std::vector<double> compute_weights(const std::vector<double>& delta, double tau, int L_vid) {
    if (tau <= 0.0) throw std::invalid_argument("compute_weights: tau must be positive");
    if ((int)delta.size() != L_vid)
        throw std::invalid_argument("compute_weights: delta length != L_vid");
    double mx = -1e300;
    for (double d : delta) mx = std::max(mx, d / tau);
    double z = 0.0;
    std::vector<double> w(delta.size());
    for (size_t t = 0; t < delta.size(); ++t) {
        w[t] = std::exp(delta[t] / tau - mx);
        z += w[t];
    }
    for (double& v : w) v = v / z * L_vid;
    return w;
}

inline ReweightingResult reweighting(const MaskSequence& gt, const ModelConfig& cfg) {
    ReweightingResult r;
    r.tau = cfg.tau;
    r.variant = cfg.delta_variant;
    r.delta = compute_delta(gt, cfg.delta_variant, cfg.cc_connectivity);
    r.weights = compute_weights(r.delta, cfg.tau, gt.frames());
    return r;
}

// Focal loss for one frame: mean over pixels of
// -balance_t * (1 - p_t)^gamma * log(p_t), p_t = prob of the true class.
inline ag::Var focal_loss_frame_var(const ag::Var& pred /*[H,W]*/, const Tensor& gt, double gamma,
                                    double balance, double eps = 1e-8) {
    if (!pred->value.same_shape(gt))
        throw std::invalid_argument("focal_loss_frame: pred/gt shape mismatch " +
                                    pred->value.shape_str() + " vs " + gt.shape_str());
    Tensor A = gt, B = gt, W = gt;
    for (size_t i = 0; i < gt.data.size(); ++i) {
        const double g = gt.data[i];
        A.data[i] = 2.0 * g - 1.0;                          // p_t = A*p + B
        B.data[i] = 1.0 - g;
        W.data[i] = g != 0.0 ? balance : 1.0 - balance;     // class-balance weight
    }
    ag::Var pt = ag::affine_const(pred, A, B);
    ag::Var focus = ag::pow_const(ag::affine_const(pt, Tensor::full(gt.shape, -1.0), Tensor::ones(gt.shape)), gamma);
    ag::Var nll = ag::scale(ag::log_clamped(pt, eps), -1.0);
    return ag::mean(ag::mul_const(ag::mul(focus, nll), W));
}

inline double focal_loss_frame(const Tensor& pred, const Tensor& gt, double gamma, double balance) {
    ag::NoGradGuard ng;
    return focal_loss_frame_var(ag::constant(pred), gt, gamma, balance)->value[0];
}

// DICE loss over a sequence: mean over frames of
// 1 - (2*sum(p*g) + eps) / (sum p + sum g + eps), eps = 1.
inline ag::Var dice_loss_var(const std::vector<ag::Var>& pred, const MaskSequence& gt,
                             double eps = 1.0) {
    if (pred.empty() || (int)pred.size() != gt.frames())
        throw std::invalid_argument("dice_loss: frame count mismatch");
    ag::Var acc;
    for (size_t t = 0; t < pred.size(); ++t) {
        Tensor g = gt.frame((int)t);
        if (!pred[t]->value.same_shape(g))
            throw std::invalid_argument("dice_loss: pred/gt shape mismatch at frame " + std::to_string(t));
        ag::Var num = ag::add_scalar(ag::scale(ag::sum(ag::mul_const(pred[t], g)), 2.0), eps);
        ag::Var den = ag::add_scalar(ag::sum(pred[t]), g.sum() + eps);
        ag::Var dice_t = ag::add_scalar(ag::scale(ag::div_scalar(num, den), -1.0), 1.0);
        acc = acc ? ag::add(acc, dice_t) : dice_t;
    }
    return ag::scale(acc, 1.0 / (double)pred.size());
}

inline double dice_loss(const MaskSequence& pred, const MaskSequence& gt, double eps = 1.0) {
    ag::NoGradGuard ng;
    std::vector<ag::Var> pv;
    for (int t = 0; t < pred.frames(); ++t) pv.push_back(ag::constant(pred.frame(t)));
    return dice_loss_var(pv, gt, eps)->value[0];
}

struct LossBreakdown {
    ag::Var total; // scalar graph node (training); value mirrored below
    double dice = 0.0;
    double focal_reweighted = 0.0;
    double total_value = 0.0;
    std::vector<double> per_frame_focal;
    ReweightingResult reweighting;
};

// Full-video objective: alpha1 * dice + alpha2 * reweighted focal. Weights come
// from the ground truth only and are applied as constants to the terms chosen
// by cfg.reweight_targets.
inline LossBreakdown total_loss_var(const std::vector<ag::Var>& pred, const MaskSequence& gt,
                                    const ModelConfig& cfg) {
    if (pred.empty() || (int)pred.size() != gt.frames())
        throw std::invalid_argument("total_loss: frame count mismatch");
    const int L = (int)pred.size();
    LossBreakdown out;
    out.reweighting = reweighting(gt, cfg);

    const bool rw_focal = cfg.reweight_targets == ReweightTargets::focal_only ||
                          cfg.reweight_targets == ReweightTargets::both;
    const bool rw_dice = cfg.reweight_targets == ReweightTargets::dice_only ||
                         cfg.reweight_targets == ReweightTargets::both;

    // focal: (1/L) * sum_t w^t * l^t
    ag::Var focal_acc;
    for (int t = 0; t < L; ++t) {
        ag::Var lt = focal_loss_frame_var(pred[(size_t)t], gt.frame(t), cfg.focal_gamma, cfg.focal_balance);
        out.per_frame_focal.push_back(lt->value[0]);
        const double w = rw_focal ? out.reweighting.weights[(size_t)t] : 1.0;
        ag::Var weighted = ag::scale(lt, w / (double)L);
        focal_acc = focal_acc ? ag::add(focal_acc, weighted) : weighted;
    }

    // dice: unweighted mean by default; reweighted per-frame when selected
    ag::Var dice_acc;
    for (int t = 0; t < L; ++t) {
        Tensor g = gt.frame(t);
        ag::Var num = ag::add_scalar(ag::scale(ag::sum(ag::mul_const(pred[(size_t)t], g)), 2.0), 1.0);
        ag::Var den = ag::add_scalar(ag::sum(pred[(size_t)t]), g.sum() + 1.0);
        ag::Var dice_t = ag::add_scalar(ag::scale(ag::div_scalar(num, den), -1.0), 1.0);
        const double w = rw_dice ? out.reweighting.weights[(size_t)t] : 1.0;
        ag::Var weighted = ag::scale(dice_t, w / (double)L);
        dice_acc = dice_acc ? ag::add(dice_acc, weighted) : weighted;
    }

    out.total = ag::add(ag::scale(dice_acc, cfg.alpha1), ag::scale(focal_acc, cfg.alpha2));
    out.dice = dice_acc->value[0];
    out.focal_reweighted = focal_acc->value[0];
    out.total_value = out.total->value[0];
    return out;
}

inline LossBreakdown total_loss(const MaskSequence& pred, const MaskSequence& gt,
                                const ModelConfig& cfg) {
    ag::NoGradGuard ng;
    std::vector<ag::Var> pv;
    for (int t = 0; t < pred.frames(); ++t) pv.push_back(ag::constant(pred.frame(t)));
    return total_loss_var(pv, gt, cfg);
}

} // namespace clipvos
