#pragma once

#include "backbone.hpp"
#include "matching.hpp"

namespace clipvos {

// Contextualized pyramid at output strides 32 -> 16 -> 8 (increasing
// resolution), channel width d everywhere.
struct FeaturePyramid {
    std::vector<ag::Var> per_scale; // coarse to fine
    std::vector<int> strides;       // {32, 16, 8}
};

struct PyramidParams {
    struct Level {
        ag::Var lat_w, lat_b; // 1x1 lateral conv, c_s -> d
        ag::Var out_w, out_b; // 3x3 output conv, d -> d
    };
    std::vector<Level> levels; // one per pyramid stride
    ag::Var scale_emb;         // [levels, d], added to cross-attention keys
};

inline PyramidParams make_pyramid(const ModelConfig& cfg, Rng& rng) {
    const int d = cfg.hidden_dim;
    // backbone channels at strides 32, 16, 8
    const std::vector<int> chans = {cfg.stage_channels[4], cfg.stage_channels[3], cfg.stage_channels[2]};
    PyramidParams p;
    for (int c : chans) {
        PyramidParams::Level lv;
        Tensor lw({1, 1, c, d});
        const double lstd = 1.0 / std::sqrt((double)c);
        for (double& v : lw.data) v = rng.gaussian(0.0, lstd);
        lv.lat_w = ag::param(std::move(lw));
        lv.lat_b = ag::param(Tensor::zeros({d}));
        Tensor ow({3, 3, d, d});
        const double ostd = std::sqrt(2.0 / (9.0 * d));
        for (double& v : ow.data) v = rng.gaussian(0.0, ostd);
        lv.out_w = ag::param(std::move(ow));
        lv.out_b = ag::param(Tensor::zeros({d}));
        p.levels.push_back(std::move(lv));
    }
    Tensor se({3, d});
    for (double& v : se.data) v = rng.gaussian(0.0, 1.0 / std::sqrt((double)d));
    p.scale_emb = ag::param(std::move(se));
    return p;
}

// Per level, coarse to fine: lateral conv of the frame features, plus the
// upsampled previous level (absent at the coarsest), plus the encoded mask
// features where the matching ran (absent at finer strides), then a 3x3 conv.
inline FeaturePyramid build_pyramid(const BackboneTaps& taps, const MultiScaleFeatures& enc,
                                    const PyramidParams& p, const ModelConfig& cfg) {
    const std::vector<int> strides = {32, 16, 8};
    FeaturePyramid pyr;
    pyr.strides = strides;
    ag::Var prev;
    for (size_t i = 0; i < strides.size(); ++i) {
        const int stride = strides[i];
        const ag::Var& x = taps.at_stride(stride);
        const int L = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
        ag::Var sum = ag::conv2d(x, p.levels[i].lat_w, p.levels[i].lat_b, 1, 0);
        if (prev) sum = ag::add(sum, ag::upsample_bilinear(prev, h, w));
        for (size_t s = 0; s < enc.per_scale.size(); ++s)
            if (enc.scale_strides[s] == stride) {
                const ag::Var& e = enc.per_scale[s];
                if (e->value.dim(0) != L || e->value.dim(1) != h || e->value.dim(2) != w)
                    throw std::invalid_argument("build_pyramid: encoded mask feature shape mismatch at stride " +
                                                std::to_string(stride));
                sum = ag::add(sum, e);
            }
        ag::Var y = ag::conv2d(sum, p.levels[i].out_w, p.levels[i].out_b, 1, 1);
        pyr.per_scale.push_back(y);
        prev = y;
    }
    return pyr;
}

// Standard multi-head attention over row matrices, biases included.
struct AttnParams {
    ag::Var wq, bq, wk, bk, wv, bv, wo, bo;
};

inline AttnParams make_attn(int d, Rng& rng) {
    auto mat = [&] {
        Tensor w({d, d});
        const double std = 1.0 / std::sqrt((double)d);
        for (double& v : w.data) v = rng.gaussian(0.0, std);
        return ag::param(std::move(w));
    };
    return {mat(), ag::param(Tensor::zeros({d})), mat(), ag::param(Tensor::zeros({d})),
            mat(), ag::param(Tensor::zeros({d})), mat(), ag::param(Tensor::zeros({d}))};
}

inline ag::Var mha_rows(const ag::Var& q_in, const ag::Var& k_in, const ag::Var& v_in,
                        const AttnParams& p, int heads) {
    using namespace ag;
    const int d = q_in->value.dim(1);
    const int dh = d / heads;
    Var Q = add_rowvec(matmul(q_in, p.wq), p.bq);
    Var K = add_rowvec(matmul(k_in, p.wk), p.bk);
    Var V = add_rowvec(matmul(v_in, p.wv), p.bv);
    std::vector<Var> outs;
    outs.reserve((size_t)heads);
    for (int h = 0; h < heads; ++h) {
        Var Qh = slice_cols(Q, h * dh, (h + 1) * dh);
        Var Kh = slice_cols(K, h * dh, (h + 1) * dh);
        Var Vh = slice_cols(V, h * dh, (h + 1) * dh);
        Var probs = softmax_rows(scale(matmul(Qh, transpose(Kh)), 1.0 / std::sqrt((double)dh)));
        outs.push_back(matmul(probs, Vh));
    }
    return add_rowvec(matmul(concat_cols(outs), p.wo), p.bo);
}

struct DecoderBlockParams {
    AttnParams self_attn;
    ag::Var ln1_g, ln1_b;
    AttnParams cross_attn;
    ag::Var ln2_g, ln2_b;
    ag::Var ffn1_w, ffn1_b, ffn2_w, ffn2_b;
    ag::Var ln3_g, ln3_b;
};

struct DecoderParams {
    std::vector<DecoderBlockParams> blocks;
};

inline DecoderParams make_decoder(const ModelConfig& cfg, Rng& rng) {
    const int d = cfg.hidden_dim;
    const int dff = d * cfg.ffn_ratio;
    DecoderParams p;
    for (int b = 0; b < cfg.decoder_blocks; ++b) {
        DecoderBlockParams blk;
        blk.self_attn = make_attn(d, rng);
        blk.ln1_g = ag::param(Tensor::ones({d}));
        blk.ln1_b = ag::param(Tensor::zeros({d}));
        blk.cross_attn = make_attn(d, rng);
        blk.ln2_g = ag::param(Tensor::ones({d}));
        blk.ln2_b = ag::param(Tensor::zeros({d}));
        Tensor w1({d, dff});
        const double s1 = std::sqrt(2.0 / (double)d);
        for (double& v : w1.data) v = rng.gaussian(0.0, s1);
        blk.ffn1_w = ag::param(std::move(w1));
        blk.ffn1_b = ag::param(Tensor::zeros({dff}));
        Tensor w2({dff, d});
        const double s2 = std::sqrt(2.0 / (double)dff);
        for (double& v : w2.data) v = rng.gaussian(0.0, s2);
        blk.ffn2_w = ag::param(std::move(w2));
        blk.ffn2_b = ag::param(Tensor::zeros({d}));
        blk.ln3_g = ag::param(Tensor::ones({d}));
        blk.ln3_b = ag::param(Tensor::zeros({d}));
        p.blocks.push_back(std::move(blk));
    }
    return p;
}

// Refines the per-frame time embeddings [l, d]: blocks walk the pyramid
// coarse->fine round-robin; each block runs temporal self-attention, a
// per-frame cross-attention against that frame's spatial tokens (keys carry
// positional + scale encodings), and a feed-forward, all post-normalized.
inline ag::Var space_time_decode(const FeaturePyramid& pyr, const ag::Var& time_emb,
                                 const PyramidParams& pp, const DecoderParams& dp,
                                 const ModelConfig& cfg, MatchContext ctx) {
    using namespace ag;
    if (pyr.per_scale.empty()) throw std::invalid_argument("space_time_decode: empty pyramid");
    const int l = time_emb->value.dim(0);
    const int d = cfg.hidden_dim;
    auto drop = [&](const Var& v) {
        if (ctx.training && cfg.dropout_rate > 0.0) {
            if (!ctx.rng) throw std::logic_error("space_time_decode: training mode needs an rng");
            return dropout(v, cfg.dropout_rate, *ctx.rng, true);
        }
        return v;
    };
    Var x = time_emb;
    const int S = (int)pyr.per_scale.size();
    for (int b = 0; b < cfg.decoder_blocks; ++b) {
        const DecoderBlockParams& blk = dp.blocks[(size_t)b];
        const int si = b % S;
        const ag::Var& feats = pyr.per_scale[(size_t)si];
        const int h = feats->value.dim(1), w = feats->value.dim(2);
        Tensor pe = positional_encoding_2d(h, w, d);

        Var sa = mha_rows(x, x, x, blk.self_attn, cfg.decoder_heads);
        x = layernorm_rows(add(x, drop(sa)), blk.ln1_g, blk.ln1_b);

        Var se_row = reshape(slice_rows(pp.scale_emb, si, si + 1), {d});
        std::vector<Var> rows;
        rows.reserve((size_t)l);
        for (int j = 0; j < l; ++j) {
            Var feat_j = reshape(slice_rows(feats, j, j + 1), {h * w, d});
            Var keys = add_rowvec(add_const(feat_j, pe), se_row);
            Var q_j = slice_rows(x, j, j + 1);
            rows.push_back(mha_rows(q_j, keys, feat_j, blk.cross_attn, cfg.decoder_heads));
        }
        Var ca = l == 1 ? rows[0] : concat_rows(rows);
        x = layernorm_rows(add(x, drop(ca)), blk.ln2_g, blk.ln2_b);

        Var f = add_rowvec(matmul(relu(add_rowvec(matmul(x, blk.ffn1_w), blk.ffn1_b)), blk.ffn2_w),
                           blk.ffn2_b);
        x = layernorm_rows(add(x, drop(f)), blk.ln3_g, blk.ln3_b);
    }
    return x;
}

// Per-frame probability maps at target resolution: scaled dot product of each
// refined time embedding with the finest pyramid features, sigmoid, bilinear
// upsample. The 1/sqrt(d) keeps initial logits O(1); unscaled products of a
// layernormed embedding (row norm ~ sqrt(d)) saturate the sigmoid so hard that
// training never escapes the all-background basin.
inline std::vector<ag::Var> predict_mask_probs(const ag::Var& t_hat, const FeaturePyramid& pyr,
                                               int target_h, int target_w) {
    using namespace ag;
    const ag::Var& finest = pyr.per_scale.back();
    const int l = t_hat->value.dim(0);
    const int h = finest->value.dim(1), w = finest->value.dim(2), d = finest->value.dim(3);
    if (finest->value.dim(0) != l)
        throw std::invalid_argument("predict_mask_probs: frame count mismatch");
    std::vector<Var> out;
    out.reserve((size_t)l);
    for (int j = 0; j < l; ++j) {
        Var feat_j = reshape(slice_rows(finest, j, j + 1), {h * w, d});
        Var logits = scale(matmul(slice_rows(t_hat, j, j + 1), transpose(feat_j)),
                           1.0 / std::sqrt((double)d)); // [1, h*w]
        Var probs = sigmoid(reshape(logits, {1, h, w, 1}));
        Var up = upsample_bilinear(probs, target_h, target_w);
        out.push_back(reshape(up, {target_h, target_w}));
    }
    return out;
}

inline MaskSequence predict_masks(const ag::Var& t_hat, const FeaturePyramid& pyr, int target_h,
                                  int target_w, int object_id = 1) {
    std::vector<ag::Var> probs = predict_mask_probs(t_hat, pyr, target_h, target_w);
    Tensor m({(int)probs.size(), target_h, target_w});
    for (size_t j = 0; j < probs.size(); ++j)
        std::copy(probs[j]->value.data.begin(), probs[j]->value.data.end(),
                  m.data.begin() + (std::int64_t)j * target_h * target_w);
    return MaskSequence(std::move(m), object_id);
}

} // namespace clipvos
