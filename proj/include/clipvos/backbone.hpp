#pragma once

#include "data_types.hpp"

namespace clipvos {

// Five 3x3/stride-2 conv stages (strides 2,4,8,16,32 relative to the input),
// ReLU after each. Frames and masks share the stack; masks enter through a
// learned 1->3 channel adapter.
struct BackboneParams {
    struct Stage {
        ag::Var w; // [3,3,cin,cout]
        ag::Var b; // [cout]
    };
    std::vector<Stage> stages;
    ag::Var mask_adapter_w; // [3]
    ag::Var mask_adapter_b; // [3]
};

inline BackboneParams make_backbone(const ModelConfig& cfg, Rng& rng) {
    BackboneParams p;
    int cin = 3;
    for (int ch : cfg.stage_channels) {
        Tensor w({3, 3, cin, ch});
        const double std = std::sqrt(2.0 / (9.0 * cin));
        for (double& v : w.data) v = rng.gaussian(0.0, std);
        p.stages.push_back({ag::param(std::move(w)), ag::param(Tensor::zeros({ch}))});
        cin = ch;
    }
    Tensor aw({3});
    for (double& v : aw.data) v = rng.gaussian(0.0, 1.0);
    p.mask_adapter_w = ag::param(std::move(aw));
    p.mask_adapter_b = ag::param(Tensor::zeros({3}));
    return p;
}

// Activations at strides 8, 16, 32 (stages 3..5).
struct BackboneTaps {
    ag::Var s8, s16, s32;

    const ag::Var& at_stride(int s) const {
        switch (s) {
            case 8: return s8;
            case 16: return s16;
            case 32: return s32;
        }
        throw std::invalid_argument("BackboneTaps: no tap at stride " + std::to_string(s));
    }
};

namespace detail {

// [T,3,H,W] -> [T,H,W,3]
inline Tensor to_channel_last(const Tensor& x) {
    const int T = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor out({T, H, W, C});
    for (int t = 0; t < T; ++t)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx)
                    out.at(t, y, xx, c) = x.data[(((size_t)t * C + c) * H + y) * W + xx];
    return out;
}

inline BackboneTaps run_stack(const ag::Var& input, const BackboneParams& p) {
    BackboneTaps taps;
    ag::Var x = input;
    for (size_t i = 0; i < p.stages.size(); ++i) {
        x = ag::relu(ag::conv2d(x, p.stages[i].w, p.stages[i].b, /*stride=*/2, /*pad=*/1));
        if (i == 2) taps.s8 = x;
        if (i == 3) taps.s16 = x;
        if (i == 4) taps.s32 = x;
    }
    return taps;
}

} // namespace detail

inline BackboneTaps backbone_frames(const FrameTensor& frames, const BackboneParams& p,
                                    const ModelConfig& cfg) {
    frames.check(32);
    (void)cfg;
    return detail::run_stack(ag::constant(detail::to_channel_last(frames.data)), p);
}

// Mask pixels are lifted per channel c as m * adapter_w[c] + adapter_b[c],
// then run through the shared stack. Accepts an in-graph mask so training can
// optionally backprop through memory contents.
inline BackboneTaps backbone_masks_var(const ag::Var& masks /*[T,H,W]*/, const BackboneParams& p) {
    if (masks->value.ndim() != 3) throw std::invalid_argument("backbone_masks_var: expects [T,H,W]");
    const int T = masks->value.dim(0), H = masks->value.dim(1), W = masks->value.dim(2);
    if (H % 32 != 0) throw std::invalid_argument("backbone_masks_var: height not divisible by stride 32");
    if (W % 32 != 0) throw std::invalid_argument("backbone_masks_var: width not divisible by stride 32");
    ag::Var col = ag::reshape(masks, {T * H * W, 1});
    ag::Var lifted = ag::add_rowvec(ag::matmul(col, ag::reshape(p.mask_adapter_w, {1, 3})),
                                    p.mask_adapter_b);
    ag::Var input = ag::reshape(lifted, {T, H, W, 3});
    return detail::run_stack(input, p);
}

inline BackboneTaps backbone_masks(const Tensor& masks /*[T,H,W]*/, const BackboneParams& p,
                                   const ModelConfig& cfg) {
    (void)cfg;
    return backbone_masks_var(ag::constant(masks), p);
}

inline MultiScaleFeatures select_scales(const BackboneTaps& taps, const ModelConfig& cfg) {
    MultiScaleFeatures f;
    f.scale_strides = cfg.scale_strides();
    for (int s : f.scale_strides) f.per_scale.push_back(taps.at_stride(s));
    return f;
}

inline MultiScaleFeatures encode_frames(const FrameTensor& frames, const BackboneParams& p,
                                        const ModelConfig& cfg) {
    return select_scales(backbone_frames(frames, p, cfg), cfg);
}

inline MultiScaleFeatures encode_masks(const MaskSequence& masks, const BackboneParams& p,
                                       const ModelConfig& cfg) {
    return select_scales(backbone_masks(masks.masks, p, cfg), cfg);
}

} // namespace clipvos
