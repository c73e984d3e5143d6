#pragma once

#include <map>
#include <string>

#include "autograd.hpp"
#include "config.hpp"

namespace clipvos {

// Raw video frames, [T, 3, H, W], values in [0, 1].
struct FrameTensor {
    Tensor data;

    FrameTensor() = default;
    explicit FrameTensor(Tensor t) : data(std::move(t)) {
        if (data.ndim() != 4 || data.dim(1) != 3)
            throw std::invalid_argument("FrameTensor: expects [T,3,H,W]");
    }

    int frames() const { return data.ndim() == 4 ? data.dim(0) : 0; }
    int height() const { return data.dim(2); }
    int width() const { return data.dim(3); }

    void check(int deepest_stride) const {
        if (frames() < 1) throw std::invalid_argument("FrameTensor: T must be >= 1");
        if (height() % deepest_stride != 0)
            throw std::invalid_argument("FrameTensor: height " + std::to_string(height()) +
                                        " not divisible by stride " + std::to_string(deepest_stride));
        if (width() % deepest_stride != 0)
            throw std::invalid_argument("FrameTensor: width " + std::to_string(width()) +
                                        " not divisible by stride " + std::to_string(deepest_stride));
    }

    // one frame as [1,3,H,W]
    FrameTensor frame(int t) const { return slice(t, t + 1); }

    FrameTensor slice(int t0, int t1) const {
        if (t0 < 0 || t1 > frames() || t0 >= t1) throw std::invalid_argument("FrameTensor::slice: bad range");
        const int H = height(), W = width();
        Tensor out({t1 - t0, 3, H, W});
        const std::int64_t per = (std::int64_t)3 * H * W;
        std::copy_n(data.data.begin() + t0 * per, (t1 - t0) * per, out.data.begin());
        return FrameTensor(std::move(out));
    }
};

// Per-object mask track, [T, H, W]. Ground truth is binary; predictions are
// probabilities in [0, 1].
struct MaskSequence {
    Tensor masks;
    int object_id = 1;

    MaskSequence() = default;
    MaskSequence(Tensor m, int id) : masks(std::move(m)), object_id(id) {
        if (masks.ndim() != 3) throw std::invalid_argument("MaskSequence: expects [T,H,W]");
    }

    int frames() const { return masks.ndim() == 3 ? masks.dim(0) : 0; }
    int height() const { return masks.dim(1); }
    int width() const { return masks.dim(2); }

    Tensor frame(int t) const {
        const int H = height(), W = width();
        Tensor out({H, W});
        std::copy_n(masks.data.begin() + (std::int64_t)t * H * W, (std::int64_t)H * W, out.data.begin());
        return out;
    }

    void set_frame(int t, const Tensor& m) {
        const int H = height(), W = width();
        if (m.numel() != (std::int64_t)H * W) throw std::invalid_argument("set_frame: size mismatch");
        std::copy_n(m.data.begin(), (std::int64_t)H * W, masks.data.begin() + (std::int64_t)t * H * W);
    }

    bool is_binary() const {
        for (double v : masks.data)
            if (v != 0.0 && v != 1.0) return false;
        return true;
    }
};

// Features per scale, channel-last [T, h_s, w_s, c_s]; entries are autograd
// handles so one type serves both training and inference paths.
struct MultiScaleFeatures {
    std::vector<ag::Var> per_scale;
    std::vector<int> scale_strides;

    int num_scales() const { return (int)per_scale.size(); }

    void check_consistent() const {
        if (per_scale.size() != scale_strides.size())
            throw std::invalid_argument("MultiScaleFeatures: scale count mismatch");
    }
};

struct VideoRecord {
    std::string name;
    FrameTensor frames;
    std::vector<MaskSequence> gt_masks; // one per object
    double duration_sec = 0.0;
    double fps = 5.0;
    std::map<std::string, std::string> metadata;

    int num_objects() const { return (int)gt_masks.size(); }
};

} // namespace clipvos
