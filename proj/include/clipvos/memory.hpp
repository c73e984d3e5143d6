#pragma once

#include <fstream>

#include "data_types.hpp"

namespace clipvos {

// FIFO over clip-end frames with the reference entry pinned at slot 0.
// Storage order is [reference, oldest .. newest]; the matcher consumes the
// recency-ordered view (newest first, reference last).
class MemoryBank {
public:
    struct Entry {
        MultiScaleFeatures frame_feats; // x^m per scale
        MultiScaleFeatures mask_feats;  // y^m per scale
        int timestamp = 0;
    };

    MemoryBank() = default;

    static MemoryBank init_memory(MultiScaleFeatures ref_frame_feats,
                                  MultiScaleFeatures ref_mask_feats, int capacity) {
        if (capacity < 1) throw std::invalid_argument("memory: capacity must be >= 1");
        if (ref_frame_feats.scale_strides != ref_mask_feats.scale_strides)
            throw std::invalid_argument("memory: frame/mask feature scales mismatch");
        MemoryBank b;
        b.capacity_ = capacity;
        b.entries_.push_back({std::move(ref_frame_feats), std::move(ref_mask_feats), 0});
        return b;
    }

    void update(MultiScaleFeatures frame_feats, MultiScaleFeatures mask_feats, int end_frame) {
        if (entries_.empty()) throw std::logic_error("memory: not initialized");
        if (frame_feats.scale_strides != entries_[0].frame_feats.scale_strides)
            throw std::invalid_argument("memory: update scale strides differ from bank");
        if (end_frame <= entries_.back().timestamp)
            throw std::invalid_argument("memory: timestamp " + std::to_string(end_frame) +
                                        " not greater than current max " +
                                        std::to_string(entries_.back().timestamp));
        if (capacity_ == 1) return; // pinned reference exhausts the capacity
        if ((int)entries_.size() == capacity_) entries_.erase(entries_.begin() + 1);
        entries_.push_back({std::move(frame_feats), std::move(mask_feats), end_frame});
    }

    int size() const { return (int)entries_.size(); }
    int capacity() const { return capacity_; }

    std::vector<int> timestamps() const {
        std::vector<int> ts;
        for (const auto& e : entries_) ts.push_back(e.timestamp);
        return ts;
    }

    const Entry& entry(int i) const { return entries_.at((size_t)i); }

    std::vector<int> scale_strides() const {
        return entries_.empty() ? std::vector<int>{} : entries_[0].frame_feats.scale_strides;
    }

    // Storage-order concatenation per scale: (X^M, Y^M, n).
    struct ReadView {
        std::vector<ag::Var> frame_feats; // per scale, [n, h, w, c]
        std::vector<ag::Var> mask_feats;
        std::vector<int> scale_strides;
        int n = 0;
    };

    ReadView read() const { return concat_entries(storage_order()); }

    // Recency order for the matcher: index 0 = nearest frame, last = reference.
    ReadView read_recency() const {
        std::vector<int> order;
        for (int i = (int)entries_.size() - 1; i >= 1; --i) order.push_back(i);
        order.push_back(0);
        return concat_entries(order);
    }

    std::vector<int> recency_timestamps() const {
        std::vector<int> ts;
        for (int i = (int)entries_.size() - 1; i >= 1; --i) ts.push_back(entries_[(size_t)i].timestamp);
        ts.push_back(entries_[0].timestamp);
        return ts;
    }

    void dump(std::ostream& os) const {
        os << "memory capacity=" << capacity_ << " size=" << entries_.size() << "\n";
        for (size_t i = 0; i < entries_.size(); ++i) {
            os << "  slot " << i << " timestamp=" << entries_[i].timestamp;
            for (size_t s = 0; s < entries_[i].frame_feats.per_scale.size(); ++s)
                os << " stride" << entries_[i].frame_feats.scale_strides[s] << "="
                   << entries_[i].frame_feats.per_scale[s]->value.shape_str();
            os << "\n";
        }
    }

    void dump_file(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw std::runtime_error("memory: cannot write dump file " + path);
        dump(f);
    }

private:
    std::vector<int> storage_order() const {
        std::vector<int> order((size_t)entries_.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = (int)i;
        return order;
    }

    ReadView concat_entries(const std::vector<int>& order) const {
        if (entries_.empty()) throw std::logic_error("memory: not initialized");
        ReadView v;
        v.scale_strides = entries_[0].frame_feats.scale_strides;
        v.n = (int)entries_.size();
        const size_t S = entries_[0].frame_feats.per_scale.size();
        for (size_t s = 0; s < S; ++s) {
            std::vector<ag::Var> fparts, mparts;
            for (int idx : order) {
                fparts.push_back(entries_[(size_t)idx].frame_feats.per_scale[s]);
                mparts.push_back(entries_[(size_t)idx].mask_feats.per_scale[s]);
            }
            v.frame_feats.push_back(fparts.size() == 1 ? fparts[0] : ag::concat_rows(fparts));
            v.mask_feats.push_back(mparts.size() == 1 ? mparts[0] : ag::concat_rows(mparts));
        }
        return v;
    }

    int capacity_ = 0;
    std::vector<Entry> entries_;
};

} // namespace clipvos
