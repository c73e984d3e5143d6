#pragma once

#include <optional>

#include "memory.hpp"

namespace clipvos {

// Fixed 2-D sinusoidal positional encoding, [h*w, d]. First half of the
// channels encodes y, second half x; leftover channels stay zero.
inline Tensor positional_encoding_2d(int h, int w, int d) {
    Tensor pe({h * w, d});
    const int half = d / 2;
    const int pairs = half / 2;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int p = y * w + x;
            for (int i = 0; i < pairs; ++i) {
                const double freq = std::pow(10000.0, -2.0 * i / (double)half);
                pe.at(p, 2 * i) = std::sin(y * freq);
                pe.at(p, 2 * i + 1) = std::cos(y * freq);
                pe.at(p, half + 2 * i) = std::sin(x * freq);
                pe.at(p, half + 2 * i + 1) = std::cos(x * freq);
            }
        }
    return pe;
}

inline Tensor tile_rows(const Tensor& m, int times) {
    const int R = m.dim(0), C = m.dim(1);
    Tensor out({R * times, C});
    for (int t = 0; t < times; ++t)
        std::copy(m.data.begin(), m.data.end(), out.data.begin() + (std::int64_t)t * R * C);
    return out;
}

// Learnable per-recency modulation vectors {e_i of length i}, i = 1..N.
// The additive-bias ablation reuses the same table shape with zero init.
struct RteTable {
    std::vector<ag::Var> e; // e[i-1] has length i
    bool frozen = false;

    int capacity() const { return (int)e.size(); }
};

inline RteTable make_rte_table(int N, double init_value, bool frozen = false) {
    if (N < 1) throw std::invalid_argument("rte: table capacity must be >= 1");
    RteTable t;
    t.frozen = frozen;
    for (int i = 1; i <= N; ++i) t.e.push_back(ag::param(Tensor::full({i}, init_value)));
    return t;
}

// e_n for a bank of n entries; linear interpolation of e_N when n exceeds the
// table (endpoints preserved).
inline ag::Var select_rte(const RteTable& table, int n) {
    if (n < 1) throw std::invalid_argument("rte: empty memory (n = 0)");
    const int N = table.capacity();
    ag::Var base = n <= N ? table.e[(size_t)n - 1] : ag::resample_linear(table.e[(size_t)N - 1], n);
    return table.frozen ? ag::detach(base) : base;
}

// Full broadcast of e_n to the score shape [L*h*w, n*h*w]; reference form used
// by tests and exports. The compute path applies the same factors in place.
inline Tensor expand_rte(const Tensor& e_n, int L, int h, int w) {
    if (e_n.ndim() != 1) throw std::invalid_argument("expand_rte: e_n must be 1-d");
    const int n = (int)e_n.numel();
    if (n < 1 || L < 1 || h < 1 || w < 1) throw std::invalid_argument("expand_rte: sizes must be >= 1");
    const int block = h * w;
    Tensor E({L * block, n * block});
    for (int r = 0; r < L * block; ++r)
        for (int c = 0; c < n * block; ++c) E.at(r, c) = e_n[c / block];
    return E;
}

// Per-scale matching parameters: input projections to width d, pre-attention
// norms for q/k, per-head score/value maps packed as [d, d], output map, and
// the post-attention norm.
struct MatchScaleParams {
    ag::Var proj_q_w, proj_q_b;
    ag::Var proj_k_w, proj_k_b;
    ag::Var proj_v_w, proj_v_b;
    ag::Var ln_q_g, ln_q_b;
    ag::Var ln_k_g, ln_k_b;
    ag::Var wq, wk, wv, wo;
    ag::Var ln_out_g, ln_out_b;
};

inline MatchScaleParams make_match_scale(int in_channels, int d, Rng& rng) {
    auto mat = [&](int rows, int cols) {
        Tensor w({rows, cols});
        const double std = 1.0 / std::sqrt((double)rows);
        for (double& v : w.data) v = rng.gaussian(0.0, std);
        return ag::param(std::move(w));
    };
    MatchScaleParams p;
    p.proj_q_w = mat(in_channels, d);
    p.proj_q_b = ag::param(Tensor::zeros({d}));
    p.proj_k_w = mat(in_channels, d);
    p.proj_k_b = ag::param(Tensor::zeros({d}));
    p.proj_v_w = mat(in_channels, d);
    p.proj_v_b = ag::param(Tensor::zeros({d}));
    p.ln_q_g = ag::param(Tensor::ones({d}));
    p.ln_q_b = ag::param(Tensor::zeros({d}));
    p.ln_k_g = ag::param(Tensor::ones({d}));
    p.ln_k_b = ag::param(Tensor::zeros({d}));
    p.wq = mat(d, d);
    p.wk = mat(d, d);
    p.wv = mat(d, d);
    p.wo = mat(d, d);
    p.ln_out_g = ag::param(Tensor::ones({d}));
    p.ln_out_b = ag::param(Tensor::zeros({d}));
    return p;
}

// Post-softmax attention maps for inspection: per head, [query tokens, memory tokens].
struct AttentionMaps {
    int scale_stride = 0;
    std::vector<Tensor> per_head;
};

struct MatchContext {
    bool training = false;
    Rng* rng = nullptr;
};

// Core per-scale attention over explicit token matrices. Queries/keys receive
// their positional encodings here, so equivariance tests can permute both
// consistently.
inline ag::Var match_tokens(const ag::Var& q_feat /*[Rq, c]*/, const ag::Var& k_feat /*[Rk, c]*/,
                            const ag::Var& v_feat /*[Rk, c]*/, const Tensor& pos_q,
                            const Tensor& pos_k, const std::optional<ag::Var>& rte_mul,
                            const std::optional<ag::Var>& rte_add, int block,
                            const MatchScaleParams& p, const ModelConfig& cfg, MatchContext ctx,
                            AttentionMaps* attn_out = nullptr) {
    using namespace ag;
    const int d = cfg.hidden_dim;
    const int H = cfg.match_heads;
    const int dh = cfg.head_dim();

    Var q0 = add_const(add_rowvec(matmul(q_feat, p.proj_q_w), p.proj_q_b), pos_q);
    Var k0 = add_const(add_rowvec(matmul(k_feat, p.proj_k_w), p.proj_k_b), pos_k);
    Var v = add_rowvec(matmul(v_feat, p.proj_v_w), p.proj_v_b);

    Var qn = layernorm_rows(q0, p.ln_q_g, p.ln_q_b);
    Var kn = layernorm_rows(k0, p.ln_k_g, p.ln_k_b);

    Var Q = matmul(qn, p.wq);
    Var K = matmul(kn, p.wk);
    Var V = matmul(v, p.wv);

    std::vector<Var> heads;
    heads.reserve((size_t)H);
    for (int h = 0; h < H; ++h) {
        Var Qh = slice_cols(Q, h * dh, (h + 1) * dh);
        Var Kh = slice_cols(K, h * dh, (h + 1) * dh);
        Var Vh = slice_cols(V, h * dh, (h + 1) * dh);
        Var scores = scale(matmul(Qh, transpose(Kh)), 1.0 / std::sqrt((double)dh));
        if (rte_mul) scores = block_scale(scores, *rte_mul, block);
        if (rte_add) scores = block_bias(scores, *rte_add, block);
        Var probs = softmax_rows(scores);
        if (attn_out) attn_out->per_head.push_back(probs->value);
        if (ctx.training && cfg.dropout_rate > 0.0) {
            if (!ctx.rng) throw std::logic_error("match_tokens: training mode needs an rng");
            probs = dropout(probs, cfg.dropout_rate, *ctx.rng, true);
        }
        heads.push_back(matmul(probs, Vh));
    }
    Var out = matmul(concat_cols(heads), p.wo);
    (void)d;
    return layernorm_rows(add(q0, gelu(out)), p.ln_out_g, p.ln_out_b);
}

// Multi-scale query-memory matching for one clip: produces encoded mask
// features [L, h_s, w_s, d] per scale. Memory tokens are consumed in recency
// order (index 0 = nearest, last = reference) so e_n indexes align.
inline MultiScaleFeatures match_clip(const MultiScaleFeatures& query, const MemoryBank& bank,
                                     const std::vector<MatchScaleParams>& params,
                                     const RteTable& rte, const RteTable* rte_bias,
                                     const ModelConfig& cfg, MatchContext ctx,
                                     std::vector<AttentionMaps>* attn_dump = nullptr) {
    if (bank.size() < 1) throw std::invalid_argument("match_clip: empty memory");
    if (query.scale_strides != bank.scale_strides())
        throw std::invalid_argument("match_clip: query/memory scale strides differ");
    if (params.size() != query.per_scale.size())
        throw std::invalid_argument("match_clip: one parameter set per scale required");

    const int n = bank.size();
    std::optional<ag::Var> e_mul, e_add;
    if (cfg.rte_mode == RteMode::multiplicative) e_mul = select_rte(rte, n);
    else if (cfg.rte_mode == RteMode::additive) {
        if (!rte_bias) throw std::invalid_argument("match_clip: additive mode needs a bias table");
        e_add = select_rte(*rte_bias, n);
    }

    MemoryBank::ReadView mem = bank.read_recency();
    MultiScaleFeatures out;
    out.scale_strides = query.scale_strides;
    for (size_t s = 0; s < query.per_scale.size(); ++s) {
        const ag::Var& qf = query.per_scale[s];
        const int L = qf->value.dim(0), h = qf->value.dim(1), w = qf->value.dim(2), c = qf->value.dim(3);
        const ag::Var& kf = mem.frame_feats[s];
        const ag::Var& vf = mem.mask_feats[s];
        if (kf->value.dim(1) != h || kf->value.dim(2) != w || kf->value.dim(3) != c)
            throw std::invalid_argument("match_clip: memory shape mismatch at stride " +
                                        std::to_string(query.scale_strides[s]));
        Tensor pe = positional_encoding_2d(h, w, cfg.hidden_dim);
        AttentionMaps maps;
        maps.scale_stride = query.scale_strides[s];
        ag::Var tokens = match_tokens(ag::reshape(qf, {L * h * w, c}),
                                      ag::reshape(kf, {n * h * w, c}),
                                      ag::reshape(vf, {n * h * w, c}), tile_rows(pe, L),
                                      tile_rows(pe, n), e_mul, e_add, h * w, params[s], cfg, ctx,
                                      attn_dump ? &maps : nullptr);
        if (attn_dump) attn_dump->push_back(std::move(maps));
        out.per_scale.push_back(ag::reshape(tokens, {L, h, w, cfg.hidden_dim}));
    }
    return out;
}

// Documented array dump: one block per scale/head, row-major values, one row
// of the attention matrix per line.
inline void write_attention_dump(const std::vector<AttentionMaps>& maps, std::ostream& os) {
    os << "attention-dump v1\n";
    for (const auto& m : maps)
        for (size_t h = 0; h < m.per_head.size(); ++h) {
            const Tensor& a = m.per_head[h];
            os << "scale=" << m.scale_stride << " head=" << h << " rows=" << a.dim(0)
               << " cols=" << a.dim(1) << "\n";
            for (int r = 0; r < a.dim(0); ++r) {
                for (int c2 = 0; c2 < a.dim(1); ++c2) os << (c2 ? " " : "") << a.at(r, c2);
                os << "\n";
            }
        }
}

} // namespace clipvos
