#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>

#include "tensor.hpp"

namespace clipvos::ag {

// Reverse-mode tape. Every op returns a new node holding its forward value and
// a closure that scatters the node's grad into its parents. Graphs are dynamic:
// built per forward pass, freed when the last Var handle drops.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad; // allocated lazily on first accumulation
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& grad_ref() {
        if (grad.shape != value.shape) grad = Tensor::zeros(value.shape);
        return grad;
    }
};

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

// RAII: disables graph construction inside the scope (inference, frozen paths).
struct NoGradGuard {
    bool saved;
    NoGradGuard() : saved(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = saved; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    return n;
}

inline Var param(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->requires_grad = true;
    return n;
}

inline Var detach(const Var& v) { return constant(v->value); }

namespace detail {

inline bool any_requires(const std::vector<Var>& ps) {
    for (const auto& p : ps)
        if (p->requires_grad) return true;
    return false;
}

inline Var make(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (grad_mode() && any_requires(parents)) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(fn);
    }
    return n;
}

} // namespace detail

// ---- arithmetic ----

inline Var add(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value))
        throw std::invalid_argument("add: shape mismatch " + a->value.shape_str() + " vs " + b->value.shape_str());
    Tensor out = a->value;
    out.add_(b->value);
    return detail::make(std::move(out), {a, b}, [](Node& n) {
        for (int i = 0; i < 2; ++i) {
            Var& p = n.parents[i];
            if (p->requires_grad) p->grad_ref().add_(n.grad);
        }
    });
}

inline Var sub(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value)) throw std::invalid_argument("sub: shape mismatch");
    Tensor out = a->value;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b->value.data[i];
    return detail::make(std::move(out), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->grad_ref().add_(n.grad);
        if (n.parents[1]->requires_grad) {
            Tensor& g = n.parents[1]->grad_ref();
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] -= n.grad.data[i];
        }
    });
}

inline Var mul(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value)) throw std::invalid_argument("mul: shape mismatch");
    Tensor out = a->value;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b->value.data[i];
    return detail::make(std::move(out), {a, b}, [](Node& n) {
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        if (n.parents[0]->requires_grad) {
            Tensor& g = n.parents[0]->grad_ref();
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i] * bv.data[i];
        }
        if (n.parents[1]->requires_grad) {
            Tensor& g = n.parents[1]->grad_ref();
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i] * av.data[i];
        }
    });
}

inline Var scale(const Var& a, double c) {
    Tensor out = a->value;
    out.scale_(c);
    return detail::make(std::move(out), {a}, [c](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->grad_ref();
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += c * n.grad.data[i];
    });
}

inline Var add_scalar(const Var& a, double c) {
    Tensor out = a->value;
    for (double& v : out.data) v += c;
    return detail::make(std::move(out), {a}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->grad_ref().add_(n.grad);
    });
}

inline Var add_const(const Var& a, const Tensor& c) {
    if (!a->value.same_shape(c)) throw std::invalid_argument("add_const: shape mismatch");
    Tensor out = a->value;
    out.add_(c);
    return detail::make(std::move(out), {a}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->grad_ref().add_(n.grad);
    });
}

inline Var mul_const(const Var& a, const Tensor& c) {
    if (!a->value.same_shape(c)) throw std::invalid_argument("mul_const: shape mismatch");
    Tensor out = a->value;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= c.data[i];
    return detail::make(std::move(out), {a}, [c](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->grad_ref();
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i] * c.data[i];
    });
}

// out = A .* x + B with A, B fixed tensors
inline Var affine_const(const Var& x, const Tensor& A, const Tensor& B) {
    if (!x->value.same_shape(A) || !x->value.same_shape(B))
        throw std::invalid_argument("affine_const: shape mismatch");
    Tensor out = x->value;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = A.data[i] * out.data[i] + B.data[i];
    return detail::make(std::move(out), {x}, [A](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->grad_ref();
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i] * A.data[i];
    });
}

// x: [R, C], b: [C]; broadcast add over rows
inline Var add_rowvec(const Var& x, const Var& b) {
    if (x->value.ndim() != 2 || b->value.ndim() != 1 || x->value.dim(1) != b->value.dim(0))
        throw std::invalid_argument("add_rowvec: expects [R,C] and [C]");
    const int R = x->value.dim(0), C = x->value.dim(1);
    Tensor out = x->value;
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) out.at(r, c) += b->value[c];
    return detail::make(std::move(out), {x, b}, [R, C](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->grad_ref().add_(n.grad);
        if (n.parents[1]->requires_grad) {
            Tensor& g = n.parents[1]->grad_ref();
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) g[c] += n.grad.at(r, c);
        }
    });
}

// ---- linear algebra ----

inline Var matmul(const Var& a, const Var& b) {
    if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.dim(1) != b->value.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes " + a->value.shape_str() + " x " + b->value.shape_str());
    const int M = a->value.dim(0), K = a->value.dim(1), N = b->value.dim(1);
    Tensor out({M, N});
    for (int i = 0; i < M; ++i) {
        for (int k = 0; k < K; ++k) {
            const double av = a->value.at(i, k);
            if (av == 0.0) continue;
            const double* brow = &b->value.data[(size_t)k * N];
            double* orow = &out.data[(size_t)i * N];
            for (int j = 0; j < N; ++j) orow[j] += av * brow[j];
        }
    }
    return detail::make(std::move(out), {a, b}, [M, K, N](Node& n) {
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        if (n.parents[0]->requires_grad) { // dA = G * B^T
            Tensor& g = n.parents[0]->grad_ref();
            for (int i = 0; i < M; ++i)
                for (int k = 0; k < K; ++k) {
                    const double* grow = &n.grad.data[(size_t)i * N];
                    const double* brow = &bv.data[(size_t)k * N];
                    double acc = 0.0;
                    for (int j = 0; j < N; ++j) acc += grow[j] * brow[j];
                    g.at(i, k) += acc;
                }
        }
        if (n.parents[1]->requires_grad) { // dB = A^T * G
            Tensor& g = n.parents[1]->grad_ref();
            for (int i = 0; i < M; ++i)
                for (int k = 0; k < K; ++k) {
                    const double a_ik = av.at(i, k);
                    if (a_ik == 0.0) continue;
                    const double* grow = &n.grad.data[(size_t)i * N];
                    double* grow_b = &g.data[(size_t)k * N];
                    for (int j = 0; j < N; ++j) grow_b[j] += a_ik * grow[j];
                }
        }
    });
}

inline Var transpose(const Var& a) {
    if (a->value.ndim() != 2) throw std::invalid_argument("transpose: expects 2-d");
    const int R = a->value.dim(0), C = a->value.dim(1);
    Tensor out({C, R});
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) out.at(c, r) = a->value.at(r, c);
    return detail::make(std::move(out), {a}, [R, C](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->grad_ref();
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c) g.at(r, c) += n.grad.at(c, r);
    });
}

inline Var slice_cols(const Var& x, int c0, int c1) {
    if (x->value.ndim() != 2 || c0 < 0 || c1 > x->value.dim(1) || c0 >= c1)
        throw std::invalid_argument("slice_cols: bad range");
    const int R = x->value.dim(0), W = c1 - c0;
    Tensor out({R, W});
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < W; ++c) out.at(r, c) = x->value.at(r, c0 + c);
    return detail::make(std::move(out), {x}, [R, W, c0](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->grad_ref();
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < W; ++c) g.at(r, c0 + c) += n.grad.at(r, c);
    });
}

inline Var concat_cols(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_cols: empty");
    const int R = xs[0]->value.dim(0);
    int C = 0;
    for (const auto& x : xs) {
        if (x->value.ndim() != 2 || x->value.dim(0) != R)
            throw std::invalid_argument("concat_cols: row mismatch");
        C += x->value.dim(1);
    }
    Tensor out({R, C});
    int off = 0;
    for (const auto& x : xs) {
        const int W = x->value.dim(1);
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < W; ++c) out.at(r, off + c) = x->value.at(r, c);
        off += W;
    }
    return detail::make(std::move(out), xs, [R](Node& n) {
        int off = 0;
        for (auto& p : n.parents) {
            const int W = p->value.dim(1);
            if (p->requires_grad) {
                Tensor& g = p->grad_ref();
                for (int r = 0; r < R; ++r)
                    for (int c = 0; c < W; ++c) g.at(r, c) += n.grad.at(r, off + c);
            }
            off += W;
        }
    });
}

// rows = leading axis; works for any rank by flattening trailing dims
inline Var slice_rows(const Var& x, int r0, int r1) {
    if (x->value.ndim() < 1 || r0 < 0 || r1 > x->value.dim(0) || r0 >= r1)
        throw std::invalid_argument("slice_rows: bad range");
    std::vector<int> oshape = x->value.shape;
    oshape[0] = r1 - r0;
    const std::int64_t stride = x->value.numel() / x->value.dim(0);
    Tensor out(oshape);
    std::copy_n(x->value.data.begin() + r0 * stride, (r1 - r0) * stride, out.data.begin());
    return detail::make(std::move(out), {x}, [r0, stride](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->grad_ref();
        for (std::int64_t i = 0; i < n.grad.numel(); ++i) g.data[(size_t)(r0 * stride + i)] += n.grad.data[(size_t)i];
    });
}

inline Var concat_rows(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_rows: empty");
    std::vector<int> oshape = xs[0]->value.shape;
    std::int64_t stride = xs[0]->value.numel() / std::max(1, xs[0]->value.dim(0));
    int R = 0;
    for (const auto& x : xs) {
        std::vector<int> s = x->value.shape;
        s[0] = oshape[0];
        if (s != oshape) throw std::invalid_argument("concat_rows: trailing shape mismatch");
        R += x->value.dim(0);
    }
    oshape[0] = R;
    Tensor out(oshape);
    std::int64_t off = 0;
    for (const auto& x : xs) {
        std::copy(x->value.data.begin(), x->value.data.end(), out.data.begin() + off);
        off += x->value.numel();
    }
    return detail::make(std::move(out), xs, [stride](Node& n) {
        (void)stride;
        std::int64_t off = 0;
        for (auto& p : n.parents) {
            if (p->requires_grad) {
                Tensor& g = p->grad_ref();
                for (std::int64_t i = 0; i < p->value.numel(); ++i) g.data[(size_t)i] += n.grad.data[(size_t)(off + i)];
            }
            off += p->value.numel();
        }
    });
}

inline Var reshape(const Var& x, std::vector<int> shape) {
    Tensor out = x->value.reshaped(std::move(shape));
    return detail::make(std::move(out), {x}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->grad_ref();
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
    });
}

// ---- nonlinearities ----

inline Var relu(const Var& x) {
    Tensor out = x->value;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return detail::make(std::move(out), {x}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->grad_ref();
        const Tensor& xv = n.parents[0]->value;
        for (size_t i = 0; i < g.data.size(); ++i)
            if (xv.data[i] > 0.0) g.data[i] += n.grad.data[i];
    });
}

inline Var gelu(const Var& x) {
    // exact form: x * Phi(x)
    Tensor out = x->value;
    for (double& v : out.data) v = v * 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
    return detail::make(std::move(out), {x}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->grad_ref();
        const Tensor& xv = n.parents[0]->value;
        static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
        static const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * 3.14159265358979323846);
        for (size_t i = 0; i < g.data.size(); ++i) {
            const double v = xv.data[i];
            const double phi_cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double phi_pdf = std::exp(-0.5 * v * v) * inv_sqrt2pi;
            g.data[i] += n.grad.data[i] * (phi_cdf + v * phi_pdf);
        }
    });
}

inline Var sigmoid(const Var& x) {
    Tensor out = x->value;
    for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    Tensor y = out;
    return detail::make(std::move(out), {x}, [y](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->grad_ref();
        for (size_t i = 0; i < g.data.size(); ++i) {
            const double s = y.data[i];
            g.data[i] += n.grad.data[i] * s * (1.0 - s);
        }
    });
}

// log(max(x, eps)); zero grad in the clamped region
inline Var log_clamped(const Var& x, double eps) {
    Tensor out = x->value;
    for (double& v : out.data) v = std::log(std::max(v, eps));
    return detail::make(std::move(out), {x}, [eps](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->grad_ref();
        const Tensor& xv = n.parents[0]->value;
        for (size_t i = 0; i < g.data.size(); ++i)
            if (xv.data[i] > eps) g.data[i] += n.grad.data[i] / xv.data[i];
    });
}

inline Var pow_const(const Var& x, double p) {
    Tensor out = x->value;
    for (double& v : out.data) v = std::pow(v, p);
    return detail::make(std::move(out), {x}, [p](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->grad_ref();
        const Tensor& xv = n.parents[0]->value;
        for (size_t i = 0; i < g.data.size(); ++i) {
            if (p == 0.0) continue;
            double base = xv.data[i];
            if (base == 0.0 && p < 1.0) continue; // derivative blows up; treat as flat
            g.data[i] += n.grad.data[i] * p * std::pow(base, p - 1.0);
        }
    });
}

// ---- reductions ----

inline Var sum(const Var& x) {
    Tensor out = Tensor::scalar(x->value.sum());
    return detail::make(std::move(out), {x}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->grad_ref();
        const double gv = n.grad[0];
        for (double& v : g.data) v += gv;
    });
}

inline Var mean(const Var& x) {
    const double inv = 1.0 / (double)x->value.numel();
    Tensor out = Tensor::scalar(x->value.sum() * inv);
    return detail::make(std::move(out), {x}, [inv](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->grad_ref();
        const double gv = n.grad[0] * inv;
        for (double& v : g.data) v += gv;
    });
}

// scalar / scalar ([1] tensors)
inline Var div_scalar(const Var& a, const Var& b) {
    if (a->value.numel() != 1 || b->value.numel() != 1)
        throw std::invalid_argument("div_scalar: expects scalars");
    Tensor out = Tensor::scalar(a->value[0] / b->value[0]);
    return detail::make(std::move(out), {a, b}, [](Node& n) {
        const double av = n.parents[0]->value[0];
        const double bv = n.parents[1]->value[0];
        const double gv = n.grad[0];
        if (n.parents[0]->requires_grad) n.parents[0]->grad_ref()[0] += gv / bv;
        if (n.parents[1]->requires_grad) n.parents[1]->grad_ref()[0] -= gv * av / (bv * bv);
    });
}

// ---- normalization / attention ----

inline Var softmax_rows(const Var& x) {
    if (x->value.ndim() != 2) throw std::invalid_argument("softmax_rows: expects 2-d");
    const int R = x->value.dim(0), C = x->value.dim(1);
    Tensor out({R, C});
    for (int r = 0; r < R; ++r) {
        double mx = -1e300;
        for (int c = 0; c < C; ++c) mx = std::max(mx, x->value.at(r, c));
        double z = 0.0;
        for (int c = 0; c < C; ++c) {
            const double e = std::exp(x->value.at(r, c) - mx);
            out.at(r, c) = e;
            z += e;
        }
        for (int c = 0; c < C; ++c) out.at(r, c) /= z;
    }
    Tensor y = out;
    return detail::make(std::move(out), {x}, [y, R, C](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->grad_ref();
        for (int r = 0; r < R; ++r) {
            double dot = 0.0;
            for (int c = 0; c < C; ++c) dot += n.grad.at(r, c) * y.at(r, c);
            for (int c = 0; c < C; ++c) g.at(r, c) += y.at(r, c) * (n.grad.at(r, c) - dot);
        }
    });
}

// LayerNorm over the last axis of a [R, C] matrix
inline Var layernorm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
    if (x->value.ndim() != 2) throw std::invalid_argument("layernorm_rows: expects 2-d");
    const int R = x->value.dim(0), C = x->value.dim(1);
    if (gamma->value.numel() != C || beta->value.numel() != C)
        throw std::invalid_argument("layernorm_rows: gamma/beta size mismatch");
    Tensor out({R, C});
    std::vector<double> inv_std(R), mu(R);
    Tensor xhat({R, C});
    for (int r = 0; r < R; ++r) {
        double m = 0.0;
        for (int c = 0; c < C; ++c) m += x->value.at(r, c);
        m /= C;
        double var = 0.0;
        for (int c = 0; c < C; ++c) {
            const double d = x->value.at(r, c) - m;
            var += d * d;
        }
        var /= C;
        const double is = 1.0 / std::sqrt(var + eps);
        mu[r] = m;
        inv_std[r] = is;
        for (int c = 0; c < C; ++c) {
            const double xh = (x->value.at(r, c) - m) * is;
            xhat.at(r, c) = xh;
            out.at(r, c) = gamma->value[c] * xh + beta->value[c];
        }
    }
    return detail::make(std::move(out), {x, gamma, beta},
                        [xhat, inv_std, R, C](Node& n) {
        const Var& xp = n.parents[0];
        const Var& gp = n.parents[1];
        const Var& bp = n.parents[2];
        if (gp->requires_grad) {
            Tensor& g = gp->grad_ref();
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) g[c] += n.grad.at(r, c) * xhat.at(r, c);
        }
        if (bp->requires_grad) {
            Tensor& g = bp->grad_ref();
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) g[c] += n.grad.at(r, c);
        }
        if (xp->requires_grad) {
            Tensor& g = xp->grad_ref();
            for (int r = 0; r < R; ++r) {
                double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                std::vector<double> dxhat(C);
                for (int c = 0; c < C; ++c) {
                    dxhat[c] = n.grad.at(r, c) * gp->value[c];
                    mean_dxhat += dxhat[c];
                    mean_dxhat_xhat += dxhat[c] * xhat.at(r, c);
                }
                mean_dxhat /= C;
                mean_dxhat_xhat /= C;
                for (int c = 0; c < C; ++c)
                    g.at(r, c) += inv_std[r] * (dxhat[c] - mean_dxhat - xhat.at(r, c) * mean_dxhat_xhat);
            }
        }
    });
}

// Multiplicative modulation of attention scores. scores: [R, n*B], factors: [n];
// every column block of width B is scaled by its block's factor.
inline Var block_scale(const Var& scores, const Var& factors, int block) {
    if (scores->value.ndim() != 2) throw std::invalid_argument("block_scale: scores must be 2-d");
    const int R = scores->value.dim(0), C = scores->value.dim(1);
    const int nb = factors->value.numel() ? (int)factors->value.numel() : 0;
    if (block <= 0 || nb * block != C)
        throw std::invalid_argument("block_scale: factor count * block width != columns");
    Tensor out = scores->value;
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) out.at(r, c) *= factors->value[c / block];
    return detail::make(std::move(out), {scores, factors}, [R, C, block](Node& n) {
        const Tensor& sv = n.parents[0]->value;
        const Tensor& fv = n.parents[1]->value;
        if (n.parents[0]->requires_grad) {
            Tensor& g = n.parents[0]->grad_ref();
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) g.at(r, c) += n.grad.at(r, c) * fv[c / block];
        }
        if (n.parents[1]->requires_grad) {
            Tensor& g = n.parents[1]->grad_ref();
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) g[c / block] += n.grad.at(r, c) * sv.at(r, c);
        }
    });
}

// Additive per-block bias on attention scores (ablation path).
inline Var block_bias(const Var& scores, const Var& biases, int block) {
    if (scores->value.ndim() != 2) throw std::invalid_argument("block_bias: scores must be 2-d");
    const int R = scores->value.dim(0), C = scores->value.dim(1);
    const int nb = (int)biases->value.numel();
    if (block <= 0 || nb * block != C)
        throw std::invalid_argument("block_bias: bias count * block width != columns");
    Tensor out = scores->value;
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) out.at(r, c) += biases->value[c / block];
    return detail::make(std::move(out), {scores, biases}, [R, C, block](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->grad_ref().add_(n.grad);
        if (n.parents[1]->requires_grad) {
            Tensor& g = n.parents[1]->grad_ref();
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) g[c / block] += n.grad.at(r, c);
        }
    });
}

// Linear resampling of a 1-d vector to a new length; endpoints map to endpoints.
inline Var resample_linear(const Var& v, int m) {
    if (v->value.ndim() != 1 || v->value.numel() < 1)
        throw std::invalid_argument("resample_linear: expects non-empty 1-d");
    const int nsrc = (int)v->value.numel();
    if (m < 1) throw std::invalid_argument("resample_linear: target length < 1");
    Tensor out({m});
    std::vector<int> i0(m), i1(m);
    std::vector<double> w1(m);
    for (int j = 0; j < m; ++j) {
        double pos = (m == 1 || nsrc == 1) ? 0.0 : (double)j * (nsrc - 1) / (double)(m - 1);
        int lo = (int)std::floor(pos);
        if (lo >= nsrc - 1) lo = nsrc - 2 < 0 ? 0 : nsrc - 2;
        double frac = pos - lo;
        if (nsrc == 1) {
            lo = 0;
            frac = 0.0;
        }
        i0[j] = lo;
        i1[j] = std::min(lo + 1, nsrc - 1);
        w1[j] = frac;
        out[j] = (1.0 - frac) * v->value[lo] + frac * v->value[i1[j]];
    }
    return detail::make(std::move(out), {v}, [i0, i1, w1, m](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->grad_ref();
        for (int j = 0; j < m; ++j) {
            g[i0[j]] += (1.0 - w1[j]) * n.grad[j];
            g[i1[j]] += w1[j] * n.grad[j];
        }
    });
}

// Row-wise linear resampling of a [R, C] matrix to [m, C] (time-embedding stretch).
inline Var resample_rows(const Var& v, int m) {
    if (v->value.ndim() != 2) throw std::invalid_argument("resample_rows: expects 2-d");
    const int R = v->value.dim(0), C = v->value.dim(1);
    if (m < 1 || R < 1) throw std::invalid_argument("resample_rows: bad sizes");
    Tensor out({m, C});
    std::vector<int> i0(m), i1(m);
    std::vector<double> w1(m);
    for (int j = 0; j < m; ++j) {
        double pos = (m == 1 || R == 1) ? 0.0 : (double)j * (R - 1) / (double)(m - 1);
        int lo = (int)std::floor(pos);
        if (lo >= R - 1) lo = R - 2 < 0 ? 0 : R - 2;
        double frac = pos - lo;
        if (R == 1) {
            lo = 0;
            frac = 0.0;
        }
        i0[j] = lo;
        i1[j] = std::min(lo + 1, R - 1);
        w1[j] = frac;
        for (int c = 0; c < C; ++c)
            out.at(j, c) = (1.0 - frac) * v->value.at(lo, c) + frac * v->value.at(i1[j], c);
    }
    return detail::make(std::move(out), {v}, [i0, i1, w1, m, C](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->grad_ref();
        for (int j = 0; j < m; ++j)
            for (int c = 0; c < C; ++c) {
                g.at(i0[j], c) += (1.0 - w1[j]) * n.grad.at(j, c);
                g.at(i1[j], c) += w1[j] * n.grad.at(j, c);
            }
    });
}

// ---- spatial ops ----

// x: [T, h, w, cin], w: [kh, kw, cin, cout], b: [cout]
inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    if (x->value.ndim() != 4 || w->value.ndim() != 4)
        throw std::invalid_argument("conv2d: expects x [T,h,w,cin], w [kh,kw,cin,cout]");
    const int T = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2), CI = x->value.dim(3);
    const int KH = w->value.dim(0), KW = w->value.dim(1), CO = w->value.dim(3);
    if (w->value.dim(2) != CI) throw std::invalid_argument("conv2d: channel mismatch");
    if (b->value.numel() != CO) throw std::invalid_argument("conv2d: bias size mismatch");
    const int HO = (H + 2 * pad - KH) / stride + 1;
    const int WO = (W + 2 * pad - KW) / stride + 1;
    if (HO <= 0 || WO <= 0) throw std::invalid_argument("conv2d: empty output");
    Tensor out({T, HO, WO, CO});
    for (int t = 0; t < T; ++t)
        for (int oy = 0; oy < HO; ++oy)
            for (int ox = 0; ox < WO; ++ox) {
                double* orow = &out.data[(((size_t)t * HO + oy) * WO + ox) * CO];
                for (int co = 0; co < CO; ++co) orow[co] = b->value[co];
                for (int ky = 0; ky < KH; ++ky) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    for (int kx = 0; kx < KW; ++kx) {
                        const int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= W) continue;
                        const double* xrow = &x->value.data[(((size_t)t * H + iy) * W + ix) * CI];
                        const double* wrow = &w->value.data[(((size_t)ky * KW + kx) * CI) * CO];
                        for (int ci = 0; ci < CI; ++ci) {
                            const double xv = xrow[ci];
                            if (xv == 0.0) continue;
                            const double* wk = wrow + (size_t)ci * CO;
                            for (int co = 0; co < CO; ++co) orow[co] += xv * wk[co];
                        }
                    }
                }
            }
    return detail::make(std::move(out), {x, w, b},
                        [T, H, W, CI, KH, KW, CO, HO, WO, stride, pad](Node& n) {
        const Tensor& xv = n.parents[0]->value;
        const Tensor& wv = n.parents[1]->value;
        const bool need_dx = n.parents[0]->requires_grad;
        const bool need_dw = n.parents[1]->requires_grad;
        const bool need_db = n.parents[2]->requires_grad;
        Tensor* dx = need_dx ? &n.parents[0]->grad_ref() : nullptr;
        Tensor* dw = need_dw ? &n.parents[1]->grad_ref() : nullptr;
        Tensor* db = need_db ? &n.parents[2]->grad_ref() : nullptr;
        for (int t = 0; t < T; ++t)
            for (int oy = 0; oy < HO; ++oy)
                for (int ox = 0; ox < WO; ++ox) {
                    const double* grow = &n.grad.data[(((size_t)t * HO + oy) * WO + ox) * CO];
                    if (need_db)
                        for (int co = 0; co < CO; ++co) db->data[(size_t)co] += grow[co];
                    for (int ky = 0; ky < KH; ++ky) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < KW; ++kx) {
                            const int ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= W) continue;
                            const size_t xoff = (((size_t)t * H + iy) * W + ix) * CI;
                            const size_t woff = ((size_t)ky * KW + kx) * CI * CO;
                            for (int ci = 0; ci < CI; ++ci) {
                                const double xvv = xv.data[xoff + ci];
                                const double* wk = &wv.data[woff + (size_t)ci * CO];
                                if (need_dx) {
                                    double acc = 0.0;
                                    for (int co = 0; co < CO; ++co) acc += grow[co] * wk[co];
                                    dx->data[xoff + ci] += acc;
                                }
                                if (need_dw && xvv != 0.0) {
                                    double* dwk = &dw->data[woff + (size_t)ci * CO];
                                    for (int co = 0; co < CO; ++co) dwk[co] += xvv * grow[co];
                                }
                            }
                        }
                    }
                }
    });
}

// Bilinear resize of [T, h, w, C] to [T, H, W, C]; half-pixel centers, edges clamped,
// so constant inputs stay constant.
inline Var upsample_bilinear(const Var& x, int H, int W) {
    if (x->value.ndim() != 4) throw std::invalid_argument("upsample_bilinear: expects 4-d");
    const int T = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2), C = x->value.dim(3);
    if (H < 1 || W < 1) throw std::invalid_argument("upsample_bilinear: bad target");
    struct Tap {
        int lo, hi;
        double frac;
    };
    auto taps = [](int src, int dst) {
        std::vector<Tap> t((size_t)dst);
        for (int o = 0; o < dst; ++o) {
            double pos = ((double)o + 0.5) * (double)src / (double)dst - 0.5;
            double cl = std::min(std::max(pos, 0.0), (double)(src - 1));
            int lo = (int)std::floor(cl);
            int hi = std::min(lo + 1, src - 1);
            t[(size_t)o] = {lo, hi, cl - lo};
        }
        return t;
    };
    const auto ty = taps(h, H), tx = taps(w, W);
    Tensor out({T, H, W, C});
    for (int t = 0; t < T; ++t)
        for (int oy = 0; oy < H; ++oy)
            for (int ox = 0; ox < W; ++ox) {
                const Tap& a = ty[(size_t)oy];
                const Tap& b2 = tx[(size_t)ox];
                for (int c = 0; c < C; ++c) {
                    const double v00 = x->value.at(t, a.lo, b2.lo, c);
                    const double v01 = x->value.at(t, a.lo, b2.hi, c);
                    const double v10 = x->value.at(t, a.hi, b2.lo, c);
                    const double v11 = x->value.at(t, a.hi, b2.hi, c);
                    const double top = v00 + (v01 - v00) * b2.frac;
                    const double bot = v10 + (v11 - v10) * b2.frac;
                    out.at(t, oy, ox, c) = top + (bot - top) * a.frac;
                }
            }
    return detail::make(std::move(out), {x}, [ty, tx, T, H, W, C](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->grad_ref();
        for (int t = 0; t < T; ++t)
            for (int oy = 0; oy < H; ++oy)
                for (int ox = 0; ox < W; ++ox) {
                    const auto& a = ty[(size_t)oy];
                    const auto& b2 = tx[(size_t)ox];
                    for (int c = 0; c < C; ++c) {
                        const double gv = n.grad.at(t, oy, ox, c);
                        g.at(t, a.lo, b2.lo, c) += gv * (1 - a.frac) * (1 - b2.frac);
                        g.at(t, a.lo, b2.hi, c) += gv * (1 - a.frac) * b2.frac;
                        g.at(t, a.hi, b2.lo, c) += gv * a.frac * (1 - b2.frac);
                        g.at(t, a.hi, b2.hi, c) += gv * a.frac * b2.frac;
                    }
                }
    });
}

// Inverted dropout; identity when not training or rate == 0.
inline Var dropout(const Var& x, double rate, Rng& rng, bool training) {
    if (!training || rate <= 0.0) return x;
    if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
    Tensor mask(x->value.shape);
    const double keep = 1.0 - rate;
    for (double& m : mask.data) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
    Tensor out = x->value;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask.data[i];
    return detail::make(std::move(out), {x}, [mask](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor& g = n.parents[0]->grad_ref();
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i] * mask.data[i];
    });
}

// ---- graph traversal ----

inline void backward(const Var& root) {
    if (root->value.numel() != 1)
        throw std::invalid_argument("backward: root must be scalar");
    if (!root->requires_grad) return;
    // iterative post-order topological sort
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->grad_ref()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

inline void zero_grad(const std::vector<Var>& params) {
    for (const auto& p : params) p->grad = Tensor();
}

} // namespace clipvos::ag
