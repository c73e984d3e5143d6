#include <catch2/catch_amalgamated.hpp>

#include "clipvos/autograd.hpp"

using namespace clipvos;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Exhaustive central-difference check of d(loss)/d(input) for every entry of
// every input. The builder must construct the loss graph from the given Vars
// alone so that re-evaluating it after a perturbation is meaningful.
template <typename Build>
void check_grads(std::vector<ag::Var> inputs, Build&& build, double tol = 1e-6,
                 double h = 1e-6) {
    ag::zero_grad(inputs);
    ag::Var loss = build();
    REQUIRE(loss->value.numel() == 1);
    ag::backward(loss);

    std::vector<Tensor> analytic;
    for (auto& v : inputs)
        analytic.push_back(v->grad.shape == v->value.shape ? v->grad
                                                           : Tensor::zeros(v->value.shape));

    for (size_t k = 0; k < inputs.size(); ++k) {
        for (std::int64_t i = 0; i < inputs[k]->value.numel(); ++i) {
            const double saved = inputs[k]->value.data[(size_t)i];
            double lp, lm;
            {
                ag::NoGradGuard ng;
                inputs[k]->value.data[(size_t)i] = saved + h;
                lp = build()->value[0];
                inputs[k]->value.data[(size_t)i] = saved - h;
                lm = build()->value[0];
                inputs[k]->value.data[(size_t)i] = saved;
            }
            const double fd = (lp - lm) / (2.0 * h);
            const double an = analytic[k].data[(size_t)i];
            const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1.0});
            INFO("input " << k << " entry " << i << " fd=" << fd << " analytic=" << an);
            REQUIRE(err < tol);
        }
    }
}

// weighted sum makes the loss sensitive to every output entry
ag::Var probe(const ag::Var& y, const Tensor& w) { return ag::sum(ag::mul_const(y, w)); }

} // namespace

TEST_CASE("elementwise binary ops match finite differences") {
    Rng rng(11);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({3, 4}, rng);
    Tensor w = random_tensor({3, 4}, rng);
    auto va = ag::param(a), vb = ag::param(b);
    check_grads({va, vb}, [&] { return probe(ag::add(va, vb), w); });
    check_grads({va, vb}, [&] { return probe(ag::sub(va, vb), w); });
    check_grads({va, vb}, [&] { return probe(ag::mul(va, vb), w); });
}

TEST_CASE("scalar and constant ops match finite differences") {
    Rng rng(12);
    Tensor a = random_tensor({2, 5}, rng);
    Tensor c = random_tensor({2, 5}, rng);
    Tensor A = random_tensor({2, 5}, rng);
    Tensor B = random_tensor({2, 5}, rng);
    Tensor w = random_tensor({2, 5}, rng);
    auto va = ag::param(a);
    check_grads({va}, [&] { return probe(ag::scale(va, -1.7), w); });
    check_grads({va}, [&] { return probe(ag::add_scalar(va, 0.3), w); });
    check_grads({va}, [&] { return probe(ag::add_const(va, c), w); });
    check_grads({va}, [&] { return probe(ag::mul_const(va, c), w); });
    check_grads({va}, [&] { return probe(ag::affine_const(va, A, B), w); });
}

TEST_CASE("matmul, transpose and row vector addition match finite differences") {
    Rng rng(13);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    Tensor bias = random_tensor({2}, rng);
    Tensor w = random_tensor({3, 2}, rng);
    auto va = ag::param(a), vb = ag::param(b), vbias = ag::param(bias);
    check_grads({va, vb, vbias},
                [&] { return probe(ag::add_rowvec(ag::matmul(va, vb), vbias), w); });
    Tensor wt = random_tensor({4, 3}, rng);
    check_grads({va}, [&] { return probe(ag::transpose(va), wt); });
}

TEST_CASE("matmul value agrees with a hand-computed product") {
    auto a = ag::constant(Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));
    auto b = ag::constant(Tensor({2, 2}, {5.0, 6.0, 7.0, 8.0}));
    Tensor p = ag::matmul(a, b)->value;
    REQUIRE(p.at(0, 0) == 19.0);
    REQUIRE(p.at(0, 1) == 22.0);
    REQUIRE(p.at(1, 0) == 43.0);
    REQUIRE(p.at(1, 1) == 50.0);
}

TEST_CASE("slicing and concatenation match finite differences") {
    Rng rng(14);
    Tensor a = random_tensor({4, 6}, rng);
    Tensor b = random_tensor({2, 6}, rng);
    auto va = ag::param(a), vb = ag::param(b);
    Tensor wc = random_tensor({4, 3}, rng);
    check_grads({va}, [&] { return probe(ag::slice_cols(va, 1, 4), wc); });
    Tensor wr = random_tensor({2, 6}, rng);
    check_grads({va}, [&] { return probe(ag::slice_rows(va, 1, 3), wr); });
    Tensor wcc = random_tensor({4, 12}, rng);
    check_grads({va}, [&] { return probe(ag::concat_cols({va, va}), wcc); });
    Tensor wrr = random_tensor({6, 6}, rng);
    check_grads({va, vb}, [&] { return probe(ag::concat_rows({va, vb}), wrr); });
    Tensor wre = random_tensor({6, 4}, rng);
    check_grads({va}, [&] { return probe(ag::reshape(va, {6, 4}), wre); });
}

TEST_CASE("nonlinearities match finite differences away from kinks") {
    Rng rng(15);
    // keep relu inputs off zero so the subgradient is unambiguous
    Tensor a = random_tensor({3, 4}, rng, 0.2, 1.5);
    Tensor b = random_tensor({3, 4}, rng, -1.5, -0.2);
    Tensor w = random_tensor({3, 4}, rng);
    auto va = ag::param(a), vb = ag::param(b);
    check_grads({va, vb}, [&] { return probe(ag::relu(ag::mul(va, vb)), w); });
    check_grads({va}, [&] { return probe(ag::gelu(va), w); });
    check_grads({va}, [&] { return probe(ag::sigmoid(va), w); });
    check_grads({va}, [&] { return probe(ag::log_clamped(va, 1e-8), w); }); // a > 0 here
    check_grads({va}, [&] { return probe(ag::pow_const(va, 2.5), w); });
}

TEST_CASE("reductions and scalar division match finite differences") {
    Rng rng(16);
    Tensor a = random_tensor({3, 5}, rng);
    Tensor s = random_tensor({1}, rng, 0.5, 2.0);
    auto va = ag::param(a);
    auto vs = ag::param(s);
    Tensor one({1}, {1.0});
    check_grads({va}, [&] { return probe(ag::sum(va), one); });
    check_grads({va}, [&] { return probe(ag::mean(va), one); });
    check_grads({va, vs}, [&] { return probe(ag::div_scalar(ag::sum(va), vs), one); });
}

TEST_CASE("softmax rows sum to one and match finite differences") {
    Rng rng(17);
    Tensor a = random_tensor({3, 6}, rng, -2.0, 2.0);
    Tensor w = random_tensor({3, 6}, rng);
    auto va = ag::param(a);
    Tensor sm = ag::softmax_rows(va)->value;
    for (int r = 0; r < 3; ++r) {
        double rs = 0.0;
        for (int c = 0; c < 6; ++c) rs += sm.at(r, c);
        REQUIRE(rs == Catch::Approx(1.0).margin(1e-12));
    }
    check_grads({va}, [&] { return probe(ag::softmax_rows(va), w); });
}

TEST_CASE("layernorm normalizes rows and matches finite differences") {
    Rng rng(18);
    Tensor a = random_tensor({4, 8}, rng, -2.0, 2.0);
    Tensor g = random_tensor({8}, rng, 0.5, 1.5);
    Tensor b = random_tensor({8}, rng);
    Tensor w = random_tensor({4, 8}, rng);
    auto va = ag::param(a), vg = ag::param(g), vb = ag::param(b);

    Tensor ln = ag::layernorm_rows(va, ag::constant(Tensor::ones({8})),
                                   ag::constant(Tensor::zeros({8})))
                    ->value;
    for (int r = 0; r < 4; ++r) {
        double m = 0.0, v = 0.0;
        for (int c = 0; c < 8; ++c) m += ln.at(r, c);
        m /= 8.0;
        for (int c = 0; c < 8; ++c) v += (ln.at(r, c) - m) * (ln.at(r, c) - m);
        REQUIRE(m == Catch::Approx(0.0).margin(1e-9));
        REQUIRE(v / 8.0 == Catch::Approx(1.0).margin(1e-4)); // eps shifts the variance slightly
    }
    check_grads({va, vg, vb}, [&] { return probe(ag::layernorm_rows(va, vg, vb), w); }, 1e-5);
}

TEST_CASE("block scale and block bias apply one factor per column block") {
    Rng rng(19);
    Tensor s = random_tensor({4, 6}, rng);
    Tensor e = random_tensor({3}, rng, 0.5, 1.5); // 3 blocks of width 2
    auto vs = ag::param(s), ve = ag::param(e);
    Tensor scaled = ag::block_scale(vs, ve, 2)->value;
    Tensor biased = ag::block_bias(vs, ve, 2)->value;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 6; ++c) {
            REQUIRE(scaled.at(r, c) == Catch::Approx(s.at(r, c) * e[c / 2]).margin(1e-15));
            REQUIRE(biased.at(r, c) == Catch::Approx(s.at(r, c) + e[c / 2]).margin(1e-15));
        }
    Tensor w = random_tensor({4, 6}, rng);
    check_grads({vs, ve}, [&] { return probe(ag::block_scale(vs, ve, 2), w); });
    check_grads({vs, ve}, [&] { return probe(ag::block_bias(vs, ve, 2), w); });
}

TEST_CASE("linear resampling preserves endpoints and matches finite differences") {
    Rng rng(20);
    Tensor e = random_tensor({3}, rng);
    auto ve = ag::param(e);
    Tensor r = ag::resample_linear(ve, 5)->value;
    REQUIRE(r.numel() == 5);
    REQUIRE(r[0] == Catch::Approx(e[0]).margin(1e-15));
    REQUIRE(r[4] == Catch::Approx(e[2]).margin(1e-15));
    REQUIRE(r[2] == Catch::Approx(e[1]).margin(1e-12)); // midpoint lands on the middle knot
    Tensor w = random_tensor({5}, rng);
    check_grads({ve}, [&] { return probe(ag::resample_linear(ve, 5), w); });

    Tensor m = random_tensor({2, 4}, rng);
    auto vm = ag::param(m);
    Tensor rr = ag::resample_rows(vm, 3)->value;
    REQUIRE(rr.dim(0) == 3);
    REQUIRE(rr.dim(1) == 4);
    for (int c = 0; c < 4; ++c) {
        REQUIRE(rr.at(0, c) == Catch::Approx(m.at(0, c)).margin(1e-15));
        REQUIRE(rr.at(2, c) == Catch::Approx(m.at(1, c)).margin(1e-15));
    }
    Tensor wr = random_tensor({3, 4}, rng);
    check_grads({vm}, [&] { return probe(ag::resample_rows(vm, 3), wr); });
}

TEST_CASE("conv2d matches finite differences for weights, bias and input") {
    Rng rng(21);
    Tensor x = random_tensor({2, 4, 4, 3}, rng);
    Tensor kw = random_tensor({3, 3, 3, 2}, rng);
    Tensor kb = random_tensor({2}, rng);
    auto vx = ag::param(x), vw = ag::param(kw), vb = ag::param(kb);
    Tensor w = random_tensor({2, 2, 2, 2}, rng);
    check_grads({vx, vw, vb}, [&] { return probe(ag::conv2d(vx, vw, vb, 2, 1), w); }, 1e-5);
}

TEST_CASE("bilinear upsampling keeps constants constant and matches finite differences") {
    Rng rng(22);
    Tensor c = Tensor::full({1, 2, 2, 1}, 0.7);
    Tensor up = ag::upsample_bilinear(ag::constant(c), 5, 7)->value;
    for (double v : up.data) REQUIRE(v == Catch::Approx(0.7).margin(1e-12));

    Tensor x = random_tensor({2, 2, 3, 2}, rng);
    auto vx = ag::param(x);
    Tensor w = random_tensor({2, 5, 7, 2}, rng);
    check_grads({vx}, [&] { return probe(ag::upsample_bilinear(vx, 5, 7), w); });
}

TEST_CASE("detach stops gradient flow") {
    Tensor a({2}, {1.0, 2.0});
    auto va = ag::param(a);
    ag::zero_grad({va});
    ag::Var loss = ag::sum(ag::mul(ag::detach(va), va));
    ag::backward(loss);
    // d/da of detach(a)*a is detach(a), not 2a
    REQUIRE(va->grad.data[0] == Catch::Approx(1.0));
    REQUIRE(va->grad.data[1] == Catch::Approx(2.0));
}

TEST_CASE("no-grad guard suppresses graph construction") {
    Tensor a({2}, {1.0, 2.0});
    auto va = ag::param(a);
    ag::NoGradGuard ng;
    ag::Var y = ag::scale(va, 3.0);
    REQUIRE_FALSE(y->requires_grad);
    REQUIRE(y->parents.empty());
}

TEST_CASE("dropout is identity in eval mode and an unbiased mask in training") {
    Rng rng(23);
    Tensor x = Tensor::full({1000}, 1.0);
    auto vx = ag::constant(x);
    Tensor eval = ag::dropout(vx, 0.4, rng, false)->value;
    for (double v : eval.data) REQUIRE(v == 1.0);

    Tensor tr = ag::dropout(vx, 0.4, rng, true)->value;
    int kept = 0;
    for (double v : tr.data) {
        REQUIRE((v == 0.0 || v == Catch::Approx(1.0 / 0.6).margin(1e-12)));
        if (v != 0.0) ++kept;
    }
    // kept fraction concentrates near 0.6
    REQUIRE(kept > 500);
    REQUIRE(kept < 700);
}

TEST_CASE("zero_grad clears accumulated gradients") {
    Tensor a({3}, {1.0, 2.0, 3.0});
    auto va = ag::param(a);
    ag::backward(ag::sum(va));
    REQUIRE(va->grad.shape == va->value.shape);
    ag::zero_grad({va});
    REQUIRE(va->grad.numel() == 0);
}

TEST_CASE("gradients accumulate across reuse within one graph") {
    Tensor a({1}, {3.0});
    auto va = ag::param(a);
    ag::zero_grad({va});
    ag::Var y = ag::mul(va, va); // dy/da = 2a
    ag::backward(ag::sum(y));
    REQUIRE(va->grad.data[0] == Catch::Approx(6.0));
}
