#include <catch2/catch_amalgamated.hpp>

#include "clipvos/loss.hpp"

using namespace clipvos;

namespace {

// independently derived with 40-digit softmax arithmetic, frozen here
constexpr double kWLow = 0.06944667489664586;
constexpr double kWHigh = 3.7916599753100624;
constexpr double kLn2 = 0.69314718055994529;
constexpr double kFocalPoint9 = 0.0010536051565782629;
constexpr double kDiceComplement = 0.94117647058823528; // 1 - 1/17

Tensor frame_of(int h, int w, std::initializer_list<std::pair<int, int>> fg) {
    Tensor f = Tensor::zeros({h, w});
    for (auto [y, x] : fg) f.at(y, x) = 1.0;
    return f;
}

MaskSequence seq_from(const std::vector<Tensor>& frames) {
    const int h = frames[0].dim(0), w = frames[0].dim(1);
    Tensor m({(int)frames.size(), h, w});
    for (size_t t = 0; t < frames.size(); ++t)
        std::copy(frames[t].data.begin(), frames[t].data.end(),
                  m.data.begin() + (std::int64_t)t * h * w);
    return MaskSequence(std::move(m), 1);
}

// square block of the given area in the top-left corner
Tensor block_frame(int h, int w, int area) {
    Tensor f = Tensor::zeros({h, w});
    int placed = 0;
    for (int y = 0; y < h && placed < area; ++y)
        for (int x = 0; x < w && placed < area; ++x) {
            f.at(y, x) = 1.0;
            ++placed;
        }
    return f;
}

} // namespace

TEST_CASE("mask_area counts foreground pixels") {
    REQUIRE(mask_area(Tensor::zeros({4, 4})) == 0.0);
    REQUIRE(mask_area(Tensor::ones({4, 4})) == 16.0);
    Tensor checker = Tensor::zeros({4, 4});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            if ((y + x) % 2 == 0) checker.at(y, x) = 1.0;
    REQUIRE(mask_area(checker) == 8.0);
}

TEST_CASE("mask_centroid averages pixel coordinates and flags empty masks") {
    double cy = -1, cx = -1;
    REQUIRE(mask_centroid(frame_of(6, 8, {{2, 3}}), cy, cx));
    REQUIRE(cy == 2.0);
    REQUIRE(cx == 3.0);
    REQUIRE(mask_centroid(frame_of(6, 8, {{0, 0}, {0, 2}, {2, 0}, {2, 2}}), cy, cx));
    REQUIRE(cy == 1.0);
    REQUIRE(cx == 1.0);
    REQUIRE_FALSE(mask_centroid(Tensor::zeros({4, 4}), cy, cx));
}

TEST_CASE("count_components distinguishes 4- and 8-connectivity") {
    Tensor diag = frame_of(3, 3, {{0, 0}, {1, 1}});
    REQUIRE(count_components(diag, 4) == 2);
    REQUIRE(count_components(diag, 8) == 1);
    REQUIRE(count_components(Tensor::zeros({3, 3}), 4) == 0);
    REQUIRE(count_components(Tensor::ones({3, 3}), 4) == 1);
    REQUIRE_THROWS_AS(count_components(diag, 6), std::invalid_argument);
}

TEST_CASE("constant foreground area yields a uniform delta") {
    std::vector<Tensor> frames;
    for (int t = 0; t < 4; ++t) frames.push_back(block_frame(8, 8, 10));
    std::vector<double> d = compute_delta(seq_from(frames), DeltaVariant::masked_area);
    REQUIRE(d == std::vector<double>{1.0, 1.0, 1.0, 1.0});
}

TEST_CASE("an area halving shows up as a single spike in delta") {
    std::vector<Tensor> frames = {block_frame(8, 8, 16), block_frame(8, 8, 16),
                                  block_frame(8, 8, 8), block_frame(8, 8, 8)};
    std::vector<double> d = compute_delta(seq_from(frames), DeltaVariant::masked_area);
    // changes [0,0,8,0], mean 2
    REQUIRE(d[0] == 0.0);
    REQUIRE(d[1] == 0.0);
    REQUIRE(d[2] == 4.0);
    REQUIRE(d[3] == 0.0);
}

TEST_CASE("component merges register under the connected-components variant") {
    Tensor two = frame_of(3, 5, {{1, 0}, {1, 4}});
    Tensor merged = frame_of(3, 5, {{1, 0}, {1, 1}, {1, 2}, {1, 3}, {1, 4}});
    std::vector<double> d =
        compute_delta(seq_from({two, two, merged, merged}), DeltaVariant::connected_components);
    REQUIRE(d[0] == 0.0);
    REQUIRE(d[1] == 0.0);
    REQUIRE(d[2] == 4.0); // change 1 over mean 0.25
    REQUIRE(d[3] == 0.0);
}

TEST_CASE("centroid motion drives the center-of-mass variant") {
    std::vector<Tensor> frames = {frame_of(4, 8, {{1, 0}}), frame_of(4, 8, {{1, 3}}),
                                  frame_of(4, 8, {{1, 6}})};
    std::vector<double> d = compute_delta(seq_from(frames), DeltaVariant::center_of_mass);
    // displacements [0,3,3], mean 2
    REQUIRE(d[0] == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(d[1] == Catch::Approx(1.5).margin(1e-12));
    REQUIRE(d[2] == Catch::Approx(1.5).margin(1e-12));
}

TEST_CASE("frames without foreground fall back to zero centroid change") {
    std::vector<Tensor> frames = {frame_of(4, 4, {{0, 0}}), Tensor::zeros({4, 4}),
                                  frame_of(4, 4, {{3, 3}})};
    std::vector<double> d = compute_delta(seq_from(frames), DeltaVariant::center_of_mass);
    // both transitions touch the empty frame, so total change is 0 -> uniform
    REQUIRE(d == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("compute_delta needs at least two frames") {
    REQUIRE_THROWS_AS(compute_delta(seq_from({block_frame(4, 4, 4)}), DeltaVariant::masked_area),
                      std::invalid_argument);
}

TEST_CASE("uniform delta gives unit weights exactly") {
    for (int L = 2; L <= 16; ++L) {
        std::vector<double> w = compute_weights(std::vector<double>((size_t)L, 1.0), 1.0, L);
        for (double v : w) REQUIRE(v == 1.0);
        w = compute_weights(std::vector<double>((size_t)L, 3.25), 0.7, L);
        for (double v : w) REQUIRE(v == 1.0);
    }
}

TEST_CASE("the spiked delta reproduces the frozen softmax weights") {
    std::vector<double> w = compute_weights({0.0, 0.0, 4.0, 0.0}, 1.0, 4);
    REQUIRE(w[0] == Catch::Approx(kWLow).margin(1e-9));
    REQUIRE(w[1] == Catch::Approx(kWLow).margin(1e-9));
    REQUIRE(w[2] == Catch::Approx(kWHigh).margin(1e-9));
    REQUIRE(w[3] == Catch::Approx(kWLow).margin(1e-9));
}

TEST_CASE("weights sum to the video length and shift invariance holds") {
    Rng rng(51);
    for (int trial = 0; trial < 50; ++trial) {
        const int L = rng.uniform_int(2, 16);
        std::vector<double> delta((size_t)L);
        for (double& v : delta) v = rng.uniform(0.0, 5.0);
        const double tau = std::vector<double>{0.5, 1.0, 2.0}[(size_t)rng.uniform_int(0, 2)];
        std::vector<double> w = compute_weights(delta, tau, L);
        double s = 0.0;
        for (double v : w) {
            REQUIRE(v > 0.0);
            s += v;
        }
        REQUIRE(s == Catch::Approx((double)L).margin(1e-6));

        std::vector<double> shifted = delta;
        for (double& v : shifted) v += 2.5 * tau; // softmax ignores a common offset
        std::vector<double> w2 = compute_weights(shifted, tau, L);
        for (int t = 0; t < L; ++t) REQUIRE(w[(size_t)t] == Catch::Approx(w2[(size_t)t]).margin(1e-9));
    }
}

TEST_CASE("a huge tau flattens the weights") {
    std::vector<double> w = compute_weights({0.0, 0.0, 4.0, 0.0}, 1e6, 4);
    for (double v : w) REQUIRE(v == Catch::Approx(1.0).margin(1e-3));
}

TEST_CASE("compute_weights validates tau and length") {
    REQUIRE_THROWS_AS(compute_weights({1.0, 1.0}, 0.0, 2), std::invalid_argument);
    REQUIRE_THROWS_AS(compute_weights({1.0, 1.0}, -1.0, 2), std::invalid_argument);
    REQUIRE_THROWS_AS(compute_weights({1.0, 1.0}, 1.0, 3), std::invalid_argument);
}

TEST_CASE("reweighting carries the config's tau and variant") {
    ModelConfig cfg;
    cfg.tau = 0.5;
    cfg.delta_variant = DeltaVariant::masked_area;
    std::vector<Tensor> frames = {block_frame(8, 8, 16), block_frame(8, 8, 16),
                                  block_frame(8, 8, 8), block_frame(8, 8, 8)};
    ReweightingResult r = reweighting(seq_from(frames), cfg);
    REQUIRE(r.tau == 0.5);
    REQUIRE(r.variant == DeltaVariant::masked_area);
    REQUIRE(r.delta[2] == 4.0);
    double s = 0.0;
    for (double v : r.weights) s += v;
    REQUIRE(s == Catch::Approx(4.0).margin(1e-9));
}

TEST_CASE("focal loss vanishes on a perfect prediction") {
    Tensor gt = frame_of(4, 4, {{1, 1}, {2, 2}});
    REQUIRE(focal_loss_frame(gt, gt, 2.0, 0.25) == 0.0);
}

TEST_CASE("coin-flip predictions on all-foreground reduce to ln 2") {
    Tensor gt = Tensor::ones({4, 4});
    Tensor pred = Tensor::full({4, 4}, 0.5);
    REQUIRE(focal_loss_frame(pred, gt, 0.0, 1.0) == Catch::Approx(kLn2).margin(1e-12));
    // the class-balance factor scales it linearly
    REQUIRE(focal_loss_frame(pred, gt, 0.0, 0.25) == Catch::Approx(0.25 * kLn2).margin(1e-12));
}

TEST_CASE("single-pixel focal value matches the frozen hand computation") {
    Tensor gt = Tensor::ones({1, 1});
    Tensor pred = Tensor::full({1, 1}, 0.9);
    REQUIRE(focal_loss_frame(pred, gt, 2.0, 1.0) == Catch::Approx(kFocalPoint9).margin(1e-9));
}

TEST_CASE("focal loss rejects shape mismatches") {
    REQUIRE_THROWS_AS(
        focal_loss_frame(Tensor::full({2, 2}, 0.5), Tensor::ones({2, 3}), 2.0, 0.25),
        std::invalid_argument);
}

TEST_CASE("dice loss is zero on exact matches and near one on complements") {
    Tensor full = Tensor::ones({4, 4});
    REQUIRE(dice_loss(seq_from({full}), seq_from({full})) == 0.0);

    Tensor gt = block_frame(4, 4, 8);
    Tensor pred = gt;
    for (double& v : pred.data) v = 1.0 - v;
    REQUIRE(dice_loss(seq_from({pred}), seq_from({gt})) ==
            Catch::Approx(kDiceComplement).margin(1e-12));

    Tensor empty = Tensor::zeros({4, 4});
    REQUIRE(dice_loss(seq_from({empty}), seq_from({empty})) == 0.0);
}

TEST_CASE("dice loss averages over frames and validates shapes") {
    Tensor full = Tensor::ones({4, 4});
    Tensor gt = block_frame(4, 4, 8);
    Tensor comp = gt;
    for (double& v : comp.data) v = 1.0 - v;
    // frame 0 perfect (0), frame 1 complement (1 - 1/17)
    double two = dice_loss(seq_from({full, comp}), seq_from({full, gt}));
    REQUIRE(two == Catch::Approx(kDiceComplement / 2.0).margin(1e-12));

    std::vector<ag::Var> wrong = {ag::constant(Tensor::full({2, 2}, 0.5))};
    REQUIRE_THROWS_AS(dice_loss_var(wrong, seq_from({full})), std::invalid_argument);
    REQUIRE_THROWS_AS(dice_loss_var({}, seq_from({full})), std::invalid_argument);
}

TEST_CASE("the total is exactly alpha1 dice plus alpha2 focal") {
    ModelConfig cfg;
    cfg.alpha1 = 0.7;
    cfg.alpha2 = 1.3;
    cfg.reweight_targets = ReweightTargets::focal_only;
    std::vector<Tensor> gtf = {block_frame(8, 8, 16), block_frame(8, 8, 16),
                               block_frame(8, 8, 8), block_frame(8, 8, 8)};
    MaskSequence gt = seq_from(gtf);
    Rng rng(52);
    Tensor pm({4, 8, 8});
    for (double& v : pm.data) v = rng.uniform(0.05, 0.95);
    MaskSequence pred(std::move(pm), 1);

    LossBreakdown b = total_loss(pred, gt, cfg);
    REQUIRE(b.total_value ==
            Catch::Approx(0.7 * b.dice + 1.3 * b.focal_reweighted).margin(1e-12));
    REQUIRE(b.per_frame_focal.size() == 4);

    // reweighted focal is the weighted mean of the recorded per-frame losses
    double manual = 0.0;
    for (int t = 0; t < 4; ++t)
        manual += b.reweighting.weights[(size_t)t] * b.per_frame_focal[(size_t)t] / 4.0;
    REQUIRE(b.focal_reweighted == Catch::Approx(manual).margin(1e-12));

    // with reweighting off the focal term is the plain mean
    cfg.reweight_targets = ReweightTargets::none;
    LossBreakdown plain = total_loss(pred, gt, cfg);
    double mean = 0.0;
    for (double l : plain.per_frame_focal) mean += l / 4.0;
    REQUIRE(plain.focal_reweighted == Catch::Approx(mean).margin(1e-12));
    // dice ignores the weights in both modes
    REQUIRE(plain.dice == Catch::Approx(b.dice).margin(1e-12));
}

TEST_CASE("uniform transformation signal makes reweighting a no-op") {
    ModelConfig cfg;
    std::vector<Tensor> gtf;
    for (int t = 0; t < 3; ++t) gtf.push_back(block_frame(8, 8, 12));
    MaskSequence gt = seq_from(gtf);
    Rng rng(53);
    Tensor pm({3, 8, 8});
    for (double& v : pm.data) v = rng.uniform(0.05, 0.95);
    MaskSequence pred(std::move(pm), 1);

    cfg.reweight_targets = ReweightTargets::focal_only;
    LossBreakdown a = total_loss(pred, gt, cfg);
    cfg.reweight_targets = ReweightTargets::none;
    LossBreakdown b = total_loss(pred, gt, cfg);
    REQUIRE(a.total_value == Catch::Approx(b.total_value).margin(1e-12));
}

TEST_CASE("dice_only moves the weights onto the dice term") {
    ModelConfig cfg;
    cfg.reweight_targets = ReweightTargets::dice_only;
    std::vector<Tensor> gtf = {block_frame(8, 8, 16), block_frame(8, 8, 16),
                               block_frame(8, 8, 8), block_frame(8, 8, 8)};
    MaskSequence gt = seq_from(gtf);
    Rng rng(54);
    Tensor pm({4, 8, 8});
    for (double& v : pm.data) v = rng.uniform(0.05, 0.95);
    MaskSequence pred(std::move(pm), 1);

    LossBreakdown b = total_loss(pred, gt, cfg);
    double manual_dice = 0.0, manual_focal = 0.0;
    for (int t = 0; t < 4; ++t) {
        Tensor pf = pred.frame(t), gf = gt.frame(t);
        double num = 1.0, den = 1.0;
        for (size_t i = 0; i < pf.data.size(); ++i) {
            num += 2.0 * pf.data[i] * gf.data[i];
            den += pf.data[i] + gf.data[i];
        }
        manual_dice += b.reweighting.weights[(size_t)t] * (1.0 - num / den) / 4.0;
        manual_focal += b.per_frame_focal[(size_t)t] / 4.0;
    }
    REQUIRE(b.dice == Catch::Approx(manual_dice).margin(1e-12));
    REQUIRE(b.focal_reweighted == Catch::Approx(manual_focal).margin(1e-12));
}

TEST_CASE("loss gradients agree with finite differences") {
    ModelConfig cfg;
    cfg.reweight_targets = ReweightTargets::both;
    cfg.tau = 0.8;
    std::vector<Tensor> gtf = {block_frame(8, 8, 12), block_frame(8, 8, 12),
                               block_frame(8, 8, 6)};
    MaskSequence gt = seq_from(gtf);

    Rng rng(55);
    std::vector<ag::Var> pred;
    for (int t = 0; t < 3; ++t) {
        Tensor p({8, 8});
        for (double& v : p.data) v = rng.uniform(0.05, 0.95);
        pred.push_back(ag::param(std::move(p)));
    }
    LossBreakdown b = total_loss_var(pred, gt, cfg);
    ag::backward(b.total);

    auto eval = [&](const std::vector<ag::Var>& pv) {
        Tensor m({3, 8, 8});
        for (int t = 0; t < 3; ++t)
            std::copy(pv[(size_t)t]->value.data.begin(), pv[(size_t)t]->value.data.end(),
                      m.data.begin() + (std::int64_t)t * 64);
        return total_loss(MaskSequence(std::move(m), 1), gt, cfg).total_value;
    };

    const double h = 1e-5;
    double max_rel = 0.0;
    for (int t = 0; t < 3; ++t) {
        for (size_t i = 0; i < pred[(size_t)t]->value.data.size(); ++i) {
            const double keep = pred[(size_t)t]->value.data[i];
            pred[(size_t)t]->value.data[i] = keep + h;
            const double up = eval(pred);
            pred[(size_t)t]->value.data[i] = keep - h;
            const double dn = eval(pred);
            pred[(size_t)t]->value.data[i] = keep;
            const double fd = (up - dn) / (2.0 * h);
            const double an = pred[(size_t)t]->grad.data[i];
            const double rel = std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }
    REQUIRE(max_rel < 1e-4);
}
