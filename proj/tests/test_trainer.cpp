#include "gridloss/trainer.hpp"
#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace gridloss;

namespace {

// stripe patterns that survive LCN: positives vertical, negatives horizontal
Tensor stripe_window(bool vertical, Rng& rng) {
    Tensor t({10, 20, 20});
    for (int c = 0; c < 10; ++c)
        for (int i = 0; i < 20; ++i)
            for (int j = 0; j < 20; ++j) {
                const int phase = vertical ? j : i;
                t.at(c, i, j) = (phase % 2 == 0 ? 1.5 : 0.2) + 0.05 * rng.uniform(-1.0, 1.0);
            }
    return t;
}

std::vector<TrainSample> stripe_set(bool vertical, int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<TrainSample> out;
    for (int i = 0; i < n; ++i) out.push_back({stripe_window(vertical, rng), 0});
    return out;
}

bool models_identical(const DetectorModel& a, const DetectorModel& b) {
    std::vector<const std::vector<double>*> av, bv;
    visit_model_arrays(const_cast<DetectorModel&>(a), [&](std::vector<double>& x) { av.push_back(&x); });
    visit_model_arrays(const_cast<DetectorModel&>(b), [&](std::vector<double>& x) { bv.push_back(&x); });
    if (av.size() != bv.size()) return false;
    for (std::size_t i = 0; i < av.size(); ++i)
        if (*av[i] != *bv[i]) return false;
    return true;
}

} // namespace

TEST_CASE("init_weights moments match the 0.01 Gaussian") {
    Tensor t = init_weights({100000}, 42);
    double mean = 0.0;
    for (double v : t.data) mean += v;
    mean /= static_cast<double>(t.numel());
    double var = 0.0;
    for (double v : t.data) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(t.numel()));
    CHECK(std::abs(mean) < 5e-4);
    CHECK(sd > 0.0095);
    CHECK(sd < 0.0105);
}

TEST_CASE("init_weights is seed deterministic and seed sensitive") {
    Tensor a = init_weights({5000}, 7), b = init_weights({5000}, 7), c = init_weights({5000}, 8);
    CHECK(a.data == b.data);
    int differing = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        if (a.data[i] != c.data[i]) ++differing;
    CHECK(differing > static_cast<int>(0.99 * static_cast<double>(a.data.size())));
}

TEST_CASE("sgd with zero momentum is plain gradient descent") {
    std::vector<double> p{1.0, -2.0};
    std::vector<double> g{0.5, 0.25};
    std::vector<double> v{0.0, 0.0};
    sgd_momentum_step(p, g, v, 0.1, 0.0);
    CHECK(p[0] == 1.0 - 0.1 * 0.5);
    CHECK(p[1] == -2.0 - 0.1 * 0.25);
}

TEST_CASE("velocity decays geometrically without gradients") {
    std::vector<double> p{0.0};
    std::vector<double> g{0.0};
    std::vector<double> v{1.0};
    for (int i = 0; i < 5; ++i) sgd_momentum_step(p, g, v, 0.1, 0.9);
    CHECK(std::abs(v[0] - std::pow(0.9, 5)) < 1e-12);
}

TEST_CASE("momentum SGD converges on a 1-d quadratic") {
    double x = 10.0, vel = 0.0;
    int steps = 0;
    for (; steps < 500; ++steps) {
        std::vector<double> p{x}, g{x - 3.0}, v{vel};
        sgd_momentum_step(p, g, v, 0.1, 0.9);
        x = p[0];
        vel = v[0];
        if (std::abs(x - 3.0) < 1e-6) break;
    }
    CHECK(steps < 500);
}

TEST_CASE("training drives a separable stripe problem to zero loss") {
    auto pos = stripe_set(true, 24, 1);
    auto neg = stripe_set(false, 24, 2);
    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.batch_size = 16;
    cfg.lr = 0.05;
    cfg.dropout = 0.0;
    cfg.f1 = 4;
    cfg.f2 = 4;
    cfg.pose_count = 1;
    cfg.mirror_positives = false;
    cfg.seed = 3;
    TrainLog log;
    DetectorModel m = train(pos, neg, cfg, &log);
    CHECK(m.is_folded());
    CHECK(log.train_loss.back() < 1e-6);
}

TEST_CASE("training is bit-deterministic in the seed and thread count") {
    auto pos = stripe_set(true, 10, 4);
    auto neg = stripe_set(false, 10, 5);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.f1 = 3;
    cfg.f2 = 3;
    cfg.pose_count = 1;
    cfg.seed = 9;
    DetectorModel a = train(pos, neg, cfg);
    DetectorModel b = train(pos, neg, cfg);
    CHECK(models_identical(a, b));
    TrainConfig threaded = cfg;
    threaded.threads = 4;
    DetectorModel c = train(pos, neg, threaded);
    CHECK(models_identical(a, c));
}

TEST_CASE("grid with lambda 0 trains identically to hinge") {
    auto pos = stripe_set(true, 8, 6);
    auto neg = stripe_set(false, 8, 7);
    TrainConfig grid0;
    grid0.epochs = 4;
    grid0.batch_size = 8;
    grid0.f1 = 3;
    grid0.f2 = 3;
    grid0.pose_count = 1;
    grid0.seed = 11;
    grid0.loss_type = "grid";
    grid0.lambda = 0.0;
    grid0.deep_supervision = false;
    TrainConfig hinge = grid0;
    hinge.loss_type = "hinge";
    hinge.lambda = 1.0; // ignored by the hinge objective
    DetectorModel a = train(pos, neg, grid0);
    DetectorModel b = train(pos, neg, hinge);
    CHECK(models_identical(a, b));
}

TEST_CASE("returned model has the best validation loss") {
    auto pos = stripe_set(true, 16, 8);
    auto neg = stripe_set(false, 16, 9);
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.batch_size = 8;
    cfg.f1 = 3;
    cfg.f2 = 3;
    cfg.pose_count = 1;
    cfg.seed = 13;
    TrainLog log;
    train(pos, neg, cfg, &log);
    REQUIRE(log.best_epoch >= 0);
    for (double v : log.val_loss)
        CHECK(log.val_loss[static_cast<std::size_t>(log.best_epoch)] <= v + 1e-15);
}

TEST_CASE("empty classes are rejected") {
    auto pos = stripe_set(true, 4, 10);
    TrainConfig cfg;
    CHECK_THROWS_AS(train(pos, {}, cfg), InvalidInput);
    CHECK_THROWS_AS(train({}, pos, cfg), InvalidInput);
}

TEST_CASE("end-to-end gradients match finite differences") {
    Rng rng(15);
    DetectorHyper h;
    h.f1 = 2;
    h.f2 = 2;
    h.pose_count = 1;
    h.dropout_rate = 0.1;
    h.deep_supervision = true;
    DetectorModel m = init_detector(h, 33);
    // move activations and hinge margins away from their kinks: the 0.01 init
    // leaves everything at the nondifferentiable points
    for (double& v : m.conv1.weights.data) v *= 30.0;
    for (double& v : m.conv2.weights.data) v *= 30.0;
    for (auto& cls : m.output_cls)
        for (auto& w : cls.block_weights)
            for (double& v : w) v *= 10.0;
    for (auto& cls : m.hidden_cls)
        for (auto& w : cls.block_weights)
            for (double& v : w) v *= 10.0;

    std::vector<Tensor> windows;
    std::vector<int> labels{1, -1, 1};
    for (int i = 0; i < 3; ++i) windows.push_back(oracle::random_tensor({10, 20, 20}, rng, 0.0, 3.0));

    // keep only samples whose hinge slacks are well away from zero
    auto margin_ok = [&](const Tensor& win, int label) {
        ForwardCache c = detector_forward(m, win, true, 901);
        for (const auto& cls : {m.output_cls[0]}) {
            LossBreakdown out = grid_loss_forward(c.d, cls, label);
            if (std::abs(1.0 - label * out.global_score) < 0.01) return false;
            for (double s : out.block_scores)
                if (std::abs(cls.spec.margin() - label * s) < 0.01) return false;
        }
        LossBreakdown aux = grid_loss_forward(c.h, m.hidden_cls[0], label);
        if (std::abs(1.0 - label * aux.global_score) < 0.01) return false;
        for (double s : aux.block_scores)
            if (std::abs(m.hidden_cls[0].spec.margin() - label * s) < 0.01) return false;
        return true;
    };
    for (int i = 0; i < 3; ++i) {
        Rng redraw(static_cast<std::uint64_t>(400 + i));
        while (!margin_ok(windows[static_cast<std::size_t>(i)], labels[static_cast<std::size_t>(i)]))
            windows[static_cast<std::size_t>(i)] = oracle::random_tensor({10, 20, 20}, redraw, 0.0, 3.0);
    }

    auto total_loss = [&]() {
        double l = 0.0;
        for (int i = 0; i < 3; ++i)
            l += sample_loss(m, windows[static_cast<std::size_t>(i)], 0, labels[static_cast<std::size_t>(i)], true,
                             static_cast<std::uint64_t>(900 + i));
        return l;
    };
    ModelGrads grads = ModelGrads::zeros_like(m);
    for (int i = 0; i < 3; ++i)
        sample_loss(m, windows[static_cast<std::size_t>(i)], 0, labels[static_cast<std::size_t>(i)], true,
                    static_cast<std::uint64_t>(900 + i), &grads);

    // sampled parameter slots across every parameter family
    Rng pick(16);
    auto check_slot = [&](std::vector<double>& param, const std::vector<double>& grad) {
        const std::size_t i = static_cast<std::size_t>(pick.uniform_int(static_cast<int>(param.size())));
        CHECK(oracle::grad_close(grad[i], oracle::central_diff(param[i], total_loss, 1e-4), 1e-3, 1e-5));
    };
    for (int t = 0; t < 12; ++t) check_slot(m.conv1.weights.data, grads.conv1_w.data);
    for (int t = 0; t < 12; ++t) check_slot(m.conv2.weights.data, grads.conv2_w.data);
    for (int t = 0; t < 2; ++t) check_slot(m.conv1.bias.data, grads.conv1_b.data);
    for (int t = 0; t < 8; ++t) check_slot(m.output_cls[0].block_weights[3], grads.output[0].w[3]);
    for (int t = 0; t < 8; ++t) check_slot(m.hidden_cls[0].block_weights[5], grads.hidden[0].w[5]);
    check_slot(m.output_cls[0].block_biases, grads.output[0].b);
    check_slot(m.hidden_cls[0].block_biases, grads.hidden[0].b);
}

TEST_CASE("model save/load preserves scores exactly") {
    auto pos = stripe_set(true, 6, 20);
    auto neg = stripe_set(false, 6, 21);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.f1 = 3;
    cfg.f2 = 3;
    cfg.pose_count = 2;
    cfg.seed = 17;
    DetectorModel m = train(pos, neg, cfg);
    std::ostringstream os;
    save_model(m, os);
    std::istringstream in(os.str());
    DetectorModel back = load_model(in, "mem");

    Rng rng(22);
    for (int t = 0; t < 5; ++t) {
        Tensor win = oracle::random_tensor({10, 20, 20}, rng, 0.0, 3.0);
        auto [s1, p1] = window_score(m, win);
        auto [s2, p2] = window_score(back, win);
        CHECK(std::abs(s1 - s2) < 1e-12);
        CHECK(p1 == p2);
    }
    // a second save is byte-identical
    std::ostringstream os2;
    save_model(back, os2);
    CHECK(os.str() == os2.str());
}

TEST_CASE("mining respects the threshold and the per-round cap") {
    DetectorHyper h;
    h.f1 = 2;
    h.f2 = 2;
    DetectorModel zero = init_detector(h, 2);
    for (auto& cls : zero.output_cls) {
        for (auto& w : cls.block_weights) std::fill(w.begin(), w.end(), 0.0);
        std::fill(cls.block_biases.begin(), cls.block_biases.end(), 0.0);
    }
    fold_model(zero);

    Rng rng(23);
    std::vector<Tensor> imgs;
    for (int i = 0; i < 2; ++i) imgs.push_back(oracle::random_tensor({3, 120, 120}, rng, 0.0, 1.0));
    std::vector<const Tensor*> ptrs{&imgs[0], &imgs[1]};

    TrainConfig cfg;
    cfg.bootstrap_threshold = 0.1; // all scores are exactly 0
    MinedNegatives none = mine_hard_negatives(zero, ptrs, cfg);
    CHECK(none.windows.empty());

    DetectorModel hot = zero;
    for (auto& fc : hot.folded) fc.b = 1.0; // every window fires
    cfg.bootstrap_threshold = 0.5;
    cfg.negatives_per_round = 3;
    MinedNegatives capped = mine_hard_negatives(hot, ptrs, cfg);
    CHECK(capped.windows.size() <= 3);
    CHECK(capped.detections_seen > 0);
    for (const auto& w : capped.windows) CHECK(w.channels.shape == std::vector<int>{10, 20, 20});
}
