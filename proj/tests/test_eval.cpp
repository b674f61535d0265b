#include "gridloss/eval.hpp"
#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace gridloss;

namespace {

Detection det_at(double x, double y, double side, double score) {
    Detection d;
    d.bbox = {x, y, side, side};
    d.score = score;
    return d;
}

Ellipse gt_circle(double cx, double cy, double r) {
    Ellipse e;
    e.major = e.minor = r;
    e.cx = cx;
    e.cy = cy;
    return e;
}

} // namespace

TEST_CASE("perfect detections match every ground truth without false positives") {
    std::vector<Ellipse> gts{gt_circle(50, 50, 20), gt_circle(150, 60, 25)};
    std::vector<Detection> dets{det_at(30, 30, 40, 0.9), det_at(125, 35, 50, 0.8)};
    MatchResult r = match_detections(dets, gts, MatchMode::discrete);
    REQUIRE(r.labels.size() == 2);
    CHECK(r.labels[0].tp);
    CHECK(r.labels[1].tp);
    CHECK(r.gt_matched[0]);
    CHECK(r.gt_matched[1]);
}

TEST_CASE("a second detection on the same ground truth is a false positive") {
    std::vector<Ellipse> gts{gt_circle(50, 50, 20)};
    std::vector<Detection> dets{det_at(30, 30, 40, 0.9), det_at(31, 30, 40, 0.7)};
    MatchResult r = match_detections(dets, gts, MatchMode::discrete);
    CHECK(r.labels[0].tp);
    CHECK_FALSE(r.labels[1].tp);
}

TEST_CASE("continuous mode weights a match by its overlap") {
    std::vector<Ellipse> gts{gt_circle(50, 50, 20)};
    std::vector<Detection> dets{det_at(34, 32, 40, 0.9)}; // slightly offset
    MatchResult r = match_detections(dets, gts, MatchMode::continuous);
    REQUIRE(r.labels.size() == 1);
    REQUIRE(r.labels[0].tp);
    const double o = overlap_voc(inscribed_ellipse(dets[0].bbox), gts[0]);
    CHECK(r.labels[0].weight == o);
    CHECK(o > 0.5);
    CHECK(o < 1.0);

    MatchResult rd = match_detections(dets, gts, MatchMode::discrete);
    CHECK(rd.labels[0].weight == 1.0);
}

TEST_CASE("tpr_at_fp handles zero detections and a perfect prefix") {
    EvalCurve empty = tpr_at_fp({}, 10, {0, 50});
    for (const auto& p : empty.points) CHECK(p.tpr == 0.0);
    CHECK_FALSE(empty.points[0].truncated); // zero false positives admitted at k = 0
    CHECK(empty.points[1].truncated);       // fewer detections than the 50 requested

    MatchResult r;
    r.labels = {{0.9, true, 1.0, 0}, {0.8, true, 1.0, 1}, {0.7, false, 0.0, -1}};
    EvalCurve c = tpr_at_fp({r}, 2, {0});
    CHECK(c.points[0].tpr == 1.0);
}

TEST_CASE("tpr_at_fp matches a hand-computed five-detection scenario") {
    MatchResult r;
    r.labels = {{0.9, true, 1.0, 0}, {0.8, false, 0.0, -1}, {0.7, true, 1.0, 1},
                {0.6, false, 0.0, -1}, {0.5, true, 1.0, 2}};
    EvalCurve c = tpr_at_fp({r}, 4, {0, 1, 2});
    CHECK(c.points[0].tpr == 0.25);
    CHECK(c.points[1].tpr == 0.5);
    CHECK(c.points[2].tpr == 0.75);
    CHECK_FALSE(c.points[2].truncated);
    EvalCurve trunc = tpr_at_fp({r}, 4, {5});
    CHECK(trunc.points[0].truncated);

    // monotone in the allowed false positive count
    for (std::size_t i = 1; i < c.points.size(); ++i) CHECK(c.points[i].tpr >= c.points[i - 1].tpr);
}

TEST_CASE("correlation_stat extremes") {
    Rng rng(3);
    const int S = 200, F = 4;
    std::vector<std::vector<double>> same(S, std::vector<double>(F));
    for (int s = 0; s < S; ++s) {
        const double v = rng.uniform(-1.0, 1.0);
        for (int f = 0; f < F; ++f) same[static_cast<std::size_t>(s)][static_cast<std::size_t>(f)] = v;
    }
    CHECK(std::abs(correlation_stat(same) - F * (F - 1)) < 1e-9);

    std::vector<std::vector<double>> anti(S, std::vector<double>(2));
    for (int s = 0; s < S; ++s) {
        const double v = rng.uniform(-1.0, 1.0);
        anti[static_cast<std::size_t>(s)] = {v, -v};
    }
    CHECK(std::abs(correlation_stat(anti) - 2.0) < 1e-9);
}

TEST_CASE("independent noise has a small correlation statistic") {
    Rng rng(4);
    const int S = 10000, F = 8;
    std::vector<std::vector<double>> acts(S, std::vector<double>(F));
    for (auto& row : acts)
        for (double& v : row) v = rng.normal();
    CHECK(correlation_stat(acts) < 0.1 * F * (F - 1));
}

TEST_CASE("correlation_stat is invariant to positive per-channel affine maps") {
    Rng rng(5);
    const int S = 300, F = 5;
    std::vector<std::vector<double>> acts(S, std::vector<double>(F));
    for (auto& row : acts)
        for (double& v : row) v = rng.normal();
    const double base = correlation_stat(acts);
    auto scaled = acts;
    for (auto& row : scaled)
        for (int f = 0; f < F; ++f)
            row[static_cast<std::size_t>(f)] = row[static_cast<std::size_t>(f)] * (1.0 + f) + 0.3 * f;
    CHECK(std::abs(correlation_stat(scaled) - base) < 1e-9);

    // constant channels contribute zero by convention
    auto constant = acts;
    for (auto& row : constant) row[0] = 7.0;
    CHECK(std::isfinite(correlation_stat(constant)));
}

TEST_CASE("per-location correlation reduces to the pooled form on 1x1 maps") {
    Rng rng(6);
    const int S = 50, F = 3;
    std::vector<Tensor> maps;
    std::vector<std::vector<double>> rows;
    for (int s = 0; s < S; ++s) {
        Tensor t({F, 1, 1});
        std::vector<double> row(F);
        for (int f = 0; f < F; ++f) {
            t.at(f, 0, 0) = rng.normal();
            row[static_cast<std::size_t>(f)] = t.at(f, 0, 0);
        }
        maps.push_back(std::move(t));
        rows.push_back(std::move(row));
    }
    CHECK(std::abs(correlation_stat_map(maps) - correlation_stat(rows)) < 1e-9);
}

TEST_CASE("zero occlusion fraction reproduces the clean recall") {
    Rng rng(7);
    DetectorHyper h;
    h.f1 = 2;
    h.f2 = 2;
    h.pose_count = 1;
    DetectorModel m = init_detector(h, 3);
    Rng wr(8);
    for (auto& cls : m.output_cls)
        for (auto& w : cls.block_weights)
            for (double& v : w) v = wr.normal(0.0, 0.1);
    fold_model(m);

    std::vector<Tensor> windows;
    for (int i = 0; i < 12; ++i) windows.push_back(oracle::random_tensor({3, 80, 80}, rng, 0.0, 1.0));
    std::vector<Tensor> negs;
    for (int i = 0; i < 2; ++i) negs.push_back(oracle::random_tensor({3, 120, 120}, rng, 0.0, 1.0));
    std::vector<const Tensor*> neg_ptrs{&negs[0], &negs[1]};

    OcclusionResult res = occlusion_experiment(m, m, windows, neg_ptrs, 0.0, PyramidConfig{2, 20}, 99);
    CHECK(res.recall_a == res.recall_b);
    CHECK(res.threshold_a == res.threshold_b);

    // clean recall computed directly at the same threshold
    int hits = 0;
    for (const auto& w : windows)
        if (window_score(m, compute_channels(w).channels).first > res.threshold_a) ++hits;
    CHECK(res.recall_a == static_cast<double>(hits) / static_cast<double>(windows.size()));
}

TEST_CASE("subsampling positives is seeded and validates its fraction") {
    Rng rng(9);
    std::vector<TrainSample> pos;
    for (int i = 0; i < 20; ++i) pos.push_back({oracle::random_tensor({10, 20, 20}, rng), 0});
    auto all = subsample_positives(pos, 1.0, 4);
    CHECK(all.size() == 20);
    auto some = subsample_positives(pos, 0.25, 4);
    CHECK(some.size() == 5);
    auto same = subsample_positives(pos, 0.25, 4);
    for (std::size_t i = 0; i < some.size(); ++i) CHECK(some[i].channels.data == same[i].channels.data);
    CHECK_THROWS_AS(subsample_positives(pos, 0.0, 4), InvalidInput);
    CHECK_THROWS_AS(subsample_positives(pos, 1.5, 4), InvalidInput);
}
