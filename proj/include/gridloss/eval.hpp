#pragma once

#include "gridloss/detector.hpp"
#include "gridloss/geometry.hpp"
#include "gridloss/model.hpp"
#include "gridloss/regressor.hpp"
#include "gridloss/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace gridloss {

enum class MatchMode { discrete, continuous };

struct MatchResult {
    // one entry per detection, in descending-score processing order
    struct Label {
        double score = 0.0;
        bool tp = false;
        double weight = 0.0; // 1 for a discrete TP, the overlap for continuous
        int gt_index = -1;
    };
    std::vector<Label> labels;
    std::vector<bool> gt_matched;
};

// FDDB-style greedy matching per image: detections processed by descending
// score, each claims the unmatched ground truth with the highest PASCAL
// overlap if that overlap exceeds 0.5. Square detection boxes are compared
// through their inscribed ellipses, the same unification rule used for
// box-annotated data.
inline MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<Ellipse>& gts,
                                    MatchMode mode) {
    MatchResult res;
    res.gt_matched.assign(gts.size(), false);
    std::vector<int> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return dets[static_cast<std::size_t>(a)].score > dets[static_cast<std::size_t>(b)].score; });
    for (int di : order) {
        const Detection& d = dets[static_cast<std::size_t>(di)];
        const Ellipse det_e = inscribed_ellipse(d.bbox);
        MatchResult::Label lab;
        lab.score = d.score;
        double best = 0.0;
        int best_gt = -1;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (res.gt_matched[g]) continue;
            const double o = overlap_voc(det_e, gts[g]);
            if (o > best) {
                best = o;
                best_gt = static_cast<int>(g);
            }
        }
        if (best_gt >= 0 && best > 0.5) {
            res.gt_matched[static_cast<std::size_t>(best_gt)] = true;
            lab.tp = true;
            lab.gt_index = best_gt;
            lab.weight = mode == MatchMode::discrete ? 1.0 : best;
        }
        res.labels.push_back(lab);
    }
    return res;
}

struct EvalPoint {
    int fp_count = 0;
    double tpr = 0.0;
    bool truncated = false; // fewer false positives available than requested
};

struct EvalCurve {
    std::vector<EvalPoint> points;
};

// True positive rate at fixed total false-positive counts: pool the per-image
// labels, sweep the score threshold, and report TP mass / total GT at the
// largest threshold admitting at most k false positives.
inline EvalCurve tpr_at_fp(const std::vector<MatchResult>& per_image, std::size_t total_gt,
                           const std::vector<int>& fp_counts) {
    std::vector<MatchResult::Label> all;
    for (const auto& r : per_image) all.insert(all.end(), r.labels.begin(), r.labels.end());
    std::stable_sort(all.begin(), all.end(),
                     [](const MatchResult::Label& a, const MatchResult::Label& b) { return a.score > b.score; });

    EvalCurve curve;
    for (int k : fp_counts) {
        int fp = 0;
        double tp_mass = 0.0, best_mass = 0.0;
        for (const auto& lab : all) {
            if (lab.tp) {
                tp_mass += lab.weight;
            } else {
                if (fp + 1 > k) break;
                ++fp;
            }
            best_mass = tp_mass;
        }
        EvalPoint pt;
        pt.fp_count = k;
        pt.tpr = total_gt > 0 ? best_mass / static_cast<double>(total_gt) : 0.0;
        pt.truncated = fp < k; // ran out of detections before k false positives
        curve.points.push_back(pt);
    }
    return curve;
}

// ---- feature correlation statistic ----

// Sum of absolute off-diagonal entries of the Pearson correlation matrix over
// samples; constant channels correlate 0 by convention.
inline double correlation_stat(const std::vector<std::vector<double>>& activations) {
    const std::size_t S = activations.size();
    if (S < 2) throw InvalidInput("correlation_stat needs >= 2 samples");
    const std::size_t F = activations[0].size();
    std::vector<double> mean(F, 0.0), var(F, 0.0);
    for (const auto& row : activations) {
        if (row.size() != F) throw InvalidInput("correlation_stat: ragged activation rows");
        for (std::size_t f = 0; f < F; ++f) mean[f] += row[f];
    }
    for (std::size_t f = 0; f < F; ++f) mean[f] /= static_cast<double>(S);
    for (const auto& row : activations)
        for (std::size_t f = 0; f < F; ++f) {
            const double d = row[f] - mean[f];
            var[f] += d * d;
        }
    double total = 0.0;
    for (std::size_t i = 0; i < F; ++i) {
        if (var[i] <= 0.0) continue;
        for (std::size_t j = i + 1; j < F; ++j) {
            if (var[j] <= 0.0) continue;
            double cov = 0.0;
            for (const auto& row : activations) cov += (row[i] - mean[i]) * (row[j] - mean[j]);
            total += 2.0 * std::abs(cov / std::sqrt(var[i] * var[j]));
        }
    }
    return total;
}

// Paper-faithful variant: an FxF correlation matrix at every spatial location
// of the map, off-diagonal magnitudes summed over all locations.
inline double correlation_stat_map(const std::vector<Tensor>& maps) {
    if (maps.size() < 2) throw InvalidInput("correlation_stat_map needs >= 2 samples");
    const int F = maps[0].dim(0), H = maps[0].dim(1), W = maps[0].dim(2);
    double total = 0.0;
    std::vector<std::vector<double>> acts(maps.size(), std::vector<double>(static_cast<std::size_t>(F)));
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            for (std::size_t s = 0; s < maps.size(); ++s)
                for (int f = 0; f < F; ++f) acts[s][static_cast<std::size_t>(f)] = maps[s].at(f, i, j);
            total += correlation_stat(acts);
        }
    return total;
}

// Channel-pooled activations (mean over locations) of the final convolution
// map for a batch of windows.
inline std::vector<std::vector<double>> collect_pooled_activations(const DetectorModel& m,
                                                                   const std::vector<TrainSample>& windows) {
    std::vector<std::vector<double>> out;
    for (const auto& s : windows) {
        ForwardCache c = detector_forward(m, s.channels, false);
        const int F = c.d.dim(0);
        const int HW = c.d.dim(1) * c.d.dim(2);
        std::vector<double> row(static_cast<std::size_t>(F), 0.0);
        for (int f = 0; f < F; ++f) {
            const double* p = &c.d.at(f, 0, 0);
            double acc = 0.0;
            for (int k = 0; k < HW; ++k) acc += p[k];
            row[static_cast<std::size_t>(f)] = acc / HW;
        }
        out.push_back(std::move(row));
    }
    return out;
}

inline std::vector<Tensor> collect_final_maps(const DetectorModel& m, const std::vector<TrainSample>& windows) {
    std::vector<Tensor> out;
    for (const auto& s : windows) out.push_back(detector_forward(m, s.channels, false).d);
    return out;
}

// ---- FPPI anchoring and occlusion harness ----

// Score threshold admitting at most `fppi` false positives per image over a
// face-free image set.
inline double fppi_threshold(const DetectorModel& model, const std::vector<const Tensor*>& negative_images,
                             double fppi, const PyramidConfig& pyr, int threads = 1) {
    std::vector<double> scores;
    for (const Tensor* img : negative_images) {
        auto dets = detect(*img, model, pyr, -1e300, 0.3, threads);
        for (const auto& d : dets) scores.push_back(d.score);
    }
    std::sort(scores.begin(), scores.end(), std::greater<>());
    const std::size_t allowed = static_cast<std::size_t>(fppi * static_cast<double>(negative_images.size()));
    if (allowed >= scores.size()) return scores.empty() ? 0.0 : scores.back() - 1.0;
    return scores[allowed];
}

// Overwrite a contiguous rectangle covering `fraction` of the window area with
// seeded noise.
inline Tensor occlude_window(const Tensor& window, double fraction, Rng& rng) {
    if (fraction <= 0.0) return window;
    Tensor out = window;
    const int H = window.dim(1), W = window.dim(2);
    const double area = fraction * H * W;
    const double aspect = rng.uniform(0.5, 2.0);
    int w = static_cast<int>(std::lround(std::sqrt(area * aspect)));
    w = std::clamp(w, 1, W);
    int h = static_cast<int>(std::lround(area / w));
    h = std::clamp(h, 1, H);
    const int x0 = rng.uniform_int(W - w + 1);
    const int y0 = rng.uniform_int(H - h + 1);
    for (int i = y0; i < y0 + h; ++i)
        for (int j = x0; j < x0 + w; ++j)
            for (int c = 0; c < 3; ++c) out.at(c, i, j) = rng.uniform(0.0, 1.0);
    return out;
}

struct OcclusionResult {
    double recall_a = 0.0, recall_b = 0.0;
    double threshold_a = 0.0, threshold_b = 0.0;
};

// Table-3 style harness: anchor each model at 0.1 FPPI on clean negatives,
// then measure recall on positive 80x80 pixel windows with a noise rectangle
// covering `occlusion_fraction` of their area.
inline OcclusionResult occlusion_experiment(const DetectorModel& model_a, const DetectorModel& model_b,
                                            const std::vector<Tensor>& positive_windows_px,
                                            const std::vector<const Tensor*>& clean_negative_images,
                                            double occlusion_fraction, const PyramidConfig& pyr,
                                            std::uint64_t seed, double fppi = 0.1, int threads = 1) {
    OcclusionResult res;
    res.threshold_a = fppi_threshold(model_a, clean_negative_images, fppi, pyr, threads);
    res.threshold_b = fppi_threshold(model_b, clean_negative_images, fppi, pyr, threads);
    Rng rng(seed);
    int hit_a = 0, hit_b = 0;
    for (std::size_t i = 0; i < positive_windows_px.size(); ++i) {
        Rng wrng = rng.fork(i);
        Tensor occluded = occlude_window(positive_windows_px[i], occlusion_fraction, wrng);
        Tensor channels = compute_channels(occluded).channels;
        if (window_score(model_a, channels).first > res.threshold_a) ++hit_a;
        if (window_score(model_b, channels).first > res.threshold_b) ++hit_b;
    }
    const double n = positive_windows_px.empty() ? 1.0 : static_cast<double>(positive_windows_px.size());
    res.recall_a = hit_a / n;
    res.recall_b = hit_b / n;
    return res;
}

// ---- detection-level evaluation over a manifest ----

struct DatasetEval {
    EvalCurve curve;
    std::size_t total_gt = 0;
    int total_images = 0;
};

inline DatasetEval evaluate_detector(const DetectorModel& model, const DatasetManifest& test,
                                     const ImageLoader& load, const PyramidConfig& pyr,
                                     const std::vector<int>& fp_counts, MatchMode mode = MatchMode::discrete,
                                     int threads = 1) {
    DatasetEval ev;
    std::vector<MatchResult> results;
    for (const auto& entry : test.entries) {
        Tensor img = load(entry.path);
        auto dets = detect(img, model, pyr, -1e300, 0.3, threads);
        results.push_back(match_detections(dets, entry.ellipses, mode));
        ev.total_gt += entry.ellipses.size();
        ++ev.total_images;
    }
    ev.curve = tpr_at_fp(results, ev.total_gt, fp_counts);
    return ev;
}

// TPR at 0.1 false positives per image, the paper's main operating point.
inline double tpr_at_fppi(const DetectorModel& model, const DatasetManifest& test, const ImageLoader& load,
                          const PyramidConfig& pyr, double fppi = 0.1, int threads = 1) {
    const int images = static_cast<int>(test.entries.size());
    const int k = std::max(0, static_cast<int>(fppi * images));
    DatasetEval ev = evaluate_detector(model, test, load, pyr, {k}, MatchMode::discrete, threads);
    return ev.curve.points.empty() ? 0.0 : ev.curve.points[0].tpr;
}

// ---- training-set size sweep (Table 5 analogue) ----

struct SweepRow {
    std::string loss_type;
    double fraction = 1.0;
    double mean_tpr = 0.0;
};

inline std::vector<TrainSample> subsample_positives(const std::vector<TrainSample>& positives, double fraction,
                                                    std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidInput("fraction must be in (0,1]");
    const int keep = std::max(1, static_cast<int>(std::lround(fraction * static_cast<double>(positives.size()))));
    std::vector<int> idx(positives.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    rng.shuffle(idx);
    std::vector<TrainSample> out;
    for (int i = 0; i < keep; ++i) out.push_back(positives[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
    if (out.empty()) throw InvalidInput("fraction yields zero positives");
    return out;
}

// Trains a grid and a hinge model per (fraction, seed) cell on subsampled
// positives and reports the seed-mean TPR at 0.1 FPPI for each.
inline std::vector<SweepRow> dataset_size_sweep(const std::vector<TrainSample>& positives,
                                                const std::vector<TrainSample>& negatives,
                                                const DatasetManifest& test, const ImageLoader& load,
                                                const std::vector<double>& fractions,
                                                const std::vector<std::uint64_t>& seeds, const TrainConfig& base) {
    std::vector<SweepRow> rows;
    for (double frac : fractions) {
        double sum_grid = 0.0, sum_hinge = 0.0;
        for (std::uint64_t seed : seeds) {
            auto pos = subsample_positives(positives, frac, seed * 7919 + 13);
            for (const char* lt : {"grid", "hinge"}) {
                TrainConfig cfg = base;
                cfg.loss_type = lt;
                cfg.seed = seed;
                DetectorModel m = train(pos, negatives, cfg);
                const double tpr = tpr_at_fppi(m, test, load, cfg.pyramid, 0.1, cfg.threads);
                (cfg.loss_type == "grid" ? sum_grid : sum_hinge) += tpr;
            }
        }
        rows.push_back({"grid", frac, sum_grid / static_cast<double>(seeds.size())});
        rows.push_back({"hinge", frac, sum_hinge / static_cast<double>(seeds.size())});
    }
    return rows;
}

} // namespace gridloss
