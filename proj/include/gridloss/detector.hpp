#pragma once

#include "gridloss/features.hpp"
#include "gridloss/geometry.hpp"
#include "gridloss/model.hpp"
#include "gridloss/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace gridloss {

struct Detection {
    BBox bbox; // face box in original-image pixels (square before regression)
    double score = 0.0;
    int pose = 0;
    int level = 0;
    int cell_row = 0, cell_col = 0; // window position on the level, for mining
};

// Dense scan of one pyramid level. The whole level runs through
// conv1 -> ReLU -> LCN -> conv2 -> ReLU once; every 20x20-cell window then
// reads its 12x12 slice of the final map through the folded classifiers, which
// is the fold-back construction that makes the grid layer free at runtime.
inline std::vector<Detection> scan_level(const ChannelMap& level, const DetectorModel& model,
                                         double score_threshold, int stride_cells = 1, int level_index = 0) {
    if (!model.is_folded())
        throw InvalidInput("scan_level: model has no folded classifiers; training-mode models cannot scan");
    if (stride_cells < 1) throw InvalidInput("stride must be >= 1");
    const int win = model.hyper.input_cells;
    const int Hc = level.rows(), Wc = level.cols();
    std::vector<Detection> dets;
    if (Hc < win || Wc < win) return dets;

    Tensor a1 = relu(conv2d(level.channels, model.conv1));
    Tensor l1 = lcn(a1);
    Tensor b = relu(conv2d(l1, model.conv2));

    const int side = model.hyper.output_side(); // window slice of the final map
    const int f2 = model.hyper.f2;
    const int P = static_cast<int>(model.folded.size());
    const double shrink = level.shrink;
    const double face_margin = 0.5 * (model.hyper.window_px - model.hyper.face_px);

    for (int i = 0; i + win <= Hc; i += stride_cells) {
        for (int j = 0; j + win <= Wc; j += stride_cells) {
            double best = -1e300;
            int best_pose = 0;
            for (int p = 0; p < P; ++p) {
                const FoldedClassifier& fc = model.folded[static_cast<std::size_t>(p)];
                double acc = fc.b;
                std::size_t k = 0;
                for (int ch = 0; ch < f2; ++ch)
                    for (int u = 0; u < side; ++u) {
                        const double* row = &b.at(ch, i + u, j);
                        for (int v = 0; v < side; ++v) acc += fc.w[k++] * row[v];
                    }
                if (acc > best) {
                    best = acc;
                    best_pose = p;
                }
            }
            if (best > score_threshold) {
                Detection d;
                d.score = best;
                d.pose = best_pose;
                d.level = level_index;
                d.cell_row = i;
                d.cell_col = j;
                d.bbox.x = (j * shrink + face_margin) / level.scale;
                d.bbox.y = (i * shrink + face_margin) / level.scale;
                d.bbox.w = d.bbox.h = model.hyper.face_px / level.scale;
                dets.push_back(d);
            }
        }
    }
    return dets;
}

// Independent re-evaluation of one window: crops the window plus the 2-cell
// LCN apron from the raw level and runs the full chain standalone. Used to
// check that the shared-map scan scores every window exactly as a one-window
// forward pass would.
inline std::vector<double> evaluate_window_independently(const ChannelMap& level, const DetectorModel& model,
                                                         int cell_row, int cell_col) {
    if (!model.is_folded()) throw InvalidInput("model not folded");
    const int win = model.hyper.input_cells;
    const int apron = 2; // LCN window radius
    const int Hc = level.rows(), Wc = level.cols();
    const int r0 = std::max(0, cell_row - apron), r1 = std::min(Hc, cell_row + win + apron);
    const int c0 = std::max(0, cell_col - apron), c1 = std::min(Wc, cell_col + win + apron);
    Tensor crop({model.hyper.channels, r1 - r0, c1 - c0});
    for (int ch = 0; ch < model.hyper.channels; ++ch)
        for (int i = r0; i < r1; ++i)
            for (int j = c0; j < c1; ++j) crop.at(ch, i - r0, j - c0) = level.channels.at(ch, i, j);

    Tensor a1 = relu(conv2d(crop, model.conv1));
    Tensor l1 = lcn(a1);
    // slice the window region of the normalized hidden map
    const int hr = cell_row - r0, hc = cell_col - c0;
    const int hside = model.hyper.hidden_side();
    Tensor hwin({model.hyper.f1, hside, hside});
    for (int ch = 0; ch < model.hyper.f1; ++ch)
        for (int i = 0; i < hside; ++i)
            for (int j = 0; j < hside; ++j) hwin.at(ch, i, j) = l1.at(ch, hr + i, hc + j);
    Tensor b = relu(conv2d(hwin, model.conv2));

    std::vector<double> scores;
    for (const auto& fc : model.folded) scores.push_back(folded_score(fc.w, fc.b, b));
    return scores;
}

// Greedy NMS with the min-area overlap; ties broken by level then position so
// the kept set is reproducible.
inline std::vector<Detection> nms(std::vector<Detection> dets, double threshold = 0.3) {
    std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.level != b.level) return a.level < b.level;
        if (a.bbox.x != b.bbox.x) return a.bbox.x < b.bbox.x;
        return a.bbox.y < b.bbox.y;
    });
    std::vector<Detection> kept;
    for (const Detection& d : dets) {
        bool suppressed = false;
        for (const Detection& k : kept)
            if (overlap_nms(d.bbox, k.bbox) > threshold) {
                suppressed = true;
                break;
            }
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

// Full pipeline: pyramid, per-level scan, coordinate clamping, NMS.
// Deterministic for fixed inputs at any thread count (levels are reduced in
// level order and NMS is a single final pass).
inline std::vector<Detection> detect(const Tensor& image, const DetectorModel& model, const PyramidConfig& pyr,
                                     double score_threshold, double nms_threshold = 0.3, int threads = 1) {
    if (!model.is_folded()) throw InvalidInput("detect: model has no folded classifiers");
    Pyramid pyramid = build_pyramid(image, pyr);
    const int L = static_cast<int>(pyramid.levels.size());
    std::vector<std::vector<Detection>> per_level(static_cast<std::size_t>(L));
    parallel_for(L, threads, [&](int li) {
        per_level[static_cast<std::size_t>(li)] =
            scan_level(pyramid.levels[static_cast<std::size_t>(li)], model, score_threshold, 1, li);
    });
    std::vector<Detection> all;
    for (auto& v : per_level) all.insert(all.end(), v.begin(), v.end());

    const double W = image.dim(2), H = image.dim(1);
    for (Detection& d : all) {
        d.bbox.w = std::min(d.bbox.w, W);
        d.bbox.h = std::min(d.bbox.h, H);
        d.bbox.x = std::clamp(d.bbox.x, 0.0, W - d.bbox.w);
        d.bbox.y = std::clamp(d.bbox.y, 0.0, H - d.bbox.h);
    }
    return nms(std::move(all), nms_threshold);
}

} // namespace gridloss
