#pragma once

#include "gridloss/rng.hpp"
#include "gridloss/tensor.hpp"

#include <cmath>
#include <utility>
#include <vector>

namespace gridloss {

// Block layout over an [f,r,c] feature map: ceil(r/n) x ceil(c/n) spatial
// blocks of side n, edge blocks keeping the leftover rows/cols. The per-block
// hinge margin is 1/N so the N parts jointly account for the unit margin.
struct GridSpec {
    int n = 2;
    int f = 0, r = 0, c = 0;
    double lambda = 1.0;

    int blocks_per_row() const { return (c + n - 1) / n; }
    int blocks_per_col() const { return (r + n - 1) / n; }
    int block_count() const { return blocks_per_col() * blocks_per_row(); }
    double margin() const { return 1.0 / block_count(); }

    void validate() const {
        if (n < 1) throw InvalidInput("grid block side must be >= 1, got " + std::to_string(n));
        if (f < 1 || r < 1 || c < 1)
            throw InvalidInput("grid map dims must be positive, got f=" + std::to_string(f) + " r=" +
                               std::to_string(r) + " c=" + std::to_string(c));
    }

    // spatial extent of block i in row-major block order
    struct BlockRect {
        int r0, r1, c0, c1; // half-open
        int rows() const { return r1 - r0; }
        int cols() const { return c1 - c0; }
    };
    BlockRect block_rect(int i) const {
        const int bpr = blocks_per_row();
        const int bi = i / bpr, bj = i % bpr;
        BlockRect b;
        b.r0 = bi * n;
        b.r1 = std::min(r, b.r0 + n);
        b.c0 = bj * n;
        b.c1 = std::min(c, b.c0 + n);
        return b;
    }
};

// Vectorize each block: all f channels restricted to the block, channel-major,
// rows then cols inside a channel. Blocks tile the map exactly.
inline std::vector<std::vector<double>> partition_blocks(const Tensor& x, int n) {
    if (x.ndim() != 3) throw InvalidInput("partition_blocks input must be [f,r,c], got " + x.shape_str());
    GridSpec spec;
    spec.n = n;
    spec.f = x.dim(0);
    spec.r = x.dim(1);
    spec.c = x.dim(2);
    spec.validate();
    const int N = spec.block_count();
    std::vector<std::vector<double>> blocks(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) {
        const auto b = spec.block_rect(i);
        auto& v = blocks[static_cast<std::size_t>(i)];
        v.reserve(static_cast<std::size_t>(spec.f) * b.rows() * b.cols());
        for (int ch = 0; ch < spec.f; ++ch)
            for (int p = b.r0; p < b.r1; ++p)
                for (int q = b.c0; q < b.c1; ++q) v.push_back(x.at(ch, p, q));
    }
    return blocks;
}

// N part classifiers (w_i, b_i) over the blocks of one feature map. The global
// classifier is their concatenation; see fold_back().
struct GridClassifier {
    GridSpec spec;
    std::vector<std::vector<double>> block_weights;
    std::vector<double> block_biases;

    static GridClassifier zeros(const GridSpec& spec) {
        spec.validate();
        GridClassifier g;
        g.spec = spec;
        const int N = spec.block_count();
        g.block_weights.resize(static_cast<std::size_t>(N));
        g.block_biases.assign(static_cast<std::size_t>(N), 0.0);
        for (int i = 0; i < N; ++i) {
            const auto b = spec.block_rect(i);
            g.block_weights[static_cast<std::size_t>(i)].assign(
                static_cast<std::size_t>(spec.f) * b.rows() * b.cols(), 0.0);
        }
        return g;
    }

    static GridClassifier random_init(const GridSpec& spec, Rng& rng, double stddev = 0.01) {
        GridClassifier g = zeros(spec);
        for (auto& w : g.block_weights)
            for (double& v : w) v = rng.normal(0.0, stddev);
        return g;
    }

    void check_map(const Tensor& x) const {
        require_shape(x, {spec.f, spec.r, spec.c}, "grid classifier input");
    }

    long long weight_count() const {
        long long n = 0;
        for (const auto& w : block_weights) n += static_cast<long long>(w.size());
        return n;
    }
};

struct LossBreakdown {
    double total = 0.0;
    double holistic_term = 0.0;
    std::vector<double> local_terms;
    double global_score = 0.0;
    std::vector<double> block_scores;
};

inline std::vector<double> block_scores(const Tensor& x, const GridClassifier& g) {
    g.check_map(x);
    const int N = g.spec.block_count();
    std::vector<double> scores(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) {
        const auto b = g.spec.block_rect(i);
        const auto& w = g.block_weights[static_cast<std::size_t>(i)];
        double acc = g.block_biases[static_cast<std::size_t>(i)];
        std::size_t k = 0;
        for (int ch = 0; ch < g.spec.f; ++ch)
            for (int p = b.r0; p < b.r1; ++p) {
                const double* row = &x.at(ch, p, b.c0);
                for (int q = 0; q < b.cols(); ++q) acc += w[k++] * row[q];
            }
        scores[static_cast<std::size_t>(i)] = acc;
    }
    return scores;
}

// Combined loss: holistic hinge on the folded global score plus lambda times
// the per-block hinges with margin 1/N.
inline LossBreakdown grid_loss_forward(const Tensor& x, const GridClassifier& g, int y) {
    if (y != 1 && y != -1) throw InvalidInput("label must be +1 or -1, got " + std::to_string(y));
    LossBreakdown out;
    out.block_scores = block_scores(x, g);
    out.global_score = 0.0;
    for (double s : out.block_scores) out.global_score += s;
    out.holistic_term = std::max(0.0, 1.0 - y * out.global_score);
    const double m = g.spec.margin();
    out.local_terms.resize(out.block_scores.size());
    double local_sum = 0.0;
    for (std::size_t i = 0; i < out.block_scores.size(); ++i) {
        out.local_terms[i] = std::max(0.0, m - y * out.block_scores[i]);
        local_sum += out.local_terms[i];
    }
    out.total = out.holistic_term + g.spec.lambda * local_sum;
    return out;
}

struct GridLossGrads {
    std::vector<std::vector<double>> block_weights;
    std::vector<double> block_biases;
    Tensor x;
};

// Exact subgradient of the combined loss (hinge subgradient at the kink is 0).
// The holistic term feeds every block when active; an active local term only
// feeds its own block, which is what strengthens weak parts during training.
inline GridLossGrads grid_loss_backward(const Tensor& x, const GridClassifier& g, int y) {
    LossBreakdown fwd = grid_loss_forward(x, g, y);
    const int N = g.spec.block_count();
    GridLossGrads grads;
    grads.block_weights.resize(static_cast<std::size_t>(N));
    grads.block_biases.assign(static_cast<std::size_t>(N), 0.0);
    grads.x = Tensor(x.shape);

    const bool holistic_active = fwd.holistic_term > 0.0;
    for (int i = 0; i < N; ++i) {
        const bool local_active = fwd.local_terms[static_cast<std::size_t>(i)] > 0.0;
        double coeff = 0.0;
        if (holistic_active) coeff += 1.0;
        if (local_active) coeff += g.spec.lambda;
        auto& gw = grads.block_weights[static_cast<std::size_t>(i)];
        gw.assign(g.block_weights[static_cast<std::size_t>(i)].size(), 0.0);
        if (coeff == 0.0) continue;
        const double scale = -static_cast<double>(y) * coeff;
        grads.block_biases[static_cast<std::size_t>(i)] = scale;
        const auto b = g.spec.block_rect(i);
        const auto& w = g.block_weights[static_cast<std::size_t>(i)];
        std::size_t k = 0;
        for (int ch = 0; ch < g.spec.f; ++ch)
            for (int p = b.r0; p < b.r1; ++p)
                for (int q = b.c0; q < b.c1; ++q) {
                    gw[k] = scale * x.at(ch, p, q);
                    grads.x.at(ch, p, q) += scale * w[k];
                    ++k;
                }
    }
    return grads;
}

// Concatenate the block weights into one linear classifier over the vectorized
// map and sum the biases. Scoring with (w, b) is exactly the sum of block
// scores, so the trained grid layer runs as a plain linear layer.
inline std::pair<std::vector<double>, double> fold_back(const GridClassifier& g) {
    const int N = g.spec.block_count();
    std::vector<double> w(static_cast<std::size_t>(g.spec.f) * g.spec.r * g.spec.c, 0.0);
    double b = 0.0;
    for (int i = 0; i < N; ++i) {
        b += g.block_biases[static_cast<std::size_t>(i)];
        const auto rect = g.spec.block_rect(i);
        const auto& wi = g.block_weights[static_cast<std::size_t>(i)];
        std::size_t k = 0;
        for (int ch = 0; ch < g.spec.f; ++ch)
            for (int p = rect.r0; p < rect.r1; ++p)
                for (int q = rect.c0; q < rect.c1; ++q) {
                    w[(static_cast<std::size_t>(ch) * g.spec.r + p) * g.spec.c + q] = wi[k++];
                }
    }
    return {std::move(w), b};
}

inline double folded_score(const std::vector<double>& w, double b, const Tensor& x) {
    if (static_cast<long long>(w.size()) != x.numel())
        throw InvalidInput("folded weight length " + std::to_string(w.size()) + " does not match map size " +
                           std::to_string(x.numel()));
    double acc = b;
    for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * x.data[i];
    return acc;
}

} // namespace gridloss
