#pragma once

#include "gridloss/rng.hpp"
#include "gridloss/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace gridloss {

// One valid (no padding) cross-correlation layer.
struct ConvLayer {
    Tensor weights; // [out_channels, in_channels, kh, kw]
    Tensor bias;    // [out_channels]

    int out_channels() const { return weights.dim(0); }
    int in_channels() const { return weights.dim(1); }
    int kh() const { return weights.dim(2); }
    int kw() const { return weights.dim(3); }

    void validate() const {
        if (weights.ndim() != 4) throw InvalidInput("conv weights must be 4-d, got " + weights.shape_str());
        if (bias.ndim() != 1 || bias.dim(0) != out_channels())
            throw InvalidInput("conv bias shape " + bias.shape_str() + " does not match out_channels");
        if (kh() < 1 || kw() < 1 || kh() % 2 == 0 || kw() % 2 == 0)
            throw InvalidInput("kernel dims must be odd and >= 1, got " + std::to_string(kh()) + "x" + std::to_string(kw()));
    }
};

inline int conv_out_dim(int in, int k, int stride) { return (in - k) / stride + 1; }

inline void check_conv_args(const Tensor& input, const ConvLayer& layer, int stride) {
    layer.validate();
    if (input.ndim() != 3)
        throw InvalidInput("conv2d input must be [C,H,W], got " + input.shape_str());
    if (input.dim(0) != layer.in_channels())
        throw InvalidInput("conv2d input has " + std::to_string(input.dim(0)) + " channels, layer expects " +
                           std::to_string(layer.in_channels()));
    if (input.dim(1) < layer.kh() || input.dim(2) < layer.kw())
        throw InvalidInput("conv2d input " + input.shape_str() + " smaller than kernel " +
                           std::to_string(layer.kh()) + "x" + std::to_string(layer.kw()));
    if (stride < 1) throw InvalidInput("conv stride must be >= 1, got " + std::to_string(stride));
}

// Valid cross-correlation: out[o,i,j] = bias[o] + sum_{c,u,v} w[o,c,u,v] * in[c, i*s+u, j*s+v]
inline Tensor conv2d(const Tensor& input, const ConvLayer& layer, int stride = 1) {
    check_conv_args(input, layer, stride);
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    const int O = layer.out_channels(), kh = layer.kh(), kw = layer.kw();
    const int Ho = conv_out_dim(H, kh, stride), Wo = conv_out_dim(W, kw, stride);
    Tensor out({O, Ho, Wo});
    for (int o = 0; o < O; ++o) {
        const double b = layer.bias.data[static_cast<std::size_t>(o)];
        for (int i = 0; i < Ho; ++i) {
            for (int j = 0; j < Wo; ++j) {
                double acc = b;
                for (int c = 0; c < C; ++c) {
                    const double* wrow = &layer.weights.at(o, c, 0, 0);
                    const double* in0 = &input.at(c, i * stride, j * stride);
                    for (int u = 0; u < kh; ++u) {
                        const double* inr = in0 + static_cast<std::size_t>(u) * W;
                        const double* wr = wrow + static_cast<std::size_t>(u) * kw;
                        for (int v = 0; v < kw; ++v) acc += wr[v] * inr[v];
                    }
                }
                out.at(o, i, j) = acc;
            }
        }
    }
    return out;
}

struct ConvGrads {
    Tensor input;   // same shape as the forward input
    Tensor weights; // same shape as layer.weights
    Tensor bias;    // same shape as layer.bias
};

inline ConvGrads conv2d_backward(const Tensor& input, const ConvLayer& layer, const Tensor& grad_out,
                                 int stride = 1) {
    check_conv_args(input, layer, stride);
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    const int O = layer.out_channels(), kh = layer.kh(), kw = layer.kw();
    const int Ho = conv_out_dim(H, kh, stride), Wo = conv_out_dim(W, kw, stride);
    require_shape(grad_out, {O, Ho, Wo}, "conv2d_backward grad_out");

    ConvGrads g{Tensor(input.shape), Tensor(layer.weights.shape), Tensor(layer.bias.shape)};
    for (int o = 0; o < O; ++o) {
        double bacc = 0.0;
        for (int i = 0; i < Ho; ++i) {
            for (int j = 0; j < Wo; ++j) {
                const double go = grad_out.at(o, i, j);
                if (go == 0.0) continue;
                bacc += go;
                for (int c = 0; c < C; ++c) {
                    double* gw = &g.weights.at(o, c, 0, 0);
                    double* gi = &g.input.at(c, i * stride, j * stride);
                    const double* wr = &layer.weights.at(o, c, 0, 0);
                    const double* in0 = &input.at(c, i * stride, j * stride);
                    for (int u = 0; u < kh; ++u) {
                        double* gir = gi + static_cast<std::size_t>(u) * W;
                        const double* inr = in0 + static_cast<std::size_t>(u) * W;
                        double* gwr = gw + static_cast<std::size_t>(u) * kw;
                        const double* wrr = wr + static_cast<std::size_t>(u) * kw;
                        for (int v = 0; v < kw; ++v) {
                            gwr[v] += go * inr[v];
                            gir[v] += go * wrr[v];
                        }
                    }
                }
            }
        }
        g.bias.data[static_cast<std::size_t>(o)] = bacc;
    }
    return g;
}

inline Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.data) v = v > 0.0 ? v : 0.0;
    return y;
}

// grad_in = grad_out * 1[x > 0]; the subgradient at exactly 0 is taken as 0
inline Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
    if (!x.same_shape(grad_out))
        throw InvalidInput("relu_backward shapes differ: " + x.shape_str() + " vs " + grad_out.shape_str());
    Tensor g = grad_out;
    for (std::size_t i = 0; i < g.data.size(); ++i)
        if (x.data[i] <= 0.0) g.data[i] = 0.0;
    return g;
}

namespace detail {

constexpr int kLcnRadius = 2;     // 5x5 spatial window
constexpr double kLcnFloor = 0.01;

// Per-location window statistics shared by the forward and backward pass.
struct LcnStats {
    Tensor mean;  // [1,H,W] window mean pooled across channels
    Tensor std_;  // [1,H,W] window stddev (population), before flooring
    Tensor count; // [1,H,W] number of contributing values
};

inline LcnStats lcn_stats(const Tensor& x) {
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    LcnStats s{Tensor({1, H, W}), Tensor({1, H, W}), Tensor({1, H, W})};
    for (int i = 0; i < H; ++i) {
        const int i0 = std::max(0, i - kLcnRadius), i1 = std::min(H - 1, i + kLcnRadius);
        for (int j = 0; j < W; ++j) {
            const int j0 = std::max(0, j - kLcnRadius), j1 = std::min(W - 1, j + kLcnRadius);
            double sum = 0.0, sq = 0.0;
            for (int c = 0; c < C; ++c)
                for (int p = i0; p <= i1; ++p) {
                    const double* row = &x.at(c, p, j0);
                    for (int q = j0; q <= j1; ++q) {
                        const double v = row[q - j0];
                        sum += v;
                        sq += v * v;
                    }
                }
            const double m = static_cast<double>(C) * (i1 - i0 + 1) * (j1 - j0 + 1);
            const double mean = sum / m;
            double var = sq / m - mean * mean;
            if (var < 0.0) var = 0.0;
            s.mean.at(0, i, j) = mean;
            s.std_.at(0, i, j) = std::sqrt(var);
            s.count.at(0, i, j) = m;
        }
    }
    return s;
}

} // namespace detail

// Local contrast normalization: at each spatial location subtract the mean and
// divide by the stddev of a 5x5 window (clamped at borders) pooled across all
// channels. Divisor floored at 0.01.
inline Tensor lcn(const Tensor& x) {
    if (x.ndim() != 3) throw InvalidInput("lcn input must be [C,H,W], got " + x.shape_str());
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    detail::LcnStats s = detail::lcn_stats(x);
    Tensor y(x.shape);
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                const double d = std::max(s.std_.at(0, i, j), detail::kLcnFloor);
                y.at(c, i, j) = (x.at(c, i, j) - s.mean.at(0, i, j)) / d;
            }
    return y;
}

// Exact gradient of lcn(). Where the stddev is under the floor the divisor is
// constant, so only the mean path contributes there.
inline Tensor lcn_backward(const Tensor& x, const Tensor& grad_out) {
    if (!x.same_shape(grad_out))
        throw InvalidInput("lcn_backward shapes differ: " + x.shape_str() + " vs " + grad_out.shape_str());
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    detail::LcnStats s = detail::lcn_stats(x);

    // Per-location reductions of the incoming gradient:
    //   gsum[i,j]  = sum_c grad_out[c,i,j] / d
    //   gdot[i,j]  = sum_c grad_out[c,i,j] * (x[c,i,j]-mean) -> divisor path
    Tensor gsum({1, H, W});
    Tensor gdot({1, H, W});
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const double sd = s.std_.at(0, i, j);
            const double d = std::max(sd, detail::kLcnFloor);
            double a = 0.0, b = 0.0;
            for (int c = 0; c < C; ++c) {
                const double go = grad_out.at(c, i, j);
                a += go;
                b += go * (x.at(c, i, j) - s.mean.at(0, i, j));
            }
            gsum.at(0, i, j) = a / d;
            // d sigma / d x_k = (x_k - mean) / (M * sigma); zero when floored
            gdot.at(0, i, j) = (sd > detail::kLcnFloor) ? b / (d * d * sd) : 0.0;
        }

    Tensor gx(x.shape);
    // direct numerator term
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j)
                gx.at(c, i, j) = grad_out.at(c, i, j) / std::max(s.std_.at(0, i, j), detail::kLcnFloor);
    // mean and divisor terms: x[c,p,q] appears in every window whose center
    // (i,j) is within the clamped 5x5 neighbourhood of (p,q)
    for (int p = 0; p < H; ++p) {
        const int i0 = std::max(0, p - detail::kLcnRadius), i1 = std::min(H - 1, p + detail::kLcnRadius);
        for (int q = 0; q < W; ++q) {
            const int j0 = std::max(0, q - detail::kLcnRadius), j1 = std::min(W - 1, q + detail::kLcnRadius);
            for (int c = 0; c < C; ++c) {
                const double xv = x.at(c, p, q);
                double acc = 0.0;
                for (int i = i0; i <= i1; ++i)
                    for (int j = j0; j <= j1; ++j) {
                        const double m = s.count.at(0, i, j);
                        acc -= gsum.at(0, i, j) / m;
                        acc -= gdot.at(0, i, j) * (xv - s.mean.at(0, i, j)) / m;
                    }
                gx.at(c, p, q) += acc;
            }
        }
    }
    return gx;
}

struct DropoutState {
    double rate = 0.0;
    Tensor mask;          // entries are exactly 0 or 1/(1-rate)
    bool training = false;
};

// Inverted dropout: keep with probability 1-rate and scale kept values by
// 1/(1-rate), so inference is the identity.
inline std::pair<Tensor, DropoutState> dropout(const Tensor& x, double rate, std::uint64_t rng_seed,
                                               bool training) {
    if (!(rate >= 0.0 && rate < 1.0))
        throw InvalidInput("dropout rate must be in [0,1), got " + std::to_string(rate));
    DropoutState st;
    st.rate = rate;
    st.training = training;
    st.mask = Tensor(x.shape);
    if (!training || rate == 0.0) {
        for (double& v : st.mask.data) v = 1.0;
        return {x, st};
    }
    const double keep = 1.0 - rate;
    const double scale = 1.0 / keep;
    Rng rng(rng_seed);
    Tensor y(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double m = rng.uniform() < keep ? scale : 0.0;
        st.mask.data[i] = m;
        y.data[i] = x.data[i] * m;
    }
    return {y, st};
}

inline Tensor dropout_backward(const DropoutState& st, const Tensor& grad_out) {
    if (!st.mask.same_shape(grad_out))
        throw InvalidInput("dropout_backward shapes differ: " + st.mask.shape_str() + " vs " + grad_out.shape_str());
    Tensor g = grad_out;
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] *= st.mask.data[i];
    return g;
}

} // namespace gridloss
