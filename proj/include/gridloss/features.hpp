#pragma once

#include "gridloss/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace gridloss {

constexpr int kChannelCount = 10; // 3 LUV + gradient magnitude + 6 orientation bins
constexpr int kShrink = 4;

// One pyramid level: channel features of the resampled image, spatial dims
// shrunk by 4.
struct ChannelMap {
    Tensor channels; // [10, H/4, W/4]
    double scale = 1.0;
    int shrink = kShrink;
    int src_h = 0, src_w = 0; // resampled image dims these channels came from

    int rows() const { return channels.dim(1); }
    int cols() const { return channels.dim(2); }
};

namespace detail {

// radius-1 triangle filter [1 2 1]/4, separable, borders clamped
inline void smooth_triangle(std::vector<double>& img, int h, int w) {
    std::vector<double> tmp(static_cast<std::size_t>(h) * w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const int jl = j > 0 ? j - 1 : 0, jr = j < w - 1 ? j + 1 : w - 1;
            const double* row = &img[static_cast<std::size_t>(i) * w];
            tmp[static_cast<std::size_t>(i) * w + j] = 0.25 * row[jl] + 0.5 * row[j] + 0.25 * row[jr];
        }
    for (int i = 0; i < h; ++i) {
        const int iu = i > 0 ? i - 1 : 0, id = i < h - 1 ? i + 1 : h - 1;
        for (int j = 0; j < w; ++j)
            img[static_cast<std::size_t>(i) * w + j] = 0.25 * tmp[static_cast<std::size_t>(iu) * w + j] +
                                                       0.5 * tmp[static_cast<std::size_t>(i) * w + j] +
                                                       0.25 * tmp[static_cast<std::size_t>(id) * w + j];
    }
}

inline double cube_root(double t) { return std::cbrt(t); }

} // namespace detail

// RGB (linear, [0,1]) -> CIE LUV with D65 white point, rescaled to roughly
// [0,1] with the usual (L/270, (u+88)/270, (v+134)/270) offsets.
inline Tensor rgb_to_luv(const Tensor& rgb) {
    if (rgb.ndim() != 3 || rgb.dim(0) != 3)
        throw InvalidInput("rgb_to_luv expects [3,H,W], got " + rgb.shape_str());
    const int H = rgb.dim(1), W = rgb.dim(2);
    Tensor luv({3, H, W});
    constexpr double Xn = 0.950456, Yn = 1.0, Zn = 1.088754;
    const double un = 4.0 * Xn / (Xn + 15.0 * Yn + 3.0 * Zn);
    const double vn = 9.0 * Yn / (Xn + 15.0 * Yn + 3.0 * Zn);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const double r = rgb.at(0, i, j), g = rgb.at(1, i, j), b = rgb.at(2, i, j);
            const double X = 0.412453 * r + 0.357580 * g + 0.180423 * b;
            const double Y = 0.212671 * r + 0.715160 * g + 0.072169 * b;
            const double Z = 0.019334 * r + 0.119193 * g + 0.950227 * b;
            const double yr = Y / Yn;
            const double L = yr > 0.008856 ? 116.0 * detail::cube_root(yr) - 16.0 : 903.3 * yr;
            const double denom = X + 15.0 * Y + 3.0 * Z;
            const double up = denom > 1e-12 ? 4.0 * X / denom : un;
            const double vp = denom > 1e-12 ? 9.0 * Y / denom : vn;
            const double u = 13.0 * L * (up - un);
            const double v = 13.0 * L * (vp - vn);
            luv.at(0, i, j) = L / 270.0;
            luv.at(1, i, j) = (u + 88.0) / 270.0;
            luv.at(2, i, j) = (v + 134.0) / 270.0;
        }
    return luv;
}

// ACF-style channels: LUV color, gradient magnitude and 6 soft-binned unsigned
// orientation channels, each sum-pooled over 4x4 cells. Pre-smoothing radius 1,
// no post-smoothing. Gradients are taken on the linear luminance so the
// magnitude is exactly 1-homogeneous in image brightness.
inline ChannelMap compute_channels(const Tensor& image, double scale = 1.0) {
    if (image.ndim() != 3 || image.dim(0) != 3)
        throw InvalidInput("compute_channels expects [3,H,W], got " + image.shape_str());
    const int H = image.dim(1), W = image.dim(2);
    if (H < 4 * kShrink || W < 4 * kShrink)
        throw InvalidInput("compute_channels: image " + std::to_string(W) + "x" + std::to_string(H) +
                           " smaller than minimum 16x16");

    Tensor luv = rgb_to_luv(image);

    std::vector<double> lum(static_cast<std::size_t>(H) * W);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
            lum[static_cast<std::size_t>(i) * W + j] =
                0.212671 * image.at(0, i, j) + 0.715160 * image.at(1, i, j) + 0.072169 * image.at(2, i, j);

    for (int c = 0; c < 3; ++c) {
        std::vector<double> ch(static_cast<std::size_t>(H) * W);
        std::copy_n(&luv.at(c, 0, 0), ch.size(), ch.begin());
        detail::smooth_triangle(ch, H, W);
        std::copy_n(ch.begin(), ch.size(), &luv.at(c, 0, 0));
    }
    detail::smooth_triangle(lum, H, W);

    // full-resolution magnitude and orientation histograms
    std::vector<double> mag(static_cast<std::size_t>(H) * W, 0.0);
    std::vector<double> ori(static_cast<std::size_t>(6) * H * W, 0.0);
    constexpr double kPi = 3.14159265358979323846;
    for (int i = 0; i < H; ++i) {
        const int iu = i > 0 ? i - 1 : 0, id = i < H - 1 ? i + 1 : H - 1;
        for (int j = 0; j < W; ++j) {
            const int jl = j > 0 ? j - 1 : 0, jr = j < W - 1 ? j + 1 : W - 1;
            const double dx = 0.5 * (lum[static_cast<std::size_t>(i) * W + jr] - lum[static_cast<std::size_t>(i) * W + jl]);
            const double dy = 0.5 * (lum[static_cast<std::size_t>(id) * W + j] - lum[static_cast<std::size_t>(iu) * W + j]);
            const double m = std::sqrt(dx * dx + dy * dy);
            mag[static_cast<std::size_t>(i) * W + j] = m;
            if (m <= 0.0) continue;
            double theta = std::atan2(dy, dx);
            if (theta < 0.0) theta += kPi;
            if (theta >= kPi) theta -= kPi;
            const double t = theta / (kPi / 6.0);
            int k0 = static_cast<int>(t);
            if (k0 > 5) k0 = 5;
            const double frac = t - k0;
            const int k1 = (k0 + 1) % 6;
            ori[(static_cast<std::size_t>(k0) * H + i) * W + j] += m * (1.0 - frac);
            ori[(static_cast<std::size_t>(k1) * H + i) * W + j] += m * frac;
        }
    }

    const int Hc = H / kShrink, Wc = W / kShrink;
    ChannelMap cm;
    cm.channels = Tensor({kChannelCount, Hc, Wc});
    cm.scale = scale;
    cm.src_h = H;
    cm.src_w = W;
    auto pool = [&](const double* src, int channel) {
        for (int ci = 0; ci < Hc; ++ci)
            for (int cj = 0; cj < Wc; ++cj) {
                double acc = 0.0;
                for (int u = 0; u < kShrink; ++u) {
                    const double* row = src + static_cast<std::size_t>(ci * kShrink + u) * W + cj * kShrink;
                    for (int v = 0; v < kShrink; ++v) acc += row[v];
                }
                cm.channels.at(channel, ci, cj) = acc;
            }
    };
    pool(&luv.at(0, 0, 0), 0);
    pool(&luv.at(1, 0, 0), 1);
    pool(&luv.at(2, 0, 0), 2);
    pool(mag.data(), 3);
    for (int k = 0; k < 6; ++k) pool(&ori[static_cast<std::size_t>(k) * H * W], 4 + k);
    return cm;
}

// Bilinear resample to the given size; the half-pixel convention makes the
// identity size an exact copy.
inline Tensor resample_bilinear(const Tensor& image, int out_h, int out_w) {
    if (image.ndim() != 3) throw InvalidInput("resample_bilinear expects [C,H,W], got " + image.shape_str());
    if (out_h < 1 || out_w < 1) throw InvalidInput("resample target must be positive");
    const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
    Tensor out({C, out_h, out_w});
    const double sy = static_cast<double>(H) / out_h;
    const double sx = static_cast<double>(W) / out_w;
    for (int i = 0; i < out_h; ++i) {
        double fy = (i + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(H - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, H - 1);
        const double wy = fy - y0;
        for (int j = 0; j < out_w; ++j) {
            double fx = (j + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(W - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, W - 1);
            const double wx = fx - x0;
            for (int c = 0; c < C; ++c) {
                const double v00 = image.at(c, y0, x0), v01 = image.at(c, y0, x1);
                const double v10 = image.at(c, y1, x0), v11 = image.at(c, y1, x1);
                out.at(c, i, j) = (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) + wy * ((1.0 - wx) * v10 + wx * v11);
            }
        }
    }
    return out;
}

struct Pyramid {
    std::vector<ChannelMap> levels;
    int scales_per_octave = 2;
    int min_level_size = 20; // in cells
};

struct PyramidConfig {
    int scales_per_octave = 2; // dense mode is 8; skipping default is 2
    int min_size = 20;         // smallest channel-map side kept, in cells
};

// Level k sits at scale 2^(-k/scales_per_octave); the image is resampled
// bilinearly and channels recomputed exactly per level. Stops once the channel
// map falls under min_size cells.
inline Pyramid build_pyramid(const Tensor& image, int scales_per_octave, int min_size) {
    if (scales_per_octave < 1 || scales_per_octave > 8)
        throw InvalidInput("scales_per_octave must be in 1..8, got " + std::to_string(scales_per_octave));
    if (min_size < 1) throw InvalidInput("min_size must be >= 1");
    const int H = image.dim(1), W = image.dim(2);
    Pyramid pyr;
    pyr.scales_per_octave = scales_per_octave;
    pyr.min_level_size = min_size;
    for (int k = 0;; ++k) {
        const double s = std::pow(2.0, -static_cast<double>(k) / scales_per_octave);
        const int hs = static_cast<int>(std::lround(H * s));
        const int ws = static_cast<int>(std::lround(W * s));
        if (std::min(hs, ws) < 4 * kShrink) break;
        if (std::min(hs, ws) / kShrink < min_size) break;
        Tensor level_img = (hs == H && ws == W) ? image : resample_bilinear(image, hs, ws);
        ChannelMap cm = compute_channels(level_img, s);
        if (std::min(cm.rows(), cm.cols()) < min_size) break;
        pyr.levels.push_back(std::move(cm));
    }
    return pyr;
}

inline Pyramid build_pyramid(const Tensor& image, const PyramidConfig& cfg) {
    return build_pyramid(image, cfg.scales_per_octave, cfg.min_size);
}

// Horizontal mirror of a channel window. Orientation bins land exactly on
// their reflected counterparts (theta -> pi - theta), so bins 1/5 and 2/4 swap.
inline Tensor mirror_channels(const Tensor& t) {
    if (t.ndim() != 3 || t.dim(0) != kChannelCount)
        throw InvalidInput("mirror_channels expects [10,h,w], got " + t.shape_str());
    const int h = t.dim(1), w = t.dim(2);
    Tensor out(t.shape);
    constexpr int remap[kChannelCount] = {0, 1, 2, 3, 4, 9, 8, 7, 6, 5};
    for (int c = 0; c < kChannelCount; ++c)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) out.at(remap[c], i, j) = t.at(c, i, w - 1 - j);
    return out;
}

} // namespace gridloss
