#pragma once

#include "gridloss/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace gridloss {

struct BBox {
    double x = 0.0, y = 0.0; // top-left, pixels
    double w = 0.0, h = 0.0;

    double x2() const { return x + w; }
    double y2() const { return y + h; }
    double cx() const { return x + 0.5 * w; }
    double cy() const { return y + 0.5 * h; }
    double area() const { return w * h; }

    void validate() const {
        if (!(w > 0.0) || !(h > 0.0))
            throw InvalidInput("bbox extent must be positive, got w=" + std::to_string(w) + " h=" + std::to_string(h));
    }
};

inline double intersection_area(const BBox& a, const BBox& b) {
    const double iw = std::min(a.x2(), b.x2()) - std::max(a.x, b.x);
    const double ih = std::min(a.y2(), b.y2()) - std::max(a.y, b.y);
    return iw > 0.0 && ih > 0.0 ? iw * ih : 0.0;
}

// Suppression overlap: intersection over the minimum of the two areas.
inline double overlap_nms(const BBox& a, const BBox& b) {
    a.validate();
    b.validate();
    return intersection_area(a, b) / std::min(a.area(), b.area());
}

// Ellipse in the FDDB field order: semi-major, semi-minor, axis angle
// (radians, major axis against the x axis), center.
struct Ellipse {
    double major = 0.0, minor = 0.0, angle = 0.0;
    double cx = 0.0, cy = 0.0;

    double area() const { return 3.14159265358979323846 * major * minor; }

    // Ramanujan approximation, good to ~1e-4 relative for our aspect ratios
    double perimeter() const {
        const double a = major, b = minor;
        return 3.14159265358979323846 * (3.0 * (a + b) - std::sqrt((3.0 * a + b) * (a + 3.0 * b)));
    }

    // axis-aligned half extents of the rotated ellipse
    double half_extent_x() const {
        const double c = std::cos(angle), s = std::sin(angle);
        return std::sqrt(major * major * c * c + minor * minor * s * s);
    }
    double half_extent_y() const {
        const double c = std::cos(angle), s = std::sin(angle);
        return std::sqrt(major * major * s * s + minor * minor * c * c);
    }

    void validate() const {
        if (!(minor > 0.0) || !(major >= minor))
            throw InvalidInput("ellipse axes must satisfy major >= minor > 0, got major=" +
                               std::to_string(major) + " minor=" + std::to_string(minor));
    }

    bool contains(double px, double py) const {
        const double c = std::cos(angle), s = std::sin(angle);
        const double dx = px - cx, dy = py - cy;
        const double u = (dx * c + dy * s) / major;
        const double v = (-dx * s + dy * c) / minor;
        return u * u + v * v <= 1.0;
    }
};

// Largest axis-aligned ellipse inscribed in a box; unifies box annotations
// and box detections with the ellipse representation.
inline Ellipse inscribed_ellipse(const BBox& b) {
    b.validate();
    Ellipse e;
    const double rx = 0.5 * b.w, ry = 0.5 * b.h;
    e.cx = b.cx();
    e.cy = b.cy();
    if (rx >= ry) {
        e.major = rx;
        e.minor = ry;
        e.angle = 0.0;
    } else {
        e.major = ry;
        e.minor = rx;
        e.angle = 1.5707963267948966;
    }
    return e;
}

// Binary occupancy grid with the pixel-center convention: cell (px,py) is set
// iff the point (px+0.5, py+0.5) lies inside the shape.
struct RasterMask {
    static constexpr int kSize = 40;
    std::vector<std::uint8_t> bits = std::vector<std::uint8_t>(kSize * kSize, 0);

    int count() const {
        int n = 0;
        for (std::uint8_t b : bits) n += b;
        return n;
    }
    bool operator==(const RasterMask& o) const { return bits == o.bits; }
};

// Maps image coordinates into the 40x40 raster patch: patch = (img - origin) * scale
struct RasterFrame {
    double ox = 0.0, oy = 0.0;
    double scale = 1.0;
};

namespace detail {

inline void grow_bounds(double& lo_x, double& hi_x, double& lo_y, double& hi_y, const Ellipse& e) {
    lo_x = std::min(lo_x, e.cx - e.half_extent_x());
    hi_x = std::max(hi_x, e.cx + e.half_extent_x());
    lo_y = std::min(lo_y, e.cy - e.half_extent_y());
    hi_y = std::max(hi_y, e.cy + e.half_extent_y());
}

inline void grow_bounds(double& lo_x, double& hi_x, double& lo_y, double& hi_y, const BBox& b) {
    lo_x = std::min(lo_x, b.x);
    hi_x = std::max(hi_x, b.x2());
    lo_y = std::min(lo_y, b.y);
    hi_y = std::max(hi_y, b.y2());
}

template <typename A, typename B>
RasterFrame make_frame(const A& a, const B& b) {
    double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
    grow_bounds(lo_x, hi_x, lo_y, hi_y, a);
    grow_bounds(lo_x, hi_x, lo_y, hi_y, b);
    const double w = hi_x - lo_x, h = hi_y - lo_y;
    const double pad = 0.15 * std::max(w, h) + 1.0;
    RasterFrame f;
    f.scale = RasterMask::kSize / (std::max(w, h) + 2.0 * pad);
    // center the union box in the patch
    f.ox = 0.5 * (lo_x + hi_x) - 0.5 * RasterMask::kSize / f.scale;
    f.oy = 0.5 * (lo_y + hi_y) - 0.5 * RasterMask::kSize / f.scale;
    return f;
}

inline RasterMask raster_in_frame(const Ellipse& e, const RasterFrame& f) {
    RasterMask m;
    const double c = std::cos(e.angle), s = std::sin(e.angle);
    for (int py = 0; py < RasterMask::kSize; ++py) {
        const double iy = (py + 0.5) / f.scale + f.oy;
        for (int px = 0; px < RasterMask::kSize; ++px) {
            const double ix = (px + 0.5) / f.scale + f.ox;
            const double dx = ix - e.cx, dy = iy - e.cy;
            const double u = (dx * c + dy * s) / e.major;
            const double v = (-dx * s + dy * c) / e.minor;
            m.bits[static_cast<std::size_t>(py) * RasterMask::kSize + px] = (u * u + v * v <= 1.0) ? 1 : 0;
        }
    }
    return m;
}

inline RasterMask raster_in_frame(const BBox& b, const RasterFrame& f) {
    RasterMask m;
    for (int py = 0; py < RasterMask::kSize; ++py) {
        const double iy = (py + 0.5) / f.scale + f.oy;
        for (int px = 0; px < RasterMask::kSize; ++px) {
            const double ix = (px + 0.5) / f.scale + f.ox;
            const bool in = ix >= b.x && ix < b.x2() && iy >= b.y && iy < b.y2();
            m.bits[static_cast<std::size_t>(py) * RasterMask::kSize + px] = in ? 1 : 0;
        }
    }
    return m;
}

inline double mask_iou(const RasterMask& a, const RasterMask& b) {
    int inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        inter += a.bits[i] & b.bits[i];
        uni += a.bits[i] | b.bits[i];
    }
    return uni > 0 ? static_cast<double>(inter) / uni : 0.0;
}

inline bool masks_differ(const RasterMask& a, const RasterMask& b) {
    for (std::size_t i = 0; i < a.bits.size(); ++i)
        if (a.bits[i] != b.bits[i]) return true;
    return false;
}

} // namespace detail

// Rasterize an ellipse given in patch coordinates onto the 40x40 grid.
inline RasterMask rasterize(const Ellipse& e) {
    if (!(e.major > 0.0) || !(e.minor > 0.0))
        throw InvalidInput("rasterize: degenerate axes major=" + std::to_string(e.major) + " minor=" +
                           std::to_string(e.minor));
    if (e.cx < 0.0 || e.cx > RasterMask::kSize || e.cy < 0.0 || e.cy > RasterMask::kSize)
        throw InvalidInput("rasterize: ellipse center (" + std::to_string(e.cx) + "," + std::to_string(e.cy) +
                           ") outside the patch");
    const double diag = RasterMask::kSize * 1.4142135623730951;
    if (e.major > diag)
        throw InvalidInput("rasterize: axis " + std::to_string(e.major) + " exceeds patch diagonal");
    RasterFrame identity;
    return detail::raster_in_frame(e, identity);
}

// PASCAL overlap |a inter b| / |a union b|. Box pairs are analytic; anything
// involving an ellipse is counted on a shared 40x40 raster of the pair.
inline double overlap_voc(const BBox& a, const BBox& b) {
    a.validate();
    b.validate();
    const double inter = intersection_area(a, b);
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

template <typename A, typename B>
double overlap_voc_raster(const A& a, const B& b) {
    const RasterFrame f = detail::make_frame(a, b);
    return detail::mask_iou(detail::raster_in_frame(a, f), detail::raster_in_frame(b, f));
}

inline double overlap_voc(const Ellipse& a, const Ellipse& b) { return overlap_voc_raster(a, b); }
inline double overlap_voc(const Ellipse& a, const BBox& b) { return overlap_voc_raster(a, b); }
inline double overlap_voc(const BBox& a, const Ellipse& b) { return overlap_voc_raster(a, b); }

struct OverlapCounts {
    int inter = 0;
    int uni = 0;
    double value = 0.0;
};

// Raster pixel counts behind the rasterized overlap; the union count sets the
// quantization granularity of the numerical gradients.
template <typename A, typename B>
OverlapCounts overlap_voc_counts(const A& a, const B& b) {
    const RasterFrame f = detail::make_frame(a, b);
    const RasterMask ma = detail::raster_in_frame(a, f);
    const RasterMask mb = detail::raster_in_frame(b, f);
    OverlapCounts c;
    for (std::size_t i = 0; i < ma.bits.size(); ++i) {
        c.inter += ma.bits[i] & mb.bits[i];
        c.uni += ma.bits[i] | mb.bits[i];
    }
    c.value = c.uni > 0 ? static_cast<double>(c.inter) / c.uni : 0.0;
    return c;
}

// Ellipse parameters in gradient order; matches the field order.
enum EllipseParam { kMajor = 0, kMinor = 1, kAngle = 2, kCx = 3, kCy = 4 };

inline Ellipse perturb(const Ellipse& e, int axis, double delta) {
    Ellipse p = e;
    switch (axis) {
        case kMajor: p.major += delta; break;
        case kMinor: p.minor += delta; break;
        case kAngle: p.angle += delta; break;
        case kCx: p.cx += delta; break;
        case kCy: p.cy += delta; break;
        default: throw InvalidInput("bad ellipse parameter index " + std::to_string(axis));
    }
    return p;
}

struct OverlapGrad {
    std::array<double, 5> g{};
    // set when the raster never changed within the step-size cap (e.g. the
    // angle of a circle); the corresponding entry is 0
    std::array<bool, 5> degenerate{};
};

// Central-difference gradient of overlap_voc(pred, gt) in the five ellipse
// parameters. Each step size starts at 0.5 px (0.05 rad for the angle) and
// doubles until both perturbed rasterizations differ from the unperturbed one
// by at least one pixel, capped at 8 doublings. The raster frame is fixed from
// the unperturbed pair so that only the shapes move, not the grid.
inline OverlapGrad numeric_overlap_grad(const Ellipse& pred, const Ellipse& gt) {
    if (!(pred.major > 0.0) || !(pred.minor > 0.0) || !(gt.major > 0.0) || !(gt.minor > 0.0))
        throw InvalidInput("numeric_overlap_grad: degenerate ellipse axes");
    const RasterFrame frame = detail::make_frame(pred, gt);
    const RasterMask base = detail::raster_in_frame(pred, frame);
    const RasterMask gt_mask = detail::raster_in_frame(gt, frame);

    constexpr double kStart[5] = {0.5, 0.5, 0.05, 0.5, 0.5};
    constexpr int kMaxDoublings = 8;

    OverlapGrad out;
    for (int axis = 0; axis < 5; ++axis) {
        double eps = kStart[axis];
        bool found = false;
        for (int attempt = 0; attempt <= kMaxDoublings; ++attempt, eps *= 2.0) {
            const Ellipse plus = perturb(pred, axis, eps);
            const Ellipse minus = perturb(pred, axis, -eps);
            if (minus.major <= 1e-9 || minus.minor <= 1e-9) break; // shrank past zero
            const RasterMask mp = detail::raster_in_frame(plus, frame);
            const RasterMask mm = detail::raster_in_frame(minus, frame);
            if (detail::masks_differ(mp, base) && detail::masks_differ(mm, base)) {
                out.g[static_cast<std::size_t>(axis)] =
                    (detail::mask_iou(mp, gt_mask) - detail::mask_iou(mm, gt_mask)) / (2.0 * eps);
                found = true;
                break;
            }
        }
        if (!found) {
            out.g[static_cast<std::size_t>(axis)] = 0.0;
            out.degenerate[static_cast<std::size_t>(axis)] = true;
        }
    }
    return out;
}

} // namespace gridloss
