#pragma once

#include "gridloss/features.hpp"
#include "gridloss/geometry.hpp"
#include "gridloss/rng.hpp"
#include "gridloss/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace gridloss {

enum class AnnotationKind { ellipse, box };

struct ManifestEntry {
    std::string path;
    std::vector<Ellipse> ellipses;
    std::vector<BBox> boxes;
};

struct DatasetManifest {
    AnnotationKind kind = AnnotationKind::ellipse;
    std::vector<ManifestEntry> entries;

    std::size_t annotation_count() const {
        std::size_t n = 0;
        for (const auto& e : entries) n += kind == AnnotationKind::ellipse ? e.ellipses.size() : e.boxes.size();
        return n;
    }
};

inline std::vector<double> parse_numbers(const std::string& line, std::size_t want, int lineno,
                                         const std::string& where) {
    std::istringstream is(line);
    std::vector<double> vals;
    double v;
    while (is >> v) vals.push_back(v);
    std::string trailing;
    if (!is.eof()) {
        is.clear();
        is >> trailing;
    }
    if (vals.size() != want || !trailing.empty())
        throw InvalidInput(where + ": line " + std::to_string(lineno) + ": expected " + std::to_string(want) +
                           " numbers, got '" + line + "'");
    return vals;
}

// FDDB-style layout: image path line, face count line, then one annotation per
// line -- `major minor angle cx cy 1` for ellipses (trailing constant label
// parsed and ignored), `x y w h` for boxes.
inline DatasetManifest parse_manifest(std::istream& in, AnnotationKind kind, const std::string& name) {
    DatasetManifest m;
    m.kind = kind;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        if (line.empty()) continue;
        ManifestEntry entry;
        entry.path = line;
        if (!std::getline(in, line))
            throw InvalidInput(name + ": line " + std::to_string(lineno) + ": missing face count after path");
        ++lineno;
        long count = -1;
        try {
            std::size_t pos = 0;
            count = std::stol(line, &pos);
            while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
            if (pos != line.size()) count = -1;
        } catch (...) {
            count = -1;
        }
        if (count < 0)
            throw InvalidInput(name + ": line " + std::to_string(lineno) + ": bad face count '" + line + "'");
        for (long i = 0; i < count; ++i) {
            if (!std::getline(in, line))
                throw InvalidInput(name + ": line " + std::to_string(lineno) + ": expected " + std::to_string(count) +
                                   " annotation lines, file ended after " + std::to_string(i));
            ++lineno;
            if (kind == AnnotationKind::ellipse) {
                auto v = parse_numbers(line, 6, lineno, name);
                Ellipse e{v[0], v[1], v[2], v[3], v[4]};
                e.validate();
                entry.ellipses.push_back(e);
            } else {
                auto v = parse_numbers(line, 4, lineno, name);
                BBox b{v[0], v[1], v[2], v[3]};
                b.validate();
                entry.boxes.push_back(b);
            }
        }
        m.entries.push_back(std::move(entry));
    }
    return m;
}

inline DatasetManifest load_manifest(const std::string& path, AnnotationKind kind) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path);
    return parse_manifest(in, kind, path);
}

inline std::string serialize_manifest(const DatasetManifest& m) {
    std::ostringstream os;
    char buf[256];
    for (const auto& e : m.entries) {
        os << e.path << "\n";
        if (m.kind == AnnotationKind::ellipse) {
            os << e.ellipses.size() << "\n";
            for (const auto& el : e.ellipses) {
                std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %.17g 1\n", el.major, el.minor, el.angle,
                              el.cx, el.cy);
                os << buf;
            }
        } else {
            os << e.boxes.size() << "\n";
            for (const auto& b : e.boxes) {
                std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g\n", b.x, b.y, b.w, b.h);
                os << buf;
            }
        }
    }
    return os.str();
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest " + path);
    out << serialize_manifest(m);
}

// ---- PNM images ----

namespace detail {

inline int pnm_next_int(std::istream& in, const std::string& path) {
    // skips whitespace and '#' comments
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            std::string dummy;
            std::getline(in, dummy);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    int v;
    if (!(in >> v)) throw IoError(path + ": truncated PNM header");
    return v;
}

} // namespace detail

// Binary PPM (P6) or PGM (P5; replicated to 3 channels), values scaled to [0,1].
inline Tensor load_image(std::istream& in, const std::string& path) {
    std::string magic;
    in >> magic;
    if (magic != "P6" && magic != "P5") throw IoError(path + ": unsupported image format '" + magic + "' (want P5/P6)");
    const int w = detail::pnm_next_int(in, path);
    const int h = detail::pnm_next_int(in, path);
    const int maxval = detail::pnm_next_int(in, path);
    if (w < 1 || h < 1 || maxval < 1 || maxval > 65535) throw IoError(path + ": bad PNM dimensions");
    in.get(); // single whitespace after maxval
    const int samples = magic == "P6" ? 3 : 1;
    const int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * samples * bytes);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw IoError(path + ": truncated pixel data");
    Tensor img({3, h, w});
    const double inv = 1.0 / maxval;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int c = 0; c < 3; ++c) {
                const int sc = samples == 3 ? c : 0;
                const std::size_t off = (static_cast<std::size_t>(i) * w + j) * samples * bytes +
                                        static_cast<std::size_t>(sc) * bytes;
                int v = raw[off];
                if (bytes == 2) v = (v << 8) | raw[off + 1];
                img.at(c, i, j) = v * inv;
            }
    return img;
}

inline Tensor load_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image " + path);
    return load_image(in, path);
}

inline void save_ppm(const Tensor& img, std::ostream& out) {
    if (img.ndim() != 3 || img.dim(0) != 3) throw InvalidInput("save_ppm expects [3,H,W], got " + img.shape_str());
    const int h = img.dim(1), w = img.dim(2);
    out << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int c = 0; c < 3; ++c) {
                double v = img.at(c, i, j);
                v = std::clamp(v, 0.0, 1.0);
                raw[(static_cast<std::size_t>(i) * w + j) * 3 + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

inline void save_ppm(const Tensor& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image " + path);
    save_ppm(img, out);
}

// ---- window cropping ----

struct CropJitter {
    double scale_range = 0.0;  // multiplicative, e.g. 0.1 for +-10%
    double translate_px = 0.0; // in window pixels, e.g. 4
};

// Crop the object box into a square window_px window in which the object spans
// object_px pixels, bilinearly resampled with edge replication. Jitter (when a
// generator is passed) perturbs the source region.
inline Tensor crop_window(const Tensor& image, const BBox& box, int window_px, int object_px,
                          const CropJitter& jit = {}, Rng* rng = nullptr) {
    box.validate();
    if (window_px < 1 || object_px < 1 || object_px > window_px)
        throw InvalidInput("bad crop geometry window_px=" + std::to_string(window_px) + " object_px=" +
                           std::to_string(object_px));
    const int H = image.dim(1), W = image.dim(2);
    double side = std::max(box.w, box.h) * window_px / object_px;
    double cx = box.cx(), cy = box.cy();
    if (rng) {
        const double s = 1.0 + jit.scale_range * rng->uniform(-1.0, 1.0);
        const double dx = jit.translate_px * rng->uniform(-1.0, 1.0);
        const double dy = jit.translate_px * rng->uniform(-1.0, 1.0);
        side *= s;
        cx += dx * side / window_px;
        cy += dy * side / window_px;
    }
    const double step = side / window_px;
    const double x0 = cx - 0.5 * side, y0 = cy - 0.5 * side;
    Tensor out({3, window_px, window_px});
    for (int i = 0; i < window_px; ++i) {
        double fy = y0 + (i + 0.5) * step - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(H - 1));
        const int yy0 = static_cast<int>(fy);
        const int yy1 = std::min(yy0 + 1, H - 1);
        const double wy = fy - yy0;
        for (int j = 0; j < window_px; ++j) {
            double fx = x0 + (j + 0.5) * step - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(W - 1));
            const int xx0 = static_cast<int>(fx);
            const int xx1 = std::min(xx0 + 1, W - 1);
            const double wx = fx - xx0;
            for (int c = 0; c < 3; ++c) {
                const double v00 = image.at(c, yy0, xx0), v01 = image.at(c, yy0, xx1);
                const double v10 = image.at(c, yy1, xx0), v11 = image.at(c, yy1, xx1);
                out.at(c, i, j) = (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) + wy * ((1.0 - wx) * v10 + wx * v11);
            }
        }
    }
    return out;
}

// Axis-aligned square covering the face ellipse; the box side equals twice the
// semi-major axis, which is what the detector's 60 px face convention assumes.
inline BBox face_box(const Ellipse& e) {
    BBox b;
    b.w = b.h = 2.0 * e.major;
    b.x = e.cx - e.major;
    b.y = e.cy - e.major;
    return b;
}

// ---- synthetic toy-face corpus ----

struct SynthConfig {
    int num_pos = 100; // training positives (one face per image)
    int num_neg = 40;  // training negatives (no faces)
    int test_pos = 50;
    int test_neg = 20;
    int image_size = 160;
    int pose_count = 2;
    double min_face = 56.0, max_face = 88.0; // face height (2 * semi-major) in px
    double angle_jitter = 0.18;              // radians around upright
    double occluder_fraction = 0.0;          // optional occluder drawn on positives
    std::uint64_t seed = 1;
};

struct SynthImage {
    std::string path;
    Tensor image;
    int pose = -1; // pose id of the face for positives, -1 for negatives
};

struct SynthDataset {
    DatasetManifest train, test; // ellipse annotations
    std::vector<SynthImage> images;

    const SynthImage* find(const std::string& path) const {
        for (const auto& im : images)
            if (im.path == path) return &im;
        return nullptr;
    }
    const Tensor& image(const std::string& path) const {
        const SynthImage* im = find(path);
        if (!im) throw IoError("synthetic image not found: " + path);
        return im->image;
    }
};

namespace detail {

struct FaceStyle {
    double aspect;      // minor/major of the face ellipse
    double eye_u[2];    // eye centers in face-local units of the half-width
    double eye_v;       // eye row in units of the half-height
    double eye_r;       // eye radius in units of the half-width
    double mouth_u;     // mouth center offset
    double mouth_halfw; // in units of the half-width
    double mouth_v;
    double mouth_halfh; // in units of the half-height
};

inline FaceStyle face_style(int pose) {
    static const FaceStyle styles[4] = {
        {0.78, {-0.42, 0.42}, -0.32, 0.17, 0.0, 0.45, 0.45, 0.055},
        {0.62, {-0.12, 0.52}, -0.30, 0.16, 0.12, 0.36, 0.46, 0.055},
        {0.90, {-0.50, 0.50}, -0.38, 0.15, 0.0, 0.52, 0.42, 0.050},
        {0.70, {-0.36, 0.36}, -0.26, 0.18, -0.08, 0.40, 0.48, 0.060},
    };
    return styles[pose % 4];
}

inline void draw_background(Tensor& img, Rng& rng) {
    const int n = img.dim(1), m = img.dim(2);
    const double base = rng.uniform(0.32, 0.52);
    double fx[2], fy[2], ph[2], amp[2];
    for (int g = 0; g < 2; ++g) {
        fx[g] = rng.uniform(-0.12, 0.12);
        fy[g] = rng.uniform(-0.12, 0.12);
        ph[g] = rng.uniform(0.0, 6.28);
        amp[g] = rng.uniform(0.02, 0.06);
    }
    const double tint[3] = {rng.uniform(-0.04, 0.04), rng.uniform(-0.04, 0.04), rng.uniform(-0.04, 0.04)};
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
            double v = base;
            for (int g = 0; g < 2; ++g) v += amp[g] * std::cos(fx[g] * j + fy[g] * i + ph[g]);
            v += rng.uniform(-0.035, 0.035);
            for (int c = 0; c < 3; ++c) img.at(c, i, j) = std::clamp(v + tint[c], 0.0, 1.0);
        }
}

struct SupportMoments {
    long long n = 0;
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    void add(double x, double y) {
        ++n;
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
};

// Toy face: a filled ellipse with two dark eye blobs and a dark mouth bar,
// geometry set by the pose style, rotated by phi. Paints only inside the face
// ellipse, so the painted support matches the ground-truth ellipse.
inline SupportMoments draw_face(Tensor& img, const Ellipse& gt, int pose, Rng& rng) {
    const FaceStyle st = face_style(pose);
    const double a = gt.major, b = gt.minor;
    // face-local axes: u along the minor (width) direction, v along the major
    const double phi = gt.angle - 1.5707963267948966; // tilt from upright
    const double cu = std::cos(phi), su = std::sin(phi);
    const double fill = rng.uniform(0.72, 0.85);
    const double dark = rng.uniform(0.08, 0.2);
    const double tint_r = rng.uniform(0.0, 0.06);
    const int n = img.dim(1), m = img.dim(2);
    const int x0 = std::max(0, static_cast<int>(gt.cx - a - 2)), x1 = std::min(m - 1, static_cast<int>(gt.cx + a + 2));
    const int y0 = std::max(0, static_cast<int>(gt.cy - a - 2)), y1 = std::min(n - 1, static_cast<int>(gt.cy + a + 2));
    SupportMoments mom;
    for (int i = y0; i <= y1; ++i)
        for (int j = x0; j <= x1; ++j) {
            const double px = j + 0.5, py = i + 0.5;
            const double dx = px - gt.cx, dy = py - gt.cy;
            // face-local coordinates (u: width, v: height)
            const double u = dx * cu + dy * su;
            const double v = -dx * su + dy * cu;
            const double r2 = (u / b) * (u / b) + (v / a) * (v / a);
            if (r2 > 1.0) continue;
            mom.add(px, py);
            double val = fill * (1.0 - 0.18 * r2);
            // eyes
            for (double eu : st.eye_u) {
                const double du = (u - eu * b) / (st.eye_r * b);
                const double dv = (v - st.eye_v * a) / (st.eye_r * b);
                if (du * du + dv * dv <= 1.0) val = dark;
            }
            // mouth bar
            if (std::abs(u - st.mouth_u * b) <= st.mouth_halfw * b && std::abs(v - st.mouth_v * a) <= st.mouth_halfh * a)
                val = dark;
            img.at(0, i, j) = std::clamp(val + tint_r, 0.0, 1.0);
            img.at(1, i, j) = std::clamp(val * 0.92, 0.0, 1.0);
            img.at(2, i, j) = std::clamp(val * 0.82, 0.0, 1.0);
        }
    return mom;
}

inline void draw_clutter(Tensor& img, Rng& rng) {
    const int n = img.dim(1), m = img.dim(2);
    const int shapes = 4 + rng.uniform_int(5);
    for (int s = 0; s < shapes; ++s) {
        const double val = rng.uniform(0.05, 0.95);
        const double cx = rng.uniform(10.0, m - 10.0), cy = rng.uniform(10.0, n - 10.0);
        const int kind = rng.uniform_int(3);
        const double ra = rng.uniform(6.0, 34.0), rb = rng.uniform(4.0, 26.0);
        const double th = rng.uniform(0.0, 3.14159);
        const double ct = std::cos(th), stn = std::sin(th);
        const int x0 = std::max(0, static_cast<int>(cx - ra - rb)), x1 = std::min(m - 1, static_cast<int>(cx + ra + rb));
        const int y0 = std::max(0, static_cast<int>(cy - ra - rb)), y1 = std::min(n - 1, static_cast<int>(cy + ra + rb));
        for (int i = y0; i <= y1; ++i)
            for (int j = x0; j <= x1; ++j) {
                const double dx = (j + 0.5) - cx, dy = (i + 0.5) - cy;
                const double u = dx * ct + dy * stn, v = -dx * stn + dy * ct;
                bool in = false;
                if (kind == 0) in = (u / ra) * (u / ra) + (v / rb) * (v / rb) <= 1.0;
                else if (kind == 1) in = std::abs(u) <= ra && std::abs(v) <= rb;
                else in = std::abs(u) <= ra && std::abs(v) <= 0.18 * rb + 1.5;
                if (!in) continue;
                for (int c = 0; c < 3; ++c)
                    img.at(c, i, j) = std::clamp(0.5 * img.at(c, i, j) + 0.5 * val, 0.0, 1.0);
            }
    }
}

inline void draw_occluder(Tensor& img, const Ellipse& gt, double fraction, Rng& rng) {
    if (fraction <= 0.0) return;
    const int n = img.dim(1), m = img.dim(2);
    const double area = fraction * 4.0 * gt.major * gt.major;
    const double aspect = rng.uniform(0.5, 2.0);
    const double w = std::sqrt(area * aspect), h = area / w;
    const double ox = gt.cx + rng.uniform(-0.5, 0.5) * gt.major;
    const double oy = gt.cy + rng.uniform(-0.5, 0.5) * gt.major;
    const int x0 = std::max(0, static_cast<int>(ox - w / 2)), x1 = std::min(m - 1, static_cast<int>(ox + w / 2));
    const int y0 = std::max(0, static_cast<int>(oy - h / 2)), y1 = std::min(n - 1, static_cast<int>(oy + h / 2));
    for (int i = y0; i <= y1; ++i)
        for (int j = x0; j <= x1; ++j)
            for (int c = 0; c < 3; ++c) img.at(c, i, j) = rng.uniform(0.0, 1.0);
}

} // namespace detail

struct SynthPositiveMeta {
    std::string path;
    Ellipse gt;
    int pose = 0;
    long long support_count = 0;
    double support_cx = 0, support_cy = 0;
    double support_var_major = 0, support_var_minor = 0, support_angle = 0;
};

// Deterministic toy corpus: positives are procedurally drawn faces with exact
// ground-truth ellipses, negatives are textured clutter. Train and test splits
// come from disjoint RNG streams of the same seed.
inline SynthDataset synth_generate(const SynthConfig& cfg, std::vector<SynthPositiveMeta>* meta = nullptr) {
    SynthDataset ds;
    ds.train.kind = AnnotationKind::ellipse;
    ds.test.kind = AnnotationKind::ellipse;
    Rng root(cfg.seed);

    auto make_split = [&](DatasetManifest& man, const std::string& prefix, int npos, int nneg,
                          std::uint64_t stream) {
        Rng split_rng = root.fork(stream);
        for (int k = 0; k < npos; ++k) {
            Rng rng = split_rng.fork(static_cast<std::uint64_t>(k));
            SynthImage im;
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%s/pos_%05d.ppm", prefix.c_str(), k);
            im.path = buf;
            im.image = Tensor({3, cfg.image_size, cfg.image_size});
            detail::draw_background(im.image, rng);
            const int pose = cfg.pose_count > 0 ? rng.uniform_int(cfg.pose_count) : 0;
            const double face_h = rng.uniform(cfg.min_face, cfg.max_face);
            const double a = 0.5 * face_h;
            const detail::FaceStyle st = detail::face_style(pose);
            const double b = a * st.aspect;
            const double margin = a + 4.0;
            Ellipse gt;
            gt.major = a;
            gt.minor = b;
            gt.angle = 1.5707963267948966 + rng.uniform(-cfg.angle_jitter, cfg.angle_jitter);
            gt.cx = rng.uniform(margin, cfg.image_size - margin);
            gt.cy = rng.uniform(margin, cfg.image_size - margin);
            detail::SupportMoments mom = detail::draw_face(im.image, gt, pose, rng);
            detail::draw_occluder(im.image, gt, cfg.occluder_fraction, rng);
            im.pose = pose;
            ManifestEntry entry;
            entry.path = im.path;
            entry.ellipses.push_back(gt);
            man.entries.push_back(entry);
            if (meta) {
                SynthPositiveMeta pm;
                pm.path = im.path;
                pm.gt = gt;
                pm.pose = pose;
                pm.support_count = mom.n;
                if (mom.n > 0) {
                    pm.support_cx = mom.sx / mom.n;
                    pm.support_cy = mom.sy / mom.n;
                    const double vxx = mom.sxx / mom.n - pm.support_cx * pm.support_cx;
                    const double vyy = mom.syy / mom.n - pm.support_cy * pm.support_cy;
                    const double vxy = mom.sxy / mom.n - pm.support_cx * pm.support_cy;
                    const double tr = 0.5 * (vxx + vyy);
                    const double det = std::sqrt(std::max(0.0, 0.25 * (vxx - vyy) * (vxx - vyy) + vxy * vxy));
                    pm.support_var_major = tr + det;
                    pm.support_var_minor = std::max(0.0, tr - det);
                    pm.support_angle = 0.5 * std::atan2(2.0 * vxy, vxx - vyy);
                }
                meta->push_back(pm);
            }
            ds.images.push_back(std::move(im));
        }
        for (int k = 0; k < nneg; ++k) {
            Rng rng = split_rng.fork(0x100000ull + static_cast<std::uint64_t>(k));
            SynthImage im;
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%s/neg_%05d.ppm", prefix.c_str(), k);
            im.path = buf;
            im.image = Tensor({3, cfg.image_size, cfg.image_size});
            detail::draw_background(im.image, rng);
            detail::draw_clutter(im.image, rng);
            ManifestEntry entry;
            entry.path = im.path;
            man.entries.push_back(entry);
            ds.images.push_back(std::move(im));
        }
    };

    make_split(ds.train, "train", cfg.num_pos, cfg.num_neg, 1);
    make_split(ds.test, "test", cfg.test_pos, cfg.test_neg, 2);
    return ds;
}

} // namespace gridloss
