#pragma once

#include "gridloss/data.hpp"
#include "gridloss/geometry.hpp"
#include "gridloss/layers.hpp"
#include "gridloss/model.hpp"
#include "gridloss/parallel.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <vector>

namespace gridloss {

// Small refinement network over 40x40-cell channel windows (the detection
// window at twice the detector resolution) emitting 5 ellipse parameter
// offsets relative to the detection box.
struct RegressorModel {
    ConvLayer conv1, conv2; // 5x5, stride 2
    std::vector<double> lin_w; // [5 x feat]
    std::array<double, 5> lin_b{};
    int channels = 10;
    int input_cells = 40;
    int f1 = 8, f2 = 8;

    int mid_side() const { return (input_cells - 5) / 2 + 1; }              // 18
    int top_side() const { return (mid_side() - 5) / 2 + 1; }               // 7
    int feat_count() const { return f2 * top_side() * top_side(); }
};

inline RegressorModel init_regressor(std::uint64_t seed, int f1 = 8, int f2 = 8) {
    RegressorModel m;
    m.f1 = f1;
    m.f2 = f2;
    Rng rng(seed);
    m.conv1.weights = gaussian_tensor({f1, m.channels, 5, 5}, rng);
    m.conv1.bias = Tensor({f1});
    m.conv2.weights = gaussian_tensor({f2, f1, 5, 5}, rng);
    m.conv2.bias = Tensor({f2});
    m.lin_w.assign(static_cast<std::size_t>(5) * m.feat_count(), 0.0);
    for (double& v : m.lin_w) v = rng.normal(0.0, 0.01);
    return m;
}

// Offset encoding: log-scale axes against the box half-extents, center shift
// in box units, absolute angle. decode(0) is the ellipse inscribed in the box.
inline std::array<double, 5> encode_ellipse(const Ellipse& e, const BBox& box) {
    box.validate();
    e.validate();
    return {std::log(2.0 * e.major / box.w), std::log(2.0 * e.minor / box.h), e.angle,
            (e.cx - box.cx()) / box.w, (e.cy - box.cy()) / box.h};
}

// Raw decode; may come out with minor > major mid-training.
inline Ellipse decode_ellipse_raw(const std::array<double, 5>& out, const BBox& box) {
    Ellipse e;
    e.major = 0.5 * box.w * std::exp(out[0]);
    e.minor = 0.5 * box.h * std::exp(out[1]);
    e.angle = out[2];
    e.cx = box.cx() + out[3] * box.w;
    e.cy = box.cy() + out[4] * box.h;
    return e;
}

inline Ellipse decode_ellipse(const std::array<double, 5>& out, const BBox& box) {
    Ellipse e = decode_ellipse_raw(out, box);
    if (e.minor > e.major) { // same shape, canonical axis order
        std::swap(e.major, e.minor);
        e.angle += 1.5707963267948966;
    }
    return e;
}

struct RegressorCache {
    Tensor a1, r1, a2, r2;
    std::array<double, 5> out{};
};

inline RegressorCache regressor_forward(const RegressorModel& m, const Tensor& window) {
    require_shape(window, {m.channels, m.input_cells, m.input_cells}, "regressor window");
    RegressorCache c;
    c.a1 = conv2d(window, m.conv1, 2);
    c.r1 = relu(c.a1);
    c.a2 = conv2d(c.r1, m.conv2, 2);
    c.r2 = relu(c.a2);
    const int F = m.feat_count();
    for (int o = 0; o < 5; ++o) {
        double acc = m.lin_b[static_cast<std::size_t>(o)];
        const double* w = &m.lin_w[static_cast<std::size_t>(o) * F];
        for (int k = 0; k < F; ++k) acc += w[k] * c.r2.data[static_cast<std::size_t>(k)];
        c.out[static_cast<std::size_t>(o)] = acc;
    }
    return c;
}

inline Ellipse regress(const RegressorModel& m, const Tensor& window_channels, const BBox& box) {
    return decode_ellipse(regressor_forward(m, window_channels).out, box);
}

// Channel crop feeding the regressor: the detection window region at twice the
// detector resolution (160 px -> 40x40 cells).
inline Tensor regressor_window(const Tensor& image, const BBox& face_box, const CropJitter& jit = {},
                               Rng* rng = nullptr) {
    Tensor win = crop_window(image, face_box, 160, 120, jit, rng);
    return compute_channels(win).channels;
}

enum class RegressionLoss { sse, num };

struct RegressorSample {
    Tensor channels; // [10, 40, 40]
    BBox box;        // the (jittered) detection box the offsets are relative to
    Ellipse gt;
};

struct RegressorTrainConfig {
    double lr = 0.05;
    double momentum = 0.9;
    int epochs = 30;
    int batch_size = 32;
    std::uint64_t seed = 1;
    int threads = 1;
};

namespace detail {

struct RegGrads {
    Tensor c1w, c1b, c2w, c2b;
    std::vector<double> lw;
    std::array<double, 5> lb{};

    static RegGrads zeros_like(const RegressorModel& m) {
        RegGrads g;
        g.c1w = Tensor(m.conv1.weights.shape);
        g.c1b = Tensor(m.conv1.bias.shape);
        g.c2w = Tensor(m.conv2.weights.shape);
        g.c2b = Tensor(m.conv2.bias.shape);
        g.lw.assign(m.lin_w.size(), 0.0);
        return g;
    }

    void accumulate(const RegGrads& o, double s) {
        auto axpy = [s](std::vector<double>& d, const std::vector<double>& src) {
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * src[i];
        };
        axpy(c1w.data, o.c1w.data);
        axpy(c1b.data, o.c1b.data);
        axpy(c2w.data, o.c2w.data);
        axpy(c2b.data, o.c2b.data);
        axpy(lw, o.lw);
        for (int i = 0; i < 5; ++i) lb[static_cast<std::size_t>(i)] += s * o.lb[static_cast<std::size_t>(i)];
    }
};

// Backprop from d loss/d out through the linear head and both convolutions.
inline void regressor_backward(const RegressorModel& m, const Tensor& window, const RegressorCache& c,
                               const std::array<double, 5>& dout, RegGrads& g) {
    const int F = m.feat_count();
    Tensor grad_r2(c.r2.shape);
    for (int o = 0; o < 5; ++o) {
        const double go = dout[static_cast<std::size_t>(o)];
        g.lb[static_cast<std::size_t>(o)] += go;
        double* gw = &g.lw[static_cast<std::size_t>(o) * F];
        const double* w = &m.lin_w[static_cast<std::size_t>(o) * F];
        for (int k = 0; k < F; ++k) {
            gw[k] += go * c.r2.data[static_cast<std::size_t>(k)];
            grad_r2.data[static_cast<std::size_t>(k)] += go * w[k];
        }
    }
    Tensor grad_a2 = relu_backward(c.a2, grad_r2);
    ConvGrads cg2 = conv2d_backward(c.r1, m.conv2, grad_a2, 2);
    Tensor grad_a1 = relu_backward(c.a1, cg2.input);
    ConvGrads cg1 = conv2d_backward(window, m.conv1, grad_a1, 2);
    for (std::size_t i = 0; i < g.c2w.data.size(); ++i) g.c2w.data[i] += cg2.weights.data[i];
    for (std::size_t i = 0; i < g.c2b.data.size(); ++i) g.c2b.data[i] += cg2.bias.data[i];
    for (std::size_t i = 0; i < g.c1w.data.size(); ++i) g.c1w.data[i] += cg1.weights.data[i];
    for (std::size_t i = 0; i < g.c1b.data.size(); ++i) g.c1b.data[i] += cg1.bias.data[i];
}

// d loss / d out for one sample. SSE descends on the squared error in the
// normalized (encoded) parameter space; NUM ascends the rasterized PASCAL
// overlap through the decode map.
inline std::array<double, 5> regressor_out_grad(const RegressorSample& s, const std::array<double, 5>& out,
                                                RegressionLoss mode, double* loss_out) {
    std::array<double, 5> dout{};
    if (mode == RegressionLoss::sse) {
        const std::array<double, 5> target = encode_ellipse(s.gt, s.box);
        double loss = 0.0;
        for (int i = 0; i < 5; ++i) {
            const double d = out[static_cast<std::size_t>(i)] - target[static_cast<std::size_t>(i)];
            loss += d * d;
            dout[static_cast<std::size_t>(i)] = 2.0 * d;
        }
        if (loss_out) *loss_out = loss;
    } else {
        const Ellipse pred = decode_ellipse_raw(out, s.box);
        const OverlapGrad og = numeric_overlap_grad(pred, s.gt);
        // chain rule through the decode map
        const double jac[5] = {pred.major, pred.minor, 1.0, s.box.w, s.box.h};
        for (int i = 0; i < 5; ++i)
            dout[static_cast<std::size_t>(i)] = -og.g[static_cast<std::size_t>(i)] * jac[i];
        if (loss_out) *loss_out = -overlap_voc(pred, s.gt);
    }
    return dout;
}

} // namespace detail

struct RegressorTrainLog {
    std::vector<double> loss; // per epoch, mean over batches (negative mean overlap for NUM)
};

inline void sgd_momentum_step_arrays(RegressorModel& m, detail::RegGrads& g, detail::RegGrads& v, double lr,
                                     double momentum) {
    auto step = [lr, momentum](std::vector<double>& p, const std::vector<double>& grad, std::vector<double>& vel) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            vel[i] = momentum * vel[i] - lr * grad[i];
            p[i] += vel[i];
        }
    };
    step(m.conv1.weights.data, g.c1w.data, v.c1w.data);
    step(m.conv1.bias.data, g.c1b.data, v.c1b.data);
    step(m.conv2.weights.data, g.c2w.data, v.c2w.data);
    step(m.conv2.bias.data, g.c2b.data, v.c2b.data);
    step(m.lin_w, g.lw, v.lw);
    for (int i = 0; i < 5; ++i) {
        v.lb[static_cast<std::size_t>(i)] = momentum * v.lb[static_cast<std::size_t>(i)] -
                                            lr * g.lb[static_cast<std::size_t>(i)];
        m.lin_b[static_cast<std::size_t>(i)] += v.lb[static_cast<std::size_t>(i)];
    }
}

inline RegressorModel train_regressor(const std::vector<RegressorSample>& data, RegressionLoss mode,
                                      const RegressorTrainConfig& cfg, RegressorTrainLog* log = nullptr) {
    if (data.empty()) throw InvalidInput("train_regressor: empty dataset");
    Rng rng(cfg.seed);
    RegressorModel model = init_regressor(rng.next_u64());
    detail::RegGrads velocity = detail::RegGrads::zeros_like(model);

    const int n = static_cast<int>(data.size());
    const int bs = std::min(cfg.batch_size, n);
    const int batches = (n + bs - 1) / bs;
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng = rng.fork(77 + static_cast<std::uint64_t>(epoch));
        erng.shuffle(order);
        double epoch_loss = 0.0;
        for (int b = 0; b < batches; ++b) {
            const int lo = b * bs, hi = std::min(n, lo + bs);
            const int B = hi - lo;
            std::vector<detail::RegGrads> slot(static_cast<std::size_t>(B));
            std::vector<double> slot_loss(static_cast<std::size_t>(B), 0.0);
            parallel_for(B, cfg.threads, [&](int k) {
                const RegressorSample& s = data[static_cast<std::size_t>(order[static_cast<std::size_t>(lo + k)])];
                slot[static_cast<std::size_t>(k)] = detail::RegGrads::zeros_like(model);
                RegressorCache c = regressor_forward(model, s.channels);
                const auto dout = detail::regressor_out_grad(s, c.out, mode, &slot_loss[static_cast<std::size_t>(k)]);
                detail::regressor_backward(model, s.channels, c, dout, slot[static_cast<std::size_t>(k)]);
            });
            detail::RegGrads grads = detail::RegGrads::zeros_like(model);
            double bl = 0.0;
            for (int k = 0; k < B; ++k) {
                grads.accumulate(slot[static_cast<std::size_t>(k)], 1.0 / B);
                bl += slot_loss[static_cast<std::size_t>(k)];
            }
            epoch_loss += bl / B;

            sgd_momentum_step_arrays(model, grads, velocity, cfg.lr, cfg.momentum);
        }
        if (log) log->loss.push_back(epoch_loss / batches);
    }
    return model;
}

// ---- serialization ----

inline void save_regressor(const RegressorModel& m, std::ostream& os) {
    os << "GRIDLOSS-REGRESSOR 1\n";
    detail::write_scalar(os, "reg.channels", m.channels);
    detail::write_scalar(os, "reg.input_cells", m.input_cells);
    detail::write_scalar(os, "reg.f1", m.f1);
    detail::write_scalar(os, "reg.f2", m.f2);
    detail::write_array(os, "reg.conv1.weights", m.conv1.weights.shape, m.conv1.weights.data);
    detail::write_array(os, "reg.conv1.bias", m.conv1.bias.shape, m.conv1.bias.data);
    detail::write_array(os, "reg.conv2.weights", m.conv2.weights.shape, m.conv2.weights.data);
    detail::write_array(os, "reg.conv2.bias", m.conv2.bias.shape, m.conv2.bias.data);
    detail::write_array(os, "reg.lin.w", {static_cast<int>(m.lin_w.size())}, m.lin_w);
    detail::write_array(os, "reg.lin.b", {5}, std::vector<double>(m.lin_b.begin(), m.lin_b.end()));
}

inline void save_regressor(const RegressorModel& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write regressor " + path);
    save_regressor(m, out);
}

inline RegressorModel load_regressor(std::istream& in, const std::string& path) {
    std::string magic, version;
    in >> magic >> version;
    if (magic != "GRIDLOSS-REGRESSOR" || version != "1")
        throw IoError(path + ": not a GRIDLOSS-REGRESSOR 1 file");
    detail::NamedArrays na = detail::read_named_arrays(in, path);
    RegressorModel m;
    m.channels = static_cast<int>(na.scalar("reg.channels"));
    m.input_cells = static_cast<int>(na.scalar("reg.input_cells"));
    m.f1 = static_cast<int>(na.scalar("reg.f1"));
    m.f2 = static_cast<int>(na.scalar("reg.f2"));
    m.conv1.weights = Tensor(na.dims("reg.conv1.weights"), na.values("reg.conv1.weights"));
    m.conv1.bias = Tensor(na.dims("reg.conv1.bias"), na.values("reg.conv1.bias"));
    m.conv2.weights = Tensor(na.dims("reg.conv2.weights"), na.values("reg.conv2.weights"));
    m.conv2.bias = Tensor(na.dims("reg.conv2.bias"), na.values("reg.conv2.bias"));
    m.lin_w = na.values("reg.lin.w");
    const auto& lb = na.values("reg.lin.b");
    if (lb.size() != 5) throw IoError(path + ": reg.lin.b must have 5 entries");
    for (int i = 0; i < 5; ++i) m.lin_b[static_cast<std::size_t>(i)] = lb[static_cast<std::size_t>(i)];
    return m;
}

inline RegressorModel load_regressor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open regressor " + path);
    return load_regressor(in, path);
}

} // namespace gridloss
