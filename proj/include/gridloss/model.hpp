#pragma once

#include "gridloss/grid_loss.hpp"
#include "gridloss/layers.hpp"
#include "gridloss/rng.hpp"
#include "gridloss/tensor.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace gridloss {

struct DetectorHyper {
    int channels = 10;
    int input_cells = 20; // 20x20 cells = 80x80 px windows at shrink 4
    int window_px = 80;
    int face_px = 60;
    int kernel = 5;
    int f1 = 6, f2 = 6;
    int block_n = 2;
    int pose_count = 2;
    double lambda = 1.0;
    double dropout_rate = 0.1;
    bool deep_supervision = true;
    std::string loss_type = "grid"; // "grid" or "hinge" (hinge == lambda 0, no aux losses)

    int hidden_side() const { return input_cells - kernel + 1; }
    int output_side() const { return hidden_side() - kernel + 1; }
    // hinge training is exactly the grid objective with the local terms off
    double effective_lambda() const { return loss_type == "hinge" ? 0.0 : lambda; }

    void validate() const {
        if (loss_type != "grid" && loss_type != "hinge")
            throw InvalidInput("loss_type must be grid or hinge, got " + loss_type);
        if (pose_count < 1) throw InvalidInput("pose_count must be >= 1");
        if (output_side() < 1) throw InvalidInput("input_cells too small for two convolutions");
    }
};

struct FoldedClassifier {
    std::vector<double> w;
    double b = 0.0;
};

// Two 5x5 convolutions with ReLU and an LCN in between, dropout after the last
// convolution, and one grid classifier per pose unit on the final map. Hidden
// classifiers exist only during training (deep supervision) and never run at
// inference. `folded` holds the per-pose linear classifiers materialized from
// the grid layers.
struct DetectorModel {
    DetectorHyper hyper;
    ConvLayer conv1, conv2;
    std::vector<GridClassifier> output_cls;
    std::vector<GridClassifier> hidden_cls;
    std::vector<FoldedClassifier> folded;

    bool is_folded() const { return folded.size() == output_cls.size() && !folded.empty(); }
};

inline GridSpec output_grid_spec(const DetectorHyper& h) {
    GridSpec s;
    s.n = h.block_n;
    s.f = h.f2;
    s.r = s.c = h.output_side();
    s.lambda = h.effective_lambda();
    return s;
}

inline GridSpec hidden_grid_spec(const DetectorHyper& h) {
    GridSpec s;
    s.n = h.block_n; // same block side as the output layer
    s.f = h.f1;
    s.r = s.c = h.hidden_side();
    s.lambda = h.effective_lambda();
    return s;
}

// Auxiliary grid classifiers on the hidden convolution map, one per pose unit,
// each with its own map's block count (and margin). Training-only; inference
// ignores them entirely.
inline void attach_deep_supervision(DetectorModel& m, Rng& rng) {
    m.hidden_cls.clear();
    const GridSpec spec = hidden_grid_spec(m.hyper);
    for (int p = 0; p < m.hyper.pose_count; ++p)
        m.hidden_cls.push_back(GridClassifier::random_init(spec, rng));
}

inline Tensor gaussian_tensor(std::vector<int> shape, Rng& rng, double stddev = 0.01) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.normal(0.0, stddev);
    return t;
}

inline DetectorModel init_detector(const DetectorHyper& hyper, std::uint64_t seed) {
    hyper.validate();
    DetectorModel m;
    m.hyper = hyper;
    Rng rng(seed);
    const int k = hyper.kernel;
    m.conv1.weights = gaussian_tensor({hyper.f1, hyper.channels, k, k}, rng);
    m.conv1.bias = Tensor({hyper.f1});
    m.conv2.weights = gaussian_tensor({hyper.f2, hyper.f1, k, k}, rng);
    m.conv2.bias = Tensor({hyper.f2});
    const GridSpec out_spec = output_grid_spec(hyper);
    for (int p = 0; p < hyper.pose_count; ++p)
        m.output_cls.push_back(GridClassifier::random_init(out_spec, rng));
    // hidden classifiers drawn last so grid/hinge runs share the trunk init
    if (hyper.deep_supervision) attach_deep_supervision(m, rng);
    return m;
}

inline void fold_model(DetectorModel& m) {
    m.folded.clear();
    for (const auto& cls : m.output_cls) {
        auto [w, b] = fold_back(cls);
        m.folded.push_back({std::move(w), b});
    }
}

struct ForwardCache {
    Tensor a1, r1, h, a2, r2, d;
    DropoutState drop;
};

inline ForwardCache detector_forward(const DetectorModel& m, const Tensor& window, bool training,
                                     std::uint64_t dropout_seed = 0) {
    require_shape(window, {m.hyper.channels, m.hyper.input_cells, m.hyper.input_cells}, "detector window");
    ForwardCache c;
    c.a1 = conv2d(window, m.conv1);
    c.r1 = relu(c.a1);
    c.h = lcn(c.r1);
    c.a2 = conv2d(c.h, m.conv2);
    c.r2 = relu(c.a2);
    auto [d, st] = dropout(c.r2, m.hyper.dropout_rate, dropout_seed, training);
    c.d = std::move(d);
    c.drop = st;
    return c;
}

// Inference score of a standalone window: max over pose units of the folded
// linear classifiers.
inline std::pair<double, int> window_score(const DetectorModel& m, const Tensor& window) {
    if (!m.is_folded()) throw InvalidInput("model is not folded; fold_model() before scoring");
    ForwardCache c = detector_forward(m, window, false);
    double best = -1e300;
    int pose = 0;
    for (int p = 0; p < static_cast<int>(m.folded.size()); ++p) {
        const double s = folded_score(m.folded[static_cast<std::size_t>(p)].w,
                                      m.folded[static_cast<std::size_t>(p)].b, c.d);
        if (s > best) {
            best = s;
            pose = p;
        }
    }
    return {best, pose};
}

struct ClassifierGrads {
    std::vector<std::vector<double>> w;
    std::vector<double> b;
};

struct ModelGrads {
    Tensor conv1_w, conv1_b, conv2_w, conv2_b;
    std::vector<ClassifierGrads> output, hidden;

    static ModelGrads zeros_like(const DetectorModel& m) {
        ModelGrads g;
        g.conv1_w = Tensor(m.conv1.weights.shape);
        g.conv1_b = Tensor(m.conv1.bias.shape);
        g.conv2_w = Tensor(m.conv2.weights.shape);
        g.conv2_b = Tensor(m.conv2.bias.shape);
        auto zero_cls = [](const GridClassifier& c) {
            ClassifierGrads cg;
            cg.b.assign(c.block_biases.size(), 0.0);
            cg.w.resize(c.block_weights.size());
            for (std::size_t i = 0; i < c.block_weights.size(); ++i)
                cg.w[i].assign(c.block_weights[i].size(), 0.0);
            return cg;
        };
        for (const auto& c : m.output_cls) g.output.push_back(zero_cls(c));
        for (const auto& c : m.hidden_cls) g.hidden.push_back(zero_cls(c));
        return g;
    }

    void accumulate(const ModelGrads& o, double scale) {
        auto axpy = [scale](std::vector<double>& dst, const std::vector<double>& src) {
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
        };
        axpy(conv1_w.data, o.conv1_w.data);
        axpy(conv1_b.data, o.conv1_b.data);
        axpy(conv2_w.data, o.conv2_w.data);
        axpy(conv2_b.data, o.conv2_b.data);
        for (std::size_t p = 0; p < output.size(); ++p) {
            axpy(output[p].b, o.output[p].b);
            for (std::size_t i = 0; i < output[p].w.size(); ++i) axpy(output[p].w[i], o.output[p].w[i]);
        }
        for (std::size_t p = 0; p < hidden.size(); ++p) {
            axpy(hidden[p].b, o.hidden[p].b);
            for (std::size_t i = 0; i < hidden[p].w.size(); ++i) axpy(hidden[p].w[i], o.hidden[p].w[i]);
        }
    }
};

// Loss of one training window. Positives train only their pose unit with
// y = +1; negatives train every pose unit with y = -1, each unit's term
// weighted 1/P so a unit sees the same positive and negative pressure under
// 1:1 class-balanced batches. When grads is non-null the exact parameter and
// input gradients are accumulated into it.
inline double sample_loss(const DetectorModel& m, const Tensor& window, int pose, int label, bool training,
                          std::uint64_t dropout_seed, ModelGrads* grads = nullptr) {
    if (label != 1 && label != -1) throw InvalidInput("label must be +1/-1");
    ForwardCache c = detector_forward(m, window, training, dropout_seed);
    std::vector<int> units;
    double unit_weight = 1.0;
    if (label == 1) {
        if (pose < 0 || pose >= m.hyper.pose_count)
            throw InvalidInput("positive sample pose " + std::to_string(pose) + " out of range");
        units.push_back(pose);
    } else {
        for (int p = 0; p < m.hyper.pose_count; ++p) units.push_back(p);
        unit_weight = 1.0 / m.hyper.pose_count;
    }

    double loss = 0.0;
    Tensor grad_d(c.d.shape);
    Tensor grad_h_aux(c.h.shape);
    const bool use_hidden = m.hyper.deep_supervision && !m.hidden_cls.empty();
    for (int u : units) {
        LossBreakdown out = grid_loss_forward(c.d, m.output_cls[static_cast<std::size_t>(u)], label);
        loss += unit_weight * out.total;
        if (use_hidden) {
            LossBreakdown aux = grid_loss_forward(c.h, m.hidden_cls[static_cast<std::size_t>(u)], label);
            loss += unit_weight * aux.total;
        }
        if (grads) {
            GridLossGrads og = grid_loss_backward(c.d, m.output_cls[static_cast<std::size_t>(u)], label);
            for (std::size_t i = 0; i < og.block_weights.size(); ++i) {
                auto& gw = grads->output[static_cast<std::size_t>(u)].w[i];
                for (std::size_t k = 0; k < gw.size(); ++k) gw[k] += unit_weight * og.block_weights[i][k];
                grads->output[static_cast<std::size_t>(u)].b[i] += unit_weight * og.block_biases[i];
            }
            for (std::size_t k = 0; k < grad_d.data.size(); ++k) grad_d.data[k] += unit_weight * og.x.data[k];
            if (use_hidden) {
                GridLossGrads hg = grid_loss_backward(c.h, m.hidden_cls[static_cast<std::size_t>(u)], label);
                for (std::size_t i = 0; i < hg.block_weights.size(); ++i) {
                    auto& gw = grads->hidden[static_cast<std::size_t>(u)].w[i];
                    for (std::size_t k = 0; k < gw.size(); ++k) gw[k] += unit_weight * hg.block_weights[i][k];
                    grads->hidden[static_cast<std::size_t>(u)].b[i] += unit_weight * hg.block_biases[i];
                }
                for (std::size_t k = 0; k < grad_h_aux.data.size(); ++k)
                    grad_h_aux.data[k] += unit_weight * hg.x.data[k];
            }
        }
    }

    if (grads) {
        Tensor grad_r2 = dropout_backward(c.drop, grad_d);
        Tensor grad_a2 = relu_backward(c.a2, grad_r2);
        ConvGrads cg2 = conv2d_backward(c.h, m.conv2, grad_a2);
        for (std::size_t k = 0; k < grad_h_aux.data.size(); ++k) grad_h_aux.data[k] += cg2.input.data[k];
        Tensor grad_r1 = lcn_backward(c.r1, grad_h_aux);
        Tensor grad_a1 = relu_backward(c.a1, grad_r1);
        ConvGrads cg1 = conv2d_backward(window, m.conv1, grad_a1);
        for (std::size_t k = 0; k < grads->conv2_w.data.size(); ++k) grads->conv2_w.data[k] += cg2.weights.data[k];
        for (std::size_t k = 0; k < grads->conv2_b.data.size(); ++k) grads->conv2_b.data[k] += cg2.bias.data[k];
        for (std::size_t k = 0; k < grads->conv1_w.data.size(); ++k) grads->conv1_w.data[k] += cg1.weights.data[k];
        for (std::size_t k = 0; k < grads->conv1_b.data.size(); ++k) grads->conv1_b.data[k] += cg1.bias.data[k];
    }
    return loss;
}

// ---- parameter traversal (SGD, serialization helpers) ----

template <typename F>
void visit_model_arrays(DetectorModel& m, F&& f) {
    f(m.conv1.weights.data);
    f(m.conv1.bias.data);
    f(m.conv2.weights.data);
    f(m.conv2.bias.data);
    for (auto& c : m.output_cls) {
        for (auto& w : c.block_weights) f(w);
        f(c.block_biases);
    }
    for (auto& c : m.hidden_cls) {
        for (auto& w : c.block_weights) f(w);
        f(c.block_biases);
    }
}

template <typename F>
void visit_grad_arrays(ModelGrads& g, F&& f) {
    f(g.conv1_w.data);
    f(g.conv1_b.data);
    f(g.conv2_w.data);
    f(g.conv2_b.data);
    for (auto& c : g.output) {
        for (auto& w : c.w) f(w);
        f(c.b);
    }
    for (auto& c : g.hidden) {
        for (auto& w : c.w) f(w);
        f(c.b);
    }
}

// ---- model file format ----
// Line-oriented text: header `GRIDLOSS-MODEL 1`, then named arrays as
// `name ndim d1..dn` followed by the values. %.17g keeps doubles bit-exact
// across a save/load round trip.

namespace detail {

inline void write_array(std::ostream& os, const std::string& name, const std::vector<int>& dims,
                        const std::vector<double>& values) {
    os << name << " " << dims.size();
    for (int d : dims) os << " " << d;
    os << "\n";
    char buf[64];
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", values[i]);
        os << buf << (i + 1 == values.size() ? "" : " ");
    }
    os << "\n";
}

inline void write_scalar(std::ostream& os, const std::string& name, double v) {
    write_array(os, name, {1}, {v});
}

struct NamedArrays {
    std::map<std::string, std::pair<std::vector<int>, std::vector<double>>> arrays;

    const std::vector<double>& values(const std::string& name) const {
        auto it = arrays.find(name);
        if (it == arrays.end()) throw IoError("model file missing array '" + name + "'");
        return it->second.second;
    }
    const std::vector<int>& dims(const std::string& name) const { return arrays.at(name).first; }
    double scalar(const std::string& name) const {
        const auto& v = values(name);
        if (v.size() != 1) throw IoError("array '" + name + "' is not a scalar");
        return v[0];
    }
    bool has(const std::string& name) const { return arrays.count(name) != 0; }
};

inline NamedArrays read_named_arrays(std::istream& in, const std::string& path) {
    NamedArrays na;
    std::string name;
    while (in >> name) {
        int ndim;
        if (!(in >> ndim) || ndim < 0 || ndim > 8) throw IoError(path + ": bad ndim for array '" + name + "'");
        std::vector<int> dims(static_cast<std::size_t>(ndim));
        long long count = 1;
        for (int& d : dims) {
            if (!(in >> d) || d < 1) throw IoError(path + ": bad dimension in array '" + name + "'");
            count *= d;
        }
        std::vector<double> vals(static_cast<std::size_t>(count));
        for (double& v : vals)
            if (!(in >> v)) throw IoError(path + ": truncated values in array '" + name + "'");
        na.arrays[name] = {std::move(dims), std::move(vals)};
    }
    return na;
}

inline std::string cls_prefix(const char* kind, int pose) {
    return std::string(kind) + std::to_string(pose);
}

inline void write_classifier(std::ostream& os, const std::string& prefix, const GridClassifier& c) {
    for (std::size_t i = 0; i < c.block_weights.size(); ++i)
        write_array(os, prefix + ".block" + std::to_string(i) + ".w",
                    {static_cast<int>(c.block_weights[i].size())}, c.block_weights[i]);
    write_array(os, prefix + ".biases", {static_cast<int>(c.block_biases.size())}, c.block_biases);
}

inline GridClassifier read_classifier(const NamedArrays& na, const std::string& prefix, const GridSpec& spec) {
    GridClassifier c = GridClassifier::zeros(spec);
    for (std::size_t i = 0; i < c.block_weights.size(); ++i) {
        const auto& w = na.values(prefix + ".block" + std::to_string(i) + ".w");
        if (w.size() != c.block_weights[i].size())
            throw IoError("block weight length mismatch in " + prefix + ".block" + std::to_string(i));
        c.block_weights[i] = w;
    }
    const auto& b = na.values(prefix + ".biases");
    if (b.size() != c.block_biases.size()) throw IoError("bias count mismatch in " + prefix);
    c.block_biases = b;
    return c;
}

} // namespace detail

inline void save_model(const DetectorModel& m, std::ostream& os) {
    os << "GRIDLOSS-MODEL 1\n";
    detail::write_scalar(os, "hyper.channels", m.hyper.channels);
    detail::write_scalar(os, "hyper.input_cells", m.hyper.input_cells);
    detail::write_scalar(os, "hyper.window_px", m.hyper.window_px);
    detail::write_scalar(os, "hyper.face_px", m.hyper.face_px);
    detail::write_scalar(os, "hyper.kernel", m.hyper.kernel);
    detail::write_scalar(os, "hyper.f1", m.hyper.f1);
    detail::write_scalar(os, "hyper.f2", m.hyper.f2);
    detail::write_scalar(os, "hyper.block_n", m.hyper.block_n);
    detail::write_scalar(os, "hyper.pose_count", m.hyper.pose_count);
    detail::write_scalar(os, "hyper.lambda", m.hyper.lambda);
    detail::write_scalar(os, "hyper.dropout", m.hyper.dropout_rate);
    detail::write_scalar(os, "hyper.deep_supervision", m.hyper.deep_supervision ? 1.0 : 0.0);
    detail::write_scalar(os, "hyper.loss_type", m.hyper.loss_type == "hinge" ? 1.0 : 0.0);
    detail::write_array(os, "conv1.weights", m.conv1.weights.shape, m.conv1.weights.data);
    detail::write_array(os, "conv1.bias", m.conv1.bias.shape, m.conv1.bias.data);
    detail::write_array(os, "conv2.weights", m.conv2.weights.shape, m.conv2.weights.data);
    detail::write_array(os, "conv2.bias", m.conv2.bias.shape, m.conv2.bias.data);
    for (int p = 0; p < m.hyper.pose_count; ++p)
        detail::write_classifier(os, detail::cls_prefix("out", p), m.output_cls[static_cast<std::size_t>(p)]);
    for (std::size_t p = 0; p < m.hidden_cls.size(); ++p)
        detail::write_classifier(os, detail::cls_prefix("hid", static_cast<int>(p)), m.hidden_cls[p]);
    for (std::size_t p = 0; p < m.folded.size(); ++p) {
        detail::write_array(os, "folded" + std::to_string(p) + ".w",
                            {static_cast<int>(m.folded[p].w.size())}, m.folded[p].w);
        detail::write_scalar(os, "folded" + std::to_string(p) + ".b", m.folded[p].b);
    }
}

inline void save_model(const DetectorModel& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write model " + path);
    save_model(m, out);
}

inline DetectorModel load_model(std::istream& in, const std::string& path) {
    std::string magic, version;
    in >> magic >> version;
    if (magic != "GRIDLOSS-MODEL" || version != "1")
        throw IoError(path + ": not a GRIDLOSS-MODEL 1 file");
    detail::NamedArrays na = detail::read_named_arrays(in, path);

    DetectorModel m;
    m.hyper.channels = static_cast<int>(na.scalar("hyper.channels"));
    m.hyper.input_cells = static_cast<int>(na.scalar("hyper.input_cells"));
    m.hyper.window_px = static_cast<int>(na.scalar("hyper.window_px"));
    m.hyper.face_px = static_cast<int>(na.scalar("hyper.face_px"));
    m.hyper.kernel = static_cast<int>(na.scalar("hyper.kernel"));
    m.hyper.f1 = static_cast<int>(na.scalar("hyper.f1"));
    m.hyper.f2 = static_cast<int>(na.scalar("hyper.f2"));
    m.hyper.block_n = static_cast<int>(na.scalar("hyper.block_n"));
    m.hyper.pose_count = static_cast<int>(na.scalar("hyper.pose_count"));
    m.hyper.lambda = na.scalar("hyper.lambda");
    m.hyper.dropout_rate = na.scalar("hyper.dropout");
    m.hyper.deep_supervision = na.scalar("hyper.deep_supervision") != 0.0;
    m.hyper.loss_type = na.scalar("hyper.loss_type") != 0.0 ? "hinge" : "grid";
    m.hyper.validate();

    auto read_tensor = [&](const std::string& name) {
        return Tensor(na.dims(name), na.values(name));
    };
    m.conv1.weights = read_tensor("conv1.weights");
    m.conv1.bias = read_tensor("conv1.bias");
    m.conv2.weights = read_tensor("conv2.weights");
    m.conv2.bias = read_tensor("conv2.bias");

    const GridSpec out_spec = output_grid_spec(m.hyper);
    const GridSpec hid_spec = hidden_grid_spec(m.hyper);
    for (int p = 0; p < m.hyper.pose_count; ++p)
        m.output_cls.push_back(detail::read_classifier(na, detail::cls_prefix("out", p), out_spec));
    for (int p = 0; na.has(detail::cls_prefix("hid", p) + ".biases"); ++p)
        m.hidden_cls.push_back(detail::read_classifier(na, detail::cls_prefix("hid", p), hid_spec));
    for (int p = 0; na.has("folded" + std::to_string(p) + ".b"); ++p) {
        FoldedClassifier fc;
        fc.w = na.values("folded" + std::to_string(p) + ".w");
        fc.b = na.scalar("folded" + std::to_string(p) + ".b");
        m.folded.push_back(std::move(fc));
    }
    return m;
}

inline DetectorModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model " + path);
    return load_model(in, path);
}

} // namespace gridloss
