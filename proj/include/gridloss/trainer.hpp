#pragma once

#include "gridloss/data.hpp"
#include "gridloss/detector.hpp"
#include "gridloss/model.hpp"
#include "gridloss/parallel.hpp"

#include <algorithm>
#include <functional>
#include <vector>

namespace gridloss {

struct TrainConfig {
    double lr = 0.01;
    double momentum = 0.9;
    int epochs = 12;
    int batch_size = 64;
    double lambda = 1.0;
    int block_n = 2;
    double dropout = 0.1;
    std::uint64_t seed = 1;
    int bootstrap_rounds = 3;
    int negatives_per_round = 10000; // paper scale; toy runs configure this down
    double val_fraction = 0.2;
    std::string loss_type = "grid"; // grid | hinge
    bool deep_supervision = true;   // hinge runs default to false via trainer defaults
    // step-size multiplier for the auxiliary hidden classifiers; their holistic
    // hinge sums ~1500 unit-variance LCN outputs, so at the trunk lr they ring
    // rail-to-rail and poison the shared layers
    double aux_lr_scale = 0.01;
    int pose_count = 2;
    int f1 = 6, f2 = 6;
    bool mirror_positives = true;
    int threads = 1;
    double bootstrap_threshold = 0.0; // score above which a window counts as a hard negative
    PyramidConfig pyramid;

    void validate() const {
        if (!(lr > 0.0)) throw InvalidInput("lr must be > 0");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidInput("momentum must be in [0,1)");
        if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw InvalidInput("val_fraction must be in (0,1)");
        if (epochs < 1 || batch_size < 2) throw InvalidInput("epochs >= 1 and batch_size >= 2 required");
    }

    DetectorHyper hyper() const {
        DetectorHyper h;
        h.f1 = f1;
        h.f2 = f2;
        h.block_n = block_n;
        h.pose_count = pose_count;
        h.lambda = lambda;
        h.dropout_rate = dropout;
        h.loss_type = loss_type;
        h.deep_supervision = loss_type == "grid" ? deep_supervision : false;
        return h;
    }
};

struct TrainSample {
    Tensor channels; // [10, 20, 20]
    int pose = 0;    // meaningful for positives only
};

// Gaussian(0, stddev^2) init from a seeded generator; biases stay zero.
inline Tensor init_weights(std::vector<int> shape, std::uint64_t seed, double stddev = 0.01) {
    Rng rng(seed);
    return gaussian_tensor(std::move(shape), rng, stddev);
}

// v <- momentum * v - lr * g;  p <- p + v
inline void sgd_momentum_step(std::vector<double>& params, const std::vector<double>& grads,
                              std::vector<double>& velocity, double lr, double momentum) {
    if (params.size() != grads.size() || params.size() != velocity.size())
        throw InvalidInput("sgd step size mismatch: p=" + std::to_string(params.size()) + " g=" +
                           std::to_string(grads.size()) + " v=" + std::to_string(velocity.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        velocity[i] = momentum * velocity[i] - lr * grads[i];
        params[i] += velocity[i];
    }
}

inline void sgd_step_model(DetectorModel& model, ModelGrads& grads, DetectorModel& velocity, double lr,
                           double momentum, double aux_lr_scale = 1.0) {
    sgd_momentum_step(model.conv1.weights.data, grads.conv1_w.data, velocity.conv1.weights.data, lr, momentum);
    sgd_momentum_step(model.conv1.bias.data, grads.conv1_b.data, velocity.conv1.bias.data, lr, momentum);
    sgd_momentum_step(model.conv2.weights.data, grads.conv2_w.data, velocity.conv2.weights.data, lr, momentum);
    sgd_momentum_step(model.conv2.bias.data, grads.conv2_b.data, velocity.conv2.bias.data, lr, momentum);
    for (std::size_t p = 0; p < model.output_cls.size(); ++p) {
        auto& cls = model.output_cls[p];
        auto& vel = velocity.output_cls[p];
        for (std::size_t i = 0; i < cls.block_weights.size(); ++i)
            sgd_momentum_step(cls.block_weights[i], grads.output[p].w[i], vel.block_weights[i], lr, momentum);
        sgd_momentum_step(cls.block_biases, grads.output[p].b, vel.block_biases, lr, momentum);
    }
    const double aux_lr = lr * aux_lr_scale;
    for (std::size_t p = 0; p < model.hidden_cls.size(); ++p) {
        auto& cls = model.hidden_cls[p];
        auto& vel = velocity.hidden_cls[p];
        for (std::size_t i = 0; i < cls.block_weights.size(); ++i)
            sgd_momentum_step(cls.block_weights[i], grads.hidden[p].w[i], vel.block_weights[i], aux_lr, momentum);
        sgd_momentum_step(cls.block_biases, grads.hidden[p].b, vel.block_biases, aux_lr, momentum);
    }
}

inline DetectorModel zero_like_model(const DetectorModel& m) {
    DetectorModel z = m;
    visit_model_arrays(z, [](std::vector<double>& a) { std::fill(a.begin(), a.end(), 0.0); });
    return z;
}

namespace detail {

struct SplitIdx {
    std::vector<int> train, val;
};

inline SplitIdx split_indices(int n, double val_fraction, Rng& rng) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    rng.shuffle(idx);
    int nval = static_cast<int>(n * val_fraction);
    if (nval < 1 && n > 1) nval = 1;
    SplitIdx s;
    s.val.assign(idx.begin(), idx.begin() + nval);
    s.train.assign(idx.begin() + nval, idx.end());
    if (s.train.empty()) { // tiny datasets still need a train side
        s.train = s.val;
    }
    return s;
}

} // namespace detail

struct TrainLog {
    std::vector<double> train_loss; // per epoch, mean over batches
    std::vector<double> val_loss;
    int best_epoch = -1;
};

// SGD with momentum on the combined grid objective (output layer plus deep
// supervision). Deterministic: split, shuffling, dropout and init all derive
// from config.seed; per-sample gradients are reduced in sample order at any
// thread count. Returns the epoch snapshot with the best validation loss,
// folded for inference.
inline DetectorModel train(const std::vector<TrainSample>& positives, const std::vector<TrainSample>& negatives,
                           const TrainConfig& cfg, TrainLog* log = nullptr) {
    cfg.validate();
    if (positives.empty() || negatives.empty())
        throw InvalidInput("train: need at least one positive and one negative window, got " +
                           std::to_string(positives.size()) + "/" + std::to_string(negatives.size()));

    std::vector<TrainSample> pos = positives;
    if (cfg.mirror_positives) {
        pos.reserve(positives.size() * 2);
        for (const auto& s : positives) pos.push_back({mirror_channels(s.channels), s.pose});
    }

    Rng rng(cfg.seed);
    DetectorModel model = init_detector(cfg.hyper(), rng.next_u64());
    DetectorModel velocity = zero_like_model(model);

    Rng split_rng = rng.fork(101);
    detail::SplitIdx psplit = detail::split_indices(static_cast<int>(pos.size()), cfg.val_fraction, split_rng);
    detail::SplitIdx nsplit = detail::split_indices(static_cast<int>(negatives.size()), cfg.val_fraction, split_rng);

    const int half = cfg.batch_size / 2;
    const int np = static_cast<int>(psplit.train.size());
    const int nn = static_cast<int>(nsplit.train.size());
    const int batches = (std::max(np, nn) + half - 1) / half;

    auto eval_val = [&](const DetectorModel& m) {
        double total = 0.0;
        int count = 0;
        for (int i : psplit.val) {
            total += sample_loss(m, pos[static_cast<std::size_t>(i)].channels, pos[static_cast<std::size_t>(i)].pose,
                                 1, false, 0);
            ++count;
        }
        for (int i : nsplit.val) {
            total += sample_loss(m, negatives[static_cast<std::size_t>(i)].channels, 0, -1, false, 0);
            ++count;
        }
        return count > 0 ? total / count : 0.0;
    };

    DetectorModel best = model;
    double best_val = 1e300;
    int best_epoch = -1;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng erng = rng.fork(1000 + static_cast<std::uint64_t>(epoch));
        std::vector<int> porder = psplit.train, norder = nsplit.train;
        erng.shuffle(porder);
        erng.shuffle(norder);

        double epoch_loss = 0.0;
        for (int bidx = 0; bidx < batches; ++bidx) {
            // class-balanced batch: half positives, half negatives, cycling
            struct Slot {
                const TrainSample* s;
                int label;
            };
            std::vector<Slot> batch;
            batch.reserve(static_cast<std::size_t>(2 * half));
            for (int k = 0; k < half; ++k) {
                const int pi = porder[static_cast<std::size_t>((bidx * half + k) % np)];
                batch.push_back({&pos[static_cast<std::size_t>(pi)], 1});
            }
            for (int k = 0; k < half; ++k) {
                const int ni = norder[static_cast<std::size_t>((bidx * half + k) % nn)];
                batch.push_back({&negatives[static_cast<std::size_t>(ni)], -1});
            }

            const int B = static_cast<int>(batch.size());
            std::vector<ModelGrads> slot_grads(static_cast<std::size_t>(B));
            std::vector<double> slot_loss(static_cast<std::size_t>(B), 0.0);
            const std::uint64_t batch_seed = rng.fork(0xb000 + static_cast<std::uint64_t>(epoch) * 100003 +
                                                      static_cast<std::uint64_t>(bidx))
                                                 .next_u64();
            parallel_for(B, cfg.threads, [&](int s) {
                slot_grads[static_cast<std::size_t>(s)] = ModelGrads::zeros_like(model);
                const Slot& sl = batch[static_cast<std::size_t>(s)];
                slot_loss[static_cast<std::size_t>(s)] =
                    sample_loss(model, sl.s->channels, sl.s->pose, sl.label, true,
                                batch_seed + static_cast<std::uint64_t>(s), &slot_grads[static_cast<std::size_t>(s)]);
            });
            ModelGrads grads = ModelGrads::zeros_like(model);
            double bloss = 0.0;
            for (int s = 0; s < B; ++s) { // ordered reduction keeps results thread-count independent
                grads.accumulate(slot_grads[static_cast<std::size_t>(s)], 1.0 / B);
                bloss += slot_loss[static_cast<std::size_t>(s)];
            }
            epoch_loss += bloss / B;
            sgd_step_model(model, grads, velocity, cfg.lr, cfg.momentum, cfg.aux_lr_scale);
        }

        const double vloss = eval_val(model);
        if (log) {
            log->train_loss.push_back(epoch_loss / batches);
            log->val_loss.push_back(vloss);
        }
        if (vloss < best_val) {
            best_val = vloss;
            best = model;
            best_epoch = epoch;
        }
    }
    if (log) log->best_epoch = best_epoch;
    fold_model(best);
    return best;
}

// ---- window assembly ----

inline Tensor window_channels_from_image(const Tensor& image, const BBox& box, const DetectorHyper& h,
                                         const CropJitter& jit = {}, Rng* rng = nullptr) {
    Tensor win = crop_window(image, box, h.window_px, h.face_px, jit, rng);
    return compute_channels(win).channels;
}

// Pose ids for manifest data: rank the annotation aspect ratios (minor/major)
// into pose_count quantile bins. The synthetic poses have distinct aspects, so
// this recovers the generator's grouping; for real data it is a coarse yaw
// proxy.
inline std::vector<int> assign_poses_by_aspect(const std::vector<double>& aspects, int pose_count) {
    const int n = static_cast<int>(aspects.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return aspects[static_cast<std::size_t>(a)] < aspects[static_cast<std::size_t>(b)]; });
    std::vector<int> pose(static_cast<std::size_t>(n), 0);
    for (int r = 0; r < n; ++r)
        pose[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] =
            std::min(pose_count - 1, r * pose_count / std::max(1, n));
    return pose;
}

using ImageLoader = std::function<Tensor(const std::string&)>;

// Positive training windows from an ellipse manifest: face boxes cropped to
// 80x80 px and featurized.
inline std::vector<TrainSample> build_positive_windows(const DatasetManifest& man, const ImageLoader& load,
                                                       const DetectorHyper& h, int pose_count) {
    std::vector<double> aspects;
    std::vector<std::pair<const ManifestEntry*, const Ellipse*>> faces;
    for (const auto& e : man.entries)
        for (const auto& el : e.ellipses) {
            faces.push_back({&e, &el});
            aspects.push_back(el.minor / el.major);
        }
    std::vector<int> poses = assign_poses_by_aspect(aspects, pose_count);
    std::vector<TrainSample> out;
    for (std::size_t i = 0; i < faces.size(); ++i) {
        Tensor img = load(faces[i].first->path);
        out.push_back({window_channels_from_image(img, face_box(*faces[i].second), h), poses[i]});
    }
    return out;
}

// Random negative windows cropped from face-free images.
inline std::vector<TrainSample> sample_negative_windows(const std::vector<const Tensor*>& images, int count,
                                                        const DetectorHyper& h, std::uint64_t seed) {
    if (images.empty() || count <= 0) return {};
    std::vector<TrainSample> out;
    Rng rng(seed);
    for (int k = 0; k < count; ++k) {
        const Tensor& img = *images[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(images.size())))];
        const int H = img.dim(1), W = img.dim(2);
        const double side = rng.uniform(h.face_px * 0.8, std::min(H, W) * 0.9);
        BBox box;
        box.w = box.h = side;
        box.x = rng.uniform(0.0, W - side);
        box.y = rng.uniform(0.0, H - side);
        out.push_back({window_channels_from_image(img, box, h), 0});
    }
    return out;
}

// ---- bootstrapping ----

struct MinedNegatives {
    std::vector<TrainSample> windows;
    int detections_seen = 0;
};

// Run the detector over face-free images and keep the highest-scoring false
// positives as new negative windows (channel crops from the pyramid level
// where they fired), capped at negatives_per_round.
inline MinedNegatives mine_hard_negatives(const DetectorModel& model, const std::vector<const Tensor*>& images,
                                          const TrainConfig& cfg) {
    MinedNegatives mined;
    struct Hit {
        double score;
        Tensor crop;
    };
    std::vector<Hit> hits;
    for (const Tensor* img : images) {
        Pyramid pyr = build_pyramid(*img, cfg.pyramid);
        std::vector<Detection> dets;
        for (int li = 0; li < static_cast<int>(pyr.levels.size()); ++li) {
            auto level_dets = scan_level(pyr.levels[static_cast<std::size_t>(li)], model, cfg.bootstrap_threshold,
                                         1, li);
            dets.insert(dets.end(), level_dets.begin(), level_dets.end());
        }
        dets = nms(std::move(dets));
        mined.detections_seen += static_cast<int>(dets.size());
        for (const Detection& d : dets) {
            const ChannelMap& lvl = pyr.levels[static_cast<std::size_t>(d.level)];
            Tensor crop({model.hyper.channels, model.hyper.input_cells, model.hyper.input_cells});
            for (int c = 0; c < model.hyper.channels; ++c)
                for (int i = 0; i < model.hyper.input_cells; ++i)
                    for (int j = 0; j < model.hyper.input_cells; ++j)
                        crop.at(c, i, j) = lvl.channels.at(c, d.cell_row + i, d.cell_col + j);
            hits.push_back({d.score, std::move(crop)});
        }
    }
    std::stable_sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) { return a.score > b.score; });
    const int cap = std::min<int>(cfg.negatives_per_round, static_cast<int>(hits.size()));
    for (int i = 0; i < cap; ++i) mined.windows.push_back({std::move(hits[static_cast<std::size_t>(i)].crop), 0});
    return mined;
}

struct BootstrapLog {
    std::vector<int> mined_per_round;
};

// Train, mine false positives from the negative images, retrain with the
// augmented negative set; stops early once a round mines nothing.
inline DetectorModel train_bootstrapped(const std::vector<TrainSample>& positives,
                                        std::vector<TrainSample> negatives,
                                        const std::vector<const Tensor*>& negative_images, const TrainConfig& cfg,
                                        BootstrapLog* blog = nullptr) {
    DetectorModel model = train(positives, negatives, cfg);
    for (int round = 0; round < cfg.bootstrap_rounds; ++round) {
        MinedNegatives mined = mine_hard_negatives(model, negative_images, cfg);
        if (blog) blog->mined_per_round.push_back(static_cast<int>(mined.windows.size()));
        if (mined.windows.empty()) break;
        for (auto& w : mined.windows) negatives.push_back(std::move(w));
        model = train(positives, negatives, cfg);
    }
    return model;
}

} // namespace gridloss
