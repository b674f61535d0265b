// gridloss command line: synthetic data, training, detection, evaluation,
// parameter sweeps and the dense-vs-skip pyramid benchmark.

#include "gridloss/data.hpp"
#include "gridloss/detector.hpp"
#include "gridloss/eval.hpp"
#include "gridloss/regressor.hpp"
#include "gridloss/trainer.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace gridloss;

namespace {

struct CommonTrainOpts {
    TrainConfig cfg;
    int neg_windows = 1000;
    std::string data_dir;
};

void add_train_options(CLI::App* cmd, CommonTrainOpts& o) {
    cmd->add_option("--data", o.data_dir, "dataset directory (train.txt/test.txt + images)")->required();
    cmd->add_option("--loss", o.cfg.loss_type, "loss type: grid or hinge")
        ->check(CLI::IsMember({"grid", "hinge"}));
    cmd->add_option("--lr", o.cfg.lr, "learning rate");
    cmd->add_option("--momentum", o.cfg.momentum, "SGD momentum");
    cmd->add_option("--epochs", o.cfg.epochs, "training epochs");
    cmd->add_option("--batch", o.cfg.batch_size, "mini-batch size");
    cmd->add_option("--lambda", o.cfg.lambda, "grid loss local-term weight");
    cmd->add_option("--block-n", o.cfg.block_n, "grid block side in cells");
    cmd->add_option("--dropout", o.cfg.dropout, "dropout rate after the last convolution");
    cmd->add_option("--seed", o.cfg.seed, "master RNG seed")->envname("GRIDLOSS_SEED");
    cmd->add_option("--val-fraction", o.cfg.val_fraction, "validation split fraction");
    cmd->add_option("--pose-count", o.cfg.pose_count, "number of pose units");
    cmd->add_option("--f1", o.cfg.f1, "filters in the first convolution");
    cmd->add_option("--f2", o.cfg.f2, "filters in the second convolution");
    cmd->add_option("--threads", o.cfg.threads, "worker threads (results are thread-count independent)");
    cmd->add_option("--neg-windows", o.neg_windows, "random negative windows sampled before bootstrapping");
    cmd->add_option("--bootstrap-rounds", o.cfg.bootstrap_rounds, "hard-negative mining rounds");
    cmd->add_option("--negatives-per-round", o.cfg.negatives_per_round, "hard-negative cap per round");
    cmd->add_option("--bootstrap-threshold", o.cfg.bootstrap_threshold, "score above which negatives are mined");
    cmd->add_flag("--mirror,!--no-mirror", o.cfg.mirror_positives, "mirror positive windows");
    cmd->add_flag("--deep-supervision,!--no-deep-supervision", o.cfg.deep_supervision,
                  "auxiliary grid losses on the hidden layer (grid loss only)");
    cmd->add_option("--aux-lr-scale", o.cfg.aux_lr_scale, "learning-rate multiplier for auxiliary classifiers");
    cmd->add_option("--scales-per-octave", o.cfg.pyramid.scales_per_octave, "pyramid scales per octave");
    cmd->add_option("--min-size", o.cfg.pyramid.min_size, "smallest pyramid level in cells");
}

void log_resolved_config(const CLI::App* cmd) {
    std::cerr << "# resolved config [" << cmd->get_name() << "]\n";
    for (const CLI::Option* opt : cmd->get_options()) {
        if (opt->get_name().rfind("--", 0) != 0 || opt->get_name() == "--help" || opt->get_name() == "--config")
            continue;
        std::string value;
        if (!opt->results().empty()) {
            for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
        } else {
            value = opt->get_default_str();
        }
        std::cerr << "# " << opt->get_name().substr(2) << " = " << value << "\n";
    }
}

struct Dataset {
    DatasetManifest train, test;
    std::string base;

    ImageLoader loader() const {
        std::string dir = base;
        return [dir](const std::string& path) { return gridloss::load_image(dir + "/" + path); };
    }
    std::vector<Tensor> negative_images(const DatasetManifest& man) const {
        std::vector<Tensor> out;
        for (const auto& e : man.entries)
            if (e.ellipses.empty() && e.boxes.empty()) out.push_back(gridloss::load_image(base + "/" + e.path));
        return out;
    }
};

Dataset open_dataset(const std::string& dir) {
    Dataset d;
    d.base = dir;
    d.train = load_manifest(dir + "/train.txt", AnnotationKind::ellipse);
    d.test = load_manifest(dir + "/test.txt", AnnotationKind::ellipse);
    return d;
}

std::vector<const Tensor*> ptrs_of(const std::vector<Tensor>& v) {
    std::vector<const Tensor*> p;
    for (const auto& t : v) p.push_back(&t);
    return p;
}

DetectorModel train_detector_from(const Dataset& ds, const CommonTrainOpts& o, BootstrapLog* blog = nullptr) {
    auto loader = ds.loader();
    auto positives = build_positive_windows(ds.train, loader, o.cfg.hyper(), o.cfg.pose_count);
    if (positives.empty()) throw InvalidInput("training manifest has no annotated faces");
    std::vector<Tensor> neg_images = ds.negative_images(ds.train);
    if (neg_images.empty()) throw InvalidInput("training manifest has no face-free images for negatives");
    auto negatives = sample_negative_windows(ptrs_of(neg_images), o.neg_windows, o.cfg.hyper(), o.cfg.seed ^ 0x9e99);
    if (o.cfg.bootstrap_rounds > 0)
        return train_bootstrapped(positives, std::move(negatives), ptrs_of(neg_images), o.cfg, blog);
    return train(positives, negatives, o.cfg);
}

std::vector<RegressorSample> regressor_samples_from(const Dataset& ds, std::uint64_t seed, int per_face) {
    auto loader = ds.loader();
    std::vector<RegressorSample> samples;
    Rng rng(seed);
    for (const auto& entry : ds.train.entries) {
        if (entry.ellipses.empty()) continue;
        Tensor img = loader(entry.path);
        for (const auto& gt : entry.ellipses) {
            for (int k = 0; k < per_face; ++k) {
                BBox box = face_box(gt);
                Rng jr = rng.fork(samples.size());
                // jitter the box like a mislocalized detection
                const double s = 1.0 + 0.1 * jr.uniform(-1.0, 1.0);
                box.w *= s;
                box.h *= s;
                box.x = gt.cx - 0.5 * box.w + 4.0 * jr.uniform(-1.0, 1.0);
                box.y = gt.cy - 0.5 * box.h + 4.0 * jr.uniform(-1.0, 1.0);
                RegressorSample rs;
                rs.box = box;
                rs.gt = gt;
                rs.channels = regressor_window(img, box);
                samples.push_back(std::move(rs));
            }
        }
    }
    return samples;
}

void write_detections_boxes(std::ostream& os, const std::string& path, const std::vector<Detection>& dets) {
    char buf[256];
    for (const auto& d : dets) {
        std::snprintf(buf, sizeof(buf), "%s %d %.4f %.4f %.4f %.4f %.4f\n", path.c_str(), d.pose, d.score,
                      d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h);
        os << buf;
    }
}

void write_detections_ellipses(std::ostream& os, const std::string& path, const std::vector<Detection>& dets,
                               const std::vector<Ellipse>& ellipses) {
    os << path << "\n" << dets.size() << "\n";
    char buf[256];
    for (std::size_t i = 0; i < dets.size(); ++i) {
        const Ellipse& e = ellipses[i];
        std::snprintf(buf, sizeof(buf), "%.4f %.4f %.4f %.4f %.4f %.4f\n", e.major, e.minor, e.angle, e.cx, e.cy,
                      dets[i].score);
        os << buf;
    }
}

struct DetLine {
    std::string path;
    Detection det;
};

std::vector<DetLine> read_detection_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open detections " + path);
    std::vector<DetLine> out;
    std::string img;
    while (in >> img) {
        DetLine dl;
        dl.path = img;
        if (!(in >> dl.det.pose >> dl.det.score >> dl.det.bbox.x >> dl.det.bbox.y >> dl.det.bbox.w >> dl.det.bbox.h))
            throw InvalidInput(path + ": malformed detection line near '" + img + "'");
        out.push_back(dl);
    }
    return out;
}

void write_svg_curve(const std::string& path, const EvalCurve& curve) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write plot " + path);
    const int W = 480, H = 320, M = 40;
    double max_fp = 1.0;
    for (const auto& p : curve.points) max_fp = std::max(max_fp, static_cast<double>(p.fp_count));
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
    out << "<line x1='" << M << "' y1='" << H - M << "' x2='" << W - M << "' y2='" << H - M
        << "' stroke='black'/>\n";
    out << "<line x1='" << M << "' y1='" << M << "' x2='" << M << "' y2='" << H - M << "' stroke='black'/>\n";
    out << "<text x='" << W / 2 << "' y='" << H - 8 << "' font-size='12'>false positives</text>\n";
    out << "<text x='8' y='" << M - 8 << "' font-size='12'>TPR</text>\n";
    out << "<polyline fill='none' stroke='steelblue' stroke-width='2' points='";
    for (const auto& p : curve.points) {
        const double x = M + (W - 2 * M) * (p.fp_count / max_fp);
        const double y = H - M - (H - 2 * M) * p.tpr;
        out << x << "," << y << " ";
    }
    out << "'/>\n</svg>\n";
}

std::ostream& open_out(std::ofstream& file, const std::string& path) {
    if (path.empty() || path == "-") return std::cout;
    file.open(path, std::ios::binary);
    if (!file) throw IoError("cannot write " + path);
    return file;
}

// Flat `key = value` config files. The file's pairs are spliced in as flags
// before the user's own flags, so explicit flags win; unknown keys fail the
// reparse with a usage error.
std::vector<std::string> read_config_flags(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    std::vector<std::string> flags;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        if (eq == std::string::npos) {
            if (!trim(line).empty())
                throw InvalidInput(path + ": line " + std::to_string(lineno) + ": expected 'key = value'");
            continue;
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw InvalidInput(path + ": line " + std::to_string(lineno) + ": empty key");
        flags.push_back(key.rfind("--", 0) == 0 ? key : "--" + key);
        if (!value.empty()) flags.push_back(value);
    }
    return flags;
}

int run_cli(const std::vector<std::string>& args, bool expand_config);

// strip `--config FILE` / `--config=FILE` and splice the file's flags right
// after the subcommand token
int expand_and_rerun(const std::vector<std::string>& args) {
    std::vector<std::string> rest;
    std::string config_path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config_path = args[i + 1];
            ++i;
        } else if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
        } else {
            rest.push_back(args[i]);
        }
    }
    if (config_path.empty() || rest.empty()) return run_cli(rest, false);
    std::vector<std::string> expanded;
    expanded.push_back(rest[0]); // subcommand
    for (const auto& f : read_config_flags(config_path)) expanded.push_back(f);
    expanded.insert(expanded.end(), rest.begin() + 1, rest.end());
    return run_cli(expanded, false);
}

int run_cli(const std::vector<std::string>& args, bool expand_config) {
    CLI::App app{"grid-loss sliding-window detector toolkit"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default(true);
    // config-file pairs are spliced in before user flags; last value wins
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "generate a synthetic toy-face dataset");
    std::string synth_config;
    synth->add_option("--config", synth_config, "key = value config file");
    std::string synth_out;
    SynthConfig scfg;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--num-pos", scfg.num_pos, "training positives");
    synth->add_option("--num-neg", scfg.num_neg, "training negatives (face-free images)");
    synth->add_option("--test-pos", scfg.test_pos, "test positives");
    synth->add_option("--test-neg", scfg.test_neg, "test negatives");
    synth->add_option("--image-size", scfg.image_size, "image side in px");
    synth->add_option("--pose-count", scfg.pose_count, "distinct face poses");
    synth->add_option("--min-face", scfg.min_face, "smallest face height in px");
    synth->add_option("--max-face", scfg.max_face, "largest face height in px");
    synth->add_option("--occlusion", scfg.occluder_fraction, "occluder area fraction drawn on positives");
    synth->add_option("--seed", scfg.seed, "RNG seed")->envname("GRIDLOSS_SEED");

    // ---- train ----
    auto* train_cmd = app.add_subcommand("train", "train a detector or an ellipse regressor");
    std::string train_config;
    train_cmd->add_option("--config", train_config, "key = value config file");
    CommonTrainOpts topts;
    std::string model_out, target = "detector", reg_mode = "sse";
    int reg_epochs = 30, reg_per_face = 2;
    double reg_lr = 0.05;
    add_train_options(train_cmd, topts);
    train_cmd->add_option("--model", model_out, "output model file")->required();
    train_cmd->add_option("--target", target, "what to train")->check(CLI::IsMember({"detector", "regressor"}));
    train_cmd->add_option("--mode", reg_mode, "regressor loss: sse or num")->check(CLI::IsMember({"sse", "num"}));
    train_cmd->add_option("--reg-epochs", reg_epochs, "regressor epochs");
    train_cmd->add_option("--reg-lr", reg_lr, "regressor learning rate");
    train_cmd->add_option("--reg-samples-per-face", reg_per_face, "jittered boxes per annotated face");

    // ---- detect ----
    auto* detect_cmd = app.add_subcommand("detect", "run the detector on images");
    std::string detect_config;
    detect_cmd->add_option("--config", detect_config, "key = value config file");
    std::string det_model, det_out, det_manifest, det_base, refine_mode, regressor_path;
    std::vector<std::string> det_images;
    double det_threshold = 0.0, det_nms = 0.3;
    PyramidConfig det_pyr;
    int det_threads = 1;
    detect_cmd->add_option("--model", det_model, "trained detector model")->required();
    detect_cmd->add_option("--image", det_images, "PPM/PGM image (repeatable)")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    detect_cmd->add_option("--manifest", det_manifest, "manifest whose image paths are scanned");
    detect_cmd->add_option("--base", det_base, "base directory for manifest paths");
    detect_cmd->add_option("--threshold", det_threshold, "detection score threshold");
    detect_cmd->add_option("--nms", det_nms, "NMS min-area overlap threshold");
    detect_cmd->add_option("--scales-per-octave", det_pyr.scales_per_octave, "pyramid scales per octave");
    detect_cmd->add_option("--min-size", det_pyr.min_size, "smallest pyramid level in cells");
    detect_cmd->add_option("--threads", det_threads, "worker threads");
    detect_cmd->add_option("--refine", refine_mode, "refine boxes to ellipses with a regressor (sse|num tag)")
        ->check(CLI::IsMember({"sse", "num"}));
    detect_cmd->add_option("--regressor", regressor_path, "regressor model file (required with --refine)");
    detect_cmd->add_option("--out", det_out, "output file ('-' for stdout)");

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "match detections against ground truth");
    std::string eval_config;
    eval_cmd->add_option("--config", eval_config, "key = value config file");
    std::string eval_dets, eval_gt, eval_kind = "ellipse", eval_mode = "discrete", curve_out, plot_out;
    std::vector<int> fp_counts{50, 100, 284, 500};
    eval_cmd->add_option("--dets", eval_dets, "detection lines from `detect`")->required();
    eval_cmd->add_option("--gt", eval_gt, "ground-truth manifest")->required();
    eval_cmd->add_option("--kind", eval_kind, "annotation kind")->check(CLI::IsMember({"ellipse", "box"}));
    eval_cmd->add_option("--mode", eval_mode, "matching protocol")->check(CLI::IsMember({"discrete", "continuous"}));
    eval_cmd->add_option("--fp-counts", fp_counts, "false positive counts for the TPR table")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    eval_cmd->add_option("--curve-out", curve_out, "write fp<TAB>tpr lines to this file");
    eval_cmd->add_option("--plot", plot_out, "write an SVG line chart of the curve");

    // ---- sweep ----
    auto* sweep_cmd = app.add_subcommand("sweep", "block-size / lambda / training-size grids");
    std::string sweep_config;
    sweep_cmd->add_option("--config", sweep_config, "key = value config file");
    CommonTrainOpts sopts;
    std::string sweep_param = "block_n";
    std::vector<double> sweep_values;
    std::vector<std::uint64_t> sweep_seeds{1};
    double sweep_fppi = 0.1;
    add_train_options(sweep_cmd, sopts);
    sweep_cmd->add_option("--param", sweep_param, "swept parameter")
        ->check(CLI::IsMember({"block_n", "lambda", "fraction"}));
    sweep_cmd->add_option("--values", sweep_values, "swept values")
        ->required()
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    sweep_cmd->add_option("--seeds", sweep_seeds, "seeds averaged per cell")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    sweep_cmd->add_option("--fppi", sweep_fppi, "operating point in false positives per image");

    // ---- bench ----
    auto* bench_cmd = app.add_subcommand("bench", "time dense vs skip pyramids");
    std::string bench_config;
    bench_cmd->add_option("--config", bench_config, "key = value config file");
    int bench_w = 640, bench_h = 480, bench_reps = 1, bench_threads = 1, bench_min_size = 20;
    std::uint64_t bench_seed = 1;
    std::vector<int> bench_scales;
    std::string bench_model;
    bench_cmd->add_option("--width", bench_w, "benchmark image width");
    bench_cmd->add_option("--height", bench_h, "benchmark image height");
    bench_cmd->add_option("--scales", bench_scales, "scales-per-octave settings to time (repeatable)")
        ->required()
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    bench_cmd->add_option("--min-size", bench_min_size, "smallest pyramid level in cells");
    bench_cmd->add_option("--reps", bench_reps, "repetitions, best time kept");
    bench_cmd->add_option("--threads", bench_threads, "worker threads");
    bench_cmd->add_option("--seed", bench_seed, "RNG seed")->envname("GRIDLOSS_SEED");
    bench_cmd->add_option("--model", bench_model, "detector model (random folded model if omitted)");

    std::vector<const char*> argv;
    argv.push_back("gridloss");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return 2;
    }

    if (expand_config) {
        for (const std::string& c : {synth_config, train_config, detect_config, eval_config, sweep_config,
                                     bench_config})
            if (!c.empty()) {
                try {
                    return expand_and_rerun(args);
                } catch (const std::exception& e) {
                    std::cerr << "error: " << e.what() << "\n";
                    return 2;
                }
            }
    }

    try {
        CLI::App* cmd = app.get_subcommands().front();
        log_resolved_config(cmd);

        if (cmd == synth) {
            SynthDataset ds = synth_generate(scfg);
            fs::create_directories(fs::path(synth_out) / "train");
            fs::create_directories(fs::path(synth_out) / "test");
            for (const auto& im : ds.images) save_ppm(im.image, (fs::path(synth_out) / im.path).string());
            save_manifest(ds.train, (fs::path(synth_out) / "train.txt").string());
            save_manifest(ds.test, (fs::path(synth_out) / "test.txt").string());
            std::cout << "wrote " << ds.images.size() << " images to " << synth_out << "\n";
        } else if (cmd == train_cmd) {
            Dataset ds = open_dataset(topts.data_dir);
            if (target == "detector") {
                BootstrapLog blog;
                DetectorModel m = train_detector_from(ds, topts, &blog);
                save_model(m, model_out);
                std::cout << "model written to " << model_out;
                for (std::size_t r = 0; r < blog.mined_per_round.size(); ++r)
                    std::cout << (r == 0 ? " (mined" : ",") << " " << blog.mined_per_round[r];
                std::cout << (blog.mined_per_round.empty() ? "\n" : " hard negatives)\n");
            } else {
                auto samples = regressor_samples_from(ds, topts.cfg.seed, reg_per_face);
                RegressorTrainConfig rc;
                rc.lr = reg_lr;
                rc.epochs = reg_epochs;
                rc.seed = topts.cfg.seed;
                rc.threads = topts.cfg.threads;
                RegressorModel r =
                    train_regressor(samples, reg_mode == "num" ? RegressionLoss::num : RegressionLoss::sse, rc);
                save_regressor(r, model_out);
                std::cout << "regressor written to " << model_out << "\n";
            }
        } else if (cmd == detect_cmd) {
            DetectorModel model = load_model(det_model);
            RegressorModel reg;
            const bool refine = !refine_mode.empty();
            if (refine) {
                if (regressor_path.empty()) throw InvalidInput("--refine requires --regressor FILE");
                reg = load_regressor(regressor_path);
            }
            std::vector<std::string> paths = det_images;
            if (!det_manifest.empty()) {
                DatasetManifest man = load_manifest(det_manifest, AnnotationKind::ellipse);
                for (const auto& e : man.entries) paths.push_back(e.path);
            }
            if (paths.empty()) throw InvalidInput("no input images (use --image or --manifest)");
            std::ofstream file;
            std::ostream& os = open_out(file, det_out);
            for (const auto& p : paths) {
                const std::string full = det_base.empty() ? p : det_base + "/" + p;
                Tensor img = gridloss::load_image(full);
                auto dets = detect(img, model, det_pyr, det_threshold, det_nms, det_threads);
                if (!refine) {
                    write_detections_boxes(os, p, dets);
                } else {
                    std::vector<Ellipse> ellipses;
                    for (const auto& d : dets) ellipses.push_back(regress(reg, regressor_window(img, d.bbox), d.bbox));
                    write_detections_ellipses(os, p, dets, ellipses);
                }
            }
        } else if (cmd == eval_cmd) {
            const AnnotationKind kind = eval_kind == "box" ? AnnotationKind::box : AnnotationKind::ellipse;
            DatasetManifest gt = load_manifest(eval_gt, kind);
            auto lines = read_detection_lines(eval_dets);
            std::map<std::string, std::vector<Detection>> by_image;
            for (auto& dl : lines) by_image[dl.path].push_back(dl.det);
            const MatchMode mode = eval_mode == "continuous" ? MatchMode::continuous : MatchMode::discrete;
            std::vector<MatchResult> results;
            std::size_t total_gt = 0;
            for (const auto& entry : gt.entries) {
                std::vector<Ellipse> gts = entry.ellipses;
                if (kind == AnnotationKind::box)
                    for (const auto& b : entry.boxes) gts.push_back(inscribed_ellipse(b));
                auto it = by_image.find(entry.path);
                results.push_back(match_detections(it == by_image.end() ? std::vector<Detection>{} : it->second,
                                                   gts, mode));
                total_gt += gts.size();
            }
            EvalCurve curve = tpr_at_fp(results, total_gt, fp_counts);
            std::cout << "fp_count\ttpr\ttruncated\n";
            char buf[64];
            for (const auto& p : curve.points) {
                std::snprintf(buf, sizeof(buf), "%d\t%.4f\t%d\n", p.fp_count, p.tpr, p.truncated ? 1 : 0);
                std::cout << buf;
            }
            if (!curve_out.empty()) {
                std::ofstream co(curve_out);
                if (!co) throw IoError("cannot write " + curve_out);
                for (const auto& p : curve.points) {
                    std::snprintf(buf, sizeof(buf), "%d\t%.4f\n", p.fp_count, p.tpr);
                    co << buf;
                }
            }
            if (!plot_out.empty()) write_svg_curve(plot_out, curve);
        } else if (cmd == sweep_cmd) {
            Dataset ds = open_dataset(sopts.data_dir);
            auto loader = ds.loader();
            auto positives = build_positive_windows(ds.train, loader, sopts.cfg.hyper(), sopts.cfg.pose_count);
            std::vector<Tensor> neg_images = ds.negative_images(ds.train);
            auto negatives = sample_negative_windows(ptrs_of(neg_images), sopts.neg_windows, sopts.cfg.hyper(),
                                                     sopts.cfg.seed ^ 0x9e99);
            char buf[128];
            if (sweep_param == "fraction") {
                std::cout << "loss\tfraction\tmean_tpr\n";
                TrainConfig base = sopts.cfg;
                base.bootstrap_rounds = 0;
                auto rows = dataset_size_sweep(positives, negatives, ds.test, loader, sweep_values, sweep_seeds,
                                               base);
                for (const auto& r : rows) {
                    std::snprintf(buf, sizeof(buf), "%s\t%.4g\t%.4f\n", r.loss_type.c_str(), r.fraction, r.mean_tpr);
                    std::cout << buf;
                }
            } else {
                std::cout << sweep_param << "\tmean_tpr\n";
                for (double value : sweep_values) {
                    double sum = 0.0;
                    for (std::uint64_t seed : sweep_seeds) {
                        TrainConfig cfg = sopts.cfg;
                        cfg.seed = seed;
                        cfg.bootstrap_rounds = 0;
                        if (sweep_param == "block_n")
                            cfg.block_n = static_cast<int>(value);
                        else
                            cfg.lambda = value;
                        DetectorModel m = train(positives, negatives, cfg);
                        sum += tpr_at_fppi(m, ds.test, loader, cfg.pyramid, sweep_fppi, cfg.threads);
                    }
                    std::snprintf(buf, sizeof(buf), "%.4g\t%.4f\n", value,
                                  sum / static_cast<double>(sweep_seeds.size()));
                    std::cout << buf;
                }
            }
        } else if (cmd == bench_cmd) {
            DetectorModel model;
            if (!bench_model.empty()) {
                model = load_model(bench_model);
            } else {
                DetectorHyper h;
                model = init_detector(h, bench_seed);
                fold_model(model);
            }
            Tensor img({3, bench_h, bench_w});
            Rng rng(bench_seed);
            gridloss::detail::draw_background(img, rng);
            gridloss::detail::draw_clutter(img, rng);

            std::cout << "scales_per_octave\tlevels\tms\n";
            std::vector<double> times;
            char buf[128];
            for (int spo : bench_scales) {
                PyramidConfig pyr{spo, bench_min_size};
                double best = 1e300;
                std::size_t levels = build_pyramid(img, pyr).levels.size();
                for (int rep = 0; rep < bench_reps; ++rep) {
                    const auto t0 = std::chrono::steady_clock::now();
                    auto dets = detect(img, model, pyr, 1e300, 0.3, bench_threads);
                    const auto t1 = std::chrono::steady_clock::now();
                    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
                }
                times.push_back(best);
                std::snprintf(buf, sizeof(buf), "%d\t%zu\t%.1f\n", spo, levels, best);
                std::cout << buf;
            }
            if (times.size() >= 2) {
                std::snprintf(buf, sizeof(buf), "wall-time ratio (first/last): %.2f\n", times.front() / times.back());
                std::cout << buf;
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run_cli(args, true);
}
