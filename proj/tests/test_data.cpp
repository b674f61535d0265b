#include "gridloss/data.hpp"
#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

using namespace gridloss;

TEST_CASE("empty manifest parses to an empty dataset") {
    std::istringstream in("");
    DatasetManifest m = parse_manifest(in, AnnotationKind::ellipse, "mem");
    CHECK(m.entries.empty());
}

TEST_CASE("single ellipse entry parses field by field") {
    std::istringstream in("img/a.ppm\n1\n30.0 20.0 0.5 100.0 80.0 1\n");
    DatasetManifest m = parse_manifest(in, AnnotationKind::ellipse, "mem");
    REQUIRE(m.entries.size() == 1);
    REQUIRE(m.entries[0].ellipses.size() == 1);
    const Ellipse& e = m.entries[0].ellipses[0];
    CHECK(e.major == 30.0);
    CHECK(e.minor == 20.0);
    CHECK(e.angle == 0.5);
    CHECK(e.cx == 100.0);
    CHECK(e.cy == 80.0);
}

TEST_CASE("face count disagreeing with annotation lines is a parse error") {
    std::istringstream in("img/a.ppm\n2\n30.0 20.0 0.5 100.0 80.0 1\n");
    CHECK_THROWS_AS(parse_manifest(in, AnnotationKind::ellipse, "mem"), InvalidInput);

    std::istringstream bad_count("img/a.ppm\nxyz\n");
    CHECK_THROWS_AS(parse_manifest(bad_count, AnnotationKind::ellipse, "mem"), InvalidInput);

    std::istringstream bad_fields("img/a.ppm\n1\n30.0 20.0 0.5\n");
    CHECK_THROWS_AS(parse_manifest(bad_fields, AnnotationKind::ellipse, "mem"), InvalidInput);
}

TEST_CASE("box manifests parse x y w h lines") {
    std::istringstream in("img/b.ppm\n2\n1 2 3 4\n10 20 30 40\n");
    DatasetManifest m = parse_manifest(in, AnnotationKind::box, "mem");
    REQUIRE(m.entries.size() == 1);
    REQUIRE(m.entries[0].boxes.size() == 2);
    CHECK(m.entries[0].boxes[1].w == 30.0);
}

TEST_CASE("manifest parse-serialize-parse is a fixed point") {
    std::istringstream in("a.ppm\n2\n30.25 20.125 0.5 100 80 1\n12 8 -0.25 40.5 33 1\nb.ppm\n0\n");
    DatasetManifest m1 = parse_manifest(in, AnnotationKind::ellipse, "mem");
    std::string s1 = serialize_manifest(m1);
    std::istringstream in2(s1);
    DatasetManifest m2 = parse_manifest(in2, AnnotationKind::ellipse, "mem");
    CHECK(serialize_manifest(m2) == s1);
    REQUIRE(m2.entries.size() == m1.entries.size());
    CHECK(m2.entries[0].ellipses[1].angle == m1.entries[0].ellipses[1].angle);
}

TEST_CASE("P6 images load scaled to [0,1]") {
    std::ostringstream os;
    os << "P6\n2 2\n255\n";
    for (int i = 0; i < 12; ++i) os.put(static_cast<char>(255));
    std::istringstream in(os.str());
    Tensor img = load_image(in, "mem");
    REQUIRE(img.shape == std::vector<int>{3, 2, 2});
    for (double v : img.data) CHECK(v == 1.0);
}

TEST_CASE("save then load round trips within quantization") {
    Rng rng(3);
    Tensor img = oracle::random_tensor({3, 8, 9}, rng, 0.0, 1.0);
    std::ostringstream os;
    save_ppm(img, os);
    std::istringstream in(os.str());
    Tensor back = load_image(in, "mem");
    for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(std::abs(back.data[i] - img.data[i]) <= 0.5 / 255.0 + 1e-9);
}

TEST_CASE("P5 grayscale loads as three identical channels") {
    std::ostringstream os;
    os << "P5\n2 1\n255\n";
    os.put(static_cast<char>(0));
    os.put(static_cast<char>(128));
    std::istringstream in(os.str());
    Tensor img = load_image(in, "mem");
    REQUIRE(img.shape == std::vector<int>{3, 1, 2});
    for (int c = 0; c < 3; ++c) {
        CHECK(img.at(c, 0, 0) == 0.0);
        CHECK(std::abs(img.at(c, 0, 1) - 128.0 / 255.0) < 1e-12);
    }
}

TEST_CASE("unsupported image magic is rejected") {
    std::istringstream in("P3\n2 2\n255\n");
    CHECK_THROWS_AS(load_image(in, "mem"), IoError);
}

TEST_CASE("generator with no positives emits only negatives") {
    SynthConfig cfg;
    cfg.num_pos = 0;
    cfg.num_neg = 3;
    cfg.test_pos = 0;
    cfg.test_neg = 1;
    cfg.image_size = 64;
    SynthDataset ds = synth_generate(cfg);
    CHECK(ds.train.annotation_count() == 0);
    CHECK(ds.train.entries.size() == 3);
    CHECK(ds.images.size() == 4);
}

TEST_CASE("generator is deterministic in the seed") {
    SynthConfig cfg;
    cfg.num_pos = 3;
    cfg.num_neg = 2;
    cfg.test_pos = 1;
    cfg.test_neg = 1;
    cfg.image_size = 96;
    cfg.seed = 77;
    SynthDataset a = synth_generate(cfg);
    SynthDataset b = synth_generate(cfg);
    REQUIRE(a.images.size() == b.images.size());
    for (std::size_t i = 0; i < a.images.size(); ++i) {
        CHECK(a.images[i].path == b.images[i].path);
        CHECK(a.images[i].image.data == b.images[i].image.data);
    }
    CHECK(serialize_manifest(a.train) == serialize_manifest(b.train));
    CHECK(serialize_manifest(a.test) == serialize_manifest(b.test));
}

TEST_CASE("painted face support agrees with the ground-truth ellipse") {
    SynthConfig cfg;
    cfg.num_pos = 12;
    cfg.num_neg = 0;
    cfg.test_pos = 0;
    cfg.test_neg = 0;
    cfg.image_size = 160;
    cfg.seed = 5;
    std::vector<SynthPositiveMeta> meta;
    SynthDataset ds = synth_generate(cfg, &meta);
    REQUIRE(meta.size() == 12);
    for (const auto& pm : meta) {
        REQUIRE(pm.support_count > 0);
        // ellipse fitted from the painted-support moments (axes are 2 sigma)
        Ellipse fit;
        fit.major = 2.0 * std::sqrt(pm.support_var_major);
        fit.minor = 2.0 * std::sqrt(pm.support_var_minor);
        fit.angle = pm.support_angle;
        fit.cx = pm.support_cx;
        fit.cy = pm.support_cy;
        CHECK(overlap_voc(fit, pm.gt) > 0.8);
        // every ground truth ellipse stays inside the image bounds
        CHECK(pm.gt.cx - pm.gt.major >= 0.0);
        CHECK(pm.gt.cy - pm.gt.major >= 0.0);
        CHECK(pm.gt.cx + pm.gt.major <= cfg.image_size);
        CHECK(pm.gt.cy + pm.gt.major <= cfg.image_size);
    }
}

TEST_CASE("crop of an object already at window geometry is the identity") {
    Rng rng(9);
    Tensor img = oracle::random_tensor({3, 80, 80}, rng, 0.0, 1.0);
    BBox box{10, 10, 60, 60}; // 60 px object centered in the 80 px image
    Tensor win = crop_window(img, box, 80, 60);
    for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(std::abs(win.data[i] - img.data[i]) < 1e-12);
}

TEST_CASE("a 120 px object is downscaled by two") {
    // gradient image: linear interpolation of a linear ramp is exact
    Tensor img({3, 240, 240});
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 240; ++i)
            for (int j = 0; j < 240; ++j) img.at(c, i, j) = j / 240.0;
    BBox box{60, 60, 120, 120};
    Tensor win = crop_window(img, box, 80, 60);
    // window pixel j samples source x = 40 + (j + 0.5) * 2 - 0.5
    for (int j = 10; j < 70; ++j) {
        const double src = 40.0 + (j + 0.5) * 2.0 - 0.5;
        CHECK(std::abs(win.at(0, 40, j) - src / 240.0) < 1e-9);
    }
}

TEST_CASE("zero jitter ranges equal the unjittered crop") {
    Rng rng(11);
    Tensor img = oracle::random_tensor({3, 120, 120}, rng, 0.0, 1.0);
    BBox box{30, 35, 50, 50};
    Rng jr(4);
    Tensor a = crop_window(img, box, 80, 60);
    Tensor b = crop_window(img, box, 80, 60, CropJitter{0.0, 0.0}, &jr);
    CHECK(a.data == b.data);
    CHECK_THROWS_AS(crop_window(img, BBox{0, 0, 0, 5}, 80, 60), InvalidInput);
}
