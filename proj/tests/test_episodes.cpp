#include <cstdio>
#include <fstream>
#include <set>

#include "doctest.h"
#include "fsseg/episodes.hpp"

using namespace fsseg;

TEST_CASE("split registry") {
    SUBCASE("pascal folds hold out five consecutive classes") {
        SplitSpec s0 = build_split("pascal-5i", 0);
        REQUIRE(s0.test_classes.size() == 5);
        CHECK(s0.train_classes.size() == 15);
        std::vector<std::string> names;
        for (int c : s0.test_classes) names.push_back(class_name("pascal-5i", c));
        CHECK(names == std::vector<std::string>{"aeroplane", "bicycle", "bird", "boat", "bottle"});

        SplitSpec s3 = build_split("pascal-5i", 3);
        names.clear();
        for (int c : s3.test_classes) names.push_back(class_name("pascal-5i", c));
        CHECK(names ==
              std::vector<std::string>{"potted plant", "sheep", "sofa", "train", "tv/monitor"});
    }
    SUBCASE("coco folds: 20 held out, interleaved") {
        SplitSpec s = build_split("coco-20i", 1);
        CHECK(s.test_classes.size() == 20);
        CHECK(s.train_classes.size() == 60);
        for (int c : s.test_classes) CHECK((c - 1) % 4 == 1);
    }
    SUBCASE("synthetic: 2 test, 6 train, disjoint") {
        for (int fold = 0; fold < 4; ++fold) {
            SplitSpec s = build_split("synthetic", fold);
            CHECK(s.test_classes.size() == 2);
            CHECK(s.train_classes.size() == 6);
            std::set<int> all(s.train_classes.begin(), s.train_classes.end());
            for (int c : s.test_classes) CHECK(all.insert(c).second);  // no overlap
            CHECK(all.size() == 8);
        }
        CHECK(build_split("synthetic", 1).test_classes == std::vector<int>{2, 3});
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(build_split("pascal-5i", 4), std::invalid_argument);
        CHECK_THROWS_AS(build_split("pascal-5i", -1), std::invalid_argument);
        CHECK_THROWS_AS(build_split("imagenet", 0), std::invalid_argument);
    }
}

TEST_CASE("scene config round trip and validation") {
    SyntheticSceneConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    SyntheticSceneConfig back = SyntheticSceneConfig::from_kv(cfg.to_kv());
    CHECK(back.image_size == cfg.image_size);
    CHECK(back.shape_classes == cfg.shape_classes);
    CHECK(back.texture_noise == cfg.texture_noise);

    SyntheticSceneConfig bad = cfg;
    bad.image_size = 16;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.shape_classes = {"disc", "square", "triangle"};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.shape_classes.push_back("hexagon");
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    KvMap kv = cfg.to_kv();
    kv["mystery"] = "1";
    CHECK_THROWS_AS(SyntheticSceneConfig::from_kv(kv), std::invalid_argument);
}

TEST_CASE("scene rendering") {
    SyntheticSceneConfig cfg;
    cfg.image_size = 32;
    for (int cls = 0; cls < cfg.num_classes(); ++cls) {
        RngStream rng(100 + static_cast<uint64_t>(cls));
        SceneSample s = render_scene(cfg, cls, 7, rng);
        CHECK(s.image.shape == std::vector<int>{32, 32, 3});
        CHECK(s.mask.data.shape == std::vector<int>{32, 32});
        CHECK(s.mask.kind == MaskKind::binary);
        CHECK(s.mask.foreground_count() > 0);
        for (auto v : s.image.data) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }

    // bitwise determinism per stream seed
    RngStream a(5), b(5), c(6);
    SceneSample sa = render_scene(cfg, 2, 1, a);
    SceneSample sb = render_scene(cfg, 2, 1, b);
    SceneSample sc = render_scene(cfg, 2, 1, c);
    CHECK(sa.image.data == sb.image.data);
    CHECK(sa.mask.data.data == sb.mask.data.data);
    CHECK(sa.image.data != sc.image.data);

    CHECK_THROWS_AS(render_scene(cfg, 99, 0, a), std::invalid_argument);
}

TEST_CASE("episode sampling") {
    SplitSpec split = build_split("synthetic", 0);
    SyntheticSceneConfig cfg;
    cfg.image_size = 32;

    SUBCASE("one-shot contract") {
        RngStream rng(1);
        Episode ep = sample_episode(split, 1, Phase::train, rng, cfg);
        REQUIRE(ep.supports.size() == 1);
        CHECK(ep.supports[0].label.foreground_count() > 0);
        CHECK(ep.query_mask.foreground_count() > 0);
        CHECK(ep.supports[0].scene_id != ep.query_scene_id);
        bool in_train = false;
        for (int c : split.train_classes) in_train = in_train || c == ep.class_id;
        CHECK(in_train);
    }
    SUBCASE("five-shot: all supports share the class, instances distinct") {
        RngStream rng(2);
        Episode ep = sample_episode(split, 5, Phase::test, rng, cfg);
        REQUIRE(ep.supports.size() == 5);
        std::set<int64_t> ids;
        for (const auto& s : ep.supports) {
            CHECK(s.label.foreground_count() > 0);
            ids.insert(s.scene_id);
        }
        ids.insert(ep.query_scene_id);
        CHECK(ids.size() == 6);
        bool in_test = false;
        for (int c : split.test_classes) in_test = in_test || c == ep.class_id;
        CHECK(in_test);
    }
    SUBCASE("fixed seed reproduces the class sequence") {
        std::vector<int> seq1, seq2;
        for (int rep = 0; rep < 2; ++rep) {
            RngStream rng(1234);
            auto& seq = rep == 0 ? seq1 : seq2;
            for (int i = 0; i < 50; ++i)
                seq.push_back(sample_episode(split, 1, Phase::train, rng, cfg).class_id);
        }
        CHECK(seq1 == seq2);
    }
    SUBCASE("guards") {
        RngStream rng(3);
        CHECK_THROWS_AS(sample_episode(split, 0, Phase::train, rng, cfg), std::invalid_argument);
        SplitSpec pascal = build_split("pascal-5i", 0);
        CHECK_THROWS_AS(sample_episode(pascal, 1, Phase::train, rng, cfg), std::runtime_error);
    }
}

TEST_CASE("weak labels") {
    RngStream rng(11);

    SUBCASE("mask kind is the identity") {
        Mask m = Mask::zeros(6, 6);
        m.data.at2(2, 2) = m.data.at2(2, 3) = 1.0f;
        Mask out = derive_weak_label(m, WeakLabelKind::mask, rng);
        CHECK(out.data.data == m.data.data);
    }
    SUBCASE("bbox: degenerate single pixel") {
        Mask m = Mask::zeros(5, 5);
        m.data.at2(3, 1) = 1.0f;
        Mask out = derive_weak_label(m, WeakLabelKind::bbox, rng);
        CHECK(out.foreground_count() == 1);
        CHECK(out.data.at2(3, 1) == 1.0f);
    }
    SUBCASE("bbox: centered square maps to exactly its block") {
        Mask m = Mask::zeros(10, 10);
        for (int y = 3; y < 7; ++y)
            for (int x = 3; x < 7; ++x) m.data.at2(y, x) = 1.0f;
        Mask out = derive_weak_label(m, WeakLabelKind::bbox, rng);
        CHECK(out.data.data == m.data.data);
    }
    SUBCASE("bbox is a superset of any foreground") {
        Mask m = Mask::zeros(12, 12);
        m.data.at2(2, 9) = m.data.at2(7, 3) = m.data.at2(5, 5) = 1.0f;
        Mask out = derive_weak_label(m, WeakLabelKind::bbox, rng);
        for (int64_t i = 0; i < m.data.size(); ++i)
            if (m.data[i] > 0) CHECK(out.data[i] == 1.0f);
        // tight: nothing outside rows [2,7] x cols [3,9]
        for (int y = 0; y < 12; ++y)
            for (int x = 0; x < 12; ++x)
                if (y < 2 || y > 7 || x < 3 || x > 9) CHECK(out.data.at2(y, x) == 0.0f);
    }
    SUBCASE("scribble: 4x4 block yields a single interior pixel") {
        Mask m = Mask::zeros(8, 8);
        for (int y = 2; y < 6; ++y)
            for (int x = 2; x < 6; ++x) m.data.at2(y, x) = 1.0f;
        Mask out = derive_weak_label(m, WeakLabelKind::scribble, rng);
        CHECK(out.foreground_count() == 1);  // 6% of 16 clips to the floor of 1
        for (int64_t i = 0; i < out.data.size(); ++i)
            if (out.data[i] > 0) CHECK(m.data[i] == 1.0f);
    }
    SUBCASE("scribble: coverage band, subset and connectivity") {
        // filled disc, radius 5.5 at the center of 16x16
        Mask m = Mask::zeros(16, 16);
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x)
                if ((y - 8) * (y - 8) + (x - 8) * (x - 8) <= 30) m.data.at2(y, x) = 1.0f;
        const double fg = static_cast<double>(m.foreground_count());
        RngStream r1(7), r2(7);
        Mask s1 = derive_weak_label(m, WeakLabelKind::scribble, r1);
        Mask s2 = derive_weak_label(m, WeakLabelKind::scribble, r2);
        CHECK(s1.data.data == s2.data.data);  // deterministic

        const double cov = static_cast<double>(s1.foreground_count()) / fg;
        CHECK(cov >= 0.02);
        CHECK(cov <= 0.10);
        for (int64_t i = 0; i < s1.data.size(); ++i)
            if (s1.data[i] > 0) CHECK(m.data[i] == 1.0f);  // subset

        // connected under 8-adjacency
        std::vector<std::pair<int, int>> px;
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x)
                if (s1.data.at2(y, x) > 0) px.push_back({y, x});
        std::set<std::pair<int, int>> seen = {px[0]};
        std::vector<std::pair<int, int>> stack = {px[0]};
        while (!stack.empty()) {
            auto [y, x] = stack.back();
            stack.pop_back();
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    std::pair<int, int> n{y + dy, x + dx};
                    if (n.first < 0 || n.second < 0 || n.first >= 16 || n.second >= 16) continue;
                    if (s1.data.at2(n.first, n.second) > 0 && !seen.count(n)) {
                        seen.insert(n);
                        stack.push_back(n);
                    }
                }
        }
        CHECK(seen.size() == px.size());
    }
    SUBCASE("guards") {
        Mask empty = Mask::zeros(4, 4);
        CHECK_THROWS_AS(derive_weak_label(empty, WeakLabelKind::bbox, rng), std::invalid_argument);
        CHECK_THROWS_AS(parse_label_kind("polygon"), std::invalid_argument);
        CHECK(parse_label_kind("scribble") == WeakLabelKind::scribble);
        CHECK(label_kind_name(WeakLabelKind::bbox) == "bbox");
    }
}

TEST_CASE("support foreground erosion") {
    Mask m = Mask::zeros(10, 10);
    int fg = 0;
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x)
            if ((x + y) % 2 == 0) {
                m.data.at2(y, x) = 1.0f;
                ++fg;
            }
    REQUIRE(fg == 50);

    SUBCASE("identity at ratio 1") {
        RngStream rng(4);
        Mask out = erode_support_foreground(m, 1.0, rng);
        CHECK(out.data.data == m.data.data);
    }
    SUBCASE("exact count and subset at ratio 0.5") {
        RngStream rng(4);
        Mask out = erode_support_foreground(m, 0.5, rng);
        CHECK(out.foreground_count() == 25);
        for (int64_t i = 0; i < out.data.size(); ++i)
            if (out.data[i] > 0) CHECK(m.data[i] == 1.0f);
    }
    SUBCASE("ceil rounding") {
        Mask s = Mask::zeros(3, 3);
        for (int i = 0; i < 7; ++i) s.data[i] = 1.0f;
        RngStream rng(9);
        CHECK(erode_support_foreground(s, 0.5, rng).foreground_count() == 4);  // ceil(3.5)
    }
    SUBCASE("deterministic per seed") {
        RngStream r1(21), r2(21), r3(22);
        CHECK(erode_support_foreground(m, 0.35, r1).data.data ==
              erode_support_foreground(m, 0.35, r2).data.data);
        CHECK(erode_support_foreground(m, 0.35, r1).data.data !=
              erode_support_foreground(m, 0.35, r3).data.data);
    }
    SUBCASE("guards") {
        RngStream rng(1);
        CHECK_THROWS_AS(erode_support_foreground(m, 0.0, rng), std::invalid_argument);
        CHECK_THROWS_AS(erode_support_foreground(m, 1.5, rng), std::invalid_argument);
        Mask empty = Mask::zeros(4, 4);
        CHECK_THROWS_AS(erode_support_foreground(empty, 0.5, rng), std::invalid_argument);
    }
}

TEST_CASE("episode manifest format") {
    SplitSpec split = build_split("synthetic", 0);
    SyntheticSceneConfig cfg;
    cfg.image_size = 32;
    RngStream rng(77);
    std::vector<Episode> eps;
    for (int i = 0; i < 2; ++i) {
        Episode ep = sample_episode(split, 2, Phase::train, rng, cfg);
        ep.episode_id = i;
        eps.push_back(std::move(ep));
    }
    const std::string path = "manifest_test.txt";
    write_episode_manifest(path, eps, 77);
    std::ifstream is(path);
    REQUIRE(is.good());
    std::string line;
    int lines = 0;
    while (std::getline(is, line)) {
        CHECK(line.find("episode_id=" + std::to_string(lines)) == 0);
        CHECK(line.find("class_id=") != std::string::npos);
        CHECK(line.find("support_ids=") != std::string::npos);
        CHECK(line.find("query_id=") != std::string::npos);
        CHECK(line.find("seed=77") != std::string::npos);
        CHECK(std::count(line.begin(), line.end(), ',') == 1);  // two support ids
        ++lines;
    }
    CHECK(lines == 2);
    std::remove(path.c_str());
}

TEST_CASE("image and mask files round-trip") {
    RngStream rng(31);
    TensorF img({9, 7, 3});
    for (auto& v : img.data) v = static_cast<float>(rng.next_uniform(0.0, 1.0));
    save_image_ppm("roundtrip.ppm", img);
    TensorF back = load_image_ppm("roundtrip.ppm");
    REQUIRE(back.shape == img.shape);
    for (int64_t i = 0; i < img.size(); ++i)
        CHECK(std::abs(back[i] - img[i]) <= 0.5f / 255.0f + 1e-6f);
    std::remove("roundtrip.ppm");

    Mask m = Mask::zeros(5, 8);
    for (int64_t i = 0; i < m.data.size(); i += 3) m.data[i] = 1.0f;
    save_mask_pgm("roundtrip.pgm", m);
    Mask mb = load_mask_pgm("roundtrip.pgm");
    CHECK(mb.data.shape == m.data.shape);
    CHECK(mb.data.data == m.data.data);  // binary survives exactly
    std::remove("roundtrip.pgm");

    TensorF map({4, 4});
    for (int64_t i = 0; i < map.size(); ++i) map[i] = static_cast<float>(i) - 5.0f;
    save_map_pgm("map.pgm", map);
    CHECK(load_mask_pgm("map.pgm", 0.9).data.shape == map.shape);  // readable P5
    std::remove("map.pgm");

    CHECK_THROWS_AS(load_image_ppm("missing_file.ppm"), std::runtime_error);
}
