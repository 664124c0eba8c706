#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "fsseg/training.hpp"

using namespace fsseg;

namespace {

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.channels = 8;
    cfg.heads = 2;
    cfg.levels = 2;
    cfg.proxies = 3;
    cfg.g_layers = 1;
    cfg.d_layers = 1;
    cfg.image_size = 32;
    cfg.episodes_per_epoch = 4;
    cfg.batch_size = 2;
    cfg.val_episodes = 4;
    cfg.epochs = 1;
    return cfg;
}

uint64_t backbone_hash(ModelParams<real>& mp) {
    std::vector<ParamRef<real>> bb;
    for (auto& r : g_param_refs(mp))
        if (r.name.rfind("backbone/", 0) == 0) bb.push_back(r);
    return params_hash(bb);
}

}  // namespace

TEST_CASE("batch sampling is sequential and reproducible") {
    Trainer t1(tiny_config()), t2(tiny_config());
    auto b1 = t1.next_batch();
    auto b2 = t2.next_batch();
    REQUIRE(b1.size() == 2);
    CHECK(b1[0].episode_id == 0);
    CHECK(b1[1].episode_id == 1);
    CHECK(t1.next_batch()[0].episode_id == 2);
    CHECK(b1[0].class_id == b2[0].class_id);
    CHECK(b1[0].query_image.data == b2[0].query_image.data);
}

TEST_CASE("strict parameter partition across alternating steps") {
    Trainer t(tiny_config());

    const uint64_t g0 = params_hash(g_param_refs(t.params()));
    const uint64_t d0 = params_hash(d_param_refs(t.params()));

    LossReport rd = t.d_step(t.next_batch());
    const uint64_t g1 = params_hash(g_param_refs(t.params()));
    const uint64_t d1 = params_hash(d_param_refs(t.params()));
    CHECK(g1 == g0);  // discriminator step leaves the generator untouched
    CHECK(d1 != d0);

    LossReport rg = t.g_step(t.next_batch());
    const uint64_t g2 = params_hash(g_param_refs(t.params()));
    const uint64_t d2 = params_hash(d_param_refs(t.params()));
    CHECK(d2 == d1);  // generator step leaves the discriminator untouched
    CHECK(g2 != g1);

    for (const LossReport& r : {rd, rg}) {
        CHECK(std::isfinite(r.l_d_total));
        CHECK(std::isfinite(r.l_g_total));
        CHECK(std::abs(r.l_g_total - (r.adv_g + 1.0 * r.kl + r.bce)) < 1e-6);
        CHECK(std::abs(r.l_d_total - (r.adv_d_real + r.adv_d_fake + 0.1 * r.l_div)) < 1e-6);
    }
}

TEST_CASE("frozen backbone never moves") {
    TrainConfig cfg = tiny_config();
    cfg.freeze_backbone = true;
    Trainer t(cfg);
    const uint64_t bb0 = backbone_hash(t.params());
    t.iteration();
    t.iteration();
    CHECK(backbone_hash(t.params()) == bb0);
    CHECK(t.g_steps_done() == 2);
}

TEST_CASE("schedule endpoints") {
    TrainConfig cfg = tiny_config();
    Trainer t(cfg);
    CHECK(t.current_lr() == cfg.lr);  // exact at step 0
    const int total = cfg.max_iter();
    for (int i = 0; i < total; ++i) t.g_step(t.next_batch());
    CHECK(t.current_lr() == 0.0);  // exact at max_iter
}

TEST_CASE("two runs with one seed coincide") {
    TrainConfig cfg = tiny_config();
    Trainer t1(cfg), t2(cfg);
    for (int i = 0; i < 2; ++i) {
        LossReport r1 = t1.iteration();
        LossReport r2 = t2.iteration();
        CHECK(r1.l_g_total == r2.l_g_total);
        CHECK(r1.l_d_total == r2.l_d_total);
    }
    CHECK(params_hash(all_param_refs(t1.params())) == params_hash(all_param_refs(t2.params())));
    CHECK(t1.validate() == t2.validate());
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
    Trainer t(tiny_config());
    // poison the correlation path: its renormalized distributions reach the
    // scale-consistency term without any clamping to mask the damage
    for (auto& v : t.params().miner.agg[0][0].w_q[0].data)
        v = std::numeric_limits<real>::quiet_NaN();
    CHECK_THROWS_AS(t.g_step(t.next_batch()), std::runtime_error);
}

TEST_CASE("full run writes history and checkpoints") {
    namespace fs = std::filesystem;
    const std::string dir = "train_run_test";
    fs::remove_all(dir);

    TrainConfig cfg = tiny_config();
    Trainer t(cfg);
    TrainResult res = t.run(dir);
    REQUIRE(res.history.size() == 1);
    CHECK(res.history[0].val_miou_percent >= 0.0);
    CHECK(res.history[0].val_miou_percent <= 100.0);
    CHECK(fs::exists(res.final_checkpoint));
    CHECK(fs::exists(dir + "/history.txt"));

    std::ifstream h(dir + "/history.txt");
    std::string line;
    REQUIRE(std::getline(h, line));
    CHECK(line.find("epoch=0") != std::string::npos);
    CHECK(line.find("l_g_total=") != std::string::npos);
    CHECK(line.find("val_miou_percent=") != std::string::npos);

    SUBCASE("checkpoint restores into a fresh model under the same config") {
        ModelParams<real> restored = load_model(cfg, res.final_checkpoint);
        CHECK(params_hash(all_param_refs(restored)) == params_hash(all_param_refs(t.params())));
    }
    SUBCASE("config drift is rejected") {
        TrainConfig other = cfg;
        other.tau = 0.6;
        CHECK_THROWS_AS(load_model(other, res.final_checkpoint), std::runtime_error);
    }
    fs::remove_all(dir);
}
