#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "fsseg/checkpoint.hpp"
#include "fsseg/model.hpp"

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
    return cfg;
}

}  // namespace

TEST_CASE("parameter registry") {
    TrainConfig cfg = tiny_config();
    RngStream rng(cfg.seed);
    ModelParams<float> mp = ModelParams<float>::make(cfg, rng);

    auto g = g_param_refs(mp);
    auto d = d_param_refs(mp);
    auto all = all_param_refs(mp);
    CHECK(g.size() + d.size() == all.size());

    std::set<std::string> names;
    bool saw_backbone = false, saw_miner = false, saw_attn = false, saw_detail = false;
    for (const auto& r : all) {
        CHECK(names.insert(r.name).second);  // unique
        CHECK(r.tensor != nullptr);
        CHECK(r.tensor->size() > 0);
        saw_backbone |= r.name.rfind("backbone/", 0) == 0;
        saw_miner |= r.name.rfind("miner/", 0) == 0;
        saw_attn |= r.name.rfind("attn/", 0) == 0;
        saw_detail |= r.name.rfind("detail/", 0) == 0;
    }
    CHECK(saw_backbone);
    CHECK(saw_miner);
    CHECK(saw_attn);
    CHECK(saw_detail);
    for (const auto& r : d) CHECK(r.name.rfind("detail/", 0) == 0);

    SUBCASE("excluding the backbone drops exactly its entries") {
        auto g_no_bb = g_param_refs(mp, false);
        size_t bb = 0;
        for (const auto& r : g)
            if (r.name.rfind("backbone/", 0) == 0) ++bb;
        CHECK(bb > 0);
        CHECK(g_no_bb.size() == g.size() - bb);
    }
}

TEST_CASE("parameter hashing") {
    TrainConfig cfg = tiny_config();
    RngStream r1(3), r2(3), r3(4);
    ModelParams<float> a = ModelParams<float>::make(cfg, r1);
    ModelParams<float> b = ModelParams<float>::make(cfg, r2);
    ModelParams<float> c = ModelParams<float>::make(cfg, r3);

    CHECK(params_hash(all_param_refs(a)) == params_hash(all_param_refs(b)));
    CHECK(params_hash(all_param_refs(a)) != params_hash(all_param_refs(c)));

    const uint64_t g_before = params_hash(g_param_refs(a));
    a.detail.fc_b2[0] += 0.25f;  // touch only the discriminator side
    CHECK(params_hash(g_param_refs(a)) == g_before);
    CHECK(params_hash(d_param_refs(a)) != params_hash(d_param_refs(b)));
    a.miner.head_w1[0] += 0.25f;
    CHECK(params_hash(g_param_refs(a)) != g_before);
}

TEST_CASE("checkpoint save and load") {
    TrainConfig cfg = tiny_config();
    RngStream r1(3), r2(99);
    ModelParams<float> src = ModelParams<float>::make(cfg, r1);
    ModelParams<float> dst = ModelParams<float>::make(cfg, r2);
    REQUIRE(params_hash(all_param_refs(src)) != params_hash(all_param_refs(dst)));

    const std::string path = "ckpt_test.bin";
    CheckpointMeta meta{cfg.hash(), 3, 5};
    save_checkpoint(path, all_param_refs(src), meta);
    CHECK_FALSE(std::filesystem::exists(path + ".tmp"));

    SUBCASE("round trip is bitwise and returns the metadata") {
        CheckpointMeta back = load_checkpoint(path, all_param_refs(dst));
        CHECK(back.config_hash == meta.config_hash);
        CHECK(back.seed == meta.seed);
        CHECK(back.epoch == meta.epoch);
        CHECK(params_hash(all_param_refs(dst)) == params_hash(all_param_refs(src)));
        CHECK(dst.detail.bank.data == src.detail.bank.data);
        CHECK(dst.encoder.proj_w.data == src.encoder.proj_w.data);
    }
    SUBCASE("listing names matches the registry order") {
        std::vector<std::string> names = checkpoint_names(path);
        auto refs = all_param_refs(src);
        REQUIRE(names.size() == refs.size());
        for (size_t i = 0; i < refs.size(); ++i) CHECK(names[i] == refs[i].name);
    }
    SUBCASE("entry mismatch in either direction throws") {
        auto fewer = all_param_refs(dst);
        fewer.pop_back();
        CHECK_THROWS_AS(load_checkpoint(path, fewer), std::runtime_error);

        auto renamed = all_param_refs(dst);
        renamed[0].name = "backbone/ghost";
        CHECK_THROWS_AS(load_checkpoint(path, renamed), std::runtime_error);
    }
    SUBCASE("shape mismatch throws") {
        TrainConfig wide = cfg;
        wide.proxies = 4;
        RngStream rw(1);
        ModelParams<float> other = ModelParams<float>::make(wide, rw);
        CHECK_THROWS_AS(load_checkpoint(path, all_param_refs(other)), std::runtime_error);
    }
    SUBCASE("corrupted magic throws") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.write("XXXX", 4);
        f.close();
        CHECK_THROWS_AS(load_checkpoint(path, all_param_refs(dst)), std::runtime_error);
    }
    std::remove(path.c_str());
}
