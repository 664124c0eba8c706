#include "fsseg/commands.hpp"

#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fsseg/evaluation.hpp"
#include "fsseg/training.hpp"

namespace fsseg {

namespace {

namespace fs = std::filesystem;

/// Options shared by every command; explicit flags override the config file.
struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::string checkpoint;
    std::uint64_t seed = 0;
    int fold = -1;
    int k_shot = 0;
    int episodes = 0;
    int workers = 0;

    CLI::Option *seed_opt = nullptr, *fold_opt = nullptr, *kshot_opt = nullptr,
                *episodes_opt = nullptr, *workers_opt = nullptr;

    void attach(CLI::App* cmd, const std::string& default_out, bool with_checkpoint) {
        cmd->add_option("--config", config_path, "flat key=value config file");
        cmd->add_option("--out-dir", out_dir, "output directory")->default_val(default_out);
        if (with_checkpoint)
            cmd->add_option("--checkpoint", checkpoint, "trained weights archive")->required();
        seed_opt = cmd->add_option("--seed", seed, "override config seed");
        fold_opt = cmd->add_option("--fold", fold, "override config fold");
        kshot_opt = cmd->add_option("--k-shot", k_shot, "override config k_shot");
        episodes_opt = cmd->add_option("--episodes", episodes, "episode count for this command");
        workers_opt = cmd->add_option("--workers", workers, "parallel evaluation workers");
    }

    TrainConfig resolve() const {
        TrainConfig cfg;
        if (!config_path.empty()) cfg = TrainConfig::from_kv(parse_kv_file(config_path));
        if (seed_opt->count()) cfg.seed = seed;
        if (fold_opt->count()) cfg.fold = fold;
        if (kshot_opt->count()) cfg.k_shot = k_shot;
        cfg.validate();
        return cfg;
    }

    EvalOptions eval_options(const TrainConfig& cfg, int default_episodes) const {
        EvalOptions opt;
        opt.episodes = episodes_opt->count() ? episodes : default_episodes;
        opt.k_shot = cfg.k_shot;
        opt.seed = cfg.seed;
        opt.scene.image_size = cfg.image_size;
        if (workers_opt->count()) opt.workers = workers;
        return opt;
    }
};

std::vector<double> parse_ratio_list(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw CLI::ValidationError("--ratios", "not a number: " + item);
        }
    }
    if (out.empty()) throw CLI::ValidationError("--ratios", "empty list");
    return out;
}

std::vector<WeakLabelKind> parse_kind_list(const std::string& csv) {
    std::vector<WeakLabelKind> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            out.push_back(parse_label_kind(item));
        } catch (const std::exception&) {
            throw CLI::ValidationError("--kinds", "unknown label kind: " + item);
        }
    }
    if (out.empty()) throw CLI::ValidationError("--kinds", "empty list");
    return out;
}

void finish(const std::string& out_dir, const std::string& command, const TrainConfig& cfg,
            const KvMap& extra) {
    write_manifest(out_dir + "/manifest.txt", command, cfg, extra);
}

// ---- commands ------------------------------------------------------------

int cmd_gen_data(const CommonArgs& args, const std::string& phase_name) {
    TrainConfig cfg = args.resolve();
    const Phase phase = phase_name == "train" ? Phase::train : Phase::test;
    const int n = args.episodes_opt->count() ? args.episodes : 8;

    SplitSpec split = build_split(cfg.dataset, cfg.fold);
    SyntheticSceneConfig scene;
    scene.image_size = cfg.image_size;
    fs::create_directories(args.out_dir);

    std::vector<Episode> episodes;
    for (int i = 0; i < n; ++i) {
        RngStream rng = RngStream(cfg.seed).fork("episode").fork(static_cast<std::uint64_t>(i));
        Episode ep = sample_episode(split, cfg.k_shot, phase, rng, scene);
        ep.episode_id = i;

        const std::string stem = args.out_dir + "/ep" + std::to_string(i);
        save_image_ppm(stem + "_query.ppm", ep.query_image);
        save_mask_pgm(stem + "_query_mask.pgm", ep.query_mask);
        for (size_t k = 0; k < ep.supports.size(); ++k) {
            save_image_ppm(stem + "_support" + std::to_string(k) + ".ppm",
                           ep.supports[k].image);
            save_mask_pgm(stem + "_support" + std::to_string(k) + "_mask.pgm",
                          ep.supports[k].label);
        }
        episodes.push_back(std::move(ep));
    }
    write_episode_manifest(args.out_dir + "/episodes.txt", episodes, cfg.seed);
    finish(args.out_dir, "gen-data", cfg,
           {{"episodes", std::to_string(n)}, {"phase", phase_name}});
    std::cout << "wrote " << n << " episodes to " << args.out_dir << "\n";
    return 0;
}

int cmd_train(const CommonArgs& args) {
    TrainConfig cfg = args.resolve();
    Trainer trainer(cfg);
    TrainResult res = trainer.run(args.out_dir, &std::cout);
    finish(args.out_dir, "train", cfg,
           {{"final_checkpoint", res.final_checkpoint},
            {"epochs_done", std::to_string(res.history.size())}});
    return 0;
}

int cmd_eval(const CommonArgs& args) {
    TrainConfig cfg = args.resolve();
    ModelParams<real> mp = load_model(cfg, args.checkpoint);
    SplitSpec split = build_split(cfg.dataset, cfg.fold);
    EvalResult r = evaluate_split(mp, split, args.eval_options(cfg, 1000));

    fs::create_directories(args.out_dir);
    std::cout << r.table();
    write_kv_file(args.out_dir + "/report.txt", r.to_kv());
    KvMap extra = {{"checkpoint", args.checkpoint}};
    for (const auto& [k, v] : r.to_kv()) extra["result." + k] = v;
    finish(args.out_dir, "eval", cfg, extra);
    return 0;
}

int cmd_study_erosion(const CommonArgs& args, const std::string& ratios_csv) {
    TrainConfig cfg = args.resolve();
    std::vector<double> ratios = parse_ratio_list(ratios_csv);
    ModelParams<real> mp = load_model(cfg, args.checkpoint);
    SplitSpec split = build_split(cfg.dataset, cfg.fold);
    StudyTable t = run_erosion_study(mp, split, ratios, args.eval_options(cfg, 200));

    fs::create_directories(args.out_dir);
    std::cout << t.table("ratio");
    KvMap kv = {{"checkpoint", args.checkpoint}};
    for (const auto& row : t.rows) {
        char key[64], val[64];
        std::snprintf(key, sizeof(key), "miou_ratio_%.2f", row.ratio);
        std::snprintf(val, sizeof(val), "%.17g", row.miou_percent);
        kv[key] = val;
    }
    write_kv_file(args.out_dir + "/study.txt", kv);
    finish(args.out_dir, "study-erosion", cfg, kv);
    return 0;
}

int cmd_study_weak_labels(const CommonArgs& args, const std::string& kinds_csv) {
    TrainConfig cfg = args.resolve();
    std::vector<WeakLabelKind> kinds = parse_kind_list(kinds_csv);
    ModelParams<real> mp = load_model(cfg, args.checkpoint);
    SplitSpec split = build_split(cfg.dataset, cfg.fold);
    StudyTable t = run_weak_label_study(mp, split, kinds, args.eval_options(cfg, 200));

    fs::create_directories(args.out_dir);
    std::cout << t.table("label");
    KvMap kv = {{"checkpoint", args.checkpoint}};
    for (const auto& row : t.rows) {
        char val[64];
        std::snprintf(val, sizeof(val), "%.17g", row.miou_percent);
        kv["miou_" + label_kind_name(row.kind)] = val;
    }
    write_kv_file(args.out_dir + "/study.txt", kv);
    finish(args.out_dir, "study-weak-labels", cfg, kv);
    return 0;
}

int cmd_study_similarity(const CommonArgs& args, int pairs_per_object) {
    TrainConfig cfg = args.resolve();
    ModelParams<real> mp = load_model(cfg, args.checkpoint);
    SplitSpec split = build_split(cfg.dataset, cfg.fold);
    EvalOptions base = args.eval_options(cfg, 100);
    SimilarityReport rep =
        measure_similarity(mp, split, base.episodes, pairs_per_object, base);

    fs::create_directories(args.out_dir);
    std::cout << rep.table(cfg.dataset);
    KvMap kv = {{"checkpoint", args.checkpoint}};
    for (const auto& [cid, st] : rep.per_class) {
        char val[64];
        std::snprintf(val, sizeof(val), "%.17g", st.mean_intra());
        kv["intra_" + std::to_string(cid)] = val;
        std::snprintf(val, sizeof(val), "%.17g", st.mean_inter());
        kv["inter_" + std::to_string(cid)] = val;
    }
    write_kv_file(args.out_dir + "/study.txt", kv);
    finish(args.out_dir, "study-similarity", cfg, kv);
    return 0;
}

int cmd_dump_diagnostics(const CommonArgs& args) {
    TrainConfig cfg = args.resolve();
    ModelParams<real> mp = load_model(cfg, args.checkpoint);
    SplitSpec split = build_split(cfg.dataset, cfg.fold);
    SyntheticSceneConfig scene;
    scene.image_size = cfg.image_size;
    const int n = args.episodes_opt->count() ? args.episodes : 4;
    fs::create_directories(args.out_dir);

    for (int i = 0; i < n; ++i) {
        RngStream rng = RngStream(cfg.seed).fork("episode").fork(static_cast<std::uint64_t>(i));
        Episode ep = sample_episode(split, cfg.k_shot, Phase::test, rng, scene);
        ep.episode_id = i;
        auto inf = infer_episode(mp, ep);

        const std::string stem = args.out_dir + "/ep" + std::to_string(i);
        save_image_ppm(stem + "_query.ppm", ep.query_image);
        save_mask_pgm(stem + "_gt.pgm", ep.query_mask);
        save_map_pgm(stem + "_sim0.pgm", TensorF(inf.seed.sim[0]));
        save_map_pgm(stem + "_seed.pgm", TensorF(inf.seed.m_qtau));
        save_map_pgm(stem + "_soft.pgm", TensorF(inf.m_e));
        save_mask_pgm(stem + "_pred.pgm", inf.predicted);

        // per-proxy attention rows over the query's masked positions
        Graph<real> g;
        auto dn = bind_detail(g, mp.detail, false);
        Tensor<real> f_q = extract_features(ep.query_image.cast<real>(), mp.encoder);
        auto lf = extract_local_features(g, dn, g.constant(f_q), g.constant(inf.m_e));
        const Tensor<real>& attn = g.val(lf.attn_maps.back());
        const int h = f_q.shape[0], w = f_q.shape[1];
        for (int p = 0; p < attn.shape[0]; ++p) {
            TensorF row({h, w});
            for (int j = 0; j < h * w; ++j) row[j] = attn.at2(p, j);
            save_map_pgm(stem + "_proxy" + std::to_string(p) + ".pgm", row);
        }
    }
    finish(args.out_dir, "dump-diagnostics", cfg,
           {{"checkpoint", args.checkpoint}, {"episodes", std::to_string(n)}});
    std::cout << "wrote diagnostics for " << n << " episodes to " << args.out_dir << "\n";
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"few-shot segmentation: training, evaluation, and study commands"};
    app.require_subcommand(1);

    CommonArgs gen, train, eval, ero, weak, sim, diag;
    std::string phase_name = "test";
    std::string ratios_csv = "0.2,0.35,0.5,0.65,0.8,1.0";
    std::string kinds_csv = "mask,bbox,scribble";
    int pairs_per_object = 2000;

    auto* c_gen = app.add_subcommand("gen-data", "render synthetic episodes to image files");
    gen.attach(c_gen, "runs/gen-data", false);
    c_gen->add_option("--phase", phase_name, "train or test classes")
        ->check(CLI::IsMember({"train", "test"}));

    auto* c_train = app.add_subcommand("train", "alternating adversarial training loop");
    train.attach(c_train, "runs/train", false);

    auto* c_eval = app.add_subcommand("eval", "episodic mIoU / FB-IoU evaluation");
    eval.attach(c_eval, "runs/eval", true);

    auto* c_ero = app.add_subcommand("study-erosion", "support-foreground erosion sweep");
    ero.attach(c_ero, "runs/study-erosion", true);
    c_ero->add_option("--ratios", ratios_csv, "comma-separated keep ratios");

    auto* c_weak = app.add_subcommand("study-weak-labels", "mask/bbox/scribble comparison");
    weak.attach(c_weak, "runs/study-weak-labels", true);
    c_weak->add_option("--kinds", kinds_csv, "comma-separated label kinds");

    auto* c_sim = app.add_subcommand("study-similarity", "object feature-similarity statistics");
    sim.attach(c_sim, "runs/study-similarity", true);
    c_sim->add_option("--pairs-per-object", pairs_per_object, "pair budget per object");

    auto* c_diag = app.add_subcommand("dump-diagnostics", "per-episode map and mask dumps");
    diag.attach(c_diag, "runs/dump-diagnostics", true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;  // --help exits clean; anything else is usage
    }

    try {
        if (c_gen->parsed()) return cmd_gen_data(gen, phase_name);
        if (c_train->parsed()) return cmd_train(train);
        if (c_eval->parsed()) return cmd_eval(eval);
        if (c_ero->parsed()) return cmd_study_erosion(ero, ratios_csv);
        if (c_weak->parsed()) return cmd_study_weak_labels(weak, kinds_csv);
        if (c_sim->parsed()) return cmd_study_similarity(sim, pairs_per_object);
        if (c_diag->parsed()) return cmd_dump_diagnostics(diag);
    } catch (const CLI::ParseError& e) {  // late flag validation (e.g. --ratios)
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace fsseg
