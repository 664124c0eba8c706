#include "fsseg/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace fsseg {

namespace {

RngStream model_stream(const TrainConfig& cfg) { return RngStream(cfg.seed).fork("init"); }

void add_grads(std::vector<Tensor<real>>& sum, Graph<real>& g, const std::vector<int>& nodes) {
    if (sum.empty()) {
        for (int n : nodes) sum.push_back(g.grad(n));
        return;
    }
    if (sum.size() != nodes.size())
        throw std::logic_error("training: gradient list size drifted within a batch");
    for (size_t i = 0; i < nodes.size(); ++i) {
        const Tensor<real>& grad = g.grad(nodes[i]);
        for (std::int64_t j = 0; j < grad.size(); ++j) sum[i][j] += grad[j];
    }
}

[[noreturn]] void dump_and_abort(const Episode& ep, const LossReport& r, Side side) {
    std::ostringstream os;
    os << "non-finite loss on episode " << ep.episode_id << " (class " << ep.class_id
       << ", side " << (side == Side::discriminator ? "d" : "g") << "): ";
    KvMap kv;
    r.append_kv(kv, "");
    for (const auto& [k, v] : kv) os << k << "=" << v << " ";
    std::cerr << os.str() << "\n";
    throw std::runtime_error(os.str());
}

}  // namespace

Trainer::Trainer(const TrainConfig& cfg, SyntheticSceneConfig scene)
    : cfg_(cfg),
      scene_(std::move(scene)),
      split_(build_split(cfg.dataset, cfg.fold)),
      params_([&] {
          RngStream r = model_stream(cfg);
          return ModelParams<real>::make(cfg, r);
      }()),
      opt_g_(cfg.lr, cfg.weight_decay),
      opt_d_(cfg.lr, cfg.weight_decay),
      data_rng_(RngStream(cfg.seed).fork("data")) {
    cfg_.validate();
    scene_.image_size = cfg_.image_size;
    scene_.validate();
}

double Trainer::current_lr() const {
    return poly_lr(cfg_.lr, g_steps_, cfg_.max_iter(), cfg_.poly_power);
}

std::vector<Episode> Trainer::next_batch() {
    std::vector<Episode> batch;
    for (int b = 0; b < cfg_.batch_size; ++b) {
        Episode ep = sample_episode(split_, cfg_.k_shot, Phase::train, data_rng_, scene_);
        ep.episode_id = episode_counter_++;
        batch.push_back(std::move(ep));
    }
    return batch;
}

LossReport Trainer::batch_step(const std::vector<Episode>& batch, Side side) {
    if (batch.empty()) throw std::invalid_argument("batch_step: empty batch");
    ForwardOptions opt;
    opt.side = side;
    opt.backbone_trainable = !cfg_.freeze_backbone;
    opt.lambda_div = cfg_.lambda_div;
    opt.lambda_kl = cfg_.lambda_kl;

    const bool d_side = side == Side::discriminator;
    std::vector<Tensor<real>> grad_sum;
    LossReport mean;
    for (const Episode& ep : batch) {
        Graph<real> g;
        auto fwd = run_episode(g, params_, ep, opt);
        const int loss = d_side ? fwd.loss_d : fwd.loss_g;
        if (!std::isfinite(g.val(loss)[0])) dump_and_abort(ep, fwd.report, side);
        g.backward(loss);
        add_grads(grad_sum, g, d_side ? fwd.d_nodes : fwd.g_nodes);
        mean += fwd.report;
    }
    const real inv = real(1) / static_cast<real>(batch.size());
    for (auto& t : grad_sum)
        for (auto& v : t.data) v *= inv;
    mean /= static_cast<double>(batch.size());

    const double lr_now = current_lr();
    if (d_side) {
        opt_d_.step(d_param_refs(params_), grad_sum, lr_now);
    } else {
        opt_g_.step(g_param_refs(params_, !cfg_.freeze_backbone), grad_sum, lr_now);
        ++g_steps_;
    }
    return mean;
}

LossReport Trainer::d_step(const std::vector<Episode>& batch) {
    return batch_step(batch, Side::discriminator);
}

LossReport Trainer::g_step(const std::vector<Episode>& batch) {
    return batch_step(batch, Side::generator);
}

LossReport Trainer::iteration() {
    LossReport out;
    for (int a = 0; a < cfg_.alternation; ++a) out = d_step(next_batch());
    LossReport g = g_step(next_batch());
    // keep the discriminator-side numbers from its own step and the
    // generator-side numbers from the step that actually optimized them
    out.l_g_total = g.l_g_total;
    out.adv_g = g.adv_g;
    out.bce = g.bce;
    out.kl = g.kl;
    return out;
}

double Trainer::validate() {
    EvalOptions opt;
    opt.episodes = cfg_.val_episodes;
    opt.k_shot = cfg_.k_shot;
    opt.phase = Phase::train;  // held-out draws of training classes
    opt.seed = RngStream(cfg_.seed).fork("val").seed();
    opt.scene = scene_;
    return evaluate_split(params_, split_, opt).miou_percent;
}

EpochRecord Trainer::run_epoch(int epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    const int steps = cfg_.steps_per_epoch();
    for (int s = 0; s < steps; ++s) rec.mean += iteration();
    rec.mean /= static_cast<double>(steps);
    rec.lr_end = current_lr();
    rec.val_miou_percent = validate();
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

KvMap EpochRecord::to_kv() const {
    KvMap kv;
    kv["epoch"] = std::to_string(epoch);
    mean.append_kv(kv, "");
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", val_miou_percent);
    kv["val_miou_percent"] = buf;
    std::snprintf(buf, sizeof(buf), "%.17g", lr_end);
    kv["lr_end"] = buf;
    std::snprintf(buf, sizeof(buf), "%.3f", seconds);
    kv["seconds"] = buf;
    return kv;
}

TrainResult Trainer::run(const std::string& out_dir, std::ostream* echo) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const std::string history_path = out_dir + "/history.txt";
    std::ofstream history(history_path, std::ios::app);
    if (!history) throw std::runtime_error("training: cannot open " + history_path);

    TrainResult result;
    for (int e = 0; e < cfg_.epochs; ++e) {
        EpochRecord rec = run_epoch(e);

        std::ostringstream line;
        bool first = true;
        for (const auto& [k, v] : rec.to_kv()) {
            line << (first ? "" : " ") << k << "=" << v;
            first = false;
        }
        history << line.str() << "\n";
        history.flush();
        if (echo) *echo << line.str() << "\n";

        const std::string ckpt = out_dir + "/ckpt_epoch" + std::to_string(e) + ".bin";
        save_checkpoint(ckpt, all_param_refs(params_),
                        {cfg_.hash(), cfg_.seed, e});
        result.final_checkpoint = ckpt;
        result.history.push_back(std::move(rec));
    }
    return result;
}

ModelParams<real> load_model(const TrainConfig& cfg, const std::string& checkpoint_path,
                             bool allow_mismatch) {
    RngStream r = model_stream(cfg);
    ModelParams<real> mp = ModelParams<real>::make(cfg, r);
    CheckpointMeta meta = load_checkpoint(checkpoint_path, all_param_refs(mp));
    if (!allow_mismatch && meta.config_hash != cfg.hash())
        throw std::runtime_error("load_model: checkpoint was written under a different config");
    return mp;
}

}  // namespace fsseg
