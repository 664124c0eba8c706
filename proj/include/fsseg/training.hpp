#ifndef FSSEG_TRAINING_HPP
#define FSSEG_TRAINING_HPP

#include <iosfwd>
#include <string>
#include <vector>

#include "fsseg/checkpoint.hpp"
#include "fsseg/evaluation.hpp"
#include "fsseg/model.hpp"
#include "fsseg/optimizer.hpp"

namespace fsseg {

struct EpochRecord {
    int epoch = 0;
    LossReport mean;  // averaged over the epoch's steps
    double val_miou_percent = 0;
    double lr_end = 0;  // schedule value after the epoch's last step
    double seconds = 0;
    KvMap to_kv() const;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::string final_checkpoint;
};

/// Alternating two-player loop. Each iteration takes `alternation` dual-model
/// steps that update only the proxy discriminator, then one step that updates
/// only the mask decoder (and the encoder unless frozen); the frozen side is
/// bound as graph constants, so the partition is structural, not a masking
/// convention.
class Trainer {
public:
    Trainer(const TrainConfig& cfg, SyntheticSceneConfig scene = {});

    const TrainConfig& config() const { return cfg_; }
    ModelParams<real>& params() { return params_; }
    const SplitSpec& split() const { return split_; }
    int g_steps_done() const { return g_steps_; }
    double current_lr() const;

    std::vector<Episode> next_batch();

    /// One update of the discriminator on a batch; generator untouched.
    LossReport d_step(const std::vector<Episode>& batch);
    /// One update of the generator on a batch; discriminator untouched.
    LossReport g_step(const std::vector<Episode>& batch);
    /// `alternation` d_steps then one g_step, each on its own fresh batch.
    LossReport iteration();

    /// Fixed validation episodes over held-out train-class draws; the same
    /// set every epoch, so the curve is comparable across epochs.
    double validate();

    EpochRecord run_epoch(int epoch);
    /// Full loop: epochs, per-epoch checkpoint + history line under out_dir;
    /// history lines are echoed to `echo` when given.
    TrainResult run(const std::string& out_dir, std::ostream* echo = nullptr);

private:
    LossReport batch_step(const std::vector<Episode>& batch, Side side);

    TrainConfig cfg_;
    SyntheticSceneConfig scene_;
    SplitSpec split_;
    ModelParams<real> params_;
    AdamW<real> opt_g_, opt_d_;
    RngStream data_rng_;
    int g_steps_ = 0;
    std::int64_t episode_counter_ = 0;
};

/// Loads config + weights and reports where the checkpoint metadata came
/// from; throws on config-hash mismatch unless allow_mismatch.
ModelParams<real> load_model(const TrainConfig& cfg, const std::string& checkpoint_path,
                             bool allow_mismatch = false);

}  // namespace fsseg

#endif
