#ifndef FSSEG_EVALUATION_HPP
#define FSSEG_EVALUATION_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fsseg/episodes.hpp"
#include "fsseg/model.hpp"

namespace fsseg {

/// Running intersection/union pixel counts, kept per class for mIoU and
/// pooled over foreground/background for FB-IoU. Merging is associative, so
/// episode batches can be scored independently and combined.
class IoUAccumulator {
public:
    void add(const Mask& pred, const Mask& gt, int class_id);
    void merge(const IoUAccumulator& other);

    std::vector<int> classes() const;
    /// IoU in [0,1] for one class; throws if the class was never added.
    double class_iou(int class_id) const;
    /// Mean of class IoUs over every class seen, in [0,1].
    double miou() const;
    /// Mean of pooled foreground and background IoU, in [0,1].
    double fb_iou() const;
    std::int64_t episodes() const { return episodes_; }

private:
    struct Counts {
        std::int64_t inter = 0, uni = 0;
    };
    std::map<int, Counts> per_class_;
    Counts fg_, bg_;
    std::int64_t episodes_ = 0;
};

struct EvalOptions {
    int episodes = 200;
    int k_shot = 1;
    Phase phase = Phase::test;
    std::uint64_t seed = 7;
    SyntheticSceneConfig scene;

    // study knobs; plain evaluation leaves both at their defaults
    WeakLabelKind label_kind = WeakLabelKind::mask;
    bool derive_labels = false;  // apply derive_weak_label to support labels
    bool erode = false;          // erode support foreground at feature extent
    double keep_ratio = 1.0;

    int workers = 1;
};

struct EvalResult {
    IoUAccumulator acc;
    double miou_percent = 0;    // over test classes seen
    double fb_iou_percent = 0;  // pooled fg/bg
    int episodes = 0;
    int fallback_episodes = 0;  // seed threshold fell back to top-k
    std::uint64_t seed = 0;
    double seconds = 0;

    std::string table() const;  // per-class + summary, plain text
    KvMap to_kv() const;
};

/// Scores `episodes` freshly sampled episodes. Episode i is generated from an
/// independent child stream of `seed`, so two runs with equal seeds evaluate
/// identical episodes regardless of any study transform applied on top
/// (paired design).
EvalResult evaluate_split(const ModelParams<real>& mp, const SplitSpec& split,
                          const EvalOptions& opt);

struct StudyRow {
    double ratio = 0;                          // erosion study
    WeakLabelKind kind = WeakLabelKind::mask;  // label study
    double miou_percent = 0;
    double fb_iou_percent = 0;
};

struct StudyTable {
    std::vector<StudyRow> rows;
    std::uint64_t seed = 0;
    int episodes = 0;
    std::string table(const std::string& key_header) const;
};

/// One paired evaluation per keep-ratio; same seed (hence same episodes)
/// across all rows, ratio 1.0 reproducing the plain result exactly.
StudyTable run_erosion_study(const ModelParams<real>& mp, const SplitSpec& split,
                             const std::vector<double>& ratios, const EvalOptions& base);

/// One paired evaluation per weak-label kind; the mask row reproduces the
/// plain result exactly.
StudyTable run_weak_label_study(const ModelParams<real>& mp, const SplitSpec& split,
                                const std::vector<WeakLabelKind>& kinds, const EvalOptions& base);

// ---- feature-similarity measurement --------------------------------------

struct SimilarityReport {
    struct ClassStat {
        double intra_sum = 0, inter_sum = 0;
        std::int64_t intra_pairs = 0, inter_pairs = 0;
        double mean_intra() const { return intra_pairs ? intra_sum / intra_pairs : 0; }
        double mean_inter() const { return inter_pairs ? inter_sum / inter_pairs : 0; }
    };
    std::map<int, ClassStat> per_class;
    int episodes = 0;
    std::uint64_t seed = 0;
    std::string table(const std::string& dataset) const;
};

/// Mean pairwise cosine over sampled foreground feature pixels: within the
/// query object (intra) and between the support object and the query object
/// (inter). Objects with a single foreground cell are skipped for intra.
void similarity_stats(const Tensor<real>& f_q, const Tensor<real>& mask_q,
                      const Tensor<real>& f_s, const Tensor<real>& mask_s, int pairs_per_object,
                      RngStream& rng, SimilarityReport::ClassStat& out);

/// Samples one-shot episodes and accumulates similarity_stats per class.
SimilarityReport measure_similarity(const ModelParams<real>& mp, const SplitSpec& split,
                                    int episodes, int pairs_per_object, const EvalOptions& base);

}  // namespace fsseg

#endif
