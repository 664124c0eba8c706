#ifndef FSSEG_EPISODES_HPP
#define FSSEG_EPISODES_HPP

#include <set>
#include <string>
#include <vector>

#include "fsseg/config.hpp"
#include "fsseg/core.hpp"
#include "fsseg/rng.hpp"

namespace fsseg {

/// Disjoint train/test class partition of one dataset fold.
struct SplitSpec {
    std::string name;
    int fold = 0;
    std::vector<int> train_classes, test_classes;

    void validate() const;
};

/// Returns the class partition for "pascal-5i" (4 folds x 5 classes),
/// "coco-20i" (4 folds x 20 classes, interleaved) or "synthetic"
/// (8 shape classes, 2 held out per fold).
SplitSpec build_split(const std::string& dataset, int fold);

/// Human-readable class name within a dataset.
std::string class_name(const std::string& dataset, int class_id);

enum class Phase { train, test };

/// Procedural scenes: one target shape plus distractor shapes of other
/// classes over a textured background.
struct SyntheticSceneConfig {
    int image_size = 64;
    std::vector<std::string> shape_classes = {"disc",  "square", "triangle", "annulus",
                                              "cross", "star",   "ellipse",  "bar"};
    int min_shapes = 1, max_shapes = 3;
    double texture_noise = 0.05;
    double color_jitter = 0.2;
    // Per-episode hue rotation amplitude as a fraction of the full circle.
    // Supports and query share one rotation, so matching within an episode
    // still works, but across episodes a category owns no color — models
    // must segment by correspondence, not by memorized palette.
    double hue_shift = 1.0;

    int num_classes() const { return static_cast<int>(shape_classes.size()); }
    void validate() const;
    KvMap to_kv() const;
    static SyntheticSceneConfig from_kv(const KvMap& kv);
};

struct SceneSample {
    TensorF image;  // [S, S, 3] in [0,1]
    Mask mask;      // binary target-class mask
    int64_t scene_id = -1;
};

/// Deterministically render one scene containing the target class; all
/// randomness comes from the stream. `hue` rotates every shape color by
/// that fraction of the color circle (the episode sampler passes one draw
/// shared across the episode's scenes).
SceneSample render_scene(const SyntheticSceneConfig& cfg, int class_id, int64_t scene_id,
                         RngStream& rng, double hue = 0.0);

/// Draw one episode: a class from the phase's class set, K distinct support
/// scenes and a disjoint query scene, all with non-empty masks (bounded
/// retries, then an error).
Episode sample_episode(const SplitSpec& split, int k_shot, Phase phase, RngStream& rng,
                       const SyntheticSceneConfig& scene_cfg = {});

enum class WeakLabelKind { mask, bbox, scribble };

WeakLabelKind parse_label_kind(const std::string& s);
std::string label_kind_name(WeakLabelKind k);

/// mask: identity; bbox: filled tight box over the foreground (superset);
/// scribble: connected path inside the foreground covering 2-10% of it.
Mask derive_weak_label(const Mask& mask, WeakLabelKind kind, RngStream& rng);

/// Keep a uniformly random subset of exactly ceil(keep_ratio * |fg|)
/// foreground pixels; background untouched; 1.0 is the identity.
Mask erode_support_foreground(const Mask& feature_mask, double keep_ratio, RngStream& rng);

/// One line per episode: episode_id, class_id, support scene ids, query
/// scene id and the sampling seed, as space-separated key=value fields.
void write_episode_manifest(const std::string& path, const std::vector<Episode>& episodes,
                            std::uint64_t seed);

// ---- image/mask file IO (plug-in reader path and diagnostic dumps) -------

void save_image_ppm(const std::string& path, const TensorF& image);
TensorF load_image_ppm(const std::string& path);
void save_mask_pgm(const std::string& path, const Mask& mask);
Mask load_mask_pgm(const std::string& path, double threshold = 0.5);

/// Grayscale dump of any [H,W] map scaled to its own [min,max] range.
void save_map_pgm(const std::string& path, const TensorF& map);

}  // namespace fsseg

#endif
