#pragma once

// Flat key=value configuration files, run manifests, and the canonical
// config hash.  One key per line, '#' starts a comment, whitespace around
// key and value is trimmed.  Unknown keys are an error so typos surface
// immediately instead of silently falling back to defaults.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace fsseg {

using KvMap = std::map<std::string, std::string>;

KvMap parse_kv_text(const std::string& text);
KvMap parse_kv_file(const std::string& path);
void write_kv_file(const std::string& path, const KvMap& kv);

// FNV-1a over the canonical "key=value\n" serialization (keys sorted).
std::uint64_t kv_hash(const KvMap& kv);

// Everything needed to build, train and evaluate one model.  Defaults are
// the desk-scale setup: 64x64 images, 64 channels, 3 pyramid levels,
// 10 proxies, tau 0.7, lambda_div 0.1, K=1.
struct TrainConfig {
  std::uint64_t seed = 7;

  // data
  std::string dataset = "synthetic";
  int fold = 0;
  int k_shot = 1;
  int image_size = 64;
  int episodes_per_epoch = 200;
  int val_episodes = 40;

  // model
  int channels = 64;
  int heads = 4;
  int levels = 3;        // pyramid scales L
  int proxies = 10;      // local proxy bank size N
  int g_layers = 1;
  int d_layers = 2;
  double tau = 0.7;
  bool freeze_backbone = false;
  std::string normalization = "max_normalize";  // or "softmax_spatial"

  // optimization
  double lr = 1e-4;
  double weight_decay = 1e-2;
  double poly_power = 0.9;
  int epochs = 8;
  int batch_size = 4;
  double lambda_div = 0.1;
  double lambda_kl = 1.0;
  int alternation = 1;   // D steps per G step

  void validate() const;

  // Round-trip through the flat key=value document.  from_kv starts from
  // defaults and overlays the given pairs; unknown keys throw.
  static TrainConfig from_kv(const KvMap& kv);
  KvMap to_kv() const;
  std::uint64_t hash() const { return kv_hash(to_kv()); }

  int steps_per_epoch() const;
  int max_iter() const { return epochs * steps_per_epoch(); }
};

TrainConfig load_train_config(const std::string& path);

// Poly schedule: lr * (1 - iter/max_iter)^power, exact endpoints.
double poly_lr(double base_lr, int iter, int max_iter, double power);

// Every CLI run drops one of these next to its outputs so the run can be
// reproduced bit-identically.
void write_manifest(const std::string& path, const std::string& command,
                    const TrainConfig& cfg, const KvMap& extra = {});

std::uint64_t fnv1a(const void* data, std::size_t n,
                    std::uint64_t seed = 0xcbf29ce484222325ull);

}  // namespace fsseg
