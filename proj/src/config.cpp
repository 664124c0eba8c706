#include "fsseg/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fsseg {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw std::runtime_error("config: bad numeric value for " + key + ": '" + v + "'");
  }
}

int parse_int(const std::string& key, const std::string& v) {
  double d = parse_double(key, v);
  int i = static_cast<int>(d);
  if (static_cast<double>(i) != d)
    throw std::runtime_error("config: expected integer for " + key + ": '" + v + "'");
  return i;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    std::uint64_t u = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return u;
  } catch (const std::exception&) {
    throw std::runtime_error("config: bad unsigned value for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw std::runtime_error("config: bad boolean for " + key + ": '" + v + "'");
}

std::string fmt_double(double d) {
  // shortest round-trip-ish representation, stable across runs
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", d);
  return buf;
}

}  // namespace

KvMap parse_kv_text(const std::string& text) {
  KvMap kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(lineno) +
                               " is not key=value: '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config: empty key at line " + std::to_string(lineno));
    if (kv.count(key))
      throw std::runtime_error("config: duplicate key '" + key + "'");
    kv[key] = val;
  }
  return kv;
}

KvMap parse_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_kv_text(ss.str());
}

void write_kv_file(const std::string& path, const KvMap& kv) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("config: cannot write " + path);
  for (const auto& [k, v] : kv) out << k << "=" << v << "\n";
  if (!out) throw std::runtime_error("config: write failed for " + path);
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t seed) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t kv_hash(const KvMap& kv) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [k, v] : kv) {  // std::map iterates in key order
    h = fnv1a(k.data(), k.size(), h);
    h = fnv1a("=", 1, h);
    h = fnv1a(v.data(), v.size(), h);
    h = fnv1a("\n", 1, h);
  }
  return h;
}

void TrainConfig::validate() const {
  if (lr <= 0) throw std::runtime_error("config: lr must be > 0");
  if (lambda_div < 0) throw std::runtime_error("config: lambda_div must be >= 0");
  if (alternation < 1) throw std::runtime_error("config: alternation must be >= 1");
  if (image_size < 32) throw std::runtime_error("config: image_size must be >= 32");
  if (k_shot < 1) throw std::runtime_error("config: k_shot must be >= 1");
  if (levels < 1) throw std::runtime_error("config: levels must be >= 1");
  if (proxies < 2) throw std::runtime_error("config: proxies must be >= 2");
  if (channels % heads != 0)
    throw std::runtime_error("config: channels must be divisible by heads");
  if (tau < 0 || tau > 1) throw std::runtime_error("config: tau must be in [0,1]");
  if (normalization != "max_normalize" && normalization != "softmax_spatial")
    throw std::runtime_error("config: unknown normalization '" + normalization + "'");
  if (batch_size < 1) throw std::runtime_error("config: batch_size must be >= 1");
  if (epochs < 1) throw std::runtime_error("config: epochs must be >= 1");
  if (episodes_per_epoch < 1)
    throw std::runtime_error("config: episodes_per_epoch must be >= 1");
}

int TrainConfig::steps_per_epoch() const {
  return (episodes_per_epoch + batch_size - 1) / batch_size;
}

KvMap TrainConfig::to_kv() const {
  KvMap kv;
  kv["seed"] = std::to_string(seed);
  kv["data.dataset"] = dataset;
  kv["data.fold"] = std::to_string(fold);
  kv["data.k_shot"] = std::to_string(k_shot);
  kv["data.image_size"] = std::to_string(image_size);
  kv["data.episodes_per_epoch"] = std::to_string(episodes_per_epoch);
  kv["data.val_episodes"] = std::to_string(val_episodes);
  kv["model.channels"] = std::to_string(channels);
  kv["model.heads"] = std::to_string(heads);
  kv["model.levels"] = std::to_string(levels);
  kv["model.proxies"] = std::to_string(proxies);
  kv["model.g_layers"] = std::to_string(g_layers);
  kv["model.d_layers"] = std::to_string(d_layers);
  kv["model.tau"] = fmt_double(tau);
  kv["model.freeze_backbone"] = freeze_backbone ? "1" : "0";
  kv["model.normalization"] = normalization;
  kv["optim.lr"] = fmt_double(lr);
  kv["optim.weight_decay"] = fmt_double(weight_decay);
  kv["optim.poly_power"] = fmt_double(poly_power);
  kv["optim.epochs"] = std::to_string(epochs);
  kv["optim.batch_size"] = std::to_string(batch_size);
  kv["optim.lambda_div"] = fmt_double(lambda_div);
  kv["optim.lambda_kl"] = fmt_double(lambda_kl);
  kv["optim.alternation"] = std::to_string(alternation);
  return kv;
}

TrainConfig TrainConfig::from_kv(const KvMap& kv) {
  TrainConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "seed") c.seed = parse_u64(k, v);
    else if (k == "data.dataset") c.dataset = v;
    else if (k == "data.fold") c.fold = parse_int(k, v);
    else if (k == "data.k_shot") c.k_shot = parse_int(k, v);
    else if (k == "data.image_size") c.image_size = parse_int(k, v);
    else if (k == "data.episodes_per_epoch") c.episodes_per_epoch = parse_int(k, v);
    else if (k == "data.val_episodes") c.val_episodes = parse_int(k, v);
    else if (k == "model.channels") c.channels = parse_int(k, v);
    else if (k == "model.heads") c.heads = parse_int(k, v);
    else if (k == "model.levels") c.levels = parse_int(k, v);
    else if (k == "model.proxies") c.proxies = parse_int(k, v);
    else if (k == "model.g_layers") c.g_layers = parse_int(k, v);
    else if (k == "model.d_layers") c.d_layers = parse_int(k, v);
    else if (k == "model.tau") c.tau = parse_double(k, v);
    else if (k == "model.freeze_backbone") c.freeze_backbone = parse_bool(k, v);
    else if (k == "model.normalization") c.normalization = v;
    else if (k == "optim.lr") c.lr = parse_double(k, v);
    else if (k == "optim.weight_decay") c.weight_decay = parse_double(k, v);
    else if (k == "optim.poly_power") c.poly_power = parse_double(k, v);
    else if (k == "optim.epochs") c.epochs = parse_int(k, v);
    else if (k == "optim.batch_size") c.batch_size = parse_int(k, v);
    else if (k == "optim.lambda_div") c.lambda_div = parse_double(k, v);
    else if (k == "optim.lambda_kl") c.lambda_kl = parse_double(k, v);
    else if (k == "optim.alternation") c.alternation = parse_int(k, v);
    else throw std::runtime_error("config: unknown key '" + k + "'");
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  return TrainConfig::from_kv(parse_kv_file(path));
}

double poly_lr(double base_lr, int iter, int max_iter, double power) {
  if (iter >= max_iter) return 0.0;
  if (iter <= 0) return base_lr;
  double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(max_iter);
  return base_lr * std::pow(frac, power);
}

void write_manifest(const std::string& path, const std::string& command,
                    const TrainConfig& cfg, const KvMap& extra) {
  KvMap kv;
  kv["manifest.command"] = command;
  char hex[32];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(cfg.hash()));
  kv["manifest.config_hash"] = hex;
  kv["manifest.seed"] = std::to_string(cfg.seed);
  for (const auto& [k, v] : cfg.to_kv()) kv[k] = v;
  for (const auto& [k, v] : extra) kv["manifest." + k] = v;
  write_kv_file(path, kv);
}

}  // namespace fsseg
