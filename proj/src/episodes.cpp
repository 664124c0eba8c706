#include "fsseg/episodes.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <queue>
#include <sstream>
#include <stdexcept>

namespace fsseg {

// ---- splits --------------------------------------------------------------

namespace {

const std::array<const char*, 20> kPascalClasses = {
    "aeroplane", "bicycle", "bird",  "boat",         "bottle", "bus",   "car",
    "cat",       "chair",   "cow",   "dining table", "dog",    "horse", "motorbike",
    "person",    "potted plant", "sheep", "sofa",    "train",  "tv/monitor"};

}  // namespace

void SplitSpec::validate() const {
    std::set<int> tr(train_classes.begin(), train_classes.end());
    for (int c : test_classes)
        if (tr.count(c)) throw std::invalid_argument("SplitSpec: train/test classes overlap");
    if (train_classes.empty() || test_classes.empty())
        throw std::invalid_argument("SplitSpec: empty class set");
}

SplitSpec build_split(const std::string& dataset, int fold) {
    if (fold < 0 || fold > 3) throw std::invalid_argument("build_split: fold must be in [0,3]");
    SplitSpec s;
    s.name = dataset;
    s.fold = fold;
    if (dataset == "pascal-5i") {
        // 20 classes in the canonical alphabetical order, 5 consecutive ids
        // per fold held out
        for (int c = 1; c <= 20; ++c) {
            if ((c - 1) / 5 == fold)
                s.test_classes.push_back(c);
            else
                s.train_classes.push_back(c);
        }
    } else if (dataset == "coco-20i") {
        // 80 classes, interleaved assignment: fold f holds out ids with
        // (id - 1) % 4 == f
        for (int c = 1; c <= 80; ++c) {
            if ((c - 1) % 4 == fold)
                s.test_classes.push_back(c);
            else
                s.train_classes.push_back(c);
        }
    } else if (dataset == "synthetic") {
        // 8 shape classes, two consecutive ids held out per fold (75/25)
        for (int c = 0; c < 8; ++c) {
            if (c / 2 == fold)
                s.test_classes.push_back(c);
            else
                s.train_classes.push_back(c);
        }
    } else {
        throw std::invalid_argument("build_split: unknown dataset '" + dataset + "'");
    }
    s.validate();
    return s;
}

std::string class_name(const std::string& dataset, int class_id) {
    if (dataset == "pascal-5i") {
        if (class_id < 1 || class_id > 20) throw std::invalid_argument("class_name: pascal id in [1,20]");
        return kPascalClasses[static_cast<size_t>(class_id - 1)];
    }
    if (dataset == "coco-20i") {
        if (class_id < 1 || class_id > 80) throw std::invalid_argument("class_name: coco id in [1,80]");
        return "coco_" + std::to_string(class_id);
    }
    if (dataset == "synthetic") {
        SyntheticSceneConfig def;
        if (class_id < 0 || class_id >= def.num_classes())
            throw std::invalid_argument("class_name: synthetic id out of range");
        return def.shape_classes[static_cast<size_t>(class_id)];
    }
    throw std::invalid_argument("class_name: unknown dataset '" + dataset + "'");
}

// ---- synthetic scenes ----------------------------------------------------

namespace {

struct Rgb {
    double r, g, b;
};

const std::map<std::string, Rgb>& shape_palette() {
    static const std::map<std::string, Rgb> p = {
        {"disc", {0.80, 0.20, 0.20}},    {"square", {0.20, 0.80, 0.20}},
        {"triangle", {0.20, 0.30, 0.85}}, {"annulus", {0.85, 0.80, 0.20}},
        {"cross", {0.80, 0.20, 0.80}},   {"star", {0.20, 0.80, 0.80}},
        {"ellipse", {0.90, 0.55, 0.15}}, {"bar", {0.55, 0.25, 0.75}},
    };
    return p;
}

// Rotate a color around the hue circle by `h` turns, keeping saturation
// and value (stays inside the RGB gamut by construction).
Rgb rotate_hue(const Rgb& c, double h) {
    if (h <= 0.0) return c;
    const double mx = std::max({c.r, c.g, c.b}), mn = std::min({c.r, c.g, c.b});
    const double d = mx - mn;
    double hue = 0.0;
    if (d > 1e-12) {
        if (mx == c.r) hue = std::fmod((c.g - c.b) / d, 6.0);
        else if (mx == c.g) hue = (c.b - c.r) / d + 2.0;
        else hue = (c.r - c.g) / d + 4.0;
        hue /= 6.0;
        if (hue < 0.0) hue += 1.0;
    }
    hue = std::fmod(hue + h, 1.0);
    const double v = mx, s = mx <= 1e-12 ? 0.0 : d / mx;
    const double hh = hue * 6.0;
    const double f = hh - std::floor(hh);
    const double p = v * (1.0 - s), q = v * (1.0 - f * s), t = v * (1.0 - (1.0 - f) * s);
    switch (static_cast<int>(hh) % 6) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

struct ShapeInstance {
    std::string kind;
    double cx, cy, r, theta;
    Rgb color;
};

bool point_in_polygon(const std::vector<std::pair<double, double>>& poly, double x, double y) {
    bool in = false;
    for (size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const auto [xi, yi] = poly[i];
        const auto [xj, yj] = poly[j];
        if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) in = !in;
    }
    return in;
}

bool covers(const ShapeInstance& s, double px, double py) {
    const double dx = px - s.cx, dy = py - s.cy;
    const double c = std::cos(s.theta), sn = std::sin(s.theta);
    const double u = dx * c + dy * sn, v = -dx * sn + dy * c;
    if (s.kind == "disc") return dx * dx + dy * dy <= s.r * s.r;
    if (s.kind == "square") {
        const double h = 0.75 * s.r;
        return std::abs(u) <= h && std::abs(v) <= h;
    }
    if (s.kind == "annulus") {
        const double d2 = dx * dx + dy * dy;
        return d2 <= s.r * s.r && d2 >= 0.45 * s.r * (0.45 * s.r);
    }
    if (s.kind == "cross") {
        const double arm = 0.33 * s.r;
        return (std::abs(u) <= arm && std::abs(v) <= s.r) ||
               (std::abs(v) <= arm && std::abs(u) <= s.r);
    }
    if (s.kind == "ellipse") {
        const double a = s.r, b = 0.55 * s.r;
        return (u / a) * (u / a) + (v / b) * (v / b) <= 1.0;
    }
    if (s.kind == "bar") return std::abs(u) <= s.r && std::abs(v) <= 0.28 * s.r;
    if (s.kind == "triangle") {
        std::vector<std::pair<double, double>> poly;
        for (int k = 0; k < 3; ++k) {
            double a = s.theta + 2.0 * M_PI * k / 3.0 - M_PI / 2.0;
            poly.push_back({s.cx + s.r * std::cos(a), s.cy + s.r * std::sin(a)});
        }
        return point_in_polygon(poly, px, py);
    }
    if (s.kind == "star") {
        std::vector<std::pair<double, double>> poly;
        for (int k = 0; k < 10; ++k) {
            double rad = k % 2 == 0 ? s.r : 0.45 * s.r;
            double a = s.theta + 2.0 * M_PI * k / 10.0 - M_PI / 2.0;
            poly.push_back({s.cx + rad * std::cos(a), s.cy + rad * std::sin(a)});
        }
        return point_in_polygon(poly, px, py);
    }
    throw std::invalid_argument("render_scene: unknown shape '" + s.kind + "'");
}

ShapeInstance draw_shape(const SyntheticSceneConfig& cfg, int cls, double hue, RngStream& rng) {
    const double S = cfg.image_size;
    ShapeInstance s;
    s.kind = cfg.shape_classes[static_cast<size_t>(cls)];
    s.cx = rng.next_uniform(0.2 * S, 0.8 * S);
    s.cy = rng.next_uniform(0.2 * S, 0.8 * S);
    s.r = rng.next_uniform(0.16 * S, 0.30 * S);
    s.theta = rng.next_uniform(0.0, 2.0 * M_PI);
    auto it = shape_palette().find(s.kind);
    if (it == shape_palette().end())
        throw std::invalid_argument("render_scene: no palette entry for '" + s.kind + "'");
    const Rgb base = rotate_hue(it->second, hue);
    const double j = cfg.color_jitter / 2.0;
    s.color = {std::clamp(base.r + rng.next_uniform(-j, j), 0.0, 1.0),
               std::clamp(base.g + rng.next_uniform(-j, j), 0.0, 1.0),
               std::clamp(base.b + rng.next_uniform(-j, j), 0.0, 1.0)};
    return s;
}

void paint(TensorF& img, Mask* mask, const ShapeInstance& s) {
    const int S = img.shape[0];
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            if (!covers(s, x + 0.5, y + 0.5)) continue;
            img.at3(y, x, 0) = static_cast<float>(s.color.r);
            img.at3(y, x, 1) = static_cast<float>(s.color.g);
            img.at3(y, x, 2) = static_cast<float>(s.color.b);
            if (mask) mask->data.at2(y, x) = 1.0f;
        }
}

}  // namespace

void SyntheticSceneConfig::validate() const {
    if (image_size < 32) throw std::invalid_argument("SyntheticSceneConfig: image_size >= 32");
    if (num_classes() < 4)
        throw std::invalid_argument("SyntheticSceneConfig: need at least 4 shape classes");
    if (min_shapes < 1 || max_shapes < min_shapes)
        throw std::invalid_argument("SyntheticSceneConfig: bad shapes_per_image range");
    if (texture_noise < 0 || color_jitter < 0)
        throw std::invalid_argument("SyntheticSceneConfig: negative noise settings");
    if (hue_shift < 0 || hue_shift > 1)
        throw std::invalid_argument("SyntheticSceneConfig: hue_shift in [0,1]");
    for (const auto& n : shape_classes)
        if (!shape_palette().count(n))
            throw std::invalid_argument("SyntheticSceneConfig: unknown shape class '" + n + "'");
}

KvMap SyntheticSceneConfig::to_kv() const {
    KvMap kv;
    kv["image_size"] = std::to_string(image_size);
    std::string joined;
    for (const auto& n : shape_classes) {
        if (!joined.empty()) joined += ",";
        joined += n;
    }
    kv["shape_classes"] = joined;
    kv["min_shapes"] = std::to_string(min_shapes);
    kv["max_shapes"] = std::to_string(max_shapes);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", texture_noise);
    kv["texture_noise"] = buf;
    std::snprintf(buf, sizeof(buf), "%.17g", color_jitter);
    kv["color_jitter"] = buf;
    std::snprintf(buf, sizeof(buf), "%.17g", hue_shift);
    kv["hue_shift"] = buf;
    return kv;
}

SyntheticSceneConfig SyntheticSceneConfig::from_kv(const KvMap& kv) {
    SyntheticSceneConfig cfg;
    for (const auto& [k, v] : kv) {
        if (k == "image_size")
            cfg.image_size = std::stoi(v);
        else if (k == "shape_classes") {
            cfg.shape_classes.clear();
            std::stringstream ss(v);
            std::string item;
            while (std::getline(ss, item, ','))
                if (!item.empty()) cfg.shape_classes.push_back(item);
        } else if (k == "min_shapes")
            cfg.min_shapes = std::stoi(v);
        else if (k == "max_shapes")
            cfg.max_shapes = std::stoi(v);
        else if (k == "texture_noise")
            cfg.texture_noise = std::stod(v);
        else if (k == "color_jitter")
            cfg.color_jitter = std::stod(v);
        else if (k == "hue_shift")
            cfg.hue_shift = std::stod(v);
        else
            throw std::invalid_argument("SyntheticSceneConfig: unknown key '" + k + "'");
    }
    cfg.validate();
    return cfg;
}

SceneSample render_scene(const SyntheticSceneConfig& cfg, int class_id, int64_t scene_id,
                         RngStream& rng, double hue) {
    cfg.validate();
    if (class_id < 0 || class_id >= cfg.num_classes())
        throw std::invalid_argument("render_scene: class id out of range");
    const int S = cfg.image_size;

    SceneSample out;
    out.scene_id = scene_id;
    out.image = TensorF({S, S, 3});
    out.mask = Mask::zeros(S, S);

    // background: a gray tint per channel
    float tint[3];
    for (float& t : tint) t = static_cast<float>(0.5 + rng.next_uniform(-0.08, 0.08));
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x)
            for (int c = 0; c < 3; ++c) out.image.at3(y, x, c) = tint[c];

    // distractors first, target last so it is never occluded
    const int total = static_cast<int>(rng.next_int(cfg.min_shapes, cfg.max_shapes));
    for (int i = 0; i < total - 1; ++i) {
        int cls = class_id;
        while (cls == class_id)
            cls = static_cast<int>(rng.next_int(0, cfg.num_classes() - 1));
        paint(out.image, nullptr, draw_shape(cfg, cls, hue, rng));
    }
    paint(out.image, &out.mask, draw_shape(cfg, class_id, hue, rng));

    // one texture pass over the whole frame, then clamp
    for (auto& v : out.image.data) {
        v += static_cast<float>(cfg.texture_noise * rng.next_normal());
        v = std::clamp(v, 0.0f, 1.0f);
    }
    return out;
}

Episode sample_episode(const SplitSpec& split, int k_shot, Phase phase, RngStream& rng,
                       const SyntheticSceneConfig& scene_cfg) {
    if (k_shot < 1) throw std::invalid_argument("sample_episode: k_shot >= 1");
    if (split.name != "synthetic")
        throw std::runtime_error("sample_episode: only the synthetic dataset is sampled "
                                 "procedurally; real data enters through the file reader");
    const auto& classes = phase == Phase::train ? split.train_classes : split.test_classes;
    if (classes.empty()) throw std::invalid_argument("sample_episode: phase has no classes");

    Episode ep;
    ep.class_id = classes[static_cast<size_t>(rng.next_int(0, static_cast<int>(classes.size()) - 1))];
    const double hue =
        scene_cfg.hue_shift > 0 ? rng.next_uniform(0.0, scene_cfg.hue_shift) : 0.0;

    std::set<int64_t> used;
    auto next_scene = [&]() -> SceneSample {
        for (int attempt = 0; attempt < 100; ++attempt) {
            int64_t id = static_cast<int64_t>(rng.next_u64() >> 1);
            if (used.count(id)) continue;
            SceneSample s = render_scene(scene_cfg, ep.class_id, id, rng, hue);
            if (s.mask.foreground_count() == 0) continue;
            used.insert(id);
            return s;
        }
        throw std::runtime_error("sample_episode: no non-empty mask after 100 attempts");
    };

    for (int k = 0; k < k_shot; ++k) {
        SceneSample s = next_scene();
        ep.supports.push_back({std::move(s.image), std::move(s.mask), s.scene_id});
    }
    SceneSample q = next_scene();
    ep.query_image = std::move(q.image);
    ep.query_mask = std::move(q.mask);
    ep.query_scene_id = q.scene_id;
    return ep;
}

// ---- weak labels ---------------------------------------------------------

WeakLabelKind parse_label_kind(const std::string& s) {
    if (s == "mask") return WeakLabelKind::mask;
    if (s == "bbox") return WeakLabelKind::bbox;
    if (s == "scribble") return WeakLabelKind::scribble;
    throw std::invalid_argument("parse_label_kind: unknown kind '" + s + "'");
}

std::string label_kind_name(WeakLabelKind k) {
    switch (k) {
        case WeakLabelKind::mask: return "mask";
        case WeakLabelKind::bbox: return "bbox";
        case WeakLabelKind::scribble: return "scribble";
    }
    throw std::invalid_argument("label_kind_name: bad enum");
}

namespace {

Mask derive_scribble(const Mask& mask, RngStream& rng) {
    const int H = mask.height(), W = mask.width();
    const auto& m = mask.data;
    std::int64_t fg = mask.foreground_count();

    // multi-source BFS distance (4-neighborhood) from everything that is
    // not foreground, including the virtual border
    std::vector<int> dist(static_cast<size_t>(H) * W, 0);
    std::queue<std::pair<int, int>> q;
    auto idx = [&](int y, int x) { return static_cast<size_t>(y) * W + x; };
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            if (m.at2(y, x) > 0 && (y == 0 || x == 0 || y == H - 1 || x == W - 1 ||
                                    m.at2(y - 1, x) == 0 || m.at2(y + 1, x) == 0 ||
                                    m.at2(y, x - 1) == 0 || m.at2(y, x + 1) == 0)) {
                dist[idx(y, x)] = 1;
                q.push({y, x});
            }
    while (!q.empty()) {
        auto [y, x] = q.front();
        q.pop();
        const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
        for (int d = 0; d < 4; ++d) {
            int ny = y + dy[d], nx = x + dx[d];
            if (ny < 0 || nx < 0 || ny >= H || nx >= W) continue;
            if (m.at2(ny, nx) == 0 || dist[idx(ny, nx)] != 0) continue;
            dist[idx(ny, nx)] = dist[idx(y, x)] + 1;
            q.push({ny, nx});
        }
    }

    // coverage target: about 6% of the foreground, clipped to [2%, 10%]
    const std::int64_t lo = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(0.02 * fg)));
    const std::int64_t hi = std::max(lo, static_cast<std::int64_t>(std::floor(0.10 * fg)));
    std::int64_t target = std::clamp(static_cast<std::int64_t>(std::llround(0.06 * fg)), lo, hi);

    // random start among the deepest pixels, then grow along the ridge
    int best_d = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) best_d = std::max(best_d, dist[idx(y, x)]);
    std::vector<std::pair<int, int>> deepest;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            if (m.at2(y, x) > 0 && dist[idx(y, x)] == best_d) deepest.push_back({y, x});
    auto start = deepest[static_cast<size_t>(rng.next_int(0, static_cast<int>(deepest.size()) - 1))];

    Mask out = Mask::zeros(H, W);
    std::vector<std::pair<int, int>> selected = {start};
    out.data.at2(start.first, start.second) = 1.0f;
    while (static_cast<std::int64_t>(selected.size()) < target) {
        int cand_d = -1;
        std::pair<int, int> cand{-1, -1};
        for (const auto& [sy, sx] : selected)
            for (int ddy = -1; ddy <= 1; ++ddy)
                for (int ddx = -1; ddx <= 1; ++ddx) {
                    int ny = sy + ddy, nx = sx + ddx;
                    if (ny < 0 || nx < 0 || ny >= H || nx >= W) continue;
                    if (m.at2(ny, nx) == 0 || out.data.at2(ny, nx) > 0) continue;
                    int d = dist[idx(ny, nx)];
                    if (d > cand_d || (d == cand_d && std::pair(ny, nx) < cand)) {
                        cand_d = d;
                        cand = {ny, nx};
                    }
                }
        if (cand_d < 0) break;  // component exhausted
        selected.push_back(cand);
        out.data.at2(cand.first, cand.second) = 1.0f;
    }
    return out;
}

}  // namespace

Mask derive_weak_label(const Mask& mask, WeakLabelKind kind, RngStream& rng) {
    mask.validate();
    if (mask.kind != MaskKind::binary)
        throw std::invalid_argument("derive_weak_label: binary mask expected");
    if (mask.foreground_count() == 0)
        throw std::invalid_argument("derive_weak_label: empty mask");
    if (kind == WeakLabelKind::mask) return mask;
    if (kind == WeakLabelKind::bbox) {
        const int H = mask.height(), W = mask.width();
        int y0 = H, y1 = -1, x0 = W, x1 = -1;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                if (mask.data.at2(y, x) > 0) {
                    y0 = std::min(y0, y);
                    y1 = std::max(y1, y);
                    x0 = std::min(x0, x);
                    x1 = std::max(x1, x);
                }
        Mask out = Mask::zeros(H, W);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) out.data.at2(y, x) = 1.0f;
        return out;
    }
    return derive_scribble(mask, rng);
}

Mask erode_support_foreground(const Mask& feature_mask, double keep_ratio, RngStream& rng) {
    if (feature_mask.kind != MaskKind::binary)
        throw std::invalid_argument("erode_support_foreground: binary mask expected");
    if (keep_ratio <= 0.0 || keep_ratio > 1.0)
        throw std::invalid_argument("erode_support_foreground: keep_ratio in (0,1]");
    std::vector<std::int64_t> fg;
    for (std::int64_t i = 0; i < feature_mask.data.size(); ++i)
        if (feature_mask.data[i] > 0) fg.push_back(i);
    if (fg.empty()) throw std::invalid_argument("erode_support_foreground: empty foreground");

    const auto keep = static_cast<std::int64_t>(
        std::ceil(keep_ratio * static_cast<double>(fg.size())));
    // partial Fisher-Yates: the first `keep` entries are a uniform subset
    for (std::int64_t i = 0; i < keep; ++i) {
        std::int64_t j = rng.next_int(i, static_cast<std::int64_t>(fg.size()) - 1);
        std::swap(fg[static_cast<size_t>(i)], fg[static_cast<size_t>(j)]);
    }
    Mask out = Mask::zeros(feature_mask.height(), feature_mask.width());
    for (std::int64_t i = 0; i < keep; ++i) out.data[fg[static_cast<size_t>(i)]] = 1.0f;
    return out;
}

// ---- manifest ------------------------------------------------------------

void write_episode_manifest(const std::string& path, const std::vector<Episode>& episodes,
                            std::uint64_t seed) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("write_episode_manifest: cannot open " + path);
    for (const auto& ep : episodes) {
        os << "episode_id=" << ep.episode_id << " class_id=" << ep.class_id << " support_ids=";
        for (size_t k = 0; k < ep.supports.size(); ++k)
            os << (k ? "," : "") << ep.supports[k].scene_id;
        os << " query_id=" << ep.query_scene_id << " seed=" << seed << "\n";
    }
    if (!os) throw std::runtime_error("write_episode_manifest: write failed for " + path);
}

// ---- image files ---------------------------------------------------------

namespace {

int read_pnm_int(std::istream& is) {
    // skip whitespace and '#' comments
    int c = is.get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
        if (c == '#')
            while (c != EOF && c != '\n') c = is.get();
        c = is.get();
    }
    int v = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        any = true;
        c = is.get();
    }
    if (!any) throw std::runtime_error("pnm: malformed header");
    return v;
}

unsigned char to_byte(double v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void save_image_ppm(const std::string& path, const TensorF& image) {
    if (image.rank() != 3 || image.shape[2] != 3)
        throw std::invalid_argument("save_image_ppm: [H,W,3] expected");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_image_ppm: cannot open " + path);
    os << "P6\n" << image.shape[1] << " " << image.shape[0] << "\n255\n";
    for (int y = 0; y < image.shape[0]; ++y)
        for (int x = 0; x < image.shape[1]; ++x)
            for (int c = 0; c < 3; ++c) os.put(static_cast<char>(to_byte(image.at3(y, x, c))));
    if (!os) throw std::runtime_error("save_image_ppm: write failed for " + path);
}

TensorF load_image_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_image_ppm: cannot open " + path);
    char m0 = static_cast<char>(is.get()), m1 = static_cast<char>(is.get());
    if (m0 != 'P' || m1 != '6') throw std::runtime_error("load_image_ppm: not a P6 file");
    int w = read_pnm_int(is), h = read_pnm_int(is), maxv = read_pnm_int(is);
    if (maxv != 255) throw std::runtime_error("load_image_ppm: only 8-bit images supported");
    TensorF img({h, w, 3});
    for (std::int64_t i = 0; i < img.size(); ++i) {
        int c = is.get();
        if (c == EOF) throw std::runtime_error("load_image_ppm: truncated data");
        img[i] = static_cast<float>(c) / 255.0f;
    }
    return img;
}

void save_mask_pgm(const std::string& path, const Mask& mask) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_mask_pgm: cannot open " + path);
    os << "P5\n" << mask.width() << " " << mask.height() << "\n255\n";
    for (std::int64_t i = 0; i < mask.data.size(); ++i)
        os.put(static_cast<char>(to_byte(mask.data[i])));
    if (!os) throw std::runtime_error("save_mask_pgm: write failed for " + path);
}

Mask load_mask_pgm(const std::string& path, double threshold) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_mask_pgm: cannot open " + path);
    char m0 = static_cast<char>(is.get()), m1 = static_cast<char>(is.get());
    if (m0 != 'P' || m1 != '5') throw std::runtime_error("load_mask_pgm: not a P5 file");
    int w = read_pnm_int(is), h = read_pnm_int(is), maxv = read_pnm_int(is);
    if (maxv != 255) throw std::runtime_error("load_mask_pgm: only 8-bit masks supported");
    Mask mask = Mask::zeros(h, w);
    for (std::int64_t i = 0; i < mask.data.size(); ++i) {
        int c = is.get();
        if (c == EOF) throw std::runtime_error("load_mask_pgm: truncated data");
        mask.data[i] = static_cast<double>(c) / 255.0 > threshold ? 1.0f : 0.0f;
    }
    return mask;
}

void save_map_pgm(const std::string& path, const TensorF& map) {
    if (map.rank() != 2) throw std::invalid_argument("save_map_pgm: [H,W] expected");
    float lo = map[0], hi = map[0];
    for (auto v : map.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const float span = hi - lo > 1e-12f ? hi - lo : 1.0f;
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_map_pgm: cannot open " + path);
    os << "P5\n" << map.shape[1] << " " << map.shape[0] << "\n255\n";
    for (std::int64_t i = 0; i < map.size(); ++i)
        os.put(static_cast<char>(to_byte((map[i] - lo) / span)));
    if (!os) throw std::runtime_error("save_map_pgm: write failed for " + path);
}

}  // namespace fsseg
