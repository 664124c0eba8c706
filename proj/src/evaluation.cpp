#include "fsseg/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <memory>
#include <thread>

namespace fsseg {

void IoUAccumulator::add(const Mask& pred, const Mask& gt, int class_id) {
    if (pred.data.shape != gt.data.shape)
        throw std::invalid_argument("IoUAccumulator::add: extent mismatch");
    pred.validate();
    gt.validate();
    std::int64_t inter = 0, uni = 0, bg_inter = 0, bg_uni = 0;
    for (std::int64_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] > 0, g = gt.data[i] > 0;
        inter += p && g;
        uni += p || g;
        bg_inter += !p && !g;
        bg_uni += !p || !g;
    }
    auto& c = per_class_[class_id];
    c.inter += inter;
    c.uni += uni;
    fg_.inter += inter;
    fg_.uni += uni;
    bg_.inter += bg_inter;
    bg_.uni += bg_uni;
    ++episodes_;
}

void IoUAccumulator::merge(const IoUAccumulator& other) {
    for (const auto& [cid, c] : other.per_class_) {
        auto& mine = per_class_[cid];
        mine.inter += c.inter;
        mine.uni += c.uni;
    }
    fg_.inter += other.fg_.inter;
    fg_.uni += other.fg_.uni;
    bg_.inter += other.bg_.inter;
    bg_.uni += other.bg_.uni;
    episodes_ += other.episodes_;
}

std::vector<int> IoUAccumulator::classes() const {
    std::vector<int> out;
    for (const auto& [cid, c] : per_class_) out.push_back(cid);
    return out;
}

double IoUAccumulator::class_iou(int class_id) const {
    auto it = per_class_.find(class_id);
    if (it == per_class_.end())
        throw std::invalid_argument("IoUAccumulator: class never accumulated");
    const Counts& c = it->second;
    return c.uni == 0 ? 1.0 : static_cast<double>(c.inter) / static_cast<double>(c.uni);
}

double IoUAccumulator::miou() const {
    if (per_class_.empty()) throw std::logic_error("IoUAccumulator: empty");
    double sum = 0;
    for (const auto& [cid, c] : per_class_)
        sum += c.uni == 0 ? 1.0 : static_cast<double>(c.inter) / static_cast<double>(c.uni);
    return sum / static_cast<double>(per_class_.size());
}

double IoUAccumulator::fb_iou() const {
    if (episodes_ == 0) throw std::logic_error("IoUAccumulator: empty");
    double f = fg_.uni == 0 ? 1.0 : static_cast<double>(fg_.inter) / static_cast<double>(fg_.uni);
    double b = bg_.uni == 0 ? 1.0 : static_cast<double>(bg_.inter) / static_cast<double>(bg_.uni);
    return 0.5 * (f + b);
}

namespace {

/// Episode i under the paired design: its sampling stream depends only on
/// (seed, i), never on study transforms or other episodes.
Episode paired_episode(const SplitSpec& split, const EvalOptions& opt, int i) {
    RngStream ep_rng = RngStream(opt.seed).fork("episode").fork(static_cast<std::uint64_t>(i));
    Episode ep = sample_episode(split, opt.k_shot, opt.phase, ep_rng, opt.scene);
    ep.episode_id = i;
    if (opt.derive_labels) {
        RngStream lab = RngStream(opt.seed).fork("label").fork(static_cast<std::uint64_t>(i));
        for (auto& s : ep.supports) s.label = derive_weak_label(s.label, opt.label_kind, lab);
    }
    return ep;
}

SupportMaskHook<real> erosion_hook(const EvalOptions& opt, int i,
                                   const std::shared_ptr<RngStream>& er) {
    if (!opt.erode) return {};
    (void)i;
    double ratio = opt.keep_ratio;
    return [ratio, er](const Tensor<real>& m, int) {
        Mask at_feat(TensorF(m), MaskKind::binary);
        return erode_support_foreground(at_feat, ratio, *er).data;
    };
}

}  // namespace

EvalResult evaluate_split(const ModelParams<real>& mp, const SplitSpec& split,
                          const EvalOptions& opt) {
    if (opt.episodes <= 0) throw std::invalid_argument("evaluate_split: episodes must be positive");
    const auto t0 = std::chrono::steady_clock::now();

    const int workers = std::max(1, opt.workers);
    std::vector<IoUAccumulator> accs(static_cast<size_t>(workers));
    std::vector<int> fallbacks(static_cast<size_t>(workers), 0);

    auto run_range = [&](int w, int lo, int hi) {
        for (int i = lo; i < hi; ++i) {
            Episode ep = paired_episode(split, opt, i);
            auto er = std::make_shared<RngStream>(
                RngStream(opt.seed).fork("erode").fork(static_cast<std::uint64_t>(i)));
            auto inf = infer_episode(mp, ep, erosion_hook(opt, i, er));
            accs[static_cast<size_t>(w)].add(inf.predicted, ep.query_mask, ep.class_id);
            fallbacks[static_cast<size_t>(w)] += inf.seed.fallback_used ? 1 : 0;
        }
    };

    if (workers == 1) {
        run_range(0, 0, opt.episodes);
    } else {
        std::vector<std::thread> pool;
        const int per = (opt.episodes + workers - 1) / workers;
        for (int w = 0; w < workers; ++w) {
            int lo = w * per, hi = std::min(opt.episodes, lo + per);
            if (lo >= hi) break;
            pool.emplace_back(run_range, w, lo, hi);
        }
        for (auto& t : pool) t.join();
    }

    EvalResult r;
    for (int w = 0; w < workers; ++w) {
        r.acc.merge(accs[static_cast<size_t>(w)]);
        r.fallback_episodes += fallbacks[static_cast<size_t>(w)];
    }
    r.miou_percent = 100.0 * r.acc.miou();
    r.fb_iou_percent = 100.0 * r.acc.fb_iou();
    r.episodes = opt.episodes;
    r.seed = opt.seed;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

std::string EvalResult::table() const {
    std::ostringstream os;
    char line[128];
    os << "class                     iou%\n";
    for (int cid : acc.classes()) {
        std::snprintf(line, sizeof(line), "%-24d %6.2f\n", cid, 100.0 * acc.class_iou(cid));
        os << line;
    }
    std::snprintf(line, sizeof(line),
                  "mIoU %.2f  FB-IoU %.2f  episodes %d  fallback %d  seed %llu\n", miou_percent,
                  fb_iou_percent, episodes, fallback_episodes,
                  static_cast<unsigned long long>(seed));
    os << line;
    return os.str();
}

KvMap EvalResult::to_kv() const {
    KvMap kv;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", miou_percent);
    kv["miou_percent"] = buf;
    std::snprintf(buf, sizeof(buf), "%.17g", fb_iou_percent);
    kv["fb_iou_percent"] = buf;
    kv["episodes"] = std::to_string(episodes);
    kv["fallback_episodes"] = std::to_string(fallback_episodes);
    kv["seed"] = std::to_string(seed);
    for (int cid : acc.classes()) {
        std::snprintf(buf, sizeof(buf), "%.17g", 100.0 * acc.class_iou(cid));
        kv["class_iou_" + std::to_string(cid)] = buf;
    }
    return kv;
}

std::string StudyTable::table(const std::string& key_header) const {
    std::ostringstream os;
    char line[128];
    os << key_header << "      mIoU%   FB-IoU%\n";
    for (const auto& row : rows) {
        if (key_header == "ratio")
            std::snprintf(line, sizeof(line), "%-10.2f %7.2f %8.2f\n", row.ratio,
                          row.miou_percent, row.fb_iou_percent);
        else
            std::snprintf(line, sizeof(line), "%-10s %7.2f %8.2f\n",
                          label_kind_name(row.kind).c_str(), row.miou_percent,
                          row.fb_iou_percent);
        os << line;
    }
    std::snprintf(line, sizeof(line), "episodes %d  seed %llu\n", episodes,
                  static_cast<unsigned long long>(seed));
    os << line;
    return os.str();
}

StudyTable run_erosion_study(const ModelParams<real>& mp, const SplitSpec& split,
                             const std::vector<double>& ratios, const EvalOptions& base) {
    if (ratios.empty()) throw std::invalid_argument("run_erosion_study: no ratios");
    StudyTable t;
    t.seed = base.seed;
    t.episodes = base.episodes;
    for (double ratio : ratios) {
        EvalOptions opt = base;
        opt.erode = true;
        opt.keep_ratio = ratio;
        EvalResult r = evaluate_split(mp, split, opt);
        t.rows.push_back({ratio, WeakLabelKind::mask, r.miou_percent, r.fb_iou_percent});
    }
    return t;
}

StudyTable run_weak_label_study(const ModelParams<real>& mp, const SplitSpec& split,
                                const std::vector<WeakLabelKind>& kinds,
                                const EvalOptions& base) {
    if (kinds.empty()) throw std::invalid_argument("run_weak_label_study: no kinds");
    StudyTable t;
    t.seed = base.seed;
    t.episodes = base.episodes;
    for (WeakLabelKind kind : kinds) {
        EvalOptions opt = base;
        opt.derive_labels = true;
        opt.label_kind = kind;
        EvalResult r = evaluate_split(mp, split, opt);
        t.rows.push_back({0.0, kind, r.miou_percent, r.fb_iou_percent});
    }
    return t;
}

// ---- feature similarity ---------------------------------------------------

void similarity_stats(const Tensor<real>& f_q, const Tensor<real>& mask_q,
                      const Tensor<real>& f_s, const Tensor<real>& mask_s, int pairs_per_object,
                      RngStream& rng, SimilarityReport::ClassStat& out) {
    if (f_q.shape.size() != 3 || f_s.shape.size() != 3)
        throw std::invalid_argument("similarity_stats: [h,w,c] features expected");
    const int C = f_q.shape[2];
    auto cells = [](const Tensor<real>& m) {
        std::vector<int> idx;
        for (std::int64_t i = 0; i < m.size(); ++i)
            if (m[i] > 0) idx.push_back(static_cast<int>(i));
        return idx;
    };
    const std::vector<int> q_cells = cells(mask_q), s_cells = cells(mask_s);
    auto vec = [C](const Tensor<real>& f, int cell) { return f.data.data() + int64_t(cell) * C; };

    if (q_cells.size() >= 2) {
        const int n = static_cast<int>(q_cells.size());
        const std::int64_t all = static_cast<std::int64_t>(n) * (n - 1) / 2;
        if (all <= pairs_per_object) {
            for (int a = 0; a < n; ++a)
                for (int b = a + 1; b < n; ++b) {
                    out.intra_sum += cosine(vec(f_q, q_cells[a]), vec(f_q, q_cells[b]), C);
                    ++out.intra_pairs;
                }
        } else {
            for (int p = 0; p < pairs_per_object; ++p) {
                int a = static_cast<int>(rng.next_int(0, n - 1));
                int b = static_cast<int>(rng.next_int(0, n - 2));
                if (b >= a) ++b;  // distinct positions
                out.intra_sum += cosine(vec(f_q, q_cells[a]), vec(f_q, q_cells[b]), C);
                ++out.intra_pairs;
            }
        }
    }
    if (!q_cells.empty() && !s_cells.empty()) {
        const std::int64_t all =
            static_cast<std::int64_t>(q_cells.size()) * static_cast<std::int64_t>(s_cells.size());
        if (all <= pairs_per_object) {
            for (int a : s_cells)
                for (int b : q_cells) {
                    out.inter_sum += cosine(vec(f_s, a), vec(f_q, b), C);
                    ++out.inter_pairs;
                }
        } else {
            for (int p = 0; p < pairs_per_object; ++p) {
                int a = s_cells[static_cast<size_t>(
                    rng.next_int(0, static_cast<std::int64_t>(s_cells.size()) - 1))];
                int b = q_cells[static_cast<size_t>(
                    rng.next_int(0, static_cast<std::int64_t>(q_cells.size()) - 1))];
                out.inter_sum += cosine(vec(f_s, a), vec(f_q, b), C);
                ++out.inter_pairs;
            }
        }
    }
}

SimilarityReport measure_similarity(const ModelParams<real>& mp, const SplitSpec& split,
                                    int episodes, int pairs_per_object, const EvalOptions& base) {
    if (episodes <= 0 || pairs_per_object <= 0)
        throw std::invalid_argument("measure_similarity: positive counts expected");
    SimilarityReport rep;
    rep.episodes = episodes;
    rep.seed = base.seed;
    for (int i = 0; i < episodes; ++i) {
        RngStream ep_rng = RngStream(base.seed).fork("sim").fork(static_cast<std::uint64_t>(i));
        EvalOptions one = base;
        one.k_shot = 1;
        Episode ep = sample_episode(split, 1, base.phase, ep_rng, base.scene);

        Tensor<real> f_q = extract_features(ep.query_image.cast<real>(), mp.encoder);
        Tensor<real> f_s = extract_features(ep.supports[0].image.cast<real>(), mp.encoder);
        Tensor<real> m_q = feature_mask<real>(ep.query_mask, f_q.shape[0], f_q.shape[1]);
        Tensor<real> m_s =
            feature_mask<real>(ep.supports[0].label, f_s.shape[0], f_s.shape[1]);

        RngStream pair_rng =
            RngStream(base.seed).fork("simpairs").fork(static_cast<std::uint64_t>(i));
        similarity_stats(f_q, m_q, f_s, m_s, pairs_per_object, pair_rng,
                         rep.per_class[ep.class_id]);
    }
    return rep;
}

std::string SimilarityReport::table(const std::string& dataset) const {
    std::ostringstream os;
    char line[160];
    os << "class                       intra    inter    intra_pairs inter_pairs\n";
    for (const auto& [cid, st] : per_class) {
        std::snprintf(line, sizeof(line), "%-26s %7.4f %8.4f %11lld %11lld\n",
                      class_name(dataset, cid).c_str(), st.mean_intra(), st.mean_inter(),
                      static_cast<long long>(st.intra_pairs),
                      static_cast<long long>(st.inter_pairs));
        os << line;
    }
    std::snprintf(line, sizeof(line), "episodes %d  seed %llu\n", episodes,
                  static_cast<unsigned long long>(seed));
    os << line;
    return os.str();
}

}  // namespace fsseg
