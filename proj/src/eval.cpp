#include "han/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

using nlohmann::json;

namespace han {

namespace {

std::uint64_t repeat_seed(std::uint64_t master, int repeat) {
    return master * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(repeat) + 1;
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

Stats stats_of(const std::vector<double>& xs) {
    Stats s;
    if (xs.empty()) return s;
    s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(var / static_cast<double>(xs.size()));
    return s;
}

std::vector<int> knn_predict(const Matrix& embeddings, const std::vector<int>& train_ids,
                             const std::vector<int>& train_labels, const std::vector<int>& test_ids,
                             int k) {
    if (k <= 0) throw ValueError("knn: k must be positive");
    if (k > static_cast<int>(train_ids.size()))
        throw ValueError("knn: k=" + std::to_string(k) + " exceeds " + std::to_string(train_ids.size()) +
                         " training points");
    if (train_ids.size() != train_labels.size()) throw DimensionError("knn: ids/labels length mismatch");

    std::vector<int> pred;
    pred.reserve(test_ids.size());
    std::vector<std::pair<double, std::size_t>> cand(train_ids.size());
    for (int q : test_ids) {
        for (std::size_t t = 0; t < train_ids.size(); ++t) {
            const double d = (embeddings.row(q) - embeddings.row(train_ids[t])).squaredNorm();
            cand[t] = {d, t};
        }
        std::sort(cand.begin(), cand.end(), [&](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first < b.first;
            return train_ids[a.second] < train_ids[b.second];
        });
        std::map<int, int> votes;
        for (int i = 0; i < k; ++i) ++votes[train_labels[cand[static_cast<std::size_t>(i)].second]];
        int best_cls = -1, best_n = -1;
        for (const auto& [cls, n] : votes)
            if (n > best_n) {  // map order means ties go to the lowest class index
                best_cls = cls;
                best_n = n;
            }
        pred.push_back(best_cls);
    }
    return pred;
}

KnnResult knn_classify(const Matrix& embeddings, const std::vector<int>& train_ids,
                       const std::vector<int>& train_labels, const std::vector<int>& test_ids,
                       const std::vector<int>& test_labels, int num_classes, int k, int repeats,
                       double train_fraction, std::uint64_t seed) {
    if (train_fraction <= 0.0 || train_fraction > 1.0)
        throw ValueError("knn: train_fraction must be in (0,1]");
    std::vector<double> macros, micros;
    std::vector<std::size_t> order(train_ids.size());
    for (int r = 0; r < repeats; ++r) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(repeat_seed(seed, r));
        std::shuffle(order.begin(), order.end(), rng);
        std::size_t take = static_cast<std::size_t>(train_fraction * static_cast<double>(train_ids.size()));
        take = std::max<std::size_t>(take, static_cast<std::size_t>(k));
        take = std::min(take, train_ids.size());
        std::vector<int> sub_ids, sub_labels;
        for (std::size_t i = 0; i < take; ++i) {
            sub_ids.push_back(train_ids[order[i]]);
            sub_labels.push_back(train_labels[order[i]]);
        }
        const auto pred = knn_predict(embeddings, sub_ids, sub_labels, test_ids, k);
        macros.push_back(macro_f1(pred, test_labels, num_classes));
        micros.push_back(micro_f1(pred, test_labels, num_classes));
    }
    return {stats_of(macros), stats_of(micros)};
}

std::vector<int> kmeans_cluster(const Matrix& points, int k, std::uint64_t seed, int max_iters) {
    const int n = static_cast<int>(points.rows());
    if (k <= 0 || k > n) throw ValueError("kmeans: k=" + std::to_string(k) + " for " + std::to_string(n) + " points");

    std::mt19937_64 rng(seed);
    std::vector<int> pool(static_cast<std::size_t>(n));
    std::iota(pool.begin(), pool.end(), 0);
    std::shuffle(pool.begin(), pool.end(), rng);
    Matrix centroids(k, points.cols());
    for (int c = 0; c < k; ++c) centroids.row(c) = points.row(pool[static_cast<std::size_t>(c)]);

    std::vector<int> assign(static_cast<std::size_t>(n), -1);
    for (int iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d = (points.row(i) - centroids.row(0)).squaredNorm();
            for (int c = 1; c < k; ++c) {
                const double d = (points.row(i) - centroids.row(c)).squaredNorm();
                if (d < best_d) {
                    best = c;
                    best_d = d;
                }
            }
            if (assign[static_cast<std::size_t>(i)] != best) {
                assign[static_cast<std::size_t>(i)] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;

        Matrix sums = Matrix::Zero(k, points.cols());
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (int i = 0; i < n; ++i) {
            sums.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
            ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                centroids.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
            } else {
                // Re-seed an emptied cluster at the point farthest from its centroid.
                int far = 0;
                double far_d = -1.0;
                for (int i = 0; i < n; ++i) {
                    const double d = (points.row(i) - centroids.row(assign[static_cast<std::size_t>(i)])).squaredNorm();
                    if (d > far_d) {
                        far_d = d;
                        far = i;
                    }
                }
                centroids.row(c) = points.row(far);
            }
        }
    }
    return assign;
}

double kmeans_inertia(const Matrix& points, const std::vector<int>& assign, int k) {
    Matrix sums = Matrix::Zero(k, points.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        sums.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
        ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    double total = 0.0;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const int c = assign[static_cast<std::size_t>(i)];
        if (counts[static_cast<std::size_t>(c)] == 0) continue;
        total += (points.row(i) - sums.row(c) / counts[static_cast<std::size_t>(c)]).squaredNorm();
    }
    return total;
}

namespace {

// Contingency table between two labelings, plus marginals.
struct Contingency {
    std::map<std::pair<int, int>, std::int64_t> cells;
    std::map<int, std::int64_t> a_margin, b_margin;
    std::int64_t n = 0;
};

Contingency contingency(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size())
        throw DimensionError("label arrays differ in length: " + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()));
    Contingency c;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++c.cells[{a[i], b[i]}];
        ++c.a_margin[a[i]];
        ++c.b_margin[b[i]];
        ++c.n;
    }
    return c;
}

double entropy(const std::map<int, std::int64_t>& margin, std::int64_t n) {
    double h = 0.0;
    for (const auto& [cls, cnt] : margin) {
        const double p = static_cast<double>(cnt) / static_cast<double>(n);
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

double choose2(std::int64_t x) { return 0.5 * static_cast<double>(x) * static_cast<double>(x - 1); }

}  // namespace

double nmi(const std::vector<int>& pred, const std::vector<int>& truth) {
    const Contingency c = contingency(pred, truth);
    double mi = 0.0;
    for (const auto& [cell, cnt] : c.cells) {
        const double pij = static_cast<double>(cnt) / static_cast<double>(c.n);
        const double pi = static_cast<double>(c.a_margin.at(cell.first)) / static_cast<double>(c.n);
        const double pj = static_cast<double>(c.b_margin.at(cell.second)) / static_cast<double>(c.n);
        mi += pij * std::log(pij / (pi * pj));
    }
    const double denom = 0.5 * (entropy(c.a_margin, c.n) + entropy(c.b_margin, c.n));
    if (denom == 0.0) return mi == 0.0 ? 0.0 : 1.0;
    return mi / denom;
}

double ari(const std::vector<int>& pred, const std::vector<int>& truth) {
    const Contingency c = contingency(pred, truth);
    double sum_cells = 0.0, sum_a = 0.0, sum_b = 0.0;
    for (const auto& [cell, cnt] : c.cells) sum_cells += choose2(cnt);
    for (const auto& [cls, cnt] : c.a_margin) sum_a += choose2(cnt);
    for (const auto& [cls, cnt] : c.b_margin) sum_b += choose2(cnt);
    const double total = choose2(c.n);
    const double expected = sum_a * sum_b / total;
    const double max_index = 0.5 * (sum_a + sum_b);
    if (max_index == expected) return 0.0;
    return (sum_cells - expected) / (max_index - expected);
}

double macro_f1(const std::vector<int>& pred, const std::vector<int>& truth, int num_classes) {
    if (pred.size() != truth.size()) throw DimensionError("f1: length mismatch");
    double sum = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        std::int64_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (pred[i] == c && truth[i] == c) ++tp;
            if (pred[i] == c && truth[i] != c) ++fp;
            if (pred[i] != c && truth[i] == c) ++fn;
        }
        const double denom = static_cast<double>(2 * tp + fp + fn);
        sum += denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
    }
    return sum / static_cast<double>(num_classes);
}

double micro_f1(const std::vector<int>& pred, const std::vector<int>& truth, int num_classes) {
    if (pred.size() != truth.size()) throw DimensionError("f1: length mismatch");
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (int c = 0; c < num_classes; ++c)
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (pred[i] == c && truth[i] == c) ++tp;
            if (pred[i] == c && truth[i] != c) ++fp;
            if (pred[i] != c && truth[i] == c) ++fn;
        }
    const double denom = static_cast<double>(2 * tp + fp + fn);
    return denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
}

EvalReport evaluate(const HeteroGraph& g, const std::vector<NeighborIndex>& indices,
                    const HanParams& params, const HanConfig& cfg, const Splits& splits,
                    const EvalOptions& opts) {
    Tape tape;
    Forward fw = forward(tape, g, indices, params, cfg, Mode::eval);
    const Matrix& z = fw.z.value();

    auto labels_for = [&](const std::vector<int>& ids) {
        std::vector<int> ys;
        for (int id : ids) {
            const auto it = g.labels.find(id);
            if (it == g.labels.end()) throw ValueError("evaluate: node " + std::to_string(id) + " has no label");
            ys.push_back(it->second);
        }
        return ys;
    };

    EvalReport rep;
    const auto train_labels = labels_for(splits.train);
    const auto test_labels = labels_for(splits.test);
    const KnnResult knn = knn_classify(z, splits.train, train_labels, splits.test, test_labels,
                                       g.num_classes, opts.knn_k, opts.repeats, opts.train_fraction,
                                       opts.seed);
    rep.macro_f1 = knn.macro_f1;
    rep.micro_f1 = knn.micro_f1;

    std::vector<int> labeled_ids;
    std::vector<int> labeled_truth;
    for (const auto& [id, cls] : g.labels) {
        labeled_ids.push_back(id);
        labeled_truth.push_back(cls);
    }
    Matrix pts(static_cast<Eigen::Index>(labeled_ids.size()), z.cols());
    for (std::size_t i = 0; i < labeled_ids.size(); ++i)
        pts.row(static_cast<Eigen::Index>(i)) = z.row(labeled_ids[i]);
    std::vector<double> nmis, aris;
    for (int r = 0; r < opts.repeats; ++r) {
        const auto assign = kmeans_cluster(pts, g.num_classes, repeat_seed(opts.seed, r));
        nmis.push_back(nmi(assign, labeled_truth));
        aris.push_back(ari(assign, labeled_truth));
    }
    rep.nmi = stats_of(nmis);
    rep.ari = stats_of(aris);

    rep.meta_paths = cfg.meta_paths;
    for (Eigen::Index p = 0; p < fw.beta.cols(); ++p) {
        rep.beta.push_back(fw.beta.value()(0, p));
        rep.w.push_back(fw.w.value()(0, p));
    }
    return rep;
}

AttentionReport inspect_attention(const Forward& fw, const std::vector<NeighborIndex>& indices,
                                  const HanConfig& cfg, int node_id) {
    AttentionReport rep;
    const std::size_t num_paths = indices.size();
    std::vector<std::size_t> order(num_paths);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return fw.beta.value()(0, static_cast<Eigen::Index>(a)) > fw.beta.value()(0, static_cast<Eigen::Index>(b));
    });

    for (std::size_t o : order) {
        rep.meta_paths.push_back(cfg.meta_paths[o]);
        rep.beta.push_back(fw.beta.value()(0, static_cast<Eigen::Index>(o)));
        rep.w.push_back(fw.w.value()(0, static_cast<Eigen::Index>(o)));

        const Csr& csr = indices[o].csr;
        if (node_id < 0 || node_id >= csr.rows()) throw ValueError("inspect: node id " + std::to_string(node_id) + " out of range");
        NodeAttention na;
        na.meta_path = cfg.meta_paths[o];
        const int lo = csr.offsets[static_cast<std::size_t>(node_id)];
        const int hi = csr.offsets[static_cast<std::size_t>(node_id) + 1];
        for (int e = lo; e < hi; ++e) {
            AttentionEntry entry;
            entry.neighbor = csr.targets[static_cast<std::size_t>(e)];
            double sum = 0.0;
            for (int k = 0; k < cfg.heads; ++k) {
                const double a = fw.alpha[o][static_cast<std::size_t>(k)].value()(e, 0);
                entry.per_head.push_back(a);
                sum += a;
            }
            entry.head_avg = sum / static_cast<double>(cfg.heads);
            na.entries.push_back(std::move(entry));
        }
        std::stable_sort(na.entries.begin(), na.entries.end(),
                         [](const AttentionEntry& a, const AttentionEntry& b) { return a.head_avg > b.head_avg; });
        rep.nodes.push_back(std::move(na));
    }
    return rep;
}

void write_report_json(const std::string& path, const EvalReport& report) {
    json j;
    j["classification"] = {{"macro_f1", {{"mean", report.macro_f1.mean}, {"stddev", report.macro_f1.stddev}}},
                           {"micro_f1", {{"mean", report.micro_f1.mean}, {"stddev", report.micro_f1.stddev}}}};
    j["clustering"] = {{"nmi", {{"mean", report.nmi.mean}, {"stddev", report.nmi.stddev}}},
                       {"ari", {{"mean", report.ari.mean}, {"stddev", report.ari.stddev}}}};
    json paths = json::array();
    for (std::size_t p = 0; p < report.meta_paths.size(); ++p)
        paths.push_back({{"meta_path", report.meta_paths[p]}, {"beta", report.beta[p]}, {"w", report.w[p]}});
    j["semantic_attention"] = std::move(paths);
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write " + path);
    out << j.dump(2) << "\n";
}

void write_betas_csv(const std::string& path, const EvalReport& report) {
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write " + path);
    out << "meta_path,beta,w\n";
    for (std::size_t p = 0; p < report.meta_paths.size(); ++p)
        out << report.meta_paths[p] << "," << fmt_double(report.beta[p]) << "," << fmt_double(report.w[p]) << "\n";
}

void write_embeddings_tsv(const std::string& path, const HeteroGraph& g, const Matrix& z) {
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write " + path);
    const auto& keys = g.node_keys[static_cast<std::size_t>(g.target_type)];
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        out << keys[static_cast<std::size_t>(i)];
        for (Eigen::Index k = 0; k < z.cols(); ++k) out << "\t" << fmt_double(z(i, k));
        out << "\n";
    }
}

void write_attention_csv(const std::string& path, const AttentionReport& report, const HeteroGraph& g) {
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write " + path);
    out << "meta_path,neighbor,alpha_avg";
    if (!report.nodes.empty() && !report.nodes.front().entries.empty()) {
        for (std::size_t k = 0; k < report.nodes.front().entries.front().per_head.size(); ++k)
            out << ",alpha_h" << k;
    }
    out << "\n";
    const auto& keys = g.node_keys[static_cast<std::size_t>(g.target_type)];
    for (const auto& na : report.nodes)
        for (const auto& e : na.entries) {
            out << na.meta_path << "," << keys[static_cast<std::size_t>(e.neighbor)] << "," << fmt_double(e.head_avg);
            for (double a : e.per_head) out << "," << fmt_double(a);
            out << "\n";
        }
}

}  // namespace han
