#include "han/graph.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace han {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

json read_json_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw LoadError("missing file: " + p.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw LoadError(p.string() + ": " + e.what());
    }
    return j;
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Row-wise merge of sorted duplicate-free lists.
std::vector<int> merge_rows(const std::vector<int>& sources, const std::vector<std::vector<int>>& adj) {
    std::vector<int> out;
    for (int s : sources) out.insert(out.end(), adj[static_cast<std::size_t>(s)].begin(), adj[static_cast<std::size_t>(s)].end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

}  // namespace

int HeteroGraph::type_index(const std::string& name) const {
    for (std::size_t i = 0; i < node_types.size(); ++i)
        if (node_types[i] == name) return static_cast<int>(i);
    throw ValueError("unknown node type: " + name);
}

int HeteroGraph::edge_type_index(const std::string& name) const {
    for (std::size_t i = 0; i < edge_types.size(); ++i)
        if (edge_types[i].name == name) return static_cast<int>(i);
    throw ValueError("unknown edge type: " + name);
}

void HeteroGraph::validate() const {
    if (node_types.size() + edge_types.size() <= 2)
        throw LoadError("schema must have |node types| + |edge types| > 2");
    if (target_type < 0 || target_type >= static_cast<int>(node_types.size()))
        throw LoadError("target type index out of range");
    if (num_classes <= 0) throw LoadError("num_classes must be positive");
    for (std::size_t e = 0; e < edge_types.size(); ++e) {
        const int ns = node_count(type_index(edge_types[e].src_type));
        const int nd = node_count(type_index(edge_types[e].dst_type));
        for (const auto& [s, d] : edges[e]) {
            if (s < 0 || s >= ns || d < 0 || d >= nd)
                throw LoadError("edge type " + edge_types[e].name + ": endpoint id out of range");
        }
    }
    for (std::size_t t = 0; t < node_types.size(); ++t) {
        if (features[t].rows() != node_count(static_cast<int>(t)))
            throw LoadError("features for type " + node_types[t] + ": " + std::to_string(features[t].rows()) +
                            " rows for " + std::to_string(node_count(static_cast<int>(t))) + " nodes");
    }
    for (const auto& [id, cls] : labels) {
        if (id < 0 || id >= target_count())
            throw LoadError("label references unknown target node id " + std::to_string(id));
        if (cls < 0 || cls >= num_classes)
            throw LoadError("label class " + std::to_string(cls) + " out of range");
    }
}

std::vector<int> NeighborIndex::neighbors_of(int nd) const {
    return std::vector<int>(csr.targets.begin() + csr.offsets[static_cast<std::size_t>(nd)],
                            csr.targets.begin() + csr.offsets[static_cast<std::size_t>(nd) + 1]);
}

HeteroGraph load_graph(const std::string& dir) {
    const fs::path root(dir);
    const json schema = read_json_file(root / "schema.json");

    HeteroGraph g;
    std::vector<int> feat_dims;
    for (const auto& nt : schema.at("node_types")) {
        g.node_types.push_back(nt.at("name").get<std::string>());
        feat_dims.push_back(nt.at("feature_dim").get<int>());
    }
    for (const auto& et : schema.at("edge_types")) {
        g.edge_types.push_back({et.at("name").get<std::string>(), et.at("src").get<std::string>(),
                                et.at("dst").get<std::string>()});
    }
    g.target_type = g.type_index(schema.at("target_type").get<std::string>());
    g.num_classes = schema.at("num_classes").get<int>();

    for (std::size_t t = 0; t < g.node_types.size(); ++t) {
        const fs::path p = root / ("nodes_" + g.node_types[t] + ".tsv");
        std::ifstream in(p);
        if (!in) throw LoadError("missing file: " + p.string());
        g.node_keys.emplace_back();
        g.key_to_id.emplace_back();
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            if (!g.key_to_id[t].emplace(line, static_cast<int>(g.node_keys[t].size())).second)
                throw LoadError(p.string() + ":" + std::to_string(lineno) + ": duplicate key '" + line + "'");
            g.node_keys[t].push_back(line);
        }
    }

    for (const auto& et : g.edge_types) {
        const fs::path p = root / ("edges_" + et.name + ".tsv");
        std::ifstream in(p);
        if (!in) throw LoadError("missing file: " + p.string());
        const auto& src_map = g.key_to_id[static_cast<std::size_t>(g.type_index(et.src_type))];
        const auto& dst_map = g.key_to_id[static_cast<std::size_t>(g.type_index(et.dst_type))];
        std::vector<std::pair<int, int>> pairs;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            const auto cols = split(line, '\t');
            if (cols.size() != 2 || cols[0].empty() || cols[1].empty())
                throw LoadError(p.string() + ":" + std::to_string(lineno) + ": expected 'src<TAB>dst', got '" + line + "'");
            const auto s = src_map.find(cols[0]);
            const auto d = dst_map.find(cols[1]);
            if (s == src_map.end())
                throw LoadError(p.string() + ":" + std::to_string(lineno) + ": unknown " + et.src_type + " key '" + cols[0] + "'");
            if (d == dst_map.end())
                throw LoadError(p.string() + ":" + std::to_string(lineno) + ": unknown " + et.dst_type + " key '" + cols[1] + "'");
            pairs.emplace_back(s->second, d->second);
        }
        g.edges.push_back(std::move(pairs));
    }

    for (std::size_t t = 0; t < g.node_types.size(); ++t) {
        const fs::path p = root / ("features_" + g.node_types[t] + ".tsv");
        std::ifstream in(p);
        if (!in) throw LoadError("missing file: " + p.string());
        Matrix f = Matrix::Zero(g.node_count(static_cast<int>(t)), feat_dims[t]);
        std::vector<bool> seen(static_cast<std::size_t>(f.rows()), false);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            const auto cols = split(line, '\t');
            if (cols.size() != 2)
                throw LoadError(p.string() + ":" + std::to_string(lineno) + ": expected 'key<TAB>v1,v2,...'");
            const auto it = g.key_to_id[t].find(cols[0]);
            if (it == g.key_to_id[t].end())
                throw LoadError(p.string() + ":" + std::to_string(lineno) + ": unknown key '" + cols[0] + "'");
            const auto vals = split(cols[1], ',');
            if (static_cast<int>(vals.size()) != feat_dims[t])
                throw LoadError(p.string() + ":" + std::to_string(lineno) + ": expected " +
                                std::to_string(feat_dims[t]) + " values, got " + std::to_string(vals.size()));
            for (std::size_t k = 0; k < vals.size(); ++k) {
                try {
                    f(it->second, static_cast<Eigen::Index>(k)) = std::stod(vals[k]);
                } catch (const std::exception&) {
                    throw LoadError(p.string() + ":" + std::to_string(lineno) + ": bad number '" + vals[k] + "'");
                }
            }
            seen[static_cast<std::size_t>(it->second)] = true;
        }
        for (std::size_t i = 0; i < seen.size(); ++i)
            if (!seen[i]) throw LoadError(p.string() + ": no feature row for key '" + g.node_keys[t][i] + "'");
        g.features.push_back(std::move(f));
    }

    const fs::path lp = root / "labels.tsv";
    std::ifstream in(lp);
    if (!in) throw LoadError("missing file: " + lp.string());
    const auto& tgt_map = g.key_to_id[static_cast<std::size_t>(g.target_type)];
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cols = split(line, '\t');
        if (cols.size() != 2)
            throw LoadError(lp.string() + ":" + std::to_string(lineno) + ": expected 'key<TAB>class'");
        const auto it = tgt_map.find(cols[0]);
        if (it == tgt_map.end())
            throw LoadError(lp.string() + ":" + std::to_string(lineno) + ": unknown target key '" + cols[0] + "'");
        try {
            g.labels[it->second] = std::stoi(cols[1]);
        } catch (const std::exception&) {
            throw LoadError(lp.string() + ":" + std::to_string(lineno) + ": bad class '" + cols[1] + "'");
        }
    }

    g.validate();
    return g;
}

Splits load_splits(const std::string& dir, const HeteroGraph& g) {
    const json j = read_json_file(fs::path(dir) / "splits.json");
    const auto& tgt_map = g.key_to_id[static_cast<std::size_t>(g.target_type)];
    auto to_ids = [&](const char* field) {
        std::vector<int> ids;
        for (const auto& k : j.at(field)) {
            const auto it = tgt_map.find(k.get<std::string>());
            if (it == tgt_map.end()) throw LoadError("splits.json: unknown target key '" + k.get<std::string>() + "'");
            ids.push_back(it->second);
        }
        return ids;
    };
    Splits s{to_ids("train"), to_ids("val"), to_ids("test")};
    std::vector<int> all;
    for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(all.end(), part->begin(), part->end());
    std::sort(all.begin(), all.end());
    if (std::adjacent_find(all.begin(), all.end()) != all.end())
        throw LoadError("splits.json: train/val/test overlap");
    return s;
}

void save_graph(const std::string& dir, const HeteroGraph& g, const Splits& splits) {
    const fs::path root(dir);
    fs::create_directories(root);

    json schema;
    for (std::size_t t = 0; t < g.node_types.size(); ++t)
        schema["node_types"].push_back({{"name", g.node_types[t]}, {"feature_dim", g.features[t].cols()}});
    for (const auto& et : g.edge_types)
        schema["edge_types"].push_back({{"name", et.name}, {"src", et.src_type}, {"dst", et.dst_type}});
    schema["target_type"] = g.node_types[static_cast<std::size_t>(g.target_type)];
    schema["num_classes"] = g.num_classes;
    std::ofstream(root / "schema.json") << schema.dump(2) << "\n";

    for (std::size_t t = 0; t < g.node_types.size(); ++t) {
        std::ofstream nf(root / ("nodes_" + g.node_types[t] + ".tsv"));
        for (const auto& k : g.node_keys[t]) nf << k << "\n";
        std::ofstream ff(root / ("features_" + g.node_types[t] + ".tsv"));
        for (int i = 0; i < g.node_count(static_cast<int>(t)); ++i) {
            ff << g.node_keys[t][static_cast<std::size_t>(i)] << "\t";
            for (Eigen::Index k = 0; k < g.features[t].cols(); ++k)
                ff << (k ? "," : "") << fmt_double(g.features[t](i, k));
            ff << "\n";
        }
    }
    for (std::size_t e = 0; e < g.edge_types.size(); ++e) {
        std::ofstream ef(root / ("edges_" + g.edge_types[e].name + ".tsv"));
        const auto& src_keys = g.node_keys[static_cast<std::size_t>(g.type_index(g.edge_types[e].src_type))];
        const auto& dst_keys = g.node_keys[static_cast<std::size_t>(g.type_index(g.edge_types[e].dst_type))];
        for (const auto& [s, d] : g.edges[e])
            ef << src_keys[static_cast<std::size_t>(s)] << "\t" << dst_keys[static_cast<std::size_t>(d)] << "\n";
    }
    std::ofstream lf(root / "labels.tsv");
    const auto& tgt_keys = g.node_keys[static_cast<std::size_t>(g.target_type)];
    for (const auto& [id, cls] : g.labels)
        lf << tgt_keys[static_cast<std::size_t>(id)] << "\t" << cls << "\n";

    json sj;
    auto to_keys = [&](const std::vector<int>& ids) {
        json arr = json::array();
        for (int id : ids) arr.push_back(tgt_keys[static_cast<std::size_t>(id)]);
        return arr;
    };
    sj["train"] = to_keys(splits.train);
    sj["val"] = to_keys(splits.val);
    sj["test"] = to_keys(splits.test);
    std::ofstream(root / "splits.json") << sj.dump(2) << "\n";
}

MetaPath compile_meta_path(const std::string& spec, const HeteroGraph& g) {
    const auto names = split(spec, '-');
    if (names.size() < 2) throw ValueError("meta-path '" + spec + "' needs at least two node types");
    std::vector<int> types;
    for (const auto& n : names) types.push_back(g.type_index(n));
    if (types.front() != types.back())
        throw ValueError("meta-path '" + spec + "' has asymmetric endpoints (" + names.front() + " vs " +
                         names.back() + ")");
    MetaPath mp;
    mp.name = spec;
    mp.endpoint_type = types.front();
    for (std::size_t h = 0; h + 1 < types.size(); ++h) {
        MetaPathStep step;
        for (std::size_t e = 0; e < g.edge_types.size(); ++e) {
            const int s = g.type_index(g.edge_types[e].src_type);
            const int d = g.type_index(g.edge_types[e].dst_type);
            if (s == types[h] && d == types[h + 1]) {
                step = {static_cast<int>(e), false};
                break;
            }
            if (d == types[h] && s == types[h + 1]) {
                step = {static_cast<int>(e), true};
                break;
            }
        }
        if (step.edge_type < 0)
            throw ValueError("meta-path '" + spec + "': no edge type connects " + names[h] + " and " + names[h + 1]);
        mp.steps.push_back(step);
    }
    return mp;
}

NeighborIndex build_neighbor_index(const HeteroGraph& g, const MetaPath& mp) {
    const int n = g.node_count(mp.endpoint_type);

    // reach[i]: sorted node set of the current hop's destination type.
    std::vector<std::vector<int>> reach(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) reach[static_cast<std::size_t>(i)] = {i};

    for (const auto& step : mp.steps) {
        const auto& et = g.edge_types[static_cast<std::size_t>(step.edge_type)];
        const int src_t = g.type_index(step.reverse ? et.dst_type : et.src_type);
        const int dst_t = g.type_index(step.reverse ? et.src_type : et.dst_type);
        std::vector<std::vector<int>> adj(static_cast<std::size_t>(g.node_count(src_t)));
        for (const auto& [s, d] : g.edges[static_cast<std::size_t>(step.edge_type)]) {
            if (step.reverse)
                adj[static_cast<std::size_t>(d)].push_back(s);
            else
                adj[static_cast<std::size_t>(s)].push_back(d);
        }
        for (auto& row : adj) {
            std::sort(row.begin(), row.end());
            row.erase(std::unique(row.begin(), row.end()), row.end());
        }
        (void)dst_t;
        for (int i = 0; i < n; ++i) reach[static_cast<std::size_t>(i)] = merge_rows(reach[static_cast<std::size_t>(i)], adj);
    }

    NeighborIndex idx;
    idx.path_name = mp.name;
    idx.csr.offsets.push_back(0);
    for (int i = 0; i < n; ++i) {
        auto& row = reach[static_cast<std::size_t>(i)];
        row.push_back(i);  // self-loop, even with zero path instances
        std::sort(row.begin(), row.end());
        row.erase(std::unique(row.begin(), row.end()), row.end());
        idx.csr.targets.insert(idx.csr.targets.end(), row.begin(), row.end());
        idx.csr.offsets.push_back(static_cast<int>(idx.csr.targets.size()));
    }
    return idx;
}

std::pair<HeteroGraph, Splits> generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
    for (double p : {cfg.p_in, cfg.p_out, cfg.p_noise})
        if (p < 0.0 || p > 1.0) throw ValueError("synthetic config: probability " + std::to_string(p) + " outside [0,1]");
    if (cfg.target_nodes <= 0 || cfg.num_classes <= 0 || cfg.informative_aux <= 0 || cfg.noise_aux <= 0)
        throw ValueError("synthetic config: node/class counts must be positive");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    HeteroGraph g;
    g.node_types = {"T", "I", "X"};
    g.edge_types = {{"TI", "T", "I"}, {"TX", "T", "X"}};
    g.target_type = 0;
    g.num_classes = cfg.num_classes;

    auto make_keys = [](const std::string& prefix, int count) {
        std::vector<std::string> keys;
        for (int i = 0; i < count; ++i) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%s%04d", prefix.c_str(), i);
            keys.emplace_back(buf);
        }
        return keys;
    };
    g.node_keys = {make_keys("t", cfg.target_nodes), make_keys("i", cfg.informative_aux),
                   make_keys("x", cfg.noise_aux)};
    for (std::size_t t = 0; t < 3; ++t) {
        g.key_to_id.emplace_back();
        for (std::size_t i = 0; i < g.node_keys[t].size(); ++i) g.key_to_id[t][g.node_keys[t][i]] = static_cast<int>(i);
    }

    auto class_of = [&](int i) { return i % cfg.num_classes; };

    std::vector<std::pair<int, int>> ti, tx;
    for (int t = 0; t < cfg.target_nodes; ++t)
        for (int a = 0; a < cfg.informative_aux; ++a) {
            const double p = class_of(t) == class_of(a) ? cfg.p_in : cfg.p_out;
            if (unif(rng) < p) ti.emplace_back(t, a);
        }
    for (int t = 0; t < cfg.target_nodes; ++t)
        for (int a = 0; a < cfg.noise_aux; ++a)
            if (unif(rng) < cfg.p_noise) tx.emplace_back(t, a);
    g.edges = {std::move(ti), std::move(tx)};

    Matrix tf(cfg.target_nodes, cfg.feature_dim);
    for (int i = 0; i < cfg.target_nodes; ++i)
        for (int k = 0; k < cfg.feature_dim; ++k) {
            const double mean = (k % cfg.num_classes) == class_of(i) ? 1.0 : 0.0;
            tf(i, k) = mean + cfg.feature_noise * gauss(rng);
        }
    g.features = {std::move(tf), Matrix::Zero(cfg.informative_aux, 1), Matrix::Zero(cfg.noise_aux, 1)};

    for (int i = 0; i < cfg.target_nodes; ++i) g.labels[i] = class_of(i);

    std::vector<int> ids(static_cast<std::size_t>(cfg.target_nodes));
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    const int n_train = static_cast<int>(cfg.train_frac * cfg.target_nodes);
    const int n_val = static_cast<int>(cfg.val_frac * cfg.target_nodes);
    Splits splits;
    splits.train.assign(ids.begin(), ids.begin() + n_train);
    splits.val.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
    splits.test.assign(ids.begin() + n_train + n_val, ids.end());

    g.validate();
    return {std::move(g), std::move(splits)};
}

double intra_class_neighbor_fraction(const HeteroGraph& g, const NeighborIndex& idx) {
    std::int64_t same = 0, total = 0;
    const int n = idx.csr.rows();
    for (int i = 0; i < n; ++i) {
        const auto ci = g.labels.find(i);
        if (ci == g.labels.end()) continue;
        for (int k = idx.csr.offsets[static_cast<std::size_t>(i)]; k < idx.csr.offsets[static_cast<std::size_t>(i) + 1]; ++k) {
            const auto cj = g.labels.find(idx.csr.targets[static_cast<std::size_t>(k)]);
            if (cj == g.labels.end()) continue;
            ++total;
            if (ci->second == cj->second) ++same;
        }
    }
    if (total == 0) return 0.0;
    return static_cast<double>(same) / static_cast<double>(total);
}

}  // namespace han
