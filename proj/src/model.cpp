#include "han/model.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

using nlohmann::json;

namespace han {

namespace {

constexpr int kCheckpointVersion = 1;

Matrix glorot(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> unif(-limit, limit);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = unif(rng);
    return m;
}

std::string attn_name(const std::string& path, int head) {
    return "attn/" + path + "/h" + std::to_string(head);
}

}  // namespace

void HanConfig::validate() const {
    if (meta_paths.empty()) throw ValueError("config: at least one meta-path required");
    if (heads < 1) throw ValueError("config: heads must be >= 1");
    if (head_dim < 1 || semantic_dim < 1) throw ValueError("config: dims must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ValueError("config: dropout must be in [0,1)");
}

Matrix& HanParams::at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ValueError("unknown parameter: " + name);
    return it->second;
}

const Matrix& HanParams::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ValueError("unknown parameter: " + name);
    return it->second;
}

HanParams init_params(const HeteroGraph& g, const HanConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    const int f = cfg.embed_dim();
    HanParams p;
    // One type-specific projection per node type, shared by heads and paths.
    for (std::size_t t = 0; t < g.node_types.size(); ++t)
        p.tensors["proj/" + g.node_types[t]] = glorot(rng, g.features[t].cols(), f);
    for (const auto& path : cfg.meta_paths)
        for (int k = 0; k < cfg.heads; ++k)
            p.tensors[attn_name(path, k)] = glorot(rng, 2 * cfg.head_dim, 1);
    p.tensors["sem/W"] = glorot(rng, f, cfg.semantic_dim);
    p.tensors["sem/b"] = Matrix::Zero(1, cfg.semantic_dim);
    p.tensors["sem/q"] = glorot(rng, cfg.semantic_dim, 1);
    p.tensors["cls/C"] = glorot(rng, f, g.num_classes);
    return p;
}

void save_checkpoint(const std::string& path, const HanParams& params, const HanConfig& cfg) {
    json j;
    j["format"] = "han-checkpoint";
    j["version"] = kCheckpointVersion;
    j["config"] = {{"meta_paths", cfg.meta_paths}, {"heads", cfg.heads},
                   {"head_dim", cfg.head_dim},     {"semantic_dim", cfg.semantic_dim},
                   {"dropout", cfg.dropout},       {"leaky_slope", cfg.leaky_slope}};
    json tensors = json::object();
    for (const auto& [name, m] : params.tensors) {
        json data = json::array();
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index k = 0; k < m.cols(); ++k) data.push_back(m(i, k));
        tensors[name] = {{"shape", {m.rows(), m.cols()}}, {"data", std::move(data)}};
    }
    j["tensors"] = std::move(tensors);
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write checkpoint: " + path);
    out << j.dump(2) << "\n";
}

std::pair<HanParams, HanConfig> load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("missing checkpoint: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw LoadError(path + ": " + e.what());
    }
    if (j.value("format", "") != "han-checkpoint")
        throw LoadError(path + ": not a han checkpoint");
    if (j.value("version", -1) != kCheckpointVersion)
        throw LoadError(path + ": unsupported checkpoint version");
    HanConfig cfg;
    const json& c = j.at("config");
    cfg.meta_paths = c.at("meta_paths").get<std::vector<std::string>>();
    cfg.heads = c.at("heads").get<int>();
    cfg.head_dim = c.at("head_dim").get<int>();
    cfg.semantic_dim = c.at("semantic_dim").get<int>();
    cfg.dropout = c.at("dropout").get<double>();
    cfg.leaky_slope = c.at("leaky_slope").get<double>();
    HanParams p;
    for (const auto& [name, t] : j.at("tensors").items()) {
        const auto shape = t.at("shape").get<std::vector<Eigen::Index>>();
        const auto data = t.at("data").get<std::vector<double>>();
        if (shape.size() != 2 || static_cast<Eigen::Index>(data.size()) != shape[0] * shape[1])
            throw LoadError(path + ": tensor '" + name + "' has inconsistent shape/data");
        Matrix m(shape[0], shape[1]);
        std::size_t at = 0;
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index k = 0; k < m.cols(); ++k) m(i, k) = data[at++];
        p.tensors[name] = std::move(m);
    }
    return {std::move(p), std::move(cfg)};
}

Forward forward(Tape& tape, const HeteroGraph& g, const std::vector<NeighborIndex>& indices,
                const HanParams& params, const HanConfig& cfg, Mode mode, Ablation ablation) {
    cfg.validate();
    if (indices.size() != cfg.meta_paths.size())
        throw ValueError("forward: " + std::to_string(indices.size()) + " indices for " +
                         std::to_string(cfg.meta_paths.size()) + " meta-paths");
    const bool training = mode == Mode::train;
    const int n = g.target_count();
    const int f2 = cfg.head_dim;

    Forward fw;
    for (const auto& [name, m] : params.tensors) fw.params.emplace(name, tape.input(m, true));

    const std::string& tgt = g.node_types[static_cast<std::size_t>(g.target_type)];
    Tensor h = tape.input(g.features[static_cast<std::size_t>(g.target_type)], false);
    Tensor hp = tape.matmul(h, fw.params.at("proj/" + tgt));
    Tensor hp_drop = tape.dropout(hp, cfg.dropout, training);

    std::vector<Tensor> z_paths;
    for (std::size_t p = 0; p < indices.size(); ++p) {
        const Csr& csr = indices[p].csr;
        if (csr.rows() != n)
            throw ValueError("forward: index '" + indices[p].path_name + "' covers " +
                             std::to_string(csr.rows()) + " nodes, target type has " + std::to_string(n));
        fw.alpha.emplace_back();
        std::vector<Tensor> heads;
        for (int k = 0; k < cfg.heads; ++k) {
            Tensor hk = tape.block(hp_drop, 0, k * f2, n, f2);
            Tensor alpha;
            if (ablation == Ablation::node) {
                Matrix uni(csr.edges(), 1);
                for (int i = 0; i < csr.rows(); ++i) {
                    const int lo = csr.offsets[static_cast<std::size_t>(i)];
                    const int hi = csr.offsets[static_cast<std::size_t>(i) + 1];
                    for (int e = lo; e < hi; ++e) uni(e, 0) = 1.0 / static_cast<double>(hi - lo);
                }
                alpha = tape.input(std::move(uni), false);
            } else {
                Tensor a = fw.params.at(attn_name(cfg.meta_paths[p], k));
                Tensor fsrc = tape.matmul(hk, tape.block(a, 0, 0, f2, 1));
                Tensor fdst = tape.matmul(hk, tape.block(a, f2, 0, f2, 1));
                Tensor e = tape.leaky_relu(tape.edge_score(fsrc, fdst, csr), cfg.leaky_slope);
                alpha = tape.segment_softmax(e, csr);
            }
            fw.alpha.back().push_back(alpha);
            Tensor alpha_drop = tape.dropout(alpha, cfg.dropout, training);
            heads.push_back(tape.elu(tape.aggregate(alpha_drop, hk, csr)));
        }
        z_paths.push_back(tape.concat_cols(heads));
    }
    fw.z_phi = z_paths;

    // Meta-path importances: mean over nodes of q . tanh(W z + b).
    std::vector<Tensor> ws;
    for (Tensor zp : z_paths) {
        Tensor t = tape.tanh(tape.add_rowvec(tape.matmul(zp, fw.params.at("sem/W")), fw.params.at("sem/b")));
        ws.push_back(tape.mean(tape.matmul(t, fw.params.at("sem/q"))));
    }
    fw.w = tape.concat_cols(ws);
    if (ablation == Ablation::semantic) {
        const double p = static_cast<double>(z_paths.size());
        fw.beta = tape.input(Matrix::Constant(1, static_cast<Eigen::Index>(z_paths.size()), 1.0 / p), false);
    } else {
        fw.beta = tape.softmax_masked(fw.w, std::vector<bool>(z_paths.size(), true));
    }

    Tensor z = tape.scale_by_entry(fw.beta, 0, z_paths[0]);
    for (std::size_t p = 1; p < z_paths.size(); ++p)
        z = tape.add(z, tape.scale_by_entry(fw.beta, static_cast<int>(p), z_paths[p]));
    fw.z = z;
    return fw;
}

Tensor loss(Tape& tape, const Forward& fw, const HeteroGraph& g, const std::vector<int>& labeled,
            double weight_decay) {
    if (labeled.empty()) throw ValueError("loss: empty labeled set");
    std::vector<int> ys;
    for (int id : labeled) {
        const auto it = g.labels.find(id);
        if (it == g.labels.end()) throw ValueError("loss: node " + std::to_string(id) + " has no label");
        ys.push_back(it->second);
    }
    Tensor logits = tape.matmul(tape.pick_rows(fw.z, labeled), fw.params.at("cls/C"));
    Tensor total = tape.cross_entropy(logits, ys);
    if (weight_decay != 0.0) {
        Tensor reg;
        for (const auto& [name, t] : fw.params) {
            Tensor sq = tape.sum(tape.mul(t, t));
            reg = reg.valid() ? tape.add(reg, sq) : sq;
        }
        total = tape.add(total, tape.scale(reg, weight_decay));
    }
    return total;
}

}  // namespace han
