#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "han/errors.hpp"
#include "han/tensor.hpp"

namespace han {

struct EdgeTypeDef {
    std::string name;
    std::string src_type;
    std::string dst_type;
};

/// Typed nodes/edges with per-type dense features and partial labels on the
/// target type. Immutable after construction; safe to share across threads.
struct HeteroGraph {
    std::vector<std::string> node_types;
    std::vector<EdgeTypeDef> edge_types;
    /// Per type, string key per node; line/push order defines dense ids.
    std::vector<std::vector<std::string>> node_keys;
    /// Per type, key -> dense id.
    std::vector<std::unordered_map<std::string, int>> key_to_id;
    /// Per edge type, (src id, dst id) pairs.
    std::vector<std::vector<std::pair<int, int>>> edges;
    /// Per type, n_t x d_t feature matrix.
    std::vector<Matrix> features;
    /// Target-type node id -> class index; may cover only part of the nodes.
    std::map<int, int> labels;
    int target_type = -1;
    int num_classes = 0;

    int type_index(const std::string& name) const;
    int edge_type_index(const std::string& name) const;
    int node_count(int type) const { return static_cast<int>(node_keys[static_cast<std::size_t>(type)].size()); }
    int target_count() const { return node_count(target_type); }

    /// Checks every structural invariant; throws LoadError on violation.
    void validate() const;
};

struct MetaPathStep {
    int edge_type = -1;
    bool reverse = false;  // traverse dst -> src
};

/// A compiled node-type sequence such as "M-A-M": one oriented edge-type hop
/// per adjacent pair, with identical endpoint types.
struct MetaPath {
    std::string name;
    std::vector<MetaPathStep> steps;
    int endpoint_type = -1;
};

/// Meta-path neighbor sets over the endpoint type in CSR form. Rows are
/// sorted, duplicate-free, and always contain the row's own node.
struct NeighborIndex {
    std::string path_name;
    Csr csr;

    std::vector<int> neighbors_of(int node) const;
};

struct Splits {
    std::vector<int> train;
    std::vector<int> val;
    std::vector<int> test;
};

HeteroGraph load_graph(const std::string& dir);
Splits load_splits(const std::string& dir, const HeteroGraph& g);
void save_graph(const std::string& dir, const HeteroGraph& g, const Splits& splits);

/// Resolves a hyphen-separated node-type sequence against the schema.
MetaPath compile_meta_path(const std::string& spec, const HeteroGraph& g);

/// Neighbor sets: j is a neighbor of i iff some path instance connects them,
/// or j == i. Path multiplicities are discarded.
NeighborIndex build_neighbor_index(const HeteroGraph& g, const MetaPath& mp);

struct SyntheticConfig {
    int target_nodes = 300;
    int num_classes = 3;
    /// Aux nodes of the informative type (split evenly across classes).
    int informative_aux = 6;
    /// Aux nodes of the noise type.
    int noise_aux = 30;
    double p_in = 0.4;    // target-aux wiring prob, same class
    double p_out = 0.01;  // target-aux wiring prob, different class
    double p_noise = 0.05;
    int feature_dim = 16;
    double feature_noise = 0.8;
    double train_frac = 0.2;
    double val_frac = 0.2;
};

/// Planted-signal heterogeneous graph: the meta-path through the informative
/// type ("T-I-T") predicts class, the one through the noise type ("T-X-T")
/// does not. All target nodes are labeled; splits are sampled per the config
/// fractions.
std::pair<HeteroGraph, Splits> generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed);

/// Fraction of informative-path neighbor slots (self included) whose class
/// matches the row node's class, averaged over edges.
double intra_class_neighbor_fraction(const HeteroGraph& g, const NeighborIndex& idx);

}  // namespace han
