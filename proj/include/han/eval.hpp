#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "han/model.hpp"

namespace han {

struct Stats {
    double mean = 0.0;
    double stddev = 0.0;
};

Stats stats_of(const std::vector<double>& xs);

/// Euclidean k-nearest-neighbor vote. Equidistant neighbors are broken by
/// node id, vote ties by lowest class index.
std::vector<int> knn_predict(const Matrix& embeddings, const std::vector<int>& train_ids,
                             const std::vector<int>& train_labels, const std::vector<int>& test_ids,
                             int k);

struct KnnResult {
    Stats macro_f1;
    Stats micro_f1;
};

/// Repeated KNN evaluation; each repeat resamples `train_fraction` of the
/// training ids without replacement (seeded per repeat).
KnnResult knn_classify(const Matrix& embeddings, const std::vector<int>& train_ids,
                       const std::vector<int>& train_labels, const std::vector<int>& test_ids,
                       const std::vector<int>& test_labels, int num_classes, int k, int repeats,
                       double train_fraction, std::uint64_t seed);

/// Lloyd iterations from seeded random-point initialization until an
/// assignment fixpoint or the iteration cap. An emptied cluster is re-seeded
/// at the point farthest from its assigned centroid.
std::vector<int> kmeans_cluster(const Matrix& points, int k, std::uint64_t seed, int max_iters = 300);

double kmeans_inertia(const Matrix& points, const std::vector<int>& assign, int k);

/// Normalized mutual information, arithmetic-mean normalization.
double nmi(const std::vector<int>& pred, const std::vector<int>& truth);
/// Adjusted Rand index from the contingency table.
double ari(const std::vector<int>& pred, const std::vector<int>& truth);

/// Unweighted mean of per-class F1; a class absent from both pred and truth
/// contributes 0.
double macro_f1(const std::vector<int>& pred, const std::vector<int>& truth, int num_classes);
/// F1 of pooled counts; equals accuracy for single-label multi-class.
double micro_f1(const std::vector<int>& pred, const std::vector<int>& truth, int num_classes);

struct EvalOptions {
    int knn_k = 5;
    int repeats = 10;
    double train_fraction = 0.2;
    std::uint64_t seed = 0;
};

struct EvalReport {
    Stats macro_f1;
    Stats micro_f1;
    Stats nmi;
    Stats ari;
    std::vector<std::string> meta_paths;
    std::vector<double> beta;
    std::vector<double> w;
};

/// Forward pass in eval mode, then the classification and clustering
/// protocols over the test split / labeled nodes.
EvalReport evaluate(const HeteroGraph& g, const std::vector<NeighborIndex>& indices,
                    const HanParams& params, const HanConfig& cfg, const Splits& splits,
                    const EvalOptions& opts);

struct AttentionEntry {
    int neighbor = -1;
    std::vector<double> per_head;
    double head_avg = 0.0;
};

struct NodeAttention {
    std::string meta_path;
    std::vector<AttentionEntry> entries;  // sorted by head_avg, descending
};

struct AttentionReport {
    std::vector<std::string> meta_paths;  // sorted by beta, descending
    std::vector<double> beta;
    std::vector<double> w;
    std::vector<NodeAttention> nodes;  // per meta-path for the queried node
};

/// Reads alpha/beta straight out of a forward pass (no recomputation).
AttentionReport inspect_attention(const Forward& fw, const std::vector<NeighborIndex>& indices,
                                  const HanConfig& cfg, int node_id);

void write_report_json(const std::string& path, const EvalReport& report);
void write_betas_csv(const std::string& path, const EvalReport& report);
void write_embeddings_tsv(const std::string& path, const HeteroGraph& g, const Matrix& z);
void write_attention_csv(const std::string& path, const AttentionReport& report,
                         const HeteroGraph& g);

}  // namespace han
