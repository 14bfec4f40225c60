#pragma once

#include <map>
#include <string>
#include <vector>

#include "han/graph.hpp"
#include "han/tensor.hpp"

namespace han {

struct HanConfig {
    std::vector<std::string> meta_paths;
    int heads = 8;           // K
    int head_dim = 8;        // F2; per-head output width
    int semantic_dim = 128;  // width of the semantic attention space
    double dropout = 0.6;
    double leaky_slope = 0.2;

    /// Final embedding width F = K * F2; also the projection width F1.
    int embed_dim() const { return heads * head_dim; }
    void validate() const;
};

enum class Mode { train, eval };
enum class Ablation { none, node, semantic };

/// All learnable parameters as named matrices. Shapes depend only on the
/// schema's feature dims and the config, never on node or edge counts.
struct HanParams {
    std::map<std::string, Matrix> tensors;

    Matrix& at(const std::string& name);
    const Matrix& at(const std::string& name) const;
};

/// Glorot-uniform initialization of every parameter, seeded.
HanParams init_params(const HeteroGraph& g, const HanConfig& cfg, std::uint64_t seed);

/// Versioned JSON checkpoint; round-trips bit-exactly.
void save_checkpoint(const std::string& path, const HanParams& params, const HanConfig& cfg);
std::pair<HanParams, HanConfig> load_checkpoint(const std::string& path);

/// Tape handles produced by one forward pass.
struct Forward {
    std::map<std::string, Tensor> params;   // leaf handle per parameter
    std::vector<std::vector<Tensor>> alpha; // [meta-path][head], edge-aligned with the index CSR
    std::vector<Tensor> z_phi;              // semantic-specific embeddings, n x F
    Tensor w;                               // 1 x P unnormalized importances
    Tensor beta;                            // 1 x P
    Tensor z;                               // fused embedding, n x F
};

/// Projection, per-(meta-path, head) masked node-level attention, head
/// concatenation, then semantic-level fusion.
Forward forward(Tape& tape, const HeteroGraph& g, const std::vector<NeighborIndex>& indices,
                const HanParams& params, const HanConfig& cfg, Mode mode,
                Ablation ablation = Ablation::none);

/// Mean cross-entropy of the classifier over `labeled` rows of fw.z, plus
/// weight_decay * sum of squared parameter entries.
Tensor loss(Tape& tape, const Forward& fw, const HeteroGraph& g, const std::vector<int>& labeled,
            double weight_decay);

}  // namespace han
