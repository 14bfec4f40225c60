#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include "han/errors.hpp"

namespace han {

using Matrix = Eigen::MatrixXd;

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; owns nothing.
class Tensor {
public:
    Tensor() = default;

    const Matrix& value() const;
    const Matrix& grad() const;
    bool requires_grad() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    /// Value of a 1x1 tensor.
    double scalar() const;

    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}
    Tape* tape_ = nullptr;
    int id_ = -1;
};

/// Compressed-sparse-row adjacency: row i owns targets[offsets[i]..offsets[i+1]).
struct Csr {
    std::vector<int> offsets;
    std::vector<int> targets;

    int rows() const { return static_cast<int>(offsets.size()) - 1; }
    int edges() const { return static_cast<int>(targets.size()); }
};

/// Records primitive ops in execution order; replaying adjoints in reverse
/// order implements reverse-mode differentiation. One tape per forward pass;
/// not copyable or movable (adjoint closures hold stable node references).
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Seeds the counter-based RNG used by dropout. Counters restart at zero,
    /// so two tapes with the same seed and op sequence draw identical masks.
    void seed_rng(std::uint64_t seed) {
        rng_seed_ = seed;
        rng_stream_ = 0;
    }

    Tensor input(Matrix value, bool requires_grad = false);
    Tensor constant(double v);

    Tensor matmul(Tensor a, Tensor b);
    Tensor add(Tensor a, Tensor b);
    /// Adds a 1xC row vector to every row of a.
    Tensor add_rowvec(Tensor a, Tensor row);
    Tensor mul(Tensor a, Tensor b);
    Tensor scale(Tensor a, double c);
    Tensor concat_cols(const std::vector<Tensor>& parts);
    Tensor leaky_relu(Tensor a, double slope);
    Tensor elu(Tensor a);
    Tensor tanh(Tensor a);
    Tensor log(Tensor a);
    Tensor sum(Tensor a);
    Tensor mean(Tensor a);
    /// Inverted dropout: zeroes entries with probability `rate` and scales
    /// survivors by 1/(1-rate) when training; exact identity otherwise.
    Tensor dropout(Tensor a, double rate, bool training);
    /// Softmax over the unmasked entries of a vector-shaped tensor; masked
    /// entries are exactly zero. Stabilized by max subtraction.
    Tensor softmax_masked(Tensor logits, const std::vector<bool>& mask);
    Tensor pick_rows(Tensor a, const std::vector<int>& ids);
    /// Contiguous submatrix a(r0:r0+nr, c0:c0+nc).
    Tensor block(Tensor a, int r0, int c0, int nr, int nc);
    /// vec(idx) * x, with gradients flowing to both vec and x.
    Tensor scale_by_entry(Tensor vec, int idx, Tensor x);

    /// Per-edge score fsrc(i) + fdst(j) for every edge (i, j) of csr.
    Tensor edge_score(Tensor fsrc, Tensor fdst, const Csr& csr);
    /// Softmax of an edge vector within each csr row segment.
    Tensor segment_softmax(Tensor e, const Csr& csr);
    /// out(i,:) = sum over edges (i,j) of alpha_e * h(j,:).
    Tensor aggregate(Tensor alpha, Tensor h, const Csr& csr);

    /// Mean over rows of (logsumexp(row) - row[label]).
    Tensor cross_entropy(Tensor logits, const std::vector<int>& labels);

    /// Populates grads of every requires_grad tensor reachable from `loss`.
    /// Leaf (input) grads accumulate across calls; the trainer uses a fresh
    /// tape per pass instead of resetting.
    void backward(Tensor loss);

    /// Multiply-add count of all ops recorded so far.
    std::uint64_t flops() const { return flops_; }
    std::size_t size() const { return nodes_.size(); }

private:
    friend class Tensor;
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        bool leaf = false;
        std::function<void()> backprop;  // empty when nothing upstream needs grads
    };

    Tensor push(Matrix value, bool requires_grad, bool leaf = false);
    Node& node(Tensor t) { return nodes_[static_cast<std::size_t>(t.id_)]; }
    const Node& node(Tensor t) const { return nodes_[static_cast<std::size_t>(t.id_)]; }
    void check_same_tape(Tensor t) const;
    double rng_uniform(std::uint64_t stream, std::uint64_t idx) const;

    std::deque<Node> nodes_;
    std::uint64_t rng_seed_ = 0;
    std::uint64_t rng_stream_ = 0;
    std::uint64_t flops_ = 0;
};

inline const Matrix& Tensor::value() const { return tape_->node(*this).value; }
inline const Matrix& Tensor::grad() const { return tape_->node(*this).grad; }
inline bool Tensor::requires_grad() const { return tape_->node(*this).requires_grad; }
inline double Tensor::scalar() const {
    const Matrix& v = value();
    if (v.size() != 1) throw DimensionError("scalar() on tensor of size " + std::to_string(v.size()));
    return v(0, 0);
}

}  // namespace han
