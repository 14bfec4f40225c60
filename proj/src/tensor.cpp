#include "han/tensor.hpp"

#include <cmath>
#include <string>

namespace han {

namespace {

std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

}  // namespace

double Tape::rng_uniform(std::uint64_t stream, std::uint64_t idx) const {
    std::uint64_t h = splitmix64(splitmix64(rng_seed_ ^ (stream * 0xD1B54A32D192ED03ULL)) ^ idx);
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

Tensor Tape::push(Matrix value, bool requires_grad, bool leaf) {
    Node n;
    n.grad = Matrix::Zero(value.rows(), value.cols());
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.leaf = leaf;
    nodes_.push_back(std::move(n));
    return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::check_same_tape(Tensor t) const {
    if (t.tape_ != this) throw ValueError("tensor belongs to a different tape");
}

Tensor Tape::input(Matrix value, bool requires_grad) {
    return push(std::move(value), requires_grad, /*leaf=*/true);
}

Tensor Tape::constant(double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return push(std::move(m), false, /*leaf=*/true);
}

Tensor Tape::matmul(Tensor a, Tensor b) {
    check_same_tape(a);
    check_same_tape(b);
    const Matrix& av = node(a).value;
    const Matrix& bv = node(b).value;
    if (av.cols() != bv.rows())
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(av) + " * " + shape_str(bv));
    flops_ += static_cast<std::uint64_t>(av.rows()) * av.cols() * bv.cols();
    bool rg = node(a).requires_grad || node(b).requires_grad;
    Tensor out = push(av * bv, rg);
    if (rg) {
        node(out).backprop = [this, a, b, out]() {
            const Matrix& g = node(out).grad;
            if (node(a).requires_grad) node(a).grad.noalias() += g * node(b).value.transpose();
            if (node(b).requires_grad) node(b).grad.noalias() += node(a).value.transpose() * g;
        };
    }
    return out;
}

Tensor Tape::add(Tensor a, Tensor b) {
    check_same_tape(a);
    check_same_tape(b);
    const Matrix& av = node(a).value;
    const Matrix& bv = node(b).value;
    if (av.rows() != bv.rows() || av.cols() != bv.cols())
        throw DimensionError("add: shape mismatch, " + shape_str(av) + " vs " + shape_str(bv));
    bool rg = node(a).requires_grad || node(b).requires_grad;
    Tensor out = push(av + bv, rg);
    if (rg) {
        node(out).backprop = [this, a, b, out]() {
            const Matrix& g = node(out).grad;
            if (node(a).requires_grad) node(a).grad += g;
            if (node(b).requires_grad) node(b).grad += g;
        };
    }
    return out;
}

Tensor Tape::add_rowvec(Tensor a, Tensor row) {
    check_same_tape(a);
    check_same_tape(row);
    const Matrix& av = node(a).value;
    const Matrix& rv = node(row).value;
    if (rv.rows() != 1 || rv.cols() != av.cols())
        throw DimensionError("add_rowvec: " + shape_str(av) + " + " + shape_str(rv));
    bool rg = node(a).requires_grad || node(row).requires_grad;
    Tensor out = push(av.rowwise() + rv.row(0), rg);
    if (rg) {
        node(out).backprop = [this, a, row, out]() {
            const Matrix& g = node(out).grad;
            if (node(a).requires_grad) node(a).grad += g;
            if (node(row).requires_grad) node(row).grad.row(0) += g.colwise().sum();
        };
    }
    return out;
}

Tensor Tape::mul(Tensor a, Tensor b) {
    check_same_tape(a);
    check_same_tape(b);
    const Matrix& av = node(a).value;
    const Matrix& bv = node(b).value;
    if (av.rows() != bv.rows() || av.cols() != bv.cols())
        throw DimensionError("mul: shape mismatch, " + shape_str(av) + " vs " + shape_str(bv));
    flops_ += static_cast<std::uint64_t>(av.size());
    bool rg = node(a).requires_grad || node(b).requires_grad;
    Tensor out = push(av.cwiseProduct(bv), rg);
    if (rg) {
        node(out).backprop = [this, a, b, out]() {
            const Matrix& g = node(out).grad;
            if (node(a).requires_grad) node(a).grad += g.cwiseProduct(node(b).value);
            if (node(b).requires_grad) node(b).grad += g.cwiseProduct(node(a).value);
        };
    }
    return out;
}

Tensor Tape::scale(Tensor a, double c) {
    check_same_tape(a);
    flops_ += static_cast<std::uint64_t>(node(a).value.size());
    bool rg = node(a).requires_grad;
    Tensor out = push(node(a).value * c, rg);
    if (rg) {
        node(out).backprop = [this, a, out, c]() { node(a).grad += node(out).grad * c; };
    }
    return out;
}

Tensor Tape::concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ValueError("concat_cols: no inputs");
    check_same_tape(parts.front());
    const Eigen::Index rows = node(parts.front()).value.rows();
    Eigen::Index cols = 0;
    bool rg = false;
    for (Tensor p : parts) {
        check_same_tape(p);
        const Matrix& v = node(p).value;
        if (v.rows() != rows)
            throw DimensionError("concat_cols: row mismatch, " + std::to_string(rows) + " vs " + shape_str(v));
        cols += v.cols();
        rg = rg || node(p).requires_grad;
    }
    Matrix out(rows, cols);
    Eigen::Index at = 0;
    for (Tensor p : parts) {
        const Matrix& v = node(p).value;
        out.middleCols(at, v.cols()) = v;
        at += v.cols();
    }
    Tensor t = push(std::move(out), rg);
    if (rg) {
        std::vector<Tensor> held = parts;
        node(t).backprop = [this, held, t]() {
            const Matrix& g = node(t).grad;
            Eigen::Index at = 0;
            for (Tensor p : held) {
                Eigen::Index w = node(p).value.cols();
                if (node(p).requires_grad) node(p).grad += g.middleCols(at, w);
                at += w;
            }
        };
    }
    return t;
}

Tensor Tape::leaky_relu(Tensor a, double slope) {
    check_same_tape(a);
    const Matrix& av = node(a).value;
    flops_ += static_cast<std::uint64_t>(av.size());
    bool rg = node(a).requires_grad;
    Tensor out = push(av.unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; }), rg);
    if (rg) {
        node(out).backprop = [this, a, out, slope]() {
            node(a).grad += node(out).grad.cwiseProduct(
                node(a).value.unaryExpr([slope](double x) { return x > 0.0 ? 1.0 : slope; }));
        };
    }
    return out;
}

Tensor Tape::elu(Tensor a) {
    check_same_tape(a);
    const Matrix& av = node(a).value;
    flops_ += static_cast<std::uint64_t>(av.size());
    bool rg = node(a).requires_grad;
    Tensor out = push(av.unaryExpr([](double x) { return x > 0.0 ? x : std::expm1(x); }), rg);
    if (rg) {
        node(out).backprop = [this, a, out]() {
            node(a).grad += node(out).grad.cwiseProduct(
                node(a).value.unaryExpr([](double x) { return x > 0.0 ? 1.0 : std::exp(x); }));
        };
    }
    return out;
}

Tensor Tape::tanh(Tensor a) {
    check_same_tape(a);
    flops_ += static_cast<std::uint64_t>(node(a).value.size());
    bool rg = node(a).requires_grad;
    Tensor out = push(node(a).value.array().tanh().matrix(), rg);
    if (rg) {
        node(out).backprop = [this, a, out]() {
            node(a).grad.array() +=
                node(out).grad.array() * (1.0 - node(out).value.array().square());
        };
    }
    return out;
}

Tensor Tape::log(Tensor a) {
    check_same_tape(a);
    bool rg = node(a).requires_grad;
    Tensor out = push(node(a).value.array().log().matrix(), rg);
    if (rg) {
        node(out).backprop = [this, a, out]() {
            node(a).grad.array() += node(out).grad.array() / node(a).value.array();
        };
    }
    return out;
}

Tensor Tape::sum(Tensor a) {
    check_same_tape(a);
    Matrix m(1, 1);
    m(0, 0) = node(a).value.sum();
    bool rg = node(a).requires_grad;
    Tensor out = push(std::move(m), rg);
    if (rg) {
        node(out).backprop = [this, a, out]() {
            node(a).grad.array() += node(out).grad(0, 0);
        };
    }
    return out;
}

Tensor Tape::mean(Tensor a) {
    check_same_tape(a);
    const double n = static_cast<double>(node(a).value.size());
    Matrix m(1, 1);
    m(0, 0) = node(a).value.sum() / n;
    bool rg = node(a).requires_grad;
    Tensor out = push(std::move(m), rg);
    if (rg) {
        node(out).backprop = [this, a, out, n]() {
            node(a).grad.array() += node(out).grad(0, 0) / n;
        };
    }
    return out;
}

Tensor Tape::dropout(Tensor a, double rate, bool training) {
    check_same_tape(a);
    if (rate < 0.0 || rate >= 1.0) throw ValueError("dropout: rate must be in [0,1), got " + std::to_string(rate));
    const std::uint64_t stream = rng_stream_++;
    if (!training || rate == 0.0) {
        bool rg = node(a).requires_grad;
        Tensor out = push(node(a).value, rg);
        if (rg) node(out).backprop = [this, a, out]() { node(a).grad += node(out).grad; };
        return out;
    }
    const Matrix& av = node(a).value;
    Matrix mask(av.rows(), av.cols());
    const double keep_scale = 1.0 / (1.0 - rate);
    for (Eigen::Index j = 0; j < av.cols(); ++j)
        for (Eigen::Index i = 0; i < av.rows(); ++i) {
            std::uint64_t idx = static_cast<std::uint64_t>(j) * av.rows() + i;
            mask(i, j) = rng_uniform(stream, idx) < rate ? 0.0 : keep_scale;
        }
    flops_ += static_cast<std::uint64_t>(av.size());
    bool rg = node(a).requires_grad;
    Tensor out = push(av.cwiseProduct(mask), rg);
    if (rg) {
        node(out).backprop = [this, a, out, mask = std::move(mask)]() {
            node(a).grad += node(out).grad.cwiseProduct(mask);
        };
    }
    return out;
}

Tensor Tape::softmax_masked(Tensor logits, const std::vector<bool>& mask) {
    check_same_tape(logits);
    const Matrix& lv = node(logits).value;
    if (lv.rows() != 1 && lv.cols() != 1)
        throw DimensionError("softmax_masked: expected a vector, got " + shape_str(lv));
    if (static_cast<Eigen::Index>(mask.size()) != lv.size())
        throw DimensionError("softmax_masked: mask size " + std::to_string(mask.size()) +
                             " vs logits size " + std::to_string(lv.size()));
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < lv.size(); ++i)
        if (mask[static_cast<std::size_t>(i)]) mx = std::max(mx, lv(i));
    if (!std::isfinite(mx) && mx < 0) throw ValueError("softmax_masked: mask has no true entry");
    Matrix out = Matrix::Zero(lv.rows(), lv.cols());
    double denom = 0.0;
    for (Eigen::Index i = 0; i < lv.size(); ++i)
        if (mask[static_cast<std::size_t>(i)]) {
            out(i) = std::exp(lv(i) - mx);
            denom += out(i);
        }
    out /= denom;
    flops_ += static_cast<std::uint64_t>(3 * lv.size());
    bool rg = node(logits).requires_grad;
    Tensor t = push(std::move(out), rg);
    if (rg) {
        node(t).backprop = [this, logits, t]() {
            const Matrix& y = node(t).value;
            const Matrix& g = node(t).grad;
            const double dot = y.cwiseProduct(g).sum();
            node(logits).grad.array() += y.array() * (g.array() - dot);
        };
    }
    return t;
}

Tensor Tape::pick_rows(Tensor a, const std::vector<int>& ids) {
    check_same_tape(a);
    const Matrix& av = node(a).value;
    Matrix out(static_cast<Eigen::Index>(ids.size()), av.cols());
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] < 0 || ids[r] >= av.rows())
            throw ValueError("pick_rows: id " + std::to_string(ids[r]) + " out of range [0," +
                             std::to_string(av.rows()) + ")");
        out.row(static_cast<Eigen::Index>(r)) = av.row(ids[r]);
    }
    bool rg = node(a).requires_grad;
    Tensor t = push(std::move(out), rg);
    if (rg) {
        node(t).backprop = [this, a, t, ids]() {
            const Matrix& g = node(t).grad;
            for (std::size_t r = 0; r < ids.size(); ++r)
                node(a).grad.row(ids[r]) += g.row(static_cast<Eigen::Index>(r));
        };
    }
    return t;
}

Tensor Tape::block(Tensor a, int r0, int c0, int nr, int nc) {
    check_same_tape(a);
    const Matrix& av = node(a).value;
    if (r0 < 0 || c0 < 0 || nr <= 0 || nc <= 0 || r0 + nr > av.rows() || c0 + nc > av.cols())
        throw DimensionError("block: (" + std::to_string(r0) + "," + std::to_string(c0) + ")+" +
                             std::to_string(nr) + "x" + std::to_string(nc) + " out of " + shape_str(av));
    bool rg = node(a).requires_grad;
    Tensor out = push(av.block(r0, c0, nr, nc), rg);
    if (rg) {
        node(out).backprop = [this, a, out, r0, c0, nr, nc]() {
            node(a).grad.block(r0, c0, nr, nc) += node(out).grad;
        };
    }
    return out;
}

Tensor Tape::scale_by_entry(Tensor vec, int idx, Tensor x) {
    check_same_tape(vec);
    check_same_tape(x);
    const Matrix& vv = node(vec).value;
    if (idx < 0 || idx >= vv.size()) throw ValueError("scale_by_entry: index out of range");
    const double c = vv(idx);
    flops_ += static_cast<std::uint64_t>(node(x).value.size());
    bool rg = node(vec).requires_grad || node(x).requires_grad;
    Tensor out = push(node(x).value * c, rg);
    if (rg) {
        node(out).backprop = [this, vec, x, out, idx, c]() {
            const Matrix& g = node(out).grad;
            if (node(x).requires_grad) node(x).grad += g * c;
            if (node(vec).requires_grad) node(vec).grad(idx) += g.cwiseProduct(node(x).value).sum();
        };
    }
    return out;
}

Tensor Tape::edge_score(Tensor fsrc, Tensor fdst, const Csr& csr) {
    check_same_tape(fsrc);
    check_same_tape(fdst);
    const Matrix& sv = node(fsrc).value;
    const Matrix& dv = node(fdst).value;
    if (sv.cols() != 1 || dv.cols() != 1 || sv.rows() != dv.rows())
        throw DimensionError("edge_score: fsrc " + shape_str(sv) + ", fdst " + shape_str(dv));
    if (csr.rows() != sv.rows())
        throw DimensionError("edge_score: csr has " + std::to_string(csr.rows()) + " rows, features " +
                             std::to_string(sv.rows()));
    Matrix out(csr.edges(), 1);
    for (int i = 0; i < csr.rows(); ++i)
        for (int k = csr.offsets[static_cast<std::size_t>(i)]; k < csr.offsets[static_cast<std::size_t>(i) + 1]; ++k)
            out(k, 0) = sv(i, 0) + dv(csr.targets[static_cast<std::size_t>(k)], 0);
    flops_ += static_cast<std::uint64_t>(csr.edges());
    bool rg = node(fsrc).requires_grad || node(fdst).requires_grad;
    Tensor t = push(std::move(out), rg);
    if (rg) {
        node(t).backprop = [this, fsrc, fdst, t, csr]() {
            const Matrix& g = node(t).grad;
            for (int i = 0; i < csr.rows(); ++i)
                for (int k = csr.offsets[static_cast<std::size_t>(i)]; k < csr.offsets[static_cast<std::size_t>(i) + 1]; ++k) {
                    if (node(fsrc).requires_grad) node(fsrc).grad(i, 0) += g(k, 0);
                    if (node(fdst).requires_grad) node(fdst).grad(csr.targets[static_cast<std::size_t>(k)], 0) += g(k, 0);
                }
        };
    }
    return t;
}

Tensor Tape::segment_softmax(Tensor e, const Csr& csr) {
    check_same_tape(e);
    const Matrix& ev = node(e).value;
    if (ev.cols() != 1 || ev.rows() != csr.edges())
        throw DimensionError("segment_softmax: edge vector " + shape_str(ev) + " vs " +
                             std::to_string(csr.edges()) + " edges");
    Matrix out(ev.rows(), 1);
    for (int i = 0; i < csr.rows(); ++i) {
        const int lo = csr.offsets[static_cast<std::size_t>(i)];
        const int hi = csr.offsets[static_cast<std::size_t>(i) + 1];
        if (lo == hi) continue;
        double mx = -std::numeric_limits<double>::infinity();
        for (int k = lo; k < hi; ++k) mx = std::max(mx, ev(k, 0));
        double denom = 0.0;
        for (int k = lo; k < hi; ++k) {
            out(k, 0) = std::exp(ev(k, 0) - mx);
            denom += out(k, 0);
        }
        for (int k = lo; k < hi; ++k) out(k, 0) /= denom;
    }
    flops_ += static_cast<std::uint64_t>(3 * csr.edges());
    bool rg = node(e).requires_grad;
    Tensor t = push(std::move(out), rg);
    if (rg) {
        node(t).backprop = [this, e, t, csr]() {
            const Matrix& y = node(t).value;
            const Matrix& g = node(t).grad;
            for (int i = 0; i < csr.rows(); ++i) {
                const int lo = csr.offsets[static_cast<std::size_t>(i)];
                const int hi = csr.offsets[static_cast<std::size_t>(i) + 1];
                double dot = 0.0;
                for (int k = lo; k < hi; ++k) dot += y(k, 0) * g(k, 0);
                for (int k = lo; k < hi; ++k) node(e).grad(k, 0) += y(k, 0) * (g(k, 0) - dot);
            }
        };
    }
    return t;
}

Tensor Tape::aggregate(Tensor alpha, Tensor h, const Csr& csr) {
    check_same_tape(alpha);
    check_same_tape(h);
    const Matrix& av = node(alpha).value;
    const Matrix& hv = node(h).value;
    if (av.cols() != 1 || av.rows() != csr.edges())
        throw DimensionError("aggregate: alpha " + shape_str(av) + " vs " + std::to_string(csr.edges()) + " edges");
    if (hv.rows() != csr.rows())
        throw DimensionError("aggregate: features " + shape_str(hv) + " vs " + std::to_string(csr.rows()) + " nodes");
    Matrix out = Matrix::Zero(csr.rows(), hv.cols());
    for (int i = 0; i < csr.rows(); ++i)
        for (int k = csr.offsets[static_cast<std::size_t>(i)]; k < csr.offsets[static_cast<std::size_t>(i) + 1]; ++k)
            out.row(i) += av(k, 0) * hv.row(csr.targets[static_cast<std::size_t>(k)]);
    flops_ += static_cast<std::uint64_t>(csr.edges()) * hv.cols();
    bool rg = node(alpha).requires_grad || node(h).requires_grad;
    Tensor t = push(std::move(out), rg);
    if (rg) {
        node(t).backprop = [this, alpha, h, t, csr]() {
            const Matrix& g = node(t).grad;
            for (int i = 0; i < csr.rows(); ++i)
                for (int k = csr.offsets[static_cast<std::size_t>(i)]; k < csr.offsets[static_cast<std::size_t>(i) + 1]; ++k) {
                    const int j = csr.targets[static_cast<std::size_t>(k)];
                    if (node(alpha).requires_grad)
                        node(alpha).grad(k, 0) += g.row(i).dot(node(h).value.row(j));
                    if (node(h).requires_grad) node(h).grad.row(j) += node(alpha).value(k, 0) * g.row(i);
                }
        };
    }
    return t;
}

Tensor Tape::cross_entropy(Tensor logits, const std::vector<int>& labels) {
    check_same_tape(logits);
    const Matrix& lv = node(logits).value;
    if (lv.rows() != static_cast<Eigen::Index>(labels.size()))
        throw DimensionError("cross_entropy: " + std::to_string(lv.rows()) + " rows vs " +
                             std::to_string(labels.size()) + " labels");
    if (labels.empty()) throw ValueError("cross_entropy: empty labeled set");
    const double n = static_cast<double>(labels.size());
    double total = 0.0;
    for (Eigen::Index r = 0; r < lv.rows(); ++r) {
        const int y = labels[static_cast<std::size_t>(r)];
        if (y < 0 || y >= lv.cols()) throw ValueError("cross_entropy: label " + std::to_string(y) + " out of range");
        const double mx = lv.row(r).maxCoeff();
        const double lse = mx + std::log((lv.row(r).array() - mx).exp().sum());
        total += lse - lv(r, y);
    }
    flops_ += static_cast<std::uint64_t>(lv.size()) * 3;
    Matrix m(1, 1);
    m(0, 0) = total / n;
    bool rg = node(logits).requires_grad;
    Tensor out = push(std::move(m), rg);
    if (rg) {
        node(out).backprop = [this, logits, out, labels, n]() {
            const Matrix& lv = node(logits).value;
            const double g = node(out).grad(0, 0);
            for (Eigen::Index r = 0; r < lv.rows(); ++r) {
                const double mx = lv.row(r).maxCoeff();
                Eigen::RowVectorXd p = (lv.row(r).array() - mx).exp();
                p /= p.sum();
                p(labels[static_cast<std::size_t>(r)]) -= 1.0;
                node(logits).grad.row(r) += (g / n) * p;
            }
        };
    }
    return out;
}

void Tape::backward(Tensor loss) {
    check_same_tape(loss);
    if (node(loss).value.size() != 1)
        throw ValueError("backward: loss must be scalar, got " +
                         std::to_string(node(loss).value.rows()) + "x" +
                         std::to_string(node(loss).value.cols()));
    // Intermediate grads are scratch space for this sweep; leaf grads persist
    // so repeated calls accumulate.
    for (Node& n : nodes_)
        if (!n.leaf) n.grad.setZero();
    node(loss).grad(0, 0) = 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.backprop) n.backprop();
    }
}

}  // namespace han
