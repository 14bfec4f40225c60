#include "han/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace han {

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw ValueError("train config: learning rate must be positive");
    if (patience < 1) throw ValueError("train config: patience must be >= 1");
    if (max_epochs < 0) throw ValueError("train config: max_epochs must be >= 0");
    if (weight_decay < 0.0) throw ValueError("train config: weight decay must be >= 0");
}

void adam_step(HanParams& params, const std::map<std::string, Matrix>& grads, AdamState& state,
               const TrainConfig& cfg) {
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));
    for (auto& [name, p] : params.tensors) {
        const auto git = grads.find(name);
        if (git == grads.end()) throw ValueError("adam_step: missing gradient for " + name);
        const Matrix& g = git->second;
        if (!g.allFinite()) throw NumericError("non-finite gradient in parameter " + name);
        Matrix& m = state.m.try_emplace(name, Matrix::Zero(p.rows(), p.cols())).first->second;
        Matrix& v = state.v.try_emplace(name, Matrix::Zero(p.rows(), p.cols())).first->second;
        m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g;
        v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * g.cwiseProduct(g);
        const Matrix mhat = m / bc1;
        const Matrix vhat = v / bc2;
        p.array() -= cfg.learning_rate * mhat.array() / (vhat.array().sqrt() + cfg.adam_eps);
    }
}

namespace {

void check_disjoint(const Splits& splits) {
    std::vector<int> all;
    for (const auto* part : {&splits.train, &splits.val, &splits.test})
        all.insert(all.end(), part->begin(), part->end());
    std::sort(all.begin(), all.end());
    if (std::adjacent_find(all.begin(), all.end()) != all.end())
        throw ValueError("splits overlap");
}

std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
    return seed * 0x100000001B3ULL + static_cast<std::uint64_t>(epoch);
}

}  // namespace

std::pair<HanParams, TrainLog> fit(const HeteroGraph& g, const std::vector<NeighborIndex>& indices,
                                   const HanConfig& model_cfg, const TrainConfig& train_cfg,
                                   const Splits& splits, Ablation ablation) {
    train_cfg.validate();
    check_disjoint(splits);
    if (splits.train.empty() || splits.val.empty())
        throw ValueError("fit: train and validation splits must be non-empty");

    HanParams params = init_params(g, model_cfg, train_cfg.seed);
    HanParams best = params;
    TrainLog log;
    AdamState state;
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int since_best = 0;

    for (int epoch = 1; epoch <= train_cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();

        Tape tape;
        tape.seed_rng(epoch_seed(train_cfg.seed, epoch));
        Forward fw = forward(tape, g, indices, params, model_cfg, Mode::train, ablation);
        Tensor l = loss(tape, fw, g, splits.train, train_cfg.weight_decay);
        const double train_loss = l.scalar();
        if (!std::isfinite(train_loss)) throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
        tape.backward(l);

        std::map<std::string, Matrix> grads;
        for (const auto& [name, t] : fw.params) grads.emplace(name, t.grad());
        adam_step(params, grads, state, train_cfg);

        Tape vtape;
        Forward vfw = forward(vtape, g, indices, params, model_cfg, Mode::eval, ablation);
        const double val_loss = loss(vtape, vfw, g, splits.val, train_cfg.weight_decay).scalar();
        if (!std::isfinite(val_loss)) throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));

        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.epochs.push_back({epoch, train_loss, val_loss, secs});
        log.stopping_epoch = epoch;

        if (val_loss < best_val) {
            best_val = val_loss;
            best_epoch = epoch;
            best = params;
            since_best = 0;
        } else {
            ++since_best;
            if (since_best >= train_cfg.patience) break;
        }
    }

    log.best_epoch = best_epoch;
    log.best_val_loss = best_val;
    return {std::move(best), std::move(log)};
}

void write_trainlog_csv(const std::string& path, const TrainLog& log) {
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write " + path);
    out << "epoch,train_loss,val_loss\n";
    char buf[64];
    for (const auto& e : log.epochs) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_loss);
        out << buf;
    }
}

}  // namespace han
