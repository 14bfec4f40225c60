#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "han/model.hpp"

namespace han {

struct TrainConfig {
    double learning_rate = 0.005;
    double weight_decay = 0.001;
    int max_epochs = 500;
    int patience = 100;
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double seconds = 0.0;  // wall time; kept out of the CSV for reproducibility
};

struct TrainLog {
    std::vector<EpochLog> epochs;
    int stopping_epoch = 0;
    int best_epoch = 0;
    double best_val_loss = 0.0;
};

struct AdamState {
    std::map<std::string, Matrix> m;
    std::map<std::string, Matrix> v;
    long step = 0;
};

/// One bias-corrected adaptive-moment update over all parameters.
/// Throws NumericError on non-finite gradients.
void adam_step(HanParams& params, const std::map<std::string, Matrix>& grads, AdamState& state,
               const TrainConfig& cfg);

/// Full-batch semi-supervised training with validation-loss early stopping;
/// returns the best-validation parameters. Deterministic given the seed.
std::pair<HanParams, TrainLog> fit(const HeteroGraph& g, const std::vector<NeighborIndex>& indices,
                                   const HanConfig& model_cfg, const TrainConfig& train_cfg,
                                   const Splits& splits, Ablation ablation = Ablation::none);

/// epoch,train_loss,val_loss rows. Timing is deliberately excluded so two
/// identically seeded runs write byte-identical files.
void write_trainlog_csv(const std::string& path, const TrainLog& log);

}  // namespace han
