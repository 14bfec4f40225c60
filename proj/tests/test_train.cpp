#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "han/train.hpp"
#include "oracles.hpp"

using han::AdamState;
using han::HanConfig;
using han::HanParams;
using han::HeteroGraph;
using han::Matrix;
using han::NeighborIndex;
using han::Splits;
using han::TrainConfig;

namespace {

HeteroGraph blob_graph(int n, int classes, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.3);
    HeteroGraph g;
    g.node_types = {"A", "B"};
    g.edge_types = {{"ab", "A", "B"}};
    g.node_keys = {{}, {"b0"}};
    for (int i = 0; i < n; ++i) g.node_keys[0].push_back("a" + std::to_string(i));
    for (std::size_t t = 0; t < 2; ++t) {
        g.key_to_id.emplace_back();
        for (std::size_t i = 0; i < g.node_keys[t].size(); ++i)
            g.key_to_id[t][g.node_keys[t][i]] = static_cast<int>(i);
    }
    g.edges = {{}};
    const int d = 4;
    g.features = {Matrix::Zero(n, d), Matrix::Zero(1, 1)};
    g.target_type = 0;
    g.num_classes = classes;
    for (int i = 0; i < n; ++i) {
        const int y = i % classes;
        g.labels[i] = y;
        for (int c = 0; c < d; ++c) g.features[0](i, c) = (c % classes == y ? 1.0 : 0.0) + noise(rng);
    }
    g.validate();
    return g;
}

NeighborIndex self_index(int n, const std::string& name = "P0") {
    NeighborIndex idx;
    idx.path_name = name;
    idx.csr.offsets.push_back(0);
    for (int i = 0; i < n; ++i) {
        idx.csr.targets.push_back(i);
        idx.csr.offsets.push_back(i + 1);
    }
    return idx;
}

Splits even_splits(int n) {
    Splits s;
    for (int i = 0; i < n; ++i) {
        if (i % 3 == 0)
            s.train.push_back(i);
        else if (i % 3 == 1)
            s.val.push_back(i);
        else
            s.test.push_back(i);
    }
    return s;
}

HanConfig small_config() {
    HanConfig cfg;
    cfg.meta_paths = {"P0"};
    cfg.heads = 2;
    cfg.head_dim = 4;
    cfg.semantic_dim = 8;
    cfg.dropout = 0.4;
    return cfg;
}

std::map<std::string, Matrix> like(const HanParams& p, double fill) {
    std::map<std::string, Matrix> g;
    for (const auto& [name, m] : p.tensors) g[name] = Matrix::Constant(m.rows(), m.cols(), fill);
    return g;
}

}  // namespace

TEST_CASE("adam leaves parameters unchanged at zero gradient") {
    HanParams p;
    p.tensors["w"] = Matrix::Constant(2, 3, 1.5);
    const HanParams before = p;
    AdamState st;
    TrainConfig cfg;
    adam_step(p, like(p, 0.0), st, cfg);
    CHECK(oracle::bit_equal(p.at("w"), before.at("w")));
    CHECK(st.step == 1);
}

TEST_CASE("first adam step moves by the learning rate under constant gradient") {
    HanParams p;
    p.tensors["w"] = Matrix::Zero(2, 2);
    AdamState st;
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    adam_step(p, like(p, 3.0), st, cfg);
    // Bias correction makes m-hat = g and v-hat = g^2, so the step is
    // -lr * g / (|g| + eps) = -lr to within eps.
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) CHECK(p.at("w")(i, j) == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("ten adam steps on a quadratic match the scalar oracle") {
    HanParams p;
    p.tensors["w"] = Matrix::Constant(1, 1, 2.0);
    AdamState st;
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    oracle::ScalarAdam ref;
    double x = 2.0;
    for (int t = 0; t < 10; ++t) {
        std::map<std::string, Matrix> g;
        g["w"] = Matrix::Constant(1, 1, 2.0 * p.at("w")(0, 0));  // d/dw of w^2
        adam_step(p, g, st, cfg);
        x -= ref.step(2.0 * x, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        CHECK(std::abs(p.at("w")(0, 0) - x) <= 1e-12);
    }
}

TEST_CASE("non-finite gradients are rejected") {
    HanParams p;
    p.tensors["w"] = Matrix::Zero(1, 1);
    AdamState st;
    TrainConfig cfg;
    auto g = like(p, 0.0);
    g["w"](0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(adam_step(p, g, st, cfg), han::NumericError);
    g["w"](0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(adam_step(p, g, st, cfg), han::NumericError);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(cfg.validate(), han::ValueError);
    cfg = TrainConfig{};
    cfg.max_epochs = -1;
    CHECK_THROWS_AS(cfg.validate(), han::ValueError);
    cfg = TrainConfig{};
    cfg.patience = 0;
    CHECK_THROWS_AS(cfg.validate(), han::ValueError);
}

TEST_CASE("zero-epoch fit returns the seeded initialization untouched") {
    const int n = 12;
    HeteroGraph g = blob_graph(n, 2, 40);
    HanConfig mc = small_config();
    TrainConfig tc;
    tc.max_epochs = 0;
    tc.seed = 7;
    auto [params, log] = fit(g, {self_index(n)}, mc, tc, even_splits(n));
    CHECK(log.epochs.empty());
    const HanParams init = init_params(g, mc, 7);
    for (const auto& [name, m] : init.tensors) CHECK(oracle::bit_equal(params.at(name), m));
}

TEST_CASE("one tiny step decreases the training loss") {
    const int n = 18;
    HeteroGraph g = blob_graph(n, 3, 41);
    HanConfig mc = small_config();
    mc.dropout = 0.0;  // keep the objective identical across the epoch boundary
    TrainConfig tc;
    tc.learning_rate = 1e-6;
    tc.max_epochs = 2;
    tc.patience = 10;
    auto [params, log] = fit(g, {self_index(n)}, mc, tc, even_splits(n));
    REQUIRE(log.epochs.size() == 2);
    CHECK(log.epochs[1].train_loss < log.epochs[0].train_loss);
}

TEST_CASE("early stopping halts after patience epochs without improvement and restores the best") {
    const int n = 18;
    HeteroGraph g = blob_graph(n, 3, 42);
    HanConfig mc = small_config();
    TrainConfig tc;
    tc.max_epochs = 400;
    tc.patience = 5;
    tc.seed = 3;
    auto [params, log] = fit(g, {self_index(n)}, mc, tc, even_splits(n));
    REQUIRE(!log.epochs.empty());
    CHECK(log.stopping_epoch == static_cast<int>(log.epochs.size()));
    if (log.stopping_epoch < tc.max_epochs)
        CHECK(log.stopping_epoch == log.best_epoch + tc.patience);

    double best = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    for (const auto& e : log.epochs)
        if (e.val_loss < best) {
            best = e.val_loss;
            best_epoch = e.epoch;
        }
    CHECK(log.best_epoch == best_epoch);
    CHECK(log.best_val_loss == best);

    // The returned parameters reproduce the recorded best validation loss.
    const auto idx = self_index(n);
    han::Tape tape;
    han::Forward fw = forward(tape, g, {idx}, params, mc, han::Mode::eval);
    const double val = loss(tape, fw, g, even_splits(n).val, tc.weight_decay).scalar();
    CHECK(val == doctest::Approx(log.best_val_loss).epsilon(1e-12));
}

TEST_CASE("identically seeded runs are bit-identical") {
    const int n = 15;
    HeteroGraph g = blob_graph(n, 3, 43);
    HanConfig mc = small_config();
    TrainConfig tc;
    tc.max_epochs = 12;
    tc.patience = 12;
    tc.seed = 11;
    auto [p1, l1] = fit(g, {self_index(n)}, mc, tc, even_splits(n));
    auto [p2, l2] = fit(g, {self_index(n)}, mc, tc, even_splits(n));
    REQUIRE(l1.epochs.size() == l2.epochs.size());
    for (std::size_t e = 0; e < l1.epochs.size(); ++e) {
        CHECK(l1.epochs[e].train_loss == l2.epochs[e].train_loss);
        CHECK(l1.epochs[e].val_loss == l2.epochs[e].val_loss);
    }
    for (const auto& [name, m] : p1.tensors) CHECK(oracle::bit_equal(p2.at(name), m));

    tc.seed = 12;
    auto [p3, l3] = fit(g, {self_index(n)}, mc, tc, even_splits(n));
    CHECK(l3.epochs[0].train_loss != l1.epochs[0].train_loss);
}

TEST_CASE("overlapping splits are rejected") {
    const int n = 9;
    HeteroGraph g = blob_graph(n, 3, 44);
    Splits s = even_splits(n);
    s.val.push_back(s.train[0]);
    CHECK_THROWS_AS(fit(g, {self_index(n)}, small_config(), TrainConfig{}, s), han::ValueError);
}

TEST_CASE("trainlog csv has the documented columns and no timing") {
    han::TrainLog log;
    log.epochs.push_back({1, 0.5, 0.75, 3.0});
    log.epochs.push_back({2, 0.25, 0.5, 3.0});
    const auto path = (std::filesystem::temp_directory_path() / "han_trainlog_test.csv").string();
    write_trainlog_csv(path, log);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,train_loss,val_loss");
    std::getline(in, line);
    CHECK(line.substr(0, 2) == "1,");
    CHECK(line.find("3") == std::string::npos);  // the wall-time value must not leak
}
