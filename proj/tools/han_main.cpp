#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "han/eval.hpp"
#include "han/graph.hpp"
#include "han/model.hpp"
#include "han/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct RunConfig {
    han::HanConfig model;
    han::TrainConfig train;
    han::EvalOptions eval;
    int threads = 1;

    RunConfig() { model.meta_paths = {"T-I-T", "T-X-T"}; }
};

const std::set<std::string> kKnownKeys = {
    "meta_paths", "heads",      "head_dim",     "semantic_dim", "dropout",   "leaky_slope",
    "learning_rate", "weight_decay", "max_epochs", "patience",  "seed",      "adam_beta1",
    "adam_beta2", "adam_eps",   "knn_k",        "repeats",      "train_fraction", "threads"};

RunConfig load_run_config(const std::string& path) {
    RunConfig cfg;
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw han::LoadError("missing config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw han::LoadError(path + ": " + e.what());
    }
    for (const auto& [key, val] : j.items())
        if (!kKnownKeys.count(key)) throw han::ValueError(path + ": unknown config key '" + key + "'");
    if (j.contains("meta_paths")) cfg.model.meta_paths = j["meta_paths"].get<std::vector<std::string>>();
    if (j.contains("heads")) cfg.model.heads = j["heads"].get<int>();
    if (j.contains("head_dim")) cfg.model.head_dim = j["head_dim"].get<int>();
    if (j.contains("semantic_dim")) cfg.model.semantic_dim = j["semantic_dim"].get<int>();
    if (j.contains("dropout")) cfg.model.dropout = j["dropout"].get<double>();
    if (j.contains("leaky_slope")) cfg.model.leaky_slope = j["leaky_slope"].get<double>();
    if (j.contains("learning_rate")) cfg.train.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("weight_decay")) cfg.train.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("max_epochs")) cfg.train.max_epochs = j["max_epochs"].get<int>();
    if (j.contains("patience")) cfg.train.patience = j["patience"].get<int>();
    if (j.contains("seed")) cfg.train.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("adam_beta1")) cfg.train.adam_beta1 = j["adam_beta1"].get<double>();
    if (j.contains("adam_beta2")) cfg.train.adam_beta2 = j["adam_beta2"].get<double>();
    if (j.contains("adam_eps")) cfg.train.adam_eps = j["adam_eps"].get<double>();
    if (j.contains("knn_k")) cfg.eval.knn_k = j["knn_k"].get<int>();
    if (j.contains("repeats")) cfg.eval.repeats = j["repeats"].get<int>();
    if (j.contains("train_fraction")) cfg.eval.train_fraction = j["train_fraction"].get<double>();
    if (j.contains("threads")) cfg.threads = j["threads"].get<int>();
    return cfg;
}

json run_config_json(const RunConfig& cfg) {
    return json{{"meta_paths", cfg.model.meta_paths},
                {"heads", cfg.model.heads},
                {"head_dim", cfg.model.head_dim},
                {"semantic_dim", cfg.model.semantic_dim},
                {"dropout", cfg.model.dropout},
                {"leaky_slope", cfg.model.leaky_slope},
                {"learning_rate", cfg.train.learning_rate},
                {"weight_decay", cfg.train.weight_decay},
                {"max_epochs", cfg.train.max_epochs},
                {"patience", cfg.train.patience},
                {"seed", cfg.train.seed},
                {"adam_beta1", cfg.train.adam_beta1},
                {"adam_beta2", cfg.train.adam_beta2},
                {"adam_eps", cfg.train.adam_eps},
                {"knn_k", cfg.eval.knn_k},
                {"repeats", cfg.eval.repeats},
                {"train_fraction", cfg.eval.train_fraction},
                {"threads", cfg.threads}};
}

std::vector<han::NeighborIndex> build_indices(const han::HeteroGraph& g, const std::vector<std::string>& paths) {
    std::vector<han::NeighborIndex> indices;
    for (const auto& spec : paths) indices.push_back(han::build_neighbor_index(g, han::compile_meta_path(spec, g)));
    return indices;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"HAN: hierarchical attention over meta-path heterogeneous graphs"};
    app.require_subcommand(1);

    // gen-synthetic
    auto* gen = app.add_subcommand("gen-synthetic", "Generate a planted-signal synthetic graph directory");
    std::string gen_out;
    std::uint64_t gen_seed = 0;
    han::SyntheticConfig syn;
    bool gen_force = false;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--seed", gen_seed, "RNG seed");
    gen->add_option("--nodes", syn.target_nodes, "Target node count");
    gen->add_option("--classes", syn.num_classes, "Number of classes");
    gen->add_option("--p-in", syn.p_in, "Intra-class wiring probability");
    gen->add_option("--p-out", syn.p_out, "Cross-class wiring probability");
    gen->add_option("--p-noise", syn.p_noise, "Noise edge probability");
    gen->add_option("--feature-noise", syn.feature_noise, "Feature noise stddev");
    gen->add_flag("--force", gen_force, "Overwrite a non-empty output directory");

    // train
    auto* tr = app.add_subcommand("train", "Train HAN on a graph directory");
    std::string tr_data, tr_config, tr_out, tr_ablate;
    tr->add_option("--data", tr_data, "Graph directory")->required();
    tr->add_option("--config", tr_config, "JSON run config");
    tr->add_option("--out", tr_out, "Output directory")->required();
    tr->add_option("--ablate", tr_ablate, "Ablation: nd or sem")->check(CLI::IsMember({"nd", "sem"}));
    std::uint64_t tr_seed = 0;
    int tr_epochs = -1, tr_patience = -1, tr_heads = -1;
    double tr_lr = -1.0;
    auto* tr_seed_opt = tr->add_option("--seed", tr_seed, "Override seed");
    tr->add_option("--max-epochs", tr_epochs, "Override max epochs");
    tr->add_option("--patience", tr_patience, "Override patience");
    tr->add_option("--lr", tr_lr, "Override learning rate");
    tr->add_option("--heads", tr_heads, "Override attention heads");
    std::vector<std::string> tr_paths;
    tr->add_option("--meta-path", tr_paths, "Override meta-path list");
    int tr_threads = 1;
    tr->add_option("--threads", tr_threads, "Worker threads (determinism-first default 1)");

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint: classification, clustering, betas");
    std::string ev_data, ev_ckpt, ev_out;
    han::EvalOptions ev_opts;
    ev->add_option("--data", ev_data, "Graph directory")->required();
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
    ev->add_option("--out", ev_out, "Output directory")->required();
    ev->add_option("--train-fraction", ev_opts.train_fraction, "Labeled fraction per KNN repeat");
    ev->add_option("--knn-k", ev_opts.knn_k, "KNN neighbor count");
    ev->add_option("--repeats", ev_opts.repeats, "Evaluation repeats");
    ev->add_option("--seed", ev_opts.seed, "Evaluation seed");

    // inspect
    auto* ins = app.add_subcommand("inspect", "Dump attention values for one node");
    std::string in_data, in_ckpt, in_node, in_out = ".";
    ins->add_option("--data", in_data, "Graph directory")->required();
    ins->add_option("--checkpoint", in_ckpt, "Checkpoint file")->required();
    ins->add_option("--node", in_node, "Target node key")->required();
    ins->add_option("--out", in_out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        if (gen->parsed()) {
            if (fs::exists(gen_out) && !fs::is_empty(gen_out) && !gen_force)
                throw han::ValueError("output directory " + gen_out + " is not empty (use --force)");
            auto [graph, splits] = han::generate_synthetic(syn, gen_seed);
            han::save_graph(gen_out, graph, splits);
            std::cout << "wrote " << gen_out << ": " << graph.target_count() << " target nodes, "
                      << graph.num_classes << " classes\n";
        } else if (tr->parsed()) {
            RunConfig cfg = load_run_config(tr_config);
            if (tr_seed_opt->count()) cfg.train.seed = tr_seed;
            if (tr_epochs >= 0) cfg.train.max_epochs = tr_epochs;
            if (tr_patience >= 0) cfg.train.patience = tr_patience;
            if (tr_lr > 0) cfg.train.learning_rate = tr_lr;
            if (tr_heads > 0) cfg.model.heads = tr_heads;
            if (!tr_paths.empty()) cfg.model.meta_paths = tr_paths;
            cfg.threads = tr_threads;
            han::Ablation ab = han::Ablation::none;
            if (tr_ablate == "nd") ab = han::Ablation::node;
            if (tr_ablate == "sem") ab = han::Ablation::semantic;

            const han::HeteroGraph g = han::load_graph(tr_data);
            const han::Splits splits = han::load_splits(tr_data, g);
            const auto indices = build_indices(g, cfg.model.meta_paths);
            auto [params, log] = han::fit(g, indices, cfg.model, cfg.train, splits, ab);

            fs::create_directories(tr_out);
            han::save_checkpoint((fs::path(tr_out) / "checkpoint.json").string(), params, cfg.model);
            han::write_trainlog_csv((fs::path(tr_out) / "trainlog.csv").string(), log);
            std::ofstream(fs::path(tr_out) / "run_config.json") << run_config_json(cfg).dump(2) << "\n";
            std::cout << "stopped at epoch " << log.stopping_epoch << ", best epoch " << log.best_epoch
                      << " (val loss " << log.best_val_loss << ")\n";
        } else if (ev->parsed()) {
            const han::HeteroGraph g = han::load_graph(ev_data);
            const han::Splits splits = han::load_splits(ev_data, g);
            auto [params, model_cfg] = han::load_checkpoint(ev_ckpt);
            const auto indices = build_indices(g, model_cfg.meta_paths);
            const han::EvalReport rep = han::evaluate(g, indices, params, model_cfg, splits, ev_opts);

            han::Tape tape;
            han::Forward fw = han::forward(tape, g, indices, params, model_cfg, han::Mode::eval);
            fs::create_directories(ev_out);
            han::write_report_json((fs::path(ev_out) / "report.json").string(), rep);
            han::write_betas_csv((fs::path(ev_out) / "betas.csv").string(), rep);
            han::write_embeddings_tsv((fs::path(ev_out) / "embeddings.tsv").string(), g, fw.z.value());
            std::cout << "macro-f1 " << rep.macro_f1.mean << " +/- " << rep.macro_f1.stddev
                      << ", micro-f1 " << rep.micro_f1.mean << ", nmi " << rep.nmi.mean << ", ari "
                      << rep.ari.mean << "\n";
        } else if (ins->parsed()) {
            const han::HeteroGraph g = han::load_graph(in_data);
            auto [params, model_cfg] = han::load_checkpoint(in_ckpt);
            const auto& key_map = g.key_to_id[static_cast<std::size_t>(g.target_type)];
            const auto it = key_map.find(in_node);
            if (it == key_map.end()) throw han::ValueError("unknown target node key '" + in_node + "'");
            const auto indices = build_indices(g, model_cfg.meta_paths);
            han::Tape tape;
            han::Forward fw = han::forward(tape, g, indices, params, model_cfg, han::Mode::eval);
            const han::AttentionReport rep = han::inspect_attention(fw, indices, model_cfg, it->second);
            fs::create_directories(in_out);
            const fs::path out = fs::path(in_out) / ("attention_" + in_node + ".csv");
            han::write_attention_csv(out.string(), rep, g);
            std::cout << "wrote " << out.string() << "\n";
        }
    } catch (const han::NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return 0;
}
