#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "han/graph.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using han::HeteroGraph;
using han::Matrix;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("han_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// The movie/actor/director example: three movies, three actors, two
// directors, wired so MAM neighbors of m1 are {m1,m2,m3} and MDM neighbors
// of m1 are {m1,m2}.
HeteroGraph movie_fixture() {
    HeteroGraph g;
    g.node_types = {"M", "A", "D"};
    g.edge_types = {{"play", "A", "M"}, {"direct", "D", "M"}};
    g.node_keys = {{"m1", "m2", "m3"}, {"a1", "a2", "a3"}, {"d1", "d2"}};
    for (std::size_t t = 0; t < 3; ++t) {
        g.key_to_id.emplace_back();
        for (std::size_t i = 0; i < g.node_keys[t].size(); ++i)
            g.key_to_id[t][g.node_keys[t][i]] = static_cast<int>(i);
    }
    // a1 plays in m1,m2; a2 in m1,m3; a3 in m2,m3. d1 directs m1,m2; d2 m3.
    g.edges = {{{0, 0}, {0, 1}, {1, 0}, {1, 2}, {2, 1}, {2, 2}}, {{0, 0}, {0, 1}, {1, 2}}};
    g.features = {Matrix::Identity(3, 3), Matrix::Zero(3, 1), Matrix::Zero(2, 1)};
    g.labels = {{0, 0}, {1, 0}, {2, 1}};
    g.target_type = 0;
    g.num_classes = 2;
    g.validate();
    return g;
}

std::vector<int> neighbors(const han::NeighborIndex& idx, int node) { return idx.neighbors_of(node); }

}  // namespace

TEST_CASE("movie fixture round-trips through the directory format") {
    const fs::path dir = temp_dir("movies");
    const HeteroGraph g = movie_fixture();
    han::Splits splits{{0}, {1}, {2}};
    han::save_graph(dir.string(), g, splits);

    const HeteroGraph loaded = han::load_graph(dir.string());
    CHECK(loaded.node_types.size() == 3);
    CHECK(loaded.edge_types.size() == 2);
    CHECK(loaded.target_count() == 3);
    CHECK(loaded.edges[0].size() == 6);
    CHECK(oracle::bit_equal(loaded.features[0], g.features[0]));
    CHECK(loaded.labels == g.labels);

    const han::Splits ls = han::load_splits(dir.string(), loaded);
    CHECK(ls.train == splits.train);
    CHECK(ls.test == splits.test);
}

TEST_CASE("meta-path neighbor sets match the movie example") {
    const HeteroGraph g = movie_fixture();
    const auto mam = han::build_neighbor_index(g, han::compile_meta_path("M-A-M", g));
    CHECK(neighbors(mam, 0) == std::vector<int>{0, 1, 2});
    const auto mdm = han::build_neighbor_index(g, han::compile_meta_path("M-D-M", g));
    CHECK(neighbors(mdm, 0) == std::vector<int>{0, 1});
    CHECK(neighbors(mdm, 2) == std::vector<int>{2});
}

TEST_CASE("compile_meta_path resolves orientation and rejects bad specs") {
    const HeteroGraph g = movie_fixture();
    const han::MetaPath mam = han::compile_meta_path("M-A-M", g);
    CHECK(mam.steps.size() == 2);
    CHECK(mam.steps[0].reverse);   // M -> A runs against the play edge
    CHECK(!mam.steps[1].reverse);  // A -> M runs along it

    CHECK_THROWS_WITH_AS(han::compile_meta_path("M-A-D", g), doctest::Contains("asymmetric"), han::ValueError);
    CHECK_THROWS_AS(han::compile_meta_path("M-Z-M", g), han::ValueError);
    CHECK_THROWS_WITH_AS(han::compile_meta_path("A-D-A", g), doctest::Contains("no edge type"), han::ValueError);
}

TEST_CASE("empty edge files leave only self-loops") {
    const fs::path dir = temp_dir("empty_edges");
    HeteroGraph g = movie_fixture();
    g.edges = {{}, {}};
    han::save_graph(dir.string(), g, {{0}, {1}, {2}});
    const HeteroGraph loaded = han::load_graph(dir.string());
    const auto idx = han::build_neighbor_index(loaded, han::compile_meta_path("M-A-M", loaded));
    for (int i = 0; i < 3; ++i) CHECK(neighbors(idx, i) == std::vector<int>{i});
}

TEST_CASE("malformed edge line reports file and line") {
    const fs::path dir = temp_dir("malformed");
    han::save_graph(dir.string(), movie_fixture(), {{0}, {1}, {2}});
    std::ofstream(dir / "edges_play.tsv") << "a1\tm1\nm1\n";
    try {
        han::load_graph(dir.string());
        FAIL("expected LoadError");
    } catch (const han::LoadError& e) {
        CHECK(std::string(e.what()).find("edges_play.tsv:2") != std::string::npos);
    }
}

TEST_CASE("loader rejects unknown keys and schema violations") {
    const fs::path dir = temp_dir("badkey");
    han::save_graph(dir.string(), movie_fixture(), {{0}, {1}, {2}});
    std::ofstream(dir / "edges_direct.tsv") << "d9\tm1\n";
    CHECK_THROWS_WITH_AS(han::load_graph(dir.string()), doctest::Contains("d9"), han::LoadError);
}

TEST_CASE("neighbor index equals exhaustive path enumeration on random graphs") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
        HeteroGraph g;
        g.node_types = {"A", "B", "C"};
        g.edge_types = {{"ab", "A", "B"}, {"bc", "B", "C"}};
        for (int t = 0; t < 3; ++t) {
            const int n = 2 + static_cast<int>(rng() % 49);
            g.node_keys.emplace_back();
            g.key_to_id.emplace_back();
            for (int i = 0; i < n; ++i) {
                g.node_keys.back().push_back("n" + std::to_string(i));
                g.key_to_id.back()["n" + std::to_string(i)] = i;
            }
        }
        for (const auto& [st, dt] : {std::pair{0, 1}, std::pair{1, 2}}) {
            std::vector<std::pair<int, int>> es;
            const int m = static_cast<int>(rng() % 120);
            for (int e = 0; e < m; ++e)
                es.emplace_back(static_cast<int>(rng() % static_cast<std::uint64_t>(g.node_count(st))),
                                static_cast<int>(rng() % static_cast<std::uint64_t>(g.node_count(dt))));
            g.edges.push_back(std::move(es));
        }
        for (int t = 0; t < 3; ++t) g.features.push_back(Matrix::Zero(g.node_count(t), 1));
        g.target_type = 0;
        g.num_classes = 2;
        g.labels = {{0, 0}, {1, 1}};
        g.validate();

        const char* specs[] = {"A-B-A", "B-C-B", "B-A-B", "A-B-C-B-A"};
        const han::MetaPath mp = han::compile_meta_path(specs[trial % 4], g);
        const auto idx = han::build_neighbor_index(g, mp);
        const auto expect = oracle::path_enumeration(g, mp);
        REQUIRE(idx.csr.rows() == static_cast<int>(expect.size()));
        for (int i = 0; i < idx.csr.rows(); ++i) {
            const auto got = idx.neighbors_of(i);
            CHECK(std::set<int>(got.begin(), got.end()) == expect[static_cast<std::size_t>(i)]);
            CHECK(std::is_sorted(got.begin(), got.end()));
            CHECK(std::adjacent_find(got.begin(), got.end()) == got.end());
        }
    }
}

TEST_CASE("index is independent of edge ordering and symmetric for paired hops") {
    HeteroGraph g = movie_fixture();
    const auto idx1 = han::build_neighbor_index(g, han::compile_meta_path("M-A-M", g));
    std::reverse(g.edges[0].begin(), g.edges[0].end());
    const auto idx2 = han::build_neighbor_index(g, han::compile_meta_path("M-A-M", g));
    CHECK(idx1.csr.offsets == idx2.csr.offsets);
    CHECK(idx1.csr.targets == idx2.csr.targets);

    for (int i = 0; i < 3; ++i) {
        const auto ni = idx1.neighbors_of(i);
        CHECK(std::find(ni.begin(), ni.end(), i) != ni.end());
        for (int j : ni) {
            const auto nj = idx1.neighbors_of(j);
            CHECK(std::find(nj.begin(), nj.end(), i) != nj.end());
        }
    }
}

TEST_CASE("synthetic generator degenerate configs") {
    han::SyntheticConfig cfg;
    cfg.target_nodes = 60;
    cfg.feature_noise = 0.0;

    SUBCASE("pure wiring gives class-pure informative neighborhoods") {
        cfg.p_in = 1.0;
        cfg.p_out = 0.0;
        auto [g, splits] = han::generate_synthetic(cfg, 1);
        const auto idx = han::build_neighbor_index(g, han::compile_meta_path("T-I-T", g));
        CHECK(han::intra_class_neighbor_fraction(g, idx) == 1.0);
    }
    SUBCASE("p_in == p_out carries no class signal") {
        cfg.p_in = cfg.p_out = 0.3;
        auto [g, splits] = han::generate_synthetic(cfg, 1);
        const auto idx = han::build_neighbor_index(g, han::compile_meta_path("T-I-T", g));
        // Three balanced classes: intra fraction should hover near 1/3.
        CHECK(han::intra_class_neighbor_fraction(g, idx) < 0.55);
    }
    SUBCASE("invalid probability rejected") {
        cfg.p_in = 1.5;
        CHECK_THROWS_AS(han::generate_synthetic(cfg, 1), han::ValueError);
    }
}

TEST_CASE("default synthetic config plants a measurable signal") {
    han::SyntheticConfig cfg;
    auto [g, splits] = han::generate_synthetic(cfg, 5);
    CHECK(g.target_count() == 300);
    CHECK(g.num_classes == 3);
    CHECK(g.labels.size() == 300);
    const auto informative = han::build_neighbor_index(g, han::compile_meta_path("T-I-T", g));
    CHECK(han::intra_class_neighbor_fraction(g, informative) >= 0.7);

    CHECK(splits.train.size() == 60);
    CHECK(splits.val.size() == 60);
    CHECK(splits.test.size() == 180);
}

TEST_CASE("generator is deterministic") {
    han::SyntheticConfig cfg;
    cfg.target_nodes = 40;
    auto [g1, s1] = han::generate_synthetic(cfg, 9);
    auto [g2, s2] = han::generate_synthetic(cfg, 9);
    CHECK(g1.edges == g2.edges);
    CHECK(oracle::bit_equal(g1.features[0], g2.features[0]));
    CHECK(s1.train == s2.train);
}
