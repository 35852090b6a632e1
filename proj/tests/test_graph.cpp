#include "amst/graph.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace amst;

namespace {

WeightedGraph triangle()
{
    return WeightedGraph(3, {{0, 1, 1}, {1, 2, 2}, {0, 2, 3}});
}

// Independent oracle: exhaustive search over all (n-1)-edge subsets.
std::vector<std::size_t> brute_force_mst(const WeightedGraph& g)
{
    const auto m = g.edge_count();
    const auto k = g.node_count() - 1;
    std::vector<std::size_t> best;
    Weight best_w = std::numeric_limits<Weight>::max();
    for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
        if (static_cast<std::size_t>(std::popcount(mask)) != k) {
            continue;
        }
        DisjointSets ds(g.node_count());
        bool ok = true;
        Weight w = 0;
        std::vector<std::size_t> chosen;
        for (std::size_t i = 0; i < m && ok; ++i) {
            if (mask & (1u << i)) {
                const auto& e = g.edge(i);
                ok = ds.unite(static_cast<std::size_t>(e.u), static_cast<std::size_t>(e.v));
                w += e.w;
                chosen.push_back(i);
            }
        }
        if (ok && w < best_w) {
            best_w = w;
            best = chosen;
        }
    }
    return best;
}

}  // namespace

TEST(Graph, RejectsInvalidInput)
{
    EXPECT_THROW(WeightedGraph(2, {{0, 0, 1}}), GraphError);
    EXPECT_THROW(WeightedGraph(2, {{0, 1, 1}, {1, 0, 2}}), GraphError);
    EXPECT_THROW(WeightedGraph(3, {{0, 1, 1}, {1, 2, 1}}), GraphError);
    EXPECT_THROW(WeightedGraph(3, {{0, 1, 1}}), GraphError);
    EXPECT_THROW(WeightedGraph(2, {{0, 1, 0}}), GraphError);
}

TEST(Graph, PortsAreConsistent)
{
    auto g = generate_graph(GraphKind::erdos_renyi, 40, GraphParams{.p = 0.2}, 3);
    for (NodeId v = 0; v < static_cast<NodeId>(g.node_count()); ++v) {
        for (std::size_t p = 0; p < g.degree(v); ++p) {
            const auto& pe = g.ports(v)[p];
            const auto& back = g.ports(pe.neighbor)[static_cast<std::size_t>(pe.remote_port)];
            EXPECT_EQ(back.neighbor, v);
            EXPECT_EQ(back.edge, pe.edge);
        }
    }
}

TEST(Graph, GeneratorShapes)
{
    auto path = generate_graph(GraphKind::path, 5, {}, 1);
    EXPECT_EQ(path.edge_count(), 4u);
    EXPECT_EQ(hop_diameter(path), 4u);

    auto k4 = generate_graph(GraphKind::complete, 4, {}, 1);
    EXPECT_EQ(k4.edge_count(), 6u);
    std::set<Weight> ws;
    for (const auto& e : k4.edges()) {
        ws.insert(e.w);
    }
    EXPECT_EQ(ws.size(), 6u);
    EXPECT_EQ(hop_diameter(k4), 1u);
}

TEST(Graph, GeneratorIsDeterministic)
{
    auto a = generate_graph(GraphKind::erdos_renyi, 64, GraphParams{.p = 0.2}, 1);
    auto b = generate_graph(GraphKind::erdos_renyi, 64, GraphParams{.p = 0.2}, 1);
    std::ostringstream sa, sb;
    write_graph(sa, a);
    write_graph(sb, b);
    EXPECT_EQ(sa.str(), sb.str());
    auto c = generate_graph(GraphKind::erdos_renyi, 64, GraphParams{.p = 0.2}, 2);
    std::ostringstream sc;
    write_graph(sc, c);
    EXPECT_NE(sa.str(), sc.str());
}

TEST(Graph, AllKindsConnected)
{
    for (auto kind : {GraphKind::path, GraphKind::cycle, GraphKind::grid, GraphKind::complete, GraphKind::erdos_renyi,
                      GraphKind::geometric, GraphKind::tree_plus_edges, GraphKind::cycle_plus_chords}) {
        for (std::size_t n : {1u, 2u, 7u, 30u}) {
            GraphParams prm;
            prm.p = 0.3;
            prm.radius = 0.4;
            prm.extra_edges = n;
            if (n < 3 && (kind == GraphKind::cycle || kind == GraphKind::cycle_plus_chords)) {
                EXPECT_THROW(generate_graph(kind, n, prm, 11), GraphError);
                continue;
            }
            auto g = generate_graph(kind, n, prm, 11);
            EXPECT_EQ(g.node_count(), n) << to_string(kind);
            EXPECT_EQ(parse_graph_kind(to_string(kind)), kind);
        }
    }
    EXPECT_THROW(parse_graph_kind("hypercube"), GraphError);
}

TEST(Graph, GridDiameterMatchesAllPairsBfs)
{
    GraphParams prm;
    prm.width = 3;
    auto g = generate_graph(GraphKind::grid, 9, prm, 5);
    EXPECT_EQ(g.edge_count(), 12u);
    std::size_t d = 0;
    auto adj = g.adjacency();
    for (NodeId v = 0; v < 9; ++v) {
        for (auto x : bfs_distances(adj, v)) {
            d = std::max<std::size_t>(d, static_cast<std::size_t>(x));
        }
    }
    EXPECT_EQ(d, 4u);
    EXPECT_EQ(hop_diameter(g), 4u);
}

TEST(Kruskal, TriangleAndTree)
{
    auto g = triangle();
    auto mst = canonical_edges(g, kruskal_mst(g));
    ASSERT_EQ(mst.size(), 2u);
    EXPECT_EQ(mst[0], (Edge{0, 1, 1}));
    EXPECT_EQ(mst[1], (Edge{1, 2, 2}));

    auto tree = generate_graph(GraphKind::tree_plus_edges, 20, {}, 4);
    EXPECT_EQ(kruskal_mst(tree).size(), tree.edge_count());
}

TEST(Kruskal, MatchesExhaustiveEnumeration)
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        // 8 nodes, 14 edges.
        GraphParams prm;
        prm.extra_edges = 7;
        auto g = generate_graph(GraphKind::tree_plus_edges, 8, prm, seed);
        ASSERT_EQ(g.edge_count(), 14u);
        auto a = kruskal_mst(g);
        auto b = brute_force_mst(g);
        std::sort(a.begin(), a.end());
        EXPECT_EQ(a, b);
    }
}

TEST(Kruskal, CycleProperty)
{
    auto g = generate_graph(GraphKind::erdos_renyi, 48, GraphParams{.p = 0.15}, 9);
    auto mst = kruskal_mst(g);
    std::set<std::size_t> in(mst.begin(), mst.end());
    ASSERT_EQ(mst.size(), g.node_count() - 1);
    Adjacency tree(g.node_count());
    std::map<std::pair<NodeId, NodeId>, Weight> w;
    for (auto i : mst) {
        const auto& e = g.edge(i);
        tree[static_cast<std::size_t>(e.u)].push_back(e.v);
        tree[static_cast<std::size_t>(e.v)].push_back(e.u);
        w[std::minmax(e.u, e.v)] = e.w;
    }
    for (std::size_t i = 0; i < g.edge_count(); ++i) {
        if (in.count(i)) {
            continue;
        }
        const auto& e = g.edge(i);
        // Max weight on the tree path u..v must be below w(e).
        std::vector<NodeId> par(g.node_count(), kNoNode);
        std::vector<char> seen(g.node_count(), 0);
        std::vector<NodeId> st{e.u};
        seen[static_cast<std::size_t>(e.u)] = 1;
        while (!st.empty()) {
            auto x = st.back();
            st.pop_back();
            for (auto y : tree[static_cast<std::size_t>(x)]) {
                if (!seen[static_cast<std::size_t>(y)]) {
                    seen[static_cast<std::size_t>(y)] = 1;
                    par[static_cast<std::size_t>(y)] = x;
                    st.push_back(y);
                }
            }
        }
        Weight mx = 0;
        for (NodeId x = e.v; x != e.u; x = par[static_cast<std::size_t>(x)]) {
            mx = std::max(mx, w[std::minmax(x, par[static_cast<std::size_t>(x)])]);
        }
        EXPECT_LT(mx, e.w);
    }
}

TEST(ClusterGraph, Examples)
{
    auto g = generate_graph(GraphKind::cycle, 6, {}, 2);
    auto single = induced_cluster_graph(g, Partition::singletons(6));
    EXPECT_EQ(single.clusters.size(), 6u);
    std::size_t deg = 0;
    for (const auto& a : single.adjacency) {
        deg += a.size();
    }
    EXPECT_EQ(deg, 12u);

    Partition one;
    one.cluster_of.assign(6, 0);
    one.parent = {kNoNode, 0, 1, 2, 3, 4};
    auto cg1 = induced_cluster_graph(g, one);
    EXPECT_EQ(cg1.clusters.size(), 1u);
    EXPECT_TRUE(cg1.adjacency[0].empty());

    Partition two;
    two.cluster_of = {0, 0, 0, 3, 3, 3};
    two.parent = {kNoNode, 0, 1, kNoNode, 3, 4};
    auto cg2 = induced_cluster_graph(g, two);
    ASSERT_EQ(cg2.clusters.size(), 2u);
    EXPECT_EQ(cg2.adjacency[0], std::vector<NodeId>{1});
    EXPECT_EQ(cg2.adjacency[1], std::vector<NodeId>{0});
    EXPECT_EQ(cg2.witness.size(), 1u);

    Partition bad;
    bad.cluster_of = {0, 0};
    EXPECT_THROW(induced_cluster_graph(g, bad), GraphError);
}

TEST(ClusterGraph, ValidatePartition)
{
    auto g = generate_graph(GraphKind::erdos_renyi, 30, GraphParams{.p = 0.2}, 8);
    auto r = validate_partition(g, Partition::singletons(30), 0);
    EXPECT_DOUBLE_EQ(r.cut_fraction, 1.0);
    EXPECT_EQ(r.max_strong_diameter, 0u);

    Partition one;
    one.cluster_of.assign(30, 0);
    one.parent.assign(30, kNoNode);
    auto adj = g.adjacency();
    auto dist = bfs_distances(adj, 0);
    for (NodeId v = 1; v < 30; ++v) {
        for (auto u : adj[static_cast<std::size_t>(v)]) {
            if (dist[static_cast<std::size_t>(u)] + 1 == dist[static_cast<std::size_t>(v)]) {
                one.parent[static_cast<std::size_t>(v)] = u;
                break;
            }
        }
    }
    auto r1 = validate_partition(g, one, 1000);
    EXPECT_DOUBLE_EQ(r1.cut_fraction, 0.0);
    EXPECT_EQ(r1.max_strong_diameter, hop_diameter(g));
}

TEST(GraphFile, RoundTripAndRejectsDuplicates)
{
    auto g = generate_graph(GraphKind::geometric, 25, GraphParams{.radius = 0.4}, 3);
    std::stringstream ss;
    write_graph(ss, g);
    auto h = read_graph(ss);
    EXPECT_EQ(h.edges(), g.edges());

    std::stringstream dup("3 3\n0 1 1\n1 2 1\n0 2 3\n");
    EXPECT_THROW(read_graph(dup), GraphError);
}
