#include "amst/toolbox.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace amst;

namespace {

// Multi-source BFS growth from k random seeds: connected fragments with
// BFS trees, cluster id = seed node.
Partition random_fragments(const WeightedGraph& g, std::size_t k, std::uint64_t seed)
{
    const auto n = g.node_count();
    std::mt19937_64 rng(seed);
    std::vector<NodeId> order(n);
    std::iota(order.begin(), order.end(), NodeId{0});
    std::shuffle(order.begin(), order.end(), rng);
    Partition p;
    p.cluster_of.assign(n, -1);
    p.parent.assign(n, kNoNode);
    std::vector<NodeId> frontier;
    for (std::size_t i = 0; i < k; ++i) {
        p.cluster_of[static_cast<std::size_t>(order[i])] = order[i];
        frontier.push_back(order[i]);
    }
    while (!frontier.empty()) {
        std::vector<NodeId> next;
        for (auto v : frontier) {
            for (const auto& pe : g.ports(v)) {
                auto& c = p.cluster_of[static_cast<std::size_t>(pe.neighbor)];
                if (c < 0) {
                    c = p.cluster_of[static_cast<std::size_t>(v)];
                    p.parent[static_cast<std::size_t>(pe.neighbor)] = v;
                    next.push_back(pe.neighbor);
                }
            }
        }
        frontier = std::move(next);
    }
    return p;
}

// Uniform random labelled tree (random attachment).
WeightedGraph random_tree(std::size_t n, std::uint64_t seed) { return generate_graph(GraphKind::tree_plus_edges, n, {}, seed); }

// Parents of a BFS tree of g rooted at r.
std::vector<NodeId> bfs_parents(const WeightedGraph& g, NodeId r)
{
    std::vector<NodeId> par(g.node_count(), kNoNode);
    auto dist = bfs_distances(g.adjacency(), r);
    for (NodeId v = 0; v < static_cast<NodeId>(g.node_count()); ++v) {
        for (const auto& pe : g.ports(v)) {
            if (dist[static_cast<std::size_t>(pe.neighbor)] + 1 == dist[static_cast<std::size_t>(v)]) {
                par[static_cast<std::size_t>(v)] = pe.neighbor;
                break;
            }
        }
    }
    return par;
}

std::size_t tree_depth(const std::vector<NodeId>& par)
{
    std::size_t d = 0;
    for (std::size_t v = 0; v < par.size(); ++v) {
        std::size_t k = 0;
        for (NodeId x = static_cast<NodeId>(v); par[static_cast<std::size_t>(x)] != kNoNode; x = par[static_cast<std::size_t>(x)]) {
            ++k;
        }
        d = std::max(d, k);
    }
    return d;
}

// Double-BFS diameter oracle on a tree.
std::size_t tree_diameter_oracle(const WeightedGraph& tree)
{
    auto adj = tree.adjacency();
    auto d0 = bfs_distances(adj, 0);
    auto far = static_cast<NodeId>(std::max_element(d0.begin(), d0.end()) - d0.begin());
    auto d1 = bfs_distances(adj, far);
    return static_cast<std::size_t>(*std::max_element(d1.begin(), d1.end()));
}

RunOptions unit_all() { return RunOptions{}; }

// Neighbour handshake so nobody terminates while a query may still reach it.
Task<void> quiesce(Node& nd)
{
    for (Port p = 0; p < nd.ports(); ++p) {
        nd.send(p, 60, 0);
    }
    for (Port p = 0; p < nd.ports(); ++p) {
        co_await nd.recv(60, 0);
    }
}

RunOptions uniform_opts(std::uint64_t seed)
{
    RunOptions o;
    o.delays = {DelayKind::uniform, seed};
    o.seed = seed;
    return o;
}

}  // namespace

TEST(FragBcast, SingletonStarAndPath)
{
    {
        auto g = generate_graph(GraphKind::path, 1, {}, 0);
        auto views = views_from_parents(g, {kNoNode});
        auto r = run_program(g, [&](Node& nd) -> Task<void> {
            auto m = co_await frag_bcast(nd, views[0], 1, Payload(0, 0, {42}));
            EXPECT_EQ(m[0], 42);
        }, unit_all());
        EXPECT_EQ(r.message_count, 0u);
        EXPECT_TRUE(r.terminated);
    }
    {
        const std::size_t k = 6;
        std::vector<Edge> es;
        for (NodeId v = 1; v <= static_cast<NodeId>(k); ++v) {
            es.push_back({0, v, v});
        }
        WeightedGraph star(k + 1, es);
        std::vector<NodeId> par(k + 1, 0);
        par[0] = kNoNode;
        auto views = views_from_parents(star, par);
        std::vector<std::int64_t> got(k + 1, -1);
        auto r = run_program(star, [&](Node& nd) -> Task<void> {
            auto m = co_await frag_bcast(nd, views[static_cast<std::size_t>(nd.id())], 1, Payload(0, 0, {7}));
            got[static_cast<std::size_t>(nd.id())] = m[0];
        }, unit_all());
        EXPECT_EQ(r.message_count, 2 * k);
        EXPECT_LE(r.completion_time.as_units(), 2.0);
        EXPECT_EQ(std::count(got.begin(), got.end(), 7), static_cast<long>(k + 1));
    }
    {
        auto g = generate_graph(GraphKind::path, 9, {}, 0);
        auto par = bfs_parents(g, 0);
        auto views = views_from_parents(g, par);
        auto r = run_program(g, [&](Node& nd) -> Task<void> {
            co_await frag_bcast(nd, views[static_cast<std::size_t>(nd.id())], 1, Payload(0, 0, {1}));
        }, unit_all());
        EXPECT_LE(r.completion_time.as_units(), 2.0 * 8);
        EXPECT_EQ(r.message_count, 16u);
    }
}

TEST(TreeCount, ExactSizes)
{
    for (std::size_t n : {1u, 5u, 33u}) {
        auto g = n == 5 ? generate_graph(GraphKind::path, 5, {}, 0) : random_tree(n, n);
        auto par = bfs_parents(g, 0);
        auto views = views_from_parents(g, par);
        std::int64_t at_root = -1;
        auto r = run_program(g, [&](Node& nd) -> Task<void> {
            auto c = co_await tree_count(nd, views[static_cast<std::size_t>(nd.id())], 3);
            if (nd.id() == 0) {
                at_root = c;
            }
        }, uniform_opts(n));
        EXPECT_EQ(at_root, static_cast<std::int64_t>(n));
        EXPECT_EQ(r.message_count, 2 * (n - 1));
        EXPECT_NO_THROW(account(r));
    }
}

TEST(DiamCalc, StarPathAndDoubleBfsOracle)
{
    auto diam_of = [](const WeightedGraph& tree, NodeId root) {
        auto views = views_from_parents(tree, bfs_parents(tree, root));
        std::int64_t d = -1;
        auto r = run_program(tree, [&](Node& nd) -> Task<void> {
            auto info = co_await diam_calc(nd, views[static_cast<std::size_t>(nd.id())], 4);
            if (nd.id() == root) {
                d = info.diameter;
            }
        }, uniform_opts(static_cast<std::uint64_t>(root) + 1));
        EXPECT_LE(r.message_count, 2 * (tree.node_count() - 1));
        return d;
    };
    std::vector<Edge> es;
    for (NodeId v = 1; v < 6; ++v) {
        es.push_back({0, v, v});
    }
    WeightedGraph star(6, es);
    EXPECT_EQ(diam_of(star, 0), 2);
    EXPECT_EQ(diam_of(star, 3), 2);
    EXPECT_EQ(diam_of(generate_graph(GraphKind::path, 10, {}, 0), 4), 9);
    for (std::uint64_t s = 0; s < 25; ++s) {
        auto t = random_tree(20 + s, s);
        EXPECT_EQ(diam_of(t, static_cast<NodeId>(s % t.node_count())), static_cast<std::int64_t>(tree_diameter_oracle(t)));
    }
}

TEST(Upcast, ZeroItemsOnlyTermination)
{
    auto g = random_tree(12, 2);
    auto views = views_from_parents(g, bfs_parents(g, 0));
    auto r = run_program(g, [&](Node& nd) -> Task<void> {
        auto seen = co_await upcast(nd, views[static_cast<std::size_t>(nd.id())], 5, {},
                                    [](const std::vector<Inbound>& s) { return s.empty(); });
        EXPECT_TRUE(seen.empty());
    }, unit_all());
    EXPECT_EQ(r.message_count, 2u * 11);
}

TEST(Upcast, DeepLeafPipelining)
{
    auto g = generate_graph(GraphKind::path, 4, {}, 0);
    auto views = views_from_parents(g, bfs_parents(g, 0));
    SimTime done{};
    auto r = run_program(g, [&](Node& nd) -> Task<void> {
        std::vector<Payload> own;
        if (nd.id() == 3) {
            own = {Payload(0, 0, {10}), Payload(0, 0, {11})};
        }
        auto seen = co_await upcast(nd, views[static_cast<std::size_t>(nd.id())], 5, own,
                                    [](const std::vector<Inbound>& s) { return s.size() == 2; }, &done);
        if (nd.id() == 0) {
            EXPECT_EQ(seen.size(), 2u);
        }
    }, unit_all());
    EXPECT_LE(done.as_units(), 4.0);
    EXPECT_LE(r.message_count, 2u * 3 + 2 * 3);
}

TEST(Upcast, RandomPlacementsDeliverExactly)
{
    for (std::uint64_t s = 0; s < 20; ++s) {
        auto g = random_tree(16, 100 + s);
        auto par = bfs_parents(g, 0);
        auto views = views_from_parents(g, par);
        std::mt19937_64 rng(s);
        std::vector<std::vector<Payload>> own(16);
        std::multiset<std::int64_t> expect;
        for (int i = 0; i < 5; ++i) {
            const auto v = rng() % 16;
            own[v].push_back(Payload(0, 0, {1000 + i}));
            expect.insert(1000 + i);
        }
        std::multiset<std::int64_t> got;
        auto r = run_program(g, [&](Node& nd) -> Task<void> {
            auto seen = co_await upcast(nd, views[static_cast<std::size_t>(nd.id())], 6, own[static_cast<std::size_t>(nd.id())],
                                        [](const std::vector<Inbound>& x) { return x.size() == 5; });
            if (nd.id() == 0) {
                for (auto& in : seen) {
                    got.insert(in.msg[0]);
                }
            }
        }, uniform_opts(s));
        EXPECT_EQ(got, expect);
        EXPECT_LE(r.message_count, 5 * tree_depth(par) + 2 * 15);
        EXPECT_TRUE(r.terminated);
        EXPECT_NO_THROW(account(r));
    }
}

TEST(Downcast, Examples)
{
    // Complete binary tree of depth 3 (15 nodes), heap numbering.
    std::vector<Edge> es;
    std::vector<NodeId> par(15, kNoNode);
    for (NodeId v = 1; v < 15; ++v) {
        es.push_back({(v - 1) / 2, v, v});
        par[static_cast<std::size_t>(v)] = (v - 1) / 2;
    }
    WeightedGraph g(15, es);
    auto views = views_from_parents(g, par);
    auto in_subtree = [](NodeId root, NodeId x) {
        while (x > root) {
            x = (x - 1) / 2;
        }
        return x == root;
    };
    auto run_with = [&](std::vector<NodeId> dests) {
        std::vector<std::vector<Payload>> delivered(15);
        auto r = run_program(g, [&](Node& nd) -> Task<void> {
            const auto v = nd.id();
            const auto& tv = views[static_cast<std::size_t>(v)];
            std::vector<Payload> items;
            if (v == 0) {
                for (auto d : dests) {
                    items.push_back(Payload(0, 0, {d, 500 + d}));
                }
            }
            std::size_t expected = 0;
            for (auto d : dests) {
                expected += in_subtree(v, d);
            }
            auto route = [&](NodeId d) -> Port {
                if (d == v) {
                    return -1;
                }
                for (Port c : tv.children) {
                    // children are 2v+1, 2v+2 in port order
                    const NodeId child = g.ports(v)[static_cast<std::size_t>(c)].neighbor;
                    if (in_subtree(child, d)) {
                        return c;
                    }
                }
                return tv.parent;
            };
            delivered[static_cast<std::size_t>(v)] = co_await downcast(nd, tv, 9, items, expected, route);
        }, uniform_opts(dests.size()));
        EXPECT_TRUE(r.terminated);
        return std::make_pair(r, delivered);
    };
    auto [r0, d0] = run_with({});
    EXPECT_EQ(r0.message_count, 0u);
    auto [r1, d1] = run_with({0});
    EXPECT_EQ(r1.message_count, 0u);
    EXPECT_EQ(d1[0].size(), 1u);
    auto [r3, d3] = run_with({7, 10, 14});
    for (NodeId leaf : {7, 10, 14}) {
        ASSERT_EQ(d3[static_cast<std::size_t>(leaf)].size(), 1u);
        EXPECT_EQ(d3[static_cast<std::size_t>(leaf)][0][1], 500 + leaf);
    }
    // 3 items * 3 hops, plus one ack per marked edge (8 edges).
    EXPECT_EQ(r3.message_count, 9u + 8u);
    EXPECT_LE(r3.message_count, 3 * 3 + 14u);

    EXPECT_THROW(run_with({99}), RoutingError);
}

TEST(FindMoe, TwoFragmentsAndNoMoe)
{
    // Fragments {0,1} and {2,3}; crossing edges weights 5 and 7.
    WeightedGraph g(4, {{0, 1, 1}, {2, 3, 2}, {0, 2, 5}, {1, 3, 7}});
    Partition p;
    p.cluster_of = {0, 0, 2, 2};
    p.parent = {kNoNode, 0, kNoNode, 2};
    auto views = fragment_views(g, p);
    std::map<NodeId, std::optional<MoeTuple>> res;
    auto r = run_program(g, [&](Node& nd) -> Task<void> {
        const auto& fv = views[static_cast<std::size_t>(nd.id())];
        const ClusterId cid = fv.cluster_id;
        serve_cluster_queries(nd, cid);
        auto m = co_await find_moe(nd, fv, 11, cid);
        if (fv.is_root()) {
            res[nd.id()] = m;
        }
        co_await quiesce(nd);
    }, unit_all());
    ASSERT_TRUE(res[0].has_value());
    EXPECT_EQ(*res[0], (MoeTuple{0, 2, 5, 0, 2}));
    EXPECT_EQ(*res[2], (MoeTuple{2, 0, 5, 2, 0}));
    EXPECT_TRUE(r.terminated);

    Partition one;
    one.cluster_of = {0, 0, 0, 0};
    one.parent = {kNoNode, 0, 0, 1};
    auto v1 = fragment_views(g, one);
    std::optional<MoeTuple> none = MoeTuple{};
    run_program(g, [&](Node& nd) -> Task<void> {
        const auto& fv = v1[static_cast<std::size_t>(nd.id())];
        const ClusterId cid = fv.cluster_id;
        serve_cluster_queries(nd, cid);
        auto m = co_await find_moe(nd, fv, 11, cid);
        if (fv.is_root()) {
            none = m;
        }
        co_await quiesce(nd);
    }, unit_all());
    EXPECT_FALSE(none.has_value());
}

TEST(FindMoe, RandomPartitionsMatchBruteForce)
{
    for (std::uint64_t s = 0; s < 30; ++s) {
        auto g = generate_graph(GraphKind::erdos_renyi, 32, GraphParams{.p = 0.15}, s);
        auto p = random_fragments(g, 4, s);
        auto views = fragment_views(g, p);
        std::map<ClusterId, std::optional<MoeTuple>> got;
        auto r = run_program(g, [&](Node& nd) -> Task<void> {
            const auto& fv = views[static_cast<std::size_t>(nd.id())];
            const ClusterId cid = fv.cluster_id;
            serve_cluster_queries(nd, cid);
            auto m = co_await find_moe(nd, fv, 12, cid);
            if (fv.is_root()) {
                got[cid] = m;
            }
            co_await quiesce(nd);
        }, uniform_opts(s));
        EXPECT_TRUE(r.terminated);
        std::map<ClusterId, std::optional<MoeTuple>> want;
        std::map<ClusterId, std::size_t> deg_sum, size;
        for (NodeId v = 0; v < 32; ++v) {
            const auto c = p.cluster_of[static_cast<std::size_t>(v)];
            want.try_emplace(c);
            deg_sum[c] += g.degree(v);
            ++size[c];
            for (const auto& pe : g.ports(v)) {
                const auto c2 = p.cluster_of[static_cast<std::size_t>(pe.neighbor)];
                if (c2 != c && (!want[c] || pe.weight < want[c]->w)) {
                    want[c] = MoeTuple{v, pe.neighbor, pe.weight, c, c2};
                }
            }
        }
        EXPECT_EQ(got, want);
        std::size_t ceiling = 0;
        for (auto& [c, d] : deg_sum) {
            ceiling += 2 * d + 4 * (size[c] - 1);
        }
        EXPECT_LE(r.message_count - 2 * g.edge_count(), ceiling);
    }
}

TEST(BetaCounter, StarAndPath)
{
    std::vector<Edge> es;
    for (NodeId v = 1; v < 5; ++v) {
        es.push_back({0, v, v});
    }
    WeightedGraph star(5, es);
    auto sv = views_from_parents(star, {kNoNode, 0, 0, 0, 0});
    auto empty_body = [](std::size_t) -> Task<void> { co_return; };
    auto r = run_program(star, [&](Node& nd) { return beta_counter(nd, sv[static_cast<std::size_t>(nd.id())], 1, empty_body); },
                         unit_all());
    EXPECT_EQ(r.message_count, 8u);
    EXPECT_LE(r.completion_time.as_units(), 4.0);

    auto r0 = run_program(star, [&](Node& nd) { return beta_counter(nd, sv[static_cast<std::size_t>(nd.id())], 0, empty_body); },
                          unit_all());
    EXPECT_EQ(r0.message_count, 0u);

    auto path = generate_graph(GraphKind::path, 5, {}, 0);
    auto pv = views_from_parents(path, bfs_parents(path, 0));
    std::vector<std::vector<std::size_t>> order(5);
    auto r3 = run_program(path, [&](Node& nd) {
        auto body = [&order, id = nd.id()](std::size_t p) -> Task<void> {
            order[static_cast<std::size_t>(id)].push_back(p);
            co_return;
        };
        return beta_counter(nd, pv[static_cast<std::size_t>(nd.id())], 3, body);
    }, unit_all());
    EXPECT_LE(r3.completion_time.as_units(), 3.0 * (2 * 4) + 4);
    for (auto& o : order) {
        EXPECT_EQ(o, (std::vector<std::size_t>{0, 1, 2}));
    }
}

namespace {

// Each round every node sends its current counter to all neighbours and
// adds up what it hears.
class NeighbourCounter : public RoundNode {
public:
    NeighbourCounter(NodeId id, std::size_t deg) : value_(id + 1), deg_(deg) {}
    std::vector<std::pair<Port, Payload>> emit(int) override
    {
        std::vector<std::pair<Port, Payload>> out;
        for (std::size_t p = 0; p < deg_; ++p) {
            out.emplace_back(static_cast<Port>(p), Payload(0, 0, {value_ % 1000}));
        }
        return out;
    }
    void absorb(int r, const std::vector<Inbound>& in) override
    {
        for (const auto& m : in) {
            value_ += m.msg[0] * (r + 1);
        }
        history_.push_back(value_);
    }
    std::vector<std::int64_t> history_;

private:
    std::int64_t value_;
    std::size_t deg_;
};

}  // namespace

TEST(AlphaSync, MatchesLockStepUnderEveryDelayModel)
{
    auto k4 = generate_graph(GraphKind::complete, 4, {}, 1);
    RoundFactory make = [](NodeId id, std::size_t, std::size_t deg) { return std::make_unique<NeighbourCounter>(id, deg); };
    auto ref = lockstep_simulate(k4, make, 3);
    for (auto dk : {DelayKind::unit, DelayKind::uniform, DelayKind::laggy_edge_adversary}) {
        std::vector<std::unique_ptr<NeighbourCounter>> nodes(4);
        RunOptions o;
        o.delays = {dk, 5};
        o.wakeup = WakeupSchedule::single(4, 2);
        auto r = run_program(k4, [&](Node& nd) {
            auto& slot = nodes[static_cast<std::size_t>(nd.id())];
            slot = std::make_unique<NeighbourCounter>(nd.id(), nd.degree());
            return alpha_simulate(nd, make_tag(1), *slot, 3);
        }, o);
        EXPECT_TRUE(r.terminated);
        for (std::size_t v = 0; v < 4; ++v) {
            EXPECT_EQ(nodes[v]->history_, static_cast<NeighbourCounter&>(*ref[v]).history_);
        }
    }
    std::vector<std::unique_ptr<NeighbourCounter>> nodes(4);
    auto r0 = run_program(k4, [&](Node& nd) {
        auto& slot = nodes[static_cast<std::size_t>(nd.id())];
        slot = std::make_unique<NeighbourCounter>(nd.id(), nd.degree());
        return alpha_simulate(nd, make_tag(1), *slot, 0);
    }, {});
    EXPECT_EQ(r0.message_count, 0u);
}

TEST(LeaderElect, MaxIdWinsEverywhere)
{
    {
        auto g = generate_graph(GraphKind::path, 1, {}, 0);
        NodeId l = kNoNode;
        run_program(g, [&](Node& nd) -> Task<void> {
            auto info = co_await leader_elect(nd, 1);
            l = info.leader;
        }, {});
        EXPECT_EQ(l, 0);
    }
    for (std::uint64_t s = 0; s < 10; ++s) {
        auto g = generate_graph(GraphKind::erdos_renyi, 64, GraphParams{.p = 0.2}, s);
        std::vector<NodeId> leader(64, kNoNode);
        std::vector<TreeView> trees(64);
        RunOptions o = uniform_opts(s);
        o.wakeup = s % 2 ? WakeupSchedule::staggered_uniform(64, s, 5.0) : WakeupSchedule::single_random(64, s);
        auto r = run_program(g, [&](Node& nd) -> Task<void> {
            auto info = co_await leader_elect(nd, 1);
            leader[static_cast<std::size_t>(nd.id())] = info.leader;
            trees[static_cast<std::size_t>(nd.id())] = info.tree;
        }, o);
        EXPECT_TRUE(r.terminated);
        EXPECT_NO_THROW(account(r));
        EXPECT_EQ(std::count(leader.begin(), leader.end(), 63), 64);
        // The echo tree is a spanning tree rooted at the leader.
        std::size_t roots = 0, child_links = 0;
        for (NodeId v = 0; v < 64; ++v) {
            const auto& t = trees[static_cast<std::size_t>(v)];
            roots += t.is_root();
            child_links += t.children.size();
            if (!t.is_root()) {
                const auto& pe = g.ports(v)[static_cast<std::size_t>(t.parent)];
                const auto& pt = trees[static_cast<std::size_t>(pe.neighbor)];
                EXPECT_TRUE(std::count(pt.children.begin(), pt.children.end(), pe.remote_port));
            }
        }
        EXPECT_EQ(roots, 1u);
        EXPECT_TRUE(trees[63].is_root());
        EXPECT_EQ(child_links, 63u);
    }
}
