#pragma once

// Weighted communication graphs, generators and sequential oracles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace amst {

using NodeId = std::int64_t;
using Weight = std::int64_t;
using ClusterId = std::int64_t;
using Port = std::int32_t;

inline constexpr NodeId kNoNode = -1;

class GraphError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Edge {
    NodeId u = 0;
    NodeId v = 0;
    Weight w = 0;

    friend bool operator==(const Edge&, const Edge&) = default;
};

// One incident edge seen from a node. Ports are numbered 0..deg-1 in the
// order edges were added.
struct PortEntry {
    NodeId neighbor = 0;
    std::size_t edge = 0;
    Weight weight = 0;
    Port remote_port = 0;
};

class WeightedGraph {
public:
    WeightedGraph() = default;

    // Validates everything the model requires: connected, simple, distinct
    // positive weights.
    WeightedGraph(std::size_t n, std::vector<Edge> edges) : n_(n), edges_(std::move(edges)), ports_(n)
    {
        if (n_ == 0) {
            throw GraphError("graph must have at least one node");
        }
        std::set<std::pair<NodeId, NodeId>> seen;
        std::set<Weight> weights;
        for (std::size_t i = 0; i < edges_.size(); ++i) {
            const Edge& e = edges_[i];
            if (e.u < 0 || e.v < 0 || static_cast<std::size_t>(e.u) >= n_ || static_cast<std::size_t>(e.v) >= n_) {
                throw GraphError("edge endpoint out of range");
            }
            if (e.u == e.v) {
                throw GraphError("self-loop at node " + std::to_string(e.u));
            }
            if (e.w <= 0) {
                throw GraphError("edge weights must be strictly positive");
            }
            if (!seen.insert(std::minmax(e.u, e.v)).second) {
                throw GraphError("parallel edge between " + std::to_string(e.u) + " and " + std::to_string(e.v));
            }
            if (!weights.insert(e.w).second) {
                throw GraphError("duplicate edge weight " + std::to_string(e.w));
            }
            auto& pu = ports_[static_cast<std::size_t>(e.u)];
            auto& pv = ports_[static_cast<std::size_t>(e.v)];
            const auto port_u = static_cast<Port>(pu.size());
            const auto port_v = static_cast<Port>(pv.size());
            pu.push_back({e.v, i, e.w, port_v});
            pv.push_back({e.u, i, e.w, port_u});
        }
        if (!is_connected()) {
            throw GraphError("graph is not connected");
        }
    }

    std::size_t node_count() const { return n_; }
    std::size_t edge_count() const { return edges_.size(); }
    const std::vector<Edge>& edges() const { return edges_; }
    const Edge& edge(std::size_t i) const { return edges_.at(i); }
    const std::vector<PortEntry>& ports(NodeId v) const { return ports_.at(static_cast<std::size_t>(v)); }
    std::size_t degree(NodeId v) const { return ports(v).size(); }

    std::optional<Port> port_to(NodeId u, NodeId v) const
    {
        const auto& ps = ports(u);
        for (std::size_t p = 0; p < ps.size(); ++p) {
            if (ps[p].neighbor == v) {
                return static_cast<Port>(p);
            }
        }
        return std::nullopt;
    }

    std::vector<std::vector<NodeId>> adjacency() const
    {
        std::vector<std::vector<NodeId>> adj(n_);
        for (std::size_t v = 0; v < n_; ++v) {
            for (const auto& p : ports_[v]) {
                adj[v].push_back(p.neighbor);
            }
        }
        return adj;
    }

private:
    bool is_connected() const
    {
        std::vector<char> seen(n_, 0);
        std::vector<std::size_t> stack{0};
        seen[0] = 1;
        std::size_t count = 1;
        while (!stack.empty()) {
            const auto v = stack.back();
            stack.pop_back();
            for (const auto& p : ports_[v]) {
                const auto w = static_cast<std::size_t>(p.neighbor);
                if (!seen[w]) {
                    seen[w] = 1;
                    ++count;
                    stack.push_back(w);
                }
            }
        }
        return count == n_;
    }

    std::size_t n_ = 0;
    std::vector<Edge> edges_;
    std::vector<std::vector<PortEntry>> ports_;
};

// ---------------------------------------------------------------------------
// Unweighted helpers

using Adjacency = std::vector<std::vector<NodeId>>;

// Distances from `src`; -1 for unreachable nodes.
inline std::vector<std::int64_t> bfs_distances(const Adjacency& adj, NodeId src)
{
    std::vector<std::int64_t> dist(adj.size(), -1);
    std::deque<NodeId> queue{src};
    dist[static_cast<std::size_t>(src)] = 0;
    while (!queue.empty()) {
        const NodeId v = queue.front();
        queue.pop_front();
        for (NodeId w : adj[static_cast<std::size_t>(v)]) {
            if (dist[static_cast<std::size_t>(w)] < 0) {
                dist[static_cast<std::size_t>(w)] = dist[static_cast<std::size_t>(v)] + 1;
                queue.push_back(w);
            }
        }
    }
    return dist;
}

inline std::size_t adjacency_diameter(const Adjacency& adj)
{
    std::int64_t best = 0;
    for (std::size_t v = 0; v < adj.size(); ++v) {
        for (auto d : bfs_distances(adj, static_cast<NodeId>(v))) {
            if (d < 0) {
                throw GraphError("diameter of a disconnected graph");
            }
            best = std::max(best, d);
        }
    }
    return static_cast<std::size_t>(best);
}

inline std::size_t hop_diameter(const WeightedGraph& g) { return adjacency_diameter(g.adjacency()); }

// ---------------------------------------------------------------------------
// Kruskal oracle

class DisjointSets {
public:
    explicit DisjointSets(std::size_t n) : parent_(n), rank_(n, 0)
    {
        std::iota(parent_.begin(), parent_.end(), std::size_t{0});
    }

    std::size_t find(std::size_t x)
    {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    bool unite(std::size_t a, std::size_t b)
    {
        a = find(a);
        b = find(b);
        if (a == b) {
            return false;
        }
        if (rank_[a] < rank_[b]) {
            std::swap(a, b);
        }
        parent_[b] = a;
        if (rank_[a] == rank_[b]) {
            ++rank_[a];
        }
        return true;
    }

private:
    std::vector<std::size_t> parent_;
    std::vector<std::uint8_t> rank_;
};

// Edge indices of the unique MST, ascending by weight.
inline std::vector<std::size_t> kruskal_mst(const WeightedGraph& g)
{
    std::vector<std::size_t> order(g.edge_count());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return g.edge(a).w < g.edge(b).w; });
    DisjointSets sets(g.node_count());
    std::vector<std::size_t> tree;
    for (auto i : order) {
        const auto& e = g.edge(i);
        if (sets.unite(static_cast<std::size_t>(e.u), static_cast<std::size_t>(e.v))) {
            tree.push_back(i);
        }
    }
    return tree;
}

// Canonical form of an edge set: (min, max, w) sorted by weight.
inline std::vector<Edge> canonical_edges(const WeightedGraph& g, const std::vector<std::size_t>& indices)
{
    std::vector<Edge> out;
    out.reserve(indices.size());
    for (auto i : indices) {
        auto e = g.edge(i);
        if (e.u > e.v) {
            std::swap(e.u, e.v);
        }
        out.push_back(e);
    }
    std::sort(out.begin(), out.end(), [](const Edge& a, const Edge& b) { return a.w < b.w; });
    return out;
}

// ---------------------------------------------------------------------------
// Partitions and cluster graphs

struct Partition {
    std::vector<ClusterId> cluster_of;
    // Tree parent per node inside its cluster; kNoNode marks the cluster root.
    std::vector<NodeId> parent;

    static Partition singletons(std::size_t n)
    {
        Partition p;
        p.cluster_of.resize(n);
        std::iota(p.cluster_of.begin(), p.cluster_of.end(), ClusterId{0});
        p.parent.assign(n, kNoNode);
        return p;
    }

    bool operator==(const Partition&) const = default;
};

struct ClusterGraph {
    std::vector<ClusterId> clusters;               // sorted
    Adjacency adjacency;                           // indices into `clusters`, sorted
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> witness;  // (i<j) -> edge index

    std::size_t index_of(ClusterId c) const
    {
        auto it = std::lower_bound(clusters.begin(), clusters.end(), c);
        if (it == clusters.end() || *it != c) {
            throw GraphError("unknown cluster " + std::to_string(c));
        }
        return static_cast<std::size_t>(it - clusters.begin());
    }
};

inline ClusterGraph induced_cluster_graph(const WeightedGraph& g, const Partition& p)
{
    if (p.cluster_of.size() != g.node_count()) {
        throw GraphError("partition does not cover every node");
    }
    ClusterGraph cg;
    cg.clusters = p.cluster_of;
    std::sort(cg.clusters.begin(), cg.clusters.end());
    cg.clusters.erase(std::unique(cg.clusters.begin(), cg.clusters.end()), cg.clusters.end());
    std::vector<std::set<NodeId>> adj(cg.clusters.size());
    for (std::size_t i = 0; i < g.edge_count(); ++i) {
        const auto& e = g.edge(i);
        auto a = cg.index_of(p.cluster_of[static_cast<std::size_t>(e.u)]);
        auto b = cg.index_of(p.cluster_of[static_cast<std::size_t>(e.v)]);
        if (a == b) {
            continue;
        }
        adj[a].insert(static_cast<NodeId>(b));
        adj[b].insert(static_cast<NodeId>(a));
        cg.witness.emplace(std::minmax(a, b), i);
    }
    cg.adjacency.resize(adj.size());
    for (std::size_t i = 0; i < adj.size(); ++i) {
        cg.adjacency[i].assign(adj[i].begin(), adj[i].end());
    }
    return cg;
}

struct PartitionReport {
    std::map<ClusterId, std::size_t> strong_diameter;
    std::map<ClusterId, std::size_t> tree_depth;
    std::size_t max_strong_diameter = 0;
    std::size_t max_tree_depth = 0;
    double cut_fraction = 0.0;
    bool within_bound = true;
};

// Strong diameters are measured inside each cluster's induced subgraph; tree
// depths follow the parent pointers stored in the partition.
inline PartitionReport validate_partition(const WeightedGraph& g, const Partition& p, std::size_t max_strong_diam)
{
    const auto n = g.node_count();
    if (p.cluster_of.size() != n || p.parent.size() != n) {
        throw GraphError("partition size mismatch");
    }
    PartitionReport r;
    std::size_t cut = 0;
    for (const auto& e : g.edges()) {
        if (p.cluster_of[static_cast<std::size_t>(e.u)] != p.cluster_of[static_cast<std::size_t>(e.v)]) {
            ++cut;
        }
    }
    r.cut_fraction = g.edge_count() == 0 ? 0.0 : static_cast<double>(cut) / static_cast<double>(g.edge_count());

    Adjacency inside(n);
    for (const auto& e : g.edges()) {
        if (p.cluster_of[static_cast<std::size_t>(e.u)] == p.cluster_of[static_cast<std::size_t>(e.v)]) {
            inside[static_cast<std::size_t>(e.u)].push_back(e.v);
            inside[static_cast<std::size_t>(e.v)].push_back(e.u);
        }
    }
    std::map<ClusterId, std::vector<NodeId>> members;
    for (std::size_t v = 0; v < n; ++v) {
        members[p.cluster_of[v]].push_back(static_cast<NodeId>(v));
    }
    for (const auto& [c, nodes] : members) {
        std::size_t diam = 0;
        for (NodeId v : nodes) {
            auto dist = bfs_distances(inside, v);
            for (NodeId w : nodes) {
                if (dist[static_cast<std::size_t>(w)] < 0) {
                    throw GraphError("cluster " + std::to_string(c) + " is not connected");
                }
                diam = std::max(diam, static_cast<std::size_t>(dist[static_cast<std::size_t>(w)]));
            }
        }
        std::size_t depth = 0;
        for (NodeId v : nodes) {
            std::size_t d = 0;
            for (NodeId x = v; p.parent[static_cast<std::size_t>(x)] != kNoNode; x = p.parent[static_cast<std::size_t>(x)]) {
                if (++d > n) {
                    throw GraphError("cycle in cluster tree");
                }
            }
            depth = std::max(depth, d);
        }
        r.strong_diameter[c] = diam;
        r.tree_depth[c] = depth;
        r.max_strong_diameter = std::max(r.max_strong_diameter, diam);
        r.max_tree_depth = std::max(r.max_tree_depth, depth);
    }
    r.within_bound = r.max_strong_diameter <= max_strong_diam;
    return r;
}

// ---------------------------------------------------------------------------
// Generators

enum class GraphKind { path, cycle, grid, complete, erdos_renyi, geometric, tree_plus_edges, cycle_plus_chords };

struct GraphParams {
    double p = 0.1;             // erdos_renyi edge probability
    double radius = 0.2;        // geometric connection radius in the unit square
    std::size_t width = 0;      // grid columns; 0 picks the largest divisor <= sqrt(n)
    std::size_t extra_edges = 0;  // tree_plus_edges / cycle_plus_chords
};

inline std::string to_string(GraphKind k)
{
    switch (k) {
    case GraphKind::path: return "path";
    case GraphKind::cycle: return "cycle";
    case GraphKind::grid: return "grid";
    case GraphKind::complete: return "complete";
    case GraphKind::erdos_renyi: return "erdos_renyi";
    case GraphKind::geometric: return "geometric";
    case GraphKind::tree_plus_edges: return "tree_plus_edges";
    case GraphKind::cycle_plus_chords: return "cycle_plus_chords";
    }
    return "?";
}

inline GraphKind parse_graph_kind(const std::string& s)
{
    for (auto k : {GraphKind::path, GraphKind::cycle, GraphKind::grid, GraphKind::complete, GraphKind::erdos_renyi,
                   GraphKind::geometric, GraphKind::tree_plus_edges, GraphKind::cycle_plus_chords}) {
        if (to_string(k) == s) {
            return k;
        }
    }
    throw GraphError("unknown graph kind '" + s + "'");
}

namespace detail {

inline std::vector<std::pair<NodeId, NodeId>> topology(GraphKind kind, std::size_t n, const GraphParams& prm,
                                                       std::mt19937_64& rng)
{
    std::vector<std::pair<NodeId, NodeId>> out;
    const auto N = static_cast<NodeId>(n);
    auto add_unique = [&](std::set<std::pair<NodeId, NodeId>>& seen, NodeId a, NodeId b) {
        if (a != b && seen.insert(std::minmax(a, b)).second) {
            out.emplace_back(a, b);
        }
    };
    switch (kind) {
    case GraphKind::path:
        for (NodeId v = 0; v + 1 < N; ++v) {
            out.emplace_back(v, v + 1);
        }
        break;
    case GraphKind::cycle:
        if (n < 3) {
            throw GraphError("cycle needs n >= 3");
        }
        for (NodeId v = 0; v < N; ++v) {
            out.emplace_back(v, (v + 1) % N);
        }
        break;
    case GraphKind::grid: {
        std::size_t w = prm.width;
        if (w == 0) {
            w = 1;
            for (std::size_t d = 1; d * d <= n; ++d) {
                if (n % d == 0) {
                    w = d;
                }
            }
        }
        if (n % w != 0) {
            throw GraphError("grid width must divide n");
        }
        const auto W = static_cast<NodeId>(w);
        for (NodeId v = 0; v < N; ++v) {
            if ((v % W) + 1 < W) {
                out.emplace_back(v, v + 1);
            }
            if (v + W < N) {
                out.emplace_back(v, v + W);
            }
        }
        break;
    }
    case GraphKind::complete:
        for (NodeId a = 0; a < N; ++a) {
            for (NodeId b = a + 1; b < N; ++b) {
                out.emplace_back(a, b);
            }
        }
        break;
    case GraphKind::erdos_renyi: {
        if (!(prm.p > 0.0 && prm.p <= 1.0)) {
            throw GraphError("erdos_renyi needs 0 < p <= 1");
        }
        std::bernoulli_distribution coin(prm.p);
        for (NodeId a = 0; a < N; ++a) {
            for (NodeId b = a + 1; b < N; ++b) {
                if (coin(rng)) {
                    out.emplace_back(a, b);
                }
            }
        }
        break;
    }
    case GraphKind::geometric: {
        if (!(prm.radius > 0.0)) {
            throw GraphError("geometric needs radius > 0");
        }
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        std::vector<std::pair<double, double>> pts(n);
        for (auto& pt : pts) {
            pt = {uni(rng), uni(rng)};
        }
        for (std::size_t a = 0; a < n; ++a) {
            for (std::size_t b = a + 1; b < n; ++b) {
                const double dx = pts[a].first - pts[b].first;
                const double dy = pts[a].second - pts[b].second;
                if (dx * dx + dy * dy <= prm.radius * prm.radius) {
                    out.emplace_back(static_cast<NodeId>(a), static_cast<NodeId>(b));
                }
            }
        }
        break;
    }
    case GraphKind::tree_plus_edges:
    case GraphKind::cycle_plus_chords: {
        std::set<std::pair<NodeId, NodeId>> seen;
        if (kind == GraphKind::tree_plus_edges) {
            for (NodeId v = 1; v < N; ++v) {
                std::uniform_int_distribution<NodeId> pick(0, v - 1);
                add_unique(seen, pick(rng), v);
            }
        } else {
            if (n < 3) {
                throw GraphError("cycle_plus_chords needs n >= 3");
            }
            for (NodeId v = 0; v < N; ++v) {
                add_unique(seen, v, (v + 1) % N);
            }
        }
        const std::size_t max_edges = n * (n - 1) / 2;
        const std::size_t target = std::min(max_edges, seen.size() + prm.extra_edges);
        std::uniform_int_distribution<NodeId> any(0, N - 1);
        while (seen.size() < target) {
            add_unique(seen, any(rng), any(rng));
        }
        break;
    }
    }
    return out;
}

inline bool connected(std::size_t n, const std::vector<std::pair<NodeId, NodeId>>& edges)
{
    DisjointSets s(n);
    std::size_t comps = n;
    for (auto [a, b] : edges) {
        if (s.unite(static_cast<std::size_t>(a), static_cast<std::size_t>(b))) {
            --comps;
        }
    }
    return comps == 1;
}

}  // namespace detail

inline constexpr int kMaxGenerateRetries = 200;

// Deterministic in (kind, n, params, seed). Random kinds that come out
// disconnected are regenerated with seed+1, up to kMaxGenerateRetries times.
inline WeightedGraph generate_graph(GraphKind kind, std::size_t n, const GraphParams& params, std::uint64_t seed)
{
    if (n == 0) {
        throw GraphError("n must be >= 1");
    }
    for (int attempt = 0; attempt < kMaxGenerateRetries; ++attempt) {
        std::mt19937_64 rng(seed + static_cast<std::uint64_t>(attempt));
        auto topo = detail::topology(kind, n, params, rng);
        if (!detail::connected(n, topo)) {
            if (kind == GraphKind::erdos_renyi || kind == GraphKind::geometric) {
                continue;
            }
            throw GraphError("generator produced a disconnected graph");
        }
        std::vector<Weight> weights(topo.size());
        std::iota(weights.begin(), weights.end(), Weight{1});
        std::shuffle(weights.begin(), weights.end(), rng);
        std::vector<Edge> edges;
        edges.reserve(topo.size());
        for (std::size_t i = 0; i < topo.size(); ++i) {
            edges.push_back({topo[i].first, topo[i].second, weights[i]});
        }
        return WeightedGraph(n, std::move(edges));
    }
    throw GraphError("could not generate a connected " + to_string(kind) + " graph");
}

// ---------------------------------------------------------------------------
// Text format: "n m" then m lines "u v w". Ports follow file order.

inline WeightedGraph read_graph(std::istream& in)
{
    std::size_t n = 0;
    std::size_t m = 0;
    if (!(in >> n >> m)) {
        throw GraphError("malformed graph header");
    }
    std::vector<Edge> edges(m);
    for (auto& e : edges) {
        if (!(in >> e.u >> e.v >> e.w)) {
            throw GraphError("malformed edge line");
        }
    }
    return WeightedGraph(n, std::move(edges));
}

inline void write_graph(std::ostream& out, const WeightedGraph& g)
{
    out << g.node_count() << ' ' << g.edge_count() << '\n';
    for (const auto& e : g.edges()) {
        out << e.u << ' ' << e.v << ' ' << e.w << '\n';
    }
}

inline void write_edges(std::ostream& out, std::vector<Edge> edges)
{
    std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) { return a.w < b.w; });
    for (const auto& e : edges) {
        out << e.u << ' ' << e.v << ' ' << e.w << '\n';
    }
}

}  // namespace amst
