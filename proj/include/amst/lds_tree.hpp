#pragma once

// Low-diameter rooted spanning tree (ST-Cons). Stage 1 repeats MPX on the
// current cluster graph and merges each super-cluster's trees (Transform);
// stage 2 grows a BFS tree over the final cluster graph from the root's
// cluster. A doubling guess of D restarts both stages until the BFS covers
// the graph.
//
// Two executions share every rule and every coin:
//   st_cons_direct   offline lock-step reference over global state
//   st_cons (Node&)  the asynchronous node program; cluster rounds are
//                    driven by each cluster root (broadcast, one message per
//                    inter-cluster edge, convergecast), which synchronizes
//                    neighbouring clusters like the alpha synchronizer.

#include "amst/mpx.hpp"

#include <map>
#include <set>

namespace amst {

namespace msg {
enum : std::uint16_t {
    st_down = 21,
    st_inter = 22,
    st_orient = 23,
    st_echo = 24,
    st_cid = 25,
    st_retry = 26,
    st_done = 27,
    st_flood = 28,
    st_flood_echo = 29,
    lds_end = 30,
};
}  // namespace msg

struct StConsOptions {
    double epsilon = 1.0;
    std::optional<double> beta = 0.1;  // nullopt: the formula value
    std::size_t stage2_rounds = 0;     // 0: automatic budget
    std::size_t max_attempts = 48;
};

inline constexpr std::uint64_t kShiftStream = 0x57;

// Round budget of the BFS stage for guess d; a guess of at least n always
// suffices because the cluster graph has fewer than n nodes.
inline std::size_t stage2_budget(std::size_t n, std::size_t d_guess, std::size_t forced = 0)
{
    if (forced > 0) {
        return d_guess >= n ? std::max(forced, n) : forced;
    }
    if (d_guess >= n) {
        return std::max<std::size_t>(n, 1);
    }
    const double ln = std::log(static_cast<double>(std::max<std::size_t>(n, 2)));
    return std::min(std::max<std::size_t>(n, 1), static_cast<std::size_t>(std::ceil(ln * ln)) + 1);
}

// The guess sequence 2, 4, 8, ...
inline std::size_t guess_for_attempt(std::size_t attempt)
{
    return attempt >= 62 ? std::numeric_limits<std::size_t>::max() / 2 : std::size_t{1} << attempt;
}

// Start round of a cluster in stage-1 level i, drawn by its root.
inline int cluster_start(std::uint64_t run_seed, NodeId root, std::size_t level, const LdsParams& p)
{
    const double d = sample_exponential(p.beta, unit_interval_open_closed(node_coin(run_seed, root, kShiftStream, level)));
    return start_time(d, p.delta_max);
}

// d_f <= 5 ln^{1+1/eps'} n * D^{1+eps}
inline double st_depth_envelope(std::size_t n, double epsilon, std::size_t diameter)
{
    const double ep = epsilon_prime_for(epsilon);
    const double ln = std::log(static_cast<double>(n));
    return 5.0 * std::pow(ln, 1.0 + 1.0 / ep) * std::pow(static_cast<double>(diameter), 1.0 + epsilon);
}

// ---------------------------------------------------------------------------
// Tree helpers over parent pointers

inline std::vector<std::size_t> tree_depths(const std::vector<NodeId>& parent)
{
    const auto n = parent.size();
    std::vector<std::size_t> depth(n, 0);
    std::vector<char> known(n, 0);
    for (std::size_t v = 0; v < n; ++v) {
        std::vector<std::size_t> path;
        std::size_t x = v;
        while (!known[x] && parent[x] != kNoNode) {
            path.push_back(x);
            x = static_cast<std::size_t>(parent[x]);
            if (path.size() > n) {
                throw GraphError("parent pointers contain a cycle");
            }
        }
        known[x] = 1;
        std::size_t d = depth[x];
        for (auto it = path.rbegin(); it != path.rend(); ++it) {
            depth[*it] = ++d;
            known[*it] = 1;
        }
    }
    return depth;
}

inline std::size_t tree_depth(const std::vector<NodeId>& parent)
{
    auto d = tree_depths(parent);
    return d.empty() ? 0 : *std::max_element(d.begin(), d.end());
}

inline Adjacency tree_adjacency(const std::vector<NodeId>& parent)
{
    Adjacency adj(parent.size());
    for (std::size_t v = 0; v < parent.size(); ++v) {
        if (parent[v] != kNoNode) {
            adj[v].push_back(parent[v]);
            adj[static_cast<std::size_t>(parent[v])].push_back(static_cast<NodeId>(v));
        }
    }
    return adj;
}

// True iff the pointers form one tree over all nodes rooted at `root`,
// using only edges of g.
inline bool is_spanning_tree(const WeightedGraph& g, const std::vector<NodeId>& parent, NodeId root)
{
    if (parent.size() != g.node_count() || parent[static_cast<std::size_t>(root)] != kNoNode) {
        return false;
    }
    for (std::size_t v = 0; v < parent.size(); ++v) {
        if (static_cast<NodeId>(v) != root && (parent[v] == kNoNode || !g.port_to(static_cast<NodeId>(v), parent[v]))) {
            return false;
        }
    }
    try {
        tree_depths(parent);
    } catch (const GraphError&) {
        return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Offline reference

// Clusters with their trees: cluster_of is the id of the cluster's root node
// and parent points towards that root.
struct LevelState {
    std::size_t level = 0;
    Partition partition;
};

inline LevelState singleton_level(std::size_t n)
{
    return LevelState{0, Partition::singletons(n)};
}

// Super-cluster of every level cluster plus the super-tree parent of every
// non-root cluster.
struct SuperPartition {
    std::map<ClusterId, ClusterId> super_of;
    std::map<ClusterId, ClusterId> super_parent;
};

struct ClusterFlood {
    SuperPartition sp;
    std::map<ClusterId, int> assigned_round;
    std::set<ClusterId> unassigned;
};

// Cluster-level MPX flooding: in round j every cluster assigned in round j-1
// offers its leader over all its inter-cluster edges; an unassigned cluster
// takes the smallest (leader, sender cluster) offered, or itself when its
// start round is j and its own id is smaller than every offer.
inline ClusterFlood cluster_flood_sync(const WeightedGraph& g, const LevelState& lv, const std::map<ClusterId, int>& start,
                                       int rounds)
{
    const auto& cof = lv.partition.cluster_of;
    std::set<ClusterId> clusters(cof.begin(), cof.end());
    std::map<ClusterId, ClusterId> leader;
    ClusterFlood out;
    for (int j = 1; j <= rounds; ++j) {
        std::map<ClusterId, std::pair<ClusterId, ClusterId>> offer;  // cluster -> (leader, sender)
        for (const auto& e : g.edges()) {
            const ClusterId a = cof[static_cast<std::size_t>(e.u)], b = cof[static_cast<std::size_t>(e.v)];
            if (a == b) {
                continue;
            }
            for (auto [from, to] : {std::pair{a, b}, std::pair{b, a}}) {
                auto rf = out.assigned_round.find(from);
                if (rf == out.assigned_round.end() || rf->second != j - 1 || leader.count(to)) {
                    continue;
                }
                std::pair<ClusterId, ClusterId> cand{leader[from], from};
                auto it = offer.find(to);
                if (it == offer.end() || cand < it->second) {
                    offer[to] = cand;
                }
            }
        }
        for (ClusterId c : clusters) {
            if (leader.count(c)) {
                continue;
            }
            auto s = start.find(c);
            const bool self = s != start.end() && s->second == j;
            auto o = offer.find(c);
            if (self && (o == offer.end() || c < o->second.first)) {
                leader[c] = c;
                out.assigned_round[c] = j;
            } else if (o != offer.end()) {
                leader[c] = o->second.first;
                out.sp.super_parent[c] = o->second.second;
                out.assigned_round[c] = j;
            }
        }
    }
    for (ClusterId c : clusters) {
        if (leader.count(c)) {
            out.sp.super_of[c] = leader[c];
        } else {
            out.unassigned.insert(c);
        }
    }
    return out;
}

// Merges the trees of every super-cluster. A child cluster C attaches to its
// super-parent C' through the edge (u, w), u in C', w in C, with the smallest
// id_w (lowest port at w on a tie) and is re-rooted at w. The combined tree
// is rooted at the root of the super-tree's root cluster, or at `root` for
// the super-cluster containing it.
inline LevelState transform(const WeightedGraph& g, const LevelState& lv, const SuperPartition& sp,
                            std::optional<NodeId> root = std::nullopt)
{
    const auto n = g.node_count();
    const auto& cof = lv.partition.cluster_of;
    std::set<ClusterId> clusters(cof.begin(), cof.end());
    for (ClusterId c : clusters) {
        if (!sp.super_of.count(c)) {
            throw GraphError("cluster " + std::to_string(c) + " has no super-cluster");
        }
    }
    for (const auto& [c, par] : sp.super_parent) {
        if (!clusters.count(c) || !clusters.count(par) || sp.super_of.at(c) != sp.super_of.at(par)) {
            throw GraphError("super-parent of cluster " + std::to_string(c) + " is inconsistent");
        }
    }
    // Attachment edges: cluster -> (w, port at w).
    std::map<ClusterId, std::pair<NodeId, Port>> attach;
    for (NodeId w = 0; w < static_cast<NodeId>(n); ++w) {
        const ClusterId c = cof[static_cast<std::size_t>(w)];
        auto sp_it = sp.super_parent.find(c);
        if (sp_it == sp.super_parent.end()) {
            continue;
        }
        const auto& ports = g.ports(w);
        for (std::size_t k = 0; k < ports.size(); ++k) {
            if (cof[static_cast<std::size_t>(ports[k].neighbor)] == sp_it->second) {
                auto it = attach.find(c);
                std::pair<NodeId, Port> cand{w, static_cast<Port>(k)};
                if (it == attach.end() || cand < it->second) {
                    attach[c] = cand;
                }
                break;  // lowest port at w
            }
        }
    }
    for (const auto& [c, par] : sp.super_parent) {
        if (!attach.count(c)) {
            throw GraphError("cluster " + std::to_string(c) + " is not adjacent to its super-parent");
        }
    }
    Adjacency comb = tree_adjacency(lv.partition.parent);
    for (const auto& [c, wp] : attach) {
        const NodeId u = g.ports(wp.first)[static_cast<std::size_t>(wp.second)].neighbor;
        comb[static_cast<std::size_t>(wp.first)].push_back(u);
        comb[static_cast<std::size_t>(u)].push_back(wp.first);
    }
    LevelState next;
    next.level = lv.level + 1;
    next.partition.cluster_of.assign(n, -1);
    next.partition.parent.assign(n, kNoNode);
    auto orient_from = [&](NodeId r) {
        std::vector<NodeId> stack{r};
        next.partition.cluster_of[static_cast<std::size_t>(r)] = r;
        while (!stack.empty()) {
            const NodeId v = stack.back();
            stack.pop_back();
            for (NodeId u : comb[static_cast<std::size_t>(v)]) {
                if (next.partition.cluster_of[static_cast<std::size_t>(u)] < 0) {
                    next.partition.cluster_of[static_cast<std::size_t>(u)] = r;
                    next.partition.parent[static_cast<std::size_t>(u)] = v;
                    stack.push_back(u);
                }
            }
        }
    };
    std::optional<ClusterId> root_super;
    if (root) {
        root_super = sp.super_of.at(cof[static_cast<std::size_t>(*root)]);
        orient_from(*root);
    }
    for (ClusterId c : clusters) {
        if (!sp.super_parent.count(c) && sp.super_of.at(c) != root_super) {
            orient_from(c);  // the cluster root is the node with id c
        }
    }
    for (std::size_t v = 0; v < n; ++v) {
        if (next.partition.cluster_of[v] < 0) {
            throw GraphError("super-cluster trees do not cover node " + std::to_string(v));
        }
    }
    return next;
}

// BFS over the cluster graph from the cluster holding `root`; layer = round-1.
inline ClusterFlood bfs_cluster_stage(const WeightedGraph& g, const LevelState& lv, NodeId root, std::size_t budget)
{
    std::map<ClusterId, int> start{{lv.partition.cluster_of[static_cast<std::size_t>(root)], 1}};
    return cluster_flood_sync(g, lv, start, static_cast<int>(budget));
}

struct StConsResult {
    std::vector<NodeId> parent;       // rooted at R
    std::size_t depth = 0;
    std::size_t diameter = 0;         // D'
    std::size_t d_guess = 0;          // guess of the successful attempt
    std::size_t attempts = 0;
    bool trivial = false;
    std::vector<LevelState> levels;   // stage-1 levels of the successful attempt
    std::vector<std::size_t> clusters_per_level;
};

inline void finish_result(StConsResult& r)
{
    r.depth = tree_depth(r.parent);
    r.diameter = adjacency_diameter(tree_adjacency(r.parent));
}

// BFS tree of g from r; parent = first port one hop closer.
inline std::vector<NodeId> bfs_tree(const WeightedGraph& g, NodeId r)
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

// One attempt of the reference with guess d; fills `res` on success.
inline bool st_cons_try(const WeightedGraph& g, NodeId root, const StConsOptions& o, std::uint64_t run_seed, std::size_t d,
                        StConsResult& res)
{
    const auto n = g.node_count();
    const auto p = derive_params(n, o.epsilon, d, o.beta);
    res.levels.assign(1, singleton_level(n));
    for (std::size_t i = 1; i <= p.i_max; ++i) {
        const auto& lv = res.levels.back();
        std::map<ClusterId, int> start;
        for (std::size_t v = 0; v < n; ++v) {
            if (lv.partition.parent[v] == kNoNode) {
                start[static_cast<ClusterId>(v)] = cluster_start(run_seed, static_cast<NodeId>(v), i, p);
            }
        }
        auto f = cluster_flood_sync(g, lv, start, static_cast<int>(p.delta_max) + 1);
        res.levels.push_back(transform(g, lv, f.sp));
    }
    auto bfs = bfs_cluster_stage(g, res.levels.back(), root, stage2_budget(n, d, o.stage2_rounds));
    if (!bfs.unassigned.empty()) {
        return false;
    }
    res.parent = transform(g, res.levels.back(), bfs.sp, root).partition.parent;
    res.d_guess = d;
    res.clusters_per_level.clear();
    for (const auto& lv : res.levels) {
        res.clusters_per_level.push_back(
            std::set<ClusterId>(lv.partition.cluster_of.begin(), lv.partition.cluster_of.end()).size());
    }
    finish_result(res);
    return true;
}

inline StConsResult st_cons_direct(const WeightedGraph& g, NodeId root, const StConsOptions& o, std::uint64_t run_seed)
{
    StConsResult res;
    if (derive_params(g.node_count(), o.epsilon, 2, o.beta).trivial) {
        res.trivial = true;
        res.attempts = 1;
        res.parent = bfs_tree(g, root);
        finish_result(res);
        return res;
    }
    for (std::size_t attempt = 1; attempt <= o.max_attempts; ++attempt) {
        if (st_cons_try(g, root, o, run_seed, guess_for_attempt(attempt), res)) {
            res.attempts = attempt;
            return res;
        }
    }
    throw std::runtime_error("ST-Cons: no guess succeeded within the attempt limit");
}

// ---------------------------------------------------------------------------
// Asynchronous node program

inline std::uint64_t st_tag(std::size_t attempt, std::size_t level, std::size_t round)
{
    return make_tag(0x5100 + attempt, level, round);
}

inline constexpr std::size_t kBfsLevel = 0x7ff;

struct StLevel {
    ClusterId cid = 0;
    TreeView tree;
    std::vector<ClusterId> port_cid;  // neighbour's cluster per non-tree port, -1 unknown

    bool inter(Port p) const { return !tree.is_tree_port(p) && port_cid[static_cast<std::size_t>(p)] != cid; }
};

struct FloodOut {
    bool assigned = false;
    ClusterId leader = -1;
    Port adopt_port = -1;          // our edge to the super-parent, if we are its w
    std::vector<Port> adopted_by;  // edges by which child clusters attached to us
    bool uncovered_neighbor = false;
};

// One cluster round: the root broadcasts its state, every node exchanges one
// message per inter-cluster edge, and a convergecast brings the best offer
// (leader, sender cluster, receiving node) to the root. A final flush round
// delivers the last adoptions and each cluster's assigned flag.
inline Task<FloodOut> st_flood(Node& nd, const StLevel& lv, std::size_t attempt, std::size_t level, int rounds, int start,
                               bool holds_root)
{
    FloodOut out;
    bool assigned = false, newly = false;
    ClusterId leader = -1;
    NodeId adopt_w = -1;
    Port best_port = -1;
    std::size_t inter = 0;
    for (Port p = 0; p < nd.ports(); ++p) {
        inter += lv.inter(p) ? 1 : 0;
    }
    const std::int64_t none = std::numeric_limits<std::int64_t>::max();
    for (int j = 1; j <= rounds + 1; ++j) {
        const bool flush = j == rounds + 1;
        const auto tag = st_tag(attempt, level, static_cast<std::size_t>(j));
        Payload head(msg::st_down, tag, {newly ? 1 : 0, leader, adopt_w, assigned ? 1 : 0});
        Payload b = co_await tree_down(nd, lv.tree, msg::st_down, tag, head);
        const bool adopt_me = b[2] == nd.id();
        if (adopt_me) {
            out.adopt_port = best_port;
        }
        for (Port p = 0; p < nd.ports(); ++p) {
            if (lv.inter(p)) {
                nd.send(p, msg::st_inter, tag, {b[0], b[1], lv.cid, adopt_me && p == best_port ? 1 : 0, b[3]});
            }
        }
        std::int64_t off_l = none, off_c = none;
        Port off_p = -1;
        for (std::size_t k = 0; k < inter; ++k) {
            auto in = co_await nd.recv(msg::st_inter, tag);
            if (in.msg[3] != 0) {
                out.adopted_by.push_back(in.port);
            }
            if (flush) {
                out.uncovered_neighbor |= in.msg[4] == 0;
            } else if (in.msg[0] != 0) {
                const std::tuple<std::int64_t, std::int64_t, Port> cand{in.msg[1], in.msg[2], in.port};
                if (cand < std::tuple{off_l, off_c, off_p < 0 ? std::numeric_limits<Port>::max() : off_p}) {
                    std::tie(off_l, off_c, off_p) = cand;
                }
            }
        }
        if (flush) {
            out.assigned = b[3] != 0;
            out.leader = b[1];
            break;
        }
        best_port = off_p;
        // {has, leader, sender cluster, receiving node, holds R}
        Payload acc(0, 0, {off_p >= 0 ? 1 : 0, off_p >= 0 ? off_l : 0, off_p >= 0 ? off_c : 0, off_p >= 0 ? nd.id() : 0,
                           holds_root ? 1 : 0});
        Payload agg = co_await tree_up(nd, lv.tree, tag, acc, [](Payload a, const Payload& c) {
            const bool take = c[0] != 0 && (a[0] == 0 || std::tuple{c[1], c[2], c[3]} < std::tuple{a[1], a[2], a[3]});
            Payload r = take ? c : a;
            r.words[4] = a[4] | c[4];
            return r;
        });
        if (lv.tree.is_root()) {
            newly = false;
            adopt_w = -1;
            if (!assigned) {
                const bool self = start == j || (j == 1 && agg[4] != 0);
                if (self && (agg[0] == 0 || lv.cid < agg[1])) {
                    assigned = newly = true;
                    leader = lv.cid;
                } else if (agg[0] != 0) {
                    assigned = newly = true;
                    leader = agg[1];
                    adopt_w = agg[3];
                }
            }
        }
    }
    co_return out;
}

struct OrientOut {
    TreeView tree;
    bool flag = false;  // OR over the subtree (echo mode)
};

// Orients the undirected combined tree away from the initiator. With `echo`
// the flags are OR-convergecast back to it.
inline Task<OrientOut> st_orient(Node& nd, const std::vector<Port>& comb, bool initiator, std::uint64_t tag, bool echo,
                                 bool flag)
{
    OrientOut o;
    if (!initiator) {
        auto in = co_await nd.recv(msg::st_orient, tag);
        o.tree.parent = in.port;
    }
    for (Port p : comb) {
        if (p != o.tree.parent) {
            o.tree.children.push_back(p);
            nd.send(p, msg::st_orient, tag);
        }
    }
    o.flag = flag;
    if (echo) {
        auto got = co_await gather_children(nd, o.tree, msg::st_echo, tag);
        for (const auto& in : got) {
            o.flag |= in.msg[0] != 0;
        }
        send_up(nd, o.tree, msg::st_echo, tag, Payload(0, 0, {o.flag ? 1 : 0}));
    }
    co_return o;
}

inline std::vector<Port> combined_ports(const TreeView& t, const FloodOut& f)
{
    std::vector<Port> c = t.children;
    if (t.parent >= 0) {
        c.push_back(t.parent);
    }
    if (f.adopt_port >= 0) {
        c.push_back(f.adopt_port);
    }
    c.insert(c.end(), f.adopted_by.begin(), f.adopted_by.end());
    std::sort(c.begin(), c.end());
    c.erase(std::unique(c.begin(), c.end()), c.end());
    return c;
}

// New cluster ids over every non-tree edge.
inline Task<void> st_exchange(Node& nd, StLevel& lv, std::uint64_t tag)
{
    std::size_t k = 0;
    for (Port p = 0; p < nd.ports(); ++p) {
        if (!lv.tree.is_tree_port(p)) {
            nd.send(p, msg::st_cid, tag, {lv.cid});
            ++k;
        }
    }
    for (std::size_t i = 0; i < k; ++i) {
        auto in = co_await nd.recv(msg::st_cid, tag);
        lv.port_cid[static_cast<std::size_t>(in.port)] = in.msg[0];
    }
}

// Echo flooding from R: each node answers every non-parent port once, with
// an echo if it adopted the sender.
inline Task<TreeView> st_flood_tree(Node& nd, NodeId root, std::uint64_t tag)
{
    TreeView t;
    if (nd.id() != root) {
        auto in = co_await nd.recv(msg::st_flood, tag);
        t.parent = in.port;
    }
    std::size_t expect = 0;
    for (Port p = 0; p < nd.ports(); ++p) {
        if (p != t.parent) {
            nd.send(p, msg::st_flood, tag);
            ++expect;
        }
    }
    for (std::size_t k = 0; k < expect; ++k) {
        auto in = co_await nd.recv(Filter{kind_mask(msg::st_flood, msg::st_flood_echo), tag});
        if (in.msg.kind == msg::st_flood_echo) {
            t.children.push_back(in.port);
        }
    }
    std::sort(t.children.begin(), t.children.end());
    if (t.parent >= 0) {
        nd.send(t.parent, msg::st_flood_echo, tag);
    }
    co_return t;
}

struct StConsOutcome {
    TreeView tree;
    std::size_t attempts = 0;
    std::size_t d_guess = 0;
    bool trivial = false;
};

inline Task<StConsOutcome> st_cons(Node& nd, NodeId root, StConsOptions o)
{
    StConsOutcome res;
    const auto n = nd.n();
    const bool is_root = nd.id() == root;
    if (derive_params(n, o.epsilon, 2, o.beta).trivial) {
        res.trivial = true;
        res.attempts = 1;
        res.tree = co_await st_flood_tree(nd, root, st_tag(0, 0, 0));
        co_return res;
    }
    for (std::size_t attempt = 1; attempt <= o.max_attempts; ++attempt) {
        const auto d = guess_for_attempt(attempt);
        const auto p = derive_params(n, o.epsilon, d, o.beta);
        StLevel lv{nd.id(), TreeView{}, std::vector<ClusterId>(nd.degree(), -1)};
        for (std::size_t i = 1; i <= p.i_max; ++i) {
            int start = 0;
            if (lv.tree.is_root()) {
                start = start_time(sample_exponential(p.beta, unit_interval_open_closed(nd.coin(kShiftStream, i))), p.delta_max);
            }
            auto f = co_await st_flood(nd, lv, attempt, i, static_cast<int>(p.delta_max) + 1, start, false);
            const bool init = lv.tree.is_root() && f.leader == lv.cid;
            auto ori = co_await st_orient(nd, combined_ports(lv.tree, f), init, st_tag(attempt, i, 0xfff0), false, false);
            lv.cid = f.leader;
            lv.tree = ori.tree;
            co_await st_exchange(nd, lv, st_tag(attempt, i, 0xfff1));
        }
        const auto budget = static_cast<int>(stage2_budget(n, d, o.stage2_rounds));
        auto f = co_await st_flood(nd, lv, attempt, kBfsLevel, budget, 0, is_root);
        const auto tag = st_tag(attempt, kBfsLevel, 0xfff2);
        bool success = false;
        if (f.assigned) {
            auto ori = co_await st_orient(nd, combined_ports(lv.tree, f), is_root, tag, true, f.uncovered_neighbor);
            res.tree = ori.tree;
            success = is_root && !ori.flag;
        }
        Port first = -1;
        if (is_root) {
            if (success) {
                for (Port c : res.tree.children) {
                    nd.send(c, msg::st_done, tag);
                }
                res.attempts = attempt;
                res.d_guess = d;
                co_return res;
            }
        } else {
            auto in = co_await nd.recv(Filter{kind_mask(msg::st_done, msg::st_retry), tag});
            if (in.msg.kind == msg::st_done) {
                for (Port c : res.tree.children) {
                    nd.send(c, msg::st_done, tag);
                }
                res.attempts = attempt;
                res.d_guess = d;
                co_return res;
            }
            first = in.port;
        }
        // Retry: flood over every edge in both directions, then drain.
        for (Port q = 0; q < nd.ports(); ++q) {
            nd.send(q, msg::st_retry, tag);
        }
        for (std::size_t k = first >= 0 ? 1 : 0; k < nd.degree(); ++k) {
            co_await nd.recv(msg::st_retry, tag);
        }
        res.tree = TreeView{};
    }
    throw std::runtime_error("ST-Cons: no guess succeeded within the attempt limit");
}

// ---------------------------------------------------------------------------
// Standalone runs

enum class StConsMode { direct_sync, async_simulated };

struct StConsRun {
    StConsResult result;
    RunReport report;  // empty for direct_sync
};

inline Task<void> st_cons_program(Node& nd, NodeId root, StConsOptions o, std::vector<StConsOutcome>& out)
{
    auto r = co_await st_cons(nd, root, o);
    out[static_cast<std::size_t>(nd.id())] = std::move(r);
}

inline StConsRun run_st_cons(const WeightedGraph& g, NodeId root, const StConsOptions& o, StConsMode mode,
                             const RunOptions& opt)
{
    StConsRun run;
    if (mode == StConsMode::direct_sync) {
        run.result = st_cons_direct(g, root, o, opt.seed);
        return run;
    }
    const auto n = g.node_count();
    std::vector<StConsOutcome> out(n);
    run.report = run_program(g, [&](Node& nd) { return st_cons_program(nd, root, o, out); }, opt);
    run.result.parent.assign(n, kNoNode);
    for (std::size_t v = 0; v < n; ++v) {
        const Port p = out[v].tree.parent;
        if (p >= 0) {
            run.result.parent[v] = g.ports(static_cast<NodeId>(v))[static_cast<std::size_t>(p)].neighbor;
        }
    }
    const auto& r = out[static_cast<std::size_t>(root)];
    run.result.attempts = r.attempts;
    run.result.d_guess = r.d_guess;
    run.result.trivial = r.trivial;
    finish_result(run.result);
    return run;
}

}  // namespace amst
