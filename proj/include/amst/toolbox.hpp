#pragma once

// Tree primitives with termination detection, the alpha and beta
// synchronizers, and the reference leader election. All procedures are
// coroutines run by every participating node with the same tag.

#include "amst/coro.hpp"
#include "amst/graph.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <vector>

namespace amst {

// Message kinds. Values must stay below 64 (filters use a bit mask).
namespace msg {
enum : std::uint16_t {
    down = 1,
    up = 2,
    cid_query = 3,
    cid_reply = 4,
    up_item = 5,
    up_done = 6,
    up_ack = 7,
    down_item = 8,
    down_ack = 9,
    le_wave = 10,
    le_echo = 11,
    le_done = 12,
    alpha_msg = 13,
    alpha_ack = 14,
    alpha_pulse = 15,
    sync_go = 16,
    sync_done = 17,
    toolbox_end = 20,
};
}  // namespace msg

// Packs up to four 16-bit fields into an instance tag.
inline constexpr std::uint64_t make_tag(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0, std::uint64_t d = 0)
{
    return (a & 0xffff) << 48 | (b & 0xffff) << 32 | (c & 0xffff) << 16 | (d & 0xffff);
}

// Local view of a rooted tree: parent port (-1 at the root) and child ports.
struct TreeView {
    Port parent = -1;
    std::vector<Port> children;

    bool is_root() const { return parent < 0; }
    bool is_tree_port(Port p) const
    {
        return p == parent || std::find(children.begin(), children.end(), p) != children.end();
    }
};

struct FragmentView : TreeView {
    ClusterId fragment_id = 0;
    ClusterId cluster_id = 0;
};

// Builds per-node views from global parent pointers (kNoNode marks roots).
inline std::vector<TreeView> views_from_parents(const WeightedGraph& g, const std::vector<NodeId>& parent)
{
    std::vector<TreeView> views(g.node_count());
    for (NodeId v = 0; v < static_cast<NodeId>(g.node_count()); ++v) {
        const NodeId p = parent[static_cast<std::size_t>(v)];
        if (p == kNoNode) {
            continue;
        }
        auto up = g.port_to(v, p);
        if (!up) {
            throw GraphError("tree edge " + std::to_string(v) + "-" + std::to_string(p) + " is not a graph edge");
        }
        views[static_cast<std::size_t>(v)].parent = *up;
        views[static_cast<std::size_t>(p)].children.push_back(*g.port_to(p, v));
    }
    for (auto& tv : views) {
        std::sort(tv.children.begin(), tv.children.end());
    }
    return views;
}

inline std::vector<FragmentView> fragment_views(const WeightedGraph& g, const Partition& p)
{
    auto views = views_from_parents(g, p.parent);
    std::vector<FragmentView> out(g.node_count());
    for (std::size_t v = 0; v < out.size(); ++v) {
        static_cast<TreeView&>(out[v]) = views[v];
        out[v].fragment_id = p.cluster_of[v];
        out[v].cluster_id = p.cluster_of[v];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Wave primitives

// Root-to-leaves pass: returns the root's payload at every node.
inline Task<Payload> tree_down(Node& nd, const TreeView& t, std::uint16_t kind, std::uint64_t tag, Payload at_root)
{
    Payload m = at_root;
    if (!t.is_root()) {
        auto in = co_await nd.recv(kind, tag, t.parent);
        m = in.msg;
    }
    m.kind = kind;
    m.tag = tag;
    for (Port c : t.children) {
        nd.send(c, m);
    }
    co_return m;
}

// One message of `kind` from every child, in arrival order.
inline Task<std::vector<Inbound>> gather_children(Node& nd, const TreeView& t, std::uint16_t kind, std::uint64_t tag)
{
    std::vector<Inbound> got;
    got.reserve(t.children.size());
    for (std::size_t i = 0; i < t.children.size(); ++i) {
        auto in = co_await nd.recv(kind, tag);
        got.push_back(std::move(in));
    }
    co_return got;
}

inline void send_up(Node& nd, const TreeView& t, std::uint16_t kind, std::uint64_t tag, Payload m)
{
    if (!t.is_root()) {
        m.kind = kind;
        m.tag = tag;
        nd.send(t.parent, m);
    }
}

// Convergecast folding child payloads into `acc` with `combine`. Returns the
// subtree aggregate (the global one at the root).
template <class Combine>
Task<Payload> tree_up(Node& nd, const TreeView& t, std::uint64_t tag, Payload acc, Combine combine)
{
    auto got = co_await gather_children(nd, t, msg::up, tag);
    for (const auto& in : got) {
        acc = combine(acc, in.msg);
    }
    send_up(nd, t, msg::up, tag, acc);
    co_return acc;
}

// Broadcast from the root plus an ack convergecast; 2(size-1) messages.
inline Task<Payload> frag_bcast(Node& nd, const TreeView& t, std::uint64_t tag, Payload at_root)
{
    auto m = co_await tree_down(nd, t, msg::down, tag, at_root);
    co_await tree_up(nd, t, tag, Payload{}, [](Payload a, const Payload&) { return a; });
    co_return m;
}

// Subtree size at every node; the root gets the tree size.
inline Task<std::int64_t> tree_count(Node& nd, const TreeView& t, std::uint64_t tag)
{
    co_await tree_down(nd, t, msg::down, tag, Payload{});
    auto r = co_await tree_up(nd, t, tag, Payload(0, 0, {1}),
                              [](Payload a, const Payload& b) { return Payload(0, 0, {a[0] + b[0]}); });
    co_return r[0];
}

struct DiamInfo {
    std::int64_t height = 0;  // hops to the deepest node below
    std::int64_t diameter = 0;  // longest path inside the subtree
};

// Tree diameter in hops at the root (subtree values elsewhere).
inline Task<DiamInfo> diam_calc(Node& nd, const TreeView& t, std::uint64_t tag)
{
    co_await tree_down(nd, t, msg::down, tag, Payload{});
    auto got = co_await gather_children(nd, t, msg::up, tag);
    std::int64_t h1 = -1, h2 = -1, best = 0;
    for (const auto& in : got) {
        const auto h = in.msg[0] + 1;
        best = std::max(best, in.msg[1]);
        if (h > h1) {
            h2 = h1;
            h1 = h;
        } else if (h > h2) {
            h2 = h;
        }
    }
    DiamInfo info;
    info.height = std::max<std::int64_t>(h1, 0);
    info.diameter = std::max({best, info.height, h1 + std::max<std::int64_t>(h2, 0)});
    send_up(nd, t, msg::up, tag, Payload(0, 0, {info.height, info.diameter}));
    co_return info;
}

// ---------------------------------------------------------------------------
// Minimum outgoing edge

struct MoeTuple {
    NodeId u = kNoNode;  // endpoint inside the fragment
    NodeId v = kNoNode;  // endpoint outside
    Weight w = 0;
    ClusterId c = 0;   // cluster of u
    ClusterId c2 = 0;  // cluster of v

    friend bool operator==(const MoeTuple&, const MoeTuple&) = default;
};

inline Payload encode_moe(const std::optional<MoeTuple>& m)
{
    if (!m) {
        return Payload(0, 0, {0});
    }
    return Payload(0, 0, {1, m->u, m->v, m->w, m->c, m->c2});
}

inline std::optional<MoeTuple> decode_moe(const Payload& p, std::size_t at = 0)
{
    if (p[at] == 0) {
        return std::nullopt;
    }
    return MoeTuple{p[at + 1], p[at + 2], p[at + 3], p[at + 4], p[at + 5]};
}

inline std::optional<MoeTuple> lighter(const std::optional<MoeTuple>& a, const std::optional<MoeTuple>& b)
{
    if (!a) return b;
    if (!b) return a;
    return a->w <= b->w ? a : b;
}

// Makes the node answer cluster-id queries from neighbours, whatever it is
// doing at the time. `cid` must outlive the node program.
inline void serve_cluster_queries(Node& nd, const ClusterId& cid)
{
    nd.serve(msg::cid_query, [&cid](Node& self, Port p, const Payload& q) {
        self.send(p, msg::cid_reply, q.tag, {self.id(), cid});
    });
}

// Queries the cluster id across every non-tree port and folds the lightest
// edge leading to another cluster up the tree. The root gets the fragment's
// MOE; other nodes get their subtree's.
inline Task<std::optional<MoeTuple>> find_moe(Node& nd, const TreeView& t, std::uint64_t tag, ClusterId my_cid)
{
    co_await tree_down(nd, t, msg::down, tag, Payload{});
    std::size_t asked = 0;
    for (Port p = 0; p < nd.ports(); ++p) {
        if (!t.is_tree_port(p)) {
            nd.send(p, msg::cid_query, tag);
            ++asked;
        }
    }
    std::optional<MoeTuple> best;
    for (std::size_t i = 0; i < asked; ++i) {
        auto in = co_await nd.recv(msg::cid_reply, tag);
        if (in.msg[1] != my_cid) {
            best = lighter(best, MoeTuple{nd.id(), in.msg[0], nd.weight(in.port), my_cid, in.msg[1]});
        }
    }
    auto got = co_await gather_children(nd, t, msg::up, tag);
    for (const auto& in : got) {
        best = lighter(best, decode_moe(in.msg));
    }
    send_up(nd, t, msg::up, tag, encode_moe(best));
    co_return best;
}

// ---------------------------------------------------------------------------
// Upcast and downcast

// Items travel to the root, forwarded immediately at every hop. The root
// stops once `enough(items)` holds and then broadcasts termination with an
// ack convergecast. Every node returns the items it saw, tagged with the
// port they arrived on (-1 for its own).
template <class Enough>
Task<std::vector<Inbound>> upcast(Node& nd, const TreeView& t, std::uint64_t tag, std::vector<Payload> own,
                                  Enough enough, SimTime* collected_at = nullptr)
{
    std::vector<Inbound> seen;
    for (auto& m : own) {
        seen.push_back({-1, m});
        send_up(nd, t, msg::up_item, tag, m);
    }
    if (t.is_root()) {
        while (!enough(seen)) {
            auto in = co_await nd.recv(msg::up_item, tag);
            seen.push_back(std::move(in));
        }
        if (collected_at) {
            *collected_at = nd.now();
        }
    } else {
        for (;;) {
            auto in = co_await nd.recv(Filter{kind_mask(msg::up_item, msg::up_done), tag});
            if (in.msg.kind == msg::up_done) {
                break;
            }
            send_up(nd, t, msg::up_item, tag, in.msg);
            seen.push_back(std::move(in));
        }
    }
    for (Port c : t.children) {
        nd.send(c, msg::up_done, tag);
    }
    co_await gather_children(nd, t, msg::up_ack, tag);
    send_up(nd, t, msg::up_ack, tag, Payload{});
    co_return seen;
}

// Variant for callers that know how many items will come up from the
// children's subtrees: no termination wave is needed.
inline Task<std::vector<Inbound>> upcast_counted(Node& nd, const TreeView& t, std::uint64_t tag,
                                                 std::vector<Payload> own, std::size_t from_children)
{
    std::vector<Inbound> seen;
    for (auto& m : own) {
        seen.push_back({-1, m});
        send_up(nd, t, msg::up_item, tag, m);
    }
    for (std::size_t i = 0; i < from_children; ++i) {
        auto in = co_await nd.recv(msg::up_item, tag);
        send_up(nd, t, msg::up_item, tag, in.msg);
        seen.push_back(std::move(in));
    }
    co_return seen;
}

class RoutingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Word 0 of every downcast item is its destination node. `expected` is the
// number of items destined into this node's subtree (ignored at the root,
// which holds `at_root`). `route(dest)` gives the child port towards dest,
// or -1 for the node itself. Acks run back only over the edges that carried
// items. Returns the items addressed to this node.
template <class Route>
Task<std::vector<Payload>> downcast(Node& nd, const TreeView& t, std::uint64_t tag, std::vector<Payload> at_root,
                                    std::size_t expected, Route route)
{
    std::vector<Payload> mine;
    std::map<Port, std::size_t> forwarded;
    auto dispatch = [&](Payload m) {
        const auto dest = static_cast<NodeId>(m[0]);
        const Port p = route(dest);
        if (p < 0) {
            mine.push_back(m);
            return;
        }
        if (!t.is_tree_port(p) || p == t.parent) {
            throw RoutingError("no route from node " + std::to_string(nd.id()) + " to " + std::to_string(dest));
        }
        m.kind = msg::down_item;
        m.tag = tag;
        nd.send(p, m);
        ++forwarded[p];
    };
    if (t.is_root()) {
        for (auto& m : at_root) {
            dispatch(m);
        }
    } else {
        if (expected == 0) {
            co_return mine;
        }
        for (std::size_t i = 0; i < expected; ++i) {
            auto in = co_await nd.recv(msg::down_item, tag, t.parent);
            dispatch(in.msg);
        }
    }
    for (std::size_t i = 0; i < forwarded.size(); ++i) {
        auto in = co_await nd.recv(msg::down_ack, tag);
        if (in.msg[0] != static_cast<std::int64_t>(forwarded.at(in.port))) {
            throw ProtocolError("downcast ack count mismatch at node " + std::to_string(nd.id()));
        }
    }
    if (!t.is_root()) {
        nd.send(t.parent, msg::down_ack, tag, {static_cast<std::int64_t>(expected)});
    }
    co_return mine;
}

// ---------------------------------------------------------------------------
// Beta synchronizer

// One synchronized step over tree T: the root's `go` reaches every node,
// the body runs, and a convergecast of OR-ed flags reports completion. The
// root starts step s+1 only after step s's convergecast.
struct BetaSync {
    const TreeView* tree;
    std::uint64_t seq = 0;  // advanced in lock-step at every node

    std::uint64_t tag() const { return make_tag(0xbe7a, seq >> 32, (seq >> 16) & 0xffff, seq & 0xffff); }

    Task<Payload> go(Node& nd, Payload at_root) { return tree_down(nd, *tree, msg::sync_go, tag(), at_root); }

    // Returns the OR of all flags (at the root; the subtree OR elsewhere).
    Task<std::int64_t> done(Node& nd, std::int64_t flag)
    {
        const auto t = tag();
        ++seq;
        return done_impl(nd, tree, t, flag);
    }

private:
    static Task<std::int64_t> done_impl(Node& nd, const TreeView* tree, std::uint64_t tag, std::int64_t flag)
    {
        auto got = co_await gather_children(nd, *tree, msg::sync_done, tag);
        for (const auto& in : got) {
            flag |= in.msg[0];
        }
        send_up(nd, *tree, msg::sync_done, tag, Payload(0, 0, {flag}));
        co_return flag;
    }
};

// Runs `body(p)` for p = 0..phases-1, each inside one beta step.
template <class Body>
Task<void> beta_counter(Node& nd, const TreeView& t, std::size_t phases, Body body)
{
    BetaSync sync{&t};
    for (std::size_t p = 0; p < phases; ++p) {
        co_await sync.go(nd, Payload(0, 0, {static_cast<std::int64_t>(p)}));
        co_await body(p);
        co_await sync.done(nd, 0);
    }
}

// ---------------------------------------------------------------------------
// Alpha synchronizer

// A synchronous round-based algorithm as seen by one node.
class RoundNode {
public:
    virtual ~RoundNode() = default;
    // At most one message per port.
    virtual std::vector<std::pair<Port, Payload>> emit(int round) = 0;
    // Messages of this round, sorted by port.
    virtual void absorb(int round, const std::vector<Inbound>& in) = 0;
    virtual bool finished() const { return true; }
};

class RoundBudgetExhausted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Each message is acknowledged; once all of a round's messages are acked the
// node sends a pulse to every neighbour, and it moves on after collecting
// one pulse per neighbour.
inline Task<void> alpha_simulate(Node& nd, std::uint64_t tag, RoundNode& rn, int rounds)
{
    for (int r = 0; r < rounds; ++r) {
        const auto rt = tag + static_cast<std::uint64_t>(r);
        auto out = rn.emit(r);
        std::vector<char> used(nd.degree(), 0);
        for (auto& [p, m] : out) {
            if (used[static_cast<std::size_t>(p)]++) {
                throw ContractViolation("round program sent twice on one port");
            }
            m.kind = msg::alpha_msg;
            m.tag = rt;
            nd.send(p, m);
        }
        std::size_t acks = 0, pulses = 0;
        bool pulsed = false;
        std::vector<Inbound> in;
        auto maybe_pulse = [&] {
            if (!pulsed && acks == out.size()) {
                pulsed = true;
                for (Port p = 0; p < nd.ports(); ++p) {
                    nd.send(p, msg::alpha_pulse, rt);
                }
            }
        };
        maybe_pulse();
        while (!(pulsed && pulses == nd.degree())) {
            auto got = co_await nd.recv(Filter{kind_mask(msg::alpha_msg, msg::alpha_ack, msg::alpha_pulse), rt});
            if (got.msg.kind == msg::alpha_msg) {
                nd.send(got.port, msg::alpha_ack, rt);
                in.push_back(std::move(got));
            } else if (got.msg.kind == msg::alpha_ack) {
                ++acks;
                maybe_pulse();
            } else {
                ++pulses;
            }
        }
        std::sort(in.begin(), in.end(), [](const Inbound& a, const Inbound& b) { return a.port < b.port; });
        rn.absorb(r, in);
    }
    if (!rn.finished()) {
        throw RoundBudgetExhausted("round program unfinished after " + std::to_string(rounds) + " rounds");
    }
}

// Lock-step reference executor for a round program.
using RoundFactory = std::function<std::unique_ptr<RoundNode>(NodeId id, std::size_t n, std::size_t degree)>;

inline std::vector<std::unique_ptr<RoundNode>> lockstep_simulate(const WeightedGraph& g, const RoundFactory& make,
                                                                 int rounds)
{
    const auto n = g.node_count();
    std::vector<std::unique_ptr<RoundNode>> nodes;
    for (NodeId v = 0; v < static_cast<NodeId>(n); ++v) {
        nodes.push_back(make(v, n, g.degree(v)));
    }
    for (int r = 0; r < rounds; ++r) {
        std::vector<std::vector<Inbound>> inbox(n);
        for (NodeId v = 0; v < static_cast<NodeId>(n); ++v) {
            for (auto& [p, m] : nodes[static_cast<std::size_t>(v)]->emit(r)) {
                const auto& pe = g.ports(v)[static_cast<std::size_t>(p)];
                inbox[static_cast<std::size_t>(pe.neighbor)].push_back({pe.remote_port, m});
            }
        }
        for (std::size_t v = 0; v < n; ++v) {
            std::sort(inbox[v].begin(), inbox[v].end(), [](const Inbound& a, const Inbound& b) { return a.port < b.port; });
            nodes[v]->absorb(r, inbox[v]);
        }
    }
    for (const auto& rn : nodes) {
        if (!rn->finished()) {
            throw RoundBudgetExhausted("round program unfinished after " + std::to_string(rounds) + " rounds");
        }
    }
    return nodes;
}

// ---------------------------------------------------------------------------
// Leader election

struct LeaderInfo {
    NodeId leader = kNoNode;
    TreeView tree;  // the winner's echo tree, rooted at the leader
};

// Echo with extinction: every node starts a wave carrying its id when it
// wakes, waves of smaller ids die out, and the largest id's echo completes
// at its initiator, which then broadcasts the result over its echo tree.
inline Task<LeaderInfo> leader_elect(Node& nd, std::uint64_t tag)
{
    NodeId best = nd.id();
    Port parent = -1;
    std::size_t pending = nd.degree();
    std::vector<Port> children;
    for (Port p = 0; p < nd.ports(); ++p) {
        nd.send(p, msg::le_wave, tag, {best});
    }
    auto echo_if_complete = [&] {
        if (pending == 0 && parent >= 0) {
            nd.send(parent, msg::le_echo, tag, {best});
        }
    };
    for (;;) {
        if (pending == 0 && best == nd.id()) {
            break;  // our own wave came back complete: we are the leader
        }
        auto in = co_await nd.recv(Filter{kind_mask(msg::le_wave, msg::le_echo, msg::le_done), tag});
        const NodeId id = in.msg[0];
        if (in.msg.kind == msg::le_done) {
            parent = in.port;
            break;
        }
        if (id < best) {
            continue;
        }
        if (in.msg.kind == msg::le_wave && id > best) {
            best = id;
            parent = in.port;
            children.clear();
            pending = nd.degree() - 1;
            for (Port p = 0; p < nd.ports(); ++p) {
                if (p != parent) {
                    nd.send(p, msg::le_wave, tag, {best});
                }
            }
            echo_if_complete();
            continue;
        }
        // Same wave: a wave on a non-tree edge or an echo from a child.
        if (in.msg.kind == msg::le_echo) {
            children.push_back(in.port);
        }
        --pending;
        echo_if_complete();
    }
    std::sort(children.begin(), children.end());
    LeaderInfo info;
    info.leader = best;
    info.tree.parent = best == nd.id() ? -1 : parent;
    info.tree.children = children;
    for (Port c : children) {
        nd.send(c, msg::le_done, tag, {best});
    }
    co_return info;
}

}  // namespace amst
