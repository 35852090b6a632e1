#pragma once

// The three-stage asynchronous MST algorithm.
//   Stage I    leader election, low-diameter spanning tree T rooted at the
//              leader, its diameter D' broadcast to everyone.
//   Stage II   Controlled-GHS: fragment phases driven by a beta synchronizer
//              over T (Steps 1-8), then a census of the base fragments.
//   Stage III  soft merging: base fragments keep their trees and only change
//              cluster ids, decided by the leader from one upcast tuple per
//              base fragment per phase.

#include "amst/lds_tree.hpp"

#include <set>

namespace amst {

namespace msg {
enum : std::uint16_t {
    ghs_id = 31,
    ghs_moe = 32,
    ghs_cv = 33,
    ghs_match = 34,
    ghs_incl = 35,
    ghs_wave = 36,
    ghs_echo = 37,
    ghs_root = 38,
    mst_mark = 39,
    mst_mark_ack = 40,
    mst_end = 41,
};
}  // namespace msg

enum StageTag : int { kStageOne = 1, kStageTwo = 2, kStageThree = 3 };

inline std::size_t log_star(std::size_t n)
{
    std::size_t k = 0;
    double x = static_cast<double>(n);
    while (x > 1.0) {
        x = std::log2(x);
        ++k;
    }
    return k;
}

inline std::size_t cv_rounds_for(std::size_t n) { return 2 * log_star(n) + 10; }

inline std::size_t ceil_log2(std::size_t x) { return x <= 1 ? 0 : static_cast<std::size_t>(std::bit_width(x - 1)); }

// max(ceil(log2 sqrt n), ceil(log2 D'))
inline std::size_t ghs_phase_count(std::size_t n, std::size_t dprime)
{
    const auto a = static_cast<std::size_t>(std::ceil(std::log2(std::sqrt(static_cast<double>(std::max<std::size_t>(n, 1)))) - 1e-12));
    return std::max(a, ceil_log2(dprime));
}

inline std::size_t stage3_phase_count(std::size_t n) { return ceil_log2(n); }

// One Cole-Vishkin step. Roots compare against their own colour with bit 0
// flipped, so they take 2*0 + bit0.
inline std::int64_t cole_vishkin_step(std::int64_t c, std::optional<std::int64_t> parent)
{
    const std::int64_t other = parent ? *parent : (c ^ 1);
    if (other == c) {
        throw ProtocolError("Cole-Vishkin: equal colours on a tree edge");
    }
    const auto diff = static_cast<std::uint64_t>(c ^ other);
    const auto k = static_cast<std::int64_t>(std::countr_zero(diff));
    return 2 * k + ((c >> k) & 1);
}

struct SingMstOptions {
    StConsOptions st;
    std::size_t cv_rounds = 0;  // 0: 2 ceil(log* n) + 10
};

// Observations written by node programs for tests and metrics. Nothing in
// the algorithm reads them.
struct GhsRecord {
    ClusterId fid = -1;           // fragment at the start of the phase
    bool active = false;
    std::optional<MoeTuple> moe;  // the fragment's MOE (every node knows it)
    std::int64_t color = -1;      // final colour (fragment roots only)
    ClusterId h_parent = -1;      // supergraph parent fragment, -1 at supergraph roots
    ClusterId partner = -1;       // matched fragment (fragment roots only)
    bool included = false;        // fragment's MOE is in the final supergraph
    ClusterId new_fid = -1;
    Port new_parent = -1;
};

struct SingMstTrace {
    NodeId leader = kNoNode;
    std::vector<Port> tree_parent;                 // T
    std::int64_t dprime = -1;
    std::size_t ghs_phases = 0;
    std::vector<std::vector<GhsRecord>> ghs;       // [phase][node]
    std::vector<ClusterId> base_fid;               // after Stage II
    std::vector<Port> base_parent;
    std::int64_t base_count = -1;
    std::vector<std::vector<ClusterId>> stage3_cid;  // [phase][node], after the phase
    std::vector<std::set<Port>> cluster_edges;

    void resize(std::size_t n)
    {
        tree_parent.assign(n, -1);
        base_fid.assign(n, -1);
        base_parent.assign(n, -1);
        cluster_edges.assign(n, {});
    }
};

// Per-node state; `cid` is read by the cluster-id service, so this lives
// outside the coroutine frames.
struct MstNode {
    NodeId leader = kNoNode;
    TreeView T;
    std::int64_t dprime = 0;
    ClusterId fid = 0;
    ClusterId cid = 0;
    TreeView ft;
    std::vector<NodeId> nb_id;
    std::int64_t base_count = 0;
    std::map<ClusterId, Port> route;  // fragment root -> child of T towards it
    std::size_t roots_below = 0;      // fragment roots in this node's T-subtree
    std::set<Port> cluster_edges;
};

inline std::uint64_t ghs_tag(std::size_t step, std::size_t phase, std::size_t sub = 0, std::size_t k = 0)
{
    return make_tag(0x6000 + step, phase, sub, k);
}

inline std::uint64_t s3_tag(std::size_t step, std::size_t phase, std::size_t sub = 0)
{
    return make_tag(0x7000 + step, phase, sub);
}

// ---------------------------------------------------------------------------
// Stage I

inline Task<void> stage1(Node& nd, MstNode& st, const SingMstOptions& o)
{
    nd.set_stage(kStageOne);
    auto le = co_await leader_elect(nd, make_tag(0x4c45));
    st.leader = le.leader;
    auto sc = co_await st_cons(nd, st.leader, o.st);
    st.T = sc.tree;
    auto di = co_await diam_calc(nd, st.T, make_tag(0x4400, 1));
    auto b = co_await frag_bcast(nd, st.T, make_tag(0x4400, 2), Payload(0, 0, {di.diameter}));
    st.dprime = b[0];
}

// ---------------------------------------------------------------------------
// Stage II

// What a node learnt about its neighbours' fragments in Step 3.
struct NeighbourMoe {
    ClusterId fid = -1;
    bool active = false;
    std::optional<MoeTuple> moe;
};

struct GhsLocal {
    bool active = false;
    std::optional<MoeTuple> moe;
    Port out_port = -1;   // our edge that is the fragment's MOE, if we are its inner endpoint
    bool mutual = false;  // the fragment across out_port chose the same edge
    bool listens = false;  // out_port leads to our supergraph parent
    std::vector<NeighbourMoe> nb;
    std::vector<Port> child_ports;  // MOEs of supergraph children ending at us
    std::map<Port, bool> child_matched;
    bool include = false;
    std::set<Port> included;  // cross edges re-added to the supergraph in Step 7
    // meaningful at the fragment root
    bool h_root = false;
    ClusterId h_parent = -1;
    std::int64_t color = 0;
    bool matched = false;
    bool matched_parent = false;
    ClusterId partner = -1;
    std::optional<ClusterId> min_unmatched_child;
};

inline Port port_with_weight(const Node& nd, Weight w)
{
    for (Port p = 0; p < nd.ports(); ++p) {
        if (nd.weight(p) == w) {
            return p;
        }
    }
    throw ProtocolError("node " + std::to_string(nd.id()) + " has no edge of weight " + std::to_string(w));
}

// Step 1: diameter check against 2^i, result broadcast in the fragment.
inline Task<void> ghs_activity(Node& nd, MstNode& st, GhsLocal& g, std::size_t ph)
{
    auto di = co_await diam_calc(nd, st.ft, ghs_tag(1, ph));
    const std::int64_t cap = std::int64_t{1} << ph;
    auto b = co_await frag_bcast(nd, st.ft, ghs_tag(1, ph, 1), Payload(0, 0, {di.diameter <= cap ? 1 : 0}));
    g.active = b[0] != 0;
}

// Step 2
inline Task<void> ghs_find(Node& nd, MstNode& st, GhsLocal& g, std::size_t ph)
{
    g.moe.reset();
    if (!g.active) {
        co_return;
    }
    auto m = co_await find_moe(nd, st.ft, ghs_tag(2, ph), st.cid);
    auto b = co_await frag_bcast(nd, st.ft, ghs_tag(2, ph, 1), encode_moe(m));
    g.moe = decode_moe(b);
}

// Step 3: MOE (or an explicit none) over every edge. A neighbour's MOE ends
// at us through port p iff its far endpoint is us and its weight is p's.
inline Task<void> ghs_tell(Node& nd, MstNode& st, GhsLocal& g, std::size_t ph)
{
    const auto tag = ghs_tag(3, ph);
    for (Port p = 0; p < nd.ports(); ++p) {
        if (g.moe) {
            nd.send(p, msg::ghs_moe, tag, {st.fid, 1, g.moe->u, g.moe->v, g.moe->w});
        } else {
            nd.send(p, msg::ghs_moe, tag, {st.fid, 0});
        }
    }
    g.nb.assign(nd.degree(), {});
    for (std::size_t i = 0; i < nd.degree(); ++i) {
        auto in = co_await nd.recv(msg::ghs_moe, tag);
        auto& e = g.nb[static_cast<std::size_t>(in.port)];
        e.fid = in.msg[0];
        e.active = in.msg[1] != 0;
        if (e.active) {
            e.moe = MoeTuple{in.msg[2], in.msg[3], in.msg[4], e.fid, st.cid};
        }
    }
    g.out_port = (g.moe && g.moe->u == nd.id()) ? port_with_weight(nd, g.moe->w) : -1;
    auto points_here = [&](Port p) {
        const auto& e = g.nb[static_cast<std::size_t>(p)];
        return e.moe && e.moe->v == nd.id() && e.moe->w == nd.weight(p);
    };
    g.mutual = g.out_port >= 0 && points_here(g.out_port);
    g.listens = g.out_port >= 0 && !(g.mutual && st.fid < g.nb[static_cast<std::size_t>(g.out_port)].fid);
    g.child_ports.clear();
    g.child_matched.clear();
    for (Port p = 0; p < nd.ports(); ++p) {
        if (p == g.out_port && g.listens) {
            continue;  // the smaller-id side of a core is the parent
        }
        if (points_here(p)) {
            g.child_ports.push_back(p);
            g.child_matched[p] = false;
        }
    }
}

// Step 4: root learns whether it is a supergraph root, its parent fragment
// and its smallest child.
inline Task<void> ghs_preprocess(Node& nd, MstNode& st, GhsLocal& g, std::size_t ph)
{
    const bool rootflag = g.out_port >= 0 && !g.listens;
    std::int64_t min_child = 0;
    for (std::size_t i = 0; i < g.child_ports.size(); ++i) {
        const auto f = g.nb[static_cast<std::size_t>(g.child_ports[i])].fid;
        min_child = i == 0 ? f : std::min(min_child, f);
    }
    const std::int64_t hp = g.listens ? g.nb[static_cast<std::size_t>(g.out_port)].fid : -1;
    Payload own(0, 0, {rootflag ? 1 : 0, g.child_ports.empty() ? 0 : 1, min_child, hp});
    auto agg = co_await tree_up(nd, st.ft, ghs_tag(4, ph), own, [](Payload a, const Payload& b) {
        std::int64_t mc = a[2];
        if (b[1] && (!a[1] || b[2] < a[2])) {
            mc = b[2];
        }
        return Payload(0, 0, {a[0] | b[0], a[1] | b[1], mc, std::max(a[3], b[3])});
    });
    if (!st.ft.is_root()) {
        co_return;
    }
    g.h_root = !g.moe || agg[0] != 0;
    g.h_parent = g.h_root ? -1 : agg[3];
    if (g.h_root == (agg[3] >= 0)) {
        throw ProtocolError("fragment " + std::to_string(st.fid) + ": inconsistent supergraph parent");
    }
    if (agg[1]) {
        g.min_unmatched_child = agg[2];
    } else {
        g.min_unmatched_child.reset();
    }
    g.color = st.fid;
    g.matched = g.matched_parent = false;
    g.partner = -1;
}

// Step 5, one Cole-Vishkin round: the root's colour goes down the fragment
// and over incoming MOEs; the parent's colour comes up from our listener.
inline Task<void> ghs_cv_round(Node& nd, MstNode& st, GhsLocal& g, std::size_t ph, std::size_t r)
{
    auto b = co_await tree_down(nd, st.ft, msg::ghs_cv, ghs_tag(5, ph, r, 0), Payload(0, 0, {g.color}));
    for (Port p : g.child_ports) {
        nd.send(p, msg::ghs_cv, ghs_tag(5, ph, r, 1), {b[0]});
    }
    Payload own(0, 0, {0, 0});
    if (g.listens) {
        auto in = co_await nd.recv(msg::ghs_cv, ghs_tag(5, ph, r, 1), g.out_port);
        own = Payload(0, 0, {1, in.msg[0]});
    }
    auto agg = co_await tree_up(nd, st.ft, ghs_tag(5, ph, r, 2), own,
                                [](Payload a, const Payload& c) { return a[0] ? a : c; });
    if (st.ft.is_root()) {
        if ((agg[0] != 0) == g.h_root) {
            throw ProtocolError("fragment " + std::to_string(st.fid) + ": parent colour mismatch");
        }
        g.color = cole_vishkin_step(g.color, agg[0] ? std::optional<std::int64_t>(agg[1]) : std::nullopt);
    }
}

// Step 6, matching round k: roots of colour k propose to their smallest
// unmatched child. Listeners report their fragment's status upwards in the
// same round, so a parent never proposes to a child matched earlier.
inline Task<void> ghs_match_round(Node& nd, MstNode& st, GhsLocal& g, std::size_t ph, std::size_t k)
{
    Payload at_root(0, 0, {0, 0, g.matched ? 1 : 0});
    if (st.ft.is_root() && !g.matched && g.color == static_cast<std::int64_t>(k) && g.min_unmatched_child) {
        g.matched = true;
        g.partner = *g.min_unmatched_child;
        at_root = Payload(0, 0, {1, g.partner, 1});
    }
    auto b = co_await tree_down(nd, st.ft, msg::ghs_match, ghs_tag(6, ph, k, 0), at_root);
    for (Port p : g.child_ports) {
        const bool to_p = b[0] && g.nb[static_cast<std::size_t>(p)].fid == b[1];
        nd.send(p, msg::ghs_match, ghs_tag(6, ph, k, 1), {to_p ? 1 : 0});
        if (to_p) {
            g.child_matched[p] = true;
        }
    }
    if (g.listens) {
        nd.send(g.out_port, msg::ghs_match, ghs_tag(6, ph, k, 2), {b[2]});
    }
    std::int64_t proposed = 0;
    if (g.listens) {
        auto in = co_await nd.recv(msg::ghs_match, ghs_tag(6, ph, k, 1), g.out_port);
        proposed = in.msg[0];
    }
    for (std::size_t i = 0; i < g.child_ports.size(); ++i) {
        auto in = co_await nd.recv(msg::ghs_match, ghs_tag(6, ph, k, 2));
        if (in.msg[0]) {
            g.child_matched[in.port] = true;
        }
    }
    std::int64_t has = 0, best = 0;
    for (Port p : g.child_ports) {
        const auto f = g.nb[static_cast<std::size_t>(p)].fid;
        if (!g.child_matched[p] && (!has || f < best)) {
            has = 1;
            best = f;
        }
    }
    auto agg = co_await tree_up(nd, st.ft, ghs_tag(6, ph, k, 3), Payload(0, 0, {proposed, has, best}),
                                [](Payload a, const Payload& c) {
                                    std::int64_t m = a[2];
                                    if (c[1] && (!a[1] || c[2] < a[2])) {
                                        m = c[2];
                                    }
                                    return Payload(0, 0, {a[0] | c[0], a[1] | c[1], m});
                                });
    if (st.ft.is_root()) {
        if (agg[0]) {
            if (g.matched) {
                throw ProtocolError("fragment " + std::to_string(st.fid) + " matched twice");
            }
            g.matched = g.matched_parent = true;
            g.partner = g.h_parent;
        }
        if (agg[1]) {
            g.min_unmatched_child = agg[2];
        } else {
            g.min_unmatched_child.reset();
        }
    }
}

// Step 7: matched children keep their MOE, and so do unmatched fragments
// that have one. One flag over every edge tells the far side.
inline Task<void> ghs_include(Node& nd, MstNode& st, GhsLocal& g, std::size_t ph)
{
    const bool mine = g.matched_parent || (g.moe && !g.matched);
    auto b = co_await frag_bcast(nd, st.ft, ghs_tag(7, ph), Payload(0, 0, {mine ? 1 : 0}));
    g.include = b[0] != 0;
    const auto tag = ghs_tag(7, ph, 1);
    g.included.clear();
    for (Port p = 0; p < nd.ports(); ++p) {
        const bool on = g.include && p == g.out_port;
        nd.send(p, msg::ghs_incl, tag, {on ? 1 : 0});
        if (on) {
            g.included.insert(p);
        }
    }
    for (std::size_t i = 0; i < nd.degree(); ++i) {
        auto in = co_await nd.recv(msg::ghs_incl, tag);
        if (in.msg[0]) {
            g.included.insert(in.port);
        }
    }
}

// Step 8: the root of the one fragment per component that added no edge
// floods the merged tree, the echo finds the smallest fragment id, and a
// second wave re-orients every node towards that fragment's root.
inline Task<void> ghs_merge(Node& nd, MstNode& st, GhsLocal& g, std::size_t ph)
{
    std::vector<Port> comb(g.included.begin(), g.included.end());
    if (st.ft.parent >= 0) {
        comb.push_back(st.ft.parent);
    }
    comb.insert(comb.end(), st.ft.children.begin(), st.ft.children.end());
    std::sort(comb.begin(), comb.end());
    const auto ta = ghs_tag(8, ph, 0), te = ghs_tag(8, ph, 1), tb = ghs_tag(8, ph, 2);
    Port wparent = -1;
    if (!(st.ft.is_root() && !g.include)) {
        auto in = co_await nd.recv(msg::ghs_wave, ta);
        wparent = in.port;
    }
    std::size_t out = 0;
    for (Port p : comb) {
        if (p != wparent) {
            nd.send(p, msg::ghs_wave, ta);
            ++out;
        }
    }
    bool has = st.ft.is_root();
    ClusterId best = has ? st.fid : 0;
    Port best_port = -1;
    for (std::size_t i = 0; i < out; ++i) {
        auto in = co_await nd.recv(msg::ghs_echo, te);
        if (in.msg[0] && (!has || in.msg[1] < best)) {
            has = true;
            best = in.msg[1];
            best_port = in.port;
        }
    }
    ClusterId mu = best;
    if (wparent >= 0) {
        nd.send(wparent, msg::ghs_echo, te, {has ? 1 : 0, best});
        auto in = co_await nd.recv(msg::ghs_root, tb, wparent);
        mu = in.msg[0];
    } else if (!has) {
        throw ProtocolError("merge wave found no fragment root");
    }
    for (Port p : comb) {
        if (p != wparent) {
            nd.send(p, msg::ghs_root, tb, {mu});
        }
    }
    Port np = wparent;
    if (nd.id() == mu) {
        np = -1;
    } else if (has && best == mu) {
        np = best_port;
    }
    st.ft.parent = np;
    st.ft.children.clear();
    for (Port p : comb) {
        if (p != np) {
            st.ft.children.push_back(p);
        }
    }
    st.fid = st.cid = mu;
}

inline Task<void> stage2(Node& nd, MstNode& st, BetaSync& sync, const SingMstOptions& o, SingMstTrace* tr)
{
    nd.set_stage(kStageTwo);
    const std::size_t n = nd.n();
    const std::size_t phases = ghs_phase_count(n, static_cast<std::size_t>(st.dprime));
    const std::size_t rcv = o.cv_rounds ? o.cv_rounds : cv_rounds_for(n);
    const auto v = static_cast<std::size_t>(nd.id());
    GhsLocal g;
    for (std::size_t ph = 0; ph < phases; ++ph) {
        co_await sync.go(nd, Payload{});
        co_await ghs_activity(nd, st, g, ph);
        co_await sync.done(nd, 0);

        co_await sync.go(nd, Payload{});
        co_await ghs_find(nd, st, g, ph);
        co_await sync.done(nd, 0);

        co_await sync.go(nd, Payload{});
        co_await ghs_tell(nd, st, g, ph);
        co_await sync.done(nd, 0);

        co_await sync.go(nd, Payload{});
        co_await ghs_preprocess(nd, st, g, ph);
        co_await sync.done(nd, 0);

        for (std::size_t r = 0; r < rcv; ++r) {
            co_await sync.go(nd, Payload{});
            co_await ghs_cv_round(nd, st, g, ph, r);
            co_await sync.done(nd, 0);
        }
        if (st.ft.is_root() && (g.color < 0 || g.color >= 6)) {
            throw ProtocolError("Cole-Vishkin left colour " + std::to_string(g.color) + " after " +
                                std::to_string(rcv) + " rounds");
        }
        for (std::size_t k = 0; k < 6; ++k) {
            co_await sync.go(nd, Payload{});
            co_await ghs_match_round(nd, st, g, ph, k);
            co_await sync.done(nd, 0);
        }

        co_await sync.go(nd, Payload{});
        co_await ghs_include(nd, st, g, ph);
        co_await sync.done(nd, 0);

        GhsRecord rec;
        rec.fid = st.fid;
        rec.active = g.active;
        rec.moe = g.moe;
        rec.included = g.include;
        if (st.ft.is_root()) {
            rec.color = g.color;
            rec.h_parent = g.h_parent;
            rec.partner = g.matched ? g.partner : -1;
        }

        co_await sync.go(nd, Payload{});
        co_await ghs_merge(nd, st, g, ph);
        co_await sync.done(nd, 0);

        if (tr) {
            rec.new_fid = st.fid;
            rec.new_parent = st.ft.parent;
            tr->ghs.resize(std::max(tr->ghs.size(), ph + 1));
            tr->ghs[ph].resize(n);
            tr->ghs[ph][v] = rec;
        }
    }
    if (tr) {
        tr->ghs_phases = phases;
    }
}

// ---------------------------------------------------------------------------
// Census and Stage III

// Leader-side view of the base fragments.
struct LeaderSupergraph {
    std::map<ClusterId, std::int64_t> size;     // base fragment -> node count
    std::map<ClusterId, ClusterId> cluster;     // base fragment -> current cluster id
};

// Fragment roots report (id, size) over T; the leader stops once the sizes
// add up to n. Every node keeps the T-child leading to each root below it.
inline Task<void> census(Node& nd, MstNode& st, BetaSync& sync, LeaderSupergraph& lead)
{
    co_await sync.go(nd, Payload{});
    const auto size = co_await tree_count(nd, st.ft, make_tag(0x6c00, 1));
    std::vector<Payload> own;
    if (st.ft.is_root()) {
        own.push_back(Payload(0, 0, {st.fid, size}));
    }
    const auto n = static_cast<std::int64_t>(nd.n());
    auto seen = co_await upcast(nd, st.T, make_tag(0x6c00, 2), own, [n](const std::vector<Inbound>& items) {
        std::int64_t s = 0;
        for (const auto& in : items) {
            s += in.msg[1];
        }
        if (s > n) {
            throw IntegrityError("census: fragment sizes add up to " + std::to_string(s) + " > n");
        }
        return s == n;
    });
    st.route.clear();
    for (const auto& in : seen) {
        if (in.port >= 0) {
            st.route[in.msg[0]] = in.port;
        }
    }
    st.roots_below = seen.size();
    if (st.T.is_root()) {
        for (const auto& in : seen) {
            lead.size[in.msg[0]] = in.msg[1];
            lead.cluster[in.msg[0]] = in.msg[0];
        }
    }
    auto b = co_await frag_bcast(nd, st.T, make_tag(0x6c00, 3), Payload(0, 0, {static_cast<std::int64_t>(seen.size())}));
    st.base_count = b[0];
    co_await sync.done(nd, 0);
}

struct SoftMergeItem {
    ClusterId fid = -1;
    std::optional<MoeTuple> moe;
};

// Leader computation for one phase: every cluster picks its lightest
// proposed MOE, clusters joined by picked edges merge under the smallest id.
// Returns, per base fragment, its new cluster id and the edge it must mark.
inline std::map<ClusterId, std::pair<ClusterId, std::optional<MoeTuple>>>
soft_merge(std::map<ClusterId, ClusterId>& cluster, const std::vector<SoftMergeItem>& items)
{
    std::map<ClusterId, std::pair<ClusterId, MoeTuple>> best;  // cluster -> (fragment, moe)
    for (const auto& it : items) {
        if (!it.moe) {
            continue;
        }
        const auto c = cluster.at(it.fid);
        auto f = best.find(c);
        if (f == best.end() || it.moe->w < f->second.second.w) {
            best[c] = {it.fid, *it.moe};
        }
    }
    std::map<ClusterId, ClusterId> up;
    std::function<ClusterId(ClusterId)> find = [&](ClusterId x) {
        auto f = up.find(x);
        if (f == up.end() || f->second == x) {
            return x;
        }
        return f->second = find(f->second);
    };
    std::set<Weight> picked;
    std::map<ClusterId, std::optional<MoeTuple>> final_moe;
    for (const auto& [c, fm] : best) {
        const auto& [fid, m] = fm;
        if (picked.insert(m.w).second) {
            final_moe[fid] = m;
        }
        auto a = find(c), b = find(m.c2);
        if (a != b) {
            up[std::max(a, b)] = std::min(a, b);
        }
    }
    std::map<ClusterId, std::pair<ClusterId, std::optional<MoeTuple>>> out;
    for (auto& [fid, c] : cluster) {
        c = find(c);
        auto f = final_moe.find(fid);
        out[fid] = {c, f == final_moe.end() ? std::nullopt : f->second};
    }
    return out;
}

inline Task<void> stage3_phase(Node& nd, MstNode& st, LeaderSupergraph& lead, std::size_t ph)
{
    auto moe = co_await find_moe(nd, st.ft, s3_tag(1, ph), st.cid);
    std::vector<Payload> own;
    if (st.ft.is_root()) {
        own.push_back(moe ? Payload(0, 0, {st.fid, 1, moe->u, moe->v, moe->w, moe->c2}) : Payload(0, 0, {st.fid, 0}));
    }
    const std::size_t below = st.roots_below - own.size();
    auto seen = co_await upcast_counted(nd, st.T, s3_tag(2, ph), own, below);

    std::vector<Payload> at_root;
    if (st.T.is_root()) {
        std::vector<SoftMergeItem> items;
        for (const auto& in : seen) {
            SoftMergeItem it{in.msg[0], std::nullopt};
            if (in.msg[1]) {
                it.moe = MoeTuple{in.msg[2], in.msg[3], in.msg[4], lead.cluster.at(in.msg[0]), in.msg[5]};
            }
            items.push_back(it);
        }
        if (items.size() != lead.cluster.size()) {
            throw ProtocolError("stage III upcast delivered " + std::to_string(items.size()) + " tuples");
        }
        for (const auto& [fid, d] : soft_merge(lead.cluster, items)) {
            const auto& [c, m] = d;
            at_root.push_back(m ? Payload(0, 0, {fid, c, 1, m->u, m->v, m->w}) : Payload(0, 0, {fid, c, 0}));
        }
    }
    auto mine = co_await downcast(nd, st.T, s3_tag(3, ph), at_root, st.roots_below, [&](NodeId dest) -> Port {
        if (dest == nd.id()) {
            return -1;
        }
        auto f = st.route.find(dest);
        if (f == st.route.end()) {
            throw RoutingError("no fragment root " + std::to_string(dest) + " below node " + std::to_string(nd.id()));
        }
        return f->second;
    });
    Payload word;
    if (st.ft.is_root()) {
        if (mine.size() != 1) {
            throw ProtocolError("base fragment " + std::to_string(st.fid) + " got " + std::to_string(mine.size()) +
                                " downcast items");
        }
        word = mine.front();
    }
    auto b = co_await frag_bcast(nd, st.ft, s3_tag(4, ph), word);
    st.cid = b[1];
    if (b[2] && b[3] == nd.id()) {
        const Port p = port_with_weight(nd, b[5]);
        st.cluster_edges.insert(p);
        nd.send(p, msg::mst_mark, s3_tag(5, ph));
        co_await nd.recv(msg::mst_mark_ack, s3_tag(5, ph), p);
    }
}

inline Task<void> stage3(Node& nd, MstNode& st, BetaSync& sync, LeaderSupergraph& lead, SingMstTrace* tr)
{
    nd.set_stage(kStageThree);
    const std::size_t phases = stage3_phase_count(nd.n());
    for (std::size_t ph = 0; ph < phases; ++ph) {
        co_await sync.go(nd, Payload{});
        co_await stage3_phase(nd, st, lead, ph);
        co_await sync.done(nd, 0);
        if (tr) {
            tr->stage3_cid.resize(std::max(tr->stage3_cid.size(), ph + 1));
            tr->stage3_cid[ph].resize(nd.n());
            tr->stage3_cid[ph][static_cast<std::size_t>(nd.id())] = st.cid;
        }
    }
    if (st.T.is_root()) {
        std::set<ClusterId> left;
        for (const auto& [f, c] : lead.cluster) {
            left.insert(c);
        }
        if (left.size() != 1) {
            throw ProtocolError("algorithm failure: " + std::to_string(left.size()) + " clusters after " +
                                std::to_string(phases) + " soft-merge phases");
        }
    }
}

inline Task<void> sing_mst_program(Node& nd, MstNode& st, SingMstOptions o, SingMstTrace* tr)
{
    st.fid = st.cid = nd.id();
    serve_cluster_queries(nd, st.cid);
    nd.serve(msg::mst_mark, [&st](Node& self, Port p, const Payload& q) {
        st.cluster_edges.insert(p);
        self.send(p, msg::mst_mark_ack, q.tag);
    });
    const auto v = static_cast<std::size_t>(nd.id());
    co_await stage1(nd, st, o);
    if (tr) {
        tr->tree_parent[v] = st.T.parent;
        if (st.T.is_root()) {
            tr->leader = nd.id();
            tr->dprime = st.dprime;
        }
    }
    BetaSync sync{&st.T};
    LeaderSupergraph lead;
    co_await stage2(nd, st, sync, o, tr);
    co_await census(nd, st, sync, lead);
    if (tr) {
        tr->base_fid[v] = st.fid;
        tr->base_parent[v] = st.ft.parent;
        if (st.T.is_root()) {
            tr->base_count = st.base_count;
        }
    }
    co_await stage3(nd, st, sync, lead, tr);
    co_await tree_down(nd, st.T, msg::mst_end, make_tag(0x7e7d), Payload{});
    if (tr) {
        tr->cluster_edges[v] = st.cluster_edges;
    }
}

// ---------------------------------------------------------------------------
// Trace analysis (offline, for tests and metrics)

inline std::vector<NodeId> parents_from_ports(const WeightedGraph& g, const std::vector<Port>& parent_port)
{
    std::vector<NodeId> out(parent_port.size(), kNoNode);
    for (std::size_t v = 0; v < out.size(); ++v) {
        if (parent_port[v] >= 0) {
            out[v] = g.ports(static_cast<NodeId>(v))[static_cast<std::size_t>(parent_port[v])].neighbor;
        }
    }
    return out;
}

// Fragments at the end of Stage II phase `ph`.
inline Partition fragments_after(const WeightedGraph& g, const SingMstTrace& tr, std::size_t ph)
{
    const auto& rec = tr.ghs.at(ph);
    Partition p;
    std::vector<Port> pp(rec.size());
    for (std::size_t v = 0; v < rec.size(); ++v) {
        p.cluster_of.push_back(rec[v].new_fid);
        pp[v] = rec[v].new_parent;
    }
    p.parent = parents_from_ports(g, pp);
    return p;
}

inline Partition fragments_before(const WeightedGraph& g, const SingMstTrace& tr, std::size_t ph)
{
    return ph == 0 ? Partition::singletons(g.node_count()) : fragments_after(g, tr, ph - 1);
}

// Hop diameter of every fragment tree, keyed by fragment id.
inline std::map<ClusterId, std::size_t> fragment_tree_diameters(const Partition& p)
{
    std::map<ClusterId, std::vector<NodeId>> members;
    for (std::size_t v = 0; v < p.cluster_of.size(); ++v) {
        members[p.cluster_of[v]].push_back(static_cast<NodeId>(v));
    }
    std::map<ClusterId, std::size_t> out;
    for (const auto& [c, vs] : members) {
        std::map<NodeId, NodeId> local;
        for (auto v : vs) {
            local.emplace(v, static_cast<NodeId>(local.size()));
        }
        Adjacency adj(vs.size());
        for (auto v : vs) {
            const auto u = p.parent[static_cast<std::size_t>(v)];
            if (u != kNoNode) {
                adj[static_cast<std::size_t>(local.at(v))].push_back(local.at(u));
                adj[static_cast<std::size_t>(local.at(u))].push_back(local.at(v));
            }
        }
        out[c] = adjacency_diameter(adj);
    }
    return out;
}

inline std::size_t fragment_count(const Partition& p)
{
    return std::set<ClusterId>(p.cluster_of.begin(), p.cluster_of.end()).size();
}

struct SingMstRun {
    RunReport report;
    SingMstTrace trace;
    std::vector<std::size_t> mst;  // edge indices, sorted
};

// MST incidence per node: cluster edges plus base-fragment tree edges.
inline std::vector<std::size_t> collect_mst(const WeightedGraph& g, const std::vector<MstNode>& st)
{
    std::set<std::size_t> es;
    for (std::size_t v = 0; v < st.size(); ++v) {
        const auto& ports = g.ports(static_cast<NodeId>(v));
        for (Port p : st[v].cluster_edges) {
            es.insert(ports[static_cast<std::size_t>(p)].edge);
        }
        if (st[v].ft.parent >= 0) {
            es.insert(ports[static_cast<std::size_t>(st[v].ft.parent)].edge);
        }
    }
    return {es.begin(), es.end()};
}

inline SingMstRun run_sing_mst(const WeightedGraph& g, const SingMstOptions& o, const RunOptions& opt)
{
    const auto n = g.node_count();
    SingMstRun run;
    run.trace.resize(n);
    std::vector<MstNode> st(n);
    SingMstTrace* tr = &run.trace;
    run.report = run_program(
        g, [&](Node& nd) { return sing_mst_program(nd, st[static_cast<std::size_t>(nd.id())], o, tr); }, opt);
    run.mst = collect_mst(g, st);
    run.report.output.clear();
    for (auto i : run.mst) {
        run.report.output.push_back(g.edge(i));
    }
    return run;
}


}  // namespace amst
