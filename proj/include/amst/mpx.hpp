#pragma once

// Exponential-shift low-diameter decomposition: parameters, the lock-step
// reference execution, its round program for the alpha synchronizer, an
// exact argmin oracle and Monte-Carlo statistics.

#include "amst/graph.hpp"
#include "amst/toolbox.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <vector>

namespace amst {

// ---------------------------------------------------------------------------
// Parameters

struct LdsParams {
    std::size_t n = 0;
    double epsilon = 1.0;
    double epsilon_prime = 0.0;
    double beta_formula = 0.0;  // ln^{-1/eps'} n
    double beta = 0.0;          // the value actually used
    std::size_t delta_max = 0;
    std::size_t d_guess = 1;
    std::size_t i_max = 0;
    bool trivial = false;       // ln ln n < 2 eps' ln 3: build the tree by flooding
};

inline double epsilon_prime_for(double epsilon) { return epsilon / (2.0 * std::log(15.0)); }

inline std::size_t delta_max_for(std::size_t n, double beta)
{
    return static_cast<std::size_t>(std::floor(2.0 * std::log(static_cast<double>(n)) / beta));
}

// ceil(log_{1/(3 beta)} d); 0 for d <= 1.
inline std::size_t i_max_for(std::size_t d_guess, double beta)
{
    if (!(beta > 0.0 && beta < 1.0 / 3.0)) {
        throw std::invalid_argument("beta must lie in (0, 1/3)");
    }
    if (d_guess <= 1) {
        return 0;
    }
    const double x = std::log(static_cast<double>(d_guess)) / std::log(1.0 / (3.0 * beta));
    // Guard against x landing a hair above an integer through rounding.
    const double r = std::round(x);
    return static_cast<std::size_t>(std::abs(x - r) < 1e-12 ? r : std::ceil(x));
}

// `beta_override` replaces the formula value (which is astronomically small
// for any n a simulation can reach).
inline LdsParams derive_params(std::size_t n, double epsilon, std::size_t d_guess,
                               std::optional<double> beta_override = std::nullopt)
{
    if (!(epsilon > 0.0 && epsilon <= 1.0)) {
        throw std::invalid_argument("epsilon must lie in (0, 1]");
    }
    LdsParams p;
    p.n = n;
    p.epsilon = epsilon;
    p.epsilon_prime = epsilon_prime_for(epsilon);
    p.d_guess = d_guess;
    const double ln = std::log(static_cast<double>(std::max<std::size_t>(n, 1)));
    p.trivial = n < 3 || std::log(ln) < 2.0 * p.epsilon_prime * std::log(3.0);
    p.beta_formula = n >= 3 ? std::pow(ln, -1.0 / p.epsilon_prime) : 0.0;
    p.beta = beta_override.value_or(p.beta_formula);
    if (!(p.beta > 0.0 && p.beta < 1.0)) {
        if (p.trivial) {
            return p;
        }
        throw std::invalid_argument("beta must lie in (0, 1)");
    }
    p.delta_max = delta_max_for(std::max<std::size_t>(n, 1), p.beta);
    if (p.beta < 1.0 / 3.0) {
        p.i_max = i_max_for(d_guess, p.beta);
    }
    return p;
}

// ---------------------------------------------------------------------------
// Shifts

// Inverse-CDF sample of Exp(beta) from u in (0, 1].
inline double sample_exponential(double beta, double u)
{
    if (!(beta > 0.0)) {
        throw std::invalid_argument("beta must be positive");
    }
    return -std::log(u) / beta;
}

inline double mpx_delta(std::uint64_t seed, std::int64_t id, double beta, std::uint64_t stream = 0)
{
    return sample_exponential(beta, unit_interval_open_closed(hash_all(seed, 0x3cu, id, stream)));
}

inline int start_time(double delta, std::size_t delta_max)
{
    const auto s = static_cast<long long>(delta_max) - static_cast<long long>(std::floor(delta));
    return static_cast<int>(std::max<long long>(1, s));
}

// ---------------------------------------------------------------------------
// Lock-step reference

struct MpxResult {
    std::vector<std::int64_t> leader;       // id of the cluster centre
    std::vector<std::int64_t> parent;       // index of the tree parent, -1 at centres
    std::vector<int> parent_port;           // position in the adjacency list, -1 at centres
    std::vector<int> assigned_round;
    std::vector<int> start;
    std::size_t window_exceeded = 0;        // nodes with floor(delta) > delta_max
};

// Synchronous flooding for delta_max+1 rounds on an id-labelled graph. In
// round i a node assigned in round i-1 sends its centre id to every
// neighbour; an unassigned node takes the smallest id among what it heard
// (plus its own if S_v = i), with the parent edge the lowest position that
// carried it.
inline MpxResult mpx_sync(const Adjacency& adj, const std::vector<std::int64_t>& ids, const std::vector<int>& start,
                          std::size_t delta_max)
{
    const auto n = adj.size();
    MpxResult r;
    r.leader.assign(n, -1);
    r.parent.assign(n, -1);
    r.parent_port.assign(n, -1);
    r.assigned_round.assign(n, 0);
    r.start = start;
    const int rounds = static_cast<int>(delta_max) + 1;
    for (int i = 1; i <= rounds; ++i) {
        std::vector<std::int64_t> best(n, -1);
        std::vector<int> via(n, -1);
        for (std::size_t v = 0; v < n; ++v) {
            if (r.leader[v] < 0) {
                for (std::size_t k = 0; k < adj[v].size(); ++k) {
                    const auto u = static_cast<std::size_t>(adj[v][k]);
                    if (r.leader[u] >= 0 && r.assigned_round[u] == i - 1) {
                        if (best[v] < 0 || r.leader[u] < best[v]) {
                            best[v] = r.leader[u];
                            via[v] = static_cast<int>(k);
                        }
                    }
                }
            }
        }
        for (std::size_t v = 0; v < n; ++v) {
            if (r.leader[v] >= 0) {
                continue;
            }
            const bool self = start[v] == i;
            if (self && (best[v] < 0 || ids[v] < best[v])) {
                r.leader[v] = ids[v];
                r.assigned_round[v] = i;
            } else if (best[v] >= 0) {
                r.leader[v] = best[v];
                r.parent_port[v] = via[v];
                r.parent[v] = adj[v][static_cast<std::size_t>(via[v])];
                r.assigned_round[v] = i;
            }
        }
    }
    return r;
}

inline std::vector<int> mpx_start_times(const std::vector<std::int64_t>& ids, double beta, std::size_t delta_max,
                                        std::uint64_t seed, std::size_t* exceeded = nullptr)
{
    std::vector<int> s(ids.size());
    for (std::size_t v = 0; v < ids.size(); ++v) {
        const double d = mpx_delta(seed, ids[v], beta);
        if (exceeded && std::floor(d) > static_cast<double>(delta_max)) {
            ++*exceeded;
        }
        s[v] = start_time(d, delta_max);
    }
    return s;
}

inline std::vector<std::int64_t> identity_ids(std::size_t n)
{
    std::vector<std::int64_t> ids(n);
    std::iota(ids.begin(), ids.end(), std::int64_t{0});
    return ids;
}

inline Partition to_partition(const MpxResult& r)
{
    Partition p;
    p.cluster_of = r.leader;
    p.parent.assign(r.parent.begin(), r.parent.end());
    return p;
}

// MPX on the communication graph itself with shifts drawn from `seed`.
inline MpxResult mpx_sync(const WeightedGraph& g, double beta, std::uint64_t seed)
{
    const auto n = g.node_count();
    const auto dm = delta_max_for(n, beta);
    const auto ids = identity_ids(n);
    std::size_t exceeded = 0;
    auto start = mpx_start_times(ids, beta, dm, seed, &exceeded);
    auto r = mpx_sync(g.adjacency(), ids, start, dm);
    r.window_exceeded = exceeded;
    return r;
}

// MPX on a cluster graph; cluster ids label the cluster nodes and `n` is the
// size of the underlying network.
inline MpxResult mpx_sync(const ClusterGraph& cg, std::size_t n, double beta, std::uint64_t seed)
{
    const auto dm = delta_max_for(n, beta);
    std::size_t exceeded = 0;
    auto start = mpx_start_times(cg.clusters, beta, dm, seed, &exceeded);
    auto r = mpx_sync(cg.adjacency, cg.clusters, start, dm);
    r.window_exceeded = exceeded;
    return r;
}

// Arrival rounds D_u = S_u + dist(u, v) - 1 seen from observer v.
inline std::vector<std::int64_t> arrival_rounds(const Adjacency& adj, const std::vector<int>& start, NodeId v)
{
    auto dist = bfs_distances(adj, v);
    std::vector<std::int64_t> d(adj.size());
    for (std::size_t u = 0; u < adj.size(); ++u) {
        d[u] = start[u] + dist[u] - 1;
    }
    return d;
}

// Exact oracle: the centre of v is argmin over u of (dist(v,u) + S_u, id_u).
inline std::vector<std::int64_t> mpx_argmin_oracle(const Adjacency& adj, const std::vector<std::int64_t>& ids,
                                                   const std::vector<int>& start)
{
    const auto n = adj.size();
    std::vector<std::int64_t> out(n);
    for (std::size_t v = 0; v < n; ++v) {
        auto dist = bfs_distances(adj, static_cast<NodeId>(v));
        std::pair<std::int64_t, std::int64_t> best{std::numeric_limits<std::int64_t>::max(), 0};
        for (std::size_t u = 0; u < n; ++u) {
            best = std::min(best, std::make_pair(dist[u] + start[u], ids[u]));
        }
        out[v] = best.second;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Round program for the alpha synchronizer

class MpxRoundNode : public RoundNode {
public:
    MpxRoundNode(std::int64_t id, int start, std::size_t delta_max)
        : id_(id), start_(start), rounds_(static_cast<int>(delta_max) + 1)
    {
    }

    static int rounds_for(std::size_t delta_max) { return static_cast<int>(delta_max) + 1; }

    std::vector<std::pair<Port, Payload>> emit(int r) override
    {
        // Round r+1 of the procedure; degree is learnt from the port count.
        std::vector<std::pair<Port, Payload>> out;
        if (leader_ >= 0 && assigned_ == r) {
            for (Port p = 0; p < degree_; ++p) {
                out.emplace_back(p, Payload(0, 0, {leader_}));
            }
        }
        return out;
    }

    void absorb(int r, const std::vector<Inbound>& in) override
    {
        done_rounds_ = r + 1;
        if (leader_ >= 0) {
            return;
        }
        std::int64_t best = -1;
        Port via = -1;
        for (const auto& m : in) {
            if (best < 0 || m.msg[0] < best) {
                best = m.msg[0];
                via = m.port;
            }
        }
        const bool self = start_ == r + 1;
        if (self && (best < 0 || id_ < best)) {
            leader_ = id_;
            assigned_ = r + 1;
        } else if (best >= 0) {
            leader_ = best;
            parent_port_ = via;
            assigned_ = r + 1;
        }
    }

    bool finished() const override { return leader_ >= 0 && done_rounds_ >= rounds_; }

    void set_degree(std::size_t d) { degree_ = static_cast<Port>(d); }
    std::int64_t leader() const { return leader_; }
    Port parent_port() const { return parent_port_; }

private:
    std::int64_t id_;
    int start_;
    int rounds_;
    Port degree_ = 0;
    std::int64_t leader_ = -1;
    Port parent_port_ = -1;
    int assigned_ = -1;
    int done_rounds_ = 0;
};

struct MpxRun {
    Partition partition;
    RunReport report;
};

// Runs MPX on g under the alpha synchronizer inside the event kernel.
inline MpxRun mpx_async(const WeightedGraph& g, double beta, std::uint64_t mpx_seed, const RunOptions& opt)
{
    const auto n = g.node_count();
    const auto dm = delta_max_for(n, beta);
    std::vector<std::unique_ptr<MpxRoundNode>> nodes(n);
    auto program = [&](Node& nd) {
        auto& slot = nodes[static_cast<std::size_t>(nd.id())];
        slot = std::make_unique<MpxRoundNode>(nd.id(), start_time(mpx_delta(mpx_seed, nd.id(), beta), dm), dm);
        slot->set_degree(nd.degree());
        return alpha_simulate(nd, make_tag(0x3c), *slot, MpxRoundNode::rounds_for(dm));
    };
    MpxRun out;
    out.report = run_program(g, program, opt);
    out.partition.cluster_of.resize(n);
    out.partition.parent.resize(n);
    for (std::size_t v = 0; v < n; ++v) {
        out.partition.cluster_of[v] = nodes[v]->leader();
        const Port p = nodes[v]->parent_port();
        out.partition.parent[v] = p < 0 ? kNoNode : g.ports(static_cast<NodeId>(v))[static_cast<std::size_t>(p)].neighbor;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Statistics

struct MpxTrial {
    double cut_fraction = 0.0;
    std::size_t max_strong_diameter = 0;
    double diameter_ratio = 0.0;  // diam(cluster graph) / diam(graph)
    std::size_t clusters = 0;
    std::size_t window_exceeded = 0;
};

struct MpxStats {
    std::vector<MpxTrial> trials;
    double mean_cut_fraction = 0.0;
    double sd_cut_fraction = 0.0;
    std::size_t max_strong_diameter = 0;
    double bound_4ln_over_beta = 0.0;
    double diam_ratio_mean = 0.0;
    double diam_ratio_sd = 0.0;
};

inline MpxStats mpx_stats(const WeightedGraph& g, double beta, std::size_t trials, std::uint64_t seed)
{
    MpxStats s;
    const auto n = g.node_count();
    s.bound_4ln_over_beta = 4.0 * std::log(static_cast<double>(n)) / beta;
    const double gdiam = static_cast<double>(hop_diameter(g));
    for (std::size_t t = 0; t < trials; ++t) {
        auto r = mpx_sync(g, beta, hash_all(seed, t));
        auto p = to_partition(r);
        auto rep = validate_partition(g, p, static_cast<std::size_t>(s.bound_4ln_over_beta));
        auto cg = induced_cluster_graph(g, p);
        MpxTrial tr;
        tr.cut_fraction = rep.cut_fraction;
        tr.max_strong_diameter = rep.max_strong_diameter;
        tr.clusters = cg.clusters.size();
        tr.diameter_ratio = gdiam > 0 ? static_cast<double>(adjacency_diameter(cg.adjacency)) / gdiam : 0.0;
        tr.window_exceeded = r.window_exceeded;
        s.trials.push_back(tr);
    }
    auto mean_sd = [&](auto get, double& mean, double& sd) {
        double a = 0, b = 0;
        for (const auto& t : s.trials) {
            a += get(t);
        }
        mean = s.trials.empty() ? 0.0 : a / static_cast<double>(s.trials.size());
        for (const auto& t : s.trials) {
            b += (get(t) - mean) * (get(t) - mean);
        }
        sd = s.trials.size() > 1 ? std::sqrt(b / static_cast<double>(s.trials.size() - 1)) : 0.0;
    };
    mean_sd([](const MpxTrial& t) { return t.cut_fraction; }, s.mean_cut_fraction, s.sd_cut_fraction);
    mean_sd([](const MpxTrial& t) { return t.diameter_ratio; }, s.diam_ratio_mean, s.diam_ratio_sd);
    for (const auto& t : s.trials) {
        s.max_strong_diameter = std::max(s.max_strong_diameter, t.max_strong_diameter);
    }
    return s;
}

}  // namespace amst
