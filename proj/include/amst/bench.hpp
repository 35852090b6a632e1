#pragma once

// Experiment plumbing: JSON configs, per-run metrics rows, CSV output and
// the scaling summary of a sweep.

#include "amst/sing_mst.hpp"

#include "json.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>

namespace amst {

// Frozen calibration constants.
//   kCd: brute force over n <= 64 (8 kinds, 3 delay models) peaked at 5.0;
//        frozen at 7, just above the recurrence d_i <= 6*2^i - 3 + 3i.
//   kCm, kCt: ER(2 ln n / n), n = 32..512, uniform delays, seeds 100..109
//        peaked at 8.20 and 2.38; frozen at 1.25x rounded up.
inline constexpr double kCd = 7.0;   // Stage II fragment diameter <= kCd * 2^i
inline constexpr double kCm = 11.0;  // messages <= kCm * m * ln^3 n
inline constexpr double kCt = 3.0;   // time <= kCt * (D' + sqrt n) * ln^3 n

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class WakeupPolicy { single_random, all_at_zero, staggered_uniform };

inline std::string to_string(WakeupPolicy w)
{
    switch (w) {
    case WakeupPolicy::single_random: return "single-random";
    case WakeupPolicy::all_at_zero: return "all-at-zero";
    case WakeupPolicy::staggered_uniform: return "staggered-uniform";
    }
    return "?";
}

inline WakeupPolicy parse_wakeup(const std::string& s)
{
    for (auto w : {WakeupPolicy::single_random, WakeupPolicy::all_at_zero, WakeupPolicy::staggered_uniform}) {
        if (to_string(w) == s) {
            return w;
        }
    }
    throw ConfigError("unknown wakeup policy '" + s + "'");
}

inline WakeupSchedule make_wakeup(WakeupPolicy w, std::size_t n, std::uint64_t seed, double spread)
{
    switch (w) {
    case WakeupPolicy::single_random: return WakeupSchedule::single_random(n, seed);
    case WakeupPolicy::all_at_zero: return WakeupSchedule::all_at_zero(n);
    case WakeupPolicy::staggered_uniform: return WakeupSchedule::staggered_uniform(n, seed, spread);
    }
    return WakeupSchedule::all_at_zero(n);
}

struct GraphSpec {
    std::optional<std::string> file;  // overrides the generator
    GraphKind kind = GraphKind::erdos_renyi;
    std::vector<std::size_t> n;
    std::optional<double> p;  // erdos_renyi; default 2 ln n / n
    double radius = 0.2;
    std::size_t width = 0;
    std::optional<std::size_t> extra_edges;  // default n / 4
};

struct ExperimentConfig {
    GraphSpec graph;
    double epsilon = 1.0;
    std::optional<double> beta = 0.1;
    std::vector<DelayKind> delays{DelayKind::uniform};
    WakeupPolicy wakeup = WakeupPolicy::all_at_zero;
    double wakeup_spread = 2.0;
    std::vector<std::uint64_t> seeds{0};
    std::optional<std::string> csv;
    std::optional<std::string> json;
    std::string hash;  // of the canonical JSON text
};

namespace detail {

inline void only_keys(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where)
{
    if (!j.is_object()) {
        throw ConfigError(where + " must be an object");
    }
    for (const auto& [k, v] : j.items()) {
        if (std::none_of(keys.begin(), keys.end(), [&](const char* x) { return k == x; })) {
            throw ConfigError("unknown key '" + k + "' in " + where);
        }
    }
}

template <class T>
std::vector<T> one_or_many(const nlohmann::json& j)
{
    if (j.is_array()) {
        return j.get<std::vector<T>>();
    }
    return {j.get<T>()};
}

inline std::string fnv1a_hex(const std::string& s)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h = (h ^ c) * 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j)
{
    using detail::only_keys;
    ExperimentConfig c;
    try {
        only_keys(j, {"graph", "algorithm", "delays", "wakeup", "wakeup_spread", "seeds", "output"}, "config");
        if (!j.contains("graph")) {
            throw ConfigError("config needs a 'graph' section");
        }
        const auto& g = j.at("graph");
        only_keys(g, {"file", "kind", "n", "p", "radius", "width", "extra_edges"}, "graph");
        if (g.contains("file")) {
            c.graph.file = g.at("file").get<std::string>();
        } else {
            if (!g.contains("kind") || !g.contains("n")) {
                throw ConfigError("graph needs 'kind' and 'n' (or 'file')");
            }
            try {
                c.graph.kind = parse_graph_kind(g.at("kind").get<std::string>());
            } catch (const GraphError& e) {
                throw ConfigError(e.what());
            }
            c.graph.n = detail::one_or_many<std::size_t>(g.at("n"));
            if (c.graph.n.empty() || std::find(c.graph.n.begin(), c.graph.n.end(), 0u) != c.graph.n.end()) {
                throw ConfigError("graph.n must be positive");
            }
        }
        if (g.contains("p")) {
            c.graph.p = g.at("p").get<double>();
            if (!(*c.graph.p > 0 && *c.graph.p <= 1)) {
                throw ConfigError("graph.p must lie in (0, 1]");
            }
        }
        c.graph.radius = g.value("radius", c.graph.radius);
        c.graph.width = g.value("width", c.graph.width);
        if (g.contains("extra_edges")) {
            c.graph.extra_edges = g.at("extra_edges").get<std::size_t>();
        }
        if (j.contains("algorithm")) {
            const auto& a = j.at("algorithm");
            only_keys(a, {"epsilon", "beta"}, "algorithm");
            c.epsilon = a.value("epsilon", c.epsilon);
            if (!(c.epsilon > 0 && c.epsilon <= 1)) {
                throw ConfigError("algorithm.epsilon must lie in (0, 1]");
            }
            if (a.contains("beta")) {
                if (a.at("beta").is_null()) {
                    c.beta.reset();
                } else {
                    c.beta = a.at("beta").get<double>();
                    if (!(*c.beta > 0 && *c.beta < 1.0 / 3.0)) {
                        throw ConfigError("algorithm.beta must lie in (0, 1/3)");
                    }
                }
            }
        }
        if (j.contains("delays")) {
            c.delays.clear();
            for (const auto& s : detail::one_or_many<std::string>(j.at("delays"))) {
                try {
                    c.delays.push_back(parse_delay_kind(s));
                } catch (const std::exception& e) {
                    throw ConfigError(e.what());
                }
            }
            if (c.delays.empty()) {
                throw ConfigError("delays must not be empty");
            }
        }
        if (j.contains("wakeup")) {
            c.wakeup = parse_wakeup(j.at("wakeup").get<std::string>());
        }
        c.wakeup_spread = j.value("wakeup_spread", c.wakeup_spread);
        if (j.contains("seeds")) {
            c.seeds = detail::one_or_many<std::uint64_t>(j.at("seeds"));
            if (c.seeds.empty()) {
                throw ConfigError("seeds must not be empty");
            }
        }
        if (j.contains("output")) {
            const auto& o = j.at("output");
            only_keys(o, {"csv", "json"}, "output");
            if (o.contains("csv")) c.csv = o.at("csv").get<std::string>();
            if (o.contains("json")) c.json = o.at("json").get<std::string>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    c.hash = detail::fnv1a_hex(j.dump());
    return c;
}

inline ExperimentConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_config(j);
}

inline double default_er_p(std::size_t n)
{
    return n < 2 ? 1.0 : std::min(1.0, 2.0 * std::log(static_cast<double>(n)) / static_cast<double>(n));
}

inline WeightedGraph build_graph(const GraphSpec& s, std::size_t n, std::uint64_t seed)
{
    if (s.file) {
        std::ifstream in(*s.file);
        if (!in) {
            throw ConfigError("cannot open graph file " + *s.file);
        }
        return read_graph(in);
    }
    GraphParams prm;
    prm.p = s.p.value_or(default_er_p(n));
    prm.radius = s.radius;
    prm.width = s.width;
    prm.extra_edges = s.extra_edges.value_or(n / 4);
    return generate_graph(s.kind, n, prm, seed);
}

struct MetricsRow {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::size_t n = 0;
    std::size_t m = 0;
    std::size_t D = 0;
    std::int64_t D_prime = 0;
    std::uint64_t messages_total = 0;
    std::map<int, std::uint64_t> messages_per_stage;
    double time_total = 0;
    std::map<int, double> time_per_stage;
    bool mst_ok = false;
    std::int64_t fragments_after_stage2 = 0;
    double wall_clock_ms = 0;
    // not in the CSV
    std::string delay;
    bool terminated = false;
    bool drained = false;
};

inline const char* kCsvHeader =
    "config_hash,seed,n,m,D,D_prime,messages_total,messages_per_stage,time_total,time_per_stage,mst_ok,"
    "fragments_after_stage2,wall_clock_ms";

inline std::string csv_line(const MetricsRow& r)
{
    std::ostringstream os;
    os << std::setprecision(10);
    auto join = [&os](const auto& m) {
        bool first = true;
        for (const auto& [k, v] : m) {
            os << (first ? "" : ";") << k << ':' << v;
            first = false;
        }
    };
    os << r.config_hash << ',' << r.seed << ',' << r.n << ',' << r.m << ',' << r.D << ',' << r.D_prime << ','
       << r.messages_total << ',';
    join(r.messages_per_stage);
    os << ',' << r.time_total << ',';
    join(r.time_per_stage);
    os << ',' << (r.mst_ok ? "true" : "false") << ',' << r.fragments_after_stage2 << ',' << r.wall_clock_ms;
    return os.str();
}

inline void write_csv(std::ostream& out, const std::vector<MetricsRow>& rows)
{
    out << kCsvHeader << '\n';
    for (const auto& r : rows) {
        out << csv_line(r) << '\n';
    }
}

struct RunResult {
    MetricsRow row;
    SingMstRun run;
};

inline RunResult run_instance(const WeightedGraph& g, const ExperimentConfig& c, DelayKind delay, std::uint64_t seed,
                              std::ostream* trace = nullptr)
{
    SingMstOptions so;
    so.st.epsilon = c.epsilon;
    so.st.beta = c.beta;
    RunOptions opt;
    opt.delays = DelayModel{delay, seed};
    opt.seed = seed;
    opt.wakeup = make_wakeup(c.wakeup, g.node_count(), seed, c.wakeup_spread);
    opt.trace = trace;
    const auto t0 = std::chrono::steady_clock::now();
    RunResult rr;
    rr.run = run_sing_mst(g, so, opt);
    const auto t1 = std::chrono::steady_clock::now();
    const auto& rep = rr.run.report;
    auto& r = rr.row;
    r.config_hash = c.hash;
    r.seed = seed;
    r.n = g.node_count();
    r.m = g.edge_count();
    r.D = hop_diameter(g);
    r.D_prime = rr.run.trace.dprime;
    r.messages_total = rep.message_count;
    r.time_total = (rep.completion_time.ticks - rep.first_wake.ticks) / static_cast<double>(kTicksPerUnit);
    for (const auto& [s, st] : rep.per_stage) {
        r.messages_per_stage[s] = st.messages;
        r.time_per_stage[s] = (st.last.ticks - st.first.ticks) / static_cast<double>(kTicksPerUnit);
    }
    auto k = kruskal_mst(g);
    std::sort(k.begin(), k.end());
    r.mst_ok = rr.run.mst == k;
    r.fragments_after_stage2 = rr.run.trace.base_count;
    r.wall_clock_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    r.delay = to_string(delay);
    r.terminated = rep.terminated && rep.terminated_nodes == r.n;
    r.drained = rep.queue_remaining == 0 && rep.held_remaining == 0 && rep.leftover_messages == 0;
    return rr;
}

// One row per (n, delay model, seed); the graph is regenerated per seed.
inline std::vector<MetricsRow> run_config(const ExperimentConfig& c)
{
    std::vector<MetricsRow> rows;
    const std::vector<std::size_t> ns = c.graph.file ? std::vector<std::size_t>{0} : c.graph.n;
    for (auto n : ns) {
        for (auto d : c.delays) {
            for (auto s : c.seeds) {
                const auto g = build_graph(c.graph, n, s);
                rows.push_back(run_instance(g, c, d, s).row);
            }
        }
    }
    return rows;
}

// Least-squares slope of y on x.
inline double ls_slope(const std::vector<double>& x, const std::vector<double>& y)
{
    const auto k = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    const double den = k * sxx - sx * sx;
    return den == 0 ? 0.0 : (k * sxy - sx * sy) / den;
}

inline double ln3(std::size_t n) { return std::pow(std::log(static_cast<double>(n)), 3); }

struct SweepSummary {
    std::size_t rows = 0;
    bool all_mst_ok = true;
    bool all_terminated = true;
    double exp_msgs_per_m_vs_loglogn = 0;  // slope of log(messages/m) on log ln n
    double exp_msgs_per_m_vs_n = 0;        // slope of log(messages/(m ln^3 n)) on log n
    double exp_time_vs_dsqrt = 0;          // slope of log time on log(D' + sqrt n)
    double max_msg_ratio = 0;              // messages / (m ln^3 n)
    double max_time_ratio = 0;             // time / ((D' + sqrt n) ln^3 n)
    bool pass = false;

    nlohmann::json to_json() const
    {
        return {{"rows", rows},
                {"all_mst_ok", all_mst_ok},
                {"all_terminated", all_terminated},
                {"exp_msgs_per_m_vs_loglogn", exp_msgs_per_m_vs_loglogn},
                {"exp_msgs_per_m_vs_n", exp_msgs_per_m_vs_n},
                {"exp_time_vs_dsqrt", exp_time_vs_dsqrt},
                {"max_msg_ratio", max_msg_ratio},
                {"max_time_ratio", max_time_ratio},
                {"C_m", kCm},
                {"C_t", kCt},
                {"pass", pass}};
    }
};

inline SweepSummary summarize(const std::vector<MetricsRow>& rows)
{
    SweepSummary s;
    s.rows = rows.size();
    std::vector<double> lln, ln, lmm, lmr, ldn, lt;
    for (const auto& r : rows) {
        s.all_mst_ok = s.all_mst_ok && r.mst_ok;
        s.all_terminated = s.all_terminated && r.terminated && r.drained;
        if (r.n < 3 || r.m == 0) {
            continue;
        }
        const double nn = static_cast<double>(r.n);
        const double per_m = static_cast<double>(r.messages_total) / static_cast<double>(r.m);
        const double dsq = static_cast<double>(r.D_prime) + std::sqrt(nn);
        lln.push_back(std::log(std::log(nn)));
        ln.push_back(std::log(nn));
        lmm.push_back(std::log(per_m));
        lmr.push_back(std::log(per_m / ln3(r.n)));
        ldn.push_back(std::log(dsq));
        lt.push_back(std::log(std::max(r.time_total, 1e-9)));
        s.max_msg_ratio = std::max(s.max_msg_ratio, per_m / ln3(r.n));
        s.max_time_ratio = std::max(s.max_time_ratio, r.time_total / (dsq * ln3(r.n)));
    }
    if (!ln.empty()) {
        s.exp_msgs_per_m_vs_loglogn = ls_slope(lln, lmm);
        s.exp_msgs_per_m_vs_n = ls_slope(ln, lmr);
        s.exp_time_vs_dsqrt = ls_slope(ldn, lt);
    }
    s.pass = s.all_mst_ok && s.all_terminated && s.max_msg_ratio <= kCm && s.max_time_ratio <= kCt &&
             s.exp_msgs_per_m_vs_n <= 0.15;
    return s;
}

// Symmetric difference of two edge-index sets, as edges.
inline std::vector<Edge> mst_diff(const WeightedGraph& g, std::vector<std::size_t> a, std::vector<std::size_t> b)
{
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<std::size_t> d;
    std::set_symmetric_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(d));
    std::vector<Edge> out;
    for (auto i : d) {
        out.push_back(g.edge(i));
    }
    return out;
}

inline nlohmann::json mpx_stats_json(const MpxStats& s)
{
    return {{"trials", s.trials.size()},
            {"mean_cut_fraction", s.mean_cut_fraction},
            {"sd_cut_fraction", s.sd_cut_fraction},
            {"max_strong_diam", s.max_strong_diameter},
            {"bound_4ln_over_beta", s.bound_4ln_over_beta},
            {"diam_ratio_mean", s.diam_ratio_mean},
            {"diam_ratio_sd", s.diam_ratio_sd}};
}

}  // namespace amst
