// amst_cli: run, sweep, verify and MPX statistics.
// Exit codes: 0 success, 1 verification or algorithm failure, 2 usage or config error.

#include "amst/bench.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>

using namespace amst;

namespace {

constexpr int kOk = 0;
constexpr int kFail = 1;
constexpr int kUsage = 2;

int cmd_run(const std::string& path)
{
    const auto cfg = load_config(path);
    std::vector<MetricsRow> rows;
    try {
        rows = run_config(cfg);
    } catch (const ConfigError&) {
        throw;
    } catch (const GraphError& e) {
        throw ConfigError(e.what());
    } catch (const std::exception& e) {
        std::cerr << "run failed: " << e.what() << '\n';
        return kFail;
    }
    write_csv(std::cout, rows);
    if (cfg.csv) {
        std::ofstream out(*cfg.csv);
        write_csv(out, rows);
    }
    const bool ok = std::all_of(rows.begin(), rows.end(), [](const MetricsRow& r) { return r.mst_ok && r.terminated; });
    return ok ? kOk : kFail;
}

int cmd_sweep(const std::string& path, const std::string& out_path)
{
    const auto cfg = load_config(path);
    if (std::set<std::size_t>(cfg.graph.n.begin(), cfg.graph.n.end()).size() < 3) {
        throw ConfigError("sweep needs at least 3 distinct values of graph.n");
    }
    std::vector<MetricsRow> rows;
    try {
        rows = run_config(cfg);
    } catch (const GraphError& e) {
        throw ConfigError(e.what());
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        std::cerr << "sweep failed: " << e.what() << '\n';
        return kFail;
    }
    std::ofstream out(out_path);
    if (!out) {
        throw ConfigError("cannot write " + out_path);
    }
    write_csv(out, rows);
    const auto s = summarize(rows);
    const auto j = s.to_json();
    std::cout << j.dump(2) << '\n';
    if (cfg.json) {
        std::ofstream(*cfg.json) << j.dump(2) << '\n';
    }
    return s.all_mst_ok && s.all_terminated ? kOk : kFail;
}

int cmd_verify(const std::string& path, std::uint64_t seed, bool print)
{
    WeightedGraph g;
    {
        std::ifstream in(path);
        if (!in) {
            throw ConfigError("cannot open graph file " + path);
        }
        try {
            g = read_graph(in);
        } catch (const GraphError& e) {
            throw ConfigError(e.what());
        }
    }
    ExperimentConfig cfg;
    const auto rr = run_instance(g, cfg, DelayKind::uniform, seed);
    const auto diff = mst_diff(g, rr.run.mst, kruskal_mst(g));
    if (print) {
        write_edges(std::cout, rr.run.report.output);
    }
    if (!diff.empty()) {
        std::cout << "mismatch: " << diff.size() << " edges in the symmetric difference\n";
        for (const auto& e : diff) {
            std::cout << e.u << ' ' << e.v << ' ' << e.w << '\n';
        }
        return kFail;
    }
    if (!rr.row.terminated) {
        std::cout << "run did not terminate cleanly\n";
        return kFail;
    }
    std::cerr << "ok: " << rr.run.mst.size() << " MST edges, " << rr.row.messages_total << " messages, time "
              << rr.row.time_total << '\n';
    return kOk;
}

int cmd_mpx_stats(const std::string& kind, std::size_t n, double beta, std::size_t trials, std::uint64_t seed)
{
    if (trials < 1) {
        throw ConfigError("trials must be at least 1");
    }
    if (!(beta > 0 && beta < 1)) {
        throw ConfigError("beta must lie in (0, 1)");
    }
    GraphSpec spec;
    try {
        spec.kind = parse_graph_kind(kind);
    } catch (const GraphError& e) {
        throw ConfigError(e.what());
    }
    WeightedGraph g;
    try {
        g = build_graph(spec, n, seed);
    } catch (const GraphError& e) {
        throw ConfigError(e.what());
    }
    std::cout << mpx_stats_json(mpx_stats(g, beta, trials, seed)).dump(2) << '\n';
    return kOk;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"asynchronous MST simulator"};
    app.require_subcommand(1);

    std::string config, out, graph, kind = "erdos_renyi";
    std::uint64_t seed = 0;
    std::size_t n = 200, trials = 200;
    double beta = 0.2;
    bool print = false;

    auto* run = app.add_subcommand("run", "run every (n, delay, seed) of a config and print CSV rows");
    run->add_option("--config", config, "JSON config file")->required();

    auto* sweep = app.add_subcommand("sweep", "scaling sweep: CSV rows plus a JSON summary");
    sweep->add_option("--config", config, "JSON config file")->required();
    sweep->add_option("--out", out, "CSV output path")->required();

    auto* verify = app.add_subcommand("verify", "compare the algorithm's MST with Kruskal on a graph file");
    verify->add_option("--graph", graph, "graph file: 'n m' then m lines 'u v w'")->required();
    verify->add_option("--seed", seed, "run seed");
    verify->add_flag("--print", print, "dump the MST edges sorted by weight");

    auto* mpx = app.add_subcommand("mpx-stats", "MPX decomposition statistics as JSON");
    mpx->add_option("--kind", kind, "graph kind");
    mpx->add_option("--n", n, "node count");
    mpx->add_option("--beta", beta, "shift rate");
    mpx->add_option("--trials", trials, "number of trials");
    mpx->add_option("--seed", seed, "seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*run) return cmd_run(config);
        if (*sweep) return cmd_sweep(config, out);
        if (*verify) return cmd_verify(graph, seed, print);
        if (*mpx) return cmd_mpx_stats(kind, n, beta, trials, seed);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << '\n';
        return kFail;
    }
    return kUsage;
}
