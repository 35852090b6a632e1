#include "amst/coro.hpp"
#include "amst/kernel.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace amst;

namespace {

// Source floods once; everybody else forwards the first copy and stops.
class Flood : public Protocol {
public:
    explicit Flood(NodeId source) : source_(source) {}
    void on_wake(NodeContext& ctx) override
    {
        if (ctx.id() == source_) {
            for (Port p = 0; p < static_cast<Port>(ctx.degree()); ++p) {
                ctx.send(p, Payload(1, 0, {ctx.id()}));
            }
            ctx.terminate();
        }
    }
    void on_message(NodeContext& ctx, Port port, const Payload& msg) override
    {
        for (Port p = 0; p < static_cast<Port>(ctx.degree()); ++p) {
            if (p != port) {
                ctx.send(p, msg);
            }
        }
        ctx.terminate();
    }

private:
    NodeId source_;
};

class Silent : public Protocol {
public:
    void on_wake(NodeContext& ctx) override { ctx.terminate(); }
    void on_message(NodeContext&, Port, const Payload&) override {}
};

// Node 0 sends `count` messages to node 1 from a chain of wake-ups.
class Recorder : public Protocol {
public:
    std::vector<std::pair<Ticks, std::int64_t>> got;
    std::vector<int> order_seen_stage;
    int count = 1;
    void on_wake(NodeContext& ctx) override
    {
        if (ctx.id() == 0) {
            for (int i = 0; i < count; ++i) {
                ctx.send(0, Payload(1, 0, {i}));
            }
            ctx.terminate();
        }
    }
    void on_message(NodeContext& ctx, Port, const Payload& msg) override
    {
        got.emplace_back(ctx.now().ticks, msg[0]);
        if (static_cast<int>(got.size()) == count) {
            ctx.terminate();
        }
    }
};

WeightedGraph path(std::size_t n) { return generate_graph(GraphKind::path, n, {}, 1); }

}  // namespace

TEST(Kernel, FloodOnPathHandSimulated)
{
    auto g = path(5);
    Flood f(0);
    RunOptions opt;
    opt.wakeup = WakeupSchedule::single(5, 0);
    auto r = run(g, f, opt);
    EXPECT_EQ(r.message_count, 4u);
    EXPECT_EQ(r.completion_time.str(), "4.000000000");
    EXPECT_TRUE(r.terminated);
    EXPECT_NO_THROW(account(r));
}

TEST(Kernel, TraceFormat)
{
    auto g = path(3);
    Flood f(0);
    RunOptions opt;
    opt.wakeup = WakeupSchedule::single(3, 0);
    std::ostringstream tr;
    opt.trace = &tr;
    run(g, f, opt);
    EXPECT_EQ(tr.str(), "t=1.000000000 deliver 0->1 stage=0 bits=1\nt=2.000000000 deliver 1->2 stage=0 bits=1\n");
}

TEST(Kernel, Deterministic)
{
    auto g = generate_graph(GraphKind::tree_plus_edges, 50, {}, 4);
    auto once = [&] {
        Flood f(7);
        RunOptions opt;
        opt.delays = {DelayKind::uniform, 99};
        opt.wakeup = WakeupSchedule::single(50, 7);
        opt.seed = 3;
        return run(g, f, opt).serialize();
    };
    EXPECT_EQ(once(), once());
}

TEST(Kernel, FifoOverridesShorterDelay)
{
    auto g = path(2);
    // Message 0 leaves at 0 with delay 0.9; message 1 is scripted with 0.3 but
    // cannot overtake.
    Recorder r;
    r.count = 2;
    RunOptions opt;
    opt.wakeup = WakeupSchedule::single(2, 0);
    opt.delay_override = [](NodeId, Port, std::uint64_t idx) { return idx == 0 ? 0.9 : 0.3; };
    auto rep = run(g, r, opt);
    ASSERT_EQ(r.got.size(), 2u);
    EXPECT_EQ(r.got[0].second, 0);
    EXPECT_EQ(r.got[1].second, 1);
    EXPECT_GE(r.got[1].first, r.got[0].first);
    EXPECT_TRUE(rep.terminated);
}

TEST(Kernel, FifoScenarioWithStaggeredSends)
{
    // Sends at 0.1 (delay 0.9) and 0.2 (delay 0.3): arrivals 1.0 then >= 1.0.
    auto g = path(3);
    struct P : Protocol {
        std::vector<Ticks> arrivals;
        void on_wake(NodeContext& ctx) override
        {
            if (ctx.id() == 0) {
                ctx.send(0, Payload(1, 0, {0}));
            }
        }
        void on_message(NodeContext& ctx, Port, const Payload& m) override
        {
            if (ctx.id() == 1) {
                ctx.send(1, m);
                if (m[0] == 1) {
                    ctx.terminate();
                } else {
                    ctx.send(0, Payload(2, 0, {}));
                }
            } else if (ctx.id() == 0) {
                ctx.send(0, Payload(1, 0, {1}));
                ctx.terminate();
            } else {
                arrivals.push_back(ctx.now().ticks);
                if (arrivals.size() == 2) {
                    ctx.terminate();
                }
            }
        }
    } p;
    RunOptions opt;
    opt.wakeup = WakeupSchedule::single(3, 0);
    // 0->1 first: 0.1; 1->0 reply: 0.1 (so the second send from 1 happens at 0.2).
    // 1->2: first 0.9, second 0.3.
    opt.delay_override = [](NodeId src, Port port, std::uint64_t idx) {
        if (src == 1 && port == 1) {
            return idx == 0 ? 0.9 : 0.3;
        }
        return src == 0 && idx == 0 ? 0.1 : 0.05;
    };
    run(g, p, opt);
    ASSERT_EQ(p.arrivals.size(), 2u);
    EXPECT_EQ(p.arrivals[0], SimTime::units(1.0).ticks);
    EXPECT_GE(p.arrivals[1], SimTime::units(1.0).ticks);
}

TEST(Kernel, DelayModels)
{
    auto g = generate_graph(GraphKind::tree_plus_edges, 60, GraphParams{.extra_edges = 41}, 5);
    ASSERT_EQ(g.edge_count(), 100u);
    EXPECT_EQ(sample_delay({DelayKind::unit, 1}, g, 0, 0, 5), 1.0);
    const DelayModel uni{DelayKind::uniform, 42};
    EXPECT_EQ(sample_delay(uni, g, 3, 0, 7), sample_delay(uni, g, 3, 0, 7));
    double sum = 0;
    for (std::uint64_t i = 0; i < 20000; ++i) {
        double d = sample_delay(uni, g, 3, 0, i);
        ASSERT_GT(d, 0.0);
        ASSERT_LE(d, 1.0);
        sum += d;
    }
    EXPECT_NEAR(sum / 20000, 0.5, 0.01);

    const DelayModel pec{DelayKind::per_edge_constant, 42};
    const auto& pe = g.ports(3)[0];
    EXPECT_EQ(sample_delay(pec, g, 3, 0, 1), sample_delay(pec, g, 3, 0, 9));
    EXPECT_EQ(sample_delay(pec, g, 3, 0, 1), sample_delay(pec, g, pe.neighbor, pe.remote_port, 4));

    DelayModel lag{DelayKind::laggy_edge_adversary, 7};
    lag.slow_fraction = 0.5;
    DelaySampler s(lag, g);
    std::size_t slow = 0;
    for (std::size_t e = 0; e < g.edge_count(); ++e) {
        slow += s.is_slow_edge(e);
    }
    EXPECT_EQ(slow, 50u);
    std::size_t at_one = 0;
    for (NodeId v = 0; v < 60; ++v) {
        for (Port p = 0; p < static_cast<Port>(g.degree(v)); ++p) {
            const double d = static_cast<double>(s.sample(v, p, 0)) / kTicksPerUnit;
            EXPECT_TRUE(d == 1.0 || d == 1e-3);
            at_one += d == 1.0;
        }
    }
    EXPECT_EQ(at_one, 100u);  // both directions of the 50 slow edges
}

TEST(Kernel, AccountExamples)
{
    auto g = path(4);
    Silent s;
    auto r = run(g, s, {});
    EXPECT_EQ(r.message_count, 0u);
    EXPECT_TRUE(r.terminated);
    EXPECT_NO_THROW(account(r));

    Recorder one;
    RunOptions opt;
    opt.wakeup = WakeupSchedule::single(2, 0);
    auto r1 = run(path(2), one, opt);
    EXPECT_EQ(r1.message_count, 1u);
    EXPECT_NO_THROW(account(r1));

    auto bad = r1;
    bad.per_stage[0].messages = 5;
    EXPECT_THROW(account(bad), IntegrityError);
    auto neg = r1;
    neg.completion_time = SimTime{-1};
    EXPECT_THROW(account(neg), IntegrityError);
    auto q = r1;
    q.queue_remaining = 1;
    EXPECT_THROW(account(q), IntegrityError);
}

TEST(Kernel, PayloadBitBound)
{
    EXPECT_EQ(word_bits(0), 1u);
    EXPECT_EQ(word_bits(1), 1u);
    EXPECT_EQ(word_bits(255), 8u);
    EXPECT_EQ(word_bits(-1), 2u);
    EXPECT_EQ(payload_bit_bound(16), 32u);

    struct Fat : Protocol {
        void on_wake(NodeContext& ctx) override
        {
            // 8 words of 60 bits on a 4-node graph (bound 16 bits).
            Payload p;
            for (int i = 0; i < 8; ++i) {
                p.push(std::int64_t{1} << 59);
            }
            ctx.send(0, p);
        }
        void on_message(NodeContext&, Port, const Payload&) override {}
    } fat;
    EXPECT_THROW(run(path(4), fat, {}), ContractViolation);
    Payload p;
    for (int i = 0; i < 8; ++i) {
        p.push(1);
    }
    EXPECT_THROW(p.push(1), ContractViolation);
}

TEST(Kernel, StageBufferingRedeliversWithoutExtraCount)
{
    // Node 0 sends a stage-1 message then a stage-0 message; node 1 is at
    // stage 0 and advances only after the stage-0 message.
    struct P : Protocol {
        std::vector<std::pair<int, Ticks>> seen;
        void on_wake(NodeContext& ctx) override
        {
            if (ctx.id() == 0) {
                Payload a(1, 0, {1});
                a.stage = 1;
                ctx.send(0, a);
                Payload b(2, 0, {0});
                ctx.send(0, b);
                ctx.terminate();
            }
        }
        void on_message(NodeContext& ctx, Port, const Payload& m) override
        {
            EXPECT_LE(m.stage, ctx.stage());
            seen.emplace_back(m.kind, ctx.now().ticks);
            if (m.kind == 2) {
                ctx.advance_stage(1);
            } else {
                ctx.terminate();
            }
        }
    } p;
    RunOptions opt;
    opt.wakeup = WakeupSchedule::single(2, 0);
    opt.delay_override = [](NodeId, Port, std::uint64_t idx) { return idx == 0 ? 0.2 : 0.5; };
    auto r = run(path(2), p, opt);
    ASSERT_EQ(p.seen.size(), 2u);
    EXPECT_EQ(p.seen[0].first, 2);
    EXPECT_EQ(p.seen[1].first, 1);
    EXPECT_EQ(p.seen[0].second, p.seen[1].second);  // zero extra time
    EXPECT_EQ(r.message_count, 2u);
    EXPECT_EQ(r.per_stage.at(1).messages, 1u);
    EXPECT_TRUE(r.terminated);
}

TEST(Kernel, EventBudgetDiagnostic)
{
    // Ping-pong forever.
    struct P : Protocol {
        void on_wake(NodeContext& ctx) override
        {
            if (ctx.id() == 0) {
                ctx.send(0, Payload(1, 0));
            }
        }
        void on_message(NodeContext& ctx, Port p, const Payload& m) override { ctx.send(p, m); }
    } p;
    RunOptions opt;
    opt.event_budget = 1000;
    try {
        run(path(2), p, opt);
        FAIL() << "expected NonTermination";
    } catch (const NonTermination& e) {
        EXPECT_NE(std::string(e.what()).find("event t="), std::string::npos);
    }
}

TEST(Kernel, MessageToTerminatedNodeIsAnError)
{
    struct P : Protocol {
        void on_wake(NodeContext& ctx) override
        {
            if (ctx.id() == 0) {
                ctx.send(0, Payload(1, 0));
            }
            ctx.terminate();
        }
        void on_message(NodeContext&, Port, const Payload&) override {}
    } p;
    EXPECT_THROW(run(path(2), p, {}), ProtocolError);
}

TEST(Kernel, StaggeredWakeupsInRange)
{
    auto w = WakeupSchedule::staggered_uniform(100, 5, 3.0);
    for (const auto& t : w.wake_time) {
        ASSERT_TRUE(t.has_value());
        EXPECT_GE(*t, 0);
        EXPECT_LE(*t, SimTime::units(3.0).ticks);
    }
    auto s = WakeupSchedule::single_random(100, 5);
    EXPECT_EQ(std::count_if(s.wake_time.begin(), s.wake_time.end(), [](auto& t) { return t.has_value(); }), 1);
}

// ---------------------------------------------------------------------------
// Coroutine runtime

namespace {

Task<std::int64_t> sum_from_neighbours(Node& nd)
{
    for (Port p = 0; p < nd.ports(); ++p) {
        nd.send(p, 1, 0, {nd.id()});
    }
    std::int64_t s = 0;
    for (Port p = 0; p < nd.ports(); ++p) {
        auto in = co_await nd.recv(1, 0);
        s += in.msg[0];
    }
    co_return s;
}

Task<void> neighbour_sum_program(Node& nd, std::vector<std::int64_t>& out)
{
    auto s = co_await sum_from_neighbours(nd);
    out[static_cast<std::size_t>(nd.id())] = s;
}

}  // namespace

TEST(Coroutines, NeighbourSumMatchesDirectComputation)
{
    auto g = generate_graph(GraphKind::erdos_renyi, 40, GraphParams{.p = 0.15}, 2);
    std::vector<std::int64_t> out(40, -1);
    RunOptions opt;
    opt.delays = {DelayKind::uniform, 8};
    opt.wakeup = WakeupSchedule::single_random(40, 3);
    auto r = run_program(g, [&](Node& nd) { return neighbour_sum_program(nd, out); }, opt);
    EXPECT_TRUE(r.terminated);
    EXPECT_NO_THROW(account(r));
    EXPECT_EQ(r.message_count, 2 * g.edge_count());
    for (NodeId v = 0; v < 40; ++v) {
        std::int64_t s = 0;
        for (const auto& pe : g.ports(v)) {
            s += pe.neighbor;
        }
        EXPECT_EQ(out[static_cast<std::size_t>(v)], s);
    }
}

TEST(Coroutines, ExceptionsPropagateOutOfRun)
{
    auto g = path(2);
    auto prog = [](Node& nd) -> Task<void> {
        if (nd.id() == 1) {
            throw ProtocolError("boom");
        }
        co_return;
    };
    EXPECT_THROW(run_program(g, prog, {}), ProtocolError);
}
