#pragma once

// Deterministic discrete-event engine for asynchronous CONGEST networks in
// the clean-network (KT0) model. Nodes address neighbours only by port,
// links are FIFO, every message takes a delay in (0, 1] time units, and
// local computation is free.

#include "amst/graph.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cinttypes>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <memory>
#include <optional>
#include <ostream>
#include <queue>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace amst {

// ---------------------------------------------------------------------------
// Time: fixed point with nine fractional digits.

using Ticks = std::int64_t;
inline constexpr Ticks kTicksPerUnit = 1'000'000'000;

struct SimTime {
    Ticks ticks = 0;

    static constexpr SimTime units(double u) { return SimTime{static_cast<Ticks>(u * static_cast<double>(kTicksPerUnit) + 0.5)}; }
    double as_units() const { return static_cast<double>(ticks) / static_cast<double>(kTicksPerUnit); }
    std::string str() const
    {
        char buf[48];
        std::snprintf(buf, sizeof(buf), "%" PRId64 ".%09" PRId64, ticks / kTicksPerUnit, ticks % kTicksPerUnit);
        return buf;
    }
    auto operator<=>(const SimTime&) const = default;
};

// ---------------------------------------------------------------------------
// Hashing helpers for counter-based randomness.

inline constexpr std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

template <class... Ts>
constexpr std::uint64_t hash_all(std::uint64_t first, Ts... rest)
{
    std::uint64_t h = splitmix64(first);
    ((h = hash_combine(h, static_cast<std::uint64_t>(rest))), ...);
    return h;
}

// Uniform in (0, 1].
inline double unit_interval_open_closed(std::uint64_t h)
{
    return (static_cast<double>(h >> 11) + 1.0) * 0x1.0p-53;
}

// ---------------------------------------------------------------------------
// Messages

class ContractViolation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NonTermination : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kPayloadWords = 8;
inline constexpr std::size_t kPayloadBitFactor = 8;

inline std::size_t word_bits(std::int64_t x)
{
    if (x < 0) {
        return static_cast<std::size_t>(std::bit_width(static_cast<std::uint64_t>(-x))) + 1;
    }
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::bit_width(static_cast<std::uint64_t>(x))));
}

inline std::size_t log2_ceil(std::size_t n)
{
    return n <= 1 ? 1 : static_cast<std::size_t>(std::bit_width(n - 1));
}

// c * log2(n) bits with c = kPayloadBitFactor.
inline std::size_t payload_bit_bound(std::size_t n) { return kPayloadBitFactor * log2_ceil(n); }

// `kind` and `tag` are demultiplexing headers (message type and the
// phase/step/round counters of the owning procedure); `words` is the
// accounted O(log n)-bit body.
struct Payload {
    std::uint16_t kind = 0;
    std::uint8_t stage = 0;
    std::uint8_t size = 0;
    std::uint64_t tag = 0;
    std::array<std::int64_t, kPayloadWords> words{};

    Payload() = default;
    Payload(std::uint16_t k, std::uint64_t t, std::initializer_list<std::int64_t> body = {}) : kind(k), tag(t)
    {
        for (auto w : body) {
            push(w);
        }
    }

    Payload& push(std::int64_t w)
    {
        if (size >= kPayloadWords) {
            throw ContractViolation("payload exceeds " + std::to_string(kPayloadWords) + " words");
        }
        words[size++] = w;
        return *this;
    }
    std::int64_t operator[](std::size_t i) const
    {
        if (i >= size) {
            throw ProtocolError("payload word " + std::to_string(i) + " missing (kind " + std::to_string(kind) + ")");
        }
        return words[i];
    }
    std::size_t bits() const
    {
        std::size_t b = 0;
        for (std::size_t i = 0; i < size; ++i) {
            b += word_bits(words[i]);
        }
        return b;
    }
};

// ---------------------------------------------------------------------------
// Delay models

enum class DelayKind { unit, uniform, per_edge_constant, laggy_edge_adversary };

inline std::string to_string(DelayKind k)
{
    switch (k) {
    case DelayKind::unit: return "unit";
    case DelayKind::uniform: return "uniform";
    case DelayKind::per_edge_constant: return "per_edge_constant";
    case DelayKind::laggy_edge_adversary: return "laggy_edge_adversary";
    }
    return "?";
}

inline DelayKind parse_delay_kind(const std::string& s)
{
    for (auto k : {DelayKind::unit, DelayKind::uniform, DelayKind::per_edge_constant, DelayKind::laggy_edge_adversary}) {
        if (to_string(k) == s) {
            return k;
        }
    }
    throw std::invalid_argument("unknown delay model '" + s + "'");
}

struct DelayModel {
    DelayKind kind = DelayKind::unit;
    std::uint64_t seed = 0;
    double slow_fraction = 0.5;   // laggy: share of edges held at delay 1
    double fast_delay = 1e-3;     // laggy: delay of every other edge
};

// Every produced delay lies in (0, 1] and depends only on (model, directed
// edge, per-edge message index).
class DelaySampler {
public:
    DelaySampler(const DelayModel& model, const WeightedGraph& g) : model_(model), graph_(&g)
    {
        if (model.kind == DelayKind::laggy_edge_adversary) {
            if (!(model.slow_fraction >= 0.0 && model.slow_fraction <= 1.0) || !(model.fast_delay > 0.0 && model.fast_delay <= 1.0)) {
                throw std::invalid_argument("laggy adversary parameters out of range");
            }
            slow_.assign(g.edge_count(), 0);
            std::vector<std::size_t> order(g.edge_count());
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::mt19937_64 rng(model.seed);
            std::shuffle(order.begin(), order.end(), rng);
            const auto k = static_cast<std::size_t>(std::llround(model.slow_fraction * static_cast<double>(g.edge_count())));
            for (std::size_t i = 0; i < k; ++i) {
                slow_[order[i]] = 1;
            }
        }
    }

    Ticks sample(NodeId src, Port port, std::uint64_t msg_index) const
    {
        switch (model_.kind) {
        case DelayKind::unit:
            return kTicksPerUnit;
        case DelayKind::uniform:
            return 1 + static_cast<Ticks>(hash_all(model_.seed, 0x11u, src, port, msg_index) % kTicksPerUnit);
        case DelayKind::per_edge_constant: {
            const auto& e = graph_->ports(src)[static_cast<std::size_t>(port)];
            return 1 + static_cast<Ticks>(hash_all(model_.seed, 0x22u, e.edge) % kTicksPerUnit);
        }
        case DelayKind::laggy_edge_adversary: {
            const auto& e = graph_->ports(src)[static_cast<std::size_t>(port)];
            if (slow_[e.edge]) {
                return kTicksPerUnit;
            }
            return std::max<Ticks>(1, SimTime::units(model_.fast_delay).ticks);
        }
        }
        return kTicksPerUnit;
    }

    bool is_slow_edge(std::size_t edge) const { return !slow_.empty() && slow_[edge]; }

private:
    DelayModel model_;
    const WeightedGraph* graph_;
    std::vector<std::uint8_t> slow_;
};

inline double sample_delay(const DelayModel& model, const WeightedGraph& g, NodeId src, Port port, std::uint64_t msg_index)
{
    return static_cast<double>(DelaySampler(model, g).sample(src, port, msg_index)) / static_cast<double>(kTicksPerUnit);
}

// ---------------------------------------------------------------------------
// Wake-up schedules

struct WakeupSchedule {
    std::vector<std::optional<Ticks>> wake_time;  // nullopt: only woken by a message

    static WakeupSchedule all_at_zero(std::size_t n) { return {std::vector<std::optional<Ticks>>(n, Ticks{0})}; }
    static WakeupSchedule single(std::size_t n, NodeId v)
    {
        WakeupSchedule s{std::vector<std::optional<Ticks>>(n)};
        s.wake_time.at(static_cast<std::size_t>(v)) = Ticks{0};
        return s;
    }
    static WakeupSchedule single_random(std::size_t n, std::uint64_t seed)
    {
        return single(n, static_cast<NodeId>(hash_all(seed, 0x33u) % n));
    }
    // Every node wakes spontaneously at a uniform time in [0, spread].
    static WakeupSchedule staggered_uniform(std::size_t n, std::uint64_t seed, double spread)
    {
        WakeupSchedule s{std::vector<std::optional<Ticks>>(n)};
        for (std::size_t v = 0; v < n; ++v) {
            const double u = unit_interval_open_closed(hash_all(seed, 0x44u, v));
            s.wake_time[v] = SimTime::units(spread * (1.0 - u)).ticks;
        }
        return s;
    }
};

// ---------------------------------------------------------------------------
// Reports

struct StageStats {
    std::uint64_t messages = 0;
    SimTime first{};
    SimTime last{};
};

struct RunReport {
    std::uint64_t message_count = 0;
    std::uint64_t bits_total = 0;
    SimTime first_wake{};
    SimTime completion_time{};
    std::map<int, StageStats> per_stage;
    bool terminated = false;
    std::size_t terminated_nodes = 0;
    std::size_t queue_remaining = 0;
    std::size_t held_remaining = 0;     // stage-buffered, never released
    std::size_t leftover_messages = 0;  // reported by the protocol (unconsumed inputs)
    std::uint64_t events = 0;
    std::vector<Edge> output;

    std::string serialize() const
    {
        std::ostringstream os;
        os << "messages=" << message_count << " bits=" << bits_total << " first_wake=" << first_wake.str()
           << " completion=" << completion_time.str() << " terminated=" << terminated << " nodes=" << terminated_nodes
           << " queue=" << queue_remaining << " held=" << held_remaining << " leftover=" << leftover_messages
           << " events=" << events << '\n';
        for (const auto& [k, s] : per_stage) {
            os << "stage " << k << " messages=" << s.messages << " first=" << s.first.str() << " last=" << s.last.str()
               << '\n';
        }
        for (const auto& e : output) {
            os << e.u << ' ' << e.v << ' ' << e.w << '\n';
        }
        return os.str();
    }
};

class IntegrityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Cross-checks the counters of a finished run.
inline void account(const RunReport& r)
{
    std::uint64_t sum = 0;
    for (const auto& [k, s] : r.per_stage) {
        sum += s.messages;
    }
    if (sum != r.message_count) {
        throw IntegrityError("message_count " + std::to_string(r.message_count) + " != per-stage sum " +
                             std::to_string(sum));
    }
    if (r.completion_time.ticks < 0) {
        throw IntegrityError("completion_time is negative");
    }
    if (r.terminated && r.queue_remaining != 0) {
        throw IntegrityError("terminated with " + std::to_string(r.queue_remaining) + " queued events");
    }
    if (r.terminated && r.held_remaining != 0) {
        throw IntegrityError("terminated with " + std::to_string(r.held_remaining) + " stage-buffered messages");
    }
    if (r.terminated && r.leftover_messages != 0) {
        throw IntegrityError("terminated with " + std::to_string(r.leftover_messages) + " unconsumed messages");
    }
}

// ---------------------------------------------------------------------------
// Protocol interface

class Kernel;

class NodeContext {
public:
    NodeId id() const { return id_; }
    std::size_t n() const;
    std::size_t degree() const;
    Weight port_weight(Port p) const;
    SimTime now() const;
    std::uint64_t run_seed() const;
    int stage() const;
    // False when the node was woken by an incoming message.
    bool woke_spontaneously() const;

    void send(Port p, const Payload& msg);
    void terminate();
    // Releases held messages whose stage tag is <= `stage`.
    void advance_stage(int stage);

private:
    friend class Kernel;
    Kernel* kernel_ = nullptr;
    NodeId id_ = 0;
};

class Protocol {
public:
    virtual ~Protocol() = default;
    virtual void on_wake(NodeContext& ctx) = 0;
    virtual void on_message(NodeContext& ctx, Port port, const Payload& msg) = 0;
    // Messages the protocol accepted but never consumed.
    virtual std::size_t leftover_messages() const { return 0; }
};

struct RunOptions {
    DelayModel delays{};
    std::optional<WakeupSchedule> wakeup;  // default: all nodes at time 0
    std::uint64_t seed = 0;
    std::uint64_t event_budget = 2'000'000'000ULL;
    std::ostream* trace = nullptr;
    // Replaces the delay model when set (scripted scenarios in tests).
    std::function<double(NodeId, Port, std::uint64_t)> delay_override;
};

class Kernel {
public:
    Kernel(const WeightedGraph& g, const RunOptions& opt)
        : graph_(g), opt_(opt), delays_(opt.delays, g), nodes_(g.node_count()), contexts_(g.node_count()),
          bit_bound_(payload_bit_bound(g.node_count()))
    {
        for (std::size_t v = 0; v < nodes_.size(); ++v) {
            contexts_[v].kernel_ = this;
            contexts_[v].id_ = static_cast<NodeId>(v);
            nodes_[v].last_delivery.assign(g.degree(static_cast<NodeId>(v)), 0);
            nodes_[v].sent.assign(g.degree(static_cast<NodeId>(v)), 0);
        }
    }

    RunReport run(Protocol& protocol)
    {
        protocol_ = &protocol;
        const auto n = graph_.node_count();
        const WakeupSchedule sched = opt_.wakeup.value_or(WakeupSchedule::all_at_zero(n));
        if (sched.wake_time.size() != n) {
            throw std::invalid_argument("wake-up schedule size mismatch");
        }
        bool any = false;
        for (std::size_t v = 0; v < n; ++v) {
            if (sched.wake_time[v]) {
                any = true;
                push({*sched.wake_time[v], static_cast<NodeId>(v), -1, seq_++, {}});
            }
        }
        if (!any) {
            throw std::invalid_argument("wake-up schedule wakes no node");
        }

        while (!queue_.empty()) {
            if (++report_.events > opt_.event_budget) {
                throw NonTermination("event budget exceeded\n" + snapshot());
            }
            Event ev = queue_.top();
            queue_.pop();
            now_ = ev.time;
            auto& node = nodes_[static_cast<std::size_t>(ev.dst)];
            if (ev.port < 0) {
                wake(ev.dst, true);
                continue;
            }
            ++report_.message_count;
            report_.bits_total += ev.msg.bits();
            auto& st = report_.per_stage[ev.msg.stage];
            if (st.messages++ == 0) {
                st.first = SimTime{now_};
            }
            st.last = SimTime{now_};
            if (opt_.trace) {
                const NodeId src = graph_.ports(ev.dst)[static_cast<std::size_t>(ev.port)].neighbor;
                *opt_.trace << "t=" << SimTime{now_}.str() << " deliver " << src << "->" << ev.dst
                            << " stage=" << int(ev.msg.stage) << " bits=" << ev.msg.bits() << '\n';
            }
            if (node.terminated) {
                throw ProtocolError("message (kind " + std::to_string(ev.msg.kind) + ") delivered to terminated node " +
                                    std::to_string(ev.dst));
            }
            wake(ev.dst, false);
            if (ev.msg.stage > node.stage) {
                node.held.push_back({ev.port, ev.msg});
                continue;
            }
            deliver(ev.dst, ev.port, ev.msg);
        }

        report_.terminated_nodes = 0;
        Ticks last_term = first_wake_;
        for (const auto& nd : nodes_) {
            if (nd.terminated) {
                ++report_.terminated_nodes;
                last_term = std::max(last_term, nd.terminated_at);
            }
            report_.held_remaining += nd.held.size();
        }
        report_.first_wake = SimTime{first_wake_};
        report_.completion_time = SimTime{last_term - first_wake_};
        report_.queue_remaining = queue_.size();
        report_.leftover_messages = protocol.leftover_messages();
        report_.terminated = report_.terminated_nodes == n && report_.queue_remaining == 0;
        protocol_ = nullptr;
        return report_;
    }

    const WeightedGraph& graph() const { return graph_; }

private:
    friend class NodeContext;

    struct Event {
        Ticks time;
        NodeId dst;
        Port port;  // arrival port at dst; -1 for a wake-up
        std::uint64_t seq;
        Payload msg;
    };
    struct Later {
        bool operator()(const Event& a, const Event& b) const
        {
            if (a.time != b.time) return a.time > b.time;
            if (a.dst != b.dst) return a.dst > b.dst;
            if (a.port != b.port) return a.port > b.port;
            return a.seq > b.seq;
        }
    };
    struct Held {
        Port port;
        Payload msg;
    };
    struct NodeRec {
        bool awake = false;
        bool spontaneous = false;
        bool terminated = false;
        Ticks terminated_at = 0;
        int stage = 0;
        std::vector<Ticks> last_delivery;  // per outgoing port, for FIFO
        std::vector<std::uint64_t> sent;   // per outgoing port message index
        std::vector<Held> held;
        std::vector<Held> released;
        bool in_callback = false;
    };

    void push(Event ev) { queue_.push(std::move(ev)); }

    void wake(NodeId v, bool spontaneous)
    {
        auto& node = nodes_[static_cast<std::size_t>(v)];
        if (node.awake) {
            return;
        }
        node.spontaneous = spontaneous;
        if (!any_awake_) {
            any_awake_ = true;
            first_wake_ = now_;
        }
        node.awake = true;
        run_callback(v, [&] { protocol_->on_wake(contexts_[static_cast<std::size_t>(v)]); });
    }

    void deliver(NodeId v, Port port, const Payload& msg)
    {
        run_callback(v, [&] { protocol_->on_message(contexts_[static_cast<std::size_t>(v)], port, msg); });
    }

    template <class F>
    void run_callback(NodeId v, F&& f)
    {
        auto& node = nodes_[static_cast<std::size_t>(v)];
        if (node.terminated) {
            return;
        }
        node.in_callback = true;
        f();
        node.in_callback = false;
        while (!node.released.empty() && !node.terminated) {
            Held h = node.released.front();
            node.released.erase(node.released.begin());
            node.in_callback = true;
            protocol_->on_message(contexts_[static_cast<std::size_t>(v)], h.port, h.msg);
            node.in_callback = false;
        }
    }

    void send(NodeId src, Port p, const Payload& msg)
    {
        auto& node = nodes_[static_cast<std::size_t>(src)];
        if (node.terminated) {
            throw ProtocolError("terminated node " + std::to_string(src) + " attempted to send");
        }
        if (p < 0 || static_cast<std::size_t>(p) >= graph_.degree(src)) {
            throw ProtocolError("node " + std::to_string(src) + " sent on invalid port " + std::to_string(p));
        }
        if (msg.bits() > bit_bound_) {
            throw ContractViolation("payload of " + std::to_string(msg.bits()) + " bits exceeds bound " +
                                    std::to_string(bit_bound_) + " (kind " + std::to_string(msg.kind) + ")");
        }
        const auto idx = node.sent[static_cast<std::size_t>(p)]++;
        Ticks delay = delays_.sample(src, p, idx);
        if (opt_.delay_override) {
            const double d = opt_.delay_override(src, p, idx);
            if (!(d > 0.0 && d <= 1.0)) {
                throw ContractViolation("scripted delay outside (0, 1]");
            }
            delay = SimTime::units(d).ticks;
        }
        // FIFO: never overtake an earlier message on the same directed edge.
        const Ticks at = std::max(now_ + delay, node.last_delivery[static_cast<std::size_t>(p)]);
        node.last_delivery[static_cast<std::size_t>(p)] = at;
        const auto& entry = graph_.ports(src)[static_cast<std::size_t>(p)];
        push({at, entry.neighbor, entry.remote_port, seq_++, msg});
    }

    void terminate(NodeId v)
    {
        auto& node = nodes_[static_cast<std::size_t>(v)];
        if (!node.terminated) {
            node.terminated = true;
            node.terminated_at = now_;
        }
    }

    void advance_stage(NodeId v, int stage)
    {
        auto& node = nodes_[static_cast<std::size_t>(v)];
        node.stage = std::max(node.stage, stage);
        std::vector<Held> keep;
        for (auto& h : node.held) {
            if (h.msg.stage <= node.stage) {
                node.released.push_back(h);
            } else {
                keep.push_back(h);
            }
        }
        node.held = std::move(keep);
    }

    std::string snapshot() const
    {
        std::ostringstream os;
        os << "now=" << SimTime{now_}.str() << " queued=" << queue_.size() << '\n';
        std::size_t shown = 0;
        for (std::size_t v = 0; v < nodes_.size() && shown < 20; ++v) {
            if (!nodes_[v].terminated) {
                os << "  node " << v << " awake=" << nodes_[v].awake << " stage=" << nodes_[v].stage
                   << " held=" << nodes_[v].held.size() << '\n';
                ++shown;
            }
        }
        auto copy = queue_;
        for (int i = 0; i < 10 && !copy.empty(); ++i) {
            const auto& e = copy.top();
            os << "  event t=" << SimTime{e.time}.str() << " dst=" << e.dst << " port=" << e.port
               << " kind=" << e.msg.kind << '\n';
            copy.pop();
        }
        return os.str();
    }

    const WeightedGraph& graph_;
    RunOptions opt_;
    DelaySampler delays_;
    std::vector<NodeRec> nodes_;
    std::vector<NodeContext> contexts_;
    std::priority_queue<Event, std::vector<Event>, Later> queue_;
    Protocol* protocol_ = nullptr;
    RunReport report_;
    Ticks now_ = 0;
    Ticks first_wake_ = 0;
    bool any_awake_ = false;
    std::uint64_t seq_ = 0;
    std::size_t bit_bound_;
};

inline std::size_t NodeContext::n() const { return kernel_->graph_.node_count(); }
inline std::size_t NodeContext::degree() const { return kernel_->graph_.degree(id_); }
inline Weight NodeContext::port_weight(Port p) const { return kernel_->graph_.ports(id_).at(static_cast<std::size_t>(p)).weight; }
inline SimTime NodeContext::now() const { return SimTime{kernel_->now_}; }
inline std::uint64_t NodeContext::run_seed() const { return kernel_->opt_.seed; }
inline int NodeContext::stage() const { return kernel_->nodes_[static_cast<std::size_t>(id_)].stage; }
inline bool NodeContext::woke_spontaneously() const { return kernel_->nodes_[static_cast<std::size_t>(id_)].spontaneous; }
inline void NodeContext::send(Port p, const Payload& msg) { kernel_->send(id_, p, msg); }
inline void NodeContext::terminate() { kernel_->terminate(id_); }
inline void NodeContext::advance_stage(int stage) { kernel_->advance_stage(id_, stage); }

inline RunReport run(const WeightedGraph& g, Protocol& protocol, const RunOptions& opt)
{
    Kernel k(g, opt);
    return k.run(protocol);
}

}  // namespace amst
