#pragma once

// Node programs as C++20 coroutines on top of the event kernel. Each node
// runs one main Task; `co_await node.recv(...)` suspends until a matching
// message is in the node's mailbox. Sub-procedures are Tasks awaited with
// symmetric transfer, so nesting costs no stack.

#include "amst/kernel.hpp"

#include <coroutine>
#include <deque>
#include <exception>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

namespace amst {

template <class T = void>
class Task;

namespace detail {

struct PromiseBase {
    std::coroutine_handle<> continuation = std::noop_coroutine();
    std::exception_ptr error;

    std::suspend_always initial_suspend() noexcept { return {}; }
    struct Final {
        bool await_ready() noexcept { return false; }
        template <class P>
        std::coroutine_handle<> await_suspend(std::coroutine_handle<P> h) noexcept
        {
            return h.promise().continuation;
        }
        void await_resume() noexcept {}
    };
    Final final_suspend() noexcept { return {}; }
    void unhandled_exception() { error = std::current_exception(); }
};

}  // namespace detail

template <class T>
class [[nodiscard]] Task {
public:
    struct promise_type : detail::PromiseBase {
        std::optional<T> value;
        Task get_return_object() { return Task(std::coroutine_handle<promise_type>::from_promise(*this)); }
        void return_value(T v) { value.emplace(std::move(v)); }
    };

    Task(Task&& o) noexcept : h_(std::exchange(o.h_, {})) {}
    Task& operator=(Task&& o) noexcept
    {
        if (this != &o) {
            destroy();
            h_ = std::exchange(o.h_, {});
        }
        return *this;
    }
    ~Task() { destroy(); }

    bool await_ready() const noexcept { return false; }
    std::coroutine_handle<> await_suspend(std::coroutine_handle<> c) noexcept
    {
        h_.promise().continuation = c;
        return h_;
    }
    T await_resume()
    {
        if (h_.promise().error) {
            std::rethrow_exception(h_.promise().error);
        }
        return std::move(*h_.promise().value);
    }

private:
    explicit Task(std::coroutine_handle<promise_type> h) : h_(h) {}
    void destroy()
    {
        if (h_) {
            h_.destroy();
        }
    }
    std::coroutine_handle<promise_type> h_;
};

template <>
class [[nodiscard]] Task<void> {
public:
    struct promise_type : detail::PromiseBase {
        Task get_return_object() { return Task(std::coroutine_handle<promise_type>::from_promise(*this)); }
        void return_void() {}
    };

    Task(Task&& o) noexcept : h_(std::exchange(o.h_, {})) {}
    Task& operator=(Task&& o) noexcept
    {
        if (this != &o) {
            destroy();
            h_ = std::exchange(o.h_, {});
        }
        return *this;
    }
    ~Task() { destroy(); }

    bool await_ready() const noexcept { return false; }
    std::coroutine_handle<> await_suspend(std::coroutine_handle<> c) noexcept
    {
        h_.promise().continuation = c;
        return h_;
    }
    void await_resume()
    {
        if (h_.promise().error) {
            std::rethrow_exception(h_.promise().error);
        }
    }

    // Top-level driving (used by the runtime only).
    void start() { h_.resume(); }
    bool done() const { return h_.done(); }
    void rethrow_if_failed() const
    {
        if (h_.promise().error) {
            std::rethrow_exception(h_.promise().error);
        }
    }

private:
    explicit Task(std::coroutine_handle<promise_type> h) : h_(h) {}
    void destroy()
    {
        if (h_) {
            h_.destroy();
        }
    }
    std::coroutine_handle<promise_type> h_;
};

// ---------------------------------------------------------------------------

constexpr std::uint64_t kind_bit(std::uint16_t k) { return std::uint64_t{1} << k; }

template <class... K>
constexpr std::uint64_t kind_mask(K... k)
{
    return (kind_bit(static_cast<std::uint16_t>(k)) | ...);
}

struct Filter {
    std::uint64_t kind_mask = 0;
    std::uint64_t tag = 0;
    Port port = -1;        // -1: any port
    bool any_tag = false;

    bool matches(Port p, const Payload& m) const
    {
        return (kind_mask & kind_bit(m.kind)) != 0 && (any_tag || m.tag == tag) && (port < 0 || port == p);
    }
};

struct Inbound {
    Port port = -1;
    Payload msg;
};

// The private coin of node `id`, reproducible outside a run from the seed.
template <class... S>
std::uint64_t node_coin(std::uint64_t run_seed, NodeId id, S... stream)
{
    return hash_all(run_seed, 0x5eedu, static_cast<std::uint64_t>(id), static_cast<std::uint64_t>(stream)...);
}

class Node;
using Service = std::function<void(Node&, Port, const Payload&)>;

class Node {
public:
    Node(NodeContext& ctx) : ctx_(&ctx) {}
    Node(const Node&) = delete;
    Node& operator=(const Node&) = delete;

    NodeId id() const { return ctx_->id(); }
    std::size_t n() const { return ctx_->n(); }
    std::size_t degree() const { return ctx_->degree(); }
    Port ports() const { return static_cast<Port>(ctx_->degree()); }
    Weight weight(Port p) const { return ctx_->port_weight(p); }
    SimTime now() const { return ctx_->now(); }
    int stage() const { return ctx_->stage(); }
    bool woke_spontaneously() const { return ctx_->woke_spontaneously(); }

    // Private coin: a deterministic function of the run seed, this node and `stream`.
    template <class... S>
    std::uint64_t coin(S... stream) const
    {
        return node_coin(ctx_->run_seed(), id(), stream...);
    }

    void send(Port p, Payload msg)
    {
        msg.stage = static_cast<std::uint8_t>(ctx_->stage());
        ctx_->send(p, msg);
    }
    void send(Port p, std::uint16_t kind, std::uint64_t tag, std::initializer_list<std::int64_t> body = {})
    {
        send(p, Payload(kind, tag, body));
    }
    void set_stage(int s) { ctx_->advance_stage(s); }

    struct RecvAwaiter {
        Node* node;
        Filter filter;
        Inbound result;
        bool await_ready() { return node->take(filter, result); }
        void await_suspend(std::coroutine_handle<> h)
        {
            node->pending_ = Pending{filter, h, &result};
        }
        Inbound await_resume() { return std::move(result); }
    };

    RecvAwaiter recv(Filter f) { return RecvAwaiter{this, f, {}}; }
    RecvAwaiter recv(std::uint16_t kind, std::uint64_t tag, Port port = -1)
    {
        return RecvAwaiter{this, Filter{kind_bit(kind), tag, port, false}, {}};
    }

    // Handler run synchronously on arrival of `kind`, bypassing the mailbox.
    void serve(std::uint16_t kind, Service s)
    {
        if (services_.size() <= kind) {
            services_.resize(kind + 1u);
        }
        services_[kind] = std::move(s);
    }

    std::size_t mailbox_size() const { return mailbox_.size(); }

private:
    friend class CoroutineProtocol;

    struct Pending {
        Filter filter;
        std::coroutine_handle<> handle;
        Inbound* slot;
    };

    bool take(const Filter& f, Inbound& out)
    {
        for (auto it = mailbox_.begin(); it != mailbox_.end(); ++it) {
            if (f.matches(it->port, it->msg)) {
                out = std::move(*it);
                mailbox_.erase(it);
                return true;
            }
        }
        return false;
    }

    // Returns true when the main task should be checked for completion.
    bool arrive(Port p, const Payload& m)
    {
        if (m.kind < services_.size() && services_[m.kind]) {
            services_[m.kind](*this, p, m);
            return false;
        }
        if (pending_ && pending_->filter.matches(p, m)) {
            *pending_->slot = Inbound{p, m};
            auto h = pending_->handle;
            pending_.reset();
            h.resume();
            return true;
        }
        mailbox_.push_back(Inbound{p, m});
        return false;
    }

    NodeContext* ctx_;
    std::deque<Inbound> mailbox_;
    std::optional<Pending> pending_;
    std::vector<Service> services_;
    std::optional<Task<void>> main_;
};

// Runs `program` at every node; a node terminates when its program returns.
class CoroutineProtocol : public Protocol {
public:
    using Program = std::function<Task<void>(Node&)>;

    CoroutineProtocol(std::size_t n, Program program) : nodes_(n), program_(std::move(program)) {}

    void on_wake(NodeContext& ctx) override
    {
        auto& slot = nodes_[static_cast<std::size_t>(ctx.id())];
        slot = std::make_unique<Node>(ctx);
        slot->main_.emplace(program_(*slot));
        slot->main_->start();
        check(*slot, ctx);
    }

    void on_message(NodeContext& ctx, Port port, const Payload& msg) override
    {
        auto& node = *nodes_[static_cast<std::size_t>(ctx.id())];
        if (node.arrive(port, msg)) {
            check(node, ctx);
        }
    }

    std::size_t leftover_messages() const override
    {
        std::size_t k = 0;
        for (const auto& nd : nodes_) {
            if (nd) {
                k += nd->mailbox_size();
            }
        }
        return k;
    }

    Node* node(NodeId v) { return nodes_.at(static_cast<std::size_t>(v)).get(); }

private:
    static void check(Node& node, NodeContext& ctx)
    {
        if (node.main_ && node.main_->done()) {
            node.main_->rethrow_if_failed();
            node.services_.clear();
            ctx.terminate();
        }
    }

    std::vector<std::unique_ptr<Node>> nodes_;
    Program program_;
};

inline RunReport run_program(const WeightedGraph& g, CoroutineProtocol::Program program, const RunOptions& opt)
{
    CoroutineProtocol proto(g.node_count(), std::move(program));
    return run(g, proto, opt);
}

}  // namespace amst
