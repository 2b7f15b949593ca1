#pragma once

// Deterministic discrete-event network simulator.
//
// Events are ordered by (fire_at, seq); seq is assigned at submission, so events
// scheduled for the same instant fire in submission order. Every random choice
// comes from one seeded generator, which makes runs replayable bit for bit.
//
// Two channel flavours are modelled between every pair of nodes:
//  * datagrams: authenticated, may be dropped, duplicated or reordered (jitter);
//  * connections: authenticated, reliable and FIFO while they persist. A pair is
//    connected whenever both nodes are alive, both have network, and the link is
//    up. A break loses every frame in flight and reports failure to its sender;
//    reconnection happens after NetConfig::reconnect_delay and bumps the pair's
//    ConnectionId.
//
// Event log format: one record per line, tab separated,
//   <time_ms with 3 decimals> \t <node id or -> \t <kind> \t <detail>

#include "abcast/core_types.hpp"
#include "abcast/transport.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace abcast::sim
{
    enum class EventKind : std::uint8_t
    {
        Deliver,
        Timer,
        FaultStart,
        FaultEnd,
        Crash,
        Restart,
        Connect,
        SendComplete,
    };

    constexpr std::string_view to_string(EventKind kind) noexcept
    {
        switch (kind)
        {
        case EventKind::Deliver:
            return "deliver";
        case EventKind::Timer:
            return "timer";
        case EventKind::FaultStart:
            return "fault-start";
        case EventKind::FaultEnd:
            return "fault-end";
        case EventKind::Crash:
            return "crash";
        case EventKind::Restart:
            return "restart";
        case EventKind::Connect:
            return "connect";
        case EventKind::SendComplete:
            return "send-complete";
        }
        return "?";
    }

    struct SimEvent
    {
        TimePoint fire_at;
        std::uint64_t seq = 0;
        EventKind kind = EventKind::Timer;
        std::function<void()> action;
    };

    class EventQueue
    {
    public:
        [[nodiscard]] TimePoint now() const noexcept { return now_; }
        [[nodiscard]] std::size_t size() const noexcept { return heap_.size(); }
        [[nodiscard]] bool empty() const noexcept { return heap_.empty(); }
        [[nodiscard]] std::uint64_t processed() const noexcept { return processed_; }

        std::uint64_t schedule(TimePoint at, EventKind kind, std::function<void()> action)
        {
            if (at < now_)
            {
                throw Error(ErrorCode::Scheduling, "event at " + std::to_string(at.time_since_epoch().count()) +
                                                       "us is before now " +
                                                       std::to_string(now_.time_since_epoch().count()) + "us");
            }
            auto seq = next_seq_++;
            heap_.push_back(SimEvent{at, seq, kind, std::move(action)});
            std::push_heap(heap_.begin(), heap_.end(), later);
            return seq;
        }

        std::uint64_t schedule_after(Duration delay, EventKind kind, std::function<void()> action)
        {
            return schedule(now_ + delay, kind, std::move(action));
        }

        [[nodiscard]] std::optional<TimePoint> next_time() const
        {
            if (heap_.empty())
                return std::nullopt;
            return heap_.front().fire_at;
        }

        // Pops the earliest event without running it.
        SimEvent pop()
        {
            std::pop_heap(heap_.begin(), heap_.end(), later);
            SimEvent ev = std::move(heap_.back());
            heap_.pop_back();
            return ev;
        }

        bool step()
        {
            if (heap_.empty())
                return false;
            SimEvent ev = pop();
            now_ = ev.fire_at;
            ++processed_;
            if (ev.action)
                ev.action();
            return true;
        }

        // Runs every event with fire_at <= end, then leaves the clock at end.
        void run_until(TimePoint end)
        {
            while (!heap_.empty() && heap_.front().fire_at <= end)
            {
                step();
            }
            if (now_ < end)
                now_ = end;
        }

    private:
        static bool later(const SimEvent& a, const SimEvent& b) noexcept
        {
            if (a.fire_at != b.fire_at)
                return a.fire_at > b.fire_at;
            return a.seq > b.seq;
        }

        TimePoint now_{};
        std::uint64_t next_seq_ = 0;
        std::uint64_t processed_ = 0;
        std::vector<SimEvent> heap_;
    };

    class EventLog
    {
    public:
        explicit EventLog(bool enabled = true) : enabled_(enabled) {}

        void record(TimePoint t, std::optional<PeerId> node, std::string_view kind, std::string_view detail)
        {
            if (!enabled_)
                return;
            auto us = t.time_since_epoch().count();
            char stamp[48];
            std::snprintf(stamp, sizeof(stamp), "%lld.%03lld", static_cast<long long>(us / 1000),
                          static_cast<long long>(us % 1000));
            std::string line(stamp);
            line += '\t';
            line += node ? std::to_string(node->value) : std::string("-");
            line += '\t';
            line += kind;
            line += '\t';
            line += detail;
            lines_.push_back(std::move(line));
        }

        [[nodiscard]] const std::vector<std::string>& lines() const noexcept { return lines_; }

        [[nodiscard]] std::string str() const
        {
            std::string out;
            for (const auto& l : lines_)
            {
                out += l;
                out += '\n';
            }
            return out;
        }

    private:
        bool enabled_;
        std::vector<std::string> lines_;
    };

    struct LinkModel
    {
        Duration one_way_latency = Duration::zero();
        // Bytes per millisecond; unset means infinite.
        std::optional<double> bandwidth_bytes_per_ms;
        // Datagram-only impairments; connections are reliable.
        double drop_probability = 0.0;
        double duplicate_probability = 0.0;
        Duration jitter = Duration::zero();
        bool up = true;

        void validate() const
        {
            if (one_way_latency < Duration::zero())
                throw Error(ErrorCode::InvalidConfig, "link latency must be non-negative");
            if (jitter < Duration::zero())
                throw Error(ErrorCode::InvalidConfig, "link jitter must be non-negative");
            if (drop_probability < 0.0 || drop_probability > 1.0)
                throw Error(ErrorCode::InvalidConfig, "drop_probability must be within [0, 1]");
            if (duplicate_probability < 0.0 || duplicate_probability > 1.0)
                throw Error(ErrorCode::InvalidConfig, "duplicate_probability must be within [0, 1]");
            if (bandwidth_bytes_per_ms && *bandwidth_bytes_per_ms <= 0.0)
                throw Error(ErrorCode::InvalidConfig, "bandwidth must be positive");
        }

        // Time the wire is busy with a frame of this size.
        [[nodiscard]] Duration serialization(std::size_t bytes) const noexcept
        {
            if (!bandwidth_bytes_per_ms)
                return Duration::zero();
            auto us = std::ceil(static_cast<double>(bytes) * 1000.0 / *bandwidth_bytes_per_ms);
            return Duration(static_cast<Duration::rep>(us));
        }
    };

    struct LinkFault
    {
        PeerId a;
        PeerId b;
        TimePoint at;
        Duration duration;
    };

    // All links of one node go down (its "connection fails").
    struct NodeNetworkFault
    {
        PeerId node;
        TimePoint at;
        Duration duration;
    };

    struct CrashFault
    {
        PeerId node;
        TimePoint at;
        std::optional<TimePoint> restart_at;
    };

    using FaultSpec = std::variant<LinkFault, NodeNetworkFault, CrashFault>;

    class Endpoint
    {
    public:
        virtual ~Endpoint() = default;
        virtual void on_frame(PeerId from, ConnectionId conn, std::span<const std::byte> frame) = 0;
        virtual void on_datagram(PeerId /*from*/, std::span<const std::byte> /*datagram*/) {}
        virtual void on_connected(PeerId /*peer*/, ConnectionId /*conn*/) {}
        virtual void on_disconnected(PeerId /*peer*/) {}
    };

    // Byte accounting hooks for connection frames.
    class FrameObserver
    {
    public:
        virtual ~FrameObserver() = default;
        virtual void on_frame_sent(PeerId src, PeerId dst, std::span<const std::byte> frame) = 0;
        virtual void on_frame_lost(PeerId src, PeerId dst, std::span<const std::byte> frame) = 0;
        virtual void on_frame_delivered(PeerId src, PeerId dst, std::span<const std::byte> frame) = 0;
    };

    struct NetConfig
    {
        Duration reconnect_delay = std::chrono::milliseconds(500);
    };

    class Network
    {
    public:
        Network(EventQueue& queue, std::size_t n, LinkModel uniform, std::uint64_t seed, NetConfig config = {})
            : queue_(queue), n_(n), config_(config), rng_(seed), nodes_(n), endpoints_(n, nullptr),
              links_(n * n, uniform), pairs_(n * n)
        {
            uniform.validate();
            if (config_.reconnect_delay < Duration::zero())
                throw Error(ErrorCode::InvalidConfig, "reconnect_delay must be non-negative");
        }

        Network(const Network&) = delete;
        Network& operator=(const Network&) = delete;

        [[nodiscard]] std::size_t size() const noexcept { return n_; }
        [[nodiscard]] TimePoint now() const noexcept { return queue_.now(); }
        [[nodiscard]] EventQueue& queue() noexcept { return queue_; }

        void set_log(EventLog* log) noexcept { log_ = log; }
        void set_observer(FrameObserver* obs) noexcept { observer_ = obs; }

        void attach(PeerId node, Endpoint* endpoint)
        {
            check(node);
            endpoints_[node.value] = endpoint;
        }

        void set_link(PeerId a, PeerId b, const LinkModel& model)
        {
            check(a);
            check(b);
            model.validate();
            links_[index(a, b)] = model;
            links_[index(b, a)] = model;
            refresh(a, b);
        }

        [[nodiscard]] const LinkModel& link(PeerId a, PeerId b) const { return links_[index(a, b)]; }

        std::function<void(PeerId)> on_crash;
        std::function<void(PeerId)> on_restart;

        // Establishes every usable connection immediately.
        void start()
        {
            for (std::uint32_t a = 0; a < n_; ++a)
            {
                for (std::uint32_t b = a + 1; b < n_; ++b)
                {
                    if (usable(PeerId{a}, PeerId{b}))
                        establish(PeerId{a}, PeerId{b});
                }
            }
        }

        [[nodiscard]] bool alive(PeerId p) const { return nodes_.at(p.value).alive; }
        [[nodiscard]] std::uint64_t incarnation(PeerId p) const { return nodes_.at(p.value).incarnation; }

        [[nodiscard]] bool connected(PeerId a, PeerId b) const
        {
            if (a == b || a.value >= n_ || b.value >= n_)
                return false;
            return pair(a, b).established;
        }

        [[nodiscard]] ConnectionId connection_id(PeerId a, PeerId b) const
        {
            if (a == b || a.value >= n_ || b.value >= n_)
                return ConnectionId{};
            return pair(a, b).id;
        }

        void send_frame(PeerId src, PeerId dst, Bytes frame, std::function<void(bool)> on_done)
        {
            check(src);
            check(dst);
            if (!alive(src) || src == dst)
                return;
            auto guarded = guard(src, std::move(on_done));
            auto& p = pair(src, dst);
            if (!p.established)
            {
                queue_.schedule_after(Duration::zero(), EventKind::SendComplete, [guarded] {
                    if (guarded)
                        guarded(false);
                });
                return;
            }
            const auto& model = link(src, dst);
            auto dir = src < dst ? 0 : 1;
            auto start = std::max(now(), p.busy_until[dir]);
            p.busy_until[dir] = start + model.serialization(frame.size());
            auto arrive = p.busy_until[dir] + model.one_way_latency;
            auto token = next_token_++;
            if (observer_)
                observer_->on_frame_sent(src, dst, frame);
            p.in_flight.emplace(token, InFlight{src, dst, std::move(frame), std::move(guarded)});
            auto key = pair_key(src, dst);
            queue_.schedule(arrive, EventKind::Deliver, [this, key, token] { deliver_frame(key, token); });
        }

        void send_datagram(PeerId src, PeerId dst, Bytes datagram)
        {
            check(src);
            check(dst);
            if (!alive(src) || src == dst)
                return;
            if (!usable(src, dst))
            {
                ++datagrams_dropped_;
                return;
            }
            const auto& model = link(src, dst);
            auto copies = 1 + (chance(model.duplicate_probability) ? 1 : 0);
            for (int c = 0; c < copies; ++c)
            {
                if (chance(model.drop_probability))
                {
                    ++datagrams_dropped_;
                    continue;
                }
                auto delay = model.one_way_latency + model.serialization(datagram.size());
                if (model.jitter > Duration::zero())
                {
                    std::uniform_int_distribution<Duration::rep> j(0, model.jitter.count());
                    delay += Duration(j(rng_));
                }
                queue_.schedule_after(delay, EventKind::Deliver, [this, src, dst, datagram] {
                    if (!alive(dst) || !endpoints_[dst.value])
                    {
                        ++datagrams_dropped_;
                        return;
                    }
                    ++datagrams_delivered_;
                    endpoints_[dst.value]->on_datagram(src, datagram);
                });
            }
        }

        [[nodiscard]] std::uint64_t datagrams_delivered() const noexcept { return datagrams_delivered_; }
        [[nodiscard]] std::uint64_t datagrams_dropped() const noexcept { return datagrams_dropped_; }

        // Timer owned by a node: silently discarded if the node crashed in between.
        void schedule_timer(PeerId owner, Duration delay, std::function<void()> fn)
        {
            check(owner);
            auto inc = incarnation(owner);
            queue_.schedule_after(delay, EventKind::Timer, [this, owner, inc, fn = std::move(fn)] {
                if (alive(owner) && incarnation(owner) == inc)
                    fn();
            });
        }

        void inject_fault(const FaultSpec& spec)
        {
            std::visit([this](const auto& f) { inject(f); }, spec);
        }

        void set_link_up(PeerId a, PeerId b, bool up)
        {
            check(a);
            check(b);
            auto& down = pair(a, b).link_down;
            down += up ? -1 : 1;
            if (down < 0)
                down = 0;
            refresh(a, b);
        }

        void set_node_network(PeerId node, bool up)
        {
            check(node);
            auto& st = nodes_[node.value];
            st.network_down += up ? -1 : 1;
            if (st.network_down < 0)
                st.network_down = 0;
            log(node, up ? "network-up" : "network-down", "");
            refresh_all(node);
        }

        void crash(PeerId node)
        {
            check(node);
            auto& st = nodes_[node.value];
            if (!st.alive)
                return;
            st.alive = false;
            ++st.incarnation;
            log(node, "crash", "");
            refresh_all(node);
            if (on_crash)
                on_crash(node);
        }

        void restart(PeerId node)
        {
            check(node);
            auto& st = nodes_[node.value];
            if (st.alive)
                return;
            st.alive = true;
            ++st.incarnation;
            log(node, "restart", "");
            if (on_restart)
                on_restart(node);
            refresh_all(node);
        }

    private:
        struct NodeState
        {
            bool alive = true;
            int network_down = 0;
            std::uint64_t incarnation = 0;
        };

        struct InFlight
        {
            PeerId src;
            PeerId dst;
            Bytes frame;
            std::function<void(bool)> on_done;
        };

        struct Pair
        {
            bool established = false;
            bool connect_pending = false;
            int link_down = 0;
            ConnectionId id{};
            TimePoint busy_until[2]{};
            std::map<std::uint64_t, InFlight> in_flight;
        };

        void check(PeerId p) const
        {
            if (p.value >= n_)
                throw Error(ErrorCode::UnknownTarget, "no node " + std::to_string(p.value));
        }

        [[nodiscard]] std::size_t index(PeerId a, PeerId b) const noexcept { return a.value * n_ + b.value; }

        [[nodiscard]] std::size_t pair_key(PeerId a, PeerId b) const noexcept
        {
            return a < b ? index(a, b) : index(b, a);
        }

        Pair& pair(PeerId a, PeerId b) { return pairs_[pair_key(a, b)]; }
        [[nodiscard]] const Pair& pair(PeerId a, PeerId b) const { return pairs_[pair_key(a, b)]; }

        [[nodiscard]] bool usable(PeerId a, PeerId b) const
        {
            const auto& na = nodes_[a.value];
            const auto& nb = nodes_[b.value];
            return na.alive && nb.alive && na.network_down == 0 && nb.network_down == 0 && link(a, b).up &&
                   pair(a, b).link_down == 0;
        }

        bool chance(double p)
        {
            if (p <= 0.0)
                return false;
            if (p >= 1.0)
                return true;
            return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p;
        }

        std::function<void(bool)> guard(PeerId owner, std::function<void(bool)> fn)
        {
            if (!fn)
                return {};
            auto inc = incarnation(owner);
            return [this, owner, inc, fn = std::move(fn)](bool ok) {
                if (alive(owner) && incarnation(owner) == inc)
                    fn(ok);
            };
        }

        void log(std::optional<PeerId> node, std::string_view kind, const std::string& detail)
        {
            if (log_)
                log_->record(now(), node, kind, detail);
        }

        void deliver_frame(std::size_t key, std::uint64_t token)
        {
            auto& p = pairs_[key];
            auto it = p.in_flight.find(token);
            if (it == p.in_flight.end())
                return;
            InFlight f = std::move(it->second);
            p.in_flight.erase(it);
            if (observer_)
                observer_->on_frame_delivered(f.src, f.dst, f.frame);
            if (auto* ep = endpoints_[f.dst.value])
                ep->on_frame(f.src, p.id, f.frame);
            if (f.on_done)
                f.on_done(true);
        }

        void establish(PeerId a, PeerId b)
        {
            auto& p = pair(a, b);
            p.established = true;
            p.id = ConnectionId{p.id.value + 1};
            p.busy_until[0] = p.busy_until[1] = now();
            log(a, "connected", "peer=" + std::to_string(b.value) + " conn=" + std::to_string(p.id.value));
            if (auto* ep = endpoints_[a.value])
                ep->on_connected(b, p.id);
            if (auto* ep = endpoints_[b.value])
                ep->on_connected(a, p.id);
        }

        void refresh_all(PeerId node)
        {
            for (std::uint32_t other = 0; other < n_; ++other)
            {
                if (other != node.value)
                    refresh(node, PeerId{other});
            }
        }

        void refresh(PeerId a, PeerId b)
        {
            if (a == b)
                return;
            auto& p = pair(a, b);
            bool ok = usable(a, b);
            if (p.established && !ok)
            {
                p.established = false;
                log(a, "disconnected", "peer=" + std::to_string(b.value) + " conn=" + std::to_string(p.id.value));
                auto lost = std::move(p.in_flight);
                p.in_flight.clear();
                for (auto& [token, f] : lost)
                {
                    if (observer_)
                        observer_->on_frame_lost(f.src, f.dst, f.frame);
                    if (f.on_done)
                    {
                        queue_.schedule_after(Duration::zero(), EventKind::SendComplete,
                                              [done = std::move(f.on_done)] { done(false); });
                    }
                }
                for (auto [x, y] : {std::pair{a, b}, std::pair{b, a}})
                {
                    if (alive(x) && endpoints_[x.value])
                        endpoints_[x.value]->on_disconnected(y);
                }
            }
            else if (!p.established && ok && !p.connect_pending)
            {
                p.connect_pending = true;
                auto key = pair_key(a, b);
                queue_.schedule_after(config_.reconnect_delay, EventKind::Connect, [this, key, a, b] {
                    auto& q = pairs_[key];
                    q.connect_pending = false;
                    if (!q.established && usable(a, b))
                        establish(a, b);
                });
            }
        }

        void inject(const LinkFault& f)
        {
            check(f.a);
            check(f.b);
            if (f.a == f.b)
                throw Error(ErrorCode::UnknownTarget, "link fault needs two distinct nodes");
            queue_.schedule(f.at, EventKind::FaultStart, [this, f] {
                log(f.a, "link-down", "peer=" + std::to_string(f.b.value));
                set_link_up(f.a, f.b, false);
            });
            queue_.schedule(f.at + f.duration, EventKind::FaultEnd, [this, f] {
                log(f.a, "link-up", "peer=" + std::to_string(f.b.value));
                set_link_up(f.a, f.b, true);
            });
        }

        void inject(const NodeNetworkFault& f)
        {
            check(f.node);
            queue_.schedule(f.at, EventKind::FaultStart, [this, f] { set_node_network(f.node, false); });
            queue_.schedule(f.at + f.duration, EventKind::FaultEnd, [this, f] { set_node_network(f.node, true); });
        }

        void inject(const CrashFault& f)
        {
            check(f.node);
            if (f.restart_at && *f.restart_at < f.at)
                throw Error(ErrorCode::InvalidConfig, "restart precedes crash");
            queue_.schedule(f.at, EventKind::Crash, [this, f] { crash(f.node); });
            if (f.restart_at)
                queue_.schedule(*f.restart_at, EventKind::Restart, [this, f] { restart(f.node); });
        }

        EventQueue& queue_;
        std::size_t n_;
        NetConfig config_;
        std::mt19937_64 rng_;
        std::vector<NodeState> nodes_;
        std::vector<Endpoint*> endpoints_;
        std::vector<LinkModel> links_;
        std::vector<Pair> pairs_;
        EventLog* log_ = nullptr;
        FrameObserver* observer_ = nullptr;
        std::uint64_t next_token_ = 1;
        std::uint64_t datagrams_delivered_ = 0;
        std::uint64_t datagrams_dropped_ = 0;
    };

    // Transport view of the network from one node.
    class NodeTransport final : public Transport
    {
    public:
        NodeTransport(Network& net, PeerId self) : net_(net), self_(self) {}

        [[nodiscard]] TimePoint now() const override { return net_.now(); }

        void send_frame(PeerId to, Bytes frame, std::function<void(bool)> on_done) override
        {
            net_.send_frame(self_, to, std::move(frame), std::move(on_done));
        }

        [[nodiscard]] ConnectionId connection_id(PeerId peer) const override
        {
            return net_.connection_id(self_, peer);
        }

        [[nodiscard]] bool connected(PeerId peer) const override { return net_.connected(self_, peer); }

        void schedule(Duration delay, std::function<void()> fn) override
        {
            net_.schedule_timer(self_, delay, std::move(fn));
        }

    private:
        Network& net_;
        PeerId self_;
    };
} // namespace abcast::sim
