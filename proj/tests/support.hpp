#pragma once

// Shared fixtures: a hand-cranked transport and a scripted client.

#include "abcast/abcast.hpp"

#include <deque>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace abcast::testing
{
    struct SentFrame
    {
        PeerId to;
        Bytes bytes;
        std::function<void(bool)> on_done;
        TimePoint at;
    };

    // Frames are recorded, never delivered; completions are fed back by the test.
    class FakeTransport final : public Transport
    {
    public:
        [[nodiscard]] TimePoint now() const override { return queue.now(); }

        void send_frame(PeerId to, Bytes frame, std::function<void(bool)> on_done) override
        {
            if (on_send)
                on_send(to, frame);
            sent.push_back(SentFrame{to, std::move(frame), std::move(on_done), queue.now()});
        }

        [[nodiscard]] ConnectionId connection_id(PeerId peer) const override
        {
            auto it = conn.find(peer);
            return it == conn.end() ? ConnectionId{1} : it->second;
        }

        [[nodiscard]] bool connected(PeerId peer) const override { return !down.contains(peer); }

        void schedule(Duration delay, std::function<void()> fn) override
        {
            queue.schedule_after(delay, sim::EventKind::Timer, std::move(fn));
        }

        // Reports the outcome of sent[i] from the event loop, as a real transport would.
        void complete(std::size_t i, bool ok)
        {
            auto fn = std::move(sent.at(i).on_done);
            sent.at(i).on_done = {};
            if (fn)
                queue.schedule_after(Duration::zero(), sim::EventKind::SendComplete, [fn, ok] { fn(ok); });
        }

        void complete_all(bool ok)
        {
            for (std::size_t i = 0; i < sent.size(); ++i)
            {
                if (sent[i].on_done)
                    complete(i, ok);
            }
        }

        // Runs everything due now, including zero-delay work scheduled meanwhile.
        void settle() { queue.run_until(queue.now()); }
        void run_for(Duration d) { queue.run_until(queue.now() + d); }

        [[nodiscard]] std::vector<wire::Frame> frames_to(PeerId peer, std::size_t from = 0) const
        {
            std::vector<wire::Frame> out;
            for (std::size_t i = from; i < sent.size(); ++i)
            {
                if (sent[i].to == peer)
                    out.push_back(*wire::decode(sent[i].bytes));
            }
            return out;
        }

        sim::EventQueue queue;
        std::vector<SentFrame> sent;
        std::map<PeerId, ConnectionId> conn;
        std::set<PeerId> down;
        std::function<void(PeerId, const Bytes&)> on_send;
    };

    inline Message text_message(const std::string& s) { return Message(to_bytes(s)); }

    inline Message sized_message(std::size_t size, std::uint8_t fill, std::string tag = {})
    {
        Bytes b(size, std::byte{fill});
        for (std::size_t i = 0; i < tag.size() && i < size; ++i)
            b[i] = static_cast<std::byte>(tag[i]);
        return Message(std::move(b));
    }

    inline std::vector<PeerId> members(std::uint32_t n)
    {
        std::vector<PeerId> out;
        for (std::uint32_t i = 0; i < n; ++i)
            out.push_back(PeerId{i});
        return out;
    }

    inline SlotUpdate advert(PeerId from, std::uint32_t slot, std::uint64_t version, const Message& m)
    {
        return SlotUpdate{from, SlotIndex{slot}, Version{version}, AdvertOnly{Advert{m.id(), m.size()}}};
    }

    inline SlotUpdate push(PeerId from, std::uint32_t slot, std::uint64_t version, const Message& m)
    {
        return SlotUpdate{from, SlotIndex{slot}, Version{version}, FullMessage{m}};
    }

    // Returns queued batches one per drive call and records everything it sees.
    class ScriptedClient final : public Client
    {
    public:
        std::vector<ChangeAction> drive(const ValidatedPool& /*validated*/, UnvalidatedPool& unvalidated,
                                        const DriveTrigger& trigger) override
        {
            ++drives;
            if (trigger.kind == DriveTrigger::Kind::Tick)
                ++tick_drives;
            else
                deltas.push_back(trigger.delta);
            for (const auto& id : trigger.delta.inserted)
            {
                if (unvalidated.contains(id))
                    received.push_back(id);
            }
            drive_times.push_back(trigger.now);
            if (script.empty())
                return {};
            auto batch = std::move(script.front());
            script.pop_front();
            return batch;
        }

        [[nodiscard]] Verdict wants(const Advert& a, TimePoint /*now*/) const override
        {
            if (rejected.contains(a.id))
                return Verdict::Reject;
            return accept_all_else ? Verdict::Accept : Verdict::Reject;
        }

        void on_rejected(const ChangeAction& /*action*/, ErrorCode code) override
        {
            errors.push_back(code);
            error_times.push_back(now ? now() : TimePoint{});
        }

        std::deque<std::vector<ChangeAction>> script;
        std::set<MessageId> rejected;
        bool accept_all_else = true;
        std::function<TimePoint()> now;

        std::uint64_t drives = 0;
        std::uint64_t tick_drives = 0;
        std::vector<PoolDelta> deltas;
        std::vector<MessageId> received;
        std::vector<TimePoint> drive_times;
        std::vector<ErrorCode> errors;
        std::vector<TimePoint> error_times;
    };

    // An engine per node on a shared simulated network; the scripted clients drive them.
    struct Cluster
    {
        struct Node final : sim::Endpoint
        {
            std::unique_ptr<sim::NodeTransport> transport;
            std::unique_ptr<ValidatedPool> validated;
            ScriptedClient client;
            std::unique_ptr<Engine> engine;

            void on_frame(PeerId from, ConnectionId conn, std::span<const std::byte> frame) override
            {
                if (engine)
                    engine->on_frame(from, conn, frame);
            }
        };

        Cluster(std::uint32_t n, EngineConfig cfg, sim::LinkModel link, std::vector<EngineBehavior> behaviors = {},
                std::uint64_t seed = 1)
            : cfg(cfg), net(queue, n, link, seed), nodes(n)
        {
            for (std::uint32_t i = 0; i < n; ++i)
            {
                auto& node = nodes[i];
                node.transport = std::make_unique<sim::NodeTransport>(net, PeerId{i});
                node.validated = std::make_unique<ValidatedPool>(cfg.slot_capacity);
                node.client.now = [this] { return queue.now(); };
                auto behavior = i < behaviors.size() ? behaviors[i] : EngineBehavior{};
                node.engine = std::make_unique<Engine>(cfg, PeerId{i}, members(n), *node.transport, node.client,
                                                       *node.validated, seed + i, nullptr, behavior);
                net.attach(PeerId{i}, &node);
            }
        }

        void start()
        {
            net.start();
            for (auto& n : nodes)
                n.engine->start();
        }

        Engine& engine(std::uint32_t i) { return *nodes.at(i).engine; }
        ScriptedClient& client(std::uint32_t i) { return nodes.at(i).client; }

        void run_until(TimePoint t) { queue.run_until(t); }

        // Applies client actions on node i from inside the event loop at time t.
        void at(TimePoint t, std::uint32_t i, std::vector<ChangeAction> actions)
        {
            queue.schedule(t, sim::EventKind::Timer,
                           [this, i, a = std::move(actions)] { nodes.at(i).engine->updates().apply(a); });
        }

        EngineConfig cfg;
        sim::EventQueue queue;
        sim::Network net;
        std::vector<Node> nodes;
    };
} // namespace abcast::testing
