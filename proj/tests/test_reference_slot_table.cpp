#include "support.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

using namespace abcast;
using namespace abcast::reference;
using namespace abcast::testing;

namespace
{
    struct Trace
    {
        Message a = text_message("A"), b = text_message("B"), c = text_message("C"), d0 = text_message("D0"),
                d = text_message("D"), e = text_message("E"), f = text_message("F");
    };

    ErrorCode code_of(const std::function<void()>& fn)
    {
        try
        {
            fn();
        }
        catch (const Error& e)
        {
            return e.code();
        }
        ADD_FAILURE() << "no error raised";
        return ErrorCode::Parse;
    }
} // namespace

TEST(SendSideTable, FreshBroadcastTakesSlotOneVersionOne)
{
    SendSideTable t(5);
    EXPECT_EQ(t.broadcast(text_message("A")), (Placement{SlotIndex{1}, Version{1}}));
}

// A(s1,v1) B(s2,v2) C(s3,v3) D0(s4,v4) abort D0 (v5) D(s4,v6) E(s5,v7) abort D (v8) F(s4,v9).
TEST(SendSideTable, WorkedTraceEndsWithFInSlotFourVersionNine)
{
    Trace m;
    SendSideTable t(5);
    EXPECT_EQ(t.broadcast(m.a), (Placement{SlotIndex{1}, Version{1}}));
    EXPECT_EQ(t.broadcast(m.b), (Placement{SlotIndex{2}, Version{2}}));
    EXPECT_EQ(t.broadcast(m.c), (Placement{SlotIndex{3}, Version{3}}));
    EXPECT_EQ(t.broadcast(m.d0), (Placement{SlotIndex{4}, Version{4}}));
    EXPECT_EQ(t.abort(m.d0.id()), (Placement{SlotIndex{4}, Version{5}}));
    EXPECT_EQ(t.broadcast(m.d), (Placement{SlotIndex{4}, Version{6}}));
    EXPECT_EQ(t.broadcast(m.e), (Placement{SlotIndex{5}, Version{7}}));
    EXPECT_EQ(t.abort(m.d.id()), (Placement{SlotIndex{4}, Version{8}}));
    EXPECT_TRUE(t.slot(SlotIndex{4}).is_free());
    EXPECT_EQ(t.slot(SlotIndex{4}).version, Version{8});
    EXPECT_EQ(t.broadcast(m.f), (Placement{SlotIndex{4}, Version{9}}));
    EXPECT_TRUE(t.invariants_hold());
}

TEST(SendSideTable, CapacityDuplicateAndUnknownErrors)
{
    SendSideTable t(2);
    t.broadcast(text_message("1"));
    EXPECT_EQ(code_of([&] { t.broadcast(text_message("1")); }), ErrorCode::Duplicate);
    t.broadcast(text_message("2"));
    EXPECT_EQ(code_of([&] { t.broadcast(text_message("3")); }), ErrorCode::Capacity);
    EXPECT_EQ(t.version(), Version{2});
    EXPECT_EQ(code_of([&] { t.abort(text_message("zz").id()); }), ErrorCode::UnknownMessage);
    EXPECT_EQ(code_of([] { SendSideTable bad(0); }), ErrorCode::InvalidConfig);
}

TEST(SendSideTable, AbortFreesSlotUnderNewVersion)
{
    SendSideTable t(3);
    auto a = text_message("A");
    t.broadcast(a);
    EXPECT_EQ(t.abort(a.id()), (Placement{SlotIndex{1}, Version{2}}));
    EXPECT_TRUE(t.slot(SlotIndex{1}).is_free());
    EXPECT_EQ(t.version(), Version{2});
    EXPECT_EQ(t.occupied(), 0u);
}

TEST(ReceiveSideTable, DeliversOnlyNewerVersions)
{
    ReceiveSideTable r(5);
    auto a = text_message("A"), d = text_message("D"), f = text_message("F");
    PeerId s{1};
    EXPECT_EQ(r.on_receive(s, SlotIndex{1}, Version{1}, a), ReceiveOutcome::Delivered);
    EXPECT_EQ(r.on_receive(s, SlotIndex{4}, Version{6}, d), ReceiveOutcome::Delivered);
    EXPECT_EQ(r.on_receive(s, SlotIndex{4}, Version{9}, f), ReceiveOutcome::Delivered);
    EXPECT_EQ(r.slot(s, SlotIndex{4})->version, Version{9});
    EXPECT_EQ(*r.slot(s, SlotIndex{4})->msg, f);
    EXPECT_EQ(r.on_receive(s, SlotIndex{4}, Version{6}, d), ReceiveOutcome::Stale);
    EXPECT_EQ(r.on_receive(s, SlotIndex{4}, Version{9}, f), ReceiveOutcome::Stale);
    EXPECT_EQ(*r.slot(s, SlotIndex{4})->msg, f);
}

TEST(ReceiveSideTable, OutOfRangeSlotsAreViolations)
{
    ReceiveSideTable r(4);
    auto m = text_message("m");
    EXPECT_EQ(r.on_receive(PeerId{0}, SlotIndex{0}, Version{1}, m), ReceiveOutcome::Violation);
    EXPECT_EQ(r.on_receive(PeerId{0}, SlotIndex{5}, Version{1}, m), ReceiveOutcome::Violation);
    EXPECT_EQ(r.violations(), 2u);
    EXPECT_EQ(r.entries(PeerId{0}), 0u);
}

TEST(ReferenceNode, RetransmitSendsLatestVersionOfOccupiedSlots)
{
    Trace m;
    ReferenceNode node(PeerId{0}, members(3), 5);
    EXPECT_TRUE(node.retransmit().empty());
    node.broadcast(m.a);
    node.broadcast(m.b);
    node.broadcast(m.c);
    node.broadcast(m.d0);
    node.abort(m.d0.id());
    node.broadcast(m.d);
    node.broadcast(m.e);
    node.abort(m.d.id());
    auto f_out = node.broadcast(m.f);
    ASSERT_EQ(f_out.size(), 2u);
    EXPECT_EQ(f_out[0].update.slot, SlotIndex{4});
    EXPECT_EQ(f_out[0].update.version, Version{9});
    node.abort(m.b.id());
    node.abort(m.e.id());

    auto out = node.retransmit();
    std::map<PeerId, int> per_peer;
    bool saw_f = false;
    for (const auto& o : out)
    {
        ++per_peer[o.to];
        EXPECT_NE(o.update.id(), m.d.id());
        EXPECT_NE(o.update.id(), m.b.id());
        EXPECT_NE(o.update.id(), m.e.id());
        if (o.update.id() == m.f.id())
        {
            saw_f = true;
            EXPECT_EQ(o.update.slot, SlotIndex{4});
            EXPECT_EQ(o.update.version, Version{9});
        }
    }
    EXPECT_TRUE(saw_f);
    EXPECT_EQ(per_peer.size(), 2u);
    for (const auto& [peer, count] : per_peer)
        EXPECT_EQ(count, 3) << "peer " << peer.value;
}

TEST(ReferenceNode, FullTableRetransmitsCTimesPeers)
{
    ReferenceNode node(PeerId{2}, members(4), 3);
    for (int i = 0; i < 3; ++i)
        node.broadcast(text_message("m" + std::to_string(i)));
    EXPECT_EQ(node.retransmit().size(), 3u * 3u);
}

// Independent model: free slots in a std::set, a plain counter, a map id -> slot.
TEST(SendSideTable, RandomOperationsMatchASetBasedModel)
{
    std::mt19937_64 rng(2024);
    for (int run = 0; run < 300; ++run)
    {
        std::size_t cap = 1 + rng() % 6;
        SendSideTable t(cap);
        std::set<std::uint32_t> free;
        for (std::uint32_t k = 1; k <= cap; ++k)
            free.insert(k);
        std::map<MessageId, std::uint32_t> where;
        std::uint64_t v = 0;
        std::vector<Message> live;
        for (int op = 0; op < 60; ++op)
        {
            if (live.empty() || rng() % 3 != 0)
            {
                auto m = text_message("r" + std::to_string(run) + "-" + std::to_string(op));
                if (free.empty())
                {
                    EXPECT_EQ(code_of([&] { t.broadcast(m); }), ErrorCode::Capacity);
                    continue;
                }
                auto k = *free.begin();
                free.erase(free.begin());
                ++v;
                where[m.id()] = k;
                live.push_back(m);
                EXPECT_EQ(t.broadcast(m), (Placement{SlotIndex{k}, Version{v}}));
            }
            else
            {
                auto idx = rng() % live.size();
                auto m = live[idx];
                live.erase(live.begin() + static_cast<std::ptrdiff_t>(idx));
                auto k = where.at(m.id());
                where.erase(m.id());
                free.insert(k);
                ++v;
                EXPECT_EQ(t.abort(m.id()), (Placement{SlotIndex{k}, Version{v}}));
            }
            ASSERT_TRUE(t.invariants_hold());
            ASSERT_EQ(t.occupied(), live.size());
            ASSERT_LE(t.occupied(), cap);
        }
    }
}

// Reference nodes exchanging datagrams over the simulator with 30% loss: after
// retransmit rounds every never-aborted message is delivered everywhere, and no
// aborted message is delivered anew once a loss-free round has passed.
namespace
{
    struct DatagramHost final : sim::Endpoint
    {
        ReferenceNode node;
        std::set<MessageId> delivered;
        std::vector<std::pair<TimePoint, MessageId>> deliveries;
        sim::Network* net = nullptr;

        DatagramHost(PeerId self, std::uint32_t n, std::size_t cap) : node(self, members(n), cap) {}

        void send(const std::vector<Outbound>& out)
        {
            for (const auto& o : out)
                net->send_datagram(node.id(), o.to, wire::encode_update(o.update));
        }

        void on_frame(PeerId, ConnectionId, std::span<const std::byte>) override {}

        void on_datagram(PeerId from, std::span<const std::byte> bytes) override
        {
            auto f = wire::decode(bytes);
            ASSERT_TRUE(f);
            auto& u = std::get<wire::WireUpdate>(*f);
            ASSERT_TRUE(u.payload);
            Message m(*u.payload);
            ASSERT_EQ(m.id(), u.id);
            if (node.on_receive(from, u.slot, u.version, m))
            {
                delivered.insert(m.id());
                deliveries.emplace_back(net->now(), m.id());
            }
        }
    };
} // namespace

TEST(ReferenceNode, LossyDatagramsConvergeAfterRetransmitRounds)
{
    constexpr std::uint32_t n = 4;
    sim::EventQueue q;
    sim::LinkModel lossy{ms(20), std::nullopt, 0.3, 0.1, ms(15), true};
    sim::Network net(q, n, lossy, 5);
    std::vector<std::unique_ptr<DatagramHost>> hosts;
    for (std::uint32_t i = 0; i < n; ++i)
    {
        hosts.push_back(std::make_unique<DatagramHost>(PeerId{i}, n, 4));
        hosts.back()->net = &net;
        net.attach(PeerId{i}, hosts.back().get());
    }
    std::mt19937_64 rng(8);
    std::map<MessageId, PeerId> never_aborted;
    std::set<MessageId> aborted;
    std::vector<std::vector<Message>> live(n);
    for (int step = 0; step < 200; ++step)
    {
        auto who = static_cast<std::uint32_t>(rng() % n);
        auto& h = *hosts[who];
        if (h.node.send_table().occupied() < 4 && (live[who].empty() || rng() % 3))
        {
            auto m = text_message("dg-" + std::to_string(step));
            h.send(h.node.broadcast(m));
            live[who].push_back(m);
            never_aborted.emplace(m.id(), PeerId{who});
        }
        else if (!live[who].empty())
        {
            auto m = live[who].front();
            live[who].erase(live[who].begin());
            h.node.abort(m.id());
            never_aborted.erase(m.id());
            aborted.insert(m.id());
        }
        if (step % 10 == 0)
        {
            for (auto& x : hosts)
                x->send(x->node.retransmit());
        }
        q.run_until(q.now() + ms(7));
    }
    for (int round = 0; round < 25; ++round)
    {
        for (auto& x : hosts)
            x->send(x->node.retransmit());
        q.run_until(q.now() + ms(100));
    }
    sim::LinkModel twenty;
    twenty.one_way_latency = ms(20);
    for (std::uint32_t i = 0; i < n; ++i)
    {
        net.set_link(PeerId{i}, PeerId{(i + 1) % n}, twenty);
        net.set_link(PeerId{i}, PeerId{(i + 2) % n}, twenty);
    }
    q.run_until(q.now() + ms(100));
    for (auto& x : hosts)
        x->send(x->node.retransmit());
    auto clean_round_end = q.now();
    q.run_until(q.now() + ms(100));
    for (auto& x : hosts)
        x->send(x->node.retransmit());
    q.run_until(q.now() + ms(100));

    for (const auto& [id, origin] : never_aborted)
    {
        for (std::uint32_t i = 0; i < n; ++i)
        {
            if (PeerId{i} != origin)
            {
                EXPECT_TRUE(hosts[i]->delivered.contains(id)) << "node " << i << " lacks " << id.short_hex();
            }
        }
    }
    for (auto& x : hosts)
    {
        for (const auto& [t, id] : x->deliveries)
        {
            if (t > clean_round_end)
            {
                EXPECT_FALSE(aborted.contains(id)) << "aborted message resurrected";
            }
        }
        for (std::uint32_t s = 0; s < n; ++s)
            EXPECT_LE(x->node.receive_table().entries(PeerId{s}), 4u);
    }
    EXPECT_GT(net.datagrams_dropped(), 0u);
}
