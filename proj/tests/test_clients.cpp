#include "support.hpp"

#include <gtest/gtest.h>

using namespace abcast;
using namespace abcast::testing;

namespace
{
    struct ClientRig
    {
        explicit ClientRig(MockClientConfig cfg, std::size_t capacity = 16)
            : validated(capacity), unvalidated(64), client(PeerId{2}, std::move(cfg), 77, &registry)
        {
        }

        // Drives one tick and applies the actions the way the update manager would.
        std::vector<ChangeAction> tick(TimePoint now, PoolDelta delta = {})
        {
            auto actions = client.drive(validated, unvalidated, DriveTrigger{DriveTrigger::Kind::Tick, now, std::move(delta)});
            apply(actions);
            return actions;
        }

        std::vector<ChangeAction> deliver(TimePoint now, const Message& m)
        {
            unvalidated.insert(m);
            auto actions = client.drive(validated, unvalidated, DriveTrigger{DriveTrigger::Kind::PoolUpdate, now, {{m.id()}, {}}});
            apply(actions);
            return actions;
        }

        void apply(const std::vector<ChangeAction>& actions)
        {
            for (const auto& a : actions)
            {
                if (const auto* add = std::get_if<AddAction>(&a.kind))
                {
                    if (validated.full())
                        client.on_rejected(a, ErrorCode::Capacity);
                    else
                        validated.insert(add->message, add->push_directly);
                }
                else
                {
                    validated.erase(std::get<RemoveAction>(a.kind).id);
                }
            }
        }

        MessageRegistry registry;
        ValidatedPool validated;
        UnvalidatedPool unvalidated;
        MockClient client;
    };

    std::size_t count_adds(const std::vector<ChangeAction>& actions)
    {
        return static_cast<std::size_t>(std::count_if(actions.begin(), actions.end(), [](const ChangeAction& a) {
            return std::holds_alternative<AddAction>(a.kind);
        }));
    }
} // namespace

TEST(MockClient, RateOneGivesTenAddsInTenSeconds)
{
    MockClientConfig cfg;
    cfg.rate_per_s = 1.0;
    ClientRig r(cfg);
    std::size_t adds = 0;
    std::vector<TimePoint> when;
    for (std::int64_t t = 200; t <= 10000; t += 200)
    {
        auto n = count_adds(r.tick(at_ms(t)));
        adds += n;
        if (n)
            when.push_back(at_ms(t));
    }
    EXPECT_EQ(adds, 10u);
    ASSERT_EQ(when.size(), 10u);
    for (std::size_t k = 0; k < when.size(); ++k)
        EXPECT_EQ(when[k], at_ms(1000 * static_cast<std::int64_t>(k + 1)));
    EXPECT_EQ(r.registry.size(), 10u);
}

TEST(MockClient, AbortAfterKeepsSteadyOwnedCount)
{
    MockClientConfig cfg;
    cfg.rate_per_s = 1.0;
    cfg.abort_after = ms(3000);
    ClientRig r(cfg);
    for (std::int64_t t = 200; t <= 30000; t += 200)
    {
        r.tick(at_ms(t));
        if (t >= 3000)
        {
            ASSERT_EQ(r.client.owned(), 3u) << t;
        }
        ASSERT_EQ(r.validated.size(), r.client.owned());
    }
    EXPECT_EQ(r.client.stats().aborted, 27u);
}

TEST(MockClient, StopAndMaxMessagesLimitAdds)
{
    MockClientConfig cfg;
    cfg.rate_per_s = 2.0;
    cfg.start = at_ms(1000);
    cfg.stop = at_ms(4000);
    EXPECT_EQ(MockClient(PeerId{0}, cfg, 1).due_count(at_ms(60000)), 6u);
    EXPECT_EQ(MockClient(PeerId{0}, cfg, 1).due_count(at_ms(999)), 0u);
    EXPECT_EQ(MockClient(PeerId{0}, cfg, 1).due_count(at_ms(1500)), 1u);
    cfg.max_messages = 2;
    EXPECT_EQ(MockClient(PeerId{0}, cfg, 1).due_count(at_ms(60000)), 2u);
}

TEST(MockClient, PayloadsArePureFunctionsOfOrigin)
{
    MockClientConfig cfg;
    cfg.message_sizes = {100, 5000};
    MockClient a(PeerId{3}, cfg, 9), b(PeerId{3}, cfg, 9), c(PeerId{4}, cfg, 9), d(PeerId{3}, cfg, 10);
    EXPECT_EQ(a.message(5), b.message(5));
    EXPECT_NE(a.message(5), c.message(5));
    EXPECT_NE(a.message(5), d.message(5));
    EXPECT_NE(a.message(5), a.message(6));
    EXPECT_EQ(a.message(4).size(), 100u);
    EXPECT_EQ(a.message(5).size(), 5000u);
    auto bytes = mock_payload(9, MessageOrigin{PeerId{3}, 5}, 16);
    EXPECT_EQ(std::string(reinterpret_cast<const char*>(bytes.data()), 11), "abcast:3:5:");
    EXPECT_EQ(Message(mock_payload(9, MessageOrigin{PeerId{3}, 5}, 5000)), a.message(5));
}

TEST(MockClient, PushEveryMarksEveryKthMessage)
{
    MockClientConfig cfg;
    cfg.rate_per_s = 5.0;
    cfg.push_every = 3;
    ClientRig r(cfg);
    auto actions = r.tick(at_ms(2000));
    ASSERT_EQ(actions.size(), 10u);
    for (std::size_t k = 0; k < actions.size(); ++k)
        EXPECT_EQ(std::get<AddAction>(actions[k].kind).push_directly, (k + 1) % 3 == 0) << k;
}

TEST(Bouncer, KindsGiveExpectedVerdicts)
{
    BouncerConfig all;
    EXPECT_EQ(all.verdict(std::nullopt, at_ms(0)), Verdict::Accept);

    BouncerConfig set{BouncerConfig::Kind::RejectSet, {MessageOrigin{PeerId{1}, 4}}, {}};
    EXPECT_EQ(set.verdict(MessageOrigin{PeerId{1}, 4}, at_ms(0)), Verdict::RejectForever);
    EXPECT_EQ(set.verdict(MessageOrigin{PeerId{1}, 5}, at_ms(0)), Verdict::Accept);
    EXPECT_EQ(set.verdict(std::nullopt, at_ms(0)), Verdict::Accept);

    BouncerConfig later{BouncerConfig::Kind::AcceptAfter, {}, at_ms(5000)};
    EXPECT_EQ(later.verdict(std::nullopt, at_ms(4999)), Verdict::Reject);
    EXPECT_EQ(later.verdict(std::nullopt, at_ms(5000)), Verdict::Accept);
}

TEST(MockClient, SeenAndOwnedMessagesAreRejectedForever)
{
    MockClientConfig cfg;
    cfg.rate_per_s = 1.0;
    ClientRig r(cfg);
    auto other = Message(mock_payload(1, MessageOrigin{PeerId{0}, 0}, 300));
    EXPECT_EQ(r.client.wants(Advert{other.id(), other.size()}, at_ms(0)), Verdict::Accept);
    r.deliver(at_ms(10), other);
    EXPECT_TRUE(r.client.has_seen(other.id()));
    EXPECT_EQ(r.client.wants(Advert{other.id(), other.size()}, at_ms(20)), Verdict::RejectForever);
    auto own = std::get<AddAction>(r.tick(at_ms(1000)).at(0).kind).message;
    EXPECT_EQ(r.client.wants(Advert{own.id(), own.size()}, at_ms(1000)), Verdict::RejectForever);
}

TEST(MockClient, BouncerUsesRegistryOrigins)
{
    MockClientConfig cfg;
    cfg.bouncer = BouncerConfig{BouncerConfig::Kind::RejectSet, {MessageOrigin{PeerId{2}, 1}}, {}};
    cfg.rate_per_s = 1.0;
    ClientRig r(cfg);
    auto m1 = r.client.message(1);
    EXPECT_EQ(r.client.wants(Advert{m1.id(), m1.size()}, at_ms(0)), Verdict::Accept) << "origin not yet registered";
    r.registry.record(m1.id(), MessageOrigin{PeerId{2}, 1});
    EXPECT_EQ(r.client.wants(Advert{m1.id(), m1.size()}, at_ms(0)), Verdict::RejectForever);
}

TEST(MockClient, RelayReaddsAndConsumeErases)
{
    MockClientConfig cfg;
    cfg.relay = true;
    cfg.consume = true;
    ClientRig r(cfg);
    auto m = text_message("relay me");
    auto actions = r.deliver(at_ms(5), m);
    ASSERT_EQ(actions.size(), 1u);
    EXPECT_EQ(std::get<AddAction>(actions[0].kind).message, m);
    EXPECT_TRUE(r.validated.contains(m.id()));
    EXPECT_FALSE(r.unvalidated.contains(m.id()));
    EXPECT_EQ(r.client.stats().relayed, 1u);
    EXPECT_TRUE(r.deliver(at_ms(6), m).empty());
}

TEST(MockClient, DeliveryWithoutConsumeStaysInPool)
{
    ClientRig r(MockClientConfig{});
    auto m = text_message("keep");
    EXPECT_TRUE(r.deliver(at_ms(5), m).empty());
    EXPECT_TRUE(r.unvalidated.contains(m.id()));
}

TEST(MockClient, RestartSkipsAddsThatFellDueWhileDown)
{
    MockClientConfig cfg;
    cfg.rate_per_s = 1.0;
    ClientRig r(cfg);
    EXPECT_EQ(count_adds(r.tick(at_ms(3000))), 3u);
    r.client.on_restart(at_ms(10000));
    EXPECT_EQ(r.client.stats().skipped_on_restart, 7u);
    EXPECT_EQ(count_adds(r.tick(at_ms(10200))), 0u);
    auto next = r.tick(at_ms(11000));
    ASSERT_EQ(next.size(), 1u);
    EXPECT_EQ(std::get<AddAction>(next[0].kind).message, r.client.message(10));
}

TEST(MockClient, CapacityRejectionIsRecorded)
{
    MockClientConfig cfg;
    cfg.rate_per_s = 10.0;
    ClientRig r(cfg, 4);
    r.tick(at_ms(500));
    EXPECT_EQ(r.validated.size(), 4u);
    EXPECT_EQ(r.client.stats().capacity_errors, 1u);
    EXPECT_EQ(r.client.last_error(), ErrorCode::Capacity);
    EXPECT_EQ(r.client.owned(), 4u);
}

TEST(MockClient, ValidateRejectsImpossibleSteadyState)
{
    MockClientConfig cfg;
    cfg.rate_per_s = 5.0;
    cfg.abort_after = ms(1000);
    EXPECT_NO_THROW(cfg.validate(5));
    EXPECT_THROW(cfg.validate(4), Error);
    cfg.relay = true;
    EXPECT_NO_THROW(cfg.validate(4));
    MockClientConfig empty;
    empty.message_sizes.clear();
    EXPECT_THROW(empty.validate(4), Error);
    MockClientConfig negative;
    negative.rate_per_s = -1;
    EXPECT_THROW(negative.validate(4), Error);
}

TEST(FloodPlan, SixtySecondsAtOneThousandPerSecond)
{
    FlooderSpec spec;
    spec.updates_per_second = 1000;
    spec.violating_fraction = 0.5;
    spec.stop = at_ms(60000);
    FloodPlan plan(PeerId{6}, 64, spec, 3);
    std::vector<SlotUpdate> all;
    for (std::int64_t t = 10; t <= 70000; t += 10)
    {
        auto batch = plan.flooder_step(at_ms(t));
        all.insert(all.end(), batch.begin(), batch.end());
    }
    ASSERT_EQ(all.size(), 60000u);
    std::size_t out_of_range = 0;
    std::set<std::uint32_t> high;
    std::set<MessageId> ids;
    for (std::size_t i = 0; i < all.size(); ++i)
    {
        const auto& u = all[i];
        EXPECT_EQ(u.sender, PeerId{6});
        if (i > 0)
        {
            ASSERT_GT(u.version, all[i - 1].version);
        }
        if (u.slot.value > 64)
        {
            ++out_of_range;
            high.insert(u.slot.value);
        }
        else
        {
            ASSERT_GE(u.slot.value, 1u);
        }
        ids.insert(u.id());
    }
    EXPECT_EQ(out_of_range, 30000u);
    EXPECT_EQ(high.size(), 30000u);
    EXPECT_EQ(plan.violating(), 30000u);
    EXPECT_EQ(ids.size(), 60000u);
}

TEST(FloodPlan, DownloadManagerStaysBoundedAndCountsEveryViolation)
{
    EngineConfig cfg;
    cfg.slot_capacity = 64;
    FakeTransport tr;
    UnvalidatedPool pool(cfg.unvalidated_bound(7));
    DownloadManager dm(cfg, PeerId{0}, members(7), tr, pool, [](const Advert&, TimePoint) { return Verdict::Accept; });
    FlooderSpec spec;
    spec.updates_per_second = 1000;
    spec.violating_fraction = 0.5;
    spec.stop = at_ms(60000);
    FloodPlan plan(PeerId{6}, cfg.slot_capacity, spec, 3);
    std::uint64_t sent = 0;
    std::uint64_t sent_out_of_range = 0;
    while (tr.now() < at_ms(61000))
    {
        tr.run_for(ms(10));
        for (const auto& u : plan.flooder_step(tr.now()))
        {
            ++sent;
            sent_out_of_range += u.slot.value > cfg.slot_capacity;
            dm.handle_slot_update(u);
        }
        dm.drive_downloads();
        if (tr.now().time_since_epoch() % cfg.tick_interval == Duration::zero())
            dm.on_tick();
        ASSERT_LE(dm.entries(PeerId{6})->size(), cfg.slot_capacity);
        ASSERT_LE(dm.tracked_entries(), cfg.slot_capacity + cfg.max_concurrent_streams_per_peer);
    }
    EXPECT_EQ(sent, 60000u);
    EXPECT_EQ(dm.stats().protocol_violations, sent_out_of_range);
    EXPECT_EQ(dm.stats().rate_limited, 0u);
    EXPECT_LE(dm.peak_tracked_entries(), cfg.slot_capacity + cfg.max_concurrent_streams_per_peer);
}
