#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include <random>

using namespace abcast;
using namespace abcast::testing;

namespace
{
    EngineConfig small_config(std::size_t cap = 5)
    {
        EngineConfig cfg;
        cfg.slot_capacity = cap;
        return cfg;
    }

    std::vector<ApplyOutcome> apply(ReplicationManager& rm, std::vector<ChangeAction> actions)
    {
        return rm.apply_change_actions(actions);
    }

    const wire::WireUpdate& update_of(const wire::Frame& f) { return std::get<wire::WireUpdate>(f); }
} // namespace

TEST(ReplicationManager, LargeMessagesAreAdvertisedSmallOnesPushed)
{
    FakeTransport tr;
    ReplicationManager rm(small_config(), PeerId{0}, members(3), tr, 1);
    auto big = sized_message(2048, 1);
    auto small = sized_message(500, 2);
    auto flagged = sized_message(4096, 3);
    auto edge = sized_message(1024, 4);
    apply(rm, {ChangeAction::add(big), ChangeAction::add(small), ChangeAction::add(flagged, true),
               ChangeAction::add(edge)});
    EXPECT_TRUE(tr.sent.empty()) << "frames must leave from the pump, not from apply";
    tr.settle();
    for (auto peer : {PeerId{1}, PeerId{2}})
    {
        auto frames = tr.frames_to(peer);
        ASSERT_EQ(frames.size(), 4u);
        EXPECT_FALSE(update_of(frames[0]).payload);
        EXPECT_TRUE(update_of(frames[1]).payload);
        EXPECT_TRUE(update_of(frames[2]).payload);
        EXPECT_TRUE(update_of(frames[3]).payload);
        EXPECT_EQ(update_of(frames[0]).id, big.id());
    }
    EXPECT_TRUE(tr.frames_to(PeerId{0}).empty());
}

// Same trace as the reference table; the send side must agree on every placement.
TEST(ReplicationManager, WorkedTraceMatchesReferenceTable)
{
    FakeTransport tr;
    ReplicationManager rm(small_config(), PeerId{0}, members(2), tr, 1);
    reference::SendSideTable oracle(5);
    std::map<std::string, Message> m;
    for (auto name : {"A", "B", "C", "D0", "D", "E", "F"})
        m.emplace(name, text_message(name));

    auto add = [&](const char* name) {
        auto out = apply(rm, {ChangeAction::add(m.at(name))}).front();
        auto ref = oracle.broadcast(m.at(name));
        EXPECT_TRUE(out.ok());
        EXPECT_EQ(out.slot, ref.slot) << name;
        EXPECT_EQ(out.version, ref.version) << name;
        return out;
    };
    auto remove = [&](const char* name) {
        auto out = apply(rm, {ChangeAction::remove(m.at(name).id())}).front();
        auto ref = oracle.abort(m.at(name).id());
        EXPECT_EQ(out.slot, ref.slot) << name;
        EXPECT_EQ(out.version, ref.version) << name;
        return out;
    };
    add("A");
    add("B");
    add("C");
    add("D0");
    remove("D0");
    auto d = add("D");
    EXPECT_EQ(d.slot, SlotIndex{4});
    EXPECT_EQ(d.version, Version{6});
    add("E");
    auto abort_d = remove("D");
    EXPECT_EQ(abort_d.version, Version{8});
    auto f = add("F");
    EXPECT_EQ(f.slot, SlotIndex{4});
    EXPECT_EQ(f.version, Version{9});
    EXPECT_EQ(rm.slot(SlotIndex{4}).version, Version{9});
}

TEST(ReplicationManager, AddThenRemoveInOneBatchSendsNothing)
{
    FakeTransport tr;
    ReplicationManager rm(small_config(), PeerId{0}, members(4), tr, 1);
    auto m = sized_message(100, 7);
    auto out = apply(rm, {ChangeAction::add(m), ChangeAction::remove(m.id())});
    ASSERT_TRUE(out[0].ok());
    ASSERT_TRUE(out[1].ok());
    EXPECT_EQ(rm.version(), Version{2});
    EXPECT_EQ(rm.occupied(), 0u);
    tr.settle();
    EXPECT_TRUE(tr.sent.empty());
    EXPECT_EQ(rm.live_tasks(), 0u);
    auto again = apply(rm, {ChangeAction::add(sized_message(100, 8))}).front();
    EXPECT_EQ(again.slot, SlotIndex{1});
    EXPECT_EQ(again.version, Version{3});
}

TEST(ReplicationManager, ErrorsAreReturnedNotThrown)
{
    FakeTransport tr;
    auto cfg = small_config(2);
    cfg.max_message_size = 4096;
    ReplicationManager rm(cfg, PeerId{0}, members(2), tr, 1);
    auto a = text_message("a");
    auto out = apply(rm, {ChangeAction::add(a), ChangeAction::add(a), ChangeAction::add(text_message("b")),
                          ChangeAction::add(text_message("c")), ChangeAction::remove(text_message("zz").id()),
                          ChangeAction::add(sized_message(5000, 1))});
    EXPECT_TRUE(out[0].ok());
    EXPECT_EQ(out[1].error, ErrorCode::Duplicate);
    EXPECT_TRUE(out[2].ok());
    EXPECT_EQ(out[3].error, ErrorCode::Capacity);
    EXPECT_EQ(out[4].error, ErrorCode::UnknownMessage);
    EXPECT_EQ(out[5].error, ErrorCode::MessageTooLarge);
    EXPECT_EQ(rm.version(), Version{2});
    EXPECT_EQ(tr.now(), TimePoint{});
}

// Independent evaluation of min(cap, base * 2^a) * (0.5 + u) at the jitter extremes;
// delays are truncated to whole microseconds.
TEST(Backoff, RangesForFirstAndCappedAttempts)
{
    EngineConfig cfg;
    auto lo = [](double base_ms) { return base_ms * 0.5; };
    auto in_ms = [](Duration d) { return static_cast<double>(d.count()) / 1000.0; };
    EXPECT_DOUBLE_EQ(in_ms(backoff_delay(cfg, 0, 0.0)), lo(100));
    EXPECT_DOUBLE_EQ(in_ms(backoff_delay(cfg, 0, 0.999999)), std::floor(100000.0 * (0.5 + 0.999999)) / 1000.0);
    EXPECT_DOUBLE_EQ(in_ms(backoff_delay(cfg, 10, 0.0)), lo(10000));
    EXPECT_DOUBLE_EQ(in_ms(backoff_delay(cfg, 10, 0.999999)), std::floor(10000000.0 * (0.5 + 0.999999)) / 1000.0);
    EXPECT_DOUBLE_EQ(in_ms(backoff_delay(cfg, 3, 0.5)), 800.0);
    EXPECT_EQ(backoff_delay(cfg, 200, 0.5), ms(10000));
    for (double u = 0.0; u < 1.0; u += 0.01)
    {
        auto d0 = backoff_delay(cfg, 0, u);
        EXPECT_GE(d0, ms(50));
        EXPECT_LE(d0, ms(150));
        auto d10 = backoff_delay(cfg, 10, u);
        EXPECT_GE(d10, ms(5000));
        EXPECT_LE(d10, ms(15000));
    }
}

TEST(ReplicationManager, FailedSendRetriesWithinBackoffWindow)
{
    FakeTransport tr;
    ReplicationManager rm(small_config(), PeerId{0}, members(2), tr, 9);
    apply(rm, {ChangeAction::add(sized_message(100, 1))});
    tr.settle();
    ASSERT_EQ(tr.sent.size(), 1u);
    tr.complete(0, false);
    tr.settle();
    const auto* t = rm.task(PeerId{1}, SlotIndex{1});
    ASSERT_TRUE(t);
    EXPECT_EQ(t->state, TaskState::Backoff);
    EXPECT_EQ(t->attempts, 1u);
    tr.run_for(ms(49));
    EXPECT_EQ(tr.sent.size(), 1u);
    tr.run_for(ms(102));
    ASSERT_EQ(tr.sent.size(), 2u);
    auto delay = tr.sent[1].at - tr.sent[0].at;
    EXPECT_GE(delay, ms(50));
    EXPECT_LE(delay, ms(150));
    EXPECT_EQ(rm.task(PeerId{1}, SlotIndex{1})->state, TaskState::InFlight);
    tr.complete(1, true);
    tr.settle();
    EXPECT_EQ(rm.task(PeerId{1}, SlotIndex{1})->state, TaskState::Delivered);
    EXPECT_EQ(rm.stats().retries, 1u);
}

TEST(ReplicationManager, OverwrittenSlotKillsPendingRetry)
{
    FakeTransport tr;
    ReplicationManager rm(small_config(), PeerId{0}, members(2), tr, 9);
    auto old_msg = sized_message(100, 1);
    auto new_msg = sized_message(100, 2);
    apply(rm, {ChangeAction::add(old_msg)});
    tr.settle();
    tr.complete(0, false);
    tr.settle();
    apply(rm, {ChangeAction::remove(old_msg.id()), ChangeAction::add(new_msg)});
    tr.run_for(ms(20000));
    ASSERT_EQ(tr.sent.size(), 2u);
    EXPECT_EQ(update_of(*wire::decode(tr.sent[1].bytes)).id, new_msg.id());
    EXPECT_EQ(update_of(*wire::decode(tr.sent[1].bytes)).version, Version{3});
}

TEST(ReplicationManager, RemoveBeforeRetryLeavesNoTask)
{
    FakeTransport tr;
    ReplicationManager rm(small_config(), PeerId{0}, members(2), tr, 9);
    auto m = sized_message(100, 1);
    apply(rm, {ChangeAction::add(m)});
    tr.settle();
    tr.complete(0, false);
    tr.settle();
    apply(rm, {ChangeAction::remove(m.id())});
    tr.run_for(ms(20000));
    EXPECT_EQ(tr.sent.size(), 1u);
    EXPECT_EQ(rm.live_tasks(), 0u);
}

TEST(ReplicationManager, ConnectionChangeReadvertisesOccupiedSlots)
{
    FakeTransport tr;
    ReplicationManager rm(small_config(), PeerId{0}, members(3), tr, 1);
    auto a = sized_message(100, 1), b = sized_message(5000, 2), c = sized_message(100, 3), d = sized_message(100, 4);
    apply(rm, {ChangeAction::add(a), ChangeAction::add(b), ChangeAction::add(c), ChangeAction::add(d)});
    apply(rm, {ChangeAction::remove(b.id())});
    tr.settle();
    tr.complete_all(true);
    tr.settle();
    auto before = tr.sent.size();

    rm.on_conn_id_change(PeerId{1}, ConnectionId{2});
    tr.settle();
    auto frames = tr.frames_to(PeerId{1}, before);
    ASSERT_EQ(frames.size(), 3u);
    std::set<MessageId> ids;
    for (const auto& f : frames)
    {
        EXPECT_FALSE(update_of(f).payload) << "retransmission is advert only";
        ids.insert(update_of(f).id);
    }
    EXPECT_EQ(ids, (std::set<MessageId>{a.id(), c.id(), d.id()}));
    EXPECT_TRUE(tr.frames_to(PeerId{2}, before).empty());

    rm.on_conn_id_change(PeerId{1}, ConnectionId{2});
    rm.on_conn_id_change(PeerId{1}, ConnectionId{1});
    tr.settle();
    EXPECT_EQ(tr.sent.size(), before + 3);
    EXPECT_EQ(rm.stats().conn_changes, 1u);
}

TEST(ReplicationManager, ConnectionChangeWithEmptyTableSendsNothing)
{
    FakeTransport tr;
    ReplicationManager rm(small_config(), PeerId{0}, members(3), tr, 1);
    rm.on_conn_id_change(PeerId{2}, ConnectionId{5});
    tr.settle();
    EXPECT_TRUE(tr.sent.empty());
    EXPECT_EQ(rm.last_seen_conn(PeerId{2}), ConnectionId{5});
}

TEST(ReplicationManager, ReconnectDuringPushReplacesItWithAdvert)
{
    FakeTransport tr;
    ReplicationManager rm(small_config(), PeerId{0}, members(2), tr, 1);
    auto m = sized_message(200, 1);
    apply(rm, {ChangeAction::add(m)});
    tr.settle();
    ASSERT_EQ(tr.sent.size(), 1u);
    EXPECT_TRUE(update_of(*wire::decode(tr.sent[0].bytes)).payload);
    auto old_gen = rm.task(PeerId{1}, SlotIndex{1})->generation;

    rm.on_conn_id_change(PeerId{1}, ConnectionId{2});
    tr.settle();
    ASSERT_EQ(tr.sent.size(), 2u);
    EXPECT_FALSE(update_of(*wire::decode(tr.sent[1].bytes)).payload);
    EXPECT_NE(rm.task(PeerId{1}, SlotIndex{1})->generation, old_gen);

    tr.complete(0, false);
    tr.settle();
    EXPECT_EQ(rm.stats().stale_completions, 1u);
    EXPECT_EQ(rm.task(PeerId{1}, SlotIndex{1})->state, TaskState::InFlight);
}

TEST(ReplicationManager, StreamCapLimitsFramesInFlightPerPeer)
{
    FakeTransport tr;
    auto cfg = small_config(32);
    ReplicationManager rm(cfg, PeerId{0}, members(2), tr, 1);
    std::vector<ChangeAction> adds;
    for (int i = 0; i < 15; ++i)
        adds.push_back(ChangeAction::add(sized_message(64, static_cast<std::uint8_t>(i))));
    apply(rm, adds);
    tr.settle();
    EXPECT_EQ(tr.sent.size(), 10u);
    EXPECT_EQ(rm.in_flight(PeerId{1}), 10u);
    tr.complete(3, true);
    tr.settle();
    EXPECT_EQ(tr.sent.size(), 11u);
    tr.complete_all(true);
    tr.settle();
    tr.complete_all(true);
    tr.settle();
    EXPECT_EQ(tr.sent.size(), 15u);
    EXPECT_EQ(rm.in_flight(PeerId{1}), 0u);
}

TEST(ReplicationManager, BaselineAbandonsFailuresAndIgnoresReconnects)
{
    FakeTransport tr;
    auto cfg = small_config();
    cfg.mode = EngineMode::NoRetransmitBaseline;
    ReplicationManager rm(cfg, PeerId{0}, members(2), tr, 1);
    apply(rm, {ChangeAction::add(sized_message(100, 1))});
    tr.settle();
    tr.complete(0, false);
    tr.run_for(ms(60000));
    EXPECT_EQ(tr.sent.size(), 1u);
    EXPECT_EQ(rm.task(PeerId{1}, SlotIndex{1})->state, TaskState::Abandoned);
    rm.on_conn_id_change(PeerId{1}, ConnectionId{2});
    tr.settle();
    EXPECT_EQ(tr.sent.size(), 1u);
    EXPECT_EQ(rm.last_seen_conn(PeerId{1}), ConnectionId{2});
}

// Random schedule of adds, removes, completions and reconnects: the task bound and the
// freshness rule hold at every hand-off.
TEST(ReplicationManager, RandomSchedulesKeepTaskBoundAndFreshness)
{
    std::mt19937_64 rng(17);
    for (int run = 0; run < 40; ++run)
    {
        FakeTransport tr;
        std::uint32_t n = 2 + static_cast<std::uint32_t>(rng() % 4);
        auto cfg = small_config(1 + rng() % 6);
        ReplicationManager rm(cfg, PeerId{0}, members(n), tr, run);
        std::size_t stale_handoffs = 0;
        tr.on_send = [&](PeerId, const Bytes& b) {
            const auto& u = update_of(*wire::decode(b));
            if (rm.slot(u.slot).version != u.version)
                ++stale_handoffs;
        };
        std::vector<Message> live;
        std::uint64_t conn = 1;
        for (int op = 0; op < 400; ++op)
        {
            switch (rng() % 6)
            {
            case 0:
            case 1:
            {
                auto m = sized_message(1 + rng() % 3000, static_cast<std::uint8_t>(op), std::to_string(run * 1000 + op));
                if (apply(rm, {ChangeAction::add(m)}).front().ok())
                    live.push_back(m);
                break;
            }
            case 2:
                if (!live.empty())
                {
                    auto i = rng() % live.size();
                    apply(rm, {ChangeAction::remove(live[i].id())});
                    live.erase(live.begin() + static_cast<std::ptrdiff_t>(i));
                }
                break;
            case 3:
                for (std::size_t i = 0; i < tr.sent.size(); ++i)
                {
                    if (tr.sent[i].on_done && rng() % 2)
                        tr.complete(i, rng() % 3 != 0);
                }
                break;
            case 4:
                rm.on_conn_id_change(PeerId{1 + static_cast<std::uint32_t>(rng() % (n - 1))}, ConnectionId{++conn});
                break;
            default:
                tr.run_for(ms(static_cast<std::int64_t>(rng() % 400)));
                break;
            }
            tr.settle();
            ASSERT_LE(rm.live_tasks(), cfg.slot_capacity * (n - 1));
            ASSERT_EQ(rm.occupied(), live.size());
            for (auto peer : rm.peers())
                ASSERT_LE(rm.in_flight(peer), cfg.max_concurrent_streams_per_peer);
        }
        EXPECT_EQ(stale_handoffs, 0u);
    }
}
