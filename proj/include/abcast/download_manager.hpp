#pragma once

// Receive side of the engine.
//
// Keeps one receive slot table per peer and a download task for every message id
// referenced by at least one receive slot. A task is live exactly while it has an
// advertiser; the last unlink erases the task and evicts the message from the
// unvalidated pool. Pulls rotate over advertisers and are limited to a fixed number
// of outstanding streams per peer, so a peer that never answers cannot hold more
// than that many of our resources.
//
// In bounded mode a peer can make us track at most C receive slots; updates for
// slots outside [1, C] are protocol violations and are dropped, and more than
// rate_cap() updates per peer within one tick are dropped as rate limited.

#include "abcast/core_types.hpp"
#include "abcast/pools.hpp"
#include "abcast/transport.hpp"
#include "abcast/wire.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <vector>

namespace abcast
{
    enum class DownloadStatus : std::uint8_t
    {
        Pending,
        Downloading,
        Downloaded,
    };

    struct Advertiser
    {
        PeerId peer;
        TimePoint first_advertised;
        // Receive slots of this peer that currently reference the message.
        std::uint32_t slots = 0;
    };

    struct DownloadTask
    {
        MessageId id;
        std::uint64_t size = 0;
        std::vector<Advertiser> advertisers;
        DownloadStatus status = DownloadStatus::Pending;
        std::optional<PeerId> pulling_from;
        std::size_t cursor = 0;
        std::uint64_t pull_token = 0;
        std::uint32_t attempts = 0;
        std::optional<std::uint64_t> ready_seq;
        std::optional<std::uint64_t> wait_seq;
        bool bounced = false;
        // Rejected for good; kept only so its advertisers stay accounted.
        bool parked = false;
        bool deferred = false;
    };

    enum class UpdateOutcome : std::uint8_t
    {
        Accepted,
        Stale,
        Violation,
        RateLimited,
    };

    struct DownloadStats
    {
        std::uint64_t protocol_violations = 0;
        std::uint64_t rate_limited = 0;
        std::uint64_t stale_updates = 0;
        std::uint64_t pulls_issued = 0;
        std::uint64_t pull_timeouts = 0;
        std::uint64_t pull_failures = 0;
        std::uint64_t refusals_received = 0;
        std::uint64_t refusals_sent = 0;
        std::uint64_t pulls_served = 0;
        std::uint64_t downloads_completed = 0;
        std::uint64_t pushes_accepted = 0;
        std::uint64_t integrity_failures = 0;
        std::uint64_t stale_responses = 0;
        std::uint64_t pool_full = 0;
        std::uint64_t peer_resets = 0;
    };

    class DownloadManager
    {
    public:
        using Bouncer = std::function<Verdict(const Advert&, TimePoint)>;
        using InsertedFn = std::function<void(const Message&)>;
        using RemovedFn = std::function<void(const MessageId&)>;
        using Lookup = std::function<const Message*(const MessageId&)>;

        DownloadManager(const EngineConfig& cfg, PeerId self, std::vector<PeerId> peers, Transport& transport,
                        UnvalidatedPool& pool, Bouncer bouncer)
            : cfg_(cfg), self_(self), transport_(transport), pool_(pool), bouncer_(std::move(bouncer))
        {
            cfg_.validate();
            for (auto p : peers)
            {
                if (p != self_)
                    peers_.emplace(p, PeerState{});
            }
        }

        DownloadManager(const DownloadManager&) = delete;
        DownloadManager& operator=(const DownloadManager&) = delete;

        void on_inserted(InsertedFn fn) { inserted_ = std::move(fn); }
        void on_removed(RemovedFn fn) { removed_ = std::move(fn); }

        // Frames carry the connection they arrived on; a newer one resets the peer first.
        UpdateOutcome handle_slot_update(ConnectionId conn, const SlotUpdate& u)
        {
            auto* p = find_peer(u.sender);
            if (!p)
            {
                ++stats_.protocol_violations;
                return UpdateOutcome::Violation;
            }
            observe_connection(u.sender, conn);
            return handle_slot_update(*p, u);
        }

        UpdateOutcome handle_slot_update(const SlotUpdate& u)
        {
            auto* p = find_peer(u.sender);
            if (!p)
            {
                ++stats_.protocol_violations;
                return UpdateOutcome::Violation;
            }
            return handle_slot_update(*p, u);
        }

        // Malformed frames, bad digests and similar misbehaviour found by the caller.
        void record_violation() { ++stats_.protocol_violations; }

        void observe_connection(PeerId peer, ConnectionId conn)
        {
            auto* p = find_peer(peer);
            if (!p || conn <= p->epoch)
                return;
            bool had_epoch = p->epoch != ConnectionId{};
            p->epoch = conn;
            if (had_epoch)
                reset_peer(peer);
        }

        // Picks an advertiser for every ready task that the bouncer accepts.
        void drive_downloads()
        {
            auto now = transport_.now();
            while (!ready_.empty())
            {
                auto it = ready_.begin();
                auto id = it->second;
                ready_.erase(it);
                auto* t = find_task(id);
                if (!t)
                    continue;
                t->ready_seq.reset();
                if (t->status != DownloadStatus::Pending || t->pulling_from || t->wait_seq || t->bounced ||
                    t->deferred)
                    continue;
                if (t->parked)
                    continue;
                if (auto v = bouncer_(Advert{t->id, t->size}, now); v != Verdict::Accept)
                {
                    t->bounced = true;
                    if (v == Verdict::RejectForever)
                        t->parked = true;
                    else
                        bounced_.insert(t->id);
                    continue;
                }
                if (pool_.size() >= pool_.bound())
                {
                    ++stats_.pool_full;
                    defer(*t);
                    continue;
                }
                try_issue(*t);
            }
        }

        // Re-evaluates bounced tasks, releases deferred retries and resets the rate counters.
        void on_tick()
        {
            for (auto& [peer, p] : peers_)
                p.updates_this_tick = 0;
            for (const auto& id : deferred_)
            {
                if (auto* t = find_task(id))
                {
                    t->deferred = false;
                    make_ready(*t);
                }
            }
            deferred_.clear();
            for (const auto& id : bounced_)
            {
                if (auto* t = find_task(id))
                {
                    t->bounced = false;
                    make_ready(*t);
                }
            }
            bounced_.clear();
            drive_downloads();
        }

        void on_pull_response(PeerId from, const MessageId& id, Bytes payload)
        {
            auto* t = find_task(id);
            if (!t || t->status != DownloadStatus::Downloading || t->pulling_from != from)
            {
                ++stats_.stale_responses;
                return;
            }
            if (payload.size() > cfg_.max_message_size)
            {
                ++stats_.protocol_violations;
                fail_pull(*t, true);
                return;
            }
            Message m(std::move(payload));
            if (m.id() != id)
            {
                ++stats_.integrity_failures;
                ++stats_.protocol_violations;
                fail_pull(*t, true);
                return;
            }
            release_stream(*t);
            complete(*t, m);
            ++stats_.downloads_completed;
            wake(from);
            drive_downloads();
        }

        void on_pull_refused(PeerId from, const MessageId& id)
        {
            ++stats_.refusals_received;
            auto* t = find_task(id);
            if (!t || t->status != DownloadStatus::Downloading || t->pulling_from != from)
                return;
            fail_pull(*t, true);
        }

        // Answers from the validated pool; refuses unknown ids and requesters over the stream cap.
        bool serve_pull(PeerId requester, const MessageId& id, const Lookup& lookup)
        {
            auto* p = find_peer(requester);
            if (!p)
            {
                ++stats_.protocol_violations;
                return false;
            }
            const Message* m = lookup(id);
            if (!m || p->serving >= cfg_.max_concurrent_streams_per_peer)
            {
                ++stats_.refusals_sent;
                transport_.send_frame(requester, wire::encode_pull_refusal(id), {});
                return false;
            }
            ++p->serving;
            ++stats_.pulls_served;
            transport_.send_frame(requester, wire::encode_pull_response(id, m->payload()), [this, requester](bool) {
                if (auto* q = find_peer(requester); q && q->serving > 0)
                    --q->serving;
            });
            return true;
        }

        // Forgets everything learnt from a peer: unlinks all its receive slots.
        void reset_peer(PeerId peer)
        {
            auto* p = find_peer(peer);
            if (!p)
                return;
            ++stats_.peer_resets;
            auto entries = std::move(p->entries);
            p->entries.clear();
            for (const auto& [slot, e] : entries)
            {
                --occupied_entries_;
                unlink(peer, e.id);
            }
        }

        [[nodiscard]] std::size_t tracked_entries() const noexcept
        {
            std::size_t outstanding = 0;
            for (const auto& [peer, p] : peers_)
                outstanding += p.outstanding;
            return occupied_entries_ + outstanding;
        }

        [[nodiscard]] std::size_t peak_tracked_entries() const noexcept { return peak_tracked_; }

        // Upper bound on tracked_entries() in bounded mode.
        [[nodiscard]] std::size_t tracked_bound() const noexcept
        {
            return peers_.size() * (cfg_.slot_capacity + cfg_.max_concurrent_streams_per_peer);
        }

        struct Entry
        {
            Version version;
            MessageId id;
        };

        [[nodiscard]] const std::map<std::uint32_t, Entry>* entries(PeerId peer) const
        {
            auto it = peers_.find(peer);
            return it == peers_.end() ? nullptr : &it->second.entries;
        }

        [[nodiscard]] const DownloadTask* task(const MessageId& id) const
        {
            auto it = tasks_.find(id);
            return it == tasks_.end() ? nullptr : &it->second;
        }

        [[nodiscard]] std::size_t task_count() const noexcept { return tasks_.size(); }

        [[nodiscard]] std::size_t outstanding(PeerId peer) const
        {
            auto it = peers_.find(peer);
            return it == peers_.end() ? 0 : it->second.outstanding;
        }

        [[nodiscard]] std::size_t serving(PeerId peer) const
        {
            auto it = peers_.find(peer);
            return it == peers_.end() ? 0 : it->second.serving;
        }

        [[nodiscard]] ConnectionId epoch(PeerId peer) const
        {
            auto it = peers_.find(peer);
            return it == peers_.end() ? ConnectionId{} : it->second.epoch;
        }

        [[nodiscard]] const DownloadStats& stats() const noexcept { return stats_; }

    private:
        struct PeerState
        {
            std::map<std::uint32_t, Entry> entries;
            // Tasks blocked on this peer's stream cap, FIFO.
            std::map<std::uint64_t, MessageId> waiting;
            std::size_t outstanding = 0;
            std::size_t serving = 0;
            std::size_t updates_this_tick = 0;
            ConnectionId epoch{};
        };

        PeerState* find_peer(PeerId peer)
        {
            auto it = peers_.find(peer);
            return it == peers_.end() ? nullptr : &it->second;
        }

        DownloadTask* find_task(const MessageId& id)
        {
            auto it = tasks_.find(id);
            return it == tasks_.end() ? nullptr : &it->second;
        }

        UpdateOutcome handle_slot_update(PeerState& p, const SlotUpdate& u)
        {
            if (cfg_.bounded_receive_tables)
            {
                if (u.slot.value < 1 || u.slot.value > cfg_.slot_capacity)
                {
                    ++stats_.protocol_violations;
                    return UpdateOutcome::Violation;
                }
                if (p.updates_this_tick >= cfg_.rate_cap())
                {
                    ++stats_.rate_limited;
                    return UpdateOutcome::RateLimited;
                }
                ++p.updates_this_tick;
            }
            if (u.message_size() > cfg_.max_message_size)
            {
                ++stats_.protocol_violations;
                return UpdateOutcome::Violation;
            }
            auto it = p.entries.find(u.slot.value);
            if (it != p.entries.end() && u.version <= it->second.version)
            {
                ++stats_.stale_updates;
                return UpdateOutcome::Stale;
            }

            auto id = u.id();
            std::optional<MessageId> previous;
            if (it == p.entries.end())
            {
                p.entries.emplace(u.slot.value, Entry{u.version, id});
                ++occupied_entries_;
            }
            else
            {
                previous = it->second.id;
                it->second = Entry{u.version, id};
            }
            // Link before unlink so a re-advertised id keeps its task.
            link(u.sender, id, u.message_size());
            if (previous)
                unlink(u.sender, *previous);

            if (const auto* full = std::get_if<FullMessage>(&u.content))
                accept_push(id, full->message);
            note_peak();
            return UpdateOutcome::Accepted;
        }

        void link(PeerId peer, const MessageId& id, std::uint64_t size)
        {
            auto [it, fresh] = tasks_.try_emplace(id);
            auto& t = it->second;
            if (fresh)
            {
                t.id = id;
                t.size = size;
            }
            auto adv = std::find_if(t.advertisers.begin(), t.advertisers.end(),
                                    [&](const Advertiser& a) { return a.peer == peer; });
            if (adv != t.advertisers.end())
            {
                ++adv->slots;
                return;
            }
            t.advertisers.push_back(Advertiser{peer, transport_.now(), 1});
            if (t.status != DownloadStatus::Pending || t.pulling_from)
                return;
            if (t.wait_seq)
            {
                // A blocked task may be servable by the new advertiser.
                unwait(t);
                make_ready(t);
            }
            else if (!t.bounced && !t.deferred)
            {
                make_ready(t);
            }
        }

        void unlink(PeerId peer, const MessageId& id)
        {
            auto* t = find_task(id);
            if (!t)
                return;
            auto adv = std::find_if(t->advertisers.begin(), t->advertisers.end(),
                                    [&](const Advertiser& a) { return a.peer == peer; });
            if (adv == t->advertisers.end())
                return;
            if (--adv->slots > 0)
                return;
            auto pos = static_cast<std::size_t>(std::distance(t->advertisers.begin(), adv));
            t->advertisers.erase(adv);
            if (t->cursor > pos)
                --t->cursor;
            if (t->wait_seq)
            {
                if (auto* p = find_peer(peer))
                    p->waiting.erase(*t->wait_seq);
            }
            if (t->pulling_from == peer)
            {
                ++t->pull_token;
                release_stream(*t);
                wake(peer);
                if (!t->advertisers.empty())
                    make_ready(*t);
            }
            if (t->advertisers.empty())
                on_task_unlinked(*t);
            else if (t->cursor >= t->advertisers.size())
                t->cursor = 0;
        }

        void on_task_unlinked(DownloadTask& t)
        {
            if (t.ready_seq)
                ready_.erase(*t.ready_seq);
            if (t.wait_seq)
                unwait(t);
            bounced_.erase(t.id);
            deferred_.erase(t.id);
            auto id = t.id;
            tasks_.erase(id);
            if (pool_.erase(id) && removed_)
                removed_(id);
        }

        void accept_push(const MessageId& id, const Message& m)
        {
            auto* t = find_task(id);
            if (!t || t->status == DownloadStatus::Downloaded)
                return;
            if (t->parked || bouncer_(Advert{id, m.size()}, transport_.now()) != Verdict::Accept)
                return;
            if (pool_.size() >= pool_.bound())
            {
                ++stats_.pool_full;
                return;
            }
            if (t->pulling_from)
            {
                auto from = *t->pulling_from;
                ++t->pull_token;
                release_stream(*t);
                wake(from);
            }
            ++stats_.pushes_accepted;
            complete(*t, m);
        }

        void complete(DownloadTask& t, const Message& m)
        {
            if (t.ready_seq)
            {
                ready_.erase(*t.ready_seq);
                t.ready_seq.reset();
            }
            if (t.wait_seq)
                unwait(t);
            if (t.bounced)
            {
                bounced_.erase(t.id);
                t.bounced = false;
            }
            if (t.deferred)
            {
                deferred_.erase(t.id);
                t.deferred = false;
            }
            t.status = DownloadStatus::Downloaded;
            if (pool_.insert(m) && inserted_)
                inserted_(m);
        }

        void make_ready(DownloadTask& t)
        {
            if (t.ready_seq || t.status != DownloadStatus::Pending)
                return;
            auto seq = next_seq_++;
            ready_.emplace(seq, t.id);
            t.ready_seq = seq;
        }

        void defer(DownloadTask& t)
        {
            t.deferred = true;
            deferred_.insert(t.id);
        }

        void unwait(DownloadTask& t)
        {
            for (const auto& a : t.advertisers)
            {
                if (auto* p = find_peer(a.peer))
                    p->waiting.erase(*t.wait_seq);
            }
            t.wait_seq.reset();
        }

        void try_issue(DownloadTask& t)
        {
            auto n = t.advertisers.size();
            for (std::size_t k = 0; k < n; ++k)
            {
                auto idx = (t.cursor + k) % n;
                auto peer = t.advertisers[idx].peer;
                auto* p = find_peer(peer);
                if (p && p->outstanding < cfg_.max_concurrent_streams_per_peer)
                {
                    issue(t, idx, *p);
                    return;
                }
            }
            auto seq = next_seq_++;
            t.wait_seq = seq;
            for (const auto& a : t.advertisers)
            {
                if (auto* p = find_peer(a.peer))
                    p->waiting.emplace(seq, t.id);
            }
        }

        void issue(DownloadTask& t, std::size_t idx, PeerState& p)
        {
            auto peer = t.advertisers[idx].peer;
            t.cursor = idx;
            t.pulling_from = peer;
            t.status = DownloadStatus::Downloading;
            ++t.attempts;
            auto token = ++t.pull_token;
            ++p.outstanding;
            ++stats_.pulls_issued;
            note_peak();
            auto id = t.id;
            transport_.send_frame(peer, wire::encode_pull_request(id), [this, id, token](bool ok) {
                if (ok)
                    return;
                auto* task = find_task(id);
                if (task && task->pull_token == token && task->status == DownloadStatus::Downloading)
                {
                    ++stats_.pull_failures;
                    fail_pull(*task, true);
                }
            });
            transport_.schedule(cfg_.download_timeout, [this, id, token] {
                auto* task = find_task(id);
                if (task && task->pull_token == token && task->status == DownloadStatus::Downloading)
                {
                    ++stats_.pull_timeouts;
                    fail_pull(*task, false);
                }
            });
        }

        void release_stream(DownloadTask& t)
        {
            if (!t.pulling_from)
                return;
            if (auto* p = find_peer(*t.pulling_from); p && p->outstanding > 0)
                --p->outstanding;
            t.pulling_from.reset();
            if (t.status == DownloadStatus::Downloading)
                t.status = DownloadStatus::Pending;
        }

        // Rotates to the next advertiser. An immediate failure waits for the next tick so a
        // dead link cannot spin; a timeout retries right away.
        void fail_pull(DownloadTask& t, bool wait_for_tick)
        {
            auto from = *t.pulling_from;
            ++t.pull_token;
            release_stream(t);
            if (!t.advertisers.empty())
                t.cursor = (t.cursor + 1) % t.advertisers.size();
            if (wait_for_tick)
                defer(t);
            else
                make_ready(t);
            wake(from);
            drive_downloads();
        }

        // A stream to `peer` was released: hand it to the oldest waiting task.
        void wake(PeerId peer)
        {
            auto* p = find_peer(peer);
            if (!p)
                return;
            while (!p->waiting.empty() && p->outstanding < cfg_.max_concurrent_streams_per_peer)
            {
                auto id = p->waiting.begin()->second;
                auto* t = find_task(id);
                if (!t || !t->wait_seq)
                {
                    p->waiting.erase(p->waiting.begin());
                    continue;
                }
                unwait(*t);
                make_ready(*t);
                break;
            }
        }

        void note_peak() noexcept { peak_tracked_ = std::max(peak_tracked_, tracked_entries()); }

        EngineConfig cfg_;
        PeerId self_;
        Transport& transport_;
        UnvalidatedPool& pool_;
        Bouncer bouncer_;
        InsertedFn inserted_;
        RemovedFn removed_;
        std::map<PeerId, PeerState> peers_;
        std::map<MessageId, DownloadTask> tasks_;
        std::map<std::uint64_t, MessageId> ready_;
        std::set<MessageId> bounced_;
        std::set<MessageId> deferred_;
        std::uint64_t next_seq_ = 1;
        std::size_t occupied_entries_ = 0;
        std::size_t peak_tracked_ = 0;
        DownloadStats stats_;
    };
} // namespace abcast
