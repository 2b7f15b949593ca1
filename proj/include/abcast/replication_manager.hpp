#pragma once

// Send side of the engine.
//
// Maps validated-pool change actions onto a send slot table and keeps one send
// task per (peer, slot). A task carries the latest content of its slot to one peer
// over the reliable transport; failed tasks retry after a jittered exponential
// backoff, and a changed connection id to a peer replaces all of that peer's
// tasks with adverts for the occupied slots. Freed slots send nothing.

#include "abcast/core_types.hpp"
#include "abcast/transport.hpp"
#include "abcast/wire.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <span>
#include <vector>

namespace abcast
{
    // min(cap, base * 2^attempts) scaled by jitter in [0.5, 1.5); `unit` is uniform in [0, 1).
    inline Duration backoff_delay(const EngineConfig& cfg, std::uint32_t attempts, double unit) noexcept
    {
        auto base = static_cast<double>(cfg.backoff_base.count());
        auto cap = static_cast<double>(cfg.backoff_cap.count());
        double raw = attempts >= 62 ? cap : std::min(cap, base * std::ldexp(1.0, static_cast<int>(attempts)));
        return Duration(static_cast<Duration::rep>(raw * (0.5 + unit)));
    }

    enum class TaskState : std::uint8_t
    {
        Queued,
        InFlight,
        Delivered,
        Backoff,
        // Baseline mode only: the single attempt failed and is not retried.
        Abandoned,
    };

    struct SendTask
    {
        PeerId peer;
        SlotIndex slot;
        Version version;
        SlotUpdate content;
        TaskState state = TaskState::Queued;
        std::uint32_t attempts = 0;
        std::uint64_t generation = 0;
    };

    struct ApplyOutcome
    {
        std::optional<ErrorCode> error;
        SlotIndex slot{};
        Version version{};

        [[nodiscard]] bool ok() const noexcept { return !error.has_value(); }
    };

    struct ReplicationStats
    {
        std::uint64_t frames_sent = 0;
        std::uint64_t failures = 0;
        std::uint64_t retries = 0;
        std::uint64_t stale_completions = 0;
        std::uint64_t conn_changes = 0;
        std::uint64_t abandoned = 0;
    };

    class ReplicationManager
    {
    public:
        struct Slot
        {
            Version version{};
            std::optional<Message> msg;
            bool push_directly = false;
        };

        ReplicationManager(const EngineConfig& cfg, PeerId self, std::vector<PeerId> peers, Transport& transport,
                           std::uint64_t seed)
            : cfg_(cfg), self_(self), peers_(std::move(peers)), transport_(transport), rng_(seed),
              slots_(cfg.slot_capacity)
        {
            cfg_.validate();
            peers_.erase(std::remove(peers_.begin(), peers_.end(), self_), peers_.end());
            per_peer_.resize(peers_.size());
            for (std::size_t i = 0; i < peers_.size(); ++i)
            {
                index_.emplace(peers_[i], i);
                per_peer_[i].tasks.resize(cfg_.slot_capacity);
                per_peer_[i].last_seen_conn = transport_.connection_id(peers_[i]);
            }
        }

        ReplicationManager(const ReplicationManager&) = delete;
        ReplicationManager& operator=(const ReplicationManager&) = delete;

        // Mutates state and enqueues work only; frames leave from a zero-delay pump event.
        std::vector<ApplyOutcome> apply_change_actions(std::span<const ChangeAction> actions)
        {
            std::vector<ApplyOutcome> out;
            out.reserve(actions.size());
            for (const auto& action : actions)
            {
                if (const auto* add = std::get_if<AddAction>(&action.kind))
                    out.push_back(add_message(add->message, add->push_directly));
                else
                    out.push_back(remove_message(std::get<RemoveAction>(action.kind).id));
            }
            return out;
        }

        // A newer connection id means the peer may have missed updates: resend adverts for
        // every occupied slot. Stale or repeated ids are ignored.
        void on_conn_id_change(PeerId peer, ConnectionId id)
        {
            auto* p = find_peer(peer);
            if (!p || id <= p->last_seen_conn)
                return;
            p->last_seen_conn = id;
            if (cfg_.mode == EngineMode::NoRetransmitBaseline)
                return;
            ++stats_.conn_changes;
            auto pi = index_.at(peer);
            for (auto& t : p->tasks)
                t.reset();
            p->queue.clear();
            for (std::uint32_t k = 1; k <= slots_.size(); ++k)
            {
                if (slots_[k - 1].msg)
                    spawn(pi, SlotIndex{k}, true);
            }
        }

        void check_connections()
        {
            for (auto peer : peers_)
            {
                if (transport_.connected(peer))
                    on_conn_id_change(peer, transport_.connection_id(peer));
            }
        }

        [[nodiscard]] const Slot& slot(SlotIndex k) const { return slots_.at(k.value - 1); }
        [[nodiscard]] Version version() const noexcept { return version_; }
        [[nodiscard]] std::size_t capacity() const noexcept { return slots_.size(); }

        [[nodiscard]] std::size_t occupied() const noexcept
        {
            return static_cast<std::size_t>(
                std::count_if(slots_.begin(), slots_.end(), [](const Slot& s) { return s.msg.has_value(); }));
        }

        [[nodiscard]] std::optional<SlotIndex> slot_of(const MessageId& id) const
        {
            for (std::size_t i = 0; i < slots_.size(); ++i)
            {
                if (slots_[i].msg && slots_[i].msg->id() == id)
                    return SlotIndex{static_cast<std::uint32_t>(i + 1)};
            }
            return std::nullopt;
        }

        [[nodiscard]] const SendTask* task(PeerId peer, SlotIndex k) const
        {
            auto* p = find_peer(peer);
            if (!p || k.value < 1 || k.value > slots_.size())
                return nullptr;
            const auto& t = p->tasks[k.value - 1];
            return t ? &*t : nullptr;
        }

        [[nodiscard]] std::size_t live_tasks() const noexcept
        {
            std::size_t n = 0;
            for (const auto& p : per_peer_)
                n += static_cast<std::size_t>(
                    std::count_if(p.tasks.begin(), p.tasks.end(), [](const auto& t) { return t.has_value(); }));
            return n;
        }

        [[nodiscard]] std::size_t in_flight(PeerId peer) const
        {
            auto* p = find_peer(peer);
            return p ? p->in_flight : 0;
        }

        [[nodiscard]] ConnectionId last_seen_conn(PeerId peer) const
        {
            auto* p = find_peer(peer);
            return p ? p->last_seen_conn : ConnectionId{};
        }

        [[nodiscard]] const ReplicationStats& stats() const noexcept { return stats_; }
        [[nodiscard]] const std::vector<PeerId>& peers() const noexcept { return peers_; }

    private:
        struct PeerState
        {
            std::vector<std::optional<SendTask>> tasks;
            // generation -> slot, FIFO by spawn order; only queued tasks appear here.
            std::map<std::uint64_t, SlotIndex> queue;
            std::size_t in_flight = 0;
            ConnectionId last_seen_conn{};
        };

        PeerState* find_peer(PeerId peer)
        {
            auto it = index_.find(peer);
            return it == index_.end() ? nullptr : &per_peer_[it->second];
        }

        [[nodiscard]] const PeerState* find_peer(PeerId peer) const
        {
            auto it = index_.find(peer);
            return it == index_.end() ? nullptr : &per_peer_[it->second];
        }

        ApplyOutcome add_message(const Message& m, bool push_directly)
        {
            if (m.size() > cfg_.max_message_size)
                return ApplyOutcome{ErrorCode::MessageTooLarge};
            if (slot_of(m.id()))
                return ApplyOutcome{ErrorCode::Duplicate};
            auto it = std::find_if(slots_.begin(), slots_.end(), [](const Slot& s) { return !s.msg; });
            if (it == slots_.end())
                return ApplyOutcome{ErrorCode::Capacity};
            version_ = Version{version_.value + 1};
            *it = Slot{version_, m, push_directly};
            SlotIndex k{static_cast<std::uint32_t>(std::distance(slots_.begin(), it) + 1)};
            bool advert_only = !(push_directly || m.size() <= cfg_.push_threshold);
            for (std::size_t pi = 0; pi < per_peer_.size(); ++pi)
                spawn(pi, k, advert_only);
            return ApplyOutcome{std::nullopt, k, version_};
        }

        ApplyOutcome remove_message(const MessageId& id)
        {
            auto k = slot_of(id);
            if (!k)
                return ApplyOutcome{ErrorCode::UnknownMessage};
            version_ = Version{version_.value + 1};
            slots_[k->value - 1] = Slot{version_, std::nullopt, false};
            for (auto& p : per_peer_)
                terminate(p, *k);
            return ApplyOutcome{std::nullopt, *k, version_};
        }

        void terminate(PeerState& p, SlotIndex k)
        {
            auto& t = p.tasks[k.value - 1];
            if (t && t->state == TaskState::Queued)
                p.queue.erase(t->generation);
            t.reset();
        }

        void spawn(std::size_t pi, SlotIndex k, bool advert_only)
        {
            auto& p = per_peer_[pi];
            terminate(p, k);
            const auto& s = slots_[k.value - 1];
            SlotUpdate content{self_, k, s.version, FullMessage{*s.msg}};
            if (advert_only)
                content.content = AdvertOnly{Advert{s.msg->id(), s.msg->size()}};
            auto gen = next_generation_++;
            p.tasks[k.value - 1] = SendTask{peers_[pi], k, s.version, std::move(content), TaskState::Queued, 0, gen};
            p.queue.emplace(gen, k);
            schedule_pump();
        }

        void schedule_pump()
        {
            if (pump_scheduled_)
                return;
            pump_scheduled_ = true;
            transport_.schedule(Duration::zero(), [this] {
                pump_scheduled_ = false;
                pump();
            });
        }

        // Drains queued tasks, up to the per-peer stream cap, rotating the starting peer.
        void pump()
        {
            if (per_peer_.empty())
                return;
            auto start = pump_cursor_++ % per_peer_.size();
            for (std::size_t step = 0; step < per_peer_.size(); ++step)
            {
                auto pi = (start + step) % per_peer_.size();
                auto& p = per_peer_[pi];
                while (p.in_flight < cfg_.max_concurrent_streams_per_peer && !p.queue.empty())
                {
                    auto [gen, k] = *p.queue.begin();
                    p.queue.erase(p.queue.begin());
                    auto& t = p.tasks[k.value - 1];
                    if (!t || t->generation != gen || t->state != TaskState::Queued)
                        continue;
                    const auto& s = slots_[k.value - 1];
                    if (s.version != t->version)
                    {
                        t.reset();
                        continue;
                    }
                    t->state = TaskState::InFlight;
                    ++p.in_flight;
                    ++stats_.frames_sent;
                    transport_.send_frame(peers_[pi], wire::encode_update(t->content),
                                          [this, pi, k, gen](bool ok) { on_send_done(pi, k, gen, ok); });
                }
            }
        }

        void on_send_done(std::size_t pi, SlotIndex k, std::uint64_t gen, bool ok)
        {
            auto& p = per_peer_[pi];
            if (p.in_flight > 0)
                --p.in_flight;
            auto& t = p.tasks[k.value - 1];
            if (!t || t->generation != gen || t->state != TaskState::InFlight)
            {
                ++stats_.stale_completions;
            }
            else if (ok)
            {
                t->state = TaskState::Delivered;
            }
            else
            {
                on_task_failure(pi, *t);
            }
            if (!p.queue.empty())
                schedule_pump();
        }

        void on_task_failure(std::size_t pi, SendTask& t)
        {
            ++stats_.failures;
            if (slots_[t.slot.value - 1].version != t.version)
            {
                per_peer_[pi].tasks[t.slot.value - 1].reset();
                return;
            }
            if (cfg_.mode == EngineMode::NoRetransmitBaseline)
            {
                t.state = TaskState::Abandoned;
                ++stats_.abandoned;
                return;
            }
            auto delay = backoff_delay(cfg_, t.attempts, std::uniform_real_distribution<double>(0.0, 1.0)(rng_));
            ++t.attempts;
            t.state = TaskState::Backoff;
            auto k = t.slot;
            auto gen = t.generation;
            transport_.schedule(delay, [this, pi, k, gen] {
                auto& p = per_peer_[pi];
                auto& task = p.tasks[k.value - 1];
                if (!task || task->generation != gen || task->state != TaskState::Backoff)
                    return;
                if (slots_[k.value - 1].version != task->version)
                {
                    task.reset();
                    return;
                }
                ++stats_.retries;
                task->state = TaskState::Queued;
                p.queue.emplace(gen, k);
                schedule_pump();
            });
        }

        EngineConfig cfg_;
        PeerId self_;
        std::vector<PeerId> peers_;
        std::map<PeerId, std::size_t> index_;
        Transport& transport_;
        std::mt19937_64 rng_;
        Version version_{};
        std::vector<Slot> slots_;
        std::vector<PeerState> per_peer_;
        std::uint64_t next_generation_ = 1;
        std::size_t pump_cursor_ = 0;
        bool pump_scheduled_ = false;
        ReplicationStats stats_;
    };
} // namespace abcast
