#pragma once

// Drives the client and applies its change actions.
//
// The client is driven on every engine tick and, separately, once per batch of
// unvalidated-pool changes. Actions apply in list order; each accepted action
// updates the validated pool and the send side together, so the two never
// diverge.

#include "abcast/pools.hpp"
#include "abcast/replication_manager.hpp"
#include "abcast/transport.hpp"

#include <span>
#include <vector>

namespace abcast
{
    struct UpdateStats
    {
        std::uint64_t drive_calls = 0;
        std::uint64_t tick_drives = 0;
        std::uint64_t delta_drives = 0;
        std::uint64_t actions_applied = 0;
        std::uint64_t actions_rejected = 0;
    };

    class UpdateManager
    {
    public:
        UpdateManager(const EngineConfig& cfg, PeerId self, Client& client, ValidatedPool& validated,
                      UnvalidatedPool& unvalidated, ReplicationManager& replication, Transport& transport,
                      EngineObserver* observer = nullptr)
            : cfg_(cfg), self_(self), client_(client), validated_(validated), unvalidated_(unvalidated),
              replication_(replication), transport_(transport), observer_(observer)
        {
        }

        UpdateManager(const UpdateManager&) = delete;
        UpdateManager& operator=(const UpdateManager&) = delete;

        // Re-announces whatever the validated pool held before a restart, without telling
        // the observer: these messages were already added once.
        void replay_validated()
        {
            std::vector<ChangeAction> actions;
            for (const auto& [id, e] : validated_)
                actions.push_back(ChangeAction::add(e.message, e.push_directly));
            replication_.apply_change_actions(actions);
        }

        void on_tick()
        {
            ++stats_.tick_drives;
            drive(DriveTrigger{DriveTrigger::Kind::Tick, transport_.now(), {}});
        }

        void notify_inserted(const MessageId& id)
        {
            pending_.inserted.push_back(id);
            schedule_flush();
        }

        void notify_removed(const MessageId& id)
        {
            pending_.removed.push_back(id);
            schedule_flush();
        }

        // Applies actions in order; returns how many were accepted.
        std::size_t apply(std::span<const ChangeAction> actions)
        {
            std::size_t accepted = 0;
            for (const auto& action : actions)
            {
                auto code = check(action);
                if (!code)
                {
                    auto outcome = replication_.apply_change_actions(std::span(&action, 1)).front();
                    code = outcome.error;
                }
                if (code)
                {
                    ++stats_.actions_rejected;
                    client_.on_rejected(action, *code);
                    continue;
                }
                commit(action);
                ++accepted;
                ++stats_.actions_applied;
            }
            return accepted;
        }

        [[nodiscard]] const UpdateStats& stats() const noexcept { return stats_; }

    private:
        [[nodiscard]] std::optional<ErrorCode> check(const ChangeAction& action) const
        {
            if (const auto* add = std::get_if<AddAction>(&action.kind))
            {
                if (add->message.size() > cfg_.max_message_size)
                    return ErrorCode::MessageTooLarge;
                if (validated_.contains(add->message.id()))
                    return ErrorCode::Duplicate;
                if (validated_.full())
                    return ErrorCode::Capacity;
                return std::nullopt;
            }
            if (!validated_.contains(std::get<RemoveAction>(action.kind).id))
                return ErrorCode::UnknownMessage;
            return std::nullopt;
        }

        void commit(const ChangeAction& action)
        {
            auto now = transport_.now();
            if (const auto* add = std::get_if<AddAction>(&action.kind))
            {
                validated_.insert(add->message, add->push_directly);
                if (observer_)
                    observer_->on_validated_add(self_, add->message, now);
                return;
            }
            const auto& id = std::get<RemoveAction>(action.kind).id;
            validated_.erase(id);
            if (observer_)
                observer_->on_validated_remove(self_, id, now);
        }

        void schedule_flush()
        {
            if (flush_scheduled_)
                return;
            flush_scheduled_ = true;
            transport_.schedule(Duration::zero(), [this] {
                flush_scheduled_ = false;
                if (pending_.empty())
                    return;
                ++stats_.delta_drives;
                DriveTrigger trigger{DriveTrigger::Kind::PoolUpdate, transport_.now(), std::move(pending_)};
                pending_ = {};
                drive(trigger);
            });
        }

        void drive(const DriveTrigger& trigger)
        {
            ++stats_.drive_calls;
            if (observer_)
                observer_->on_drive(self_, trigger.kind, trigger.now);
            auto actions = client_.drive(validated_, unvalidated_, trigger);
            apply(actions);
        }

        EngineConfig cfg_;
        PeerId self_;
        Client& client_;
        ValidatedPool& validated_;
        UnvalidatedPool& unvalidated_;
        ReplicationManager& replication_;
        Transport& transport_;
        EngineObserver* observer_;
        PoolDelta pending_;
        bool flush_scheduled_ = false;
        UpdateStats stats_;
    };
} // namespace abcast
