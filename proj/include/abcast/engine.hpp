#pragma once

// One node's networking layer: send side, receive side and client driver wired to
// a transport. An Engine lives for one incarnation of a node; after a crash a new
// one is built over the surviving validated pool and client.

#include "abcast/download_manager.hpp"
#include "abcast/pools.hpp"
#include "abcast/replication_manager.hpp"
#include "abcast/transport.hpp"
#include "abcast/update_manager.hpp"
#include "abcast/wire.hpp"

#include <span>
#include <vector>

namespace abcast
{
    struct EngineBehavior
    {
        // false: pull requests are silently ignored.
        bool serve_pulls = true;
    };

    class Engine
    {
    public:
        // `members` lists every node including `self`.
        Engine(const EngineConfig& cfg, PeerId self, const std::vector<PeerId>& members, Transport& transport,
               Client& client, ValidatedPool& validated, std::uint64_t seed, EngineObserver* observer = nullptr,
               EngineBehavior behavior = {})
            : cfg_(validated_config(cfg)), self_(self), transport_(transport), client_(client),
              validated_(validated), observer_(observer), behavior_(behavior),
              unvalidated_(cfg_.unvalidated_bound(members.size())),
              replication_(cfg_, self, members, transport, seed),
              downloads_(cfg_, self, members, transport, unvalidated_,
                         [&client](const Advert& a, TimePoint now) { return client.wants(a, now); }),
              updates_(cfg_, self, client, validated, unvalidated_, replication_, transport, observer)
        {
            downloads_.on_inserted([this](const Message& m) {
                if (observer_)
                    observer_->on_delivered(self_, m, transport_.now());
                updates_.notify_inserted(m.id());
            });
            downloads_.on_removed([this](const MessageId& id) { updates_.notify_removed(id); });
        }

        Engine(const Engine&) = delete;
        Engine& operator=(const Engine&) = delete;

        void start(bool restarted = false)
        {
            if (restarted)
            {
                client_.on_restart(transport_.now());
                updates_.replay_validated();
            }
            schedule_tick();
            schedule_conn_check();
        }

        void on_frame(PeerId from, ConnectionId conn, std::span<const std::byte> bytes)
        {
            auto frame = wire::decode(bytes);
            if (!frame)
            {
                downloads_.record_violation();
                return;
            }
            std::visit([&](auto& f) { handle(from, conn, f); }, *frame);
        }

        [[nodiscard]] const EngineConfig& config() const noexcept { return cfg_; }
        [[nodiscard]] PeerId self() const noexcept { return self_; }
        [[nodiscard]] ReplicationManager& replication() noexcept { return replication_; }
        [[nodiscard]] const ReplicationManager& replication() const noexcept { return replication_; }
        [[nodiscard]] DownloadManager& downloads() noexcept { return downloads_; }
        [[nodiscard]] const DownloadManager& downloads() const noexcept { return downloads_; }
        [[nodiscard]] UpdateManager& updates() noexcept { return updates_; }
        [[nodiscard]] const UpdateManager& updates() const noexcept { return updates_; }
        [[nodiscard]] UnvalidatedPool& unvalidated() noexcept { return unvalidated_; }
        [[nodiscard]] const ValidatedPool& validated() const noexcept { return validated_; }

    private:
        static EngineConfig validated_config(EngineConfig cfg)
        {
            cfg.validate();
            return cfg;
        }

        void handle(PeerId from, ConnectionId conn, wire::WireUpdate& u)
        {
            SlotUpdate update{from, u.slot, u.version, AdvertOnly{Advert{u.id, u.size}}};
            if (u.payload)
            {
                if (u.payload->size() > cfg_.max_message_size)
                {
                    downloads_.record_violation();
                    return;
                }
                Message m(std::move(*u.payload));
                if (m.id() != u.id)
                {
                    downloads_.record_violation();
                    return;
                }
                update.content = FullMessage{std::move(m)};
            }
            downloads_.handle_slot_update(conn, update);
            downloads_.drive_downloads();
        }

        void handle(PeerId from, ConnectionId conn, wire::PullRequest& p)
        {
            downloads_.observe_connection(from, conn);
            if (!behavior_.serve_pulls)
                return;
            downloads_.serve_pull(from, p.id, [this](const MessageId& id) { return validated_.find(id); });
        }

        void handle(PeerId from, ConnectionId conn, wire::PullResponse& p)
        {
            downloads_.observe_connection(from, conn);
            downloads_.on_pull_response(from, p.id, std::move(p.payload));
        }

        void handle(PeerId from, ConnectionId conn, wire::PullRefusal& p)
        {
            downloads_.observe_connection(from, conn);
            downloads_.on_pull_refused(from, p.id);
        }

        void schedule_tick()
        {
            transport_.schedule(cfg_.tick_interval, [this] {
                updates_.on_tick();
                downloads_.on_tick();
                schedule_tick();
            });
        }

        void schedule_conn_check()
        {
            transport_.schedule(cfg_.conn_check_period, [this] {
                for (auto peer : replication_.peers())
                {
                    if (!transport_.connected(peer))
                        continue;
                    auto id = transport_.connection_id(peer);
                    downloads_.observe_connection(peer, id);
                    replication_.on_conn_id_change(peer, id);
                }
                schedule_conn_check();
            });
        }

        EngineConfig cfg_;
        PeerId self_;
        Transport& transport_;
        Client& client_;
        ValidatedPool& validated_;
        EngineObserver* observer_;
        EngineBehavior behavior_;
        UnvalidatedPool unvalidated_;
        ReplicationManager replication_;
        DownloadManager downloads_;
        UpdateManager updates_;
    };
} // namespace abcast
