#pragma once

// Benign mock client used by every scenario.
//
// Adds come due at start + (k + 1) / rate and are emitted on the first drive at or
// after that instant. Payloads are a pure function of (seed, origin, sequence,
// size), so any node can reproduce the id of any other node's k-th message.

#include "abcast/core_types.hpp"
#include "abcast/pools.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace abcast
{
    struct MessageOrigin
    {
        PeerId origin;
        std::uint64_t seq = 0;

        friend auto operator<=>(const MessageOrigin&, const MessageOrigin&) = default;
    };

    // Simulation-wide record of who generated which message. Written by mock clients as
    // they create payloads; read by bouncers and metrics.
    class MessageRegistry
    {
    public:
        void record(const MessageId& id, MessageOrigin origin) { origins_.emplace(id, origin); }

        [[nodiscard]] std::optional<MessageOrigin> origin(const MessageId& id) const
        {
            auto it = origins_.find(id);
            if (it == origins_.end())
                return std::nullopt;
            return it->second;
        }

        [[nodiscard]] std::size_t size() const noexcept { return origins_.size(); }

    private:
        std::map<MessageId, MessageOrigin> origins_;
    };

    struct BouncerConfig
    {
        enum class Kind : std::uint8_t
        {
            AcceptAll,
            RejectSet,
            AcceptAfter,
        };

        Kind kind = Kind::AcceptAll;
        // RejectSet: messages never wanted.
        std::vector<MessageOrigin> rejected;
        // AcceptAfter: everything is rejected before this instant.
        TimePoint accept_after{};

        friend bool operator==(const BouncerConfig&, const BouncerConfig&) = default;

        // Config-level verdict, independent of what the client already holds.
        [[nodiscard]] Verdict verdict(std::optional<MessageOrigin> origin, TimePoint now) const
        {
            switch (kind)
            {
            case Kind::AcceptAll:
                return Verdict::Accept;
            case Kind::RejectSet:
                if (origin && std::find(rejected.begin(), rejected.end(), *origin) != rejected.end())
                    return Verdict::RejectForever;
                return Verdict::Accept;
            case Kind::AcceptAfter:
                return now >= accept_after ? Verdict::Accept : Verdict::Reject;
            }
            return Verdict::Accept;
        }
    };

    struct MockClientConfig
    {
        // Cycled by sequence number; one entry means a fixed size.
        std::vector<std::size_t> message_sizes{1024};
        double rate_per_s = 0.0;
        TimePoint start{};
        std::optional<TimePoint> stop;
        std::optional<std::uint64_t> max_messages;
        std::optional<Duration> abort_after;
        // Every k-th message (k > 0) asks for direct push regardless of size.
        std::uint32_t push_every = 0;
        // Re-advertise every delivered message by adding it to the validated pool.
        bool relay = false;
        // Drop delivered messages from the unvalidated pool once seen.
        bool consume = false;
        BouncerConfig bouncer;

        friend bool operator==(const MockClientConfig&, const MockClientConfig&) = default;

        void validate(std::size_t capacity) const
        {
            if (message_sizes.empty())
                throw Error(ErrorCode::InvalidConfig, "message_sizes must not be empty");
            if (rate_per_s < 0.0 || !std::isfinite(rate_per_s))
                throw Error(ErrorCode::InvalidConfig, "rate must be a non-negative number");
            if (abort_after && *abort_after <= Duration::zero())
                throw Error(ErrorCode::InvalidConfig, "abort_after must be positive");
            if (rate_per_s > 0.0 && abort_after && !relay)
            {
                // Steady state holds ceil(rate * lifetime) own messages at most.
                auto lifetime_s = std::chrono::duration<double>(*abort_after).count();
                if (std::ceil(rate_per_s * lifetime_s) > static_cast<double>(capacity))
                    throw Error(ErrorCode::InvalidConfig, "rate * abort_after exceeds slot_capacity");
            }
        }
    };

    // Deterministic payload: a readable header followed by seeded filler bytes.
    inline Bytes mock_payload(std::uint64_t seed, MessageOrigin origin, std::size_t size)
    {
        std::string header = "abcast:" + std::to_string(origin.origin.value) + ":" + std::to_string(origin.seq) + ":";
        Bytes out(size);
        std::size_t i = 0;
        for (; i < size && i < header.size(); ++i)
            out[i] = static_cast<std::byte>(header[i]);
        std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (origin.origin.value + 1)) ^ (origin.seq << 20));
        while (i < size)
        {
            auto word = rng();
            for (int b = 0; b < 8 && i < size; ++b, ++i)
                out[i] = static_cast<std::byte>(word >> (8 * b));
        }
        return out;
    }

    struct MockClientStats
    {
        std::uint64_t generated = 0;
        std::uint64_t aborted = 0;
        std::uint64_t relayed = 0;
        std::uint64_t rejected = 0;
        std::uint64_t capacity_errors = 0;
        std::uint64_t skipped_on_restart = 0;
    };

    class MockClient final : public Client
    {
    public:
        MockClient(PeerId self, MockClientConfig cfg, std::uint64_t seed, MessageRegistry* registry = nullptr)
            : self_(self), cfg_(std::move(cfg)), seed_(seed), registry_(registry)
        {
        }

        std::vector<ChangeAction> drive(const ValidatedPool& validated, UnvalidatedPool& unvalidated,
                                        const DriveTrigger& trigger) override
        {
            std::vector<ChangeAction> actions;
            for (const auto& id : trigger.delta.inserted)
            {
                const Message* m = unvalidated.find(id);
                if (!m)
                    continue;
                seen_.insert(id);
                if (cfg_.relay && !validated.contains(id) && !owned_.contains(id))
                {
                    owned_.emplace(id, trigger.now);
                    actions.push_back(ChangeAction::add(*m));
                    ++stats_.relayed;
                }
                if (cfg_.consume)
                    unvalidated.erase(id);
            }
            if (trigger.kind == DriveTrigger::Kind::Tick)
            {
                emit_aborts(trigger.now, actions);
                emit_adds(trigger.now, actions);
            }
            return actions;
        }

        [[nodiscard]] Verdict wants(const Advert& advert, TimePoint now) const override
        {
            if (seen_.contains(advert.id) || owned_.contains(advert.id))
                return Verdict::RejectForever;
            return cfg_.bouncer.verdict(registry_ ? registry_->origin(advert.id) : std::nullopt, now);
        }

        void on_rejected(const ChangeAction& action, ErrorCode code) override
        {
            ++stats_.rejected;
            if (code == ErrorCode::Capacity)
                ++stats_.capacity_errors;
            last_error_ = code;
            if (const auto* add = std::get_if<AddAction>(&action.kind))
                owned_.erase(add->message.id());
        }

        // Adds that fell due while the node was down are skipped, not replayed.
        void on_restart(TimePoint now) override
        {
            auto due = due_count(now);
            if (due > next_seq_)
            {
                stats_.skipped_on_restart += due - next_seq_;
                next_seq_ = due;
            }
        }

        // Message number k of this client.
        [[nodiscard]] Message message(std::uint64_t k) const
        {
            auto size = cfg_.message_sizes[k % cfg_.message_sizes.size()];
            return Message(mock_payload(seed_, MessageOrigin{self_, k}, size));
        }

        [[nodiscard]] std::uint64_t due_count(TimePoint now) const
        {
            if (cfg_.rate_per_s <= 0.0 || now < cfg_.start)
                return 0;
            auto end = cfg_.stop ? std::min(now, *cfg_.stop) : now;
            auto elapsed = std::chrono::duration<double>(end - cfg_.start).count();
            // Due times are (k + 1) / rate; the small epsilon absorbs rounding at exact instants.
            auto due = static_cast<std::uint64_t>(std::floor(elapsed * cfg_.rate_per_s + 1e-9));
            if (cfg_.max_messages)
                due = std::min(due, *cfg_.max_messages);
            return due;
        }

        [[nodiscard]] const MockClientConfig& config() const noexcept { return cfg_; }
        [[nodiscard]] const MockClientStats& stats() const noexcept { return stats_; }
        [[nodiscard]] std::optional<ErrorCode> last_error() const noexcept { return last_error_; }
        [[nodiscard]] std::size_t owned() const noexcept { return owned_.size(); }
        [[nodiscard]] bool has_seen(const MessageId& id) const { return seen_.contains(id); }

    private:
        void emit_aborts(TimePoint now, std::vector<ChangeAction>& actions)
        {
            if (!cfg_.abort_after)
                return;
            for (auto it = owned_.begin(); it != owned_.end();)
            {
                if (it->second + *cfg_.abort_after <= now)
                {
                    actions.push_back(ChangeAction::remove(it->first));
                    ++stats_.aborted;
                    it = owned_.erase(it);
                }
                else
                {
                    ++it;
                }
            }
        }

        void emit_adds(TimePoint now, std::vector<ChangeAction>& actions)
        {
            auto due = due_count(now);
            while (next_seq_ < due)
            {
                auto k = next_seq_++;
                auto m = message(k);
                if (registry_)
                    registry_->record(m.id(), MessageOrigin{self_, k});
                bool push = cfg_.push_every > 0 && (k + 1) % cfg_.push_every == 0;
                owned_.emplace(m.id(), now);
                actions.push_back(ChangeAction::add(std::move(m), push));
                ++stats_.generated;
            }
        }

        PeerId self_;
        MockClientConfig cfg_;
        std::uint64_t seed_;
        MessageRegistry* registry_;
        std::uint64_t next_seq_ = 0;
        // Messages this client placed in the validated pool, with the time it did so.
        std::map<MessageId, TimePoint> owned_;
        std::set<MessageId> seen_;
        std::optional<ErrorCode> last_error_;
        MockClientStats stats_;
    };
} // namespace abcast
