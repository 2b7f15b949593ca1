#pragma once

#include "abcast/core_types.hpp"

#include <map>
#include <vector>

namespace abcast
{
    // Client-owned set of messages to broadcast. Survives crashes; bounded by C.
    class ValidatedPool
    {
    public:
        struct Entry
        {
            Message message;
            bool push_directly = false;
        };

        explicit ValidatedPool(std::size_t capacity) : capacity_(capacity) {}

        void insert(const Message& m, bool push_directly = false)
        {
            if (entries_.contains(m.id()))
                throw Error(ErrorCode::Duplicate, "message " + m.id().short_hex() + " already validated");
            if (entries_.size() >= capacity_)
                throw Error(ErrorCode::Capacity, "validated pool holds " + std::to_string(capacity_) + " messages");
            entries_.emplace(m.id(), Entry{m, push_directly});
        }

        void erase(const MessageId& id)
        {
            if (entries_.erase(id) == 0)
                throw Error(ErrorCode::UnknownMessage, "message " + id.short_hex() + " is not validated");
        }

        [[nodiscard]] const Message* find(const MessageId& id) const
        {
            auto it = entries_.find(id);
            return it == entries_.end() ? nullptr : &it->second.message;
        }

        [[nodiscard]] bool contains(const MessageId& id) const { return entries_.contains(id); }
        [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
        [[nodiscard]] std::size_t capacity() const noexcept { return capacity_; }
        [[nodiscard]] bool full() const noexcept { return entries_.size() >= capacity_; }

        [[nodiscard]] auto begin() const { return entries_.begin(); }
        [[nodiscard]] auto end() const { return entries_.end(); }

    private:
        std::size_t capacity_;
        std::map<MessageId, Entry> entries_;
    };

    // Engine-owned store of messages received from peers, pending client validation.
    class UnvalidatedPool
    {
    public:
        explicit UnvalidatedPool(std::size_t bound) : bound_(bound) {}

        // False when the pool is at its bound or already holds the id.
        bool insert(const Message& m)
        {
            if (entries_.size() >= bound_ || entries_.contains(m.id()))
                return false;
            bytes_ += m.size();
            entries_.emplace(m.id(), m);
            return true;
        }

        bool erase(const MessageId& id)
        {
            auto it = entries_.find(id);
            if (it == entries_.end())
                return false;
            bytes_ -= it->second.size();
            entries_.erase(it);
            return true;
        }

        [[nodiscard]] const Message* find(const MessageId& id) const
        {
            auto it = entries_.find(id);
            return it == entries_.end() ? nullptr : &it->second;
        }

        [[nodiscard]] bool contains(const MessageId& id) const { return entries_.contains(id); }
        [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
        [[nodiscard]] std::size_t bytes() const noexcept { return bytes_; }
        [[nodiscard]] std::size_t bound() const noexcept { return bound_; }

        [[nodiscard]] auto begin() const { return entries_.begin(); }
        [[nodiscard]] auto end() const { return entries_.end(); }

    private:
        std::size_t bound_;
        std::size_t bytes_ = 0;
        std::map<MessageId, Message> entries_;
    };

    enum class Verdict : std::uint8_t
    {
        Accept,
        // Not now; asked again on later ticks.
        Reject,
        // Never wanted; not asked again while the download task lives.
        RejectForever,
    };

    struct PoolDelta
    {
        std::vector<MessageId> inserted;
        std::vector<MessageId> removed;

        [[nodiscard]] bool empty() const noexcept { return inserted.empty() && removed.empty(); }
    };

    struct DriveTrigger
    {
        enum class Kind : std::uint8_t
        {
            Tick,
            PoolUpdate,
        };

        Kind kind = Kind::Tick;
        TimePoint now;
        PoolDelta delta;
    };

    // A client protocol as seen by the networking layer: a state machine over the two pools.
    class Client
    {
    public:
        virtual ~Client() = default;

        // Never blocks. Returned actions are applied to the validated pool in order.
        virtual std::vector<ChangeAction> drive(const ValidatedPool& validated, UnvalidatedPool& unvalidated,
                                                const DriveTrigger& trigger) = 0;

        // Bouncer: whether an advertised message is wanted right now.
        [[nodiscard]] virtual Verdict wants(const Advert& /*advert*/, TimePoint /*now*/) const
        {
            return Verdict::Accept;
        }

        virtual void on_rejected(const ChangeAction& /*action*/, ErrorCode /*code*/) {}

        // The networking layer came back after a crash.
        virtual void on_restart(TimePoint /*now*/) {}
    };

    // Optional tap on engine activity, used for metrics.
    class EngineObserver
    {
    public:
        virtual ~EngineObserver() = default;
        virtual void on_validated_add(PeerId /*node*/, const Message& /*m*/, TimePoint /*now*/) {}
        virtual void on_validated_remove(PeerId /*node*/, const MessageId& /*id*/, TimePoint /*now*/) {}
        virtual void on_delivered(PeerId /*node*/, const Message& /*m*/, TimePoint /*now*/) {}
        virtual void on_drive(PeerId /*node*/, DriveTrigger::Kind /*kind*/, TimePoint /*now*/) {}
    };
} // namespace abcast
