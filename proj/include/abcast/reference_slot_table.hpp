#pragma once

// Minimal slot-table abortable broadcast over authenticated unreliable channels.
//
// One send-side table per node and one receive-side table per peer. A broadcast
// takes the lowest free slot under a fresh global version; an abort frees the slot
// under another fresh version and sends nothing. Receivers deliver whenever an
// update carries a version newer than what they hold for (sender, slot), and
// senders periodically resend the current content of every occupied slot.
//
// Used standalone and as the oracle the full engine is checked against.

#include "abcast/core_types.hpp"

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace abcast::reference
{
    struct SendSlot
    {
        Version version{};
        std::optional<Message> msg;

        [[nodiscard]] bool is_free() const noexcept { return !msg.has_value(); }
    };

    struct ReceiveSlot
    {
        Version version{};
        std::optional<Message> msg;
    };

    struct Outbound
    {
        PeerId to;
        SlotUpdate update;
    };

    struct Placement
    {
        SlotIndex slot;
        Version version;

        friend bool operator==(const Placement&, const Placement&) = default;
    };

    class SendSideTable
    {
    public:
        explicit SendSideTable(std::size_t capacity) : slots_(capacity)
        {
            if (capacity == 0)
            {
                throw Error(ErrorCode::InvalidConfig, "slot table capacity must be positive");
            }
        }

        Placement broadcast(const Message& m)
        {
            if (find(m.id()))
            {
                throw Error(ErrorCode::Duplicate, "message " + m.id().short_hex() + " already occupies a slot");
            }
            auto it = std::find_if(slots_.begin(), slots_.end(), [](const SendSlot& s) { return s.is_free(); });
            if (it == slots_.end())
            {
                throw Error(ErrorCode::Capacity, "all " + std::to_string(slots_.size()) + " send slots are occupied");
            }
            version_ = Version{version_.value + 1};
            *it = SendSlot{version_, m};
            return Placement{SlotIndex{static_cast<std::uint32_t>(std::distance(slots_.begin(), it) + 1)}, version_};
        }

        Placement abort(const MessageId& id)
        {
            auto slot = find(id);
            if (!slot)
            {
                throw Error(ErrorCode::UnknownMessage, "message " + id.short_hex() + " is not in the send table");
            }
            version_ = Version{version_.value + 1};
            slots_[slot->value - 1] = SendSlot{version_, std::nullopt};
            return Placement{*slot, version_};
        }

        [[nodiscard]] std::optional<SlotIndex> find(const MessageId& id) const
        {
            for (std::size_t i = 0; i < slots_.size(); ++i)
            {
                if (slots_[i].msg && slots_[i].msg->id() == id)
                {
                    return SlotIndex{static_cast<std::uint32_t>(i + 1)};
                }
            }
            return std::nullopt;
        }

        [[nodiscard]] const SendSlot& slot(SlotIndex k) const { return slots_.at(k.value - 1); }
        [[nodiscard]] Version version() const noexcept { return version_; }
        [[nodiscard]] std::size_t capacity() const noexcept { return slots_.size(); }

        [[nodiscard]] std::size_t occupied() const noexcept
        {
            return static_cast<std::size_t>(
                std::count_if(slots_.begin(), slots_.end(), [](const SendSlot& s) { return !s.is_free(); }));
        }

        // Occupied versions are pairwise distinct and no greater than the global version.
        [[nodiscard]] bool invariants_hold() const
        {
            std::vector<std::uint64_t> versions;
            for (const auto& s : slots_)
            {
                if (s.version > version_)
                    return false;
                if (s.msg)
                    versions.push_back(s.version.value);
            }
            std::sort(versions.begin(), versions.end());
            return std::adjacent_find(versions.begin(), versions.end()) == versions.end() &&
                   versions.size() <= slots_.size();
        }

    private:
        Version version_{};
        std::vector<SendSlot> slots_;
    };

    enum class ReceiveOutcome : std::uint8_t
    {
        Delivered,
        Stale,
        Violation,
    };

    class ReceiveSideTable
    {
    public:
        explicit ReceiveSideTable(std::size_t capacity) : capacity_(capacity) {}

        ReceiveOutcome on_receive(PeerId sender, SlotIndex slot, Version v, const Message& m)
        {
            if (slot.value < 1 || slot.value > capacity_)
            {
                ++violations_;
                return ReceiveOutcome::Violation;
            }
            auto& table = tables_[sender];
            if (table.empty())
            {
                table.resize(capacity_);
            }
            auto& entry = table[slot.value - 1];
            if (v <= entry.version)
            {
                return ReceiveOutcome::Stale;
            }
            entry = ReceiveSlot{v, m};
            return ReceiveOutcome::Delivered;
        }

        [[nodiscard]] const ReceiveSlot* slot(PeerId sender, SlotIndex k) const
        {
            auto it = tables_.find(sender);
            if (it == tables_.end() || k.value < 1 || k.value > capacity_)
                return nullptr;
            return &it->second[k.value - 1];
        }

        [[nodiscard]] std::size_t entries(PeerId sender) const
        {
            auto it = tables_.find(sender);
            if (it == tables_.end())
                return 0;
            return static_cast<std::size_t>(std::count_if(it->second.begin(), it->second.end(),
                                                          [](const ReceiveSlot& s) { return s.msg.has_value(); }));
        }

        [[nodiscard]] std::size_t capacity() const noexcept { return capacity_; }
        [[nodiscard]] std::size_t violations() const noexcept { return violations_; }

    private:
        std::size_t capacity_;
        std::size_t violations_ = 0;
        std::map<PeerId, std::vector<ReceiveSlot>> tables_;
    };

    // One participant: a send-side table plus one receive-side table per peer.
    class ReferenceNode
    {
    public:
        ReferenceNode(PeerId self, std::vector<PeerId> peers, std::size_t capacity)
            : self_(self), peers_(std::move(peers)), send_(capacity), receive_(capacity)
        {
            peers_.erase(std::remove(peers_.begin(), peers_.end(), self_), peers_.end());
        }

        std::vector<Outbound> broadcast(const Message& m)
        {
            auto placed = send_.broadcast(m);
            std::vector<Outbound> out;
            out.reserve(peers_.size());
            for (auto peer : peers_)
            {
                out.push_back(Outbound{peer, SlotUpdate{self_, placed.slot, placed.version, FullMessage{m}}});
            }
            return out;
        }

        Placement abort(const MessageId& id) { return send_.abort(id); }

        // Returns the message to deliver, if any.
        std::optional<Message> on_receive(PeerId sender, SlotIndex slot, Version v, const Message& m)
        {
            if (receive_.on_receive(sender, slot, v, m) == ReceiveOutcome::Delivered)
            {
                return m;
            }
            return std::nullopt;
        }

        [[nodiscard]] std::vector<Outbound> retransmit() const
        {
            std::vector<Outbound> out;
            for (auto peer : peers_)
            {
                for (std::uint32_t k = 1; k <= send_.capacity(); ++k)
                {
                    const auto& s = send_.slot(SlotIndex{k});
                    if (s.msg)
                    {
                        out.push_back(Outbound{peer, SlotUpdate{self_, SlotIndex{k}, s.version, FullMessage{*s.msg}}});
                    }
                }
            }
            return out;
        }

        [[nodiscard]] PeerId id() const noexcept { return self_; }
        [[nodiscard]] const std::vector<PeerId>& peers() const noexcept { return peers_; }
        [[nodiscard]] const SendSideTable& send_table() const noexcept { return send_; }
        [[nodiscard]] const ReceiveSideTable& receive_table() const noexcept { return receive_; }

    private:
        PeerId self_;
        std::vector<PeerId> peers_;
        SendSideTable send_;
        ReceiveSideTable receive_;
    };
} // namespace abcast::reference
