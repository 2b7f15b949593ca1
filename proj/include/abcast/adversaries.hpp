#pragma once

// Misbehaving nodes for the security scenarios. A SilentAdvertiser is an honest
// engine with pull serving switched off plus a relaying client, and a Crasher is
// a crash schedule; only the flooder and the equivocator need their own endpoints.

#include "abcast/core_types.hpp"
#include "abcast/sim_net.hpp"
#include "abcast/wire.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace abcast
{
    struct FlooderSpec
    {
        std::vector<PeerId> victims;
        double updates_per_second = 1000.0;
        // Share of updates aimed at slots beyond C. Spread evenly, not sampled.
        double violating_fraction = 0.0;
        TimePoint start{};
        std::optional<TimePoint> stop;
        Duration step = std::chrono::milliseconds(10);
        std::uint64_t advertised_size = 1024;

        friend bool operator==(const FlooderSpec&, const FlooderSpec&) = default;
    };

    // Generator state for fabricated slot updates aimed at one victim.
    class FloodPlan
    {
    public:
        FloodPlan(PeerId attacker, std::size_t capacity, const FlooderSpec& spec, std::uint64_t seed)
            : attacker_(attacker), capacity_(capacity), spec_(spec), rng_(seed)
        {
        }

        // Updates owed for the interval ending at `now`; in-range slots cycle 1..C with
        // strictly increasing versions, out-of-range slots are fresh each time.
        std::vector<SlotUpdate> flooder_step(TimePoint now)
        {
            std::vector<SlotUpdate> out;
            if (now < spec_.start)
                return out;
            auto end = spec_.stop ? std::min(now, *spec_.stop) : now;
            auto elapsed = std::chrono::duration<double>(end - spec_.start).count();
            auto owed = static_cast<std::uint64_t>(std::floor(elapsed * spec_.updates_per_second + 1e-9));
            while (emitted_ < owed)
            {
                auto i = emitted_++;
                bool violating = std::floor(static_cast<double>(i + 1) * spec_.violating_fraction) >
                                 std::floor(static_cast<double>(i) * spec_.violating_fraction);
                SlotIndex slot{};
                if (violating)
                {
                    slot = SlotIndex{static_cast<std::uint32_t>(capacity_ + 1 + violations_++)};
                }
                else
                {
                    slot = SlotIndex{static_cast<std::uint32_t>(next_slot_ + 1)};
                    next_slot_ = (next_slot_ + 1) % capacity_;
                }
                MessageId id;
                for (std::size_t w = 0; w < id.digest.size(); w += 8)
                {
                    auto word = rng_();
                    for (std::size_t b = 0; b < 8; ++b)
                        id.digest[w + b] = static_cast<std::byte>(word >> (8 * b));
                }
                version_ = Version{version_.value + 1};
                out.push_back(SlotUpdate{attacker_, slot, version_, AdvertOnly{Advert{id, spec_.advertised_size}}});
            }
            return out;
        }

        [[nodiscard]] std::uint64_t emitted() const noexcept { return emitted_; }
        [[nodiscard]] std::uint64_t violating() const noexcept { return violations_; }

    private:
        PeerId attacker_;
        std::size_t capacity_;
        FlooderSpec spec_;
        std::mt19937_64 rng_;
        std::uint64_t emitted_ = 0;
        std::uint64_t violations_ = 0;
        std::size_t next_slot_ = 0;
        Version version_{};
    };

    // Floods every victim with adverts and never answers pulls.
    class FlooderEndpoint final : public sim::Endpoint
    {
    public:
        FlooderEndpoint(sim::Network& net, PeerId self, std::size_t capacity, FlooderSpec spec, std::uint64_t seed)
            : net_(net), self_(self), capacity_(capacity), spec_(std::move(spec))
        {
            for (std::size_t i = 0; i < spec_.victims.size(); ++i)
                plans_.emplace_back(self, capacity, spec_, seed + 7919 * (i + 1));
        }

        void start()
        {
            auto first = spec_.start > net_.now() ? spec_.start - net_.now() : Duration::zero();
            net_.schedule_timer(self_, first + spec_.step, [this] { step(); });
        }

        void on_frame(PeerId /*from*/, ConnectionId /*conn*/, std::span<const std::byte> /*frame*/) override
        {
            ++ignored_;
        }

        [[nodiscard]] std::uint64_t sent() const noexcept { return sent_; }

        // Out-of-range updates actually handed to the connection towards `victim`.
        [[nodiscard]] std::uint64_t sent_violating(PeerId victim) const
        {
            auto it = sent_violating_.find(victim);
            return it == sent_violating_.end() ? 0 : it->second;
        }
        [[nodiscard]] std::uint64_t ignored() const noexcept { return ignored_; }

    private:
        void step()
        {
            auto now = net_.now();
            for (std::size_t i = 0; i < spec_.victims.size(); ++i)
            {
                auto victim = spec_.victims[i];
                auto batch = plans_[i].flooder_step(now);
                if (!net_.connected(self_, victim))
                    continue;
                for (const auto& u : batch)
                {
                    net_.send_frame(self_, victim, wire::encode_update(u), {});
                    ++sent_;
                    if (u.slot.value > capacity_)
                        ++sent_violating_[victim];
                }
            }
            if (!spec_.stop || now < *spec_.stop)
                net_.schedule_timer(self_, spec_.step, [this] { step(); });
        }

        sim::Network& net_;
        PeerId self_;
        std::size_t capacity_;
        FlooderSpec spec_;
        std::vector<FloodPlan> plans_;
        std::map<PeerId, std::uint64_t> sent_violating_;
        std::uint64_t sent_ = 0;
        std::uint64_t ignored_ = 0;
    };

    struct EquivocatorSpec
    {
        std::vector<PeerId> victims;
        TimePoint at{};
        std::size_t message_size = 512;

        friend bool operator==(const EquivocatorSpec&, const EquivocatorSpec&) = default;
    };

    // Pushes a different payload to each victim under the same (slot, version) and
    // answers pulls for any of them.
    class EquivocatorEndpoint final : public sim::Endpoint
    {
    public:
        EquivocatorEndpoint(sim::Network& net, PeerId self, EquivocatorSpec spec)
            : net_(net), self_(self), spec_(std::move(spec))
        {
        }

        void start()
        {
            auto delay = spec_.at > net_.now() ? spec_.at - net_.now() : Duration::zero();
            net_.schedule_timer(self_, delay, [this] { strike(); });
        }

        void on_frame(PeerId from, ConnectionId /*conn*/, std::span<const std::byte> frame) override
        {
            auto f = wire::decode(frame);
            if (!f)
                return;
            if (const auto* pull = std::get_if<wire::PullRequest>(&*f))
            {
                auto it = payloads_.find(pull->id);
                if (it != payloads_.end())
                    net_.send_frame(self_, from, wire::encode_pull_response(pull->id, it->second.payload()), {});
            }
        }

        [[nodiscard]] const std::map<PeerId, MessageId>& sent_ids() const noexcept { return sent_ids_; }

    private:
        void strike()
        {
            for (auto victim : spec_.victims)
            {
                std::string tag = "equivocation for " + std::to_string(victim.value) + ":";
                Bytes payload(std::max(spec_.message_size, tag.size()), std::byte{0x5a});
                for (std::size_t i = 0; i < tag.size(); ++i)
                    payload[i] = static_cast<std::byte>(tag[i]);
                Message m(std::move(payload));
                payloads_.emplace(m.id(), m);
                sent_ids_[victim] = m.id();
                SlotUpdate u{self_, SlotIndex{1}, Version{1}, FullMessage{m}};
                net_.send_frame(self_, victim, wire::encode_update(u), {});
            }
        }

        sim::Network& net_;
        PeerId self_;
        EquivocatorSpec spec_;
        std::map<MessageId, Message> payloads_;
        std::map<PeerId, MessageId> sent_ids_;
    };
} // namespace abcast
