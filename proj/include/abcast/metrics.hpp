#pragma once

// Per-run accounting.
//
// Byte partition, per sending node. Every byte handed to a connection ends up in
// exactly one bucket:
//   lost      the connection broke while the frame was in flight
//   inflight  not yet delivered when the counters were read
//   goodput   payload bytes of a push or pull response delivered to a receiver that
//             did not hold that payload before
//   duplicate payload bytes of such a frame delivered to a receiver that already did
//   advert    whole advert frames
//   pull      whole pull request and pull refusal frames
//   overhead  framing and header bytes of push and pull response frames, and any
//             frame that does not parse
//
// Missing, at time t, for receiver R: messages some honest node holds in its validated
// pool, that R never validated itself and has not had delivered, that R's
// configured bouncer accepts at t, and that were created at least `grace` ago.
//
// CSV columns, in order:
//   row,time_ms,missing_avg,missing_total,tracked_max,protocol_violations,
//   rate_limited,deliveries,latency_max_ms,bytes_sent,goodput_bytes,
//   duplicate_bytes,advert_bytes,pull_bytes,overhead_bytes,lost_bytes,
//   inflight_bytes,drive_calls, then missing_<i> and tracked_<i> for each node.
// `row` is "sample" for periodic rows and "summary" for the final row.

#include "abcast/core_types.hpp"
#include "abcast/pools.hpp"
#include "abcast/sim_net.hpp"
#include "abcast/wire.hpp"

#include <algorithm>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace abcast
{
    struct ByteCounters
    {
        std::uint64_t sent = 0;
        std::uint64_t goodput = 0;
        std::uint64_t duplicate = 0;
        std::uint64_t advert = 0;
        std::uint64_t pull = 0;
        std::uint64_t overhead = 0;
        std::uint64_t lost = 0;
        std::uint64_t in_flight = 0;

        [[nodiscard]] std::uint64_t classified() const noexcept
        {
            return goodput + duplicate + advert + pull + overhead + lost + in_flight;
        }

        [[nodiscard]] bool conserved() const noexcept { return sent == classified(); }

        ByteCounters& operator+=(const ByteCounters& o) noexcept
        {
            sent += o.sent;
            goodput += o.goodput;
            duplicate += o.duplicate;
            advert += o.advert;
            pull += o.pull;
            overhead += o.overhead;
            lost += o.lost;
            in_flight += o.in_flight;
            return *this;
        }
    };

    struct MessageRecord
    {
        std::optional<TimePoint> created_at;
        std::uint64_t size = 0;
        // Nodes whose validated pool holds the message right now.
        std::set<PeerId> holders;
        // Nodes that validated it at any point.
        std::set<PeerId> validators;
        std::map<PeerId, TimePoint> delivered_at;
    };

    struct Sample
    {
        TimePoint at;
        std::vector<std::uint64_t> missing;
        std::vector<std::uint64_t> tracked;
        std::uint64_t protocol_violations = 0;
        std::uint64_t rate_limited = 0;
        std::uint64_t drive_calls = 0;
        std::uint64_t deliveries = 0;
        std::int64_t latency_max_us = 0;
        ByteCounters bytes;

        [[nodiscard]] std::uint64_t missing_total() const noexcept
        {
            std::uint64_t t = 0;
            for (auto m : missing)
                t += m;
            return t;
        }
    };

    class RunMetrics final : public sim::FrameObserver, public EngineObserver
    {
    public:
        // (receiver, message, now) -> whether the receiver's configured bouncer accepts it.
        using AcceptFn = std::function<bool(PeerId, const MessageId&, TimePoint)>;

        RunMetrics(std::size_t n, std::vector<bool> honest, AcceptFn accepts, Duration grace)
            : n_(n), honest_(std::move(honest)), accepts_(std::move(accepts)), grace_(grace), bytes_(n), peak_(n, 0)
        {
            if (honest_.size() != n_)
                throw Error(ErrorCode::InvalidConfig, "honest mask size differs from node count");
        }

        // --- frame accounting ---

        void on_frame_sent(PeerId src, PeerId /*dst*/, std::span<const std::byte> frame) override
        {
            auto& b = bytes_[src.value];
            b.sent += frame.size();
            b.in_flight += frame.size();
        }

        void on_frame_lost(PeerId src, PeerId /*dst*/, std::span<const std::byte> frame) override
        {
            auto& b = bytes_[src.value];
            b.in_flight -= frame.size();
            b.lost += frame.size();
        }

        void on_frame_delivered(PeerId src, PeerId dst, std::span<const std::byte> frame) override
        {
            auto& b = bytes_[src.value];
            b.in_flight -= frame.size();
            auto info = wire::inspect(frame);
            if (!info)
            {
                b.overhead += frame.size();
                return;
            }
            switch (info->kind)
            {
            case wire::FrameKind::AdvertUpdate:
                b.advert += frame.size();
                return;
            case wire::FrameKind::PullRequest:
            case wire::FrameKind::PullRefusal:
                b.pull += frame.size();
                return;
            case wire::FrameKind::PushUpdate:
            case wire::FrameKind::PullResponse:
                break;
            }
            b.overhead += frame.size() - info->payload_bytes;
            auto key = std::pair{dst, info->id};
            ++receipts_[key];
            if (has_payload_.insert(key).second)
                b.goodput += info->payload_bytes;
            else
                b.duplicate += info->payload_bytes;
        }

        // --- engine events ---

        void on_validated_add(PeerId node, const Message& m, TimePoint now) override
        {
            auto& r = messages_[m.id()];
            if (!r.created_at)
            {
                r.created_at = now;
                r.size = m.size();
                ++created_;
            }
            r.holders.insert(node);
            r.validators.insert(node);
            has_payload_.insert(std::pair{node, m.id()});
        }

        void on_validated_remove(PeerId node, const MessageId& id, TimePoint /*now*/) override
        {
            auto it = messages_.find(id);
            if (it != messages_.end())
                it->second.holders.erase(node);
        }

        void on_delivered(PeerId node, const Message& m, TimePoint now) override
        {
            auto& r = messages_[m.id()];
            if (!r.delivered_at.emplace(node, now).second)
                return;
            ++deliveries_;
            if (r.created_at && honest_[node.value])
            {
                auto lat = (now - *r.created_at).count();
                latency_max_us_ = std::max<std::int64_t>(latency_max_us_, lat);
                ++latency_samples_;
            }
        }

        void on_drive(PeerId /*node*/, DriveTrigger::Kind /*kind*/, TimePoint /*now*/) override { ++drive_calls_; }

        // --- queries ---

        [[nodiscard]] bool owed(const MessageRecord& r, const MessageId& id, PeerId receiver, TimePoint t) const
        {
            if (!honest_[receiver.value] || !r.created_at || !honest_holder(r))
                return false;
            if (*r.created_at + grace_ > t)
                return false;
            if (r.validators.contains(receiver) || r.delivered_at.contains(receiver))
                return false;
            return accepts_(receiver, id, t);
        }

        // Only an honest holder obliges delivery; an adversary may withhold its own messages.
        [[nodiscard]] bool honest_holder(const MessageRecord& r) const
        {
            return std::any_of(r.holders.begin(), r.holders.end(), [&](PeerId p) { return honest_[p.value]; });
        }

        [[nodiscard]] std::vector<std::uint64_t> missing_at(TimePoint t) const
        {
            std::vector<std::uint64_t> out(n_, 0);
            for (const auto& [id, r] : messages_)
            {
                if (r.holders.empty())
                    continue;
                for (std::uint32_t i = 0; i < n_; ++i)
                {
                    if (owed(r, id, PeerId{i}, t))
                        ++out[i];
                }
            }
            return out;
        }

        void note_tracked(PeerId node, std::size_t tracked) noexcept
        {
            peak_[node.value] = std::max<std::uint64_t>(peak_[node.value], tracked);
        }

        // Takes one row; `tracked` and the counters come from the live engines.
        void sample(TimePoint t, std::vector<std::uint64_t> tracked, std::uint64_t violations,
                    std::uint64_t rate_limited)
        {
            Sample s;
            s.at = t;
            s.missing = missing_at(t);
            for (std::uint32_t i = 0; i < n_ && i < tracked.size(); ++i)
                note_tracked(PeerId{i}, tracked[i]);
            s.tracked = std::move(tracked);
            s.protocol_violations = violations;
            s.rate_limited = rate_limited;
            s.drive_calls = drive_calls_;
            s.deliveries = deliveries_;
            s.latency_max_us = latency_max_us_;
            s.bytes = total_bytes();
            samples_.push_back(std::move(s));
        }

        [[nodiscard]] ByteCounters total_bytes() const noexcept
        {
            ByteCounters total;
            for (const auto& b : bytes_)
                total += b;
            return total;
        }

        [[nodiscard]] const ByteCounters& bytes(PeerId node) const { return bytes_.at(node.value); }
        [[nodiscard]] const std::vector<Sample>& samples() const noexcept { return samples_; }
        [[nodiscard]] const std::map<MessageId, MessageRecord>& messages() const noexcept { return messages_; }
        [[nodiscard]] std::uint64_t created() const noexcept { return created_; }
        [[nodiscard]] std::uint64_t deliveries() const noexcept { return deliveries_; }
        [[nodiscard]] std::uint64_t drive_calls() const noexcept { return drive_calls_; }
        [[nodiscard]] Duration latency_max() const noexcept { return Duration(latency_max_us_); }
        [[nodiscard]] std::uint64_t latency_samples() const noexcept { return latency_samples_; }
        [[nodiscard]] std::uint64_t peak_tracked(PeerId node) const { return peak_.at(node.value); }
        [[nodiscard]] bool honest(PeerId node) const { return honest_.at(node.value); }
        [[nodiscard]] std::size_t size() const noexcept { return n_; }

        // Payload-carrying frames of `id` delivered to `node`.
        [[nodiscard]] std::uint64_t payload_receipts(PeerId node, const MessageId& id) const
        {
            auto it = receipts_.find(std::pair{node, id});
            return it == receipts_.end() ? 0 : it->second;
        }

        [[nodiscard]] std::optional<Duration> latency(const MessageId& id, PeerId receiver) const
        {
            auto it = messages_.find(id);
            if (it == messages_.end() || !it->second.created_at)
                return std::nullopt;
            auto d = it->second.delivered_at.find(receiver);
            if (d == it->second.delivered_at.end())
                return std::nullopt;
            return d->second - *it->second.created_at;
        }

        [[nodiscard]] static std::string csv_header(std::size_t n)
        {
            std::string h = "row,time_ms,missing_avg,missing_total,tracked_max,protocol_violations,rate_limited,"
                            "deliveries,latency_max_ms,bytes_sent,goodput_bytes,duplicate_bytes,advert_bytes,"
                            "pull_bytes,overhead_bytes,lost_bytes,inflight_bytes,drive_calls";
            for (std::size_t i = 0; i < n; ++i)
                h += ",missing_" + std::to_string(i);
            for (std::size_t i = 0; i < n; ++i)
                h += ",tracked_" + std::to_string(i);
            return h;
        }

        // Samples followed by one summary row built from `final_row`, whose tracked
        // column holds run peaks.
        [[nodiscard]] std::string csv(const Sample& final_row) const
        {
            std::ostringstream out;
            out << csv_header(n_) << '\n';
            for (const auto& s : samples_)
                write_row(out, "sample", s);
            write_row(out, "summary", final_row);
            return out.str();
        }

        [[nodiscard]] Sample summary_row(TimePoint t, std::uint64_t violations, std::uint64_t rate_limited) const
        {
            Sample s;
            s.at = t;
            s.missing = missing_at(t);
            s.tracked = peak_;
            s.protocol_violations = violations;
            s.rate_limited = rate_limited;
            s.drive_calls = drive_calls_;
            s.deliveries = deliveries_;
            s.latency_max_us = latency_max_us_;
            s.bytes = total_bytes();
            return s;
        }

        [[nodiscard]] std::size_t honest_count() const noexcept
        {
            return static_cast<std::size_t>(std::count(honest_.begin(), honest_.end(), true));
        }

    private:
        void write_row(std::ostringstream& out, const char* kind, const Sample& s) const
        {
            auto honest = honest_count();
            double avg = honest ? static_cast<double>(s.missing_total()) / static_cast<double>(honest) : 0.0;
            std::uint64_t tracked_max = 0;
            for (auto t : s.tracked)
                tracked_max = std::max(tracked_max, t);
            out << kind << ',' << to_ms(s.at) << ',' << std::fixed << std::setprecision(3) << avg << ','
                << s.missing_total() << ',' << tracked_max << ',' << s.protocol_violations << ',' << s.rate_limited
                << ',' << s.deliveries << ',' << std::setprecision(3)
                << static_cast<double>(s.latency_max_us) / 1000.0 << ',' << s.bytes.sent << ',' << s.bytes.goodput
                << ',' << s.bytes.duplicate << ',' << s.bytes.advert << ',' << s.bytes.pull << ','
                << s.bytes.overhead << ',' << s.bytes.lost << ',' << s.bytes.in_flight << ',' << s.drive_calls;
            for (auto m : s.missing)
                out << ',' << m;
            for (std::size_t i = 0; i < n_; ++i)
                out << ',' << (i < s.tracked.size() ? s.tracked[i] : 0);
            out << '\n';
        }

        std::size_t n_;
        std::vector<bool> honest_;
        AcceptFn accepts_;
        Duration grace_;
        std::vector<ByteCounters> bytes_;
        std::vector<std::uint64_t> peak_;
        std::map<MessageId, MessageRecord> messages_;
        std::set<std::pair<PeerId, MessageId>> has_payload_;
        std::map<std::pair<PeerId, MessageId>, std::uint64_t> receipts_;
        std::vector<Sample> samples_;
        std::uint64_t created_ = 0;
        std::uint64_t deliveries_ = 0;
        std::uint64_t drive_calls_ = 0;
        std::int64_t latency_max_us_ = 0;
        std::uint64_t latency_samples_ = 0;
    };
} // namespace abcast
