#pragma once

// Frame encoding used on simulated connections and datagrams.
//
// Every frame is a length-prefixed record, all integers little-endian:
//
//   u32 body_length | u8 kind | body
//
//   kind 1  PushUpdate    u32 slot | u64 version | 32B id | u32 payload_len | payload
//   kind 2  AdvertUpdate  u32 slot | u64 version | 32B id | u64 size
//   kind 3  PullRequest   32B id
//   kind 4  PullResponse  32B id | u32 payload_len | payload
//   kind 5  PullRefusal   32B id
//
// body_length counts the kind byte and the body. The sender id is never encoded;
// it is supplied by the authenticated channel.

#include "abcast/core_types.hpp"

#include <cstring>
#include <optional>
#include <span>
#include <variant>

namespace abcast::wire
{
    enum class FrameKind : std::uint8_t
    {
        PushUpdate = 1,
        AdvertUpdate = 2,
        PullRequest = 3,
        PullResponse = 4,
        PullRefusal = 5,
    };

    inline constexpr std::size_t kLengthPrefix = 4;
    inline constexpr std::size_t kKindTag = 1;
    inline constexpr std::size_t kIdSize = sizeof(MessageId::digest);

    struct PullRequest
    {
        MessageId id;
    };

    struct PullResponse
    {
        MessageId id;
        Bytes payload;
    };

    struct PullRefusal
    {
        MessageId id;
    };

    // Slot update as carried on the wire: the push variant keeps the claimed id so the
    // receiver can check it against the payload digest.
    struct WireUpdate
    {
        SlotIndex slot;
        Version version;
        MessageId id;
        std::uint64_t size = 0;
        std::optional<Bytes> payload;
    };

    using Frame = std::variant<WireUpdate, PullRequest, PullResponse, PullRefusal>;

    namespace detail
    {
        class Writer
        {
        public:
            explicit Writer(std::size_t reserve) { out_.reserve(reserve); }

            void u8(std::uint8_t v) { out_.push_back(static_cast<std::byte>(v)); }

            void u32(std::uint32_t v)
            {
                for (int i = 0; i < 4; ++i)
                    u8(static_cast<std::uint8_t>(v >> (8 * i)));
            }

            void u64(std::uint64_t v)
            {
                for (int i = 0; i < 8; ++i)
                    u8(static_cast<std::uint8_t>(v >> (8 * i)));
            }

            void raw(std::span<const std::byte> b) { out_.insert(out_.end(), b.begin(), b.end()); }

            Bytes finish()
            {
                auto body = static_cast<std::uint32_t>(out_.size() - kLengthPrefix);
                for (int i = 0; i < 4; ++i)
                    out_[static_cast<std::size_t>(i)] = static_cast<std::byte>(body >> (8 * i));
                return std::move(out_);
            }

        private:
            Bytes out_;
        };

        class Reader
        {
        public:
            explicit Reader(std::span<const std::byte> in) : in_(in) {}

            bool u8(std::uint8_t& v)
            {
                if (remaining() < 1)
                    return false;
                v = std::to_integer<std::uint8_t>(in_[pos_++]);
                return true;
            }

            bool u32(std::uint32_t& v)
            {
                if (remaining() < 4)
                    return false;
                v = 0;
                for (int i = 0; i < 4; ++i)
                    v |= std::to_integer<std::uint32_t>(in_[pos_++]) << (8 * i);
                return true;
            }

            bool u64(std::uint64_t& v)
            {
                if (remaining() < 8)
                    return false;
                v = 0;
                for (int i = 0; i < 8; ++i)
                    v |= std::to_integer<std::uint64_t>(in_[pos_++]) << (8 * i);
                return true;
            }

            bool id(MessageId& id)
            {
                if (remaining() < kIdSize)
                    return false;
                std::memcpy(id.digest.data(), in_.data() + pos_, kIdSize);
                pos_ += kIdSize;
                return true;
            }

            bool bytes(std::size_t n, Bytes& out)
            {
                if (remaining() < n)
                    return false;
                out.assign(in_.begin() + static_cast<std::ptrdiff_t>(pos_),
                           in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
                pos_ += n;
                return true;
            }

            [[nodiscard]] std::size_t remaining() const noexcept { return in_.size() - pos_; }

        private:
            std::span<const std::byte> in_;
            std::size_t pos_ = 0;
        };

        inline Writer start(FrameKind kind, std::size_t body_hint)
        {
            Writer w(kLengthPrefix + kKindTag + body_hint);
            w.u32(0);
            w.u8(static_cast<std::uint8_t>(kind));
            return w;
        }
    } // namespace detail

    inline Bytes encode_update(const SlotUpdate& u)
    {
        if (const auto* full = std::get_if<FullMessage>(&u.content))
        {
            const auto& m = full->message;
            auto w = detail::start(FrameKind::PushUpdate, 4 + 8 + kIdSize + 4 + m.size());
            w.u32(u.slot.value);
            w.u64(u.version.value);
            w.raw(m.id().digest);
            w.u32(static_cast<std::uint32_t>(m.size()));
            w.raw(m.payload());
            return w.finish();
        }
        const auto& advert = std::get<AdvertOnly>(u.content).advert;
        auto w = detail::start(FrameKind::AdvertUpdate, 4 + 8 + kIdSize + 8);
        w.u32(u.slot.value);
        w.u64(u.version.value);
        w.raw(advert.id.digest);
        w.u64(advert.size);
        return w.finish();
    }

    inline Bytes encode_pull_request(const MessageId& id)
    {
        auto w = detail::start(FrameKind::PullRequest, kIdSize);
        w.raw(id.digest);
        return w.finish();
    }

    inline Bytes encode_pull_response(const MessageId& id, std::span<const std::byte> payload)
    {
        auto w = detail::start(FrameKind::PullResponse, kIdSize + 4 + payload.size());
        w.raw(id.digest);
        w.u32(static_cast<std::uint32_t>(payload.size()));
        w.raw(payload);
        return w.finish();
    }

    inline Bytes encode_pull_refusal(const MessageId& id)
    {
        auto w = detail::start(FrameKind::PullRefusal, kIdSize);
        w.raw(id.digest);
        return w.finish();
    }

    // Returns nullopt on any malformed or truncated frame.
    inline std::optional<Frame> decode(std::span<const std::byte> in)
    {
        detail::Reader r(in);
        std::uint32_t body = 0;
        std::uint8_t kind = 0;
        if (!r.u32(body) || body != r.remaining() || !r.u8(kind))
            return std::nullopt;

        switch (static_cast<FrameKind>(kind))
        {
        case FrameKind::PushUpdate:
        {
            WireUpdate u;
            std::uint32_t len = 0;
            Bytes payload;
            if (!r.u32(u.slot.value) || !r.u64(u.version.value) || !r.id(u.id) || !r.u32(len) ||
                !r.bytes(len, payload) || r.remaining() != 0)
                return std::nullopt;
            u.size = len;
            u.payload = std::move(payload);
            return Frame{std::move(u)};
        }
        case FrameKind::AdvertUpdate:
        {
            WireUpdate u;
            if (!r.u32(u.slot.value) || !r.u64(u.version.value) || !r.id(u.id) || !r.u64(u.size) ||
                r.remaining() != 0)
                return std::nullopt;
            return Frame{std::move(u)};
        }
        case FrameKind::PullRequest:
        {
            PullRequest p;
            if (!r.id(p.id) || r.remaining() != 0)
                return std::nullopt;
            return Frame{p};
        }
        case FrameKind::PullResponse:
        {
            PullResponse p;
            std::uint32_t len = 0;
            if (!r.id(p.id) || !r.u32(len) || !r.bytes(len, p.payload) || r.remaining() != 0)
                return std::nullopt;
            return Frame{std::move(p)};
        }
        case FrameKind::PullRefusal:
        {
            PullRefusal p;
            if (!r.id(p.id) || r.remaining() != 0)
                return std::nullopt;
            return Frame{p};
        }
        }
        return std::nullopt;
    }

    // Cheap header inspection for byte accounting; does not copy the payload.
    struct FrameInfo
    {
        FrameKind kind{};
        MessageId id;
        std::size_t payload_bytes = 0;
    };

    inline std::optional<FrameInfo> inspect(std::span<const std::byte> in)
    {
        detail::Reader r(in);
        std::uint32_t body = 0;
        std::uint8_t kind = 0;
        if (!r.u32(body) || body != r.remaining() || !r.u8(kind))
            return std::nullopt;
        FrameInfo info;
        info.kind = static_cast<FrameKind>(kind);
        std::uint32_t skip32 = 0;
        std::uint64_t skip64 = 0;
        switch (info.kind)
        {
        case FrameKind::PushUpdate:
        {
            std::uint32_t len = 0;
            if (!r.u32(skip32) || !r.u64(skip64) || !r.id(info.id) || !r.u32(len) || r.remaining() != len)
                return std::nullopt;
            info.payload_bytes = len;
            return info;
        }
        case FrameKind::PullResponse:
        {
            std::uint32_t len = 0;
            if (!r.id(info.id) || !r.u32(len) || r.remaining() != len)
                return std::nullopt;
            info.payload_bytes = len;
            return info;
        }
        case FrameKind::AdvertUpdate:
            if (!r.u32(skip32) || !r.u64(skip64) || !r.id(info.id))
                return std::nullopt;
            return info;
        case FrameKind::PullRequest:
        case FrameKind::PullRefusal:
            if (!r.id(info.id))
                return std::nullopt;
            return info;
        }
        return std::nullopt;
    }

    // Header bytes of a push update for a payload of the given size.
    constexpr std::size_t push_frame_size(std::size_t payload) noexcept
    {
        return kLengthPrefix + kKindTag + 4 + 8 + kIdSize + 4 + payload;
    }

    constexpr std::size_t advert_frame_size() noexcept { return kLengthPrefix + kKindTag + 4 + 8 + kIdSize + 8; }

    constexpr std::size_t pull_request_size() noexcept { return kLengthPrefix + kKindTag + kIdSize; }

    constexpr std::size_t pull_response_size(std::size_t payload) noexcept
    {
        return kLengthPrefix + kKindTag + kIdSize + 4 + payload;
    }
} // namespace abcast::wire
