#pragma once

#include <openssl/sha.h>

#include <array>
#include <chrono>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace abcast
{
    enum class ErrorCode : std::uint8_t
    {
        Capacity,
        UnknownMessage,
        Duplicate,
        MessageTooLarge,
        InvalidConfig,
        Scheduling,
        ProtocolViolation,
        UnknownTarget,
        Parse,
    };

    constexpr std::string_view to_string(ErrorCode code) noexcept
    {
        switch (code)
        {
        case ErrorCode::Capacity:
            return "capacity";
        case ErrorCode::UnknownMessage:
            return "unknown-message";
        case ErrorCode::Duplicate:
            return "duplicate";
        case ErrorCode::MessageTooLarge:
            return "message-too-large";
        case ErrorCode::InvalidConfig:
            return "invalid-config";
        case ErrorCode::Scheduling:
            return "scheduling";
        case ErrorCode::ProtocolViolation:
            return "protocol-violation";
        case ErrorCode::UnknownTarget:
            return "unknown-target";
        case ErrorCode::Parse:
            return "parse";
        }
        return "unknown";
    }

    class Error : public std::runtime_error
    {
    public:
        Error(ErrorCode code, const std::string& what)
            : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code)
        {
        }

        [[nodiscard]] ErrorCode code() const noexcept { return code_; }

    private:
        ErrorCode code_;
    };

    // Strongly typed integer wrapper. Distinct tags do not mix.
    template <class Rep, class Tag>
    struct Tagged
    {
        Rep value{};

        constexpr Tagged() = default;
        constexpr explicit Tagged(Rep v) noexcept : value(v) {}

        friend constexpr auto operator<=>(const Tagged&, const Tagged&) = default;
    };

    using PeerId = Tagged<std::uint32_t, struct PeerIdTag>;
    using Version = Tagged<std::uint64_t, struct VersionTag>;
    using ConnectionId = Tagged<std::uint64_t, struct ConnectionIdTag>;

    // 1-based slot number in [1, C].
    using SlotIndex = Tagged<std::uint32_t, struct SlotIndexTag>;

    using Bytes = std::vector<std::byte>;

    inline Bytes to_bytes(std::string_view s)
    {
        Bytes out(s.size());
        for (std::size_t i = 0; i < s.size(); ++i)
        {
            out[i] = static_cast<std::byte>(s[i]);
        }
        return out;
    }

    // Simulated time. Microsecond resolution so bandwidth serialization delays stay exact.
    struct SimClock
    {
        using duration = std::chrono::microseconds;
        using rep = duration::rep;
        using period = duration::period;
        using time_point = std::chrono::time_point<SimClock, duration>;
        static constexpr bool is_steady = true;
    };

    using Duration = SimClock::duration;
    using TimePoint = SimClock::time_point;

    constexpr std::int64_t to_ms(Duration d) noexcept
    {
        return std::chrono::duration_cast<std::chrono::milliseconds>(d).count();
    }

    constexpr std::int64_t to_ms(TimePoint t) noexcept { return to_ms(t.time_since_epoch()); }

    constexpr TimePoint at_ms(std::int64_t ms) noexcept { return TimePoint{std::chrono::milliseconds(ms)}; }

    constexpr Duration ms(std::int64_t v) noexcept { return std::chrono::milliseconds(v); }

    struct MessageId
    {
        std::array<std::byte, SHA256_DIGEST_LENGTH> digest{};

        friend constexpr auto operator<=>(const MessageId&, const MessageId&) = default;

        [[nodiscard]] std::string hex() const
        {
            static constexpr char kDigits[] = "0123456789abcdef";
            std::string out;
            out.reserve(digest.size() * 2);
            for (auto b : digest)
            {
                auto v = std::to_integer<unsigned>(b);
                out.push_back(kDigits[v >> 4]);
                out.push_back(kDigits[v & 0xF]);
            }
            return out;
        }

        [[nodiscard]] std::string short_hex() const { return hex().substr(0, 12); }
    };

    // SHA-256 of the payload bytes.
    inline MessageId digest_of(std::span<const std::byte> payload) noexcept
    {
        MessageId id;
        SHA256(reinterpret_cast<const unsigned char*>(payload.data()), payload.size(),
               reinterpret_cast<unsigned char*>(id.digest.data()));
        return id;
    }

    inline MessageId message_id(std::span<const std::byte> payload, std::size_t max_message_size)
    {
        if (payload.size() > max_message_size)
        {
            throw Error(ErrorCode::MessageTooLarge, "payload of " + std::to_string(payload.size()) +
                                                        " bytes exceeds max_message_size " +
                                                        std::to_string(max_message_size));
        }
        return digest_of(payload);
    }

    // Immutable, content-addressed message. Copies share the payload buffer.
    class Message
    {
    public:
        Message() : Message(Bytes{}) {}

        explicit Message(Bytes payload)
            : payload_(std::make_shared<const Bytes>(std::move(payload))), id_(digest_of(*payload_))
        {
        }

        static Message checked(Bytes payload, std::size_t max_message_size)
        {
            if (payload.size() > max_message_size)
            {
                throw Error(ErrorCode::MessageTooLarge, "payload of " + std::to_string(payload.size()) +
                                                            " bytes exceeds max_message_size " +
                                                            std::to_string(max_message_size));
            }
            return Message(std::move(payload));
        }

        [[nodiscard]] const MessageId& id() const noexcept { return id_; }
        [[nodiscard]] std::span<const std::byte> payload() const noexcept { return *payload_; }
        [[nodiscard]] std::size_t size() const noexcept { return payload_->size(); }

        friend bool operator==(const Message& a, const Message& b) noexcept { return a.id_ == b.id_; }

    private:
        std::shared_ptr<const Bytes> payload_;
        MessageId id_;
    };

    struct Advert
    {
        MessageId id;
        std::uint64_t size = 0;

        friend bool operator==(const Advert&, const Advert&) = default;
    };

    struct FullMessage
    {
        Message message;
        friend bool operator==(const FullMessage&, const FullMessage&) = default;
    };

    struct AdvertOnly
    {
        Advert advert;
        friend bool operator==(const AdvertOnly&, const AdvertOnly&) = default;
    };

    struct SlotUpdate
    {
        PeerId sender;
        SlotIndex slot;
        Version version;
        std::variant<FullMessage, AdvertOnly> content;

        [[nodiscard]] bool is_full() const noexcept { return std::holds_alternative<FullMessage>(content); }

        [[nodiscard]] MessageId id() const
        {
            if (auto* full = std::get_if<FullMessage>(&content))
            {
                return full->message.id();
            }
            return std::get<AdvertOnly>(content).advert.id;
        }

        [[nodiscard]] std::uint64_t message_size() const
        {
            if (auto* full = std::get_if<FullMessage>(&content))
            {
                return full->message.size();
            }
            return std::get<AdvertOnly>(content).advert.size;
        }

        friend bool operator==(const SlotUpdate&, const SlotUpdate&) = default;
    };

    struct AddAction
    {
        Message message;
        bool push_directly = false;
    };

    struct RemoveAction
    {
        MessageId id;
    };

    struct ChangeAction
    {
        std::variant<AddAction, RemoveAction> kind;

        static ChangeAction add(Message m, bool push_directly = false)
        {
            return ChangeAction{AddAction{std::move(m), push_directly}};
        }

        static ChangeAction remove(const MessageId& id) { return ChangeAction{RemoveAction{id}}; }

        [[nodiscard]] bool is_add() const noexcept { return std::holds_alternative<AddAction>(kind); }
    };

    enum class EngineMode : std::uint8_t
    {
        Full,
        // Fire-and-forget: no backoff retries, no connection-id recovery.
        NoRetransmitBaseline,
    };

    constexpr std::string_view to_string(EngineMode mode) noexcept
    {
        return mode == EngineMode::Full ? "full" : "no-retransmit-baseline";
    }

    struct EngineConfig
    {
        std::size_t slot_capacity = 64;
        std::size_t max_message_size = 1 << 20;
        std::size_t push_threshold = 1024;
        Duration tick_interval = std::chrono::milliseconds(200);
        Duration retransmit_period = std::chrono::seconds(1);
        Duration download_timeout = std::chrono::seconds(1);
        std::size_t max_concurrent_streams_per_peer = 10;
        Duration backoff_base = std::chrono::milliseconds(100);
        Duration backoff_cap = std::chrono::seconds(10);
        Duration conn_check_period = std::chrono::seconds(2);
        // Defaults to C * (n - 1) when unset.
        std::optional<std::size_t> unvalidated_bound_entries;
        // Slot updates accepted per peer per tick; defaults to 4 * C.
        std::optional<std::size_t> update_rate_cap_per_tick;
        // Test-only: false disables the receive-side slot range check and the rate cap.
        bool bounded_receive_tables = true;
        EngineMode mode = EngineMode::Full;

        [[nodiscard]] std::size_t unvalidated_bound(std::size_t n) const noexcept
        {
            return unvalidated_bound_entries.value_or(slot_capacity * (n > 0 ? n - 1 : 0));
        }

        [[nodiscard]] std::size_t rate_cap() const noexcept
        {
            return update_rate_cap_per_tick.value_or(4 * slot_capacity);
        }

        void validate() const
        {
            auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
            if (slot_capacity == 0)
                fail("slot_capacity must be positive");
            if (max_message_size == 0)
                fail("max_message_size must be positive");
            if (push_threshold == 0)
                fail("push_threshold must be positive");
            if (push_threshold > max_message_size)
                fail("push_threshold exceeds max_message_size");
            if (tick_interval <= Duration::zero())
                fail("tick_interval must be positive");
            if (retransmit_period <= Duration::zero())
                fail("retransmit_period must be positive");
            if (download_timeout <= Duration::zero())
                fail("download_timeout must be positive");
            if (max_concurrent_streams_per_peer == 0)
                fail("max_concurrent_streams_per_peer must be positive");
            if (backoff_base <= Duration::zero() || backoff_cap <= Duration::zero())
                fail("backoff durations must be positive");
            if (backoff_cap < backoff_base)
                fail("backoff_cap is below backoff_base");
            if (conn_check_period <= Duration::zero())
                fail("conn_check_period must be positive");
            if (unvalidated_bound_entries && *unvalidated_bound_entries == 0)
                fail("unvalidated_bound_entries must be positive");
            if (update_rate_cap_per_tick && *update_rate_cap_per_tick == 0)
                fail("update_rate_cap_per_tick must be positive");
        }
    };

    namespace detail
    {
        inline std::size_t hash_combine(std::size_t seed, std::size_t v) noexcept
        {
            return seed ^ (v + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
        }
    } // namespace detail
} // namespace abcast

template <class Rep, class Tag>
struct std::hash<abcast::Tagged<Rep, Tag>>
{
    std::size_t operator()(const abcast::Tagged<Rep, Tag>& t) const noexcept { return std::hash<Rep>{}(t.value); }
};

template <>
struct std::hash<abcast::MessageId>
{
    std::size_t operator()(const abcast::MessageId& id) const noexcept
    {
        std::size_t h = 0;
        for (std::size_t i = 0; i < sizeof(std::size_t); ++i)
        {
            h = (h << 8) | std::to_integer<std::size_t>(id.digest[i]);
        }
        return h;
    }
};
