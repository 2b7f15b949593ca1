#pragma once

#include "abcast/core_types.hpp"

#include <functional>

namespace abcast
{
    // What the engine needs from the connection layer. Every callback is invoked
    // later from the event loop, never re-entrantly from inside the call that
    // registered it.
    class Transport
    {
    public:
        virtual ~Transport() = default;

        [[nodiscard]] virtual TimePoint now() const = 0;

        // Reliable, in-order while the connection persists. on_done(true) once the frame
        // reached the peer; on_done(false) if the connection was down or broke first.
        virtual void send_frame(PeerId to, Bytes frame, std::function<void(bool)> on_done) = 0;

        [[nodiscard]] virtual ConnectionId connection_id(PeerId peer) const = 0;
        [[nodiscard]] virtual bool connected(PeerId peer) const = 0;

        virtual void schedule(Duration delay, std::function<void()> fn) = 0;
    };
} // namespace abcast
