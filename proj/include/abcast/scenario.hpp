#pragma once

// Declarative scenario files.
//
// A scenario is a JSON object; every key is optional unless noted and unknown keys
// are rejected. Durations and instants are integer milliseconds.
//
//   name (required), description, experiment, n (required), seed, duration_ms
//   (required), sample_interval_ms, missing_grace_ms, reconnect_delay_ms, mode
//   ("full" | "baseline"), event_log
//   engine      slot_capacity, max_message_size, push_threshold, tick_interval_ms,
//               retransmit_period_ms, download_timeout_ms,
//               max_concurrent_streams_per_peer, backoff_base_ms, backoff_cap_ms,
//               conn_check_period_ms, unvalidated_bound_entries,
//               update_rate_cap_per_tick
//   links       uniform {latency_ms, bandwidth_bytes_per_ms, drop_probability,
//               duplicate_probability, jitter_ms} and overrides [{a, b, ...}];
//               the uniform entry applies to every pair not overridden
//   workload    default {mock client} and per_node [{node, ...mock client}];
//               per-node fields fall back to the default
//   nodes       [{node, bounded}]   bounded=false disables receive-side limits
//   adversaries [{kind: flooder | silent_advertiser | equivocator | crasher, node, ...}]
//   faults      [{kind: random_link_failures | node_offline | link_down | crash, ...}]
//   assertions  [{kind, modes?, ...}]
//
// Mock client: message_size or message_sizes, rate_per_s, start_ms, stop_ms,
// max_messages, abort_after_ms, push_every, relay, consume,
// bouncer {kind: accept_all | reject_set {reject: [{origin, seq}]} | accept_after {at_ms}}.

#include "abcast/adversaries.hpp"
#include "abcast/clients.hpp"
#include "abcast/core_types.hpp"
#include "abcast/sim_net.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace abcast::scenario
{
    using nlohmann::json;

    struct LinkOverride
    {
        PeerId a;
        PeerId b;
        sim::LinkModel model;

        friend bool operator==(const LinkOverride&, const LinkOverride&) = default;
    };

    struct NodeWorkload
    {
        PeerId node;
        MockClientConfig config;

        friend bool operator==(const NodeWorkload&, const NodeWorkload&) = default;
    };

    struct NodeOverride
    {
        PeerId node;
        bool bounded = true;

        friend bool operator==(const NodeOverride&, const NodeOverride&) = default;
    };

    struct Adversary
    {
        enum class Kind : std::uint8_t
        {
            Flooder,
            SilentAdvertiser,
            Equivocator,
            Crasher,
        };

        Kind kind = Kind::Flooder;
        PeerId node;
        FlooderSpec flooder;
        EquivocatorSpec equivocator;
        // Crasher schedule.
        TimePoint crash_at{};
        std::optional<TimePoint> restart_at;

        friend bool operator==(const Adversary&, const Adversary&) = default;
    };

    struct RandomLinkFailures
    {
        TimePoint start{};
        TimePoint end{};
        Duration interval = std::chrono::seconds(30);
        double probability = 0.2;
        Duration duration = std::chrono::seconds(20);

        friend bool operator==(const RandomLinkFailures&, const RandomLinkFailures&) = default;
    };

    struct Fault
    {
        enum class Kind : std::uint8_t
        {
            RandomLinkFailures,
            NodeOffline,
            LinkDown,
            Crash,
        };

        Kind kind = Kind::NodeOffline;
        RandomLinkFailures random;
        PeerId node;
        PeerId peer;
        TimePoint at{};
        Duration duration{};
        std::optional<TimePoint> restart_at;

        friend bool operator==(const Fault&, const Fault&) = default;
    };

    // Parameters are kept as JSON; the runner interprets them per kind.
    struct Assertion
    {
        std::string kind;
        std::vector<std::string> modes;
        json params = json::object();

        friend bool operator==(const Assertion& a, const Assertion& b)
        {
            return a.kind == b.kind && a.modes == b.modes && a.params == b.params;
        }
    };

    struct Scenario
    {
        std::string name;
        std::string description;
        std::string experiment;
        std::size_t n = 0;
        std::uint64_t seed = 1;
        Duration duration{};
        Duration sample_interval = std::chrono::seconds(1);
        Duration missing_grace = std::chrono::seconds(1);
        Duration reconnect_delay = std::chrono::milliseconds(500);
        EngineMode mode = EngineMode::Full;
        bool event_log = true;
        EngineConfig engine;
        sim::LinkModel uniform_link;
        std::vector<LinkOverride> link_overrides;
        MockClientConfig default_workload;
        std::vector<NodeWorkload> per_node;
        std::vector<NodeOverride> nodes;
        std::vector<Adversary> adversaries;
        std::vector<Fault> faults;
        std::vector<Assertion> assertions;

        [[nodiscard]] MockClientConfig workload(PeerId node) const
        {
            for (const auto& w : per_node)
            {
                if (w.node == node)
                    return w.config;
            }
            return default_workload;
        }

        [[nodiscard]] bool bounded(PeerId node) const
        {
            for (const auto& o : nodes)
            {
                if (o.node == node)
                    return o.bounded;
            }
            return true;
        }

        [[nodiscard]] const Adversary* adversary(PeerId node) const
        {
            for (const auto& a : adversaries)
            {
                if (a.node == node)
                    return &a;
            }
            return nullptr;
        }

        // Nodes whose own behaviour follows the protocol; crashers count as honest.
        [[nodiscard]] bool honest(PeerId node) const
        {
            const auto* a = adversary(node);
            return !a || a->kind == Adversary::Kind::Crasher;
        }

        friend bool operator==(const Scenario& a, const Scenario& b)
        {
            auto engine_eq = [](const EngineConfig& x, const EngineConfig& y) {
                return x.slot_capacity == y.slot_capacity && x.max_message_size == y.max_message_size &&
                       x.push_threshold == y.push_threshold && x.tick_interval == y.tick_interval &&
                       x.retransmit_period == y.retransmit_period && x.download_timeout == y.download_timeout &&
                       x.max_concurrent_streams_per_peer == y.max_concurrent_streams_per_peer &&
                       x.backoff_base == y.backoff_base && x.backoff_cap == y.backoff_cap &&
                       x.conn_check_period == y.conn_check_period &&
                       x.unvalidated_bound_entries == y.unvalidated_bound_entries &&
                       x.update_rate_cap_per_tick == y.update_rate_cap_per_tick &&
                       x.bounded_receive_tables == y.bounded_receive_tables && x.mode == y.mode;
            };
            auto link_eq = [](const sim::LinkModel& x, const sim::LinkModel& y) {
                return x.one_way_latency == y.one_way_latency && x.bandwidth_bytes_per_ms == y.bandwidth_bytes_per_ms &&
                       x.drop_probability == y.drop_probability &&
                       x.duplicate_probability == y.duplicate_probability && x.jitter == y.jitter && x.up == y.up;
            };
            if (a.link_overrides.size() != b.link_overrides.size())
                return false;
            for (std::size_t i = 0; i < a.link_overrides.size(); ++i)
            {
                const auto& x = a.link_overrides[i];
                const auto& y = b.link_overrides[i];
                if (x.a != y.a || x.b != y.b || !link_eq(x.model, y.model))
                    return false;
            }
            return a.name == b.name && a.description == b.description && a.experiment == b.experiment &&
                   a.n == b.n && a.seed == b.seed && a.duration == b.duration &&
                   a.sample_interval == b.sample_interval && a.missing_grace == b.missing_grace &&
                   a.reconnect_delay == b.reconnect_delay && a.mode == b.mode && a.event_log == b.event_log &&
                   engine_eq(a.engine, b.engine) && link_eq(a.uniform_link, b.uniform_link) &&
                   a.default_workload == b.default_workload && a.per_node == b.per_node && a.nodes == b.nodes &&
                   a.adversaries == b.adversaries && a.faults == b.faults && a.assertions == b.assertions;
        }
    };

    namespace detail
    {
        [[noreturn]] inline void fail(const std::string& where, const std::string& what)
        {
            throw Error(ErrorCode::Parse, where + ": " + what);
        }

        inline void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys)
        {
            if (!j.is_object())
                fail(where, "expected an object");
            for (const auto& [k, v] : j.items())
            {
                bool known = false;
                for (const char* key : keys)
                    known = known || k == key;
                if (!known)
                    fail(where, "unknown key '" + k + "'");
            }
        }

        template <class T>
        T get(const json& j, const char* key, const std::string& where, T fallback)
        {
            if (!j.contains(key))
                return fallback;
            try
            {
                return j.at(key).get<T>();
            }
            catch (const json::exception&)
            {
                fail(where, std::string("bad value for '") + key + "'");
            }
        }

        template <class T>
        T require(const json& j, const char* key, const std::string& where)
        {
            if (!j.contains(key))
                fail(where, std::string("missing '") + key + "'");
            return get<T>(j, key, where, T{});
        }

        inline Duration get_ms(const json& j, const char* key, const std::string& where, Duration fallback)
        {
            if (!j.contains(key))
                return fallback;
            auto v = get<std::int64_t>(j, key, where, 0);
            if (v < 0)
                fail(where, std::string("'") + key + "' must be non-negative");
            return ms(v);
        }

        inline std::optional<Duration> opt_ms(const json& j, const char* key, const std::string& where)
        {
            if (!j.contains(key) || j.at(key).is_null())
                return std::nullopt;
            return get_ms(j, key, where, Duration{});
        }

        inline TimePoint at(const json& j, const char* key, const std::string& where, TimePoint fallback)
        {
            return TimePoint{get_ms(j, key, where, fallback.time_since_epoch())};
        }

        inline std::optional<TimePoint> opt_at(const json& j, const char* key, const std::string& where)
        {
            auto d = opt_ms(j, key, where);
            if (!d)
                return std::nullopt;
            return TimePoint{*d};
        }

        inline std::int64_t out_ms(Duration d) { return to_ms(d); }
        inline std::int64_t out_ms(TimePoint t) { return to_ms(t); }

        inline PeerId node(const json& j, const char* key, const std::string& where)
        {
            return PeerId{require<std::uint32_t>(j, key, where)};
        }

        inline std::vector<PeerId> nodes(const json& j, const char* key, const std::string& where)
        {
            std::vector<PeerId> out;
            for (auto v : get<std::vector<std::uint32_t>>(j, key, where, {}))
                out.push_back(PeerId{v});
            return out;
        }

        inline json nodes_json(const std::vector<PeerId>& v)
        {
            json out = json::array();
            for (auto p : v)
                out.push_back(p.value);
            return out;
        }

        inline EngineConfig parse_engine(const json& j)
        {
            const std::string w = "engine";
            only_keys(j, w,
                      {"slot_capacity", "max_message_size", "push_threshold", "tick_interval_ms",
                       "retransmit_period_ms", "download_timeout_ms", "max_concurrent_streams_per_peer",
                       "backoff_base_ms", "backoff_cap_ms", "conn_check_period_ms", "unvalidated_bound_entries",
                       "update_rate_cap_per_tick"});
            EngineConfig c;
            c.slot_capacity = get<std::size_t>(j, "slot_capacity", w, c.slot_capacity);
            c.max_message_size = get<std::size_t>(j, "max_message_size", w, c.max_message_size);
            c.push_threshold = get<std::size_t>(j, "push_threshold", w, c.push_threshold);
            c.tick_interval = get_ms(j, "tick_interval_ms", w, c.tick_interval);
            c.retransmit_period = get_ms(j, "retransmit_period_ms", w, c.retransmit_period);
            c.download_timeout = get_ms(j, "download_timeout_ms", w, c.download_timeout);
            c.max_concurrent_streams_per_peer =
                get<std::size_t>(j, "max_concurrent_streams_per_peer", w, c.max_concurrent_streams_per_peer);
            c.backoff_base = get_ms(j, "backoff_base_ms", w, c.backoff_base);
            c.backoff_cap = get_ms(j, "backoff_cap_ms", w, c.backoff_cap);
            c.conn_check_period = get_ms(j, "conn_check_period_ms", w, c.conn_check_period);
            if (j.contains("unvalidated_bound_entries"))
                c.unvalidated_bound_entries = get<std::size_t>(j, "unvalidated_bound_entries", w, 0);
            if (j.contains("update_rate_cap_per_tick"))
                c.update_rate_cap_per_tick = get<std::size_t>(j, "update_rate_cap_per_tick", w, 0);
            return c;
        }

        inline json engine_json(const EngineConfig& c)
        {
            json j{{"slot_capacity", c.slot_capacity},
                   {"max_message_size", c.max_message_size},
                   {"push_threshold", c.push_threshold},
                   {"tick_interval_ms", out_ms(c.tick_interval)},
                   {"retransmit_period_ms", out_ms(c.retransmit_period)},
                   {"download_timeout_ms", out_ms(c.download_timeout)},
                   {"max_concurrent_streams_per_peer", c.max_concurrent_streams_per_peer},
                   {"backoff_base_ms", out_ms(c.backoff_base)},
                   {"backoff_cap_ms", out_ms(c.backoff_cap)},
                   {"conn_check_period_ms", out_ms(c.conn_check_period)}};
            if (c.unvalidated_bound_entries)
                j["unvalidated_bound_entries"] = *c.unvalidated_bound_entries;
            if (c.update_rate_cap_per_tick)
                j["update_rate_cap_per_tick"] = *c.update_rate_cap_per_tick;
            return j;
        }

        inline void parse_link_fields(const json& j, const std::string& w, sim::LinkModel& m)
        {
            m.one_way_latency = get_ms(j, "latency_ms", w, m.one_way_latency);
            if (j.contains("bandwidth_bytes_per_ms") && !j.at("bandwidth_bytes_per_ms").is_null())
                m.bandwidth_bytes_per_ms = get<double>(j, "bandwidth_bytes_per_ms", w, 0.0);
            m.drop_probability = get<double>(j, "drop_probability", w, m.drop_probability);
            m.duplicate_probability = get<double>(j, "duplicate_probability", w, m.duplicate_probability);
            m.jitter = get_ms(j, "jitter_ms", w, m.jitter);
            m.up = get<bool>(j, "up", w, m.up);
        }

        inline json link_json(const sim::LinkModel& m)
        {
            json j{{"latency_ms", out_ms(m.one_way_latency)},
                   {"drop_probability", m.drop_probability},
                   {"duplicate_probability", m.duplicate_probability},
                   {"jitter_ms", out_ms(m.jitter)},
                   {"up", m.up}};
            if (m.bandwidth_bytes_per_ms)
                j["bandwidth_bytes_per_ms"] = *m.bandwidth_bytes_per_ms;
            return j;
        }

        inline MockClientConfig parse_mock(const json& j, const std::string& w, MockClientConfig c,
                                           bool allow_node = false)
        {
            if (allow_node)
                only_keys(j, w,
                          {"node", "message_size", "message_sizes", "rate_per_s", "start_ms", "stop_ms",
                           "max_messages", "abort_after_ms", "push_every", "relay", "consume", "bouncer"});
            else
                only_keys(j, w,
                          {"message_size", "message_sizes", "rate_per_s", "start_ms", "stop_ms", "max_messages",
                           "abort_after_ms", "push_every", "relay", "consume", "bouncer"});
            if (j.contains("message_size") && j.contains("message_sizes"))
                fail(w, "give either message_size or message_sizes");
            if (j.contains("message_size"))
                c.message_sizes = {get<std::size_t>(j, "message_size", w, 0)};
            if (j.contains("message_sizes"))
                c.message_sizes = get<std::vector<std::size_t>>(j, "message_sizes", w, {});
            c.rate_per_s = get<double>(j, "rate_per_s", w, c.rate_per_s);
            c.start = at(j, "start_ms", w, c.start);
            if (j.contains("stop_ms"))
                c.stop = opt_at(j, "stop_ms", w);
            if (j.contains("max_messages"))
                c.max_messages = j.at("max_messages").is_null()
                                     ? std::nullopt
                                     : std::optional(get<std::uint64_t>(j, "max_messages", w, 0));
            if (j.contains("abort_after_ms"))
                c.abort_after = opt_ms(j, "abort_after_ms", w);
            c.push_every = get<std::uint32_t>(j, "push_every", w, c.push_every);
            c.relay = get<bool>(j, "relay", w, c.relay);
            c.consume = get<bool>(j, "consume", w, c.consume);
            if (j.contains("bouncer"))
            {
                const auto& b = j.at("bouncer");
                auto bw = w + ".bouncer";
                only_keys(b, bw, {"kind", "reject", "at_ms"});
                auto kind = require<std::string>(b, "kind", bw);
                BouncerConfig bc;
                if (kind == "accept_all")
                {
                    bc.kind = BouncerConfig::Kind::AcceptAll;
                }
                else if (kind == "reject_set")
                {
                    bc.kind = BouncerConfig::Kind::RejectSet;
                    if (b.contains("reject"))
                    {
                        if (!b.at("reject").is_array())
                            fail(bw, "'reject' must be an array");
                        for (const auto& r : b.at("reject"))
                        {
                            only_keys(r, bw + ".reject", {"origin", "seq"});
                            bc.rejected.push_back(MessageOrigin{node(r, "origin", bw),
                                                                require<std::uint64_t>(r, "seq", bw)});
                        }
                    }
                }
                else if (kind == "accept_after")
                {
                    bc.kind = BouncerConfig::Kind::AcceptAfter;
                    bc.accept_after = TimePoint{ms(require<std::int64_t>(b, "at_ms", bw))};
                }
                else
                {
                    fail(bw, "unknown bouncer kind '" + kind + "'");
                }
                c.bouncer = bc;
            }
            return c;
        }

        inline json mock_json(const MockClientConfig& c)
        {
            json j{{"message_sizes", c.message_sizes},
                   {"rate_per_s", c.rate_per_s},
                   {"start_ms", out_ms(c.start)},
                   {"push_every", c.push_every},
                   {"relay", c.relay},
                   {"consume", c.consume}};
            j["stop_ms"] = c.stop ? json(out_ms(*c.stop)) : json(nullptr);
            j["max_messages"] = c.max_messages ? json(*c.max_messages) : json(nullptr);
            j["abort_after_ms"] = c.abort_after ? json(out_ms(*c.abort_after)) : json(nullptr);
            json b;
            switch (c.bouncer.kind)
            {
            case BouncerConfig::Kind::AcceptAll:
                b = json{{"kind", "accept_all"}};
                break;
            case BouncerConfig::Kind::RejectSet:
            {
                b = json{{"kind", "reject_set"}, {"reject", json::array()}};
                for (const auto& r : c.bouncer.rejected)
                    b["reject"].push_back(json{{"origin", r.origin.value}, {"seq", r.seq}});
                break;
            }
            case BouncerConfig::Kind::AcceptAfter:
                b = json{{"kind", "accept_after"}, {"at_ms", out_ms(c.bouncer.accept_after)}};
                break;
            }
            j["bouncer"] = b;
            return j;
        }

        inline Adversary parse_adversary(const json& j, const std::string& w)
        {
            Adversary a;
            auto kind = require<std::string>(j, "kind", w);
            a.node = node(j, "node", w);
            if (kind == "flooder")
            {
                only_keys(j, w,
                          {"kind", "node", "victims", "updates_per_second", "violating_fraction", "start_ms",
                           "stop_ms", "step_ms", "advertised_size"});
                a.kind = Adversary::Kind::Flooder;
                auto& f = a.flooder;
                f.victims = nodes(j, "victims", w);
                f.updates_per_second = get<double>(j, "updates_per_second", w, f.updates_per_second);
                f.violating_fraction = get<double>(j, "violating_fraction", w, f.violating_fraction);
                f.start = at(j, "start_ms", w, f.start);
                if (j.contains("stop_ms"))
                    f.stop = opt_at(j, "stop_ms", w);
                f.step = get_ms(j, "step_ms", w, f.step);
                f.advertised_size = get<std::uint64_t>(j, "advertised_size", w, f.advertised_size);
            }
            else if (kind == "silent_advertiser")
            {
                only_keys(j, w, {"kind", "node"});
                a.kind = Adversary::Kind::SilentAdvertiser;
            }
            else if (kind == "equivocator")
            {
                only_keys(j, w, {"kind", "node", "victims", "at_ms", "message_size"});
                a.kind = Adversary::Kind::Equivocator;
                a.equivocator.victims = nodes(j, "victims", w);
                a.equivocator.at = at(j, "at_ms", w, a.equivocator.at);
                a.equivocator.message_size = get<std::size_t>(j, "message_size", w, a.equivocator.message_size);
            }
            else if (kind == "crasher")
            {
                only_keys(j, w, {"kind", "node", "crash_ms", "restart_ms"});
                a.kind = Adversary::Kind::Crasher;
                a.crash_at = TimePoint{ms(require<std::int64_t>(j, "crash_ms", w))};
                if (j.contains("restart_ms"))
                    a.restart_at = opt_at(j, "restart_ms", w);
            }
            else
            {
                fail(w, "unknown adversary kind '" + kind + "'");
            }
            return a;
        }

        inline json adversary_json(const Adversary& a)
        {
            switch (a.kind)
            {
            case Adversary::Kind::Flooder:
            {
                const auto& f = a.flooder;
                json j{{"kind", "flooder"},
                       {"node", a.node.value},
                       {"victims", nodes_json(f.victims)},
                       {"updates_per_second", f.updates_per_second},
                       {"violating_fraction", f.violating_fraction},
                       {"start_ms", out_ms(f.start)},
                       {"step_ms", out_ms(f.step)},
                       {"advertised_size", f.advertised_size}};
                j["stop_ms"] = f.stop ? json(out_ms(*f.stop)) : json(nullptr);
                return j;
            }
            case Adversary::Kind::SilentAdvertiser:
                return json{{"kind", "silent_advertiser"}, {"node", a.node.value}};
            case Adversary::Kind::Equivocator:
                return json{{"kind", "equivocator"},
                            {"node", a.node.value},
                            {"victims", nodes_json(a.equivocator.victims)},
                            {"at_ms", out_ms(a.equivocator.at)},
                            {"message_size", a.equivocator.message_size}};
            case Adversary::Kind::Crasher:
            {
                json j{{"kind", "crasher"}, {"node", a.node.value}, {"crash_ms", out_ms(a.crash_at)}};
                j["restart_ms"] = a.restart_at ? json(out_ms(*a.restart_at)) : json(nullptr);
                return j;
            }
            }
            return {};
        }

        inline Fault parse_fault(const json& j, const std::string& w)
        {
            Fault f;
            auto kind = require<std::string>(j, "kind", w);
            if (kind == "random_link_failures")
            {
                only_keys(j, w, {"kind", "start_ms", "end_ms", "interval_ms", "probability", "duration_ms"});
                f.kind = Fault::Kind::RandomLinkFailures;
                auto& r = f.random;
                r.start = at(j, "start_ms", w, r.start);
                r.end = TimePoint{ms(require<std::int64_t>(j, "end_ms", w))};
                r.interval = get_ms(j, "interval_ms", w, r.interval);
                r.probability = get<double>(j, "probability", w, r.probability);
                r.duration = get_ms(j, "duration_ms", w, r.duration);
            }
            else if (kind == "node_offline")
            {
                only_keys(j, w, {"kind", "node", "at_ms", "duration_ms"});
                f.kind = Fault::Kind::NodeOffline;
                f.node = node(j, "node", w);
                f.at = TimePoint{ms(require<std::int64_t>(j, "at_ms", w))};
                f.duration = ms(require<std::int64_t>(j, "duration_ms", w));
            }
            else if (kind == "link_down")
            {
                only_keys(j, w, {"kind", "a", "b", "at_ms", "duration_ms"});
                f.kind = Fault::Kind::LinkDown;
                f.node = node(j, "a", w);
                f.peer = node(j, "b", w);
                f.at = TimePoint{ms(require<std::int64_t>(j, "at_ms", w))};
                f.duration = ms(require<std::int64_t>(j, "duration_ms", w));
            }
            else if (kind == "crash")
            {
                only_keys(j, w, {"kind", "node", "at_ms", "restart_ms"});
                f.kind = Fault::Kind::Crash;
                f.node = node(j, "node", w);
                f.at = TimePoint{ms(require<std::int64_t>(j, "at_ms", w))};
                if (j.contains("restart_ms"))
                    f.restart_at = opt_at(j, "restart_ms", w);
            }
            else
            {
                fail(w, "unknown fault kind '" + kind + "'");
            }
            return f;
        }

        inline json fault_json(const Fault& f)
        {
            switch (f.kind)
            {
            case Fault::Kind::RandomLinkFailures:
                return json{{"kind", "random_link_failures"},
                            {"start_ms", out_ms(f.random.start)},
                            {"end_ms", out_ms(f.random.end)},
                            {"interval_ms", out_ms(f.random.interval)},
                            {"probability", f.random.probability},
                            {"duration_ms", out_ms(f.random.duration)}};
            case Fault::Kind::NodeOffline:
                return json{{"kind", "node_offline"},
                            {"node", f.node.value},
                            {"at_ms", out_ms(f.at)},
                            {"duration_ms", out_ms(f.duration)}};
            case Fault::Kind::LinkDown:
                return json{{"kind", "link_down"},
                            {"a", f.node.value},
                            {"b", f.peer.value},
                            {"at_ms", out_ms(f.at)},
                            {"duration_ms", out_ms(f.duration)}};
            case Fault::Kind::Crash:
            {
                json j{{"kind", "crash"}, {"node", f.node.value}, {"at_ms", out_ms(f.at)}};
                j["restart_ms"] = f.restart_at ? json(out_ms(*f.restart_at)) : json(nullptr);
                return j;
            }
            }
            return {};
        }

        inline void check_node(const Scenario& s, PeerId p, const std::string& where)
        {
            if (p.value >= s.n)
                throw Error(ErrorCode::InvalidConfig, where + ": node " + std::to_string(p.value) + " out of range");
        }
    } // namespace detail

    // Structural checks beyond parsing.
    inline void validate(const Scenario& s)
    {
        auto bad = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
        if (s.name.empty())
            bad("scenario name is empty");
        if (s.n < 2)
            bad("n must be at least 2");
        if (s.duration <= Duration::zero())
            bad("duration must be positive");
        if (s.sample_interval <= Duration::zero())
            bad("sample_interval must be positive");
        s.engine.validate();
        s.uniform_link.validate();
        for (const auto& o : s.link_overrides)
        {
            detail::check_node(s, o.a, "link override");
            detail::check_node(s, o.b, "link override");
            if (o.a == o.b)
                bad("link override needs two distinct nodes");
            o.model.validate();
        }
        s.default_workload.validate(s.engine.slot_capacity);
        for (const auto& w : s.per_node)
        {
            detail::check_node(s, w.node, "workload");
            w.config.validate(s.engine.slot_capacity);
        }
        for (const auto& o : s.nodes)
            detail::check_node(s, o.node, "node override");
        std::set<PeerId> seen;
        for (const auto& a : s.adversaries)
        {
            detail::check_node(s, a.node, "adversary");
            if (!seen.insert(a.node).second)
                bad("node " + std::to_string(a.node.value) + " has two adversary roles");
            for (auto v : a.flooder.victims)
                detail::check_node(s, v, "flooder victim");
            for (auto v : a.equivocator.victims)
                detail::check_node(s, v, "equivocator victim");
            if (a.kind == Adversary::Kind::Flooder)
            {
                if (a.flooder.updates_per_second <= 0.0)
                    bad("flooder rate must be positive");
                if (a.flooder.violating_fraction < 0.0 || a.flooder.violating_fraction > 1.0)
                    bad("violating_fraction must be within [0, 1]");
                if (a.flooder.step <= Duration::zero())
                    bad("flooder step must be positive");
            }
            if (a.kind == Adversary::Kind::Crasher && a.restart_at && *a.restart_at < a.crash_at)
                bad("crasher restarts before it crashes");
        }
        if (3 * s.adversaries.size() >= s.n)
            bad("adversary count must stay below n/3");
        for (const auto& f : s.faults)
        {
            switch (f.kind)
            {
            case Fault::Kind::RandomLinkFailures:
                if (f.random.interval <= Duration::zero() || f.random.end < f.random.start)
                    bad("random_link_failures needs a positive interval and end >= start");
                if (f.random.probability < 0.0 || f.random.probability > 1.0)
                    bad("random_link_failures probability must be within [0, 1]");
                break;
            case Fault::Kind::LinkDown:
                detail::check_node(s, f.peer, "fault");
                if (f.peer == f.node)
                    bad("link_down needs two distinct nodes");
                [[fallthrough]];
            case Fault::Kind::NodeOffline:
            case Fault::Kind::Crash:
                detail::check_node(s, f.node, "fault");
                if (f.restart_at && *f.restart_at < f.at)
                    bad("restart precedes crash");
                break;
            }
        }
        for (const auto& a : s.assertions)
        {
            if (a.kind.empty())
                bad("assertion without kind");
            for (const auto& m : a.modes)
            {
                if (m != "full" && m != "baseline")
                    bad("assertion mode must be 'full' or 'baseline'");
            }
        }
    }

    inline Scenario from_json(const json& j)
    {
        using namespace detail;
        const std::string w = "scenario";
        only_keys(j, w,
                  {"name", "description", "experiment", "n", "seed", "duration_ms", "sample_interval_ms",
                   "missing_grace_ms", "reconnect_delay_ms", "mode", "event_log", "engine", "links", "workload",
                   "nodes", "adversaries", "faults", "assertions"});
        Scenario s;
        s.name = require<std::string>(j, "name", w);
        s.description = get<std::string>(j, "description", w, "");
        s.experiment = get<std::string>(j, "experiment", w, "");
        s.n = require<std::size_t>(j, "n", w);
        s.seed = get<std::uint64_t>(j, "seed", w, s.seed);
        if (!j.contains("duration_ms"))
            fail(w, "missing 'duration_ms'");
        s.duration = get_ms(j, "duration_ms", w, {});
        s.sample_interval = get_ms(j, "sample_interval_ms", w, s.sample_interval);
        s.missing_grace = get_ms(j, "missing_grace_ms", w, s.missing_grace);
        s.reconnect_delay = get_ms(j, "reconnect_delay_ms", w, s.reconnect_delay);
        auto mode = get<std::string>(j, "mode", w, "full");
        if (mode == "full")
            s.mode = EngineMode::Full;
        else if (mode == "baseline")
            s.mode = EngineMode::NoRetransmitBaseline;
        else
            fail(w, "mode must be 'full' or 'baseline'");
        s.event_log = get<bool>(j, "event_log", w, s.event_log);
        if (j.contains("engine"))
            s.engine = parse_engine(j.at("engine"));
        s.engine.mode = s.mode;
        if (j.contains("links"))
        {
            const auto& l = j.at("links");
            only_keys(l, "links", {"uniform", "overrides"});
            if (l.contains("uniform"))
            {
                only_keys(l.at("uniform"), "links.uniform",
                          {"latency_ms", "bandwidth_bytes_per_ms", "drop_probability", "duplicate_probability",
                           "jitter_ms", "up"});
                parse_link_fields(l.at("uniform"), "links.uniform", s.uniform_link);
            }
            if (l.contains("overrides"))
            {
                for (const auto& o : l.at("overrides"))
                {
                    only_keys(o, "links.overrides",
                              {"a", "b", "latency_ms", "bandwidth_bytes_per_ms", "drop_probability",
                               "duplicate_probability", "jitter_ms", "up"});
                    LinkOverride lo{node(o, "a", "links.overrides"), node(o, "b", "links.overrides"),
                                    s.uniform_link};
                    parse_link_fields(o, "links.overrides", lo.model);
                    s.link_overrides.push_back(lo);
                }
            }
        }
        if (j.contains("workload"))
        {
            const auto& wl = j.at("workload");
            only_keys(wl, "workload", {"default", "per_node"});
            if (wl.contains("default"))
                s.default_workload = parse_mock(wl.at("default"), "workload.default", MockClientConfig{});
            if (wl.contains("per_node"))
            {
                for (const auto& p : wl.at("per_node"))
                {
                    NodeWorkload nw{node(p, "node", "workload.per_node"),
                                    parse_mock(p, "workload.per_node", s.default_workload, true)};
                    s.per_node.push_back(nw);
                }
            }
        }
        if (j.contains("nodes"))
        {
            for (const auto& o : j.at("nodes"))
            {
                only_keys(o, "nodes", {"node", "bounded"});
                s.nodes.push_back(NodeOverride{node(o, "node", "nodes"), get<bool>(o, "bounded", "nodes", true)});
            }
        }
        if (j.contains("adversaries"))
        {
            for (const auto& a : j.at("adversaries"))
                s.adversaries.push_back(parse_adversary(a, "adversaries"));
        }
        if (j.contains("faults"))
        {
            for (const auto& f : j.at("faults"))
                s.faults.push_back(parse_fault(f, "faults"));
        }
        if (j.contains("assertions"))
        {
            for (const auto& a : j.at("assertions"))
            {
                if (!a.is_object())
                    fail("assertions", "expected an object");
                Assertion as;
                as.kind = require<std::string>(a, "kind", "assertions");
                as.modes = get<std::vector<std::string>>(a, "modes", "assertions", {});
                for (const auto& [k, v] : a.items())
                {
                    if (k != "kind" && k != "modes")
                        as.params[k] = v;
                }
                s.assertions.push_back(std::move(as));
            }
        }
        validate(s);
        return s;
    }

    inline json to_json(const Scenario& s)
    {
        using namespace detail;
        json j{{"name", s.name},
               {"description", s.description},
               {"experiment", s.experiment},
               {"n", s.n},
               {"seed", s.seed},
               {"duration_ms", out_ms(s.duration)},
               {"sample_interval_ms", out_ms(s.sample_interval)},
               {"missing_grace_ms", out_ms(s.missing_grace)},
               {"reconnect_delay_ms", out_ms(s.reconnect_delay)},
               {"mode", s.mode == EngineMode::Full ? "full" : "baseline"},
               {"event_log", s.event_log},
               {"engine", engine_json(s.engine)}};
        json links{{"uniform", link_json(s.uniform_link)}, {"overrides", json::array()}};
        for (const auto& o : s.link_overrides)
        {
            auto lj = link_json(o.model);
            lj["a"] = o.a.value;
            lj["b"] = o.b.value;
            links["overrides"].push_back(lj);
        }
        j["links"] = links;
        json wl{{"default", mock_json(s.default_workload)}, {"per_node", json::array()}};
        for (const auto& p : s.per_node)
        {
            auto pj = mock_json(p.config);
            pj["node"] = p.node.value;
            wl["per_node"].push_back(pj);
        }
        j["workload"] = wl;
        j["nodes"] = json::array();
        for (const auto& o : s.nodes)
            j["nodes"].push_back(json{{"node", o.node.value}, {"bounded", o.bounded}});
        j["adversaries"] = json::array();
        for (const auto& a : s.adversaries)
            j["adversaries"].push_back(adversary_json(a));
        j["faults"] = json::array();
        for (const auto& f : s.faults)
            j["faults"].push_back(fault_json(f));
        j["assertions"] = json::array();
        for (const auto& a : s.assertions)
        {
            json aj = a.params;
            aj["kind"] = a.kind;
            if (!a.modes.empty())
                aj["modes"] = a.modes;
            j["assertions"].push_back(aj);
        }
        return j;
    }

    inline Scenario parse(std::string_view text)
    {
        json j;
        try
        {
            j = json::parse(text);
        }
        catch (const json::parse_error& e)
        {
            throw Error(ErrorCode::Parse, std::string("invalid JSON: ") + e.what());
        }
        return from_json(j);
    }

    inline Scenario load(const std::string& path)
    {
        std::ifstream in(path);
        if (!in)
            throw Error(ErrorCode::Parse, "cannot open " + path);
        std::stringstream buf;
        buf << in.rdbuf();
        return parse(buf.str());
    }

    inline std::string serialize(const Scenario& s) { return to_json(s).dump(2) + "\n"; }
} // namespace abcast::scenario
