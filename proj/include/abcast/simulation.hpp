#pragma once

// Scenario runner: builds the simulated network from a Scenario, runs it to its
// duration, samples metrics and evaluates the declared assertions.

#include "abcast/adversaries.hpp"
#include "abcast/clients.hpp"
#include "abcast/engine.hpp"
#include "abcast/metrics.hpp"
#include "abcast/scenario.hpp"
#include "abcast/sim_net.hpp"

#include <json.hpp>

#include <memory>
#include <random>
#include <string>
#include <vector>

namespace abcast
{
    struct RunOptions
    {
        std::optional<std::uint64_t> seed;
        std::optional<EngineMode> mode;
        std::optional<Duration> sample_interval;
    };

    struct AssertionResult
    {
        std::string kind;
        bool passed = false;
        std::string detail;
    };

    struct RunResult
    {
        std::string csv;
        std::string events;
        std::vector<AssertionResult> assertions;
        nlohmann::json summary;

        [[nodiscard]] bool passed() const
        {
            for (const auto& a : assertions)
            {
                if (!a.passed)
                    return false;
            }
            return true;
        }
    };

    class Simulation
    {
    public:
        explicit Simulation(scenario::Scenario s, RunOptions options = {})
            : scn_(apply(std::move(s), options)), log_(scn_.event_log),
              net_(queue_, scn_.n, scn_.uniform_link, scn_.seed, sim::NetConfig{scn_.reconnect_delay})
        {
            scenario::validate(scn_);
            build();
        }

        Simulation(const Simulation&) = delete;
        Simulation& operator=(const Simulation&) = delete;

        // Connects the network and starts every node; called once, before running.
        void start()
        {
            if (started_)
                return;
            started_ = true;
            net_.start();
            for (auto& h : hosts_)
            {
                if (h.engine)
                    h.engine->start();
                if (h.flooder)
                    h.flooder->start();
                if (h.equivocator)
                    h.equivocator->start();
            }
        }

        void run_until(TimePoint t)
        {
            start();
            queue_.run_until(t);
        }

        RunResult run()
        {
            run_until(end());
            return finish();
        }

        [[nodiscard]] TimePoint end() const noexcept { return TimePoint{scn_.duration}; }

        RunResult finish()
        {
            RunResult r;
            auto final_row = metrics_->summary_row(queue_.now(), total_violations(), total_rate_limited());
            r.csv = metrics_->csv(final_row);
            for (const auto& a : scn_.assertions)
            {
                if (!a.modes.empty() && std::find(a.modes.begin(), a.modes.end(), mode_name()) == a.modes.end())
                    continue;
                auto res = evaluate(a, final_row);
                log_.record(queue_.now(), std::nullopt, "assert",
                            res.kind + " " + (res.passed ? "pass" : "fail") + " " + res.detail);
                r.assertions.push_back(std::move(res));
            }
            r.events = log_.str();
            r.summary = summary(r, final_row);
            return r;
        }

        [[nodiscard]] const scenario::Scenario& scenario() const noexcept { return scn_; }
        [[nodiscard]] sim::EventQueue& queue() noexcept { return queue_; }
        [[nodiscard]] sim::Network& network() noexcept { return net_; }
        [[nodiscard]] RunMetrics& metrics() noexcept { return *metrics_; }
        [[nodiscard]] const MessageRegistry& registry() const noexcept { return registry_; }
        [[nodiscard]] std::size_t size() const noexcept { return hosts_.size(); }

        [[nodiscard]] Engine* engine(PeerId p) { return hosts_.at(p.value).engine.get(); }
        [[nodiscard]] MockClient* client(PeerId p) { return hosts_.at(p.value).client.get(); }
        [[nodiscard]] ValidatedPool* validated(PeerId p) { return hosts_.at(p.value).validated.get(); }
        [[nodiscard]] FlooderEndpoint* flooder(PeerId p) { return hosts_.at(p.value).flooder.get(); }
        [[nodiscard]] EquivocatorEndpoint* equivocator(PeerId p) { return hosts_.at(p.value).equivocator.get(); }

        [[nodiscard]] std::uint64_t violations(PeerId p) const
        {
            const auto& h = hosts_.at(p.value);
            return h.retired_violations + (h.engine ? h.engine->downloads().stats().protocol_violations : 0);
        }

        [[nodiscard]] std::uint64_t rate_limited(PeerId p) const
        {
            const auto& h = hosts_.at(p.value);
            return h.retired_rate_limited + (h.engine ? h.engine->downloads().stats().rate_limited : 0);
        }

        [[nodiscard]] std::size_t tracked(PeerId p) const
        {
            const auto& h = hosts_.at(p.value);
            return h.engine ? h.engine->downloads().tracked_entries() : 0;
        }

        // Receive-side bound for a bounded engine: C * (n - 1) slots plus the in-flight allowance.
        [[nodiscard]] std::size_t tracked_bound() const noexcept
        {
            return (scn_.n - 1) * (scn_.engine.slot_capacity + scn_.engine.max_concurrent_streams_per_peer);
        }

        // Retransmit period + 3 one-way latencies + download timeout + serialization of the
        // advert, pull request and largest pull response on the uniform link.
        [[nodiscard]] Duration delivery_bound() const
        {
            std::size_t largest = 0;
            for (std::uint32_t i = 0; i < scn_.n; ++i)
            {
                for (auto sz : scn_.workload(PeerId{i}).message_sizes)
                    largest = std::max(largest, sz);
            }
            const auto& link = scn_.uniform_link;
            auto ser = link.serialization(wire::advert_frame_size()) + link.serialization(wire::pull_request_size()) +
                       link.serialization(std::max(wire::pull_response_size(largest), wire::push_frame_size(largest)));
            return scn_.engine.retransmit_period + 3 * link.one_way_latency + scn_.engine.download_timeout + ser;
        }

    private:
        struct Host final : sim::Endpoint
        {
            Simulation* sim = nullptr;
            PeerId id;
            EngineConfig cfg;
            EngineBehavior behavior;
            std::unique_ptr<sim::NodeTransport> transport;
            std::unique_ptr<ValidatedPool> validated;
            std::unique_ptr<MockClient> client;
            std::unique_ptr<Engine> engine;
            std::unique_ptr<FlooderEndpoint> flooder;
            std::unique_ptr<EquivocatorEndpoint> equivocator;
            std::uint64_t incarnations = 0;
            std::uint64_t retired_violations = 0;
            std::uint64_t retired_rate_limited = 0;
            std::size_t retired_peak = 0;

            void on_frame(PeerId from, ConnectionId conn, std::span<const std::byte> frame) override
            {
                if (engine)
                    engine->on_frame(from, conn, frame);
                else if (flooder)
                    flooder->on_frame(from, conn, frame);
                else if (equivocator)
                    equivocator->on_frame(from, conn, frame);
            }
        };

        static scenario::Scenario apply(scenario::Scenario s, const RunOptions& o)
        {
            if (o.seed)
                s.seed = *o.seed;
            if (o.mode)
            {
                s.mode = *o.mode;
                s.engine.mode = *o.mode;
            }
            if (o.sample_interval)
                s.sample_interval = *o.sample_interval;
            return s;
        }

        [[nodiscard]] std::string mode_name() const { return scn_.mode == EngineMode::Full ? "full" : "baseline"; }

        void build()
        {
            net_.set_log(&log_);
            for (const auto& o : scn_.link_overrides)
                net_.set_link(o.a, o.b, o.model);

            std::vector<bool> honest(scn_.n);
            for (std::uint32_t i = 0; i < scn_.n; ++i)
                honest[i] = scn_.honest(PeerId{i});
            metrics_ = std::make_unique<RunMetrics>(
                scn_.n, honest,
                [this](PeerId r, const MessageId& id, TimePoint t) {
                    const auto& h = hosts_[r.value];
                    if (!h.client)
                        return false;
                    return h.client->config().bouncer.verdict(registry_.origin(id), t) == Verdict::Accept;
                },
                scn_.missing_grace);
            net_.set_observer(metrics_.get());

            std::vector<PeerId> members;
            for (std::uint32_t i = 0; i < scn_.n; ++i)
                members.push_back(PeerId{i});
            members_ = members;

            hosts_.resize(scn_.n);
            for (std::uint32_t i = 0; i < scn_.n; ++i)
            {
                PeerId id{i};
                auto& h = hosts_[i];
                h.sim = this;
                h.id = id;
                h.cfg = scn_.engine;
                h.cfg.bounded_receive_tables = scn_.bounded(id);
                const auto* adv = scn_.adversary(id);
                if (adv && adv->kind == scenario::Adversary::Kind::Flooder)
                {
                    h.flooder = std::make_unique<FlooderEndpoint>(net_, id, scn_.engine.slot_capacity, adv->flooder,
                                                                  scn_.seed * 31 + i);
                }
                else if (adv && adv->kind == scenario::Adversary::Kind::Equivocator)
                {
                    h.equivocator = std::make_unique<EquivocatorEndpoint>(net_, id, adv->equivocator);
                }
                else
                {
                    auto wl = scn_.workload(id);
                    if (adv && adv->kind == scenario::Adversary::Kind::SilentAdvertiser)
                    {
                        h.behavior.serve_pulls = false;
                        wl.relay = true;
                    }
                    h.transport = std::make_unique<sim::NodeTransport>(net_, id);
                    h.validated = std::make_unique<ValidatedPool>(scn_.engine.slot_capacity);
                    h.client = std::make_unique<MockClient>(id, wl, scn_.seed, &registry_);
                    make_engine(h);
                }
                net_.attach(id, &h);
            }

            net_.on_crash = [this](PeerId p) { on_crash(p); };
            net_.on_restart = [this](PeerId p) { on_restart(p); };

            for (const auto& a : scn_.adversaries)
            {
                if (a.kind == scenario::Adversary::Kind::Crasher)
                    net_.inject_fault(sim::CrashFault{a.node, a.crash_at, a.restart_at});
            }
            inject_faults();

            for (auto t = scn_.sample_interval; t <= scn_.duration; t += scn_.sample_interval)
                queue_.schedule(TimePoint{t}, sim::EventKind::Timer, [this] { take_sample(); });
        }

        void make_engine(Host& h)
        {
            auto seed = scn_.seed * 1000003 + h.id.value * 7919 + h.incarnations++;
            h.engine = std::make_unique<Engine>(h.cfg, h.id, members_, *h.transport, *h.client, *h.validated, seed,
                                                metrics_.get(), h.behavior);
        }

        void on_crash(PeerId p)
        {
            auto& h = hosts_[p.value];
            if (!h.engine)
                return;
            const auto& st = h.engine->downloads().stats();
            h.retired_violations += st.protocol_violations;
            h.retired_rate_limited += st.rate_limited;
            metrics_->note_tracked(p, h.engine->downloads().peak_tracked_entries());
            h.engine.reset();
        }

        void on_restart(PeerId p)
        {
            auto& h = hosts_[p.value];
            if (!h.client)
                return;
            make_engine(h);
            h.engine->start(true);
        }

        void inject_faults()
        {
            std::mt19937_64 rng(scn_.seed ^ 0xfa017ULL);
            for (const auto& f : scn_.faults)
            {
                switch (f.kind)
                {
                case scenario::Fault::Kind::RandomLinkFailures:
                    for (auto t = f.random.start; t < f.random.end; t += f.random.interval)
                    {
                        for (std::uint32_t i = 0; i < scn_.n; ++i)
                        {
                            if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < f.random.probability)
                                net_.inject_fault(sim::NodeNetworkFault{PeerId{i}, t, f.random.duration});
                        }
                    }
                    break;
                case scenario::Fault::Kind::NodeOffline:
                    net_.inject_fault(sim::NodeNetworkFault{f.node, f.at, f.duration});
                    break;
                case scenario::Fault::Kind::LinkDown:
                    net_.inject_fault(sim::LinkFault{f.node, f.peer, f.at, f.duration});
                    break;
                case scenario::Fault::Kind::Crash:
                    net_.inject_fault(sim::CrashFault{f.node, f.at, f.restart_at});
                    break;
                }
            }
        }

        void take_sample()
        {
            std::vector<std::uint64_t> tracked(scn_.n, 0);
            for (std::uint32_t i = 0; i < scn_.n; ++i)
            {
                const auto& h = hosts_[i];
                if (!h.engine)
                    continue;
                tracked[i] = h.engine->downloads().tracked_entries();
                metrics_->note_tracked(PeerId{i}, h.engine->downloads().peak_tracked_entries());
            }
            metrics_->sample(queue_.now(), std::move(tracked), total_violations(), total_rate_limited());
        }

        [[nodiscard]] std::uint64_t total_violations() const
        {
            std::uint64_t v = 0;
            for (std::uint32_t i = 0; i < scn_.n; ++i)
                v += violations(PeerId{i});
            return v;
        }

        [[nodiscard]] std::uint64_t total_rate_limited() const
        {
            std::uint64_t v = 0;
            for (std::uint32_t i = 0; i < scn_.n; ++i)
                v += rate_limited(PeerId{i});
            return v;
        }

        [[nodiscard]] std::vector<PeerId> assertion_nodes(const nlohmann::json& p) const
        {
            std::vector<PeerId> out;
            if (p.contains("nodes"))
            {
                for (auto v : p.at("nodes").get<std::vector<std::uint32_t>>())
                    out.push_back(PeerId{v});
                return out;
            }
            for (std::uint32_t i = 0; i < scn_.n; ++i)
            {
                if (scn_.honest(PeerId{i}))
                    out.push_back(PeerId{i});
            }
            return out;
        }

        static std::uint64_t missing_of(const Sample& s, const std::vector<PeerId>& nodes)
        {
            std::uint64_t t = 0;
            for (auto p : nodes)
                t += s.missing.at(p.value);
            return t;
        }

        static bool compare(const std::string& op, double lhs, double rhs)
        {
            if (op == "eq")
                return lhs == rhs;
            if (op == "gt")
                return lhs > rhs;
            if (op == "ge")
                return lhs >= rhs;
            if (op == "lt")
                return lhs < rhs;
            if (op == "le")
                return lhs <= rhs;
            throw Error(ErrorCode::InvalidConfig, "unknown comparison '" + op + "'");
        }

        AssertionResult evaluate(const scenario::Assertion& a, const Sample& final_row)
        {
            AssertionResult r{a.kind, false, ""};
            const auto& p = a.params;
            auto get_i = [&](const char* k, std::int64_t fallback) {
                return p.contains(k) ? p.at(k).get<std::int64_t>() : fallback;
            };
            auto get_d = [&](const char* k, double fallback) {
                return p.contains(k) ? p.at(k).get<double>() : fallback;
            };
            const auto& samples = metrics_->samples();

            if (a.kind == "final_missing")
            {
                auto nodes = assertion_nodes(p);
                auto op = p.value("op", std::string("eq"));
                auto value = get_d("value", 0.0);
                auto m = missing_of(final_row, nodes);
                r.passed = compare(op, static_cast<double>(m), value);
                r.detail = "missing=" + std::to_string(m) + " " + op + " " + std::to_string(value);
            }
            else if (a.kind == "missing_zero_within")
            {
                auto nodes = assertion_nodes(p);
                auto after = at_ms(get_i("after_ms", 0));
                auto deadline = after + ms(get_i("within_ms", 0));
                std::optional<TimePoint> zero_since;
                std::vector<const Sample*> rows;
                for (const auto& s : samples)
                    rows.push_back(&s);
                rows.push_back(&final_row);
                for (const auto* s : rows)
                {
                    if (s->at < after)
                        continue;
                    if (missing_of(*s, nodes) == 0)
                    {
                        if (!zero_since)
                            zero_since = s->at;
                    }
                    else
                    {
                        zero_since.reset();
                    }
                }
                r.passed = zero_since && *zero_since <= deadline;
                r.detail = zero_since ? "zero from " + std::to_string(to_ms(*zero_since)) + " ms, deadline " +
                                            std::to_string(to_ms(deadline)) + " ms"
                                      : "never settled at zero";
            }
            else if (a.kind == "missing_never_zero_after")
            {
                auto nodes = assertion_nodes(p);
                auto after = at_ms(get_i("after_ms", 0));
                std::size_t checked = 0;
                std::optional<TimePoint> zero_at;
                for (const auto& s : samples)
                {
                    if (s.at < after)
                        continue;
                    ++checked;
                    if (missing_of(s, nodes) == 0 && !zero_at)
                        zero_at = s.at;
                }
                r.passed = checked > 0 && !zero_at;
                r.detail = zero_at ? "reached zero at " + std::to_string(to_ms(*zero_at)) + " ms"
                                   : "positive at all " + std::to_string(checked) + " samples";
            }
            else if (a.kind == "tracked_within_bound")
            {
                PeerId node{static_cast<std::uint32_t>(get_i("node", 0))};
                auto peak = metrics_->peak_tracked(node);
                r.passed = peak <= tracked_bound();
                r.detail = "peak=" + std::to_string(peak) + " bound=" + std::to_string(tracked_bound());
            }
            else if (a.kind == "tracked_exceeds_bound")
            {
                PeerId node{static_cast<std::uint32_t>(get_i("node", 0))};
                auto factor = get_d("factor", 10.0);
                auto now = tracked(node);
                r.passed = static_cast<double>(now) > factor * static_cast<double>(tracked_bound());
                r.detail = "tracked=" + std::to_string(now) + " threshold=" +
                           std::to_string(factor * static_cast<double>(tracked_bound()));
            }
            else if (a.kind == "violations_equal_out_of_range")
            {
                PeerId node{static_cast<std::uint32_t>(get_i("node", 0))};
                std::uint64_t expected = 0;
                for (const auto& h : hosts_)
                {
                    if (h.flooder)
                        expected += h.flooder->sent_violating(node);
                }
                auto got = violations(node);
                r.passed = got == expected && rate_limited(node) == 0;
                r.detail = "violations=" + std::to_string(got) + " out_of_range_sent=" + std::to_string(expected) +
                           " rate_limited=" + std::to_string(rate_limited(node));
            }
            else if (a.kind == "latency_within_delta")
            {
                auto delta = delivery_bound();
                auto worst = metrics_->latency_max();
                r.passed = metrics_->latency_samples() > 0 && worst <= delta;
                r.detail = "max_latency_us=" + std::to_string(worst.count()) +
                           " delta_us=" + std::to_string(delta.count()) +
                           " deliveries=" + std::to_string(metrics_->latency_samples());
            }
            else if (a.kind == "min_messages")
            {
                auto value = static_cast<std::uint64_t>(get_i("value", 0));
                r.passed = metrics_->created() >= value;
                r.detail = "created=" + std::to_string(metrics_->created());
            }
            else if (a.kind == "dedup_exact")
            {
                std::size_t checked = 0;
                std::size_t bad = 0;
                for (const auto& [id, rec] : metrics_->messages())
                {
                    if (!rec.created_at)
                        continue;
                    auto origin = registry_.origin(id);
                    for (std::uint32_t i = 0; i < scn_.n; ++i)
                    {
                        PeerId node{i};
                        if (!scn_.honest(node) || (origin && origin->origin == node))
                            continue;
                        ++checked;
                        if (metrics_->payload_receipts(node, id) != 1)
                            ++bad;
                    }
                }
                r.passed = checked > 0 && bad == 0;
                r.detail = "pairs=" + std::to_string(checked) + " not_exactly_once=" + std::to_string(bad);
            }
            else if (a.kind == "bytes_conserved")
            {
                std::size_t bad = 0;
                for (std::uint32_t i = 0; i < scn_.n; ++i)
                    bad += metrics_->bytes(PeerId{i}).conserved() ? 0 : 1;
                auto total = metrics_->total_bytes();
                r.passed = bad == 0 && total.sent > 0;
                r.detail = "sent=" + std::to_string(total.sent) + " goodput=" + std::to_string(total.goodput) +
                           " duplicate=" + std::to_string(total.duplicate) + " nodes_off=" + std::to_string(bad);
            }
            else if (a.kind == "pool_integrity")
            {
                std::size_t entries = 0;
                std::size_t bad = 0;
                for (const auto& h : hosts_)
                {
                    if (h.validated)
                    {
                        for (const auto& [id, e] : *h.validated)
                        {
                            ++entries;
                            bad += digest_of(e.message.payload()) == id ? 0 : 1;
                        }
                    }
                    if (h.engine)
                    {
                        for (const auto& [id, m] : h.engine->unvalidated())
                        {
                            ++entries;
                            bad += digest_of(m.payload()) == id ? 0 : 1;
                        }
                    }
                }
                r.passed = bad == 0;
                r.detail = "entries=" + std::to_string(entries) + " bad=" + std::to_string(bad);
            }
            else
            {
                r.detail = "unknown assertion kind";
            }
            return r;
        }

        nlohmann::json summary(const RunResult& r, const Sample& final_row) const
        {
            nlohmann::json j;
            j["scenario"] = scn_.name;
            j["mode"] = mode_name();
            j["seed"] = scn_.seed;
            j["duration_ms"] = to_ms(scn_.duration);
            j["passed"] = r.passed();
            j["messages_created"] = metrics_->created();
            j["deliveries"] = metrics_->deliveries();
            j["final_missing"] = final_row.missing_total();
            j["protocol_violations"] = final_row.protocol_violations;
            j["rate_limited"] = final_row.rate_limited;
            j["latency_max_ms"] = static_cast<double>(final_row.latency_max_us) / 1000.0;
            j["events_processed"] = queue_.processed();
            j["assertions"] = nlohmann::json::array();
            for (const auto& a : r.assertions)
                j["assertions"].push_back({{"kind", a.kind}, {"passed", a.passed}, {"detail", a.detail}});
            return j;
        }

        scenario::Scenario scn_;
        sim::EventQueue queue_;
        sim::EventLog log_;
        sim::Network net_;
        MessageRegistry registry_;
        std::unique_ptr<RunMetrics> metrics_;
        std::vector<PeerId> members_;
        std::vector<Host> hosts_;
        bool started_ = false;
    };
} // namespace abcast
