// Scenario runner CLI.
//
//   abcast_sim run <scenario|name> [--out DIR] [--seed N] [--mode full|baseline|no-retransmit-baseline]
//                  [--sample-interval MS]
//   abcast_sim list [--dir DIR]
//   abcast_sim describe <name> [--dir DIR]
//
// Exit codes: 0 all assertions passed, 1 an assertion failed, 2 the scenario did not
// parse or validate, 3 any other error (I/O, unknown name).

#include "abcast/simulation.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace abcast;

namespace
{
    constexpr int kAssertionsFailed = 1;
    constexpr int kInvalidScenario = 2;
    constexpr int kOtherError = 3;

    std::vector<fs::path> catalog(const fs::path& dir)
    {
        std::vector<fs::path> out;
        if (!fs::is_directory(dir))
            return out;
        for (const auto& e : fs::directory_iterator(dir))
        {
            if (e.is_regular_file() && e.path().extension() == ".json")
                out.push_back(e.path());
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    // A path to an existing file, or the stem of a bundled scenario.
    fs::path resolve(const std::string& what, const fs::path& dir)
    {
        if (fs::is_regular_file(what))
            return what;
        auto bundled = dir / (what + ".json");
        if (fs::is_regular_file(bundled))
            return bundled;
        std::string names;
        for (const auto& p : catalog(dir))
            names += "  " + p.stem().string() + "\n";
        throw std::runtime_error("unknown scenario '" + what + "'; valid names:\n" + names);
    }

    void write_file(const fs::path& path, const std::string& text)
    {
        std::ofstream out(path, std::ios::binary);
        if (!out)
            throw std::runtime_error("cannot write " + path.string());
        out << text;
    }

    std::string ms_text(Duration d) { return std::to_string(to_ms(d)) + " ms"; }

    void describe(const scenario::Scenario& s, std::ostream& out)
    {
        out << s.name << "\n";
        if (!s.experiment.empty())
            out << "  experiment: " << s.experiment << "\n";
        if (!s.description.empty())
            out << "  " << s.description << "\n";
        out << "  nodes: " << s.n << ", duration: " << ms_text(s.duration) << ", seed: " << s.seed
            << ", mode: " << to_string(s.mode) << "\n";
        out << "  engine: C=" << s.engine.slot_capacity << ", push_threshold=" << s.engine.push_threshold
            << " B, streams/peer=" << s.engine.max_concurrent_streams_per_peer
            << ", download_timeout=" << ms_text(s.engine.download_timeout) << "\n";
        out << "  links: latency " << ms_text(s.uniform_link.one_way_latency);
        if (s.uniform_link.bandwidth_bytes_per_ms)
            out << ", bandwidth " << *s.uniform_link.bandwidth_bytes_per_ms << " B/ms";
        out << ", " << s.link_overrides.size() << " overrides\n";
        const auto& w = s.default_workload;
        out << "  workload: " << w.rate_per_s << " msg/s, sizes";
        for (auto sz : w.message_sizes)
            out << " " << sz;
        out << " B";
        if (w.abort_after)
            out << ", abort after " << ms_text(*w.abort_after);
        if (w.relay)
            out << ", relay";
        out << ", " << s.per_node.size() << " per-node overrides\n";
        for (const auto& a : s.adversaries)
        {
            out << "  adversary node " << a.node.value << ": ";
            switch (a.kind)
            {
            case scenario::Adversary::Kind::Flooder:
                out << "flooder, " << a.flooder.updates_per_second << " updates/s per victim, violating fraction "
                    << a.flooder.violating_fraction << ", victims";
                for (auto v : a.flooder.victims)
                    out << " " << v.value;
                break;
            case scenario::Adversary::Kind::SilentAdvertiser:
                out << "silent advertiser (relays, never serves pulls)";
                break;
            case scenario::Adversary::Kind::Equivocator:
                out << "equivocator, victims";
                for (auto v : a.equivocator.victims)
                    out << " " << v.value;
                break;
            case scenario::Adversary::Kind::Crasher:
                out << "crasher, down at " << to_ms(a.crash_at) << " ms";
                if (a.restart_at)
                    out << ", back at " << to_ms(*a.restart_at) << " ms";
                break;
            }
            out << "\n";
        }
        for (const auto& n : s.nodes)
        {
            if (!n.bounded)
                out << "  node " << n.node.value << ": receive-side bounds disabled\n";
        }
        out << "  faults: " << s.faults.size() << ", assertions: " << s.assertions.size() << "\n";
    }
} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Deterministic simulator for the abortable broadcast engine"};
    app.require_subcommand(1);
    std::string dir = ABCAST_SCENARIO_DIR;

    auto* run = app.add_subcommand("run", "Run one scenario");
    std::string target;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::string mode;
    std::optional<std::int64_t> sample_ms;
    run->add_option("scenario", target, "Scenario file or bundled name")->required();
    run->add_option("--out", out_dir, "Output directory (default: out/<name>)");
    run->add_option("--seed", seed, "Override the scenario seed");
    run->add_option("--mode", mode, "Engine mode override")
        ->check(CLI::IsMember({"full", "baseline", "no-retransmit-baseline"}));
    run->add_option("--sample-interval", sample_ms, "Sample interval in ms")->check(CLI::PositiveNumber);
    run->add_option("--dir", dir, "Scenario catalog directory");

    auto* list = app.add_subcommand("list", "List bundled scenarios");
    list->add_option("--dir", dir, "Scenario catalog directory");

    auto* desc = app.add_subcommand("describe", "Describe a bundled scenario");
    std::string name;
    desc->add_option("name", name, "Scenario name or file")->required();
    desc->add_option("--dir", dir, "Scenario catalog directory");

    CLI11_PARSE(app, argc, argv);

    try
    {
        if (*list)
        {
            for (const auto& p : catalog(dir))
            {
                try
                {
                    auto s = scenario::load(p.string());
                    std::cout << p.stem().string() << "\t" << s.experiment << "\n";
                }
                catch (const Error& e)
                {
                    std::cout << p.stem().string() << "\tINVALID: " << e.what() << "\n";
                }
            }
            return 0;
        }

        if (*desc)
        {
            auto s = scenario::load(resolve(name, dir).string());
            describe(s, std::cout);
            return 0;
        }

        scenario::Scenario s;
        try
        {
            s = scenario::load(resolve(target, dir).string());
        }
        catch (const Error& e)
        {
            std::cerr << "invalid scenario: " << e.what() << "\n";
            return kInvalidScenario;
        }

        RunOptions opts;
        opts.seed = seed;
        if (!mode.empty())
        {
            opts.mode = mode == "full" ? EngineMode::Full : EngineMode::NoRetransmitBaseline;
            if (mode == "no-retransmit-baseline")
                mode = "baseline";
        }
        if (sample_ms)
            opts.sample_interval = ms(*sample_ms);

        std::optional<Simulation> sim;
        try
        {
            sim.emplace(s, opts);
        }
        catch (const Error& e)
        {
            std::cerr << "invalid scenario: " << e.what() << "\n";
            return kInvalidScenario;
        }
        auto result = sim->run();

        fs::path out = out_dir.empty() ? fs::path("out") / s.name : fs::path(out_dir);
        fs::create_directories(out);
        write_file(out / "metrics.csv", result.csv);
        write_file(out / "events.log", result.events);
        write_file(out / "summary.json", result.summary.dump(2) + "\n");

        std::cout << s.name << " (" << (mode.empty() ? (s.mode == EngineMode::Full ? "full" : "baseline") : mode)
                  << ", seed " << sim->scenario().seed << ")\n";
        for (const auto& a : result.assertions)
            std::cout << "  " << (a.passed ? "PASS " : "FAIL ") << a.kind << ": " << a.detail << "\n";
        std::cout << "  outputs in " << out.string() << "\n";
        return result.passed() ? 0 : kAssertionsFailed;
    }
    catch (const std::exception& e)
    {
        std::cerr << "error: " << e.what() << "\n";
        return kOtherError;
    }
}
