// ocsckit: frame codec, blackbox fuzzer, mock agent and attack-scenario
// reproductions for the OCSC IPC protocol, behind one CLI.

#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ocsc/agent.hpp"
#include "ocsc/codec.hpp"
#include "ocsc/mutate.hpp"
#include "ocsc/net.hpp"
#include "ocsc/orchestrator.hpp"
#include "ocsc/scenario.hpp"

namespace fs = std::filesystem;
using namespace ocsc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitParse = 2;
constexpr int kExitUsage = 64;

std::optional<Bytes> read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return std::nullopt;
    return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

bool write_file(const fs::path& p, ByteView data) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size()));
    return bool(out);
}

std::string printable_ascii(ByteView data) {
    std::string s;
    for (uint8_t b : data) s.push_back(b >= 0x20 && b < 0x7f ? char(b) : '.');
    return s;
}

void dump_message(const IpcMessage& msg, size_t total_size, std::ostream& os) {
    const auto& h = msg.header;
    os << "# OCSC frame, " << total_size << " bytes\n";
    os << "magic: " << std::string(h.magic.begin(), h.magic.end()) << "\n";
    os << "header_len: " << h.header_len << "\n";
    os << "body_len: " << h.body_len << "\n";
    os << "response_handle: " << to_hex(h.response_handle) << "\n";
    os << "reserved_a: " << to_hex(h.reserved_a) << "\n";
    os << "reserved_b: " << to_hex(h.reserved_b) << "\n";
    os << "return_object: " << to_hex(h.return_object) << "\n";
    char buf[16];
    std::snprintf(buf, sizeof(buf), "0x%02x", h.msg_type);
    os << "msg_type: " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "0x%02x", h.msg_id);
    os << "msg_id: " << buf << "\n";
    for (const auto& tlv : msg.tlvs) {
        std::snprintf(buf, sizeof(buf), "0x%04x", tlv.type_code);
        os << "tlv: type=" << buf << " len=" << tlv.length() << " value=" << to_hex(tlv.value)
           << "\n";
        os << "#   ascii: " << printable_ascii(tlv.value) << "\n";
        auto cmd = parse_deploy_command(std::string_view(
            reinterpret_cast<const char*>(tlv.value.data()), tlv.value.size()));
        if (cmd) {
            os << "#   command: " << cmd->command << " reply_port=" << cmd->reply_port
               << " src=" << cmd->src_path << " dst=" << cmd->dst_path
               << " digest=" << cmd->digest_hex << " algo=" << cmd->digest_algo
               << " mode=" << cmd->mode_flag << "\n";
        }
    }
    if (!msg.trailer.empty()) {
        os << "trailer: " << to_hex(msg.trailer) << "\n";
        os << "#   ascii: " << printable_ascii(msg.trailer) << "\n";
    }
}

std::optional<IpcMessage> parse_dump(std::istream& in, std::string& error) {
    IpcMessage msg;
    std::string line;
    int lineno = 0;
    auto fail = [&](const std::string& why) {
        error = "line " + std::to_string(lineno) + ": " + why;
        return std::nullopt;
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        auto colon = line.find(": ");
        if (colon == std::string::npos) return fail("expected 'key: value'");
        std::string key = line.substr(0, colon);
        std::string value = line.substr(colon + 2);
        auto hex_into = [&](auto& arr) {
            auto bytes = from_hex(value);
            if (!bytes || bytes->size() != arr.size()) return false;
            std::copy(bytes->begin(), bytes->end(), arr.begin());
            return true;
        };
        if (key == "magic") {
            if (value.size() != 4) return fail("magic must be 4 characters");
            std::copy(value.begin(), value.end(), msg.header.magic.begin());
        } else if (key == "header_len") msg.header.header_len = std::stoi(value);
        else if (key == "body_len") msg.header.body_len = std::stoi(value);
        else if (key == "response_handle") { if (!hex_into(msg.header.response_handle)) return fail("bad hex"); }
        else if (key == "reserved_a") { if (!hex_into(msg.header.reserved_a)) return fail("bad hex"); }
        else if (key == "reserved_b") { if (!hex_into(msg.header.reserved_b)) return fail("bad hex"); }
        else if (key == "return_object") { if (!hex_into(msg.header.return_object)) return fail("bad hex"); }
        else if (key == "msg_type") msg.header.msg_type = std::stoi(value, nullptr, 0);
        else if (key == "msg_id") msg.header.msg_id = std::stoi(value, nullptr, 0);
        else if (key == "tlv") {
            TlvField tlv;
            std::istringstream ss(value);
            std::string tok;
            while (ss >> tok) {
                if (tok.starts_with("type=")) tlv.type_code = std::stoi(tok.substr(5), nullptr, 0);
                else if (tok.starts_with("value=")) {
                    auto bytes = from_hex(tok.substr(6));
                    if (!bytes) return fail("bad tlv value hex");
                    tlv.value = std::move(*bytes);
                }
            }
            msg.tlvs.push_back(std::move(tlv));
        } else if (key == "trailer") {
            auto bytes = from_hex(value);
            if (!bytes) return fail("bad trailer hex");
            msg.trailer = std::move(*bytes);
        } else return fail("unknown key: " + key);
    }
    return msg;
}

SeededBugs parse_bugs(const std::string& list, bool& ok) {
    SeededBugs bugs;
    ok = true;
    if (list == "none" || list.empty()) return bugs;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "b1") bugs.b1_race = true;
        else if (item == "b2") bugs.b2_double_free = true;
        else if (item == "b3") bugs.b3_timed_heap = true;
        else if (item == "b4") bugs.b4_alloc_after_corrupt = true;
        else if (item == "all") bugs = {true, true, true, true, bugs.b3_timer_ms};
        else ok = false;
    }
    return bugs;
}

bool parse_endpoint(const std::string& s, std::string& host, uint16_t& port) {
    auto colon = s.rfind(':');
    if (colon == std::string::npos) return false;
    host = s.substr(0, colon);
    try {
        unsigned long p = std::stoul(s.substr(colon + 1));
        if (p == 0 || p > 0xffff) return false;
        port = static_cast<uint16_t>(p);
    } catch (const std::exception&) {
        return false;
    }
    return !host.empty();
}

// Shared fuzz/replay/minimize target setup: either an external endpoint (a
// supervised target is assumed) or a self-hosted mock agent.
struct TargetOptions {
    std::string target_endpoint;
    std::string self_bugs = "none";
    int b3_timer_ms = 2000;
    fs::path workdir = "ocsckit-work";
};

std::unique_ptr<Target> make_target(const TargetOptions& opts, std::string& error) {
    if (!opts.target_endpoint.empty()) {
        std::string host;
        uint16_t port = 0;
        if (!parse_endpoint(opts.target_endpoint, host, port)) {
            error = "bad --target, expected host:port";
            return nullptr;
        }
        return std::make_unique<ExternalTarget>(host, port);
    }
    bool bugs_ok = false;
    MockAgent::Options agent_opts;
    agent_opts.bugs = parse_bugs(opts.self_bugs, bugs_ok);
    agent_opts.bugs.b3_timer_ms = opts.b3_timer_ms;
    if (!bugs_ok) {
        error = "bad --bugs, expected comma list of b1..b4, 'all' or 'none'";
        return nullptr;
    }
    fs::path sandbox = opts.workdir / "agent-sandbox";
    fs::create_directories(sandbox);
    agent_opts.policy.sandbox_root = sandbox;
    agent_opts.policy.listen_port = 0;
    auto target = std::make_unique<AgentTarget>(std::move(agent_opts));
    if (target->port() == 0) {
        error = "self-hosted agent failed to start";
        return nullptr;
    }
    return target;
}

int run_scenarios(const std::string& which, const ScenarioOptions& opts) {
    std::vector<ScenarioResult> results;
    if (which == "downgrade" || which == "all") results.push_back(scenario_downgrade(opts));
    if (which == "script-overwrite" || which == "all")
        results.push_back(scenario_script_overwrite(opts));
    if (which == "profile-overwrite" || which == "all")
        results.push_back(scenario_profile_overwrite(opts));
    bool any_error = false;
    for (const auto& r : results) {
        std::cout << r.name << ": " << to_string(r.verdict) << "\n";
        for (const auto& e : r.evidence) std::cout << "  " << e << "\n";
        any_error |= r.verdict == ScenarioResult::ERROR;
    }
    return any_error ? kExitRuntime : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    std::signal(SIGPIPE, SIG_IGN);
    CLI::App app{"OCSC IPC protocol toolkit: codec, blackbox fuzzer, mock agent"};
    app.require_subcommand(1);

    // decode
    auto* decode = app.add_subcommand("decode", "Dump a frame file as readable text");
    std::string decode_in, decode_out;
    decode->add_option("input", decode_in, "raw frame file")->required();
    decode->add_option("-o,--out", decode_out, "write dump to file instead of stdout");

    // encode
    auto* encode = app.add_subcommand("encode", "Build a frame file from a decode dump");
    std::string encode_in, encode_out;
    encode->add_option("input", encode_in, "dump text file")->required();
    encode->add_option("output", encode_out, "raw frame file to write")->required();

    // serve
    auto* serve = app.add_subcommand("serve", "Run the vulnerable-by-design mock agent");
    std::string serve_sandbox = "ocsckit-work/agent-sandbox", serve_bugs = "none";
    uint16_t serve_port = 29754;
    bool serve_restrict = false, serve_supervisor = false;
    int serve_b3_timer = 2000;
    serve->add_option("--sandbox", serve_sandbox, "sandbox root directory");
    serve->add_option("--port", serve_port, "listen port (default 29754)");
    serve->add_option("--bugs", serve_bugs, "seeded bugs: b1,b2,b3,b4 | all | none");
    serve->add_option("--b3-timer-ms", serve_b3_timer, "delayed-death timer");
    serve->add_flag("--restrict-script-web-deploy", serve_restrict,
                    "enable the RestrictScriptWebDeploy policy");
    serve->add_flag("--supervisor", serve_supervisor, "restart listening after a crash");

    // fuzz / replay / minimize share target options
    TargetOptions topts;
    CampaignConfig cfg;
    std::string config_file;
    auto add_target_opts = [&](CLI::App* cmd) {
        cmd->add_option("--target", topts.target_endpoint,
                        "external target host:port (must be supervised)");
        cmd->add_option("--bugs", topts.self_bugs, "self-hosted agent bugs (default none)");
        cmd->add_option("--b3-timer-ms", topts.b3_timer_ms, "self-hosted agent timer");
        cmd->add_option("--workdir", topts.workdir, "directory for artifacts");
    };

    auto* fuzz = app.add_subcommand("fuzz", "Run a fuzzing campaign");
    add_target_opts(fuzz);
    fuzz->add_option("--config", config_file, "flat key=value campaign config");
    fuzz->add_option("--seeds", cfg.seeds_dir, "seed corpus directory (one frame per file)");
    fuzz->add_option("--max-execs", cfg.max_execs, "executions budget");
    fuzz->add_option("--exec-timeout-ms", cfg.timing.exec_timeout_ms, "per-exec timeout");
    fuzz->add_option("--window-ms", cfg.timing.window_ms, "delayed-crash window");
    fuzz->add_option("--probe-interval-ms", cfg.timing.probe_interval_ms, "probe interval");
    fuzz->add_option("--lanes", cfg.lanes, "max parallel lanes");
    fuzz->add_option("--steps-per-exec", cfg.steps_per_exec, "frames per execution");
    fuzz->add_flag("--parallel", cfg.parallel, "send lanes concurrently");
    fuzz->add_option("--rng-seed", cfg.rng_seed, "campaign rng seed");
    fuzz->add_option("--exec-delay-ms", cfg.exec_delay_ms, "pacing between executions");
    fuzz->add_option("--stop-after-crashes", cfg.stop_after_crashes, "0 = full budget");

    auto* replay_cmd = app.add_subcommand("replay", "Replay a crash report");
    add_target_opts(replay_cmd);
    std::string replay_report;
    uint32_t replay_attempts = 1;
    int replay_timeout = 1000, replay_window = 5000, replay_probe = 100;
    replay_cmd->add_option("--report", replay_report, "crash report file")->required();
    replay_cmd->add_option("--attempts", replay_attempts, "replay attempts");
    replay_cmd->add_option("--exec-timeout-ms", replay_timeout, "per-exec timeout");
    replay_cmd->add_option("--window-ms", replay_window, "delayed-crash window");
    replay_cmd->add_option("--probe-interval-ms", replay_probe, "probe interval");

    auto* minimize_cmd = app.add_subcommand("minimize", "Minimize a crash report's sequence");
    add_target_opts(minimize_cmd);
    std::string min_report, min_out;
    bool min_bytes = false;
    int min_timeout = 1000, min_window = 5000, min_probe = 100;
    minimize_cmd->add_option("--report", min_report, "crash report file")->required();
    minimize_cmd->add_option("--out", min_out, "output report (default <report>.min)");
    minimize_cmd->add_flag("--bytes", min_bytes, "also trim frame bytes");
    minimize_cmd->add_option("--exec-timeout-ms", min_timeout, "per-exec timeout");
    minimize_cmd->add_option("--window-ms", min_window, "delayed-crash window");
    minimize_cmd->add_option("--probe-interval-ms", min_probe, "probe interval");

    // scenario
    auto* scenario = app.add_subcommand("scenario", "Reproduce the architectural attacks");
    std::string which;
    ScenarioOptions sopts;
    sopts.workdir = "ocsckit-work/scenarios";
    scenario->add_option("name", which, "downgrade | script-overwrite | profile-overwrite | all")
        ->required()
        ->check(CLI::IsMember({"downgrade", "script-overwrite", "profile-overwrite", "all"}));
    scenario->add_option("--workdir", sopts.workdir, "scenario sandbox directory");
    scenario->add_flag("--restrict-script-web-deploy", sopts.restrict_script_web_deploy,
                       "enable the mitigation policy");
    scenario->add_flag("--require-version-upgrade", sopts.require_version_upgrade,
                       "enable the (non-standard) downgrade fix toggle");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*decode) {
            auto raw = read_file(decode_in);
            if (!raw) {
                std::cerr << "cannot read " << decode_in << "\n";
                return kExitRuntime;
            }
            auto msg = parse_frame(*raw);
            if (!msg) {
                std::cerr << "parse error: " << to_string(msg.error()) << "\n";
                return kExitParse;
            }
            if (decode_out.empty()) {
                dump_message(msg.value(), raw->size(), std::cout);
            } else {
                std::ofstream out(decode_out);
                dump_message(msg.value(), raw->size(), out);
            }
            return kExitOk;
        }

        if (*encode) {
            std::ifstream in(encode_in);
            if (!in) {
                std::cerr << "cannot read " << encode_in << "\n";
                return kExitRuntime;
            }
            std::string error;
            auto msg = parse_dump(in, error);
            if (!msg) {
                std::cerr << "dump parse error: " << error << "\n";
                return kExitParse;
            }
            auto raw = serialize(*msg);
            if (!raw) {
                std::cerr << "serialize error: body too large\n";
                return kExitParse;
            }
            if (!write_file(encode_out, raw.value())) {
                std::cerr << "cannot write " << encode_out << "\n";
                return kExitRuntime;
            }
            return kExitOk;
        }

        if (*serve) {
            bool bugs_ok = false;
            MockAgent::Options opts;
            opts.bugs = parse_bugs(serve_bugs, bugs_ok);
            if (!bugs_ok) {
                std::cerr << "bad --bugs\n";
                return kExitUsage;
            }
            opts.bugs.b3_timer_ms = serve_b3_timer;
            opts.policy.listen_port = serve_port;
            opts.policy.sandbox_root = serve_sandbox;
            opts.policy.restrict_script_web_deploy = serve_restrict;
            opts.supervisor = serve_supervisor;
            fs::create_directories(serve_sandbox);
            auto agent = MockAgent::serve(std::move(opts));
            if (!agent) {
                std::cerr << (agent.error() == ServeError::PortInUse ? "port in use"
                                                                     : "bad sandbox")
                          << "\n";
                return kExitRuntime;
            }
            std::cout << "agent listening on 127.0.0.1:" << agent.value()->port()
                      << " sandbox=" << serve_sandbox << std::endl;
            // Foreground until killed, or until a crash with no supervisor.
            while (agent.value()->alive() || serve_supervisor)
                std::this_thread::sleep_for(std::chrono::milliseconds(100));
            std::cout << "agent exited";
            if (!agent.value()->last_bug_id().empty())
                std::cout << " (bug " << agent.value()->last_bug_id() << ")";
            std::cout << "\n";
            return kExitOk;
        }

        if (*fuzz) {
            if (!config_file.empty()) {
                auto loaded = load_campaign_config(config_file);
                if (!loaded) {
                    std::cerr << "config error: " << loaded.error() << "\n";
                    return kExitUsage;
                }
                CampaignConfig file_cfg = std::move(loaded).value();
                // Explicit flags win over the file.
                for (auto* opt : fuzz->get_options())
                    if (opt->count() == 0) continue;
                cfg.seeds_dir = fuzz->count("--seeds") ? cfg.seeds_dir : file_cfg.seeds_dir;
                if (!fuzz->count("--max-execs")) cfg.max_execs = file_cfg.max_execs;
                if (!fuzz->count("--exec-timeout-ms"))
                    cfg.timing.exec_timeout_ms = file_cfg.timing.exec_timeout_ms;
                if (!fuzz->count("--window-ms")) cfg.timing.window_ms = file_cfg.timing.window_ms;
                if (!fuzz->count("--probe-interval-ms"))
                    cfg.timing.probe_interval_ms = file_cfg.timing.probe_interval_ms;
                if (!fuzz->count("--lanes")) cfg.lanes = file_cfg.lanes;
                if (!fuzz->count("--steps-per-exec")) cfg.steps_per_exec = file_cfg.steps_per_exec;
                if (!fuzz->count("--parallel")) cfg.parallel = file_cfg.parallel;
                if (!fuzz->count("--rng-seed")) cfg.rng_seed = file_cfg.rng_seed;
                if (!fuzz->count("--exec-delay-ms")) cfg.exec_delay_ms = file_cfg.exec_delay_ms;
                if (!fuzz->count("--stop-after-crashes"))
                    cfg.stop_after_crashes = file_cfg.stop_after_crashes;
            }
            std::string error;
            auto target = make_target(topts, error);
            if (!target) {
                std::cerr << error << "\n";
                return kExitUsage;
            }
            cfg.host = target->host();
            cfg.port = target->port();
            if (cfg.report_dir.empty()) cfg.report_dir = (topts.workdir / "reports").string();
            auto report = run_campaign(cfg, *target);
            if (!report) {
                std::cerr << "target unreachable\n";
                return kExitRuntime;
            }
            const auto& r = report.value();
            std::cout << "executions: " << r.executions << "\n";
            std::cout << "crashes: " << r.crashes.size() << "\n";
            std::cout << "buckets:";
            for (const auto& b : r.buckets) std::cout << " " << b;
            std::cout << "\nthroughput: " << r.execs_per_sec << " execs/s\n";
            std::cout << "reports: " << cfg.report_dir << "\n";
            return kExitOk;
        }

        if (*replay_cmd) {
            auto report = read_report(replay_report);
            if (!report) {
                std::cerr << report.error() << "\n";
                return kExitParse;
            }
            std::string error;
            auto target = make_target(topts, error);
            if (!target) {
                std::cerr << error << "\n";
                return kExitUsage;
            }
            ExecTiming timing{replay_timeout, replay_window, replay_probe};
            auto result = replay(report.value(), *target, replay_attempts, timing);
            std::cout << (result.reproduced ? "reproduced" : "not reproduced") << " (attempts "
                      << result.attempts_used << ")\n";
            return result.reproduced ? kExitOk : kExitRuntime;
        }

        if (*minimize_cmd) {
            auto report = read_report(min_report);
            if (!report) {
                std::cerr << report.error() << "\n";
                return kExitParse;
            }
            std::string error;
            auto target = make_target(topts, error);
            if (!target) {
                std::cerr << error << "\n";
                return kExitUsage;
            }
            ExecTiming timing{min_timeout, min_window, min_probe};
            auto minimized = minimize(report.value().sequence, *target, timing, min_bytes);
            if (!minimized) {
                std::cerr << "sequence does not crash the target\n";
                return kExitRuntime;
            }
            CrashReport out = report.value();
            out.sequence = minimized.value();
            out.bucket = bucket(out);
            fs::path out_path = min_out.empty() ? fs::path(min_report + ".min") : fs::path(min_out);
            write_report(out, out_path);
            std::cout << "minimized to " << out.sequence.steps.size() << " step(s): " << out_path
                      << "\n";
            return kExitOk;
        }

        if (*scenario) return run_scenarios(which, sopts);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
